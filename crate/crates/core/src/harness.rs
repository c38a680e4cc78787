//! Training loops, metric logging, and evaluation helpers (relative L2,
//! Gaussian KDE, ISE) shared by the experiment presets.

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::buffer::Buffer;
use crate::dataset::SnapshotDataset;
use crate::error::{Error, Result};
use crate::flock::{
    flocking_total_loss, InfluenceParams, NewtonLossConfig,
};
use crate::losses::{
    apply_bounded_map, make_adjacent_pairs, pair_tensors, perturb_generated, select_rows,
    sliced_w2_sq, truncate_generated, wgan_losses, CriticSet, LossSpec, MetricKind,
};
use crate::model::{drift_eval, rollout, DriftParams, GenerativeModel, InitModel, ModelVars};
use crate::nn::{Adam, MlpParams, MlpSpec};
use crate::rng::{self, Stream};
use crate::tape::{Tape, Tensor};

/// Append-only training log; rows share the column layout and carry strictly
/// increasing step numbers. Wall time is stored separately so that two runs
/// with the same seed produce identical `rows`.
#[derive(Clone, Debug)]
pub struct MetricLog {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub wall: Vec<f64>,
}

impl MetricLog {
    pub fn new(columns: &[&str]) -> Self {
        MetricLog {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            wall: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>, seconds: f64) {
        assert_eq!(row.len(), self.columns.len(), "row width mismatch");
        if let Some(last) = self.rows.last() {
            assert!(row[0] > last[0], "steps must be strictly increasing");
        }
        self.rows.push(row);
        self.wall.push(seconds);
    }

    pub fn col_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// All logged values of a named column, in order.
    pub fn column(&self, name: &str) -> Vec<f64> {
        match self.col_index(name) {
            Some(i) => self.rows.iter().map(|r| r[i]).collect(),
            None => Vec::new(),
        }
    }

    pub fn last(&self, name: &str) -> Option<f64> {
        let i = self.col_index(name)?;
        self.rows.last().map(|r| r[i])
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "{},seconds", self.columns.join(","))?;
        for (row, w) in self.rows.iter().zip(self.wall.iter()) {
            let cells: Vec<String> = row.iter().map(|v| format!("{:.12e}", v)).collect();
            writeln!(f, "{},{:.3}", cells.join(","), w)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainSettings {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub log_every: usize,
    pub seed: u64,
    /// When false, drift and diffusion are frozen and only the initial-state
    /// generator trains.
    pub train_dynamics: bool,
    /// Hidden widths of the per-snapshot critics (WGAN metric only).
    pub critic_hidden: Vec<usize>,
}

impl TrainSettings {
    pub fn new(steps: usize, batch: usize, lr: f64, seed: u64) -> Self {
        TrainSettings {
            steps,
            batch,
            lr,
            log_every: 50.max(steps / 200),
            seed,
            train_dynamics: true,
            critic_hidden: vec![64, 64],
        }
    }
}

pub struct SdeTrainOutcome {
    pub log: MetricLog,
    /// Rectified observation-noise scale, when trained.
    pub noise_scale: Option<f64>,
}

/// Comparison items for one optimization step: generated tensors against
/// real minibatches, after the paired/marginal arrangement.
fn comparison_items(
    snaps: &[Tensor],
    dataset: &SnapshotDataset,
    paired: bool,
    batch: usize,
    stream: &mut Stream,
) -> Result<Vec<(Tensor, Buffer)>> {
    let (fakes, reals): (Vec<Tensor>, Vec<Buffer>) = if paired {
        let pairs = make_adjacent_pairs(dataset)?;
        (pair_tensors(snaps), pairs)
    } else {
        (snaps.to_vec(), dataset.samples.clone())
    };
    let mut out = Vec::with_capacity(fakes.len());
    for (fake, real) in fakes.into_iter().zip(reals.into_iter()) {
        let n_real = real.shape[0];
        let k = batch.min(n_real);
        let real_mb = if k == n_real {
            real
        } else {
            let rows = rand::seq::index::sample(stream, n_real, k).into_vec();
            let d = real.shape[1];
            let mut mb = Buffer::zeros(&[k, d]);
            for (i, &r) in rows.iter().enumerate() {
                mb.data[i * d..(i + 1) * d].copy_from_slice(&real.data[r * d..(r + 1) * d]);
            }
            mb
        };
        out.push((fake, real_mb));
    }
    Ok(out)
}

/// Subsample the larger side so both have equal row counts.
fn equalize(fake: Tensor, real: Buffer, stream: &mut Stream) -> (Tensor, Buffer) {
    let (nf, nr) = (fake.shape[0], real.shape[0]);
    if nf == nr {
        return (fake, real);
    }
    if nf > nr {
        let rows = rand::seq::index::sample(stream, nf, nr).into_vec();
        (select_rows(&fake, &rows), real)
    } else {
        let rows = rand::seq::index::sample(stream, nr, nf).into_vec();
        let d = real.shape[1];
        let mut mb = Buffer::zeros(&[nf, d]);
        for (i, &r) in rows.iter().enumerate() {
            mb.data[i * d..(i + 1) * d].copy_from_slice(&real.data[r * d..(r + 1) * d]);
        }
        (fake, mb)
    }
}

/// Observation-model chain applied to one (fake, real) item before the
/// distance: trainable noise, window truncation, bounded map. Returns `None`
/// when truncation leaves no generated samples (step skipped for this item).
fn modified_item(
    fake: &Tensor,
    real: &Buffer,
    loss: &LossSpec,
    noise_leaf: Option<&Tensor>,
    stream: &mut Stream,
) -> Result<Option<(Tensor, Buffer)>> {
    let mut fake = fake.clone();
    if let Some(raw) = noise_leaf {
        fake = perturb_generated(&fake, raw, stream);
    }
    let (fake, real) = match truncate_generated(&fake, real, &loss.truncation, stream)? {
        Some(p) => p,
        None => return Ok(None),
    };
    let (mut fake, mut real) = equalize(fake, real, stream);
    if loss.bounded_map {
        fake = apply_bounded_map(&fake);
        real = real.map(|x| 2.0 * (x / 2.0).tanh());
    }
    if loss.normalize {
        let (f, r) = crate::losses::normalize_by_real(&fake, &real);
        fake = f;
        real = r;
    }
    Ok(Some((fake, real)))
}

fn min_diag(sigma: &Buffer) -> f64 {
    let d = sigma.shape[0];
    (0..d).map(|i| sigma.data[i * d + i]).fold(f64::INFINITY, f64::min)
}

/// Train a generative SODE model against snapshot data. `paired` switches to
/// joint distributions of adjacent snapshots (needs a paired dataset).
/// Deterministic given `settings.seed`. Non-finite loss aborts with an error;
/// the model keeps its last finite state.
pub fn train_sde(
    model: &mut GenerativeModel,
    dataset: &SnapshotDataset,
    loss: &LossSpec,
    paired: bool,
    settings: &TrainSettings,
) -> Result<SdeTrainOutcome> {
    loss.validate()?;
    model.validate()?;
    if dataset.dim != model.dim {
        return Err(Error::Invalid("dataset dimension does not match model".into()));
    }
    if paired && !dataset.paired() {
        return Err(Error::Invalid("paired fitting needs a paired dataset".into()));
    }
    match loss.metric {
        MetricKind::SlicedW2 { projections } => {
            train_sde_sw(model, dataset, loss, paired, projections, settings)
        }
        MetricKind::WganGp { lambda, critic_ratio } => {
            train_sde_wgan(model, dataset, loss, paired, lambda, critic_ratio, settings)
        }
    }
}

fn noise_raw_init(loss: &LossSpec) -> Option<Buffer> {
    if loss.trainable_noise {
        // Start near zero: a large initial scale masks the diffusion and the
        // two parameters then disentangle very slowly.
        Some(Buffer::full(&[1], softplus_inv(0.02)))
    } else {
        None
    }
}

fn adam_shapes(model: &mut GenerativeModel, settings: &TrainSettings, with_noise: bool) -> Vec<Vec<usize>> {
    let mut shapes: Vec<Vec<usize>> = model
        .trainable_blocks_mut(settings.train_dynamics)
        .iter()
        .map(|b| b.shape.clone())
        .collect();
    if with_noise {
        shapes.push(vec![1]);
    }
    shapes
}

/// One optimizer update from a scalar loss: backward, gather gradients for
/// `leaves` (+ the optional noise leaf), step Adam over the matching buffers.
fn apply_update(
    total: &Tensor,
    leaves: &[Tensor],
    noise_leaf: Option<&Tensor>,
    model: &mut GenerativeModel,
    noise_raw: &mut Option<Buffer>,
    opt: &mut Adam,
    settings: &TrainSettings,
    step: usize,
) -> Result<()> {
    let v = total.value();
    if !v.all_finite() {
        return Err(Error::NonFiniteLoss(step, "training loss".into()));
    }
    let grads = total.tape.backward(total);
    let mut gbufs: Vec<Buffer> = leaves.iter().map(|p| grads.wrt_buffer(p)).collect();
    if let Some(nl) = noise_leaf {
        gbufs.push(grads.wrt_buffer(nl));
    }
    let mut blocks = model.trainable_blocks_mut(settings.train_dynamics);
    if let Some(nr) = noise_raw.as_mut() {
        blocks.push(nr);
    }
    opt.step(&mut blocks, &gbufs)
}

fn train_sde_sw(
    model: &mut GenerativeModel,
    dataset: &SnapshotDataset,
    loss: &LossSpec,
    paired: bool,
    projections: usize,
    settings: &TrainSettings,
) -> Result<SdeTrainOutcome> {
    let mut noise_raw = noise_raw_init(loss);
    let shapes = adam_shapes(model, settings, noise_raw.is_some());
    let mut opt = Adam::new(settings.lr, 0.9, 0.999, &shapes);
    let mut log = MetricLog::new(&["step", "loss", "sigma_min", "noise", "param_norm"]);
    let t0 = Instant::now();

    for step in 0..settings.steps {
        let tape = Tape::new();
        let vars = model.vars_on(&tape, settings.train_dynamics);
        let noise_leaf = noise_raw.as_ref().map(|b| tape.leaf(b.clone()));
        let mut stream = rng::seeded(rng::derive(settings.seed, 2, step as u64));
        let snaps = rollout(
            &tape,
            model,
            &vars,
            settings.batch,
            &dataset.times,
            rng::derive(settings.seed, 1, step as u64),
        )?;
        let items = comparison_items(&snaps, dataset, paired, settings.batch, &mut stream)?;

        let mut total: Option<Tensor> = None;
        for (fake, real) in &items {
            let (fake, real) =
                match modified_item(fake, real, loss, noise_leaf.as_ref(), &mut stream)? {
                    Some(p) => p,
                    None => continue,
                };
            let w = sliced_w2_sq(&fake, &tape.constant(real), projections, &mut stream)?;
            total = Some(match total {
                Some(acc) => acc.add(&w),
                None => w,
            });
        }
        let total = match total {
            Some(t) => t,
            None => continue, // every item truncated away this step
        };
        let loss_val = total.value().data[0];
        apply_update(
            &total,
            &vars.params(),
            noise_leaf.as_ref(),
            model,
            &mut noise_raw,
            &mut opt,
            settings,
            step,
        )?;

        if step % settings.log_every == 0 || step + 1 == settings.steps {
            let sigma = model.diffusion.matrix();
            let noise = noise_raw
                .as_ref()
                .map(|b| softplus(b.data[0]))
                .unwrap_or(-1.0);
            log.push(
                vec![step as f64, loss_val, min_diag(&sigma), noise, model.param_norm()],
                t0.elapsed().as_secs_f64(),
            );
        }
    }
    Ok(SdeTrainOutcome {
        log,
        noise_scale: noise_raw.map(|b| softplus(b.data[0])),
    })
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of softplus, for initializing raw parameters at a target value.
pub fn softplus_inv(y: f64) -> f64 {
    assert!(y > 0.0);
    if y > 30.0 {
        y
    } else {
        (y.exp() - 1.0).ln()
    }
}

fn train_sde_wgan(
    model: &mut GenerativeModel,
    dataset: &SnapshotDataset,
    loss: &LossSpec,
    paired: bool,
    lambda: f64,
    critic_ratio: usize,
    settings: &TrainSettings,
) -> Result<SdeTrainOutcome> {
    let mut noise_raw = noise_raw_init(loss);
    let shapes = adam_shapes(model, settings, noise_raw.is_some());
    let mut opt = Adam::new(settings.lr, 0.5, 0.9, &shapes);

    let n_items = if paired { dataset.times.len() - 1 } else { dataset.times.len() };
    let item_dim = if paired { 2 * model.dim } else { model.dim };
    let mut critics = CriticSet::new(
        n_items,
        item_dim,
        &settings.critic_hidden,
        &mut rng::seeded(rng::derive(settings.seed, 3, 0)),
    )?;
    // Critics follow the configured learning rate (WGAN betas).
    for (opt, critic) in critics.opts.iter_mut().zip(critics.critics.iter()) {
        *opt = Adam::new(settings.lr, 0.5, 0.9, &critic.block_shapes());
    }

    let mut log = MetricLog::new(&["step", "gen_loss", "critic_loss", "sigma_min", "noise", "param_norm"]);
    let t0 = Instant::now();

    for step in 0..settings.steps {
        // One rollout per outer step; critics train on its detached values.
        let tape = Tape::new();
        let vars = model.vars_on(&tape, settings.train_dynamics);
        let noise_leaf = noise_raw.as_ref().map(|b| tape.leaf(b.clone()));
        let mut stream = rng::seeded(rng::derive(settings.seed, 2, step as u64));
        let snaps = rollout(
            &tape,
            model,
            &vars,
            settings.batch,
            &dataset.times,
            rng::derive(settings.seed, 1, step as u64),
        )?;
        let items = comparison_items(&snaps, dataset, paired, settings.batch, &mut stream)?;
        let mut prepared: Vec<(usize, Tensor, Buffer)> = Vec::with_capacity(items.len());
        for (i, (fake, real)) in items.iter().enumerate() {
            if let Some((f, r)) = modified_item(fake, real, loss, noise_leaf.as_ref(), &mut stream)? {
                prepared.push((i, f, r));
            }
        }
        if prepared.is_empty() {
            continue;
        }

        // Critic updates on fresh tapes; generated samples enter as constants.
        let mut critic_loss_sum = 0.0;
        for _ in 0..critic_ratio {
            for &(i, ref fake, ref real) in &prepared {
                let ct = Tape::new();
                let cvars = critics.critics[i].leaf_on(&ct);
                let fake_c = ct.constant(fake.value());
                let real_c = ct.constant(real.clone());
                let (_, critic_l) = wgan_losses(&cvars, &fake_c, &real_c, lambda, &mut stream)?;
                let v = critic_l.value().data[0];
                if !v.is_finite() {
                    return Err(Error::NonFiniteLoss(step, "critic loss".into()));
                }
                critic_loss_sum = v; // keep the last iterate for the log
                let grads = ct.backward(&critic_l);
                let gbufs: Vec<Buffer> =
                    cvars.blocks().iter().map(|p| grads.wrt_buffer(p)).collect();
                let mut blocks = critics.critics[i].blocks_mut();
                critics.opts[i].step(&mut blocks, &gbufs)?;
            }
        }

        // Generator update with the refreshed critics as constants.
        let mut total: Option<Tensor> = None;
        for &(i, ref fake, ref real) in &prepared {
            let cvars = critics.critics[i].constant_on(&tape);
            let d_fake = cvars.forward(fake).mean_all();
            let d_real = cvars.forward(&tape.constant(real.clone())).mean_all();
            let g = d_real.sub(&d_fake);
            total = Some(match total {
                Some(acc) => acc.add(&g),
                None => g,
            });
        }
        let total = total.unwrap();
        let loss_val = total.value().data[0];
        apply_update(
            &total,
            &vars.params(),
            noise_leaf.as_ref(),
            model,
            &mut noise_raw,
            &mut opt,
            settings,
            step,
        )?;

        if step % settings.log_every == 0 || step + 1 == settings.steps {
            let sigma = model.diffusion.matrix();
            let noise = noise_raw
                .as_ref()
                .map(|b| softplus(b.data[0]))
                .unwrap_or(-1.0);
            log.push(
                vec![
                    step as f64,
                    loss_val,
                    critic_loss_sum,
                    min_diag(&sigma),
                    noise,
                    model.param_norm(),
                ],
                t0.elapsed().as_secs_f64(),
            );
        }
    }
    Ok(SdeTrainOutcome {
        log,
        noise_scale: noise_raw.map(|b| softplus(b.data[0])),
    })
}

/// Flocking inference configuration: velocity surrogate, influence exponent,
/// Newton loss shape, and how the surrogate batch starts.
#[derive(Clone, Debug)]
pub struct FlockingTrainConfig {
    /// Surrogate rollout step (must divide the snapshot spacing).
    pub dt: f64,
    /// Newton-loss weight eta.
    pub eta: f64,
    pub newton: NewtonLossConfig,
    pub projections: usize,
    /// Start the surrogate from the first observed snapshot instead of a
    /// trainable generator.
    pub start_from_data: bool,
    pub mu_hidden: Vec<usize>,
    pub g_hidden: Vec<usize>,
    pub r_min: f64,
}

pub struct FlockingOutcome {
    pub log: MetricLog,
    pub alpha: f64,
    pub mu: MlpParams,
    pub influence: InfluenceParams,
}

/// Train the velocity surrogate and influence exponent on position
/// snapshots. Deterministic given the seed.
pub fn train_flocking(
    dataset: &SnapshotDataset,
    cfg: &FlockingTrainConfig,
    settings: &TrainSettings,
) -> Result<FlockingOutcome> {
    if dataset.times.len() < 2 {
        return Err(Error::Invalid("flocking inference needs several snapshots".into()));
    }
    let d = dataset.dim;
    let t0 = dataset.times[0];
    let t_last = *dataset.times.last().unwrap();
    let n_steps = ((t_last - t0) / cfg.dt).round() as usize;
    if (t0 + n_steps as f64 * cfg.dt - t_last).abs() > 1e-9 {
        return Err(Error::Invalid("snapshot span must be a multiple of dt".into()));
    }
    for &t in &dataset.times {
        let k = ((t - t0) / cfg.dt).round();
        if (t0 + k * cfg.dt - t).abs() > 1e-9 {
            return Err(Error::Invalid(format!("snapshot time {} off the dt grid", t)));
        }
    }

    let mut init_stream = rng::seeded(rng::derive(settings.seed, 4, 0));
    let mu_spec = MlpSpec::tanh(d + 1, &cfg.mu_hidden, d);
    let mut mu_params = MlpParams::init(&mu_spec, &mut init_stream)?;
    let mut influence = InfluenceParams::new(d, cfg.r_min);
    let mut g_params = if cfg.start_from_data {
        None
    } else {
        Some(MlpParams::init(&MlpSpec::tanh(d, &cfg.g_hidden, d), &mut init_stream)?)
    };

    let batch = if cfg.start_from_data {
        dataset.count(0)
    } else {
        settings.batch
    };
    if cfg.newton.k_probes + cfg.newton.m_aux > batch {
        return Err(Error::Invalid("K + M exceeds the surrogate batch".into()));
    }

    let mut shapes = mu_params.block_shapes();
    shapes.push(vec![1]);
    if let Some(g) = &g_params {
        shapes.extend(g.block_shapes());
    }
    let mut opt = Adam::new(settings.lr, 0.9, 0.999, &shapes);

    let mut log = MetricLog::new(&["step", "loss", "newton", "dist", "alpha"]);
    let start = Instant::now();

    for step in 0..settings.steps {
        let tape = Tape::new();
        let mu_vars = mu_params.leaf_on(&tape);
        let inf_vars = influence.leaf_on(&tape);
        let g_vars = g_params.as_ref().map(|g| g.leaf_on(&tape));
        let mut stream = rng::seeded(rng::derive(settings.seed, 5, step as u64));

        let x0 = if cfg.start_from_data {
            tape.constant(dataset.samples[0].clone())
        } else {
            let z = Buffer::new(
                vec![batch, d],
                rng::normals(&mut stream, batch * d),
            );
            g_vars.as_ref().unwrap().forward(&tape.constant(z))
        };
        let mu = |inp: &Tensor| mu_vars.forward(inp);
        let states = crate::flock::surrogate_rollout(&mu, &x0, t0, cfg.dt, n_steps);
        let (total, newton_part, dist_part) = flocking_total_loss(
            &mu,
            &states,
            t0,
            cfg.dt,
            &inf_vars,
            &cfg.newton,
            dataset,
            cfg.eta,
            cfg.projections,
            &mut stream,
        )?;
        let loss_val = total.value().data[0];
        if !loss_val.is_finite() {
            return Err(Error::NonFiniteLoss(step, "flocking loss".into()));
        }

        let grads = tape.backward(&total);
        let mut leaves = mu_vars.blocks();
        leaves.push(inf_vars.beta.clone());
        if let Some(g) = &g_vars {
            leaves.extend(g.blocks());
        }
        let gbufs: Vec<Buffer> = leaves.iter().map(|p| grads.wrt_buffer(p)).collect();
        let mut blocks = mu_params.blocks_mut();
        blocks.push(&mut influence.beta);
        if let Some(g) = g_params.as_mut() {
            blocks.extend(g.blocks_mut());
        }
        opt.step(&mut blocks, &gbufs)?;

        if step % settings.log_every == 0 || step + 1 == settings.steps {
            log.push(
                vec![step as f64, loss_val, newton_part, dist_part, influence.alpha()],
                start.elapsed().as_secs_f64(),
            );
        }
    }

    Ok(FlockingOutcome {
        log,
        alpha: influence.alpha(),
        mu: mu_params,
        influence,
    })
}

/// ||est - ref||_2 / ||ref||_2 over shared grid points.
pub fn relative_l2_error(est: &[f64], reference: &[f64]) -> Result<f64> {
    if est.len() != reference.len() || est.is_empty() {
        return Err(Error::Invalid("fields must share a nonempty grid".into()));
    }
    let num: f64 = est
        .iter()
        .zip(reference.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let den: f64 = reference.iter().map(|b| b * b).sum();
    if den == 0.0 {
        return Err(Error::Invalid("reference field has zero norm".into()));
    }
    Ok((num / den).sqrt())
}

/// Scott's rule in 1D: sd * n^(-1/5) (population sd).
pub fn scott_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    var.sqrt() * n.powf(-0.2)
}

/// Gaussian KDE on a grid; `bandwidth = None` uses Scott's rule.
pub fn kde_density(samples: &[f64], grid: &[f64], bandwidth: Option<f64>) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Invalid("KDE needs at least one sample".into()));
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 => h,
        Some(_) => return Err(Error::Invalid("bandwidth must be positive".into())),
        None => scott_bandwidth(samples),
    };
    if h <= 0.0 {
        return Err(Error::Invalid("degenerate sample set: zero bandwidth".into()));
    }
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    Ok(grid
        .iter()
        .map(|&x| {
            samples
                .iter()
                .map(|&s| {
                    let z = (x - s) / h;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect())
}

/// Product-kernel Gaussian KDE in 2D with per-axis Scott bandwidths
/// (sd_j * n^(-1/6)); used for the dense-data mask in 2D reporting.
pub fn kde_density_2d(samples: &Buffer, points: &[(f64, f64)]) -> Result<Vec<f64>> {
    if samples.shape.len() != 2 || samples.shape[1] != 2 || samples.shape[0] == 0 {
        return Err(Error::Invalid("2D KDE needs a nonempty [n, 2] sample set".into()));
    }
    let n = samples.shape[0];
    let nf = n as f64;
    let mut h = [0.0; 2];
    for j in 0..2 {
        let mean: f64 = (0..n).map(|i| samples.data[i * 2 + j]).sum::<f64>() / nf;
        let var: f64 = (0..n)
            .map(|i| {
                let c = samples.data[i * 2 + j] - mean;
                c * c
            })
            .sum::<f64>()
            / nf;
        h[j] = var.sqrt() * nf.powf(-1.0 / 6.0);
        if h[j] <= 0.0 {
            return Err(Error::Invalid("degenerate sample set: zero bandwidth".into()));
        }
    }
    let norm = 1.0 / (nf * h[0] * h[1] * 2.0 * std::f64::consts::PI);
    Ok(points
        .iter()
        .map(|&(x, y)| {
            (0..n)
                .map(|i| {
                    let zx = (x - samples.data[i * 2]) / h[0];
                    let zy = (y - samples.data[i * 2 + 1]) / h[1];
                    (-0.5 * (zx * zx + zy * zy)).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect())
}

/// Trapezoid integral of the squared difference over a shared grid.
pub fn ise(est: &[f64], reference: &[f64], grid: &[f64]) -> Result<f64> {
    if est.len() != reference.len() || est.len() != grid.len() || grid.len() < 2 {
        return Err(Error::Invalid("ISE needs matching grids with >= 2 points".into()));
    }
    let sq: Vec<f64> = est
        .iter()
        .zip(reference.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .collect();
    let mut total = 0.0;
    for i in 1..grid.len() {
        let dx = grid[i] - grid[i - 1];
        if dx <= 0.0 {
            return Err(Error::Invalid("grid must be strictly increasing".into()));
        }
        total += 0.5 * (sq[i] + sq[i - 1]) * dx;
    }
    Ok(total)
}

/// Evaluate a drift parameterization on plain points (scratch tape).
pub fn drift_on_grid(drift: &DriftParams, points: &Buffer) -> Buffer {
    let tape = Tape::new();
    let vars = drift.constant_on(&tape);
    let x = if matches!(drift, DriftParams::Potential(_)) {
        tape.leaf(points.clone())
    } else {
        tape.constant(points.clone())
    };
    drift_eval(&vars, &x).value()
}

/// Sample the trained generative model at the given times (plain values).
pub fn sample_model(
    model: &GenerativeModel,
    n_paths: usize,
    times: &[f64],
    seed: u64,
) -> Result<Vec<Buffer>> {
    let tape = Tape::new();
    let vars = GenerativeModel::constant_vars(model, &tape);
    let snaps = rollout(&tape, model, &vars, n_paths, times, seed)?;
    Ok(snaps.iter().map(|s| s.value()).collect())
}

impl GenerativeModel {
    /// All-constant variables for pure evaluation.
    pub fn constant_vars(&self, tape: &Tape) -> ModelVars {
        ModelVars {
            init: match &self.init {
                InitModel::Network { params, .. } => Some(params.constant_on(tape)),
                _ => None,
            },
            drift: self.drift.constant_on(tape),
            diffusion: self.diffusion.constant_on(tape),
            train_dynamics: false,
        }
    }
}

/// Uniform grid helper: `n` points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}
