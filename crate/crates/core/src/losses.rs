//! Distribution distances and observation-model adjustments: sliced
//! Wasserstein-2, WGAN-GP losses with gradient penalty, the bounded map,
//! trainable perturbation noise, truncation, adjacent-pair construction,
//! and per-snapshot normalization.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::buffer::Buffer;
use crate::dataset::{Domain, SnapshotDataset};
use crate::error::{Error, Result};
use crate::nn::{Adam, MlpParams, MlpSpec, MlpVars};
use crate::rng::{self, Stream};
use crate::tape::{concat, input_gradient, Tape, Tensor};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub enum MetricKind {
    SlicedW2 { projections: usize },
    WganGp { lambda: f64, critic_ratio: usize },
}

/// Distance configuration plus the observation-model modification chain.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LossSpec {
    pub metric: MetricKind,
    pub bounded_map: bool,
    pub trainable_noise: bool,
    pub truncation: Domain,
    /// Standardize fake and real per snapshot by the real moments.
    pub normalize: bool,
}

impl LossSpec {
    pub fn sliced(projections: usize) -> Self {
        LossSpec {
            metric: MetricKind::SlicedW2 { projections },
            bounded_map: false,
            trainable_noise: false,
            truncation: Domain::All,
            normalize: false,
        }
    }

    pub fn wgan() -> Self {
        LossSpec {
            metric: MetricKind::WganGp { lambda: 0.1, critic_ratio: 5 },
            bounded_map: false,
            trainable_noise: false,
            truncation: Domain::All,
            normalize: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.metric {
            MetricKind::SlicedW2 { projections } if projections == 0 => {
                Err(Error::Invalid("need at least one projection".into()))
            }
            MetricKind::WganGp { lambda, critic_ratio } if lambda < 0.0 || critic_ratio == 0 => {
                Err(Error::Invalid("need lambda >= 0 and critic ratio >= 1".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Exact squared W2 between equal-size 1D samples: sort and match.
pub fn exact_w2_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Invalid("exact W2 needs equal nonempty sample sets".into()));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(sa
        .iter()
        .zip(sb.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64)
}

/// Uniform unit directions as a `[d, m]` constant (normalized Gaussians).
pub fn random_directions(tape: &Tape, d: usize, m: usize, stream: &mut Stream) -> Tensor {
    let mut dirs = Buffer::zeros(&[d, m]);
    for c in 0..m {
        let v = rng::unit_direction(stream, d);
        for r in 0..d {
            dirs.data[r * m + c] = v[r];
        }
    }
    tape.constant(dirs)
}

/// Sliced squared Wasserstein-2: project both batches onto `m` fresh
/// uniform directions, sort, average squared matched differences.
pub fn sliced_w2_sq(a: &Tensor, b: &Tensor, m: usize, stream: &mut Stream) -> Result<Tensor> {
    if a.shape.len() != 2 || a.shape != b.shape {
        return Err(Error::Invalid(format!(
            "sliced W2 needs equal [n, d] batches, got {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    let d = a.shape[1];
    if d == 0 || m == 0 {
        return Err(Error::Invalid("sliced W2 needs d >= 1 and m >= 1".into()));
    }
    let dirs = random_directions(&a.tape, d, m, stream);
    let (pa, _) = a.matmul(&dirs).t().sort_last();
    let (pb, _) = b.matmul(&dirs).t().sort_last();
    Ok(pa.sub(&pb).square().mean_all())
}

/// Generator and critic losses with gradient penalty on interpolates.
/// Returns (generator loss, critic loss). The caller controls which side is
/// differentiable by passing leaves vs constants.
pub fn wgan_losses(
    critic: &MlpVars,
    fake: &Tensor,
    real: &Tensor,
    lambda: f64,
    stream: &mut Stream,
) -> Result<(Tensor, Tensor)> {
    if critic.spec.output != 1 {
        return Err(Error::Invalid("critic must produce a scalar score".into()));
    }
    if fake.shape != real.shape || fake.shape.len() != 2 {
        return Err(Error::Invalid("WGAN losses need equal [n, d] batches".into()));
    }
    let tape = &fake.tape;
    let (n, d) = (fake.shape[0], fake.shape[1]);

    let d_fake = critic.forward(fake).mean_all();
    let d_real = critic.forward(real).mean_all();
    let gen_loss = d_real.sub(&d_fake);
    let w_term = d_fake.sub(&d_real);

    // Interpolates between paired fake/real samples; treated as fixed inputs
    // of the penalty (gradients reach only the critic).
    let mut u = Buffer::zeros(&[n, 1]);
    for v in u.data.iter_mut() {
        *v = rand::Rng::gen::<f64>(stream);
    }
    let u = tape.constant(u);
    let one_minus_u = u.neg().add_scalar(1.0);
    let xf = tape.constant(fake.value());
    let xr = tape.constant(real.value());
    let xhat = u.mul(&xf).add(&one_minus_u.mul(&xr));

    let score = critic.forward(&xhat).sum_all();
    let grad = input_gradient(&score, &xhat);
    debug_assert_eq!(grad.shape, vec![n, d]);
    let norm = grad.square().sum_axis(1).sqrt();
    let penalty = norm.add_scalar(-1.0).square().mean_all().scale(lambda);

    Ok((gen_loss, w_term.add(&penalty)))
}

/// One critic per snapshot, each with its own Adam state.
pub struct CriticSet {
    pub critics: Vec<MlpParams>,
    pub opts: Vec<Adam>,
}

impl CriticSet {
    pub fn new(n: usize, input: usize, hidden: &[usize], stream: &mut Stream) -> Result<Self> {
        let spec = MlpSpec::leaky_relu(input, hidden, 1);
        let mut critics = Vec::with_capacity(n);
        let mut opts = Vec::with_capacity(n);
        for _ in 0..n {
            let p = MlpParams::init(&spec, stream)?;
            opts.push(Adam::for_wgan(&p.block_shapes()));
            critics.push(p);
        }
        Ok(CriticSet { critics, opts })
    }

    pub fn len(&self) -> usize {
        self.critics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.critics.is_empty()
    }
}

/// Bounded map h(x) = 2 tanh(x/2), applied to both sides before a distance.
pub fn apply_bounded_map(x: &Tensor) -> Tensor {
    x.scale(0.5).tanh().scale(2.0)
}

/// Add trainable observation noise to generated samples:
/// x + softplus(raw) * xi with fresh standard Gaussian xi.
pub fn perturb_generated(x: &Tensor, raw: &Tensor, stream: &mut Stream) -> Tensor {
    let n: usize = x.shape.iter().product();
    let xi = Buffer::new(x.shape.clone(), (0..n).map(|_| rng::normal(stream)).collect());
    x.add(&raw.softplus().mul(&x.tape.constant(xi)))
}

/// Pick rows of a `[n, d]` tensor (differentiable through the selection).
pub fn select_rows(x: &Tensor, rows: &[usize]) -> Tensor {
    let d = x.shape[1];
    let mut idx = Vec::with_capacity(d * rows.len());
    for _ in 0..d {
        idx.extend_from_slice(rows);
    }
    x.t().gather_last(Rc::new(idx)).t()
}

/// Filter generated samples by the observation window, then subsample both
/// sides to the smaller count. `None` means no survivors: skip this step.
pub fn truncate_generated(
    fake: &Tensor,
    real: &Buffer,
    domain: &Domain,
    stream: &mut Stream,
) -> Result<Option<(Tensor, Buffer)>> {
    if *domain == Domain::All {
        return Ok(Some((fake.clone(), real.clone())));
    }
    let d = fake.shape[1];
    let fv = fake.value();
    let survivors: Vec<usize> = (0..fake.shape[0])
        .filter(|&i| domain.contains(&fv.data[i * d..(i + 1) * d]))
        .collect();
    if survivors.is_empty() {
        eprintln!("warning: truncation left no generated samples; skipping step");
        return Ok(None);
    }
    let n_real = real.shape[0];
    let k = survivors.len().min(n_real);

    use rand::seq::SliceRandom;
    let mut fake_rows = survivors;
    fake_rows.shuffle(stream);
    fake_rows.truncate(k);
    let fake_sel = select_rows(fake, &fake_rows);

    let mut real_rows: Vec<usize> = (0..n_real).collect();
    real_rows.shuffle(stream);
    real_rows.truncate(k);
    let mut real_sel = Buffer::zeros(&[k, d]);
    for (i, &r) in real_rows.iter().enumerate() {
        real_sel.data[i * d..(i + 1) * d].copy_from_slice(&real.data[r * d..(r + 1) * d]);
    }
    Ok(Some((fake_sel, real_sel)))
}

/// Concatenate matched samples of adjacent snapshots into 2d-dim samples.
pub fn make_adjacent_pairs(ds: &SnapshotDataset) -> Result<Vec<Buffer>> {
    let ids = ds
        .ids
        .as_ref()
        .filter(|_| ds.paired())
        .ok_or_else(|| Error::Invalid("adjacent pairs need a paired dataset".into()))?;
    if ds.times.len() < 2 {
        return Err(Error::Invalid("need at least two snapshots to pair".into()));
    }
    let d = ds.dim;
    let mut out = Vec::with_capacity(ds.times.len() - 1);
    for i in 0..ds.times.len() - 1 {
        if ids[i] != ids[i + 1] {
            return Err(Error::Invalid("paired snapshots have inconsistent ids".into()));
        }
        let n = ds.count(i);
        let (a, b) = (&ds.samples[i], &ds.samples[i + 1]);
        let mut joint = Buffer::zeros(&[n, 2 * d]);
        for r in 0..n {
            joint.data[r * 2 * d..r * 2 * d + d].copy_from_slice(&a.data[r * d..(r + 1) * d]);
            joint.data[r * 2 * d + d..(r + 1) * 2 * d]
                .copy_from_slice(&b.data[r * d..(r + 1) * d]);
        }
        out.push(joint);
    }
    Ok(out)
}

/// Generator-side analogue: concatenate adjacent rollout snapshots along the
/// feature axis (rows already share the path index).
pub fn pair_tensors(snaps: &[Tensor]) -> Vec<Tensor> {
    snaps
        .windows(2)
        .map(|w| concat(&[&w[0], &w[1]], 1))
        .collect()
}

/// Standardize both sides per coordinate by the real batch's mean and
/// (population) standard deviation. Zero-variance coordinates keep scale 1.
pub fn normalize_by_real(fake: &Tensor, real: &Buffer) -> (Tensor, Buffer) {
    let (n, d) = (real.shape[0], real.shape[1]);
    let mut mean = vec![0.0; d];
    let mut scale = vec![0.0; d];
    for r in 0..n {
        for j in 0..d {
            mean[j] += real.data[r * d + j];
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    for r in 0..n {
        for j in 0..d {
            let c = real.data[r * d + j] - mean[j];
            scale[j] += c * c;
        }
    }
    for (j, s) in scale.iter_mut().enumerate() {
        *s = (*s / n as f64).sqrt();
        if *s == 0.0 {
            eprintln!("warning: zero variance in coordinate {}; scale kept at 1", j);
            *s = 1.0;
        }
    }

    let mut real_std = Buffer::zeros(&[n, d]);
    for r in 0..n {
        for j in 0..d {
            real_std.data[r * d + j] = (real.data[r * d + j] - mean[j]) / scale[j];
        }
    }
    let tape = &fake.tape;
    let mean_t = tape.constant(Buffer::new(vec![1, d], mean));
    let inv_t = tape.constant(Buffer::new(
        vec![1, d],
        scale.iter().map(|s| 1.0 / s).collect(),
    ));
    (fake.sub(&mean_t).mul(&inv_t), real_std)
}
