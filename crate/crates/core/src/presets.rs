//! Named experiment presets: data generation, training, evaluation, and
//! artifact writing, all at desk scale (full-scale counts available via
//! `--scale` / `--steps`).

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use serde_json::json;

use crate::buffer::Buffer;
use crate::dataset::{extract_snapshots, Domain, ExtractMode, SnapshotDataset};
use crate::error::{Error, Result};
use crate::flock::NewtonLossConfig;
use crate::harness::{
    drift_on_grid, ise, kde_density, kde_density_2d, linspace, relative_l2_error, sample_model,
    softplus_inv, train_flocking, train_sde, FlockingTrainConfig, MetricLog, TrainSettings,
};
use crate::losses::LossSpec;
use crate::model::{DiffusionParams, DriftParams, GenerativeModel, InitModel, NoiseSource};
use crate::nn::{MlpParams, MlpSpec};
use crate::rng;
use crate::sim::{
    simulate_flocking, simulate_paths, FlockingSpec, InitialDistribution, ProcessKind, SdeSpec,
};

pub const PRESET_NAMES: &[&str] = &[
    "1d-brownian",
    "1d-levy",
    "1d-levy-unbounded",
    "2d-ideal",
    "2d-noisy",
    "2d-truncated",
    "highdim-coupled",
    "highdim-uncoupled",
    "flock-1d",
    "flock-2d",
    "flock-2d-data",
    "ou-paired",
    "ou-marginal",
    "s2-density",
];

pub const SWEEP_NAMES: &[&str] = &["s4-rmin-sweep", "s2-bandwidth"];

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Overrides the preset's default step count when set.
    pub steps: Option<usize>,
    /// Multiplies the preset's default step count (ignored when `steps` is
    /// set). 1.0 = desk scale; larger approaches the full-scale protocol.
    pub scale: f64,
    /// Dimension override for the high-dimensional presets.
    pub dim: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { seed: 0, out: None, steps: None, scale: 1.0, dim: None }
    }
}

impl RunOptions {
    fn steps_for(&self, default: usize) -> usize {
        match self.steps {
            Some(s) => s,
            None => ((default as f64 * self.scale).round() as usize).max(1),
        }
    }
}

#[derive(Debug)]
pub struct PresetReport {
    pub name: String,
    pub summary: serde_json::Value,
    pub log: MetricLog,
}

pub fn run_preset(name: &str, opts: &RunOptions) -> Result<PresetReport> {
    match name {
        "1d-brownian" => run_1d(name, ProcessKind::Brownian, false, opts),
        "1d-levy" => run_1d(name, ProcessKind::Levy { alpha: 1.5 }, true, opts),
        "1d-levy-unbounded" => run_1d(name, ProcessKind::Levy { alpha: 1.5 }, false, opts),
        "2d-ideal" => run_2d(name, Scenario2d::Ideal, opts),
        "2d-noisy" => run_2d(name, Scenario2d::Noisy, opts),
        "2d-truncated" => run_2d(name, Scenario2d::Truncated, opts),
        "highdim-coupled" => run_highdim(name, true, opts),
        "highdim-uncoupled" => run_highdim(name, false, opts),
        "flock-1d" => run_flock(name, 1, false, 0.01, opts),
        "flock-2d" => run_flock(name, 2, false, 0.01, opts),
        "flock-2d-data" => run_flock(name, 2, true, 0.01, opts),
        "ou-paired" => run_ou(name, true, opts),
        "ou-marginal" => run_ou(name, false, opts),
        "s2-density" => run_s2(name, opts),
        _ => Err(Error::UnknownPreset(name.to_string(), PRESET_NAMES.join(", "))),
    }
}

/// Data-generation stage of a preset, re-runnable on its own.
pub fn preset_dataset(name: &str, opts: &RunOptions) -> Result<SnapshotDataset> {
    match name {
        "1d-brownian" => data_1d(ProcessKind::Brownian, opts),
        "1d-levy" | "1d-levy-unbounded" => data_1d(ProcessKind::Levy { alpha: 1.5 }, opts),
        "2d-ideal" => data_2d(Scenario2d::Ideal, opts),
        "2d-noisy" => data_2d(Scenario2d::Noisy, opts),
        "2d-truncated" => data_2d(Scenario2d::Truncated, opts),
        "highdim-coupled" => data_highdim(true, opts),
        "highdim-uncoupled" => data_highdim(false, opts),
        "flock-1d" => flock_dataset(1, 256, rng::derive(opts.seed, 60, 0)),
        "flock-2d" | "flock-2d-data" => flock_dataset(2, 400, rng::derive(opts.seed, 60, 0)),
        "ou-paired" | "ou-marginal" => data_ou(opts),
        "s2-density" => s2_dataset(opts).map(|(ds, _)| ds),
        _ => Err(Error::UnknownPreset(name.to_string(), PRESET_NAMES.join(", "))),
    }
}

pub fn run_sweep(name: &str, opts: &RunOptions) -> Result<serde_json::Value> {
    match name {
        "s4-rmin-sweep" => sweep_rmin(opts),
        "s2-bandwidth" => sweep_s2_bandwidth(opts),
        _ => Err(Error::UnknownPreset(name.to_string(), SWEEP_NAMES.join(", "))),
    }
}

fn ensure_out(opts: &RunOptions) -> Result<Option<PathBuf>> {
    match &opts.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Ok(Some(dir.clone()))
        }
        None => Ok(None),
    }
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<()> {
    let mut f = std::fs::File::create(dir.join(name))?;
    writeln!(f, "{}", serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn save_dataset(dir: &Option<PathBuf>, ds: &SnapshotDataset) -> Result<()> {
    if let Some(dir) = dir {
        let data_dir = dir.join("data");
        std::fs::create_dir_all(&data_dir)?;
        ds.save(&data_dir)?;
    }
    Ok(())
}

fn init_net(dim: usize, hidden: &[usize], seed: u64) -> Result<InitModel> {
    let spec = MlpSpec::tanh(dim, hidden, dim);
    let params = MlpParams::init(&spec, &mut rng::seeded(seed))?;
    Ok(InitModel::Network { params, noise: NoiseSource::Gaussian })
}

/// 1D drift field CSV: grid, truth, estimate.
fn write_drift_field_1d(
    dir: &Option<PathBuf>,
    grid: &[f64],
    truth: &[f64],
    est: &[f64],
) -> Result<()> {
    if let Some(dir) = dir {
        let mut f = std::fs::File::create(dir.join("drift_field.csv"))?;
        writeln!(f, "x,true,estimated")?;
        for i in 0..grid.len() {
            writeln!(f, "{:.6e},{:.12e},{:.12e}", grid[i], truth[i], est[i])?;
        }
    }
    Ok(())
}

/// Per-time density CSVs for 1D presets: grid, real-sample KDE, model KDE.
fn write_densities_1d(
    dir: &Option<PathBuf>,
    ds: &SnapshotDataset,
    model_samples: &[Buffer],
) -> Result<()> {
    let dir = match dir {
        Some(d) => d,
        None => return Ok(()),
    };
    let grid = linspace(-3.0, 3.0, 601);
    for (i, &t) in ds.times.iter().enumerate() {
        let real: Vec<f64> = ds.samples[i].data.clone();
        let fake: Vec<f64> = model_samples[i].data.clone();
        let dr = kde_density(&real, &grid, None)?;
        let df = kde_density(&fake, &grid, None)?;
        let mut f = std::fs::File::create(dir.join(format!("density_{:.2}.csv", t)))?;
        writeln!(f, "x,real,model")?;
        for j in 0..grid.len() {
            writeln!(f, "{:.6e},{:.12e},{:.12e}", grid[j], dr[j], df[j])?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// 1D Brownian / Levy presets: dX = (X - X^3) dt + dW (or dL^alpha).

fn data_1d(process: ProcessKind, opts: &RunOptions) -> Result<SnapshotDataset> {
    let times = [0.2, 0.5, 1.0];
    let truth = SdeSpec {
        dim: 1,
        drift: Rc::new(|x: &[f64]| vec![x[0] - x[0].powi(3)]),
        sigma: Buffer::new(vec![1, 1], vec![1.0]),
        process,
        init: InitialDistribution::isotropic_gaussian(1, 0.0, 0.2),
    };
    // Observation window for the heavy-tailed process; harmless for the
    // Brownian case.
    let window = if matches!(process, ProcessKind::Levy { .. }) {
        Domain::Box { lo: vec![-1000.0], hi: vec![1000.0] }
    } else {
        Domain::All
    };
    let traj = simulate_paths(&truth, 40_000, 0.01, 1.0, Some(&times), rng::derive(opts.seed, 10, 0))?;
    extract_snapshots(
        &traj,
        &times,
        10_000,
        ExtractMode::Unpaired { disjoint: true },
        0.0,
        &window,
        rng::derive(opts.seed, 11, 0),
    )
}

fn run_1d(name: &str, process: ProcessKind, bounded: bool, opts: &RunOptions) -> Result<PresetReport> {
    let dir = ensure_out(opts)?;
    let levy = matches!(process, ProcessKind::Levy { .. });
    let ds = data_1d(process, opts)?;
    save_dataset(&dir, &ds)?;

    let mut model = GenerativeModel {
        dim: 1,
        init: init_net(1, &[32, 32], rng::derive(opts.seed, 12, 0))?,
        drift: DriftParams::polynomial_zeros(1),
        diffusion: DiffusionParams::diagonal_zeros(1),
        process,
        dt: 0.01,
    };
    let mut loss = LossSpec::sliced(1);
    loss.bounded_map = bounded;

    let mut settings = TrainSettings::new(opts.steps_for(12_000), 500, 1e-3, rng::derive(opts.seed, 13, 0));
    settings.log_every = (settings.steps / 100).max(1);
    let outcome = train_sde(&mut model, &ds, &loss, false, &settings)?;

    // Evaluation: diffusion scalar + drift on [-3, 3].
    let sigma_hat = model.diffusion.matrix().data[0];
    let grid = linspace(-3.0, 3.0, 601);
    let pts = Buffer::new(vec![grid.len(), 1], grid.clone());
    let est = drift_on_grid(&model.drift, &pts).data;
    let truth_field: Vec<f64> = grid.iter().map(|&x| x - x.powi(3)).collect();
    let drift_err = relative_l2_error(&est, &truth_field)?;
    write_drift_field_1d(&dir, &grid, &truth_field, &est)?;

    let samples = sample_model(&model, 4000, &ds.times, rng::derive(opts.seed, 14, 0))?;
    write_densities_1d(&dir, &ds, &samples)?;

    let summary = json!({
        "sigma": sigma_hat,
        "sigma_truth": 1.0,
        "drift_rel_l2": drift_err,
        "bounded_map": bounded,
        "levy": levy,
        "sigma_min_positive": outcome.log.column("sigma_min").iter().all(|&v| v > 0.0),
        "model": model.export_json(),
    });
    finish(name, summary, outcome.log, &dir)
}

// ---------------------------------------------------------------------------
// 2D structured-potential presets.

#[derive(Clone, Copy, PartialEq)]
enum Scenario2d {
    Ideal,
    Noisy,
    Truncated,
}

/// Truth drift of the two-well potential with shifts (1, 1, -0.5, -0.5).
fn structured_drift(a: [f64; 4]) -> impl Fn(&[f64]) -> Vec<f64> {
    move |x: &[f64]| {
        let (u0, v0) = (x[0] + a[0], x[1] + a[1]);
        let (u1, v1) = (x[0] + a[2], x[1] + a[3]);
        vec![
            -2.0 * (u0 * v0 * v0 + u1 * v1 * v1),
            -2.0 * (u0 * u0 * v0 + u1 * u1 * v1),
        ]
    }
}

fn scenario_domain(scenario: Scenario2d) -> (f64, Domain) {
    match scenario {
        Scenario2d::Ideal => (0.0, Domain::All),
        Scenario2d::Noisy => (0.2, Domain::All),
        Scenario2d::Truncated => (0.0, Domain::HalfSpace { axis: 0, upper: 0.5 }),
    }
}

fn data_2d(scenario: Scenario2d, opts: &RunOptions) -> Result<SnapshotDataset> {
    let times = [0.0, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0];
    let truth = SdeSpec {
        dim: 2,
        drift: Rc::new(structured_drift([1.0, 1.0, -0.5, -0.5])),
        sigma: Buffer::new(vec![2, 2], vec![1.0, 0.0, 1.0, 1.0]),
        process: ProcessKind::Brownian,
        init: InitialDistribution::isotropic_gaussian(2, 0.0, 1.0),
    };
    let traj = simulate_paths(&truth, 30_000, 0.01, 1.0, Some(&times), rng::derive(opts.seed, 20, 0))?;
    let (noise_scale, domain) = scenario_domain(scenario);
    extract_snapshots(
        &traj,
        &times,
        2000,
        ExtractMode::Unpaired { disjoint: true },
        noise_scale,
        &domain,
        rng::derive(opts.seed, 21, 0),
    )
}

fn run_2d(name: &str, scenario: Scenario2d, opts: &RunOptions) -> Result<PresetReport> {
    let dir = ensure_out(opts)?;
    let a_truth = [1.0, 1.0, -0.5, -0.5];
    let s_truth = [1.0, 1.0, 1.0]; // (0,0), (1,0), (1,1)
    let (_, domain) = scenario_domain(scenario);
    let ds = data_2d(scenario, opts)?;
    save_dataset(&dir, &ds)?;

    let mut model = GenerativeModel {
        dim: 2,
        init: init_net(2, &[48, 48], rng::derive(opts.seed, 22, 0))?,
        drift: DriftParams::structured2d_random(&mut rng::seeded(rng::derive(opts.seed, 23, 0))),
        diffusion: DiffusionParams::lower_tri2_zeros(),
        process: ProcessKind::Brownian,
        dt: 0.01,
    };
    let mut loss = LossSpec::sliced(100);
    loss.trainable_noise = scenario == Scenario2d::Noisy;
    if scenario == Scenario2d::Truncated {
        loss.truncation = domain.clone();
    }

    let mut settings = TrainSettings::new(opts.steps_for(8000), 500, 1e-3, rng::derive(opts.seed, 24, 0));
    settings.log_every = (settings.steps / 100).max(1);
    let outcome = train_sde(&mut model, &ds, &loss, false, &settings)?;

    let a_hat = match &model.drift {
        DriftParams::Structured2d { a } => a.data.clone(),
        _ => unreachable!(),
    };
    // The two potential wells are exchangeable: report the ordering closest
    // to the truth.
    let err = |a: &[f64]| -> f64 {
        a.iter()
            .zip(a_truth.iter())
            .map(|(x, t)| (x - t).abs())
            .fold(0.0, f64::max)
    };
    let swapped = vec![a_hat[2], a_hat[3], a_hat[0], a_hat[1]];
    let a_best = if err(&swapped) < err(&a_hat) { swapped } else { a_hat.clone() };

    let sigma = model.diffusion.matrix();
    let s_hat = [sigma.data[0], sigma.data[2], sigma.data[3]];

    // Drift field on a dense-data mask (2D KDE threshold 0.05 at the last
    // snapshot time).
    let axis = linspace(-2.5, 2.5, 41);
    let mut pts2: Vec<(f64, f64)> = Vec::new();
    for &x in &axis {
        for &y in &axis {
            pts2.push((x, y));
        }
    }
    let dens = kde_density_2d(ds.samples.last().unwrap(), &pts2)?;
    let mut grid_buf = Buffer::zeros(&[pts2.len(), 2]);
    for (i, &(x, y)) in pts2.iter().enumerate() {
        grid_buf.data[i * 2] = x;
        grid_buf.data[i * 2 + 1] = y;
    }
    let est = drift_on_grid(&model.drift, &grid_buf);
    let truth_fn = structured_drift(a_truth);
    let mut est_masked = Vec::new();
    let mut ref_masked = Vec::new();
    if let Some(dir) = &dir {
        let mut f = std::fs::File::create(dir.join("drift_field.csv"))?;
        writeln!(f, "x1,x2,true1,true2,est1,est2,mask")?;
        for (i, &(x, y)) in pts2.iter().enumerate() {
            let t = truth_fn(&[x, y]);
            let mask = (dens[i] >= 0.05) as usize;
            writeln!(
                f,
                "{:.4e},{:.4e},{:.12e},{:.12e},{:.12e},{:.12e},{}",
                x, y, t[0], t[1], est.data[i * 2], est.data[i * 2 + 1], mask
            )?;
        }
    }
    for (i, &(x, y)) in pts2.iter().enumerate() {
        if dens[i] >= 0.05 {
            let t = truth_fn(&[x, y]);
            est_masked.extend_from_slice(&est.data[i * 2..i * 2 + 2]);
            ref_masked.extend_from_slice(&t);
        }
    }
    let drift_err = if ref_masked.is_empty() {
        f64::NAN
    } else {
        relative_l2_error(&est_masked, &ref_masked)?
    };

    let summary = json!({
        "a": a_best,
        "a_raw": a_hat,
        "a_truth": a_truth.to_vec(),
        "s": s_hat.to_vec(),
        "s_truth": s_truth.to_vec(),
        "noise": outcome.noise_scale,
        "noise_truth": if scenario == Scenario2d::Noisy { 0.2 } else { 0.0 },
        "drift_rel_l2_masked": drift_err,
        "sigma_min_positive": outcome.log.column("sigma_min").iter().all(|&v| v > 0.0),
        "model": model.export_json(),
    });
    finish(name, summary, outcome.log, &dir)
}

// ---------------------------------------------------------------------------
// High-dimensional presets (WGAN-GP): per-dimension cubic drift, banded or
// diagonal diffusion.

fn data_highdim(coupled: bool, opts: &RunOptions) -> Result<SnapshotDataset> {
    let d = opts.dim.unwrap_or(5);
    if d < 2 {
        return Err(Error::Invalid("high-dimensional presets need d >= 2".into()));
    }
    let times = [0.2, 0.5, 1.0];
    let mut sigma = Buffer::zeros(&[d, d]);
    for i in 0..d {
        sigma.data[i * d + i] = 1.0;
        if coupled && i > 0 {
            sigma.data[i * d + i - 1] = 1.0;
        }
    }
    let truth = SdeSpec {
        dim: d,
        drift: Rc::new(|x: &[f64]| x.iter().map(|&v| v - v.powi(3)).collect()),
        sigma,
        process: ProcessKind::Brownian,
        init: InitialDistribution::isotropic_gaussian(d, 0.0, 0.2),
    };
    let traj = simulate_paths(&truth, 30_000, 0.01, 1.0, Some(&times), rng::derive(opts.seed, 30, 0))?;
    extract_snapshots(
        &traj,
        &times,
        4000,
        ExtractMode::Unpaired { disjoint: true },
        0.0,
        &Domain::All,
        rng::derive(opts.seed, 31, 0),
    )
}

fn run_highdim(name: &str, coupled: bool, opts: &RunOptions) -> Result<PresetReport> {
    let dir = ensure_out(opts)?;
    let d = opts.dim.unwrap_or(5);
    let ds = data_highdim(coupled, opts)?;
    save_dataset(&dir, &ds)?;

    let diffusion = if coupled {
        DiffusionParams::banded_zeros(d)
    } else {
        DiffusionParams::diagonal_zeros(d)
    };
    let mut model = GenerativeModel {
        dim: d,
        init: init_net(d, &[64, 64], rng::derive(opts.seed, 32, 0))?,
        drift: DriftParams::polynomial_filled(d, -0.5),
        diffusion,
        process: ProcessKind::Brownian,
        dt: 0.01,
    };
    let loss = LossSpec::wgan();

    let mut settings = TrainSettings::new(opts.steps_for(12_000), 400, 3e-4, rng::derive(opts.seed, 33, 0));
    settings.critic_hidden = vec![64, 64];
    settings.log_every = (settings.steps / 100).max(1);
    let outcome = train_sde(&mut model, &ds, &loss, false, &settings)?;

    // Per-dimension drift error on [-3, 3] and mean absolute diffusion error.
    let grid = linspace(-3.0, 3.0, 601);
    let truth_field: Vec<f64> = grid.iter().map(|&x| x - x.powi(3)).collect();
    let mut pts = Buffer::zeros(&[grid.len(), d]);
    let mut drift_errs = Vec::with_capacity(d);
    for j in 0..d {
        for v in pts.data.iter_mut() {
            *v = 0.0;
        }
        for (i, &x) in grid.iter().enumerate() {
            pts.data[i * d + j] = x;
        }
        let est = drift_on_grid(&model.drift, &pts);
        let col: Vec<f64> = (0..grid.len()).map(|i| est.data[i * d + j]).collect();
        drift_errs.push(relative_l2_error(&col, &truth_field)?);
    }
    let sig_hat = model.diffusion.matrix();
    let mut abs_err_sum = 0.0;
    let mut n_entries = 0usize;
    for i in 0..d {
        abs_err_sum += (sig_hat.data[i * d + i] - 1.0).abs();
        n_entries += 1;
        if coupled && i > 0 {
            abs_err_sum += (sig_hat.data[i * d + i - 1] - 1.0).abs();
            n_entries += 1;
        }
    }
    let sigma_mae = abs_err_sum / n_entries as f64;

    if let Some(dirp) = &dir {
        let mut f = std::fs::File::create(dirp.join("drift_field.csv"))?;
        writeln!(f, "x,true,{}", (0..d).map(|j| format!("est{}", j + 1)).collect::<Vec<_>>().join(","))?;
        for (i, &x) in grid.iter().enumerate() {
            let mut row = format!("{:.6e},{:.12e}", x, truth_field[i]);
            for j in 0..d {
                let mut p = vec![0.0; d];
                p[j] = x;
                let est = drift_on_grid(&model.drift, &Buffer::new(vec![1, d], p));
                row.push_str(&format!(",{:.12e}", est.data[j]));
            }
            writeln!(f, "{}", row)?;
        }
    }

    let summary = json!({
        "dim": d,
        "coupled": coupled,
        "sigma_mean_abs_error": sigma_mae,
        "drift_rel_l2_per_dim": drift_errs,
        "sigma_min_positive": outcome.log.column("sigma_min").iter().all(|&v| v > 0.0),
        "model": model.export_json(),
    });
    finish(name, summary, outcome.log, &dir)
}

// ---------------------------------------------------------------------------
// OU paired vs marginal: dX = -X dt + sqrt(2) dW, stationary N(0, 1).

fn data_ou(opts: &RunOptions) -> Result<SnapshotDataset> {
    let times = [0.1, 0.2, 0.3, 0.4, 0.5, 0.75, 1.0];
    let truth = SdeSpec {
        dim: 1,
        drift: Rc::new(|x: &[f64]| vec![-x[0]]),
        sigma: Buffer::new(vec![1, 1], vec![2f64.sqrt()]),
        process: ProcessKind::Brownian,
        init: InitialDistribution::isotropic_gaussian(1, 0.0, 1.0),
    };
    let traj = simulate_paths(&truth, 100, 0.01, 1.0, Some(&times), rng::derive(opts.seed, 40, 0))?;
    extract_snapshots(
        &traj,
        &times,
        100,
        ExtractMode::Paired,
        0.0,
        &Domain::All,
        rng::derive(opts.seed, 41, 0),
    )
}

fn run_ou(name: &str, paired: bool, opts: &RunOptions) -> Result<PresetReport> {
    let dir = ensure_out(opts)?;
    let ds = data_ou(opts)?;
    save_dataset(&dir, &ds)?;

    let mut model = GenerativeModel {
        dim: 1,
        init: init_net(1, &[32, 32], rng::derive(opts.seed, 42, 0))?,
        drift: DriftParams::linear_zeros(1),
        diffusion: DiffusionParams::diagonal_zeros(1),
        process: ProcessKind::Brownian,
        dt: 0.01,
    };
    let loss = LossSpec::sliced(if paired { 50 } else { 1 });

    let mut settings = TrainSettings::new(opts.steps_for(15_000), 100, 1e-3, rng::derive(opts.seed, 43, 0));
    settings.log_every = (settings.steps / 100).max(1);
    let outcome = train_sde(&mut model, &ds, &loss, paired, &settings)?;

    let (intercept, slope) = match &model.drift {
        DriftParams::Polynomial { coeffs } => (coeffs.data[0], coeffs.data[1]),
        _ => unreachable!(),
    };
    let sigma_hat = model.diffusion.matrix().data[0];
    let grid = linspace(-3.0, 3.0, 601);
    let truth_field: Vec<f64> = grid.iter().map(|&x| -x).collect();
    let est: Vec<f64> = grid.iter().map(|&x| intercept + slope * x).collect();
    write_drift_field_1d(&dir, &grid, &truth_field, &est)?;

    let summary = json!({
        "paired": paired,
        "slope": slope,
        "intercept": intercept,
        "slope_truth": -1.0,
        "sigma": sigma_hat,
        "sigma_truth": 2f64.sqrt(),
        "sigma_min_positive": outcome.log.column("sigma_min").iter().all(|&v| v > 0.0),
        "model": model.export_json(),
    });
    finish(name, summary, outcome.log, &dir)
}

// ---------------------------------------------------------------------------
// S2 density study: known dynamics dX = (4X - X^3) dt + 0.4 dW, bimodal
// initial law; only the initial-state generator trains. The learned model's
// large-ensemble KDE is compared against a data-only KDE via ISE on [-4, 4],
// with a dense reference ensemble as ground truth.

fn s2_truth() -> SdeSpec {
    SdeSpec {
        dim: 1,
        drift: Rc::new(|x: &[f64]| vec![4.0 * x[0] - x[0].powi(3)]),
        sigma: Buffer::new(vec![1, 1], vec![0.4]),
        process: ProcessKind::Brownian,
        init: InitialDistribution::GaussianMixture {
            weights: vec![0.5, 0.5],
            means: vec![vec![-0.5], vec![0.5]],
            stds: vec![vec![0.3], vec![0.3]],
        },
    }
}

fn s2_dataset(opts: &RunOptions) -> Result<(SnapshotDataset, Vec<f64>)> {
    let times = vec![0.05, 0.10, 0.15, 0.20, 0.25];
    let truth = s2_truth();
    let traj = simulate_paths(&truth, 20_000, 0.01, 0.25, Some(&times), rng::derive(opts.seed, 50, 0))?;
    let ds = extract_snapshots(
        &traj,
        &times,
        1000,
        ExtractMode::Unpaired { disjoint: true },
        0.0,
        &Domain::All,
        rng::derive(opts.seed, 51, 0),
    )?;
    Ok((ds, times))
}

fn s2_train(ds: &SnapshotDataset, opts: &RunOptions) -> Result<(GenerativeModel, MetricLog)> {
    let mut coeffs = Buffer::zeros(&[4, 1]);
    coeffs.data[1] = 4.0;
    coeffs.data[3] = -1.0;
    let mut model = GenerativeModel {
        dim: 1,
        init: init_net(1, &[32, 32], rng::derive(opts.seed, 52, 0))?,
        drift: DriftParams::Polynomial { coeffs },
        diffusion: DiffusionParams::Diagonal {
            raw: Buffer::new(vec![1], vec![softplus_inv(0.4)]),
        },
        process: ProcessKind::Brownian,
        dt: 0.01,
    };
    let loss = LossSpec::sliced(1);
    let mut settings = TrainSettings::new(opts.steps_for(4000), 500, 1e-3, rng::derive(opts.seed, 53, 0));
    settings.train_dynamics = false; // dynamics are known here
    settings.log_every = (settings.steps / 100).max(1);
    let outcome = train_sde(&mut model, ds, &loss, false, &settings)?;
    Ok((model, outcome.log))
}

fn run_s2(name: &str, opts: &RunOptions) -> Result<PresetReport> {
    let dir = ensure_out(opts)?;
    let (ds, times) = s2_dataset(opts)?;
    save_dataset(&dir, &ds)?;
    let (model, log) = s2_train(&ds, opts)?;

    // Reference density from a dense truth ensemble; model density from a
    // large generated ensemble; data density from the 1000 samples.
    let truth = s2_truth();
    let ref_traj = simulate_paths(&truth, 100_000, 0.01, 0.25, Some(&times), rng::derive(opts.seed, 54, 0))?;
    let gen = sample_model(&model, 20_000, &times, rng::derive(opts.seed, 55, 0))?;
    let grid = linspace(-4.0, 4.0, 801);

    let mut rows = Vec::new();
    for (i, &t) in times.iter().enumerate() {
        let dref = kde_density(&ref_traj.states[i].data, &grid, None)?;
        let ddata = kde_density(&ds.samples[i].data, &grid, None)?;
        let dmodel = kde_density(&gen[i].data, &grid, None)?;
        let ise_data = ise(&ddata, &dref, &grid)?;
        let ise_model = ise(&dmodel, &dref, &grid)?;
        if let Some(dirp) = &dir {
            let mut f = std::fs::File::create(dirp.join(format!("density_{:.2}.csv", t)))?;
            writeln!(f, "x,reference,data_kde,model_kde")?;
            for j in 0..grid.len() {
                writeln!(
                    f,
                    "{:.6e},{:.12e},{:.12e},{:.12e}",
                    grid[j], dref[j], ddata[j], dmodel[j]
                )?;
            }
        }
        rows.push(json!({"t": t, "ise_data": ise_data, "ise_model": ise_model}));
    }

    let summary = json!({
        "ise_table": rows,
        "model": model.export_json(),
    });
    finish(name, summary, log, &dir)
}

/// Grid-search the KDE bandwidth (0.01 to 0.5, step 0.01) for the plain
/// data estimator against the dense reference, per snapshot time.
fn sweep_s2_bandwidth(opts: &RunOptions) -> Result<serde_json::Value> {
    let dir = ensure_out(opts)?;
    let (ds, times) = s2_dataset(opts)?;
    let truth = s2_truth();
    let ref_traj = simulate_paths(&truth, 100_000, 0.01, 0.25, Some(&times), rng::derive(opts.seed, 54, 0))?;
    let grid = linspace(-4.0, 4.0, 801);

    let mut table = Vec::new();
    for (i, &t) in times.iter().enumerate() {
        let dref = kde_density(&ref_traj.states[i].data, &grid, None)?;
        let mut best = (f64::INFINITY, 0.0);
        let mut curve = Vec::new();
        for k in 1..=50 {
            let h = k as f64 * 0.01;
            let d = kde_density(&ds.samples[i].data, &grid, Some(h))?;
            let e = ise(&d, &dref, &grid)?;
            curve.push(json!({"h": h, "ise": e}));
            if e < best.0 {
                best = (e, h);
            }
        }
        table.push(json!({"t": t, "best_h": best.1, "best_ise": best.0, "curve": curve}));
    }
    let out = json!({"sweep": "s2-bandwidth", "per_time": table});
    if let Some(dirp) = &dir {
        write_json(dirp, "sweep.json", &out)?;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Flocking presets.

fn flock_dataset(dim: usize, n_particles: usize, seed: u64) -> Result<SnapshotDataset> {
    let spec = FlockingSpec { dim, n_particles, alpha: 0.5, r_min: 0.01 };
    let times: Vec<f64> = (0..16).map(|i| 0.5 + 0.1 * i as f64).collect();
    let traj = simulate_flocking(&spec, 0.01, 2.0, Some(&times), seed)?;
    Ok(SnapshotDataset {
        dim,
        times: traj.times.clone(),
        samples: traj.positions.clone(),
        ids: None,
        provenance: crate::dataset::Provenance {
            seed,
            noise_scale: 0.0,
            domain: Domain::All,
            mode: ExtractMode::Unpaired { disjoint: false },
        },
    })
}

fn run_flock(
    name: &str,
    dim: usize,
    start_from_data: bool,
    r_min: f64,
    opts: &RunOptions,
) -> Result<PresetReport> {
    let dir = ensure_out(opts)?;
    let n_particles = if dim == 1 { 256 } else { 400 };
    let ds = flock_dataset(dim, n_particles, rng::derive(opts.seed, 60, 0))?;
    save_dataset(&dir, &ds)?;

    let cfg = FlockingTrainConfig {
        dt: 0.05,
        eta: 1.0,
        newton: NewtonLossConfig { k_probes: 8, m_aux: 128, b_steps: 5 },
        projections: if dim == 1 { 1 } else { 50 },
        start_from_data,
        mu_hidden: vec![48, 48],
        g_hidden: vec![32, 32],
        r_min,
    };
    let mut settings =
        TrainSettings::new(opts.steps_for(2500), n_particles, 1e-3, rng::derive(opts.seed, 61, 0));
    settings.log_every = (settings.steps / 100).max(1);
    let outcome = train_flocking(&ds, &cfg, &settings)?;

    if let Some(dirp) = &dir {
        outcome.mu.save(&dirp.join("velocity_net.json"))?;
    }

    let alphas = outcome.log.column("alpha");
    let summary = json!({
        "dim": dim,
        "start_from_data": start_from_data,
        "alpha": outcome.alpha,
        "alpha_truth": 0.5,
        "r_min": r_min,
        "alpha_in_range": alphas.iter().all(|&a| a > 0.0 && a < 2.0),
        "final_newton": outcome.log.last("newton"),
        "final_dist": outcome.log.last("dist"),
    });
    finish(name, summary, outcome.log, &dir)
}

/// r_min sensitivity sweep on the 1D flocking preset.
fn sweep_rmin(opts: &RunOptions) -> Result<serde_json::Value> {
    let dir = ensure_out(opts)?;
    let values = [0.01, 0.02, 0.05, 0.1];
    let mut rows = Vec::new();
    for &r in &values {
        let sub = RunOptions { out: None, ..opts.clone() };
        let report = run_flock("flock-1d", 1, false, r, &sub)?;
        rows.push(json!({
            "r_min": r,
            "alpha": report.summary["alpha"],
        }));
    }
    let out = json!({"sweep": "s4-rmin-sweep", "rows": rows});
    if let Some(dirp) = &dir {
        write_json(dirp, "sweep.json", &out)?;
        let mut f = std::fs::File::create(dirp.join("sweep.csv"))?;
        writeln!(f, "r_min,alpha")?;
        for row in rows.iter() {
            writeln!(f, "{},{}", row["r_min"], row["alpha"])?;
        }
    }
    Ok(out)
}

fn finish(
    name: &str,
    summary: serde_json::Value,
    log: MetricLog,
    dir: &Option<PathBuf>,
) -> Result<PresetReport> {
    if let Some(dirp) = dir {
        log.save_csv(&dirp.join("metrics.csv"))?;
        write_json(dirp, "params.json", &summary)?;
    }
    Ok(PresetReport { name: name.to_string(), summary, log })
}
