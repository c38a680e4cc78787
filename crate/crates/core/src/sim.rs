//! Forward simulators: Euler-Maruyama for SDE ensembles and Velocity-Verlet
//! for the nonlocal flocking model.

use std::f64::consts::PI;
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::buffer::Buffer;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::stable;

/// Heavy-tailed increments are clipped at this many standard draws.
pub const LEVY_CLIP: f64 = 100.0;

/// Closed-form drift field: maps one state row to its drift vector.
pub type DriftFn = Rc<dyn Fn(&[f64]) -> Vec<f64>>;

/// Cubic polynomial evaluated in Horner form. Shared between the plain
/// simulator and the trainable drift so identical coefficients give
/// bit-identical values.
pub fn horner4(c: &[f64; 4], x: f64) -> f64 {
    ((c[3] * x + c[2]) * x + c[1]) * x + c[0]
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub enum ProcessKind {
    Brownian,
    Levy { alpha: f64 },
}

/// Initial law of the ensemble. Mixture components have diagonal covariance;
/// `CosineBump` is the compactly supported flocking profile on [-3/4, 3/4]^d.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum InitialDistribution {
    GaussianMixture {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        stds: Vec<Vec<f64>>,
    },
    CosineBump,
}

impl InitialDistribution {
    pub fn isotropic_gaussian(dim: usize, mean: f64, std: f64) -> Self {
        InitialDistribution::GaussianMixture {
            weights: vec![1.0],
            means: vec![vec![mean; dim]],
            stds: vec![vec![std; dim]],
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            InitialDistribution::GaussianMixture { weights, means, stds } => {
                if weights.is_empty() || weights.len() != means.len() || means.len() != stds.len()
                {
                    return Err(Error::Invalid("mixture component lists must align".into()));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-9 || weights.iter().any(|&w| w < 0.0) {
                    return Err(Error::Invalid("mixture weights must sum to one".into()));
                }
                if means.iter().any(|m| m.len() != dim) || stds.iter().any(|s| s.len() != dim) {
                    return Err(Error::Invalid("mixture component dimension mismatch".into()));
                }
                Ok(())
            }
            InitialDistribution::CosineBump => Ok(()),
        }
    }

    /// One draw, consuming the stream in a fixed order (component choice if a
    /// mixture has several components, then per-axis draws).
    pub fn sample(&self, dim: usize, stream: &mut Stream) -> Vec<f64> {
        match self {
            InitialDistribution::GaussianMixture { weights, means, stds } => {
                let k = if weights.len() == 1 {
                    0
                } else {
                    let u: f64 = rand::Rng::gen(stream);
                    let mut acc = 0.0;
                    let mut pick = weights.len() - 1;
                    for (i, w) in weights.iter().enumerate() {
                        acc += w;
                        if u < acc {
                            pick = i;
                            break;
                        }
                    }
                    pick
                };
                (0..dim)
                    .map(|j| means[k][j] + stds[k][j] * rng::normal(stream))
                    .collect()
            }
            InitialDistribution::CosineBump => {
                (0..dim).map(|_| cosine_bump_inverse_cdf(rand::Rng::gen(stream))).collect()
            }
        }
    }
}

/// Inverse CDF of the density (pi/3) cos(2 pi x / 3) on [-3/4, 3/4].
pub fn cosine_bump_inverse_cdf(p: f64) -> f64 {
    (3.0 / (2.0 * PI)) * (2.0 * p - 1.0).asin()
}

#[derive(Clone)]
pub struct SdeSpec {
    pub dim: usize,
    pub drift: DriftFn,
    /// Constant diffusion matrix, `dim x dim`.
    pub sigma: Buffer,
    pub process: ProcessKind,
    pub init: InitialDistribution,
}

/// Ensemble states stored at the kept grid times, each `[n_paths, dim]`.
pub struct Trajectories {
    pub dim: usize,
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<Buffer>,
    /// Paths that hit a non-finite state; excluded from snapshot extraction.
    pub excluded: Vec<bool>,
    pub n_excluded: usize,
}

impl Trajectories {
    pub fn n_paths(&self) -> usize {
        self.excluded.len()
    }

    pub fn time_index(&self, t: f64) -> Result<usize> {
        self.times
            .iter()
            .position(|&s| (s - t).abs() < 1e-9)
            .ok_or_else(|| Error::Invalid(format!("time {} is not on the stored grid", t)))
    }
}

/// Per-path, per-dimension driving noise for one step, drawn from the path's
/// dedicated substream. Shared by the forward simulator and the trainable
/// generator so matched seeds produce the same increments.
pub fn draw_step_noise(
    streams: &mut [Stream],
    dim: usize,
    process: &ProcessKind,
    out: &mut Buffer,
) {
    debug_assert_eq!(out.shape, vec![streams.len(), dim]);
    for (p, stream) in streams.iter_mut().enumerate() {
        for j in 0..dim {
            out.data[p * dim + j] = match process {
                ProcessKind::Brownian => rng::normal(stream),
                ProcessKind::Levy { alpha } => {
                    stable::draw(*alpha, stream).clamp(-LEVY_CLIP, LEVY_CLIP)
                }
            };
        }
    }
}

/// Noise-to-increment matrix: sigma^T scaled by dt^(1/alpha) (sqrt(dt) for
/// Brownian), so the step increment is `xi @ sigma_step`.
pub fn step_sigma(sigma: &Buffer, process: &ProcessKind, dt: f64) -> Buffer {
    let c = match process {
        ProcessKind::Brownian => dt.sqrt(),
        ProcessKind::Levy { alpha } => dt.powf(1.0 / alpha),
    };
    crate::buffer::transpose(sigma).map(|x| c * x)
}

/// Euler-Maruyama ensemble simulation. Each path owns an RNG substream
/// (init draw first, then one block of increments per step). Only states at
/// `keep_times` are stored (all grid times when `None`).
pub fn simulate_paths(
    spec: &SdeSpec,
    n_paths: usize,
    dt: f64,
    horizon: f64,
    keep_times: Option<&[f64]>,
    seed: u64,
) -> Result<Trajectories> {
    if n_paths == 0 || dt <= 0.0 || horizon < 0.0 {
        return Err(Error::Invalid("need n_paths > 0, dt > 0, horizon >= 0".into()));
    }
    if spec.sigma.shape != vec![spec.dim, spec.dim] {
        return Err(Error::Invalid("sigma must be a square dim x dim matrix".into()));
    }
    if let ProcessKind::Levy { alpha } = spec.process {
        if !(alpha > 0.0 && alpha <= 2.0) {
            return Err(Error::Invalid(format!("alpha {} outside (0, 2]", alpha)));
        }
    }
    spec.init.validate(spec.dim)?;

    let n_steps = (horizon / dt).round() as usize;
    if (n_steps as f64 * dt - horizon).abs() > 1e-9 {
        return Err(Error::Invalid("horizon must be a multiple of dt".into()));
    }
    let grid: Vec<f64> = (0..=n_steps).map(|i| i as f64 * dt).collect();
    let keep: Vec<usize> = match keep_times {
        None => (0..=n_steps).collect(),
        Some(ts) => {
            let mut idx = Vec::with_capacity(ts.len());
            for &t in ts {
                idx.push(
                    grid.iter()
                        .position(|&s| (s - t).abs() < 1e-9)
                        .ok_or_else(|| {
                            Error::Invalid(format!("time {} is not on the step grid", t))
                        })?,
                );
            }
            idx
        }
    };

    let d = spec.dim;
    let mut streams: Vec<Stream> =
        (0..n_paths).map(|p| rng::substream(seed, p as u64)).collect();
    let mut state = Buffer::zeros(&[n_paths, d]);
    for (p, stream) in streams.iter_mut().enumerate() {
        let x0 = spec.init.sample(d, stream);
        state.data[p * d..(p + 1) * d].copy_from_slice(&x0);
    }

    let sigma_step = step_sigma(&spec.sigma, &spec.process, dt);
    let mut excluded = vec![false; n_paths];
    let mut states: Vec<Buffer> = Vec::with_capacity(keep.len());
    let mut xi = Buffer::zeros(&[n_paths, d]);
    let mut drift = Buffer::zeros(&[n_paths, d]);

    let store = |step: usize, state: &Buffer, states: &mut Vec<Buffer>| {
        for (k, &ki) in keep.iter().enumerate() {
            if ki == step && states.len() == k {
                states.push(state.clone());
            }
        }
    };
    store(0, &state, &mut states);

    for step in 0..n_steps {
        draw_step_noise(&mut streams, d, &spec.process, &mut xi);
        for p in 0..n_paths {
            let mu = (spec.drift)(&state.data[p * d..(p + 1) * d]);
            drift.data[p * d..(p + 1) * d].copy_from_slice(&mu);
        }
        let dx = crate::buffer::matmul(&xi, &sigma_step);
        for i in 0..state.data.len() {
            state.data[i] = state.data[i] + drift.data[i] * dt + dx.data[i];
        }
        for p in 0..n_paths {
            if excluded[p] {
                continue;
            }
            if state.data[p * d..(p + 1) * d].iter().any(|v| !v.is_finite()) {
                excluded[p] = true;
                state.data[p * d..(p + 1) * d].fill(0.0);
            }
        }
        store(step + 1, &state, &mut states);
    }

    let n_excluded = excluded.iter().filter(|&&e| e).count();
    if n_excluded > 0 {
        eprintln!(
            "warning: {} of {} paths hit non-finite states and were excluded",
            n_excluded, n_paths
        );
    }
    Ok(Trajectories {
        dim: d,
        dt,
        times: keep.iter().map(|&k| grid[k]).collect(),
        states,
        excluded,
        n_excluded,
    })
}

/// Normalization constant of the singular influence kernel,
/// alpha Gamma((d+alpha)/2) / (2 pi^(alpha+d/2) Gamma(1-alpha/2)).
pub fn influence_coeff(dim: usize, alpha: f64) -> f64 {
    assert!(alpha > 0.0 && alpha < 2.0, "influence exponent must lie in (0, 2)");
    let d = dim as f64;
    (alpha.ln() + ln_gamma((d + alpha) / 2.0)
        - (2.0f64).ln()
        - (alpha + d / 2.0) * PI.ln()
        - ln_gamma(1.0 - alpha / 2.0))
    .exp()
}

/// phi(r) = c_{d,alpha} max(r, r_min)^-(d+alpha).
pub fn influence_phi(dim: usize, alpha: f64, r_min: f64, r: f64) -> f64 {
    influence_coeff(dim, alpha) * r.max(r_min).powf(-(dim as f64 + alpha))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlockingSpec {
    pub dim: usize,
    pub n_particles: usize,
    pub alpha: f64,
    pub r_min: f64,
}

/// Positions and velocities at every stored time, each `[n, dim]`.
pub struct FlockingTrajectory {
    pub dim: usize,
    pub dt: f64,
    pub times: Vec<f64>,
    pub positions: Vec<Buffer>,
    pub velocities: Vec<Buffer>,
}

impl FlockingTrajectory {
    pub fn time_index(&self, t: f64) -> Result<usize> {
        self.times
            .iter()
            .position(|&s| (s - t).abs() < 1e-9)
            .ok_or_else(|| Error::Invalid(format!("time {} is not on the stored grid", t)))
    }
}

/// Pairwise alignment force F_i = (1/n) sum_j phi(|x_i - x_j|)(v_j - v_i).
fn flocking_force(spec: &FlockingSpec, pos: &Buffer, vel: &Buffer, out: &mut Buffer) {
    let (n, d) = (spec.n_particles, spec.dim);
    let c = influence_coeff(spec.dim, spec.alpha);
    let expo = -(d as f64 + spec.alpha);
    out.data.fill(0.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut r2 = 0.0;
            for k in 0..d {
                let dx = pos.data[i * d + k] - pos.data[j * d + k];
                r2 += dx * dx;
            }
            let phi = c * r2.sqrt().max(spec.r_min).powf(expo);
            for k in 0..d {
                let dv = vel.data[j * d + k] - vel.data[i * d + k];
                out.data[i * d + k] += phi * dv;
                out.data[j * d + k] -= phi * dv;
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    for v in out.data.iter_mut() {
        *v *= inv_n;
    }
}

/// Compactly supported initial ensemble: positions from the cosine bump per
/// axis, velocities set by the smooth profile v_k(x) = -s sin(2 pi x_k / 3)
/// with s = 1/2 in 1D and 1/(2 sqrt(2)) in 2D and above.
pub fn flocking_initial_state(spec: &FlockingSpec, stream: &mut Stream) -> (Buffer, Buffer) {
    let (n, d) = (spec.n_particles, spec.dim);
    let scale = if d == 1 { 0.5 } else { 0.5 / (d as f64).sqrt() };
    let mut pos = Buffer::zeros(&[n, d]);
    let mut vel = Buffer::zeros(&[n, d]);
    for i in 0..n {
        for k in 0..d {
            let x = cosine_bump_inverse_cdf(rand::Rng::gen(stream));
            pos.data[i * d + k] = x;
            vel.data[i * d + k] = -scale * (2.0 * PI * x / 3.0).sin();
        }
    }
    (pos, vel)
}

/// Velocity-Verlet integration of the flocking ODE. The velocity-dependent
/// force at the new time is evaluated at the explicit predictor
/// v + a dt; pairwise antisymmetry keeps total momentum exact either way.
pub fn simulate_flocking(
    spec: &FlockingSpec,
    dt: f64,
    horizon: f64,
    keep_times: Option<&[f64]>,
    seed: u64,
) -> Result<FlockingTrajectory> {
    if spec.n_particles == 0 || dt <= 0.0 {
        return Err(Error::Invalid("need particles and dt > 0".into()));
    }
    if !(spec.alpha > 0.0 && spec.alpha < 2.0) {
        return Err(Error::Invalid(format!(
            "influence exponent {} outside (0, 2)",
            spec.alpha
        )));
    }
    let n_steps = (horizon / dt).round() as usize;
    if (n_steps as f64 * dt - horizon).abs() > 1e-9 {
        return Err(Error::Invalid("horizon must be a multiple of dt".into()));
    }
    let grid: Vec<f64> = (0..=n_steps).map(|i| i as f64 * dt).collect();
    let keep: Vec<usize> = match keep_times {
        None => (0..=n_steps).collect(),
        Some(ts) => ts
            .iter()
            .map(|&t| {
                grid.iter()
                    .position(|&s| (s - t).abs() < 1e-9)
                    .ok_or_else(|| Error::Invalid(format!("time {} off the step grid", t)))
            })
            .collect::<Result<_>>()?,
    };

    let mut stream = rng::seeded(seed);
    let (mut pos, mut vel) = flocking_initial_state(spec, &mut stream);
    let (n, d) = (spec.n_particles, spec.dim);
    let mut acc = Buffer::zeros(&[n, d]);
    let mut acc_next = Buffer::zeros(&[n, d]);
    let mut vel_pred = Buffer::zeros(&[n, d]);
    flocking_force(spec, &pos, &vel, &mut acc);

    let mut positions = Vec::with_capacity(keep.len());
    let mut velocities = Vec::with_capacity(keep.len());
    let store = |step: usize, pos: &Buffer, vel: &Buffer, ps: &mut Vec<Buffer>, vs: &mut Vec<Buffer>| {
        for (k, &ki) in keep.iter().enumerate() {
            if ki == step && ps.len() == k {
                ps.push(pos.clone());
                vs.push(vel.clone());
            }
        }
    };
    store(0, &pos, &vel, &mut positions, &mut velocities);

    for step in 0..n_steps {
        for i in 0..n * d {
            pos.data[i] += vel.data[i] * dt + 0.5 * acc.data[i] * dt * dt;
            vel_pred.data[i] = vel.data[i] + acc.data[i] * dt;
        }
        flocking_force(spec, &pos, &vel_pred, &mut acc_next);
        for i in 0..n * d {
            vel.data[i] += 0.5 * (acc.data[i] + acc_next.data[i]) * dt;
        }
        std::mem::swap(&mut acc, &mut acc_next);
        store(step + 1, &pos, &vel, &mut positions, &mut velocities);
    }

    Ok(FlockingTrajectory {
        dim: d,
        dt,
        times: keep.iter().map(|&k| grid[k]).collect(),
        positions,
        velocities,
    })
}
