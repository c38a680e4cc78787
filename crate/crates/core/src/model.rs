//! Trainable generative model: initial-state network plus a discretized SDE
//! rollout with parameterized drift and diffusion, recorded on the autodiff
//! tape. With matching parameters and seed, the rollout reproduces
//! `sim::simulate_paths` bit-for-bit because both consume the same per-path
//! substreams and share the step arithmetic.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::buffer::Buffer;
use crate::error::{Error, Result};
use crate::nn::{MlpParams, MlpVars};
use crate::rng::{self, Stream};
use crate::sim::{draw_step_noise, InitialDistribution, ProcessKind};
use crate::tape::{concat, input_gradient, Tape, Tensor};

/// Drift family. Polynomial holds per-dimension coefficients as a
/// `[degree+1, d]` buffer (row k = coefficient of x^k), evaluated in Horner
/// form; the cubic case matches `sim::horner4` bitwise.
#[derive(Clone, Debug)]
pub enum DriftParams {
    Polynomial { coeffs: Buffer },
    Neural(MlpParams),
    /// Scalar potential net; drift is its input gradient.
    Potential(MlpParams),
    /// Two-well 2D potential with four trainable shifts.
    Structured2d { a: Buffer },
}

impl DriftParams {
    pub fn polynomial_zeros(dim: usize) -> Self {
        DriftParams::Polynomial { coeffs: Buffer::zeros(&[4, dim]) }
    }

    pub fn polynomial_filled(dim: usize, v: f64) -> Self {
        DriftParams::Polynomial { coeffs: Buffer::full(&[4, dim], v) }
    }

    pub fn polynomial_from(dim: usize, per_dim: &[f64; 4]) -> Self {
        let mut coeffs = Buffer::zeros(&[4, dim]);
        for k in 0..4 {
            for j in 0..dim {
                coeffs.data[k * dim + j] = per_dim[k];
            }
        }
        DriftParams::Polynomial { coeffs }
    }

    pub fn linear_zeros(dim: usize) -> Self {
        DriftParams::Polynomial { coeffs: Buffer::zeros(&[2, dim]) }
    }

    pub fn structured2d(a: [f64; 4]) -> Self {
        DriftParams::Structured2d { a: Buffer::new(vec![4], a.to_vec()) }
    }

    pub fn structured2d_random(stream: &mut Stream) -> Self {
        let a: Vec<f64> = (0..4).map(|_| rng::normal(stream)).collect();
        DriftParams::Structured2d { a: Buffer::new(vec![4], a) }
    }

    pub fn dim_ok(&self, d: usize) -> bool {
        match self {
            DriftParams::Polynomial { coeffs } => {
                coeffs.shape.len() == 2 && coeffs.shape[0] >= 1 && coeffs.shape[1] == d
            }
            DriftParams::Neural(p) => p.spec.input == d && p.spec.output == d,
            DriftParams::Potential(p) => p.spec.input == d && p.spec.output == 1,
            DriftParams::Structured2d { .. } => d == 2,
        }
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Buffer> {
        match self {
            DriftParams::Polynomial { coeffs } => vec![coeffs],
            DriftParams::Neural(p) | DriftParams::Potential(p) => p.blocks_mut(),
            DriftParams::Structured2d { a } => vec![a],
        }
    }

    pub fn leaf_on(&self, tape: &Tape) -> DriftVars {
        match self {
            DriftParams::Polynomial { coeffs } => {
                DriftVars::Polynomial { coeffs: tape.leaf(coeffs.clone()) }
            }
            DriftParams::Neural(p) => DriftVars::Neural(p.leaf_on(tape)),
            DriftParams::Potential(p) => DriftVars::Potential(p.leaf_on(tape)),
            DriftParams::Structured2d { a } => {
                DriftVars::Structured2d { a: tape.leaf(a.clone()) }
            }
        }
    }

    pub fn constant_on(&self, tape: &Tape) -> DriftVars {
        match self {
            DriftParams::Polynomial { coeffs } => {
                DriftVars::Polynomial { coeffs: tape.constant(coeffs.clone()) }
            }
            DriftParams::Neural(p) => DriftVars::Neural(p.constant_on(tape)),
            DriftParams::Potential(p) => DriftVars::Potential(p.constant_on(tape)),
            DriftParams::Structured2d { a } => {
                DriftVars::Structured2d { a: tape.constant(a.clone()) }
            }
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            DriftParams::Polynomial { .. } => "polynomial",
            DriftParams::Neural(_) => "neural",
            DriftParams::Potential(_) => "potential",
            DriftParams::Structured2d { .. } => "structured-2d",
        }
    }
}

pub enum DriftVars {
    Polynomial { coeffs: Tensor },
    Neural(MlpVars),
    Potential(MlpVars),
    Structured2d { a: Tensor },
}

impl DriftVars {
    pub fn params(&self) -> Vec<Tensor> {
        match self {
            DriftVars::Polynomial { coeffs } => vec![coeffs.clone()],
            DriftVars::Neural(v) | DriftVars::Potential(v) => v.blocks(),
            DriftVars::Structured2d { a } => vec![a.clone()],
        }
    }
}

/// Drift vectors for a `[n, d]` state batch.
pub fn drift_eval(vars: &DriftVars, x: &Tensor) -> Tensor {
    match vars {
        DriftVars::Polynomial { coeffs } => {
            // Horner order matches sim::horner4 so values agree bitwise.
            let rows = coeffs.shape[0];
            let c = |k: usize| coeffs.slice(0, k, k + 1);
            let mut acc = c(rows - 1);
            for k in (0..rows - 1).rev() {
                acc = acc.mul(x).add(&c(k));
            }
            acc
        }
        DriftVars::Neural(v) => v.forward(x),
        DriftVars::Potential(v) => {
            let phi = v.forward(x).sum_all();
            input_gradient(&phi, x)
        }
        DriftVars::Structured2d { a } => {
            let (x1, x2) = (x.col(0), x.col(1));
            let u0 = x1.add(&a.slice(0, 0, 1));
            let v0 = x2.add(&a.slice(0, 1, 2));
            let u1 = x1.add(&a.slice(0, 2, 3));
            let v1 = x2.add(&a.slice(0, 3, 4));
            let mu1 = u0.mul(&v0.square()).add(&u1.mul(&v1.square())).scale(-2.0);
            let mu2 = u0.square().mul(&v0).add(&u1.square().mul(&v1)).scale(-2.0);
            concat(&[&mu1, &mu2], 1)
        }
    }
}

/// Diffusion family. Raw entries are unconstrained; diagonal positions are
/// rectified with softplus on evaluation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum DiffusionParams {
    /// Diagonal matrix, raw `[d]`.
    Diagonal { raw: Buffer },
    /// Lower-triangular 2x2, raw `[3]` ordered (0,0), (1,0), (1,1).
    LowerTri2 { raw: Buffer },
    /// Lower-bidiagonal d x d, raw `[2d-1]`: d diagonal then d-1 subdiagonal.
    Banded { raw: Buffer },
}

impl DiffusionParams {
    pub fn diagonal_zeros(dim: usize) -> Self {
        DiffusionParams::Diagonal { raw: Buffer::zeros(&[dim]) }
    }

    pub fn lower_tri2_zeros() -> Self {
        DiffusionParams::LowerTri2 { raw: Buffer::zeros(&[3]) }
    }

    pub fn banded_zeros(dim: usize) -> Self {
        assert!(dim >= 2);
        DiffusionParams::Banded { raw: Buffer::zeros(&[2 * dim - 1]) }
    }

    pub fn dim(&self) -> usize {
        match self {
            DiffusionParams::Diagonal { raw } => raw.shape[0],
            DiffusionParams::LowerTri2 { .. } => 2,
            DiffusionParams::Banded { raw } => (raw.shape[0] + 1) / 2,
        }
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Buffer> {
        match self {
            DiffusionParams::Diagonal { raw }
            | DiffusionParams::LowerTri2 { raw }
            | DiffusionParams::Banded { raw } => vec![raw],
        }
    }

    pub fn leaf_on(&self, tape: &Tape) -> DiffusionVars {
        let raw = match self {
            DiffusionParams::Diagonal { raw }
            | DiffusionParams::LowerTri2 { raw }
            | DiffusionParams::Banded { raw } => tape.leaf(raw.clone()),
        };
        DiffusionVars { kind: self.kind(), dim: self.dim(), raw }
    }

    pub fn constant_on(&self, tape: &Tape) -> DiffusionVars {
        let raw = match self {
            DiffusionParams::Diagonal { raw }
            | DiffusionParams::LowerTri2 { raw }
            | DiffusionParams::Banded { raw } => tape.constant(raw.clone()),
        };
        DiffusionVars { kind: self.kind(), dim: self.dim(), raw }
    }

    fn kind(&self) -> DiffusionKind {
        match self {
            DiffusionParams::Diagonal { .. } => DiffusionKind::Diagonal,
            DiffusionParams::LowerTri2 { .. } => DiffusionKind::LowerTri2,
            DiffusionParams::Banded { .. } => DiffusionKind::Banded,
        }
    }

    /// Rectified matrix as plain values (scratch tape evaluation).
    pub fn matrix(&self) -> Buffer {
        let tape = Tape::new();
        let vars = self.leaf_on(&tape);
        diffusion_eval(&tape, &vars).value()
    }

    pub fn family(&self) -> &'static str {
        match self {
            DiffusionParams::Diagonal { .. } => "diagonal",
            DiffusionParams::LowerTri2 { .. } => "lower-tri-2x2",
            DiffusionParams::Banded { .. } => "banded",
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
pub enum DiffusionKind {
    Diagonal,
    LowerTri2,
    Banded,
}

pub struct DiffusionVars {
    kind: DiffusionKind,
    dim: usize,
    pub raw: Tensor,
}

/// Assemble the rectified `[d, d]` diffusion matrix on the tape.
pub fn diffusion_eval(tape: &Tape, vars: &DiffusionVars) -> Tensor {
    let d = vars.dim;
    let basis = |i: usize, j: usize| {
        let mut e = Buffer::zeros(&[d, d]);
        e.data[i * d + j] = 1.0;
        tape.constant(e)
    };
    let place = |entry: &Tensor, i: usize, j: usize| {
        entry.broadcast_to(&[d, d]).mul(&basis(i, j))
    };
    match vars.kind {
        DiffusionKind::Diagonal => {
            let mut eye = Buffer::zeros(&[d, d]);
            for i in 0..d {
                eye.data[i * d + i] = 1.0;
            }
            vars.raw.softplus().broadcast_to(&[d, d]).mul(&tape.constant(eye))
        }
        DiffusionKind::LowerTri2 => {
            let e = |k: usize| vars.raw.slice(0, k, k + 1);
            place(&e(0).softplus(), 0, 0)
                .add(&place(&e(1), 1, 0))
                .add(&place(&e(2).softplus(), 1, 1))
        }
        DiffusionKind::Banded => {
            let e = |k: usize| vars.raw.slice(0, k, k + 1);
            let mut m = place(&e(0).softplus(), 0, 0);
            for i in 1..d {
                m = m.add(&place(&e(i).softplus(), i, i));
            }
            for i in 1..d {
                m = m.add(&place(&e(d + i - 1), i, i - 1));
            }
            m
        }
    }
}

/// Source of the generated ensemble's initial states.
#[derive(Clone, Debug)]
pub enum InitModel {
    /// Push per-path noise through a trainable network G.
    Network { params: MlpParams, noise: NoiseSource },
    /// Sample a fixed closed-form law (same stream order as the simulator).
    Distribution(InitialDistribution),
    /// Start from given samples (the start-from-data variant).
    FromData(Buffer),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum NoiseSource {
    Gaussian,
    /// Uniform on (-1, 1) per component.
    Uniform,
}

pub struct GenerativeModel {
    pub dim: usize,
    pub init: InitModel,
    pub drift: DriftParams,
    pub diffusion: DiffusionParams,
    pub process: ProcessKind,
    pub dt: f64,
}

pub struct ModelVars {
    pub init: Option<MlpVars>,
    pub drift: DriftVars,
    pub diffusion: DiffusionVars,
    /// When false, drift/diffusion entered the tape as constants and are
    /// excluded from the trainable set (only the init network trains).
    pub train_dynamics: bool,
}

impl ModelVars {
    /// Trainable leaves in the same order as the matching `*_blocks_mut` call.
    pub fn params(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        if let Some(g) = &self.init {
            out.extend(g.blocks());
        }
        if self.train_dynamics {
            out.extend(self.drift.params());
            out.push(self.diffusion.raw.clone());
        }
        out
    }
}

impl GenerativeModel {
    pub fn validate(&self) -> Result<()> {
        if !self.drift.dim_ok(self.dim) {
            return Err(Error::Invalid("drift family does not match dimension".into()));
        }
        if self.diffusion.dim() != self.dim {
            return Err(Error::Invalid("diffusion family does not match dimension".into()));
        }
        if self.dt <= 0.0 {
            return Err(Error::Invalid("dt must be positive".into()));
        }
        if let InitModel::Network { params, .. } = &self.init {
            if params.spec.input != self.dim || params.spec.output != self.dim {
                return Err(Error::Invalid("init network must map d -> d".into()));
            }
        }
        if let ProcessKind::Levy { alpha } = self.process {
            if !(alpha > 0.0 && alpha <= 2.0) {
                return Err(Error::Invalid(format!("alpha {} outside (0, 2]", alpha)));
            }
        }
        Ok(())
    }

    pub fn leaf_on(&self, tape: &Tape) -> ModelVars {
        self.vars_on(tape, true)
    }

    /// `train_dynamics = false` freezes drift and diffusion (tape constants);
    /// only the init network remains trainable.
    pub fn vars_on(&self, tape: &Tape, train_dynamics: bool) -> ModelVars {
        ModelVars {
            init: match &self.init {
                InitModel::Network { params, .. } => Some(params.leaf_on(tape)),
                _ => None,
            },
            drift: if train_dynamics {
                self.drift.leaf_on(tape)
            } else {
                self.drift.constant_on(tape)
            },
            diffusion: if train_dynamics {
                self.diffusion.leaf_on(tape)
            } else {
                self.diffusion.constant_on(tape)
            },
            train_dynamics,
        }
    }

    /// Raw parameter buffers in a stable order (init net, drift, diffusion).
    pub fn blocks_mut(&mut self) -> Vec<&mut Buffer> {
        self.trainable_blocks_mut(true)
    }

    /// Buffers matching `vars_on(_, train_dynamics).params()` one-to-one.
    pub fn trainable_blocks_mut(&mut self, train_dynamics: bool) -> Vec<&mut Buffer> {
        let mut out = Vec::new();
        if let InitModel::Network { params, .. } = &mut self.init {
            out.extend(params.blocks_mut());
        }
        if train_dynamics {
            out.extend(self.drift.blocks_mut());
            out.extend(self.diffusion.blocks_mut());
        }
        out
    }

    pub fn param_norm(&mut self) -> f64 {
        let mut s = 0.0;
        for b in self.blocks_mut() {
            s += b.data.iter().map(|v| v * v).sum::<f64>();
        }
        s.sqrt()
    }

    /// Inferred-model summary: families, raw values, rectified diffusion.
    pub fn export_json(&self) -> serde_json::Value {
        let drift_raw: Vec<Vec<f64>> = match &self.drift {
            DriftParams::Polynomial { coeffs } => vec![coeffs.data.clone()],
            DriftParams::Structured2d { a } => vec![a.data.clone()],
            DriftParams::Neural(p) | DriftParams::Potential(p) => {
                let n: usize = p
                    .weights
                    .iter()
                    .chain(p.biases.iter())
                    .map(|b| b.data.len())
                    .sum();
                vec![vec![n as f64]]
            }
        };
        let sigma = self.diffusion.matrix();
        json!({
            "dim": self.dim,
            "process": match self.process {
                ProcessKind::Brownian => json!("brownian"),
                ProcessKind::Levy { alpha } => json!({"levy_alpha": alpha}),
            },
            "dt": self.dt,
            "drift_family": self.drift.family(),
            "drift_values": drift_raw,
            "diffusion_family": self.diffusion.family(),
            "diffusion_raw": match &self.diffusion {
                DiffusionParams::Diagonal { raw }
                | DiffusionParams::LowerTri2 { raw }
                | DiffusionParams::Banded { raw } => raw.data.clone(),
            },
            "diffusion_matrix": (0..self.dim)
                .map(|i| sigma.data[i * self.dim..(i + 1) * self.dim].to_vec())
                .collect::<Vec<_>>(),
        })
    }
}

/// Initial generated batch (`generate_initial`): noise through G, a sampled
/// law, or fixed data. Noise comes from the per-path substreams so the
/// Distribution variant consumes streams exactly like the simulator.
pub fn generate_initial(
    tape: &Tape,
    model: &GenerativeModel,
    vars: &ModelVars,
    streams: &mut [Stream],
) -> Result<Tensor> {
    let (n, d) = (streams.len(), model.dim);
    match &model.init {
        InitModel::Network { noise, .. } => {
            let mut z = Buffer::zeros(&[n, d]);
            for (p, stream) in streams.iter_mut().enumerate() {
                for j in 0..d {
                    z.data[p * d + j] = match noise {
                        NoiseSource::Gaussian => rng::normal(stream),
                        NoiseSource::Uniform => rand::Rng::gen_range(stream, -1.0..1.0),
                    };
                }
            }
            Ok(vars.init.as_ref().unwrap().forward(&tape.constant(z)))
        }
        InitModel::Distribution(law) => {
            law.validate(d)?;
            let mut x0 = Buffer::zeros(&[n, d]);
            for (p, stream) in streams.iter_mut().enumerate() {
                let row = law.sample(d, stream);
                x0.data[p * d..(p + 1) * d].copy_from_slice(&row);
            }
            Ok(tape.constant(x0))
        }
        InitModel::FromData(samples) => {
            if samples.shape != vec![n, d] {
                return Err(Error::Invalid(format!(
                    "start-from-data batch is {:?}, rollout wants [{}, {}]",
                    samples.shape, n, d
                )));
            }
            Ok(tape.constant(samples.clone()))
        }
    }
}

/// Forward-Euler rollout on the tape. Returns the generated snapshots at
/// `times` (sorted, on the dt grid; time 0 allowed). Noise draws are
/// constants — gradients flow only through G, drift, and diffusion.
pub fn rollout(
    tape: &Tape,
    model: &GenerativeModel,
    vars: &ModelVars,
    n_paths: usize,
    times: &[f64],
    seed: u64,
) -> Result<Vec<Tensor>> {
    model.validate()?;
    if n_paths == 0 || times.is_empty() {
        return Err(Error::Invalid("need paths and at least one output time".into()));
    }
    let dt = model.dt;
    let mut keep = Vec::with_capacity(times.len());
    for &t in times {
        let k = (t / dt).round();
        if (k * dt - t).abs() > 1e-9 || k < 0.0 {
            return Err(Error::Invalid(format!("time {} is not a multiple of dt {}", t, dt)));
        }
        keep.push(k as usize);
    }
    if keep.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Invalid("output times must be strictly increasing".into()));
    }
    let n_steps = *keep.last().unwrap();

    let d = model.dim;
    let mut streams: Vec<Stream> =
        (0..n_paths).map(|p| rng::substream(seed, p as u64)).collect();
    let mut x = generate_initial(tape, model, vars, &mut streams)?;

    let sigma = diffusion_eval(tape, &vars.diffusion);
    let c = match model.process {
        ProcessKind::Brownian => dt.sqrt(),
        ProcessKind::Levy { alpha } => dt.powf(1.0 / alpha),
    };
    let sigma_step = sigma.t().scale(c);

    let mut out = Vec::with_capacity(keep.len());
    if keep[0] == 0 {
        out.push(x.clone());
    }
    let mut xi = Buffer::zeros(&[n_paths, d]);
    for step in 0..n_steps {
        draw_step_noise(&mut streams, d, &model.process, &mut xi);
        let mu = drift_eval(&vars.drift, &x);
        x = x.add(&mu.scale(dt)).add(&tape.constant(xi.clone()).matmul(&sigma_step));
        if !x.value().all_finite() {
            return Err(Error::NonFiniteLoss(
                step + 1,
                format!("rollout state went non-finite at step {}", step + 1),
            ));
        }
        if keep.contains(&(step + 1)) {
            out.push(x.clone());
        }
    }
    Ok(out)
}
