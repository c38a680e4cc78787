//! Feed-forward networks and the Adam optimizer.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::buffer::Buffer;
use crate::error::{Error, Result};
use crate::tape::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    LeakyRelu(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OutputActivation {
    Identity,
    Softplus,
}

/// Architecture of a fully-connected network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub activation: Activation,
    /// Identity shortcuts skipping one hidden layer (requires equal widths).
    pub residual: bool,
    pub output_activation: OutputActivation,
}

impl MlpSpec {
    pub fn tanh(input: usize, hidden: &[usize], output: usize) -> Self {
        MlpSpec {
            input,
            hidden: hidden.to_vec(),
            output,
            activation: Activation::Tanh,
            residual: false,
            output_activation: OutputActivation::Identity,
        }
    }

    pub fn leaky_relu(input: usize, hidden: &[usize], output: usize) -> Self {
        MlpSpec {
            input,
            hidden: hidden.to_vec(),
            output,
            activation: Activation::LeakyRelu(0.2),
            residual: false,
            output_activation: OutputActivation::Identity,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.hidden.iter().any(|&w| w == 0) || self.input == 0 || self.output == 0 {
            return Err(Error::Invalid(format!("mlp widths must be positive: {:?}", self)));
        }
        if self.residual {
            for w in self.hidden.windows(2) {
                if w[0] != w[1] {
                    return Err(Error::Invalid(
                        "residual shortcuts require equal hidden widths".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut v = vec![self.input];
        v.extend_from_slice(&self.hidden);
        v.push(self.output);
        v
    }
}

/// Trained state of an MLP: one weight matrix `[fan_in, fan_out]` and one
/// bias vector per layer.
#[derive(Debug, Clone)]
pub struct MlpParams {
    pub spec: MlpSpec,
    pub weights: Vec<Buffer>,
    pub biases: Vec<Buffer>,
}

impl MlpParams {
    /// Uniform Xavier weights on ±sqrt(6/(fan_in+fan_out)), zero biases.
    pub fn init(spec: &MlpSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let widths = spec.widths();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            weights.push(Buffer::new(vec![fan_in, fan_out], data));
            biases.push(Buffer::zeros(&[fan_out]));
        }
        Ok(MlpParams {
            spec: spec.clone(),
            weights,
            biases,
        })
    }

    /// All-zero parameters (mainly for tests).
    pub fn zeros(spec: &MlpSpec) -> Self {
        let widths = spec.widths();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in widths.windows(2) {
            weights.push(Buffer::zeros(&[w[0], w[1]]));
            biases.push(Buffer::zeros(&[w[1]]));
        }
        MlpParams {
            spec: spec.clone(),
            weights,
            biases,
        }
    }

    /// Record the parameters as differentiable leaves on a tape.
    pub fn leaf_on(&self, tape: &Tape) -> MlpVars {
        MlpVars {
            spec: self.spec.clone(),
            weights: self.weights.iter().map(|b| tape.leaf(b.clone())).collect(),
            biases: self.biases.iter().map(|b| tape.leaf(b.clone())).collect(),
        }
    }

    /// Record the parameters as constants (no gradient flow).
    pub fn constant_on(&self, tape: &Tape) -> MlpVars {
        MlpVars {
            spec: self.spec.clone(),
            weights: self
                .weights
                .iter()
                .map(|b| tape.constant(b.clone()))
                .collect(),
            biases: self
                .biases
                .iter()
                .map(|b| tape.constant(b.clone()))
                .collect(),
        }
    }

    /// Interleaved parameter blocks (w1, b1, w2, b2, ...), mutable.
    pub fn blocks_mut(&mut self) -> Vec<&mut Buffer> {
        let mut out: Vec<&mut Buffer> = Vec::new();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out
    }

    pub fn block_shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(self.biases.iter()) {
            out.push(w.shape.clone());
            out.push(b.shape.clone());
        }
        out
    }

    /// Binary checkpoint: header (magic, version, activation tags, widths)
    /// followed by row-major little-endian f64 arrays, per layer weight then
    /// bias.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(b"GSNN");
        buf.extend_from_slice(&1u32.to_le_bytes());
        let (act_tag, act_param) = match self.spec.activation {
            Activation::Tanh => (0u8, 0.0f64),
            Activation::LeakyRelu(s) => (1u8, s),
        };
        buf.push(act_tag);
        buf.extend_from_slice(&act_param.to_le_bytes());
        buf.push(match self.spec.output_activation {
            OutputActivation::Identity => 0u8,
            OutputActivation::Softplus => 1u8,
        });
        buf.push(self.spec.residual as u8);
        let widths = self.spec.widths();
        buf.extend_from_slice(&(widths.len() as u32).to_le_bytes());
        for w in &widths {
            buf.extend_from_slice(&(*w as u32).to_le_bytes());
        }
        for (w, b) in self.weights.iter().zip(self.biases.iter()) {
            for v in w.data.iter().chain(b.data.iter()) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(Error::Invalid("truncated checkpoint".into()));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 4)? != b"GSNN" {
            return Err(Error::Invalid("bad checkpoint magic".into()));
        }
        let _version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        let act_tag = take(&mut pos, 1)?[0];
        let act_param = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let out_tag = take(&mut pos, 1)?[0];
        let residual = take(&mut pos, 1)?[0] != 0;
        let n_widths = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut widths = Vec::with_capacity(n_widths);
        for _ in 0..n_widths {
            widths.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
        }
        if widths.len() < 2 {
            return Err(Error::Invalid("checkpoint needs at least two widths".into()));
        }
        let spec = MlpSpec {
            input: widths[0],
            hidden: widths[1..widths.len() - 1].to_vec(),
            output: *widths.last().unwrap(),
            activation: match act_tag {
                0 => Activation::Tanh,
                1 => Activation::LeakyRelu(act_param),
                t => return Err(Error::Invalid(format!("unknown activation tag {}", t))),
            },
            residual,
            output_activation: match out_tag {
                0 => OutputActivation::Identity,
                1 => OutputActivation::Softplus,
                t => return Err(Error::Invalid(format!("unknown output tag {}", t))),
            },
        };
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let mut read_array = |n: usize| -> Result<Vec<f64>> {
                let mut v = Vec::with_capacity(n);
                for _ in 0..n {
                    v.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
                }
                Ok(v)
            };
            weights.push(Buffer::new(vec![fan_in, fan_out], read_array(fan_in * fan_out)?));
            biases.push(Buffer::new(vec![fan_out], read_array(fan_out)?));
        }
        Ok(MlpParams {
            spec,
            weights,
            biases,
        })
    }
}

/// Tape-recorded view of an MLP for one training step.
pub struct MlpVars {
    pub spec: MlpSpec,
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

impl MlpVars {
    /// Forward pass; `x` is `[batch, input]`.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        assert_eq!(
            *x.shape().last().unwrap(),
            self.spec.input,
            "mlp: input width mismatch, x {:?} vs spec input {}",
            x.shape(),
            self.spec.input
        );
        let n_hidden = self.spec.hidden.len();
        let mut h = x.clone();
        let mut shortcut: Option<Tensor> = None;
        for i in 0..n_hidden {
            let pre = h.matmul(&self.weights[i]).add(&self.biases[i]);
            let mut act = match self.spec.activation {
                Activation::Tanh => pre.tanh(),
                Activation::LeakyRelu(s) => pre.leaky_relu(s),
            };
            if self.spec.residual {
                // shortcut skips one hidden layer: added two activations later
                if let Some(s) = shortcut.take() {
                    act = act.add(&s);
                } else if i + 1 < n_hidden {
                    shortcut = Some(act.clone());
                }
            }
            h = act;
        }
        let out = h
            .matmul(&self.weights[n_hidden])
            .add(&self.biases[n_hidden]);
        match self.spec.output_activation {
            OutputActivation::Identity => out,
            OutputActivation::Softplus => out.softplus(),
        }
    }

    /// Interleaved parameter tensors (w1, b1, w2, b2, ...).
    pub fn blocks(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(self.biases.iter()) {
            out.push(w.clone());
            out.push(b.clone());
        }
        out
    }
}

/// Adam with bias correction over a list of parameter blocks.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Buffer>,
    v: Vec<Buffer>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, shapes: &[Vec<usize>]) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|s| Buffer::zeros(s)).collect(),
            v: shapes.iter().map(|s| Buffer::zeros(s)).collect(),
        }
    }

    /// Reference full-scale settings for sliced-Wasserstein training.
    pub fn for_sw(shapes: &[Vec<usize>]) -> Self {
        Adam::new(1e-4, 0.9, 0.999, shapes)
    }

    /// Reference full-scale settings for WGAN-GP training.
    pub fn for_wgan(shapes: &[Vec<usize>]) -> Self {
        Adam::new(1e-4, 0.5, 0.9, shapes)
    }

    /// One bias-corrected update. `params` and `grads` are aligned with the
    /// shapes given at construction. Fails fast on non-finite gradients.
    pub fn step(&mut self, params: &mut [&mut Buffer], grads: &[Buffer]) -> Result<()> {
        assert_eq!(params.len(), grads.len(), "adam: params/grads mismatch");
        assert_eq!(params.len(), self.m.len(), "adam: state size mismatch");
        for (i, g) in grads.iter().enumerate() {
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient(i));
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert_eq!(p.shape, g.shape, "adam: block shape mismatch");
            for k in 0..g.data.len() {
                let gk = g.data[k];
                m.data[k] = self.beta1 * m.data[k] + (1.0 - self.beta1) * gk;
                v.data[k] = self.beta2 * v.data[k] + (1.0 - self.beta2) * gk * gk;
                let m_hat = m.data[k] / bc1;
                let v_hat = v.data[k] / bc2;
                p.data[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn xavier_biases_zero_and_bounded() {
        let spec = MlpSpec::tanh(128, &[128], 128);
        let p = MlpParams::init(&spec, &mut rng::seeded(7)).unwrap();
        let bound = (6.0 / 256.0_f64).sqrt();
        for w in &p.weights {
            assert!(w.data.iter().all(|x| x.abs() <= bound));
        }
        for b in &p.biases {
            assert!(b.data.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn init_deterministic_per_seed() {
        let spec = MlpSpec::tanh(4, &[8, 8], 2);
        let a = MlpParams::init(&spec, &mut rng::seeded(42)).unwrap();
        let b = MlpParams::init(&spec, &mut rng::seeded(42)).unwrap();
        for (wa, wb) in a.weights.iter().zip(b.weights.iter()) {
            assert_eq!(wa.data, wb.data);
        }
    }

    #[test]
    fn zero_net_outputs_zero() {
        let spec = MlpSpec::tanh(3, &[5, 5], 2);
        let p = MlpParams::zeros(&spec);
        let tape = Tape::new();
        let vars = p.constant_on(&tape);
        let x = tape.constant(Buffer::new(vec![2, 3], vec![1.0; 6]));
        let y = vars.forward(&x);
        assert!(y.value().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_linear_layer_is_affine() {
        let spec = MlpSpec::tanh(2, &[], 1);
        let mut p = MlpParams::zeros(&spec);
        p.weights[0] = Buffer::new(vec![2, 1], vec![2.0, 3.0]);
        p.biases[0] = Buffer::new(vec![1], vec![0.5]);
        let tape = Tape::new();
        let vars = p.constant_on(&tape);
        let x = tape.constant(Buffer::new(vec![1, 2], vec![1.0, 1.0]));
        assert_eq!(vars.forward(&x).value().data, vec![5.5]);
    }

    #[test]
    fn softplus_head_at_zero_is_ln2() {
        let mut spec = MlpSpec::tanh(1, &[], 1);
        spec.output_activation = OutputActivation::Softplus;
        let p = MlpParams::zeros(&spec);
        let tape = Tape::new();
        let vars = p.constant_on(&tape);
        let x = tape.constant(Buffer::new(vec![1, 1], vec![3.0]));
        let y = vars.forward(&x).value();
        assert!((y.data[0] - 2.0_f64.ln()).abs() < 1e-15);
        assert!(y.data[0] > 0.0);
    }

    #[test]
    fn adam_zero_gradient_fixed_point() {
        let mut p = Buffer::new(vec![2], vec![1.0, -1.0]);
        let mut adam = Adam::new(1e-2, 0.9, 0.999, &[vec![2]]);
        let g = Buffer::zeros(&[2]);
        adam.step(&mut [&mut p], std::slice::from_ref(&g)).unwrap();
        assert_eq!(p.data, vec![1.0, -1.0]);
    }

    #[test]
    fn adam_first_step_magnitude_approx_lr() {
        let mut p = Buffer::new(vec![1], vec![0.0]);
        let mut adam = Adam::new(1e-3, 0.9, 0.999, &[vec![1]]);
        let g = Buffer::new(vec![1], vec![0.37]);
        adam.step(&mut [&mut p], std::slice::from_ref(&g)).unwrap();
        assert!((p.data[0].abs() - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        // f(x) = x^2, lr 1e-2, 5000 steps
        let mut p = Buffer::new(vec![1], vec![3.0]);
        let mut adam = Adam::new(1e-2, 0.9, 0.999, &[vec![1]]);
        for _ in 0..5000 {
            let g = Buffer::new(vec![1], vec![2.0 * p.data[0]]);
            adam.step(&mut [&mut p], std::slice::from_ref(&g)).unwrap();
        }
        assert!(p.data[0].abs() < 1e-3, "final x = {}", p.data[0]);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut p = Buffer::new(vec![1], vec![0.0]);
        let mut adam = Adam::new(1e-3, 0.9, 0.999, &[vec![1]]);
        let g = Buffer::new(vec![1], vec![f64::NAN]);
        assert!(adam.step(&mut [&mut p], std::slice::from_ref(&g)).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_bit_exact() {
        let spec = MlpSpec::leaky_relu(3, &[4, 4], 2);
        let p = MlpParams::init(&spec, &mut rng::seeded(11)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        p.save(&path).unwrap();
        let q = MlpParams::load(&path).unwrap();
        assert_eq!(p.spec, q.spec);
        for (a, b) in p.weights.iter().zip(q.weights.iter()) {
            assert_eq!(a.data, b.data);
        }
        for (a, b) in p.biases.iter().zip(q.biases.iter()) {
            assert_eq!(a.data, b.data);
        }
    }
}
