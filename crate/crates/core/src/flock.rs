//! Inference machinery for interacting systems: the influence kernel with a
//! trainable exponent, the velocity-surrogate rollout, and the Newton loss
//! tying surrogate accelerations to pairwise alignment forces.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::buffer::Buffer;
use crate::dataset::SnapshotDataset;
use crate::error::{Error, Result};
use crate::losses::{normalize_by_real, select_rows, sliced_w2_sq};
use crate::rng::Stream;
use crate::tape::{concat, directional_derivative, Tape, Tensor};

/// Trainable influence exponent: alpha = 2 sigmoid(beta), so alpha is pinned
/// to (0, 2) and beta = 0 gives alpha = 1.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InfluenceParams {
    pub dim: usize,
    pub beta: Buffer,
    pub r_min: f64,
}

impl InfluenceParams {
    pub fn new(dim: usize, r_min: f64) -> Self {
        InfluenceParams { dim, beta: Buffer::zeros(&[1]), r_min }
    }

    pub fn alpha(&self) -> f64 {
        2.0 / (1.0 + (-self.beta.data[0]).exp())
    }

    pub fn leaf_on(&self, tape: &Tape) -> InfluenceVars {
        InfluenceVars {
            dim: self.dim,
            beta: tape.leaf(self.beta.clone()),
            r_min: self.r_min,
        }
    }
}

pub struct InfluenceVars {
    pub dim: usize,
    pub beta: Tensor,
    pub r_min: f64,
}

impl InfluenceVars {
    pub fn alpha(&self) -> Tensor {
        self.beta.sigmoid().scale(2.0)
    }

    /// ln c_{d,alpha} with alpha on the tape; the two gamma factors are
    /// differentiable through ln-gamma.
    fn ln_coeff(&self, alpha: &Tensor) -> Tensor {
        let d = self.dim as f64;
        alpha
            .ln()
            .add(&alpha.add_scalar(d).scale(0.5).ln_gamma())
            .add_scalar(-(2.0f64.ln()))
            .add(&alpha.add_scalar(d / 2.0).scale(-PI.ln()))
            .sub(&alpha.scale(-0.5).add_scalar(1.0).ln_gamma())
    }

    /// phi(max(r, r_min)) elementwise over a tensor of distances,
    /// differentiable with respect to beta.
    pub fn phi(&self, r: &Tensor) -> Tensor {
        let alpha = self.alpha();
        let ln_c = self.ln_coeff(&alpha);
        let expo = alpha.add_scalar(self.dim as f64);
        ln_c.sub(&r.clamp_min(self.r_min).ln().mul(&expo)).exp()
    }
}

/// Deterministic surrogate rollout (Eq.-free ODE step): X <- X + mu(X, t) dt.
/// Returns states at every step, 0..=n_steps, starting from absolute time
/// `t0` (nonzero for the start-from-data variant). `mu` maps `[n, d+1]`
/// (state and time column) to `[n, d]` velocities.
pub fn surrogate_rollout<F: Fn(&Tensor) -> Tensor>(
    mu: &F,
    x0: &Tensor,
    t0: f64,
    dt: f64,
    n_steps: usize,
) -> Vec<Tensor> {
    let n = x0.shape[0];
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut x = x0.clone();
    states.push(x.clone());
    for i in 0..n_steps {
        let t = x.tape.constant(Buffer::full(&[n, 1], t0 + i as f64 * dt));
        let v = mu(&concat(&[&x, &t], 1));
        x = x.add(&v.scale(dt));
        states.push(x.clone());
    }
    states
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct NewtonLossConfig {
    /// Probe particles whose forces are evaluated.
    pub k_probes: usize,
    /// Auxiliary particles the forces are summed over.
    pub m_aux: usize,
    /// Random time steps per loss evaluation.
    pub b_steps: usize,
}

/// Newton-consistency loss: mean over sampled steps and probes of
/// || F - (d mu/dt + (mu . grad) mu) ||^2, with F the pairwise alignment
/// force averaged over the auxiliary particles.
pub fn newton_loss<F: Fn(&Tensor) -> Tensor>(
    mu: &F,
    states: &[Tensor],
    t0: f64,
    dt: f64,
    influence: &InfluenceVars,
    cfg: &NewtonLossConfig,
    stream: &mut Stream,
) -> Result<Tensor> {
    if states.is_empty() {
        return Err(Error::Invalid("newton loss needs rollout states".into()));
    }
    let n = states[0].shape[0];
    let d = states[0].shape[1];
    let (k, m) = (cfg.k_probes, cfg.m_aux);
    if k == 0 || m == 0 || k + m > n {
        return Err(Error::Invalid(format!(
            "need K + M <= batch ({} + {} vs {})",
            k, m, n
        )));
    }
    if cfg.b_steps == 0 || cfg.b_steps > states.len() {
        return Err(Error::Invalid("B outside 1..=steps".into()));
    }
    let tape = &states[0].tape;
    let picked = rand::seq::index::sample(stream, states.len(), cfg.b_steps).into_vec();

    let mut total: Option<Tensor> = None;
    for &i in &picked {
        let t = t0 + i as f64 * dt;
        let xs = states[i].slice(0, 0, k);
        let ys = states[i].slice(0, k, k + m);

        let tk = tape.constant(Buffer::full(&[k, 1], t));
        let tm = tape.constant(Buffer::full(&[m, 1], t));
        let inp_x = concat(&[&xs, &tk], 1);
        let mu_x = mu(&inp_x);
        let mu_y = mu(&concat(&[&ys, &tm], 1));

        // F row per probe: (1/M) sum_m phi(|x_k - y_m|) (mu(y_m) - mu(x_k)).
        let mut force_rows = Vec::with_capacity(k);
        for kk in 0..k {
            let xk = xs.slice(0, kk, kk + 1);
            let diff = ys.sub(&xk);
            let r = diff.square().sum_axis(1).sqrt();
            let phi = influence.phi(&r).reshape(&[m, 1]);
            let dv = mu_y.sub(&mu_x.slice(0, kk, kk + 1));
            let f = phi.mul(&dv).sum_axis(0).scale(1.0 / m as f64);
            force_rows.push(f.reshape(&[1, d]));
        }
        let refs: Vec<&Tensor> = force_rows.iter().collect();
        let force = concat(&refs, 0);

        // Material derivative along (mu, 1) in the (x, t) input space.
        let ones = tape.constant(Buffer::full(&[k, 1], 1.0));
        let dir = concat(&[&mu_x, &ones], 1);
        let accel = directional_derivative(&mu_x, &inp_x, &dir);

        let sq = force.sub(&accel).square().sum_all();
        total = Some(match total {
            Some(acc) => acc.add(&sq),
            None => sq,
        });
    }
    Ok(total.unwrap().scale(1.0 / (cfg.b_steps * k) as f64))
}

/// Total flocking objective (distribution term averaged over snapshots):
/// eta * L_newton + (1/n) sum_i d(fake_i, real_i), with per-snapshot
/// normalization by the real moments. Returns the total plus the two logged
/// parts.
#[allow(clippy::too_many_arguments)]
pub fn flocking_total_loss<F: Fn(&Tensor) -> Tensor>(
    mu: &F,
    states: &[Tensor],
    t0: f64,
    dt: f64,
    influence: &InfluenceVars,
    cfg: &NewtonLossConfig,
    dataset: &SnapshotDataset,
    eta: f64,
    projections: usize,
    stream: &mut Stream,
) -> Result<(Tensor, f64, f64)> {
    let newton = newton_loss(mu, states, t0, dt, influence, cfg, stream)?;
    let n_snap = dataset.times.len();
    let mut dist: Option<Tensor> = None;
    for (i, &t) in dataset.times.iter().enumerate() {
        let step = ((t - t0) / dt).round() as usize;
        if (t0 + (step as f64) * dt - t).abs() > 1e-9 || step >= states.len() {
            return Err(Error::Invalid(format!("snapshot time {} outside rollout", t)));
        }
        let real = &dataset.samples[i];
        let count = real.shape[0];
        let fake_all = &states[step];
        if count > fake_all.shape[0] {
            return Err(Error::Invalid("snapshot larger than generated batch".into()));
        }
        let rows = rand::seq::index::sample(stream, fake_all.shape[0], count).into_vec();
        let fake = select_rows(fake_all, &rows);
        let (fake_n, real_n) = normalize_by_real(&fake, real);
        let real_t = fake.tape.constant(real_n);
        let w = sliced_w2_sq(&fake_n, &real_t, projections, stream)?;
        dist = Some(match dist {
            Some(acc) => acc.add(&w),
            None => w,
        });
    }
    let dist = dist
        .ok_or_else(|| Error::Invalid("dataset has no snapshots".into()))?
        .scale(1.0 / n_snap as f64);
    let total = newton.scale(eta).add(&dist);
    let newton_val = newton.value().data[0];
    let dist_val = dist.value().data[0];
    Ok((total, newton_val, dist_val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{MlpParams, MlpSpec};
    use crate::rng;
    use crate::sim;

    #[test]
    fn influence_matches_plain_evaluation_and_pins_alpha() {
        let params = InfluenceParams::new(1, 0.01);
        assert_eq!(params.alpha(), 1.0); // beta = 0
        let tape = Tape::new();
        let vars = params.leaf_on(&tape);
        let rs = vec![0.005, 0.01, 0.5, 1.0, 2.0];
        let r = tape.constant(Buffer::new(vec![5], rs.clone()));
        let phi = vars.phi(&r).value();
        for (i, &rv) in rs.iter().enumerate() {
            let expect = sim::influence_phi(1, 1.0, 0.01, rv);
            assert!(
                (phi.data[i] - expect).abs() < 1e-12 * expect.max(1.0),
                "r = {}: {} vs {}",
                rv,
                phi.data[i],
                expect
            );
        }
        // Plateau below r_min.
        assert_eq!(phi.data[0], phi.data[1]);
    }

    #[test]
    fn influence_gradient_wrt_beta_matches_fd() {
        let eval = |beta: f64, grad: bool| -> (f64, f64) {
            let tape = Tape::new();
            let mut p = InfluenceParams::new(2, 0.01);
            p.beta.data[0] = beta;
            let vars = p.leaf_on(&tape);
            let r = tape.constant(Buffer::new(vec![3], vec![0.4, 1.1, 2.5]));
            let y = vars.phi(&r).sum_all();
            let v = y.value().data[0];
            if grad {
                (v, tape.backward(&y).wrt_buffer(&vars.beta).data[0])
            } else {
                (v, 0.0)
            }
        };
        for &b in &[-0.6, 0.0, 0.9] {
            let (_, g) = eval(b, true);
            let h = 1e-6;
            let fd = (eval(b + h, false).0 - eval(b - h, false).0) / (2.0 * h);
            assert!(
                (g - fd).abs() < 1e-6 * fd.abs().max(1.0),
                "beta {}: {} vs {}",
                b,
                g,
                fd
            );
        }
    }

    #[test]
    fn constant_field_gives_zero_loss() {
        let tape = Tape::new();
        let mu = |inp: &Tensor| {
            let n = inp.shape[0];
            inp.tape.constant(Buffer::full(&[n, 2], 0.37))
        };
        let x0 = tape.constant(Buffer::new(
            vec![12, 2],
            (0..24).map(|i| i as f64 * 0.1 - 1.0).collect(),
        ));
        let states = surrogate_rollout(&mu, &x0, 0.0, 0.01, 5);
        let inf = InfluenceParams::new(2, 0.01).leaf_on(&tape);
        let cfg = NewtonLossConfig { k_probes: 3, m_aux: 8, b_steps: 3 };
        let loss = newton_loss(&mu, &states, 0.0, 0.01, &inf, &cfg, &mut rng::seeded(1)).unwrap();
        assert!(loss.value().data[0].abs() < 1e-12);
    }

    #[test]
    fn uniform_acceleration_gives_loss_d() {
        // mu(x, t) = t in every component: F = 0, a = 1 per component.
        let tape = Tape::new();
        let d = 2;
        let mu = |inp: &Tensor| {
            let n = inp.shape[0];
            inp.col(d).broadcast_to(&[n, d])
        };
        let x0 = tape.constant(Buffer::new(
            vec![10, 2],
            (0..20).map(|i| (i as f64 * 0.73).sin()).collect(),
        ));
        let states = surrogate_rollout(&mu, &x0, 0.0, 0.01, 4);
        let inf = InfluenceParams::new(2, 0.01).leaf_on(&tape);
        let cfg = NewtonLossConfig { k_probes: 2, m_aux: 6, b_steps: 2 };
        let loss = newton_loss(&mu, &states, 0.0, 0.01, &inf, &cfg, &mut rng::seeded(2)).unwrap();
        assert!((loss.value().data[0] - d as f64).abs() < 1e-10);
    }

    #[test]
    fn newton_loss_matches_fd_material_derivative() {
        // Random small net; recompute the loss with accelerations obtained by
        // central differences of mu along (mu, 1).
        let d = 1;
        let spec = MlpSpec::tanh(d + 1, &[6], d);
        let net = MlpParams::init(&spec, &mut rng::seeded(3)).unwrap();
        let tape = Tape::new();
        let vars = net.constant_on(&tape);
        let mu = |inp: &Tensor| vars.forward(inp);

        let n = 10;
        let x0 = tape.constant(Buffer::new(
            vec![n, d],
            (0..n * d).map(|i| (i as f64 * 0.41).cos()).collect(),
        ));
        let dt = 0.01;
        let states = surrogate_rollout(&mu, &x0, 0.0, dt, 3);
        let inf = InfluenceParams::new(d, 0.01).leaf_on(&tape);
        let cfg = NewtonLossConfig { k_probes: 2, m_aux: 8, b_steps: 2 };
        let loss = newton_loss(&mu, &states, 0.0, dt, &inf, &cfg, &mut rng::seeded(7))
            .unwrap()
            .value()
            .data[0];

        // Oracle with the same sampled steps (same stream state).
        let picked = rand::seq::index::sample(&mut rng::seeded(7), states.len(), 2).into_vec();
        let eval_mu = |x: &[f64], t: f64| -> Vec<f64> {
            let tt = Tape::new();
            let v = net.constant_on(&tt);
            let mut row = x.to_vec();
            row.push(t);
            v.forward(&tt.constant(Buffer::new(vec![1, d + 1], row))).value().data
        };
        let mut total = 0.0;
        for &i in &picked {
            let t = i as f64 * dt;
            let sv = states[i].value();
            for kk in 0..2 {
                let xk = &sv.data[kk * d..(kk + 1) * d];
                let mu_x = eval_mu(xk, t);
                // F over auxiliary rows 2..10.
                let mut f = vec![0.0; d];
                for mm in 2..10 {
                    let ym = &sv.data[mm * d..(mm + 1) * d];
                    let r = xk
                        .iter()
                        .zip(ym.iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    let phi = sim::influence_phi(d, 1.0, 0.01, r);
                    let mu_y = eval_mu(ym, t);
                    for j in 0..d {
                        f[j] += phi * (mu_y[j] - mu_x[j]) / 8.0;
                    }
                }
                // a = (mu(x + h mu, t + h) - mu(x - h mu, t - h)) / 2h.
                let h = 1e-5;
                let up: Vec<f64> = xk.iter().zip(mu_x.iter()).map(|(x, m)| x + h * m).collect();
                let dn: Vec<f64> = xk.iter().zip(mu_x.iter()).map(|(x, m)| x - h * m).collect();
                let (au, ad) = (eval_mu(&up, t + h), eval_mu(&dn, t - h));
                for j in 0..d {
                    let a = (au[j] - ad[j]) / (2.0 * h);
                    total += (f[j] - a) * (f[j] - a);
                }
            }
        }
        total /= 4.0; // B * K
        assert!(
            (loss - total).abs() < 1e-4 * total.abs().max(1e-3),
            "{} vs {}",
            loss,
            total
        );
    }

    #[test]
    fn total_loss_is_sum_of_logged_parts() {
        let d = 1;
        let spec = MlpSpec::tanh(d + 1, &[4], d);
        let net = MlpParams::init(&spec, &mut rng::seeded(11)).unwrap();
        let tape = Tape::new();
        let vars = net.constant_on(&tape);
        let mu = |inp: &Tensor| vars.forward(inp);
        let x0 = tape.constant(Buffer::new(
            vec![16, 1],
            (0..16).map(|i| (i as f64 * 0.3).sin()).collect(),
        ));
        let dt = 0.01;
        let states = surrogate_rollout(&mu, &x0, 0.0, dt, 5);
        let inf = InfluenceParams::new(d, 0.01).leaf_on(&tape);
        let cfg = NewtonLossConfig { k_probes: 2, m_aux: 6, b_steps: 2 };

        // Fabricate a small dataset at rollout times.
        let flk = sim::FlockingSpec { dim: 1, n_particles: 12, alpha: 0.5, r_min: 0.01 };
        let traj = sim::simulate_flocking(&flk, dt, 0.05, Some(&[0.02, 0.05]), 3).unwrap();
        let ds = SnapshotDataset {
            dim: 1,
            times: traj.times.clone(),
            samples: traj.positions.clone(),
            ids: None,
            provenance: crate::dataset::Provenance {
                seed: 3,
                noise_scale: 0.0,
                domain: crate::dataset::Domain::All,
                mode: crate::dataset::ExtractMode::Unpaired { disjoint: false },
            },
        };

        let (total, newton_part, dist_part) = flocking_total_loss(
            &mu,
            &states,
            0.0,
            dt,
            &inf,
            &cfg,
            &ds,
            1.0,
            16,
            &mut rng::seeded(5),
        )
        .unwrap();
        let tv = total.value().data[0];
        assert!((tv - (newton_part + dist_part)).abs() < 1e-12);
        assert!(newton_part >= 0.0 && dist_part >= 0.0);
    }
}
