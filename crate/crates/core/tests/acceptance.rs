//! Acceptance gate: each test covers one numbered criterion and prints a
//! single PASS/FAIL line with the measured values and the pinned tolerance.
//! Criteria 10 and 11 are long runs and marked #[ignore]; enable them with
//! `cargo test --test acceptance -- --ignored`.

use std::rc::Rc;

use gensde::buffer::Buffer;
use gensde::flock::{newton_loss, surrogate_rollout, InfluenceParams, NewtonLossConfig};
use gensde::losses::{exact_w2_1d, sliced_w2_sq};
use gensde::model::{
    rollout, DiffusionParams, DriftParams, GenerativeModel, InitModel,
};
use gensde::nn::{MlpParams, MlpSpec};
use gensde::presets::{run_preset, RunOptions};
use gensde::rng;
use gensde::sim::{
    self, horner4, simulate_flocking, simulate_paths, FlockingSpec, InitialDistribution,
    ProcessKind, SdeSpec,
};
use gensde::stable;
use gensde::tape::{input_gradient, Tape, Tensor};

/// One line per criterion; the assert keeps the line next to the failure.
fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "criterion {criterion}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn opts(seed: u64) -> RunOptions {
    RunOptions { seed, ..RunOptions::default() }
}

fn within(x: f64, target: f64, rel: f64) -> bool {
    (x - target).abs() <= rel * target.abs()
}

// ---------------------------------------------------------------- criterion 1

/// Central-difference gradient of a scalar function of several leaves.
fn fd_gradients(
    f: &dyn Fn(&Tape, &[Tensor]) -> Tensor,
    leaves: &[Buffer],
    eps: f64,
) -> Vec<Buffer> {
    let eval = |bufs: &[Buffer]| -> f64 {
        let tape = Tape::new();
        let ts: Vec<Tensor> = bufs.iter().map(|b| tape.leaf(b.clone())).collect();
        f(&tape, &ts).item()
    };
    let mut grads = Vec::new();
    for (li, leaf) in leaves.iter().enumerate() {
        let mut g = Buffer::zeros(&leaf.shape);
        for k in 0..leaf.len() {
            let mut plus = leaves.to_vec();
            plus[li].data[k] += eps;
            let mut minus = leaves.to_vec();
            minus[li].data[k] -= eps;
            g.data[k] = (eval(&plus) - eval(&minus)) / (2.0 * eps);
        }
        grads.push(g);
    }
    grads
}

/// Worst relative gradient discrepancy between reverse mode and central FD.
fn max_grad_err(f: &dyn Fn(&Tape, &[Tensor]) -> Tensor, leaves: &[Buffer]) -> f64 {
    let tape = Tape::new();
    let ts: Vec<Tensor> = leaves.iter().map(|b| tape.leaf(b.clone())).collect();
    let out = f(&tape, &ts);
    let grads = tape.backward(&out);
    let ad: Vec<Buffer> = ts.iter().map(|t| grads.wrt_buffer(t)).collect();
    let fd = fd_gradients(f, leaves, 1e-5);
    let mut worst: f64 = 0.0;
    for (a, b) in ad.iter().zip(fd.iter()) {
        for (x, y) in a.data.iter().zip(b.data.iter()) {
            worst = worst.max((x - y).abs() / x.abs().max(y.abs()).max(1.0));
        }
    }
    worst
}

/// Smooth shape-preserving primitives, each safe on all of R.
fn random_op(t: &Tensor, pick: u64, other: &Tensor, w: &Tensor) -> Tensor {
    match pick % 12 {
        0 => t.tanh(),
        1 => t.sigmoid(),
        2 => t.softplus(),
        3 => t.scale(0.7).exp(),
        4 => t.square().add_scalar(0.3).ln(),
        5 => t.square().add_scalar(0.2).sqrt(),
        6 => t.square().add_scalar(0.1).powc(0.7),
        7 => t.mul(&t.sigmoid()),
        8 => t.div(&t.square().add_scalar(1.0)),
        9 => t.square().add_scalar(1.2).ln_gamma(),
        10 => t.add(&other.tanh()).scale(-0.8).add_scalar(0.3),
        _ => t.matmul(w).scale(0.5),
    }
}

#[test]
fn c01_reverse_mode_gradients() {
    let mut state: u64 = 0x2545f4914f6cdd1d;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let unit = |u: u64| (u >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0;

    // 200 random 4-deep compositions of the primitive set on [2,3] tensors.
    let mut worst_comp: f64 = 0.0;
    for _ in 0..200 {
        let x = Buffer::new(vec![2, 3], (0..6).map(|_| unit(next())).collect());
        let y = Buffer::new(vec![2, 3], (0..6).map(|_| unit(next())).collect());
        let w = Buffer::new(vec![3, 3], (0..9).map(|_| 0.6 * unit(next())).collect());
        let picks: Vec<u64> = (0..4).map(|_| next()).collect();
        let f = move |_: &Tape, ts: &[Tensor]| {
            let mut t = ts[0].clone();
            for &p in &picks {
                t = random_op(&t, p, &ts[1], &ts[2]);
            }
            t.mean_all()
        };
        worst_comp = worst_comp.max(max_grad_err(&f, &[x, y, w]));
    }

    // 3-hidden-layer tanh MLP, every weight, bias and input entry checked.
    let mut worst_mlp: f64 = 0.0;
    for rep in 0..5 {
        let dims = [2usize, 5, 5, 5, 1];
        let mut leaves = Vec::new();
        for k in 0..4 {
            leaves.push(Buffer::new(
                vec![dims[k], dims[k + 1]],
                (0..dims[k] * dims[k + 1]).map(|_| 0.7 * unit(next())).collect(),
            ));
            leaves.push(Buffer::new(
                vec![dims[k + 1]],
                (0..dims[k + 1]).map(|_| 0.3 * unit(next())).collect(),
            ));
        }
        leaves.push(Buffer::new(vec![3, 2], (0..6).map(|_| unit(next())).collect()));
        let f = |_: &Tape, ts: &[Tensor]| {
            let mut h = ts[8].clone();
            for k in 0..4 {
                h = h.matmul(&ts[2 * k]).add(&ts[2 * k + 1]);
                if k < 3 {
                    h = h.tanh();
                }
            }
            h.sum_all()
        };
        let _ = rep;
        worst_mlp = worst_mlp.max(max_grad_err(&f, &leaves));
    }

    // Double backprop: d/dw of the gradient-penalty expression (||dD/dx|| - 1)^2.
    let mut worst_gp: f64 = 0.0;
    for _ in 0..5 {
        let w1 = Buffer::new(vec![2, 4], (0..8).map(|_| 0.6 * unit(next())).collect());
        let b1 = Buffer::new(vec![4], (0..4).map(|_| 0.2 * unit(next())).collect());
        let w2 = Buffer::new(vec![4, 1], (0..4).map(|_| 0.6 * unit(next())).collect());
        let xv = Buffer::new(vec![1, 2], (0..2).map(|_| unit(next())).collect());
        let f = move |tape: &Tape, ts: &[Tensor]| {
            let x = tape.leaf(xv.clone());
            let h = x.matmul(&ts[0]).add(&ts[1]).leaky_relu(0.2);
            let d = h.matmul(&ts[2]).sum_all();
            let g = input_gradient(&d, &x);
            let norm = g.square().sum_all().add_scalar(1e-12).sqrt();
            norm.add_scalar(-1.0).square()
        };
        worst_gp = worst_gp.max(max_grad_err(&f, &[w1, b1, w2]));
    }

    let pass = worst_comp <= 1e-6 && worst_mlp <= 1e-6 && worst_gp <= 1e-5;
    report(
        "01 reverse-mode gradients",
        pass,
        &format!(
            "compositions {worst_comp:.2e} (tol 1e-6), mlp {worst_mlp:.2e} (tol 1e-6), \
             penalty double-backprop {worst_gp:.2e} (tol 1e-5)"
        ),
    );
}

// ---------------------------------------------------------------- criterion 2

#[test]
fn c02_sliced_distance_exact_in_1d() {
    let mut stream = rng::seeded(42);
    let mut worst_pair: f64 = 0.0;
    let mut worst_shift: f64 = 0.0;
    for rep in 0..500 {
        let n = 256;
        let a: Vec<f64> = (0..n).map(|_| 2.0 * rng::normal(&mut stream)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng::normal(&mut stream) - 0.5).collect();
        let exact = exact_w2_1d(&a, &b).unwrap();

        let tape = Tape::new();
        let ta = tape.constant(Buffer::new(vec![n, 1], a.clone()));
        let tb = tape.constant(Buffer::new(vec![n, 1], b));
        let sliced = sliced_w2_sq(&ta, &tb, 1, &mut rng::seeded(rep)).unwrap().item();
        worst_pair = worst_pair.max((sliced - exact).abs());

        let c = rng::normal(&mut stream);
        let shifted: Vec<f64> = a.iter().map(|x| x + c).collect();
        let tc = tape.constant(Buffer::new(vec![n, 1], shifted));
        let w = sliced_w2_sq(&ta, &tc, 1, &mut rng::seeded(rep)).unwrap().item();
        worst_shift = worst_shift.max((w - c * c).abs());
    }
    let pass = worst_pair <= 1e-12 && worst_shift <= 1e-12;
    report(
        "02 sliced distance exact in 1d",
        pass,
        &format!(
            "500 pairs: |sliced - exact| max {worst_pair:.2e}, \
             |sliced(a, a+c) - c^2| max {worst_shift:.2e} (tol 1e-12)"
        ),
    );
}

// ---------------------------------------------------------------- criterion 3

#[test]
fn c03_stable_sampler_distribution() {
    let n = 100_000usize;
    let mut stream = rng::seeded(5);
    let mut draws: Vec<f64> = (0..n).map(|_| stable::draw(2.0, &mut stream)).collect();
    draws.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // At alpha = 2 the draws are N(0, 2); two-sided KS at the 1% level.
    let normal = statrs::distribution::Normal::new(0.0, 2f64.sqrt()).unwrap();
    let mut ks: f64 = 0.0;
    for (i, &x) in draws.iter().enumerate() {
        let cdf = statrs::distribution::ContinuousCDF::cdf(&normal, x);
        ks = ks.max((cdf - i as f64 / n as f64).abs());
        ks = ks.max((cdf - (i + 1) as f64 / n as f64).abs());
    }
    let ks_crit = 1.628 / (n as f64).sqrt();

    // At alpha = 1.5 the empirical characteristic function must match
    // exp(-|t|^1.5) pointwise.
    let mut stream = rng::seeded(6);
    let heavy: Vec<f64> = (0..n).map(|_| stable::draw(1.5, &mut stream)).collect();
    let mut worst_cf: f64 = 0.0;
    for t in [0.5, 1.0, 2.0] {
        let emp = heavy.iter().map(|&x| (t * x).cos()).sum::<f64>() / n as f64;
        worst_cf = worst_cf.max((emp - (-t.powf(1.5)).exp()).abs());
    }

    let pass = ks <= ks_crit && worst_cf <= 0.01;
    report(
        "03 alpha-stable sampler",
        pass,
        &format!(
            "KS {ks:.5} (1% critical {ks_crit:.5}), CF error at alpha=1.5 max {worst_cf:.4} (tol 0.01)"
        ),
    );
}

// ---------------------------------------------------------------- criterion 4

fn bitwise_case(dim: usize, process: ProcessKind, seed: u64) -> bool {
    let coeffs = [0.1, 1.0, 0.0, -1.0];
    let mut diffusion = if dim == 1 {
        DiffusionParams::diagonal_zeros(1)
    } else {
        DiffusionParams::lower_tri2_zeros()
    };
    for (k, b) in diffusion.blocks_mut()[0].data.iter_mut().enumerate() {
        *b = 0.2 + 0.1 * k as f64;
    }
    let init = InitialDistribution::isotropic_gaussian(dim, 0.0, 0.3);
    let model = GenerativeModel {
        dim,
        init: InitModel::Distribution(init.clone()),
        drift: DriftParams::polynomial_from(dim, &coeffs),
        diffusion: diffusion.clone(),
        process,
        dt: 0.01,
    };
    let tape = Tape::new();
    let vars = model.leaf_on(&tape);
    let times = [0.0, 0.05, 0.1];
    let snaps = rollout(&tape, &model, &vars, 64, &times, seed).unwrap();

    let spec = SdeSpec {
        dim,
        drift: Rc::new(move |x: &[f64]| x.iter().map(|&v| horner4(&coeffs, v)).collect()),
        sigma: diffusion.matrix(),
        process,
        init,
    };
    let traj = simulate_paths(&spec, 64, 0.01, 0.1, Some(&times), seed).unwrap();
    snaps
        .iter()
        .zip(traj.states.iter())
        .all(|(snap, state)| snap.value().data == state.data)
}

#[test]
fn c04_generator_matches_simulator_bitwise() {
    let brownian = bitwise_case(1, ProcessKind::Brownian, 99);
    let levy = bitwise_case(2, ProcessKind::Levy { alpha: 1.5 }, 7);
    report(
        "04 generator/simulator bit equality",
        brownian && levy,
        &format!("1d brownian identical: {brownian}, 2d levy identical: {levy}"),
    );
}

// ------------------------------------------------------- criteria 5-8, 10, 11

#[test]
fn c05_brownian_1d_inversion() {
    let r = run_preset("1d-brownian", &opts(1)).unwrap();
    let sigma = r.summary["sigma"].as_f64().unwrap();
    let l2 = r.summary["drift_rel_l2"].as_f64().unwrap();
    let positive = r.summary["sigma_min_positive"].as_bool().unwrap();
    let pass = within(sigma, 1.0, 0.10) && l2 <= 0.10 && positive;
    report(
        "05 1d brownian inversion",
        pass,
        &format!(
            "sigma {sigma:.4} (want 1.0 +/- 10%), drift rel L2 {l2:.4} (tol 0.10), \
             diffusion positive throughout: {positive}"
        ),
    );
}

#[test]
fn c06_levy_1d_bounded_map() {
    let r = run_preset("1d-levy", &opts(1)).unwrap();
    let sigma = r.summary["sigma"].as_f64().unwrap();
    let positive = r.summary["sigma_min_positive"].as_bool().unwrap();

    // Documented failure mode: same data without the bounded map. Logged at
    // reduced step count, never asserted.
    let mut o = opts(1);
    o.steps = Some(3000);
    let bad = run_preset("1d-levy-unbounded", &o).unwrap();
    println!(
        "criterion 06 (reference only): unbounded run sigma {:.4}, drift rel L2 {:.4}",
        bad.summary["sigma"].as_f64().unwrap(),
        bad.summary["drift_rel_l2"].as_f64().unwrap()
    );

    let pass = within(sigma, 1.0, 0.15) && positive;
    report(
        "06 1d levy with bounded map",
        pass,
        &format!("sigma {sigma:.4} (want 1.0 +/- 15%), diffusion positive throughout: {positive}"),
    );
}

#[test]
fn c07_noisy_2d_recovery() {
    let r = run_preset("2d-noisy", &opts(1)).unwrap();
    let a: Vec<f64> =
        r.summary["a"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let s: Vec<f64> =
        r.summary["s"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let noise = r.summary["noise"].as_f64().unwrap();
    let positive = r.summary["sigma_min_positive"].as_bool().unwrap();
    let a_truth = [1.0, 1.0, -0.5, -0.5];
    let a_ok = a.iter().zip(a_truth).all(|(&x, t)| within(x, t, 0.05));
    let s_ok = s.iter().all(|&x| within(x, 1.0, 0.10));
    let noise_ok = within(noise, 0.2, 0.20);
    let pass = a_ok && s_ok && noise_ok && positive;
    report(
        "07 2d noisy recovery",
        pass,
        &format!(
            "a {a:.4?} (each +/- 5%), s {s:.4?} (want 1.0 +/- 10%), \
             noise {noise:.4} (want 0.2 +/- 20%), diffusion positive throughout: {positive}"
        ),
    );
}

#[test]
fn c08_ou_paired_vs_marginal() {
    let r = run_preset("ou-paired", &opts(1)).unwrap();
    let slope = r.summary["slope"].as_f64().unwrap();
    let sigma = r.summary["sigma"].as_f64().unwrap();
    let positive = r.summary["sigma_min_positive"].as_bool().unwrap();

    // Marginal fitting cannot identify the joint dynamics; emitted only.
    let mut o = opts(1);
    o.steps = Some(3000);
    let bad = run_preset("ou-marginal", &o).unwrap();
    println!(
        "criterion 08 (reference only): marginal run slope {:.4}, sigma {:.4}",
        bad.summary["slope"].as_f64().unwrap(),
        bad.summary["sigma"].as_f64().unwrap()
    );

    let pass = (-1.3..=-0.7).contains(&slope) && (1.2..=1.6).contains(&sigma) && positive;
    report(
        "08 ou paired fitting",
        pass,
        &format!(
            "slope {slope:.4} (want [-1.3, -0.7]), sigma {sigma:.4} (want [1.2, 1.6]), \
             diffusion positive throughout: {positive}"
        ),
    );
}

#[test]
#[ignore = "long run (~10 minutes); criterion 10"]
fn c10_flocking_1d_exponent() {
    let r = run_preset("flock-1d", &opts(1)).unwrap();
    let alpha = r.summary["alpha"].as_f64().unwrap();
    let in_range = r.summary["alpha_in_range"].as_bool().unwrap();
    let pass = (alpha - 0.5).abs() <= 0.1 && in_range;
    report(
        "10 flocking 1d exponent",
        pass,
        &format!("alpha {alpha:.4} (want 0.5 +/- 0.1), alpha in (0,2) throughout: {in_range}"),
    );
}

#[test]
#[ignore = "long run (~1-2 hours); criterion 11"]
fn c11_highdim_coupled_wgan() {
    let r = run_preset("highdim-coupled", &opts(1)).unwrap();
    let mae = r.summary["sigma_mean_abs_error"].as_f64().unwrap();
    let l2: Vec<f64> = r.summary["drift_rel_l2_per_dim"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let positive = r.summary["sigma_min_positive"].as_bool().unwrap();
    let l2_ok = l2.iter().all(|&x| x < 0.20);
    let pass = mae < 0.10 && l2_ok && positive;
    report(
        "11 high-dim coupled wgan",
        pass,
        &format!(
            "diffusion mean abs error {mae:.4} (tol 0.10), per-dim drift rel L2 {l2:.4?} \
             (tol 0.20), diffusion positive throughout: {positive}"
        ),
    );
}

// ---------------------------------------------------------------- criterion 9

fn eval_mu_row(net: &MlpParams, d: usize, x: &[f64], t: f64) -> Vec<f64> {
    let tape = Tape::new();
    let vars = net.constant_on(&tape);
    let mut row = x.to_vec();
    row.push(t);
    vars.forward(&tape.constant(Buffer::new(vec![1, d + 1], row))).value().data
}

/// Recompute the consistency loss with forces summed in plain f64 and
/// accelerations from central differences of the velocity field along
/// (mu, 1) in (x, t).
fn newton_oracle(
    net: &MlpParams,
    d: usize,
    states: &[Buffer],
    dt: f64,
    cfg: &NewtonLossConfig,
    picked: &[usize],
) -> f64 {
    let (k, m) = (cfg.k_probes, cfg.m_aux);
    let mut total = 0.0;
    for &i in picked {
        let t = i as f64 * dt;
        let sv = &states[i];
        for kk in 0..k {
            let xk = &sv.data[kk * d..(kk + 1) * d];
            let mu_x = eval_mu_row(net, d, xk, t);
            let mut f = vec![0.0; d];
            for mm in k..k + m {
                let ym = &sv.data[mm * d..(mm + 1) * d];
                let r = xk
                    .iter()
                    .zip(ym.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let phi = sim::influence_phi(d, 1.0, 0.01, r);
                let mu_y = eval_mu_row(net, d, ym, t);
                for j in 0..d {
                    f[j] += phi * (mu_y[j] - mu_x[j]) / m as f64;
                }
            }
            let h = 1e-5;
            let up: Vec<f64> = xk.iter().zip(&mu_x).map(|(x, m)| x + h * m).collect();
            let dn: Vec<f64> = xk.iter().zip(&mu_x).map(|(x, m)| x - h * m).collect();
            let (au, ad) = (eval_mu_row(net, d, &up, t + h), eval_mu_row(net, d, &dn, t - h));
            for j in 0..d {
                let a = (au[j] - ad[j]) / (2.0 * h);
                total += (f[j] - a) * (f[j] - a);
            }
        }
    }
    total / (picked.len() * k) as f64
}

#[test]
fn c09_newton_consistency_oracle() {
    let mut worst: f64 = 0.0;
    for (case, d) in [(3u64, 1usize), (5, 2), (9, 1), (11, 2)] {
        let spec = MlpSpec::tanh(d + 1, &[6], d);
        let net = MlpParams::init(&spec, &mut rng::seeded(case)).unwrap();
        let tape = Tape::new();
        let vars = net.constant_on(&tape);
        let mu = |inp: &Tensor| vars.forward(inp);

        let n = 10;
        let x0 = tape.constant(Buffer::new(
            vec![n, d],
            (0..n * d).map(|i| (i as f64 * 0.41 + case as f64).cos()).collect(),
        ));
        let dt = 0.01;
        let states = surrogate_rollout(&mu, &x0, 0.0, dt, 3);
        let inf = InfluenceParams::new(d, 0.01).leaf_on(&tape);
        let cfg = NewtonLossConfig { k_probes: 2, m_aux: 8, b_steps: 2 };
        let loss = newton_loss(&mu, &states, 0.0, dt, &inf, &cfg, &mut rng::seeded(7 + case))
            .unwrap()
            .item();

        // Same sampled steps as the loss (identical stream state).
        let picked: Vec<usize> =
            rand::seq::index::sample(&mut rng::seeded(7 + case), states.len(), 2).into_vec();
        let values: Vec<Buffer> = states.iter().map(|s| s.value()).collect();
        let oracle = newton_oracle(&net, d, &values, dt, &cfg, &picked);
        worst = worst.max((loss - oracle).abs() / oracle.abs().max(1e-3));
    }

    // A constant field has zero force and zero acceleration.
    let tape = Tape::new();
    let d = 2;
    let mu = |inp: &Tensor| {
        let n = inp.shape[0];
        inp.tape.constant(Buffer::full(&[n, d], 0.7))
    };
    let x0 = tape.constant(Buffer::new(
        vec![12, 2],
        (0..24).map(|i| (i as f64 * 0.37).sin()).collect(),
    ));
    let states = surrogate_rollout(&mu, &x0, 0.0, 0.01, 5);
    let inf = InfluenceParams::new(d, 0.01).leaf_on(&tape);
    let cfg = NewtonLossConfig { k_probes: 3, m_aux: 8, b_steps: 3 };
    let flat = newton_loss(&mu, &states, 0.0, 0.01, &inf, &cfg, &mut rng::seeded(1))
        .unwrap()
        .item();

    let pass = worst <= 1e-4 && flat.abs() <= 1e-12;
    report(
        "09 newton-consistency oracle",
        pass,
        &format!(
            "4 random nets: max rel error vs finite-difference oracle {worst:.2e} (tol 1e-4), \
             constant field loss {flat:.2e} (tol 1e-12)"
        ),
    );
}

// --------------------------------------------------------------- criterion 12

#[test]
fn c12_conservation_and_structure() {
    // Pairwise antisymmetry must conserve total momentum: 1000 steps, the
    // relative drift stays at rounding level. Positivity of the rectified
    // diffusion and the admissible range of the influence exponent are also
    // asserted inside the training runs of criteria 5-11 via the
    // sigma_min_positive / alpha_in_range summary flags.
    let mut worst: f64 = 0.0;
    for (dim, n) in [(1usize, 128usize), (2, 96)] {
        let spec = FlockingSpec { dim, n_particles: n, alpha: 0.5, r_min: 0.01 };
        let traj = simulate_flocking(&spec, 0.01, 10.0, Some(&[0.0, 10.0]), 3).unwrap();
        for j in 0..dim {
            let p0: f64 = (0..n).map(|i| traj.velocities[0].data[i * dim + j]).sum();
            let p1: f64 = (0..n).map(|i| traj.velocities[1].data[i * dim + j]).sum();
            let scale: f64 = (0..n)
                .map(|i| traj.velocities[0].data[i * dim + j].abs())
                .sum::<f64>()
                .max(1.0);
            worst = worst.max((p1 - p0).abs() / scale);
        }
    }
    let pass = worst <= 1e-10;
    report(
        "12 conservation and structure",
        pass,
        &format!(
            "momentum drift over 1000 steps {worst:.2e} (tol 1e-10); positivity and \
             exponent-range flags asserted within criteria 5-11"
        ),
    );
}

// Determinism spot check: identical seeds give identical metric logs.
#[test]
fn metric_log_reproducibility() {
    let mut o = opts(4);
    o.steps = Some(5);
    let a = run_preset("ou-paired", &o).unwrap();
    let b = run_preset("ou-paired", &o).unwrap();
    assert_eq!(a.log.rows, b.log.rows);
    assert_eq!(a.summary, b.summary);
}

// Writer smoke check for one full artifact set.
#[test]
fn preset_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut o = opts(2);
    o.steps = Some(5);
    o.out = Some(dir.path().to_path_buf());
    run_preset("1d-brownian", &o).unwrap();
    for f in ["metrics.csv", "params.json", "drift_field.csv"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
}
