//! Python bindings: forward simulators, snapshot extraction, the sliced
//! Wasserstein metric, density utilities, and the preset runner.

use std::path::PathBuf;
use std::rc::Rc;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use gensde::buffer::Buffer;
use gensde::dataset::{extract_snapshots, Domain, ExtractMode};
use gensde::harness;
use gensde::losses;
use gensde::presets::{self, RunOptions};
use gensde::rng;
use gensde::sim::{
    self, horner4, FlockingSpec, InitialDistribution, ProcessKind, SdeSpec,
};
use gensde::stable;
use gensde::tape::Tape;

fn err(e: gensde::error::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn buffer_to_rows(b: &Buffer) -> Vec<Vec<f64>> {
    let (n, d) = (b.shape[0], b.shape[1]);
    (0..n).map(|i| b.data[i * d..(i + 1) * d].to_vec()).collect()
}

fn rows_to_buffer(rows: &[Vec<f64>], what: &str) -> PyResult<Buffer> {
    if rows.is_empty() {
        return Err(PyValueError::new_err(format!("{what}: need at least one row")));
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err(format!("{what}: ragged or empty rows")));
    }
    let mut buf = Buffer::zeros(&[rows.len(), d]);
    for (i, r) in rows.iter().enumerate() {
        buf.data[i * d..(i + 1) * d].copy_from_slice(r);
    }
    Ok(buf)
}

/// Names of the runnable experiment presets.
#[pyfunction]
fn preset_names() -> Vec<String> {
    presets::PRESET_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Names of the runnable parameter sweeps.
#[pyfunction]
fn sweep_names() -> Vec<String> {
    presets::SWEEP_NAMES.iter().map(|s| s.to_string()).collect()
}

fn options(seed: u64, steps: Option<usize>, scale: f64, out: Option<String>, dim: Option<usize>) -> RunOptions {
    RunOptions { seed, out: out.map(PathBuf::from), steps, scale, dim }
}

/// Run one experiment preset end to end (data generation, training,
/// evaluation). Returns the summary as a JSON string; `out` additionally
/// writes metrics.csv, params.json and per-preset artifacts to a directory.
#[pyfunction]
#[pyo3(signature = (name, seed=0, steps=None, scale=1.0, out=None, dim=None))]
fn run_preset(
    name: &str,
    seed: u64,
    steps: Option<usize>,
    scale: f64,
    out: Option<String>,
    dim: Option<usize>,
) -> PyResult<String> {
    let report = presets::run_preset(name, &options(seed, steps, scale, out, dim)).map_err(err)?;
    Ok(report.summary.to_string())
}

/// Run one parameter sweep; returns the sweep table as a JSON string.
#[pyfunction]
#[pyo3(signature = (name, seed=0, steps=None, scale=1.0, out=None, dim=None))]
fn run_sweep(
    name: &str,
    seed: u64,
    steps: Option<usize>,
    scale: f64,
    out: Option<String>,
    dim: Option<usize>,
) -> PyResult<String> {
    let value = presets::run_sweep(name, &options(seed, steps, scale, out, dim)).map_err(err)?;
    Ok(value.to_string())
}

/// Observation snapshots for a preset without any training: returns
/// `(times, snapshots)` where `snapshots[k]` is a list of sample rows.
#[pyfunction]
#[pyo3(signature = (name, seed=0, dim=None))]
fn preset_dataset(
    name: &str,
    seed: u64,
    dim: Option<usize>,
) -> PyResult<(Vec<f64>, Vec<Vec<Vec<f64>>>)> {
    let ds = presets::preset_dataset(name, &options(seed, None, 1.0, None, dim)).map_err(err)?;
    let snaps = ds.samples.iter().map(buffer_to_rows).collect();
    Ok((ds.times, snaps))
}

/// Euler-Maruyama ensemble SDE with per-dimension cubic drift. `coeffs[k]`
/// holds `[c0, c1, c2, c3]` for dimension k, `sigma` is the constant
/// diffusion matrix, and `alpha=None` selects Brownian driving noise.
/// Returns `(times, snapshots)` sampled at `times` without replacement.
#[pyfunction]
#[pyo3(signature = (coeffs, sigma, times, n_paths, dt, seed, alpha=None, init_mean=0.0, init_std=1.0, count=None))]
#[allow(clippy::too_many_arguments)]
fn simulate_sde(
    coeffs: Vec<Vec<f64>>,
    sigma: Vec<Vec<f64>>,
    times: Vec<f64>,
    n_paths: usize,
    dt: f64,
    seed: u64,
    alpha: Option<f64>,
    init_mean: f64,
    init_std: f64,
    count: Option<usize>,
) -> PyResult<(Vec<f64>, Vec<Vec<Vec<f64>>>)> {
    let dim = coeffs.len();
    if coeffs.iter().any(|c| c.len() != 4) {
        return Err(PyValueError::new_err("each drift row needs 4 cubic coefficients"));
    }
    let per_dim: Vec<[f64; 4]> =
        coeffs.iter().map(|c| [c[0], c[1], c[2], c[3]]).collect();
    let spec = SdeSpec {
        dim,
        drift: Rc::new(move |x: &[f64]| {
            x.iter().zip(&per_dim).map(|(&xi, c)| horner4(c, xi)).collect()
        }),
        sigma: rows_to_buffer(&sigma, "sigma")?,
        process: match alpha {
            None => ProcessKind::Brownian,
            Some(a) => ProcessKind::Levy { alpha: a },
        },
        init: InitialDistribution::isotropic_gaussian(dim, init_mean, init_std),
    };
    let horizon = times.iter().cloned().fold(0.0, f64::max);
    let traj = sim::simulate_paths(&spec, n_paths, dt, horizon, Some(&times), seed).map_err(err)?;
    let ds = extract_snapshots(
        &traj,
        &times,
        count.unwrap_or(n_paths.min(traj.n_paths() - traj.n_excluded)),
        ExtractMode::Unpaired { disjoint: false },
        0.0,
        &Domain::All,
        rng::derive(seed, 7, 0),
    )
    .map_err(err)?;
    Ok((ds.times, ds.samples.iter().map(buffer_to_rows).collect()))
}

/// Velocity-Verlet flocking simulation from the compactly supported initial
/// profile. Returns `(times, positions, velocities)`.
#[pyfunction]
#[pyo3(signature = (dim, n_particles, alpha, times, dt, seed, r_min=0.01))]
fn simulate_flocking(
    dim: usize,
    n_particles: usize,
    alpha: f64,
    times: Vec<f64>,
    dt: f64,
    seed: u64,
    r_min: f64,
) -> PyResult<(Vec<f64>, Vec<Vec<Vec<f64>>>, Vec<Vec<Vec<f64>>>)> {
    let spec = FlockingSpec { dim, n_particles, alpha, r_min };
    let horizon = times.iter().cloned().fold(0.0, f64::max);
    let traj =
        sim::simulate_flocking(&spec, dt, horizon, Some(&times), seed).map_err(err)?;
    Ok((
        traj.times,
        traj.positions.iter().map(buffer_to_rows).collect(),
        traj.velocities.iter().map(buffer_to_rows).collect(),
    ))
}

/// Standardized symmetric alpha-stable draws (Chambers-Mallows-Stuck).
#[pyfunction]
fn sample_alpha_stable(alpha: f64, n: usize, seed: u64) -> PyResult<Vec<f64>> {
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(PyValueError::new_err("alpha must lie in (0, 2]"));
    }
    let mut stream = rng::seeded(seed);
    Ok((0..n).map(|_| stable::draw(alpha, &mut stream)).collect())
}

/// Squared sliced Wasserstein-2 distance between two sample sets (rows are
/// points), averaged over `n_projections` random directions.
#[pyfunction]
#[pyo3(signature = (a, b, n_projections=100, seed=0))]
fn sliced_w2_sq(
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    n_projections: usize,
    seed: u64,
) -> PyResult<f64> {
    let tape = Tape::new();
    let ta = tape.constant(rows_to_buffer(&a, "a")?);
    let tb = tape.constant(rows_to_buffer(&b, "b")?);
    let mut stream = rng::seeded(seed);
    let loss = losses::sliced_w2_sq(&ta, &tb, n_projections, &mut stream).map_err(err)?;
    Ok(loss.value().data[0])
}

/// Gaussian kernel density estimate of 1D samples on a grid. `bandwidth`
/// defaults to Scott's rule.
#[pyfunction]
#[pyo3(signature = (samples, grid, bandwidth=None))]
fn kde_density(samples: Vec<f64>, grid: Vec<f64>, bandwidth: Option<f64>) -> PyResult<Vec<f64>> {
    harness::kde_density(&samples, &grid, bandwidth).map_err(err)
}

/// Integrated squared error between two densities tabulated on a strictly
/// increasing grid (trapezoid rule).
#[pyfunction]
fn ise(est: Vec<f64>, reference: Vec<f64>, grid: Vec<f64>) -> PyResult<f64> {
    harness::ise(&est, &reference, &grid).map_err(err)
}

/// Relative L2 error ||est - reference|| / ||reference||.
#[pyfunction]
fn relative_l2_error(est: Vec<f64>, reference: Vec<f64>) -> PyResult<f64> {
    harness::relative_l2_error(&est, &reference).map_err(err)
}

#[pymodule]
fn gensde_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(preset_names, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_names, m)?)?;
    m.add_function(wrap_pyfunction!(run_preset, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(preset_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_sde, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_flocking, m)?)?;
    m.add_function(wrap_pyfunction!(sample_alpha_stable, m)?)?;
    m.add_function(wrap_pyfunction!(sliced_w2_sq, m)?)?;
    m.add_function(wrap_pyfunction!(kde_density, m)?)?;
    m.add_function(wrap_pyfunction!(ise, m)?)?;
    m.add_function(wrap_pyfunction!(relative_l2_error, m)?)?;
    Ok(())
}
