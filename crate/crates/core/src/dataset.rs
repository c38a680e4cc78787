//! Snapshot datasets: extraction from simulated ensembles, observation
//! corruptions (noise, truncation), and the on-disk CSV + manifest format.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::buffer::Buffer;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::sim::Trajectories;

/// Axis-aligned observation window.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub enum Domain {
    All,
    /// Keep samples with x[axis] < upper.
    HalfSpace { axis: usize, upper: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl Domain {
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Domain::All => true,
            Domain::HalfSpace { axis, upper } => x[*axis] < *upper,
            Domain::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi.iter()))
                .all(|(&v, (&l, &h))| v >= l && v <= h),
        }
    }
}

/// How snapshot sample sets relate across times.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub enum ExtractMode {
    /// Same paths at every time; ids are recorded.
    Paired,
    /// Independent subsets per time. `disjoint` forbids path reuse across
    /// times (the default for observation data).
    Unpaired { disjoint: bool },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub noise_scale: f64,
    pub domain: Domain,
    pub mode: ExtractMode,
}

#[derive(Clone, Debug)]
pub struct SnapshotDataset {
    pub dim: usize,
    pub times: Vec<f64>,
    /// One `[count_i, dim]` buffer per time.
    pub samples: Vec<Buffer>,
    /// Source path ids per snapshot, present in paired mode.
    pub ids: Option<Vec<Vec<usize>>>,
    pub provenance: Provenance,
}

impl SnapshotDataset {
    pub fn paired(&self) -> bool {
        matches!(self.provenance.mode, ExtractMode::Paired)
    }

    pub fn count(&self, k: usize) -> usize {
        self.samples[k].shape[0]
    }

    pub fn time_index(&self, t: f64) -> Result<usize> {
        self.times
            .iter()
            .position(|&s| (s - t).abs() < 1e-9)
            .ok_or_else(|| Error::Invalid(format!("no snapshot at time {}", t)))
    }
}

/// Draw observation snapshots at `times` from a simulated ensemble.
/// Excluded (non-finite) paths never enter the pool. Noise is added before
/// the domain filter, matching measurement followed by windowing.
pub fn extract_snapshots(
    traj: &Trajectories,
    times: &[f64],
    count: usize,
    mode: ExtractMode,
    noise_scale: f64,
    domain: &Domain,
    seed: u64,
) -> Result<SnapshotDataset> {
    if times.is_empty() || count == 0 {
        return Err(Error::Invalid("need at least one time and one sample".into()));
    }
    if noise_scale < 0.0 {
        return Err(Error::Invalid("noise scale must be nonnegative".into()));
    }
    if matches!(mode, ExtractMode::Paired) && *domain != Domain::All {
        return Err(Error::Invalid(
            "truncation would break the shared id set of paired snapshots".into(),
        ));
    }
    let pool: Vec<usize> = (0..traj.n_paths()).filter(|&p| !traj.excluded[p]).collect();
    if count > pool.len() {
        return Err(Error::Invalid(format!(
            "requested {} samples but only {} usable paths",
            count,
            pool.len()
        )));
    }
    let time_idx: Vec<usize> =
        times.iter().map(|&t| traj.time_index(t)).collect::<Result<_>>()?;

    let mut stream = rng::seeded(seed);
    let chosen: Vec<Vec<usize>> = match mode {
        ExtractMode::Paired => {
            let ids = sample_without_replacement(&pool, count, &mut stream);
            vec![ids; times.len()]
        }
        ExtractMode::Unpaired { disjoint: true } => {
            if count * times.len() > pool.len() {
                return Err(Error::Invalid(format!(
                    "disjoint draws need {} paths but only {} are usable",
                    count * times.len(),
                    pool.len()
                )));
            }
            let all = sample_without_replacement(&pool, count * times.len(), &mut stream);
            all.chunks(count).map(|c| c.to_vec()).collect()
        }
        ExtractMode::Unpaired { disjoint: false } => (0..times.len())
            .map(|_| sample_without_replacement(&pool, count, &mut stream))
            .collect(),
    };

    let d = traj.dim;
    let mut samples = Vec::with_capacity(times.len());
    let mut kept_ids = Vec::with_capacity(times.len());
    for (k, ids) in chosen.iter().enumerate() {
        let state = &traj.states[time_idx[k]];
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(ids.len());
        for &p in ids {
            let mut x: Vec<f64> = state.data[p * d..(p + 1) * d].to_vec();
            if noise_scale > 0.0 {
                for v in x.iter_mut() {
                    *v += noise_scale * rng::normal(&mut stream);
                }
            }
            if domain.contains(&x) {
                rows.push((p, x));
            }
        }
        if rows.is_empty() {
            return Err(Error::Invalid(format!(
                "domain filter removed every sample at time {}",
                times[k]
            )));
        }
        let mut buf = Buffer::zeros(&[rows.len(), d]);
        for (i, (_, x)) in rows.iter().enumerate() {
            buf.data[i * d..(i + 1) * d].copy_from_slice(x);
        }
        samples.push(buf);
        kept_ids.push(rows.into_iter().map(|(p, _)| p).collect::<Vec<_>>());
    }

    let paired = matches!(mode, ExtractMode::Paired);
    Ok(SnapshotDataset {
        dim: d,
        times: times.to_vec(),
        samples,
        ids: paired.then_some(kept_ids),
        provenance: Provenance { seed, noise_scale, domain: domain.clone(), mode },
    })
}

fn sample_without_replacement(pool: &[usize], count: usize, stream: &mut Stream) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut shuffled = pool.to_vec();
    shuffled.shuffle(stream);
    shuffled.truncate(count);
    shuffled
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    dim: usize,
    times: Vec<f64>,
    files: Vec<String>,
    counts: Vec<usize>,
    has_ids: bool,
    provenance: Provenance,
}

impl SnapshotDataset {
    /// Write `manifest.json` plus one CSV per snapshot. Columns are
    /// `id,x1..xd` when path ids exist, `x1..xd` otherwise.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut files = Vec::with_capacity(self.times.len());
        for (k, buf) in self.samples.iter().enumerate() {
            let name = format!("snapshot_{:03}.csv", k);
            let mut out = String::new();
            let header: Vec<String> = (1..=self.dim).map(|j| format!("x{}", j)).collect();
            if self.ids.is_some() {
                out.push_str("id,");
            }
            out.push_str(&header.join(","));
            out.push('\n');
            for i in 0..buf.shape[0] {
                if let Some(ids) = &self.ids {
                    out.push_str(&format!("{},", ids[k][i]));
                }
                let row: Vec<String> = (0..self.dim)
                    .map(|j| format!("{:.17e}", buf.data[i * self.dim + j]))
                    .collect();
                out.push_str(&row.join(","));
                out.push('\n');
            }
            let mut f = fs::File::create(dir.join(&name))?;
            f.write_all(out.as_bytes())?;
            files.push(name);
        }
        let manifest = Manifest {
            dim: self.dim,
            times: self.times.clone(),
            files,
            counts: self.samples.iter().map(|b| b.shape[0]).collect(),
            has_ids: self.ids.is_some(),
            provenance: self.provenance.clone(),
        };
        let json = serde_json::to_string_pretty(&manifest)?;
        fs::write(dir.join("manifest.json"), json)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<SnapshotDataset> {
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let mut samples = Vec::with_capacity(manifest.files.len());
        let mut ids: Vec<Vec<usize>> = Vec::with_capacity(manifest.files.len());
        for (k, name) in manifest.files.iter().enumerate() {
            let text = fs::read_to_string(dir.join(name))?;
            let mut lines = text.lines();
            let header = lines
                .next()
                .ok_or_else(|| Error::Invalid(format!("{}: empty snapshot file", name)))?;
            let has_id = header.starts_with("id,");
            let mut data = Vec::new();
            let mut file_ids = Vec::new();
            for line in lines {
                if line.trim().is_empty() {
                    continue;
                }
                let mut parts = line.split(',');
                if has_id {
                    let id = parts
                        .next()
                        .and_then(|s| s.parse::<usize>().ok())
                        .ok_or_else(|| Error::Invalid(format!("{}: bad id column", name)))?;
                    file_ids.push(id);
                }
                for part in parts {
                    data.push(part.parse::<f64>().map_err(|_| {
                        Error::Invalid(format!("{}: bad numeric field '{}'", name, part))
                    })?);
                }
            }
            if data.len() % manifest.dim != 0 {
                return Err(Error::Invalid(format!("{}: ragged rows", name)));
            }
            let rows = data.len() / manifest.dim;
            if rows != manifest.counts[k] {
                return Err(Error::Invalid(format!(
                    "{}: {} rows but manifest says {}",
                    name, rows, manifest.counts[k]
                )));
            }
            samples.push(Buffer::new(vec![rows, manifest.dim], data));
            ids.push(file_ids);
        }
        Ok(SnapshotDataset {
            dim: manifest.dim,
            times: manifest.times,
            samples,
            ids: manifest.has_ids.then_some(ids),
            provenance: manifest.provenance,
        })
    }
}
