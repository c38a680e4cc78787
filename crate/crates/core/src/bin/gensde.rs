use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gensde::error::Result;
use gensde::harness::{ise, relative_l2_error};
use gensde::presets::{preset_dataset, run_preset, run_sweep, RunOptions, PRESET_NAMES, SWEEP_NAMES};

#[derive(Parser)]
#[command(name = "gensde", about = "Snapshot-based inference of stochastic dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Master seed; all randomness derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for artifacts (omit to skip file output).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the preset's training step count.
    #[arg(long)]
    steps: Option<usize>,
    /// Multiply the preset's default step count (ignored with --steps).
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Dimension for the high-dimensional presets.
    #[arg(long)]
    dim: Option<usize>,
}

impl CommonOpts {
    fn to_options(&self) -> RunOptions {
        RunOptions {
            seed: self.seed,
            out: self.out.clone(),
            steps: self.steps,
            scale: self.scale,
            dim: self.dim,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a preset's snapshot dataset without training.
    Simulate {
        preset: String,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Train from a JSON config ({"preset": ..., "seed": ..., "steps": ...,
    /// "scale": ..., "out": ..., "dim": ...}).
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a named preset end to end (data, training, evaluation).
    Preset {
        name: String,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Parameter sweeps (s4-rmin-sweep, s2-bandwidth).
    Sweep {
        name: String,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Compare two density CSV columns by ISE, or a drift_field.csv by
    /// relative L2.
    Eval {
        /// A drift_field.csv or density_*.csv produced by a preset run.
        file: PathBuf,
    },
    /// List available presets and sweeps.
    List,
}

fn load_config(path: &PathBuf) -> Result<(String, RunOptions)> {
    let text = std::fs::read_to_string(path)?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    let preset = v["preset"]
        .as_str()
        .ok_or_else(|| gensde::error::Error::Invalid("config needs a 'preset' field".into()))?
        .to_string();
    let opts = RunOptions {
        seed: v["seed"].as_u64().unwrap_or(0),
        out: v["out"].as_str().map(PathBuf::from),
        steps: v["steps"].as_u64().map(|s| s as usize),
        scale: v["scale"].as_f64().unwrap_or(1.0),
        dim: v["dim"].as_u64().map(|d| d as usize),
    };
    Ok((preset, opts))
}

/// Recompute the summary metric for an artifact CSV: relative L2 for drift
/// fields, per-column ISE against the first density column otherwise.
fn eval_file(path: &PathBuf) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| gensde::error::Error::Invalid("empty file".into()))?
        .split(',')
        .collect();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
    for line in lines {
        for (i, cell) in line.split(',').enumerate() {
            if i < cols.len() {
                cols[i].push(cell.parse().map_err(|_| {
                    gensde::error::Error::Invalid(format!("bad numeric cell '{}'", cell))
                })?);
            }
        }
    }
    // Drift field: paired true*/est* columns, optionally a 0/1 mask column
    // restricting the comparison to the dense-data region.
    let truth_idx: Vec<usize> =
        (0..header.len()).filter(|&i| header[i].starts_with("true")).collect();
    let est_idx: Vec<usize> =
        (0..header.len()).filter(|&i| header[i].starts_with("est")).collect();
    if !truth_idx.is_empty() && (truth_idx.len() == est_idx.len() || truth_idx.len() == 1) {
        let keep: Vec<usize> = match header.iter().position(|h| *h == "mask") {
            Some(m) => (0..cols[m].len()).filter(|&r| cols[m][r] != 0.0).collect(),
            None => (0..cols[0].len()).collect(),
        };
        let mut truth = Vec::new();
        let mut est = Vec::new();
        for &r in &keep {
            for (j, &ei) in est_idx.iter().enumerate() {
                truth.push(cols[truth_idx[j.min(truth_idx.len() - 1)]][r]);
                est.push(cols[ei][r]);
            }
        }
        let err = relative_l2_error(&est, &truth)?;
        return Ok(serde_json::json!({"relative_l2": err, "points": keep.len()}));
    }
    // Density file: x plus named density columns; report pairwise ISE against
    // the first density column.
    let grid = &cols[0];
    let mut out = serde_json::Map::new();
    for i in 2..header.len() {
        let v = ise(&cols[i], &cols[1], grid)?;
        out.insert(format!("ise_{}_vs_{}", header[i], header[1]), serde_json::json!(v));
    }
    Ok(serde_json::Value::Object(out))
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { preset, common } => {
            let opts = common.to_options();
            let ds = preset_dataset(&preset, &opts)?;
            match &opts.out {
                Some(dir) => {
                    std::fs::create_dir_all(dir)?;
                    ds.save(dir)?;
                    println!("wrote {} snapshots to {}", ds.times.len(), dir.display());
                }
                None => println!(
                    "generated {} snapshots ({} samples each); pass --out to save",
                    ds.times.len(),
                    ds.count(0)
                ),
            }
            Ok(())
        }
        Command::Train { config } => {
            let (preset, opts) = load_config(&config)?;
            let report = run_preset(&preset, &opts)?;
            println!("{}", serde_json::to_string_pretty(&report.summary)?);
            Ok(())
        }
        Command::Preset { name, common } => {
            let report = run_preset(&name, &common.to_options())?;
            println!("{}", serde_json::to_string_pretty(&report.summary)?);
            Ok(())
        }
        Command::Sweep { name, common } => {
            let out = run_sweep(&name, &common.to_options())?;
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(())
        }
        Command::Eval { file } => {
            let out = eval_file(&file)?;
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(())
        }
        Command::List => {
            println!("presets: {}", PRESET_NAMES.join(", "));
            println!("sweeps: {}", SWEEP_NAMES.join(", "));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::FAILURE
        }
    }
}
