//! `stereo-wavelets`: sampling, adaptive density estimation and frame checks on S^2.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stereo_wavelets::experiment::{frame_check, run_experiment, run_rate_study, write_json, ExperimentSpec};
use stereo_wavelets::sampling::{sample_streams, DensityOnSphere};
use stereo_wavelets::sphere::write_points_csv;
use stereo_wavelets::{Error, Result};

use config::{parse_density, parse_support_rule, FlatConfig};

/// Thread count; also the number of sampler streams.
const WORKERS_VAR: &str = "STEREO_WAVELETS_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "stereo-wavelets", version, about = "Stereographic wavelet density estimation on the sphere")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the adaptive estimator and write grid CSVs, summary.json and a plot script.
    Estimate(Common),
    /// Mean MSE over replicates for a sweep of sample sizes, with the log-log slope.
    RateStudy(Common),
    /// Frame counts, telescoping and Parseval errors, and the kernel bound D_N.
    FrameCheck(Common),
    /// Draw a rejection sample and write it as x,y,z CSV.
    Sample(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Named parameter set.
    #[arg(long, default_value = "paper-s5")]
    profile: String,
    /// Flat TOML document applied on top of the profile; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sample sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// f1 or f2 (uniform is also accepted).
    #[arg(long)]
    density: Option<String>,
    /// Output directory (a file path for `sample`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    quad_order: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    /// strict or effective.
    #[arg(long)]
    support_rule: Option<String>,
}

/// `None` when unset: one sampler stream, default thread pool.
fn workers() -> Result<Option<usize>> {
    match std::env::var(WORKERS_VAR) {
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::InvalidParameter(format!("{WORKERS_VAR}: {e}"))),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(w) if w >= 1 => Ok(Some(w)),
            _ => Err(Error::InvalidParameter(format!(
                "{WORKERS_VAR} must be a positive integer, got {v:?}"
            ))),
        },
    }
}

fn build_spec(args: &Common, workers: usize) -> Result<ExperimentSpec> {
    let file = match &args.config {
        Some(path) => FlatConfig::parse(&std::fs::read_to_string(path)?)?,
        None => FlatConfig::default(),
    };
    let profile = file.profile.clone().unwrap_or_else(|| args.profile.clone());
    let mut spec = ExperimentSpec::profile(&profile)?;
    file.apply(&mut spec)?;
    if !args.n.is_empty() {
        spec.ns = args.n.clone();
    }
    if let Some(s) = args.seed {
        spec.estimator.seed = s;
    }
    if let Some(d) = &args.density {
        spec.density = parse_density(d)?;
    }
    if let Some(o) = &args.out {
        spec.out_dir = o.clone();
    }
    if let Some(q) = args.quad_order {
        spec.estimator.quad_order = q;
    }
    if let Some(r) = args.replicates {
        spec.replicates = r;
    }
    if let Some(rule) = &args.support_rule {
        spec.estimator.support_rule = parse_support_rule(rule, file.effective_threshold)?;
    }
    spec.workers = workers;
    Ok(spec)
}

fn run(cli: Cli) -> Result<()> {
    let requested = workers()?;
    if let Some(w) = requested {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    }
    let workers = requested.unwrap_or(1);
    match cli.command {
        Command::Estimate(args) => {
            let spec = build_spec(&args, workers)?;
            let summary = run_experiment(&spec)?;
            println!("j0 = {}, C(S) = {:.6}", summary.j0, summary.c_s);
            if let Some(dn) = &summary.d_n {
                println!("D_N = {:.6} (level {})", dn.value, dn.level);
            }
            for run in &summary.runs {
                println!(
                    "n = {:>6}  rep {:>3}  j_min = {}  j_max = {}  j_n = {}  MSE = {:.6e}",
                    run.n, run.replicate, run.j_min, run.j_max, run.j_n, run.mse
                );
            }
            println!("wrote {}", spec.out_dir.join("summary.json").display());
        }
        Command::RateStudy(args) => {
            let spec = build_spec(&args, workers)?;
            let table = run_rate_study(&spec)?;
            for row in &table.rows {
                println!(
                    "n = {:>6}  mean MSE = {:.6e} ± {:.2e}  mean j_n = {:.2}",
                    row.n, row.mean_mse, row.std_error, row.mean_j_n
                );
            }
            println!("slope = {:.4}, strictly decreasing = {}", table.slope, table.strictly_decreasing);
            println!("wrote {}", spec.out_dir.join("rate.json").display());
        }
        Command::FrameCheck(args) => {
            let spec = build_spec(&args, workers)?;
            let report = frame_check(&spec.estimator, spec.density)?;
            std::fs::create_dir_all(&spec.out_dir)?;
            let path = spec.out_dir.join("frame_check.json");
            write_json(&path, &report)?;
            println!("j0 = {}, levels {}..={}", report.j0, report.j0, report.max_level);
            for c in &report.counts {
                println!("level {}: {} scaling, {} detail elements", c.level, c.scaling, c.detail);
            }
            println!("telescoping error = {:.3e}", report.telescoping_error);
            println!("Parseval relative error = {:.3e}", report.parseval_relative_error);
            println!("D_N = {:.6} (level {})", report.d_n.value, report.d_n.level);
            println!("wrote {}", path.display());
        }
        Command::Sample(args) => {
            let spec = build_spec(&args, workers)?;
            let n = match spec.ns.as_slice() {
                [n] => *n,
                other => {
                    return Err(Error::InvalidParameter(format!(
                        "sample takes exactly one --n, got {other:?}"
                    )))
                }
            };
            let density = DensityOnSphere::new(spec.density)?;
            let sample = sample_streams(&density, n, spec.estimator.seed, workers)?;
            let path = args.out.clone().unwrap_or_else(|| {
                PathBuf::from(format!("sample_{}_n{n}_seed{}.csv", spec.density.name(), spec.estimator.seed))
            });
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            write_points_csv(&path, &sample.points)?;
            println!(
                "{} points from {} ({} proposals, acceptance {:.4})",
                sample.points.len(),
                spec.density.name(),
                sample.proposals,
                sample.acceptance_rate()
            );
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
