//! Experiment orchestration: sampled fits written as CSV/JSON reports, the
//! rate study over a sweep of sample sizes, and a quick frame health check.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{Estimator, EstimatorConfig, PairwiseNorm};
use crate::frame::{fibonacci_points, DnReport, Frame, LevelKind};
use crate::io::{atomic_write, atomic_write_str, csv_error};
use crate::sampling::{sample_streams, DensityOnSphere, TestDensity};
use crate::sphere::{evaluation_grid, product_quadrature, SpherePoint};

/// Everything one invocation needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub profile: String,
    pub density: TestDensity,
    pub ns: Vec<usize>,
    pub replicates: usize,
    /// Independent sampler streams; sample order depends on it.
    pub workers: usize,
    pub out_dir: PathBuf,
    pub estimator: EstimatorConfig,
}

impl ExperimentSpec {
    /// The named profile with the two sample sizes of the reference study.
    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "paper-s5" => Ok(Self {
                profile: name.into(),
                density: TestDensity::F1,
                ns: vec![100, 10_000],
                replicates: 1,
                workers: 1,
                out_dir: PathBuf::from("out"),
                estimator: EstimatorConfig::paper_s5(),
            }),
            other => Err(Error::InvalidParameter(format!(
                "unknown profile {other:?}; the only profile is paper-s5"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ns.is_empty() {
            return Err(Error::InvalidParameter("no sample sizes given".into()));
        }
        if let Some(&n) = self.ns.iter().find(|&&n| n == 0) {
            return Err(Error::InvalidParameter(format!("sample size must be at least 1, got {n}")));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidParameter("replicates must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidParameter("workers must be at least 1".into()));
        }
        self.estimator.validate()?;
        for &n in &self.ns {
            if n >= 2 {
                self.estimator.bounds(n)?;
            }
        }
        Ok(())
    }

    /// Seed of replicate `r`.
    pub fn replicate_seed(&self, r: usize) -> u64 {
        self.estimator.seed.wrapping_add(r as u64)
    }

    fn build_estimator(&self) -> Result<Estimator> {
        // n = 1 fits at the floor level (see `Estimator::lepski_select`)
        let mut top = self.estimator.floor_level.unwrap_or(2);
        for &n in self.ns.iter().filter(|&&n| n >= 2) {
            top = top.max(self.estimator.bounds(n)?.1);
        }
        Estimator::with_max_level(self.estimator.clone(), top)
    }
}

/// Min, max and mean of a list of values, summed in order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl GridStats {
    pub fn of(values: &[f64]) -> Self {
        let mut sum = 0.0;
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in values {
            sum += v;
            min = min.min(v);
            max = max.max(v);
        }
        Self {
            min,
            max,
            mean: sum / values.len().max(1) as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub n: usize,
    pub replicate: usize,
    pub seed: u64,
    pub proposals: u64,
    pub j_min: i32,
    pub j_max: i32,
    pub j_n: i32,
    #[serde(rename = "U")]
    pub u: f64,
    pub u_source: String,
    pub pairwise_norms: Vec<PairwiseNorm>,
    /// `∫ (f_n(j_n) - f)^2 dσ` on the estimator's quadrature rule.
    pub mse: f64,
    pub estimate_csv: Option<String>,
    /// Statistics of the values written to `estimate_csv`.
    pub grid_stats: Option<GridStats>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub spec: ExperimentSpec,
    pub j0: i32,
    #[serde(rename = "D_N")]
    pub d_n: Option<DnReport>,
    #[serde(rename = "C_S")]
    pub c_s: f64,
    pub density_sup: f64,
    /// `1 / ∫ f dσ` for the density as used.
    pub renormalization: f64,
    pub true_csv: String,
    pub true_grid_stats: GridStats,
    pub plot_script: String,
    pub warnings: Vec<String>,
    pub runs: Vec<RunSummary>,
    pub wall_seconds: f64,
}

/// Writes `x,y,z,value` rows.
pub fn write_values_csv(path: &Path, points: &[SpherePoint], values: &[f64]) -> Result<()> {
    if points.len() != values.len() {
        return Err(Error::InvalidParameter(format!(
            "{} points but {} values",
            points.len(),
            values.len()
        )));
    }
    atomic_write(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["x", "y", "z", "value"]).map_err(csv_error)?;
        for (p, v) in points.iter().zip(values) {
            let [x, y, z] = p.coords();
            csv.serialize((x, y, z, v)).map_err(csv_error)?;
        }
        csv.flush()?;
        Ok(())
    })
}

/// Reads `x,y,z,value` rows written by [`write_values_csv`].
pub fn read_values_csv(path: &Path) -> Result<Vec<([f64; 3], f64)>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_error)?;
    reader
        .deserialize::<(f64, f64, f64, f64)>()
        .enumerate()
        .map(|(i, row)| {
            let (x, y, z, v) = row.map_err(|e| Error::Parse {
                line: i + 2,
                message: e.to_string(),
            })?;
            Ok(([x, y, z], v))
        })
        .collect()
}

struct Fit {
    summary: RunSummary,
    grid_values: Option<Vec<f64>>,
}

fn fit_one(
    spec: &ExperimentSpec,
    est: &Estimator,
    density: &DensityOnSphere,
    truth_at_nodes: &[f64],
    grid: Option<&[SpherePoint]>,
    n: usize,
    replicate: usize,
) -> Result<Fit> {
    let start = Instant::now();
    let seed = spec.replicate_seed(replicate);
    let sample = sample_streams(density, n, seed, spec.workers)?;
    let run = est.lepski_select(&sample.points)?;
    let at_nodes = run.evaluate_selected(est.frame(), est.rule().nodes())?;
    let diff: Vec<f64> = at_nodes.iter().zip(truth_at_nodes).map(|(a, b)| a - b).collect();
    let mse = est.rule().norm_sq(&diff);
    let grid_values = grid.map(|g| run.evaluate_selected(est.frame(), g)).transpose()?;
    Ok(Fit {
        summary: RunSummary {
            n,
            replicate,
            seed,
            proposals: sample.proposals,
            j_min: run.j_min,
            j_max: run.j_max,
            j_n: run.j_n,
            u: run.u,
            u_source: run.u_source,
            pairwise_norms: run.pairwise_norms,
            mse,
            estimate_csv: None,
            grid_stats: grid_values.as_deref().map(GridStats::of),
            wall_seconds: start.elapsed().as_secs_f64(),
        },
        grid_values,
    })
}

pub fn estimate_csv_name(density: TestDensity, n: usize, replicate: usize) -> String {
    format!("estimate_{}_n{n}_rep{replicate}.csv", density.name())
}

/// Runs every `(n, replicate)` fit and writes the grid CSVs, the true density
/// CSV, `summary.json` and a plotting script into `spec.out_dir`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentSummary> {
    let start = Instant::now();
    spec.validate()?;
    std::fs::create_dir_all(&spec.out_dir)?;
    let est = spec.build_estimator()?;
    let density = DensityOnSphere::new(spec.density)?;
    let truth: Vec<f64> = est.rule().nodes().iter().map(|p| density.eval(p)).collect();
    let grid = evaluation_grid();

    let true_values: Vec<f64> = grid.iter().map(|p| density.eval(p)).collect();
    let true_csv = format!("true_{}.csv", spec.density.name());
    write_values_csv(&spec.out_dir.join(&true_csv), &grid, &true_values)?;

    let jobs: Vec<(usize, usize)> = spec
        .ns
        .iter()
        .flat_map(|&n| (0..spec.replicates).map(move |r| (n, r)))
        .collect();
    let fits: Vec<Result<Fit>> = jobs
        .par_iter()
        .map(|&(n, r)| fit_one(spec, &est, &density, &truth, Some(&grid), n, r))
        .collect();
    let mut runs = Vec::with_capacity(fits.len());
    for fit in fits {
        let mut fit = fit?;
        let name = estimate_csv_name(spec.density, fit.summary.n, fit.summary.replicate);
        let values = fit.grid_values.take().expect("grid requested");
        write_values_csv(&spec.out_dir.join(&name), &grid, &values)?;
        fit.summary.estimate_csv = Some(name);
        runs.push(fit.summary);
    }

    let plot_script = format!("plot_{}.py", spec.density.name());
    let first_reps: Vec<String> = spec
        .ns
        .iter()
        .map(|&n| estimate_csv_name(spec.density, n, 0))
        .collect();
    atomic_write_str(
        &spec.out_dir.join(&plot_script),
        &plot_script_text(spec.density, &spec.ns, &first_reps, &true_csv),
    )?;

    let summary = ExperimentSummary {
        spec: spec.clone(),
        j0: est.frame().j0(),
        d_n: est.dn().cloned(),
        c_s: est.cs(),
        density_sup: density.sup,
        renormalization: density.renormalization(),
        true_csv,
        true_grid_stats: GridStats::of(&true_values),
        plot_script,
        warnings: est.warnings().to_vec(),
        runs,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&spec.out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    atomic_write(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        std::io::Write::write_all(w, b"\n")?;
        Ok(())
    })
}

/// Stacked 3-D scatter panels: one per sample size, then the true density.
fn plot_script_text(density: TestDensity, ns: &[usize], estimates: &[String], truth: &str) -> String {
    let mut panels = String::new();
    for (n, file) in ns.iter().zip(estimates) {
        let _ = writeln!(panels, "    (\"estimate, n = {n}\", \"{file}\"),");
    }
    let _ = writeln!(panels, "    (\"true {}\", \"{truth}\"),", density.name());
    format!(
        r#"#!/usr/bin/env python3
# Renders the estimator CSVs and the true density on the evaluation grid.
import csv
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))
PANELS = [
{panels}]


def load(name):
    with open(os.path.join(HERE, name), newline="") as fh:
        rows = list(csv.DictReader(fh))
    cols = [[float(r[k]) for r in rows] for k in ("x", "y", "z", "value")]
    return cols


fig = plt.figure(figsize=(6, 5 * len(PANELS)))
for i, (title, name) in enumerate(PANELS):
    x, y, z, v = load(name)
    ax = fig.add_subplot(len(PANELS), 1, i + 1, projection="3d")
    sc = ax.scatter(x, y, z, c=v, s=1, cmap="viridis")
    ax.set_title(title)
    ax.set_box_aspect((1, 1, 1))
    fig.colorbar(sc, ax=ax, shrink=0.6)
fig.tight_layout()
out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(HERE, "{name}.png")
fig.savefig(out, dpi=120)
"#,
        name = density.name()
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub replicates: usize,
    pub mean_mse: f64,
    pub std_error: f64,
    pub mean_j_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub spec: ExperimentSpec,
    #[serde(rename = "C_S")]
    pub c_s: f64,
    pub rows: Vec<RateRow>,
    /// Least-squares slope of `log(mean MSE)` against `log n`.
    pub slope: f64,
    pub strictly_decreasing: bool,
    pub wall_seconds: f64,
}

/// Least-squares slope of `y` on `x`.
pub fn loglog_slope(ns: &[f64], ys: &[f64]) -> f64 {
    let xs: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let ls: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let m = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ls.iter().sum::<f64>() / m);
    let sxy: f64 = xs.iter().zip(&ls).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Mean MSE of the adaptive estimator for every `n`, and the fitted slope.
/// Writes `rate.csv` and `rate.json` into `spec.out_dir`.
pub fn run_rate_study(spec: &ExperimentSpec) -> Result<RateTable> {
    let start = Instant::now();
    spec.validate()?;
    let mut ns = spec.ns.clone();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() < 3 || spec.replicates < 20 {
        return Err(Error::InvalidParameter(format!(
            "a rate study needs at least 3 sample sizes and 20 replicates, got {} and {}",
            ns.len(),
            spec.replicates
        )));
    }
    std::fs::create_dir_all(&spec.out_dir)?;
    let est = spec.build_estimator()?;
    let density = DensityOnSphere::new(spec.density)?;
    let truth: Vec<f64> = est.rule().nodes().iter().map(|p| density.eval(p)).collect();
    let mut rows = Vec::new();
    for &n in &ns {
        let fits: Vec<Result<Fit>> = (0..spec.replicates)
            .into_par_iter()
            .map(|r| fit_one(spec, &est, &density, &truth, None, n, r))
            .collect();
        let mut mses = Vec::with_capacity(fits.len());
        let mut levels = 0.0;
        for f in fits {
            let f = f?;
            mses.push(f.summary.mse);
            levels += f.summary.j_n as f64;
        }
        let k = mses.len() as f64;
        let mean = mses.iter().sum::<f64>() / k;
        let var = mses.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (k - 1.0);
        rows.push(RateRow {
            n,
            replicates: mses.len(),
            mean_mse: mean,
            std_error: (var / k).sqrt(),
            mean_j_n: levels / k,
        });
    }
    let slope = loglog_slope(
        &rows.iter().map(|r| r.n as f64).collect::<Vec<_>>(),
        &rows.iter().map(|r| r.mean_mse).collect::<Vec<_>>(),
    );
    let table = RateTable {
        spec: spec.clone(),
        c_s: est.cs(),
        strictly_decreasing: rows.windows(2).all(|w| w[1].mean_mse < w[0].mean_mse),
        rows,
        slope,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    atomic_write(&spec.out_dir.join("rate.csv"), |w| {
        let mut csv = csv::Writer::from_writer(w);
        for row in &table.rows {
            csv.serialize(row).map_err(csv_error)?;
        }
        csv.flush()?;
        Ok(())
    })?;
    write_json(&spec.out_dir.join("rate.json"), &table)?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCount {
    pub level: i32,
    pub scaling: usize,
    pub detail: usize,
}

/// Numerical health of the frame built from a configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameCheck {
    pub j0: i32,
    pub max_level: i32,
    pub counts: Vec<LevelCount>,
    /// `max |K_{j+1} - K_j - G_j|` over random pairs.
    pub telescoping_error: f64,
    /// `|Σ <f,g>^2 / ||f||^2 - 1|` for `f` = the density, details through `j0 + 3`.
    pub parseval_relative_error: f64,
    #[serde(rename = "D_N")]
    pub d_n: DnReport,
    pub quad_order: usize,
    pub wall_seconds: f64,
}

pub fn frame_check(config: &EstimatorConfig, density: TestDensity) -> Result<FrameCheck> {
    let start = Instant::now();
    config.validate()?;
    let probe = config.frame_config(config.floor_level.unwrap_or(2).max(2)).build()?;
    let j0 = probe.j0();
    let frame: Frame = config.frame_config(j0 + 3).build()?;
    let mut counts = Vec::new();
    for j in j0..=frame.max_level() {
        let count = |kind: LevelKind| -> Result<usize> {
            let mut total = 0;
            for e in kind.vertices() {
                total += 2 * frame.system().count(j, e)?;
            }
            Ok(total)
        };
        counts.push(LevelCount {
            level: j,
            scaling: count(LevelKind::Scaling)?,
            detail: count(LevelKind::Detail)?,
        });
    }
    let xs = fibonacci_points(200, 0.25);
    let ys = fibonacci_points(200, 0.75);
    let mut telescoping_error: f64 = 0.0;
    for (x, y) in xs.iter().zip(ys.iter().rev()) {
        let d = frame.kernel(j0 + 1, x, y)? - frame.kernel(j0, x, y)? - frame.detail_kernel(j0, x, y)?;
        telescoping_error = telescoping_error.max(d.abs());
    }
    let rule = product_quadrature(config.quad_order)?;
    let d = DensityOnSphere::new(density)?;
    let values: Vec<f64> = rule.nodes().iter().map(|p| d.eval(p)).collect();
    let coeffs = frame.frame_coefficients(&rule, &values, j0 + 3)?;
    let parseval_relative_error = (coeffs.sum_sq() / rule.norm_sq(&values) - 1.0).abs();
    let dn_frame = config.frame_config(j0.max(*config.dn.levels.iter().max().unwrap_or(&j0))).build()?;
    let d_n = crate::estimator::compute_dn(&dn_frame, &config.dn)?;
    Ok(FrameCheck {
        j0,
        max_level: frame.max_level(),
        counts,
        telescoping_error,
        parseval_relative_error,
        d_n,
        quad_order: config.quad_order,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}
