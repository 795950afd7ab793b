//! Projection density estimator `f_n(j) = (1/n) Σ K_j(·, X_i)`, resolution
//! bounds, the adaptive level `j_n` and the threshold constant `C(S)`.

use std::f64::consts::PI;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aww::AwwForm;
use crate::cubes::{Enlargement, SupportRule};
use crate::daubechies::DEFAULT_DEPTH;
use crate::error::{Error, Result};
use crate::frame::{fibonacci_points, parts, DnReport, Frame, FrameConfig, LevelCoefficients, LevelKind, Polish};
use crate::sphere::{product_quadrature, QuadratureRule, SpherePoint};

/// Dimension of the sphere the pipeline runs on.
pub const DIM: usize = 2;

/// Bound `U >= ||f||_∞` used in the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupBound {
    /// `max(1, sup of the level-j_min estimate over the quadrature nodes)`.
    Auto,
    Fixed(f64),
}

/// Threshold constant `C(S)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdConstant {
    /// From the numerical kernel bound `D_N`.
    Auto,
    Fixed(f64),
}

/// How `D_N` is computed when the threshold constant is automatic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnSettings {
    pub levels: Vec<i32>,
    pub test_points: usize,
    pub quad_order: usize,
    pub polish: Option<Polish>,
}

impl Default for DnSettings {
    fn default() -> Self {
        Self {
            levels: vec![2, 3],
            test_points: 500,
            quad_order: 128,
            polish: Some(Polish::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Lower smoothness `r > d/2`.
    pub r: f64,
    /// Upper smoothness `R > r`.
    #[serde(rename = "R")]
    pub r_upper: f64,
    #[serde(rename = "U")]
    pub u: SupBound,
    pub order: usize,
    pub delta: f64,
    pub epsilon: Enlargement,
    pub support_rule: SupportRule,
    pub form: AwwForm,
    pub base_depth: u32,
    #[serde(rename = "C_S")]
    pub c_s: ThresholdConstant,
    pub floor_level: Option<i32>,
    pub seed: u64,
    /// Order of the product rule on which pairwise norms are computed.
    pub quad_order: usize,
    pub dn: DnSettings,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self::paper_s5()
    }
}

impl EstimatorConfig {
    /// DB8, `ε = 4`, `δ = π/6`, `r = 3/2`, `R = 2`, `j_min >= 2`.
    pub fn paper_s5() -> Self {
        Self {
            r: 1.5,
            r_upper: 2.0,
            u: SupBound::Auto,
            order: 8,
            delta: PI / 6.0,
            epsilon: Enlargement::Integer(4),
            // the strict rule starts at j0 = 3, above the floor of 2
            support_rule: SupportRule::Effective { threshold: 1e-3 },
            form: AwwForm::Cartesian,
            base_depth: DEFAULT_DEPTH,
            c_s: ThresholdConstant::Auto,
            floor_level: Some(2),
            seed: 7,
            quad_order: 256,
            dn: DnSettings::default(),
        }
    }

    /// Checks the hypotheses and returns advisory warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let half = DIM as f64 / 2.0;
        if !(self.r > half) || !(self.r_upper > self.r) || !self.r_upper.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "smoothness must satisfy d/2 < r < R, got r = {}, R = {}",
                self.r, self.r_upper
            )));
        }
        if let SupBound::Fixed(u) = self.u {
            if !(u > 0.0) {
                return Err(Error::InvalidParameter(format!("U must be positive, got {u}")));
            }
        }
        if let ThresholdConstant::Fixed(c) = self.c_s {
            if !(c >= 0.0) {
                return Err(Error::InvalidParameter(format!("C_S must be nonnegative, got {c}")));
            }
        }
        if self.quad_order < 2 {
            return Err(Error::InvalidParameter(format!("quadrature order {} is too small", self.quad_order)));
        }
        if self.c_s == ThresholdConstant::Auto && (self.dn.levels.is_empty() || self.dn.test_points == 0) {
            return Err(Error::InvalidParameter("D_N needs at least one level and one test point".into()));
        }
        let mut warnings = Vec::new();
        if 0.2 * self.order as f64 <= self.r_upper {
            warnings.push(format!(
                "R = {} is not below N/5 = {}; the wavelet regularity may not cover R",
                self.r_upper,
                0.2 * self.order as f64
            ));
        }
        Ok(warnings)
    }

    pub fn bounds(&self, n: usize) -> Result<(i32, i32)> {
        resolution_bounds(n, self.r, self.r_upper, DIM, self.floor_level)
    }

    pub fn frame_config(&self, max_level: i32) -> FrameConfig {
        FrameConfig {
            order: self.order,
            epsilon: self.epsilon,
            support_rule: self.support_rule,
            delta: self.delta,
            form: self.form,
            base_depth: self.base_depth,
            max_level,
        }
    }
}

/// `j_min = ⌊log2 n / (2R + d)⌋` (raised to `floor` when given),
/// `j_max = ⌈log2 n / (2r + d)⌉`.
pub fn resolution_bounds(n: usize, r: f64, r_upper: f64, d: usize, floor: Option<i32>) -> Result<(i32, i32)> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("resolution bounds need n >= 2, got {n}")));
    }
    let lg = (n as f64).log2();
    let mut j_min = (lg / (2.0 * r_upper + d as f64)).floor() as i32;
    if let Some(f) = floor {
        j_min = j_min.max(f);
    }
    let j_max = (lg / (2.0 * r + d as f64)).ceil() as i32;
    if j_min > j_max {
        return Err(Error::InvalidParameter(format!(
            "j_min = {j_min} exceeds j_max = {j_max} for n = {n}; increase n, lower r or the floor level"
        )));
    }
    Ok((j_min, j_max))
}

/// `C(S) = (2 + 4 max{10 sqrt(D)/3, 4/3 + sqrt 2} sqrt(D))^2`.
pub fn compute_cs(dn: f64) -> f64 {
    let s = dn.max(0.0).sqrt();
    let m = (10.0 * s / 3.0).max(4.0 / 3.0 + 2f64.sqrt());
    (2.0 + 4.0 * m * s).powi(2)
}

/// `C(S) (U ∨ 1) 2^{ld} / n`.
pub fn threshold(cs: f64, u: f64, level: i32, d: usize, n: usize) -> f64 {
    cs * u.max(1.0) * ((level * d as i32) as f64).exp2() / n as f64
}

/// One entry of the Lepski table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairwiseNorm {
    pub j: i32,
    pub l: i32,
    /// `||f_n(j) - f_n(l)||_2^2`.
    pub value: f64,
    /// Threshold at level `l`.
    pub threshold: f64,
}

impl PairwiseNorm {
    pub fn passes(&self) -> bool {
        self.value <= self.threshold
    }
}

/// Does `j` satisfy the defining predicate against every finer level?
pub fn admissible(j: i32, table: &[PairwiseNorm]) -> bool {
    table.iter().filter(|p| p.j == j && p.l > j).all(PairwiseNorm::passes)
}

/// Smallest admissible level. The largest level is always admissible.
pub fn select_level(levels: &[i32], table: &[PairwiseNorm]) -> Result<i32> {
    let mut sorted = levels.to_vec();
    sorted.sort_unstable();
    sorted
        .into_iter()
        .find(|&j| admissible(j, table))
        .ok_or_else(|| Error::InvalidParameter("empty level window".into()))
}

/// `f_n(j)(x)` by direct kernel summation.
pub fn estimate_density(frame: &Frame, sample: &[SpherePoint], level: i32, x: &SpherePoint) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let px = frame.prepare(level, x, false);
    let mut acc = 0.0;
    for y in sample {
        let py = frame.prepare(level, y, false);
        acc += frame.kernel_prepared(LevelKind::Scaling, &px, &py)?;
    }
    Ok(acc / sample.len() as f64)
}

/// Coefficients `(1/n) Σ_i g(X_i)` of every scaling element of each level, so
/// that `f_n(j) = Σ_g c_g g`.
pub fn empirical_coefficients(frame: &Frame, sample: &[SpherePoint], levels: &[i32]) -> Result<Vec<LevelCoefficients>> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let zeros: Vec<LevelCoefficients> = levels
        .iter()
        .map(|&j| frame.zero_coefficients(j, LevelKind::Scaling))
        .collect::<Result<_>>()?;
    let w = 1.0 / sample.len() as f64;
    let partials: Vec<Vec<LevelCoefficients>> = parts(sample.len())
        .into_par_iter()
        .map(|part| {
            let mut acc = zeros.clone();
            for x in &sample[part] {
                for c in acc.iter_mut() {
                    let pw = frame.prepare(c.level, x, false);
                    frame.accumulate(c, &pw, w);
                }
            }
            acc
        })
        .collect();
    let mut total = zeros;
    for part in &partials {
        for (t, p) in total.iter_mut().zip(part) {
            t.add_scaled(p, 1.0);
        }
    }
    Ok(total)
}

/// Result of one adaptive fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorRun {
    pub n: usize,
    pub j_min: i32,
    pub j_max: i32,
    pub j_n: i32,
    /// Effective `U`.
    pub u: f64,
    /// `"fixed"` or `"auto-pilot"`: the latter is a plug-in value, not a known bound.
    pub u_source: String,
    #[serde(rename = "C_S")]
    pub c_s: f64,
    #[serde(rename = "D_N")]
    pub d_n: Option<f64>,
    pub pairwise_norms: Vec<PairwiseNorm>,
    pub wall_seconds: f64,
    /// Per-level coefficients; `f_n(j)` is their synthesis.
    #[serde(skip)]
    pub estimates: Vec<LevelCoefficients>,
}

impl EstimatorRun {
    pub fn levels(&self) -> Vec<i32> {
        (self.j_min..=self.j_max).collect()
    }

    pub fn coefficients(&self, level: i32) -> Option<&LevelCoefficients> {
        self.estimates.iter().find(|c| c.level == level)
    }

    /// `f_n(level)` at the given points.
    pub fn evaluate(&self, frame: &Frame, points: &[SpherePoint], level: i32) -> Result<Vec<f64>> {
        let c = self
            .coefficients(level)
            .ok_or(Error::LevelAboveMax { level, max: self.j_max })?;
        Ok(frame.synthesize_at(points, std::slice::from_ref(c)))
    }

    /// `f_n(j_n)` at the given points.
    pub fn evaluate_selected(&self, frame: &Frame, points: &[SpherePoint]) -> Result<Vec<f64>> {
        self.evaluate(frame, points, self.j_n)
    }
}

/// A frame, a quadrature rule and the threshold constant, shared by every fit
/// with the same configuration.
#[derive(Debug, Clone)]
pub struct Estimator {
    config: EstimatorConfig,
    frame: Frame,
    rule: QuadratureRule,
    dn: Option<DnReport>,
    cs: f64,
    warnings: Vec<String>,
}

impl Estimator {
    /// Builds everything needed for samples of size up to `max_n`.
    pub fn new(config: EstimatorConfig, max_n: usize) -> Result<Self> {
        let (_, j_max) = config.bounds(max_n)?;
        Self::with_max_level(config, j_max)
    }

    pub fn with_max_level(config: EstimatorConfig, max_level: i32) -> Result<Self> {
        let mut warnings = config.validate()?;
        for w in &warnings {
            warn!("{w}");
        }
        let dn_top = config.dn.levels.iter().copied().max().unwrap_or(max_level);
        let frame = config.frame_config(max_level.max(dn_top)).build()?;
        let rule = product_quadrature(config.quad_order)?;
        let (dn, cs) = match config.c_s {
            ThresholdConstant::Fixed(c) => (None, c),
            ThresholdConstant::Auto => {
                let report = compute_dn(&frame, &config.dn)?;
                info!("D_N = {} (level {})", report.value, report.level);
                let cs = compute_cs(report.value);
                (Some(report), cs)
            }
        };
        if let Some(f) = config.floor_level {
            if f < frame.j0() {
                warnings.push(format!("floor level {f} is below j0 = {}", frame.j0()));
            }
        }
        Ok(Self {
            config,
            frame,
            rule,
            dn,
            cs,
            warnings,
        })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn dn(&self) -> Option<&DnReport> {
        self.dn.as_ref()
    }

    pub fn cs(&self) -> f64 {
        self.cs
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Adaptive fit: estimates at every level of `[j_min, j_max]`, the
    /// pairwise table on the quadrature rule, and the smallest admissible level.
    pub fn lepski_select(&self, sample: &[SpherePoint]) -> Result<EstimatorRun> {
        let start = Instant::now();
        let n = sample.len();
        if n == 0 {
            return Err(Error::EmptySample);
        }
        let (j_min, j_max) = match self.config.bounds(n) {
            Ok(b) => b,
            // a single point carries no resolution information; use the floor
            Err(_) if n == 1 => {
                let j = self.config.floor_level.unwrap_or(self.frame.j0()).max(self.frame.j0());
                (j, j)
            }
            Err(e) => return Err(e),
        };
        if j_min < self.frame.j0() {
            return Err(Error::LevelBelowBase {
                level: j_min,
                j0: self.frame.j0(),
            });
        }
        if j_max > self.frame.max_level() {
            return Err(Error::LevelAboveMax {
                level: j_max,
                max: self.frame.max_level(),
            });
        }
        self.frame.check_quadrature(&self.rule, j_max);
        let levels: Vec<i32> = (j_min..=j_max).collect();
        let estimates = empirical_coefficients(&self.frame, sample, &levels)?;
        let values: Vec<Vec<f64>> = estimates
            .iter()
            .map(|c| self.frame.synthesize_at(self.rule.nodes(), std::slice::from_ref(c)))
            .collect();
        let (u, u_source) = match self.config.u {
            SupBound::Fixed(u) => (u, "fixed"),
            SupBound::Auto => (values[0].iter().copied().fold(1.0, f64::max), "auto-pilot"),
        };
        let mut table = Vec::new();
        for (a, &j) in levels.iter().enumerate() {
            for (b, &l) in levels.iter().enumerate().skip(a + 1) {
                let diff: Vec<f64> = values[a].iter().zip(&values[b]).map(|(x, y)| x - y).collect();
                table.push(PairwiseNorm {
                    j,
                    l,
                    value: self.rule.norm_sq(&diff),
                    threshold: threshold(self.cs, u, l, DIM, n),
                });
            }
        }
        let j_n = select_level(&levels, &table)?;
        Ok(EstimatorRun {
            n,
            j_min,
            j_max,
            j_n,
            u,
            u_source: u_source.into(),
            c_s: self.cs,
            d_n: self.dn.as_ref().map(|d| d.value),
            pairwise_norms: table,
            wall_seconds: start.elapsed().as_secs_f64(),
            estimates,
        })
    }
}

/// `D_N` over the configured levels and a Fibonacci test grid.
pub fn compute_dn(frame: &Frame, settings: &DnSettings) -> Result<DnReport> {
    let rule = product_quadrature(settings.quad_order)?;
    let points = fibonacci_points(settings.test_points, 0.0);
    frame.compute_dn(&rule, &settings.levels, &points, settings.polish)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{sample_streams, DensityOnSphere, TestDensity};
    use proptest::prelude::*;

    fn frame(max_level: i32) -> Frame {
        EstimatorConfig::paper_s5().frame_config(max_level).build().unwrap()
    }

    fn fixed_config(cs: f64) -> EstimatorConfig {
        EstimatorConfig {
            c_s: ThresholdConstant::Fixed(cs),
            quad_order: 128,
            ..EstimatorConfig::paper_s5()
        }
    }

    #[test]
    fn bounds_examples() {
        assert_eq!(resolution_bounds(100, 1.5, 2.0, 2, Some(2)).unwrap(), (2, 2));
        assert_eq!(resolution_bounds(10_000, 1.5, 2.0, 2, Some(2)).unwrap(), (2, 3));
        assert_eq!(resolution_bounds(64, 1.5, 2.0, 2, None).unwrap(), (1, 2));
        assert!(resolution_bounds(100, 1.5, 2.0, 2, Some(5)).is_err());
        assert!(resolution_bounds(1, 1.5, 2.0, 2, None).is_err());
    }

    #[test]
    fn constant_examples() {
        assert!((compute_cs(1.0) - (46.0f64 / 3.0).powi(2)).abs() <= 1e-10);
        let small = (2.0 + 4.0 * (4.0 / 3.0 + 2f64.sqrt()) * 0.1f64).powi(2);
        assert!((compute_cs(0.01) - small).abs() <= 1e-12);
        assert!((compute_cs(0.01) - 9.604).abs() < 1e-3);
        assert!((threshold(2.0, 0.5, 3, 2, 100) - 2.0 * 64.0 / 100.0).abs() <= 1e-15);
    }

    #[test]
    fn config_checks() {
        let warnings = EstimatorConfig::paper_s5().validate().unwrap();
        assert_eq!(warnings.len(), 1);
        let bad = EstimatorConfig {
            r: 0.9,
            ..EstimatorConfig::paper_s5()
        };
        assert!(bad.validate().is_err());
        let bad = EstimatorConfig {
            r_upper: 1.5,
            ..EstimatorConfig::paper_s5()
        };
        assert!(bad.validate().is_err());
        let json = serde_json::to_string(&EstimatorConfig::paper_s5()).unwrap();
        let back: EstimatorConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, EstimatorConfig::paper_s5());
    }

    fn table(values: &[(i32, i32, f64)], thresholds: impl Fn(i32) -> f64) -> Vec<PairwiseNorm> {
        values
            .iter()
            .map(|&(j, l, value)| PairwiseNorm {
                j,
                l,
                value,
                threshold: thresholds(l),
            })
            .collect()
    }

    #[test]
    fn selection_edge_cases() {
        assert_eq!(select_level(&[4], &[]).unwrap(), 4);
        let t = table(&[(2, 3, 5.0), (2, 4, 9.0), (3, 4, 1.0)], |_| f64::INFINITY);
        assert_eq!(select_level(&[2, 3, 4], &t).unwrap(), 2);
        let t = table(&[(2, 3, 5.0), (2, 4, 9.0), (3, 4, 1.0)], |_| 2.0);
        assert_eq!(select_level(&[2, 3, 4], &t).unwrap(), 3);
        let t = table(&[(2, 3, 5.0), (2, 4, 9.0), (3, 4, 3.0)], |_| 2.0);
        assert_eq!(select_level(&[2, 3, 4], &t).unwrap(), 4);
        assert!(select_level(&[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn constant_is_monotone(a in 0.0f64..10.0, b in 0.0f64..10.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(compute_cs(lo) <= compute_cs(hi));
        }

        #[test]
        fn larger_threshold_never_raises_level(
            vals in proptest::collection::vec(0.0f64..1.0, 10),
            c in 0.01f64..2.0,
            factor in 1.0f64..10.0,
        ) {
            let levels = [1, 2, 3, 4, 5];
            let mut pairs = Vec::new();
            let mut it = vals.iter();
            for j in 1..=5 {
                for l in (j + 1)..=5 {
                    pairs.push((j, l, *it.next().unwrap()));
                }
            }
            let thr = |c: f64| move |l: i32| c * (2.0 * l as f64).exp2() / 100.0;
            let low = select_level(&levels, &table(&pairs, thr(c))).unwrap();
            let high = select_level(&levels, &table(&pairs, thr(c * factor))).unwrap();
            prop_assert!(high <= low);
            // predicate recheck
            let t = table(&pairs, thr(c));
            prop_assert!(admissible(low, &t));
            for j in 1..low {
                prop_assert!(!admissible(j, &t));
            }
        }
    }

    #[test]
    fn estimate_linearity() {
        let f = frame(3);
        let pts = fibonacci_points(30, 0.3);
        let x = fibonacci_points(5, 0.7);
        assert!(matches!(estimate_density(&f, &[], 2, &x[0]), Err(Error::EmptySample)));
        for p in &x {
            let one = estimate_density(&f, &pts[..1], 2, p).unwrap();
            assert_eq!(one, f.kernel(2, p, &pts[0]).unwrap());
            let (a, b) = pts.split_at(12);
            let fa = estimate_density(&f, a, 2, p).unwrap();
            let fb = estimate_density(&f, b, 2, p).unwrap();
            let all = estimate_density(&f, &pts, 2, p).unwrap();
            assert!((all - (12.0 * fa + 18.0 * fb) / 30.0).abs() <= 1e-12);
        }
        // coefficient route agrees with the kernel sum
        let c = empirical_coefficients(&f, &pts, &[2, 3]).unwrap();
        for j in [2, 3] {
            let cj = c.iter().find(|c| c.level == j).unwrap();
            let via = f.synthesize_at(&x, std::slice::from_ref(cj));
            for (p, v) in x.iter().zip(via) {
                let direct = estimate_density(&f, &pts, j, p).unwrap();
                assert!((v - direct).abs() <= 1e-10, "{v} {direct}");
            }
        }
    }

    #[test]
    fn estimator_is_unbiased_for_the_projection() {
        let f = frame(3);
        let d = DensityOnSphere::new(TestDensity::F1).unwrap();
        let rule = product_quadrature(128).unwrap();
        let vals: Vec<f64> = rule.nodes().iter().map(|p| d.eval(p)).collect();
        let kf_coeffs = f.project_levels(&rule, &vals, &[(2, LevelKind::Scaling)]).unwrap();
        let xs: Vec<SpherePoint> = fibonacci_points(20, 0.1);
        let kf = f.synthesize_at(&xs, &kf_coeffs);
        let reps = 200;
        let mut draws = vec![Vec::with_capacity(reps); xs.len()];
        for r in 0..reps {
            let s = sample_streams(&d, 50, 1000 + r as u64, 1).unwrap();
            let c = empirical_coefficients(&f, &s.points, &[2]).unwrap();
            for (k, v) in f.synthesize_at(&xs, &c).into_iter().enumerate() {
                draws[k].push(v);
            }
        }
        for (k, dr) in draws.iter().enumerate() {
            let m = dr.iter().sum::<f64>() / reps as f64;
            let var = dr.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (reps - 1) as f64;
            let se = (var / reps as f64).sqrt();
            assert!((m - kf[k]).abs() <= 3.0 * se + 1e-9, "point {k}: {m} vs {} (se {se})", kf[k]);
        }
    }

    #[test]
    fn adaptive_run_invariants() {
        let est = Estimator::with_max_level(fixed_config(1.0), 3).unwrap();
        assert!(est.dn().is_none());
        let d = DensityOnSphere::new(TestDensity::F1).unwrap();
        let s = sample_streams(&d, 10_000, 5, 4).unwrap();
        let run = est.lepski_select(&s.points).unwrap();
        assert_eq!((run.j_min, run.j_max), (2, 3));
        assert!(run.j_min <= run.j_n && run.j_n <= run.j_max);
        assert!(admissible(run.j_n, &run.pairwise_norms));
        for j in run.j_min..run.j_n {
            assert!(!admissible(j, &run.pairwise_norms));
        }
        assert_eq!(run.u_source, "auto-pilot");
        assert!(run.u >= 1.0);
        // the single pairwise norm matches the grid-free definition
        let v2 = run.evaluate(est.frame(), est.rule().nodes(), 2).unwrap();
        let v3 = run.evaluate(est.frame(), est.rule().nodes(), 3).unwrap();
        let diff: Vec<f64> = v2.iter().zip(&v3).map(|(a, b)| a - b).collect();
        assert_eq!(run.pairwise_norms.len(), 1);
        assert!((run.pairwise_norms[0].value - est.rule().norm_sq(&diff)).abs() <= 1e-15);
        let json = serde_json::to_value(&run).unwrap();
        assert!(json.get("pairwise_norms").is_some() && json.get("estimates").is_none());

        // threshold zero forces the finest level, infinite threshold the coarsest
        let strict = Estimator::with_max_level(fixed_config(0.0), 3).unwrap();
        assert_eq!(strict.lepski_select(&s.points).unwrap().j_n, 3);
        let loose = Estimator::with_max_level(fixed_config(f64::INFINITY), 3).unwrap();
        assert_eq!(loose.lepski_select(&s.points).unwrap().j_n, 2);

        assert!(matches!(est.lepski_select(&[]), Err(Error::EmptySample)));
        let one = est.lepski_select(&s.points[..1]).unwrap();
        assert_eq!((one.j_min, one.j_max, one.j_n), (2, 2, 2));
    }

    #[test]
    fn variance_scaling() {
        let f = frame(3);
        let d = DensityOnSphere::new(TestDensity::F1).unwrap();
        let rule = product_quadrature(128).unwrap();
        let dn = f
            .compute_dn(&product_quadrature(64).unwrap(), &[2], &fibonacci_points(200, 0.0), None)
            .unwrap()
            .value;
        let vals: Vec<f64> = rule.nodes().iter().map(|p| d.eval(p)).collect();
        let kf = f.project(&rule, &vals, 2).unwrap();
        let (n, reps) = (300, 40);
        let mut mean = 0.0;
        for r in 0..reps {
            let s = sample_streams(&d, n, 500 + r, 2).unwrap();
            let c = empirical_coefficients(&f, &s.points, &[2]).unwrap();
            let est = f.synthesize_at(rule.nodes(), &c);
            let diff: Vec<f64> = est.iter().zip(&kf).map(|(a, b)| a - b).collect();
            mean += rule.norm_sq(&diff) / reps as f64;
        }
        let bound = 1.5 * dn * 16.0 / n as f64;
        assert!(mean <= bound, "{mean} > {bound}");
        assert!(mean > 0.1 * bound);
    }
}
