//! The two-patch frame on `S^2`: elements `E^± T^± psi^e_I`, the projection
//! kernels `K_j`, the detail kernels `G_j`, frame coefficients computed by
//! quadrature and the Besov functional built from them.
//!
//! Evaluation goes through the charts. At a sphere point `x` and patch `P`
//! an element is a weighted sum of at most two planar values, at `S_P(x)` and
//! at `S_P` of the mirror point (see [`ChartTerms`]). Everything downstream is
//! separable along the two planar axes.

use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use std::sync::Arc;

use crate::aww::{Aww, AwwForm};
use crate::cubes::{AxisRange, DyadicCube, Enlargement, LocalizedSystem, SupportRule};
use crate::daubechies::{
    eval_scaled, eval_scaled_at, AxisWindow, Component, Vertex, WaveletFamily, WaveletTable,
    DEFAULT_DEPTH,
};
use crate::error::{Error, Result};
use crate::sphere::{stereo2, Patch, QuadratureRule, SpherePoint};

/// Number of work units a node loop is split into. Fixed so that reductions
/// do not depend on the thread count.
const PARTS: usize = 16;

pub(crate) fn parts(n: usize) -> Vec<std::ops::Range<usize>> {
    let size = n.div_ceil(PARTS).max(1);
    (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect()
}

/// `sqrt(1 / J_2(a)) = (1 + |a|^2) / 2`.
fn rho(a: [f64; 2]) -> f64 {
    0.5 * (1.0 + a[0] * a[0] + a[1] * a[1])
}

/// Radius of the planar disc that contains every chart argument used by a
/// patch: `cos δ / (1 - sin δ)`.
pub fn chart_radius(delta: f64) -> f64 {
    delta.cos() / (1.0 - delta.sin())
}

/// A function on the plane, lifted to the sphere by the transport operators.
pub trait PlaneFunction {
    fn eval(&self, a: [f64; 2]) -> f64;

    /// Radius of a disc containing the support, when bounded.
    fn support_radius(&self) -> Option<f64> {
        None
    }
}

impl<F: Fn([f64; 2]) -> f64> PlaneFunction for F {
    fn eval(&self, a: [f64; 2]) -> f64 {
        self(a)
    }
}

/// `psi^e_I` read from a table.
#[derive(Debug, Clone, Copy)]
pub struct CubeFunction<'a> {
    pub table: &'a WaveletTable,
    pub e: Vertex,
    pub cube: &'a DyadicCube,
}

impl PlaneFunction for CubeFunction<'_> {
    fn eval(&self, a: [f64; 2]) -> f64 {
        eval_scaled(self.table, self.e, self.cube.level, &self.cube.k, &a)
    }

    fn support_radius(&self) -> Option<f64> {
        let side = self.cube.side_length();
        let len = self.table.support_end();
        let r2: f64 = self
            .cube
            .k
            .iter()
            .map(|&k| {
                let (lo, hi) = (k as f64 * side, (k as f64 + len) * side);
                lo.abs().max(hi.abs()).powi(2)
            })
            .sum();
        Some(r2.sqrt())
    }
}

/// One planar evaluation contributing to an element value: `weight * psi(a)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ChartTerm {
    pub weight: f64,
    pub a: [f64; 2],
}

/// At most two chart terms for one patch at one sphere point.
#[derive(Debug, Clone, Copy, Default)]
pub struct ChartTerms {
    len: usize,
    terms: [ChartTerm; 2],
}

impl ChartTerms {
    pub fn as_slice(&self) -> &[ChartTerm] {
        &self.terms[..self.len]
    }

    fn push(&mut self, t: ChartTerm) {
        self.terms[self.len] = t;
        self.len += 1;
    }
}

/// Which part of a level a kernel or a coefficient array covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LevelKind {
    /// `e = 0`, the scaling functions spanning `V_j`.
    Scaling,
    /// `e != 0`, the wavelets of level `j`.
    Detail,
}

impl LevelKind {
    pub fn vertices(self) -> Vec<Vertex> {
        match self {
            LevelKind::Scaling => vec![Vertex::ZERO],
            LevelKind::Detail => Vertex::nonzero(2).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameElement {
    pub patch: Patch,
    pub e: u8,
    pub level: i32,
    pub k: [i64; 2],
}

impl FrameElement {
    pub fn vertex(&self) -> Vertex {
        Vertex(self.e)
    }
}

#[derive(Debug, Clone, Copy)]
struct TermWindows {
    weight: f64,
    // [component][axis]
    win: [[AxisWindow; 2]; 2],
}

/// Per-axis table windows of every chart term of a point at one level.
#[derive(Debug, Clone)]
pub struct PointWindows {
    level: i32,
    lens: [usize; 2],
    terms: [[TermWindows; 2]; 2],
}

impl PointWindows {
    fn patch_terms(&self, p: usize) -> &[TermWindows] {
        &self.terms[p][..self.lens[p]]
    }

    pub fn level(&self) -> i32 {
        self.level
    }

    pub fn is_empty(&self) -> bool {
        self.lens == [0, 0]
    }
}

/// Coefficients of one patch and one vertex on the rectangle of admissible shifts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientBlock {
    pub patch: Patch,
    pub e: u8,
    pub ranges: [AxisRange; 2],
    pub values: Vec<f64>,
}

impl CoefficientBlock {
    fn zeros(patch: Patch, e: Vertex, ranges: [AxisRange; 2]) -> Self {
        Self {
            patch,
            e: e.0,
            ranges,
            values: vec![0.0; ranges[0].len() * ranges[1].len()],
        }
    }

    pub fn get(&self, k: [i64; 2]) -> f64 {
        if !self.ranges[0].contains(k[0]) || !self.ranges[1].contains(k[1]) {
            return 0.0;
        }
        let row = (k[0] - self.ranges[0].lo) as usize;
        self.values[row * self.ranges[1].len() + (k[1] - self.ranges[1].lo) as usize]
    }

    pub fn set(&mut self, k: [i64; 2], v: f64) -> Result<()> {
        if !self.ranges[0].contains(k[0]) || !self.ranges[1].contains(k[1]) {
            return Err(Error::InvalidParameter(format!("shift {k:?} outside the index set")));
        }
        let row = (k[0] - self.ranges[0].lo) as usize;
        let n2 = self.ranges[1].len();
        self.values[row * n2 + (k[1] - self.ranges[1].lo) as usize] = v;
        Ok(())
    }

    /// `(k, value)` pairs in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = ([i64; 2], f64)> + '_ {
        let n2 = self.ranges[1].len();
        let (lo1, lo2) = (self.ranges[0].lo, self.ranges[1].lo);
        self.values
            .iter()
            .enumerate()
            .map(move |(i, &v)| ([lo1 + (i / n2) as i64, lo2 + (i % n2) as i64], v))
    }
}

/// All coefficients of one level and kind, both patches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCoefficients {
    pub level: i32,
    pub kind: LevelKind,
    /// Ordered by patch (`+` then `-`), then by vertex.
    pub blocks: Vec<CoefficientBlock>,
}

impl LevelCoefficients {
    pub fn sum_sq(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.values.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    pub fn scale(&mut self, alpha: f64) {
        for b in &mut self.blocks {
            b.values.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    /// `self += alpha * other`; both must come from the same frame and level.
    pub fn add_scaled(&mut self, other: &LevelCoefficients, alpha: f64) {
        debug_assert_eq!(self.level, other.level);
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            a.values
                .iter_mut()
                .zip(&b.values)
                .for_each(|(x, y)| *x += alpha * y);
        }
    }

    pub fn block(&self, patch: Patch, e: Vertex) -> Option<&CoefficientBlock> {
        self.blocks.iter().find(|b| b.patch == patch && b.e == e.0)
    }

    pub fn block_mut(&mut self, patch: Patch, e: Vertex) -> Option<&mut CoefficientBlock> {
        self.blocks.iter_mut().find(|b| b.patch == patch && b.e == e.0)
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.values.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Frame coefficients `<f, g>` for the base scaling level and the detail levels
/// `j0..=j_cap`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub j0: i32,
    pub j_cap: i32,
    pub base: LevelCoefficients,
    pub details: Vec<LevelCoefficients>,
}

impl CoefficientSet {
    /// `Σ <f, g>^2` over every element present.
    pub fn sum_sq(&self) -> f64 {
        self.base.sum_sq() + self.details.iter().map(LevelCoefficients::sum_sq).sum::<f64>()
    }

    pub fn scale(&mut self, alpha: f64) {
        self.base.scale(alpha);
        self.details.iter_mut().for_each(|d| d.scale(alpha));
    }

    /// Truncated Besov `B^s_{2,∞}` norm: the larger of `2^{j0 s} ||base||` and
    /// `max_j 2^{j s} ||detail_j||`.
    pub fn besov_norm(&self, s: f64) -> Result<f64> {
        if !(s > 0.0) {
            return Err(Error::InvalidParameter(format!("smoothness {s} must be positive")));
        }
        if self.j_cap < self.j0 {
            return Err(Error::LevelBelowBase {
                level: self.j_cap,
                j0: self.j0,
            });
        }
        let base = (self.j0 as f64 * s).exp2() * self.base.sum_sq().sqrt();
        Ok(self
            .details
            .iter()
            .map(|d| (d.level as f64 * s).exp2() * d.sum_sq().sqrt())
            .fold(base, f64::max))
    }

    /// Restriction to detail levels `..= j_cap`.
    pub fn truncated(&self, j_cap: i32) -> Result<CoefficientSet> {
        if j_cap < self.j0 {
            return Err(Error::LevelBelowBase {
                level: j_cap,
                j0: self.j0,
            });
        }
        Ok(CoefficientSet {
            j0: self.j0,
            j_cap: j_cap.min(self.j_cap),
            base: self.base.clone(),
            details: self
                .details
                .iter()
                .filter(|d| d.level <= j_cap)
                .cloned()
                .collect(),
        })
    }

    /// CSV with columns `hemisphere,e,j,k1,k2,value`; base rows carry `e = 0`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::io::atomic_write(path, |w| {
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record(["hemisphere", "e", "j", "k1", "k2", "value"])
                .map_err(crate::io::csv_error)?;
            for level in std::iter::once(&self.base).chain(&self.details) {
                for b in &level.blocks {
                    for (k, v) in b.entries() {
                        csv.write_record([
                            b.patch.symbol().to_string(),
                            b.e.to_string(),
                            level.level.to_string(),
                            k[0].to_string(),
                            k[1].to_string(),
                            format!("{v:e}"),
                        ])
                        .map_err(crate::io::csv_error)?;
                    }
                }
            }
            csv.flush()?;
            Ok(())
        })
    }
}

/// Result of a kernel-bound scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnReport {
    /// `max_j max_y ∫ K_j(x, y)^2 dσ(x) / 2^{2j}`.
    pub value: f64,
    pub level: i32,
    pub argmax: [f64; 3],
    /// Per-level maxima of the normalized integral.
    pub per_level: Vec<(i32, f64)>,
    pub test_points: usize,
    pub quad_order: usize,
    pub polished: bool,
}

/// Local ascent applied to the best test points of a kernel-bound scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Polish {
    /// How many of the best points per level to refine.
    pub starts: usize,
    /// Initial geodesic step in radians.
    pub step: f64,
    /// Stop once the step falls below this.
    pub min_step: f64,
}

impl Default for Polish {
    fn default() -> Self {
        Self {
            starts: 6,
            step: 0.04,
            min_step: 2e-3,
        }
    }
}

/// Everything needed to build a [`Frame`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameConfig {
    pub order: usize,
    pub epsilon: Enlargement,
    pub support_rule: SupportRule,
    pub delta: f64,
    pub form: AwwForm,
    /// Table depth used at the finest level.
    pub base_depth: u32,
    pub max_level: i32,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            order: 8,
            epsilon: Enlargement::Integer(4),
            support_rule: SupportRule::Strict,
            delta: std::f64::consts::PI / 6.0,
            form: AwwForm::Cartesian,
            base_depth: DEFAULT_DEPTH,
            max_level: 6,
        }
    }
}

impl FrameConfig {
    pub fn build(&self) -> Result<Frame> {
        let family = WaveletFamily::new(self.order)?;
        // j0 may depend on the table (effective rule); probe at the base depth
        let probe = WaveletTable::cascade(family.clone(), self.base_depth)?;
        let j0 = LocalizedSystem::new(Arc::new(probe), 2, self.epsilon, self.support_rule, self.max_level)?.j0();
        let depth = self.base_depth + (self.max_level - j0) as u32;
        let table = WaveletTable::cascade(family, depth)?;
        let system = LocalizedSystem::new(Arc::new(table), 2, self.epsilon, self.support_rule, self.max_level)?;
        Frame::new(system, Aww::new(self.delta, self.form)?, self.base_depth)
    }
}

/// The Parseval frame `E^+(S_+) ∪ E^-(S_-)` built on a localized system.
///
/// Every level reads the table on one common grid in the plane, of step
/// `2^-(base_depth + max_level)`, so level `j` uses depth
/// `base_depth + max_level - j`. With linear interpolation this keeps the
/// two-scale relation exact between levels.
#[derive(Debug, Clone)]
pub struct Frame {
    system: LocalizedSystem,
    aww: Aww,
    base_depth: u32,
}

impl Frame {
    pub fn new(system: LocalizedSystem, aww: Aww, base_depth: u32) -> Result<Self> {
        if system.dim() != 2 {
            return Err(Error::InvalidParameter(format!(
                "the sphere frame needs a planar system, got dimension {}",
                system.dim()
            )));
        }
        let need = 2.0 * (chart_radius(aww.delta()) - 1.0);
        let eps = system.epsilon().value();
        if eps < need {
            return Err(Error::InvalidEnlargement(format!(
                "eps = {eps} is below 2(cos δ/(1 - sin δ) - 1) = {need:.6} for δ = {}",
                aww.delta()
            )));
        }
        let need_depth = base_depth + (system.max_level() - system.j0()) as u32;
        if system.table().depth() < need_depth {
            return Err(Error::InvalidDepth {
                depth: system.table().depth(),
                min: need_depth,
            });
        }
        Ok(Self {
            system,
            aww,
            base_depth,
        })
    }

    /// Table depth read at `level`.
    pub fn depth_for(&self, level: i32) -> u32 {
        self.base_depth + (self.system.max_level() - level).max(0) as u32
    }

    pub fn system(&self) -> &LocalizedSystem {
        &self.system
    }

    pub fn aww(&self) -> &Aww {
        &self.aww
    }

    pub fn table(&self) -> &WaveletTable {
        self.system.table()
    }

    pub fn j0(&self) -> i32 {
        self.system.j0()
    }

    pub fn max_level(&self) -> i32 {
        self.system.max_level()
    }

    /// Chart terms of `E^P T^P` at `x`: the blend weights times the transport
    /// factor, at `S_P(x)` and at `S_P(x, y, -z)`.
    pub fn chart_terms(&self, patch: Patch, x: &SpherePoint) -> ChartTerms {
        let blend = self.aww.blend(patch, x.z());
        let mut out = ChartTerms::default();
        if blend.direct != 0.0 {
            // a nonzero weight never sits on the excluded pole
            let a = stereo2(patch, x).expect("weighted point inside the chart");
            out.push(ChartTerm {
                weight: blend.direct * rho(a),
                a,
            });
        }
        if blend.mirror != 0.0 {
            let a = stereo2(patch, &x.mirror()).expect("band point inside the chart");
            out.push(ChartTerm {
                weight: blend.mirror * rho(a),
                a,
            });
        }
        out
    }

    /// `T^P f (x) = f(S_P x) / sqrt(J_2(S_P x))`.
    pub fn eval_transport(&self, patch: Patch, f: &impl PlaneFunction, x: &SpherePoint) -> Result<f64> {
        match stereo2(patch, x) {
            Ok(a) => Ok(rho(a) * f.eval(a)),
            Err(e) => match f.support_radius() {
                Some(_) => Ok(0.0),
                None => Err(e),
            },
        }
    }

    /// `E^P T^P f (x)` for an arbitrary planar function.
    pub fn eval_lifted(&self, patch: Patch, f: &impl PlaneFunction, x: &SpherePoint) -> f64 {
        self.chart_terms(patch, x)
            .as_slice()
            .iter()
            .map(|t| t.weight * f.eval(t.a))
            .sum()
    }

    pub fn element(&self, patch: Patch, e: Vertex, cube: &DyadicCube) -> Result<FrameElement> {
        if cube.k.len() != 2 {
            return Err(Error::InvalidParameter("planar cubes have two shifts".into()));
        }
        Ok(FrameElement {
            patch,
            e: e.0,
            level: cube.level,
            k: [cube.k[0], cube.k[1]],
        })
    }

    pub fn eval_element(&self, el: &FrameElement, x: &SpherePoint) -> f64 {
        let table = self.table();
        self.chart_terms(el.patch, x)
            .as_slice()
            .iter()
            .map(|t| t.weight * eval_scaled_at(table, self.depth_for(el.level), el.vertex(), el.level, &el.k, &t.a))
            .sum()
    }

    /// Admissible shifts of `level` whose support meets the chart disc, per
    /// component; all other elements vanish on the sphere.
    pub fn active_range(&self, level: i32, component: Component) -> Result<AxisRange> {
        let r = self.system.axis_range(level, component)?;
        let reach = chart_radius(self.aww.delta()) * (level as f64).exp2();
        let len = self.table().support_end();
        Ok(AxisRange {
            lo: r.lo.max((-reach - len).floor() as i64),
            hi: r.hi.min(reach.ceil() as i64),
        })
    }

    fn ranges(&self, level: i32) -> Result<[[AxisRange; 2]; 2]> {
        let s = self.active_range(level, Component::Scaling)?;
        let w = self.active_range(level, Component::Wavelet)?;
        Ok([[s, s], [w, w]])
    }

    /// Table windows of `x` at `level`; wavelet windows only when asked for.
    pub fn prepare(&self, level: i32, x: &SpherePoint, with_wavelet: bool) -> PointWindows {
        let table = self.table();
        let depth = self.depth_for(level);
        let mut out = PointWindows {
            level,
            lens: [0, 0],
            terms: [[TermWindows {
                weight: 0.0,
                win: [[AxisWindow::default(); 2]; 2],
            }; 2]; 2],
        };
        for patch in Patch::BOTH {
            let p = patch.index();
            for t in self.chart_terms(patch, x).as_slice() {
                let slot = &mut out.terms[p][out.lens[p]];
                slot.weight = t.weight;
                for axis in 0..2 {
                    table.window_at(Component::Scaling, level, depth, t.a[axis], &mut slot.win[0][axis]);
                    if with_wavelet {
                        table.window_at(Component::Wavelet, level, depth, t.a[axis], &mut slot.win[1][axis]);
                    }
                }
                out.lens[p] += 1;
            }
        }
        out
    }

    /// Kernel between two prepared points (same level).
    pub fn kernel_prepared(&self, kind: LevelKind, x: &PointWindows, y: &PointWindows) -> Result<f64> {
        debug_assert_eq!(x.level, y.level);
        let ranges = self.ranges(x.level)?;
        let vertices = kind.vertices();
        let mut acc = 0.0;
        for p in 0..2 {
            // c[i][l] pairs term i of x with term l of y; summed in an order
            // invariant under swapping x and y so that K(x,y) == K(y,x) bitwise
            let mut c = [[0.0f64; 2]; 2];
            for (i, t) in x.patch_terms(p).iter().enumerate() {
                for (l, u) in y.patch_terms(p).iter().enumerate() {
                    let mut sum = 0.0;
                    for e in &vertices {
                        let mut prod = 1.0;
                        for axis in 0..2 {
                            let comp = e.component(axis).bit() as usize;
                            let r = ranges[comp][axis];
                            prod *= t.win[comp][axis].dot(&u.win[comp][axis], r.lo, r.hi);
                            if prod == 0.0 {
                                break;
                            }
                        }
                        sum += prod;
                    }
                    c[i][l] = t.weight * u.weight * sum;
                }
            }
            acc += c[0][0] + c[1][1] + (c[0][1] + c[1][0]);
        }
        Ok(acc)
    }

    /// `K_j(x, y)`.
    pub fn kernel(&self, level: i32, x: &SpherePoint, y: &SpherePoint) -> Result<f64> {
        self.ranges(level)?;
        let (px, py) = (self.prepare(level, x, false), self.prepare(level, y, false));
        self.kernel_prepared(LevelKind::Scaling, &px, &py)
    }

    /// `G_j(x, y)`, the detail kernel with `K_{j+1} = K_j + G_j`.
    pub fn detail_kernel(&self, level: i32, x: &SpherePoint, y: &SpherePoint) -> Result<f64> {
        self.ranges(level)?;
        let (px, py) = (self.prepare(level, x, true), self.prepare(level, y, true));
        self.kernel_prepared(LevelKind::Detail, &px, &py)
    }

    /// `K_j(x, y)` by enumerating every cube of the level; slow reference.
    pub fn kernel_direct(&self, level: i32, x: &SpherePoint, y: &SpherePoint) -> Result<f64> {
        let cubes = self.system.enumerate_cubes(level, Vertex::ZERO)?;
        let mut acc = 0.0;
        for patch in Patch::BOTH {
            for cube in &cubes {
                let el = self.element(patch, Vertex::ZERO, cube)?;
                let gx = self.eval_element(&el, x);
                if gx != 0.0 {
                    acc += gx * self.eval_element(&el, y);
                }
            }
        }
        Ok(acc)
    }

    /// Number of scaling elements `g` of the level with `g(x) g(y) != 0`.
    pub fn contributing_elements(&self, level: i32, x: &SpherePoint, y: &SpherePoint) -> Result<usize> {
        let range = self.active_range(level, Component::Scaling)?;
        let (px, py) = (self.prepare(level, x, false), self.prepare(level, y, false));
        let mut count = 0;
        for p in 0..2 {
            let support = |pw: &PointWindows| {
                let mut set = std::collections::BTreeSet::new();
                for t in pw.patch_terms(p) {
                    let [w1, w2] = t.win[0];
                    for k1 in w1.first.max(range.lo)..=w1.last().min(range.hi) {
                        for k2 in w2.first.max(range.lo)..=w2.last().min(range.hi) {
                            if w1.get(k1) * w2.get(k2) != 0.0 {
                                set.insert((k1, k2));
                            }
                        }
                    }
                }
                set
            };
            let (sx, sy) = (support(&px), support(&py));
            count += sx.intersection(&sy).count();
        }
        Ok(count)
    }

    /// A zero coefficient array for one level.
    pub fn zero_coefficients(&self, level: i32, kind: LevelKind) -> Result<LevelCoefficients> {
        let ranges = self.ranges(level)?;
        let mut blocks = Vec::new();
        for patch in Patch::BOTH {
            for e in kind.vertices() {
                let r = [
                    ranges[e.component(0).bit() as usize][0],
                    ranges[e.component(1).bit() as usize][1],
                ];
                blocks.push(CoefficientBlock::zeros(patch, e, r));
            }
        }
        Ok(LevelCoefficients { level, kind, blocks })
    }

    /// `coeffs[g] += weight * g(x)` for every element of the array.
    pub fn accumulate(&self, coeffs: &mut LevelCoefficients, x: &PointWindows, weight: f64) {
        debug_assert_eq!(coeffs.level, x.level);
        for block in &mut coeffs.blocks {
            let p = block.patch.index();
            let e = Vertex(block.e);
            let (c0, c1) = (e.component(0).bit() as usize, e.component(1).bit() as usize);
            let [r1, r2] = block.ranges;
            let n2 = r2.len();
            for t in x.patch_terms(p) {
                let (w1, w2) = (&t.win[c0][0], &t.win[c1][1]);
                let scale = weight * t.weight;
                let (lo2, hi2) = (w2.first.max(r2.lo), w2.last().min(r2.hi));
                if lo2 > hi2 {
                    continue;
                }
                let vals2 = &w2.values[(lo2 - w2.first) as usize..=(hi2 - w2.first) as usize];
                for k1 in w1.first.max(r1.lo)..=w1.last().min(r1.hi) {
                    let f = scale * w1.values[(k1 - w1.first) as usize];
                    let row = (k1 - r1.lo) as usize * n2 + (lo2 - r2.lo) as usize;
                    let dst = &mut block.values[row..row + vals2.len()];
                    for (d, v) in dst.iter_mut().zip(vals2) {
                        *d += f * v;
                    }
                }
            }
        }
    }

    /// `Σ_g coeffs[g] g(x)`.
    pub fn synthesize(&self, coeffs: &LevelCoefficients, x: &PointWindows) -> f64 {
        debug_assert_eq!(coeffs.level, x.level);
        let mut acc = 0.0;
        for block in &coeffs.blocks {
            let p = block.patch.index();
            let e = Vertex(block.e);
            let (c0, c1) = (e.component(0).bit() as usize, e.component(1).bit() as usize);
            let [r1, r2] = block.ranges;
            let n2 = r2.len();
            for t in x.patch_terms(p) {
                let (w1, w2) = (&t.win[c0][0], &t.win[c1][1]);
                let (lo2, hi2) = (w2.first.max(r2.lo), w2.last().min(r2.hi));
                if lo2 > hi2 {
                    continue;
                }
                let vals2 = &w2.values[(lo2 - w2.first) as usize..=(hi2 - w2.first) as usize];
                let mut sum = 0.0;
                for k1 in w1.first.max(r1.lo)..=w1.last().min(r1.hi) {
                    let row = (k1 - r1.lo) as usize * n2 + (lo2 - r2.lo) as usize;
                    let src = &block.values[row..row + vals2.len()];
                    let inner: f64 = src.iter().zip(vals2).map(|(c, v)| c * v).sum();
                    sum += w1.values[(k1 - w1.first) as usize] * inner;
                }
                acc += t.weight * sum;
            }
        }
        acc
    }

    /// Logs a warning when the rule is coarser than `2^{level+4}`.
    pub fn check_quadrature(&self, rule: &QuadratureRule, level: i32) -> bool {
        let need = 1usize << (level + 4).max(0);
        if rule.order() < need {
            warn!(
                "quadrature order {} is below 2^(j+4) = {need} for level {level}",
                rule.order()
            );
            false
        } else {
            true
        }
    }

    /// `<f, g>` for every element of the given levels, from values of `f` at
    /// the quadrature nodes. One array per requested `(level, kind)`.
    pub fn project_levels(
        &self,
        rule: &QuadratureRule,
        values: &[f64],
        requests: &[(i32, LevelKind)],
    ) -> Result<Vec<LevelCoefficients>> {
        if values.len() != rule.len() {
            return Err(Error::InvalidParameter(format!(
                "{} values for {} quadrature nodes",
                values.len(),
                rule.len()
            )));
        }
        let mut levels: Vec<i32> = requests.iter().map(|r| r.0).collect();
        levels.sort_unstable();
        levels.dedup();
        for &j in &levels {
            self.check_quadrature(rule, j);
        }
        let zeros: Vec<LevelCoefficients> = requests
            .iter()
            .map(|&(j, kind)| self.zero_coefficients(j, kind))
            .collect::<Result<_>>()?;
        let needs_wavelet = |j: i32| requests.iter().any(|&(l, k)| l == j && k == LevelKind::Detail);
        let nodes = rule.nodes();
        let weights = rule.weights();
        let partials: Vec<Vec<LevelCoefficients>> = parts(nodes.len())
            .into_par_iter()
            .map(|part| {
                let mut acc = zeros.clone();
                for i in part {
                    let wv = weights[i] * values[i];
                    if wv == 0.0 {
                        continue;
                    }
                    for &j in &levels {
                        let pw = self.prepare(j, &nodes[i], needs_wavelet(j));
                        for c in acc.iter_mut().filter(|c| c.level == j) {
                            self.accumulate(c, &pw, wv);
                        }
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

    /// Values of `Σ_g coeffs[g] g` at the quadrature nodes (levels summed).
    pub fn synthesize_at(&self, points: &[SpherePoint], coeffs: &[LevelCoefficients]) -> Vec<f64> {
        let mut levels: Vec<(i32, bool)> = Vec::new();
        for c in coeffs {
            let wav = c.kind == LevelKind::Detail;
            match levels.iter_mut().find(|l| l.0 == c.level) {
                Some(l) => l.1 |= wav,
                None => levels.push((c.level, wav)),
            }
        }
        points
            .par_iter()
            .with_min_len(256)
            .map(|x| {
                let mut acc = 0.0;
                for &(j, wav) in &levels {
                    let pw = self.prepare(j, x, wav);
                    if pw.is_empty() {
                        continue;
                    }
                    for c in coeffs.iter().filter(|c| c.level == j) {
                        acc += self.synthesize(c, &pw);
                    }
                }
                acc
            })
            .collect()
    }

    /// Frame coefficients of `f` (given at the nodes) through detail level `j_cap`.
    pub fn frame_coefficients(&self, rule: &QuadratureRule, values: &[f64], j_cap: i32) -> Result<CoefficientSet> {
        let j0 = self.j0();
        if j_cap < j0 {
            return Err(Error::LevelBelowBase { level: j_cap, j0 });
        }
        let mut requests = vec![(j0, LevelKind::Scaling)];
        requests.extend((j0..=j_cap).map(|j| (j, LevelKind::Detail)));
        let mut out = self.project_levels(rule, values, &requests)?;
        let details = out.split_off(1);
        Ok(CoefficientSet {
            j0,
            j_cap,
            base: out.pop().expect("base level"),
            details,
        })
    }

    /// `K_j f` at the quadrature nodes.
    pub fn project(&self, rule: &QuadratureRule, values: &[f64], level: i32) -> Result<Vec<f64>> {
        let coeffs = self.project_levels(rule, values, &[(level, LevelKind::Scaling)])?;
        Ok(self.synthesize_at(rule.nodes(), &coeffs))
    }

    /// `||f - K_j f||_2` by quadrature.
    pub fn approximation_error(&self, rule: &QuadratureRule, values: &[f64], level: i32) -> Result<f64> {
        let kf = self.project(rule, values, level)?;
        let diff: Vec<f64> = values.iter().zip(&kf).map(|(a, b)| a - b).collect();
        Ok(rule.norm_sq(&diff).sqrt())
    }

    /// `∫ K_j(x, y)^2 dσ(x)` for every `y`.
    pub fn kernel_sq_integrals(&self, rule: &QuadratureRule, level: i32, ys: &[SpherePoint]) -> Result<Vec<f64>> {
        self.ranges(level)?;
        let prepared: Vec<PointWindows> = ys.iter().map(|y| self.prepare(level, y, false)).collect();
        let nodes = rule.nodes();
        let weights = rule.weights();
        let partials: Vec<Result<Vec<f64>>> = parts(nodes.len())
            .into_par_iter()
            .map(|part| {
                let mut acc = vec![0.0; ys.len()];
                for i in part {
                    let px = self.prepare(level, &nodes[i], false);
                    if px.is_empty() {
                        continue;
                    }
                    for (a, py) in acc.iter_mut().zip(&prepared) {
                        let k = self.kernel_prepared(LevelKind::Scaling, &px, py)?;
                        *a += weights[i] * k * k;
                    }
                }
                Ok(acc)
            })
            .collect();
        let mut total = vec![0.0; ys.len()];
        for part in partials {
            for (t, p) in total.iter_mut().zip(part?) {
                *t += p;
            }
        }
        Ok(total)
    }

    /// `max_j max_y ∫ K_j(x, y)^2 dσ(x) / 2^{2j}` over the given test points,
    /// optionally refined by local ascent from the best points.
    pub fn compute_dn(
        &self,
        rule: &QuadratureRule,
        levels: &[i32],
        test_points: &[SpherePoint],
        polish: Option<Polish>,
    ) -> Result<DnReport> {
        if levels.is_empty() || test_points.is_empty() {
            return Err(Error::InvalidParameter("empty level list or test grid".into()));
        }
        let mut best = (f64::NEG_INFINITY, levels[0], test_points[0]);
        let mut per_level = Vec::new();
        for &j in levels {
            self.check_quadrature(rule, j);
            let norm = (2.0 * j as f64).exp2();
            let vals: Vec<f64> = self
                .kernel_sq_integrals(rule, j, test_points)?
                .into_iter()
                .map(|v| v / norm)
                .collect();
            let mut order: Vec<usize> = (0..vals.len()).collect();
            order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
            let mut level_best = (vals[order[0]], test_points[order[0]]);
            if let Some(cfg) = polish {
                for &i in order.iter().take(cfg.starts) {
                    let (v, p) = self.ascend(rule, j, test_points[i], vals[i], cfg)?;
                    if v > level_best.0 {
                        level_best = (v, p);
                    }
                }
            }
            per_level.push((j, level_best.0));
            if level_best.0 > best.0 {
                best = (level_best.0, j, level_best.1);
            }
        }
        Ok(DnReport {
            value: best.0,
            level: best.1,
            argmax: best.2.coords(),
            per_level,
            test_points: test_points.len(),
            quad_order: rule.order(),
            polished: polish.is_some(),
        })
    }

    fn ascend(
        &self,
        rule: &QuadratureRule,
        level: i32,
        start: SpherePoint,
        start_value: f64,
        cfg: Polish,
    ) -> Result<(f64, SpherePoint)> {
        let norm = (2.0 * level as f64).exp2();
        let (mut p, mut v, mut h) = (start, start_value, cfg.step);
        while h >= cfg.min_step {
            let candidates = tangent_moves(&p, h);
            let vals = self.kernel_sq_integrals(rule, level, &candidates)?;
            let (i, &best) = vals
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .expect("four moves");
            if best / norm > v {
                v = best / norm;
                p = candidates[i];
            } else {
                h *= 0.5;
            }
        }
        Ok((v, p))
    }
}

/// Four points at geodesic distance `h` from `p` along an orthonormal tangent frame.
fn tangent_moves(p: &SpherePoint, h: f64) -> Vec<SpherePoint> {
    let c = p.coords();
    let helper = if c[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
    let cross = |a: [f64; 3], b: [f64; 3]| {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    };
    let unit = |v: [f64; 3]| {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        [v[0] / n, v[1] / n, v[2] / n]
    };
    let t1 = unit(cross(c, helper));
    let t2 = cross(c, t1);
    let (s, co) = h.sin_cos();
    [t1, t2, t1.map(|v| -v), t2.map(|v| -v)]
        .iter()
        .map(|t| {
            SpherePoint::normalized([
                co * c[0] + s * t[0],
                co * c[1] + s * t[1],
                co * c[2] + s * t[2],
            ])
            .expect("unit combination")
        })
        .collect()
}

/// Roughly uniform points on `S^2` (Fibonacci spiral), `offset` in `[0, 1)`
/// shifts the spiral so that two grids with different offsets are disjoint.
pub fn fibonacci_points(n: usize, offset: f64) -> Vec<SpherePoint> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64 + 2.0 * std::f64::consts::PI * offset;
            SpherePoint::normalized([r * phi.cos(), r * phi.sin(), z]).expect("unit")
        })
        .collect()
}
