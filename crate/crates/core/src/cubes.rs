//! Dyadic cubes and the localized wavelet system on the enlarged cube
//! `J_eps = [-1-eps, 1+eps]^d`.
//!
//! A cube `I = 2^-j (k + [0,1]^d)` carries `psi^e_I`, whose support is
//! `2^-j (k + [0, 2N-1]^d)`. The system keeps the cubes whose support lies in
//! `J_eps`, from the smallest level `j0` at which a support fits into `J_{eps/2}`
//! onwards. Because the tensor product factorizes, every index set
//! `D_j(e)` is a product of one integer range per axis.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::daubechies::{Component, Vertex, WaveletTable};
use crate::error::{Error, Result};

/// Admissible enlargements: `eps = k` or `eps = 2^-k` with `k >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Enlargement {
    Integer(u32),
    Dyadic(u32),
}

impl Enlargement {
    pub fn value(self) -> f64 {
        match self {
            Enlargement::Integer(k) => k as f64,
            Enlargement::Dyadic(k) => (-(k as f64)).exp2(),
        }
    }

    /// Accepts a positive integer or an exact negative power of two.
    pub fn from_value(eps: f64) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::InvalidEnlargement(format!("{eps} is not positive")));
        }
        if eps >= 1.0 && eps.fract() == 0.0 && eps <= u32::MAX as f64 {
            return Ok(Enlargement::Integer(eps as u32));
        }
        let k = -eps.log2();
        if k.fract() == 0.0 && k >= 1.0 {
            return Ok(Enlargement::Dyadic(k as u32));
        }
        Err(Error::InvalidEnlargement(format!(
            "{eps} is neither a positive integer nor 2^-k for k >= 1"
        )))
    }
}

/// How the support of a generator is measured when testing inclusion in `J_eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SupportRule {
    /// The full support `[0, 2N-1]`.
    Strict,
    /// The part where `|psi^c| > threshold * max|psi^c|`.
    Effective { threshold: f64 },
}

impl Default for SupportRule {
    fn default() -> Self {
        SupportRule::Strict
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DyadicCube {
    pub level: i32,
    pub k: Vec<i64>,
}

impl DyadicCube {
    pub fn new(level: i32, k: Vec<i64>) -> Self {
        Self { level, k }
    }

    pub fn side_length(&self) -> f64 {
        (-(self.level as f64)).exp2()
    }

    /// Lower corner `2^-j k`.
    pub fn corner(&self) -> Vec<f64> {
        let side = self.side_length();
        self.k.iter().map(|&k| k as f64 * side).collect()
    }
}

/// Inclusive range of shifts along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisRange {
    pub lo: i64,
    pub hi: i64,
}

impl AxisRange {
    pub fn len(&self) -> usize {
        if self.hi < self.lo {
            0
        } else {
            (self.hi - self.lo + 1) as usize
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, k: i64) -> bool {
        self.lo <= k && k <= self.hi
    }
}

/// Smallest `j` with `length * 2^-j <= eps / 2`.
pub fn base_level_for_length(length: f64, eps: f64) -> i32 {
    let mut j = (length / (eps / 2.0)).log2().ceil() as i32;
    // guard the float log against off-by-one at exact powers of two
    while length * (-(j as f64)).exp2() > eps / 2.0 {
        j += 1;
    }
    while length * (-((j - 1) as f64)).exp2() <= eps / 2.0 {
        j -= 1;
    }
    j
}

/// `j0` for the full support `[0, 2N-1]`.
pub fn compute_j0(order: usize, eps: f64) -> i32 {
    base_level_for_length((2 * order - 1) as f64, eps)
}

/// Shifts `k` with `2^-j (k + [lo, hi]) ⊂ [-(1+eps), 1+eps]`.
pub fn axis_range(level: i32, eps: f64, support: (f64, f64)) -> AxisRange {
    let edge = (1.0 + eps) * (level as f64).exp2();
    AxisRange {
        lo: (-edge - support.0).ceil() as i64,
        hi: (edge - support.1).floor() as i64,
    }
}

/// Every cube at `level` whose full support lies in `J_eps`, for the given
/// vertex, enumerated in lexicographic order of `k`. No base-level check.
pub fn cubes_in_enlarged_cube(order: usize, eps: f64, dim: usize, level: i32) -> Vec<DyadicCube> {
    let range = axis_range(level, eps, (0.0, (2 * order - 1) as f64));
    product_cubes(level, &vec![range; dim])
}

fn product_cubes(level: i32, ranges: &[AxisRange]) -> Vec<DyadicCube> {
    let total: usize = ranges.iter().map(AxisRange::len).product();
    let mut out = Vec::with_capacity(total);
    if total == 0 {
        return out;
    }
    let mut k: Vec<i64> = ranges.iter().map(|r| r.lo).collect();
    loop {
        out.push(DyadicCube::new(level, k.clone()));
        let mut axis = ranges.len();
        loop {
            if axis == 0 {
                return out;
            }
            axis -= 1;
            if k[axis] < ranges[axis].hi {
                k[axis] += 1;
                break;
            }
            k[axis] = ranges[axis].lo;
        }
    }
}

/// The localized system `S(J, eps)` with its per-level index sets materialized
/// (as axis ranges) from `j0` up to `max_level`.
#[derive(Debug, Clone)]
pub struct LocalizedSystem {
    table: Arc<WaveletTable>,
    dim: usize,
    epsilon: Enlargement,
    rule: SupportRule,
    j0: i32,
    max_level: i32,
    supports: [(f64, f64); 2],
    ranges: Vec<[AxisRange; 2]>,
}

impl LocalizedSystem {
    pub fn new(
        table: Arc<WaveletTable>,
        dim: usize,
        epsilon: Enlargement,
        rule: SupportRule,
        max_level: i32,
    ) -> Result<Self> {
        if dim == 0 || dim > 7 {
            return Err(Error::InvalidParameter(format!("dimension {dim} out of range 1..=7")));
        }
        let full = (0.0, table.support_end());
        let supports = match rule {
            SupportRule::Strict => [full, full],
            SupportRule::Effective { threshold } => {
                if !(threshold > 0.0 && threshold < 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "effective-support threshold {threshold} must lie in (0, 1)"
                    )));
                }
                [
                    table.effective_support(Component::Scaling, threshold),
                    table.effective_support(Component::Wavelet, threshold),
                ]
            }
        };
        let eps = epsilon.value();
        let scaling_len = supports[0].1 - supports[0].0;
        let j0 = base_level_for_length(scaling_len, eps);
        if max_level < j0 {
            return Err(Error::LevelBelowBase {
                level: max_level,
                j0,
            });
        }
        let ranges = (j0..=max_level)
            .map(|j| {
                [
                    axis_range(j, eps, supports[0]),
                    axis_range(j, eps, supports[1]),
                ]
            })
            .collect();
        Ok(Self {
            table,
            dim,
            epsilon,
            rule,
            j0,
            max_level,
            supports,
            ranges,
        })
    }

    pub fn table(&self) -> &WaveletTable {
        &self.table
    }

    pub fn table_arc(&self) -> &Arc<WaveletTable> {
        &self.table
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.table.family().order()
    }

    pub fn epsilon(&self) -> Enlargement {
        self.epsilon
    }

    pub fn rule(&self) -> SupportRule {
        self.rule
    }

    pub fn j0(&self) -> i32 {
        self.j0
    }

    pub fn max_level(&self) -> i32 {
        self.max_level
    }

    /// Support interval of the univariate factor used by the inclusion test.
    pub fn support(&self, component: Component) -> (f64, f64) {
        self.supports[component.bit() as usize]
    }

    fn check_level(&self, level: i32) -> Result<usize> {
        if level < self.j0 {
            return Err(Error::LevelBelowBase {
                level,
                j0: self.j0,
            });
        }
        if level > self.max_level {
            return Err(Error::LevelAboveMax {
                level,
                max: self.max_level,
            });
        }
        Ok((level - self.j0) as usize)
    }

    pub fn axis_range(&self, level: i32, component: Component) -> Result<AxisRange> {
        let idx = self.check_level(level)?;
        Ok(self.ranges[idx][component.bit() as usize])
    }

    pub fn ranges(&self, level: i32, e: Vertex) -> Result<Vec<AxisRange>> {
        let idx = self.check_level(level)?;
        Ok((0..self.dim)
            .map(|axis| self.ranges[idx][e.component(axis).bit() as usize])
            .collect())
    }

    pub fn count(&self, level: i32, e: Vertex) -> Result<usize> {
        Ok(self.ranges(level, e)?.iter().map(AxisRange::len).product())
    }

    pub fn enumerate_cubes(&self, level: i32, e: Vertex) -> Result<Vec<DyadicCube>> {
        Ok(product_cubes(level, &self.ranges(level, e)?))
    }

    /// The inclusion predicate `supp psi^e_I ⊂ J_eps` under this system's rule.
    pub fn admits(&self, cube: &DyadicCube, e: Vertex) -> bool {
        let eps = self.epsilon.value();
        let side = cube.side_length();
        cube.k.iter().enumerate().all(|(axis, &k)| {
            let (lo, hi) = self.support(e.component(axis));
            side * (k as f64 + lo) >= -(1.0 + eps) && side * (k as f64 + hi) <= 1.0 + eps
        })
    }
}
