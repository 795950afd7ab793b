//! Compactly supported Daubechies scaling functions and wavelets.
//!
//! The functions are sampled on the dyadic grid `m * 2^-p` over their support
//! `[0, 2N-1]` by the cascade (refinement) procedure: the values at the integers
//! come from the eigenvector of the refinement matrix for eigenvalue 1, and the
//! finer dyadic nodes are filled level by level from the two-scale relation.
//! Between nodes the tables are read with linear interpolation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_ORDER: usize = 2;
pub const MAX_ORDER: usize = 10;
/// Smallest table depth accepted by [`WaveletTable::cascade`].
pub const MIN_DEPTH: u32 = 4;
/// Grid depth used by default: step `2^-10` at unit scale.
pub const DEFAULT_DEPTH: u32 = 10;
/// Longest window returned by [`WaveletTable::window`] (`2N` for `N = 10`).
pub const MAX_WINDOW: usize = 2 * MAX_ORDER;

/// Low-pass filters `h_0..h_{2N-1}` normalized to `sum h_k = sqrt(2)`, with the
/// extremal-phase convention whose scaling function is supported on `[0, 2N-1]`.
const DB2: [f64; 4] = [
    0.48296291314453416,
    0.8365163037378079,
    0.2241438680420134,
    -0.12940952255126037,
];
const DB3: [f64; 6] = [
    0.33267055295008263,
    0.8068915093110925,
    0.45987750211849154,
    -0.13501102001025458,
    -0.08544127388202666,
    0.03522629188570953,
];
const DB4: [f64; 8] = [
    0.2303778133088965,
    0.7148465705529157,
    0.6308807679298589,
    -0.027983769416859854,
    -0.18703481171909309,
    0.030841381835560764,
    0.0328830116668852,
    -0.010597401785069032,
];
const DB5: [f64; 10] = [
    0.16010239797419293,
    0.6038292697971896,
    0.7243085284377729,
    0.13842814590132074,
    -0.24229488706638203,
    -0.032244869584638375,
    0.07757149384004572,
    -0.006241490212798274,
    -0.012580751999081999,
    0.0033357252854737712,
];
const DB6: [f64; 12] = [
    0.11154074335010947,
    0.49462389039845306,
    0.7511339080210954,
    0.31525035170919763,
    -0.22626469396543983,
    -0.12976686756726194,
    0.09750160558732304,
    0.027522865530305727,
    -0.03158203931748603,
    0.0005538422011614961,
    0.004777257510945511,
    -0.0010773010853084796,
];
const DB7: [f64; 14] = [
    0.07785205408500918,
    0.3965393194819173,
    0.7291320908462351,
    0.4697822874051931,
    -0.14390600392856498,
    -0.22403618499387498,
    0.07130921926683026,
    0.08061260915108308,
    -0.03802993693501441,
    -0.01657454163066688,
    0.01255099855609984,
    0.0004295779729213665,
    -0.0018016407040474908,
    0.00035371379997452024,
];
const DB8: [f64; 16] = [
    0.05441584224310401,
    0.31287159091429995,
    0.6756307362972898,
    0.5853546836542067,
    -0.015829105256349306,
    -0.2840155429615469,
    0.0004724845739132828,
    0.12874742662047847,
    -0.017369301001807547,
    -0.044088253930794755,
    0.013981027917398282,
    0.008746094047405777,
    -0.004870352993451574,
    -0.00039174037337694705,
    0.0006754494064505693,
    -0.00011747678412476953,
];
const DB9: [f64; 18] = [
    0.038077947363878345,
    0.24383467461259034,
    0.6048231236901112,
    0.6572880780513005,
    0.13319738582500756,
    -0.2932737832791749,
    -0.09684078322297646,
    0.14854074933810638,
    0.03072568147933338,
    -0.06763282906132997,
    0.00025094711483145197,
    0.022361662123679096,
    -0.004723204757751397,
    -0.00428150368246343,
    0.0018476468830562265,
    0.00023038576352319597,
    -0.0002519631889427101,
    3.93473203162716e-05,
];
const DB10: [f64; 20] = [
    0.026670057900555554,
    0.1881768000776915,
    0.5272011889317256,
    0.6884590394536035,
    0.2811723436605775,
    -0.24984642432731538,
    -0.19594627437737705,
    0.12736934033579325,
    0.09305736460357235,
    -0.07139414716639708,
    -0.029457536821875813,
    0.033212674059341,
    0.0036065535669561697,
    -0.010733175483330575,
    0.001395351747052901,
    0.001992405295185056,
    -0.0006858566949597116,
    -0.00011646685512928545,
    9.358867032006959e-05,
    -1.3264202894521244e-05,
];

fn filter_for(order: usize) -> Option<&'static [f64]> {
    Some(match order {
        2 => &DB2,
        3 => &DB3,
        4 => &DB4,
        5 => &DB5,
        6 => &DB6,
        7 => &DB7,
        8 => &DB8,
        9 => &DB9,
        10 => &DB10,
        _ => return None,
    })
}

/// Univariate factor of a tensor wavelet: `psi^0 = phi` or `psi^1 = psi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Component {
    Scaling,
    Wavelet,
}

impl Component {
    pub fn bit(self) -> u8 {
        match self {
            Component::Scaling => 0,
            Component::Wavelet => 1,
        }
    }
}

/// A vertex `e` of `{0,1}^d`, stored as a bit mask (bit `i` is `e_i`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Vertex(pub u8);

impl Vertex {
    pub const ZERO: Vertex = Vertex(0);

    pub fn from_bits(bits: &[u8]) -> Self {
        Vertex(
            bits.iter()
                .enumerate()
                .fold(0u8, |acc, (i, &b)| acc | ((b & 1) << i)),
        )
    }

    pub fn component(self, axis: usize) -> Component {
        if (self.0 >> axis) & 1 == 1 {
            Component::Wavelet
        } else {
            Component::Scaling
        }
    }

    pub fn bits(self, dim: usize) -> Vec<u8> {
        (0..dim).map(|i| (self.0 >> i) & 1).collect()
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    /// All of `{0,1}^d`, zero vertex first.
    pub fn all(dim: usize) -> impl Iterator<Item = Vertex> {
        (0..(1u8 << dim)).map(Vertex)
    }

    /// The nonzero vertices.
    pub fn nonzero(dim: usize) -> impl Iterator<Item = Vertex> {
        (1..(1u8 << dim)).map(Vertex)
    }
}

/// Daubechies filter of order `N` (`2N` taps).
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletFamily {
    order: usize,
    low_pass: Vec<f64>,
}

impl WaveletFamily {
    pub fn new(order: usize) -> Result<Self> {
        let low_pass = filter_for(order).ok_or(Error::UnsupportedOrder {
            order,
            min: MIN_ORDER,
            max: MAX_ORDER,
        })?;
        Ok(Self {
            order,
            low_pass: low_pass.to_vec(),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn low_pass(&self) -> &[f64] {
        &self.low_pass
    }

    /// `g_k = (-1)^k h_{2N-1-k}`, which keeps the wavelet on `[0, 2N-1]`.
    pub fn high_pass(&self) -> Vec<f64> {
        let last = self.support_end();
        (0..=last)
            .map(|k| {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                sign * self.low_pass[last - k]
            })
            .collect()
    }

    pub fn support_end(&self) -> usize {
        2 * self.order - 1
    }
}

/// Values of `phi` and `psi` at `t = m 2^-p`, `m = 0..=(2N-1) 2^p`.
#[derive(Debug, Clone)]
pub struct WaveletTable {
    family: WaveletFamily,
    depth: u32,
    phi: Vec<f64>,
    psi: Vec<f64>,
}

/// Values of `2^{j/2} psi^c(2^j x - k)` for the consecutive shifts `k` whose
/// open support contains `x`.
#[derive(Debug, Clone, Copy)]
pub struct AxisWindow {
    pub first: i64,
    pub len: usize,
    pub values: [f64; MAX_WINDOW],
}

impl Default for AxisWindow {
    fn default() -> Self {
        Self {
            first: 0,
            len: 0,
            values: [0.0; MAX_WINDOW],
        }
    }
}

impl AxisWindow {
    pub fn last(&self) -> i64 {
        self.first + self.len as i64 - 1
    }

    pub fn get(&self, k: i64) -> f64 {
        let off = k - self.first;
        if off < 0 || off >= self.len as i64 {
            0.0
        } else {
            self.values[off as usize]
        }
    }

    /// `sum_k self(k) other(k)` over shifts in `[lo, hi]`.
    pub fn dot(&self, other: &AxisWindow, lo: i64, hi: i64) -> f64 {
        let start = self.first.max(other.first).max(lo);
        let end = self.last().min(other.last()).min(hi);
        let mut acc = 0.0;
        let mut k = start;
        while k <= end {
            acc += self.values[(k - self.first) as usize] * other.values[(k - other.first) as usize];
            k += 1;
        }
        acc
    }
}

impl WaveletTable {
    pub fn cascade(family: WaveletFamily, depth: u32) -> Result<Self> {
        if depth < MIN_DEPTH {
            return Err(Error::InvalidDepth {
                depth,
                min: MIN_DEPTH,
            });
        }
        let h = family.low_pass();
        let last = family.support_end();
        let scale = 1usize << depth;
        let n_nodes = last * scale + 1;
        let sqrt2 = std::f64::consts::SQRT_2;

        // phi(0) = phi(2N-1) = 0 for N >= 2; the interior integers solve
        // phi(m) = sqrt2 sum_k h_k phi(2m - k) with sum_m phi(m) = 1.
        let interior = last - 1;
        let mut a = DMatrix::<f64>::zeros(interior, interior);
        for row in 0..interior {
            let m = row + 1;
            for col in 0..interior {
                let n = col + 1;
                let k = 2 * m as i64 - n as i64;
                if (0..=last as i64).contains(&k) {
                    a[(row, col)] = sqrt2 * h[k as usize];
                }
            }
            a[(row, row)] -= 1.0;
        }
        let mut rhs = DVector::<f64>::zeros(interior);
        for col in 0..interior {
            a[(interior - 1, col)] = 1.0;
        }
        rhs[interior - 1] = 1.0;
        let integer_values = a
            .lu()
            .solve(&rhs)
            .ok_or(Error::DegenerateRefinement {
                order: family.order(),
            })?;
        if integer_values.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateRefinement {
                order: family.order(),
            });
        }

        let mut phi = vec![0.0; n_nodes];
        for (row, v) in integer_values.iter().enumerate() {
            phi[(row + 1) * scale] = *v;
        }
        for level in 1..=depth {
            let stride = 1usize << (depth - level);
            let mut idx = stride;
            while idx < n_nodes {
                phi[idx] = sqrt2 * refine_at(h, &phi, 2 * idx, scale);
                idx += 2 * stride;
            }
        }

        let g = family.high_pass();
        let psi = (0..n_nodes)
            .map(|idx| sqrt2 * refine_at(&g, &phi, 2 * idx, scale))
            .collect();

        Ok(Self {
            family,
            depth,
            phi,
            psi,
        })
    }

    pub fn family(&self) -> &WaveletFamily {
        &self.family
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn step(&self) -> f64 {
        (-(self.depth as f64)).exp2()
    }

    pub fn support_end(&self) -> f64 {
        self.family.support_end() as f64
    }

    pub fn values(&self, component: Component) -> &[f64] {
        match component {
            Component::Scaling => &self.phi,
            Component::Wavelet => &self.psi,
        }
    }

    pub fn phi(&self, t: f64) -> f64 {
        self.value(Component::Scaling, t)
    }

    pub fn psi(&self, t: f64) -> f64 {
        self.value(Component::Wavelet, t)
    }

    /// Linear interpolation between dyadic nodes; zero outside `[0, 2N-1]`.
    pub fn value(&self, component: Component, t: f64) -> f64 {
        self.value_at(component, self.depth, t)
    }

    /// Linear interpolation between the nodes of a coarser depth `<= self.depth()`.
    pub fn value_at(&self, component: Component, depth: u32, t: f64) -> f64 {
        debug_assert!(depth <= self.depth);
        let values = self.values(component);
        let stride = 1usize << (self.depth - depth);
        let n = (values.len() - 1) / stride;
        let pos = t * (1u64 << depth) as f64;
        if !(pos > 0.0) || pos >= n as f64 {
            return 0.0;
        }
        let i = pos.floor();
        let frac = pos - i;
        let i = i as usize * stride;
        values[i] + frac * (values[i + stride] - values[i])
    }

    /// Interpolated values for all shifts `k` with `2^j x - k` inside the support.
    pub fn window(&self, component: Component, level: i32, x: f64, out: &mut AxisWindow) {
        self.window_at(component, level, self.depth, x, out)
    }

    /// [`window`](Self::window) read at a coarser depth.
    pub fn window_at(&self, component: Component, level: i32, depth: u32, x: f64, out: &mut AxisWindow) {
        debug_assert!(depth <= self.depth);
        let values = self.values(component);
        let stride = 1usize << (self.depth - depth);
        let last = self.family.support_end() as i64;
        let u = x * (level as f64).exp2();
        let amp = (level as f64 * 0.5).exp2();
        let scale = 1i64 << depth;
        let pos = u * scale as f64;
        let base = pos.floor();
        let frac = pos - base;
        let base = base as i64;
        // shifts with 0 < u - k < last
        let k_hi = u.floor() as i64;
        let k_lo = (u - last as f64).floor() as i64 + 1;
        out.first = k_lo;
        out.len = 0;
        let max_idx = last * scale;
        for k in k_lo..=k_hi {
            let i = base - k * scale;
            let v = if i < 0 || i >= max_idx {
                0.0
            } else {
                let i = i as usize * stride;
                values[i] + frac * (values[i + stride] - values[i])
            };
            out.values[out.len] = amp * v;
            out.len += 1;
        }
    }

    /// Smallest interval outside which `|f| <= threshold * max|f|`, snapped to
    /// table nodes.
    pub fn effective_support(&self, component: Component, threshold: f64) -> (f64, f64) {
        let values = self.values(component);
        let peak = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let cut = threshold * peak;
        let first = values.iter().position(|v| v.abs() > cut).unwrap_or(0);
        let last = values
            .iter()
            .rposition(|v| v.abs() > cut)
            .unwrap_or(values.len() - 1);
        let step = self.step();
        // the true function may exceed the cut anywhere between the last
        // small node and the first large one
        let lo = first.saturating_sub(1) as f64 * step;
        let hi = ((last + 1).min(values.len() - 1)) as f64 * step;
        (lo, hi)
    }

    /// Largest `|phi(t) - sqrt2 sum_k h_k phi(2t - k)|` over the nodes of depth `p - 1`.
    pub fn refinement_residual(&self) -> f64 {
        let scale = 1usize << self.depth;
        let h = self.family.low_pass();
        let sqrt2 = std::f64::consts::SQRT_2;
        (0..self.phi.len())
            .step_by(2)
            .map(|idx| (self.phi[idx] - sqrt2 * refine_at(h, &self.phi, 2 * idx, scale)).abs())
            .fold(0.0, f64::max)
    }
}

/// `sum_k coeffs[k] phi[node - k * scale]` with out-of-range nodes read as zero.
fn refine_at(coeffs: &[f64], phi: &[f64], node: usize, scale: usize) -> f64 {
    let node = node as i64;
    coeffs
        .iter()
        .enumerate()
        .filter_map(|(k, c)| {
            let q = node - (k * scale) as i64;
            (q >= 0 && (q as usize) < phi.len()).then(|| c * phi[q as usize])
        })
        .sum()
}

/// `psi^e_I(x) = 2^{jd/2} prod_i psi^{e_i}(2^j x_i - k_i)`, zero outside the support box.
pub fn eval_scaled(table: &WaveletTable, e: Vertex, level: i32, k: &[i64], x: &[f64]) -> f64 {
    eval_scaled_at(table, table.depth(), e, level, k, x)
}

/// [`eval_scaled`] with the table read at a coarser depth.
pub fn eval_scaled_at(table: &WaveletTable, depth: u32, e: Vertex, level: i32, k: &[i64], x: &[f64]) -> f64 {
    debug_assert_eq!(k.len(), x.len());
    let dil = (level as f64).exp2();
    let amp = (level as f64 * k.len() as f64 * 0.5).exp2();
    let mut acc = amp;
    for (axis, (&ki, &xi)) in k.iter().zip(x).enumerate() {
        let t = dil * xi - ki as f64;
        if t <= 0.0 || t >= table.support_end() {
            return 0.0;
        }
        acc *= table.value_at(e.component(axis), depth, t);
    }
    acc
}
