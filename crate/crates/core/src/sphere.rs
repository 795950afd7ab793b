//! Geometry of the unit sphere: stereographic charts, the Jacobian of their
//! inverses, the polar parametrization, a product quadrature rule and the
//! three-plane display grid.
//!
//! Chart functions take coordinate slices and work on `S^d` for any `d`;
//! the quadrature and the grid are built for `S^2` only.

use std::f64::consts::PI;
use std::num::NonZeroUsize;
use std::path::Path;

use gauss_quad::GaussLegendre;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance to an excluded pole below which a chart refuses the point.
pub const POLE_TOLERANCE: f64 = 1e-12;

/// Unit vector in `R^3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpherePoint([f64; 3]);

impl SpherePoint {
    /// Rejects vectors whose norm is off by more than `1e-12`.
    pub fn new(coords: [f64; 3]) -> Result<Self> {
        let norm = norm(&coords);
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!(
                "{coords:?} has norm {norm}, not a unit vector"
            )));
        }
        Ok(Self(coords))
    }

    /// Scales a nonzero vector onto the sphere.
    pub fn normalized(v: [f64; 3]) -> Result<Self> {
        let n = norm(&v);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Domain(format!("cannot normalize {v:?}")));
        }
        Ok(Self([v[0] / n, v[1] / n, v[2] / n]))
    }

    pub fn coords(&self) -> [f64; 3] {
        self.0
    }

    pub fn x(&self) -> f64 {
        self.0[0]
    }

    pub fn y(&self) -> f64 {
        self.0[1]
    }

    pub fn z(&self) -> f64 {
        self.0[2]
    }

    /// Reflection through the equatorial plane, `(x, y, -z)`.
    pub fn mirror(&self) -> Self {
        Self([self.0[0], self.0[1], -self.0[2]])
    }

    pub fn region(&self, delta: f64) -> Region {
        let edge = delta.sin();
        if self.z() > edge {
            Region::North
        } else if self.z() < -edge {
            Region::South
        } else {
            Region::Band
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Position relative to the overlap band `|z| <= sin(delta)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    North,
    Band,
    South,
}

/// One of the two stereographic charts. `Plus` projects from the south pole
/// and covers the northern cap `A_+`, `Minus` the reverse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Patch {
    Plus,
    Minus,
}

impl Patch {
    pub const BOTH: [Patch; 2] = [Patch::Plus, Patch::Minus];

    pub fn sign(self) -> f64 {
        match self {
            Patch::Plus => 1.0,
            Patch::Minus => -1.0,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Patch::Plus => '+',
            Patch::Minus => '-',
        }
    }

    pub fn index(self) -> usize {
        match self {
            Patch::Plus => 0,
            Patch::Minus => 1,
        }
    }
}

/// `S_±(x) = (x_1, .., x_d) / (1 ± x_{d+1})`.
pub fn stereo(patch: Patch, x: &[f64]) -> Result<Vec<f64>> {
    let (last, head) = x
        .split_last()
        .ok_or_else(|| Error::Domain("empty coordinate vector".into()))?;
    let denom = 1.0 + patch.sign() * last;
    if denom.abs() <= POLE_TOLERANCE {
        return Err(Error::Domain(format!(
            "{x:?} is the excluded pole of the {} chart",
            patch.symbol()
        )));
    }
    Ok(head.iter().map(|c| c / denom).collect())
}

/// Two-dimensional chart without allocation.
pub fn stereo2(patch: Patch, p: &SpherePoint) -> Result<[f64; 2]> {
    let denom = 1.0 + patch.sign() * p.z();
    if denom.abs() <= POLE_TOLERANCE {
        return Err(Error::Domain(format!(
            "{:?} is the excluded pole of the {} chart",
            p.coords(),
            patch.symbol()
        )));
    }
    Ok([p.x() / denom, p.y() / denom])
}

/// `S_±^{-1}(y) = (2y, ±(1 - |y|^2)) / (1 + |y|^2)`.
pub fn inverse_stereo(patch: Patch, y: &[f64]) -> Vec<f64> {
    let r2: f64 = y.iter().map(|c| c * c).sum();
    let scale = 2.0 / (1.0 + r2);
    let mut out: Vec<f64> = y.iter().map(|c| c * scale).collect();
    out.push(patch.sign() * (1.0 - r2) / (1.0 + r2));
    out
}

pub fn inverse_stereo2(patch: Patch, y: [f64; 2]) -> SpherePoint {
    let r2 = y[0] * y[0] + y[1] * y[1];
    let scale = 2.0 / (1.0 + r2);
    SpherePoint([y[0] * scale, y[1] * scale, patch.sign() * (1.0 - r2) / (1.0 + r2)])
}

/// Jacobian of `S_±^{-1}` at `y ∈ R^d`, `(2 / (1 + |y|^2))^d`.
pub fn jacobian(y: &[f64]) -> f64 {
    let r2: f64 = y.iter().map(|c| c * c).sum();
    (2.0 / (1.0 + r2)).powi(y.len() as i32)
}

/// `Φ_d(θ, ξ) = (ξ sin θ, cos θ)` for `0 < θ < π` and `ξ ∈ S^{d-1}`.
pub fn parametrize(theta: f64, xi: &[f64]) -> Result<Vec<f64>> {
    if !(theta > 0.0 && theta < PI) {
        return Err(Error::Domain(format!("theta = {theta} outside (0, pi)")));
    }
    if xi.is_empty() || (norm(xi) - 1.0).abs() > 1e-12 {
        return Err(Error::Domain(format!("{xi:?} is not a unit vector")));
    }
    let (s, c) = theta.sin_cos();
    let mut out: Vec<f64> = xi.iter().map(|v| v * s).collect();
    out.push(c);
    Ok(out)
}

/// Inverse of [`parametrize`]; fails at the poles.
pub fn angles(x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (last, head) = x
        .split_last()
        .ok_or_else(|| Error::Domain("empty coordinate vector".into()))?;
    let r = norm(head);
    if r <= POLE_TOLERANCE {
        return Err(Error::Domain(format!("{x:?} is a pole")));
    }
    let theta = r.atan2(*last);
    Ok((theta, head.iter().map(|c| c / r).collect()))
}

/// Nodes and positive weights on `S^2`.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    order: usize,
    nodes: Vec<SpherePoint>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn nodes(&self) -> &[SpherePoint] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes per latitude ring; nodes are stored ring by ring.
    pub fn ring_len(&self) -> usize {
        2 * self.order
    }

    pub fn integrate(&self, f: impl Fn(&SpherePoint) -> f64) -> f64 {
        let values: Vec<f64> = self.nodes.iter().map(f).collect();
        self.sum_weighted(&values)
    }

    /// `Σ w_i u_i`, summed ring by ring (weights are constant on a ring).
    pub fn sum_weighted(&self, u: &[f64]) -> f64 {
        let ring = self.ring_len();
        u.chunks(ring)
            .zip(self.weights.chunks(ring))
            .map(|(vals, w)| w[0] * vals.iter().sum::<f64>())
            .sum()
    }

    /// `∫ u v dσ` for values already sampled at the nodes.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        let ring = self.ring_len();
        u.chunks(ring)
            .zip(v.chunks(ring))
            .zip(self.weights.chunks(ring))
            .map(|((a, b), w)| w[0] * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    }

    pub fn norm_sq(&self, u: &[f64]) -> f64 {
        self.inner(u, u)
    }
}

/// Gauss–Legendre in `z = cos θ` (`Q` nodes) times `2Q` equispaced azimuths.
pub fn product_quadrature(order: usize) -> Result<QuadratureRule> {
    if order < 2 {
        return Err(Error::InvalidParameter(format!(
            "quadrature order {order} must be at least 2"
        )));
    }
    let gl = GaussLegendre::new(NonZeroUsize::new(order).expect("order >= 2"));
    let azimuths = 2 * order;
    let dphi = PI / order as f64;
    let mut nodes = Vec::with_capacity(order * azimuths);
    let mut weights = Vec::with_capacity(order * azimuths);
    for &(z, w) in gl.as_node_weight_pairs() {
        let rho = (1.0 - z * z).max(0.0).sqrt();
        for k in 0..azimuths {
            let (s, c) = ((k as f64 + 0.5) * dphi).sin_cos();
            nodes.push(SpherePoint([rho * c, rho * s, z]));
            weights.push(w * dphi);
        }
    }
    Ok(QuadratureRule {
        order,
        nodes,
        weights,
    })
}

/// Number of distinct points of [`evaluation_grid`].
pub const EVALUATION_GRID_SIZE: usize = 46_710;

/// Union of the three coordinate-plane lattices with step `0.02` over
/// `{-0.98, .., 0.98}`, each lifted to both sheets of the sphere.
pub fn evaluation_grid() -> Vec<SpherePoint> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    // integer key: lattice coordinates in units of 1/50, the lifted one squared
    for plane in 0..3 {
        for a in -49i64..=49 {
            for b in -49i64..=49 {
                let rest = 2500 - a * a - b * b;
                if rest < 0 {
                    continue;
                }
                for sign in [1.0, -1.0] {
                    let (u, v) = (a as f64 / 50.0, b as f64 / 50.0);
                    let w = sign * (rest as f64).sqrt() / 50.0;
                    let (coords, key) = match plane {
                        0 => ([u, v, w], (a, b, sign as i64 * rest, 2)),
                        1 => ([u, w, v], (a, b, sign as i64 * rest, 1)),
                        _ => ([w, u, v], (a, b, sign as i64 * rest, 0)),
                    };
                    // canonical key independent of which plane produced the point
                    let canon = canonical_key(key);
                    if seen.insert(canon) {
                        out.push(SpherePoint::normalized(coords).expect("nonzero"));
                    }
                }
            }
        }
    }
    out
}

/// Maps (lattice a, lattice b, signed square of lifted coordinate, lifted axis)
/// to a triple of exact per-axis keys: each axis stores `sign * 2500 * c^2`.
fn canonical_key((a, b, lifted, axis): (i64, i64, i64, usize)) -> [i64; 3] {
    let sq = |t: i64| t.signum() * t * t;
    let (p, q) = (sq(a), sq(b));
    match axis {
        2 => [p, q, lifted],
        1 => [p, lifted, q],
        _ => [lifted, p, q],
    }
}

pub fn write_points_csv(path: &Path, points: &[SpherePoint]) -> Result<()> {
    crate::io::atomic_write(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["x", "y", "z"]).map_err(crate::io::csv_error)?;
        for p in points {
            csv.serialize(p.coords()).map_err(crate::io::csv_error)?;
        }
        csv.flush()?;
        Ok(())
    })
}

pub fn read_points_csv(path: &Path) -> Result<Vec<SpherePoint>> {
    let mut reader = csv::Reader::from_path(path).map_err(crate::io::csv_error)?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<[f64; 3]>().enumerate() {
        let coords = row.map_err(|e| Error::Parse {
            line: i + 2,
            message: e.to_string(),
        })?;
        let p = SpherePoint::new(coords).or_else(|_| {
            // text round-off: accept and renormalize within 1e-9
            if (norm(&coords) - 1.0).abs() <= 1e-9 {
                SpherePoint::normalized(coords)
            } else {
                Err(Error::Parse {
                    line: i + 2,
                    message: format!("{coords:?} is not on the unit sphere"),
                })
            }
        })?;
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_point(rng: &mut ChaCha8Rng) -> SpherePoint {
        loop {
            let v = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            let n = norm(&v);
            if n > 0.1 && n < 1.0 {
                return SpherePoint::normalized(v).unwrap();
            }
        }
    }

    #[test]
    fn chart_examples() {
        assert_eq!(stereo(Patch::Minus, &[1.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(stereo(Patch::Plus, &[0.0, 0.0, 1.0]).unwrap(), vec![0.0, 0.0]);
        assert!(stereo(Patch::Plus, &[0.0, 0.0, -1.0]).is_err());
        assert!(stereo(Patch::Minus, &[0.0, 0.0, 1.0]).is_err());
        assert!(stereo(Patch::Minus, &[1e-7, 0.0, 1.0 - 5e-15]).is_err());
    }

    #[test]
    fn charts_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let p = random_point(&mut rng);
            for patch in Patch::BOTH {
                let y = stereo(patch, &p.coords()).unwrap();
                let back = inverse_stereo(patch, &y);
                for i in 0..3 {
                    assert!((back[i] - p.coords()[i]).abs() <= 1e-12);
                }
                let y2 = stereo2(patch, &p).unwrap();
                assert_eq!(y2.to_vec(), y);
                assert_eq!(inverse_stereo2(patch, y2).coords().to_vec(), back);
            }
        }
    }

    #[test]
    fn jacobian_examples() {
        assert_eq!(jacobian(&[0.0, 0.0]), 4.0);
        assert!((jacobian(&[1.0, 1.0]) - 4.0 / 9.0).abs() < 1e-15);
        // polar integral over |y| <= 100, pieces graded towards the origin
        let gl = GaussLegendre::new(NonZeroUsize::new(100).unwrap());
        let radial: f64 = [(0.0, 1.0), (1.0, 10.0), (10.0, 100.0)]
            .iter()
            .map(|&(a, b)| gl.integrate(a, b, |r| jacobian(&[r, 0.0]) * r))
            .sum();
        let total = 2.0 * PI * radial;
        // the pole cap outside radius 100 has area 4π/(1+100²)
        let cap = 4.0 * PI / (1.0 + 100.0f64.powi(2));
        assert!((total - (4.0 * PI - cap)).abs() < 1e-9, "{total}");
        assert!((total - 4.0 * PI).abs() < 1.3e-3);
    }

    #[test]
    fn parametrization() {
        let p = parametrize(PI / 2.0, &[1.0, 0.0]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] == 0.0 && p[2].abs() < 1e-15);
        let p = parametrize(PI / 3.0, &[0.0, 1.0]).unwrap();
        assert!(p[0] == 0.0);
        assert!((p[1] - 3f64.sqrt() / 2.0).abs() < 1e-15);
        assert!((p[2] - 0.5).abs() < 1e-15);
        assert!(parametrize(0.0, &[1.0, 0.0]).is_err());
        assert!(parametrize(PI, &[1.0, 0.0]).is_err());
        assert!(angles(&[0.0, 0.0, 1.0]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let theta = rng.random_range(1e-3..PI - 1e-3);
            let phi: f64 = rng.random_range(0.0..2.0 * PI);
            let xi = [phi.cos(), phi.sin()];
            let x = parametrize(theta, &xi).unwrap();
            let (t, back) = angles(&x).unwrap();
            assert!((t - theta).abs() <= 1e-12);
            assert!((back[0] - xi[0]).abs() <= 1e-12 && (back[1] - xi[1]).abs() <= 1e-12);
            let y = stereo(Patch::Plus, &x).unwrap();
            let expected = theta.sin() / (1.0 + theta.cos());
            assert!((y[0] - xi[0] * expected).abs() <= 1e-12);
            assert!((y[1] - xi[1] * expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn quadrature_exactness() {
        for q in [2, 8, 64, 256] {
            let rule = product_quadrature(q).unwrap();
            assert_eq!(rule.len(), 2 * q * q);
            let area = rule.integrate(|_| 1.0);
            assert!((area - 4.0 * PI).abs() <= 1e-12, "Q={q}: {area}");
            let z2 = rule.integrate(|p| p.z() * p.z());
            assert!((z2 - 4.0 * PI / 3.0).abs() <= 1e-10, "Q={q}: {z2}");
            assert!(rule.weights().iter().all(|&w| w > 0.0));
            let raw: f64 = rule.weights().iter().sum();
            assert!((raw - 4.0 * PI).abs() <= 1e-8);
        }
        assert!(product_quadrature(1).is_err());
    }

    #[test]
    fn quadrature_of_first_test_density() {
        let f1 = |z: f64| {
            let a = z.asin();
            if z >= (PI / 8.0).sin() {
                0.3785 * (a - PI / 8.0).powi(2) * (a - 7.0 * PI / 8.0).powi(2)
            } else {
                0.0
            }
        };
        // oracle: z = sin a, dσ = 2π cos a da on [π/8, π/2]
        let gl = GaussLegendre::new(NonZeroUsize::new(64).unwrap());
        let exact = gl.integrate(PI / 8.0, PI / 2.0, |a| 2.0 * PI * a.cos() * f1(a.sin()));
        assert!((exact - 1.0).abs() < 1e-2, "{exact}");
        let rule = product_quadrature(400).unwrap();
        let approx = rule.integrate(|p| f1(p.z()));
        assert!((approx - 1.0).abs() < 1e-2, "{approx}");
        assert!((approx - exact).abs() < 1e-3);
    }

    #[test]
    fn grid_contents() {
        let grid = evaluation_grid();
        assert_eq!(grid.len(), EVALUATION_GRID_SIZE);
        for p in &grid {
            assert!((norm(&p.coords()) - 1.0).abs() <= 1e-12);
        }
        let z = (1.0f64 - 0.98 * 0.98).sqrt();
        let has = |c: [f64; 3]| {
            grid.iter()
                .any(|p| (0..3).all(|i| (p.coords()[i] - c[i]).abs() < 1e-12))
        };
        assert!(has([0.98, 0.0, z]));
        assert!(has([0.98, 0.0, -z]));
    }

    #[test]
    fn grid_size_by_brute_force() {
        // independent count: collect rounded coordinates of every lifted point
        let mut set = std::collections::BTreeSet::new();
        for i in -49i32..=49 {
            for j in -49i32..=49 {
                let rest = 2500 - i * i - j * j;
                if rest < 0 {
                    continue;
                }
                let (u, v) = (i as f64 * 0.02, j as f64 * 0.02);
                let w = (rest as f64).sqrt() * 0.02;
                for s in [w, -w] {
                    for c in [[u, v, s], [u, s, v], [s, u, v]] {
                        let key: Vec<i64> = c.iter().map(|t| (t * 1e9).round() as i64).collect();
                        set.insert(key);
                    }
                }
            }
        }
        assert_eq!(set.len(), EVALUATION_GRID_SIZE);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pts.csv");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<SpherePoint> = (0..50).map(|_| random_point(&mut rng)).collect();
        write_points_csv(&path, &pts).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x,y,z\n"));
        assert_eq!(read_points_csv(&path).unwrap(), pts);
    }
}
