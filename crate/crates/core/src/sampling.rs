//! Uniform and rejection sampling on `S^2` and the two zonal test densities.

use std::f64::consts::{FRAC_PI_2, PI};
use std::num::NonZeroUsize;
use std::str::FromStr;

use gauss_quad::GaussLegendre;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::SpherePoint;

/// Proposals after which a low acceptance rate aborts the sampler.
pub const STALL_PROPOSALS: u64 = 1_000_000;
/// Acceptance rate below which the sampler is considered stalled.
pub const STALL_RATE: f64 = 1e-4;

/// Normalized triple of independent standard normals.
pub fn uniform_sphere<R: Rng + ?Sized>(rng: &mut R) -> SpherePoint {
    loop {
        let v: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        if n2 > 0.0 && n2.is_finite() {
            return SpherePoint::normalized(v).expect("nonzero vector");
        }
    }
}

/// The densities used by the experiments. All are zonal: they depend on
/// `a = arcsin z` only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestDensity {
    /// `0.3785 (a - π/8)^2 (a - 7π/8)^2` on `z >= sin(π/8)`.
    F1,
    /// `42.2126 (a - π/4)^2 (a - π/2)^2` on `z >= sin(π/4)`.
    F2,
    /// `1 / 4π`.
    Uniform,
}

impl TestDensity {
    pub fn name(self) -> &'static str {
        match self {
            TestDensity::F1 => "f1",
            TestDensity::F2 => "f2",
            TestDensity::Uniform => "uniform",
        }
    }

    /// Value as a function of `a = arcsin z`.
    pub fn profile(self, a: f64) -> f64 {
        match self {
            TestDensity::F1 => {
                if a < PI / 8.0 {
                    0.0
                } else {
                    0.3785 * (a - PI / 8.0).powi(2) * (a - 7.0 * PI / 8.0).powi(2)
                }
            }
            TestDensity::F2 => {
                if a < PI / 4.0 {
                    0.0
                } else {
                    42.2126 * (a - PI / 4.0).powi(2) * (a - FRAC_PI_2).powi(2)
                }
            }
            TestDensity::Uniform => 1.0 / (4.0 * PI),
        }
    }

    /// Lower end of the support in `a`.
    pub fn support_start(self) -> f64 {
        match self {
            TestDensity::F1 => PI / 8.0,
            TestDensity::F2 => PI / 4.0,
            TestDensity::Uniform => -FRAC_PI_2,
        }
    }

    pub fn eval(self, p: &SpherePoint) -> f64 {
        match self {
            TestDensity::F1 if p.z() < (PI / 8.0).sin() => 0.0,
            TestDensity::F2 if p.z() < (PI / 4.0).sin() => 0.0,
            _ => self.profile(p.z().clamp(-1.0, 1.0).asin()),
        }
    }
}

impl FromStr for TestDensity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f1" => Ok(TestDensity::F1),
            "f2" => Ok(TestDensity::F2),
            "uniform" => Ok(TestDensity::Uniform),
            other => Err(Error::InvalidParameter(format!(
                "unknown density {other:?}; expected f1, f2 or uniform"
            ))),
        }
    }
}

/// A bounded density with a validated upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityOnSphere {
    pub kind: TestDensity,
    /// Maximum of the profile found by one-dimensional search.
    pub sup: f64,
}

impl DensityOnSphere {
    pub fn new(kind: TestDensity) -> Result<Self> {
        let sup = profile_max(kind);
        let d = Self { kind, sup };
        d.validate_sup(10_000)?;
        Ok(d)
    }

    pub fn eval(&self, p: &SpherePoint) -> f64 {
        self.kind.eval(p)
    }

    /// Checks the bound against a grid uniform in `z`, allowing 1% headroom.
    pub fn validate_sup(&self, points: usize) -> Result<()> {
        for i in 0..points {
            let z = -1.0 + 2.0 * i as f64 / (points - 1) as f64;
            let v = self.kind.profile(z.asin());
            if !(v >= 0.0) || v > self.sup * 1.01 {
                return Err(Error::InvalidParameter(format!(
                    "density {} reaches {v} at z = {z}, above the bound {}",
                    self.kind.name(),
                    self.sup
                )));
            }
        }
        Ok(())
    }

    /// `∫ f dσ`, by Gauss–Legendre in `a` on the support.
    pub fn total_mass(&self) -> f64 {
        self.cap_mass(self.kind.support_start().sin())
    }

    /// `∫_{z > z0} f dσ = 2π ∫ f(a) cos a da`.
    pub fn cap_mass(&self, z0: f64) -> f64 {
        let lo = z0.clamp(-1.0, 1.0).asin().max(self.kind.support_start());
        if lo >= FRAC_PI_2 {
            return 0.0;
        }
        let gl = GaussLegendre::new(NonZeroUsize::new(64).expect("64 > 0"));
        2.0 * PI * gl.integrate(lo, FRAC_PI_2, |a| self.kind.profile(a) * a.cos())
    }

    /// Factor that makes the density integrate to one.
    pub fn renormalization(&self) -> f64 {
        1.0 / self.total_mass()
    }
}

/// Dense scan in `a`, refined by golden-section search around the best node.
fn profile_max(kind: TestDensity) -> f64 {
    let (lo, hi) = (kind.support_start(), FRAC_PI_2);
    let n = 2000;
    let at = |i: usize| lo + (hi - lo) * i as f64 / n as f64;
    let best = (0..=n)
        .max_by(|&a, &b| kind.profile(at(a)).total_cmp(&kind.profile(at(b))))
        .expect("nonempty scan");
    let (mut a, mut b) = (at(best.saturating_sub(1)), at((best + 1).min(n)));
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let c = b - ratio * (b - a);
        let d = a + ratio * (b - a);
        if kind.profile(c) > kind.profile(d) {
            b = d;
        } else {
            a = c;
        }
    }
    [kind.profile(at(best)), kind.profile(0.5 * (a + b)), kind.profile(lo), kind.profile(hi)]
        .into_iter()
        .fold(0.0, f64::max)
}

/// Accepted points and the number of proposals used.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub points: Vec<SpherePoint>,
    pub proposals: u64,
}

impl Sample {
    pub fn acceptance_rate(&self) -> f64 {
        self.points.len() as f64 / self.proposals.max(1) as f64
    }
}

/// Elimination method: propose uniformly, draw `M ~ U[0, 1 + sup f)`, keep the
/// proposal when `M < f(U)`.
pub fn rejection_sample<R: Rng + ?Sized>(density: &DensityOnSphere, n: usize, rng: &mut R) -> Result<Sample> {
    let ceiling = 1.0 + density.sup;
    let mut points = Vec::with_capacity(n);
    let mut proposals = 0u64;
    while points.len() < n {
        let u = uniform_sphere(rng);
        let m: f64 = rng.random_range(0.0..ceiling);
        proposals += 1;
        if m < density.eval(&u) {
            points.push(u);
        }
        if proposals >= STALL_PROPOSALS && (points.len() as f64) < STALL_RATE * proposals as f64 {
            return Err(Error::SamplerStalled {
                proposals,
                accepted: points.len() as u64,
                min_rate: STALL_RATE,
            });
        }
    }
    Ok(Sample { points, proposals })
}

/// Generator for stream `stream` of a master seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Splits `n` draws over `streams` independent streams (worker `w` draws
/// `n / streams` points, the first `n % streams` workers one more) and
/// concatenates them in stream order.
pub fn sample_streams(density: &DensityOnSphere, n: usize, seed: u64, streams: usize) -> Result<Sample> {
    let streams = streams.max(1);
    let parts: Vec<Result<Sample>> = (0..streams)
        .into_par_iter()
        .map(|w| {
            let share = n / streams + usize::from(w < n % streams);
            let mut rng = stream_rng(seed, w as u64);
            rejection_sample(density, share, &mut rng)
        })
        .collect();
    let mut out = Sample {
        points: Vec::with_capacity(n),
        proposals: 0,
    };
    for part in parts {
        let part = part?;
        out.points.extend(part.points);
        out.proposals += part.proposals;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::{read_points_csv, write_points_csv};

    #[test]
    fn uniform_moments() {
        let mut rng = stream_rng(1, 0);
        let n = 100_000;
        let pts: Vec<SpherePoint> = (0..n).map(|_| uniform_sphere(&mut rng)).collect();
        let mean_z = pts.iter().map(|p| p.z()).sum::<f64>() / n as f64;
        let upper = pts.iter().filter(|p| p.z() > 0.0).count() as f64 / n as f64;
        let cap = pts.iter().filter(|p| p.z() > 0.5).count() as f64 / n as f64;
        assert!(mean_z.abs() <= 0.01);
        assert!((upper - 0.5).abs() <= 0.01);
        // cap area 2π(1 - cos θ) with cos θ = 1/2, over 4π
        assert!((cap - 0.25).abs() <= 0.01);
    }

    #[test]
    fn density_examples() {
        let f1 = DensityOnSphere::new(TestDensity::F1).unwrap();
        let below = SpherePoint::normalized([1.0, 0.0, 0.3]).unwrap();
        assert_eq!(f1.eval(&below), 0.0);
        assert!((f1.total_mass() - 1.0).abs() <= 1e-2);
        let top = 0.3785 * (3.0 * PI / 8.0).powi(4);
        assert!((f1.sup - top).abs() <= 1e-12 && (top - 0.729).abs() < 1e-3);
        let pole = SpherePoint::new([0.0, 0.0, 1.0]).unwrap();
        assert_eq!(f1.eval(&pole), f1.sup);

        let f2 = DensityOnSphere::new(TestDensity::F2).unwrap();
        assert!((f2.total_mass() - 1.0).abs() <= 1e-2);
        // interior maximum at a = 3π/8
        let mid = 42.2126 * (PI / 8.0).powi(4);
        assert!((f2.sup - mid).abs() <= 1e-10);
        let u = DensityOnSphere::new(TestDensity::Uniform).unwrap();
        assert!((u.total_mass() - 1.0).abs() <= 1e-12);
        assert!("f3".parse::<TestDensity>().is_err());
        assert_eq!("f2".parse::<TestDensity>().unwrap(), TestDensity::F2);
    }

    #[test]
    fn mass_against_sphere_quadrature() {
        let rule = crate::sphere::product_quadrature(400).unwrap();
        for kind in [TestDensity::F1, TestDensity::F2] {
            let d = DensityOnSphere::new(kind).unwrap();
            let q = rule.integrate(|p| d.eval(p));
            assert!((q - d.total_mass()).abs() <= 2e-3, "{kind:?}: {q}");
        }
    }

    #[test]
    fn uniform_acceptance_rate() {
        let d = DensityOnSphere::new(TestDensity::Uniform).unwrap();
        let mut rng = stream_rng(2, 0);
        let c = 1.0 / (4.0 * PI);
        let expected = c / (1.0 + c);
        let s = rejection_sample(&d, (expected * 100_000.0) as usize, &mut rng).unwrap();
        assert!((s.acceptance_rate() - expected).abs() <= 0.005);
    }

    #[test]
    fn first_density_sample() {
        let d = DensityOnSphere::new(TestDensity::F1).unwrap();
        let s = sample_streams(&d, 100_000, 3, 4).unwrap();
        let n = s.points.len() as f64;
        let low = s.points.iter().filter(|p| p.z() < (PI / 8.0).sin()).count() as f64 / n;
        assert!(low <= 0.001);
        let z0 = (PI / 4.0).sin();
        let cap = s.points.iter().filter(|p| p.z() > z0).count() as f64 / n;
        let oracle = d.cap_mass(z0) / d.total_mass();
        assert!((cap - oracle).abs() <= 0.01, "{cap} {oracle}");

        // azimuth is uniform: Kolmogorov–Smirnov distance
        let mut phi: Vec<f64> = s
            .points
            .iter()
            .map(|p| (p.y().atan2(p.x()) + PI) / (2.0 * PI))
            .collect();
        phi.sort_by(f64::total_cmp);
        let ks = phi
            .iter()
            .enumerate()
            .map(|(i, &u)| ((i + 1) as f64 / n - u).abs().max((u - i as f64 / n).abs()))
            .fold(0.0, f64::max);
        assert!(ks <= 0.01, "{ks}");
    }

    #[test]
    fn determinism_and_csv() {
        let d = DensityOnSphere::new(TestDensity::F2).unwrap();
        let a = sample_streams(&d, 500, 9, 3).unwrap();
        let b = sample_streams(&d, 500, 9, 3).unwrap();
        assert_eq!(a, b);
        let c = sample_streams(&d, 500, 10, 3).unwrap();
        assert_ne!(a.points, c.points);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_points_csv(&path, &a.points).unwrap();
        assert_eq!(read_points_csv(&path).unwrap(), a.points);
    }

    #[test]
    fn stalled_sampler_aborts() {
        // a density whose support is empty never accepts
        let d = DensityOnSphere {
            kind: TestDensity::F1,
            sup: 0.0,
        };
        let zero = DensityOnSphere {
            kind: TestDensity::F2,
            sup: 1e9,
        };
        let mut rng = stream_rng(4, 0);
        assert!(rejection_sample(&d, 0, &mut rng).unwrap().points.is_empty());
        match rejection_sample(&zero, 10, &mut rng) {
            Err(Error::SamplerStalled { proposals, .. }) => assert_eq!(proposals, STALL_PROPOSALS),
            other => panic!("{other:?}"),
        }
    }
}
