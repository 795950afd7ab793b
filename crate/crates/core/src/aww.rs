//! The smooth cutoff `s` and the AWW projections `E^- = E` and `E^+ = Id - E`.
//!
//! Both projections act pointwise through a function and its equatorial mirror:
//! `E^± g(x) = a(z) g(x) + b(z) g(x, y, -z)`, so a [`Blend`] of two weights is
//! all a caller needs.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::{Patch, SpherePoint};

/// `s(t) = exp(u(t)) / sqrt(exp(2u(t)) + exp(2u(-t)))` on `(-δ, δ)` with
/// `u(t) = (t - δ)/(t + δ)`, zero below `-δ`, one from `δ` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    delta: f64,
}

impl Cutoff {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < FRAC_PI_2) {
            return Err(Error::InvalidParameter(format!(
                "delta = {delta} outside (0, pi/2)"
            )));
        }
        Ok(Self { delta })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn eval(&self, t: f64) -> f64 {
        let d = self.delta;
        if t <= -d {
            0.0
        } else if t >= d {
            1.0
        } else {
            let u = |t: f64| (t - d) / (t + d);
            // ratio form: never overflows for t near ±δ
            1.0 / (1.0 + (2.0 * (u(-t) - u(t))).exp()).sqrt()
        }
    }
}

/// Which branch formulas decide the band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AwwForm {
    /// Cartesian formulas in `z` and `arcsin z`.
    #[default]
    Cartesian,
    /// Polar-angle formulas in `θ` with mirror `π - θ`.
    Angular,
}

/// Weights of `g(x)` and `g(mirror x)` in `E^± g(x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blend {
    pub direct: f64,
    pub mirror: f64,
}

impl Blend {
    pub const ZERO: Blend = Blend {
        direct: 0.0,
        mirror: 0.0,
    };
    pub const IDENTITY: Blend = Blend {
        direct: 1.0,
        mirror: 0.0,
    };

    pub fn is_zero(&self) -> bool {
        self.direct == 0.0 && self.mirror == 0.0
    }

    pub fn apply(&self, at: f64, at_mirror: f64) -> f64 {
        // keep the exact identity and zero branches free of 0·value products
        if self.mirror == 0.0 {
            self.direct * at
        } else {
            self.direct * at + self.mirror * at_mirror
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aww {
    cutoff: Cutoff,
    form: AwwForm,
}

impl Aww {
    pub fn new(delta: f64, form: AwwForm) -> Result<Self> {
        Ok(Self {
            cutoff: Cutoff::new(delta)?,
            form,
        })
    }

    pub fn cutoff(&self) -> &Cutoff {
        &self.cutoff
    }

    pub fn delta(&self) -> f64 {
        self.cutoff.delta
    }

    pub fn form(&self) -> AwwForm {
        self.form
    }

    /// Weights of `E = E^-` at height `z`.
    fn minus_weights(&self, z: f64) -> Blend {
        let s = |t| self.cutoff.eval(t);
        match self.form {
            AwwForm::Cartesian => {
                let edge = self.delta().sin();
                // the band formula takes precedence where the branches overlap
                if (-edge..=edge).contains(&z) {
                    let a = z.asin();
                    Blend {
                        direct: s(-a).powi(2),
                        mirror: s(-a) * s(a),
                    }
                } else if z < edge {
                    Blend::IDENTITY
                } else {
                    Blend::ZERO
                }
            }
            AwwForm::Angular => {
                let theta = z.clamp(-1.0, 1.0).acos();
                let d = self.delta();
                if theta > FRAC_PI_2 + d {
                    Blend::IDENTITY
                } else if theta < FRAC_PI_2 - d {
                    Blend::ZERO
                } else {
                    Blend {
                        direct: s(theta - FRAC_PI_2).powi(2),
                        mirror: s(theta - FRAC_PI_2) * s(FRAC_PI_2 - theta),
                    }
                }
            }
        }
    }

    /// Weights of `E^±` at height `z`.
    pub fn blend(&self, patch: Patch, z: f64) -> Blend {
        let m = self.minus_weights(z);
        match patch {
            Patch::Minus => m,
            Patch::Plus => {
                if m.is_zero() {
                    Blend::IDENTITY
                } else if m == Blend::IDENTITY {
                    Blend::ZERO
                } else {
                    Blend {
                        direct: 1.0 - m.direct,
                        mirror: -m.mirror,
                    }
                }
            }
        }
    }

    /// `E^± g (x)`, with `E^+ g` formed literally as `g - E g`.
    pub fn apply(&self, patch: Patch, g: impl Fn(&SpherePoint) -> f64, x: &SpherePoint) -> f64 {
        let m = self.minus_weights(x.z());
        if m.is_zero() {
            return match patch {
                Patch::Minus => 0.0,
                Patch::Plus => g(x),
            };
        }
        let at = g(x);
        let at_mirror = if m.mirror == 0.0 { 0.0 } else { g(&x.mirror()) };
        let eg = m.apply(at, at_mirror);
        match patch {
            Patch::Minus => eg,
            Patch::Plus => at - eg,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::product_quadrature;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const DELTA: f64 = PI / 6.0;

    #[test]
    fn cutoff_examples() {
        let s = Cutoff::new(DELTA).unwrap();
        assert_eq!(s.eval(DELTA), 1.0);
        assert_eq!(s.eval(-DELTA), 0.0);
        assert!((s.eval(0.0) - 0.5f64.sqrt()).abs() <= 1e-12);
        let h = DELTA / 2.0;
        assert!((s.eval(h).powi(2) + s.eval(-h).powi(2) - 1.0).abs() <= 1e-12);
        // continuity at the band edges
        assert!(s.eval(-DELTA + 1e-9) < 1e-12);
        assert!(1.0 - s.eval(DELTA - 1e-9) < 1e-12);
        assert!(Cutoff::new(0.0).is_err());
        assert!(Cutoff::new(FRAC_PI_2).is_err());
    }

    fn point(z: f64, phi: f64) -> SpherePoint {
        let r = (1.0 - z * z).max(0.0).sqrt();
        SpherePoint::normalized([r * phi.cos(), r * phi.sin(), z]).unwrap()
    }

    /// Smooth test function from a small coefficient vector.
    fn smooth(c: &[f64; 6]) -> impl Fn(&SpherePoint) -> f64 + '_ {
        move |p: &SpherePoint| {
            let [x, y, z] = p.coords();
            c[0] + c[1] * x + c[2] * z + c[3] * x * z + c[4] * (y * z * 2.0).sin() + c[5] * (3.0 * z + x).cos()
        }
    }

    #[test]
    fn branch_examples() {
        let e = Aww::new(DELTA, AwwForm::Cartesian).unwrap();
        let g = |p: &SpherePoint| 1.0 + p.x() + 2.0 * p.z();
        let south = SpherePoint::new([0.0, 0.0, -1.0]).unwrap();
        assert_eq!(e.apply(Patch::Minus, g, &south), g(&south));
        let north = point(0.9, 0.3);
        assert_eq!(e.apply(Patch::Minus, g, &north), 0.0);
        assert_eq!(e.apply(Patch::Plus, g, &north), g(&north));
    }

    #[test]
    fn forms_agree() {
        let cart = Aww::new(DELTA, AwwForm::Cartesian).unwrap();
        let ang = Aww::new(DELTA, AwwForm::Angular).unwrap();
        for i in 0..=2000 {
            let z = -1.0 + i as f64 / 1000.0;
            for patch in Patch::BOTH {
                let (a, b) = (cart.blend(patch, z), ang.blend(patch, z));
                assert!((a.direct - b.direct).abs() <= 1e-12, "z={z}");
                assert!((a.mirror - b.mirror).abs() <= 1e-12, "z={z}");
            }
        }
    }

    #[test]
    fn band_idempotence() {
        let e = Aww::new(DELTA, AwwForm::Cartesian).unwrap();
        let edge = DELTA.sin();
        let coeffs = [
            [0.3, -1.0, 0.5, 2.0, 0.7, -0.2],
            [1.0, 0.0, -2.0, 0.4, 0.1, 1.5],
            [-0.5, 0.8, 0.8, -1.1, 2.0, 0.3],
            [0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
            [2.0, 1.3, -0.7, 0.9, -1.4, 0.6],
        ];
        for c in &coeffs {
            let g = smooth(c);
            for i in 0..100 {
                let x = point(-edge + 2.0 * edge * (i as f64 + 0.5) / 100.0, 0.37 * i as f64);
                let eg = |p: &SpherePoint| e.apply(Patch::Minus, &g, p);
                let once = eg(&x);
                let twice = e.apply(Patch::Minus, eg, &x);
                assert!((once - twice).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn orthogonal_and_self_adjoint() {
        let e = Aww::new(DELTA, AwwForm::Cartesian).unwrap();
        let rule = product_quadrature(128).unwrap();
        let pairs = [
            ([0.3, -1.0, 0.5, 2.0, 0.7, -0.2], [1.0, 0.0, -2.0, 0.4, 0.1, 1.5]),
            ([-0.5, 0.8, 0.8, -1.1, 2.0, 0.3], [2.0, 1.3, -0.7, 0.9, -1.4, 0.6]),
            ([1.0, 1.0, 1.0, 1.0, 1.0, 1.0], [0.0, 0.0, 1.0, 0.0, 0.0, 0.0]),
            ([0.1, 0.2, 0.3, 0.4, 0.5, 0.6], [-0.6, 0.5, -0.4, 0.3, -0.2, 0.1]),
            ([3.0, 0.0, -3.0, 0.0, 1.0, 0.0], [0.0, 2.0, 2.0, -1.0, 0.0, 1.0]),
        ];
        for (cg, ch) in &pairs {
            let (g, h) = (smooth(cg), smooth(ch));
            let cross = rule.integrate(|p| e.apply(Patch::Minus, &g, p) * e.apply(Patch::Plus, &h, p));
            assert!(cross.abs() <= 1e-8, "{cross}");
            let lhs = rule.integrate(|p| e.apply(Patch::Minus, &g, p) * h(p));
            let rhs = rule.integrate(|p| g(p) * e.apply(Patch::Minus, &h, p));
            assert!((lhs - rhs).abs() <= 1e-8);
        }
    }

    proptest! {
        #[test]
        fn cutoff_partition(t in -2.0f64..2.0) {
            let s = Cutoff::new(DELTA).unwrap();
            prop_assert!((s.eval(t).powi(2) + s.eval(-t).powi(2) - 1.0).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&s.eval(t)));
        }

        #[test]
        fn partition_and_localization(
            z in -1.0f64..=1.0,
            phi in 0.0f64..6.3,
            c in prop::array::uniform6(-2.0f64..2.0),
            angular in any::<bool>(),
        ) {
            let form = if angular { AwwForm::Angular } else { AwwForm::Cartesian };
            let e = Aww::new(DELTA, form).unwrap();
            let g = smooth(&c);
            let x = point(z, phi);
            let plus = e.apply(Patch::Plus, &g, &x);
            let minus = e.apply(Patch::Minus, &g, &x);
            prop_assert_eq!(plus, g(&x) - minus);
            prop_assert!((plus + minus - g(&x)).abs() <= 4.0 * f64::EPSILON * (1.0 + g(&x).abs()));
            if x.z() < -DELTA.sin() {
                prop_assert_eq!(plus, 0.0);
                prop_assert_eq!(minus, g(&x));
            }
            if x.z() > DELTA.sin() {
                prop_assert_eq!(minus, 0.0);
                prop_assert_eq!(plus, g(&x));
            }
        }
    }
}
