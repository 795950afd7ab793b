//! Flat TOML configuration applied on top of a named profile.

use std::path::PathBuf;

use serde::Deserialize;
use stereo_wavelets::cubes::{Enlargement, SupportRule};
use stereo_wavelets::estimator::{SupBound, ThresholdConstant};
use stereo_wavelets::experiment::ExperimentSpec;
use stereo_wavelets::sampling::TestDensity;
use stereo_wavelets::{Error, Result};

/// Default threshold of the effective support rule.
pub const EFFECTIVE_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(usize),
    Many(Vec<usize>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum AutoOr {
    Value(f64),
    Word(String),
}

impl AutoOr {
    fn resolve(&self, key: &str) -> Result<Option<f64>> {
        match self {
            AutoOr::Value(v) => Ok(Some(*v)),
            AutoOr::Word(w) if w == "auto" => Ok(None),
            AutoOr::Word(w) => Err(Error::InvalidParameter(format!(
                "{key} must be a number or \"auto\", got {w:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlatConfig {
    pub profile: Option<String>,
    pub density: Option<String>,
    pub n: Option<OneOrMany>,
    pub seed: Option<u64>,
    pub replicates: Option<usize>,
    pub quad_order: Option<usize>,
    pub support_rule: Option<String>,
    pub effective_threshold: Option<f64>,
    pub r: Option<f64>,
    #[serde(rename = "R")]
    pub r_upper: Option<f64>,
    #[serde(rename = "U")]
    pub u: Option<AutoOr>,
    #[serde(rename = "C_S")]
    pub c_s: Option<AutoOr>,
    pub floor_level: Option<i32>,
    pub order: Option<usize>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub base_depth: Option<u32>,
    pub dn_levels: Option<Vec<i32>>,
    pub dn_test_points: Option<usize>,
    pub dn_quad_order: Option<usize>,
    pub dn_polish: Option<bool>,
    pub out: Option<PathBuf>,
}

impl FlatConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            line: e.span().map(|s| text[..s.start].lines().count().max(1)).unwrap_or(0),
            message: e.message().to_string(),
        })
    }

    pub fn apply(&self, spec: &mut ExperimentSpec) -> Result<()> {
        if let Some(d) = &self.density {
            spec.density = d.parse()?;
        }
        if let Some(n) = &self.n {
            spec.ns = match n {
                OneOrMany::One(n) => vec![*n],
                OneOrMany::Many(ns) => ns.clone(),
            };
        }
        let est = &mut spec.estimator;
        if let Some(s) = self.seed {
            est.seed = s;
        }
        if let Some(r) = self.replicates {
            spec.replicates = r;
        }
        if let Some(q) = self.quad_order {
            est.quad_order = q;
        }
        if let Some(rule) = &self.support_rule {
            est.support_rule = parse_support_rule(rule, self.effective_threshold)?;
        } else if let Some(t) = self.effective_threshold {
            match &mut est.support_rule {
                SupportRule::Effective { threshold } => *threshold = t,
                SupportRule::Strict => {
                    return Err(Error::InvalidParameter(
                        "effective_threshold given but the support rule is strict".into(),
                    ))
                }
            }
        }
        if let Some(r) = self.r {
            est.r = r;
        }
        if let Some(r) = self.r_upper {
            est.r_upper = r;
        }
        if let Some(u) = &self.u {
            est.u = u.resolve("U")?.map_or(SupBound::Auto, SupBound::Fixed);
        }
        if let Some(c) = &self.c_s {
            est.c_s = c.resolve("C_S")?.map_or(ThresholdConstant::Auto, ThresholdConstant::Fixed);
        }
        if let Some(f) = self.floor_level {
            est.floor_level = Some(f);
        }
        if let Some(o) = self.order {
            est.order = o;
        }
        if let Some(e) = self.epsilon {
            est.epsilon = Enlargement::from_value(e)?;
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d < std::f64::consts::FRAC_PI_2) {
                return Err(Error::InvalidParameter(format!("delta must lie in (0, π/2), got {d}")));
            }
            est.delta = d;
        }
        if let Some(b) = self.base_depth {
            est.base_depth = b;
        }
        if let Some(l) = &self.dn_levels {
            est.dn.levels = l.clone();
        }
        if let Some(t) = self.dn_test_points {
            est.dn.test_points = t;
        }
        if let Some(q) = self.dn_quad_order {
            est.dn.quad_order = q;
        }
        if let Some(p) = self.dn_polish {
            est.dn.polish = p.then(Default::default);
        }
        if let Some(o) = &self.out {
            spec.out_dir = o.clone();
        }
        Ok(())
    }
}

pub fn parse_support_rule(name: &str, threshold: Option<f64>) -> Result<SupportRule> {
    match name {
        "strict" if threshold.is_some() => Err(Error::InvalidParameter(
            "effective_threshold given but the support rule is strict".into(),
        )),
        "strict" => Ok(SupportRule::Strict),
        "effective" => {
            let t = threshold.unwrap_or(EFFECTIVE_THRESHOLD);
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "effective threshold must lie in (0, 1), got {t}"
                )));
            }
            Ok(SupportRule::Effective { threshold: t })
        }
        other => Err(Error::InvalidParameter(format!(
            "unknown support rule {other:?}; expected strict or effective"
        ))),
    }
}

pub fn parse_density(name: &str) -> Result<TestDensity> {
    name.parse()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_document_overrides_profile() {
        let cfg = FlatConfig::parse(
            r#"
            density = "f2"
            n = [100, 400]
            seed = 11
            U = 2.5
            C_S = "auto"
            support_rule = "strict"
            epsilon = 0.25
            "#,
        )
        .unwrap();
        let mut spec = ExperimentSpec::profile("paper-s5").unwrap();
        cfg.apply(&mut spec).unwrap();
        assert_eq!(spec.density, TestDensity::F2);
        assert_eq!(spec.ns, vec![100, 400]);
        assert_eq!(spec.estimator.seed, 11);
        assert_eq!(spec.estimator.u, SupBound::Fixed(2.5));
        assert_eq!(spec.estimator.support_rule, SupportRule::Strict);
        assert_eq!(spec.estimator.epsilon, Enlargement::Dyadic(2));
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(FlatConfig::parse("bogus = 1").is_err());
        let mut spec = ExperimentSpec::profile("paper-s5").unwrap();
        for doc in ["U = \"big\"", "epsilon = 0.3", "density = \"f9\"", "support_rule = \"loose\"", "delta = 2.0"] {
            let cfg = FlatConfig::parse(doc).unwrap();
            assert!(cfg.apply(&mut spec).is_err(), "{doc}");
        }
    }
}
