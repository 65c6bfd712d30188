use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use super::{A2Tau, CoeffError, CoefficientSet, ScalarFunction};

/// On-disk form of a coefficient set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientConfig {
    pub m_tilde: ScalarFunction,
    pub i: u32,
    pub n: ScalarFunction,
    pub a2tau: A2TauConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum A2TauConfig {
    Poly { coeffs: Vec<f64> },
    Affine { beta0: f64, beta1: f64 },
    Constant {
        #[serde(default = "one")]
        value: f64,
    },
    Tied { a_tilde: f64 },
}

fn one() -> f64 {
    1.0
}

impl From<&A2Tau> for A2TauConfig {
    fn from(a: &A2Tau) -> Self {
        match a {
            A2Tau::Tied { a_tilde } => A2TauConfig::Tied { a_tilde: *a_tilde },
            A2Tau::Explicit(ScalarFunction::Poly { coeffs }) => A2TauConfig::Poly { coeffs: coeffs.clone() },
            A2Tau::Explicit(ScalarFunction::Affine { beta0, beta1 }) => {
                A2TauConfig::Affine { beta0: *beta0, beta1: *beta1 }
            }
            A2Tau::Explicit(ScalarFunction::Constant { value }) => A2TauConfig::Constant { value: *value },
        }
    }
}

impl From<A2TauConfig> for A2Tau {
    fn from(a: A2TauConfig) -> Self {
        match a {
            A2TauConfig::Tied { a_tilde } => A2Tau::Tied { a_tilde },
            A2TauConfig::Poly { coeffs } => A2Tau::Explicit(ScalarFunction::Poly { coeffs }),
            A2TauConfig::Affine { beta0, beta1 } => A2Tau::Explicit(ScalarFunction::Affine { beta0, beta1 }),
            A2TauConfig::Constant { value } => A2Tau::Explicit(ScalarFunction::Constant { value }),
        }
    }
}

impl CoefficientSet {
    pub fn from_config(config: CoefficientConfig) -> Result<Self, CoeffError> {
        match config.potential.as_deref() {
            None | Some("double_obstacle") => {}
            Some("logarithmic") => {
                return Err(CoeffError::Invalid(
                    "logarithmic potential is not supported; only double_obstacle".into(),
                ))
            }
            Some(other) => return Err(CoeffError::Invalid(format!("unknown potential `{other}`"))),
        }
        CoefficientSet::new(config.m_tilde, config.i, config.n, config.a2tau.into())
    }

    pub fn from_json_str(text: &str) -> Result<Self, CoeffError> {
        let config: CoefficientConfig =
            serde_json::from_str(text).map_err(|e| CoeffError::Parse(e.to_string()))?;
        Self::from_config(config)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, CoeffError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoeffError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_config(&self) -> CoefficientConfig {
        CoefficientConfig {
            m_tilde: self.m_tilde.clone(),
            i: self.i,
            n: self.n.clone(),
            a2tau: (&self.a2tau).into(),
            potential: None,
        }
    }

    /// FNV-1a hash of the canonical (key-sorted, round-trip float) JSON form.
    pub fn config_hash(&self) -> u64 {
        let value = serde_json::to_value(self.to_config()).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        let mut h = FnvHasher::default();
        h.write(canonical.as_bytes());
        h.finish()
    }

    pub fn config_hash_hex(&self) -> String {
        format!("{:016x}", self.config_hash())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TIED: &str = r#"{
        "m_tilde": {"type": "poly", "coeffs": [1.0]},
        "i": 1,
        "n": {"type": "affine", "beta0": 1.0, "beta1": 1.0},
        "a2tau": {"type": "tied", "a_tilde": 1.0}
    }"#;

    #[test]
    fn parses_tied_affine() {
        let c = CoefficientSet::from_json_str(TIED).unwrap();
        assert_eq!(c.a2tau, A2Tau::Tied { a_tilde: 1.0 });
        assert_eq!(c.n.value(1.0), 3.0);
    }

    #[test]
    fn hash_ignores_whitespace_and_key_order() {
        let reordered = r#"{"a2tau":{"a_tilde":1.0,"type":"tied"},"n":{"beta1":1.0,"beta0":1.0,"type":"affine"},"i":1,"m_tilde":{"coeffs":[1.0],"type":"poly"}}"#;
        let a = CoefficientSet::from_json_str(TIED).unwrap();
        let b = CoefficientSet::from_json_str(reordered).unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash_hex().len(), 16);
    }

    #[test]
    fn hash_separates_configs() {
        let a = CoefficientSet::from_json_str(TIED).unwrap();
        let b = CoefficientSet::from_json_str(&TIED.replace("\"a_tilde\": 1.0", "\"a_tilde\": 2.0")).unwrap();
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn rejects_logarithmic_potential() {
        let text = TIED.replace("\"i\": 1,", "\"i\": 1, \"potential\": \"logarithmic\",");
        assert!(matches!(CoefficientSet::from_json_str(&text), Err(CoeffError::Invalid(_))));
    }

    #[test]
    fn rejects_unknown_fields_and_malformed_json() {
        assert!(matches!(CoefficientSet::from_json_str("{"), Err(CoeffError::Parse(_))));
        let text = TIED.replace("\"i\": 1,", "\"i\": 1, \"theta\": 0.5,");
        assert!(matches!(CoefficientSet::from_json_str(&text), Err(CoeffError::Parse(_))));
    }

    #[test]
    fn config_round_trips() {
        let a = CoefficientSet::from_json_str(TIED).unwrap();
        let text = serde_json::to_string(&a.to_config()).unwrap();
        assert_eq!(CoefficientSet::from_json_str(&text).unwrap(), a);
    }
}
