use serde::{Deserialize, Serialize};

/// A smooth coefficient function of the order parameter `u ∈ [-1, 1]` with
/// closed-form first and second derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarFunction {
    /// `Σ coeffs[k] u^k`.
    Poly { coeffs: Vec<f64> },
    /// `beta0 + beta1 (u + 1)`.
    Affine { beta0: f64, beta1: f64 },
    /// Constant function; the coupling config omits the value and means 1.
    Constant {
        #[serde(default = "one")]
        value: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl ScalarFunction {
    pub fn poly(coeffs: impl Into<Vec<f64>>) -> Self {
        ScalarFunction::Poly { coeffs: coeffs.into() }
    }

    pub fn affine(beta0: f64, beta1: f64) -> Self {
        ScalarFunction::Affine { beta0, beta1 }
    }

    pub fn constant(value: f64) -> Self {
        ScalarFunction::Constant { value }
    }

    pub fn value(&self, u: f64) -> f64 {
        match self {
            ScalarFunction::Poly { coeffs } => coeffs.iter().rev().fold(0.0, |acc, &c| acc * u + c),
            ScalarFunction::Affine { beta0, beta1 } => beta0 + beta1 * (u + 1.0),
            ScalarFunction::Constant { value } => *value,
        }
    }

    pub fn d1(&self, u: f64) -> f64 {
        match self {
            ScalarFunction::Poly { coeffs } => coeffs
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (k, &c)| acc * u + k as f64 * c),
            ScalarFunction::Affine { beta1, .. } => *beta1,
            ScalarFunction::Constant { .. } => 0.0,
        }
    }

    pub fn d2(&self, u: f64) -> f64 {
        match self {
            ScalarFunction::Poly { coeffs } => coeffs
                .iter()
                .enumerate()
                .skip(2)
                .rev()
                .fold(0.0, |acc, (k, &c)| acc * u + (k * (k - 1)) as f64 * c),
            _ => 0.0,
        }
    }

    /// True when the derivative vanishes identically.
    pub fn is_constant(&self) -> bool {
        match self {
            ScalarFunction::Poly { coeffs } => coeffs.iter().skip(1).all(|&c| c == 0.0),
            ScalarFunction::Affine { beta1, .. } => *beta1 == 0.0,
            ScalarFunction::Constant { .. } => true,
        }
    }

    /// True when the second derivative vanishes identically.
    pub fn is_affine(&self) -> bool {
        match self {
            ScalarFunction::Poly { coeffs } => coeffs.iter().skip(2).all(|&c| c == 0.0),
            _ => true,
        }
    }

    /// True when `f(-u) = f(u)` holds exactly by structure.
    pub fn is_even(&self) -> bool {
        match self {
            ScalarFunction::Poly { coeffs } => coeffs.iter().skip(1).step_by(2).all(|&c| c == 0.0),
            ScalarFunction::Affine { beta1, .. } => *beta1 == 0.0,
            ScalarFunction::Constant { .. } => true,
        }
    }

    pub(crate) fn is_finite(&self) -> bool {
        match self {
            ScalarFunction::Poly { coeffs } => !coeffs.is_empty() && coeffs.iter().all(|c| c.is_finite()),
            ScalarFunction::Affine { beta0, beta1 } => beta0.is_finite() && beta1.is_finite(),
            ScalarFunction::Constant { value } => value.is_finite(),
        }
    }
}
