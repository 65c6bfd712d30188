//! Coefficient sets `(m̃, i, n, A²τ)` for the double-obstacle model, their
//! derived weights, and the scalar constants that enter every flow law.

mod config;
mod function;
mod hypotheses;

use std::f64::consts::PI;

use serde::Serialize;
use thiserror::Error;

use crate::quadrature::{integrate_adaptive, integrate_interval_adaptive, GaussJacobi};

pub use config::{A2TauConfig, CoefficientConfig};
pub use function::ScalarFunction;
pub use hypotheses::{check_hypotheses, HypothesisCheck, HypothesisReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoeffError {
    #[error("weights are singular at u = {0}; evaluate strictly inside (-1, 1)")]
    Domain(f64),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid coefficient set: {0}")]
    Invalid(String),
    #[error("cannot read config: {0}")]
    Io(String),
}

/// How the product `A²τ` is specified.
#[derive(Debug, Clone, PartialEq)]
pub enum A2Tau {
    Explicit(ScalarFunction),
    /// `A²τ` chosen so that `𝖺·𝗆 ≡ a_tilde`.
    Tied { a_tilde: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    ConstantCoupling,
    MonotoneCoupling,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    pub m_tilde: ScalarFunction,
    pub i: u32,
    pub n: ScalarFunction,
    pub a2tau: A2Tau,
}

/// Pointwise weights at an interior `u`. The coupling-dependent entries are
/// absent on the constant-coupling branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedWeights {
    pub m: f64,
    pub sf_m: f64,
    pub sf_a: Option<f64>,
    pub a: Option<f64>,
    pub c: Option<f64>,
    pub ell: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelConstants {
    pub sigma: f64,
    pub delta: f64,
    pub omega: f64,
    pub eta: Option<f64>,
    pub alpha1: f64,
}

impl ModelConstants {
    pub fn sigma_over_delta(&self) -> f64 {
        self.sigma / self.delta
    }

    /// Constants of `m̃ = 1, i = 1, A²τ ≡ 1` with no coupling prefactor.
    pub fn reference() -> Self {
        ModelConstants { sigma: PI / 2.0, delta: 8.0 / PI, omega: PI / 2.0, eta: None, alpha1: PI / 4.0 }
    }
}

impl CoefficientSet {
    pub fn new(m_tilde: ScalarFunction, i: u32, n: ScalarFunction, a2tau: A2Tau) -> Result<Self, CoeffError> {
        if i == 0 {
            return Err(CoeffError::Invalid("degeneracy exponent i must be a positive integer".into()));
        }
        if !m_tilde.is_finite() || !n.is_finite() {
            return Err(CoeffError::Invalid("coefficient functions need finite, non-empty data".into()));
        }
        match &a2tau {
            A2Tau::Explicit(f) if !f.is_finite() => {
                return Err(CoeffError::Invalid("a2tau needs finite, non-empty data".into()))
            }
            A2Tau::Tied { a_tilde } if !(a_tilde.is_finite() && *a_tilde > 0.0) => {
                return Err(CoeffError::Invalid(format!("a_tilde must be positive, got {a_tilde}")))
            }
            A2Tau::Tied { .. } if n.is_constant() => {
                return Err(CoeffError::Invalid("tied a2tau needs a non-constant coupling n".into()))
            }
            _ => {}
        }
        Ok(CoefficientSet { m_tilde, i, n, a2tau })
    }

    /// `m̃ ≡ 1, i = 1, n = 2 + u, 𝖺𝗆 ≡ 1`.
    pub fn tied_affine() -> Self {
        Self::new(
            ScalarFunction::constant(1.0),
            1,
            ScalarFunction::affine(1.0, 1.0),
            A2Tau::Tied { a_tilde: 1.0 },
        )
        .expect("valid")
    }

    /// `m̃ ≡ 1, i = 1, n ≡ 1, A²τ ≡ 1`.
    pub fn constant_coupling() -> Self {
        Self::new(
            ScalarFunction::constant(1.0),
            1,
            ScalarFunction::constant(1.0),
            A2Tau::Explicit(ScalarFunction::constant(1.0)),
        )
        .expect("valid")
    }

    pub fn branch(&self) -> Branch {
        if self.n.is_constant() {
            Branch::ConstantCoupling
        } else {
            Branch::MonotoneCoupling
        }
    }

    pub fn a_tilde(&self) -> Option<f64> {
        match self.a2tau {
            A2Tau::Tied { a_tilde } => Some(a_tilde),
            A2Tau::Explicit(_) => None,
        }
    }

    fn half_exponent(&self) -> f64 {
        self.i as f64 - 0.5
    }

    /// `m(u) = (1 - u²)^i m̃(u)`.
    pub fn mobility(&self, u: f64) -> f64 {
        (1.0 - u * u).powi(self.i as i32) * self.m_tilde.value(u)
    }

    /// `𝗆(u) = m(u) / √(1 - u²)`.
    pub fn sf_m(&self, u: f64) -> f64 {
        self.m_tilde.value(u) * (1.0 - u * u).powf(self.half_exponent())
    }

    /// `𝗆 = m̃(u) (1 - u²)^p`; returns `p`.
    pub fn sf_m_exponent(&self) -> f64 {
        self.half_exponent()
    }

    /// `(n² / n')²`, undefined on the constant branch.
    fn coupling_ratio(&self, u: f64) -> Option<f64> {
        if self.branch() == Branch::ConstantCoupling {
            return None;
        }
        let n = self.n.value(u);
        let q = n * n / self.n.d1(u);
        Some(q * q)
    }

    /// `A²τ(u)`; in tied mode this is `m̃ (1 - u²)^{i-1} (n²/n')² / ã`.
    pub fn a2tau_value(&self, u: f64) -> f64 {
        match &self.a2tau {
            A2Tau::Explicit(f) => f.value(u),
            A2Tau::Tied { a_tilde } => {
                let ratio = self.coupling_ratio(u).unwrap_or(f64::NAN);
                self.m_tilde.value(u) * (1.0 - u * u).powi(self.i as i32 - 1) * ratio / a_tilde
            }
        }
    }

    /// Smooth factor `g` of `𝖺 = g(u) (1 - u²)^exponent`.
    pub fn sf_a_smooth(&self, u: f64) -> Option<f64> {
        match &self.a2tau {
            A2Tau::Tied { a_tilde } => Some(a_tilde / self.m_tilde.value(u)),
            A2Tau::Explicit(f) => self.coupling_ratio(u).map(|r| r / f.value(u)),
        }
    }

    /// Exponent `p` in `𝖺 = g(u) (1 - u²)^p`.
    pub fn sf_a_exponent(&self) -> f64 {
        match self.a2tau {
            A2Tau::Tied { .. } => -self.half_exponent(),
            A2Tau::Explicit(_) => -0.5,
        }
    }

    /// `c = n / n'` on the closed interval.
    pub fn c(&self, u: f64) -> Option<f64> {
        (self.branch() == Branch::MonotoneCoupling).then(|| self.n.value(u) / self.n.d1(u))
    }

    /// `ℓ = n n'' / n'²` on the closed interval.
    pub fn ell(&self, u: f64) -> Option<f64> {
        (self.branch() == Branch::MonotoneCoupling).then(|| {
            let d1 = self.n.d1(u);
            self.n.value(u) * self.n.d2(u) / (d1 * d1)
        })
    }

    pub fn derived_weights(&self, u: f64) -> Result<DerivedWeights, CoeffError> {
        if !(u.abs() < 1.0) {
            return Err(CoeffError::Domain(u));
        }
        let s = 1.0 - u * u;
        let sf_a = self.sf_a_smooth(u).map(|g| g * s.powf(self.sf_a_exponent()));
        Ok(DerivedWeights {
            m: self.mobility(u),
            sf_m: self.sf_m(u),
            sf_a,
            a: sf_a.map(|v| v / s.sqrt()),
            c: self.c(u),
            ell: self.ell(u),
        })
    }

    /// `α(u) = ∫₀^u 𝗆`.
    pub fn alpha(&self, u: f64) -> Result<f64, CoeffError> {
        if !(u.abs() <= 1.0) {
            return Err(CoeffError::Domain(u));
        }
        let p = self.half_exponent();
        let m = &self.m_tilde;
        if u == 0.0 {
            return Ok(0.0);
        }
        if u.abs() <= 0.5 {
            let (a, b) = if u > 0.0 { (0.0, u) } else { (u, 0.0) };
            let v = integrate_interval_adaptive(a, b, 0.0, 0.0, |x| self.sf_m(x)).value;
            return Ok(u.signum() * v);
        }
        if u > 0.0 {
            let right = |x: f64| m.value(x) * (1.0 + x).powf(p);
            let head = integrate_interval_adaptive(0.0, 1.0, p, 0.0, right).value;
            let tail = if u == 1.0 { 0.0 } else { integrate_interval_adaptive(u, 1.0, p, 0.0, right).value };
            Ok(head - tail)
        } else {
            let left = |x: f64| m.value(x) * (1.0 - x).powf(p);
            let head = integrate_interval_adaptive(-1.0, 0.0, 0.0, p, left).value;
            let tail = if u == -1.0 { 0.0 } else { integrate_interval_adaptive(-1.0, u, 0.0, p, left).value };
            Ok(-(head - tail))
        }
    }

    pub fn compute_constants(&self) -> ModelConstants {
        let p = self.half_exponent();
        let sigma = integrate_adaptive(0.5, 0.5, |_| 1.0).value;
        let mass = integrate_adaptive(p, p, |u| self.m_tilde.value(u)).value;
        let omega = match &self.a2tau {
            A2Tau::Explicit(f) => integrate_adaptive(0.5, 0.5, |u| f.value(u)).value,
            A2Tau::Tied { a_tilde } => {
                integrate_adaptive(p, p, |u| self.m_tilde.value(u) * self.coupling_ratio(u).unwrap_or(f64::NAN))
                    .value
                    / a_tilde
            }
        };
        let eta = match (self.c(1.0), self.c(-1.0)) {
            (Some(cp), Some(cm)) => Some(1.0 / (cp * cp + cm * cm)),
            _ => None,
        };
        ModelConstants { sigma, delta: 4.0 / mass, omega, eta, alpha1: self.alpha(1.0).expect("u = 1 in range") }
    }

    /// Nodes of an `n`-point Chebyshev grid of the first kind (interior).
    pub(crate) fn interior_grid(n: usize) -> Vec<f64> {
        GaussJacobi::new(n, -0.5, -0.5).nodes().to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn explicit(n: ScalarFunction, a2tau: ScalarFunction) -> CoefficientSet {
        CoefficientSet::new(ScalarFunction::constant(1.0), 1, n, A2Tau::Explicit(a2tau)).unwrap()
    }

    #[test]
    fn degenerate_mobility_at_center() {
        let w = CoefficientSet::tied_affine().derived_weights(0.0).unwrap();
        assert_eq!(w.m, 1.0);
        assert_eq!(w.sf_m, 1.0);
    }

    #[test]
    fn affine_coupling_endpoint_ratio() {
        let c = CoefficientSet::tied_affine();
        assert_eq!(c.c(1.0), Some(3.0));
        assert_eq!(c.ell(1.0), Some(0.0));
    }

    #[test]
    fn tied_stiffness_weight_at_half() {
        let w = CoefficientSet::tied_affine().derived_weights(0.5).unwrap();
        assert_relative_eq!(w.sf_a.unwrap(), 1.0 / 0.75f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(w.sf_a.unwrap(), 1.154700538379251, max_relative = 1e-15);
    }

    #[test]
    fn explicit_weights_follow_their_definitions() {
        let c = explicit(ScalarFunction::affine(1.0, 1.0), ScalarFunction::poly([2.0, 0.5]));
        let u = 0.3f64;
        let w = c.derived_weights(u).unwrap();
        let n = 2.0 + u;
        let a2 = 2.0 + 0.5 * u;
        let s = 1.0 - u * u;
        assert_relative_eq!(w.sf_a.unwrap(), (n * n).powi(2) / a2 / s.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(w.a.unwrap(), (n * n).powi(2) / a2 / s, max_relative = 1e-14);
        assert_relative_eq!(w.m, s, max_relative = 1e-15);
    }

    #[test]
    fn endpoints_rejected() {
        let c = CoefficientSet::tied_affine();
        assert_eq!(c.derived_weights(1.0), Err(CoeffError::Domain(1.0)));
        assert!(c.derived_weights(-1.5).is_err());
        assert!(c.derived_weights(f64::NAN).is_err());
        assert!(c.alpha(1.0 + 1e-9).is_err());
    }

    #[test]
    fn constant_branch_has_no_coupling_weights() {
        let c = CoefficientSet::constant_coupling();
        let w = c.derived_weights(0.2).unwrap();
        assert!(w.sf_a.is_none() && w.c.is_none() && w.ell.is_none());
        assert!(c.compute_constants().eta.is_none());
    }

    #[test]
    fn tied_on_constant_coupling_rejected() {
        let r = CoefficientSet::new(
            ScalarFunction::constant(1.0),
            1,
            ScalarFunction::constant(1.0),
            A2Tau::Tied { a_tilde: 1.0 },
        );
        assert!(matches!(r, Err(CoeffError::Invalid(_))));
        let r = CoefficientSet::new(ScalarFunction::constant(1.0), 0, ScalarFunction::affine(1.0, 1.0), A2Tau::Tied { a_tilde: 1.0 });
        assert!(r.is_err());
    }

    #[test]
    fn alpha_of_semicircle() {
        let c = CoefficientSet::tied_affine();
        assert_relative_eq!(c.alpha(1.0).unwrap(), PI / 4.0, max_relative = 1e-14);
        assert_relative_eq!(c.alpha(-1.0).unwrap(), -PI / 4.0, max_relative = 1e-14);
        assert_eq!(c.alpha(0.0).unwrap(), 0.0);
        // ∫₀^u √(1-x²) = (u√(1-u²) + asin u) / 2
        for &u in &[0.1, 0.5, 0.7, 0.99, -0.3, -0.8] {
            let exact = 0.5 * (u * (1.0f64 - u * u).sqrt() + f64::asin(u));
            assert_relative_eq!(c.alpha(u).unwrap(), exact, max_relative = 1e-12);
        }
    }

    #[test]
    fn alpha_higher_degeneracy() {
        // i = 2: ∫₀¹ (1-x²)^{3/2} dx = 3π/16
        let c = CoefficientSet::new(ScalarFunction::constant(1.0), 2, ScalarFunction::affine(1.0, 1.0), A2Tau::Tied { a_tilde: 1.0 })
            .unwrap();
        assert_relative_eq!(c.alpha(1.0).unwrap(), 3.0 * PI / 16.0, max_relative = 1e-13);
    }

    #[test]
    fn semicircle_constants() {
        let k = CoefficientSet::tied_affine().compute_constants();
        assert!((k.sigma - PI / 2.0).abs() <= 1e-12);
        assert_relative_eq!(k.delta, 8.0 / PI, max_relative = 1e-13);
        assert!((k.sigma_over_delta() - 0.6168502750680849).abs() <= 1e-12);
        assert!((k.alpha1 - 2.0 / k.delta).abs() <= 1e-12);
        assert_relative_eq!(k.eta.unwrap(), 0.1, max_relative = 1e-15);
    }

    #[test]
    fn omega_for_unit_a2tau() {
        let c = explicit(ScalarFunction::poly([2.0, 1.0, 0.2]), ScalarFunction::constant(1.0));
        assert_relative_eq!(c.compute_constants().omega, PI / 2.0, max_relative = 1e-13);
    }

    #[test]
    fn tied_omega_matches_explicit_integral() {
        // n = 2+u, ã = 1: ω = ∫ (2+u)⁴ √(1-u²) du, expanded into even moments
        let k = CoefficientSet::tied_affine().compute_constants();
        let exact = PI / 2.0 * 16.0 + 6.0 * 4.0 * PI / 8.0 + PI / 16.0;
        assert_relative_eq!(k.omega, exact, max_relative = 1e-13);
    }

    #[test]
    fn quadratic_coupling_eta() {
        let c = explicit(ScalarFunction::poly([2.0, 1.0, 0.2]), ScalarFunction::constant(1.0));
        let cp: f64 = 3.2 / 1.4;
        let cm: f64 = 1.2 / 0.6;
        assert_relative_eq!(c.compute_constants().eta.unwrap(), 1.0 / (cp * cp + cm * cm), max_relative = 1e-15);
        assert_relative_eq!(c.compute_constants().eta.unwrap(), 49.0 / 452.0, max_relative = 1e-14);
    }

    #[test]
    fn quadrature_reproduces_weighted_polynomials() {
        // ∫ √(1-u²) u^{2k} du = π (2k)! / (2^{2k+1} k! (k+1)!)
        let mut exact = PI / 2.0;
        for k in 0..=6u32 {
            let v = integrate_adaptive(0.5, 0.5, |u| u.powi(2 * k as i32)).value;
            assert!((v - exact).abs() <= 1e-13, "degree {}", 2 * k);
            let odd = integrate_adaptive(0.5, 0.5, |u| u.powi(2 * k as i32 + 1)).value;
            assert!(odd.abs() <= 1e-13);
            exact *= (2 * k + 1) as f64 / (2 * k + 4) as f64;
        }
    }

    proptest! {
        #[test]
        fn sigma_is_fixed(c0 in 0.5f64..3.0, c2 in 0.0f64..2.0, i in 1u32..4) {
            let c = CoefficientSet::new(ScalarFunction::poly([c0, 0.0, c2]), i, ScalarFunction::affine(1.0, 1.0), A2Tau::Tied { a_tilde: 1.0 }).unwrap();
            let k = c.compute_constants();
            prop_assert!((k.sigma - PI / 2.0).abs() <= 1e-12);
            prop_assert!((k.alpha1 - 2.0 / k.delta).abs() <= 1e-10);
        }

        #[test]
        fn alpha_is_odd_for_even_mobility(c0 in 0.5f64..3.0, c2 in 0.0f64..2.0, u in -1.0f64..1.0) {
            let c = CoefficientSet::new(ScalarFunction::poly([c0, 0.0, c2]), 1, ScalarFunction::affine(1.0, 1.0), A2Tau::Tied { a_tilde: 1.0 }).unwrap();
            let a = c.alpha(u).unwrap();
            let b = c.alpha(-u).unwrap();
            prop_assert!((a + b).abs() <= 1e-12 * (1.0 + a.abs()));
        }

        #[test]
        fn tied_product_is_constant(a_tilde in 0.1f64..10.0, c2 in 0.0f64..1.0, i in 1u32..3) {
            let c = CoefficientSet::new(ScalarFunction::poly([1.0, 0.0, c2]), i, ScalarFunction::poly([2.0, 1.0, 0.2]), A2Tau::Tied { a_tilde }).unwrap();
            for k in 1..=101 {
                let u = -1.0 + 2.0 * k as f64 / 102.0;
                let w = c.derived_weights(u).unwrap();
                prop_assert!((w.sf_a.unwrap() * w.sf_m - a_tilde).abs() <= 1e-12 * a_tilde);
            }
        }

        #[test]
        fn c_derivative_matches_finite_difference(b0 in 0.5f64..3.0, b1 in 0.5f64..2.0, q in 0.0f64..0.2, u in -0.9f64..0.9) {
            let n = ScalarFunction::poly([b0, b1, q]);
            let c = explicit(n.clone(), ScalarFunction::constant(1.0));
            let (v, d1, d2) = (n.value(u), n.d1(u), n.d2(u));
            // c' = 1 - n n''/n'² = 1 - ℓ
            let analytic = 1.0 - v * d2 / (d1 * d1);
            let h = 1e-5;
            let fd = (c.c(u + h).unwrap() - c.c(u - h).unwrap()) / (2.0 * h);
            prop_assert!((fd - analytic).abs() <= 1e-6 * analytic.abs().max(1.0));
            prop_assert!((analytic - (1.0 - c.ell(u).unwrap())).abs() <= 1e-14);
        }
    }
}
