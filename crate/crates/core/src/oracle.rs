//! Closed-form and semi-analytic symbols for the tied case `𝖺𝗆 ≡ ã`, the
//! vanishing-slope family, and the classical reference laws.
//!
//! With `𝖺𝗆 = ã` the substitution `r = α(u)` turns the mode equation into
//! `-ã f'' + λ f = ζ ℓ / 𝗆`, so a problem with constant `ã` is the `ã = 1`
//! problem at `λ / ã` with multiplier `ζ / ã`:
//!
//! ```text
//! ζ_ã(λ) = ã · ζ₁(λ / ã)
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coeffs::{Branch, CoefficientSet, ModelConstants};
use crate::quadrature::PanelRule;

/// Smallest `λ` accepted by [`zeta_general_tied`].
pub const LAMBDA_MIN: f64 = 1e-8;

const PANEL_NODES: usize = 16;
const DYADIC_LEVELS: i32 = 50;
/// Largest change of `√λ·α` allowed across one panel.
const MAX_EXPONENT_PER_PANEL: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("closed forms need a tied coefficient set (𝖺𝗆 = const) on the monotone branch")]
    NotTied,
    #[error("lambda must be positive, got {0}")]
    NonPositiveLambda(f64),
    #[error("lambda {0} is below the smallest supported value {LAMBDA_MIN}")]
    LambdaTooSmall(f64),
    #[error("constraint functional is not positive ({0}); check the hypotheses")]
    NonPositiveConstraint(f64),
    #[error("epsilon must lie in (0, 1), got {0}")]
    EpsilonOutOfRange(f64),
    #[error("law `{0}` needs eta, which is only defined for a monotone coupling")]
    MissingEta(&'static str),
}

/// Data of a tied coefficient set that the closed forms consume.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedFormCase {
    /// Half the total mass of `𝗆`, i.e. `(α(1) - α(-1)) / 2`.
    pub alpha1: f64,
    pub c_plus: f64,
    pub c_minus: f64,
    pub a_tilde: f64,
    pub sigma: f64,
    coeffs: Option<CoefficientSet>,
}

impl ClosedFormCase {
    /// Affine coupling data given directly (`ℓ ≡ 0`).
    pub fn affine(c_plus: f64, c_minus: f64, alpha1: f64, a_tilde: f64, sigma: f64) -> Self {
        ClosedFormCase { alpha1, c_plus, c_minus, a_tilde, sigma, coeffs: None }
    }

    pub fn from_coeffs(coeffs: &CoefficientSet) -> Result<Self, OracleError> {
        let a_tilde = coeffs.a_tilde().ok_or(OracleError::NotTied)?;
        if coeffs.branch() != Branch::MonotoneCoupling {
            return Err(OracleError::NotTied);
        }
        let k = coeffs.compute_constants();
        let alpha_minus = coeffs.alpha(-1.0).expect("endpoint in range");
        Ok(ClosedFormCase {
            alpha1: 0.5 * (k.alpha1 - alpha_minus),
            c_plus: coeffs.c(1.0).expect("monotone"),
            c_minus: coeffs.c(-1.0).expect("monotone"),
            a_tilde,
            sigma: k.sigma,
            coeffs: Some(coeffs.clone()),
        })
    }

    /// True when `ℓ ≡ 0`.
    pub fn is_affine(&self) -> bool {
        self.coeffs.as_ref().is_none_or(|c| c.n.is_affine())
    }

    pub fn eta(&self) -> f64 {
        1.0 / (self.c_plus * self.c_plus + self.c_minus * self.c_minus)
    }

    /// Leading large-λ behaviour `σ η √(ã λ)`.
    pub fn sqrt_asymptote(&self, lambda: f64) -> f64 {
        self.sigma * self.eta() * (self.a_tilde * lambda).sqrt()
    }

    /// Best available closed form: [`zeta_affine`] when `ℓ ≡ 0`, otherwise
    /// [`zeta_general_tied`].
    pub fn zeta(&self, lambda: f64) -> Result<f64, OracleError> {
        if self.is_affine() {
            zeta_affine(self, lambda)
        } else {
            zeta_general_tied(self, lambda)
        }
    }
}

/// `1 - e^{-x}` for `x ≥ 0`.
fn one_minus_exp(x: f64) -> f64 {
    -(-x).exp_m1()
}

/// `ζ = σ√λ (1 - r²) / [(c₊² + c₋²)(1 + r²) - 4c₊c₋r]`, `r = e^{-2α₁√λ}`,
/// at `ã = 1`; the denominator is evaluated as
/// `(c₊ - c₋)²(1 + r²) + 2c₊c₋(1 - r)²` so small `λ` keeps its digits.
pub fn zeta_affine(case: &ClosedFormCase, lambda: f64) -> Result<f64, OracleError> {
    if !(lambda > 0.0) {
        return Err(OracleError::NonPositiveLambda(lambda));
    }
    let k = (lambda / case.a_tilde).sqrt();
    let x = 2.0 * case.alpha1 * k;
    let r = (-x).exp();
    let one_minus_r = one_minus_exp(x);
    let one_minus_r2 = one_minus_exp(2.0 * x);
    let (cp, cm) = (case.c_plus, case.c_minus);
    let denom = (cp - cm).powi(2) * (1.0 + r * r) + 2.0 * cp * cm * one_minus_r * one_minus_r;
    Ok(case.a_tilde * case.sigma * k * one_minus_r2 / denom)
}

/// Pieces of the semi-analytic tied solution at one `λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TiedSolution {
    pub lambda: f64,
    pub zeta: f64,
    /// Flux coefficients of the two homogeneous solutions; they approach
    /// `(c(1), -c(-1))` as `λ → ∞`.
    pub b: [f64; 2],
    /// `𝒞f̃` for the profile normalised to `ζ = 1`.
    pub constraint: f64,
    pub panels: usize,
}

/// Variation-of-parameters solution for general `n` with `𝖺𝗆 ≡ ã`.
pub fn zeta_general_tied(case: &ClosedFormCase, lambda: f64) -> Result<f64, OracleError> {
    solve_general_tied(case, lambda).map(|s| s.zeta)
}

pub fn solve_general_tied(case: &ClosedFormCase, lambda: f64) -> Result<TiedSolution, OracleError> {
    if !(lambda > 0.0) {
        return Err(OracleError::NonPositiveLambda(lambda));
    }
    if lambda < LAMBDA_MIN {
        return Err(OracleError::LambdaTooSmall(lambda));
    }
    let k = (lambda / case.a_tilde).sqrt();
    let grid = match &case.coeffs {
        Some(c) if !c.n.is_affine() => Some(TiedGrid::new(c, k)),
        _ => None,
    };
    let (cp, cm) = (case.c_plus, case.c_minus);
    let span = 2.0 * case.alpha1;
    let q = (-k * span).exp();
    let one_minus_q2 = one_minus_exp(2.0 * k * span);

    // I₊ = ∫ e^{-k(α₊-α)} ℓ, I₋ = ∫ e^{-k(α-α₋)} ℓ, L = ∫ ℓ f_p
    let (i_plus, i_minus, l_fp) = match &grid {
        Some(g) => g.integrals(k),
        None => (0.0, 0.0, 0.0),
    };
    let p = cp + 0.5 * i_plus;
    let qv = cm - 0.5 * i_minus;
    let kb_plus = (p - q * qv) / one_minus_q2;
    let kb_minus = (q * p - qv) / one_minus_q2;
    let (b_plus, b_minus) = (kb_plus / k, kb_minus / k);
    let f_right = i_plus / (2.0 * k) + b_plus + q * b_minus;
    let f_left = i_minus / (2.0 * k) + q * b_plus + b_minus;
    let constraint = cp * f_right - cm * f_left + l_fp + b_plus * i_plus + b_minus * i_minus;
    if !(constraint > 0.0) {
        return Err(OracleError::NonPositiveConstraint(constraint));
    }
    Ok(TiedSolution {
        lambda,
        zeta: case.a_tilde * case.sigma / constraint,
        b: [kb_plus, kb_minus],
        constraint,
        panels: grid.map_or(0, |g| g.panels.len()),
    })
}

/// Quadrature panels in `u` carrying `α` and `ℓ` at Gauss–Legendre nodes.
struct TiedGrid {
    rule: PanelRule,
    /// `(a, b, α(a), α(b))` per panel.
    panels: Vec<(f64, f64, f64, f64)>,
    alpha: Vec<f64>,
    ell: Vec<f64>,
    weights: Vec<f64>,
}

impl TiedGrid {
    fn new(coeffs: &CoefficientSet, k: f64) -> TiedGrid {
        let rule = PanelRule::new(PANEL_NODES);
        let mut base = vec![0.0];
        for j in 1..=DYADIC_LEVELS {
            let t = 1.0 - 0.5f64.powi(j);
            base.push(t);
            base.insert(0, -t);
        }
        base.insert(0, -1.0);
        base.push(1.0);
        let mid = DYADIC_LEVELS as usize + 1;
        let mut alpha_base = vec![0.0; base.len()];
        for j in mid..base.len() - 1 {
            alpha_base[j + 1] = alpha_base[j] + panel_mass(coeffs, &rule, base[j], base[j + 1]);
        }
        for j in (1..=mid).rev() {
            alpha_base[j - 1] = alpha_base[j] - panel_mass(coeffs, &rule, base[j - 1], base[j]);
        }

        let mut panels = Vec::new();
        for j in 0..base.len() - 1 {
            let (a, b) = (base[j], base[j + 1]);
            let pieces = (k * (alpha_base[j + 1] - alpha_base[j]) / MAX_EXPONENT_PER_PANEL).ceil().max(1.0) as usize;
            let h = (b - a) / pieces as f64;
            let mut left = (a, alpha_base[j]);
            for s in 1..=pieces {
                let right_u = if s == pieces { b } else { a + h * s as f64 };
                let right_alpha = if s == pieces {
                    alpha_base[j + 1]
                } else {
                    left.1 + panel_mass(coeffs, &rule, left.0, right_u)
                };
                panels.push((left.0, right_u, left.1, right_alpha));
                left = (right_u, right_alpha);
            }
        }

        let p = rule.len();
        let mut alpha = Vec::with_capacity(panels.len() * p);
        let mut ell = Vec::with_capacity(panels.len() * p);
        let mut weights = Vec::with_capacity(panels.len() * p);
        for &(a, b, alpha_a, _) in &panels {
            let half = 0.5 * (b - a);
            let sfm: Vec<f64> = rule.nodes().iter().map(|&x| coeffs.sf_m(a + half * (x + 1.0))).collect();
            for (q, &x) in rule.nodes().iter().enumerate() {
                let u = a + half * (x + 1.0);
                let partial: f64 = rule.cumulative_row(q).iter().zip(&sfm).map(|(s, m)| s * m).sum();
                alpha.push(alpha_a + half * partial);
                ell.push(coeffs.ell(u).expect("monotone"));
                weights.push(half * rule.weights()[q]);
            }
        }
        TiedGrid { rule, panels, alpha, ell, weights }
    }

    fn integrals(&self, k: f64) -> (f64, f64, f64) {
        let p = self.rule.len();
        let alpha_plus = self.panels.last().expect("panels").3;
        let alpha_minus = self.panels[0].2;
        let mut i_plus = 0.0;
        let mut i_minus = 0.0;
        for ((&w, &l), &al) in self.weights.iter().zip(&self.ell).zip(&self.alpha) {
            i_plus += w * l * (-k * (alpha_plus - al)).exp();
            i_minus += w * l * (-k * (al - alpha_minus)).exp();
        }

        // J₊(u) = ∫_{-1}^u e^{-k(α(u)-α)} ℓ, swept left to right.
        let mut j_plus = vec![0.0; self.alpha.len()];
        let mut carry = 0.0;
        for (pi, &(a, b, alpha_a, alpha_b)) in self.panels.iter().enumerate() {
            let half = 0.5 * (b - a);
            let idx = pi * p..(pi + 1) * p;
            let al = &self.alpha[idx.clone()];
            let ll = &self.ell[idx.clone()];
            for q in 0..p {
                let row = self.rule.cumulative_row(q);
                let local: f64 = (0..p).map(|j| row[j] * (-k * (al[q] - al[j])).exp() * ll[j]).sum();
                j_plus[pi * p + q] = (-k * (al[q] - alpha_a)).exp() * carry + half * local;
            }
            let local: f64 = (0..p).map(|j| self.rule.weights()[j] * (-k * (alpha_b - al[j])).exp() * ll[j]).sum();
            carry = (-k * (alpha_b - alpha_a)).exp() * carry + half * local;
        }

        // J₋(u) = ∫_u^1 e^{-k(α-α(u))} ℓ, swept right to left.
        let mut j_minus = vec![0.0; self.alpha.len()];
        let mut carry = 0.0;
        for (pi, &(a, b, alpha_a, alpha_b)) in self.panels.iter().enumerate().rev() {
            let half = 0.5 * (b - a);
            let idx = pi * p..(pi + 1) * p;
            let al = &self.alpha[idx.clone()];
            let ll = &self.ell[idx.clone()];
            for q in 0..p {
                let row = self.rule.cumulative_row(q);
                let local: f64 = (0..p)
                    .map(|j| (self.rule.weights()[j] - row[j]) * (-k * (al[j] - al[q])).exp() * ll[j])
                    .sum();
                j_minus[pi * p + q] = (-k * (alpha_b - al[q])).exp() * carry + half * local;
            }
            let local: f64 = (0..p).map(|j| self.rule.weights()[j] * (-k * (al[j] - alpha_a)).exp() * ll[j]).sum();
            carry = (-k * (alpha_b - alpha_a)).exp() * carry + half * local;
        }

        let l_fp: f64 = self
            .weights
            .iter()
            .zip(&self.ell)
            .zip(j_plus.iter().zip(&j_minus))
            .map(|((w, l), (jp, jm))| w * l * (jp + jm))
            .sum::<f64>()
            / (2.0 * k);
        (i_plus, i_minus, l_fp)
    }
}

fn panel_mass(coeffs: &CoefficientSet, rule: &PanelRule, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    rule.nodes()
        .iter()
        .zip(rule.weights())
        .map(|(&x, &w)| w * coeffs.sf_m(a + half * (x + 1.0)))
        .sum::<f64>()
        * half
}

/// Symbol of the vanishing-slope family `n_ε = 1 + εu`, `A²τ = n_ε⁴ m̃`:
/// `ζ_ε = σ√λ (1 - r²) / (ε[(c₊² + c₋²)(1 + r²) - 4c₊c₋r])`,
/// `c± = 1/ε ± 1`, `r = e^{-2α₁ε√λ}`.
pub fn zeta_epsilon(eps: f64, alpha1: f64, lambda: f64, sigma: f64) -> Result<f64, OracleError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(OracleError::EpsilonOutOfRange(eps));
    }
    if !(lambda >= 0.0) {
        return Err(OracleError::NonPositiveLambda(lambda));
    }
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let s = lambda.sqrt();
    let x = 2.0 * alpha1 * eps * s;
    let (one_minus_r, one_minus_r2) = if x < 1e-4 {
        (taylor_one_minus_exp(x), taylor_one_minus_exp(2.0 * x))
    } else {
        (one_minus_exp(x), one_minus_exp(2.0 * x))
    };
    let r = 1.0 - one_minus_r;
    // Numerator and denominator multiplied by ε²:
    // (c₊ - c₋)² = 4, ε² c₊c₋ = 1 - ε².
    let denom = 4.0 * eps * eps * (1.0 + r * r) + 2.0 * (1.0 - eps * eps) * one_minus_r * one_minus_r;
    Ok(sigma * s * eps * one_minus_r2 / denom)
}

fn taylor_one_minus_exp(x: f64) -> f64 {
    x * (1.0 - x / 2.0 * (1.0 - x / 3.0 * (1.0 - x / 4.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceLaw {
    SurfaceDiffusion,
    Intermediate,
    Vpmcf,
    SqrtLb,
}

impl ReferenceLaw {
    pub fn name(self) -> &'static str {
        match self {
            ReferenceLaw::SurfaceDiffusion => "surface_diffusion",
            ReferenceLaw::Intermediate => "intermediate",
            ReferenceLaw::Vpmcf => "vpmcf",
            ReferenceLaw::SqrtLb => "sqrt_lb",
        }
    }
}

pub fn zeta_reference(law: ReferenceLaw, constants: &ModelConstants, lambda: f64) -> Result<f64, OracleError> {
    if !(lambda >= 0.0) {
        return Err(OracleError::NonPositiveLambda(lambda));
    }
    let ModelConstants { sigma, delta, omega, .. } = *constants;
    Ok(match law {
        ReferenceLaw::SurfaceDiffusion => sigma / delta * lambda,
        ReferenceLaw::Intermediate => sigma * lambda / (delta + omega * lambda),
        ReferenceLaw::Vpmcf if lambda == 0.0 => 0.0,
        ReferenceLaw::Vpmcf => sigma / omega,
        ReferenceLaw::SqrtLb => sigma * constants.eta.ok_or(OracleError::MissingEta("sqrt_lb"))? * lambda.sqrt(),
    })
}
