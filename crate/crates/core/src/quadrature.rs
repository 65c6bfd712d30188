//! Gauss–Jacobi quadrature on `[-1, 1]` with weight `(1-x)^alpha (1+x)^beta`.
//!
//! The Chebyshev cases `alpha = beta = ±1/2` use their closed-form nodes and
//! weights. Every other pair is computed by Newton iteration on the three-term
//! recurrence, seeded with the Gatteschi-type angle approximation. Rules are
//! cached process-wide, so repeated requests for the same `(n, alpha, beta)`
//! are free.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use statrs::function::gamma::ln_gamma;

/// Largest rule the adaptive integrators will build.
pub const MAX_NODES: usize = 1 << 14;

/// Two successive adaptive estimates must agree to this (relative) tolerance.
pub const ADAPTIVE_TOL: f64 = 1e-12;

type RuleCache = HashMap<(usize, u64, u64), Arc<GaussJacobi>>;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussJacobi {
    alpha: f64,
    beta: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussJacobi {
    /// Builds (or fetches from the cache) the `n`-point rule.
    ///
    /// Panics if `n == 0` or an exponent is not above `-1`.
    pub fn new(n: usize, alpha: f64, beta: f64) -> Arc<GaussJacobi> {
        assert!(n > 0, "quadrature rule needs at least one node");
        assert!(
            alpha > -1.0 && beta > -1.0,
            "Jacobi exponents must exceed -1 (got {alpha}, {beta})"
        );
        static CACHE: OnceLock<Mutex<RuleCache>> = OnceLock::new();
        let key = (n, alpha.to_bits(), beta.to_bits());
        let cache = CACHE.get_or_init(Default::default);
        if let Some(rule) = cache.lock().unwrap().get(&key) {
            return Arc::clone(rule);
        }
        let rule = Arc::new(Self::compute(n, alpha, beta));
        cache.lock().unwrap().insert(key, Arc::clone(&rule));
        rule
    }

    /// Gauss–Legendre rule (`alpha = beta = 0`).
    pub fn legendre(n: usize) -> Arc<GaussJacobi> {
        Self::new(n, 0.0, 0.0)
    }

    fn compute(n: usize, alpha: f64, beta: f64) -> GaussJacobi {
        if alpha == -0.5 && beta == -0.5 {
            // Chebyshev, first kind.
            let w = PI / n as f64;
            let mut nodes: Vec<f64> = (1..=n)
                .map(|k| ((2 * k - 1) as f64 * PI / (2 * n) as f64).cos())
                .collect();
            nodes.reverse();
            return GaussJacobi { alpha, beta, nodes, weights: vec![w; n] };
        }
        if alpha == 0.5 && beta == 0.5 {
            // Chebyshev, second kind.
            let h = PI / (n + 1) as f64;
            let mut pairs: Vec<(f64, f64)> = (1..=n)
                .map(|k| {
                    let t = k as f64 * h;
                    (t.cos(), h * t.sin().powi(2))
                })
                .collect();
            pairs.reverse();
            let (nodes, weights) = pairs.into_iter().unzip();
            return GaussJacobi { alpha, beta, nodes, weights };
        }
        newton_rule(n, alpha, beta)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Nodes in increasing order.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `∫_{-1}^{1} (1-x)^alpha (1+x)^beta f(x) dx`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Exact value of `∫_{-1}^{1} (1-x)^alpha (1+x)^beta dx`.
pub fn jacobi_weight_mass(alpha: f64, beta: f64) -> f64 {
    ((alpha + beta + 1.0) * std::f64::consts::LN_2 + ln_gamma(alpha + 1.0) + ln_gamma(beta + 1.0)
        - ln_gamma(alpha + beta + 2.0))
    .exp()
}

/// Evaluates `(P_n(x), P_{n-1}(x))` for the Jacobi family.
fn jacobi_pair(n: usize, alpha: f64, beta: f64, x: f64) -> (f64, f64) {
    let ab = alpha + beta;
    let mut p_prev = 1.0;
    let mut p = 0.5 * (alpha - beta + (ab + 2.0) * x);
    if n == 1 {
        return (p, p_prev);
    }
    for k in 2..=n {
        let k = k as f64;
        let c = 2.0 * k + ab;
        let a1 = 2.0 * k * (k + ab) * (c - 2.0);
        let a2 = (c - 1.0) * (alpha * alpha - beta * beta);
        let a3 = (c - 2.0) * (c - 1.0) * c;
        let a4 = 2.0 * (k + alpha - 1.0) * (k + beta - 1.0) * c;
        let next = ((a2 + a3 * x) * p - a4 * p_prev) / a1;
        p_prev = p;
        p = next;
    }
    (p, p_prev)
}

fn newton_rule(n: usize, alpha: f64, beta: f64) -> GaussJacobi {
    let ab = alpha + beta;
    let nf = n as f64;
    let temp = 2.0 * nf + ab;

    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for k in 1..=n {
        let theta = (k as f64 - 0.25 + 0.5 * alpha) * PI / (nf + 0.5 * (ab + 1.0));
        // (2n+a+b)(1-x^2) P_n' = n[(a-b) - (2n+a+b)x] P_n + 2(n+a)(n+b) P_{n-1}
        let derivative = |x: f64| {
            let (p, pm) = jacobi_pair(n, alpha, beta, x);
            let dp = (nf * (alpha - beta - temp * x) * p
                + 2.0 * (nf + alpha) * (nf + beta) * pm)
                / (temp * (1.0 - x * x));
            (p, pm, dp)
        };
        let mut x = theta.cos();
        for _ in 0..100 {
            let (p, _, dp) = derivative(x);
            let step = p / dp;
            x -= step;
            if step.abs() <= 1e-15 * x.abs().max(1e-3) {
                break;
            }
        }
        let (_, pm, dp) = derivative(x);
        nodes.push(x);
        weights.push(1.0 / (dp * pm));
    }
    // The common prefactor is fixed by the zeroth moment; computing it from
    // ln Γ at large arguments would cost several digits.
    let total: f64 = weights.iter().sum();
    let scale = jacobi_weight_mass(alpha, beta) / total;
    weights.iter_mut().for_each(|w| *w *= scale);
    // Seeds run from x = +1 downwards.
    nodes.reverse();
    weights.reverse();
    GaussJacobi { alpha, beta, nodes, weights }
}

/// Outcome of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adaptive {
    pub value: f64,
    pub nodes: usize,
    pub converged: bool,
}

/// `∫_{-1}^{1} (1-x)^alpha (1+x)^beta f(x) dx` with node count doubling from 8
/// until two successive values agree to [`ADAPTIVE_TOL`] (relative to the
/// integral of `|f|`), capped at [`MAX_NODES`].
pub fn integrate_adaptive<F: Fn(f64) -> f64>(alpha: f64, beta: f64, f: F) -> Adaptive {
    let estimate = |n: usize| {
        let rule = GaussJacobi::new(n, alpha, beta);
        let mut value = 0.0;
        let mut magnitude = 0.0;
        for (&x, &w) in rule.nodes().iter().zip(rule.weights()) {
            let fx = f(x);
            value += w * fx;
            magnitude += w * fx.abs();
        }
        (value, magnitude)
    };
    let mut n = 8;
    let (mut prev, _) = estimate(n);
    loop {
        let next_n = n * 2;
        let (value, magnitude) = estimate(next_n);
        let converged = (value - prev).abs() <= ADAPTIVE_TOL * magnitude.max(f64::MIN_POSITIVE);
        if converged || next_n >= MAX_NODES {
            if !converged {
                log::warn!("adaptive Gauss-Jacobi hit the {MAX_NODES}-node cap");
            }
            return Adaptive { value, nodes: next_n, converged };
        }
        prev = value;
        n = next_n;
    }
}

/// Integral over `[a, b]` of `(b - x)^alpha (x - a)^beta g(x)`, absorbing the
/// endpoint powers exactly.
pub fn integrate_interval_adaptive<F: Fn(f64) -> f64>(
    a: f64,
    b: f64,
    alpha: f64,
    beta: f64,
    g: F,
) -> Adaptive {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    let scale = half.powf(1.0 + alpha + beta);
    let inner = integrate_adaptive(alpha, beta, |x| g(mid + half * x));
    Adaptive { value: scale * inner.value, ..inner }
}

/// Panel rule on `[-1, 1]`: Gauss–Legendre nodes plus the cumulative
/// integration matrix `S[j][k] = ∫_{-1}^{x_j} L_k(x) dx` of the Lagrange basis.
#[derive(Debug, Clone)]
pub struct PanelRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    cumulative: Vec<Vec<f64>>,
}

impl PanelRule {
    pub fn new(p: usize) -> PanelRule {
        let rule = GaussJacobi::legendre(p);
        let nodes = rule.nodes().to_vec();
        let weights = rule.weights().to_vec();
        let bary = barycentric_weights(&nodes);
        let cumulative = nodes
            .iter()
            .map(|&xj| {
                let half = 0.5 * (xj + 1.0);
                let mid = 0.5 * (xj - 1.0);
                let mut row = vec![0.0; p];
                for (&y, &w) in rule.nodes().iter().zip(rule.weights()) {
                    let t = mid + half * y;
                    let basis = lagrange_basis(&nodes, &bary, t);
                    for (r, l) in row.iter_mut().zip(basis) {
                        *r += half * w * l;
                    }
                }
                row
            })
            .collect();
        PanelRule { nodes, weights, cumulative }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Row `j` of the cumulative integration matrix.
    pub fn cumulative_row(&self, j: usize) -> &[f64] {
        &self.cumulative[j]
    }
}

fn barycentric_weights(nodes: &[f64]) -> Vec<f64> {
    (0..nodes.len())
        .map(|j| {
            let prod: f64 = (0..nodes.len())
                .filter(|&k| k != j)
                .map(|k| nodes[j] - nodes[k])
                .product();
            1.0 / prod
        })
        .collect()
}

fn lagrange_basis(nodes: &[f64], bary: &[f64], t: f64) -> Vec<f64> {
    if let Some(hit) = nodes.iter().position(|&x| x == t) {
        let mut out = vec![0.0; nodes.len()];
        out[hit] = 1.0;
        return out;
    }
    let terms: Vec<f64> = nodes.iter().zip(bary).map(|(&x, &w)| w / (t - x)).collect();
    let denom: f64 = terms.iter().sum();
    terms.into_iter().map(|v| v / denom).collect()
}
