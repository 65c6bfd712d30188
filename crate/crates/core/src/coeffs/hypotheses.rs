use serde::Serialize;

use super::{A2Tau, Branch, CoefficientSet};

/// Outcome of one grid certificate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisCheck {
    pub name: &'static str,
    pub passed: bool,
    pub witness_u: Option<f64>,
    pub witness_value: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub grid_size: usize,
    pub checks: Vec<HypothesisCheck>,
}

impl HypothesisReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &HypothesisCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

const REFINE: usize = 8;

/// Evaluates `(m1), (n1), (n2), (τ1), (τ2), (e3)` on Chebyshev grids.
/// `grid_size` is clamped to at least 11.
pub fn check_hypotheses(coeffs: &CoefficientSet, grid_size: usize) -> HypothesisReport {
    let g = grid_size.max(11);
    let closed = lobatto(g);
    let open = CoefficientSet::interior_grid(g);
    let fine = CoefficientSet::interior_grid(REFINE * g);
    let mut checks = Vec::with_capacity(6);

    checks.push(positive("m1", &closed, -1.0, 1.0, |u| coeffs.m_tilde.value(u), "min m̃"));

    match coeffs.branch() {
        Branch::ConstantCoupling => {
            let n0 = coeffs.n.value(0.0);
            checks.push(HypothesisCheck {
                name: "n1",
                passed: n0 > 0.0,
                witness_u: (n0 <= 0.0).then_some(0.0),
                witness_value: (n0 <= 0.0).then_some(n0),
                detail: format!("constant coupling n = {n0}"),
            });
            checks.push(pass("n2", "constant coupling, n' ≡ 0"));
        }
        Branch::MonotoneCoupling => {
            checks.push(positive("n1", &closed, -1.0, 1.0, |u| coeffs.n.value(u), "min n"));
            checks.push(positive("n2", &closed, -1.0, 1.0, |u| coeffs.n.d1(u), "min n'"));
        }
    }

    let lo = open[0];
    let hi = open[open.len() - 1];
    checks.push(positive("tau1", &open, lo, hi, |u| coeffs.a2tau_value(u), "min A²τ"));

    checks.push(match (&coeffs.a2tau, coeffs.branch()) {
        (_, Branch::ConstantCoupling) => pass("tau2", "constant coupling, not applicable"),
        (A2Tau::Tied { a_tilde }, _) => {
            let mut worst = (0.0, 0.0);
            for k in 1..=101 {
                let u = -1.0 + 2.0 * k as f64 / 102.0;
                let prod = coeffs.sf_a_smooth(u).unwrap_or(f64::NAN) * coeffs.m_tilde.value(u);
                let err = ((prod - a_tilde) / a_tilde).abs();
                if !(err <= worst.1) {
                    worst = (u, err);
                }
            }
            HypothesisCheck {
                name: "tau2",
                passed: worst.1 <= 1e-12,
                witness_u: (worst.1 > 1e-12).then_some(worst.0),
                witness_value: (worst.1 > 1e-12).then_some(worst.1),
                detail: format!("max relative |𝖺𝗆 - ã| / ã = {:e}", worst.1),
            }
        }
        (A2Tau::Explicit(_), _) => positive(
            "tau2",
            &open,
            lo,
            hi,
            |u| {
                let s = 1.0 - u * u;
                coeffs.sf_a_smooth(u).unwrap_or(f64::NAN) * coeffs.m_tilde.value(u) * s.powi(coeffs.i as i32 - 1)
            },
            "min ã = 𝖺𝗆",
        ),
    });

    let iota = |u: f64| {
        let n = coeffs.n.value(u);
        n * n / (coeffs.a2tau_value(u) * (1.0 - u * u).sqrt())
    };
    let mut e3 = positive("e3", &fine, fine[0], fine[fine.len() - 1], iota, "ι");
    if e3.passed {
        let iota_min = fine.iter().map(|&u| iota(u)).fold(f64::INFINITY, f64::min);
        e3.witness_value = None;
        e3.detail = format!("ι = {iota_min:e} on {} points", fine.len());
    }
    checks.push(e3);

    HypothesisReport { grid_size: g, checks }
}

fn pass(name: &'static str, detail: &str) -> HypothesisCheck {
    HypothesisCheck { name, passed: true, witness_u: None, witness_value: None, detail: detail.into() }
}

fn lobatto(g: usize) -> Vec<f64> {
    (0..g)
        .map(|k| -(std::f64::consts::PI * k as f64 / (g - 1) as f64).cos())
        .collect()
}

/// Certifies `f > 0` on `[lo, hi]`. A sign change between grid points is
/// located by bisection; otherwise the discrete minimum is refined by
/// golden-section search on its neighbouring cells.
fn positive<F: Fn(f64) -> f64>(
    name: &'static str,
    grid: &[f64],
    lo: f64,
    hi: f64,
    f: F,
    label: &str,
) -> HypothesisCheck {
    let values: Vec<f64> = grid.iter().map(|&u| f(u)).collect();
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return fail(name, grid[k], values[k], format!("{label} is not finite"));
    }
    for k in 1..grid.len() {
        if values[k - 1] > 0.0 && values[k] <= 0.0 || values[k - 1] <= 0.0 && values[k] > 0.0 {
            let u = bisect(&f, grid[k - 1], grid[k]);
            return fail(name, u, f(u), format!("{label} changes sign"));
        }
    }
    let (k, _) = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("grid is non-empty");
    let a = if k > 0 { grid[k - 1] } else { lo };
    let b = if k + 1 < grid.len() { grid[k + 1] } else { hi };
    let (u, v) = golden_min(&f, a.max(lo), b.min(hi));
    let (u, v) = if v < values[k] { (u, v) } else { (grid[k], values[k]) };
    let scale = values.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if v <= 1e-12 * scale {
        fail(name, u, v, format!("{label} = {v:e} is not positive"))
    } else {
        HypothesisCheck { name, passed: true, witness_u: None, witness_value: Some(v), detail: format!("{label} = {v:e}") }
    }
}

fn fail(name: &'static str, u: f64, v: f64, detail: String) -> HypothesisCheck {
    HypothesisCheck { name, passed: false, witness_u: Some(u), witness_value: Some(v), detail }
}

fn bisect<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64) -> f64 {
    let fa_pos = f(a) > 0.0;
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m == a || m == b {
            break;
        }
        if (f(m) > 0.0) == fa_pos {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

fn golden_min<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..100 {
        if b - a <= 1e-14 {
            break;
        }
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        }
    }
    if f1 < f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::ScalarFunction;

    #[test]
    fn affine_coupling_passes_everything() {
        let r = check_hypotheses(&CoefficientSet::tied_affine(), 33);
        assert!(r.all_passed(), "{r:#?}");
        assert_eq!(r.checks.len(), 6);
    }

    #[test]
    fn vanishing_coupling_fails_n1_at_origin() {
        let c = CoefficientSet::new(
            ScalarFunction::constant(1.0),
            1,
            ScalarFunction::poly([0.0, 1.0]),
            A2Tau::Explicit(ScalarFunction::constant(1.0)),
        )
        .unwrap();
        let r = check_hypotheses(&c, 21);
        let n1 = r.get("n1").unwrap();
        assert!(!n1.passed);
        assert!(n1.witness_u.unwrap().abs() < 1e-12);
    }

    #[test]
    fn near_degenerate_mobility_still_positive() {
        let c = CoefficientSet::new(
            ScalarFunction::poly([0.01, 0.0, 1.0]),
            1,
            ScalarFunction::affine(1.0, 1.0),
            A2Tau::Tied { a_tilde: 1.0 },
        )
        .unwrap();
        let r = check_hypotheses(&c, 21);
        let m1 = r.get("m1").unwrap();
        assert!(m1.passed);
        assert!((m1.witness_value.unwrap() - 0.01).abs() < 1e-12);
        assert!(r.get("e3").unwrap().passed);
    }

    #[test]
    fn off_grid_critical_point_in_derivative_found() {
        // n' = 3(u - 0.3)² touches zero between grid points.
        let c = CoefficientSet::new(
            ScalarFunction::constant(1.0),
            1,
            ScalarFunction::poly([5.0, 0.27, -0.9, 1.0]),
            A2Tau::Explicit(ScalarFunction::constant(1.0)),
        )
        .unwrap();
        let n2 = check_hypotheses(&c, 11).get("n2").unwrap().clone();
        assert!(!n2.passed);
        assert!((n2.witness_u.unwrap() - 0.3).abs() < 1e-6);
    }

    #[test]
    fn decreasing_coupling_fails_n2() {
        let c = CoefficientSet::new(
            ScalarFunction::constant(1.0),
            1,
            ScalarFunction::affine(3.0, -1.0),
            A2Tau::Explicit(ScalarFunction::constant(1.0)),
        )
        .unwrap();
        let r = check_hypotheses(&c, 11);
        assert!(!r.get("n2").unwrap().passed);
        assert!(r.get("n1").unwrap().passed);
    }

    #[test]
    fn negative_a2tau_fails_tau1() {
        let c = CoefficientSet::new(
            ScalarFunction::constant(1.0),
            1,
            ScalarFunction::affine(1.0, 1.0),
            A2Tau::Explicit(ScalarFunction::poly([0.0, 1.0])),
        )
        .unwrap();
        let r = check_hypotheses(&c, 15);
        assert!(!r.get("tau1").unwrap().passed);
        assert_eq!(r.failures().count(), r.checks.iter().filter(|c| !c.passed).count());
    }

    #[test]
    fn constant_coupling_report() {
        let r = check_hypotheses(&CoefficientSet::constant_coupling(), 11);
        assert!(r.all_passed(), "{r:#?}");
    }
}
