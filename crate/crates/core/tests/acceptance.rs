//! One PASS/FAIL line per acceptance criterion.
//!
//! Exits non-zero when a criterion outside `KNOWN_RED` fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use sharpflow::coeffs::{A2Tau, CoefficientSet, ScalarFunction};
use sharpflow::flow::{mode_amplitude, run, CurveState, NullSink, RunOptions, ShapeSpec, Stepper, TimeStep};
use sharpflow::mode::{convergence_study, Mesh1D, ModeProblem};
use sharpflow::oracle::{zeta_epsilon, ClosedFormCase};
use sharpflow::symbol::{fit_exponent, remainder_decay, tabulate, verify_table, FlowLaw, LawId};

/// Expected red: `sqrt_lb` exceeds `(σ/δ)λ` for `λ < (ηδ)²`.
const KNOWN_RED: &[usize] = &[6];

const C1_TOL: f64 = 1e-10;
const C1_SIGMA_TOL: f64 = 1e-12;
const C2_TOL: f64 = 1e-6;
const C2_ORDER: f64 = 1.8;
const C3_ENERGY_TOL: f64 = 1e-8;
const C3_ALT_TOL: f64 = 1e-6;
const C4_AFFINE_TOL: f64 = 1e-8;
const C4_EXPONENT: f64 = -0.25;
const C5_RATE: f64 = 0.9;
const C5_GAP: f64 = 1e-3;
const C6_SD_SLOPE: f64 = 1e-12;
const C6_FRAC_SLOPE: f64 = 1e-3;
const C6_ISD_SLOPE: f64 = 0.05;
const C7_DRIFT: f64 = 1e-6;
const C7_DRIFT_RESTORED: f64 = 1e-10;
const C7_KAPPA: f64 = 1e-3;
const C7_T_END: f64 = 20.0;
const C8_RATE: f64 = 0.05;
const C9_VELOCITY: f64 = 1e-12;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(ok: bool, detail: String) -> Outcome {
    Outcome { pass: ok, detail }
}

fn within(elapsed: Duration, budget_s: f64) -> bool {
    elapsed.as_secs_f64() < budget_s
}

fn c1() -> Outcome {
    let t = Instant::now();
    let k = CoefficientSet::constant_coupling().compute_constants();
    let el = t.elapsed();
    let e_ratio = (k.sigma_over_delta() - PI * PI / 16.0).abs();
    let e_sigma = (k.sigma - PI / 2.0).abs();
    let e_alpha = (k.alpha1 - 2.0 / k.delta).abs();
    check(
        e_ratio <= C1_TOL && e_sigma <= C1_SIGMA_TOL && e_alpha <= C1_TOL && within(el, 0.1),
        format!(
            "|σ/δ-π²/16|={e_ratio:.1e} |σ-π/2|={e_sigma:.1e} |α(1)-2/δ|={e_alpha:.1e} in {:.3}s",
            el.as_secs_f64()
        ),
    )
}

const C2_LAMBDAS: [f64; 5] = [1.0, 10.0, 100.0, 1e3, 1e4];

fn c2_c3() -> (Outcome, Outcome) {
    let t = Instant::now();
    let coeffs = CoefficientSet::tied_affine();
    let case = ClosedFormCase::from_coeffs(&coeffs).unwrap();
    let sigma = coeffs.compute_constants().sigma;
    let problem = ModeProblem::new(&coeffs, &Mesh1D::default_graded(2048).unwrap()).unwrap();
    let (mut worst, mut worst_energy, mut worst_alt) = (0.0f64, 0.0f64, 0.0f64);
    for &l in &C2_LAMBDAS {
        let s = problem.solve(l).unwrap();
        let exact = case.zeta(l).unwrap();
        worst = worst.max((s.zeta - exact).abs() / exact);
        worst_energy = worst_energy.max((s.energy - sigma * s.zeta).abs() / (1.0 + sigma * s.zeta));
        worst_alt = worst_alt.max((s.zeta - s.zeta_alt).abs() / s.zeta);
    }
    let meshes: Vec<Mesh1D> = [256, 512, 1024, 2048].iter().map(|&n| Mesh1D::default_graded(n).unwrap()).collect();
    let order = C2_LAMBDAS
        .iter()
        .map(|&l| convergence_study(&coeffs, l, &meshes).unwrap().observed_order)
        .fold(f64::INFINITY, f64::min);
    let el = t.elapsed();
    (
        check(
            worst <= C2_TOL && order >= C2_ORDER && within(el, 5.0),
            format!("max rel err {worst:.2e} (tol {C2_TOL:.0e}), min order {order:.2} in {:.2}s", el.as_secs_f64()),
        ),
        check(
            worst_energy <= C3_ENERGY_TOL && worst_alt <= C3_ALT_TOL,
            format!("energy gap {worst_energy:.1e} (tol {C3_ENERGY_TOL:.0e}), |ζ-ζ_alt|/ζ {worst_alt:.1e} (tol {C3_ALT_TOL:.0e})"),
        ),
    )
}

fn c4() -> Outcome {
    let t = Instant::now();
    let affine = FlowLaw::shipped(LawId::FractionalClosed).unwrap();
    let k = *affine.constants();
    let eta = k.eta.unwrap();
    let at = (affine.zeta_exact(1e4).unwrap() / (k.sigma * eta * 100.0) - 1.0).abs();
    let quad = CoefficientSet::new(
        ScalarFunction::constant(1.0),
        1,
        ScalarFunction::poly([2.0, 1.0, 0.2]),
        A2Tau::Tied { a_tilde: 1.0 },
    )
    .unwrap();
    let law = FlowLaw::new(LawId::FractionalNumeric, &quad).unwrap();
    let grid: Vec<f64> = (0..=16).map(|j| 10f64.powf(2.0 + 0.25 * j as f64)).collect();
    let rep = remainder_decay(&law, law.constants(), &grid).unwrap();
    let el = t.elapsed();
    check(
        at <= C4_AFFINE_TOL && rep.exponent <= C4_EXPONENT && within(el, 30.0),
        format!(
            "affine remainder at 1e4 {at:.1e} (tol {C4_AFFINE_TOL:.0e}), quadratic exponent {:.3} over the top decade (full window {:.3}, bound {C4_EXPONENT}) in {:.2}s",
            rep.exponent,
            rep.full_slope,
            el.as_secs_f64()
        ),
    )
}

fn c5() -> Outcome {
    let t = Instant::now();
    let (sigma, delta, omega, alpha1) = (PI / 2.0, 8.0 / PI, PI / 2.0, PI / 4.0);
    let eps = [1e-1, 1e-2, 1e-3];
    let mut ok = true;
    let mut rates = Vec::new();
    let mut gap_1 = f64::NAN;
    for l in [1.0, 4.0, 9.0, 16.0] {
        let isd = sigma * l / (delta + omega * l);
        let gaps: Vec<f64> = eps.iter().map(|&e| (zeta_epsilon(e, alpha1, l, sigma).unwrap() - isd).abs()).collect();
        ok &= gaps.windows(2).all(|w| w[1] < w[0]);
        let pts: Vec<(f64, f64)> = eps.iter().zip(&gaps).map(|(e, g)| (e.ln(), g.ln())).collect();
        let rate = slope(&pts);
        ok &= rate >= C5_RATE;
        rates.push(rate);
        if l == 1.0 {
            gap_1 = gaps[2] / isd;
        }
    }
    let el = t.elapsed();
    let min_rate = rates.iter().cloned().fold(f64::INFINITY, f64::min);
    check(
        ok && gap_1 < C5_GAP && within(el, 1.0),
        format!("min rate {min_rate:.3} (≥ {C5_RATE}), gap at ε=1e-3, λ=1: {gap_1:.1e} of ζ_ISD in {:.3}s", el.as_secs_f64()),
    )
}

fn slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn c6() -> Outcome {
    let t = Instant::now();
    let mut ok = true;
    let mut notes = Vec::new();
    for id in LawId::SHIPPED {
        let law = FlowLaw::shipped(id).unwrap();
        let table = tabulate(&law, 1e-3, 1e8, 61).unwrap();
        let rep = verify_table(&table, law.constants());
        let zero = law.zeta(0.0).unwrap() == 0.0;
        if !(rep.passed() && zero) {
            ok = false;
            let dom: Vec<f64> = rep.violations.iter().map(|v| v.lambda).collect();
            notes.push(format!(
                "{id}: positivity {} zero {zero} dominance fails at {} rows up to λ={:.2e}",
                rep.positivity,
                dom.len(),
                dom.iter().cloned().fold(0.0, f64::max)
            ));
        }
        let tail = fit_exponent(&table, 1e6, 1e8).unwrap().slope;
        match id {
            LawId::SurfaceDiffusion => {
                let s = fit_exponent(&table, 0.0, f64::INFINITY).unwrap().slope;
                ok &= (s - 1.0).abs() <= C6_SD_SLOPE;
                notes.push(format!("sd slope {s:.15}"));
            }
            LawId::FractionalClosed | LawId::FractionalNumeric => {
                ok &= (tail - 0.5).abs() <= C6_FRAC_SLOPE;
                notes.push(format!("{id} tail {tail:.6}"));
            }
            LawId::Intermediate => {
                ok &= tail <= C6_ISD_SLOPE;
                notes.push(format!("isd tail {tail:.2e}"));
            }
            _ => {}
        }
    }
    let el = t.elapsed();
    ok &= within(el, 60.0);
    check(ok, format!("{} in {:.1}s", notes.join("; "), el.as_secs_f64()))
}

const FLOW_LAWS: [LawId; 4] = [LawId::SurfaceDiffusion, LawId::Intermediate, LawId::SqrtLb, LawId::FractionalClosed];

fn c7() -> Outcome {
    let initial = CurveState::from_shape(&ShapeSpec::Ellipse { a: 1.5, b: 1.0 }, 256).unwrap();
    let mut ok = true;
    let mut notes = Vec::new();
    for id in FLOW_LAWS {
        let t = Instant::now();
        let law = FlowLaw::shipped(id).unwrap();
        let mut drift = [0.0; 2];
        let mut line = String::new();
        for (i, enforce) in [false, true].into_iter().enumerate() {
            let opts = RunOptions { t_end: C7_T_END, frames: 20, enforce_area: enforce, ..Default::default() };
            let d = match run(&initial, &law, &opts, &mut NullSink) {
                Ok(d) => d,
                Err(e) => {
                    ok = false;
                    notes.push(format!("{id}: {e}"));
                    continue;
                }
            };
            let s = d.summary();
            drift[i] = s.area_drift;
            ok &= s.perimeter_violations == 0 && s.deficit_strictly_decreasing && s.final_kappa_dev_rel <= C7_KAPPA;
            if !enforce {
                line = format!(
                    "{id}: violations {} deficit↓ {} κ dev {:.1e}",
                    s.perimeter_violations, s.deficit_strictly_decreasing, s.final_kappa_dev_rel
                );
            }
        }
        ok &= drift[0] <= C7_DRIFT && drift[1] <= C7_DRIFT_RESTORED;
        let el = t.elapsed();
        ok &= within(el, 120.0);
        notes.push(format!("{line} drift {:.1e}/{:.1e} {:.1}s", drift[0], drift[1], el.as_secs_f64()));
    }
    check(ok, notes.join("; "))
}

fn c8() -> Outcome {
    let t = Instant::now();
    let initial = CurveState::from_shape(&ShapeSpec::Fourier { coeffs: vec![1.0, 0.0, 0.0, 0.01, 0.0] }, 128).unwrap();
    let r = (initial.area / PI).sqrt();
    let mut ok = true;
    let mut worst = 0.0f64;
    for id in LawId::SHIPPED {
        let law = FlowLaw::shipped(id).unwrap();
        let expected = 3.0 * law.zeta(4.0 / (r * r)).unwrap() / (r * r);
        let t_end = 1.0 / expected;
        let mut frames = Vec::new();
        let opts = RunOptions { t_end, frames: 10, ..Default::default() };
        if let Err(e) = run(&initial, &law, &opts, &mut frames) {
            println!("  {id}: {e}");
            ok = false;
            continue;
        }
        let pts: Vec<(f64, f64)> = frames.iter().map(|f| (f.t, mode_amplitude(f, 2).unwrap().ln())).collect();
        let rate = -slope(&pts);
        let rel = (rate - expected).abs() / expected;
        worst = worst.max(rel);
        ok &= rel <= C8_RATE;
    }
    let el = t.elapsed();
    ok &= within(el, 60.0);
    check(ok, format!("worst relative rate error {worst:.2e} (tol {C8_RATE}) over {} laws in {:.1}s", LawId::SHIPPED.len(), el.as_secs_f64()))
}

fn c9() -> Outcome {
    let circle = CurveState::from_shape(&ShapeSpec::Circle { r: 1.0 }, 256).unwrap();
    let mut ok = true;
    let mut worst = 0.0f64;
    for id in LawId::SHIPPED {
        let law = FlowLaw::shipped(id).unwrap();
        let bound = C9_VELOCITY * law.constants().sigma / circle.perimeter;
        let mut st = Stepper::new(&circle, &law).unwrap();
        let v0 = st.max_velocity().unwrap();
        for _ in 0..100 {
            st.advance(TimeStep::Fixed { dt: 1e-3 }, f64::INFINITY).unwrap();
        }
        let v1 = st.max_velocity().unwrap();
        worst = worst.max(v0.max(v1) / bound);
        ok &= v0 <= bound && v1 <= bound;
    }
    check(ok, format!("max|V| at most {worst:.1e} of 1e-12·σ/L over step 0 and step 100"))
}

fn main() -> ExitCode {
    let (r2, r3) = c2_c3();
    let results = [
        (1, "constants", c1()),
        (2, "oracle-solver agreement", r2),
        (3, "energy identity and dual ζ", r3),
        (4, "fractional asymptotics", c4()),
        (5, "singular limit to ISD", c5()),
        (6, "symbol properties", c6()),
        (7, "flow invariants", c7()),
        (8, "linear stability", c8()),
        (9, "equilibria", c9()),
    ];
    let mut unexpected = 0;
    for (n, name, o) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        let known = if !o.pass && KNOWN_RED.contains(n) { " [known red]" } else { "" };
        println!("{tag} criterion {n} ({name}){known}: {}", o.detail);
        if !o.pass && !KNOWN_RED.contains(n) {
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
