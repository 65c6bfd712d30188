use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::ExitCode;

use serde_json::{json, Value};
use sharpflow::coeffs::{check_hypotheses, A2Tau, Branch, CoefficientSet, ModelConstants};
use sharpflow::flow::{self, CurveState, DirSink, FlowError, RunOptions, ShapeSpec, TimeStep};
use sharpflow::mode::{Mesh1D, ModeProblem};
use sharpflow::oracle::{zeta_epsilon, ClosedFormCase};
use sharpflow::symbol::{fit_exponent, tabulate, verify_table, FlowLaw, LawId, SymbolTable};

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_ROWS: u8 = 3;
pub const EXIT_FLOW: u8 = 4;

const ROW_FAILURE_SHARE: f64 = 0.1;
const ORACLE_TOL: f64 = 1e-6;
const MIN_EPS: usize = 3;
const MIN_RATE: f64 = 0.9;
const THREADS_VAR: &str = "SHARPFLOW_THREADS";

#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure { code, message: message.into() }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, message)
    }

    fn runtime(message: impl ToString) -> Self {
        Self::new(EXIT_FAILURE, message.to_string())
    }

    pub fn report(&self) -> ExitCode {
        eprintln!("error: {}", self.message);
        ExitCode::from(self.code)
    }
}

type Outcome = Result<(), Failure>;

pub fn configure_threads() -> Outcome {
    let Ok(raw) = std::env::var(THREADS_VAR) else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::usage(format!("{THREADS_VAR} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(Failure::runtime)
}

fn load(config: &Path) -> Result<CoefficientSet, Failure> {
    CoefficientSet::from_path(config).map_err(|e| Failure::usage(e.to_string()))
}

fn law(config: Option<&Path>, name: &str) -> Result<FlowLaw, Failure> {
    let id: LawId = name.parse().map_err(|e: sharpflow::symbol::LawError| Failure::usage(e.to_string()))?;
    let built = match config {
        Some(path) => FlowLaw::new(id, &load(path)?),
        None => FlowLaw::shipped(id),
    };
    built.map_err(|e| Failure::usage(format!("law `{id}`: {e}")))
}

fn write(path: &Path, body: &str) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::runtime(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, body).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json value serializes") + "\n"
}

fn constants_json(k: &ModelConstants) -> Value {
    json!({
        "sigma": k.sigma,
        "delta": k.delta,
        "omega": k.omega,
        "eta": k.eta,
        "alpha1": k.alpha1,
        "sigma_over_delta": k.sigma_over_delta(),
    })
}

pub fn constants(config: &Path) -> Outcome {
    let coeffs = load(config)?;
    let mut v = constants_json(&coeffs.compute_constants());
    v["config_hash"] = json!(coeffs.config_hash_hex());
    print!("{}", pretty(&v));
    Ok(())
}

pub fn mode(config: &Path, lambda: f64, nodes: usize, out: &Path) -> Outcome {
    let coeffs = load(config)?;
    let mesh = Mesh1D::default_graded(nodes).map_err(|e| Failure::usage(e.to_string()))?;
    let problem = ModeProblem::new(&coeffs, &mesh).map_err(Failure::runtime)?;
    let sol = problem.solve(lambda).map_err(Failure::runtime)?;
    write(out, &sol.to_csv())?;
    let meta = serde_json::to_value(sol.metadata(&mesh)).expect("metadata serializes");
    write(&out.with_extension("json"), &pretty(&meta))?;
    print!("{}", pretty(&meta));
    Ok(())
}

fn report_path(out: &Path) -> std::path::PathBuf {
    out.with_extension("report.json")
}

/// Per-row `|ζ - ζ_closed| / ζ_closed` when the coefficients admit a closed form.
fn oracle_deltas(table: &SymbolTable, case: &ClosedFormCase) -> Vec<Value> {
    table
        .rows
        .iter()
        .filter(|r| r.lambda > 0.0 && !r.failed())
        .filter_map(|r| {
            let exact = case.zeta(r.lambda).ok()?;
            Some(json!({ "lambda": r.lambda, "oracle": exact, "delta": (r.zeta - exact).abs() / exact }))
        })
        .collect()
}

pub fn symbol(config: Option<&Path>, name: &str, lmin: f64, lmax: f64, points: usize, out: &Path) -> Outcome {
    let law = law(config, name)?;
    let table = tabulate(&law, lmin, lmax, points).map_err(|e| Failure::usage(e.to_string()))?;
    write(out, &table.to_csv())?;
    let rep = verify_table(&table, law.constants());
    let full = fit_exponent(&table, 0.0, f64::INFINITY).ok();
    let tail = fit_exponent(&table, lmax / 100.0, lmax).ok();
    let mut report = json!({
        "law": law.id().to_string(),
        "config_hash": format!("{:016x}", law.config_hash()),
        "constants": constants_json(law.constants()),
        "verification": rep,
        "slope": full,
        "tail_slope": tail,
    });
    let mut oracle_ok = true;
    if law.id() == LawId::FractionalNumeric {
        let coeffs = match config {
            Some(p) => load(p)?,
            None => CoefficientSet::tied_affine(),
        };
        if let Ok(case) = ClosedFormCase::from_coeffs(&coeffs) {
            let deltas = oracle_deltas(&table, &case);
            let worst = deltas.iter().filter_map(|d| d["delta"].as_f64()).fold(0.0, f64::max);
            oracle_ok = worst <= ORACLE_TOL;
            report["oracle"] = json!({ "max_delta": worst, "tolerance": ORACLE_TOL, "rows": deltas });
        }
    }
    write(&report_path(out), &pretty(&report))?;
    println!(
        "{}: {} rows, {} failed, positivity {}, dominance {}, slope {}, tail slope {}",
        law.id(),
        rep.rows,
        rep.failed_rows,
        rep.positivity,
        rep.dominance,
        full.map_or("n/a".into(), |f| format!("{:.6}", f.slope)),
        tail.map_or("n/a".into(), |f| format!("{:.6}", f.slope)),
    );
    if rep.failed_rows as f64 > ROW_FAILURE_SHARE * rep.rows as f64 {
        return Err(Failure::new(EXIT_ROWS, format!("{} of {} rows failed", rep.failed_rows, rep.rows)));
    }
    if !rep.passed() {
        let first = rep.violations.first().map(|v| format!(" (first at λ = {:e}: {:?})", v.lambda, v.kind));
        return Err(Failure::runtime(format!("symbol invariants failed{}", first.unwrap_or_default())));
    }
    if !oracle_ok {
        return Err(Failure::runtime(format!("oracle deltas exceed {ORACLE_TOL:e}")));
    }
    Ok(())
}

fn slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

pub fn limit_isd(config: Option<&Path>, eps: &[f64], lambdas: &[f64], lambda_max: f64, out: &Path) -> Outcome {
    if eps.len() < MIN_EPS {
        return Err(Failure::usage(format!("need at least {MIN_EPS} ε values for a rate fit, got {}", eps.len())));
    }
    if eps.iter().any(|e| !(*e > 0.0 && *e < 1.0)) || eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Failure::usage("ε values must lie in (0, 1) and decrease strictly"));
    }
    if let Some(l) = lambdas.iter().find(|l| !(**l >= 0.0 && **l <= lambda_max)) {
        return Err(Failure::usage(format!("λ = {l} outside [0, {lambda_max}]")));
    }
    let coeffs = match config {
        Some(p) => load(p)?,
        None => CoefficientSet::constant_coupling(),
    };
    let k = coeffs.compute_constants();
    let mut csv = String::from("eps,lambda,zeta_eps,zeta_isd,abs_delta,rate\n");
    let mut min_rate = f64::INFINITY;
    for &l in lambdas {
        let isd = k.sigma * l / (k.delta + k.omega * l);
        let zetas: Vec<f64> = eps
            .iter()
            .map(|&e| zeta_epsilon(e, k.alpha1, l, k.sigma))
            .collect::<Result<_, _>>()
            .map_err(Failure::runtime)?;
        let gaps: Vec<f64> = zetas.iter().map(|z| (z - isd).abs()).collect();
        let rate = if gaps.iter().all(|g| *g > 0.0) {
            let pts: Vec<(f64, f64)> = eps.iter().zip(&gaps).map(|(e, g)| (e.ln(), g.ln())).collect();
            slope(&pts)
        } else {
            f64::NAN
        };
        if rate.is_finite() {
            min_rate = min_rate.min(rate);
        }
        for ((e, z), g) in eps.iter().zip(&zetas).zip(&gaps) {
            writeln!(csv, "{e},{l},{z},{isd},{g},{rate}").expect("write to string");
        }
    }
    write(out, &csv)?;
    println!("minimum fitted rate {min_rate} (required ≥ {MIN_RATE})");
    if min_rate.is_finite() && min_rate < MIN_RATE {
        return Err(Failure::runtime(format!("fitted rate {min_rate} below {MIN_RATE}")));
    }
    Ok(())
}

pub struct FlowArgs<'a> {
    pub config: Option<&'a Path>,
    pub law: &'a str,
    pub shape: &'a str,
    pub n: usize,
    pub t_end: f64,
    pub frames: usize,
    pub out_dir: &'a Path,
    pub enforce_area: bool,
    pub dt: Option<f64>,
    pub tol: f64,
    pub svg: bool,
}

fn flow_failure(e: FlowError) -> Failure {
    match e {
        FlowError::BadSampleCount(_) => Failure::usage(e.to_string()),
        e => Failure::new(EXIT_FLOW, e.to_string()),
    }
}

pub fn flow(args: FlowArgs) -> Outcome {
    let law = law(args.config, args.law)?;
    let shape: ShapeSpec = args.shape.parse().map_err(|e: flow::ShapeError| Failure::usage(e.to_string()))?;
    if !(args.t_end >= 0.0 && args.t_end.is_finite()) {
        return Err(Failure::usage(format!("--tend must be finite and non-negative, got {}", args.t_end)));
    }
    let initial = CurveState::from_shape(&shape, args.n).map_err(|e| match e {
        FlowError::BadSampleCount(_) => Failure::usage(e.to_string()),
        e => Failure::new(EXIT_FLOW, format!("initial shape rejected: {e}")),
    })?;
    let time_step = match args.dt {
        Some(dt) => TimeStep::Fixed { dt },
        None => TimeStep::Auto { tol: args.tol },
    };
    let opts = RunOptions {
        t_end: args.t_end,
        frames: args.frames,
        enforce_area: args.enforce_area,
        time_step,
        ..Default::default()
    };
    let mut sink = DirSink::new(args.out_dir, args.svg).map_err(flow_failure)?;
    let header = json!({
        "law": law.id().to_string(),
        "config_hash": format!("{:016x}", law.config_hash()),
        "shape": shape.to_string(),
        "n": args.n,
        "options": opts,
    });
    match flow::run(&initial, &law, &opts, &mut sink) {
        Ok(diag) => {
            write(&args.out_dir.join("diagnostics.csv"), &diag.to_csv())?;
            let mut report = header;
            report["summary"] = serde_json::to_value(diag.summary()).expect("summary serializes");
            write(&args.out_dir.join("report.json"), &pretty(&report))?;
            print!("{}", pretty(&report["summary"]));
            Ok(())
        }
        Err(FlowError::Aborted { t, reason, diagnostics, state }) => {
            write(&args.out_dir.join("diagnostics.csv"), &diagnostics.to_csv())?;
            write(&args.out_dir.join("abort_state.json"), &pretty(&flow::frame_json(0, &state)))?;
            let mut report = header;
            report["summary"] = serde_json::to_value(diagnostics.summary()).expect("summary serializes");
            report["aborted"] = json!({ "t": t, "reason": reason });
            write(&args.out_dir.join("report.json"), &pretty(&report))?;
            Err(Failure::new(EXIT_FLOW, format!("run aborted at t = {t}: {reason}")))
        }
        Err(e) => Err(flow_failure(e)),
    }
}

struct Check {
    name: String,
    passed: bool,
    detail: String,
}

const VERIFY_LAMBDAS: [f64; 5] = [1.0, 10.0, 100.0, 1e3, 1e4];
const MAX_SUGGESTED: usize = 1 << 20;

fn oracle_checks(coeffs: &CoefficientSet, nodes: usize, checks: &mut Vec<Check>) -> Result<(), Failure> {
    let k = coeffs.compute_constants();
    let mesh = Mesh1D::default_graded(nodes).map_err(|e| Failure::usage(e.to_string()))?;
    let problem = match ModeProblem::new(coeffs, &mesh) {
        Ok(p) => p,
        Err(e) => {
            checks.push(Check { name: "mode solver".into(), passed: false, detail: e.to_string() });
            return Ok(());
        }
    };
    let case = ClosedFormCase::from_coeffs(coeffs).ok();
    let (mut worst, mut energy, mut alt) = (0.0f64, 0.0f64, 0.0f64);
    let mut solve_error = None;
    for &l in &VERIFY_LAMBDAS {
        match problem.solve(l) {
            Ok(s) => {
                energy = energy.max((s.energy - k.sigma * s.zeta).abs() / (1.0 + k.sigma * s.zeta));
                alt = alt.max((s.zeta - s.zeta_alt).abs() / s.zeta);
                if let Some(z) = case.as_ref().and_then(|c| c.zeta(l).ok()) {
                    worst = worst.max((s.zeta - z).abs() / z);
                }
            }
            Err(e) => solve_error = Some(format!("λ = {l}: {e}")),
        }
    }
    if let Some(e) = solve_error {
        checks.push(Check { name: "mode solver".into(), passed: false, detail: e });
        return Ok(());
    }
    checks.push(Check {
        name: "energy identity".into(),
        passed: energy <= 1e-8,
        detail: format!("max |E - σζ|/(1+σζ) = {energy:.2e}"),
    });
    checks.push(Check { name: "dual zeta".into(), passed: alt <= 1e-6, detail: format!("max |ζ - ζ_alt|/ζ = {alt:.2e}") });
    if case.is_some() {
        let passed = worst <= ORACLE_TOL;
        let mut detail = format!("max relative error {worst:.2e} at N = {nodes}");
        if !passed {
            detail += &format!("; try --nodes {}", suggest_nodes(coeffs, nodes, worst));
        }
        checks.push(Check { name: "oracle agreement".into(), passed, detail });
    }
    Ok(())
}

/// Smallest power of two predicted to meet the oracle tolerance from the
/// error at `nodes` and `2·nodes`.
fn suggest_nodes(coeffs: &CoefficientSet, nodes: usize, err: f64) -> usize {
    let case = ClosedFormCase::from_coeffs(coeffs).expect("checked by caller");
    let finer = Mesh1D::default_graded(2 * nodes)
        .ok()
        .and_then(|m| ModeProblem::new(coeffs, &m).ok())
        .map(|p| {
            VERIFY_LAMBDAS
                .iter()
                .filter_map(|&l| Some((p.solve(l).ok()?.zeta - case.zeta(l).ok()?).abs() / case.zeta(l).ok()?))
                .fold(0.0, f64::max)
        });
    let order = match finer {
        Some(e2) if e2 > 0.0 && e2 < err => (err / e2).log2().max(1.0),
        _ => 1.0,
    };
    let mut n = nodes;
    let mut e = err;
    while e > ORACLE_TOL && n < MAX_SUGGESTED {
        n *= 2;
        e /= 2f64.powf(order);
    }
    n
}

fn symbol_checks(coeffs: &CoefficientSet, checks: &mut Vec<Check>) {
    let mut ids = vec![LawId::SurfaceDiffusion, LawId::Intermediate];
    if matches!(coeffs.a2tau, A2Tau::Tied { .. }) && coeffs.branch() == Branch::MonotoneCoupling {
        ids.push(LawId::FractionalClosed);
    }
    for id in ids {
        let name = format!("symbol {id}");
        let law = match FlowLaw::new(id, coeffs) {
            Ok(l) => l,
            Err(e) => {
                checks.push(Check { name, passed: false, detail: e.to_string() });
                continue;
            }
        };
        let (passed, detail) = match tabulate(&law, 1e-3, 1e8, 61) {
            Ok(t) => {
                let rep = verify_table(&t, law.constants());
                let tail = fit_exponent(&t, 1e6, 1e8).map(|f| f.slope).unwrap_or(f64::NAN);
                let shape_ok = match id {
                    LawId::SurfaceDiffusion => fit_exponent(&t, 0.0, f64::INFINITY).is_ok_and(|f| (f.slope - 1.0).abs() <= 1e-12),
                    LawId::Intermediate => tail <= 0.05,
                    _ => (tail - 0.5).abs() <= 1e-3,
                };
                (
                    rep.passed() && shape_ok && law.zeta(0.0).is_ok_and(|z| z == 0.0),
                    format!(
                        "positivity {}, dominance {} (max ratio {:.6}), tail slope {tail:.6}",
                        rep.positivity, rep.dominance, rep.max_dominance_ratio
                    ),
                )
            }
            Err(e) => (false, e.to_string()),
        };
        checks.push(Check { name, passed, detail });
    }
}

pub fn verify(config: &Path, nodes: usize) -> Outcome {
    let coeffs = load(config)?;
    let mut checks = Vec::new();
    for h in check_hypotheses(&coeffs, 64).checks {
        checks.push(Check { name: format!("hypothesis {}", h.name), passed: h.passed, detail: h.detail });
    }
    let k = coeffs.compute_constants();
    let finite = [k.sigma, k.delta, k.omega, k.alpha1].iter().all(|v| v.is_finite() && *v > 0.0);
    checks.push(Check {
        name: "constants".into(),
        passed: finite,
        detail: format!("σ = {}, δ = {}, ω = {}, α(1) = {}", k.sigma, k.delta, k.omega, k.alpha1),
    });
    if checks.iter().all(|c| c.passed) {
        if coeffs.branch() == Branch::MonotoneCoupling {
            oracle_checks(&coeffs, nodes, &mut checks)?;
        }
        symbol_checks(&coeffs, &mut checks);
    }
    for c in &checks {
        println!("{} {:<28} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    match checks.iter().find(|c| !c.passed) {
        Some(c) => Err(Failure::runtime(format!("{} failed: {}", c.name, c.detail))),
        None => Ok(()),
    }
}
