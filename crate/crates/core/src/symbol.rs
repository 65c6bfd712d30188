//! Flow laws `λ ↦ ζ(λ)`, symbol tables and the checks run on them.

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::str::FromStr;
use std::sync::{Arc, RwLock};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::coeffs::{CoefficientSet, ModelConstants};
use crate::mode::{Mesh1D, ModeError, ModeProblem};
use crate::oracle::{zeta_epsilon, zeta_reference, ClosedFormCase, OracleError, ReferenceLaw};

/// Cells of the mesh behind `fractional_numeric`.
pub const NUMERIC_CELLS: usize = 2048;
/// Largest `|Δ ln λ|` bridged by interpolation in the solve cache.
pub const CACHE_SPAN: f64 = 0.05;
/// Slack on `ζ ≤ (σ/δ)λ`.
pub const DOMINANCE_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LawError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Mode(#[from] ModeError),
    #[error("lambda must be non-negative and finite, got {0}")]
    BadLambda(f64),
    #[error("unknown law `{0}`")]
    UnknownLaw(String),
    #[error("invalid grid: {0}")]
    Grid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "id", content = "epsilon", rename_all = "snake_case")]
pub enum LawId {
    SurfaceDiffusion,
    Intermediate,
    Vpmcf,
    SqrtLb,
    FractionalClosed,
    FractionalNumeric,
    EpsilonFamily(f64),
}

impl LawId {
    pub const SHIPPED: [LawId; 7] = [
        LawId::SurfaceDiffusion,
        LawId::Intermediate,
        LawId::Vpmcf,
        LawId::SqrtLb,
        LawId::FractionalClosed,
        LawId::FractionalNumeric,
        LawId::EpsilonFamily(0.01),
    ];
}

impl fmt::Display for LawId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LawId::SurfaceDiffusion => f.write_str("surface_diffusion"),
            LawId::Intermediate => f.write_str("intermediate"),
            LawId::Vpmcf => f.write_str("vpmcf"),
            LawId::SqrtLb => f.write_str("sqrt_lb"),
            LawId::FractionalClosed => f.write_str("fractional_closed"),
            LawId::FractionalNumeric => f.write_str("fractional_numeric"),
            LawId::EpsilonFamily(e) => write!(f, "epsilon_family({e})"),
        }
    }
}

/// Accepts the display names, with `epsilon_family(E)`, `epsilon_family:E`
/// and bare `epsilon_family` (ε = 0.01) for the vanishing-slope family.
impl FromStr for LawId {
    type Err = LawError;

    fn from_str(s: &str) -> Result<Self, LawError> {
        let unknown = || LawError::UnknownLaw(s.to_string());
        Ok(match s.trim() {
            "surface_diffusion" | "sd" => LawId::SurfaceDiffusion,
            "intermediate" | "isd" => LawId::Intermediate,
            "vpmcf" => LawId::Vpmcf,
            "sqrt_lb" => LawId::SqrtLb,
            "fractional_closed" => LawId::FractionalClosed,
            "fractional_numeric" => LawId::FractionalNumeric,
            "epsilon_family" => LawId::EpsilonFamily(0.01),
            other => {
                let arg = other
                    .strip_prefix("epsilon_family(")
                    .and_then(|r| r.strip_suffix(')'))
                    .or_else(|| other.strip_prefix("epsilon_family:"))
                    .ok_or_else(unknown)?;
                let eps: f64 = arg.trim().parse().map_err(|_| unknown())?;
                if !(eps > 0.0 && eps < 1.0) {
                    return Err(OracleError::EpsilonOutOfRange(eps).into());
                }
                LawId::EpsilonFamily(eps)
            }
        })
    }
}

#[derive(Clone)]
enum Source {
    Reference(ReferenceLaw),
    Closed(ClosedFormCase),
    Numeric(Arc<NumericSymbol>),
    Epsilon(f64),
}

/// Mode solves on a fixed mesh with a shared cache keyed by `λ`.
struct NumericSymbol {
    problem: ModeProblem,
    cache: RwLock<BTreeMap<u64, f64>>,
}

impl NumericSymbol {
    fn solve(&self, lambda: f64) -> Result<f64, LawError> {
        if let Some(&z) = self.cache.read().expect("cache lock").get(&lambda.to_bits()) {
            return Ok(z);
        }
        let z = self.problem.solve(lambda)?.zeta;
        self.cache.write().expect("cache lock").insert(lambda.to_bits(), z);
        Ok(z)
    }

    /// Log-log interpolation between cached neighbours closer than
    /// [`CACHE_SPAN`]; otherwise a fresh solve.
    fn lookup(&self, lambda: f64) -> Result<f64, LawError> {
        let key = lambda.to_bits();
        {
            let cache = self.cache.read().expect("cache lock");
            if let Some(&z) = cache.get(&key) {
                return Ok(z);
            }
            let lo = cache.range(..key).next_back();
            let hi = cache.range(key..).next();
            if let (Some((&kl, &zl)), Some((&kh, &zh))) = (lo, hi) {
                let (ll, lh) = (f64::from_bits(kl).ln(), f64::from_bits(kh).ln());
                if lh - ll < CACHE_SPAN {
                    let w = (lambda.ln() - ll) / (lh - ll);
                    return Ok((zl.ln() * (1.0 - w) + zh.ln() * w).exp());
                }
            }
        }
        self.solve(lambda)
    }
}

/// A symbol map `λ ↦ ζ(λ)` tagged with the law it encodes.
#[derive(Clone)]
pub struct FlowLaw {
    id: LawId,
    constants: ModelConstants,
    config_hash: u64,
    a_tilde: Option<f64>,
    source: Source,
}

impl fmt::Debug for FlowLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FlowLaw")
            .field("id", &self.id)
            .field("constants", &self.constants)
            .field("config_hash", &format_args!("{:016x}", self.config_hash))
            .finish()
    }
}

impl FlowLaw {
    /// Builds `id` from a coefficient set. `vpmcf` is the `δ → 0` member of
    /// the intermediate family, so its constants carry `δ = 0`.
    pub fn new(id: LawId, coeffs: &CoefficientSet) -> Result<Self, LawError> {
        Self::with_mesh(id, coeffs, &Mesh1D::default_graded(NUMERIC_CELLS)?)
    }

    pub fn with_mesh(id: LawId, coeffs: &CoefficientSet, mesh: &Mesh1D) -> Result<Self, LawError> {
        let mut constants = coeffs.compute_constants();
        let source = match id {
            LawId::SurfaceDiffusion => Source::Reference(ReferenceLaw::SurfaceDiffusion),
            LawId::Intermediate => Source::Reference(ReferenceLaw::Intermediate),
            LawId::Vpmcf => {
                constants.delta = 0.0;
                Source::Reference(ReferenceLaw::Vpmcf)
            }
            LawId::SqrtLb => {
                constants.eta.ok_or(OracleError::MissingEta("sqrt_lb"))?;
                Source::Reference(ReferenceLaw::SqrtLb)
            }
            LawId::FractionalClosed => Source::Closed(ClosedFormCase::from_coeffs(coeffs)?),
            LawId::FractionalNumeric => Source::Numeric(Arc::new(NumericSymbol {
                problem: ModeProblem::new(coeffs, mesh)?,
                cache: RwLock::new(BTreeMap::new()),
            })),
            LawId::EpsilonFamily(eps) => {
                if !(eps > 0.0 && eps < 1.0) {
                    return Err(OracleError::EpsilonOutOfRange(eps).into());
                }
                Source::Epsilon(eps)
            }
        };
        Ok(FlowLaw { id, constants, config_hash: coeffs.config_hash(), a_tilde: coeffs.a_tilde(), source })
    }

    /// The law on its default coefficients: `m̃ = 1, i = 1` with `n ≡ 1`,
    /// `A²τ ≡ 1` for the classical laws and the ε-family, and the tied
    /// affine set `n = 2 + u`, `ã = 1` for the fractional ones.
    pub fn shipped(id: LawId) -> Result<Self, LawError> {
        let coeffs = match id {
            LawId::SqrtLb | LawId::FractionalClosed | LawId::FractionalNumeric => CoefficientSet::tied_affine(),
            _ => CoefficientSet::constant_coupling(),
        };
        Self::new(id, &coeffs)
    }

    pub fn id(&self) -> LawId {
        self.id
    }

    pub fn constants(&self) -> &ModelConstants {
        &self.constants
    }

    pub fn config_hash(&self) -> u64 {
        self.config_hash
    }

    pub fn a_tilde(&self) -> Option<f64> {
        self.a_tilde
    }

    /// `ζ(λ)`; `ζ(0) = 0` without evaluation. Numeric laws go through the
    /// interpolating cache.
    pub fn zeta(&self, lambda: f64) -> Result<f64, LawError> {
        self.eval(lambda, false)
    }

    /// As [`FlowLaw::zeta`], but numeric laws always solve at `λ` itself.
    pub fn zeta_exact(&self, lambda: f64) -> Result<f64, LawError> {
        self.eval(lambda, true)
    }

    fn eval(&self, lambda: f64, exact: bool) -> Result<f64, LawError> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(LawError::BadLambda(lambda));
        }
        if lambda == 0.0 {
            return Ok(0.0);
        }
        let k = &self.constants;
        match &self.source {
            Source::Reference(r) => Ok(zeta_reference(*r, k, lambda)?),
            Source::Closed(case) => Ok(case.zeta(lambda)?),
            Source::Numeric(n) if exact => n.solve(lambda),
            Source::Numeric(n) => n.lookup(lambda),
            Source::Epsilon(eps) => Ok(zeta_epsilon(*eps, k.alpha1, lambda, k.sigma)?),
        }
    }

    /// Fills the cache of a numeric law on `[lmin, lmax]` densely enough for
    /// every later lookup in that range to interpolate. No-op otherwise.
    pub fn prewarm(&self, lmin: f64, lmax: f64) -> Result<(), LawError> {
        let Source::Numeric(n) = &self.source else { return Ok(()) };
        let steps = ((lmax / lmin).ln() / (0.8 * CACHE_SPAN)).ceil().max(1.0) as usize;
        log_grid(lmin, lmax, steps + 1)?.par_iter().try_for_each(|&l| n.solve(l).map(|_| ()))
    }
}

fn log_grid(lmin: f64, lmax: f64, points: usize) -> Result<Vec<f64>, LawError> {
    if !(lmin > 0.0 && lmax > lmin && lmax.is_finite()) {
        return Err(LawError::Grid(format!("need 0 < lmin < lmax, got [{lmin}, {lmax}]")));
    }
    if points < 2 {
        return Err(LawError::Grid(format!("need at least 2 points, got {points}")));
    }
    let ratio = lmax / lmin;
    let last = points - 1;
    Ok((0..points)
        .map(|j| match j {
            0 => lmin,
            j if j == last => lmax,
            j => lmin * ratio.powf(j as f64 / last as f64),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid {
    pub lmin: f64,
    pub lmax: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymbolRow {
    pub lambda: f64,
    /// `NaN` when the evaluation failed.
    pub zeta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SymbolRow {
    pub fn failed(&self) -> bool {
        self.error.is_some() || !self.zeta.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymbolTable {
    pub law: String,
    pub config_hash: u64,
    pub grid: Option<Grid>,
    pub rows: Vec<SymbolRow>,
}

/// Log-spaced table including both endpoints; rows are evaluated in parallel
/// and numeric rows always solve at their own `λ`.
pub fn tabulate(law: &FlowLaw, lmin: f64, lmax: f64, points: usize) -> Result<SymbolTable, LawError> {
    let lambdas = log_grid(lmin, lmax, points)?;
    let rows = lambdas
        .par_iter()
        .map(|&lambda| match law.zeta_exact(lambda) {
            Ok(zeta) => SymbolRow { lambda, zeta, error: None },
            Err(e) => SymbolRow { lambda, zeta: f64::NAN, error: Some(e.to_string()) },
        })
        .collect();
    Ok(SymbolTable {
        law: law.id().to_string(),
        config_hash: law.config_hash(),
        grid: Some(Grid { lmin, lmax, points }),
        rows,
    })
}

#[derive(Debug, Error)]
pub enum TableError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("header must be `lambda,zeta,law,config_hash`")]
    Header,
    #[error("table has no rows")]
    Empty,
}

const HEADER: [&str; 4] = ["lambda", "zeta", "law", "config_hash"];

impl SymbolTable {
    pub fn failed_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.failed()).count()
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), TableError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(HEADER)?;
        let hash = format!("{:016x}", self.config_hash);
        for r in &self.rows {
            w.write_record([r.lambda.to_string(), r.zeta.to_string(), self.law.clone(), hash.clone()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    /// Parses a table written by [`SymbolTable::write_csv`]. Rows must share
    /// one law and hash, and `λ` must be finite, non-negative and increasing.
    pub fn read_csv<R: io::Read>(input: R) -> Result<Self, TableError> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        if r.headers()?.iter().map(str::trim).ne(HEADER) {
            return Err(TableError::Header);
        }
        let mut rows: Vec<SymbolRow> = Vec::new();
        let mut tag: Option<(String, u64)> = None;
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let bad = |message: String| TableError::Row { line, message };
            let field = |k: usize| rec.get(k).map(str::trim).unwrap_or("");
            let lambda: f64 = field(0).parse().map_err(|_| bad(format!("bad lambda `{}`", field(0))))?;
            let zeta: f64 = field(1).parse().map_err(|_| bad(format!("bad zeta `{}`", field(1))))?;
            let hash = u64::from_str_radix(field(3), 16).map_err(|_| bad(format!("bad config hash `{}`", field(3))))?;
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return Err(bad(format!("lambda {lambda} out of range")));
            }
            if rows.last().is_some_and(|p| !(lambda > p.lambda)) {
                return Err(bad("lambda column must be strictly increasing".into()));
            }
            match &tag {
                None => tag = Some((field(2).to_string(), hash)),
                Some((law, h)) if law == field(2) && *h == hash => {}
                Some(_) => return Err(bad("law and config hash must agree across rows".into())),
            }
            rows.push(SymbolRow { lambda, zeta, error: None });
        }
        let (law, config_hash) = tag.ok_or(TableError::Empty)?;
        Ok(SymbolTable { law, config_hash, grid: None, rows })
    }

    pub fn from_csv_str(text: &str) -> Result<Self, TableError> {
        Self::read_csv(text.as_bytes())
    }

    /// Log-log interpolation; outside the table the power law fitted on the
    /// nearest decade is used, with a warning.
    pub fn interpolate(&self, lambda: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| !r.failed() && r.lambda > 0.0 && r.zeta > 0.0)
            .map(|r| (r.lambda.ln(), r.zeta.ln()))
            .collect();
        if lambda == 0.0 {
            return Some(0.0);
        }
        if pts.len() < 2 || !(lambda > 0.0) {
            return None;
        }
        let x = lambda.ln();
        let (first, last) = (pts[0].0, pts[pts.len() - 1].0);
        if x < first || x > last {
            let near: Vec<(f64, f64)> = if x < first {
                pts.iter().copied().filter(|p| p.0 <= first + std::f64::consts::LN_10).collect()
            } else {
                pts.iter().copied().filter(|p| p.0 >= last - std::f64::consts::LN_10).collect()
            };
            let near = if near.len() >= 2 { near } else { pts.clone() };
            let fit = least_squares(&near);
            log::warn!("extrapolating {} beyond [{:e}, {:e}] to λ = {lambda:e}", self.law, first.exp(), last.exp());
            return Some((fit.intercept + fit.slope * x).exp());
        }
        let k = pts.partition_point(|p| p.0 < x).max(1);
        let (a, b) = (pts[k - 1], pts[k]);
        let w = (x - a.0) / (b.0 - a.0);
        Some((a.1 * (1.0 - w) + b.1 * w).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    pub lambda: f64,
    pub zeta: f64,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    NotPositive,
    Dominance,
    NonZeroAtZero,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableReport {
    pub rows: usize,
    pub failed_rows: usize,
    pub positivity: bool,
    pub dominance: bool,
    /// `None` when the table has no `λ = 0` row.
    pub zero: Option<bool>,
    pub min_zeta: f64,
    /// Largest `ζ / ((σ/δ)λ)` over positive `λ`.
    pub max_dominance_ratio: f64,
    pub violations: Vec<Violation>,
}

impl TableReport {
    pub fn passed(&self) -> bool {
        self.failed_rows == 0 && self.positivity && self.dominance && self.zero != Some(false)
    }
}

pub fn verify_table(table: &SymbolTable, constants: &ModelConstants) -> TableReport {
    let slope = constants.sigma / constants.delta;
    let mut report = TableReport {
        rows: table.rows.len(),
        failed_rows: 0,
        positivity: true,
        dominance: true,
        zero: None,
        min_zeta: f64::INFINITY,
        max_dominance_ratio: 0.0,
        violations: Vec::new(),
    };
    for r in &table.rows {
        let mut flag = |kind| report.violations.push(Violation { lambda: r.lambda, zeta: r.zeta, kind });
        if r.failed() {
            report.failed_rows += 1;
            flag(ViolationKind::Failed);
            continue;
        }
        if r.lambda == 0.0 {
            let ok = r.zeta == 0.0;
            report.zero = Some(report.zero.unwrap_or(true) && ok);
            if !ok {
                flag(ViolationKind::NonZeroAtZero);
            }
            continue;
        }
        if !(r.zeta > 0.0) {
            report.positivity = false;
            flag(ViolationKind::NotPositive);
        }
        let ratio = r.zeta / (slope * r.lambda);
        report.min_zeta = report.min_zeta.min(r.zeta);
        report.max_dominance_ratio = report.max_dominance_ratio.max(ratio);
        if ratio > 1.0 + DOMINANCE_SLACK {
            report.dominance = false;
            report.violations.push(Violation { lambda: r.lambda, zeta: r.zeta, kind: ViolationKind::Dominance });
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in `ln ζ`.
    pub residual: f64,
    pub points: usize,
}

fn least_squares(pts: &[(f64, f64)]) -> ExponentFit {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / n).sqrt();
    ExponentFit { slope, intercept, residual, points: pts.len() }
}

/// Least-squares slope of `ln ζ` against `ln λ` over rows with `λ ∈ [lo, hi]`.
pub fn fit_exponent(table: &SymbolTable, lo: f64, hi: f64) -> Result<ExponentFit, LawError> {
    let pts: Vec<(f64, f64)> = table
        .rows
        .iter()
        .filter(|r| !r.failed() && r.lambda >= lo && r.lambda <= hi && r.lambda > 0.0 && r.zeta > 0.0)
        .map(|r| (r.lambda.ln(), r.zeta.ln()))
        .collect();
    if pts.len() < 4 {
        return Err(LawError::Grid(format!("need at least 4 usable rows in [{lo:e}, {hi:e}], found {}", pts.len())));
    }
    Ok(least_squares(&pts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// `ζ / (ση√λ) → 1`.
    Fractional,
    NonFractional,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemainderReport {
    /// `(λ, |ζ / (ση√(ãλ)) - 1|)`.
    pub rows: Vec<(f64, f64)>,
    /// Slope of `ln remainder` over the largest decade of the grid; `NaN`
    /// when fewer than two remainders there are non-zero.
    pub exponent: f64,
    /// Same slope over the whole grid.
    pub full_slope: f64,
    pub shape: Shape,
}

/// Remainder of `law` against `ση√(ãλ)` (`ã = 1` for untied laws) using
/// `σ, η` from `constants`.
pub fn remainder_decay(law: &FlowLaw, constants: &ModelConstants, lambdas: &[f64]) -> Result<RemainderReport, LawError> {
    let eta = constants.eta.ok_or(OracleError::MissingEta("remainder_decay"))?;
    let scale = constants.sigma * eta * law.a_tilde().unwrap_or(1.0).sqrt();
    let mut rows = lambdas
        .par_iter()
        .map(|&l| {
            if !(l > 0.0) {
                return Err(LawError::BadLambda(l));
            }
            Ok((l, (law.zeta_exact(l)? / (scale * l.sqrt()) - 1.0).abs()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let logs = |from: f64| -> Vec<(f64, f64)> {
        rows.iter().filter(|r| r.0 >= from && r.1 > 0.0).map(|r| (r.0.ln(), r.1.ln())).collect()
    };
    let slope = |pts: Vec<(f64, f64)>| if pts.len() >= 2 { least_squares(&pts).slope } else { f64::NAN };
    let top = rows.last().map_or(f64::NAN, |r| r.0);
    let exponent = slope(logs(top / 10.0 * (1.0 - 1e-12)));
    let full_slope = slope(logs(0.0));
    let last = rows.last().map_or(f64::NAN, |r| r.1);
    let shape = if last < 0.5 && !(exponent > -0.05) || last < 1e-10 { Shape::Fractional } else { Shape::NonFractional };
    Ok(RemainderReport { rows, exponent, full_slope, shape })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{A2Tau, ScalarFunction};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn sd() -> FlowLaw {
        FlowLaw::shipped(LawId::SurfaceDiffusion).unwrap()
    }

    #[test]
    fn law_names_round_trip() {
        for id in LawId::SHIPPED {
            assert_eq!(id.to_string().parse::<LawId>().unwrap(), id);
        }
        assert_eq!("epsilon_family:0.5".parse::<LawId>().unwrap(), LawId::EpsilonFamily(0.5));
        assert!("epsilon_family(2)".parse::<LawId>().is_err());
        assert!("mullins".parse::<LawId>().is_err());
    }

    #[test]
    fn surface_diffusion_rows_are_linear() {
        let t = tabulate(&sd(), 1.0, 100.0, 3).unwrap();
        let k = PI * PI / 16.0;
        let want = [(1.0, k), (10.0, 10.0 * k), (100.0, 100.0 * k)];
        for (r, (l, z)) in t.rows.iter().zip(want) {
            assert_eq!(r.lambda, l);
            assert!((r.zeta - z).abs() < 1e-13 * z);
        }
        let fit = fit_exponent(&tabulate(&sd(), 1e-3, 1e8, 61).unwrap(), 0.0, f64::INFINITY).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-12, "{fit:?}");
    }

    #[test]
    fn sqrt_law_scales_by_hundred() {
        let law = FlowLaw::shipped(LawId::SqrtLb).unwrap();
        let t = tabulate(&law, 1.0, 1e4, 5).unwrap();
        assert!((t.rows[4].zeta / t.rows[0].zeta - 100.0).abs() < 1e-12);
        let fit = fit_exponent(&t, 1.0, 1e4).unwrap();
        assert!((fit.slope - 0.5).abs() < 1e-12);
    }

    #[test]
    fn injected_violation_is_flagged() {
        let k = *sd().constants();
        let mut t = tabulate(&sd(), 1.0, 10.0, 4).unwrap();
        assert!(verify_table(&t, &k).passed());
        t.rows[2].zeta *= 2.0;
        let r = verify_table(&t, &k);
        assert!(!r.dominance && r.positivity);
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].kind, ViolationKind::Dominance);
        assert!((r.max_dominance_ratio - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_row_checked() {
        let k = *sd().constants();
        let mut t = tabulate(&sd(), 1.0, 10.0, 4).unwrap();
        t.rows.insert(0, SymbolRow { lambda: 0.0, zeta: sd().zeta(0.0).unwrap(), error: None });
        assert_eq!(verify_table(&t, &k).zero, Some(true));
        t.rows[0].zeta = 1e-300;
        assert_eq!(verify_table(&t, &k).zero, Some(false));
    }

    #[test]
    fn fractional_margin_shrinks_near_zero() {
        let law = FlowLaw::shipped(LawId::FractionalClosed).unwrap();
        let k = *law.constants();
        let ratio = |l: f64| law.zeta(l).unwrap() / (k.sigma_over_delta() * l);
        assert!(ratio(1e-3) > ratio(1e-1) && ratio(1e-1) > ratio(10.0));
        assert!(1.0 - ratio(1e-3) < 1e-2);
    }

    #[test]
    fn vpmcf_has_no_dominance_bound() {
        let law = FlowLaw::shipped(LawId::Vpmcf).unwrap();
        assert_eq!(law.constants().delta, 0.0);
        let t = tabulate(&law, 1e-3, 1e8, 11).unwrap();
        assert!(verify_table(&t, law.constants()).passed());
        assert!((law.zeta(5.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let law = FlowLaw::shipped(LawId::FractionalClosed).unwrap();
        let t = tabulate(&law, 1e-2, 1e3, 7).unwrap();
        let text = t.to_csv();
        assert!(text.starts_with("lambda,zeta,law,config_hash\n"));
        let back = SymbolTable::from_csv_str(&text).unwrap();
        assert_eq!(back.rows, t.rows);
        assert_eq!((back.law.as_str(), back.config_hash), ("fractional_closed", law.config_hash()));
    }

    #[test]
    fn csv_rejections() {
        let h = "lambda,zeta,law,config_hash\n";
        assert!(matches!(SymbolTable::from_csv_str("a,b\n1,2\n"), Err(TableError::Header)));
        assert!(matches!(SymbolTable::from_csv_str(h), Err(TableError::Empty)));
        let unsorted = format!("{h}2,1,sd,00000000000000ff\n1,1,sd,00000000000000ff\n");
        assert!(matches!(SymbolTable::from_csv_str(&unsorted), Err(TableError::Row { line: 3, .. })));
        let mixed = format!("{h}1,1,sd,00000000000000ff\n2,1,isd,00000000000000ff\n");
        assert!(SymbolTable::from_csv_str(&mixed).is_err());
        assert!(SymbolTable::from_csv_str(&format!("{h}-1,1,sd,0\n")).is_err());
        assert!(SymbolTable::from_csv_str(&format!("{h}1,x,sd,0\n")).is_err());
    }

    #[test]
    fn table_interpolation_and_extrapolation() {
        let law = FlowLaw::shipped(LawId::SqrtLb).unwrap();
        let t = tabulate(&law, 1.0, 100.0, 9).unwrap();
        for l in [3.0, 50.0, 1e4, 1e-2] {
            let z = t.interpolate(l).unwrap();
            assert!((z - law.zeta(l).unwrap()).abs() < 1e-12 * z, "{l}");
        }
        assert_eq!(t.interpolate(0.0), Some(0.0));
    }

    #[test]
    fn numeric_cache_interpolates_nearby() {
        let law = FlowLaw::with_mesh(LawId::FractionalNumeric, &CoefficientSet::tied_affine(), &Mesh1D::default_graded(256).unwrap())
            .unwrap();
        let a = law.zeta_exact(10.0).unwrap();
        let b = law.zeta_exact(10.4).unwrap();
        let mid = law.zeta(10.2).unwrap();
        assert!(mid > a && mid < b);
        let w = (10.2f64 / 10.0).ln() / (10.4f64 / 10.0).ln();
        assert!((mid - (a.ln() * (1.0 - w) + b.ln() * w).exp()).abs() < 1e-15);
        // outside the span: solved exactly
        assert_eq!(law.zeta(20.0).unwrap(), law.zeta_exact(20.0).unwrap());
        law.prewarm(1.0, 100.0).unwrap();
        let z = law.zeta(33.3).unwrap();
        let exact = ModeProblem::new(&CoefficientSet::tied_affine(), &Mesh1D::default_graded(256).unwrap()).unwrap().solve(33.3).unwrap().zeta;
        assert!((z - exact).abs() < 1e-4 * exact);
    }

    #[test]
    fn numeric_matches_closed_form() {
        let closed = FlowLaw::shipped(LawId::FractionalClosed).unwrap();
        let numeric = FlowLaw::shipped(LawId::FractionalNumeric).unwrap();
        let t = tabulate(&numeric, 1e-2, 1e4, 7).unwrap();
        for r in &t.rows {
            let o = closed.zeta(r.lambda).unwrap();
            assert!((r.zeta - o).abs() < 1e-6 * o, "{}", r.lambda);
        }
    }

    #[test]
    fn remainder_affine_is_transcendentally_small() {
        let law = FlowLaw::shipped(LawId::FractionalClosed).unwrap();
        let rep = remainder_decay(&law, law.constants(), &[1e3, 1e4, 1e5]).unwrap();
        // 2α₁√λ = π√λ/2 > 60 from λ ≈ 1459 on
        assert!(rep.rows[1].1 < 1e-10 && rep.rows[2].1 < 1e-10);
        assert_eq!(rep.shape, Shape::Fractional);
    }

    #[test]
    fn remainder_isd_does_not_vanish() {
        let isd = FlowLaw::shipped(LawId::Intermediate).unwrap();
        let k = *FlowLaw::shipped(LawId::SqrtLb).unwrap().constants();
        let grid: Vec<f64> = (0..=8).map(|j| 10f64.powf(2.0 + 0.5 * j as f64)).collect();
        let rep = remainder_decay(&isd, &k, &grid).unwrap();
        assert_eq!(rep.shape, Shape::NonFractional);
        assert!(rep.rows.last().unwrap().1 > 0.99);
        assert!(remainder_decay(&isd, isd.constants(), &grid).is_err());
    }

    #[test]
    fn remainder_quadratic_bound() {
        let c = CoefficientSet::new(
            ScalarFunction::constant(1.0),
            1,
            ScalarFunction::poly([2.0, 1.0, 0.2]),
            A2Tau::Tied { a_tilde: 1.0 },
        )
        .unwrap();
        let law = FlowLaw::new(LawId::FractionalClosed, &c).unwrap();
        let grid: Vec<f64> = (0..=16).map(|j| 10f64.powf(2.0 + 0.25 * j as f64)).collect();
        let rep = remainder_decay(&law, law.constants(), &grid).unwrap();
        assert!(rep.exponent <= -0.25, "{}", rep.exponent);
        assert!(rep.exponent >= -1.0 / 3.0 - 0.05);
        assert_eq!(rep.shape, Shape::Fractional);
    }

    #[test]
    fn epsilon_family_approaches_isd() {
        let isd = FlowLaw::shipped(LawId::Intermediate).unwrap();
        for l in [1.0, 4.0, 16.0] {
            let target = isd.zeta(l).unwrap();
            let gaps: Vec<f64> = [1e-1, 1e-2, 1e-3, 1e-4]
                .iter()
                .map(|&e| (FlowLaw::shipped(LawId::EpsilonFamily(e)).unwrap().zeta(l).unwrap() - target).abs())
                .collect();
            assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{l}: {gaps:?}");
        }
    }

    #[test]
    fn missing_eta_rejected() {
        let err = FlowLaw::new(LawId::SqrtLb, &CoefficientSet::constant_coupling()).unwrap_err();
        assert!(matches!(err, LawError::Oracle(OracleError::MissingEta(_))));
        assert!(FlowLaw::new(LawId::FractionalNumeric, &CoefficientSet::constant_coupling()).is_err());
        assert!(sd().zeta(-1.0).is_err());
        assert!(tabulate(&sd(), 2.0, 1.0, 5).is_err());
        assert!(tabulate(&sd(), 1.0, 2.0, 1).is_err());
    }

    proptest! {
        #[test]
        fn reference_laws_positive_dominated_and_deterministic(l in 1e-3f64..1e8) {
            for id in [LawId::SurfaceDiffusion, LawId::Intermediate, LawId::Vpmcf, LawId::FractionalClosed, LawId::EpsilonFamily(0.05)] {
                let law = FlowLaw::shipped(id).unwrap();
                let z = law.zeta(l).unwrap();
                prop_assert!(z > 0.0);
                prop_assert!(z <= law.constants().sigma_over_delta() * l * (1.0 + DOMINANCE_SLACK));
                prop_assert_eq!(z.to_bits(), law.zeta(l).unwrap().to_bits());
            }
        }

        #[test]
        fn log_grid_is_sorted_and_inclusive(a in 1e-6f64..1.0, span in 1.5f64..1e6, n in 2usize..80) {
            let g = log_grid(a, a * span, n).unwrap();
            prop_assert_eq!(g.len(), n);
            prop_assert_eq!(g[0], a);
            prop_assert_eq!(g[n - 1], a * span);
            prop_assert!(g.windows(2).all(|w| w[1] > w[0]));
        }
    }
}
