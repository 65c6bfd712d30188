//! Per-mode constrained problem: find `f` and `ζ` with
//!
//! ```text
//! ∫ 𝖺 f'φ' + λ 𝗆 f φ = ζ ∫ (φ + c φ')   for all φ,
//! ∫ (f + c f') = σ,
//! ```
//!
//! discretised with continuous piecewise-linear or piecewise-quadratic
//! elements on `[-1, 1]`. Quadratic bubbles are condensed cell by cell, so
//! every solve is tridiagonal.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coeffs::{A2Tau, Branch, CoefficientSet};
use crate::oracle::ClosedFormCase;
use crate::quadrature::GaussJacobi;
use crate::tridiag::{factor_laplacian_plus, Ldl, SymTridiag};

/// Condition estimates above this abort the solve.
pub const MAX_CONDITION: f64 = 1e15;
/// Default endpoint grading exponent.
pub const DEFAULT_GRADING: f64 = 2.0;

const END_CELL_NODES: usize = 20;
const NEAR_CELL_NODES: usize = 24;
const FAR_CELL_NODES: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModeError {
    #[error("the constrained problem needs a monotone coupling (n' ≠ 0)")]
    ConstantCoupling,
    #[error("lambda must be positive, got {0}")]
    NonPositiveLambda(f64),
    #[error("stiffness weight is not integrable: {0}")]
    UnsupportedWeight(String),
    #[error("stiffness matrix is singular or ill-conditioned (estimate {estimate:e}); {advice}")]
    IllConditioned { estimate: f64, advice: String },
    #[error("BᵀA⁻¹B = {0:e} is not positive; the coefficient hypotheses are violated")]
    HypothesisViolation(f64),
    #[error("invalid mesh: {0}")]
    Mesh(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Grading {
    Uniform,
    Graded { exponent: f64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Element {
    Linear,
    #[default]
    Quadratic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh1D {
    nodes: Vec<f64>,
    grading: Grading,
}

impl Mesh1D {
    pub fn uniform(n_cells: usize) -> Result<Self, ModeError> {
        Self::build(n_cells, Grading::Uniform)
    }

    /// Nodes `±(1 - (1 - j/M)^g)`, `M = n_cells / 2`, mirrored about 0.
    pub fn graded(n_cells: usize, exponent: f64) -> Result<Self, ModeError> {
        if !(exponent >= 1.0 && exponent.is_finite()) {
            return Err(ModeError::Mesh(format!("grading exponent must be at least 1, got {exponent}")));
        }
        Self::build(n_cells, Grading::Graded { exponent })
    }

    pub fn default_graded(n_cells: usize) -> Result<Self, ModeError> {
        Self::graded(n_cells, DEFAULT_GRADING)
    }

    fn build(n_cells: usize, grading: Grading) -> Result<Self, ModeError> {
        if n_cells < 8 || !n_cells.is_multiple_of(2) {
            return Err(ModeError::Mesh(format!("need an even cell count of at least 8, got {n_cells}")));
        }
        let m = n_cells / 2;
        let half: Vec<f64> = (0..=m)
            .map(|j| {
                let t = j as f64 / m as f64;
                match grading {
                    Grading::Uniform => t,
                    Grading::Graded { exponent } => 1.0 - (1.0 - t).powf(exponent),
                }
            })
            .collect();
        let mut nodes: Vec<f64> = half.iter().rev().map(|&x| -x).collect();
        nodes.extend_from_slice(&half[1..]);
        Ok(Mesh1D { nodes, grading })
    }

    /// Arbitrary strictly increasing nodes from `-1` to `1`.
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self, ModeError> {
        if nodes.len() < 9 {
            return Err(ModeError::Mesh("need at least 8 cells".into()));
        }
        if nodes[0] != -1.0 || *nodes.last().unwrap() != 1.0 {
            return Err(ModeError::Mesh("nodes must start at -1 and end at 1".into()));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ModeError::Mesh("nodes must be strictly increasing".into()));
        }
        Ok(Mesh1D { nodes, grading: Grading::Uniform })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn n_cells(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn grading(&self) -> Grading {
        self.grading
    }
}

/// λ-independent pieces: `A = K + λ M`.
#[derive(Debug, Clone)]
pub struct Assembly {
    /// Cell stiffness `∫_e 𝖺 / h_e²`; `K` is the path Laplacian with these weights.
    pub edges: Vec<f64>,
    pub stiffness: SymTridiag,
    pub mass: SymTridiag,
    pub load: Vec<f64>,
    /// `∫ 𝗆 φ_j`.
    pub mass_moments: Vec<f64>,
    pub sigma: f64,
    /// Per-cell mass entries `[m00, m01, m11]`.
    pub cell_mass: Vec<[f64; 3]>,
    /// Empty for linear elements.
    pub bubbles: Vec<Bubble>,
}

/// Cell integrals against the bubble `1 - ξ²`, `ξ ∈ [-1, 1]` the local coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bubble {
    /// `∫ 𝖺 φ₀' φ_b' = -∫ 𝖺 φ₁' φ_b'`.
    pub kb: f64,
    pub kbb: f64,
    /// `[∫𝗆φ₀φ_b, ∫𝗆φ₁φ_b, ∫𝗆φ_b²]`.
    pub mass: [f64; 3],
    pub load: f64,
    pub moment: f64,
}

/// Vertex system after eliminating the bubbles at one `λ`.
struct Condensed {
    edges: Vec<f64>,
    extra: Vec<f64>,
    load: Vec<f64>,
    schur_extra: f64,
}

impl Assembly {
    pub fn matrix(&self, lambda: f64) -> SymTridiag {
        let diag = self.stiffness.diag.iter().zip(&self.mass.diag).map(|(k, m)| k + lambda * m).collect();
        let off = self.stiffness.off.iter().zip(&self.mass.off).map(|(k, m)| k + lambda * m).collect();
        SymTridiag::new(diag, off)
    }
}

/// Assembled saddle-system blocks for one `λ`.
#[derive(Debug, Clone)]
pub struct Assembled {
    pub a: SymTridiag,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeSolution {
    pub lambda: f64,
    #[serde(skip)]
    pub u: Vec<f64>,
    #[serde(skip)]
    pub f: Vec<f64>,
    pub zeta: f64,
    pub zeta_alt: f64,
    pub energy: f64,
    pub constraint_residual: f64,
    pub condition_estimate: f64,
    pub element: Element,
}

/// Assembled problem for one coefficient set and mesh, reusable across `λ`.
#[derive(Debug, Clone)]
pub struct ModeProblem {
    mesh: Mesh1D,
    element: Element,
    assembly: Assembly,
}

/// Linear-element blocks `A = K + λM` and `B_j = ∫ φ_j + c φ_j'`.
pub fn assemble(coeffs: &CoefficientSet, lambda: f64, mesh: &Mesh1D) -> Result<Assembled, ModeError> {
    check_lambda(lambda)?;
    let p = ModeProblem::with_element(coeffs, mesh, Element::Linear)?;
    Ok(Assembled { a: p.assembly.matrix(lambda), b: p.assembly.load.clone() })
}

pub fn solve_mode(coeffs: &CoefficientSet, lambda: f64, mesh: &Mesh1D) -> Result<ModeSolution, ModeError> {
    ModeProblem::new(coeffs, mesh)?.solve(lambda)
}

pub fn solve_mode_with(
    coeffs: &CoefficientSet,
    lambda: f64,
    mesh: &Mesh1D,
    element: Element,
) -> Result<ModeSolution, ModeError> {
    ModeProblem::with_element(coeffs, mesh, element)?.solve(lambda)
}

fn check_lambda(lambda: f64) -> Result<(), ModeError> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(ModeError::NonPositiveLambda(lambda))
    }
}

impl ModeProblem {
    pub fn new(coeffs: &CoefficientSet, mesh: &Mesh1D) -> Result<Self, ModeError> {
        Self::with_element(coeffs, mesh, Element::default())
    }

    pub fn with_element(coeffs: &CoefficientSet, mesh: &Mesh1D, element: Element) -> Result<Self, ModeError> {
        if coeffs.branch() == Branch::ConstantCoupling {
            return Err(ModeError::ConstantCoupling);
        }
        let pa = coeffs.sf_a_exponent();
        if pa <= -1.0 {
            return Err(ModeError::UnsupportedWeight(format!(
                "𝖺 behaves like (1-u²)^{pa} at the endpoints"
            )));
        }
        if let A2Tau::Explicit(_) = coeffs.a2tau {
            for u in [-1.0, 1.0] {
                let g = coeffs.sf_a_smooth(u).unwrap_or(f64::NAN);
                if !(g.is_finite() && g > 0.0) {
                    return Err(ModeError::UnsupportedWeight(format!(
                        "(n²/n')²/A²τ = {g} at u = {u}; A²τ must stay positive up to the endpoints"
                    )));
                }
            }
        }
        let pm = coeffs.sf_m_exponent();
        let sigma = coeffs.compute_constants().sigma;
        let nodes = mesh.nodes();
        let n = nodes.len();
        let mut edges = vec![0.0; n - 1];
        let mut k_diag = vec![0.0; n];
        let mut k_off = vec![0.0; n - 1];
        let mut m_diag = vec![0.0; n];
        let mut m_off = vec![0.0; n - 1];
        let mut load = vec![0.0; n];
        let mut moments = vec![0.0; n];
        let mut cell_mass = Vec::with_capacity(n - 1);
        let mut bubbles = Vec::new();

        for e in 0..n - 1 {
            let (a, b) = (nodes[e], nodes[e + 1]);
            let h = b - a;
            let cell = CellRule::new(a, b);
            // ∫ 𝖺 / h² on the cell
            let stiff = cell.integrate(pa, |u| coeffs.sf_a_smooth(u).expect("monotone")) / (h * h);
            let mut mm = [0.0; 3];
            let mut mom = [0.0; 2];
            cell.for_each(pm, |u, w| {
                let m = w * coeffs.m_tilde.value(u);
                let (p0, p1) = ((b - u) / h, (u - a) / h);
                mm[0] += m * p0 * p0;
                mm[1] += m * p0 * p1;
                mm[2] += m * p1 * p1;
                mom[0] += m * p0;
                mom[1] += m * p1;
            });
            let c_int = cell.integrate(0.0, |u| coeffs.c(u).expect("monotone"));

            edges[e] = stiff;
            k_diag[e] += stiff;
            k_diag[e + 1] += stiff;
            k_off[e] -= stiff;
            m_diag[e] += mm[0];
            m_diag[e + 1] += mm[2];
            m_off[e] += mm[1];
            moments[e] += mom[0];
            moments[e + 1] += mom[1];
            load[e] += 0.5 * h - c_int / h;
            load[e + 1] += 0.5 * h + c_int / h;
            cell_mass.push(mm);

            if element == Element::Quadratic {
                let xi = |u: f64| (2.0 * u - a - b) / h;
                let mut a1 = 0.0;
                let mut a2 = 0.0;
                cell.for_each(pa, |u, w| {
                    let g = w * coeffs.sf_a_smooth(u).expect("monotone");
                    let x = xi(u);
                    a1 += g * x;
                    a2 += g * x * x;
                });
                let mut bm = [0.0; 3];
                let mut moment = 0.0;
                cell.for_each(pm, |u, w| {
                    let m = w * coeffs.m_tilde.value(u);
                    let x = xi(u);
                    let pb = 1.0 - x * x;
                    bm[0] += m * 0.5 * (1.0 - x) * pb;
                    bm[1] += m * 0.5 * (1.0 + x) * pb;
                    bm[2] += m * pb * pb;
                    moment += m * pb;
                });
                let c_xi = cell.integrate(0.0, |u| coeffs.c(u).expect("monotone") * xi(u));
                bubbles.push(Bubble {
                    kb: 4.0 * a1 / (h * h),
                    kbb: 16.0 * a2 / (h * h),
                    mass: bm,
                    load: 2.0 * h / 3.0 - 4.0 * c_xi / h,
                    moment,
                });
            }
        }
        Ok(ModeProblem {
            mesh: mesh.clone(),
            element,
            assembly: Assembly {
                cell_mass,
                bubbles,
                edges,
                stiffness: SymTridiag::new(k_diag, k_off),
                mass: SymTridiag::new(m_diag, m_off),
                load,
                mass_moments: moments,
                sigma,
            },
        })
    }

    pub fn assembly(&self) -> &Assembly {
        &self.assembly
    }

    pub fn mesh(&self) -> &Mesh1D {
        &self.mesh
    }

    pub fn element(&self) -> Element {
        self.element
    }

    /// Edge weights, diagonal remainder and load of the vertex system. The
    /// remainder is the row sum of each cell block, formed from mass terms
    /// only because stiffness rows sum to zero.
    fn condense(&self, lambda: f64) -> Condensed {
        let asm = &self.assembly;
        let n = asm.load.len();
        let mut edges = Vec::with_capacity(n - 1);
        let mut extra = vec![0.0; n];
        let mut load = asm.load.clone();
        let mut schur_extra = 0.0;
        for (e, (&s, m)) in asm.edges.iter().zip(&asm.cell_mass).enumerate() {
            let mut w = s - lambda * m[1];
            let mut r0 = lambda * (m[0] + m[1]);
            let mut r1 = lambda * (m[1] + m[2]);
            if let Some(bb) = asm.bubbles.get(e) {
                let a0 = bb.kb + lambda * bb.mass[0];
                let a1 = -bb.kb + lambda * bb.mass[1];
                let ab = bb.kbb + lambda * bb.mass[2];
                let mb = bb.mass[0] + bb.mass[1];
                w += a0 * a1 / ab;
                r0 -= lambda * a0 * mb / ab;
                r1 -= lambda * a1 * mb / ab;
                load[e] -= a0 * bb.load / ab;
                load[e + 1] -= a1 * bb.load / ab;
                schur_extra += bb.load * bb.load / ab;
            }
            edges.push(w);
            extra[e] += r0;
            extra[e + 1] += r1;
        }
        Condensed { edges, extra, load, schur_extra }
    }

    /// Bubble coefficients of `f` given its vertex values.
    fn bubble_values(&self, lambda: f64, zeta: f64, f: &[f64]) -> Vec<f64> {
        self.assembly
            .bubbles
            .iter()
            .enumerate()
            .map(|(e, bb)| {
                let a0 = bb.kb + lambda * bb.mass[0];
                let a1 = -bb.kb + lambda * bb.mass[1];
                let ab = bb.kbb + lambda * bb.mass[2];
                (zeta * bb.load - a0 * f[e] - a1 * f[e + 1]) / ab
            })
            .collect()
    }

    /// Cellwise `∫ 𝖺 f'² + λ 𝗆 f²`, written with vertex differences so no
    /// cancellation occurs.
    fn energy(&self, lambda: f64, f: &[f64], fb: &[f64]) -> f64 {
        let asm = &self.assembly;
        let mut total = 0.0;
        for (e, (&s, m)) in asm.edges.iter().zip(&asm.cell_mass).enumerate() {
            let (f0, f1) = (f[e], f[e + 1]);
            let d = f1 - f0;
            let mut grad = s * d * d;
            let mut mass = m[0] * f0 * f0 + 2.0 * m[1] * f0 * f1 + m[2] * f1 * f1;
            if let (Some(bb), Some(&b)) = (asm.bubbles.get(e), fb.get(e)) {
                grad += -2.0 * bb.kb * b * d + bb.kbb * b * b;
                mass += 2.0 * b * (bb.mass[0] * f0 + bb.mass[1] * f1) + bb.mass[2] * b * b;
            }
            total += grad + lambda * mass;
        }
        total
    }

    /// Schur complement solve: `ζ = σ / (BᵀA⁻¹B)`, `f = ζ A⁻¹B`.
    pub fn solve(&self, lambda: f64) -> Result<ModeSolution, ModeError> {
        check_lambda(lambda)?;
        let asm = &self.assembly;
        let sys = self.condense(lambda);
        let n = sys.load.len();
        let n_cells = self.mesh.n_cells();
        let advice = || format!("refine or regrade the mesh (currently {n_cells} cells) or check the coefficients");
        let extra = SymTridiag::new(sys.extra.clone(), vec![0.0; n - 1]);
        let ldl = factor_laplacian_plus(&sys.edges, &extra)
            .ok_or_else(|| ModeError::IllConditioned { estimate: f64::INFINITY, advice: advice() })?;
        let diag: Vec<f64> = (0..n)
            .map(|j| {
                sys.extra[j] + if j > 0 { sys.edges[j - 1] } else { 0.0 } + if j + 1 < n { sys.edges[j] } else { 0.0 }
            })
            .collect();
        let a = SymTridiag::new(diag, sys.edges.iter().map(|w| -w).collect());
        let condition = scaled_condition(&a, &ldl);
        if !(condition < MAX_CONDITION) {
            return Err(ModeError::IllConditioned { estimate: condition, advice: advice() });
        }
        let g = ldl.solve(&sys.load);
        let schur = sys.load.iter().zip(&g).map(|(b, x)| b * x).sum::<f64>() + sys.schur_extra;
        if !(schur > 0.0) {
            return Err(ModeError::HypothesisViolation(schur));
        }
        let zeta = asm.sigma / schur;
        let f: Vec<f64> = g.iter().map(|x| zeta * x).collect();
        let fb = self.bubble_values(lambda, zeta, &f);
        let mut constraint: f64 = asm.load.iter().zip(&f).map(|(b, x)| b * x).sum();
        let mut mass_f: f64 = asm.mass_moments.iter().zip(&f).map(|(m, x)| m * x).sum();
        for (bb, b) in asm.bubbles.iter().zip(&fb) {
            constraint += bb.load * b;
            mass_f += bb.moment * b;
        }
        let energy = self.energy(lambda, &f, &fb);
        Ok(ModeSolution {
            lambda,
            u: self.mesh.nodes().to_vec(),
            f,
            zeta,
            zeta_alt: 0.5 * lambda * mass_f,
            energy,
            constraint_residual: (constraint - asm.sigma).abs(),
            condition_estimate: condition,
            element: self.element,
        })
    }
}

/// Estimate of `κ₁(D^{-1/2} A D^{-1/2})`, `D = diag(A)`.
fn scaled_condition(a: &SymTridiag, ldl: &Ldl) -> f64 {
    let root: Vec<f64> = a.diag.iter().map(|d| d.sqrt()).collect();
    let scaled = SymTridiag::new(
        vec![1.0; a.len()],
        a.off.iter().enumerate().map(|(j, o)| o / (root[j] * root[j + 1])).collect(),
    );
    let inv = ldl.inverse_norm1_estimate_scaled(&root);
    scaled.norm1() * inv
}

/// Per-cell quadrature absorbing `(1 - u²)^p` exactly on end cells.
struct CellRule {
    a: f64,
    b: f64,
}

impl CellRule {
    fn new(a: f64, b: f64) -> Self {
        CellRule { a, b }
    }

    /// Calls `visit(u, w)` where `w` already contains `(1 - u²)^p`.
    fn for_each<F: FnMut(f64, f64)>(&self, p: f64, mut visit: F) {
        let (a, b) = (self.a, self.b);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        if p != 0.0 && b == 1.0 {
            // (1 - u)^p = (b - u)^p absorbed; (1 + u)^p stays in the integrand.
            let rule = GaussJacobi::new(END_CELL_NODES, p, 0.0);
            let scale = half.powf(1.0 + p);
            for (&x, &w) in rule.nodes().iter().zip(rule.weights()) {
                let u = mid + half * x;
                visit(u, scale * w * (1.0 + u).powf(p));
            }
        } else if p != 0.0 && a == -1.0 {
            let rule = GaussJacobi::new(END_CELL_NODES, 0.0, p);
            let scale = half.powf(1.0 + p);
            for (&x, &w) in rule.nodes().iter().zip(rule.weights()) {
                let u = mid + half * x;
                visit(u, scale * w * (1.0 - u).powf(p));
            }
        } else {
            let dist = (1.0 - b).min(a + 1.0);
            let n = if p != 0.0 && dist < 4.0 * (b - a) { NEAR_CELL_NODES } else { FAR_CELL_NODES };
            let rule = GaussJacobi::legendre(n);
            for (&x, &w) in rule.nodes().iter().zip(rule.weights()) {
                let u = mid + half * x;
                let weight = if p != 0.0 { ((1.0 - u) * (1.0 + u)).powf(p) } else { 1.0 };
                visit(u, half * w * weight);
            }
        }
    }

    fn integrate<F: Fn(f64) -> f64>(&self, p: f64, g: F) -> f64 {
        let mut s = 0.0;
        self.for_each(p, |u, w| s += w * g(u));
        s
    }
}

/// Sidecar metadata written next to a profile CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeMetadata {
    pub lambda: f64,
    pub zeta: f64,
    pub zeta_alt: f64,
    pub energy: f64,
    pub constraint_residual: f64,
    pub mesh: MeshMetadata,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeshMetadata {
    pub n_cells: usize,
    pub grading: Grading,
    pub element: Element,
}

impl ModeSolution {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("u,f\n");
        for (u, f) in self.u.iter().zip(&self.f) {
            writeln!(out, "{u},{f}").expect("write to string");
        }
        out
    }

    pub fn metadata(&self, mesh: &Mesh1D) -> ModeMetadata {
        ModeMetadata {
            lambda: self.lambda,
            zeta: self.zeta,
            zeta_alt: self.zeta_alt,
            energy: self.energy,
            constraint_residual: self.constraint_residual,
            mesh: MeshMetadata { n_cells: mesh.n_cells(), grading: mesh.grading(), element: self.element },
        }
    }

    /// Writes `path` (CSV) and `path` with a `.json` extension (metadata).
    pub fn write(&self, mesh: &Mesh1D, path: &Path) -> io::Result<()> {
        std::fs::write(path, self.to_csv())?;
        let meta = serde_json::to_string_pretty(&self.metadata(mesh)).map_err(io::Error::other)?;
        std::fs::write(path.with_extension("json"), meta + "\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    Oracle,
    FinestMesh,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n_cells: usize,
    pub h: f64,
    pub zeta: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub lambda: f64,
    pub reference: f64,
    pub reference_kind: Reference,
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `log error` against `log h`.
    pub observed_order: f64,
}

/// Solves on each mesh and compares with the closed form when the
/// coefficient set is tied, otherwise with the finest mesh.
pub fn convergence_study(
    coeffs: &CoefficientSet,
    lambda: f64,
    meshes: &[Mesh1D],
) -> Result<ConvergenceTable, ModeError> {
    if meshes.len() < 3 {
        return Err(ModeError::Mesh("a convergence study needs at least three meshes".into()));
    }
    let mut sorted: Vec<&Mesh1D> = meshes.iter().collect();
    sorted.sort_by_key(|m| m.n_cells());
    let zetas = sorted
        .iter()
        .map(|m| solve_mode(coeffs, lambda, m).map(|s| s.zeta))
        .collect::<Result<Vec<_>, _>>()?;
    let oracle = ClosedFormCase::from_coeffs(coeffs).ok().and_then(|c| c.zeta(lambda).ok());
    let (reference, kind, used) = match oracle {
        Some(z) => (z, Reference::Oracle, sorted.len()),
        None => (*zetas.last().unwrap(), Reference::FinestMesh, sorted.len() - 1),
    };
    let rows: Vec<ConvergenceRow> = sorted
        .iter()
        .zip(&zetas)
        .map(|(m, &z)| ConvergenceRow {
            n_cells: m.n_cells(),
            h: 2.0 / m.n_cells() as f64,
            zeta: z,
            error: (z - reference).abs(),
        })
        .collect();
    let pts: Vec<(f64, f64)> = rows[..used]
        .iter()
        .filter(|r| r.error > 0.0)
        .map(|r| (r.h.ln(), r.error.ln()))
        .collect();
    Ok(ConvergenceTable { lambda, reference, reference_kind: kind, observed_order: ls_slope(&pts), rows })
}

pub(crate) fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::ScalarFunction;
    use crate::oracle::zeta_general_tied;
    use std::f64::consts::PI;

    fn tied() -> CoefficientSet {
        CoefficientSet::tied_affine()
    }

    #[test]
    fn graded_mesh_is_symmetric() {
        let m = Mesh1D::default_graded(16).unwrap();
        let x = m.nodes();
        assert_eq!(x.len(), 17);
        assert_eq!((x[0], x[16], x[8]), (-1.0, 1.0, 0.0));
        for j in 0..=16 {
            assert_eq!(x[j], -x[16 - j]);
        }
        // 1 - (1 - 1/8)² next to the right endpoint
        assert!((x[15] - (1.0 - (1.0f64 / 8.0).powi(2))).abs() < 1e-15);
        assert!(Mesh1D::uniform(6).is_err());
        assert!(Mesh1D::uniform(9).is_err());
    }

    #[test]
    fn matrix_is_spd() {
        let asm = assemble(&tied(), 3.0, &Mesh1D::default_graded(32).unwrap()).unwrap();
        assert!(asm.a.factor_spd().is_some());
        assert!(asm.a.off.iter().all(|&v| v < 0.0 || v.abs() < asm.a.norm1()));
    }

    #[test]
    fn load_applied_to_constants_is_two() {
        let asm = assemble(&tied(), 1.0, &Mesh1D::default_graded(64).unwrap()).unwrap();
        let total: f64 = asm.b.iter().sum();
        assert!((total - 2.0).abs() < 1e-13);
    }

    #[test]
    fn stiffness_annihilates_constants() {
        let p = ModeProblem::new(&tied(), &Mesh1D::default_graded(64).unwrap()).unwrap();
        let r = p.assembly().stiffness.mul(&vec![1.0; 65]);
        assert!(r.iter().all(|v| v.abs() < 1e-10));
        // Σ ∫𝗆φ_j = ∫𝗆 = π/2
        let mass: f64 = p.assembly().mass_moments.iter().sum();
        assert!((mass - PI / 2.0).abs() < 1e-13);
    }

    #[test]
    fn cell_integrals_agree_across_refinement() {
        // Integral of 𝖺 over [1/2, 1] from the coarse and the refined mesh.
        let c = tied();
        let coarse = Mesh1D::uniform(8).unwrap();
        let fine = Mesh1D::uniform(16).unwrap();
        let total = |m: &Mesh1D| -> f64 {
            let x = m.nodes();
            (0..x.len() - 1)
                .filter(|&e| x[e] >= 0.5)
                .map(|e| CellRule::new(x[e], x[e + 1]).integrate(-0.5, |u| c.sf_a_smooth(u).unwrap()))
                .sum()
        };
        // ∫_{1/2}^1 (1-u²)^{-1/2} = π/2 - π/6
        assert!((total(&coarse) - PI / 3.0).abs() < 1e-13);
        assert!((total(&coarse) - total(&fine)).abs() < 1e-13);
    }

    #[test]
    fn matches_affine_oracle_at_four() {
        let s = solve_mode(&tied(), 4.0, &Mesh1D::default_graded(2048).unwrap()).unwrap();
        let oracle = 0.33007267965540779;
        assert!((s.zeta - oracle).abs() / oracle < 1e-6, "{}", s.zeta);
        assert!(s.constraint_residual < 1e-10);
        assert!((s.energy - s.zeta * PI / 2.0).abs() < 1e-8 * (1.0 + s.energy));
        assert!((s.zeta - s.zeta_alt).abs() < 1e-10 * s.zeta);
    }

    #[test]
    fn matches_general_tied_oracle() {
        let c = CoefficientSet::new(
            ScalarFunction::constant(1.0),
            1,
            ScalarFunction::poly([2.0, 1.0, 0.2]),
            A2Tau::Tied { a_tilde: 1.0 },
        )
        .unwrap();
        let case = ClosedFormCase::from_coeffs(&c).unwrap();
        let mesh = Mesh1D::default_graded(2048).unwrap();
        for &l in &[1.0, 100.0, 1e4] {
            let s = solve_mode(&c, l, &mesh).unwrap();
            let o = zeta_general_tied(&case, l).unwrap();
            assert!((s.zeta - o).abs() / o < 1e-8, "λ = {l}: {} vs {o}", s.zeta);
        }
    }

    #[test]
    fn bounded_by_surface_diffusion() {
        let p = ModeProblem::new(&tied(), &Mesh1D::default_graded(256).unwrap()).unwrap();
        for &l in &[1e-3, 0.1, 1.0, 10.0, 1e3] {
            let z = p.solve(l).unwrap().zeta;
            assert!(z > 0.0 && z <= PI * PI / 16.0 * l * (1.0 + 1e-10), "λ = {l}");
        }
    }

    #[test]
    fn repeated_solves_are_bit_identical() {
        let mesh = Mesh1D::default_graded(128).unwrap();
        let a = solve_mode(&tied(), 7.5, &mesh).unwrap();
        let b = solve_mode(&tied(), 7.5, &mesh).unwrap();
        assert_eq!(a.zeta.to_bits(), b.zeta.to_bits());
    }

    #[test]
    fn linear_elements_converge_at_second_order() {
        let o = ClosedFormCase::from_coeffs(&tied()).unwrap().zeta(10.0).unwrap();
        let mut errs = Vec::new();
        for n in [128, 256, 512] {
            let s = solve_mode_with(&tied(), 10.0, &Mesh1D::default_graded(n).unwrap(), Element::Linear).unwrap();
            errs.push((2.0 / n as f64).ln());
            errs.push((s.zeta - o).abs().ln());
            assert!((s.zeta - s.zeta_alt).abs() < 1e-12 * s.zeta);
        }
        let pts: Vec<(f64, f64)> = errs.chunks(2).map(|c| (c[0], c[1])).collect();
        let order = ls_slope(&pts);
        assert!((1.8..2.3).contains(&order), "{order}");
    }

    #[test]
    fn rejections() {
        let mesh = Mesh1D::default_graded(16).unwrap();
        assert_eq!(solve_mode(&tied(), 0.0, &mesh).unwrap_err(), ModeError::NonPositiveLambda(0.0));
        assert_eq!(
            solve_mode(&CoefficientSet::constant_coupling(), 1.0, &mesh).unwrap_err(),
            ModeError::ConstantCoupling
        );
        let i2 = CoefficientSet::new(ScalarFunction::constant(1.0), 2, ScalarFunction::affine(1.0, 1.0), A2Tau::Tied { a_tilde: 1.0 })
            .unwrap();
        assert!(matches!(solve_mode(&i2, 1.0, &mesh), Err(ModeError::UnsupportedWeight(_))));
    }

    #[test]
    fn explicit_a2tau_solves() {
        let c = CoefficientSet::new(
            ScalarFunction::constant(1.0),
            1,
            ScalarFunction::affine(1.0, 1.0),
            A2Tau::Explicit(ScalarFunction::constant(1.0)),
        )
        .unwrap();
        let s = solve_mode(&c, 10.0, &Mesh1D::default_graded(512).unwrap()).unwrap();
        assert!(s.zeta > 0.0 && s.zeta <= PI * PI / 16.0 * 10.0);
        assert!((s.zeta - s.zeta_alt).abs() < 1e-10 * s.zeta);
    }

    #[test]
    fn convergence_against_oracle() {
        let meshes: Vec<Mesh1D> = [64, 128, 256, 512].iter().map(|&n| Mesh1D::default_graded(n).unwrap()).collect();
        let t = convergence_study(&tied(), 10.0, &meshes).unwrap();
        assert_eq!(t.reference_kind, Reference::Oracle);
        assert!(t.observed_order >= 1.8, "{t:#?}");
        assert!(t.rows.windows(2).all(|w| w[1].error < w[0].error));
    }

    #[test]
    fn csv_and_metadata() {
        let mesh = Mesh1D::default_graded(8).unwrap();
        let s = solve_mode(&tied(), 1.0, &mesh).unwrap();
        let csv = s.to_csv();
        assert!(csv.starts_with("u,f\n-1,"));
        assert_eq!(csv.lines().count(), 10);
        let meta = serde_json::to_value(s.metadata(&mesh)).unwrap();
        assert_eq!(meta["mesh"]["n_cells"], 8);
        assert_eq!(meta["mesh"]["grading"]["kind"], "graded");
    }
}
