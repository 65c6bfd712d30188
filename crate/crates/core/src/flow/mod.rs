//! Closed planar curves moving by `V = 𝒢κ`.
//!
//! Conventions: counterclockwise curves, interior is the `u = -1` phase,
//! `ν` points outward, `κ = -1/R` on a circle of radius `R` and `V = ∂ₜγ·ν`.
//! On a curve of length `L` the operator acts on the Fourier mode `k` of
//! arclength by `ζ((2πk/L)²)`.
//!
//! The curve is stepped as tangent angle `θ(α) = 2πα + φ(α)` over
//! normalized arclength `α`, length `L` and mean position. A tangential
//! velocity keeps the samples equidistant in arclength, so every state is
//! already reparametrized. With `U = V`:
//!
//! ```text
//! L' = ∫ V θ_α dα,   T_α = L' - V θ_α,   θ_t = (T θ_α - V_α) / L
//! ```

mod output;
pub mod shape;
mod spectral;

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::symbol::{FlowLaw, LawError};
pub use output::{frame_json, frame_svg, DirSink};
pub use shape::{ShapeError, ShapeSpec};
use spectral::Spectral;

pub const MIN_POINTS: usize = 64;
/// Fourier modes of `φ` below this magnitude are set to zero.
pub const FILTER_LEVEL: f64 = 1e-13;
/// `max|V|·L/σ` below this counts as equilibrium.
pub const EQUILIBRIUM_LEVEL: f64 = 1e-10;
/// Default local error target of the adaptive stepper.
pub const DEFAULT_TOLERANCE: f64 = 1e-10;
/// Relative slack on `L(t_{n+1}) ≤ L(t_n)`.
pub const PERIMETER_SLACK: f64 = 1e-10;
const AUTO_DISPLACEMENT: f64 = 0.1;
const MAX_DISPLACEMENT: f64 = 0.5;
const MIN_INPUT_POINTS: usize = 16;
const INTERSECTION_POINTS: usize = 128;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("need at least {MIN_INPUT_POINTS} input points, got {0}")]
    TooFewInputPoints(usize),
    #[error("sample count must be a power of two of at least {MIN_POINTS}, got {0}")]
    BadSampleCount(usize),
    #[error("curve is not simple: segments {0} and {1} intersect")]
    SelfIntersecting(usize, usize),
    #[error("curve is degenerate: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Law(#[from] LawError),
    #[error("time step {dt:e} moves points by {displacement:e}, above the limit {limit:e}")]
    StepTooLarge { dt: f64, displacement: f64, limit: f64 },
    #[error("run aborted at t = {t}: {reason}")]
    Aborted { t: f64, reason: String, diagnostics: Box<FlowDiagnostics>, state: Box<CurveState> },
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
}

/// Uniform-arclength samples of a closed counterclockwise curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveState {
    pub points: Vec<[f64; 2]>,
    pub t: f64,
    pub perimeter: f64,
    pub area: f64,
}

impl CurveState {
    pub fn from_shape(shape: &ShapeSpec, n: usize) -> Result<Self, FlowError> {
        reparametrize(&shape.sample(4 * n.max(MIN_POINTS)), n)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `L² - 4πA`, written as `4π² Σ k(k-1)|ẑ_k|²` so it stays
    /// non-negative and accurate near circles.
    pub fn deficit(&self) -> f64 {
        let spec = Spectral::new(self.len());
        let z = coefficients(&spec, &self.points);
        4.0 * PI * PI * weighted_sum(&spec, &z, |k| k * (k - 1.0))
    }

    pub fn translated(&self, dx: f64, dy: f64) -> CurveState {
        CurveState { points: self.points.iter().map(|p| [p[0] + dx, p[1] + dy]).collect(), ..self.clone() }
    }

    /// Largest relative deviation of `|γ_α|` from its mean at the nodes.
    pub fn speed_spread(&self) -> f64 {
        let spec = Spectral::new(self.len());
        let mut v = spec.derivative(&coefficients(&spec, &self.points));
        spec.inverse(&mut v);
        let speed: Vec<f64> = v.iter().map(|c| c.norm()).collect();
        let mean = speed.iter().sum::<f64>() / speed.len() as f64;
        speed.iter().map(|s| (s / mean - 1.0).abs()).fold(0.0, f64::max)
    }
}

fn to_complex(points: &[[f64; 2]]) -> Vec<Complex64> {
    points.iter().map(|p| Complex64::new(p[0], p[1])).collect()
}

fn coefficients(spec: &Spectral, points: &[[f64; 2]]) -> Vec<Complex64> {
    let mut z = to_complex(points);
    spec.forward(&mut z);
    z
}

/// `Σ w(k) |ẑ_k|²` over signed wavenumbers, Nyquist excluded.
fn weighted_sum(spec: &Spectral, z: &[Complex64], w: impl Fn(f64) -> f64) -> f64 {
    z.iter().zip(spec.wavenumbers()).map(|(c, &k)| if k == 0.0 { 0.0 } else { w(k) * c.norm_sqr() }).sum()
}

fn check_count(n: usize) -> Result<(), FlowError> {
    if n < MIN_POINTS || !n.is_power_of_two() {
        return Err(FlowError::BadSampleCount(n));
    }
    Ok(())
}

fn segments_cross(p: [f64; 2], q: [f64; 2], r: [f64; 2], s: [f64; 2]) -> bool {
    let orient = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let (d1, d2) = (orient(p, q, r), orient(p, q, s));
    let (d3, d4) = (orient(r, s, p), orient(r, s, q));
    d1 * d2 < 0.0 && d3 * d4 < 0.0 || d1 == 0.0 && d2 == 0.0 && d3 == 0.0 && d4 == 0.0
}

/// Segment-pair test on the closed polygon, subsampled to at most
/// `max_points` vertices.
fn find_intersection(points: &[[f64; 2]], max_points: usize) -> Option<(usize, usize)> {
    let stride = points.len().div_ceil(max_points).max(1);
    let idx: Vec<usize> = (0..points.len()).step_by(stride).collect();
    let m = idx.len();
    for i in 0..m {
        for j in i + 2..m {
            if i == 0 && j == m - 1 {
                continue;
            }
            let (a, b) = (points[idx[i]], points[idx[(i + 1) % m]]);
            let (c, d) = (points[idx[j]], points[idx[(j + 1) % m]]);
            if segments_cross(a, b, c, d) {
                return Some((idx[i], idx[j]));
            }
        }
    }
    None
}

fn shoelace(points: &[[f64; 2]]) -> f64 {
    let n = points.len();
    0.5 * (0..n)
        .map(|j| {
            let (a, b) = (points[j], points[(j + 1) % n]);
            a[0] * b[1] - a[1] * b[0]
        })
        .sum::<f64>()
}

/// Trigonometric interpolation of a closed polygon sampled at equispaced
/// parameter values, resampled at `n_out` points equidistant in arclength.
/// The arclength map is inverted by Newton iteration.
pub fn reparametrize(points: &[[f64; 2]], n_out: usize) -> Result<CurveState, FlowError> {
    let n_in = points.len();
    if n_in < MIN_INPUT_POINTS {
        return Err(FlowError::TooFewInputPoints(n_in));
    }
    check_count(n_out)?;
    if points.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
        return Err(FlowError::Degenerate("non-finite coordinates".into()));
    }
    if let Some((i, j)) = find_intersection(points, 2048) {
        return Err(FlowError::SelfIntersecting(i, j));
    }
    let signed = shoelace(points);
    if !(signed.abs() > 0.0) {
        return Err(FlowError::Degenerate("zero enclosed area".into()));
    }
    let mut pts = points.to_vec();
    if signed < 0.0 {
        pts.reverse();
    }

    let input = Spectral::new(n_in);
    let z = coefficients(&input, &pts);
    let ks: Vec<f64> = (0..n_in).map(|j| if 2 * j <= n_in { j as f64 } else { j as f64 - n_in as f64 }).collect();
    // Nyquist coefficient split evenly between ±N/2.
    let terms: Vec<(f64, Complex64)> = z
        .iter()
        .zip(&ks)
        .flat_map(|(&c, &k)| {
            if 2 * (k.abs() as usize) == n_in {
                vec![(k, 0.5 * c), (-k, 0.5 * c)]
            } else {
                vec![(k, c)]
            }
        })
        .collect();
    let eval = |t: f64| -> (Complex64, Complex64) {
        let mut pos = Complex64::new(0.0, 0.0);
        let mut vel = Complex64::new(0.0, 0.0);
        for &(k, c) in &terms {
            let e = Complex64::from_polar(1.0, 2.0 * PI * k * t) * c;
            pos += e;
            vel += e * Complex64::new(0.0, 2.0 * PI * k);
        }
        (pos, vel)
    };

    // Arclength of the interpolant on an oversampled grid.
    let m = 4 * n_in.max(n_out);
    let speed: Vec<f64> = (0..m).map(|j| eval(j as f64 / m as f64).1.norm()).collect();
    let fine = Spectral::new(m);
    let sc = fine.forward_real(&speed);
    let length = sc[0].re;
    if !(length > 0.0) {
        return Err(FlowError::Degenerate("zero length".into()));
    }
    let periodic = fine.antiderivative(&sc);
    let skernel: Vec<(f64, Complex64)> = periodic
        .iter()
        .zip(fine.wavenumbers())
        .filter(|(c, _)| c.norm() > 0.0)
        .map(|(&c, &k)| (k, c))
        .collect();
    let arclength = |t: f64| -> f64 {
        length * t
            + skernel.iter().map(|&(k, c)| (c * Complex64::from_polar(1.0, 2.0 * PI * k * t)).re).sum::<f64>()
    };
    let s0 = arclength(0.0);
    let s_grid: Vec<f64> = (0..=m).map(|j| arclength(j as f64 / m as f64) - s0).collect();

    let mut out = Vec::with_capacity(n_out);
    for j in 0..n_out {
        let target = length * j as f64 / n_out as f64;
        let i = s_grid.partition_point(|&s| s < target).clamp(1, m);
        let (sa, sb) = (s_grid[i - 1], s_grid[i]);
        let mut t = ((i - 1) as f64 + if sb > sa { (target - sa) / (sb - sa) } else { 0.0 }) / m as f64;
        for _ in 0..20 {
            let v = eval(t).1.norm();
            let dt = (arclength(t) - s0 - target) / v;
            t -= dt;
            if dt.abs() < 1e-15 {
                break;
            }
        }
        let p = eval(t).0;
        out.push([p.re, p.im]);
    }
    let state = state_from_points(out, 0.0);
    if find_intersection(&state.points, 2048).is_some() {
        return Err(FlowError::Degenerate("resampled curve is not simple; increase the input resolution".into()));
    }
    Ok(state)
}

/// Perimeter and area of uniform-arclength samples.
fn state_from_points(points: Vec<[f64; 2]>, t: f64) -> CurveState {
    let spec = Spectral::new(points.len());
    let z = coefficients(&spec, &points);
    let vel = spec.derivative(&z);
    let mut v = vel.clone();
    spec.inverse(&mut v);
    let perimeter = v.iter().map(|c| c.norm()).sum::<f64>() / points.len() as f64;
    let area = PI * weighted_sum(&spec, &z, |k| k);
    CurveState { points, t, perimeter, area }
}

/// Tangent-angle representation.
#[derive(Debug, Clone)]
struct Theta {
    /// Fourier coefficients of `φ = θ - 2πα`.
    phi: Vec<Complex64>,
    len: f64,
    center: Complex64,
}

fn krasny(phi: &mut [Complex64]) {
    for (j, c) in phi.iter_mut().enumerate() {
        if j > 0 && c.norm() < FILTER_LEVEL {
            *c = Complex64::new(0.0, 0.0);
        }
    }
}

impl Theta {
    fn from_state(spec: &Spectral, state: &CurveState) -> Result<Self, FlowError> {
        let n = spec.len();
        check_count(state.len())?;
        let z = coefficients(spec, &state.points);
        let mut vel = spec.derivative(&z);
        spec.inverse(&mut vel);
        let len = vel.iter().map(|c| c.norm()).sum::<f64>() / n as f64;
        let mut phi = Vec::with_capacity(n);
        let mut prev = 0.0;
        for (j, v) in vel.iter().enumerate() {
            let base = Complex64::from_polar(1.0, -2.0 * PI * j as f64 / n as f64);
            let mut a = (v * base).arg();
            if j > 0 {
                a += 2.0 * PI * ((prev - a) / (2.0 * PI)).round();
            }
            prev = a;
            phi.push(a);
        }
        let wrap = phi[n - 1] - phi[0];
        if wrap.abs() > PI {
            return Err(FlowError::Degenerate("tangent does not turn once".into()));
        }
        let mut phi = spec.forward_real(&phi);
        krasny(&mut phi);
        Ok(Theta { phi, len, center: z[0] })
    }

    fn angles(&self, spec: &Spectral) -> Vec<f64> {
        let n = spec.len();
        spec.inverse_real(&self.phi).iter().enumerate().map(|(j, p)| 2.0 * PI * j as f64 / n as f64 + p).collect()
    }

    fn position_coefficients(&self, spec: &Spectral) -> Vec<Complex64> {
        let tangent: Vec<f64> = self.angles(spec);
        let mut za: Vec<Complex64> = tangent.iter().map(|&a| Complex64::from_polar(self.len, a)).collect();
        spec.forward(&mut za);
        let mut z = spec.antiderivative(&za);
        z[0] = self.center;
        z
    }

    fn to_state(&self, spec: &Spectral, t: f64) -> CurveState {
        let zc = self.position_coefficients(spec);
        let mut z = zc.clone();
        spec.inverse(&mut z);
        CurveState {
            points: z.iter().map(|c| [c.re, c.im]).collect(),
            t,
            perimeter: self.len,
            area: PI * weighted_sum(spec, &zc, |k| k),
        }
    }

    fn kappa_deviation(&self, spec: &Spectral) -> f64 {
        let d = spec.inverse_real(&spec.derivative(&self.phi));
        d.iter().fold(0.0f64, |m, v| m.max(v.abs())) / self.len
    }
}

/// `ζ(λ_k)` for every FFT slot at length `len`.
fn zeta_row(spec: &Spectral, law: &FlowLaw, len: f64) -> Result<Vec<f64>, LawError> {
    let n = spec.len();
    let half: Vec<f64> = (0..=n / 2)
        .map(|k| if k == 0 { Ok(0.0) } else { law.zeta((2.0 * PI * k as f64 / len).powi(2)) })
        .collect::<Result<_, _>>()?;
    Ok((0..n).map(|j| half[spec.abs_wavenumber(j) as usize]).collect())
}

/// Fourier coefficients of `V = 𝒢κ`; `κ̂_k = -(2πik) φ̂_k / L` off the mean.
fn velocity_coefficients(spec: &Spectral, phi: &[Complex64], len: f64, zetas: &[f64]) -> Vec<Complex64> {
    spec.derivative(phi).iter().zip(zetas).map(|(d, z)| -d * *z / len).collect()
}

struct Rates {
    phi: Vec<Complex64>,
    len: f64,
    center: Complex64,
    max_v: f64,
}

fn rates(spec: &Spectral, law: &FlowLaw, s: &Theta) -> Result<Rates, LawError> {
    let n = spec.len() as f64;
    let zetas = zeta_row(spec, law, s.len)?;
    let vk = velocity_coefficients(spec, &s.phi, s.len, &zetas);
    let v = spec.inverse_real(&vk);
    let theta_a: Vec<f64> = spec.inverse_real(&spec.derivative(&s.phi)).iter().map(|d| 2.0 * PI + d).collect();
    let len_t = v.iter().zip(&theta_a).map(|(a, b)| a * b).sum::<f64>() / n;
    let ta: Vec<f64> = v.iter().zip(&theta_a).map(|(a, b)| len_t - a * b).collect();
    let tang = spec.inverse_real(&spec.antiderivative(&spec.forward_real(&ta)));
    let prod: Vec<f64> = tang.iter().zip(&theta_a).map(|(a, b)| a * b).collect();
    let adv = spec.forward_real(&prod);
    let va = spec.derivative(&vk);
    let phi: Vec<Complex64> = adv.iter().zip(&va).map(|(a, b)| (a - b) / s.len).collect();
    let theta = s.angles(spec);
    let center = theta
        .iter()
        .zip(v.iter().zip(&tang))
        .map(|(&a, (&vn, &tt))| Complex64::new(tt, -vn) * Complex64::from_polar(1.0, a))
        .sum::<Complex64>()
        / n;
    let max_v = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok(Rates { phi, len: len_t, center, max_v })
}

/// Lawson fourth-order Runge–Kutta with integrating factor
/// `exp(-ζ(λ_k) λ_k (1 - 1/k²) h)` at the start-of-step length: the
/// circle-linearized decay of mode `k`.
fn lawson_rk4(spec: &Spectral, law: &FlowLaw, s: &Theta, h: f64) -> Result<Theta, LawError> {
    let zetas = zeta_row(spec, law, s.len)?;
    let mu: Vec<f64> = (0..spec.len())
        .map(|j| {
            let k = spec.abs_wavenumber(j);
            if k == 0.0 {
                0.0
            } else {
                let lam = (2.0 * PI * k / s.len).powi(2);
                zetas[j] * lam * (1.0 - 1.0 / (k * k))
            }
        })
        .collect();
    let e_half: Vec<f64> = mu.iter().map(|m| (-m * h / 2.0).exp()).collect();
    let e_full: Vec<f64> = mu.iter().map(|m| (-m * h).exp()).collect();
    let remainder = |st: &Theta| -> Result<(Vec<Complex64>, f64, Complex64), LawError> {
        let r = rates(spec, law, st)?;
        let phi = r.phi.iter().zip(&st.phi).zip(&mu).map(|((d, p), m)| d + p * *m).collect();
        Ok((phi, r.len, r.center))
    };
    let combine = |base: &[Complex64], fb: &[f64], inc: &[Complex64], fi: &[f64], w: f64| -> Vec<Complex64> {
        base.iter().zip(fb).zip(inc.iter().zip(fi)).map(|((b, eb), (d, ed))| b * *eb + d * (w * ed)).collect()
    };
    let ones = vec![1.0; spec.len()];
    let stage = |phi: Vec<Complex64>, len: f64, center: Complex64| Theta { phi, len, center };

    let (k1, l1, c1) = remainder(s)?;
    let a = stage(combine(&s.phi, &e_half, &k1, &e_half, h / 2.0), s.len + h / 2.0 * l1, s.center + h / 2.0 * c1);
    let (k2, l2, c2) = remainder(&a)?;
    let b = stage(combine(&s.phi, &e_half, &k2, &ones, h / 2.0), s.len + h / 2.0 * l2, s.center + h / 2.0 * c2);
    let (k3, l3, c3) = remainder(&b)?;
    let c = stage(combine(&s.phi, &e_full, &k3, &e_half, h), s.len + h * l3, s.center + h * c3);
    let (k4, l4, c4) = remainder(&c)?;
    let phi: Vec<Complex64> = (0..spec.len())
        .map(|j| {
            s.phi[j] * e_full[j]
                + h / 6.0 * (k1[j] * e_full[j] + 2.0 * e_half[j] * (k2[j] + k3[j]) + k4[j])
        })
        .collect();
    let mut next = Theta {
        phi,
        len: s.len + h / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4),
        center: s.center + h / 6.0 * (c1 + 2.0 * c2 + 2.0 * c3 + c4),
    };
    krasny(&mut next.phi);
    Ok(next)
}

/// Uniform normal offset `d = (A_target - A)/L` (one Newton step for
/// `A + dL + πd² = A_target`), re-expressed at uniform arclength to first
/// order in `d`.
fn restore_area(spec: &Spectral, s: &Theta, target: f64) -> Theta {
    let n = spec.len();
    let state = s.to_state(spec, 0.0);
    let d = (target - state.area) / s.len;
    let phi = spec.inverse_real(&s.phi);
    let theta_a: Vec<f64> = spec.inverse_real(&spec.derivative(&s.phi)).iter().map(|v| 2.0 * PI + v).collect();
    let shifted: Vec<f64> =
        (0..n).map(|j| phi[j] - d * theta_a[j] * (phi[j] - phi[0]) / s.len).collect();
    let new_len = s.len + 2.0 * PI * d;
    let angles = s.angles(spec);
    let center = (0..n)
        .map(|j| {
            let p = Complex64::new(state.points[j][0], state.points[j][1]);
            let normal = Complex64::new(0.0, -1.0) * Complex64::from_polar(1.0, angles[j]);
            (p + d * normal) * ((s.len + d * theta_a[j]) / new_len)
        })
        .sum::<Complex64>()
        / n as f64;
    let mut phi = spec.forward_real(&shifted);
    krasny(&mut phi);
    Theta { phi, len: new_len, center }
}

/// `κ` at the nodes, `κ = -1/R` on circles. Logs a warning when the top
/// third of the spectrum carries more than 1% of the energy.
pub fn curvature(state: &CurveState) -> Result<Vec<f64>, FlowError> {
    let spec = Spectral::new(state.len());
    let th = Theta::from_state(&spec, state)?;
    let frac = tail_fraction(&spec, &th);
    if frac > 0.01 {
        log::warn!("curvature under-resolved: {:.2}% of its energy in the top third of the spectrum", 100.0 * frac);
    }
    Ok(spec.inverse_real(&spec.derivative(&th.phi)).iter().map(|d| -(2.0 * PI + d) / th.len).collect())
}

/// Share of `Σ|κ̂_k|²` (mean excluded) in `|k| > N/3`.
pub fn curvature_tail_fraction(state: &CurveState) -> Result<f64, FlowError> {
    let spec = Spectral::new(state.len());
    Ok(tail_fraction(&spec, &Theta::from_state(&spec, state)?))
}

fn tail_fraction(spec: &Spectral, th: &Theta) -> f64 {
    let d = spec.derivative(&th.phi);
    let cut = spec.len() as f64 / 3.0;
    let (mut top, mut all) = (0.0, 0.0);
    for (j, c) in d.iter().enumerate() {
        let e = c.norm_sqr();
        all += e;
        if spec.abs_wavenumber(j) > cut {
            top += e;
        }
    }
    if all > 0.0 {
        top / all
    } else {
        0.0
    }
}

/// `V = 𝒢κ` at the nodes; the mean mode of `κ` is annihilated.
pub fn normal_velocity(state: &CurveState, law: &FlowLaw) -> Result<Vec<f64>, FlowError> {
    let spec = Spectral::new(state.len());
    let th = Theta::from_state(&spec, state)?;
    let zetas = zeta_row(&spec, law, th.len)?;
    Ok(spec.inverse_real(&velocity_coefficients(&spec, &th.phi, th.len, &zetas)))
}

/// `2|κ̂_m|`: amplitude of the Fourier mode `m` of `κ` over arclength.
pub fn mode_amplitude(state: &CurveState, m: usize) -> Result<f64, FlowError> {
    let spec = Spectral::new(state.len());
    let th = Theta::from_state(&spec, state)?;
    Ok(2.0 * (2.0 * PI * m as f64 * th.phi[m].norm()) / th.len)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeStep {
    /// Step doubling with local error target `tol` on `θ`, `L/L` and the
    /// mean position, capped by a displacement of `0.1 L/N`.
    Auto { tol: f64 },
    Fixed { dt: f64 },
}

impl Default for TimeStep {
    fn default() -> Self {
        TimeStep::Auto { tol: DEFAULT_TOLERANCE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub area: f64,
    pub perimeter: f64,
    pub deficit: f64,
    pub max_kappa_dev: f64,
    pub max_v: f64,
    pub dt: f64,
}

/// Owns a curve in tangent-angle form and advances it.
pub struct Stepper<'a> {
    law: &'a FlowLaw,
    spec: Spectral,
    theta: Theta,
    t: f64,
    h: Option<f64>,
    area_target: Option<f64>,
    rejected: usize,
}

impl<'a> Stepper<'a> {
    pub fn new(state: &CurveState, law: &'a FlowLaw) -> Result<Self, FlowError> {
        check_count(state.len())?;
        let spec = Spectral::new(state.len());
        let theta = Theta::from_state(&spec, state)?;
        Ok(Stepper { law, spec, theta, t: state.t, h: None, area_target: None, rejected: 0 })
    }

    /// Restores the area to `target` after every step.
    pub fn enforce_area(&mut self, target: f64) {
        self.area_target = Some(target);
    }

    pub fn state(&self) -> CurveState {
        self.theta.to_state(&self.spec, self.t)
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn rejected_steps(&self) -> usize {
        self.rejected
    }

    pub fn max_velocity(&self) -> Result<f64, FlowError> {
        Ok(rates(&self.spec, self.law, &self.theta)?.max_v)
    }

    pub fn kappa_deviation(&self) -> f64 {
        self.theta.kappa_deviation(&self.spec)
    }

    pub fn mean_kappa(&self) -> f64 {
        -2.0 * PI / self.theta.len
    }

    fn record(&self, step: usize, dt: f64) -> Result<StepRecord, FlowError> {
        let st = self.state();
        Ok(StepRecord {
            step,
            t: self.t,
            area: st.area,
            perimeter: st.perimeter,
            deficit: st.deficit(),
            max_kappa_dev: self.kappa_deviation(),
            max_v: self.max_velocity()?,
            dt,
        })
    }

    /// One accepted step, at most `limit` long; returns its length.
    pub fn advance(&mut self, mode: TimeStep, limit: f64) -> Result<f64, FlowError> {
        let n = self.spec.len() as f64;
        let max_v = self.max_velocity()?;
        let cell = self.theta.len / n;
        let next = match mode {
            TimeStep::Fixed { dt } => {
                let dt = dt.min(limit);
                let displacement = dt * max_v;
                if displacement > MAX_DISPLACEMENT * cell || !(dt > 0.0) {
                    return Err(FlowError::StepTooLarge { dt, displacement, limit: MAX_DISPLACEMENT * cell });
                }
                let s = lawson_rk4(&self.spec, self.law, &self.theta, dt)?;
                self.finish(s, dt)?
            }
            TimeStep::Auto { tol } => {
                let cap = if max_v > 0.0 { AUTO_DISPLACEMENT * cell / max_v } else { f64::INFINITY };
                let mut h = self.h.unwrap_or(cap.min(1e-3 * self.theta.len.powi(2))).min(cap);
                loop {
                    let dt = h.min(limit);
                    let big = lawson_rk4(&self.spec, self.law, &self.theta, dt)?;
                    let mid = lawson_rk4(&self.spec, self.law, &self.theta, dt / 2.0)?;
                    let small = lawson_rk4(&self.spec, self.law, &mid, dt / 2.0)?;
                    let err = self.difference(&big, &small);
                    let factor = if err > 0.0 { 0.9 * (tol / err).powf(0.2) } else { 2.0 };
                    if err <= tol && small.len.is_finite() {
                        if dt == h {
                            self.h = Some((h * factor.clamp(0.2, 2.0)).min(cap.max(h)));
                        }
                        break self.finish(small, dt)?;
                    }
                    self.rejected += 1;
                    h = dt * if err.is_finite() { factor.clamp(0.1, 0.9) } else { 0.25 };
                    if !(h > 1e-14 * self.theta.len.powi(2) / (1.0 + max_v)) {
                        return Err(FlowError::Degenerate(format!("time step collapsed at t = {}", self.t)));
                    }
                }
            }
        };
        Ok(next)
    }

    fn difference(&self, a: &Theta, b: &Theta) -> f64 {
        let d: Vec<Complex64> = a.phi.iter().zip(&b.phi).map(|(x, y)| x - y).collect();
        let phys = self.spec.inverse_real(&d);
        let dphi = phys.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = self.theta.len;
        let v = dphi + (a.len - b.len).abs() / scale + (a.center - b.center).norm() / scale;
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    }

    fn finish(&mut self, mut s: Theta, dt: f64) -> Result<f64, FlowError> {
        if let Some(target) = self.area_target {
            s = restore_area(&self.spec, &s, target);
        }
        if !(s.len.is_finite() && s.len > 0.0 && s.phi.iter().all(|c| c.re.is_finite() && c.im.is_finite())) {
            return Err(FlowError::Degenerate(format!("non-finite state after step at t = {}", self.t)));
        }
        self.theta = s;
        self.t += dt;
        Ok(dt)
    }
}

/// Advances `state` by one step; the curve stays arclength-uniform.
pub fn step(state: &CurveState, law: &FlowLaw, mode: TimeStep, enforce_area: bool) -> Result<(CurveState, f64), FlowError> {
    let mut s = Stepper::new(state, law)?;
    if enforce_area {
        s.enforce_area(state.area);
    }
    let dt = s.advance(mode, f64::INFINITY)?;
    let next = s.state();
    if let Some((i, j)) = find_intersection(&next.points, INTERSECTION_POINTS) {
        return Err(FlowError::SelfIntersecting(i, j));
    }
    Ok((next, dt))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOptions {
    pub t_end: f64,
    pub frames: usize,
    pub enforce_area: bool,
    pub time_step: TimeStep,
    pub max_steps: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { t_end: 1.0, frames: 10, enforce_area: false, time_step: TimeStep::default(), max_steps: 1_000_000 }
    }
}

pub trait FrameSink {
    fn frame(&mut self, index: usize, state: &CurveState) -> Result<(), FlowError>;
}

impl FrameSink for Vec<CurveState> {
    fn frame(&mut self, _index: usize, state: &CurveState) -> Result<(), FlowError> {
        self.push(state.clone());
        Ok(())
    }
}

/// Discards frames.
pub struct NullSink;

impl FrameSink for NullSink {
    fn frame(&mut self, _index: usize, _state: &CurveState) -> Result<(), FlowError> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowDiagnostics {
    pub records: Vec<StepRecord>,
    /// One record per emitted frame.
    pub frames: Vec<StepRecord>,
    pub equilibrium: bool,
    pub rejected_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowSummary {
    pub steps: usize,
    pub t: f64,
    pub area_drift: f64,
    pub perimeter_violations: usize,
    pub deficit_strictly_decreasing: bool,
    pub initial_deficit: f64,
    pub final_deficit: f64,
    pub final_kappa_dev_rel: f64,
    pub equilibrium: bool,
}

impl FlowDiagnostics {
    /// Largest `|A(t) - A(0)| / A(0)`.
    pub fn area_drift(&self) -> f64 {
        let Some(a0) = self.records.first().map(|r| r.area) else { return 0.0 };
        self.records.iter().map(|r| ((r.area - a0) / a0).abs()).fold(0.0, f64::max)
    }

    pub fn perimeter_violations(&self) -> usize {
        self.records.windows(2).filter(|w| w[1].perimeter > w[0].perimeter * (1.0 + PERIMETER_SLACK)).count()
    }

    pub fn deficit_strictly_decreasing(&self) -> bool {
        self.frames.windows(2).all(|w| w[1].deficit < w[0].deficit)
    }

    pub fn summary(&self) -> FlowSummary {
        let first = self.records.first();
        let last = self.records.last();
        FlowSummary {
            steps: last.map_or(0, |r| r.step),
            t: last.map_or(0.0, |r| r.t),
            area_drift: self.area_drift(),
            perimeter_violations: self.perimeter_violations(),
            deficit_strictly_decreasing: self.deficit_strictly_decreasing(),
            initial_deficit: first.map_or(0.0, |r| r.deficit),
            final_deficit: last.map_or(0.0, |r| r.deficit),
            final_kappa_dev_rel: last.map_or(0.0, |r| r.max_kappa_dev * r.perimeter / (2.0 * PI)),
            equilibrium: self.equilibrium,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,t,area,perimeter,deficit,max_kappa_dev,max_v,dt\n");
        for r in &self.records {
            out += &format!(
                "{},{},{},{},{},{},{},{}\n",
                r.step, r.t, r.area, r.perimeter, r.deficit, r.max_kappa_dev, r.max_v, r.dt
            );
        }
        out
    }
}

/// Advances to `t_end`, emitting `frames + 1` equally spaced frames
/// (including `t = 0`). Stops early once `max|V|·L/σ < 1e-10`, emitting the
/// final state as the last frame.
pub fn run(
    initial: &CurveState,
    law: &FlowLaw,
    opts: &RunOptions,
    sink: &mut dyn FrameSink,
) -> Result<FlowDiagnostics, FlowError> {
    if !(opts.t_end >= 0.0 && opts.t_end.is_finite()) {
        return Err(FlowError::Degenerate(format!("t_end must be finite and non-negative, got {}", opts.t_end)));
    }
    if let Some((i, j)) = find_intersection(&initial.points, INTERSECTION_POINTS) {
        return Err(FlowError::SelfIntersecting(i, j));
    }
    let mut st = Stepper::new(initial, law)?;
    if opts.enforce_area {
        st.enforce_area(initial.area);
    }
    let t0 = st.time();
    let frames = opts.frames.max(1);
    let frame_time = |k: usize| t0 + opts.t_end * k as f64 / frames as f64;
    let sigma = law.constants().sigma;
    let mut diag = FlowDiagnostics { records: Vec::new(), frames: Vec::new(), equilibrium: false, rejected_steps: 0 };

    let mut rec = st.record(0, 0.0)?;
    diag.records.push(rec.clone());
    diag.frames.push(rec.clone());
    sink.frame(0, &st.state())?;
    let mut next_frame = 1;
    let mut step = 0;
    let at_rest = |r: &StepRecord| r.max_v * r.perimeter / sigma < EQUILIBRIUM_LEVEL;
    if at_rest(&rec) {
        diag.equilibrium = true;
        return Ok(diag);
    }
    while next_frame <= frames {
        if step >= opts.max_steps {
            let reason = format!("step budget {} exhausted", opts.max_steps);
            return Err(abort(&st, diag, reason));
        }
        let target = frame_time(next_frame);
        let dt = match st.advance(opts.time_step, target - st.time()) {
            Ok(dt) => dt,
            Err(e @ FlowError::StepTooLarge { .. }) => return Err(e),
            Err(e) => return Err(abort(&st, diag, e.to_string())),
        };
        step += 1;
        let state = st.state();
        if let Some((i, j)) = find_intersection(&state.points, INTERSECTION_POINTS) {
            let reason = format!("self-intersection between segments {i} and {j}");
            return Err(abort(&st, diag, reason));
        }
        rec = st.record(step, dt)?;
        diag.records.push(rec.clone());
        let rest = at_rest(&rec);
        if (st.time() - target).abs() <= 1e-12 * (1.0 + target.abs()) || rest {
            diag.frames.push(rec.clone());
            sink.frame(diag.frames.len() - 1, &state)?;
            next_frame += 1;
        }
        if rest {
            diag.equilibrium = true;
            break;
        }
    }
    diag.rejected_steps = st.rejected_steps();
    Ok(diag)
}

fn abort(st: &Stepper, mut diag: FlowDiagnostics, reason: String) -> FlowError {
    diag.rejected_steps = st.rejected_steps();
    FlowError::Aborted { t: st.time(), reason, diagnostics: Box::new(diag), state: Box::new(st.state()) }
}
