use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Longest accepted `fourier:` coefficient list.
pub const MAX_FOURIER_COEFFS: usize = 129;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid shape `{spec}`: {reason}")]
pub struct ShapeError {
    pub spec: String,
    pub reason: String,
}

/// Initial curves. `fourier:r0,a1,b1,a2,b2,…` is the polar graph
/// `r(θ) = r0 + Σ a_k cos kθ + b_k sin kθ`.
#[derive(Debug, Clone, PartialEq)]
pub enum ShapeSpec {
    Circle { r: f64 },
    Ellipse { a: f64, b: f64 },
    Fourier { coeffs: Vec<f64> },
}

impl FromStr for ShapeSpec {
    type Err = ShapeError;

    fn from_str(s: &str) -> Result<Self, ShapeError> {
        let err = |reason: &str| ShapeError { spec: s.to_string(), reason: reason.to_string() };
        let (kind, args) = s.split_once(':').ok_or_else(|| err("expected kind:args"))?;
        let nums = args
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|_| err("arguments must be numbers"))?;
        if nums.iter().any(|v| !v.is_finite()) {
            return Err(err("arguments must be finite"));
        }
        match (kind.trim(), nums.as_slice()) {
            ("circle", [r]) if *r > 0.0 => Ok(ShapeSpec::Circle { r: *r }),
            ("circle", [_]) => Err(err("radius must be positive")),
            ("ellipse", [a, b]) if *a > 0.0 && *b > 0.0 => Ok(ShapeSpec::Ellipse { a: *a, b: *b }),
            ("ellipse", [_, _]) => Err(err("semi-axes must be positive")),
            ("fourier", c) if c.len() > MAX_FOURIER_COEFFS => Err(err("too many coefficients")),
            ("fourier", c) if c[0] > 0.0 => Ok(ShapeSpec::Fourier { coeffs: c.to_vec() }),
            ("fourier", _) => Err(err("mean radius must be positive")),
            ("circle" | "ellipse", _) => Err(err("wrong number of arguments")),
            _ => Err(err("unknown kind; expected circle, ellipse or fourier")),
        }
    }
}

impl fmt::Display for ShapeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShapeSpec::Circle { r } => write!(f, "circle:{r}"),
            ShapeSpec::Ellipse { a, b } => write!(f, "ellipse:{a},{b}"),
            ShapeSpec::Fourier { coeffs } => {
                let parts: Vec<String> = coeffs.iter().map(f64::to_string).collect();
                write!(f, "fourier:{}", parts.join(","))
            }
        }
    }
}

impl ShapeSpec {
    /// `n` points at equispaced parameter `θ`, counterclockwise.
    pub fn sample(&self, n: usize) -> Vec<[f64; 2]> {
        (0..n)
            .map(|j| {
                let t = 2.0 * PI * j as f64 / n as f64;
                match self {
                    ShapeSpec::Circle { r } => [r * t.cos(), r * t.sin()],
                    ShapeSpec::Ellipse { a, b } => [a * t.cos(), b * t.sin()],
                    ShapeSpec::Fourier { coeffs } => {
                        let mut r = coeffs[0];
                        for (k, pair) in coeffs[1..].chunks(2).enumerate() {
                            let kt = (k + 1) as f64 * t;
                            r += pair[0] * kt.cos() + pair.get(1).copied().unwrap_or(0.0) * kt.sin();
                        }
                        [r * t.cos(), r * t.sin()]
                    }
                }
            })
            .collect()
    }
}
