//! Symmetric tridiagonal matrices and their `LDLᵀ` factorisation.

#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiag {
    pub diag: Vec<f64>,
    /// `off[j]` couples rows `j` and `j + 1`.
    pub off: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Ldl {
    d: Vec<f64>,
    l: Vec<f64>,
}

impl SymTridiag {
    pub fn new(diag: Vec<f64>, off: Vec<f64>) -> Self {
        assert_eq!(off.len() + 1, diag.len(), "off-diagonal length mismatch");
        SymTridiag { diag, off }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|j| {
                let mut s = self.diag[j] * x[j];
                if j > 0 {
                    s += self.off[j - 1] * x[j - 1];
                }
                if j + 1 < n {
                    s += self.off[j] * x[j + 1];
                }
                s
            })
            .collect()
    }

    pub fn norm1(&self) -> f64 {
        let n = self.len();
        (0..n)
            .map(|j| {
                let mut s = self.diag[j].abs();
                if j > 0 {
                    s += self.off[j - 1].abs();
                }
                if j + 1 < n {
                    s += self.off[j].abs();
                }
                s
            })
            .fold(0.0, f64::max)
    }

    /// `LDLᵀ` without pivoting; `None` if a pivot is not strictly positive.
    pub fn factor_spd(&self) -> Option<Ldl> {
        let n = self.len();
        let mut d = Vec::with_capacity(n);
        let mut l = Vec::with_capacity(n.saturating_sub(1));
        d.push(self.diag[0]);
        for j in 1..n {
            let prev = d[j - 1];
            if !(prev > 0.0) {
                return None;
            }
            let lj = self.off[j - 1] / prev;
            l.push(lj);
            d.push(self.diag[j] - lj * self.off[j - 1]);
        }
        if !(d[n - 1] > 0.0) {
            return None;
        }
        Some(Ldl { d, l })
    }
}

/// `LDLᵀ` of `L(s) + E`, where `L(s)` is the path Laplacian with edge
/// weights `s` and `E` a symmetric tridiagonal perturbation. The pivots are
/// tracked as `d_j = s_j + t_j`, so the cancellation between the Laplacian
/// diagonal and its off-diagonals never happens in floating point.
pub fn factor_laplacian_plus(edges: &[f64], extra: &SymTridiag) -> Option<Ldl> {
    let n = extra.len();
    assert_eq!(edges.len() + 1, n, "edge count mismatch");
    let mut d = Vec::with_capacity(n);
    let mut l = Vec::with_capacity(n - 1);
    let mut t = extra.diag[0];
    let edge = |j: usize| if j < n - 1 { edges[j] } else { 0.0 };
    d.push(edge(0) + t);
    for j in 1..n {
        let s = edges[j - 1];
        let mu = extra.off[j - 1];
        let prev = s + t;
        if !(prev > 0.0) {
            return None;
        }
        l.push((mu - s) / prev);
        t = extra.diag[j] + (s * t + 2.0 * s * mu - mu * mu) / prev;
        d.push(edge(j) + t);
    }
    if !(d[n - 1] > 0.0) {
        return None;
    }
    Some(Ldl { d, l })
}

impl Ldl {
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.d.len();
        for j in 1..n {
            x[j] -= self.l[j - 1] * x[j - 1];
        }
        for (v, d) in x.iter_mut().zip(&self.d) {
            *v /= d;
        }
        for j in (0..n - 1).rev() {
            x[j] -= self.l[j] * x[j + 1];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Hager's estimate of `‖A⁻¹‖₁` (exact for most small cases, a lower bound
    /// in general).
    pub fn inverse_norm1_estimate(&self) -> f64 {
        self.inverse_norm1_estimate_scaled(&vec![1.0; self.d.len()])
    }

    /// Hager's estimate of `‖S A⁻¹ S‖₁` with `S = diag(scale)`.
    pub fn inverse_norm1_estimate_scaled(&self, scale: &[f64]) -> f64 {
        let n = self.d.len();
        let solve = |x: &[f64]| {
            let mut y: Vec<f64> = x.iter().zip(scale).map(|(a, s)| a * s).collect();
            self.solve_in_place(&mut y);
            y.iter_mut().zip(scale).for_each(|(a, s)| *a *= s);
            y
        };
        let mut x = vec![1.0 / n as f64; n];
        let mut est = 0.0;
        for _ in 0..5 {
            let y = solve(&x);
            let norm: f64 = y.iter().map(|v| v.abs()).sum();
            if norm <= est {
                break;
            }
            est = norm;
            let xi: Vec<f64> = y.iter().map(|&v| if v >= 0.0 { 1.0 } else { -1.0 }).collect();
            let z = solve(&xi);
            let (jmax, zmax) = z
                .iter()
                .enumerate()
                .map(|(j, v)| (j, v.abs()))
                .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
            let ztx: f64 = z.iter().zip(&x).map(|(a, b)| a * b).sum();
            if zmax <= ztx {
                break;
            }
            x.iter_mut().for_each(|v| *v = 0.0);
            x[jmax] = 1.0;
        }
        est
    }
}
