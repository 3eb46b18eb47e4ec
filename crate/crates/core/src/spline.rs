//! Periodic tensor-product cubic B-spline interpolation on uniform grids of `[0,1)^d`.

use crate::error::{Error, Result};
use crate::torus::wrap_coord;

/// C² periodic interpolant through samples taken at the nodes `k / n` of every axis.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicSpline {
    dim: usize,
    n: usize,
    coeffs: Vec<f64>,
}

#[inline]
fn basis(t: f64) -> ([f64; 4], [f64; 4], [f64; 4]) {
    let s = 1.0 - t;
    let t2 = t * t;
    let t3 = t2 * t;
    (
        [
            s * s * s / 6.0,
            (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
            (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
            t3 / 6.0,
        ],
        [
            -0.5 * s * s,
            0.5 * (3.0 * t2 - 4.0 * t),
            0.5 * (-3.0 * t2 + 2.0 * t + 1.0),
            0.5 * t2,
        ],
        [s, 3.0 * t - 2.0, 1.0 - 3.0 * t, t],
    )
}

/// Solves `(c[k-1] + 4 c[k] + c[k+1]) / 6 = f[k]` cyclically, in place.
fn prefilter_line(line: &mut [f64], scratch: &mut Vec<f64>) {
    let n = line.len();
    scratch.clear();
    scratch.extend_from_slice(line);
    let scale = line.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut c: Vec<f64> = line.to_vec();
    // Jacobi contracts by 1/2 per sweep.
    for _ in 0..200 {
        let mut change = 0.0f64;
        let prev = c.clone();
        for k in 0..n {
            let l = prev[(k + n - 1) % n];
            let r = prev[(k + 1) % n];
            let v = (6.0 * scratch[k] - l - r) / 4.0;
            change = change.max((v - prev[k]).abs());
            c[k] = v;
        }
        if change <= 1e-16 * scale {
            break;
        }
    }
    line.copy_from_slice(&c);
}

impl PeriodicSpline {
    /// `samples` is row-major over `n^dim` nodes, last axis fastest.
    pub fn new(dim: usize, n: usize, samples: &[f64]) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::UnsupportedDimension { dim, reason: "grid tables support d <= 3" });
        }
        if n < 4 {
            return Err(Error::InvalidParameter(format!("grid size {n} < 4")));
        }
        let total = n.pow(dim as u32);
        if samples.len() != total {
            return Err(Error::DimensionMismatch { expected: total, got: samples.len() });
        }
        if let Some((index, &value)) = samples.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        let mut coeffs = samples.to_vec();
        let mut scratch = Vec::with_capacity(n);
        let mut line = vec![0.0; n];
        for axis in 0..dim {
            let stride = n.pow((dim - 1 - axis) as u32);
            for base in 0..total {
                // Visit each line once: the axis digit of its first element is zero.
                if (base / stride) % n != 0 {
                    continue;
                }
                for k in 0..n {
                    line[k] = coeffs[base + k * stride];
                }
                prefilter_line(&mut line, &mut scratch);
                for k in 0..n {
                    coeffs[base + k * stride] = line[k];
                }
            }
        }
        Ok(Self { dim, n, coeffs })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid_size(&self) -> usize {
        self.n
    }

    /// Value, gradient and row-major Hessian at `x`.
    pub fn eval_full(&self, x: &[f64], grad: Option<&mut [f64]>, hess: Option<&mut [f64]>) -> f64 {
        let d = self.dim;
        let n = self.n;
        let nf = n as f64;
        let mut idx = [[0usize; 4]; 3];
        let mut w = [[0.0; 4]; 3];
        let mut dw = [[0.0; 4]; 3];
        let mut ddw = [[0.0; 4]; 3];
        for a in 0..d {
            let u = wrap_coord(x[a]) * nf;
            let i = (u.floor() as usize).min(n - 1);
            let t = u - i as f64;
            let (b0, b1, b2) = basis(t);
            w[a] = b0;
            dw[a] = b1.map(|v| v * nf);
            ddw[a] = b2.map(|v| v * nf * nf);
            for (m, slot) in idx[a].iter_mut().enumerate() {
                *slot = (i + n + m - 1) % n;
            }
        }
        let want_grad = grad.is_some();
        let want_hess = hess.is_some();
        let mut value = 0.0;
        let mut g = [0.0; 3];
        let mut h = [0.0; 9];
        let combos = 4usize.pow(d as u32);
        for combo in 0..combos {
            let mut digits = [0usize; 3];
            let mut rem = combo;
            let mut flat = 0usize;
            for a in (0..d).rev() {
                digits[a] = rem % 4;
                rem /= 4;
            }
            for a in 0..d {
                flat = flat * n + idx[a][digits[a]];
            }
            let c = self.coeffs[flat];
            let mut prod = c;
            for a in 0..d {
                prod *= w[a][digits[a]];
            }
            value += prod;
            if want_grad || want_hess {
                for a in 0..d {
                    let mut p = c;
                    for b in 0..d {
                        p *= if a == b { dw[b][digits[b]] } else { w[b][digits[b]] };
                    }
                    g[a] += p;
                }
            }
            if want_hess {
                for a in 0..d {
                    for b in a..d {
                        let mut p = c;
                        for e in 0..d {
                            let m = digits[e];
                            p *= if a == b && e == a {
                                ddw[e][m]
                            } else if e == a || e == b {
                                dw[e][m]
                            } else {
                                w[e][m]
                            };
                        }
                        h[a * d + b] += p;
                    }
                }
            }
        }
        if let Some(out) = grad {
            out[..d].copy_from_slice(&g[..d]);
        }
        if let Some(out) = hess {
            for a in 0..d {
                for b in a..d {
                    out[a * d + b] = h[a * d + b];
                    out[b * d + a] = h[a * d + b];
                }
            }
        }
        value
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.eval_full(x, None, None)
    }
}
