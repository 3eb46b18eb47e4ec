//! Discrete-time construction: block toral automorphisms, the component-wise transport map of a
//! separable Gibbs measure, the conjugated μ-preserving map and the hybrid Langevin + map chain.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gibbs::{GibbsMeasure, MarginalCdf};
use crate::metrics::{histogram_2d, observable_moments, one_sample_floor, tv, CorrelationSeries, Observable};
use crate::potential::Potential;
use crate::rng;
use crate::sampler::{advance, DtPolicy, SdeConfig};
use crate::torus::{wrap_coord, wrap_in_place};
use crate::velocity::ZeroField;

const HYBRID_TAG: u64 = 0x4859_4252;

const CAT: [[i64; 2]; 2] = [[2, 1], [1, 1]];
const BLOCK3: [[i64; 3]; 3] = [[2, -1, 0], [0, 1, 1], [1, 0, 1]];

/// `x ↦ Mx mod 1` for an integer matrix with determinant one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToralAutomorphism {
    dim: usize,
    /// Row-major.
    matrix: Vec<i64>,
}

impl ToralAutomorphism {
    /// Block-diagonal matrix of `[[2,1],[1,1]]` blocks, with one 3×3 block when `d` is odd.
    pub fn blocks(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::UnsupportedDimension { dim, reason: "toral automorphisms need d >= 2" });
        }
        let mut m = vec![0i64; dim * dim];
        let mut at = 0;
        if dim % 2 == 1 {
            for r in 0..3 {
                for c in 0..3 {
                    m[r * dim + c] = BLOCK3[r][c];
                }
            }
            at = 3;
        }
        while at < dim {
            for r in 0..2 {
                for c in 0..2 {
                    m[(at + r) * dim + at + c] = CAT[r][c];
                }
            }
            at += 2;
        }
        Self::from_matrix(dim, m)
    }

    pub fn from_matrix(dim: usize, matrix: Vec<i64>) -> Result<Self> {
        if matrix.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, got: matrix.len() });
        }
        let det = int_det(dim, &matrix);
        if det != 1 {
            return Err(Error::InvalidParameter(format!("determinant {det} != 1")));
        }
        Ok(Self { dim, matrix })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &[i64] {
        &self.matrix
    }

    pub fn determinant(&self) -> i128 {
        int_det(self.dim, &self.matrix)
    }

    pub fn apply(&self, x: &mut [f64]) {
        let d = self.dim;
        let mut y = [0.0; 16];
        for r in 0..d {
            y[r] = (0..d).map(|c| self.matrix[r * d + c] as f64 * x[c]).sum();
        }
        for r in 0..d {
            x[r] = wrap_coord(y[r]);
        }
    }

    /// `Mᵀ k`: the frequency of `e^{2πik·x}∘Ψ`.
    pub fn dual(&self, k: &[i128]) -> Vec<i128> {
        let d = self.dim;
        (0..d).map(|c| (0..d).map(|r| self.matrix[r * d + c] as i128 * k[r]).sum()).collect()
    }

    /// Spectral radius of each diagonal block.
    pub fn block_radii(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut at = 0;
        if self.dim % 2 == 1 {
            let m = nalgebra::Matrix3::from_fn(|r, c| self.matrix[r * self.dim + c] as f64);
            out.push(m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max));
            at = 3;
        }
        while at < self.dim {
            let m = nalgebra::Matrix2::from_fn(|r, c| self.matrix[(at + r) * self.dim + at + c] as f64);
            out.push(m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max));
            at += 2;
        }
        out
    }
}

/// Exact integer determinant by Bareiss elimination.
fn int_det(d: usize, m: &[i64]) -> i128 {
    let mut a: Vec<i128> = m.iter().map(|v| *v as i128).collect();
    let mut sign = 1;
    let mut prev = 1i128;
    for k in 0..d {
        if a[k * d + k] == 0 {
            let Some(p) = (k + 1..d).find(|&r| a[r * d + k] != 0) else {
                return 0;
            };
            for c in 0..d {
                a.swap(k * d + c, p * d + c);
            }
            sign = -sign;
        }
        for r in k + 1..d {
            for c in k + 1..d {
                a[r * d + c] = (a[r * d + c] * a[k * d + k] - a[r * d + k] * a[k * d + c]) / prev;
            }
        }
        prev = a[k * d + k];
    }
    sign * a[d * d - 1]
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutomorphismCorrelation {
    /// `⟨e_k∘Ψⁿ, e_l⟩` over Lebesgue measure; `1` exactly when `(Mᵀ)ⁿk = l`.
    pub corr: Vec<f64>,
    /// `|(Mᵀ)ⁿ k|`.
    pub norms: Vec<f64>,
}

impl AutomorphismCorrelation {
    /// `|M^{n+1}k| / |Mⁿk|` at the last available `n`.
    pub fn growth_ratio(&self) -> f64 {
        let n = self.norms.len();
        self.norms[n - 1] / self.norms[n - 2]
    }
}

/// Exact Fourier-mode correlations of a toral automorphism up to `n_max ≤ 80`.
pub fn automorphism_correlation(m: &ToralAutomorphism, k: &[i64], l: &[i64], n_max: usize) -> Result<AutomorphismCorrelation> {
    if k.iter().all(|v| *v == 0) {
        return Err(Error::InvalidParameter("mode k = 0 is not mean-zero".into()));
    }
    if k.len() != m.dim || l.len() != m.dim {
        return Err(Error::DimensionMismatch { expected: m.dim, got: k.len() });
    }
    if n_max > 80 {
        return Err(Error::InvalidParameter("n_max > 80 overflows exact integer frequencies".into()));
    }
    let l: Vec<i128> = l.iter().map(|v| *v as i128).collect();
    let mut cur: Vec<i128> = k.iter().map(|v| *v as i128).collect();
    let mut corr = Vec::with_capacity(n_max + 1);
    let mut norms = Vec::with_capacity(n_max + 1);
    for _ in 0..=n_max {
        corr.push(if cur == l { 1.0 } else { 0.0 });
        norms.push(cur.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt());
        cur = m.dual(&cur);
    }
    Ok(AutomorphismCorrelation { corr, norms })
}

/// Monte-Carlo `(1/N) Σ f(x) g(Φⁿx)` with standard errors.
pub fn mc_map_correlation<F: Fn(&mut [f64]) + Sync>(
    map: F,
    f: &Observable,
    g: &Observable,
    samples: &[Vec<f64>],
    n_max: u64,
) -> CorrelationSeries {
    let m = n_max as usize + 1;
    let rows: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|x0| {
            let mut x = x0.clone();
            let fx = f.eval(&x);
            let mut out = Vec::with_capacity(m);
            out.push(fx * g.eval(&x));
            for _ in 0..n_max {
                map(&mut x);
                out.push(fx * g.eval(&x));
            }
            out
        })
        .collect();
    summarize(&rows, m)
}

fn summarize(rows: &[Vec<f64>], m: usize) -> CorrelationSeries {
    let mut s1 = vec![0.0; m];
    let mut s2 = vec![0.0; m];
    for r in rows {
        for k in 0..m {
            s1[k] += r[k];
            s2[k] += r[k] * r[k];
        }
    }
    let n = rows.len() as f64;
    let corr: Vec<f64> = s1.iter().map(|s| s / n).collect();
    let floor = s2.iter().zip(&corr).map(|(s, c)| ((s / n - c * c).max(0.0) / n).sqrt()).collect();
    CorrelationSeries { n: (0..m as u64).collect(), corr, floor }
}

/// Component-wise CDF map `T` sending a separable Gibbs measure to Lebesgue measure.
#[derive(Debug, Clone)]
pub struct TransportMap {
    dim: usize,
    /// `None` for the uniform measure, where `T` is the identity.
    cdf: Option<Arc<MarginalCdf>>,
}

impl TransportMap {
    pub fn new(measure: &GibbsMeasure) -> Result<Self> {
        match measure.potential() {
            Potential::Zero { dim } => Ok(Self { dim: *dim, cdf: None }),
            Potential::Separable { dim, profile } => {
                let cdf = match measure.marginal() {
                    Some(c) => Arc::new(c.clone()),
                    None => Arc::new(MarginalCdf::new(profile, measure.kappa(), 1 << 14)?),
                };
                Ok(Self { dim: *dim, cdf: Some(cdf) })
            }
            other => Err(Error::UnsupportedPotential(format!(
                "transport maps need a separable potential, got {}",
                other.kind().as_str()
            ))),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_identity(&self) -> bool {
        self.cdf.is_none()
    }

    pub fn forward(&self, x: &mut [f64]) {
        if let Some(c) = &self.cdf {
            x.iter_mut().for_each(|a| *a = wrap_coord(c.cdf(*a)));
        }
    }

    pub fn inverse(&self, x: &mut [f64]) {
        if let Some(c) = &self.cdf {
            x.iter_mut().for_each(|a| *a = c.inverse(*a));
        }
    }

    pub fn marginal(&self) -> Option<&MarginalCdf> {
        self.cdf.as_deref()
    }
}

/// `Φ = T⁻¹∘Ψ∘T`, which preserves `μ`.
#[derive(Debug, Clone)]
pub struct ConjugatedMap {
    pub transport: TransportMap,
    pub automorphism: ToralAutomorphism,
}

impl ConjugatedMap {
    pub fn new(transport: TransportMap, automorphism: ToralAutomorphism) -> Result<Self> {
        if transport.dim() != automorphism.dim() {
            return Err(Error::DimensionMismatch { expected: transport.dim(), got: automorphism.dim() });
        }
        Ok(Self { transport, automorphism })
    }

    pub fn apply(&self, x: &mut [f64]) {
        self.transport.forward(x);
        self.automorphism.apply(x);
        self.transport.inverse(x);
    }
}

/// `Y_{n+1} = Φ(Z_{1/A})`: plain Langevin for time `1/A` started at `Yₙ`, then the map.
#[derive(Debug, Clone)]
pub struct HybridChain {
    pub a: f64,
    /// `None` disables the map.
    pub map: Option<ConjugatedMap>,
    pub measure: GibbsMeasure,
    pub dt: DtPolicy,
}

impl HybridChain {
    pub fn new(a: f64, map: Option<ConjugatedMap>, measure: GibbsMeasure, dt: DtPolicy) -> Result<Self> {
        if !(a > 0.0) {
            return Err(Error::InvalidParameter("burst rate A must be positive".into()));
        }
        Ok(Self { a, map, measure, dt })
    }

    fn config(&self, seed: u64) -> SdeConfig {
        SdeConfig { kappa: self.measure.kappa(), a: 0.0, dt: self.dt, t_end: 1.0 / self.a, seed }
    }

    /// Runs `n` chain steps from each of `points`; returns positions after every step.
    pub fn run(&self, points: &[Vec<f64>], n: u64, seed: u64) -> Vec<Vec<Vec<f64>>> {
        let cfg = self.config(seed);
        let zero = ZeroField { dim: self.measure.dim() };
        let base = rng::derive_seed(seed, HYBRID_TAG);
        points
            .par_iter()
            .enumerate()
            .map(|(k, x0)| {
                let mut r = rng::stream(base, k as u64);
                let mut x = x0.clone();
                let mut out = Vec::with_capacity(n as usize);
                for _ in 0..n {
                    advance(&mut x, 0.0, 1.0 / self.a, &cfg, &zero, self.measure.potential(), &mut r);
                    if let Some(m) = &self.map {
                        m.apply(&mut x);
                    }
                    wrap_in_place(&mut x);
                    out.push(x.clone());
                }
                out
            })
            .collect()
    }

    /// Correlation `E f(Y₀) g(Yₙ)` for `Y₀ ~ μ`, with `f`, `g` normalized as in the continuous case.
    pub fn correlation(&self, f: &Observable, g: &Observable, n_max: u64, samples: usize, seed: u64) -> Result<CorrelationSeries> {
        let qn = if self.measure.dim() == 2 { 256 } else { 48 };
        let (mf, _, hf) = observable_moments(&self.measure, f, qn)?;
        let (mg, _, hg) = observable_moments(&self.measure, g, qn)?;
        let (sf, sg) = (1.0 / hf.sqrt(), 1.0 / hg.sqrt());
        let x0: Vec<Vec<f64>> = self.measure.sample(samples, seed)?.into_iter().map(|p| p.into_coords()).collect();
        let paths = self.run(&x0, n_max, seed);
        let m = n_max as usize + 1;
        let rows: Vec<Vec<f64>> = x0
            .iter()
            .zip(&paths)
            .map(|(x, path)| {
                let fx = (f.eval(x) - mf) * sf;
                std::iter::once(fx * (g.eval(x) - mg) * sg).chain(path.iter().map(|y| fx * (g.eval(y) - mg) * sg)).collect()
            })
            .collect();
        Ok(summarize(&rows, m))
    }

    /// First step at which every start's floor-corrected histogram TV is at most ½.
    pub fn mixing_steps(&self, starts: &[Vec<f64>], n_traj: usize, bins: usize, n_max: u64, seed: u64) -> Result<Option<u64>> {
        if self.measure.dim() != 2 {
            return Err(Error::UnsupportedDimension { dim: self.measure.dim(), reason: "histogram diagnostics are 2-D" });
        }
        let masses = self.measure.bin_masses_2d(bins)?;
        let floor = one_sample_floor(&masses, n_traj, 200, seed)?;
        let mut worst = vec![0.0f64; n_max as usize];
        for (s, x) in starts.iter().enumerate() {
            let paths = self.run(&vec![x.clone(); n_traj], n_max, rng::derive_seed(seed, s as u64));
            for (n, w) in worst.iter_mut().enumerate() {
                let h = histogram_2d(paths.iter().map(|p| p[n].as_slice()), bins);
                *w = w.max((tv(&h, &masses) - floor).max(0.0));
            }
        }
        Ok(worst.iter().position(|w| *w <= 0.5).map(|n| n as u64 + 1))
    }
}
