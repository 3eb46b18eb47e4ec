//! The Gibbs measure `μ ∝ e^{-U/κ}`: normalization, oscillation, exact sampling.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::potential::{Potential, Profile1d};
use crate::rng;
use crate::torus::{torus_distance, TorusPoint};

pub const DEFAULT_GRID_N: usize = 512;
const SAMPLE_CHUNK: usize = 1024;

/// Normalized Gibbs measure. Immutable once built.
#[derive(Debug, Clone)]
pub struct GibbsMeasure {
    potential: Arc<Potential>,
    kappa: f64,
    log_z: f64,
    u_min: f64,
    u_max: f64,
    grid_n: usize,
    marginal: Option<Arc<MarginalCdf>>,
}

impl GibbsMeasure {
    /// Periodic rectangle rule for `Z` on `grid_n^d` nodes, plus a Newton polish of the
    /// grid extrema for `‖U‖_osc`.
    pub fn normalize(potential: impl Into<Arc<Potential>>, kappa: f64, grid_n: usize) -> Result<Self> {
        let potential = potential.into();
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidParameter(format!("kappa must be positive, got {kappa}")));
        }
        let d = potential.dim();
        if d > 3 {
            return Err(Error::UnsupportedDimension { dim: d, reason: "tensor quadrature needs d <= 3" });
        }
        if grid_n < 64 {
            return Err(Error::InvalidParameter(format!("grid_n = {grid_n} < 64")));
        }
        let marginal = match &*potential {
            Potential::Separable { profile, .. } => Some(Arc::new(MarginalCdf::new(profile, kappa, 1 << 14)?)),
            _ => None,
        };
        if potential.is_zero() {
            return Ok(Self { potential, kappa, log_z: 0.0, u_min: 0.0, u_max: 0.0, grid_n, marginal });
        }
        let values = grid_values(&potential, grid_n);
        let (imin, imax) = argminmax(&values);
        let u_min_grid = values[imin];
        let u_max_grid = values[imax];
        let sum: f64 = values.par_iter().map(|&u| (-(u - u_min_grid) / kappa).exp()).sum();
        let log_z = -u_min_grid / kappa + (sum / values.len() as f64).ln();
        let xmin = node_point(imin, grid_n, d);
        let xmax = node_point(imax, grid_n, d);
        let u_min = polish(&potential, &xmin, -1.0).min(u_min_grid);
        let u_max = polish(&potential, &xmax, 1.0).max(u_max_grid);
        Ok(Self { potential, kappa, log_z, u_min, u_max, grid_n, marginal })
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn potential_arc(&self) -> Arc<Potential> {
        Arc::clone(&self.potential)
    }

    pub fn dim(&self) -> usize {
        self.potential.dim()
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn z(&self) -> f64 {
        self.log_z.exp()
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    pub fn u_min(&self) -> f64 {
        self.u_min
    }

    pub fn u_max(&self) -> f64 {
        self.u_max
    }

    /// `‖U‖_osc = max U − min U`.
    pub fn osc(&self) -> f64 {
        self.u_max - self.u_min
    }

    pub fn grid_n(&self) -> usize {
        self.grid_n
    }

    /// `ρ∞(x) = e^{-U(x)/κ} / Z`.
    pub fn density(&self, x: &[f64]) -> f64 {
        (-self.potential.value(x) / self.kappa - self.log_z).exp()
    }

    /// Expected rejection-sampler acceptance `Z e^{min U/κ}`.
    pub fn acceptance_rate(&self) -> f64 {
        (self.log_z + self.u_min / self.kappa).exp()
    }

    pub fn marginal(&self) -> Option<&MarginalCdf> {
        self.marginal.as_deref()
    }

    /// `n` exact samples. Zero potentials sample uniformly, separable ones by per-coordinate
    /// inverse CDF, everything else by rejection from the uniform law.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<TorusPoint>> {
        if self.marginal.is_none() && !self.potential.is_zero() {
            let rate = self.acceptance_rate();
            if rate < 1e-6 {
                return Err(Error::LowAcceptance { rate });
            }
        }
        let chunks = n.div_ceil(SAMPLE_CHUNK);
        let out: Vec<Vec<TorusPoint>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut r = rng::stream(seed, c as u64);
                let len = SAMPLE_CHUNK.min(n - c * SAMPLE_CHUNK);
                (0..len).map(|_| self.draw(&mut r)).collect()
            })
            .collect();
        Ok(out.into_iter().flatten().collect())
    }

    /// Rejection sampling regardless of potential structure.
    pub fn sample_rejection<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<TorusPoint>> {
        let rate = self.acceptance_rate();
        if rate < 1e-6 {
            return Err(Error::LowAcceptance { rate });
        }
        Ok((0..n).map(|_| self.draw_rejection(rng)).collect())
    }

    /// One exact draw using the default method for this potential.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> TorusPoint {
        let d = self.dim();
        if self.potential.is_zero() {
            return TorusPoint::from_wrapped((0..d).map(|_| rng.random::<f64>()).collect());
        }
        if let Some(m) = &self.marginal {
            return TorusPoint::from_wrapped((0..d).map(|_| m.inverse(rng.random::<f64>())).collect());
        }
        self.draw_rejection(rng)
    }

    fn draw_rejection<R: Rng + ?Sized>(&self, rng: &mut R) -> TorusPoint {
        let d = self.dim();
        let mut x = vec![0.0; d];
        loop {
            for c in x.iter_mut() {
                *c = rng.random::<f64>();
            }
            let accept = (-(self.potential.value(&x) - self.u_min) / self.kappa).exp();
            if rng.random::<f64>() < accept {
                return TorusPoint::from_wrapped(x);
            }
        }
    }

    /// `μ`-mass of each cell of a `bins^2` histogram, by 8-point Gauss–Legendre per axis
    /// inside every bin. Row-major with `x₁` the slow index.
    pub fn bin_masses_2d(&self, bins: usize) -> Result<Vec<f64>> {
        if self.dim() != 2 {
            return Err(Error::UnsupportedDimension { dim: self.dim(), reason: "2-D histograms only" });
        }
        let (nodes, weights) = gauss_legendre_8();
        let w = 1.0 / bins as f64;
        let masses: Vec<f64> = (0..bins * bins)
            .into_par_iter()
            .map(|cell| {
                let (bi, bj) = (cell / bins, cell % bins);
                let mut acc = 0.0;
                for (a, wa) in nodes.iter().zip(&weights) {
                    for (b, wb) in nodes.iter().zip(&weights) {
                        let x = [(bi as f64 + 0.5 + 0.5 * a) * w, (bj as f64 + 0.5 + 0.5 * b) * w];
                        acc += wa * wb * self.density(&x);
                    }
                }
                acc * 0.25 * w * w
            })
            .collect();
        let total: f64 = masses.iter().sum();
        Ok(masses.into_iter().map(|m| m / total).collect())
    }

    /// `μ`-mass of the Voronoi cell (torus metric) of each point in `centers`.
    pub fn voronoi_masses(&self, centers: &[Vec<f64>], grid_n: usize) -> Result<Vec<f64>> {
        if centers.is_empty() {
            return Err(Error::Empty("no basin centers"));
        }
        let d = self.dim();
        let total = grid_n.pow(d as u32);
        let masses = (0..total)
            .into_par_iter()
            .fold(
                || vec![0.0; centers.len()],
                |mut acc, k| {
                    let x = cell_center(k, grid_n, d);
                    acc[nearest(&x, centers)] += self.density(&x);
                    acc
                },
            )
            .reduce(|| vec![0.0; centers.len()], |a, b| a.iter().zip(&b).map(|(x, y)| x + y).collect());
        let sum: f64 = masses.iter().sum();
        Ok(masses.into_iter().map(|m| m / sum).collect())
    }
}

/// Index of the center nearest to `x` in the torus metric.
pub fn nearest(x: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, c) in centers.iter().enumerate() {
        let dist = torus_distance(x, c);
        if dist < best_d {
            best_d = dist;
            best = k;
        }
    }
    best
}

fn node_point(k: usize, n: usize, d: usize) -> Vec<f64> {
    let mut x = vec![0.0; d];
    let mut rem = k;
    for a in (0..d).rev() {
        x[a] = (rem % n) as f64 / n as f64;
        rem /= n;
    }
    x
}

fn cell_center(k: usize, n: usize, d: usize) -> Vec<f64> {
    let mut x = node_point(k, n, d);
    for c in x.iter_mut() {
        *c += 0.5 / n as f64;
    }
    x
}

/// `U` at the nodes `k/n`, row-major.
pub fn grid_values(u: &Potential, n: usize) -> Vec<f64> {
    let d = u.dim();
    (0..n.pow(d as u32)).into_par_iter().map(|k| u.value(&node_point(k, n, d))).collect()
}

fn argminmax(v: &[f64]) -> (usize, usize) {
    let mut imin = 0;
    let mut imax = 0;
    for (k, &x) in v.iter().enumerate() {
        if x < v[imin] {
            imin = k;
        }
        if x > v[imax] {
            imax = k;
        }
    }
    (imin, imax)
}

/// Local Newton refinement toward an extremum. `sign = 1` climbs, `-1` descends.
/// Falls back to a backtracked gradient step when the Hessian has the wrong curvature.
fn polish(u: &Potential, start: &[f64], sign: f64) -> f64 {
    let d = u.dim();
    let mut x = start.to_vec();
    let mut g = vec![0.0; d];
    let mut h = vec![0.0; d * d];
    let mut best = sign * u.value(&x);
    for _ in 0..50 {
        u.gradient(&x, &mut g);
        u.hessian(&x, &mut h);
        let gs: Vec<f64> = g.iter().map(|v| sign * v).collect();
        let hs = nalgebra::DMatrix::from_row_slice(d, d, &h.iter().map(|v| -sign * v).collect::<Vec<_>>());
        let step = match hs.clone().cholesky() {
            Some(ch) => ch.solve(&nalgebra::DVector::from_vec(gs.clone())).as_slice().to_vec(),
            None => gs.clone(),
        };
        let mut t = 1.0;
        let mut improved = false;
        while t > 1e-12 {
            let trial: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a + t * s).collect();
            let f = sign * u.value(&trial);
            if f >= best {
                improved = f > best;
                best = f;
                x = trial;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    sign * best
}

fn gauss_legendre_8() -> ([f64; 8], [f64; 8]) {
    let a = [0.183_434_642_495_649_8, 0.525_532_409_916_329_0, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3];
    let w = [0.362_683_783_378_362_0, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];
    (
        [-a[3], -a[2], -a[1], -a[0], a[0], a[1], a[2], a[3]],
        [w[3], w[2], w[1], w[0], w[0], w[1], w[2], w[3]],
    )
}

/// CDF of the one-dimensional density `e^{-Ũ/κ}/Z̃` on `[0,1]`, tabulated on a uniform grid
/// and interpolated by cubic Hermite segments whose slopes are the exact density.
#[derive(Debug, Clone)]
pub struct MarginalCdf {
    n: usize,
    cdf: Vec<f64>,
    pdf: Vec<f64>,
    profile: Profile1d,
    kappa: f64,
    shift: f64,
    log_z: f64,
}

impl MarginalCdf {
    pub fn new(profile: &Profile1d, kappa: f64, n: usize) -> Result<Self> {
        if n < 16 {
            return Err(Error::InvalidParameter(format!("table size {n} < 16")));
        }
        let h = 1.0 / n as f64;
        let raw: Vec<f64> = (0..=n).map(|k| profile.eval(k as f64 * h).0).collect();
        let shift = raw.iter().cloned().fold(f64::INFINITY, f64::min);
        let dens = |y: f64| (-(profile.eval(y).0 - shift) / kappa).exp();
        let mut cdf = vec![0.0; n + 1];
        let (nodes, weights) = gauss_legendre_8();
        for k in 0..n {
            let a = k as f64 * h;
            let mut acc = 0.0;
            for (t, w) in nodes.iter().zip(&weights) {
                acc += w * dens(a + 0.5 * h * (1.0 + t));
            }
            cdf[k + 1] = cdf[k] + 0.5 * h * acc;
        }
        let total = cdf[n];
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Degenerate("marginal density does not normalize".into()));
        }
        for c in cdf.iter_mut() {
            *c /= total;
        }
        let pdf: Vec<f64> = (0..=n).map(|k| dens(k as f64 * h) / total).collect();
        for w in cdf.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Degenerate("marginal CDF table is not strictly increasing".into()));
            }
        }
        Ok(Self { n, cdf, pdf, profile: profile.clone(), kappa, shift, log_z: total.ln() - shift / kappa })
    }

    pub fn table_len(&self) -> usize {
        self.n + 1
    }

    pub fn table(&self) -> &[f64] {
        &self.cdf
    }

    /// Exact marginal density `e^{-Ũ(y)/κ}/Z̃`.
    pub fn pdf(&self, y: f64) -> f64 {
        (-self.profile.eval(y).0 / self.kappa - self.log_z).exp()
    }

    /// `F(y)` for `y ∈ [0,1]`; clamps outside.
    pub fn cdf(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        if y >= 1.0 {
            return 1.0;
        }
        let h = 1.0 / self.n as f64;
        let u = y * self.n as f64;
        let k = (u.floor() as usize).min(self.n - 1);
        let t = u - k as f64;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let v = h00 * self.cdf[k] + h10 * h * self.pdf[k] + h01 * self.cdf[k + 1] + h11 * h * self.pdf[k + 1];
        v.clamp(self.cdf[k], self.cdf[k + 1])
    }

    /// `F^{-1}(p)` by bisection on the table bracket, to `1e-13` in `y`.
    pub fn inverse(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return 0.0;
        }
        if p >= 1.0 {
            return crate::torus::wrap_coord(1.0 - f64::EPSILON);
        }
        let k = match self.cdf.binary_search_by(|c| c.partial_cmp(&p).unwrap()) {
            Ok(k) => return k as f64 / self.n as f64,
            Err(k) => k - 1,
        };
        let h = 1.0 / self.n as f64;
        let mut lo = k as f64 * h;
        let mut hi = lo + h;
        while hi - lo > 1e-13 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        crate::torus::wrap_coord(0.5 * (lo + hi))
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }
}
