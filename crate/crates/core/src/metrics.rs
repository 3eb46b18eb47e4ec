//! Empirical mixing diagnostics: correlation decay with an exponential fit, histogram
//! total-variation distances with noise floors, and a Monte-Carlo mixing time.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::flows::{integrate, FlowOptions};
use crate::gibbs::GibbsMeasure;
use crate::potential::Potential;
use crate::rng;
use crate::sampler::{Ensemble, SdeConfig, Snapshot};
use crate::torus::wrap_in_place;
use crate::velocity::VelocityField;

const CORR_TAG: u64 = 0x434f_5252;
const FLOOR_TAG: u64 = 0x464c_4f4f_52;

/// Scalar test function on the torus.
#[derive(Clone)]
pub struct Observable {
    pub label: String,
    f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for Observable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Observable({})", self.label)
    }
}

impl Observable {
    pub fn new(label: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { label: label.into(), f: Arc::new(f) }
    }

    /// `sin(2π k·x)`.
    pub fn sin(k: &[i64]) -> Self {
        let k = k.to_vec();
        Self::new(format!("sin{k:?}"), move |x| (2.0 * std::f64::consts::PI * dot(&k, x)).sin())
    }

    /// `cos(2π k·x)`.
    pub fn cos(k: &[i64]) -> Self {
        let k = k.to_vec();
        Self::new(format!("cos{k:?}"), move |x| (2.0 * std::f64::consts::PI * dot(&k, x)).cos())
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

fn dot(k: &[i64], x: &[f64]) -> f64 {
    k.iter().zip(x).map(|(a, b)| *a as f64 * b).sum()
}

/// `(μ-mean, ‖f‖²_{L²(μ)} of f − mean, ‖∇f‖²_{L²(μ)})` by the rectangle rule on an `n^d` grid.
pub fn observable_moments(measure: &GibbsMeasure, f: &Observable, n: usize) -> Result<(f64, f64, f64)> {
    let d = measure.dim();
    if d > 3 {
        return Err(Error::UnsupportedDimension { dim: d, reason: "quadrature needs d <= 3" });
    }
    let total = n.pow(d as u32);
    let h = 1e-6;
    let sums = (0..total)
        .into_par_iter()
        .map(|mut c| {
            let mut x = vec![0.0; d];
            for a in (0..d).rev() {
                x[a] = ((c % n) as f64 + 0.5) / n as f64;
                c /= n;
            }
            let rho = measure.density(&x);
            let v = f.eval(&x);
            let mut g2 = 0.0;
            for a in 0..d {
                let mut p = x.clone();
                let mut m = x.clone();
                p[a] += h;
                m[a] -= h;
                let g = (f.eval(&p) - f.eval(&m)) / (2.0 * h);
                g2 += g * g;
            }
            [rho, rho * v, rho * v * v, rho * g2]
        })
        .reduce(|| [0.0; 4], |a, b| [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]]);
    let mean = sums[1] / sums[0];
    Ok((mean, sums[2] / sums[0] - mean * mean, sums[3] / sums[0]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSeries {
    pub n: Vec<u64>,
    pub corr: Vec<f64>,
    /// Monte-Carlo standard error of each entry.
    pub floor: Vec<f64>,
}

impl CorrelationSeries {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "n,corr,abs_corr,floor")?;
        for k in 0..self.n.len() {
            writeln!(w, "{},{},{},{}", self.n[k], self.corr[k], self.corr[k].abs(), self.floor[k])?;
        }
        Ok(())
    }
}

/// `c(n) = (1/N) Σ f(Xᵢ) g(φₙ(Xᵢ))` for exact samples `Xᵢ ~ μ`, with `f`, `g` shifted to μ-mean
/// zero and scaled to unit `Ḣ¹(μ)` norm. `φₙ` composes the unit segments `0..n` of `field`.
pub fn correlation_decay(
    field: &dyn VelocityField,
    measure: &GibbsMeasure,
    f: &Observable,
    g: &Observable,
    n_max: u64,
    mc_samples: usize,
    seed: u64,
    opts: &FlowOptions,
) -> Result<CorrelationSeries> {
    let d = measure.dim();
    if field.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: field.dim() });
    }
    let qn = if d == 2 { 256 } else { 48 };
    let (mf, _, hf) = observable_moments(measure, f, qn)?;
    let (mg, _, hg) = observable_moments(measure, g, qn)?;
    if !(hf > 0.0 && hg > 0.0) {
        return Err(Error::Degenerate("test function with zero gradient".into()));
    }
    let (sf, sg) = (1.0 / hf.sqrt(), 1.0 / hg.sqrt());
    let pts = measure.sample(mc_samples, rng::derive_seed(seed, CORR_TAG))?;
    let per_point: Vec<Result<Vec<f64>>> = pts
        .into_par_iter()
        .map(|p| {
            let mut x = p.into_coords();
            let fx = (f.eval(&x) - mf) * sf;
            let mut out = Vec::with_capacity(n_max as usize + 1);
            out.push(fx * (g.eval(&x) - mg) * sg);
            for n in 0..n_max {
                if !field.exact_flow(n as f64, 1.0, &mut x) {
                    integrate(field, n as f64, 1.0, &mut x, 0, opts)?;
                }
                wrap_in_place(&mut x);
                out.push(fx * (g.eval(&x) - mg) * sg);
            }
            Ok(out)
        })
        .collect();
    let m = n_max as usize + 1;
    let mut s1 = vec![0.0; m];
    let mut s2 = vec![0.0; m];
    for r in per_point {
        let r = r?;
        for k in 0..m {
            s1[k] += r[k];
            s2[k] += r[k] * r[k];
        }
    }
    let nn = mc_samples as f64;
    let corr: Vec<f64> = s1.iter().map(|s| s / nn).collect();
    let floor = s2.iter().zip(&corr).map(|(s, c)| ((s / nn - c * c).max(0.0) / nn).sqrt()).collect();
    Ok(CorrelationSeries { n: (0..=n_max).collect(), corr, floor })
}

/// `sin(2πk·x)` and `cos(2πk·x)` for every nonzero `k ∈ [−m, m]^d` up to sign.
pub fn fourier_observables(dim: usize, max_mode: i64) -> Vec<Observable> {
    let side = (2 * max_mode + 1) as usize;
    let mut out = Vec::new();
    for c in 0..side.pow(dim as u32) {
        let mut rest = c;
        let k: Vec<i64> = (0..dim)
            .map(|_| {
                let v = (rest % side) as i64 - max_mode;
                rest /= side;
                v
            })
            .collect();
        // Keep one of ±k: the first nonzero entry must be positive.
        if k.iter().find(|v| **v != 0).is_some_and(|v| *v > 0) {
            out.push(Observable::sin(&k));
            out.push(Observable::cos(&k));
        }
    }
    out
}

/// `ĥ(n) = max_{f,g} |c_{f,g}(n)|` over all ordered pairs of `dictionary`, every member shifted
/// to μ-mean zero and scaled to unit `Ḣ¹(μ)` norm. One sample set serves all pairs. `floor`
/// is the largest pairwise standard error times the two-sided Bonferroni 1% quantile for the
/// number of pairs, so pure noise stays below it.
pub fn dictionary_decay(
    field: &dyn VelocityField,
    measure: &GibbsMeasure,
    dictionary: &[Observable],
    n_max: u64,
    mc_samples: usize,
    seed: u64,
    opts: &FlowOptions,
) -> Result<CorrelationSeries> {
    let d = measure.dim();
    if field.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: field.dim() });
    }
    if dictionary.is_empty() {
        return Err(Error::Empty("test-function dictionary"));
    }
    let qn = if d == 2 { 256 } else { 48 };
    let mut affine = Vec::with_capacity(dictionary.len());
    for f in dictionary {
        let (m, _, h) = observable_moments(measure, f, qn)?;
        if !(h > 0.0) {
            return Err(Error::Degenerate(format!("test function {} with zero gradient", f.label)));
        }
        affine.push((m, 1.0 / h.sqrt()));
    }
    let p = dictionary.len();
    let m = n_max as usize + 1;
    let eval = |x: &[f64], out: &mut [f64]| {
        for (k, f) in dictionary.iter().enumerate() {
            out[k] = (f.eval(x) - affine[k].0) * affine[k].1;
        }
    };
    let pts = measure.sample(mc_samples, rng::derive_seed(seed, CORR_TAG))?;
    let sums = pts
        .into_par_iter()
        .try_fold(
            || vec![0.0; 2 * m * p * p],
            |mut acc, pt| -> Result<Vec<f64>> {
                let mut x = pt.into_coords();
                let mut f0 = vec![0.0; p];
                let mut gn = vec![0.0; p];
                eval(&x, &mut f0);
                for n in 0..m {
                    if n > 0 {
                        let s = (n - 1) as f64;
                        if !field.exact_flow(s, 1.0, &mut x) {
                            integrate(field, s, 1.0, &mut x, 0, opts)?;
                        }
                        wrap_in_place(&mut x);
                    }
                    eval(&x, &mut gn);
                    let base = 2 * n * p * p;
                    for a in 0..p {
                        for b in 0..p {
                            let v = f0[a] * gn[b];
                            acc[base + 2 * (a * p + b)] += v;
                            acc[base + 2 * (a * p + b) + 1] += v * v;
                        }
                    }
                }
                Ok(acc)
            },
        )
        .try_reduce(
            || vec![0.0; 2 * m * p * p],
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;
    let nn = mc_samples as f64;
    let pairs = (p * p) as f64;
    let z = Normal::standard().inverse_cdf(1.0 - 0.005 / pairs);
    let mut corr = Vec::with_capacity(m);
    let mut floor = Vec::with_capacity(m);
    for n in 0..m {
        let (mut best, mut se_max) = (0.0f64, 0.0f64);
        for q in 0..p * p {
            let c = sums[2 * (n * p * p + q)] / nn;
            let se = ((sums[2 * (n * p * p + q) + 1] / nn - c * c).max(0.0) / nn).sqrt();
            best = best.max(c.abs());
            se_max = se_max.max(se);
        }
        corr.push(best);
        floor.push(z * se_max);
    }
    Ok(CorrelationSeries { n: (0..=n_max).collect(), corr, floor })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingFit {
    /// Prefactor for the unit-`Ḣ¹` test functions used ("dictionary-D").
    pub d: f64,
    pub gamma: f64,
    pub fit_window: (u64, u64),
    /// RMS residual of the log-linear fit.
    pub residual: f64,
}

impl MixingFit {
    pub fn is_exponential(&self) -> bool {
        self.gamma > 0.0
    }

    pub fn rate(&self, t: f64) -> f64 {
        self.d * (-self.gamma * t).exp()
    }
}

/// Least squares on `log|c(n)|` over the window that starts at the first `n` with
/// `|c(n)| < |c(0)|/2` and ends before `|c|` first drops to `3×floor`.
pub fn fit_rate(series: &CorrelationSeries) -> Result<MixingFit> {
    let c = &series.corr;
    if c.is_empty() {
        return Err(Error::InsufficientDecay { usable: 0 });
    }
    let c0 = c[0].abs();
    let start = c.iter().position(|v| v.abs() < 0.5 * c0);
    let Some(start) = start else {
        return Err(Error::InsufficientDecay { usable: 0 });
    };
    let mut end = start;
    while end < c.len() && c[end].abs() > 3.0 * series.floor[end] && c[end] != 0.0 {
        end += 1;
    }
    let usable = end - start;
    if usable < 4 {
        return Err(Error::InsufficientDecay { usable });
    }
    let xs: Vec<f64> = series.n[start..end].iter().map(|n| *n as f64).collect();
    let ys: Vec<f64> = c[start..end].iter().map(|v| v.abs().ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum::<f64>() / k).sqrt();
    Ok(MixingFit { d: intercept.exp(), gamma: -slope, fit_window: (series.n[start], series.n[end - 1]), residual })
}

/// Normalized 2-D histogram on `bins × bins` cells (x₁ is the slow index).
pub fn histogram_2d<'a, I: IntoIterator<Item = &'a [f64]>>(points: I, bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins * bins];
    let mut count = 0usize;
    for p in points {
        let i = ((p[0] * bins as f64) as usize).min(bins - 1);
        let j = ((p[1] * bins as f64) as usize).min(bins - 1);
        h[i * bins + j] += 1.0;
        count += 1;
    }
    if count > 0 {
        h.iter_mut().for_each(|a| *a /= count as f64);
    }
    h
}

/// `½ Σ |p − q|`.
pub fn tv(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvEstimate {
    pub bins: usize,
    pub tv: f64,
    pub noise_floor: f64,
}

impl TvEstimate {
    /// TV above the floor, clamped at zero.
    pub fn excess(&self) -> f64 {
        (self.tv - self.noise_floor).max(0.0)
    }
}

/// Multinomial histogram of `n` draws from bin masses `p`.
fn multinomial<R: Rng + ?Sized>(p: &[f64], n: u64, rng: &mut R) -> Vec<f64> {
    let mut left = n;
    let mut rest = 1.0;
    let mut out = vec![0.0; p.len()];
    for (k, pk) in p.iter().enumerate() {
        if left == 0 {
            break;
        }
        let q = if rest > 0.0 { (pk / rest).clamp(0.0, 1.0) } else { 1.0 };
        let c = if k + 1 == p.len() { left } else { Binomial::new(left, q).expect("valid binomial").sample(rng) };
        out[k] = c as f64 / n as f64;
        left -= c;
        rest -= pk;
    }
    out
}

/// Mean + 2σ of the TV between two independent `n`-sample histograms of `μ` at `bins²` cells,
/// from `reps` multinomial replicates of the quadrature bin masses.
pub fn noise_floor(measure: &GibbsMeasure, n_samples: usize, bins: usize, reps: usize, seed: u64) -> Result<f64> {
    let p = measure.bin_masses_2d(bins)?;
    noise_floor_masses(&p, n_samples, reps, seed)
}

pub fn noise_floor_masses(p: &[f64], n_samples: usize, reps: usize, seed: u64) -> Result<f64> {
    if reps < 100 {
        return Err(Error::InvalidParameter(format!("bootstrap_reps = {reps} < 100")));
    }
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples = 0".into()));
    }
    let base = rng::derive_seed(seed, FLOOR_TAG);
    let vals: Vec<f64> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let mut g = rng::stream(base, r);
            let a = multinomial(p, n_samples as u64, &mut g);
            let b = multinomial(p, n_samples as u64, &mut g);
            tv(&a, &b)
        })
        .collect();
    let m = vals.iter().sum::<f64>() / reps as f64;
    let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
    Ok(m + 2.0 * sd)
}

/// Floor for an `n`-sample histogram against exact bin masses: mean + 2σ of `TV(p̂, p)`.
pub fn one_sample_floor(p: &[f64], n_samples: usize, reps: usize, seed: u64) -> Result<f64> {
    if reps < 100 {
        return Err(Error::InvalidParameter(format!("bootstrap_reps = {reps} < 100")));
    }
    let base = rng::derive_seed(seed, FLOOR_TAG ^ 1);
    let vals: Vec<f64> = (0..reps as u64)
        .into_par_iter()
        .map(|r| tv(&multinomial(p, n_samples as u64, &mut rng::stream(base, r)), p))
        .collect();
    let m = vals.iter().sum::<f64>() / reps as f64;
    let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
    Ok(m + 2.0 * sd)
}

/// TV of a snapshot's histogram to the exact bin masses of `μ`.
pub fn snapshot_tv(snapshot: &Snapshot, masses: &[f64], bins: usize, floor: f64) -> TvEstimate {
    let h = histogram_2d(snapshot.points(), bins);
    TvEstimate { bins, tv: tv(&h, masses), noise_floor: floor }
}

/// Initial conditions over which the worst case is taken.
#[derive(Debug, Clone, PartialEq)]
pub enum StartSet {
    Points(Vec<Vec<f64>>),
    /// Exact draws from `μ`.
    Gibbs,
}

impl StartSet {
    /// Both double-well minima plus eight uniform points.
    pub fn default_for(potential: &Potential, seed: u64) -> Self {
        let mut pts = potential.minima().unwrap_or_default();
        let mut r = rng::stream(seed, 0x5354);
        for _ in 0..8 {
            pts.push((0..potential.dim()).map(|_| r.random::<f64>()).collect());
        }
        StartSet::Points(pts)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingTimeReport {
    /// First checkpoint at which the worst start's floor-corrected `L¹` distance
    /// `∫|ρ − ρ∞| = 2·TV` is at most ½.
    pub t_mix: Option<f64>,
    /// `(t, start_id, tv − floor)`.
    pub rows: Vec<(f64, usize, f64)>,
    pub floor: f64,
}

impl MixingTimeReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,start_id,tv")?;
        for (t, s, v) in &self.rows {
            writeln!(w, "{t},{s},{v}")?;
        }
        Ok(())
    }
}

/// Monte-Carlo mixing time over `checkpoints` (which should include 0 when the start law may
/// already be mixed).
pub fn mixing_time_mc(
    cfg: &SdeConfig,
    field: &dyn VelocityField,
    measure: &GibbsMeasure,
    starts: &StartSet,
    n_traj: usize,
    bins: usize,
    checkpoints: &[f64],
) -> Result<MixingTimeReport> {
    let masses = measure.bin_masses_2d(bins)?;
    let floor = one_sample_floor(&masses, n_traj, 200, cfg.seed)?;
    let ensembles: Vec<Ensemble> = match starts {
        StartSet::Points(p) if p.is_empty() => return Err(Error::Empty("start set")),
        StartSet::Points(p) => p
            .iter()
            .enumerate()
            .map(|(k, x)| Ensemble::from_point(x, n_traj, rng::derive_seed(cfg.seed, k as u64)))
            .collect::<Result<_>>()?,
        StartSet::Gibbs => vec![Ensemble::from_gibbs(measure, n_traj, cfg.seed)?],
    };
    let mut rows = Vec::new();
    let mut worst = vec![0.0f64; checkpoints.len()];
    for (s, mut e) in ensembles.into_iter().enumerate() {
        let snaps = e.evolve(cfg, field, measure.potential(), checkpoints)?;
        for (k, snap) in snaps.iter().enumerate() {
            let v = snapshot_tv(snap, &masses, bins, floor).excess();
            rows.push((snap.t, s, v));
            worst[k] = worst[k].max(v);
        }
    }
    let t_mix = checkpoints.iter().zip(&worst).find(|(_, w)| 2.0 * **w <= 0.5).map(|(t, _)| *t);
    Ok(MixingTimeReport { t_mix, rows, floor })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::DtPolicy;
    use crate::velocity::{OrientationPolicy, ScheduledShearField, ShearProfile, ShearSchedule, ZeroField};

    fn synthetic(c: impl Fn(f64) -> f64, n: u64) -> CorrelationSeries {
        CorrelationSeries { n: (0..n).collect(), corr: (0..n).map(|k| c(k as f64)).collect(), floor: vec![0.0; n as usize] }
    }

    #[test]
    fn exact_exponential_is_recovered() {
        let fit = fit_rate(&synthetic(|n| 3.0 * (-0.7 * n).exp(), 30)).unwrap();
        assert!((fit.d - 3.0).abs() < 1e-10 && (fit.gamma - 0.7).abs() < 1e-10);
        assert!(fit.residual < 1e-10);
    }

    #[test]
    fn noisy_exponential_within_five_percent() {
        let mut r = rng::stream(4, 0);
        let noise: Vec<f64> = (0..40).map(|_| 1.0 + 0.01 * (2.0 * r.random::<f64>() - 1.0) * 3f64.sqrt()).collect();
        let fit = fit_rate(&synthetic(|n| 2.0 * (-0.3 * n).exp() * noise[n as usize], 40)).unwrap();
        assert!((fit.gamma / 0.3 - 1.0).abs() < 0.05);
    }

    #[test]
    fn flat_series_is_rejected() {
        assert!(matches!(fit_rate(&synthetic(|_| 1.0, 20)), Err(Error::InsufficientDecay { .. })));
    }

    #[test]
    fn tv_bounds_and_triangle() {
        let p = [0.5, 0.5, 0.0];
        let q = [0.0, 0.2, 0.8];
        let r = [0.3, 0.3, 0.4];
        assert!((tv(&p, &q) - 0.8).abs() < 1e-15);
        assert!(tv(&p, &q) <= tv(&p, &r) + tv(&r, &q) + 1e-15);
        assert_eq!(tv(&p, &p), 0.0);
    }

    #[test]
    fn single_bin_has_no_floor() {
        assert_eq!(noise_floor_masses(&[1.0], 1000, 100, 1).unwrap(), 0.0);
    }

    #[test]
    fn floor_decreases_with_samples() {
        let m = GibbsMeasure::normalize(Potential::DoubleWell, 1.0 / 70.0, 512).unwrap();
        let p = m.bin_masses_2d(32).unwrap();
        let f: Vec<f64> = [1000, 10_000, 100_000].iter().map(|n| noise_floor_masses(&p, *n, 100, 2).unwrap()).collect();
        assert!(f[0] > f[1] && f[1] > f[2], "{f:?}");
    }

    #[test]
    fn uniform_floor_matches_normal_approximation() {
        let m = GibbsMeasure::normalize(Potential::zero(2).unwrap(), 0.1, 64).unwrap();
        let n = 100_000;
        let floor = noise_floor(&m, n, 32, 200, 3).unwrap();
        // Difference of two independent bin frequencies ≈ N(0, 2p(1−p)/n).
        let p: f64 = 1.0 / 1024.0;
        let mean = 0.5 * 1024.0 * (2.0 / std::f64::consts::PI).sqrt() * (2.0 * p * (1.0 - p) / n as f64).sqrt();
        assert!((floor / mean - 1.0).abs() < 0.2, "{floor} {mean}");
    }

    #[test]
    fn zeroth_correlation_matches_quadrature() {
        let m = GibbsMeasure::normalize(Potential::DoubleWell, 0.2, 256).unwrap();
        let f = Observable::sin(&[1, 0]);
        let (_, var, h1) = observable_moments(&m, &f, 256).unwrap();
        let sched = ShearSchedule::new(1, 2, ShearProfile::Sawtooth).unwrap();
        let field = ScheduledShearField::new(sched, &m).unwrap();
        let s = correlation_decay(&field, &m, &f, &f, 0, 40_000, 5, &FlowOptions::default()).unwrap();
        assert!((s.corr[0] - var / h1).abs() < 3.0 * s.floor[0], "{} {}", s.corr[0], var / h1);
    }

    #[test]
    fn identity_dynamics_keeps_correlation() {
        let m = GibbsMeasure::normalize(Potential::DoubleWell, 0.2, 128).unwrap();
        let sched = ShearSchedule::with_options(1, 2, ShearProfile::Sawtooth, (0.0, 0.0), OrientationPolicy::Random, 0).unwrap();
        let field = ScheduledShearField::new(sched, &m).unwrap();
        let f = Observable::cos(&[0, 1]);
        let s = correlation_decay(&field, &m, &f, &f, 5, 500, 5, &FlowOptions::default()).unwrap();
        assert!(s.corr.iter().all(|c| (c - s.corr[0]).abs() < 1e-12));
    }

    #[test]
    fn gibbs_start_is_already_mixed() {
        let m = GibbsMeasure::normalize(Potential::DoubleWell, 0.2, 128).unwrap();
        let cfg = SdeConfig { kappa: 0.2, a: 0.0, dt: DtPolicy::Fixed(1e-3), t_end: 0.01, seed: 2 };
        let r = mixing_time_mc(&cfg, &ZeroField { dim: 2 }, &m, &StartSet::Gibbs, 2000, 16, &[0.0, 0.01]).unwrap();
        assert_eq!(r.t_mix, Some(0.0));
    }
}
