//! Euler–Maruyama integration of `dX = A v_{At}(X) dt − ∇U(X) dt + √(2κ) dW` for ensembles.

use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gibbs::{nearest, GibbsMeasure};
use crate::potential::Potential;
use crate::rng::{self, StreamRng};
use crate::torus::{wrap_coord, TorusPoint};
use crate::velocity::VelocityField;

const NOISE_TAG: u64 = 0x4e4f_4953_45;
const INIT_TAG: u64 = 0x494e_4954;
const MAX_DIM: usize = 8;
/// Field-time slack below which a step is considered to sit on a segment boundary.
const BOUNDARY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DtPolicy {
    Fixed(f64),
    /// `dt = clamp(c / (A|v(x)| + |∇U(x)| + 1), dt_min, dt_max)`
    Adaptive { c: f64, dt_min: f64, dt_max: f64 },
}

impl DtPolicy {
    pub fn adaptive_default() -> Self {
        DtPolicy::Adaptive { c: 0.02, dt_min: 1e-7, dt_max: 1e-2 }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            DtPolicy::Fixed(dt) => dt > 0.0 && dt.is_finite(),
            DtPolicy::Adaptive { c, dt_min, dt_max } => c > 0.0 && dt_min > 0.0 && dt_min <= dt_max,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("bad time-step policy {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdeConfig {
    pub kappa: f64,
    /// Drift amplitude; `0` is plain Langevin.
    pub a: f64,
    pub dt: DtPolicy,
    pub t_end: f64,
    pub seed: u64,
}

impl SdeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidParameter(format!("kappa = {}", self.kappa)));
        }
        if !(self.a >= 0.0 && self.a.is_finite()) {
            return Err(Error::InvalidParameter(format!("A = {}", self.a)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidParameter(format!("t_end = {}", self.t_end)));
        }
        self.dt.validate()
    }
}

/// One Euler–Maruyama step in place. Fails if `[t, t+dt]` crosses a field segment boundary.
#[allow(clippy::too_many_arguments)]
pub fn em_step(
    x: &mut [f64],
    t: f64,
    dt: f64,
    cfg: &SdeConfig,
    field: &dyn VelocityField,
    potential: &Potential,
    rng: &mut StreamRng,
) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt = {dt}")));
    }
    let mut s = cfg.a * t;
    if cfg.a > 0.0 {
        let mut end = field.segment_end(s);
        if end - s <= BOUNDARY_EPS {
            s = end;
            end = field.segment_end(end);
        }
        if cfg.a * dt > end - s + BOUNDARY_EPS {
            return Err(Error::SegmentStraddle { t, dt, boundary: end });
        }
    }
    let d = x.len();
    let mut v = [0.0; MAX_DIM];
    let mut g = [0.0; MAX_DIM];
    if cfg.a > 0.0 {
        field.velocity(s, x, &mut v[..d]);
    }
    potential.gradient(x, &mut g[..d]);
    apply_step(x, dt, cfg, &v[..d], &g[..d], rng);
    Ok(())
}

#[inline]
fn apply_step(x: &mut [f64], dt: f64, cfg: &SdeConfig, v: &[f64], g: &[f64], rng: &mut StreamRng) {
    let sigma = (2.0 * cfg.kappa * dt).sqrt();
    for k in 0..x.len() {
        let mut y = x[k] + dt * (cfg.a * v[k] - g[k]);
        if sigma > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            y += sigma * z;
        }
        x[k] = wrap_coord(y);
    }
}

/// Advances one trajectory from `t0` to `t1`, splitting steps at segment boundaries.
/// Returns the number of steps taken.
#[allow(clippy::too_many_arguments)]
pub fn advance(
    x: &mut [f64],
    t0: f64,
    t1: f64,
    cfg: &SdeConfig,
    field: &dyn VelocityField,
    potential: &Potential,
    rng: &mut StreamRng,
) -> u64 {
    let d = x.len();
    let mut v = [0.0; MAX_DIM];
    let mut g = [0.0; MAX_DIM];
    let mut t = t0;
    let mut steps = 0u64;
    let drift = cfg.a > 0.0;
    while t1 - t > 1e-14 * t1.abs().max(1.0) {
        let mut s = cfg.a * t;
        let mut end = f64::INFINITY;
        if drift {
            end = field.segment_end(s);
            if end - s <= BOUNDARY_EPS {
                s = end;
                end = field.segment_end(end);
            }
            field.velocity(s, x, &mut v[..d]);
        }
        potential.gradient(x, &mut g[..d]);
        let mut dt = match cfg.dt {
            DtPolicy::Fixed(dt) => dt,
            DtPolicy::Adaptive { c, dt_min, dt_max } => {
                let speed = norm(&v[..d]) * cfg.a + norm(&g[..d]) + 1.0;
                (c / speed).clamp(dt_min, dt_max)
            }
        };
        let mut next_t = t + dt;
        if next_t >= t1 {
            dt = t1 - t;
            next_t = t1;
        }
        if drift && end.is_finite() && cfg.a * dt >= end - s {
            dt = (end - s) / cfg.a;
            next_t = end / cfg.a;
        }
        apply_step(x, dt, cfg, &v[..d], &g[..d], rng);
        t = next_t.max(t + f64::MIN_POSITIVE);
        steps += 1;
    }
    steps
}

#[inline]
fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Positions of the ensemble at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub dim: usize,
    /// Row-major `len × dim`.
    pub coords: Vec<f64>,
}

impl Snapshot {
    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.coords[k * self.dim..(k + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn to_points(&self) -> Vec<TorusPoint> {
        self.points().map(|p| TorusPoint::from_wrapped(p.to_vec())).collect()
    }

    /// `t,id,x1,...,xd` rows. Writes the header when `header` is set.
    pub fn write_csv<W: Write>(&self, mut w: W, header: bool) -> std::io::Result<()> {
        if header {
            write!(w, "t,id")?;
            for k in 1..=self.dim {
                write!(w, ",x{k}")?;
            }
            writeln!(w)?;
        }
        for (id, p) in self.points().enumerate() {
            write!(w, "{},{id}", self.t)?;
            for c in p {
                write!(w, ",{c}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Fraction of points nearest (torus metric) to each of `minima`.
pub fn basin_occupancy(snapshot: &Snapshot, minima: &[Vec<f64>]) -> Result<Vec<f64>> {
    if snapshot.is_empty() {
        return Err(Error::Empty("snapshot has no particles"));
    }
    if minima.is_empty() {
        return Err(Error::Empty("no minima supplied"));
    }
    let mut counts = vec![0usize; minima.len()];
    for p in snapshot.points() {
        counts[nearest(p, minima)] += 1;
    }
    let n = snapshot.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// `t,basin,fraction` rows.
pub fn write_occupancy_csv<W: Write>(mut w: W, rows: &[(f64, Vec<f64>)]) -> std::io::Result<()> {
    writeln!(w, "t,basin,fraction")?;
    for (t, fr) in rows {
        for (b, f) in fr.iter().enumerate() {
            writeln!(w, "{t},{b},{f}")?;
        }
    }
    Ok(())
}

/// A seeded population of trajectories. Trajectory `k` draws its noise from stream `k`.
#[derive(Debug, Clone)]
pub struct Ensemble {
    dim: usize,
    t: f64,
    coords: Vec<f64>,
    rngs: Vec<StreamRng>,
    steps: u64,
}

impl Ensemble {
    pub fn from_points(points: &[Vec<f64>], seed: u64) -> Result<Self> {
        let first = points.first().ok_or(Error::Empty("no initial points"))?;
        let dim = first.len();
        if !(2..=MAX_DIM).contains(&dim) {
            return Err(Error::UnsupportedDimension { dim, reason: "ensembles need 2 <= d <= 8" });
        }
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: p.len() });
            }
            coords.extend_from_slice(TorusPoint::wrap(p)?.coords());
        }
        let base = rng::derive_seed(seed, NOISE_TAG);
        let rngs = (0..points.len() as u64).map(|k| rng::stream(base, k)).collect();
        Ok(Self { dim, t: 0.0, coords, rngs, steps: 0 })
    }

    /// `n` copies of `x`.
    pub fn from_point(x: &[f64], n: usize, seed: u64) -> Result<Self> {
        Self::from_points(&vec![x.to_vec(); n], seed)
    }

    /// `n` exact draws from `measure`.
    pub fn from_gibbs(measure: &GibbsMeasure, n: usize, seed: u64) -> Result<Self> {
        let pts: Vec<Vec<f64>> =
            measure.sample(n, rng::derive_seed(seed, INIT_TAG))?.into_iter().map(|p| p.into_coords()).collect();
        Self::from_points(&pts, seed)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rngs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rngs.is_empty()
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// Total Euler–Maruyama steps taken over all trajectories.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot { t: self.t, dim: self.dim, coords: self.coords.clone() }
    }

    /// Evolves every trajectory to `cfg.t_end`, recording snapshots at `checkpoints`.
    /// Results do not depend on the number of worker threads.
    pub fn evolve(
        &mut self,
        cfg: &SdeConfig,
        field: &dyn VelocityField,
        potential: &Potential,
        checkpoints: &[f64],
    ) -> Result<Vec<Snapshot>> {
        cfg.validate()?;
        if field.dim() != self.dim || potential.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: field.dim() });
        }
        if checkpoints.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidParameter("checkpoints must be nondecreasing".into()));
        }
        if let Some(&c) = checkpoints.iter().find(|&&c| c < self.t || c > cfg.t_end) {
            return Err(Error::InvalidParameter(format!(
                "checkpoint {c} outside [{}, {}]",
                self.t, cfg.t_end
            )));
        }
        if cfg.a * cfg.t_end > field.horizon() {
            return Err(Error::InvalidParameter(format!(
                "field horizon {} is shorter than A·t_end = {}",
                field.horizon(),
                cfg.a * cfg.t_end
            )));
        }
        let d = self.dim;
        let t0 = self.t;
        let nc = checkpoints.len();
        let results: Vec<(Vec<f64>, u64)> = self
            .coords
            .par_chunks_mut(d)
            .zip(self.rngs.par_iter_mut())
            .map(|(x, r)| {
                let mut recorded = Vec::with_capacity(nc * d);
                let mut t = t0;
                let mut steps = 0;
                for &c in checkpoints {
                    steps += advance(x, t, c, cfg, field, potential, r);
                    t = c;
                    recorded.extend_from_slice(x);
                }
                steps += advance(x, t, cfg.t_end, cfg, field, potential, r);
                (recorded, steps)
            })
            .collect();
        self.t = cfg.t_end;
        let mut snaps: Vec<Snapshot> = checkpoints
            .iter()
            .map(|&t| Snapshot { t, dim: d, coords: Vec::with_capacity(self.len() * d) })
            .collect();
        for (rec, steps) in results {
            self.steps += steps;
            for (k, snap) in snaps.iter_mut().enumerate() {
                snap.coords.extend_from_slice(&rec[k * d..(k + 1) * d]);
            }
        }
        Ok(snaps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::velocity::{ModifiedShear, ScheduledShearField, ShearProfile, ShearSchedule, ZeroField};

    #[test]
    fn brownian_variance() {
        let u = Potential::zero(2).unwrap();
        let mut e = Ensemble::from_point(&[0.5, 0.5], 100_000, 3).unwrap();
        let cfg = SdeConfig { kappa: 0.5, a: 0.0, dt: DtPolicy::Fixed(0.01), t_end: 0.1, seed: 3 };
        e.evolve(&cfg, &ZeroField { dim: 2 }, &u, &[]).unwrap();
        let snap = e.snapshot();
        let n = snap.len() as f64;
        let sq: Vec<f64> = snap.points().map(|p| crate::torus::circle_delta(0.5, p[0]).powi(2)).collect();
        let mean = sq.iter().sum::<f64>() / n;
        let sd = (sq.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        // Second moment of N(0, 2κT) folded onto [−½, ½), by quadrature of the wrapped density.
        let var = 2.0 * 0.5 * 0.1;
        let m = 20_000;
        let mut oracle = 0.0;
        for i in 0..m {
            let y = -0.5 + (i as f64 + 0.5) / m as f64;
            let dens: f64 = (-6..=6)
                .map(|k| {
                    let z = y + k as f64;
                    (-z * z / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
                })
                .sum();
            oracle += y * y * dens / m as f64;
        }
        assert!((mean - oracle).abs() < 3.0 * sd / n.sqrt(), "{mean} vs {oracle}");
    }

    #[test]
    fn zero_temperature_minimum_is_fixed() {
        let u = Potential::DoubleWell;
        let mut e = Ensemble::from_point(&[0.25, 0.3], 3, 1).unwrap();
        let cfg = SdeConfig { kappa: 0.0, a: 0.0, dt: DtPolicy::Fixed(1e-3), t_end: 1.0, seed: 1 };
        e.evolve(&cfg, &ZeroField { dim: 2 }, &u, &[]).unwrap();
        for p in e.snapshot().points() {
            assert!((p[0] - 0.25).abs() < 1e-12 && (p[1] - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_shear_step() {
        let m = GibbsMeasure::normalize(Potential::zero(2).unwrap(), 0.1, 64).unwrap();
        let v = ModifiedShear::new(ShearProfile::Sine, 0.0, (0, 1), 1, &m).unwrap();
        let cfg = SdeConfig { kappa: 0.0, a: 1.0, dt: DtPolicy::Fixed(0.01), t_end: 0.01, seed: 0 };
        let mut x = [0.1, 0.2];
        let mut r = rng::stream(0, 0);
        em_step(&mut x, 0.0, 0.01, &cfg, &v, m.potential(), &mut r).unwrap();
        let expect = 0.2 + 0.01 * ShearProfile::Sine.shear(0.1);
        assert!((x[1] - expect).abs() < 1e-15);
        assert_eq!(x[0], 0.1);
    }

    #[test]
    fn straddling_step_rejected() {
        let m = GibbsMeasure::normalize(Potential::zero(2).unwrap(), 0.1, 64).unwrap();
        let f = ScheduledShearField::new(ShearSchedule::new(1, 2, ShearProfile::Sine).unwrap(), &m).unwrap();
        let cfg = SdeConfig { kappa: 0.1, a: 10.0, dt: DtPolicy::Fixed(0.01), t_end: 1.0, seed: 0 };
        let mut x = [0.1, 0.2];
        let mut r = rng::stream(0, 0);
        assert!(matches!(
            em_step(&mut x, 0.095, 0.01, &cfg, &f, m.potential(), &mut r),
            Err(Error::SegmentStraddle { .. })
        ));
        assert!(em_step(&mut x, 0.1, 0.01, &cfg, &f, m.potential(), &mut r).is_ok());
    }

    #[test]
    fn checkpoints_and_determinism() {
        let m = GibbsMeasure::normalize(Potential::DoubleWell, 0.1, 128).unwrap();
        let f = ScheduledShearField::new(ShearSchedule::new(5, 2, ShearProfile::Sawtooth).unwrap(), &m).unwrap();
        let cfg = SdeConfig { kappa: 0.1, a: 7.0, dt: DtPolicy::adaptive_default(), t_end: 0.5, seed: 5 };
        let mut a = Ensemble::from_point(&[0.75, 0.7], 64, 5).unwrap();
        let mut b = a.clone();
        let sa = a.evolve(&cfg, &f, m.potential(), &[0.0, 0.25]).unwrap();
        let sb = b.evolve(&cfg, &f, m.potential(), &[0.0, 0.25]).unwrap();
        assert_eq!(sa, sb);
        assert!(sa[0].points().all(|p| p == [0.75, 0.7]));
        assert_eq!(a.snapshot(), b.snapshot());
        let none = a.evolve(&SdeConfig { t_end: 0.6, ..cfg }, &f, m.potential(), &[]).unwrap();
        assert!(none.is_empty());
        assert_eq!(a.time(), 0.6);
    }

    #[test]
    fn occupancy_fractions() {
        let minima = Potential::DoubleWell.minima().unwrap();
        let s = Snapshot { t: 0.0, dim: 2, coords: vec![0.75, 0.7, 0.75, 0.7] };
        assert_eq!(basin_occupancy(&s, &minima).unwrap(), vec![0.0, 1.0]);
        let s = Snapshot { t: 0.0, dim: 2, coords: vec![0.25, 0.3, 0.75, 0.7] };
        assert_eq!(basin_occupancy(&s, &minima).unwrap(), vec![0.5, 0.5]);
        let empty = Snapshot { t: 0.0, dim: 2, coords: vec![] };
        assert!(basin_occupancy(&empty, &minima).is_err());
    }

    #[test]
    fn snapshot_csv_header() {
        let s = Snapshot { t: 0.5, dim: 2, coords: vec![0.1, 0.2] };
        let mut out = Vec::new();
        s.write_csv(&mut out, true).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "t,id,x1,x2\n0.5,0,0.1,0.2\n");
    }
}
