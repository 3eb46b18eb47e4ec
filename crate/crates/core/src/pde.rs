//! Periodic finite-volume solver for the backward equation `∂tθ = ±A v(At)·∇θ + L_κθ`,
//! with `L_κθ = κΔθ − ∇U·∇θ`, on an `n×n` cell-centered grid of the 2-torus.
//!
//! `L_κ` is assembled from the weighted Dirichlet form `κ∫∇f·∇g dμ`, so it is symmetric in the
//! discrete `L²(μ)` inner product exactly. Transport uses semi-Lagrangian bicubic interpolation.

use std::f64::consts::PI;
use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::flows::{integrate, FlowOptions};
use crate::gibbs::GibbsMeasure;
use crate::rng;
use crate::torus::wrap_coord;
use crate::velocity::VelocityField;

/// Discrete measure and Dirichlet form on the grid.
#[derive(Debug, Clone)]
pub struct PdeGrid {
    n: usize,
    kappa: f64,
    /// Cell masses of `μ`; they sum to one.
    w: Vec<f64>,
    /// Coupling of cell `(i, j)` with `(i+1, j)` and with `(i, j+1)`.
    cx: Vec<f64>,
    cy: Vec<f64>,
}

impl PdeGrid {
    pub fn new(measure: &GibbsMeasure, n: usize) -> Result<Self> {
        if measure.dim() != 2 {
            return Err(Error::UnsupportedDimension { dim: measure.dim(), reason: "the PDE solver is 2-D" });
        }
        if n < 8 {
            return Err(Error::InvalidParameter(format!("grid size {n} < 8")));
        }
        let kappa = measure.kappa();
        let u = measure.potential();
        let shift = measure.u_min();
        let h = 1.0 / n as f64;
        let rho = |x: [f64; 2]| (-(u.value(&x) - shift) / kappa).exp();
        let mut w = vec![0.0; n * n];
        let mut cx = vec![0.0; n * n];
        let mut cy = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let (x1, x2) = ((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
                w[i * n + j] = rho([x1, x2]);
                cx[i * n + j] = rho([wrap_coord(x1 + 0.5 * h), x2]);
                cy[i * n + j] = rho([x1, wrap_coord(x2 + 0.5 * h)]);
            }
        }
        let z: f64 = w.iter().sum();
        let scale = kappa / (z * h * h);
        w.iter_mut().for_each(|a| *a /= z);
        cx.iter_mut().chain(cy.iter_mut()).for_each(|a| *a *= scale);
        Ok(Self { n, kappa, w, cx, cy })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn center(&self, idx: usize) -> [f64; 2] {
        let h = 1.0 / self.n as f64;
        [((idx / self.n) as f64 + 0.5) * h, ((idx % self.n) as f64 + 0.5) * h]
    }

    pub fn sample<F: Fn([f64; 2]) -> f64>(&self, f: F) -> Vec<f64> {
        (0..self.len()).map(|k| f(self.center(k))).collect()
    }

    pub fn mean(&self, f: &[f64]) -> f64 {
        self.w.iter().zip(f).map(|(w, a)| w * a).sum()
    }

    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.w.iter().zip(f).zip(g).map(|((w, a), b)| w * a * b).sum()
    }

    pub fn norm(&self, f: &[f64]) -> f64 {
        self.inner(f, f).sqrt()
    }

    pub fn l1(&self, f: &[f64]) -> f64 {
        self.w.iter().zip(f).map(|(w, a)| w * a.abs()).sum()
    }

    pub fn subtract_mean(&self, f: &mut [f64]) {
        let m = self.mean(f);
        f.iter_mut().for_each(|a| *a -= m);
    }

    /// `κ⟨∇f, ∇g⟩_μ`.
    pub fn dirichlet(&self, f: &[f64], g: &[f64]) -> f64 {
        let n = self.n;
        let mut acc = 0.0;
        for i in 0..n {
            let ip = (i + 1) % n;
            for j in 0..n {
                let k = i * n + j;
                let kx = ip * n + j;
                let ky = i * n + (j + 1) % n;
                acc += self.cx[k] * (f[kx] - f[k]) * (g[kx] - g[k]) + self.cy[k] * (f[ky] - f[k]) * (g[ky] - g[k]);
            }
        }
        acc
    }

    /// `‖∇f‖²_{L²(μ)}`.
    pub fn h1_sq(&self, f: &[f64]) -> f64 {
        self.dirichlet(f, f) / self.kappa
    }

    /// Stiffness action `(Kf)_i = Σ_j c_ij (f_i − f_j)`, so that `⟨Kf, g⟩ = κ⟨∇f, ∇g⟩_μ`.
    pub fn apply_stiffness(&self, f: &[f64], out: &mut [f64]) {
        let n = self.n;
        out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            let ip = (i + 1) % n;
            let im = (i + n - 1) % n;
            for j in 0..n {
                let jp = (j + 1) % n;
                let jm = (j + n - 1) % n;
                let k = i * n + j;
                let fk = f[k];
                row[j] = self.cx[k] * (fk - f[ip * n + j])
                    + self.cx[im * n + j] * (fk - f[im * n + j])
                    + self.cy[k] * (fk - f[i * n + jp])
                    + self.cy[i * n + jm] * (fk - f[i * n + jm]);
            }
        });
    }

    /// `L_κ f = −W⁻¹ K f`.
    pub fn apply_generator(&self, f: &[f64], out: &mut [f64]) {
        self.apply_stiffness(f, out);
        out.iter_mut().zip(&self.w).for_each(|(a, w)| *a = -*a / w);
    }

    fn diag(&self, dt: f64) -> Vec<f64> {
        let n = self.n;
        (0..self.len())
            .map(|k| {
                let (i, j) = (k / n, k % n);
                let s = self.cx[k] + self.cx[((i + n - 1) % n) * n + j] + self.cy[k] + self.cy[i * n + (j + n - 1) % n];
                self.w[k] + dt * s
            })
            .collect()
    }

    /// Solves `(W + dt K) x = b` by Jacobi-preconditioned conjugate gradients, starting from `x`.
    pub fn solve_shifted(&self, dt: f64, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<usize> {
        let diag = self.diag(dt);
        let op = |p: &[f64], out: &mut [f64]| {
            self.apply_stiffness(p, out);
            out.iter_mut().zip(p).zip(&self.w).for_each(|((o, p), w)| *o = w * p + dt * *o);
        };
        cg(op, &diag, b, x, tol, max_iter, None)
    }
}

/// Preconditioned conjugate gradients; `project` removes a kernel component when given.
fn cg<F: Fn(&[f64], &mut [f64])>(
    op: F,
    diag: &[f64],
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
    project: Option<&dyn Fn(&mut [f64])>,
) -> Result<usize> {
    let m = b.len();
    let mut r = vec![0.0; m];
    let mut ap = vec![0.0; m];
    op(x, &mut ap);
    for i in 0..m {
        r[i] = b[i] - ap[i];
    }
    let bnorm = b.iter().zip(diag).map(|(b, d)| b * b / d).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok(0);
    }
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(r, d)| r / d).collect();
    if let Some(p) = project {
        p(&mut z);
    }
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for it in 0..max_iter {
        if rz.max(0.0).sqrt() <= tol * bnorm {
            return Ok(it);
        }
        op(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        for i in 0..m {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..m {
            z[i] = r[i] / diag[i];
        }
        if let Some(pr) = project {
            pr(&mut z);
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..m {
            p[i] = z[i] + beta * p[i];
        }
    }
    if rz.max(0.0).sqrt() <= tol * bnorm {
        return Ok(max_iter);
    }
    Err(Error::NoConvergence { residual: rz.max(0.0).sqrt() / bnorm, iterations: max_iter })
}

/// `+1`: backward equation; `−1`: the ratio equation with reversed transport.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Backward,
    Ratio,
}

impl Sign {
    pub fn factor(self) -> f64 {
        match self {
            Sign::Backward => 1.0,
            Sign::Ratio => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    /// Rescale after interpolation so that transport never increases the `L²(μ)` norm.
    pub restore_norm: bool,
    pub transport: FlowOptions,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            cg_tol: 1e-10,
            cg_max_iter: 200_000,
            restore_norm: true,
            transport: FlowOptions { h_max: 1.0 / 16.0, rtol: 1e-9, atol: 1e-11, ..FlowOptions::default() },
        }
    }
}

/// Backward Euler step `(I − dt L_κ)θ′ = θ`.
fn backward_euler(grid: &PdeGrid, theta: &mut [f64], dt: f64, opts: &StepOptions) -> Result<usize> {
    let b: Vec<f64> = theta.iter().zip(&grid.w).map(|(t, w)| t * w).collect();
    grid.solve_shifted(dt, &b, theta, opts.cg_tol, opts.cg_max_iter)
}

/// Implicit diffusion step, second order by Richardson extrapolation of backward Euler.
pub fn diffusion_step(grid: &PdeGrid, theta: &mut [f64], dt: f64, opts: &StepOptions) -> Result<usize> {
    if dt <= 0.0 {
        return Ok(0);
    }
    let mut full = theta.to_vec();
    let mut iters = backward_euler(grid, &mut full, dt, opts)?;
    iters += backward_euler(grid, theta, 0.5 * dt, opts)?;
    iters += backward_euler(grid, theta, 0.5 * dt, opts)?;
    theta.iter_mut().zip(&full).for_each(|(h, f)| *h = 2.0 * *h - f);
    Ok(iters)
}

/// Field frozen at one time; used to compute departure points.
struct Frozen<'a> {
    field: &'a dyn VelocityField,
    s: f64,
}

impl VelocityField for Frozen<'_> {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn velocity(&self, _s: f64, x: &[f64], out: &mut [f64]) {
        self.field.velocity(self.s, x, out)
    }

    fn velocity_jacobian(&self, _s: f64, x: &[f64], out: &mut [f64], jac: &mut [f64]) {
        self.field.velocity_jacobian(self.s, x, out, jac)
    }

    fn exact_flow(&self, _s: f64, tau: f64, x: &mut [f64]) -> bool {
        self.field.exact_flow(self.s, tau, x)
    }
}

/// Departure points `Φ_τ(x)` of every cell center under the field frozen at `s`.
pub fn departure_points(grid: &PdeGrid, field: &dyn VelocityField, s: f64, tau: f64, opts: &FlowOptions) -> Result<Vec<[f64; 2]>> {
    let segment = field.frozen_at(s);
    let frozen = Frozen { field: segment.as_deref().unwrap_or(field), s };
    (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let mut y = grid.center(k);
            if !(opts.exact_when_available && frozen.exact_flow(s, tau, &mut y)) {
                y = grid.center(k);
                integrate(&frozen, 0.0, tau, &mut y, 0, opts)?;
            }
            Ok([wrap_coord(y[0]), wrap_coord(y[1])])
        })
        .collect()
}

#[inline]
fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// Periodic bicubic (Catmull–Rom) interpolation of cell-centered values.
pub fn interpolate(n: usize, values: &[f64], x: [f64; 2]) -> f64 {
    let g1 = x[0] * n as f64 - 0.5;
    let g2 = x[1] * n as f64 - 0.5;
    let (f1, f2) = (g1.floor(), g2.floor());
    let (w1, w2) = (catmull_rom(g1 - f1), catmull_rom(g2 - f2));
    let ni = n as i64;
    let mut acc = 0.0;
    for a in 0..4 {
        let i = (f1 as i64 - 1 + a as i64).rem_euclid(ni) as usize;
        let mut row = 0.0;
        for b in 0..4 {
            let j = (f2 as i64 - 1 + b as i64).rem_euclid(ni) as usize;
            row += w2[b] * values[i * n + j];
        }
        acc += w1[a] * row;
    }
    acc
}

/// `θ ← θ∘X` with the μ-mean restored and, optionally, the norm capped.
pub fn transport(grid: &PdeGrid, theta: &mut [f64], departures: &[[f64; 2]], restore_norm: bool) {
    let mean0 = grid.mean(theta);
    let norm0 = if restore_norm {
        let c: Vec<f64> = theta.iter().map(|a| a - mean0).collect();
        grid.norm(&c)
    } else {
        0.0
    };
    let src = theta.to_vec();
    let n = grid.n;
    theta.par_iter_mut().zip(departures.par_iter()).for_each(|(t, x)| *t = interpolate(n, &src, *x));
    let shift = grid.mean(theta) - mean0;
    theta.iter_mut().for_each(|a| *a -= shift);
    if restore_norm {
        let norm1 = theta.iter().map(|a| a - mean0).map(|a| a * a).zip(&grid.w).map(|(a, w)| a * w).sum::<f64>().sqrt();
        if norm1 > norm0 && norm1 > 0.0 {
            let r = norm0 / norm1;
            theta.iter_mut().for_each(|a| *a = mean0 + (*a - mean0) * r);
        }
    }
}

/// Time stepper for a batch of fields sharing one velocity field.
pub struct BackwardSolver<'a> {
    grid: &'a PdeGrid,
    field: &'a dyn VelocityField,
    a: f64,
    sign: Sign,
    opts: StepOptions,
    cache: Option<(u64, Vec<[f64; 2]>)>,
    /// Field-time length of one transport step.
    delta: f64,
    steps: u64,
    pub cg_iterations: usize,
}

impl<'a> BackwardSolver<'a> {
    /// `substeps` transport steps per unit of field time when `a > 0`.
    pub fn new(grid: &'a PdeGrid, field: &'a dyn VelocityField, a: f64, sign: Sign, substeps: usize, opts: StepOptions) -> Result<Self> {
        if field.dim() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: field.dim() });
        }
        if !(a >= 0.0) || substeps == 0 {
            return Err(Error::InvalidParameter("need A ≥ 0 and substeps ≥ 1".into()));
        }
        Ok(Self { grid, field, a, sign, opts, cache: None, delta: 1.0 / substeps as f64, steps: 0, cg_iterations: 0 })
    }

    /// Real-time length of one step when transport is active.
    pub fn transport_dt(&self) -> Option<f64> {
        (self.a > 0.0).then(|| self.delta / self.a)
    }

    pub fn time(&self) -> f64 {
        match self.transport_dt() {
            Some(dt) => self.steps as f64 * dt,
            None => f64::NAN,
        }
    }

    fn half_map(&mut self, s: f64) -> Result<Vec<[f64; 2]>> {
        let tau = 0.5 * self.delta * self.sign.factor();
        let segmented = self.field.segment_end(s).is_finite();
        if segmented {
            let key = s.floor() as u64;
            if let Some((k, d)) = &self.cache {
                if *k == key {
                    return Ok(d.clone());
                }
            }
            let d = departure_points(self.grid, self.field, s, tau, &self.opts.transport)?;
            self.cache = Some((key, d.clone()));
            return Ok(d);
        }
        departure_points(self.grid, self.field, s, tau, &self.opts.transport)
    }

    /// Strang step: half transport, implicit diffusion over `dt`, half transport.
    /// With `A = 0` only the diffusion part runs and `dt` is arbitrary; otherwise `dt` is fixed
    /// by the transport step and the argument is ignored.
    pub fn step(&mut self, thetas: &mut [Vec<f64>], dt: f64) -> Result<f64> {
        let dt = match self.transport_dt() {
            None => {
                for th in thetas.iter_mut() {
                    self.cg_iterations += diffusion_step(self.grid, th, dt, &self.opts)?;
                }
                return Ok(dt);
            }
            Some(dt) => dt,
        };
        let s0 = self.steps as f64 * self.delta;
        let first = self.half_map(s0 + 0.25 * self.delta)?;
        let restore = self.opts.restore_norm;
        for th in thetas.iter_mut() {
            transport(self.grid, th, &first, restore);
            self.cg_iterations += diffusion_step(self.grid, th, dt, &self.opts)?;
        }
        let second = self.half_map(s0 + 0.75 * self.delta)?;
        for th in thetas.iter_mut() {
            transport(self.grid, th, &second, restore);
        }
        self.steps += 1;
        Ok(dt)
    }
}

/// One step of the backward (`Sign::Backward`) or ratio (`Sign::Ratio`) equation starting at time `t`.
pub fn backward_step(
    grid: &PdeGrid,
    theta: &mut [f64],
    t: f64,
    dt: f64,
    a: f64,
    field: &dyn VelocityField,
    sign: Sign,
    opts: &StepOptions,
) -> Result<()> {
    let restore = opts.restore_norm;
    let s0 = a * t;
    let ds = 0.5 * a * dt;
    if a > 0.0 && field.segment_end(s0) < s0 + a * dt - 1e-12 {
        return Err(Error::SegmentStraddle { t, dt, boundary: field.segment_end(s0) });
    }
    let tau = ds * sign.factor();
    if a > 0.0 {
        let d = departure_points(grid, field, s0 + 0.5 * ds, tau, &opts.transport)?;
        transport(grid, theta, &d, restore);
    }
    diffusion_step(grid, theta, dt, opts)?;
    if a > 0.0 {
        let d = departure_points(grid, field, s0 + 1.5 * ds, tau, &opts.transport)?;
        transport(grid, theta, &d, restore);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergySample {
    pub t: f64,
    pub l2mu_sq: f64,
    pub h1mu_sq: f64,
    pub l1mu: f64,
}

impl EnergySample {
    pub fn of(grid: &PdeGrid, t: f64, theta: &[f64]) -> Self {
        Self { t, l2mu_sq: grid.inner(theta, theta), h1mu_sq: grid.h1_sq(theta), l1mu: grid.l1(theta) }
    }
}

pub fn write_trace_csv<W: Write>(trace: &[EnergySample], mut w: W) -> std::io::Result<()> {
    writeln!(w, "t,l2mu,h1mu,l1mu")?;
    for s in trace {
        writeln!(w, "{},{},{},{}", s.t, s.l2mu_sq.sqrt(), s.h1mu_sq.sqrt(), s.l1mu)?;
    }
    Ok(())
}

/// Largest defect of `d/dt‖θ‖² = −2κ‖∇θ‖²` along a trace, relative to `‖θ₀‖²`.
/// The derivative is the three-point centered difference at interior samples.
pub fn energy_residual(trace: &[EnergySample], kappa: f64) -> f64 {
    if trace.len() < 3 {
        return 0.0;
    }
    let scale = trace[0].l2mu_sq;
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0f64;
    for k in 1..trace.len() - 1 {
        let (a, b, c) = (&trace[k - 1], &trace[k], &trace[k + 1]);
        let (h0, h1) = (b.t - a.t, c.t - b.t);
        let deriv = -h1 / (h0 * (h0 + h1)) * a.l2mu_sq + (h1 - h0) / (h0 * h1) * b.l2mu_sq + h0 / (h1 * (h0 + h1)) * c.l2mu_sq;
        worst = worst.max((deriv + 2.0 * kappa * b.h1mu_sq).abs() / scale);
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub struct Eigenpair {
    pub lambda: f64,
    pub vector: Vec<f64>,
    pub iterations: usize,
}

/// Smallest nonzero eigenvalue of `−L_κ` by inverse iteration on the μ-mean-zero subspace.
pub fn smallest_eigenvalue(grid: &PdeGrid, tol: f64, max_iter: usize, seed: u64) -> Result<Eigenpair> {
    let m = grid.len();
    let mut r = rng::stream(seed, 0);
    let mut x: Vec<f64> = (0..m)
        .map(|k| {
            let c = grid.center(k);
            (2.0 * PI * c[0]).cos() + 0.1 * (2.0 * PI * c[1]).sin() + 0.01 * (r.random::<f64>() - 0.5)
        })
        .collect();
    grid.subtract_mean(&mut x);
    let nx = grid.norm(&x);
    x.iter_mut().for_each(|a| *a /= nx);
    let diag = grid.diag(1.0).iter().zip(&grid.w).map(|(d, w)| d - w).collect::<Vec<_>>();
    let op = |p: &[f64], out: &mut [f64]| grid.apply_stiffness(p, out);
    let mut lambda = grid.dirichlet(&x, &x);
    for it in 1..=max_iter {
        let b: Vec<f64> = x.iter().zip(&grid.w).map(|(a, w)| a * w).collect();
        let mut y = x.iter().map(|a| a / lambda.max(f64::MIN_POSITIVE)).collect::<Vec<_>>();
        // The system is consistent: b has zero sum, which is the kernel direction of K.
        cg(op, &diag, &b, &mut y, 1e-12, 500_000, None)?;
        grid.subtract_mean(&mut y);
        let ny = grid.norm(&y);
        y.iter_mut().for_each(|a| *a /= ny);
        let next = grid.dirichlet(&y, &y);
        x = y;
        if ((next - lambda) / next).abs() < tol {
            return Ok(Eigenpair { lambda: next, vector: x, iterations: it });
        }
        lambda = next;
    }
    Err(Error::NoConvergence { residual: lambda, iterations: max_iter })
}

/// Eigenvalues of `−L_κ` from a Fourier–Galerkin discretization of the unitarily equivalent
/// Schrödinger operator `−κΔ + V`, `V = |∇U|²/(4κ) − ΔU/2`, with modes `|k|_∞ ≤ modes`.
pub fn galerkin_spectrum(measure: &GibbsMeasure, modes: usize) -> Result<Vec<f64>> {
    if measure.dim() != 2 {
        return Err(Error::UnsupportedDimension { dim: measure.dim(), reason: "the spectrum is computed in 2-D" });
    }
    let kappa = measure.kappa();
    let u = measure.potential();
    let side = 2 * modes + 1;
    // V is sampled finely enough to resolve all differences k − k′.
    let q = (4 * modes + 2).max(64).next_power_of_two();
    let mut vals = vec![Complex::new(0.0, 0.0); q * q];
    let mut g = [0.0; 2];
    for i in 0..q {
        for j in 0..q {
            let x = [i as f64 / q as f64, j as f64 / q as f64];
            u.value_grad(&x, &mut g);
            let v = (g[0] * g[0] + g[1] * g[1]) / (4.0 * kappa) - 0.5 * u.laplacian(&x);
            vals[i * q + j] = Complex::new(v, 0.0);
        }
    }
    fft2(&mut vals, q);
    let norm = 1.0 / (q * q) as f64;
    let coef = |k1: i64, k2: i64| {
        let a = k1.rem_euclid(q as i64) as usize;
        let b = k2.rem_euclid(q as i64) as usize;
        vals[a * q + b] * norm
    };
    let idx: Vec<(i64, i64)> = (0..side * side)
        .map(|k| ((k / side) as i64 - modes as i64, (k % side) as i64 - modes as i64))
        .collect();
    // Real basis is unnecessary: the Hermitian matrix has real spectrum, take the real symmetric
    // embedding [[Re, −Im], [Im, Re]] and keep every other eigenvalue.
    let m = idx.len();
    let mut big = DMatrix::<f64>::zeros(2 * m, 2 * m);
    for (r, &(a1, a2)) in idx.iter().enumerate() {
        for (c, &(b1, b2)) in idx.iter().enumerate() {
            let mut h = coef(a1 - b1, a2 - b2);
            if r == c {
                h += 4.0 * PI * PI * kappa * ((a1 * a1 + a2 * a2) as f64);
            }
            big[(r, c)] = h.re;
            big[(r + m, c + m)] = h.re;
            big[(r + m, c)] = h.im;
            big[(r, c + m)] = -h.im;
        }
    }
    let eig = SymmetricEigen::new(big);
    let mut ev: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(ev.into_iter().step_by(2).collect())
}

fn fft2(data: &mut [Complex<f64>], q: usize) {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(q);
    for row in data.chunks_mut(q) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); q];
    for j in 0..q {
        for i in 0..q {
            col[i] = data[i * q + j];
        }
        fft.process(&mut col);
        for i in 0..q {
            data[i * q + j] = col[i];
        }
    }
}

/// `N(λ)`: eigenvalues in `(0, λ]` counted with multiplicity; the ground state is excluded.
pub fn eigen_count(eigenvalues: &[f64], lambda: f64) -> usize {
    let floor = eigenvalues.first().copied().unwrap_or(0.0);
    eigenvalues.iter().skip(1).filter(|e| **e - floor <= lambda).count()
}

/// Leading Weyl term `ω₂ (λ/κ) / (2π)² = λ/(4πκ)`.
pub fn weyl_leading(kappa: f64, lambda: f64) -> f64 {
    lambda / (4.0 * PI * kappa)
}

pub fn write_spectrum_csv<W: Write>(eigenvalues: &[f64], mut w: W) -> std::io::Result<()> {
    writeln!(w, "k,lambda_k")?;
    for (k, e) in eigenvalues.iter().enumerate() {
        writeln!(w, "{k},{e}")?;
    }
    Ok(())
}

/// μ-mean-zero initial data with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryElement {
    pub label: String,
    pub values: Vec<f64>,
}

/// The first eight Fourier modes, orthogonalized in `L²(μ)` after removing the mean.
pub fn fourier_dictionary(grid: &PdeGrid) -> Vec<DictionaryElement> {
    let modes = [(1, 0), (0, 1), (1, 1), (1, -1)];
    let mut out: Vec<DictionaryElement> = Vec::new();
    for (k1, k2) in modes {
        for (name, f) in [("cos", f64::cos as fn(f64) -> f64), ("sin", f64::sin as fn(f64) -> f64)] {
            let mut v = grid.sample(|x| f(2.0 * PI * (k1 as f64 * x[0] + k2 as f64 * x[1])));
            grid.subtract_mean(&mut v);
            for e in &out {
                let c = grid.inner(&v, &e.values);
                v.iter_mut().zip(&e.values).for_each(|(a, b)| *a -= c * b);
            }
            let nv = grid.norm(&v);
            if nv < 1e-12 {
                continue;
            }
            v.iter_mut().for_each(|a| *a /= nv);
            out.push(DictionaryElement { label: format!("{name}({k1},{k2})"), values: v });
        }
    }
    out
}

/// Fourier modes plus the numerically computed slowest eigenfunction.
pub fn default_dictionary(grid: &PdeGrid) -> Result<Vec<DictionaryElement>> {
    let mut d = fourier_dictionary(grid);
    let e = smallest_eigenvalue(grid, 1e-10, 500, 0)?;
    d.push(DictionaryElement { label: "eigen0".into(), values: e.vector });
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdisOptions {
    /// Transport steps per unit field time.
    pub substeps: usize,
    pub t_max: f64,
    /// Diffusion-only runs: first step and geometric growth.
    pub dt0: f64,
    pub growth: f64,
    pub dt_max: f64,
    pub sign: Sign,
    pub step: StepOptions,
    /// Wall-clock limit; the run stops unfinished once it is spent.
    pub budget: Option<Duration>,
}

impl Default for TdisOptions {
    fn default() -> Self {
        Self { substeps: 1, t_max: 1e7, dt0: 1e-4, growth: 1.1, dt_max: f64::INFINITY, sign: Sign::Backward, step: StepOptions::default(), budget: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdisReport {
    /// `None` when some element has not halved by `t_max`.
    pub t_dis: Option<f64>,
    pub per_element: Vec<(String, Option<f64>)>,
    /// Energy trace of the slowest element.
    pub trace: Vec<EnergySample>,
    pub steps: u64,
    /// Simulated time reached.
    pub t_reached: f64,
    pub budget_exhausted: bool,
}

impl TdisReport {
    pub fn describe(&self) -> String {
        match self.t_dis {
            Some(t) => format!("{t}"),
            None => format!("> {}", self.t_reached),
        }
    }
}

/// First time every dictionary element's `L²(μ)` norm has halved; the crossing is located by
/// log-linear interpolation between steps.
pub fn dissipation_time(
    grid: &PdeGrid,
    a: f64,
    field: &dyn VelocityField,
    dictionary: &[DictionaryElement],
    opts: &TdisOptions,
) -> Result<TdisReport> {
    if dictionary.is_empty() {
        return Err(Error::Empty("dissipation-time dictionary"));
    }
    let mut thetas: Vec<Vec<f64>> = dictionary.iter().map(|e| e.values.clone()).collect();
    for th in thetas.iter_mut() {
        grid.subtract_mean(th);
    }
    let norms0: Vec<f64> = thetas.iter().map(|t| grid.norm(t)).collect();
    if norms0.iter().any(|n| !(*n > 0.0)) {
        return Err(Error::Degenerate("dictionary element with zero norm".into()));
    }
    let mut solver = BackwardSolver::new(grid, field, a, opts.sign, opts.substeps, opts.step)?;
    let mut hit: Vec<Option<f64>> = vec![None; thetas.len()];
    let mut traces: Vec<Vec<EnergySample>> = thetas.iter().map(|t| vec![EnergySample::of(grid, 0.0, t)]).collect();
    let mut prev: Vec<f64> = norms0.clone();
    let mut t = 0.0;
    let mut dt = opts.dt0;
    let mut steps = 0;
    let started = Instant::now();
    let mut budget_exhausted = false;
    while t < opts.t_max && hit.iter().any(Option::is_none) {
        if opts.budget.is_some_and(|b| started.elapsed() > b) {
            budget_exhausted = true;
            break;
        }
        // Norms never increase, so elements that have halved are retired.
        let live: Vec<usize> = (0..thetas.len()).filter(|k| hit[*k].is_none()).collect();
        let mut active: Vec<Vec<f64>> = live.iter().map(|k| std::mem::take(&mut thetas[*k])).collect();
        let taken = solver.step(&mut active, dt.min(opts.t_max - t))?;
        for (k, th) in live.iter().zip(active) {
            thetas[*k] = th;
        }
        t += taken;
        steps += 1;
        for &k in &live {
            let th = &thetas[k];
            let nk = grid.norm(th);
            traces[k].push(EnergySample { t, l2mu_sq: nk * nk, h1mu_sq: grid.h1_sq(th), l1mu: grid.l1(th) });
            if hit[k].is_none() && nk <= 0.5 * norms0[k] {
                let (l0, l1, target) = (prev[k].ln(), nk.ln(), (0.5 * norms0[k]).ln());
                let frac = if l1 < l0 { ((l0 - target) / (l0 - l1)).clamp(0.0, 1.0) } else { 1.0 };
                hit[k] = Some(t - taken + frac * taken);
            }
            prev[k] = nk;
        }
        dt = (dt * opts.growth).min(opts.dt_max);
    }
    let t_dis = if hit.iter().all(Option::is_some) { hit.iter().map(|h| h.unwrap()).reduce(f64::max) } else { None };
    let worst = hit
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.unwrap_or(f64::INFINITY).partial_cmp(&b.1.unwrap_or(f64::INFINITY)).unwrap())
        .map(|(k, _)| k)
        .unwrap_or(0);
    Ok(TdisReport {
        t_dis,
        per_element: dictionary.iter().map(|e| e.label.clone()).zip(hit).collect(),
        trace: std::mem::take(&mut traces[worst]),
        steps,
        t_reached: t,
        budget_exhausted,
    })
}
