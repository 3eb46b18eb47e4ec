//! Deterministic flow maps of velocity fields with their tangent (variational) dynamics,
//! projective and two-point processes, Lyapunov exponents and a numeric Lie-span check.

use nalgebra::DMatrix;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::gibbs::GibbsMeasure;
use crate::rng;
use crate::torus::{circle_delta, wrap_coord, wrap_in_place, TorusPoint};
use crate::velocity::{ModifiedShear, ShearProfile, VelocityField};

const MAX_DIM: usize = 8;

/// Dormand–Prince 5(4) with error control; `h_max` caps the step so that at least
/// `1/h_max` steps are taken per unit of field time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOptions {
    pub h_max: f64,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Use closed-form flows when the field provides them (pure shears).
    pub exact_when_available: bool,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self { h_max: 1.0 / 64.0, rtol: 1e-10, atol: 1e-12, max_steps: 10_000_000, exact_when_available: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSegmentResult {
    pub position: TorusPoint,
    /// Row-major `d×d` tangent map.
    pub jacobian: Vec<f64>,
}

impl FlowSegmentResult {
    pub fn dim(&self) -> usize {
        self.position.dim()
    }

    pub fn determinant(&self) -> f64 {
        let d = self.dim();
        DMatrix::from_row_slice(d, d, &self.jacobian).determinant()
    }
}

/// Right-hand side: `x' = v(s, x)`, `w' = ∇v(s, x) w` for every tangent column `w`.
fn rhs(field: &dyn VelocityField, s: f64, y: &[f64], d: usize, cols: usize, out: &mut [f64]) {
    if cols == 0 {
        field.velocity(s, &y[..d], &mut out[..d]);
        return;
    }
    let mut jac = [0.0; MAX_DIM * MAX_DIM];
    field.velocity_jacobian(s, &y[..d], &mut out[..d], &mut jac[..d * d]);
    for c in 0..cols {
        let w = &y[d + c * d..d + (c + 1) * d];
        for a in 0..d {
            let mut acc = 0.0;
            for b in 0..d {
                acc += jac[a * d + b] * w[b];
            }
            out[d + c * d + a] = acc;
        }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates the position (unwrapped) and `cols` tangent columns from `s0` over `tau`.
/// Returns the number of accepted steps.
pub fn integrate(
    field: &dyn VelocityField,
    s0: f64,
    tau: f64,
    y: &mut [f64],
    cols: usize,
    opts: &FlowOptions,
) -> Result<usize> {
    let d = field.dim();
    let m = d * (cols + 1);
    debug_assert_eq!(y.len(), m);
    if tau == 0.0 {
        return Ok(0);
    }
    let dir = tau.signum();
    let end = s0 + tau;
    let mut k = vec![0.0; 7 * m];
    let mut tmp = vec![0.0; m];
    let mut ynew = vec![0.0; m];
    let mut s = s0;
    let mut h = opts.h_max.min(tau.abs());
    let mut accepted = 0;
    let mut first = true;
    let mut total = 0;
    // Field evaluations sit strictly inside [s0, end] so that segment lookups never
    // see the next segment.
    let clamp_s = |t: f64| if dir > 0.0 { t.min(end - 1e-13 * end.abs().max(1.0)) } else { t.max(end + 1e-13 * end.abs().max(1.0)) };
    while (end - s) * dir > 1e-15 * end.abs().max(1.0) {
        total += 1;
        if total > opts.max_steps {
            return Err(Error::NoConvergence { residual: (end - s).abs(), iterations: total });
        }
        if (s + dir * h - end) * dir > 0.0 {
            h = (end - s).abs();
        }
        let hs = dir * h;
        if first {
            let (k1, _) = k.split_at_mut(m);
            rhs(field, clamp_s(s), y, d, cols, k1);
            first = false;
        }
        let stage = |k: &mut [f64], idx: usize, coeffs: &[f64], c: f64, tmp: &mut [f64]| {
            for i in 0..m {
                let mut acc = y[i];
                for (j, a) in coeffs.iter().enumerate() {
                    acc += hs * a * k[j * m + i];
                }
                tmp[i] = acc;
            }
            let (_, rest) = k.split_at_mut(idx * m);
            rhs(field, clamp_s(s + c * hs), tmp, d, cols, &mut rest[..m]);
        };
        stage(&mut k, 1, &[A21], C2, &mut tmp);
        stage(&mut k, 2, &[A31, A32], C3, &mut tmp);
        stage(&mut k, 3, &[A41, A42, A43], C4, &mut tmp);
        stage(&mut k, 4, &[A51, A52, A53, A54], C5, &mut tmp);
        stage(&mut k, 5, &[A61, A62, A63, A64, A65], 1.0, &mut tmp);
        for i in 0..m {
            ynew[i] = y[i] + hs * (B1 * k[i] + B3 * k[2 * m + i] + B4 * k[3 * m + i] + B5 * k[4 * m + i] + B6 * k[5 * m + i]);
        }
        {
            let (_, rest) = k.split_at_mut(6 * m);
            rhs(field, clamp_s(s + hs), &ynew, d, cols, &mut rest[..m]);
        }
        let mut err = 0.0f64;
        for i in 0..m {
            let e = hs
                * (E1 * k[i] + E3 * k[2 * m + i] + E4 * k[3 * m + i] + E5 * k[4 * m + i] + E6 * k[5 * m + i] + E7 * k[6 * m + i]);
            let sc = opts.atol + opts.rtol * y[i].abs().max(ynew[i].abs());
            err = err.max((e / sc).abs());
        }
        if err <= 1.0 || h <= 1e-14 {
            s += hs;
            y.copy_from_slice(&ynew);
            let (k1, rest) = k.split_at_mut(m);
            k1.copy_from_slice(&rest[5 * m..6 * m]);
            accepted += 1;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h = (h * factor).min(opts.h_max).max(1e-14);
    }
    Ok(accepted)
}

/// Flow over field time `[s0, s0 + tau]` with the full tangent map.
pub fn flow_map(
    field: &dyn VelocityField,
    s0: f64,
    tau: f64,
    x: &[f64],
    opts: &FlowOptions,
) -> Result<FlowSegmentResult> {
    let d = field.dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x.len() });
    }
    let (lo, hi) = (s0 + 1e-9 * tau, s0 + (1.0 - 1e-9) * tau);
    if field.segment_end(lo) == field.segment_end(hi) {
        if let Some(seg) = field.frozen_at(lo) {
            return flow_map(seg.as_ref(), s0, tau, x, opts);
        }
    }
    if opts.exact_when_available {
        let mut y = x.to_vec();
        let mut v = vec![0.0; d];
        let mut jac = vec![0.0; d * d];
        // Closed forms exist only for fields constant along their own trajectories.
        if field.exact_flow(s0, tau, &mut y) {
            field.velocity_jacobian(s0, x, &mut v, &mut jac);
            for a in 0..d {
                for b in 0..d {
                    jac[a * d + b] = f64::from(u8::from(a == b)) + tau * jac[a * d + b];
                }
            }
            return Ok(FlowSegmentResult { position: TorusPoint::wrap(&y)?, jacobian: jac });
        }
    }
    let mut y = vec![0.0; d * (d + 1)];
    y[..d].copy_from_slice(x);
    for c in 0..d {
        y[d + c * d + c] = 1.0;
    }
    integrate(field, s0, tau, &mut y, d, opts)?;
    // Columns were stored as tangent vectors; transpose into a row-major matrix.
    let mut jac = vec![0.0; d * d];
    for c in 0..d {
        for a in 0..d {
            jac[a * d + c] = y[d + c * d + a];
        }
    }
    Ok(FlowSegmentResult { position: TorusPoint::wrap(&y[..d])?, jacobian: jac })
}

/// Flow over the unit segment `[n, n+1)` of a scheduled field.
pub fn flow_segment(field: &dyn VelocityField, n: u64, x: &[f64], opts: &FlowOptions) -> Result<FlowSegmentResult> {
    flow_map(field, n as f64, 1.0, x, opts)
}

/// Composition of segments `n0..n0+count`; the Jacobian is the ordered product.
pub fn flow_segments(
    field: &dyn VelocityField,
    n0: u64,
    count: u64,
    x: &[f64],
    opts: &FlowOptions,
) -> Result<FlowSegmentResult> {
    let d = field.dim();
    let mut pos = x.to_vec();
    let mut jac = DMatrix::<f64>::identity(d, d);
    for n in n0..n0 + count {
        let r = flow_segment(field, n, &pos, opts)?;
        jac = DMatrix::from_row_slice(d, d, &r.jacobian) * jac;
        pos = r.position.into_coords();
    }
    let mut rows = Vec::with_capacity(d * d);
    for a in 0..d {
        for b in 0..d {
            rows.push(jac[(a, b)]);
        }
    }
    Ok(FlowSegmentResult { position: TorusPoint::wrap(&pos)?, jacobian: rows })
}

/// Position and a tangent direction, the latter a unit vector modulo sign.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectiveState {
    pub position: Vec<f64>,
    pub direction: Vec<f64>,
}

impl ProjectiveState {
    pub fn new(position: &[f64], direction: &[f64]) -> Result<Self> {
        let mut s = Self { position: TorusPoint::wrap(position)?.into_coords(), direction: direction.to_vec() };
        let n = normalize_sign(&mut s.direction);
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::Degenerate("zero direction".into()));
        }
        Ok(s)
    }

    /// Advances through segment `n` and returns `log |D_xφ_n u|` before renormalizing.
    pub fn step(&mut self, field: &dyn VelocityField, n: u64, opts: &FlowOptions) -> Result<f64> {
        let d = self.position.len();
        let mut y = vec![0.0; 2 * d];
        y[..d].copy_from_slice(&self.position);
        y[d..].copy_from_slice(&self.direction);
        integrate(field, n as f64, 1.0, &mut y, 1, opts)?;
        wrap_in_place(&mut y[..d]);
        self.position.copy_from_slice(&y[..d]);
        self.direction.copy_from_slice(&y[d..]);
        let norm = normalize_sign(&mut self.direction);
        Ok(norm.ln())
    }
}

/// Normalizes to unit length with the first nonzero entry positive; returns the old norm.
fn normalize_sign(u: &mut [f64]) -> f64 {
    let norm = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm > 0.0 {
        let sign = u.iter().find(|a| **a != 0.0).map(|a| a.signum()).unwrap_or(1.0);
        for a in u.iter_mut() {
            *a *= sign / norm;
        }
    }
    norm
}

/// Two distinct points advected by the same flow.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPointState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl TwoPointState {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        let x = TorusPoint::wrap(x)?.into_coords();
        let y = TorusPoint::wrap(y)?.into_coords();
        if x == y {
            return Err(Error::Degenerate("two-point process needs x != y".into()));
        }
        Ok(Self { x, y })
    }

    pub fn step(&mut self, field: &dyn VelocityField, n: u64, opts: &FlowOptions) -> Result<()> {
        for p in [&mut self.x, &mut self.y] {
            let r = flow_segment(field, n, p, opts)?;
            p.copy_from_slice(r.position.coords());
        }
        Ok(())
    }

    pub fn separation(&self) -> f64 {
        crate::torus::torus_distance(&self.x, &self.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovEstimate {
    pub lambda: f64,
    /// Half-width of the 99% batch-means interval.
    pub half_width: f64,
    pub batch_means: Vec<f64>,
    /// `(n, running mean)` samples.
    pub trace: Vec<(u64, f64)>,
}

impl LyapunovEstimate {
    pub fn excludes_zero(&self) -> bool {
        self.lambda - self.half_width > 0.0
    }
}

pub const LYAPUNOV_BATCHES: usize = 20;

/// Batch-means estimate of the mean of `log_growth(k)` over `k < n_steps`.
pub fn batch_mean_estimate<F: FnMut(u64) -> Result<f64>>(n_steps: u64, mut log_growth: F) -> Result<LyapunovEstimate> {
    let batches = LYAPUNOV_BATCHES as u64;
    if n_steps < batches {
        return Err(Error::InvalidParameter(format!("need at least {batches} steps")));
    }
    let per = n_steps / batches;
    let stride = (n_steps / 1000).max(1);
    let mut sums = vec![0.0; LYAPUNOV_BATCHES];
    let mut total = 0.0;
    let mut trace = Vec::new();
    for k in 0..per * batches {
        let g = log_growth(k)?;
        sums[(k / per) as usize] += g;
        total += g;
        if (k + 1) % stride == 0 {
            trace.push((k + 1, total / (k + 1) as f64));
        }
    }
    let means: Vec<f64> = sums.iter().map(|s| s / per as f64).collect();
    let lambda = total / (per * batches) as f64;
    let var = means.iter().map(|m| (m - lambda).powi(2)).sum::<f64>() / (batches - 1) as f64;
    let z = Normal::standard().inverse_cdf(0.995);
    Ok(LyapunovEstimate { lambda, half_width: z * (var / batches as f64).sqrt(), batch_means: means, trace })
}

/// Top Lyapunov exponent of a fixed matrix sequence acting on `ℝ^d`.
pub fn lyapunov_cocycle<F: FnMut(u64) -> Vec<f64>>(dim: usize, n_steps: u64, mut matrix: F) -> Result<LyapunovEstimate> {
    let mut u = vec![0.0; dim];
    u[0] = 1.0;
    u[dim - 1] += 0.5;
    normalize_sign(&mut u);
    batch_mean_estimate(n_steps, |k| {
        let m = matrix(k);
        let w: Vec<f64> = (0..dim).map(|a| (0..dim).map(|b| m[a * dim + b] * u[b]).sum()).collect();
        u = w;
        Ok(normalize_sign(&mut u).ln())
    })
}

/// `λ̂⁺ = (1/n) Σ log |D_xφ_k u_k|` along one trajectory started from a `μ`-sample.
pub fn lyapunov_top(
    field: &dyn VelocityField,
    measure: &GibbsMeasure,
    n_steps: u64,
    seed: u64,
    opts: &FlowOptions,
) -> Result<LyapunovEstimate> {
    if field.dim() != 2 {
        return Err(Error::UnsupportedDimension { dim: field.dim(), reason: "Lyapunov estimates are 2-D" });
    }
    let mut r = rng::stream(seed, 0);
    let x0 = measure.draw(&mut r);
    let angle: f64 = r.random::<f64>() * std::f64::consts::PI;
    let mut state = ProjectiveState::new(x0.coords(), &[angle.cos(), angle.sin()])?;
    batch_mean_estimate(n_steps, |k| state.step(field, k, opts))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanRank {
    pub rank: usize,
    /// `σ_min / σ_max` over the first `2d` singular values.
    pub sv_ratio: f64,
    pub singular_values: Vec<f64>,
}

pub const SPAN_RANK_THRESHOLD: f64 = 1e-6;

/// Numerical rank of the two-point vector fields `(v(x), v(y))` of the shear family together
/// with their first Lie brackets `[V, W] = (DW)V − (DV)W` (derivatives by centered differences).
pub fn two_point_span_rank(
    measure: &GibbsMeasure,
    profile: ShearProfile,
    x: &[f64],
    y: &[f64],
    alpha_samples: usize,
    h_fd: f64,
) -> Result<SpanRank> {
    let d = measure.dim();
    if d != 2 {
        return Err(Error::UnsupportedDimension { dim: d, reason: "two-point span check is 2-D" });
    }
    if x.len() != 2 || y.len() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: x.len().min(y.len()) });
    }
    let (x, y) = (TorusPoint::wrap(x)?.into_coords(), TorusPoint::wrap(y)?.into_coords());
    for k in 0..2 {
        if circle_delta(x[k], y[k]).abs() < 1e-12 {
            return Err(Error::Degenerate(format!(
                "x and y share coordinate x{} = {}; the two-point process is degenerate there",
                k + 1,
                x[k]
            )));
        }
    }
    if alpha_samples == 0 || !(h_fd > 0.0) {
        return Err(Error::InvalidParameter("need alpha_samples > 0 and h_fd > 0".into()));
    }
    let mut fields = Vec::new();
    for q in 0..alpha_samples {
        let alpha = (q as f64 + 0.5) / alpha_samples as f64;
        for k in [1u8, 2] {
            fields.push(ModifiedShear::new(profile, alpha, (0, 1), k, measure)?);
        }
    }
    let two_point = |f: &ModifiedShear, p: &[f64], q: &[f64]| {
        let mut out = [0.0; 4];
        f.velocity(0.0, p, &mut out[..2]);
        f.velocity(0.0, q, &mut out[2..]);
        out
    };
    // Block-diagonal two-point Jacobian by centered differences.
    let jac = |f: &ModifiedShear| {
        let mut j = [[0.0; 4]; 4];
        for (block, base) in [(0usize, &x), (2usize, &y)] {
            for b in 0..2 {
                let mut p = base.clone();
                let mut m = base.clone();
                p[b] = wrap_coord(p[b] + h_fd);
                m[b] = wrap_coord(m[b] - h_fd);
                let (mut vp, mut vm) = ([0.0; 2], [0.0; 2]);
                f.velocity(0.0, &p, &mut vp);
                f.velocity(0.0, &m, &mut vm);
                for a in 0..2 {
                    j[block + a][block + b] = (vp[a] - vm[a]) / (2.0 * h_fd);
                }
            }
        }
        j
    };
    let vals: Vec<[f64; 4]> = fields.iter().map(|f| two_point(f, &x, &y)).collect();
    let jacs: Vec<[[f64; 4]; 4]> = fields.iter().map(jac).collect();
    let mut rows: Vec<[f64; 4]> = vals.clone();
    for a in 0..fields.len() {
        for b in a + 1..fields.len() {
            let mut br = [0.0; 4];
            for r in 0..4 {
                let mut acc = 0.0;
                for c in 0..4 {
                    acc += jacs[b][r][c] * vals[a][c] - jacs[a][r][c] * vals[b][c];
                }
                br[r] = acc;
            }
            rows.push(br);
        }
    }
    let m = DMatrix::from_fn(rows.len(), 4, |r, c| rows[r][c]);
    let svd = m.svd(false, false);
    let mut sv: Vec<f64> = svd.singular_values.iter().cloned().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let top = sv[0];
    if !(top > 0.0) {
        return Ok(SpanRank { rank: 0, sv_ratio: 0.0, singular_values: sv });
    }
    let rank = sv.iter().filter(|s| **s / top > SPAN_RANK_THRESHOLD).count();
    Ok(SpanRank { rank, sv_ratio: sv[3] / top, singular_values: sv })
}
