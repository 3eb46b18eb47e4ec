//! Measure-preserving drifts: modified shears `v = ∇⊥ψ − ψ∇⊥U/κ`, random shear schedules
//! and the OU-modulated stream field.
//!
//! Field time `s` is the argument of every field. Schedules are constant on `[n, n+1)`.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gibbs::GibbsMeasure;
use crate::potential::Potential;
use crate::rng;
use crate::torus::{circle_delta, wrap_coord};

const MAX_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShearProfile {
    /// `F₀` piecewise quadratic with a sawtooth derivative.
    Sawtooth,
    /// `F₀ = sin 2πy`
    Sine,
    /// Velocity profile is the unit tent on `[3/8, 5/8]`; the stream is its running integral.
    LocalizedTent,
}

impl ShearProfile {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sawtooth" => Ok(Self::Sawtooth),
            "sine" => Ok(Self::Sine),
            "localized-tent" | "tent" => Ok(Self::LocalizedTent),
            other => Err(Error::InvalidParameter(format!("unknown profile '{other}'"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sawtooth => "sawtooth",
            Self::Sine => "sine",
            Self::LocalizedTent => "localized-tent",
        }
    }

    /// `(F, F′, F″)` at `y`, with right limits at kinks.
    #[inline]
    pub fn eval(self, y: f64) -> (f64, f64, f64) {
        let y = wrap_coord(y);
        match self {
            Self::Sawtooth => {
                if y < 0.25 {
                    (2.0 * y * y, 4.0 * y, 4.0)
                } else if y < 0.75 {
                    (-2.0 * (y - 0.25) * (y - 0.75) + 0.125, 2.0 - 4.0 * y, -4.0)
                } else {
                    let z = y - 1.0;
                    (2.0 * z * z, 4.0 * z, 4.0)
                }
            }
            Self::Sine => {
                let (s, c) = (2.0 * PI * y).sin_cos();
                (s, 2.0 * PI * c, -4.0 * PI * PI * s)
            }
            Self::LocalizedTent => {
                if y < 0.375 {
                    (0.0, 0.0, 0.0)
                } else if y < 0.5 {
                    let z = y - 0.375;
                    (4.0 * z * z, 8.0 * z, 8.0)
                } else if y < 0.625 {
                    let z = 0.625 - y;
                    (0.125 - 4.0 * z * z, 8.0 * z, -8.0)
                } else {
                    (0.125, 0.0, 0.0)
                }
            }
        }
    }

    pub fn stream(self, y: f64) -> f64 {
        self.eval(y).0
    }

    /// Shear speed `F′`.
    pub fn shear(self, y: f64) -> f64 {
        self.eval(y).1
    }

    pub fn shear_slope(self, y: f64) -> f64 {
        self.eval(y).2
    }

    /// Points of `[0,1)` where the profile fails to be `C²` (the tent stream also jumps at 0).
    pub fn kinks(self) -> &'static [f64] {
        match self {
            Self::Sawtooth => &[0.25, 0.75],
            Self::Sine => &[],
            Self::LocalizedTent => &[0.0, 0.375, 0.5, 0.625],
        }
    }

    pub fn kink_distance(self, y: f64) -> f64 {
        self.kinks().iter().map(|&k| circle_delta(y, k).abs()).fold(f64::INFINITY, f64::min)
    }
}

/// A time-dependent velocity field on the torus.
pub trait VelocityField: Send + Sync {
    fn dim(&self) -> usize;

    fn velocity(&self, s: f64, x: &[f64], out: &mut [f64]);

    /// Velocity and row-major Jacobian `jac[a*d + b] = ∂v_a/∂x_b`.
    fn velocity_jacobian(&self, s: f64, x: &[f64], out: &mut [f64], jac: &mut [f64]);

    /// End of the time interval on which the field is smooth in `s`.
    fn segment_end(&self, _s: f64) -> f64 {
        f64::INFINITY
    }

    /// Distance from `x` to the nearest spatial kink of the field at time `s`.
    fn kink_distance(&self, _s: f64, _x: &[f64]) -> f64 {
        f64::INFINITY
    }

    /// Last field time at which the field is defined.
    fn horizon(&self) -> f64 {
        f64::INFINITY
    }

    /// Exact time-`tau` flow map when it is available in closed form.
    fn exact_flow(&self, _s: f64, _tau: f64, _x: &mut [f64]) -> bool {
        false
    }

    /// The time-independent field active at `s` for fields that are piecewise constant in time.
    fn frozen_at(&self, _s: f64) -> Option<Box<dyn VelocityField>> {
        None
    }
}

/// `v = ∇⊥_{ij}ψ − ψ ∇⊥_{ij}U/κ` given `ψ`, `∇ψ` and optionally `Hψ` (row-major).
#[allow(clippy::too_many_arguments)]
fn skew_field(
    u: &Potential,
    kappa: f64,
    i: usize,
    j: usize,
    x: &[f64],
    psi: f64,
    dpsi: &[f64],
    hpsi: Option<&[f64]>,
    out: &mut [f64],
    jac: Option<&mut [f64]>,
) {
    let d = x.len();
    out[..d].fill(0.0);
    let mut g = [0.0; MAX_DIM];
    if u.is_zero() {
        out[i] = -dpsi[j];
        out[j] = dpsi[i];
    } else {
        u.gradient(x, &mut g[..d]);
        out[i] = -dpsi[j] + psi * g[j] / kappa;
        out[j] = dpsi[i] - psi * g[i] / kappa;
    }
    if let Some(jac) = jac {
        let hpsi = hpsi.expect("Jacobian requested without stream Hessian");
        jac[..d * d].fill(0.0);
        let mut hu = [0.0; MAX_DIM * MAX_DIM];
        let zero = u.is_zero();
        if !zero {
            u.hessian(x, &mut hu[..d * d]);
        }
        for l in 0..d {
            let mut ai = -hpsi[j * d + l];
            let mut aj = hpsi[i * d + l];
            if !zero {
                ai += (dpsi[l] * g[j] + psi * hu[j * d + l]) / kappa;
                aj -= (dpsi[l] * g[i] + psi * hu[i * d + l]) / kappa;
            }
            jac[i * d + l] = ai;
            jac[j * d + l] = aj;
        }
    }
}

fn shear_eval(
    u: &Potential,
    kappa: f64,
    profile: ShearProfile,
    t: &ShearTuple,
    x: &[f64],
    out: &mut [f64],
    jac: Option<&mut [f64]>,
) {
    let d = x.len();
    let m = if t.orientation == 1 { t.i } else { t.j };
    let (f, fp, fpp) = profile.eval(x[m] - t.alpha);
    let b = t.beta;
    let mut dpsi = [0.0; MAX_DIM];
    dpsi[m] = b * fp;
    match jac {
        Some(jac) => {
            let mut h = [0.0; MAX_DIM * MAX_DIM];
            h[m * d + m] = b * fpp;
            skew_field(u, kappa, t.i, t.j, x, b * f, &dpsi[..d], Some(&h[..d * d]), out, Some(jac));
        }
        None => skew_field(u, kappa, t.i, t.j, x, b * f, &dpsi[..d], None, out, None),
    }
}

/// One modified shear: stream `ψ = β F(x_m − α)` in the `(i, j)` plane, where `m = i` for
/// orientation 1 (the flow moves `x_j`) and `m = j` for orientation 2 (it moves `x_i`).
#[derive(Debug, Clone)]
pub struct ModifiedShear {
    pub profile: ShearProfile,
    pub alpha: f64,
    pub beta: f64,
    pub i: usize,
    pub j: usize,
    pub orientation: u8,
    potential: Arc<Potential>,
    kappa: f64,
}

impl ModifiedShear {
    /// `i < j` are zero-based coordinate indices.
    pub fn new(
        profile: ShearProfile,
        alpha: f64,
        pair: (usize, usize),
        orientation: u8,
        measure: &GibbsMeasure,
    ) -> Result<Self> {
        let d = measure.dim();
        let (i, j) = pair;
        if !(i < j && j < d) {
            return Err(Error::InvalidParameter(format!("pair ({i}, {j}) invalid for d = {d}")));
        }
        if d > MAX_DIM {
            return Err(Error::UnsupportedDimension { dim: d, reason: "shear fields support d <= 8" });
        }
        if orientation != 1 && orientation != 2 {
            return Err(Error::InvalidParameter(format!("orientation {orientation} not in {{1, 2}}")));
        }
        Ok(Self {
            profile,
            alpha,
            beta: 1.0,
            i,
            j,
            orientation,
            potential: measure.potential_arc(),
            kappa: measure.kappa(),
        })
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    /// Coordinate the stream depends on.
    pub fn stream_coord(&self) -> usize {
        if self.orientation == 1 {
            self.i
        } else {
            self.j
        }
    }

    /// Coordinate a pure shear moves.
    pub fn moving_coord(&self) -> usize {
        if self.orientation == 1 {
            self.j
        } else {
            self.i
        }
    }

    fn eval(&self, x: &[f64], out: &mut [f64], jac: Option<&mut [f64]>) {
        let t = ShearTuple { alpha: self.alpha, beta: self.beta, i: self.i, j: self.j, orientation: self.orientation };
        shear_eval(&self.potential, self.kappa, self.profile, &t, x, out, jac);
    }

    /// Signed speed of the pure shear (U ≡ 0) along its moving coordinate.
    pub fn pure_speed(&self, x: &[f64]) -> f64 {
        let fp = self.beta * self.profile.shear(x[self.stream_coord()] - self.alpha);
        if self.orientation == 1 {
            fp
        } else {
            -fp
        }
    }
}

impl VelocityField for ModifiedShear {
    fn dim(&self) -> usize {
        self.potential.dim()
    }

    fn velocity(&self, _s: f64, x: &[f64], out: &mut [f64]) {
        self.eval(x, out, None);
    }

    fn velocity_jacobian(&self, _s: f64, x: &[f64], out: &mut [f64], jac: &mut [f64]) {
        self.eval(x, out, Some(jac));
    }

    fn kink_distance(&self, _s: f64, x: &[f64]) -> f64 {
        self.profile.kink_distance(x[self.stream_coord()] - self.alpha)
    }

    fn exact_flow(&self, _s: f64, tau: f64, x: &mut [f64]) -> bool {
        if !self.potential.is_zero() {
            return false;
        }
        let k = self.moving_coord();
        x[k] = wrap_coord(x[k] + tau * self.pure_speed(x));
        true
    }
}

/// Parameters of one schedule segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShearTuple {
    pub alpha: f64,
    pub beta: f64,
    /// Zero-based, `i < j`.
    pub i: usize,
    pub j: usize,
    pub orientation: u8,
}

/// How orientations are chosen from segment to segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrientationPolicy {
    Random,
    /// `1, 2, 1, 2, ...`
    Alternating,
}

const SCHEDULE_TAG: u64 = 0x5348_4541_52;
const SCHEDULE_CACHE: usize = 1 << 17;

/// i.i.d. shear tuples, segment `n` drawn from its own counter-based stream.
#[derive(Debug, Clone)]
pub struct ShearSchedule {
    seed: u64,
    dim: usize,
    profile: ShearProfile,
    beta_range: (f64, f64),
    orientation: OrientationPolicy,
    cache: Vec<ShearTuple>,
}

impl ShearSchedule {
    pub fn new(seed: u64, dim: usize, profile: ShearProfile) -> Result<Self> {
        Self::with_options(seed, dim, profile, (0.0, 1.0), OrientationPolicy::Random, 0)
    }

    /// `precompute` segments are cached eagerly; later ones are drawn on demand.
    pub fn with_options(
        seed: u64,
        dim: usize,
        profile: ShearProfile,
        beta_range: (f64, f64),
        orientation: OrientationPolicy,
        precompute: usize,
    ) -> Result<Self> {
        if !(2..=MAX_DIM).contains(&dim) {
            return Err(Error::UnsupportedDimension { dim, reason: "schedules need 2 <= d <= 8" });
        }
        let (lo, hi) = beta_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidParameter(format!("bad beta range [{lo}, {hi}]")));
        }
        let mut s = Self { seed, dim, profile, beta_range, orientation, cache: Vec::new() };
        s.cache = (0..precompute.min(SCHEDULE_CACHE) as u64).map(|n| s.draw(n)).collect();
        Ok(s)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn profile(&self) -> ShearProfile {
        self.profile
    }

    pub fn beta_range(&self) -> (f64, f64) {
        self.beta_range
    }

    pub fn orientation_policy(&self) -> OrientationPolicy {
        self.orientation
    }

    fn draw(&self, n: u64) -> ShearTuple {
        let mut r = rng::stream(rng::derive_seed(self.seed, SCHEDULE_TAG), n);
        let alpha: f64 = r.random();
        let (lo, hi) = self.beta_range;
        let beta = lo + (hi - lo) * r.random::<f64>();
        let pairs = self.dim * (self.dim - 1) / 2;
        let mut p = r.random_range(0..pairs);
        let mut i = 0;
        while p >= self.dim - 1 - i {
            p -= self.dim - 1 - i;
            i += 1;
        }
        let j = i + 1 + p;
        let coin: bool = r.random();
        let orientation = match self.orientation {
            OrientationPolicy::Random => 1 + coin as u8,
            OrientationPolicy::Alternating => 1 + (n % 2) as u8,
        };
        ShearTuple { alpha, beta, i, j, orientation }
    }

    pub fn tuple(&self, n: u64) -> ShearTuple {
        match self.cache.get(n as usize) {
            Some(t) => *t,
            None => self.draw(n),
        }
    }

    /// Writes `n,alpha,beta,i,j,k` rows (1-based coordinates) for segments `0..count`.
    pub fn write_csv<W: Write>(&self, count: u64, mut w: W) -> std::io::Result<()> {
        writeln!(w, "n,alpha,beta,i,j,k")?;
        for n in 0..count {
            let t = self.tuple(n);
            writeln!(w, "{n},{},{},{},{},{}", t.alpha, t.beta, t.i + 1, t.j + 1, t.orientation)?;
        }
        Ok(())
    }
}

/// The piecewise-constant-in-time field `v_s = β_n v_{α_n, ξ_n, k_n}` for `s ∈ [n, n+1)`.
#[derive(Debug, Clone)]
pub struct ScheduledShearField {
    schedule: ShearSchedule,
    potential: Arc<Potential>,
    kappa: f64,
}

impl ScheduledShearField {
    pub fn new(schedule: ShearSchedule, measure: &GibbsMeasure) -> Result<Self> {
        if schedule.dim() != measure.dim() {
            return Err(Error::DimensionMismatch { expected: measure.dim(), got: schedule.dim() });
        }
        Ok(Self { schedule, potential: measure.potential_arc(), kappa: measure.kappa() })
    }

    pub fn schedule(&self) -> &ShearSchedule {
        &self.schedule
    }

    /// The shear active on segment `n`.
    pub fn segment(&self, n: u64) -> ModifiedShear {
        let t = self.schedule.tuple(n);
        ModifiedShear {
            profile: self.schedule.profile(),
            alpha: t.alpha,
            beta: t.beta,
            i: t.i,
            j: t.j,
            orientation: t.orientation,
            potential: Arc::clone(&self.potential),
            kappa: self.kappa,
        }
    }

    #[inline]
    fn index(s: f64) -> u64 {
        s.max(0.0).floor() as u64
    }
}

impl VelocityField for ScheduledShearField {
    fn dim(&self) -> usize {
        self.schedule.dim()
    }

    fn velocity(&self, s: f64, x: &[f64], out: &mut [f64]) {
        let t = self.schedule.tuple(Self::index(s));
        shear_eval(&self.potential, self.kappa, self.schedule.profile(), &t, x, out, None);
    }

    fn velocity_jacobian(&self, s: f64, x: &[f64], out: &mut [f64], jac: &mut [f64]) {
        let t = self.schedule.tuple(Self::index(s));
        shear_eval(&self.potential, self.kappa, self.schedule.profile(), &t, x, out, Some(jac));
    }

    fn segment_end(&self, s: f64) -> f64 {
        (Self::index(s) + 1) as f64
    }

    fn kink_distance(&self, s: f64, x: &[f64]) -> f64 {
        let t = self.schedule.tuple(Self::index(s));
        let m = if t.orientation == 1 { t.i } else { t.j };
        self.schedule.profile().kink_distance(x[m] - t.alpha)
    }

    fn exact_flow(&self, s: f64, tau: f64, x: &mut [f64]) -> bool {
        self.segment(Self::index(s)).exact_flow(s, tau, x)
    }

    fn frozen_at(&self, s: f64) -> Option<Box<dyn VelocityField>> {
        Some(Box::new(self.segment(Self::index(s))))
    }
}

/// A field that is identically zero; plain Langevin dynamics.
#[derive(Debug, Clone, Copy)]
pub struct ZeroField {
    pub dim: usize,
}

impl VelocityField for ZeroField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity(&self, _s: f64, _x: &[f64], out: &mut [f64]) {
        out[..self.dim].fill(0.0);
    }

    fn velocity_jacobian(&self, _s: f64, _x: &[f64], out: &mut [f64], jac: &mut [f64]) {
        out[..self.dim].fill(0.0);
        jac[..self.dim * self.dim].fill(0.0);
    }

    fn exact_flow(&self, _s: f64, _tau: f64, _x: &mut [f64]) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuParams {
    pub omega: f64,
    pub reversion: f64,
    pub volatility: f64,
    pub m0: f64,
    pub mean: f64,
    pub dt_path: f64,
}

impl Default for OuParams {
    fn default() -> Self {
        Self { omega: 1.0, reversion: 1.0, volatility: 1.0, m0: 1.0, mean: 0.0, dt_path: 1e-4 }
    }
}

const OU_TAG: u64 = 0x4f55_5041_5448;

/// `ψ = M_s (sin²(2πωs) sin 2π(x₁ − B₁) + cos²(2πωs) sin 2π(x₂ − B₂))` with `M` an OU process
/// and `B₁, B₂` Brownian motions, pre-sampled on `[0, horizon]` and linearly interpolated.
#[derive(Debug, Clone)]
pub struct OuStreamField {
    params: OuParams,
    m: Vec<f64>,
    b1: Vec<f64>,
    b2: Vec<f64>,
    horizon: f64,
    potential: Arc<Potential>,
    kappa: f64,
}

impl OuStreamField {
    pub fn new(params: OuParams, horizon: f64, seed: u64, measure: &GibbsMeasure) -> Result<Self> {
        if measure.dim() != 2 {
            return Err(Error::UnsupportedDimension { dim: measure.dim(), reason: "the OU stream field is 2-D" });
        }
        let OuParams { omega, reversion, volatility, dt_path, .. } = params;
        if !(omega > 0.0 && reversion >= 0.0 && volatility >= 0.0 && dt_path > 0.0 && horizon >= 0.0) {
            return Err(Error::InvalidParameter("OU parameters must be positive".into()));
        }
        let steps = (horizon / dt_path).ceil() as usize + 1;
        if steps > 200_000_000 {
            return Err(Error::InvalidParameter(format!(
                "{steps} path points; increase dt_path or shorten the horizon"
            )));
        }
        let base = rng::derive_seed(seed, OU_TAG);
        let decay = (-reversion * dt_path).exp();
        let sd = if reversion > 0.0 {
            volatility * ((1.0 - decay * decay) / (2.0 * reversion)).sqrt()
        } else {
            volatility * dt_path.sqrt()
        };
        let mut m = Vec::with_capacity(steps + 1);
        let mut r = rng::stream(base, 0);
        m.push(params.m0);
        for _ in 0..steps {
            let prev = *m.last().unwrap();
            let z: f64 = StandardNormal.sample(&mut r);
            m.push(params.mean + (prev - params.mean) * decay + sd * z);
        }
        let brownian = |stream: u64| {
            let mut r = rng::stream(base, stream);
            let mut b = Vec::with_capacity(steps + 1);
            b.push(0.0);
            for _ in 0..steps {
                let z: f64 = StandardNormal.sample(&mut r);
                b.push(b.last().unwrap() + dt_path.sqrt() * z);
            }
            b
        };
        let b1 = brownian(1);
        let b2 = brownian(2);
        Ok(Self { params, m, b1, b2, horizon: steps as f64 * dt_path, potential: measure.potential_arc(), kappa: measure.kappa() })
    }

    pub fn params(&self) -> OuParams {
        self.params
    }

    #[inline]
    fn paths(&self, s: f64) -> (f64, f64, f64) {
        let u = (s.max(0.0) / self.params.dt_path).min((self.m.len() - 1) as f64);
        let k = (u.floor() as usize).min(self.m.len() - 2);
        let t = u - k as f64;
        let lerp = |v: &[f64]| v[k] + t * (v[k + 1] - v[k]);
        (lerp(&self.m), lerp(&self.b1), lerp(&self.b2))
    }

    /// Stream value, gradient and Hessian at `(s, x)`.
    pub fn stream(&self, s: f64, x: &[f64]) -> (f64, [f64; 2], [f64; 4]) {
        let (m, b1, b2) = self.paths(s);
        let w = (2.0 * PI * self.params.omega * s).sin();
        let a = w * w;
        let b = 1.0 - a;
        let (s1, c1) = (2.0 * PI * (x[0] - b1)).sin_cos();
        let (s2, c2) = (2.0 * PI * (x[1] - b2)).sin_cos();
        let psi = m * (a * s1 + b * s2);
        let g = [m * a * 2.0 * PI * c1, m * b * 2.0 * PI * c2];
        let k2 = 4.0 * PI * PI;
        let h = [-m * a * k2 * s1, 0.0, 0.0, -m * b * k2 * s2];
        (psi, g, h)
    }
}

impl VelocityField for OuStreamField {
    fn dim(&self) -> usize {
        2
    }

    fn velocity(&self, s: f64, x: &[f64], out: &mut [f64]) {
        let (psi, g, _) = self.stream(s, x);
        skew_field(&self.potential, self.kappa, 0, 1, x, psi, &g, None, out, None);
    }

    fn velocity_jacobian(&self, s: f64, x: &[f64], out: &mut [f64], jac: &mut [f64]) {
        let (psi, g, h) = self.stream(s, x);
        skew_field(&self.potential, self.kappa, 0, 1, x, psi, &g, Some(&h), out, Some(jac));
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }
}

/// Max and rms of `κ div v − ∇U·v` at `samples` uniform points, divergence by centered
/// differences with step `1e-5`. Points within `1e-4` of a kink are redrawn.
pub fn stationarity_residual(
    field: &dyn VelocityField,
    s: f64,
    measure: &GibbsMeasure,
    samples: usize,
    seed: u64,
) -> (f64, f64) {
    let d = field.dim();
    let h = 1e-5;
    let kappa = measure.kappa();
    let u = measure.potential();
    let mut r = rng::stream(seed, 0);
    let mut x = vec![0.0; d];
    let mut v = vec![0.0; d];
    let mut vp = vec![0.0; d];
    let mut vm = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut max_abs = 0.0f64;
    let mut sq = 0.0;
    for _ in 0..samples {
        loop {
            for c in x.iter_mut() {
                *c = r.random::<f64>();
            }
            if field.kink_distance(s, &x) > 1e-4 {
                break;
            }
        }
        field.velocity(s, &x, &mut v);
        u.gradient(&x, &mut g);
        let mut div = 0.0;
        for k in 0..d {
            let c = x[k];
            x[k] = c + h;
            field.velocity(s, &x, &mut vp);
            x[k] = c - h;
            field.velocity(s, &x, &mut vm);
            x[k] = c;
            div += (vp[k] - vm[k]) / (2.0 * h);
        }
        let adv: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
        let res = kappa * div - adv;
        max_abs = max_abs.max(res.abs());
        sq += res * res;
    }
    (max_abs, (sq / samples.max(1) as f64).sqrt())
}

/// Max over `samples` uniform points of the Frobenius norm of the finite-difference Jacobian.
pub fn grad_sup_norm(field: &dyn VelocityField, s: f64, samples: usize, seed: u64) -> f64 {
    let d = field.dim();
    let h = 1e-5;
    let mut r = rng::stream(seed, 1);
    let mut x = vec![0.0; d];
    let mut vp = vec![0.0; d];
    let mut vm = vec![0.0; d];
    let mut best = 0.0f64;
    for _ in 0..samples {
        loop {
            for c in x.iter_mut() {
                *c = r.random::<f64>();
            }
            if field.kink_distance(s, &x) > 1e-4 {
                break;
            }
        }
        let mut fro = 0.0;
        for k in 0..d {
            let c = x[k];
            x[k] = c + h;
            field.velocity(s, &x, &mut vp);
            x[k] = c - h;
            field.velocity(s, &x, &mut vm);
            x[k] = c;
            for a in 0..d {
                let e = (vp[a] - vm[a]) / (2.0 * h);
                fro += e * e;
            }
        }
        best = best.max(fro.sqrt());
    }
    best
}

/// `grad_sup_norm` over the segments `0..segments` of a scheduled field.
pub fn schedule_grad_sup_norm(field: &ScheduledShearField, segments: u64, samples: usize, seed: u64) -> f64 {
    (0..segments)
        .map(|n| grad_sup_norm(field, n as f64 + 0.5, samples, rng::derive_seed(seed, n)))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::GibbsMeasure;

    fn flat() -> GibbsMeasure {
        GibbsMeasure::normalize(Potential::zero(2).unwrap(), 0.1, 64).unwrap()
    }

    fn well(kappa: f64) -> GibbsMeasure {
        GibbsMeasure::normalize(Potential::DoubleWell, kappa, 256).unwrap()
    }

    #[test]
    fn sawtooth_profile_values() {
        let p = ShearProfile::Sawtooth;
        assert_eq!(p.stream(0.0), 0.0);
        assert_eq!(p.stream(0.25), 0.125);
        assert_eq!(p.stream(0.5), 0.25);
        assert!((p.stream(0.75) - 0.125).abs() < 1e-15);
        assert_eq!(p.shear(0.5), 0.0);
        assert!((p.stream(0.25 - 1e-12) - p.stream(0.25)).abs() < 1e-11);
        assert!((p.shear(0.75 - 1e-12) - p.shear(0.75)).abs() < 1e-11);
    }

    #[test]
    fn tent_profile_values() {
        let p = ShearProfile::LocalizedTent;
        assert_eq!(p.shear(0.5), 1.0);
        assert_eq!(p.shear(0.375), 0.0);
        assert!(p.shear(0.625).abs() < 1e-15);
        assert_eq!(p.shear(0.0), 0.0);
        assert_eq!(p.shear(0.9), 0.0);
        assert!((p.stream(0.7) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn profile_derivatives_match_differences() {
        for p in [ShearProfile::Sawtooth, ShearProfile::Sine, ShearProfile::LocalizedTent] {
            for k in 1..200 {
                let y = k as f64 / 200.0 + 1e-3;
                if p.kink_distance(y) < 1e-3 {
                    continue;
                }
                let h = 1e-6;
                let (_, f1, f2) = p.eval(y);
                let d1 = (p.stream(y + h) - p.stream(y - h)) / (2.0 * h);
                let d2 = (p.shear(y + h) - p.shear(y - h)) / (2.0 * h);
                assert!((d1 - f1).abs() < 1e-6, "{p:?} {y}");
                assert!((d2 - f2).abs() < 1e-4, "{p:?} {y}");
            }
        }
    }

    #[test]
    fn pure_shear_vanishes_at_sawtooth_peak() {
        // Orientation 1 in the (1,2) plane: stream depends on x₁, the flow moves x₂.
        let v = ModifiedShear::new(ShearProfile::Sawtooth, 0.0, (0, 1), 1, &flat()).unwrap();
        let mut out = [1.0; 2];
        v.velocity(0.0, &[0.5, 0.37], &mut out);
        assert_eq!(out, [0.0, 0.0]);
    }

    #[test]
    fn tent_zero_outside_support() {
        let v = ModifiedShear::new(ShearProfile::LocalizedTent, 0.0, (0, 1), 1, &flat()).unwrap();
        let mut out = [1.0; 2];
        v.velocity(0.0, &[0.0, 0.3], &mut out);
        assert_eq!(out, [0.0, 0.0]);
    }

    #[test]
    fn modified_sine_shear_matches_closed_form() {
        let kappa = 1.0 / 70.0;
        let m = well(kappa);
        let v = ModifiedShear::new(ShearProfile::Sine, 0.0, (0, 1), 1, &m).unwrap();
        let x = [0.25, 0.3];
        let mut out = [0.0; 2];
        v.velocity(0.0, &x, &mut out);
        // Independent derivatives of U by differences.
        let u = Potential::DoubleWell;
        let h = 1e-6;
        let u1 = (u.value(&[x[0] + h, x[1]]) - u.value(&[x[0] - h, x[1]])) / (2.0 * h);
        let u2 = (u.value(&[x[0], x[1] + h]) - u.value(&[x[0], x[1] - h])) / (2.0 * h);
        let f = (2.0 * PI * x[0]).sin();
        let fp = 2.0 * PI * (2.0 * PI * x[0]).cos();
        let expect = [u2 * f / kappa, (kappa * fp - u1 * f) / kappa];
        assert!((out[0] - expect[0]).abs() < 1e-6);
        assert!((out[1] - expect[1]).abs() < 1e-6);
        // At a minimum ∇U = 0 and F′(1/4) = 0, so the field vanishes there.
        assert!(out[0].abs() < 1e-8 && out[1].abs() < 1e-8);
        let y = [0.4, 0.55];
        v.velocity(0.0, &y, &mut out);
        assert!(out[0].abs() > 1e-3);
    }

    #[test]
    fn orientation_moves_the_expected_coordinate() {
        let m = flat();
        let a = ModifiedShear::new(ShearProfile::Sine, 0.1, (0, 1), 1, &m).unwrap();
        let b = ModifiedShear::new(ShearProfile::Sine, 0.1, (0, 1), 2, &m).unwrap();
        let x = [0.3, 0.8];
        let (mut va, mut vb) = ([0.0; 2], [0.0; 2]);
        a.velocity(0.0, &x, &mut va);
        b.velocity(0.0, &[x[1], x[0]], &mut vb);
        assert_eq!(va[0], 0.0);
        assert_eq!(vb[1], 0.0);
        assert_eq!(va[1], -vb[0]);
    }

    #[test]
    fn modified_shear_reduces_to_plain_shear() {
        let m = flat();
        for p in [ShearProfile::Sawtooth, ShearProfile::Sine, ShearProfile::LocalizedTent] {
            let v = ModifiedShear::new(p, 0.3, (0, 1), 1, &m).unwrap();
            let mut out = [0.0; 2];
            for k in 0..100 {
                let x = [k as f64 / 100.0, 0.5];
                v.velocity(0.0, &x, &mut out);
                assert!((out[1] - p.shear(x[0] - 0.3)).abs() <= 1e-14);
                assert_eq!(out[0], 0.0);
            }
        }
    }

    #[test]
    fn jacobian_matches_differences() {
        let m = well(0.1);
        let sched = ShearSchedule::new(4, 2, ShearProfile::Sine).unwrap();
        let f = ScheduledShearField::new(sched, &m).unwrap();
        let ou = OuStreamField::new(OuParams { dt_path: 1e-3, ..Default::default() }, 5.0, 3, &m).unwrap();
        let fields: [&dyn VelocityField; 2] = [&f, &ou];
        for field in fields {
            let mut r = rng::stream(1, 0);
            for _ in 0..100 {
                let s = r.random::<f64>() * 4.0;
                let x = [r.random::<f64>(), r.random::<f64>()];
                let mut v = [0.0; 2];
                let mut j = [0.0; 4];
                field.velocity_jacobian(s, &x, &mut v, &mut j);
                let h = 1e-6;
                for b in 0..2 {
                    let mut xp = x;
                    let mut xm = x;
                    xp[b] += h;
                    xm[b] -= h;
                    let (mut vp, mut vm) = ([0.0; 2], [0.0; 2]);
                    field.velocity(s, &xp, &mut vp);
                    field.velocity(s, &xm, &mut vm);
                    for a in 0..2 {
                        let fd = (vp[a] - vm[a]) / (2.0 * h);
                        assert!((fd - j[a * 2 + b]).abs() < 1e-5 * (1.0 + fd.abs()));
                    }
                }
            }
        }
    }

    #[test]
    fn schedule_is_deterministic_and_uniform() {
        let a = ShearSchedule::new(9, 3, ShearProfile::Sawtooth).unwrap();
        let b = ShearSchedule::with_options(9, 3, ShearProfile::Sawtooth, (0.0, 1.0), OrientationPolicy::Random, 100).unwrap();
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        a.write_csv(300, &mut ca).unwrap();
        b.write_csv(300, &mut cb).unwrap();
        assert_eq!(ca, cb);
        let mut pairs = [0usize; 3];
        for n in 0..3000 {
            let t = a.tuple(n);
            assert!(t.i < t.j && t.j < 3);
            pairs[t.i + t.j - 1] += 1;
        }
        assert!(pairs.iter().all(|&c| c > 900), "{pairs:?}");
    }

    #[test]
    fn field_uses_floor_segment() {
        let m = flat();
        let f = ScheduledShearField::new(ShearSchedule::new(2, 2, ShearProfile::Sine).unwrap(), &m).unwrap();
        let direct = f.segment(2);
        let x = [0.123, 0.456];
        let (mut a, mut b) = ([0.0; 2], [0.0; 2]);
        f.velocity(2.7, &x, &mut a);
        direct.velocity(0.0, &x, &mut b);
        assert_eq!(a, b);
        assert_eq!(f.segment_end(2.7), 3.0);
    }

    #[test]
    fn zero_beta_gives_zero_field() {
        let m = well(0.1);
        let f = ScheduledShearField::new(
            ShearSchedule::with_options(2, 2, ShearProfile::Sine, (0.0, 0.0), OrientationPolicy::Random, 0).unwrap(),
            &m,
        )
        .unwrap();
        let mut v = [1.0; 2];
        f.velocity(0.5, &[0.3, 0.9], &mut v);
        assert_eq!(v, [0.0, 0.0]);
    }

    #[test]
    fn pure_shears_are_divergence_free() {
        let m = flat();
        for p in [ShearProfile::Sawtooth, ShearProfile::Sine, ShearProfile::LocalizedTent] {
            let f = ScheduledShearField::new(ShearSchedule::new(1, 2, p).unwrap(), &m).unwrap();
            let (max_abs, _) = stationarity_residual(&f, 0.5, &m, 2000, 3);
            assert!(max_abs <= 1e-8, "{p:?} {max_abs}");
        }
    }

    #[test]
    fn sup_norms_of_plain_shears() {
        let m = flat();
        let sine = ModifiedShear::new(ShearProfile::Sine, 0.0, (0, 1), 1, &m).unwrap();
        let saw = ModifiedShear::new(ShearProfile::Sawtooth, 0.0, (0, 1), 1, &m).unwrap();
        let g_sine = grad_sup_norm(&sine, 0.0, 20_000, 1);
        let g_saw = grad_sup_norm(&saw, 0.0, 2000, 1);
        assert!((g_sine / (4.0 * PI * PI) - 1.0).abs() < 0.01, "{g_sine}");
        assert!((g_saw / 4.0 - 1.0).abs() < 0.01, "{g_saw}");
    }

    #[test]
    fn exact_flow_for_pure_shear() {
        let m = flat();
        let v = ModifiedShear::new(ShearProfile::Sine, 0.0, (0, 1), 1, &m).unwrap();
        let mut x = [0.25, 0.1];
        assert!(v.exact_flow(0.0, 1.0, &mut x));
        assert!((x[1] - 0.1).abs() < 1e-15);
    }
}
