//! Closed-form evaluators: `H(A)`, `A₀`, dissipation and mixing time bounds, Poincaré, Nash and
//! Weyl constants, and the discrete-time analogues. Unspecified universal constants default to 1,
//! so reported values are shapes up to such constants.

use std::f64::consts::{LN_2, PI};
use std::io::Write;
use std::sync::Arc;

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::metrics::MixingFit;

/// Mixing rate `h`: continuous, strictly decreasing, vanishing at infinity.
#[derive(Clone)]
pub enum RateFunction {
    /// `h(t) = D e^{−γt}`.
    Exponential { d: f64, gamma: f64 },
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for RateFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RateFunction::Exponential { d, gamma } => write!(f, "Exponential {{ d: {d}, gamma: {gamma} }}"),
            RateFunction::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl RateFunction {
    pub fn exponential(d: f64, gamma: f64) -> Self {
        RateFunction::Exponential { d, gamma }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            RateFunction::Exponential { d, gamma } => d * (-gamma * t).exp(),
            RateFunction::Custom(f) => f(t),
        }
    }

    /// `h⁻¹(y)`; bisection for custom rates.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        match self {
            RateFunction::Exponential { d, gamma } => Ok(((d / y).ln() / gamma).max(0.0)),
            RateFunction::Custom(_) => {
                if y >= self.eval(0.0) {
                    return Ok(0.0);
                }
                let mut hi = 1.0;
                while self.eval(hi) > y {
                    hi *= 2.0;
                    if hi > 1e300 {
                        return Err(Error::Bracket("rate function does not decay below the target".into()));
                    }
                }
                let mut lo = 0.0;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.eval(mid) > y {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Ok(0.5 * (lo + hi))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let h0 = self.eval(0.0);
        if !(h0 > 0.0 && h0.is_finite()) {
            return Err(Error::Bracket(format!("h(0) = {h0} must be positive and finite")));
        }
        if let RateFunction::Exponential { gamma, .. } = self {
            if !(*gamma > 0.0) {
                return Err(Error::Bracket(format!("decay rate {gamma} must be positive")));
            }
        } else {
            let mut prev = h0;
            for k in -6..=12 {
                let v = self.eval(10f64.powi(k));
                if !(v >= 0.0 && (v < prev || v == 0.0)) {
                    return Err(Error::Bracket(format!("h is not strictly decreasing at t = 1e{k}")));
                }
                prev = v;
            }
        }
        Ok(())
    }
}

/// Bisection in `ln H` on a monotone sign change of `g`, positive below the root.
fn bisect_log<G: Fn(f64) -> f64>(g: G, lo: f64) -> Result<f64> {
    if !(g(lo) >= 0.0) {
        return Err(Error::Bracket(format!("no sign change at the lower bracket {lo}")));
    }
    let mut a = lo.ln();
    let mut b = a + 1.0;
    let mut doublings = 0;
    while g(b.exp()) > 0.0 {
        a = b;
        b += (b - a).abs().max(1.0) * 2.0;
        doublings += 1;
        if doublings > 200 || !b.is_finite() {
            return Err(Error::Bracket("upper bracket not found; is h decreasing to zero?".into()));
        }
    }
    for _ in 0..300 {
        let m = 0.5 * (a + b);
        if m == a || m == b {
            break;
        }
        if g(m.exp()) > 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    Ok((0.5 * (a + b)).exp())
}

/// Unique `H` with `κ/(4H) = h(√(A/(H‖∇v‖))/16)`.
pub fn solve_h(a: f64, kappa: f64, h: &RateFunction, grad_v_norm: f64) -> Result<f64> {
    if !(a > 0.0 && kappa > 0.0 && grad_v_norm > 0.0) {
        return Err(Error::InvalidParameter("A, κ and ‖∇v‖ must be positive".into()));
    }
    h.validate()?;
    let g = |hh: f64| kappa / (4.0 * hh) - h.eval((a / (hh * grad_v_norm)).sqrt() / 16.0);
    bisect_log(g, kappa / (4.0 * h.eval(0.0)))
}

/// Relative residual of the defining equation of `H`.
pub fn h_residual(hh: f64, a: f64, kappa: f64, h: &RateFunction, grad_v_norm: f64) -> f64 {
    let lhs = kappa / (4.0 * hh);
    (lhs - h.eval((a / (hh * grad_v_norm)).sqrt() / 16.0)).abs() / lhs
}

/// `16(1 + ln 2)/H(A)`.
pub fn tdis_from_h(hh: f64) -> f64 {
    16.0 * (1.0 + LN_2) / hh
}

/// Constant that makes the closed form dominate `16(1+ln2)/H` for exponential `h`:
/// with `T = 1/H = a e^{−b√T}`, `a = 4D/κ`, `b = γ√A/(16√‖∇v‖)`, one has
/// `T ≤ (1 + ln²(ab²))/b²` and `ab² = x/64` with `x = Dγ²A/(κ‖∇v‖)`; finally
/// `1 + ln²(x/64) ≤ (1 + 2 ln²64)(1 + ln²x)`.
pub fn tdis_closed_form_constant() -> f64 {
    16.0 * (1.0 + LN_2) * 256.0 * (1.0 + 2.0 * 64f64.ln().powi(2))
}

/// `C‖∇v‖/(γ²A) · (1 + ln²(Dγ²A/(κ‖∇v‖)))`.
pub fn tdis_closed_form(c: f64, kappa: f64, a: f64, d: f64, gamma: f64, grad_v_norm: f64) -> f64 {
    let x = d * gamma * gamma * a / (kappa * grad_v_norm);
    c * grad_v_norm / (gamma * gamma * a) * (1.0 + x.ln().powi(2))
}

/// `C′κ‖∇v‖/γ² · ln²(C′D/κ)`.
pub fn a0_exponential(c_prime: f64, kappa: f64, d: f64, gamma: f64, grad_v_norm: f64) -> f64 {
    c_prime * kappa * grad_v_norm / (gamma * gamma) * (c_prime * d / kappa).ln().powi(2)
}

/// Smallest `A` meeting both threshold conditions that involve the eigenvalue-growth level `Λ`.
pub fn a0_from_lambda(kappa: f64, h: &RateFunction, grad_v_norm: f64, cap: f64) -> Result<f64> {
    let first = 256.0 * cap * grad_v_norm * h.inverse(kappa / (4.0 * cap))?.powi(2);
    let target = kappa / (4.0 * h.eval(1.0 / (32.0 * 2f64.sqrt() * grad_v_norm)));
    // H(A) increases with A; find the first A with H(A) ≥ target.
    let g = |a: f64| target - solve_h(a, kappa, h, grad_v_norm).unwrap_or(f64::INFINITY);
    let second = if g(1e-12) <= 0.0 { 0.0 } else { bisect_log(g, 1e-12)? };
    Ok(first.max(second))
}

/// Level `Λ` above which consecutive eigenvalues at most double, from a sorted spectrum
/// (the zero ground state is skipped).
pub fn growth_level(eigenvalues: &[f64]) -> Option<f64> {
    let pos: Vec<f64> = eigenvalues.iter().copied().filter(|e| *e > 1e-12 * eigenvalues.last().copied().unwrap_or(1.0)).collect();
    if pos.len() < 2 {
        return None;
    }
    let mut level = pos[0];
    for w in pos.windows(2) {
        if w[1] > 2.0 * w[0] {
            level = w[1] * (1.0 + 1e-12);
        }
    }
    Some(level)
}

/// `(1/√(πd(d−2))) (Γ(d)/Γ(d/2))^{1/d}` for `d ≥ 3`.
pub fn nash_constant(d: usize) -> Option<f64> {
    if d < 3 {
        return None;
    }
    let df = d as f64;
    Some((ln_gamma(df) - ln_gamma(df / 2.0)).exp().powf(1.0 / df) / (PI * df * (df - 2.0)).sqrt())
}

/// `ω_d/(2π)^d · (λ/κ)^{d/2}`.
pub fn weyl_leading(d: usize, kappa: f64, lambda: f64) -> f64 {
    let df = d as f64;
    let omega = PI.powf(df / 2.0) / (ln_gamma(df / 2.0 + 1.0)).exp();
    omega / (2.0 * PI).powf(df) * (lambda / kappa).powf(df / 2.0)
}

/// Poincaré lower bound on `λ₀` as printed: `2π e^{−osc/(2κ)}`.
pub fn poincare_as_stated(kappa: f64, osc: f64) -> f64 {
    2.0 * PI * (-osc / (2.0 * kappa)).exp()
}

/// Variant consistent with the flat torus: `4π²κ e^{−osc/κ}`.
pub fn poincare_corrected(kappa: f64, osc: f64) -> f64 {
    4.0 * PI * PI * kappa * (-osc / kappa).exp()
}

/// `(1/κ) e^{osc/(2κ)}`.
pub fn tdis_poincare(kappa: f64, osc: f64) -> f64 {
    (osc / (2.0 * kappa)).exp() / kappa
}

/// `C d (1 + osc/κ − ln(κ t_dis)) t_dis`, with the bracket clamped at zero.
/// Returns the bound and whether the clamp was active.
pub fn tmix_from_tdis(c: f64, d: usize, kappa: f64, osc: f64, tdis: f64) -> (f64, bool) {
    let factor = 1.0 + osc / kappa - (kappa * tdis).ln();
    (c * d as f64 * factor.max(0.0) * tdis, factor < 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants {
    pub c: f64,
    pub c_prime: f64,
}

impl Default for BoundConstants {
    fn default() -> Self {
        Self { c: 1.0, c_prime: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub kappa: f64,
    pub a: f64,
    pub d_fit: f64,
    pub gamma: f64,
    pub grad_v_norm: f64,
    pub osc: f64,
    pub dim: usize,
    pub h: f64,
    pub a0: f64,
    /// `16(1+ln2)/H(A)`.
    pub tdis_bound: f64,
    /// Closed form with the universal constant `C`.
    pub tdis_closed: f64,
    pub tmix_bound: f64,
    pub tmix_clamped: bool,
    pub tdis_poincare: f64,
    pub poincare_as_stated: f64,
    pub poincare_corrected: f64,
    pub nash_cd: Option<f64>,
}

impl BoundReport {
    pub fn weyl(&self, lambda: f64) -> f64 {
        weyl_leading(self.dim, self.kappa, lambda)
    }

    pub fn csv_header() -> &'static str {
        "kappa,A,D,gamma,grad_v_norm,osc,d,H,A0,tdis_bound,tdis_closed,tmix_bound,tmix_clamped,tdis_poincare,poincare_as_stated,poincare_corrected,nash_Cd"
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::csv_header())?;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.kappa,
            self.a,
            self.d_fit,
            self.gamma,
            self.grad_v_norm,
            self.osc,
            self.dim,
            self.h,
            self.a0,
            self.tdis_bound,
            self.tdis_closed,
            self.tmix_bound,
            self.tmix_clamped,
            self.tdis_poincare,
            self.poincare_as_stated,
            self.poincare_corrected,
            self.nash_cd.map(|c| c.to_string()).unwrap_or_else(|| "NA".into())
        )
    }
}

/// Every bound for exponential mixing with the fitted `(D, γ)`. `a = None` uses `A₀`.
pub fn bounds_report(
    kappa: f64,
    a: Option<f64>,
    fit: &MixingFit,
    grad_v_norm: f64,
    osc: f64,
    dim: usize,
    consts: BoundConstants,
) -> Result<BoundReport> {
    if !(fit.gamma > 0.0) {
        return Err(Error::InvalidParameter(format!("fitted decay rate {} is not positive", fit.gamma)));
    }
    let a0 = a0_exponential(consts.c_prime, kappa, fit.d, fit.gamma, grad_v_norm);
    let a = a.unwrap_or(a0);
    let rate = RateFunction::exponential(fit.d, fit.gamma);
    let h = solve_h(a, kappa, &rate, grad_v_norm)?;
    let tdis_bound = tdis_from_h(h);
    let tdis_closed = tdis_closed_form(consts.c, kappa, a, fit.d, fit.gamma, grad_v_norm);
    let (tmix_bound, tmix_clamped) = tmix_from_tdis(consts.c, dim, kappa, osc, tdis_closed);
    Ok(BoundReport {
        kappa,
        a,
        d_fit: fit.d,
        gamma: fit.gamma,
        grad_v_norm,
        osc,
        dim,
        h,
        a0,
        tdis_bound,
        tdis_closed,
        tmix_bound,
        tmix_clamped,
        tdis_poincare: tdis_poincare(kappa, osc),
        poincare_as_stated: poincare_as_stated(kappa, osc),
        poincare_corrected: poincare_corrected(kappa, osc),
        nash_cd: nash_constant(dim),
    })
}

/// `sup{λ : h(√A/(2√λ)) ≤ κ/(2λ)}`.
pub fn discrete_h(a: f64, kappa: f64, h: &RateFunction) -> Result<f64> {
    if !(a > 0.0 && kappa > 0.0) {
        return Err(Error::InvalidParameter("A and κ must be positive".into()));
    }
    h.validate()?;
    let g = |l: f64| kappa / (2.0 * l) - h.eval(a.sqrt() / (2.0 * l.sqrt()));
    bisect_log(g, kappa / (2.0 * h.eval(0.0)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteBounds {
    pub h: f64,
    pub n_dis: f64,
    pub n_mix: f64,
    pub n_mix_clamped: bool,
}

pub fn discrete_bounds(a: f64, kappa: f64, h: &RateFunction, osc: f64, dim: usize, c: f64) -> Result<DiscreteBounds> {
    let hh = discrete_h(a, kappa, h)?;
    let n_dis = c * a / hh;
    let factor = 1.0 + osc / kappa - (kappa * n_dis / a).ln();
    Ok(DiscreteBounds { h: hh, n_dis, n_mix: c * dim as f64 * factor.max(0.0) * n_dis, n_mix_clamped: factor < 0.0 })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// `(t_dis, t_mix)` closed-form bounds at `A = A₀` under `D = √d e^{1/κ}`, `γ = 1`, `‖∇v‖ = √d/κ`.
pub fn heuristic_scaling(kappa: f64, dim: usize, osc: f64, consts: BoundConstants) -> (f64, f64) {
    let sd = (dim as f64).sqrt();
    let (d, gamma, g) = (sd * (1.0 / kappa).exp(), 1.0, sd / kappa);
    let a0 = a0_exponential(consts.c_prime, kappa, d, gamma, g);
    let tdis = tdis_closed_form(consts.c, kappa, a0, d, gamma, g);
    (tdis, tmix_from_tdis(consts.c, dim, kappa, osc, tdis).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn h_residual_is_tiny() {
        let h = RateFunction::exponential(1.0, 1.0);
        let hh = solve_h(1e4, 0.1, &h, 10.0).unwrap();
        assert!(h_residual(hh, 1e4, 0.1, &h, 10.0) <= 1e-10);
    }

    #[test]
    fn h_increases_with_a_and_decreases_with_d() {
        let h = RateFunction::exponential(2.0, 0.5);
        let mut last = 0.0;
        for k in 0..10 {
            let a = 10.0 * 4f64.powi(k);
            let v = solve_h(a, 0.05, &h, 3.0).unwrap();
            assert!(v > last);
            last = v;
        }
        let small = solve_h(1e3, 0.05, &RateFunction::exponential(20.0, 0.5), 3.0).unwrap();
        assert!(small < solve_h(1e3, 0.05, &h, 3.0).unwrap());
    }

    #[test]
    fn custom_rate_matches_exponential() {
        let e = RateFunction::exponential(3.0, 0.7);
        let c = RateFunction::Custom(Arc::new(|t| 3.0 * (-0.7 * t).exp()));
        let (a, b) = (solve_h(500.0, 0.1, &e, 2.0).unwrap(), solve_h(500.0, 0.1, &c, 2.0).unwrap());
        assert!((a / b - 1.0).abs() < 1e-12);
        assert!((c.inverse(0.5).unwrap() - e.inverse(0.5).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn malformed_rate_is_rejected() {
        let bad = RateFunction::Custom(Arc::new(|_| 1.0));
        assert!(matches!(solve_h(10.0, 0.1, &bad, 1.0), Err(Error::Bracket(_))));
    }

    #[test]
    fn closed_form_dominates() {
        let mut r = rng::stream(11, 0);
        let c = tdis_closed_form_constant();
        for _ in 0..100 {
            let kappa = 10f64.powf(-2.0 + 1.5 * r.random::<f64>());
            let d = 10f64.powf(4.0 * r.random::<f64>());
            let gamma = 10f64.powf(-1.0 + 2.0 * r.random::<f64>());
            let g = 10f64.powf(3.0 * r.random::<f64>());
            let a = 10f64.powf(1.0 + 5.0 * r.random::<f64>());
            let hh = solve_h(a, kappa, &RateFunction::exponential(d, gamma), g).unwrap();
            assert!(tdis_closed_form(c, kappa, a, d, gamma, g) >= tdis_from_h(hh));
        }
    }

    #[test]
    fn nash_constant_in_three_dimensions() {
        let expect = (1.0 / (3.0 * PI).sqrt()) * (2.0 / (PI.sqrt() / 2.0)).powf(1.0 / 3.0);
        assert!((nash_constant(3).unwrap() - expect).abs() < 1e-14);
        assert!(nash_constant(2).is_none());
    }

    #[test]
    fn weyl_in_two_dimensions() {
        assert!((weyl_leading(2, 0.1, 3.0) - 3.0 / (4.0 * PI * 0.1)).abs() < 1e-12);
    }

    #[test]
    fn tmix_factor_is_clamped() {
        let (b, clamped) = tmix_from_tdis(1.0, 2, 0.1, 0.0, 1e3);
        assert!(clamped && b == 0.0);
    }

    #[test]
    fn discrete_h_properties() {
        let h = RateFunction::exponential(1.0, 1.0);
        let v = discrete_h(100.0, 0.1, &h).unwrap();
        let lhs = h.eval(100f64.sqrt() / (2.0 * v.sqrt()));
        assert!((lhs - 0.1 / (2.0 * v)).abs() <= 1e-10 * lhs);
        let mut last = 0.0;
        for a in [1.0, 10.0, 100.0, 1e3, 1e4] {
            let v = discrete_h(a, 0.1, &h).unwrap();
            assert!(v >= last);
            last = v;
        }
        assert!(discrete_h(100.0, 0.1, &RateFunction::exponential(10.0, 1.0)).unwrap() < v);
    }

    #[test]
    fn growth_level_of_flat_spectrum() {
        let c = 4.0 * PI * PI;
        let ev = [0.0, c, c, c, c, 2.0 * c, 2.0 * c, 4.0 * c];
        assert_eq!(growth_level(&ev), Some(c));
        let gap = [0.0, 1.0, 10.0, 12.0];
        assert!(growth_level(&gap).unwrap() > 10.0);
    }

    #[test]
    fn a0_from_lambda_meets_both_conditions() {
        let h = RateFunction::exponential(5.0, 1.0);
        let (kappa, g, cap) = (0.05, 20.0, 4.0 * PI * PI * 0.05);
        let a0 = a0_from_lambda(kappa, &h, g, cap).unwrap();
        let target = kappa / (4.0 * h.eval(1.0 / (32.0 * 2f64.sqrt() * g)));
        assert!(solve_h(a0 * (1.0 + 1e-9), kappa, &h, g).unwrap() >= target * (1.0 - 1e-9));
        assert!(a0 >= 256.0 * cap * g * h.inverse(kappa / (4.0 * cap)).unwrap().powi(2));
    }
}
