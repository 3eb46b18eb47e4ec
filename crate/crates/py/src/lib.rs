//! Python bindings: Gibbs measures, drift fields, ensemble simulation and the mixing,
//! dissipation, spectral and bound diagnostics.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use mixdrift::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidParameter(_)
        | Error::DimensionMismatch { .. }
        | Error::UnsupportedDimension { .. }
        | Error::UnsupportedPotential(_)
        | Error::NonFinite { .. }
        | Error::Empty(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

#[pymodule]
mod pymixdrift {
    use std::collections::HashMap;
    use std::time::Duration;

    use pyo3::exceptions::PyValueError;
    use pyo3::prelude::*;

    use mixdrift::bounds::{bounds_report, BoundConstants};
    use mixdrift::discrete::{automorphism_correlation, ToralAutomorphism};
    use mixdrift::flows::{lyapunov_top, FlowOptions};
    use mixdrift::metrics::{correlation_decay, fit_rate, histogram_2d, tv, CorrelationSeries, MixingFit, Observable};
    use mixdrift::pde::{default_dictionary, dissipation_time, galerkin_spectrum, PdeGrid, TdisOptions};
    use mixdrift::sampler::{basin_occupancy, DtPolicy, Ensemble, SdeConfig};
    use mixdrift::velocity::{
        stationarity_residual, OuParams, OuStreamField, ScheduledShearField, ShearProfile, ShearSchedule, VelocityField,
        ZeroField,
    };
    use mixdrift::{GibbsMeasure, Potential, Profile1d};

    use super::py_err;

    /// Normalized Gibbs measure `e^{-U/κ}/Z` on the unit torus.
    #[pyclass(name = "GibbsMeasure", module = "pymixdrift", frozen)]
    pub struct PyGibbs {
        inner: GibbsMeasure,
    }

    #[pymethods]
    impl PyGibbs {
        /// `potential` is one of `"zero"`, `"double-well"`, `"sin-squared"`.
        #[new]
        #[pyo3(signature = (potential, kappa, dim = 2, quadrature = 512))]
        fn new(potential: &str, kappa: f64, dim: usize, quadrature: usize) -> PyResult<Self> {
            let u = match potential {
                "zero" => Potential::zero(dim),
                "double-well" if dim == 2 => Ok(Potential::DoubleWell),
                "double-well" => return Err(PyValueError::new_err("the double well is two-dimensional")),
                "sin-squared" => Potential::separable(dim, Profile1d::SinSquared),
                other => return Err(PyValueError::new_err(format!("unknown potential '{other}'"))),
            }
            .map_err(py_err)?;
            Ok(Self { inner: GibbsMeasure::normalize(u, kappa, quadrature).map_err(py_err)? })
        }

        #[getter]
        fn kappa(&self) -> f64 {
            self.inner.kappa()
        }

        #[getter]
        fn dim(&self) -> usize {
            self.inner.dim()
        }

        #[getter]
        fn z(&self) -> f64 {
            self.inner.z()
        }

        #[getter]
        fn osc(&self) -> f64 {
            self.inner.osc()
        }

        fn density(&self, x: Vec<f64>) -> PyResult<f64> {
            if x.len() != self.inner.dim() {
                return Err(PyValueError::new_err("point has the wrong dimension"));
            }
            Ok(self.inner.density(&x))
        }

        fn minima(&self) -> Option<Vec<Vec<f64>>> {
            self.inner.potential().minima()
        }

        fn sample(&self, py: Python<'_>, n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
            let pts = py.detach(|| self.inner.sample(n, seed)).map_err(py_err)?;
            Ok(pts.into_iter().map(|p| p.into_coords()).collect())
        }

        /// Exact μ-mass of each cell of a `bins × bins` grid, row-major with `x₁` slow.
        fn bin_masses(&self, bins: usize) -> PyResult<Vec<f64>> {
            self.inner.bin_masses_2d(bins).map_err(py_err)
        }

        fn spectrum(&self, py: Python<'_>, modes: usize) -> PyResult<Vec<f64>> {
            py.detach(|| galerkin_spectrum(&self.inner, modes)).map_err(py_err)
        }

        fn __repr__(&self) -> String {
            format!("GibbsMeasure({}, kappa={}, dim={})", self.inner.potential().kind().as_str(), self.inner.kappa(), self.inner.dim())
        }
    }

    /// μ-preserving drift field: a random shear schedule, the OU stream field, or zero.
    #[pyclass(name = "Field", module = "pymixdrift", frozen)]
    pub struct PyField {
        inner: Box<dyn VelocityField>,
    }

    #[pymethods]
    impl PyField {
        /// i.i.d. modified shears; `profile` is `"sawtooth"`, `"sine"` or `"localized-tent"`.
        #[staticmethod]
        #[pyo3(signature = (measure, seed, profile = "sawtooth"))]
        fn schedule(measure: &PyGibbs, seed: u64, profile: &str) -> PyResult<Self> {
            let p = ShearProfile::parse(profile).map_err(py_err)?;
            let s = ShearSchedule::new(seed, measure.inner.dim(), p).map_err(py_err)?;
            Ok(Self { inner: Box::new(ScheduledShearField::new(s, &measure.inner).map_err(py_err)?) })
        }

        /// OU-modulated stream field with paths sampled on `[0, horizon]`.
        #[staticmethod]
        #[pyo3(signature = (measure, horizon, seed, dt_path = 1e-4))]
        fn ou(measure: &PyGibbs, horizon: f64, seed: u64, dt_path: f64) -> PyResult<Self> {
            let params = OuParams { dt_path, ..OuParams::default() };
            Ok(Self { inner: Box::new(OuStreamField::new(params, horizon, seed, &measure.inner).map_err(py_err)?) })
        }

        #[staticmethod]
        fn zero(dim: usize) -> Self {
            Self { inner: Box::new(ZeroField { dim }) }
        }

        fn velocity(&self, s: f64, x: Vec<f64>) -> PyResult<Vec<f64>> {
            if x.len() != self.inner.dim() {
                return Err(PyValueError::new_err("point has the wrong dimension"));
            }
            let mut v = vec![0.0; x.len()];
            self.inner.velocity(s, &x, &mut v);
            Ok(v)
        }

        /// `(max, rms)` of `κ div v − ∇U·v` at random points; zero for μ-preserving fields.
        #[pyo3(signature = (measure, s = 0.0, samples = 10_000, seed = 0))]
        fn stationarity_residual(&self, measure: &PyGibbs, s: f64, samples: usize, seed: u64) -> (f64, f64) {
            stationarity_residual(self.inner.as_ref(), s, &measure.inner, samples, seed)
        }
    }

    fn dt_policy(dt: Option<f64>, c: f64, dt_min: f64, dt_max: f64) -> DtPolicy {
        match dt {
            Some(dt) => DtPolicy::Fixed(dt),
            None => DtPolicy::Adaptive { c, dt_min, dt_max },
        }
    }

    /// Euler–Maruyama ensemble; returns `[(t, points), ...]` at `checkpoints`.
    /// Starts from `start` when given, else from exact μ-samples.
    #[pyfunction]
    #[pyo3(signature = (measure, field, a, n, checkpoints, seed, start = None, dt = None, c = 0.02, dt_min = 1e-7, dt_max = 1e-2))]
    #[allow(clippy::too_many_arguments)]
    fn simulate(
        py: Python<'_>,
        measure: &PyGibbs,
        field: &PyField,
        a: f64,
        n: usize,
        checkpoints: Vec<f64>,
        seed: u64,
        start: Option<Vec<f64>>,
        dt: Option<f64>,
        c: f64,
        dt_min: f64,
        dt_max: f64,
    ) -> PyResult<Vec<(f64, Vec<Vec<f64>>)>> {
        let m = &measure.inner;
        let t_end = checkpoints.iter().cloned().fold(0.0, f64::max);
        let cfg = SdeConfig { kappa: m.kappa(), a, dt: dt_policy(dt, c, dt_min, dt_max), t_end, seed };
        let snaps = py
            .detach(|| {
                let mut e = match &start {
                    Some(x) => Ensemble::from_point(x, n, seed)?,
                    None => Ensemble::from_gibbs(m, n, seed)?,
                };
                e.evolve(&cfg, field.inner.as_ref(), m.potential(), &checkpoints)
            })
            .map_err(py_err)?;
        Ok(snaps.into_iter().map(|s| (s.t, s.points().map(<[f64]>::to_vec).collect())).collect())
    }

    /// Fraction of `points` nearest to each potential minimum.
    #[pyfunction]
    fn occupancy(measure: &PyGibbs, points: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let minima = measure.inner.potential().minima().ok_or_else(|| PyValueError::new_err("potential has no listed minima"))?;
        let dim = measure.inner.dim();
        let snap = mixdrift::sampler::Snapshot { t: 0.0, dim, coords: points.concat() };
        if snap.coords.len() != points.len() * dim {
            return Err(PyValueError::new_err("points have the wrong dimension"));
        }
        basin_occupancy(&snap, &minima).map_err(py_err)
    }

    /// Total-variation distance of a 2-D point histogram to exact bin masses.
    #[pyfunction]
    fn histogram_tv(measure: &PyGibbs, points: Vec<Vec<f64>>, bins: usize) -> PyResult<f64> {
        let masses = measure.inner.bin_masses_2d(bins).map_err(py_err)?;
        Ok(tv(&histogram_2d(points.iter().map(Vec::as_slice), bins), &masses))
    }

    fn series_dict(s: &CorrelationSeries) -> HashMap<&'static str, Vec<f64>> {
        HashMap::from([
            ("n", s.n.iter().map(|v| *v as f64).collect()),
            ("corr", s.corr.clone()),
            ("floor", s.floor.clone()),
        ])
    }

    /// `c(n)` for `f = g = sin(2π mode·x)` normalized to unit `Ḣ¹(μ)`.
    #[pyfunction]
    #[pyo3(signature = (measure, field, mode, n_max, samples, seed, rtol = 1e-10))]
    #[allow(clippy::too_many_arguments)]
    fn correlation(
        py: Python<'_>,
        measure: &PyGibbs,
        field: &PyField,
        mode: Vec<i64>,
        n_max: u64,
        samples: usize,
        seed: u64,
        rtol: f64,
    ) -> PyResult<HashMap<&'static str, Vec<f64>>> {
        let f = Observable::sin(&mode);
        let opts = FlowOptions { rtol, atol: rtol * 1e-2, ..FlowOptions::default() };
        let s = py
            .detach(|| correlation_decay(field.inner.as_ref(), &measure.inner, &f, &f, n_max, samples, seed, &opts))
            .map_err(py_err)?;
        Ok(series_dict(&s))
    }

    /// Exponential fit `D e^{-γn}`; returns `(D, gamma, residual)`.
    #[pyfunction]
    fn fit_decay(corr: Vec<f64>, floor: Vec<f64>) -> PyResult<(f64, f64, f64)> {
        if corr.len() != floor.len() {
            return Err(PyValueError::new_err("corr and floor differ in length"));
        }
        let s = CorrelationSeries { n: (0..corr.len() as u64).collect(), corr, floor };
        let fit = fit_rate(&s).map_err(py_err)?;
        Ok((fit.d, fit.gamma, fit.residual))
    }

    /// First time every dictionary element's `L²(μ)` norm halves under the backward equation.
    /// Returns `None` when `t_max` or the wall-clock budget runs out first.
    #[pyfunction]
    #[pyo3(signature = (measure, field, a, n = 32, t_max = 1e7, budget_secs = None))]
    fn dissipation(
        py: Python<'_>,
        measure: &PyGibbs,
        field: &PyField,
        a: f64,
        n: usize,
        t_max: f64,
        budget_secs: Option<f64>,
    ) -> PyResult<Option<f64>> {
        let opts = TdisOptions { t_max, budget: budget_secs.map(Duration::from_secs_f64), ..Default::default() };
        py.detach(|| {
            let grid = PdeGrid::new(&measure.inner, n)?;
            let dict = default_dictionary(&grid)?;
            dissipation_time(&grid, a, field.inner.as_ref(), &dict, &opts)
        })
        .map(|r| r.t_dis)
        .map_err(py_err)
    }

    /// Top Lyapunov exponent and its 99% half-width.
    #[pyfunction]
    #[pyo3(signature = (measure, field, steps, seed, rtol = 1e-8))]
    fn lyapunov(py: Python<'_>, measure: &PyGibbs, field: &PyField, steps: u64, seed: u64, rtol: f64) -> PyResult<(f64, f64)> {
        let opts = FlowOptions { rtol, atol: rtol * 1e-2, ..FlowOptions::default() };
        let e = py.detach(|| lyapunov_top(field.inner.as_ref(), &measure.inner, steps, seed, &opts)).map_err(py_err)?;
        Ok((e.lambda, e.half_width))
    }

    /// Bound report for exponential mixing `D e^{-γt}`; `a = None` uses `A₀`.
    #[pyfunction]
    #[pyo3(signature = (kappa, d, gamma, grad_v_norm, osc, dim = 2, a = None))]
    fn bounds(
        kappa: f64,
        d: f64,
        gamma: f64,
        grad_v_norm: f64,
        osc: f64,
        dim: usize,
        a: Option<f64>,
    ) -> PyResult<HashMap<&'static str, f64>> {
        let fit = MixingFit { d, gamma, fit_window: (0, 0), residual: 0.0 };
        let r = bounds_report(kappa, a, &fit, grad_v_norm, osc, dim, BoundConstants::default()).map_err(py_err)?;
        Ok(HashMap::from([
            ("A", r.a),
            ("A0", r.a0),
            ("H", r.h),
            ("tdis_bound", r.tdis_bound),
            ("tdis_closed", r.tdis_closed),
            ("tmix_bound", r.tmix_bound),
            ("tdis_poincare", r.tdis_poincare),
        ]))
    }

    /// Exact correlations `⟨e_k∘Ψⁿ, e_l⟩` of the block toral automorphism.
    #[pyfunction]
    fn automorphism_correlations(k: Vec<i64>, l: Vec<i64>, n_max: usize) -> PyResult<Vec<f64>> {
        let m = ToralAutomorphism::blocks(k.len()).map_err(py_err)?;
        Ok(automorphism_correlation(&m, &k, &l, n_max).map_err(py_err)?.corr)
    }
}
