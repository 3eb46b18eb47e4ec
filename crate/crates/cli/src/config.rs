use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use mixdrift::flows::FlowOptions;
use mixdrift::gibbs::GibbsMeasure;
use mixdrift::potential::{Potential, Profile1d};
use mixdrift::sampler::DtPolicy;
use mixdrift::velocity::{
    OrientationPolicy, OuParams, OuStreamField, ScheduledShearField, ShearProfile, ShearSchedule, VelocityField, ZeroField,
};

use crate::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub run: RunSection,
    pub potential: PotentialSection,
    pub drift: DriftSection,
    pub integrator: IntegratorSection,
    pub flow: FlowSection,
    pub sample: SampleSection,
    pub mixrate: MixrateSection,
    pub tdis: TdisSection,
    pub tmix: TmixSection,
    pub lyapunov: LyapunovSection,
    pub liespan: LiespanSection,
    pub bounds: BoundsSection,
    pub spectrum: SpectrumSection,
    pub discrete: DiscreteSection,
    pub figure: FigureSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialName {
    Zero,
    DoubleWell,
    SinSquared,
    Grid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PotentialSection {
    pub kind: PotentialName,
    pub dim: usize,
    pub kappa: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_file: Option<String>,
    /// Quadrature resolution for `Z`, `osc` and bin masses.
    pub quadrature: usize,
}

impl Default for PotentialSection {
    fn default() -> Self {
        Self { kind: PotentialName::DoubleWell, dim: 2, kappa: 0.05, grid_file: None, quadrature: 512 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldName {
    None,
    Schedule,
    Ou,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrientationName {
    Random,
    Alternating,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftSection {
    pub a: f64,
    pub field: FieldName,
    pub profile: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule_seed: Option<u64>,
    pub beta: [f64; 2],
    pub orientation: OrientationName,
    /// Segments written to `schedule.csv`.
    pub schedule_dump: u64,
    pub ou: OuSection,
}

impl Default for DriftSection {
    fn default() -> Self {
        Self {
            a: 0.0,
            field: FieldName::Schedule,
            profile: "sawtooth".into(),
            schedule_seed: None,
            beta: [0.0, 1.0],
            orientation: OrientationName::Random,
            schedule_dump: 64,
            ou: OuSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OuSection {
    pub omega: f64,
    pub reversion: f64,
    pub volatility: f64,
    pub m0: f64,
    pub mean: f64,
    pub dt_path: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for OuSection {
    fn default() -> Self {
        let p = OuParams::default();
        Self { omega: p.omega, reversion: p.reversion, volatility: p.volatility, m0: p.m0, mean: p.mean, dt_path: p.dt_path, seed: None }
    }
}

impl OuSection {
    pub fn params(&self) -> OuParams {
        OuParams {
            omega: self.omega,
            reversion: self.reversion,
            volatility: self.volatility,
            m0: self.m0,
            mean: self.mean,
            dt_path: self.dt_path,
        }
    }
}

/// Fixed step when `dt` is set, otherwise the adaptive rule.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub c: f64,
    pub dt_min: f64,
    pub dt_max: f64,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        let DtPolicy::Adaptive { c, dt_min, dt_max } = DtPolicy::adaptive_default() else { unreachable!() };
        Self { dt: None, c, dt_min, dt_max }
    }
}

impl IntegratorSection {
    pub fn policy(&self) -> DtPolicy {
        match self.dt {
            Some(dt) => DtPolicy::Fixed(dt),
            None => DtPolicy::Adaptive { c: self.c, dt_min: self.dt_min, dt_max: self.dt_max },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowSection {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
}

impl Default for FlowSection {
    fn default() -> Self {
        let f = FlowOptions::default();
        Self { rtol: f.rtol, atol: f.atol, h_max: f.h_max }
    }
}

impl FlowSection {
    pub fn options(&self) -> FlowOptions {
        FlowOptions { rtol: self.rtol, atol: self.atol, h_max: self.h_max, ..FlowOptions::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    pub n: usize,
    /// Initial point of every trajectory; exact Gibbs draws when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<f64>>,
    pub checkpoints: Vec<f64>,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self { n: 2000, start: None, checkpoints: vec![0.0, 1.0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Wave {
    Sin,
    Cos,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixrateSection {
    pub f: Wave,
    pub f_mode: Vec<i64>,
    pub g: Wave,
    pub g_mode: Vec<i64>,
    /// Replaces `f`, `g` by the supremum over sin/cos of all modes with `|k|_∞ ≤ dictionary`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dictionary: Option<i64>,
    pub n_max: u64,
    pub samples: usize,
}

impl Default for MixrateSection {
    fn default() -> Self {
        Self { f: Wave::Sin, f_mode: vec![1, 0], g: Wave::Sin, g_mode: vec![1, 0], dictionary: None, n_max: 20, samples: 20_000 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TdisSection {
    pub n: usize,
    pub substeps: usize,
    pub t_max: f64,
    pub rtol: f64,
    pub atol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget_secs: Option<f64>,
}

impl Default for TdisSection {
    fn default() -> Self {
        Self { n: 32, substeps: 1, t_max: 1e7, rtol: 1e-5, atol: 1e-7, budget_secs: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TmixSection {
    pub n_traj: usize,
    pub bins: usize,
    pub t_end: f64,
    pub checkpoints: usize,
    /// Worst case is taken over these; both minima plus eight uniform points when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub starts: Option<Vec<Vec<f64>>>,
}

impl Default for TmixSection {
    fn default() -> Self {
        Self { n_traj: 2000, bins: 16, t_end: 10.0, checkpoints: 60, starts: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovSection {
    pub steps: u64,
}

impl Default for LyapunovSection {
    fn default() -> Self {
        Self { steps: 10_000 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LiespanSection {
    pub pairs: usize,
    pub alpha_samples: usize,
    pub h_fd: f64,
}

impl Default for LiespanSection {
    fn default() -> Self {
        Self { pairs: 100, alpha_samples: 8, h_fd: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Amplitude {
    Value(f64),
    Word(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsSection {
    /// A number or `"auto"` for `A₀`.
    pub a: Amplitude,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_v_norm: Option<f64>,
    pub grad_segments: u64,
    pub grad_samples: usize,
    pub c: f64,
    pub c_prime: f64,
}

impl Default for BoundsSection {
    fn default() -> Self {
        Self {
            a: Amplitude::Word("auto".into()),
            decay: None,
            d: None,
            gamma: None,
            grad_v_norm: None,
            grad_segments: 16,
            grad_samples: 4096,
            c: 1.0,
            c_prime: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSection {
    /// Fourier modes per axis are `|k|_∞ ≤ modes`.
    pub modes: usize,
    /// Rows written; all when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        Self { modes: 12, count: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapName {
    /// Exact Fourier correlations of the block automorphism.
    Automorphism,
    /// Monte-Carlo correlations of the automorphism conjugated to `μ`.
    Conjugated,
    /// Langevin for time `1/A` followed by the conjugated map.
    Hybrid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscreteSection {
    pub map: MapName,
    pub n_max: u64,
    pub samples: usize,
    pub k: Vec<i64>,
    pub l: Vec<i64>,
}

impl Default for DiscreteSection {
    fn default() -> Self {
        Self { map: MapName::Automorphism, n_max: 12, samples: 100_000, k: vec![1, 0], l: vec![1, 0] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FigureSection {
    pub kappa: f64,
    pub a: f64,
    pub n: usize,
    pub start: Vec<f64>,
    pub checkpoints: Vec<f64>,
    pub c: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub dt_path: f64,
    /// Stream plot grid is `stream_grid²` points at field time `stream_time`.
    pub stream_grid: usize,
    pub stream_time: f64,
    pub profile_points: usize,
}

impl Default for FigureSection {
    fn default() -> Self {
        Self {
            kappa: 1.0 / 70.0,
            a: 3500.0,
            n: 2000,
            start: vec![0.75, 0.7],
            checkpoints: vec![0.63, 3.14],
            c: 0.1,
            dt_min: 1e-8,
            dt_max: 1e-3,
            dt_path: 1e-2,
            stream_grid: 64,
            stream_time: 0.0,
            profile_points: 1024,
        }
    }
}

/// Parses `text`; errors carry the TOML line and column.
pub fn parse(text: &str, origin: &Path) -> Result<Table, CliError> {
    let table: Table = toml::from_str(text).map_err(|e| CliError::Usage(format!("{}: {e}", origin.display())))?;
    // Validate the file alone first so that schema errors point into it.
    toml::from_str::<Config>(text).map_err(|e| CliError::Usage(format!("{}: {e}", origin.display())))?;
    Ok(table)
}

/// Sets `path = value` (dotted path) in `table`. Values parse as TOML, falling back to strings.
pub fn set_path(table: &mut Table, path: &str, raw: &str) -> Result<(), CliError> {
    let value = toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Usage(format!("malformed override key '{path}'")));
    }
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cur.entry(k.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| CliError::Usage(format!("'{k}' in '{path}' is not a section")))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

pub fn resolve(table: Table) -> Result<Config, CliError> {
    Config::deserialize(Value::Table(table)).map_err(|e| CliError::Usage(format!("override: {e}")))
}

pub fn measure(p: &PotentialSection) -> Result<GibbsMeasure, CliError> {
    let u = match p.kind {
        PotentialName::Zero => Potential::zero(p.dim)?,
        PotentialName::DoubleWell => {
            if p.dim != 2 {
                return Err(CliError::Usage(format!("the double well is two-dimensional, got dim = {}", p.dim)));
            }
            Potential::DoubleWell
        }
        PotentialName::SinSquared => Potential::separable(p.dim, Profile1d::SinSquared)?,
        PotentialName::Grid => {
            let path = p.grid_file.as_ref().ok_or_else(|| CliError::Usage("potential.kind = \"grid\" needs grid_file".into()))?;
            let u = Potential::read_grid_file(path)?;
            if u.dim() != p.dim {
                return Err(CliError::Usage(format!("{path} is {}-dimensional, config says {}", u.dim(), p.dim)));
            }
            u
        }
    };
    Ok(GibbsMeasure::normalize(u, p.kappa, p.quadrature)?)
}

pub fn profile(d: &DriftSection) -> Result<ShearProfile, CliError> {
    ShearProfile::parse(&d.profile).map_err(|e| CliError::Usage(e.to_string()))
}

pub fn schedule(d: &DriftSection, dim: usize, seed: u64) -> Result<ShearSchedule, CliError> {
    let orientation = match d.orientation {
        OrientationName::Random => OrientationPolicy::Random,
        OrientationName::Alternating => OrientationPolicy::Alternating,
    };
    Ok(ShearSchedule::with_options(
        d.schedule_seed.unwrap_or(seed),
        dim,
        profile(d)?,
        (d.beta[0], d.beta[1]),
        orientation,
        0,
    )?)
}

/// Velocity field for `drift`; `horizon` is the last field time needed (OU paths only).
pub fn field(d: &DriftSection, m: &GibbsMeasure, seed: u64, horizon: f64) -> Result<Box<dyn VelocityField>, CliError> {
    Ok(match d.field {
        FieldName::None => Box::new(ZeroField { dim: m.dim() }),
        FieldName::Schedule => Box::new(ScheduledShearField::new(schedule(d, m.dim(), seed)?, m)?),
        FieldName::Ou => Box::new(OuStreamField::new(d.ou.params(), horizon, d.ou.seed.unwrap_or(seed), m)?),
    })
}

/// `--out`, else `run.out`, else `$MIXDRIFT_OUT/<command>` (default root `.`).
pub fn out_dir(flag: Option<&Path>, cfg: &Config, command: &str) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.run.out {
        return PathBuf::from(p);
    }
    let root = std::env::var_os(crate::OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
    root.join(command)
}
