use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::Rng;
use serde_json::{json, Value};
use toml::Table;

use mixdrift::bounds::{bounds_report, BoundConstants};
use mixdrift::discrete::{automorphism_correlation, mc_map_correlation, ConjugatedMap, HybridChain, ToralAutomorphism, TransportMap};
use mixdrift::flows::{lyapunov_top, two_point_span_rank, SPAN_RANK_THRESHOLD};
use mixdrift::metrics::{
    correlation_decay, dictionary_decay, fit_rate, fourier_observables, mixing_time_mc, CorrelationSeries, MixingFit,
    Observable, StartSet,
};
use mixdrift::pde::{default_dictionary, dissipation_time, galerkin_spectrum, write_spectrum_csv, write_trace_csv, PdeGrid, TdisOptions};
use mixdrift::sampler::{basin_occupancy, write_occupancy_csv, DtPolicy, Ensemble, SdeConfig, Snapshot};
use mixdrift::velocity::{schedule_grad_sup_norm, OuParams, OuStreamField, ScheduledShearField, ShearProfile, VelocityField, ZeroField};
use mixdrift::{rng, GibbsMeasure, Potential};

use crate::config::{self, Amplitude, Config, FieldName, MapName, Wave};
use crate::output::{opt, Output};
use crate::{CliError, Command, Common};

pub fn run(cmd: Command, common: &Common) -> Result<PathBuf, CliError> {
    let cfg = load(cmd, common)?;
    if let Some(n) = cfg.run.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("worker pool: {e}")))?;
    }
    let mut out = Output::create(config::out_dir(common.out.as_deref(), &cfg, cmd.name()))?;
    match cmd {
        Command::Sample => sample(&cfg, &mut out)?,
        Command::Mixrate => mixrate(&cfg, &mut out)?,
        Command::Tdis => tdis(&cfg, &mut out)?,
        Command::Tmix => tmix(&cfg, &mut out)?,
        Command::Lyapunov => lyapunov(&cfg, &mut out)?,
        Command::Liespan => liespan(&cfg, &mut out)?,
        Command::Bounds => bounds(&cfg, &mut out)?,
        Command::Spectrum => spectrum(&cfg, &mut out)?,
        Command::Discrete => discrete(&cfg, &mut out)?,
        Command::Figure => figure(&cfg, &mut out)?,
    }
    out.finish(cmd.name(), &cfg)
}

fn load(cmd: Command, common: &Common) -> Result<Config, CliError> {
    let mut table = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            config::parse(&text, path)?
        }
        None => Table::new(),
    };
    if let Some(s) = common.seed {
        config::set_path(&mut table, "run.seed", &s.to_string())?;
    }
    if let Some(k) = common.kappa {
        let key = if matches!(cmd, Command::Figure) { "figure.kappa" } else { "potential.kappa" };
        config::set_path(&mut table, key, &format!("{k:?}"))?;
    }
    if let Some(a) = &common.amplitude {
        match (cmd, a.parse::<f64>()) {
            (Command::Bounds, Ok(v)) => config::set_path(&mut table, "bounds.a", &format!("{v:?}"))?,
            (Command::Bounds, Err(_)) => config::set_path(&mut table, "bounds.a", &format!("\"{a}\""))?,
            (Command::Figure, Ok(v)) => config::set_path(&mut table, "figure.a", &format!("{v:?}"))?,
            (_, Ok(v)) => config::set_path(&mut table, "drift.a", &format!("{v:?}"))?,
            (_, Err(_)) => return Err(CliError::Usage(format!("amplitude '{a}' is not a number"))),
        }
    }
    if let Some(d) = &common.decay {
        config::set_path(&mut table, "bounds.decay", &format!("{:?}", d.display().to_string()))?;
    }
    if let Some(w) = common.workers {
        config::set_path(&mut table, "run.workers", &w.to_string())?;
    }
    for kv in &common.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        config::set_path(&mut table, k.trim(), v.trim())?;
    }
    config::resolve(table)
}

fn require_2d(m: &GibbsMeasure, what: &str) -> Result<(), CliError> {
    if m.dim() != 2 {
        return Err(CliError::Usage(format!("{what} is implemented in two dimensions, got dim = {}", m.dim())));
    }
    Ok(())
}

fn schedule_field(cfg: &Config, m: &GibbsMeasure, what: &str) -> Result<ScheduledShearField, CliError> {
    if cfg.drift.field != FieldName::Schedule {
        return Err(CliError::Usage(format!("{what} needs drift.field = \"schedule\"")));
    }
    Ok(ScheduledShearField::new(config::schedule(&cfg.drift, m.dim(), cfg.run.seed)?, m)?)
}

fn dump_schedule(cfg: &Config, m: &GibbsMeasure, out: &mut Output) -> Result<(), CliError> {
    if cfg.drift.field == FieldName::Schedule {
        let s = config::schedule(&cfg.drift, m.dim(), cfg.run.seed)?;
        out.csv("schedule.csv", |w| s.write_csv(cfg.drift.schedule_dump, w))?;
    }
    Ok(())
}

fn observable(wave: Wave, mode: &[i64]) -> Observable {
    match wave {
        Wave::Sin => Observable::sin(mode),
        Wave::Cos => Observable::cos(mode),
    }
}

fn fit_results(out: &mut Output, series: &CorrelationSeries) {
    match fit_rate(series) {
        Ok(fit) => {
            out.result("D", fit.d);
            out.result("gamma", fit.gamma);
            out.result("fit_window", json!([fit.fit_window.0, fit.fit_window.1]));
            out.result("fit_residual", fit.residual);
        }
        Err(e) => out.result("fit_error", e.to_string()),
    }
}

fn sample(cfg: &Config, out: &mut Output) -> Result<(), CliError> {
    let m = config::measure(&cfg.potential)?;
    let s = &cfg.sample;
    let t_end = s.checkpoints.iter().cloned().fold(0.0, f64::max);
    let field = config::field(&cfg.drift, &m, cfg.run.seed, cfg.drift.a * t_end + 1.0)?;
    let mut ens = match &s.start {
        Some(x) => Ensemble::from_point(x, s.n, cfg.run.seed)?,
        None => Ensemble::from_gibbs(&m, s.n, cfg.run.seed)?,
    };
    let sde = SdeConfig { kappa: m.kappa(), a: cfg.drift.a, dt: cfg.integrator.policy(), t_end, seed: cfg.run.seed };
    let snaps = ens.evolve(&sde, field.as_ref(), m.potential(), &s.checkpoints)?;
    write_snapshots(out, "snapshots.csv", &snaps)?;
    occupancy(out, "occupancy.csv", &snaps, m.potential())?;
    out.result("steps", ens.steps());
    dump_schedule(cfg, &m, out)
}

fn write_snapshots(out: &mut Output, name: &str, snaps: &[Snapshot]) -> Result<(), CliError> {
    if snaps.is_empty() {
        return Err(CliError::Usage("no checkpoints requested".into()));
    }
    out.csv(name, |w| {
        for (k, s) in snaps.iter().enumerate() {
            s.write_csv(&mut *w, k == 0)?;
        }
        Ok(())
    })
}

fn occupancy(out: &mut Output, name: &str, snaps: &[Snapshot], u: &Potential) -> Result<(), CliError> {
    let Some(minima) = u.minima() else { return Ok(()) };
    let rows = snaps.iter().map(|s| Ok((s.t, basin_occupancy(s, &minima)?))).collect::<Result<Vec<_>, CliError>>()?;
    if let Some((_, last)) = rows.last() {
        out.result(&format!("{}_final", name.trim_end_matches(".csv")), json!(last));
    }
    out.csv(name, |w| write_occupancy_csv(w, &rows))
}

fn mixrate(cfg: &Config, out: &mut Output) -> Result<(), CliError> {
    let m = config::measure(&cfg.potential)?;
    let r = &cfg.mixrate;
    let field = config::field(&cfg.drift, &m, cfg.run.seed, r.n_max as f64 + 1.0)?;
    let opts = cfg.flow.options();
    let series = match r.dictionary {
        Some(max_mode) => {
            let dict = fourier_observables(m.dim(), max_mode);
            out.result("dictionary", format!("sin/cos of all modes with |k|_inf <= {max_mode} ({} functions)", dict.len()));
            dictionary_decay(field.as_ref(), &m, &dict, r.n_max, r.samples, cfg.run.seed, &opts)?
        }
        None => {
            let (f, g) = (observable(r.f, &r.f_mode), observable(r.g, &r.g_mode));
            out.result("dictionary", format!("{} / {}", f.label, g.label));
            correlation_decay(field.as_ref(), &m, &f, &g, r.n_max, r.samples, cfg.run.seed, &opts)?
        }
    };
    out.csv("decay.csv", |w| series.write_csv(w))?;
    fit_results(out, &series);
    dump_schedule(cfg, &m, out)
}

fn tdis(cfg: &Config, out: &mut Output) -> Result<(), CliError> {
    let m = config::measure(&cfg.potential)?;
    require_2d(&m, "the dissipation time")?;
    let t = &cfg.tdis;
    let grid = PdeGrid::new(&m, t.n)?;
    let dict = default_dictionary(&grid)?;
    let horizon = if cfg.drift.field == FieldName::Ou { cfg.drift.a * t.t_max + 1.0 } else { 0.0 };
    let field = config::field(&cfg.drift, &m, cfg.run.seed, horizon)?;
    let mut opts = TdisOptions { substeps: t.substeps, t_max: t.t_max, budget: t.budget_secs.map(Duration::from_secs_f64), ..Default::default() };
    opts.step.transport.rtol = t.rtol;
    opts.step.transport.atol = t.atol;
    let report = dissipation_time(&grid, cfg.drift.a, field.as_ref(), &dict, &opts)?;
    out.csv("trace.csv", |w| write_trace_csv(&report.trace, w))?;
    out.result("t_dis", opt(report.t_dis));
    out.result("t_dis_text", report.describe());
    out.result("t_reached", report.t_reached);
    out.result("budget_exhausted", report.budget_exhausted);
    out.result("per_element", Value::Object(report.per_element.iter().map(|(k, v)| (k.clone(), opt(*v))).collect()));
    out.result("tdis_poincare", mixdrift::bounds::tdis_poincare(m.kappa(), m.osc()));
    dump_schedule(cfg, &m, out)
}

fn tmix(cfg: &Config, out: &mut Output) -> Result<(), CliError> {
    let m = config::measure(&cfg.potential)?;
    require_2d(&m, "the histogram mixing time")?;
    let t = &cfg.tmix;
    if t.checkpoints == 0 {
        return Err(CliError::Usage("tmix.checkpoints must be positive".into()));
    }
    let field = config::field(&cfg.drift, &m, cfg.run.seed, cfg.drift.a * t.t_end + 1.0)?;
    let starts = match &t.starts {
        Some(p) => StartSet::Points(p.clone()),
        None => StartSet::default_for(m.potential(), cfg.run.seed),
    };
    let checkpoints: Vec<f64> = (0..=t.checkpoints).map(|j| t.t_end * j as f64 / t.checkpoints as f64).collect();
    let sde = SdeConfig { kappa: m.kappa(), a: cfg.drift.a, dt: cfg.integrator.policy(), t_end: t.t_end, seed: cfg.run.seed };
    let report = mixing_time_mc(&sde, field.as_ref(), &m, &starts, t.n_traj, t.bins, &checkpoints)?;
    out.csv("tmix.csv", |w| report.write_csv(w))?;
    out.result("t_mix", opt(report.t_mix));
    out.result("t_mix_text", report.t_mix.map(|v| v.to_string()).unwrap_or_else(|| format!("> {}", t.t_end)));
    out.result("noise_floor", report.floor);
    dump_schedule(cfg, &m, out)
}

fn lyapunov(cfg: &Config, out: &mut Output) -> Result<(), CliError> {
    let m = config::measure(&cfg.potential)?;
    let field = schedule_field(cfg, &m, "the Lyapunov estimate")?;
    let est = lyapunov_top(&field, &m, cfg.lyapunov.steps, cfg.run.seed, &cfg.flow.options())?;
    out.csv("lyapunov.csv", |w| {
        writeln!(w, "n,lyap_partial")?;
        for (n, v) in &est.trace {
            writeln!(w, "{n},{v}")?;
        }
        Ok(())
    })?;
    out.result("lambda", est.lambda);
    out.result("half_width_99", est.half_width);
    out.result("excludes_zero", est.excludes_zero());
    dump_schedule(cfg, &m, out)
}

fn liespan(cfg: &Config, out: &mut Output) -> Result<(), CliError> {
    let m = config::measure(&cfg.potential)?;
    let l = &cfg.liespan;
    let profile = config::profile(&cfg.drift)?;
    let mut r = rng::stream(cfg.run.seed, 0);
    let mut rows = Vec::with_capacity(l.pairs);
    while rows.len() < l.pairs {
        let x = [r.random::<f64>(), r.random::<f64>()];
        let y = [r.random::<f64>(), r.random::<f64>()];
        if (x[0] - y[0]).abs() < 1e-3 || (x[1] - y[1]).abs() < 1e-3 {
            continue;
        }
        let s = two_point_span_rank(&m, profile, &x, &y, l.alpha_samples, l.h_fd)?;
        rows.push((x, y, s.rank, s.sv_ratio));
    }
    let full = rows.iter().filter(|(_, _, rank, ratio)| *rank == 4 && *ratio > SPAN_RANK_THRESHOLD).count();
    out.csv("liespan.csv", |w| {
        writeln!(w, "x1,x2,y1,y2,rank,sv_ratio")?;
        for (x, y, rank, ratio) in &rows {
            writeln!(w, "{},{},{},{},{rank},{ratio}", x[0], x[1], y[0], y[1])?;
        }
        Ok(())
    })?;
    out.result("full_rank", full);
    out.result("pairs", rows.len());
    Ok(())
}

/// Reads an `n,corr,abs_corr,floor` file.
fn read_decay(path: &Path) -> Result<CorrelationSeries, CliError> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = rd.headers().map_err(|e| CliError::Usage(e.to_string()))?.iter().map(String::from).collect();
    if header != ["n", "corr", "abs_corr", "floor"] {
        return Err(CliError::Usage(format!("{}: expected header n,corr,abs_corr,floor, found {}", path.display(), header.join(","))));
    }
    let mut s = CorrelationSeries { n: Vec::new(), corr: Vec::new(), floor: Vec::new() };
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let bad = |c: &str| CliError::Usage(format!("{}: row {}: bad {c}", path.display(), line + 2));
        s.n.push(rec[0].parse().map_err(|_| bad("n"))?);
        s.corr.push(rec[1].parse().map_err(|_| bad("corr"))?);
        s.floor.push(rec[3].parse().map_err(|_| bad("floor"))?);
    }
    Ok(s)
}

fn bounds(cfg: &Config, out: &mut Output) -> Result<(), CliError> {
    let m = config::measure(&cfg.potential)?;
    let b = &cfg.bounds;
    let fit = match (&b.decay, b.d, b.gamma) {
        (Some(path), _, _) => fit_rate(&read_decay(Path::new(path))?)?,
        (None, Some(d), Some(gamma)) => MixingFit { d, gamma, fit_window: (0, 0), residual: 0.0 },
        _ => return Err(CliError::Usage("bounds needs a decay CSV or both bounds.d and bounds.gamma".into())),
    };
    let a = match &b.a {
        Amplitude::Value(v) => Some(*v),
        Amplitude::Word(w) if w == "auto" => None,
        Amplitude::Word(w) => return Err(CliError::Usage(format!("bounds.a must be a number or \"auto\", got \"{w}\""))),
    };
    let grad = match b.grad_v_norm {
        Some(g) => g,
        None => {
            let field = schedule_field(cfg, &m, "estimating ‖∇v‖")?;
            schedule_grad_sup_norm(&field, b.grad_segments, b.grad_samples, cfg.run.seed)
        }
    };
    let consts = BoundConstants { c: b.c, c_prime: b.c_prime };
    let report = bounds_report(m.kappa(), a, &fit, grad, m.osc(), m.dim(), consts)?;
    out.csv("bounds.csv", |w| report.write_csv(w))?;
    out.result("note", "all bounds hold up to universal constants");
    out.result("fit_window", json!([fit.fit_window.0, fit.fit_window.1]));
    Ok(())
}

fn spectrum(cfg: &Config, out: &mut Output) -> Result<(), CliError> {
    let m = config::measure(&cfg.potential)?;
    let mut ev = galerkin_spectrum(&m, cfg.spectrum.modes)?;
    if let Some(c) = cfg.spectrum.count {
        ev.truncate(c);
    }
    out.csv("spectrum.csv", |w| write_spectrum_csv(&ev, w))?;
    out.result("spectral_gap", opt(ev.get(1).map(|l| l - ev[0])));
    Ok(())
}

fn discrete(cfg: &Config, out: &mut Output) -> Result<(), CliError> {
    let d = &cfg.discrete;
    let dim = cfg.potential.dim;
    if d.k.len() != dim || d.l.len() != dim {
        return Err(CliError::Usage(format!("discrete.k and discrete.l need {dim} entries")));
    }
    let psi = ToralAutomorphism::blocks(dim)?;
    out.result("block_radii", json!(psi.block_radii()));
    let series = match d.map {
        MapName::Automorphism => {
            let c = automorphism_correlation(&psi, &d.k, &d.l, d.n_max as usize)?;
            out.result("growth_ratio", c.growth_ratio());
            CorrelationSeries { n: (0..c.corr.len() as u64).collect(), floor: vec![0.0; c.corr.len()], corr: c.corr }
        }
        MapName::Conjugated => {
            let m = config::measure(&cfg.potential)?;
            let t = TransportMap::new(&m)?;
            let (tf, tg) = (t.clone(), t.clone());
            let f = Observable::cos(&d.k);
            let g = Observable::cos(&d.l);
            let fk = Observable::new(format!("{}∘T", f.label), move |x| {
                let mut y = x.to_vec();
                tf.forward(&mut y);
                f.eval(&y)
            });
            let gl = Observable::new(format!("{}∘T", g.label), move |x| {
                let mut y = x.to_vec();
                tg.forward(&mut y);
                g.eval(&y)
            });
            let phi = ConjugatedMap::new(t, psi)?;
            let xs: Vec<Vec<f64>> = m.sample(d.samples, cfg.run.seed)?.into_iter().map(|p| p.into_coords()).collect();
            mc_map_correlation(|x| phi.apply(x), &fk, &gl, &xs, d.n_max)
        }
        MapName::Hybrid => {
            let m = config::measure(&cfg.potential)?;
            let phi = ConjugatedMap::new(TransportMap::new(&m)?, psi)?;
            let chain = HybridChain::new(cfg.drift.a, Some(phi), m, cfg.integrator.policy())?;
            chain.correlation(&Observable::cos(&d.k), &Observable::cos(&d.l), d.n_max, d.samples, cfg.run.seed)?
        }
    };
    out.csv("decay.csv", |w| series.write_csv(w))?;
    if d.map != MapName::Automorphism {
        fit_results(out, &series);
    }
    Ok(())
}

fn figure(cfg: &Config, out: &mut Output) -> Result<(), CliError> {
    let f = &cfg.figure;
    let m = GibbsMeasure::normalize(Potential::DoubleWell, f.kappa, cfg.potential.quadrature)?;
    let t_end = f.checkpoints.iter().cloned().fold(0.0, f64::max);
    let dt = DtPolicy::Adaptive { c: f.c, dt_min: f.dt_min, dt_max: f.dt_max };
    let seed = cfg.run.seed;
    let params = OuParams { dt_path: f.dt_path, ..cfg.drift.ou.params() };
    let ou = OuStreamField::new(params, f.a * t_end + 1.0, cfg.drift.ou.seed.unwrap_or(seed), &m)?;
    let runs: [(&str, f64, &dyn VelocityField); 2] = [("plain", 0.0, &ZeroField { dim: 2 }), ("driven", f.a, &ou)];
    for (label, a, field) in runs {
        let mut ens = Ensemble::from_point(&f.start, f.n, seed)?;
        let sde = SdeConfig { kappa: f.kappa, a, dt, t_end, seed };
        let snaps = ens.evolve(&sde, field, m.potential(), &f.checkpoints)?;
        for s in &snaps {
            write_snapshots(out, &format!("snapshot_{label}_t{}.csv", s.t), std::slice::from_ref(s))?;
        }
        occupancy(out, &format!("occupancy_{label}.csv"), &snaps, m.potential())?;
    }
    let n = f.stream_grid;
    out.csv("stream.csv", |w| {
        writeln!(w, "x1,x2,psi,v1,v2,density")?;
        let mut v = [0.0; 2];
        for i in 0..n {
            for j in 0..n {
                let x = [(i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64];
                let (psi, _, _) = ou.stream(f.stream_time, &x);
                ou.velocity(f.stream_time, &x, &mut v);
                writeln!(w, "{},{},{psi},{},{},{}", x[0], x[1], v[0], v[1], m.density(&x))?;
            }
        }
        Ok(())
    })?;
    let p = f.profile_points;
    out.csv("profile.csv", |w| {
        writeln!(w, "y,F0,dF0")?;
        for k in 0..=p {
            let y = k as f64 / p as f64;
            let (s, ds, _) = ShearProfile::Sawtooth.eval(y);
            writeln!(w, "{y},{s},{ds}")?;
        }
        Ok(())
    })?;
    Ok(())
}
