use crate::config::{ExperimentConfig, SchemeSpec};
use crate::error::{CliError, Result};
use crate::output::{num, opt, write_json, write_text, Table};
use crate::setup::{self, load_dataset, prepare, resolve_schedule, start_point, LoadedData, Prepared};
use crate::svg::{Chart, Series};
use rwgd_core::bounds::{
    self, assumption_check, AssumptionReport, BoundReport, SqDistanceEnvelope, COMPACT_SUPPORT_STEP,
    INIT_ORTHOGONAL, M2_NONSINGULAR, STEP_BELOW_INVERSE_NORM, VARIANCE_STEP_BOUND,
};
use rwgd_core::moments::{self, MomentState};
use rwgd_core::montecarlo::{self, EnsembleOptions, RiskSetup};
use rwgd_core::weighting::Provenance;
use rwgd_core::{
    build_weighted_problem, run_trajectory, Dataset, MomentContext, RunOptions, StepSchedule, Vector, WeightingScheme,
};
use serde::Serialize;
use serde_json::json;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Everything a command needs: the parsed config and where to write.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: ExperimentConfig,
    /// Directory relative paths in the config resolve against.
    pub base: PathBuf,
    pub out: PathBuf,
    pub plot: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
    pub stdout: Option<String>,
}

impl Outcome {
    fn wrote(&mut self, p: PathBuf) {
        self.files.push(p);
    }
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn data(&self) -> Result<LoadedData> {
        let spec = self
            .cfg
            .dataset
            .as_ref()
            .ok_or_else(|| CliError::Config("config has no dataset".into()))?;
        load_dataset(spec, &self.base)
    }

    fn run_opts(&self) -> RunOptions {
        RunOptions {
            enforce_assumptions: self.cfg.enforce_assumptions,
        }
    }

    fn single(&self, dataset: &Dataset) -> Result<(Prepared, StepSchedule)> {
        let spec = self
            .cfg
            .scheme
            .as_ref()
            .ok_or_else(|| CliError::Config("config has no scheme".into()))?;
        let p = prepare("scheme", spec, dataset, self.cfg.moment_samples, self.cfg.seed)?;
        let schedule = resolve_schedule(self.schedule_spec()?, std::slice::from_ref(&p))?;
        Ok((p, schedule))
    }

    fn schedule_spec(&self) -> Result<&crate::config::ScheduleSpec> {
        self.cfg
            .schedule
            .as_ref()
            .ok_or_else(|| CliError::Config("config has no schedule".into()))
    }

    /// The labelled schemes of a figure config, or the given defaults.
    fn compared(&self, dataset: &Dataset, defaults: &[(&str, SchemeSpec)]) -> Result<Vec<Prepared>> {
        let list: Vec<(String, SchemeSpec)> = if self.cfg.schemes.is_empty() {
            defaults.iter().map(|(l, s)| (l.to_string(), s.clone())).collect()
        } else {
            self.cfg.schemes.iter().map(|s| (s.label.clone(), s.scheme.clone())).collect()
        };
        if list.len() < 2 {
            return Err(CliError::Config("a comparison needs at least two schemes".into()));
        }
        list.iter()
            .map(|(l, s)| prepare(l, s, dataset, self.cfg.moment_samples, self.cfg.seed))
            .collect()
    }

    fn write_resolved(&self, out: &mut Outcome, extra: serde_json::Value) -> Result<()> {
        let path = self.path("resolved.json");
        let cfg = serde_json::to_value(&self.cfg).map_err(|e| CliError::Config(e.to_string()))?;
        write_json(&path, &json!({ "config": cfg, "resolved": extra }))?;
        out.wrote(path);
        Ok(())
    }

    fn write_chart(&self, out: &mut Outcome, name: &str, chart: &Chart) -> Result<()> {
        if self.plot {
            let path = self.path(name);
            write_text(&path, &chart.render())?;
            out.wrote(path);
        }
        Ok(())
    }
}

fn provenance(p: &Prepared) -> String {
    match p.moments.provenance {
        Provenance::Analytic => "analytic".into(),
        Provenance::Estimated(n) => format!("estimated from {n} draws"),
    }
}

fn schedule_json(s: &StepSchedule) -> serde_json::Value {
    serde_json::to_value(s).unwrap_or(serde_json::Value::Null)
}

pub fn simulate(ctx: &Context) -> Result<Outcome> {
    let mut out = Outcome::default();
    let data = ctx.data()?;
    let (p, schedule) = ctx.single(&data.dataset)?;
    let wp = &p.problem;
    let w1 = start_point(ctx.cfg.w1.as_ref(), wp.d())?;
    let k_max = ctx.cfg.k_max;
    let rec = run_trajectory(wp, &p.scheme, &schedule, &w1, k_max, ctx.cfg.seed, ctx.run_opts())?;

    let d = wp.d();
    let mut header = vec!["k".to_string()];
    header.extend((1..=d).map(|j| format!("w_{j}")));
    header.extend(["alpha_k".to_string(), "sq_dist".into()]);
    let mut traj = Table::new(header);
    for (k, w) in rec.ks.iter().zip(&rec.iterates) {
        let mut row = vec![k.to_string()];
        row.extend(w.iter().map(|v| num(*v)));
        row.extend([opt(rec.alphas.get(k - 1).copied()), num((w - &wp.w_hat).norm_squared())]);
        traj.push(row);
    }
    let path = ctx.path("trajectory.csv");
    traj.write(&path)?;
    out.wrote(path);

    let env = SqDistanceEnvelope::new(wp, &p.scheme, &schedule, &w1)?;
    let mut chart_series = Vec::new();
    if ctx.cfg.n_traj >= 1 {
        let opts = EnsembleOptions {
            run: ctx.run_opts(),
            second_moment: false,
        };
        let e = montecarlo::ensemble_moments(wp, &p.scheme, &schedule, &w1, k_max, ctx.cfg.n_traj, ctx.cfg.seed, opts)?;
        out.warnings.extend(e.warnings.iter().cloned());
        let table = ensemble_table(&e, &env);
        let path = ctx.path("ensemble.csv");
        table.write(&path)?;
        out.wrote(path);
        chart_series.push(Series {
            label: "mean squared distance".into(),
            points: e.ks.iter().zip(&e.sq_distance).map(|(k, v)| (*k as f64, *v)).collect(),
            dashed: false,
        });
        chart_series.push(Series {
            label: "envelope".into(),
            points: e.ks.iter().filter_map(|k| Some((*k as f64, env.at(*k)?))).collect(),
            dashed: true,
        });
    }
    ctx.write_resolved(
        &mut out,
        json!({
            "schedule": schedule_json(&schedule),
            "n": wp.n(), "d": wp.d(),
            "moments": provenance(&p),
            "envelope_available": env.is_available(),
        }),
    )?;
    ctx.write_chart(
        &mut out,
        "simulate.svg",
        &Chart {
            title: format!("{} weighting", p.scheme.name()),
            x_label: "k".into(),
            y_label: "E|w_k - w_hat|^2".into(),
            log_x: false,
            log_y: true,
            series: chart_series,
        },
    )?;
    Ok(out)
}

/// k, mean_sq_dist, se, bound_envelope
pub fn ensemble_table(e: &montecarlo::EnsembleSummary, env: &SqDistanceEnvelope) -> Table {
    let mut t = Table::new(["k", "mean_sq_dist", "se", "bound_envelope"]);
    for (i, k) in e.ks.iter().enumerate() {
        t.push(vec![k.to_string(), num(e.sq_distance[i]), num(e.standard_errors[i]), opt(env.at(*k))]);
    }
    t
}

/// Shared layout of exact moment tables: one row per k with m_k and A_k flattened row-major.
pub fn moments_table(states: &[MomentState], schedule: &StepSchedule, mean_bound: &dyn Fn(usize) -> Option<f64>, env: &SqDistanceEnvelope) -> Table {
    let d = states.first().map_or(0, |s| s.m.len());
    let mut header: Vec<String> = ["k", "alpha", "trace_a", "norm_m", "mean_bound", "envelope"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=d).map(|i| format!("m_{i}")));
    for i in 1..=d {
        header.extend((1..=d).map(|j| format!("a_{i}_{j}")));
    }
    let mut t = Table::new(header);
    for s in states {
        let alpha = schedule.value(s.k).ok();
        let mut row = vec![
            s.k.to_string(),
            opt(alpha),
            num(s.a.trace()),
            num(s.m.norm()),
            opt(mean_bound(s.k)),
            opt(env.at(s.k)),
        ];
        row.extend(s.m.iter().map(|v| num(*v)));
        for i in 0..d {
            row.extend((0..d).map(|j| num(s.a[(i, j)])));
        }
        t.push(row);
    }
    t
}

pub fn moments_cmd(ctx: &Context) -> Result<Outcome> {
    let mut out = Outcome::default();
    let data = ctx.data()?;
    let (p, schedule) = ctx.single(&data.dataset)?;
    let wp = &p.problem;
    let w1 = start_point(ctx.cfg.w1.as_ref(), wp.d())?;
    let mctx = MomentContext::new(wp, &p.moments, schedule.clone())?;
    let states = moments::propagate(&mctx, &(&w1 - &wp.w_hat), ctx.cfg.k_max)?;
    let env = SqDistanceEnvelope::new(wp, &p.scheme, &schedule, &w1)?;
    let mean_bound = |k: usize| bounds::mean_rate_bound(&mctx, k - 1, &w1).ok();
    let table = moments_table(&states, &schedule, &mean_bound, &env);
    let path = ctx.path("moments.csv");
    table.write(&path)?;
    out.wrote(path);

    let mut stationary_info = serde_json::Value::Null;
    if let StepSchedule::Constant { .. } = schedule {
        match moments::stationary_detail(&mctx, moments::DEFAULT_STATIONARY_TOL) {
            Ok(st) => {
                let d = wp.d();
                let mut t = Table::new((1..=d).map(|j| format!("c_{j}")));
                for i in 0..d {
                    t.push((0..d).map(|j| num(st.matrix[(i, j)])).collect());
                }
                let path = ctx.path("stationary.csv");
                t.write(&path)?;
                out.wrote(path);
                stationary_info = json!({
                    "terms": st.terms,
                    "fixed_point_residual": st.fixed_point_residual,
                    "trace": st.matrix.trace(),
                });
            }
            Err(e) => out.warnings.push(format!("no stationary moment: {e}")),
        }
    }
    ctx.write_resolved(
        &mut out,
        json!({
            "schedule": schedule_json(&schedule),
            "moments": provenance(&p),
            "stationary": stationary_info,
        }),
    )?;
    ctx.write_chart(
        &mut out,
        "moments.svg",
        &Chart {
            title: "exact second moment".into(),
            x_label: "k".into(),
            y_label: "Tr A_k".into(),
            log_x: false,
            log_y: true,
            series: vec![
                Series {
                    label: "Tr A_k".into(),
                    points: states.iter().map(|s| (s.k as f64, s.a.trace())).collect(),
                    dashed: false,
                },
                Series {
                    label: "envelope".into(),
                    points: states.iter().filter_map(|s| Some((s.k as f64, env.at(s.k)?))).collect(),
                    dashed: true,
                },
            ],
        },
    )?;
    Ok(out)
}

fn pick(rep: &AssumptionReport, names: &[&str]) -> Vec<bounds::AssumptionCheck> {
    rep.checks.iter().filter(|c| names.contains(&c.name.as_str())).cloned().collect()
}

#[derive(Debug, Serialize)]
struct BoundsFile {
    inputs: BTreeMap<String, f64>,
    assumptions: AssumptionReport,
    bounds: Vec<BoundReport>,
    skipped: BTreeMap<String, String>,
}

pub fn bounds_cmd(ctx: &Context) -> Result<Outcome> {
    let mut out = Outcome::default();
    let data = ctx.data()?;
    let (p, schedule) = ctx.single(&data.dataset)?;
    let wp = &p.problem;
    let w1 = start_point(ctx.cfg.w1.as_ref(), wp.d())?;
    let k = ctx.cfg.k_max;
    let spec = ctx.cfg.bounds.clone().unwrap_or_default();
    let rep = assumption_check(wp, &p.scheme, &schedule, &w1, k)?;
    let mctx = MomentContext::new(wp, &p.moments, schedule.clone())?;
    let mut reports = Vec::new();
    let mut skipped = BTreeMap::new();
    let basic = [STEP_BELOW_INVERSE_NORM, INIT_ORTHOGONAL, M2_NONSINGULAR];

    match bounds::mean_rate_bound(&mctx, k, &w1) {
        Ok(v) => reports.push(BoundReport::new("mean_rate", pick(&rep, &basic)).value("bound", v).input("k", k as f64)),
        Err(e) => {
            skipped.insert("mean_rate".into(), e.to_string());
        }
    }
    if p.scheme.name() == "identity" {
        let unweighted = rwgd_core::build_unweighted_problem(data.dataset.clone())?;
        match bounds::gd_rate_bound(&unweighted, &schedule, k, &w1) {
            Ok(v) => reports.push(BoundReport::new("gd_rate", pick(&rep, &basic)).value("bound", v).input("k", k as f64)),
            Err(e) => {
                skipped.insert("gd_rate".into(), e.to_string());
            }
        }
    }
    let second = [STEP_BELOW_INVERSE_NORM, INIT_ORTHOGONAL, M2_NONSINGULAR, VARIANCE_STEP_BOUND];
    match bounds::var_constants(&mctx, &w1) {
        Ok(c) => {
            let mut r = BoundReport::new("second_moment_rate", pick(&rep, &second)).value("c0", c.c0);
            let alpha = schedule.sup(1)?;
            if let Some(c1) = c.c1 {
                r = r.value("c1", c1).value("envelope_at_k", bounds::harmonic_envelope(c1, alpha, mctx.sigma, k.max(1)));
            }
            if let Some(c2) = c.c2 {
                r = r.value("c2", c2).value("envelope_at_k", bounds::constant_step_envelope(c2, alpha, mctx.sigma, k));
            }
            if let Some(s) = c.stationary_norm {
                r = r.value("stationary_norm", s);
            }
            if matches!(p.moments.provenance, Provenance::Estimated(_)) {
                r = r.invalid();
            }
            reports.push(r.input("k", k as f64));
        }
        Err(e) => {
            skipped.insert("second_moment_rate".into(), e.to_string());
        }
    }
    let tau = p.scheme.tau().tau();
    match (schedule.constant_alpha(), tau) {
        (Some(alpha), Some(tau)) => {
            match bounds::gmc_rate(wp, alpha, tau, 2.0) {
                Ok(g) => reports.push(
                    BoundReport::new("gmc_rate", pick(&rep, &[COMPACT_SUPPORT_STEP]))
                        .value("r2_squared", g.rq_pow_q)
                        .value("r2", g.rq)
                        .input("tau", tau),
                ),
                Err(e) => {
                    skipped.insert("gmc_rate".into(), e.to_string());
                }
            }
            let c3 = spec.c3.unwrap_or(10.0 * (&w1 - &wp.w_hat).norm());
            match bounds::conv_point_budget(&mctx, tau, spec.epsilon, c3) {
                Ok(b) => reports.push(
                    BoundReport::new("point_mass_budget", pick(&rep, &[COMPACT_SUPPORT_STEP]))
                        .value("alpha_max", b.alpha_max)
                        .value("k_min", b.k_min)
                        .input("epsilon", spec.epsilon)
                        .input("c3", c3),
                ),
                Err(e) => {
                    skipped.insert("point_mass_budget".into(), e.to_string());
                }
            }
        }
        (None, _) => {
            skipped.insert("gmc_rate".into(), "needs a constant step size".into());
        }
        (_, None) => {
            skipped.insert("gmc_rate".into(), "weights have unbounded support".into());
        }
    }
    match (&data.dataset.w_star, &data.dataset.sigma_eps) {
        (Some(w_star), Some(sigma)) => match bounds::asym_risk_bounds(wp, w_star, sigma) {
            Ok(r) => reports.push(
                BoundReport::new("limit_risk", vec![])
                    .value("lower", r.lower)
                    .value("upper", r.upper)
                    .value("bias", r.bias)
                    .value("variance", r.variance)
                    .value("misfit", r.misfit)
                    .input("scale", r.scale),
            ),
            Err(e) => {
                skipped.insert("limit_risk".into(), e.to_string());
            }
        },
        _ => {
            skipped.insert("limit_risk".into(), "dataset has no ground truth or noise covariance".into());
        }
    }
    let n = wp.n();
    let uniform = build_weighted_problem(data.dataset.clone(), &Vector::from_element(n, 1.0 / n as f64))?;
    match bounds::condition_speedup(&uniform, wp) {
        Ok(s) => reports.push(BoundReport::new("condition_speedup", vec![]).value("ratio", s.ratio).value("bound", s.bound)),
        Err(e) => {
            skipped.insert("condition_speedup".into(), e.to_string());
        }
    }
    match bounds::variance_ceiling(&mctx) {
        Ok(v) => reports.push(
            BoundReport::new("variance_ceiling", pick(&rep, &[VARIANCE_STEP_BOUND]))
                .value("ceiling", v.ceiling)
                .value("step_free", v.step_free)
                .value("residual_level", v.residual_level),
        ),
        Err(e) => {
            skipped.insert("variance_ceiling".into(), e.to_string());
        }
    }

    let file = BoundsFile {
        inputs: bounds::inputs_digest(&mctx),
        assumptions: rep,
        bounds: reports,
        skipped,
    };
    let path = ctx.path("bounds.json");
    write_json(&path, &file)?;
    out.wrote(path);
    out.stdout = Some(serde_json::to_string_pretty(&file).map_err(|e| CliError::Config(e.to_string()))?);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub label: String,
    pub ks: Vec<usize>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    /// Tr A_k from the moment recursion, when it applies.
    pub exact: Vec<Option<f64>>,
    pub envelope: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure1 {
    pub alpha: f64,
    pub curves: Vec<Curve>,
    pub table: Table,
    pub warnings: Vec<String>,
}

pub fn figure1_data(ctx: &Context) -> Result<Figure1> {
    let data = ctx.data()?;
    let defaults = [
        ("uniform", SchemeSpec::Uniform),
        ("importance", SchemeSpec::NormSoftmax { sign: 1.0 }),
    ];
    let prepared = ctx.compared(&data.dataset, &defaults)?;
    let schedule = resolve_schedule(ctx.schedule_spec()?, &prepared)?;
    let d = data.dataset.d();
    let w1 = start_point(ctx.cfg.w1.as_ref(), d)?;
    let k_max = ctx.cfg.k_max;
    let mut curves = Vec::new();
    let mut warnings = Vec::new();
    for p in &prepared {
        let opts = EnsembleOptions {
            run: ctx.run_opts(),
            second_moment: false,
        };
        let e = montecarlo::ensemble_moments(&p.problem, &p.scheme, &schedule, &w1, k_max, ctx.cfg.n_traj, ctx.cfg.seed, opts)?;
        warnings.extend(e.warnings.iter().map(|w| format!("{}: {w}", p.label)));
        let env = SqDistanceEnvelope::new(&p.problem, &p.scheme, &schedule, &w1)?;
        let exact: Vec<Option<f64>> = match MomentContext::new(&p.problem, &p.moments, schedule.clone())
            .and_then(|m| moments::propagate(&m, &(&w1 - &p.problem.w_hat), k_max))
        {
            Ok(states) => states.iter().map(|s| Some(s.a.trace())).collect(),
            Err(err) => {
                warnings.push(format!("{}: no exact moments: {err}", p.label));
                vec![None; k_max + 1]
            }
        };
        curves.push(Curve {
            label: p.label.clone(),
            envelope: e.ks.iter().map(|k| env.at(*k)).collect(),
            ks: e.ks,
            mean: e.sq_distance,
            se: e.standard_errors,
            exact,
        });
    }
    let mut header = vec!["k".to_string()];
    for c in &curves {
        for s in ["mean", "se", "exact", "envelope"] {
            header.push(format!("{}_{s}", c.label));
        }
    }
    let mut table = Table::new(header);
    for i in 0..=k_max {
        let mut row = vec![(i + 1).to_string()];
        for c in &curves {
            row.extend([num(c.mean[i]), num(c.se[i]), opt(c.exact[i]), opt(c.envelope[i])]);
        }
        table.push(row);
    }
    Ok(Figure1 {
        alpha: schedule.sup(1)?,
        curves,
        table,
        warnings,
    })
}

pub fn figure1(ctx: &Context) -> Result<Outcome> {
    let mut out = Outcome::default();
    let fig = figure1_data(ctx)?;
    out.warnings.extend(fig.warnings.iter().cloned());
    let path = ctx.path("figure1.csv");
    fig.table.write(&path)?;
    out.wrote(path);
    ctx.write_resolved(&mut out, json!({ "alpha": fig.alpha }))?;
    let mut series = Vec::new();
    for c in &fig.curves {
        series.push(Series {
            label: c.label.clone(),
            points: c.ks.iter().zip(&c.mean).map(|(k, v)| (*k as f64, *v)).collect(),
            dashed: false,
        });
    }
    for c in &fig.curves {
        series.push(Series {
            label: format!("{} envelope", c.label),
            points: c.ks.iter().zip(&c.envelope).filter_map(|(k, v)| Some((*k as f64, (*v)?))).collect(),
            dashed: true,
        });
    }
    ctx.write_chart(
        &mut out,
        "figure1.svg",
        &Chart {
            title: "Convergence in squared distance".into(),
            x_label: "k".into(),
            y_label: "E|w_k - w_hat|^2".into(),
            log_x: false,
            log_y: true,
            series,
        },
    )?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskCurve {
    pub label: String,
    pub grid: Vec<usize>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
    /// Closed-form lim_k E‖w* − ŵ_k‖².
    pub limit: f64,
}

impl RiskCurve {
    pub fn last(&self) -> (f64, f64) {
        (*self.mean.last().unwrap(), *self.se.last().unwrap())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure2 {
    pub alpha: f64,
    pub horizon: usize,
    pub curves: Vec<RiskCurve>,
    pub table: Table,
}

/// Roughly log-spaced integers from 1 to `top`, both included.
pub fn log_grid(top: usize, points: usize) -> Vec<usize> {
    let top = top.max(1);
    let points = points.max(2);
    let mut g: Vec<usize> = (0..points)
        .map(|i| (top as f64).powf(i as f64 / (points - 1) as f64).round() as usize)
        .collect();
    g.push(1);
    g.push(top);
    g.sort_unstable();
    g.dedup();
    g
}

pub fn figure2_data(ctx: &Context) -> Result<Figure2> {
    let data = ctx.data()?;
    let ds = &data.dataset;
    let (w_star, sigma) = match (&ds.w_star, &ds.sigma_eps) {
        (Some(w), Some(s)) => (w, s),
        _ => return Err(CliError::Config("figure2 needs a dataset with w_star and noise levels".into())),
    };
    let defaults = [
        ("good", SchemeSpec::NormSoftmax { sign: 1.0 }),
        ("bad", SchemeSpec::NormSoftmax { sign: -1.0 }),
    ];
    let prepared = ctx.compared(ds, &defaults)?;
    let alpha = match resolve_schedule(ctx.schedule_spec()?, &prepared)? {
        StepSchedule::Constant { alpha } => alpha,
        _ => return Err(CliError::Config("figure2 needs a constant step size".into())),
    };
    let risk = ctx.cfg.risk.clone().unwrap_or_default();
    let setups: Vec<RiskSetup> = prepared
        .iter()
        .map(|p| RiskSetup {
            x: &ds.x,
            scheme: &p.scheme,
            alpha,
            w_star,
            sigma_eps: sigma,
            seed: ctx.cfg.seed,
            enforce_assumptions: ctx.cfg.enforce_assumptions,
        })
        .collect();
    let horizon = match risk.k_burn {
        Some(k) => k,
        None => {
            let mut k = 1;
            for s in &setups {
                k = k.max(s.default_burn_in()?);
            }
            k
        }
    };
    let grid = log_grid(horizon + 1, risk.grid_points);
    let mut curves = Vec::new();
    for (p, s) in prepared.iter().zip(&setups) {
        let pts = montecarlo::risk_curve(s, &grid, risk.n_rep)?;
        let rb = bounds::asym_risk_bounds(&p.problem, w_star, sigma)?;
        curves.push(RiskCurve {
            label: p.label.clone(),
            grid: grid.clone(),
            mean: pts.iter().map(|x| x.0).collect(),
            se: pts.iter().map(|x| x.1).collect(),
            lower: rb.lower,
            upper: rb.upper,
            limit: s.expected_limit()?,
        });
    }
    let mut header = vec!["k".to_string()];
    for c in &curves {
        for s in ["mean", "se", "lower", "upper", "limit"] {
            header.push(format!("{}_{s}", c.label));
        }
    }
    let mut table = Table::new(header);
    for (i, k) in grid.iter().enumerate() {
        let mut row = vec![k.to_string()];
        for c in &curves {
            row.extend([num(c.mean[i]), num(c.se[i]), num(c.lower), num(c.upper), num(c.limit)]);
        }
        table.push(row);
    }
    Ok(Figure2 {
        alpha,
        horizon,
        curves,
        table,
    })
}

pub fn figure2(ctx: &Context) -> Result<Outcome> {
    let mut out = Outcome::default();
    let fig = figure2_data(ctx)?;
    let path = ctx.path("figure2.csv");
    fig.table.write(&path)?;
    out.wrote(path);
    let limits: BTreeMap<&str, serde_json::Value> = fig
        .curves
        .iter()
        .map(|c| {
            let (m, se) = c.last();
            (
                c.label.as_str(),
                json!({"estimate": m, "se": se, "limit": c.limit, "lower": c.lower, "upper": c.upper}),
            )
        })
        .collect();
    ctx.write_resolved(&mut out, json!({ "alpha": fig.alpha, "horizon": fig.horizon, "limits": limits }))?;
    let mut series = Vec::new();
    for c in &fig.curves {
        series.push(Series {
            label: c.label.clone(),
            points: c.grid.iter().zip(&c.mean).map(|(k, v)| (*k as f64, *v)).collect(),
            dashed: false,
        });
    }
    let span = |v: f64| vec![(1.0, v), (*fig.curves[0].grid.last().unwrap() as f64, v)];
    for c in &fig.curves {
        series.push(Series {
            label: format!("{} lower", c.label),
            points: span(c.lower),
            dashed: true,
        });
        series.push(Series {
            label: format!("{} upper", c.label),
            points: span(c.upper),
            dashed: true,
        });
    }
    ctx.write_chart(
        &mut out,
        "figure2.svg",
        &Chart {
            title: "Statistical error".into(),
            x_label: "k".into(),
            y_label: "E|w_k - w*|^2".into(),
            log_x: true,
            log_y: false,
            series,
        },
    )?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub name: String,
    pub k_max: usize,
    pub max_dev_m: f64,
    pub max_dev_a: f64,
}

/// Per-instance enumeration tables, keyed by instance name.
pub type OracleTables = Vec<(String, Table)>;

/// Run every oracle instance; budget violations are config errors.
pub fn oracle_results(ctx: &Context) -> Result<(Vec<OracleResult>, OracleTables)> {
    let spec = ctx
        .cfg
        .oracle
        .as_ref()
        .ok_or_else(|| CliError::Config("config has no oracle section".into()))?;
    let mut results = Vec::new();
    let mut tables = Vec::new();
    for inst in &spec.instances {
        let x = setup::matrix_from_rows(&inst.x)?;
        let ds = Dataset::new(x, Vector::from_vec(inst.y.clone()))?;
        let p = prepare(&inst.name, &inst.scheme, &ds, ctx.cfg.moment_samples, ctx.cfg.seed)?;
        if !matches!(p.moments.provenance, Provenance::Analytic) {
            return Err(CliError::Config(format!("{}: the oracle needs closed-form moments", inst.name)));
        }
        let schedule = resolve_schedule(&inst.schedule, std::slice::from_ref(&p))?;
        let w1 = start_point(inst.w1.as_ref(), ds.d())?;
        let brute = montecarlo::enumeration_oracle(&p.problem, &p.scheme, &schedule, &w1, inst.k_max, spec.max_outcomes as u128)
            .map_err(|e| match e {
                rwgd_core::Error::BudgetExceeded { required, cap } => CliError::Config(format!(
                    "{}: enumeration needs {required} outcome sequences, cap is {cap}",
                    inst.name
                )),
                other => other.into(),
            })?;
        let mctx = MomentContext::new(&p.problem, &p.moments, schedule.clone())?;
        let exact = moments::propagate(&mctx, &(&w1 - &p.problem.w_hat), inst.k_max)?;
        let mut dm = 0.0f64;
        let mut da = 0.0f64;
        for (a, b) in exact.iter().zip(&brute) {
            dm = dm.max((&a.m - &b.m).amax());
            da = da.max((&a.a - &b.a).amax());
        }
        let env = SqDistanceEnvelope::new(&p.problem, &p.scheme, &schedule, &w1)?;
        let mean_bound = |k: usize| bounds::mean_rate_bound(&mctx, k - 1, &w1).ok();
        tables.push((inst.name.clone(), moments_table(&brute, &schedule, &mean_bound, &env)));
        results.push(OracleResult {
            name: inst.name.clone(),
            k_max: inst.k_max,
            max_dev_m: dm,
            max_dev_a: da,
        });
    }
    Ok((results, tables))
}

fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub fn oracle(ctx: &Context) -> Result<Outcome> {
    let mut out = Outcome::default();
    let tol = ctx.cfg.oracle.as_ref().map_or(1e-10, |o| o.tolerance);
    let (results, tables) = oracle_results(ctx)?;
    let mut summary = Table::new(["instance", "k_max", "max_dev_m", "max_dev_a", "pass"]);
    let mut failed = Vec::new();
    for r in &results {
        let pass = r.max_dev_m <= tol && r.max_dev_a <= tol;
        if !pass {
            failed.push(r.name.clone());
        }
        summary.push(vec![r.name.clone(), r.k_max.to_string(), num(r.max_dev_m), num(r.max_dev_a), pass.to_string()]);
    }
    let path = ctx.path("oracle.csv");
    summary.write(&path)?;
    out.wrote(path);
    for (name, t) in &tables {
        let path = ctx.path(&format!("oracle_{}.csv", file_stem(name)));
        t.write(&path)?;
        out.wrote(path);
    }
    if !failed.is_empty() {
        return Err(CliError::Check(format!("oracle deviation above {tol:e} for {}", failed.join(", "))));
    }
    Ok(out)
}

pub fn ensure_scheme_support(scheme: &WeightingScheme) -> bool {
    scheme.support().is_some()
}

pub fn out_dir_for(cfg: &ExperimentConfig, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf).unwrap_or_else(|| cfg.outputs.csv_dir.clone())
}
