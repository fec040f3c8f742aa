//! Command dispatch: runs one experiment inside a sized thread pool and
//! writes its artifacts.

use std::path::PathBuf;
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};

use rwre_core::env::{check_hypotheses, Environment, EnvironmentModel};
use rwre_core::lattice;
use rwre_core::pair::{common_regenerations, intersection_profile, simulate_pair, YOptions};
use rwre_core::regen::{detect_regenerations, slabs, Confirm};
use rwre_core::renewal::{
    box_exit_experiment, forward_recurrence, forward_recurrence_bound, halfline_green, occupation_experiment, OneDimWalk,
    SampledChain,
};
use rwre_core::rng::StreamKey;
use rwre_core::stats::{self, fit_loglog};
use rwre_core::walk::simulate;

use crate::config::{powers_of_two, ExperimentConfig};
use crate::error::{LabError, LabResult};
use crate::experiments::*;
use crate::output::{f, Artifacts, Plot, Provenance};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Hypotheses,
    Simulate,
    Regen,
    Estimate,
    Pair,
    Ychain,
    Green,
    Variance,
    Intersections,
    Clt,
    Occupation,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Hypotheses => "hypotheses",
            Command::Simulate => "simulate",
            Command::Regen => "regen",
            Command::Estimate => "estimate",
            Command::Pair => "pair",
            Command::Ychain => "ychain",
            Command::Green => "green",
            Command::Variance => "variance",
            Command::Intersections => "intersections",
            Command::Clt => "clt",
            Command::Occupation => "occupation",
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Fail when an acceptance threshold is violated.
    pub check: bool,
    /// Run even if the model fails its hypotheses.
    pub force: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub written: Vec<PathBuf>,
    pub checks: Vec<CheckOutcome>,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    model: Arc<EnvironmentModel>,
    key: StreamKey,
    out: Artifacts,
    checks: Vec<CheckOutcome>,
}

impl Ctx<'_> {
    fn check(&mut self, name: &str, pass: bool, detail: String) {
        self.checks.push(CheckOutcome { name: name.into(), pass, detail });
    }

    fn y_options(&self) -> YOptions {
        YOptions { confirm: Confirm::Horizon(self.cfg.y_horizon), ..YOptions::default() }
    }
}

pub fn run(cmd: Command, cfg: &ExperimentConfig, opts: RunOptions) -> LabResult<RunReport> {
    cfg.validate()?;
    let model = cfg.load_model()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| LabError::Pool(e.to_string()))?;
    let report = check_hypotheses(&model);
    if cmd != Command::Hypotheses && !report.all_pass() && !opts.force {
        let detail = report.witnesses.iter().map(|w| format!("{} [{}]: {}", w.hypothesis, w.component, w.detail)).collect::<Vec<_>>().join("; ");
        return Err(LabError::Hypotheses { model: cfg.model.clone(), detail });
    }
    let mut ctx = Ctx {
        cfg,
        model,
        key: StreamKey::new(cfg.master_seed, cmd.name()),
        out: Artifacts::create(&cfg.out, Provenance::of(cfg))?,
        checks: Vec::new(),
    };
    pool.install(|| -> LabResult<()> {
        let body = match cmd {
            Command::Hypotheses => hypotheses(&mut ctx)?,
            Command::Simulate => simulate_cmd(&mut ctx)?,
            Command::Regen => regen(&mut ctx)?,
            Command::Estimate => estimate(&mut ctx)?,
            Command::Pair => pair(&mut ctx)?,
            Command::Ychain => ychain(&mut ctx)?,
            Command::Green => green(&mut ctx)?,
            Command::Variance => variance(&mut ctx)?,
            Command::Intersections => intersections(&mut ctx)?,
            Command::Clt => clt(&mut ctx)?,
            Command::Occupation => occupation(&mut ctx)?,
        };
        let checks = serde_json::to_value(&ctx.checks)?;
        ctx.out.summary(cmd.name(), json!({ "model": cfg.model, "data": body, "checks": checks }))
    })?;
    let failed: Vec<String> = ctx.checks.iter().filter(|c| !c.pass).map(|c| format!("{}: {}", c.name, c.detail)).collect();
    if opts.check && !failed.is_empty() {
        return Err(LabError::Check(failed.join("; ")));
    }
    Ok(RunReport { written: ctx.out.written().to_vec(), checks: ctx.checks })
}

fn hypotheses(ctx: &mut Ctx) -> LabResult<Value> {
    let r = check_hypotheses(&ctx.model);
    let rows: Vec<Vec<String>> = r.witnesses.iter().map(|w| vec![w.hypothesis.clone(), w.component.clone(), w.detail.clone()]).collect();
    ctx.out.table("witnesses", &["hypothesis", "component", "detail"], &rows, Plot::Points)?;
    ctx.check("hypotheses", r.all_pass(), format!("N={} M={} R={}", r.pass_n, r.pass_m, r.pass_r));
    Ok(json!({
        "pass_N": r.pass_n,
        "pass_M": r.pass_m,
        "pass_R": r.pass_r,
        "weak_level_form_only": r.weak_level_form_only,
        "witnesses": r.witnesses,
    }))
}

fn path_rows(path: &rwre_core::walk::Path) -> Vec<Vec<String>> {
    (0..=path.steps())
        .map(|k| {
            let mut row = vec![k.to_string()];
            row.extend(path.position(k).iter().map(|c| c.to_string()));
            row.push(path.levels()[k].to_string());
            row
        })
        .collect()
}

fn coord_header(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}{i}")).collect()
}

fn simulate_cmd(ctx: &mut Ctx) -> LabResult<Value> {
    let d = ctx.model.d;
    let env = Environment::new(Arc::clone(&ctx.model), ctx.key.tagged("env").hash());
    let path = simulate(&env, &lattice::origin(d), ctx.cfg.steps, &mut ctx.key.tagged("walk").stream());
    let mut header = vec!["k".to_string()];
    header.extend(coord_header("x", d));
    header.push("level".into());
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    ctx.out.table("path", &h, &path_rows(&path), Plot::Lines)?;
    let end = path.end().to_vec();
    let speed: Vec<f64> = end.iter().map(|&x| x as f64 / ctx.cfg.steps as f64).collect();
    Ok(json!({ "steps": ctx.cfg.steps, "end": end, "x_n_over_n": speed }))
}

fn tail_rows(t: &TailResult) -> Vec<Vec<String>> {
    let sorted = stats::sorted(&t.values);
    let n = sorted.len() as f64;
    let mut rows = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i];
        while i < sorted.len() && sorted[i] == v {
            i += 1;
        }
        rows.push(vec![f(v), f((sorted.len() - i) as f64 / n)]);
    }
    rows
}

fn tail_check(ctx: &mut Ctx, name: &str, t: &TailResult) {
    let pass = !t.fit.degenerate && t.fit.rate > 0.0 && t.fit.ci95.0 > 0.0;
    ctx.check(name, pass, format!("rate {} CI ({}, {}) from {} samples, {} censored", t.fit.rate, t.fit.ci95.0, t.fit.ci95.1, t.fit.samples, t.censored));
}

fn regen(ctx: &mut Ctx) -> LabResult<Value> {
    let cfg = ctx.cfg;
    let d = ctx.model.d;
    let env = Environment::new(Arc::clone(&ctx.model), ctx.key.tagged("env").hash());
    let path = simulate(&env, &lattice::origin(d), cfg.steps, &mut ctx.key.tagged("walk").stream());
    let rec = detect_regenerations(&path, cfg.a, cfg.confirm())?;
    let times: Vec<Vec<String>> = rec.times.iter().enumerate().map(|(k, t)| vec![(k + 1).to_string(), t.to_string()]).collect();
    ctx.out.table("regen", &["k", "tau"], &times, Plot::Lines)?;
    let sl = slabs(&path, &rec);
    let mut header = vec!["index".to_string(), "duration".into()];
    header.extend(coord_header("dx", d));
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = sl
        .iter()
        .map(|s| {
            let mut r = vec![s.index.to_string(), s.duration.to_string()];
            r.extend(s.displacement.iter().map(|c| c.to_string()));
            r
        })
        .collect();
    ctx.out.table("slabs", &h, &rows, Plot::Points)?;
    let durations: Vec<f64> = sl.iter().filter(|s| !s.initial).map(|s| s.duration as f64).collect();
    let lag1 = if durations.len() > 2 { stats::lag1_autocorrelation(&durations) } else { f64::NAN };
    let tail = tau1_tail(&ctx.model, cfg.samples, (8 * cfg.confirm_horizon).max(2048), cfg.a, cfg.confirm(), &ctx.key.tagged("tau1"))?;
    ctx.out.table("tau1_tail", &["t", "survival"], &tail_rows(&tail), Plot::Lines)?;
    tail_check(ctx, "tau1-tail", &tail);
    if durations.len() > 2 {
        let half = 2.576 / (durations.len() as f64).sqrt();
        ctx.check("slab-lag1", lag1.abs() <= half, format!("lag-1 autocorrelation {lag1} vs ±{half}"));
    }
    Ok(json!({
        "a": cfg.a,
        "confirm_horizon": cfg.confirm_horizon,
        "regenerations": rec.times.len(),
        "censored_tail": rec.censored_tail,
        "slab_lag1_autocorrelation": lag1,
        "tau1_tail": tail.fit,
        "tau1_censored": tail.censored,
    }))
}

fn estimate_rows(e: &EstimateResult) -> Vec<Vec<String>> {
    let v = &e.diffusion;
    let mut rows = Vec::new();
    for i in 0..v.v_hat.len() {
        rows.push(vec!["v".into(), i.to_string(), String::new(), f(v.v_hat[i]), f(v.v_se[i])]);
    }
    for i in 0..v.d_hat.len() {
        for j in 0..v.d_hat.len() {
            rows.push(vec!["D".into(), i.to_string(), j.to_string(), f(v.d_hat[i][j]), f(v.d_se[i][j])]);
        }
    }
    for i in 0..e.xn_over_n.len() {
        rows.push(vec!["x_n/n".into(), i.to_string(), String::new(), f(e.xn_over_n[i]), f(e.xn_over_n_se[i])]);
        rows.push(vec!["drift".into(), i.to_string(), String::new(), f(e.drift_average[i]), f(e.drift_average_se[i])]);
    }
    rows
}

fn estimate(ctx: &mut Ctx) -> LabResult<Value> {
    let cfg = ctx.cfg;
    let e = estimate_from_paths(&ctx.model, cfg.environments.max(2), cfg.steps, cfg.a, cfg.confirm(), &ctx.key)?;
    ctx.out.table("estimate", &["quantity", "i", "j", "value", "se"], &estimate_rows(&e), Plot::Points)?;
    let coherence = e.coherence();
    ctx.check("velocity-coherence", coherence <= 3.0, format!("largest pairwise gap {coherence} joint se"));
    ctx.check("diffusion-psd", e.diffusion.psd, format!("min eigenvalue {}", e.diffusion.min_eigenvalue));
    Ok(json!({
        "v_hat": e.diffusion.v_hat,
        "v_se": e.diffusion.v_se,
        "D_hat": e.diffusion.d_hat,
        "D_se": e.diffusion.d_se,
        "slab_count": e.diffusion.slab_count,
        "degeneracy": e.degeneracy,
        "x_n_over_n": e.xn_over_n,
        "drift_average": e.drift_average,
        "coherence": coherence,
    }))
}

fn scaling_rows(r: &ScalingResult) -> Vec<Vec<String>> {
    r.rows.iter().map(|row| vec![row.n.to_string(), f(row.value), f(row.se), row.clipped.to_string()]).collect()
}

fn scaling_check(ctx: &mut Ctx, name: &str, r: &ScalingResult) {
    match &r.fit {
        Some(fit) => ctx.check(name, fit.upper() < 1.0, format!("slope {} CI ({}, {})", fit.slope, fit.ci95.0, fit.ci95.1)),
        None => ctx.check(name, false, "fewer than four positive points; no slope".into()),
    }
}

fn pair(ctx: &mut Ctx) -> LabResult<Value> {
    let cfg = ctx.cfg;
    let origin = lattice::origin(ctx.model.d);
    let env = Environment::new(Arc::clone(&ctx.model), ctx.key.tagged("env").hash());
    let pp = simulate_pair(&env, &origin, &origin, cfg.steps, &mut ctx.key.tagged("x").stream(), &mut ctx.key.tagged("xt").stream());
    let rec = common_regenerations(&pp, cfg.confirm())?;
    let rows: Vec<Vec<String>> = rec
        .pairs
        .iter()
        .zip(&rec.stages)
        .enumerate()
        .map(|(i, ((m, mt), k))| vec![(i + 1).to_string(), m.to_string(), mt.to_string(), k.to_string()])
        .collect();
    ctx.out.table("common_regenerations", &["i", "mu", "mu_tilde", "stages"], &rows, Plot::Lines)?;
    let grid: Vec<usize> = cfg.grid_or(powers_of_two(6, 30)).into_iter().filter(|&n| n <= cfg.steps).collect();
    let profile = if grid.is_empty() { Vec::new() } else { intersection_profile(&pp, &grid)? };
    let prow: Vec<Vec<String>> = grid.iter().zip(&profile).map(|(n, c)| vec![n.to_string(), c.to_string()]).collect();
    ctx.out.table("pair_intersections", &["n", "count"], &prow, Plot::LogLog)?;
    let tail = mu1_tail(&ctx.model, cfg.samples, (8 * cfg.confirm_horizon).max(4096), cfg.confirm(), &ctx.key.tagged("mu1"))?;
    ctx.out.table("mu1_tail", &["t", "survival"], &tail_rows(&tail), Plot::Lines)?;
    tail_check(ctx, "mu1-tail", &tail);
    Ok(json!({
        "common_regenerations": rec.pairs.len(),
        "censored_tail": rec.censored_tail,
        "mu1_tail": tail.fit,
        "mu1_censored": tail.censored,
    }))
}

fn ychain(ctx: &mut Ctx) -> LabResult<Value> {
    let cfg = ctx.cfg;
    let opts = ctx.y_options();
    let d = ctx.model.d;
    let sym = qbar_symmetry(&ctx.model, cfg.samples, &opts, &ctx.key.tagged("qbar"))?;
    let q = transition_counts(&ctx.model, &lattice::origin(d), cfg.samples, false, &opts, &ctx.key.tagged("q"))?;
    let mut header = vec!["variant".to_string()];
    header.extend(coord_header("dy", d));
    header.extend(["count".to_string(), "p".to_string()]);
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut rows = Vec::new();
    for (variant, counts) in [("q", q.into_iter().collect::<Vec<_>>()), ("qbar", sym.counts.clone())] {
        for (y, c) in counts {
            let mut r = vec![variant.to_string()];
            r.extend(y.iter().map(|v| v.to_string()));
            r.extend([c.to_string(), f(c as f64 / cfg.samples as f64)]);
            rows.push(r);
        }
    }
    ctx.out.table("transitions", &h, &rows, Plot::Points)?;
    ctx.check("qbar-symmetry", sym.pass, format!("TV {} vs 3 x MC bound {}", sym.tv, 3.0 * sym.mc_bound));
    let e = hyperplane_direction(&ctx.model)?;
    let starts = vec![lattice::origin(d), e.iter().map(|c| 2 * c).collect()];
    let inc = support_inclusion(&ctx.model, &starts, cfg.samples, &opts, &ctx.key.tagged("inclusion"))?;
    ctx.check("support-inclusion", inc.violations.is_empty(), format!("{} violations", inc.violations.len()));
    let coupling = coupling_decay(&ctx.model, &cfg.x_norms, cfg.samples, &opts, &ctx.key.tagged("coupling"))?;
    let crow: Vec<Vec<String>> = coupling
        .rows
        .iter()
        .map(|r| vec![r.norm.to_string(), r.trials.to_string(), r.disagreements.to_string(), f(r.p), r.mechanism_violations.to_string()])
        .collect();
    ctx.out.table("coupling", &["norm", "trials", "disagreements", "p", "mechanism_violations"], &crow, Plot::Lines)?;
    let (pass, detail) = match &coupling.fit {
        Some(fit) => (
            coupling.strictly_decreasing && fit.upper() < 0.0,
            format!("strictly decreasing {}, slope {} CI ({}, {})", coupling.strictly_decreasing, fit.slope, fit.ci95.0, fit.ci95.1),
        ),
        None => (false, "no disagreements observed; no decay rate".into()),
    };
    ctx.check("coupling-decay", pass, detail);
    ctx.check("coupling-mechanism", coupling.mechanism_violations() == 0, format!("{} violations", coupling.mechanism_violations()));
    Ok(json!({ "symmetry": { "tv": sym.tv, "mc_bound": sym.mc_bound }, "inclusion": inc, "coupling": coupling }))
}

fn green(ctx: &mut Ctx) -> LabResult<Value> {
    let cfg = ctx.cfg;
    let walk = if cfg.green_steps.is_empty() {
        OneDimWalk::simple()
    } else {
        OneDimWalk::new(cfg.green_steps.clone(), cfg.green_probs.clone())?
    };
    let table = halfline_green(&walk, cfg.r0, cfg.window, cfg.ceiling)?;
    let rows: Vec<Vec<String>> = table.rows().into_iter().map(|(s, t, g)| vec![s.to_string(), t.to_string(), f(g)]).collect();
    ctx.out.table("green", &["s", "t", "g"], &rows, Plot::Points)?;
    let s = cfg.r0 + 2.min(cfg.window as i64);
    let targets: Vec<i64> = (1..=cfg.window.min(4) as i64).map(|k| cfg.r0 + k).collect();
    let mc = green_mc_check(&walk, &table, s, &targets, cfg.samples, 3.0, &ctx.key.tagged("excursions"))?;
    let mrow: Vec<Vec<String>> = mc.iter().map(|r| vec![r.s.to_string(), r.t.to_string(), f(r.exact), f(r.mc_mean), f(r.mc_se)]).collect();
    ctx.out.table("green_mc", &["s", "t", "g", "mc_mean", "mc_se"], &mrow, Plot::Points)?;
    ctx.check("green-mc", mc.iter().all(|r| r.within), format!("{} of {} within 3 se", mc.iter().filter(|r| r.within).count(), mc.len()));
    if walk.is_symmetric() {
        ctx.check("green-symmetry", table.max_asymmetry() < 1e-9, format!("max asymmetry {}", table.max_asymmetry()));
    }
    let total: f64 = cfg.durations.iter().sum();
    let law: Vec<f64> = cfg.durations.iter().map(|p| p / total).collect();
    let rec = forward_recurrence(&law, cfg.recurrence_n, 1);
    let bound = forward_recurrence_bound(&law, 1);
    let rrow: Vec<Vec<String>> = rec.iter().enumerate().map(|(n, b)| vec![n.to_string(), f(*b)]).collect();
    ctx.out.table("recurrence", &["n", "mean_forward_time"], &rrow, Plot::Lines)?;
    let sup = rec.iter().cloned().fold(0.0, f64::max);
    ctx.check("recurrence-bound", sup <= bound + 1e-12, format!("sup {sup} vs bound {bound}"));
    Ok(json!({
        "ceiling": table.ceiling,
        "last_change": table.last_change,
        "max_asymmetry": table.max_asymmetry(),
        "linear_growth_constant": table.linear_growth_constant(),
        "recurrence_sup": sup,
        "recurrence_bound": bound,
    }))
}

fn variance(ctx: &mut Ctx) -> LabResult<Value> {
    let cfg = ctx.cfg;
    let grid = cfg.grid_or(powers_of_two(6, 12));
    let r = quenched_mean_variance(&ctx.model, &grid, cfg.environments, cfg.walks_per_env, &ctx.key)?;
    let header = ["n", "v_hat", "se", "clipped"];
    ctx.out.table("variance", &header, &scaling_rows(&r), Plot::LogLog)?;
    scaling_check(ctx, "variance-slope", &r);
    let control = synthetic_ballistic_variance(&grid, cfg.environments, cfg.walks_per_env, &ctx.key.tagged("control"))?;
    ctx.out.table("variance_control", &header, &scaling_rows(&control), Plot::LogLog)?;
    let slope = control.fit.as_ref().map_or(f64::NAN, |fit| fit.slope);
    ctx.check("ballistic-control", (slope - 2.0).abs() <= 0.1, format!("control slope {slope}"));
    Ok(json!({ "variance": r, "control": control }))
}

fn intersections(ctx: &mut Ctx) -> LabResult<Value> {
    let cfg = ctx.cfg;
    let grid = cfg.grid_or(powers_of_two(6, 13));
    let origin = lattice::origin(ctx.model.d);
    let r = intersection_experiment(&ctx.model, &grid, cfg.replicas, (&origin, &origin), &ctx.key)?;
    ctx.out.table("intersections", &["n", "mean_count", "se", "clipped"], &scaling_rows(&r), Plot::LogLog)?;
    scaling_check(ctx, "intersection-slope", &r);
    Ok(serde_json::to_value(&r)?)
}

fn clt(ctx: &mut Ctx) -> LabResult<Value> {
    let cfg = ctx.cfg;
    let d = ctx.model.d;
    let est = estimate_from_paths(&ctx.model, cfg.environments.max(2), cfg.steps, cfg.a, cfg.confirm(), &ctx.key.tagged("estimate"))?;
    let v = &est.diffusion;
    let mut header = vec!["env_seed".to_string(), "direction".into()];
    header.extend(coord_header("u", d));
    header.extend(
        ["theory_var", "empirical_var", "degenerate", "ks", "p_value", "p_value_recentred", "mean_offset", "mean_offset_se", "pass"]
            .map(String::from),
    );
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for &seed in &cfg.env_seeds {
        let r = clt_experiment(&ctx.model, seed, cfg.clt_n, cfg.clt_walks, &v.v_hat, &v.d_hat, &ctx.key.with(seed))?;
        for (i, dir) in r.directions.iter().enumerate() {
            let mut row = vec![seed.to_string(), i.to_string()];
            row.extend(dir.u.iter().map(|x| f(*x)));
            let opt = |x: Option<f64>| x.map(f).unwrap_or_default();
            row.extend([
                f(dir.theory_var),
                f(dir.empirical_var),
                dir.degenerate.to_string(),
                opt(dir.ks_statistic),
                opt(dir.p_value),
                opt(dir.p_value_recentred),
                f(dir.mean_offset),
                f(dir.mean_offset_se),
                dir.pass.to_string(),
            ]);
            rows.push(row);
        }
        ctx.check(
            &format!("clt-env-{seed}"),
            r.pass(),
            r.directions.iter().map(|d| format!("u={:?} p={:?} collapse={:?}", d.u, d.p_value, d.collapse_ratio)).collect::<Vec<_>>().join(", "),
        );
        results.push(r);
    }
    ctx.out.table("clt", &h, &rows, Plot::Points)?;
    Ok(json!({ "v_hat": v.v_hat, "D_hat": v.d_hat, "slab_count": v.slab_count, "environments": results }))
}

fn occupation(ctx: &mut Ctx) -> LabResult<Value> {
    let cfg = ctx.cfg;
    let d = ctx.model.d;
    let chain = SampledChain { model: Arc::clone(&ctx.model), opts: ctx.y_options(), independent: false };
    let grid = cfg.grid_or(powers_of_two(8, 13));
    let origin = lattice::origin(d);
    let occ = occupation_experiment(&chain, &origin, cfg.alpha2, cfg.c, &grid, cfg.replicas, &ctx.key.tagged("occupation"))?;
    let rows: Vec<Vec<String>> = occ.grid.iter().zip(occ.s_n.iter().zip(&occ.se)).map(|(n, (s, se))| vec![n.to_string(), f(*s), f(*se)]).collect();
    ctx.out.table("occupation", &["n", "s_n", "se"], &rows, Plot::LogLog)?;
    match &occ.fit {
        Some(fit) => ctx.check("occupation-slope", fit.upper() < 1.0, format!("exponent {} CI ({}, {})", fit.slope, fit.ci95.0, fit.ci95.1)),
        None => ctx.check("occupation-slope", false, "occupation sums vanish; no exponent".into()),
    }
    let mut exits = Vec::new();
    for &r in &cfg.radii {
        exits.push(box_exit_experiment(&chain, r, &origin, cfg.replicas, cfg.exit_cap, &ctx.key.tagged("exit").with(r as u64))?);
    }
    let erows: Vec<Vec<String>> = exits
        .iter()
        .map(|e| vec![e.r.to_string(), f(e.mean_u), f(e.q50), f(e.q95), e.cap_hits.to_string()])
        .collect();
    ctx.out.table("exit", &["r", "mean_u", "q50", "q95", "cap_hits"], &erows, Plot::LogLog)?;
    let pts: Vec<(f64, f64)> = exits.iter().filter(|e| e.mean_u > 0.0).map(|e| (e.r as f64, e.mean_u)).collect();
    let exit_fit = if pts.len() >= 4 && pts.iter().all(|p| p.0 > 0.0) { Some(fit_loglog(&pts)?) } else { None };
    if let Some(fit) = &exit_fit {
        ctx.check("exit-polynomial", fit.slope > 0.0 && fit.slope.is_finite(), format!("log mean U vs log r slope {}", fit.slope));
    }
    let summaries: Vec<Value> = exits
        .iter()
        .map(|e| json!({ "r": e.r, "mean_u": e.mean_u, "se": e.se, "q50": e.q50, "q95": e.q95, "cap_hits": e.cap_hits }))
        .collect();
    Ok(json!({ "occupation": occ, "exit": summaries, "exit_fit": exit_fit }))
}
