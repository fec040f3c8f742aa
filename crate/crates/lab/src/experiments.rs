//! Monte Carlo experiments. Every task draws from its own keyed stream and
//! results are collected in task order, so outputs do not depend on the
//! thread count.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use rwre_core::env::{Environment, EnvironmentModel};
use rwre_core::lattice::{self, Site};
use rwre_core::pair::{common_regenerations, coupled_sample, intersection_profile, simulate_pair, y_chain_sample, ybar_sample, YOptions};
use rwre_core::regen::{
    degeneracy_check, detect_regenerations, estimate_diffusion, estimate_velocity, slabs, tail_fit, Confirm, DegeneracyReport,
    DiffusionEstimate, Slab, TailFit,
};
use rwre_core::renewal::{excursion_visits, GreenTable, OneDimWalk};
use rwre_core::rng::StreamKey;
use rwre_core::stats::{self, fit_log_rate, fit_loglog, ks_test, FitResult};
use rwre_core::walk::simulate;
use rwre_core::{Error, Result};

/// Largest n·Var(u·B_n(1)) still read as a collapsed direction.
pub const COLLAPSE_LIMIT: f64 = 4.0;
pub const KS_LEVEL: f64 = 0.01;

fn env_for(model: &Arc<EnvironmentModel>, key: &StreamKey) -> Environment {
    Environment::new(Arc::clone(model), key.tagged("env").hash())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingRow {
    pub n: usize,
    pub value: f64,
    pub se: f64,
    /// A negative estimate reported as 0.
    pub clipped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingResult {
    pub rows: Vec<ScalingRow>,
    /// log value against log n over the positive rows.
    pub fit: Option<FitResult>,
    /// Fewer than four positive rows.
    pub degenerate: bool,
}

impl ScalingResult {
    fn from_rows(rows: Vec<ScalingRow>) -> Result<Self> {
        let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.value > 0.0).map(|r| (r.n as f64, r.value)).collect();
        if pts.len() < 4 {
            return Ok(Self { rows, fit: None, degenerate: true });
        }
        Ok(Self { rows, fit: Some(fit_loglog(&pts)?), degenerate: false })
    }

    pub fn upper(&self) -> Option<f64> {
        self.fit.as_ref().map(FitResult::upper)
    }
}

fn check_grid(grid: &[usize]) -> Result<()> {
    if grid.is_empty() || grid[0] == 0 || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Precondition("n-grid must be non-empty, positive and strictly increasing".into()));
    }
    Ok(())
}

/// Cross-half covariance: `sample(e, w)` returns walk w's positions at the
/// grid in environment e.
fn split_covariance<F>(grid: &[usize], n_env: usize, walks: usize, sample: F) -> Result<ScalingResult>
where
    F: Fn(usize, usize) -> Vec<Vec<f64>> + Sync,
{
    check_grid(grid)?;
    if walks < 4 || walks % 2 == 1 {
        return Err(Error::Precondition(format!("walks per environment must be even and at least 4, got {walks}")));
    }
    if n_env < 2 {
        return Err(Error::Precondition("need at least 2 environments".into()));
    }
    let half = walks / 2;
    // halves[e][g] = (mean over first half, mean over second half)
    let halves: Vec<Vec<(Vec<f64>, Vec<f64>)>> = (0..n_env)
        .into_par_iter()
        .map(|e| {
            let pos: Vec<Vec<Vec<f64>>> = (0..walks).map(|w| sample(e, w)).collect();
            (0..grid.len())
                .map(|g| {
                    let d = pos[0][g].len();
                    let mut a = vec![0.0; d];
                    let mut b = vec![0.0; d];
                    for (w, p) in pos.iter().enumerate() {
                        let t = if w < half { &mut a } else { &mut b };
                        for (s, v) in t.iter_mut().zip(&p[g]) {
                            *s += v / half as f64;
                        }
                    }
                    (a, b)
                })
                .collect()
        })
        .collect();
    let ne = n_env as f64;
    let mut rows = Vec::with_capacity(grid.len());
    for (g, &n) in grid.iter().enumerate() {
        let d = halves[0][g].0.len();
        // centred on the first environment so identical inputs give exact zeros
        let (a0, b0) = (&halves[0][g].0, &halves[0][g].1);
        let mut abar = vec![0.0; d];
        let mut bbar = vec![0.0; d];
        for h in &halves {
            for c in 0..d {
                abar[c] += (h[g].0[c] - a0[c]) / ne;
                bbar[c] += (h[g].1[c] - b0[c]) / ne;
            }
        }
        let terms: Vec<f64> = halves
            .iter()
            .map(|h| {
                (0..d).map(|c| (h[g].0[c] - a0[c] - abar[c]) * (h[g].1[c] - b0[c] - bbar[c])).sum::<f64>() * ne / (ne - 1.0)
            })
            .collect();
        let v = stats::mean(&terms);
        let se = (stats::variance(&terms) / ne).sqrt();
        rows.push(ScalingRow { n, value: v.max(0.0), se, clipped: v < 0.0 });
    }
    ScalingResult::from_rows(rows)
}

/// Var_ω(E^ω_0 X_n) summed over coordinates, by the cross-half estimator.
pub fn quenched_mean_variance(
    model: &Arc<EnvironmentModel>,
    grid: &[usize],
    n_env: usize,
    walks: usize,
    key: &StreamKey,
) -> Result<ScalingResult> {
    check_grid(grid)?;
    let n_max = *grid.last().expect("non-empty");
    let origin = lattice::origin(model.d);
    let envs: Vec<Environment> = (0..n_env).map(|e| env_for(model, &key.with(e as u64))).collect();
    split_covariance(grid, n_env, walks, |e, w| {
        let mut rng = key.with(e as u64).tagged("walk").with(w as u64).stream();
        let path = simulate(&envs[e], &origin, n_max, &mut rng);
        grid.iter().map(|&n| lattice::to_f64(path.position(n))).collect()
    })
}

/// Control with E^ω X_n = n·W·e1, W ~ Uniform[0,1]: each step is e1 with
/// probability W and 0 otherwise, so the quenched-mean variance is n²/12.
pub fn synthetic_ballistic_variance(grid: &[usize], n_env: usize, walks: usize, key: &StreamKey) -> Result<ScalingResult> {
    check_grid(grid)?;
    let n_max = *grid.last().expect("non-empty");
    let weights: Vec<f64> = (0..n_env).map(|e| key.with(e as u64).tagged("W").stream().uniform()).collect();
    split_covariance(grid, n_env, walks, |e, w| {
        let mut rng = key.with(e as u64).tagged("walk").with(w as u64).stream();
        let mut x = 0.0;
        let mut out = Vec::with_capacity(grid.len());
        let mut g = 0;
        for k in 1..=n_max {
            if rng.uniform() < weights[e] {
                x += 1.0;
            }
            if k == grid[g] {
                out.push(vec![x, 0.0]);
                g += 1;
            }
        }
        out
    })
}

/// Mean |X_[0,n) ∩ X̃_[0,n)| over pairs sharing one environment per replica.
pub fn intersection_experiment(
    model: &Arc<EnvironmentModel>,
    grid: &[usize],
    replicas: usize,
    starts: (&[i64], &[i64]),
    key: &StreamKey,
) -> Result<ScalingResult> {
    check_grid(grid)?;
    if replicas < 2 {
        return Err(Error::Precondition("need at least 2 replicas".into()));
    }
    let n_max = *grid.last().expect("non-empty");
    let profiles: Vec<Vec<usize>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let rk = key.with(r as u64);
            let env = env_for(model, &rk);
            let pp = simulate_pair(&env, starts.0, starts.1, n_max, &mut rk.tagged("x").stream(), &mut rk.tagged("xt").stream());
            intersection_profile(&pp, grid)
        })
        .collect::<Result<_>>()?;
    let rows = grid
        .iter()
        .enumerate()
        .map(|(g, &n)| {
            let col: Vec<f64> = profiles.iter().map(|p| p[g] as f64).collect();
            ScalingRow { n, value: stats::mean(&col), se: (stats::variance(&col) / replicas as f64).sqrt(), clipped: false }
        })
        .collect();
    ScalingResult::from_rows(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateResult {
    pub paths: usize,
    pub steps: usize,
    pub diffusion: DiffusionEstimate,
    pub degeneracy: DegeneracyReport,
    /// Mean over paths of X_n/n, with its standard error.
    pub xn_over_n: Vec<f64>,
    pub xn_over_n_se: Vec<f64>,
    /// Mean over paths of the time-averaged local drift, with its standard error.
    pub drift_average: Vec<f64>,
    pub drift_average_se: Vec<f64>,
    pub tau1: Vec<usize>,
}

impl EstimateResult {
    /// Largest |difference| / joint se across the three velocity estimates.
    pub fn coherence(&self) -> f64 {
        let v = &self.diffusion;
        let mut worst: f64 = 0.0;
        for c in 0..v.v_hat.len() {
            let est = [
                (v.v_hat[c], v.v_se[c]),
                (self.xn_over_n[c], self.xn_over_n_se[c]),
                (self.drift_average[c], self.drift_average_se[c]),
            ];
            for i in 0..3 {
                for j in 0..i {
                    let joint = (est[i].1.powi(2) + est[j].1.powi(2)).sqrt();
                    let diff = (est[i].0 - est[j].0).abs();
                    worst = worst.max(if joint > 0.0 { diff / joint } else if diff > 1e-12 { f64::INFINITY } else { 0.0 });
                }
            }
        }
        worst
    }
}

/// Slab estimators pooled over independent paths, each in its own environment.
pub fn estimate_from_paths(
    model: &Arc<EnvironmentModel>,
    paths: usize,
    steps: usize,
    a: i64,
    confirm: Confirm,
    key: &StreamKey,
) -> Result<EstimateResult> {
    if paths < 2 {
        return Err(Error::Precondition("need at least 2 paths".into()));
    }
    let origin = lattice::origin(model.d);
    let per_path: Vec<(Vec<Slab>, Vec<f64>, Vec<f64>, Option<usize>)> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let pk = key.with(p as u64);
            let env = env_for(model, &pk);
            let path = simulate(&env, &origin, steps, &mut pk.tagged("walk").stream());
            let rec = detect_regenerations(&path, a, confirm)?;
            let sl: Vec<Slab> = slabs(&path, &rec).into_iter().filter(|s| !s.initial).collect();
            let xn: Vec<f64> = lattice::to_f64(path.end()).iter().map(|x| x / steps as f64).collect();
            let mut drift = vec![0.0; model.d];
            for j in 0..steps {
                for (s, v) in drift.iter_mut().zip(env.local_drift(path.position(j))) {
                    *s += v / steps as f64;
                }
            }
            Ok((sl, xn, drift, rec.times.first().copied()))
        })
        .collect::<Result<_>>()?;
    let pooled: Vec<Slab> = per_path.iter().flat_map(|p| p.0.iter().cloned()).collect();
    let velocity = estimate_velocity(&pooled)?;
    let diffusion = estimate_diffusion(&pooled, &velocity)?;
    let degeneracy = degeneracy_check(model, &diffusion.d_hat);
    let summarize = |f: &dyn Fn(&(Vec<Slab>, Vec<f64>, Vec<f64>, Option<usize>)) -> &Vec<f64>| -> (Vec<f64>, Vec<f64>) {
        (0..model.d)
            .map(|c| {
                let col: Vec<f64> = per_path.iter().map(|p| f(p)[c]).collect();
                (stats::mean(&col), (stats::variance(&col) / paths as f64).sqrt())
            })
            .unzip()
    };
    let (xn_over_n, xn_over_n_se) = summarize(&|p| &p.1);
    let (drift_average, drift_average_se) = summarize(&|p| &p.2);
    let tau1 = per_path.iter().filter_map(|p| p.3).collect();
    Ok(EstimateResult { paths, steps, diffusion, degeneracy, xn_over_n, xn_over_n_se, drift_average, drift_average_se, tau1 })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailResult {
    pub fit: TailFit,
    pub values: Vec<f64>,
    /// Samples without a confirmed time inside the simulated length.
    pub censored: usize,
}

fn tail_of(values: Vec<Option<usize>>, seed: u64) -> Result<TailResult> {
    let censored = values.iter().filter(|v| v.is_none()).count();
    let values: Vec<f64> = values.into_iter().flatten().map(|v| v as f64).collect();
    Ok(TailResult { fit: tail_fit(&values, seed)?, values, censored })
}

/// τ₁ from independent walks, each in a fresh environment.
pub fn tau1_tail(model: &Arc<EnvironmentModel>, samples: usize, len: usize, a: i64, confirm: Confirm, key: &StreamKey) -> Result<TailResult> {
    let origin = lattice::origin(model.d);
    let values: Vec<Option<usize>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let k = key.with(i as u64);
            let path = simulate(&env_for(model, &k), &origin, len, &mut k.tagged("walk").stream());
            Ok(detect_regenerations(&path, a, confirm)?.times.first().copied())
        })
        .collect::<Result<_>>()?;
    tail_of(values, key.tagged("tail").hash())
}

/// max(μ₁, μ̃₁) for pairs from the origin in a shared fresh environment.
pub fn mu1_tail(model: &Arc<EnvironmentModel>, samples: usize, len: usize, confirm: Confirm, key: &StreamKey) -> Result<TailResult> {
    let origin = lattice::origin(model.d);
    let values: Vec<Option<usize>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let k = key.with(i as u64);
            let pp = simulate_pair(&env_for(model, &k), &origin, &origin, len, &mut k.tagged("x").stream(), &mut k.tagged("xt").stream());
            Ok(common_regenerations(&pp, confirm)?.pairs.first().map(|&(m, mt)| m.max(mt)))
        })
        .collect::<Result<_>>()?;
    tail_of(values, key.tagged("tail").hash())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DirectionResult {
    pub u: Vec<f64>,
    pub theory_var: f64,
    pub empirical_var: f64,
    pub degenerate: bool,
    /// KS against N(0, uᵀD̂u); absent for degenerate directions.
    pub ks_statistic: Option<f64>,
    pub p_value: Option<f64>,
    /// n·Var(u·B_n(1)) for degenerate directions.
    pub collapse_ratio: Option<f64>,
    /// Empirical mean of u·B_n(1) and its standard error.
    pub mean_offset: f64,
    pub mean_offset_se: f64,
    /// KS p-value after subtracting the empirical mean; diagnostic only.
    pub p_value_recentred: Option<f64>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CltResult {
    pub env_seed: u64,
    pub n: usize,
    pub walks: usize,
    pub directions: Vec<DirectionResult>,
    /// Empirical covariance of B_n(1).
    pub covariance: Vec<Vec<f64>>,
}

impl CltResult {
    pub fn pass(&self) -> bool {
        self.directions.iter().all(|d| d.pass)
    }
}

fn quad(d: &[Vec<f64>], u: &[f64]) -> f64 {
    (0..u.len()).map(|i| (0..u.len()).map(|j| u[i] * d[i][j] * u[j]).sum::<f64>()).sum()
}

/// Quenched CLT diagnostic in one fixed environment: B_n(1) = (X_n − n v̂)/√n
/// against N(0, uᵀD̂u) along each coordinate axis and each degenerate direction.
pub fn clt_experiment(
    model: &Arc<EnvironmentModel>,
    env_seed: u64,
    n: usize,
    walks: usize,
    v_hat: &[f64],
    d_hat: &[Vec<f64>],
    key: &StreamKey,
) -> Result<CltResult> {
    if walks < 2 || n == 0 {
        return Err(Error::Precondition("need n ≥ 1 and at least 2 walks".into()));
    }
    let d = model.d;
    let env = Environment::new(Arc::clone(model), env_seed);
    let origin = lattice::origin(d);
    let scale = (n as f64).sqrt();
    let b: Vec<Vec<f64>> = (0..walks)
        .into_par_iter()
        .map(|w| {
            let path = simulate(&env, &origin, n, &mut key.with(w as u64).stream());
            path.end().iter().zip(v_hat).map(|(&x, v)| (x as f64 - n as f64 * v) / scale).collect()
        })
        .collect();
    let mut dirs: Vec<(Vec<f64>, bool)> = (0..d).map(|i| ((0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect(), false)).collect();
    for u in degeneracy_check(model, d_hat).complement {
        dirs.push((u, true));
    }
    let trace: f64 = (0..d).map(|i| d_hat[i][i]).sum();
    let directions = dirs
        .into_iter()
        .map(|(u, flagged)| {
            let proj: Vec<f64> = b.iter().map(|x| x.iter().zip(&u).map(|(a, c)| a * c).sum()).collect();
            let theory_var = quad(d_hat, &u);
            let empirical_var = stats::variance(&proj);
            let mean_offset = stats::mean(&proj);
            let mean_offset_se = (empirical_var / walks as f64).sqrt();
            let degenerate = flagged || theory_var <= 1e-9 * trace.max(1e-300);
            let base = DirectionResult {
                u,
                theory_var,
                empirical_var,
                degenerate,
                ks_statistic: None,
                p_value: None,
                collapse_ratio: None,
                mean_offset,
                mean_offset_se,
                p_value_recentred: None,
                pass: false,
            };
            if degenerate {
                let ratio = n as f64 * empirical_var;
                DirectionResult { collapse_ratio: Some(ratio), pass: ratio <= COLLAPSE_LIMIT, ..base }
            } else {
                let normal = Normal::new(0.0, theory_var.sqrt()).expect("positive variance");
                let ks = ks_test(&proj, |x| normal.cdf(x));
                let recentred: Vec<f64> = proj.iter().map(|x| x - mean_offset).collect();
                let rc = ks_test(&recentred, |x| normal.cdf(x));
                DirectionResult {
                    ks_statistic: Some(ks.statistic),
                    p_value: Some(ks.p_value),
                    p_value_recentred: Some(rc.p_value),
                    pass: ks.p_value > KS_LEVEL,
                    ..base
                }
            }
        })
        .collect();
    let mean: Vec<f64> = (0..d).map(|i| b.iter().map(|x| x[i]).sum::<f64>() / walks as f64).collect();
    let covariance = (0..d)
        .map(|i| (0..d).map(|j| b.iter().map(|x| (x[i] - mean[i]) * (x[j] - mean[j])).sum::<f64>() / (walks - 1) as f64).collect())
        .collect();
    Ok(CltResult { env_seed, n, walks, directions, covariance })
}

/// Empirical transition counts of the difference chain (or its comparison walk) from x.
pub fn transition_counts(
    model: &Arc<EnvironmentModel>,
    x: &[i64],
    samples: usize,
    independent: bool,
    opts: &YOptions,
    key: &StreamKey,
) -> Result<BTreeMap<Site, u64>> {
    let draws: Vec<Site> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let k = key.with(i as u64);
            let s = if independent { ybar_sample(model, x, &k, opts)? } else { y_chain_sample(model, x, &k, opts)? };
            Ok(s.result)
        })
        .collect::<Result<_>>()?;
    let mut counts = BTreeMap::new();
    for y in draws {
        *counts.entry(lattice::sub(&y, x)).or_insert(0) += 1;
    }
    Ok(counts)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SymmetryResult {
    pub samples: usize,
    /// Displacement counts y − x.
    pub counts: Vec<(Site, u64)>,
    pub tv: f64,
    /// ½ Σ_y sd(p̂(y) − p̂(−y)) under exact symmetry.
    pub mc_bound: f64,
    pub pass: bool,
}

/// TV distance between the empirical comparison-walk step law and its reflection.
pub fn qbar_symmetry(model: &Arc<EnvironmentModel>, samples: usize, opts: &YOptions, key: &StreamKey) -> Result<SymmetryResult> {
    let origin = lattice::origin(model.d);
    let counts = transition_counts(model, &origin, samples, true, opts, key)?;
    let (tv, mc_bound) = reflection_distance(&counts, samples);
    Ok(SymmetryResult { samples, counts: counts.into_iter().collect(), tv, mc_bound, pass: tv < 3.0 * mc_bound })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InclusionResult {
    pub starts: Vec<Site>,
    /// (start, displacement) seen under q but never under q̄.
    pub violations: Vec<(Site, Site)>,
}

/// ½ Σ_y |p̂(y) − p̂(−y)| and ½ Σ_y sd(p̂(y) − p̂(−y)) under exact symmetry.
pub fn reflection_distance(counts: &BTreeMap<Site, u64>, samples: usize) -> (f64, f64) {
    let nf = samples as f64;
    let p = |y: &Site| counts.get(y).copied().unwrap_or(0) as f64 / nf;
    let mut points: Vec<Site> = counts.keys().flat_map(|y| [y.clone(), lattice::neg(y)]).collect();
    points.sort();
    points.dedup();
    let mut tv = 0.0;
    let mut bound = 0.0;
    for y in &points {
        let (a, b) = (p(y), p(&lattice::neg(y)));
        tv += 0.5 * (a - b).abs();
        bound += 0.5 * ((a + b) / nf).sqrt();
    }
    (tv, bound)
}

/// Every step observed from q(x, ·) is also observed from q̄(x, ·).
pub fn support_inclusion(model: &Arc<EnvironmentModel>, starts: &[Site], samples: usize, opts: &YOptions, key: &StreamKey) -> Result<InclusionResult> {
    let mut violations = Vec::new();
    for (i, x) in starts.iter().enumerate() {
        let k = key.with(i as u64);
        let q = transition_counts(model, x, samples, false, opts, &k.tagged("q"))?;
        let qbar = transition_counts(model, x, samples, true, opts, &k.tagged("qbar"))?;
        for y in q.keys() {
            if !qbar.contains_key(y) {
                violations.push((x.clone(), y.clone()));
            }
        }
    }
    Ok(InclusionResult { starts: starts.to_vec(), violations })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CouplingRow {
    pub norm: i64,
    pub trials: u64,
    pub disagreements: u64,
    pub p: f64,
    pub mechanism_violations: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CouplingResult {
    pub direction: Site,
    pub rows: Vec<CouplingRow>,
    /// log P(Y₁ ≠ Ȳ₁) against |x|; None without any disagreement.
    pub fit: Option<FitResult>,
    pub strictly_decreasing: bool,
}

impl CouplingResult {
    pub fn mechanism_violations(&self) -> u64 {
        self.rows.iter().map(|r| r.mechanism_violations).sum()
    }
}

/// A coordinate unit vector orthogonal to û.
pub fn hyperplane_direction(model: &EnvironmentModel) -> Result<Site> {
    (0..model.d)
        .map(|i| lattice::unit(model.d, i))
        .find(|e| model.level(e) == 0)
        .ok_or_else(|| Error::Precondition("no coordinate axis lies in the hyperplane orthogonal to û".into()))
}

/// Disagreement rate of the coupled (Y₁, Ȳ₁) from x = |x|·e along a hyperplane axis.
pub fn coupling_decay(model: &Arc<EnvironmentModel>, norms: &[i64], trials: usize, opts: &YOptions, key: &StreamKey) -> Result<CouplingResult> {
    if norms.len() < 2 {
        return Err(Error::Precondition("need at least 2 distances".into()));
    }
    let e = hyperplane_direction(model)?;
    let mut rows = Vec::with_capacity(norms.len());
    for &m in norms {
        let x: Site = e.iter().map(|c| c * m).collect();
        let k = key.with(m as u64);
        let outcomes: Vec<(bool, bool)> = (0..trials)
            .into_par_iter()
            .map(|i| coupled_sample(model, &x, &k.with(i as u64), opts).map(|s| (s.agree, s.mechanism_ok)))
            .collect::<Result<_>>()?;
        let disagreements = outcomes.iter().filter(|o| !o.0).count() as u64;
        let mechanism_violations = outcomes.iter().filter(|o| !o.1).count() as u64;
        rows.push(CouplingRow { norm: m, trials: trials as u64, disagreements, p: disagreements as f64 / trials as f64, mechanism_violations });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.norm as f64).collect();
    let ev: Vec<u64> = rows.iter().map(|r| r.disagreements).collect();
    let tr: Vec<u64> = rows.iter().map(|r| r.trials).collect();
    let fit = if ev.iter().any(|&e| e > 0) { Some(fit_log_rate(&xs, &ev, &tr)?) } else { None };
    let strictly_decreasing = rows.windows(2).all(|w| w[1].p < w[0].p);
    Ok(CouplingResult { direction: e, rows, fit, strictly_decreasing })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GreenCheckRow {
    pub s: i64,
    pub t: i64,
    pub exact: f64,
    pub mc_mean: f64,
    pub mc_se: f64,
    pub within: bool,
}

/// Monte Carlo visit counts from s against the solved table, `sigmas` standard errors wide.
pub fn green_mc_check(
    walk: &OneDimWalk,
    table: &GreenTable,
    s: i64,
    targets: &[i64],
    excursions: usize,
    sigmas: f64,
    key: &StreamKey,
) -> Result<Vec<GreenCheckRow>> {
    let counts: Vec<Vec<u64>> = (0..excursions)
        .into_par_iter()
        .map(|i| excursion_visits(walk, table.r0, table.ceiling, s, targets, &mut key.with(i as u64).stream()))
        .collect();
    targets
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let col: Vec<f64> = counts.iter().map(|c| c[j] as f64).collect();
            let mc_mean = stats::mean(&col);
            let mc_se = (stats::variance(&col) / excursions as f64).sqrt();
            let exact = table.get(s, t).ok_or_else(|| Error::Precondition(format!("({s}, {t}) outside the Green window")))?;
            Ok(GreenCheckRow { s, t, exact, mc_mean, mc_se, within: (mc_mean - exact).abs() <= sigmas * mc_se })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rwre_core::env::builtin;

    fn model(name: &str) -> Arc<EnvironmentModel> {
        Arc::new(builtin(name).unwrap())
    }

    #[test]
    fn homogeneous_variance_is_zero_within_ci() {
        let m = model("deterministic-e1");
        let r = quenched_mean_variance(&m, &[4, 8, 16, 32], 20, 8, &StreamKey::new(1, "var")).unwrap();
        assert!(r.rows.iter().all(|row| row.value == 0.0 && row.se == 0.0));
        assert!(r.degenerate);
        let h = model("half-half");
        let r = quenched_mean_variance(&h, &[8, 16, 32, 64], 60, 8, &StreamKey::new(2, "var")).unwrap();
        for row in &r.rows {
            assert!(row.value <= 3.0 * row.se + 1e-12, "{row:?}");
        }
    }

    #[test]
    fn ballistic_control_has_slope_two() {
        let r = synthetic_ballistic_variance(&[16, 32, 64, 128, 256], 200, 16, &StreamKey::new(3, "ctl")).unwrap();
        let fit = r.fit.unwrap();
        assert!((fit.slope - 2.0).abs() < 0.1, "{}", fit.slope);
    }

    #[test]
    fn variance_preconditions() {
        let m = model("half-half");
        assert!(quenched_mean_variance(&m, &[4, 8], 4, 5, &StreamKey::new(1, "v")).is_err());
        assert!(quenched_mean_variance(&m, &[8, 4], 4, 4, &StreamKey::new(1, "v")).is_err());
    }

    #[test]
    fn deterministic_intersections() {
        let m = model("deterministic-e1");
        let grid = [4, 8, 16, 32];
        let same = intersection_experiment(&m, &grid, 3, (&[0, 0], &[0, 0]), &StreamKey::new(1, "i")).unwrap();
        assert!((same.fit.as_ref().unwrap().slope - 1.0).abs() < 1e-9);
        assert!(same.rows.iter().all(|r| r.value == r.n as f64));
        let apart = intersection_experiment(&m, &grid, 3, (&[0, 0], &[0, 5]), &StreamKey::new(1, "i")).unwrap();
        assert!(apart.degenerate && apart.fit.is_none());
        assert!(apart.rows.iter().all(|r| r.value == 0.0));
    }

    #[test]
    fn deterministic_estimate() {
        let m = model("deterministic-e1");
        let r = estimate_from_paths(&m, 3, 200, 1, Confirm::Horizon(16), &StreamKey::new(1, "e")).unwrap();
        assert_eq!(r.diffusion.v_hat, vec![1.0, 0.0]);
        assert!(r.diffusion.d_hat.iter().flatten().all(|v| *v == 0.0));
        assert_eq!(r.coherence(), 0.0);
    }

    #[test]
    fn half_half_clt_directions() {
        let m = model("half-half");
        let d = vec![vec![0.25, -0.25], vec![-0.25, 0.25]];
        let u = [std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2];
        assert!((quad(&d, &u) - 0.5).abs() < 1e-15);
        let r = clt_experiment(&m, 4, 1024, 2000, &[0.5, 0.5], &d, &StreamKey::new(1, "clt")).unwrap();
        let deg: Vec<&DirectionResult> = r.directions.iter().filter(|d| d.degenerate).collect();
        assert_eq!(deg.len(), 1);
        assert!(deg[0].empirical_var < 1e-20);
        assert!(r.pass(), "{:?}", r.directions);
    }

    #[test]
    fn micro_symmetry_and_inclusion() {
        let m = model("micro");
        let opts = YOptions::default();
        let s = qbar_symmetry(&m, 4000, &opts, &StreamKey::new(1, "sym")).unwrap();
        assert!(s.pass, "{s:?}");
        let starts = [lattice::origin(2), lattice::site(&[0, 2])];
        let inc = support_inclusion(&m, &starts, 2000, &opts, &StreamKey::new(1, "inc")).unwrap();
        assert!(inc.violations.is_empty(), "{:?}", inc.violations);
    }

    #[test]
    fn reflection_distance_of_a_skewed_table() {
        let counts: BTreeMap<Site, u64> = [(lattice::site(&[0, 2]), 30), (lattice::site(&[0, -2]), 10), (lattice::site(&[0, 0]), 60)].into_iter().collect();
        let (tv, bound) = reflection_distance(&counts, 100);
        assert!((tv - 0.2).abs() < 1e-12);
        assert!((bound - 0.004f64.sqrt() - 0.5 * 0.012f64.sqrt()).abs() < 1e-12);
    }
}
