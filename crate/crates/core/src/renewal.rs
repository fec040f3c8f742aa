//! One-dimensional renewal numerics: half-line Green functions, forward
//! recurrence times, box exit times and occupation sums of the difference
//! chain.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_traits::{FromPrimitive, Num};
use rayon::prelude::*;
use serde::Serialize;

use crate::env::{EnvironmentModel, StepDistribution};
use crate::error::{Error, Result};
use crate::lattice::{self, Site};
use crate::pair::{y_chain_sample, ybar_sample, YOptions};
use crate::rng::{RngStream, StreamKey};
use crate::stats::{self, FitResult};

pub const GREEN_TOLERANCE: f64 = 1e-9;
/// Largest number of transient states the Green solver will factor.
pub const MAX_GREEN_SPAN: i64 = 2048;

/// Integer-valued step law on Z.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OneDimWalk {
    steps: Vec<i64>,
    probs: Vec<f64>,
}

impl OneDimWalk {
    pub fn new(steps: Vec<i64>, probs: Vec<f64>) -> Result<Self> {
        if steps.is_empty() || steps.len() != probs.len() {
            return Err(Error::InvalidDistribution("steps and probabilities must be non-empty and of equal length".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidDistribution("probabilities must be finite and non-negative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidDistribution(format!("probabilities sum to {total}")));
        }
        let mut pairs: Vec<(i64, f64)> = Vec::new();
        for (&k, &p) in steps.iter().zip(&probs) {
            if p == 0.0 {
                continue;
            }
            match pairs.iter_mut().find(|(s, _)| *s == k) {
                Some(e) => e.1 += p,
                None => pairs.push((k, p)),
            }
        }
        pairs.sort_by_key(|e| e.0);
        Ok(Self { steps: pairs.iter().map(|e| e.0).collect(), probs: pairs.iter().map(|e| e.1).collect() })
    }

    pub fn simple() -> Self {
        Self::new(vec![-1, 1], vec![0.5, 0.5]).expect("valid")
    }

    /// Coordinate `coord` of a step law on Z^d.
    pub fn project(sd: &StepDistribution, coord: usize) -> Result<Self> {
        if coord >= sd.dim() {
            return Err(Error::Precondition(format!("coordinate {coord} out of range for dimension {}", sd.dim())));
        }
        let (steps, probs) = sd.iter().map(|(z, p)| (z[coord], p)).unzip();
        Self::new(steps, probs)
    }

    /// Law of Z − Z' for independent copies Z, Z'.
    pub fn symmetrized(&self) -> Self {
        let mut steps = Vec::new();
        let mut probs = Vec::new();
        for (&a, &p) in self.steps.iter().zip(&self.probs) {
            for (&b, &q) in self.steps.iter().zip(&self.probs) {
                steps.push(a - b);
                probs.push(p * q);
            }
        }
        Self::new(steps, probs).expect("product of valid laws")
    }

    /// A symmetric law on [−max_step, max_step] with random weights.
    pub fn random_symmetric(max_step: i64, rng: &mut RngStream) -> Self {
        let mut steps = Vec::new();
        let mut weights = Vec::new();
        for k in 0..=max_step {
            let w = rng.uniform();
            if k == 0 {
                steps.push(0);
                weights.push(w);
            } else {
                steps.extend([k, -k]);
                weights.extend([w, w]);
            }
        }
        if weights[1..].iter().all(|w| *w == 0.0) {
            weights[1] = 1.0;
            weights[2] = 1.0;
        }
        let total: f64 = weights.iter().sum();
        Self::new(steps, weights.iter().map(|w| w / total).collect()).expect("valid")
    }

    pub fn steps(&self) -> &[i64] {
        &self.steps
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob_of(&self, k: i64) -> f64 {
        self.steps.iter().position(|s| *s == k).map_or(0.0, |i| self.probs[i])
    }

    pub fn is_symmetric(&self) -> bool {
        self.steps.iter().zip(&self.probs).all(|(&k, &p)| (self.prob_of(-k) - p).abs() <= 1e-12)
    }

    pub fn mean(&self) -> f64 {
        self.steps.iter().zip(&self.probs).map(|(&k, &p)| k as f64 * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.steps.iter().zip(&self.probs).map(|(&k, &p)| (k as f64 - m).powi(2) * p).sum()
    }

    /// gcd of the support.
    pub fn span(&self) -> i64 {
        self.steps.iter().fold(0, |g, &k| gcd(g, k.abs()))
    }

    pub fn sample(&self, rng: &mut RngStream) -> i64 {
        let u = rng.uniform();
        let mut acc = 0.0;
        for (&k, &p) in self.steps.iter().zip(&self.probs) {
            acc += p;
            if u < acc {
                return k;
            }
        }
        *self.steps.last().expect("non-empty")
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Target of a jump to `t` on the line truncated at `ceiling`: jumps above
/// the ceiling land on the highest state of the same residue class.
pub fn clamp_to_ceiling(t: i64, ceiling: i64, span: i64) -> i64 {
    if t <= ceiling {
        t
    } else {
        t - (t - ceiling + span - 1) / span * span
    }
}

/// Expected visits g(s, t) before entering (−∞, r0], for s, t in (r0, r0+W].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GreenTable {
    pub r0: i64,
    pub window: usize,
    pub ceiling: i64,
    pub last_change: f64,
    values: Vec<Vec<f64>>,
}

impl GreenTable {
    /// None outside the window; zero when either argument is killed.
    pub fn get(&self, s: i64, t: i64) -> Option<f64> {
        if s <= self.r0 || t <= self.r0 {
            return Some(0.0);
        }
        let (i, j) = ((s - self.r0 - 1) as usize, (t - self.r0 - 1) as usize);
        (i < self.window && j < self.window).then(|| self.values[i][j])
    }

    /// Rows s = r0+1.., columns t = r0+1...
    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.window {
            for j in 0..i {
                worst = worst.max((self.values[i][j] - self.values[j][i]).abs());
            }
        }
        worst
    }

    /// Smallest C with g(s,t) ≤ C·(1 + min(s−r0−1, t−r0−1)) on the window.
    pub fn linear_growth_constant(&self) -> f64 {
        let mut c: f64 = 0.0;
        for i in 0..self.window {
            for j in 0..self.window {
                c = c.max(self.values[i][j] / (1 + i.min(j)) as f64);
            }
        }
        c
    }

    /// Rows (s, t, g).
    pub fn rows(&self) -> Vec<(i64, i64, f64)> {
        let mut out = Vec::with_capacity(self.window * self.window);
        for i in 0..self.window {
            for j in 0..self.window {
                out.push((self.r0 + 1 + i as i64, self.r0 + 1 + j as i64, self.values[i][j]));
            }
        }
        out
    }
}

fn solve_truncated(walk: &OneDimWalk, r0: i64, window: usize, ceiling: i64) -> Result<Vec<Vec<f64>>> {
    let n = (ceiling - r0) as usize;
    let span = walk.span().max(1);
    let mut a = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        let s = r0 + 1 + i as i64;
        for (&k, &p) in walk.steps.iter().zip(&walk.probs) {
            let t = clamp_to_ceiling(s + k, ceiling, span);
            if t > r0 {
                a[(i, (t - r0 - 1) as usize)] -= p;
            }
        }
    }
    let mut rhs = DMatrix::<f64>::zeros(n, window);
    for j in 0..window {
        rhs[(j, j)] = 1.0;
    }
    let x = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Precondition("truncated Green system is singular".into()))?;
    Ok((0..window).map(|i| (0..window).map(|j| x[(i, j)]).collect()).collect())
}

/// Solves for the Green function of the walk killed on (−∞, r0], doubling
/// the truncation ceiling until the window values move by less than 1e−9.
pub fn halfline_green(walk: &OneDimWalk, r0: i64, window: usize, ceiling: i64) -> Result<GreenTable> {
    if window == 0 {
        return Err(Error::Precondition("window must be at least 1".into()));
    }
    if !walk.steps.iter().zip(&walk.probs).any(|(&k, &p)| k < 0 && p > 0.0) {
        return Err(Error::Precondition("walk never moves left; Green values diverge".into()));
    }
    if ceiling <= r0 + window as i64 {
        return Err(Error::Precondition(format!("ceiling {ceiling} must exceed r0 + W = {}", r0 + window as i64)));
    }
    let mut c = ceiling;
    let mut prev = solve_truncated(walk, r0, window, c)?;
    let mut last_change = f64::INFINITY;
    loop {
        let next_c = r0 + 2 * (c - r0);
        if next_c - r0 > MAX_GREEN_SPAN {
            return Err(Error::NoConvergence { ceiling: c, last_change });
        }
        let next = solve_truncated(walk, r0, window, next_c)?;
        last_change = prev
            .iter()
            .flatten()
            .zip(next.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        c = next_c;
        prev = next;
        if last_change < GREEN_TOLERANCE {
            return Ok(GreenTable { r0, window, ceiling: c, last_change, values: prev });
        }
    }
}

/// Visits to each of `targets` by one excursion of the truncated walk from
/// `s` until it enters (−∞, r0].
pub fn excursion_visits(walk: &OneDimWalk, r0: i64, ceiling: i64, s: i64, targets: &[i64], rng: &mut RngStream) -> Vec<u64> {
    let span = walk.span().max(1);
    let mut counts = vec![0u64; targets.len()];
    let mut x = s;
    while x > r0 {
        for (c, &t) in counts.iter_mut().zip(targets) {
            if x == t {
                *c += 1;
            }
        }
        x = clamp_to_ceiling(x + walk.sample(rng), ceiling, span);
    }
    counts
}

/// E[B_m^p] for m = 0..=n, where B_m is the wait from m to the first
/// renewal epoch at or after m and `law[k-1]` = P(Y = k).
pub fn forward_recurrence<T>(law: &[T], n: usize, p: u32) -> Vec<T>
where
    T: Num + Clone + FromPrimitive,
{
    let z = |m: usize| -> T {
        law.iter().enumerate().fold(T::zero(), |acc, (i, pk)| {
            let k = i + 1;
            if k > m {
                let over = T::from_usize(k - m).expect("representable");
                acc + pk.clone() * num_traits::pow(over, p as usize)
            } else {
                acc
            }
        })
    };
    let mut b: Vec<T> = Vec::with_capacity(n + 1);
    b.push(T::zero());
    for m in 1..=n {
        let mut v = z(m);
        for k in 1..m.min(law.len() + 1) {
            v = v + law[k - 1].clone() * b[m - k].clone();
        }
        b.push(v);
    }
    b
}

/// Σ_{k≥1} E((Y − k)^+)^p, an upper bound on sup_n E[B_n^p].
pub fn forward_recurrence_bound(law: &[f64], p: u32) -> f64 {
    (1..=law.len())
        .map(|m| law.iter().enumerate().filter(|(i, _)| i + 1 > m).map(|(i, q)| q * ((i + 1 - m) as f64).powi(p as i32)).sum::<f64>())
        .sum()
}

/// One-step transition of a chain on Z^d driven by a stream key.
pub trait YChain: Sync {
    fn dim(&self) -> usize;
    fn step(&self, x: &[i64], key: &StreamKey) -> Result<Site>;
}

/// The difference chain (or its independent-environment comparison).
pub struct SampledChain {
    pub model: Arc<EnvironmentModel>,
    pub opts: YOptions,
    pub independent: bool,
}

impl YChain for SampledChain {
    fn dim(&self) -> usize {
        self.model.d
    }

    fn step(&self, x: &[i64], key: &StreamKey) -> Result<Site> {
        let s = if self.independent {
            ybar_sample(&self.model, x, key, &self.opts)?
        } else {
            y_chain_sample(&self.model, x, key, &self.opts)?
        };
        Ok(s.result)
    }
}

/// Y_{k+1} = Y_k.
pub struct ConstantChain(pub usize);

impl YChain for ConstantChain {
    fn dim(&self) -> usize {
        self.0
    }

    fn step(&self, x: &[i64], _key: &StreamKey) -> Result<Site> {
        Ok(lattice::site(x))
    }
}

/// Y_{k+1} = Y_k + e.
pub struct DriftChain(pub Site);

impl YChain for DriftChain {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn step(&self, x: &[i64], _key: &StreamKey) -> Result<Site> {
        Ok(lattice::add(x, &self.0))
    }
}

fn in_box(x: &[i64], r: i64) -> bool {
    x.iter().all(|c| c.abs() <= r)
}

/// First k with Y_k outside [−r, r]^d, or None if not reached within `cap` steps.
pub fn exit_time<C: YChain + ?Sized>(chain: &C, r: i64, start: &[i64], key: &StreamKey, cap: usize) -> Result<Option<usize>> {
    let mut y = lattice::site(start);
    for k in 0..=cap {
        if !in_box(&y, r) {
            return Ok(Some(k));
        }
        if k == cap {
            break;
        }
        y = chain.step(&y, &key.with(k as u64))?;
    }
    Ok(None)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExitSummary {
    pub r: i64,
    pub replicas: usize,
    pub cap: usize,
    pub cap_hits: usize,
    /// Over replicas that exited.
    pub mean_u: f64,
    pub se: f64,
    pub q50: f64,
    pub q95: f64,
    pub samples: Vec<Option<usize>>,
}

pub fn box_exit_experiment<C: YChain + ?Sized>(
    chain: &C,
    r: i64,
    start: &[i64],
    replicas: usize,
    cap: usize,
    key: &StreamKey,
) -> Result<ExitSummary> {
    if start.len() != chain.dim() {
        return Err(Error::Precondition(format!("start has dimension {}, chain has {}", start.len(), chain.dim())));
    }
    let samples: Vec<Option<usize>> = (0..replicas)
        .into_par_iter()
        .map(|i| exit_time(chain, r, start, &key.with(i as u64), cap))
        .collect::<Result<_>>()?;
    let done: Vec<f64> = samples.iter().flatten().map(|&u| u as f64).collect();
    let sorted = stats::sorted(&done);
    let (mean_u, se, q50, q95) = if done.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
    } else {
        let se = if done.len() > 1 { (stats::variance(&done) / done.len() as f64).sqrt() } else { f64::NAN };
        (stats::mean(&done), se, stats::quantile(&sorted, 0.5), stats::quantile(&sorted, 0.95))
    };
    Ok(ExitSummary { r, replicas, cap, cap_hits: replicas - done.len(), mean_u, se, q50, q95, samples })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OccupationResult {
    pub alpha2: f64,
    pub c: f64,
    pub replicas: usize,
    pub grid: Vec<usize>,
    pub s_n: Vec<f64>,
    pub se: Vec<f64>,
    /// log S_n against log n; None when some S_n vanishes.
    pub fit: Option<FitResult>,
}

/// S_n = Σ_{k<n} E h(Y_k) with h(x) = c·exp(−α₂|x|), estimated over replicas.
pub fn occupation_experiment<C: YChain + ?Sized>(
    chain: &C,
    start: &[i64],
    alpha2: f64,
    c: f64,
    grid: &[usize],
    replicas: usize,
    key: &StreamKey,
) -> Result<OccupationResult> {
    if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Precondition("grid must be non-empty and strictly increasing".into()));
    }
    if replicas < 2 {
        return Err(Error::Precondition("need at least 2 replicas".into()));
    }
    if start.len() != chain.dim() {
        return Err(Error::Precondition(format!("start has dimension {}, chain has {}", start.len(), chain.dim())));
    }
    let n_max = *grid.last().expect("non-empty");
    let per_replica: Vec<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let rkey = key.with(i as u64);
            let mut y = lattice::site(start);
            let mut acc = 0.0;
            let mut out = Vec::with_capacity(grid.len());
            let mut g = 0;
            for k in 0..n_max {
                acc += c * (-alpha2 * lattice::norm(&y)).exp();
                if k + 1 == grid[g] {
                    out.push(acc);
                    g += 1;
                }
                if k + 1 < n_max {
                    y = chain.step(&y, &rkey.with(k as u64))?;
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut s_n = Vec::with_capacity(grid.len());
    let mut se = Vec::with_capacity(grid.len());
    for g in 0..grid.len() {
        let col: Vec<f64> = per_replica.iter().map(|r| r[g]).collect();
        s_n.push(stats::mean(&col));
        se.push((stats::variance(&col) / replicas as f64).sqrt());
    }
    let fit = if s_n.iter().all(|v| *v > 0.0) && grid.len() >= 4 {
        let pts: Vec<(f64, f64)> = grid.iter().zip(&s_n).map(|(&n, &s)| (n as f64, s)).collect();
        Some(stats::fit_loglog(&pts)?)
    } else {
        None
    };
    Ok(OccupationResult { alpha2, c, replicas, grid: grid.to_vec(), s_n, se, fit })
}
