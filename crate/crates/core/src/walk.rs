//! Quenched walks and their level stopping times.

use std::collections::HashMap;
use std::io::{self, Write};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::lattice::{self, Site};
use crate::rng::{RngStream, StreamKey};

/// A realized trajectory X_0..X_n with cached levels X_k·û.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Path {
    d: usize,
    u_hat: Site,
    coords: Vec<i64>,
    levels: Vec<i64>,
}

impl Path {
    pub fn new(start: &[i64], u_hat: &[i64]) -> Self {
        let mut p = Path {
            d: start.len(),
            u_hat: lattice::site(u_hat),
            coords: Vec::new(),
            levels: Vec::new(),
        };
        p.push(start);
        p
    }

    pub fn from_positions<S: AsRef<[i64]>>(positions: &[S], u_hat: &[i64]) -> Self {
        let mut p = Path::new(positions[0].as_ref(), u_hat);
        for x in &positions[1..] {
            p.push(x.as_ref());
        }
        p
    }

    /// A path on the first axis of Z^2 with û = e1 and the given levels.
    pub fn from_levels(levels: &[i64]) -> Self {
        let positions: Vec<[i64; 2]> = levels.iter().map(|&l| [l, 0]).collect();
        Path::from_positions(&positions, &[1, 0])
    }

    pub fn push(&mut self, x: &[i64]) {
        debug_assert_eq!(x.len(), self.d);
        self.coords.extend_from_slice(x);
        self.levels.push(lattice::dot(x, &self.u_hat));
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn u_hat(&self) -> &[i64] {
        &self.u_hat
    }

    /// Number of steps n (positions are X_0..X_n).
    pub fn steps(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn start(&self) -> &[i64] {
        self.position(0)
    }

    pub fn end(&self) -> &[i64] {
        self.position(self.steps())
    }

    #[inline]
    pub fn position(&self, k: usize) -> &[i64] {
        &self.coords[k * self.d..(k + 1) * self.d]
    }

    pub fn positions(&self) -> impl Iterator<Item = &[i64]> {
        self.coords.chunks_exact(self.d)
    }

    pub fn levels(&self) -> &[i64] {
        &self.levels
    }

    /// The prefix X_0..X_n.
    pub fn truncated(&self, n: usize) -> Path {
        let n = n.min(self.steps());
        Path {
            d: self.d,
            u_hat: self.u_hat.clone(),
            coords: self.coords[..(n + 1) * self.d].to_vec(),
            levels: self.levels[..=n].to_vec(),
        }
    }

    /// The shifted path θ^s: X_s, X_{s+1}, ..., X_n.
    pub fn suffix(&self, s: usize) -> Path {
        Path {
            d: self.d,
            u_hat: self.u_hat.clone(),
            coords: self.coords[s * self.d..].to_vec(),
            levels: self.levels[s..].to_vec(),
        }
    }

    /// One CSV row per position: `k,x1..xd,level`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "k")?;
        for i in 1..=self.d {
            write!(w, ",x{i}")?;
        }
        writeln!(w, ",level")?;
        for (k, x) in self.positions().enumerate() {
            write!(w, "{k}")?;
            for c in x {
                write!(w, ",{c}")?;
            }
            writeln!(w, ",{}", self.levels[k])?;
        }
        Ok(())
    }
}

/// Source of the uniforms that select each step.
pub trait StepDraws {
    fn draw(&mut self, site: &[i64]) -> f64;
}

impl StepDraws for RngStream {
    #[inline]
    fn draw(&mut self, _site: &[i64]) -> f64 {
        self.uniform()
    }
}

/// Step variables z^x_k indexed by (site, local visit count): the k-th visit
/// to x always consumes the same keyed uniform.
#[derive(Clone, Debug)]
pub struct SiteTable {
    key: StreamKey,
    visits: HashMap<Site, u64>,
}

impl SiteTable {
    pub fn new(key: StreamKey) -> Self {
        SiteTable {
            key,
            visits: HashMap::new(),
        }
    }
}

impl StepDraws for SiteTable {
    fn draw(&mut self, site: &[i64]) -> f64 {
        let k = self.visits.entry(lattice::site(site)).or_insert(0);
        let u = self.key.uniform_at(site, *k);
        *k += 1;
        u
    }
}

/// Advance one step from `x` in `env`, writing the new position into `out`.
#[inline]
pub fn step_from(env: &Environment, x: &[i64], u: f64, out: &mut [i64]) {
    let i = env.sample_index(x, u);
    let z = &env.model().support()[i];
    for ((o, a), b) in out.iter_mut().zip(x).zip(z.iter()) {
        *o = a + b;
    }
}

/// Simulate n steps of the quenched walk from `start`.
pub fn simulate(env: &Environment, start: &[i64], n: usize, rng: &mut RngStream) -> Path {
    simulate_with(env, start, n, rng)
}

pub fn simulate_with<D: StepDraws + ?Sized>(env: &Environment, start: &[i64], n: usize, draws: &mut D) -> Path {
    let mut path = Path::new(start, &env.model().u_hat);
    path.coords.reserve(n * path.d);
    path.levels.reserve(n);
    let mut x = lattice::site(start);
    let mut next = x.clone();
    for _ in 0..n {
        let u = draws.draw(&x);
        step_from(env, &x, u, &mut next);
        path.push(&next);
        std::mem::swap(&mut x, &mut next);
    }
    path
}

/// Levels X_k·û indexed by time, possibly produced on demand.
pub trait LevelSource {
    /// Level at time k, or None if k lies beyond what can be observed.
    fn level(&mut self, k: usize) -> Option<i64>;
}

impl LevelSource for &Path {
    #[inline]
    fn level(&mut self, k: usize) -> Option<i64> {
        self.levels.get(k).copied()
    }
}

/// A walk that is extended lazily, up to a hard cap on its length.
pub struct Walker<'e, D> {
    env: &'e Environment,
    draws: D,
    path: Path,
    cap: usize,
    scratch: Site,
}

impl<'e, D: StepDraws> Walker<'e, D> {
    pub fn new(env: &'e Environment, start: &[i64], draws: D, cap: usize) -> Self {
        Walker {
            env,
            draws,
            path: Path::new(start, &env.model().u_hat),
            cap,
            scratch: lattice::site(start),
        }
    }

    /// Extend so that X_k exists; false if k exceeds the cap.
    pub fn ensure(&mut self, k: usize) -> bool {
        if k > self.cap {
            return false;
        }
        while self.path.steps() < k {
            let x = lattice::site(self.path.end());
            let u = self.draws.draw(&x);
            step_from(self.env, &x, u, &mut self.scratch);
            let next = std::mem::take(&mut self.scratch);
            self.path.push(&next);
            self.scratch = next;
        }
        true
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn into_path(self) -> Path {
        self.path
    }
}

impl<D: StepDraws> LevelSource for Walker<'_, D> {
    #[inline]
    fn level(&mut self, k: usize) -> Option<i64> {
        if self.ensure(k) {
            Some(self.path.levels[k])
        } else {
            None
        }
    }
}

/// First backtracking time: min{n ≥ 1 : X_n·û < X_0·û}.
pub fn beta(path: &Path) -> Option<usize> {
    let l0 = path.levels[0];
    path.levels.iter().skip(1).position(|&l| l < l0).map(|i| i + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LevelMode {
    /// λ_ℓ: first n with X_n·û − X_0·û ≥ ℓ.
    Relative,
    /// γ_ℓ: first n with X_n·û ≥ ℓ.
    Absolute,
    /// γ⁺_ℓ: first n with X_n·û > ℓ.
    AbsoluteStrict,
}

pub fn level_hit(path: &Path, ell: i64, mode: LevelMode) -> Option<usize> {
    let l0 = path.levels[0];
    path.levels.iter().position(|&l| match mode {
        LevelMode::Relative => l - l0 >= ell,
        LevelMode::Absolute => l >= ell,
        LevelMode::AbsoluteStrict => l > ell,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Frame {
    /// Measured from the starting level.
    Relative,
    Absolute,
}

/// Maximum level over times 0..=n.
pub fn running_max(path: &Path, n: usize, frame: Frame) -> Result<i64> {
    if n > path.steps() {
        return Err(Error::Precondition(format!("n = {n} exceeds path length {}", path.steps())));
    }
    let m = *path.levels[..=n].iter().max().expect("nonempty");
    Ok(match frame {
        Frame::Relative => m - path.levels[0],
        Frame::Absolute => m,
    })
}

/// H_z = min{n ≥ 1 : X_n = z}.
pub fn hitting_time(path: &Path, z: &[i64]) -> Option<usize> {
    path.positions().skip(1).position(|x| x == z).map(|i| i + 1)
}

/// (X_⌊nt⌋ − ⌊nt⌋ v)/√n.
pub fn scaled_value(path: &Path, v: &[f64], n: usize, t: f64) -> Result<Vec<f64>> {
    let horizon = path.steps() as f64 / n as f64;
    if !(t >= 0.0) || t > horizon {
        return Err(Error::BeyondHorizon { t, horizon });
    }
    let k = (n as f64 * t).floor() as usize;
    let x = path.position(k);
    let s = (n as f64).sqrt();
    Ok(x.iter().zip(v).map(|(&c, vi)| (c as f64 - k as f64 * vi) / s).collect())
}

/// A function Ψ of the environment seen from the walker, reading only
/// sites within `radius` of the current position.
pub trait Observable {
    fn radius(&self) -> u32;
    fn dim(&self) -> usize;
    fn eval(&self, env: &Environment, x: &[i64], out: &mut [f64]);
}

/// The local drift D(T_x ω).
pub struct Drift;

impl Observable for Drift {
    fn radius(&self) -> u32 {
        0
    }
    fn dim(&self) -> usize {
        0
    }
    fn eval(&self, env: &Environment, x: &[i64], out: &mut [f64]) {
        out.copy_from_slice(&env.local_drift(x));
    }
}

/// A scalar observable given by a closure.
pub struct LocalScalar<F> {
    pub radius: u32,
    pub f: F,
}

impl<F: Fn(&Environment, &[i64]) -> f64> Observable for LocalScalar<F> {
    fn radius(&self) -> u32 {
        self.radius
    }
    fn dim(&self) -> usize {
        1
    }
    fn eval(&self, env: &Environment, x: &[i64], out: &mut [f64]) {
        out[0] = (self.f)(env, x);
    }
}

/// Cesàro averages n⁻¹ Σ_{j<n} Ψ(T_{X_j} ω) for n = 1..=steps.
pub fn env_process_average<O: Observable>(env: &Environment, path: &Path, obs: &O) -> Vec<Vec<f64>> {
    let dim = if obs.dim() == 0 { env.model().d } else { obs.dim() };
    let mut sum = vec![0.0; dim];
    let mut val = vec![0.0; dim];
    let mut out = Vec::with_capacity(path.steps());
    for j in 0..path.steps() {
        obs.eval(env, path.position(j), &mut val);
        for (s, v) in sum.iter_mut().zip(&val) {
            *s += v;
        }
        let n = (j + 1) as f64;
        out.push(sum.iter().map(|s| s / n).collect());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{benchmark_a, deterministic_e1, EnvironmentModel, StepDistribution};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn det_env() -> Environment {
        Environment::new(Arc::new(deterministic_e1(2)), 0)
    }

    #[test]
    fn deterministic_path() {
        let env = det_env();
        let p = simulate(&env, &[0, 0], 3, &mut StreamKey::new(1, "w").stream());
        let pos: Vec<&[i64]> = p.positions().collect();
        assert_eq!(pos, vec![&[0, 0][..], &[1, 0], &[2, 0], &[3, 0]]);
        let p0 = simulate(&env, &[4, 4], 0, &mut StreamKey::new(1, "w").stream());
        assert_eq!(p0.steps(), 0);
        assert_eq!(p0.start(), &[4, 4]);
    }

    #[test]
    fn fresh_site_step_frequencies_match_marginal() {
        // Fresh sites have independent uniform mixing, so the step law at a
        // first visit is the annealed marginal {e1:.4, -e1:.1, e2:.3, -e2:.2}.
        let env = Environment::new(Arc::new(benchmark_a()), 77);
        let p = simulate(&env, &[0, 0], 10_000, &mut StreamKey::new(3, "w").stream());
        let mut seen = std::collections::HashSet::new();
        let mut counts = HashMap::new();
        let mut fresh = 0usize;
        for k in 0..p.steps() {
            let x = lattice::site(p.position(k));
            if seen.insert(x.clone()) {
                let z = lattice::sub(p.position(k + 1), &x);
                *counts.entry(z).or_insert(0usize) += 1;
                fresh += 1;
            }
        }
        for (z, q) in [([1, 0], 0.4), ([-1, 0], 0.1), ([0, 1], 0.3), ([0, -1], 0.2)] {
            let c = *counts.get(&lattice::site(&z)).unwrap_or(&0) as f64;
            let sigma = (fresh as f64 * q * (1.0 - q)).sqrt();
            assert!((c - fresh as f64 * q).abs() < 3.0 * sigma, "{z:?}: {c} of {fresh}");
        }
    }

    #[test]
    fn beta_examples() {
        assert_eq!(beta(&Path::from_levels(&[0, 1, 2, 3])), None);
        assert_eq!(beta(&Path::from_levels(&[0, 1, -1])), Some(2));
        assert_eq!(beta(&Path::from_levels(&[0, 0, 0, -1])), Some(3));
    }

    #[test]
    fn level_hit_examples() {
        assert_eq!(level_hit(&Path::from_levels(&[0, 1, 2]), 2, LevelMode::Relative), Some(2));
        assert_eq!(level_hit(&Path::from_levels(&[5, 6]), 5, LevelMode::Absolute), Some(0));
        assert_eq!(level_hit(&Path::from_levels(&[0, 1, 1, 2]), 1, LevelMode::AbsoluteStrict), Some(3));
        assert_eq!(level_hit(&Path::from_levels(&[0, 1]), 3, LevelMode::Relative), None);
    }

    #[test]
    fn running_max_examples() {
        assert_eq!(running_max(&Path::from_levels(&[0, 2, 1]), 2, Frame::Relative).unwrap(), 2);
        assert_eq!(running_max(&Path::from_levels(&[0, 2, 1]), 0, Frame::Relative).unwrap(), 0);
        assert_eq!(running_max(&Path::from_levels(&[3, 4, 2]), 2, Frame::Absolute).unwrap(), 4);
        assert!(running_max(&Path::from_levels(&[3, 4, 2]), 3, Frame::Absolute).is_err());
    }

    #[test]
    fn hitting_time_examples() {
        let p = Path::from_levels(&[0, 1, 2, 3]);
        assert_eq!(hitting_time(&p, &[2, 0]), Some(2));
        assert_eq!(hitting_time(&p, &[0, 0]), None);
        assert_eq!(hitting_time(&p, &[0, 5]), None);
        assert_eq!(hitting_time(&Path::from_levels(&[0, 1, 0]), &[0, 0]), Some(2));
    }

    #[test]
    fn scaled_value_examples() {
        let p = Path::from_levels(&[0, 1, 2, 3, 4]);
        assert_eq!(scaled_value(&p, &[1.0, 0.0], 4, 0.0).unwrap(), vec![0.0, 0.0]);
        assert_eq!(scaled_value(&p, &[1.0, 0.0], 2, 1.5).unwrap(), vec![0.0, 0.0]);
        let q = Path::from_positions(&[[0, 0], [1, 0], [1, 1], [2, 1], [3, 1]], &[1, 0]);
        assert_eq!(scaled_value(&q, &[0.5, 0.5], 4, 1.0).unwrap(), vec![0.5, -0.5]);
        assert!(matches!(scaled_value(&q, &[0.5, 0.5], 4, 1.5), Err(Error::BeyondHorizon { .. })));
    }

    #[test]
    fn env_average_homogeneous_is_constant() {
        let law = StepDistribution::from_pairs(&[(&[1, 0], 0.75), (&[-1, 0], 0.25)]).unwrap();
        let env = Environment::new(Arc::new(EnvironmentModel::homogeneous("h", &[1, 0], law).unwrap()), 3);
        let p = simulate(&env, &[0, 0], 50, &mut StreamKey::new(3, "w").stream());
        let avg = env_process_average(&env, &p, &Drift);
        assert_eq!(avg.len(), 50);
        assert!(avg.iter().all(|a| (a[0] - 0.5).abs() < 1e-12 && a[1].abs() < 1e-12));
        let empty = simulate(&env, &[0, 0], 0, &mut StreamKey::new(3, "w").stream());
        assert!(env_process_average(&env, &empty, &Drift).is_empty());
    }

    #[test]
    fn scalar_observable() {
        let env = det_env();
        let p = simulate(&env, &[0, 0], 4, &mut StreamKey::new(3, "w").stream());
        let obs = LocalScalar {
            radius: 0,
            f: |_: &Environment, x: &[i64]| x[0] as f64,
        };
        let avg = env_process_average(&env, &p, &obs);
        assert_eq!(avg.iter().map(|a| a[0]).collect::<Vec<_>>(), vec![0.0, 0.5, 1.0, 1.5]);
    }

    #[test]
    fn site_table_reuses_visit_counters() {
        let key = StreamKey::new(9, "z");
        let mut a = SiteTable::new(key.clone());
        let mut b = SiteTable::new(key);
        let xs = [[0, 0], [1, 0], [0, 0]];
        let ua: Vec<f64> = xs.iter().map(|x| a.draw(x)).collect();
        let ub: Vec<f64> = xs.iter().map(|x| b.draw(x)).collect();
        assert_eq!(ua, ub);
        assert_ne!(ua[0], ua[2]);
    }

    #[test]
    fn walker_extends_lazily_and_matches_simulate() {
        let env = Environment::new(Arc::new(benchmark_a()), 5);
        let key = StreamKey::new(5, "w");
        let full = simulate(&env, &[0, 0], 200, &mut key.stream());
        let mut w = Walker::new(&env, &[0, 0], key.stream(), 150);
        assert_eq!(w.level(100), Some(full.levels()[100]));
        assert_eq!(w.path().steps(), 100);
        assert_eq!(w.level(151), None);
        assert_eq!(w.level(150), Some(full.levels()[150]));
        assert_eq!(w.into_path(), full.truncated(150));
    }

    #[test]
    fn csv_dump() {
        let mut out = Vec::new();
        Path::from_levels(&[0, 1]).write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "k,x1,x2,level\n0,0,0,0\n1,1,0,1\n");
    }

    proptest! {
        #[test]
        fn path_invariants(seed in any::<u64>(), n in 0usize..400) {
            let model = Arc::new(benchmark_a());
            let env = Environment::new(model.clone(), seed);
            let key = StreamKey::new(seed, "prop");
            let p = simulate(&env, &[0, 0], n, &mut key.stream());
            let q = simulate(&env, &[0, 0], n, &mut key.stream());
            prop_assert_eq!(&p, &q);
            let jump = model.max_level_jump();
            for k in 0..p.steps() {
                prop_assert!((p.levels()[k + 1] - p.levels()[k]).abs() <= jump);
                let z = lattice::sub(p.position(k + 1), p.position(k));
                prop_assert!(model.support().contains(&z));
            }
            let mut prev = 0;
            for ell in 0..10 {
                if let Some(t) = level_hit(&p, ell, LevelMode::Relative) {
                    prop_assert!(t >= prev);
                    prev = t;
                }
            }
            if beta(&p).is_none() {
                prop_assert_eq!(*p.levels().iter().min().unwrap(), p.levels()[0]);
            }
        }
    }
}
