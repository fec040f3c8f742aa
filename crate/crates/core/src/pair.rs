//! Two walks in one environment: common levels, common regeneration times,
//! intersections, the difference chain Y, the comparison walk Ȳ and their
//! coupling.

use std::collections::HashSet;
use std::sync::Arc;

use serde::Serialize;

use crate::env::{Environment, EnvironmentModel};
use crate::error::{Error, Result};
use crate::lattice::{self, Site};
use crate::regen::{next_smaller, Confirm, NONE};
use crate::rng::{RngStream, StreamKey};
use crate::walk::{simulate, simulate_with, step_from, Path, SiteTable, StepDraws};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairPath {
    pub x: Path,
    pub xt: Path,
}

pub fn simulate_pair(
    env: &Environment,
    x: &[i64],
    y: &[i64],
    n: usize,
    rng_x: &mut RngStream,
    rng_xt: &mut RngStream,
) -> PairPath {
    PairPath {
        x: simulate(env, x, n, rng_x),
        xt: simulate(env, y, n, rng_xt),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CommonLevel {
    pub level: i64,
    pub gamma: usize,
    pub gamma_t: usize,
}

/// Level sequence of one walk with its next-smaller table.
struct Track<'a> {
    lv: &'a [i64],
    nse: Vec<usize>,
}

impl<'a> Track<'a> {
    fn new(lv: &'a [i64]) -> Self {
        Track {
            lv,
            nse: next_smaller(lv),
        }
    }

    fn last(&self) -> usize {
        self.lv.len() - 1
    }
}

/// Outcome of a construction step on finite data.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Outcome<T> {
    Done(T),
    /// A candidate exists but the data cannot decide it.
    Censored,
    /// The data ran out before a candidate was reached.
    Exhausted,
}

/// L = min{ℓ > min(levels at i0, j0) : both walks hit ℓ exactly}, measured
/// from times i0 and j0; returns (L, γ_L, γ̃_L) as absolute indices.
fn common_level_from(a: &[i64], b: &[i64], i0: usize, j0: usize) -> Option<(i64, usize, usize)> {
    let (mut i, mut j) = (i0, j0);
    let mut ell = a[i0].min(b[j0]) + 1;
    loop {
        while a[i] < ell {
            i += 1;
            if i == a.len() {
                return None;
            }
        }
        while b[j] < ell {
            j += 1;
            if j == b.len() {
                return None;
            }
        }
        if a[i] == ell && b[j] == ell {
            return Some((ell, i, j));
        }
        // Any level below the larger current level is overshot by one walk.
        ell = a[i].max(b[j]);
    }
}

pub fn first_common_level(pp: &PairPath) -> Option<CommonLevel> {
    common_level_from(pp.x.levels(), pp.xt.levels(), 0, 0).map(|(level, gamma, gamma_t)| CommonLevel {
        level,
        gamma,
        gamma_t,
    })
}

fn first_above(lv: &[i64], from: usize, m: i64) -> Option<usize> {
    lv.get(from..)?.iter().position(|&l| l > m).map(|k| k + from)
}

/// (μ₁, μ̃₁) measured from (i0, j0): the fresh common level (ν, ν̃), then
/// ν-stages through (ρ, ρ̃) while either walk backtracks.
fn mu1_from(a: &Track, b: &Track, i0: usize, j0: usize, confirm: Confirm) -> Outcome<(usize, usize, usize)> {
    let Some((_, mut i, mut j)) = common_level_from(a.lv, b.lv, i0, j0) else {
        return Outcome::Exhausted;
    };
    let mut stages = 0;
    loop {
        let (ba, bb) = (a.nse[i], b.nse[j]);
        if ba == NONE && bb == NONE {
            return match confirm.accepts((a.last() - i).min(b.last() - j)) {
                Some(_) => Outcome::Done((i, j, stages)),
                None => Outcome::Censored,
            };
        }
        let ra = if ba == NONE { usize::MAX } else { ba - i };
        let rb = if bb == NONE { usize::MAX } else { bb - j };
        let r = ra.min(rb);
        // β∧β̃ is known only if the other walk is observed up to r.
        if i + r > a.last() || j + r > b.last() {
            return Outcome::Censored;
        }
        let m = (*a.lv[i..=i + r].iter().max().expect("nonempty")).max(*b.lv[j..=j + r].iter().max().expect("nonempty"));
        let (Some(rho), Some(rho_t)) = (first_above(a.lv, i, m), first_above(b.lv, j, m)) else {
            return Outcome::Exhausted;
        };
        let Some((_, ni, nj)) = common_level_from(a.lv, b.lv, rho, rho_t) else {
            return Outcome::Exhausted;
        };
        i = ni;
        j = nj;
        stages += 1;
    }
}

fn first_common_regeneration(a: &[i64], b: &[i64], confirm: Confirm) -> Outcome<(usize, usize)> {
    match mu1_from(&Track::new(a), &Track::new(b), 0, 0, confirm) {
        Outcome::Done((i, j, _)) => Outcome::Done((i, j)),
        Outcome::Censored => Outcome::Censored,
        Outcome::Exhausted => Outcome::Exhausted,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairRegenRecord {
    pub pairs: Vec<(usize, usize)>,
    /// Number of ν-stages (K) used for each pair.
    pub stages: Vec<usize>,
    pub censored_tail: bool,
    pub confirm: Confirm,
}

pub fn common_regenerations(pp: &PairPath, confirm: Confirm) -> Result<PairRegenRecord> {
    if let Confirm::Horizon(0) = confirm {
        return Err(Error::Precondition("confirm horizon must be at least 1".into()));
    }
    let (la, lb) = (pp.x.levels(), pp.xt.levels());
    if la[0] != lb[0] {
        return Err(Error::Precondition(format!(
            "walks start on different levels {} and {}",
            la[0], lb[0]
        )));
    }
    let (a, b) = (Track::new(la), Track::new(lb));
    let mut rec = PairRegenRecord {
        pairs: Vec::new(),
        stages: Vec::new(),
        censored_tail: false,
        confirm,
    };
    let (mut i, mut j) = (0, 0);
    loop {
        match mu1_from(&a, &b, i, j, confirm) {
            Outcome::Done((ni, nj, k)) => {
                rec.pairs.push((ni, nj));
                rec.stages.push(k);
                i = ni;
                j = nj;
            }
            Outcome::Censored => {
                rec.censored_tail = true;
                return Ok(rec);
            }
            Outcome::Exhausted => return Ok(rec),
        }
    }
}

/// |X_[0,n) ∩ X̃_[0,n)|.
pub fn intersections(pp: &PairPath, n: usize) -> Result<usize> {
    Ok(intersection_profile(pp, &[n])?[0])
}

/// Intersection counts at each n of an increasing grid, in one pass.
pub fn intersection_profile(pp: &PairPath, grid: &[usize]) -> Result<Vec<usize>> {
    let nmax = grid.iter().copied().max().unwrap_or(0);
    if pp.x.steps() + 1 < nmax || pp.xt.steps() + 1 < nmax {
        return Err(Error::Precondition(format!("paths have fewer than n = {nmax} positions")));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Precondition("grid must be strictly increasing".into()));
    }
    let mut sx: HashSet<&[i64]> = HashSet::with_capacity(nmax);
    let mut st: HashSet<&[i64]> = HashSet::with_capacity(nmax);
    let mut count = 0;
    let mut out = Vec::with_capacity(grid.len());
    let mut g = grid.iter().peekable();
    for k in 0..=nmax {
        while g.peek() == Some(&&k) {
            out.push(count);
            g.next();
        }
        if k == nmax {
            break;
        }
        let (a, b) = (pp.x.position(k), pp.xt.position(k));
        if sx.insert(a) && st.contains(a) {
            count += 1;
        }
        if st.insert(b) && sx.contains(b) {
            count += 1;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Variant {
    /// Both walks in one environment: transition q.
    Common,
    /// Walks in independent environments: transition q̄.
    Independent,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct YStep {
    pub variant: Variant,
    pub start: Site,
    pub result: Site,
    pub attempts: usize,
    pub mu: (usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct YOptions {
    pub confirm: Confirm,
    pub max_attempts: usize,
    /// Simulated path length of the first try; doubled until the
    /// construction resolves.
    pub initial_len: usize,
    pub max_len: usize,
}

pub const DEFAULT_Y_HORIZON: usize = 128;

impl Default for YOptions {
    fn default() -> Self {
        YOptions {
            confirm: Confirm::Horizon(DEFAULT_Y_HORIZON),
            max_attempts: 10_000,
            initial_len: 256,
            max_len: 1 << 20,
        }
    }
}

impl YOptions {
    fn first_len(&self) -> usize {
        match self.confirm {
            Confirm::Horizon(h) => self.initial_len.max(2 * h),
            Confirm::ToEnd => self.initial_len,
        }
        .max(1)
    }
}

fn drops_below_start(p: &Path) -> bool {
    let l0 = p.levels()[0];
    p.levels()[1..].iter().any(|&l| l < l0)
}

fn check_start(model: &EnvironmentModel, x: &[i64]) -> Result<()> {
    if x.len() != model.d {
        return Err(Error::Precondition(format!("start has {} coordinates, model has d = {}", x.len(), model.d)));
    }
    if model.level(x) != 0 {
        return Err(Error::Precondition(format!("start {x:?} is not on level 0")));
    }
    Ok(())
}

fn environment(model: &Arc<EnvironmentModel>, key: &StreamKey, tag: &str) -> Environment {
    Environment::new(model.clone(), key.tagged(tag).hash())
}

/// One rejection round: Some(result) if neither walk backtracks.
fn attempt(env: &Environment, env_t: &Environment, x: &[i64], key: &StreamKey, opts: &YOptions) -> Result<Option<(Site, (usize, usize))>> {
    let d = x.len();
    let mut n = opts.first_len();
    loop {
        let px = simulate(env, &lattice::origin(d), n, &mut key.tagged("x").stream());
        if drops_below_start(&px) {
            return Ok(None);
        }
        let pt = simulate(env_t, x, n, &mut key.tagged("xt").stream());
        if drops_below_start(&pt) {
            return Ok(None);
        }
        if let Outcome::Done((i, j)) = first_common_regeneration(px.levels(), pt.levels(), opts.confirm) {
            return Ok(Some((lattice::sub(pt.position(j), px.position(i)), (i, j))));
        }
        n *= 2;
        if n > opts.max_len {
            return Err(Error::Unresolved { len: n / 2 });
        }
    }
}

fn y_sample(model: &Arc<EnvironmentModel>, x: &[i64], key: &StreamKey, opts: &YOptions, variant: Variant) -> Result<YStep> {
    check_start(model, x)?;
    for m in 0..opts.max_attempts {
        let k = key.with(m as u64);
        let env = environment(model, &k, "omega");
        let env_t = match variant {
            Variant::Common => env.clone(),
            Variant::Independent => environment(model, &k, "omega-bar"),
        };
        if let Some((result, mu)) = attempt(&env, &env_t, x, &k, opts)? {
            return Ok(YStep {
                variant,
                start: lattice::site(x),
                result,
                attempts: m + 1,
                mu,
            });
        }
    }
    Err(Error::RejectionLimit(opts.max_attempts))
}

/// One transition of the difference chain from x: X from 0 and X̃ from x in
/// a fresh common environment, conditioned on no backtracking by rejection.
pub fn y_chain_sample(model: &Arc<EnvironmentModel>, x: &[i64], key: &StreamKey, opts: &YOptions) -> Result<YStep> {
    y_sample(model, x, key, opts, Variant::Common)
}

/// As [`y_chain_sample`] with the two walks in independent environments.
pub fn ybar_sample(model: &Arc<EnvironmentModel>, x: &[i64], key: &StreamKey, opts: &YOptions) -> Result<YStep> {
    y_sample(model, x, key, opts, Variant::Independent)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoupledSample {
    pub start: Site,
    pub y: Site,
    pub ybar: Site,
    pub agree: bool,
    /// First round (1-based) in which X and X̃ do not backtrack.
    pub m: usize,
    /// First round in which X and X̄ do not backtrack.
    pub m_bar: usize,
    /// Some round up to min(m, m_bar) has intersecting X and X̃ windows.
    pub intersected: bool,
    /// Disagreement is explained by an intersection.
    pub mechanism_ok: bool,
}

/// The walk X̄: on sites visited by X it steps by ω̄, elsewhere by ω; in
/// both cases the k-th visit to a site reads the same keyed uniform that X̃
/// reads on its k-th visit there.
fn simulate_bar(env: &Environment, env_bar: &Environment, z: &StreamKey, x_sites: &HashSet<&[i64]>, start: &[i64], n: usize) -> Path {
    let mut table = SiteTable::new(z.clone());
    let mut path = Path::new(start, &env.model().u_hat);
    let mut cur = lattice::site(start);
    let mut next = cur.clone();
    for _ in 0..n {
        let u = table.draw(&cur);
        let e = if x_sites.contains(cur.as_slice()) { env_bar } else { env };
        step_from(e, &cur, u, &mut next);
        path.push(&next);
        std::mem::swap(&mut cur, &mut next);
    }
    path
}

struct Round {
    backtrack: bool,
    backtrack_bar: bool,
    mu: Outcome<(usize, usize)>,
    rho: Outcome<(usize, usize)>,
    x: Path,
    xt: Path,
    xbar: Path,
}

fn coupled_round(model: &Arc<EnvironmentModel>, x: &[i64], key: &StreamKey, confirm: Confirm, n: usize) -> Round {
    let env = environment(model, key, "omega");
    let env_bar = environment(model, key, "omega-bar");
    let z = key.tagged("z");
    let px = simulate(&env, &lattice::origin(x.len()), n, &mut key.tagged("x").stream());
    let pt = simulate_with(&env, x, n, &mut SiteTable::new(z.clone()));
    let sites: HashSet<&[i64]> = px.positions().collect();
    let pb = simulate_bar(&env, &env_bar, &z, &sites, x, n);
    let dx = drops_below_start(&px);
    Round {
        backtrack: dx || drops_below_start(&pt),
        backtrack_bar: dx || drops_below_start(&pb),
        mu: first_common_regeneration(px.levels(), pt.levels(), confirm),
        rho: first_common_regeneration(px.levels(), pb.levels(), confirm),
        x: px,
        xt: pt,
        xbar: pb,
    }
}

fn windows_intersect(r: &Round) -> bool {
    let (wx, wt) = match (r.mu, r.rho) {
        (Outcome::Done((a, b)), Outcome::Done((c, d))) => (a.max(c), b.max(d)),
        _ => (r.x.steps() + 1, r.xt.steps() + 1),
    };
    let sx: HashSet<&[i64]> = (0..wx).map(|k| r.x.position(k)).collect();
    (0..wt).any(|k| sx.contains(r.xt.position(k)))
}

/// Three-walk coupling of one Y step and one Ȳ step from the same state x,
/// with independent retry rounds for the two no-backtrack conditionings.
pub fn coupled_sample(model: &Arc<EnvironmentModel>, x: &[i64], key: &StreamKey, opts: &YOptions) -> Result<CoupledSample> {
    check_start(model, x)?;
    let mut m = None;
    let mut m_bar = None;
    let mut y = None;
    let mut ybar = None;
    let mut intersected = false;
    for round in 0..opts.max_attempts {
        let k = key.with(round as u64);
        let mut n = opts.first_len();
        let r = loop {
            let r = coupled_round(model, x, &k, opts.confirm, n);
            let need_mu = m.is_none() && !r.backtrack;
            let need_rho = m_bar.is_none() && !r.backtrack_bar;
            let mu_ok = matches!(r.mu, Outcome::Done(_)) || !need_mu;
            let rho_ok = matches!(r.rho, Outcome::Done(_)) || !need_rho;
            if mu_ok && rho_ok {
                break r;
            }
            n *= 2;
            if n > opts.max_len {
                return Err(Error::Unresolved { len: n / 2 });
            }
        };
        if m.is_none() || m_bar.is_none() {
            intersected |= windows_intersect(&r);
        }
        if m.is_none() && !r.backtrack {
            let Outcome::Done((i, j)) = r.mu else { unreachable!() };
            m = Some(round + 1);
            y = Some(lattice::sub(r.xt.position(j), r.x.position(i)));
        }
        if m_bar.is_none() && !r.backtrack_bar {
            let Outcome::Done((i, j)) = r.rho else { unreachable!() };
            m_bar = Some(round + 1);
            ybar = Some(lattice::sub(r.xbar.position(j), r.x.position(i)));
        }
        if let (Some(m), Some(m_bar), Some(y), Some(ybar)) = (m, m_bar, y.clone(), ybar.clone()) {
            let agree = y == ybar;
            return Ok(CoupledSample {
                start: lattice::site(x),
                y,
                ybar,
                agree,
                m,
                m_bar,
                intersected,
                mechanism_ok: agree || intersected,
            });
        }
    }
    Err(Error::RejectionLimit(opts.max_attempts))
}
