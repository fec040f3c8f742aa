//! Environment models, lazily generated environments and hypothesis checks.

mod file;
mod hypotheses;

pub use file::{model_to_toml, parse_model};
pub use hypotheses::{check_hypotheses, HypothesisReport, Witness};

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{self, Site};
use crate::rng::{hash_coords, mix, splitmix64, tag_hash, unit_f64};

/// Tolerance on Σp − 1 after renormalization.
pub const NORMALIZATION_TOL: f64 = 1e-12;
/// Inputs further than this from summing to one are rejected as typos.
pub const INPUT_SUM_TOL: f64 = 1e-6;

/// A finitely supported probability vector on Z^d: the law of one step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepDistribution {
    steps: Vec<Site>,
    probs: Vec<f64>,
}

impl StepDistribution {
    /// Validates and renormalizes. Zero-probability entries are dropped.
    pub fn new(steps: Vec<Site>, probs: Vec<f64>) -> Result<Self> {
        if steps.len() != probs.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} steps but {} probabilities",
                steps.len(),
                probs.len()
            )));
        }
        if steps.is_empty() {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        let d = steps[0].len();
        if steps.iter().any(|s| s.len() != d) {
            return Err(Error::InvalidDistribution("steps of mixed dimension".into()));
        }
        for (i, s) in steps.iter().enumerate() {
            if steps[..i].contains(s) {
                return Err(Error::InvalidDistribution(format!("repeated step {:?}", s.as_slice())));
            }
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidDistribution(format!("negative or non-finite probability {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > INPUT_SUM_TOL {
            return Err(Error::InvalidDistribution(format!("probabilities sum to {total}, not 1")));
        }
        let (steps, probs): (Vec<Site>, Vec<f64>) = steps
            .into_iter()
            .zip(probs)
            .filter(|(_, p)| *p > 0.0)
            .map(|(s, p)| (s, p / total))
            .unzip();
        Ok(StepDistribution { steps, probs })
    }

    pub fn from_pairs(pairs: &[(&[i64], f64)]) -> Result<Self> {
        Self::new(
            pairs.iter().map(|(s, _)| lattice::site(s)).collect(),
            pairs.iter().map(|(_, p)| *p).collect(),
        )
    }

    /// Point mass on a single step.
    pub fn dirac(step: &[i64]) -> Self {
        StepDistribution {
            steps: vec![lattice::site(step)],
            probs: vec![1.0],
        }
    }

    pub fn dim(&self) -> usize {
        self.steps[0].len()
    }

    pub fn steps(&self) -> &[Site] {
        &self.steps
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob_of(&self, z: &[i64]) -> f64 {
        self.steps
            .iter()
            .position(|s| s.as_slice() == z)
            .map_or(0.0, |i| self.probs[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Site, f64)> {
        self.steps.iter().zip(self.probs.iter().copied())
    }
}

/// Mean step Σ z p_z.
pub fn drift(sd: &StepDistribution) -> Vec<f64> {
    let mut out = vec![0.0; sd.dim()];
    for (z, p) in sd.iter() {
        for (o, &c) in out.iter_mut().zip(z.iter()) {
            *o += c as f64 * p;
        }
    }
    out
}

/// Σ e^{s|z|} p_z with the Euclidean norm.
pub fn exp_moment(sd: &StepDistribution, s: f64) -> f64 {
    sd.iter().map(|(z, p)| (s * lattice::norm(z)).exp() * p).sum()
}

/// Law of the mixing weight of a two-point mixture.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum MixingLaw {
    Uniform { lo: f64, hi: f64 },
    Point { w: f64 },
    Discrete { values: Vec<f64>, probs: Vec<f64> },
}

impl MixingLaw {
    fn validate(&self) -> Result<()> {
        let in_unit = |w: f64| (0.0..=1.0).contains(&w);
        match self {
            MixingLaw::Uniform { lo, hi } => {
                if !(in_unit(*lo) && in_unit(*hi) && lo <= hi) {
                    return Err(Error::InvalidModel(format!("uniform mixing needs 0 ≤ lo ≤ hi ≤ 1, got [{lo}, {hi}]")));
                }
            }
            MixingLaw::Point { w } => {
                if !in_unit(*w) {
                    return Err(Error::InvalidModel(format!("mixing weight {w} outside [0, 1]")));
                }
            }
            MixingLaw::Discrete { values, probs } => {
                if values.is_empty() || values.len() != probs.len() {
                    return Err(Error::InvalidModel("discrete mixing law needs matching values/probs".into()));
                }
                if values.iter().any(|w| !in_unit(*w)) {
                    return Err(Error::InvalidModel("discrete mixing values outside [0, 1]".into()));
                }
                check_weights(probs)?;
            }
        }
        Ok(())
    }

    /// Inverse-CDF sample from one uniform.
    #[inline]
    pub fn sample(&self, u: f64) -> f64 {
        match self {
            MixingLaw::Uniform { lo, hi } => lo + (hi - lo) * u,
            MixingLaw::Point { w } => *w,
            MixingLaw::Discrete { values, probs } => values[pick(probs, u)],
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            MixingLaw::Uniform { lo, hi } => 0.5 * (lo + hi),
            MixingLaw::Point { w } => *w,
            MixingLaw::Discrete { values, probs } => values.iter().zip(probs).map(|(v, p)| v * p).sum(),
        }
    }

    /// Weights that occur with positive probability at the extremes of the law.
    fn extremes(&self) -> Vec<f64> {
        match self {
            MixingLaw::Uniform { lo, hi } => vec![*lo, *hi],
            MixingLaw::Point { w } => vec![*w],
            MixingLaw::Discrete { values, probs } => values
                .iter()
                .zip(probs)
                .filter(|(_, p)| **p > 0.0)
                .map(|(v, _)| *v)
                .collect(),
        }
    }

    /// Weights whose neighbourhoods carry positive probability.
    fn typical(&self) -> Vec<f64> {
        match self {
            MixingLaw::Uniform { lo, hi } if lo < hi => vec![0.5 * (lo + hi)],
            _ => self.extremes(),
        }
    }
}

fn check_weights(w: &[f64]) -> Result<()> {
    if w.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::InvalidModel("negative weight".into()));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > INPUT_SUM_TOL {
        return Err(Error::InvalidModel(format!("weights sum to {total}, not 1")));
    }
    Ok(())
}

/// Index i with cumulative weight just exceeding u.
#[inline]
fn pick(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(weights.len() - 1)
}

/// The generative law P of a single site.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Family {
    Homogeneous { law: StepDistribution },
    TwoPointMixture { a: StepDistribution, b: StepDistribution, mixing: MixingLaw },
    FiniteMixture { components: Vec<StepDistribution>, weights: Vec<f64> },
}

impl Family {
    fn components(&self) -> Vec<&StepDistribution> {
        match self {
            Family::Homogeneous { law } => vec![law],
            Family::TwoPointMixture { a, b, .. } => vec![a, b],
            Family::FiniteMixture { components, .. } => components.iter().collect(),
        }
    }
}

/// Per-site mixture coefficients over the model's components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SiteLaw {
    /// Homogeneous model.
    Fixed,
    /// Two-point mixture: weight on component A.
    Mix(f64),
    /// Finite mixture: the selected component.
    Component(usize),
}

/// Generative law of i.i.d. site distributions plus hypothesis parameters.
#[derive(Clone, Debug, Serialize)]
pub struct EnvironmentModel {
    pub name: String,
    pub d: usize,
    pub u_hat: Site,
    pub delta: f64,
    pub s0: f64,
    #[serde(rename = "M")]
    pub m_bound: f64,
    pub kappa: f64,
    pub family: Family,
    #[serde(skip)]
    support: Vec<Site>,
    #[serde(skip)]
    support_levels: Vec<i64>,
    /// `table[c][i]`: probability of `support[i]` under component c.
    #[serde(skip)]
    table: Vec<Vec<f64>>,
}

impl EnvironmentModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        d: usize,
        u_hat: &[i64],
        delta: f64,
        s0: f64,
        m_bound: f64,
        kappa: f64,
        family: Family,
    ) -> Result<Self> {
        if d < 2 {
            return Err(Error::Dimension(d));
        }
        if u_hat.len() != d || u_hat.iter().all(|&c| c == 0) {
            return Err(Error::InvalidModel(format!("u_hat must be a nonzero vector in Z^{d}")));
        }
        for (label, v) in [("delta", delta), ("s0", s0), ("M", m_bound), ("kappa", kappa)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidModel(format!("{label} must be positive, got {v}")));
            }
        }
        match &family {
            Family::TwoPointMixture { mixing, .. } => mixing.validate()?,
            Family::FiniteMixture { components, weights } => {
                if components.is_empty() || components.len() != weights.len() {
                    return Err(Error::InvalidModel("finite mixture needs one weight per component".into()));
                }
                check_weights(weights)?;
            }
            Family::Homogeneous { .. } => {}
        }
        let comps = family.components();
        if comps.iter().any(|c| c.dim() != d) {
            return Err(Error::InvalidModel(format!("component dimension differs from d = {d}")));
        }
        let mut support: Vec<Site> = Vec::new();
        for c in &comps {
            for s in c.steps() {
                if !support.contains(s) {
                    support.push(s.clone());
                }
            }
        }
        let table = comps
            .iter()
            .map(|c| support.iter().map(|s| c.prob_of(s)).collect())
            .collect();
        let support_levels = support.iter().map(|s| lattice::dot(s, u_hat)).collect();
        Ok(EnvironmentModel {
            name: name.to_string(),
            d,
            u_hat: lattice::site(u_hat),
            delta,
            s0,
            m_bound,
            kappa,
            family,
            support,
            support_levels,
            table,
        })
    }

    /// Homogeneous model with hypothesis parameters read off the law itself.
    pub fn homogeneous(name: &str, u_hat: &[i64], law: StepDistribution) -> Result<Self> {
        let d = law.dim();
        let lvl = |z: &[i64]| lattice::dot(z, u_hat);
        let drift_u: f64 = law.iter().map(|(z, p)| lvl(z) as f64 * p).sum();
        let level_one: f64 = law.iter().filter(|(z, _)| lvl(z) == 1).map(|(_, p)| p).sum();
        let m = law.steps().iter().map(|z| lattice::norm(z)).fold(0.0, f64::max).max(1.0);
        Self::new(
            name,
            d,
            u_hat,
            drift_u.max(f64::MIN_POSITIVE),
            1.0,
            m,
            level_one.max(f64::MIN_POSITIVE),
            Family::Homogeneous { law },
        )
    }

    /// Union of the component supports, in a fixed order.
    pub fn support(&self) -> &[Site] {
        &self.support
    }

    /// Levels z·û of the support steps.
    pub fn support_levels(&self) -> &[i64] {
        &self.support_levels
    }

    pub fn max_level_jump(&self) -> i64 {
        self.support_levels.iter().map(|l| l.abs()).max().unwrap_or(0)
    }

    pub fn level(&self, x: &[i64]) -> i64 {
        lattice::dot(x, &self.u_hat)
    }

    /// Component probabilities aligned with [`support`](Self::support).
    pub fn component_table(&self) -> &[Vec<f64>] {
        &self.table
    }

    /// Site law drawn from one uniform.
    #[inline]
    pub fn site_law(&self, u: f64) -> SiteLaw {
        match &self.family {
            Family::Homogeneous { .. } => SiteLaw::Fixed,
            Family::TwoPointMixture { mixing, .. } => SiteLaw::Mix(mixing.sample(u)),
            Family::FiniteMixture { weights, .. } => SiteLaw::Component(pick(weights, u)),
        }
    }

    /// Probability of `support[i]` under a site law.
    #[inline]
    pub fn prob(&self, law: SiteLaw, i: usize) -> f64 {
        match law {
            SiteLaw::Fixed => self.table[0][i],
            SiteLaw::Mix(w) => w * self.table[0][i] + (1.0 - w) * self.table[1][i],
            SiteLaw::Component(c) => self.table[c][i],
        }
    }

    /// Index into the support of the step selected by uniform `u`.
    #[inline]
    pub fn sample_index(&self, law: SiteLaw, u: f64) -> usize {
        let n = self.support.len();
        let mut acc = 0.0;
        let mut last = 0;
        for i in 0..n {
            let p = self.prob(law, i);
            if p > 0.0 {
                acc += p;
                last = i;
                if u < acc {
                    return i;
                }
            }
        }
        last
    }

    pub fn distribution(&self, law: SiteLaw) -> StepDistribution {
        let (steps, probs): (Vec<Site>, Vec<f64>) = (0..self.support.len())
            .map(|i| (self.support[i].clone(), self.prob(law, i)))
            .filter(|(_, p)| *p > 0.0)
            .unzip();
        let total: f64 = probs.iter().sum();
        StepDistribution {
            steps,
            probs: probs.into_iter().map(|p| p / total).collect(),
        }
    }

    /// Annealed one-step law E π_{0,·}.
    pub fn annealed(&self) -> StepDistribution {
        let law = match &self.family {
            Family::Homogeneous { .. } => SiteLaw::Fixed,
            Family::TwoPointMixture { mixing, .. } => SiteLaw::Mix(mixing.mean()),
            Family::FiniteMixture { weights, .. } => {
                let probs: Vec<f64> = (0..self.support.len())
                    .map(|i| weights.iter().enumerate().map(|(c, w)| w * self.table[c][i]).sum())
                    .collect();
                return StepDistribution::new(self.support.clone(), probs)
                    .expect("mixture of valid laws is valid");
            }
        };
        self.distribution(law)
    }

    /// Site laws at the extremes of the family (for linear constraints).
    pub(crate) fn extreme_laws(&self) -> Vec<(String, SiteLaw)> {
        match &self.family {
            Family::Homogeneous { .. } => vec![("homogeneous".into(), SiteLaw::Fixed)],
            Family::TwoPointMixture { mixing, .. } => mixing
                .extremes()
                .into_iter()
                .map(|w| (format!("mixture w={w}"), SiteLaw::Mix(w)))
                .collect(),
            Family::FiniteMixture { weights, .. } => weights
                .iter()
                .enumerate()
                .filter(|(_, w)| **w > 0.0)
                .map(|(c, _)| (format!("component {c}"), SiteLaw::Component(c)))
                .collect(),
        }
    }

    /// Site laws representing events of positive probability.
    pub(crate) fn typical_laws(&self) -> Vec<(String, SiteLaw)> {
        match &self.family {
            Family::TwoPointMixture { mixing, .. } => mixing
                .typical()
                .into_iter()
                .map(|w| (format!("mixture w={w}"), SiteLaw::Mix(w)))
                .collect(),
            _ => self.extreme_laws(),
        }
    }
}

/// The default experiment model: a two-point uniform mixture on Z^2 with
/// genuine backtracking.
pub fn benchmark_a() -> EnvironmentModel {
    let e = |x: i64, y: i64| lattice::site(&[x, y]);
    let a = StepDistribution::new(vec![e(1, 0), e(-1, 0), e(0, 1), e(0, -1)], vec![0.5, 0.1, 0.2, 0.2])
        .expect("valid");
    let b = StepDistribution::new(vec![e(1, 0), e(-1, 0), e(0, 1), e(0, -1)], vec![0.3, 0.1, 0.4, 0.2])
        .expect("valid");
    EnvironmentModel::new(
        "benchmark-A",
        2,
        &[1, 0],
        0.2,
        1.0,
        1.0,
        0.3,
        Family::TwoPointMixture {
            a,
            b,
            mixing: MixingLaw::Uniform { lo: 0.0, hi: 1.0 },
        },
    )
    .expect("benchmark-A is valid")
}

/// The closed-form model: steps e1 and e2 with probability 1/2 each, û = (1,1).
pub fn half_half() -> EnvironmentModel {
    let law = StepDistribution::from_pairs(&[(&[1, 0], 0.5), (&[0, 1], 0.5)]).expect("valid");
    EnvironmentModel::homogeneous("half-half", &[1, 1], law).expect("valid")
}

/// Deterministic steps e1 with û = e1.
pub fn deterministic_e1(d: usize) -> EnvironmentModel {
    let e1 = lattice::unit(d, 0);
    EnvironmentModel::homogeneous("deterministic-e1", &e1, StepDistribution::dirac(&e1)).expect("valid")
}

/// Two diagonal steps e1±e2 (both raise the level by one) with a two-component
/// random environment. First common regenerations happen after one step.
pub fn micro_model() -> EnvironmentModel {
    let a = StepDistribution::from_pairs(&[(&[1, 1], 0.8), (&[1, -1], 0.2)]).expect("valid");
    let b = StepDistribution::from_pairs(&[(&[1, 1], 0.3), (&[1, -1], 0.7)]).expect("valid");
    EnvironmentModel::new(
        "micro",
        2,
        &[1, 0],
        1.0,
        1.0,
        std::f64::consts::SQRT_2,
        1.0,
        Family::FiniteMixture {
            components: vec![a, b],
            weights: vec![0.5, 0.5],
        },
    )
    .expect("valid")
}

/// Built-in models by name.
pub fn builtin(name: &str) -> Option<EnvironmentModel> {
    match name {
        "benchmark-A" | "benchmark-a" => Some(benchmark_a()),
        "half-half" => Some(half_half()),
        "deterministic-e1" => Some(deterministic_e1(2)),
        "micro" => Some(micro_model()),
        _ => None,
    }
}

/// One realization ω: a lazy, seed-deterministic map site → step law.
#[derive(Clone, Debug)]
pub struct Environment {
    model: Arc<EnvironmentModel>,
    master_seed: u64,
    key: u64,
}

const ENV_TAG: &str = "env";

impl Environment {
    pub fn new(model: Arc<EnvironmentModel>, master_seed: u64) -> Self {
        let key = mix(splitmix64(master_seed), tag_hash(ENV_TAG));
        Environment { model, master_seed, key }
    }

    pub fn model(&self) -> &EnvironmentModel {
        &self.model
    }

    pub fn shared_model(&self) -> &Arc<EnvironmentModel> {
        &self.model
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    #[inline]
    pub fn site_uniform(&self, x: &[i64]) -> f64 {
        unit_f64(hash_coords(self.key, x))
    }

    #[inline]
    pub fn site_law(&self, x: &[i64]) -> SiteLaw {
        self.model.site_law(self.site_uniform(x))
    }

    /// The two-point mixing weight at x (or None for other families).
    pub fn mixing_weight(&self, x: &[i64]) -> Option<f64> {
        match self.site_law(x) {
            SiteLaw::Mix(w) => Some(w),
            _ => None,
        }
    }

    pub fn site_distribution(&self, x: &[i64]) -> StepDistribution {
        self.model.distribution(self.site_law(x))
    }

    /// Local drift D(T_x ω).
    pub fn local_drift(&self, x: &[i64]) -> Vec<f64> {
        let law = self.site_law(x);
        let mut out = vec![0.0; self.model.d];
        for (i, z) in self.model.support.iter().enumerate() {
            let p = self.model.prob(law, i);
            for (o, &c) in out.iter_mut().zip(z.iter()) {
                *o += c as f64 * p;
            }
        }
        out
    }

    /// Support index of the step taken from x with uniform u.
    #[inline]
    pub fn sample_index(&self, x: &[i64], u: f64) -> usize {
        self.model.sample_index(self.site_law(x), u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn drift_examples() {
        assert!(close(&drift(&StepDistribution::dirac(&[1, 0])), &[1.0, 0.0]));
        let sd = StepDistribution::from_pairs(&[(&[1, 0], 0.75), (&[-1, 0], 0.25)]).unwrap();
        assert!(close(&drift(&sd), &[0.5, 0.0]));
        let a = StepDistribution::from_pairs(&[(&[1, 0], 0.5), (&[-1, 0], 0.1), (&[0, 1], 0.2), (&[0, -1], 0.2)])
            .unwrap();
        assert!(close(&drift(&a), &[0.4, 0.0]));
    }

    #[test]
    fn exp_moment_examples() {
        assert!((exp_moment(&StepDistribution::dirac(&[0, 0]), 1.0) - 1.0).abs() < 1e-15);
        assert!((exp_moment(&StepDistribution::dirac(&[1, 0]), 1.0) - std::f64::consts::E).abs() < 1e-12);
        // Four unit steps: Σ p e^{0.5} = e^{0.5}.
        let a = StepDistribution::from_pairs(&[(&[1, 0], 0.5), (&[-1, 0], 0.1), (&[0, 1], 0.2), (&[0, -1], 0.2)])
            .unwrap();
        let oracle = 0.5 * 0.5f64.exp() + 0.1 * 0.5f64.exp() + 0.2 * 0.5f64.exp() + 0.2 * 0.5f64.exp();
        assert!((exp_moment(&a, 0.5) - oracle).abs() < 1e-14);
    }

    #[test]
    fn rejects_negative_and_typos() {
        assert!(StepDistribution::from_pairs(&[(&[1, 0], 1.2), (&[0, 1], -0.2)]).is_err());
        assert!(StepDistribution::from_pairs(&[(&[1, 0], 0.3), (&[0, 1], 0.3)]).is_err());
        assert!(StepDistribution::from_pairs(&[(&[1, 0], 0.5), (&[1, 0], 0.5)]).is_err());
        assert!(StepDistribution::new(vec![], vec![]).is_err());
    }

    #[test]
    fn renormalizes_small_drift() {
        let sd = StepDistribution::from_pairs(&[(&[1, 0], 0.5 + 1e-8), (&[0, 1], 0.5)]).unwrap();
        let total: f64 = sd.probs().iter().sum();
        assert!((total - 1.0).abs() <= NORMALIZATION_TOL);
    }

    #[test]
    fn homogeneous_site_distribution_is_the_law() {
        let law = StepDistribution::from_pairs(&[(&[1, 0], 0.75), (&[-1, 0], 0.25)]).unwrap();
        let model = Arc::new(EnvironmentModel::homogeneous("h", &[1, 0], law.clone()).unwrap());
        let env = Environment::new(model, 99);
        for x in [[0, 0], [5, -3], [-100, 7]] {
            assert_eq!(env.site_distribution(&x), law);
        }
    }

    #[test]
    fn site_distribution_is_deterministic() {
        let env = Environment::new(Arc::new(benchmark_a()), 12345);
        for x in [[0i64, 0], [3, -2], [1 << 40, -(1 << 33)]] {
            let a = env.site_distribution(&x);
            let b = env.site_distribution(&x);
            assert_eq!(a, b);
            assert_eq!(
                a.probs().iter().map(|p| p.to_bits()).collect::<Vec<_>>(),
                b.probs().iter().map(|p| p.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn uniform_mixing_has_mean_one_half() {
        let env = Environment::new(Arc::new(benchmark_a()), 2024);
        let n = 100_000;
        let mean = (0..n).map(|i| env.mixing_weight(&[i, 3 * i + 1]).unwrap()).sum::<f64>() / n as f64;
        let se = (1.0 / 12.0 / n as f64).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn distinct_sites_are_uncorrelated_across_seeds() {
        let model = Arc::new(benchmark_a());
        let n = 20_000;
        let (mut sx, mut sy, mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for seed in 0..n {
            let env = Environment::new(model.clone(), seed);
            let a = env.mixing_weight(&[0, 0]).unwrap();
            let b = env.mixing_weight(&[1, 0]).unwrap();
            sx += a;
            sy += b;
            sxy += a * b;
            sxx += a * a;
            syy += b * b;
        }
        let nf = n as f64;
        let cov = sxy / nf - sx * sy / nf / nf;
        let corr = cov / ((sxx / nf - (sx / nf).powi(2)) * (syy / nf - (sy / nf).powi(2))).sqrt();
        // 99% CI half-width for a zero correlation: 2.576 / sqrt(n).
        assert!(corr.abs() < 2.576 / nf.sqrt(), "corr {corr}");
    }

    #[test]
    fn sampled_sites_respect_hypothesis_bounds() {
        let model = Arc::new(benchmark_a());
        let env = Environment::new(model.clone(), 5);
        for i in 0..2000 {
            let x = [i % 37, i / 37 - 20];
            let sd = env.site_distribution(&x);
            let d = drift(&sd);
            assert!(d[0] >= model.delta - 1e-12);
            assert!(sd.prob_of(&[1, 0]) >= model.kappa - 1e-12);
        }
    }

    #[test]
    fn model_rejects_low_dimension() {
        let law = StepDistribution::dirac(&[1]);
        let err = EnvironmentModel::new("x", 1, &[1], 0.1, 1.0, 1.0, 0.1, Family::Homogeneous { law });
        assert!(matches!(err, Err(Error::Dimension(1))));
    }

    #[test]
    fn annealed_marginal_of_benchmark() {
        let ann = benchmark_a().annealed();
        for (z, p) in [([1, 0], 0.4), ([-1, 0], 0.1), ([0, 1], 0.3), ([0, -1], 0.2)] {
            assert!((ann.prob_of(&z) - p).abs() < 1e-12);
        }
    }
}
