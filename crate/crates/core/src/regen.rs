//! Regeneration times of a single walk, regeneration slabs, and the slab
//! estimators of the velocity and the diffusion matrix.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::env::EnvironmentModel;
use crate::error::{Error, Result};
use crate::lattice::{self, Site};
use crate::stats::{ratio_with_se, DEFAULT_BATCHES};
use crate::walk::Path;

pub use crate::stats::{tail_fit, TailFit};

pub const DEFAULT_CONFIRM_HORIZON: usize = 512;

/// How the event "no later backtrack" is accepted on a finite path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Confirm {
    /// Accept once this many backtrack-free steps are observed.
    Horizon(usize),
    /// Accept only if the whole observed remainder is backtrack-free.
    ToEnd,
}

impl Confirm {
    fn validate(self) -> Result<()> {
        match self {
            Confirm::Horizon(0) => Err(Error::Precondition("confirm horizon must be at least 1".into())),
            _ => Ok(()),
        }
    }

    /// Decides a candidate with `remaining` observed steps after it and no
    /// observed drop: Some(true) accept, None censored.
    pub(crate) fn accepts(self, remaining: usize) -> Option<bool> {
        match self {
            Confirm::ToEnd => Some(true),
            Confirm::Horizon(h) if remaining >= h => Some(true),
            Confirm::Horizon(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegenerationRecord {
    pub a: i64,
    pub times: Vec<usize>,
    /// The last candidate was neither rejected nor confirmed.
    pub censored_tail: bool,
    pub confirm: Confirm,
    /// Candidates rejected because of an observed backtrack.
    pub rejected: usize,
}

pub(crate) const NONE: usize = usize::MAX;

/// For each k, the first j > k with levels[j] < levels[k], or NONE.
pub fn next_smaller(levels: &[i64]) -> Vec<usize> {
    let mut out = vec![NONE; levels.len()];
    let mut stack: Vec<usize> = Vec::new();
    for (j, &l) in levels.iter().enumerate() {
        while let Some(&k) = stack.last() {
            if l < levels[k] {
                out[k] = j;
                stack.pop();
            } else {
                break;
            }
        }
        stack.push(j);
    }
    out
}

fn first_at_least(levels: &[i64], from: usize, target: i64) -> Option<usize> {
    levels.get(from..)?.iter().position(|&l| l >= target).map(|i| i + from)
}

/// Runs the candidate iteration S_0 = λ_a, S_k = S_{k−1} + λ_{M_β+a}∘θ^{S_{k−1}}
/// and its restart after each accepted time.
pub fn detect_regenerations(path: &Path, a: i64, confirm: Confirm) -> Result<RegenerationRecord> {
    if a < 1 {
        return Err(Error::Precondition(format!("a must be at least 1, got {a}")));
    }
    confirm.validate()?;
    let lv = path.levels();
    let n = path.steps();
    let nse = next_smaller(lv);
    let mut rec = RegenerationRecord {
        a,
        times: Vec::new(),
        censored_tail: false,
        confirm,
        rejected: 0,
    };
    let mut cand = first_at_least(lv, 0, lv[0] + a);
    while let Some(s) = cand {
        let b = nse[s];
        if b != NONE {
            rec.rejected += 1;
            let m = *lv[s..b].iter().max().expect("nonempty");
            cand = first_at_least(lv, b + 1, m + a);
        } else {
            match confirm.accepts(n - s) {
                Some(_) => {
                    rec.times.push(s);
                    cand = first_at_least(lv, s + 1, lv[s] + a);
                }
                None => {
                    rec.censored_tail = true;
                    break;
                }
            }
        }
    }
    Ok(rec)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Slab {
    pub index: usize,
    pub duration: usize,
    pub displacement: Site,
    /// Slab 0, from time 0 to the first regeneration; it has its own law.
    pub initial: bool,
}

pub fn slabs(path: &Path, record: &RegenerationRecord) -> Vec<Slab> {
    if record.times.len() < 2 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(record.times.len());
    let mut prev = 0usize;
    for (k, &t) in record.times.iter().enumerate() {
        out.push(Slab {
            index: k,
            duration: t - prev,
            displacement: lattice::sub(path.position(t), path.position(prev)),
            initial: k == 0,
        });
        prev = t;
    }
    out
}

fn iid_slabs(slabs: &[Slab]) -> Result<Vec<&Slab>> {
    let v: Vec<&Slab> = slabs.iter().filter(|s| !s.initial).collect();
    if v.len() < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 slabs, got {}", v.len())));
    }
    Ok(v)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VelocityEstimate {
    pub v_hat: Vec<f64>,
    pub se: Vec<f64>,
    pub slab_count: usize,
}

/// Mean displacement over mean duration across slabs k ≥ 1.
pub fn estimate_velocity(slabs: &[Slab]) -> Result<VelocityEstimate> {
    let s = iid_slabs(slabs)?;
    let d = s[0].displacement.len();
    let dur: Vec<f64> = s.iter().map(|x| x.duration as f64).collect();
    let (mut v_hat, mut se) = (Vec::with_capacity(d), Vec::with_capacity(d));
    for i in 0..d {
        let disp: Vec<f64> = s.iter().map(|x| x.displacement[i] as f64).collect();
        let (r, e) = ratio_with_se(&disp, &dur, DEFAULT_BATCHES);
        v_hat.push(r);
        se.push(e);
    }
    Ok(VelocityEstimate {
        v_hat,
        se,
        slab_count: s.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiffusionEstimate {
    pub v_hat: Vec<f64>,
    pub v_se: Vec<f64>,
    pub d_hat: Vec<Vec<f64>>,
    pub d_se: Vec<Vec<f64>>,
    pub slab_count: usize,
    pub min_eigenvalue: f64,
    pub psd: bool,
}

/// Mean of (Δ − T v̂)(Δ − T v̂)ᵀ over mean T, across slabs k ≥ 1.
pub fn estimate_diffusion(slabs: &[Slab], v: &VelocityEstimate) -> Result<DiffusionEstimate> {
    let s = iid_slabs(slabs)?;
    let d = v.v_hat.len();
    let dur: Vec<f64> = s.iter().map(|x| x.duration as f64).collect();
    let centered: Vec<Vec<f64>> = s
        .iter()
        .map(|x| {
            (0..d)
                .map(|i| x.displacement[i] as f64 - x.duration as f64 * v.v_hat[i])
                .collect()
        })
        .collect();
    let mut d_hat = vec![vec![0.0; d]; d];
    let mut d_se = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in i..d {
            let prod: Vec<f64> = centered.iter().map(|c| c[i] * c[j]).collect();
            let (r, e) = ratio_with_se(&prod, &dur, DEFAULT_BATCHES);
            d_hat[i][j] = r;
            d_hat[j][i] = r;
            d_se[i][j] = e;
            d_se[j][i] = e;
        }
    }
    let m = DMatrix::from_fn(d, d, |i, j| d_hat[i][j]);
    let trace = m.trace();
    let min_eigenvalue = m.symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(DiffusionEstimate {
        v_hat: v.v_hat.clone(),
        v_se: v.se.clone(),
        d_hat,
        d_se,
        slab_count: s.len(),
        min_eigenvalue,
        psd: min_eigenvalue >= -1e-9 * trace.abs().max(1.0),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DegeneracyReport {
    /// Orthonormal basis of span{x − y : x, y admissible}.
    pub span_basis: Vec<Vec<f64>>,
    /// Orthonormal basis of its orthogonal complement.
    pub complement: Vec<Vec<f64>>,
    /// uᵀ D̂ u for each complement vector u.
    pub quadratic: Vec<f64>,
}

impl DegeneracyReport {
    pub fn has_degenerate_directions(&self) -> bool {
        !self.complement.is_empty()
    }
}

const GS_TOL: f64 = 1e-9;

fn orthogonalize(basis: &[Vec<f64>], v: &[f64]) -> Option<Vec<f64>> {
    let mut w = v.to_vec();
    for b in basis {
        let c: f64 = w.iter().zip(b).map(|(x, y)| x * y).sum();
        for (x, y) in w.iter_mut().zip(b) {
            *x -= c * y;
        }
    }
    let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > GS_TOL).then(|| w.iter().map(|x| x / n).collect())
}

pub fn degeneracy_check(model: &EnvironmentModel, d_hat: &[Vec<f64>]) -> DegeneracyReport {
    let steps = model.annealed().steps().to_vec();
    let mut span: Vec<Vec<f64>> = Vec::new();
    for x in &steps {
        for y in &steps {
            let diff = lattice::to_f64(&lattice::sub(x, y));
            if let Some(u) = orthogonalize(&span, &diff) {
                span.push(u);
            }
        }
    }
    let mut all = span.clone();
    let mut complement = Vec::new();
    for i in 0..model.d {
        let e = lattice::to_f64(&lattice::unit(model.d, i));
        if let Some(u) = orthogonalize(&all, &e) {
            all.push(u.clone());
            complement.push(u);
        }
    }
    let quadratic = complement
        .iter()
        .map(|u| {
            (0..u.len())
                .map(|i| (0..u.len()).map(|j| u[i] * d_hat[i][j] * u[j]).sum::<f64>())
                .sum()
        })
        .collect();
    DegeneracyReport {
        span_basis: span,
        complement,
        quadratic,
    }
}
