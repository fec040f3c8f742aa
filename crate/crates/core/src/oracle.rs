//! Reference implementations: exhaustive definitions of the regeneration
//! detectors and brute-force renewal moments.

use num_traits::{FromPrimitive, Num};

use crate::pair::{common_regenerations, PairPath};
use crate::regen::{detect_regenerations, Confirm};
use crate::walk::{beta, level_hit, running_max, Frame, LevelMode, Path};

/// Regeneration times for a = 1: strict fresh maximum and no later level below it.
pub fn characterization(levels: &[i64]) -> Vec<usize> {
    (1..levels.len()).filter(|&t| regenerates_at(levels, t)).collect()
}

pub fn regenerates_at(levels: &[i64], t: usize) -> bool {
    levels[..t].iter().all(|&l| l < levels[t]) && levels[t..].iter().all(|&l| l >= levels[t])
}

/// The regeneration iteration transcribed with walk stopping times on shifted paths.
pub fn literal_regenerations(path: &Path, a: i64) -> Vec<usize> {
    let mut times = Vec::new();
    let mut base = 0;
    loop {
        let p = path.suffix(base);
        let Some(mut s) = level_hit(&p, a, LevelMode::Relative) else {
            return times;
        };
        loop {
            let q = p.suffix(s);
            match beta(&q) {
                None => {
                    base += s;
                    times.push(base);
                    break;
                }
                Some(b) => {
                    let m = running_max(&q, b, Frame::Relative).expect("b within path");
                    match level_hit(&q, m + a, LevelMode::Relative) {
                        Some(l) => s += l,
                        None => return times,
                    }
                }
            }
        }
    }
}

/// First pair of the common-regeneration construction, transcribed on shifted paths.
pub fn literal_mu1(x: &Path, xt: &Path) -> Option<(usize, usize)> {
    let fresh = |x: &Path, xt: &Path| -> Option<(usize, usize)> {
        let lo = x.levels()[0].min(xt.levels()[0]);
        let hi = *x.levels().iter().chain(xt.levels()).max().expect("non-empty");
        (lo + 1..=hi).find_map(|l| {
            let g = level_hit(x, l, LevelMode::Absolute)?;
            let gt = level_hit(xt, l, LevelMode::Absolute)?;
            (x.levels()[g] == l && xt.levels()[gt] == l).then_some((g, gt))
        })
    };
    // Ok(None): neither walk drops; Err: the path ends first
    let nu1 = |x: &Path, xt: &Path| -> Result<Option<(usize, usize)>, ()> {
        let r = match (beta(x), beta(xt)) {
            (None, None) => return Ok(None),
            (Some(a), None) | (None, Some(a)) => a,
            (Some(a), Some(b)) => a.min(b),
        };
        let m = running_max(x, r, Frame::Absolute)
            .map_err(|_| ())?
            .max(running_max(xt, r, Frame::Absolute).map_err(|_| ())?);
        let rho = level_hit(x, m, LevelMode::AbsoluteStrict).ok_or(())?;
        let rho_t = level_hit(xt, m, LevelMode::AbsoluteStrict).ok_or(())?;
        let (g, gt) = fresh(&x.suffix(rho), &xt.suffix(rho_t)).ok_or(())?;
        Ok(Some((rho + g, rho_t + gt)))
    };
    let (mut i, mut j) = fresh(x, xt)?;
    loop {
        match nu1(&x.suffix(i), &xt.suffix(j)) {
            Ok(None) => return Some((i, j)),
            Ok(Some((a, b))) => {
                i += a;
                j += b;
            }
            Err(()) => return None,
        }
    }
}

pub fn literal_pairs(x: &Path, xt: &Path) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while let Some((a, b)) = literal_mu1(&x.suffix(i), &xt.suffix(j)) {
        i += a;
        j += b;
        out.push((i, j));
    }
    out
}

/// All level sequences from 0 with up to `max_len` increments drawn from `incs`.
pub fn level_paths(max_len: usize, incs: [i64; 2]) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    for len in 0..=max_len {
        for mask in 0u32..(1 << len) {
            let mut lv = vec![0i64];
            for k in 0..len {
                lv.push(lv[k] + incs[((mask >> k) & 1) as usize]);
            }
            out.push(lv);
        }
    }
    out
}

pub const TWO_STEP_SUPPORTS: [[i64; 2]; 3] = [[1, -1], [2, -1], [1, 0]];

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OracleTally {
    pub checked: usize,
    pub mismatches: Vec<String>,
}

/// Compares the single-walk detector with both references on every path
/// of length ≤ `max_len`, for a = 1..=3.
pub fn regen_tally(max_len: usize) -> OracleTally {
    let mut t = OracleTally::default();
    for incs in TWO_STEP_SUPPORTS {
        for lv in level_paths(max_len, incs) {
            let p = Path::from_levels(&lv);
            let rec = detect_regenerations(&p, 1, Confirm::ToEnd).expect("valid input");
            if rec.times != characterization(&lv) || rec.censored_tail {
                t.mismatches.push(format!("characterization {lv:?}"));
            }
            for a in 1..=3 {
                let rec = detect_regenerations(&p, a, Confirm::ToEnd).expect("valid input");
                if rec.times != literal_regenerations(&p, a) {
                    t.mismatches.push(format!("a={a} {lv:?}"));
                }
            }
            t.checked += 1;
        }
    }
    t
}

/// Compares the pair detector with the transcription on every pair of
/// paths of length ≤ `max_len`, and checks the regeneration property at
/// each reported pair. Also returns how often the first reported pair is
/// not the earliest level with the property.
pub fn pair_tally(max_len: usize) -> (OracleTally, usize) {
    let mut t = OracleTally::default();
    let mut gap = 0;
    for incs in TWO_STEP_SUPPORTS {
        let paths: Vec<Path> = level_paths(max_len, incs).iter().map(|lv| Path::from_levels(lv)).collect();
        for a in &paths {
            for b in &paths {
                let rec = common_regenerations(&PairPath { x: a.clone(), xt: b.clone() }, Confirm::ToEnd).expect("valid input");
                if rec.pairs != literal_pairs(a, b) {
                    t.mismatches.push(format!("{:?} {:?}", a.levels(), b.levels()));
                }
                for &(i, j) in &rec.pairs {
                    if a.levels()[i] != b.levels()[j] || !regenerates_at(a.levels(), i) || !regenerates_at(b.levels(), j) {
                        t.mismatches.push(format!("property at ({i}, {j}) {:?} {:?}", a.levels(), b.levels()));
                    }
                }
                if let Some(&(i, _)) = rec.pairs.first() {
                    let earliest = (1..=i).find(|&s| {
                        let l = a.levels()[s];
                        regenerates_at(a.levels(), s) && b.levels().iter().position(|&v| v == l).is_some_and(|u| regenerates_at(b.levels(), u))
                    });
                    if earliest != Some(i) {
                        gap += 1;
                    }
                }
                t.checked += 1;
            }
        }
    }
    (t, gap)
}

/// E[B_n^p] by summing over every renewal sequence up to the first epoch ≥ n.
pub fn forward_time_moment<T>(law: &[T], n: usize, p: u32) -> T
where
    T: Num + Clone + FromPrimitive,
{
    fn go<T: Num + Clone + FromPrimitive>(law: &[T], pos: usize, n: usize, p: u32, w: T) -> T {
        if pos >= n {
            return w * num_traits::pow(T::from_usize(pos - n).expect("representable"), p as usize);
        }
        let mut acc = T::zero();
        for (i, q) in law.iter().enumerate() {
            if !q.is_zero() {
                acc = acc + go(law, pos + i + 1, n, p, w.clone() * q.clone());
            }
        }
        acc
    }
    go(law, 0, n, p, T::one())
}
