//! Lattice points of Z^d.

use smallvec::SmallVec;

/// An owned lattice point. Inline for d ≤ 4.
pub type Site = SmallVec<[i64; 4]>;

pub fn origin(d: usize) -> Site {
    SmallVec::from_elem(0, d)
}

/// Unit vector e_i (zero-based `i`).
pub fn unit(d: usize, i: usize) -> Site {
    let mut s = origin(d);
    s[i] = 1;
    s
}

pub fn site(coords: &[i64]) -> Site {
    SmallVec::from_slice(coords)
}

#[inline]
pub fn dot(a: &[i64], b: &[i64]) -> i64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn add(a: &[i64], b: &[i64]) -> Site {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

#[inline]
pub fn sub(a: &[i64], b: &[i64]) -> Site {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn norm(a: &[i64]) -> f64 {
    (a.iter().map(|x| (x * x) as f64).sum::<f64>()).sqrt()
}

pub fn neg(a: &[i64]) -> Site {
    a.iter().map(|x| -x).collect()
}

pub fn to_f64(a: &[i64]) -> Vec<f64> {
    a.iter().map(|&x| x as f64).collect()
}
