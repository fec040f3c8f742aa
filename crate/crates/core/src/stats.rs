//! Estimators, fits and goodness-of-fit tests shared by the experiments.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::rng::StreamKey;

pub const DEFAULT_BATCHES: usize = 32;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; 0 for fewer than two points.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Splits a sequence into at most `batches` consecutive equal blocks and
/// returns the block means. A remainder shorter than one block is dropped.
pub fn batch_means(xs: &[f64], batches: usize) -> Vec<f64> {
    let b = batches.min(xs.len()).max(1);
    let size = xs.len() / b;
    if size == 0 {
        return Vec::new();
    }
    xs.chunks_exact(size).take(b).map(mean).collect()
}

/// Standard error of the mean from nonoverlapping batch means.
pub fn batch_se(xs: &[f64], batches: usize) -> f64 {
    let bm = batch_means(xs, batches);
    (variance(&bm) / bm.len() as f64).sqrt()
}

/// Ratio Σnum/Σden with a delta-method standard error computed from
/// batch means of the linearized residual num − r·den.
pub fn ratio_with_se(num: &[f64], den: &[f64], batches: usize) -> (f64, f64) {
    let r = num.iter().sum::<f64>() / den.iter().sum::<f64>();
    let dbar = mean(den);
    let resid: Vec<f64> = num.iter().zip(den).map(|(x, t)| (x - r * t) / dbar).collect();
    (r, batch_se(&resid, batches))
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Lag-1 sample autocorrelation.
pub fn lag1_autocorrelation(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let c0: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    if c0 == 0.0 {
        return 0.0;
    }
    let c1: f64 = xs.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    c1 / c0
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub ci95: (f64, f64),
    pub residuals: Vec<f64>,
    pub r_squared: f64,
    pub points: usize,
}

impl FitResult {
    pub fn upper(&self) -> f64 {
        self.ci95.1
    }

    pub fn lower(&self) -> f64 {
        self.ci95.0
    }
}

/// Least squares line with an HC1 heteroskedasticity-robust slope standard
/// error and a Student-t 95% interval.
pub fn fit_linear(x: &[f64], y: &[f64]) -> Result<FitResult> {
    let n = x.len();
    if n < 3 || y.len() != n {
        return Err(Error::InsufficientData(format!("linear fit needs at least 3 points, got {n}")));
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("abscissae are all equal".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - intercept - slope * a).collect();
    let meat: f64 = x.iter().zip(&residuals).map(|(a, e)| (a - mx).powi(2) * e * e).sum();
    let slope_se = (n as f64 / (n - 2) as f64 * meat).sqrt() / sxx;
    let t = StudentsT::new(0.0, 1.0, (n - 2) as f64)
        .expect("valid degrees of freedom")
        .inverse_cdf(0.975);
    let ss_res: f64 = residuals.iter().map(|e| e * e).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    Ok(FitResult {
        slope,
        intercept,
        slope_se,
        ci95: (slope - t * slope_se, slope + t * slope_se),
        residuals,
        r_squared: if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot },
        points: n,
    })
}

/// Fits log y = intercept + slope·log x.
pub fn fit_loglog(points: &[(f64, f64)]) -> Result<FitResult> {
    if points.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "log-log fit needs at least 4 points, got {}",
            points.len()
        )));
    }
    for (index, &(x, y)) in points.iter().enumerate() {
        if !(x > 0.0) {
            return Err(Error::NonPositive { index, value: x });
        }
        if !(y > 0.0) {
            return Err(Error::NonPositive { index, value: y });
        }
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    fit_linear(&lx, &ly)
}

/// Log-linear rate fit: events_i ~ Binomial(trials_i, p_i) with
/// log p_i = a + b·x_i, by Newton iteration on the Poisson-approximate
/// likelihood. Zero counts are allowed. The interval is Wald.
pub fn fit_log_rate(x: &[f64], events: &[u64], trials: &[u64]) -> Result<FitResult> {
    let n = x.len();
    if n < 2 || events.len() != n || trials.len() != n {
        return Err(Error::InsufficientData("rate fit needs at least 2 groups".into()));
    }
    if events.iter().all(|&e| e == 0) {
        return Err(Error::InsufficientData("no events observed".into()));
    }
    let total_e: f64 = events.iter().map(|&e| e as f64).sum();
    let total_t: f64 = trials.iter().map(|&t| t as f64).sum();
    let (mut a, mut b) = ((total_e / total_t).ln(), 0.0);
    let mut info = [[0.0; 2]; 2];
    for _ in 0..200 {
        let mut g = [0.0; 2];
        info = [[0.0; 2]; 2];
        for i in 0..n {
            let mu = trials[i] as f64 * (a + b * x[i]).exp();
            let r = events[i] as f64 - mu;
            g[0] += r;
            g[1] += r * x[i];
            info[0][0] += mu;
            info[0][1] += mu * x[i];
            info[1][1] += mu * x[i] * x[i];
        }
        info[1][0] = info[0][1];
        let det = info[0][0] * info[1][1] - info[0][1] * info[1][0];
        if det.abs() < 1e-300 {
            return Err(Error::InsufficientData("singular information matrix".into()));
        }
        let da = (info[1][1] * g[0] - info[0][1] * g[1]) / det;
        let db = (info[0][0] * g[1] - info[1][0] * g[0]) / det;
        // Damped steps keep the iteration stable when some groups have no events.
        let scale = 1.0f64.min(5.0 / (da.abs() + db.abs()).max(1e-300));
        a += scale * da;
        b += scale * db;
        if (da.abs() + db.abs()) < 1e-12 {
            break;
        }
    }
    let det = info[0][0] * info[1][1] - info[0][1] * info[1][0];
    let slope_se = (info[0][0] / det).sqrt();
    let residuals = (0..n)
        .map(|i| events[i] as f64 - trials[i] as f64 * (a + b * x[i]).exp())
        .collect();
    Ok(FitResult {
        slope: b,
        intercept: a,
        slope_se,
        ci95: (b - 1.96 * slope_se, b + 1.96 * slope_se),
        residuals,
        r_squared: f64::NAN,
        points: n,
    })
}

/// Asymptotic Kolmogorov survival function P(K > λ).
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF, with
/// Stephens' small-sample correction of the scaling.
pub fn ks_test<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> KsResult {
    let xs = sorted(samples);
    let n = xs.len();
    let nf = n as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / nf).max((i + 1) as f64 / nf - f);
    }
    let sn = nf.sqrt();
    KsResult {
        statistic: d,
        p_value: kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d),
        n,
    }
}

/// Chi-square test of homogeneity for two count vectors over the same
/// categories; categories empty in both samples are ignored.
pub fn chi2_homogeneity(a: &[u64], b: &[u64]) -> (f64, f64) {
    let na: f64 = a.iter().sum::<u64>() as f64;
    let nb: f64 = b.iter().sum::<u64>() as f64;
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        let tot = (x + y) as f64;
        if tot == 0.0 {
            continue;
        }
        cells += 1;
        let ea = tot * na / (na + nb);
        let eb = tot * nb / (na + nb);
        stat += (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb;
    }
    if cells < 2 {
        return (0.0, 1.0);
    }
    let p = 1.0 - ChiSquared::new((cells - 1) as f64).expect("positive dof").cdf(stat);
    (stat, p)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailFit {
    /// Decay rate λ̂ of P(T > t) ≈ C e^{−λt}; infinite when degenerate.
    pub rate: f64,
    pub ci95: (f64, f64),
    pub degenerate: bool,
    pub samples: usize,
}

const TAIL_BOOTSTRAP: usize = 200;

fn tail_slope(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len() as f64;
    let lo = quantile(sorted, 0.5);
    let hi = quantile(sorted, 0.99);
    let collect = |lo: f64, hi: f64| {
        let mut pts = Vec::new();
        let mut i = 0;
        while i < sorted.len() {
            let t = sorted[i];
            let mut j = i;
            while j < sorted.len() && sorted[j] == t {
                j += 1;
            }
            let surv = (sorted.len() - j) as f64 / n;
            if t >= lo && t <= hi && surv > 0.0 {
                pts.push((t, surv.ln()));
            }
            i = j;
        }
        pts
    };
    let mut pts = collect(lo, hi);
    if pts.len() < 2 {
        pts = collect(f64::NEG_INFINITY, f64::INFINITY);
    }
    if pts.len() < 2 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(-sxy / sxx)
}

/// Exponential tail rate from the log empirical survival between the
/// median and the 99% quantile, with a seeded bootstrap percentile interval.
pub fn tail_fit(samples: &[f64], seed: u64) -> Result<TailFit> {
    if samples.len() < 50 {
        return Err(Error::InsufficientData(format!(
            "tail fit needs at least 50 samples, got {}",
            samples.len()
        )));
    }
    let xs = sorted(samples);
    let Some(rate) = tail_slope(&xs) else {
        return Ok(TailFit {
            rate: f64::INFINITY,
            ci95: (f64::INFINITY, f64::INFINITY),
            degenerate: true,
            samples: xs.len(),
        });
    };
    let mut rng = StreamKey::new(seed, "tail-bootstrap").stream();
    let mut boots = Vec::with_capacity(TAIL_BOOTSTRAP);
    let mut buf = vec![0.0; xs.len()];
    for _ in 0..TAIL_BOOTSTRAP {
        for b in buf.iter_mut() {
            *b = xs[rng.below(xs.len())];
        }
        buf.sort_by(f64::total_cmp);
        boots.push(tail_slope(&buf).unwrap_or(f64::INFINITY));
    }
    let boots = sorted(&boots);
    Ok(TailFit {
        rate,
        ci95: (quantile(&boots, 0.025), quantile(&boots, 0.975)),
        degenerate: false,
        samples: xs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_means_and_ratio() {
        let xs: Vec<f64> = (0..64).map(|i| i as f64).collect();
        assert_eq!(batch_means(&xs, 32).len(), 32);
        let (r, se) = ratio_with_se(&[2.0; 40], &[1.0; 40], 32);
        assert_eq!((r, se), (2.0, 0.0));
    }

    #[test]
    fn quantiles() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&s, 0.0), 1.0);
        assert_eq!(quantile(&s, 1.0), 4.0);
        assert!((quantile(&s, 0.5) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn loglog_exact_square() {
        let pts: Vec<(f64, f64)> = (1..=6).map(|i| (i as f64, (i * i) as f64)).collect();
        let f = fit_loglog(&pts).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!(f.ci95.1 - f.ci95.0 < 1e-9);
    }

    #[test]
    fn loglog_constant() {
        let pts: Vec<(f64, f64)> = (1..=5).map(|i| (i as f64, 7.0)).collect();
        assert!(fit_loglog(&pts).unwrap().slope.abs() < 1e-12);
    }

    #[test]
    fn loglog_noisy_power() {
        let mut rng = StreamKey::new(11, "noise").stream();
        let pts: Vec<(f64, f64)> = (4..=14)
            .map(|k| {
                let x = 2f64.powi(k);
                (x, x.powf(0.8) * (1.0 + 0.01 * (2.0 * rng.uniform() - 1.0)))
            })
            .collect();
        let f = fit_loglog(&pts).unwrap();
        assert!((0.75..=0.85).contains(&f.slope), "{}", f.slope);
        assert!(f.ci95.0 <= f.slope && f.slope <= f.ci95.1);
    }

    #[test]
    fn loglog_rejects_nonpositive() {
        let pts = [(1.0, 1.0), (2.0, 0.0), (3.0, 1.0), (4.0, 1.0)];
        assert!(matches!(fit_loglog(&pts), Err(Error::NonPositive { index: 1, .. })));
        assert!(fit_loglog(&pts[..3]).is_err());
    }

    #[test]
    fn kolmogorov_known_values() {
        // Classical critical values: P(K > 1.3581) = 0.05, P(K > 1.6276) = 0.01.
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_sf(1.6276) - 0.01).abs() < 1e-3);
    }

    #[test]
    fn ks_uniform() {
        let mut rng = StreamKey::new(2, "ks").stream();
        let xs: Vec<f64> = (0..2000).map(|_| rng.uniform()).collect();
        assert!(ks_test(&xs, |x| x.clamp(0.0, 1.0)).p_value > 0.001);
        let ys: Vec<f64> = xs.iter().map(|x| x * x).collect();
        assert!(ks_test(&ys, |x| x.clamp(0.0, 1.0)).p_value < 1e-6);
    }

    #[test]
    fn geometric_tail_rate() {
        let mut rng = StreamKey::new(5, "geo").stream();
        let xs: Vec<f64> = (0..10_000)
            .map(|_| {
                let mut k = 1.0;
                while rng.uniform() >= 0.5 {
                    k += 1.0;
                }
                k
            })
            .collect();
        let f = tail_fit(&xs, 1).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!(f.ci95.0 <= ln2 && ln2 <= f.ci95.1, "{f:?}");
    }

    #[test]
    fn tail_fit_degenerate_and_small() {
        let f = tail_fit(&[3.0; 60], 1).unwrap();
        assert!(f.degenerate && f.rate.is_infinite());
        assert!(tail_fit(&[1.0; 10], 1).is_err());
    }

    #[test]
    fn log_rate_recovers_slope() {
        let x = [2.0, 4.0, 8.0, 16.0];
        let trials = [100_000u64; 4];
        let events: Vec<u64> = x.iter().map(|&v: &f64| (1e5 * (-1.0 - 0.3 * v).exp()).round() as u64).collect();
        let f = fit_log_rate(&x, &events, &trials).unwrap();
        assert!((f.slope + 0.3).abs() < 0.02, "{f:?}");
        assert!(f.ci95.1 < 0.0);
    }

    #[test]
    fn chi2_same_counts() {
        let (s, p) = chi2_homogeneity(&[10, 20, 30], &[10, 20, 30]);
        assert_eq!(s, 0.0);
        assert!((p - 1.0).abs() < 1e-12);
    }
}
