//! Ensemble summaries, stopping-time analysis and ratio diagnostics.

use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{Error, Result};
use crate::estimate::{predict_counts, CountCurves};
use crate::model::Theta;
use crate::sim::{PartialTrajectory, Trajectory};

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// Sample mean, unbiased variance and Pearson correlation of `X(t)` on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMoments {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// `None` where either time has zero variance.
    pub correlation: Vec<Vec<Option<f64>>>,
}

pub fn empirical_moments(ensemble: &[Trajectory], times: &[f64]) -> Result<EmpiricalMoments> {
    if ensemble.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 trajectories, got {}",
            ensemble.len()
        )));
    }
    if let Some(&t) = times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(Error::InvalidInput(format!("grid time {t} must be finite and >= 0")));
    }
    let n = ensemble.len() as f64;
    let values: Vec<Vec<f64>> = ensemble
        .iter()
        .map(|tr| times.iter().map(|&t| tr.viable_at(t) as f64).collect())
        .collect();
    let k = times.len();
    let mean: Vec<f64> = (0..k).map(|j| values.iter().map(|v| v[j]).sum::<f64>() / n).collect();
    let cov = |a: usize, b: usize| {
        values.iter().map(|v| (v[a] - mean[a]) * (v[b] - mean[b])).sum::<f64>() / (n - 1.0)
    };
    let variance: Vec<f64> = (0..k).map(|j| cov(j, j)).collect();
    let mut correlation = vec![vec![None; k]; k];
    for a in 0..k {
        for b in a..k {
            if variance[a] > 0.0 && variance[b] > 0.0 {
                let rho = if a == b { 1.0 } else { (cov(a, b) / (variance[a] * variance[b]).sqrt()).clamp(-1.0, 1.0) };
                correlation[a][b] = Some(rho);
                correlation[b][a] = Some(rho);
            }
        }
    }
    Ok(EmpiricalMoments { times: times.to_vec(), mean, variance, correlation })
}

/// Extinction times shifted by a lower bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingSample {
    pub raw: Vec<f64>,
    pub shift: f64,
    pub shifted: Vec<f64>,
}

impl StoppingSample {
    pub fn new(raw: Vec<f64>, shift: f64) -> Result<Self> {
        let shifted: Vec<f64> = raw.iter().map(|t| t - shift).collect();
        if let Some((i, &t)) = raw.iter().enumerate().find(|(_, &t)| !(t - shift > 0.0)) {
            return Err(Error::DegenerateSample(format!(
                "extinction time {t} (index {i}) does not exceed the shift {shift}"
            )));
        }
        Ok(Self { raw, shift, shifted })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseGaussianFit {
    pub mu: f64,
    pub lambda: f64,
    pub n: usize,
}

/// Maximum-likelihood inverse-Gaussian fit.
pub fn ig_mle(values: &[f64]) -> Result<InverseGaussianFit> {
    let n = values.len();
    if n < 2 {
        return Err(Error::DegenerateSample(format!("need at least 2 values, got {n}")));
    }
    if let Some(&x) = values.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(Error::DegenerateSample(format!("value {x} is outside (0, inf)")));
    }
    let mu = values.iter().sum::<f64>() / n as f64;
    let s: f64 = values.iter().map(|x| 1.0 / x - 1.0 / mu).sum();
    if !(s > 0.0) {
        return Err(Error::DegenerateSample("all values equal, shape estimate is infinite".into()));
    }
    Ok(InverseGaussianFit { mu, lambda: n as f64 / s, n })
}

pub fn ig_logpdf(fit: &InverseGaussianFit, x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NEG_INFINITY;
    }
    let (mu, lam) = (fit.mu, fit.lambda);
    0.5 * (lam / (2.0 * std::f64::consts::PI * x.powi(3))).ln() - lam * (x - mu).powi(2) / (2.0 * mu * mu * x)
}

pub fn ig_pdf(fit: &InverseGaussianFit, x: f64) -> f64 {
    ig_logpdf(fit, x).exp()
}

pub fn ig_loglik(fit: &InverseGaussianFit, values: &[f64]) -> f64 {
    values.iter().map(|&x| ig_logpdf(fit, x)).sum()
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / SQRT_2PI
}

/// `Φ(-z) / φ(z)` for `z >= 0`.
fn mills_ratio(z: f64) -> f64 {
    if z < 8.0 {
        return 0.5 * erfc(z / std::f64::consts::SQRT_2) / std_normal_pdf(z);
    }
    // continued fraction z + 1/(z + 2/(z + 3/(z + ...))), evaluated backwards
    let mut tail = z;
    for k in (1..=60).rev() {
        tail = z + k as f64 / tail;
    }
    1.0 / tail
}

/// Inverse-Gaussian CDF. The exponentially scaled second term is folded
/// into a Mills ratio so it cannot overflow.
pub fn ig_cdf(fit: &InverseGaussianFit, x: f64) -> f64 {
    if !(x > 0.0) {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    let s = (fit.lambda / x).sqrt();
    let z1 = s * (x / fit.mu - 1.0);
    let z2 = s * (x / fit.mu + 1.0);
    (std_normal_cdf(z1) + std_normal_pdf(z1) * mills_ratio(z2)).clamp(0.0, 1.0)
}

/// Quantile by bisection on the CDF.
pub fn ig_quantile(fit: &InverseGaussianFit, p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile level {p} outside (0, 1)");
    let mut lo = 0.0;
    let mut hi = fit.mu.max(1e-300);
    while ig_cdf(fit, hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if ig_cdf(fit, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

const MIN_TEST_SIZE: usize = 5;

fn sorted_cdf(values: &[f64], fit: &InverseGaussianFit) -> Result<Vec<f64>> {
    if values.len() < MIN_TEST_SIZE {
        return Err(Error::DegenerateSample(format!(
            "need at least {MIN_TEST_SIZE} values, got {}",
            values.len()
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted.into_iter().map(|x| ig_cdf(fit, x)).collect())
}

/// Kolmogorov-Smirnov test against a fitted inverse Gaussian, with the
/// asymptotic Kolmogorov p-value of `√n D`.
pub fn ks_test(values: &[f64], fit: &InverseGaussianFit) -> Result<TestResult> {
    let f = sorted_cdf(values, fit)?;
    let n = f.len() as f64;
    let d = f
        .iter()
        .enumerate()
        .map(|(i, &fi)| ((i + 1) as f64 / n - fi).max(fi - i as f64 / n))
        .fold(0.0, f64::max);
    Ok(TestResult { statistic: d, p_value: kolmogorov_sf(n.sqrt() * d) })
}

/// `P(K > x)` for the Kolmogorov distribution.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.0 {
        // P(K <= x) = √(2π)/x Σ exp(-(2k-1)² π² / (8x²))
        let a = std::f64::consts::PI.powi(2) / (8.0 * x * x);
        let cdf: f64 = (1..=20)
            .map(|k| (-((2 * k - 1) as f64).powi(2) * a).exp())
            .sum::<f64>()
            * SQRT_2PI
            / x;
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Anderson-Darling test against a fitted inverse Gaussian. The p-value
/// uses Marsaglia's asymptotic approximation with its finite-n correction.
pub fn ad_test(values: &[f64], fit: &InverseGaussianFit) -> Result<TestResult> {
    let f = sorted_cdf(values, fit)?;
    if let Some(&v) = f.iter().find(|&&v| v <= 0.0 || v >= 1.0) {
        return Err(Error::DegenerateSample(format!(
            "fitted CDF value {v} at a sample point makes the statistic infinite"
        )));
    }
    let n = f.len();
    let s: f64 = (0..n)
        .map(|i| (2 * i + 1) as f64 * (f[i].ln() + (1.0 - f[n - 1 - i]).ln()))
        .sum();
    let a2 = -(n as f64) - s / n as f64;
    Ok(TestResult { statistic: a2, p_value: ad_sf(a2, n) })
}

/// Upper-tail probability of the Anderson-Darling statistic for sample size `n`.
pub fn ad_sf(a2: f64, n: usize) -> f64 {
    if a2 <= 0.0 {
        return 1.0;
    }
    let x = ad_inf(a2);
    (1.0 - (x + ad_errfix(n as f64, x))).clamp(0.0, 1.0)
}

fn ad_inf(z: f64) -> f64 {
    if z < 2.0 {
        (-1.2337141 / z).exp() / z.sqrt()
            * (2.00012
                + (0.247105 - (0.0649821 - (0.0347962 - (0.011672 - 0.00168691 * z) * z) * z) * z) * z)
    } else {
        (-(1.0776 - (2.30695 - (0.43424 - (0.082433 - (0.008056 - 0.0003146 * z) * z) * z) * z) * z).exp())
            .exp()
    }
}

fn ad_errfix(n: f64, x: f64) -> f64 {
    if x > 0.8 {
        return (-130.2137
            + (745.2337 - (1705.091 - (1950.646 - (1116.360 - 255.7844 * x) * x) * x) * x) * x)
            / n;
    }
    let c = 0.01265 + 0.1757 / n;
    if x < c {
        let t = x / c;
        let t = t.sqrt() * (1.0 - t) * (49.0 * t - 102.0);
        return t * (0.0037 / (n * n) + 0.00078 / n + 0.00006) / n;
    }
    let t = (x - c) / (0.8 - c);
    let t = -0.00022633
        + (6.54034 - (14.6538 - (14.458 - (8.259 - 1.91864 * t) * t) * t) * t) * t;
    t * (0.04213 + 0.01365 / n) / n
}

/// Observed over expected counts. `None` entries mark a non-positive
/// denominator; `None` series were not observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioCurves {
    pub times: Vec<f64>,
    pub x: Option<Vec<Option<f64>>>,
    pub z: Option<Vec<Option<f64>>>,
    pub m: Vec<Option<f64>>,
    pub y: Vec<Option<f64>>,
}

impl RatioCurves {
    /// `(name, values)` for every observed series, in `x, z, m, y` order.
    pub fn series(&self) -> Vec<(&'static str, &[Option<f64>])> {
        let mut out = Vec::with_capacity(4);
        if let Some(x) = &self.x {
            out.push(("x", x.as_slice()));
        }
        if let Some(z) = &self.z {
            out.push(("z", z.as_slice()));
        }
        out.push(("m", self.m.as_slice()));
        out.push(("y", self.y.as_slice()));
        out
    }
}

fn ratio(obs: &[f64], exp: &[f64]) -> Vec<Option<f64>> {
    obs.iter().zip(exp).map(|(&o, &e)| (e > 0.0).then(|| o / e)).collect()
}

pub fn ratio_curves(observed: &CountCurves, expected: &CountCurves) -> RatioCurves {
    let pair = |o: &Option<Vec<f64>>, e: &Option<Vec<f64>>| match (o, e) {
        (Some(o), Some(e)) => Some(ratio(o, e)),
        _ => None,
    };
    RatioCurves {
        times: observed.times.clone(),
        x: pair(&observed.x, &expected.x),
        z: pair(&observed.z, &expected.z),
        m: ratio(&observed.m, &expected.m),
        y: ratio(&observed.y, &expected.y),
    }
}

/// Per-trajectory ratio curves against the mean-field prediction under `theta`.
pub fn gof_ratios(ensemble: &[Trajectory], theta: &Theta, times: &[f64]) -> Result<Vec<RatioCurves>> {
    let mut cache: Option<(u64, CountCurves)> = None;
    ensemble
        .iter()
        .map(|tr| {
            let expected = cached_prediction(&mut cache, theta, tr.s0, times)?;
            Ok(ratio_curves(&CountCurves::from_trajectory(tr, times), expected))
        })
        .collect()
}

pub fn gof_ratios_partial(
    ensemble: &[PartialTrajectory],
    theta: &Theta,
    times: &[f64],
) -> Result<Vec<RatioCurves>> {
    let mut cache: Option<(u64, CountCurves)> = None;
    ensemble
        .iter()
        .map(|tr| {
            let expected = cached_prediction(&mut cache, theta, tr.m0, times)?;
            Ok(ratio_curves(&CountCurves::from_partial(tr, times), expected))
        })
        .collect()
}

fn cached_prediction<'a>(
    cache: &'a mut Option<(u64, CountCurves)>,
    theta: &Theta,
    s0: u64,
    times: &[f64],
) -> Result<&'a CountCurves> {
    if cache.as_ref().map(|c| c.0) != Some(s0) {
        *cache = Some((s0, predict_counts(theta, s0, times)?));
    }
    Ok(&cache.as_ref().expect("filled above").1)
}

/// Median of the finite entries, `None` when there are none.
pub fn median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Linear-interpolation percentile (`q` in `[0, 100]`) of the finite entries.
pub fn percentile(values: impl IntoIterator<Item = f64>, q: f64) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let pos = (q / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::EventKind;

    fn ig(mu: f64, lambda: f64) -> InverseGaussianFit {
        InverseGaussianFit { mu, lambda, n: 0 }
    }

    #[test]
    fn ig_mle_hand_example() {
        let f = ig_mle(&[1.0, 2.0, 3.0]).unwrap();
        assert!((f.mu - 2.0).abs() < 1e-15);
        assert!((f.lambda - 9.0).abs() < 1e-12);
        assert!(matches!(ig_mle(&[2.0, 2.0, 2.0]), Err(Error::DegenerateSample(_))));
        assert!(ig_mle(&[1.0]).is_err());
        assert!(ig_mle(&[1.0, -1.0]).is_err());
    }

    #[test]
    fn ig_cdf_reference_values() {
        // reference values from an independent implementation
        let cases = [
            (36.858, 586.698, 10.0, 1.8893971300659765e-08),
            (36.858, 586.698, 36.858, 0.5492455352199807),
            (36.858, 586.698, 80.0, 0.9995389862600446),
            (2.0, 0.5, 0.01, 1.9729490102619993e-12),
            (2.0, 0.5, 0.5, 0.4008143814660668),
            (2.0, 0.5, 3.0, 0.8343083811593116),
            (2.0, 0.5, 50.0, 0.9994874639168417),
            (1.0, 1e6, 1.0, 0.500199471090273),
        ];
        for (mu, lam, x, want) in cases {
            let got = ig_cdf(&ig(mu, lam), x);
            assert!((got - want).abs() <= 1e-12 + 1e-9 * want, "({mu}, {lam}, {x}): {got} vs {want}");
        }
        assert_eq!(ig_cdf(&ig(1.0, 1.0), 0.0), 0.0);
        assert_eq!(ig_cdf(&ig(1.0, 1.0), f64::INFINITY), 1.0);
    }

    #[test]
    fn mills_ratio_reference_values() {
        // 40-digit reference values
        for (z, want) in [(3.0, 0.30459029871010329573), (8.0, 0.12313196325793229628), (20.0, 0.049875925981836783658)] {
            let got = mills_ratio(z);
            assert!((got - want).abs() < 1e-13 * want, "z = {z}: {got} vs {want}");
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        let f = ig(3.0, 7.0);
        for p in [0.001, 0.1, 0.5, 0.9, 0.999] {
            assert!((ig_cdf(&f, ig_quantile(&f, p)) - p).abs() < 1e-12);
        }
    }

    #[test]
    fn kolmogorov_reference_values() {
        assert!((kolmogorov_sf(0.66) - 0.776363380087464).abs() < 1e-12);
        assert!((kolmogorov_sf(1.36) - 0.049485876755377876).abs() < 1e-12);
        assert!((kolmogorov_sf(0.2) - 0.999999999999495).abs() < 1e-12);
        // both series agree where they meet
        let (a, b) = (kolmogorov_sf(1.0 - 1e-12), kolmogorov_sf(1.0));
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn ad_tail_matches_table_value() {
        // A² = 0.588 with n = 100 corresponds to p = 0.658
        assert!((ad_sf(0.588, 100) - 0.658).abs() < 1.5e-3);
        assert!(ad_sf(10.0, 100) < 1e-4);
        assert_eq!(ad_sf(0.0, 10), 1.0);
    }

    #[test]
    fn tests_need_enough_points() {
        let f = ig(1.0, 1.0);
        assert!(ks_test(&[1.0, 2.0], &f).is_err());
        assert!(ad_test(&[1.0, 2.0, 3.0, 4.0], &f).is_err());
    }

    #[test]
    fn ad_rejects_cdf_at_one() {
        let f = ig(1.0, 1000.0);
        let values = [0.9, 1.0, 1.1, 1.05, 1e6];
        assert!(matches!(ad_test(&values, &f), Err(Error::DegenerateSample(_))));
    }

    #[test]
    fn stopping_sample_rejects_small_times() {
        assert!(StoppingSample::new(vec![3.0, 5.0], 2.0).is_ok());
        assert!(matches!(StoppingSample::new(vec![3.0, 2.0], 2.0), Err(Error::DegenerateSample(_))));
    }

    #[test]
    fn empirical_moments_degenerate_and_errors() {
        let tr = Trajectory::from_events(2, &[(1.0, EventKind::SymSelfRenew)]).unwrap();
        let m = empirical_moments(&[tr.clone(), tr.clone()], &[0.5, 1.0, 2.0]).unwrap();
        assert_eq!(m.mean, vec![2.0, 3.0, 3.0]);
        assert_eq!(m.variance, vec![0.0; 3]);
        assert!(m.correlation.iter().flatten().all(Option::is_none));
        assert!(empirical_moments(&[tr.clone()], &[1.0]).is_err());
        assert!(empirical_moments(&[tr.clone(), tr], &[-1.0]).is_err());
    }

    #[test]
    fn ratio_missing_on_zero_denominator() {
        let obs = CountCurves { times: vec![0.0, 1.0], x: Some(vec![2.0, 1.0]), z: Some(vec![0.0, 1.0]), m: vec![2.0, 2.0], y: vec![0.0, 3.0] };
        let exp = CountCurves { times: vec![0.0, 1.0], x: Some(vec![2.0, 2.0]), z: Some(vec![0.0, 0.0]), m: vec![2.0, 2.0], y: vec![0.0, 1.5] };
        let r = ratio_curves(&obs, &exp);
        assert_eq!(r.x.as_ref().unwrap(), &vec![Some(1.0), Some(0.5)]);
        assert_eq!(r.z.as_ref().unwrap(), &vec![None, None]);
        assert_eq!(r.y, vec![None, Some(2.0)]);
        let self_ratio = ratio_curves(&obs, &obs);
        assert_eq!(self_ratio.m, vec![Some(1.0), Some(1.0)]);
        assert_eq!(self_ratio.series().len(), 4);
    }

    #[test]
    fn percentiles() {
        assert_eq!(median([3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median([4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(std::iter::empty()), None);
        assert_eq!(percentile([0.0, 10.0], 25.0), Some(2.5));
        assert_eq!(percentile([5.0, f64::NAN], 90.0), Some(5.0));
    }
}
