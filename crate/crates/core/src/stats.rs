//! Summary statistics and Kolmogorov–Smirnov tests.

use statrs::distribution::{ContinuousCDF, Normal};

/// Sample mean and standard error (sample SD / √n).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

pub fn mean_se(xs: &[f64]) -> MeanSe {
    let n = xs.len();
    if n == 0 {
        return MeanSe { mean: f64::NAN, se: f64::NAN, n };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let se = if n > 1 {
        (sample_variance_about(xs, mean) / n as f64).sqrt()
    } else {
        f64::NAN
    };
    MeanSe { mean, se, n }
}

fn sample_variance_about(xs: &[f64], mean: f64) -> f64 {
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Unbiased sample variance with a delta-method standard error
/// `sqrt((m4 − s⁴(n−3)/(n−1)) / n)`.
pub fn variance_se(xs: &[f64]) -> MeanSe {
    let n = xs.len();
    if n < 4 {
        return MeanSe { mean: f64::NAN, se: f64::NAN, n };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let s2 = sample_variance_about(xs, mean);
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n as f64;
    let nf = n as f64;
    let var_of_s2 = ((m4 - s2 * s2 * (nf - 3.0) / (nf - 1.0)) / nf).max(0.0);
    MeanSe { mean: s2, se: var_of_s2.sqrt(), n }
}

/// Sample skewness with its large-sample standard error √(6/n).
pub fn skewness(xs: &[f64]) -> MeanSe {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n as f64;
    MeanSe {
        mean: m3 / m2.powf(1.5),
        se: (6.0 / n as f64).sqrt(),
        n,
    }
}

/// Proportion with binomial standard error.
pub fn proportion(successes: usize, n: usize) -> MeanSe {
    let p = successes as f64 / n as f64;
    MeanSe {
        mean: p,
        se: (p * (1.0 - p) / n as f64).sqrt(),
        n,
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").cdf(x)
}

/// Kolmogorov survival function Q(λ) = 2 Σ_{k≥1} (−1)^{k−1} e^{−2k²λ²}.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Result of a Kolmogorov–Smirnov test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// p-value for statistic `d` with effective sample size `n_eff`, using
/// Stephens' finite-sample correction.
fn ks_p_value(d: f64, n_eff: f64) -> f64 {
    let root = n_eff.sqrt();
    kolmogorov_q((root + 0.12 + 0.11 / root) * d)
}

/// One-sample KS test against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> KsResult {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    KsResult {
        statistic: d,
        p_value: ks_p_value(d, n),
    }
}

/// Two-sample KS test. Ties are handled by advancing both samples past
/// equal values before comparing the empirical CDFs.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = xs[i].min(ys[j]);
        while i < n && xs[i] <= v {
            i += 1;
        }
        while j < m && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let n_eff = (n * m) as f64 / (n + m) as f64;
    KsResult {
        statistic: d,
        p_value: ks_p_value(d, n_eff),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{replicate_rng, uniform};

    #[test]
    fn mean_and_se() {
        let r = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(r.mean, 2.5);
        assert!((r.se - (1.666_666_666_666_666_7f64 / 4.0).sqrt()).abs() < 1e-12);
        let v = variance_se(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!((v.mean - 2.5).abs() < 1e-12);
    }

    #[test]
    fn kolmogorov_tail_values() {
        // reference values of the limiting distribution
        assert!((kolmogorov_q(1.36) - 0.0494).abs() < 1e-3);
        assert!((kolmogorov_q(1.63) - 0.0098).abs() < 1e-3);
        assert_eq!(kolmogorov_q(0.1), 1.0);
    }

    #[test]
    fn uniform_sample_passes_and_shifted_fails() {
        let mut rng = replicate_rng(4, 0);
        let xs: Vec<f64> = (0..5000).map(|_| uniform(&mut rng)).collect();
        let ok = ks_one_sample(&xs, |x| x.clamp(0.0, 1.0));
        assert!(ok.p_value > 0.001);
        let bad = ks_one_sample(&xs, |x| (x * 1.2).clamp(0.0, 1.0));
        assert!(bad.p_value < 1e-6);
    }

    #[test]
    fn two_sample_same_and_different() {
        let mut rng = replicate_rng(5, 0);
        let a: Vec<f64> = (0..3000).map(|_| uniform(&mut rng)).collect();
        let b: Vec<f64> = (0..3000).map(|_| uniform(&mut rng)).collect();
        assert!(ks_two_sample(&a, &b).p_value > 0.001);
        let c: Vec<f64> = b.iter().map(|x| x * x).collect();
        assert!(ks_two_sample(&a, &c).p_value < 1e-6);
        // discrete samples with ties
        let d: Vec<f64> = (0..100).map(|i| (i % 3) as f64).collect();
        assert_eq!(ks_two_sample(&d, &d).statistic, 0.0);
    }

    #[test]
    fn two_point_law_fails_normality() {
        let xs: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!(ks_one_sample(&xs, normal_cdf).p_value < 1e-10);
    }
}
