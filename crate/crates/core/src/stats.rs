//! Summary statistics for Monte Carlo output: standard errors of correlated
//! series, effective sample size and goodness-of-fit tests.

use statrs::distribution::{ChiSquared, ContinuousCDF};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

/// Standard error of the mean of a correlated series by non-overlapping
/// batch means. Trailing samples that do not fill a batch are dropped.
pub fn batch_means_stderr(xs: &[f64], batches: usize) -> f64 {
    let batches = batches.max(2);
    let size = xs.len() / batches;
    if size == 0 {
        return (variance(xs) / xs.len().max(1) as f64).sqrt();
    }
    let means: Vec<f64> = xs.chunks_exact(size).take(batches).map(mean).collect();
    (variance(&means) / batches as f64).sqrt()
}

/// Effective sample size from Geyer's initial monotone sequence estimator
/// of the integrated autocorrelation time.
pub fn effective_sample_size(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return n as f64;
    }
    let m = mean(xs);
    let c0 = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return n as f64;
    }
    let autocorr = |lag: usize| -> f64 {
        xs[..n - lag]
            .iter()
            .zip(&xs[lag..])
            .map(|(a, b)| (a - m) * (b - m))
            .sum::<f64>()
            / n as f64
            / c0
    };
    // sum of adjacent pairs Gamma_k = rho(2k) + rho(2k+1), truncated at the
    // first non-positive pair and forced monotone
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = autocorr(2 * k) + autocorr(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        tau += 2.0 * pair;
        prev = pair;
        k += 1;
    }
    (n as f64 / tau.max(1.0 / n as f64)).min(n as f64)
}

/// Kolmogorov-Smirnov distance between the empirical law of `samples` and
/// a continuous CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of the one-sample KS statistic `d` at sample size `n`
/// (Kolmogorov series with Stephens' small-sample correction).
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = 2.0 * (-1.0f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Pearson chi-square statistic and its upper-tail p-value. Bins with an
/// expected count of zero must also be empty.
pub fn chi_square_test(observed: &[f64], expected: &[f64], fitted_params: usize) -> (f64, f64) {
    let mut stat = 0.0;
    let mut bins = 0usize;
    for (o, e) in observed.iter().zip(expected) {
        if *e > 0.0 {
            stat += (o - e) * (o - e) / e;
            bins += 1;
        } else if *o > 0.0 {
            return (f64::INFINITY, 0.0);
        }
    }
    let dof = bins.saturating_sub(1 + fitted_params).max(1) as f64;
    let p = ChiSquared::new(dof).map(|c| 1.0 - c.cdf(stat)).unwrap_or(0.0);
    (stat, p)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn iid_series_has_full_ess() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..20_000).map(|_| rng.random::<f64>()).collect();
        let ess = effective_sample_size(&xs);
        assert!(ess > 15_000.0, "ess {ess}");
        let se = batch_means_stderr(&xs, 50);
        let iid = (variance(&xs) / xs.len() as f64).sqrt();
        assert!((se / iid - 1.0).abs() < 0.35, "{se} vs {iid}");
    }

    #[test]
    fn ar1_series_has_reduced_ess() {
        // AR(1) with rho = 0.9 has integrated time (1 + rho) / (1 - rho) = 19
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut x = 0.0;
        let xs: Vec<f64> = (0..200_000)
            .map(|_| {
                x = 0.9 * x + rng.random::<f64>() - 0.5;
                x
            })
            .collect();
        let ratio = xs.len() as f64 / effective_sample_size(&xs);
        assert!((ratio - 19.0).abs() < 3.0, "tau {ratio}");
    }

    #[test]
    fn ks_accepts_uniform_and_rejects_shifted() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..5_000).map(|_| rng.random::<f64>()).collect();
        let d = ks_statistic(&xs, |x| x.clamp(0.0, 1.0));
        assert!(ks_pvalue(d, xs.len()) > 0.01);
        let d = ks_statistic(&xs, |x| (x * x).clamp(0.0, 1.0));
        assert!(ks_pvalue(d, xs.len()) < 1e-6);
    }

    #[test]
    fn ks_pvalue_reference_points() {
        // Kolmogorov distribution: P(K > 1.36) ~ 0.049, P(K > 1.63) ~ 0.0098
        let n = 1_000_000;
        let d = |lam: f64| lam / (n as f64).sqrt();
        assert!((ks_pvalue(d(1.36), n) - 0.0494).abs() < 1e-3);
        assert!((ks_pvalue(d(1.63), n) - 0.0098).abs() < 5e-4);
    }

    #[test]
    fn chi_square_of_perfect_fit() {
        let (stat, p) = chi_square_test(&[10.0, 20.0, 30.0], &[10.0, 20.0, 30.0], 0);
        assert_eq!(stat, 0.0);
        assert!((p - 1.0).abs() < 1e-12);
        let (_, p) = chi_square_test(&[1.0, 0.0], &[0.0, 1.0], 0);
        assert_eq!(p, 0.0);
    }
}
