//! Small statistics helpers shared by the experiments.

use serde::{Deserialize, Serialize};

pub const BATCHES: usize = 30;
pub const Z95: f64 = 1.959963984540054;

/// Sample mean with the plain i.i.d. standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

pub fn mean_se(xs: &[f64]) -> MeanSe {
    let n = xs.len();
    if n == 0 {
        return MeanSe { mean: f64::NAN, stderr: f64::NAN, n };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return MeanSe { mean, stderr: 0.0, n };
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    MeanSe { mean, stderr: (var / n as f64).sqrt(), n }
}

/// Standard error from `BATCHES` contiguous batch means.
///
/// Falls back to the i.i.d. formula when there are fewer samples than batches.
pub fn batch_means_se(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 * BATCHES {
        return mean_se(xs).stderr;
    }
    let means: Vec<f64> = (0..BATCHES)
        .map(|b| {
            let lo = b * n / BATCHES;
            let hi = (b + 1) * n / BATCHES;
            xs[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    mean_se(&means).stderr
}

/// One-sided 95% upper bound on a probability when no successes were seen in `n` trials.
pub fn clopper_pearson_zero_upper(n: usize) -> f64 {
    1.0 - 0.05f64.powf(1.0 / n as f64)
}

/// Standard error of a Bernoulli frequency.
pub fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_sample_has_zero_error() {
        let xs = vec![2.5; 300];
        let m = mean_se(&xs);
        assert_eq!(m.mean, 2.5);
        assert_eq!(m.stderr, 0.0);
        assert_eq!(batch_means_se(&xs), 0.0);
    }

    #[test]
    fn clopper_pearson_rule_of_three() {
        let u = clopper_pearson_zero_upper(1000);
        assert!((u - 3.0 / 1000.0).abs() < 1e-4);
    }
}
