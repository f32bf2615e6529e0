//! Log-log regression and the two-sample Kolmogorov-Smirnov test.

use serde::{Deserialize, Serialize};

use crate::error::{GmcError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope; zero for an exact two-point fit.
    pub stderr: f64,
    pub points: usize,
}

/// Least squares of `ln y` against `ln x`.
pub fn loglog_fit(points: &[(f64, f64)]) -> Result<LogLogFit> {
    if points.len() < 2 {
        return Err(GmcError::DegenerateInput(format!("need at least two points, got {}", points.len())));
    }
    if let Some(&(x, y)) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())) {
        return Err(GmcError::DegenerateInput(format!("log-log fit needs positive finite values, got ({x}, {y})")));
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    linear_fit(&lx, &ly)
}

/// Ordinary least squares of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LogLogFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(GmcError::DegenerateInput("need at least two paired points".into()));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(GmcError::DegenerateInput("abscissae are all equal".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let stderr = if n > 2 {
        let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        (rss / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(LogLogFit { slope, intercept, stderr, points: n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov-Smirnov statistic with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(GmcError::EmptySample);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = a[i].min(b[j]);
        // step past every copy of x in both samples before comparing the two distribution functions
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    Ok(KsResult { statistic: d, p_value: kolmogorov_q(lambda) })
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // the theta-function form converges fast for small arguments
        let y = (-std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp();
        let s = y + y.powi(9) + y.powi(25) + y.powi(49);
        return (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn exact_power_law() {
        let pts: Vec<(f64, f64)> = (1..=5).map(|i| (i as f64, (i * i) as f64)).collect();
        let f = loglog_fit(&pts).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!(f.stderr < 1e-12);
        assert!(matches!(loglog_fit(&pts[..1]), Err(GmcError::DegenerateInput(_))));
        assert!(loglog_fit(&[(1.0, 1.0), (2.0, 0.0)]).is_err());
    }

    #[test]
    fn noisy_power_law() {
        let mut rng = stream(1, 99, 0);
        let pts: Vec<(f64, f64)> = (0..7)
            .map(|i| {
                let x = 2f64.powi(-(i + 3));
                let noise: f64 = rng.sample(StandardNormal);
                (x, 3.0 * x.powf(1.75) * (1.0 + 0.01 * noise))
            })
            .collect();
        let f = loglog_fit(&pts).unwrap();
        assert!((f.slope - 1.75).abs() < 0.05);
    }

    #[test]
    fn ks_extremes() {
        let a = [0.3, 0.1, 0.7, 0.2];
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        let r = ks_two_sample(&[0.0, 1.0, 2.0], &[5.0, 6.0]).unwrap();
        assert_eq!(r.statistic, 1.0);
        assert!(matches!(ks_two_sample(&[], &a), Err(GmcError::EmptySample)));
    }

    #[test]
    fn ks_same_law() {
        let mut rng = stream(5, 99, 1);
        let a: Vec<f64> = (0..1000).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..1000).map(|_| rng.sample(StandardNormal)).collect();
        assert!(ks_two_sample(&a, &b).unwrap().p_value > 0.01);
        let shifted: Vec<f64> = b.iter().map(|x| x + 0.5).collect();
        assert!(ks_two_sample(&a, &shifted).unwrap().p_value < 1e-6);
    }

    #[test]
    fn kolmogorov_branches_agree() {
        // both series are valid near the switch point
        let l: f64 = 1.18;
        let mut alt = 0.0;
        for j in 1..=50 {
            let jf = j as f64;
            alt += if j % 2 == 1 { 1.0 } else { -1.0 } * (-2.0 * jf * jf * l * l).exp();
        }
        assert!((kolmogorov_q(l - 1e-12) - 2.0 * alt).abs() < 1e-9);
        assert!((kolmogorov_q(1.0) - 0.26999967).abs() < 1e-6);
    }
}
