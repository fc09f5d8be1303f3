//! Small statistical toolkit for the verification checks.

use libm::erfc;

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// One-sample Kolmogorov–Smirnov statistic against `cdf`.
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

/// Asymptotic Kolmogorov p-value with Stephens' small-sample correction.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lam = (sn + 0.12 + 0.11 / sn) * d;
    if lam < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=200 {
        let jf = j as f64;
        let term = 2.0 * (-1.0f64).powi(j - 1) * (-2.0 * jf * jf * lam * lam).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct BatchEstimate {
    pub mean: f64,
    /// Standard error from the spread of batch means.
    pub se: f64,
    pub batches: usize,
}

impl BatchEstimate {
    pub fn z_score(&self, reference: f64) -> f64 {
        (self.mean - reference) / self.se
    }
}

/// Default number of batches for standard errors.
pub const BATCHES: usize = 50;

/// Mean and standard error from `batches` contiguous, equal-size batches.
pub fn batch_mean(values: &[f64], batches: usize) -> BatchEstimate {
    let b = batches.min(values.len()).max(1);
    let size = values.len() / b;
    let means: Vec<f64> = (0..b)
        .map(|j| values[j * size..(j + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let mean = means.iter().sum::<f64>() / b as f64;
    let var = if b > 1 {
        means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (b - 1) as f64
    } else {
        f64::NAN
    };
    BatchEstimate {
        mean,
        se: (var / b as f64).sqrt(),
        batches: b,
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn rms(values: &[f64]) -> f64 {
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

/// Least-squares slope of `ln(err)` against `ln(h)`.
pub fn loglog_slope(h: &[f64], err: &[f64]) -> f64 {
    let xs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = err.iter().map(|v| v.ln()).collect();
    let (mx, my) = (mean(&xs), mean(&ys));
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cdf_values() {
        assert_relative_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-16);
        assert_relative_eq!(normal_cdf(1.96), 0.9750021048517795, epsilon = 1e-12);
    }

    #[test]
    fn kolmogorov_tail() {
        // P(K > 1.358) = 0.05 asymptotically
        assert_relative_eq!(ks_pvalue(1.358 / 1e4, 100_000_000), 0.05, epsilon = 5e-4);
        assert_eq!(ks_pvalue(0.0, 100), 1.0);
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let n = 1000;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ks_statistic(&xs, |x| x.clamp(0.0, 1.0));
        assert_relative_eq!(d, 0.5 / n as f64, epsilon = 1e-12);
    }

    #[test]
    fn slope_of_power_law() {
        let h = [1.0, 0.5, 0.25, 0.125];
        let e: Vec<f64> = h.iter().map(|x: &f64| 3.0 * x.powf(0.7)).collect();
        assert_relative_eq!(loglog_slope(&h, &e), 0.7, epsilon = 1e-12);
    }

    #[test]
    fn batch_se_of_constant_is_zero() {
        let b = batch_mean(&[2.0; 100], 10);
        assert_eq!(b.mean, 2.0);
        assert_eq!(b.se, 0.0);
    }
}
