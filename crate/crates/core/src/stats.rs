//! Sample summaries used by the Monte Carlo comparisons.

use serde::{Deserialize, Serialize};

/// Mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; NaN for fewer than two values.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Mean with the iid standard error `sd / sqrt(n)`.
pub fn mean_se(xs: &[f64]) -> MeanSe {
    let n = xs.len();
    let se = if n >= 2 { (variance(xs) / n as f64).sqrt() } else { f64::NAN };
    MeanSe { mean: mean(xs), se, count: n }
}

/// Mean of a correlated series with a batch-means standard error.
///
/// Uses `floor(sqrt(n))` batches of equal length; trailing samples that do
/// not fill a batch only enter the mean.
pub fn batch_means(xs: &[f64]) -> MeanSe {
    let n = xs.len();
    let m = mean(xs);
    let batches = (n as f64).sqrt().floor() as usize;
    if batches < 2 {
        return MeanSe { mean: m, se: f64::NAN, count: n };
    }
    let len = n / batches;
    let batch_avgs: Vec<f64> = (0..batches).map(|b| mean(&xs[b * len..(b + 1) * len])).collect();
    MeanSe { mean: m, se: (variance(&batch_avgs) / batches as f64).sqrt(), count: n }
}

/// Standard error of the unbiased sample variance of iid values, from the
/// fourth central moment.
pub fn variance_se(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return f64::NAN;
    }
    let m = mean(xs);
    let nf = n as f64;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / nf;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / nf;
    let var_of_var = (m4 - m2 * m2 * (nf - 3.0) / (nf - 1.0)) / nf;
    var_of_var.max(0.0).sqrt()
}

/// `(sim - theory) / se`; NaN unless `se > 0`.
pub fn z_score(sim: f64, theory: f64, se: f64) -> f64 {
    if se > 0.0 && se.is_finite() {
        (sim - theory) / se
    } else {
        f64::NAN
    }
}
