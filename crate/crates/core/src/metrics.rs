//! Scalar evaluation metrics: symmetric error for interval prediction,
//! entropy-based anonymity, and a binned mutual-information estimator.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    Empty,
    #[error("need at least 2 bins, got {bins}")]
    BadBins { bins: usize },
    #[error("need at least {needed} samples for {bins} bins, got {n}")]
    TooFewSamples { n: usize, needed: usize, bins: usize },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("posterior {index} is not a distribution: {msg}")]
    BadPosterior { index: usize, msg: String },
}

/// Symmetric mean absolute percentage error, on a 0..=1 scale:
/// mean of |p - a| / (|p| + |a|). A pair where both sides are zero is a
/// perfect prediction and contributes zero.
pub fn smape(predicted: &[f64], actual: &[f64]) -> Result<f64, MetricError> {
    if predicted.len() != actual.len() {
        return Err(MetricError::LengthMismatch {
            left: predicted.len(),
            right: actual.len(),
        });
    }
    if predicted.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut total = 0.0;
    for (i, (&p, &a)) in predicted.iter().zip(actual).enumerate() {
        if !p.is_finite() || !a.is_finite() {
            return Err(MetricError::NonFinite { index: i });
        }
        let denom = p.abs() + a.abs();
        if denom > 0.0 {
            total += (p - a).abs() / denom;
        }
    }
    Ok(total / predicted.len() as f64)
}

/// Mean per-event lag, in milliseconds: the usability cost of a mix.
pub fn mean_lag(lags: &[f64]) -> Result<f64, MetricError> {
    if lags.is_empty() {
        return Err(MetricError::Empty);
    }
    for (i, l) in lags.iter().enumerate() {
        if !l.is_finite() {
            return Err(MetricError::NonFinite { index: i });
        }
    }
    Ok(lags.iter().sum::<f64>() / lags.len() as f64)
}

/// Shannon entropy of a probability vector, in bits. Zero entries are
/// skipped (0 log 0 = 0). The caller is responsible for normalization.
pub fn entropy_bits(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum()
}

/// Mean per-event posterior entropy, in bits: the expected number of bits an
/// observer still lacks about the sender after seeing an event. Each row
/// must be a probability distribution.
pub fn anonymity_rate_bits(posteriors: &[Vec<f64>]) -> Result<f64, MetricError> {
    if posteriors.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut total = 0.0;
    for (i, row) in posteriors.iter().enumerate() {
        if row.is_empty() {
            return Err(MetricError::BadPosterior {
                index: i,
                msg: "empty".into(),
            });
        }
        let mut sum = 0.0;
        for &p in row {
            if !p.is_finite() || p < 0.0 {
                return Err(MetricError::BadPosterior {
                    index: i,
                    msg: format!("entry {p}"),
                });
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-6 {
            return Err(MetricError::BadPosterior {
                index: i,
                msg: format!("sums to {sum}"),
            });
        }
        total += entropy_bits(row);
    }
    Ok(total / posteriors.len() as f64)
}

/// Assign each value to one of `bins` equal-frequency bins by rank.
/// Ties are broken by position, making the assignment deterministic.
pub fn equal_frequency_bins(values: &[f64], bins: usize) -> Result<Vec<usize>, MetricError> {
    if bins < 2 {
        return Err(MetricError::BadBins { bins });
    }
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(MetricError::NonFinite { index: i });
        }
    }
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        values[a]
            .partial_cmp(&values[b])
            .expect("finite values")
            .then(a.cmp(&b))
    });
    let mut assignment = vec![0usize; n];
    for (rank, &i) in order.iter().enumerate() {
        assignment[i] = rank * bins / n;
    }
    Ok(assignment)
}

/// Mutual information between two paired samples, in bits.
///
/// Both marginals are discretized into `bins` equal-frequency bins; the
/// plug-in estimator is evaluated on the joint histogram. Requires at least
/// `bins^2` pairs so the joint table is not hopelessly sparse. The estimate
/// is clamped at zero to absorb floating-point residue.
pub fn mutual_information_bits(x: &[f64], y: &[f64], bins: usize) -> Result<f64, MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if bins < 2 {
        return Err(MetricError::BadBins { bins });
    }
    let n = x.len();
    let needed = bins * bins;
    if n < needed {
        return Err(MetricError::TooFewSamples { n, needed, bins });
    }
    let bx = equal_frequency_bins(x, bins)?;
    let by = equal_frequency_bins(y, bins)?;

    let mut joint = vec![0usize; bins * bins];
    let mut mx = vec![0usize; bins];
    let mut my = vec![0usize; bins];
    for (&i, &j) in bx.iter().zip(&by) {
        joint[i * bins + j] += 1;
        mx[i] += 1;
        my[j] += 1;
    }

    let n = n as f64;
    let mut mi = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let c = joint[i * bins + j];
            if c == 0 {
                continue;
            }
            let p_xy = c as f64 / n;
            let p_x = mx[i] as f64 / n;
            let p_y = my[j] as f64 / n;
            mi += p_xy * (p_xy / (p_x * p_y)).log2();
        }
    }
    Ok(mi.max(0.0))
}
