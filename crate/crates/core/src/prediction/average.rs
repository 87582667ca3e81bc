//! Windowed mean predictors.

use super::{Algorithm, Prediction, PredictionError, SampleWindow};

pub fn predict_baseline() -> Prediction {
    Prediction::from_nanos_f64(0.0, Algorithm::Baseline)
}

/// Mean of the samples currently in the window.
pub fn predict_average(window: &SampleWindow) -> Result<Prediction, PredictionError> {
    Ok(Prediction::from_nanos_f64(mean_ns(window)?, Algorithm::Average))
}

/// Mean after discarding one maximum and one minimum sample. Windows with
/// fewer than three samples fall back to the plain mean.
pub fn predict_ft_average(window: &SampleWindow) -> Result<Prediction, PredictionError> {
    Ok(Prediction::from_nanos_f64(
        trimmed_mean_ns(window)?,
        Algorithm::FtAverage,
    ))
}

pub(crate) fn mean_ns(window: &SampleWindow) -> Result<f64, PredictionError> {
    if window.is_empty() {
        return Err(PredictionError::EmptyWindow);
    }
    let sum: i128 = window.iter().map(|s| s.ete.as_nanos() as i128).sum();
    Ok(sum as f64 / window.len() as f64)
}

pub(crate) fn trimmed_mean_ns(window: &SampleWindow) -> Result<f64, PredictionError> {
    let n = window.len();
    if n < 3 {
        return mean_ns(window);
    }
    // Sum in integer nanoseconds so removing max and min is exact.
    let (sum, max, min) = window.iter().fold((0i128, i64::MIN, i64::MAX), |(s, hi, lo), x| {
        let v = x.ete.as_nanos();
        (s + v as i128, hi.max(v), lo.min(v))
    });
    Ok((sum - max as i128 - min as i128) as f64 / (n - 2) as f64)
}
