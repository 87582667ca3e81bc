//! Scalar Kalman filter over ETE measurements.
//!
//! The state transition coefficient is fixed at 1 (random-walk state), and the
//! process and measurement noise variances are re-estimated at every step as
//! population variances over the last `N` state increments and residuals.
//!
//! Initialization: the first measurement seeds the estimate with zero
//! variance. A prediction needs at least two measurements.

use std::collections::VecDeque;

use super::{Algorithm, Prediction, PredictionError};

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    window: usize,
    estimate: f64,
    variance: f64,
    /// Last `window + 1` posterior estimates, oldest first.
    estimates: VecDeque<f64>,
    /// Last `window` residuals `x - s`, oldest first.
    residuals: VecDeque<f64>,
    observed: u64,
}

/// Output of the prediction step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanPrediction {
    pub prediction: Prediction,
    /// Prior variance `P[n|n-1]`, in ns².
    pub predicted_variance: f64,
    /// Process-noise variance used for this step, in ns².
    pub state_noise: f64,
}

/// Result of one measurement update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanStep {
    pub gain: f64,
    pub measurement_noise: f64,
    pub estimate: f64,
    pub variance: f64,
}

impl KalmanState {
    /// # Panics
    /// If `window` is zero.
    pub fn new(window: usize) -> Self {
        assert!(window > 0, "variance window must be positive");
        KalmanState {
            window,
            estimate: 0.0,
            variance: 0.0,
            estimates: VecDeque::with_capacity(window + 1),
            residuals: VecDeque::with_capacity(window),
            observed: 0,
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn observed(&self) -> u64 {
        self.observed
    }

    pub fn is_warm(&self) -> bool {
        self.observed >= 2
    }

    /// Posterior estimate `s[n-1]` in ns, once at least one sample was seen.
    pub fn estimate(&self) -> Option<f64> {
        (self.observed > 0).then_some(self.estimate)
    }

    /// Posterior variance `P[n-1]` in ns².
    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn estimates(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.estimates.iter().copied()
    }

    pub fn residuals(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.residuals.iter().copied()
    }

    pub fn predict(&self) -> Result<KalmanPrediction, PredictionError> {
        if !self.is_warm() {
            return Err(PredictionError::NotWarm {
                observed: self.observed,
            });
        }
        let state_noise = self.state_noise();
        Ok(KalmanPrediction {
            prediction: Prediction::from_nanos_f64(self.estimate, Algorithm::Kalman),
            predicted_variance: self.variance + state_noise,
            state_noise,
        })
    }

    /// Folds in measurement `x` (ns).
    pub fn update(&mut self, x: f64) -> KalmanStep {
        let step = if self.observed == 0 {
            KalmanStep {
                gain: 1.0,
                measurement_noise: 0.0,
                estimate: x,
                variance: 0.0,
            }
        } else {
            let predicted_variance = self.variance + self.state_noise();
            let measurement_noise =
                measurement_noise_variance(self.residuals.make_contiguous(), self.window).unwrap_or(0.0);
            update_step(self.estimate, predicted_variance, measurement_noise, x)
        };
        self.estimate = step.estimate;
        self.variance = step.variance;
        self.observed += 1;
        if self.estimates.len() == self.window + 1 {
            self.estimates.pop_front();
        }
        self.estimates.push_back(step.estimate);
        if self.residuals.len() == self.window {
            self.residuals.pop_front();
        }
        self.residuals.push_back(x - step.estimate);
        step
    }

    fn state_noise(&self) -> f64 {
        let (a, b) = self.estimates.as_slices();
        if b.is_empty() {
            state_noise_variance(a, self.window).unwrap_or(0.0)
        } else {
            let joined: Vec<f64> = self.estimates.iter().copied().collect();
            state_noise_variance(&joined, self.window).unwrap_or(0.0)
        }
    }
}

/// `P / (P + V)`, with the 0/0 case defined as 1 (trust the measurement).
pub fn kalman_gain(predicted_variance: f64, measurement_noise: f64) -> f64 {
    let denom = predicted_variance + measurement_noise;
    if denom == 0.0 {
        1.0
    } else {
        predicted_variance / denom
    }
}

/// Measurement update from prior `(s_pred, p_pred)` and measurement `x`.
pub fn update_step(s_pred: f64, p_pred: f64, measurement_noise: f64, x: f64) -> KalmanStep {
    let gain = kalman_gain(p_pred, measurement_noise);
    KalmanStep {
        gain,
        measurement_noise,
        estimate: s_pred + gain * (x - s_pred),
        variance: (1.0 - gain) * p_pred,
    }
}

/// Population variance of the first differences of the last `window + 1`
/// estimates (oldest first).
pub fn state_noise_variance(estimates: &[f64], window: usize) -> Result<f64, PredictionError> {
    if estimates.len() < 2 {
        return Err(PredictionError::InsufficientHistory {
            needed: 2,
            got: estimates.len(),
        });
    }
    let tail = &estimates[estimates.len().saturating_sub(window + 1)..];
    let diffs: Vec<f64> = tail.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(population_variance(&diffs))
}

/// Population variance of the last `window` residuals (oldest first).
pub fn measurement_noise_variance(residuals: &[f64], window: usize) -> Result<f64, PredictionError> {
    if residuals.len() < 2 {
        return Err(PredictionError::InsufficientHistory {
            needed: 2,
            got: residuals.len(),
        });
    }
    Ok(population_variance(
        &residuals[residuals.len().saturating_sub(window)..],
    ))
}

fn population_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}
