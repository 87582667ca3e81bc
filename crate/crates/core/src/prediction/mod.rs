//! Elapsed-time-of-execution (ETE) predictors: baseline, windowed average,
//! fault-tolerant (trimmed) average and a scalar Kalman filter.

mod average;
mod kalman;
mod predictor;
pub mod replay;
mod window;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::protocol::DurationNs;

pub use average::{predict_average, predict_baseline, predict_ft_average};
pub use kalman::{
    kalman_gain, measurement_noise_variance, state_noise_variance, update_step, KalmanPrediction, KalmanState,
    KalmanStep,
};
pub use predictor::Predictor;
pub use window::{EteSample, SampleWindow};

/// Default sliding-window length.
pub const DEFAULT_WINDOW: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PredictionError {
    #[error("window holds no samples")]
    EmptyWindow,
    #[error("kalman filter needs two samples, has {observed}")]
    NotWarm { observed: u64 },
    #[error("need at least {needed} history entries, have {got}")]
    InsufficientHistory { needed: usize, got: usize },
    #[error("sample index {got} does not follow {last}")]
    OutOfOrderSample { got: u64, last: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Algorithm {
    Baseline,
    Average,
    FtAverage,
    Kalman,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Baseline,
        Algorithm::Average,
        Algorithm::FtAverage,
        Algorithm::Kalman,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Baseline => "baseline",
            Algorithm::Average => "average",
            Algorithm::FtAverage => "ft-average",
            Algorithm::Kalman => "kalman",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown algorithm {0:?} (expected baseline, average, ft-average or kalman)")]
pub struct UnknownAlgorithm(pub String);

impl FromStr for Algorithm {
    type Err = UnknownAlgorithm;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "baseline" => Ok(Algorithm::Baseline),
            "average" | "avg" => Ok(Algorithm::Average),
            "ft-average" | "ftaverage" | "ft" => Ok(Algorithm::FtAverage),
            "kalman" => Ok(Algorithm::Kalman),
            _ => Err(UnknownAlgorithm(s.to_string())),
        }
    }
}

/// A predicted ETE and the algorithm that actually produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    /// Rounded to the nearest nanosecond.
    pub value: DurationNs,
    /// Unrounded value in nanoseconds.
    pub exact_ns: f64,
    pub algorithm: Algorithm,
}

impl Prediction {
    pub fn from_nanos_f64(exact_ns: f64, algorithm: Algorithm) -> Self {
        Prediction {
            value: DurationNs::from_nanos_f64(exact_ns),
            exact_ns,
            algorithm,
        }
    }
}
