use super::{average, Algorithm, EteSample, KalmanState, Prediction, PredictionError, SampleWindow};

/// Estimator state for one (server, operation type) pair.
///
/// All algorithms share one sample stream; the window and the Kalman state are
/// both maintained on every observation so the algorithm can be chosen per
/// prediction. Cold predictors fall back: no samples gives the baseline (0),
/// a Kalman request with a single sample gives the average.
#[derive(Debug, Clone)]
pub struct Predictor {
    algorithm: Algorithm,
    window: SampleWindow,
    kalman: KalmanState,
}

impl Predictor {
    pub fn new(algorithm: Algorithm, window: usize) -> Self {
        Predictor {
            algorithm,
            window: SampleWindow::new(window),
            kalman: KalmanState::new(window),
        }
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn set_algorithm(&mut self, algorithm: Algorithm) {
        self.algorithm = algorithm;
    }

    pub fn window(&self) -> &SampleWindow {
        &self.window
    }

    pub fn kalman(&self) -> &KalmanState {
        &self.kalman
    }

    /// Whether `algorithm` would run without falling back.
    pub fn is_warm(&self, algorithm: Algorithm) -> bool {
        match algorithm {
            Algorithm::Baseline => true,
            Algorithm::Average | Algorithm::FtAverage => !self.window.is_empty(),
            Algorithm::Kalman => self.kalman.is_warm(),
        }
    }

    pub fn observe(&mut self, sample: EteSample) -> Result<(), PredictionError> {
        self.window.push(sample)?;
        self.kalman.update(sample.ete.as_nanos_f64());
        Ok(())
    }

    pub fn predict(&self) -> Prediction {
        self.predict_with(self.algorithm)
    }

    pub fn predict_with(&self, algorithm: Algorithm) -> Prediction {
        if algorithm == Algorithm::Baseline || self.window.is_empty() {
            return average::predict_baseline();
        }
        let fallback = || average::predict_average(&self.window).expect("window checked non-empty");
        match algorithm {
            Algorithm::Baseline => unreachable!(),
            Algorithm::Average => fallback(),
            Algorithm::FtAverage => average::predict_ft_average(&self.window).expect("window checked non-empty"),
            Algorithm::Kalman => self
                .kalman
                .predict()
                .map(|k| k.prediction)
                .unwrap_or_else(|_| fallback()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::DurationNs;
    use proptest::prelude::*;

    fn sample(i: u64, ns: i64) -> EteSample {
        EteSample::from_ete(i, DurationNs::from_nanos(ns))
    }

    #[test]
    fn fallback_ladder() {
        let mut p = Predictor::new(Algorithm::Kalman, 8);
        let cold = p.predict();
        assert_eq!(cold.algorithm, Algorithm::Baseline);
        assert_eq!(cold.value, DurationNs::ZERO);

        p.observe(sample(1, 30)).unwrap();
        let one = p.predict();
        assert_eq!(one.algorithm, Algorithm::Average);
        assert_eq!(one.value, DurationNs::from_nanos(30));

        p.observe(sample(2, 50)).unwrap();
        assert_eq!(p.predict().algorithm, Algorithm::Kalman);
    }

    #[test]
    fn out_of_order_sample_leaves_state_untouched() {
        let mut p = Predictor::new(Algorithm::Average, 4);
        p.observe(sample(3, 10)).unwrap();
        assert!(p.observe(sample(2, 99)).is_err());
        assert_eq!(p.window().len(), 1);
        assert_eq!(p.kalman().observed(), 1);
    }

    proptest! {
        #[test]
        fn warm_outputs_within_window_range(values in prop::collection::vec(-1_000_000_000i64..1_000_000_000, 2..40)) {
            let mut p = Predictor::new(Algorithm::Kalman, 8);
            for (i, &v) in values.iter().enumerate() {
                p.observe(sample(i as u64, v)).unwrap();
                let lo = p.window().iter().map(|s| s.ete).min().unwrap();
                let hi = p.window().iter().map(|s| s.ete).max().unwrap();
                for alg in [Algorithm::Average, Algorithm::FtAverage, Algorithm::Kalman] {
                    let out = p.predict_with(alg).value;
                    prop_assert!(out >= lo && out <= hi, "{alg} {out} outside [{lo}, {hi}]");
                }
            }
        }

        #[test]
        fn shift_equivariance_when_warm(
            values in prop::collection::vec(-1_000_000_000i64..1_000_000_000, 2..30),
            c in -1_000_000_000i64..1_000_000_000,
        ) {
            let mut a = Predictor::new(Algorithm::Kalman, 8);
            let mut b = Predictor::new(Algorithm::Kalman, 8);
            for (i, &v) in values.iter().enumerate() {
                a.observe(sample(i as u64, v)).unwrap();
                b.observe(sample(i as u64, v + c)).unwrap();
            }
            for alg in [Algorithm::Average, Algorithm::FtAverage, Algorithm::Kalman] {
                let pa = a.predict_with(alg).exact_ns;
                let pb = b.predict_with(alg).exact_ns;
                let tol = 1e-6 * (1.0 + pa.abs() + (c as f64).abs());
                prop_assert!((pb - (pa + c as f64)).abs() <= tol, "{alg}: {pa} + {c} vs {pb}");
            }
        }
    }
}
