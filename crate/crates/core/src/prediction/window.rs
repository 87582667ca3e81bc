use std::collections::VecDeque;

use crate::protocol::{DurationNs, TimeInstant};

use super::PredictionError;

/// One execution-time measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EteSample {
    pub sequence_index: u64,
    pub scheduled_time: TimeInstant,
    pub execution_time: TimeInstant,
    /// `execution_time - scheduled_time`.
    pub ete: DurationNs,
}

impl EteSample {
    pub fn new(sequence_index: u64, scheduled_time: TimeInstant, execution_time: TimeInstant) -> Self {
        EteSample {
            sequence_index,
            scheduled_time,
            execution_time,
            ete: execution_time - scheduled_time,
        }
    }

    /// A sample with a given ETE, scheduled at the epoch.
    pub fn from_ete(sequence_index: u64, ete: DurationNs) -> Self {
        EteSample::new(sequence_index, TimeInstant::EPOCH, TimeInstant::EPOCH + ete)
    }
}

/// The most recent `capacity` samples, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWindow {
    capacity: usize,
    samples: VecDeque<EteSample>,
}

impl SampleWindow {
    /// # Panics
    /// If `capacity` is zero.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "window capacity must be positive");
        SampleWindow {
            capacity,
            samples: VecDeque::with_capacity(capacity),
        }
    }

    /// Builds a window from samples in order, keeping the last `capacity`.
    pub fn from_samples(
        capacity: usize,
        samples: impl IntoIterator<Item = EteSample>,
    ) -> Result<Self, PredictionError> {
        let mut w = SampleWindow::new(capacity);
        for s in samples {
            w.push(s)?;
        }
        Ok(w)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn clear(&mut self) {
        self.samples.clear();
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &EteSample> + '_ {
        self.samples.iter()
    }

    pub fn last(&self) -> Option<&EteSample> {
        self.samples.back()
    }

    /// ETE values in nanoseconds, oldest first.
    pub fn ete_values(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.ete.as_nanos_f64())
    }

    pub fn push(&mut self, sample: EteSample) -> Result<(), PredictionError> {
        if let Some(last) = self.samples.back() {
            if sample.sequence_index <= last.sequence_index {
                return Err(PredictionError::OutOfOrderSample {
                    got: sample.sequence_index,
                    last: last.sequence_index,
                });
            }
        }
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(sample);
        Ok(())
    }
}
