//! Offline evaluation of predictors over a recorded sample stream.
//!
//! Input CSV: `sequence,scheduled_time_ns,execution_time_ns` with a header row.
//! Output CSV: `sequence,scheduled_time_ns,execution_time_ns,ete_ns` followed
//! by `<algo>_prediction_ns,<algo>_abs_error_ns` for each evaluated algorithm.

use std::io::{Read, Write};

use serde::Deserialize;
use thiserror::Error;

use super::{Algorithm, EteSample, Prediction, PredictionError, Predictor};
use crate::protocol::{DurationNs, TimeInstant};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Prediction(#[from] PredictionError),
}

#[derive(Debug, Deserialize)]
struct InputRow {
    sequence: u64,
    scheduled_time_ns: i64,
    execution_time_ns: i64,
}

/// One evaluated sample: what each algorithm predicted before seeing it.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayRow {
    pub sample: EteSample,
    pub predictions: Vec<Prediction>,
}

impl ReplayRow {
    pub fn abs_error(&self, idx: usize) -> DurationNs {
        (self.predictions[idx].value - self.sample.ete).abs()
    }
}

pub fn read_samples<R: Read>(input: R) -> Result<Vec<EteSample>, ReplayError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    reader
        .deserialize::<InputRow>()
        .map(|row| {
            let row = row?;
            Ok(EteSample::new(
                row.sequence,
                TimeInstant::from_nanos(row.scheduled_time_ns),
                TimeInstant::from_nanos(row.execution_time_ns),
            ))
        })
        .collect()
}

/// Runs every algorithm over the same stream. Each row holds the predictions
/// made from the samples strictly before it.
pub fn evaluate_stream(
    samples: &[EteSample],
    algorithms: &[Algorithm],
    window: usize,
) -> Result<Vec<ReplayRow>, PredictionError> {
    let mut predictor = Predictor::new(Algorithm::Baseline, window);
    let mut rows = Vec::with_capacity(samples.len());
    for &sample in samples {
        let predictions = algorithms
            .iter()
            .map(|&alg| {
                let mut p = predictor.predict_with(alg);
                // Report the requested algorithm even when it fell back.
                p.algorithm = alg;
                p
            })
            .collect();
        predictor.observe(sample)?;
        rows.push(ReplayRow { sample, predictions });
    }
    Ok(rows)
}

pub fn write_rows<W: Write>(rows: &[ReplayRow], algorithms: &[Algorithm], out: W) -> Result<(), ReplayError> {
    let mut writer = csv::Writer::from_writer(out);
    let mut header = vec![
        "sequence".to_string(),
        "scheduled_time_ns".to_string(),
        "execution_time_ns".to_string(),
        "ete_ns".to_string(),
    ];
    for alg in algorithms {
        header.push(format!("{}_prediction_ns", alg.name()));
        header.push(format!("{}_abs_error_ns", alg.name()));
    }
    writer.write_record(&header)?;
    for row in rows {
        let mut record = vec![
            row.sample.sequence_index.to_string(),
            row.sample.scheduled_time.as_nanos().to_string(),
            row.sample.execution_time.as_nanos().to_string(),
            row.sample.ete.as_nanos().to_string(),
        ];
        for i in 0..algorithms.len() {
            record.push(row.predictions[i].value.as_nanos().to_string());
            record.push(row.abs_error(i).as_nanos().to_string());
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a sample CSV, evaluates it and writes the result CSV.
pub fn replay<R: Read, W: Write>(
    input: R,
    algorithms: &[Algorithm],
    window: usize,
    out: W,
) -> Result<Vec<ReplayRow>, ReplayError> {
    let samples = read_samples(input)?;
    let rows = evaluate_stream(&samples, algorithms, window)?;
    write_rows(&rows, algorithms, out)?;
    Ok(rows)
}
