//! CSV and gnuplot-style outputs.

use std::io::{self, Write};

use super::{ErrorReport, SampleRecord, Scenario};

pub const CSV_HEADER: [&str; 8] = [
    "sample_index",
    "server_id",
    "algorithm",
    "t_s_ns",
    "t_e_ns",
    "ete_ns",
    "prediction_ns",
    "abs_error_ns",
];

/// One row per (sample, algorithm), ordered by server, sample, algorithm.
pub fn write_samples_csv<W: Write>(sc: &Scenario, records: &[SampleRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        for (ai, alg) in sc.algorithms.iter().enumerate() {
            w.write_record([
                r.index.to_string(),
                r.server.to_string(),
                alg.name().to_string(),
                r.sample.scheduled_time.as_nanos().to_string(),
                r.sample.execution_time.as_nanos().to_string(),
                r.sample.ete.as_nanos().to_string(),
                r.predictions[ai].as_nanos().to_string(),
                r.abs_error(ai).as_nanos().to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Whitespace-separated table, one row per labelled report, mean absolute
/// error per algorithm in milliseconds. Loadable with gnuplot's `using`.
pub fn write_summary<W: Write>(rows: &[(String, &ErrorReport)], mut out: W) -> io::Result<()> {
    let Some((_, first)) = rows.first() else {
        return Ok(());
    };
    write!(out, "# label")?;
    for s in &first.per_algorithm {
        write!(out, " {}_mean_ms", s.algorithm.name())?;
    }
    writeln!(out, " baseline_ete_ms completion_ms samples")?;
    for (label, report) in rows {
        write!(out, "{}", label.replace(char::is_whitespace, "_"))?;
        for s in &report.per_algorithm {
            write!(out, " {:.6}", s.mean_abs_error_ns / 1e6)?;
        }
        writeln!(
            out,
            " {:.6} {:.6} {}",
            report.baseline_mean_ete_ns / 1e6,
            report.mean_completion_error_ns / 1e6,
            report.evaluated
        )?;
    }
    Ok(())
}
