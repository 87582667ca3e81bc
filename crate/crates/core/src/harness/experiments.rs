//! The three prediction experiments: server profiles, measurement schemes,
//! and workload spikes.

use super::{run_scenario, ErrorReport, Measurement, Scenario, ScenarioError, ScenarioResult, ServerSpec};
use crate::prediction::Algorithm;
use crate::protocol::DurationNs;
use crate::server::ExecutionModel;

#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub name: String,
    pub model: ExecutionModel,
}

impl Profile {
    pub fn new(name: &str, model: ExecutionModel) -> Self {
        Profile {
            name: name.to_string(),
            model,
        }
    }

    /// Three server types with differing speed and noise.
    pub fn defaults() -> Vec<Profile> {
        let ms = DurationNs::from_millis;
        let us = DurationNs::from_micros;
        vec![
            Profile::new("small", ExecutionModel::gaussian(ms(30), ms(3)).with_jitter(us(500))),
            Profile::new("medium", ExecutionModel::gaussian(ms(12), ms(2)).with_jitter(us(200))),
            Profile::new("large", ExecutionModel::gaussian(ms(4), us(400)).with_jitter(us(100))),
        ]
    }
}

/// Periodic measurement at an 8 s period on each profile.
pub fn experiment_i(profiles: &[Profile], samples: usize, seed: u64) -> Result<Vec<ScenarioResult>, ScenarioError> {
    profiles
        .iter()
        .map(|p| {
            run_scenario(&Scenario {
                name: format!("exp1-{}", p.name),
                servers: vec![ServerSpec::with_model(p.model.clone())],
                measurement: Measurement::Periodic {
                    period: DurationNs::from_secs(8),
                },
                samples,
                seed,
                ..Scenario::default()
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExperimentIIResult {
    pub periodic: Vec<(DurationNs, ErrorReport)>,
    /// Burst size and report, bursts at one probe per second.
    pub burst: Vec<(usize, ErrorReport)>,
}

pub fn experiment_ii(
    model: &ExecutionModel,
    periods: &[DurationNs],
    burst_sizes: &[usize],
    samples: usize,
    seed: u64,
) -> Result<ExperimentIIResult, ScenarioError> {
    let base = Scenario {
        servers: vec![ServerSpec::with_model(model.clone())],
        samples,
        seed,
        ..Scenario::default()
    };
    let periodic = periods
        .iter()
        .map(|&period| {
            let sc = Scenario {
                name: format!("exp2-periodic-{period}"),
                measurement: Measurement::Periodic { period },
                ..base.clone()
            };
            run_scenario(&sc).map(|r| (period, r.report))
        })
        .collect::<Result<_, _>>()?;
    let burst = burst_sizes
        .iter()
        .map(|&size| {
            let sc = Scenario {
                name: format!("exp2-burst-{size}"),
                measurement: Measurement::Burst {
                    size,
                    cadence: DurationNs::from_secs(1),
                    gap: DurationNs::from_secs(1),
                },
                ..base.clone()
            };
            run_scenario(&sc).map(|r| (size, r.report))
        })
        .collect::<Result<_, _>>()?;
    Ok(ExperimentIIResult { periodic, burst })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpikeProfile {
    pub name: String,
    pub base: DurationNs,
    pub sigma: DurationNs,
    pub probability: f64,
    pub multiplier: f64,
}

impl SpikeProfile {
    pub fn model(&self) -> ExecutionModel {
        ExecutionModel::gaussian(self.base, self.sigma).with_spikes(self.probability, self.multiplier)
    }

    pub fn defaults() -> Vec<SpikeProfile> {
        vec![SpikeProfile {
            name: "stress".to_string(),
            base: DurationNs::from_millis(30),
            sigma: DurationNs::from_millis(3),
            probability: 0.02,
            multiplier: 10.0,
        }]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowMeans {
    pub algorithm: Algorithm,
    /// Over spike samples and the samples after them within one window.
    pub spike_window_ns: Option<f64>,
    /// Over the samples after a spike, excluding the spike itself.
    pub post_spike_ns: Option<f64>,
    pub outside_ns: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpikeWindowStats {
    pub spikes: usize,
    pub in_window: usize,
    pub post_spike: usize,
    pub per_algorithm: Vec<WindowMeans>,
}

impl SpikeWindowStats {
    pub fn get(&self, algorithm: Algorithm) -> Option<&WindowMeans> {
        self.per_algorithm.iter().find(|w| w.algorithm == algorithm)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Splits the evaluated samples into spike windows (a spiked sample and the
/// `window` samples after it on the same server) and the rest.
pub fn spike_windows(result: &ScenarioResult, window: usize) -> SpikeWindowStats {
    let warmup = result.report.warmup;
    let mut kind = vec![0u8; result.records.len()]; // 0 outside, 1 spike, 2 post-spike
    let mut spikes = 0;
    for (i, r) in result.records.iter().enumerate() {
        if r.spiked && r.index >= warmup {
            spikes += 1;
            kind[i] = 1;
            for (j, next) in result.records.iter().enumerate().skip(i + 1) {
                if next.server != r.server || next.index > r.index + window {
                    break;
                }
                if kind[j] == 0 {
                    kind[j] = 2;
                }
            }
        }
    }
    let evaluated = |i: &usize| result.records[*i].index >= warmup;
    let idx =
        |pred: fn(u8) -> bool| -> Vec<usize> { (0..kind.len()).filter(evaluated).filter(|&i| pred(kind[i])).collect() };
    let in_window = idx(|k| k != 0);
    let post = idx(|k| k == 2);
    let outside = idx(|k| k == 0);
    let per_algorithm = result
        .scenario
        .algorithms
        .iter()
        .enumerate()
        .map(|(ai, &algorithm)| {
            let over = |set: &[usize]| mean(set.iter().map(|&i| result.records[i].abs_error(ai).as_nanos_f64()));
            WindowMeans {
                algorithm,
                spike_window_ns: over(&in_window),
                post_spike_ns: over(&post),
                outside_ns: over(&outside),
            }
        })
        .collect();
    SpikeWindowStats {
        spikes,
        in_window: in_window.len(),
        post_spike: post.len(),
        per_algorithm,
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentIIIRow {
    pub profile: String,
    pub seed: u64,
    pub result: ScenarioResult,
    pub windows: SpikeWindowStats,
}

pub fn experiment_iii(
    profiles: &[SpikeProfile],
    samples: usize,
    seeds: &[u64],
) -> Result<Vec<ExperimentIIIRow>, ScenarioError> {
    let mut rows = Vec::new();
    for p in profiles {
        for &seed in seeds {
            let sc = Scenario {
                name: format!("exp3-{}-{seed}", p.name),
                servers: vec![ServerSpec::with_model(p.model())],
                samples,
                seed,
                ..Scenario::default()
            };
            let result = run_scenario(&sc)?;
            let windows = spike_windows(&result, sc.window);
            rows.push(ExperimentIIIRow {
                profile: p.name.clone(),
                seed,
                result,
                windows,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_spikes_no_windows() {
        let p = SpikeProfile {
            probability: 0.0,
            ..SpikeProfile::defaults().remove(0)
        };
        let rows = experiment_iii(&[p], 60, &[1]).unwrap();
        assert_eq!(rows[0].windows.spikes, 0);
        assert_eq!(rows[0].windows.in_window, 0);
    }

    #[test]
    fn all_spikes_shift_the_mean() {
        let p = SpikeProfile {
            sigma: DurationNs::ZERO,
            probability: 1.0,
            ..SpikeProfile::defaults().remove(0)
        };
        let rows = experiment_iii(&[p], 30, &[1]).unwrap();
        let report = &rows[0].result.report;
        assert_eq!(report.baseline_mean_ete_ns, 300e6);
        for alg in [Algorithm::Average, Algorithm::FtAverage, Algorithm::Kalman] {
            assert_eq!(report.mean_error(alg), Some(0.0));
        }
    }

    #[test]
    fn single_probe_burst_is_last_sample() {
        let model = ExecutionModel::gaussian(DurationNs::from_millis(30), DurationNs::from_millis(3));
        let r = experiment_ii(&model, &[], &[1], 20, 3).unwrap();
        let report = &r.burst[0].1;
        assert_eq!(
            report.mean_error(Algorithm::Average),
            report.mean_error(Algorithm::FtAverage)
        );
    }

    #[test]
    fn noiseless_bursts_are_exact() {
        let model = ExecutionModel::constant(DurationNs::from_millis(30));
        let r = experiment_ii(&model, &[DurationNs::from_secs(1)], &[1, 2, 4], 10, 3).unwrap();
        for report in r.burst.iter().map(|b| &b.1).chain(r.periodic.iter().map(|p| &p.1)) {
            for alg in [Algorithm::Average, Algorithm::FtAverage, Algorithm::Kalman] {
                assert_eq!(report.mean_error(alg), Some(0.0));
            }
        }
    }
}
