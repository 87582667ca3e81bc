//! Seeded experiments over the simulated network.
//!
//! [`run_scenario`] drives the client's closed loop against simulated servers
//! in virtual time, then evaluates every requested algorithm offline on the
//! recorded sample stream, so all algorithms are judged on identical data.

mod demos;
mod experiments;
mod file;
mod report;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::client::{Client, ClientConfig, ClientError, Pending, ScheduleRequest, ServerHandle};
use crate::prediction::replay::evaluate_stream;
use crate::prediction::{Algorithm, EteSample, Predictor, DEFAULT_WINDOW};
use crate::probing::{run_probe_plan, ProbeError, ProbeMode, ProbePlan};
use crate::protocol::{DurationNs, MessageId, OperationSpec, SchedulingRangeConfig, TimeInstant};
use crate::rng;
use crate::server::{ExecutionModel, Server, ServerConfig};
use crate::sim::{DelayDist, SimNetwork, SimServerConfig};

pub use demos::{run_demo, Demo, DemoReport};
pub use experiments::{
    experiment_i, experiment_ii, experiment_iii, spike_windows, ExperimentIIIRow, ExperimentIIResult, Profile,
    SpikeProfile, SpikeWindowStats,
};
pub use file::parse_scenario;

pub use report::{write_samples_csv, write_summary, CSV_HEADER};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("scenario run failed: {0}")]
    Run(String),
}

impl ScenarioError {
    fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ScenarioError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl From<ClientError> for ScenarioError {
    fn from(e: ClientError) -> Self {
        ScenarioError::Run(e.to_string())
    }
}

impl From<ProbeError> for ScenarioError {
    fn from(e: ProbeError) -> Self {
        ScenarioError::Run(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerSpec {
    pub model: ExecutionModel,
    pub range: SchedulingRangeConfig,
    pub executors: usize,
    pub uplink: DelayDist,
    pub downlink: DelayDist,
    pub clock_offset: DurationNs,
}

impl Default for ServerSpec {
    fn default() -> Self {
        ServerSpec {
            model: ExecutionModel::default(),
            range: SchedulingRangeConfig::default(),
            executors: 1,
            uplink: DelayDist::default(),
            downlink: DelayDist::default(),
            clock_offset: DurationNs::ZERO,
        }
    }
}

impl ServerSpec {
    pub fn with_model(model: ExecutionModel) -> Self {
        ServerSpec {
            model,
            ..ServerSpec::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measurement {
    /// The operation itself runs once per period and is its own measurement.
    Periodic { period: DurationNs },
    /// Before each operation, `size` probes at `cadence`; the operation
    /// follows one cadence after the last probe, then `gap` of idle time.
    Burst {
        size: usize,
        cadence: DurationNs,
        gap: DurationNs,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub servers: Vec<ServerSpec>,
    pub measurement: Measurement,
    /// Scheduled operations per server.
    pub samples: usize,
    pub window: usize,
    /// Algorithm that computes the `T_s` actually sent.
    pub driver: Algorithm,
    /// Algorithms evaluated offline.
    pub algorithms: Vec<Algorithm>,
    pub operation: String,
    pub seed: u64,
    pub expect: Expectations,
}

/// Optional pass criteria checked after a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Expectations {
    /// Every non-baseline algorithm's mean error at most this times Baseline's.
    pub error_ratio: Option<f64>,
    /// Every non-baseline algorithm's error is exactly zero.
    pub exact: bool,
    /// FT-Average's mean error is no higher than any other non-baseline one.
    pub ft_best: bool,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: "scenario".to_string(),
            servers: vec![ServerSpec::default()],
            measurement: Measurement::Periodic {
                period: DurationNs::from_secs(1),
            },
            samples: 100,
            window: DEFAULT_WINDOW,
            driver: Algorithm::FtAverage,
            algorithms: Algorithm::ALL.to_vec(),
            operation: "noop".to_string(),
            seed: 0,
            expect: Expectations::default(),
        }
    }
}

impl Scenario {
    pub fn gaussian(base: DurationNs, sigma: DurationNs, samples: usize, seed: u64) -> Self {
        Scenario {
            name: "gaussian".to_string(),
            servers: vec![ServerSpec::with_model(ExecutionModel::gaussian(base, sigma))],
            samples,
            seed,
            ..Scenario::default()
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.servers.is_empty() {
            return Err(ScenarioError::invalid("servers", "at least one server is required"));
        }
        if self.samples == 0 {
            return Err(ScenarioError::invalid("samples", "must be positive"));
        }
        if self.window == 0 {
            return Err(ScenarioError::invalid("window", "must be positive"));
        }
        if self.algorithms.is_empty() {
            return Err(ScenarioError::invalid(
                "algorithms",
                "at least one algorithm is required",
            ));
        }
        match self.measurement {
            Measurement::Periodic { period } if period <= DurationNs::ZERO => {
                return Err(ScenarioError::invalid("period", "must be positive"));
            }
            Measurement::Burst { size, cadence, gap } => {
                if size == 0 {
                    return Err(ScenarioError::invalid("burst.size", "must be positive"));
                }
                if cadence <= DurationNs::ZERO {
                    return Err(ScenarioError::invalid("burst.cadence", "must be positive"));
                }
                if gap < DurationNs::ZERO {
                    return Err(ScenarioError::invalid("burst.gap", "must be non-negative"));
                }
            }
            Measurement::Periodic { .. } => {}
        }
        for (i, s) in self.servers.iter().enumerate() {
            s.model
                .validate()
                .map_err(|r| ScenarioError::invalid(format!("server.{i}.model"), r))?;
            if s.executors == 0 {
                return Err(ScenarioError::invalid(
                    format!("server.{i}.executors"),
                    "must be positive",
                ));
            }
            for (name, d) in [("uplink", s.uplink), ("downlink", s.downlink)] {
                let ok = match d {
                    DelayDist::Constant(c) => c >= DurationNs::ZERO,
                    DelayDist::Uniform { min, max } => min >= DurationNs::ZERO && max >= min,
                };
                if !ok {
                    return Err(ScenarioError::invalid(format!("server.{i}.{name}"), "bad delay"));
                }
            }
        }
        Ok(())
    }

    /// Simulated network for this scenario, with per-server streams derived
    /// from the scenario seed.
    pub fn network(&self, start: TimeInstant) -> SimNetwork {
        let servers = self
            .servers
            .iter()
            .enumerate()
            .map(|(i, s)| SimServerConfig {
                clock_offset: s.clock_offset,
                uplink: s.uplink,
                downlink: s.downlink,
                ..SimServerConfig::new(ServerConfig {
                    range: s.range,
                    model: s.model.clone(),
                    executors: s.executors,
                    seed: rng::derive_seed(self.seed, &format!("server/{i}")),
                })
            })
            .collect();
        SimNetwork::new(start, rng::derive_seed(self.seed, "network"), servers)
    }

    fn client_config(&self) -> ClientConfig {
        ClientConfig {
            algorithm: self.driver,
            window: self.window,
            ..ClientConfig::default()
        }
    }
}

pub const SCENARIO_START: TimeInstant = TimeInstant::from_nanos(0);

/// One scheduled operation as observed by the client.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub server: usize,
    pub index: usize,
    pub message_id: MessageId,
    pub desired_completion: TimeInstant,
    pub sample: EteSample,
    pub spiked: bool,
    /// Offline prediction per evaluated algorithm, in scenario order.
    pub predictions: Vec<DurationNs>,
}

impl SampleRecord {
    pub fn abs_error(&self, alg_idx: usize) -> DurationNs {
        (self.predictions[alg_idx] - self.sample.ete).abs()
    }

    /// `|T_e - T_d|` of the driving loop.
    pub fn completion_error(&self) -> DurationNs {
        (self.sample.execution_time - self.desired_completion).abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmStats {
    pub algorithm: Algorithm,
    pub mean_abs_error_ns: f64,
    pub max_abs_error_ns: i64,
    /// Absolute error per evaluated sample.
    pub errors_ns: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub scenario: String,
    pub per_algorithm: Vec<AlgorithmStats>,
    pub baseline_mean_ete_ns: f64,
    pub mean_completion_error_ns: f64,
    pub max_completion_error_ns: i64,
    pub evaluated: usize,
    /// Leading samples per server excluded from the statistics.
    pub warmup: usize,
}

impl ErrorReport {
    pub fn stats(&self, algorithm: Algorithm) -> Option<&AlgorithmStats> {
        self.per_algorithm.iter().find(|s| s.algorithm == algorithm)
    }

    pub fn mean_error(&self, algorithm: Algorithm) -> Option<f64> {
        self.stats(algorithm).map(|s| s.mean_abs_error_ns)
    }
}

/// A named pass/fail check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub records: Vec<SampleRecord>,
    pub report: ErrorReport,
    pub checks: Vec<Check>,
    pub servers: Vec<Server>,
}

impl ScenarioResult {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn csv(&self) -> String {
        let mut out = Vec::new();
        write_samples_csv(&self.scenario, &self.records, &mut out).expect("writing to memory");
        String::from_utf8(out).expect("csv is utf-8")
    }
}

struct Issued {
    server: usize,
    index: usize,
    desired: TimeInstant,
    pending: Pending,
    /// Execution time, when the reply was already collected.
    done: Option<TimeInstant>,
    scheduled: TimeInstant,
    /// Probe samples that the offline predictors see first (burst mode).
    history: Vec<EteSample>,
}

pub fn run_scenario(sc: &Scenario) -> Result<ScenarioResult, ScenarioError> {
    sc.validate()?;
    let mut client = Client::new(sc.network(SCENARIO_START), sc.client_config());
    let handles: Vec<ServerHandle> = client.transport().handles().collect();
    let op = OperationSpec::new(sc.operation.clone());

    let issued = match sc.measurement {
        Measurement::Periodic { period } => run_periodic(&mut client, &handles, &op, sc.samples, period)?,
        Measurement::Burst { size, cadence, gap } => {
            run_bursts(&mut client, &handles, &op, sc.samples, size, cadence, gap)?
        }
    };

    let mut outcomes = Vec::with_capacity(issued.len());
    for it in issued {
        let te = match it.done {
            Some(te) => te,
            None => execution_time(client.wait(&it.pending)?)?,
        };
        let id = it.pending.message_id.clone();
        outcomes.push((it, id, te));
    }
    let network = client.into_transport();

    let mut records = Vec::with_capacity(outcomes.len());
    for (it, id, te) in outcomes {
        let server = network.server(ServerHandle(it.server));
        let spiked = server
            .log()
            .iter()
            .find(|r| r.message_id == id)
            .map(|r| r.spiked)
            .unwrap_or(false);
        records.push(SampleRecord {
            server: it.server,
            index: it.index,
            message_id: id,
            desired_completion: it.desired,
            sample: EteSample::new(it.index as u64, it.scheduled, te),
            spiked,
            predictions: offline_from_history(&it.history, &sc.algorithms, sc.window),
        });
    }
    if matches!(sc.measurement, Measurement::Periodic { .. }) {
        offline_periodic(&mut records, &sc.algorithms, sc.window)?;
    }
    records.sort_by_key(|r| (r.server, r.index));

    let warmup = match sc.measurement {
        Measurement::Periodic { .. } => sc.window,
        Measurement::Burst { .. } => 0,
    };
    let report = error_report(&sc.name, &records, &sc.algorithms, warmup);
    let servers: Vec<Server> = network.handles().map(|h| network.server(h).clone()).collect();
    let mut checks = invariant_checks(&records, &servers, &network);
    checks.extend(expectation_checks(&sc.expect, &report));
    Ok(ScenarioResult {
        scenario: sc.clone(),
        records,
        report,
        checks,
        servers,
    })
}

fn dispatch_lead(period: DurationNs) -> DurationNs {
    DurationNs::from_nanos(period.as_nanos() / 2).min(DurationNs::from_secs(1))
}

/// Sends one prediction-scheduled operation so it reaches the server `lead`
/// before its start time.
fn issue<T: crate::client::Transport>(
    client: &mut Client<T>,
    target: ServerHandle,
    op: &OperationSpec,
    desired: TimeInstant,
    lead: DurationNs,
) -> Result<(Pending, TimeInstant), ScenarioError> {
    let first = client.predict(target, &op.name, None).value;
    client.sleep_until(desired - first - lead)?;
    let prediction = client.predict(target, &op.name, None).value;
    let pending = client.begin_schedule(&ScheduleRequest::new(target, op.clone(), desired))?;
    Ok((pending, desired - prediction))
}

fn run_periodic<T: crate::client::Transport>(
    client: &mut Client<T>,
    handles: &[ServerHandle],
    op: &OperationSpec,
    samples: usize,
    period: DurationNs,
) -> Result<Vec<Issued>, ScenarioError> {
    let lead = dispatch_lead(period);
    let first = client.now() + period;
    let mut issued = Vec::with_capacity(samples * handles.len());
    for k in 0..samples {
        let desired = first + period * k as i64;
        for &h in handles {
            let (pending, scheduled) = issue(client, h, op, desired, lead)?;
            issued.push(Issued {
                server: h.0,
                index: k,
                desired,
                pending,
                done: None,
                scheduled,
                history: Vec::new(),
            });
        }
    }
    Ok(issued)
}

fn run_bursts<T: crate::client::Transport>(
    client: &mut Client<T>,
    handles: &[ServerHandle],
    op: &OperationSpec,
    samples: usize,
    size: usize,
    cadence: DurationNs,
    gap: DurationNs,
) -> Result<Vec<Issued>, ScenarioError> {
    let lead = dispatch_lead(cadence);
    let mut issued = Vec::with_capacity(samples * handles.len());
    for &h in handles {
        let mut burst_start = client.now() + cadence;
        for k in 0..samples {
            client.reset_predictor(h, &op.name);
            let plan = ProbePlan::new(
                ProbeMode::Burst {
                    count: size,
                    period: cadence,
                },
                &op.name,
            );
            let run = run_probe_plan(client, h, &plan, burst_start, DurationNs::ZERO)?;
            let desired = burst_start + cadence * size as i64;
            let (pending, scheduled) = issue(client, h, op, desired, lead)?;
            // Wait here so the next burst's reset cannot drop this feedback.
            let te = execution_time(client.wait(&pending)?)?;
            if run.samples.is_empty() {
                return Err(ScenarioError::Run(format!(
                    "burst {k} on server {} produced no samples",
                    h.0
                )));
            }
            issued.push(Issued {
                server: h.0,
                index: k,
                desired,
                pending,
                done: Some(te),
                scheduled,
                history: run.samples,
            });
            burst_start = desired.max(te) + gap;
        }
    }
    Ok(issued)
}

fn execution_time(o: crate::client::ScheduleOutcome) -> Result<TimeInstant, ScenarioError> {
    o.execution_time
        .ok_or_else(|| ScenarioError::Run(format!("reply to {} lacks an execution time", o.message_id)))
}

/// Predictions from burst samples only; empty for periodic runs.
fn offline_from_history(history: &[EteSample], algorithms: &[Algorithm], window: usize) -> Vec<DurationNs> {
    if history.is_empty() {
        return Vec::new();
    }
    let mut p = Predictor::new(Algorithm::Baseline, window);
    for (i, s) in history.iter().enumerate() {
        p.observe(EteSample::from_ete(i as u64, s.ete))
            .expect("fresh sequence numbers are increasing");
    }
    algorithms.iter().map(|&a| p.predict_with(a).value).collect()
}

fn offline_periodic(
    records: &mut [SampleRecord],
    algorithms: &[Algorithm],
    window: usize,
) -> Result<(), ScenarioError> {
    let mut by_server: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_server.entry(r.server).or_default().push(i);
    }
    for idxs in by_server.values() {
        let stream: Vec<EteSample> = idxs.iter().map(|&i| records[i].sample).collect();
        let rows = evaluate_stream(&stream, algorithms, window).map_err(|e| ScenarioError::Run(e.to_string()))?;
        for (&i, row) in idxs.iter().zip(rows) {
            records[i].predictions = row.predictions.iter().map(|p| p.value).collect();
        }
    }
    Ok(())
}

pub fn error_report(name: &str, records: &[SampleRecord], algorithms: &[Algorithm], warmup: usize) -> ErrorReport {
    let evaluated: Vec<&SampleRecord> = records.iter().filter(|r| r.index >= warmup).collect();
    let n = evaluated.len().max(1) as f64;
    let per_algorithm = algorithms
        .iter()
        .enumerate()
        .map(|(ai, &algorithm)| {
            let errors_ns: Vec<i64> = evaluated.iter().map(|r| r.abs_error(ai).as_nanos()).collect();
            AlgorithmStats {
                algorithm,
                mean_abs_error_ns: errors_ns.iter().map(|&e| e as f64).sum::<f64>() / n,
                max_abs_error_ns: errors_ns.iter().copied().max().unwrap_or(0),
                errors_ns,
            }
        })
        .collect();
    let completion: Vec<i64> = evaluated.iter().map(|r| r.completion_error().as_nanos()).collect();
    ErrorReport {
        scenario: name.to_string(),
        per_algorithm,
        baseline_mean_ete_ns: evaluated.iter().map(|r| r.sample.ete.as_nanos_f64()).sum::<f64>() / n,
        mean_completion_error_ns: completion.iter().map(|&e| e as f64).sum::<f64>() / n,
        max_completion_error_ns: completion.iter().copied().max().unwrap_or(0),
        evaluated: evaluated.len(),
        warmup,
    }
}

/// Checks that hold for every run regardless of its expectations.
fn invariant_checks(records: &[SampleRecord], servers: &[Server], network: &SimNetwork) -> Vec<Check> {
    let mut checks = Vec::new();

    let audit: Vec<String> = servers
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.audit().err().map(|e| format!("server {i}: {e}")))
        .collect();
    checks.push(Check::new("server audit", audit.is_empty(), audit.join("; ")));

    let leaked = rejected_in_logs(servers);
    checks.push(Check::new(
        "no rejected rpc executed",
        leaked == 0,
        format!("{leaked} rejected id(s) found in execution logs"),
    ));

    let scheduled: BTreeMap<(usize, &MessageId), TimeInstant> = records
        .iter()
        .map(|r| ((r.server, &r.message_id), r.sample.scheduled_time))
        .collect();
    let late = network
        .dispatches()
        .iter()
        .filter(|d| {
            scheduled
                .get(&(d.server.0, &d.message_id))
                .is_some_and(|&ts| d.arrives_at.is_none_or(|a| a > ts))
        })
        .count();
    checks.push(Check::new(
        "scheduled rpcs arrive before their start time",
        late == 0,
        format!("{late} late dispatch(es)"),
    ));
    checks
}

/// Number of rejected message ids that show up in any execution log.
pub fn rejected_in_logs(servers: &[Server]) -> usize {
    servers
        .iter()
        .map(|s| {
            s.log()
                .iter()
                .filter(|r| s.was_rejected(r.session, &r.message_id))
                .count()
        })
        .sum()
}

fn expectation_checks(expect: &Expectations, report: &ErrorReport) -> Vec<Check> {
    let mut checks = Vec::new();
    let predictors: Vec<&AlgorithmStats> = report
        .per_algorithm
        .iter()
        .filter(|s| s.algorithm != Algorithm::Baseline)
        .collect();
    if let Some(ratio) = expect.error_ratio {
        let bound = ratio * report.baseline_mean_ete_ns;
        let worst = predictors.iter().map(|s| s.mean_abs_error_ns).fold(0.0, f64::max);
        checks.push(Check::new(
            format!("mean error <= {ratio} x baseline"),
            worst <= bound,
            format!("worst {worst:.0} ns, bound {bound:.0} ns"),
        ));
    }
    if expect.exact {
        let worst = predictors.iter().map(|s| s.max_abs_error_ns).max().unwrap_or(0);
        checks.push(Check::new(
            "exact prediction",
            worst == 0,
            format!("max error {worst} ns"),
        ));
    }
    if expect.ft_best {
        let ft = report.mean_error(Algorithm::FtAverage);
        let ok = ft.is_some_and(|ft| predictors.iter().all(|s| ft <= s.mean_abs_error_ns));
        checks.push(Check::new(
            "ft-average has the lowest error",
            ok,
            match ft {
                Some(ft) => format!("ft-average {ft:.0} ns"),
                None => "ft-average not evaluated".to_string(),
            },
        ));
    }
    checks
}
