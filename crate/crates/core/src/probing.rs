//! ETE measurement by probing, and measurement-period selection.
//!
//! Probes are scheduled no-op rpcs tagged with the operation type they stand
//! in for; each reply feeds that type's predictor. Period selection sends
//! `M` bursts of `N` probes at doubling periods and picks a period from the
//! per-burst mean ETEs.

use thiserror::Error;

use crate::client::{Client, ClientError, Pending, ServerHandle, Submission, Transport};
use crate::prediction::EteSample;
use crate::protocol::{DurationNs, OperationSpec, TimeInstant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeMode {
    /// One probe per `period` until the run's horizon.
    Periodic(DurationNs),
    Burst {
        count: usize,
        period: DurationNs,
    },
}

impl ProbeMode {
    pub fn period(&self) -> DurationNs {
        match *self {
            ProbeMode::Periodic(p) | ProbeMode::Burst { period: p, .. } => p,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbePlan {
    pub mode: ProbeMode,
    pub operation: OperationSpec,
    /// Predictor key the samples are fed into.
    pub op_type: String,
    /// How long before each slot the probe is sent. Defaults to half the
    /// period, capped at one second.
    pub dispatch_lead: Option<DurationNs>,
}

impl ProbePlan {
    /// Probes standing in for operations of type `op_type`.
    pub fn new(mode: ProbeMode, op_type: &str) -> Self {
        ProbePlan {
            mode,
            operation: probe_operation(op_type),
            op_type: op_type.to_string(),
            dispatch_lead: None,
        }
    }

    pub fn validate(&self) -> Result<(), ProbeError> {
        if self.mode.period() <= DurationNs::ZERO {
            return Err(ProbeError::InvalidPlan("probe period must be positive".into()));
        }
        if let ProbeMode::Burst { count: 0, .. } = self.mode {
            return Err(ProbeError::InvalidPlan("burst count must be at least 1".into()));
        }
        if self.dispatch_lead.is_some_and(|l| l < DurationNs::ZERO) {
            return Err(ProbeError::InvalidPlan("dispatch lead must be non-negative".into()));
        }
        Ok(())
    }

    pub fn lead(&self) -> DurationNs {
        self.dispatch_lead
            .unwrap_or_else(|| DurationNs::from_nanos(self.mode.period().as_nanos() / 2).min(DurationNs::from_secs(1)))
    }

    /// Scheduled times of every probe, starting at `start`.
    pub fn slots(&self, start: TimeInstant, horizon: DurationNs) -> Vec<TimeInstant> {
        match self.mode {
            ProbeMode::Periodic(p) => {
                let n = (horizon.as_nanos() + p.as_nanos() - 1).max(0) / p.as_nanos();
                (0..n).map(|k| start + p * k).collect()
            }
            ProbeMode::Burst { count, period } => (0..count as i64).map(|k| start + period * k).collect(),
        }
    }
}

/// A no-op probe tagged with the operation type it measures for.
pub fn probe_operation(op_type: &str) -> OperationSpec {
    OperationSpec::new("noop").with_param("probe-for", op_type)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GapReason {
    Rejected,
    Lost,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeGap {
    pub slot: usize,
    pub scheduled_time: TimeInstant,
    pub reason: GapReason,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProbeRun {
    /// In schedule order; lost slots are absent.
    pub samples: Vec<EteSample>,
    pub gaps: Vec<ProbeGap>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbeError {
    #[error("invalid probe plan: {0}")]
    InvalidPlan(String),
    #[error("invalid period selection config: {0}")]
    InvalidConfig(String),
    #[error("burst {burst} produced no samples")]
    InsufficientData { burst: usize },
    #[error(transparent)]
    Client(#[from] ClientError),
}

/// Runs `plan` against `target` with the first probe at `start`. For
/// periodic plans, probes cover `[start, start + horizon)`.
pub fn run_probe_plan<T: Transport>(
    client: &mut Client<T>,
    target: ServerHandle,
    plan: &ProbePlan,
    start: TimeInstant,
    horizon: DurationNs,
) -> Result<ProbeRun, ProbeError> {
    plan.validate()?;
    let lead = plan.lead();
    let slots = plan.slots(start, horizon);
    let mut sent: Vec<(usize, TimeInstant, Result<Pending, ClientError>)> = Vec::with_capacity(slots.len());
    for (k, &ts) in slots.iter().enumerate() {
        client.sleep_until(ts - lead)?;
        let sub = Submission {
            record_as: Some(plan.op_type.clone()),
            ..Submission::scheduled(plan.operation.clone(), ts)
        };
        sent.push((k, ts, client.submit(target, sub)));
    }
    let mut run = ProbeRun::default();
    for (slot, ts, pending) in sent {
        let result = pending.and_then(|p| client.wait(&p));
        let gap = |reason| ProbeGap {
            slot,
            scheduled_time: ts,
            reason,
        };
        match result {
            Ok(o) => match o.execution_time {
                Some(te) => run.samples.push(EteSample::new(slot as u64, ts, te)),
                None => run.gaps.push(gap(GapReason::Lost)),
            },
            Err(ClientError::TransportClosed) => return Err(ClientError::TransportClosed.into()),
            Err(ClientError::ScheduleRejected { .. }) => run.gaps.push(gap(GapReason::Rejected)),
            Err(ClientError::Timeout { .. }) => run.gaps.push(gap(GapReason::Lost)),
            Err(e) => run.gaps.push(gap(GapReason::Failed(e.to_string()))),
        }
    }
    Ok(run)
}

/// How the periodic selection compares candidates against the best burst.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PeriodicRule {
    /// Largest `P_k` whose mean ETE is below `(1 + alpha) * E_j`.
    #[default]
    EteComparison,
    /// Largest `P_k` below `(1 + alpha) * P_j`.
    LiteralPeriodComparison,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodSelectionConfig {
    pub m_bursts: usize,
    pub burst_size: usize,
    pub initial_period: DurationNs,
    pub alpha: f64,
    pub rule: PeriodicRule,
    /// Idle time between bursts.
    pub settle: DurationNs,
    pub op_type: String,
}

impl Default for PeriodSelectionConfig {
    fn default() -> Self {
        PeriodSelectionConfig {
            m_bursts: 5,
            burst_size: 4,
            initial_period: DurationNs::from_millis(250),
            alpha: 0.1,
            rule: PeriodicRule::EteComparison,
            settle: DurationNs::from_secs(1),
            op_type: "noop".to_string(),
        }
    }
}

impl PeriodSelectionConfig {
    pub fn validate(&self) -> Result<(), ProbeError> {
        let bad = |m: &str| Err(ProbeError::InvalidConfig(m.to_string()));
        if self.m_bursts < 2 {
            return bad("at least two bursts are needed");
        }
        if self.burst_size == 0 {
            return bad("burst size must be at least 1");
        }
        if self.initial_period <= DurationNs::ZERO {
            return bad("initial period must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if self.settle < DurationNs::ZERO {
            return bad("settle time must be non-negative");
        }
        Ok(())
    }

    /// `P_i = 2^(i-1) * P_1` for `i = 1..=M`.
    pub fn periods(&self) -> Vec<DurationNs> {
        (0..self.m_bursts as u32)
            .map(|i| self.initial_period * (1i64 << i))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BurstMean {
    pub period: DurationNs,
    pub mean_ete_ns: f64,
    pub samples: usize,
}

/// Sends the M bursts and returns each one's mean ETE.
pub fn sweep<T: Transport>(
    client: &mut Client<T>,
    target: ServerHandle,
    cfg: &PeriodSelectionConfig,
) -> Result<Vec<BurstMean>, ProbeError> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.m_bursts);
    let mut start = client.now() + cfg.settle;
    for (i, period) in cfg.periods().into_iter().enumerate() {
        let plan = ProbePlan::new(
            ProbeMode::Burst {
                count: cfg.burst_size,
                period,
            },
            &cfg.op_type,
        );
        let run = run_probe_plan(client, target, &plan, start, DurationNs::ZERO)?;
        if run.samples.is_empty() {
            return Err(ProbeError::InsufficientData { burst: i + 1 });
        }
        let sum: f64 = run.samples.iter().map(|s| s.ete.as_nanos_f64()).sum();
        out.push(BurstMean {
            period,
            mean_ete_ns: sum / run.samples.len() as f64,
            samples: run.samples.len(),
        });
        start = client.now() + cfg.settle;
    }
    Ok(out)
}

/// Index of the smallest mean; ties go to the earliest.
fn argmin(means: &[BurstMean]) -> usize {
    let mut j = 0;
    for (i, m) in means.iter().enumerate() {
        if m.mean_ete_ns < means[j].mean_ete_ns {
            j = i;
        }
    }
    j
}

/// `2 * P_j` for the burst with the lowest mean ETE.
///
/// # Panics
/// If `means` is empty.
pub fn choose_burst_period(means: &[BurstMean]) -> DurationNs {
    means[argmin(means)].period * 2
}

/// # Panics
/// If `means` is empty.
pub fn choose_periodic_period(means: &[BurstMean], alpha: f64, rule: PeriodicRule) -> DurationNs {
    let best = means[argmin(means)];
    means
        .iter()
        .filter(|m| match rule {
            PeriodicRule::EteComparison => m.mean_ete_ns < (1.0 + alpha) * best.mean_ete_ns,
            PeriodicRule::LiteralPeriodComparison => {
                m.period.as_nanos_f64() < (1.0 + alpha) * best.period.as_nanos_f64()
            }
        })
        .map(|m| m.period)
        .max()
        .unwrap_or(best.period)
}

pub fn select_period_burst<T: Transport>(
    client: &mut Client<T>,
    target: ServerHandle,
    cfg: &PeriodSelectionConfig,
) -> Result<DurationNs, ProbeError> {
    Ok(choose_burst_period(&sweep(client, target, cfg)?))
}

pub fn select_period_periodic<T: Transport>(
    client: &mut Client<T>,
    target: ServerHandle,
    cfg: &PeriodSelectionConfig,
) -> Result<DurationNs, ProbeError> {
    Ok(choose_periodic_period(
        &sweep(client, target, cfg)?,
        cfg.alpha,
        cfg.rule,
    ))
}
