//! Multi-server coordination built on scheduled rpcs.

use std::collections::BTreeMap;

use super::{Ack, CancelResult, Client, ClientError, Pending, ScheduleOutcome, ServerHandle, Submission, Transport};
use crate::protocol::{DurationNs, OperationSpec, TimeInstant};

/// Which end of the operation lands on the common instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Alignment {
    /// All servers start at `T`.
    #[default]
    Start,
    /// All servers are predicted to complete at `T`.
    Completion,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotValue {
    pub value: String,
    pub execution_time: Option<TimeInstant>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommitPlan {
    pub participants: Vec<ServerHandle>,
    pub commit_time: TimeInstant,
    pub operation: OperationSpec,
}

impl CommitPlan {
    pub fn new(participants: Vec<ServerHandle>, commit_time: TimeInstant) -> Self {
        CommitPlan {
            participants,
            commit_time,
            operation: OperationSpec::new("commit"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CommitOutcome {
    Committed {
        execution_times: BTreeMap<ServerHandle, Option<TimeInstant>>,
    },
    /// No participant executed the commit.
    Aborted { reason: String, refused: Vec<ServerHandle> },
}

impl<T: Transport> Client<T> {
    /// Runs `operation` on every target around instant `at`.
    pub fn coordinated_operation(
        &mut self,
        targets: &[ServerHandle],
        operation: &OperationSpec,
        at: TimeInstant,
        alignment: Alignment,
    ) -> Vec<(ServerHandle, Result<ScheduleOutcome, ClientError>)> {
        let mut sent = Vec::with_capacity(targets.len());
        for &target in targets {
            let prediction = match alignment {
                Alignment::Start => DurationNs::ZERO,
                Alignment::Completion => self.predict(target, &operation.name, None).value,
            };
            let sub = Submission {
                record_as: Some(operation.name.clone()),
                prediction_used: prediction,
                ..Submission::scheduled(operation.clone(), at - prediction)
            };
            sent.push((target, self.submit(target, sub)));
        }
        sent.into_iter()
            .map(|(target, pending)| (target, pending.and_then(|p| self.wait(&p))))
            .collect()
    }

    /// Reads `key` from every target's running set at instant `at`.
    pub fn coordinated_snapshot(
        &mut self,
        targets: &[ServerHandle],
        key: &str,
        at: TimeInstant,
    ) -> Vec<(ServerHandle, Result<SnapshotValue, ClientError>)> {
        let op = OperationSpec::new("get-value").with_param("key", key);
        self.coordinated_operation(targets, &op, at, Alignment::Start)
            .into_iter()
            .map(|(target, r)| {
                let r = r.map(|o| SnapshotValue {
                    value: o.data.get("value").cloned().unwrap_or_default(),
                    execution_time: o.execution_time,
                });
                (target, r)
            })
            .collect()
    }

    /// Margin before the commit instant by which every participant must
    /// have acknowledged: twice the worst observed round trip, floored.
    pub fn cancel_margin(&self) -> DurationNs {
        let rtt = self.rtt_estimate().unwrap_or(self.config.rtt_bound);
        (rtt * 2).max(self.config.min_cancel_margin)
    }

    /// All-or-nothing execution of `plan.operation` at `plan.commit_time`.
    ///
    /// Every participant is asked for a schedule notification. If all accept
    /// before `T - margin` the commit stands; otherwise every accepted or
    /// silent participant is cancelled, and the cancels must be confirmed
    /// before `T`.
    pub fn atomic_commit(&mut self, plan: &CommitPlan) -> Result<CommitOutcome, ClientError> {
        let t = plan.commit_time;
        let margin = self.cancel_margin();
        let rtt = self.rtt_estimate().unwrap_or(self.config.rtt_bound);
        let required = rtt + margin;
        let lead = t - self.now();
        if lead <= required {
            return Err(ClientError::CommitTooSoon { lead, required });
        }

        let mut pendings: Vec<(ServerHandle, Pending)> = Vec::new();
        let mut send_failed = Vec::new();
        for &p in &plan.participants {
            let sub = Submission {
                notify: true,
                ..Submission::scheduled(plan.operation.clone(), t)
            };
            match self.submit(p, sub) {
                Ok(pending) => pendings.push((p, pending)),
                Err(_) => send_failed.push(p),
            }
        }

        let decide_by = t - margin;
        let mut refused: Vec<ServerHandle> = send_failed.clone();
        let all_accepted = loop {
            let acks: Vec<Ack> = pendings.iter().map(|(_, p)| self.ack(p)).collect();
            refused.extend(
                pendings
                    .iter()
                    .zip(&acks)
                    .filter(|(_, a)| **a == Ack::Refused)
                    .map(|((s, _), _)| *s),
            );
            if !refused.is_empty() {
                break false;
            }
            if acks.iter().all(|a| *a == Ack::Accepted) {
                break true;
            }
            if !self.pump(decide_by)? {
                break false;
            }
        };
        refused.sort();
        refused.dedup();

        if all_accepted {
            let mut execution_times = BTreeMap::new();
            for (server, pending) in &pendings {
                let te = self.wait(pending).ok().and_then(|o| o.execution_time);
                execution_times.insert(*server, te);
            }
            return Ok(CommitOutcome::Committed { execution_times });
        }

        let mut cancels = Vec::new();
        for (server, pending) in &pendings {
            if refused.contains(server) {
                continue;
            }
            match self.submit_cancel(*server, &pending.message_id) {
                Ok(c) => cancels.push((*server, pending.message_id.clone(), Some(c))),
                Err(_) => cancels.push((*server, pending.message_id.clone(), None)),
            }
        }
        let mut executed = Vec::new();
        let mut unconfirmed = Vec::new();
        for (server, target_id, cancel) in cancels {
            let Some(cancel) = cancel else {
                unconfirmed.push(server);
                continue;
            };
            match self.wait_cancel(&cancel, &target_id, t) {
                Ok(CancelResult::Cancelled | CancelResult::Unknown) => {}
                Ok(CancelResult::AlreadyExecuted) => executed.push(server),
                Err(_) => unconfirmed.push(server),
            }
        }
        if !executed.is_empty() || !unconfirmed.is_empty() {
            return Err(ClientError::AbortFailed { executed, unconfirmed });
        }
        let reason = if refused.is_empty() {
            "not every participant acknowledged before the decision deadline".to_string()
        } else {
            format!("{} participant(s) refused the schedule", refused.len())
        };
        Ok(CommitOutcome::Aborted { reason, refused })
    }
}
