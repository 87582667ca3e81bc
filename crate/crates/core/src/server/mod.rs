//! The managed device.
//!
//! [`Server`] is a clock-agnostic state machine: every entry point takes the
//! server's current clock reading, and [`Server::next_wakeup`] tells the driver
//! when to call [`Server::fire_due`] next. The simulation drives it from a
//! virtual clock, the live mode from a 1 ms timer tick.

mod model;
mod ops;

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::protocol::{
    validate_schedule, CancelSchedule, ErrorCode, Message, MessageId, OperationSpec, RangeVerdict, RpcMessage,
    RpcReply, ScheduleNotification, SchedulingRangeConfig, TimeInstant,
};
use crate::rng;

pub use model::{Contention, ExecutionModel, RunDraw};
pub use ops::{Builtin, ServerState, DEFAULT_TOAST};

/// Identifies one client connection at a server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SessionId(pub u32);

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    pub range: SchedulingRangeConfig,
    pub model: ExecutionModel,
    /// Operations that may run at once. With one executor, operations due
    /// together run back to back in arrival order.
    pub executors: usize,
    pub seed: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            range: SchedulingRangeConfig::default(),
            model: ExecutionModel::default(),
            executors: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpState {
    Pending,
    Running,
    Done,
    Cancelled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendingOp {
    pub session: SessionId,
    pub message_id: MessageId,
    pub operation: OperationSpec,
    /// Requested start, or the arrival time for immediate and run-now requests.
    pub scheduled_time: TimeInstant,
    pub get_time: bool,
    pub state: OpState,
    /// `T'_s`, once started.
    pub start_time: Option<TimeInstant>,
    /// `T_e`, once started.
    pub execution_time: Option<TimeInstant>,
    builtin: Builtin,
    spiked: bool,
    seq: u64,
}

/// One completed operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionRecord {
    pub session: SessionId,
    pub message_id: MessageId,
    pub operation: String,
    pub scheduled_time: TimeInstant,
    pub start_time: TimeInstant,
    pub execution_time: TimeInstant,
    pub spiked: bool,
    pub ok: bool,
}

/// A message the server wants delivered to one session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outbound {
    pub session: SessionId,
    pub message: Message,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("server audit failed: {0}")]
pub struct AuditError(pub String);

type OpKey = (SessionId, MessageId);
type Slot = (TimeInstant, u64, OpKey);

#[derive(Debug, Clone)]
pub struct Server {
    config: ServerConfig,
    rng: ChaCha8Rng,
    state: ServerState,
    ops: BTreeMap<OpKey, PendingOp>,
    due: BTreeSet<Slot>,
    running: BTreeSet<Slot>,
    executor_free_at: Vec<TimeInstant>,
    last_start: Option<TimeInstant>,
    /// Every message id seen per session, rpc or cancel.
    seen: BTreeSet<OpKey>,
    rejected: BTreeMap<OpKey, ErrorCode>,
    log: Vec<ExecutionRecord>,
    arrivals: u64,
}

impl Server {
    /// # Panics
    /// If `config.executors` is zero.
    pub fn new(config: ServerConfig) -> Self {
        Server::with_state(config, ServerState::default())
    }

    pub fn with_state(config: ServerConfig, state: ServerState) -> Self {
        assert!(config.executors > 0, "a server needs at least one executor");
        Server {
            rng: rng::stream(config.seed, "execution-model"),
            executor_free_at: vec![TimeInstant::from_nanos(i64::MIN); config.executors],
            config,
            state,
            ops: BTreeMap::new(),
            due: BTreeSet::new(),
            running: BTreeSet::new(),
            last_start: None,
            seen: BTreeSet::new(),
            rejected: BTreeMap::new(),
            log: Vec::new(),
            arrivals: 0,
        }
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn state(&self) -> &ServerState {
        &self.state
    }

    /// Completed operations, ordered by completion time.
    pub fn log(&self) -> &[ExecutionRecord] {
        &self.log
    }

    pub fn op(&self, session: SessionId, id: &MessageId) -> Option<&PendingOp> {
        self.ops.get(&(session, id.clone()))
    }

    pub fn rejected(&self) -> impl Iterator<Item = (&MessageId, &ErrorCode)> + '_ {
        self.rejected.iter().map(|((_, id), code)| (id, code))
    }

    pub fn was_rejected(&self, session: SessionId, id: &MessageId) -> bool {
        self.rejected.contains_key(&(session, id.clone()))
    }

    /// Operations accepted but not yet completed.
    pub fn outstanding(&self) -> usize {
        self.due.len() + self.running.len()
    }

    /// Earliest instant at which [`Server::fire_due`] has work to do.
    pub fn next_wakeup(&self) -> Option<TimeInstant> {
        let due = self.due.first().map(|s| s.0);
        let done = self.running.first().map(|s| s.0);
        match (due, done) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    pub fn handle_message(&mut self, session: SessionId, msg: Message, now: TimeInstant) -> Vec<Outbound> {
        let mut out = self.fire_due(now);
        match msg {
            Message::Rpc(rpc) => out.extend(self.handle_rpc(session, rpc, now)),
            Message::CancelSchedule(c) => {
                let reply = self.handle_cancel(session, c, now);
                out.push(Outbound {
                    session,
                    message: reply.into(),
                });
            }
            // Replies and notifications only flow server to client.
            Message::RpcReply(_) | Message::Notification(_) => {}
        }
        out.extend(self.fire_due(now));
        out
    }

    pub fn handle_rpc(&mut self, session: SessionId, rpc: RpcMessage, now: TimeInstant) -> Vec<Outbound> {
        let key = (session, rpc.message_id.clone());
        let mut out = Vec::new();
        let mut send = |m: Message| out.push(Outbound { session, message: m });

        if !self.seen.insert(key.clone()) {
            send(RpcReply::error(rpc.message_id, ErrorCode::DuplicateMessageId, "message-id already used").into());
            return out;
        }

        let verdict = rpc
            .scheduled_time
            .map(|t| (t, validate_schedule(t, now, &self.config.range)));
        let parsed = Builtin::parse(&rpc.operation);
        let refusal = match (&parsed, verdict) {
            (Err((code, detail)), _) => Some((code.clone(), detail.clone())),
            (Ok(_), Some((t, RangeVerdict::Reject))) => Some((
                ErrorCode::ScheduleOutOfRange,
                format!("scheduled time {t} outside acceptable range at {now}"),
            )),
            _ => None,
        };
        if let Some((code, detail)) = refusal {
            self.rejected.insert(key, code.clone());
            if rpc.notify {
                send(
                    ScheduleNotification {
                        message_id: rpc.message_id.clone(),
                        accepted: false,
                    }
                    .into(),
                );
            }
            send(RpcReply::error(rpc.message_id, code, detail).into());
            return out;
        }

        let builtin = parsed.expect("refusals handled above");
        let start_at = match verdict {
            Some((t, RangeVerdict::Accept)) => t,
            _ => now,
        };
        if rpc.notify {
            send(
                ScheduleNotification {
                    message_id: rpc.message_id.clone(),
                    accepted: true,
                }
                .into(),
            );
        }
        let seq = self.arrivals;
        self.arrivals += 1;
        self.due.insert((start_at, seq, key.clone()));
        self.ops.insert(
            key,
            PendingOp {
                session,
                message_id: rpc.message_id,
                operation: rpc.operation,
                scheduled_time: start_at,
                get_time: rpc.get_time,
                state: OpState::Pending,
                start_time: None,
                execution_time: None,
                builtin,
                spiked: false,
                seq,
            },
        );
        out
    }

    pub fn handle_cancel(&mut self, session: SessionId, cancel: CancelSchedule, _now: TimeInstant) -> RpcReply {
        if !self.seen.insert((session, cancel.message_id.clone())) {
            return RpcReply::error(
                cancel.message_id,
                ErrorCode::DuplicateMessageId,
                "message-id already used",
            );
        }
        let target = (session, cancel.target_id.clone());
        let Some(op) = self.ops.get_mut(&target) else {
            return RpcReply::error(
                cancel.message_id,
                ErrorCode::UnknownMessageId,
                format!("no scheduled rpc {}", cancel.target_id),
            );
        };
        match op.state {
            OpState::Pending => {
                op.state = OpState::Cancelled;
                let slot = (op.scheduled_time, op.seq, target);
                self.due.remove(&slot);
                RpcReply::ok(cancel.message_id)
            }
            OpState::Cancelled => RpcReply::ok(cancel.message_id),
            OpState::Running | OpState::Done => RpcReply::error(
                cancel.message_id,
                ErrorCode::AlreadyExecuted,
                format!("rpc {} already started", cancel.target_id),
            ),
        }
    }

    /// Completes running operations whose end time has passed and starts
    /// every pending operation that is due.
    pub fn fire_due(&mut self, now: TimeInstant) -> Vec<Outbound> {
        let mut out = Vec::new();
        loop {
            let mut progressed = false;
            while let Some(slot) = self.running.first().filter(|s| s.0 <= now).cloned() {
                self.running.remove(&slot);
                out.push(self.complete(&slot.2));
                progressed = true;
            }
            while let Some(slot) = self.due.first().filter(|s| s.0 <= now).cloned() {
                self.due.remove(&slot);
                self.start(slot.2, now);
                progressed = true;
            }
            if !progressed {
                return out;
            }
        }
    }

    fn start(&mut self, key: OpKey, now: TimeInstant) {
        let model = &self.config.model;
        let jitter = model.draw_jitter(&mut self.rng);
        let (executor, free_at) = self
            .executor_free_at
            .iter()
            .copied()
            .enumerate()
            .min_by_key(|&(i, t)| (t, i))
            .expect("at least one executor");
        let start = (now + jitter).max(free_at);
        let spacing = self.last_start.map(|prev| start - prev);
        let draw = model.draw_run(&mut self.rng, spacing);
        let op = self.ops.get_mut(&key).expect("due op is tracked");
        let end = start + draw.run_time + op.builtin.intrinsic_duration();
        op.state = OpState::Running;
        op.start_time = Some(start);
        op.execution_time = Some(end);
        op.spiked = draw.spiked;
        self.executor_free_at[executor] = end;
        self.last_start = Some(self.last_start.map_or(start, |prev| prev.max(start)));
        self.running.insert((end, op.seq, key));
    }

    fn complete(&mut self, key: &OpKey) -> Outbound {
        let op = self.ops.get_mut(key).expect("running op is tracked");
        op.state = OpState::Done;
        let start = op.start_time.expect("started");
        let end = op.execution_time.expect("started");
        let result = self.state.apply(&op.builtin);
        self.log.push(ExecutionRecord {
            session: op.session,
            message_id: op.message_id.clone(),
            operation: op.operation.name.clone(),
            scheduled_time: op.scheduled_time,
            start_time: start,
            execution_time: end,
            spiked: op.spiked,
            ok: result.is_ok(),
        });
        let reply = match result {
            Ok(data) => RpcReply {
                execution_time: op.get_time.then_some(end),
                data,
                ..RpcReply::ok(op.message_id.clone())
            },
            Err((code, detail)) => RpcReply::error(op.message_id.clone(), code, detail),
        };
        Outbound {
            session: op.session,
            message: reply.into(),
        }
    }

    /// Checks the log and bookkeeping invariants: every accepted or refused
    /// rpc is in exactly one of {executed, cancelled, rejected, outstanding},
    /// no rejected id was executed, and the log is ordered by completion time.
    pub fn audit(&self) -> Result<(), AuditError> {
        let executed: BTreeSet<OpKey> = self.log.iter().map(|r| (r.session, r.message_id.clone())).collect();
        if executed.len() != self.log.len() {
            return Err(AuditError("an id was executed twice".into()));
        }
        if let Some(pair) = self.log.windows(2).find(|w| w[0].execution_time > w[1].execution_time) {
            return Err(AuditError(format!("log out of order at {}", pair[1].message_id)));
        }
        for key in self.rejected.keys() {
            if executed.contains(key) || self.ops.contains_key(key) {
                return Err(AuditError(format!("rejected rpc {} was scheduled", key.1)));
            }
        }
        for (key, op) in &self.ops {
            let in_log = executed.contains(key);
            let ok = match op.state {
                OpState::Done => in_log,
                OpState::Cancelled | OpState::Pending | OpState::Running => !in_log,
            };
            if !ok {
                return Err(AuditError(format!(
                    "rpc {} in state {:?} disagrees with the log",
                    key.1, op.state
                )));
            }
        }
        if executed.iter().any(|k| !self.ops.contains_key(k)) {
            return Err(AuditError("log holds an untracked id".into()));
        }
        Ok(())
    }
}
