//! Client side of the scheduling loop.
//!
//! For each operation the client predicts the server's ETE, sends the rpc to
//! start at `T_s = T_d - prediction`, and feeds the reported completion time
//! back into the predictor for that (server, operation type).
//!
//! A [`Client`] is generic over its [`Transport`]: the simulation supplies a
//! virtual-time network, the live mode real TCP connections. All waiting goes
//! through [`Transport::recv_until`], so a virtual-time transport advances its
//! clock exactly as far as the client waits.

mod coord;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::prediction::{Algorithm, EteSample, Prediction, Predictor, DEFAULT_WINDOW};
use crate::protocol::{
    validate_schedule, CancelSchedule, DurationNs, ErrorCode, Message, MessageId, OperationSpec, RangeVerdict,
    ReplyStatus, RpcMessage, RpcReply, SchedulingRangeConfig, TimeInstant,
};

pub use coord::{Alignment, CommitOutcome, CommitPlan, SnapshotValue};

/// Index of a server known to the transport.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ServerHandle(pub usize);

impl fmt::Display for ServerHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "server#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("transport closed")]
    Closed,
    #[error("no such server {0}")]
    UnknownServer(ServerHandle),
    #[error("io error: {0}")]
    Io(String),
}

pub trait Transport {
    /// The client's clock.
    fn now(&self) -> TimeInstant;

    fn send(&mut self, to: ServerHandle, msg: Message) -> Result<(), TransportError>;

    /// Next inbound message, or `None` once `deadline` has passed without one.
    fn recv_until(&mut self, deadline: TimeInstant) -> Result<Option<(ServerHandle, Message)>, TransportError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("{server} rejected schedule{}: {detail}", if *.local { " (local range check)" } else { "" })]
    ScheduleRejected {
        server: ServerHandle,
        message_id: Option<MessageId>,
        local: bool,
        detail: String,
    },
    #[error("{server}: no reply to {message_id} before deadline")]
    Timeout {
        server: ServerHandle,
        message_id: MessageId,
    },
    #[error("transport closed")]
    TransportClosed,
    #[error("{server} replied {code} to {message_id}: {detail}")]
    Remote {
        server: ServerHandle,
        message_id: MessageId,
        code: ErrorCode,
        detail: String,
    },
    #[error("commit time is {lead} ahead, need more than {required}")]
    CommitTooSoon { lead: DurationNs, required: DurationNs },
    #[error("abort not confirmed: executed on {executed:?}, unconfirmed on {unconfirmed:?}")]
    AbortFailed {
        executed: Vec<ServerHandle>,
        unconfirmed: Vec<ServerHandle>,
    },
}

impl From<TransportError> for ClientError {
    fn from(_: TransportError) -> Self {
        ClientError::TransportClosed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientConfig {
    /// Algorithm used when a request does not name one.
    pub algorithm: Algorithm,
    pub window: usize,
    /// How long past the scheduled time to wait for a reply.
    pub reply_timeout: DurationNs,
    /// Lower bound of the atomic-commit cancellation margin.
    pub min_cancel_margin: DurationNs,
    /// Assumed round trip before any has been measured.
    pub rtt_bound: DurationNs,
    /// Apply the local range check to raw schedules as well.
    pub precheck_raw: bool,
    pub id_prefix: String,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            algorithm: Algorithm::FtAverage,
            window: DEFAULT_WINDOW,
            reply_timeout: DurationNs::from_secs(10),
            min_cancel_margin: DurationNs::from_millis(200),
            rtt_bound: DurationNs::from_millis(50),
            precheck_raw: false,
            id_prefix: "m".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleRequest {
    pub target: ServerHandle,
    pub operation: OperationSpec,
    /// `T_d`: when the operation should complete.
    pub desired_completion: TimeInstant,
    pub algorithm: Option<Algorithm>,
    pub want_notification: bool,
}

impl ScheduleRequest {
    pub fn new(target: ServerHandle, operation: OperationSpec, desired_completion: TimeInstant) -> Self {
        ScheduleRequest {
            target,
            operation,
            desired_completion,
            algorithm: None,
            want_notification: false,
        }
    }

    pub fn with_algorithm(mut self, algorithm: Algorithm) -> Self {
        self.algorithm = Some(algorithm);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleOutcome {
    pub server: ServerHandle,
    pub message_id: MessageId,
    /// The `T_s` actually sent; `None` for immediate rpcs.
    pub scheduled_time: Option<TimeInstant>,
    /// `T_e` from the reply.
    pub execution_time: Option<TimeInstant>,
    pub prediction_used: DurationNs,
    /// `|prediction_used - (T_e - T_s)|`.
    pub prediction_error: Option<DurationNs>,
    pub data: BTreeMap<String, String>,
}

impl ScheduleOutcome {
    pub fn ete(&self) -> Option<DurationNs> {
        Some(self.execution_time? - self.scheduled_time?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CancelResult {
    Cancelled,
    AlreadyExecuted,
    Unknown,
}

/// What to send in one rpc.
#[derive(Debug, Clone, PartialEq)]
pub struct Submission {
    pub operation: OperationSpec,
    pub scheduled_time: Option<TimeInstant>,
    pub get_time: bool,
    pub notify: bool,
    /// Predictor key that the measured ETE is fed into, if any.
    pub record_as: Option<String>,
    pub prediction_used: DurationNs,
}

impl Submission {
    pub fn scheduled(operation: OperationSpec, at: TimeInstant) -> Self {
        Submission {
            operation,
            scheduled_time: Some(at),
            get_time: true,
            notify: false,
            record_as: None,
            prediction_used: DurationNs::ZERO,
        }
    }
}

/// A sent rpc awaiting its reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pending {
    pub server: ServerHandle,
    pub message_id: MessageId,
    pub sent_at: TimeInstant,
    pub deadline: TimeInstant,
}

/// State of a scheduled rpc's acknowledgment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ack {
    Waiting,
    Accepted,
    Refused,
}

#[derive(Debug, Clone)]
struct Inflight {
    server: ServerHandle,
    sent_at: TimeInstant,
    scheduled_time: Option<TimeInstant>,
    record_as: Option<String>,
    prediction_used: DurationNs,
}

#[derive(Debug)]
struct Arrived {
    inflight: Inflight,
    reply: RpcReply,
}

pub struct Client<T> {
    transport: T,
    config: ClientConfig,
    next_id: u64,
    ranges: BTreeMap<ServerHandle, SchedulingRangeConfig>,
    predictors: BTreeMap<(ServerHandle, String), Predictor>,
    inflight: BTreeMap<MessageId, Inflight>,
    replies: BTreeMap<MessageId, Arrived>,
    notifications: BTreeMap<MessageId, bool>,
    rtt_estimate: Option<DurationNs>,
    sample_seq: u64,
}

impl<T: Transport> Client<T> {
    pub fn new(transport: T, config: ClientConfig) -> Self {
        Client {
            transport,
            config,
            next_id: 1,
            ranges: BTreeMap::new(),
            predictors: BTreeMap::new(),
            inflight: BTreeMap::new(),
            replies: BTreeMap::new(),
            notifications: BTreeMap::new(),
            rtt_estimate: None,
            sample_seq: 0,
        }
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    pub fn transport_mut(&mut self) -> &mut T {
        &mut self.transport
    }

    pub fn into_transport(self) -> T {
        self.transport
    }

    pub fn now(&self) -> TimeInstant {
        self.transport.now()
    }

    /// Enables the local range check for `server`.
    pub fn register_range(&mut self, server: ServerHandle, range: SchedulingRangeConfig) {
        self.ranges.insert(server, range);
    }

    /// Largest round trip observed between an rpc and its notification.
    pub fn rtt_estimate(&self) -> Option<DurationNs> {
        self.rtt_estimate
    }

    pub fn predictor(&self, server: ServerHandle, op_type: &str) -> Option<&Predictor> {
        self.predictors.get(&(server, op_type.to_string()))
    }

    pub fn predictor_mut(&mut self, server: ServerHandle, op_type: &str) -> &mut Predictor {
        let (algorithm, window) = (self.config.algorithm, self.config.window);
        self.predictors
            .entry((server, op_type.to_string()))
            .or_insert_with(|| Predictor::new(algorithm, window))
    }

    /// Drops all samples for one (server, operation type).
    pub fn reset_predictor(&mut self, server: ServerHandle, op_type: &str) {
        self.predictors.remove(&(server, op_type.to_string()));
    }

    pub fn predict(&self, server: ServerHandle, op_type: &str, algorithm: Option<Algorithm>) -> Prediction {
        let algorithm = algorithm.unwrap_or(self.config.algorithm);
        match self.predictor(server, op_type) {
            Some(p) => p.predict_with(algorithm),
            None => crate::prediction::predict_baseline(),
        }
    }

    fn fresh_id(&mut self) -> MessageId {
        let id = MessageId::new(format!("{}{}", self.config.id_prefix, self.next_id))
            .expect("prefix plus counter is non-empty");
        self.next_id += 1;
        id
    }

    /// Sends one rpc without waiting.
    pub fn submit(&mut self, server: ServerHandle, sub: Submission) -> Result<Pending, ClientError> {
        let message_id = self.fresh_id();
        let now = self.now();
        let rpc = RpcMessage {
            message_id: message_id.clone(),
            operation: sub.operation,
            scheduled_time: sub.scheduled_time,
            get_time: sub.get_time,
            notify: sub.notify,
        };
        self.transport.send(server, rpc.into())?;
        self.inflight.insert(
            message_id.clone(),
            Inflight {
                server,
                sent_at: now,
                scheduled_time: sub.scheduled_time,
                record_as: sub.record_as,
                prediction_used: sub.prediction_used,
            },
        );
        let base = sub.scheduled_time.map_or(now, |t| t.max(now));
        Ok(Pending {
            server,
            message_id,
            sent_at: now,
            deadline: base + self.config.reply_timeout,
        })
    }

    /// Blocks (in transport time) until the reply for `pending` arrives.
    pub fn wait(&mut self, pending: &Pending) -> Result<ScheduleOutcome, ClientError> {
        self.wait_until(pending, pending.deadline)
    }

    pub fn wait_until(&mut self, pending: &Pending, deadline: TimeInstant) -> Result<ScheduleOutcome, ClientError> {
        loop {
            if let Some(arrived) = self.replies.remove(&pending.message_id) {
                return outcome(arrived);
            }
            if !self.pump(deadline)? {
                self.inflight.remove(&pending.message_id);
                return Err(ClientError::Timeout {
                    server: pending.server,
                    message_id: pending.message_id.clone(),
                });
            }
        }
    }

    /// Acknowledgment state of a notify-requested rpc.
    pub fn ack(&self, pending: &Pending) -> Ack {
        match self.notifications.get(&pending.message_id) {
            Some(true) => Ack::Accepted,
            Some(false) => Ack::Refused,
            None => match self.replies.get(&pending.message_id) {
                Some(a) if a.reply.status.is_ok() => Ack::Accepted,
                Some(_) => Ack::Refused,
                None => Ack::Waiting,
            },
        }
    }

    /// Processes inbound traffic until `deadline`.
    pub fn sleep_until(&mut self, deadline: TimeInstant) -> Result<(), ClientError> {
        while self.pump(deadline)? {}
        Ok(())
    }

    /// Handles one inbound message; `false` once the deadline passed.
    fn pump(&mut self, deadline: TimeInstant) -> Result<bool, ClientError> {
        match self.transport.recv_until(deadline)? {
            None => Ok(false),
            Some((from, msg)) => {
                self.dispatch(from, msg);
                Ok(true)
            }
        }
    }

    fn dispatch(&mut self, from: ServerHandle, msg: Message) {
        match msg {
            Message::RpcReply(reply) => {
                let Some(inflight) = self.inflight.remove(&reply.message_id) else {
                    return;
                };
                if inflight.server != from {
                    self.inflight.insert(reply.message_id.clone(), inflight);
                    return;
                }
                if let (Some(key), Some(ts), Some(te), true) = (
                    &inflight.record_as,
                    inflight.scheduled_time,
                    reply.execution_time,
                    reply.status.is_ok(),
                ) {
                    let sample = EteSample::new(self.sample_seq, ts, te);
                    self.sample_seq += 1;
                    self.predictor_mut(from, &key.clone())
                        .observe(sample)
                        .expect("client sequence numbers are monotone");
                }
                self.replies
                    .insert(reply.message_id.clone(), Arrived { inflight, reply });
            }
            Message::Notification(n) => {
                if let Some(inflight) = self.inflight.get(&n.message_id) {
                    if inflight.server == from {
                        let rtt = self.now() - inflight.sent_at;
                        self.rtt_estimate = Some(self.rtt_estimate.map_or(rtt, |r| r.max(rtt)));
                        self.notifications.insert(n.message_id, n.accepted);
                    }
                }
            }
            // Servers never send these.
            Message::Rpc(_) | Message::CancelSchedule(_) => {}
        }
    }

    /// Prediction-based scheduling: sends the rpc to start at
    /// `desired_completion - predicted ETE` without waiting for the reply.
    pub fn begin_schedule(&mut self, req: &ScheduleRequest) -> Result<Pending, ClientError> {
        let op_type = req.operation.name.clone();
        let prediction = self.predict(req.target, &op_type, req.algorithm);
        let scheduled = req.desired_completion - prediction.value;
        if let Some(range) = self.ranges.get(&req.target) {
            if validate_schedule(scheduled, self.now(), range) == RangeVerdict::Reject {
                return Err(ClientError::ScheduleRejected {
                    server: req.target,
                    message_id: None,
                    local: true,
                    detail: format!("start {scheduled} outside the server's range"),
                });
            }
        }
        self.submit(
            req.target,
            Submission {
                operation: req.operation.clone(),
                scheduled_time: Some(scheduled),
                get_time: true,
                notify: req.want_notification,
                record_as: Some(op_type),
                prediction_used: prediction.value,
            },
        )
    }

    pub fn schedule_at_completion(&mut self, req: &ScheduleRequest) -> Result<ScheduleOutcome, ClientError> {
        let pending = self.begin_schedule(req)?;
        self.wait(&pending)
    }

    /// Sends exactly `scheduled_time`, without prediction or feedback.
    pub fn schedule_raw(
        &mut self,
        target: ServerHandle,
        operation: OperationSpec,
        scheduled_time: TimeInstant,
        get_time: bool,
        want_notification: bool,
    ) -> Result<ScheduleOutcome, ClientError> {
        if self.config.precheck_raw {
            if let Some(range) = self.ranges.get(&target) {
                if validate_schedule(scheduled_time, self.now(), range) == RangeVerdict::Reject {
                    return Err(ClientError::ScheduleRejected {
                        server: target,
                        message_id: None,
                        local: true,
                        detail: format!("start {scheduled_time} outside the server's range"),
                    });
                }
            }
        }
        let pending = self.submit(
            target,
            Submission {
                get_time,
                notify: want_notification,
                ..Submission::scheduled(operation, scheduled_time)
            },
        )?;
        self.wait(&pending)
    }

    /// Runs `operation` on receipt.
    pub fn execute(&mut self, target: ServerHandle, operation: OperationSpec) -> Result<ScheduleOutcome, ClientError> {
        let pending = self.submit(
            target,
            Submission {
                scheduled_time: None,
                ..Submission::scheduled(operation, TimeInstant::EPOCH)
            },
        )?;
        self.wait(&pending)
    }

    /// Sends a cancel-schedule without waiting.
    pub fn submit_cancel(&mut self, target: ServerHandle, target_id: &MessageId) -> Result<Pending, ClientError> {
        let message_id = self.fresh_id();
        let now = self.now();
        self.transport.send(
            target,
            CancelSchedule {
                message_id: message_id.clone(),
                target_id: target_id.clone(),
            }
            .into(),
        )?;
        self.inflight.insert(
            message_id.clone(),
            Inflight {
                server: target,
                sent_at: now,
                scheduled_time: None,
                record_as: None,
                prediction_used: DurationNs::ZERO,
            },
        );
        Ok(Pending {
            server: target,
            message_id,
            sent_at: now,
            deadline: now + self.config.reply_timeout,
        })
    }

    pub fn wait_cancel(
        &mut self,
        pending: &Pending,
        target_id: &MessageId,
        deadline: TimeInstant,
    ) -> Result<CancelResult, ClientError> {
        let result = match self.wait_until(pending, deadline) {
            Ok(_) => CancelResult::Cancelled,
            Err(ClientError::Remote {
                code: ErrorCode::AlreadyExecuted,
                ..
            }) => CancelResult::AlreadyExecuted,
            Err(ClientError::Remote {
                code: ErrorCode::UnknownMessageId,
                ..
            }) => CancelResult::Unknown,
            Err(e) => return Err(e),
        };
        if result == CancelResult::Cancelled {
            self.inflight.remove(target_id);
        }
        Ok(result)
    }

    pub fn cancel(&mut self, target: ServerHandle, target_id: &MessageId) -> Result<CancelResult, ClientError> {
        let pending = self.submit_cancel(target, target_id)?;
        let deadline = pending.deadline;
        self.wait_cancel(&pending, target_id, deadline)
    }
}

fn outcome(arrived: Arrived) -> Result<ScheduleOutcome, ClientError> {
    let Arrived { inflight, reply } = arrived;
    match reply.status {
        ReplyStatus::Ok => {
            let prediction_error = match (inflight.scheduled_time, reply.execution_time) {
                (Some(ts), Some(te)) => Some((inflight.prediction_used - (te - ts)).abs()),
                _ => None,
            };
            Ok(ScheduleOutcome {
                server: inflight.server,
                message_id: reply.message_id,
                scheduled_time: inflight.scheduled_time,
                execution_time: reply.execution_time,
                prediction_used: inflight.prediction_used,
                prediction_error,
                data: reply.data,
            })
        }
        ReplyStatus::Error {
            code: ErrorCode::ScheduleOutOfRange,
            detail,
        } => Err(ClientError::ScheduleRejected {
            server: inflight.server,
            message_id: Some(reply.message_id),
            local: false,
            detail,
        }),
        ReplyStatus::Error { code, detail } => Err(ClientError::Remote {
            server: inflight.server,
            message_id: reply.message_id,
            code,
            detail,
        }),
    }
}
