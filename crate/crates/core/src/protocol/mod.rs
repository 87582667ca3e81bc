//! Message vocabulary shared by client and server: scheduled RPCs, replies
//! carrying execution times, schedule notifications and cancellations.

mod codec;
mod range;
mod time;

use std::collections::BTreeMap;
use std::fmt;

pub use codec::{decode, encode, encode_into, CodecError, FrameDecoder, MAX_FRAME_BYTES};
pub use range::{validate_schedule, RangeVerdict, SchedulingRangeConfig};
pub use time::{DurationNs, TimeInstant};

/// Opaque, non-empty message identifier, unique within a client session.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MessageId(String);

impl MessageId {
    /// Returns `None` for the empty string.
    pub fn new(value: impl Into<String>) -> Option<Self> {
        let value = value.into();
        (!value.is_empty()).then_some(MessageId(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Operation name plus string parameters.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OperationSpec {
    pub name: String,
    pub params: BTreeMap<String, String>,
}

impl OperationSpec {
    pub fn new(name: impl Into<String>) -> Self {
        OperationSpec {
            name: name.into(),
            params: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.params.insert(key.into(), value.into());
        self
    }

    pub fn param(&self, key: &str) -> Option<&str> {
        self.params.get(key).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RpcMessage {
    pub message_id: MessageId,
    pub operation: OperationSpec,
    /// Absent means "execute on receipt".
    pub scheduled_time: Option<TimeInstant>,
    /// When set, an ok reply carries `execution_time`.
    pub get_time: bool,
    /// When set, the server acknowledges the schedule with a notification.
    pub notify: bool,
}

impl RpcMessage {
    pub fn immediate(message_id: MessageId, operation: OperationSpec) -> Self {
        RpcMessage {
            message_id,
            operation,
            scheduled_time: None,
            get_time: false,
            notify: false,
        }
    }

    pub fn scheduled(message_id: MessageId, operation: OperationSpec, at: TimeInstant) -> Self {
        RpcMessage {
            scheduled_time: Some(at),
            ..RpcMessage::immediate(message_id, operation)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ErrorCode {
    ScheduleOutOfRange,
    UnknownOperation,
    InvalidParams,
    UnknownKey,
    AlreadyExecuted,
    UnknownMessageId,
    DuplicateMessageId,
    /// Any code this implementation does not know; kept verbatim.
    Other(String),
}

impl ErrorCode {
    pub fn as_str(&self) -> &str {
        match self {
            ErrorCode::ScheduleOutOfRange => "schedule-out-of-range",
            ErrorCode::UnknownOperation => "unknown-operation",
            ErrorCode::InvalidParams => "invalid-params",
            ErrorCode::UnknownKey => "unknown-key",
            ErrorCode::AlreadyExecuted => "already-executed",
            ErrorCode::UnknownMessageId => "unknown-message-id",
            ErrorCode::DuplicateMessageId => "duplicate-message-id",
            ErrorCode::Other(s) => s,
        }
    }

    pub fn parse(s: &str) -> ErrorCode {
        match s {
            "schedule-out-of-range" => ErrorCode::ScheduleOutOfRange,
            "unknown-operation" => ErrorCode::UnknownOperation,
            "invalid-params" => ErrorCode::InvalidParams,
            "unknown-key" => ErrorCode::UnknownKey,
            "already-executed" => ErrorCode::AlreadyExecuted,
            "unknown-message-id" => ErrorCode::UnknownMessageId,
            "duplicate-message-id" => ErrorCode::DuplicateMessageId,
            other => ErrorCode::Other(other.to_string()),
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplyStatus {
    Ok,
    Error { code: ErrorCode, detail: String },
}

impl ReplyStatus {
    pub fn error(code: ErrorCode, detail: impl Into<String>) -> Self {
        ReplyStatus::Error {
            code,
            detail: detail.into(),
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, ReplyStatus::Ok)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RpcReply {
    pub message_id: MessageId,
    pub status: ReplyStatus,
    /// Completion time of the operation; only on ok replies to `get_time` requests.
    pub execution_time: Option<TimeInstant>,
    /// Operation output, e.g. the value read by `get-value`.
    pub data: BTreeMap<String, String>,
}

impl RpcReply {
    pub fn ok(message_id: MessageId) -> Self {
        RpcReply {
            message_id,
            status: ReplyStatus::Ok,
            execution_time: None,
            data: BTreeMap::new(),
        }
    }

    pub fn error(message_id: MessageId, code: ErrorCode, detail: impl Into<String>) -> Self {
        RpcReply {
            message_id,
            status: ReplyStatus::error(code, detail),
            execution_time: None,
            data: BTreeMap::new(),
        }
    }

    pub fn error_code(&self) -> Option<&ErrorCode> {
        match &self.status {
            ReplyStatus::Ok => None,
            ReplyStatus::Error { code, .. } => Some(code),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleNotification {
    pub message_id: MessageId,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CancelSchedule {
    pub message_id: MessageId,
    pub target_id: MessageId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Rpc(RpcMessage),
    RpcReply(RpcReply),
    Notification(ScheduleNotification),
    CancelSchedule(CancelSchedule),
}

impl Message {
    pub fn message_id(&self) -> &MessageId {
        match self {
            Message::Rpc(m) => &m.message_id,
            Message::RpcReply(m) => &m.message_id,
            Message::Notification(m) => &m.message_id,
            Message::CancelSchedule(m) => &m.message_id,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Message::Rpc(_) => "rpc",
            Message::RpcReply(_) => "rpc-reply",
            Message::Notification(_) => "notification",
            Message::CancelSchedule(_) => "cancel-schedule",
        }
    }
}

impl From<RpcMessage> for Message {
    fn from(m: RpcMessage) -> Self {
        Message::Rpc(m)
    }
}

impl From<RpcReply> for Message {
    fn from(m: RpcReply) -> Self {
        Message::RpcReply(m)
    }
}

impl From<ScheduleNotification> for Message {
    fn from(m: ScheduleNotification) -> Self {
        Message::Notification(m)
    }
}

impl From<CancelSchedule> for Message {
    fn from(m: CancelSchedule) -> Self {
        Message::CancelSchedule(m)
    }
}
