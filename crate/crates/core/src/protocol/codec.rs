//! Newline-delimited JSON framing.
//!
//! One UTF-8 JSON object per line, at most [`MAX_FRAME_BYTES`] including the
//! terminating newline. Timestamps are integer nanoseconds since the epoch.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;

use super::{
    CancelSchedule, ErrorCode, Message, MessageId, OperationSpec, ReplyStatus, RpcMessage, RpcReply,
    ScheduleNotification, TimeInstant,
};

pub const MAX_FRAME_BYTES: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("unknown message type {0:?}")]
    UnknownType(String),
    #[error("missing field {0:?}")]
    MissingField(&'static str),
    #[error("invalid value for field {field:?}: {reason}")]
    InvalidField { field: &'static str, reason: String },
}

#[derive(Serialize)]
struct RpcFrame<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    #[serde(rename = "message-id")]
    message_id: &'a str,
    op: &'a str,
    params: &'a BTreeMap<String, String>,
    #[serde(rename = "scheduled-time", skip_serializing_if = "Option::is_none")]
    scheduled_time: Option<i64>,
    #[serde(rename = "get-time", skip_serializing_if = "is_false")]
    get_time: bool,
    #[serde(skip_serializing_if = "is_false")]
    notify: bool,
}

#[derive(Serialize)]
struct ReplyFrame<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    #[serde(rename = "message-id")]
    message_id: &'a str,
    status: &'static str,
    #[serde(rename = "error-code", skip_serializing_if = "Option::is_none")]
    error_code: Option<&'a str>,
    #[serde(rename = "error-message", skip_serializing_if = "Option::is_none")]
    error_message: Option<&'a str>,
    #[serde(rename = "execution-time", skip_serializing_if = "Option::is_none")]
    execution_time: Option<i64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    data: &'a BTreeMap<String, String>,
}

#[derive(Serialize)]
struct NotificationFrame<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    #[serde(rename = "message-id")]
    message_id: &'a str,
    accepted: bool,
}

#[derive(Serialize)]
struct CancelFrame<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    #[serde(rename = "message-id")]
    message_id: &'a str,
    #[serde(rename = "target-id")]
    target_id: &'a str,
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// Appends one encoded frame, newline included, to `out`.
pub fn encode_into(msg: &Message, out: &mut Vec<u8>) {
    let written = match msg {
        Message::Rpc(m) => serde_json::to_writer(
            &mut *out,
            &RpcFrame {
                kind: "rpc",
                message_id: m.message_id.as_str(),
                op: &m.operation.name,
                params: &m.operation.params,
                scheduled_time: m.scheduled_time.map(TimeInstant::as_nanos),
                get_time: m.get_time,
                notify: m.notify,
            },
        ),
        Message::RpcReply(m) => {
            let (status, code, detail) = match &m.status {
                ReplyStatus::Ok => ("ok", None, None),
                ReplyStatus::Error { code, detail } => (
                    "error",
                    Some(code.as_str()),
                    (!detail.is_empty()).then_some(detail.as_str()),
                ),
            };
            serde_json::to_writer(
                &mut *out,
                &ReplyFrame {
                    kind: "rpc-reply",
                    message_id: m.message_id.as_str(),
                    status,
                    error_code: code,
                    error_message: detail,
                    execution_time: m.execution_time.map(TimeInstant::as_nanos),
                    data: &m.data,
                },
            )
        }
        Message::Notification(m) => serde_json::to_writer(
            &mut *out,
            &NotificationFrame {
                kind: "notification",
                message_id: m.message_id.as_str(),
                accepted: m.accepted,
            },
        ),
        Message::CancelSchedule(m) => serde_json::to_writer(
            &mut *out,
            &CancelFrame {
                kind: "cancel-schedule",
                message_id: m.message_id.as_str(),
                target_id: m.target_id.as_str(),
            },
        ),
    };
    // Serializing string maps and integers into a Vec cannot fail.
    written.expect("in-memory JSON serialization");
    out.push(b'\n');
}

pub fn encode(msg: &Message) -> Vec<u8> {
    let mut out = Vec::with_capacity(128);
    encode_into(msg, &mut out);
    out
}

/// Decodes exactly one newline-terminated frame.
pub fn decode(frame: &[u8]) -> Result<Message, CodecError> {
    if frame.len() > MAX_FRAME_BYTES {
        return Err(CodecError::MalformedFrame(format!(
            "frame of {} bytes exceeds {MAX_FRAME_BYTES}",
            frame.len()
        )));
    }
    let body = match frame.split_last() {
        Some((b'\n', body)) => body,
        _ => return Err(CodecError::MalformedFrame("missing newline terminator".into())),
    };
    if body.contains(&b'\n') {
        return Err(CodecError::MalformedFrame("embedded newline inside frame".into()));
    }
    decode_body(body)
}

fn decode_body(body: &[u8]) -> Result<Message, CodecError> {
    let value: Value = serde_json::from_slice(body).map_err(|e| CodecError::MalformedFrame(e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(CodecError::MalformedFrame("frame is not a JSON object".into()));
    };
    let kind = required_str(&obj, "type")?;
    match kind {
        "rpc" => {
            let params = match obj.get("params") {
                None | Some(Value::Null) => BTreeMap::new(),
                Some(Value::Object(map)) => map
                    .iter()
                    .map(|(k, v)| match v {
                        Value::String(s) => Ok((k.clone(), s.clone())),
                        _ => Err(invalid("params", format!("value of {k:?} is not a string"))),
                    })
                    .collect::<Result<_, _>>()?,
                Some(_) => return Err(invalid("params", "expected an object")),
            };
            Ok(Message::Rpc(RpcMessage {
                message_id: message_id(&obj, "message-id")?,
                operation: OperationSpec {
                    name: required_str(&obj, "op")?.to_string(),
                    params,
                },
                scheduled_time: optional_i64(&obj, "scheduled-time")?.map(TimeInstant::from_nanos),
                get_time: optional_bool(&obj, "get-time")?.unwrap_or(false),
                notify: optional_bool(&obj, "notify")?.unwrap_or(false),
            }))
        }
        "rpc-reply" => {
            let message_id = message_id(&obj, "message-id")?;
            let status = match required_str(&obj, "status")? {
                "ok" => ReplyStatus::Ok,
                "error" => ReplyStatus::Error {
                    code: ErrorCode::parse(required_str(&obj, "error-code")?),
                    detail: optional_str(&obj, "error-message")?.unwrap_or_default().to_string(),
                },
                other => return Err(invalid("status", format!("unknown status {other:?}"))),
            };
            let data = match obj.get("data") {
                None | Some(Value::Null) => BTreeMap::new(),
                Some(Value::Object(map)) => map
                    .iter()
                    .map(|(k, v)| match v {
                        Value::String(s) => Ok((k.clone(), s.clone())),
                        _ => Err(invalid("data", format!("value of {k:?} is not a string"))),
                    })
                    .collect::<Result<_, _>>()?,
                Some(_) => return Err(invalid("data", "expected an object")),
            };
            Ok(Message::RpcReply(RpcReply {
                message_id,
                status,
                execution_time: optional_i64(&obj, "execution-time")?.map(TimeInstant::from_nanos),
                data,
            }))
        }
        "notification" => Ok(Message::Notification(ScheduleNotification {
            message_id: message_id(&obj, "message-id")?,
            accepted: optional_bool(&obj, "accepted")?.ok_or(CodecError::MissingField("accepted"))?,
        })),
        "cancel-schedule" => Ok(Message::CancelSchedule(CancelSchedule {
            message_id: message_id(&obj, "message-id")?,
            target_id: message_id(&obj, "target-id")?,
        })),
        other => Err(CodecError::UnknownType(other.to_string())),
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> CodecError {
    CodecError::InvalidField {
        field,
        reason: reason.into(),
    }
}

fn required_str<'a>(obj: &'a Map<String, Value>, field: &'static str) -> Result<&'a str, CodecError> {
    optional_str(obj, field)?.ok_or(CodecError::MissingField(field))
}

fn optional_str<'a>(obj: &'a Map<String, Value>, field: &'static str) -> Result<Option<&'a str>, CodecError> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(_) => Err(invalid(field, "expected a string")),
    }
}

fn optional_i64(obj: &Map<String, Value>, field: &'static str) -> Result<Option<i64>, CodecError> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_i64()
            .map(Some)
            .ok_or_else(|| invalid(field, "expected a signed 64-bit integer")),
    }
}

fn optional_bool(obj: &Map<String, Value>, field: &'static str) -> Result<Option<bool>, CodecError> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Bool(b)) => Ok(Some(*b)),
        Some(_) => Err(invalid(field, "expected a boolean")),
    }
}

fn message_id(obj: &Map<String, Value>, field: &'static str) -> Result<MessageId, CodecError> {
    MessageId::new(required_str(obj, field)?).ok_or_else(|| invalid(field, "must be non-empty"))
}

/// Incremental decoder for a byte stream carrying many frames.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        FrameDecoder::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Bytes buffered but not yet forming a complete frame.
    pub fn pending(&self) -> usize {
        self.buf.len()
    }

    /// Next complete frame, if any. A frame that overruns the size limit
    /// without a newline is discarded and reported as malformed.
    pub fn next_message(&mut self) -> Option<Result<Message, CodecError>> {
        match self.buf.iter().position(|&b| b == b'\n') {
            Some(pos) => {
                let frame: Vec<u8> = self.buf.drain(..=pos).collect();
                Some(decode(&frame))
            }
            None if self.buf.len() >= MAX_FRAME_BYTES => {
                let len = self.buf.len();
                self.buf.clear();
                Some(Err(CodecError::MalformedFrame(format!(
                    "no newline within {len} bytes"
                ))))
            }
            None => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::DurationNs;
    use proptest::prelude::*;

    fn id(s: &str) -> MessageId {
        MessageId::new(s).unwrap()
    }

    #[test]
    fn minimal_rpc_encoding() {
        let msg = Message::Rpc(RpcMessage::immediate(id("m1"), OperationSpec::new("noop")));
        assert_eq!(
            encode(&msg),
            b"{\"type\":\"rpc\",\"message-id\":\"m1\",\"op\":\"noop\",\"params\":{}}\n"
        );
    }

    #[test]
    fn reply_with_execution_time_encoding() {
        let mut reply = RpcReply::ok(id("m1"));
        reply.execution_time = Some(TimeInstant::from_nanos(1000));
        assert_eq!(
            encode(&reply.into()),
            b"{\"type\":\"rpc-reply\",\"message-id\":\"m1\",\"status\":\"ok\",\"execution-time\":1000}\n"
        );
    }

    #[test]
    fn scheduled_rpc_encoding_carries_time_and_flags() {
        let mut rpc = RpcMessage::scheduled(
            id("m7"),
            OperationSpec::new("set-value").with_param("key", "k"),
            TimeInstant::from_nanos(-5),
        );
        rpc.get_time = true;
        let text = String::from_utf8(encode(&rpc.into())).unwrap();
        assert_eq!(
            text,
            "{\"type\":\"rpc\",\"message-id\":\"m7\",\"op\":\"set-value\",\"params\":{\"key\":\"k\"},\"scheduled-time\":-5,\"get-time\":true}\n"
        );
    }

    #[test]
    fn error_reply_and_cancel_encoding() {
        let reply = RpcReply::error(id("c2"), ErrorCode::AlreadyExecuted, "");
        assert_eq!(
            encode(&reply.into()),
            b"{\"type\":\"rpc-reply\",\"message-id\":\"c2\",\"status\":\"error\",\"error-code\":\"already-executed\"}\n"
        );
        let cancel = CancelSchedule {
            message_id: id("c3"),
            target_id: id("m1"),
        };
        assert_eq!(
            encode(&cancel.into()),
            b"{\"type\":\"cancel-schedule\",\"message-id\":\"c3\",\"target-id\":\"m1\"}\n"
        );
    }

    #[test]
    fn missing_message_id() {
        assert_eq!(
            decode(b"{\"type\":\"rpc\"}\n"),
            Err(CodecError::MissingField("message-id"))
        );
    }

    #[test]
    fn missing_type() {
        assert_eq!(
            decode(b"{\"message-id\":\"x\"}\n"),
            Err(CodecError::MissingField("type"))
        );
    }

    #[test]
    fn unknown_type() {
        assert_eq!(
            decode(b"{\"type\":\"hello\",\"message-id\":\"x\"}\n"),
            Err(CodecError::UnknownType("hello".into()))
        );
    }

    #[test]
    fn bad_syntax_and_missing_newline() {
        assert!(matches!(decode(b"{\"type\":\n"), Err(CodecError::MalformedFrame(_))));
        assert!(matches!(
            decode(b"{\"type\":\"rpc\"}"),
            Err(CodecError::MalformedFrame(_))
        ));
        assert!(matches!(decode(b"[1,2]\n"), Err(CodecError::MalformedFrame(_))));
    }

    #[test]
    fn wrong_field_types_are_named() {
        assert_eq!(
            decode(b"{\"type\":\"rpc\",\"message-id\":\"a\",\"op\":\"noop\",\"scheduled-time\":\"soon\"}\n"),
            Err(CodecError::InvalidField {
                field: "scheduled-time",
                reason: "expected a signed 64-bit integer".into()
            })
        );
        assert!(matches!(
            decode(b"{\"type\":\"rpc\",\"message-id\":\"\",\"op\":\"noop\"}\n"),
            Err(CodecError::InvalidField {
                field: "message-id",
                ..
            })
        ));
        assert_eq!(
            decode(b"{\"type\":\"rpc-reply\",\"message-id\":\"a\",\"status\":\"error\"}\n"),
            Err(CodecError::MissingField("error-code"))
        );
    }

    #[test]
    fn oversized_stream_without_newline_is_malformed() {
        let mut dec = FrameDecoder::new();
        dec.push(&vec![b'x'; MAX_FRAME_BYTES]);
        assert!(matches!(dec.next_message(), Some(Err(CodecError::MalformedFrame(_)))));
        assert_eq!(dec.pending(), 0);
    }

    #[test]
    fn partial_frame_waits_for_more_bytes() {
        let bytes = encode(&Message::Notification(ScheduleNotification {
            message_id: id("n"),
            accepted: true,
        }));
        let mut dec = FrameDecoder::new();
        dec.push(&bytes[..5]);
        assert!(dec.next_message().is_none());
        dec.push(&bytes[5..]);
        assert!(matches!(dec.next_message(), Some(Ok(Message::Notification(_)))));
    }

    #[test]
    fn unknown_error_codes_survive() {
        let reply = RpcReply::error(id("z"), ErrorCode::Other("busy".into()), "try later");
        let back = decode(&encode(&reply.clone().into())).unwrap();
        assert_eq!(back, Message::RpcReply(reply));
    }

    fn arb_id() -> impl Strategy<Value = MessageId> {
        "[a-zA-Z0-9_\\-é☃ ]{1,12}".prop_map(|s| MessageId::new(s).unwrap())
    }

    fn arb_map() -> impl Strategy<Value = BTreeMap<String, String>> {
        prop::collection::btree_map("[a-z\"\\\\]{0,6}", ".{0,8}", 0..4)
    }

    fn arb_time() -> impl Strategy<Value = Option<TimeInstant>> {
        prop::option::of(any::<i64>().prop_map(TimeInstant::from_nanos))
    }

    fn arb_code() -> impl Strategy<Value = ErrorCode> {
        prop_oneof![
            Just(ErrorCode::ScheduleOutOfRange),
            Just(ErrorCode::UnknownOperation),
            Just(ErrorCode::InvalidParams),
            Just(ErrorCode::UnknownKey),
            Just(ErrorCode::AlreadyExecuted),
            Just(ErrorCode::UnknownMessageId),
            Just(ErrorCode::DuplicateMessageId),
            "x-[a-z]{1,5}".prop_map(ErrorCode::Other),
        ]
    }

    pub(crate) fn arb_message() -> impl Strategy<Value = Message> {
        prop_oneof![
            (
                arb_id(),
                "[a-z\\-]{1,10}",
                arb_map(),
                arb_time(),
                any::<bool>(),
                any::<bool>()
            )
                .prop_map(|(id, op, params, t, get_time, notify)| {
                    Message::Rpc(RpcMessage {
                        message_id: id,
                        operation: OperationSpec { name: op, params },
                        scheduled_time: t,
                        get_time,
                        notify,
                    })
                }),
            (
                arb_id(),
                prop::option::of((arb_code(), ".{0,10}")),
                arb_time(),
                arb_map()
            )
                .prop_map(|(id, err, t, data)| {
                    Message::RpcReply(RpcReply {
                        message_id: id,
                        status: match err {
                            None => ReplyStatus::Ok,
                            Some((code, detail)) => ReplyStatus::Error { code, detail },
                        },
                        execution_time: t,
                        data,
                    })
                }),
            (arb_id(), any::<bool>()).prop_map(|(id, accepted)| {
                Message::Notification(ScheduleNotification {
                    message_id: id,
                    accepted,
                })
            }),
            (arb_id(), arb_id()).prop_map(|(a, b)| {
                Message::CancelSchedule(CancelSchedule {
                    message_id: a,
                    target_id: b,
                })
            }),
        ]
    }

    proptest! {
        #[test]
        fn round_trip(msg in arb_message()) {
            prop_assert_eq!(decode(&encode(&msg)), Ok(msg));
        }

        #[test]
        fn concatenated_frames_decode_in_order(msgs in prop::collection::vec(arb_message(), 0..12), split in 0usize..4096) {
            let mut stream = Vec::new();
            for m in &msgs {
                encode_into(m, &mut stream);
            }
            let cut = split.min(stream.len());
            let mut dec = FrameDecoder::new();
            let mut out = Vec::new();
            for chunk in [&stream[..cut], &stream[cut..]] {
                dec.push(chunk);
                while let Some(m) = dec.next_message() {
                    out.push(m.unwrap());
                }
            }
            prop_assert_eq!(out, msgs);
            prop_assert_eq!(dec.pending(), 0);
        }
    }

    #[test]
    fn negative_execution_time_round_trips() {
        let mut reply = RpcReply::ok(id("neg"));
        reply.execution_time = Some(TimeInstant::EPOCH - DurationNs::from_secs(1));
        let msg: Message = reply.into();
        assert_eq!(decode(&encode(&msg)).unwrap(), msg);
    }
}
