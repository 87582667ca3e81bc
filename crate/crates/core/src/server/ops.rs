//! Built-in operations and the per-server key-value state they act on.

use std::collections::BTreeMap;

use crate::protocol::{DurationNs, ErrorCode, OperationSpec};

pub const DEFAULT_TOAST: DurationNs = DurationNs::from_secs(1);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Builtin {
    /// Write `key = value` into the candidate set.
    SetValue {
        key: String,
        value: String,
    },
    /// Read `key` from the running set.
    GetValue {
        key: String,
    },
    /// Promote the candidate set to running.
    Commit,
    Noop,
    /// Long-running operation occupying the executor for `duration`.
    Toast {
        duration: DurationNs,
    },
}

pub type OpFailure = (ErrorCode, String);

impl Builtin {
    pub fn parse(op: &OperationSpec) -> Result<Builtin, OpFailure> {
        let need = |key: &str| {
            op.param(key).map(str::to_string).ok_or_else(|| {
                (
                    ErrorCode::InvalidParams,
                    format!("{} requires parameter {key:?}", op.name),
                )
            })
        };
        match op.name.as_str() {
            "set-value" => Ok(Builtin::SetValue {
                key: need("key")?,
                value: need("value")?,
            }),
            "get-value" => Ok(Builtin::GetValue { key: need("key")? }),
            "commit" => Ok(Builtin::Commit),
            "noop" => Ok(Builtin::Noop),
            "toast" => {
                let duration = match op.param("duration") {
                    None => DEFAULT_TOAST,
                    Some(text) => DurationNs::parse(text)
                        .filter(|d| *d >= DurationNs::ZERO)
                        .ok_or_else(|| (ErrorCode::InvalidParams, format!("bad toast duration {text:?}")))?,
                };
                Ok(Builtin::Toast { duration })
            }
            other => Err((ErrorCode::UnknownOperation, format!("unknown operation {other:?}"))),
        }
    }

    /// Run time contributed by the operation itself, on top of the model.
    pub fn intrinsic_duration(&self) -> DurationNs {
        match self {
            Builtin::Toast { duration } => *duration,
            _ => DurationNs::ZERO,
        }
    }
}

/// Running and candidate configuration of one server.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ServerState {
    running: BTreeMap<String, String>,
    candidate: BTreeMap<String, String>,
}

impl ServerState {
    pub fn with_running(values: BTreeMap<String, String>) -> Self {
        ServerState {
            candidate: values.clone(),
            running: values,
        }
    }

    pub fn running(&self) -> &BTreeMap<String, String> {
        &self.running
    }

    pub fn candidate(&self) -> &BTreeMap<String, String> {
        &self.candidate
    }

    pub fn apply(&mut self, op: &Builtin) -> Result<BTreeMap<String, String>, OpFailure> {
        let mut out = BTreeMap::new();
        match op {
            Builtin::SetValue { key, value } => {
                self.candidate.insert(key.clone(), value.clone());
            }
            Builtin::GetValue { key } => {
                let value = self
                    .running
                    .get(key)
                    .ok_or_else(|| (ErrorCode::UnknownKey, format!("no running value for {key:?}")))?;
                out.insert("key".to_string(), key.clone());
                out.insert("value".to_string(), value.clone());
            }
            Builtin::Commit => {
                self.running = self.candidate.clone();
            }
            Builtin::Noop | Builtin::Toast { .. } => {}
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(name: &str, params: &[(&str, &str)]) -> Builtin {
        let mut spec = OperationSpec::new(name);
        for (k, v) in params {
            spec = spec.with_param(*k, *v);
        }
        Builtin::parse(&spec).unwrap()
    }

    #[test]
    fn set_commit_get() {
        let mut s = ServerState::default();
        s.apply(&op("set-value", &[("key", "k"), ("value", "5")])).unwrap();
        s.apply(&op("commit", &[])).unwrap();
        let out = s.apply(&op("get-value", &[("key", "k")])).unwrap();
        assert_eq!(out.get("value").map(String::as_str), Some("5"));
    }

    #[test]
    fn candidate_is_isolated_until_commit() {
        let mut s = ServerState::default();
        s.apply(&op("set-value", &[("key", "k"), ("value", "5")])).unwrap();
        let err = s.apply(&op("get-value", &[("key", "k")])).unwrap_err();
        assert_eq!(err.0, ErrorCode::UnknownKey);

        let mut s = ServerState::with_running([("k".to_string(), "1".to_string())].into());
        s.apply(&op("set-value", &[("key", "k"), ("value", "5")])).unwrap();
        let out = s.apply(&op("get-value", &[("key", "k")])).unwrap();
        assert_eq!(out.get("value").map(String::as_str), Some("1"));
    }

    #[test]
    fn parse_errors() {
        assert_eq!(
            Builtin::parse(&OperationSpec::new("reboot")).unwrap_err().0,
            ErrorCode::UnknownOperation
        );
        assert_eq!(
            Builtin::parse(&OperationSpec::new("set-value").with_param("key", "k"))
                .unwrap_err()
                .0,
            ErrorCode::InvalidParams
        );
        assert_eq!(
            Builtin::parse(&OperationSpec::new("toast").with_param("duration", "forever"))
                .unwrap_err()
                .0,
            ErrorCode::InvalidParams
        );
    }

    #[test]
    fn toast_duration() {
        assert_eq!(op("toast", &[]).intrinsic_duration(), DEFAULT_TOAST);
        assert_eq!(
            op("toast", &[("duration", "250ms")]).intrinsic_duration(),
            DurationNs::from_millis(250)
        );
        assert_eq!(op("noop", &[]).intrinsic_duration(), DurationNs::ZERO);
    }
}
