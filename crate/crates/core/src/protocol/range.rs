use super::{DurationNs, TimeInstant};

/// Window around the server's clock within which scheduled times are accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchedulingRangeConfig {
    pub sched_max_future: DurationNs,
    pub sched_max_past: DurationNs,
}

impl SchedulingRangeConfig {
    /// Returns `None` unless `max_future > 0` and `max_past >= 0`.
    pub fn new(max_future: DurationNs, max_past: DurationNs) -> Option<Self> {
        (max_future > DurationNs::ZERO && max_past >= DurationNs::ZERO).then_some(SchedulingRangeConfig {
            sched_max_future: max_future,
            sched_max_past: max_past,
        })
    }
}

impl Default for SchedulingRangeConfig {
    fn default() -> Self {
        SchedulingRangeConfig {
            sched_max_future: DurationNs::from_secs(15),
            sched_max_past: DurationNs::from_secs(3),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeVerdict {
    /// Queue until the scheduled time.
    Accept,
    /// Slightly in the past: run as soon as possible.
    AcceptRunNow,
    Reject,
}

/// Classifies a scheduled time against `[now - max_past, now + max_future]`.
pub fn validate_schedule(scheduled_time: TimeInstant, now: TimeInstant, cfg: &SchedulingRangeConfig) -> RangeVerdict {
    let offset = scheduled_time - now;
    if offset >= DurationNs::ZERO {
        if offset <= cfg.sched_max_future {
            RangeVerdict::Accept
        } else {
            RangeVerdict::Reject
        }
    } else if -offset <= cfg.sched_max_past {
        RangeVerdict::AcceptRunNow
    } else {
        RangeVerdict::Reject
    }
}
