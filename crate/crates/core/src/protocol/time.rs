//! Absolute timestamps and signed durations, both in integer nanoseconds.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

/// Nanoseconds since the Unix epoch (UTC).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TimeInstant(i64);

/// Signed nanosecond duration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DurationNs(i64);

impl TimeInstant {
    pub const EPOCH: TimeInstant = TimeInstant(0);

    pub const fn from_nanos(nanos: i64) -> Self {
        TimeInstant(nanos)
    }

    pub const fn as_nanos(self) -> i64 {
        self.0
    }

    /// Wall-clock reading of the host.
    pub fn now() -> Self {
        let nanos = match SystemTime::now().duration_since(UNIX_EPOCH) {
            Ok(d) => d.as_nanos() as i64,
            Err(e) => -(e.duration().as_nanos() as i64),
        };
        TimeInstant(nanos)
    }

    pub fn saturating_add(self, d: DurationNs) -> Self {
        TimeInstant(self.0.saturating_add(d.0))
    }
}

impl DurationNs {
    pub const ZERO: DurationNs = DurationNs(0);

    pub const fn from_nanos(nanos: i64) -> Self {
        DurationNs(nanos)
    }

    pub const fn from_micros(us: i64) -> Self {
        DurationNs(us * 1_000)
    }

    pub const fn from_millis(ms: i64) -> Self {
        DurationNs(ms * 1_000_000)
    }

    pub const fn from_secs(s: i64) -> Self {
        DurationNs(s * 1_000_000_000)
    }

    /// Rounds to the nearest nanosecond, ties away from zero.
    pub fn from_nanos_f64(nanos: f64) -> Self {
        DurationNs(nanos.round() as i64)
    }

    pub const fn as_nanos(self) -> i64 {
        self.0
    }

    pub fn as_nanos_f64(self) -> f64 {
        self.0 as f64
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e9
    }

    pub const fn abs(self) -> Self {
        DurationNs(self.0.abs())
    }

    pub const fn is_negative(self) -> bool {
        self.0 < 0
    }

    /// Converts to a std duration, clamping negative values to zero.
    pub fn to_std(self) -> std::time::Duration {
        std::time::Duration::from_nanos(self.0.max(0) as u64)
    }

    /// Parses `"250ms"`, `"1s"`, `"15us"`, `"30000ns"` or a bare nanosecond integer.
    pub fn parse(text: &str) -> Option<Self> {
        let text = text.trim();
        let (digits, scale) = if let Some(v) = text.strip_suffix("ns") {
            (v, 1.0)
        } else if let Some(v) = text.strip_suffix("us") {
            (v, 1e3)
        } else if let Some(v) = text.strip_suffix("ms") {
            (v, 1e6)
        } else if let Some(v) = text.strip_suffix('s') {
            (v, 1e9)
        } else {
            (text, 1.0)
        };
        let digits = digits.trim();
        if let Ok(n) = digits.parse::<i64>() {
            return n.checked_mul(scale as i64).map(DurationNs);
        }
        let v: f64 = digits.parse().ok()?;
        v.is_finite().then(|| DurationNs((v * scale).round() as i64))
    }
}

impl fmt::Display for TimeInstant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

impl fmt::Display for DurationNs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.0;
        if n != 0 && n % 1_000_000_000 == 0 {
            write!(f, "{}s", n / 1_000_000_000)
        } else if n != 0 && n % 1_000_000 == 0 {
            write!(f, "{}ms", n / 1_000_000)
        } else if n != 0 && n % 1_000 == 0 {
            write!(f, "{}us", n / 1_000)
        } else {
            write!(f, "{n}ns")
        }
    }
}

impl Sub for TimeInstant {
    type Output = DurationNs;
    fn sub(self, rhs: TimeInstant) -> DurationNs {
        DurationNs(self.0 - rhs.0)
    }
}

impl Add<DurationNs> for TimeInstant {
    type Output = TimeInstant;
    fn add(self, rhs: DurationNs) -> TimeInstant {
        TimeInstant(self.0 + rhs.0)
    }
}

impl AddAssign<DurationNs> for TimeInstant {
    fn add_assign(&mut self, rhs: DurationNs) {
        self.0 += rhs.0;
    }
}

impl Sub<DurationNs> for TimeInstant {
    type Output = TimeInstant;
    fn sub(self, rhs: DurationNs) -> TimeInstant {
        TimeInstant(self.0 - rhs.0)
    }
}

impl SubAssign<DurationNs> for TimeInstant {
    fn sub_assign(&mut self, rhs: DurationNs) {
        self.0 -= rhs.0;
    }
}

impl Add for DurationNs {
    type Output = DurationNs;
    fn add(self, rhs: DurationNs) -> DurationNs {
        DurationNs(self.0 + rhs.0)
    }
}

impl AddAssign for DurationNs {
    fn add_assign(&mut self, rhs: DurationNs) {
        self.0 += rhs.0;
    }
}

impl Sub for DurationNs {
    type Output = DurationNs;
    fn sub(self, rhs: DurationNs) -> DurationNs {
        DurationNs(self.0 - rhs.0)
    }
}

impl Neg for DurationNs {
    type Output = DurationNs;
    fn neg(self) -> DurationNs {
        DurationNs(-self.0)
    }
}

impl Mul<i64> for DurationNs {
    type Output = DurationNs;
    fn mul(self, rhs: i64) -> DurationNs {
        DurationNs(self.0 * rhs)
    }
}
