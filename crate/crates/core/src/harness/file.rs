//! Flat `key = value` scenario files.
//!
//! Blank lines and `#` comments are ignored. Durations take `ns`, `us`, `ms`
//! or `s` suffixes. Server keys given without a prefix apply to every
//! server; `server.<i>.<key>` overrides one. See the README for the key list.

use std::collections::BTreeMap;

use super::{Expectations, Measurement, Scenario, ScenarioError, ServerSpec};
use crate::prediction::Algorithm;
use crate::protocol::{DurationNs, SchedulingRangeConfig};
use crate::server::Contention;
use crate::sim::DelayDist;

const SERVER_KEYS: &[&str] = &[
    "base",
    "sigma",
    "jitter",
    "spike.p",
    "spike.m",
    "executors",
    "max_future",
    "max_past",
    "delay",
    "delay.min",
    "delay.max",
    "clock_offset",
    "contention.penalty",
    "contention.recovery",
];

const GLOBAL_KEYS: &[&str] = &[
    "name",
    "seed",
    "samples",
    "duration",
    "window",
    "driver",
    "algorithms",
    "operation",
    "mode",
    "period",
    "burst.size",
    "burst.cadence",
    "burst.gap",
    "servers",
    "expect.error_ratio",
    "expect.exact",
    "expect.ft_best",
];

struct Entries(BTreeMap<String, (usize, String)>);

impl Entries {
    fn raw(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(|(_, v)| v.as_str())
    }

    fn get<T>(&self, key: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Option<T>, ScenarioError> {
        match self.0.get(key) {
            None => Ok(None),
            Some((line, v)) => parse(v).map(Some).ok_or_else(|| ScenarioError::Parse {
                line: *line,
                message: format!("bad value {v:?} for {key}"),
            }),
        }
    }
}

fn duration(v: &str) -> Option<DurationNs> {
    DurationNs::parse(v)
}

fn boolean(v: &str) -> Option<bool> {
    match v {
        "true" | "yes" | "1" => Some(true),
        "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

fn algorithms(v: &str) -> Option<Vec<Algorithm>> {
    if v == "all" {
        return Some(Algorithm::ALL.to_vec());
    }
    v.split(',').map(|a| a.trim().parse().ok()).collect()
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((k, v)) = content.split_once('=') else {
            return Err(ScenarioError::Parse {
                line,
                message: format!("expected key = value, got {content:?}"),
            });
        };
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if !is_known(&k) {
            return Err(ScenarioError::Parse {
                line,
                message: format!("unknown key {k:?}"),
            });
        }
        if map.insert(k.clone(), (line, v)).is_some() {
            return Err(ScenarioError::Parse {
                line,
                message: format!("duplicate key {k:?}"),
            });
        }
    }
    build(&Entries(map))
}

fn is_known(key: &str) -> bool {
    if GLOBAL_KEYS.contains(&key) || SERVER_KEYS.contains(&key) {
        return true;
    }
    key.strip_prefix("server.")
        .and_then(|rest| rest.split_once('.'))
        .is_some_and(|(idx, k)| idx.parse::<usize>().is_ok() && SERVER_KEYS.contains(&k))
}

fn build(e: &Entries) -> Result<Scenario, ScenarioError> {
    let mut sc = Scenario::default();
    if let Some(name) = e.raw("name") {
        sc.name = name.to_string();
    }
    sc.seed = e.get("seed", |v| v.parse().ok())?.unwrap_or(0);
    sc.window = e.get("window", |v| v.parse().ok())?.unwrap_or(sc.window);
    sc.driver = e.get("driver", |v| v.parse().ok())?.unwrap_or(sc.driver);
    sc.algorithms = e.get("algorithms", algorithms)?.unwrap_or(sc.algorithms);
    if let Some(op) = e.raw("operation") {
        sc.operation = op.to_string();
    }

    let period = e.get("period", duration)?.unwrap_or(DurationNs::from_secs(1));
    sc.measurement = match e.raw("mode").unwrap_or("periodic") {
        "periodic" => Measurement::Periodic { period },
        "burst" => Measurement::Burst {
            size: e.get("burst.size", |v| v.parse().ok())?.unwrap_or(4),
            cadence: e.get("burst.cadence", duration)?.unwrap_or(DurationNs::from_secs(1)),
            gap: e.get("burst.gap", duration)?.unwrap_or(DurationNs::from_secs(1)),
        },
        other => return Err(ScenarioError::invalid("mode", format!("unknown mode {other:?}"))),
    };

    sc.samples = match (e.get("samples", |v| v.parse().ok())?, e.get("duration", duration)?) {
        (Some(_), Some(_)) => return Err(ScenarioError::invalid("duration", "give samples or duration, not both")),
        (Some(n), None) => n,
        (None, Some(d)) => {
            let step = match sc.measurement {
                Measurement::Periodic { period } => period,
                Measurement::Burst { size, cadence, gap } => cadence * (size as i64 + 1) + gap,
            };
            if step <= DurationNs::ZERO {
                return Err(ScenarioError::invalid("period", "must be positive"));
            }
            (d.as_nanos() / step.as_nanos()).max(0) as usize
        }
        (None, None) => sc.samples,
    };

    let count = e.get("servers", |v| v.parse::<usize>().ok())?.unwrap_or(1);
    for key in e.0.keys() {
        if let Some(idx) = key
            .strip_prefix("server.")
            .and_then(|r| r.split_once('.'))
            .and_then(|(i, _)| i.parse::<usize>().ok())
        {
            if idx >= count {
                return Err(ScenarioError::invalid(
                    key.clone(),
                    format!("only {count} server(s) declared"),
                ));
            }
        }
    }
    sc.servers = (0..count).map(|i| server_spec(e, i)).collect::<Result<_, _>>()?;

    sc.expect = Expectations {
        error_ratio: e.get("expect.error_ratio", |v| v.parse().ok())?,
        exact: e.get("expect.exact", boolean)?.unwrap_or(false),
        ft_best: e.get("expect.ft_best", boolean)?.unwrap_or(false),
    };
    sc.validate()?;
    Ok(sc)
}

fn server_spec(e: &Entries, i: usize) -> Result<ServerSpec, ScenarioError> {
    let scoped = |k: &str| {
        let specific = format!("server.{i}.{k}");
        if e.0.contains_key(&specific) {
            specific
        } else {
            k.to_string()
        }
    };
    let dur = |k: &str| e.get(&scoped(k), duration);
    let mut s = ServerSpec::default();
    let m = &mut s.model;
    m.base = dur("base")?.unwrap_or(m.base);
    m.sigma = dur("sigma")?.unwrap_or(m.sigma);
    m.wake_jitter_max = dur("jitter")?.unwrap_or(m.wake_jitter_max);
    m.spike_probability = e
        .get(&scoped("spike.p"), |v| v.parse().ok())?
        .unwrap_or(m.spike_probability);
    m.spike_multiplier = e
        .get(&scoped("spike.m"), |v| v.parse().ok())?
        .unwrap_or(m.spike_multiplier);
    if let Some(penalty) = dur("contention.penalty")? {
        m.contention = Some(Contention {
            penalty,
            recovery: dur("contention.recovery")?.unwrap_or(DurationNs::ZERO),
        });
    }
    s.executors = e.get(&scoped("executors"), |v| v.parse().ok())?.unwrap_or(1);
    let defaults = SchedulingRangeConfig::default();
    let future = dur("max_future")?.unwrap_or(defaults.sched_max_future);
    let past = dur("max_past")?.unwrap_or(defaults.sched_max_past);
    s.range = SchedulingRangeConfig::new(future, past)
        .ok_or_else(|| ScenarioError::invalid(format!("server.{i}.max_future"), "range limits must be non-negative"))?;
    let link = match (dur("delay")?, dur("delay.min")?, dur("delay.max")?) {
        (Some(d), None, None) => DelayDist::Constant(d),
        (None, Some(min), Some(max)) => DelayDist::Uniform { min, max },
        (None, None, None) => DelayDist::default(),
        _ => {
            return Err(ScenarioError::invalid(
                format!("server.{i}.delay"),
                "use either delay or both delay.min and delay.max",
            ))
        }
    };
    s.uplink = link;
    s.downlink = link;
    s.clock_offset = dur("clock_offset")?.unwrap_or(DurationNs::ZERO);
    Ok(s)
}
