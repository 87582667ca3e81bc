//! End-to-end runs of the multi-server use cases, each checked against the
//! server execution logs.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::{rejected_in_logs, Check, ScenarioError};
use crate::client::{Alignment, Client, ClientConfig, ClientError, CommitOutcome, CommitPlan, ServerHandle};
use crate::protocol::{DurationNs, OperationSpec, SchedulingRangeConfig, TimeInstant};
use crate::rng;
use crate::server::{ExecutionModel, Server, ServerConfig, ServerState};
use crate::sim::{DelayDist, SimNetwork, SimServerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Demo {
    Coordinated,
    Snapshot,
    Commit,
    CommitAbort,
}

impl Demo {
    pub const ALL: [Demo; 4] = [Demo::Coordinated, Demo::Snapshot, Demo::Commit, Demo::CommitAbort];

    pub fn name(self) -> &'static str {
        match self {
            Demo::Coordinated => "coordinated",
            Demo::Snapshot => "snapshot",
            Demo::Commit => "commit",
            Demo::CommitAbort => "commit-abort",
        }
    }
}

impl fmt::Display for Demo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Demo {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Demo::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| format!("unknown demo {s:?}"))
    }
}

#[derive(Debug, Clone)]
pub struct DemoReport {
    pub demo: Demo,
    pub checks: Vec<Check>,
    pub servers: Vec<Server>,
}

impl DemoReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Every server's execution log as CSV.
    pub fn log_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "server_id",
            "message_id",
            "operation",
            "scheduled_time_ns",
            "start_time_ns",
            "execution_time_ns",
            "spiked",
            "ok",
        ])
        .expect("writing to memory");
        for (i, s) in self.servers.iter().enumerate() {
            for r in s.log() {
                w.write_record([
                    i.to_string(),
                    r.message_id.to_string(),
                    r.operation.clone(),
                    r.scheduled_time.as_nanos().to_string(),
                    r.start_time.as_nanos().to_string(),
                    r.execution_time.as_nanos().to_string(),
                    r.spiked.to_string(),
                    r.ok.to_string(),
                ])
                .expect("writing to memory");
            }
        }
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv is utf-8")
    }
}

const JITTER: DurationNs = DurationNs::from_micros(200);
const START: TimeInstant = TimeInstant::from_nanos(0);

fn node(seed: u64, i: usize, state: ServerState) -> SimServerConfig {
    let link = DelayDist::Uniform {
        min: DurationNs::from_millis(1),
        max: DurationNs::from_millis(20),
    };
    SimServerConfig {
        initial_state: state,
        uplink: link,
        downlink: link,
        ..SimServerConfig::new(ServerConfig {
            model: ExecutionModel::gaussian(DurationNs::from_millis(5), DurationNs::from_millis(1)).with_jitter(JITTER),
            seed: rng::derive_seed(seed, &format!("server/{i}")),
            ..ServerConfig::default()
        })
    }
}

fn client(seed: u64, nodes: Vec<SimServerConfig>) -> Client<SimNetwork> {
    let net = SimNetwork::new(START, rng::derive_seed(seed, "network"), nodes);
    Client::new(net, ClientConfig::default())
}

fn servers(c: &Client<SimNetwork>) -> Vec<Server> {
    let net = c.transport();
    net.handles().map(|h| net.server(h).clone()).collect()
}

fn common_checks(servers: &[Server]) -> Vec<Check> {
    let audit_ok = servers.iter().all(|s| s.audit().is_ok());
    let leaked = rejected_in_logs(servers);
    vec![
        Check::new("server audit", audit_ok, ""),
        Check::new("no rejected rpc executed", leaked == 0, format!("{leaked} found")),
    ]
}

/// Executions of `op` per server.
fn executions(servers: &[Server], op: &str) -> Vec<Vec<TimeInstant>> {
    servers
        .iter()
        .map(|s| {
            s.log()
                .iter()
                .filter(|r| r.operation == op)
                .map(|r| r.start_time)
                .collect()
        })
        .collect()
}

pub fn run_demo(demo: Demo, seed: u64) -> Result<DemoReport, ScenarioError> {
    let mut checks = Vec::new();
    let servers = match demo {
        Demo::Coordinated => coordinated(seed, &mut checks)?,
        Demo::Snapshot => snapshot(seed, &mut checks)?,
        Demo::Commit => commit(seed, false, &mut checks)?,
        Demo::CommitAbort => commit(seed, true, &mut checks)?,
    };
    checks.extend(common_checks(&servers));
    Ok(DemoReport { demo, checks, servers })
}

fn coordinated(seed: u64, checks: &mut Vec<Check>) -> Result<Vec<Server>, ScenarioError> {
    let nodes = (0..3).map(|i| node(seed, i, ServerState::default())).collect();
    let mut c = client(seed, nodes);
    let targets: Vec<ServerHandle> = c.transport().handles().collect();
    let at = c.now() + DurationNs::from_secs(2);
    let op = OperationSpec::new("noop");
    let results = c.coordinated_operation(&targets, &op, at, Alignment::Start);
    c.sleep_until(at + DurationNs::from_secs(1))?;
    checks.push(Check::new(
        "every target replied ok",
        results.iter().all(|(_, r)| r.is_ok()),
        format!("{:?}", results.iter().filter(|(_, r)| r.is_err()).count()),
    ));
    let srv = servers(&c);
    let starts = executions(&srv, "noop");
    let within = starts.iter().all(|s| s.len() == 1 && s[0] >= at && s[0] - at <= JITTER);
    checks.push(Check::new(
        "all starts within the jitter bound of T",
        within,
        format!("starts {starts:?}, T {at}"),
    ));
    Ok(srv)
}

fn snapshot(seed: u64, checks: &mut Vec<Check>) -> Result<Vec<Server>, ScenarioError> {
    let counter = |v: &str| ServerState::with_running(BTreeMap::from([("counter".to_string(), v.to_string())]));
    let nodes = (0..4).map(|i| node(seed, i, counter("7"))).collect();
    let mut c = client(seed, nodes);
    let targets: Vec<ServerHandle> = c.transport().handles().collect();
    c.transport_mut().set_online(ServerHandle(3), false);
    let at = c.now() + DurationNs::from_secs(2);

    // Server 0 moves to 8 one second after the snapshot.
    c.execute(
        ServerHandle(0),
        OperationSpec::new("set-value")
            .with_param("key", "counter")
            .with_param("value", "8"),
    )?;
    c.submit(
        ServerHandle(0),
        crate::client::Submission::scheduled(OperationSpec::new("commit"), at + DurationNs::from_secs(1)),
    )?;

    let results = c.coordinated_snapshot(&targets, "counter", at);
    c.sleep_until(at + DurationNs::from_secs(2))?;
    let reachable_ok = results[..3].iter().all(|(_, r)| {
        r.as_ref()
            .is_ok_and(|v| v.value == "7" && v.execution_time.is_some_and(|te| te >= at))
    });
    checks.push(Check::new(
        "reachable servers report the pre-increment value",
        reachable_ok,
        format!("{:?}", &results[..3]),
    ));
    checks.push(Check::new(
        "unreachable server times out",
        matches!(results[3].1, Err(ClientError::Timeout { .. })),
        format!("{:?}", results[3].1),
    ));
    let srv = servers(&c);
    checks.push(Check::new(
        "later increment still applies",
        srv[0].state().running().get("counter").map(String::as_str) == Some("8"),
        "",
    ));
    Ok(srv)
}

fn commit(seed: u64, with_reject: bool, checks: &mut Vec<Check>) -> Result<Vec<Server>, ScenarioError> {
    let n = 5;
    let mut nodes: Vec<SimServerConfig> = (0..n)
        .map(|i| {
            node(
                seed,
                i,
                ServerState::with_running(BTreeMap::from([("config".to_string(), "v1".to_string())])),
            )
        })
        .collect();
    if with_reject {
        nodes[n - 1].server.range =
            SchedulingRangeConfig::new(DurationNs::from_millis(500), DurationNs::from_secs(3)).expect("valid range");
    }
    let mut c = client(seed, nodes);
    let targets: Vec<ServerHandle> = c.transport().handles().collect();
    for &t in &targets {
        c.execute(
            t,
            OperationSpec::new("set-value")
                .with_param("key", "config")
                .with_param("value", "v2"),
        )?;
    }
    let at = c.now() + DurationNs::from_secs(2);
    let outcome = c.atomic_commit(&CommitPlan::new(targets.clone(), at));
    c.sleep_until(at + DurationNs::from_secs(1))?;
    let srv = servers(&c);
    let commits = executions(&srv, "commit");
    let executed = commits.iter().filter(|s| !s.is_empty()).count();
    let expected_value = if with_reject { "v1" } else { "v2" };
    let values_ok = srv
        .iter()
        .all(|s| s.state().running().get("config").map(String::as_str) == Some(expected_value));

    if with_reject {
        checks.push(Check::new(
            "commit aborted with cancels confirmed",
            matches!(&outcome, Ok(CommitOutcome::Aborted { refused, .. }) if refused == &vec![ServerHandle(n - 1)]),
            format!("{outcome:?}"),
        ));
        checks.push(Check::new(
            "no server executed the commit",
            executed == 0,
            format!("{executed} did"),
        ));
    } else {
        checks.push(Check::new(
            "commit decided",
            matches!(outcome, Ok(CommitOutcome::Committed { .. })),
            format!("{outcome:?}"),
        ));
        let at_t = commits
            .iter()
            .all(|s| s.len() == 1 && s[0] >= at && s[0] - at <= JITTER);
        checks.push(Check::new(
            "every server executed the commit at T",
            executed == n && at_t,
            format!("{commits:?}, T {at}"),
        ));
    }
    checks.push(Check::new("running configuration consistent", values_ok, ""));
    Ok(srv)
}
