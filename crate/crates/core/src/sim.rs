//! Discrete-event network of simulated servers under a virtual clock.
//!
//! [`SimNetwork`] is a [`Transport`]: the client's waits drive the event
//! queue, so a whole experiment runs as fast as the CPU allows and is fully
//! determined by its seeds. Links deliver in FIFO order per direction.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::client::{ServerHandle, Transport, TransportError};
use crate::protocol::{DurationNs, Message, MessageId, TimeInstant};
use crate::rng;
use crate::server::{Outbound, Server, ServerConfig, ServerState, SessionId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DelayDist {
    Constant(DurationNs),
    /// Uniform over `[min, max]`.
    Uniform {
        min: DurationNs,
        max: DurationNs,
    },
}

impl Default for DelayDist {
    fn default() -> Self {
        DelayDist::Constant(DurationNs::from_millis(1))
    }
}

impl DelayDist {
    fn draw(&self, rng: &mut ChaCha8Rng) -> DurationNs {
        match *self {
            DelayDist::Constant(d) => d,
            DelayDist::Uniform { min, max } if max > min => {
                DurationNs::from_nanos(rng.random_range(min.as_nanos()..=max.as_nanos()))
            }
            DelayDist::Uniform { min, .. } => min,
        }
    }

    pub fn max(&self) -> DurationNs {
        match *self {
            DelayDist::Constant(d) => d,
            DelayDist::Uniform { min, max } => min.max(max),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimServerConfig {
    pub server: ServerConfig,
    pub initial_state: ServerState,
    /// Server clock minus client clock.
    pub clock_offset: DurationNs,
    pub uplink: DelayDist,
    pub downlink: DelayDist,
}

impl SimServerConfig {
    pub fn new(server: ServerConfig) -> Self {
        SimServerConfig {
            server,
            initial_state: ServerState::default(),
            clock_offset: DurationNs::ZERO,
            uplink: DelayDist::default(),
            downlink: DelayDist::default(),
        }
    }
}

/// One client-to-server message as seen by the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DispatchRecord {
    pub server: ServerHandle,
    pub message_id: MessageId,
    pub kind: &'static str,
    pub sent_at: TimeInstant,
    /// `None` if the link was down.
    pub arrives_at: Option<TimeInstant>,
}

#[derive(Debug)]
enum Event {
    ToServer(usize, Message),
    ToClient(usize, Message),
    Wake(usize),
}

#[derive(Debug)]
struct Node {
    server: Server,
    clock_offset: DurationNs,
    uplink: DelayDist,
    downlink: DelayDist,
    up_rng: ChaCha8Rng,
    down_rng: ChaCha8Rng,
    last_up: TimeInstant,
    last_down: TimeInstant,
    wake: Option<TimeInstant>,
    online: bool,
}

#[derive(Debug)]
pub struct SimNetwork {
    now: TimeInstant,
    seq: u64,
    events: BTreeMap<(TimeInstant, u64), Event>,
    nodes: Vec<Node>,
    inbox: VecDeque<(ServerHandle, Message)>,
    dispatches: Vec<DispatchRecord>,
}

const SESSION: SessionId = SessionId(0);

impl SimNetwork {
    /// Link delays draw from streams derived from `seed`; each server keeps
    /// its own execution seed.
    pub fn new(start: TimeInstant, seed: u64, servers: Vec<SimServerConfig>) -> Self {
        let nodes = servers
            .into_iter()
            .enumerate()
            .map(|(i, cfg)| Node {
                server: Server::with_state(cfg.server, cfg.initial_state),
                clock_offset: cfg.clock_offset,
                uplink: cfg.uplink,
                downlink: cfg.downlink,
                up_rng: rng::stream(seed, &format!("link/{i}/up")),
                down_rng: rng::stream(seed, &format!("link/{i}/down")),
                last_up: start,
                last_down: start,
                wake: None,
                online: true,
            })
            .collect();
        SimNetwork {
            now: start,
            seq: 0,
            events: BTreeMap::new(),
            nodes,
            inbox: VecDeque::new(),
            dispatches: Vec::new(),
        }
    }

    pub fn server_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn handles(&self) -> impl Iterator<Item = ServerHandle> {
        (0..self.nodes.len()).map(ServerHandle)
    }

    /// # Panics
    /// On an unknown handle.
    pub fn server(&self, h: ServerHandle) -> &Server {
        &self.nodes[h.0].server
    }

    /// While offline, messages to and from the server are lost.
    pub fn set_online(&mut self, h: ServerHandle, online: bool) {
        self.nodes[h.0].online = online;
    }

    pub fn dispatches(&self) -> &[DispatchRecord] {
        &self.dispatches
    }

    pub fn uplink_max(&self, h: ServerHandle) -> DurationNs {
        self.nodes[h.0].uplink.max()
    }

    /// Runs every event up to `until` and advances the clock there. Messages
    /// for the client stay queued.
    pub fn run_until(&mut self, until: TimeInstant) {
        while self.step(until) {}
        self.now = self.now.max(until);
    }

    fn push(&mut self, at: TimeInstant, ev: Event) {
        self.events.insert((at, self.seq), ev);
        self.seq += 1;
    }

    /// Processes the earliest event at or before `until`.
    fn step(&mut self, until: TimeInstant) -> bool {
        let Some(entry) = self.events.first_entry() else {
            return false;
        };
        if entry.key().0 > until {
            return false;
        }
        let ((at, _), ev) = entry.remove_entry();
        self.now = self.now.max(at);
        match ev {
            Event::ToClient(i, msg) => {
                if self.nodes[i].online {
                    self.inbox.push_back((ServerHandle(i), msg));
                }
            }
            Event::ToServer(i, msg) => {
                let node = &mut self.nodes[i];
                if node.online {
                    let local = self.now + node.clock_offset;
                    let out = node.server.handle_message(SESSION, msg, local);
                    self.route(i, out);
                }
            }
            Event::Wake(i) => {
                let node = &mut self.nodes[i];
                if node.wake == Some(at) {
                    node.wake = None;
                    let local = self.now + node.clock_offset;
                    let out = node.server.fire_due(local);
                    self.route(i, out);
                }
            }
        }
        true
    }

    fn route(&mut self, i: usize, out: Vec<Outbound>) {
        for o in out {
            let node = &mut self.nodes[i];
            let arrival = (self.now + node.downlink.draw(&mut node.down_rng)).max(node.last_down);
            node.last_down = arrival;
            self.push(arrival, Event::ToClient(i, o.message));
        }
        let node = &mut self.nodes[i];
        let next = node.server.next_wakeup().map(|t| t - node.clock_offset);
        if next != node.wake {
            node.wake = next;
            if let Some(t) = next {
                self.push(t.max(self.now), Event::Wake(i));
                // A wake clamped to `now` must still match on arrival.
                self.nodes[i].wake = Some(t.max(self.now));
            }
        }
    }
}

impl Transport for SimNetwork {
    fn now(&self) -> TimeInstant {
        self.now
    }

    fn send(&mut self, to: ServerHandle, msg: Message) -> Result<(), TransportError> {
        let Some(node) = self.nodes.get_mut(to.0) else {
            return Err(TransportError::UnknownServer(to));
        };
        let arrives_at = node.online.then(|| {
            let arrival = (self.now + node.uplink.draw(&mut node.up_rng)).max(node.last_up);
            node.last_up = arrival;
            arrival
        });
        self.dispatches.push(DispatchRecord {
            server: to,
            message_id: msg.message_id().clone(),
            kind: msg.type_name(),
            sent_at: self.now,
            arrives_at,
        });
        if let Some(at) = arrives_at {
            self.push(at, Event::ToServer(to.0, msg));
        }
        Ok(())
    }

    fn recv_until(&mut self, deadline: TimeInstant) -> Result<Option<(ServerHandle, Message)>, TransportError> {
        loop {
            if let Some(m) = self.inbox.pop_front() {
                return Ok(Some(m));
            }
            if !self.step(deadline) {
                self.now = self.now.max(deadline);
                return Ok(None);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{Client, ClientConfig, ScheduleRequest};
    use crate::protocol::OperationSpec;
    use crate::server::ExecutionModel;

    fn net(n: usize, model: ExecutionModel) -> SimNetwork {
        let servers = (0..n)
            .map(|i| {
                SimServerConfig::new(ServerConfig {
                    model: model.clone(),
                    seed: i as u64,
                    ..ServerConfig::default()
                })
            })
            .collect();
        SimNetwork::new(TimeInstant::from_nanos(1_000_000_000_000), 9, servers)
    }

    #[test]
    fn closed_loop_converges_on_constant_ete() {
        let mut c = Client::new(net(1, ExecutionModel::default()), ClientConfig::default());
        let op = OperationSpec::new("noop");
        let mut last = None;
        for k in 0..10 {
            let td = c.now() + DurationNs::from_secs(1);
            let o = c
                .schedule_at_completion(&ScheduleRequest::new(ServerHandle(0), op.clone(), td))
                .unwrap();
            if k > 0 {
                last = Some(o.execution_time.unwrap() - td);
            }
        }
        assert_eq!(last, Some(DurationNs::ZERO));
    }

    #[test]
    fn offline_server_times_out() {
        let mut c = Client::new(net(1, ExecutionModel::default()), ClientConfig::default());
        c.transport_mut().set_online(ServerHandle(0), false);
        let err = c.execute(ServerHandle(0), OperationSpec::new("noop")).unwrap_err();
        assert!(matches!(err, crate::client::ClientError::Timeout { .. }));
    }

    #[test]
    fn uniform_links_keep_fifo_order() {
        let mut servers = vec![SimServerConfig::new(ServerConfig::default())];
        servers[0].uplink = DelayDist::Uniform {
            min: DurationNs::ZERO,
            max: DurationNs::from_millis(50),
        };
        let mut n = SimNetwork::new(TimeInstant::EPOCH, 1, servers);
        for k in 0..50 {
            let id = MessageId::new(format!("x{k}")).unwrap();
            n.send(
                ServerHandle(0),
                crate::protocol::RpcMessage::immediate(id, OperationSpec::new("noop")).into(),
            )
            .unwrap();
        }
        let arrivals: Vec<_> = n.dispatches().iter().map(|d| d.arrives_at.unwrap()).collect();
        assert!(arrivals.windows(2).all(|w| w[0] <= w[1]));
    }
}
