//! The same client and server over real TCP and the wall clock.
//!
//! Smoke-testing only: timing depends on the host scheduler, so nothing here
//! is deterministic.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::client::{ServerHandle, Transport, TransportError};
use crate::protocol::{encode, FrameDecoder, Message, TimeInstant};
use crate::server::{Outbound, Server, ServerConfig, SessionId};

const TICK: Duration = Duration::from_millis(1);

type Sessions = Arc<Mutex<BTreeMap<SessionId, TcpStream>>>;

/// A server listening on a TCP port. Stops when dropped.
pub struct LiveServer {
    addr: SocketAddr,
    server: Arc<Mutex<Server>>,
    stop: Arc<AtomicBool>,
    sessions: Sessions,
    threads: Vec<JoinHandle<()>>,
}

impl LiveServer {
    pub fn bind(addr: impl ToSocketAddrs, config: ServerConfig) -> io::Result<LiveServer> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let server = Arc::new(Mutex::new(Server::new(config)));
        let stop = Arc::new(AtomicBool::new(false));
        let sessions: Sessions = Arc::default();

        let ticker = {
            let (server, stop, sessions) = (server.clone(), stop.clone(), sessions.clone());
            thread::spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    let out = server.lock().expect("server lock").fire_due(TimeInstant::now());
                    deliver(&sessions, out);
                    thread::sleep(TICK);
                }
            })
        };
        let acceptor = {
            let (server, stop, sessions) = (server.clone(), stop.clone(), sessions.clone());
            thread::spawn(move || accept_loop(listener, server, stop, sessions))
        };
        Ok(LiveServer {
            addr,
            server,
            stop,
            sessions,
            threads: vec![ticker, acceptor],
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Runs `f` on the server state, e.g. to inspect its log.
    pub fn with_server<R>(&self, f: impl FnOnce(&Server) -> R) -> R {
        f(&self.server.lock().expect("server lock"))
    }

    pub fn shutdown(mut self) {
        self.stop_threads();
    }

    fn stop_threads(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for s in self.sessions.lock().expect("sessions lock").values() {
            let _ = s.shutdown(Shutdown::Both);
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for LiveServer {
    fn drop(&mut self) {
        self.stop_threads();
    }
}

fn accept_loop(listener: TcpListener, server: Arc<Mutex<Server>>, stop: Arc<AtomicBool>, sessions: Sessions) {
    let mut next = 0u32;
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                let session = SessionId(next);
                next += 1;
                let Ok(writer) = stream.try_clone() else { continue };
                let _ = stream.set_nodelay(true);
                let _ = stream.set_nonblocking(false);
                sessions.lock().expect("sessions lock").insert(session, writer);
                let (server, sessions) = (server.clone(), sessions.clone());
                thread::spawn(move || session_loop(stream, session, server, sessions));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(TICK),
            Err(_) => thread::sleep(TICK),
        }
    }
}

fn session_loop(mut stream: TcpStream, session: SessionId, server: Arc<Mutex<Server>>, sessions: Sessions) {
    let mut decoder = FrameDecoder::new();
    let mut buf = [0u8; 8192];
    loop {
        let n = match stream.read(&mut buf) {
            Ok(0) | Err(_) => break,
            Ok(n) => n,
        };
        decoder.push(&buf[..n]);
        while let Some(frame) = decoder.next_message() {
            // Undecodable frames carry no usable id to reply to; drop them.
            let Ok(msg) = frame else { continue };
            let out = server
                .lock()
                .expect("server lock")
                .handle_message(session, msg, TimeInstant::now());
            deliver(&sessions, out);
        }
    }
    sessions.lock().expect("sessions lock").remove(&session);
}

fn deliver(sessions: &Sessions, out: Vec<Outbound>) {
    if out.is_empty() {
        return;
    }
    let mut map = sessions.lock().expect("sessions lock");
    for o in out {
        if let Some(s) = map.get_mut(&o.session) {
            if s.write_all(&encode(&o.message)).is_err() {
                map.remove(&o.session);
            }
        }
    }
}

/// Client side: one TCP connection per server, inbound frames funnelled
/// into one channel.
pub struct TcpTransport {
    writers: Vec<TcpStream>,
    inbound: Receiver<Result<(ServerHandle, Message), TransportError>>,
    readers: Vec<JoinHandle<()>>,
}

impl TcpTransport {
    pub fn connect(addrs: &[SocketAddr]) -> io::Result<TcpTransport> {
        let (tx, rx) = mpsc::channel();
        let mut writers = Vec::with_capacity(addrs.len());
        let mut readers = Vec::with_capacity(addrs.len());
        for (i, addr) in addrs.iter().enumerate() {
            let stream = TcpStream::connect(addr)?;
            stream.set_nodelay(true)?;
            let reader = stream.try_clone()?;
            writers.push(stream);
            let tx = tx.clone();
            readers.push(thread::spawn(move || read_loop(reader, ServerHandle(i), tx)));
        }
        Ok(TcpTransport {
            writers,
            inbound: rx,
            readers,
        })
    }
}

fn read_loop(mut stream: TcpStream, from: ServerHandle, tx: Sender<Result<(ServerHandle, Message), TransportError>>) {
    let mut decoder = FrameDecoder::new();
    let mut buf = [0u8; 8192];
    loop {
        let n = match stream.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) => {
                let _ = tx.send(Err(TransportError::Io(e.to_string())));
                break;
            }
        };
        decoder.push(&buf[..n]);
        while let Some(frame) = decoder.next_message() {
            if let Ok(msg) = frame {
                if tx.send(Ok((from, msg))).is_err() {
                    return;
                }
            }
        }
    }
}

impl Drop for TcpTransport {
    fn drop(&mut self) {
        for w in &self.writers {
            let _ = w.shutdown(Shutdown::Both);
        }
        for r in self.readers.drain(..) {
            let _ = r.join();
        }
    }
}

impl Transport for TcpTransport {
    fn now(&self) -> TimeInstant {
        TimeInstant::now()
    }

    fn send(&mut self, to: ServerHandle, msg: Message) -> Result<(), TransportError> {
        let w = self.writers.get_mut(to.0).ok_or(TransportError::UnknownServer(to))?;
        w.write_all(&encode(&msg))
            .map_err(|e| TransportError::Io(e.to_string()))
    }

    fn recv_until(&mut self, deadline: TimeInstant) -> Result<Option<(ServerHandle, Message)>, TransportError> {
        let wait = (deadline - TimeInstant::now())
            .max(crate::protocol::DurationNs::ZERO)
            .to_std();
        match self.inbound.recv_timeout(wait) {
            Ok(Ok(m)) => Ok(Some(m)),
            Ok(Err(e)) => Err(e),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(TransportError::Closed),
        }
    }
}
