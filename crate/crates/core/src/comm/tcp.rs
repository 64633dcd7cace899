//! Worker mesh over TCP. Each worker owns a peer listener; a sender opens one
//! connection per ordered (from, to) pair on first use and writes collective
//! frames (opcode 0x40, `session_id` field = group id) on it. Reader threads
//! on the receiving side push payloads into a [`Mailbox`].

use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use super::transport::{Mailbox, Transport};
use super::WorkerId;
use crate::error::{Error, Result};
use crate::protocol::{self, Command, Opcode};

type Link = Arc<Mutex<BufWriter<TcpStream>>>;

pub struct TcpTransport {
    peers: Vec<SocketAddr>,
    mailbox: Arc<Mailbox>,
    links: Mutex<HashMap<(WorkerId, WorkerId), Link>>,
    stopping: Arc<AtomicBool>,
}

impl TcpTransport {
    /// Bind one peer listener per worker on `host` (ephemeral ports).
    pub fn bind(workers: usize, host: &str) -> Result<Arc<Self>> {
        let mailbox = Arc::new(Mailbox::default());
        let stopping = Arc::new(AtomicBool::new(false));
        let mut peers = Vec::with_capacity(workers);
        for w in 0..workers {
            let listener = TcpListener::bind((host, 0))?;
            peers.push(listener.local_addr()?);
            let mailbox = mailbox.clone();
            let stopping = stopping.clone();
            thread::Builder::new()
                .name(format!("peer-accept-{w}"))
                .spawn(move || accept_loop(listener, mailbox, stopping))?;
        }
        Ok(Arc::new(Self {
            peers,
            mailbox,
            links: Mutex::new(HashMap::new()),
            stopping,
        }))
    }

    pub fn peer_endpoints(&self) -> &[SocketAddr] {
        &self.peers
    }

    fn link(&self, from: WorkerId, to: WorkerId) -> Result<Link> {
        let mut links = self.links.lock().unwrap();
        if let Some(l) = links.get(&(from, to)) {
            return Ok(l.clone());
        }
        let addr = self
            .peers
            .get(to as usize)
            .ok_or_else(|| Error::Argument(format!("no peer endpoint for worker {to}")))?;
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let link = Arc::new(Mutex::new(BufWriter::new(stream)));
        links.insert((from, to), link.clone());
        Ok(link)
    }
}

fn accept_loop(listener: TcpListener, mailbox: Arc<Mailbox>, stopping: Arc<AtomicBool>) {
    for conn in listener.incoming() {
        if stopping.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = conn else { continue };
        let mailbox = mailbox.clone();
        let _ = thread::Builder::new()
            .name("peer-read".into())
            .spawn(move || read_loop(stream, mailbox));
    }
}

fn read_loop(stream: TcpStream, mailbox: Arc<Mailbox>) {
    let mut r = BufReader::new(stream);
    loop {
        let frame = match protocol::read_frame(&mut r) {
            Ok(Some(f)) => f,
            Ok(None) => return,
            Err(e) => {
                log::warn!("peer link dropped: {e}");
                return;
            }
        };
        if frame.command != Command::Request(Opcode::Collective) {
            log::warn!("unexpected command {:?} on peer link", frame.command);
            return;
        }
        match protocol::decode_collective_payload(frame.payload) {
            Ok((from, to, body)) => mailbox.deliver(frame.session_id, from, to, body),
            Err(e) => {
                log::warn!("malformed collective frame: {e}");
                return;
            }
        }
    }
}

impl Transport for TcpTransport {
    fn name(&self) -> &str {
        "tcp"
    }

    fn send(&self, group: u32, from: WorkerId, to: WorkerId, data: Vec<u8>) -> Result<()> {
        let link = self.link(from, to)?;
        let payload = protocol::encode_collective_payload(from, to, &data);
        let mut w = link.lock().unwrap();
        let res = protocol::write_frame(
            &mut *w,
            Command::Request(Opcode::Collective),
            group,
            &payload,
        )
        .and_then(|_| w.flush().map_err(Error::from));
        if let Err(e) = res {
            drop(w);
            self.links.lock().unwrap().remove(&(from, to));
            return Err(Error::GroupFailure(format!(
                "send from worker {from} to {to} failed: {e}"
            )));
        }
        Ok(())
    }

    fn recv(&self, group: u32, from: WorkerId, to: WorkerId, timeout: Duration) -> Result<Vec<u8>> {
        self.mailbox.take(group, from, to, timeout)
    }

    fn forget_group(&self, group: u32) {
        self.mailbox.clear_group(group);
    }
}

impl Drop for TcpTransport {
    fn drop(&mut self) {
        self.stopping.store(true, Ordering::SeqCst);
        self.links.lock().unwrap().clear();
        for addr in &self.peers {
            // Wake the accept loop so it observes the flag.
            let _ = TcpStream::connect_timeout(addr, Duration::from_millis(200));
        }
    }
}
