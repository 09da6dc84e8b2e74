//! Multi-process backend: one process per rank, TCP streams on localhost.
//!
//! Wire format per message: `u64le payload_length || u32le tag || payload`.
//! Ranks form a full mesh of stream connections; the connection identifies
//! the sender, established by a 4-byte hello. A launcher-side rendezvous
//! hands every worker its rank, the world size, an opaque setup string and
//! the peer address table, then collects one result string per rank.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::mailbox::Mailbox;
use super::{BackendKind, Communicator, RankId, TransportStats, MAX_FRAME_BYTES, RESERVED_TAG_BASE};
use crate::error::{MeshError, Result};

const TAG_BARRIER: u32 = RESERVED_TAG_BASE;

const CTRL_HELLO: u32 = 1;
const CTRL_LISTEN: u32 = 2;
const CTRL_PEERS: u32 = 3;
const CTRL_RESULT: u32 = 4;
const CTRL_ERROR: u32 = 5;

const SETUP_TIMEOUT: Duration = Duration::from_secs(60);

pub(crate) fn write_frame(w: &mut impl Write, tag: u32, payload: &[u8]) -> std::io::Result<()> {
    w.write_all(&(payload.len() as u64).to_le_bytes())?;
    w.write_all(&tag.to_le_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

pub(crate) fn read_frame(r: &mut impl Read) -> std::io::Result<(u32, Vec<u8>)> {
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)?;
    let len = u64::from_le_bytes(len_bytes);
    if len > MAX_FRAME_BYTES {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("frame of {len} bytes exceeds the wire limit"),
        ));
    }
    let mut tag_bytes = [0u8; 4];
    r.read_exact(&mut tag_bytes)?;
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload)?;
    Ok((u32::from_le_bytes(tag_bytes), payload))
}

#[derive(Serialize, Deserialize)]
struct Hello {
    rank: usize,
    world_size: usize,
    setup: String,
}

/// Launcher-side rendezvous point.
pub struct Rendezvous {
    listener: TcpListener,
    addr: SocketAddr,
}

impl Rendezvous {
    pub fn bind() -> Result<Self> {
        let listener = TcpListener::bind(("127.0.0.1", 0))?;
        let addr = listener.local_addr()?;
        Ok(Rendezvous { listener, addr })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Drive the setup protocol for `world_size` workers and collect one
    /// result string per rank (or the worker's error description).
    pub fn run(
        self,
        world_size: usize,
        setup: &str,
    ) -> Result<Vec<std::result::Result<String, String>>> {
        self.listener.set_nonblocking(true)?;
        let deadline = Instant::now() + SETUP_TIMEOUT;
        let mut conns: Vec<TcpStream> = Vec::with_capacity(world_size);
        while conns.len() < world_size {
            match self.listener.accept() {
                Ok((stream, _)) => {
                    stream.set_nodelay(true).ok();
                    stream.set_nonblocking(false)?;
                    conns.push(stream);
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    if Instant::now() > deadline {
                        return Err(MeshError::Transport(format!(
                            "only {} of {world_size} workers reached the rendezvous",
                            conns.len()
                        )));
                    }
                    std::thread::sleep(Duration::from_millis(5));
                }
                Err(e) => return Err(e.into()),
            }
        }
        // Rank assignment in accept order.
        for (rank, conn) in conns.iter_mut().enumerate() {
            conn.set_read_timeout(Some(SETUP_TIMEOUT))?;
            let hello = Hello {
                rank,
                world_size,
                setup: setup.to_string(),
            };
            write_frame(conn, CTRL_HELLO, &serde_json::to_vec(&hello)?)?;
        }
        let mut peer_addrs = Vec::with_capacity(world_size);
        for conn in conns.iter_mut() {
            let (tag, payload) = read_frame(conn)?;
            if tag != CTRL_LISTEN {
                return Err(MeshError::Transport("worker skipped listen step".into()));
            }
            peer_addrs.push(String::from_utf8_lossy(&payload).into_owned());
        }
        let table = serde_json::to_vec(&peer_addrs)?;
        for conn in conns.iter_mut() {
            write_frame(conn, CTRL_PEERS, &table)?;
        }
        // Benchmark execution time is unbounded from here on.
        let mut results = Vec::with_capacity(world_size);
        for (rank, conn) in conns.iter_mut().enumerate() {
            conn.set_read_timeout(None)?;
            match read_frame(conn) {
                Ok((CTRL_RESULT, payload)) => {
                    results.push(Ok(String::from_utf8_lossy(&payload).into_owned()));
                }
                Ok((CTRL_ERROR, payload)) => {
                    results.push(Err(String::from_utf8_lossy(&payload).into_owned()));
                }
                Ok((tag, _)) => results.push(Err(format!("unexpected control tag {tag}"))),
                Err(e) => results.push(Err(format!("rank {rank} dropped the connection: {e}"))),
            }
        }
        Ok(results)
    }
}

/// Worker-side join: connect to the rendezvous, learn the rank and peers,
/// build the mesh. Returns the communicator, the launcher's setup string and
/// the channel for the final result.
pub fn worker_join(rendezvous: &str) -> Result<(SocketComm, String, ResultReporter)> {
    let addr: SocketAddr = rendezvous
        .parse()
        .map_err(|e| MeshError::Config(format!("bad rendezvous address {rendezvous}: {e}")))?;
    let mut control = connect_with_retry(addr)?;
    control.set_nodelay(true).ok();
    control.set_read_timeout(Some(SETUP_TIMEOUT))?;

    let (tag, payload) = read_frame(&mut control)?;
    if tag != CTRL_HELLO {
        return Err(MeshError::Transport("rendezvous skipped hello".into()));
    }
    let hello: Hello = serde_json::from_slice(&payload)?;
    let (rank, world_size) = (hello.rank, hello.world_size);

    let listener = TcpListener::bind(("127.0.0.1", 0))?;
    let my_addr = listener.local_addr()?.to_string();
    write_frame(&mut control, CTRL_LISTEN, my_addr.as_bytes())?;

    let (tag, payload) = read_frame(&mut control)?;
    if tag != CTRL_PEERS {
        return Err(MeshError::Transport("rendezvous skipped peer table".into()));
    }
    let peers: Vec<String> = serde_json::from_slice(&payload)?;

    // Mesh: connect to every lower rank, accept from every higher one. A
    // 4-byte little-endian hello names the initiating rank.
    let mut streams: Vec<Option<TcpStream>> = (0..world_size).map(|_| None).collect();
    for (peer, peer_addr) in peers.iter().enumerate().take(rank) {
        let peer_sock: SocketAddr = peer_addr
            .parse()
            .map_err(|e| MeshError::Transport(format!("bad peer address {peer_addr}: {e}")))?;
        let mut stream = connect_with_retry(peer_sock)?;
        stream.set_nodelay(true).ok();
        stream.write_all(&(rank as u32).to_le_bytes())?;
        stream.flush()?;
        streams[peer] = Some(stream);
    }
    for _ in rank + 1..world_size {
        let (mut stream, _) = listener.accept()?;
        stream.set_nodelay(true).ok();
        let mut hello_bytes = [0u8; 4];
        stream.read_exact(&mut hello_bytes)?;
        let peer = u32::from_le_bytes(hello_bytes) as usize;
        if peer >= world_size || streams[peer].is_some() {
            return Err(MeshError::Transport(format!("bad mesh hello from {peer}")));
        }
        streams[peer] = Some(stream);
    }

    let comm = SocketComm::new(rank, world_size, streams)?;
    control.set_read_timeout(None)?;
    Ok((comm, hello.setup, ResultReporter { control }))
}

fn connect_with_retry(addr: SocketAddr) -> Result<TcpStream> {
    let deadline = Instant::now() + SETUP_TIMEOUT;
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) => {
                if Instant::now() > deadline {
                    return Err(MeshError::Transport(format!("cannot reach {addr}: {e}")));
                }
                std::thread::sleep(Duration::from_millis(10));
            }
        }
    }
}

/// Hands the worker's final result string back to the launcher.
pub struct ResultReporter {
    control: TcpStream,
}

impl ResultReporter {
    pub fn submit(mut self, result: &str) -> Result<()> {
        write_frame(&mut self.control, CTRL_RESULT, result.as_bytes())?;
        Ok(())
    }

    pub fn submit_error(mut self, message: &str) -> Result<()> {
        write_frame(&mut self.control, CTRL_ERROR, message.as_bytes())?;
        Ok(())
    }
}

/// Communicator of one rank-process (or rank-thread in tests).
pub struct SocketComm {
    rank: usize,
    world_size: usize,
    mailbox: Arc<Mailbox>,
    writers: Vec<Option<mpsc::Sender<(u32, Vec<u8>)>>>,
    writer_threads: Vec<std::thread::JoinHandle<()>>,
    messages_sent: AtomicU64,
    bytes_sent: AtomicU64,
    epoch: Instant,
}

impl Drop for SocketComm {
    /// Drain the outgoing queues before the rank goes away: the writer
    /// threads finish all pending frames once their senders drop.
    fn drop(&mut self) {
        self.writers.clear();
        for handle in self.writer_threads.drain(..) {
            handle.join().ok();
        }
    }
}

impl SocketComm {
    fn new(rank: usize, world_size: usize, streams: Vec<Option<TcpStream>>) -> Result<Self> {
        let mailbox = Arc::new(Mailbox::new());
        let mut writers = Vec::with_capacity(world_size);
        let mut writer_threads = Vec::new();
        for (peer, stream) in streams.into_iter().enumerate() {
            let Some(stream) = stream else {
                writers.push(None);
                continue;
            };
            let mut read_half = stream.try_clone()?;
            let inbox = Arc::clone(&mailbox);
            std::thread::spawn(move || {
                while let Ok((tag, payload)) = read_frame(&mut read_half) {
                    inbox.push(peer, tag, payload);
                }
            });
            let (tx, rx) = mpsc::channel::<(u32, Vec<u8>)>();
            let mut write_half = stream;
            writer_threads.push(std::thread::spawn(move || {
                // `recv` drains every queued frame before reporting
                // disconnection, so dropping the sender flushes the queue.
                while let Ok((tag, payload)) = rx.recv() {
                    if write_frame(&mut write_half, tag, &payload).is_err() {
                        break;
                    }
                }
            }));
            writers.push(Some(tx));
        }
        Ok(SocketComm {
            rank,
            world_size,
            mailbox,
            writers,
            writer_threads,
            messages_sent: AtomicU64::new(0),
            bytes_sent: AtomicU64::new(0),
            epoch: Instant::now(),
        })
    }

    fn send_tagged(&self, to: RankId, tag: u32, payload: &[u8]) -> Result<()> {
        self.check_peer(to)?;
        if payload.len() as u64 > MAX_FRAME_BYTES {
            return Err(MeshError::FrameTooLarge {
                size: payload.len() as u64,
                limit: MAX_FRAME_BYTES,
            });
        }
        if to.0 == self.rank {
            self.mailbox.push(self.rank, tag, payload.to_vec());
        } else {
            let writer = self.writers[to.0]
                .as_ref()
                .expect("mesh connection missing");
            writer
                .send((tag, payload.to_vec()))
                .map_err(|_| MeshError::Transport(format!("rank {to} disconnected")))?;
        }
        self.messages_sent.fetch_add(1, Ordering::Relaxed);
        self.bytes_sent
            .fetch_add(payload.len() as u64, Ordering::Relaxed);
        Ok(())
    }
}

impl Communicator for SocketComm {
    fn rank(&self) -> RankId {
        RankId(self.rank)
    }

    fn world_size(&self) -> usize {
        self.world_size
    }

    fn backend(&self) -> BackendKind {
        BackendKind::Socket
    }

    fn send(&self, to: RankId, tag: u32, payload: &[u8]) -> Result<()> {
        debug_assert!(tag < RESERVED_TAG_BASE, "tag collides with runtime tags");
        self.send_tagged(to, tag, payload)
    }

    fn recv(&self, from: RankId, tag: u32) -> Result<Vec<u8>> {
        self.check_peer(from)?;
        self.mailbox.pop_blocking(from.0, tag)
    }

    /// Flat coordinator barrier: everyone reports to rank 0, rank 0
    /// releases.
    fn barrier(&self) -> Result<()> {
        if self.world_size == 1 {
            return Ok(());
        }
        if self.rank == 0 {
            for peer in 1..self.world_size {
                self.mailbox.pop_blocking(peer, TAG_BARRIER)?;
            }
            for peer in 1..self.world_size {
                self.send_tagged(RankId(peer), TAG_BARRIER, &[])?;
            }
        } else {
            self.send_tagged(RankId(0), TAG_BARRIER, &[])?;
            self.mailbox.pop_blocking(0, TAG_BARRIER)?;
        }
        Ok(())
    }

    fn clock_seconds(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64()
    }

    fn virtual_clock(&self) -> Result<f64> {
        Err(MeshError::Unsupported(
            "virtual clock on the socket backend".into(),
        ))
    }

    fn advance(&self, seconds: f64) {
        if seconds > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(seconds));
        }
    }

    fn stats(&self) -> TransportStats {
        TransportStats {
            messages_sent: self.messages_sent.load(Ordering::Relaxed),
            bytes_sent: self.bytes_sent.load(Ordering::Relaxed),
        }
    }
}
