//! Length-delimited TCP: each frame is a big-endian `u32` byte count followed
//! by one encoded message.

use std::collections::BTreeMap;
use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, sleep, JoinHandle};
use std::time::{Duration, Instant};

use super::{CoordinatorLink, Incoming, SiteLink};
use crate::data::SiteId;
use crate::fedproto::{decode, Message, ProtoError, Round};

/// Upper bound on a single frame; larger announcements are treated as corrupt.
pub const MAX_FRAME_BYTES: usize = 256 << 20;

pub fn write_frame(stream: &mut impl Write, bytes: &[u8]) -> std::io::Result<()> {
    let len = u32::try_from(bytes.len()).map_err(|_| std::io::Error::new(ErrorKind::InvalidInput, "frame too large"))?;
    stream.write_all(&len.to_be_bytes())?;
    stream.write_all(bytes)?;
    stream.flush()
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
pub fn read_frame(stream: &mut impl Read) -> std::io::Result<Option<Vec<u8>>> {
    let mut header = [0u8; 4];
    match stream.read_exact(&mut header) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_FRAME_BYTES {
        return Err(std::io::Error::new(ErrorKind::InvalidData, format!("frame of {len} bytes exceeds limit")));
    }
    let mut body = vec![0u8; len];
    stream.read_exact(&mut body)?;
    Ok(Some(body))
}

enum Event {
    Frame(usize, Vec<u8>),
    Closed(usize),
}

/// Accepts site connections in the background and funnels their frames into
/// one queue.
pub struct TcpCoordinator {
    addr: SocketAddr,
    events: Receiver<Event>,
    writers: Arc<Mutex<BTreeMap<usize, TcpStream>>>,
    /// Connection → site, learned from each connection's first upload.
    identities: BTreeMap<usize, SiteId>,
    shutdown: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

impl TcpCoordinator {
    pub fn bind(addr: impl ToSocketAddrs) -> Result<Self, ProtoError> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let (tx, rx) = channel();
        let writers = Arc::new(Mutex::new(BTreeMap::new()));
        let shutdown = Arc::new(AtomicBool::new(false));
        let acceptor = {
            let (writers, shutdown) = (writers.clone(), shutdown.clone());
            thread::spawn(move || accept_loop(listener, tx, writers, shutdown))
        };
        Ok(TcpCoordinator { addr, events: rx, writers, identities: BTreeMap::new(), shutdown, acceptor: Some(acceptor) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    fn send_all(&mut self, bytes: &[u8]) -> Result<(), ProtoError> {
        let mut writers = self.writers.lock().expect("writer table poisoned");
        for stream in writers.values_mut() {
            // A broken connection surfaces as a `Closed` event from its reader.
            let _ = write_frame(stream, bytes);
        }
        Ok(())
    }
}

fn accept_loop(listener: TcpListener, tx: Sender<Event>, writers: Arc<Mutex<BTreeMap<usize, TcpStream>>>, shutdown: Arc<AtomicBool>) {
    let mut next = 0usize;
    while !shutdown.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                let id = next;
                next += 1;
                if stream.set_nonblocking(false).is_err() {
                    continue;
                }
                let _ = stream.set_nodelay(true);
                let Ok(writer) = stream.try_clone() else { continue };
                writers.lock().expect("writer table poisoned").insert(id, writer);
                let tx = tx.clone();
                thread::spawn(move || {
                    let mut stream = stream;
                    loop {
                        match read_frame(&mut stream) {
                            Ok(Some(bytes)) => {
                                if tx.send(Event::Frame(id, bytes)).is_err() {
                                    return;
                                }
                            }
                            _ => {
                                let _ = tx.send(Event::Closed(id));
                                return;
                            }
                        }
                    }
                });
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => sleep(Duration::from_millis(2)),
            Err(_) => sleep(Duration::from_millis(2)),
        }
    }
}

impl Drop for TcpCoordinator {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::Relaxed);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
        if let Ok(mut writers) = self.writers.lock() {
            for stream in writers.values() {
                let _ = stream.shutdown(std::net::Shutdown::Both);
            }
            writers.clear();
        }
    }
}

impl CoordinatorLink for TcpCoordinator {
    fn receive(&mut self, _round: Round, timeout: Duration) -> Result<Incoming, ProtoError> {
        match self.events.recv_timeout(timeout) {
            Ok(Event::Frame(conn, bytes)) => {
                if let Ok(env) = decode(&bytes) {
                    let site = match &env.message {
                        Message::Round1Upload(u) => Some(u.site),
                        Message::Round2Upload(u) => Some(u.site),
                        Message::Abort(a) => a.site,
                        Message::Round1Broadcast(_) => None,
                    };
                    if let Some(site) = site {
                        self.identities.entry(conn).or_insert(site);
                    }
                }
                Ok(Incoming::Message(bytes))
            }
            Ok(Event::Closed(conn)) => {
                self.writers.lock().expect("writer table poisoned").remove(&conn);
                Ok(Incoming::Dropped(self.identities.get(&conn).copied()))
            }
            Err(RecvTimeoutError::Timeout) => Ok(Incoming::TimedOut),
            Err(RecvTimeoutError::Disconnected) => Err(ProtoError::Transport("acceptor stopped".into())),
        }
    }

    fn broadcast(&mut self, bytes: &[u8]) -> Result<(), ProtoError> {
        self.send_all(bytes)
    }

    fn abort(&mut self, bytes: &[u8]) -> Result<(), ProtoError> {
        self.send_all(bytes)
    }
}

pub struct TcpSite {
    stream: TcpStream,
}

impl TcpSite {
    /// Connects, retrying until `timeout` so sites may start before the coordinator.
    pub fn connect(addr: impl ToSocketAddrs + Clone, timeout: Duration) -> Result<Self, ProtoError> {
        let deadline = Instant::now() + timeout;
        loop {
            match TcpStream::connect(addr.clone()) {
                Ok(stream) => {
                    stream.set_nodelay(true)?;
                    return Ok(TcpSite { stream });
                }
                Err(e) if Instant::now() >= deadline => return Err(ProtoError::Transport(format!("connect: {e}"))),
                Err(_) => sleep(Duration::from_millis(20)),
            }
        }
    }
}

impl SiteLink for TcpSite {
    fn upload(&mut self, _round: Round, bytes: &[u8]) -> Result<(), ProtoError> {
        write_frame(&mut self.stream, bytes).map_err(Into::into)
    }

    fn await_broadcast(&mut self, timeout: Duration) -> Result<Vec<u8>, ProtoError> {
        self.stream.set_read_timeout(Some(timeout.max(Duration::from_millis(1))))?;
        let frame = read_frame(&mut self.stream);
        self.stream.set_read_timeout(None)?;
        match frame {
            Ok(Some(bytes)) => Ok(bytes),
            Ok(None) => Err(ProtoError::SessionAborted("coordinator closed the connection".into())),
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                Err(ProtoError::SessionAborted("no broadcast before the deadline".into()))
            }
            Err(e) => Err(e.into()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_round_trip() {
        let mut buf = Vec::new();
        write_frame(&mut buf, b"hello").unwrap();
        write_frame(&mut buf, b"").unwrap();
        assert_eq!(&buf[..4], &[0, 0, 0, 5]);
        let mut cursor = std::io::Cursor::new(buf);
        assert_eq!(read_frame(&mut cursor).unwrap().unwrap(), b"hello");
        assert_eq!(read_frame(&mut cursor).unwrap().unwrap(), b"");
        assert!(read_frame(&mut cursor).unwrap().is_none());
    }

    #[test]
    fn oversized_frame_rejected() {
        let mut cursor = std::io::Cursor::new(vec![0xff, 0xff, 0xff, 0xff]);
        assert!(read_frame(&mut cursor).is_err());
    }
}
