use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use super::{CoordinatorLink, Incoming, SiteLink};
use crate::data::SiteId;
use crate::fedproto::{ProtoError, Round};

enum Upstream {
    Frame(Vec<u8>),
    /// Sent when a site endpoint is dropped, whether or not it finished.
    Gone(SiteId),
}

pub struct MemoryCoordinator {
    rx: Receiver<Upstream>,
    sites: Vec<Sender<Vec<u8>>>,
}

pub struct MemorySite {
    site: SiteId,
    tx: Sender<Upstream>,
    rx: Receiver<Vec<u8>>,
}

/// Channels for one coordinator and `k` sites.
pub fn memory_network(k: usize) -> (MemoryCoordinator, Vec<MemorySite>) {
    let (up_tx, up_rx) = channel();
    let mut senders = Vec::with_capacity(k);
    let mut sites = Vec::with_capacity(k);
    for s in 0..k {
        let (tx, rx) = channel();
        senders.push(tx);
        sites.push(MemorySite { site: SiteId(s), tx: up_tx.clone(), rx });
    }
    (MemoryCoordinator { rx: up_rx, sites: senders }, sites)
}

impl MemorySite {
    pub fn site(&self) -> SiteId {
        self.site
    }
}

impl Drop for MemorySite {
    fn drop(&mut self) {
        let _ = self.tx.send(Upstream::Gone(self.site));
    }
}

impl CoordinatorLink for MemoryCoordinator {
    fn receive(&mut self, _round: Round, timeout: Duration) -> Result<Incoming, ProtoError> {
        match self.rx.recv_timeout(timeout) {
            Ok(Upstream::Frame(bytes)) => Ok(Incoming::Message(bytes)),
            Ok(Upstream::Gone(site)) => Ok(Incoming::Dropped(Some(site))),
            Err(RecvTimeoutError::Timeout) => Ok(Incoming::TimedOut),
            Err(RecvTimeoutError::Disconnected) => Ok(Incoming::Dropped(None)),
        }
    }

    fn broadcast(&mut self, bytes: &[u8]) -> Result<(), ProtoError> {
        // A site that already hung up is reported through its `Gone` marker.
        for tx in &self.sites {
            let _ = tx.send(bytes.to_vec());
        }
        Ok(())
    }

    fn abort(&mut self, bytes: &[u8]) -> Result<(), ProtoError> {
        self.broadcast(bytes)
    }
}

impl SiteLink for MemorySite {
    fn upload(&mut self, _round: Round, bytes: &[u8]) -> Result<(), ProtoError> {
        self.tx.send(Upstream::Frame(bytes.to_vec())).map_err(|_| ProtoError::Transport("coordinator hung up".into()))
    }

    fn await_broadcast(&mut self, timeout: Duration) -> Result<Vec<u8>, ProtoError> {
        match self.rx.recv_timeout(timeout) {
            Ok(bytes) => Ok(bytes),
            Err(RecvTimeoutError::Timeout) => Err(ProtoError::SessionAborted("no broadcast before the deadline".into())),
            Err(RecvTimeoutError::Disconnected) => Err(ProtoError::SessionAborted("coordinator hung up".into())),
        }
    }
}
