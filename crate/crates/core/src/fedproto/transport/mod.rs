//! Transports move opaque encoded messages; all protocol logic lives in the
//! coordinator and site state machines.

mod directory;
mod memory;
mod tcp;

use std::time::Duration;

pub use directory::{DirectoryCoordinator, DirectorySite};
pub use memory::{memory_network, MemoryCoordinator, MemorySite};
pub use tcp::{read_frame, write_frame, TcpCoordinator, TcpSite, MAX_FRAME_BYTES};

use super::{ProtoError, Round};
use crate::data::SiteId;

/// What the coordinator gets back from waiting on uploads.
#[derive(Debug, Clone, PartialEq)]
pub enum Incoming {
    Message(Vec<u8>),
    /// A site's connection ended; `None` when its identity is not yet known.
    Dropped(Option<SiteId>),
    TimedOut,
}

/// Coordinator end of a transport.
pub trait CoordinatorLink {
    /// Waits up to `timeout` for the next upload belonging to `round`.
    fn receive(&mut self, round: Round, timeout: Duration) -> Result<Incoming, ProtoError>;
    /// Delivers the round-one broadcast to every site.
    fn broadcast(&mut self, bytes: &[u8]) -> Result<(), ProtoError>;
    /// Best-effort notice that the session is over without a result.
    fn abort(&mut self, bytes: &[u8]) -> Result<(), ProtoError>;
    /// Called once with the rendered report after a successful session.
    fn complete(&mut self, _report_csv: &str) -> Result<(), ProtoError> {
        Ok(())
    }
}

/// Site end of a transport.
pub trait SiteLink {
    fn upload(&mut self, round: Round, bytes: &[u8]) -> Result<(), ProtoError>;
    /// Waits for the broadcast (or an abort notice).
    fn await_broadcast(&mut self, timeout: Duration) -> Result<Vec<u8>, ProtoError>;
}
