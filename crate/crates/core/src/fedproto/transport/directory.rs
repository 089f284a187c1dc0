//! Shared-directory exchange: every message is a file.
//!
//! ```text
//! <base>/<session>/round1/<site>.json
//! <base>/<session>/broadcast.json
//! <base>/<session>/round2/<site>.json
//! <base>/<session>/report.csv
//! ```
//!
//! Site files are named by the one-based site label. Files are written to a
//! temporary name and renamed, so a reader never sees a partial message.

use std::collections::BTreeSet;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::thread::sleep;
use std::time::{Duration, Instant};

use super::{CoordinatorLink, Incoming, SiteLink};
use crate::data::SiteId;
use crate::fedproto::{ProtoError, Round};

const POLL: Duration = Duration::from_millis(5);
const BROADCAST: &str = "broadcast.json";
const ABORT: &str = "abort.json";
const REPORT: &str = "report.csv";

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ProtoError> {
    let dir = path.parent().expect("message paths have a parent");
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(".{}.tmp", path.file_name().unwrap().to_string_lossy()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_if_exists(path: &Path) -> Result<Option<Vec<u8>>, ProtoError> {
    match fs::read(path) {
        Ok(b) => Ok(Some(b)),
        Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

pub struct DirectoryCoordinator {
    root: PathBuf,
    sites: usize,
    seen: BTreeSet<(Round, usize)>,
}

impl DirectoryCoordinator {
    /// Opens `<base>/<session>`. A session that already has a broadcast,
    /// abort notice or report is refused so stale files are never reused.
    pub fn new(base: &Path, session: &str, sites: usize) -> Result<Self, ProtoError> {
        let root = base.join(session);
        for name in [BROADCAST, ABORT, REPORT] {
            if root.join(name).exists() {
                return Err(ProtoError::Transport(format!("{} already holds a session ({name} exists)", root.display())));
            }
        }
        for r in [Round::One, Round::Two] {
            fs::create_dir_all(root.join(r.dir_name()))?;
        }
        Ok(DirectoryCoordinator { root, sites, seen: BTreeSet::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn report_path(&self) -> PathBuf {
        self.root.join(REPORT)
    }
}

impl CoordinatorLink for DirectoryCoordinator {
    fn receive(&mut self, round: Round, timeout: Duration) -> Result<Incoming, ProtoError> {
        let deadline = Instant::now() + timeout;
        let dir = self.root.join(round.dir_name());
        loop {
            for label in 1..=self.sites {
                if self.seen.contains(&(round, label)) {
                    continue;
                }
                if let Some(bytes) = read_if_exists(&dir.join(format!("{label}.json")))? {
                    self.seen.insert((round, label));
                    return Ok(Incoming::Message(bytes));
                }
            }
            if Instant::now() >= deadline {
                return Ok(Incoming::TimedOut);
            }
            sleep(POLL);
        }
    }

    fn broadcast(&mut self, bytes: &[u8]) -> Result<(), ProtoError> {
        write_atomic(&self.root.join(BROADCAST), bytes)
    }

    fn abort(&mut self, bytes: &[u8]) -> Result<(), ProtoError> {
        write_atomic(&self.root.join(ABORT), bytes)
    }

    fn complete(&mut self, report_csv: &str) -> Result<(), ProtoError> {
        write_atomic(&self.root.join(REPORT), report_csv.as_bytes())
    }
}

pub struct DirectorySite {
    root: PathBuf,
    site: SiteId,
}

impl DirectorySite {
    pub fn new(base: &Path, session: &str, site: SiteId) -> Self {
        DirectorySite { root: base.join(session), site }
    }
}

impl SiteLink for DirectorySite {
    fn upload(&mut self, round: Round, bytes: &[u8]) -> Result<(), ProtoError> {
        write_atomic(&self.root.join(round.dir_name()).join(format!("{}.json", self.site.label())), bytes)
    }

    fn await_broadcast(&mut self, timeout: Duration) -> Result<Vec<u8>, ProtoError> {
        let deadline = Instant::now() + timeout;
        loop {
            for name in [ABORT, BROADCAST] {
                if let Some(bytes) = read_if_exists(&self.root.join(name))? {
                    return Ok(bytes);
                }
            }
            if Instant::now() >= deadline {
                return Err(ProtoError::SessionAborted("no broadcast before the deadline".into()));
            }
            sleep(POLL);
        }
    }
}
