//! Coordinator state machine and session drivers.

use std::path::Path;
use std::thread;
use std::time::Instant;

use rayon::prelude::*;

use crate::brdac::{br_dor_estimate, br_estimate, BRAggregatedData};
use crate::dac::{dac_estimate, dcw_tau, dor_estimate, AggregatedData, EstimateReport};
use crate::data::{SiteDataset, SiteId, SiteSet};
use crate::outcome::{Basis, BasisSpec};

use super::report::write_report_csv;
use super::site::{run_site, site_round1, site_round2};
use super::transport::{
    memory_network, CoordinatorLink, DirectoryCoordinator, DirectorySite, Incoming, SiteLink, TcpCoordinator, TcpSite,
};
use super::{
    decode, encode, AbortNotice, Envelope, Message, Mode, ProtoError, Round, Round1Broadcast, Round1Upload,
    Round2Payload, SessionConfig,
};

/// What accepting one message did to the session.
#[derive(Debug, Clone, PartialEq)]
pub enum Progress {
    Waiting,
    /// Round one is complete; this must be sent to every site.
    Broadcast(Round1Broadcast),
    /// Round two is complete; estimates can be assembled.
    Complete,
}

/// Sequential per-session state. Uploads may arrive in any order; the
/// broadcast and the assembled estimates depend only on their contents.
#[derive(Debug, Clone)]
pub struct Coordinator {
    cfg: SessionConfig,
    round1: Vec<Option<Round1Upload>>,
    broadcast: Option<Round1Broadcast>,
    round2: Vec<Option<Round2Payload>>,
}

impl Coordinator {
    pub fn new(cfg: SessionConfig) -> Result<Self, ProtoError> {
        cfg.validate()?;
        let k = cfg.sites;
        Ok(Coordinator { cfg, round1: vec![None; k], broadcast: None, round2: vec![None; k] })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    /// The round currently collecting uploads.
    pub fn round(&self) -> Round {
        if self.broadcast.is_some() {
            Round::Two
        } else {
            Round::One
        }
    }

    pub fn is_complete(&self) -> bool {
        self.round2.iter().all(Option::is_some)
    }

    /// Sites the current round is still waiting on.
    pub fn missing(&self) -> Vec<SiteId> {
        let filled: Vec<bool> = match self.round() {
            Round::One => self.round1.iter().map(Option::is_some).collect(),
            Round::Two => self.round2.iter().map(Option::is_some).collect(),
        };
        filled.iter().enumerate().filter(|(_, f)| !**f).map(|(s, _)| SiteId(s)).collect()
    }

    /// True once `site` has nothing left to send.
    pub fn delivered_all(&self, site: SiteId) -> bool {
        self.round2.get(site.index()).is_some_and(Option::is_some)
    }

    fn site_slot(&self, site: SiteId) -> Result<usize, ProtoError> {
        if site.index() < self.cfg.sites {
            Ok(site.index())
        } else {
            Err(ProtoError::SchemaViolation(format!("site index {} outside the session", site.index())))
        }
    }

    pub fn accept(&mut self, env: Envelope) -> Result<Progress, ProtoError> {
        if env.session != self.cfg.session {
            return Err(ProtoError::SessionMismatch { expected: self.cfg.session.clone(), found: env.session });
        }
        match (self.round(), env.message) {
            (_, Message::Abort(AbortNotice { site, reason })) => Err(match site {
                Some(site) => ProtoError::SiteFailure { site, reason },
                None => ProtoError::SessionAborted(reason),
            }),
            (Round::One, Message::Round1Upload(up)) => {
                let slot = self.site_slot(up.site)?;
                self.check_round1(&up)?;
                if self.round1[slot].replace(up).is_some() {
                    return Err(ProtoError::SchemaViolation(format!("duplicate round-one upload from site {}", SiteId(slot))));
                }
                if self.round1.iter().all(Option::is_some) {
                    let b = Round1Broadcast { uploads: self.round1.iter().flatten().cloned().collect() };
                    b.validate(self.cfg.sites)?;
                    self.broadcast = Some(b.clone());
                    return Ok(Progress::Broadcast(b));
                }
                Ok(Progress::Waiting)
            }
            (Round::Two, Message::Round2Upload(up)) => {
                let slot = self.site_slot(up.site)?;
                self.check_round2(up.site, &up.payload)?;
                if self.round2[slot].replace(up.payload).is_some() {
                    return Err(ProtoError::SchemaViolation(format!("duplicate round-two upload from site {}", SiteId(slot))));
                }
                Ok(if self.is_complete() { Progress::Complete } else { Progress::Waiting })
            }
            (round, m) => Err(ProtoError::SchemaViolation(format!("unexpected {} during round {round:?}", m.kind()))),
        }
    }

    fn check_round1(&self, up: &Round1Upload) -> Result<(), ProtoError> {
        if up.n == 0 {
            return Err(ProtoError::SchemaViolation(format!("site {} reports no subjects", up.site)));
        }
        match (self.cfg.mode, &up.model) {
            (Mode::DacNonparametric, Some(m)) if m.site == up.site && basis_matches(&m.basis, &self.cfg.basis) => Ok(()),
            (Mode::DacNonparametric, _) => {
                Err(ProtoError::SchemaViolation(format!("site {} sent no model matching the session basis", up.site)))
            }
            (Mode::DacBr, None) => Ok(()),
            (Mode::DacBr, Some(_)) => Err(ProtoError::SchemaViolation("bias-reduced uploads must not carry a model".into())),
        }
    }

    fn check_round2(&self, site: SiteId, payload: &Round2Payload) -> Result<(), ProtoError> {
        let sizes = self.broadcast.as_ref().expect("round two follows the broadcast").sizes();
        let k = self.cfg.sites;
        let bad = |what: &str| ProtoError::SchemaViolation(format!("round-two payload of site {site}: {what}"));
        match (self.cfg.mode, payload) {
            (Mode::DacNonparametric, Round2Payload::Dac(ad)) => {
                ad.validate().map_err(|e| bad(&e.to_string()))?;
                if ad.site != site || ad.n != sizes[site.index()] || ad.sites() != k {
                    return Err(bad("header disagrees with round one"));
                }
            }
            (Mode::DacBr, Round2Payload::Br(b)) => {
                if b.site != site || b.n != sizes[site.index()] || b.sites != k || b.blocks.len() != (1 << k) - 1 {
                    return Err(bad("header disagrees with round one"));
                }
            }
            _ => return Err(bad("payload schema does not match the session mode")),
        }
        Ok(())
    }

    /// Every estimate: subsets in increasing mask order, then `k`, then `k'`,
    /// then method.
    pub fn assemble(&self) -> Result<Vec<EstimateReport>, ProtoError> {
        if !self.is_complete() {
            return Err(ProtoError::SessionAborted(format!("round two incomplete; missing {:?}", self.missing())));
        }
        let k = self.cfg.sites;
        let queries: Vec<(SiteSet, SiteId, SiteId)> = SiteSet::nonempty_subsets(k)
            .flat_map(|s| (0..k).flat_map(move |a| (0..k).filter(move |&b| b != a).map(move |b| (s, SiteId(a), SiteId(b)))))
            .collect();
        let est = |e: String| ProtoError::Estimation(e);
        let per_query: Vec<Vec<EstimateReport>> = match self.cfg.mode {
            Mode::DacNonparametric => {
                let ads: Vec<AggregatedData> = self
                    .round2
                    .iter()
                    .map(|p| match p {
                        Some(Round2Payload::Dac(a)) => a.clone(),
                        _ => unreachable!("payload kinds are checked on arrival"),
                    })
                    .collect();
                queries
                    .par_iter()
                    .map(|&(s, a, b)| {
                        Ok(vec![
                            dac_estimate(&ads, s, a, b).map_err(|e| est(e.to_string()))?,
                            dor_estimate(&ads, s, a, b).map_err(|e| est(e.to_string()))?,
                            dcw_tau(&ads, s, a, b).map_err(|e| est(e.to_string()))?,
                        ])
                    })
                    .collect::<Result<_, ProtoError>>()?
            }
            Mode::DacBr => {
                let brads: Vec<BRAggregatedData> = self
                    .round2
                    .iter()
                    .map(|p| match p {
                        Some(Round2Payload::Br(a)) => a.clone(),
                        _ => unreachable!("payload kinds are checked on arrival"),
                    })
                    .collect();
                queries
                    .par_iter()
                    .map(|&(s, a, b)| {
                        Ok(vec![
                            br_estimate(&brads, s, a, b).map_err(|e| est(e.to_string()))?,
                            br_dor_estimate(&brads, s, a, b).map_err(|e| est(e.to_string()))?,
                        ])
                    })
                    .collect::<Result<_, ProtoError>>()?
            }
        };
        Ok(per_query.into_iter().flatten().collect())
    }
}

/// Same family and covariate count; spline knot counts may shrink when
/// quantiles coincide, so they are not compared.
fn basis_matches(basis: &Basis, spec: &BasisSpec) -> bool {
    match (basis, spec) {
        (Basis::Linear { .. }, BasisSpec::Linear) => true,
        (Basis::CubicSpline { axes }, BasisSpec::CubicSpline { interior_knots }) => axes.len() == interior_knots.len(),
        _ => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Upload,
    Broadcast,
    Abort,
}

/// One message seen by the coordinator, with its exact encoded bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub direction: Direction,
    pub round: Round,
    pub site: Option<SiteId>,
    pub kind: &'static str,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransportLog {
    pub entries: Vec<LogEntry>,
}

impl TransportLog {
    fn record(&mut self, direction: Direction, round: Round, site: Option<SiteId>, kind: &'static str, bytes: &[u8]) {
        self.entries.push(LogEntry { direction, round, site, kind, bytes: bytes.to_vec() });
    }

    /// Uploads received from `site`; each is answered by one downstream
    /// message, so this is the site's number of round trips.
    pub fn round_trips(&self, site: SiteId) -> usize {
        self.entries.iter().filter(|e| e.direction == Direction::Upload && e.site == Some(site)).count()
    }

    pub fn broadcasts(&self) -> usize {
        self.entries.iter().filter(|e| e.direction == Direction::Broadcast).count()
    }

    pub fn total_bytes(&self) -> usize {
        self.entries.iter().map(|e| e.bytes.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutcome {
    pub reports: Vec<EstimateReport>,
    pub log: TransportLog,
}

impl SessionOutcome {
    pub fn report_csv(&self) -> Result<String, ProtoError> {
        write_report_csv(&self.reports)
    }
}

fn upload_site(m: &Message) -> Option<SiteId> {
    match m {
        Message::Round1Upload(u) => Some(u.site),
        Message::Round2Upload(u) => Some(u.site),
        Message::Abort(a) => a.site,
        Message::Round1Broadcast(_) => None,
    }
}

/// Drives one session over `link`: two barriers, then assembly. Any timeout,
/// dropout or invalid message aborts the session and no estimates are returned.
pub fn coordinator_run(cfg: &SessionConfig, link: &mut dyn CoordinatorLink) -> Result<SessionOutcome, ProtoError> {
    let mut coord = Coordinator::new(cfg.clone())?;
    let mut log = TransportLog::default();
    match drive(&mut coord, link, &mut log) {
        Ok(reports) => {
            link.complete(&write_report_csv(&reports)?)?;
            Ok(SessionOutcome { reports, log })
        }
        Err(e) => {
            let notice = Message::Abort(AbortNotice { site: None, reason: e.to_string() });
            if let Ok(bytes) = encode(&Envelope { session: cfg.session.clone(), message: notice }) {
                // Best effort: sites may already be gone.
                if link.abort(&bytes).is_ok() {
                    log.record(Direction::Abort, coord.round(), None, "abort", &bytes);
                }
            }
            Err(e)
        }
    }
}

fn drive(coord: &mut Coordinator, link: &mut dyn CoordinatorLink, log: &mut TransportLog) -> Result<Vec<EstimateReport>, ProtoError> {
    let timeout = coord.config().round_timeout();
    for round in [Round::One, Round::Two] {
        let deadline = Instant::now() + timeout;
        while coord.round() == round && !coord.is_complete() {
            let remaining = deadline.saturating_duration_since(Instant::now());
            let incoming = if remaining.is_zero() { Incoming::TimedOut } else { link.receive(round, remaining)? };
            match incoming {
                Incoming::Message(bytes) => {
                    let env = decode(&bytes)?;
                    log.record(Direction::Upload, round, upload_site(&env.message), env.message.kind(), &bytes);
                    if let Progress::Broadcast(b) = coord.accept(env)? {
                        let session = coord.config().session.clone();
                        let bytes = encode(&Envelope { session, message: Message::Round1Broadcast(b) })?;
                        link.broadcast(&bytes)?;
                        log.record(Direction::Broadcast, Round::One, None, "round1-broadcast", &bytes);
                    }
                }
                Incoming::Dropped(Some(site)) if coord.delivered_all(site) => {}
                Incoming::Dropped(site) => {
                    let who = site.map_or_else(|| "an unidentified site".to_string(), |s| format!("site {s}"));
                    return Err(ProtoError::SessionAborted(format!("{who} disconnected during round {round:?}")));
                }
                Incoming::TimedOut => {
                    let missing: Vec<String> = coord.missing().iter().map(ToString::to_string).collect();
                    return Err(ProtoError::SessionAborted(format!(
                        "round {round:?} timed out waiting for site(s) {}",
                        missing.join(", ")
                    )));
                }
            }
        }
    }
    coord.assemble()
}

/// Single-process session. Messages still pass through the encoder and
/// decoder, so the result is bit-identical to any networked run.
pub fn run_local(cfg: &SessionConfig, data: &[SiteDataset]) -> Result<SessionOutcome, ProtoError> {
    check_site_count(cfg, data)?;
    let mut coord = Coordinator::new(cfg.clone())?;
    let mut log = TransportLog::default();
    let wire = |m: Message| -> Result<(Vec<u8>, Envelope), ProtoError> {
        let bytes = encode(&Envelope { session: cfg.session.clone(), message: m })?;
        let env = decode(&bytes)?;
        Ok((bytes, env))
    };
    let mut broadcast = None;
    for (s, d) in data.iter().enumerate() {
        let (bytes, env) = wire(Message::Round1Upload(site_round1(d, SiteId(s), cfg)?))?;
        log.record(Direction::Upload, Round::One, Some(SiteId(s)), "round1-upload", &bytes);
        if let Progress::Broadcast(b) = coord.accept(env)? {
            broadcast = Some(b);
        }
    }
    let (bytes, env) = wire(Message::Round1Broadcast(broadcast.expect("all round-one uploads accepted")))?;
    log.record(Direction::Broadcast, Round::One, None, "round1-broadcast", &bytes);
    let Message::Round1Broadcast(broadcast) = env.message else { unreachable!() };
    for (s, d) in data.iter().enumerate() {
        let (bytes, env) = wire(Message::Round2Upload(site_round2(d, SiteId(s), &broadcast, cfg)?))?;
        log.record(Direction::Upload, Round::Two, Some(SiteId(s)), "round2-upload", &bytes);
        coord.accept(env)?;
    }
    Ok(SessionOutcome { reports: coord.assemble()?, log })
}

/// Every site on its own thread, connected through in-process channels.
pub fn run_threaded(cfg: &SessionConfig, data: &[SiteDataset]) -> Result<SessionOutcome, ProtoError> {
    check_site_count(cfg, data)?;
    let (mut coord_link, site_links) = memory_network(cfg.sites);
    run_sites_with(cfg, data, &mut coord_link, site_links.into_iter().map(|l| Box::new(l) as Box<dyn SiteLink + Send>).collect())
}

/// Sites on threads exchanging files under `<base>/<session>`.
pub fn run_directory(cfg: &SessionConfig, data: &[SiteDataset], base: &Path) -> Result<SessionOutcome, ProtoError> {
    check_site_count(cfg, data)?;
    let mut coord_link = DirectoryCoordinator::new(base, &cfg.session, cfg.sites)?;
    let links = (0..cfg.sites)
        .map(|s| Box::new(DirectorySite::new(base, &cfg.session, SiteId(s))) as Box<dyn SiteLink + Send>)
        .collect();
    run_sites_with(cfg, data, &mut coord_link, links)
}

/// Sites on threads talking to a coordinator on an ephemeral loopback port.
pub fn run_tcp(cfg: &SessionConfig, data: &[SiteDataset]) -> Result<SessionOutcome, ProtoError> {
    check_site_count(cfg, data)?;
    let mut coord_link = TcpCoordinator::bind("127.0.0.1:0")?;
    let addr = coord_link.local_addr();
    let links = (0..cfg.sites)
        .map(|_| TcpSite::connect(addr, cfg.round_timeout()).map(|l| Box::new(l) as Box<dyn SiteLink + Send>))
        .collect::<Result<_, _>>()?;
    run_sites_with(cfg, data, &mut coord_link, links)
}

fn run_sites_with(
    cfg: &SessionConfig,
    data: &[SiteDataset],
    coord_link: &mut dyn CoordinatorLink,
    links: Vec<Box<dyn SiteLink + Send>>,
) -> Result<SessionOutcome, ProtoError> {
    thread::scope(|scope| {
        for (s, (d, mut link)) in data.iter().zip(links).enumerate() {
            scope.spawn(move || {
                // Failures reach the coordinator as abort notices.
                let _ = run_site(d, SiteId(s), cfg, link.as_mut());
            });
        }
        coordinator_run(cfg, coord_link)
    })
}

fn check_site_count(cfg: &SessionConfig, data: &[SiteDataset]) -> Result<(), ProtoError> {
    if data.len() == cfg.sites {
        Ok(())
    } else {
        Err(ProtoError::Config(format!("session expects {} sites, got {} datasets", cfg.sites, data.len())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dac::{testkit, Estimator};

    #[test]
    fn two_site_toy_counts() {
        let toy = testkit::constant_toy();
        let cfg = SessionConfig::new("toy", 2, Mode::DacNonparametric, BasisSpec::Linear);
        let out = run_local(&cfg, &toy.sites).unwrap();
        let dac: Vec<&EstimateReport> = out.reports.iter().filter(|r| r.method == Estimator::Dac).collect();
        assert_eq!(dac.len(), 2 * 3);
        let full = dac.iter().find(|r| r.subset == SiteSet::all(2) && r.k == SiteId(0)).unwrap();
        assert!((full.tau_hat - 2.0).abs() < 1e-12);
        assert_eq!(out.log.round_trips(SiteId(0)), 2);
        assert_eq!(out.log.broadcasts(), 1);
    }

    #[test]
    fn arrival_order_does_not_matter() {
        let inst = testkit::instance(4, 3, 40, false);
        let cfg = SessionConfig::new("order", 3, Mode::DacNonparametric, BasisSpec::Linear);
        let reference = run_local(&cfg, &inst.sites).unwrap().reports;
        let mut coord = Coordinator::new(cfg.clone()).unwrap();
        let env = |m| Envelope { session: "order".into(), message: m };
        let mut b = None;
        for s in [2, 0, 1] {
            let up = site_round1(&inst.sites[s], SiteId(s), &cfg).unwrap();
            if let Progress::Broadcast(x) = coord.accept(env(Message::Round1Upload(up))).unwrap() {
                b = Some(x);
            }
        }
        let b = b.unwrap();
        for s in [1, 2, 0] {
            let up = site_round2(&inst.sites[s], SiteId(s), &b, &cfg).unwrap();
            coord.accept(env(Message::Round2Upload(up))).unwrap();
        }
        assert_eq!(coord.assemble().unwrap(), reference);
    }

    #[test]
    fn protocol_violations() {
        let inst = testkit::instance(5, 2, 20, false);
        let cfg = SessionConfig::new("v", 2, Mode::DacNonparametric, BasisSpec::Linear);
        let mut coord = Coordinator::new(cfg.clone()).unwrap();
        let up = site_round1(&inst.sites[0], SiteId(0), &cfg).unwrap();
        let foreign = Envelope { session: "other".into(), message: Message::Round1Upload(up.clone()) };
        assert!(matches!(coord.accept(foreign), Err(ProtoError::SessionMismatch { .. })));
        let env = Envelope { session: "v".into(), message: Message::Round1Upload(up) };
        assert_eq!(coord.accept(env.clone()).unwrap(), Progress::Waiting);
        assert!(matches!(coord.accept(env), Err(ProtoError::SchemaViolation(_))));
        let br = SessionConfig::new("v", 2, Mode::DacBr, BasisSpec::Linear);
        let up = site_round1(&inst.sites[1], SiteId(1), &br).unwrap();
        let env = Envelope { session: "v".into(), message: Message::Round1Upload(up) };
        assert!(matches!(coord.accept(env), Err(ProtoError::SchemaViolation(_))));
    }

    #[test]
    fn threaded_matches_local() {
        let inst = testkit::instance(6, 3, 30, true);
        let mut cfg = SessionConfig::new("thr", 3, Mode::DacNonparametric, BasisSpec::cubic_spline(2));
        cfg.round_timeout_secs = 30.0;
        let local = run_local(&cfg, &inst.sites).unwrap();
        let threaded = run_threaded(&cfg, &inst.sites).unwrap();
        assert_eq!(local.reports, threaded.reports);
        for s in 0..3 {
            assert_eq!(threaded.log.round_trips(SiteId(s)), 2);
        }
    }
}
