//! Site-side protocol steps. Each site sees only its own rows and the
//! round-one broadcast.

use crate::brdac::{br_aggregates, br_fit_site, BRSiteInput};
use crate::calib::calibrate_to_targets;
use crate::dac::site_aggregates;
use crate::data::{SiteDataset, SiteId};
use crate::numlin::{Matrix, NewtonConfig};
use crate::outcome::{expand_basis, BasisSpec, FittedOutcomeModel};

use super::transport::SiteLink;
use super::{
    decode, encode, AbortNotice, Envelope, Message, Mode, ProtoError, Round, Round1Broadcast, Round1Upload,
    Round2Payload, Round2Upload, SessionConfig,
};

fn failure(site: SiteId, e: impl std::fmt::Display) -> ProtoError {
    ProtoError::SiteFailure { site, reason: e.to_string() }
}

/// `[1, X_S]` for the bias-reduced path.
fn br_design(data: &SiteDataset, columns: &[usize]) -> Result<Matrix, ProtoError> {
    expand_basis(&data.x().select_columns(columns), &BasisSpec::Linear).map_err(|e| ProtoError::Estimation(e.to_string()))
}

/// Round one: local covariate means plus, in nonparametric mode, the fitted
/// outcome model.
pub fn site_round1(data: &SiteDataset, site: SiteId, cfg: &SessionConfig) -> Result<Round1Upload, ProtoError> {
    cfg.validate()?;
    let data = data.canonical();
    let columns = cfg.columns(data.covariate_count())?;
    let gbar = data.covariate_means(&columns);
    let model = match cfg.mode {
        Mode::DacNonparametric => Some(FittedOutcomeModel::fit(&cfg.basis, &data, site).map_err(|e| failure(site, e))?),
        Mode::DacBr => None,
    };
    Ok(Round1Upload { site, n: data.n(), gbar, model })
}

/// Round two: calibration toward every other site, then the aggregated data.
pub fn site_round2(
    data: &SiteDataset,
    site: SiteId,
    broadcast: &Round1Broadcast,
    cfg: &SessionConfig,
) -> Result<Round2Upload, ProtoError> {
    cfg.validate()?;
    broadcast.validate(cfg.sites)?;
    let data = data.canonical();
    let columns = cfg.columns(data.covariate_count())?;
    let sizes = broadcast.sizes();
    let gbars = broadcast.gbars();
    if site.index() >= cfg.sites || sizes[site.index()] != data.n() {
        return Err(ProtoError::SchemaViolation(format!("broadcast does not match the local data of site {site}")));
    }
    if gbars[0].len() != columns.len() {
        return Err(ProtoError::SchemaViolation("broadcast means have the wrong dimension".into()));
    }
    let payload = match cfg.mode {
        Mode::DacNonparametric => {
            let models: Vec<FittedOutcomeModel> = broadcast
                .uploads
                .iter()
                .map(|u| u.model.clone().ok_or_else(|| ProtoError::SchemaViolation(format!("site {} sent no model", u.site))))
                .collect::<Result<_, _>>()?;
            let features = data.x().select_columns(&columns);
            let weights = calibrate_to_targets(&features, site, &gbars, &NewtonConfig::default()).map_err(|e| failure(site, e))?;
            Round2Payload::Dac(site_aggregates(site, &data, &models, &weights, &sizes).map_err(|e| failure(site, e))?)
        }
        Mode::DacBr => {
            let design = br_design(&data, &columns)?;
            let targets: Vec<Vec<f64>> =
                gbars.iter().map(|g| std::iter::once(1.0).chain(g.iter().copied()).collect()).collect();
            let input = BRSiteInput { site, design: &design, y: data.y(), targets: &targets, sizes: &sizes };
            let fit = br_fit_site(&input, &NewtonConfig::default()).map_err(|e| failure(site, e))?;
            Round2Payload::Br(br_aggregates(&design, data.y(), &fit).map_err(|e| failure(site, e))?)
        }
    };
    Ok(Round2Upload { site, payload })
}

fn upload(link: &mut dyn SiteLink, cfg: &SessionConfig, round: Round, message: Message) -> Result<(), ProtoError> {
    link.upload(round, &encode(&Envelope { session: cfg.session.clone(), message })?)
}

/// Runs both rounds for one site over `link`. A local failure is reported to
/// the coordinator as an abort notice before being returned.
pub fn run_site(data: &SiteDataset, site: SiteId, cfg: &SessionConfig, link: &mut dyn SiteLink) -> Result<(), ProtoError> {
    let abort = |link: &mut dyn SiteLink, round: Round, e: &ProtoError| {
        let notice = Message::Abort(AbortNotice { site: Some(site), reason: e.to_string() });
        let _ = upload(link, cfg, round, notice);
    };

    let r1 = match site_round1(data, site, cfg) {
        Ok(r1) => r1,
        Err(e) => {
            abort(link, Round::One, &e);
            return Err(e);
        }
    };
    upload(link, cfg, Round::One, Message::Round1Upload(r1))?;

    let env = decode(&link.await_broadcast(cfg.round_timeout())?)?;
    if env.session != cfg.session {
        return Err(ProtoError::SessionMismatch { expected: cfg.session.clone(), found: env.session });
    }
    let broadcast = match env.message {
        Message::Round1Broadcast(b) => b,
        Message::Abort(notice) => return Err(ProtoError::SessionAborted(notice.reason)),
        other => return Err(ProtoError::SchemaViolation(format!("expected a broadcast, got {}", other.kind()))),
    };
    match site_round2(data, site, &broadcast, cfg) {
        Ok(r2) => upload(link, cfg, Round::Two, Message::Round2Upload(r2)),
        Err(e) => {
            abort(link, Round::Two, &e);
            Err(e)
        }
    }
}
