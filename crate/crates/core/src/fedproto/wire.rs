//! `fedcmp/1` wire format: one JSON object per line,
//! `{"schema":"fedcmp/1","session":…,"kind":…,"body":…}`.
//!
//! Real numbers travel as shortest round-trip decimal strings so that decoding
//! reproduces every bit; non-finite values are unrepresentable.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::ProtoError;
use crate::brdac::BRAggregatedData;
use crate::dac::AggregatedData;
use crate::data::SiteId;
use crate::outcome::FittedOutcomeModel;

pub const SCHEMA_VERSION: &str = "fedcmp/1";

/// Round-one upload: sample size, covariate means, and optionally the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Round1Upload {
    pub site: SiteId,
    pub n: usize,
    /// Means of the calibrated covariates.
    #[serde(with = "crate::wire_real::vec")]
    pub gbar: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<FittedOutcomeModel>,
}

/// Every round-one upload, ordered by site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Round1Broadcast {
    pub uploads: Vec<Round1Upload>,
}

impl Round1Broadcast {
    pub fn sizes(&self) -> Vec<usize> {
        self.uploads.iter().map(|u| u.n).collect()
    }

    pub fn gbars(&self) -> Vec<Vec<f64>> {
        self.uploads.iter().map(|u| u.gbar.clone()).collect()
    }

    /// Checks that uploads cover sites `0..k` in order with equal dimensions.
    pub fn validate(&self, k: usize) -> Result<(), ProtoError> {
        if self.uploads.len() != k {
            return Err(ProtoError::SchemaViolation(format!("broadcast has {} entries, expected {k}", self.uploads.len())));
        }
        let p = self.uploads[0].gbar.len();
        for (i, u) in self.uploads.iter().enumerate() {
            if u.site != SiteId(i) {
                return Err(ProtoError::SchemaViolation(format!("broadcast entry {i} belongs to site {}", u.site)));
            }
            if u.gbar.len() != p || u.n == 0 {
                return Err(ProtoError::SchemaViolation(format!("broadcast entry for site {} is malformed", u.site)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schema", rename_all = "lowercase")]
pub enum Round2Payload {
    Dac(AggregatedData),
    Br(BRAggregatedData),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Round2Upload {
    pub site: SiteId,
    pub payload: Round2Payload,
}

/// Sent by a failing site, or by the coordinator to release waiting sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbortNotice {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site: Option<SiteId>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body", rename_all = "kebab-case")]
pub enum Message {
    Round1Upload(Round1Upload),
    Round1Broadcast(Round1Broadcast),
    Round2Upload(Round2Upload),
    Abort(AbortNotice),
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Round1Upload(_) => "round1-upload",
            Message::Round1Broadcast(_) => "round1-broadcast",
            Message::Round2Upload(_) => "round2-upload",
            Message::Abort(_) => "abort",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub session: String,
    pub message: Message,
}

#[derive(Serialize)]
struct Outgoing<'a> {
    schema: &'a str,
    session: &'a str,
    #[serde(flatten)]
    message: &'a Message,
}

/// One line of JSON, newline-terminated.
pub fn encode(envelope: &Envelope) -> Result<Vec<u8>, ProtoError> {
    let out = Outgoing { schema: SCHEMA_VERSION, session: &envelope.session, message: &envelope.message };
    let mut bytes = serde_json::to_vec(&out).map_err(|e| ProtoError::SchemaViolation(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn decode(bytes: &[u8]) -> Result<Envelope, ProtoError> {
    let text = std::str::from_utf8(bytes).map_err(|e| ProtoError::SchemaViolation(e.to_string()))?;
    let text = text.strip_suffix('\n').unwrap_or(text);
    if text.contains('\n') {
        return Err(ProtoError::SchemaViolation("more than one message in frame".into()));
    }
    let mut map: Map<String, Value> = serde_json::from_str(text).map_err(|e| ProtoError::SchemaViolation(e.to_string()))?;
    if let Some(extra) = map.keys().find(|k| !["schema", "session", "kind", "body"].contains(&k.as_str())) {
        return Err(ProtoError::SchemaViolation(format!("unknown envelope field {extra:?}")));
    }
    let take_str = |map: &mut Map<String, Value>, key: &str| match map.remove(key) {
        Some(Value::String(s)) => Ok(s),
        _ => Err(ProtoError::SchemaViolation(format!("envelope field {key:?} missing or not a string"))),
    };
    let schema = take_str(&mut map, "schema")?;
    if schema != SCHEMA_VERSION {
        return Err(ProtoError::VersionMismatch { found: schema });
    }
    let session = take_str(&mut map, "session")?;
    let message: Message =
        serde_json::from_value(Value::Object(map)).map_err(|e| ProtoError::SchemaViolation(e.to_string()))?;
    Ok(Envelope { session, message })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SiteDataset;
    use crate::outcome::BasisSpec;

    fn upload(site: usize, gbar: Vec<f64>) -> Round1Upload {
        let data = SiteDataset::from_rows(&[(1.0, vec![0.5]), (2.0, vec![1.5]), (2.5, vec![-0.25])]).unwrap();
        let model = FittedOutcomeModel::fit(&BasisSpec::Linear, &data, SiteId(site)).unwrap();
        Round1Upload { site: SiteId(site), n: 3, gbar, model: Some(model) }
    }

    #[test]
    fn round_trip_every_kind() {
        let messages = vec![
            Message::Round1Upload(upload(0, vec![0.1, 1e-300])),
            Message::Round1Broadcast(Round1Broadcast { uploads: vec![upload(0, vec![0.3]), upload(1, vec![2.0 / 3.0])] }),
            Message::Abort(AbortNotice { site: Some(SiteId(1)), reason: "infeasible".into() }),
        ];
        for m in messages {
            let env = Envelope { session: "s".into(), message: m };
            let bytes = encode(&env).unwrap();
            assert_eq!(*bytes.last().unwrap(), b'\n');
            assert_eq!(decode(&bytes).unwrap(), env);
        }
    }

    #[test]
    fn envelope_layout() {
        let env = Envelope { session: "abc".into(), message: Message::Abort(AbortNotice { site: None, reason: "x".into() }) };
        let text = String::from_utf8(encode(&env).unwrap()).unwrap();
        assert_eq!(text, "{\"schema\":\"fedcmp/1\",\"session\":\"abc\",\"kind\":\"abort\",\"body\":{\"reason\":\"x\"}}\n");
    }

    #[test]
    fn rejects_bad_input() {
        let bad_version = br#"{"schema":"fedcmp/2","session":"a","kind":"abort","body":{"reason":"x"}}"#;
        assert!(matches!(decode(bad_version), Err(ProtoError::VersionMismatch { .. })));
        let extra = br#"{"schema":"fedcmp/1","session":"a","kind":"abort","body":{"reason":"x"},"y":1}"#;
        assert!(matches!(decode(extra), Err(ProtoError::SchemaViolation(_))));
        let nonfinite = br#"{"schema":"fedcmp/1","session":"a","kind":"round1-upload","body":{"site":0,"n":3,"gbar":["NaN"]}}"#;
        assert!(matches!(decode(nonfinite), Err(ProtoError::SchemaViolation(_))));
        let unknown_body = br#"{"schema":"fedcmp/1","session":"a","kind":"round1-upload","body":{"site":0,"n":3,"gbar":[],"y":["1"]}}"#;
        assert!(matches!(decode(unknown_body), Err(ProtoError::SchemaViolation(_))));
        let env = Envelope { session: "s".into(), message: Message::Round1Upload(upload(0, vec![f64::INFINITY])) };
        assert!(matches!(encode(&env), Err(ProtoError::SchemaViolation(_))));
    }

    #[test]
    fn golden_broadcast_fixture() {
        let bytes = include_bytes!("../../fixtures/golden_broadcast.ndjson");
        let env = decode(bytes).unwrap();
        assert_eq!(env.session, "golden");
        let Message::Round1Broadcast(b) = env.message else { panic!("wrong kind") };
        b.validate(2).unwrap();
        assert_eq!(b.sizes(), vec![2, 3]);
        assert_eq!(b.gbars(), vec![vec![0.5, 0.1], vec![1.0 / 3.0, -2.5]]);
        assert!(b.uploads.iter().all(|u| u.model.is_none()));
        // The frozen bytes are exactly what the encoder produces today.
        assert_eq!(encode(&Envelope { session: "golden".into(), message: Message::Round1Broadcast(b) }).unwrap(), bytes);
    }
}
