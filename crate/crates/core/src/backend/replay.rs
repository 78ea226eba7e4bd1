//! Re-deriving the weight table from an event log.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use super::store::{EventKind, EventRecord};
use super::BackendError;
use crate::weights::{user_rating_weight, WeightTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateReason {
    /// Weights primed from the panel on first run.
    Prior,
    /// Weights after a rating or report.
    Resolution,
    /// Periodic checkpoint.
    Snapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightUpdate {
    pub reason: UpdateReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fm_id: Option<String>,
    pub weights: WeightTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingPayload {
    pub fm_id: String,
    #[serde(default)]
    pub stars: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportPayload {
    pub fm_id: String,
    pub text: String,
}

/// Deterministic serialization used for byte comparisons.
pub fn canonical_json(weights: &WeightTable) -> String {
    serde_json::to_string(weights).expect("weight table serializes")
}

pub fn update_payload(reason: UpdateReason, fm_id: Option<&str>, weights: &WeightTable) -> Json {
    json!(WeightUpdate {
        reason,
        fm_id: fm_id.map(str::to_string),
        weights: weights.clone(),
    })
}

/// Applies one operator outcome to `weights`; shared by the engine and replay.
pub fn apply_outcome(weights: &mut WeightTable, record: &EventRecord) -> Result<bool, BackendError> {
    match record.kind {
        EventKind::Rating => {
            let p: RatingPayload = serde_json::from_value(record.payload.clone())?;
            let w_u = p.stars.map(user_rating_weight).transpose()?;
            weights.resolve(&p.fm_id, 1.0, w_u, record.ts_ms)?;
            Ok(true)
        }
        EventKind::Report => {
            let p: ReportPayload = serde_json::from_value(record.payload.clone())?;
            weights.resolve(&p.fm_id, 0.0, None, record.ts_ms)?;
            Ok(true)
        }
        _ => Ok(false),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub weights: WeightTable,
    /// Number of rating and report events folded in.
    pub resolutions: usize,
    /// Persisted weight updates that were cross-checked.
    pub checkpoints: usize,
}

/// Full replay from the prior, verifying every persisted weight update on the way.
pub fn replay(records: &[EventRecord]) -> Result<ReplayOutcome, BackendError> {
    let mut weights: Option<WeightTable> = None;
    let mut resolutions = 0;
    let mut checkpoints = 0;
    for rec in records {
        if rec.kind == EventKind::WeightUpdate {
            let u: WeightUpdate = serde_json::from_value(rec.payload.clone())?;
            match (&weights, u.reason) {
                (None, UpdateReason::Prior) => weights = Some(u.weights),
                (None, _) => return Err(BackendError::Replay { seq: rec.seq, message: "weight update before prior".into() }),
                (Some(_), UpdateReason::Prior) => {
                    return Err(BackendError::Replay { seq: rec.seq, message: "second prior".into() })
                }
                (Some(w), _) => {
                    if canonical_json(w) != canonical_json(&u.weights) {
                        return Err(BackendError::Replay {
                            seq: rec.seq,
                            message: "persisted weights differ from replay".into(),
                        });
                    }
                    checkpoints += 1;
                }
            }
            continue;
        }
        if matches!(rec.kind, EventKind::Rating | EventKind::Report) {
            let w = weights.as_mut().ok_or_else(|| BackendError::Replay {
                seq: rec.seq,
                message: "outcome before prior".into(),
            })?;
            apply_outcome(w, rec)?;
            resolutions += 1;
        }
    }
    let weights = weights.ok_or(BackendError::Replay {
        seq: 0,
        message: "log has no prior".into(),
    })?;
    Ok(ReplayOutcome {
        weights,
        resolutions,
        checkpoints,
    })
}

/// Fast restore: the latest checkpoint plus the outcomes after it.
pub fn restore(records: &[EventRecord]) -> Result<Option<WeightTable>, BackendError> {
    let mut start = None;
    for (i, rec) in records.iter().enumerate().rev() {
        if rec.kind == EventKind::WeightUpdate {
            start = Some(i);
            break;
        }
    }
    let Some(i) = start else { return Ok(None) };
    let u: WeightUpdate = serde_json::from_value(records[i].payload.clone())?;
    let mut weights = u.weights;
    for rec in &records[i + 1..] {
        apply_outcome(&mut weights, rec)?;
    }
    Ok(Some(weights))
}
