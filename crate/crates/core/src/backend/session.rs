//! Operator handshake state machine.
//!
//! ```text
//! FIRST_RUN --prime--> MONITOR --publish--> AWAIT_ACK --ack--> AWAIT_RESOLUTION
//!                                                 \--ack (no pairs)--> AWAIT_REPORT
//! AWAIT_RESOLUTION --next--> AWAIT_RESOLUTION | AWAIT_REPORT (past the last pair)
//! AWAIT_RESOLUTION --solved--> AWAIT_RATING --rating--> MONITOR
//! AWAIT_REPORT --report--> MONITOR
//! ```
//!
//! Any other (phase, event) pair is a protocol error and leaves the session untouched.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knowledge::Assessment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    FirstRun,
    Monitor,
    AwaitAck,
    AwaitResolution,
    AwaitRating,
    AwaitReport,
}

impl Phase {
    pub const ALL: [Phase; 6] = [
        Phase::FirstRun,
        Phase::Monitor,
        Phase::AwaitAck,
        Phase::AwaitResolution,
        Phase::AwaitRating,
        Phase::AwaitReport,
    ];
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).ok();
        f.write_str(s.as_ref().and_then(|v| v.as_str()).unwrap_or("?"))
    }
}

/// Events from the operator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UserEvent {
    Ack,
    Next,
    Solved,
    /// Star rating; `None` when the operator skips it.
    Rating {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stars: Option<u8>,
    },
    Report {
        text: String,
    },
}

impl UserEvent {
    pub fn name(&self) -> &'static str {
        match self {
            UserEvent::Ack => "ack",
            UserEvent::Next => "next",
            UserEvent::Solved => "solved",
            UserEvent::Rating { .. } => "rating",
            UserEvent::Report { .. } => "report",
        }
    }
}

/// Inputs driving the machine: operator events plus the backend's own.
#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    Prime,
    Publish(Box<Assessment>),
    User(UserEvent),
}

impl Input {
    pub fn name(&self) -> &'static str {
        match self {
            Input::Prime => "prime",
            Input::Publish(_) => "publish",
            Input::User(e) => e.name(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("`{event}` is not accepted in phase {phase}")]
    IllegalEvent { phase: Phase, event: String },
    #[error("rating must be 1..=5 stars, got {0}")]
    InvalidStars(u8),
    #[error("only fault assessments are published for operator handling")]
    NotAFault,
}

/// How a fault episode ended; drives the weight update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    /// Solved: w_K = 1 and w_U from the stars, if given.
    Resolved { fm_id: String, stars: Option<u8> },
    /// No pair helped: w_K = 0, no rating.
    Reported { fm_id: String, text: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub from: Phase,
    pub to: Phase,
    pub outcome: Option<Outcome>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Session {
    phase: Option<Phase>,
    assessment: Option<Assessment>,
}

impl Session {
    pub fn new() -> Self {
        Self::default()
    }

    /// A session that skips priming, for restarts with persisted weights.
    pub fn resumed() -> Self {
        Self {
            phase: Some(Phase::Monitor),
            assessment: None,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase.unwrap_or(Phase::FirstRun)
    }

    /// The fault being handled, with `pair_index` at the current pair.
    pub fn assessment(&self) -> Option<&Assessment> {
        self.assessment.as_ref()
    }

    pub fn handle(&mut self, input: Input) -> Result<Transition, ProtocolError> {
        let from = self.phase();
        let illegal = || ProtocolError::IllegalEvent {
            phase: from,
            event: input.name().to_string(),
        };
        let mut outcome = None;
        let to = match (from, &input) {
            (Phase::FirstRun, Input::Prime) => Phase::Monitor,
            (Phase::Monitor, Input::Publish(a)) => {
                if !a.is_fault() {
                    return Err(ProtocolError::NotAFault);
                }
                let mut a = (**a).clone();
                a.pair_index = 0;
                self.assessment = Some(a);
                Phase::AwaitAck
            }
            (Phase::AwaitAck, Input::User(UserEvent::Ack)) => {
                if self.pairs_len() == 0 {
                    Phase::AwaitReport
                } else {
                    Phase::AwaitResolution
                }
            }
            (Phase::AwaitResolution, Input::User(UserEvent::Next)) => {
                let a = self.assessment.as_mut().expect("assessment while awaiting resolution");
                a.pair_index += 1;
                if a.pair_index >= a.pairs.len() {
                    Phase::AwaitReport
                } else {
                    Phase::AwaitResolution
                }
            }
            (Phase::AwaitResolution, Input::User(UserEvent::Solved)) => Phase::AwaitRating,
            (Phase::AwaitRating, Input::User(UserEvent::Rating { stars })) => {
                if let Some(s) = stars {
                    if !(1..=5).contains(s) {
                        return Err(ProtocolError::InvalidStars(*s));
                    }
                }
                outcome = Some(Outcome::Resolved {
                    fm_id: self.fm_id(),
                    stars: *stars,
                });
                Phase::Monitor
            }
            (Phase::AwaitReport, Input::User(UserEvent::Report { text })) => {
                outcome = Some(Outcome::Reported {
                    fm_id: self.fm_id(),
                    text: text.clone(),
                });
                Phase::Monitor
            }
            _ => return Err(illegal()),
        };
        if to == Phase::Monitor && from != Phase::FirstRun {
            self.assessment = None;
        }
        self.phase = Some(to);
        Ok(Transition { from, to, outcome })
    }

    fn pairs_len(&self) -> usize {
        self.assessment.as_ref().map_or(0, |a| a.pairs.len())
    }

    fn fm_id(&self) -> String {
        self.assessment.as_ref().map(|a| a.fm_id.clone()).unwrap_or_default()
    }

    /// Drives the session into `phase` through legal transitions, for testing and tooling.
    pub fn reach(phase: Phase, assessment: &Assessment) -> Session {
        let mut s = Session::new();
        let steps: &[Input] = match phase {
            Phase::FirstRun => &[],
            Phase::Monitor => &[Input::Prime],
            Phase::AwaitAck => &[Input::Prime, Input::Publish(Box::new(assessment.clone()))],
            Phase::AwaitResolution => &[
                Input::Prime,
                Input::Publish(Box::new(assessment.clone())),
                Input::User(UserEvent::Ack),
            ],
            Phase::AwaitRating => &[
                Input::Prime,
                Input::Publish(Box::new(assessment.clone())),
                Input::User(UserEvent::Ack),
                Input::User(UserEvent::Solved),
            ],
            Phase::AwaitReport => &[
                Input::Prime,
                Input::Publish(Box::new(assessment.clone())),
                Input::User(UserEvent::Ack),
                Input::User(UserEvent::Next),
            ],
        };
        for step in steps {
            s.handle(step.clone()).expect("scripted path is legal");
        }
        s
    }
}

/// Every input kind, for exhaustive checks.
pub fn all_inputs(assessment: &Assessment) -> Vec<Input> {
    vec![
        Input::Prime,
        Input::Publish(Box::new(assessment.clone())),
        Input::User(UserEvent::Ack),
        Input::User(UserEvent::Next),
        Input::User(UserEvent::Solved),
        Input::User(UserEvent::Rating { stars: Some(4) }),
        Input::User(UserEvent::Rating { stars: None }),
        Input::User(UserEvent::Report { text: "n/a".into() }),
    ]
}

/// The legal (phase, input) table.
pub fn is_legal(phase: Phase, input: &Input) -> bool {
    matches!(
        (phase, input),
        (Phase::FirstRun, Input::Prime)
            | (Phase::Monitor, Input::Publish(_))
            | (Phase::AwaitAck, Input::User(UserEvent::Ack))
            | (Phase::AwaitResolution, Input::User(UserEvent::Next))
            | (Phase::AwaitResolution, Input::User(UserEvent::Solved))
            | (Phase::AwaitRating, Input::User(UserEvent::Rating { .. }))
            | (Phase::AwaitReport, Input::User(UserEvent::Report { .. }))
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fmea::Pair;
    use crate::knowledge::AssessmentKind;

    pub(crate) fn fault(pairs: usize) -> Assessment {
        Assessment {
            seq: 1,
            kind: AssessmentKind::Fault,
            fm_id: "LQ".into(),
            label: "low_quality_status".into(),
            effect: String::new(),
            pairs: (0..pairs)
                .map(|i| Pair {
                    component_fm: format!("c{i}"),
                    cause: format!("cause {i}"),
                    recommendation: format!("rec {i}"),
                })
                .collect(),
            pair_index: 0,
            w_r: Some(0.71),
            frame: vec!["LQ".into()],
            evidence: vec![0.71, 0.29],
            uncertainty: Some(0.29),
            detected_at: 0,
            published_at: None,
        }
    }

    #[test]
    fn happy_path() {
        let mut s = Session::reach(Phase::AwaitResolution, &fault(2));
        assert_eq!(s.handle(Input::User(UserEvent::Solved)).unwrap().to, Phase::AwaitRating);
        let t = s.handle(Input::User(UserEvent::Rating { stars: Some(4) })).unwrap();
        assert_eq!(t.to, Phase::Monitor);
        assert_eq!(
            t.outcome,
            Some(Outcome::Resolved {
                fm_id: "LQ".into(),
                stars: Some(4)
            })
        );
        assert!(s.assessment().is_none());
    }

    #[test]
    fn next_past_last_pair_requests_report() {
        let mut s = Session::reach(Phase::AwaitResolution, &fault(2));
        assert_eq!(s.handle(Input::User(UserEvent::Next)).unwrap().to, Phase::AwaitResolution);
        assert_eq!(s.assessment().unwrap().pair_index, 1);
        assert_eq!(s.handle(Input::User(UserEvent::Next)).unwrap().to, Phase::AwaitReport);
        let t = s.handle(Input::User(UserEvent::Report { text: "flap".into() })).unwrap();
        assert!(matches!(t.outcome, Some(Outcome::Reported { .. })));
    }

    #[test]
    fn ack_without_pairs_goes_to_report() {
        let mut s = Session::reach(Phase::AwaitAck, &fault(0));
        assert_eq!(s.handle(Input::User(UserEvent::Ack)).unwrap().to, Phase::AwaitReport);
    }

    #[test]
    fn bad_stars_do_not_mutate() {
        let mut s = Session::reach(Phase::AwaitRating, &fault(1));
        let before = s.clone();
        assert_eq!(
            s.handle(Input::User(UserEvent::Rating { stars: Some(9) })),
            Err(ProtocolError::InvalidStars(9))
        );
        assert_eq!(s, before);
    }

    #[test]
    fn monitor_rejects_rating() {
        let mut s = Session::reach(Phase::Monitor, &fault(1));
        assert!(matches!(
            s.handle(Input::User(UserEvent::Rating { stars: Some(4) })),
            Err(ProtocolError::IllegalEvent { phase: Phase::Monitor, .. })
        ));
    }

    #[test]
    fn exhaustive_table() {
        let a = fault(1);
        for phase in Phase::ALL {
            for input in all_inputs(&a) {
                let mut s = Session::reach(phase, &a);
                let before = s.clone();
                let r = s.handle(input.clone());
                assert_eq!(r.is_ok(), is_legal(phase, &input), "{phase} {}", input.name());
                if r.is_err() {
                    assert_eq!(s, before);
                }
            }
        }
    }

    #[test]
    fn wire_format() {
        let e: UserEvent = serde_json::from_str(r#"{"kind":"rating","stars":4}"#).unwrap();
        assert_eq!(e, UserEvent::Rating { stars: Some(4) });
        let e: UserEvent = serde_json::from_str(r#"{"kind":"rating"}"#).unwrap();
        assert_eq!(e, UserEvent::Rating { stars: None });
        assert_eq!(serde_json::to_string(&UserEvent::Ack).unwrap(), r#"{"kind":"ack"}"#);
        assert_eq!(Phase::AwaitAck.to_string(), "AWAIT_ACK");
    }
}
