//! Executable knowledge model: first-match dispatch over mutually exclusive
//! system rules, then component rules of the fired failure mode, then the
//! weighted evidence vector.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evidence::{approximation_factor, build_evidence, spread_masses, EvidenceError, Frame, MassVector};
use crate::fmea::{causes_and_recommendations, FmeaError, Pair, Workbook, EXIT_LABEL};
use crate::ruledsl::{check_rule_set, eval_bool, DslError, Expr, Overlap, Snapshot, ThresholdSet};

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("rule `{label}`: {source}")]
    Rule {
        label: String,
        #[source]
        source: DslError,
    },
    #[error("rules `{first}` and `{second}` are not mutually exclusive")]
    NotExclusive {
        first: String,
        second: String,
        witness: Overlap,
    },
    #[error("exit label `{0}` collides with a rule label")]
    ExitInFrame(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
    #[error(transparent)]
    Fmea(#[from] FmeaError),
}

/// Ordered labelled rules with an "otherwise" exit label.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeModel {
    frame: Frame,
    rules: Vec<Expr>,
    exit_label: String,
    thresholds: ThresholdSet,
}

impl KnowledgeModel {
    /// Builds a model, rejecting rule sets that can fire together.
    pub fn new(
        rules: Vec<(String, Expr)>,
        thresholds: ThresholdSet,
        exit_label: impl Into<String>,
    ) -> Result<Self, KnowledgeError> {
        let exit_label = exit_label.into();
        let frame = Frame::new(rules.iter().map(|(l, _)| l.clone()))?;
        if frame.contains(&exit_label) {
            return Err(KnowledgeError::ExitInFrame(exit_label));
        }
        let exprs: Vec<Expr> = rules.into_iter().map(|(_, e)| e).collect();
        let report = check_rule_set(&exprs, &thresholds).map_err(|source| KnowledgeError::Rule {
            label: "*".into(),
            source,
        })?;
        if let Some(w) = report.report.witness {
            return Err(KnowledgeError::NotExclusive {
                first: frame.labels()[w.first].clone(),
                second: frame.labels()[w.second].clone(),
                witness: w,
            });
        }
        Ok(Self {
            frame,
            rules: exprs,
            exit_label,
            thresholds,
        })
    }

    /// The system-level model of a workbook.
    pub fn from_workbook(workbook: &Workbook) -> Result<Self, KnowledgeError> {
        Self::new(
            workbook
                .system_fms
                .iter()
                .map(|t| (t.fm_id.clone(), t.rule.expr.clone()))
                .collect(),
            workbook.settings.system.clone(),
            EXIT_LABEL,
        )
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn exit_label(&self) -> &str {
        &self.exit_label
    }

    pub fn thresholds(&self) -> &ThresholdSet {
        &self.thresholds
    }

    pub fn rules(&self) -> impl Iterator<Item = (&str, &Expr)> {
        self.frame.labels().iter().map(String::as_str).zip(self.rules.iter())
    }

    /// Label of the first rule that holds, or the exit label.
    pub fn dispatch(&self, snapshot: &Snapshot) -> Result<&str, KnowledgeError> {
        for (label, rule) in self.rules() {
            let fired = eval_bool(rule, snapshot, &self.thresholds).map_err(|source| KnowledgeError::Rule {
                label: label.to_string(),
                source,
            })?;
            if fired {
                return Ok(label);
            }
        }
        Ok(&self.exit_label)
    }

    /// Sensitivity-to-zero label values: k for the active label, (1-k)/(n-1) elsewhere.
    pub fn transform_labels(&self, active_label: &str, exponent: u32) -> Result<Vec<f64>, KnowledgeError> {
        let k = approximation_factor(exponent)?;
        Ok(spread_masses(&self.frame, active_label, k)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssessmentKind {
    /// A failure mode with cause/recommendation rows fired.
    Fault,
    /// A production-status label (no component rows) fired.
    Status,
    /// No rule fired.
    NoFault,
}

/// The message sent to the operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    /// Publication sequence number, assigned by the backend.
    #[serde(default)]
    pub seq: u64,
    pub kind: AssessmentKind,
    pub fm_id: String,
    pub label: String,
    pub effect: String,
    pub pairs: Vec<Pair>,
    #[serde(default)]
    pub pair_index: usize,
    pub w_r: Option<f64>,
    pub frame: Vec<String>,
    /// Weighted masses per frame label followed by the uncertainty U.
    pub evidence: Vec<f64>,
    pub uncertainty: Option<f64>,
    pub detected_at: u64,
    pub published_at: Option<u64>,
}

impl Assessment {
    pub fn is_fault(&self) -> bool {
        self.kind == AssessmentKind::Fault
    }

    /// Rebuilds the validated mass vector, if the assessment carries evidence.
    pub fn mass_vector(&self) -> Option<Result<MassVector, EvidenceError>> {
        let (u, masses) = self.evidence.split_last()?;
        Some(Frame::new(self.frame.iter().cloned()).and_then(|f| MassVector::new(f, masses.to_vec(), *u)))
    }
}

/// Dispatches a snapshot and assembles the assessment.
///
/// `weights` holds the current w_R of each frame label, in frame order.
pub fn assess(
    model: &KnowledgeModel,
    workbook: &Workbook,
    weights: &[f64],
    snapshot: &Snapshot,
    exponent: u32,
) -> Result<Assessment, KnowledgeError> {
    if weights.len() != model.frame.len() {
        return Err(KnowledgeError::Config(format!(
            "{} weights for {} labels",
            weights.len(),
            model.frame.len()
        )));
    }
    let active = model.dispatch(snapshot)?.to_string();
    let frame: Vec<String> = model.frame.labels().to_vec();
    if active == model.exit_label {
        return Ok(Assessment {
            seq: 0,
            kind: AssessmentKind::NoFault,
            fm_id: active.clone(),
            label: active,
            effect: String::new(),
            pairs: Vec::new(),
            pair_index: 0,
            w_r: None,
            frame,
            evidence: Vec::new(),
            uncertainty: None,
            detected_at: snapshot.timestamp_ms,
            published_at: None,
        });
    }

    let tuple = workbook
        .system_fm(&active)
        .ok_or_else(|| KnowledgeError::Config(format!("rule `{active}` has no workbook entry")))?;
    let mut fired = Vec::new();
    let mut has_components = false;
    for c in workbook.component_fms_of(&active) {
        has_components = true;
        let on = eval_bool(&c.tuple.rule.expr, snapshot, &workbook.settings.component).map_err(|source| {
            KnowledgeError::Rule {
                label: c.tuple.fm_id.clone(),
                source,
            }
        })?;
        if on {
            fired.push(c.tuple.fm_id.as_str());
        }
    }
    let pairs = causes_and_recommendations(workbook, &active, &fired)?;
    let evidence = build_evidence(&model.frame, &active, weights, exponent)?;
    let idx = model.frame.index_of(&active)?;
    Ok(Assessment {
        seq: 0,
        kind: if has_components {
            AssessmentKind::Fault
        } else {
            AssessmentKind::Status
        },
        fm_id: active,
        label: tuple.label.clone(),
        effect: tuple.effects.join("; "),
        pairs,
        pair_index: 0,
        w_r: Some(weights[idx]),
        frame,
        uncertainty: Some(evidence.uncertainty()),
        evidence: evidence.to_array(),
        detected_at: snapshot.timestamp_ms,
        published_at: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ruledsl::{parse_rule, Value};

    fn model() -> KnowledgeModel {
        let mut t = ThresholdSet::new();
        t.insert("LOW", 1.7, None).unwrap();
        t.insert("HIGH", 5.0, None).unwrap();
        KnowledgeModel::new(
            vec![
                ("A".into(), parse_rule("rate < LOW").unwrap()),
                ("B".into(), parse_rule("rate >= LOW and rate <= HIGH").unwrap()),
            ],
            t,
            "none",
        )
        .unwrap()
    }

    fn snap(rate: f64) -> Snapshot {
        Snapshot::from_pairs([("rate", Value::Real(rate))]).unwrap()
    }

    #[test]
    fn first_match_and_exit() {
        let m = model();
        assert_eq!(m.dispatch(&snap(1.0)).unwrap(), "A");
        assert_eq!(m.dispatch(&snap(3.0)).unwrap(), "B");
        assert_eq!(m.dispatch(&snap(9.0)).unwrap(), "none");
    }

    #[test]
    fn overlapping_rules_are_rejected() {
        let r = KnowledgeModel::new(
            vec![
                ("A".into(), parse_rule("x or y").unwrap()),
                ("B".into(), parse_rule("x and y").unwrap()),
            ],
            ThresholdSet::new(),
            "none",
        );
        match r {
            Err(KnowledgeError::NotExclusive { witness, .. }) => {
                assert!(witness.assignment["x"] && witness.assignment["y"]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn exit_label_must_be_outside_frame() {
        let r = KnowledgeModel::new(vec![("A".into(), parse_rule("x").unwrap())], ThresholdSet::new(), "A");
        assert!(matches!(r, Err(KnowledgeError::ExitInFrame(_))));
    }

    #[test]
    fn transform() {
        let m = model();
        let v = m.transform_labels("A", 1).unwrap();
        assert!((v[0] - 0.9).abs() < 1e-15 && (v[1] - 0.1).abs() < 1e-12);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rule_errors_carry_the_label() {
        let m = model();
        match m.dispatch(&Snapshot::default()) {
            Err(KnowledgeError::Rule { label, .. }) => assert_eq!(label, "A"),
            other => panic!("{other:?}"),
        }
    }
}
