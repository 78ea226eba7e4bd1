//! Confidence weights.
//!
//! A rule's weight w_R is the mean of the criteria present for it: the
//! expert-panel weight w_P, the KPI compliance w_K and the user rating w_U.
//! Before any feedback arrives every rule carries the prior w_R = w_P. The
//! panel weight is the mean of member weights, each the mean of the
//! `w_EG`, `w_EM` and `w_KA` criteria formulas evaluated on a member profile.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fmea::{Criterion, MemberProfile, Workbook, MEMBER_CRITERIA};
use crate::ruledsl::{eval_real, DslError, Snapshot, ThresholdSet, Value};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("criterion `{criterion}` is undefined for member `{member}` (no clause matched)")]
    CriterionUndefined { member: String, criterion: String },
    #[error("criterion `{0}` is not defined")]
    MissingCriterion(String),
    #[error("unknown rule `{0}`")]
    UnknownRule(String),
    #[error(transparent)]
    Dsl(#[from] DslError),
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn check_unit(name: &str, x: f64) -> Result<f64, WeightError> {
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else {
        Err(WeightError::InvalidParameter(format!("{name} = {x} is outside [0, 1]")))
    }
}

/// Rounds half away from zero to `decimals` places.
pub fn round_to(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    (x * scale).round() / scale
}

/// Per-criterion weights of one panel member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberWeight {
    pub name: String,
    pub w_eg: f64,
    pub w_em: f64,
    pub w_ka: f64,
    pub w_m: f64,
}

fn profile_snapshot(p: &MemberProfile) -> Result<Snapshot, DslError> {
    Snapshot::from_pairs([
        ("e_g", Value::Real(p.e_g)),
        ("e_m", Value::Real(p.e_m)),
        ("waste", Value::Real(p.waste)),
        ("production", Value::Real(p.production)),
    ])
}

/// Evaluates the member criteria and averages them into w_M.
pub fn member_weight(
    profile: &MemberProfile,
    formulas: &[Criterion],
    team: &ThresholdSet,
) -> Result<MemberWeight, WeightError> {
    let snap = profile_snapshot(profile)?;
    let mut vals = [0.0; 3];
    for (slot, name) in vals.iter_mut().zip(MEMBER_CRITERIA) {
        let c = formulas
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| WeightError::MissingCriterion(name.to_string()))?;
        let v = eval_real(&c.formula, &snap, team)?;
        if v == -1.0 {
            return Err(WeightError::CriterionUndefined {
                member: profile.name.clone(),
                criterion: name.to_string(),
            });
        }
        *slot = check_unit(name, v)?;
    }
    Ok(MemberWeight {
        name: profile.name.clone(),
        w_eg: vals[0],
        w_em: vals[1],
        w_ka: vals[2],
        w_m: mean(&vals),
    })
}

/// Mean of member weights.
pub fn panel_weight(members: &[f64]) -> Result<f64, WeightError> {
    if members.is_empty() {
        return Err(WeightError::InvalidParameter("empty expert panel".into()));
    }
    for &m in members {
        check_unit("w_M", m)?;
    }
    Ok(mean(members))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub members: Vec<MemberWeight>,
    pub w_p: f64,
}

/// Panel weight of a workbook's profiles. Member weights are rounded first
/// when the workbook sets `MEMBER_WEIGHT_DECIMALS`.
pub fn workbook_panel(workbook: &Workbook) -> Result<Panel, WeightError> {
    let decimals = workbook.settings.engine.member_weight_decimals;
    let mut members = Vec::with_capacity(workbook.profiles.len());
    for p in &workbook.profiles {
        let mut m = member_weight(p, &workbook.weight_update, &workbook.settings.team)?;
        if let Some(d) = decimals {
            m.w_m = round_to(m.w_m, d);
        }
        members.push(m);
    }
    let w_p = panel_weight(&members.iter().map(|m| m.w_m).collect::<Vec<_>>())?;
    Ok(Panel { members, w_p })
}

/// One KPI term: current value K_C, target K_T and its weight w_KC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KpiEntry {
    pub current: f64,
    pub target: f64,
    pub weight: f64,
}

/// w_K = (1/N) Σ K_C·w_KC / K_T, clamped to [0, 1].
pub fn kpi_compliance(entries: &[KpiEntry]) -> Result<f64, WeightError> {
    if entries.is_empty() {
        return Err(WeightError::InvalidParameter("no KPI entries".into()));
    }
    let mut sum = 0.0;
    for e in entries {
        if !(e.target > 0.0) || !e.target.is_finite() {
            return Err(WeightError::InvalidParameter(format!("KPI target {} must be positive", e.target)));
        }
        if !e.current.is_finite() || e.current < 0.0 {
            return Err(WeightError::InvalidParameter(format!("KPI value {} must be non-negative", e.current)));
        }
        check_unit("w_KC", e.weight)?;
        sum += e.current * e.weight / e.target;
    }
    Ok((sum / entries.len() as f64).clamp(0.0, 1.0))
}

/// w_U = stars / 5.
pub fn user_rating_weight(stars: u8) -> Result<f64, WeightError> {
    if (1..=5).contains(&stars) {
        Ok(stars as f64 / 5.0)
    } else {
        Err(WeightError::InvalidParameter(format!("{stars} stars is outside 1..=5")))
    }
}

/// Criteria contributing to a rule weight; absent ones are skipped.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Criteria {
    pub w_p: Option<f64>,
    pub w_k: Option<f64>,
    pub w_u: Option<f64>,
}

impl Criteria {
    pub fn prior(w_p: f64) -> Self {
        Self {
            w_p: Some(w_p),
            ..Self::default()
        }
    }

    fn present(&self) -> Vec<(&'static str, f64)> {
        [("w_P", self.w_p), ("w_K", self.w_k), ("w_U", self.w_u)]
            .into_iter()
            .filter_map(|(n, v)| v.map(|v| (n, v)))
            .collect()
    }
}

/// Mean of the present criteria.
pub fn rule_weight(criteria: &Criteria) -> Result<f64, WeightError> {
    let present = criteria.present();
    if present.is_empty() {
        return Err(WeightError::InvalidParameter("no criteria present".into()));
    }
    let mut vals = Vec::with_capacity(present.len());
    for (name, v) in present {
        vals.push(check_unit(name, v)?);
    }
    Ok(mean(&vals))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub ts_ms: u64,
    pub w_r: f64,
}

/// Current and accumulated weight of one rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleWeight {
    pub rule_id: String,
    pub w_r: f64,
    pub criteria: Criteria,
    pub history: Vec<HistoryEntry>,
    pub w_ra: f64,
}

impl RuleWeight {
    /// Prior weight w_R = w_P with no history yet.
    pub fn prior(rule_id: impl Into<String>, w_p: f64) -> Result<Self, WeightError> {
        let w_p = check_unit("w_P", w_p)?;
        Ok(Self {
            rule_id: rule_id.into(),
            w_r: w_p,
            criteria: Criteria::prior(w_p),
            history: Vec::new(),
            w_ra: w_p,
        })
    }

    /// Accumulated weight over the most recent `window` history entries.
    pub fn windowed_w_ra(&self, window: usize) -> f64 {
        if self.history.is_empty() || window == 0 {
            return self.w_r;
        }
        let tail = &self.history[self.history.len().saturating_sub(window)..];
        tail.iter().map(|h| h.w_r).sum::<f64>() / tail.len() as f64
    }
}

/// Appends a new w_R to the history and recomputes w_Ra as the history mean.
pub fn accumulate(weight: &RuleWeight, criteria: Criteria, ts_ms: u64) -> Result<RuleWeight, WeightError> {
    let w_r = rule_weight(&criteria)?;
    let mut out = weight.clone();
    out.w_r = w_r;
    out.criteria = criteria;
    out.history.push(HistoryEntry { ts_ms, w_r });
    out.w_ra = out.history.iter().map(|h| h.w_r).sum::<f64>() / out.history.len() as f64;
    Ok(out)
}

/// Weights for every rule, keyed by rule id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WeightTable {
    pub w_p: f64,
    pub rules: BTreeMap<String, RuleWeight>,
}

impl WeightTable {
    /// Every rule primed with the panel weight.
    pub fn prior<I, S>(labels: I, w_p: f64) -> Result<Self, WeightError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut rules = BTreeMap::new();
        for l in labels {
            let l = l.into();
            rules.insert(l.clone(), RuleWeight::prior(l, w_p)?);
        }
        Ok(Self { w_p, rules })
    }

    pub fn from_workbook(workbook: &Workbook) -> Result<Self, WeightError> {
        let panel = workbook_panel(workbook)?;
        Self::prior(workbook.system_labels(), panel.w_p)
    }

    pub fn get(&self, rule_id: &str) -> Option<&RuleWeight> {
        self.rules.get(rule_id)
    }

    /// Current w_R for each label, in the given order.
    pub fn current(&self, labels: &[String]) -> Result<Vec<f64>, WeightError> {
        labels
            .iter()
            .map(|l| {
                self.rules
                    .get(l)
                    .map(|r| r.w_r)
                    .ok_or_else(|| WeightError::UnknownRule(l.clone()))
            })
            .collect()
    }

    /// Folds a resolution outcome into `rule_id`: w_K, optional w_U, and the panel weight.
    pub fn resolve(&mut self, rule_id: &str, w_k: f64, w_u: Option<f64>, ts_ms: u64) -> Result<&RuleWeight, WeightError> {
        let criteria = Criteria {
            w_p: Some(self.w_p),
            w_k: Some(w_k),
            w_u,
        };
        let current = self
            .rules
            .get(rule_id)
            .ok_or_else(|| WeightError::UnknownRule(rule_id.to_string()))?;
        let next = accumulate(current, criteria, ts_ms)?;
        self.rules.insert(rule_id.to_string(), next);
        Ok(&self.rules[rule_id])
    }
}
