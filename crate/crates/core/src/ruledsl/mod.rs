//! Rule expression language: boolean rules over process variables and
//! thresholds, plus real-valued `value if cond else other` criteria formulas.
//!
//! ```
//! use klafate::ruledsl::{parse_rule, eval_bool, Snapshot, ThresholdSet, Value};
//!
//! let rule = parse_rule("actual_pressure < LOWEST_PRESSURE").unwrap();
//! let mut thresholds = ThresholdSet::new();
//! thresholds.insert("LOWEST_PRESSURE", 5.0, Some("bar")).unwrap();
//! let snap = Snapshot::from_pairs([("actual_pressure", Value::Real(4.0))]).unwrap();
//! assert!(eval_bool(&rule, &snap, &thresholds).unwrap());
//! ```

mod ast;
mod eval;
mod exclusivity;
mod parser;
mod typecheck;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ast::{CmpOp, Expr, Ident, Pos};
pub use eval::{eval, eval_bool, eval_real, REAL_EQ_TOLERANCE};
pub use exclusivity::{
    check_mutual_exclusivity, check_mutual_exclusivity_with, check_rule_set, ExclusivityReport,
    Overlap, RuleSetReport, MAX_CONDITION_VARS,
};
pub use parser::{is_identifier, parse_rule};
pub use typecheck::{typecheck, Kind, Scope, TypedExpr};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DslError {
    #[error("syntax error at {pos}: expected one of [{}], found {found}", expected.join(", "))]
    Syntax {
        pos: Pos,
        expected: Vec<String>,
        found: String,
    },
    #[error("unknown operator `{op}` at {pos}")]
    UnknownOperator { op: String, pos: Pos },
    #[error("unresolved name `{name}`{}", fmt_pos(pos))]
    UnresolvedName { name: String, pos: Option<Pos> },
    #[error("name `{name}` is declared both as a variable and a threshold")]
    AmbiguousName { name: String },
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("variable `{0}` is missing from the snapshot")]
    MissingVariable(String),
    #[error("threshold `{0}` is not defined")]
    MissingThreshold(String),
    #[error("{count} condition variables exceed the exhaustive limit of {limit}; use sampling instead")]
    Capacity { count: usize, limit: usize },
    #[error("invalid value: {0}")]
    InvalidValue(String),
}

fn fmt_pos(pos: &Option<Pos>) -> String {
    pos.map(|p| format!(" at {p}")).unwrap_or_default()
}

/// A process value: measurements are reals, states are booleans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Real(f64),
}

impl Value {
    pub fn kind(self) -> Kind {
        match self {
            Value::Bool(_) => Kind::Bool,
            Value::Real(_) => Kind::Real,
        }
    }

    pub fn as_real(self) -> Option<f64> {
        match self {
            Value::Real(x) => Some(x),
            Value::Bool(_) => None,
        }
    }

    pub fn as_bool(self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(b),
            Value::Real(_) => None,
        }
    }

    /// Parses `true`/`false` or a decimal number.
    pub fn parse(text: &str) -> Result<Value, DslError> {
        match text.trim() {
            "true" => Ok(Value::Bool(true)),
            "false" => Ok(Value::Bool(false)),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .map(Value::Real)
                .ok_or_else(|| DslError::InvalidValue(format!("`{other}` is not a number or boolean"))),
        }
    }
}

impl std::fmt::Display for Value {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Real(x) => write!(f, "{x}"),
        }
    }
}

/// Process variable values at one instant.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Snapshot {
    /// Milliseconds since the Unix epoch (or simulation start).
    pub timestamp_ms: u64,
    values: BTreeMap<String, Value>,
}

impl Snapshot {
    pub fn new(timestamp_ms: u64) -> Self {
        Self {
            timestamp_ms,
            values: BTreeMap::new(),
        }
    }

    pub fn from_pairs<I, S>(pairs: I) -> Result<Self, DslError>
    where
        I: IntoIterator<Item = (S, Value)>,
        S: Into<String>,
    {
        let mut snap = Snapshot::new(0);
        for (name, value) in pairs {
            snap.insert(name, value)?;
        }
        Ok(snap)
    }

    /// Sets a value, rejecting non-finite reals.
    pub fn insert(&mut self, name: impl Into<String>, value: Value) -> Result<(), DslError> {
        let name = name.into();
        if let Value::Real(x) = value {
            if !x.is_finite() {
                return Err(DslError::InvalidValue(format!("`{name}` = {x} is not finite")));
            }
        }
        self.values.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<Value> {
        self.values.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Value)> {
        self.values.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    pub unit: Option<String>,
}

/// Named numeric constants referenced by rules.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ThresholdSet {
    entries: BTreeMap<String, Threshold>,
}

impl ThresholdSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a threshold; names must be unique and values finite.
    pub fn insert(&mut self, name: impl Into<String>, value: f64, unit: Option<&str>) -> Result<(), DslError> {
        let name = name.into();
        if !value.is_finite() {
            return Err(DslError::InvalidValue(format!("threshold `{name}` = {value} is not finite")));
        }
        if self.entries.contains_key(&name) {
            return Err(DslError::InvalidValue(format!("duplicate threshold `{name}`")));
        }
        self.entries.insert(
            name,
            Threshold {
                value,
                unit: unit.map(str::to_string),
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Threshold> {
        self.entries.get(name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.entries.get(name).map(|t| t.value)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Threshold)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Union of two disjoint sets.
    pub fn merged(&self, other: &ThresholdSet) -> Result<ThresholdSet, DslError> {
        let mut out = self.clone();
        for (name, t) in other.iter() {
            out.insert(name, t.value, t.unit.as_deref())?;
        }
        Ok(out)
    }
}
