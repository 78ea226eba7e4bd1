//! Weighted Dempster-Shafer evidence with an explicit overall-uncertainty mass.
//!
//! Only one knowledge rule fires at a time, so the basic probability
//! assignment is built by "sensitivity to zero": the active focal element
//! receives `k = 1 - 10^-F` and the remaining `1 - k` is spread evenly over
//! the inactive elements. Each mass is then scaled by the confidence weight of
//! its rule and whatever is left over becomes the overall uncertainty `U`:
//!
//! ```text
//! evidence = [ m'_1 * w_1, ..., m'_n * w_n, U ]     U = 1 - sum(m'_j * w_j)
//! ```
//!
//! ```
//! use klafate::evidence::{build_evidence, Frame};
//!
//! let frame = Frame::new(["LQ", "LP", "NP"]).unwrap();
//! let ev = build_evidence(&frame, "LQ", &[0.84, 0.71, 0.71], 2).unwrap();
//! assert!((ev.masses()[0] - 0.8316).abs() < 1e-12);
//! assert!((ev.uncertainty() - 0.1613).abs() < 1e-12);
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when checking that a mass vector sums to one.
pub const CONSERVATION_TOLERANCE: f64 = 1e-9;

/// Largest approximation exponent whose `k` is still distinguishable from 1 in `f64`.
pub const MAX_APPROXIMATION_EXPONENT: u32 = 15;

/// Default approximation exponent.
pub const DEFAULT_APPROXIMATION_EXPONENT: u32 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvidenceError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("label `{0}` is not part of the frame")]
    UnknownLabel(String),
}

pub type Result<T> = std::result::Result<T, EvidenceError>;

/// Ordered frame of discernment. Mass indices refer to label positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Frame {
    labels: Vec<String>,
}

impl Frame {
    pub fn new<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(EvidenceError::InvalidParameter(
                "a frame needs at least one label".into(),
            ));
        }
        for (i, label) in labels.iter().enumerate() {
            if label.trim().is_empty() {
                return Err(EvidenceError::InvalidParameter(format!(
                    "label at position {i} is empty"
                )));
            }
            if labels[..i].contains(label) {
                return Err(EvidenceError::InvalidParameter(format!(
                    "duplicate label `{label}`"
                )));
            }
        }
        Ok(Self { labels })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| EvidenceError::UnknownLabel(label.to_string()))
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }
}

impl TryFrom<Vec<String>> for Frame {
    type Error = EvidenceError;

    fn try_from(labels: Vec<String>) -> Result<Self> {
        Frame::new(labels)
    }
}

impl From<Frame> for Vec<String> {
    fn from(frame: Frame) -> Self {
        frame.labels
    }
}

/// Weighted focal-element masses plus the explicit overall uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassVector {
    frame: Frame,
    masses: Vec<f64>,
    uncertainty: f64,
}

impl MassVector {
    /// Builds a mass vector after checking range and conservation.
    pub fn new(frame: Frame, masses: Vec<f64>, uncertainty: f64) -> Result<Self> {
        if masses.len() != frame.len() {
            return Err(EvidenceError::InvalidParameter(format!(
                "{} masses for a frame of {} labels",
                masses.len(),
                frame.len()
            )));
        }
        let in_unit = |x: f64| x.is_finite() && (0.0..=1.0).contains(&x);
        if let Some((i, m)) = masses.iter().enumerate().find(|(_, m)| !in_unit(**m)) {
            return Err(EvidenceError::InvalidParameter(format!(
                "mass {m} for `{}` outside [0,1]",
                frame.labels[i]
            )));
        }
        if !in_unit(uncertainty) {
            return Err(EvidenceError::InvalidParameter(format!(
                "uncertainty {uncertainty} outside [0,1]"
            )));
        }
        let total: f64 = masses.iter().sum::<f64>() + uncertainty;
        if (total - 1.0).abs() > CONSERVATION_TOLERANCE {
            return Err(EvidenceError::InvalidParameter(format!(
                "masses and uncertainty sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            frame,
            masses,
            uncertainty,
        })
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn uncertainty(&self) -> f64 {
        self.uncertainty
    }

    pub fn mass_of(&self, label: &str) -> Result<f64> {
        Ok(self.masses[self.frame.index_of(label)?])
    }

    /// Sum of all masses plus the uncertainty; 1 up to rounding.
    pub fn total(&self) -> f64 {
        self.masses.iter().sum::<f64>() + self.uncertainty
    }

    /// The array form `[m_1 .. m_n, U]`.
    pub fn to_array(&self) -> Vec<f64> {
        let mut out = self.masses.clone();
        out.push(self.uncertainty);
        out
    }
}

/// `k = 1 - 10^-F`.
pub fn approximation_factor(exponent: u32) -> Result<f64> {
    if exponent < 1 {
        return Err(EvidenceError::InvalidParameter(
            "approximation exponent must be at least 1".into(),
        ));
    }
    if exponent > MAX_APPROXIMATION_EXPONENT {
        return Err(EvidenceError::InvalidParameter(format!(
            "approximation exponent {exponent} exceeds {MAX_APPROXIMATION_EXPONENT}; k would round to 1"
        )));
    }
    Ok(1.0 - 10f64.powi(-(exponent as i32)))
}

/// Spreads mass over the frame: `k` on the active label, `(1-k)/(n-1)` elsewhere.
///
/// A single-label frame has nowhere to spread to and gets mass 1.
pub fn spread_masses(frame: &Frame, active_label: &str, k: f64) -> Result<Vec<f64>> {
    if !(k > 0.0 && k < 1.0) {
        return Err(EvidenceError::InvalidParameter(format!(
            "approximation factor {k} must lie strictly between 0 and 1"
        )));
    }
    let active = frame.index_of(active_label)?;
    let n = frame.len();
    if n == 1 {
        return Ok(vec![1.0]);
    }
    let rest = (1.0 - k) / (n - 1) as f64;
    Ok((0..n).map(|i| if i == active { k } else { rest }).collect())
}

/// `U = 1 - sum(m_j * w_j)`.
pub fn weighted_uncertainty(masses: &[f64], weights: &[f64]) -> Result<f64> {
    if masses.len() != weights.len() {
        return Err(EvidenceError::InvalidParameter(format!(
            "{} masses but {} weights",
            masses.len(),
            weights.len()
        )));
    }
    if let Some(w) = weights
        .iter()
        .find(|w| !(w.is_finite() && (0.0..=1.0).contains(*w)))
    {
        return Err(EvidenceError::InvalidParameter(format!(
            "weight {w} outside [0,1]"
        )));
    }
    if masses.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
        return Err(EvidenceError::InvalidParameter(
            "masses must be finite and non-negative".into(),
        ));
    }
    let total: f64 = masses.iter().sum();
    if (total - 1.0).abs() > CONSERVATION_TOLERANCE {
        return Err(EvidenceError::InvalidParameter(format!(
            "masses sum to {total}, expected 1"
        )));
    }
    let supported: f64 = masses.iter().zip(weights).map(|(m, w)| m * w).sum();
    Ok((1.0 - supported).clamp(0.0, 1.0))
}

/// Builds the weighted evidence array for the active label.
pub fn build_evidence(
    frame: &Frame,
    active_label: &str,
    weights: &[f64],
    exponent: u32,
) -> Result<MassVector> {
    if weights.len() != frame.len() {
        return Err(EvidenceError::InvalidParameter(format!(
            "{} weights for a frame of {} labels",
            weights.len(),
            frame.len()
        )));
    }
    let k = approximation_factor(exponent)?;
    let spread = spread_masses(frame, active_label, k)?;
    let uncertainty = weighted_uncertainty(&spread, weights)?;
    let masses = spread.iter().zip(weights).map(|(m, w)| m * w).collect();
    MassVector::new(frame.clone(), masses, uncertainty)
}
