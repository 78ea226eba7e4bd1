//! Production KPIs, recipe validation and one-way ANOVA.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KpiError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("statistic undefined: {0}")]
    Undefined(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Default acceptance threshold on K_V: the recipe must meet its estimate.
pub const DEFAULT_ACCEPTANCE_THRESHOLD: f64 = 1.0;

/// Long-term horizon as a multiple of the short-term window.
pub const LONG_TERM_FACTOR: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub ts_ms: u64,
    pub value: f64,
}

/// A timestamped KPI series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiSeries {
    pub metric: String,
    pub window_ms: u64,
    pub samples: Vec<Sample>,
}

impl KpiSeries {
    pub fn new(metric: impl Into<String>, window_ms: u64, samples: Vec<Sample>) -> Result<Self, KpiError> {
        if window_ms == 0 {
            return Err(KpiError::InvalidParameter("window must be positive".into()));
        }
        if samples.windows(2).any(|w| w[1].ts_ms <= w[0].ts_ms) {
            return Err(KpiError::InvalidParameter("timestamps must be strictly increasing".into()));
        }
        if samples.iter().any(|s| !s.value.is_finite()) {
            return Err(KpiError::InvalidParameter("sample values must be finite".into()));
        }
        Ok(Self {
            metric: metric.into(),
            window_ms,
            samples,
        })
    }

    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.value).collect()
    }

    pub fn mean(&self) -> Option<f64> {
        if self.samples.is_empty() {
            None
        } else {
            Some(self.samples.iter().map(|s| s.value).sum::<f64>() / self.samples.len() as f64)
        }
    }

    /// Samples with `from_ms < ts_ms <= to_ms`.
    pub fn between(&self, from_ms: u64, to_ms: u64) -> Vec<Sample> {
        self.samples
            .iter()
            .filter(|s| s.ts_ms > from_ms && s.ts_ms <= to_ms)
            .copied()
            .collect()
    }
}

/// Products per minute in consecutive bins of `bin_ms` over `[start_ms, end_ms)`.
///
/// Each sample is stamped with its bin's end. Empty bins read 0.
pub fn production_rate(events_ms: &[u64], start_ms: u64, end_ms: u64, bin_ms: u64) -> Result<KpiSeries, KpiError> {
    if bin_ms == 0 {
        return Err(KpiError::InvalidParameter("bin width must be positive".into()));
    }
    if end_ms < start_ms {
        return Err(KpiError::InvalidParameter("end precedes start".into()));
    }
    let bins = ((end_ms - start_ms) / bin_ms) as usize;
    let mut counts = vec![0u64; bins];
    for &t in events_ms {
        if t >= start_ms && t < start_ms + bins as u64 * bin_ms {
            counts[((t - start_ms) / bin_ms) as usize] += 1;
        }
    }
    let minutes = bin_ms as f64 / 60_000.0;
    let samples = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| Sample {
            ts_ms: start_ms + (i as u64 + 1) * bin_ms,
            value: c as f64 / minutes,
        })
        .collect();
    KpiSeries::new("production_rate", bin_ms, samples)
}

/// Mean production rate over one window, prod/min.
pub fn window_rate(events_ms: &[u64], start_ms: u64, end_ms: u64) -> Result<f64, KpiError> {
    if end_ms <= start_ms {
        return Err(KpiError::InvalidParameter("empty window".into()));
    }
    let n = events_ms.iter().filter(|&&t| t >= start_ms && t < end_ms).count();
    Ok(n as f64 / ((end_ms - start_ms) as f64 / 60_000.0))
}

/// Trailing mean over `min(n, available)` samples, aligned to the input timestamps.
pub fn moving_average(series: &KpiSeries, n: usize) -> Result<KpiSeries, KpiError> {
    if n == 0 {
        return Err(KpiError::InvalidParameter("moving average needs n >= 1".into()));
    }
    let mut sum = 0.0;
    let mut out = Vec::with_capacity(series.samples.len());
    for (i, s) in series.samples.iter().enumerate() {
        sum += s.value;
        if i >= n {
            sum -= series.samples[i - n].value;
        }
        let len = (i + 1).min(n);
        // recompute exactly when the running sum may have drifted
        let value = if i % 1024 == 1023 {
            let lo = i + 1 - len;
            sum = series.samples[lo..=i].iter().map(|s| s.value).sum();
            sum / len as f64
        } else {
            sum / len as f64
        };
        out.push(Sample { ts_ms: s.ts_ms, value });
    }
    Ok(KpiSeries {
        metric: format!("{}_ma{n}", series.metric),
        window_ms: series.window_ms,
        samples: out,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    ShortTerm,
    LongTerm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationVerdict {
    pub k_v: f64,
    pub threshold: f64,
    pub accepted: bool,
    pub horizon: Horizon,
}

/// K_V = (1/N) Σ K_C·w_KC / K_T; accepted iff K_V >= threshold.
pub fn validate_rule(
    current: &[f64],
    targets: &[f64],
    kpi_weights: &[f64],
    threshold: f64,
    horizon: Horizon,
) -> Result<ValidationVerdict, KpiError> {
    if current.is_empty() || current.len() != targets.len() || current.len() != kpi_weights.len() {
        return Err(KpiError::InvalidParameter(format!(
            "misaligned KPI lists ({}, {}, {})",
            current.len(),
            targets.len(),
            kpi_weights.len()
        )));
    }
    let mut sum = 0.0;
    for ((&c, &t), &w) in current.iter().zip(targets).zip(kpi_weights) {
        if !(t > 0.0) {
            return Err(KpiError::InvalidParameter(format!("target {t} must be positive")));
        }
        if !(0.0..=1.0).contains(&w) {
            return Err(KpiError::InvalidParameter(format!("KPI weight {w} is outside [0, 1]")));
        }
        sum += c * w / t;
    }
    let k_v = sum / current.len() as f64;
    Ok(ValidationVerdict {
        k_v,
        threshold,
        accepted: k_v >= threshold,
        horizon,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f_stat: f64,
    pub p_value: f64,
    pub df_between: f64,
    pub df_within: f64,
}

impl AnovaResult {
    pub fn rejects_null(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Classical one-way ANOVA with the p-value from the F survival function.
pub fn anova_one_way(groups: &[Vec<f64>]) -> Result<AnovaResult, KpiError> {
    if groups.len() < 2 {
        return Err(KpiError::InvalidParameter("ANOVA needs at least two groups".into()));
    }
    if let Some(g) = groups.iter().find(|g| g.len() < 2) {
        return Err(KpiError::InvalidParameter(format!(
            "every group needs at least two samples, found {}",
            g.len()
        )));
    }
    let n: usize = groups.iter().map(Vec::len).sum();
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in groups {
        let m = g.iter().sum::<f64>() / g.len() as f64;
        ss_between += g.len() as f64 * (m - grand).powi(2);
        ss_within += g.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    }
    let df_between = (groups.len() - 1) as f64;
    let df_within = (n - groups.len()) as f64;
    let scale = groups.iter().flatten().map(|x| x.abs()).fold(0.0, f64::max).max(1.0);
    if ss_within <= f64::EPSILON * scale * scale * n as f64 {
        return Err(KpiError::Undefined("within-group variance is zero".into()));
    }
    let f_stat = (ss_between / df_between) / (ss_within / df_within);
    Ok(AnovaResult {
        f_stat,
        p_value: f_survival(f_stat, df_between, df_within)?,
        df_between,
        df_within,
    })
}

/// P(X > f) for X ~ F(d1, d2).
pub fn f_survival(f: f64, d1: f64, d2: f64) -> Result<f64, KpiError> {
    let dist = FisherSnedecor::new(d1, d2).map_err(|e| KpiError::InvalidParameter(e.to_string()))?;
    if f <= 0.0 {
        return Ok(1.0);
    }
    Ok(dist.sf(f))
}

/// Reads a `timestamp,value` CSV (timestamp in ms).
pub fn read_series(reader: impl Read, metric: &str, window_ms: u64) -> Result<KpiSeries, KpiError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["timestamp", "value"] {
        return Err(KpiError::Parse {
            line: 1,
            message: format!("expected header `timestamp,value`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut samples = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |what: &str| KpiError::Parse {
            line,
            message: format!("invalid {what}"),
        };
        let ts_ms: u64 = rec[0].trim().parse().map_err(|_| bad("timestamp"))?;
        let value: f64 = rec[1].trim().parse().map_err(|_| bad("value"))?;
        samples.push(Sample { ts_ms, value });
    }
    KpiSeries::new(metric, window_ms, samples)
}

pub fn write_series(series: &KpiSeries, writer: impl Write) -> Result<(), KpiError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(["timestamp", "value"])?;
    for s in &series.samples {
        w.write_record([s.ts_ms.to_string(), s.value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
