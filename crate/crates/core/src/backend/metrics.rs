//! Latency bookkeeping for the operator handshake.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpisodeLatency {
    pub seq: u64,
    /// Publication to operator acknowledgement.
    pub publish_to_ack_ms: Option<u64>,
    /// First detecting snapshot to acknowledgement (the message was on screen).
    pub detect_to_display_ms: Option<u64>,
    /// First detecting snapshot to rating or report.
    pub cycle_ms: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub median_ms: Option<f64>,
    pub max_ms: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Metrics {
    pub episodes: Vec<EpisodeLatency>,
    pub snapshots: u64,
    pub published: u64,
    pub source_errors: u64,
    pub last_production_rate: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub publish_to_ack: Summary,
    pub detect_to_display: Summary,
    pub cycle: Summary,
    pub snapshots: u64,
    pub published: u64,
    pub source_errors: u64,
    pub production_rate: Option<f64>,
}

pub fn median(values: &[u64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    })
}

fn summarize(values: Vec<u64>) -> Summary {
    Summary {
        count: values.len(),
        median_ms: median(&values),
        max_ms: values.iter().copied().max(),
    }
}

impl Metrics {
    pub fn open_episode(&mut self, seq: u64) {
        self.published += 1;
        self.episodes.push(EpisodeLatency {
            seq,
            publish_to_ack_ms: None,
            detect_to_display_ms: None,
            cycle_ms: None,
        });
    }

    pub fn record_ack(&mut self, detected_at: u64, published_at: u64, now: u64) {
        if let Some(e) = self.episodes.last_mut() {
            e.publish_to_ack_ms = Some(now.saturating_sub(published_at));
            e.detect_to_display_ms = Some(now.saturating_sub(detected_at));
        }
    }

    pub fn record_close(&mut self, detected_at: u64, now: u64) {
        if let Some(e) = self.episodes.last_mut() {
            e.cycle_ms = Some(now.saturating_sub(detected_at));
        }
    }

    pub fn report(&self) -> MetricsReport {
        let pick = |f: fn(&EpisodeLatency) -> Option<u64>| self.episodes.iter().filter_map(f).collect();
        MetricsReport {
            publish_to_ack: summarize(pick(|e| e.publish_to_ack_ms)),
            detect_to_display: summarize(pick(|e| e.detect_to_display_ms)),
            cycle: summarize(pick(|e| e.cycle_ms)),
            snapshots: self.snapshots,
            published: self.published,
            source_errors: self.source_errors,
            production_rate: self.last_production_rate,
        }
    }
}
