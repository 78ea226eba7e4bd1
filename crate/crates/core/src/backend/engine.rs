//! The single owner of session, weights, event log and bus.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Value as Json};

use super::bus::{Bus, TOPIC_ASSESSMENT, TOPIC_STATUS};
use super::metrics::Metrics;
use super::replay::{apply_outcome, restore, update_payload, RatingPayload, ReportPayload, UpdateReason};
use super::session::{Input, Outcome, Phase, Session, Transition, UserEvent};
use super::store::{EventKind, EventRecord, EventStore};
use super::BackendError;
use crate::fmea::Workbook;
use crate::knowledge::{assess, Assessment, AssessmentKind, KnowledgeModel};
use crate::ruledsl::{Snapshot, Value};
use crate::weights::WeightTable;

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// A clock moved by hand; clones share the same time.
#[derive(Debug, Clone, Default)]
pub struct ManualClock(Arc<AtomicU64>);

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        Self(Arc::new(AtomicU64::new(start_ms)))
    }

    pub fn set(&self, ms: u64) {
        self.0.store(ms, Ordering::SeqCst);
    }

    pub fn advance(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    /// Consecutive snapshots a fault must persist before it is published.
    pub debounce: u32,
    /// Events between weight checkpoints in the log.
    pub checkpoint_every: usize,
    /// Snapshots between logged KPI samples.
    pub kpi_every: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            debounce: 2,
            checkpoint_every: 100,
            kpi_every: 60,
        }
    }
}

/// Persistence filter: a fault label must be seen `need` times in a row, and a
/// published label must clear before it can be published again.
#[derive(Debug, Clone, Default)]
struct Debounce {
    need: u32,
    candidate: Option<String>,
    count: u32,
    since: u64,
    blocked: Option<String>,
}

impl Debounce {
    fn observe(&mut self, a: &Assessment, now: u64) -> Option<u64> {
        if a.kind != AssessmentKind::Fault {
            self.candidate = None;
            self.count = 0;
            self.blocked = None;
            return None;
        }
        if self.blocked.as_deref() == Some(a.fm_id.as_str()) {
            return None;
        }
        self.blocked = None;
        if self.candidate.as_deref() == Some(a.fm_id.as_str()) {
            self.count += 1;
        } else {
            self.candidate = Some(a.fm_id.clone());
            self.count = 1;
            self.since = now;
        }
        (self.count >= self.need).then_some(self.since)
    }

    fn fired(&mut self, fm_id: &str) {
        self.blocked = Some(fm_id.to_string());
        self.candidate = None;
        self.count = 0;
    }
}

pub struct Engine {
    workbook: Workbook,
    model: KnowledgeModel,
    exponent: u32,
    weights: WeightTable,
    session: Session,
    store: EventStore,
    bus: Bus,
    clock: Arc<dyn Clock>,
    config: EngineConfig,
    debounce: Debounce,
    metrics: Metrics,
    last_label: Option<String>,
    last_checkpoint: usize,
    published: u64,
    latest: Option<Assessment>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("phase", &self.session.phase())
            .field("events", &self.store.len())
            .finish_non_exhaustive()
    }
}

impl Engine {
    /// Primes weights from the panel on an empty log, or restores them from a non-empty one.
    pub fn new(
        workbook: Workbook,
        store: EventStore,
        bus: Bus,
        clock: Arc<dyn Clock>,
        config: EngineConfig,
    ) -> Result<Self, BackendError> {
        let model = KnowledgeModel::from_workbook(&workbook)?;
        let exponent = workbook.approximation_exponent();
        let restored = restore(store.records())?;
        let published = store
            .records()
            .iter()
            .filter(|r| r.kind == EventKind::Assessment)
            .count() as u64;
        let mut engine = Self {
            weights: WeightTable::default(),
            session: Session::new(),
            debounce: Debounce {
                need: config.debounce.max(1),
                ..Debounce::default()
            },
            last_checkpoint: store.len(),
            workbook,
            model,
            exponent,
            store,
            bus,
            clock,
            config,
            metrics: Metrics::default(),
            last_label: None,
            published,
            latest: None,
        };
        match restored {
            Some(w) => {
                engine.weights = w;
                engine.session = Session::resumed();
            }
            None => {
                engine.weights = WeightTable::from_workbook(&engine.workbook)?;
                let payload = update_payload(UpdateReason::Prior, None, &engine.weights);
                engine.append(EventKind::WeightUpdate, payload)?;
                engine.session.handle(Input::Prime)?;
            }
        }
        engine.publish_status(None);
        Ok(engine)
    }

    pub fn phase(&self) -> Phase {
        self.session.phase()
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn weights(&self) -> &WeightTable {
        &self.weights
    }

    pub fn workbook(&self) -> &Workbook {
        &self.workbook
    }

    pub fn model(&self) -> &KnowledgeModel {
        &self.model
    }

    pub fn store(&self) -> &EventStore {
        &self.store
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    /// Most recent assessment of any kind.
    pub fn latest(&self) -> Option<&Assessment> {
        self.latest.as_ref()
    }

    /// Assesses one snapshot and publishes a debounced fault when monitoring.
    pub fn on_snapshot(&mut self, snapshot: &Snapshot) -> Result<Option<Assessment>, BackendError> {
        let now = self.clock.now_ms();
        self.metrics.snapshots += 1;
        let rate = snapshot.get("production_rate").and_then(Value::as_real);
        if rate.is_some() {
            self.metrics.last_production_rate = rate;
        }
        let weights = self.weights.current(self.model.frame().labels())?;
        let a = assess(&self.model, &self.workbook, &weights, snapshot, self.exponent)?;

        if self.last_label.as_deref() != Some(a.fm_id.as_str()) {
            self.last_label = Some(a.fm_id.clone());
            self.publish_status(None);
            if let Some(open) = self.session.assessment() {
                if self.session.phase() == Phase::AwaitResolution && open.fm_id != a.fm_id {
                    let open = open.fm_id.clone();
                    self.publish_status(Some(json!({ "suggest": "solved", "fm_id": open })));
                }
            }
        }
        if self.config.kpi_every > 0 && self.metrics.snapshots.is_multiple_of(self.config.kpi_every) {
            if let Some(r) = rate {
                self.append(EventKind::KpiSample, json!({ "production_rate": r }))?;
            }
        }
        let ready = self.debounce.observe(&a, now);
        let mut out = None;
        if let (Some(since), Phase::Monitor) = (ready, self.session.phase()) {
            out = Some(self.publish(a.clone(), since, now)?);
        }
        self.latest = Some(a);
        self.maybe_checkpoint()?;
        Ok(out)
    }

    fn publish(&mut self, mut a: Assessment, detected_at: u64, now: u64) -> Result<Assessment, BackendError> {
        if let Some(check) = a.mass_vector() {
            check?;
        }
        self.published += 1;
        a.seq = self.published;
        a.detected_at = detected_at;
        a.published_at = Some(now);
        a.pair_index = 0;
        self.session.handle(Input::Publish(Box::new(a.clone())))?;
        self.debounce.fired(&a.fm_id);
        self.append(EventKind::Assessment, serde_json::to_value(&a)?)?;
        self.bus.publish(TOPIC_ASSESSMENT, serde_json::to_string(&a)?);
        self.metrics.open_episode(a.seq);
        self.publish_status(None);
        Ok(a)
    }

    /// Applies an operator event; illegal events change nothing and log nothing.
    pub fn on_user_event(&mut self, event: UserEvent) -> Result<Transition, BackendError> {
        let open = self.session.assessment().cloned();
        let transition = self.session.handle(Input::User(event.clone()))?;
        let now = self.clock.now_ms();
        let fm_id = open.as_ref().map(|a| a.fm_id.clone()).unwrap_or_default();
        let seq = open.as_ref().map_or(0, |a| a.seq);
        match &event {
            UserEvent::Ack => {
                self.append(EventKind::Ack, json!({ "fm_id": fm_id, "seq": seq }))?;
                if let Some(a) = &open {
                    self.metrics.record_ack(a.detected_at, a.published_at.unwrap_or(now), now);
                }
            }
            UserEvent::Next => {
                let index = self.session.assessment().map_or(0, |a| a.pair_index);
                self.append(EventKind::Next, json!({ "fm_id": fm_id, "pair_index": index }))?;
            }
            UserEvent::Solved => {
                let index = open.as_ref().map_or(0, |a| a.pair_index);
                self.append(EventKind::Solved, json!({ "fm_id": fm_id, "pair_index": index }))?;
            }
            UserEvent::Rating { .. } | UserEvent::Report { .. } => {}
        }
        if let Some(outcome) = &transition.outcome {
            let record = match outcome {
                Outcome::Resolved { fm_id, stars } => self.append(
                    EventKind::Rating,
                    serde_json::to_value(RatingPayload {
                        fm_id: fm_id.clone(),
                        stars: *stars,
                    })?,
                )?,
                Outcome::Reported { fm_id, text } => self.append(
                    EventKind::Report,
                    serde_json::to_value(ReportPayload {
                        fm_id: fm_id.clone(),
                        text: text.clone(),
                    })?,
                )?,
            };
            apply_outcome(&mut self.weights, &record)?;
            let payload = update_payload(UpdateReason::Resolution, Some(&fm_id), &self.weights);
            self.append(EventKind::WeightUpdate, payload)?;
            if let Some(a) = &open {
                self.metrics.record_close(a.detected_at, now);
            }
        }
        self.maybe_checkpoint()?;
        self.publish_status(None);
        Ok(transition)
    }

    pub fn record_source_error(&mut self, message: String) {
        self.metrics.source_errors += 1;
        self.publish_status(Some(json!({ "source_error": message })));
    }

    /// Logs an externally observed event such as a recipe change or fault injection.
    pub fn note(&mut self, kind: EventKind, payload: Json) -> Result<(), BackendError> {
        self.append(kind, payload)?;
        self.maybe_checkpoint()
    }

    fn append(&mut self, kind: EventKind, payload: Json) -> Result<EventRecord, BackendError> {
        let now = self.clock.now_ms();
        Ok(self.store.append(kind, now, payload)?.clone())
    }

    fn maybe_checkpoint(&mut self) -> Result<(), BackendError> {
        let every = self.config.checkpoint_every;
        if every > 0 && self.store.len() >= self.last_checkpoint + every {
            let payload = update_payload(UpdateReason::Snapshot, None, &self.weights);
            self.append(EventKind::WeightUpdate, payload)?;
            self.last_checkpoint = self.store.len();
        }
        Ok(())
    }

    fn publish_status(&self, extra: Option<Json>) {
        let mut status = json!({
            "phase": self.session.phase(),
            "label": self.last_label,
            "ts_ms": self.clock.now_ms(),
        });
        if let (Some(Json::Object(extra)), Json::Object(map)) = (extra, &mut status) {
            map.extend(extra);
        }
        self.bus.publish(TOPIC_STATUS, status.to_string());
    }
}
