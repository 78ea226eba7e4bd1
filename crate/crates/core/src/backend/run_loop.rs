//! Async driver: polls a data source, routes operator events, mirrors state for HTTP.

use std::future::Future;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use serde::Serialize;
use serde_json::{json, Value as Json};
use thiserror::Error;
use tokio::sync::{broadcast, mpsc, oneshot};

use super::bus::{Message, TOPIC_EVENT_PREFIX, TOPIC_STATUS};
use super::engine::Engine;
use super::metrics::MetricsReport;
use super::session::{Phase, UserEvent};
use super::store::EventKind;
use super::BackendError;
use crate::bgsim::{Command as SimCommand, Scenario, Simulator, TraceEvent};
use crate::knowledge::Assessment;
use crate::ruledsl::Snapshot;

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("data source timed out")]
    Timeout,
    #[error("data source unavailable: {0}")]
    Unavailable(String),
    #[error("data source exhausted")]
    Exhausted,
}

pub trait DataSource: Send {
    fn read(&mut self) -> impl Future<Output = Result<Snapshot, SourceError>> + Send;

    /// Events observed since the last call, to be written to the log.
    fn drain_notes(&mut self) -> Vec<(EventKind, Json)> {
        Vec::new()
    }
}

/// The simulator as a data source: each read advances one step.
#[derive(Debug)]
pub struct SimSource {
    sim: Simulator,
    commands: Vec<(u64, SimCommand)>,
    next_command: usize,
    trace_seen: usize,
}

impl SimSource {
    pub fn new(sim: Simulator, scenario: Scenario) -> Self {
        Self {
            sim,
            commands: scenario.commands,
            next_command: 0,
            trace_seen: 0,
        }
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn step(&mut self) -> Snapshot {
        let now = self.sim.clock_ms();
        while let Some((at, cmd)) = self.commands.get(self.next_command) {
            if at * 1000 > now {
                break;
            }
            self.sim.enqueue(cmd.clone());
            self.next_command += 1;
        }
        self.sim.tick();
        self.sim.snapshot()
    }
}

impl DataSource for SimSource {
    async fn read(&mut self) -> Result<Snapshot, SourceError> {
        Ok(self.step())
    }

    fn drain_notes(&mut self) -> Vec<(EventKind, Json)> {
        let new = &self.sim.trace()[self.trace_seen..];
        self.trace_seen = self.sim.trace().len();
        new.iter()
            .filter_map(|e| match e {
                TraceEvent::FaultInjected { ts_ms, fault } => {
                    Some((EventKind::FaultInjected, json!({ "fault": fault, "sim_ms": ts_ms })))
                }
                TraceEvent::RecipeChange { ts_ms, label } => {
                    Some((EventKind::RecipeChange, json!({ "label": label, "sim_ms": ts_ms })))
                }
                _ => None,
            })
            .collect()
    }
}

/// State mirrored out of the loop for readers such as the HTTP layer.
#[derive(Debug, Clone, Serialize)]
pub struct Shared {
    pub phase: Phase,
    pub assessment: Option<Assessment>,
    pub latest: Option<Assessment>,
    pub metrics: Option<MetricsReport>,
    pub events: usize,
}

impl Default for Shared {
    fn default() -> Self {
        Self {
            phase: Phase::FirstRun,
            assessment: None,
            latest: None,
            metrics: None,
            events: 0,
        }
    }
}

pub type SharedState = Arc<RwLock<Shared>>;

pub type Reply = oneshot::Sender<Result<Phase, BackendError>>;

#[derive(Debug)]
pub enum Command {
    User(UserEvent, Reply),
    Shutdown,
}

#[derive(Debug, Clone)]
pub struct LoopConfig {
    pub period: Duration,
    pub source_timeout: Duration,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
    /// Stop after this many successful snapshots.
    pub max_snapshots: Option<u64>,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            period: Duration::from_secs(1),
            source_timeout: Duration::from_secs(5),
            initial_backoff: Duration::from_millis(100),
            max_backoff: Duration::from_secs(5),
            max_snapshots: None,
        }
    }
}

fn mirror(engine: &Engine, shared: &SharedState) {
    let mut s = shared.write().expect("shared state");
    s.phase = engine.phase();
    s.assessment = engine.session().assessment().cloned();
    s.latest = engine.latest().cloned();
    s.metrics = Some(engine.metrics().report());
    s.events = engine.store().len();
}

fn parse_bus_event(msg: &Message) -> Option<Result<UserEvent, String>> {
    let kind = msg.topic.strip_prefix(TOPIC_EVENT_PREFIX)?;
    let mut body: Json = if msg.payload.trim().is_empty() {
        json!({})
    } else {
        match serde_json::from_str(&msg.payload) {
            Ok(v) => v,
            Err(e) => return Some(Err(e.to_string())),
        }
    };
    if let Json::Object(map) = &mut body {
        map.insert("kind".into(), Json::String(kind.to_string()));
    }
    Some(serde_json::from_value(body).map_err(|e| e.to_string()))
}

/// Runs until shutdown, source exhaustion, or `max_snapshots`; returns the engine.
pub async fn run<S: DataSource>(
    mut engine: Engine,
    mut source: S,
    config: LoopConfig,
    mut commands: mpsc::Receiver<Command>,
    shared: SharedState,
) -> Result<Engine, BackendError> {
    let mut inbound = engine.bus().subscribe();
    let mut ticker = tokio::time::interval(config.period);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let mut backoff = config.initial_backoff;
    let mut taken = 0u64;
    let mut commands_open = true;
    mirror(&engine, &shared);
    loop {
        tokio::select! {
            _ = ticker.tick() => {
                match tokio::time::timeout(config.source_timeout, source.read()).await {
                    Ok(Ok(snapshot)) => {
                        backoff = config.initial_backoff;
                        for (kind, payload) in source.drain_notes() {
                            engine.note(kind, payload)?;
                        }
                        engine.on_snapshot(&snapshot)?;
                        taken += 1;
                    }
                    Ok(Err(SourceError::Exhausted)) => break,
                    failure => {
                        let err = match failure {
                            Ok(Err(e)) => e,
                            _ => SourceError::Timeout,
                        };
                        engine_source_error(&mut engine, &err);
                        tokio::time::sleep(backoff).await;
                        backoff = (backoff * 2).min(config.max_backoff);
                    }
                }
                mirror(&engine, &shared);
                if config.max_snapshots.is_some_and(|m| taken >= m) {
                    break;
                }
            }
            cmd = commands.recv(), if commands_open => match cmd {
                Some(Command::User(event, reply)) => {
                    let r = engine.on_user_event(event).map(|t| t.to);
                    mirror(&engine, &shared);
                    let _ = reply.send(r);
                }
                Some(Command::Shutdown) => break,
                None => commands_open = false,
            },
            msg = inbound.recv() => match msg {
                Ok(msg) => {
                    if let Some(parsed) = parse_bus_event(&msg) {
                        let result = parsed
                            .map_err(|e| e.to_string())
                            .and_then(|ev| engine.on_user_event(ev).map_err(|e| e.to_string()));
                        if let Err(e) = result {
                            engine.bus().publish(TOPIC_STATUS, json!({ "error": e }).to_string());
                        }
                        mirror(&engine, &shared);
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => log::warn!("bus lagged by {n} messages"),
                Err(broadcast::error::RecvError::Closed) => {}
            },
        }
    }
    mirror(&engine, &shared);
    Ok(engine)
}

fn engine_source_error(engine: &mut Engine, err: &SourceError) {
    log::warn!("{err}; backing off");
    engine.record_source_error(err.to_string());
}
