//! The `klafate` command line.
//!
//! Exit codes: 0 on success, 1 when validation fails or a command cannot
//! complete, 2 on usage errors.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::backend::http::{router, AppState};
use crate::backend::replay::{canonical_json, replay, restore};
use crate::backend::run_loop::{run as run_loop, Command, LoopConfig, Shared, SimSource};
use crate::backend::store::{read_log, EventStore, LOG_FILE};
use crate::backend::{Bus, Engine, EngineConfig, SystemClock};
use crate::bgsim::{product_times, read_trace, write_trace, Recipe, Scenario, Simulator, TraceEvent};
use crate::fmea::load_workbook;
use crate::knowledge::{assess, Assessment, KnowledgeModel};
use crate::kpi::{anova_one_way, production_rate, validate_rule, window_rate, AnovaResult, Horizon, KpiError};
use crate::kpi::{DEFAULT_ACCEPTANCE_THRESHOLD, LONG_TERM_FACTOR};
use crate::ruledsl::{Snapshot, Value};
use crate::weights::WeightTable;

/// Environment variable overriding where `serve` writes its event log.
pub const LOG_DIR_ENV: &str = "KLAFATE_LOG_DIR";
pub const DEFAULT_LOG_DIR: &str = "klafate-log";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "klafate", version, about = "Evidential fault assessment for a bulk good system")]
pub struct Cli {
    /// Output format for machine-readable results.
    #[arg(long, value_enum, global = true, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Load a workbook and verify its rules.
    Validate { workbook: PathBuf },
    /// Run the simulator under a scenario script and export the event trace.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        minutes: u64,
        #[arg(long, default_value = "NP")]
        recipe: String,
        /// Trace destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the final variable snapshot as `name,value` CSV.
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
    /// One-shot assessment of a `name,value` snapshot with prior weights.
    Assess {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long)]
        workbook: PathBuf,
    },
    /// Run the backend against the simulator with HTTP on localhost.
    Serve {
        #[arg(long)]
        workbook: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "NP")]
        recipe: String,
        /// Simulated seconds per wall-clock second.
        #[arg(long, default_value_t = 60.0)]
        acceleration: f64,
        /// Stop after this many simulated minutes.
        #[arg(long)]
        minutes: Option<u64>,
    },
    /// Production-rate verdicts for recipe traces.
    RecipeValidate {
        #[arg(long, value_delimiter = ',', required = true)]
        traces: Vec<PathBuf>,
        #[arg(long, default_value_t = 10, value_parser = parse_window)]
        window: u64,
        #[arg(long, default_value_t = DEFAULT_ACCEPTANCE_THRESHOLD)]
        threshold: f64,
    },
    /// One-way ANOVA over per-minute production rates of traces.
    Anova {
        #[arg(required = true, num_args = 2..)]
        traces: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Re-derive weights from an event log and check them against its checkpoints.
    Replay { log: PathBuf },
}

fn parse_window(s: &str) -> Result<u64, String> {
    match s {
        "10" | "20" | "30" => Ok(s.parse().expect("literal")),
        _ => Err("window must be 10, 20 or 30 minutes".into()),
    }
}

/// Parses `args` and runs the command, writing results to `out` and diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match execute(&cli, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_FAILURE
        }
    }
}

type CmdResult = Result<i32, Box<dyn std::error::Error>>;

fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let fmt = cli.format;
    match &cli.command {
        Cmd::Validate { workbook } => validate(workbook, fmt, out, err),
        Cmd::Simulate {
            scenario,
            seed,
            minutes,
            recipe,
            out: dest,
            snapshot,
        } => simulate(scenario, *seed, *minutes, recipe, dest.as_deref(), snapshot.as_deref(), fmt, out),
        Cmd::Assess { snapshot, workbook } => assess_once(snapshot, workbook, fmt, out),
        Cmd::Serve {
            workbook,
            scenario,
            port,
            seed,
            recipe,
            acceleration,
            minutes,
        } => serve(workbook, scenario, *port, *seed, recipe, *acceleration, *minutes, err),
        Cmd::RecipeValidate {
            traces,
            window,
            threshold,
        } => recipe_validate(traces, *window, *threshold, fmt, out),
        Cmd::Anova { traces, alpha } => anova(traces, *alpha, fmt, out),
        Cmd::Replay { log } => replay_log(log, fmt, out, err),
    }
}

#[derive(Debug, Serialize)]
struct ValidateReport {
    ok: bool,
    system_fms: usize,
    component_fms: usize,
    error: Option<String>,
}

fn validate(path: &Path, fmt: Format, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let checked = load_workbook(path)
        .map_err(|e| e.to_string())
        .and_then(|wb| KnowledgeModel::from_workbook(&wb).map(|_| wb).map_err(|e| e.to_string()));
    let report = match &checked {
        Ok(wb) => ValidateReport {
            ok: true,
            system_fms: wb.system_fms.len(),
            component_fms: wb.component_fms.len(),
            error: None,
        },
        Err(e) => ValidateReport {
            ok: false,
            system_fms: 0,
            component_fms: 0,
            error: Some(e.clone()),
        },
    };
    match (fmt, &checked) {
        (Format::Json, _) => writeln!(out, "{}", serde_json::to_string(&report)?)?,
        (Format::Csv, Ok(_)) => writeln!(
            out,
            "OK: {} system FMs, mutual exclusivity verified",
            report.system_fms
        )?,
        (Format::Csv, Err(e)) => writeln!(err, "{}: {e}", path.display())?,
    }
    Ok(if report.ok { EXIT_OK } else { EXIT_FAILURE })
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    scenario: &Path,
    seed: u64,
    minutes: u64,
    recipe: &str,
    dest: Option<&Path>,
    snapshot: Option<&Path>,
    fmt: Format,
    out: &mut dyn Write,
) -> CmdResult {
    let script = read_text(scenario)?;
    let scenario = Scenario::parse(&script)?;
    let mut sim = Simulator::new(seed, Recipe::by_label(recipe)?);
    sim.set_recipe(Recipe::by_label(recipe)?);
    sim.run_scenario(&scenario, minutes * 60);
    let mut buf = Vec::new();
    match fmt {
        Format::Csv => write_trace(sim.trace(), &mut buf)?,
        Format::Json => {
            serde_json::to_writer(&mut buf, sim.trace())?;
            buf.push(b'\n');
        }
    }
    match dest {
        Some(p) => std::fs::write(p, &buf).map_err(|e| format!("{}: {e}", p.display()))?,
        None => out.write_all(&buf)?,
    }
    if let Some(p) = snapshot {
        let f = File::create(p).map_err(|e| format!("{}: {e}", p.display()))?;
        write_snapshot(&sim.snapshot(), f)?;
    }
    Ok(EXIT_OK)
}

/// Writes a snapshot as `name,value` CSV, with the timestamp as a `timestamp_ms` row.
pub fn write_snapshot(snapshot: &Snapshot, writer: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(["name", "value"])?;
    w.write_record(["timestamp_ms".to_string(), snapshot.timestamp_ms.to_string()])?;
    for (name, value) in snapshot.iter() {
        w.write_record([name.to_string(), value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `name,value` snapshot CSV.
pub fn read_snapshot(reader: impl std::io::Read) -> Result<Snapshot, Box<dyn std::error::Error>> {
    let mut rdr = csv::Reader::from_reader(reader);
    if rdr.headers()?.iter().collect::<Vec<_>>() != ["name", "value"] {
        return Err("snapshot header must be `name,value`".into());
    }
    let mut snap = Snapshot::new(0);
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let (name, raw) = (rec[0].trim(), rec[1].trim());
        if name == "timestamp_ms" {
            snap.timestamp_ms = raw.parse().map_err(|_| format!("line {line}: invalid timestamp"))?;
            continue;
        }
        let value = Value::parse(raw).map_err(|e| format!("line {line}: {e}"))?;
        snap.insert(name, value).map_err(|e| format!("line {line}: {e}"))?;
    }
    Ok(snap)
}

fn assess_once(snapshot: &Path, workbook: &Path, fmt: Format, out: &mut dyn Write) -> CmdResult {
    let wb = load_workbook(workbook)?;
    let model = KnowledgeModel::from_workbook(&wb)?;
    let snap = read_snapshot(open(snapshot)?)?;
    let weights = WeightTable::from_workbook(&wb)?.current(model.frame().labels())?;
    let a = assess(&model, &wb, &weights, &snap, wb.approximation_exponent())?;
    match fmt {
        Format::Json => writeln!(out, "{}", serde_json::to_string(&a)?)?,
        Format::Csv => write_assessment_csv(&a, out)?,
    }
    Ok(EXIT_OK)
}

fn write_assessment_csv(a: &Assessment, out: &mut dyn Write) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(["fm_id", "kind", "label", "w_r", "uncertainty", "component_fm", "cause", "recommendation"])?;
    let kind = serde_json::to_value(a.kind)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default();
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    let head = [a.fm_id.clone(), kind, a.label.clone(), opt(a.w_r), opt(a.uncertainty)];
    if a.pairs.is_empty() {
        w.write_record(head.iter().cloned().chain([String::new(), String::new(), String::new()]))?;
    }
    for p in &a.pairs {
        w.write_record(
            head.iter()
                .cloned()
                .chain([p.component_fm.clone(), p.cause.clone(), p.recommendation.clone()]),
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Event log location: `KLAFATE_LOG_DIR` if set, otherwise `klafate-log` in the working directory.
pub fn log_dir() -> PathBuf {
    std::env::var_os(LOG_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_LOG_DIR))
}

#[allow(clippy::too_many_arguments)]
fn serve(
    workbook: &Path,
    scenario: &Path,
    port: u16,
    seed: u64,
    recipe: &str,
    acceleration: f64,
    minutes: Option<u64>,
    err: &mut dyn Write,
) -> CmdResult {
    if !(acceleration > 0.0) {
        return Err("acceleration must be positive".into());
    }
    let wb = load_workbook(workbook)?;
    let scenario = Scenario::parse(&read_text(scenario)?)?;
    let recipe = Recipe::by_label(recipe)?;
    let dir = log_dir();
    std::fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let log_path = dir.join(LOG_FILE);
    let bus = Bus::default();
    let engine = Engine::new(
        wb,
        EventStore::open(&log_path)?,
        bus.clone(),
        Arc::new(SystemClock),
        EngineConfig::default(),
    )?;
    let source = SimSource::new(Simulator::new(seed, recipe), scenario);
    let config = LoopConfig {
        period: Duration::from_secs_f64(1.0 / acceleration),
        max_snapshots: minutes.map(|m| m * 60),
        ..LoopConfig::default()
    };
    let rt = tokio::runtime::Runtime::new()?;
    let engine = rt.block_on(async move {
        let shared = Arc::new(RwLock::new(Shared::default()));
        let (tx, rx) = tokio::sync::mpsc::channel(64);
        let app = router(AppState {
            commands: tx.clone(),
            bus,
            shared: shared.clone(),
        });
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
        log::info!("listening on {}", listener.local_addr()?);
        tokio::spawn(async move {
            if let Err(e) = axum::serve(listener, app).await {
                log::error!("http server stopped: {e}");
            }
        });
        tokio::spawn(async move {
            if tokio::signal::ctrl_c().await.is_ok() {
                let _ = tx.send(Command::Shutdown).await;
            }
        });
        run_loop(engine, source, config, rx, shared)
            .await
            .map_err(|e| -> Box<dyn std::error::Error> { e.into() })
    })?;
    writeln!(
        err,
        "stopped in phase {} after {} events; log at {}",
        engine.phase(),
        engine.store().len(),
        log_path.display()
    )?;
    Ok(EXIT_OK)
}

/// One row of the recipe verdict table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecipeRow {
    pub recipe: String,
    pub horizon: Horizon,
    pub window_min: u64,
    pub rate: f64,
    pub target: Option<f64>,
    pub k_v: Option<f64>,
    pub accepted: Option<bool>,
    /// Rate relative to the incumbent recipe over the same horizon.
    pub vs_incumbent: f64,
}

/// A recipe run: label, product times, and run length.
#[derive(Debug, Clone, PartialEq)]
pub struct RecipeTrace {
    pub label: String,
    pub products: Vec<u64>,
    pub end_ms: u64,
}

impl RecipeTrace {
    /// Label from the first recipe change in the trace, else `fallback`; run length rounded up to a minute.
    pub fn from_events(events: &[TraceEvent], fallback: &str) -> Self {
        let label = events
            .iter()
            .find_map(|e| match e {
                TraceEvent::RecipeChange { label, .. } => Some(label.clone()),
                _ => None,
            })
            .unwrap_or_else(|| fallback.to_string());
        let last = events.iter().map(TraceEvent::ts_ms).max().unwrap_or(0);
        Self {
            label,
            products: product_times(events),
            end_ms: last.div_ceil(60_000) * 60_000,
        }
    }
}

/// Verdicts at the short-term window and, where the trace is long enough, the long-term horizon.
pub fn recipe_rows(traces: &[RecipeTrace], window_min: u64, threshold: f64) -> Result<Vec<RecipeRow>, KpiError> {
    let incumbent = Recipe::np();
    let mut rows = Vec::new();
    for (horizon, minutes) in [
        (Horizon::ShortTerm, window_min),
        (Horizon::LongTerm, window_min * LONG_TERM_FACTOR),
    ] {
        let span = minutes * 60_000;
        let reference = match traces.iter().find(|t| t.label == incumbent.label && t.end_ms >= span) {
            Some(t) => window_rate(&t.products, 0, span)?,
            None => incumbent.nominal_rate,
        };
        for t in traces.iter().filter(|t| t.end_ms >= span) {
            let rate = window_rate(&t.products, 0, span)?;
            let target = Recipe::by_label(&t.label).ok().and_then(|r| r.estimate);
            let verdict = target
                .map(|k_t| validate_rule(&[rate], &[k_t], &[1.0], threshold, horizon))
                .transpose()?;
            rows.push(RecipeRow {
                recipe: t.label.clone(),
                horizon,
                window_min: minutes,
                rate,
                target,
                k_v: verdict.map(|v| v.k_v),
                accepted: verdict.map(|v| v.accepted),
                vs_incumbent: rate / reference,
            });
        }
    }
    Ok(rows)
}

fn load_trace(path: &Path) -> Result<RecipeTrace, Box<dyn std::error::Error>> {
    let events = read_trace(open(path)?).map_err(|e| format!("{}: {e}", path.display()))?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_uppercase())
        .unwrap_or_default();
    Ok(RecipeTrace::from_events(&events, &stem))
}

fn recipe_validate(traces: &[PathBuf], window: u64, threshold: f64, fmt: Format, out: &mut dyn Write) -> CmdResult {
    let traces = traces.iter().map(|p| load_trace(p)).collect::<Result<Vec<_>, _>>()?;
    let rows = recipe_rows(&traces, window, threshold)?;
    match fmt {
        Format::Json => writeln!(out, "{}", serde_json::to_string(&rows)?)?,
        Format::Csv => {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(out);
            w.write_record(["recipe", "horizon", "window_min", "rate", "target", "k_v", "accepted", "vs_incumbent"])?;
            for r in &rows {
                let horizon = match r.horizon {
                    Horizon::ShortTerm => "short_term",
                    Horizon::LongTerm => "long_term",
                };
                w.write_record([
                    r.recipe.clone(),
                    horizon.to_string(),
                    r.window_min.to_string(),
                    format!("{:.3}", r.rate),
                    r.target.map(|t| t.to_string()).unwrap_or_default(),
                    r.k_v.map(|k| format!("{k:.3}")).unwrap_or_default(),
                    r.accepted.map(|a| a.to_string()).unwrap_or_default(),
                    format!("{:.3}", r.vs_incumbent),
                ])?;
            }
            w.flush()?;
        }
    }
    Ok(EXIT_OK)
}

/// Per-minute production rates of a trace over its whole run.
pub fn minute_rates(trace: &RecipeTrace) -> Result<Vec<f64>, KpiError> {
    Ok(production_rate(&trace.products, 0, trace.end_ms, 60_000)?.values())
}

#[derive(Debug, Serialize)]
struct AnovaReport {
    groups: Vec<String>,
    #[serde(flatten)]
    result: AnovaResult,
    alpha: f64,
    reject_null: bool,
}

fn anova(traces: &[PathBuf], alpha: f64, fmt: Format, out: &mut dyn Write) -> CmdResult {
    let traces = traces.iter().map(|p| load_trace(p)).collect::<Result<Vec<_>, _>>()?;
    let groups = traces.iter().map(minute_rates).collect::<Result<Vec<_>, _>>()?;
    let result = anova_one_way(&groups)?;
    let report = AnovaReport {
        groups: traces.iter().map(|t| t.label.clone()).collect(),
        reject_null: result.rejects_null(alpha),
        result,
        alpha,
    };
    match fmt {
        Format::Json => writeln!(out, "{}", serde_json::to_string(&report)?)?,
        Format::Csv => {
            writeln!(out, "groups,f_stat,p_value,df_between,df_within,alpha,reject_null")?;
            writeln!(
                out,
                "{},{},{:e},{},{},{},{}",
                report.groups.join(" "),
                result.f_stat,
                result.p_value,
                result.df_between,
                result.df_within,
                alpha,
                report.reject_null
            )?;
        }
    }
    Ok(EXIT_OK)
}

fn replay_log(path: &Path, fmt: Format, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let records = read_log(path)?;
    let full = match replay(&records) {
        Ok(r) => r,
        Err(e) => {
            writeln!(err, "{}: {e}", path.display())?;
            return Ok(EXIT_FAILURE);
        }
    };
    let fast = restore(&records)?.ok_or("log has no weights")?;
    let identical = canonical_json(&fast) == canonical_json(&full.weights);
    match fmt {
        Format::Json => writeln!(out, "{}", canonical_json(&full.weights))?,
        Format::Csv => {
            writeln!(out, "rule_id,w_r,w_ra,updates")?;
            for (id, r) in &full.weights.rules {
                writeln!(out, "{id},{},{},{}", r.w_r, r.w_ra, r.history.len())?;
            }
        }
    }
    writeln!(
        err,
        "{} events, {} resolutions, {} checkpoints verified, restore {}",
        records.len(),
        full.resolutions,
        full.checkpoints,
        if identical { "byte-identical" } else { "DIVERGED" }
    )?;
    Ok(if identical { EXIT_OK } else { EXIT_FAILURE })
}

fn open(path: &Path) -> Result<BufReader<File>, String> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}
