//! Extended-FMEA workbook: a directory of CSV files.
//!
//! | file | header |
//! |---|---|
//! | `settings.csv` | `section,name,value,unit` |
//! | `variables.csv` | `name,kind,unit,station` |
//! | `weight_update.csv` | `criterion,formula` |
//! | `system.csv` | `process,subprocess,fm_id,label,effect,rule,defs[,severity,occurrence,detection]` |
//! | `component.csv` | `fm_id,system_fm,cause,recommendation,rule,defs[,severity,occurrence,detection]` |
//! | `profiles.csv` | `name,e_g,e_m,waste,production` |
//!
//! Loading is all-or-nothing: every rule is parsed, alias-expanded and type
//! checked against the names visible to its section, component rows are
//! linked to their system failure mode, and the system rules are checked for
//! mutual exclusivity. [`save_workbook`] writes the canonical form, so
//! loading and saving a canonical workbook reproduces it byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::evidence::{DEFAULT_APPROXIMATION_EXPONENT, MAX_APPROXIMATION_EXPONENT};
use crate::ruledsl::{
    check_rule_set, is_identifier, parse_rule, typecheck, DslError, Expr, Kind, Scope, ThresholdSet,
};

pub const SETTINGS_FILE: &str = "settings.csv";
pub const VARIABLES_FILE: &str = "variables.csv";
pub const WEIGHT_UPDATE_FILE: &str = "weight_update.csv";
pub const SYSTEM_FILE: &str = "system.csv";
pub const COMPONENT_FILE: &str = "component.csv";
pub const PROFILES_FILE: &str = "profiles.csv";

const SETTINGS_HEADER: &[&str] = &["section", "name", "value", "unit"];
const VARIABLES_HEADER: &[&str] = &["name", "kind", "unit", "station"];
const WEIGHT_UPDATE_HEADER: &[&str] = &["criterion", "formula"];
const SYSTEM_HEADER: &[&str] = &["process", "subprocess", "fm_id", "label", "effect", "rule", "defs"];
const COMPONENT_HEADER: &[&str] = &["fm_id", "system_fm", "cause", "recommendation", "rule", "defs"];
const PROFILES_HEADER: &[&str] = &["name", "e_g", "e_m", "waste", "production"];
const RPN_HEADER: &[&str] = &["severity", "occurrence", "detection"];

/// Criteria every workbook must define in `weight_update.csv`.
pub const MEMBER_CRITERIA: [&str; 3] = ["w_EG", "w_EM", "w_KA"];

/// Profile columns visible to weight-update formulas.
pub const PROFILE_VARIABLES: [&str; 4] = ["e_g", "e_m", "waste", "production"];

/// Reserved label for "no rule fired".
pub const EXIT_LABEL: &str = "no_fault";

#[derive(Debug, Error)]
pub enum FmeaError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing workbook file {0}")]
    MissingFile(PathBuf),
    #[error("{file} line {line}: {message}")]
    Csv {
        file: String,
        line: u64,
        message: String,
    },
    #[error("{file}: expected header `{expected}`, found `{found}`")]
    Header {
        file: String,
        expected: String,
        found: String,
    },
    #[error("{file} line {line}, column {column}: {message}")]
    Field {
        file: String,
        line: u64,
        column: String,
        message: String,
    },
    #[error("{file} line {line}, column {column}: {source}")]
    Rule {
        file: String,
        line: u64,
        column: String,
        #[source]
        source: DslError,
    },
    #[error("{file} line {line}: `{name}` is a {section} threshold and is not visible to {file} rules")]
    Scope {
        file: String,
        line: u64,
        name: String,
        section: String,
    },
    #[error("{file} line {line}: component FM `{fm_id}` references unknown system FM `{system_fm}`")]
    Link {
        file: String,
        line: u64,
        fm_id: String,
        system_fm: String,
    },
    #[error("{file} line {line}: duplicate identifier `{id}`")]
    Duplicate { file: String, line: u64, id: String },
    #[error("system rules `{first}` and `{second}` can hold together, e.g. when {}", fmt_assignment(assignment))]
    NotExclusive {
        first: String,
        second: String,
        assignment: BTreeMap<String, bool>,
    },
    #[error("system rules could not be checked for exclusivity: {0}")]
    Exclusivity(DslError),
    #[error("weight_update.csv does not define criterion `{0}`")]
    MissingCriterion(String),
    #[error("unknown failure mode `{0}`")]
    UnknownId(String),
}

fn fmt_assignment(a: &BTreeMap<String, bool>) -> String {
    a.iter()
        .map(|(k, v)| format!("[{k}] = {v}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// One row of `settings.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SettingRow {
    pub section: Section,
    pub name: String,
    pub value: f64,
    pub unit: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Section {
    Team,
    System,
    Component,
    Engine,
}

impl Section {
    pub fn as_str(self) -> &'static str {
        match self {
            Section::Team => "team",
            Section::System => "system",
            Section::Component => "component",
            Section::Engine => "engine",
        }
    }

    fn parse(s: &str) -> Option<Section> {
        Some(match s {
            "team" => Section::Team,
            "system" => Section::System,
            "component" => Section::Component,
            "engine" => Section::Engine,
            _ => return None,
        })
    }
}

/// Engine parameters from the `engine` settings section.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EngineSettings {
    /// `APPROXIMATION_EXPONENT`, the F in k = 1 - 10^-F.
    pub approximation_exponent: u32,
    /// `MEMBER_WEIGHT_DECIMALS`: member weights are rounded to this many
    /// decimals before averaging into the panel weight. Absent means no rounding.
    pub member_weight_decimals: Option<u32>,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self {
            approximation_exponent: DEFAULT_APPROXIMATION_EXPONENT,
            member_weight_decimals: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Settings {
    pub rows: Vec<SettingRow>,
    pub team: ThresholdSet,
    pub system: ThresholdSet,
    pub component: ThresholdSet,
    pub engine: EngineSettings,
}

impl Settings {
    fn section_of(&self, name: &str) -> Option<Section> {
        self.rows.iter().find(|r| r.name == name).map(|r| r.section)
    }
}

/// A process variable the snapshot source must provide.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariableDecl {
    pub name: String,
    pub kind: Kind,
    pub unit: Option<String>,
    pub station: Option<String>,
}

/// A rule cell together with its `defs` aliases.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rule {
    /// The rule as written, possibly referring to aliases.
    #[serde(serialize_with = "ser_display")]
    pub source: Expr,
    /// `name := expr` aliases in definition order.
    #[serde(serialize_with = "ser_defs")]
    pub defs: Vec<(String, Expr)>,
    /// Aliases substituted and names resolved; this is what gets evaluated.
    #[serde(serialize_with = "ser_display")]
    pub expr: Expr,
}

fn ser_display<S: serde::Serializer>(e: &Expr, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(e)
}

fn ser_defs<S: serde::Serializer>(d: &[(String, Expr)], s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(&format_defs(d))
}

impl Rule {
    pub fn defs_text(&self) -> String {
        format_defs(&self.defs)
    }
}

fn format_defs(defs: &[(String, Expr)]) -> String {
    defs.iter()
        .map(|(n, e)| format!("{n} := {e}"))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Classic FMEA risk priority columns; carried along, not used by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Rpn {
    pub severity: Option<u8>,
    pub occurrence: Option<u8>,
    pub detection: Option<u8>,
}

impl Rpn {
    pub fn value(&self) -> Option<u32> {
        Some(self.severity? as u32 * self.occurrence? as u32 * self.detection? as u32)
    }
}

/// (process, subprocess, failure mode, causes, effects, recommendations, rule, weight).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KnowledgeTuple {
    pub process: String,
    pub subprocess: String,
    pub fm_id: String,
    pub label: String,
    pub causes: Vec<String>,
    pub effects: Vec<String>,
    pub recommendations: Vec<String>,
    pub rule: Rule,
    pub weight_ref: String,
    pub rpn: Option<Rpn>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentFm {
    pub tuple: KnowledgeTuple,
    pub system_fm: String,
}

impl ComponentFm {
    pub fn cause(&self) -> &str {
        self.tuple.causes.first().map(String::as_str).unwrap_or("")
    }

    pub fn recommendation(&self) -> &str {
        self.tuple.recommendations.first().map(String::as_str).unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemberProfile {
    pub name: String,
    /// Years of general experience.
    pub e_g: f64,
    /// Years of experience on this machine.
    pub e_m: f64,
    /// Waste ratio.
    pub waste: f64,
    /// Production rate, prod/min.
    pub production: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Criterion {
    pub name: String,
    #[serde(serialize_with = "ser_display")]
    pub formula: Expr,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Workbook {
    pub settings: Settings,
    pub variables: Vec<VariableDecl>,
    pub weight_update: Vec<Criterion>,
    pub system_fms: Vec<KnowledgeTuple>,
    pub component_fms: Vec<ComponentFm>,
    pub profiles: Vec<MemberProfile>,
}

/// A (cause, recommendation) pair offered to the operator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct Pair {
    pub component_fm: String,
    pub cause: String,
    pub recommendation: String,
}

impl Workbook {
    pub fn approximation_exponent(&self) -> u32 {
        self.settings.engine.approximation_exponent
    }

    /// System FM identifiers in workbook order; the frame of discernment.
    pub fn system_labels(&self) -> Vec<String> {
        self.system_fms.iter().map(|t| t.fm_id.clone()).collect()
    }

    pub fn system_fm(&self, id: &str) -> Option<&KnowledgeTuple> {
        self.system_fms.iter().find(|t| t.fm_id == id)
    }

    pub fn component_fms_of<'a>(&'a self, system_fm: &'a str) -> impl Iterator<Item = &'a ComponentFm> + 'a {
        self.component_fms.iter().filter(move |c| c.system_fm == system_fm)
    }

    pub fn criterion(&self, name: &str) -> Option<&Criterion> {
        self.weight_update.iter().find(|c| c.name == name)
    }

    pub fn variable(&self, name: &str) -> Option<&VariableDecl> {
        self.variables.iter().find(|v| v.name == name)
    }

    /// Names and kinds of snapshot variables.
    pub fn variable_scope(&self) -> Vec<(String, Kind)> {
        self.variables.iter().map(|v| (v.name.clone(), v.kind)).collect()
    }
}

/// Ordered (cause, recommendation) pairs of the active component FMs that
/// belong to `system_fm`, in workbook row order.
pub fn causes_and_recommendations(
    workbook: &Workbook,
    system_fm: &str,
    active_component_fms: &[&str],
) -> Result<Vec<Pair>, FmeaError> {
    if workbook.system_fm(system_fm).is_none() {
        return Err(FmeaError::UnknownId(system_fm.to_string()));
    }
    for id in active_component_fms {
        if !workbook.component_fms.iter().any(|c| c.tuple.fm_id == *id) {
            return Err(FmeaError::UnknownId(id.to_string()));
        }
    }
    Ok(workbook
        .component_fms_of(system_fm)
        .filter(|c| active_component_fms.contains(&c.tuple.fm_id.as_str()))
        .map(|c| Pair {
            component_fm: c.tuple.fm_id.clone(),
            cause: c.cause().to_string(),
            recommendation: c.recommendation().to_string(),
        })
        .collect())
}

struct Table {
    file: String,
    has_rpn: bool,
    rows: Vec<(u64, csv::StringRecord)>,
}

fn read_table(dir: &Path, file: &str, header: &[&str], rpn_allowed: bool) -> Result<Table, FmeaError> {
    let path = dir.join(file);
    if !path.is_file() {
        return Err(FmeaError::MissingFile(path));
    }
    let bytes = fs::read(&path).map_err(|source| FmeaError::Io {
        path: path.clone(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(bytes.as_slice());
    let mut records = reader.records();
    let found = match records.next() {
        Some(r) => r.map_err(|e| csv_error(file, &e))?,
        None => {
            return Err(FmeaError::Header {
                file: file.to_string(),
                expected: header.join(","),
                found: String::new(),
            })
        }
    };
    let found_cols: Vec<&str> = found.iter().collect();
    let with_rpn: Vec<&str> = header.iter().chain(RPN_HEADER).copied().collect();
    let has_rpn = if found_cols == header {
        false
    } else if rpn_allowed && found_cols == with_rpn {
        true
    } else {
        return Err(FmeaError::Header {
            file: file.to_string(),
            expected: header.join(","),
            found: found_cols.join(","),
        });
    };
    let mut rows = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| csv_error(file, &e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        rows.push((line, rec));
    }
    Ok(Table {
        file: file.to_string(),
        has_rpn,
        rows,
    })
}

fn csv_error(file: &str, e: &csv::Error) -> FmeaError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    let message = match e.kind() {
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            format!("expected {expected_len} fields, found {len}")
        }
        csv::ErrorKind::Utf8 { .. } => "invalid UTF-8".to_string(),
        _ => e.to_string(),
    };
    FmeaError::Csv {
        file: file.to_string(),
        line,
        message,
    }
}

struct Cell<'a> {
    file: &'a str,
    line: u64,
    column: &'a str,
}

impl Cell<'_> {
    fn field(&self, message: impl Into<String>) -> FmeaError {
        FmeaError::Field {
            file: self.file.to_string(),
            line: self.line,
            column: self.column.to_string(),
            message: message.into(),
        }
    }

    fn rule(&self, source: DslError) -> FmeaError {
        FmeaError::Rule {
            file: self.file.to_string(),
            line: self.line,
            column: self.column.to_string(),
            source,
        }
    }
}

fn text(rec: &csv::StringRecord, idx: usize) -> String {
    rec.get(idx).unwrap_or("").to_string()
}

fn non_empty(cell: &Cell, value: &str) -> Result<String, FmeaError> {
    if value.trim().is_empty() {
        Err(cell.field("must not be empty"))
    } else {
        Ok(value.to_string())
    }
}

fn identifier(cell: &Cell, value: &str) -> Result<String, FmeaError> {
    if is_identifier(value) {
        Ok(value.to_string())
    } else {
        Err(cell.field(format!("`{value}` is not an identifier")))
    }
}

fn number(cell: &Cell, value: &str) -> Result<f64, FmeaError> {
    value
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| cell.field(format!("`{value}` is not a finite number")))
}

fn optional(value: &str) -> Option<String> {
    if value.is_empty() {
        None
    } else {
        Some(value.to_string())
    }
}

fn rpn(table: &Table, line: u64, rec: &csv::StringRecord, first: usize) -> Result<Option<Rpn>, FmeaError> {
    if !table.has_rpn {
        return Ok(None);
    }
    let mut vals = [None; 3];
    for (i, name) in RPN_HEADER.iter().enumerate() {
        let raw = text(rec, first + i);
        if raw.is_empty() {
            continue;
        }
        let cell = Cell {
            file: &table.file,
            line,
            column: name,
        };
        let v: u8 = raw
            .parse()
            .ok()
            .filter(|v| (1..=10).contains(v))
            .ok_or_else(|| cell.field(format!("`{raw}` is not an integer in 1..=10")))?;
        vals[i] = Some(v);
    }
    Ok(Some(Rpn {
        severity: vals[0],
        occurrence: vals[1],
        detection: vals[2],
    }))
}

fn load_settings(dir: &Path) -> Result<Settings, FmeaError> {
    let table = read_table(dir, SETTINGS_FILE, SETTINGS_HEADER, false)?;
    let mut settings = Settings::default();
    let mut seen_engine = Vec::new();
    for (line, rec) in &table.rows {
        let cell = |column| Cell {
            file: &table.file,
            line: *line,
            column,
        };
        let raw_section = text(rec, 0);
        let section = Section::parse(&raw_section).ok_or_else(|| {
            cell("section").field(format!(
                "`{raw_section}` is not one of team, system, component, engine"
            ))
        })?;
        let name = identifier(&cell("name"), &text(rec, 1))?;
        if settings.rows.iter().any(|r| r.name == name) {
            return Err(FmeaError::Duplicate {
                file: table.file.clone(),
                line: *line,
                id: name,
            });
        }
        let value = number(&cell("value"), &text(rec, 2))?;
        let unit = optional(&text(rec, 3));
        match section {
            Section::Team => &mut settings.team,
            Section::System => &mut settings.system,
            Section::Component => &mut settings.component,
            Section::Engine => {
                let as_int = |lo: f64, hi: f64| {
                    if value.fract() == 0.0 && value >= lo && value <= hi {
                        Ok(value as u32)
                    } else {
                        Err(cell("value").field(format!("{name} must be an integer in {lo}..={hi}")))
                    }
                };
                match name.as_str() {
                    "APPROXIMATION_EXPONENT" => {
                        settings.engine.approximation_exponent = as_int(1.0, MAX_APPROXIMATION_EXPONENT as f64)?
                    }
                    "MEMBER_WEIGHT_DECIMALS" => settings.engine.member_weight_decimals = Some(as_int(0.0, 12.0)?),
                    other => return Err(cell("name").field(format!("unknown engine setting `{other}`"))),
                }
                seen_engine.push(name.clone());
                settings.rows.push(SettingRow {
                    section,
                    name,
                    value,
                    unit,
                });
                continue;
            }
        }
        .insert(name.clone(), value, unit.as_deref())
        .map_err(|e| cell("value").rule(e))?;
        settings.rows.push(SettingRow {
            section,
            name,
            value,
            unit,
        });
    }
    Ok(settings)
}

fn load_variables(dir: &Path, settings: &Settings) -> Result<Vec<VariableDecl>, FmeaError> {
    let table = read_table(dir, VARIABLES_FILE, VARIABLES_HEADER, false)?;
    let mut out: Vec<VariableDecl> = Vec::new();
    for (line, rec) in &table.rows {
        let cell = |column| Cell {
            file: &table.file,
            line: *line,
            column,
        };
        let name = identifier(&cell("name"), &text(rec, 0))?;
        if out.iter().any(|v| v.name == name) {
            return Err(FmeaError::Duplicate {
                file: table.file.clone(),
                line: *line,
                id: name,
            });
        }
        if settings.section_of(&name).is_some() {
            return Err(cell("name").field(format!("`{name}` is already a threshold in settings.csv")));
        }
        let kind = match text(rec, 1).as_str() {
            "real" => Kind::Real,
            "bool" => Kind::Bool,
            other => return Err(cell("kind").field(format!("`{other}` is not `real` or `bool`"))),
        };
        out.push(VariableDecl {
            name,
            kind,
            unit: optional(&text(rec, 2)),
            station: optional(&text(rec, 3)),
        });
    }
    Ok(out)
}

/// Parses, alias-expands and type checks one rule cell against `scope`.
fn compile_rule(
    rule_cell: &Cell,
    defs_cell: &Cell,
    rule_text: &str,
    defs_text: &str,
    scope: &Scope,
    settings: &Settings,
    expected: Kind,
) -> Result<Rule, FmeaError> {
    let mut defs: Vec<(String, Expr)> = Vec::new();
    let mut expanded: BTreeMap<String, Expr> = BTreeMap::new();
    for part in defs_text.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, body) = part
            .split_once(":=")
            .ok_or_else(|| defs_cell.field(format!("`{part}` is not of the form `name := expression`")))?;
        let name = name.trim();
        if !is_identifier(name) {
            return Err(defs_cell.field(format!("alias `{name}` is not an identifier")));
        }
        if defs.iter().any(|(n, _)| n == name) {
            return Err(defs_cell.field(format!("alias `{name}` is defined twice")));
        }
        if scope.var_kind(name).is_some() || settings.section_of(name).is_some() {
            return Err(defs_cell.field(format!("alias `{name}` shadows a declared name")));
        }
        let source = parse_rule(body.trim()).map_err(|e| defs_cell.rule(e))?;
        let body = substitute(&source, &expanded);
        check_scope(defs_cell, &body, scope, settings)?;
        let typed = typecheck(&body, scope).map_err(|e| defs_cell.rule(e))?;
        if typed.kind != Kind::Bool {
            return Err(defs_cell.rule(DslError::TypeMismatch(format!(
                "alias `{name}` must be boolean, found {}",
                typed.kind
            ))));
        }
        expanded.insert(name.to_string(), typed.expr);
        defs.push((name.to_string(), source));
    }

    let source = parse_rule(rule_text).map_err(|e| rule_cell.rule(e))?;
    let body = substitute(&source, &expanded);
    check_scope(rule_cell, &body, scope, settings)?;
    let typed = typecheck(&body, scope).map_err(|e| rule_cell.rule(e))?;
    if typed.kind != expected {
        return Err(rule_cell.rule(DslError::TypeMismatch(format!(
            "rule must be {expected}, found {}",
            typed.kind
        ))));
    }
    Ok(Rule {
        source,
        defs,
        expr: typed.expr,
    })
}

fn substitute(expr: &Expr, aliases: &BTreeMap<String, Expr>) -> Expr {
    let out: Result<Expr, std::convert::Infallible> = expr.rewrite(&mut |node| {
        Ok(match node {
            Expr::Ref(id) => aliases.get(&id.name).cloned(),
            _ => None,
        })
    });
    match out {
        Ok(e) => e,
        Err(never) => match never {},
    }
}

/// Reports thresholds from another settings section with a dedicated error
/// rather than a bare unresolved name.
fn check_scope(cell: &Cell, expr: &Expr, scope: &Scope, settings: &Settings) -> Result<(), FmeaError> {
    for name in expr.referenced_names() {
        if scope.var_kind(&name).is_some() || scope.has_threshold(&name) {
            continue;
        }
        if let Some(section) = settings.section_of(&name) {
            return Err(FmeaError::Scope {
                file: cell.file.to_string(),
                line: cell.line,
                name,
                section: section.as_str().to_string(),
            });
        }
    }
    Ok(())
}

fn load_weight_update(dir: &Path, settings: &Settings) -> Result<Vec<Criterion>, FmeaError> {
    let table = read_table(dir, WEIGHT_UPDATE_FILE, WEIGHT_UPDATE_HEADER, false)?;
    let scope = Scope::new(
        PROFILE_VARIABLES.iter().map(|v| (*v, Kind::Real)),
        settings.team.names(),
    );
    let mut out: Vec<Criterion> = Vec::new();
    for (line, rec) in &table.rows {
        let cell = |column| Cell {
            file: &table.file,
            line: *line,
            column,
        };
        let name = identifier(&cell("criterion"), &text(rec, 0))?;
        if out.iter().any(|c| c.name == name) {
            return Err(FmeaError::Duplicate {
                file: table.file.clone(),
                line: *line,
                id: name,
            });
        }
        let rule = compile_rule(
            &cell("formula"),
            &cell("formula"),
            &text(rec, 1),
            "",
            &scope,
            settings,
            Kind::Real,
        )?;
        out.push(Criterion {
            name,
            formula: rule.expr,
        });
    }
    for required in MEMBER_CRITERIA {
        if !out.iter().any(|c| c.name == required) {
            return Err(FmeaError::MissingCriterion(required.to_string()));
        }
    }
    Ok(out)
}

fn load_system(
    dir: &Path,
    settings: &Settings,
    variables: &[VariableDecl],
) -> Result<(Vec<KnowledgeTuple>, bool), FmeaError> {
    let table = read_table(dir, SYSTEM_FILE, SYSTEM_HEADER, true)?;
    let scope = Scope::new(variables.iter().map(|v| (v.name.clone(), v.kind)), settings.system.names());
    let mut out: Vec<KnowledgeTuple> = Vec::new();
    for (line, rec) in &table.rows {
        let cell = |column| Cell {
            file: &table.file,
            line: *line,
            column,
        };
        let fm_id = identifier(&cell("fm_id"), &text(rec, 2))?;
        if fm_id == EXIT_LABEL || out.iter().any(|t| t.fm_id == fm_id) {
            return Err(FmeaError::Duplicate {
                file: table.file.clone(),
                line: *line,
                id: fm_id,
            });
        }
        let rule = compile_rule(
            &cell("rule"),
            &cell("defs"),
            &text(rec, 5),
            &text(rec, 6),
            &scope,
            settings,
            Kind::Bool,
        )?;
        let effect = text(rec, 4);
        out.push(KnowledgeTuple {
            process: non_empty(&cell("process"), &text(rec, 0))?,
            subprocess: text(rec, 1),
            weight_ref: format!("w_R.{fm_id}"),
            label: non_empty(&cell("label"), &text(rec, 3))?,
            fm_id,
            causes: Vec::new(),
            effects: if effect.is_empty() { Vec::new() } else { vec![effect] },
            recommendations: Vec::new(),
            rule,
            rpn: rpn(&table, *line, rec, SYSTEM_HEADER.len())?,
        });
    }
    if out.is_empty() {
        return Err(FmeaError::Csv {
            file: table.file,
            line: 1,
            message: "no system failure modes".into(),
        });
    }
    Ok((out, table.has_rpn))
}

fn load_component(
    dir: &Path,
    settings: &Settings,
    variables: &[VariableDecl],
    system: &mut [KnowledgeTuple],
) -> Result<Vec<ComponentFm>, FmeaError> {
    let table = read_table(dir, COMPONENT_FILE, COMPONENT_HEADER, true)?;
    let scope = Scope::new(
        variables.iter().map(|v| (v.name.clone(), v.kind)),
        settings.component.names(),
    );
    let mut out: Vec<ComponentFm> = Vec::new();
    for (line, rec) in &table.rows {
        let cell = |column| Cell {
            file: &table.file,
            line: *line,
            column,
        };
        let fm_id = identifier(&cell("fm_id"), &text(rec, 0))?;
        if out.iter().any(|c| c.tuple.fm_id == fm_id) {
            return Err(FmeaError::Duplicate {
                file: table.file.clone(),
                line: *line,
                id: fm_id,
            });
        }
        let system_fm = text(rec, 1);
        let parent = system
            .iter_mut()
            .find(|t| t.fm_id == system_fm)
            .ok_or_else(|| FmeaError::Link {
                file: table.file.clone(),
                line: *line,
                fm_id: fm_id.clone(),
                system_fm: system_fm.clone(),
            })?;
        let cause = non_empty(&cell("cause"), &text(rec, 2))?;
        let recommendation = non_empty(&cell("recommendation"), &text(rec, 3))?;
        let rule = compile_rule(
            &cell("rule"),
            &cell("defs"),
            &text(rec, 4),
            &text(rec, 5),
            &scope,
            settings,
            Kind::Bool,
        )?;
        parent.causes.push(cause.clone());
        parent.recommendations.push(recommendation.clone());
        out.push(ComponentFm {
            tuple: KnowledgeTuple {
                process: parent.process.clone(),
                subprocess: parent.subprocess.clone(),
                weight_ref: format!("w_R.{fm_id}"),
                label: fm_id.clone(),
                fm_id,
                causes: vec![cause],
                effects: parent.effects.clone(),
                recommendations: vec![recommendation],
                rule,
                rpn: rpn(&table, *line, rec, COMPONENT_HEADER.len())?,
            },
            system_fm,
        });
    }
    Ok(out)
}

fn load_profiles(dir: &Path) -> Result<Vec<MemberProfile>, FmeaError> {
    let table = read_table(dir, PROFILES_FILE, PROFILES_HEADER, false)?;
    let mut out: Vec<MemberProfile> = Vec::new();
    for (line, rec) in &table.rows {
        let cell = |column| Cell {
            file: &table.file,
            line: *line,
            column,
        };
        let name = non_empty(&cell("name"), &text(rec, 0))?;
        if out.iter().any(|p| p.name == name) {
            return Err(FmeaError::Duplicate {
                file: table.file.clone(),
                line: *line,
                id: name,
            });
        }
        let nonneg = |column, raw: String| {
            let c = cell(column);
            let v = number(&c, &raw)?;
            if v < 0.0 {
                Err(c.field("must be non-negative"))
            } else {
                Ok(v)
            }
        };
        let e_g = nonneg("e_g", text(rec, 1))?;
        let e_m = nonneg("e_m", text(rec, 2))?;
        let waste = nonneg("waste", text(rec, 3))?;
        if waste > 1.0 {
            return Err(cell("waste").field("must be a ratio in [0, 1]"));
        }
        let production = nonneg("production", text(rec, 4))?;
        out.push(MemberProfile {
            name,
            e_g,
            e_m,
            waste,
            production,
        });
    }
    if out.is_empty() {
        return Err(FmeaError::Csv {
            file: table.file,
            line: 1,
            message: "the expert panel needs at least one member".into(),
        });
    }
    Ok(out)
}

/// Loads and validates a workbook directory.
pub fn load_workbook(dir: impl AsRef<Path>) -> Result<Workbook, FmeaError> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(FmeaError::MissingFile(dir.to_path_buf()));
    }
    let settings = load_settings(dir)?;
    let variables = load_variables(dir, &settings)?;
    let weight_update = load_weight_update(dir, &settings)?;
    let (mut system_fms, _) = load_system(dir, &settings, &variables)?;
    let component_fms = load_component(dir, &settings, &variables, &mut system_fms)?;
    let profiles = load_profiles(dir)?;

    let rules: Vec<Expr> = system_fms.iter().map(|t| t.rule.expr.clone()).collect();
    let report = check_rule_set(&rules, &settings.system).map_err(FmeaError::Exclusivity)?;
    if let Some(w) = report.report.witness {
        return Err(FmeaError::NotExclusive {
            first: system_fms[w.first].fm_id.clone(),
            second: system_fms[w.second].fm_id.clone(),
            assignment: w.assignment,
        });
    }

    Ok(Workbook {
        settings,
        variables,
        weight_update,
        system_fms,
        component_fms,
        profiles,
    })
}

fn fmt_num(x: f64) -> String {
    format!("{x}")
}

fn fmt_opt_u8(v: Option<u8>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn write_csv(dir: &Path, file: &str, header: Vec<&str>, rows: Vec<Vec<String>>) -> Result<(), FmeaError> {
    let path = dir.join(file);
    let io = |source: std::io::Error| FmeaError::Io {
        path: path.clone(),
        source,
    };
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let to_io = |e: csv::Error| std::io::Error::other(e.to_string());
    w.write_record(&header).map_err(|e| io(to_io(e)))?;
    for row in rows {
        w.write_record(&row).map_err(|e| io(to_io(e)))?;
    }
    let bytes = w.into_inner().map_err(|e| io(std::io::Error::other(e.to_string())))?;
    fs::write(&path, bytes).map_err(io)
}

fn rpn_cells(rpn: &Option<Rpn>) -> Vec<String> {
    let r = rpn.unwrap_or(Rpn {
        severity: None,
        occurrence: None,
        detection: None,
    });
    vec![fmt_opt_u8(r.severity), fmt_opt_u8(r.occurrence), fmt_opt_u8(r.detection)]
}

/// Writes the canonical CSV form of `workbook` into `dir` (created if needed).
pub fn save_workbook(workbook: &Workbook, dir: impl AsRef<Path>) -> Result<(), FmeaError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| FmeaError::Io {
        path: dir.to_path_buf(),
        source,
    })?;

    let rows = workbook
        .settings
        .rows
        .iter()
        .map(|r| {
            vec![
                r.section.as_str().to_string(),
                r.name.clone(),
                fmt_num(r.value),
                r.unit.clone().unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(dir, SETTINGS_FILE, SETTINGS_HEADER.to_vec(), rows)?;

    let rows = workbook
        .variables
        .iter()
        .map(|v| {
            vec![
                v.name.clone(),
                match v.kind {
                    Kind::Real => "real".into(),
                    Kind::Bool => "bool".into(),
                },
                v.unit.clone().unwrap_or_default(),
                v.station.clone().unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(dir, VARIABLES_FILE, VARIABLES_HEADER.to_vec(), rows)?;

    let rows = workbook
        .weight_update
        .iter()
        .map(|c| vec![c.name.clone(), c.formula.to_string()])
        .collect();
    write_csv(dir, WEIGHT_UPDATE_FILE, WEIGHT_UPDATE_HEADER.to_vec(), rows)?;

    let system_rpn = workbook.system_fms.iter().any(|t| t.rpn.is_some());
    let mut header = SYSTEM_HEADER.to_vec();
    if system_rpn {
        header.extend(RPN_HEADER);
    }
    let rows = workbook
        .system_fms
        .iter()
        .map(|t| {
            let mut row = vec![
                t.process.clone(),
                t.subprocess.clone(),
                t.fm_id.clone(),
                t.label.clone(),
                t.effects.join("; "),
                t.rule.source.to_string(),
                t.rule.defs_text(),
            ];
            if system_rpn {
                row.extend(rpn_cells(&t.rpn));
            }
            row
        })
        .collect();
    write_csv(dir, SYSTEM_FILE, header, rows)?;

    let component_rpn = workbook.component_fms.iter().any(|c| c.tuple.rpn.is_some());
    let mut header = COMPONENT_HEADER.to_vec();
    if component_rpn {
        header.extend(RPN_HEADER);
    }
    let rows = workbook
        .component_fms
        .iter()
        .map(|c| {
            let mut row = vec![
                c.tuple.fm_id.clone(),
                c.system_fm.clone(),
                c.cause().to_string(),
                c.recommendation().to_string(),
                c.tuple.rule.source.to_string(),
                c.tuple.rule.defs_text(),
            ];
            if component_rpn {
                row.extend(rpn_cells(&c.tuple.rpn));
            }
            row
        })
        .collect();
    write_csv(dir, COMPONENT_FILE, header, rows)?;

    let rows = workbook
        .profiles
        .iter()
        .map(|p| {
            vec![
                p.name.clone(),
                fmt_num(p.e_g),
                fmt_num(p.e_m),
                fmt_num(p.waste),
                fmt_num(p.production),
            ]
        })
        .collect();
    write_csv(dir, PROFILES_FILE, PROFILES_HEADER.to_vec(), rows)
}
