//! Versioned, bit-exact taint-log format (writer and parser) plus the
//! app-metadata sidecar that stands in for package analysis.
//!
//! # Log grammar
//!
//! A log is UTF-8 text, one record per line, every line terminated by `\n`.
//! The first line is the header:
//!
//! ```text
//! ICCLOG <TAB> 1 <TAB> <timestamp>
//! ```
//!
//! Every following line is `seq <TAB> pid <TAB> KIND <TAB> field...` with a
//! kind-specific field list. Inside a field, lists nest with fixed
//! separators: `,` between list elements, `;` between outer entries, `=`
//! between an extras key and its labels, `@` between the parts of a label,
//! and `/` between a package and a component name. All of those characters,
//! plus tab, newline, carriage return and backslash, are escaped with a
//! leading backslash when they occur inside an atom, so splitting on the
//! raw separator is always unambiguous. A label is written
//! `0xTTTTTTTT@method@package/component`.
//!
//! Unknown record kinds are skipped (counted as warnings) for forward
//! compatibility; malformed records and a missing final newline are
//! positioned errors.
//!
//! # Metadata sidecar
//!
//! TOML with a magic/version header:
//!
//! ```toml
//! format = "ICCMETA"
//! version = 1
//!
//! [[apps]]
//! package = "com.victim"
//! process_id = 1
//! permissions = ["ACCESS_FINE_LOCATION"]
//! # components = [...]
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::catalog::{RESOLVER_ACTIVITY, SYSTEM_PACKAGE, SYSTEM_PID};
use crate::model::{
    AppSpec, ComponentId, ComponentKind, ComponentSpec, LabelSet, TagId, TaintLabel,
};
use crate::scenario::Scenario;

pub const LOG_MAGIC: &str = "ICCLOG";
pub const LOG_VERSION: u32 = 1;
pub const META_MAGIC: &str = "ICCMETA";
pub const META_VERSION: u32 = 1;

/// Intent attributes as they appear in a `SEND_INTENT` record: everything
/// the analyzer needs, with extras reduced to key → label set (payload
/// values never reach the log).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntentSummary {
    pub intent_id: u64,
    pub dispatch: ComponentKind,
    pub explicit_target: Option<ComponentId>,
    pub action: Option<String>,
    pub categories: BTreeSet<String>,
    pub mime_type: Option<String>,
    pub scheme: Option<String>,
    pub extras: BTreeMap<String, LabelSet>,
}

/// Kind-specific payload of one log record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventBody {
    Launch {
        component: ComponentId,
    },
    SetTaint {
        component: ComponentId,
        method: String,
        tag: TagId,
    },
    CheckIntent {
        component: ComponentId,
        key: String,
        labels: LabelSet,
    },
    SendIntent {
        component: ComponentId,
        intent: IntentSummary,
    },
    Candidates {
        intent_id: u64,
        components: Vec<ComponentId>,
    },
    Deliver {
        intent_id: u64,
        component: ComponentId,
    },
    SinkCall {
        component: ComponentId,
        method: String,
        args: Vec<LabelSet>,
    },
    StoreShared {
        component: ComponentId,
        store: String,
        key: String,
        labels: LabelSet,
    },
    LoadShared {
        component: ComponentId,
        store: String,
        key: String,
        labels: LabelSet,
    },
    StoreAppObj {
        component: ComponentId,
        field: String,
        labels: LabelSet,
    },
    LoadAppObj {
        component: ComponentId,
        field: String,
        labels: LabelSet,
    },
    StartComponent {
        component: ComponentId,
        target: ComponentId,
    },
    Diag {
        component: Option<ComponentId>,
        message: String,
    },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::Launch { .. } => "LAUNCH",
            EventBody::SetTaint { .. } => "SET_TAINT",
            EventBody::CheckIntent { .. } => "CHECK_INTENT",
            EventBody::SendIntent { .. } => "SEND_INTENT",
            EventBody::Candidates { .. } => "CANDIDATES",
            EventBody::Deliver { .. } => "DELIVER",
            EventBody::SinkCall { .. } => "SINK_CALL",
            EventBody::StoreShared { .. } => "STORE_SHARED",
            EventBody::LoadShared { .. } => "LOAD_SHARED",
            EventBody::StoreAppObj { .. } => "STORE_APPOBJ",
            EventBody::LoadAppObj { .. } => "LOAD_APPOBJ",
            EventBody::StartComponent { .. } => "START_COMPONENT",
            EventBody::Diag { .. } => "DIAG",
        }
    }
}

/// One record of the event stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEvent {
    pub seq: u64,
    pub pid: u32,
    pub body: EventBody,
}

/// The versioned event stream the simulator emits. The timestamp is fixed
/// to 0 in test mode so logs are byte-identical across runs.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TaintLog {
    pub timestamp: u64,
    pub events: Vec<LogEvent>,
}

/// Log reading failures, positioned by line where possible.
#[derive(Debug, thiserror::Error)]
pub enum LogParseError {
    #[error("line 1: bad log magic")]
    BadMagic,
    #[error("line 1: unsupported log version {0}")]
    UnsupportedVersion(u32),
    #[error("line {line}: corrupt record: {message}")]
    Corrupt { line: usize, message: String },
    #[error("line {line}: truncated final line")]
    Truncated { line: usize },
    #[error("empty input, expected a header line")]
    Empty,
}

fn corrupt(line: usize, message: impl Into<String>) -> LogParseError {
    LogParseError::Corrupt {
        line,
        message: message.into(),
    }
}

const RESERVED: &[char] = &['\\', '\t', '\n', '\r', ',', ';', ':', '@', '|', '/', '='];

fn escape_atom(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c if RESERVED.contains(&c) => {
                out.push('\\');
                out.push(c);
            }
            c => out.push(c),
        }
    }
    out
}

fn unescape_atom(s: &str, line: usize) -> Result<String, LogParseError> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(c) if RESERVED.contains(&c) => out.push(c),
            Some(c) => return Err(corrupt(line, format!("bad escape '\\{c}'"))),
            None => return Err(corrupt(line, "dangling backslash")),
        }
    }
    Ok(out)
}

/// Split on a separator, honoring backslash escapes.
fn split_unescaped(s: &str, sep: char) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut start = 0;
    let mut escaped = false;
    for (i, c) in s.char_indices() {
        if escaped {
            escaped = false;
        } else if c == '\\' {
            escaped = true;
        } else if c == sep {
            parts.push(&s[start..i]);
            start = i + c.len_utf8();
        }
    }
    parts.push(&s[start..]);
    parts
}

fn write_component(out: &mut String, id: &ComponentId) {
    out.push_str(&escape_atom(&id.package));
    out.push('/');
    out.push_str(&escape_atom(&id.name));
}

fn component_field(id: &ComponentId) -> String {
    let mut s = String::new();
    write_component(&mut s, id);
    s
}

fn parse_component(field: &str, line: usize) -> Result<ComponentId, LogParseError> {
    let parts = split_unescaped(field, '/');
    match parts.as_slice() {
        [pkg, name] if !pkg.is_empty() && !name.is_empty() => Ok(ComponentId::new(
            unescape_atom(pkg, line)?,
            unescape_atom(name, line)?,
        )),
        _ => Err(corrupt(line, format!("bad component '{field}'"))),
    }
}

fn label_field(label: &TaintLabel) -> String {
    format!(
        "{}@{}@{}",
        label.tag,
        escape_atom(&label.source_method),
        component_field(&label.origin_component)
    )
}

fn parse_label(field: &str, line: usize) -> Result<TaintLabel, LogParseError> {
    let parts = split_unescaped(field, '@');
    match parts.as_slice() {
        [tag, method, origin] => {
            let raw = tag
                .strip_prefix("0x")
                .and_then(|h| u32::from_str_radix(h, 16).ok())
                .ok_or_else(|| corrupt(line, format!("bad tag '{tag}'")))?;
            Ok(TaintLabel::new(
                TagId(raw),
                unescape_atom(method, line)?,
                parse_component(origin, line)?,
            ))
        }
        _ => Err(corrupt(line, format!("bad label '{field}'"))),
    }
}

fn labelset_field(labels: &LabelSet) -> String {
    labels
        .iter()
        .map(label_field)
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_labelset(field: &str, line: usize) -> Result<LabelSet, LogParseError> {
    if field.is_empty() {
        return Ok(LabelSet::empty());
    }
    split_unescaped(field, ',')
        .into_iter()
        .map(|part| parse_label(part, line))
        .collect::<Result<LabelSet, _>>()
}

fn optional_component_field(target: &Option<ComponentId>) -> String {
    target.as_ref().map(component_field).unwrap_or_default()
}

fn optional_atom(value: &Option<String>) -> String {
    value.as_deref().map(escape_atom).unwrap_or_default()
}

fn parse_optional_atom(field: &str, line: usize) -> Result<Option<String>, LogParseError> {
    if field.is_empty() {
        Ok(None)
    } else {
        Ok(Some(unescape_atom(field, line)?))
    }
}

fn set_field(set: &BTreeSet<String>) -> String {
    set.iter()
        .map(|s| escape_atom(s))
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_set(field: &str, line: usize) -> Result<BTreeSet<String>, LogParseError> {
    if field.is_empty() {
        return Ok(BTreeSet::new());
    }
    split_unescaped(field, ',')
        .into_iter()
        .map(|part| unescape_atom(part, line))
        .collect()
}

fn extras_field(extras: &BTreeMap<String, LabelSet>) -> String {
    extras
        .iter()
        .map(|(key, labels)| format!("{}={}", escape_atom(key), labelset_field(labels)))
        .collect::<Vec<_>>()
        .join(";")
}

fn parse_extras(field: &str, line: usize) -> Result<BTreeMap<String, LabelSet>, LogParseError> {
    let mut extras = BTreeMap::new();
    if field.is_empty() {
        return Ok(extras);
    }
    for entry in split_unescaped(field, ';') {
        let parts = split_unescaped(entry, '=');
        match parts.as_slice() {
            [key, labels] => {
                extras.insert(unescape_atom(key, line)?, parse_labelset(labels, line)?);
            }
            _ => return Err(corrupt(line, format!("bad extras entry '{entry}'"))),
        }
    }
    Ok(extras)
}

fn dispatch_field(kind: ComponentKind) -> &'static str {
    match kind {
        ComponentKind::Activity => "A",
        ComponentKind::Service => "S",
        ComponentKind::BroadcastReceiver => "B",
    }
}

fn parse_dispatch(field: &str, line: usize) -> Result<ComponentKind, LogParseError> {
    match field {
        "A" => Ok(ComponentKind::Activity),
        "S" => Ok(ComponentKind::Service),
        "B" => Ok(ComponentKind::BroadcastReceiver),
        other => Err(corrupt(line, format!("bad dispatch '{other}'"))),
    }
}

fn write_event_line(out: &mut String, event: &LogEvent) {
    let _ = write!(out, "{}\t{}\t{}", event.seq, event.pid, event.body.kind());
    match &event.body {
        EventBody::Launch { component } => {
            let _ = write!(out, "\t{}", component_field(component));
        }
        EventBody::SetTaint {
            component,
            method,
            tag,
        } => {
            let _ = write!(
                out,
                "\t{}\t{}\t{}",
                component_field(component),
                escape_atom(method),
                tag
            );
        }
        EventBody::CheckIntent {
            component,
            key,
            labels,
        } => {
            let _ = write!(
                out,
                "\t{}\t{}\t{}",
                component_field(component),
                escape_atom(key),
                labelset_field(labels)
            );
        }
        EventBody::SendIntent { component, intent } => {
            let _ = write!(
                out,
                "\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                component_field(component),
                intent.intent_id,
                dispatch_field(intent.dispatch),
                optional_component_field(&intent.explicit_target),
                optional_atom(&intent.action),
                set_field(&intent.categories),
                optional_atom(&intent.mime_type),
                optional_atom(&intent.scheme),
                extras_field(&intent.extras)
            );
        }
        EventBody::Candidates {
            intent_id,
            components,
        } => {
            let list = components
                .iter()
                .map(component_field)
                .collect::<Vec<_>>()
                .join(",");
            let _ = write!(out, "\t{intent_id}\t{list}");
        }
        EventBody::Deliver {
            intent_id,
            component,
        } => {
            let _ = write!(out, "\t{intent_id}\t{}", component_field(component));
        }
        EventBody::SinkCall {
            component,
            method,
            args,
        } => {
            let rendered = args
                .iter()
                .map(|labels| {
                    if labels.is_empty() {
                        "-".to_string()
                    } else {
                        labelset_field(labels)
                    }
                })
                .collect::<Vec<_>>()
                .join(";");
            let _ = write!(
                out,
                "\t{}\t{}\t{}",
                component_field(component),
                escape_atom(method),
                rendered
            );
        }
        EventBody::StoreShared {
            component,
            store,
            key,
            labels,
        }
        | EventBody::LoadShared {
            component,
            store,
            key,
            labels,
        } => {
            let _ = write!(
                out,
                "\t{}\t{}\t{}\t{}",
                component_field(component),
                escape_atom(store),
                escape_atom(key),
                labelset_field(labels)
            );
        }
        EventBody::StoreAppObj {
            component,
            field,
            labels,
        }
        | EventBody::LoadAppObj {
            component,
            field,
            labels,
        } => {
            let _ = write!(
                out,
                "\t{}\t{}\t{}",
                component_field(component),
                escape_atom(field),
                labelset_field(labels)
            );
        }
        EventBody::StartComponent { component, target } => {
            let _ = write!(
                out,
                "\t{}\t{}",
                component_field(component),
                component_field(target)
            );
        }
        EventBody::Diag { component, message } => {
            let _ = write!(
                out,
                "\t{}\t{}",
                optional_component_field(component),
                escape_atom(message)
            );
        }
    }
    out.push('\n');
}

/// Serialize a whole log. The output is stable: identical logs produce
/// identical bytes.
pub fn write_log(log: &TaintLog) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{LOG_MAGIC}\t{LOG_VERSION}\t{}", log.timestamp);
    for event in &log.events {
        write_event_line(&mut out, event);
    }
    out
}

/// Result of parsing a log: the events that survived the pid filter plus a
/// count of unknown record kinds that were skipped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedLog {
    pub timestamp: u64,
    pub events: Vec<LogEvent>,
    pub skipped_unknown: u32,
}

fn parse_body(
    kind: &str,
    fields: &[&str],
    line: usize,
) -> Result<Option<EventBody>, LogParseError> {
    let expect = |n: usize| -> Result<(), LogParseError> {
        if fields.len() != n {
            Err(corrupt(
                line,
                format!("{kind} expects {n} fields, got {}", fields.len()),
            ))
        } else {
            Ok(())
        }
    };
    let body = match kind {
        "LAUNCH" => {
            expect(1)?;
            EventBody::Launch {
                component: parse_component(fields[0], line)?,
            }
        }
        "SET_TAINT" => {
            expect(3)?;
            let raw = fields[2]
                .strip_prefix("0x")
                .and_then(|h| u32::from_str_radix(h, 16).ok())
                .ok_or_else(|| corrupt(line, format!("bad tag '{}'", fields[2])))?;
            EventBody::SetTaint {
                component: parse_component(fields[0], line)?,
                method: unescape_atom(fields[1], line)?,
                tag: TagId(raw),
            }
        }
        "CHECK_INTENT" => {
            expect(3)?;
            EventBody::CheckIntent {
                component: parse_component(fields[0], line)?,
                key: unescape_atom(fields[1], line)?,
                labels: parse_labelset(fields[2], line)?,
            }
        }
        "SEND_INTENT" => {
            expect(9)?;
            let explicit_target = if fields[3].is_empty() {
                None
            } else {
                Some(parse_component(fields[3], line)?)
            };
            EventBody::SendIntent {
                component: parse_component(fields[0], line)?,
                intent: IntentSummary {
                    intent_id: fields[1]
                        .parse()
                        .map_err(|_| corrupt(line, "bad intent id"))?,
                    dispatch: parse_dispatch(fields[2], line)?,
                    explicit_target,
                    action: parse_optional_atom(fields[4], line)?,
                    categories: parse_set(fields[5], line)?,
                    mime_type: parse_optional_atom(fields[6], line)?,
                    scheme: parse_optional_atom(fields[7], line)?,
                    extras: parse_extras(fields[8], line)?,
                },
            }
        }
        "CANDIDATES" => {
            expect(2)?;
            let components = if fields[1].is_empty() {
                Vec::new()
            } else {
                split_unescaped(fields[1], ',')
                    .into_iter()
                    .map(|part| parse_component(part, line))
                    .collect::<Result<Vec<_>, _>>()?
            };
            EventBody::Candidates {
                intent_id: fields[0]
                    .parse()
                    .map_err(|_| corrupt(line, "bad intent id"))?,
                components,
            }
        }
        "DELIVER" => {
            expect(2)?;
            EventBody::Deliver {
                intent_id: fields[0]
                    .parse()
                    .map_err(|_| corrupt(line, "bad intent id"))?,
                component: parse_component(fields[1], line)?,
            }
        }
        "SINK_CALL" => {
            expect(3)?;
            let args = if fields[2].is_empty() {
                Vec::new()
            } else {
                split_unescaped(fields[2], ';')
                    .into_iter()
                    .map(|part| {
                        if part == "-" {
                            Ok(LabelSet::empty())
                        } else {
                            parse_labelset(part, line)
                        }
                    })
                    .collect::<Result<Vec<_>, _>>()?
            };
            EventBody::SinkCall {
                component: parse_component(fields[0], line)?,
                method: unescape_atom(fields[1], line)?,
                args,
            }
        }
        "STORE_SHARED" | "LOAD_SHARED" => {
            expect(4)?;
            let component = parse_component(fields[0], line)?;
            let store = unescape_atom(fields[1], line)?;
            let key = unescape_atom(fields[2], line)?;
            let labels = parse_labelset(fields[3], line)?;
            if kind == "STORE_SHARED" {
                EventBody::StoreShared {
                    component,
                    store,
                    key,
                    labels,
                }
            } else {
                EventBody::LoadShared {
                    component,
                    store,
                    key,
                    labels,
                }
            }
        }
        "STORE_APPOBJ" | "LOAD_APPOBJ" => {
            expect(3)?;
            let component = parse_component(fields[0], line)?;
            let field = unescape_atom(fields[1], line)?;
            let labels = parse_labelset(fields[2], line)?;
            if kind == "STORE_APPOBJ" {
                EventBody::StoreAppObj {
                    component,
                    field,
                    labels,
                }
            } else {
                EventBody::LoadAppObj {
                    component,
                    field,
                    labels,
                }
            }
        }
        "START_COMPONENT" => {
            expect(2)?;
            EventBody::StartComponent {
                component: parse_component(fields[0], line)?,
                target: parse_component(fields[1], line)?,
            }
        }
        "DIAG" => {
            expect(2)?;
            let component = if fields[0].is_empty() {
                None
            } else {
                Some(parse_component(fields[0], line)?)
            };
            EventBody::Diag {
                component,
                message: unescape_atom(fields[1], line)?,
            }
        }
        _ => return Ok(None),
    };
    Ok(Some(body))
}

/// Parse a log, keeping only events whose pid is in `focus` (all events
/// when `focus` is `None`). Single pass, order preserved.
pub fn parse_log(text: &str, focus: Option<&BTreeSet<u32>>) -> Result<ParsedLog, LogParseError> {
    let mut lines = text.split_inclusive('\n');
    let header = lines.next().ok_or(LogParseError::Empty)?;
    let header = header
        .strip_suffix('\n')
        .ok_or(LogParseError::Truncated { line: 1 })?;
    let header_fields: Vec<&str> = header.split('\t').collect();
    match header_fields.as_slice() {
        [magic, version, timestamp] => {
            if *magic != LOG_MAGIC {
                return Err(LogParseError::BadMagic);
            }
            let version: u32 = version
                .parse()
                .map_err(|_| corrupt(1, "bad version field"))?;
            if version != LOG_VERSION {
                return Err(LogParseError::UnsupportedVersion(version));
            }
            let timestamp: u64 = timestamp
                .parse()
                .map_err(|_| corrupt(1, "bad timestamp field"))?;
            let mut events = Vec::new();
            let mut skipped_unknown = 0u32;
            for (idx, raw) in lines.enumerate() {
                let line_no = idx + 2;
                let record = raw
                    .strip_suffix('\n')
                    .ok_or(LogParseError::Truncated { line: line_no })?;
                if record.is_empty() {
                    continue;
                }
                let fields: Vec<&str> = record.split('\t').collect();
                if fields.len() < 3 {
                    return Err(corrupt(line_no, "record needs seq, pid and kind"));
                }
                let seq: u64 = fields[0]
                    .parse()
                    .map_err(|_| corrupt(line_no, format!("bad seq '{}'", fields[0])))?;
                let pid: u32 = fields[1]
                    .parse()
                    .map_err(|_| corrupt(line_no, format!("bad pid '{}'", fields[1])))?;
                match parse_body(fields[2], &fields[3..], line_no)? {
                    Some(body) => {
                        if focus.is_none_or(|f| f.contains(&pid)) {
                            events.push(LogEvent { seq, pid, body });
                        }
                    }
                    None => skipped_unknown += 1,
                }
            }
            Ok(ParsedLog {
                timestamp,
                events,
                skipped_unknown,
            })
        }
        _ => Err(LogParseError::BadMagic),
    }
}

/// App attributes the analyzer would otherwise extract from package files:
/// package names, process ids, permissions and component declarations.
/// Emitted by the simulator alongside each log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppMetadata {
    pub format: String,
    pub version: u32,
    pub apps: Vec<AppSpec>,
}

/// Metadata file reading failures.
#[derive(Debug, thiserror::Error)]
pub enum MetaError {
    #[error("metadata parse error: {0}")]
    Parse(String),
    #[error("bad metadata magic '{0}'")]
    BadMagic(String),
    #[error("unsupported metadata version {0}")]
    UnsupportedVersion(u32),
}

impl AppMetadata {
    /// Derive the sidecar from a scenario's world description. The synthetic
    /// system app (which hosts the intent resolver) is always included so
    /// resolver hops survive pid-focused filtering.
    pub fn from_scenario(scenario: &Scenario) -> Self {
        let mut apps = vec![system_app()];
        apps.extend(scenario.apps.iter().cloned());
        Self {
            format: META_MAGIC.to_string(),
            version: META_VERSION,
            apps,
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("metadata serializes")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, MetaError> {
        let meta: AppMetadata =
            toml::from_str(text).map_err(|e| MetaError::Parse(e.to_string()))?;
        if meta.format != META_MAGIC {
            return Err(MetaError::BadMagic(meta.format));
        }
        if meta.version != META_VERSION {
            return Err(MetaError::UnsupportedVersion(meta.version));
        }
        Ok(meta)
    }

    pub fn app_by_pid(&self, pid: u32) -> Option<&AppSpec> {
        self.apps.iter().find(|a| a.process_id == pid)
    }

    pub fn app_of(&self, package: &str) -> Option<&AppSpec> {
        self.apps.iter().find(|a| a.package == package)
    }

    pub fn component(&self, id: &ComponentId) -> Option<(&AppSpec, &ComponentSpec)> {
        let app = self.app_of(&id.package)?;
        let comp = app.component(&id.name)?;
        Some((app, comp))
    }

    /// All process ids in the world, the usual focus set for analysis.
    pub fn pids(&self) -> BTreeSet<u32> {
        self.apps.iter().map(|a| a.process_id).collect()
    }
}

/// The synthetic system app hosting the chooser activity.
pub fn system_app() -> AppSpec {
    AppSpec {
        package: SYSTEM_PACKAGE.to_string(),
        process_id: SYSTEM_PID,
        permissions: BTreeSet::new(),
        components: vec![ComponentSpec {
            id: ComponentId::new(SYSTEM_PACKAGE, RESOLVER_ACTIVITY),
            kind: ComponentKind::Activity,
            exported: false,
            filters: Vec::new(),
        }],
    }
}

/// Identity of the chooser activity.
pub fn resolver_component() -> ComponentId {
    ComponentId::new(SYSTEM_PACKAGE, RESOLVER_ACTIVITY)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cid(pkg: &str, name: &str) -> ComponentId {
        ComponentId::new(pkg, name)
    }

    fn label(tag: u32) -> TaintLabel {
        TaintLabel::new(TagId(tag), "getLatitude", cid("com.victim", "Main"))
    }

    fn sample_events() -> Vec<LogEvent> {
        vec![
            LogEvent {
                seq: 1,
                pid: 1,
                body: EventBody::Launch {
                    component: cid("com.victim", "Main"),
                },
            },
            LogEvent {
                seq: 2,
                pid: 1,
                body: EventBody::SetTaint {
                    component: cid("com.victim", "Main"),
                    method: "getLatitude".into(),
                    tag: TagId(0x00010004),
                },
            },
            LogEvent {
                seq: 3,
                pid: 1,
                body: EventBody::SendIntent {
                    component: cid("com.victim", "Main"),
                    intent: IntentSummary {
                        intent_id: 1,
                        dispatch: ComponentKind::Activity,
                        explicit_target: None,
                        action: Some("com.victim.SHOW".into()),
                        categories: ["android.intent.category.DEFAULT".to_string()].into(),
                        mime_type: None,
                        scheme: None,
                        extras: [(
                            "location".to_string(),
                            LabelSet::singleton(label(0x00010004)),
                        )]
                        .into(),
                    },
                },
            },
            LogEvent {
                seq: 4,
                pid: 2,
                body: EventBody::SinkCall {
                    component: cid("com.malware", "Sniffer"),
                    method: "log".into(),
                    args: vec![LabelSet::singleton(label(0x00010004)), LabelSet::empty()],
                },
            },
        ]
    }

    #[test]
    fn empty_stream_writes_header_only() {
        let log = TaintLog::default();
        assert_eq!(write_log(&log), "ICCLOG\t1\t0\n");
    }

    #[test]
    fn write_then_parse_is_identity() {
        let log = TaintLog {
            timestamp: 0,
            events: sample_events(),
        };
        let bytes = write_log(&log);
        let parsed = parse_log(&bytes, None).unwrap();
        assert_eq!(parsed.events, log.events);
        assert_eq!(parsed.skipped_unknown, 0);
    }

    #[test]
    fn focus_filter_drops_other_pids() {
        let mut events = sample_events();
        events.push(LogEvent {
            seq: 5,
            pid: 99,
            body: EventBody::Launch {
                component: cid("com.noise", "X"),
            },
        });
        let bytes = write_log(&TaintLog {
            timestamp: 0,
            events,
        });
        let focus: BTreeSet<u32> = [1, 2].into();
        let parsed = parse_log(&bytes, Some(&focus)).unwrap();
        assert!(parsed.events.iter().all(|e| focus.contains(&e.pid)));
        assert_eq!(parsed.events.len(), 4);
    }

    #[test]
    fn truncated_final_line_is_a_positioned_error() {
        let log = TaintLog {
            timestamp: 0,
            events: sample_events(),
        };
        let mut bytes = write_log(&log);
        bytes.pop();
        match parse_log(&bytes, None) {
            Err(LogParseError::Truncated { line }) => assert_eq!(line, 5),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_an_explicit_error() {
        let err = parse_log("ICCLOG\t9\t0\n", None).unwrap_err();
        assert!(matches!(err, LogParseError::UnsupportedVersion(9)));
        let err = parse_log("NOTLOG\t1\t0\n", None).unwrap_err();
        assert!(matches!(err, LogParseError::BadMagic));
    }

    #[test]
    fn unknown_kinds_are_skipped_with_a_warning_count() {
        let text = "ICCLOG\t1\t0\n7\t1\tFUTURE_KIND\tpayload\n8\t1\tLAUNCH\tcom.a/Main\n";
        let parsed = parse_log(text, None).unwrap();
        assert_eq!(parsed.skipped_unknown, 1);
        assert_eq!(parsed.events.len(), 1);
    }

    #[test]
    fn corrupt_record_names_the_line() {
        let text = "ICCLOG\t1\t0\n7\t1\tDELIVER\tnot-a-number\tcom.a/Main\n";
        match parse_log(text, None) {
            Err(LogParseError::Corrupt { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected corrupt error, got {other:?}"),
        }
    }

    #[test]
    fn reserved_characters_in_atoms_survive() {
        let odd = "we/ird=key@with,all;the:bad\tchars\\and|more";
        let event = LogEvent {
            seq: 1,
            pid: 3,
            body: EventBody::StoreShared {
                component: cid("com.app", "A"),
                store: odd.into(),
                key: odd.into(),
                labels: LabelSet::singleton(TaintLabel::new(
                    TagId(7),
                    odd,
                    cid("pkg.with/slash", "name@at"),
                )),
            },
        };
        let log = TaintLog {
            timestamp: 0,
            events: vec![event],
        };
        let parsed = parse_log(&write_log(&log), None).unwrap();
        assert_eq!(parsed.events, log.events);
    }

    #[test]
    fn metadata_round_trips_through_toml() {
        let meta = AppMetadata {
            format: META_MAGIC.into(),
            version: META_VERSION,
            apps: vec![system_app()],
        };
        let text = meta.to_toml_string();
        let back = AppMetadata::from_toml_str(&text).unwrap();
        assert_eq!(back, meta);
        assert!(AppMetadata::from_toml_str("format = \"X\"\nversion = 1\napps = []").is_err());
    }
}
