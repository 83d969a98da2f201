//! Declarative scenario format: a world description (apps, components,
//! filters, permissions) plus per-component behavior scripts, parsed from a
//! line-oriented text document.
//!
//! # Document format
//!
//! One directive per line; `#` starts a comment; blank lines are ignored.
//! Nesting is by context, not indentation:
//!
//! ```text
//! scenario v1 hijack_location
//!
//! app com.victim pid=1 perms=ACCESS_FINE_LOCATION
//! component Main kind=activity exported
//! on_launch
//!   acquire_source getLatitude -> $loc
//!   put_extra location $loc
//!   send_intent via=activity action=com.victim.SHOW
//!
//! app com.malware pid=2
//! component Sniffer kind=activity exported
//! filter actions=com.victim.SHOW prio=0
//! on_receive
//!   get_extra location -> $v
//!   call_sink log $v
//!
//! launch com.victim/Main
//! expect com.victim/Main -> com.malware/Sniffer hijacking
//! ```
//!
//! Step arguments written `$name` are registers: single-assignment slots
//! scoped to one activation of the script. A quoted string is an untainted
//! constant. `validate <key> <pattern>` aborts the remaining steps of the
//! activation when the named extra is missing or does not contain
//! `pattern`, which models a receiver that rejects data in the wrong
//! format and stops executing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use crate::catalog::{Catalogs, SYSTEM_PACKAGE, SYSTEM_PID};
use crate::model::{
    AppSpec, ComponentId, ComponentKind, ComponentSpec, FilterSpec, ThreatType,
};

mod corpus;
pub use corpus::{
    builtin_corpus, corpus_from_dir, corpus_names, corpus_scenario, corpus_source, CORPUS_DIR_ENV,
};

/// When a script runs: at an explicit launch or when an intent arrives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Trigger {
    OnLaunch,
    OnReceiveIntent,
}

/// A step argument: a register read or an untainted string constant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValueRef {
    Register(String),
    Literal(String),
}

/// Attributes of an intent a `send_intent` step will emit. Extras are not
/// part of the template; they are staged by preceding `put_extra` steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntentTemplate {
    pub dispatch: ComponentKind,
    pub to: Option<ComponentId>,
    pub action: Option<String>,
    pub categories: BTreeSet<String>,
    pub mime_type: Option<String>,
    pub scheme: Option<String>,
}

/// One scripted action of a component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    AcquireSource { method: String, out: String },
    PutExtra { key: String, value: ValueRef },
    SendIntent(IntentTemplate),
    CallSink { method: String, args: Vec<ValueRef> },
    StoreShared { store: String, key: String, value: ValueRef },
    LoadShared { store: String, key: String, out: String },
    StoreAppObj { field: String, value: ValueRef },
    LoadAppObj { field: String, out: String },
    StartComponent { target: ComponentId },
    GetExtra { key: String, out: String },
    Validate { key: String, pattern: String },
}

/// An ordered list of steps bound to a trigger.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BehaviorScript {
    pub trigger: Trigger,
    pub steps: Vec<Step>,
}

/// One entry of the launch order. `chooser_selection` pre-declares the user
/// choice applied when an implicit activity intent started from this launch
/// resolves to more than one candidate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaunchEntry {
    pub component: ComponentId,
    pub chooser_selection: Option<ComponentId>,
}

/// Ground truth planted in a scenario for accuracy scoring.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ExpectedVerdict {
    pub sender: ComponentId,
    pub receiver: ComponentId,
    pub threat: ThreatType,
}

/// A fully validated world plus behaviors, launch order and ground truth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub name: String,
    pub apps: Vec<AppSpec>,
    pub behaviors: BTreeMap<ComponentId, Vec<BehaviorScript>>,
    pub launch_order: Vec<LaunchEntry>,
    pub expected_verdicts: Vec<ExpectedVerdict>,
}

impl Scenario {
    pub fn app(&self, package: &str) -> Option<&AppSpec> {
        self.apps.iter().find(|a| a.package == package)
    }

    pub fn component(&self, id: &ComponentId) -> Option<(&AppSpec, &ComponentSpec)> {
        let app = self.app(&id.package)?;
        let comp = app.component(&id.name)?;
        Some((app, comp))
    }

    pub fn script(&self, id: &ComponentId, trigger: Trigger) -> Option<&BehaviorScript> {
        self.behaviors
            .get(id)?
            .iter()
            .find(|s| s.trigger == trigger)
    }
}

/// Scenario schema violations, with the offending line where applicable.
#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: dangling reference: {message}")]
    DanglingReference { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
}

impl ScenarioError {
    fn syntax(line: usize, message: impl Into<String>) -> Self {
        ScenarioError::Syntax {
            line,
            message: message.into(),
        }
    }

    fn dangling(line: usize, message: impl Into<String>) -> Self {
        ScenarioError::DanglingReference {
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Bare(String),
    Quoted(String),
}

impl Token {
    fn text(&self) -> &str {
        match self {
            Token::Bare(s) | Token::Quoted(s) => s,
        }
    }
}

fn tokenize(line: &str, line_no: usize) -> Result<Vec<Token>, ScenarioError> {
    let mut tokens = Vec::new();
    let mut chars = line.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c == '#' {
            break;
        } else if c == '"' {
            chars.next();
            let mut text = String::new();
            loop {
                match chars.next() {
                    Some('"') => break,
                    Some('\\') => match chars.next() {
                        Some('"') => text.push('"'),
                        Some('\\') => text.push('\\'),
                        Some(other) => {
                            return Err(ScenarioError::syntax(
                                line_no,
                                format!("bad escape '\\{other}' in string literal"),
                            ))
                        }
                        None => {
                            return Err(ScenarioError::syntax(line_no, "unterminated string"))
                        }
                    },
                    Some(other) => text.push(other),
                    None => return Err(ScenarioError::syntax(line_no, "unterminated string")),
                }
            }
            tokens.push(Token::Quoted(text));
        } else {
            let mut text = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_whitespace() || c == '#' {
                    break;
                }
                text.push(c);
                chars.next();
            }
            tokens.push(Token::Bare(text));
        }
    }
    Ok(tokens)
}

fn quote(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 2);
    out.push('"');
    for c in text.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            other => out.push(other),
        }
    }
    out.push('"');
    out
}

struct KvArgs<'a> {
    line: usize,
    pairs: Vec<(&'a str, &'a str)>,
    flags: Vec<&'a str>,
    used: BTreeSet<usize>,
}

impl<'a> KvArgs<'a> {
    fn new(tokens: &'a [Token], line: usize) -> Result<Self, ScenarioError> {
        let mut pairs = Vec::new();
        let mut flags = Vec::new();
        for tok in tokens {
            match tok {
                Token::Bare(text) => match text.split_once('=') {
                    Some((k, v)) => pairs.push((k, v)),
                    None => flags.push(text.as_str()),
                },
                Token::Quoted(_) => {
                    return Err(ScenarioError::syntax(line, "unexpected string literal"))
                }
            }
        }
        Ok(Self {
            line,
            pairs,
            flags,
            used: BTreeSet::new(),
        })
    }

    fn take(&mut self, key: &str) -> Option<&'a str> {
        for (i, (k, v)) in self.pairs.iter().enumerate() {
            if *k == key && !self.used.contains(&i) {
                self.used.insert(i);
                return Some(v);
            }
        }
        None
    }

    fn take_flag(&mut self, flag: &str) -> bool {
        if let Some(pos) = self.flags.iter().position(|f| *f == flag) {
            self.flags.remove(pos);
            true
        } else {
            false
        }
    }

    fn finish(self) -> Result<(), ScenarioError> {
        if let Some(flag) = self.flags.first() {
            return Err(ScenarioError::syntax(
                self.line,
                format!("unexpected token '{flag}'"),
            ));
        }
        for (i, (k, _)) in self.pairs.iter().enumerate() {
            if !self.used.contains(&i) {
                return Err(ScenarioError::syntax(
                    self.line,
                    format!("unknown argument '{k}='"),
                ));
            }
        }
        Ok(())
    }
}

fn split_list(value: &str) -> BTreeSet<String> {
    value
        .split(',')
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn parse_component_ref(text: &str, line: usize) -> Result<ComponentId, ScenarioError> {
    ComponentId::from_str(text).map_err(|e| ScenarioError::syntax(line, e.to_string()))
}

fn parse_value_ref(token: &Token, line: usize) -> Result<ValueRef, ScenarioError> {
    match token {
        Token::Quoted(text) => Ok(ValueRef::Literal(text.clone())),
        Token::Bare(text) => match text.strip_prefix('$') {
            Some(reg) if !reg.is_empty() => Ok(ValueRef::Register(reg.to_string())),
            _ => Err(ScenarioError::syntax(
                line,
                format!("expected $register or \"literal\", got '{text}'"),
            )),
        },
    }
}

fn parse_out_register(tokens: &[Token], line: usize) -> Result<String, ScenarioError> {
    match tokens {
        [Token::Bare(arrow), Token::Bare(reg)] if arrow == "->" => match reg.strip_prefix('$') {
            Some(name) if !name.is_empty() => Ok(name.to_string()),
            _ => Err(ScenarioError::syntax(line, format!("bad register '{reg}'"))),
        },
        _ => Err(ScenarioError::syntax(line, "expected '-> $register'")),
    }
}

/// Parse and fully validate a scenario document. All cross-references
/// (components, source and sink methods, launch targets, chooser
/// selections) are resolved against the world description and `catalogs`.
pub fn parse_scenario(text: &str, catalogs: &Catalogs) -> Result<Scenario, ScenarioError> {
    let mut name = None;
    let mut apps: Vec<AppSpec> = Vec::new();
    let mut behaviors: BTreeMap<ComponentId, Vec<BehaviorScript>> = BTreeMap::new();
    let mut launch_order = Vec::new();
    let mut expected = Vec::new();
    // (component, trigger, steps, line of the trigger directive)
    let mut open_script: Option<(ComponentId, Trigger, Vec<Step>, usize)> = None;
    let mut current_component: Option<ComponentId> = None;
    // lines to re-check once the whole world is known
    let mut deferred: Vec<(usize, DeferredCheck)> = Vec::new();

    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let tokens = tokenize(raw_line, line)?;
        if tokens.is_empty() {
            continue;
        }
        let keyword = tokens[0].text().to_string();
        let rest = &tokens[1..];

        if name.is_none() {
            if keyword != "scenario" {
                return Err(ScenarioError::syntax(
                    line,
                    "document must start with 'scenario v1 <name>'",
                ));
            }
            match rest {
                [Token::Bare(version), Token::Bare(n)] if version == "v1" => {
                    name = Some(n.clone());
                    continue;
                }
                [Token::Bare(version), _] => {
                    return Err(ScenarioError::syntax(
                        line,
                        format!("unsupported scenario version '{version}'"),
                    ))
                }
                _ => return Err(ScenarioError::syntax(line, "expected 'scenario v1 <name>'")),
            }
        }

        let is_step = matches!(
            keyword.as_str(),
            "acquire_source"
                | "put_extra"
                | "send_intent"
                | "call_sink"
                | "store_shared"
                | "load_shared"
                | "store_appobj"
                | "load_appobj"
                | "start_component"
                | "get_extra"
                | "validate"
        );
        if !is_step {
            if let Some((component, trigger, steps, trigger_line)) = open_script.take() {
                record_script(&mut behaviors, component, trigger, steps, trigger_line)?;
            }
        }

        match keyword.as_str() {
            "scenario" => {
                return Err(ScenarioError::syntax(line, "duplicate scenario header"));
            }
            "app" => {
                current_component = None;
                let package = match rest.first() {
                    Some(Token::Bare(p)) => p.clone(),
                    _ => return Err(ScenarioError::syntax(line, "expected 'app <package> ...'")),
                };
                let mut args = KvArgs::new(&rest[1..], line)?;
                let pid_text = args
                    .take("pid")
                    .ok_or_else(|| ScenarioError::syntax(line, "app needs pid=<n>"))?;
                let process_id: u32 = pid_text
                    .parse()
                    .map_err(|_| ScenarioError::syntax(line, format!("bad pid '{pid_text}'")))?;
                let permissions = args.take("perms").map(split_list).unwrap_or_default();
                args.finish()?;
                if process_id == 0 {
                    return Err(ScenarioError::syntax(line, "pid must be positive"));
                }
                if process_id == SYSTEM_PID {
                    return Err(ScenarioError::syntax(
                        line,
                        format!("pid {SYSTEM_PID} is reserved for the system app"),
                    ));
                }
                if package == SYSTEM_PACKAGE {
                    return Err(ScenarioError::syntax(
                        line,
                        format!("package '{SYSTEM_PACKAGE}' is reserved"),
                    ));
                }
                if package.contains('/') {
                    return Err(ScenarioError::syntax(line, "package must not contain '/'"));
                }
                if apps.iter().any(|a| a.package == package) {
                    return Err(ScenarioError::syntax(line, format!("duplicate app '{package}'")));
                }
                if apps.iter().any(|a| a.process_id == process_id) {
                    return Err(ScenarioError::syntax(line, format!("duplicate pid {process_id}")));
                }
                apps.push(AppSpec {
                    package,
                    process_id,
                    permissions,
                    components: Vec::new(),
                });
            }
            "component" => {
                let app = apps
                    .last_mut()
                    .ok_or_else(|| ScenarioError::syntax(line, "component outside of app"))?;
                let comp_name = match rest.first() {
                    Some(Token::Bare(n)) => n.clone(),
                    _ => {
                        return Err(ScenarioError::syntax(line, "expected 'component <name> ...'"))
                    }
                };
                if comp_name.contains('/') {
                    return Err(ScenarioError::syntax(line, "component name must not contain '/'"));
                }
                let mut args = KvArgs::new(&rest[1..], line)?;
                let kind_text = args
                    .take("kind")
                    .ok_or_else(|| ScenarioError::syntax(line, "component needs kind="))?;
                let kind = ComponentKind::from_str(kind_text)
                    .map_err(|e| ScenarioError::syntax(line, e.to_string()))?;
                let exported = args.take_flag("exported");
                args.finish()?;
                if app.components.iter().any(|c| c.id.name == comp_name) {
                    return Err(ScenarioError::syntax(
                        line,
                        format!("duplicate component '{comp_name}' in {}", app.package),
                    ));
                }
                let id = ComponentId::new(app.package.clone(), comp_name);
                current_component = Some(id.clone());
                app.components.push(ComponentSpec {
                    id,
                    kind,
                    exported,
                    filters: Vec::new(),
                });
            }
            "filter" => {
                let comp_id = current_component
                    .clone()
                    .ok_or_else(|| ScenarioError::syntax(line, "filter outside of component"))?;
                let mut args = KvArgs::new(rest, line)?;
                let actions = args.take("actions").map(split_list).unwrap_or_default();
                let categories = args.take("cats").map(split_list).unwrap_or_default();
                let data_schemes = args.take("schemes").map(split_list).unwrap_or_default();
                let mime_types = args.take("mimes").map(split_list).unwrap_or_default();
                let priority = match args.take("prio") {
                    Some(p) => p
                        .parse()
                        .map_err(|_| ScenarioError::syntax(line, format!("bad priority '{p}'")))?,
                    None => 0,
                };
                args.finish()?;
                let app = apps.last_mut().expect("component implies app");
                let comp = app
                    .components
                    .iter_mut()
                    .find(|c| c.id == comp_id)
                    .expect("current component exists");
                comp.filters.push(FilterSpec {
                    actions,
                    categories,
                    data_schemes,
                    mime_types,
                    priority,
                });
            }
            "on_launch" | "on_receive" => {
                let comp_id = current_component
                    .clone()
                    .ok_or_else(|| ScenarioError::syntax(line, "script outside of component"))?;
                if !rest.is_empty() {
                    return Err(ScenarioError::syntax(line, "trigger takes no arguments"));
                }
                let trigger = if keyword == "on_launch" {
                    Trigger::OnLaunch
                } else {
                    Trigger::OnReceiveIntent
                };
                open_script = Some((comp_id, trigger, Vec::new(), line));
            }
            "launch" => {
                let component = match rest.first() {
                    Some(Token::Bare(t)) => parse_component_ref(t, line)?,
                    _ => return Err(ScenarioError::syntax(line, "expected 'launch <pkg>/<comp>'")),
                };
                let mut args = KvArgs::new(&rest[1..], line)?;
                let chooser_selection = match args.take("choose") {
                    Some(t) => Some(parse_component_ref(t, line)?),
                    None => None,
                };
                args.finish()?;
                deferred.push((line, DeferredCheck::Launch(component.clone())));
                if let Some(sel) = &chooser_selection {
                    deferred.push((line, DeferredCheck::ComponentExists(sel.clone())));
                }
                launch_order.push(LaunchEntry {
                    component,
                    chooser_selection,
                });
            }
            "expect" => {
                let (sender, receiver, threat) = match rest {
                    [Token::Bare(s), Token::Bare(arrow), Token::Bare(r), Token::Bare(t)]
                        if arrow == "->" =>
                    {
                        (
                            parse_component_ref(s, line)?,
                            parse_component_ref(r, line)?,
                            ThreatType::from_str(t)
                                .map_err(|e| ScenarioError::syntax(line, e.to_string()))?,
                        )
                    }
                    _ => {
                        return Err(ScenarioError::syntax(
                            line,
                            "expected 'expect <pkg>/<comp> -> <pkg>/<comp> <threat>'",
                        ))
                    }
                };
                if threat == ThreatType::None {
                    return Err(ScenarioError::syntax(
                        line,
                        "expect lines list planted threats; omit benign paths",
                    ));
                }
                deferred.push((line, DeferredCheck::ComponentExists(sender.clone())));
                deferred.push((line, DeferredCheck::ComponentExists(receiver.clone())));
                expected.push(ExpectedVerdict {
                    sender,
                    receiver,
                    threat,
                });
            }
            _ if is_step => {
                let (_, trigger, steps, _) = open_script
                    .as_mut()
                    .ok_or_else(|| ScenarioError::syntax(line, "step outside of a script"))?;
                let step = parse_step(&keyword, rest, line, *trigger, catalogs, &mut deferred)?;
                steps.push(step);
            }
            other => {
                return Err(ScenarioError::syntax(line, format!("unknown directive '{other}'")));
            }
        }
    }

    if let Some((component, trigger, steps, trigger_line)) = open_script.take() {
        record_script(&mut behaviors, component, trigger, steps, trigger_line)?;
    }

    let name = name.ok_or_else(|| ScenarioError::Invalid("empty document".to_string()))?;
    let scenario = Scenario {
        name,
        apps,
        behaviors,
        launch_order,
        expected_verdicts: expected,
    };

    for (line, check) in deferred {
        match check {
            DeferredCheck::ComponentExists(id) | DeferredCheck::Target(id) => {
                if scenario.component(&id).is_none() {
                    return Err(ScenarioError::dangling(line, format!("unknown component {id}")));
                }
            }
            DeferredCheck::Launch(id) => {
                if scenario.component(&id).is_none() {
                    return Err(ScenarioError::dangling(line, format!("unknown component {id}")));
                }
                if scenario.script(&id, Trigger::OnLaunch).is_none() {
                    return Err(ScenarioError::dangling(
                        line,
                        format!("launched component {id} has no on_launch script"),
                    ));
                }
            }
        }
    }
    validate_registers(&scenario)?;
    Ok(scenario)
}

enum DeferredCheck {
    ComponentExists(ComponentId),
    Target(ComponentId),
    Launch(ComponentId),
}

fn record_script(
    behaviors: &mut BTreeMap<ComponentId, Vec<BehaviorScript>>,
    component: ComponentId,
    trigger: Trigger,
    steps: Vec<Step>,
    line: usize,
) -> Result<(), ScenarioError> {
    let scripts = behaviors.entry(component.clone()).or_default();
    if scripts.iter().any(|s| s.trigger == trigger) {
        return Err(ScenarioError::syntax(
            line,
            format!("component {component} already has a script for this trigger"),
        ));
    }
    scripts.push(BehaviorScript { trigger, steps });
    Ok(())
}

fn parse_step(
    keyword: &str,
    rest: &[Token],
    line: usize,
    trigger: Trigger,
    catalogs: &Catalogs,
    deferred: &mut Vec<(usize, DeferredCheck)>,
) -> Result<Step, ScenarioError> {
    match keyword {
        "acquire_source" => match rest {
            [Token::Bare(method), out @ ..] => {
                if catalogs.methods.source(method).is_none() {
                    return Err(ScenarioError::dangling(
                        line,
                        format!("unknown source method '{method}'"),
                    ));
                }
                Ok(Step::AcquireSource {
                    method: method.clone(),
                    out: parse_out_register(out, line)?,
                })
            }
            _ => Err(ScenarioError::syntax(line, "expected 'acquire_source <method> -> $r'")),
        },
        "put_extra" => match rest {
            [Token::Bare(key), value] => Ok(Step::PutExtra {
                key: key.clone(),
                value: parse_value_ref(value, line)?,
            }),
            _ => Err(ScenarioError::syntax(line, "expected 'put_extra <key> <ref>'")),
        },
        "send_intent" => {
            let mut args = KvArgs::new(rest, line)?;
            let dispatch = match args.take("via") {
                Some("activity") | None => ComponentKind::Activity,
                Some("service") => ComponentKind::Service,
                Some("broadcast") => ComponentKind::BroadcastReceiver,
                Some(other) => {
                    return Err(ScenarioError::syntax(line, format!("bad via '{other}'")))
                }
            };
            let to = match args.take("to") {
                Some(t) => {
                    let id = parse_component_ref(t, line)?;
                    deferred.push((line, DeferredCheck::Target(id.clone())));
                    Some(id)
                }
                None => None,
            };
            let action = args.take("action").map(str::to_string);
            let categories = args.take("cats").map(split_list).unwrap_or_default();
            let mime_type = args.take("mime").map(str::to_string);
            let scheme = args.take("scheme").map(str::to_string);
            args.finish()?;
            Ok(Step::SendIntent(IntentTemplate {
                dispatch,
                to,
                action,
                categories,
                mime_type,
                scheme,
            }))
        }
        "call_sink" => match rest {
            [Token::Bare(method), args @ ..] if !args.is_empty() => {
                if catalogs.methods.sink(method).is_none() {
                    return Err(ScenarioError::dangling(
                        line,
                        format!("unknown sink method '{method}'"),
                    ));
                }
                let args = args
                    .iter()
                    .map(|t| parse_value_ref(t, line))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Step::CallSink {
                    method: method.clone(),
                    args,
                })
            }
            _ => Err(ScenarioError::syntax(line, "expected 'call_sink <method> <ref>...'")),
        },
        "store_shared" => match rest {
            [Token::Bare(store), Token::Bare(key), value] => Ok(Step::StoreShared {
                store: store.clone(),
                key: key.clone(),
                value: parse_value_ref(value, line)?,
            }),
            _ => Err(ScenarioError::syntax(line, "expected 'store_shared <store> <key> <ref>'")),
        },
        "load_shared" => match rest {
            [Token::Bare(store), Token::Bare(key), out @ ..] => Ok(Step::LoadShared {
                store: store.clone(),
                key: key.clone(),
                out: parse_out_register(out, line)?,
            }),
            _ => Err(ScenarioError::syntax(line, "expected 'load_shared <store> <key> -> $r'")),
        },
        "store_appobj" => match rest {
            [Token::Bare(field), value] => Ok(Step::StoreAppObj {
                field: field.clone(),
                value: parse_value_ref(value, line)?,
            }),
            _ => Err(ScenarioError::syntax(line, "expected 'store_appobj <field> <ref>'")),
        },
        "load_appobj" => match rest {
            [Token::Bare(field), out @ ..] => Ok(Step::LoadAppObj {
                field: field.clone(),
                out: parse_out_register(out, line)?,
            }),
            _ => Err(ScenarioError::syntax(line, "expected 'load_appobj <field> -> $r'")),
        },
        "start_component" => match rest {
            [Token::Bare(target)] => {
                let target = parse_component_ref(target, line)?;
                deferred.push((line, DeferredCheck::Target(target.clone())));
                Ok(Step::StartComponent { target })
            }
            _ => Err(ScenarioError::syntax(line, "expected 'start_component <pkg>/<comp>'")),
        },
        "get_extra" => {
            if trigger != Trigger::OnReceiveIntent {
                return Err(ScenarioError::syntax(
                    line,
                    "get_extra is only valid in on_receive scripts",
                ));
            }
            match rest {
                [Token::Bare(key), out @ ..] => Ok(Step::GetExtra {
                    key: key.clone(),
                    out: parse_out_register(out, line)?,
                }),
                _ => Err(ScenarioError::syntax(line, "expected 'get_extra <key> -> $r'")),
            }
        }
        "validate" => {
            if trigger != Trigger::OnReceiveIntent {
                return Err(ScenarioError::syntax(
                    line,
                    "validate is only valid in on_receive scripts",
                ));
            }
            match rest {
                [Token::Bare(key), pattern] => Ok(Step::Validate {
                    key: key.clone(),
                    pattern: pattern.text().to_string(),
                }),
                _ => Err(ScenarioError::syntax(line, "expected 'validate <key> <pattern>'")),
            }
        }
        _ => unreachable!("caller checked the keyword"),
    }
}

/// Registers form a well-scoped single-assignment file per activation:
/// every read must follow exactly one earlier write in the same script.
fn validate_registers(scenario: &Scenario) -> Result<(), ScenarioError> {
    for (component, scripts) in &scenario.behaviors {
        for script in scripts {
            let mut assigned: BTreeSet<&str> = BTreeSet::new();
            let check_read = |reg: &ValueRef, assigned: &BTreeSet<&str>| match reg {
                ValueRef::Register(name) if !assigned.contains(name.as_str()) => {
                    Err(ScenarioError::Invalid(format!(
                        "{component}: register ${name} read before assignment"
                    )))
                }
                _ => Ok(()),
            };
            for step in &script.steps {
                match step {
                    Step::AcquireSource { out, .. }
                    | Step::LoadShared { out, .. }
                    | Step::LoadAppObj { out, .. }
                    | Step::GetExtra { out, .. } => {
                        if !assigned.insert(out) {
                            return Err(ScenarioError::Invalid(format!(
                                "{component}: register ${out} assigned twice"
                            )));
                        }
                    }
                    Step::PutExtra { value, .. }
                    | Step::StoreShared { value, .. }
                    | Step::StoreAppObj { value, .. } => check_read(value, &assigned)?,
                    Step::CallSink { args, .. } => {
                        for arg in args {
                            check_read(arg, &assigned)?;
                        }
                    }
                    Step::SendIntent(_) | Step::StartComponent { .. } | Step::Validate { .. } => {}
                }
            }
        }
    }
    Ok(())
}

fn write_value_ref(out: &mut String, value: &ValueRef) {
    match value {
        ValueRef::Register(name) => {
            out.push('$');
            out.push_str(name);
        }
        ValueRef::Literal(text) => out.push_str(&quote(text)),
    }
}

fn join_set(set: &BTreeSet<String>) -> String {
    set.iter().cloned().collect::<Vec<_>>().join(",")
}

/// Serialize a scenario back to the canonical document form.
/// `parse_scenario(serialize_scenario(s)) == s` for every valid scenario.
pub fn serialize_scenario(scenario: &Scenario) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scenario v1 {}", scenario.name);
    for app in &scenario.apps {
        out.push('\n');
        let _ = write!(out, "app {} pid={}", app.package, app.process_id);
        if !app.permissions.is_empty() {
            let _ = write!(out, " perms={}", join_set(&app.permissions));
        }
        out.push('\n');
        for comp in &app.components {
            let _ = write!(out, "component {} kind={}", comp.id.name, comp.kind);
            if comp.exported {
                out.push_str(" exported");
            }
            out.push('\n');
            for filter in &comp.filters {
                out.push_str("filter");
                if !filter.actions.is_empty() {
                    let _ = write!(out, " actions={}", join_set(&filter.actions));
                }
                if !filter.categories.is_empty() {
                    let _ = write!(out, " cats={}", join_set(&filter.categories));
                }
                if !filter.data_schemes.is_empty() {
                    let _ = write!(out, " schemes={}", join_set(&filter.data_schemes));
                }
                if !filter.mime_types.is_empty() {
                    let _ = write!(out, " mimes={}", join_set(&filter.mime_types));
                }
                if filter.priority != 0 {
                    let _ = write!(out, " prio={}", filter.priority);
                }
                out.push('\n');
            }
            if let Some(scripts) = scenario.behaviors.get(&comp.id) {
                for script in scripts {
                    out.push_str(match script.trigger {
                        Trigger::OnLaunch => "on_launch\n",
                        Trigger::OnReceiveIntent => "on_receive\n",
                    });
                    for step in &script.steps {
                        out.push_str("  ");
                        write_step(&mut out, step);
                        out.push('\n');
                    }
                }
            }
        }
    }
    if !scenario.launch_order.is_empty() {
        out.push('\n');
        for entry in &scenario.launch_order {
            let _ = write!(out, "launch {}", entry.component);
            if let Some(sel) = &entry.chooser_selection {
                let _ = write!(out, " choose={sel}");
            }
            out.push('\n');
        }
    }
    if !scenario.expected_verdicts.is_empty() {
        out.push('\n');
        for exp in &scenario.expected_verdicts {
            let _ = writeln!(out, "expect {} -> {} {}", exp.sender, exp.receiver, exp.threat);
        }
    }
    out
}

fn write_step(out: &mut String, step: &Step) {
    match step {
        Step::AcquireSource { method, out: reg } => {
            let _ = write!(out, "acquire_source {method} -> ${reg}");
        }
        Step::PutExtra { key, value } => {
            let _ = write!(out, "put_extra {key} ");
            write_value_ref(out, value);
        }
        Step::SendIntent(template) => {
            let _ = write!(out, "send_intent via={}", match template.dispatch {
                ComponentKind::Activity => "activity",
                ComponentKind::Service => "service",
                ComponentKind::BroadcastReceiver => "broadcast",
            });
            if let Some(to) = &template.to {
                let _ = write!(out, " to={to}");
            }
            if let Some(action) = &template.action {
                let _ = write!(out, " action={action}");
            }
            if !template.categories.is_empty() {
                let _ = write!(out, " cats={}", join_set(&template.categories));
            }
            if let Some(mime) = &template.mime_type {
                let _ = write!(out, " mime={mime}");
            }
            if let Some(scheme) = &template.scheme {
                let _ = write!(out, " scheme={scheme}");
            }
        }
        Step::CallSink { method, args } => {
            let _ = write!(out, "call_sink {method}");
            for arg in args {
                out.push(' ');
                write_value_ref(out, arg);
            }
        }
        Step::StoreShared { store, key, value } => {
            let _ = write!(out, "store_shared {store} {key} ");
            write_value_ref(out, value);
        }
        Step::LoadShared { store, key, out: reg } => {
            let _ = write!(out, "load_shared {store} {key} -> ${reg}");
        }
        Step::StoreAppObj { field, value } => {
            let _ = write!(out, "store_appobj {field} ");
            write_value_ref(out, value);
        }
        Step::LoadAppObj { field, out: reg } => {
            let _ = write!(out, "load_appobj {field} -> ${reg}");
        }
        Step::StartComponent { target } => {
            let _ = write!(out, "start_component {target}");
        }
        Step::GetExtra { key, out: reg } => {
            let _ = write!(out, "get_extra {key} -> ${reg}");
        }
        Step::Validate { key, pattern } => {
            let _ = write!(out, "validate {key} {}", quote(pattern));
        }
    }
}
