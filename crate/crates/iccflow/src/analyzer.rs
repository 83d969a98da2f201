//! Builds communication models from filtered logs, attributes permissions,
//! deflates redundant model chains, traces store-mediated data back to its
//! original sender, and classifies each model.
//!
//! The pipeline is `parse → build → deflate → trace → classify`:
//!
//! * **build** opens one model per `SEND_INTENT` record, first-in-first-out:
//!   a model closes when the next intent is sent or the log ends. Events
//!   that name an intent id attach to that intent's model; receiver-side
//!   events (sinks, stores, loads, component starts) attach to the open
//!   model when they come from a delivered-to app.
//! * **deflate** first merges the two-hop structure the system chooser
//!   creates (keeping the forwarded intent and the original sender and
//!   candidates), then condenses adjacent models where one model's receiver
//!   component sent the next intent and a taint label reappears: the
//!   condensed model keeps the head's sender, source methods, candidates
//!   and taint data and the tail's receiver, sinks and component starts.
//! * **trace** resolves tainted data a receiver consumed without it being in
//!   the model's own intent: through prior models whose receiver component
//!   matches this model's sender (shared-preference flows must also agree
//!   on the exact store and key; application-object flows match on labels
//!   alone), with a final fallback over any prior model that carried the
//!   label. Resolved flows are folded into the model as if direct, and when
//!   the model's own intent carried no taint the sender attribution moves
//!   to the resolved original sender.
//! * **classify** applies five ordered rules; the first match wins and
//!   every model gets exactly one verdict.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalogs, SYSTEM_PACKAGE};
use crate::logfmt::{
    parse_log, resolver_component, AppMetadata, EventBody, IntentSummary, LogEvent, LogParseError,
};
use crate::model::{ComponentId, ComponentKind, LabelSet, TaintLabel, ThreatType};
use crate::monitor::LoadKind;

/// Sender-side attributes of one model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SenderInfo {
    pub process_id: u32,
    pub package: String,
    /// The component that sent the intent (or the resolved original source
    /// after bypass tracing).
    pub component: ComponentId,
    /// All components of the sender app.
    pub app_components: Vec<ComponentId>,
    pub permissions: BTreeSet<String>,
    /// Permissions needed to generate the taint data carried by the intent.
    pub permissions_required: BTreeSet<String>,
    /// Permissions the receiver's invoked sinks need that the sender lacks.
    pub permissions_lacked: BTreeSet<String>,
    pub source_methods: BTreeSet<String>,
}

/// A sink invocation attributed to a receiver app.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SinkCall {
    pub component: ComponentId,
    pub method: String,
    pub args: Vec<LabelSet>,
}

/// A store or load through a shared-preference store or application object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreAccess {
    pub component: ComponentId,
    pub kind: LoadKind,
    pub labels: LabelSet,
}

/// A component start observed in the model window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentStart {
    pub component: ComponentId,
    pub target: ComponentId,
}

/// Receiver-side attributes of one model, grouped per delivered-to app.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceiverInfo {
    pub process_id: u32,
    pub package: String,
    /// Components of this app the intent was delivered to.
    pub components: Vec<ComponentId>,
    pub app_components: Vec<ComponentId>,
    pub permissions: BTreeSet<String>,
    /// Permissions required by the sinks this app invoked in the window.
    pub permissions_required: BTreeSet<String>,
    /// Permissions needed to generate the received taint data that this app
    /// lacks.
    pub permissions_lacked: BTreeSet<String>,
    /// Permissions the receiver's sinks require that the sender lacks.
    pub sender_permissions_lacked: BTreeSet<String>,
    pub sink_methods: BTreeSet<String>,
    pub start_compt: bool,
    pub taint_leak: bool,
    pub sinks: Vec<SinkCall>,
    pub loads: Vec<StoreAccess>,
    pub stores: Vec<StoreAccess>,
    pub starts: Vec<ComponentStart>,
}

/// Intent attributes of one model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntentInfo {
    pub intent_id: u64,
    pub dispatch: ComponentKind,
    pub explicit_target: Option<ComponentId>,
    pub action: Option<String>,
    pub categories: BTreeSet<String>,
    pub mime_type: Option<String>,
    pub scheme: Option<String>,
    /// Extras keys with their label sets (untainted extras have empty sets).
    pub taint_data: BTreeMap<String, LabelSet>,
}

impl IntentInfo {
    /// Union of all labels carried by the intent extras.
    pub fn taint_labels(&self) -> LabelSet {
        self.taint_data
            .values()
            .fold(LabelSet::empty(), |acc, l| acc.union(l))
    }
}

/// One flow resolved by bypass tracing: a consumed label attributed to the
/// model (and sender component) that originally carried it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedFlow {
    pub label: TaintLabel,
    pub via: LoadKind,
    pub source_model: usize,
    pub source_component: ComponentId,
    pub source_package: String,
}

/// The (sender, intent, receiver) triple plus derived threat attributes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IccModel {
    /// Position in the raw build order (head position after condensation).
    pub index: usize,
    pub sender: SenderInfo,
    pub intent: IntentInfo,
    pub candidates: Vec<ComponentId>,
    pub receivers: Vec<ReceiverInfo>,
    /// Flows folded in by bypass tracing.
    pub resolved: Vec<ResolvedFlow>,
    /// Consumed labels no prior model accounts for.
    pub unresolved: Vec<TaintLabel>,
    /// Human-readable provenance chain, one hop per line.
    pub provenance: Vec<String>,
}

impl IccModel {
    /// Labels classify sees as arriving with the intent: the intent's own
    /// plus everything bypass tracing resolved.
    pub fn effective_labels(&self) -> LabelSet {
        let mut labels = self.intent.taint_labels();
        for flow in &self.resolved {
            labels.insert(flow.label.clone());
        }
        labels
    }
}

/// Classification outcome for one model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreatVerdict {
    pub model_index: usize,
    pub sender_package: String,
    pub sender_component: ComponentId,
    pub receiver_package: Option<String>,
    pub receiver_components: Vec<ComponentId>,
    pub threat: ThreatType,
    pub matched_case: Option<u8>,
    pub evidence: Vec<(String, String)>,
    pub provenance: Vec<String>,
}

/// Analysis failures, labeled by pipeline stage.
#[derive(Debug, thiserror::Error)]
pub enum AnalyzerError {
    #[error("parse: {0}")]
    Parse(#[from] LogParseError),
    #[error("build: event {seq} references unknown intent id {intent_id}")]
    UnknownIntentId { seq: u64, intent_id: u64 },
    #[error("build: app '{0}' is not in the metadata")]
    UnknownApp(String),
}

/// Analyzer switches.
#[derive(Debug, Clone, Copy, Default)]
pub struct AnalyzeOptions {
    /// Degraded mode used as a comparison oracle in tests: treat any taint
    /// carried by the intent as leaked, ignoring whether a sink consumed
    /// it. This reproduces the false positives of tools that stop looking
    /// at the receiver.
    pub ignore_sinks: bool,
}

/// Wall-clock stage timings in milliseconds, all zero in test mode reports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub parse_ms: f64,
    pub build_ms: f64,
    pub deflate_ms: f64,
    pub trace_ms: f64,
    pub classify_ms: f64,
    pub total_ms: f64,
}

/// Everything one analysis produces.
#[derive(Debug)]
pub struct AnalysisOutcome {
    pub raw_model_count: usize,
    pub models: Vec<IccModel>,
    pub verdicts: Vec<ThreatVerdict>,
    pub skipped_unknown: u32,
    pub timings: StageTimings,
}

fn app_info<'a>(
    meta: &'a AppMetadata,
    package: &str,
) -> Result<&'a crate::model::AppSpec, AnalyzerError> {
    meta.app_of(package)
        .ok_or_else(|| AnalyzerError::UnknownApp(package.to_string()))
}

/// Build raw models from a seq-ordered event stream: one model per
/// `SEND_INTENT`, closed by the next send or end of stream.
pub fn build_models(
    events: &[LogEvent],
    meta: &AppMetadata,
    catalogs: &Catalogs,
) -> Result<Vec<IccModel>, AnalyzerError> {
    struct RawModel {
        sender_component: ComponentId,
        sender_pid: u32,
        intent: IntentSummary,
        candidates: Vec<ComponentId>,
        delivers: Vec<ComponentId>,
        sinks: Vec<SinkCall>,
        loads: Vec<StoreAccess>,
        stores: Vec<StoreAccess>,
        starts: Vec<ComponentStart>,
    }

    let mut raw: Vec<RawModel> = Vec::new();
    let mut by_intent: BTreeMap<u64, usize> = BTreeMap::new();

    for event in events {
        match &event.body {
            EventBody::SendIntent { component, intent } => {
                by_intent.insert(intent.intent_id, raw.len());
                raw.push(RawModel {
                    sender_component: component.clone(),
                    sender_pid: event.pid,
                    intent: intent.clone(),
                    candidates: Vec::new(),
                    delivers: Vec::new(),
                    sinks: Vec::new(),
                    loads: Vec::new(),
                    stores: Vec::new(),
                    starts: Vec::new(),
                });
            }
            EventBody::Candidates {
                intent_id,
                components,
            } => {
                let idx = *by_intent
                    .get(intent_id)
                    .ok_or(AnalyzerError::UnknownIntentId {
                        seq: event.seq,
                        intent_id: *intent_id,
                    })?;
                raw[idx].candidates = components.clone();
            }
            EventBody::Deliver {
                intent_id,
                component,
            } => {
                let idx = *by_intent
                    .get(intent_id)
                    .ok_or(AnalyzerError::UnknownIntentId {
                        seq: event.seq,
                        intent_id: *intent_id,
                    })?;
                raw[idx].delivers.push(component.clone());
            }
            EventBody::SinkCall {
                component,
                method,
                args,
            } => {
                if let Some(open) = raw.last_mut() {
                    open.sinks.push(SinkCall {
                        component: component.clone(),
                        method: method.clone(),
                        args: args.clone(),
                    });
                }
            }
            EventBody::StoreShared {
                component,
                store,
                key,
                labels,
            } => {
                if let Some(open) = raw.last_mut() {
                    open.stores.push(StoreAccess {
                        component: component.clone(),
                        kind: LoadKind::Shared {
                            store: store.clone(),
                            key: key.clone(),
                        },
                        labels: labels.clone(),
                    });
                }
            }
            EventBody::LoadShared {
                component,
                store,
                key,
                labels,
            } => {
                if let Some(open) = raw.last_mut() {
                    open.loads.push(StoreAccess {
                        component: component.clone(),
                        kind: LoadKind::Shared {
                            store: store.clone(),
                            key: key.clone(),
                        },
                        labels: labels.clone(),
                    });
                }
            }
            EventBody::StoreAppObj {
                component,
                field,
                labels,
            } => {
                if let Some(open) = raw.last_mut() {
                    open.stores.push(StoreAccess {
                        component: component.clone(),
                        kind: LoadKind::AppObj {
                            field: field.clone(),
                        },
                        labels: labels.clone(),
                    });
                }
            }
            EventBody::LoadAppObj {
                component,
                field,
                labels,
            } => {
                if let Some(open) = raw.last_mut() {
                    open.loads.push(StoreAccess {
                        component: component.clone(),
                        kind: LoadKind::AppObj {
                            field: field.clone(),
                        },
                        labels: labels.clone(),
                    });
                }
            }
            EventBody::StartComponent { component, target } => {
                if let Some(open) = raw.last_mut() {
                    open.starts.push(ComponentStart {
                        component: component.clone(),
                        target: target.clone(),
                    });
                }
            }
            EventBody::Launch { .. }
            | EventBody::SetTaint { .. }
            | EventBody::CheckIntent { .. }
            | EventBody::Diag { .. } => {}
        }
    }

    let mut models = Vec::with_capacity(raw.len());
    for (index, raw_model) in raw.into_iter().enumerate() {
        let sender_app = app_info(meta, &raw_model.sender_component.package)?;
        let intent = IntentInfo {
            intent_id: raw_model.intent.intent_id,
            dispatch: raw_model.intent.dispatch,
            explicit_target: raw_model.intent.explicit_target.clone(),
            action: raw_model.intent.action.clone(),
            categories: raw_model.intent.categories.clone(),
            mime_type: raw_model.intent.mime_type.clone(),
            scheme: raw_model.intent.scheme.clone(),
            taint_data: raw_model.intent.extras.clone(),
        };
        let sender = SenderInfo {
            process_id: raw_model.sender_pid,
            package: sender_app.package.clone(),
            component: raw_model.sender_component.clone(),
            app_components: sender_app.components.iter().map(|c| c.id.clone()).collect(),
            permissions: sender_app.permissions.clone(),
            permissions_required: BTreeSet::new(),
            permissions_lacked: BTreeSet::new(),
            source_methods: BTreeSet::new(),
        };

        // group deliveries per receiver app, canonical package order
        let mut grouped: BTreeMap<String, Vec<ComponentId>> = BTreeMap::new();
        for deliver in &raw_model.delivers {
            grouped
                .entry(deliver.package.clone())
                .or_default()
                .push(deliver.clone());
        }
        let mut receivers = Vec::new();
        for (package, components) in grouped {
            let app = app_info(meta, &package)?;
            let of_app = |c: &ComponentId| c.package == package;
            receivers.push(ReceiverInfo {
                process_id: app.process_id,
                package: package.clone(),
                components,
                app_components: app.components.iter().map(|c| c.id.clone()).collect(),
                permissions: app.permissions.clone(),
                permissions_required: BTreeSet::new(),
                permissions_lacked: BTreeSet::new(),
                sender_permissions_lacked: BTreeSet::new(),
                sink_methods: BTreeSet::new(),
                start_compt: false,
                taint_leak: false,
                sinks: raw_model
                    .sinks
                    .iter()
                    .filter(|s| of_app(&s.component))
                    .cloned()
                    .collect(),
                loads: raw_model
                    .loads
                    .iter()
                    .filter(|l| of_app(&l.component))
                    .cloned()
                    .collect(),
                stores: raw_model
                    .stores
                    .iter()
                    .filter(|s| of_app(&s.component))
                    .cloned()
                    .collect(),
                starts: raw_model
                    .starts
                    .iter()
                    .filter(|s| of_app(&s.component))
                    .cloned()
                    .collect(),
            });
        }

        let mut model = IccModel {
            index,
            sender,
            intent,
            candidates: raw_model.candidates,
            receivers,
            resolved: Vec::new(),
            unresolved: Vec::new(),
            provenance: Vec::new(),
        };
        attribute(&mut model, meta, catalogs, false);
        models.push(model);
    }
    Ok(models)
}

/// Recompute every derived attribute of a model from its raw facts: source
/// methods, required and lacked permission sets, start-of-private-component
/// and taint-leak flags.
fn attribute(model: &mut IccModel, meta: &AppMetadata, catalogs: &Catalogs, ignore_sinks: bool) {
    let effective = model.effective_labels();

    model.sender.source_methods = effective
        .iter()
        .map(|l| l.source_method.clone())
        .collect();
    model.sender.permissions_required = effective
        .iter()
        .filter_map(|l| catalogs.methods.source_permission(&l.source_method))
        .map(str::to_string)
        .collect();

    let mut all_sink_perms = BTreeSet::new();
    for receiver in &mut model.receivers {
        receiver.sink_methods = receiver.sinks.iter().map(|s| s.method.clone()).collect();
        receiver.permissions_required = receiver
            .sinks
            .iter()
            .filter_map(|s| catalogs.methods.sink(&s.method))
            .filter_map(|s| s.permission.clone())
            .collect();
        all_sink_perms.extend(receiver.permissions_required.iter().cloned());
        receiver.sender_permissions_lacked = receiver
            .permissions_required
            .difference(&model.sender.permissions)
            .cloned()
            .collect();
        receiver.permissions_lacked = model
            .sender
            .permissions_required
            .difference(&receiver.permissions)
            .cloned()
            .collect();
        receiver.start_compt = receiver.starts.iter().any(|start| {
            start.target.package == receiver.package
                && meta
                    .component(&start.target)
                    .is_some_and(|(_, spec)| !spec.exported)
        });
        receiver.taint_leak = if ignore_sinks {
            !effective.is_empty()
        } else {
            receiver.sinks.iter().any(|sink| {
                catalogs
                    .methods
                    .sink(&sink.method)
                    .is_some_and(|s| s.exfiltrating)
                    && sink.args.iter().any(|labels| labels.intersects(&effective))
            })
        };
    }
    model.sender.permissions_lacked = all_sink_perms
        .difference(&model.sender.permissions)
        .cloned()
        .collect();
}

fn is_resolver(component: &ComponentId) -> bool {
    *component == resolver_component()
}

/// Remove redundant models: chooser elision first, then condensation of
/// multi-hop chains.
pub fn deflate_models(
    models: Vec<IccModel>,
    meta: &AppMetadata,
    catalogs: &Catalogs,
    options: AnalyzeOptions,
) -> Vec<IccModel> {
    // chooser elision: (sender -> resolver) + (resolver -> target) becomes
    // (sender -> target), keeping the forwarded intent and the real
    // candidate list of the original resolution
    let mut elided: Vec<IccModel> = Vec::new();
    let mut iter = models.into_iter().peekable();
    while let Some(model) = iter.next() {
        let delivers_to_resolver = model
            .receivers
            .iter()
            .any(|r| r.components.iter().any(is_resolver));
        if delivers_to_resolver {
            if let Some(next) = iter.peek() {
                if is_resolver(&next.sender.component) {
                    let mut merged = iter.next().expect("peeked");
                    merged.index = model.index;
                    merged.sender = model.sender.clone();
                    merged.candidates = model.candidates.clone();
                    attribute(&mut merged, meta, catalogs, options.ignore_sinks);
                    elided.push(merged);
                    continue;
                }
            }
        }
        elided.push(model);
    }

    // chain condensation: maximal runs where the next intent was sent by a
    // component this model delivered to and a taint label reappears
    let mut out: Vec<IccModel> = Vec::new();
    for model in elided {
        let links = out.last().is_some_and(|head: &IccModel| {
            let receiver_sent_next = head
                .receivers
                .iter()
                .any(|r| r.components.contains(&model.sender.component));
            let label_reappears = head
                .intent
                .taint_labels()
                .intersects(&model.intent.taint_labels());
            receiver_sent_next && label_reappears
        });
        if links {
            let head = out.last_mut().expect("checked non-empty");
            // head keeps sender, candidates and taint data; tail provides
            // receiver side (sinks, starts)
            let hop = format!(
                "intent#{} forwarded by {} to {}",
                model.intent.intent_id,
                model.sender.component,
                model
                    .receivers
                    .iter()
                    .flat_map(|r| r.components.iter())
                    .map(ComponentId::to_string)
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            head.provenance.push(hop);
            head.receivers = model.receivers;
            attribute(head, meta, catalogs, options.ignore_sinks);
        } else {
            out.push(model);
        }
    }
    out
}

fn source_of(model: &IccModel, label: &TaintLabel) -> (ComponentId, String) {
    for flow in &model.resolved {
        if flow.label == *label {
            return (flow.source_component.clone(), flow.source_package.clone());
        }
    }
    (model.sender.component.clone(), model.sender.package.clone())
}

/// How a consumed label got into the receiver's hands.
fn mediation_of(receiver: &ReceiverInfo, label: &TaintLabel) -> Option<LoadKind> {
    receiver
        .loads
        .iter()
        .find(|load| load.labels.contains(label))
        .map(|load| load.kind.clone())
}

/// Resolve the original source of tainted data the model's receivers
/// consumed. `prior` are the models built before this one, already traced.
/// Returns the resolved flows, unresolved labels, and provenance lines.
pub fn trace_bypass_sources(model: &mut IccModel, prior: &[IccModel]) {
    let intent_labels = model.intent.taint_labels();
    let mut consumed: Vec<(TaintLabel, Option<LoadKind>)> = Vec::new();
    let mut seen = BTreeSet::new();
    for receiver in &model.receivers {
        for sink in &receiver.sinks {
            for arg in &sink.args {
                for label in arg.iter() {
                    if seen.insert(label.clone()) {
                        consumed.push((label.clone(), mediation_of(receiver, label)));
                    }
                }
            }
        }
    }

    for (label, mediation) in consumed {
        if intent_labels.contains(&label) {
            // carried by this model's own intent: the source is the sender
            continue;
        }

        // chained hop: a prior model whose receiver component is this
        // model's sender and whose intent carried the label; store-mediated
        // flows must also agree on the mediation
        let chained = prior.iter().find(|p| {
            let receiver_matches = p
                .receivers
                .iter()
                .any(|r| r.components.contains(&model.sender.component));
            let carried = p.intent.taint_labels().contains(&label);
            receiver_matches && carried && store_gate(p, &label, &mediation)
        });
        // fallback: any prior model whose intent carried the label; label
        // identity includes the origin component, so this cannot collide
        let matched = chained.or_else(|| {
            prior
                .iter()
                .find(|p| p.intent.taint_labels().contains(&label))
        });

        match matched {
            Some(p) => {
                let (source_component, source_package) = source_of(p, &label);
                let via = mediation
                    .clone()
                    .unwrap_or(LoadKind::AppObj {
                        field: String::new(),
                    });
                model.provenance.push(provenance_line(
                    &label,
                    p,
                    &source_component,
                    &mediation,
                ));
                model.resolved.push(ResolvedFlow {
                    label,
                    via,
                    source_model: p.index,
                    source_component,
                    source_package,
                });
            }
            None => {
                model.unresolved.push(label.clone());
                model
                    .provenance
                    .push(format!("unresolved source for label {label}"));
            }
        }
    }
}

/// Shared-preference flows match on the exact (store, key) pair: the prior
/// model's window must contain a store to the same slot carrying the label.
fn store_gate(prior: &IccModel, label: &TaintLabel, mediation: &Option<LoadKind>) -> bool {
    match mediation {
        Some(LoadKind::Shared { store, key }) => prior.receivers.iter().any(|r| {
            r.stores.iter().any(|s| {
                s.kind
                    == LoadKind::Shared {
                        store: store.clone(),
                        key: key.clone(),
                    }
                    && s.labels.contains(label)
            })
        }),
        // application-object flows and plain chained hops match on the
        // label set directly
        _ => true,
    }
}

fn provenance_line(
    label: &TaintLabel,
    prior: &IccModel,
    source: &ComponentId,
    mediation: &Option<LoadKind>,
) -> String {
    let via = match mediation {
        Some(LoadKind::Shared { store, key }) => format!("shared store {store}/{key}"),
        Some(LoadKind::AppObj { field }) => format!("application object field {field}"),
        None => "a forwarded value".to_string(),
    };
    format!(
        "label {label} reached this receiver through {via}; originally sent by {source} with intent#{}",
        prior.intent.intent_id
    )
}

/// Fold resolved flows into the model: recompute receiver attributes as if
/// the traced data had arrived with the intent, and move the sender
/// attribution to the original source when the model's own intent carried
/// no taint.
pub fn improve_model(
    model: &mut IccModel,
    meta: &AppMetadata,
    catalogs: &Catalogs,
    options: AnalyzeOptions,
) {
    if model.intent.taint_labels().is_empty() {
        if let Some(flow) = model.resolved.first() {
            if let Some(app) = meta.app_of(&flow.source_package) {
                model.sender = SenderInfo {
                    process_id: app.process_id,
                    package: app.package.clone(),
                    component: flow.source_component.clone(),
                    app_components: app.components.iter().map(|c| c.id.clone()).collect(),
                    permissions: app.permissions.clone(),
                    permissions_required: BTreeSet::new(),
                    permissions_lacked: BTreeSet::new(),
                    source_methods: BTreeSet::new(),
                };
            }
        }
    }
    attribute(model, meta, catalogs, options.ignore_sinks);
}

/// The five identification rules, evaluated strictly in order; the first
/// match wins. Intra-app models (sender and receiver in the same app) and
/// deliveries to the system resolver are benign: only paths between two
/// different apps can carry these threats.
pub fn classify(model: &IccModel) -> ThreatVerdict {
    let mut verdict = ThreatVerdict {
        model_index: model.index,
        sender_package: model.sender.package.clone(),
        sender_component: model.sender.component.clone(),
        receiver_package: None,
        receiver_components: Vec::new(),
        threat: ThreatType::None,
        matched_case: None,
        evidence: Vec::new(),
        provenance: model.provenance.clone(),
    };

    for receiver in &model.receivers {
        if receiver.package == model.sender.package || receiver.package == SYSTEM_PACKAGE {
            continue;
        }
        let sender_in_candidates = model
            .sender
            .app_components
            .iter()
            .find(|c| model.candidates.contains(c));
        let sender_lacked = &receiver.sender_permissions_lacked;
        let receiver_lacked = &receiver.permissions_lacked;

        let matched: Option<(u8, ThreatType, Vec<(String, String)>)> =
            if let Some(own) = sender_in_candidates {
                Some((
                    1,
                    ThreatType::Hijacking,
                    vec![
                        ("sender.candidate".into(), own.to_string()),
                        (
                            "candidates".into(),
                            join_components(&model.candidates),
                        ),
                        (
                            "receiver.components".into(),
                            join_components(&receiver.components),
                        ),
                    ],
                ))
            } else if receiver.taint_leak && sender_lacked.is_empty() {
                Some((
                    2,
                    ThreatType::Hijacking,
                    vec![
                        ("receiver.taint_leak".into(), "true".into()),
                        ("sender.permissions_lacked".into(), "{}".into()),
                        (
                            "receiver.sink_methods".into(),
                            join_set(&receiver.sink_methods),
                        ),
                    ],
                ))
            } else if !sender_lacked.is_empty() && receiver_lacked.is_empty() {
                Some((
                    3,
                    ThreatType::Spoofing,
                    vec![
                        ("sender.permissions_lacked".into(), join_set(sender_lacked)),
                        ("receiver.permissions_lacked".into(), "{}".into()),
                    ],
                ))
            } else if receiver.start_compt && receiver_lacked.is_empty() {
                Some((
                    4,
                    ThreatType::Spoofing,
                    vec![
                        ("receiver.start_compt".into(), "true".into()),
                        ("receiver.permissions_lacked".into(), "{}".into()),
                    ],
                ))
            } else if !sender_lacked.is_empty() && !receiver_lacked.is_empty() {
                Some((
                    5,
                    ThreatType::Collusion,
                    vec![
                        ("sender.permissions_lacked".into(), join_set(sender_lacked)),
                        (
                            "receiver.permissions_lacked".into(),
                            join_set(receiver_lacked),
                        ),
                    ],
                ))
            } else {
                None
            };

        if let Some((case, threat, evidence)) = matched {
            verdict.receiver_package = Some(receiver.package.clone());
            verdict.receiver_components = receiver.components.clone();
            verdict.threat = threat;
            verdict.matched_case = Some(case);
            verdict.evidence = evidence;
            return verdict;
        }
    }

    if let Some(first) = model
        .receivers
        .iter()
        .find(|r| r.package != SYSTEM_PACKAGE)
    {
        verdict.receiver_package = Some(first.package.clone());
        verdict.receiver_components = first.components.clone();
    }
    verdict
}

fn join_components(components: &[ComponentId]) -> String {
    components
        .iter()
        .map(ComponentId::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

fn join_set(set: &BTreeSet<String>) -> String {
    set.iter().cloned().collect::<Vec<_>>().join(", ")
}

/// Full pipeline: parse the log, build, deflate, trace each model against
/// the ones before it, and classify. Verdicts come back in model order.
pub fn analyze(
    log_text: &str,
    meta: &AppMetadata,
    focus: Option<&BTreeSet<u32>>,
    catalogs: &Catalogs,
    options: AnalyzeOptions,
) -> Result<AnalysisOutcome, AnalyzerError> {
    let started = Instant::now();
    let parsed = parse_log(log_text, focus)?;
    let parse_ms = started.elapsed().as_secs_f64() * 1e3;

    let build_started = Instant::now();
    let models = build_models(&parsed.events, meta, catalogs)?;
    let raw_model_count = models.len();
    let build_ms = build_started.elapsed().as_secs_f64() * 1e3;

    let deflate_started = Instant::now();
    let mut models = deflate_models(models, meta, catalogs, options);
    let deflate_ms = deflate_started.elapsed().as_secs_f64() * 1e3;

    let trace_started = Instant::now();
    for i in 0..models.len() {
        let (prior, rest) = models.split_at_mut(i);
        let model = &mut rest[0];
        trace_bypass_sources(model, prior);
        improve_model(model, meta, catalogs, options);
    }
    let trace_ms = trace_started.elapsed().as_secs_f64() * 1e3;

    let classify_started = Instant::now();
    let verdicts = models.iter().map(classify).collect();
    let classify_ms = classify_started.elapsed().as_secs_f64() * 1e3;

    Ok(AnalysisOutcome {
        raw_model_count,
        models,
        verdicts,
        skipped_unknown: parsed.skipped_unknown,
        timings: StageTimings {
            parse_ms,
            build_ms,
            deflate_ms,
            trace_ms,
            classify_ms,
            total_ms: started.elapsed().as_secs_f64() * 1e3,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logfmt::write_log;
    use crate::monitor::{run_scenario, SimOptions};
    use crate::scenario::{corpus_scenario, parse_scenario};

    fn catalogs() -> Catalogs {
        Catalogs::default()
    }

    /// run a corpus scenario end to end and return the outcome
    fn analyze_scenario(name: &str, options: AnalyzeOptions) -> AnalysisOutcome {
        let cat = catalogs();
        let scenario = corpus_scenario(name, &cat).expect("scenario exists");
        let result = run_scenario(&scenario, &cat, SimOptions { test_mode: true });
        let meta = AppMetadata::from_scenario(&scenario);
        let text = write_log(&result.log);
        analyze(&text, &meta, Some(&meta.pids()), &cat, options).expect("analysis succeeds")
    }

    #[test]
    fn empty_log_builds_no_models() {
        let cat = catalogs();
        let meta = AppMetadata {
            format: "ICCMETA".into(),
            version: 1,
            apps: vec![],
        };
        let outcome = analyze("ICCLOG\t1\t0\n", &meta, None, &cat, AnalyzeOptions::default())
            .expect("empty log analyzes");
        assert_eq!(outcome.raw_model_count, 0);
        assert!(outcome.verdicts.is_empty());
    }

    #[test]
    fn deliver_with_unknown_intent_id_is_a_structural_error() {
        let cat = catalogs();
        let meta = AppMetadata {
            format: "ICCMETA".into(),
            version: 1,
            apps: vec![],
        };
        let text = "ICCLOG\t1\t0\n1\t1000\tDELIVER\t42\tcom.a/Main\n";
        let err = analyze(text, &meta, None, &cat, AnalyzeOptions::default()).unwrap_err();
        assert!(matches!(
            err,
            AnalyzerError::UnknownIntentId { intent_id: 42, .. }
        ));
    }

    #[test]
    fn chain_produces_three_raw_models_and_one_after_deflation() {
        let outcome = analyze_scenario("chain_four_components", AnalyzeOptions::default());
        assert_eq!(outcome.raw_model_count, 3);
        assert_eq!(outcome.models.len(), 1);
        let model = &outcome.models[0];
        assert_eq!(model.sender.component, ComponentId::new("com.chain.one", "C1"));
        let labels = model.intent.taint_labels();
        assert_eq!(labels.len(), 1);
        assert_eq!(
            labels.iter().next().unwrap().origin_component,
            ComponentId::new("com.chain.one", "C1")
        );
        let receiver = &model.receivers[0];
        assert_eq!(receiver.package, "com.chain.four");
        assert!(receiver.sink_methods.contains("log"));
        assert_eq!(outcome.verdicts[0].threat, ThreatType::Hijacking);
    }

    // Deflation soundness: the condensed model keeps the head's source
    // labels and the tail's sinks, so the (original source, final sink)
    // pairs derivable before and after deflation coincide.
    #[test]
    fn chain_deflation_preserves_source_and_final_sink() {
        let cat = catalogs();
        let scenario = corpus_scenario("chain_four_components", &cat).unwrap();
        let result = run_scenario(&scenario, &cat, SimOptions { test_mode: true });
        let meta = AppMetadata::from_scenario(&scenario);
        let text = write_log(&result.log);
        let parsed = parse_log(&text, None).unwrap();
        let raw = build_models(&parsed.events, &meta, &cat).unwrap();

        // derive (source label, final sink) pairs from the raw models by
        // walking the chain manually
        let head_labels = raw[0].intent.taint_labels();
        let tail_sinks = raw[2].receivers[0].sink_methods.clone();

        let deflated = deflate_models(raw, &meta, &cat, AnalyzeOptions::default());
        assert_eq!(deflated.len(), 1);
        assert_eq!(deflated[0].intent.taint_labels(), head_labels);
        assert_eq!(deflated[0].receivers[0].sink_methods, tail_sinks);
    }

    #[test]
    fn unrelated_models_pass_through_deflation_untouched() {
        let cat = catalogs();
        let doc = "\
scenario v1 unrelated

app com.a pid=1 perms=ACCESS_FINE_LOCATION
component A kind=activity exported
on_launch
  acquire_source getLatitude -> $x
  put_extra p $x
  send_intent via=activity action=one.GO

app com.b pid=2 perms=READ_PHONE_STATE
component B kind=activity exported
filter actions=one.GO
on_receive
  get_extra p -> $v
  call_sink log $v
component B2 kind=activity exported
on_launch
  acquire_source getDeviceId -> $y
  put_extra q $y
  send_intent via=activity action=two.GO

app com.c pid=3
component C kind=activity exported
filter actions=two.GO
on_receive
  get_extra q -> $v
  call_sink log $v

launch com.a/A
launch com.b/B2
expect com.a/A -> com.b/B hijacking
expect com.b/B2 -> com.c/C hijacking
";
        let scenario = parse_scenario(doc, &cat).unwrap();
        let result = run_scenario(&scenario, &cat, SimOptions { test_mode: true });
        let meta = AppMetadata::from_scenario(&scenario);
        let parsed = parse_log(&write_log(&result.log), None).unwrap();
        let raw = build_models(&parsed.events, &meta, &cat).unwrap();
        assert_eq!(raw.len(), 2);
        let sender_components: Vec<_> = raw.iter().map(|m| m.sender.component.clone()).collect();
        let deflated = deflate_models(raw, &meta, &cat, AnalyzeOptions::default());
        assert_eq!(deflated.len(), 2);
        assert_eq!(
            deflated
                .iter()
                .map(|m| m.sender.component.clone())
                .collect::<Vec<_>>(),
            sender_components
        );
    }

    #[test]
    fn resolver_pair_merges_into_one_model_with_original_sender() {
        let outcome = analyze_scenario("resolver_chooser", AnalyzeOptions::default());
        assert_eq!(outcome.raw_model_count, 2, "original send plus resolver forward");
        assert_eq!(outcome.models.len(), 1);
        let model = &outcome.models[0];
        assert_eq!(
            model.sender.component,
            ComponentId::new("com.victim.share", "Main")
        );
        // real candidates survive the merge, exposing the sender's own
        // viewer for the interception rule
        assert!(model
            .candidates
            .contains(&ComponentId::new("com.victim.share", "Viewer")));
        let verdict = &outcome.verdicts[0];
        assert_eq!(verdict.threat, ThreatType::Hijacking);
        assert_eq!(verdict.matched_case, Some(1));
    }

    #[test]
    fn collusion_scenario_has_the_expected_lacked_permissions() {
        let outcome = analyze_scenario("collusion_deviceid_file", AnalyzeOptions::default());
        assert_eq!(outcome.models.len(), 1);
        let model = &outcome.models[0];
        // hand-computed from the scenario's declared permissions: the
        // sender lacks the receiver's file-write permission, the receiver
        // lacks the sender's phone-state permission
        assert_eq!(
            model.sender.permissions_lacked,
            ["WRITE_EXTERNAL_STORAGE".to_string()].into()
        );
        assert_eq!(
            model.receivers[0].permissions_lacked,
            ["READ_PHONE_STATE".to_string()].into()
        );
        let verdict = &outcome.verdicts[0];
        assert_eq!(verdict.threat, ThreatType::Collusion);
        assert_eq!(verdict.matched_case, Some(5));
    }

    #[test]
    fn table_analog_verdicts() {
        for (name, expected, case) in [
            ("hijack_chooser_log", ThreatType::Hijacking, 1),
            ("spoof_write", ThreatType::Spoofing, 3),
            ("collusion_deviceid_file", ThreatType::Collusion, 5),
        ] {
            let outcome = analyze_scenario(name, AnalyzeOptions::default());
            let threats: Vec<_> = outcome
                .verdicts
                .iter()
                .filter(|v| v.threat != ThreatType::None)
                .collect();
            assert_eq!(threats.len(), 1, "{name}: expected exactly one threat");
            assert_eq!(threats[0].threat, expected, "{name}");
            assert_eq!(threats[0].matched_case, Some(case), "{name}");
        }
        for name in ["benign_location_unused", "benign_url_internet"] {
            let outcome = analyze_scenario(name, AnalyzeOptions::default());
            assert!(
                outcome.verdicts.iter().all(|v| v.threat == ThreatType::None),
                "{name}: expected no threats"
            );
        }
    }

    #[test]
    fn shareference_bypass_resolves_to_the_external_sender() {
        let outcome = analyze_scenario("ourdev_sender0_shareference", AnalyzeOptions::default());
        assert_eq!(outcome.models.len(), 2);
        // the first model (sender -> CompA) is benign: CompA only stores
        assert_eq!(outcome.verdicts[0].threat, ThreatType::None);
        // the second model (CompA -> CompB) resolves to the original sender
        let verdict = &outcome.verdicts[1];
        assert_eq!(verdict.threat, ThreatType::Hijacking);
        assert_eq!(verdict.matched_case, Some(2));
        assert_eq!(
            verdict.sender_component,
            ComponentId::new("com.ourdev.sender0", "Main")
        );
        assert!(verdict
            .provenance
            .iter()
            .any(|line| line.contains("settings/deviceId")));
        assert!(verdict
            .provenance
            .iter()
            .any(|line| line.contains("com.ourdev.sender0/Main")));
    }

    #[test]
    fn application_object_bypass_resolves_to_the_external_sender() {
        let outcome = analyze_scenario("ourdev_sender0_application", AnalyzeOptions::default());
        let verdict = outcome
            .verdicts
            .iter()
            .find(|v| v.threat != ThreatType::None)
            .expect("threat found");
        assert_eq!(verdict.threat, ThreatType::Hijacking);
        assert_eq!(
            verdict.sender_component,
            ComponentId::new("com.ourdev.sender0", "Main")
        );
        assert!(verdict
            .provenance
            .iter()
            .any(|line| line.contains("application object field leaked")));
    }

    #[test]
    fn single_hop_taint_is_attributed_to_the_models_own_sender() {
        let outcome = analyze_scenario("hijack_location", AnalyzeOptions::default());
        assert_eq!(outcome.models.len(), 1);
        let model = &outcome.models[0];
        // the label came with the intent, so no resolved flows are needed
        assert!(model.resolved.is_empty());
        assert!(model.unresolved.is_empty());
        let verdict = &outcome.verdicts[0];
        assert_eq!(verdict.threat, ThreatType::Hijacking);
        assert_eq!(verdict.matched_case, Some(2));
        assert_eq!(
            verdict.sender_component,
            ComponentId::new("com.victim", "Main")
        );
    }

    #[test]
    fn coincidental_match_is_benign_unless_sinks_are_ignored() {
        let normal = analyze_scenario("coincidental_format", AnalyzeOptions::default());
        assert!(normal.verdicts.iter().all(|v| v.threat == ThreatType::None));

        let degraded = analyze_scenario(
            "coincidental_format",
            AnalyzeOptions { ignore_sinks: true },
        );
        assert!(
            degraded.verdicts.iter().any(|v| v.threat != ThreatType::None),
            "sink-blind analysis should flag the coincidental match"
        );
    }

    #[test]
    fn raw_model_count_equals_send_intent_count() {
        for name in [
            "hijack_location",
            "chain_four_components",
            "resolver_chooser",
            "ourdev_sender0_shareference",
        ] {
            let cat = catalogs();
            let scenario = corpus_scenario(name, &cat).unwrap();
            let result = run_scenario(&scenario, &cat, SimOptions { test_mode: true });
            let sends = result
                .log
                .events
                .iter()
                .filter(|e| matches!(e.body, EventBody::SendIntent { .. }))
                .count();
            let outcome = analyze_scenario(name, AnalyzeOptions::default());
            assert_eq!(outcome.raw_model_count, sends, "{name}");
        }
    }

    #[test]
    fn irrelevant_permissions_do_not_change_verdicts() {
        let cat = catalogs();
        let scenario = corpus_scenario("collusion_deviceid_file", &cat).unwrap();
        let result = run_scenario(&scenario, &cat, SimOptions { test_mode: true });
        let text = write_log(&result.log);
        let meta = AppMetadata::from_scenario(&scenario);
        let base = analyze(&text, &meta, None, &cat, AnalyzeOptions::default()).unwrap();

        let mut padded = meta.clone();
        for app in &mut padded.apps {
            app.permissions.insert("TOTALLY_UNRELATED_PERMISSION".into());
        }
        let padded_outcome = analyze(&text, &padded, None, &cat, AnalyzeOptions::default()).unwrap();
        let verdicts = |o: &AnalysisOutcome| {
            o.verdicts
                .iter()
                .map(|v| (v.threat, v.matched_case))
                .collect::<Vec<_>>()
        };
        assert_eq!(verdicts(&base), verdicts(&padded_outcome));
    }
}
