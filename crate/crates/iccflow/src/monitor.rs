//! Deterministic scenario interpreter: the Android intent mechanism plus
//! taint monitoring, emitting a versioned taint log.
//!
//! The interpreter is a single-threaded event loop. Each launch-order entry
//! runs its component's `on_launch` script; sent intents are resolved to
//! candidates, delivered through a FIFO queue, and each delivery triggers
//! exactly one `on_receive` activation. Identical scenarios produce
//! byte-identical logs (the header timestamp is fixed to 0 in test mode).
//!
//! Besides the log, a run returns a [`GroundTruth`] record of every intent
//! exchange as the interpreter actually performed it (sender, candidates,
//! receivers, labels, receiver-side consumption). Tests use it to check the
//! log-based analysis pipeline against flows enumerated directly from
//! simulator state.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::catalog::{Catalogs, SYSTEM_PID};
use crate::logfmt::{
    resolver_component, system_app, EventBody, IntentSummary, LogEvent, TaintLog,
};
use crate::model::{AppSpec, ComponentId, ComponentKind, IntentRecord, LabelSet};
use crate::scenario::{Scenario, Step, Trigger, ValueRef};
use crate::taint::{add_taint_to_data, propagate, PropagateOp, TaintedValue};

/// Mutable world the interpreter runs against. Shared-preference stores and
/// application objects are per app: components of one app share them,
/// components of different apps never do.
#[derive(Debug)]
pub struct WorldState {
    pub apps: Vec<AppSpec>,
    shared_stores: BTreeMap<String, BTreeMap<(String, String), TaintedValue>>,
    app_objects: BTreeMap<String, BTreeMap<String, TaintedValue>>,
    event_seq: u64,
    intent_seq: u64,
}

impl WorldState {
    pub fn from_scenario(scenario: &Scenario) -> Self {
        let mut apps = vec![system_app()];
        apps.extend(scenario.apps.iter().cloned());
        Self {
            apps,
            shared_stores: BTreeMap::new(),
            app_objects: BTreeMap::new(),
            event_seq: 0,
            intent_seq: 0,
        }
    }

    pub fn app_of(&self, package: &str) -> Option<&AppSpec> {
        self.apps.iter().find(|a| a.package == package)
    }

    pub fn component(&self, id: &ComponentId) -> Option<(&AppSpec, &crate::model::ComponentSpec)> {
        let app = self.app_of(&id.package)?;
        let comp = app.component(&id.name)?;
        Some((app, comp))
    }

    fn next_seq(&mut self) -> u64 {
        self.event_seq += 1;
        self.event_seq
    }

    fn next_intent_id(&mut self) -> u64 {
        self.intent_seq += 1;
        self.intent_seq
    }
}

fn matches_optional(value: &Option<String>, declared: &BTreeSet<String>) -> bool {
    match value {
        Some(v) => declared.contains(v),
        None => declared.is_empty(),
    }
}

/// All components an intent can resolve to, in canonical order.
///
/// An explicit intent resolves to exactly its target (empty when the target
/// does not exist). An implicit intent matches every exported component of
/// the intent's dispatch kind with a filter such that the intent action is
/// among the filter actions, the intent categories are a subset of the
/// filter categories, and mime type and scheme each either match a declared
/// value or are absent on both sides. Order: filter priority descending,
/// then package, then component name.
pub fn find_all_candidates(intent: &IntentRecord, world: &WorldState) -> Vec<ComponentId> {
    if let Some(target) = &intent.explicit_target {
        return match world.component(target) {
            Some(_) => vec![target.clone()],
            None => Vec::new(),
        };
    }
    let mut matched: Vec<(i32, ComponentId)> = Vec::new();
    for app in &world.apps {
        for comp in &app.components {
            if comp.kind != intent.dispatch || !comp.exported {
                continue;
            }
            let best = comp
                .filters
                .iter()
                .filter(|f| {
                    intent
                        .action
                        .as_ref()
                        .is_some_and(|a| f.actions.contains(a))
                        && intent.categories.is_subset(&f.categories)
                        && matches_optional(&intent.mime_type, &f.mime_types)
                        && matches_optional(&intent.scheme, &f.data_schemes)
                })
                .map(|f| f.priority)
                .max();
            if let Some(priority) = best {
                matched.push((priority, comp.id.clone()));
            }
        }
    }
    matched.sort_by(|(pa, ca), (pb, cb)| {
        pb.cmp(pa)
            .then_with(|| ca.package.cmp(&cb.package))
            .then_with(|| ca.name.cmp(&cb.name))
    });
    matched.into_iter().map(|(_, id)| id).collect()
}

/// Receiver-selection failures surfaced as scenario errors.
#[derive(Debug, thiserror::Error)]
pub enum ReceiverError {
    #[error("chooser selection {0} is not among the candidates")]
    SelectionNotCandidate(ComponentId),
}

/// Pick the actual receiver(s) from a non-empty candidate list.
///
/// Activities resolve to a single component: the pre-declared chooser
/// selection when one is given, otherwise the highest-priority candidate.
/// Services take the first candidate in canonical order. Broadcasts go to
/// all candidates.
pub fn find_receiver(
    candidates: &[ComponentId],
    kind_of_target: ComponentKind,
    chooser_selection: Option<&ComponentId>,
) -> Result<Vec<ComponentId>, ReceiverError> {
    assert!(!candidates.is_empty(), "find_receiver needs candidates");
    match kind_of_target {
        ComponentKind::Activity => match chooser_selection {
            Some(sel) => {
                if candidates.contains(sel) {
                    Ok(vec![sel.clone()])
                } else {
                    Err(ReceiverError::SelectionNotCandidate(sel.clone()))
                }
            }
            None => Ok(vec![candidates[0].clone()]),
        },
        ComponentKind::Service => Ok(vec![candidates[0].clone()]),
        ComponentKind::BroadcastReceiver => Ok(candidates.to_vec()),
    }
}

/// One intent exchange as the interpreter performed it. A chooser-mediated
/// delivery is recorded as a single logical exchange with `chooser_used`
/// set; the log still carries the two-hop resolver structure.
#[derive(Debug, Clone)]
pub struct Exchange {
    pub intent_id: u64,
    pub sender: ComponentId,
    pub sender_pid: u32,
    pub dispatch: ComponentKind,
    pub explicit: bool,
    pub candidates: Vec<ComponentId>,
    pub chooser_used: bool,
    pub receivers: Vec<ComponentId>,
    pub intent_labels: BTreeMap<String, LabelSet>,
    pub receiver_facts: Vec<ReceiverFact>,
}

/// What one activation caused by an exchange actually did.
#[derive(Debug, Clone)]
pub struct ReceiverFact {
    pub component: ComponentId,
    pub sinks: Vec<SinkFact>,
    pub loads: Vec<LoadFact>,
    pub stores: Vec<StoreFact>,
    pub starts: Vec<StartFact>,
}

impl ReceiverFact {
    fn new(component: ComponentId) -> Self {
        Self {
            component,
            sinks: Vec::new(),
            loads: Vec::new(),
            stores: Vec::new(),
            starts: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SinkFact {
    pub method: String,
    pub args: Vec<LabelSet>,
}

/// Where loaded data came from, for mediation-aware source tracing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LoadKind {
    Shared { store: String, key: String },
    AppObj { field: String },
}

#[derive(Debug, Clone)]
pub struct LoadFact {
    pub kind: LoadKind,
    pub labels: LabelSet,
}

#[derive(Debug, Clone)]
pub struct StoreFact {
    pub kind: LoadKind,
    pub labels: LabelSet,
}

#[derive(Debug, Clone)]
pub struct StartFact {
    pub target: ComponentId,
    pub target_exported: bool,
    pub same_app: bool,
}

/// Flow facts enumerated directly from simulator state during a run.
#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    pub exchanges: Vec<Exchange>,
}

/// Interpreter options.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimOptions {
    /// Fix the log header timestamp to 0 for byte-identical output.
    pub test_mode: bool,
}

/// A finished run: the emitted log plus ground-truth flow facts.
#[derive(Debug)]
pub struct SimResult {
    pub log: TaintLog,
    pub truth: GroundTruth,
}

struct Activation {
    component: ComponentId,
    trigger: Trigger,
    intent: Option<IntentRecord>,
    /// Index into `truth.exchanges` of the exchange that caused this
    /// activation, when it was caused by one.
    cause: Option<usize>,
}

struct Interpreter<'a> {
    scenario: &'a Scenario,
    catalogs: &'a Catalogs,
    world: WorldState,
    events: Vec<LogEvent>,
    truth: GroundTruth,
    queue: VecDeque<Activation>,
    /// Chooser selection of the launch currently draining, not yet consumed.
    chooser: Option<ComponentId>,
}

/// Run a validated scenario to completion.
pub fn run_scenario(scenario: &Scenario, catalogs: &Catalogs, opts: SimOptions) -> SimResult {
    let mut interp = Interpreter {
        scenario,
        catalogs,
        world: WorldState::from_scenario(scenario),
        events: Vec::new(),
        truth: GroundTruth::default(),
        queue: VecDeque::new(),
        chooser: None,
    };
    for entry in &scenario.launch_order {
        interp.chooser = entry.chooser_selection.clone();
        interp.queue.push_back(Activation {
            component: entry.component.clone(),
            trigger: Trigger::OnLaunch,
            intent: None,
            cause: None,
        });
        while let Some(activation) = interp.queue.pop_front() {
            interp.run_activation(activation);
        }
    }
    let timestamp = if opts.test_mode {
        0
    } else {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    };
    SimResult {
        log: TaintLog {
            timestamp,
            events: interp.events,
        },
        truth: interp.truth,
    }
}

impl<'a> Interpreter<'a> {
    fn emit(&mut self, pid: u32, body: EventBody) {
        let seq = self.world.next_seq();
        self.events.push(LogEvent { seq, pid, body });
    }

    fn pid_of(&self, component: &ComponentId) -> u32 {
        self.world
            .app_of(&component.package)
            .map(|a| a.process_id)
            .expect("component app exists in validated scenario")
    }

    fn run_activation(&mut self, activation: Activation) {
        let component = activation.component.clone();
        let pid = self.pid_of(&component);
        if activation.trigger == Trigger::OnLaunch {
            self.emit(
                pid,
                EventBody::Launch {
                    component: component.clone(),
                },
            );
        }
        let Some(script) = self.scenario.script(&component, activation.trigger) else {
            if let Some(cause) = activation.cause {
                self.truth.exchanges[cause]
                    .receiver_facts
                    .push(ReceiverFact::new(component));
            }
            return;
        };
        let steps = script.steps.clone();

        let mut fact = ReceiverFact::new(component.clone());
        let mut registers: BTreeMap<String, TaintedValue> = BTreeMap::new();
        let mut staged_extras: BTreeMap<String, TaintedValue> = BTreeMap::new();
        let resolve = |registers: &BTreeMap<String, TaintedValue>, r: &ValueRef| match r {
            ValueRef::Register(name) => registers
                .get(name)
                .cloned()
                .expect("register discipline validated at parse time"),
            ValueRef::Literal(text) => TaintedValue::untainted(text.clone()),
        };

        for step in &steps {
            match step {
                Step::AcquireSource { method, out } => {
                    let spec = self
                        .catalogs
                        .methods
                        .source(method)
                        .expect("source validated at parse time");
                    let value = add_taint_to_data(
                        &self.catalogs.tags,
                        TaintedValue::untainted(spec.mock_value.clone()),
                        spec.tag,
                        method,
                        &component,
                    )
                    .expect("catalog source tags are registered");
                    self.emit(
                        pid,
                        EventBody::SetTaint {
                            component: component.clone(),
                            method: method.clone(),
                            tag: spec.tag,
                        },
                    );
                    registers.insert(out.clone(), value);
                }
                Step::PutExtra { key, value } => {
                    let value = propagate(PropagateOp::StoreExtra, &[resolve(&registers, value)]);
                    self.emit(
                        pid,
                        EventBody::CheckIntent {
                            component: component.clone(),
                            key: key.clone(),
                            labels: value.labels.clone(),
                        },
                    );
                    staged_extras.insert(key.clone(), value);
                }
                Step::SendIntent(template) => {
                    let intent = IntentRecord {
                        intent_id: self.world.next_intent_id(),
                        dispatch: template.dispatch,
                        explicit_target: template.to.clone(),
                        action: template.action.clone(),
                        categories: template.categories.clone(),
                        mime_type: template.mime_type.clone(),
                        scheme: template.scheme.clone(),
                        extras: std::mem::take(&mut staged_extras),
                    };
                    self.emit(
                        pid,
                        EventBody::SendIntent {
                            component: component.clone(),
                            intent: summarize(&intent),
                        },
                    );
                    self.resolve_and_deliver(intent, &component, pid);
                }
                Step::CallSink { method, args } => {
                    let values: Vec<_> = args.iter().map(|a| resolve(&registers, a)).collect();
                    let labels: Vec<LabelSet> =
                        values.iter().map(|v| v.labels.clone()).collect();
                    self.emit(
                        pid,
                        EventBody::SinkCall {
                            component: component.clone(),
                            method: method.clone(),
                            args: labels.clone(),
                        },
                    );
                    fact.sinks.push(SinkFact {
                        method: method.clone(),
                        args: labels,
                    });
                }
                Step::StoreShared { store, key, value } => {
                    let value =
                        propagate(PropagateOp::StoreShared, &[resolve(&registers, value)]);
                    self.emit(
                        pid,
                        EventBody::StoreShared {
                            component: component.clone(),
                            store: store.clone(),
                            key: key.clone(),
                            labels: value.labels.clone(),
                        },
                    );
                    fact.stores.push(StoreFact {
                        kind: LoadKind::Shared {
                            store: store.clone(),
                            key: key.clone(),
                        },
                        labels: value.labels.clone(),
                    });
                    self.world
                        .shared_stores
                        .entry(component.package.clone())
                        .or_default()
                        .insert((store.clone(), key.clone()), value);
                }
                Step::LoadShared { store, key, out } => {
                    let stored = self
                        .world
                        .shared_stores
                        .get(&component.package)
                        .and_then(|m| m.get(&(store.clone(), key.clone())));
                    let value = match stored {
                        Some(v) => propagate(PropagateOp::LoadShared, &[v.clone()]),
                        None => TaintedValue::untainted("default"),
                    };
                    self.emit(
                        pid,
                        EventBody::LoadShared {
                            component: component.clone(),
                            store: store.clone(),
                            key: key.clone(),
                            labels: value.labels.clone(),
                        },
                    );
                    fact.loads.push(LoadFact {
                        kind: LoadKind::Shared {
                            store: store.clone(),
                            key: key.clone(),
                        },
                        labels: value.labels.clone(),
                    });
                    registers.insert(out.clone(), value);
                }
                Step::StoreAppObj { field, value } => {
                    let value =
                        propagate(PropagateOp::StoreAppObj, &[resolve(&registers, value)]);
                    self.emit(
                        pid,
                        EventBody::StoreAppObj {
                            component: component.clone(),
                            field: field.clone(),
                            labels: value.labels.clone(),
                        },
                    );
                    fact.stores.push(StoreFact {
                        kind: LoadKind::AppObj {
                            field: field.clone(),
                        },
                        labels: value.labels.clone(),
                    });
                    self.world
                        .app_objects
                        .entry(component.package.clone())
                        .or_default()
                        .insert(field.clone(), value);
                }
                Step::LoadAppObj { field, out } => {
                    let stored = self
                        .world
                        .app_objects
                        .get(&component.package)
                        .and_then(|m| m.get(field));
                    let value = match stored {
                        Some(v) => propagate(PropagateOp::LoadAppObj, &[v.clone()]),
                        None => TaintedValue::untainted("default"),
                    };
                    self.emit(
                        pid,
                        EventBody::LoadAppObj {
                            component: component.clone(),
                            field: field.clone(),
                            labels: value.labels.clone(),
                        },
                    );
                    fact.loads.push(LoadFact {
                        kind: LoadKind::AppObj {
                            field: field.clone(),
                        },
                        labels: value.labels.clone(),
                    });
                    registers.insert(out.clone(), value);
                }
                Step::StartComponent { target } => {
                    self.emit(
                        pid,
                        EventBody::StartComponent {
                            component: component.clone(),
                            target: target.clone(),
                        },
                    );
                    let Some((_, spec)) = self.world.component(target) else {
                        self.diag(pid, &component, format!("unknown start target {target}"));
                        continue;
                    };
                    let same_app = target.package == component.package;
                    let exported = spec.exported;
                    fact.starts.push(StartFact {
                        target: target.clone(),
                        target_exported: exported,
                        same_app,
                    });
                    if !same_app && !exported {
                        self.diag(
                            pid,
                            &component,
                            format!("cannot start non-exported {target} from another app"),
                        );
                        continue;
                    }
                    self.queue.push_back(Activation {
                        component: target.clone(),
                        trigger: Trigger::OnLaunch,
                        intent: None,
                        cause: activation.cause,
                    });
                }
                Step::GetExtra { key, out } => {
                    let intent = activation
                        .intent
                        .as_ref()
                        .expect("get_extra only in on_receive scripts");
                    let value = match intent.extras.get(key) {
                        Some(v) => propagate(PropagateOp::LoadExtra, &[v.clone()]),
                        None => TaintedValue::untainted(""),
                    };
                    registers.insert(out.clone(), value);
                }
                Step::Validate { key, pattern } => {
                    let intent = activation
                        .intent
                        .as_ref()
                        .expect("validate only in on_receive scripts");
                    let ok = intent
                        .extras
                        .get(key)
                        .is_some_and(|v| v.value.contains(pattern));
                    if !ok {
                        // Data in the wrong format: the component stops here.
                        break;
                    }
                }
            }
        }

        if let Some(cause) = activation.cause {
            self.truth.exchanges[cause].receiver_facts.push(fact);
        }
    }

    fn diag(&mut self, pid: u32, component: &ComponentId, message: String) {
        self.emit(
            pid,
            EventBody::Diag {
                component: Some(component.clone()),
                message,
            },
        );
    }

    fn resolve_and_deliver(&mut self, intent: IntentRecord, sender: &ComponentId, sender_pid: u32) {
        let mut candidates = find_all_candidates(&intent, &self.world);
        // a non-exported component of another app is unreachable even by
        // explicit intent, so it never enters the candidate list
        if let Some(target) = &intent.explicit_target {
            if target.package != sender.package {
                let exported = self
                    .world
                    .component(target)
                    .is_some_and(|(_, spec)| spec.exported);
                if !exported {
                    candidates.clear();
                    self.diag(
                        sender_pid,
                        sender,
                        format!("explicit target {target} is not exported"),
                    );
                }
            }
        }
        self.emit(
            SYSTEM_PID,
            EventBody::Candidates {
                intent_id: intent.intent_id,
                components: candidates.clone(),
            },
        );
        let mut exchange = Exchange {
            intent_id: intent.intent_id,
            sender: sender.clone(),
            sender_pid,
            dispatch: intent.dispatch,
            explicit: intent.is_explicit(),
            candidates: candidates.clone(),
            chooser_used: false,
            receivers: Vec::new(),
            intent_labels: intent.extra_labels(),
            receiver_facts: Vec::new(),
        };

        if candidates.is_empty() {
            if let Some(target) = &intent.explicit_target {
                if self.world.component(target).is_none() {
                    self.diag(sender_pid, sender, format!("unresolved explicit target {target}"));
                }
            }
            self.truth.exchanges.push(exchange);
            return;
        }

        // The chooser path: an implicit activity intent with several
        // candidates goes through the system resolver, which forwards a new
        // explicit intent to the selected component.
        if intent.dispatch == ComponentKind::Activity
            && !intent.is_explicit()
            && candidates.len() > 1
        {
            match self.chooser.take() {
                Some(selection) => {
                    if !candidates.contains(&selection) {
                        self.diag(
                            sender_pid,
                            sender,
                            format!("chooser selection {selection} is not a candidate"),
                        );
                        self.truth.exchanges.push(exchange);
                        return;
                    }
                    let resolver = resolver_component();
                    self.emit(
                        SYSTEM_PID,
                        EventBody::Deliver {
                            intent_id: intent.intent_id,
                            component: resolver.clone(),
                        },
                    );
                    let forwarded = IntentRecord {
                        intent_id: self.world.next_intent_id(),
                        dispatch: ComponentKind::Activity,
                        explicit_target: Some(selection.clone()),
                        action: intent.action.clone(),
                        categories: intent.categories.clone(),
                        mime_type: intent.mime_type.clone(),
                        scheme: intent.scheme.clone(),
                        extras: intent.extras.clone(),
                    };
                    self.emit(
                        SYSTEM_PID,
                        EventBody::SendIntent {
                            component: resolver.clone(),
                            intent: summarize(&forwarded),
                        },
                    );
                    self.emit(
                        SYSTEM_PID,
                        EventBody::Candidates {
                            intent_id: forwarded.intent_id,
                            components: vec![selection.clone()],
                        },
                    );
                    self.emit(
                        SYSTEM_PID,
                        EventBody::Deliver {
                            intent_id: forwarded.intent_id,
                            component: selection.clone(),
                        },
                    );
                    exchange.chooser_used = true;
                    exchange.receivers = vec![selection.clone()];
                    let cause = self.truth.exchanges.len();
                    self.truth.exchanges.push(exchange);
                    self.queue.push_back(Activation {
                        component: selection,
                        trigger: Trigger::OnReceiveIntent,
                        intent: Some(forwarded),
                        cause: Some(cause),
                    });
                    return;
                }
                None => {
                    self.diag(
                        sender_pid,
                        sender,
                        format!(
                            "no chooser declared for {} activity candidates",
                            candidates.len()
                        ),
                    );
                    // Fall through to the highest-priority candidate.
                }
            }
        }

        let receivers = match find_receiver(&candidates, intent.dispatch, None) {
            Ok(receivers) => receivers,
            Err(e) => {
                self.diag(sender_pid, sender, e.to_string());
                self.truth.exchanges.push(exchange);
                return;
            }
        };
        exchange.receivers = receivers.clone();
        let cause = self.truth.exchanges.len();
        self.truth.exchanges.push(exchange);
        for receiver in receivers {
            self.emit(
                SYSTEM_PID,
                EventBody::Deliver {
                    intent_id: intent.intent_id,
                    component: receiver.clone(),
                },
            );
            self.queue.push_back(Activation {
                component: receiver,
                trigger: Trigger::OnReceiveIntent,
                intent: Some(intent.clone()),
                cause: Some(cause),
            });
        }
    }
}

fn summarize(intent: &IntentRecord) -> IntentSummary {
    IntentSummary {
        intent_id: intent.intent_id,
        dispatch: intent.dispatch,
        explicit_target: intent.explicit_target.clone(),
        action: intent.action.clone(),
        categories: intent.categories.clone(),
        mime_type: intent.mime_type.clone(),
        scheme: intent.scheme.clone(),
        extras: intent.extra_labels(),
    }
}
