//! Brute-force differential oracle for the analysis pipeline.
//!
//! Works directly on the ground-truth exchange records the simulator keeps
//! while running — never on logs or built models — and applies the five
//! classification rules to flows enumerated from that state. The pipeline
//! under test goes the long way around (serialize the log, parse it, build
//! models, deflate, trace, classify); both must land on identical verdicts.

use std::collections::BTreeSet;

use iccflow::catalog::Catalogs;
use iccflow::model::{ComponentId, LabelSet, TaintLabel, ThreatType};
use iccflow::monitor::{GroundTruth, LoadKind, ReceiverFact};
use iccflow::scenario::Scenario;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub sender: ComponentId,
    pub receiver_package: Option<String>,
    pub threat: ThreatType,
    pub case: Option<u8>,
}

struct Ex<'a> {
    sender: ComponentId,
    candidates: Vec<ComponentId>,
    intent_labels: LabelSet,
    receivers: Vec<ComponentId>,
    facts: Vec<&'a ReceiverFact>,
    /// label -> (source component, source package), filled in exchange order
    resolved: Vec<(TaintLabel, ComponentId, String)>,
}

fn sorted_packages(receivers: &[ComponentId]) -> Vec<String> {
    receivers
        .iter()
        .map(|c| c.package.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn source_of(ex: &Ex<'_>, label: &TaintLabel) -> (ComponentId, String) {
    for (l, comp, pkg) in &ex.resolved {
        if l == label {
            return (comp.clone(), pkg.clone());
        }
    }
    (ex.sender.clone(), ex.sender.package.clone())
}

fn store_gate(prior: &Ex<'_>, label: &TaintLabel, mediation: &Option<LoadKind>) -> bool {
    match mediation {
        Some(LoadKind::Shared { store, key }) => prior.facts.iter().any(|fact| {
            fact.stores.iter().any(|s| {
                s.kind
                    == LoadKind::Shared {
                        store: store.clone(),
                        key: key.clone(),
                    }
                    && s.labels.contains(label)
            })
        }),
        _ => true,
    }
}

pub fn verdicts(scenario: &Scenario, truth: &GroundTruth, catalogs: &Catalogs) -> Vec<Verdict> {
    // condense adjacent exchanges exactly like model deflation: the next
    // intent was sent by a component the previous exchange delivered to
    // and a taint label reappears
    let mut finals: Vec<Ex<'_>> = Vec::new();
    for exchange in &truth.exchanges {
        let intent_labels = exchange
            .intent_labels
            .values()
            .fold(LabelSet::empty(), |acc, l| acc.union(l));
        let ex = Ex {
            sender: exchange.sender.clone(),
            candidates: exchange.candidates.clone(),
            intent_labels,
            receivers: exchange.receivers.clone(),
            facts: exchange.receiver_facts.iter().collect(),
            resolved: Vec::new(),
        };
        if let Some(head) = finals.last_mut() {
            if head.receivers.contains(&ex.sender)
                && head.intent_labels.intersects(&ex.intent_labels)
            {
                head.receivers = ex.receivers;
                head.facts = ex.facts;
                continue;
            }
        }
        finals.push(ex);
    }

    // resolve consumed labels in exchange order so later exchanges can
    // inherit earlier source attributions
    for i in 0..finals.len() {
        let (prior, rest) = finals.split_at_mut(i);
        let ex = &mut rest[0];

        let packages = sorted_packages(&ex.receivers);
        let mut seen: BTreeSet<TaintLabel> = BTreeSet::new();
        let mut consumed: Vec<(TaintLabel, Option<LoadKind>)> = Vec::new();
        for pkg in &packages {
            let facts: Vec<&&ReceiverFact> = ex
                .facts
                .iter()
                .filter(|f| f.component.package == *pkg)
                .collect();
            for fact in &facts {
                for sink in &fact.sinks {
                    for arg in &sink.args {
                        for label in arg.iter() {
                            if seen.insert(label.clone()) {
                                let mediation = facts
                                    .iter()
                                    .flat_map(|f| f.loads.iter())
                                    .find(|l| l.labels.contains(label))
                                    .map(|l| l.kind.clone());
                                consumed.push((label.clone(), mediation));
                            }
                        }
                    }
                }
            }
        }

        for (label, mediation) in consumed {
            if ex.intent_labels.contains(&label) {
                continue;
            }
            let chained = prior.iter().find(|p| {
                p.receivers.contains(&ex.sender)
                    && p.intent_labels.contains(&label)
                    && store_gate(p, &label, &mediation)
            });
            let matched =
                chained.or_else(|| prior.iter().find(|p| p.intent_labels.contains(&label)));
            if let Some(p) = matched {
                let (comp, pkg) = source_of(p, &label);
                ex.resolved.push((label, comp, pkg));
            }
        }
    }

    // classify each exchange with the five ordered rules
    let mut out = Vec::new();
    for ex in &finals {
        let (sender_comp, sender_pkg) = if ex.intent_labels.is_empty() && !ex.resolved.is_empty() {
            (ex.resolved[0].1.clone(), ex.resolved[0].2.clone())
        } else {
            (ex.sender.clone(), ex.sender.package.clone())
        };
        let sender_app = scenario
            .app(&sender_pkg)
            .expect("sender app is part of the scenario");
        let sender_perms = &sender_app.permissions;
        let sender_components: Vec<ComponentId> =
            sender_app.components.iter().map(|c| c.id.clone()).collect();

        let mut effective = ex.intent_labels.clone();
        for (label, _, _) in &ex.resolved {
            effective.insert(label.clone());
        }
        let required_for_data: BTreeSet<String> = effective
            .iter()
            .filter_map(|l| catalogs.methods.source_permission(&l.source_method))
            .map(str::to_string)
            .collect();

        let packages = sorted_packages(&ex.receivers);
        let mut verdict = None;
        for pkg in &packages {
            if *pkg == sender_pkg || pkg == "android" {
                continue;
            }
            let app = scenario.app(pkg).expect("receiver app is in the scenario");
            let facts: Vec<&&ReceiverFact> = ex
                .facts
                .iter()
                .filter(|f| f.component.package == *pkg)
                .collect();
            let sink_perms: BTreeSet<String> = facts
                .iter()
                .flat_map(|f| f.sinks.iter())
                .filter_map(|s| catalogs.methods.sink(&s.method))
                .filter_map(|s| s.permission.clone())
                .collect();
            let sender_lacked: BTreeSet<String> =
                sink_perms.difference(sender_perms).cloned().collect();
            let receiver_lacked: BTreeSet<String> = required_for_data
                .difference(&app.permissions)
                .cloned()
                .collect();
            let start_compt = facts
                .iter()
                .flat_map(|f| f.starts.iter())
                .any(|s| s.same_app && !s.target_exported);
            let taint_leak = facts.iter().flat_map(|f| f.sinks.iter()).any(|s| {
                catalogs
                    .methods
                    .sink(&s.method)
                    .is_some_and(|spec| spec.exfiltrating)
                    && s.args.iter().any(|a| a.intersects(&effective))
            });

            let matched = if sender_components.iter().any(|c| ex.candidates.contains(c)) {
                Some((ThreatType::Hijacking, 1))
            } else if taint_leak && sender_lacked.is_empty() {
                Some((ThreatType::Hijacking, 2))
            } else if !sender_lacked.is_empty() && receiver_lacked.is_empty() {
                Some((ThreatType::Spoofing, 3))
            } else if start_compt && receiver_lacked.is_empty() {
                Some((ThreatType::Spoofing, 4))
            } else if !sender_lacked.is_empty() && !receiver_lacked.is_empty() {
                Some((ThreatType::Collusion, 5))
            } else {
                None
            };
            if let Some((threat, case)) = matched {
                verdict = Some(Verdict {
                    sender: sender_comp.clone(),
                    receiver_package: Some(pkg.clone()),
                    threat,
                    case: Some(case),
                });
                break;
            }
        }
        out.push(verdict.unwrap_or_else(|| Verdict {
            sender: sender_comp,
            receiver_package: packages.iter().find(|p| *p != "android").cloned(),
            threat: ThreatType::None,
            case: None,
        }));
    }
    out
}
