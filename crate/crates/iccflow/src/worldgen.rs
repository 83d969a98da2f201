//! Seeded random scenario generator for differential testing and scale
//! measurements.
//!
//! Generated worlds are small (at most 4 apps with up to 3 components and
//! at most 2 launched intents) but cover the interesting surface: implicit
//! and explicit intents of every dispatch kind, multi-candidate broadcasts,
//! missing and invalid chooser declarations, format validation that aborts,
//! permission mixes that hit every classification rule, private-component
//! starts, and split leaks through shared-preference stores and
//! application-object fields.
//!
//! The same seed always yields the same scenario. Scripts follow two
//! restrictions that keep window attribution causal: a script sends at most
//! one intent and only as its last step, and launched scripts only acquire
//! data and send (receivers do the sinking, storing and loading).

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::logfmt::{
    system_app, AppMetadata, EventBody, IntentSummary, LogEvent, TaintLog, META_MAGIC,
    META_VERSION,
};
use crate::model::{
    AppSpec, ComponentId, ComponentKind, ComponentSpec, FilterSpec, LabelSet, TagId, TaintLabel,
};
use crate::scenario::{
    BehaviorScript, IntentTemplate, LaunchEntry, Scenario, Step, Trigger, ValueRef,
};

const PERM_POOL: &[&str] = &[
    "ACCESS_FINE_LOCATION",
    "READ_PHONE_STATE",
    "READ_SMS",
    "SEND_SMS",
    "WRITE_EXTERNAL_STORAGE",
    "INTERNET",
];

/// (source method, permission it implies) — a subset of the default catalog.
const SOURCE_POOL: &[&str] = &[
    "getLastKnownLocation",
    "getDeviceId",
    "getSmsInbox",
    "getUserInput",
];

const SINK_POOL: &[&str] = &[
    "log",
    "writeFile",
    "sendTextMessage",
    "httpGet",
    "showNotification",
];

const ACTION_POOL: &[&str] = &["gen.ACT0", "gen.ACT1", "gen.ACT2"];
const CATEGORY_POOL: &[&str] = &["gen.CAT0"];
const PATTERN_POOL: &[&str] = &["", "867", "zzz"];

fn kind_of(rng: &mut ChaCha8Rng) -> ComponentKind {
    match rng.random_range(0..3) {
        0 => ComponentKind::Activity,
        1 => ComponentKind::Service,
        _ => ComponentKind::BroadcastReceiver,
    }
}

fn random_filter(rng: &mut ChaCha8Rng) -> FilterSpec {
    let mut actions = BTreeSet::new();
    for _ in 0..rng.random_range(1..=2) {
        actions.insert(ACTION_POOL.choose(rng).unwrap().to_string());
    }
    let mut categories = BTreeSet::new();
    if rng.random_bool(0.3) {
        categories.insert(CATEGORY_POOL.choose(rng).unwrap().to_string());
    }
    let mut data_schemes = BTreeSet::new();
    if rng.random_bool(0.2) {
        data_schemes.insert("content".to_string());
    }
    let mut mime_types = BTreeSet::new();
    if rng.random_bool(0.2) {
        mime_types.insert("text/plain".to_string());
    }
    FilterSpec {
        actions,
        categories,
        data_schemes,
        mime_types,
        priority: rng.random_range(-1..=2),
    }
}

struct Builder {
    apps: Vec<AppSpec>,
    behaviors: BTreeMap<ComponentId, Vec<BehaviorScript>>,
    unique: u32,
}

impl Builder {
    fn add_script(&mut self, id: &ComponentId, trigger: Trigger, steps: Vec<Step>) {
        self.behaviors
            .entry(id.clone())
            .or_default()
            .push(BehaviorScript { trigger, steps });
    }

    fn fresh_key(&mut self, prefix: &str) -> String {
        self.unique += 1;
        format!("{prefix}{}", self.unique)
    }
}

/// A plain receiver script: possibly validate, read an extra, and possibly
/// pass it to a sink.
fn receiver_steps(rng: &mut ChaCha8Rng) -> Vec<Step> {
    let mut steps = Vec::new();
    if rng.random_bool(0.25) {
        steps.push(Step::Validate {
            key: "k0".to_string(),
            pattern: PATTERN_POOL.choose(rng).unwrap().to_string(),
        });
    }
    steps.push(Step::GetExtra {
        key: "k0".to_string(),
        out: "v".to_string(),
    });
    if rng.random_bool(0.8) {
        steps.push(Step::CallSink {
            method: SINK_POOL.choose(rng).unwrap().to_string(),
            args: vec![ValueRef::Register("v".to_string())],
        });
    }
    steps
}

/// Generate one random scenario. Identical seeds produce identical worlds.
pub fn random_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut builder = Builder {
        apps: Vec::new(),
        behaviors: BTreeMap::new(),
        unique: 0,
    };

    let app_count = rng.random_range(2..=4);
    for a in 0..app_count {
        let package = format!("com.gen.a{a}");
        let mut permissions = BTreeSet::new();
        for perm in PERM_POOL {
            if rng.random_bool(0.5) {
                permissions.insert(perm.to_string());
            }
        }
        let comp_count = rng.random_range(1..=3usize);
        let mut components = Vec::new();

        // component 0 is the app entry point; it may declare a filter of
        // its own (a decoy candidate for intents it sends) and may receive
        let entry = ComponentId::new(&package, "C0");
        let entry_filters = if rng.random_bool(0.4) {
            vec![random_filter(&mut rng)]
        } else {
            Vec::new()
        };
        components.push(ComponentSpec {
            id: entry.clone(),
            kind: ComponentKind::Activity,
            exported: true,
            filters: entry_filters,
        });
        if rng.random_bool(0.4) {
            let steps = receiver_steps(&mut rng);
            builder.add_script(&entry, Trigger::OnReceiveIntent, steps);
        }

        let mut j = 1;
        while j < comp_count {
            let id = ComponentId::new(&package, format!("C{j}"));
            let roll = rng.random_range(0..10);
            if roll < 2 && j + 1 < comp_count {
                // split-leak pair: this component stores what it received
                // and forwards a bare intent to its partner, which loads
                // the slot and sinks it
                let partner = ComponentId::new(&package, format!("C{}", j + 1));
                let partner_kind = kind_of(&mut rng);
                let (store, key) = ("bstore".to_string(), builder.fresh_key("bk"));
                let use_appobj = rng.random_bool(0.5);
                let mut steps = vec![Step::GetExtra {
                    key: "k0".to_string(),
                    out: "v".to_string(),
                }];
                steps.push(if use_appobj {
                    Step::StoreAppObj {
                        field: key.clone(),
                        value: ValueRef::Register("v".to_string()),
                    }
                } else {
                    Step::StoreShared {
                        store: store.clone(),
                        key: key.clone(),
                        value: ValueRef::Register("v".to_string()),
                    }
                });
                steps.push(Step::SendIntent(IntentTemplate {
                    dispatch: partner_kind,
                    to: Some(partner.clone()),
                    action: None,
                    categories: BTreeSet::new(),
                    mime_type: None,
                    scheme: None,
                }));
                components.push(ComponentSpec {
                    id: id.clone(),
                    kind: kind_of(&mut rng),
                    exported: rng.random_bool(0.5),
                    filters: Vec::new(),
                });
                builder.add_script(&id, Trigger::OnReceiveIntent, steps);

                let mut partner_steps = vec![if use_appobj {
                    Step::LoadAppObj {
                        field: key.clone(),
                        out: "w".to_string(),
                    }
                } else {
                    Step::LoadShared {
                        store,
                        key,
                        out: "w".to_string(),
                    }
                }];
                partner_steps.push(Step::CallSink {
                    method: SINK_POOL.choose(&mut rng).unwrap().to_string(),
                    args: vec![ValueRef::Register("w".to_string())],
                });
                components.push(ComponentSpec {
                    id: partner.clone(),
                    kind: partner_kind,
                    exported: false,
                    filters: Vec::new(),
                });
                builder.add_script(&partner, Trigger::OnReceiveIntent, partner_steps);
                j += 2;
            } else if roll < 4 && j + 1 < comp_count {
                // open receiver that stashes the extra and starts a
                // private helper of its own app, which loads and sinks
                let helper = ComponentId::new(&package, format!("C{}", j + 1));
                let (store, key) = ("hstore".to_string(), builder.fresh_key("hk"));
                let steps = vec![
                    Step::GetExtra {
                        key: "k0".to_string(),
                        out: "v".to_string(),
                    },
                    Step::StoreShared {
                        store: store.clone(),
                        key: key.clone(),
                        value: ValueRef::Register("v".to_string()),
                    },
                    Step::StartComponent {
                        target: helper.clone(),
                    },
                ];
                components.push(ComponentSpec {
                    id: id.clone(),
                    kind: kind_of(&mut rng),
                    exported: true,
                    filters: vec![random_filter(&mut rng)],
                });
                builder.add_script(&id, Trigger::OnReceiveIntent, steps);

                let helper_steps = vec![
                    Step::LoadShared {
                        store,
                        key,
                        out: "w".to_string(),
                    },
                    Step::CallSink {
                        method: SINK_POOL.choose(&mut rng).unwrap().to_string(),
                        args: vec![ValueRef::Register("w".to_string())],
                    },
                ];
                components.push(ComponentSpec {
                    id: helper.clone(),
                    kind: ComponentKind::Service,
                    exported: false,
                    filters: Vec::new(),
                });
                builder.add_script(&helper, Trigger::OnLaunch, helper_steps);
                j += 2;
            } else if roll < 8 {
                // open receiver
                let mut filters = vec![random_filter(&mut rng)];
                if rng.random_bool(0.3) {
                    filters.push(random_filter(&mut rng));
                }
                components.push(ComponentSpec {
                    id: id.clone(),
                    kind: kind_of(&mut rng),
                    exported: rng.random_bool(0.8),
                    filters,
                });
                let steps = receiver_steps(&mut rng);
                builder.add_script(&id, Trigger::OnReceiveIntent, steps);
                j += 1;
            } else {
                // declared but inert component
                let filters = if rng.random_bool(0.5) {
                    vec![random_filter(&mut rng)]
                } else {
                    Vec::new()
                };
                components.push(ComponentSpec {
                    id,
                    kind: kind_of(&mut rng),
                    exported: rng.random_bool(0.5),
                    filters,
                });
                j += 1;
            }
        }

        builder.apps.push(AppSpec {
            package,
            process_id: (a + 1) as u32,
            permissions,
            components,
        });
    }

    // collect explicit-send targets, with a bias towards split-leak heads
    let all_components: Vec<(ComponentId, ComponentKind)> = builder
        .apps
        .iter()
        .flat_map(|app| app.components.iter().map(|c| (c.id.clone(), c.kind)))
        .collect();
    let forward_heads: Vec<(ComponentId, ComponentKind)> = builder
        .apps
        .iter()
        .flat_map(|app| app.components.iter())
        .filter(|c| {
            builder
                .behaviors
                .get(&c.id)
                .is_some_and(|scripts| scripts.iter().any(|s| {
                    s.trigger == Trigger::OnReceiveIntent
                        && s.steps
                            .iter()
                            .any(|step| matches!(step, Step::SendIntent(_)))
                }))
        })
        .map(|c| (c.id.clone(), c.kind))
        .collect();

    // launched entry points: scripts that acquire data and send one intent
    let launch_count = rng.random_range(1..=2usize);
    let mut launch_order = Vec::new();
    for _ in 0..launch_count {
        let app_idx = rng.random_range(0..builder.apps.len());
        let sender = ComponentId::new(&builder.apps[app_idx].package, "C0");

        let mut steps = Vec::new();
        let mut extra_regs: Vec<String> = Vec::new();
        if rng.random_bool(0.7) {
            steps.push(Step::AcquireSource {
                method: SOURCE_POOL.choose(&mut rng).unwrap().to_string(),
                out: "a".to_string(),
            });
            extra_regs.push("a".to_string());
        }
        if rng.random_bool(0.25) {
            steps.push(Step::AcquireSource {
                method: SOURCE_POOL.choose(&mut rng).unwrap().to_string(),
                out: "b".to_string(),
            });
            extra_regs.push("b".to_string());
        }
        for (i, reg) in extra_regs.iter().enumerate() {
            steps.push(Step::PutExtra {
                key: format!("k{i}"),
                value: ValueRef::Register(reg.clone()),
            });
        }
        if rng.random_bool(0.3) {
            steps.push(Step::PutExtra {
                key: "k0".to_string(),
                value: ValueRef::Literal("867-gen-data".to_string()),
            });
        }

        let template = if !forward_heads.is_empty() && rng.random_bool(0.35) {
            let (target, kind) = forward_heads.choose(&mut rng).unwrap().clone();
            IntentTemplate {
                dispatch: kind,
                to: Some(target),
                action: None,
                categories: BTreeSet::new(),
                mime_type: None,
                scheme: None,
            }
        } else if rng.random_bool(0.3) {
            let (target, kind) = all_components.choose(&mut rng).unwrap().clone();
            IntentTemplate {
                dispatch: kind,
                to: Some(target),
                action: None,
                categories: BTreeSet::new(),
                mime_type: None,
                scheme: None,
            }
        } else {
            let mut categories = BTreeSet::new();
            if rng.random_bool(0.25) {
                categories.insert(CATEGORY_POOL.choose(&mut rng).unwrap().to_string());
            }
            IntentTemplate {
                dispatch: kind_of(&mut rng),
                to: None,
                action: if rng.random_bool(0.9) {
                    Some(ACTION_POOL.choose(&mut rng).unwrap().to_string())
                } else {
                    None
                },
                categories,
                mime_type: if rng.random_bool(0.15) {
                    Some("text/plain".to_string())
                } else {
                    None
                },
                scheme: if rng.random_bool(0.15) {
                    Some("content".to_string())
                } else {
                    None
                },
            }
        };
        steps.push(Step::SendIntent(template));

        // launched entry points may collide when the same app is picked
        // twice; merge by keeping the first script
        if !builder
            .behaviors
            .get(&sender)
            .is_some_and(|s| s.iter().any(|b| b.trigger == Trigger::OnLaunch))
        {
            builder.add_script(&sender, Trigger::OnLaunch, steps);
        }

        // chooser declarations: half point at plausible targets (exported
        // activities with filters), half at arbitrary components so the
        // invalid-selection path gets exercised too
        let chooser_selection = if rng.random_bool(0.45) {
            let plausible: Vec<ComponentId> = builder
                .apps
                .iter()
                .flat_map(|app| app.components.iter())
                .filter(|c| {
                    c.kind == ComponentKind::Activity && c.exported && !c.filters.is_empty()
                })
                .map(|c| c.id.clone())
                .collect();
            if !plausible.is_empty() && rng.random_bool(0.5) {
                Some(plausible.choose(&mut rng).unwrap().clone())
            } else {
                Some(all_components.choose(&mut rng).unwrap().0.clone())
            }
        } else {
            None
        };
        launch_order.push(LaunchEntry {
            component: sender,
            chooser_selection,
        });
    }

    Scenario {
        name: format!("generated_{seed}"),
        apps: builder.apps,
        behaviors: builder.behaviors,
        launch_order,
        expected_verdicts: Vec::new(),
    }
}

/// A ready-made log of `model_count` independent sender-to-receiver leaks
/// plus the matching metadata, for throughput and scaling measurements.
pub fn synthetic_log(model_count: usize) -> (TaintLog, AppMetadata) {
    let sender = ComponentId::new("com.load.sender", "Main");
    let receiver = ComponentId::new("com.load.recv", "Recv");
    let label = TaintLabel::new(TagId(0x0002_0001), "getLastKnownLocation", sender.clone());
    let labels = LabelSet::singleton(label);
    let mut events = Vec::with_capacity(model_count * 4);
    let mut seq = 0u64;
    let mut push = |pid: u32, body: EventBody, events: &mut Vec<LogEvent>| {
        seq += 1;
        events.push(LogEvent { seq, pid, body });
    };
    for i in 0..model_count {
        let intent_id = (i + 1) as u64;
        push(
            1,
            EventBody::SendIntent {
                component: sender.clone(),
                intent: IntentSummary {
                    intent_id,
                    dispatch: ComponentKind::Activity,
                    explicit_target: None,
                    action: Some("load.GO".into()),
                    categories: BTreeSet::new(),
                    mime_type: None,
                    scheme: None,
                    extras: [("data".to_string(), labels.clone())].into(),
                },
            },
            &mut events,
        );
        push(
            1000,
            EventBody::Candidates {
                intent_id,
                components: vec![receiver.clone()],
            },
            &mut events,
        );
        push(
            1000,
            EventBody::Deliver {
                intent_id,
                component: receiver.clone(),
            },
            &mut events,
        );
        push(
            2,
            EventBody::SinkCall {
                component: receiver.clone(),
                method: "log".into(),
                args: vec![labels.clone()],
            },
            &mut events,
        );
    }
    let apps = vec![
        system_app(),
        AppSpec {
            package: "com.load.sender".into(),
            process_id: 1,
            permissions: ["ACCESS_FINE_LOCATION".to_string()].into(),
            components: vec![ComponentSpec {
                id: sender,
                kind: ComponentKind::Activity,
                exported: true,
                filters: Vec::new(),
            }],
        },
        AppSpec {
            package: "com.load.recv".into(),
            process_id: 2,
            permissions: BTreeSet::new(),
            components: vec![ComponentSpec {
                id: receiver,
                kind: ComponentKind::Activity,
                exported: true,
                filters: Vec::new(),
            }],
        },
    ];
    (
        TaintLog {
            timestamp: 0,
            events,
        },
        AppMetadata {
            format: META_MAGIC.into(),
            version: META_VERSION,
            apps,
        },
    )
}
