//! Taint primitives: tainting values at sources, identifying taint, and
//! propagating label sets through value-moving operations.
//!
//! All functions here are pure; the per-app key-value stores that back the
//! shared-preference and application-object operations live in the
//! simulator's world state. Propagation only ever grows label sets — the one
//! way to clear taint is to overwrite a slot with a fresh untainted value.

use serde::{Deserialize, Serialize};

use crate::catalog::TagCatalog;
use crate::model::{ComponentId, LabelSet, ModelError, TagId, TaintLabel};

/// An opaque payload together with the labels accumulated on it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaintedValue {
    pub value: String,
    pub labels: LabelSet,
}

impl TaintedValue {
    /// A fresh untainted value.
    pub fn untainted(value: impl Into<String>) -> Self {
        Self {
            value: value.into(),
            labels: LabelSet::empty(),
        }
    }

    pub fn is_tainted(&self) -> bool {
        !self.labels.is_empty()
    }
}

/// The value-moving operations whose taint behavior the engine defines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropagateOp {
    Copy,
    Concat,
    StoreExtra,
    LoadExtra,
    StoreShared,
    LoadShared,
    StoreAppObj,
    LoadAppObj,
}

/// Mark `value` as coming from `source_method` in `component`, tagged with
/// `tag`. If the value was already tainted the previous labels are kept and
/// the new one is added, so the original source stays recoverable.
pub fn add_taint_to_data(
    tags: &TagCatalog,
    value: TaintedValue,
    tag: TagId,
    source_method: &str,
    component: &ComponentId,
) -> Result<TaintedValue, ModelError> {
    if !tags.contains(tag) {
        return Err(ModelError::UnknownTag(tag.to_string()));
    }
    let mut labels = value.labels;
    labels.insert(TaintLabel::new(tag, source_method, component.clone()));
    Ok(TaintedValue {
        value: value.value,
        labels,
    })
}

/// Return the exact label set attached to a value; empty means untainted.
pub fn identify_taint_data(value: &TaintedValue) -> LabelSet {
    value.labels.clone()
}

/// Apply one value-moving operation. The output labels are the union of all
/// input labels; the payload depends on the operation kind.
///
/// Requires at least one input.
pub fn propagate(op: PropagateOp, inputs: &[TaintedValue]) -> TaintedValue {
    assert!(!inputs.is_empty(), "propagate needs at least one input");
    let labels = inputs
        .iter()
        .fold(LabelSet::empty(), |acc, v| acc.union(&v.labels));
    let value = match op {
        PropagateOp::Concat => inputs
            .iter()
            .map(|v| v.value.as_str())
            .collect::<Vec<_>>()
            .join(""),
        _ => inputs[0].value.clone(),
    };
    TaintedValue { value, labels }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Catalogs;
    use proptest::prelude::*;

    fn cid(pkg: &str, name: &str) -> ComponentId {
        ComponentId::new(pkg, name)
    }

    #[test]
    fn tainting_at_a_source_attaches_one_label() {
        let cat = Catalogs::default();
        let lat = cat.tags.lookup("TAINT_LOCATION_Latitude").unwrap();
        let v = add_taint_to_data(
            &cat.tags,
            TaintedValue::untainted("31.2,121.5"),
            lat,
            "getLatitude",
            &cid("com.victim", "A"),
        )
        .unwrap();
        assert_eq!(v.labels.len(), 1);
        let label = v.labels.iter().next().unwrap();
        assert_eq!(label.tag, lat);
        assert_eq!(label.source_method, "getLatitude");
        assert_eq!(label.origin_component, cid("com.victim", "A"));
    }

    #[test]
    fn retainting_keeps_the_previous_label() {
        let cat = Catalogs::default();
        let lat = cat.tags.lookup("TAINT_LOCATION_Latitude").unwrap();
        let dev = cat.tags.lookup("TAINT_DEVICE_ID").unwrap();
        let once = add_taint_to_data(
            &cat.tags,
            TaintedValue::untainted("x"),
            lat,
            "getLatitude",
            &cid("com.victim", "A"),
        )
        .unwrap();
        let twice =
            add_taint_to_data(&cat.tags, once, dev, "getDeviceId", &cid("com.victim", "A"))
                .unwrap();
        assert_eq!(twice.labels.len(), 2);
    }

    #[test]
    fn unregistered_tag_is_rejected() {
        let cat = Catalogs::default();
        let err = add_taint_to_data(
            &cat.tags,
            TaintedValue::untainted("hello"),
            TagId(0xDEAD_BEEF),
            "getX",
            &cid("com.app", "A"),
        );
        assert!(matches!(err, Err(ModelError::UnknownTag(_))));
    }

    #[test]
    fn identify_returns_empty_for_untainted() {
        assert!(identify_taint_data(&TaintedValue::untainted("plain")).is_empty());
    }

    // Independent two-step check: taint at a source, push the value through
    // an extras store/load pair, and compare against the hand-computed set.
    #[test]
    fn labels_survive_an_extras_round_trip() {
        let cat = Catalogs::default();
        let lat = cat.tags.lookup("TAINT_LOCATION_Latitude").unwrap();
        let origin = cid("com.victim", "Main");
        let tainted = add_taint_to_data(
            &cat.tags,
            TaintedValue::untainted("31.2"),
            lat,
            "getLatitude",
            &origin,
        )
        .unwrap();
        let stored = propagate(PropagateOp::StoreExtra, &[tainted]);
        let loaded = propagate(PropagateOp::LoadExtra, &[stored]);

        let expected = LabelSet::singleton(TaintLabel::new(lat, "getLatitude", origin));
        assert_eq!(identify_taint_data(&loaded), expected);
    }

    #[test]
    fn concat_unions_labels_from_both_sides() {
        let cat = Catalogs::default();
        let a = add_taint_to_data(
            &cat.tags,
            TaintedValue::untainted("a"),
            cat.tags.lookup("TAINT_LOCATION_Latitude").unwrap(),
            "getLatitude",
            &cid("p", "A"),
        )
        .unwrap();
        let b = add_taint_to_data(
            &cat.tags,
            TaintedValue::untainted("b"),
            cat.tags.lookup("TAINT_DEVICE_ID").unwrap(),
            "getDeviceId",
            &cid("p", "B"),
        )
        .unwrap();
        let joined = propagate(PropagateOp::Concat, &[a.clone(), b.clone()]);
        assert_eq!(joined.value, "ab");
        assert_eq!(joined.labels, a.labels.union(&b.labels));
    }

    #[test]
    fn shared_store_round_trip_preserves_labels() {
        let cat = Catalogs::default();
        let v = add_taint_to_data(
            &cat.tags,
            TaintedValue::untainted("867..."),
            cat.tags.lookup("TAINT_DEVICE_ID").unwrap(),
            "getDeviceId",
            &cid("p", "A"),
        )
        .unwrap();
        let stored = propagate(PropagateOp::StoreShared, &[v.clone()]);
        let loaded = propagate(PropagateOp::LoadShared, &[stored]);
        assert_eq!(loaded.labels, v.labels);
        assert_eq!(loaded.value, v.value);
    }

    fn arb_value() -> impl Strategy<Value = TaintedValue> {
        (
            "[a-z]{0,8}",
            proptest::collection::vec((0u32..32, "[a-z]{1,4}"), 0..4),
        )
            .prop_map(|(payload, labels)| TaintedValue {
                value: payload,
                labels: labels
                    .into_iter()
                    .map(|(t, m)| TaintLabel::new(TagId(t), m, ComponentId::new("p", "C")))
                    .collect(),
            })
    }

    fn arb_op() -> impl Strategy<Value = PropagateOp> {
        prop_oneof![
            Just(PropagateOp::Copy),
            Just(PropagateOp::Concat),
            Just(PropagateOp::StoreExtra),
            Just(PropagateOp::LoadExtra),
            Just(PropagateOp::StoreShared),
            Just(PropagateOp::LoadShared),
            Just(PropagateOp::StoreAppObj),
            Just(PropagateOp::LoadAppObj),
        ]
    }

    proptest! {
        // Monotonicity: every propagating op covers each input's labels.
        #[test]
        fn propagation_never_drops_labels(
            op in arb_op(),
            inputs in proptest::collection::vec(arb_value(), 1..4),
        ) {
            let out = propagate(op, &inputs);
            for input in &inputs {
                prop_assert!(out.labels.is_superset(&input.labels));
            }
        }

        // No spontaneous taint: all-untainted inputs give untainted output.
        #[test]
        fn untainted_inputs_stay_untainted(
            op in arb_op(),
            payloads in proptest::collection::vec("[a-z]{0,8}", 1..4),
        ) {
            let inputs: Vec<_> = payloads.into_iter().map(TaintedValue::untainted).collect();
            prop_assert!(!propagate(op, &inputs).is_tainted());
        }

        // Store/load pairs are taint-transparent.
        #[test]
        fn store_then_load_is_exact(v in arb_value()) {
            for (st, ld) in [
                (PropagateOp::StoreShared, PropagateOp::LoadShared),
                (PropagateOp::StoreAppObj, PropagateOp::LoadAppObj),
                (PropagateOp::StoreExtra, PropagateOp::LoadExtra),
            ] {
                let round = propagate(ld, &[propagate(st, &[v.clone()])]);
                prop_assert_eq!(&round.labels, &v.labels);
            }
        }
    }
}
