//! Core domain types shared by the simulator and the analyzer: apps,
//! components, intent filters, permissions, intents and taint labels.
//!
//! Everything here is an immutable value object after construction, so all
//! types are freely shareable between threads.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::taint::TaintedValue;

/// A 32-bit taint tag identifier, kept opaque. Tags are registered in a
/// [`TagCatalog`](crate::catalog::TagCatalog) and compared by value only;
/// bit positions of distinct tags may overlap, so tags must never be OR'd
/// together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TagId(pub u32);

impl fmt::Display for TagId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{:08X}", self.0)
    }
}

/// Fully qualified component identity: owning package plus component name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ComponentId {
    pub package: String,
    pub name: String,
}

impl ComponentId {
    pub fn new(package: impl Into<String>, name: impl Into<String>) -> Self {
        Self {
            package: package.into(),
            name: name.into(),
        }
    }
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.package, self.name)
    }
}

impl FromStr for ComponentId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('/') {
            Some((pkg, name)) if !pkg.is_empty() && !name.is_empty() && !name.contains('/') => {
                Ok(ComponentId::new(pkg, name))
            }
            _ => Err(ModelError::BadComponentId(s.to_string())),
        }
    }
}

/// One provenance unit carried by a sensitive value: which tag it was marked
/// with, through which source method, and in which component.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaintLabel {
    pub tag: TagId,
    pub source_method: String,
    pub origin_component: ComponentId,
}

impl TaintLabel {
    pub fn new(tag: TagId, source_method: impl Into<String>, origin: ComponentId) -> Self {
        Self {
            tag,
            source_method: source_method.into(),
            origin_component: origin,
        }
    }
}

impl fmt::Display for TaintLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}@{}", self.tag, self.source_method, self.origin_component)
    }
}

/// A finite set of taint labels. The empty set means "untainted"; set union
/// is the only combination operation, so no label is ever dropped while a
/// value propagates.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelSet(BTreeSet<TaintLabel>);

impl LabelSet {
    pub fn empty() -> Self {
        Self(BTreeSet::new())
    }

    pub fn singleton(label: TaintLabel) -> Self {
        let mut set = BTreeSet::new();
        set.insert(label);
        Self(set)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, label: &TaintLabel) -> bool {
        self.0.contains(label)
    }

    pub fn insert(&mut self, label: TaintLabel) {
        self.0.insert(label);
    }

    pub fn union(&self, other: &LabelSet) -> LabelSet {
        LabelSet(self.0.union(&other.0).cloned().collect())
    }

    pub fn intersects(&self, other: &LabelSet) -> bool {
        self.0.iter().any(|l| other.contains(l))
    }

    pub fn is_superset(&self, other: &LabelSet) -> bool {
        self.0.is_superset(&other.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = &TaintLabel> {
        self.0.iter()
    }
}

impl FromIterator<TaintLabel> for LabelSet {
    fn from_iter<I: IntoIterator<Item = TaintLabel>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a LabelSet {
    type Item = &'a TaintLabel;
    type IntoIter = std::collections::btree_set::Iter<'a, TaintLabel>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Union of two label sets; commutative and idempotent.
pub fn union_labels(a: &LabelSet, b: &LabelSet) -> LabelSet {
    a.union(b)
}

/// The three component kinds that take part in intent resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ComponentKind {
    #[serde(rename = "activity")]
    Activity,
    #[serde(rename = "service")]
    Service,
    #[serde(rename = "receiver")]
    BroadcastReceiver,
}

impl ComponentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ComponentKind::Activity => "activity",
            ComponentKind::Service => "service",
            ComponentKind::BroadcastReceiver => "receiver",
        }
    }
}

impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ComponentKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "activity" => Ok(ComponentKind::Activity),
            "service" => Ok(ComponentKind::Service),
            "receiver" => Ok(ComponentKind::BroadcastReceiver),
            other => Err(ModelError::BadComponentKind(other.to_string())),
        }
    }
}

/// Threat classes a model can be assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThreatType {
    Hijacking,
    Spoofing,
    Collusion,
    None,
}

impl ThreatType {
    pub fn as_str(&self) -> &'static str {
        match self {
            ThreatType::Hijacking => "hijacking",
            ThreatType::Spoofing => "spoofing",
            ThreatType::Collusion => "collusion",
            ThreatType::None => "none",
        }
    }
}

impl fmt::Display for ThreatType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ThreatType {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hijacking" => Ok(ThreatType::Hijacking),
            "spoofing" => Ok(ThreatType::Spoofing),
            "collusion" => Ok(ThreatType::Collusion),
            "none" => Ok(ThreatType::None),
            other => Err(ModelError::BadThreatType(other.to_string())),
        }
    }
}

/// A component's declaration of which implicit intents it accepts.
///
/// An empty `actions` set matches no implicit intent at all.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub actions: BTreeSet<String>,
    pub categories: BTreeSet<String>,
    pub data_schemes: BTreeSet<String>,
    pub mime_types: BTreeSet<String>,
    pub priority: i32,
}

/// Static description of one app component.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub id: ComponentId,
    pub kind: ComponentKind,
    pub exported: bool,
    pub filters: Vec<FilterSpec>,
}

/// Static description of one app: package, process id, granted permissions
/// and declared components. Process ids are unique across the world.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppSpec {
    pub package: String,
    pub process_id: u32,
    pub permissions: BTreeSet<String>,
    pub components: Vec<ComponentSpec>,
}

impl AppSpec {
    pub fn component(&self, name: &str) -> Option<&ComponentSpec> {
        self.components.iter().find(|c| c.id.name == name)
    }
}

/// An in-flight intent as the simulator sees it: resolution attributes plus
/// extras that carry tainted payloads. When `explicit_target` is present it
/// dominates resolution; the `dispatch` kind records which send API family
/// was used and therefore which component kind the intent addresses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntentRecord {
    pub intent_id: u64,
    pub dispatch: ComponentKind,
    pub explicit_target: Option<ComponentId>,
    pub action: Option<String>,
    pub categories: BTreeSet<String>,
    pub mime_type: Option<String>,
    pub scheme: Option<String>,
    pub extras: BTreeMap<String, TaintedValue>,
}

impl IntentRecord {
    pub fn is_explicit(&self) -> bool {
        self.explicit_target.is_some()
    }

    /// Extras keys together with their label sets, payloads omitted.
    pub fn extra_labels(&self) -> BTreeMap<String, LabelSet> {
        self.extras
            .iter()
            .map(|(k, v)| (k.clone(), v.labels.clone()))
            .collect()
    }
}

/// Errors from core model construction and lookups.
#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("unknown taint tag '{0}'")]
    UnknownTag(String),
    #[error("malformed component id '{0}' (expected package/name)")]
    BadComponentId(String),
    #[error("unknown component kind '{0}'")]
    BadComponentKind(String),
    #[error("unknown threat type '{0}'")]
    BadThreatType(String),
    #[error("catalog config error: {0}")]
    CatalogConfig(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Catalogs;
    use proptest::prelude::*;

    fn label(tag: u32, method: &str) -> TaintLabel {
        TaintLabel::new(TagId(tag), method, ComponentId::new("com.app", "Main"))
    }

    #[test]
    fn union_identity_on_empty_sets() {
        let e = LabelSet::empty();
        assert_eq!(union_labels(&e, &e), LabelSet::empty());
    }

    #[test]
    fn union_of_disjoint_sets_keeps_both() {
        let cat = Catalogs::default();
        let lat = LabelSet::singleton(label(
            cat.tags.lookup("TAINT_LOCATION_Latitude").unwrap().0,
            "getLatitude",
        ));
        let dev = LabelSet::singleton(label(
            cat.tags.lookup("TAINT_DEVICE_ID").unwrap().0,
            "getDeviceId",
        ));
        let both = union_labels(&lat, &dev);
        assert_eq!(both.len(), 2);
        assert!(both.is_superset(&lat));
        assert!(both.is_superset(&dev));
    }

    #[test]
    fn union_is_idempotent() {
        let l = LabelSet::singleton(label(0x00010004, "getLatitude"));
        assert_eq!(union_labels(&l, &l), l);
    }

    #[test]
    fn component_id_round_trips_through_display() {
        let id = ComponentId::new("com.victim", "MainActivity");
        let parsed: ComponentId = id.to_string().parse().unwrap();
        assert_eq!(parsed, id);
        assert!("noslash".parse::<ComponentId>().is_err());
    }

    fn arb_label() -> impl Strategy<Value = TaintLabel> {
        (0u32..64, "[a-z]{1,6}", "[a-z]{1,4}").prop_map(|(t, m, p)| {
            TaintLabel::new(TagId(t), m, ComponentId::new(p, "C"))
        })
    }

    fn arb_labelset() -> impl Strategy<Value = LabelSet> {
        proptest::collection::btree_set(arb_label(), 0..6).prop_map(LabelSet)
    }

    proptest! {
        // Union forms a join-semilattice: associative, commutative, idempotent.
        #[test]
        fn union_semilattice(a in arb_labelset(), b in arb_labelset(), c in arb_labelset()) {
            let ab_c = union_labels(&union_labels(&a, &b), &c);
            let a_bc = union_labels(&a, &union_labels(&b, &c));
            prop_assert_eq!(&ab_c, &a_bc);
            prop_assert_eq!(union_labels(&a, &b), union_labels(&b, &a));
            prop_assert_eq!(union_labels(&a, &a), a);
        }
    }
}
