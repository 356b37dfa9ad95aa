//! Causal connection between the running system and its models: an
//! implementation-level model maintained incrementally from sensor events,
//! and four abstract concern views (architecture, performance, failure,
//! environment) kept bidirectionally synchronized with it.
//!
//! Data flow upward: [`monitor_update`] folds a batch of [`SensorEvent`]s
//! into the implementation model (updating it, never rebuilding it) and
//! returns the resulting delta; [`sync_forward`] then brings each view in
//! line with the projection its [`ViewSpec`] defines, touching only view
//! regions whose projected content actually changed. Data flow downward:
//! [`sync_backward`] translates an edit of a view (add/remove a component,
//! change its state or placement, retarget a wire) into an implementation
//! delta such that one forward pass afterwards reaches a fixpoint.
//!
//! Projections are declarative rule tables shipped as data: each rule maps
//! one implementation element type to one view element type, with attribute
//! derivations (copies, id reflection, link-target reflection, counting
//! aggregates) and link derivations (mirrors and reverses). Derived
//! aggregates and reversed links are one-way; writing them through a view
//! is rejected with [`SyncError::ReadOnlyFeature`]. A view-level add must
//! name its placement explicitly — the engine refuses to guess
//! ([`SyncError::AmbiguousConcretization`]).
//!
//! Identifiers are stable across the connection: a view element keeps the
//! id of the implementation element it reflects. The
//! [`CorrespondenceStore`] still records every pairing (with the rule that
//! produced it) so the backward direction resolves through explicit links
//! rather than naming conventions, and so dangling pairings are detectable
//! ([`SyncError::CorrespondenceCorrupt`]).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::{
    diff, AttrDecl, AttrKind, AttrValue, Change, DeltaError, Element, ElementId,
    ElementTypeDecl, Metamodel, ModelDelta, RefDecl, TypedModel, UpperBound,
};
use crate::sim::{LifecycleState, SensorEvent, SensorSnapshot};

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SyncError {
    /// A sensor event references an element the implementation model never
    /// introduced.
    #[error("event references unknown subject `{subject}`: {detail}")]
    UnknownEventSubject { subject: String, detail: String },
    /// The correspondence store and the models disagree.
    #[error("correspondence store corrupt: {detail}")]
    CorrespondenceCorrupt { detail: String },
    /// A view delta writes a feature that is derived one-way from the
    /// implementation model.
    #[error("read-only view feature `{feature}` cannot be written")]
    ReadOnlyFeature { feature: String },
    /// The view edit has no unique implementation realization.
    #[error("ambiguous concretization: {detail}")]
    AmbiguousConcretization { detail: String },
    /// The projection rule table is internally inconsistent.
    #[error("invalid view spec `{spec}`: {detail}")]
    InvalidViewSpec { spec: String, detail: String },
    #[error(transparent)]
    Delta(#[from] DeltaError),
}

// ---------------------------------------------------------------------------
// The implementation-level metamodel
// ---------------------------------------------------------------------------

/// Name of the implementation-level metamodel.
pub const IMPLEMENTATION_MM: &str = "implementation";

/// Id of the singleton workload element in the implementation model.
pub const LOAD_ID: &str = "load";

/// Id under which a binding of `instance`'s required `interface` is stored.
pub fn connector_id(instance: &str, interface: &str) -> String {
    format!("c:{instance}:{interface}")
}

fn attr(name: &str, kind: AttrKind) -> AttrDecl {
    AttrDecl {
        name: name.to_string(),
        kind,
        optional: false,
    }
}

fn opt_attr(name: &str, kind: AttrKind) -> AttrDecl {
    AttrDecl {
        name: name.to_string(),
        kind,
        optional: true,
    }
}

fn reference(name: &str, target: &str, lower: u32, upper: UpperBound) -> RefDecl {
    RefDecl {
        name: name.to_string(),
        target: target.to_string(),
        lower_bound: lower,
        upper_bound: upper,
        containment: false,
    }
}

fn state_kind() -> AttrKind {
    AttrKind::Enum(vec![
        "running".into(),
        "failed".into(),
        "quiescing".into(),
        "stopped".into(),
    ])
}

/// The metamodel of the descriptive implementation model: component types
/// with provided/required interfaces, nodes, instances with lifecycle state
/// and windowed metrics, connectors (one per bound required interface), and
/// the workload singleton.
pub fn implementation_metamodel() -> Metamodel {
    Metamodel {
        name: IMPLEMENTATION_MM.into(),
        element_types: vec![
            ElementTypeDecl {
                name: "Interface".into(),
                attributes: vec![],
                references: vec![],
            },
            ElementTypeDecl {
                name: "TypeDef".into(),
                attributes: vec![
                    attr("serviceTimeMean", AttrKind::Real),
                    attr("failureRate", AttrKind::Real),
                    attr("entry", AttrKind::Boolean),
                ],
                references: vec![
                    reference("provides", "Interface", 0, UpperBound::Unbounded),
                    reference("requires", "Interface", 0, UpperBound::Unbounded),
                ],
            },
            ElementTypeDecl {
                name: "Node".into(),
                attributes: vec![attr("capacity", AttrKind::Integer)],
                references: vec![],
            },
            ElementTypeDecl {
                name: "Instance".into(),
                attributes: vec![
                    attr("state", state_kind()),
                    attr("inFlight", AttrKind::Integer),
                    attr("requestCount", AttrKind::Integer),
                    attr("completedCount", AttrKind::Integer),
                    attr("failureCount", AttrKind::Integer),
                    attr("avgResponseTime", AttrKind::Real),
                    attr("utilization", AttrKind::Real),
                ],
                references: vec![
                    reference("ofType", "TypeDef", 1, UpperBound::Finite(1)),
                    reference("on", "Node", 1, UpperBound::Finite(1)),
                ],
            },
            ElementTypeDecl {
                name: "Connector".into(),
                attributes: vec![attr("interface", AttrKind::String)],
                references: vec![
                    reference("from", "Instance", 1, UpperBound::Finite(1)),
                    reference("to", "Instance", 1, UpperBound::Finite(1)),
                ],
            },
            ElementTypeDecl {
                name: "Load".into(),
                attributes: vec![attr("rate", AttrKind::Real), attr("lost", AttrKind::Integer)],
                references: vec![],
            },
        ],
    }
}

// ---------------------------------------------------------------------------
// Building the implementation model from a full snapshot
// ---------------------------------------------------------------------------

/// Build a fresh implementation model from a complete sensor snapshot. Used
/// to bootstrap the descriptive model at startup; during operation the model
/// is folded forward by [`monitor_update`] instead.
pub fn model_from_snapshot(snap: &SensorSnapshot) -> TypedModel {
    let mut m = TypedModel::new(IMPLEMENTATION_MM);
    let mut interfaces: BTreeSet<&str> = BTreeSet::new();
    for t in &snap.component_types {
        for i in t.provides.iter().chain(t.requires.iter()) {
            interfaces.insert(i);
        }
    }
    for i in interfaces {
        m.elements.insert(ElementId::new(i), Element::new("Interface"));
    }
    for t in &snap.component_types {
        let el = Element::new("TypeDef")
            .with_attr("serviceTimeMean", t.service_time_mean)
            .with_attr("failureRate", t.failure_rate)
            .with_attr("entry", t.type_name == snap.entry_type)
            .with_links("provides", t.provides.iter().map(ElementId::new))
            .with_links("requires", t.requires.iter().map(ElementId::new));
        m.elements.insert(ElementId::new(&t.type_name), el);
    }
    for n in &snap.nodes {
        let el = Element::new("Node").with_attr("capacity", i64::from(n.capacity));
        m.elements.insert(ElementId::new(&n.node_name), el);
    }
    for inst in &snap.instances {
        let el = Element::new("Instance")
            .with_attr("state", inst.state.as_str())
            .with_attr("inFlight", i64::from(inst.in_flight))
            .with_attr("requestCount", inst.metrics.request_count as i64)
            .with_attr("completedCount", inst.metrics.completed_count as i64)
            .with_attr("failureCount", inst.metrics.failure_count as i64)
            .with_attr("avgResponseTime", inst.metrics.avg_response_time)
            .with_attr("utilization", inst.metrics.utilization)
            .with_links("ofType", [ElementId::new(&inst.type_name)])
            .with_links("on", [ElementId::new(&inst.node_name)]);
        m.elements.insert(ElementId::new(&inst.instance_id), el);
        for (interface, target) in &inst.bindings {
            let c = Element::new("Connector")
                .with_attr("interface", interface.as_str())
                .with_links("from", [ElementId::new(&inst.instance_id)])
                .with_links("to", [ElementId::new(target)]);
            m.elements
                .insert(ElementId::new(connector_id(&inst.instance_id, interface)), c);
        }
    }
    let load = Element::new("Load")
        .with_attr("rate", snap.load_rate)
        .with_attr("lost", snap.lost as i64);
    m.elements.insert(ElementId::new(LOAD_ID), load);
    m
}

// ---------------------------------------------------------------------------
// monitor_update: fold sensor events into the implementation model
// ---------------------------------------------------------------------------

/// Fold a timestamp-ordered batch of sensor events into the implementation
/// model and return the resulting delta (already coalesced: a request that
/// arrived and completed within the batch leaves no trace beyond the final
/// counters). The model itself is not modified; patch the returned delta.
pub fn monitor_update(
    impl_model: &TypedModel,
    events: &[SensorEvent],
) -> Result<ModelDelta, SyncError> {
    let mut working = impl_model.clone();
    for event in events {
        fold_event(&mut working, event)?;
    }
    Ok(diff(impl_model, &working)?)
}

fn unknown(subject: &str, detail: impl Into<String>) -> SyncError {
    SyncError::UnknownEventSubject {
        subject: subject.to_string(),
        detail: detail.into(),
    }
}

fn instance_mut<'m>(
    m: &'m mut TypedModel,
    instance: &str,
    event: &str,
) -> Result<&'m mut Element, SyncError> {
    let id = ElementId::new(instance);
    match m.elements.get_mut(&id) {
        Some(el) if el.type_name == "Instance" => Ok(el),
        Some(el) => Err(unknown(
            instance,
            format!("{event} targets a `{}` element", el.type_name),
        )),
        None => Err(unknown(instance, format!("{event} targets a missing element"))),
    }
}

fn bump_int(el: &mut Element, name: &str, by: i64) {
    let current = el.attr(name).and_then(|v| v.as_num()).unwrap_or(0.0) as i64;
    el.attrs
        .insert(name.to_string(), AttrValue::Int((current + by).max(0)));
}

fn fold_event(m: &mut TypedModel, event: &SensorEvent) -> Result<(), SyncError> {
    match event {
        SensorEvent::RequestArrived { instance, .. } => {
            bump_int(instance_mut(m, instance, "requestArrived")?, "inFlight", 1);
        }
        SensorEvent::RequestCompleted { instance, .. } => {
            bump_int(instance_mut(m, instance, "requestCompleted")?, "inFlight", -1);
        }
        SensorEvent::RequestFailed { instance, .. } => {
            bump_int(instance_mut(m, instance, "requestFailed")?, "inFlight", -1);
        }
        SensorEvent::RequestLost { .. } => {} // aggregated into the window's lost counter
        SensorEvent::InstanceFailed { instance, .. } => {
            let el = instance_mut(m, instance, "instanceFailed")?;
            el.attrs.insert("state".into(), "failed".into());
            // in-flight work is reported failed by the per-request events
            // that follow this one in the same batch
        }
        SensorEvent::LoadChanged { rate, .. } => {
            let load = m
                .elements
                .get_mut(&ElementId::new(LOAD_ID))
                .ok_or_else(|| unknown(LOAD_ID, "loadChanged without a workload element"))?;
            load.attrs.insert("rate".into(), AttrValue::Real(*rate));
        }
        SensorEvent::WindowClosed { lost, metrics, .. } => {
            let load = m
                .elements
                .get_mut(&ElementId::new(LOAD_ID))
                .ok_or_else(|| unknown(LOAD_ID, "windowClosed without a workload element"))?;
            load.attrs.insert("lost".into(), AttrValue::Int(*lost as i64));
            for (id, win) in metrics {
                let el = instance_mut(m, id, "windowClosed")?;
                el.attrs
                    .insert("requestCount".into(), AttrValue::Int(win.request_count as i64));
                el.attrs.insert(
                    "completedCount".into(),
                    AttrValue::Int(win.completed_count as i64),
                );
                el.attrs
                    .insert("failureCount".into(), AttrValue::Int(win.failure_count as i64));
                el.attrs.insert(
                    "avgResponseTime".into(),
                    AttrValue::Real(win.avg_response_time),
                );
                el.attrs
                    .insert("utilization".into(), AttrValue::Real(win.utilization));
            }
        }
        SensorEvent::InstanceStarted {
            instance,
            type_name,
            node,
            ..
        } => {
            let type_id = ElementId::new(type_name);
            if m.element(&type_id).map(|e| e.type_name.as_str()) != Some("TypeDef") {
                return Err(unknown(type_name, "instanceStarted names an unknown type"));
            }
            let node_id = ElementId::new(node);
            if m.element(&node_id).map(|e| e.type_name.as_str()) != Some("Node") {
                return Err(unknown(node, "instanceStarted names an unknown node"));
            }
            let el = Element::new("Instance")
                .with_attr("state", "running")
                .with_attr("inFlight", 0i64)
                .with_attr("requestCount", 0i64)
                .with_attr("completedCount", 0i64)
                .with_attr("failureCount", 0i64)
                .with_attr("avgResponseTime", 0.0)
                .with_attr("utilization", 0.0)
                .with_links("ofType", [type_id])
                .with_links("on", [node_id]);
            m.elements.insert(ElementId::new(instance), el);
        }
        SensorEvent::InstanceQuiescing { instance, .. } => {
            instance_mut(m, instance, "instanceQuiescing")?
                .attrs
                .insert("state".into(), "quiescing".into());
        }
        SensorEvent::InstanceRemoved { instance, .. } => {
            instance_mut(m, instance, "instanceRemoved")?;
            let inst_id = ElementId::new(instance);
            let own_connectors: Vec<ElementId> = m
                .elements
                .iter()
                .filter(|(_, el)| {
                    el.type_name == "Connector" && el.targets("from").first() == Some(&inst_id)
                })
                .map(|(id, _)| id.clone())
                .collect();
            for c in own_connectors {
                m.elements.remove(&c);
            }
            m.elements.remove(&inst_id);
        }
        SensorEvent::InstanceRestarted { instance, .. } => {
            instance_mut(m, instance, "instanceRestarted")?
                .attrs
                .insert("state".into(), "running".into());
        }
        SensorEvent::InstanceMigrated { instance, node, .. } => {
            let node_id = ElementId::new(node);
            if m.element(&node_id).map(|e| e.type_name.as_str()) != Some("Node") {
                return Err(unknown(node, "instanceMigrated names an unknown node"));
            }
            let el = instance_mut(m, instance, "instanceMigrated")?;
            el.links.insert("on".into(), vec![node_id]);
            el.attrs.insert("state".into(), "running".into());
        }
        SensorEvent::Rebound {
            instance,
            interface,
            target,
            ..
        } => {
            instance_mut(m, instance, "rebound")?;
            let target_id = ElementId::new(target);
            if m.element(&target_id).map(|e| e.type_name.as_str()) != Some("Instance") {
                return Err(unknown(target, "rebound names an unknown target"));
            }
            let c = Element::new("Connector")
                .with_attr("interface", interface.as_str())
                .with_links("from", [ElementId::new(instance)])
                .with_links("to", [target_id]);
            m.elements
                .insert(ElementId::new(connector_id(instance, interface)), c);
        }
        SensorEvent::ParameterSet { instance, name, value, .. } => {
            if name == "state" {
                if LifecycleState::parse(value).is_none() {
                    return Err(unknown(instance, format!("state value `{value}`")));
                }
                instance_mut(m, instance, "parameterSet")?
                    .attrs
                    .insert("state".into(), value.as_str().into());
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// View specs: declarative projection rule tables
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewKind {
    Architecture,
    Performance,
    Failure,
    Environment,
}

impl ViewKind {
    pub const ALL: [ViewKind; 4] = [
        ViewKind::Architecture,
        ViewKind::Performance,
        ViewKind::Failure,
        ViewKind::Environment,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ViewKind::Architecture => "architecture",
            ViewKind::Performance => "performance",
            ViewKind::Failure => "failure",
            ViewKind::Environment => "environment",
        }
    }
}

impl std::fmt::Display for ViewKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How one attribute of a view element is obtained — and whether it may be
/// written back. `writable` gates changes to existing elements; `init`
/// marks the attributes a view-level add uses to construct the
/// implementation element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "derive", rename_all = "camelCase")]
pub enum AttrDerivation {
    /// View attribute mirrors an implementation attribute.
    #[serde(rename_all = "camelCase")]
    Copy {
        view_attr: String,
        impl_attr: String,
        #[serde(default)]
        writable: bool,
        #[serde(default)]
        init: bool,
    },
    /// View attribute holds the element's own id (handy in predicates).
    #[serde(rename_all = "camelCase")]
    Id { view_attr: String },
    /// View attribute holds the id of the implementation element's single
    /// link target (e.g. placement as a plain attribute).
    #[serde(rename_all = "camelCase")]
    LinkTarget {
        view_attr: String,
        impl_ref: String,
        #[serde(default)]
        writable: bool,
        #[serde(default)]
        init: bool,
    },
    /// Aggregate: number of implementation elements of `implType` whose
    /// `implRef` links point at this element. Always read-only.
    #[serde(rename_all = "camelCase")]
    CountLinked {
        view_attr: String,
        impl_type: String,
        impl_ref: String,
    },
}

impl AttrDerivation {
    pub fn view_attr(&self) -> &str {
        match self {
            AttrDerivation::Copy { view_attr, .. }
            | AttrDerivation::Id { view_attr }
            | AttrDerivation::LinkTarget { view_attr, .. }
            | AttrDerivation::CountLinked { view_attr, .. } => view_attr,
        }
    }
}

/// How one reference of a view element is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "derive", rename_all = "camelCase")]
pub enum LinkDerivation {
    /// View link mirrors an implementation link; targets not projected into
    /// the view are dropped.
    #[serde(rename_all = "camelCase")]
    Mirror {
        view_ref: String,
        impl_ref: String,
        #[serde(default)]
        writable: bool,
        #[serde(default)]
        init: bool,
    },
    /// View link collects, in ascending id order, the implementation
    /// elements of `implType` whose `implRef` points here. Derived and
    /// read-only; backward sync ignores edits to it (the forward pass
    /// recomputes it).
    #[serde(rename_all = "camelCase")]
    Reverse {
        view_ref: String,
        impl_type: String,
        impl_ref: String,
    },
}

impl LinkDerivation {
    pub fn view_ref(&self) -> &str {
        match self {
            LinkDerivation::Mirror { view_ref, .. } | LinkDerivation::Reverse { view_ref, .. } => {
                view_ref
            }
        }
    }
}

/// One projection rule: implementation elements of `implType` appear in the
/// view as elements of `viewType`, under the same id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProjectionRule {
    pub rule_name: String,
    pub impl_type: String,
    pub view_type: String,
    /// Whether view-level adds/removes of this element kind are realizable.
    #[serde(default)]
    pub creatable: bool,
    #[serde(default)]
    pub attrs: Vec<AttrDerivation>,
    #[serde(default)]
    pub links: Vec<LinkDerivation>,
}

/// Declarative projection of the implementation model onto one concern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ViewSpec {
    pub view_kind: ViewKind,
    /// Name of the metamodel view models conform to.
    pub view_metamodel: String,
    pub rules: Vec<ProjectionRule>,
}

impl ViewSpec {
    /// Rules must be functional in both directions: one implementation type
    /// maps to at most one rule, and one view type comes from at most one
    /// rule (so view edits resolve uniquely).
    pub fn validate(&self) -> Result<(), SyncError> {
        let bad = |detail: String| SyncError::InvalidViewSpec {
            spec: self.view_kind.to_string(),
            detail,
        };
        let mut impl_types = BTreeSet::new();
        let mut view_types = BTreeSet::new();
        let mut names = BTreeSet::new();
        for rule in &self.rules {
            if !names.insert(&rule.rule_name) {
                return Err(bad(format!("duplicate rule name `{}`", rule.rule_name)));
            }
            if !impl_types.insert(&rule.impl_type) {
                return Err(bad(format!(
                    "two rules match implementation type `{}`",
                    rule.impl_type
                )));
            }
            if !view_types.insert(&rule.view_type) {
                return Err(bad(format!("two rules produce view type `{}`", rule.view_type)));
            }
            let mut attrs = BTreeSet::new();
            for d in &rule.attrs {
                if !attrs.insert(d.view_attr()) {
                    return Err(bad(format!(
                        "rule `{}` derives attribute `{}` twice",
                        rule.rule_name,
                        d.view_attr()
                    )));
                }
            }
            let mut refs = BTreeSet::new();
            for l in &rule.links {
                if !refs.insert(l.view_ref()) {
                    return Err(bad(format!(
                        "rule `{}` derives reference `{}` twice",
                        rule.rule_name,
                        l.view_ref()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn rule_for_impl(&self, impl_type: &str) -> Option<&ProjectionRule> {
        self.rules.iter().find(|r| r.impl_type == impl_type)
    }

    pub fn rule_for_view(&self, view_type: &str) -> Option<&ProjectionRule> {
        self.rules.iter().find(|r| r.view_type == view_type)
    }
}

// ---------------------------------------------------------------------------
// Standard concern views
// ---------------------------------------------------------------------------

fn copy(view_attr: &str, impl_attr: &str, writable: bool, init: bool) -> AttrDerivation {
    AttrDerivation::Copy {
        view_attr: view_attr.into(),
        impl_attr: impl_attr.into(),
        writable,
        init,
    }
}

fn id_attr(view_attr: &str) -> AttrDerivation {
    AttrDerivation::Id {
        view_attr: view_attr.into(),
    }
}

fn link_target(view_attr: &str, impl_ref: &str, writable: bool, init: bool) -> AttrDerivation {
    AttrDerivation::LinkTarget {
        view_attr: view_attr.into(),
        impl_ref: impl_ref.into(),
        writable,
        init,
    }
}

fn mirror(view_ref: &str, impl_ref: &str, writable: bool, init: bool) -> LinkDerivation {
    LinkDerivation::Mirror {
        view_ref: view_ref.into(),
        impl_ref: impl_ref.into(),
        writable,
        init,
    }
}

fn reverse(view_ref: &str, impl_type: &str, impl_ref: &str) -> LinkDerivation {
    LinkDerivation::Reverse {
        view_ref: view_ref.into(),
        impl_type: impl_type.into(),
        impl_ref: impl_ref.into(),
    }
}

/// Metamodel of the view a given concern uses.
pub fn view_metamodel(kind: ViewKind) -> Metamodel {
    let component_common = || {
        vec![
            attr("name", AttrKind::String),
            attr("type", AttrKind::String),
            opt_attr("node", AttrKind::String),
            attr("state", state_kind()),
        ]
    };
    match kind {
        ViewKind::Architecture => Metamodel {
            name: "architecture-view".into(),
            element_types: vec![
                ElementTypeDecl {
                    name: "ComponentType".into(),
                    attributes: vec![attr("name", AttrKind::String), attr("entry", AttrKind::Boolean)],
                    references: vec![reference("instances", "Component", 0, UpperBound::Unbounded)],
                },
                ElementTypeDecl {
                    name: "Component".into(),
                    attributes: component_common(),
                    references: vec![reference("ofType", "ComponentType", 1, UpperBound::Finite(1))],
                },
                ElementTypeDecl {
                    name: "Wire".into(),
                    attributes: vec![attr("interface", AttrKind::String)],
                    references: vec![
                        reference("from", "Component", 1, UpperBound::Finite(1)),
                        reference("to", "Component", 1, UpperBound::Finite(1)),
                    ],
                },
            ],
        },
        ViewKind::Performance => Metamodel {
            name: "performance-view".into(),
            element_types: vec![
                ElementTypeDecl {
                    name: "ComponentType".into(),
                    attributes: vec![
                        attr("name", AttrKind::String),
                        attr("serviceTimeMean", AttrKind::Real),
                        attr("entry", AttrKind::Boolean),
                    ],
                    references: vec![reference("instances", "Component", 0, UpperBound::Unbounded)],
                },
                ElementTypeDecl {
                    name: "Component".into(),
                    attributes: {
                        let mut a = component_common();
                        a.push(opt_attr("avgResponseTime", AttrKind::Real));
                        a.push(opt_attr("utilization", AttrKind::Real));
                        a.push(opt_attr("inFlight", AttrKind::Integer));
                        a.push(opt_attr("requestCount", AttrKind::Integer));
                        a
                    },
                    references: vec![reference("ofType", "ComponentType", 1, UpperBound::Finite(1))],
                },
                ElementTypeDecl {
                    name: "Load".into(),
                    attributes: vec![attr("rate", AttrKind::Real)],
                    references: vec![],
                },
            ],
        },
        ViewKind::Failure => Metamodel {
            name: "failure-view".into(),
            element_types: vec![
                ElementTypeDecl {
                    name: "ComponentType".into(),
                    attributes: vec![attr("name", AttrKind::String), attr("entry", AttrKind::Boolean)],
                    references: vec![reference("instances", "Component", 0, UpperBound::Unbounded)],
                },
                ElementTypeDecl {
                    name: "Component".into(),
                    attributes: {
                        let mut a = component_common();
                        a.push(opt_attr("failureCount", AttrKind::Integer));
                        a
                    },
                    references: vec![reference("ofType", "ComponentType", 1, UpperBound::Finite(1))],
                },
            ],
        },
        ViewKind::Environment => Metamodel {
            name: "environment-view".into(),
            element_types: vec![
                ElementTypeDecl {
                    name: "Node".into(),
                    attributes: vec![
                        attr("name", AttrKind::String),
                        attr("capacity", AttrKind::Integer),
                        attr("hosted", AttrKind::Integer),
                    ],
                    references: vec![],
                },
                ElementTypeDecl {
                    name: "Load".into(),
                    attributes: vec![attr("rate", AttrKind::Real), attr("lost", AttrKind::Integer)],
                    references: vec![],
                },
            ],
        },
    }
}

/// The standard projection table for a concern view. These are also shipped
/// as data files with scenario bundles; the constructors here are the
/// reference definitions.
pub fn standard_view_spec(kind: ViewKind) -> ViewSpec {
    let rules = match kind {
        ViewKind::Architecture => vec![
            ProjectionRule {
                rule_name: "componentType".into(),
                impl_type: "TypeDef".into(),
                view_type: "ComponentType".into(),
                creatable: false,
                attrs: vec![id_attr("name"), copy("entry", "entry", false, false)],
                links: vec![reverse("instances", "Instance", "ofType")],
            },
            ProjectionRule {
                rule_name: "component".into(),
                impl_type: "Instance".into(),
                view_type: "Component".into(),
                creatable: true,
                attrs: vec![
                    id_attr("name"),
                    link_target("type", "ofType", false, true),
                    link_target("node", "on", true, true),
                    copy("state", "state", true, true),
                ],
                links: vec![mirror("ofType", "ofType", false, true)],
            },
            ProjectionRule {
                rule_name: "wire".into(),
                impl_type: "Connector".into(),
                view_type: "Wire".into(),
                creatable: true,
                attrs: vec![copy("interface", "interface", false, true)],
                links: vec![mirror("from", "from", false, true), mirror("to", "to", true, true)],
            },
        ],
        ViewKind::Performance => vec![
            ProjectionRule {
                rule_name: "componentType".into(),
                impl_type: "TypeDef".into(),
                view_type: "ComponentType".into(),
                creatable: false,
                attrs: vec![
                    id_attr("name"),
                    copy("serviceTimeMean", "serviceTimeMean", false, false),
                    copy("entry", "entry", false, false),
                ],
                links: vec![reverse("instances", "Instance", "ofType")],
            },
            ProjectionRule {
                rule_name: "component".into(),
                impl_type: "Instance".into(),
                view_type: "Component".into(),
                creatable: true,
                attrs: vec![
                    id_attr("name"),
                    link_target("type", "ofType", false, true),
                    link_target("node", "on", true, true),
                    copy("state", "state", true, true),
                    copy("avgResponseTime", "avgResponseTime", false, false),
                    copy("utilization", "utilization", false, false),
                    copy("inFlight", "inFlight", false, false),
                    copy("requestCount", "requestCount", false, false),
                ],
                links: vec![mirror("ofType", "ofType", false, true)],
            },
            ProjectionRule {
                rule_name: "workload".into(),
                impl_type: "Load".into(),
                view_type: "Load".into(),
                creatable: false,
                attrs: vec![copy("rate", "rate", false, false)],
                links: vec![],
            },
        ],
        ViewKind::Failure => vec![
            ProjectionRule {
                rule_name: "componentType".into(),
                impl_type: "TypeDef".into(),
                view_type: "ComponentType".into(),
                creatable: false,
                attrs: vec![id_attr("name"), copy("entry", "entry", false, false)],
                links: vec![reverse("instances", "Instance", "ofType")],
            },
            ProjectionRule {
                rule_name: "component".into(),
                impl_type: "Instance".into(),
                view_type: "Component".into(),
                creatable: true,
                attrs: vec![
                    id_attr("name"),
                    link_target("type", "ofType", false, true),
                    link_target("node", "on", true, true),
                    copy("state", "state", true, true),
                    copy("failureCount", "failureCount", false, false),
                ],
                links: vec![mirror("ofType", "ofType", false, true)],
            },
        ],
        ViewKind::Environment => vec![
            ProjectionRule {
                rule_name: "node".into(),
                impl_type: "Node".into(),
                view_type: "Node".into(),
                creatable: false,
                attrs: vec![
                    id_attr("name"),
                    copy("capacity", "capacity", false, false),
                    AttrDerivation::CountLinked {
                        view_attr: "hosted".into(),
                        impl_type: "Instance".into(),
                        impl_ref: "on".into(),
                    },
                ],
                links: vec![],
            },
            ProjectionRule {
                rule_name: "workload".into(),
                impl_type: "Load".into(),
                view_type: "Load".into(),
                creatable: false,
                attrs: vec![copy("rate", "rate", false, false), copy("lost", "lost", false, false)],
                links: vec![],
            },
        ],
    };
    ViewSpec {
        view_kind: kind,
        view_metamodel: view_metamodel(kind).name,
        rules,
    }
}

// ---------------------------------------------------------------------------
// Correspondence store
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CorrespondenceLink {
    pub impl_id: ElementId,
    pub view_id: ElementId,
    pub rule_name: String,
}

/// Explicit pairings between implementation elements and the view elements
/// projected from them, per view. A view element corresponds to at most one
/// implementation element (the map is keyed by view id).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CorrespondenceStore {
    pub links: BTreeMap<ElementId, CorrespondenceLink>,
}

impl CorrespondenceStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn impl_of(&self, view_id: &ElementId) -> Option<&ElementId> {
        self.links.get(view_id).map(|l| &l.impl_id)
    }

    /// Both ends of every pairing must exist.
    pub fn validate(&self, impl_model: &TypedModel, view: &TypedModel) -> Result<(), SyncError> {
        for (view_id, link) in &self.links {
            if view.element(view_id).is_none() {
                return Err(SyncError::CorrespondenceCorrupt {
                    detail: format!("view element `{view_id}` vanished"),
                });
            }
            if impl_model.element(&link.impl_id).is_none() {
                return Err(SyncError::CorrespondenceCorrupt {
                    detail: format!(
                        "implementation element `{}` behind view element `{view_id}` vanished",
                        link.impl_id
                    ),
                });
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Forward direction
// ---------------------------------------------------------------------------

/// Compute the full projection of the implementation model under a view
/// spec, together with the correspondence pairings that produced it.
pub fn project(impl_model: &TypedModel, spec: &ViewSpec) -> (TypedModel, Vec<CorrespondenceLink>) {
    let mut view = TypedModel::new(spec.view_metamodel.clone());
    let mut pairs = Vec::new();

    for (id, el) in &impl_model.elements {
        let Some(rule) = spec.rule_for_impl(&el.type_name) else {
            continue;
        };
        let mut out = Element::new(rule.view_type.clone());
        for d in &rule.attrs {
            match d {
                AttrDerivation::Copy { view_attr, impl_attr, .. } => {
                    if let Some(v) = el.attr(impl_attr) {
                        out.attrs.insert(view_attr.clone(), v.clone());
                    }
                }
                AttrDerivation::Id { view_attr } => {
                    out.attrs.insert(view_attr.clone(), id.to_string().into());
                }
                AttrDerivation::LinkTarget { view_attr, impl_ref, .. } => {
                    if let Some(target) = el.targets(impl_ref).first() {
                        out.attrs.insert(view_attr.clone(), target.to_string().into());
                    }
                }
                AttrDerivation::CountLinked { view_attr, impl_type, impl_ref } => {
                    let count = impl_model
                        .elements
                        .values()
                        .filter(|e| {
                            e.type_name == *impl_type && e.targets(impl_ref).contains(id)
                        })
                        .count();
                    out.attrs.insert(view_attr.clone(), AttrValue::Int(count as i64));
                }
            }
        }
        pairs.push(CorrespondenceLink {
            impl_id: id.clone(),
            view_id: id.clone(),
            rule_name: rule.rule_name.clone(),
        });
        view.elements.insert(id.clone(), out);
    }

    // second pass: links (targets must themselves be projected)
    for (id, el) in &impl_model.elements {
        let Some(rule) = spec.rule_for_impl(&el.type_name) else {
            continue;
        };
        for l in &rule.links {
            let targets: Vec<ElementId> = match l {
                LinkDerivation::Mirror { impl_ref, .. } => el
                    .targets(impl_ref)
                    .iter()
                    .filter(|t| view.elements.contains_key(*t))
                    .cloned()
                    .collect(),
                LinkDerivation::Reverse { impl_type, impl_ref, .. } => impl_model
                    .elements
                    .iter()
                    .filter(|(_, e)| e.type_name == *impl_type && e.targets(impl_ref).contains(id))
                    .map(|(other, _)| other.clone())
                    .filter(|t| view.elements.contains_key(t))
                    .collect(),
            };
            if !targets.is_empty() {
                view.elements
                    .get_mut(id)
                    .expect("projected in first pass")
                    .links
                    .insert(l.view_ref().to_string(), targets);
            }
        }
    }

    (view, pairs)
}

/// Bring `view` in line with the projection of the (already updated)
/// implementation model: returns the view delta to patch, and refreshes the
/// correspondence store. An unchanged projection yields an empty delta.
pub fn sync_forward(
    impl_model: &TypedModel,
    view: &TypedModel,
    spec: &ViewSpec,
    store: &mut CorrespondenceStore,
) -> Result<ModelDelta, SyncError> {
    spec.validate()?;
    for (view_id, link) in &store.links {
        if view.element(view_id).is_none() {
            return Err(SyncError::CorrespondenceCorrupt {
                detail: format!(
                    "store pairs `{}` with view element `{view_id}`, which is not in the view",
                    link.impl_id
                ),
            });
        }
    }
    let (target, pairs) = project(impl_model, spec);
    let delta = diff(view, &target)?;
    store.links = pairs
        .into_iter()
        .map(|l| (l.view_id.clone(), l))
        .collect();
    Ok(delta)
}

// ---------------------------------------------------------------------------
// Backward direction
// ---------------------------------------------------------------------------

/// Translate a view delta into an implementation delta whose effect, after
/// one forward pass, leaves the view at a fixpoint. `view` is the model the
/// delta was computed against (pre-delta), `impl_model` the current
/// implementation model. Pairings for elements the delta creates stay local
/// to this pass — the forward pass that closes the loop records them in the
/// store when the view actually gains the elements.
pub fn sync_backward(
    impl_model: &TypedModel,
    impl_mm: &Metamodel,
    view: &TypedModel,
    view_delta: &ModelDelta,
    spec: &ViewSpec,
    store: &mut CorrespondenceStore,
) -> Result<ModelDelta, SyncError> {
    spec.validate()?;
    let mut working = impl_model.clone();
    // view id -> rule name, for elements realized within this delta
    let mut created: BTreeMap<ElementId, String> = BTreeMap::new();
    // ids the delta removes: their detach changes are part of the removal
    let removed: BTreeSet<&ElementId> = view_delta
        .changes
        .iter()
        .filter_map(|c| match c {
            Change::RemoveElement { id, .. } => Some(id),
            _ => None,
        })
        .collect();
    // view ids whose counterparts went away as a cascade of another removal
    let mut cascaded: BTreeSet<ElementId> = BTreeSet::new();

    for change in &view_delta.changes {
        if removed.contains(change.subject())
            && !matches!(change, Change::RemoveElement { .. })
        {
            continue;
        }
        match change {
            Change::AddElement { id, type_name, attrs } => {
                let rule = spec.rule_for_view(type_name).ok_or_else(|| {
                    SyncError::ReadOnlyFeature {
                        feature: format!("{}.{type_name} (no projection rule)", spec.view_kind),
                    }
                })?;
                if !rule.creatable {
                    return Err(SyncError::ReadOnlyFeature {
                        feature: format!("{}.{type_name} (not creatable)", spec.view_kind),
                    });
                }
                let el = realize_element(impl_mm, rule, id, attrs, &working, spec)?;
                working.elements.insert(id.clone(), el);
                created.insert(id.clone(), rule.rule_name.clone());
            }
            Change::RemoveElement { id, type_name, .. } => {
                if cascaded.contains(id) {
                    continue; // already gone with its owning instance
                }
                let rule = spec.rule_for_view(type_name).ok_or_else(|| {
                    SyncError::ReadOnlyFeature {
                        feature: format!("{}.{type_name} (no projection rule)", spec.view_kind),
                    }
                })?;
                if !rule.creatable {
                    return Err(SyncError::ReadOnlyFeature {
                        feature: format!("{}.{type_name} (not removable)", spec.view_kind),
                    });
                }
                let impl_id = store.impl_of(id).cloned().ok_or_else(|| {
                    SyncError::CorrespondenceCorrupt {
                        detail: format!("removal of `{id}` has no recorded counterpart"),
                    }
                })?;
                if rule.impl_type == "Instance" {
                    // an instance takes its own bindings with it
                    let own: Vec<ElementId> = working
                        .elements
                        .iter()
                        .filter(|(_, e)| {
                            e.type_name == "Connector"
                                && e.targets("from").first() == Some(&impl_id)
                        })
                        .map(|(cid, _)| cid.clone())
                        .collect();
                    for c in own {
                        working.elements.remove(&c);
                        store.links.remove(&c);
                        cascaded.insert(c);
                    }
                }
                working.elements.remove(&impl_id);
                store.links.remove(id);
            }
            Change::SetAttribute { id, attr, new, .. } => {
                let (rule, impl_id) =
                    resolve_existing(spec, view, store, &created, id)?;
                let derivation = rule
                    .attrs
                    .iter()
                    .find(|d| d.view_attr() == attr)
                    .ok_or_else(|| SyncError::ReadOnlyFeature {
                        feature: format!("{}.{}.{attr} (underived)", spec.view_kind, rule.view_type),
                    })?;
                let is_new = created.contains_key(&impl_id);
                apply_attr_write(
                    &mut working,
                    spec,
                    rule,
                    derivation,
                    &impl_id,
                    attr,
                    new.as_ref(),
                    is_new,
                )?;
            }
            Change::AddLink { id, ref_name, target, .. }
            | Change::RemoveLink { id, ref_name, target, .. } => {
                let (rule, impl_id) =
                    resolve_existing(spec, view, store, &created, id)?;
                let Some(derivation) = rule.links.iter().find(|l| l.view_ref() == ref_name) else {
                    return Err(SyncError::ReadOnlyFeature {
                        feature: format!(
                            "{}.{}.{ref_name} (underived)",
                            spec.view_kind, rule.view_type
                        ),
                    });
                };
                match derivation {
                    LinkDerivation::Reverse { .. } => {
                        // derived maintenance; the forward pass recomputes it
                    }
                    LinkDerivation::Mirror { impl_ref, writable, .. } => {
                        let is_new = created.contains_key(&impl_id);
                        if !writable && !is_new {
                            return Err(SyncError::ReadOnlyFeature {
                                feature: format!(
                                    "{}.{}.{ref_name}",
                                    spec.view_kind, rule.view_type
                                ),
                            });
                        }
                        let el = working.elements.get_mut(&impl_id).ok_or_else(|| {
                            SyncError::CorrespondenceCorrupt {
                                detail: format!("implementation element `{impl_id}` vanished"),
                            }
                        })?;
                        let list = el.links.entry(impl_ref.clone()).or_default();
                        match change {
                            Change::AddLink { .. } => {
                                if !list.contains(target) {
                                    list.push(target.clone());
                                }
                            }
                            _ => {
                                list.retain(|t| t != target);
                                if list.is_empty() {
                                    el.links.remove(impl_ref);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    complete_bindings(&mut working, &created)?;
    Ok(diff(impl_model, &working)?)
}

/// Find the rule and implementation counterpart of an existing-or-created
/// view element.
fn resolve_existing<'s>(
    spec: &'s ViewSpec,
    view: &TypedModel,
    store: &CorrespondenceStore,
    created: &BTreeMap<ElementId, String>,
    view_id: &ElementId,
) -> Result<(&'s ProjectionRule, ElementId), SyncError> {
    if let Some(rule_name) = created.get(view_id) {
        // realized earlier in this same delta; ids are shared by identity
        let rule = spec
            .rules
            .iter()
            .find(|r| &r.rule_name == rule_name)
            .expect("rule came from this spec");
        return Ok((rule, view_id.clone()));
    }
    let el = view.element(view_id).ok_or_else(|| SyncError::CorrespondenceCorrupt {
        detail: format!("delta touches `{view_id}`, which is not in the view"),
    })?;
    let rule = spec.rule_for_view(&el.type_name).ok_or_else(|| {
        SyncError::CorrespondenceCorrupt {
            detail: format!("view element `{view_id}` of type `{}` matches no rule", el.type_name),
        }
    })?;
    let impl_id = store.impl_of(view_id).cloned().ok_or_else(|| {
        SyncError::CorrespondenceCorrupt {
            detail: format!("view element `{view_id}` has no recorded counterpart"),
        }
    })?;
    Ok((rule, impl_id))
}

/// Construct the implementation element realizing a view-level add. Init
/// derivations consume the add's attributes; every remaining mandatory
/// implementation attribute gets its kind's neutral value.
fn realize_element(
    impl_mm: &Metamodel,
    rule: &ProjectionRule,
    view_id: &ElementId,
    attrs: &BTreeMap<String, AttrValue>,
    working: &TypedModel,
    spec: &ViewSpec,
) -> Result<Element, SyncError> {
    if working.elements.contains_key(view_id) {
        return Err(SyncError::AmbiguousConcretization {
            detail: format!("implementation id `{view_id}` is already taken"),
        });
    }
    let mut el = Element::new(rule.impl_type.clone());
    for d in &rule.attrs {
        match d {
            AttrDerivation::Copy { view_attr, impl_attr, init, .. } if *init => {
                if let Some(v) = attrs.get(view_attr) {
                    el.attrs.insert(impl_attr.clone(), v.clone());
                }
            }
            AttrDerivation::LinkTarget { view_attr, impl_ref, init, .. } if *init => {
                let Some(v) = attrs.get(view_attr) else {
                    return Err(SyncError::AmbiguousConcretization {
                        detail: format!(
                            "{} add of `{view_id}` must set `{view_attr}` explicitly",
                            spec.view_kind
                        ),
                    });
                };
                let target = ElementId::new(v.to_string());
                if working.element(&target).is_none() {
                    return Err(SyncError::AmbiguousConcretization {
                        detail: format!(
                            "`{view_attr}` of `{view_id}` names `{target}`, which does not exist"
                        ),
                    });
                }
                el.links.insert(impl_ref.clone(), vec![target]);
            }
            _ => {}
        }
    }
    // defaults for mandatory implementation attributes not covered above
    let decl = impl_mm.element_type(&rule.impl_type).ok_or_else(|| {
        SyncError::InvalidViewSpec {
            spec: spec.view_kind.to_string(),
            detail: format!(
                "rule `{}` realizes `{}`, which the implementation metamodel lacks",
                rule.rule_name, rule.impl_type
            ),
        }
    })?;
    for a in &decl.attributes {
        if a.optional || el.attrs.contains_key(&a.name) {
            continue;
        }
        let neutral = match &a.kind {
            AttrKind::String => AttrValue::Str(String::new()),
            AttrKind::Integer => AttrValue::Int(0),
            AttrKind::Real => AttrValue::Real(0.0),
            AttrKind::Boolean => AttrValue::Bool(false),
            AttrKind::Enum(lits) => AttrValue::Str(lits.first().cloned().unwrap_or_default()),
        };
        el.attrs.insert(a.name.clone(), neutral);
    }
    Ok(el)
}

#[allow(clippy::too_many_arguments)]
fn apply_attr_write(
    working: &mut TypedModel,
    spec: &ViewSpec,
    rule: &ProjectionRule,
    derivation: &AttrDerivation,
    impl_id: &ElementId,
    view_attr: &str,
    new: Option<&AttrValue>,
    is_new: bool,
) -> Result<(), SyncError> {
    let feature = format!("{}.{}.{view_attr}", spec.view_kind, rule.view_type);
    match derivation {
        AttrDerivation::Id { .. } | AttrDerivation::CountLinked { .. } => {
            Err(SyncError::ReadOnlyFeature { feature })
        }
        AttrDerivation::Copy { impl_attr, writable, .. } => {
            if !writable && !is_new {
                return Err(SyncError::ReadOnlyFeature { feature });
            }
            let el = working.elements.get_mut(impl_id).ok_or_else(|| {
                SyncError::CorrespondenceCorrupt {
                    detail: format!("implementation element `{impl_id}` vanished"),
                }
            })?;
            match new {
                Some(v) => {
                    el.attrs.insert(impl_attr.clone(), v.clone());
                }
                None => {
                    el.attrs.remove(impl_attr);
                }
            }
            Ok(())
        }
        AttrDerivation::LinkTarget { impl_ref, writable, .. } => {
            if !writable && !is_new {
                return Err(SyncError::ReadOnlyFeature { feature });
            }
            let Some(v) = new else {
                return Err(SyncError::AmbiguousConcretization {
                    detail: format!("clearing `{feature}` leaves no implementation target"),
                });
            };
            let target = ElementId::new(v.to_string());
            if working.element(&target).is_none() {
                return Err(SyncError::AmbiguousConcretization {
                    detail: format!("`{feature}` names `{target}`, which does not exist"),
                });
            }
            working
                .elements
                .get_mut(impl_id)
                .ok_or_else(|| SyncError::CorrespondenceCorrupt {
                    detail: format!("implementation element `{impl_id}` vanished"),
                })?
                .links
                .insert(impl_ref.clone(), vec![target]);
            Ok(())
        }
    }
}

/// After all changes are realized, every created instance must have each
/// required interface of its type bound. For interfaces the view delta did
/// not wire explicitly, bind to the lexicographically first running
/// provider; with no running provider the edit is not realizable.
fn complete_bindings(
    working: &mut TypedModel,
    created: &BTreeMap<ElementId, String>,
) -> Result<(), SyncError> {
    for id in created.keys() {
        let Some(el) = working.element(id) else { continue };
        if el.type_name != "Instance" {
            continue;
        }
        let Some(type_id) = el.targets("ofType").first().cloned() else {
            continue; // nonconforming; surfaces when the delta is applied
        };
        let required: Vec<ElementId> = working
            .element(&type_id)
            .map(|t| t.targets("requires").to_vec())
            .unwrap_or_default();
        for interface in required {
            let cid = ElementId::new(connector_id(&id.to_string(), &interface.to_string()));
            let already = working.elements.values().any(|e| {
                e.type_name == "Connector"
                    && e.targets("from").first() == Some(id)
                    && e.attr("interface").map(|v| v.to_string()) == Some(interface.to_string())
            });
            if already {
                continue;
            }
            let provider = working
                .elements
                .iter()
                .find(|(_, e)| {
                    e.type_name == "Instance"
                        && e.attr("state").and_then(|v| v.as_str()) == Some("running")
                        && e.targets("ofType").first().and_then(|t| working.element(t)).is_some_and(
                            |t| t.targets("provides").contains(&interface),
                        )
                })
                .map(|(pid, _)| pid.clone());
            let Some(provider) = provider else {
                return Err(SyncError::AmbiguousConcretization {
                    detail: format!(
                        "no running provider for interface `{interface}` required by `{id}`"
                    ),
                });
            };
            let c = Element::new("Connector")
                .with_attr("interface", interface.to_string())
                .with_links("from", [id.clone()])
                .with_links("to", [provider]);
            working.elements.insert(cid, c);
        }
    }
    Ok(())
}
