//! The megamodel: a registry of runtime models and of everything that ties
//! them together.
//!
//! A [`Megamodel`] holds four kinds of things:
//!
//! * **Model nodes** — slots for typed models, each categorized by what the
//!   model is for: reflection models describe or prescribe the system or its
//!   environment; adaptation models (evaluation and change models) steer the
//!   feedback loops.
//! * **Relation edges** — typed links between model nodes (overlap,
//!   refinement, deployment, trace, synchronization, change propagation,
//!   derives), each classified critical or not. Synchronization and
//!   change-propagation relations are executable and name the operation unit
//!   implementing them.
//! * **Operation units** — executable reads/writes/applications of models,
//!   with declared input and output nodes. Behaviors are looked up by name
//!   at enactment time; see [`enact`](Megamodel::enact).
//! * **Process graphs** — DAGs of units with control edges; a feedback loop
//!   is such a process, and running it is enactment.
//!
//! The registry answers impact queries ("which models are affected if this
//! one changes?") by following relations transitively, validates its own
//! well-formedness, and exports to DOT and JSON.

mod enact;
mod export;

pub use enact::{BehaviorError, BehaviorRegistry, EnactError, UnitBehavior, UnitIo};
pub use export::import_json;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::model::{conforms, Metamodel, TypedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopCategory {
    Reflection,
    Adaptation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subject {
    System,
    Environment,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Descriptive,
    Prescriptive,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdaptationKind {
    Evaluation,
    Change,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdaptationMode {
    Explicit,
    Implicit,
    None,
}

/// Descriptor of one registered model: its slot id, the metamodel its
/// contents must conform to, and the category attributes that say what kind
/// of runtime model lives here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ModelNode {
    pub node_id: String,
    pub metamodel: String,
    pub top_category: TopCategory,
    #[serde(default = "subject_none")]
    pub subject: Subject,
    #[serde(default = "mode_none")]
    pub mode: Mode,
    #[serde(default)]
    pub analyzable: bool,
    #[serde(default = "adaptation_kind_none")]
    pub adaptation_kind: AdaptationKind,
    #[serde(default = "adaptation_mode_none")]
    pub adaptation_mode: AdaptationMode,
}

fn subject_none() -> Subject {
    Subject::None
}
fn mode_none() -> Mode {
    Mode::None
}
fn adaptation_kind_none() -> AdaptationKind {
    AdaptationKind::None
}
fn adaptation_mode_none() -> AdaptationMode {
    AdaptationMode::None
}

impl ModelNode {
    /// Shorthand for a reflection-model descriptor.
    pub fn reflection(
        node_id: impl Into<String>,
        metamodel: impl Into<String>,
        subject: Subject,
        mode: Mode,
        analyzable: bool,
    ) -> Self {
        Self {
            node_id: node_id.into(),
            metamodel: metamodel.into(),
            top_category: TopCategory::Reflection,
            subject,
            mode,
            analyzable,
            adaptation_kind: AdaptationKind::None,
            adaptation_mode: AdaptationMode::None,
        }
    }

    /// Shorthand for an adaptation-model descriptor.
    pub fn adaptation(
        node_id: impl Into<String>,
        metamodel: impl Into<String>,
        kind: AdaptationKind,
        mode: AdaptationMode,
    ) -> Self {
        Self {
            node_id: node_id.into(),
            metamodel: metamodel.into(),
            top_category: TopCategory::Adaptation,
            subject: Subject::None,
            mode: Mode::None,
            analyzable: false,
            adaptation_kind: kind,
            adaptation_mode: mode,
        }
    }

    /// The category attributes must be a coherent combination: reflection
    /// models have a subject and a mode and no adaptation kind; adaptation
    /// models have kind and mode of adaptation and no subject.
    pub fn category_error(&self) -> Option<String> {
        match self.top_category {
            TopCategory::Reflection => {
                if self.subject == Subject::None {
                    return Some("reflection node needs subject ∈ {system, environment}".into());
                }
                if self.mode == Mode::None {
                    return Some("reflection node needs mode ∈ {descriptive, prescriptive}".into());
                }
                if self.adaptation_kind != AdaptationKind::None {
                    return Some("reflection node must have adaptationKind = none".into());
                }
            }
            TopCategory::Adaptation => {
                if self.adaptation_kind == AdaptationKind::None {
                    return Some("adaptation node needs adaptationKind ∈ {evaluation, change}".into());
                }
                if self.adaptation_mode == AdaptationMode::None {
                    return Some("adaptation node needs adaptationMode ∈ {explicit, implicit}".into());
                }
                if self.subject != Subject::None {
                    return Some("adaptation node must have subject = none".into());
                }
            }
        }
        None
    }

    /// Stereotype string used by the DOT export, e.g.
    /// `reflection · system · descriptive`.
    pub fn stereotype(&self) -> String {
        match self.top_category {
            TopCategory::Reflection => {
                let subject = match self.subject {
                    Subject::System => "system",
                    Subject::Environment => "environment",
                    Subject::None => "?",
                };
                let mode = match self.mode {
                    Mode::Descriptive => "descriptive",
                    Mode::Prescriptive => "prescriptive",
                    Mode::None => "?",
                };
                let mut s = format!("reflection · {subject} · {mode}");
                if self.analyzable {
                    s.push_str(" · analyzable");
                }
                s
            }
            TopCategory::Adaptation => {
                let kind = match self.adaptation_kind {
                    AdaptationKind::Evaluation => "evaluation",
                    AdaptationKind::Change => "change",
                    AdaptationKind::None => "?",
                };
                let mode = match self.adaptation_mode {
                    AdaptationMode::Explicit => "explicit",
                    AdaptationMode::Implicit => "implicit",
                    AdaptationMode::None => "?",
                };
                format!("adaptation · {kind} · {mode}")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum RelationKind {
    Overlap,
    Refinement,
    Deployment,
    Trace,
    Synchronization,
    ChangePropagation,
    Derives,
}

impl RelationKind {
    /// Synchronization and change propagation are executable; the rest are
    /// organizational.
    pub fn executable(self) -> bool {
        matches!(self, RelationKind::Synchronization | RelationKind::ChangePropagation)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RelationKind::Overlap => "overlap",
            RelationKind::Refinement => "refinement",
            RelationKind::Deployment => "deployment",
            RelationKind::Trace => "trace",
            RelationKind::Synchronization => "synchronization",
            RelationKind::ChangePropagation => "changePropagation",
            RelationKind::Derives => "derives",
        }
    }
}

/// A typed relation between two registered model nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RelationEdge {
    pub relation_id: String,
    pub source: String,
    pub target: String,
    pub kind: RelationKind,
    pub critical: bool,
    pub directed: bool,
    /// Operation unit implementing the relation; required for executable
    /// kinds, absent for organizational ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Read,
    Write,
    Apply,
}

/// An executable operation over models: reads its inputs, writes its
/// outputs, with the actual behavior resolved by name at enactment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OperationUnit {
    pub unit_id: String,
    pub op_kind: OpKind,
    #[serde(default)]
    pub input_nodes: Vec<String>,
    #[serde(default)]
    pub output_nodes: Vec<String>,
    pub behavior: String,
}

/// What starts a process: a periodic timer or a named event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Trigger {
    Timer { period: f64 },
    Event { event: String },
}

/// A DAG of operation units; control edges are precedence pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProcessGraph {
    pub process_id: String,
    pub units: Vec<String>,
    #[serde(default)]
    pub control_edges: Vec<(String, String)>,
    pub trigger: Trigger,
}

/// Outcome of one unit execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum UnitOutcome {
    Ok,
    Skipped,
    Failed { reason: String },
}

/// One model written by a unit: node, resulting version, delta summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WriteRecord {
    pub node: String,
    pub version: u64,
    pub delta_summary: String,
}

/// One executed (or skipped, or failed) unit in an enactment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TraceRecord {
    pub sim_time: f64,
    pub unit_id: String,
    pub reads: Vec<(String, u64)>,
    pub writes: Vec<WriteRecord>,
    #[serde(flatten)]
    pub outcome: UnitOutcome,
}

/// Complete record of one process enactment, ordered consistently with the
/// process's control edges.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub process_id: String,
    pub records: Vec<TraceRecord>,
}

impl ExecutionTrace {
    pub fn failures(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records
            .iter()
            .filter(|r| matches!(r.outcome, UnitOutcome::Failed { .. }))
    }

    pub fn record(&self, unit_id: &str) -> Option<&TraceRecord> {
        self.records.iter().find(|r| r.unit_id == unit_id)
    }
}

/// Structural rule checked by [`Megamodel::validate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum WfKind {
    DanglingEndpoint,
    MissingBehaviorRef,
    NonDagProcess,
    UnknownUnit,
    UnknownNodeInUnit,
    UnreachableUnit,
    BadApplyUnit,
    BadCategoryCombination,
    NonConformingContent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WfFinding {
    pub kind: WfKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WellFormednessReport {
    pub well_formed: bool,
    pub findings: Vec<WfFinding>,
}

/// Errors raised by registry mutations and queries.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MegamodelError {
    #[error("invalid category combination on node `{node}`: {reason}")]
    InvalidCategoryCombination { node: String, reason: String },
    #[error("initial model for node `{node}` does not conform to `{metamodel}`: {detail}")]
    NonConformingInitialModel {
        node: String,
        metamodel: String,
        detail: String,
    },
    #[error("no metamodel named `{0}` is registered")]
    UnknownMetamodel(String),
    #[error("a metamodel named `{0}` is already registered")]
    DuplicateMetamodel(String),
    #[error("invalid metamodel `{name}`: {reason}")]
    InvalidMetamodel { name: String, reason: String },
    #[error("a node with id `{0}` is already registered")]
    DuplicateNode(String),
    #[error("a relation with id `{0}` is already registered")]
    DuplicateRelation(String),
    #[error("a unit with id `{0}` is already registered")]
    DuplicateUnit(String),
    #[error("a process with id `{0}` is already registered")]
    DuplicateProcess(String),
    #[error("relation `{relation}` references unregistered node `{node}`")]
    DanglingEndpoint { relation: String, node: String },
    #[error("relation `{relation}` is a self-loop on `{node}`")]
    SelfLoop { relation: String, node: String },
    #[error("executable relation `{relation}` ({kind}) names no implementing unit")]
    MissingBehavior { relation: String, kind: String },
    #[error("no node named `{0}` is registered")]
    UnknownNode(String),
    #[error("no unit named `{0}` is registered")]
    UnknownUnit(String),
    #[error("apply unit `{unit}` is ill-formed: {reason}")]
    InvalidApplyUnit { unit: String, reason: String },
    #[error("unit `{unit}` references unregistered node `{node}`")]
    UnknownNodeInUnit { unit: String, node: String },
    #[error("process `{process}` references unregistered unit `{unit}`")]
    UnknownUnitInProcess { process: String, unit: String },
    #[error("import failed: {0}")]
    Import(String),
}

/// The registry itself. All iteration orders are deterministic (BTree-based),
/// so exports and enactment traces are reproducible.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Megamodel {
    metamodels: BTreeMap<String, Metamodel>,
    nodes: BTreeMap<String, ModelNode>,
    contents: BTreeMap<String, TypedModel>,
    relations: BTreeMap<String, RelationEdge>,
    units: BTreeMap<String, OperationUnit>,
    processes: BTreeMap<String, ProcessGraph>,
}

impl Megamodel {
    pub fn new() -> Self {
        Self::default()
    }

    // ------------------------------------------------------------------
    // Registration
    // ------------------------------------------------------------------

    pub fn add_metamodel(&mut self, mm: Metamodel) -> Result<(), MegamodelError> {
        if self.metamodels.contains_key(&mm.name) {
            return Err(MegamodelError::DuplicateMetamodel(mm.name));
        }
        mm.check().map_err(|e| MegamodelError::InvalidMetamodel {
            name: mm.name.clone(),
            reason: e.to_string(),
        })?;
        self.metamodels.insert(mm.name.clone(), mm);
        Ok(())
    }

    /// Register a model node together with its initial content. The content
    /// must conform to the declared metamodel; its version is preserved.
    pub fn register_model(
        &mut self,
        descriptor: ModelNode,
        initial: TypedModel,
    ) -> Result<String, MegamodelError> {
        if self.nodes.contains_key(&descriptor.node_id) {
            return Err(MegamodelError::DuplicateNode(descriptor.node_id));
        }
        if let Some(reason) = descriptor.category_error() {
            return Err(MegamodelError::InvalidCategoryCombination {
                node: descriptor.node_id,
                reason,
            });
        }
        let mm = self
            .metamodels
            .get(&descriptor.metamodel)
            .ok_or_else(|| MegamodelError::UnknownMetamodel(descriptor.metamodel.clone()))?;
        let report = conforms(&initial, mm).map_err(|e| MegamodelError::NonConformingInitialModel {
            node: descriptor.node_id.clone(),
            metamodel: descriptor.metamodel.clone(),
            detail: e.to_string(),
        })?;
        if !report.conforms {
            return Err(MegamodelError::NonConformingInitialModel {
                node: descriptor.node_id.clone(),
                metamodel: descriptor.metamodel.clone(),
                detail: format!(
                    "{} violation(s), first: {}",
                    report.violations.len(),
                    report.violations[0].message
                ),
            });
        }
        let id = descriptor.node_id.clone();
        self.contents.insert(id.clone(), initial);
        self.nodes.insert(id.clone(), descriptor);
        Ok(id)
    }

    pub fn add_relation(&mut self, edge: RelationEdge) -> Result<String, MegamodelError> {
        if self.relations.contains_key(&edge.relation_id) {
            return Err(MegamodelError::DuplicateRelation(edge.relation_id));
        }
        for endpoint in [&edge.source, &edge.target] {
            if !self.nodes.contains_key(endpoint) {
                return Err(MegamodelError::DanglingEndpoint {
                    relation: edge.relation_id,
                    node: endpoint.clone(),
                });
            }
        }
        if edge.source == edge.target {
            return Err(MegamodelError::SelfLoop {
                relation: edge.relation_id,
                node: edge.source,
            });
        }
        if edge.kind.executable() {
            match &edge.unit {
                None => {
                    return Err(MegamodelError::MissingBehavior {
                        relation: edge.relation_id,
                        kind: edge.kind.as_str().to_string(),
                    })
                }
                Some(unit) if !self.units.contains_key(unit) => {
                    return Err(MegamodelError::UnknownUnit(unit.clone()));
                }
                Some(_) => {}
            }
        }
        let id = edge.relation_id.clone();
        self.relations.insert(id.clone(), edge);
        Ok(id)
    }

    pub fn register_unit(&mut self, unit: OperationUnit) -> Result<String, MegamodelError> {
        if self.units.contains_key(&unit.unit_id) {
            return Err(MegamodelError::DuplicateUnit(unit.unit_id));
        }
        for node in unit.input_nodes.iter().chain(&unit.output_nodes) {
            if !self.nodes.contains_key(node) {
                return Err(MegamodelError::UnknownNodeInUnit {
                    unit: unit.unit_id,
                    node: node.clone(),
                });
            }
        }
        if unit.op_kind == OpKind::Apply {
            if let Some(reason) = self.apply_unit_error(&unit) {
                return Err(MegamodelError::InvalidApplyUnit {
                    unit: unit.unit_id,
                    reason,
                });
            }
        }
        let id = unit.unit_id.clone();
        self.units.insert(id.clone(), unit);
        Ok(id)
    }

    /// Apply units apply an adaptation model to a reflection model, so they
    /// must read at least one of each.
    fn apply_unit_error(&self, unit: &OperationUnit) -> Option<String> {
        let has = |cat: TopCategory| {
            unit.input_nodes
                .iter()
                .filter_map(|n| self.nodes.get(n))
                .any(|n| n.top_category == cat)
        };
        if !has(TopCategory::Adaptation) {
            return Some("apply unit needs at least one adaptation-model input".into());
        }
        if !has(TopCategory::Reflection) {
            return Some("apply unit needs at least one reflection-model input".into());
        }
        None
    }

    pub fn register_process(&mut self, process: ProcessGraph) -> Result<String, MegamodelError> {
        if self.processes.contains_key(&process.process_id) {
            return Err(MegamodelError::DuplicateProcess(process.process_id));
        }
        for unit in process
            .units
            .iter()
            .chain(process.control_edges.iter().flat_map(|(a, b)| [a, b]))
        {
            if !self.units.contains_key(unit) {
                return Err(MegamodelError::UnknownUnitInProcess {
                    process: process.process_id,
                    unit: unit.clone(),
                });
            }
        }
        let id = process.process_id.clone();
        self.processes.insert(id.clone(), process);
        Ok(id)
    }

    // ------------------------------------------------------------------
    // Lookup
    // ------------------------------------------------------------------

    pub fn node(&self, id: &str) -> Option<&ModelNode> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &ModelNode> {
        self.nodes.values()
    }

    pub fn content(&self, node_id: &str) -> Option<&TypedModel> {
        self.contents.get(node_id)
    }

    /// Version counter of a node's content; `None` for unknown nodes.
    pub fn version(&self, node_id: &str) -> Option<u64> {
        self.contents.get(node_id).map(|m| m.version)
    }

    /// Snapshot of every node's content version, for write-discipline audits.
    pub fn versions(&self) -> BTreeMap<String, u64> {
        self.contents
            .iter()
            .map(|(k, v)| (k.clone(), v.version))
            .collect()
    }

    pub fn metamodel(&self, name: &str) -> Option<&Metamodel> {
        self.metamodels.get(name)
    }

    pub fn metamodels(&self) -> impl Iterator<Item = &Metamodel> {
        self.metamodels.values()
    }

    pub fn relation(&self, id: &str) -> Option<&RelationEdge> {
        self.relations.get(id)
    }

    pub fn relations(&self) -> impl Iterator<Item = &RelationEdge> {
        self.relations.values()
    }

    /// Relations touching a node, in relation-id order.
    pub fn relations_of<'a>(&'a self, node_id: &'a str) -> impl Iterator<Item = &'a RelationEdge> + 'a {
        self.relations
            .values()
            .filter(move |r| r.source == node_id || r.target == node_id)
    }

    pub fn unit(&self, id: &str) -> Option<&OperationUnit> {
        self.units.get(id)
    }

    pub fn units(&self) -> impl Iterator<Item = &OperationUnit> {
        self.units.values()
    }

    pub fn process(&self, id: &str) -> Option<&ProcessGraph> {
        self.processes.get(id)
    }

    pub fn processes(&self) -> impl Iterator<Item = &ProcessGraph> {
        self.processes.values()
    }

    pub(crate) fn content_mut(&mut self, node_id: &str) -> Option<&mut TypedModel> {
        self.contents.get_mut(node_id)
    }

    pub(crate) fn metamodel_of_node(&self, node_id: &str) -> Option<&Metamodel> {
        self.nodes
            .get(node_id)
            .and_then(|n| self.metamodels.get(&n.metamodel))
    }

    // ------------------------------------------------------------------
    // Impact analysis
    // ------------------------------------------------------------------

    /// Nodes reachable from `start` by following relations transitively:
    /// directed edges source→target, undirected edges both ways. With
    /// `critical_only`, only critical relations are traversed. `start`
    /// itself is excluded even if it lies on a cycle.
    pub fn impact_set(
        &self,
        start: &str,
        critical_only: bool,
    ) -> Result<BTreeSet<String>, MegamodelError> {
        if !self.nodes.contains_key(start) {
            return Err(MegamodelError::UnknownNode(start.to_string()));
        }
        let mut seen: BTreeSet<String> = BTreeSet::new();
        let mut frontier: VecDeque<&str> = VecDeque::new();
        frontier.push_back(start);
        let mut visited: BTreeSet<&str> = BTreeSet::new();
        visited.insert(start);
        while let Some(current) = frontier.pop_front() {
            for edge in self.relations.values() {
                if critical_only && !edge.critical {
                    continue;
                }
                let next = if edge.source == current {
                    Some(edge.target.as_str())
                } else if !edge.directed && edge.target == current {
                    Some(edge.source.as_str())
                } else {
                    None
                };
                if let Some(next) = next {
                    if visited.insert(next) {
                        seen.insert(next.to_string());
                        frontier.push_back(next);
                    }
                }
            }
        }
        seen.remove(start);
        Ok(seen)
    }

    // ------------------------------------------------------------------
    // Well-formedness
    // ------------------------------------------------------------------

    /// Re-check every structural rule and report all violations. Registration
    /// enforces most of these eagerly; `validate` exists so imported or
    /// long-lived megamodels can be audited wholesale.
    pub fn validate(&self) -> WellFormednessReport {
        let mut findings = Vec::new();

        for node in self.nodes.values() {
            if let Some(reason) = node.category_error() {
                findings.push(WfFinding {
                    kind: WfKind::BadCategoryCombination,
                    message: format!("node `{}`: {reason}", node.node_id),
                });
            }
            match self.metamodels.get(&node.metamodel) {
                None => findings.push(WfFinding {
                    kind: WfKind::NonConformingContent,
                    message: format!(
                        "node `{}` declares unregistered metamodel `{}`",
                        node.node_id, node.metamodel
                    ),
                }),
                Some(mm) => {
                    if let Some(model) = self.contents.get(&node.node_id) {
                        match conforms(model, mm) {
                            Ok(report) if !report.conforms => findings.push(WfFinding {
                                kind: WfKind::NonConformingContent,
                                message: format!(
                                    "node `{}` content has {} conformance violation(s)",
                                    node.node_id,
                                    report.violations.len()
                                ),
                            }),
                            Err(e) => findings.push(WfFinding {
                                kind: WfKind::NonConformingContent,
                                message: format!("node `{}`: {e}", node.node_id),
                            }),
                            _ => {}
                        }
                    }
                }
            }
        }

        for edge in self.relations.values() {
            for endpoint in [&edge.source, &edge.target] {
                if !self.nodes.contains_key(endpoint) {
                    findings.push(WfFinding {
                        kind: WfKind::DanglingEndpoint,
                        message: format!(
                            "relation `{}` references unregistered node `{endpoint}`",
                            edge.relation_id
                        ),
                    });
                }
            }
            if edge.kind.executable() {
                match &edge.unit {
                    None => findings.push(WfFinding {
                        kind: WfKind::MissingBehaviorRef,
                        message: format!(
                            "executable relation `{}` names no implementing unit",
                            edge.relation_id
                        ),
                    }),
                    Some(unit) if !self.units.contains_key(unit) => findings.push(WfFinding {
                        kind: WfKind::UnknownUnit,
                        message: format!(
                            "relation `{}` names unregistered unit `{unit}`",
                            edge.relation_id
                        ),
                    }),
                    Some(_) => {}
                }
            }
        }

        for unit in self.units.values() {
            for node in unit.input_nodes.iter().chain(&unit.output_nodes) {
                if !self.nodes.contains_key(node) {
                    findings.push(WfFinding {
                        kind: WfKind::UnknownNodeInUnit,
                        message: format!(
                            "unit `{}` references unregistered node `{node}`",
                            unit.unit_id
                        ),
                    });
                }
            }
            if unit.op_kind == OpKind::Apply {
                if let Some(reason) = self.apply_unit_error(unit) {
                    findings.push(WfFinding {
                        kind: WfKind::BadApplyUnit,
                        message: format!("unit `{}`: {reason}", unit.unit_id),
                    });
                }
            }
        }

        for process in self.processes.values() {
            findings.extend(self.process_findings(process));
        }

        WellFormednessReport {
            well_formed: findings.is_empty(),
            findings,
        }
    }

    /// Structural findings for one process: unknown units, cycles,
    /// unreachable units.
    pub(crate) fn process_findings(&self, process: &ProcessGraph) -> Vec<WfFinding> {
        let mut findings = Vec::new();
        let members: BTreeSet<&str> = process.units.iter().map(String::as_str).collect();
        for unit in &process.units {
            if !self.units.contains_key(unit) {
                findings.push(WfFinding {
                    kind: WfKind::UnknownUnit,
                    message: format!(
                        "process `{}` lists unregistered unit `{unit}`",
                        process.process_id
                    ),
                });
            }
        }
        for (from, to) in &process.control_edges {
            for u in [from, to] {
                if !members.contains(u.as_str()) {
                    findings.push(WfFinding {
                        kind: WfKind::UnknownUnit,
                        message: format!(
                            "process `{}` has a control edge touching `{u}`, which is not among its units",
                            process.process_id
                        ),
                    });
                }
            }
        }
        if !findings.is_empty() {
            return findings;
        }

        // Kahn's algorithm: leftovers indicate a cycle; units never reached
        // from an entry (in-degree 0) are the same leftovers.
        let mut indegree: BTreeMap<&str, usize> =
            members.iter().map(|u| (*u, 0usize)).collect();
        for (_, to) in &process.control_edges {
            *indegree.get_mut(to.as_str()).unwrap() += 1;
        }
        let mut ready: BTreeSet<&str> = indegree
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(u, _)| *u)
            .collect();
        let mut done = 0usize;
        while let Some(&u) = ready.iter().next() {
            ready.remove(u);
            done += 1;
            for (from, to) in &process.control_edges {
                if from == u {
                    let d = indegree.get_mut(to.as_str()).unwrap();
                    *d -= 1;
                    if *d == 0 {
                        ready.insert(to.as_str());
                    }
                }
            }
        }
        if done != members.len() {
            findings.push(WfFinding {
                kind: WfKind::NonDagProcess,
                message: format!(
                    "process `{}` has a control cycle ({} of {} units unreachable)",
                    process.process_id,
                    members.len() - done,
                    members.len()
                ),
            });
            for (u, d) in indegree {
                if d > 0 {
                    findings.push(WfFinding {
                        kind: WfKind::UnreachableUnit,
                        message: format!(
                            "unit `{u}` in process `{}` is never reached from an entry unit",
                            process.process_id
                        ),
                    });
                }
            }
        }
        findings
    }
}
