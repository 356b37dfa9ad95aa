//! The adaptation layer: evaluation and change models, constraint-based
//! analysis with a utility measure, candidate planning, cross-concern change
//! propagation with accept/rollback review, derivation and execution of
//! reconfiguration actions, and hierarchical manager escalation.
//!
//! Evaluation models and change models are themselves typed models (see
//! [`evaluation_metamodel`] and [`change_metamodel`]), so they live in the
//! registry like any other content, ship as data files, and can be swapped
//! at runtime by a higher-level manager without touching the reflection
//! models. [`parse_evaluation`] and [`parse_change`] decode them into the
//! executable forms used here; [`EvaluationSpec::to_model`] and
//! [`ChangeSpec::to_model`] encode them back.
//!
//! The activity cycle works on the concern views maintained by the causal
//! connection: [`analyze`] applies an evaluation model read-only and
//! produces an [`AnalysisModel`]; [`plan`] generates candidate target
//! configurations from a change model (implicit event-condition-action
//! rules or explicit variants), predicts each candidate's utility, and
//! picks the best one deterministically; [`propagate_changes`] maps the
//! winning structural edits onto the architecture model where
//! [`adaptation_analysis`] reviews them against a constraint model and
//! issues an [`AdaptationReport`] that either clears the proposal for
//! execution or orders a [`rollback`]; [`derive_actions`] turns the
//! implementation-level delta of an accepted proposal into effector
//! actions, with quiescence handled by [`execute_plan`] before any removal
//! or migration. When planning is infeasible, [`ManagerStack::escalate`]
//! installs the next level's evaluation and change models.
//!
//! Utility is a weighted sum of per-concern scores in [0, 1]:
//! `1 − maxAvgResponseTime/(2·threshold)` clamped for performance (exactly
//! 0.5 at the threshold), `1 − failures/budget` clamped for failure, and a
//! 0/1 indicator of critical-violation freedom for architecture. The
//! weights scale candidate rankings, not the decision structure: scaling
//! all weights by a positive constant never changes which candidate wins.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::expr::{parse as parse_expr, EvalCtx};
use crate::model::{
    conforms, diff, invert, patch, AttrDecl, AttrKind, AttrValue, Change, DeltaError, Element,
    ElementId, ElementTypeDecl, Metamodel, ModelDelta, RefDecl, TypedModel, UpperBound,
};
use crate::sim::{EffectorError, ReconfigurationAction, SensorEvent, SimulatedSystem};
use crate::sync::{view_metamodel, ViewKind};

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdaptError {
    #[error("evaluation model invalid: {detail}")]
    BadEvaluationModel { detail: String },
    #[error("change model invalid: {detail}")]
    BadChangeModel { detail: String },
    #[error("no view named `{view}` available to the manager")]
    MissingView { view: String },
    #[error("change cannot be propagated: {detail}")]
    UnmappableChange { detail: String },
    #[error("target configuration cannot be realized: {detail}")]
    UnrealizableTarget { detail: String },
    #[error("no higher manager level to escalate to")]
    NoHigherLevel,
    #[error(transparent)]
    Delta(#[from] DeltaError),
}

// ---------------------------------------------------------------------------
// Attribute classification shared by propagation and convergence checks
// ---------------------------------------------------------------------------

/// Attributes that carry measurements or derived aggregates rather than
/// structure. They flow upward only: propagation drops them and convergence
/// checks ignore them.
pub const METRIC_ATTRS: &[&str] = &[
    "avgResponseTime",
    "utilization",
    "inFlight",
    "requestCount",
    "completedCount",
    "failureCount",
    "lost",
    "hosted",
    "rate",
    "serviceTimeMean",
];

pub fn is_metric_attr(name: &str) -> bool {
    METRIC_ATTRS.contains(&name)
}

/// The changes of a delta that touch structure — everything except updates
/// of measurement attributes.
pub fn structural_changes(delta: &ModelDelta) -> Vec<&Change> {
    delta
        .changes
        .iter()
        .filter(|c| !matches!(c, Change::SetAttribute { attr, .. } if is_metric_attr(attr)))
        .collect()
}

// ---------------------------------------------------------------------------
// Evaluation models
// ---------------------------------------------------------------------------

pub const EVALUATION_MM: &str = "evaluation-model";
pub const CHANGE_MM: &str = "change-model";

/// Concerns a utility weight may be attached to.
pub const CONCERNS: &[&str] = &["performance", "failure", "architecture"];

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

/// Metamodel of evaluation models. Constraint elements are keyed by their
/// constraint id, Weight elements by the concern they weight, Threshold
/// elements by the threshold name.
pub fn evaluation_metamodel() -> Metamodel {
    Metamodel {
        name: EVALUATION_MM.into(),
        element_types: vec![
            ElementTypeDecl {
                name: "Constraint".into(),
                attributes: vec![
                    attr("view", AttrKind::String),
                    attr("scopeType", AttrKind::String),
                    attr("predicate", AttrKind::String),
                    attr(
                        "severity",
                        AttrKind::Enum(vec!["critical".into(), "warning".into()]),
                    ),
                ],
                references: vec![],
            },
            ElementTypeDecl {
                name: "Weight".into(),
                attributes: vec![attr("weight", AttrKind::Real)],
                references: vec![],
            },
            ElementTypeDecl {
                name: "Threshold".into(),
                attributes: vec![attr("value", AttrKind::Real)],
                references: vec![],
            },
        ],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Critical,
    Warning,
}

impl Severity {
    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Critical => "critical",
            Severity::Warning => "warning",
        }
    }
}

/// One constraint: a boolean predicate that must hold for every element of
/// `scope_type` in the named view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConstraintDef {
    pub constraint_id: String,
    pub view: String,
    pub scope_type: String,
    pub predicate: String,
    pub severity: Severity,
}

/// Decoded evaluation model: constraints, utility weights per concern, and
/// named numeric thresholds.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvaluationSpec {
    pub constraints: Vec<ConstraintDef>,
    pub weights: BTreeMap<String, f64>,
    pub thresholds: BTreeMap<String, f64>,
}

impl EvaluationSpec {
    /// The verdict floor: analyses scoring below this utility require
    /// adaptation even without critical violations. Defaults to 0.
    pub fn utility_floor(&self) -> f64 {
        self.thresholds.get("utilityFloor").copied().unwrap_or(0.0)
    }

    /// Encode back into a typed model conforming to [`evaluation_metamodel`].
    pub fn to_model(&self) -> TypedModel {
        let mut m = TypedModel::new(EVALUATION_MM);
        for c in &self.constraints {
            let el = Element::new("Constraint")
                .with_attr("view", c.view.as_str())
                .with_attr("scopeType", c.scope_type.as_str())
                .with_attr("predicate", c.predicate.as_str())
                .with_attr("severity", c.severity.as_str());
            m.elements.insert(ElementId::new(&c.constraint_id), el);
        }
        for (concern, w) in &self.weights {
            let el = Element::new("Weight").with_attr("weight", *w);
            m.elements.insert(ElementId::new(concern), el);
        }
        for (name, v) in &self.thresholds {
            let el = Element::new("Threshold").with_attr("value", *v);
            m.elements.insert(ElementId::new(name), el);
        }
        m
    }
}

fn bad_em(detail: impl Into<String>) -> AdaptError {
    AdaptError::BadEvaluationModel { detail: detail.into() }
}

fn bad_cm(detail: impl Into<String>) -> AdaptError {
    AdaptError::BadChangeModel { detail: detail.into() }
}

/// Decode and validate an evaluation model.
pub fn parse_evaluation(model: &TypedModel) -> Result<EvaluationSpec, AdaptError> {
    let mm = evaluation_metamodel();
    let report = conforms(model, &mm).map_err(|e| bad_em(e.to_string()))?;
    if !report.conforms {
        return Err(bad_em(format!(
            "does not conform to {EVALUATION_MM}: {}",
            report.violations[0].message
        )));
    }
    let mut spec = EvaluationSpec::default();
    for (id, el) in &model.elements {
        match el.type_name.as_str() {
            "Constraint" => {
                let predicate = el.attr("predicate").unwrap().to_string();
                parse_expr(&predicate)
                    .map_err(|e| bad_em(format!("constraint `{id}`: {e}")))?;
                spec.constraints.push(ConstraintDef {
                    constraint_id: id.to_string(),
                    view: el.attr("view").unwrap().to_string(),
                    scope_type: el.attr("scopeType").unwrap().to_string(),
                    predicate,
                    severity: match el.attr("severity").unwrap().as_str() {
                        Some("critical") => Severity::Critical,
                        _ => Severity::Warning,
                    },
                });
            }
            "Weight" => {
                let concern = id.to_string();
                if !CONCERNS.contains(&concern.as_str()) {
                    return Err(bad_em(format!("unknown concern `{concern}` weighted")));
                }
                let w = el.attr("weight").unwrap().as_num().unwrap_or(0.0);
                if !(0.0..=1.0).contains(&w) {
                    return Err(bad_em(format!("weight for `{concern}` outside [0, 1]")));
                }
                spec.weights.insert(concern, w);
            }
            "Threshold" => {
                let v = el.attr("value").unwrap().as_num().unwrap_or(0.0);
                spec.thresholds.insert(id.to_string(), v);
            }
            _ => unreachable!("conformance guarantees known types"),
        }
    }
    let sum: f64 = spec.weights.values().sum();
    if spec.weights.is_empty() || (sum - 1.0).abs() > 1e-9 {
        return Err(bad_em(format!("utility weights sum to {sum}, expected 1")));
    }
    for (concern, threshold) in [("performance", "maxAvgResponseTime"), ("failure", "failureBudget")]
    {
        if spec.weights.get(concern).copied().unwrap_or(0.0) > 0.0
            && spec.thresholds.get(threshold).copied().unwrap_or(0.0) <= 0.0
        {
            return Err(bad_em(format!(
                "weighting `{concern}` requires a positive `{threshold}` threshold"
            )));
        }
    }
    Ok(spec)
}

// ---------------------------------------------------------------------------
// Change models
// ---------------------------------------------------------------------------

/// Metamodel of change models. Rule elements are keyed by their rule id and
/// applied in ascending id order; Variant elements reference Placement
/// elements that spell out component-type placements.
pub fn change_metamodel() -> Metamodel {
    Metamodel {
        name: CHANGE_MM.into(),
        element_types: vec![
            ElementTypeDecl {
                name: "Rule".into(),
                attributes: vec![
                    attr("event", AttrKind::String),
                    attr("condition", AttrKind::String),
                    attr(
                        "action",
                        AttrKind::Enum(vec![
                            "scaleOut".into(),
                            "scaleIn".into(),
                            "restartFailed".into(),
                        ]),
                    ),
                    attr("componentType", AttrKind::String),
                    opt_attr("placement", AttrKind::String),
                ],
                references: vec![],
            },
            ElementTypeDecl {
                name: "Variant".into(),
                attributes: vec![],
                references: vec![RefDecl {
                    name: "placements".into(),
                    target: "Placement".into(),
                    lower_bound: 1,
                    upper_bound: UpperBound::Unbounded,
                    containment: true,
                }],
            },
            ElementTypeDecl {
                name: "Placement".into(),
                attributes: vec![
                    attr("componentType", AttrKind::String),
                    attr("node", AttrKind::String),
                    attr("rank", AttrKind::Integer),
                ],
                references: vec![],
            },
        ],
    }
}

/// How a rule edits the prescriptive model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "camelCase")]
pub enum ActionTemplate {
    /// Add one component of the type, on the named node or on the node with
    /// the fewest hosted components (`placement = "leastLoaded"`).
    #[serde(rename_all = "camelCase")]
    ScaleOut { component_type: String, placement: String },
    /// Remove the highest-id component of the type.
    #[serde(rename_all = "camelCase")]
    ScaleIn { component_type: String },
    /// Set every failed component of the type (or of any type, `"*"`) back
    /// to running.
    #[serde(rename_all = "camelCase")]
    RestartFailed { component_type: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RuleDef {
    pub rule_id: String,
    /// What enables the rule: `always`, `anyViolation`, `utilityBelowFloor`,
    /// or `violation:<constraintId>`.
    pub event: String,
    /// Additional predicate over the concern views; empty means true.
    pub condition: String,
    #[serde(flatten)]
    pub action: ActionTemplate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VariantDef {
    pub variant_id: String,
    /// Target placements per component type: one component per listed node,
    /// in order. Types not listed are left untouched.
    pub placements: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeMode {
    Implicit,
    Explicit,
}

/// Decoded change model: either ordered rules (implicit) or enumerated
/// target variants (explicit).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ChangeSpec {
    pub mode: ChangeMode,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rules: Vec<RuleDef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variants: Vec<VariantDef>,
}

impl ChangeSpec {
    /// Encode back into a typed model conforming to [`change_metamodel`].
    pub fn to_model(&self) -> TypedModel {
        let mut m = TypedModel::new(CHANGE_MM);
        for r in &self.rules {
            let mut el = Element::new("Rule")
                .with_attr("event", r.event.as_str())
                .with_attr("condition", r.condition.as_str());
            match &r.action {
                ActionTemplate::ScaleOut { component_type, placement } => {
                    el = el
                        .with_attr("action", "scaleOut")
                        .with_attr("componentType", component_type.as_str())
                        .with_attr("placement", placement.as_str());
                }
                ActionTemplate::ScaleIn { component_type } => {
                    el = el
                        .with_attr("action", "scaleIn")
                        .with_attr("componentType", component_type.as_str());
                }
                ActionTemplate::RestartFailed { component_type } => {
                    el = el
                        .with_attr("action", "restartFailed")
                        .with_attr("componentType", component_type.as_str());
                }
            }
            m.elements.insert(ElementId::new(&r.rule_id), el);
        }
        for v in &self.variants {
            let mut placement_ids = Vec::new();
            for (ty, nodes) in &v.placements {
                for (rank, node) in nodes.iter().enumerate() {
                    let pid = ElementId::new(format!("{}:{ty}:{rank}", v.variant_id));
                    let el = Element::new("Placement")
                        .with_attr("componentType", ty.as_str())
                        .with_attr("node", node.as_str())
                        .with_attr("rank", rank as i64);
                    m.elements.insert(pid.clone(), el);
                    placement_ids.push(pid);
                }
            }
            let el = Element::new("Variant").with_links("placements", placement_ids);
            m.elements.insert(ElementId::new(&v.variant_id), el);
        }
        m
    }
}

/// Decode and validate a change model.
pub fn parse_change(model: &TypedModel) -> Result<ChangeSpec, AdaptError> {
    let mm = change_metamodel();
    let report = conforms(model, &mm).map_err(|e| bad_cm(e.to_string()))?;
    if !report.conforms {
        return Err(bad_cm(format!(
            "does not conform to {CHANGE_MM}: {}",
            report.violations[0].message
        )));
    }
    let mut rules = Vec::new();
    let mut variants = Vec::new();
    for (id, el) in &model.elements {
        match el.type_name.as_str() {
            "Rule" => {
                let event = el.attr("event").unwrap().to_string();
                let valid_event = matches!(event.as_str(), "always" | "anyViolation" | "utilityBelowFloor")
                    || event.strip_prefix("violation:").is_some_and(|c| !c.is_empty());
                if !valid_event {
                    return Err(bad_cm(format!("rule `{id}` has unknown event `{event}`")));
                }
                let condition = el.attr("condition").unwrap().to_string();
                if !condition.is_empty() {
                    parse_expr(&condition).map_err(|e| bad_cm(format!("rule `{id}`: {e}")))?;
                }
                let component_type = el.attr("componentType").unwrap().to_string();
                let action = match el.attr("action").unwrap().as_str().unwrap() {
                    "scaleOut" => {
                        let placement = el
                            .attr("placement")
                            .map(|v| v.to_string())
                            .ok_or_else(|| {
                                bad_cm(format!("scale-out rule `{id}` needs a placement"))
                            })?;
                        ActionTemplate::ScaleOut { component_type, placement }
                    }
                    "scaleIn" => ActionTemplate::ScaleIn { component_type },
                    _ => ActionTemplate::RestartFailed { component_type },
                };
                rules.push(RuleDef {
                    rule_id: id.to_string(),
                    event,
                    condition,
                    action,
                });
            }
            "Variant" => {
                let mut ranked: Vec<(String, i64, String)> = Vec::new();
                for pid in el.targets("placements") {
                    let p = model.element(pid).unwrap();
                    ranked.push((
                        p.attr("componentType").unwrap().to_string(),
                        p.attr("rank").unwrap().as_num().unwrap_or(0.0) as i64,
                        p.attr("node").unwrap().to_string(),
                    ));
                }
                ranked.sort();
                let mut placements: BTreeMap<String, Vec<String>> = BTreeMap::new();
                for (ty, _, node) in ranked {
                    placements.entry(ty).or_default().push(node);
                }
                variants.push(VariantDef {
                    variant_id: id.to_string(),
                    placements,
                });
            }
            "Placement" => {}
            _ => unreachable!("conformance guarantees known types"),
        }
    }
    rules.sort_by(|a, b| a.rule_id.cmp(&b.rule_id));
    variants.sort_by(|a, b| a.variant_id.cmp(&b.variant_id));
    let mode = match (rules.is_empty(), variants.is_empty()) {
        (false, true) => ChangeMode::Implicit,
        (true, false) => ChangeMode::Explicit,
        (false, false) => return Err(bad_cm("mixes rules and variants".into())),
        (true, true) => return Err(bad_cm("has neither rules nor variants".into())),
    };
    Ok(ChangeSpec { mode, rules, variants })
}

// ---------------------------------------------------------------------------
// Analysis
// ---------------------------------------------------------------------------

/// One constraint finding, anchored to the element the predicate failed on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConstraintViolation {
    pub constraint_id: String,
    pub element_id: String,
    pub severity: Severity,
    /// Present when the predicate erred instead of evaluating to false.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Verdict {
    Ok,
    AdaptationRequired,
}

/// Result of applying an evaluation model to the concern views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AnalysisModel {
    /// Views the analysis consulted.
    pub subjects: Vec<String>,
    pub violations: Vec<ConstraintViolation>,
    pub utility: f64,
    pub verdict: Verdict,
}

impl AnalysisModel {
    pub fn has_critical(&self) -> bool {
        self.violations.iter().any(|v| v.severity == Severity::Critical)
    }
}

/// Evaluate every constraint of `em` over the views. Violations carry the
/// offending element; a predicate that errors is recorded as violated with
/// the error text and evaluation continues.
fn evaluate_constraints(
    views: &BTreeMap<&str, &TypedModel>,
    em: &EvaluationSpec,
    subjects: &mut BTreeSet<String>,
) -> Result<Vec<ConstraintViolation>, AdaptError> {
    let mut violations = Vec::new();
    for c in &em.constraints {
        let model = *views
            .get(c.view.as_str())
            .ok_or_else(|| AdaptError::MissingView { view: c.view.clone() })?;
        subjects.insert(c.view.clone());
        let expr = match parse_expr(&c.predicate) {
            Ok(e) => e,
            Err(e) => {
                violations.push(ConstraintViolation {
                    constraint_id: c.constraint_id.clone(),
                    element_id: "*".into(),
                    severity: c.severity,
                    detail: Some(e.to_string()),
                });
                continue;
            }
        };
        let ctx = EvalCtx {
            views: views.clone(),
            scope_view: &c.view,
            thresholds: &em.thresholds,
        };
        for (id, _) in model.elements_of_type(&c.scope_type) {
            match expr.eval_bool(&ctx, Some(id)) {
                Ok(true) => {}
                Ok(false) => violations.push(ConstraintViolation {
                    constraint_id: c.constraint_id.clone(),
                    element_id: id.to_string(),
                    severity: c.severity,
                    detail: None,
                }),
                Err(e) => violations.push(ConstraintViolation {
                    constraint_id: c.constraint_id.clone(),
                    element_id: id.to_string(),
                    severity: c.severity,
                    detail: Some(e.to_string()),
                }),
            }
        }
    }
    Ok(violations)
}

fn concern_score(
    concern: &str,
    views: &BTreeMap<&str, &TypedModel>,
    em: &EvaluationSpec,
    critical_free: bool,
    subjects: &mut BTreeSet<String>,
) -> Result<f64, AdaptError> {
    match concern {
        "architecture" => Ok(if critical_free { 1.0 } else { 0.0 }),
        "performance" => {
            let view = *views
                .get("performance")
                .ok_or_else(|| AdaptError::MissingView { view: "performance".into() })?;
            subjects.insert("performance".into());
            let bound = em
                .thresholds
                .get("maxAvgResponseTime")
                .copied()
                .filter(|b| *b > 0.0)
                .ok_or_else(|| bad_em("performance score needs `maxAvgResponseTime` > 0"))?;
            let worst = view
                .elements_of_type("Component")
                .filter_map(|(_, e)| e.attr("avgResponseTime").and_then(|v| v.as_num()))
                .fold(0.0_f64, f64::max);
            Ok((1.0 - worst / (2.0 * bound)).clamp(0.0, 1.0))
        }
        "failure" => {
            let view = *views
                .get("failure")
                .ok_or_else(|| AdaptError::MissingView { view: "failure".into() })?;
            subjects.insert("failure".into());
            let budget = em
                .thresholds
                .get("failureBudget")
                .copied()
                .filter(|b| *b > 0.0)
                .ok_or_else(|| bad_em("failure score needs `failureBudget` > 0"))?;
            let failures: f64 = view
                .elements_of_type("Component")
                .filter_map(|(_, e)| e.attr("failureCount").and_then(|v| v.as_num()))
                .sum();
            Ok((1.0 - failures / budget).clamp(0.0, 1.0))
        }
        other => Err(bad_em(format!("unknown concern `{other}` weighted"))),
    }
}

/// Apply an evaluation model to the concern views, read-only. When a
/// reference model is given as `(view name, model)`, structural divergence
/// of that view from the reference is reported under the built-in
/// `builtin:convergence` constraint at warning severity.
pub fn analyze(
    views: &BTreeMap<&str, &TypedModel>,
    em: &EvaluationSpec,
    reference: Option<(&str, &TypedModel)>,
) -> Result<AnalysisModel, AdaptError> {
    let mut subjects = BTreeSet::new();
    let mut violations = evaluate_constraints(views, em, &mut subjects)?;

    if let Some((subject, reference)) = reference {
        let current = *views
            .get(subject)
            .ok_or_else(|| AdaptError::MissingView { view: subject.into() })?;
        subjects.insert(subject.to_string());
        let divergence = diff(current, reference)?;
        let mut diverged: BTreeSet<ElementId> = BTreeSet::new();
        for change in structural_changes(&divergence) {
            diverged.insert(change.subject().clone());
        }
        for id in diverged {
            violations.push(ConstraintViolation {
                constraint_id: "builtin:convergence".into(),
                element_id: id.to_string(),
                severity: Severity::Warning,
                detail: None,
            });
        }
    }

    let critical_free = !violations.iter().any(|v| v.severity == Severity::Critical);
    let mut utility = 0.0;
    for (concern, weight) in &em.weights {
        utility += weight * concern_score(concern, views, em, critical_free, &mut subjects)?;
    }
    let verdict = if !critical_free || utility < em.utility_floor() {
        Verdict::AdaptationRequired
    } else {
        Verdict::Ok
    };
    Ok(AnalysisModel {
        subjects: subjects.into_iter().collect(),
        violations,
        utility,
        verdict,
    })
}

// ---------------------------------------------------------------------------
// Planning
// ---------------------------------------------------------------------------

/// Why a candidate was or was not selected, kept for the run trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "disposition", rename_all = "camelCase")]
pub enum Disposition {
    Chosen { utility: f64 },
    Outscored { utility: f64 },
    NotTriggered,
    NoChange,
    Vetoed,
    UnknownTarget { detail: String },
    NoPlacement { detail: String },
    Nonconforming { detail: String },
    #[serde(rename_all = "camelCase")]
    CriticalViolation { constraint_id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CandidateReview {
    pub candidate: String,
    #[serde(flatten)]
    pub disposition: Disposition,
}

/// A selected target configuration for the manager's concern view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PlanResult {
    /// Rule or variant id that produced the winner.
    pub chosen: String,
    /// The prescriptive concern-view model.
    pub target: TypedModel,
    /// diff(descriptive view, target).
    pub delta: ModelDelta,
    pub predicted_utility: f64,
    /// Stable identity of this proposal, used to veto re-proposing a
    /// configuration that was already rejected.
    pub fingerprint: String,
    pub reviews: Vec<CandidateReview>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "camelCase")]
pub enum PlanOutcome {
    Planned(Box<PlanResult>),
    Infeasible { reason: String, reviews: Vec<CandidateReview> },
}

fn event_matches(event: &str, analysis: &AnalysisModel, floor: f64) -> bool {
    match event {
        "always" => true,
        "anyViolation" => !analysis.violations.is_empty(),
        "utilityBelowFloor" => analysis.utility < floor,
        other => match other.strip_prefix("violation:") {
            Some(cid) => analysis.violations.iter().any(|v| v.constraint_id == cid),
            None => false,
        },
    }
}

/// Insert `target` into the `instances` list of the component type, keeping
/// ascending order; the projection derives the same order, so prescriptive
/// and synchronized views agree on it.
fn link_instance(view: &mut TypedModel, type_id: &ElementId, component: &ElementId) {
    if let Some(t) = view.elements.get_mut(type_id) {
        let list = t.links.entry("instances".into()).or_default();
        if !list.contains(component) {
            let pos = list.iter().position(|i| i > component).unwrap_or(list.len());
            list.insert(pos, component.clone());
        }
    }
}

fn unlink_instance(view: &mut TypedModel, type_id: &ElementId, component: &ElementId) {
    if let Some(t) = view.elements.get_mut(type_id) {
        if let Some(list) = t.links.get_mut("instances") {
            list.retain(|i| i != component);
            if list.is_empty() {
                t.links.remove("instances");
            }
        }
    }
}

fn components_of(view: &TypedModel, type_name: &str) -> Vec<ElementId> {
    view.elements_of_type("Component")
        .filter(|(_, e)| e.attr("type").and_then(|v| v.as_str()) == Some(type_name))
        .map(|(id, _)| id.clone())
        .collect()
}

fn fresh_component_id(view: &TypedModel, type_name: &str) -> ElementId {
    let stem = type_name.to_lowercase();
    (1..)
        .map(|k| ElementId::new(format!("{stem}-g{k}")))
        .find(|id| !view.elements.contains_key(id))
        .expect("unbounded id space")
}

fn add_component(view: &mut TypedModel, type_name: &str, node: &str) -> ElementId {
    let id = fresh_component_id(view, type_name);
    let el = Element::new("Component")
        .with_attr("name", id.to_string())
        .with_attr("type", type_name)
        .with_attr("node", node)
        .with_attr("state", "running")
        .with_links("ofType", [ElementId::new(type_name)]);
    view.elements.insert(id.clone(), el);
    link_instance(view, &ElementId::new(type_name), &id);
    id
}

fn remove_component(view: &mut TypedModel, id: &ElementId) {
    if let Some(el) = view.elements.remove(id) {
        if let Some(type_id) = el.targets("ofType").first().cloned() {
            unlink_instance(view, &type_id, id);
        }
    }
}

/// The node with the fewest hosted components, ties to the lower node id.
fn least_loaded_node(env: &TypedModel) -> Option<String> {
    env.elements_of_type("Node")
        .map(|(id, e)| {
            (
                e.attr("hosted").and_then(|v| v.as_num()).unwrap_or(0.0) as i64,
                id.to_string(),
            )
        })
        .min()
        .map(|(_, id)| id)
}

/// Apply an action template to a copy of the concern view; `Ok(None)` means
/// the template has nothing to do here (no candidate arises).
fn instantiate_rule(
    view: &TypedModel,
    env: &TypedModel,
    action: &ActionTemplate,
) -> Result<Option<TypedModel>, Disposition> {
    let mut target = view.clone();
    match action {
        ActionTemplate::ScaleOut { component_type, placement } => {
            if view.element(&ElementId::new(component_type)).map(|e| e.type_name.as_str())
                != Some("ComponentType")
            {
                return Err(Disposition::UnknownTarget {
                    detail: format!("no component type `{component_type}` in the view"),
                });
            }
            let node = if placement == "leastLoaded" {
                least_loaded_node(env).ok_or_else(|| Disposition::NoPlacement {
                    detail: "environment has no nodes".into(),
                })?
            } else {
                if env.element(&ElementId::new(placement)).map(|e| e.type_name.as_str())
                    != Some("Node")
                {
                    return Err(Disposition::NoPlacement {
                        detail: format!("no node `{placement}` in the environment"),
                    });
                }
                placement.clone()
            };
            add_component(&mut target, component_type, &node);
        }
        ActionTemplate::ScaleIn { component_type } => {
            let mut ids = components_of(view, component_type);
            ids.sort();
            match ids.pop() {
                Some(victim) => remove_component(&mut target, &victim),
                None => return Ok(None),
            }
        }
        ActionTemplate::RestartFailed { component_type } => {
            let mut any = false;
            let ids: Vec<ElementId> = view
                .elements_of_type("Component")
                .filter(|(_, e)| {
                    (component_type == "*"
                        || e.attr("type").and_then(|v| v.as_str()) == Some(component_type))
                        && e.attr("state").and_then(|v| v.as_str()) == Some("failed")
                })
                .map(|(id, _)| id.clone())
                .collect();
            for id in ids {
                target
                    .elements
                    .get_mut(&id)
                    .unwrap()
                    .attrs
                    .insert("state".into(), "running".into());
                any = true;
            }
            if !any {
                return Ok(None);
            }
        }
    }
    Ok(Some(target))
}

/// Rebuild the concern view to match an explicit variant's placements.
fn instantiate_variant(
    view: &TypedModel,
    env: &TypedModel,
    variant: &VariantDef,
) -> Result<TypedModel, Disposition> {
    let mut target = view.clone();
    for (ty, nodes) in &variant.placements {
        if view.element(&ElementId::new(ty)).map(|e| e.type_name.as_str()) != Some("ComponentType")
        {
            return Err(Disposition::UnknownTarget {
                detail: format!("no component type `{ty}` in the view"),
            });
        }
        for node in nodes {
            if env.element(&ElementId::new(node)).map(|e| e.type_name.as_str()) != Some("Node") {
                return Err(Disposition::NoPlacement {
                    detail: format!("no node `{node}` in the environment"),
                });
            }
        }
        let mut existing = components_of(view, ty);
        existing.sort();
        for (i, node) in nodes.iter().enumerate() {
            match existing.get(i) {
                Some(id) => {
                    let el = target.elements.get_mut(id).unwrap();
                    el.attrs.insert("node".into(), node.as_str().into());
                    el.attrs.insert("state".into(), "running".into());
                }
                None => {
                    add_component(&mut target, ty, node);
                }
            }
        }
        for id in existing.iter().skip(nodes.len()) {
            remove_component(&mut target, id);
        }
    }
    Ok(target)
}

/// Per-component-type count of running components.
fn running_counts(view: &TypedModel) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for (_, e) in view.elements_of_type("Component") {
        if e.attr("state").and_then(|v| v.as_str()) == Some("running") {
            if let Some(ty) = e.attr("type").and_then(|v| v.as_str()) {
                *counts.entry(ty.to_string()).or_insert(0) += 1;
            }
        }
    }
    counts
}

/// Predicted post-adaptation metrics for a candidate: when the number of
/// running components of a type changes from m to n, load spreads evenly,
/// so each kept component's response time and utilization scale by m/n and
/// new components start idle. A coarse model, but monotone and
/// hand-computable — exactly what candidate ranking needs.
fn predict_metrics(desc: &TypedModel, candidate: &TypedModel, kind: ViewKind) -> TypedModel {
    let mut predicted = candidate.clone();
    let before = running_counts(desc);
    let after = running_counts(candidate);
    let zero_metrics: &[(&str, AttrValue)] = match kind {
        ViewKind::Performance => &[
            ("avgResponseTime", AttrValue::Real(0.0)),
            ("utilization", AttrValue::Real(0.0)),
            ("inFlight", AttrValue::Int(0)),
            ("requestCount", AttrValue::Int(0)),
        ],
        ViewKind::Failure => &[("failureCount", AttrValue::Int(0))],
        _ => &[],
    };
    let ids: Vec<ElementId> = predicted
        .elements_of_type("Component")
        .map(|(id, _)| id.clone())
        .collect();
    for id in ids {
        let is_new = desc.element(&id).is_none();
        let el = predicted.elements.get_mut(&id).unwrap();
        if is_new {
            for (name, zero) in zero_metrics {
                el.attrs.insert((*name).to_string(), zero.clone());
            }
            continue;
        }
        if el.attr("state").and_then(|v| v.as_str()) != Some("running") {
            continue;
        }
        let Some(ty) = el.attr("type").and_then(|v| v.as_str()).map(str::to_string) else {
            continue;
        };
        let (m, n) = (
            before.get(&ty).copied().unwrap_or(0),
            after.get(&ty).copied().unwrap_or(0),
        );
        if m == 0 || n == 0 || m == n {
            continue;
        }
        let factor = m as f64 / n as f64;
        if let Some(rt) = el.attr("avgResponseTime").and_then(|v| v.as_num()) {
            el.attrs
                .insert("avgResponseTime".into(), AttrValue::Real(rt * factor));
        }
        if let Some(u) = el.attr("utilization").and_then(|v| v.as_num()) {
            el.attrs.insert(
                "utilization".into(),
                AttrValue::Real((u * factor).clamp(0.0, 1.0)),
            );
        }
    }
    predicted
}

pub fn candidate_fingerprint(candidate_id: &str, delta: &ModelDelta) -> String {
    format!("{candidate_id}|{}", delta.summary())
}

/// Generate, score, and select a target configuration for the manager's
/// concern view. Candidates come from enabled rules (implicit mode) or all
/// variants (explicit mode); each is conformance-checked, scored by
/// analyzing its predicted state, and dropped when it changes nothing,
/// carries a vetoed fingerprint, or violates a critical constraint. The
/// highest predicted utility wins; ties go to the lower rule/variant id.
/// With no surviving candidate the plan is infeasible — the escalation
/// trigger.
pub fn plan(
    views: &BTreeMap<&str, &TypedModel>,
    subject: ViewKind,
    analysis: &AnalysisModel,
    cm: &ChangeSpec,
    em: &EvaluationSpec,
    vetoed: &BTreeSet<String>,
) -> Result<PlanOutcome, AdaptError> {
    if !matches!(subject, ViewKind::Performance | ViewKind::Failure) {
        return Err(bad_cm(format!("cannot plan on the {subject} view")));
    }
    let desc = *views
        .get(subject.as_str())
        .ok_or_else(|| AdaptError::MissingView { view: subject.to_string() })?;
    let env = *views
        .get("environment")
        .ok_or_else(|| AdaptError::MissingView { view: "environment".into() })?;
    let mm = view_metamodel(subject);
    let floor = em.utility_floor();

    let mut reviews = Vec::new();
    let mut viable: Vec<(String, TypedModel, ModelDelta, f64)> = Vec::new();

    let candidates: Vec<(String, Result<Option<TypedModel>, Disposition>)> = match cm.mode {
        ChangeMode::Implicit => cm
            .rules
            .iter()
            .map(|rule| {
                let id = rule.rule_id.clone();
                if !event_matches(&rule.event, analysis, floor) {
                    return (id, Err(Disposition::NotTriggered));
                }
                if !rule.condition.is_empty() {
                    let ctx = EvalCtx {
                        views: views.clone(),
                        scope_view: subject.as_str(),
                        thresholds: &em.thresholds,
                    };
                    match parse_expr(&rule.condition).map_err(|e| e.to_string()).and_then(|e| {
                        e.eval_bool(&ctx, None).map_err(|e| e.to_string())
                    }) {
                        Ok(true) => {}
                        Ok(false) => return (id, Err(Disposition::NotTriggered)),
                        Err(detail) => {
                            return (id, Err(Disposition::UnknownTarget { detail }))
                        }
                    }
                }
                (id, instantiate_rule(desc, env, &rule.action))
            })
            .collect(),
        ChangeMode::Explicit => cm
            .variants
            .iter()
            .map(|v| (v.variant_id.clone(), instantiate_variant(desc, env, v).map(Some)))
            .collect(),
    };

    for (id, outcome) in candidates {
        let target = match outcome {
            Err(disposition) => {
                reviews.push(CandidateReview { candidate: id, disposition });
                continue;
            }
            Ok(None) => {
                reviews.push(CandidateReview {
                    candidate: id,
                    disposition: Disposition::NoChange,
                });
                continue;
            }
            Ok(Some(t)) => t,
        };
        let delta = diff(desc, &target)?;
        if delta.is_empty() {
            reviews.push(CandidateReview {
                candidate: id,
                disposition: Disposition::NoChange,
            });
            continue;
        }
        if vetoed.contains(&candidate_fingerprint(&id, &delta)) {
            reviews.push(CandidateReview {
                candidate: id,
                disposition: Disposition::Vetoed,
            });
            continue;
        }
        let report = conforms(&target, &mm).map_err(|e| bad_cm(e.to_string()))?;
        if !report.conforms {
            reviews.push(CandidateReview {
                candidate: id,
                disposition: Disposition::Nonconforming {
                    detail: report.violations[0].message.clone(),
                },
            });
            continue;
        }
        let predicted = predict_metrics(desc, &target, subject);
        let mut scored_views = views.clone();
        scored_views.insert(subject.as_str(), &predicted);
        let scored = analyze(&scored_views, em, None)?;
        if let Some(v) = scored.violations.iter().find(|v| v.severity == Severity::Critical) {
            reviews.push(CandidateReview {
                candidate: id,
                disposition: Disposition::CriticalViolation {
                    constraint_id: v.constraint_id.clone(),
                },
            });
            continue;
        }
        viable.push((id, target, delta, scored.utility));
    }

    // candidates arrive in ascending id order, so the first of a utility tie
    // is the lower id
    let mut winner: Option<usize> = None;
    for (i, (_, _, _, utility)) in viable.iter().enumerate() {
        match winner {
            None => winner = Some(i),
            Some(w) if utility.total_cmp(&viable[w].3).is_gt() => winner = Some(i),
            _ => {}
        }
    }

    match winner {
        Some(w) => {
            let (chosen, target, delta, utility) = viable.swap_remove(w);
            for (i, (id, _, _, u)) in viable.iter().enumerate() {
                let _ = i;
                reviews.push(CandidateReview {
                    candidate: id.clone(),
                    disposition: Disposition::Outscored { utility: *u },
                });
            }
            reviews.push(CandidateReview {
                candidate: chosen.clone(),
                disposition: Disposition::Chosen { utility },
            });
            reviews.sort_by(|a, b| a.candidate.cmp(&b.candidate));
            let fingerprint = candidate_fingerprint(&chosen, &delta);
            Ok(PlanOutcome::Planned(Box::new(PlanResult {
                chosen,
                target,
                delta,
                predicted_utility: utility,
                fingerprint,
                reviews,
            })))
        }
        None => {
            reviews.sort_by(|a, b| a.candidate.cmp(&b.candidate));
            Ok(PlanOutcome::Infeasible {
                reason: "no candidate satisfies the goals".into(),
                reviews,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Change propagation
// ---------------------------------------------------------------------------

const COMPONENT_STRUCTURAL_ATTRS: &[&str] = &["name", "type", "node", "state"];
const TYPE_STRUCTURAL_ATTRS: &[&str] = &["name", "entry"];

/// Map a prescriptive delta on a performance or failure model onto the
/// architecture model: structural edits carry over through the shared
/// component concepts, measurement updates vanish. The result is a delta
/// against `arch`, ready to patch tentatively for review.
pub fn propagate_changes(
    source_delta: &ModelDelta,
    source_kind: ViewKind,
    arch: &TypedModel,
) -> Result<ModelDelta, AdaptError> {
    if !matches!(source_kind, ViewKind::Performance | ViewKind::Failure) {
        return Err(AdaptError::UnmappableChange {
            detail: format!("propagation from the {source_kind} view is not defined"),
        });
    }
    let unmappable = |detail: String| AdaptError::UnmappableChange { detail };
    let mut working = arch.clone();
    for change in &source_delta.changes {
        match change {
            Change::AddElement { id, type_name, attrs } => match type_name.as_str() {
                "Component" => {
                    let mut el = Element::new("Component");
                    for (k, v) in attrs {
                        if COMPONENT_STRUCTURAL_ATTRS.contains(&k.as_str()) {
                            el.attrs.insert(k.clone(), v.clone());
                        }
                    }
                    working.elements.insert(id.clone(), el);
                }
                "Load" => {}
                other => {
                    return Err(unmappable(format!(
                        "adding a `{other}` has no architecture counterpart"
                    )))
                }
            },
            Change::RemoveElement { id, type_name, .. } => match type_name.as_str() {
                "Component" => {
                    if working.elements.remove(id).is_none() {
                        return Err(unmappable(format!(
                            "removal of `{id}` targets nothing in the architecture model"
                        )));
                    }
                    // a component takes its own outgoing wires with it;
                    // wires of other components left pointing at it are a
                    // planning defect the review will catch
                    let own: Vec<ElementId> = working
                        .elements
                        .iter()
                        .filter(|(_, e)| {
                            e.type_name == "Wire" && e.targets("from").first() == Some(id)
                        })
                        .map(|(wid, _)| wid.clone())
                        .collect();
                    for w in own {
                        working.elements.remove(&w);
                    }
                }
                "Load" => {}
                other => {
                    return Err(unmappable(format!(
                        "removing a `{other}` has no architecture counterpart"
                    )))
                }
            },
            Change::SetAttribute { id, attr, new, .. } => {
                if is_metric_attr(attr) {
                    continue;
                }
                let Some(el) = working.elements.get_mut(id) else {
                    return Err(unmappable(format!(
                        "attribute update on `{id}` targets nothing in the architecture model"
                    )));
                };
                let structural = match el.type_name.as_str() {
                    "Component" => COMPONENT_STRUCTURAL_ATTRS.contains(&attr.as_str()),
                    "ComponentType" => TYPE_STRUCTURAL_ATTRS.contains(&attr.as_str()),
                    _ => false,
                };
                if !structural {
                    continue;
                }
                match new {
                    Some(v) => {
                        el.attrs.insert(attr.clone(), v.clone());
                    }
                    None => {
                        el.attrs.remove(attr);
                    }
                }
            }
            Change::AddLink { id, ref_name, target, .. } => {
                let Some(el) = working.elements.get_mut(id) else {
                    return Err(unmappable(format!(
                        "link addition on `{id}` targets nothing in the architecture model"
                    )));
                };
                match (el.type_name.as_str(), ref_name.as_str()) {
                    ("Component", "ofType") => {
                        el.links.insert("ofType".into(), vec![target.clone()]);
                    }
                    ("ComponentType", "instances") => {
                        let target = target.clone();
                        link_instance(&mut working, id, &target);
                    }
                    _ => {}
                }
            }
            Change::RemoveLink { id, ref_name, target, .. } => {
                // detach changes for elements the delta also removes are
                // part of the removal; tolerate the element being gone
                let Some(el) = working.elements.get_mut(id) else { continue };
                match (el.type_name.as_str(), ref_name.as_str()) {
                    ("Component", "ofType") => {
                        el.links.remove("ofType");
                    }
                    ("ComponentType", "instances") => {
                        let target = target.clone();
                        unlink_instance(&mut working, id, &target);
                    }
                    _ => {}
                }
            }
        }
    }
    Ok(diff(arch, &working)?)
}

// ---------------------------------------------------------------------------
// Adaptation analysis
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportVerdict {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Execute,
    Rollback,
}

/// Review of one proposal's propagated architecture, written by the
/// architecture manager: accepted proposals execute, rejected ones roll
/// back, and the evidence lists every constraint finding either way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AdaptationReport {
    pub proposal_id: String,
    pub proposing_manager: String,
    pub verdict: ReportVerdict,
    pub evidence: Vec<ConstraintViolation>,
    pub decision: Decision,
}

/// Review a tentatively propagated architecture model (passed as the
/// `architecture` entry of `views`) against a constraint model. Breaking
/// conformance with the architecture metamodel is itself critical evidence
/// under `builtin:conformance`. Accepted iff no critical findings.
pub fn adaptation_analysis(
    views: &BTreeMap<&str, &TypedModel>,
    arch_mm: &Metamodel,
    em: &EvaluationSpec,
    proposal_id: &str,
    proposing_manager: &str,
) -> Result<AdaptationReport, AdaptError> {
    let arch = *views
        .get("architecture")
        .ok_or_else(|| AdaptError::MissingView { view: "architecture".into() })?;
    let mut evidence = Vec::new();
    let report = conforms(arch, arch_mm).map_err(|e| bad_em(e.to_string()))?;
    for v in report.violations {
        evidence.push(ConstraintViolation {
            constraint_id: "builtin:conformance".into(),
            element_id: v.element.map(|e| e.to_string()).unwrap_or_else(|| "*".into()),
            severity: Severity::Critical,
            detail: Some(v.message),
        });
    }
    let mut subjects = BTreeSet::new();
    evidence.extend(evaluate_constraints(views, em, &mut subjects)?);
    let critical = evidence.iter().any(|v| v.severity == Severity::Critical);
    Ok(AdaptationReport {
        proposal_id: proposal_id.to_string(),
        proposing_manager: proposing_manager.to_string(),
        verdict: if critical { ReportVerdict::Rejected } else { ReportVerdict::Accepted },
        evidence,
        decision: if critical { Decision::Rollback } else { Decision::Execute },
    })
}

// ---------------------------------------------------------------------------
// Execution: action derivation and quiescence-aware application
// ---------------------------------------------------------------------------

/// Effector work derived from an implementation-model delta: instances to
/// drive to quiescence first, the ids that must drain before the main batch
/// applies, and the batch itself.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ActionPlan {
    pub quiesce: Vec<String>,
    pub await_quiescent: Vec<String>,
    pub actions: Vec<ReconfigurationAction>,
}

impl ActionPlan {
    pub fn is_empty(&self) -> bool {
        self.quiesce.is_empty() && self.actions.is_empty()
    }
}

/// Translate an implementation-model delta into reconfiguration actions.
/// `impl_model` is the pre-delta descriptive model, consulted for current
/// lifecycle states and connector endpoints. Instance removals and
/// migrations are scheduled behind quiescence; a delta that needs an
/// operation the platform lacks (unbinding a connector outright, retyping a
/// live instance, failing an instance on purpose) is rejected.
pub fn derive_actions(
    impl_model: &TypedModel,
    delta: &ModelDelta,
) -> Result<ActionPlan, AdaptError> {
    let unrealizable = |detail: String| AdaptError::UnrealizableTarget { detail };

    let added: BTreeSet<&ElementId> = delta
        .changes
        .iter()
        .filter_map(|c| match c {
            Change::AddElement { id, .. } => Some(id),
            _ => None,
        })
        .collect();
    let removed: BTreeMap<&ElementId, &str> = delta
        .changes
        .iter()
        .filter_map(|c| match c {
            Change::RemoveElement { id, type_name, .. } => Some((id, type_name.as_str())),
            _ => None,
        })
        .collect();

    // assembly state for added elements
    struct NewInstance {
        type_name: Option<String>,
        node: Option<String>,
        state: Option<String>,
    }
    struct NewConnector {
        interface: String,
        from: Option<ElementId>,
        to: Option<ElementId>,
    }
    let mut new_instances: BTreeMap<ElementId, NewInstance> = BTreeMap::new();
    let mut new_connectors: BTreeMap<ElementId, NewConnector> = BTreeMap::new();
    let mut rebinds: BTreeMap<ElementId, ElementId> = BTreeMap::new(); // connector -> new target
    let mut migrations: BTreeMap<ElementId, ElementId> = BTreeMap::new(); // instance -> new node
    let mut restarts: BTreeSet<ElementId> = BTreeSet::new();
    let mut state_sets: BTreeMap<ElementId, String> = BTreeMap::new();
    let mut removals: Vec<ElementId> = Vec::new();

    for change in &delta.changes {
        match change {
            Change::AddElement { id, type_name, attrs } => match type_name.as_str() {
                "Instance" => {
                    new_instances.insert(
                        id.clone(),
                        NewInstance {
                            type_name: None,
                            node: None,
                            state: attrs.get("state").and_then(|v| v.as_str()).map(String::from),
                        },
                    );
                }
                "Connector" => {
                    let interface = attrs
                        .get("interface")
                        .map(|v| v.to_string())
                        .ok_or_else(|| unrealizable(format!("connector `{id}` lacks an interface")))?;
                    new_connectors.insert(
                        id.clone(),
                        NewConnector { interface, from: None, to: None },
                    );
                }
                other => {
                    return Err(unrealizable(format!(
                        "a `{other}` cannot be created on the running system"
                    )))
                }
            },
            Change::RemoveElement { id, type_name, .. } => match type_name.as_str() {
                "Instance" => removals.push(id.clone()),
                "Connector" => {
                    let from = impl_model
                        .element(id)
                        .and_then(|e| e.targets("from").first().cloned());
                    let owner_removed = from.as_ref().is_some_and(|f| removed.contains_key(f));
                    if !owner_removed {
                        return Err(unrealizable(format!(
                            "connector `{id}` cannot be unbound without removing its instance"
                        )));
                    }
                    // goes away with its owning instance
                }
                other => {
                    return Err(unrealizable(format!(
                        "a `{other}` cannot be removed from the running system"
                    )))
                }
            },
            Change::SetAttribute { id, attr, old, new } => {
                if removed.contains_key(id) {
                    continue;
                }
                if let Some(inst) = new_instances.get_mut(id) {
                    if attr == "state" {
                        inst.state = new.as_ref().and_then(|v| v.as_str()).map(String::from);
                    }
                    continue;
                }
                let subject_type = impl_model
                    .element(id)
                    .map(|e| e.type_name.as_str())
                    .ok_or_else(|| unrealizable(format!("attribute update on unknown `{id}`")))?;
                if subject_type != "Instance" || attr != "state" {
                    return Err(unrealizable(format!(
                        "`{subject_type}.{attr}` cannot be changed on the running system"
                    )));
                }
                let new_state = new
                    .as_ref()
                    .and_then(|v| v.as_str())
                    .ok_or_else(|| unrealizable(format!("state of `{id}` cleared")))?;
                let old_state = old.as_ref().and_then(|v| v.as_str());
                match (old_state, new_state) {
                    (Some("failed"), "running") => {
                        restarts.insert(id.clone());
                    }
                    (_, "failed") => {
                        return Err(unrealizable(format!(
                            "`{id}` cannot be failed on purpose"
                        )))
                    }
                    (_, s) => {
                        state_sets.insert(id.clone(), s.to_string());
                    }
                }
            }
            Change::AddLink { id, ref_name, target, .. } => {
                if let Some(inst) = new_instances.get_mut(id) {
                    match ref_name.as_str() {
                        "ofType" => inst.type_name = Some(target.to_string()),
                        "on" => inst.node = Some(target.to_string()),
                        _ => {}
                    }
                    continue;
                }
                if let Some(conn) = new_connectors.get_mut(id) {
                    match ref_name.as_str() {
                        "from" => conn.from = Some(target.clone()),
                        "to" => conn.to = Some(target.clone()),
                        _ => {}
                    }
                    continue;
                }
                let subject_type = impl_model
                    .element(id)
                    .map(|e| e.type_name.as_str())
                    .ok_or_else(|| unrealizable(format!("link addition on unknown `{id}`")))?;
                match (subject_type, ref_name.as_str()) {
                    ("Connector", "to") => {
                        rebinds.insert(id.clone(), target.clone());
                    }
                    ("Instance", "on") => {
                        migrations.insert(id.clone(), target.clone());
                    }
                    ("Instance", "ofType") => {
                        return Err(unrealizable(format!(
                            "`{id}` cannot be retyped while running"
                        )))
                    }
                    _ => {
                        return Err(unrealizable(format!(
                            "link `{subject_type}.{ref_name}` cannot be changed on the running system"
                        )))
                    }
                }
            }
            Change::RemoveLink { id, ref_name, .. } => {
                if removed.contains_key(id) || added.contains(id) {
                    continue; // detach of a removed element / churn on a new one
                }
                let subject_type = impl_model
                    .element(id)
                    .map(|e| e.type_name.as_str())
                    .ok_or_else(|| unrealizable(format!("link removal on unknown `{id}`")))?;
                match (subject_type, ref_name.as_str()) {
                    // the matching AddLink carries the new endpoint
                    ("Connector", "to") | ("Instance", "on") => {}
                    _ => {
                        return Err(unrealizable(format!(
                            "link `{subject_type}.{ref_name}` cannot be removed on the running system"
                        )))
                    }
                }
            }
        }
    }

    let mut plan = ActionPlan::default();

    for (id, inst) in &new_instances {
        let type_name = inst
            .type_name
            .clone()
            .ok_or_else(|| unrealizable(format!("new instance `{id}` has no type")))?;
        let node_name = inst
            .node
            .clone()
            .ok_or_else(|| unrealizable(format!("new instance `{id}` has no node")))?;
        plan.actions.push(ReconfigurationAction::AddInstance {
            type_name,
            node_name,
            instance_id: id.to_string(),
        });
        if let Some(state) = &inst.state {
            if state != "running" {
                state_sets.insert(id.clone(), state.clone());
            }
        }
    }
    for (id, conn) in &new_connectors {
        let from = conn
            .from
            .clone()
            .ok_or_else(|| unrealizable(format!("connector `{id}` has no source")))?;
        let to = conn
            .to
            .clone()
            .ok_or_else(|| unrealizable(format!("connector `{id}` has no target")))?;
        plan.actions.push(ReconfigurationAction::Rebind {
            instance_id: from.to_string(),
            interface: conn.interface.clone(),
            target: to.to_string(),
        });
    }
    for (connector, target) in &rebinds {
        let el = impl_model.element(connector).expect("checked while walking");
        let from = el
            .targets("from")
            .first()
            .ok_or_else(|| unrealizable(format!("connector `{connector}` has no source")))?;
        let interface = el
            .attr("interface")
            .map(|v| v.to_string())
            .ok_or_else(|| unrealizable(format!("connector `{connector}` lacks an interface")))?;
        plan.actions.push(ReconfigurationAction::Rebind {
            instance_id: from.to_string(),
            interface,
            target: target.to_string(),
        });
    }

    // removals and migrations go behind quiescence
    let mut needs_quiescence: Vec<(&ElementId, &str)> = Vec::new();
    for id in &removals {
        needs_quiescence.push((id, "removed"));
    }
    for id in migrations.keys() {
        if removals.contains(id) {
            return Err(unrealizable(format!("`{id}` is both migrated and removed")));
        }
        needs_quiescence.push((id, "migrated"));
    }
    for (id, why) in needs_quiescence {
        if restarts.contains(id) || state_sets.contains_key(id) {
            return Err(unrealizable(format!(
                "`{id}` cannot change state and be {why} in one step"
            )));
        }
        let state = impl_model
            .element(id)
            .and_then(|e| e.attr("state"))
            .and_then(|v| v.as_str())
            .ok_or_else(|| unrealizable(format!("no such instance `{id}`")))?;
        match state {
            "running" => plan.quiesce.push(id.to_string()),
            "quiescing" => {}
            other => {
                return Err(unrealizable(format!(
                    "`{id}` is {other} and cannot be {why}"
                )))
            }
        }
        plan.await_quiescent.push(id.to_string());
    }

    for (id, node) in &migrations {
        plan.actions.push(ReconfigurationAction::MigrateInstance {
            instance_id: id.to_string(),
            node_name: node.to_string(),
        });
    }
    for id in &restarts {
        plan.actions.push(ReconfigurationAction::Restart {
            instance_id: id.to_string(),
        });
    }
    for (id, state) in &state_sets {
        plan.actions.push(ReconfigurationAction::SetParameter {
            instance_id: id.to_string(),
            name: "state".into(),
            value: state.clone(),
        });
    }
    for id in &removals {
        plan.actions.push(ReconfigurationAction::RemoveInstance {
            instance_id: id.to_string(),
        });
    }

    Ok(plan)
}

/// How an execution attempt ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "camelCase")]
pub enum ExecuteOutcome {
    Applied,
    /// Instances still draining when the wait budget ran out; nothing beyond
    /// the quiesce requests was applied.
    QuiesceTimeout { pending: Vec<String> },
    /// The platform refused an action; the batch left no residue.
    Failed { error: String },
}

/// Everything an execution attempt produced. The sensor events cover the
/// quiesce requests, the waiting period, and the applied batch — feed them
/// to the monitor so the models catch up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExecuteReport {
    pub events: Vec<SensorEvent>,
    pub waited: f64,
    pub outcome: ExecuteOutcome,
}

/// Apply an action plan to the running system: request quiescence, advance
/// time in `step` increments until every affected instance has drained (up
/// to `max_wait`), then apply the main batch atomically.
pub fn execute_plan(
    sim: &mut SimulatedSystem,
    plan: &ActionPlan,
    step: f64,
    max_wait: f64,
) -> ExecuteReport {
    let mut events = Vec::new();
    let mut waited = 0.0;
    let fail = |events: Vec<SensorEvent>, waited: f64, error: EffectorError| ExecuteReport {
        events,
        waited,
        outcome: ExecuteOutcome::Failed { error: error.to_string() },
    };

    if !plan.quiesce.is_empty() {
        let batch: Vec<ReconfigurationAction> = plan
            .quiesce
            .iter()
            .map(|id| ReconfigurationAction::SetParameter {
                instance_id: id.clone(),
                name: "state".into(),
                value: "quiescing".into(),
            })
            .collect();
        match sim.effect(&batch) {
            Ok(mut evs) => events.append(&mut evs),
            Err(e) => return fail(events, waited, e),
        }
    }

    loop {
        let pending: Vec<String> = plan
            .await_quiescent
            .iter()
            .filter(|id| !sim.quiescent(id))
            .cloned()
            .collect();
        if pending.is_empty() {
            break;
        }
        if waited + 1e-9 >= max_wait {
            return ExecuteReport {
                events,
                waited,
                outcome: ExecuteOutcome::QuiesceTimeout { pending },
            };
        }
        events.extend(sim.advance(step));
        waited += step;
    }

    if !plan.actions.is_empty() {
        match sim.effect(&plan.actions) {
            Ok(mut evs) => events.append(&mut evs),
            Err(e) => return fail(events, waited, e),
        }
    }
    ExecuteReport {
        events,
        waited,
        outcome: ExecuteOutcome::Applied,
    }
}

// ---------------------------------------------------------------------------
// Proposals and rollback
// ---------------------------------------------------------------------------

/// The deltas a proposal wrote, kept so a rejected or failed proposal can be
/// undone exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProposalRecord {
    pub proposal_id: String,
    pub manager: String,
    pub source_kind: ViewKind,
    /// Delta applied to the prescriptive concern model.
    pub source_delta: ModelDelta,
    /// Propagated delta applied to the architecture model under review.
    pub arch_delta: ModelDelta,
}

/// Undo a proposal: the inverse deltas are applied in reverse order of the
/// original writes. Versions move forward; contents return to their
/// pre-proposal state. Interleaved foreign writes surface as stale-delta
/// errors — the single-writer contract makes them fatal.
pub fn rollback(
    record: &ProposalRecord,
    source: &TypedModel,
    arch: &TypedModel,
) -> Result<(TypedModel, TypedModel), AdaptError> {
    let arch_restored = patch(arch, &invert(&record.arch_delta))?;
    let source_restored = patch(source, &invert(&record.source_delta))?;
    Ok((source_restored, arch_restored))
}

// ---------------------------------------------------------------------------
// Hierarchical managers
// ---------------------------------------------------------------------------

/// One manager level: the evaluation and change models it runs with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ManagerLevel {
    pub manager_id: String,
    pub evaluation: TypedModel,
    pub change: TypedModel,
}

/// An ordered stack of manager levels. The active level's models drive the
/// loop; when its planner is infeasible, escalation installs the next
/// level's models in their place. A level above only ever replaces the
/// evaluation and change models below it — reflection models are out of its
/// reach by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ManagerStack {
    levels: Vec<ManagerLevel>,
    active: usize,
}

impl ManagerStack {
    pub fn new(levels: Vec<ManagerLevel>) -> Result<Self, AdaptError> {
        if levels.is_empty() {
            return Err(AdaptError::BadChangeModel {
                detail: "a manager stack needs at least one level".into(),
            });
        }
        Ok(Self { levels, active: 0 })
    }

    pub fn active_level(&self) -> &ManagerLevel {
        &self.levels[self.active]
    }

    pub fn active_index(&self) -> usize {
        self.active
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Move to the next level; its models replace the failing level's in
    /// the registry. Errors when the stack is exhausted.
    pub fn escalate(&mut self) -> Result<&ManagerLevel, AdaptError> {
        if self.active + 1 >= self.levels.len() {
            return Err(AdaptError::NoHigherLevel);
        }
        self.active += 1;
        Ok(&self.levels[self.active])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::patch;
    use crate::sim::{
        ComponentTypeDef, ConnectorSpec, InstanceSpec, NodeDef, SystemBlueprint,
    };
    use crate::sync::{
        implementation_metamodel, model_from_snapshot, monitor_update, standard_view_spec,
        sync_backward, sync_forward, CorrespondenceStore,
    };
    use crate::testkit::deep_equal;

    // ------------------------------------------------------------------
    // fixtures
    // ------------------------------------------------------------------

    fn blueprint() -> SystemBlueprint {
        SystemBlueprint {
            component_types: vec![
                ComponentTypeDef {
                    type_name: "AppServer".into(),
                    provides: vec!["http".into()],
                    requires: vec!["db".into()],
                    service_time_mean: 0.05,
                    failure_rate: 0.0,
                },
                ComponentTypeDef {
                    type_name: "Database".into(),
                    provides: vec!["db".into()],
                    requires: vec![],
                    service_time_mean: 0.02,
                    failure_rate: 0.0,
                },
            ],
            nodes: vec![
                NodeDef { node_name: "n1".into(), capacity: 100 },
                NodeDef { node_name: "n2".into(), capacity: 200 },
            ],
            instances: vec![
                InstanceSpec {
                    instance_id: "as-1".into(),
                    type_name: "AppServer".into(),
                    node_name: "n1".into(),
                },
                InstanceSpec {
                    instance_id: "db-1".into(),
                    type_name: "Database".into(),
                    node_name: "n1".into(),
                },
            ],
            connectors: vec![ConnectorSpec {
                from_instance: "as-1".into(),
                interface: "db".into(),
                to_instance: "db-1".into(),
            }],
            entry_type: "AppServer".into(),
            initial_rate: 8.0,
            window: 10.0,
        }
    }

    /// Descriptive concern views for a fresh two-component system, with the
    /// entry component's response time set explicitly.
    struct Fixture {
        perf: TypedModel,
        fail: TypedModel,
        arch: TypedModel,
        env: TypedModel,
    }

    impl Fixture {
        fn new(entry_avg_rt: f64) -> Self {
            let sys = SimulatedSystem::new(&blueprint(), 1, vec![]).unwrap();
            let mut m = model_from_snapshot(&sys.sense());
            m.elements
                .get_mut(&ElementId::new("as-1"))
                .unwrap()
                .attrs
                .insert("avgResponseTime".into(), AttrValue::Real(entry_avg_rt));
            let project = |kind: ViewKind| crate::sync::project(&m, &standard_view_spec(kind)).0;
            Fixture {
                perf: project(ViewKind::Performance),
                fail: project(ViewKind::Failure),
                arch: project(ViewKind::Architecture),
                env: project(ViewKind::Environment),
            }
        }

        fn views(&self) -> BTreeMap<&str, &TypedModel> {
            BTreeMap::from([
                ("performance", &self.perf),
                ("failure", &self.fail),
                ("architecture", &self.arch),
                ("environment", &self.env),
            ])
        }
    }

    fn perf_em(max_rt: f64) -> EvaluationSpec {
        EvaluationSpec {
            constraints: vec![],
            weights: BTreeMap::from([("performance".to_string(), 1.0)]),
            thresholds: BTreeMap::from([("maxAvgResponseTime".to_string(), max_rt)]),
        }
    }

    fn scale_out_rule(id: &str, ty: &str, placement: &str) -> RuleDef {
        RuleDef {
            rule_id: id.into(),
            event: "always".into(),
            condition: String::new(),
            action: ActionTemplate::ScaleOut {
                component_type: ty.into(),
                placement: placement.into(),
            },
        }
    }

    fn implicit_cm(rules: Vec<RuleDef>) -> ChangeSpec {
        ChangeSpec {
            mode: ChangeMode::Implicit,
            rules,
            variants: vec![],
        }
    }

    fn required_analysis() -> AnalysisModel {
        AnalysisModel {
            subjects: vec![],
            violations: vec![],
            utility: 0.0,
            verdict: Verdict::AdaptationRequired,
        }
    }

    // ------------------------------------------------------------------
    // model codecs
    // ------------------------------------------------------------------

    #[test]
    fn adaptation_metamodels_and_codecs_round_trip() {
        evaluation_metamodel().check().unwrap();
        change_metamodel().check().unwrap();

        let em = EvaluationSpec {
            constraints: vec![ConstraintDef {
                constraint_id: "c-single".into(),
                view: "architecture".into(),
                scope_type: "ComponentType".into(),
                predicate: "self.name != 'AppServer' or count(self.instances) <= 1".into(),
                severity: Severity::Critical,
            }],
            weights: BTreeMap::from([
                ("performance".to_string(), 0.7),
                ("failure".to_string(), 0.3),
            ]),
            thresholds: BTreeMap::from([
                ("maxAvgResponseTime".to_string(), 0.3),
                ("failureBudget".to_string(), 10.0),
            ]),
        };
        let encoded = em.to_model();
        assert!(conforms(&encoded, &evaluation_metamodel()).unwrap().conforms);
        assert_eq!(parse_evaluation(&encoded).unwrap(), em);

        let cm = ChangeSpec {
            mode: ChangeMode::Explicit,
            rules: vec![],
            variants: vec![VariantDef {
                variant_id: "v0".into(),
                placements: BTreeMap::from([
                    ("AppServer".to_string(), vec!["n1".to_string(), "n2".to_string()]),
                    ("Database".to_string(), vec!["n1".to_string()]),
                ]),
            }],
        };
        let encoded = cm.to_model();
        assert!(conforms(&encoded, &change_metamodel()).unwrap().conforms);
        assert_eq!(parse_change(&encoded).unwrap(), cm);

        let cm = implicit_cm(vec![scale_out_rule("r1", "AppServer", "leastLoaded")]);
        assert_eq!(parse_change(&cm.to_model()).unwrap(), cm);
    }

    #[test]
    fn evaluation_model_validation_rejects_bad_inputs() {
        // weights not summing to 1
        let mut em = perf_em(0.3);
        em.weights.insert("performance".into(), 0.5);
        let err = parse_evaluation(&em.to_model()).unwrap_err();
        assert!(matches!(err, AdaptError::BadEvaluationModel { ref detail } if detail.contains("sum")));

        // unknown concern
        let mut em = perf_em(0.3);
        em.weights.insert("latency".into(), 0.0);
        let err = parse_evaluation(&em.to_model()).unwrap_err();
        assert!(matches!(err, AdaptError::BadEvaluationModel { ref detail } if detail.contains("latency")));

        // weighted concern without its threshold
        let mut em = perf_em(0.3);
        em.thresholds.clear();
        let err = parse_evaluation(&em.to_model()).unwrap_err();
        assert!(matches!(err, AdaptError::BadEvaluationModel { ref detail } if detail.contains("maxAvgResponseTime")));

        // unparseable predicate
        let mut em = perf_em(0.3);
        em.constraints.push(ConstraintDef {
            constraint_id: "broken".into(),
            view: "performance".into(),
            scope_type: "Component".into(),
            predicate: "self.avgResponseTime <<".into(),
            severity: Severity::Warning,
        });
        let err = parse_evaluation(&em.to_model()).unwrap_err();
        assert!(matches!(err, AdaptError::BadEvaluationModel { ref detail } if detail.contains("broken")));
    }

    #[test]
    fn change_model_validation_rejects_bad_inputs() {
        // rules and variants mixed
        let mut cm = implicit_cm(vec![scale_out_rule("r1", "AppServer", "n1")]);
        cm.variants.push(VariantDef {
            variant_id: "v0".into(),
            placements: BTreeMap::from([("AppServer".to_string(), vec!["n1".to_string()])]),
        });
        let err = parse_change(&cm.to_model()).unwrap_err();
        assert!(matches!(err, AdaptError::BadChangeModel { ref detail } if detail.contains("mixes")));

        // neither
        let err = parse_change(&TypedModel::new(CHANGE_MM)).unwrap_err();
        assert!(matches!(err, AdaptError::BadChangeModel { ref detail } if detail.contains("neither")));

        // scale-out without placement
        let mut model = implicit_cm(vec![scale_out_rule("r1", "AppServer", "n1")]).to_model();
        model
            .elements
            .get_mut(&ElementId::new("r1"))
            .unwrap()
            .attrs
            .remove("placement");
        let err = parse_change(&model).unwrap_err();
        assert!(matches!(err, AdaptError::BadChangeModel { ref detail } if detail.contains("placement")));

        // unknown event kind
        let mut cm = implicit_cm(vec![scale_out_rule("r1", "AppServer", "n1")]);
        cm.rules[0].event = "onTuesdays".into();
        let err = parse_change(&cm.to_model()).unwrap_err();
        assert!(matches!(err, AdaptError::BadChangeModel { ref detail } if detail.contains("onTuesdays")));

        // rules come back ordered by id regardless of insertion order
        let cm = implicit_cm(vec![
            scale_out_rule("r2", "AppServer", "n1"),
            scale_out_rule("r1", "Database", "n2"),
        ]);
        let parsed = parse_change(&cm.to_model()).unwrap();
        assert_eq!(parsed.rules[0].rule_id, "r1");
        assert_eq!(parsed.rules[1].rule_id, "r2");
    }

    // ------------------------------------------------------------------
    // analysis
    // ------------------------------------------------------------------

    #[test]
    fn vacuous_analysis_scores_full_utility() {
        let fx = Fixture::new(0.0);
        let em = EvaluationSpec {
            constraints: vec![],
            weights: BTreeMap::from([
                ("performance".to_string(), 0.5),
                ("failure".to_string(), 0.5),
            ]),
            thresholds: BTreeMap::from([
                ("maxAvgResponseTime".to_string(), 0.3),
                ("failureBudget".to_string(), 10.0),
            ]),
        };
        let analysis = analyze(&fx.views(), &em, None).unwrap();
        assert_eq!(analysis.utility, 1.0);
        assert_eq!(analysis.verdict, Verdict::Ok);
        assert!(analysis.violations.is_empty());
    }

    #[test]
    fn singleton_constraint_flags_duplicate_instances() {
        let mut fx = Fixture::new(0.1);
        // second AppServer component in the architecture view
        fx.arch.elements.insert(
            ElementId::new("as-2"),
            Element::new("Component")
                .with_attr("name", "as-2")
                .with_attr("type", "AppServer")
                .with_attr("node", "n2")
                .with_attr("state", "running")
                .with_links("ofType", [ElementId::new("AppServer")]),
        );
        let list = fx
            .arch
            .elements
            .get_mut(&ElementId::new("AppServer"))
            .unwrap()
            .links
            .get_mut("instances")
            .unwrap();
        list.push(ElementId::new("as-2"));

        let mut em = perf_em(0.3);
        em.constraints.push(ConstraintDef {
            constraint_id: "c-single".into(),
            view: "architecture".into(),
            scope_type: "ComponentType".into(),
            predicate: "self.name != 'AppServer' or count(self.instances) <= 1".into(),
            severity: Severity::Critical,
        });
        let analysis = analyze(&fx.views(), &em, None).unwrap();
        assert_eq!(analysis.violations.len(), 1);
        assert_eq!(analysis.violations[0].constraint_id, "c-single");
        assert_eq!(analysis.violations[0].element_id, "AppServer");
        assert_eq!(analysis.violations[0].severity, Severity::Critical);
        assert_eq!(analysis.verdict, Verdict::AdaptationRequired);
    }

    #[test]
    fn utility_is_half_exactly_at_the_response_time_bound() {
        let fx = Fixture::new(0.3);
        let analysis = analyze(&fx.views(), &perf_em(0.3), None).unwrap();
        assert!((analysis.utility - 0.5).abs() < 1e-12, "{}", analysis.utility);
        // and scales linearly below the bound
        let fx = Fixture::new(0.15);
        let analysis = analyze(&fx.views(), &perf_em(0.3), None).unwrap();
        assert!((analysis.utility - 0.75).abs() < 1e-12);
        // floor turns a low score into a demand for adaptation
        let fx = Fixture::new(0.3);
        let mut em = perf_em(0.3);
        em.thresholds.insert("utilityFloor".into(), 0.8);
        let analysis = analyze(&fx.views(), &em, None).unwrap();
        assert_eq!(analysis.verdict, Verdict::AdaptationRequired);
        assert!(analysis.violations.is_empty());
    }

    #[test]
    fn predicate_errors_are_recorded_and_analysis_continues() {
        let fx = Fixture::new(0.1);
        let mut em = perf_em(0.3);
        em.constraints.push(ConstraintDef {
            constraint_id: "c-broken".into(),
            view: "performance".into(),
            scope_type: "Component".into(),
            predicate: "self.noSuchAttribute > 1".into(),
            severity: Severity::Warning,
        });
        em.constraints.push(ConstraintDef {
            constraint_id: "c-ok".into(),
            view: "performance".into(),
            scope_type: "Component".into(),
            predicate: "self.state = 'running'".into(),
            severity: Severity::Critical,
        });
        let analysis = analyze(&fx.views(), &em, None).unwrap();
        let broken: Vec<_> = analysis
            .violations
            .iter()
            .filter(|v| v.constraint_id == "c-broken")
            .collect();
        assert_eq!(broken.len(), 2, "one per component, each with the error");
        assert!(broken.iter().all(|v| v.detail.is_some()));
        // the healthy constraint still ran and found nothing
        assert!(analysis.violations.iter().all(|v| v.constraint_id == "c-broken"));
    }

    #[test]
    fn reference_divergence_is_reported_as_warnings() {
        let fx = Fixture::new(0.1);
        // reference expects a second component; metrics differences are noise
        let mut reference = fx.perf.clone();
        reference.elements.insert(
            ElementId::new("as-2"),
            Element::new("Component")
                .with_attr("name", "as-2")
                .with_attr("type", "AppServer")
                .with_attr("node", "n2")
                .with_attr("state", "running")
                .with_links("ofType", [ElementId::new("AppServer")]),
        );
        reference
            .elements
            .get_mut(&ElementId::new("as-1"))
            .unwrap()
            .attrs
            .insert("avgResponseTime".into(), AttrValue::Real(99.0));
        let em = perf_em(0.3);
        let analysis = analyze(&fx.views(), &em, Some(("performance", &reference))).unwrap();
        let convergence: Vec<_> = analysis
            .violations
            .iter()
            .filter(|v| v.constraint_id == "builtin:convergence")
            .collect();
        assert!(!convergence.is_empty());
        assert!(convergence.iter().all(|v| v.severity == Severity::Warning));
        assert!(convergence.iter().any(|v| v.element_id == "as-2"));
        assert!(
            !convergence.iter().any(|v| v.element_id == "as-1"),
            "metric-only divergence must not be flagged"
        );
        // warnings alone do not force adaptation
        assert_eq!(analysis.verdict, Verdict::Ok);

        // an exactly matching reference reports nothing
        let analysis = analyze(&fx.views(), &em, Some(("performance", &fx.perf))).unwrap();
        assert!(analysis.violations.is_empty());
    }

    #[test]
    fn analysis_leaves_the_views_untouched() {
        let fx = Fixture::new(0.4);
        let versions: Vec<u64> = [&fx.perf, &fx.fail, &fx.arch, &fx.env]
            .iter()
            .map(|m| m.version)
            .collect();
        let snapshot = (fx.perf.clone(), fx.arch.clone());
        let mut em = perf_em(0.3);
        em.constraints.push(ConstraintDef {
            constraint_id: "c".into(),
            view: "architecture".into(),
            scope_type: "Component".into(),
            predicate: "self.state = 'running'".into(),
            severity: Severity::Warning,
        });
        analyze(&fx.views(), &em, None).unwrap();
        assert_eq!(
            versions,
            [&fx.perf, &fx.fail, &fx.arch, &fx.env].map(|m| m.version)
        );
        assert!(deep_equal(&snapshot.0, &fx.perf));
        assert!(deep_equal(&snapshot.1, &fx.arch));
    }

    // ------------------------------------------------------------------
    // planning
    // ------------------------------------------------------------------

    #[test]
    fn single_enabled_rule_is_chosen() {
        let fx = Fixture::new(1.0);
        let cm = implicit_cm(vec![scale_out_rule("r1", "AppServer", "leastLoaded")]);
        let outcome = plan(
            &fx.views(),
            ViewKind::Performance,
            &required_analysis(),
            &cm,
            &perf_em(0.3),
            &BTreeSet::new(),
        )
        .unwrap();
        let PlanOutcome::Planned(result) = outcome else {
            panic!("expected a plan");
        };
        assert_eq!(result.chosen, "r1");
        // least-loaded node is n2 (n1 hosts both starting instances)
        let new_comp = result.target.element(&ElementId::new("appserver-g1")).unwrap();
        assert_eq!(new_comp.attr("node").unwrap().as_str(), Some("n2"));
        assert_eq!(new_comp.attr("state").unwrap().as_str(), Some("running"));
        // the type's instance list picked up the new member in sorted order
        let instances = result
            .target
            .element(&ElementId::new("AppServer"))
            .unwrap()
            .targets("instances");
        assert_eq!(
            instances,
            &[ElementId::new("appserver-g1"), ElementId::new("as-1")]
        );
        assert!(!result.delta.is_empty());
    }

    #[test]
    fn event_kinds_gate_rules() {
        let fx = Fixture::new(1.0);
        let mut analysis = required_analysis();
        analysis.violations.push(ConstraintViolation {
            constraint_id: "c-rt".into(),
            element_id: "as-1".into(),
            severity: Severity::Warning,
            detail: None,
        });
        let mut r1 = scale_out_rule("r1", "AppServer", "n2");
        r1.event = "violation:c-other".into();
        let mut r2 = scale_out_rule("r2", "Database", "n2");
        r2.event = "violation:c-rt".into();
        let cm = implicit_cm(vec![r1, r2]);
        let outcome = plan(
            &fx.views(),
            ViewKind::Performance,
            &analysis,
            &cm,
            &perf_em(0.3),
            &BTreeSet::new(),
        )
        .unwrap();
        let PlanOutcome::Planned(result) = outcome else {
            panic!("expected a plan");
        };
        assert_eq!(result.chosen, "r2", "only the matching violation event fires");
        assert!(result
            .reviews
            .iter()
            .any(|r| r.candidate == "r1" && r.disposition == Disposition::NotTriggered));

        // a condition can veto an otherwise enabled rule
        let mut r3 = scale_out_rule("r3", "AppServer", "n2");
        r3.condition = "count(elements Component) > 10".into();
        let cm = implicit_cm(vec![r3]);
        let outcome = plan(
            &fx.views(),
            ViewKind::Performance,
            &analysis,
            &cm,
            &perf_em(0.3),
            &BTreeSet::new(),
        )
        .unwrap();
        assert!(matches!(outcome, PlanOutcome::Infeasible { .. }));
    }

    #[test]
    fn argmax_selects_the_higher_predicted_utility() {
        // entry component at 1.0 s; scaling the AppServer out halves its
        // predicted response time, scaling the Database out changes nothing
        // for the worst component
        let fx = Fixture::new(1.0);
        let cm = implicit_cm(vec![
            scale_out_rule("rA", "Database", "n2"),
            scale_out_rule("rB", "AppServer", "n2"),
        ]);
        let em = perf_em(0.3);
        let outcome = plan(
            &fx.views(),
            ViewKind::Performance,
            &required_analysis(),
            &cm,
            &em,
            &BTreeSet::new(),
        )
        .unwrap();
        let PlanOutcome::Planned(result) = outcome else {
            panic!("expected a plan");
        };
        assert_eq!(result.chosen, "rB");
        // predicted: max avgRT = 0.5 → utility = 1 − 0.5/0.6
        assert!((result.predicted_utility - (1.0 - 0.5 / 0.6)).abs() < 1e-12);
        let outscored = result
            .reviews
            .iter()
            .find(|r| r.candidate == "rA")
            .unwrap();
        match &outscored.disposition {
            Disposition::Outscored { utility } => {
                // database scale-out leaves the 1.0 s entry in place → 0 score
                assert!((*utility - 0.0).abs() < 1e-12);
            }
            other => panic!("unexpected disposition {other:?}"),
        }
    }

    #[test]
    fn utility_ties_break_to_the_lower_rule_id() {
        let fx = Fixture::new(1.0);
        // identical actions under different ids — identical predictions
        let cm = implicit_cm(vec![
            scale_out_rule("rb", "AppServer", "n2"),
            scale_out_rule("ra", "AppServer", "n2"),
        ]);
        let outcome = plan(
            &fx.views(),
            ViewKind::Performance,
            &required_analysis(),
            &cm,
            &perf_em(0.3),
            &BTreeSet::new(),
        )
        .unwrap();
        let PlanOutcome::Planned(result) = outcome else {
            panic!("expected a plan");
        };
        assert_eq!(result.chosen, "ra");
    }

    #[test]
    fn weight_scaling_never_changes_the_winner() {
        // two rules improving different concerns: restart (failure score)
        // versus scale-out (performance score)
        let mut fx = Fixture::new(0.5);
        fx.fail
            .elements
            .get_mut(&ElementId::new("as-1"))
            .unwrap()
            .attrs
            .insert("failureCount".into(), AttrValue::Int(6));
        // a failed database sibling for the restart rule to act on
        for view in [&mut fx.perf, &mut fx.fail] {
            view.elements.insert(
                ElementId::new("db-2"),
                Element::new("Component")
                    .with_attr("name", "db-2")
                    .with_attr("type", "Database")
                    .with_attr("node", "n2")
                    .with_attr("state", "failed")
                    .with_links("ofType", [ElementId::new("Database")]),
            );
        }
        let mut restart = RuleDef {
            rule_id: "r-restart".into(),
            event: "always".into(),
            condition: String::new(),
            action: ActionTemplate::RestartFailed { component_type: "*".into() },
        };
        restart.condition = String::new();
        let cm = implicit_cm(vec![restart, scale_out_rule("r-scale", "AppServer", "n2")]);

        let base = EvaluationSpec {
            constraints: vec![],
            weights: BTreeMap::from([
                ("performance".to_string(), 0.6),
                ("failure".to_string(), 0.4),
            ]),
            thresholds: BTreeMap::from([
                ("maxAvgResponseTime".to_string(), 0.3),
                ("failureBudget".to_string(), 10.0),
            ]),
        };
        let mut scaled = base.clone();
        for w in scaled.weights.values_mut() {
            *w *= 2.5;
        }

        let choose = |em: &EvaluationSpec| {
            match plan(
                &fx.views(),
                ViewKind::Performance,
                &required_analysis(),
                &cm,
                em,
                &BTreeSet::new(),
            )
            .unwrap()
            {
                PlanOutcome::Planned(r) => (r.chosen.clone(), r.predicted_utility),
                PlanOutcome::Infeasible { .. } => panic!("expected a plan"),
            }
        };
        let (winner_base, u_base) = choose(&base);
        let (winner_scaled, u_scaled) = choose(&scaled);
        assert_eq!(winner_base, winner_scaled);
        assert!((u_scaled - 2.5 * u_base).abs() < 1e-9, "values scale, ranking holds");

        // sanity: the two candidates genuinely score differently
        let viable: Vec<f64> = match plan(
            &fx.views(),
            ViewKind::Performance,
            &required_analysis(),
            &cm,
            &base,
            &BTreeSet::new(),
        )
        .unwrap()
        {
            PlanOutcome::Planned(r) => r
                .reviews
                .iter()
                .filter_map(|rev| match rev.disposition {
                    Disposition::Chosen { utility } | Disposition::Outscored { utility } => {
                        Some(utility)
                    }
                    _ => None,
                })
                .collect(),
            _ => panic!(),
        };
        assert_eq!(viable.len(), 2);
        assert!((viable[0] - viable[1]).abs() > 1e-6);
    }

    #[test]
    fn scale_out_under_a_singleton_cap_is_infeasible() {
        let fx = Fixture::new(1.0);
        let mut em = perf_em(0.3);
        em.constraints.push(ConstraintDef {
            constraint_id: "c-single".into(),
            view: "performance".into(),
            scope_type: "ComponentType".into(),
            predicate: "self.name != 'AppServer' or count(self.instances) <= 1".into(),
            severity: Severity::Critical,
        });
        let cm = implicit_cm(vec![scale_out_rule("r1", "AppServer", "leastLoaded")]);
        let outcome = plan(
            &fx.views(),
            ViewKind::Performance,
            &required_analysis(),
            &cm,
            &em,
            &BTreeSet::new(),
        )
        .unwrap();
        let PlanOutcome::Infeasible { reviews, .. } = outcome else {
            panic!("expected infeasibility");
        };
        // exhaustive audit: every rule of the change model was considered
        // and each one was excluded by the critical constraint
        assert_eq!(reviews.len(), cm.rules.len());
        assert!(reviews.iter().all(|r| matches!(
            &r.disposition,
            Disposition::CriticalViolation { constraint_id } if constraint_id == "c-single"
        )));
    }

    #[test]
    fn vetoed_fingerprints_exclude_candidates() {
        let fx = Fixture::new(1.0);
        let cm = implicit_cm(vec![scale_out_rule("r1", "AppServer", "n2")]);
        let em = perf_em(0.3);
        let first = plan(
            &fx.views(),
            ViewKind::Performance,
            &required_analysis(),
            &cm,
            &em,
            &BTreeSet::new(),
        )
        .unwrap();
        let PlanOutcome::Planned(result) = first else {
            panic!("expected a plan");
        };
        let vetoed = BTreeSet::from([result.fingerprint.clone()]);
        let second = plan(
            &fx.views(),
            ViewKind::Performance,
            &required_analysis(),
            &cm,
            &em,
            &vetoed,
        )
        .unwrap();
        let PlanOutcome::Infeasible { reviews, .. } = second else {
            panic!("expected infeasibility after the veto");
        };
        assert!(reviews
            .iter()
            .any(|r| r.candidate == "r1" && r.disposition == Disposition::Vetoed));
    }

    #[test]
    fn explicit_variants_rebuild_placements() {
        let fx = Fixture::new(1.0);
        let cm = ChangeSpec {
            mode: ChangeMode::Explicit,
            rules: vec![],
            variants: vec![
                VariantDef {
                    variant_id: "v0".into(),
                    // identical to the current configuration → no change
                    placements: BTreeMap::from([(
                        "AppServer".to_string(),
                        vec!["n1".to_string()],
                    )]),
                },
                VariantDef {
                    variant_id: "v1".into(),
                    // migrate the app server to n2
                    placements: BTreeMap::from([(
                        "AppServer".to_string(),
                        vec!["n2".to_string()],
                    )]),
                },
            ],
        };
        let outcome = plan(
            &fx.views(),
            ViewKind::Performance,
            &required_analysis(),
            &cm,
            &perf_em(0.3),
            &BTreeSet::new(),
        )
        .unwrap();
        let PlanOutcome::Planned(result) = outcome else {
            panic!("expected a plan");
        };
        assert_eq!(result.chosen, "v1");
        assert!(result
            .reviews
            .iter()
            .any(|r| r.candidate == "v0" && r.disposition == Disposition::NoChange));
        assert_eq!(
            result
                .target
                .element(&ElementId::new("as-1"))
                .unwrap()
                .attr("node")
                .unwrap()
                .as_str(),
            Some("n2")
        );
        // migration alone: same running count, no metric rescaling
        assert!((result.predicted_utility - (1.0 - 1.0 / 0.6).clamp(0.0, 1.0)).abs() < 1e-12);

        // a variant adding a second app server scales the prediction
        let cm = ChangeSpec {
            mode: ChangeMode::Explicit,
            rules: vec![],
            variants: vec![VariantDef {
                variant_id: "v2".into(),
                placements: BTreeMap::from([(
                    "AppServer".to_string(),
                    vec!["n1".to_string(), "n2".to_string()],
                )]),
            }],
        };
        let outcome = plan(
            &fx.views(),
            ViewKind::Performance,
            &required_analysis(),
            &cm,
            &perf_em(0.3),
            &BTreeSet::new(),
        )
        .unwrap();
        let PlanOutcome::Planned(result) = outcome else {
            panic!("expected a plan");
        };
        assert!((result.predicted_utility - (1.0 - 0.5 / 0.6)).abs() < 1e-12);
    }

    // ------------------------------------------------------------------
    // propagation
    // ------------------------------------------------------------------

    #[test]
    fn propagation_maps_structure_and_drops_metrics() {
        let fx = Fixture::new(0.5);

        // empty in, empty out
        let empty = ModelDelta::empty(fx.perf.version);
        assert!(propagate_changes(&empty, ViewKind::Performance, &fx.arch)
            .unwrap()
            .is_empty());

        // a planned scale-out carries over structurally
        let cm = implicit_cm(vec![scale_out_rule("r1", "AppServer", "n2")]);
        let PlanOutcome::Planned(result) = plan(
            &fx.views(),
            ViewKind::Performance,
            &required_analysis(),
            &cm,
            &perf_em(0.3),
            &BTreeSet::new(),
        )
        .unwrap() else {
            panic!("expected a plan");
        };
        let arch_delta =
            propagate_changes(&result.delta, ViewKind::Performance, &fx.arch).unwrap();
        let arch2 = patch(&fx.arch, &arch_delta).unwrap();
        let comp = arch2.element(&ElementId::new("appserver-g1")).unwrap();
        assert_eq!(comp.type_name, "Component");
        assert_eq!(comp.attr("node").unwrap().as_str(), Some("n2"));
        assert!(comp.attr("avgResponseTime").is_none(), "metrics must not leak");
        let instances = arch2
            .element(&ElementId::new("AppServer"))
            .unwrap()
            .targets("instances");
        assert_eq!(
            instances,
            &[ElementId::new("appserver-g1"), ElementId::new("as-1")],
            "instance list lands in the architecture's sorted order"
        );

        // metric-only deltas vanish
        let mut tweaked = fx.perf.clone();
        tweaked
            .elements
            .get_mut(&ElementId::new("as-1"))
            .unwrap()
            .attrs
            .insert("avgResponseTime".into(), AttrValue::Real(2.0));
        let metric_delta = diff(&fx.perf, &tweaked).unwrap();
        assert!(!metric_delta.is_empty());
        let propagated =
            propagate_changes(&metric_delta, ViewKind::Performance, &fx.arch).unwrap();
        assert!(propagated.is_empty());

        // structural change on an element the architecture lacks
        let delta = ModelDelta {
            base_version: fx.perf.version,
            changes: vec![Change::SetAttribute {
                id: ElementId::new("ghost"),
                attr: "state".into(),
                old: None,
                new: Some("running".into()),
            }],
        };
        let err = propagate_changes(&delta, ViewKind::Performance, &fx.arch).unwrap_err();
        assert!(matches!(err, AdaptError::UnmappableChange { .. }));
    }

    #[test]
    fn propagated_removal_takes_wires_along() {
        // two app servers wired to the database; removing one must remove
        // its wire from the architecture, not strand it
        let fx = Fixture::new(0.5);
        let mut arch = fx.arch.clone();
        arch.elements.insert(
            ElementId::new("as-2"),
            Element::new("Component")
                .with_attr("name", "as-2")
                .with_attr("type", "AppServer")
                .with_attr("node", "n2")
                .with_attr("state", "running")
                .with_links("ofType", [ElementId::new("AppServer")]),
        );
        arch.elements.insert(
            ElementId::new("c:as-2:db"),
            Element::new("Wire")
                .with_attr("interface", "db")
                .with_links("from", [ElementId::new("as-2")])
                .with_links("to", [ElementId::new("db-1")]),
        );
        arch.elements
            .get_mut(&ElementId::new("AppServer"))
            .unwrap()
            .links
            .get_mut("instances")
            .unwrap()
            .push(ElementId::new("as-2"));
        let mut perf = fx.perf.clone();
        perf.elements.insert(
            ElementId::new("as-2"),
            Element::new("Component")
                .with_attr("name", "as-2")
                .with_attr("type", "AppServer")
                .with_attr("node", "n2")
                .with_attr("state", "running")
                .with_links("ofType", [ElementId::new("AppServer")]),
        );
        perf.elements
            .get_mut(&ElementId::new("AppServer"))
            .unwrap()
            .links
            .get_mut("instances")
            .unwrap()
            .push(ElementId::new("as-2"));

        let mut target = perf.clone();
        target.elements.remove(&ElementId::new("as-2"));
        target
            .elements
            .get_mut(&ElementId::new("AppServer"))
            .unwrap()
            .links
            .get_mut("instances")
            .unwrap()
            .retain(|i| i != &ElementId::new("as-2"));
        let source_delta = diff(&perf, &target).unwrap();

        let arch_delta = propagate_changes(&source_delta, ViewKind::Performance, &arch).unwrap();
        let arch2 = patch(&arch, &arch_delta).unwrap();
        assert!(arch2.element(&ElementId::new("as-2")).is_none());
        assert!(arch2.element(&ElementId::new("c:as-2:db")).is_none());
        assert!(conforms(&arch2, &view_metamodel(ViewKind::Architecture))
            .unwrap()
            .conforms);
    }

    // ------------------------------------------------------------------
    // adaptation analysis
    // ------------------------------------------------------------------

    fn singleton_constraint_model() -> EvaluationSpec {
        EvaluationSpec {
            constraints: vec![ConstraintDef {
                constraint_id: "c-single".into(),
                view: "architecture".into(),
                scope_type: "ComponentType".into(),
                predicate: "self.name != 'AppServer' or count(self.instances) <= 1".into(),
                severity: Severity::Critical,
            }],
            weights: BTreeMap::from([("architecture".to_string(), 1.0)]),
            thresholds: BTreeMap::new(),
        }
    }

    #[test]
    fn adaptation_analysis_accepts_and_rejects() {
        let fx = Fixture::new(1.0);
        let arch_mm = view_metamodel(ViewKind::Architecture);

        // a scale-out propagated onto the architecture violates the
        // singleton cap → rejected, rollback ordered, evidence kept
        let cm = implicit_cm(vec![scale_out_rule("r1", "AppServer", "n2")]);
        let PlanOutcome::Planned(result) = plan(
            &fx.views(),
            ViewKind::Performance,
            &required_analysis(),
            &cm,
            &perf_em(0.3),
            &BTreeSet::new(),
        )
        .unwrap() else {
            panic!("expected a plan");
        };
        let arch_delta =
            propagate_changes(&result.delta, ViewKind::Performance, &fx.arch).unwrap();
        let arch2 = patch(&fx.arch, &arch_delta).unwrap();
        let mut views = fx.views();
        views.insert("architecture", &arch2);
        let report =
            adaptation_analysis(&views, &arch_mm, &singleton_constraint_model(), "p-1", "perf")
                .unwrap();
        assert_eq!(report.verdict, ReportVerdict::Rejected);
        assert_eq!(report.decision, Decision::Rollback);
        assert!(!report.evidence.is_empty());
        assert_eq!(report.evidence[0].constraint_id, "c-single");

        // within bounds → accepted
        let report = adaptation_analysis(
            &fx.views(),
            &arch_mm,
            &singleton_constraint_model(),
            "p-2",
            "perf",
        )
        .unwrap();
        assert_eq!(report.verdict, ReportVerdict::Accepted);
        assert_eq!(report.decision, Decision::Execute);
        assert!(report.evidence.is_empty());

        // warning-severity findings are evidence but no ground for rejection
        let mut warn_em = singleton_constraint_model();
        warn_em.constraints[0].severity = Severity::Warning;
        let mut views = fx.views();
        views.insert("architecture", &arch2);
        let report = adaptation_analysis(&views, &arch_mm, &warn_em, "p-3", "perf").unwrap();
        assert_eq!(report.verdict, ReportVerdict::Accepted);
        assert_eq!(report.decision, Decision::Execute);
        assert!(!report.evidence.is_empty());
    }

    #[test]
    fn broken_conformance_is_critical_evidence() {
        let fx = Fixture::new(0.5);
        let mut broken = fx.arch.clone();
        // wire left dangling: its target is gone
        broken.elements.remove(&ElementId::new("db-1"));
        let mut views = fx.views();
        views.insert("architecture", &broken);
        let report = adaptation_analysis(
            &views,
            &view_metamodel(ViewKind::Architecture),
            &singleton_constraint_model(),
            "p-4",
            "perf",
        )
        .unwrap();
        assert_eq!(report.verdict, ReportVerdict::Rejected);
        assert!(report
            .evidence
            .iter()
            .any(|v| v.constraint_id == "builtin:conformance"));
    }

    // ------------------------------------------------------------------
    // action derivation and execution
    // ------------------------------------------------------------------

    /// Full causal pipeline helper: fold events, then refresh every view.
    struct Loop {
        sys: SimulatedSystem,
        impl_model: TypedModel,
        views: BTreeMap<ViewKind, (TypedModel, CorrespondenceStore)>,
    }

    impl Loop {
        fn new(seed: u64) -> Self {
            let sys = SimulatedSystem::new(&blueprint(), seed, vec![]).unwrap();
            let impl_model = model_from_snapshot(&sys.sense());
            let mut views = BTreeMap::new();
            for kind in ViewKind::ALL {
                let spec = standard_view_spec(kind);
                let mut store = CorrespondenceStore::new();
                let empty = TypedModel::new(spec.view_metamodel.clone());
                let delta = sync_forward(&impl_model, &empty, &spec, &mut store).unwrap();
                let view = patch(&empty, &delta).unwrap();
                views.insert(kind, (view, store));
            }
            Loop { sys, impl_model, views }
        }

        fn absorb(&mut self, events: &[SensorEvent]) {
            let delta = monitor_update(&self.impl_model, events).unwrap();
            self.impl_model = patch(&self.impl_model, &delta).unwrap();
            for kind in ViewKind::ALL {
                let spec = standard_view_spec(kind);
                let (view, store) = self.views.get_mut(&kind).unwrap();
                let delta = sync_forward(&self.impl_model, view, &spec, store).unwrap();
                *view = patch(view, &delta).unwrap();
            }
        }

        fn view(&self, kind: ViewKind) -> &TypedModel {
            &self.views[&kind].0
        }
    }

    #[test]
    fn equal_models_derive_no_actions() {
        let lp = Loop::new(3);
        let empty = ModelDelta::empty(lp.impl_model.version);
        let plan = derive_actions(&lp.impl_model, &empty).unwrap();
        assert!(plan.is_empty());
    }

    #[test]
    fn derived_actions_cover_the_action_table() {
        let mut lp = Loop::new(3);
        let events = lp.sys.advance(5.0);
        lp.absorb(&events);

        // prescriptive architecture: add a server, retarget nothing else
        let spec = standard_view_spec(ViewKind::Architecture);
        let view = lp.view(ViewKind::Architecture).clone();
        let mut desired = view.clone();
        desired.elements.insert(
            ElementId::new("as-2"),
            Element::new("Component")
                .with_attr("name", "as-2")
                .with_attr("type", "AppServer")
                .with_attr("node", "n2")
                .with_attr("state", "running")
                .with_links("ofType", [ElementId::new("AppServer")]),
        );
        let view_delta = diff(&view, &desired).unwrap();
        let mut store = lp.views[&ViewKind::Architecture].1.clone();
        let impl_delta = sync_backward(
            &lp.impl_model,
            &implementation_metamodel(),
            &view,
            &view_delta,
            &spec,
            &mut store,
        )
        .unwrap();
        let plan = derive_actions(&lp.impl_model, &impl_delta).unwrap();
        assert!(plan.quiesce.is_empty());
        assert_eq!(
            plan.actions,
            vec![
                ReconfigurationAction::AddInstance {
                    type_name: "AppServer".into(),
                    node_name: "n2".into(),
                    instance_id: "as-2".into(),
                },
                ReconfigurationAction::Rebind {
                    instance_id: "as-2".into(),
                    interface: "db".into(),
                    target: "db-1".into(),
                },
            ]
        );

        // migration: quiesce first, then move
        let mut desired = view.clone();
        desired
            .elements
            .get_mut(&ElementId::new("as-1"))
            .unwrap()
            .attrs
            .insert("node".into(), "n2".into());
        let view_delta = diff(&view, &desired).unwrap();
        let mut store = lp.views[&ViewKind::Architecture].1.clone();
        let impl_delta = sync_backward(
            &lp.impl_model,
            &implementation_metamodel(),
            &view,
            &view_delta,
            &spec,
            &mut store,
        )
        .unwrap();
        let plan = derive_actions(&lp.impl_model, &impl_delta).unwrap();
        assert_eq!(plan.quiesce, vec!["as-1".to_string()]);
        assert_eq!(plan.await_quiescent, vec!["as-1".to_string()]);
        assert_eq!(
            plan.actions,
            vec![ReconfigurationAction::MigrateInstance {
                instance_id: "as-1".into(),
                node_name: "n2".into(),
            }]
        );

        // unbinding a connector without removing its instance is impossible
        let impl_delta = ModelDelta {
            base_version: lp.impl_model.version,
            changes: vec![Change::RemoveElement {
                id: ElementId::new("c:as-1:db"),
                type_name: "Connector".into(),
                attrs: BTreeMap::new(),
            }],
        };
        let err = derive_actions(&lp.impl_model, &impl_delta).unwrap_err();
        assert!(matches!(err, AdaptError::UnrealizableTarget { .. }));

        // a failed-to-running flip is a restart
        let mut failed_model = lp.impl_model.clone();
        failed_model
            .elements
            .get_mut(&ElementId::new("as-1"))
            .unwrap()
            .attrs
            .insert("state".into(), "failed".into());
        let impl_delta = ModelDelta {
            base_version: failed_model.version,
            changes: vec![Change::SetAttribute {
                id: ElementId::new("as-1"),
                attr: "state".into(),
                old: Some("failed".into()),
                new: Some("running".into()),
            }],
        };
        let plan = derive_actions(&failed_model, &impl_delta).unwrap();
        assert_eq!(
            plan.actions,
            vec![ReconfigurationAction::Restart { instance_id: "as-1".into() }]
        );
    }

    #[test]
    fn executed_proposal_reaches_causal_closure() {
        let mut lp = Loop::new(11);
        let events = lp.sys.advance(12.0);
        lp.absorb(&events);

        // plan a scale-out on the performance view
        let views: BTreeMap<&str, &TypedModel> = ViewKind::ALL
            .iter()
            .map(|k| (k.as_str(), lp.view(*k)))
            .collect();
        let cm = implicit_cm(vec![scale_out_rule("r1", "AppServer", "n2")]);
        let em = perf_em(0.3);
        let PlanOutcome::Planned(result) = plan(
            &views,
            ViewKind::Performance,
            &required_analysis(),
            &cm,
            &em,
            &BTreeSet::new(),
        )
        .unwrap() else {
            panic!("expected a plan");
        };

        // realize it: view delta → implementation delta → actions → system
        let spec = standard_view_spec(ViewKind::Performance);
        let (view, store) = lp.views.get_mut(&ViewKind::Performance).unwrap();
        let impl_delta = sync_backward(
            &lp.impl_model,
            &implementation_metamodel(),
            view,
            &result.delta,
            &spec,
            store,
        )
        .unwrap();
        let action_plan = derive_actions(&lp.impl_model, &impl_delta).unwrap();
        let report = execute_plan(&mut lp.sys, &action_plan, 1.0, 60.0);
        assert_eq!(report.outcome, ExecuteOutcome::Applied);

        // one monitor/sync round closes the loop: the descriptive view
        // matches the prescriptive target except for measurements
        lp.absorb(&report.events);
        let settled = diff(lp.view(ViewKind::Performance), &result.target).unwrap();
        let residue = structural_changes(&settled);
        assert!(
            residue.is_empty(),
            "structural residue after closure: {residue:?}"
        );
    }

    #[test]
    fn quiescence_is_awaited_before_removal() {
        let mut lp = Loop::new(7);
        let events = lp.sys.advance(3.0);
        lp.absorb(&events);

        // grow to two servers first
        let spec = standard_view_spec(ViewKind::Architecture);
        let view = lp.view(ViewKind::Architecture).clone();
        let mut desired = view.clone();
        desired.elements.insert(
            ElementId::new("as-2"),
            Element::new("Component")
                .with_attr("name", "as-2")
                .with_attr("type", "AppServer")
                .with_attr("node", "n2")
                .with_attr("state", "running")
                .with_links("ofType", [ElementId::new("AppServer")]),
        );
        let view_delta = diff(&view, &desired).unwrap();
        let mut store = lp.views[&ViewKind::Architecture].1.clone();
        let impl_delta = sync_backward(
            &lp.impl_model,
            &implementation_metamodel(),
            &view,
            &view_delta,
            &spec,
            &mut store,
        )
        .unwrap();
        let action_plan = derive_actions(&lp.impl_model, &impl_delta).unwrap();
        let report = execute_plan(&mut lp.sys, &action_plan, 1.0, 60.0);
        assert_eq!(report.outcome, ExecuteOutcome::Applied);
        lp.absorb(&report.events);

        // now remove the original server mid-traffic: it must be quiesced
        // and drained before the removal lands
        let view = lp.view(ViewKind::Architecture).clone();
        let mut desired = view.clone();
        desired.elements.remove(&ElementId::new("as-1"));
        desired.elements.remove(&ElementId::new("c:as-1:db"));
        if let Some(t) = desired.elements.get_mut(&ElementId::new("AppServer")) {
            if let Some(list) = t.links.get_mut("instances") {
                list.retain(|i| i != &ElementId::new("as-1"));
            }
        }
        let view_delta = diff(&view, &desired).unwrap();
        let mut store = lp.views[&ViewKind::Architecture].1.clone();
        let impl_delta = sync_backward(
            &lp.impl_model,
            &implementation_metamodel(),
            &view,
            &view_delta,
            &spec,
            &mut store,
        )
        .unwrap();
        let action_plan = derive_actions(&lp.impl_model, &impl_delta).unwrap();
        assert_eq!(action_plan.quiesce, vec!["as-1".to_string()]);
        let report = execute_plan(&mut lp.sys, &action_plan, 1.0, 60.0);
        assert_eq!(report.outcome, ExecuteOutcome::Applied, "waited {}", report.waited);
        lp.absorb(&report.events);
        assert!(lp.impl_model.element(&ElementId::new("as-1")).is_none());

        // zero wait budget forces the timeout path
        let mut lp = Loop::new(7);
        let events = lp.sys.advance(3.0);
        lp.absorb(&events);
        let plan = ActionPlan {
            quiesce: vec!["as-1".into()],
            await_quiescent: vec!["as-1".into()],
            actions: vec![ReconfigurationAction::RemoveInstance { instance_id: "as-1".into() }],
        };
        let report = execute_plan(&mut lp.sys, &plan, 1.0, 0.0);
        assert!(matches!(
            report.outcome,
            ExecuteOutcome::QuiesceTimeout { ref pending } if pending == &vec!["as-1".to_string()]
        ));
    }

    // ------------------------------------------------------------------
    // rollback
    // ------------------------------------------------------------------

    #[test]
    fn rollback_restores_pre_proposal_contents() {
        let fx = Fixture::new(1.0);

        // empty proposal: harmless
        let record = ProposalRecord {
            proposal_id: "p-0".into(),
            manager: "perf".into(),
            source_kind: ViewKind::Performance,
            source_delta: ModelDelta::empty(fx.perf.version),
            arch_delta: ModelDelta::empty(fx.arch.version),
        };
        let (source, arch) = rollback(&record, &fx.perf, &fx.arch).unwrap();
        assert!(deep_equal(&source, &fx.perf));
        assert!(deep_equal(&arch, &fx.arch));
        assert_eq!(source.version, fx.perf.version + 1, "versions advance");

        // rejected scale-out: both models return to their prior contents
        let cm = implicit_cm(vec![scale_out_rule("r1", "AppServer", "n2")]);
        let PlanOutcome::Planned(result) = plan(
            &fx.views(),
            ViewKind::Performance,
            &required_analysis(),
            &cm,
            &perf_em(0.3),
            &BTreeSet::new(),
        )
        .unwrap() else {
            panic!("expected a plan");
        };
        let arch_delta =
            propagate_changes(&result.delta, ViewKind::Performance, &fx.arch).unwrap();
        let perf2 = patch(&fx.perf, &result.delta).unwrap();
        let arch2 = patch(&fx.arch, &arch_delta).unwrap();
        let record = ProposalRecord {
            proposal_id: "p-1".into(),
            manager: "perf".into(),
            source_kind: ViewKind::Performance,
            source_delta: result.delta.clone(),
            arch_delta,
        };
        let (perf3, arch3) = rollback(&record, &perf2, &arch2).unwrap();
        assert!(deep_equal(&perf3, &fx.perf));
        assert!(deep_equal(&arch3, &fx.arch));
    }

    #[test]
    fn twenty_random_proposals_leave_no_residue_when_rejected() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xadab);
        let mut fx = Fixture::new(0.8);
        let em = perf_em(0.3);
        let mut accepted = 0;
        for round in 0..20 {
            let before_perf = fx.perf.clone();
            let before_arch = fx.arch.clone();
            let action: ActionTemplate = match rng.random_range(0..3) {
                0 => ActionTemplate::ScaleOut {
                    component_type: "AppServer".into(),
                    placement: if rng.random_bool(0.5) { "n1".into() } else { "n2".into() },
                },
                1 => ActionTemplate::ScaleOut {
                    component_type: "Database".into(),
                    placement: "leastLoaded".into(),
                },
                _ => ActionTemplate::ScaleIn { component_type: "AppServer".into() },
            };
            let cm = implicit_cm(vec![RuleDef {
                rule_id: format!("r-{round}"),
                event: "always".into(),
                condition: String::new(),
                action,
            }]);
            let outcome = plan(
                &fx.views(),
                ViewKind::Performance,
                &required_analysis(),
                &cm,
                &em,
                &BTreeSet::new(),
            )
            .unwrap();
            let PlanOutcome::Planned(result) = outcome else {
                continue; // e.g. scale-in with one component left is fine to skip
            };
            let arch_delta =
                propagate_changes(&result.delta, ViewKind::Performance, &fx.arch).unwrap();
            fx.perf = patch(&fx.perf, &result.delta).unwrap();
            fx.arch = patch(&fx.arch, &arch_delta).unwrap();
            if rng.random_bool(0.5) {
                accepted += 1;
                continue; // accepted: the new state is the baseline
            }
            let record = ProposalRecord {
                proposal_id: format!("p-{round}"),
                manager: "perf".into(),
                source_kind: ViewKind::Performance,
                source_delta: result.delta.clone(),
                arch_delta,
            };
            let (perf, arch) = rollback(&record, &fx.perf, &fx.arch).unwrap();
            fx.perf = perf;
            fx.arch = arch;
            assert!(deep_equal(&fx.perf, &before_perf), "round {round} left residue");
            assert!(deep_equal(&fx.arch, &before_arch), "round {round} left residue");
        }
        assert!(accepted > 0, "the coin must land on accept sometimes");
    }

    #[test]
    fn interleaved_writes_make_rollback_stale() {
        let fx = Fixture::new(1.0);
        let cm = implicit_cm(vec![scale_out_rule("r1", "AppServer", "n2")]);
        let PlanOutcome::Planned(result) = plan(
            &fx.views(),
            ViewKind::Performance,
            &required_analysis(),
            &cm,
            &perf_em(0.3),
            &BTreeSet::new(),
        )
        .unwrap() else {
            panic!("expected a plan");
        };
        let mut perf2 = patch(&fx.perf, &result.delta).unwrap();
        // a foreign write sneaks in: the new component's state flips
        perf2
            .elements
            .get_mut(&ElementId::new("appserver-g1"))
            .unwrap()
            .attrs
            .insert("state".into(), "stopped".into());
        let record = ProposalRecord {
            proposal_id: "p-1".into(),
            manager: "perf".into(),
            source_kind: ViewKind::Performance,
            source_delta: result.delta.clone(),
            arch_delta: ModelDelta::empty(fx.arch.version),
        };
        let err = rollback(&record, &perf2, &fx.arch).unwrap_err();
        assert!(matches!(err, AdaptError::Delta(DeltaError::StaleDelta { .. })));
    }

    // ------------------------------------------------------------------
    // escalation
    // ------------------------------------------------------------------

    #[test]
    fn escalation_walks_the_stack_and_runs_out() {
        let em1 = perf_em(0.3).to_model();
        let cm1 = implicit_cm(vec![scale_out_rule("r1", "AppServer", "n2")]).to_model();

        // a single level has nowhere to go
        let mut stack = ManagerStack::new(vec![ManagerLevel {
            manager_id: "perf".into(),
            evaluation: em1.clone(),
            change: cm1.clone(),
        }])
        .unwrap();
        assert!(matches!(stack.escalate(), Err(AdaptError::NoHigherLevel)));

        // two levels: escalation surfaces the replacement models
        let em2 = perf_em(0.3).to_model();
        let cm2 = ChangeSpec {
            mode: ChangeMode::Explicit,
            rules: vec![],
            variants: vec![VariantDef {
                variant_id: "v1".into(),
                placements: BTreeMap::from([("AppServer".to_string(), vec!["n2".to_string()])]),
            }],
        }
        .to_model();
        let mut stack = ManagerStack::new(vec![
            ManagerLevel {
                manager_id: "perf".into(),
                evaluation: em1,
                change: cm1,
            },
            ManagerLevel {
                manager_id: "perf-strategic".into(),
                evaluation: em2.clone(),
                change: cm2.clone(),
            },
        ])
        .unwrap();
        assert_eq!(stack.active_index(), 0);
        let next = stack.escalate().unwrap();
        assert_eq!(next.manager_id, "perf-strategic");
        assert!(deep_equal(&next.change, &cm2));
        assert_eq!(stack.active_index(), 1);
        assert!(matches!(stack.escalate(), Err(AdaptError::NoHigherLevel)));

        ManagerStack::new(vec![]).unwrap_err();
    }

    /// The escalation story end to end at the model level: the first-level
    /// planner is boxed in by a singleton cap, the second level swaps in an
    /// explicit variant that migrates instead of scaling, and planning with
    /// the new models succeeds.
    #[test]
    fn escalated_models_unblock_the_planner() {
        let fx = Fixture::new(1.0);
        let mut em1 = perf_em(0.3);
        em1.constraints.push(ConstraintDef {
            constraint_id: "c-single".into(),
            view: "performance".into(),
            scope_type: "ComponentType".into(),
            predicate: "self.name != 'AppServer' or count(self.instances) <= 1".into(),
            severity: Severity::Critical,
        });
        let cm1 = implicit_cm(vec![scale_out_rule("r1", "AppServer", "leastLoaded")]);
        let outcome = plan(
            &fx.views(),
            ViewKind::Performance,
            &required_analysis(),
            &cm1,
            &em1,
            &BTreeSet::new(),
        )
        .unwrap();
        assert!(matches!(outcome, PlanOutcome::Infeasible { .. }));

        let mut stack = ManagerStack::new(vec![
            ManagerLevel {
                manager_id: "perf".into(),
                evaluation: em1.to_model(),
                change: cm1.to_model(),
            },
            ManagerLevel {
                manager_id: "perf-strategic".into(),
                evaluation: perf_em(0.3).to_model(),
                change: ChangeSpec {
                    mode: ChangeMode::Explicit,
                    rules: vec![],
                    variants: vec![VariantDef {
                        variant_id: "v1".into(),
                        placements: BTreeMap::from([(
                            "AppServer".to_string(),
                            vec!["n2".to_string()],
                        )]),
                    }],
                }
                .to_model(),
            },
        ])
        .unwrap();
        let level = stack.escalate().unwrap();
        let em2 = parse_evaluation(&level.evaluation).unwrap();
        let cm2 = parse_change(&level.change).unwrap();
        let outcome = plan(
            &fx.views(),
            ViewKind::Performance,
            &required_analysis(),
            &cm2,
            &em2,
            &BTreeSet::new(),
        )
        .unwrap();
        let PlanOutcome::Planned(result) = outcome else {
            panic!("the escalated models must unblock the planner");
        };
        assert_eq!(result.chosen, "v1");
        assert_eq!(
            result
                .target
                .element(&ElementId::new("as-1"))
                .unwrap()
                .attr("node")
                .unwrap()
                .as_str(),
            Some("n2")
        );
    }
}
