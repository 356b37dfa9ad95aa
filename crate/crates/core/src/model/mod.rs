//! Typed models, metamodels and conformance checking.
//!
//! A [`TypedModel`] is an attributed element graph: elements carry scalar
//! attributes and ordered, named links to other elements. Every model names
//! the [`Metamodel`] it is supposed to conform to; [`conforms`] checks the
//! structural rules and reports every violation instead of failing fast.
//!
//! Models are plain values. All operations here are functional: they return
//! new values and never mutate their inputs, so models can be shared freely
//! across the engine.

mod delta;

pub use delta::{diff, invert, patch, Change, DeltaError, ModelDelta};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Stable identifier of a model element. Identity is by id only; the engine
/// never matches elements structurally.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ElementId(pub String);

impl ElementId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ElementId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

impl From<String> for ElementId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

/// Scalar attribute value. Enumeration values are carried as strings and
/// checked against the declared literals during conformance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Bool(bool),
    Int(i64),
    Real(f64),
    Str(String),
}

impl AttrValue {
    /// Numeric view: integers widen to f64, everything else is `None`.
    pub fn as_num(&self) -> Option<f64> {
        match self {
            AttrValue::Int(i) => Some(*i as f64),
            AttrValue::Real(r) => Some(*r),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            AttrValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            AttrValue::Bool(b) => Some(*b),
            _ => None,
        }
    }
}

impl From<&str> for AttrValue {
    fn from(s: &str) -> Self {
        AttrValue::Str(s.to_string())
    }
}

impl From<String> for AttrValue {
    fn from(s: String) -> Self {
        AttrValue::Str(s)
    }
}

impl From<i64> for AttrValue {
    fn from(i: i64) -> Self {
        AttrValue::Int(i)
    }
}

impl From<f64> for AttrValue {
    fn from(r: f64) -> Self {
        AttrValue::Real(r)
    }
}

impl From<bool> for AttrValue {
    fn from(b: bool) -> Self {
        AttrValue::Bool(b)
    }
}

impl fmt::Display for AttrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrValue::Bool(b) => write!(f, "{b}"),
            AttrValue::Int(i) => write!(f, "{i}"),
            AttrValue::Real(r) => write!(f, "{r}"),
            AttrValue::Str(s) => write!(f, "{s}"),
        }
    }
}

/// Kind of a declared attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttrKind {
    String,
    Integer,
    Real,
    Boolean,
    Enum(Vec<String>),
}

impl AttrKind {
    /// Whether `value` is acceptable for this kind. Integers are accepted
    /// where reals are declared; JSON sources routinely write `1` for `1.0`.
    pub fn accepts(&self, value: &AttrValue) -> bool {
        match (self, value) {
            (AttrKind::String, AttrValue::Str(_)) => true,
            (AttrKind::Integer, AttrValue::Int(_)) => true,
            (AttrKind::Real, AttrValue::Real(_) | AttrValue::Int(_)) => true,
            (AttrKind::Boolean, AttrValue::Bool(_)) => true,
            (AttrKind::Enum(literals), AttrValue::Str(s)) => literals.iter().any(|l| l == s),
            _ => false,
        }
    }
}

/// Declared attribute of an element type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttrDecl {
    pub name: String,
    pub kind: AttrKind,
    #[serde(default)]
    pub optional: bool,
}

/// Upper multiplicity bound of a reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpperBound {
    Finite(u32),
    Unbounded,
}

impl UpperBound {
    pub fn admits(&self, count: usize) -> bool {
        match self {
            UpperBound::Finite(n) => count <= *n as usize,
            UpperBound::Unbounded => true,
        }
    }
}

impl fmt::Display for UpperBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UpperBound::Finite(n) => write!(f, "{n}"),
            UpperBound::Unbounded => f.write_str("unbounded"),
        }
    }
}

impl Serialize for UpperBound {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            UpperBound::Finite(n) => s.serialize_u32(*n),
            UpperBound::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

impl<'de> Deserialize<'de> for UpperBound {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u32),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(UpperBound::Finite(n)),
            Raw::S(s) if s == "unbounded" => Ok(UpperBound::Unbounded),
            Raw::S(s) => Err(serde::de::Error::custom(format!(
                "expected a number or \"unbounded\", got \"{s}\""
            ))),
        }
    }
}

/// Declared reference of an element type. Links instantiating a containment
/// reference must form a forest over the whole model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefDecl {
    pub name: String,
    pub target: String,
    #[serde(rename = "lowerBound")]
    pub lower_bound: u32,
    #[serde(rename = "upperBound")]
    pub upper_bound: UpperBound,
    #[serde(default)]
    pub containment: bool,
}

/// Declared element type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementTypeDecl {
    pub name: String,
    #[serde(default)]
    pub attributes: Vec<AttrDecl>,
    #[serde(default)]
    pub references: Vec<RefDecl>,
}

/// A metamodel: the set of element types a model may instantiate. Metamodels
/// are data, loaded from files, so the registry can hold arbitrarily many
/// model kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metamodel {
    pub name: String,
    #[serde(rename = "elementTypes")]
    pub element_types: Vec<ElementTypeDecl>,
}

impl Metamodel {
    pub fn element_type(&self, name: &str) -> Option<&ElementTypeDecl> {
        self.element_types.iter().find(|t| t.name == name)
    }

    /// Internal consistency of the metamodel itself: unique type names,
    /// resolvable reference targets, sane bounds.
    pub fn check(&self) -> Result<(), ModelError> {
        let mut seen = BTreeSet::new();
        for ty in &self.element_types {
            if !seen.insert(&ty.name) {
                return Err(ModelError::InvalidMetamodel {
                    metamodel: self.name.clone(),
                    reason: format!("duplicate element type `{}`", ty.name),
                });
            }
            let mut attr_names = BTreeSet::new();
            for attr in &ty.attributes {
                if !attr_names.insert(&attr.name) {
                    return Err(ModelError::InvalidMetamodel {
                        metamodel: self.name.clone(),
                        reason: format!("duplicate attribute `{}.{}`", ty.name, attr.name),
                    });
                }
            }
            let mut ref_names = BTreeSet::new();
            for r in &ty.references {
                if !ref_names.insert(&r.name) {
                    return Err(ModelError::InvalidMetamodel {
                        metamodel: self.name.clone(),
                        reason: format!("duplicate reference `{}.{}`", ty.name, r.name),
                    });
                }
                if let UpperBound::Finite(u) = r.upper_bound {
                    if r.lower_bound > u {
                        return Err(ModelError::InvalidMetamodel {
                            metamodel: self.name.clone(),
                            reason: format!(
                                "reference `{}.{}` has lowerBound {} > upperBound {}",
                                ty.name, r.name, r.lower_bound, u
                            ),
                        });
                    }
                }
            }
        }
        for ty in &self.element_types {
            for r in &ty.references {
                if self.element_type(&r.target).is_none() {
                    return Err(ModelError::InvalidMetamodel {
                        metamodel: self.name.clone(),
                        reason: format!(
                            "reference `{}.{}` targets undeclared type `{}`",
                            ty.name, r.name, r.target
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

/// One element of a typed model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Element {
    #[serde(rename = "type")]
    pub type_name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attrs: BTreeMap<String, AttrValue>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub links: BTreeMap<String, Vec<ElementId>>,
}

impl Element {
    pub fn new(type_name: impl Into<String>) -> Self {
        Self {
            type_name: type_name.into(),
            attrs: BTreeMap::new(),
            links: BTreeMap::new(),
        }
    }

    pub fn with_attr(mut self, name: impl Into<String>, value: impl Into<AttrValue>) -> Self {
        self.attrs.insert(name.into(), value.into());
        self
    }

    pub fn with_links<I>(mut self, ref_name: impl Into<String>, targets: I) -> Self
    where
        I: IntoIterator,
        I::Item: Into<ElementId>,
    {
        self.links
            .insert(ref_name.into(), targets.into_iter().map(Into::into).collect());
        self
    }

    pub fn attr(&self, name: &str) -> Option<&AttrValue> {
        self.attrs.get(name)
    }

    pub fn targets(&self, ref_name: &str) -> &[ElementId] {
        self.links.get(ref_name).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// A model conforming (or meant to conform) to a named metamodel.
///
/// `version` is a monotonic counter bumped by [`patch`]; it identifies model
/// states in execution traces and correspondence bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypedModel {
    #[serde(rename = "metamodel")]
    pub metamodel_name: String,
    pub version: u64,
    #[serde(default)]
    pub elements: BTreeMap<ElementId, Element>,
}

impl TypedModel {
    pub fn new(metamodel_name: impl Into<String>) -> Self {
        Self {
            metamodel_name: metamodel_name.into(),
            version: 1,
            elements: BTreeMap::new(),
        }
    }

    pub fn with_element(mut self, id: impl Into<ElementId>, element: Element) -> Self {
        self.elements.insert(id.into(), element);
        self
    }

    pub fn element(&self, id: &ElementId) -> Option<&Element> {
        self.elements.get(id)
    }

    /// Ids of all elements of the given type, in id order.
    pub fn elements_of_type<'a>(&'a self, type_name: &'a str) -> impl Iterator<Item = (&'a ElementId, &'a Element)> {
        self.elements
            .iter()
            .filter(move |(_, e)| e.type_name == type_name)
    }

    /// Ids of elements that link to `target` through `ref_name`, in id order.
    pub fn sources_via<'a>(
        &'a self,
        ref_name: &'a str,
        target: &'a ElementId,
    ) -> impl Iterator<Item = (&'a ElementId, &'a Element)> {
        self.elements
            .iter()
            .filter(move |(_, e)| e.targets(ref_name).contains(target))
    }

    /// True when any element links to `target` through any reference.
    pub fn is_link_target(&self, target: &ElementId) -> bool {
        self.elements
            .values()
            .any(|e| e.links.values().any(|l| l.contains(target)))
    }

    /// Structural deep equality, ignoring the version counter.
    pub fn same_content(&self, other: &TypedModel) -> bool {
        self.metamodel_name == other.metamodel_name && self.elements == other.elements
    }
}

/// Structural rule violated by a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum RuleKind {
    UnknownType,
    UnknownAttribute,
    MissingMandatoryAttribute,
    MultiplicityViolation,
    DanglingLink,
    ContainmentCycle,
}

/// One conformance violation, located at an element or at model scope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Element the violation is anchored to; `None` for model-scope findings.
    pub element: Option<ElementId>,
    pub rule: RuleKind,
    pub message: String,
}

/// Outcome of a conformance check; `conforms` is true iff no violations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformanceReport {
    pub conforms: bool,
    pub violations: Vec<Violation>,
}

impl ConformanceReport {
    fn from_violations(violations: Vec<Violation>) -> Self {
        Self {
            conforms: violations.is_empty(),
            violations,
        }
    }
}

/// Errors raised by model-level operations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("model is typed by `{model}` but metamodel is `{metamodel}`")]
    MetamodelMismatch { model: String, metamodel: String },
    #[error("invalid metamodel `{metamodel}`: {reason}")]
    InvalidMetamodel { metamodel: String, reason: String },
}

/// Check `model` against `mm`, reporting every violated structural rule.
pub fn conforms(model: &TypedModel, mm: &Metamodel) -> Result<ConformanceReport, ModelError> {
    if model.metamodel_name != mm.name {
        return Err(ModelError::MetamodelMismatch {
            model: model.metamodel_name.clone(),
            metamodel: mm.name.clone(),
        });
    }
    let mut violations = Vec::new();

    for (id, element) in &model.elements {
        let Some(decl) = mm.element_type(&element.type_name) else {
            violations.push(Violation {
                element: Some(id.clone()),
                rule: RuleKind::UnknownType,
                message: format!("element `{id}` has undeclared type `{}`", element.type_name),
            });
            continue;
        };

        for (attr_name, value) in &element.attrs {
            match decl.attributes.iter().find(|a| &a.name == attr_name) {
                None => violations.push(Violation {
                    element: Some(id.clone()),
                    rule: RuleKind::UnknownAttribute,
                    message: format!(
                        "element `{id}` sets undeclared attribute `{}.{attr_name}`",
                        element.type_name
                    ),
                }),
                Some(attr_decl) if !attr_decl.kind.accepts(value) => {
                    violations.push(Violation {
                        element: Some(id.clone()),
                        rule: RuleKind::UnknownAttribute,
                        message: format!(
                            "element `{id}` attribute `{attr_name}` value `{value}` does not match declared kind"
                        ),
                    });
                }
                _ => {}
            }
        }
        for attr_decl in &decl.attributes {
            if !attr_decl.optional && !element.attrs.contains_key(&attr_decl.name) {
                violations.push(Violation {
                    element: Some(id.clone()),
                    rule: RuleKind::MissingMandatoryAttribute,
                    message: format!(
                        "element `{id}` misses mandatory attribute `{}.{}`",
                        element.type_name, attr_decl.name
                    ),
                });
            }
        }

        for (ref_name, targets) in &element.links {
            let Some(ref_decl) = decl.references.iter().find(|r| &r.name == ref_name) else {
                violations.push(Violation {
                    element: Some(id.clone()),
                    rule: RuleKind::UnknownAttribute,
                    message: format!(
                        "element `{id}` links through undeclared reference `{}.{ref_name}`",
                        element.type_name
                    ),
                });
                continue;
            };
            for target in targets {
                match model.elements.get(target) {
                    None => violations.push(Violation {
                        element: Some(id.clone()),
                        rule: RuleKind::DanglingLink,
                        message: format!("link `{id}.{ref_name}` targets missing element `{target}`"),
                    }),
                    Some(t) if t.type_name != ref_decl.target => violations.push(Violation {
                        element: Some(id.clone()),
                        rule: RuleKind::DanglingLink,
                        message: format!(
                            "link `{id}.{ref_name}` targets `{target}` of type `{}`, expected `{}`",
                            t.type_name, ref_decl.target
                        ),
                    }),
                    _ => {}
                }
            }
        }
        for ref_decl in &decl.references {
            let count = element.targets(&ref_decl.name).len();
            if count < ref_decl.lower_bound as usize || !ref_decl.upper_bound.admits(count) {
                violations.push(Violation {
                    element: Some(id.clone()),
                    rule: RuleKind::MultiplicityViolation,
                    message: format!(
                        "reference `{id}.{}` has {count} targets, bounds are {}..{}",
                        ref_decl.name, ref_decl.lower_bound, ref_decl.upper_bound
                    ),
                });
            }
        }
    }

    violations.extend(containment_violations(model, mm));
    Ok(ConformanceReport::from_violations(violations))
}

/// Containment links must form a forest: at most one container per element
/// and no cycles through containment references.
fn containment_violations(model: &TypedModel, mm: &Metamodel) -> Vec<Violation> {
    let mut violations = Vec::new();
    // container map: child -> parent, via containment references only
    let mut parent: BTreeMap<&ElementId, &ElementId> = BTreeMap::new();
    for (id, element) in &model.elements {
        let Some(decl) = mm.element_type(&element.type_name) else {
            continue;
        };
        for ref_decl in decl.references.iter().filter(|r| r.containment) {
            for target in element.targets(&ref_decl.name) {
                if !model.elements.contains_key(target) {
                    continue; // reported as danglingLink already
                }
                if let Some(previous) = parent.insert(target, id) {
                    violations.push(Violation {
                        element: Some(target.clone()),
                        rule: RuleKind::ContainmentCycle,
                        message: format!(
                            "element `{target}` is contained by both `{previous}` and `{id}`"
                        ),
                    });
                }
            }
        }
    }
    // cycle detection by walking parent chains
    for start in parent.keys() {
        let mut slow = *start;
        let mut hops = 0usize;
        let mut cur = *start;
        while let Some(next) = parent.get(cur) {
            cur = next;
            hops += 1;
            if hops.is_multiple_of(2) {
                slow = parent[slow];
            }
            if cur == slow && hops > 0 && parent.contains_key(cur) {
                // report once, anchored at the smallest id on the cycle
                let mut cycle = vec![cur];
                let mut walker = parent[cur];
                while walker != cur {
                    cycle.push(walker);
                    walker = parent[walker];
                }
                let anchor = (*cycle.iter().min().unwrap()).clone();
                if !violations
                    .iter()
                    .any(|v| v.rule == RuleKind::ContainmentCycle && v.element.as_ref() == Some(&anchor) && v.message.contains("cycle"))
                {
                    violations.push(Violation {
                        element: Some(anchor.clone()),
                        rule: RuleKind::ContainmentCycle,
                        message: format!("containment cycle through `{anchor}`"),
                    });
                }
                break;
            }
        }
    }
    violations
}
