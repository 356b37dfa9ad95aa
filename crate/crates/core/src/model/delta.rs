//! Invertible model deltas: diff, patch, invert.
//!
//! A [`ModelDelta`] is an ordered list of primitive changes. Every primitive
//! carries the prior state it destroys (removed attributes, old values, link
//! indices), so a delta can always be inverted without consulting the model
//! it came from. Rollback anywhere in the engine is "apply the inverse".
//!
//! `diff` matches elements by id only and emits changes in a fixed phase
//! order — link removals, element removals, element additions, attribute
//! updates, link additions — so the delta never references a missing element
//! when applied in order, and inversion (which replays the phases backwards)
//! enjoys the same guarantee.
//!
//! Link lists are kept canonical: an empty list is represented by the absence
//! of the reference key. `patch` maintains this; models built by hand should
//! not store empty lists if they are to round-trip through diff exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AttrValue, Element, ElementId, TypedModel};

/// One primitive, invertible model change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "camelCase")]
pub enum Change {
    #[serde(rename_all = "camelCase")]
    AddElement {
        id: ElementId,
        type_name: String,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        attrs: BTreeMap<String, AttrValue>,
    },
    /// Removes an element that currently has no outgoing links (links are
    /// detached by preceding `RemoveLink` changes). Captures type and
    /// attributes so the change can be inverted.
    #[serde(rename_all = "camelCase")]
    RemoveElement {
        id: ElementId,
        type_name: String,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        attrs: BTreeMap<String, AttrValue>,
    },
    /// Sets, adds (`old = None`) or removes (`new = None`) one attribute.
    #[serde(rename_all = "camelCase")]
    SetAttribute {
        id: ElementId,
        attr: String,
        old: Option<AttrValue>,
        new: Option<AttrValue>,
    },
    /// Inserts `target` at `index` of the link list for `ref_name`.
    #[serde(rename_all = "camelCase")]
    AddLink {
        id: ElementId,
        ref_name: String,
        target: ElementId,
        index: usize,
    },
    /// Removes the link at `index`, which must currently be `target`.
    #[serde(rename_all = "camelCase")]
    RemoveLink {
        id: ElementId,
        ref_name: String,
        target: ElementId,
        index: usize,
    },
}

impl Change {
    /// The id of the element this change touches.
    pub fn subject(&self) -> &ElementId {
        match self {
            Change::AddElement { id, .. }
            | Change::RemoveElement { id, .. }
            | Change::SetAttribute { id, .. }
            | Change::AddLink { id, .. }
            | Change::RemoveLink { id, .. } => id,
        }
    }

    fn inverted(&self) -> Change {
        match self.clone() {
            Change::AddElement { id, type_name, attrs } => {
                Change::RemoveElement { id, type_name, attrs }
            }
            Change::RemoveElement { id, type_name, attrs } => {
                Change::AddElement { id, type_name, attrs }
            }
            Change::SetAttribute { id, attr, old, new } => Change::SetAttribute {
                id,
                attr,
                old: new,
                new: old,
            },
            Change::AddLink { id, ref_name, target, index } => {
                Change::RemoveLink { id, ref_name, target, index }
            }
            Change::RemoveLink { id, ref_name, target, index } => {
                Change::AddLink { id, ref_name, target, index }
            }
        }
    }
}

/// Ordered, invertible list of changes against a model at `base_version`.
///
/// `base_version` is provenance, not a lock: `patch` applies a delta to any
/// model whose state matches change-by-change. Rollbacks rely on this —
/// inverses are applied to models whose version has moved on.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelDelta {
    #[serde(rename = "baseVersion")]
    pub base_version: u64,
    pub changes: Vec<Change>,
}

impl ModelDelta {
    pub fn empty(base_version: u64) -> Self {
        Self {
            base_version,
            changes: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.changes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.changes.len()
    }

    /// Compact human-readable summary for traces, e.g. `+2 -1 ~3 links+1`.
    pub fn summary(&self) -> String {
        let mut added = 0;
        let mut removed = 0;
        let mut set = 0;
        let mut linked = 0;
        let mut unlinked = 0;
        for c in &self.changes {
            match c {
                Change::AddElement { .. } => added += 1,
                Change::RemoveElement { .. } => removed += 1,
                Change::SetAttribute { .. } => set += 1,
                Change::AddLink { .. } => linked += 1,
                Change::RemoveLink { .. } => unlinked += 1,
            }
        }
        format!("+{added} -{removed} ~{set} links+{linked}/-{unlinked}")
    }
}

/// Errors from applying or computing deltas.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DeltaError {
    #[error("models are typed by different metamodels: `{base}` vs `{target}`")]
    MetamodelMismatch { base: String, target: String },
    /// The model has moved past the state the delta was computed against.
    #[error("stale delta at change {index}: {reason}")]
    StaleDelta { index: usize, reason: String },
    /// The change cannot be applied regardless of staleness (missing element,
    /// out-of-range index, duplicate id).
    #[error("inapplicable change at index {index}: {reason}")]
    InapplicableChange { index: usize, reason: String },
}

/// Compute the delta transforming `base` into `target`, matching by id.
///
/// An element present on both sides but with a different type is treated as
/// removed and re-added: identity does not survive a retype.
pub fn diff(base: &TypedModel, target: &TypedModel) -> Result<ModelDelta, DeltaError> {
    if base.metamodel_name != target.metamodel_name {
        return Err(DeltaError::MetamodelMismatch {
            base: base.metamodel_name.clone(),
            target: target.metamodel_name.clone(),
        });
    }
    let kept = |id: &ElementId| -> bool {
        matches!(
            (base.elements.get(id), target.elements.get(id)),
            (Some(o), Some(n)) if o.type_name == n.type_name
        )
    };
    let mut changes = Vec::new();

    // Phase 1: link removals. Elements leaving the model (including retypes)
    // lose all outgoing links; kept elements whose link list changed get the
    // old list cleared (full rewrite per reference keeps inversion
    // unambiguous).
    for (id, old_el) in &base.elements {
        for (ref_name, old_targets) in &old_el.links {
            if kept(id)
                && target.elements[id].targets(ref_name) == old_targets.as_slice()
            {
                continue;
            }
            for (index, t) in old_targets.iter().enumerate().rev() {
                changes.push(Change::RemoveLink {
                    id: id.clone(),
                    ref_name: ref_name.clone(),
                    target: t.clone(),
                    index,
                });
            }
        }
    }

    // Phase 2: element removals (now link-free), with captured state.
    for (id, old_el) in &base.elements {
        if !kept(id) {
            changes.push(Change::RemoveElement {
                id: id.clone(),
                type_name: old_el.type_name.clone(),
                attrs: old_el.attrs.clone(),
            });
        }
    }

    // Phase 3: element additions, attributes included, links deferred.
    for (id, new_el) in &target.elements {
        if !kept(id) {
            changes.push(Change::AddElement {
                id: id.clone(),
                type_name: new_el.type_name.clone(),
                attrs: new_el.attrs.clone(),
            });
        }
    }

    // Phase 4: attribute updates on kept elements.
    for (id, old_el) in &base.elements {
        if !kept(id) {
            continue;
        }
        let new_el = &target.elements[id];
        for (attr, old_value) in &old_el.attrs {
            match new_el.attrs.get(attr) {
                Some(new_value) if new_value != old_value => {
                    changes.push(Change::SetAttribute {
                        id: id.clone(),
                        attr: attr.clone(),
                        old: Some(old_value.clone()),
                        new: Some(new_value.clone()),
                    });
                }
                None => changes.push(Change::SetAttribute {
                    id: id.clone(),
                    attr: attr.clone(),
                    old: Some(old_value.clone()),
                    new: None,
                }),
                _ => {}
            }
        }
        for (attr, new_value) in &new_el.attrs {
            if !old_el.attrs.contains_key(attr) {
                changes.push(Change::SetAttribute {
                    id: id.clone(),
                    attr: attr.clone(),
                    old: None,
                    new: Some(new_value.clone()),
                });
            }
        }
    }

    // Phase 5: link additions — changed lists on kept elements and all lists
    // of entering elements; every target now exists.
    for (id, new_el) in &target.elements {
        for (ref_name, new_targets) in &new_el.links {
            if kept(id)
                && base.elements[id].targets(ref_name) == new_targets.as_slice()
            {
                continue;
            }
            for (index, t) in new_targets.iter().enumerate() {
                changes.push(Change::AddLink {
                    id: id.clone(),
                    ref_name: ref_name.clone(),
                    target: t.clone(),
                    index,
                });
            }
        }
    }

    Ok(ModelDelta {
        base_version: base.version,
        changes,
    })
}

/// Apply `delta` to `model`, returning the updated model with `version + 1`.
/// The input is untouched; on error nothing is returned.
pub fn patch(model: &TypedModel, delta: &ModelDelta) -> Result<TypedModel, DeltaError> {
    let mut out = model.clone();
    for (index, change) in delta.changes.iter().enumerate() {
        apply_change(&mut out, change, index)?;
    }
    out.version += 1;
    Ok(out)
}

fn apply_change(model: &mut TypedModel, change: &Change, index: usize) -> Result<(), DeltaError> {
    let stale = |reason: String| DeltaError::StaleDelta { index, reason };
    let inapplicable = |reason: String| DeltaError::InapplicableChange { index, reason };

    match change {
        Change::AddElement { id, type_name, attrs } => {
            if model.elements.contains_key(id) {
                return Err(inapplicable(format!("element `{id}` already exists")));
            }
            model.elements.insert(
                id.clone(),
                Element {
                    type_name: type_name.clone(),
                    attrs: attrs.clone(),
                    links: BTreeMap::new(),
                },
            );
        }
        Change::RemoveElement { id, type_name, attrs } => {
            let Some(el) = model.elements.get(id) else {
                return Err(inapplicable(format!("element `{id}` does not exist")));
            };
            if !el.links.is_empty() {
                return Err(inapplicable(format!(
                    "element `{id}` still has outgoing links"
                )));
            }
            if &el.type_name != type_name || &el.attrs != attrs {
                return Err(stale(format!(
                    "element `{id}` state differs from the captured prior state"
                )));
            }
            model.elements.remove(id);
        }
        Change::SetAttribute { id, attr, old, new } => {
            let Some(el) = model.elements.get_mut(id) else {
                return Err(inapplicable(format!("element `{id}` does not exist")));
            };
            if el.attrs.get(attr) != old.as_ref() {
                return Err(stale(format!(
                    "attribute `{id}.{attr}` does not hold the expected old value"
                )));
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
        Change::AddLink { id, ref_name, target, index: at } => {
            let Some(el) = model.elements.get_mut(id) else {
                return Err(inapplicable(format!("element `{id}` does not exist")));
            };
            let list = el.links.entry(ref_name.clone()).or_default();
            if *at > list.len() {
                return Err(inapplicable(format!(
                    "link index {at} out of range for `{id}.{ref_name}` (len {})",
                    list.len()
                )));
            }
            list.insert(*at, target.clone());
        }
        Change::RemoveLink { id, ref_name, target, index: at } => {
            let Some(el) = model.elements.get_mut(id) else {
                return Err(inapplicable(format!("element `{id}` does not exist")));
            };
            let Some(list) = el.links.get_mut(ref_name) else {
                return Err(stale(format!("`{id}.{ref_name}` has no links")));
            };
            if *at >= list.len() || &list[*at] != target {
                return Err(stale(format!(
                    "`{id}.{ref_name}`[{at}] is not `{target}`"
                )));
            }
            list.remove(*at);
            if list.is_empty() {
                el.links.remove(ref_name);
            }
        }
    }
    Ok(())
}

/// The inverse delta: changes reversed, each primitive flipped.
pub fn invert(delta: &ModelDelta) -> ModelDelta {
    ModelDelta {
        base_version: delta.base_version,
        changes: delta.changes.iter().rev().map(Change::inverted).collect(),
    }
}
