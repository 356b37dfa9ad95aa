//! Deterministic generators and independent oracles shared by the unit and
//! acceptance test suites. Everything here is seeded by the caller; no global
//! randomness, so failures replay exactly.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::model::{AttrValue, Element, ElementId, TypedModel};

const TYPES: [&str; 3] = ["T0", "T1", "T2"];
const ATTRS: [&str; 3] = ["a0", "a1", "a2"];
const REFS: [&str; 2] = ["r0", "r1"];

fn random_value(rng: &mut impl Rng) -> AttrValue {
    match rng.random_range(0..4) {
        0 => AttrValue::Bool(rng.random()),
        1 => AttrValue::Int(rng.random_range(-100..100)),
        2 => AttrValue::Real((rng.random_range(-1000..1000) as f64) / 8.0),
        _ => AttrValue::Str(format!("s{}", rng.random_range(0..16))),
    }
}

/// A small random model (≤ 10 elements) over a fixed vocabulary of types,
/// attributes and references. Links target existing elements only and link
/// lists are never stored empty.
pub fn random_model(rng: &mut impl Rng) -> TypedModel {
    let mut model = TypedModel::new("gen");
    let count = rng.random_range(0..=10);
    let ids: Vec<ElementId> = (0..count).map(|i| ElementId::new(format!("e{i}"))).collect();
    for id in &ids {
        let mut el = Element::new(*TYPES.choose(rng).unwrap());
        for attr in ATTRS {
            if rng.random_bool(0.5) {
                el.attrs.insert(attr.to_string(), random_value(rng));
            }
        }
        model.elements.insert(id.clone(), el);
    }
    // links in a second pass so every target exists
    let all: Vec<ElementId> = model.elements.keys().cloned().collect();
    if !all.is_empty() {
        for id in &all {
            for r in REFS {
                let n = rng.random_range(0..=3);
                let targets: Vec<ElementId> =
                    (0..n).map(|_| all.choose(rng).unwrap().clone()).collect();
                if !targets.is_empty() {
                    model.elements.get_mut(id).unwrap().links.insert(r.to_string(), targets);
                }
            }
        }
    }
    model
}

/// A model near `base`: a handful of random edits (adds, removals, attribute
/// flips, link edits, retypes), preserving the canonical no-empty-link-list
/// form. Removing an element also detaches links pointing at it.
pub fn mutate_model(rng: &mut impl Rng, base: &TypedModel) -> TypedModel {
    let mut m = base.clone();
    let edits = rng.random_range(0..=8);
    for _ in 0..edits {
        let ids: Vec<ElementId> = m.elements.keys().cloned().collect();
        match rng.random_range(0..6) {
            // add a fresh element
            0 => {
                let id = ElementId::new(format!("n{}", rng.random_range(0..1000)));
                if let std::collections::btree_map::Entry::Vacant(slot) = m.elements.entry(id) {
                    let mut el = Element::new(*TYPES.choose(rng).unwrap());
                    if rng.random_bool(0.7) {
                        el.attrs.insert(ATTRS.choose(rng).unwrap().to_string(), random_value(rng));
                    }
                    slot.insert(el);
                }
            }
            // remove an element and detach incoming links
            1 => {
                if let Some(victim) = ids.choose(rng).cloned() {
                    m.elements.remove(&victim);
                    for el in m.elements.values_mut() {
                        el.links.retain(|_, targets| {
                            targets.retain(|t| t != &victim);
                            !targets.is_empty()
                        });
                    }
                }
            }
            // set or clear an attribute
            2 => {
                if let Some(id) = ids.choose(rng) {
                    let el = m.elements.get_mut(id).unwrap();
                    let attr = ATTRS.choose(rng).unwrap().to_string();
                    if rng.random_bool(0.8) {
                        el.attrs.insert(attr, random_value(rng));
                    } else {
                        el.attrs.remove(&attr);
                    }
                }
            }
            // add a link
            3 => {
                if let (Some(id), Some(target)) = (ids.choose(rng), ids.choose(rng)) {
                    let el = m.elements.get_mut(id).unwrap();
                    let list = el.links.entry(REFS.choose(rng).unwrap().to_string()).or_default();
                    let at = rng.random_range(0..=list.len());
                    list.insert(at, target.clone());
                }
            }
            // remove a link
            4 => {
                if let Some(id) = ids.choose(rng) {
                    let el = m.elements.get_mut(id).unwrap();
                    let refs: Vec<String> = el.links.keys().cloned().collect();
                    if let Some(r) = refs.choose(rng) {
                        let list = el.links.get_mut(r).unwrap();
                        let at = rng.random_range(0..list.len());
                        list.remove(at);
                        if list.is_empty() {
                            el.links.remove(r);
                        }
                    }
                }
            }
            // retype an element in place
            _ => {
                if let Some(id) = ids.choose(rng) {
                    let el = m.elements.get_mut(id).unwrap();
                    el.type_name = TYPES.choose(rng).unwrap().to_string();
                }
            }
        }
    }
    m
}

/// Independent deep-equality check over two models, written as explicit
/// traversal rather than delegating to `PartialEq`, so it can serve as an
/// oracle for the diff/patch laws.
pub fn deep_equal(a: &TypedModel, b: &TypedModel) -> bool {
    if a.metamodel_name != b.metamodel_name {
        return false;
    }
    if a.elements.len() != b.elements.len() {
        return false;
    }
    for (id, ea) in &a.elements {
        let Some(eb) = b.elements.get(id) else {
            return false;
        };
        if ea.type_name != eb.type_name {
            return false;
        }
        if ea.attrs.len() != eb.attrs.len() {
            return false;
        }
        for (k, va) in &ea.attrs {
            match eb.attrs.get(k) {
                Some(vb) if values_equal(va, vb) => {}
                _ => return false,
            }
        }
        if ea.links.len() != eb.links.len() {
            return false;
        }
        for (r, la) in &ea.links {
            let Some(lb) = eb.links.get(r) else {
                return false;
            };
            if la.len() != lb.len() {
                return false;
            }
            for (x, y) in la.iter().zip(lb.iter()) {
                if x.0 != y.0 {
                    return false;
                }
            }
        }
    }
    true
}

fn values_equal(a: &AttrValue, b: &AttrValue) -> bool {
    match (a, b) {
        (AttrValue::Bool(x), AttrValue::Bool(y)) => x == y,
        (AttrValue::Int(x), AttrValue::Int(y)) => x == y,
        (AttrValue::Real(x), AttrValue::Real(y)) => x.to_bits() == y.to_bits(),
        (AttrValue::Str(x), AttrValue::Str(y)) => x == y,
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generators_are_deterministic_per_seed() {
        let a = random_model(&mut ChaCha8Rng::seed_from_u64(7));
        let b = random_model(&mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
        assert!(deep_equal(&a, &b));
    }

    #[test]
    fn deep_equal_agrees_with_partial_eq_on_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let m = random_model(&mut rng);
            let n = mutate_model(&mut rng, &m);
            assert_eq!(deep_equal(&m, &n), m.elements == n.elements);
        }
    }
}
