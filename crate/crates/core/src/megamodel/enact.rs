//! Enactment: running a process graph over the registry.
//!
//! Units execute in a topological order of the control edges, ties broken by
//! ascending unit id, so traces are reproducible. Each unit's behavior is
//! resolved by name from a [`BehaviorRegistry`]; the behavior talks to models
//! exclusively through a [`UnitIo`] handle, which enforces that reads stay
//! within the unit's declared `input_nodes` and writes within its
//! `output_nodes`, and records both for the execution trace. A model nobody
//! declared cannot change — the write-discipline audits in the test suites
//! lean on this.
//!
//! Control flow: a guard returning false records the unit as skipped and its
//! downstream units still run (their own guards usually cascade the skip); a
//! failing behavior records the unit as failed, and everything downstream of
//! it along control edges is cut from the enactment entirely.

use std::collections::{BTreeMap, BTreeSet};

use crate::model::{conforms, patch, ModelDelta, TypedModel};

use super::{
    ExecutionTrace, Megamodel, OperationUnit, TraceRecord, UnitOutcome, WriteRecord,
};

/// Failure inside a unit behavior; recorded in the trace as `failed`.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{message}")]
pub struct BehaviorError {
    pub message: String,
}

impl BehaviorError {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
        }
    }
}

impl From<String> for BehaviorError {
    fn from(message: String) -> Self {
        Self { message }
    }
}

impl From<&str> for BehaviorError {
    fn from(message: &str) -> Self {
        Self {
            message: message.to_string(),
        }
    }
}

/// One unit's behavior. `K` is the enactment context shared by all units of
/// a run — the runner keeps simulator handles, correspondence state and
/// manager bookkeeping there.
pub trait UnitBehavior<K> {
    /// Whether the unit should run at all this enactment. Defaults to yes.
    fn guard(&self, mm: &Megamodel, k: &K) -> Result<bool, BehaviorError> {
        let _ = (mm, k);
        Ok(true)
    }

    fn run(&self, io: &mut UnitIo<'_>, k: &mut K) -> Result<(), BehaviorError>;
}

/// Named behaviors available to an enactment.
pub struct BehaviorRegistry<K> {
    behaviors: BTreeMap<String, Box<dyn UnitBehavior<K>>>,
}

impl<K> Default for BehaviorRegistry<K> {
    fn default() -> Self {
        Self {
            behaviors: BTreeMap::new(),
        }
    }
}

impl<K> BehaviorRegistry<K> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, behavior: Box<dyn UnitBehavior<K>>) {
        self.behaviors.insert(name.into(), behavior);
    }

    pub fn get(&self, name: &str) -> Option<&dyn UnitBehavior<K>> {
        self.behaviors.get(name).map(|b| b.as_ref())
    }
}

/// Errors that abort an enactment before any unit runs.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnactError {
    #[error("no process named `{0}` is registered")]
    UnknownProcess(String),
    #[error("process `{process}` is not well-formed: {first_finding}")]
    InvalidProcess { process: String, first_finding: String },
    #[error("unit `{unit}` names behavior `{behavior}`, which is not registered")]
    MissingBehavior { unit: String, behavior: String },
}

/// Mediated model access for one unit execution. Reads and writes are
/// checked against the unit's declaration and recorded for the trace.
pub struct UnitIo<'a> {
    mm: &'a mut Megamodel,
    unit: &'a OperationUnit,
    reads: Vec<(String, u64)>,
    writes: Vec<WriteRecord>,
}

impl<'a> UnitIo<'a> {
    fn new(mm: &'a mut Megamodel, unit: &'a OperationUnit) -> Self {
        Self {
            mm,
            unit,
            reads: Vec::new(),
            writes: Vec::new(),
        }
    }

    /// Read a declared input node's content.
    pub fn read(&mut self, node: &str) -> Result<&TypedModel, BehaviorError> {
        if !self.unit.input_nodes.iter().any(|n| n == node) {
            return Err(BehaviorError::new(format!(
                "unit `{}` read undeclared node `{node}`",
                self.unit.unit_id
            )));
        }
        let model = self
            .mm
            .content(node)
            .ok_or_else(|| BehaviorError::new(format!("node `{node}` has no content")))?;
        if !self.reads.iter().any(|(n, _)| n == node) {
            self.reads.push((node.to_string(), model.version));
        }
        Ok(self.mm.content(node).unwrap())
    }

    /// Apply a delta to a declared output node. The patched content must
    /// still conform to the node's metamodel.
    pub fn apply(&mut self, node: &str, delta: &ModelDelta) -> Result<(), BehaviorError> {
        self.check_writable(node)?;
        let current = self
            .mm
            .content(node)
            .ok_or_else(|| BehaviorError::new(format!("node `{node}` has no content")))?;
        let next = patch(current, delta)
            .map_err(|e| BehaviorError::new(format!("patch of `{node}` failed: {e}")))?;
        self.install(node, next, delta.summary())
    }

    /// Replace a declared output node's content wholesale (the escalation
    /// path swaps whole adaptation models). The version still advances by
    /// one from the prior content.
    pub fn replace(&mut self, node: &str, mut model: TypedModel) -> Result<(), BehaviorError> {
        self.check_writable(node)?;
        let current = self
            .mm
            .content(node)
            .ok_or_else(|| BehaviorError::new(format!("node `{node}` has no content")))?;
        if model.metamodel_name != current.metamodel_name {
            return Err(BehaviorError::new(format!(
                "replacement for `{node}` is typed by `{}`, slot holds `{}`",
                model.metamodel_name, current.metamodel_name
            )));
        }
        model.version = current.version + 1;
        self.install(node, model, "replaced".to_string())
    }

    fn check_writable(&self, node: &str) -> Result<(), BehaviorError> {
        if !self.unit.output_nodes.iter().any(|n| n == node) {
            return Err(BehaviorError::new(format!(
                "unit `{}` wrote undeclared node `{node}`",
                self.unit.unit_id
            )));
        }
        Ok(())
    }

    fn install(
        &mut self,
        node: &str,
        model: TypedModel,
        summary: String,
    ) -> Result<(), BehaviorError> {
        let mm_decl = self
            .mm
            .metamodel_of_node(node)
            .ok_or_else(|| BehaviorError::new(format!("node `{node}` has no metamodel")))?;
        match conforms(&model, mm_decl) {
            Ok(report) if report.conforms => {}
            Ok(report) => {
                return Err(BehaviorError::new(format!(
                    "write to `{node}` breaks conformance: {}",
                    report.violations[0].message
                )))
            }
            Err(e) => return Err(BehaviorError::new(format!("write to `{node}`: {e}"))),
        }
        let version = model.version;
        *self.mm.content_mut(node).unwrap() = model;
        self.writes.push(WriteRecord {
            node: node.to_string(),
            version,
            delta_summary: summary,
        });
        Ok(())
    }

    /// The megamodel, read-only, for lookups beyond plain content (node
    /// descriptors, metamodels, relations).
    pub fn registry(&self) -> &Megamodel {
        self.mm
    }
}

impl Megamodel {
    /// Run one process to completion. Every unit produces exactly one trace
    /// record (ok, skipped, or failed) unless it sits downstream of a failed
    /// unit, in which case it is cut and produces none.
    pub fn enact<K>(
        &mut self,
        process_id: &str,
        sim_time: f64,
        behaviors: &BehaviorRegistry<K>,
        k: &mut K,
    ) -> Result<ExecutionTrace, EnactError> {
        let process = self
            .process(process_id)
            .cloned()
            .ok_or_else(|| EnactError::UnknownProcess(process_id.to_string()))?;
        let findings = self.process_findings(&process);
        if let Some(first) = findings.first() {
            return Err(EnactError::InvalidProcess {
                process: process_id.to_string(),
                first_finding: first.message.clone(),
            });
        }
        for unit_id in &process.units {
            let unit = self.unit(unit_id).expect("validated above");
            if behaviors.get(&unit.behavior).is_none() {
                return Err(EnactError::MissingBehavior {
                    unit: unit_id.clone(),
                    behavior: unit.behavior.clone(),
                });
            }
        }

        let mut indegree: BTreeMap<&str, usize> =
            process.units.iter().map(|u| (u.as_str(), 0)).collect();
        let mut children: BTreeMap<&str, Vec<&str>> =
            process.units.iter().map(|u| (u.as_str(), Vec::new())).collect();
        for (from, to) in &process.control_edges {
            *indegree.get_mut(to.as_str()).unwrap() += 1;
            children.get_mut(from.as_str()).unwrap().push(to.as_str());
        }
        let mut ready: BTreeSet<&str> = indegree
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(u, _)| *u)
            .collect();
        let mut cut: BTreeSet<&str> = BTreeSet::new();

        let mut trace = ExecutionTrace {
            process_id: process_id.to_string(),
            records: Vec::new(),
        };

        while let Some(&unit_id) = ready.iter().next() {
            ready.remove(unit_id);

            let record = if cut.contains(unit_id) {
                // downstream of a failure: propagate the cut, record nothing
                for to in &children[unit_id] {
                    cut.insert(to);
                }
                None
            } else {
                let unit = self.unit(unit_id).expect("validated above").clone();
                let behavior = behaviors.get(&unit.behavior).expect("checked above");
                match behavior.guard(self, k) {
                    Ok(false) => Some(TraceRecord {
                        sim_time,
                        unit_id: unit_id.to_string(),
                        reads: Vec::new(),
                        writes: Vec::new(),
                        outcome: UnitOutcome::Skipped,
                    }),
                    Ok(true) => {
                        let mut io = UnitIo::new(self, &unit);
                        match behavior.run(&mut io, k) {
                            Ok(()) => Some(TraceRecord {
                                sim_time,
                                unit_id: unit_id.to_string(),
                                reads: io.reads,
                                writes: io.writes,
                                outcome: UnitOutcome::Ok,
                            }),
                            Err(e) => {
                                for to in &children[unit_id] {
                                    cut.insert(to);
                                }
                                Some(TraceRecord {
                                    sim_time,
                                    unit_id: unit_id.to_string(),
                                    reads: io.reads,
                                    writes: io.writes,
                                    outcome: UnitOutcome::Failed { reason: e.message },
                                })
                            }
                        }
                    }
                    Err(e) => {
                        for to in &children[unit_id] {
                            cut.insert(to);
                        }
                        Some(TraceRecord {
                            sim_time,
                            unit_id: unit_id.to_string(),
                            reads: Vec::new(),
                            writes: Vec::new(),
                            outcome: UnitOutcome::Failed {
                                reason: format!("guard: {}", e.message),
                            },
                        })
                    }
                }
            };
            trace.records.extend(record);

            for to in &children[unit_id] {
                let d = indegree.get_mut(to).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.insert(to);
                }
            }
        }

        Ok(trace)
    }
}
