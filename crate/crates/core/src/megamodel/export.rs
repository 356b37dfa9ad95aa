//! Megamodel interchange: Graphviz DOT for humans, JSON for machines.
//!
//! The JSON form is complete — metamodels, node descriptors, current model
//! contents (versions included), relations, units, processes — so
//! `import_json(export_json(m))` reconstructs an equal registry. Import goes
//! through the normal registration APIs, which re-runs every invariant
//! check; a tampered document fails exactly like bad registration calls.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::model::{Metamodel, TypedModel};

use super::{Megamodel, MegamodelError, ModelNode, OperationUnit, ProcessGraph, RelationEdge};

pub(crate) const SCHEMA: &str = "megarun-megamodel/1";

#[derive(Serialize, Deserialize)]
struct MegamodelDoc {
    schema: String,
    metamodels: Vec<Metamodel>,
    nodes: Vec<ModelNode>,
    contents: Vec<(String, TypedModel)>,
    relations: Vec<RelationEdge>,
    units: Vec<OperationUnit>,
    processes: Vec<ProcessGraph>,
}

impl Megamodel {
    /// Graphviz rendering: model nodes as boxes labeled with their category
    /// stereotype, operation units as dashed ellipses wired to their inputs
    /// and outputs, relations as labeled edges (bold when critical), and one
    /// cluster per process showing its control flow.
    pub fn export_dot(&self) -> String {
        let mut out = String::new();
        out.push_str("digraph megamodel {\n");
        out.push_str("  rankdir=LR;\n");
        out.push_str("  node [fontname=\"Helvetica\"];\n");

        for node in self.nodes() {
            let _ = writeln!(
                out,
                "  \"{}\" [shape=box, label=\"{}\\n«{}»\"];",
                node.node_id,
                node.node_id,
                node.stereotype()
            );
        }

        for edge in self.relations() {
            let style = if edge.critical { "penwidth=2" } else { "penwidth=1" };
            let dir = if edge.directed { "forward" } else { "none" };
            let _ = writeln!(
                out,
                "  \"{}\" -> \"{}\" [label=\"{}\", dir={}, {}];",
                edge.source,
                edge.target,
                edge.kind.as_str(),
                dir,
                style
            );
        }

        for unit in self.units() {
            let _ = writeln!(
                out,
                "  \"unit:{}\" [shape=ellipse, style=dashed, label=\"{}\\n«{:?}»\"];",
                unit.unit_id,
                unit.unit_id,
                unit.op_kind
            );
            for input in &unit.input_nodes {
                let _ = writeln!(
                    out,
                    "  \"{input}\" -> \"unit:{}\" [style=dashed, arrowhead=open];",
                    unit.unit_id
                );
            }
            for output in &unit.output_nodes {
                let _ = writeln!(
                    out,
                    "  \"unit:{}\" -> \"{output}\" [style=dashed, arrowhead=normal];",
                    unit.unit_id
                );
            }
        }

        for process in self.processes() {
            let _ = writeln!(out, "  subgraph \"cluster_{}\" {{", process.process_id);
            let _ = writeln!(out, "    label=\"process {}\";", process.process_id);
            for unit in &process.units {
                let _ = writeln!(out, "    \"unit:{unit}\";");
            }
            for (from, to) in &process.control_edges {
                let _ = writeln!(out, "    \"unit:{from}\" -> \"unit:{to}\" [style=bold];");
            }
            out.push_str("  }\n");
        }

        out.push_str("}\n");
        out
    }

    /// Complete JSON interchange document, pretty-printed.
    pub fn export_json(&self) -> String {
        let doc = MegamodelDoc {
            schema: SCHEMA.to_string(),
            metamodels: self.metamodels().cloned().collect(),
            nodes: self.nodes().cloned().collect(),
            contents: self
                .nodes()
                .filter_map(|n| {
                    self.content(&n.node_id)
                        .map(|m| (n.node_id.clone(), m.clone()))
                })
                .collect(),
            relations: self.relations().cloned().collect(),
            units: self.units().cloned().collect(),
            processes: self.processes().cloned().collect(),
        };
        serde_json::to_string_pretty(&doc).expect("megamodel serialization cannot fail")
    }
}

/// Rebuild a megamodel from its JSON interchange form, re-running all
/// registration checks.
pub fn import_json(text: &str) -> Result<Megamodel, MegamodelError> {
    let doc: MegamodelDoc =
        serde_json::from_str(text).map_err(|e| MegamodelError::Import(e.to_string()))?;
    if doc.schema != SCHEMA {
        return Err(MegamodelError::Import(format!(
            "unsupported schema `{}`, expected `{SCHEMA}`",
            doc.schema
        )));
    }
    let mut mm = Megamodel::new();
    for metamodel in doc.metamodels {
        mm.add_metamodel(metamodel)?;
    }
    let mut contents: std::collections::BTreeMap<String, TypedModel> =
        doc.contents.into_iter().collect();
    for node in doc.nodes {
        let content = contents.remove(&node.node_id).ok_or_else(|| {
            MegamodelError::Import(format!("node `{}` has no content entry", node.node_id))
        })?;
        let version = content.version;
        let id = mm.register_model(node, content)?;
        // register_model preserves the stored version; double-check anyway
        debug_assert_eq!(mm.version(&id), Some(version));
    }
    // units before relations: executable relations reference units
    for unit in doc.units {
        mm.register_unit(unit)?;
    }
    for relation in doc.relations {
        mm.add_relation(relation)?;
    }
    for process in doc.processes {
        mm.register_process(process)?;
    }
    Ok(mm)
}
