//! Executed tile graph of the first cluster, in Graphviz DOT.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use serde::{Deserialize, Serialize};

/// Nodes are blocks (plus `global`); edges carry summed bytes per transfer kind.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileGraph {
    pub nodes: BTreeSet<String>,
    pub edges: BTreeMap<(String, String, String), u64>,
}

impl TileGraph {
    pub fn add(&mut self, from: String, to: String, kind: &str, bytes: u64) {
        self.nodes.insert(from.clone());
        self.nodes.insert(to.clone());
        *self.edges.entry((from, to, kind.to_string())).or_default() += bytes;
    }

    pub fn bytes_of(&self, kind: &str) -> u64 {
        self.edges.iter().filter(|((_, _, k), _)| k == kind).map(|(_, b)| b).sum()
    }

    pub fn to_dot(&self, title: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "digraph tiles {{");
        let _ = writeln!(s, "  label=\"{}\";", title.replace('"', "'"));
        let _ = writeln!(s, "  node [shape=box];");
        for n in &self.nodes {
            let shape = if n == "global" { " [shape=cylinder]" } else { "" };
            let _ = writeln!(s, "  \"{n}\"{shape};");
        }
        for ((from, to, kind), bytes) in &self.edges {
            let style = match kind.as_str() {
                "all_exchange" => "color=red",
                "shuffle" => "color=blue",
                "reduce_scatter" => "color=darkgreen",
                _ => "color=gray40",
            };
            let _ = writeln!(s, "  \"{from}\" -> \"{to}\" [label=\"{kind} {bytes}B\", {style}];");
        }
        s.push_str("}\n");
        s
    }
}
