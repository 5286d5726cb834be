use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{NodeId, TopicPayload, TopicTree};

/// A ranked word with its score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeLabel {
    pub word: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeExportNode {
    pub id: NodeId,
    pub level: usize,
    pub doc_count: usize,
    /// True for the synthetic root of a flat model's star graph.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub virtual_root: bool,
    pub top_words: Vec<NodeLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeExportEdge {
    pub parent: NodeId,
    pub child: NodeId,
}

/// Rendering-neutral export of a topic hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeExport {
    pub schema: String,
    pub nodes: Vec<TreeExportNode>,
    pub edges: Vec<TreeExportEdge>,
}

pub const EXPORT_SCHEMA: &str = "ghlda-tree/1";

impl TreeExport {
    /// Star graph for flat models: topic `k` becomes node `k + 1` under a
    /// virtual root `0`.
    pub fn flat(topics: Vec<(usize, Vec<NodeLabel>)>) -> Self {
        let mut nodes = vec![TreeExportNode {
            id: 0,
            level: 0,
            doc_count: 0,
            virtual_root: true,
            top_words: Vec::new(),
        }];
        let mut edges = Vec::new();
        for (k, words) in topics {
            nodes.push(TreeExportNode {
                id: k + 1,
                level: 1,
                doc_count: 0,
                virtual_root: false,
                top_words: words,
            });
            edges.push(TreeExportEdge { parent: 0, child: k + 1 });
        }
        Self {
            schema: EXPORT_SCHEMA.into(),
            nodes,
            edges,
        }
    }

    /// Graphviz DOT with nodes labelled by their top five words.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph topics {\n  node [shape=box];\n");
        for n in &self.nodes {
            let words: Vec<&str> = n.top_words.iter().take(5).map(|w| w.word.as_str()).collect();
            let label = if n.virtual_root {
                "root".to_string()
            } else {
                format!("{} (L{}, {} docs)\\n{}", n.id, n.level, n.doc_count, words.join(", "))
            };
            let _ = writeln!(out, "  n{} [label=\"{}\"];", n.id, escape(&label));
        }
        for e in &self.edges {
            let _ = writeln!(out, "  n{} -> n{};", e.parent, e.child);
        }
        out.push_str("}\n");
        out
    }
}

fn escape(s: &str) -> String {
    s.replace('"', "\\\"")
}

impl<P: TopicPayload> TopicTree<P> {
    pub fn export(&self, labels: &BTreeMap<NodeId, Vec<NodeLabel>>) -> TreeExport {
        let nodes = self
            .nodes()
            .map(|n| TreeExportNode {
                id: n.id,
                level: n.level,
                doc_count: n.doc_count,
                virtual_root: false,
                top_words: labels.get(&n.id).cloned().unwrap_or_default(),
            })
            .collect();
        let edges = self
            .nodes()
            .filter_map(|n| n.parent.map(|p| TreeExportEdge { parent: p, child: n.id }))
            .collect();
        TreeExport {
            schema: EXPORT_SCHEMA.into(),
            nodes,
            edges,
        }
    }
}
