//! Nested-CRP topic hierarchy truncated at a fixed depth.
//!
//! Every document sits on a root-to-leaf path of exactly `depth` nodes. Node
//! ids increase monotonically and are never reused within a run.

mod export;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use export::{NodeLabel, TreeExport, TreeExportEdge, TreeExportNode, EXPORT_SCHEMA};

pub type NodeId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("invalid branch specification {0:?}: {1}")]
    BranchSpec(Vec<usize>, &'static str),
    #[error("node {0} does not exist")]
    MissingNode(NodeId),
    #[error("path is inconsistent with the tree: {0}")]
    InconsistentPath(String),
    #[error("document {0} is not attached")]
    NotAttached(usize),
    #[error("document {0} is already attached")]
    AlreadyAttached(usize),
    #[error("node {node} has no documents but still holds {tokens} tokens")]
    NonEmptyPayload { node: NodeId, tokens: usize },
    #[error("depth must be at least 1")]
    ZeroDepth,
    #[error("nCRP concentration must be positive, got {0}")]
    Gamma(f64),
}

/// Topic payload stored at a node. Garbage collection requires it to be empty.
pub trait TopicPayload {
    fn token_count(&self) -> usize;
}

#[derive(Debug, Clone)]
pub struct TopicNode<P> {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub level: usize,
    pub doc_count: usize,
    pub payload: P,
}

/// A materialized root-to-leaf path.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Path(pub Vec<NodeId>);

impl Path {
    pub fn nodes(&self) -> &[NodeId] {
        &self.0
    }
    pub fn leaf(&self) -> NodeId {
        *self.0.last().expect("paths are non-empty")
    }
}

/// A path that may end in hypothetical nodes: the existing `prefix` followed
/// by `depth − prefix.len()` fresh nodes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CandidatePath {
    pub prefix: Vec<NodeId>,
    pub depth: usize,
}

impl CandidatePath {
    pub fn is_existing(&self) -> bool {
        self.prefix.len() == self.depth
    }

    /// Per-level flag: true where the node would be newly created.
    pub fn is_new(&self) -> Vec<bool> {
        (0..self.depth).map(|l| l >= self.prefix.len()).collect()
    }

    /// Existing node at `level`, or `None` for a hypothetical one.
    pub fn node_at(&self, level: usize) -> Option<NodeId> {
        self.prefix.get(level).copied()
    }
}

impl From<&Path> for CandidatePath {
    fn from(p: &Path) -> Self {
        Self {
            prefix: p.0.clone(),
            depth: p.0.len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TopicTree<P> {
    nodes: Vec<Option<TopicNode<P>>>,
    root: NodeId,
    depth: usize,
    gamma: f64,
    attached: BTreeMap<usize, NodeId>,
}

impl<P: TopicPayload> TopicTree<P> {
    /// A tree holding only the root.
    pub fn new(depth: usize, gamma: f64, root_payload: P) -> Result<Self, TreeError> {
        if depth == 0 {
            return Err(TreeError::ZeroDepth);
        }
        if !(gamma > 0.0) {
            return Err(TreeError::Gamma(gamma));
        }
        Ok(Self {
            nodes: vec![Some(TopicNode {
                id: 0,
                parent: None,
                children: Vec::new(),
                level: 0,
                doc_count: 0,
                payload: root_payload,
            })],
            root: 0,
            depth,
            gamma,
            attached: BTreeMap::new(),
        })
    }

    /// Complete skeleton where each node at level `l−1` has `spec[l]`
    /// children. No documents are attached; callers attach documents and then
    /// [`prune`](Self::prune) the unused branches.
    pub fn complete(
        spec: &[usize],
        gamma: f64,
        mut make_payload: impl FnMut(usize) -> P,
    ) -> Result<Self, TreeError> {
        if spec.is_empty() {
            return Err(TreeError::BranchSpec(spec.to_vec(), "empty"));
        }
        if spec[0] != 1 {
            return Err(TreeError::BranchSpec(spec.to_vec(), "first entry must be 1 (single root)"));
        }
        if spec.contains(&0) {
            return Err(TreeError::BranchSpec(spec.to_vec(), "branch counts must be positive"));
        }
        let mut tree = Self::new(spec.len(), gamma, make_payload(0))?;
        let mut frontier = vec![tree.root];
        for (level, &branches) in spec.iter().enumerate().skip(1) {
            let mut next = Vec::with_capacity(frontier.len() * branches);
            for &parent in &frontier {
                for _ in 0..branches {
                    next.push(tree.push_child(parent, make_payload(level)));
                }
            }
            frontier = next;
        }
        Ok(tree)
    }

    fn push_child(&mut self, parent: NodeId, payload: P) -> NodeId {
        let id = self.nodes.len();
        let level = self.node(parent).expect("parent exists").level + 1;
        self.nodes.push(Some(TopicNode {
            id,
            parent: Some(parent),
            children: Vec::new(),
            level,
            doc_count: 0,
            payload,
        }));
        self.nodes[parent].as_mut().unwrap().children.push(id);
        id
    }

    pub fn depth(&self) -> usize {
        self.depth
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn root(&self) -> NodeId {
        self.root
    }
    /// Next id that will be handed out.
    pub fn next_id(&self) -> NodeId {
        self.nodes.len()
    }

    pub fn node(&self, id: NodeId) -> Option<&TopicNode<P>> {
        self.nodes.get(id).and_then(|n| n.as_ref())
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut TopicNode<P>> {
        self.nodes.get_mut(id).and_then(|n| n.as_mut())
    }

    pub fn payload_mut(&mut self, id: NodeId) -> Result<&mut P, TreeError> {
        self.node_mut(id)
            .map(|n| &mut n.payload)
            .ok_or(TreeError::MissingNode(id))
    }

    /// Live nodes in id order.
    pub fn nodes(&self) -> impl Iterator<Item = &TopicNode<P>> {
        self.nodes.iter().filter_map(|n| n.as_ref())
    }

    pub fn node_count(&self) -> usize {
        self.nodes().count()
    }

    pub fn attached_documents(&self) -> usize {
        self.attached.len()
    }

    pub fn leaf_of(&self, doc: usize) -> Option<NodeId> {
        self.attached.get(&doc).copied()
    }

    /// Root-to-`node` path of ids.
    pub fn lineage(&self, node: NodeId) -> Result<Vec<NodeId>, TreeError> {
        let mut out = Vec::new();
        let mut cur = Some(node);
        while let Some(id) = cur {
            let n = self.node(id).ok_or(TreeError::MissingNode(id))?;
            out.push(id);
            cur = n.parent;
        }
        out.reverse();
        Ok(out)
    }

    pub fn path_of(&self, doc: usize) -> Result<Path, TreeError> {
        let leaf = self.leaf_of(doc).ok_or(TreeError::NotAttached(doc))?;
        Ok(Path(self.lineage(leaf)?))
    }

    /// Existing root-to-leaf paths (leaves at full depth only).
    pub fn existing_paths(&self) -> Vec<Path> {
        self.enumerate_paths()
            .into_iter()
            .filter(CandidatePath::is_existing)
            .map(|c| Path(c.prefix))
            .collect()
    }

    /// Every existing path plus one new-branch candidate per internal node,
    /// in depth-first order.
    pub fn enumerate_paths(&self) -> Vec<CandidatePath> {
        let mut out = Vec::new();
        let mut prefix = Vec::with_capacity(self.depth);
        self.enumerate_from(self.root, &mut prefix, &mut out);
        out
    }

    fn enumerate_from(&self, id: NodeId, prefix: &mut Vec<NodeId>, out: &mut Vec<CandidatePath>) {
        let node = self.node(id).expect("live child");
        prefix.push(id);
        if node.level + 1 == self.depth {
            out.push(CandidatePath {
                prefix: prefix.clone(),
                depth: self.depth,
            });
        } else {
            out.push(CandidatePath {
                prefix: prefix.clone(),
                depth: self.depth,
            });
            for &c in &node.children {
                self.enumerate_from(c, prefix, out);
            }
        }
        prefix.pop();
    }

    fn check_candidate(&self, path: &CandidatePath) -> Result<(), TreeError> {
        if path.depth != self.depth {
            return Err(TreeError::InconsistentPath(format!(
                "path depth {} but tree depth {}",
                path.depth, self.depth
            )));
        }
        if path.prefix.first() != Some(&self.root) {
            return Err(TreeError::InconsistentPath("path does not start at the root".into()));
        }
        for w in path.prefix.windows(2) {
            let child = self.node(w[1]).ok_or(TreeError::MissingNode(w[1]))?;
            if child.parent != Some(w[0]) {
                return Err(TreeError::InconsistentPath(format!(
                    "{} is not a child of {}",
                    w[1], w[0]
                )));
            }
        }
        Ok(())
    }

    /// nCRP log-probability of `path` under the current document counts.
    /// The document being resampled must already be detached.
    pub fn path_log_prior(&self, path: &CandidatePath) -> Result<f64, TreeError> {
        self.check_candidate(path)?;
        let mut lp = 0.0;
        for w in path.prefix.windows(2) {
            let parent = self.node(w[0]).unwrap();
            let child = self.node(w[1]).unwrap();
            lp += (child.doc_count as f64 / (self.gamma + parent.doc_count as f64)).ln();
        }
        if !path.is_existing() {
            let branch = self.node(*path.prefix.last().unwrap()).unwrap();
            lp += (self.gamma / (self.gamma + branch.doc_count as f64)).ln();
            // deeper fresh nodes have no documents: γ/γ contributes nothing
        }
        Ok(lp)
    }

    /// Attach `doc` along `path`, creating any hypothetical nodes with
    /// payloads from `make_payload(level)`.
    pub fn attach(
        &mut self,
        doc: usize,
        path: &CandidatePath,
        mut make_payload: impl FnMut(usize) -> P,
    ) -> Result<Path, TreeError> {
        self.check_candidate(path)?;
        if self.attached.contains_key(&doc) {
            return Err(TreeError::AlreadyAttached(doc));
        }
        let mut nodes = path.prefix.clone();
        while nodes.len() < self.depth {
            let parent = *nodes.last().unwrap();
            let level = nodes.len();
            nodes.push(self.push_child(parent, make_payload(level)));
        }
        for &id in &nodes {
            self.nodes[id].as_mut().unwrap().doc_count += 1;
        }
        self.attached.insert(doc, *nodes.last().unwrap());
        Ok(Path(nodes))
    }

    /// Detach `doc` and garbage-collect nodes left without documents.
    /// Their payloads must already be empty.
    pub fn detach(&mut self, doc: usize) -> Result<Path, TreeError> {
        let path = self.path_of(doc)?;
        for &id in path.nodes() {
            let n = self.nodes[id].as_ref().unwrap();
            if n.doc_count == 1 && n.payload.token_count() > 0 && id != self.root {
                return Err(TreeError::NonEmptyPayload {
                    node: id,
                    tokens: n.payload.token_count(),
                });
            }
        }
        self.attached.remove(&doc);
        for &id in path.nodes() {
            self.nodes[id].as_mut().unwrap().doc_count -= 1;
        }
        for &id in path.nodes().iter().rev() {
            if id != self.root && self.nodes[id].as_ref().unwrap().doc_count == 0 {
                self.remove_node(id);
            }
        }
        Ok(path)
    }

    fn remove_node(&mut self, id: NodeId) {
        let node = self.nodes[id].take().expect("live node");
        if let Some(p) = node.parent {
            self.nodes[p].as_mut().unwrap().children.retain(|&c| c != id);
        }
    }

    /// Remove every non-root node with no documents (used after building a
    /// skeleton with [`complete`](Self::complete)).
    pub fn prune(&mut self) -> Result<(), TreeError> {
        let mut ids: Vec<NodeId> = self.nodes().map(|n| n.id).collect();
        ids.sort_by_key(|&id| std::cmp::Reverse(self.node(id).unwrap().level));
        for id in ids {
            if id == self.root {
                continue;
            }
            let n = self.node(id).unwrap();
            if n.doc_count == 0 {
                if n.payload.token_count() > 0 {
                    return Err(TreeError::NonEmptyPayload {
                        node: id,
                        tokens: n.payload.token_count(),
                    });
                }
                self.remove_node(id);
            }
        }
        Ok(())
    }

    /// Serializable topology (ids, parents, levels, counts).
    pub fn snapshot(&self) -> TreeSnapshot {
        TreeSnapshot {
            depth: self.depth,
            gamma: self.gamma,
            next_id: self.next_id(),
            nodes: self
                .nodes()
                .map(|n| NodeRecord {
                    id: n.id,
                    parent: n.parent,
                    level: n.level,
                    doc_count: n.doc_count,
                })
                .collect(),
        }
    }

    /// Rebuild the topology from a snapshot with empty payloads and no
    /// attached documents (document counts are restored by re-attaching).
    pub fn from_snapshot(
        snap: &TreeSnapshot,
        mut make_payload: impl FnMut(usize) -> P,
    ) -> Result<Self, TreeError> {
        if snap.depth == 0 {
            return Err(TreeError::ZeroDepth);
        }
        let mut nodes: Vec<Option<TopicNode<P>>> = (0..snap.next_id).map(|_| None).collect();
        let mut root = None;
        for rec in &snap.nodes {
            if rec.id >= snap.next_id {
                return Err(TreeError::InconsistentPath(format!("node id {} ≥ next_id", rec.id)));
            }
            if rec.parent.is_none() {
                root = Some(rec.id);
            }
            nodes[rec.id] = Some(TopicNode {
                id: rec.id,
                parent: rec.parent,
                children: Vec::new(),
                level: rec.level,
                doc_count: 0,
                payload: make_payload(rec.level),
            });
        }
        for rec in &snap.nodes {
            if let Some(p) = rec.parent {
                let parent = nodes
                    .get_mut(p)
                    .and_then(|n| n.as_mut())
                    .ok_or(TreeError::MissingNode(p))?;
                if parent.level + 1 != rec.level {
                    return Err(TreeError::InconsistentPath(format!("bad level at node {}", rec.id)));
                }
                parent.children.push(rec.id);
            }
        }
        let root = root.ok_or(TreeError::InconsistentPath("no root".into()))?;
        if !(snap.gamma > 0.0) {
            return Err(TreeError::Gamma(snap.gamma));
        }
        Ok(Self {
            nodes,
            root,
            depth: snap.depth,
            gamma: snap.gamma,
            attached: BTreeMap::new(),
        })
    }

    /// Attach a document to an already materialized path.
    pub fn attach_existing(&mut self, doc: usize, path: &Path) -> Result<(), TreeError> {
        let cand = CandidatePath::from(path);
        if !cand.is_existing() || cand.depth != self.depth {
            return Err(TreeError::InconsistentPath("path is not a full existing path".into()));
        }
        self.attach(doc, &cand, |_| unreachable!("existing path creates no nodes"))
            .map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub level: usize,
    pub doc_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSnapshot {
    pub depth: usize,
    pub gamma: f64,
    pub next_id: NodeId,
    pub nodes: Vec<NodeRecord>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone, Default)]
    struct Tokens(usize);
    impl TopicPayload for Tokens {
        fn token_count(&self) -> usize {
            self.0
        }
    }

    fn chain(depth: usize) -> TopicTree<Tokens> {
        let mut t = TopicTree::complete(&vec![1; depth], 0.1, |_| Tokens(0)).unwrap();
        let leaf_path = CandidatePath {
            prefix: (0..depth).collect(),
            depth,
        };
        t.attach(0, &leaf_path, |_| Tokens(0)).unwrap();
        t
    }

    #[test]
    fn complete_tree_node_counts() {
        let t = TopicTree::complete(&[1, 1, 4, 4], 0.1, |_| Tokens(0)).unwrap();
        assert_eq!(t.node_count(), 22);
        assert_eq!(t.existing_paths().len(), 16);
        let t = TopicTree::complete(&[1, 1], 0.1, |_| Tokens(0)).unwrap();
        assert_eq!(t.node_count(), 2);
        assert_eq!(t.existing_paths().len(), 1);
        let t = TopicTree::complete(&[1, 2, 2], 0.1, |_| Tokens(0)).unwrap();
        assert_eq!(t.node_count(), 7);
        assert_eq!(t.existing_paths().len(), 4);
        assert!(TopicTree::complete(&[2, 2], 0.1, |_| Tokens(0)).is_err());
        assert!(TopicTree::complete(&[], 0.1, |_| Tokens(0)).is_err());
    }

    #[test]
    fn enumerate_chain_and_root_only() {
        let t = chain(4);
        let paths = t.enumerate_paths();
        assert_eq!(paths.iter().filter(|p| p.is_existing()).count(), 1);
        assert_eq!(paths.iter().filter(|p| !p.is_existing()).count(), 3);
        let t = chain(1);
        let paths = t.enumerate_paths();
        assert_eq!(paths.len(), 1);
        assert!(paths[0].is_existing());
    }

    #[test]
    fn enumerate_1144_has_one_candidate_per_internal_node() {
        let mut t = TopicTree::complete(&[1, 1, 4, 4], 0.1, |_| Tokens(0)).unwrap();
        for (d, p) in t.existing_paths().iter().enumerate() {
            t.attach_existing(d, p).unwrap();
        }
        let paths = t.enumerate_paths();
        assert_eq!(paths.iter().filter(|p| p.is_existing()).count(), 16);
        // internal nodes: root, 1 level-1, 4 level-2
        assert_eq!(paths.iter().filter(|p| !p.is_existing()).count(), 6);
    }

    #[test]
    fn crp_prior_values() {
        let mut t = TopicTree::new(2, 0.1, Tokens(0)).unwrap();
        let new = CandidatePath {
            prefix: vec![0],
            depth: 2,
        };
        // empty level: new branch is certain
        assert!(t.path_log_prior(&new).unwrap().abs() < 1e-15);
        let p = t.attach(0, &new, |_| Tokens(0)).unwrap();
        t.attach_existing(1, &p).unwrap();
        t.attach_existing(2, &p).unwrap();
        let existing = CandidatePath::from(&p);
        assert!((t.path_log_prior(&existing).unwrap() - (3.0f64 / 3.1).ln()).abs() < 1e-14);
        assert!((t.path_log_prior(&new).unwrap() - (0.1f64 / 3.1).ln()).abs() < 1e-14);
    }

    #[test]
    fn attach_candidate_creates_fresh_nodes_and_detach_collects() {
        let mut t = chain(4);
        let cand = CandidatePath {
            prefix: vec![0],
            depth: 4,
        };
        let before = t.node_count();
        let p = t.attach(7, &cand, |_| Tokens(0)).unwrap();
        assert_eq!(t.node_count(), before + 3);
        assert!(p.nodes()[1..].iter().all(|&id| id >= 4));
        t.detach(7).unwrap();
        assert_eq!(t.node_count(), before);
        assert_eq!(t.detach(7), Err(TreeError::NotAttached(7)));
    }

    #[test]
    fn detach_removes_only_the_empty_leaf() {
        let mut t = TopicTree::complete(&[1, 2], 0.1, |_| Tokens(0)).unwrap();
        let paths = t.existing_paths();
        t.attach_existing(0, &paths[0]).unwrap();
        t.attach_existing(1, &paths[1]).unwrap();
        t.detach(1).unwrap();
        assert_eq!(t.node_count(), 2);
        assert!(t.node(paths[0].leaf()).is_some());
        assert!(t.node(paths[1].leaf()).is_none());
    }

    #[test]
    fn detach_refuses_to_collect_nonempty_payload() {
        let mut t = chain(2);
        t.payload_mut(1).unwrap().0 = 3;
        assert!(matches!(t.detach(0), Err(TreeError::NonEmptyPayload { node: 1, tokens: 3 })));
    }

    #[test]
    fn ids_are_not_reused() {
        let mut t = chain(2);
        let cand = CandidatePath {
            prefix: vec![0],
            depth: 2,
        };
        let a = t.attach(1, &cand, |_| Tokens(0)).unwrap().leaf();
        t.detach(1).unwrap();
        let b = t.attach(1, &cand, |_| Tokens(0)).unwrap().leaf();
        assert!(b > a);
    }

    #[test]
    fn inconsistent_path_is_rejected() {
        let t = TopicTree::complete(&[1, 2, 2], 0.1, |_| Tokens(0)).unwrap();
        let bogus = CandidatePath {
            prefix: vec![0, 1, 5],
            depth: 3,
        };
        assert!(matches!(t.path_log_prior(&bogus), Err(TreeError::InconsistentPath(_))));
    }

    #[test]
    fn snapshot_roundtrip() {
        let mut t = TopicTree::complete(&[1, 2, 2], 0.5, |_| Tokens(0)).unwrap();
        let paths = t.existing_paths();
        t.attach_existing(0, &paths[3]).unwrap();
        t.prune().unwrap();
        let snap = t.snapshot();
        let mut u = TopicTree::from_snapshot(&snap, |_| Tokens(0)).unwrap();
        u.attach_existing(0, &t.path_of(0).unwrap()).unwrap();
        assert_eq!(u.snapshot(), snap);
    }
}
