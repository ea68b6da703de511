//! Patch graph: every instance is an edge from the hash of its vulnerable
//! function text to the hash of its patched function text. Patches that were
//! later modified show up as chains, patches that were reverted as cycles.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::VulnInstance;

/// SHA-256 of the exact function text, hex encoded.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(String);

impl NodeId {
    pub fn of(code: &str) -> Self {
        NodeId(hex::encode(Sha256::digest(code.as_bytes())))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0[..12])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchEdge {
    pub head: NodeId,
    pub tail: NodeId,
    pub instance_id: String,
}

#[derive(Debug, Clone, Default)]
pub struct PatchGraph {
    pub nodes: BTreeSet<NodeId>,
    /// One edge per instance, in input order.
    pub edges: Vec<PatchEdge>,
}

pub fn build_patch_graph(instances: &[VulnInstance]) -> PatchGraph {
    let mut g = PatchGraph::default();
    for inst in instances {
        let head = NodeId::of(&inst.vulnerable_code);
        let tail = NodeId::of(&inst.patched_code);
        g.nodes.insert(head.clone());
        g.nodes.insert(tail.clone());
        g.edges.push(PatchEdge { head, tail, instance_id: inst.instance_id.clone() });
    }
    g
}

impl PatchGraph {
    pub fn out_degree(&self, node: &NodeId) -> usize {
        self.edges.iter().filter(|e| &e.head == node).count()
    }

    /// Nodes that lie on at least one directed cycle (including self-loops).
    pub fn cycle_nodes(&self) -> BTreeSet<NodeId> {
        let mut g: DiGraph<NodeId, ()> = DiGraph::new();
        let idx: BTreeMap<&NodeId, NodeIndex> =
            self.nodes.iter().map(|n| (n, g.add_node(n.clone()))).collect();
        let mut self_loops = BTreeSet::new();
        for e in &self.edges {
            if e.head == e.tail {
                self_loops.insert(e.head.clone());
            }
            g.add_edge(idx[&e.head], idx[&e.tail], ());
        }
        let mut out = self_loops;
        for scc in tarjan_scc(&g) {
            if scc.len() > 1 {
                out.extend(scc.into_iter().map(|i| g[i].clone()));
            }
        }
        out
    }
}

/// Why an instance was dropped by [`filter_reverted`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Removal {
    /// The patched code was modified again later (not the final edge).
    Chain,
    /// The edge touches a node on a cycle: the patch was reverted.
    Loop,
}

#[derive(Debug, Clone, Default)]
pub struct FilterOutcome {
    pub retained: Vec<VulnInstance>,
    /// `(instance_id, reason)` in input order.
    pub removed: Vec<(String, Removal)>,
    /// Nodes with more than one outgoing edge outside any cycle. Each
    /// root-to-leaf path through them is treated as its own chain.
    pub branch_nodes: Vec<NodeId>,
}

impl FilterOutcome {
    pub fn count(&self, why: Removal) -> usize {
        self.removed.iter().filter(|(_, r)| *r == why).count()
    }
}

/// Keeps only final-edge pairs of chains and drops every pair touching a
/// cycle. An edge survives iff neither endpoint is on a cycle and its tail
/// has no outgoing edge.
pub fn filter_reverted(graph: &PatchGraph, instances: &[VulnInstance]) -> FilterOutcome {
    let cyclic = graph.cycle_nodes();
    let mut out_deg: BTreeMap<&NodeId, usize> = BTreeMap::new();
    for e in &graph.edges {
        *out_deg.entry(&e.head).or_default() += 1;
    }
    let by_id: BTreeMap<&str, &PatchEdge> =
        graph.edges.iter().map(|e| (e.instance_id.as_str(), e)).collect();

    let mut out = FilterOutcome::default();
    for inst in instances {
        let edge = by_id.get(inst.instance_id.as_str()).copied();
        let (head, tail) = match edge {
            Some(e) => (e.head.clone(), e.tail.clone()),
            None => (NodeId::of(&inst.vulnerable_code), NodeId::of(&inst.patched_code)),
        };
        if cyclic.contains(&head) || cyclic.contains(&tail) {
            out.removed.push((inst.instance_id.clone(), Removal::Loop));
        } else if out_deg.get(&tail).copied().unwrap_or(0) > 0 {
            out.removed.push((inst.instance_id.clone(), Removal::Chain));
        } else {
            out.retained.push(inst.clone());
        }
    }

    out.branch_nodes = out_deg
        .iter()
        .filter(|(n, d)| **d > 1 && !cyclic.contains(**n))
        .map(|(n, _)| (*n).clone())
        .collect();
    for n in &out.branch_nodes {
        tracing::info!(node = %n, "branching patch node; each path filtered as its own chain");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(id: &str, from: &str, to: &str) -> VulnInstance {
        VulnInstance {
            instance_id: id.into(),
            cve_id: "CVE-2020-0001".into(),
            cwe_id: "CWE-416".into(),
            cve_description: String::new(),
            vulnerable_code: from.into(),
            patched_code: to.into(),
            patch_diff: String::new(),
        }
    }

    fn ids(v: &[VulnInstance]) -> Vec<&str> {
        v.iter().map(|i| i.instance_id.as_str()).collect()
    }

    #[test]
    fn node_identity_is_exact_text() {
        assert_eq!(NodeId::of("a b"), NodeId::of("a b"));
        assert_ne!(NodeId::of("a b"), NodeId::of("a  b"));
    }

    #[test]
    fn shapes() {
        let g = build_patch_graph(&[inst("1", "A", "B")]);
        assert_eq!((g.nodes.len(), g.edges.len()), (2, 1));
        let g = build_patch_graph(&[inst("1", "A", "B"), inst("2", "B", "C")]);
        assert_eq!((g.nodes.len(), g.edges.len()), (3, 2));
        let g = build_patch_graph(&[inst("1", "A", "B"), inst("2", "B", "A")]);
        assert_eq!((g.nodes.len(), g.edges.len()), (2, 2));
    }

    #[test]
    fn chain_keeps_final_edge() {
        let v = [inst("ab", "A", "B"), inst("bc", "B", "C")];
        let out = filter_reverted(&build_patch_graph(&v), &v);
        assert_eq!(ids(&out.retained), ["bc"]);
        assert_eq!(out.removed, [("ab".to_string(), Removal::Chain)]);
    }

    #[test]
    fn loop_removes_everything() {
        let v = [inst("ab", "A", "B"), inst("ba", "B", "A")];
        let out = filter_reverted(&build_patch_graph(&v), &v);
        assert!(out.retained.is_empty());
        assert_eq!(out.count(Removal::Loop), 2);
    }

    #[test]
    fn isolated_pair_survives() {
        let v = [inst("ab", "A", "B"), inst("cd", "C", "D")];
        let out = filter_reverted(&build_patch_graph(&v), &v);
        assert_eq!(ids(&out.retained), ["ab", "cd"]);
    }

    #[test]
    fn branch_paths_are_independent_chains() {
        let v = [inst("ab", "A", "B"), inst("bc", "B", "C"), inst("bd", "B", "D")];
        let out = filter_reverted(&build_patch_graph(&v), &v);
        assert_eq!(ids(&out.retained), ["bc", "bd"]);
        assert_eq!(out.branch_nodes, vec![NodeId::of("B")]);
    }
}
