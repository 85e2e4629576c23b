use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{ci_test_idx, estimate_joint, ContingencyTable};
use crate::error::{Error, Result};
use crate::scmdata::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PcOptions {
    pub alpha: f64,
    pub max_cond: usize,
}

impl Default for PcOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            max_cond: 3,
        }
    }
}

/// Partially directed graph. Undirected edges are stored as `(min, max)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalGraph {
    nodes: Vec<String>,
    directed: BTreeSet<(usize, usize)>,
    undirected: BTreeSet<(usize, usize)>,
    sepsets: BTreeMap<(usize, usize), Vec<usize>>,
}

/// Name-based edge listing for reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphEdges {
    pub directed: Vec<(String, String)>,
    pub undirected: Vec<(String, String)>,
}

fn key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl CausalGraph {
    pub fn empty(nodes: Vec<String>) -> Self {
        Self {
            nodes,
            directed: BTreeSet::new(),
            undirected: BTreeSet::new(),
            sepsets: BTreeMap::new(),
        }
    }

    fn complete(nodes: Vec<String>) -> Self {
        let mut g = Self::empty(nodes);
        for i in 0..g.nodes.len() {
            for j in i + 1..g.nodes.len() {
                g.undirected.insert((i, j));
            }
        }
        g
    }

    /// Graph from named `(from, to)` directed and `(a, b)` undirected edges.
    pub fn from_edges(nodes: &[&str], directed: &[(&str, &str)], undirected: &[(&str, &str)]) -> Result<Self> {
        let mut g = Self::empty(nodes.iter().map(|s| s.to_string()).collect());
        for (a, b) in directed {
            let (i, j) = (g.index_of(a)?, g.index_of(b)?);
            if g.adjacent(i, j) {
                return Err(Error::InvalidArgument(format!("duplicate edge {a}-{b}")));
            }
            g.directed.insert((i, j));
        }
        for (a, b) in undirected {
            let (i, j) = (g.index_of(a)?, g.index_of(b)?);
            if g.adjacent(i, j) {
                return Err(Error::InvalidArgument(format!("duplicate edge {a}-{b}")));
            }
            g.undirected.insert(key(i, j));
        }
        if !g.is_acyclic() {
            return Err(Error::InvalidArgument("directed edges form a cycle".into()));
        }
        Ok(g)
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.nodes
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.undirected.contains(&key(a, b)) || self.directed.contains(&(a, b)) || self.directed.contains(&(b, a))
    }

    pub fn is_directed(&self, from: usize, to: usize) -> bool {
        self.directed.contains(&(from, to))
    }

    pub fn is_undirected(&self, a: usize, b: usize) -> bool {
        self.undirected.contains(&key(a, b))
    }

    pub fn neighbors(&self, a: usize) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&b| b != a && self.adjacent(a, b)).collect()
    }

    pub fn parents(&self, a: usize) -> Vec<usize> {
        self.directed.iter().filter(|e| e.1 == a).map(|e| e.0).collect()
    }

    pub fn undirected_neighbors(&self, a: usize) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&b| b != a && self.is_undirected(a, b)).collect()
    }

    pub fn has_undirected(&self) -> bool {
        !self.undirected.is_empty()
    }

    /// Separating set recorded when the pair's edge was removed.
    pub fn sepset(&self, a: &str, b: &str) -> Option<Vec<String>> {
        let (i, j) = (self.index_of(a).ok()?, self.index_of(b).ok()?);
        self.sepsets
            .get(&key(i, j))
            .map(|s| s.iter().map(|&v| self.nodes[v].clone()).collect())
    }

    pub fn edges(&self) -> GraphEdges {
        let name = |&(a, b): &(usize, usize)| (self.nodes[a].clone(), self.nodes[b].clone());
        GraphEdges {
            directed: self.directed.iter().map(name).collect(),
            undirected: self.undirected.iter().map(name).collect(),
        }
    }

    /// True if the directed part has no cycle.
    pub fn is_acyclic(&self) -> bool {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        for &(_, b) in &self.directed {
            indeg[b] += 1;
        }
        let mut stack: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
        let mut seen = 0;
        while let Some(v) = stack.pop() {
            seen += 1;
            for &(a, b) in &self.directed {
                if a == v {
                    indeg[b] -= 1;
                    if indeg[b] == 0 {
                        stack.push(b);
                    }
                }
            }
        }
        seen == n
    }

    /// Turns `a − b` into `a → b` unless that closes a directed cycle.
    fn orient(&mut self, a: usize, b: usize) -> bool {
        if !self.undirected.remove(&key(a, b)) {
            return false;
        }
        self.directed.insert((a, b));
        if self.is_acyclic() {
            true
        } else {
            self.directed.remove(&(a, b));
            self.undirected.insert(key(a, b));
            false
        }
    }

    /// Meek rules R1–R3 to a fixed point.
    pub(crate) fn apply_meek(&mut self) {
        loop {
            let mut changed = false;
            let undirected: Vec<(usize, usize)> = self.undirected.iter().copied().collect();
            for (x, y) in undirected {
                for (a, b) in [(x, y), (y, x)] {
                    if !self.is_undirected(a, b) {
                        continue;
                    }
                    if self.meek_r1(a, b) || self.meek_r2(a, b) || self.meek_r3(a, b) {
                        changed |= self.orient(a, b);
                    }
                }
            }
            if !changed {
                return;
            }
        }
    }

    /// R1: some `c → a` with `c` not adjacent to `b`.
    fn meek_r1(&self, a: usize, b: usize) -> bool {
        self.parents(a).into_iter().any(|c| c != b && !self.adjacent(c, b))
    }

    /// R2: a directed path `a → c → b`.
    fn meek_r2(&self, a: usize, b: usize) -> bool {
        (0..self.nodes.len()).any(|c| self.is_directed(a, c) && self.is_directed(c, b))
    }

    /// R3: `a − c → b` and `a − d → b` with `c`, `d` non-adjacent.
    fn meek_r3(&self, a: usize, b: usize) -> bool {
        let cands: Vec<usize> = self
            .undirected_neighbors(a)
            .into_iter()
            .filter(|&c| c != b && self.is_directed(c, b))
            .collect();
        cands
            .iter()
            .enumerate()
            .any(|(i, &c)| cands[i + 1..].iter().any(|&d| !self.adjacent(c, d)))
    }
}

fn subsets(items: &[usize], size: usize) -> Vec<Vec<usize>> {
    if size == 0 {
        return vec![Vec::new()];
    }
    if items.len() < size {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (i, &first) in items.iter().enumerate() {
        for mut rest in subsets(&items[i + 1..], size - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// PC-stable over every variable of `table`: skeleton, v-structures, Meek closure.
pub fn pc_from_table(table: &ContingencyTable, opts: &PcOptions) -> Result<CausalGraph> {
    let n = table.names().len();
    if n < 2 {
        return Err(Error::InvalidArgument("discovery needs at least two variables".into()));
    }
    let mut g = CausalGraph::complete(table.names().to_vec());
    for level in 0..=opts.max_cond {
        let snapshot: Vec<Vec<usize>> = (0..n).map(|v| g.neighbors(v)).collect();
        if snapshot.iter().all(|adj| adj.len() <= level) {
            break;
        }
        for i in 0..n {
            for &j in &snapshot[i] {
                if !g.adjacent(i, j) {
                    continue;
                }
                let others: Vec<usize> = snapshot[i].iter().copied().filter(|&v| v != j).collect();
                for s in subsets(&others, level) {
                    if ci_test_idx(table, i, j, &s, opts.alpha)?.independent {
                        g.undirected.remove(&key(i, j));
                        g.sepsets.insert(key(i, j), s);
                        break;
                    }
                }
            }
        }
    }
    for b in 0..n {
        let adj = g.neighbors(b);
        for (x, &a) in adj.iter().enumerate() {
            for &c in &adj[x + 1..] {
                if g.adjacent(a, c) {
                    continue;
                }
                let sep = g.sepsets.get(&key(a, c)).cloned().unwrap_or_default();
                if sep.contains(&b) {
                    continue;
                }
                // Conflicting v-structures keep whichever orientation came first.
                if g.is_undirected(a, b) && !g.is_directed(b, c) {
                    g.orient(a, b);
                }
                if g.is_undirected(c, b) && !g.is_directed(b, a) {
                    g.orient(c, b);
                }
            }
        }
    }
    g.apply_meek();
    Ok(g)
}

/// PC discovery over the named discrete columns of `data`.
pub fn pc_discover(data: &Dataset, variables: &[&str], opts: &PcOptions) -> Result<CausalGraph> {
    pc_from_table(&estimate_joint(data, variables)?, opts)
}

/// Applies background knowledge: every edge between different tiers points
/// from the lower tier to the higher one, overriding any orientation PC chose,
/// then the Meek rules close the rest. Edges within a tier keep their PC state.
pub fn orient_by_tiers(graph: &CausalGraph, tiers: &[usize]) -> Result<CausalGraph> {
    if tiers.len() != graph.nodes.len() {
        return Err(Error::LengthMismatch {
            expected: graph.nodes.len(),
            actual: tiers.len(),
            context: "tier assignment",
        });
    }
    let mut g = graph.clone();
    // Every cross-tier edge ends up pointing upward, so no cycle can use one.
    let against: Vec<(usize, usize)> = g.directed.iter().copied().filter(|&(a, b)| tiers[a] > tiers[b]).collect();
    for (a, b) in against {
        g.directed.remove(&(a, b));
        g.directed.insert((b, a));
    }
    let across: Vec<(usize, usize)> = g.undirected.iter().copied().filter(|&(a, b)| tiers[a] != tiers[b]).collect();
    for (a, b) in across {
        g.undirected.remove(&key(a, b));
        g.directed.insert(if tiers[a] < tiers[b] { (a, b) } else { (b, a) });
    }
    debug_assert!(g.is_acyclic());
    g.apply_meek();
    Ok(g)
}

/// Parents of the treatment; requires a fully directed graph.
pub fn backdoor_set(graph: &CausalGraph, treatment: &str, outcome: &str) -> Result<Vec<String>> {
    let t = graph.index_of(treatment)?;
    let o = graph.index_of(outcome)?;
    if t == o {
        return Err(Error::InvalidArgument("treatment and outcome must differ".into()));
    }
    if graph.has_undirected() {
        return Err(Error::Identification(
            "graph still has undirected edges; orient them or supply an adjustment set".into(),
        ));
    }
    Ok(graph.parents(t).into_iter().map(|p| graph.nodes[p].clone()).collect())
}

/// Parents of the treatment plus any still-undirected neighbours other than the outcome.
///
/// Treating an unresolved neighbour as a potential confounder is the
/// conservative reading when background knowledge cannot orient the edge.
pub fn adjustment_set(graph: &CausalGraph, treatment: &str, outcome: &str) -> Result<Vec<String>> {
    let t = graph.index_of(treatment)?;
    let o = graph.index_of(outcome)?;
    if t == o {
        return Err(Error::InvalidArgument("treatment and outcome must differ".into()));
    }
    let mut set: BTreeSet<usize> = graph.parents(t).into_iter().collect();
    set.extend(graph.undirected_neighbors(t).into_iter().filter(|&v| v != o));
    Ok(set.into_iter().map(|v| graph.nodes[v].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scmdata::{presets, sample_scm};

    #[test]
    fn backdoor_examples() {
        let g = CausalGraph::from_edges(&["A", "Y"], &[("A", "Y")], &[]).unwrap();
        assert!(backdoor_set(&g, "A", "Y").unwrap().is_empty());
        let g = CausalGraph::from_edges(&["Z", "A", "Y"], &[("Z", "A"), ("Z", "Y"), ("A", "Y")], &[]).unwrap();
        assert_eq!(backdoor_set(&g, "A", "Y").unwrap(), vec!["Z"]);
        let g = CausalGraph::from_edges(&["A", "M", "Y"], &[("A", "M"), ("M", "Y")], &[]).unwrap();
        assert!(backdoor_set(&g, "A", "Y").unwrap().is_empty());
        let g = CausalGraph::from_edges(&["A", "M", "Y"], &[], &[("A", "M")]).unwrap();
        assert!(matches!(backdoor_set(&g, "A", "Y"), Err(Error::Identification(_))));
        assert!(CausalGraph::from_edges(&["A", "B"], &[("A", "B"), ("B", "A")], &[]).is_err());
    }

    #[test]
    fn meek_rules() {
        // R1: a → b − c, a ⟂ c  ⇒  b → c
        let mut g = CausalGraph::from_edges(&["a", "b", "c"], &[("a", "b")], &[("b", "c")]).unwrap();
        g.apply_meek();
        assert!(g.is_directed(1, 2));
        // R2: a → c → b, a − b ⇒ a → b
        let mut g = CausalGraph::from_edges(&["a", "b", "c"], &[("a", "c"), ("c", "b")], &[("a", "b")]).unwrap();
        g.apply_meek();
        assert!(g.is_directed(0, 1));
        // R3: a − c → b, a − d → b, c ⟂ d, a − b ⇒ a → b
        let mut g = CausalGraph::from_edges(
            &["a", "b", "c", "d"],
            &[("c", "b"), ("d", "b")],
            &[("a", "b"), ("a", "c"), ("a", "d")],
        )
        .unwrap();
        g.apply_meek();
        assert!(g.is_directed(0, 1));
        assert!(g.is_acyclic());
    }

    #[test]
    fn tiers_orient_and_adjust() {
        let g = CausalGraph::from_edges(&["A", "M", "Y"], &[], &[("A", "M"), ("M", "Y")]).unwrap();
        let o = orient_by_tiers(&g, &[0, 1, 2]).unwrap();
        assert!(o.is_directed(0, 1) && o.is_directed(1, 2));
        assert!(adjustment_set(&o, "A", "Y").unwrap().is_empty());
        let g = CausalGraph::from_edges(&["Z", "A", "Y"], &[("A", "Y"), ("Z", "Y")], &[("Z", "A")]).unwrap();
        let o = orient_by_tiers(&g, &[0, 0, 1]).unwrap();
        assert_eq!(adjustment_set(&o, "A", "Y").unwrap(), vec!["Z"]);
        // A spurious collider at A points the label into an attribute; tiers reverse it.
        let g = CausalGraph::from_edges(&["A", "B", "Y"], &[("Y", "A"), ("B", "A")], &[]).unwrap();
        let o = orient_by_tiers(&g, &[0, 0, 1]).unwrap();
        assert!(o.is_directed(0, 2) && o.is_directed(1, 0));
        assert!(o.is_acyclic());
        assert_eq!(adjustment_set(&o, "A", "Y").unwrap(), vec!["B"]);
    }

    #[test]
    fn chain_and_collider_recovery() {
        let opts = PcOptions {
            alpha: 0.01,
            max_cond: 3,
        };
        let d = sample_scm(&presets::chain().build().unwrap(), 20_000, 1).unwrap();
        let g = pc_discover(&d, &["a1", "m1", "y"], &opts).unwrap();
        assert!(g.adjacent(0, 1) && g.adjacent(1, 2) && !g.adjacent(0, 2));
        assert_eq!(g.sepset("a1", "y").unwrap(), vec!["m1"]);
        assert!(!g.is_directed(0, 1) && !g.is_directed(1, 0));

        let d = sample_scm(&presets::collider().build().unwrap(), 20_000, 1).unwrap();
        let g = pc_discover(&d, &["a1", "m1", "y"], &opts).unwrap();
        assert!(g.is_directed(0, 2) && g.is_directed(1, 2) && !g.adjacent(0, 1));

        let d = sample_scm(&presets::null_pair().build().unwrap(), 5_000, 1).unwrap();
        let g = pc_discover(&d, &["a1", "y"], &opts).unwrap();
        assert!(!g.adjacent(0, 1));
    }
}
