use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Directed acyclic graph over nodes `0..d` with a reference topological order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "DagRepr", into = "DagRepr")]
pub struct Dag {
    d: usize,
    edges: Vec<(usize, usize)>,
    topo_order: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct DagRepr {
    d: usize,
    edges: Vec<(usize, usize)>,
    topo_order: Vec<usize>,
}

impl TryFrom<DagRepr> for Dag {
    type Error = crate::Error;
    fn try_from(r: DagRepr) -> Result<Self> {
        Dag::new(r.d, r.edges, r.topo_order)
    }
}

impl From<Dag> for DagRepr {
    fn from(g: Dag) -> Self {
        DagRepr {
            d: g.d,
            edges: g.edges,
            topo_order: g.topo_order,
        }
    }
}

pub fn is_permutation(order: &[usize], d: usize) -> bool {
    if order.len() != d {
        return false;
    }
    let mut seen = vec![false; d];
    for &v in order {
        if v >= d || seen[v] {
            return false;
        }
        seen[v] = true;
    }
    true
}

/// `positions[node]` for an order listing nodes first to last.
pub fn positions(order: &[usize]) -> Vec<usize> {
    let mut pos = vec![0; order.len()];
    for (p, &v) in order.iter().enumerate() {
        pos[v] = p;
    }
    pos
}

impl Dag {
    /// Validates that `topo_order` is a permutation every edge respects.
    pub fn new(d: usize, edges: Vec<(usize, usize)>, topo_order: Vec<usize>) -> Result<Self> {
        if d == 0 {
            return Err(invalid("dag needs at least one node"));
        }
        if !is_permutation(&topo_order, d) {
            return Err(invalid("topo_order is not a permutation of the nodes"));
        }
        let set: BTreeSet<(usize, usize)> = edges.into_iter().collect();
        let pos = positions(&topo_order);
        for &(p, c) in &set {
            if p >= d || c >= d {
                return Err(invalid(format!("edge ({p}, {c}) references a missing node")));
            }
            if pos[p] >= pos[c] {
                return Err(invalid(format!("edge ({p}, {c}) violates the topological order")));
            }
        }
        Ok(Self {
            d,
            edges: set.into_iter().collect(),
            topo_order,
        })
    }

    /// Builds a DAG from edges alone, deriving a topological order with
    /// Kahn's algorithm (smallest index first). Fails on cycles.
    pub fn from_edges(d: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut indeg = vec![0usize; d];
        let mut children = vec![Vec::new(); d];
        for &(p, c) in &edges {
            if p >= d || c >= d {
                return Err(invalid(format!("edge ({p}, {c}) references a missing node")));
            }
            indeg[c] += 1;
            children[p].push(c);
        }
        let mut ready: BTreeSet<usize> = (0..d).filter(|&v| indeg[v] == 0).collect();
        let mut order = Vec::with_capacity(d);
        while let Some(v) = ready.pop_first() {
            order.push(v);
            for &c in &children[v] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() != d {
            return Err(invalid("edge set contains a cycle"));
        }
        Self::new(d, edges, order)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn topo_order(&self) -> &[usize] {
        &self.topo_order
    }

    pub fn parents(&self, node: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.1 == node).map(|e| e.0).collect()
    }

    pub fn in_degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|e| e.1 == node).count()
    }

    pub fn is_root(&self, node: usize) -> bool {
        self.in_degree(node) == 0
    }

    pub fn has_edge(&self, parent: usize, child: usize) -> bool {
        self.edges.binary_search(&(parent, child)).is_ok()
    }

    /// True when `order` is a topological order of this graph.
    pub fn is_topological(&self, order: &[usize]) -> bool {
        if !is_permutation(order, self.d) {
            return false;
        }
        let pos = positions(order);
        self.edges.iter().all(|&(p, c)| pos[p] < pos[c])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_backward_edges_and_cycles() {
        assert!(Dag::new(2, vec![(1, 0)], vec![0, 1]).is_err());
        assert!(Dag::new(2, vec![(0, 1)], vec![0, 0]).is_err());
        assert!(Dag::from_edges(3, vec![(0, 1), (1, 2), (2, 0)]).is_err());
        let g = Dag::from_edges(3, vec![(2, 0), (0, 1)]).unwrap();
        assert_eq!(g.topo_order(), &[2, 0, 1]);
        assert_eq!(g.parents(1), vec![0]);
    }

    #[test]
    fn json_validates_on_load() {
        let g = Dag::new(3, vec![(0, 2)], vec![1, 0, 2]).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(serde_json::from_str::<Dag>(&s).unwrap(), g);
        assert!(serde_json::from_str::<Dag>(r#"{"d":2,"edges":[[1,0]],"topo_order":[0,1]}"#).is_err());
    }
}
