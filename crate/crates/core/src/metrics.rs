//! Order and prediction quality measures, with the Sachs consensus network
//! and published per-condition orders as a reference fixture.

use serde::Serialize;

use crate::dag::{is_permutation, positions, Dag};
use crate::error::{invalid, Result};

/// Raw and edge-normalized topological divergence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Divergence {
    pub raw: usize,
    pub normalized: f64,
}

/// Number of edges `(i, j)` placed with `i` at or after `j`, and that count
/// divided by the edge count (0 for an edgeless graph).
pub fn topological_divergence(order: &[usize], dag: &Dag) -> Result<Divergence> {
    if !is_permutation(order, dag.d()) {
        return Err(invalid(format!("order {order:?} is not a permutation of {} nodes", dag.d())));
    }
    let pos = positions(order);
    let raw = dag.edges().iter().filter(|&&(i, j)| pos[i] >= pos[j]).count();
    let e = dag.edges().len();
    let normalized = if e == 0 { 0.0 } else { raw as f64 / e as f64 };
    Ok(Divergence { raw, normalized })
}

fn check_pair(a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() || !is_permutation(a, a.len()) || !is_permutation(b, b.len()) {
        return Err(invalid("orders must be permutations of the same node set"));
    }
    Ok(())
}

/// `position_c(node) − position_base(node)`; positive = moved downstream.
pub fn rank_shift(order_c: &[usize], order_base: &[usize], node: usize) -> Result<i64> {
    check_pair(order_c, order_base)?;
    if node >= order_c.len() {
        return Err(invalid(format!("node {node} absent from the order")));
    }
    Ok(positions(order_c)[node] as i64 - positions(order_base)[node] as i64)
}

/// Fraction of the other nodes whose relative order with `node` differs.
pub fn pairwise_flip_fraction(order_c: &[usize], order_base: &[usize], node: usize) -> Result<f64> {
    check_pair(order_c, order_base)?;
    let d = order_c.len();
    if d < 2 {
        return Err(invalid("flip fraction needs at least two nodes"));
    }
    if node >= d {
        return Err(invalid(format!("node {node} absent from the order")));
    }
    let (pc, pb) = (positions(order_c), positions(order_base));
    let flips = (0..d)
        .filter(|&y| y != node && (pc[node] < pc[y]) != (pb[node] < pb[y]))
        .count();
    Ok(flips as f64 / (d - 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderComparison {
    pub raw_violations: usize,
    pub normalized: f64,
    pub per_node_rank_shift: Vec<i64>,
    pub per_node_flip_fraction: Vec<f64>,
}

/// Divergence of `order_c` from `dag` plus per-node shifts against `order_base`.
pub fn compare_orders(order_c: &[usize], order_base: &[usize], dag: &Dag) -> Result<OrderComparison> {
    let div = topological_divergence(order_c, dag)?;
    let d = order_c.len();
    let per_node_rank_shift = (0..d).map(|v| rank_shift(order_c, order_base, v)).collect::<Result<_>>()?;
    let per_node_flip_fraction = (0..d)
        .map(|v| pairwise_flip_fraction(order_c, order_base, v))
        .collect::<Result<_>>()?;
    Ok(OrderComparison {
        raw_violations: div.raw,
        normalized: div.normalized,
        per_node_rank_shift,
        per_node_flip_fraction,
    })
}

/// Root mean squared error over the target cells.
pub fn imputation_rmse(truth: &[f64], imputed: &[f64], targets: &[bool]) -> Result<f64> {
    if truth.len() != imputed.len() || truth.len() != targets.len() {
        return Err(invalid("imputation_rmse: length mismatch"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..truth.len() {
        if targets[i] {
            let e = truth[i] - imputed[i];
            sum += e * e;
            count += 1;
        }
    }
    if count == 0 {
        return Err(invalid("imputation_rmse: empty target set"));
    }
    let rmse = (sum / count as f64).sqrt();
    if !rmse.is_finite() {
        return Err(crate::Error::NonFinite("imputation_rmse".into()));
    }
    Ok(rmse)
}

/// Mean squared error over the selected entries.
pub fn mse(truth: &[f64], predicted: &[f64], select: &[bool]) -> Result<f64> {
    imputation_rmse(truth, predicted, select).map(|r| r * r)
}

/// Mean Gaussian NLL of held-out cells.
pub fn heldout_nll(truth: &[f64], mean: &[f64], variance: &[f64], targets: &[bool]) -> Result<f64> {
    crate::training::gaussian_nll(truth, mean, variance, targets)
}

pub mod sachs {
    //! Consensus signalling network for the Sachs flow-cytometry data and
    //! the per-condition orders it is compared against.

    use crate::dag::Dag;

    pub const NODES: [&str; 11] = [
        "Raf", "Mek", "Plcg", "PIP2", "PIP3", "Erk", "Akt", "PKA", "PKC", "P38", "Jnk",
    ];

    pub const EDGES: [(&str, &str); 17] = [
        ("Raf", "Mek"),
        ("Mek", "Erk"),
        ("Plcg", "PIP2"),
        ("Plcg", "PIP3"),
        ("PIP3", "PIP2"),
        ("PIP3", "Akt"),
        ("PIP2", "PKC"),
        ("PKC", "Raf"),
        ("PKC", "Mek"),
        ("PKC", "Jnk"),
        ("PKC", "P38"),
        ("PKA", "Raf"),
        ("PKA", "Mek"),
        ("PKA", "Erk"),
        ("PKA", "Akt"),
        ("PKA", "Jnk"),
        ("PKA", "P38"),
    ];

    /// Baseline condition first.
    pub const CONDITION_ORDERS: [(&str, [&str; 11], usize); 9] = [
        ("cd3cd28", ["PKA", "PKC", "Plcg", "PIP3", "Erk", "Jnk", "Akt", "PIP2", "P38", "Mek", "Raf"], 3),
        ("cd3cd28_icam2", ["PKA", "PIP3", "PKC", "Plcg", "P38", "PIP2", "Jnk", "Akt", "Erk", "Raf", "Mek"], 3),
        ("cd3cd28_u0126", ["PKC", "Erk", "PKA", "Mek", "Raf", "Jnk", "Plcg", "PIP3", "P38", "PIP2", "Akt"], 4),
        ("cd3cd28_aktinhib", ["PKA", "Jnk", "Plcg", "PKC", "P38", "PIP2", "PIP3", "Erk", "Akt", "Mek", "Raf"], 5),
        ("cd3cd28icam2_aktinhib", ["PKA", "Plcg", "PKC", "PIP3", "P38", "PIP2", "Akt", "Jnk", "Raf", "Mek", "Erk"], 1),
        ("cd3cd28_g0076", ["P38", "PIP2", "Mek", "Jnk", "Plcg", "Raf", "Akt", "PIP3", "PKA", "PKC", "Erk"], 13),
        ("cd3cd28icam2_g0076", ["PKA", "Mek", "Akt", "PIP2", "Raf", "P38", "Plcg", "PIP3", "Jnk", "Erk", "PKC"], 8),
        ("cd3cd28_ly", ["PKA", "Plcg", "PKC", "PIP3", "Erk", "Jnk", "P38", "Akt", "PIP2", "Mek", "Raf"], 3),
        ("cd3cd28_psitect", ["PIP2", "Plcg", "PKA", "PIP3", "PKC", "Akt", "Jnk", "P38", "Erk", "Raf", "Mek"], 3),
    ];

    pub fn index(name: &str) -> Option<usize> {
        NODES.iter().position(|&n| n == name)
    }

    /// The 17-edge consensus graph over [`NODES`].
    pub fn consensus_dag() -> Dag {
        let edges = EDGES
            .iter()
            .map(|(a, b)| (index(a).expect("known node"), index(b).expect("known node")))
            .collect();
        Dag::from_edges(NODES.len(), edges).expect("consensus graph is acyclic")
    }

    pub fn order_indices(names: &[&str]) -> Vec<usize> {
        names.iter().map(|n| index(n).expect("known node")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> Dag {
        Dag::new(3, vec![(0, 1), (1, 2)], vec![0, 1, 2]).unwrap()
    }

    #[test]
    fn chain_divergence() {
        assert_eq!(topological_divergence(&[0, 1, 2], &chain()).unwrap().raw, 0);
        let rev = topological_divergence(&[2, 1, 0], &chain()).unwrap();
        assert_eq!((rev.raw, rev.normalized), (2, 1.0));
        assert!(topological_divergence(&[0, 0, 1], &chain()).is_err());
        let empty = Dag::new(2, vec![], vec![0, 1]).unwrap();
        assert_eq!(topological_divergence(&[1, 0], &empty).unwrap().normalized, 0.0);
    }

    #[test]
    fn sachs_violation_counts() {
        let g = sachs::consensus_dag();
        assert_eq!(g.edges().len(), 17);
        for (name, order, want) in sachs::CONDITION_ORDERS {
            let got = topological_divergence(&sachs::order_indices(&order), &g).unwrap();
            assert_eq!(got.raw, want, "{name}");
        }
    }

    #[test]
    fn rank_shift_examples() {
        let base = [0, 1, 2, 3, 4];
        for v in 0..5 {
            assert_eq!(rank_shift(&base, &base, v).unwrap(), 0);
        }
        assert_eq!(rank_shift(&[1, 2, 3, 4, 0], &base, 0).unwrap(), 4);
        let swapped = [0, 2, 1, 3, 4];
        assert_eq!(rank_shift(&swapped, &base, 1).unwrap(), 1);
        assert_eq!(rank_shift(&swapped, &base, 2).unwrap(), -1);
        assert!(rank_shift(&base, &base, 5).is_err());
    }

    #[test]
    fn flip_fraction_examples() {
        let base = [0, 1, 2, 3, 4];
        assert_eq!(pairwise_flip_fraction(&base, &base, 2).unwrap(), 0.0);
        let rev = [4, 3, 2, 1, 0];
        for v in 0..5 {
            assert_eq!(pairwise_flip_fraction(&rev, &base, v).unwrap(), 1.0);
        }
        assert_eq!(pairwise_flip_fraction(&[1, 2, 0, 3, 4], &base, 0).unwrap(), 0.5);
        assert!(pairwise_flip_fraction(&[0], &[0], 0).is_err());
    }

    #[test]
    fn rmse_examples() {
        let t = [1.0, 2.0, 3.0];
        assert_eq!(imputation_rmse(&t, &t, &[true; 3]).unwrap(), 0.0);
        assert_eq!(imputation_rmse(&t, &[2.0, 3.0, 4.0], &[true; 3]).unwrap(), 1.0);
        assert_eq!(imputation_rmse(&[0.0, 0.0], &[0.0, 2.0], &[true, true]).unwrap(), 2f64.sqrt());
        assert!(imputation_rmse(&t, &t, &[false; 3]).is_err());
    }
}
