//! Union-find and minimum-norm flows on bipartite active graphs.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use faer::Side;

use crate::error::{Error, Result};

/// Disjoint sets with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return false;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
        true
    }
}

/// Minimum-Euclidean-norm solution of `sum_{e incident to v} x_e = demand_v`.
///
/// The graph is bipartite, so the node-edge incidence is unsigned and every
/// cycle is even. Forest components are solved exactly by peeling leaves.
/// Components with cycles use `x = B^T y` with `B B^T y = demand`; flipping
/// the sign of one colour class turns `B B^T` into the graph Laplacian, which
/// is factored sparsely with one node grounded per component.
///
/// `tol` is the absolute imbalance allowed per component before the system is
/// declared inconsistent.
pub fn min_norm_flow(
    n_nodes: usize,
    ends: &[(usize, usize)],
    demand: &[f64],
    tol: f64,
) -> Result<Vec<f64>> {
    let n_edges = ends.len();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_nodes];
    for (e, &(a, b)) in ends.iter().enumerate() {
        adj[a].push((b, e));
        adj[b].push((a, e));
    }

    let mut x = vec![0.0; n_edges];
    let mut visited = vec![false; n_nodes];
    let mut parent_edge = vec![usize::MAX; n_nodes];
    let mut parent = vec![usize::MAX; n_nodes];
    let mut sign = vec![0.0; n_nodes];
    let mut left = vec![0.0; n_nodes];
    // components with cycles: (root, members)
    let mut cyclic: Vec<(usize, Vec<usize>)> = Vec::new();

    let mut order = Vec::new();
    for root in 0..n_nodes {
        if visited[root] {
            continue;
        }
        visited[root] = true;
        if adj[root].is_empty() {
            if demand[root].abs() > tol {
                return Err(Error::InconsistentSystem {
                    residual: demand[root],
                });
            }
            continue;
        }
        order.clear();
        order.push(root);
        sign[root] = 1.0;
        let mut head = 0;
        let mut degree_sum = 0;
        while head < order.len() {
            let v = order[head];
            head += 1;
            degree_sum += adj[v].len();
            for &(w, e) in &adj[v] {
                if !visited[w] {
                    visited[w] = true;
                    parent[w] = v;
                    parent_edge[w] = e;
                    sign[w] = -sign[v];
                    order.push(w);
                }
            }
        }
        for &v in &order {
            left[v] = demand[v];
        }
        // reverse BFS order: each node's parent edge carries what is left of its demand
        for &v in order[1..].iter().rev() {
            x[parent_edge[v]] = left[v];
            left[parent[v]] -= left[v];
        }
        if left[root].abs() > tol {
            return Err(Error::InconsistentSystem { residual: left[root] });
        }
        if degree_sum / 2 >= order.len() {
            cyclic.push((root, order.clone()));
        }
    }
    if cyclic.is_empty() {
        return Ok(x);
    }

    let mut index = vec![usize::MAX; n_nodes];
    let mut nodes = Vec::new();
    for (root, members) in &cyclic {
        for &v in members {
            if v != *root {
                index[v] = nodes.len();
                nodes.push(v);
            }
        }
    }
    let dim = nodes.len();
    let mut trip = Vec::with_capacity(dim + n_edges);
    for (k, &v) in nodes.iter().enumerate() {
        trip.push(Triplet::new(k, k, adj[v].len() as f64));
    }
    let mut cyc_edges = Vec::new();
    for (e, &(a, b)) in ends.iter().enumerate() {
        // every edge of a cyclic component has a non-grounded endpoint
        if index[a] == usize::MAX && index[b] == usize::MAX {
            continue;
        }
        cyc_edges.push(e);
        let (ia, ib) = (index[a], index[b]);
        if ia != usize::MAX && ib != usize::MAX {
            let (hi, lo) = if ia > ib { (ia, ib) } else { (ib, ia) };
            trip.push(Triplet::new(hi, lo, -1.0));
        }
    }
    let lap = SparseColMat::<usize, f64>::try_new_from_triplets(dim, dim, &trip)
        .map_err(|_| Error::InconsistentSystem { residual: f64::NAN })?;
    let llt = lap
        .sp_cholesky(Side::Lower)
        .map_err(|_| Error::InconsistentSystem { residual: f64::NAN })?;

    let mut rhs = Col::<f64>::from_fn(dim, |k| sign[nodes[k]] * demand[nodes[k]]);
    llt.solve_in_place(rhs.as_mat_mut());
    let flow_of = |z: &Col<f64>, e: usize| -> f64 {
        let (a, b) = ends[e];
        let za = if index[a] == usize::MAX { 0.0 } else { z[index[a]] };
        let zb = if index[b] == usize::MAX { 0.0 } else { z[index[b]] };
        sign[a] * (za - zb)
    };
    for &e in &cyc_edges {
        x[e] = flow_of(&rhs, e);
    }

    // one step of iterative refinement on the conservation residual
    let mut res = vec![0.0; n_nodes];
    for &e in &cyc_edges {
        let (a, b) = ends[e];
        res[a] += x[e];
        res[b] += x[e];
    }
    let mut corr = Col::<f64>::from_fn(dim, |k| {
        let v = nodes[k];
        sign[v] * (demand[v] - res[v])
    });
    llt.solve_in_place(corr.as_mat_mut());
    for &e in &cyc_edges {
        x[e] += flow_of(&corr, e);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual(n: usize, ends: &[(usize, usize)], x: &[f64], b: &[f64]) -> f64 {
        let mut s = vec![0.0; n];
        for (e, &(a, c)) in ends.iter().enumerate() {
            s[a] += x[e];
            s[c] += x[e];
        }
        s.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn tree_flow_is_exact() {
        // sources 0,1; sinks 2,3; path 0-2-1-3
        let ends = [(0, 2), (1, 2), (1, 3)];
        let b = [1.0, 2.0, 1.5, 1.5];
        let x = min_norm_flow(4, &ends, &b, 1e-12).unwrap();
        assert!(residual(4, &ends, &x, &b) < 1e-14);
        assert_eq!(x, vec![1.0, 0.5, 1.5]);
    }

    #[test]
    fn inconsistent_demand_is_reported() {
        let ends = [(0, 1)];
        let err = min_norm_flow(2, &ends, &[1.0, 2.0], 1e-12).unwrap_err();
        assert!(matches!(err, Error::InconsistentSystem { .. }));
    }

    #[test]
    fn complete_bipartite_gets_uniform_flow() {
        // K_{2,3}: sources 0,1 demand 1.5, sinks 2,3,4 demand 1
        let mut ends = Vec::new();
        for s in 0..2 {
            for t in 2..5 {
                ends.push((s, t));
            }
        }
        let b = [1.5, 1.5, 1.0, 1.0, 1.0];
        let x = min_norm_flow(5, &ends, &b, 1e-12).unwrap();
        assert!(residual(5, &ends, &x, &b) < 1e-13);
        for v in x {
            assert!((v - 0.5).abs() < 1e-13);
        }
    }

    #[test]
    fn min_norm_is_orthogonal_to_cycles() {
        // 4-cycle 0-2-1-3-0 plus a pendant sink 4 on source 0
        let ends = [(0, 2), (1, 2), (1, 3), (0, 3), (0, 4)];
        let b = [3.0, 1.0, 1.0, 2.0, 1.0];
        let x = min_norm_flow(5, &ends, &b, 1e-12).unwrap();
        assert!(residual(5, &ends, &x, &b) < 1e-13);
        let cyc = x[0] - x[1] + x[2] - x[3];
        assert!(cyc.abs() < 1e-13);
    }
}
