//! Linear programs behind the worst-case bias.
//!
//! For a fixed arm, `max sum_i c_i f_i` subject to `f_i - f_j <= D(i, j)` is
//! dual to a minimum-cost flow with supplies `c`. Because `D` obeys the
//! triangle inequality the flow never needs to pass through intermediate
//! units, leaving a transportation problem from `c > 0` to `c < 0`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct TreeArc {
    from: usize,
    to: usize,
    flow: f64,
    cost: f64,
    /// `usize::MAX` for artificial arcs, otherwise `src * n_snk + snk`.
    id: usize,
}

/// Optimal transportation plan and its dual certificate.
#[derive(Debug, Clone)]
pub struct Transport {
    pub cost: f64,
    /// Nonzero shipments `(source, sink, amount)`.
    pub plan: Vec<(usize, usize, f64)>,
    /// Node potentials with `u_s - v_t <= cost(s, t)`, sources first.
    pub potentials: Vec<f64>,
    pub pivots: usize,
}

/// Minimum-cost transportation from `supply` to `demand` (both positive and
/// with equal totals) by the network simplex method over strongly feasible
/// spanning trees, which rules out cycling.
pub fn transport(supply: &[f64], demand: &[f64], cost: impl Fn(usize, usize) -> f64) -> Result<Transport> {
    let ns = supply.len();
    let nt = demand.len();
    if ns == 0 || nt == 0 {
        return Ok(Transport {
            cost: 0.0,
            plan: Vec::new(),
            potentials: vec![0.0; ns + nt],
            pivots: 0,
        });
    }
    let total: f64 = supply.iter().sum();
    let total_d: f64 = demand.iter().sum();
    if (total - total_d).abs() > 1e-9 * total.max(total_d) {
        return Err(Error::InvalidParameter(format!(
            "transportation problem is unbalanced: {total} vs {total_d}"
        )));
    }
    // rescale demands to exact balance
    let demand: Vec<f64> = demand.iter().map(|d| d * total / total_d).collect();

    let mut cmax = 0.0_f64;
    for s in 0..ns {
        for t in 0..nt {
            cmax = cmax.max(cost(s, t));
        }
    }
    let big = (cmax + 1.0) * (ns + nt + 1) as f64;
    let root = ns + nt;
    let n_nodes = ns + nt + 1;

    let mut tree: Vec<TreeArc> = Vec::with_capacity(n_nodes - 1);
    for (s, &a) in supply.iter().enumerate() {
        tree.push(TreeArc {
            from: s,
            to: root,
            flow: a,
            cost: big,
            id: usize::MAX,
        });
    }
    for (t, &b) in demand.iter().enumerate() {
        tree.push(TreeArc {
            from: root,
            to: ns + t,
            flow: b,
            cost: big,
            id: usize::MAX,
        });
    }

    let flow_tol = 1e-14 * total;
    let mut parent = vec![usize::MAX; n_nodes];
    let mut parent_arc = vec![usize::MAX; n_nodes];
    let mut depth = vec![0usize; n_nodes];
    let mut pi = vec![0.0; n_nodes];
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
    let mut queue = Vec::with_capacity(n_nodes);

    let block = ((ns as f64).sqrt().ceil() as usize).max(1);
    let mut next_src = 0usize;
    let max_pivots = 50 * (ns + nt) * (1 + ((ns * nt) as f64).log2() as usize) + 1000;
    let mut pivots = 0usize;

    loop {
        // rebuild the rooted tree and potentials
        for a in adj.iter_mut() {
            a.clear();
        }
        for (k, arc) in tree.iter().enumerate() {
            adj[arc.from].push(k);
            adj[arc.to].push(k);
        }
        queue.clear();
        queue.push(root);
        parent[root] = usize::MAX;
        parent_arc[root] = usize::MAX;
        depth[root] = 0;
        pi[root] = 0.0;
        let mut head = 0;
        while head < queue.len() {
            let v = queue[head];
            head += 1;
            for &k in &adj[v] {
                if k == parent_arc[v] {
                    continue;
                }
                let arc = tree[k];
                let w = if arc.from == v { arc.to } else { arc.from };
                parent[w] = v;
                parent_arc[w] = k;
                depth[w] = depth[v] + 1;
                // reduced cost c + pi_from - pi_to vanishes on tree arcs
                pi[w] = if arc.from == v { pi[v] + arc.cost } else { pi[v] - arc.cost };
                queue.push(w);
            }
        }
        if queue.len() != n_nodes {
            return Err(Error::SolverStall {
                detail: "transportation basis is not a spanning tree".into(),
                gap: f64::NAN,
            });
        }

        // block pricing over sources
        let tol = 1e-12 * (cmax + 1.0);
        let mut entering: Option<(usize, usize, f64)> = None;
        let mut scanned = 0usize;
        while scanned < ns {
            let end = (scanned + block).min(ns);
            for k in scanned..end {
                let s = (next_src + k) % ns;
                let ps = pi[s];
                for t in 0..nt {
                    let rc = cost(s, t) + ps - pi[ns + t];
                    if rc < -tol && entering.map_or(true, |e| rc < e.2) {
                        entering = Some((s, t, rc));
                    }
                }
            }
            scanned = end;
            if entering.is_some() {
                next_src = (next_src + scanned) % ns;
                break;
            }
        }
        let Some((s, t, _)) = entering else {
            break;
        };
        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::SolverStall {
                detail: format!("transportation simplex exceeded {max_pivots} pivots"),
                gap: f64::NAN,
            });
        }

        // cycle: s -> t along the new arc, then back from t to s in the tree.
        // Walk both ends up to the join, recording (arc, forward?) pairs in
        // cycle orientation: join..s (downwards), then t..join (upwards).
        let (mut a, mut b) = (s, ns + t);
        let mut up_from_t: Vec<(usize, bool)> = Vec::new();
        let mut up_from_s: Vec<(usize, bool)> = Vec::new();
        while a != b {
            if depth[b] >= depth[a] {
                let k = parent_arc[b];
                // traversing b -> parent: forward if the arc points that way
                up_from_t.push((k, tree[k].from == b));
                b = parent[b];
            } else {
                let k = parent_arc[a];
                // cycle runs parent -> a here
                up_from_s.push((k, tree[k].to == a));
                a = parent[a];
            }
        }
        let mut order: Vec<(usize, bool)> = up_from_s.into_iter().rev().collect();
        order.extend(up_from_t);

        let mut theta = f64::INFINITY;
        for &(k, fwd) in &order {
            if !fwd {
                theta = theta.min(tree[k].flow);
            }
        }
        if !theta.is_finite() {
            return Err(Error::SolverStall {
                detail: "transportation problem is unbounded".into(),
                gap: f64::NAN,
            });
        }
        // last blocking arc in cycle orientation keeps the tree strongly feasible
        let mut leave = usize::MAX;
        for (pos, &(k, fwd)) in order.iter().enumerate() {
            if !fwd && tree[k].flow <= theta + flow_tol {
                leave = pos;
            }
        }
        let theta = theta.max(0.0);
        for &(k, fwd) in &order {
            if fwd {
                tree[k].flow += theta;
            } else {
                tree[k].flow = (tree[k].flow - theta).max(0.0);
            }
        }
        let k_leave = order[leave].0;
        tree[k_leave] = TreeArc {
            from: s,
            to: ns + t,
            flow: theta,
            cost: cost(s, t),
            id: s * nt + t,
        };
    }

    let mut total_cost = 0.0;
    let mut plan = Vec::new();
    for arc in &tree {
        if arc.id == usize::MAX {
            if arc.flow > 1e-9 * total {
                return Err(Error::SolverStall {
                    detail: "artificial arc carries flow at the optimum".into(),
                    gap: arc.flow,
                });
            }
            continue;
        }
        if arc.flow > 0.0 {
            total_cost += arc.flow * arc.cost;
            plan.push((arc.id / nt, arc.id % nt, arc.flow));
        }
    }
    plan.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
    // potentials as f-values: f_s = -pi_s gives f_s - f_t <= cost(s, t)
    let potentials: Vec<f64> = pi[..ns + nt].iter().map(|p| -p).collect();
    Ok(Transport {
        cost: total_cost,
        plan,
        potentials,
        pivots,
    })
}

/// `max c'x` subject to `A x <= b`, `x >= 0`, with `b >= 0`, by the dense
/// tableau simplex method with Bland's rule. `a` is row-major, `m x n`.
///
/// Returns `None` when the program is unbounded.
pub fn dense_simplex_max(a: &[f64], b: &[f64], c: &[f64], m: usize, n: usize) -> Result<Option<(f64, Vec<f64>)>> {
    if a.len() != m * n || b.len() != m || c.len() != n {
        return Err(Error::InvalidParameter("inconsistent LP dimensions".into()));
    }
    if b.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidParameter("right-hand side must be non-negative".into()));
    }
    let width = n + m + 1;
    let mut tab = vec![0.0; (m + 1) * width];
    for i in 0..m {
        tab[i * width..i * width + n].copy_from_slice(&a[i * n..(i + 1) * n]);
        tab[i * width + n + i] = 1.0;
        tab[i * width + n + m] = b[i];
    }
    let obj = m * width;
    for j in 0..n {
        tab[obj + j] = -c[j];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    let scale = c.iter().fold(1.0_f64, |s, v| s.max(v.abs()));
    let eps = 1e-11 * scale;
    let max_iter = 50 * (m + n) * (m + n) + 1000;
    for _ in 0..max_iter {
        // Bland: lowest-index improving column
        let Some(col) = (0..n + m).find(|&j| tab[obj + j] < -eps) else {
            let mut x = vec![0.0; n];
            for (i, &bv) in basis.iter().enumerate() {
                if bv < n {
                    x[bv] = tab[i * width + n + m];
                }
            }
            return Ok(Some((tab[obj + n + m], x)));
        };
        let mut row = None;
        let mut best = f64::INFINITY;
        for i in 0..m {
            let piv = tab[i * width + col];
            if piv > 1e-12 {
                let ratio = tab[i * width + n + m] / piv;
                let better = match row {
                    None => true,
                    Some(r) => ratio < best - 1e-14 || (ratio <= best + 1e-14 && basis[i] < basis[r]),
                };
                if better {
                    best = ratio.min(best);
                    row = Some(i);
                }
            }
        }
        let Some(r) = row else {
            return Ok(None);
        };
        let p = tab[r * width + col];
        for j in 0..width {
            tab[r * width + j] /= p;
        }
        for i in 0..=m {
            if i == r {
                continue;
            }
            let f = tab[i * width + col];
            if f != 0.0 {
                for j in 0..width {
                    tab[i * width + j] -= f * tab[r * width + j];
                }
            }
        }
        basis[r] = col;
    }
    Err(Error::SolverStall {
        detail: "dense simplex iteration limit".into(),
        gap: f64::NAN,
    })
}
