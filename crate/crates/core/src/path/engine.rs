//! One side of the homotopy: clusters, directions, events and state updates.
//!
//! Side 0 has the control groups as sources (their own-arm values `m`) and the
//! treated groups as sinks (their counterfactual values `r`); side 1 swaps the
//! roles. Each side carries its own multipliers, and the two sides only share
//! the homotopy parameter `mu`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::flow::{min_norm_flow, UnionFind};
use crate::error::{Error, Result};

/// Units with identical cross-arm distances, variance and target weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    /// Local (within-arm) indices of the members.
    pub members: Vec<usize>,
    pub sigma2: f64,
    pub weight: f64,
}

impl Group {
    pub fn mass(&self) -> f64 {
        self.members.len() as f64
    }
}

/// An active constraint `r_snk <= m_src + D(snk, src)` with its multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub snk: u32,
    pub src: u32,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideState {
    pub m: Vec<f64>,
    pub r: Vec<f64>,
    /// Sorted by `(snk, src)`.
    pub edges: Vec<Edge>,
}

impl SideState {
    fn position(&self, snk: u32, src: u32) -> std::result::Result<usize, usize> {
        self.edges
            .binary_search_by(|e| (e.snk, e.src).cmp(&(snk, src)))
    }

    pub fn add_edge(&mut self, snk: u32, src: u32) {
        if let Err(p) = self.position(snk, src) {
            self.edges.insert(
                p,
                Edge {
                    snk,
                    src,
                    lambda: 0.0,
                },
            );
        }
    }

    pub fn drop_edge(&mut self, snk: u32, src: u32) {
        if let Ok(p) = self.position(snk, src) {
            self.edges.remove(p);
        }
    }
}

/// Group-level state of both sides at a common `mu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    pub mu: f64,
    pub sides: [SideState; 2],
}

/// Static data for one side.
#[derive(Debug, Clone, Copy)]
pub struct SideView<'a> {
    pub src: &'a [Group],
    pub snk: &'a [Group],
    /// `dist[snk * src.len() + src]`.
    pub dist: &'a [f64],
}

impl SideView<'_> {
    #[inline]
    pub fn d(&self, snk: usize, src: usize) -> f64 {
        self.dist[snk * self.src.len() + src]
    }
}

/// Connected components of one side's active graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPartition {
    pub src_cluster: Vec<usize>,
    pub snk_cluster: Vec<usize>,
    pub n_clusters: usize,
}

impl ClusterPartition {
    pub fn new(view: &SideView<'_>, state: &SideState) -> Self {
        let ns = view.src.len();
        let nt = view.snk.len();
        let mut uf = UnionFind::new(ns + nt);
        for e in &state.edges {
            uf.union(e.src as usize, ns + e.snk as usize);
        }
        let mut label = vec![usize::MAX; ns + nt];
        let mut root_label = vec![usize::MAX; ns + nt];
        let mut next = 0;
        for (v, slot) in label.iter_mut().enumerate() {
            let r = uf.find(v);
            if root_label[r] == usize::MAX {
                root_label[r] = next;
                next += 1;
            }
            *slot = root_label[r];
        }
        let snk_cluster = label.split_off(ns);
        Self {
            src_cluster: label,
            snk_cluster,
            n_clusters: next,
        }
    }

    /// Source and sink members of each cluster.
    pub fn members(&self) -> Vec<(Vec<usize>, Vec<usize>)> {
        let mut out = vec![(Vec::new(), Vec::new()); self.n_clusters];
        for (u, &c) in self.src_cluster.iter().enumerate() {
            out[c].0.push(u);
        }
        for (t, &c) in self.snk_cluster.iter().enumerate() {
            out[c].1.push(t);
        }
        out
    }
}

/// Rates of change of one side's state in `mu`.
#[derive(Debug, Clone, PartialEq)]
pub struct SideDirection {
    pub dm: Vec<f64>,
    pub dr: Vec<f64>,
    /// Aligned with `SideState::edges`.
    pub dlambda: Vec<f64>,
}

/// Directions for a fixed active set.
///
/// Every member of a cluster moves at the same rate, fixed by summing the
/// stationarity conditions over the cluster; the multiplier rates then solve a
/// flow problem, and the minimum-norm solution is taken when the cluster has
/// cycles.
pub fn side_direction(
    view: &SideView<'_>,
    state: &SideState,
    part: &ClusterPartition,
) -> Result<SideDirection> {
    let ns = view.src.len();
    let nt = view.snk.len();
    let k = part.n_clusters;
    let mut numer = vec![0.0; k];
    let mut denom = vec![0.0; k];
    for (u, g) in view.src.iter().enumerate() {
        let c = part.src_cluster[u];
        numer[c] += g.mass() * g.weight;
        denom[c] += g.mass() / g.sigma2;
    }
    for (t, g) in view.snk.iter().enumerate() {
        numer[part.snk_cluster[t]] += g.mass() * g.weight;
    }
    let mut rate = vec![0.0; k];
    for c in 0..k {
        if denom[c] > 0.0 {
            rate[c] = numer[c] / denom[c];
        } else if numer[c] > 0.0 {
            return Err(Error::InconsistentSystem { residual: numer[c] });
        }
    }
    let dm: Vec<f64> = part.src_cluster.iter().map(|&c| rate[c]).collect();
    let dr: Vec<f64> = part.snk_cluster.iter().map(|&c| rate[c]).collect();

    let mut demand = vec![0.0; ns + nt];
    for (u, g) in view.src.iter().enumerate() {
        demand[u] = g.mass() * (dm[u] / g.sigma2 - g.weight);
    }
    for (t, g) in view.snk.iter().enumerate() {
        demand[ns + t] = g.mass() * g.weight;
    }
    let ends: Vec<(usize, usize)> = state
        .edges
        .iter()
        .map(|e| (e.src as usize, ns + e.snk as usize))
        .collect();
    let total: f64 = view
        .src
        .iter()
        .chain(view.snk.iter())
        .map(|g| g.mass() * g.weight)
        .sum();
    let dlambda = min_norm_flow(ns + nt, &ends, &demand, 1e-9 * (total + 1e-300))?;
    Ok(SideDirection { dm, dr, dlambda })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Add,
    Drop,
}

/// A change of the active set after a step of length `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub side: u8,
    pub kind: EventKind,
    pub snk: u32,
    pub src: u32,
    pub s: f64,
}

/// The smallest step at which an inactive constraint binds or an active
/// multiplier reaches zero, along with every event within `tie_tol` of it.
///
/// Also verifies primal feasibility of the current state.
pub fn side_events(
    side: u8,
    view: &SideView<'_>,
    state: &SideState,
    dir: &SideDirection,
    mu: f64,
    tie_tol: f64,
) -> Result<(f64, Vec<Event>)> {
    let ns = view.src.len();
    let m = &state.m;
    let dm = &dir.dm;

    let per_sink: Vec<std::result::Result<(f64, Vec<Event>), String>> = (0..view.snk.len())
        .into_par_iter()
        .map(|t| {
            let row = &view.dist[t * ns..(t + 1) * ns];
            let r_t = state.r[t];
            let dr_t = dir.dr[t];
            let mut best = f64::INFINITY;
            let mut evs: Vec<Event> = Vec::new();
            for u in 0..ns {
                let gap = m[u] + row[u] - r_t;
                let scale = 1.0 + m[u].abs() + row[u] + r_t.abs();
                if gap < -1e-8 * scale {
                    return Err(format!(
                        "side {side}: constraint (sink {t}, source {u}) violated by {:e}",
                        -gap
                    ));
                }
                let rd = dr_t - dm[u];
                if rd > 1e-13 * (dr_t.abs() + dm[u].abs()) && rd > 0.0 {
                    let s = gap.max(0.0) / rd;
                    if s <= best + tie_tol {
                        if s < best {
                            best = s;
                            evs.retain(|e| e.s <= best + tie_tol);
                        }
                        evs.push(Event {
                            side,
                            kind: EventKind::Add,
                            snk: t as u32,
                            src: u as u32,
                            s,
                        });
                    }
                }
            }
            Ok((best, evs))
        })
        .collect();

    let mut best = f64::INFINITY;
    let mut events = Vec::new();
    for res in per_sink {
        let (b, evs) = res.map_err(|detail| Error::KktViolation { mu, detail })?;
        best = best.min(b);
        events.extend(evs);
    }
    drop_events(side, state, dir, tie_tol, best, events)
}

/// Appends the multipliers reaching zero within `tie_tol` of the earliest
/// event and keeps only the events tied with the new earliest step.
pub fn drop_events(
    side: u8,
    state: &SideState,
    dir: &SideDirection,
    tie_tol: f64,
    mut best: f64,
    mut events: Vec<Event>,
) -> Result<(f64, Vec<Event>)> {
    let dl_scale = dir.dlambda.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    for (e, &dl) in state.edges.iter().zip(&dir.dlambda) {
        if dl < -1e-12 * dl_scale {
            let s = e.lambda.max(0.0) / -dl;
            if s <= best + tie_tol {
                best = best.min(s);
                events.push(Event {
                    side,
                    kind: EventKind::Drop,
                    snk: e.snk,
                    src: e.src,
                    s,
                });
            }
        }
    }
    events.retain(|e| e.s <= best + tie_tol);
    Ok((best, events))
}

/// Moves one side by `s` along `dir`.
pub fn advance(state: &mut SideState, dir: &SideDirection, s: f64) {
    for (m, d) in state.m.iter_mut().zip(&dir.dm) {
        *m += s * d;
    }
    for (r, d) in state.r.iter_mut().zip(&dir.dr) {
        *r += s * d;
    }
    for (e, d) in state.edges.iter_mut().zip(&dir.dlambda) {
        e.lambda = (e.lambda + s * d).max(0.0);
    }
}

/// Initial state at `mu = 0`: zero own-arm values and counterfactuals at the
/// nearest distance. Near-minimizing pairs are activated in order unless they
/// would close a cycle, so the active graph starts as a forest.
pub fn initial_side(view: &SideView<'_>) -> SideState {
    let ns = view.src.len();
    let nt = view.snk.len();
    let mut r = vec![0.0; nt];
    let mut edges = Vec::new();
    let mut uf = UnionFind::new(ns + nt);
    for (t, r_t) in r.iter_mut().enumerate() {
        let row = &view.dist[t * ns..(t + 1) * ns];
        let dmin = row.iter().copied().fold(f64::INFINITY, f64::min);
        *r_t = dmin;
        let tol = 1e-9 * (1.0 + dmin.abs());
        for (u, &d) in row.iter().enumerate() {
            if d <= dmin + tol && uf.union(u, ns + t) {
                edges.push(Edge {
                    snk: t as u32,
                    src: u as u32,
                    lambda: 0.0,
                });
            }
        }
    }
    SideState {
        m: vec![0.0; ns],
        r,
        edges,
    }
}

/// Applies a batch of simultaneous events to one side: drops first, then the
/// additions that join different components. Additions inside a component
/// stay inactive; their endpoints share a rate so the constraint stays tight
/// without a multiplier. Returns the events actually applied.
pub fn apply_events(view: &SideView<'_>, state: &mut SideState, events: &[Event]) -> Vec<Event> {
    let ns = view.src.len();
    let mut applied = Vec::new();
    for e in events.iter().filter(|e| e.kind == EventKind::Drop) {
        state.drop_edge(e.snk, e.src);
        applied.push(*e);
    }
    let mut uf = UnionFind::new(ns + view.snk.len());
    for e in &state.edges {
        uf.union(e.src as usize, ns + e.snk as usize);
    }
    for e in events.iter().filter(|e| e.kind == EventKind::Add) {
        if uf.union(e.src as usize, ns + e.snk as usize) {
            state.add_edge(e.snk, e.src);
            applied.push(*e);
        }
    }
    applied
}

/// Stationarity, dual feasibility and complementary slackness at a knot.
pub fn check_kkt(view: &SideView<'_>, state: &SideState, mu: f64) -> std::result::Result<(), String> {
    let ns = view.src.len();
    let nt = view.snk.len();
    let mut src_sum = vec![0.0; ns];
    let mut snk_sum = vec![0.0; nt];
    for e in &state.edges {
        if e.lambda < -1e-12 {
            return Err(format!("negative multiplier {}", e.lambda));
        }
        let (t, u) = (e.snk as usize, e.src as usize);
        src_sum[u] += e.lambda;
        snk_sum[t] += e.lambda;
        let gap = state.m[u] + view.d(t, u) - state.r[t];
        let scale = 1.0 + state.m[u].abs() + view.d(t, u) + state.r[t].abs();
        if gap.abs() > 1e-7 * scale {
            return Err(format!("active constraint (sink {t}, source {u}) has slack {gap:e}"));
        }
    }
    for (u, g) in view.src.iter().enumerate() {
        let lhs = g.mass() * state.m[u] / g.sigma2 - mu * g.mass() * g.weight;
        let scale = 1.0 + g.mass() * (state.m[u].abs() / g.sigma2 + mu * g.weight);
        if (lhs - src_sum[u]).abs() > 1e-7 * scale {
            return Err(format!("stationarity fails at source {u}: {lhs} vs {}", src_sum[u]));
        }
    }
    for (t, g) in view.snk.iter().enumerate() {
        let lhs = mu * g.mass() * g.weight;
        if (lhs - snk_sum[t]).abs() > 1e-7 * (1.0 + lhs) {
            return Err(format!("stationarity fails at sink {t}: {lhs} vs {}", snk_sum[t]));
        }
    }
    Ok(())
}
