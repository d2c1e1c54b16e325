//! Incremental detection of constraints that become tight.
//!
//! Sources moving at a common rate keep their order in `m_u + D(snk, u)`, so
//! per sink and rate class only the minimizing member can bind first, and the
//! `mu` at which it binds stays fixed until the class or the sink's rate
//! changes. Each knot therefore only revisits what its events touched.

use std::collections::HashMap;

use super::engine::{Event, EventKind, SideDirection, SideState, SideView};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct EventQueue {
    nt: usize,
    cap: usize,
    /// Source members per slot; empty when free.
    slot_sources: Vec<Vec<u32>>,
    slot_rate: Vec<f64>,
    free: Vec<usize>,
    live: Vec<usize>,
    src_slot: Vec<usize>,
    /// `argmin[slot * nt + t]`.
    argmin: Vec<u32>,
    /// Absolute `mu` at which the pair binds, `when[t * cap + slot]`.
    when: Vec<f64>,
    best: Vec<(f64, usize)>,
    snk_rate: Vec<f64>,
}

fn scan_argmin(view: &SideView<'_>, m: &[f64], t: usize, sources: &[u32]) -> u32 {
    let mut best = sources[0];
    let mut v = m[best as usize] + view.d(t, best as usize);
    for &u in &sources[1..] {
        let w = m[u as usize] + view.d(t, u as usize);
        if w < v {
            v = w;
            best = u;
        }
    }
    best
}

struct Ctx<'a> {
    side: u8,
    view: &'a SideView<'a>,
    state: &'a SideState,
    dir: &'a SideDirection,
    mu: f64,
}

impl Ctx<'_> {
    /// Binding `mu` of `(t, u)` when `u` moves at `rate`.
    fn when(&self, t: usize, u: usize, rate: f64) -> Result<f64> {
        let m = self.state.m[u];
        let d = self.view.d(t, u);
        let r = self.state.r[t];
        let gap = m + d - r;
        if gap < 0.0 && gap < -1e-8 * (1.0 + m.abs() + d + r.abs()) {
            return Err(Error::KktViolation {
                mu: self.mu,
                detail: format!(
                    "side {}: constraint (sink {t}, source {u}) violated by {:e}",
                    self.side, -gap
                ),
            });
        }
        let dr = self.dir.dr[t];
        let rd = dr - rate;
        if rd > 0.0 && rd > 1e-13 * (dr.abs() + rate.abs()) {
            Ok(self.mu + gap.max(0.0) / rd)
        } else {
            Ok(f64::INFINITY)
        }
    }
}

impl EventQueue {
    fn alloc(&mut self) -> usize {
        match self.free.pop() {
            Some(s) => s,
            None => {
                let s = self.slot_sources.len();
                assert!(s < self.cap, "event queue slots exhausted");
                self.slot_sources.push(Vec::new());
                self.slot_rate.push(0.0);
                s
            }
        }
    }

    fn reset(&mut self, ns: usize, nt: usize) {
        *self = EventQueue {
            nt,
            cap: 2 * ns + 1,
            src_slot: vec![usize::MAX; ns],
            argmin: vec![0; (2 * ns + 1) * nt],
            when: vec![f64::INFINITY; nt * (2 * ns + 1)],
            best: vec![(f64::INFINITY, usize::MAX); nt],
            snk_rate: vec![f64::NAN; nt],
            ..Default::default()
        };
    }

    /// Brings the queue up to date with the current active set and direction
    /// and returns the earliest step with every add event tied with it.
    #[allow(clippy::too_many_arguments)]
    pub fn next_adds(
        &mut self,
        side: u8,
        view: &SideView<'_>,
        state: &SideState,
        dir: &SideDirection,
        mu: f64,
        tie_tol: f64,
    ) -> Result<(f64, Vec<Event>)> {
        let ns = view.src.len();
        let nt = view.snk.len();
        if self.src_slot.len() != ns || self.nt != nt {
            self.reset(ns, nt);
        }
        let cx = Ctx {
            side,
            view,
            state,
            dir,
            mu,
        };

        // sources sharing a rate keep their relative order, connected or not
        let mut class_of: HashMap<u64, usize> = HashMap::new();
        let mut by_cluster: Vec<Vec<u32>> = Vec::new();
        for (u, &rate) in dir.dm.iter().enumerate() {
            let c = *class_of.entry(rate.to_bits()).or_insert_with(|| {
                by_cluster.push(Vec::new());
                by_cluster.len() - 1
            });
            by_cluster[c].push(u as u32);
        }
        let mut keep = vec![false; self.cap];
        let mut fresh: Vec<(Vec<u32>, Vec<(usize, bool)>)> = Vec::new();
        let mut kept = Vec::new();
        for sources in by_cluster.into_iter().filter(|s| !s.is_empty()) {
            let mut origin: Vec<(usize, usize)> = Vec::new();
            for &u in &sources {
                let l = self.src_slot[u as usize];
                if l == usize::MAX {
                    continue;
                }
                match origin.iter_mut().find(|e| e.0 == l) {
                    Some(e) => e.1 += 1,
                    None => origin.push((l, 1)),
                }
            }
            let whole: Vec<(usize, bool)> = origin
                .iter()
                .map(|&(l, cnt)| (l, cnt == self.slot_sources[l].len()))
                .collect();
            if let [(l, true)] = whole[..] {
                if self.slot_sources[l].len() == sources.len() {
                    keep[l] = true;
                    kept.push(l);
                    continue;
                }
            }
            fresh.push((sources, whole));
        }

        // new slots are filled before the old ones are released
        let mut new_slot = vec![usize::MAX; ns];
        let mut created = Vec::with_capacity(fresh.len());
        for (sources, _) in &fresh {
            let s = self.alloc();
            for &u in sources {
                new_slot[u as usize] = s;
            }
            created.push(s);
        }
        for (k, (sources, whole)) in fresh.iter().enumerate() {
            let s = created[k];
            let rate = dir.dm[sources[0] as usize];
            for t in 0..nt {
                let mut best: Option<(f64, u32)> = None;
                let mut scan = whole.is_empty();
                for &(l, is_whole) in whole {
                    let a = self.argmin[l * nt + t];
                    if !is_whole && new_slot[a as usize] != s {
                        scan = true;
                        break;
                    }
                    let v = state.m[a as usize] + view.d(t, a as usize);
                    if best.is_none_or(|(bv, bu)| v < bv || (v == bv && a < bu)) {
                        best = Some((v, a));
                    }
                }
                let a = match best {
                    Some((_, a)) if !scan => a,
                    _ => scan_argmin(view, &state.m, t, sources),
                };
                self.argmin[s * nt + t] = a;
            }
            self.slot_rate[s] = rate;
        }
        let mut dirty = vec![false; nt];
        for l in 0..self.slot_sources.len() {
            if !self.slot_sources[l].is_empty() && !keep[l] {
                self.slot_sources[l].clear();
                for t in 0..nt {
                    self.when[t * self.cap + l] = f64::INFINITY;
                    if self.best[t].1 == l {
                        dirty[t] = true;
                    }
                }
                self.free.push(l);
            }
        }
        for (k, (sources, _)) in fresh.into_iter().enumerate() {
            let s = created[k];
            for &u in &sources {
                self.src_slot[u as usize] = s;
            }
            self.slot_sources[s] = sources;
        }
        self.live = kept;
        self.live.extend(&created);
        self.live.sort_unstable();

        for &s in &created {
            let rate = self.slot_rate[s];
            for t in 0..nt {
                let w = cx.when(t, self.argmin[s * nt + t] as usize, rate)?;
                self.when[t * self.cap + s] = w;
                if w < self.best[t].0 || (w == self.best[t].0 && s < self.best[t].1) {
                    self.best[t] = (w, s);
                }
            }
        }
        for t in 0..nt {
            let dr = dir.dr[t];
            if dirty[t] || dr.to_bits() != self.snk_rate[t].to_bits() {
                self.snk_rate[t] = dr;
                let mut b = (f64::INFINITY, usize::MAX);
                for &s in &self.live {
                    let w = cx.when(t, self.argmin[s * nt + t] as usize, self.slot_rate[s])?;
                    self.when[t * self.cap + s] = w;
                    if w < b.0 {
                        b = (w, s);
                    }
                }
                self.best[t] = b;
            }
        }

        let first = self.best.iter().fold(f64::INFINITY, |a, b| a.min(b.0));
        if first.is_infinite() {
            return Ok((f64::INFINITY, Vec::new()));
        }
        let best_s = (first - mu).max(0.0);
        let mut events = Vec::new();
        for t in 0..nt {
            if self.best[t].0 - mu > best_s + tie_tol {
                continue;
            }
            for &s in &self.live {
                let w = self.when[t * self.cap + s];
                let step = (w - mu).max(0.0);
                if step <= best_s + tie_tol {
                    events.push(Event {
                        side,
                        kind: EventKind::Add,
                        snk: t as u32,
                        src: self.argmin[s * nt + t],
                        s: step,
                    });
                }
            }
        }
        Ok((best_s, events))
    }
}
