//! The piecewise-linear solution path of the modulus problem in the homotopy
//! parameter `mu`, computed in the unit-Lipschitz scale.

pub mod engine;
pub mod flow;
pub mod kinetic;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{Sample, TargetWeights, VarianceSpec};
use crate::error::{Error, Result};
use crate::geometry::DistanceMatrices;
use kinetic::EventQueue;
use engine::{
    advance, apply_events, check_kkt, initial_side, side_direction, drop_events, ClusterPartition,
    EngineState,
    EventKind, Group, SideDirection, SideState, SideView,
};

pub const PATH_FORMAT_VERSION: u32 = 1;

/// Tuning knobs for [`trace_path`].
#[derive(Debug, Clone)]
pub struct PathOptions {
    /// Stop once `mu` would pass this value.
    pub mu_max: Option<f64>,
    /// Knot cap; defaults to `50 n`.
    pub max_knots: Option<usize>,
    /// Full group-level states are kept every this many knots.
    pub checkpoint_every: usize,
    /// Check the KKT conditions at every knot.
    pub validate: bool,
}

impl Default for PathOptions {
    fn default() -> Self {
        Self {
            mu_max: None,
            max_knots: None,
            checkpoint_every: 32,
            validate: true,
        }
    }
}

/// An active-set change recorded at a knot, replayed in order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Op {
    pub side: u8,
    pub kind: EventKind,
    pub snk: u32,
    pub src: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub mu: f64,
    /// Length of the segment ending at this knot.
    pub step: f64,
    pub ops: Vec<Op>,
}

/// Scalars of the segment leaving a knot, with `tau = mu - mu_k`:
/// `sum m^2/sigma^2 = q + 2 b tau + a tau^2` and
/// `sum w (m + r) = p + dp tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub mu: f64,
    pub q: f64,
    pub b: f64,
    pub a: f64,
    pub p: f64,
    pub dp: f64,
}

impl Segment {
    pub fn q_at(&self, mu: f64) -> f64 {
        let t = mu - self.mu;
        (self.q + t * (2.0 * self.b + t * self.a)).max(0.0)
    }

    pub fn p_at(&self, mu: f64) -> f64 {
        self.p + (mu - self.mu) * self.dp
    }
}

/// A multiplier on the constraint linking treated unit `treated` and control
/// unit `control` (both local arm indices).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Multiplier {
    pub treated: usize,
    pub control: usize,
    pub value: f64,
}

/// Unit-level state at some `mu`.
///
/// `m[i] = (2d_i - 1) f(x_i, d_i)` and `r[i] = (1 - 2d_i) f(x_i, 1 - d_i)`,
/// indexed by sample position. `lambda0` bounds counterfactual control
/// outcomes of treated units, `lambda1` counterfactual treated outcomes of
/// controls. Every listed multiplier is in the active set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathState {
    pub mu: f64,
    pub m: Vec<f64>,
    pub r: Vec<f64>,
    pub lambda0: Vec<Multiplier>,
    pub lambda1: Vec<Multiplier>,
}

/// Unit-level direction of a path segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathDirection {
    pub dm: Vec<f64>,
    pub dr: Vec<f64>,
    pub dlambda0: Vec<Multiplier>,
    pub dlambda1: Vec<Multiplier>,
}

/// The traced path, stored as knots with their active-set changes plus
/// periodic full checkpoints; states in between are rebuilt by replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionPath {
    pub version: u32,
    pub n: usize,
    pub treated: Vec<usize>,
    pub controls: Vec<usize>,
    pub control_groups: Vec<Group>,
    pub treated_groups: Vec<Group>,
    /// Side 0: `dist[h * G0 + g] = d0(treated group h, control group g)`.
    /// Not serialized; see [`SolutionPath::attach_distances`].
    #[serde(skip)]
    pub dist0: Vec<f64>,
    /// Side 1: `dist[g * G1 + h] = d1(treated group h, control group g)`.
    #[serde(skip)]
    pub dist1: Vec<f64>,
    pub knots: Vec<Knot>,
    pub segments: Vec<Segment>,
    pub checkpoints: Vec<(usize, EngineState)>,
    /// The last segment extends to infinity.
    pub complete: bool,
    /// Where the last segment stops being valid (infinite when complete).
    #[serde(with = "inf_as_null")]
    pub valid_until: f64,
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

struct Problem {
    control_groups: Vec<Group>,
    treated_groups: Vec<Group>,
    dist0: Vec<f64>,
    dist1: Vec<f64>,
}

impl Problem {
    fn view(&self, side: usize) -> SideView<'_> {
        if side == 0 {
            SideView {
                src: &self.control_groups,
                snk: &self.treated_groups,
                dist: &self.dist0,
            }
        } else {
            SideView {
                src: &self.treated_groups,
                snk: &self.control_groups,
                dist: &self.dist1,
            }
        }
    }
}

fn group_units(
    rows: impl Iterator<Item = Vec<u64>>,
    sigma2: &[f64],
    weight: &[f64],
) -> Vec<Group> {
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut groups: Vec<Group> = Vec::new();
    for (k, mut key) in rows.enumerate() {
        key.push(sigma2[k].to_bits());
        key.push(weight[k].to_bits());
        match index.get(&key) {
            Some(&g) => groups[g].members.push(k),
            None => {
                index.insert(key, groups.len());
                groups.push(Group {
                    members: vec![k],
                    sigma2: sigma2[k],
                    weight: weight[k],
                });
            }
        }
    }
    groups
}

fn build_problem(
    distances: &DistanceMatrices,
    sigma2_c: &[f64],
    sigma2_t: &[f64],
    w_c: &[f64],
    w_t: &[f64],
) -> Problem {
    let n1 = distances.n1();
    let n0 = distances.n0();
    let treated_groups = group_units(
        (0..n1).map(|i| {
            distances
                .d0_row(i)
                .iter()
                .chain(distances.d1_row(i))
                .map(|v| v.to_bits())
                .collect()
        }),
        sigma2_t,
        w_t,
    );
    let control_groups = group_units(
        (0..n0).map(|j| {
            (0..n1)
                .flat_map(|i| [distances.d0(i, j).to_bits(), distances.d1(i, j).to_bits()])
                .collect()
        }),
        sigma2_c,
        w_c,
    );
    let g1 = treated_groups.len();
    let g0 = control_groups.len();
    let mut dist0 = vec![0.0; g1 * g0];
    let mut dist1 = vec![0.0; g0 * g1];
    for (h, tg) in treated_groups.iter().enumerate() {
        let i = tg.members[0];
        for (g, cg) in control_groups.iter().enumerate() {
            let j = cg.members[0];
            dist0[h * g0 + g] = distances.d0(i, j);
            dist1[g * g1 + h] = distances.d1(i, j);
        }
    }
    Problem {
        control_groups,
        treated_groups,
        dist0,
        dist1,
    }
}

fn directions(views: [SideView<'_>; 2], state: &EngineState) -> Result<[SideDirection; 2]> {
    let mut out = Vec::with_capacity(2);
    for (side, view) in views.iter().enumerate() {
        let part = ClusterPartition::new(view, &state.sides[side]);
        out.push(side_direction(view, &state.sides[side], &part)?);
    }
    let d1 = out.pop().unwrap();
    let d0 = out.pop().unwrap();
    Ok([d0, d1])
}

fn apply_op(state: &mut EngineState, op: &Op) {
    let side = &mut state.sides[op.side as usize];
    match op.kind {
        EventKind::Add => side.add_edge(op.snk, op.src),
        EventKind::Drop => side.drop_edge(op.snk, op.src),
    }
}

fn segment_scalars(problem: &Problem, state: &EngineState, dirs: &[SideDirection; 2]) -> Segment {
    let mut seg = Segment {
        mu: state.mu,
        q: 0.0,
        b: 0.0,
        a: 0.0,
        p: 0.0,
        dp: 0.0,
    };
    for side in 0..2 {
        let view = problem.view(side);
        let st = &state.sides[side];
        let d = &dirs[side];
        for (u, g) in view.src.iter().enumerate() {
            let k = g.mass() / g.sigma2;
            seg.q += k * st.m[u] * st.m[u];
            seg.b += k * st.m[u] * d.dm[u];
            seg.a += k * d.dm[u] * d.dm[u];
            seg.p += g.mass() * g.weight * st.m[u];
            seg.dp += g.mass() * g.weight * d.dm[u];
        }
        for (t, g) in view.snk.iter().enumerate() {
            seg.p += g.mass() * g.weight * st.r[t];
            seg.dp += g.mass() * g.weight * d.dr[t];
        }
    }
    seg
}

/// Traces the full path from `mu = 0`.
///
/// The target must be constant within arms. Identical units (same cross-arm
/// distances, variance and weight) are merged before tracing and split evenly
/// again when states are expanded.
pub fn trace_path(
    sample: &Sample,
    distances: &DistanceMatrices,
    variances: &VarianceSpec,
    target: &TargetWeights,
    opts: &PathOptions,
) -> Result<SolutionPath> {
    target.validate(sample)?;
    variances.validate(sample)?;
    if target.arm_levels(sample).is_none() {
        return Err(Error::NotArmLevel);
    }
    if distances.n1() != sample.n1() || distances.n0() != sample.n0() {
        return Err(Error::LengthMismatch {
            what: "distance matrix",
            expected: sample.n1() * sample.n0(),
            found: distances.n1() * distances.n0(),
        });
    }
    let sig = variances.expand(sample);
    let pick = |idx: &[usize], v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let problem = build_problem(
        distances,
        &pick(&distances.controls, &sig),
        &pick(&distances.treated, &sig),
        &pick(&distances.controls, &target.weights),
        &pick(&distances.treated, &target.weights),
    );

    let n = sample.len();
    let max_knots = opts.max_knots.unwrap_or(50 * n.max(1));
    let pivot_cap = 4 * n + 100;
    let every = opts.checkpoint_every.max(1);

    let mut state = EngineState {
        mu: 0.0,
        sides: [initial_side(&problem.view(0)), initial_side(&problem.view(1))],
    };
    let mut knots = vec![Knot {
        mu: 0.0,
        step: 0.0,
        ops: Vec::new(),
    }];
    let mut segments = Vec::new();
    let mut checkpoints = Vec::new();
    let mut pivots = 0usize;
    let mut queues = [EventQueue::default(), EventQueue::default()];
    let complete;
    let valid_until;

    loop {
        let dirs = directions([problem.view(0), problem.view(1)], &state)?;
        let tie_tol = 1e-12 * (1.0 + state.mu);
        let mut s_min = f64::INFINITY;
        let mut events = Vec::new();
        for side in 0..2 {
            let view = problem.view(side);
            let (s_add, adds) = queues[side].next_adds(
                side as u8,
                &view,
                &state.sides[side],
                &dirs[side],
                state.mu,
                tie_tol,
            )?;
            let (s, evs) = drop_events(side as u8, &state.sides[side], &dirs[side], tie_tol, s_add, adds)?;
            s_min = s_min.min(s);
            events.extend(evs);
        }
        events.retain(|e| e.s <= s_min + tie_tol);

        if s_min > tie_tol {
            let k = knots.len() - 1;
            if opts.validate {
                for side in 0..2 {
                    check_kkt(&problem.view(side), &state.sides[side], state.mu)
                        .map_err(|detail| Error::KktViolation { mu: state.mu, detail })?;
                }
            }
            if k % every == 0 {
                checkpoints.push((k, state.clone()));
            }
            segments.push(segment_scalars(&problem, &state, &dirs));
            if s_min.is_infinite() {
                complete = true;
                valid_until = f64::INFINITY;
                break;
            }
            if let Some(cap) = opts.mu_max {
                if state.mu + s_min > cap {
                    complete = false;
                    valid_until = state.mu + s_min;
                    break;
                }
            }
            if knots.len() >= max_knots {
                return Err(Error::MaxKnotsExceeded { cap: max_knots });
            }
            for side in 0..2 {
                advance(&mut state.sides[side], &dirs[side], s_min);
            }
            state.mu += s_min;
            knots.push(Knot {
                mu: state.mu,
                step: s_min,
                ops: Vec::new(),
            });
            pivots = 0;
        }

        pivots += 1;
        if pivots > pivot_cap {
            return Err(Error::SolverStall {
                detail: format!("active set cycles at mu = {}", state.mu),
                gap: 0.0,
            });
        }
        let knot = knots.last_mut().unwrap();
        events.sort_by_key(|e| (e.side, e.kind == EventKind::Add, e.snk, e.src));
        for side in 0..2u8 {
            let batch: Vec<_> = events.iter().filter(|e| e.side == side).copied().collect();
            if batch.is_empty() {
                continue;
            }
            let view = problem.view(side as usize);
            for e in apply_events(&view, &mut state.sides[side as usize], &batch) {
                knot.ops.push(Op {
                    side: e.side,
                    kind: e.kind,
                    snk: e.snk,
                    src: e.src,
                });
            }
        }
    }
    let last = knots.len() - 1;
    if checkpoints.last().map(|c| c.0) != Some(last) {
        checkpoints.push((last, state));
    }

    Ok(SolutionPath {
        version: PATH_FORMAT_VERSION,
        n,
        treated: distances.treated.clone(),
        controls: distances.controls.clone(),
        control_groups: problem.control_groups,
        treated_groups: problem.treated_groups,
        dist0: problem.dist0,
        dist1: problem.dist1,
        knots,
        segments,
        checkpoints,
        complete,
        valid_until,
    })
}

impl SolutionPath {
    fn views(&self) -> [SideView<'_>; 2] {
        [self.view(0), self.view(1)]
    }

    fn view(&self, side: usize) -> SideView<'_> {
        if side == 0 {
            SideView {
                src: &self.control_groups,
                snk: &self.treated_groups,
                dist: &self.dist0,
            }
        } else {
            SideView {
                src: &self.treated_groups,
                snk: &self.control_groups,
                dist: &self.dist1,
            }
        }
    }

    pub fn num_knots(&self) -> usize {
        self.knots.len()
    }

    pub fn knot_mus(&self) -> Vec<f64> {
        self.knots.iter().map(|k| k.mu).collect()
    }

    pub fn last_mu(&self) -> f64 {
        self.knots.last().map_or(0.0, |k| k.mu)
    }

    /// Index of the segment containing `mu` (the last knot at or below it).
    pub fn segment_index(&self, mu: f64) -> usize {
        self.knots.partition_point(|k| k.mu <= mu).saturating_sub(1)
    }

    pub fn segment_at(&self, mu: f64) -> &Segment {
        &self.segments[self.segment_index(mu)]
    }

    /// Group-level state at knot `k` (after its active-set changes).
    pub fn engine_state_at_knot(&self, k: usize) -> Result<EngineState> {
        let c = self.checkpoints.partition_point(|(i, _)| *i <= k) - 1;
        let (start, ref cp) = self.checkpoints[c];
        let mut state = cp.clone();
        for knot in &self.knots[start + 1..=k] {
            let dirs = directions(self.views(), &state)?;
            for side in 0..2 {
                advance(&mut state.sides[side], &dirs[side], knot.step);
            }
            state.mu = knot.mu;
            for op in &knot.ops {
                apply_op(&mut state, op);
            }
        }
        Ok(state)
    }

    fn engine_state_at(&self, mu: f64) -> Result<(EngineState, [SideDirection; 2])> {
        if !(mu >= 0.0) {
            return Err(Error::InvalidParameter(format!("mu must be non-negative, got {mu}")));
        }
        if mu > self.valid_until {
            return Err(Error::InvalidParameter(format!(
                "mu = {mu} is beyond the traced range (up to {})",
                self.valid_until
            )));
        }
        let k = self.segment_index(mu);
        let mut state = self.engine_state_at_knot(k)?;
        let dirs = directions(self.views(), &state)?;
        let tau = mu - state.mu;
        if tau > 0.0 {
            for side in 0..2 {
                advance(&mut state.sides[side], &dirs[side], tau);
            }
            state.mu = mu;
        }
        Ok((state, dirs))
    }

    /// Unit-level state at `mu`, interpolated linearly within its segment.
    pub fn state_at(&self, mu: f64) -> Result<PathState> {
        let (state, _) = self.engine_state_at(mu)?;
        Ok(self.expand_state(&state))
    }

    /// Unit-level state at knot `k`.
    pub fn knot_state(&self, k: usize) -> Result<PathState> {
        Ok(self.expand_state(&self.engine_state_at_knot(k)?))
    }

    /// Unit-level direction of the segment containing `mu`.
    pub fn direction_at(&self, mu: f64) -> Result<PathDirection> {
        let (state, dirs) = self.engine_state_at(mu)?;
        Ok(self.expand_direction(&state, &dirs))
    }

    /// Own-arm values `m` at `mu`, by sample position.
    pub fn m_at(&self, mu: f64) -> Result<Vec<f64>> {
        let (state, _) = self.engine_state_at(mu)?;
        Ok(self.expand_own(&state.sides[0].m, &state.sides[1].m))
    }

    /// Rates `dm` on the segment containing `mu`, by sample position.
    pub fn dm_at(&self, mu: f64) -> Result<Vec<f64>> {
        let (_, dirs) = self.engine_state_at(mu)?;
        Ok(self.expand_own(&dirs[0].dm, &dirs[1].dm))
    }

    /// Rates `dm` on the final segment.
    pub fn terminal_dm(&self) -> Result<Vec<f64>> {
        let k = self.knots.len() - 1;
        let state = self.engine_state_at_knot(k)?;
        let dirs = directions(self.views(), &state)?;
        Ok(self.expand_own(&dirs[0].dm, &dirs[1].dm))
    }

    fn expand_own(&self, m_control: &[f64], m_treated: &[f64]) -> Vec<f64> {
        let mut m = vec![0.0; self.n];
        for (g, grp) in self.control_groups.iter().enumerate() {
            for &j in &grp.members {
                m[self.controls[j]] = m_control[g];
            }
        }
        for (h, grp) in self.treated_groups.iter().enumerate() {
            for &i in &grp.members {
                m[self.treated[i]] = m_treated[h];
            }
        }
        m
    }

    fn expand_multipliers(&self, side: usize, st: &SideState, values: &[f64]) -> Vec<Multiplier> {
        let mut out = Vec::new();
        for (e, &v) in st.edges.iter().zip(values) {
            let (tg, cg) = if side == 0 {
                (&self.treated_groups[e.snk as usize], &self.control_groups[e.src as usize])
            } else {
                (&self.treated_groups[e.src as usize], &self.control_groups[e.snk as usize])
            };
            let share = v / (tg.mass() * cg.mass());
            for &i in &tg.members {
                for &j in &cg.members {
                    out.push(Multiplier {
                        treated: i,
                        control: j,
                        value: share,
                    });
                }
            }
        }
        out.sort_by(|a, b| (a.treated, a.control).cmp(&(b.treated, b.control)));
        out
    }

    fn expand_state(&self, state: &EngineState) -> PathState {
        let m = self.expand_own(&state.sides[0].m, &state.sides[1].m);
        let r = self.expand_own(&state.sides[1].r, &state.sides[0].r);
        let lam = |side: usize| {
            let st = &state.sides[side];
            let v: Vec<f64> = st.edges.iter().map(|e| e.lambda).collect();
            self.expand_multipliers(side, st, &v)
        };
        PathState {
            mu: state.mu,
            m,
            r,
            lambda0: lam(0),
            lambda1: lam(1),
        }
    }

    fn expand_direction(&self, state: &EngineState, dirs: &[SideDirection; 2]) -> PathDirection {
        PathDirection {
            dm: self.expand_own(&dirs[0].dm, &dirs[1].dm),
            dr: self.expand_own(&dirs[1].dr, &dirs[0].dr),
            dlambda0: self.expand_multipliers(0, &state.sides[0], &dirs[0].dlambda),
            dlambda1: self.expand_multipliers(1, &state.sides[1], &dirs[1].dlambda),
        }
    }

    /// Restores the group distances after deserialization.
    pub fn attach_distances(&mut self, distances: &DistanceMatrices) -> Result<()> {
        if distances.treated != self.treated || distances.controls != self.controls {
            return Err(Error::InvalidParameter("distances belong to a different sample".into()));
        }
        let g1 = self.treated_groups.len();
        let g0 = self.control_groups.len();
        self.dist0 = vec![0.0; g1 * g0];
        self.dist1 = vec![0.0; g0 * g1];
        for (h, tg) in self.treated_groups.iter().enumerate() {
            let i = tg.members[0];
            for (g, cg) in self.control_groups.iter().enumerate() {
                let j = cg.members[0];
                self.dist0[h * g0 + g] = distances.d0(i, j);
                self.dist1[g * g1 + h] = distances.d1(i, j);
            }
        }
        Ok(())
    }

    pub fn has_distances(&self) -> bool {
        !self.dist0.is_empty()
    }

    /// Re-checks the KKT conditions at every knot by replay. Needs distances.
    pub fn validate(&self) -> Result<()> {
        if !self.has_distances() {
            return Err(Error::InvalidParameter("path has no distances attached".into()));
        }
        for k in 0..self.knots.len() {
            let st = self.engine_state_at_knot(k)?;
            for side in 0..2 {
                check_kkt(&self.view(side), &st.sides[side], st.mu)
                    .map_err(|detail| Error::KktViolation { mu: st.mu, detail })?;
            }
        }
        Ok(())
    }

    /// Cluster partitions of both sides at knot `k`.
    pub fn clusters_at_knot(&self, k: usize) -> Result<[ClusterPartition; 2]> {
        let st = self.engine_state_at_knot(k)?;
        Ok([
            ClusterPartition::new(&self.view(0), &st.sides[0]),
            ClusterPartition::new(&self.view(1), &st.sides[1]),
        ])
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::InvalidParameter(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        if p.version != PATH_FORMAT_VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported path format version {}",
                p.version
            )));
        }
        Ok(p)
    }
}
