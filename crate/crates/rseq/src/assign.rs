//! Equilibrium engine for joint mode choice, platform matching and
//! congested sequence routing.
//!
//! The outer loop is an augmented Lagrangian on the quota constraints
//! `F_n <= Z_n` (sequence flow may not exceed the platform's matched
//! quota). Each inner pass runs block-proximal steps in a fixed order:
//! mode split, platform quota, bush structure, then per-group flow pushing
//! between each group's costliest used option and its cheapest option.
//! Options are the group's matching sequences plus the quit profile
//! (drivers fall back to driving alone, passengers to transit), so a
//! single transfer direction keeps every conservation row exact: seats
//! freed or absorbed by the move are balanced against the quit classes.
//!
//! Flow lives in per-class link vectors; no path set is stored. Routes
//! appear only transiently as the extreme routes read off the bushes.

use std::collections::BTreeMap;
use std::time::Instant;

use log::{debug, info};
use thiserror::Error;

use crate::bush::{Bush, BushError};
use crate::hypernet::{structure, ClassId, OdDemand, SequenceStructure, Solution};
use crate::matchgen::{MatchingPool, OdPair};
use crate::netio::{CostLayer, CostModel, LinkId, Mode, Network, NodeId};
use crate::tolerances;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Unreachable(#[from] BushError),
}

/// Solver knobs. Defaults mirror the pinned tolerances.
#[derive(Debug, Clone)]
pub struct SolveConfig {
    pub eps_mode: f64,
    pub eps_route: f64,
    pub eps_outer: f64,
    pub inner_cap: usize,
    pub outer_cap: usize,
    /// Penalty growth factor when the violation norm fails to contract.
    pub sigma1: f64,
    /// Required contraction ratio of the violation norm between outers.
    pub sigma2: f64,
    /// Step-dampening increment applied when a block's change norm grew.
    pub gamma_grow: f64,
    /// Step-dampening increment applied when it shrank.
    pub gamma_shrink: f64,
    /// Re-check every conservation and coupling identity after each inner
    /// iteration and fail loudly on drift. Meant for tests; roughly doubles
    /// the per-iteration cost on small instances.
    pub check_invariants: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            eps_mode: tolerances::EPS_MODE,
            eps_route: tolerances::EPS_ROUTE,
            eps_outer: tolerances::EPS_OUTER,
            inner_cap: tolerances::INNER_CAP,
            outer_cap: tolerances::OUTER_CAP,
            sigma1: tolerances::PENALTY_GROWTH,
            sigma2: tolerances::PENALTY_SHRINK_RATIO,
            gamma_grow: 1.9,
            gamma_shrink: 0.1,
            check_invariants: false,
        }
    }
}

/// Gap values of one converged (or capped) state.
#[derive(Debug, Clone, Copy, Default)]
pub struct GapReport {
    /// Demand-weighted modal cost gap per traveler.
    pub g_mode: f64,
    /// Flow-weighted route and option cost gap per traveler.
    pub g_route: f64,
    /// Penalty share of the augmented objective, `A / (A + g)`.
    pub infeasibility: f64,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
}

/// One row of the outer-loop trace.
#[derive(Debug, Clone, Copy)]
pub struct OuterRecord {
    pub inner_iterations: usize,
    pub g_mode: f64,
    pub g_route: f64,
    pub infeasibility: f64,
    pub rho: f64,
    /// Euclidean norm of `max(0, F_n - Z_n)`.
    pub violation: f64,
}

/// Per-sequence results for reports and regression checks.
#[derive(Debug, Clone)]
pub struct SequenceReport {
    pub id: usize,
    pub route: String,
    pub flow: f64,
    pub quota: f64,
    pub multiplier: f64,
    /// Driver's own generalized cost on the cheapest and costliest used
    /// sequence-routes, excluding the quota price.
    pub driver_cost_min: f64,
    pub driver_cost_max: f64,
    /// Per served passenger OD: cheapest slot cost along the driver's route.
    pub slot_costs: Vec<(OdPair, f64)>,
}

#[derive(Debug, Clone)]
pub struct EquilibriumSolution {
    pub solution: Solution,
    pub converged: bool,
    pub gaps: GapReport,
    /// `(inner iteration, G_M, G_N)` per inner pass.
    pub gap_trace: Vec<(usize, f64, f64)>,
    pub outer_trace: Vec<OuterRecord>,
    pub vehicle_flows: Vec<f64>,
    pub link_times: Vec<f64>,
    pub sequences: Vec<SequenceReport>,
    /// Realized modal cost per OD and mode; infinite when unavailable.
    pub mode_costs: BTreeMap<(OdPair, Mode), f64>,
    /// Chosen demand per OD and mode.
    pub mode_demand: BTreeMap<(OdPair, Mode), f64>,
    /// Realized shares over total demand: matched drivers and passengers
    /// count as RD/RP, quitters count under the mode they actually use.
    pub realized_shares: [f64; 4],
    pub wall_seconds: f64,
}

/// Self-regulated averaging: the step scale shrinks as `1 / Gamma`, and
/// `Gamma` grows fast only while the block's change norm is growing.
#[derive(Debug, Clone)]
struct StepControl {
    scale: f64,
    gamma: f64,
    grow: f64,
    shrink: f64,
    prev_norm: f64,
}

impl StepControl {
    fn new(scale: f64, cfg: &SolveConfig) -> Self {
        StepControl {
            scale,
            gamma: 1.0,
            grow: cfg.gamma_grow,
            shrink: cfg.gamma_shrink,
            prev_norm: f64::INFINITY,
        }
    }

    fn theta(&self) -> f64 {
        self.scale / self.gamma
    }

    fn observe(&mut self, norm: f64) {
        if norm > self.prev_norm * (1.0 + 1e-12) {
            self.gamma += self.grow;
        } else {
            self.gamma += self.shrink;
        }
        self.prev_norm = norm;
    }
}

/// Closed-form proximal mode shift: move toward the cheapest mode, clipped
/// by the demand actually on the donor mode.
fn mode_delta(q_on_mode: f64, theta: f64, cost_gap: f64) -> f64 {
    (theta * cost_gap).min(q_on_mode).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OptKind {
    Seq(usize),
    Quit,
}

struct ClassInfo {
    id: ClassId,
    demand: usize,
    root: NodeId,
    dest: NodeId,
    layer: CostLayer,
    bush: usize,
    /// `Some((seq, level))` for driver level classes.
    level: Option<(usize, usize)>,
}

struct GroupInfo {
    /// Demand index of the driver OD.
    driver: usize,
    seq_ids: Vec<usize>,
    /// Demand indices of the passenger ODs served by this group.
    pax: Vec<usize>,
}

/// A flow transfer expressed as per-unit link coefficients per class.
/// Applying `delta` units adds `coef * delta` to each entry; negative
/// coefficients bound `delta` by the flow present.
#[derive(Default)]
struct Plan {
    terms: BTreeMap<(usize, LinkId), f64>,
    coordinates: usize,
}

impl Plan {
    fn add_route(&mut self, class: usize, route: &[LinkId], coef: f64) {
        if route.is_empty() || coef == 0.0 {
            return;
        }
        self.coordinates += 1;
        for &l in route {
            *self.terms.entry((class, l)).or_insert(0.0) += coef;
        }
    }
}

struct Engine<'a> {
    net: &'a Network,
    cm: &'a CostModel,
    pool: &'a MatchingPool,
    demands: &'a [OdDemand],
    cfg: &'a SolveConfig,
    structs: Vec<SequenceStructure>,
    classes: Vec<ClassInfo>,
    class_flow: Vec<Vec<f64>>,
    solo_class: Vec<[Option<usize>; 4]>,
    level_class: BTreeMap<(usize, usize), usize>,
    demand_of_od: BTreeMap<OdPair, usize>,
    groups: Vec<GroupInfo>,
    /// Demand index -> group index, for driver ODs with sequences.
    group_of_demand: BTreeMap<usize, usize>,
    bushes: Vec<Bush>,
    bush_layer: Vec<CostLayer>,
    bush_classes: Vec<Vec<usize>>,
    q: Vec<[f64; 4]>,
    f_seq: Vec<f64>,
    z: Vec<f64>,
    mu: Vec<f64>,
    rho: f64,
    x_veh: Vec<f64>,
    times: Vec<f64>,
    layer_costs: BTreeMap<CostLayer, Vec<f64>>,
    q_total: f64,
    theta_flow: StepControl,
    theta_mode: StepControl,
    theta_match: StepControl,
}

pub fn solve(
    net: &Network,
    cm: &CostModel,
    pool: &MatchingPool,
    demands: &[OdDemand],
    cfg: &SolveConfig,
) -> Result<EquilibriumSolution, SolveError> {
    let started = Instant::now();
    cm.validate().map_err(|e| SolveError::Input(e.to_string()))?;
    for d in demands {
        if d.total < 0.0 {
            return Err(SolveError::Input(format!("negative demand at {:?}", d.od)));
        }
        if d.total > 0.0 && !d.available.iter().any(|&a| a) {
            return Err(SolveError::Input(format!(
                "demand at ({}, {}) has no available mode",
                d.od.o, d.od.d
            )));
        }
    }
    let q_total: f64 = demands.iter().map(|d| d.total).sum();
    if q_total <= 0.0 {
        return Ok(empty_solution(net, pool, started.elapsed().as_secs_f64()));
    }

    let mut eng = Engine::init(net, cm, pool, demands, cfg)?;
    let mut trace = Vec::new();
    let mut outer_trace = Vec::new();
    let mut inner_total = 0usize;
    let mut converged = false;
    let mut last_gaps = (f64::INFINITY, f64::INFINITY);
    let mut prev_violation = f64::INFINITY;

    for outer in 0..cfg.outer_cap {
        let mut inner_ok = false;
        let mut inner_here = 0usize;
        while inner_here < cfg.inner_cap {
            inner_here += 1;
            inner_total += 1;
            let (g_mode, g_route) = eng.inner_iteration();
            trace.push((inner_total, g_mode, g_route));
            last_gaps = (g_mode, g_route);
            if cfg.check_invariants {
                if let Err(msg) = eng.check_state() {
                    panic!("state invariant broken at inner {inner_total}: {msg}");
                }
            }
            if g_mode <= cfg.eps_mode && g_route <= cfg.eps_route {
                inner_ok = true;
                break;
            }
        }
        let violation = eng.violation_norm();
        let ratio = eng.infeasibility_ratio(last_gaps.0 + last_gaps.1);
        outer_trace.push(OuterRecord {
            inner_iterations: inner_here,
            g_mode: last_gaps.0,
            g_route: last_gaps.1,
            infeasibility: ratio,
            rho: eng.rho,
            violation,
        });
        info!(
            "outer {outer}: {inner_here} inner, G_M {:.3e}, G_N {:.3e}, ratio {ratio:.3e}, viol {violation:.3e}",
            last_gaps.0, last_gaps.1
        );
        let feasible = violation <= cfg.eps_outer * eng.q_total.max(1.0);
        if inner_ok && ratio <= cfg.eps_outer && feasible {
            converged = true;
            break;
        }
        eng.update_al(outer, violation, prev_violation, last_gaps.0 + last_gaps.1);
        prev_violation = violation;
    }

    let mut out = eng.export(converged, last_gaps, trace, outer_trace);
    out.gaps.inner_iterations = inner_total;
    out.wall_seconds = started.elapsed().as_secs_f64();
    Ok(out)
}

fn empty_solution(net: &Network, pool: &MatchingPool, wall: f64) -> EquilibriumSolution {
    let n_links = net.links.len();
    let times = net.links.iter().map(|l| l.fft).collect();
    EquilibriumSolution {
        solution: Solution {
            quota: vec![0.0; pool.sequences.len()],
            seq_flow: vec![0.0; pool.sequences.len()],
            ..Solution::default()
        },
        converged: true,
        gaps: GapReport::default(),
        gap_trace: Vec::new(),
        outer_trace: Vec::new(),
        vehicle_flows: vec![0.0; n_links],
        link_times: times,
        sequences: Vec::new(),
        mode_costs: BTreeMap::new(),
        mode_demand: BTreeMap::new(),
        realized_shares: [0.0; 4],
        wall_seconds: wall,
    }
}

impl<'a> Engine<'a> {
    fn init(
        net: &'a Network,
        cm: &'a CostModel,
        pool: &'a MatchingPool,
        demands: &'a [OdDemand],
        cfg: &'a SolveConfig,
    ) -> Result<Self, SolveError> {
        let mut demand_of_od = BTreeMap::new();
        for (i, d) in demands.iter().enumerate() {
            if demand_of_od.insert(d.od, i).is_some() {
                return Err(SolveError::Input(format!(
                    "duplicate demand entry for ({}, {})",
                    d.od.o, d.od.d
                )));
            }
        }

        let structs: Vec<SequenceStructure> = pool.sequences.iter().map(structure).collect();

        // Flow classes: per-demand solo and quit classes first, then driver
        // level classes in (sequence, level) order. Empty levels carry no
        // flow and get no class.
        let mut classes: Vec<ClassInfo> = Vec::new();
        let mut solo_class = vec![[None; 4]; demands.len()];
        let mut level_class = BTreeMap::new();
        for (di, d) in demands.iter().enumerate() {
            let o = d.od.o;
            let dst = d.od.d;
            let mut push = |id: ClassId, layer: CostLayer, slot: usize, classes: &mut Vec<ClassInfo>| {
                solo_class[di][slot] = Some(classes.len());
                classes.push(ClassInfo {
                    id,
                    demand: di,
                    root: o,
                    dest: dst,
                    layer,
                    bush: usize::MAX,
                    level: None,
                });
            };
            if d.allows(Mode::Da) {
                push(ClassId::DaSolo { od: d.od }, CostLayer::Da, 0, &mut classes);
            }
            if d.allows(Mode::Rd) {
                push(ClassId::RdQuit { od: d.od }, CostLayer::Da, 1, &mut classes);
            }
            if d.allows(Mode::Rp) {
                push(ClassId::RpQuit { od: d.od }, CostLayer::Pt, 2, &mut classes);
            }
            if d.allows(Mode::Pt) {
                push(ClassId::PtSolo { od: d.od }, CostLayer::Pt, 3, &mut classes);
            }
        }
        for (si, st) in structs.iter().enumerate() {
            let di = *demand_of_od
                .get(&pool.sequences[si].driver_od)
                .ok_or_else(|| {
                    SolveError::Input(format!(
                        "sequence {si} has driver OD without a demand entry"
                    ))
                })?;
            for l in 1..=st.level_count() {
                let lvl = st.level(l);
                if lvl.empty {
                    continue;
                }
                level_class.insert((si, l), classes.len());
                classes.push(ClassInfo {
                    id: ClassId::RdLevel { seq: si, level: l },
                    demand: di,
                    root: lvl.od.o,
                    dest: lvl.od.d,
                    layer: lvl.layer,
                    bush: usize::MAX,
                    level: Some((si, l)),
                });
            }
        }

        // Groups: driver demand plus the demand indices of served ODs.
        let mut groups = Vec::new();
        let mut group_of_demand = BTreeMap::new();
        for g in &pool.groups {
            let driver = *demand_of_od.get(&g.od).ok_or_else(|| {
                SolveError::Input(format!("driver OD ({}, {}) has no demand entry", g.od.o, g.od.d))
            })?;
            let mut pax: Vec<usize> = Vec::new();
            for &sid in &g.sequence_ids {
                for slot in &pool.sequences[sid].slots {
                    let pi = *demand_of_od.get(&slot.od).ok_or_else(|| {
                        SolveError::Input(format!(
                            "passenger OD ({}, {}) has no demand entry",
                            slot.od.o, slot.od.d
                        ))
                    })?;
                    if !pax.contains(&pi) {
                        pax.push(pi);
                    }
                }
            }
            pax.sort_unstable();
            group_of_demand.insert(driver, groups.len());
            groups.push(GroupInfo {
                driver,
                seq_ids: g.sequence_ids.clone(),
                pax,
            });
        }

        // One bush per (root, layer), shared by every class that matches.
        let mut bush_index: BTreeMap<(u32, CostLayer), usize> = BTreeMap::new();
        let mut bush_layer = Vec::new();
        let mut bush_roots: Vec<NodeId> = Vec::new();
        let mut bush_targets: Vec<Vec<NodeId>> = Vec::new();
        let mut bush_classes: Vec<Vec<usize>> = Vec::new();
        for (ci, c) in classes.iter().enumerate() {
            let key = (c.root.0, c.layer);
            let bi = *bush_index.entry(key).or_insert_with(|| {
                bush_layer.push(c.layer);
                bush_roots.push(c.root);
                bush_targets.push(Vec::new());
                bush_classes.push(Vec::new());
                bush_layer.len() - 1
            });
            if !bush_targets[bi].contains(&c.dest) {
                bush_targets[bi].push(c.dest);
            }
            bush_classes[bi].push(ci);
        }
        for (ci, c) in classes.iter_mut().enumerate() {
            c.bush = bush_index[&(c.root.0, c.layer)];
            debug_assert!(bush_classes[c.bush].contains(&ci));
        }

        let q_total: f64 = demands.iter().map(|d| d.total).sum();
        let free_times: Vec<f64> = net.links.iter().map(|l| l.fft).collect();
        let mut layer_costs = BTreeMap::new();
        for &layer in &bush_layer {
            layer_costs.entry(layer).or_insert_with(|| layer_cost_vec(cm, net, layer, &free_times));
        }
        layer_costs
            .entry(CostLayer::Rp)
            .or_insert_with(|| layer_cost_vec(cm, net, CostLayer::Rp, &free_times));

        let mut bushes = Vec::with_capacity(bush_layer.len());
        for (bi, &layer) in bush_layer.iter().enumerate() {
            let costs = &layer_costs[&layer];
            bushes.push(Bush::build(net, bush_roots[bi], costs, &bush_targets[bi])?);
        }

        // Even demand split over the available modes; flows start on each
        // class's cheapest route, with ridesharing demand parked on its quit
        // class so the initial point is feasible for any quota.
        let mut q = vec![[0.0; 4]; demands.len()];
        let mut class_flow = vec![vec![0.0; net.links.len()]; classes.len()];
        for (di, d) in demands.iter().enumerate() {
            let n_avail = d.available.iter().filter(|&&a| a).count() as f64;
            for m in Mode::ALL {
                if d.allows(m) {
                    q[di][m.index()] = d.total / n_avail;
                }
            }
        }
        for (ci, c) in classes.iter().enumerate() {
            if c.level.is_some() {
                continue;
            }
            let slot = match c.id {
                ClassId::DaSolo { .. } => 0,
                ClassId::RdQuit { .. } => 1,
                ClassId::RpQuit { .. } => 2,
                ClassId::PtSolo { .. } => 3,
                _ => unreachable!("level classes skipped"),
            };
            let amount = q[c.demand][slot];
            if amount <= 0.0 {
                continue;
            }
            let route = bushes[c.bush]
                .cheapest_route(net, c.dest)
                .ok_or(BushError::Unreachable { root: c.root, node: c.dest })?;
            for l in route {
                class_flow[ci][l.idx()] += amount;
            }
        }

        // Greedy feasible quota: best surplus first; among equal surplus the
        // platform prefers covering more distinct requests. The resulting
        // vertex is stationary under the proximal ascent whenever the
        // surplus vector lies in its normal cone. Quota rows are capped by
        // total OD demand, not the current mode split: matched flow cannot
        // exceed chosen mode demand anyway (quit stocks are non-negative),
        // and capping by the mode split would let a transient driver exodus
        // drag the quota down with it.
        let mut z = vec![0.0; pool.sequences.len()];
        {
            let mut rd_left: Vec<f64> = demands
                .iter()
                .map(|d| if d.allows(Mode::Rd) { d.total } else { 0.0 })
                .collect();
            let mut rp_left: Vec<f64> = demands
                .iter()
                .map(|d| if d.allows(Mode::Rp) { d.total } else { 0.0 })
                .collect();
            let mut order: Vec<usize> = (0..pool.sequences.len()).collect();
            order.sort_by(|&a, &b| {
                let sa = &pool.sequences[a];
                let sb = &pool.sequences[b];
                sb.saving
                    .partial_cmp(&sa.saving)
                    .unwrap()
                    .then_with(|| distinct_ods(sb).cmp(&distinct_ods(sa)))
                    .then_with(|| a.cmp(&b))
            });
            for si in order {
                let seq = &pool.sequences[si];
                if seq.saving <= 0.0 {
                    continue;
                }
                let di = demand_of_od[&seq.driver_od];
                let mut cap = rd_left[di];
                for od in seq_served_ods(seq) {
                    let pi = demand_of_od[&od];
                    let seats = seq.seats_for(od) as f64;
                    cap = cap.min(rp_left[pi] / seats);
                }
                if cap <= tolerances::FLOW_CLAMP {
                    continue;
                }
                z[si] = cap;
                rd_left[di] -= cap;
                for od in seq_served_ods(seq) {
                    let pi = demand_of_od[&od];
                    rp_left[pi] -= cap * seq.seats_for(od) as f64;
                }
            }
        }

        let scale = step_scale(q_total, demands, &classes, &solo_class, &bushes, net);
        let mut eng = Engine {
            net,
            cm,
            pool,
            demands,
            cfg,
            structs,
            classes,
            class_flow,
            solo_class,
            level_class,
            demand_of_od,
            groups,
            group_of_demand,
            bushes,
            bush_layer,
            bush_classes,
            q,
            f_seq: vec![0.0; pool.sequences.len()],
            z,
            mu: vec![0.0; pool.sequences.len()],
            rho: 0.0,
            x_veh: vec![0.0; net.links.len()],
            times: free_times,
            layer_costs,
            q_total,
            theta_flow: StepControl::new(scale, cfg),
            theta_mode: StepControl::new(scale, cfg),
            theta_match: StepControl::new(scale, cfg),
        };
        eng.refresh_flows_and_costs();
        debug!(
            "engine: {} classes, {} bushes, {} groups, step scale {scale:.1}",
            eng.classes.len(),
            eng.bushes.len(),
            eng.groups.len()
        );
        Ok(eng)
    }

    // ------------------------------------------------------------------
    // Cost plumbing

    fn refresh_flows_and_costs(&mut self) {
        for x in self.x_veh.iter_mut() {
            *x = 0.0;
        }
        for (ci, c) in self.classes.iter().enumerate() {
            let vehicular = matches!(
                c.id,
                ClassId::DaSolo { .. } | ClassId::RdQuit { .. } | ClassId::RdLevel { .. }
            );
            if vehicular {
                for (li, f) in self.class_flow[ci].iter().enumerate() {
                    self.x_veh[li] += f;
                }
            }
        }
        for (li, link) in self.net.links.iter().enumerate() {
            self.times[li] = link.travel_time(self.x_veh[li]);
        }
        let layers: Vec<CostLayer> = self.layer_costs.keys().copied().collect();
        for layer in layers {
            let v = layer_cost_vec(self.cm, self.net, layer, &self.times);
            self.layer_costs.insert(layer, v);
        }
    }

    fn costs_of(&self, layer: CostLayer) -> &[f64] {
        &self.layer_costs[&layer]
    }

    fn price_route(&self, layer: CostLayer, route: &[LinkId]) -> f64 {
        let costs = self.costs_of(layer);
        route.iter().map(|l| costs[l.idx()]).sum()
    }

    /// Driver-only share of a route priced at the current times; empty
    /// levels use the solo driving layer.
    fn price_driver_share(&self, layer: CostLayer, route: &[LinkId]) -> f64 {
        match layer {
            CostLayer::RdWith { .. } => route
                .iter()
                .map(|l| self.cm.driver_share(self.net.link(*l), self.times[l.idx()]))
                .sum(),
            other => self.price_route(other, route),
        }
    }

    fn set_all_labels(&mut self) {
        let flows = &self.class_flow;
        for (bi, bush) in self.bushes.iter_mut().enumerate() {
            let costs = &self.layer_costs[&self.bush_layer[bi]];
            let supports: Vec<(u64, &[f64])> = self.bush_classes[bi]
                .iter()
                .map(|&ci| (ci as u64, flows[ci].as_slice()))
                .collect();
            bush.set_labels(self.net, costs, &supports);
        }
    }

    fn update_bush_structures(&mut self) {
        for bi in 0..self.bushes.len() {
            let mut agg = vec![0.0; self.net.links.len()];
            for &ci in &self.bush_classes[bi] {
                for (li, f) in self.class_flow[ci].iter().enumerate() {
                    agg[li] += f;
                }
            }
            let costs = &self.layer_costs[&self.bush_layer[bi]];
            self.bushes[bi].update(self.net, costs, &agg);
        }
        self.set_all_labels();
    }

    // ------------------------------------------------------------------
    // Derived stocks

    fn matched_driver_flow(&self, di: usize) -> f64 {
        match self.group_of_demand.get(&di) {
            Some(&gi) => self.groups[gi].seq_ids.iter().map(|&s| self.f_seq[s]).sum(),
            None => 0.0,
        }
    }

    fn rd_quit_stock(&self, di: usize) -> f64 {
        (self.q[di][1] - self.matched_driver_flow(di)).max(0.0)
    }

    fn matched_pax_flow(&self, di: usize) -> f64 {
        let od = self.demands[di].od;
        self.pool
            .sequences
            .iter()
            .map(|s| s.seats_for(od) as f64 * self.f_seq[s.id])
            .sum()
    }

    fn rp_quit_stock(&self, di: usize) -> f64 {
        (self.q[di][2] - self.matched_pax_flow(di)).max(0.0)
    }

    // ------------------------------------------------------------------
    // Modal costs

    /// Realized generalized cost per mode; `INFINITY` marks unavailable.
    fn modal_costs(&self) -> Vec<[f64; 4]> {
        let mut out = vec![[f64::INFINITY; 4]; self.demands.len()];
        for (di, d) in self.demands.iter().enumerate() {
            if let Some(ci) = self.solo_class[di][0] {
                out[di][0] = self.class_min_cost(ci) + self.cm.mode(Mode::Da).fixed;
            }
            if let Some(ci) = self.solo_class[di][3] {
                out[di][3] = self.class_min_cost(ci) + self.cm.mode(Mode::Pt).fixed;
            }
            if d.allows(Mode::Rd) {
                out[di][1] = self.rd_mode_cost(di);
            }
            if d.allows(Mode::Rp) {
                out[di][2] = self.rp_mode_cost(di);
            }
        }
        out
    }

    fn class_min_cost(&self, ci: usize) -> f64 {
        let c = &self.classes[ci];
        match self.bushes[c.bush].cheapest_route(self.net, c.dest) {
            Some(r) => self.price_route(c.layer, &r),
            None => f64::INFINITY,
        }
    }

    fn class_max_cost(&self, ci: usize) -> f64 {
        let c = &self.classes[ci];
        match self.bushes[c.bush].costliest_route(self.net, ci as u64, c.dest) {
            Some(r) => self.price_route(c.layer, &r),
            None => f64::INFINITY,
        }
    }

    /// Driver generalized cost of one sequence on its cheapest routes,
    /// including the quota price but not inconvenience already in the layer.
    fn seq_driver_cost_min(&self, si: usize) -> f64 {
        let mut total = self.cm.mode(Mode::Rd).fixed;
        let st = &self.structs[si];
        for l in 1..=st.level_count() {
            if let Some(&ci) = self.level_class.get(&(si, l)) {
                let c = &self.classes[ci];
                if let Some(r) = self.bushes[c.bush].cheapest_route(self.net, c.dest) {
                    total += self.price_driver_share(c.layer, &r);
                } else {
                    return f64::INFINITY;
                }
            }
        }
        total
    }

    fn quota_price(&self, si: usize) -> f64 {
        (self.mu[si] + self.rho * (self.f_seq[si] - self.z[si])).max(0.0)
    }

    fn rd_mode_cost(&self, di: usize) -> f64 {
        let quit = match self.solo_class[di][1] {
            Some(ci) => self.class_min_cost(ci) + self.cm.mode(Mode::Da).fixed,
            None => f64::INFINITY,
        };
        let q_rd = self.q[di][1];
        let gi = self.group_of_demand.get(&di);
        if q_rd <= tolerances::FLOW_CLAMP * self.q_total.max(1.0) {
            let best_seq = gi
                .map(|&g| {
                    self.groups[g]
                        .seq_ids
                        .iter()
                        .map(|&s| self.seq_driver_cost_min(s) + self.quota_price(s))
                        .fold(f64::INFINITY, f64::min)
                })
                .unwrap_or(f64::INFINITY);
            return quit.min(best_seq);
        }
        let mut acc = self.rd_quit_stock(di) * quit;
        if let Some(&g) = gi {
            for &s in &self.groups[g].seq_ids {
                if self.f_seq[s] > 0.0 {
                    acc += self.f_seq[s] * (self.seq_driver_cost_min(s) + self.quota_price(s));
                }
            }
        }
        acc / q_rd
    }

    /// Cheapest slot cost for passengers of demand `di` on sequence `si`:
    /// passenger layer priced along the driver's cheapest route per level.
    fn slot_cost(&self, si: usize, di: usize) -> f64 {
        let od = self.demands[di].od;
        let st = &self.structs[si];
        let span = st.spans.iter().find(|sp| sp.od == od);
        let Some(span) = span else { return f64::INFINITY };
        let mut total = self.cm.mode(Mode::Rp).fixed;
        for l in span.first_level..=span.last_level {
            if let Some(&ci) = self.level_class.get(&(si, l)) {
                let c = &self.classes[ci];
                match self.bushes[c.bush].cheapest_route(self.net, c.dest) {
                    Some(r) => total += self.price_route(CostLayer::Rp, &r),
                    None => return f64::INFINITY,
                }
            }
        }
        total
    }

    fn rp_mode_cost(&self, di: usize) -> f64 {
        let od = self.demands[di].od;
        let quit = match self.solo_class[di][2] {
            Some(ci) => self.class_min_cost(ci) + self.cm.mode(Mode::Pt).fixed,
            None => f64::INFINITY,
        };
        let q_rp = self.q[di][2];
        if q_rp <= tolerances::FLOW_CLAMP * self.q_total.max(1.0) {
            let best_slot = self
                .pool
                .sequences
                .iter()
                .filter(|s| s.seats_for(od) > 0)
                .map(|s| self.slot_cost(s.id, di))
                .fold(f64::INFINITY, f64::min);
            return quit.min(best_slot);
        }
        let mut acc = self.rp_quit_stock(di) * quit;
        for s in &self.pool.sequences {
            let seats = s.seats_for(od) as f64;
            if seats > 0.0 && self.f_seq[s.id] > 0.0 {
                acc += seats * self.f_seq[s.id] * self.slot_cost(s.id, di);
            }
        }
        acc / q_rp
    }

    // ------------------------------------------------------------------
    // Step 1.1: mode split

    fn update_mode_split(&mut self) -> f64 {
        let costs = self.modal_costs();
        let theta = self.theta_mode.theta();
        let mut moved = 0.0;
        for di in 0..self.demands.len() {
            let c = &costs[di];
            let mut best = usize::MAX;
            for m in 0..4 {
                if c[m].is_finite() && (best == usize::MAX || c[m] < c[best]) {
                    best = m;
                }
            }
            if best == usize::MAX {
                continue;
            }
            for m in 0..4 {
                if m == best || !c[m].is_finite() {
                    continue;
                }
                let gap = c[m] - c[best];
                if gap <= 0.0 {
                    continue;
                }
                let delta = mode_delta(self.q[di][m], theta, gap);
                if delta <= tolerances::FLOW_CLAMP {
                    continue;
                }
                self.withdraw_from_mode(di, m, delta);
                self.deposit_into_mode(di, best, delta);
                self.q[di][m] -= delta;
                self.q[di][best] += delta;
                moved += delta;
            }
        }
        if moved > 0.0 {
            self.refresh_flows_and_costs();
        }
        self.theta_mode.observe(moved);
        moved
    }

    /// Removes `delta` demand units of mode `m` from the stored flows,
    /// draining the quit stock first and only then scaling down matched
    /// sequences (which frees their partners onto their quit classes).
    fn withdraw_from_mode(&mut self, di: usize, m: usize, delta: f64) {
        match m {
            0 | 3 => {
                let ci = self.solo_class[di][m].expect("solo class exists for available mode");
                let had = self.q[di][m];
                scale_vec(&mut self.class_flow[ci], (had - delta).max(0.0) / had);
            }
            1 => {
                let stock = self.rd_quit_stock(di);
                let from_stock = delta.min(stock);
                if from_stock > 0.0 && stock > 0.0 {
                    let ci = self.solo_class[di][1].expect("rd quit class");
                    scale_vec(&mut self.class_flow[ci], (stock - from_stock) / stock);
                }
                let rest = delta - from_stock;
                if rest > tolerances::FLOW_CLAMP {
                    self.shrink_matched_driver(di, rest);
                }
            }
            2 => {
                let stock = self.rp_quit_stock(di);
                let from_stock = delta.min(stock);
                if from_stock > 0.0 && stock > 0.0 {
                    let ci = self.solo_class[di][2].expect("rp quit class");
                    scale_vec(&mut self.class_flow[ci], (stock - from_stock) / stock);
                }
                let rest = delta - from_stock;
                if rest > tolerances::FLOW_CLAMP {
                    self.shrink_matched_pax(di, rest);
                }
            }
            _ => unreachable!(),
        }
    }

    fn deposit_into_mode(&mut self, di: usize, m: usize, delta: f64) {
        let remainder = if m == 1 {
            self.deposit_rd_matched(di, delta)
        } else {
            delta
        };
        if remainder <= 0.0 {
            return;
        }
        let ci = self.solo_class[di][m].expect("class exists for available mode");
        let c = &self.classes[ci];
        let route = self.bushes[c.bush]
            .cheapest_route(self.net, c.dest)
            .expect("destination reachable after init");
        for l in route {
            self.class_flow[ci][l.idx()] += remainder;
        }
    }

    /// Routes entering ridesharing drivers straight into their cheapest
    /// matched sequence while quota slack and passenger stock allow it, so
    /// entry does not have to relay through the quit class. Returns the
    /// amount that still belongs on quit.
    fn deposit_rd_matched(&mut self, di: usize, delta: f64) -> f64 {
        let Some(&gi) = self.group_of_demand.get(&di) else { return delta };
        let quit_cost = match self.solo_class[di][1] {
            Some(ci) => self.class_min_cost(ci),
            None => return delta,
        };
        let mut best: Option<(usize, f64)> = None;
        for &si in &self.groups[gi].seq_ids {
            let cost = self.seq_driver_cost_min(si) + self.quota_price(si);
            if cost.is_finite() && best.map(|(_, c)| cost < c).unwrap_or(true) {
                best = Some((si, cost));
            }
        }
        let Some((si, cost)) = best else { return delta };
        if cost >= quit_cost {
            return delta;
        }
        let slack = (self.z[si] - self.f_seq[si]).max(0.0);
        let mut take = delta.min(slack);
        let served = seq_served_ods(&self.pool.sequences[si]);
        for &od in &served {
            let pi = self.demand_of_od[&od];
            let seats = self.pool.sequences[si].seats_for(od) as f64;
            take = take.min(self.rp_quit_stock(pi) / seats);
        }
        if take <= tolerances::FLOW_CLAMP {
            return delta;
        }
        for l in 1..=self.structs[si].level_count() {
            let Some(&ci) = self.level_class.get(&(si, l)) else { continue };
            let c = &self.classes[ci];
            let route = self.bushes[c.bush]
                .cheapest_route(self.net, c.dest)
                .expect("level destination reachable after init");
            for lid in route {
                self.class_flow[ci][lid.idx()] += take;
            }
        }
        for &od in &served {
            let pi = self.demand_of_od[&od];
            let seats = self.pool.sequences[si].seats_for(od) as f64;
            let stock = self.rp_quit_stock(pi);
            let ci = self.solo_class[pi][2].expect("rp quit class for served od");
            scale_vec(
                &mut self.class_flow[ci],
                ((stock - seats * take) / stock).max(0.0),
            );
        }
        self.f_seq[si] += take;
        delta - take
    }

    /// Scales matched driver flow of demand `di` down by `amount` in total,
    /// proportionally over its sequences. Freed passengers land on their
    /// quit classes' cheapest routes.
    fn shrink_matched_driver(&mut self, di: usize, amount: f64) {
        let Some(&gi) = self.group_of_demand.get(&di) else { return };
        let total = self.matched_driver_flow(di);
        if total <= tolerances::FLOW_CLAMP {
            return;
        }
        let ratio = (total - amount.min(total)).max(0.0) / total;
        let seq_ids = self.groups[gi].seq_ids.clone();
        for si in seq_ids {
            let released = self.f_seq[si] * (1.0 - ratio);
            if released <= 0.0 {
                continue;
            }
            self.scale_sequence(si, ratio);
            for od in seq_served_ods(&self.pool.sequences[si]) {
                let pi = self.demand_of_od[&od];
                let seats = self.pool.sequences[si].seats_for(od) as f64;
                self.add_to_quit(pi, 2, seats * released);
            }
        }
    }

    /// Scales back sequences serving passenger demand `di` to release
    /// `amount` seat units; drivers and co-riders fall back to quit.
    fn shrink_matched_pax(&mut self, di: usize, amount: f64) {
        let od = self.demands[di].od;
        let total = self.matched_pax_flow(di);
        if total <= tolerances::FLOW_CLAMP {
            return;
        }
        let ratio = (total - amount.min(total)).max(0.0) / total;
        let seqs: Vec<usize> = self
            .pool
            .sequences
            .iter()
            .filter(|s| s.seats_for(od) > 0)
            .map(|s| s.id)
            .collect();
        for si in seqs {
            let released = self.f_seq[si] * (1.0 - ratio);
            if released <= 0.0 {
                continue;
            }
            self.scale_sequence(si, ratio);
            let driver_di = self.demand_of_od[&self.pool.sequences[si].driver_od];
            self.add_to_quit(driver_di, 1, released);
            for other in seq_served_ods(&self.pool.sequences[si]) {
                if other == od {
                    continue;
                }
                let pi = self.demand_of_od[&other];
                let seats = self.pool.sequences[si].seats_for(other) as f64;
                self.add_to_quit(pi, 2, seats * released);
            }
        }
    }

    fn scale_sequence(&mut self, si: usize, ratio: f64) {
        let st_levels = self.structs[si].level_count();
        for l in 1..=st_levels {
            if let Some(&ci) = self.level_class.get(&(si, l)) {
                scale_vec(&mut self.class_flow[ci], ratio);
            }
        }
        self.f_seq[si] *= ratio;
    }

    fn add_to_quit(&mut self, di: usize, slot: usize, amount: f64) {
        if amount <= 0.0 {
            return;
        }
        let ci = self.solo_class[di][slot].expect("quit class exists");
        let c = &self.classes[ci];
        let route = self.bushes[c.bush]
            .cheapest_route(self.net, c.dest)
            .expect("destination reachable after init");
        for l in route {
            self.class_flow[ci][l.idx()] += amount;
        }
    }

    // ------------------------------------------------------------------
    // Step 1.2: platform quota

    fn update_matching(&mut self) -> f64 {
        if self.pool.sequences.is_empty() {
            return 0.0;
        }
        let theta = self.theta_match.theta();
        let mut target: Vec<f64> = self
            .z
            .iter()
            .enumerate()
            .map(|(i, &z)| z + theta * self.pool.sequences[i].saving)
            .collect();
        self.project_quota(&mut target);
        let moved: f64 = target
            .iter()
            .zip(&self.z)
            .map(|(a, b)| (a - b).abs())
            .sum();
        self.z = target;
        self.theta_match.observe(moved);
        moved
    }

    /// Dykstra's alternating projections onto the quota polytope: one
    /// half-space per driver OD and per passenger OD, plus the orthant.
    fn project_quota(&self, z: &mut [f64]) {
        struct Row {
            seqs: Vec<(usize, f64)>,
            cap: f64,
            norm2: f64,
        }
        // Row caps use total OD demand, matching the greedy fill. Capping by
        // the current mode split instead would pin the quota to the matched
        // flow whenever every remaining driver is matched, and the augmented
        // prices could then never open the gap again.
        let mut rows: Vec<Row> = Vec::new();
        for g in &self.groups {
            let seqs: Vec<(usize, f64)> = g.seq_ids.iter().map(|&s| (s, 1.0)).collect();
            let norm2 = seqs.len() as f64;
            rows.push(Row { seqs, cap: self.demands[g.driver].total, norm2 });
        }
        let mut pax_ods: Vec<OdPair> = Vec::new();
        for s in &self.pool.sequences {
            for od in seq_served_ods(s) {
                if !pax_ods.contains(&od) {
                    pax_ods.push(od);
                }
            }
        }
        pax_ods.sort_unstable_by_key(|od| (od.o, od.d));
        for od in pax_ods {
            let seqs: Vec<(usize, f64)> = self
                .pool
                .sequences
                .iter()
                .filter(|s| s.seats_for(od) > 0)
                .map(|s| (s.id, s.seats_for(od) as f64))
                .collect();
            let norm2: f64 = seqs.iter().map(|(_, a)| a * a).sum();
            let di = self.demand_of_od[&od];
            rows.push(Row { seqs, cap: self.demands[di].total, norm2 });
        }

        let mut corr = vec![vec![0.0; z.len()]; rows.len() + 1];
        let scale = 1.0 + self.q_total;
        for _ in 0..tolerances::PROJECTION_CAP {
            let mut shift = 0.0f64;
            for (ri, row) in rows.iter().enumerate() {
                for &(si, a) in &row.seqs {
                    z[si] += corr[ri][si] * a;
                }
                let lhs: f64 = row.seqs.iter().map(|&(si, a)| a * z[si]).sum();
                let viol = ((lhs - row.cap) / row.norm2.max(1e-12)).max(0.0);
                for &(si, a) in &row.seqs {
                    let before = z[si];
                    z[si] -= viol * a;
                    corr[ri][si] = (before - z[si]) / a;
                    shift += (before - z[si]).abs();
                }
            }
            let oi = rows.len();
            for si in 0..z.len() {
                let y = z[si] + corr[oi][si];
                let after = y.max(0.0);
                corr[oi][si] = y - after;
                shift += (z[si] - after).abs().min((y - after).abs());
                z[si] = after;
            }
            if shift <= tolerances::PROJECTION_TOL * scale {
                break;
            }
        }
        for v in z.iter_mut() {
            if *v < tolerances::FLOW_CLAMP {
                *v = 0.0;
            }
        }
    }

    // ------------------------------------------------------------------
    // Step 1.4: flow pushing

    /// One proximal exchange per solo class and per driver group, with
    /// Gauss-Seidel cost refreshes after every applied transfer.
    fn push_flows(&mut self) -> f64 {
        let mut moved = 0.0;
        for di in 0..self.demands.len() {
            for slot in [0usize, 1, 2, 3] {
                if let Some(ci) = self.solo_class[di][slot] {
                    moved += self.push_route_internal(ci);
                }
            }
        }
        for si in 0..self.pool.sequences.len() {
            for l in 1..=self.structs[si].level_count() {
                if let Some(&ci) = self.level_class.get(&(si, l)) {
                    moved += self.push_route_internal(ci);
                }
            }
        }
        for gi in 0..self.groups.len() {
            moved += self.push_group(gi);
        }
        self.theta_flow.observe(moved);
        moved
    }

    /// Shifts class flow from its costliest used route to its cheapest.
    fn push_route_internal(&mut self, ci: usize) -> f64 {
        let c = &self.classes[ci];
        let bush = &self.bushes[c.bush];
        let Some(rmax) = bush.costliest_route(self.net, ci as u64, c.dest) else { return 0.0 };
        let Some(rmin) = bush.cheapest_route(self.net, c.dest) else { return 0.0 };
        if rmax == rmin {
            return 0.0;
        }
        let gap = self.price_route(c.layer, &rmax) - self.price_route(c.layer, &rmin);
        if gap <= tolerances::STABILITY_TOL {
            return 0.0;
        }
        let mut plan = Plan::default();
        plan.add_route(ci, &rmax, -1.0);
        plan.add_route(ci, &rmin, 1.0);
        self.apply_plan(&plan, gap, 0.0, f64::INFINITY)
    }

    fn push_group(&mut self, gi: usize) -> f64 {
        let group = &self.groups[gi];
        let driver_di = group.driver;
        let pax: Vec<usize> = group.pax.clone();
        let seq_ids: Vec<usize> = group.seq_ids.clone();

        // Per-passenger quit data: cheapest/costliest route price and stock.
        struct PaxQuit {
            class: usize,
            cmin: f64,
            cmax: f64,
            rmin: Vec<LinkId>,
            rmax: Vec<LinkId>,
            stock: f64,
        }
        let mut pquit: BTreeMap<usize, PaxQuit> = BTreeMap::new();
        for &pi in &pax {
            let Some(ci) = self.solo_class[pi][2] else { continue };
            let c = &self.classes[ci];
            let bush = &self.bushes[c.bush];
            let Some(rmin) = bush.cheapest_route(self.net, c.dest) else { continue };
            let rmax = bush
                .costliest_route(self.net, ci as u64, c.dest)
                .unwrap_or_else(|| rmin.clone());
            pquit.insert(
                pi,
                PaxQuit {
                    class: ci,
                    cmin: self.price_route(c.layer, &rmin),
                    cmax: self.price_route(c.layer, &rmax),
                    rmin,
                    rmax,
                    stock: self.rp_quit_stock(pi),
                },
            );
        }

        // Option table: sequences plus the quit profile.
        struct Opt {
            kind: OptKind,
            seats: BTreeMap<usize, f64>,
            flow: f64,
            pen: f64,
            pen_active: bool,
            cmin: f64,
            cmax: f64,
            routes_min: Vec<(usize, Vec<LinkId>)>,
            routes_max: Vec<(usize, Vec<LinkId>)>,
        }
        let mut opts: Vec<Opt> = Vec::new();
        for &si in &seq_ids {
            let mut seats = BTreeMap::new();
            for od in seq_served_ods(&self.pool.sequences[si]) {
                let pi = self.demand_of_od[&od];
                if !pquit.contains_key(&pi) {
                    // A served OD without an RP quit class cannot balance
                    // partial moves; skip the sequence entirely.
                    seats.clear();
                    break;
                }
                seats.insert(pi, self.pool.sequences[si].seats_for(od) as f64);
            }
            if seats.is_empty() {
                continue;
            }
            let mut cmin = 0.0;
            let mut cmax = 0.0;
            let mut routes_min = Vec::new();
            let mut routes_max = Vec::new();
            let mut ok = true;
            for l in 1..=self.structs[si].level_count() {
                let Some(&ci) = self.level_class.get(&(si, l)) else { continue };
                let c = &self.classes[ci];
                let bush = &self.bushes[c.bush];
                let Some(rmin) = bush.cheapest_route(self.net, c.dest) else {
                    ok = false;
                    break;
                };
                let rmax = bush
                    .costliest_route(self.net, ci as u64, c.dest)
                    .unwrap_or_else(|| rmin.clone());
                cmin += self.price_route(c.layer, &rmin);
                cmax += self.price_route(c.layer, &rmax);
                routes_min.push((ci, rmin));
                routes_max.push((ci, rmax));
            }
            if !ok {
                continue;
            }
            let pen = self.quota_price(si);
            opts.push(Opt {
                kind: OptKind::Seq(si),
                seats,
                flow: self.f_seq[si],
                pen,
                pen_active: pen > 0.0,
                cmin,
                cmax,
                routes_min,
                routes_max,
            });
        }
        if let Some(ci) = self.solo_class[driver_di][1] {
            let c = &self.classes[ci];
            let bush = &self.bushes[c.bush];
            if let Some(rmin) = bush.cheapest_route(self.net, c.dest) {
                let rmax = bush
                    .costliest_route(self.net, ci as u64, c.dest)
                    .unwrap_or_else(|| rmin.clone());
                opts.push(Opt {
                    kind: OptKind::Quit,
                    seats: BTreeMap::new(),
                    flow: self.rd_quit_stock(driver_di),
                    pen: 0.0,
                    pen_active: false,
                    cmin: self.price_route(c.layer, &rmin),
                    cmax: self.price_route(c.layer, &rmax),
                    routes_min: vec![(ci, rmin)],
                    routes_max: vec![(ci, rmax)],
                });
            }
        }
        if opts.len() < 2 {
            return 0.0;
        }

        // Steepest feasible exchange: the largest per-unit gain among
        // ordered option pairs whose balancing quit moves have stock.
        let mut best: Option<(usize, usize, f64)> = None;
        for (ai, a) in opts.iter().enumerate() {
            if a.flow <= tolerances::FLOW_CLAMP {
                continue;
            }
            for (bi, b) in opts.iter().enumerate() {
                if ai == bi {
                    continue;
                }
                let mut gain = a.cmax + a.pen - b.cmin - b.pen;
                let mut absorb_cap = a.flow;
                for (&pi, quit) in &pquit {
                    let sa = a.seats.get(&pi).copied().unwrap_or(0.0);
                    let sb = b.seats.get(&pi).copied().unwrap_or(0.0);
                    let d = sa - sb;
                    if d > 0.0 {
                        gain -= d * quit.cmin;
                    } else if d < 0.0 {
                        gain += (-d) * quit.cmax;
                        absorb_cap = absorb_cap.min(quit.stock / (-d));
                    }
                }
                if gain <= tolerances::STABILITY_TOL || absorb_cap <= tolerances::FLOW_CLAMP {
                    continue;
                }
                if best.map(|(_, _, g)| gain > g).unwrap_or(true) {
                    best = Some((ai, bi, gain));
                }
            }
        }
        let Some((ai, bi, gain)) = best else { return 0.0 };

        let (src, tgt) = (&opts[ai], &opts[bi]);
        let mut plan = Plan::default();
        for (ci, r) in &src.routes_max {
            plan.add_route(*ci, r, -1.0);
        }
        for (ci, r) in &tgt.routes_min {
            plan.add_route(*ci, r, 1.0);
        }
        let mut hard_cap = f64::INFINITY;
        for (&pi, quit) in &pquit {
            let sa = src.seats.get(&pi).copied().unwrap_or(0.0);
            let sb = tgt.seats.get(&pi).copied().unwrap_or(0.0);
            let d = sa - sb;
            if d > 0.0 {
                plan.add_route(quit.class, &quit.rmin, d);
            } else if d < 0.0 {
                plan.add_route(quit.class, &quit.rmax, d);
                hard_cap = hard_cap.min(quit.stock / (-d));
            }
        }
        let pen_slope = self.rho
            * ((src.pen_active as u8 as f64) + (tgt.pen_active as u8 as f64));
        let (src_kind, tgt_kind) = (src.kind, tgt.kind);
        let moved = self.apply_plan(&plan, gain, pen_slope, hard_cap);
        if moved > 0.0 {
            if let OptKind::Seq(si) = src_kind {
                self.f_seq[si] -= moved;
                if self.f_seq[si] < tolerances::FLOW_CLAMP {
                    self.f_seq[si] = self.f_seq[si].max(0.0);
                }
            }
            if let OptKind::Seq(si) = tgt_kind {
                self.f_seq[si] += moved;
            }
        }
        moved
    }

    /// Solves the one-dimensional proximal step along `plan` and applies
    /// it. Returns the moved amount.
    fn apply_plan(&mut self, plan: &Plan, gain: f64, pen_slope: f64, hard_cap: f64) -> f64 {
        if plan.terms.is_empty() {
            return 0.0;
        }
        // Newton denominator: congestion response of the moved cost mass
        // plus penalty slope plus the proximal term.
        let mut link_veh: BTreeMap<LinkId, f64> = BTreeMap::new();
        let mut link_amass: BTreeMap<LinkId, f64> = BTreeMap::new();
        let mut cap = hard_cap;
        for (&(ci, l), &coef) in &plan.terms {
            if coef < 0.0 {
                cap = cap.min(self.class_flow[ci][l.idx()] / (-coef));
            }
            let c = &self.classes[ci];
            let vehicular = matches!(
                c.id,
                ClassId::DaSolo { .. } | ClassId::RdQuit { .. } | ClassId::RdLevel { .. }
            );
            if vehicular {
                *link_veh.entry(l).or_insert(0.0) += coef;
            }
            let (a, _) = self.cm.coeffs(c.layer);
            *link_amass.entry(l).or_insert(0.0) += coef * a;
        }
        let mut curvature = 0.0;
        for (&l, &dv) in &link_veh {
            let link = self.net.link(l);
            let am = link_amass.get(&l).copied().unwrap_or(0.0);
            curvature += am * dv * link.travel_time_derivative(self.x_veh[l.idx()]);
        }
        let denom = curvature.max(0.0)
            + pen_slope
            + plan.coordinates as f64 / self.theta_flow.theta();
        let mut delta = gain / denom.max(1e-12);
        delta = delta.min(cap).max(0.0);
        if delta <= tolerances::FLOW_CLAMP {
            return 0.0;
        }
        for (&(ci, l), &coef) in &plan.terms {
            let v = &mut self.class_flow[ci][l.idx()];
            *v += coef * delta;
            debug_assert!(*v > -tolerances::FLOW_CLAMP * 1e3, "flow sign error");
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.refresh_flows_and_costs();
        delta
    }

    // ------------------------------------------------------------------
    // Step 1.5: gaps

    fn compute_gaps(&self) -> (f64, f64) {
        let costs = self.modal_costs();
        let mut g_mode = 0.0;
        for (di, c) in costs.iter().enumerate() {
            let best = c.iter().copied().fold(f64::INFINITY, f64::min);
            if !best.is_finite() {
                continue;
            }
            for m in 0..4 {
                if c[m].is_finite() && self.q[di][m] > 0.0 {
                    g_mode += self.q[di][m] * (c[m] - best).max(0.0);
                }
            }
        }

        let mut g_route = 0.0;
        // Route-internal spread of every used class.
        for ci in 0..self.classes.len() {
            let total = self.class_total(ci);
            if total <= tolerances::USED_FLOW_FACTOR * self.q_total {
                continue;
            }
            let spread = (self.class_max_cost(ci) - self.class_min_cost(ci)).max(0.0);
            g_route += total * spread;
        }
        // Cross-option gap per group, weighted by the flow able to move.
        for gi in 0..self.groups.len() {
            g_route += self.group_option_gap(gi);
        }
        (g_mode / self.q_total, g_route / self.q_total)
    }

    /// Movable-mass-weighted improvement available from option exchange in
    /// one group; mirrors `push_group`'s direction search read-only.
    fn group_option_gap(&self, gi: usize) -> f64 {
        let group = &self.groups[gi];
        struct Lite {
            seats: BTreeMap<usize, f64>,
            flow: f64,
            cmin: f64,
            cmax: f64,
        }
        let mut pq: BTreeMap<usize, (f64, f64, f64)> = BTreeMap::new();
        for &pi in &group.pax {
            if let Some(ci) = self.solo_class[pi][2] {
                pq.insert(
                    pi,
                    (
                        self.class_min_cost(ci),
                        self.class_max_cost(ci),
                        self.rp_quit_stock(pi),
                    ),
                );
            }
        }
        let mut opts: Vec<Lite> = Vec::new();
        for &si in &group.seq_ids {
            let mut seats = BTreeMap::new();
            let mut ok = true;
            for od in seq_served_ods(&self.pool.sequences[si]) {
                let pi = self.demand_of_od[&od];
                if !pq.contains_key(&pi) {
                    ok = false;
                    break;
                }
                seats.insert(pi, self.pool.sequences[si].seats_for(od) as f64);
            }
            if !ok {
                continue;
            }
            let (cmin, cmax) = self.seq_bundle_costs(si);
            if !cmin.is_finite() {
                continue;
            }
            let pen = self.quota_price(si);
            opts.push(Lite {
                seats,
                flow: self.f_seq[si],
                cmin: cmin + pen,
                cmax: cmax + pen,
            });
        }
        if let Some(ci) = self.solo_class[group.driver][1] {
            opts.push(Lite {
                seats: BTreeMap::new(),
                flow: self.rd_quit_stock(group.driver),
                cmin: self.class_min_cost(ci),
                cmax: self.class_max_cost(ci),
            });
        }
        let mut worst = 0.0f64;
        for a in &opts {
            if a.flow <= tolerances::USED_FLOW_FACTOR * self.q_total {
                continue;
            }
            for b in &opts {
                if std::ptr::eq(a, b) {
                    continue;
                }
                let mut gain = a.cmax - b.cmin;
                let mut movable = a.flow;
                for (&pi, &(qmin, qmax, stock)) in &pq {
                    let d = a.seats.get(&pi).copied().unwrap_or(0.0)
                        - b.seats.get(&pi).copied().unwrap_or(0.0);
                    if d > 0.0 {
                        gain -= d * qmin;
                    } else if d < 0.0 {
                        gain += (-d) * qmax;
                        movable = movable.min(stock / (-d));
                    }
                }
                if gain > 0.0 && movable > tolerances::USED_FLOW_FACTOR * self.q_total {
                    worst = worst.max(gain * movable);
                }
            }
        }
        worst
    }

    /// Bundle route costs of one sequence over its cheapest and costliest
    /// sequence-routes, without the quota price.
    fn seq_bundle_costs(&self, si: usize) -> (f64, f64) {
        let mut cmin = 0.0;
        let mut cmax = 0.0;
        for l in 1..=self.structs[si].level_count() {
            let Some(&ci) = self.level_class.get(&(si, l)) else { continue };
            let lo = self.class_min_cost(ci);
            let hi = self.class_max_cost(ci);
            if !lo.is_finite() {
                return (f64::INFINITY, f64::INFINITY);
            }
            cmin += lo;
            cmax += hi;
        }
        (cmin, cmax)
    }

    fn class_total(&self, ci: usize) -> f64 {
        let c = &self.classes[ci];
        match c.id {
            ClassId::RdLevel { seq, .. } => self.f_seq[seq],
            ClassId::DaSolo { .. } => self.q[c.demand][0],
            ClassId::PtSolo { .. } => self.q[c.demand][3],
            ClassId::RdQuit { .. } => self.rd_quit_stock(c.demand),
            ClassId::RpQuit { .. } => self.rp_quit_stock(c.demand),
            ClassId::RpSpan { .. } => 0.0,
        }
    }

    // ------------------------------------------------------------------
    // Inner iteration and outer updates

    fn inner_iteration(&mut self) -> (f64, f64) {
        self.set_all_labels();
        self.update_mode_split();
        self.update_matching();
        self.update_bush_structures();
        self.push_flows();
        if log::log_enabled!(log::Level::Trace) {
            let qm: Vec<f64> = (0..4)
                .map(|m| self.q.iter().map(|row| row[m]).sum())
                .collect();
            log::trace!(
                "state: q {:?}, F {:.2}, Z {:.2}, rho {:.2}",
                qm,
                self.f_seq.iter().sum::<f64>(),
                self.z.iter().sum::<f64>(),
                self.rho
            );
        }
        self.compute_gaps()
    }

    fn violation_norm(&self) -> f64 {
        self.f_seq
            .iter()
            .zip(&self.z)
            .map(|(&f, &z)| (f - z).max(0.0).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// `A / (A + g)` with `A` the penalty part of the augmented objective.
    fn infeasibility_ratio(&self, gap_per_traveler: f64) -> f64 {
        let mut a = 0.0;
        for (si, &mu) in self.mu.iter().enumerate() {
            let h = self.f_seq[si] - self.z[si];
            if self.rho > 0.0 {
                let active = (mu + self.rho * h).max(0.0);
                a += (active * active - mu * mu) / (2.0 * self.rho);
            } else {
                a += mu * h.max(0.0);
            }
        }
        let a = a.max(0.0);
        let g = gap_per_traveler.max(0.0) * self.q_total;
        if a + g <= 0.0 {
            0.0
        } else {
            a / (a + g)
        }
    }

    fn update_al(&mut self, outer: usize, violation: f64, prev_violation: f64, gap: f64) {
        if outer == 0 {
            // Multiplier seed from stationarity of the driver subproblem:
            // a sequence whose passengers are fully absorbed carries a true
            // scarcity rent equal to the driver's surplus over quitting.
            // Seeding where passengers are still waiting would price entry
            // to indifference and stall the match expansion instead.
            for gi in 0..self.groups.len() {
                let driver = self.groups[gi].driver;
                let quit = match self.solo_class[driver][1] {
                    Some(ci) => self.class_min_cost(ci),
                    None => continue,
                };
                for &si in &self.groups[gi].seq_ids {
                    let satisfied =
                        self.f_seq[si] <= self.z[si] + self.cfg.eps_outer * self.q_total;
                    let scarce = seq_served_ods(&self.pool.sequences[si]).iter().all(|od| {
                        let pi = self.demand_of_od[od];
                        self.rp_quit_stock(pi) <= self.cfg.eps_outer * self.q[pi][2].max(1.0)
                    });
                    if !satisfied || !scarce {
                        continue;
                    }
                    let drv = self.seq_driver_cost_min(si);
                    if drv.is_finite() {
                        self.mu[si] = (quit - drv).max(0.0);
                    }
                }
            }
            let h_sum: f64 = self
                .f_seq
                .iter()
                .zip(&self.z)
                .map(|(&f, &z)| (f - z).max(0.0))
                .sum();
            let g_abs = gap.max(0.0) * self.q_total;
            self.rho = if h_sum > tolerances::FLOW_CLAMP {
                (g_abs / h_sum).max(1.0)
            } else {
                1.0
            };
            debug!("al seed: rho {:.3}, mu max {:.3}", self.rho, self.mu.iter().cloned().fold(0.0, f64::max));
            return;
        }
        for (si, mu) in self.mu.iter_mut().enumerate() {
            let h = self.f_seq[si] - self.z[si];
            *mu = (*mu + self.rho * h).max(0.0);
        }
        if violation > self.cfg.sigma2 * prev_violation
            && violation > tolerances::FLOW_CLAMP * self.q_total
        {
            self.rho *= self.cfg.sigma1;
        }
    }

    // ------------------------------------------------------------------
    // Invariants (test mode)

    fn check_state(&self) -> Result<(), String> {
        let tol = tolerances::COUPLING_TOL_FACTOR * self.q_total.max(1.0) * 1e3;
        for (di, d) in self.demands.iter().enumerate() {
            let sum: f64 = self.q[di].iter().sum();
            if (sum - d.total).abs() > tol {
                return Err(format!(
                    "mode conservation off at ({}, {}): {} vs {}",
                    d.od.o, d.od.d, sum, d.total
                ));
            }
            for m in 0..4 {
                if !d.available[m] && self.q[di][m] > tol {
                    return Err(format!("flow on unavailable mode {m} at demand {di}"));
                }
            }
        }
        for (ci, flows) in self.class_flow.iter().enumerate() {
            for (li, &f) in flows.iter().enumerate() {
                if f < -tolerances::FLOW_CLAMP {
                    return Err(format!("negative flow on class {ci} link {li}: {f}"));
                }
            }
            // Class conservation: inflow at the destination equals the
            // class total.
            let c = &self.classes[ci];
            let total = self.class_total(ci);
            let inflow: f64 = self
                .net
                .incoming(c.dest)
                .iter()
                .map(|l| flows[l.idx()])
                .sum::<f64>()
                - self
                    .net
                    .outgoing(c.dest)
                    .iter()
                    .map(|l| flows[l.idx()])
                    .sum::<f64>();
            if (inflow - total).abs() > tol.max(1e-6 * self.q_total) {
                return Err(format!(
                    "class {} conserves {} at destination, expected {}",
                    c.id, inflow, total
                ));
            }
        }
        for (si, f) in self.f_seq.iter().enumerate() {
            if *f < -tolerances::FLOW_CLAMP {
                return Err(format!("negative sequence flow {f} on {si}"));
            }
        }
        for (di, d) in self.demands.iter().enumerate() {
            let md = self.matched_driver_flow(di);
            if md > self.q[di][1] + tol.max(1e-6 * self.q_total) {
                return Err(format!(
                    "matched driver flow {md} exceeds RD demand {} at ({}, {})",
                    self.q[di][1], d.od.o, d.od.d
                ));
            }
            let mp = self.matched_pax_flow(di);
            if mp > self.q[di][2] + tol.max(1e-6 * self.q_total) {
                return Err(format!(
                    "matched seats {mp} exceed RP demand {} at ({}, {})",
                    self.q[di][2], d.od.o, d.od.d
                ));
            }
        }
        for (bi, b) in self.bushes.iter().enumerate() {
            if !b.is_topological(self.net) {
                return Err(format!("bush {bi} lost acyclicity"));
            }
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // Export

    fn export(
        &self,
        converged: bool,
        gaps: (f64, f64),
        trace: Vec<(usize, f64, f64)>,
        outer_trace: Vec<OuterRecord>,
    ) -> EquilibriumSolution {
        let mut sol = Solution {
            quota: self.z.clone(),
            seq_flow: self.f_seq.clone(),
            ..Solution::default()
        };
        for (di, d) in self.demands.iter().enumerate() {
            for m in Mode::ALL {
                let v = self.q[di][m.index()];
                if v > 0.0 {
                    sol.mode_demand.insert((d.od, m), v);
                }
            }
        }
        for (ci, c) in self.classes.iter().enumerate() {
            let mut map = BTreeMap::new();
            for (li, &f) in self.class_flow[ci].iter().enumerate() {
                if f > tolerances::FLOW_CLAMP {
                    map.insert(LinkId(li as u32), f);
                }
            }
            if !map.is_empty() {
                sol.class_flows.insert(c.id, map);
            }
        }

        let mut mode_costs = BTreeMap::new();
        let costs = self.modal_costs();
        for (di, d) in self.demands.iter().enumerate() {
            for m in Mode::ALL {
                mode_costs.insert((d.od, m), costs[di][m.index()]);
            }
        }
        let mode_demand = sol.mode_demand.clone();

        let mut sequences = Vec::new();
        for (si, seq) in self.pool.sequences.iter().enumerate() {
            let (dmin, dmax) = self.seq_driver_cost_bounds(si);
            let slot_costs = seq_served_ods(seq)
                .into_iter()
                .map(|od| (od, self.slot_cost(si, self.demand_of_od[&od])))
                .collect();
            sequences.push(SequenceReport {
                id: si,
                route: seq.route_string(),
                flow: self.f_seq[si],
                quota: self.z[si],
                multiplier: self.mu[si],
                driver_cost_min: dmin,
                driver_cost_max: dmax,
                slot_costs,
            });
        }

        let mut realized = [0.0; 4];
        for (di, _) in self.demands.iter().enumerate() {
            realized[0] += self.q[di][0] + self.rd_quit_stock(di);
            realized[1] += self.matched_driver_flow(di);
            realized[2] += self.matched_pax_flow(di);
            realized[3] += self.q[di][3] + self.rp_quit_stock(di);
        }
        let total: f64 = realized.iter().sum();
        if total > 0.0 {
            realized.iter_mut().for_each(|v| *v /= total);
        }

        EquilibriumSolution {
            solution: sol,
            converged,
            gaps: GapReport {
                g_mode: gaps.0,
                g_route: gaps.1,
                infeasibility: self.infeasibility_ratio(gaps.0 + gaps.1),
                inner_iterations: 0,
                outer_iterations: outer_trace.len(),
            },
            gap_trace: trace,
            outer_trace,
            vehicle_flows: self.x_veh.clone(),
            link_times: self.times.clone(),
            sequences,
            mode_costs,
            mode_demand,
            realized_shares: realized,
            wall_seconds: 0.0,
        }
    }

    fn seq_driver_cost_bounds(&self, si: usize) -> (f64, f64) {
        let mut lo = self.cm.mode(Mode::Rd).fixed;
        let mut hi = lo;
        for l in 1..=self.structs[si].level_count() {
            let Some(&ci) = self.level_class.get(&(si, l)) else { continue };
            let c = &self.classes[ci];
            let bush = &self.bushes[c.bush];
            match bush.cheapest_route(self.net, c.dest) {
                Some(r) => lo += self.price_driver_share(c.layer, &r),
                None => return (f64::INFINITY, f64::INFINITY),
            }
            match bush.costliest_route(self.net, ci as u64, c.dest) {
                Some(r) => hi += self.price_driver_share(c.layer, &r),
                None => return (f64::INFINITY, f64::INFINITY),
            }
        }
        (lo, hi)
    }
}

// ----------------------------------------------------------------------
// Free helpers

fn layer_cost_vec(cm: &CostModel, net: &Network, layer: CostLayer, times: &[f64]) -> Vec<f64> {
    net.links
        .iter()
        .enumerate()
        .map(|(i, l)| cm.link_cost(layer, l, times[i]))
        .collect()
}

fn scale_vec(v: &mut [f64], ratio: f64) {
    let r = ratio.clamp(0.0, 1.0);
    for x in v.iter_mut() {
        *x *= r;
    }
}

fn distinct_ods(seq: &crate::matchgen::MatchingSequence) -> usize {
    seq_served_ods(seq).len()
}

fn seq_served_ods(seq: &crate::matchgen::MatchingSequence) -> Vec<OdPair> {
    let mut ods: Vec<OdPair> = Vec::new();
    for s in &seq.slots {
        if !ods.contains(&s.od) {
            ods.push(s.od);
        }
    }
    ods.sort_unstable_by_key(|od| (od.o, od.d));
    ods
}

/// Natural proximal step scale: total demand per unit of average best-OD
/// cost at the initial times. A literal unit step would move one traveler
/// per cost unit and could never rebalance a five-digit demand within the
/// iteration budget.
fn step_scale(
    q_total: f64,
    demands: &[OdDemand],
    classes: &[ClassInfo],
    solo_class: &[[Option<usize>; 4]],
    bushes: &[Bush],
    net: &Network,
) -> f64 {
    let mut weighted = 0.0;
    let mut mass = 0.0;
    for (di, d) in demands.iter().enumerate() {
        let mut best = f64::INFINITY;
        for slot in 0..4 {
            if let Some(ci) = solo_class[di][slot] {
                let c = &classes[ci];
                let cost = bushes[c.bush].min_cost_to(net, c.dest);
                if cost.is_finite() {
                    best = best.min(cost);
                }
            }
        }
        if best.is_finite() && d.total > 0.0 {
            weighted += d.total * best;
            mass += d.total;
        }
    }
    if mass <= 0.0 || weighted <= 0.0 {
        return 1.0;
    }
    let mean_cost = weighted / mass;
    (q_total / mean_cost).max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::matchgen::{generate, GenConfig};
    use crate::netio::{Link, ModeCostParams, Network};

    fn link(from: u32, to: u32, cap: f64, fft: f64) -> Link {
        Link {
            from: NodeId(from),
            to: NodeId(to),
            capacity: cap,
            length: 1.0,
            fft,
            b: 0.15,
            power: 4.0,
            speed: 0.0,
            toll: 0.0,
            link_type: 1,
        }
    }

    fn da_only(od: OdPair, total: f64) -> OdDemand {
        OdDemand {
            od,
            total,
            available: [true, false, false, false],
        }
    }

    #[test]
    fn mode_shift_closed_forms() {
        assert_eq!(mode_delta(100.0, 1.0, 30.0), 30.0);
        assert_eq!(mode_delta(10.0, 1.0, 30.0), 10.0);
        assert_eq!(mode_delta(100.0, 1.0, 0.0), 0.0);
    }

    #[test]
    fn step_control_dampens_on_growth() {
        let cfg = SolveConfig::default();
        let mut s = StepControl::new(100.0, &cfg);
        let t0 = s.theta();
        s.observe(1.0);
        s.observe(2.0);
        let grown = s.theta();
        s.observe(1.5);
        let shrunk = s.theta();
        assert!(grown < t0);
        assert!(shrunk < grown);
        assert!((t0 / s.theta() - (1.0 + 0.1 + 1.9 + 0.1)).abs() < 1e-12);
    }

    #[test]
    fn zero_demand_returns_immediately() {
        let net = fixtures::grid_network();
        let cm = fixtures::grid_cost_model();
        let pool = generate(
            &net,
            &fixtures::grid_driver_ods(),
            &fixtures::grid_passenger_ods(),
            &fixtures::grid_match_config(),
        )
        .unwrap();
        let demands: Vec<OdDemand> = fixtures::grid_demands()
            .into_iter()
            .map(|mut d| {
                d.total = 0.0;
                d
            })
            .collect();
        let out = solve(&net, &cm, &pool, &demands, &SolveConfig::default()).unwrap();
        assert!(out.converged);
        assert_eq!(out.gaps.inner_iterations, 0);
        assert!(out.vehicle_flows.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn no_available_mode_is_an_input_error() {
        let net = fixtures::grid_network();
        let cm = fixtures::grid_cost_model();
        let pool = MatchingPool::default();
        let demands = vec![OdDemand {
            od: OdPair::new(1, 16),
            total: 10.0,
            available: [false; 4],
        }];
        let err = solve(&net, &cm, &pool, &demands, &SolveConfig::default()).unwrap_err();
        assert!(matches!(err, SolveError::Input(_)));
    }

    #[test]
    fn disconnected_destination_is_an_error() {
        // One-way link only; the reverse OD cannot be routed.
        let net = Network::new(2, 1, 2, vec![link(1, 2, 1000.0, 1.0)]).unwrap();
        let cm = CostModel {
            params: [ModeCostParams::default(); 4],
            pt_congested_time: true,
        };
        let pool = MatchingPool::default();
        let demands = vec![da_only(OdPair::new(2, 1), 50.0)];
        let err = solve(&net, &cm, &pool, &demands, &SolveConfig::default()).unwrap_err();
        assert!(matches!(err, SolveError::Unreachable(_)));
    }

    #[test]
    fn two_route_drive_alone_equilibrium() {
        // Parallel links with different free-flow times and capacities;
        // the expected split solves t1(x) = t2(q - x), found here by
        // bisection on the closed-form response.
        let l1 = link(1, 2, 1000.0, 10.0);
        let l2 = link(1, 2, 2000.0, 20.0);
        let net = Network::new(2, 1, 2, vec![l1, l2]).unwrap();
        let cm = CostModel {
            params: [ModeCostParams::default(); 4],
            pt_congested_time: true,
        };
        let q = 3000.0;
        let demands = vec![da_only(OdPair::new(1, 2), q)];
        let pool = MatchingPool::default();
        let cfg = SolveConfig {
            check_invariants: true,
            ..SolveConfig::default()
        };
        let out = solve(&net, &cm, &pool, &demands, &cfg).unwrap();
        assert!(out.converged, "gaps {:?}", out.gaps);

        let (mut lo, mut hi) = (0.0, q);
        let t = |x1: f64| {
            net.link(LinkId(0)).travel_time(x1) - net.link(LinkId(1)).travel_time(q - x1)
        };
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if t(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let expect = 0.5 * (lo + hi);
        let got = out.vehicle_flows[0];
        assert!(
            (got - expect).abs() <= 0.01 * q,
            "flow {got} vs bisection {expect}"
        );
        let t1 = out.link_times[0];
        let t2 = out.link_times[1];
        assert!((t1 - t2).abs() < 0.5, "times {t1} vs {t2}");
    }

    #[test]
    fn greedy_quota_prefers_distinct_coverage() {
        let net = fixtures::grid_network();
        let cm = fixtures::grid_cost_model();
        let pool = generate(
            &net,
            &fixtures::grid_driver_ods(),
            &fixtures::grid_passenger_ods(),
            &fixtures::grid_match_config(),
        )
        .unwrap();
        let demands = fixtures::grid_demands();
        let cfg = SolveConfig::default();
        let eng = Engine::init(&net, &cm, &pool, &demands, &cfg).unwrap();
        let nested = pool
            .sequences
            .iter()
            .find(|s| s.route_string() == "1-4-7-10-13-16")
            .expect("nested sequence present");
        // Rows are capped by total OD demand, so the two passenger rows
        // bind the fill at 20,000 before the driver row does.
        assert!((eng.z[nested.id] - 20_000.0).abs() < 1e-6, "z {:?}", eng.z);
        let z_total: f64 = eng.z.iter().sum();
        assert!((z_total - 20_000.0).abs() < 1e-6, "only the best sequence filled");
    }

    #[test]
    fn quota_projection_respects_caps() {
        let net = fixtures::grid_network();
        let cm = fixtures::grid_cost_model();
        let pool = generate(
            &net,
            &fixtures::grid_driver_ods(),
            &fixtures::grid_passenger_ods(),
            &fixtures::grid_match_config(),
        )
        .unwrap();
        let demands = fixtures::grid_demands();
        let cfg = SolveConfig::default();
        let eng = Engine::init(&net, &cm, &pool, &demands, &cfg).unwrap();
        let mut z = vec![5_000.0; pool.sequences.len()];
        eng.project_quota(&mut z);
        for d in demands.iter() {
            if !d.allows(Mode::Rp) {
                continue;
            }
            let od = d.od;
            let seats: f64 = pool
                .sequences
                .iter()
                .map(|s| s.seats_for(od) as f64 * z[s.id])
                .sum();
            assert!(
                seats <= d.total + 1e-6,
                "passenger cap violated: {seats} > {}",
                d.total
            );
        }
        let vehicles: f64 = z.iter().sum();
        assert!(vehicles <= demands[0].total + 1e-6, "driver cap violated: {vehicles}");
        assert!(z.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn line_sharing_instance_matches_all_passengers() {
        // Uncongested line 1-2-3-4; sharing is strictly cheaper for both
        // sides, so every passenger should end up matched.
        let mut links = Vec::new();
        for (u, v) in [(1, 2), (2, 3), (3, 4)] {
            links.push(link(u, v, 1e6, 1.0));
            links.push(link(v, u, 1e6, 1.0));
        }
        let net = Network::new(4, 1, 4, links).unwrap();
        let cm = CostModel {
            params: [
                ModeCostParams { alpha: 1.0, beta: 4.0, ..Default::default() },
                ModeCostParams { alpha: 1.0, beta: 4.0, nu_d: 2.0, ..Default::default() },
                ModeCostParams { alpha: 1.0, nu_d: 2.0, ..Default::default() },
                ModeCostParams { alpha: 1.0, nu_d: 6.0, ..Default::default() },
            ],
            pt_congested_time: true,
        };
        let _ = env_logger::builder().is_test(true).try_init();
        let driver = OdPair::new(1, 4);
        let pax = OdPair::new(2, 3);
        let pool = generate(&net, &[driver], &[pax], &GenConfig::default()).unwrap();
        assert!(!pool.sequences.is_empty());
        let demands = vec![
            OdDemand { od: driver, total: 100.0, available: [true, true, false, false] },
            OdDemand { od: pax, total: 60.0, available: [false, false, true, true] },
        ];
        let cfg = SolveConfig {
            check_invariants: true,
            ..SolveConfig::default()
        };
        let out = solve(&net, &cm, &pool, &demands, &cfg).unwrap();
        assert!(out.converged, "gaps {:?}", out.gaps);
        let seats: f64 = pool
            .sequences
            .iter()
            .map(|s| s.seats_for(pax) as f64 * out.solution.seq_flow[s.id])
            .sum();
        assert!(
            (seats - 60.0).abs() < 1.0,
            "matched seats {seats}, expected all 60 passengers; flows {:?}",
            out.solution.seq_flow
        );
        // Feasibility of the quota constraint at termination.
        for (si, &f) in out.solution.seq_flow.iter().enumerate() {
            assert!(f <= out.solution.quota[si] + 0.01 * 160.0, "F exceeds Z on {si}");
        }
    }
}
