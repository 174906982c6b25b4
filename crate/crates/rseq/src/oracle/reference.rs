//! Averaged best-response reference solver.
//!
//! Independent of the production solver by construction: routes live on
//! exhaustively enumerated simple paths, the matching program is solved by
//! exact vertex enumeration every iteration, and the state is a plain
//! running average of best responses. Deliberately slow and restricted to
//! desk-size instances; its sole job is to produce equilibria the production
//! solver can be compared against.

use std::collections::{BTreeMap, BTreeSet};

use log::debug;

use crate::hypernet::{
    matching_rows, structure, ClassId, MatchingRows, OdDemand, SequenceStructure, Solution,
};
use crate::matchgen::{MatchingPool, OdPair};
use crate::netio::{CostLayer, CostModel, LinkId, Mode, Network};
use crate::tolerances;

use super::paths::enumerate_paths;
use super::util::{link_times, price_path};
use super::verify::{verify_solution, VerifyReport};
use super::{lp, OracleError};

/// Instances past these sizes are refused rather than solved badly.
const MAX_NODES: u32 = 20;
const MAX_SEQUENCES: usize = 3;

/// Strictness slack for the individual-rationality gate in the bundle fill.
const IR_EPS: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct MsaOptions {
    pub max_iterations: usize,
    /// Residual check cadence; the run stops early once the worst family
    /// drops under `target_residual`.
    pub check_every: usize,
    /// Simple-path hop cap. Routes beyond the cap are invisible here but not
    /// to the checker, so a too-tight cap shows up as a route residual.
    pub hop_limit: usize,
    pub max_paths: usize,
    pub target_residual: f64,
}

impl Default for MsaOptions {
    fn default() -> Self {
        MsaOptions {
            max_iterations: 30_000,
            check_every: 1_000,
            hop_limit: 14,
            max_paths: 4_000,
            target_residual: 0.5 * tolerances::RESIDUAL_TOL,
        }
    }
}

#[derive(Debug)]
pub struct ReferenceOutcome {
    pub solution: Solution,
    pub report: VerifyReport,
    pub iterations: usize,
}

struct Cls {
    id: ClassId,
    od: OdPair,
    layer: CostLayer,
    /// Flow per enumerated path of `od`.
    flows: Vec<f64>,
}

/// Per-sequence entry costs under current times.
struct SeqEntry {
    driver_entry: f64,
    slot_entry: Vec<f64>,
    /// Best bundle path index per level, `None` on empty levels.
    level_path: Vec<Option<usize>>,
    /// Member bundle cost minus member fallback costs; the matching program
    /// breaks platform ties in favor of the lower total.
    tie_cost: f64,
}

type BestMap = BTreeMap<OdPair, (usize, f64)>;

struct Msa<'a> {
    net: &'a Network,
    cm: &'a CostModel,
    pool: &'a MatchingPool,
    demands: &'a [OdDemand],
    sts: Vec<SequenceStructure>,
    rows: MatchingRows,
    paths: BTreeMap<OdPair, Vec<Vec<LinkId>>>,
    classes: Vec<Cls>,
    class_index: BTreeMap<ClassId, usize>,
    q: BTreeMap<(OdPair, Mode), f64>,
    f: Vec<f64>,
    z: Vec<f64>,
    q_total: f64,
    used_tol: f64,
}

pub fn brute_force_equilibrium(
    net: &Network,
    cm: &CostModel,
    pool: &MatchingPool,
    demands: &[OdDemand],
    opts: &MsaOptions,
) -> Result<ReferenceOutcome, OracleError> {
    cm.validate()
        .map_err(|e| OracleError::DomainExceeded(format!("cost model: {e}")))?;
    if net.node_count() > MAX_NODES {
        return Err(OracleError::DomainExceeded(format!(
            "{} nodes exceed the reference limit of {MAX_NODES}",
            net.node_count()
        )));
    }
    if pool.sequences.len() > MAX_SEQUENCES {
        return Err(OracleError::DomainExceeded(format!(
            "{} sequences exceed the reference limit of {MAX_SEQUENCES}",
            pool.sequences.len()
        )));
    }
    for dem in demands {
        if !dem.available.iter().any(|&b| b) {
            return Err(OracleError::DomainExceeded(format!(
                "demand {} has no available mode",
                dem.od
            )));
        }
    }
    let q_total: f64 = demands.iter().map(|d| d.total).sum();
    if !(q_total > 0.0) {
        return Err(OracleError::DomainExceeded("zero total demand".into()));
    }

    let mut msa = Msa::build(net, cm, pool, demands, opts, q_total)?;
    let mut iterations = opts.max_iterations;
    let mut last: Option<(Solution, VerifyReport)> = None;
    for k in 1..=opts.max_iterations {
        msa.step(k)?;
        if k % opts.check_every == 0 {
            let sol = msa.export()?;
            let report = verify_solution(net, cm, pool, demands, &sol);
            debug!(
                "reference iteration {k}: worst residual {:.3e}",
                report.worst()
            );
            let done = report.worst() <= opts.target_residual;
            last = Some((sol, report));
            if done {
                iterations = k;
                break;
            }
        }
    }
    let (solution, report) = match last {
        Some(pair) if iterations < opts.max_iterations || opts.max_iterations % opts.check_every == 0 => pair,
        _ => {
            let sol = msa.export()?;
            let report = verify_solution(net, cm, pool, demands, &sol);
            (sol, report)
        }
    };
    Ok(ReferenceOutcome {
        solution,
        report,
        iterations,
    })
}

impl<'a> Msa<'a> {
    fn build(
        net: &'a Network,
        cm: &'a CostModel,
        pool: &'a MatchingPool,
        demands: &'a [OdDemand],
        opts: &MsaOptions,
        q_total: f64,
    ) -> Result<Self, OracleError> {
        let sts: Vec<SequenceStructure> = pool.sequences.iter().map(structure).collect();

        let mut ods: BTreeSet<OdPair> = demands.iter().map(|d| d.od).collect();
        ods.extend(pool.groups.iter().map(|g| g.od));
        ods.extend(pool.served_passenger_ods());
        for st in &sts {
            ods.extend(st.levels.iter().filter(|l| !l.empty).map(|l| l.od));
        }
        let mut paths = BTreeMap::new();
        for od in ods {
            paths.insert(
                od,
                enumerate_paths(net, od.o, od.d, opts.hop_limit, opts.max_paths)?,
            );
        }

        let mut classes = Vec::new();
        let mut q = BTreeMap::new();
        for dem in demands {
            let od = dem.od;
            for m in Mode::ALL {
                if dem.allows(m) {
                    q.insert((od, m), 0.0);
                }
            }
            if dem.allows(Mode::Da) {
                classes.push((ClassId::DaSolo { od }, od, CostLayer::Da));
            }
            if dem.allows(Mode::Pt) {
                classes.push((ClassId::PtSolo { od }, od, CostLayer::Pt));
            }
            if dem.allows(Mode::Rd) {
                classes.push((ClassId::RdQuit { od }, od, CostLayer::Da));
            }
            if dem.allows(Mode::Rp) {
                classes.push((ClassId::RpQuit { od }, od, CostLayer::Pt));
            }
        }
        for seq in &pool.sequences {
            let st = &sts[seq.id];
            for l in 1..=st.level_count() {
                let lvl = st.level(l);
                if !lvl.empty {
                    classes.push((ClassId::RdLevel { seq: seq.id, level: l }, lvl.od, lvl.layer));
                }
            }
        }
        let classes: Vec<Cls> = classes
            .into_iter()
            .map(|(id, od, layer)| {
                let n = paths[&od].len();
                Cls {
                    id,
                    od,
                    layer,
                    flows: vec![0.0; n],
                }
            })
            .collect();
        let class_index = classes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id.clone(), i))
            .collect();

        Ok(Msa {
            net,
            cm,
            pool,
            demands,
            sts,
            rows: matching_rows(pool),
            paths,
            classes,
            class_index,
            q,
            f: vec![0.0; pool.sequences.len()],
            z: vec![0.0; pool.sequences.len()],
            q_total,
            used_tol: tolerances::USED_FLOW_FACTOR * q_total,
        })
    }

    fn mode_q(&self, od: OdPair, m: Mode) -> f64 {
        self.q.get(&(od, m)).copied().unwrap_or(0.0)
    }

    fn class_pos(&self, id: &ClassId) -> Option<usize> {
        self.class_index.get(id).copied()
    }

    fn vehicle_link_flows(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.net.links.len()];
        for cls in &self.classes {
            if !drives(cls.layer) {
                continue;
            }
            let ps = &self.paths[&cls.od];
            for (pi, &fx) in cls.flows.iter().enumerate() {
                if fx > 0.0 {
                    for &lid in &ps[pi] {
                        x[lid.idx()] += fx;
                    }
                }
            }
        }
        x
    }

    /// Cheapest path index and cost for one OD under one layer.
    fn min_path(&self, od: OdPair, layer: CostLayer, times: &[f64]) -> (usize, f64) {
        let ps = &self.paths[&od];
        let mut best = (0, f64::INFINITY);
        for (i, p) in ps.iter().enumerate() {
            let c = price_path(self.net, self.cm, layer, times, p);
            if c < best.1 {
                best = (i, c);
            }
        }
        best
    }

    fn best_maps(&self, times: &[f64]) -> (BestMap, BestMap) {
        let mut da_ods: BTreeSet<OdPair> = self.demands.iter().map(|d| d.od).collect();
        da_ods.extend(self.pool.groups.iter().map(|g| g.od));
        let mut pt_ods: BTreeSet<OdPair> = self.demands.iter().map(|d| d.od).collect();
        pt_ods.extend(self.pool.served_passenger_ods());
        let best_da = da_ods
            .into_iter()
            .map(|od| (od, self.min_path(od, CostLayer::Da, times)))
            .collect();
        let best_pt = pt_ods
            .into_iter()
            .map(|od| (od, self.min_path(od, CostLayer::Pt, times)))
            .collect();
        (best_da, best_pt)
    }

    fn entries(&self, times: &[f64], best_da: &BestMap, best_pt: &BestMap) -> Vec<SeqEntry> {
        self.pool
            .sequences
            .iter()
            .map(|seq| {
                let st = &self.sts[seq.id];
                let mut driver_entry = 0.0;
                let mut level_rp = vec![0.0; st.level_count()];
                let mut level_path = vec![None; st.level_count()];
                for l in 1..=st.level_count() {
                    let lvl = st.level(l);
                    if lvl.empty {
                        continue;
                    }
                    let (pi, _) = self.min_path(lvl.od, lvl.layer, times);
                    let path = &self.paths[&lvl.od][pi];
                    level_path[l - 1] = Some(pi);
                    driver_entry += self.driver_path_cost(lvl.layer, times, path);
                    level_rp[l - 1] =
                        price_path(self.net, self.cm, CostLayer::Rp, times, path);
                }
                let slot_entry: Vec<f64> = st
                    .spans
                    .iter()
                    .map(|sp| {
                        (sp.first_level..=sp.last_level)
                            .map(|l| level_rp[l - 1])
                            .sum()
                    })
                    .collect();
                let mut tie = driver_entry - best_da[&seq.driver_od].1;
                for (si, slot) in seq.slots.iter().enumerate() {
                    tie += slot_entry[si] - best_pt[&slot.od].1;
                }
                SeqEntry {
                    driver_entry,
                    slot_entry,
                    level_path,
                    tie_cost: tie,
                }
            })
            .collect()
    }

    fn driver_path_cost(&self, layer: CostLayer, times: &[f64], path: &[LinkId]) -> f64 {
        match layer {
            CostLayer::RdEmpty => price_path(self.net, self.cm, CostLayer::RdEmpty, times, path),
            CostLayer::RdWith { .. } => path
                .iter()
                .map(|&lid| self.cm.driver_share(self.net.link(lid), times[lid.idx()]))
                .sum(),
            _ => unreachable!("driver level with non-driver layer"),
        }
    }

    /// Flow-weighted total driver cost and per-slot passenger costs of each
    /// sequence under current flows (totals, not averages).
    fn seq_totals(&self, times: &[f64]) -> Vec<(f64, Vec<f64>)> {
        self.pool
            .sequences
            .iter()
            .map(|seq| {
                let st = &self.sts[seq.id];
                let mut dtot = 0.0;
                let mut level_rp = vec![0.0; st.level_count()];
                for l in 1..=st.level_count() {
                    let lvl = st.level(l);
                    if lvl.empty {
                        continue;
                    }
                    let pos = self.class_pos(&ClassId::RdLevel { seq: seq.id, level: l });
                    let cls = &self.classes[pos.expect("level class exists")];
                    let ps = &self.paths[&cls.od];
                    for (pi, &x) in cls.flows.iter().enumerate() {
                        if x <= 0.0 {
                            continue;
                        }
                        dtot += x * self.driver_path_cost(lvl.layer, times, &ps[pi]);
                        level_rp[l - 1] +=
                            x * price_path(self.net, self.cm, CostLayer::Rp, times, &ps[pi]);
                    }
                }
                let stots = st
                    .spans
                    .iter()
                    .map(|sp| {
                        (sp.first_level..=sp.last_level)
                            .map(|l| level_rp[l - 1])
                            .sum()
                    })
                    .collect();
                (dtot, stots)
            })
            .collect()
    }

    fn class_total(&self, id: &ClassId, times: &[f64]) -> f64 {
        match self.class_pos(id) {
            None => 0.0,
            Some(pos) => {
                let cls = &self.classes[pos];
                let ps = &self.paths[&cls.od];
                cls.flows
                    .iter()
                    .enumerate()
                    .filter(|(_, &x)| x > 0.0)
                    .map(|(pi, &x)| {
                        x * price_path(self.net, self.cm, cls.layer, times, &ps[pi])
                    })
                    .sum()
            }
        }
    }

    /// Average cost per mode and OD: flow-weighted outcome for used modes,
    /// optimistic cheapest entry for unused ones. Matches the checker's
    /// mode-equilibrium accounting so fixed points of the averaged dynamic
    /// are exactly the states it accepts.
    fn mode_averages(
        &self,
        times: &[f64],
        entries: &[SeqEntry],
        best_da: &BestMap,
        best_pt: &BestMap,
    ) -> BTreeMap<OdPair, [f64; 4]> {
        let totals = self.seq_totals(times);
        let mut out = BTreeMap::new();
        for dem in self.demands {
            let od = dem.od;
            let mut avg = [f64::INFINITY; 4];

            if dem.allows(Mode::Da) {
                let qd = self.mode_q(od, Mode::Da);
                avg[Mode::Da.index()] = if qd > self.used_tol {
                    self.class_total(&ClassId::DaSolo { od }, times) / qd
                } else {
                    best_da[&od].1
                } + self.cm.mode(Mode::Da).fixed;
            }
            if dem.allows(Mode::Pt) {
                let qp = self.mode_q(od, Mode::Pt);
                avg[Mode::Pt.index()] = if qp > self.used_tol {
                    self.class_total(&ClassId::PtSolo { od }, times) / qp
                } else {
                    best_pt[&od].1
                } + self.cm.mode(Mode::Pt).fixed;
            }
            if dem.allows(Mode::Rd) {
                let qr = self.mode_q(od, Mode::Rd);
                avg[Mode::Rd.index()] = if qr > self.used_tol {
                    let mut total = self.class_total(&ClassId::RdQuit { od }, times);
                    if let Some(g) = self.pool.group_for(od) {
                        for &sid in &g.sequence_ids {
                            total += totals[sid].0;
                        }
                    }
                    total / qr
                } else {
                    let mut best = best_da[&od].1;
                    if let Some(g) = self.pool.group_for(od) {
                        for &sid in &g.sequence_ids {
                            best = best.min(entries[sid].driver_entry);
                        }
                    }
                    best
                } + self.cm.mode(Mode::Rd).fixed;
            }
            if dem.allows(Mode::Rp) {
                let qr = self.mode_q(od, Mode::Rp);
                avg[Mode::Rp.index()] = if qr > self.used_tol {
                    let mut total = self.class_total(&ClassId::RpQuit { od }, times);
                    for seq in &self.pool.sequences {
                        for (si, slot) in seq.slots.iter().enumerate() {
                            if slot.od == od {
                                total += totals[seq.id].1[si];
                            }
                        }
                    }
                    total / qr
                } else {
                    let mut best = best_pt[&od].1;
                    for seq in &self.pool.sequences {
                        for (si, slot) in seq.slots.iter().enumerate() {
                            if slot.od == od {
                                best = best.min(entries[seq.id].slot_entry[si]);
                            }
                        }
                    }
                    best
                } + self.cm.mode(Mode::Rp).fixed;
            }
            out.insert(od, avg);
        }
        out
    }

    /// Exact matching program on the current averaged demand.
    fn platform_quota(&self, entries: &[SeqEntry]) -> Result<Vec<f64>, OracleError> {
        let n = self.pool.sequences.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let c: Vec<f64> = self.pool.sequences.iter().map(|s| s.saving).collect();
        let mut rows = Vec::new();
        for (od, ids) in &self.rows.driver_rows {
            let mut a = vec![0.0; n];
            for &i in ids {
                a[i] = 1.0;
            }
            rows.push((a, self.mode_q(*od, Mode::Rd)));
        }
        for (od, ents) in &self.rows.passenger_rows {
            let mut a = vec![0.0; n];
            for &(i, s) in ents {
                a[i] = s;
            }
            rows.push((a, self.mode_q(*od, Mode::Rp)));
        }
        let tie: Vec<f64> = entries.iter().map(|e| e.tie_cost).collect();
        Ok(lp::solve_packing_lp(&c, &rows, Some(&tie))?.z)
    }

    /// Greedy individually-rational bundle fill under quota and modal
    /// targets. Returns per-sequence fills and leftover quit demand.
    #[allow(clippy::type_complexity)]
    fn fill(
        &self,
        entries: &[SeqEntry],
        z: &[f64],
        q_target: &BTreeMap<(OdPair, Mode), f64>,
        best_da: &BestMap,
        best_pt: &BestMap,
    ) -> (Vec<f64>, BTreeMap<OdPair, f64>, BTreeMap<OdPair, f64>) {
        let mut rem_d: BTreeMap<OdPair, f64> = BTreeMap::new();
        let mut rem_p: BTreeMap<OdPair, f64> = BTreeMap::new();
        for dem in self.demands {
            if dem.allows(Mode::Rd) {
                rem_d.insert(dem.od, q_target.get(&(dem.od, Mode::Rd)).copied().unwrap_or(0.0));
            }
            if dem.allows(Mode::Rp) {
                rem_p.insert(dem.od, q_target.get(&(dem.od, Mode::Rp)).copied().unwrap_or(0.0));
            }
        }

        let mut f_target = vec![0.0; self.pool.sequences.len()];
        let mut order: Vec<(f64, usize)> = Vec::new();
        for seq in &self.pool.sequences {
            let dgain = best_da[&seq.driver_od].1 - entries[seq.id].driver_entry;
            let mut total = dgain;
            let mut rational = dgain >= -IR_EPS;
            for (si, slot) in seq.slots.iter().enumerate() {
                let pgain = best_pt[&slot.od].1 - entries[seq.id].slot_entry[si];
                rational &= pgain >= -IR_EPS;
                total += pgain;
            }
            if rational {
                order.push((total, seq.id));
            }
        }
        order.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));

        for (_, id) in order {
            let seq = &self.pool.sequences[id];
            let mut cap = z[id].min(rem_d.get(&seq.driver_od).copied().unwrap_or(0.0));
            let mut seats: BTreeMap<OdPair, f64> = BTreeMap::new();
            for slot in &seq.slots {
                *seats.entry(slot.od).or_insert(0.0) += 1.0;
            }
            for (od, s) in &seats {
                cap = cap.min(rem_p.get(od).copied().unwrap_or(0.0) / s);
            }
            let cap = cap.max(0.0);
            if cap > 0.0 {
                f_target[id] = cap;
                *rem_d.get_mut(&seq.driver_od).unwrap() -= cap;
                for (od, s) in &seats {
                    *rem_p.get_mut(od).unwrap() -= s * cap;
                }
            }
        }
        for v in rem_d.values_mut().chain(rem_p.values_mut()) {
            *v = v.max(0.0);
        }
        (f_target, rem_d, rem_p)
    }

    fn step(&mut self, k: usize) -> Result<(), OracleError> {
        let x = self.vehicle_link_flows();
        let times = link_times(self.net, &x);
        let (best_da, best_pt) = self.best_maps(&times);
        let entries = self.entries(&times, &best_da, &best_pt);
        let avgs = self.mode_averages(&times, &entries, &best_da, &best_pt);

        let mut q_target: BTreeMap<(OdPair, Mode), f64> =
            self.q.keys().map(|key| (*key, 0.0)).collect();
        for dem in self.demands {
            let a = &avgs[&dem.od];
            let mut pick = None;
            let mut best = f64::INFINITY;
            for m in Mode::ALL {
                if dem.allows(m) && a[m.index()] < best {
                    best = a[m.index()];
                    pick = Some(m);
                }
            }
            let m = pick.expect("demand has an available mode");
            *q_target.get_mut(&(dem.od, m)).unwrap() = dem.total;
        }

        let z = self.platform_quota(&entries)?;
        let (f_target, rd_quit, rp_quit) =
            self.fill(&entries, &z, &q_target, &best_da, &best_pt);

        // Route target of every class before any mutation, as (demand, best
        // path index) aligned with the class list.
        let mut targets: Vec<(f64, usize)> = Vec::with_capacity(self.classes.len());
        for cls in &self.classes {
            let t = match &cls.id {
                ClassId::DaSolo { od } => (
                    q_target.get(&(*od, Mode::Da)).copied().unwrap_or(0.0),
                    best_da[od].0,
                ),
                ClassId::PtSolo { od } => (
                    q_target.get(&(*od, Mode::Pt)).copied().unwrap_or(0.0),
                    best_pt[od].0,
                ),
                ClassId::RdQuit { od } => {
                    (rd_quit.get(od).copied().unwrap_or(0.0), best_da[od].0)
                }
                ClassId::RpQuit { od } => {
                    (rp_quit.get(od).copied().unwrap_or(0.0), best_pt[od].0)
                }
                ClassId::RdLevel { seq, level } => (
                    f_target[*seq],
                    entries[*seq].level_path[*level - 1].expect("non-empty level"),
                ),
                ClassId::RpSpan { .. } => unreachable!("span classes are derived, never stored"),
            };
            targets.push(t);
        }

        let w = 1.0 / k as f64;
        for (key, val) in self.q.iter_mut() {
            let t = q_target[key];
            *val += w * (t - *val);
        }
        for (fi, &t) in self.f.iter_mut().zip(&f_target) {
            *fi += w * (t - *fi);
        }
        self.z = z;
        for (cls, (d, bi)) in self.classes.iter_mut().zip(targets) {
            for x in cls.flows.iter_mut() {
                *x *= 1.0 - w;
            }
            cls.flows[bi] += w * d;
        }
        Ok(())
    }

    /// Snapshot of the averaged state as a checkable solution. The quota is
    /// re-solved on the exported demand so it is feasible and optimal for it
    /// exactly; lagging sequence flow above it is cut back to the quit
    /// classes.
    fn export(&self) -> Result<Solution, OracleError> {
        let x = self.vehicle_link_flows();
        let times = link_times(self.net, &x);
        let (best_da, best_pt) = self.best_maps(&times);
        let entries = self.entries(&times, &best_da, &best_pt);
        let z = self.platform_quota(&entries)?;

        let mut f = self.f.clone();
        let mut flows: Vec<Vec<f64>> = self.classes.iter().map(|c| c.flows.clone()).collect();
        for seq in &self.pool.sequences {
            let i = seq.id;
            if f[i] <= z[i] {
                continue;
            }
            let cut = f[i] - z[i];
            let scale = z[i] / f[i];
            let st = &self.sts[i];
            for l in 1..=st.level_count() {
                if let Some(pos) = self.class_pos(&ClassId::RdLevel { seq: i, level: l }) {
                    for x in flows[pos].iter_mut() {
                        *x *= scale;
                    }
                }
            }
            self.route_cut(
                &mut flows,
                &ClassId::RdQuit { od: seq.driver_od },
                best_da[&seq.driver_od].0,
                cut,
            )?;
            for slot in &seq.slots {
                self.route_cut(
                    &mut flows,
                    &ClassId::RpQuit { od: slot.od },
                    best_pt[&slot.od].0,
                    cut,
                )?;
            }
            f[i] = z[i];
        }

        let mut class_flows = BTreeMap::new();
        for (cls, fl) in self.classes.iter().zip(&flows) {
            let mut map: BTreeMap<LinkId, f64> = BTreeMap::new();
            let ps = &self.paths[&cls.od];
            for (pi, &x) in fl.iter().enumerate() {
                if x > 0.0 {
                    for &lid in &ps[pi] {
                        *map.entry(lid).or_insert(0.0) += x;
                    }
                }
            }
            class_flows.insert(cls.id.clone(), map);
        }

        Ok(Solution {
            mode_demand: self.q.clone(),
            quota: z,
            seq_flow: f,
            class_flows,
        })
    }

    fn route_cut(
        &self,
        flows: &mut [Vec<f64>],
        quit: &ClassId,
        best_path: usize,
        cut: f64,
    ) -> Result<(), OracleError> {
        match self.class_pos(quit) {
            Some(pos) => {
                flows[pos][best_path] += cut;
                Ok(())
            }
            // A sequence only carries flow when its members have demand, so
            // the quit class exists whenever there is something to cut.
            None if cut <= 1e-9 * self.q_total => Ok(()),
            None => Err(OracleError::DomainExceeded(format!(
                "no quit class for {quit} to receive {cut} cut flow"
            ))),
        }
    }
}

fn drives(layer: CostLayer) -> bool {
    matches!(
        layer,
        CostLayer::Da | CostLayer::RdEmpty | CostLayer::RdWith { .. }
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matchgen::{generate, GenConfig};
    use crate::netio::{Link, ModeCostParams, Network, NodeId};

    /// Two-route network with one driver OD and one passenger OD sharing the
    /// corridor; small enough to reason about by hand.
    fn toy() -> (Network, CostModel) {
        let mk = |from: u32, to: u32, cap: f64, fft: f64| Link {
            from: NodeId(from),
            to: NodeId(to),
            capacity: cap,
            length: fft,
            fft,
            b: 0.15,
            power: 4.0,
            speed: 0.0,
            toll: 0.0,
            link_type: 1,
        };
        let net = Network::new(
            4,
            1,
            4,
            vec![
                mk(1, 2, 400.0, 10.0),
                mk(2, 3, 400.0, 10.0),
                mk(1, 3, 300.0, 22.0),
                mk(3, 4, 400.0, 10.0),
            ],
        )
        .unwrap();
        let base = ModeCostParams {
            alpha: 1.0,
            beta: 1.0,
            tau_t: 0.0,
            tau_d: 0.0,
            nu_t: 0.0,
            nu_d: 0.0,
            fixed: 0.0,
        };
        let cm = CostModel {
            params: [
                base,
                // Driver: compensated 0.6 per shared distance unit.
                ModeCostParams {
                    nu_d: 0.6,
                    ..base
                },
                // Passenger: pays 0.3 plus 0.1 inconvenience per distance.
                ModeCostParams {
                    alpha: 0.8,
                    beta: 0.0,
                    tau_d: 0.1,
                    nu_d: 0.3,
                    ..base
                },
                // Transit: slower door to door, shares the roadway times.
                ModeCostParams {
                    alpha: 1.4,
                    beta: 0.0,
                    ..base
                },
            ],
            pt_congested_time: true,
        };
        cm.validate().unwrap();
        (net, cm)
    }

    #[test]
    fn refuses_oversized_pools() {
        let (net, cm) = toy();
        let pool = MatchingPool::default();
        let demands = vec![OdDemand::all_modes(OdPair::new(1, 4), 10.0)];
        let opts = MsaOptions {
            max_iterations: 10,
            check_every: 10,
            ..MsaOptions::default()
        };
        // Sequence cap is enforced before any work happens.
        let mut big = pool.clone();
        for _ in 0..4 {
            big.sequences.push(crate::matchgen::MatchingSequence {
                id: big.sequences.len(),
                driver_od: OdPair::new(1, 4),
                tasks: vec![],
                slots: vec![],
                occupancy: vec![],
                saving: 0.0,
                chain_length: 0.0,
                solo_length: 0.0,
            });
        }
        let err = brute_force_equilibrium(&net, &cm, &big, &demands, &opts).unwrap_err();
        assert!(matches!(err, OracleError::DomainExceeded(_)));
    }

    #[test]
    fn equilibrates_solo_route_choice() {
        // Single OD, drive-alone only: the reference must reproduce the
        // two-route congestion equilibrium, which has equal route costs.
        let (net, cm) = toy();
        let pool = MatchingPool::default();
        let demands = vec![OdDemand {
            od: OdPair::new(1, 3),
            total: 600.0,
            available: [true, false, false, false],
        }];
        let opts = MsaOptions {
            max_iterations: 4_000,
            check_every: 500,
            ..MsaOptions::default()
        };
        let out = brute_force_equilibrium(&net, &cm, &pool, &demands, &opts).unwrap();
        assert!(
            out.report.passes(tolerances::RESIDUAL_TOL),
            "residuals:\n{}",
            out.report.summary()
        );
        // Both routes must end up used with nearly equal generalized costs
        // (time plus distance; the longer route trades length for speed).
        let x = out.solution.vehicle_flows(net.links.len());
        assert!(x[0] > 100.0 && x[2] > 100.0, "both routes carry flow: {x:?}");
        let t = link_times(&net, &x);
        let upper = (t[0] + 10.0) + (t[1] + 10.0);
        let lower = t[2] + 22.0;
        assert!(
            (upper - lower).abs() < 0.5,
            "route costs should equalize: {upper} vs {lower}"
        );
    }

    #[test]
    fn matches_and_serves_when_sharing_pays() {
        // Driver 1->4 can carry passenger 2->3 with a tiny detour (its route
        // already passes through 2 and 3). Sharing must happen and all
        // residual families must clear.
        let (net, cm) = toy();
        let cfg = GenConfig {
            max_passengers: 1,
            detour_factor: 1.5,
            ..GenConfig::default()
        };
        let pool = generate(&net, &[OdPair::new(1, 4)], &[OdPair::new(2, 3)], &cfg).unwrap();
        assert_eq!(pool.sequences.len(), 1, "one pickup-dropoff chain expected");
        let demands = vec![
            OdDemand {
                od: OdPair::new(1, 4),
                total: 300.0,
                available: [true, true, false, false],
            },
            OdDemand {
                od: OdPair::new(2, 3),
                total: 200.0,
                available: [false, false, true, true],
            },
        ];
        let out = brute_force_equilibrium(&net, &cm, &pool, &demands, &MsaOptions::default())
            .unwrap();
        assert!(
            out.report.passes(tolerances::RESIDUAL_TOL),
            "residuals:\n{}",
            out.report.summary()
        );
        assert!(
            out.solution.seq_flow[0] > 100.0,
            "sharing should be widely used, got {}",
            out.solution.seq_flow[0]
        );
    }
}
