//! Matching sequence generation.
//!
//! A matching sequence is an ordered task chain for one driver: depart, visit
//! pickups and dropoffs of a passenger group, arrive. Generation enumerates
//! passenger groups per driver OD incrementally (a group of size k is only
//! considered if every size k-1 subgroup produced at least one feasible
//! sequence) and, per group, every precedence-respecting interleaving that
//! stays within vehicle capacity and the driver detour bound.
//!
//! Passengers with identical ODs are interchangeable: interleavings that
//! differ only by relabeling them are generated once, with pickups and
//! dropoffs matched first-in-first-out.
//!
//! Distances are free-flow shortest path lengths; they fix the saving of each
//! sequence once at generation time and never change during assignment.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;

use log::{debug, info};
use thiserror::Error;

use crate::netio::{Network, NodeId};

#[derive(Debug, Error)]
pub enum MatchgenError {
    #[error("sequence pool exceeded limit of {limit} (driver ODs processed: {processed})")]
    PoolOverflow { limit: usize, processed: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OdPair {
    pub o: NodeId,
    pub d: NodeId,
}

impl OdPair {
    pub fn new(o: u32, d: u32) -> Self {
        OdPair {
            o: NodeId(o),
            d: NodeId(d),
        }
    }
}

impl fmt::Display for OdPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.o, self.d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    DriverDepart,
    /// Pickup of slot `usize`.
    Pickup(usize),
    /// Dropoff of slot `usize`.
    Dropoff(usize),
    DriverArrive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Task {
    pub kind: TaskKind,
    pub node: NodeId,
}

/// One passenger seat in a sequence. The passenger is aboard for levels
/// `board_level ..= alight_level` (levels are 1-based; level `l` runs from
/// task `l-1` to task `l`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub od: OdPair,
    pub board_level: usize,
    pub alight_level: usize,
}

#[derive(Debug, Clone)]
pub struct MatchingSequence {
    pub id: usize,
    pub driver_od: OdPair,
    pub tasks: Vec<Task>,
    pub slots: Vec<Slot>,
    /// Onboard passenger count per level, `occupancy[l-1]` for level `l`.
    pub occupancy: Vec<u8>,
    /// Distance saving versus everyone driving alone (the platform's payoff
    /// coefficient for this sequence).
    pub saving: f64,
    /// Chained free-flow distance of the full task chain.
    pub chain_length: f64,
    /// Driver's solo free-flow distance, kept for detour reporting.
    pub solo_length: f64,
}

impl MatchingSequence {
    pub fn levels(&self) -> usize {
        self.tasks.len() - 1
    }

    /// Origin and destination node of level `l` (1-based).
    pub fn level_od(&self, l: usize) -> (NodeId, NodeId) {
        (self.tasks[l - 1].node, self.tasks[l].node)
    }

    /// A level between coinciding task nodes carries no movement and no cost.
    pub fn is_empty_level(&self, l: usize) -> bool {
        let (o, d) = self.level_od(l);
        o == d
    }

    /// Vehicle-state marker per level: -1 while empty, 0 with passengers.
    pub fn vehicle_state(&self, l: usize) -> i8 {
        if self.occupancy[l - 1] == 0 {
            -1
        } else {
            0
        }
    }

    /// True if task `t` starts a trip of a traveler with OD `od`: the driver
    /// departing at task 0, or a pickup of a matching passenger.
    pub fn s1(&self, t: usize, od: OdPair) -> bool {
        match self.tasks[t].kind {
            TaskKind::DriverDepart => self.driver_od == od,
            TaskKind::Pickup(s) => self.slots[s].od == od,
            _ => false,
        }
    }

    /// True if task `t` ends a trip of a traveler with OD `od`.
    pub fn s_minus1(&self, t: usize, od: OdPair) -> bool {
        match self.tasks[t].kind {
            TaskKind::DriverArrive => self.driver_od == od,
            TaskKind::Dropoff(s) => self.slots[s].od == od,
            _ => false,
        }
    }

    /// Number of seats this sequence offers to passengers of `od`.
    pub fn seats_for(&self, od: OdPair) -> usize {
        self.slots.iter().filter(|s| s.od == od).count()
    }

    /// Shared portion of the chain (distance driven with at least one
    /// passenger aboard) divided by total chain distance. Purely descriptive.
    pub fn shared_fraction(&self, dist: impl Fn(NodeId, NodeId) -> f64) -> f64 {
        if self.chain_length <= 0.0 {
            return 0.0;
        }
        let mut shared = 0.0;
        for l in 1..=self.levels() {
            if self.occupancy[l - 1] > 0 {
                let (o, d) = self.level_od(l);
                shared += dist(o, d);
            }
        }
        shared / self.chain_length
    }

    /// Node chain like `1-4-7-10-13-16`.
    pub fn route_string(&self) -> String {
        let mut s = String::new();
        for (i, t) in self.tasks.iter().enumerate() {
            if i > 0 {
                s.push('-');
            }
            s.push_str(&t.node.to_string());
        }
        s
    }
}

/// All sequences sharing one driver OD compete for that OD's driver demand.
#[derive(Debug, Clone)]
pub struct DriverGroup {
    pub od: OdPair,
    pub sequence_ids: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct MatchingPool {
    pub sequences: Vec<MatchingSequence>,
    pub groups: Vec<DriverGroup>,
}

impl MatchingPool {
    pub fn group_for(&self, od: OdPair) -> Option<&DriverGroup> {
        self.groups.iter().find(|g| g.od == od)
    }

    /// Passenger ODs served by at least one sequence.
    pub fn served_passenger_ods(&self) -> BTreeSet<OdPair> {
        let mut s = BTreeSet::new();
        for seq in &self.sequences {
            for slot in &seq.slots {
                s.insert(slot.od);
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    /// Seat capacity: onboard passengers never exceed this. Zero disables
    /// ridesharing entirely.
    pub capacity: u8,
    /// Passengers served per sequence (group size). Sequential service keeps
    /// this meaningful above `capacity`.
    pub max_passengers: u8,
    /// Driver chain length bound as a multiple of the solo distance.
    /// Non-positive disables the bound.
    pub detour_factor: f64,
    /// Drop sequences whose saving is below this.
    pub min_saving: Option<f64>,
    /// Keep only the top-K single-passenger candidates per driver OD, ranked
    /// by saving. Zero keeps all.
    pub max_candidates_per_driver: usize,
    /// Hard cap on total generated sequences. Zero disables.
    pub max_sequences: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            capacity: 2,
            max_passengers: 2,
            detour_factor: 1.5,
            min_saving: None,
            max_candidates_per_driver: 0,
            max_sequences: 0,
        }
    }
}

const LEN_EPS: f64 = 1e-9;

/// Free-flow shortest distances from `source` to every node, by link length.
fn shortest_dists(net: &Network, source: NodeId) -> Vec<f64> {
    let n = net.node_count() as usize;
    let mut dist = vec![f64::INFINITY; n];
    dist[net.node_index(source)] = 0.0;
    // Heap keys are link-length sums, never NaN after network validation.
    let mut heap: BinaryHeap<(std::cmp::Reverse<OrdF64>, u32)> = BinaryHeap::new();
    heap.push((std::cmp::Reverse(OrdF64(0.0)), source.0));
    while let Some((std::cmp::Reverse(dv), v)) = heap.pop() {
        let vi = (v - 1) as usize;
        if dv.0 > dist[vi] + LEN_EPS {
            continue;
        }
        for &lid in net.outgoing(NodeId(v)) {
            let link = net.link(lid);
            let wi = net.node_index(link.to);
            let nd = dist[vi] + link.length;
            if nd + LEN_EPS < dist[wi] {
                dist[wi] = nd;
                heap.push((std::cmp::Reverse(OrdF64(nd)), link.to.0));
            }
        }
    }
    dist
}

#[derive(PartialEq, PartialOrd)]
struct OrdF64(f64);
impl Eq for OrdF64 {}
#[allow(clippy::derive_ord_xor_partial_ord)]
impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.partial_cmp(other).expect("NaN distance")
    }
}

struct DistTable {
    by_source: BTreeMap<NodeId, Vec<f64>>,
}

impl DistTable {
    fn build(net: &Network, sources: impl Iterator<Item = NodeId>) -> Self {
        let mut by_source = BTreeMap::new();
        for s in sources {
            by_source.entry(s).or_insert_with(|| shortest_dists(net, s));
        }
        DistTable { by_source }
    }

    fn get(&self, net: &Network, from: NodeId, to: NodeId) -> f64 {
        self.by_source[&from][net.node_index(to)]
    }
}

/// Generates the matching pool for the given driver and passenger ODs.
///
/// Determinism: driver ODs are processed in sorted order, candidate passenger
/// ODs in (saving desc, OD asc) order, group multisets in lexicographic order
/// and interleavings in a fixed recursion order, so ids are reproducible.
pub fn generate(
    net: &Network,
    driver_ods: &[OdPair],
    passenger_ods: &[OdPair],
    cfg: &GenConfig,
) -> Result<MatchingPool, MatchgenError> {
    let mut drivers: Vec<OdPair> = driver_ods.to_vec();
    drivers.sort();
    drivers.dedup();
    let mut passengers: Vec<OdPair> = passenger_ods.to_vec();
    passengers.sort();
    passengers.dedup();

    let sources = drivers
        .iter()
        .map(|w| w.o)
        .chain(passengers.iter().flat_map(|u| [u.o, u.d]));
    let dists = DistTable::build(net, sources);

    let mut pool = MatchingPool::default();
    for (wi, &w) in drivers.iter().enumerate() {
        let solo = dists.get(net, w.o, w.d);
        if !solo.is_finite() {
            debug!("driver OD {w} unreachable, skipped");
            continue;
        }
        let mut group_ids = Vec::new();
        let candidates = rank_candidates(net, &dists, w, solo, &passengers, cfg);
        generate_for_driver(net, &dists, w, solo, &candidates, cfg, &mut pool, &mut group_ids);
        if cfg.max_sequences > 0 && pool.sequences.len() > cfg.max_sequences {
            return Err(MatchgenError::PoolOverflow {
                limit: cfg.max_sequences,
                processed: wi + 1,
            });
        }
        if !group_ids.is_empty() {
            pool.groups.push(DriverGroup {
                od: w,
                sequence_ids: group_ids,
            });
        }
    }
    info!(
        "matching pool: {} sequences in {} driver groups",
        pool.sequences.len(),
        pool.groups.len()
    );
    Ok(pool)
}

/// Single-passenger feasibility screen and ranking. Only the detour bound
/// prunes here: a group can clear a saving floor that its singles miss (two
/// same-OD passengers pool the chain overhead), so `min_saving` must not
/// remove candidates.
fn rank_candidates(
    net: &Network,
    dists: &DistTable,
    w: OdPair,
    solo: f64,
    passengers: &[OdPair],
    cfg: &GenConfig,
) -> Vec<OdPair> {
    let mut scored: Vec<(f64, OdPair)> = Vec::new();
    for &u in passengers {
        let chain = dists.get(net, w.o, u.o) + dists.get(net, u.o, u.d) + dists.get(net, u.d, w.d);
        if !chain.is_finite() {
            continue;
        }
        if cfg.detour_factor > 0.0 && chain > cfg.detour_factor * solo + LEN_EPS {
            continue;
        }
        let saving = solo + dists.get(net, u.o, u.d) - chain;
        scored.push((saving, u));
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    if cfg.max_candidates_per_driver > 0 {
        scored.truncate(cfg.max_candidates_per_driver);
    }
    scored.into_iter().map(|(_, u)| u).collect()
}

fn generate_for_driver(
    net: &Network,
    dists: &DistTable,
    w: OdPair,
    solo: f64,
    candidates: &[OdPair],
    cfg: &GenConfig,
    pool: &mut MatchingPool,
    group_ids: &mut Vec<usize>,
) {
    // Multisets over candidate indices, grown by size. A multiset survives to
    // the next size only if it produced at least one feasible sequence.
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    for _size in 1..=cfg.max_passengers as usize {
        let mut next_frontier = Vec::new();
        for base in &frontier {
            let start = base.last().copied().unwrap_or(0);
            for ci in start..candidates.len() {
                let mut ms = base.clone();
                ms.push(ci);
                let ods: Vec<OdPair> = ms.iter().map(|&i| candidates[i]).collect();
                // Survival into larger groups depends on detour feasibility
                // alone; a saving-filtered sequence still leaves its group
                // extendable.
                let feasible = enumerate_interleavings(net, dists, w, solo, &ods, cfg, pool, group_ids);
                if feasible > 0 {
                    next_frontier.push(ms);
                }
            }
        }
        frontier = next_frontier;
        if frontier.is_empty() {
            break;
        }
    }
}

/// Enumerates feasible interleavings for one passenger multiset. Identical
/// ODs are treated as one class; the recursion tracks per-class pending
/// pickups and onboard counts, so relabelings are never produced. Returns the
/// number of detour-feasible patterns (emitted or not).
fn enumerate_interleavings(
    net: &Network,
    dists: &DistTable,
    w: OdPair,
    solo: f64,
    ods: &[OdPair],
    cfg: &GenConfig,
    pool: &mut MatchingPool,
    group_ids: &mut Vec<usize>,
) -> usize {
    // Collapse the multiset into (od, count) classes, already sorted.
    let mut classes: Vec<(OdPair, usize)> = Vec::new();
    for &od in ods {
        match classes.last_mut() {
            Some((prev, c)) if *prev == od => *c += 1,
            _ => classes.push((od, 1)),
        }
    }
    let total: usize = ods.len();
    let mut pending: Vec<usize> = classes.iter().map(|&(_, c)| c).collect();
    let mut aboard: Vec<usize> = vec![0; classes.len()];
    let mut pattern: Vec<(usize, bool)> = Vec::new(); // (class, is_pickup)

    struct Ctx<'a> {
        net: &'a Network,
        dists: &'a DistTable,
        w: OdPair,
        solo: f64,
        classes: &'a [(OdPair, usize)],
        cfg: &'a GenConfig,
        pool: &'a mut MatchingPool,
        group_ids: &'a mut Vec<usize>,
        total: usize,
        feasible: usize,
    }

    fn recurse(
        ctx: &mut Ctx,
        pending: &mut [usize],
        aboard: &mut [usize],
        pattern: &mut Vec<(usize, bool)>,
    ) {
        if pattern.len() == 2 * ctx.total {
            finish_pattern(ctx, pattern);
            return;
        }
        let occupancy: usize = aboard.iter().sum();
        for c in 0..ctx.classes.len() {
            if pending[c] > 0 && occupancy < ctx.cfg.capacity as usize {
                pending[c] -= 1;
                aboard[c] += 1;
                pattern.push((c, true));
                recurse(ctx, pending, aboard, pattern);
                pattern.pop();
                aboard[c] -= 1;
                pending[c] += 1;
            }
            if aboard[c] > 0 {
                aboard[c] -= 1;
                pattern.push((c, false));
                recurse(ctx, pending, aboard, pattern);
                pattern.pop();
                aboard[c] += 1;
            }
        }
    }

    fn finish_pattern(ctx: &mut Ctx, pattern: &[(usize, bool)]) {
        // Node chain and chained distance.
        let mut nodes = vec![ctx.w.o];
        for &(c, pickup) in pattern {
            let od = ctx.classes[c].0;
            nodes.push(if pickup { od.o } else { od.d });
        }
        nodes.push(ctx.w.d);
        let mut chain = 0.0;
        for win in nodes.windows(2) {
            chain += ctx.dists.get(ctx.net, win[0], win[1]);
        }
        if !chain.is_finite() {
            return;
        }
        if ctx.cfg.detour_factor > 0.0 && chain > ctx.cfg.detour_factor * ctx.solo + LEN_EPS {
            return;
        }
        ctx.feasible += 1;
        let pax_solo: f64 = pattern
            .iter()
            .filter(|(_, p)| *p)
            .map(|&(c, _)| {
                let od = ctx.classes[c].0;
                ctx.dists.get(ctx.net, od.o, od.d)
            })
            .sum();
        let saving = ctx.solo + pax_solo - chain;
        if let Some(min) = ctx.cfg.min_saving {
            if saving < min - LEN_EPS {
                return;
            }
        }

        // Slots in pickup order; dropoffs matched FIFO within each class.
        let mut slots: Vec<Slot> = Vec::new();
        let mut open: Vec<Vec<usize>> = vec![Vec::new(); ctx.classes.len()];
        let mut tasks = vec![Task {
            kind: TaskKind::DriverDepart,
            node: ctx.w.o,
        }];
        for (ti, &(c, pickup)) in pattern.iter().enumerate() {
            let t = ti + 1;
            let od = ctx.classes[c].0;
            if pickup {
                let s = slots.len();
                slots.push(Slot {
                    od,
                    board_level: t + 1,
                    alight_level: 0, // patched at dropoff
                });
                open[c].push(s);
                tasks.push(Task {
                    kind: TaskKind::Pickup(s),
                    node: od.o,
                });
            } else {
                let s = open[c].remove(0);
                slots[s].alight_level = t;
                tasks.push(Task {
                    kind: TaskKind::Dropoff(s),
                    node: od.d,
                });
            }
        }
        tasks.push(Task {
            kind: TaskKind::DriverArrive,
            node: ctx.w.d,
        });

        let levels = tasks.len() - 1;
        let mut occupancy = vec![0u8; levels];
        for slot in &slots {
            debug_assert!(slot.board_level <= slot.alight_level, "pickup after dropoff");
            for l in slot.board_level..=slot.alight_level {
                occupancy[l - 1] += 1;
            }
        }
        debug_assert!(
            occupancy.iter().all(|&o| o <= ctx.cfg.capacity),
            "capacity exceeded in accepted pattern"
        );

        let id = ctx.pool.sequences.len();
        ctx.pool.sequences.push(MatchingSequence {
            id,
            driver_od: ctx.w,
            tasks,
            slots,
            occupancy,
            saving,
            chain_length: chain,
            solo_length: ctx.solo,
        });
        ctx.group_ids.push(id);
    }

    let mut ctx = Ctx {
        net,
        dists,
        w,
        solo,
        classes: &classes,
        cfg,
        pool,
        group_ids,
        total,
        feasible: 0,
    };
    recurse(&mut ctx, &mut pending, &mut aboard, &mut pattern);
    ctx.feasible
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netio::{Link, Network};

    /// Straight line 1 - 2 - 3 - 4 with unit lengths, both directions.
    fn line_net() -> Network {
        let mut links = Vec::new();
        for (u, v) in [(1, 2), (2, 3), (3, 4)] {
            for (a, b) in [(u, v), (v, u)] {
                links.push(Link {
                    from: NodeId(a),
                    to: NodeId(b),
                    capacity: 1000.0,
                    length: 1.0,
                    fft: 1.0,
                    b: 0.15,
                    power: 4.0,
                    speed: 0.0,
                    toll: 0.0,
                    link_type: 1,
                });
            }
        }
        Network::new(4, 1, 4, links).unwrap()
    }

    #[test]
    fn single_passenger_on_the_way() {
        let net = line_net();
        let cfg = GenConfig::default();
        // One OD class still admits the size-2 same-OD group (demand is
        // continuous, so two travelers of that OD can share): the single and
        // the both-aboard double survive the 1.5 detour bound, the
        // sequential double (chain 5 vs solo 3) does not.
        let pool = generate(&net, &[OdPair::new(1, 4)], &[OdPair::new(2, 3)], &cfg).unwrap();
        assert_eq!(pool.sequences.len(), 2);
        let s = pool
            .sequences
            .iter()
            .find(|s| s.slots.len() == 1)
            .expect("single-passenger sequence");
        // Chain 1-2-3-4 has zero detour; saving equals the passenger's solo.
        assert_eq!(s.chain_length, 3.0);
        assert_eq!(s.saving, 1.0);
        assert_eq!(s.occupancy, vec![0, 1, 0]);
        assert_eq!(s.slots[0].board_level, 2);
        assert_eq!(s.slots[0].alight_level, 2);
        assert_eq!(s.route_string(), "1-2-3-4");
        assert_eq!(s.vehicle_state(1), -1);
        assert_eq!(s.vehicle_state(2), 0);
        let d = pool
            .sequences
            .iter()
            .find(|s| s.slots.len() == 2)
            .expect("double-passenger sequence");
        assert_eq!(d.route_string(), "1-2-2-3-3-4");
        assert_eq!(d.occupancy, vec![0, 1, 2, 1, 0]);
        assert_eq!(d.saving, 2.0);
    }

    #[test]
    fn detour_one_rejects_any_detour() {
        let net = line_net();
        let cfg = GenConfig {
            detour_factor: 1.0,
            ..GenConfig::default()
        };
        // Passenger going the wrong way forces a detour.
        let pool = generate(&net, &[OdPair::new(1, 3)], &[OdPair::new(3, 2)], &cfg).unwrap();
        assert!(pool.sequences.is_empty());
        // Perfectly aligned passengers still fit: the single and the
        // both-aboard double ride the driver's own route.
        let pool = generate(&net, &[OdPair::new(1, 3)], &[OdPair::new(1, 3)], &cfg).unwrap();
        assert_eq!(pool.sequences.len(), 2);
        let s = pool
            .sequences
            .iter()
            .find(|s| s.slots.len() == 1)
            .expect("single-passenger sequence");
        assert!(s.is_empty_level(1));
    }

    #[test]
    fn same_od_pair_deduplicates_relabelings() {
        let net = line_net();
        let cfg = GenConfig {
            detour_factor: 0.0,
            ..GenConfig::default()
        };
        let u = OdPair::new(2, 3);
        let pool = generate(&net, &[OdPair::new(1, 4)], &[u, u], &cfg).unwrap();
        // Groups {u} and {u,u}; the pair admits both-aboard and one-after-
        // the-other patterns, each exactly once.
        let pair_seqs: Vec<_> = pool.sequences.iter().filter(|s| s.slots.len() == 2).collect();
        assert_eq!(pair_seqs.len(), 2);
        let chains: BTreeSet<String> = pair_seqs.iter().map(|s| s.route_string()).collect();
        assert!(chains.contains("1-2-2-3-3-4"));
        assert!(chains.contains("1-2-3-2-3-4"));
    }

    #[test]
    fn capacity_one_forbids_overlap() {
        let net = line_net();
        let cfg = GenConfig {
            capacity: 1,
            detour_factor: 0.0,
            ..GenConfig::default()
        };
        let u = OdPair::new(2, 3);
        let pool = generate(&net, &[OdPair::new(1, 4)], &[u, u], &cfg).unwrap();
        for s in &pool.sequences {
            assert!(s.occupancy.iter().all(|&o| o <= 1), "{:?}", s.occupancy);
        }
        // Sequential service of both passengers requires revisiting 2; the
        // both-aboard pattern is gone with a single seat.
        let chains: Vec<String> = pool.sequences.iter().map(|s| s.route_string()).collect();
        assert!(chains.contains(&"1-2-3-2-3-4".to_string()), "{chains:?}");
        assert!(!chains.contains(&"1-2-2-3-3-4".to_string()), "{chains:?}");
        assert_eq!(pool.sequences.len(), 2, "{chains:?}");
    }

    #[test]
    fn pickup_always_precedes_dropoff() {
        let net = line_net();
        let cfg = GenConfig {
            detour_factor: 0.0,
            ..GenConfig::default()
        };
        let pool = generate(
            &net,
            &[OdPair::new(1, 4)],
            &[OdPair::new(2, 3), OdPair::new(3, 2)],
            &cfg,
        )
        .unwrap();
        assert!(!pool.sequences.is_empty());
        for s in &pool.sequences {
            for slot in &s.slots {
                assert!(slot.board_level <= slot.alight_level);
            }
            // Tasks alternate consistently: every slot appears exactly twice.
            let mut seen = vec![0; s.slots.len()];
            for t in &s.tasks {
                match t.kind {
                    TaskKind::Pickup(i) | TaskKind::Dropoff(i) => seen[i] += 1,
                    _ => {}
                }
            }
            assert!(seen.iter().all(|&c| c == 2));
        }
    }

    #[test]
    fn min_saving_filters() {
        let net = line_net();
        let cfg = GenConfig {
            detour_factor: 0.0,
            min_saving: Some(0.5),
            ..GenConfig::default()
        };
        // Backward passenger has negative saving, filtered out.
        let pool = generate(&net, &[OdPair::new(1, 3)], &[OdPair::new(3, 2)], &cfg).unwrap();
        assert!(pool.sequences.is_empty());
    }

    #[test]
    fn pool_overflow_reports() {
        let net = line_net();
        let cfg = GenConfig {
            detour_factor: 0.0,
            max_sequences: 1,
            ..GenConfig::default()
        };
        let err = generate(
            &net,
            &[OdPair::new(1, 4)],
            &[OdPair::new(2, 3), OdPair::new(3, 2)],
            &cfg,
        )
        .unwrap_err();
        assert!(matches!(err, MatchgenError::PoolOverflow { .. }));
    }

    #[test]
    fn groups_collect_driver_sequences() {
        let net = line_net();
        let cfg = GenConfig::default();
        let pool = generate(
            &net,
            &[OdPair::new(1, 4), OdPair::new(1, 3)],
            &[OdPair::new(2, 3)],
            &cfg,
        )
        .unwrap();
        assert_eq!(pool.groups.len(), 2);
        for g in &pool.groups {
            for &sid in &g.sequence_ids {
                assert_eq!(pool.sequences[sid].driver_od, g.od);
            }
        }
        // Deterministic ordering: groups sorted by driver OD.
        assert!(pool.groups[0].od < pool.groups[1].od);
    }

    #[test]
    fn corridor_pool_regression() {
        let net = crate::fixtures::grid_network();
        let pool = generate(
            &net,
            &crate::fixtures::grid_driver_ods(),
            &crate::fixtures::grid_passenger_ods(),
            &crate::fixtures::grid_match_config(),
        )
        .unwrap();
        assert_eq!(pool.sequences.len(), 12);

        let nested = pool
            .sequences
            .iter()
            .find(|s| s.route_string() == "1-4-7-10-13-16")
            .expect("nested chain present");
        assert!((nested.saving - 40.0).abs() < 1e-9);
        assert_eq!(nested.occupancy, vec![0, 1, 2, 1, 0]);
        assert!((nested.chain_length - 50.0).abs() < 1e-9);
        assert!((nested.solo_length - 50.0).abs() < 1e-9);
        assert_eq!(nested.seats_for(OdPair::new(4, 10)), 1);
        assert_eq!(nested.seats_for(OdPair::new(7, 13)), 1);
        // Empty at the spans before first pickup and after last dropoff.
        assert_eq!(nested.vehicle_state(1), -1);
        assert_eq!(nested.vehicle_state(3), 0);
        assert_eq!(nested.vehicle_state(5), -1);

        let mut savings: Vec<f64> = pool.sequences.iter().map(|s| s.saving).collect();
        savings.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expected = [
            -20.0, 0.0, 0.0, 0.0, 20.0, 20.0, 20.0, 20.0, 20.0, 40.0, 40.0, 40.0,
        ];
        for (got, want) in savings.iter().zip(expected.iter()) {
            assert!((got - want).abs() < 1e-9, "savings {savings:?}");
        }
    }
}
