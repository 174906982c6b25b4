//! Independent matching-sequence enumeration by permutation filtering.
//!
//! Used to cross-check the generator: build every permutation of pickup and
//! dropoff tasks, filter by precedence, capacity and the detour bound, and
//! canonicalize away relabelings of identical passenger ODs. Distances come
//! from a Floyd-Warshall pass, not the generator's one-to-all searches.

use std::collections::BTreeSet;

use crate::matchgen::{MatchingPool, OdPair, TaskKind};
use crate::netio::Network;

/// Order-insensitive fingerprint of one sequence: driver OD plus the task
/// chain as (node, is_pickup, passenger OD) triples.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CanonicalSeq {
    pub driver: (u32, u32),
    pub chain: Vec<(u32, bool, (u32, u32))>,
}

pub fn all_pairs_distances(net: &Network) -> Vec<Vec<f64>> {
    let n = net.node_count() as usize;
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for i in 0..n {
        d[i][i] = 0.0;
    }
    for l in &net.links {
        let (i, j) = (net.node_index(l.from), net.node_index(l.to));
        if l.length < d[i][j] {
            d[i][j] = l.length;
        }
    }
    for k in 0..n {
        for i in 0..n {
            if d[i][k].is_infinite() {
                continue;
            }
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    d
}

/// Enumerates the full feasible pool for the given ODs. `capacity` bounds
/// onboard passengers, `max_passengers` bounds the group size.
/// `detour_factor <= 0` disables the detour bound, mirroring the generator's
/// convention.
pub fn enumerate_pool(
    net: &Network,
    driver_ods: &[OdPair],
    passenger_ods: &[OdPair],
    capacity: usize,
    max_passengers: usize,
    detour_factor: f64,
    min_saving: Option<f64>,
) -> BTreeSet<CanonicalSeq> {
    let dist = all_pairs_distances(net);
    let d = |a: crate::netio::NodeId, b: crate::netio::NodeId| {
        dist[net.node_index(a)][net.node_index(b)]
    };

    let mut out = BTreeSet::new();
    let mut passengers: Vec<OdPair> = passenger_ods.to_vec();
    passengers.sort();
    passengers.dedup();

    for &w in driver_ods {
        let solo = d(w.o, w.d);
        if !solo.is_finite() {
            continue;
        }
        let mut multisets: Vec<Vec<OdPair>> = Vec::new();
        let mut cur = Vec::new();
        grow_multisets(&passengers, &mut cur, 0, max_passengers, &mut multisets);
        for ms in &multisets {
            permute_tasks(ms, capacity, &mut |order| {
                // order holds (passenger index, is_pickup) pairs.
                let mut nodes = vec![w.o];
                let mut chain = Vec::new();
                for &(pi, pickup) in order {
                    let od = ms[pi];
                    let node = if pickup { od.o } else { od.d };
                    nodes.push(node);
                    chain.push((node.0, pickup, (od.o.0, od.d.0)));
                }
                nodes.push(w.d);
                let mut len = 0.0;
                for win in nodes.windows(2) {
                    len += d(win[0], win[1]);
                }
                if !len.is_finite() {
                    return;
                }
                if detour_factor > 0.0 && len > detour_factor * solo + 1e-9 {
                    return;
                }
                let pax: f64 = ms.iter().map(|u| d(u.o, u.d)).sum();
                let saving = solo + pax - len;
                if let Some(min) = min_saving {
                    if saving < min - 1e-9 {
                        return;
                    }
                }
                out.insert(CanonicalSeq {
                    driver: (w.o.0, w.d.0),
                    chain,
                });
            });
        }
    }
    out
}

/// Non-decreasing index multisets of size 1..=left, each exactly once.
fn grow_multisets(
    passengers: &[OdPair],
    cur: &mut Vec<OdPair>,
    from: usize,
    left: usize,
    out: &mut Vec<Vec<OdPair>>,
) {
    if left == 0 {
        return;
    }
    for i in from..passengers.len() {
        cur.push(passengers[i]);
        out.push(cur.clone());
        grow_multisets(passengers, cur, i, left - 1, out);
        cur.pop();
    }
}

/// Visits every precedence- and capacity-valid task order of the multiset.
/// Relabelings of equal ODs are visited too; the canonical set deduplicates.
fn permute_tasks(ms: &[OdPair], cap: usize, visit: &mut impl FnMut(&[(usize, bool)])) {
    let n = ms.len();
    let mut picked = vec![false; n];
    let mut dropped = vec![false; n];
    let mut order: Vec<(usize, bool)> = Vec::with_capacity(2 * n);

    fn rec(
        n: usize,
        cap: usize,
        picked: &mut [bool],
        dropped: &mut [bool],
        order: &mut Vec<(usize, bool)>,
        visit: &mut impl FnMut(&[(usize, bool)]),
    ) {
        if order.len() == 2 * n {
            visit(order);
            return;
        }
        let aboard = picked.iter().zip(dropped.iter()).filter(|(p, d)| **p && !**d).count();
        for i in 0..n {
            if !picked[i] && aboard < cap {
                picked[i] = true;
                order.push((i, true));
                rec(n, cap, picked, dropped, order, visit);
                order.pop();
                picked[i] = false;
            } else if picked[i] && !dropped[i] {
                dropped[i] = true;
                order.push((i, false));
                rec(n, cap, picked, dropped, order, visit);
                order.pop();
                dropped[i] = false;
            }
        }
    }
    rec(n, cap, &mut picked, &mut dropped, &mut order, visit);
}

/// Canonical view of a generated pool for exact comparison.
pub fn canonicalize_pool(pool: &MatchingPool) -> BTreeSet<CanonicalSeq> {
    let mut out = BTreeSet::new();
    for seq in &pool.sequences {
        let mut chain = Vec::new();
        for t in &seq.tasks[1..seq.tasks.len() - 1] {
            match t.kind {
                TaskKind::Pickup(s) => {
                    let od = seq.slots[s].od;
                    chain.push((t.node.0, true, (od.o.0, od.d.0)));
                }
                TaskKind::Dropoff(s) => {
                    let od = seq.slots[s].od;
                    chain.push((t.node.0, false, (od.o.0, od.d.0)));
                }
                _ => unreachable!("interior task must be pickup or dropoff"),
            }
        }
        out.insert(CanonicalSeq {
            driver: (seq.driver_od.o.0, seq.driver_od.d.0),
            chain,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matchgen::{generate, GenConfig};
    use crate::netio::{Link, Network, NodeId};

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
    fn floyd_matches_line_distances() {
        let net = line_net();
        let d = all_pairs_distances(&net);
        assert_eq!(d[0][3], 3.0);
        assert_eq!(d[3][0], 3.0);
        assert_eq!(d[1][1], 0.0);
    }

    #[test]
    fn enumerator_agrees_with_generator_on_line() {
        let net = line_net();
        let drivers = [OdPair::new(1, 4)];
        let pax = [OdPair::new(2, 3), OdPair::new(3, 2)];
        for cap in [1usize, 2] {
            for group in [1usize, 2] {
                for detour in [0.0, 1.5] {
                    let gen = generate(
                        &net,
                        &drivers,
                        &pax,
                        &GenConfig {
                            capacity: cap as u8,
                            max_passengers: group as u8,
                            detour_factor: detour,
                            ..GenConfig::default()
                        },
                    )
                    .unwrap();
                    let a = canonicalize_pool(&gen);
                    let b = enumerate_pool(&net, &drivers, &pax, cap, group, detour, None);
                    assert_eq!(a, b, "cap {cap} group {group} detour {detour}");
                }
            }
        }
    }

    fn chain_saving(net: &Network, dist: &[Vec<f64>], seq: &CanonicalSeq) -> f64 {
        let idx = |n: u32| net.node_index(NodeId(n));
        let mut nodes = vec![seq.driver.0];
        let mut pax = 0.0;
        for &(node, pickup, od) in &seq.chain {
            nodes.push(node);
            if pickup {
                pax += dist[idx(od.0)][idx(od.1)];
            }
        }
        nodes.push(seq.driver.1);
        let mut len = 0.0;
        for w in nodes.windows(2) {
            len += dist[idx(w[0])][idx(w[1])];
        }
        dist[idx(seq.driver.0)][idx(seq.driver.1)] + pax - len
    }

    #[test]
    fn corridor_pool_is_twelve_with_known_savings() {
        let net = crate::fixtures::grid_network();
        let dist = all_pairs_distances(&net);
        let pool = enumerate_pool(
            &net,
            &crate::fixtures::grid_driver_ods(),
            &crate::fixtures::grid_passenger_ods(),
            2,
            2,
            0.0,
            None,
        );
        assert_eq!(pool.len(), 12);

        let mut savings: Vec<f64> = pool.iter().map(|s| chain_saving(&net, &dist, s)).collect();
        savings.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expected = [
            -20.0, 0.0, 0.0, 0.0, 20.0, 20.0, 20.0, 20.0, 20.0, 40.0, 40.0, 40.0,
        ];
        for (got, want) in savings.iter().zip(expected.iter()) {
            assert!((got - want).abs() < 1e-9, "savings {savings:?}");
        }

        // The chain that nests both passengers inside the corridor.
        let nested = CanonicalSeq {
            driver: (1, 16),
            chain: vec![
                (4, true, (4, 10)),
                (7, true, (7, 13)),
                (10, false, (4, 10)),
                (13, false, (7, 13)),
            ],
        };
        assert!(pool.contains(&nested));
        assert!((chain_saving(&net, &dist, &nested) - 40.0).abs() < 1e-9);
    }

    #[test]
    fn corridor_single_seat_pool_is_six() {
        let net = crate::fixtures::grid_network();
        let pool = enumerate_pool(
            &net,
            &crate::fixtures::grid_driver_ods(),
            &crate::fixtures::grid_passenger_ods(),
            1,
            2,
            0.0,
            None,
        );
        assert_eq!(pool.len(), 6);
        // One seat forbids overlap, so both passengers ride only back to back.
        for order in [[(4, 10), (7, 13)], [(7, 13), (4, 10)]] {
            let chain = order
                .iter()
                .flat_map(|od| {
                    [(od.0, true, (od.0, od.1)), (od.1, false, (od.0, od.1))]
                })
                .collect();
            assert!(pool.contains(&CanonicalSeq { driver: (1, 16), chain }));
        }
    }

    #[test]
    fn enumerator_agrees_with_generator_on_corridor() {
        let net = crate::fixtures::grid_network();
        let drivers = crate::fixtures::grid_driver_ods();
        let pax = crate::fixtures::grid_passenger_ods();
        for cap in [1usize, 2] {
            let gen = generate(
                &net,
                &drivers,
                &pax,
                &GenConfig {
                    capacity: cap as u8,
                    ..crate::fixtures::grid_match_config()
                },
            )
            .unwrap();
            let a = canonicalize_pool(&gen);
            let b = enumerate_pool(&net, &drivers, &pax, cap, 2, 0.0, None);
            assert_eq!(a, b, "cap {cap}");
            assert_eq!(a.len(), if cap == 1 { 6 } else { 12 });
        }
    }
}
