//! Flow-class structure over matching sequences.
//!
//! Assignment never stores paths. Each matching sequence is a chain of
//! levels; the destination of level `l` is the origin of level `l+1`, so
//! conservation across levels holds by construction once each level conserves
//! its own flow. A passenger aboard for levels `u..=a` contributes no separate
//! link flow: the passenger rides the driver's level flows, which is the
//! coupling constraint in representation form.
//!
//! Flow classes:
//! * one driver class per (sequence, level), priced empty or with passengers
//! * one derived passenger class per (sequence, slot), sharing level flows
//! * per-OD solo classes: drive-alone demand, transit demand, unmatched
//!   drivers driving alone and unmatched passengers riding transit

use std::fmt;

use crate::matchgen::{MatchingPool, MatchingSequence, OdPair};
use crate::netio::CostLayer;

/// One movement stage of a sequence. `empty` levels connect coinciding nodes
/// and carry no cost or link flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level {
    pub od: OdPair,
    pub layer: CostLayer,
    pub empty: bool,
}

/// Contiguous level span ridden by one passenger slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotSpan {
    pub od: OdPair,
    pub first_level: usize,
    pub last_level: usize,
}

#[derive(Debug, Clone)]
pub struct SequenceStructure {
    pub levels: Vec<Level>,
    pub spans: Vec<SlotSpan>,
}

impl SequenceStructure {
    /// Levels are 1-based to match task numbering.
    pub fn level(&self, l: usize) -> &Level {
        &self.levels[l - 1]
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }
}

/// Derives the level chain and slot spans of one sequence.
pub fn structure(seq: &MatchingSequence) -> SequenceStructure {
    let mut levels = Vec::with_capacity(seq.levels());
    for l in 1..=seq.levels() {
        let (o, d) = seq.level_od(l);
        let occ = seq.occupancy[l - 1];
        let layer = if occ == 0 {
            CostLayer::RdEmpty
        } else {
            CostLayer::RdWith { occupancy: occ }
        };
        levels.push(Level {
            od: OdPair { o, d },
            layer,
            empty: o == d,
        });
    }
    let spans = seq
        .slots
        .iter()
        .map(|s| SlotSpan {
            od: s.od,
            first_level: s.board_level,
            last_level: s.alight_level,
        })
        .collect();
    SequenceStructure { levels, spans }
}

/// Identity of a flow class for exports and residual checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ClassId {
    RdLevel { seq: usize, level: usize },
    RpSpan { seq: usize, slot: usize },
    DaSolo { od: OdPair },
    RdQuit { od: OdPair },
    PtSolo { od: OdPair },
    RpQuit { od: OdPair },
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassId::RdLevel { seq, level } => write!(f, "rd:n{seq}:l{level}"),
            ClassId::RpSpan { seq, slot } => write!(f, "rp:n{seq}:s{slot}"),
            ClassId::DaSolo { od } => write!(f, "da:{}:{}", od.o, od.d),
            ClassId::RdQuit { od } => write!(f, "rdquit:{}:{}", od.o, od.d),
            ClassId::PtSolo { od } => write!(f, "pt:{}:{}", od.o, od.d),
            ClassId::RpQuit { od } => write!(f, "rpquit:{}:{}", od.o, od.d),
        }
    }
}

impl ClassId {
    /// Inverse of [`Display`](fmt::Display), for reading exported solutions.
    pub fn parse(s: &str) -> Option<ClassId> {
        let mut it = s.split(':');
        let kind = it.next()?;
        let a = it.next()?;
        let b = it.next()?;
        if it.next().is_some() {
            return None;
        }
        let od = |a: &str, b: &str| -> Option<OdPair> {
            Some(OdPair {
                o: crate::netio::NodeId(a.parse().ok()?),
                d: crate::netio::NodeId(b.parse().ok()?),
            })
        };
        match kind {
            "rd" => Some(ClassId::RdLevel {
                seq: a.strip_prefix('n')?.parse().ok()?,
                level: b.strip_prefix('l')?.parse().ok()?,
            }),
            "rp" => Some(ClassId::RpSpan {
                seq: a.strip_prefix('n')?.parse().ok()?,
                slot: b.strip_prefix('s')?.parse().ok()?,
            }),
            "da" => Some(ClassId::DaSolo { od: od(a, b)? }),
            "rdquit" => Some(ClassId::RdQuit { od: od(a, b)? }),
            "pt" => Some(ClassId::PtSolo { od: od(a, b)? }),
            "rpquit" => Some(ClassId::RpQuit { od: od(a, b)? }),
            _ => None,
        }
    }
}

/// Matching feasibility rows: each sequence consumes one driver of its driver
/// OD and `seats` passengers of each served passenger OD.
#[derive(Debug, Clone, Default)]
pub struct MatchingRows {
    /// (driver OD, sequence ids with coefficient 1)
    pub driver_rows: Vec<(OdPair, Vec<usize>)>,
    /// (passenger OD, (sequence id, seat count))
    pub passenger_rows: Vec<(OdPair, Vec<(usize, f64)>)>,
}

pub fn matching_rows(pool: &MatchingPool) -> MatchingRows {
    let mut rows = MatchingRows::default();
    for g in &pool.groups {
        rows.driver_rows.push((g.od, g.sequence_ids.clone()));
    }
    for od in pool.served_passenger_ods() {
        let mut entries = Vec::new();
        for seq in &pool.sequences {
            let seats = seq.seats_for(od);
            if seats > 0 {
                entries.push((seq.id, seats as f64));
            }
        }
        rows.passenger_rows.push((od, entries));
    }
    rows
}

/// Total demand and available modes of one OD pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdDemand {
    pub od: OdPair,
    pub total: f64,
    /// Indexed by [`Mode::index`].
    pub available: [bool; 4],
}

impl OdDemand {
    pub fn all_modes(od: OdPair, total: f64) -> Self {
        OdDemand {
            od,
            total,
            available: [true; 4],
        }
    }

    pub fn allows(&self, m: crate::netio::Mode) -> bool {
        self.available[m.index()]
    }
}

/// A complete assignment state in the shared data model. Producers are the
/// solver and the reference solver; the consumer is the residual checker and
/// the report writer.
///
/// Passenger span flows are not stored: a slot's link flows are the driver's
/// level flows over the span, which encodes the coupling constraint exactly.
#[derive(Debug, Clone, Default)]
pub struct Solution {
    /// Demand by mode; absent entries are zero.
    pub mode_demand: std::collections::BTreeMap<(OdPair, crate::netio::Mode), f64>,
    /// Platform quota per sequence id.
    pub quota: Vec<f64>,
    /// Matched driver flow per sequence id.
    pub seq_flow: Vec<f64>,
    /// Link flows of every stored class.
    pub class_flows: std::collections::BTreeMap<ClassId, std::collections::BTreeMap<crate::netio::LinkId, f64>>,
}

impl Solution {
    pub fn mode_q(&self, od: OdPair, m: crate::netio::Mode) -> f64 {
        self.mode_demand.get(&(od, m)).copied().unwrap_or(0.0)
    }

    /// Vehicular link flows: drive-alone, unmatched drivers and matched
    /// drivers at any occupancy. Transit and passengers add no vehicles.
    pub fn vehicle_flows(&self, link_count: usize) -> Vec<f64> {
        let mut x = vec![0.0; link_count];
        for (cid, flows) in &self.class_flows {
            let vehicular = matches!(
                cid,
                ClassId::DaSolo { .. } | ClassId::RdQuit { .. } | ClassId::RdLevel { .. }
            );
            if vehicular {
                for (lid, f) in flows {
                    x[lid.idx()] += f;
                }
            }
        }
        x
    }

    /// Transit passenger link flows (solo transit plus unmatched passengers).
    pub fn transit_flows(&self, link_count: usize) -> Vec<f64> {
        let mut x = vec![0.0; link_count];
        for (cid, flows) in &self.class_flows {
            if matches!(cid, ClassId::PtSolo { .. } | ClassId::RpQuit { .. }) {
                for (lid, f) in flows {
                    x[lid.idx()] += f;
                }
            }
        }
        x
    }
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
    fn levels_chain_without_gaps() {
        let net = line_net();
        let pool = generate(
            &net,
            &[OdPair::new(1, 4)],
            &[OdPair::new(2, 3), OdPair::new(3, 2)],
            &GenConfig {
                detour_factor: 0.0,
                ..GenConfig::default()
            },
        )
        .unwrap();
        for seq in &pool.sequences {
            let st = structure(seq);
            assert_eq!(st.level_count(), seq.levels());
            for l in 1..st.level_count() {
                assert_eq!(
                    st.level(l).od.d,
                    st.level(l + 1).od.o,
                    "level chain broken in {}",
                    seq.route_string()
                );
            }
            assert_eq!(st.level(1).od.o, seq.driver_od.o);
            assert_eq!(st.level(st.level_count()).od.d, seq.driver_od.d);
        }
    }

    #[test]
    fn spans_are_contiguous_and_match_occupancy() {
        let net = line_net();
        let pool = generate(
            &net,
            &[OdPair::new(1, 4)],
            &[OdPair::new(2, 3), OdPair::new(2, 3)],
            &GenConfig {
                detour_factor: 0.0,
                ..GenConfig::default()
            },
        )
        .unwrap();
        for seq in &pool.sequences {
            let st = structure(seq);
            let mut occ = vec![0u8; st.level_count()];
            for sp in &st.spans {
                assert!(sp.first_level <= sp.last_level);
                for l in sp.first_level..=sp.last_level {
                    occ[l - 1] += 1;
                }
            }
            assert_eq!(occ, seq.occupancy, "span cover mismatch");
            for (i, lvl) in st.levels.iter().enumerate() {
                match lvl.layer {
                    CostLayer::RdEmpty => assert_eq!(occ[i], 0),
                    CostLayer::RdWith { occupancy } => assert_eq!(occ[i], occupancy),
                    _ => panic!("driver level with non-driver layer"),
                }
            }
        }
    }

    #[test]
    fn matching_rows_count_seats() {
        let net = line_net();
        let u = OdPair::new(2, 3);
        let pool = generate(
            &net,
            &[OdPair::new(1, 4)],
            &[u, u],
            &GenConfig {
                detour_factor: 0.0,
                ..GenConfig::default()
            },
        )
        .unwrap();
        let rows = matching_rows(&pool);
        assert_eq!(rows.driver_rows.len(), 1);
        assert_eq!(rows.passenger_rows.len(), 1);
        let (_, entries) = &rows.passenger_rows[0];
        for &(sid, seats) in entries {
            assert_eq!(seats, pool.sequences[sid].slots.len() as f64);
        }
    }
}
