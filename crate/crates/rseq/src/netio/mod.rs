//! Network data model, TNTP file IO and the generalized-cost model.
//!
//! Node ids are the external 1-based ids from the input files. Adjacency is
//! precomputed once; [`Network`] is immutable after construction.

mod cost;
mod tntp;

pub use cost::{CostLayer, CostModel, Mode, ModeCostParams};
pub use tntp::{parse_network, parse_trips, write_network, write_trips};

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetioError {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("validation: {0}")]
    Validation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// External 1-based node id as used in the input files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Index into [`Network::links`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkId(pub u32);

impl LinkId {
    #[inline]
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub from: NodeId,
    pub to: NodeId,
    pub capacity: f64,
    pub length: f64,
    /// Free-flow travel time.
    pub fft: f64,
    /// Volume-delay coefficient.
    pub b: f64,
    /// Volume-delay exponent.
    pub power: f64,
    pub speed: f64,
    pub toll: f64,
    pub link_type: i32,
}

impl Link {
    /// Congested travel time at vehicular flow `x` (standard volume-delay
    /// polynomial). `x = 0` returns the free-flow time exactly.
    #[inline]
    pub fn travel_time(&self, x: f64) -> f64 {
        debug_assert!(x >= -1e-9, "negative link flow {x}");
        self.fft * (1.0 + self.b * (x / self.capacity).powf(self.power))
    }

    /// Derivative of travel time with respect to flow, used by Newton-style
    /// flow shifts. Zero at `x = 0` for `power > 1`.
    #[inline]
    pub fn travel_time_derivative(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        self.fft * self.b * self.power * (x / self.capacity).powf(self.power - 1.0) / self.capacity
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    /// Number of zones (trip end nodes come first in TNTP convention).
    pub zones: u32,
    pub first_thru_node: u32,
    node_count: u32,
    pub links: Vec<Link>,
    out: Vec<Vec<LinkId>>,
    inc: Vec<Vec<LinkId>>,
}

impl Network {
    pub fn new(zones: u32, first_thru_node: u32, node_count: u32, links: Vec<Link>) -> Result<Self, NetioError> {
        for (i, l) in links.iter().enumerate() {
            if l.capacity <= 0.0 {
                return Err(NetioError::Validation(format!(
                    "link {} ({} -> {}) has non-positive capacity {}",
                    i, l.from, l.to, l.capacity
                )));
            }
            if l.from.0 == 0 || l.from.0 > node_count || l.to.0 == 0 || l.to.0 > node_count {
                return Err(NetioError::Validation(format!(
                    "link {} endpoint out of range ({} -> {}, {} nodes)",
                    i, l.from, l.to, node_count
                )));
            }
            if l.fft < 0.0 || l.length < 0.0 {
                return Err(NetioError::Validation(format!(
                    "link {} has negative time or length",
                    i
                )));
            }
        }
        let mut out = vec![Vec::new(); node_count as usize];
        let mut inc = vec![Vec::new(); node_count as usize];
        for (i, l) in links.iter().enumerate() {
            out[(l.from.0 - 1) as usize].push(LinkId(i as u32));
            inc[(l.to.0 - 1) as usize].push(LinkId(i as u32));
        }
        Ok(Network {
            zones,
            first_thru_node,
            node_count,
            links,
            out,
            inc,
        })
    }

    #[inline]
    pub fn node_count(&self) -> u32 {
        self.node_count
    }

    #[inline]
    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.idx()]
    }

    #[inline]
    pub fn outgoing(&self, n: NodeId) -> &[LinkId] {
        &self.out[(n.0 - 1) as usize]
    }

    #[inline]
    pub fn incoming(&self, n: NodeId) -> &[LinkId] {
        &self.inc[(n.0 - 1) as usize]
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (1..=self.node_count).map(NodeId)
    }

    /// Position of `n` in dense per-node arrays.
    #[inline]
    pub fn node_index(&self, n: NodeId) -> usize {
        (n.0 - 1) as usize
    }
}

/// Origin-destination trip demand. Zero entries are not stored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TripTable {
    pub zones: u32,
    flows: BTreeMap<(NodeId, NodeId), f64>,
}

impl TripTable {
    pub fn new(zones: u32) -> Self {
        TripTable {
            zones,
            flows: BTreeMap::new(),
        }
    }

    /// Inserts a demand entry. Rejects negative demand, drops zeros and
    /// intra-zonal trips (callers get a count of dropped intra-zonal demand
    /// from the parser, which logs it).
    pub fn insert(&mut self, o: NodeId, d: NodeId, trips: f64) -> Result<(), NetioError> {
        if trips < 0.0 {
            return Err(NetioError::Validation(format!(
                "negative demand {} for pair {} -> {}",
                trips, o, d
            )));
        }
        if o == d || trips == 0.0 {
            return Ok(());
        }
        *self.flows.entry((o, d)).or_insert(0.0) += trips;
        Ok(())
    }

    pub fn get(&self, o: NodeId, d: NodeId) -> f64 {
        self.flows.get(&(o, d)).copied().unwrap_or(0.0)
    }

    pub fn pairs(&self) -> impl Iterator<Item = (NodeId, NodeId, f64)> + '_ {
        self.flows.iter().map(|(&(o, d), &v)| (o, d, v))
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.flows.values().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn link(cap: f64, fft: f64) -> Link {
        Link {
            from: NodeId(1),
            to: NodeId(2),
            capacity: cap,
            length: 5.0,
            fft,
            b: 0.15,
            power: 4.0,
            speed: 0.0,
            toll: 0.0,
            link_type: 1,
        }
    }

    #[test]
    fn volume_delay_doubled_capacity() {
        // x/cap = 2 with the standard 0.15/4 curve: 5 * (1 + 0.15 * 16) = 17.
        let l = link(10_000.0, 5.0);
        assert!((l.travel_time(20_000.0) - 17.0).abs() < 1e-12);
    }

    #[test]
    fn volume_delay_at_capacity() {
        let l = link(10_000.0, 5.0);
        assert!((l.travel_time(10_000.0) - 5.75).abs() < 1e-12);
    }

    #[test]
    fn volume_delay_free_flow() {
        let l = link(10_000.0, 5.0);
        assert_eq!(l.travel_time(0.0), 5.0);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let l = link(10_000.0, 5.0);
        let x = 17_345.0;
        let h = 1e-3;
        let fd = (l.travel_time(x + h) - l.travel_time(x - h)) / (2.0 * h);
        assert!((l.travel_time_derivative(x) - fd).abs() < 1e-6);
    }

    #[test]
    fn zero_capacity_rejected() {
        let mut l = link(0.0, 5.0);
        l.capacity = 0.0;
        let err = Network::new(2, 1, 2, vec![l]).unwrap_err();
        assert!(matches!(err, NetioError::Validation(_)));
    }

    #[test]
    fn trip_table_drops_intrazonal_and_zero() {
        let mut t = TripTable::new(3);
        t.insert(NodeId(1), NodeId(1), 100.0).unwrap();
        t.insert(NodeId(1), NodeId(2), 0.0).unwrap();
        t.insert(NodeId(1), NodeId(3), 7.0).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.total(), 7.0);
    }

    #[test]
    fn trip_table_rejects_negative() {
        let mut t = TripTable::new(2);
        assert!(t.insert(NodeId(1), NodeId(2), -1.0).is_err());
    }
}
