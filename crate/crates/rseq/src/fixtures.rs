//! Bundled demo instances.
//!
//! The corridor grid here is the standard small benchmark used across the
//! examples and the regression tests: a chain of five diamonds between six
//! anchor nodes, one driver OD spanning the corridor and two passenger ODs
//! nested inside it. Everything is built programmatically so tests and
//! examples do not depend on data files being present; the copies under
//! `data/` are checked against these constructors.

use crate::hypernet::OdDemand;
use crate::matchgen::{GenConfig, OdPair};
use crate::netio::{CostModel, Link, ModeCostParams, Network, NodeId};

/// Anchor nodes of the corridor, in travel order.
pub const GRID_ANCHORS: [u32; 6] = [1, 4, 7, 10, 13, 16];

fn grid_link(from: u32, to: u32) -> Link {
    Link {
        from: NodeId(from),
        to: NodeId(to),
        capacity: 10_000.0,
        length: 5.0,
        fft: 5.0,
        b: 0.15,
        power: 4.0,
        speed: 0.0,
        toll: 0.0,
        link_type: 1,
    }
}

/// Sixteen-node corridor of five diamonds. Each diamond connects two
/// consecutive anchors through a pair of middle nodes, with a cross link
/// between the middles; every edge is bidirectional, giving 50 directed
/// links. All links share capacity 10,000, length 5 and free-flow time 5.
pub fn grid_network() -> Network {
    let mut links = Vec::with_capacity(50);
    let mut both = |a: u32, b: u32| {
        links.push(grid_link(a, b));
        links.push(grid_link(b, a));
    };
    for (i, pair) in GRID_ANCHORS.windows(2).enumerate() {
        let (a, b) = (pair[0], pair[1]);
        let m1 = 3 * i as u32 + 2;
        let m2 = m1 + 1;
        both(a, m1);
        both(a, m2);
        both(m1, m2);
        both(m1, b);
        both(m2, b);
    }
    Network::new(16, 1, 16, links).expect("grid fixture is valid")
}

/// Cost template of the corridor benchmark: per link DA and empty RD pay
/// t+20, an RD with passengers aboard pays t+10, each RP pays t+10, PT pays
/// t+15 and shares the congested roadway.
pub fn grid_cost_model() -> CostModel {
    CostModel {
        params: [
            ModeCostParams { alpha: 1.0, beta: 4.0, ..Default::default() },
            ModeCostParams { alpha: 1.0, beta: 4.0, nu_d: 2.0, ..Default::default() },
            ModeCostParams { alpha: 1.0, beta: 0.0, nu_d: 2.0, ..Default::default() },
            ModeCostParams { alpha: 1.0, beta: 0.0, nu_d: 3.0, ..Default::default() },
        ],
        pt_congested_time: true,
    }
}

/// Driver OD spanning the corridor.
pub fn grid_driver_ods() -> Vec<OdPair> {
    vec![OdPair::new(1, 16)]
}

/// Passenger ODs nested inside the corridor.
pub fn grid_passenger_ods() -> Vec<OdPair> {
    vec![OdPair::new(4, 10), OdPair::new(7, 13)]
}

/// Demand: 40,000 corridor travelers choosing between driving alone and
/// driving for the platform, and 20,000 on each nested OD choosing between
/// pooling and transit.
pub fn grid_demands() -> Vec<OdDemand> {
    vec![
        OdDemand {
            od: OdPair::new(1, 16),
            total: 40_000.0,
            available: [true, true, false, false],
        },
        OdDemand {
            od: OdPair::new(4, 10),
            total: 20_000.0,
            available: [false, false, true, true],
        },
        OdDemand {
            od: OdPair::new(7, 13),
            total: 20_000.0,
            available: [false, false, true, true],
        },
    ]
}

/// Matching configuration of the corridor benchmark: two seats, groups of up
/// to two, no detour or saving filter. This yields the full pool of 12
/// sequences.
pub fn grid_match_config() -> GenConfig {
    GenConfig {
        capacity: 2,
        max_passengers: 2,
        detour_factor: 0.0,
        min_saving: None,
        max_candidates_per_driver: 0,
        max_sequences: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_fifty_directed_links() {
        let net = grid_network();
        assert_eq!(net.node_count(), 16);
        assert_eq!(net.links.len(), 50);
        // Every link is paired with its reverse.
        for l in &net.links {
            assert!(net.links.iter().any(|r| r.from == l.to && r.to == l.from));
        }
    }

    #[test]
    fn grid_cost_model_validates() {
        grid_cost_model().validate().unwrap();
    }

    #[test]
    fn congested_link_time_is_17() {
        let net = grid_network();
        let t = net.links[0].travel_time(20_000.0);
        assert!((t - 17.0).abs() < 1e-12);
    }
}
