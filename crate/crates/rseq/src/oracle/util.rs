//! Small numeric helpers local to the oracle. The solver has its own label
//! machinery; nothing here is shared with it.

use crate::netio::{CostLayer, CostModel, LinkId, Network, NodeId};

pub fn link_times(net: &Network, x_veh: &[f64]) -> Vec<f64> {
    net.links
        .iter()
        .zip(x_veh)
        .map(|(l, &x)| l.travel_time(x.max(0.0)))
        .collect()
}

pub fn layer_cost_vec(net: &Network, cm: &CostModel, layer: CostLayer, times: &[f64]) -> Vec<f64> {
    net.links
        .iter()
        .zip(times)
        .map(|(l, &t)| cm.link_cost(layer, l, t))
        .collect()
}

/// Price a link chain under a second layer (used to split a bundle route
/// into driver and passenger shares).
pub fn price_path(net: &Network, cm: &CostModel, layer: CostLayer, times: &[f64], path: &[LinkId]) -> f64 {
    path.iter()
        .map(|&lid| cm.link_cost(layer, net.link(lid), times[lid.idx()]))
        .sum()
}

/// One-to-all shortest path by link cost with predecessor links.
/// Costs must be non-negative; the cost model validates that upstream.
pub fn dijkstra(net: &Network, costs: &[f64], source: NodeId) -> (Vec<f64>, Vec<Option<LinkId>>) {
    let n = net.node_count() as usize;
    let mut dist = vec![f64::INFINITY; n];
    let mut pred: Vec<Option<LinkId>> = vec![None; n];
    let mut done = vec![false; n];
    dist[net.node_index(source)] = 0.0;
    // O(n^2) scan; oracle instances are tiny and determinism matters more
    // than speed here.
    for _ in 0..n {
        let mut best = usize::MAX;
        let mut bd = f64::INFINITY;
        for v in 0..n {
            if !done[v] && dist[v] < bd {
                bd = dist[v];
                best = v;
            }
        }
        if best == usize::MAX {
            break;
        }
        done[best] = true;
        let at = NodeId(best as u32 + 1);
        for &lid in net.outgoing(at) {
            let link = net.link(lid);
            let w = net.node_index(link.to);
            let c = costs[lid.idx()];
            debug_assert!(c >= -1e-12, "negative link cost {c}");
            if dist[best] + c < dist[w] - 1e-15 {
                dist[w] = dist[best] + c;
                pred[w] = Some(lid);
            }
        }
    }
    (dist, pred)
}

/// Reconstructs the predecessor path into `target`; empty when unreachable
/// or when the target is the source.
pub fn extract_path(net: &Network, pred: &[Option<LinkId>], source: NodeId, target: NodeId) -> Vec<LinkId> {
    let mut path = Vec::new();
    let mut at = target;
    while at != source {
        match pred[net.node_index(at)] {
            Some(lid) => {
                path.push(lid);
                at = net.link(lid).from;
            }
            None => return Vec::new(),
        }
    }
    path.reverse();
    path
}
