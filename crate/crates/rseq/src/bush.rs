//! Rooted acyclic route bundles per cost layer.
//!
//! A [`Bush`] keeps, for one root node and one per-link cost vector, an
//! acyclic subset of network links reaching every node the root can reach,
//! a topological order over that subset, cheapest-route labels with
//! predecessors, and per-flow-key costliest-route labels restricted to that
//! key's flow support. The assignment loop holds one bush per (root, cost
//! layer) pair and shares it across every matching-sequence level rooted
//! there; flow moves only between the two recorded extreme routes, so no
//! path set is ever enumerated.
//!
//! The update cycle is removal, relabel, reorder, expansion. Removal drops
//! links without flow but always keeps the current cheapest-route tree, so
//! the bush never disconnects; a link bypassed by a newly added shortcut
//! loses its tree status and falls out on the following update. Expansion
//! admits links that lower a cheapest-route label and respect the current
//! order, which preserves acyclicity without a cycle check.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use log::trace;
use thiserror::Error;

use crate::netio::{LinkId, Network, NodeId};
use crate::tolerances;

#[derive(Debug, Error)]
pub enum BushError {
    #[error("node {node} is unreachable from bush root {root}")]
    Unreachable { root: NodeId, node: NodeId },
}

/// Links touched by one [`Bush::update`] pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UpdateStats {
    pub removed: usize,
    pub added: usize,
}

impl UpdateStats {
    pub fn changed(&self) -> bool {
        self.removed > 0 || self.added > 0
    }
}

/// Costliest-route labels for one flow key.
#[derive(Debug, Clone)]
struct MaxLabels {
    cost: Vec<f64>,
    pred: Vec<Option<LinkId>>,
}

const UNRANKED: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub struct Bush {
    pub root: NodeId,
    /// Membership by link id.
    in_bush: Vec<bool>,
    /// Rank by node index; `UNRANKED` marks nodes the bush cannot reach.
    rank: Vec<u32>,
    /// Node indices in topological order, root first.
    order: Vec<u32>,
    /// Cheapest cost from the root by node index.
    min_cost: Vec<f64>,
    min_pred: Vec<Option<LinkId>>,
    /// Costliest labels per flow key, sorted by key for determinism.
    max: Vec<(u64, MaxLabels)>,
}

impl Bush {
    /// Builds the initial bush as the one-to-all cheapest-route tree from
    /// `root`. Every node in `targets` must be reachable.
    pub fn build(
        net: &Network,
        root: NodeId,
        costs: &[f64],
        targets: &[NodeId],
    ) -> Result<Self, BushError> {
        let n = net.node_count() as usize;
        let mut bush = Bush {
            root,
            in_bush: vec![false; net.links.len()],
            rank: vec![UNRANKED; n],
            order: Vec::with_capacity(n),
            min_cost: vec![f64::INFINITY; n],
            min_pred: vec![None; n],
            max: Vec::new(),
        };
        bush.dijkstra_tree(net, costs);
        for l in bush.min_pred.iter().flatten() {
            bush.in_bush[l.idx()] = true;
        }
        bush.reorder(net);
        for &t in targets {
            if bush.min_cost[net.node_index(t)].is_infinite() {
                return Err(BushError::Unreachable { root, node: t });
            }
        }
        Ok(bush)
    }

    fn dijkstra_tree(&mut self, net: &Network, costs: &[f64]) {
        #[derive(PartialEq)]
        struct Item(f64, u32);
        impl Eq for Item {}
        impl PartialOrd for Item {
            fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
                Some(self.cmp(o))
            }
        }
        impl Ord for Item {
            fn cmp(&self, o: &Self) -> std::cmp::Ordering {
                self.0
                    .total_cmp(&o.0)
                    .then_with(|| self.1.cmp(&o.1))
            }
        }

        let mut heap = BinaryHeap::new();
        let ri = net.node_index(self.root);
        self.min_cost[ri] = 0.0;
        heap.push(Reverse(Item(0.0, self.root.0)));
        let mut done = vec![false; self.min_cost.len()];
        while let Some(Reverse(Item(d, node))) = heap.pop() {
            let v = net.node_index(NodeId(node));
            if done[v] {
                continue;
            }
            done[v] = true;
            for &lid in net.outgoing(NodeId(node)) {
                let link = net.link(lid);
                let w = net.node_index(link.to);
                let c = costs[lid.idx()];
                debug_assert!(c >= 0.0, "negative link cost {c} on {lid:?}");
                if d + c < self.min_cost[w] - 1e-15 {
                    self.min_cost[w] = d + c;
                    self.min_pred[w] = Some(lid);
                    heap.push(Reverse(Item(d + c, link.to.0)));
                }
            }
        }
    }

    /// Recomputes ranks by processing, among nodes whose bush predecessors
    /// are all placed, the one with the smallest current cheapest label.
    /// Cost-ascending placement is what lets a cheap sideways link pass the
    /// order test during expansion.
    fn reorder(&mut self, net: &Network) {
        let n = self.rank.len();
        let mut indeg = vec![0u32; n];
        for (i, &inb) in self.in_bush.iter().enumerate() {
            if inb {
                indeg[net.node_index(net.links[i].to)] += 1;
            }
        }
        self.rank.iter_mut().for_each(|r| *r = UNRANKED);
        self.order.clear();

        #[derive(PartialEq)]
        struct Ready(f64, u32);
        impl Eq for Ready {}
        impl PartialOrd for Ready {
            fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
                Some(self.cmp(o))
            }
        }
        impl Ord for Ready {
            fn cmp(&self, o: &Self) -> std::cmp::Ordering {
                self.0.total_cmp(&o.0).then_with(|| self.1.cmp(&o.1))
            }
        }

        let mut ready = BinaryHeap::new();
        ready.push(Reverse(Ready(0.0, self.root.0)));
        while let Some(Reverse(Ready(_, node))) = ready.pop() {
            let v = net.node_index(NodeId(node));
            if self.rank[v] != UNRANKED {
                continue;
            }
            self.rank[v] = self.order.len() as u32;
            self.order.push(v as u32);
            for &lid in net.outgoing(NodeId(node)) {
                if !self.in_bush[lid.idx()] {
                    continue;
                }
                let w = net.node_index(net.link(lid).to);
                indeg[w] -= 1;
                if indeg[w] == 0 {
                    ready.push(Reverse(Ready(self.min_cost[w], net.link(lid).to.0)));
                }
            }
        }
    }

    /// One topological pass refreshing the cheapest labels for the current
    /// link set and cost vector.
    pub fn relabel(&mut self, net: &Network, costs: &[f64]) {
        for v in 0..self.min_cost.len() {
            self.min_cost[v] = f64::INFINITY;
            self.min_pred[v] = None;
        }
        self.min_cost[net.node_index(self.root)] = 0.0;
        for &vi in &self.order {
            let node = NodeId(vi + 1);
            let v = vi as usize;
            for &lid in net.incoming(node) {
                if !self.in_bush[lid.idx()] {
                    continue;
                }
                let u = net.node_index(net.link(lid).from);
                let cand = self.min_cost[u] + costs[lid.idx()];
                if cand < self.min_cost[v] - 1e-15 {
                    self.min_cost[v] = cand;
                    self.min_pred[v] = Some(lid);
                }
            }
        }
    }

    /// Removal, relabel, reorder, then expansion against `costs`.
    /// `flows` is the total flow that this bush's classes place on each
    /// network link; links at or below the flow clamp are candidates for
    /// removal.
    pub fn update(&mut self, net: &Network, costs: &[f64], flows: &[f64]) -> UpdateStats {
        let mut stats = UpdateStats::default();

        // Removal: unused links leave unless they hold the cheapest-route
        // tree together.
        let mut tree = vec![false; self.in_bush.len()];
        for l in self.min_pred.iter().flatten() {
            tree[l.idx()] = true;
        }
        for i in 0..self.in_bush.len() {
            if self.in_bush[i] && !tree[i] && flows[i] <= tolerances::FLOW_CLAMP {
                self.in_bush[i] = false;
                stats.removed += 1;
            }
        }
        // Ranks from before the removal are still a valid order of the
        // remaining links, so the label pass can run before reordering.
        self.relabel(net, costs);
        self.reorder(net);

        // Expansion: P1 improves a label, P2 respects the order.
        let mut add: Vec<LinkId> = Vec::new();
        let mut p1_seen = false;
        let mut p2: Vec<LinkId> = Vec::new();
        for (i, link) in net.links.iter().enumerate() {
            if self.in_bush[i] {
                continue;
            }
            let u = net.node_index(link.from);
            let v = net.node_index(link.to);
            if self.rank[u] == UNRANKED {
                continue;
            }
            let improves =
                self.min_cost[u] + costs[i] < self.min_cost[v] - tolerances::BUSH_IMPROVE_EPS;
            let ordered = self.rank[u] < self.rank[v] || self.rank[v] == UNRANKED;
            p1_seen |= improves;
            if ordered {
                p2.push(LinkId(i as u32));
                if improves {
                    add.push(LinkId(i as u32));
                }
            }
        }
        if add.is_empty() && p1_seen && !p2.is_empty() {
            // Improving links exist but all violate the current order; admit
            // every order-respecting link so the next relabel can reroute.
            add = p2;
        }
        stats.added = add.len();
        for l in &add {
            self.in_bush[l.idx()] = true;
        }
        if stats.added > 0 {
            self.relabel(net, costs);
            self.reorder(net);
        }
        if stats.changed() {
            trace!(
                "bush {}: removed {} added {} links",
                self.root,
                stats.removed,
                stats.added
            );
        }
        stats
    }

    /// Refreshes the cheapest labels and rebuilds the costliest labels for
    /// each `(key, per-link flow)` support. Nodes a key's flow does not
    /// reach keep the cheapest label as their costliest, so extreme-route
    /// queries always resolve.
    pub fn set_labels(&mut self, net: &Network, costs: &[f64], supports: &[(u64, &[f64])]) {
        self.relabel(net, costs);
        self.max.clear();
        for &(key, flows) in supports {
            let mut cost = self.min_cost.clone();
            let mut pred = self.min_pred.clone();
            for &vi in &self.order {
                let node = NodeId(vi + 1);
                let v = vi as usize;
                for &lid in net.incoming(node) {
                    if !self.in_bush[lid.idx()] || flows[lid.idx()] <= tolerances::FLOW_CLAMP {
                        continue;
                    }
                    let u = net.node_index(net.link(lid).from);
                    if cost[u].is_infinite() {
                        continue;
                    }
                    let cand = cost[u] + costs[lid.idx()];
                    if cand > cost[v] + 1e-15 {
                        cost[v] = cand;
                        pred[v] = Some(lid);
                    }
                }
            }
            self.max.push((key, MaxLabels { cost, pred }));
        }
        self.max.sort_by_key(|(k, _)| *k);
    }

    fn max_labels(&self, key: u64) -> Option<&MaxLabels> {
        self.max
            .binary_search_by_key(&key, |(k, _)| *k)
            .ok()
            .map(|i| &self.max[i].1)
    }

    pub fn min_cost_to(&self, net: &Network, n: NodeId) -> f64 {
        self.min_cost[net.node_index(n)]
    }

    /// Costliest-route label for `key`, falling back to the cheapest label
    /// when the key was not given to [`Bush::set_labels`].
    pub fn max_cost_to(&self, net: &Network, key: u64, n: NodeId) -> f64 {
        let v = net.node_index(n);
        match self.max_labels(key) {
            Some(m) => m.cost[v],
            None => self.min_cost[v],
        }
    }

    pub fn cheapest_route(&self, net: &Network, to: NodeId) -> Option<Vec<LinkId>> {
        self.walk_preds(net, &self.min_pred, to)
    }

    pub fn costliest_route(&self, net: &Network, key: u64, to: NodeId) -> Option<Vec<LinkId>> {
        match self.max_labels(key) {
            Some(m) => self.walk_preds(net, &m.pred, to),
            None => self.cheapest_route(net, to),
        }
    }

    fn walk_preds(
        &self,
        net: &Network,
        pred: &[Option<LinkId>],
        to: NodeId,
    ) -> Option<Vec<LinkId>> {
        let mut path = Vec::new();
        let mut at = to;
        while at != self.root {
            let lid = pred[net.node_index(at)]?;
            path.push(lid);
            at = net.link(lid).from;
            debug_assert!(path.len() <= net.links.len(), "predecessor cycle");
        }
        path.reverse();
        Some(path)
    }

    pub fn contains(&self, l: LinkId) -> bool {
        self.in_bush[l.idx()]
    }

    pub fn link_ids(&self) -> Vec<LinkId> {
        (0..self.in_bush.len())
            .filter(|&i| self.in_bush[i])
            .map(|i| LinkId(i as u32))
            .collect()
    }

    pub fn order(&self) -> &[u32] {
        &self.order
    }

    /// True when every retained link goes from a lower to a higher rank,
    /// which is the acyclicity certificate.
    pub fn is_topological(&self, net: &Network) -> bool {
        net.links.iter().enumerate().all(|(i, l)| {
            if !self.in_bush[i] {
                return true;
            }
            let (u, v) = (net.node_index(l.from), net.node_index(l.to));
            self.rank[u] != UNRANKED && self.rank[v] != UNRANKED && self.rank[u] < self.rank[v]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netio::{CostLayer, Link, Network};

    fn link(from: u32, to: u32) -> Link {
        Link {
            from: NodeId(from),
            to: NodeId(to),
            capacity: 1000.0,
            length: 1.0,
            fft: 1.0,
            b: 0.15,
            power: 4.0,
            speed: 0.0,
            toll: 0.0,
            link_type: 1,
        }
    }

    fn rp_freeflow_costs(net: &Network) -> Vec<f64> {
        let cm = crate::fixtures::grid_cost_model();
        net.links
            .iter()
            .map(|l| cm.link_cost(CostLayer::Rp, l, l.fft))
            .collect()
    }

    #[test]
    fn two_node_tree() {
        let net = Network::new(2, 1, 2, vec![link(1, 2)]).unwrap();
        let b = Bush::build(&net, NodeId(1), &[3.0], &[NodeId(2)]).unwrap();
        assert!(b.contains(LinkId(0)));
        assert_eq!(b.min_cost_to(&net, NodeId(2)), 3.0);
        assert_eq!(b.max_cost_to(&net, 0, NodeId(2)), 3.0);
        assert_eq!(b.cheapest_route(&net, NodeId(2)), Some(vec![LinkId(0)]));
    }

    #[test]
    fn unreachable_target_is_an_error() {
        let net = Network::new(2, 1, 2, vec![link(2, 1)]).unwrap();
        let err = Bush::build(&net, NodeId(1), &[1.0], &[NodeId(2)]).unwrap_err();
        let BushError::Unreachable { root, node } = err;
        assert_eq!(root, NodeId(1));
        assert_eq!(node, NodeId(2));
    }

    #[test]
    fn chain_labels() {
        let net = Network::new(3, 1, 3, vec![link(1, 2), link(2, 3)]).unwrap();
        let mut b = Bush::build(&net, NodeId(1), &[1.0, 2.0], &[NodeId(3)]).unwrap();
        b.set_labels(&net, &[1.0, 2.0], &[]);
        assert_eq!(b.min_cost_to(&net, NodeId(1)), 0.0);
        assert_eq!(b.min_cost_to(&net, NodeId(2)), 1.0);
        assert_eq!(b.min_cost_to(&net, NodeId(3)), 3.0);
        assert_eq!(b.max_cost_to(&net, 7, NodeId(3)), 3.0);
    }

    #[test]
    fn diamond_max_label_tracks_flow_support() {
        // Paths 1-2-4 (cost 3) and 1-3-4 (cost 4); expected labels derived
        // by enumerating both.
        let links = vec![link(1, 2), link(1, 3), link(2, 4), link(3, 4)];
        let costs = [1.0, 2.0, 2.0, 2.0];
        let net = Network::new(4, 1, 4, links).unwrap();
        let mut b = Bush::build(&net, NodeId(1), &costs, &[NodeId(4)]).unwrap();
        // A transient repricing pulls the 3-4 branch into the bush; flow on
        // it then keeps it there once the original costs return.
        let flows = [5.0, 5.0, 5.0, 5.0];
        b.update(&net, &[1.0, 2.0, 2.0, 0.5], &flows);
        b.update(&net, &costs, &flows);
        assert!(b.contains(LinkId(1)) && b.contains(LinkId(3)), "both branches in bush");
        b.set_labels(&net, &costs, &[(0, &flows)]);
        assert_eq!(b.min_cost_to(&net, NodeId(4)), 3.0);
        assert_eq!(b.max_cost_to(&net, 0, NodeId(4)), 4.0);
        assert_eq!(b.cheapest_route(&net, NodeId(4)), Some(vec![LinkId(0), LinkId(2)]));
        assert_eq!(
            b.costliest_route(&net, 0, NodeId(4)),
            Some(vec![LinkId(1), LinkId(3)])
        );

        // Without flow on the costly branch the max label stays at the min.
        let one_sided = [5.0, 0.0, 5.0, 0.0];
        b.set_labels(&net, &costs, &[(0, &one_sided)]);
        assert_eq!(b.max_cost_to(&net, 0, NodeId(4)), 3.0);
    }

    #[test]
    fn corridor_initial_tree_uses_low_middle_nodes() {
        let net = crate::fixtures::grid_network();
        let costs = rp_freeflow_costs(&net);
        let b = Bush::build(&net, NodeId(4), &costs, &[NodeId(7), NodeId(10)]).unwrap();
        let lid = |f: u32, t: u32| {
            LinkId(
                net.links
                    .iter()
                    .position(|l| l.from == NodeId(f) && l.to == NodeId(t))
                    .unwrap() as u32,
            )
        };
        assert!(b.contains(lid(4, 5)));
        assert!(b.contains(lid(5, 7)));
        assert!(b.is_topological(&net));
    }

    #[test]
    fn congestion_swings_corridor_bush_to_other_middle() {
        let net = crate::fixtures::grid_network();
        let base = rp_freeflow_costs(&net);
        let lid = |f: u32, t: u32| {
            net.links
                .iter()
                .position(|l| l.from == NodeId(f) && l.to == NodeId(t))
                .unwrap()
        };
        let mut b = Bush::build(&net, NodeId(4), &base, &[NodeId(7)]).unwrap();

        // Heavy vehicle load on the 4-5-7 branch reprices it far above the
        // idle 4-6-7 branch.
        let mut congested = base.clone();
        for (f, t) in [(4, 5), (5, 7)] {
            let i = lid(f, t);
            let l = &net.links[i];
            congested[i] = l.travel_time(40_000.0) + 10.0;
        }
        let zero = vec![0.0; net.links.len()];
        b.update(&net, &congested, &zero);
        assert!(b.contains(LinkId(lid(6, 5) as u32)), "sideways link admitted");
        assert!(b.contains(LinkId(lid(6, 7) as u32)));
        // The congested pair survives one update as the old tree, then
        // drops once the relabel reroutes the tree through node 6.
        b.update(&net, &congested, &zero);
        assert!(!b.contains(LinkId(lid(4, 5) as u32)));
        assert!(!b.contains(LinkId(lid(5, 7) as u32)));
        assert!(b.is_topological(&net));
        assert_eq!(
            b.cheapest_route(&net, NodeId(7)),
            Some(vec![LinkId(lid(4, 6) as u32), LinkId(lid(6, 7) as u32)])
        );
    }

    #[test]
    fn converged_bush_is_a_fixed_point() {
        let net = crate::fixtures::grid_network();
        let costs = rp_freeflow_costs(&net);
        let mut b = Bush::build(&net, NodeId(4), &costs, &[NodeId(10)]).unwrap();
        let mut flows = vec![0.0; net.links.len()];
        for l in b.cheapest_route(&net, NodeId(10)).unwrap() {
            flows[l.idx()] = 100.0;
        }
        let stats = b.update(&net, &costs, &flows);
        let first_removed = stats.removed;
        let stats = b.update(&net, &costs, &flows);
        assert_eq!(stats, UpdateStats::default(), "second pass must be stable");
        // The first pass may only drop never-used non-tree links.
        assert_eq!(first_removed, 0);
    }

    #[test]
    fn cheaper_outside_link_enters_on_update() {
        // Independent check against a full shortest-path recomputation.
        let links = vec![link(1, 2), link(2, 4), link(1, 3), link(3, 4), link(2, 3)];
        let net = Network::new(4, 1, 4, links).unwrap();
        let before = [1.0, 10.0, 5.0, 10.0, 9.0];
        let mut b = Bush::build(&net, NodeId(1), &before, &[NodeId(4)]).unwrap();
        // Repricing the 2-3 connector makes 1-2-3-4 the cheapest path.
        let after = [1.0, 10.0, 5.0, 10.0, 1.0];
        b.update(&net, &after, &[0.0; 5]);
        b.update(&net, &after, &[0.0; 5]);
        let mut exp = Bush::build(&net, NodeId(1), &after, &[NodeId(4)]).unwrap();
        exp.relabel(&net, &after);
        for node in [2, 3, 4] {
            assert_eq!(
                b.min_cost_to(&net, NodeId(node)),
                exp.min_cost_to(&net, NodeId(node)),
                "node {node}"
            );
        }
        assert!(b.is_topological(&net));
    }
}
