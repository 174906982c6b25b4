//! Exhaustive simple-path enumeration.

use crate::matchgen::OdPair;
use crate::netio::{LinkId, Network, NodeId};

use super::OracleError;

/// All simple paths from `o` to `d` with at most `hop_limit` links, as link
/// id chains in a deterministic order (depth first, links in adjacency
/// order). Fails once more than `max_paths` paths are found; the error
/// reports how many were seen before giving up.
pub fn enumerate_paths(
    net: &Network,
    o: NodeId,
    d: NodeId,
    hop_limit: usize,
    max_paths: usize,
) -> Result<Vec<Vec<LinkId>>, OracleError> {
    let mut paths = Vec::new();
    let mut stack: Vec<LinkId> = Vec::new();
    let mut visited = vec![false; net.node_count() as usize];
    visited[net.node_index(o)] = true;
    dfs(net, o, d, hop_limit, max_paths, &mut stack, &mut visited, &mut paths).map_err(
        |found| OracleError::PathExplosion {
            od: OdPair { o, d },
            limit: max_paths,
            found,
        },
    )?;
    if paths.is_empty() && o != d {
        return Err(OracleError::NoRoute(o, d));
    }
    Ok(paths)
}

#[allow(clippy::too_many_arguments)]
fn dfs(
    net: &Network,
    at: NodeId,
    d: NodeId,
    hops_left: usize,
    max_paths: usize,
    stack: &mut Vec<LinkId>,
    visited: &mut [bool],
    paths: &mut Vec<Vec<LinkId>>,
) -> Result<(), usize> {
    if at == d {
        if paths.len() >= max_paths {
            return Err(paths.len() + 1);
        }
        paths.push(stack.clone());
        return Ok(());
    }
    if hops_left == 0 {
        return Ok(());
    }
    for &lid in net.outgoing(at) {
        let to = net.link(lid).to;
        let ti = net.node_index(to);
        if visited[ti] {
            continue;
        }
        visited[ti] = true;
        stack.push(lid);
        let r = dfs(net, to, d, hops_left - 1, max_paths, stack, visited, paths);
        stack.pop();
        visited[ti] = false;
        r?;
    }
    Ok(())
}

/// Sum of a cost vector over a path.
pub fn path_cost(costs: &[f64], path: &[LinkId]) -> f64 {
    path.iter().map(|l| costs[l.idx()]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netio::{Link, Network};

    fn diamond() -> Network {
        // 1 -> 2 -> 4, 1 -> 3 -> 4, 2 -> 3.
        let mk = |a: u32, b: u32| Link {
            from: NodeId(a),
            to: NodeId(b),
            capacity: 100.0,
            length: 1.0,
            fft: 1.0,
            b: 0.15,
            power: 4.0,
            speed: 0.0,
            toll: 0.0,
            link_type: 1,
        };
        Network::new(
            4,
            1,
            4,
            vec![mk(1, 2), mk(1, 3), mk(2, 3), mk(2, 4), mk(3, 4)],
        )
        .unwrap()
    }

    #[test]
    fn finds_all_simple_paths() {
        let net = diamond();
        let paths = enumerate_paths(&net, NodeId(1), NodeId(4), 10, 100).unwrap();
        // 1-2-4, 1-2-3-4, 1-3-4.
        assert_eq!(paths.len(), 3);
        let lens: Vec<usize> = paths.iter().map(|p| p.len()).collect();
        assert!(lens.contains(&2) && lens.contains(&3));
    }

    #[test]
    fn hop_limit_prunes() {
        let net = diamond();
        let paths = enumerate_paths(&net, NodeId(1), NodeId(4), 2, 100).unwrap();
        assert_eq!(paths.len(), 2);
    }

    #[test]
    fn explosion_is_reported() {
        let net = diamond();
        let err = enumerate_paths(&net, NodeId(1), NodeId(4), 10, 2).unwrap_err();
        match err {
            OracleError::PathExplosion { limit, found, .. } => {
                assert_eq!(limit, 2);
                assert!(found > 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn disconnected_is_no_route() {
        let net = diamond();
        assert!(matches!(
            enumerate_paths(&net, NodeId(4), NodeId(1), 10, 100),
            Err(OracleError::NoRoute(_, _))
        ));
    }
}
