//! Dijkstra shortest paths over non-negative per-link weights.
//!
//! Ties are broken toward the lower node id, both in settling order and in the
//! choice of tree parent, so shortest-path trees are deterministic.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::topology::{LinkId, NetworkGraph, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Distances from the anchor to every node.
    From,
    /// Distances from every node to the anchor (Dijkstra on the reversed graph).
    To,
}

#[derive(Debug, Clone)]
pub struct ShortestPaths {
    pub anchor: NodeId,
    pub direction: Direction,
    /// `f64::INFINITY` for unreachable nodes.
    pub dist: Vec<f64>,
    /// Tree link at each node: the incoming link on the path from the anchor
    /// (`From`), or the outgoing first hop toward the anchor (`To`).
    pub tree_link: Vec<Option<LinkId>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    node: NodeId,
}

impl Eq for Entry {}

impl Ord for Entry {
    // min-heap on (dist, node)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub fn dijkstra(
    graph: &NetworkGraph,
    weights: &[f64],
    anchor: NodeId,
    direction: Direction,
) -> ShortestPaths {
    debug_assert_eq!(weights.len(), graph.link_count());
    debug_assert!(weights.iter().all(|w| *w >= 0.0), "negative link weight");
    let n = graph.node_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut tree_link: Vec<Option<LinkId>> = vec![None; n];
    let mut settled = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[anchor] = 0.0;
    heap.push(Entry {
        dist: 0.0,
        node: anchor,
    });
    while let Some(Entry { dist: d, node: u }) = heap.pop() {
        if settled[u] {
            continue;
        }
        settled[u] = true;
        let (links, far_end): (&[LinkId], fn(&crate::topology::Link) -> NodeId) = match direction {
            Direction::From => (graph.out_links(u), |l| l.head),
            Direction::To => (graph.in_links(u), |l| l.tail),
        };
        for &l in links {
            let v = far_end(graph.link(l));
            if settled[v] {
                continue;
            }
            let nd = d + weights[l];
            let better = nd < dist[v]
                || (nd == dist[v]
                    && tree_link[v].is_some_and(|cur| parent_of(graph, cur, direction) > u));
            if better {
                dist[v] = nd;
                tree_link[v] = Some(l);
                heap.push(Entry { dist: nd, node: v });
            }
        }
    }
    ShortestPaths {
        anchor,
        direction,
        dist,
        tree_link,
    }
}

fn parent_of(graph: &NetworkGraph, link: LinkId, direction: Direction) -> NodeId {
    let l = graph.link(link);
    match direction {
        Direction::From => l.tail,
        Direction::To => l.head,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::Link;

    #[test]
    fn triangle() {
        // u=0, v=1, w=2
        let links = vec![
            Link {
                tail: 0,
                head: 1,
                mu: 1.0,
            },
            Link {
                tail: 0,
                head: 2,
                mu: 1.0,
            },
            Link {
                tail: 2,
                head: 1,
                mu: 1.0,
            },
        ];
        let g = NetworkGraph::new(vec![1.0; 3], links).unwrap();
        let w = [1.0, 0.3, 0.4];
        let from = dijkstra(&g, &w, 0, Direction::From);
        assert!((from.dist[1] - 0.7).abs() < 1e-15);
        assert_eq!(from.dist[0], 0.0);
        assert_eq!(from.tree_link[1], Some(2));
        let to = dijkstra(&g, &w, 1, Direction::To);
        assert_eq!(to.dist[0], from.dist[1]);
        assert_eq!(to.tree_link[0], Some(1));
        assert_eq!(to.dist[1], 0.0);
    }

    #[test]
    fn ties_prefer_lower_id() {
        let links = [(0, 1), (0, 2), (1, 3), (2, 3)]
            .iter()
            .map(|&(tail, head)| Link {
                tail,
                head,
                mu: 1.0,
            })
            .collect();
        let g = NetworkGraph::new(vec![1.0; 4], links).unwrap();
        let to = dijkstra(&g, &[1.0; 4], 3, Direction::To);
        assert_eq!(g.link(to.tree_link[0].unwrap()).head, 1);
        let from = dijkstra(&g, &[1.0; 4], 0, Direction::From);
        assert_eq!(g.link(from.tree_link[3].unwrap()).tail, 1);
    }

    #[test]
    fn unreachable_is_infinite() {
        let g = NetworkGraph::new(
            vec![1.0; 3],
            vec![Link {
                tail: 0,
                head: 1,
                mu: 1.0,
            }],
        )
        .unwrap();
        let from = dijkstra(&g, &[1.0], 1, Direction::From);
        assert!(from.dist[0].is_infinite() && from.dist[2].is_infinite());
        assert_eq!(from.tree_link[0], None);
    }
}
