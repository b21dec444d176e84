//! Weighted undirected graphs and Dijkstra shortest paths.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

use super::delaunay::NavMesh;

#[derive(Debug, Clone)]
pub struct WeightedGraph {
    adj: Vec<Vec<(usize, f64)>>,
}

impl WeightedGraph {
    /// `edges` are `(a, b, weight)` with positive finite weights.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut adj = vec![Vec::new(); n];
        for &(a, b, w) in edges {
            if a >= n || b >= n {
                return Err(Error::Index { index: a.max(b), len: n });
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Domain(format!("edge ({a}, {b}) has weight {w}")));
            }
            adj[a].push((b, w));
            adj[b].push((a, w));
        }
        for list in &mut adj {
            list.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)));
        }
        Ok(Self { adj })
    }

    pub fn from_mesh(mesh: &NavMesh) -> Self {
        let edges: Vec<_> = mesh.edges().iter().map(|e| (e.a, e.b, e.length)).collect();
        Self::from_edges(mesh.vertices().len(), &edges).expect("mesh edges are valid")
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.adj[v]
    }

    /// Minimum-length vertex sequence from `from` to `to` and its length.
    /// Among equal-length paths, each vertex keeps the predecessor with the
    /// smallest index.
    pub fn dijkstra(&self, from: usize, to: usize) -> Result<(Vec<usize>, f64)> {
        let n = self.adj.len();
        for v in [from, to] {
            if v >= n {
                return Err(Error::Index { index: v, len: n });
            }
        }
        let mut dist = vec![f64::INFINITY; n];
        let mut pred = vec![usize::MAX; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        dist[from] = 0.0;
        heap.push(Entry { dist: 0.0, vertex: from });
        while let Some(Entry { dist: d, vertex: u }) = heap.pop() {
            if done[u] {
                continue;
            }
            done[u] = true;
            if u == to {
                break;
            }
            for &(v, w) in &self.adj[u] {
                if done[v] {
                    continue;
                }
                let nd = d + w;
                if nd < dist[v] {
                    dist[v] = nd;
                    pred[v] = u;
                    heap.push(Entry { dist: nd, vertex: v });
                } else if nd == dist[v] && u < pred[v] {
                    pred[v] = u;
                }
            }
        }
        if !dist[to].is_finite() {
            return Err(Error::NoPath { from, to });
        }
        let mut path = vec![to];
        let mut v = to;
        while v != from {
            v = pred[v];
            path.push(v);
        }
        path.reverse();
        Ok((path, dist[to]))
    }
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    dist: f64,
    vertex: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // min-heap on (dist, vertex)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}
