use std::sync::Arc;

use crate::error::{Error, Result};

/// k-nearest-neighbour graph over the cells of a `(2r+1) × (2r+1)` window.
///
/// Vertex `v` sits at grid position `(v / side, v % side)`. The edge set never
/// contains self-loops; they enter once through `Â = A + I` when normalizing.
#[derive(Debug, Clone, PartialEq)]
pub struct GridGraph {
    pub radius: usize,
    pub k: usize,
    pub side: usize,
    pub n: usize,
    /// Undirected edges `(u, v)` with `u < v`, sorted.
    pub edges: Vec<(usize, usize)>,
    /// Dense `n × n` matrix `D̃^{-1/2}(A + I)D̃^{-1/2}`, row-major.
    pub adjacency_norm: Arc<Vec<f64>>,
    pub center_index: usize,
}

impl GridGraph {
    pub fn adjacency(&self) -> Vec<f64> {
        let mut a = vec![0.0; self.n * self.n];
        for &(u, v) in &self.edges {
            a[u * self.n + v] = 1.0;
            a[v * self.n + u] = 1.0;
        }
        a
    }

    pub fn norm_entry(&self, u: usize, v: usize) -> f64 {
        self.adjacency_norm[u * self.n + v]
    }
}

/// The `k` nearest vertices to `v` (itself included, at distance 0) by
/// Euclidean distance on grid indices, ties broken by `(row, col)`.
pub fn nearest_vertices(side: usize, v: usize, k: usize) -> Vec<usize> {
    let (r0, c0) = ((v / side) as i64, (v % side) as i64);
    let mut order: Vec<(i64, usize)> = (0..side * side)
        .map(|u| {
            let (r, c) = ((u / side) as i64, (u % side) as i64);
            ((r - r0).pow(2) + (c - c0).pow(2), u)
        })
        .collect();
    // Vertex ids are row-major, so ordering by id is the (row, col) order.
    order.sort_unstable();
    order.into_iter().take(k).map(|(_, u)| u).collect()
}

pub fn build_grid_graph(radius: usize, k: usize) -> Result<GridGraph> {
    let side = 2 * radius + 1;
    let n = side * side;
    if k == 0 || k > n {
        return Err(Error::Config(format!("k = {k} outside [1, {n}] for radius {radius}")));
    }
    let mut a = vec![0.0; n * n];
    for v in 0..n {
        for u in nearest_vertices(side, v, k) {
            if u != v {
                a[v * n + u] = 1.0;
                a[u * n + v] = 1.0;
            }
        }
    }
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if a[u * n + v] != 0.0 {
                edges.push((u, v));
            }
        }
    }
    let adjacency_norm = normalize_adjacency(&a, n, true)?;
    Ok(GridGraph {
        radius,
        k,
        side,
        n,
        edges,
        adjacency_norm: Arc::new(adjacency_norm),
        center_index: radius * side + radius,
    })
}

/// `D̃^{-1/2} Â D̃^{-1/2}` where `Â = A + I` if `with_self_loops`, else `Â = A`.
/// Vertices of zero degree get zero rows and columns.
pub fn normalize_adjacency(a: &[f64], n: usize, with_self_loops: bool) -> Result<Vec<f64>> {
    if a.len() != n * n {
        return Err(Error::shape("normalize_adjacency", format!("{} entries for n = {n}", a.len())));
    }
    for u in 0..n {
        if a[u * n + u] != 0.0 {
            return Err(Error::Data("adjacency diagonal must be zero".into()));
        }
        for v in 0..u {
            if a[u * n + v] != a[v * n + u] {
                return Err(Error::Data(format!("adjacency is asymmetric at ({u}, {v})")));
            }
        }
    }
    let mut hat = a.to_vec();
    if with_self_loops {
        for u in 0..n {
            hat[u * n + u] += 1.0;
        }
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|u| {
            let deg: f64 = hat[u * n..(u + 1) * n].iter().sum();
            if deg > 0.0 {
                1.0 / deg.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    for u in 0..n {
        for v in 0..n {
            hat[u * n + v] *= inv_sqrt[u] * inv_sqrt[v];
        }
    }
    Ok(hat)
}
