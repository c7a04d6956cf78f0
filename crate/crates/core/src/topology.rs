//! Constraint graph between vehicles.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("invalid graph configuration: {0}")]
    Config(String),
    #[error("node {index} out of range for a graph with {nodes} nodes")]
    Index { index: usize, nodes: usize },
}

/// Undirected graph with no self-loops, stored as a symmetric adjacency
/// matrix plus the sorted list of `(i, j)` edges with `i < j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintGraph {
    nodes: usize,
    adjacency: Vec<bool>,
    edges: Vec<(usize, usize)>,
}

impl ConstraintGraph {
    pub fn empty(nodes: usize) -> Self {
        Self { nodes, adjacency: vec![false; nodes * nodes], edges: Vec::new() }
    }

    pub fn complete(nodes: usize) -> Self {
        let mut g = Self::empty(nodes);
        for i in 0..nodes {
            for j in i + 1..nodes {
                g.insert(i, j);
            }
        }
        g
    }

    pub fn from_edges(nodes: usize, edges: &[(usize, usize)]) -> Result<Self, TopologyError> {
        let mut g = Self::empty(nodes);
        for &(i, j) in edges {
            for k in [i, j] {
                if k >= nodes {
                    return Err(TopologyError::Index { index: k, nodes });
                }
            }
            if i == j {
                return Err(TopologyError::Config(format!("self-loop at node {i}")));
            }
            g.insert(i.min(j), i.max(j));
        }
        g.edges.sort_unstable();
        g.edges.dedup();
        Ok(g)
    }

    fn insert(&mut self, i: usize, j: usize) {
        if !self.adjacency[i * self.nodes + j] {
            self.adjacency[i * self.nodes + j] = true;
            self.adjacency[j * self.nodes + i] = true;
            self.edges.push((i, j));
        }
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    /// Each unordered pair exactly once, `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        i < self.nodes && j < self.nodes && self.adjacency[i * self.nodes + j]
    }

    pub fn neighbors(&self, i: usize) -> Result<Vec<usize>, TopologyError> {
        if i >= self.nodes {
            return Err(TopologyError::Index { index: i, nodes: self.nodes });
        }
        Ok((0..self.nodes).filter(|&j| self.adjacency[i * self.nodes + j]).collect())
    }
}

/// Connects `i` and `j` when `d_safe ≤ ‖p_i − p_j‖ ≤ d_cmu` (both ends
/// inclusive). Pass `f64::INFINITY` for an unlimited communication range.
pub fn build_graph(
    positions: &[[f64; 2]],
    d_safe: f64,
    d_cmu: f64,
) -> Result<ConstraintGraph, TopologyError> {
    if !(d_safe <= d_cmu) || d_safe.is_nan() {
        return Err(TopologyError::Config(format!("d_safe ({d_safe}) must not exceed d_cmu ({d_cmu})")));
    }
    if let Some(k) = positions.iter().position(|p| !(p[0].is_finite() && p[1].is_finite())) {
        return Err(TopologyError::Config(format!("position {k} is not finite")));
    }
    let n = positions.len();
    let mut g = ConstraintGraph::empty(n);
    for i in 0..n {
        for j in i + 1..n {
            let d = (positions[i][0] - positions[j][0]).hypot(positions[i][1] - positions[j][1]);
            if d_safe <= d && d <= d_cmu {
                g.insert(i, j);
            }
        }
    }
    Ok(g)
}
