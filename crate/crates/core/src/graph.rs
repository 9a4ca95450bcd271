//! Radius-limited communication graph and the shift operator built on it.

use std::collections::BTreeSet;
use std::ops::{Add, Mul, Sub};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Planar vector in meters (positions) or meters per second (velocities).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

pub type Position = Vec2;

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Scales the vector down so its norm does not exceed `max`.
    pub fn clamp_norm(self, max: f64) -> Self {
        let n = self.norm();
        if n > max && n > 0.0 {
            self * (max / n)
        } else {
            self
        }
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("position of robot {index} is not finite")]
    NonFinitePosition { index: usize },
    #[error("communication radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error("robot index {index} out of range for {n} robots")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("self-edge on robot {0}")]
    SelfEdge(usize),
}

/// Undirected communication graph over robot indices `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    adjacency: Vec<Vec<usize>>,
}

impl CommGraph {
    /// Connects every pair of robots whose distance is at most `radius`.
    pub fn build(positions: &[Position], radius: f64) -> Result<Self, GraphError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(GraphError::InvalidRadius(radius));
        }
        if let Some(index) = positions.iter().position(|p| !p.is_finite()) {
            return Err(GraphError::NonFinitePosition { index });
        }
        let n = positions.len();
        let r2 = radius * radius;
        let mut adjacency = vec![Vec::new(); n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = positions[i] - positions[j];
                if d.x * d.x + d.y * d.y <= r2 {
                    adjacency[i].push(j);
                    adjacency[j].push(i);
                }
            }
        }
        for row in &mut adjacency {
            row.sort_unstable();
        }
        Ok(Self { adjacency })
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut sets = vec![BTreeSet::new(); n];
        for &(i, j) in edges {
            for index in [i, j] {
                if index >= n {
                    return Err(GraphError::IndexOutOfRange { index, n });
                }
            }
            if i == j {
                return Err(GraphError::SelfEdge(i));
            }
            sets[i].insert(j);
            sets[j].insert(i);
        }
        Ok(Self {
            adjacency: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    /// Neighbors of `i` in ascending index order.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency
            .get(i)
            .is_some_and(|row| row.binary_search(&j).is_ok())
    }

    /// Edges as `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
    }

    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }

    /// Robots reachable from `i` in at most `k` hops, `i` included.
    pub fn k_hop_neighbors(&self, i: usize, k: usize) -> Result<BTreeSet<usize>, GraphError> {
        let n = self.len();
        if i >= n {
            return Err(GraphError::IndexOutOfRange { index: i, n });
        }
        let mut reached = BTreeSet::from([i]);
        let mut frontier = vec![i];
        for _ in 0..k {
            let mut next = Vec::new();
            for &u in &frontier {
                for &v in self.neighbors(u) {
                    if reached.insert(v) {
                        next.push(v);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        Ok(reached)
    }
}

/// Weighting applied to the adjacency structure when forming the shift operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Adjacency,
    Mean,
    #[default]
    Symmetric,
}

impl Normalization {
    pub const ALL: [Normalization; 3] = [Self::Adjacency, Self::Mean, Self::Symmetric];
}

/// Sparse shift operator supported on the graph edges, zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeOperator {
    rows: Vec<Vec<(usize, f64)>>,
    normalization: Normalization,
}

impl ShapeOperator {
    pub fn new(graph: &CommGraph, normalization: Normalization) -> Self {
        let rows = (0..graph.len())
            .map(|i| {
                let deg_i = graph.degree(i) as f64;
                graph
                    .neighbors(i)
                    .iter()
                    .map(|&j| {
                        let w = match normalization {
                            Normalization::Adjacency => 1.0,
                            Normalization::Mean => 1.0 / deg_i,
                            Normalization::Symmetric => {
                                1.0 / (deg_i * graph.degree(j) as f64).sqrt()
                            }
                        };
                        (j, w)
                    })
                    .collect()
            })
            .collect();
        Self {
            rows,
            normalization,
        }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    /// Nonzero entries of row `i` as `(column, weight)`, ascending column.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .iter()
            .find(|(c, _)| *c == j)
            .map_or(0.0, |&(_, w)| w)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                m[(i, j)] = w;
            }
        }
        m
    }
}
