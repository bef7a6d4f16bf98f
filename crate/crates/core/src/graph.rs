//! Skeleton topology and the three partitioned, normalized adjacency
//! matrices consumed by the spatial graph convolution.
//!
//! Joint neighbourhoods are split by hop distance to the center joint: an
//! entry `i → j` is *root* when both joints sit at the same distance,
//! *centripetal* when `j` is closer to the center and *centrifugal* when it is
//! farther. Each partition is normalized as `D^{-1/2} (Ã + I) D^{-1/2}` with
//! `D_ii = Σ_j (Ã + I)_ij`. Temporal edges are not materialized; they are
//! realized by the temporal convolutions over the frame axis.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("skeleton needs at least one joint")]
    Empty,
    #[error("edge ({0}, {1}) references a joint outside 0..{2}")]
    InvalidJoint(usize, usize, usize),
    #[error("self loop on joint {0}")]
    SelfLoop(usize),
    #[error("center joint {0} is outside 0..{1}")]
    InvalidCenter(usize, usize),
    #[error("skeleton is disconnected: joint {0} is unreachable from the center")]
    Disconnected(usize),
    #[error("cannot read skeleton: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed skeleton json at line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },
}

/// Undirected, connected joint graph with a designated center joint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonGraph {
    num_joints: usize,
    /// Sorted, deduplicated pairs with `i < j`.
    edges: Vec<(usize, usize)>,
    center: usize,
}

#[derive(Serialize, Deserialize)]
struct SkeletonJson {
    num_joints: usize,
    edges: Vec<[usize; 2]>,
    center: usize,
}

impl SkeletonGraph {
    pub fn new(num_joints: usize, edges: &[(usize, usize)], center: usize) -> Result<Self, GraphError> {
        if num_joints == 0 {
            return Err(GraphError::Empty);
        }
        if center >= num_joints {
            return Err(GraphError::InvalidCenter(center, num_joints));
        }
        let mut norm = Vec::with_capacity(edges.len());
        for &(i, j) in edges {
            if i >= num_joints || j >= num_joints {
                return Err(GraphError::InvalidJoint(i, j, num_joints));
            }
            if i == j {
                return Err(GraphError::SelfLoop(i));
            }
            norm.push((i.min(j), i.max(j)));
        }
        norm.sort_unstable();
        norm.dedup();
        let g = SkeletonGraph {
            num_joints,
            edges: norm,
            center,
        };
        if let Some(j) = g.hop_distances().iter().position(Option::is_none) {
            return Err(GraphError::Disconnected(j));
        }
        Ok(g)
    }

    /// The 12-joint synthetic skeleton: a pelvis–spine–neck–head torso chain
    /// with two shoulder–elbow–wrist arms hanging off the neck, each ending in
    /// a hand tip. The spine is the center joint.
    pub fn default_skeleton() -> Self {
        use joints::*;
        let edges = [
            (PELVIS, SPINE),
            (SPINE, NECK),
            (NECK, HEAD),
            (NECK, L_SHOULDER),
            (L_SHOULDER, L_ELBOW),
            (L_ELBOW, L_WRIST),
            (L_WRIST, L_HAND),
            (NECK, R_SHOULDER),
            (R_SHOULDER, R_ELBOW),
            (R_ELBOW, R_WRIST),
            (R_WRIST, R_HAND),
        ];
        SkeletonGraph::new(12, &edges, SPINE).expect("default skeleton is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let raw: SkeletonJson = serde_json::from_str(text).map_err(|e| GraphError::Parse {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })?;
        let edges: Vec<(usize, usize)> = raw.edges.iter().map(|e| (e[0], e[1])).collect();
        SkeletonGraph::new(raw.num_joints, &edges, raw.center)
    }

    pub fn load(path: &Path) -> Result<Self, GraphError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let raw = SkeletonJson {
            num_joints: self.num_joints,
            edges: self.edges.iter().map(|&(i, j)| [i, j]).collect(),
            center: self.center,
        };
        serde_json::to_string(&raw).expect("skeleton serializes")
    }

    pub fn num_joints(&self) -> usize {
        self.num_joints
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn center(&self) -> usize {
        self.center
    }

    pub fn neighbors(&self, joint: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(i, j)| match (i == joint, j == joint) {
                (true, _) => Some(j),
                (_, true) => Some(i),
                _ => None,
            })
            .collect()
    }

    pub fn is_tree(&self) -> bool {
        self.edges.len() + 1 == self.num_joints
    }

    /// BFS hop distance of every joint to the center; `None` if unreachable.
    pub fn hop_distances(&self) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.num_joints];
        dist[self.center] = Some(0);
        let mut queue = VecDeque::from([self.center]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for w in self.neighbors(u) {
                if dist[w].is_none() {
                    dist[w] = Some(du + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }
}

/// Joint indices of [`SkeletonGraph::default_skeleton`].
pub mod joints {
    pub const PELVIS: usize = 0;
    pub const SPINE: usize = 1;
    pub const NECK: usize = 2;
    pub const HEAD: usize = 3;
    pub const L_SHOULDER: usize = 4;
    pub const L_ELBOW: usize = 5;
    pub const L_WRIST: usize = 6;
    pub const L_HAND: usize = 7;
    pub const R_SHOULDER: usize = 8;
    pub const R_ELBOW: usize = 9;
    pub const R_WRIST: usize = 10;
    pub const R_HAND: usize = 11;
}

/// Dense row-major `V x V` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub size: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(size: usize) -> Self {
        Matrix {
            size,
            data: vec![0.0; size * size],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.size + j]
    }

    pub fn set(&mut self, i: usize, j: usize, x: f64) {
        self.data[i * self.size + j] = x;
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.size).all(|i| (0..self.size).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }
}

/// Index of each partition in [`PartitionedAdjacency::matrices`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Root = 0,
    Centripetal = 1,
    Centrifugal = 2,
}

/// Splits every directed entry `i → j` of the skeleton into root,
/// centripetal and centrifugal adjacency (diagonals left empty).
pub fn partition(g: &SkeletonGraph) -> [Matrix; 3] {
    let v = g.num_joints();
    let dist: Vec<usize> = g.hop_distances().into_iter().map(|d| d.expect("connected")).collect();
    let mut parts = [Matrix::zeros(v), Matrix::zeros(v), Matrix::zeros(v)];
    for &(a, b) in g.edges() {
        for (i, j) in [(a, b), (b, a)] {
            let k = match dist[j].cmp(&dist[i]) {
                std::cmp::Ordering::Equal => Partition::Root,
                std::cmp::Ordering::Less => Partition::Centripetal,
                std::cmp::Ordering::Greater => Partition::Centrifugal,
            };
            parts[k as usize].set(i, j, 1.0);
        }
    }
    parts
}

/// `D^{-1/2} (Ã + I) D^{-1/2}` with `D_ii = Σ_j (Ã + I)_ij`.
pub fn normalize(a: &Matrix) -> Matrix {
    let v = a.size;
    let mut with_self = a.clone();
    for i in 0..v {
        with_self.set(i, i, a.get(i, i) + 1.0);
    }
    let inv_sqrt: Vec<f64> = (0..v)
        .map(|i| 1.0 / (0..v).map(|j| with_self.get(i, j)).sum::<f64>().sqrt())
        .collect();
    let mut out = Matrix::zeros(v);
    for i in 0..v {
        for j in 0..v {
            out.set(i, j, inv_sqrt[i] * with_self.get(i, j) * inv_sqrt[j]);
        }
    }
    out
}

/// The three normalized partition matrices, plus tensor copies for the
/// graph convolution.
#[derive(Debug, Clone)]
pub struct PartitionedAdjacency {
    pub matrices: [Matrix; 3],
    tensors: [Tensor; 3],
}

impl PartitionedAdjacency {
    pub fn new(g: &SkeletonGraph) -> Self {
        Self::from_matrices(partition(g).map(|m| normalize(&m)))
    }

    pub fn from_matrices(matrices: [Matrix; 3]) -> Self {
        let tensors = matrices
            .clone()
            .map(|m| Tensor::new(m.data, &[m.size, m.size]).expect("adjacency is finite"));
        PartitionedAdjacency { matrices, tensors }
    }

    pub fn num_joints(&self) -> usize {
        self.matrices[0].size
    }

    pub fn tensors(&self) -> &[Tensor; 3] {
        &self.tensors
    }
}
