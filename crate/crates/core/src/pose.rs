//! Pose sequences and per-sequence coordinate normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SkeletonGraph;
use crate::tensor::Tensor;

/// 3D joint coordinates laid out as `(3, T, V)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    frames: usize,
    joints: usize,
    data: Vec<f64>,
}

impl PoseSequence {
    pub fn new(frames: usize, joints: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 || joints == 0 {
            return Err(Error::Invalid("a pose sequence needs at least one frame and one joint".into()));
        }
        if data.len() != 3 * frames * joints {
            return Err(Error::Invalid(format!(
                "expected {} coordinates for {frames} frames x {joints} joints, got {}",
                3 * frames * joints,
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid("pose coordinates must be finite".into()));
        }
        Ok(PoseSequence { frames, joints, data })
    }

    pub fn zeros(frames: usize, joints: usize) -> Self {
        PoseSequence {
            frames,
            joints,
            data: vec![0.0; 3 * frames * joints],
        }
    }

    /// From `frames[t][v] = [x, y, z]`; every frame must have the same joint count.
    pub fn from_frames(frames: &[Vec<[f64; 3]>]) -> Result<Self> {
        let joints = frames.first().map_or(0, Vec::len);
        if frames.iter().any(|f| f.len() != joints) {
            return Err(Error::Invalid("frames have differing joint counts".into()));
        }
        let mut seq = PoseSequence::new(frames.len(), joints, vec![0.0; 3 * frames.len() * joints.max(1)])
            .map_err(|_| Error::Invalid("a pose sequence needs at least one frame and one joint".into()))?;
        for (t, frame) in frames.iter().enumerate() {
            for (v, p) in frame.iter().enumerate() {
                seq.set(t, v, *p);
            }
        }
        if seq.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid("pose coordinates must be finite".into()));
        }
        Ok(seq)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn index(&self, axis: usize, t: usize, v: usize) -> usize {
        (axis * self.frames + t) * self.joints + v
    }

    pub fn get(&self, t: usize, v: usize) -> [f64; 3] {
        std::array::from_fn(|a| self.data[self.index(a, t, v)])
    }

    pub fn set(&mut self, t: usize, v: usize, p: [f64; 3]) {
        for (a, x) in p.into_iter().enumerate() {
            let i = self.index(a, t, v);
            self.data[i] = x;
        }
    }

    pub fn frame(&self, t: usize) -> Vec<[f64; 3]> {
        (0..self.joints).map(|v| self.get(t, v)).collect()
    }

    pub fn to_frames(&self) -> Vec<Vec<[f64; 3]>> {
        (0..self.frames).map(|t| self.frame(t)).collect()
    }

    /// Copies frame `src_t` of `src` into frame `t` of `self`.
    pub fn copy_frame_from(&mut self, t: usize, src: &PoseSequence, src_t: usize) {
        for v in 0..self.joints {
            self.set(t, v, src.get(src_t, v));
        }
    }

    /// Frames `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.frames {
            return Err(Error::Invalid(format!("frame range {start}..{end} is outside 0..{}", self.frames)));
        }
        let mut out = PoseSequence::zeros(end - start, self.joints);
        for t in start..end {
            out.copy_frame_from(t - start, self, t);
        }
        Ok(out)
    }

    /// Concatenates sequences along time.
    pub fn concat(parts: &[&PoseSequence]) -> Result<Self> {
        let joints = parts.first().map(|p| p.joints).ok_or(Error::EmptyDataset)?;
        if let Some(p) = parts.iter().find(|p| p.joints != joints) {
            return Err(Error::JointMismatch {
                expected: joints,
                found: p.joints,
            });
        }
        let frames = parts.iter().map(|p| p.frames).sum();
        let mut out = PoseSequence::zeros(frames, joints);
        let mut t = 0;
        for p in parts {
            for s in 0..p.frames {
                out.copy_frame_from(t, p, s);
                t += 1;
            }
        }
        Ok(out)
    }

    /// `(3, T, V)` constant tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.data.clone(), &[3, self.frames, self.joints]).expect("finite pose")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [3, frames, joints] => PoseSequence::new(frames, joints, t.to_vec()),
            _ => Err(Error::Invalid(format!("expected a (3,T,V) tensor, got {:?}", t.shape()))),
        }
    }

    pub fn map_coords(&self, mut f: impl FnMut(usize, f64) -> f64) -> Self {
        let plane = self.frames * self.joints;
        let data = self.data.iter().enumerate().map(|(i, &x)| f(i / plane, x)).collect();
        PoseSequence { data, ..*self }
    }
}

/// Affine map `x ↦ (x − offset) / scale` applied to every joint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub offset: [f64; 3],
    pub scale: f64,
}

impl Normalization {
    pub const IDENTITY: Normalization = Normalization {
        offset: [0.0; 3],
        scale: 1.0,
    };

    /// Centers on the mean position of the skeleton's center joint and
    /// divides by the mean bone length, both taken over `frames`.
    pub fn fit(seq: &PoseSequence, graph: &SkeletonGraph, frames: &[usize]) -> Self {
        if frames.is_empty() {
            return Self::IDENTITY;
        }
        let root = graph.center();
        let mut offset = [0.0; 3];
        let mut bone_sum = 0.0;
        for &t in frames {
            let p = seq.get(t, root);
            (0..3).for_each(|a| offset[a] += p[a]);
            for &(i, j) in graph.edges() {
                bone_sum += dist(seq.get(t, i), seq.get(t, j));
            }
        }
        let n = frames.len() as f64;
        offset.iter_mut().for_each(|x| *x /= n);
        let bones = (graph.edges().len() as f64) * n;
        let mean_bone = if bones > 0.0 { bone_sum / bones } else { 0.0 };
        Normalization {
            offset,
            scale: if mean_bone > 1e-12 { mean_bone } else { 1.0 },
        }
    }

    pub fn fit_all(seq: &PoseSequence, graph: &SkeletonGraph) -> Self {
        let frames: Vec<usize> = (0..seq.frames()).collect();
        Self::fit(seq, graph, &frames)
    }

    pub fn apply(&self, seq: &PoseSequence) -> PoseSequence {
        seq.map_coords(|a, x| (x - self.offset[a]) / self.scale)
    }

    pub fn invert(&self, seq: &PoseSequence) -> PoseSequence {
        seq.map_coords(|a, x| x * self.scale + self.offset[a])
    }
}

pub fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}
