//! Synthetic forward-kinematics motion, the pose-sequence JSON format and
//! model checkpoints.
//!
//! A checkpoint is a JSON manifest (schema version, metadata, and an ordered
//! list of `{name, shape, offset, len}` entries) plus a sidecar blob of
//! little-endian `f64` values next to it.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{joints, SkeletonGraph};
use crate::nn::Module;
use crate::pose::PoseSequence;
use crate::rng::Rng;

type Mat3 = [[f64; 3]; 3];

fn matmul3(a: &Mat3, b: &Mat3) -> Mat3 {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

fn apply3(a: &Mat3, v: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| (0..3).map(|k| a[i][k] * v[k]).sum())
}

/// `Rz(z) · Rx(x)`.
fn rotation(z: f64, x: f64) -> Mat3 {
    let (sz, cz) = z.sin_cos();
    let (sx, cx) = x.sin_cos();
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    matmul3(&rz, &rx)
}

/// Joints in BFS order from the center, each with its parent.
fn tree_order(graph: &SkeletonGraph) -> Vec<(usize, Option<usize>)> {
    let mut seen = vec![false; graph.num_joints()];
    let mut order = vec![(graph.center(), None)];
    seen[graph.center()] = true;
    let mut i = 0;
    while i < order.len() {
        let u = order[i].0;
        for w in graph.neighbors(u) {
            if !seen[w] {
                seen[w] = true;
                order.push((w, Some(u)));
            }
        }
        i += 1;
    }
    order
}

/// Rest direction and nominal length of the bone from each joint's parent.
fn rest_bones(graph: &SkeletonGraph) -> Vec<([f64; 3], f64)> {
    use joints::*;
    if *graph == SkeletonGraph::default_skeleton() {
        let mut bones = vec![([0.0; 3], 0.0); 12];
        bones[PELVIS] = ([0.0, -1.0, 0.0], 0.25);
        bones[NECK] = ([0.0, 1.0, 0.0], 0.3);
        bones[HEAD] = ([0.0, 1.0, 0.0], 0.2);
        for (side, sh, el, wr, ha) in [(1.0, L_SHOULDER, L_ELBOW, L_WRIST, L_HAND), (-1.0, R_SHOULDER, R_ELBOW, R_WRIST, R_HAND)] {
            bones[sh] = ([side, 0.0, 0.0], 0.18);
            bones[el] = ([0.0, -1.0, 0.0], 0.3);
            bones[wr] = ([0.0, -1.0, 0.0], 0.25);
            bones[ha] = ([0.0, -1.0, 0.0], 0.08);
        }
        return bones;
    }
    (0..graph.num_joints())
        .map(|j| {
            let mut rng = Rng::stream(0, j as u64);
            let d = [rng.normal(), rng.normal(), rng.normal()];
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().max(1e-12);
            ([d[0] / n, d[1] / n, d[2] / n], 0.25)
        })
        .collect()
}

/// Sampling ranges for [`MotionParams::sample`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionRanges {
    /// Cycles per frame.
    pub frequency: (f64, f64),
    /// Radians.
    pub amplitude: (f64, f64),
    /// Constant angle offset magnitude, radians.
    pub offset: f64,
    /// Multiplicative jitter applied to each nominal bone length.
    pub bone_jitter: f64,
    pub noise: f64,
}

impl Default for MotionRanges {
    fn default() -> Self {
        MotionRanges {
            frequency: (0.01, 0.04),
            amplitude: (0.2, 1.0),
            offset: 0.4,
            bone_jitter: 0.1,
            noise: 0.0,
        }
    }
}

/// Per-sequence motion: every joint's local rotation is
/// `Rz(θ_z(t)) · Rx(θ_x(t))` with `θ(t) = c + a·sin(2π f t + φ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionParams {
    pub amplitudes: Vec<[f64; 2]>,
    pub frequencies: Vec<[f64; 2]>,
    pub phases: Vec<[f64; 2]>,
    pub offsets: Vec<[f64; 2]>,
    /// Length of the bone from each joint to its parent (0 at the root).
    pub bone_lengths: Vec<f64>,
    /// Standard deviation of Gaussian noise added to every coordinate.
    pub noise: f64,
}

impl MotionParams {
    pub fn sample(graph: &SkeletonGraph, ranges: &MotionRanges, rng: &mut Rng) -> Self {
        let v = graph.num_joints();
        let mut pair = |lo: f64, hi: f64| [rng.uniform_range(lo, hi), rng.uniform_range(lo, hi)];
        let amplitudes = (0..v).map(|_| pair(ranges.amplitude.0, ranges.amplitude.1)).collect();
        let frequencies = (0..v).map(|_| pair(ranges.frequency.0, ranges.frequency.1)).collect();
        let phases = (0..v).map(|_| pair(0.0, 2.0 * PI)).collect();
        let offsets = (0..v).map(|_| pair(-ranges.offset, ranges.offset)).collect();
        let rest = rest_bones(graph);
        let bone_lengths = tree_order(graph)
            .into_iter()
            .fold(vec![0.0; v], |mut lens, (j, parent)| {
                if parent.is_some() {
                    lens[j] = rest[j].1 * (1.0 + rng.uniform_range(-ranges.bone_jitter, ranges.bone_jitter));
                }
                lens
            });
        MotionParams {
            amplitudes,
            frequencies,
            phases,
            offsets,
            bone_lengths,
            noise: ranges.noise,
        }
    }

    pub fn validate(&self, graph: &SkeletonGraph) -> Result<()> {
        let v = graph.num_joints();
        let sizes = [
            self.amplitudes.len(),
            self.frequencies.len(),
            self.phases.len(),
            self.offsets.len(),
            self.bone_lengths.len(),
        ];
        if sizes.iter().any(|&n| n != v) {
            return Err(Error::JointMismatch {
                expected: v,
                found: sizes.into_iter().find(|&n| n != v).unwrap(),
            });
        }
        if self.frequencies.iter().flatten().any(|&f| !(f > 0.0 && f <= 0.1)) {
            return Err(Error::Config("motion frequencies must lie in (0, 0.1]".into()));
        }
        if self.amplitudes.iter().flatten().any(|a| a.abs() > FRAC_PI_2) {
            return Err(Error::Config("motion amplitudes must not exceed pi/2".into()));
        }
        for (j, parent) in tree_order(graph) {
            if parent.is_some() && !(self.bone_lengths[j] > 0.0) {
                return Err(Error::Config(format!("bone length of joint {j} must be positive")));
            }
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Config("noise level must be non-negative".into()));
        }
        Ok(())
    }

    fn angle(&self, j: usize, axis: usize, t: usize) -> f64 {
        let phase = 2.0 * PI * self.frequencies[j][axis] * t as f64 + self.phases[j][axis];
        self.offsets[j][axis] + self.amplitudes[j][axis] * phase.sin()
    }
}

/// Forward kinematics from the center joint, which stays at the origin.
pub fn forward_kinematics(graph: &SkeletonGraph, params: &MotionParams, frames: usize, rng: &mut Rng) -> Result<PoseSequence> {
    if !graph.is_tree() {
        return Err(Error::Invalid("forward kinematics needs a tree-shaped skeleton".into()));
    }
    params.validate(graph)?;
    let order = tree_order(graph);
    let rest = rest_bones(graph);
    let v = graph.num_joints();
    let mut seq = PoseSequence::zeros(frames, v);
    let mut global = vec![[[0.0; 3]; 3]; v];
    let mut pos = vec![[0.0; 3]; v];
    for t in 0..frames {
        for &(j, parent) in &order {
            let local = rotation(params.angle(j, 0, t), params.angle(j, 1, t));
            match parent {
                None => {
                    pos[j] = [0.0; 3];
                    global[j] = local;
                }
                Some(p) => {
                    let bone = rest[j].0.map(|d| d * params.bone_lengths[j]);
                    let off = apply3(&global[p], bone);
                    pos[j] = std::array::from_fn(|a| pos[p][a] + off[a]);
                    global[j] = matmul3(&global[p], &local);
                }
            }
        }
        for (j, p) in pos.iter().enumerate() {
            seq.set(t, j, *p);
        }
    }
    if params.noise > 0.0 {
        let noise = params.noise;
        seq = seq.map_coords(|_, x| x + noise * rng.normal());
    }
    Ok(seq)
}

/// `n` sequences of `frames` frames with independently sampled motion.
pub fn gen_dataset(n: usize, frames: usize, graph: &SkeletonGraph, rng: &mut Rng) -> Result<Vec<PoseSequence>> {
    gen_dataset_with(n, frames, graph, &MotionRanges::default(), rng)
}

pub fn gen_dataset_with(
    n: usize,
    frames: usize,
    graph: &SkeletonGraph,
    ranges: &MotionRanges,
    rng: &mut Rng,
) -> Result<Vec<PoseSequence>> {
    if n == 0 || frames == 0 {
        return Err(Error::Config("dataset size and length must be at least 1".into()));
    }
    (0..n)
        .map(|_| {
            let params = MotionParams::sample(graph, ranges, rng);
            forward_kinematics(graph, &params, frames, rng)
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct PoseFile {
    num_joints: usize,
    sequences: Vec<SequenceJson>,
}

#[derive(Serialize, Deserialize)]
struct SequenceJson {
    frames: Vec<Vec<[f64; 3]>>,
}

/// Serializes with shortest round-trip float formatting, so parsing the text
/// back reproduces every value exactly.
pub fn poses_to_json(num_joints: usize, seqs: &[PoseSequence]) -> Result<String> {
    if let Some(s) = seqs.iter().find(|s| s.joints() != num_joints) {
        return Err(Error::JointMismatch {
            expected: num_joints,
            found: s.joints(),
        });
    }
    let file = PoseFile {
        num_joints,
        sequences: seqs.iter().map(|s| SequenceJson { frames: s.to_frames() }).collect(),
    };
    Ok(serde_json::to_string(&file).expect("pose data serializes"))
}

/// Returns the declared joint count and the sequences.
pub fn poses_from_json(text: &str) -> Result<(usize, Vec<PoseSequence>)> {
    let file: PoseFile = serde_json::from_str(text).map_err(|e| Error::parse("pose file", &e))?;
    let mut seqs = Vec::with_capacity(file.sequences.len());
    for (i, s) in file.sequences.iter().enumerate() {
        if let Some(f) = s.frames.iter().find(|f| f.len() != file.num_joints) {
            return Err(Error::JointMismatch {
                expected: file.num_joints,
                found: f.len(),
            });
        }
        let seq = PoseSequence::from_frames(&s.frames).map_err(|e| Error::Invalid(format!("sequence {i}: {e}")))?;
        seqs.push(seq);
    }
    Ok((file.num_joints, seqs))
}

pub fn save_poses(path: &Path, num_joints: usize, seqs: &[PoseSequence]) -> Result<()> {
    fs::write(path, poses_to_json(num_joints, seqs)?).map_err(|e| Error::io(path, e))
}

/// Loads a pose file, checking its joint count against `skeleton` if given.
pub fn load_poses(path: &Path, skeleton: Option<&SkeletonGraph>) -> Result<Vec<PoseSequence>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (v, seqs) = poses_from_json(&text)?;
    match skeleton {
        Some(g) if g.num_joints() != v => Err(Error::JointMismatch {
            expected: g.num_joints(),
            found: v,
        }),
        _ => Ok(seqs),
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub metadata: serde_json::Value,
    pub tensors: Vec<NamedArray>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    metadata: serde_json::Value,
    blob: String,
    tensors: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

impl Checkpoint {
    /// Snapshots every named tensor of each `(prefix, module)` pair.
    pub fn capture(modules: &[(&str, &dyn Module)], metadata: serde_json::Value) -> Self {
        let mut named = Vec::new();
        for (prefix, m) in modules {
            m.named_tensors(prefix, &mut named);
        }
        let tensors = named
            .into_iter()
            .map(|(name, t)| NamedArray {
                name,
                shape: t.shape().to_vec(),
                data: t.to_vec(),
            })
            .collect();
        Checkpoint { metadata, tensors }
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Copies stored values into every named tensor of `module`.
    pub fn restore(&self, prefix: &str, module: &dyn Module) -> Result<()> {
        let index: BTreeMap<&str, &NamedArray> = self.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let mut named = Vec::new();
        module.named_tensors(prefix, &mut named);
        for (name, t) in named {
            let stored = index.get(name.as_str()).ok_or_else(|| Error::MissingTensor(name.clone()))?;
            if stored.data.len() != t.numel() || stored.shape != t.shape() {
                return Err(Error::SizeMismatch {
                    name,
                    expected: t.numel(),
                    found: stored.data.len(),
                });
            }
            t.assign(&stored.data)?;
        }
        Ok(())
    }

    /// Manifest text and blob bytes; `blob_name` is recorded in the manifest.
    pub fn encode(&self, blob_name: &str) -> (String, Vec<u8>) {
        let mut blob = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for t in &self.tensors {
            entries.push(ManifestEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                offset,
                len: t.data.len(),
            });
            offset += t.data.len();
            t.data.iter().for_each(|x| blob.extend_from_slice(&x.to_le_bytes()));
        }
        let manifest = Manifest {
            schema_version: CHECKPOINT_VERSION,
            metadata: self.metadata.clone(),
            blob: blob_name.to_string(),
            tensors: entries,
        };
        (serde_json::to_string_pretty(&manifest).expect("manifest serializes"), blob)
    }

    /// Parses a manifest; `read_blob` resolves the blob name it references.
    pub fn decode(manifest: &str, read_blob: impl FnOnce(&str) -> Result<Vec<u8>>) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(manifest).map_err(|e| Error::parse("checkpoint manifest", &e))?;
        let version = raw.get("schema_version").and_then(serde_json::Value::as_u64);
        if version != Some(CHECKPOINT_VERSION as u64) {
            return Err(Error::VersionMismatch {
                found: version.map_or(0, |v| v as u32),
                expected: CHECKPOINT_VERSION,
            });
        }
        let m: Manifest = serde_json::from_value(raw).map_err(|e| Error::Parse {
            what: "checkpoint manifest",
            line: 0,
            column: 0,
            msg: e.to_string(),
        })?;
        let blob = read_blob(&m.blob)?;
        if blob.len() % 8 != 0 {
            return Err(Error::SizeMismatch {
                name: m.blob,
                expected: blob.len().div_ceil(8) * 8,
                found: blob.len(),
            });
        }
        let values: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let needed: usize = m.tensors.iter().map(|e| e.offset + e.len).max().unwrap_or(0);
        if values.len() < needed {
            return Err(Error::SizeMismatch {
                name: m.blob,
                expected: needed * 8,
                found: blob.len(),
            });
        }
        let mut tensors = Vec::with_capacity(m.tensors.len());
        for e in m.tensors {
            if e.shape.iter().product::<usize>() != e.len {
                return Err(Error::SizeMismatch {
                    name: e.name,
                    expected: e.shape.iter().product(),
                    found: e.len,
                });
            }
            tensors.push(NamedArray {
                data: values[e.offset..e.offset + e.len].to_vec(),
                name: e.name,
                shape: e.shape,
            });
        }
        Ok(Checkpoint {
            metadata: m.metadata,
            tensors,
        })
    }
}

/// Sidecar path: the manifest path with its extension replaced by `bin`.
pub fn blob_path(manifest: &Path) -> Result<PathBuf> {
    let blob = manifest.with_extension("bin");
    if blob == manifest {
        return Err(Error::Invalid(format!("checkpoint manifest {} must not end in .bin", manifest.display())));
    }
    Ok(blob)
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let blob = blob_path(path)?;
    let name = blob.file_name().unwrap().to_string_lossy().into_owned();
    let (manifest, bytes) = ckpt.encode(&name);
    fs::write(&blob, bytes).map_err(|e| Error::io(&blob, e))?;
    fs::write(path, manifest).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let manifest = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dir = path.parent().unwrap_or(Path::new(""));
    Checkpoint::decode(&manifest, |name| {
        let blob = dir.join(name);
        fs::read(&blob).map_err(|e| Error::io(&blob, e))
    })
}
