//! DTW and masked-frame MPJPE, and the model-vs-interpolation comparison.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::diffusion::InfillModel;
use crate::error::{Error, Result};
use crate::masking::{interp_fill, interval_mask, random_mask, MaskSpec};
use crate::pose::{dist, PoseSequence};
use crate::rng::Rng;

/// Mean Euclidean distance over joints between frame `ta` of `a` and `tb` of `b`.
pub fn frame_cost(a: &PoseSequence, ta: usize, b: &PoseSequence, tb: usize) -> f64 {
    let v = a.joints();
    (0..v).map(|j| dist(a.get(ta, j), b.get(tb, j))).sum::<f64>() / v as f64
}

/// Dynamic time warping with steps `(1,0)`, `(0,1)`, `(1,1)`; the accumulated
/// cost is divided by `T_a + T_b`.
pub fn dtw(a: &PoseSequence, b: &PoseSequence) -> Result<f64> {
    if a.joints() != b.joints() {
        return Err(Error::JointMismatch {
            expected: a.joints(),
            found: b.joints(),
        });
    }
    let (n, m) = (a.frames(), b.frames());
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for i in 1..=n {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j].min(cur[j - 1]).min(prev[j - 1]);
            cur[j] = frame_cost(a, i - 1, b, j - 1) + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m] / (n + m) as f64)
}

/// Mean Euclidean joint error over the masked frames.
pub fn mpjpe_masked(gen: &PoseSequence, gt: &PoseSequence, mask: &MaskSpec) -> Result<f64> {
    if (gen.frames(), gen.joints()) != (gt.frames(), gt.joints()) {
        return Err(Error::Invalid(format!(
            "shape mismatch: {}x{} vs {}x{}",
            gen.frames(),
            gen.joints(),
            gt.frames(),
            gt.joints()
        )));
    }
    if mask.is_empty() {
        return Err(Error::Mask(crate::masking::MaskError::EmptyMask));
    }
    if mask.total_frames() != gt.frames() {
        return Err(Error::Invalid("mask length differs from the sequences".into()));
    }
    let total: f64 = mask.masked().iter().map(|&t| frame_cost(gen, t, gt, t)).sum();
    Ok(total / mask.masked().len() as f64)
}

/// Fraction of pairs where `ours < theirs`, ties counting one half.
pub fn win_rate(ours: &[f64], theirs: &[f64]) -> f64 {
    if ours.is_empty() {
        return 0.5;
    }
    let score: f64 = ours
        .iter()
        .zip(theirs)
        .map(|(a, b)| match a.partial_cmp(b) {
            Some(std::cmp::Ordering::Less) => 1.0,
            Some(std::cmp::Ordering::Equal) => 0.5,
            _ => 0.0,
        })
        .sum();
    score / ours.len() as f64
}

/// Something that fills masked frames. `index` identifies the sequence so
/// stochastic methods can derive per-sequence randomness.
pub trait Inpainter {
    fn name(&self) -> &str;
    fn inpaint(&self, x: &PoseSequence, mask: &MaskSpec, index: usize) -> Result<PoseSequence>;
}

pub struct InterpolationBaseline;

impl Inpainter for InterpolationBaseline {
    fn name(&self) -> &str {
        "interpolation"
    }

    fn inpaint(&self, x: &PoseSequence, mask: &MaskSpec, _index: usize) -> Result<PoseSequence> {
        Ok(interp_fill(x, mask)?)
    }
}

/// Samples with the stream `(seed, index)` for every sequence.
pub struct DiffusionInpainter<'a> {
    pub model: &'a InfillModel,
    pub seed: u64,
}

impl Inpainter for DiffusionInpainter<'_> {
    fn name(&self) -> &str {
        "diffusion"
    }

    fn inpaint(&self, x: &PoseSequence, mask: &MaskSpec, index: usize) -> Result<PoseSequence> {
        let mut rng = Rng::stream(self.seed, index as u64);
        self.model.inpaint(x, mask, &mut rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Protocol {
    /// Remove `remove` frames every `every` frames.
    Interval { remove: usize, every: usize },
    /// Random spans covering `ratio` of the interior, seeded per sequence.
    Random { ratio: f64, seed: u64 },
}

impl Protocol {
    pub fn mask(&self, frames: usize, index: usize) -> Result<MaskSpec> {
        Ok(match *self {
            Protocol::Interval { remove, every } => interval_mask(frames, remove, every)?,
            Protocol::Random { ratio, seed } => random_mask(frames, ratio, &mut Rng::stream(seed, index as u64))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceResult {
    pub index: usize,
    pub frames: usize,
    pub masked_frames: usize,
    pub dtw: f64,
    pub mpjpe_masked: f64,
    pub baseline_dtw: f64,
    pub baseline_mpjpe_masked: f64,
    /// Observed frames of the model output equal the input bit for bit.
    pub observed_exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub baseline: String,
    pub protocol: Protocol,
    pub mean_dtw: f64,
    pub mean_mpjpe_masked: f64,
    pub baseline_mean_dtw: f64,
    pub baseline_mean_mpjpe_masked: f64,
    /// Share of sequences where the model's DTW beats the baseline's.
    pub dtw_win_rate: f64,
    pub mpjpe_win_rate: f64,
    pub sequences: Vec<SequenceResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn observed_equal(a: &PoseSequence, b: &PoseSequence, mask: &MaskSpec) -> bool {
    mask.observed()
        .into_iter()
        .all(|t| (0..a.joints()).all(|v| a.get(t, v).map(f64::to_bits) == b.get(t, v).map(f64::to_bits)))
}

/// Masks every test sequence under `protocol`, inpaints it with `model` and
/// `baseline`, and scores both against the ground truth. Masked frames are
/// zeroed before either method sees them.
pub fn evaluate(
    testset: &[PoseSequence],
    model: &dyn Inpainter,
    baseline: &dyn Inpainter,
    protocol: Protocol,
) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(testset.len());
    for (index, gt) in testset.iter().enumerate() {
        let mask = protocol.mask(gt.frames(), index)?;
        let mut input = gt.clone();
        for &t in mask.masked() {
            (0..gt.joints()).for_each(|v| input.set(t, v, [0.0; 3]));
        }
        let ours = model.inpaint(&input, &mask, index)?;
        let theirs = baseline.inpaint(&input, &mask, index)?;
        rows.push(SequenceResult {
            index,
            frames: gt.frames(),
            masked_frames: mask.masked().len(),
            dtw: dtw(&ours, gt)?,
            mpjpe_masked: mpjpe_masked(&ours, gt, &mask)?,
            baseline_dtw: dtw(&theirs, gt)?,
            baseline_mpjpe_masked: mpjpe_masked(&theirs, gt, &mask)?,
            observed_exact: observed_equal(&ours, &input, &mask),
        });
    }
    let col = |f: fn(&SequenceResult) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    Ok(EvalReport {
        model: model.name().to_string(),
        baseline: baseline.name().to_string(),
        protocol,
        mean_dtw: mean(rows.iter().map(|r| r.dtw)),
        mean_mpjpe_masked: mean(rows.iter().map(|r| r.mpjpe_masked)),
        baseline_mean_dtw: mean(rows.iter().map(|r| r.baseline_dtw)),
        baseline_mean_mpjpe_masked: mean(rows.iter().map(|r| r.baseline_mpjpe_masked)),
        dtw_win_rate: win_rate(&col(|r| r.dtw), &col(|r| r.baseline_dtw)),
        mpjpe_win_rate: win_rate(&col(|r| r.mpjpe_masked), &col(|r| r.baseline_mpjpe_masked)),
        sequences: rows,
        config: None,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn all_observed_exact(&self) -> bool {
        self.sequences.iter().all(|r| r.observed_exact)
    }

    /// Aligned plain-text table: one row per sequence, then the means.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let header = ["seq", "masked", "dtw", "mpjpe", "base_dtw", "base_mpjpe"];
        let _ = writeln!(
            out,
            "{:>5} {:>7} {:>10} {:>10} {:>10} {:>10}",
            header[0], header[1], header[2], header[3], header[4], header[5]
        );
        for r in &self.sequences {
            let _ = writeln!(
                out,
                "{:>5} {:>7} {:>10.5} {:>10.5} {:>10.5} {:>10.5}",
                r.index, r.masked_frames, r.dtw, r.mpjpe_masked, r.baseline_dtw, r.baseline_mpjpe_masked
            );
        }
        let _ = writeln!(
            out,
            "{:>5} {:>7} {:>10.5} {:>10.5} {:>10.5} {:>10.5}",
            "mean", "", self.mean_dtw, self.mean_mpjpe_masked, self.baseline_mean_dtw, self.baseline_mean_mpjpe_masked
        );
        let _ = writeln!(
            out,
            "win rate vs {}: dtw {:.3}, mpjpe {:.3}",
            self.baseline, self.dtw_win_rate, self.mpjpe_win_rate
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(values: &[f64]) -> PoseSequence {
        let frames: Vec<Vec<[f64; 3]>> = values.iter().map(|&x| vec![[x, 0.0, 0.0]]).collect();
        PoseSequence::from_frames(&frames).unwrap()
    }

    #[test]
    fn dtw_examples() {
        let a = line(&[0.0, 1.0, 2.0]);
        let b = line(&[0.0, 2.0]);
        assert!((dtw(&a, &b).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(dtw(&a, &a).unwrap(), 0.0);
        assert_eq!(dtw(&a, &b).unwrap(), dtw(&b, &a).unwrap());
        assert!(dtw(&a, &PoseSequence::zeros(2, 2)).is_err());
    }

    #[test]
    fn mpjpe_examples() {
        let gt = line(&[0.0, 1.0, 2.0, 3.0]);
        let mask = MaskSpec::new(4, vec![1, 2]).unwrap();
        assert_eq!(mpjpe_masked(&gt, &gt, &mask).unwrap(), 0.0);
        let shifted = gt.map_coords(|a, x| if a == 1 { x + 0.5 } else { x });
        assert!((mpjpe_masked(&shifted, &gt, &mask).unwrap() - 0.5).abs() < 1e-15);
        let empty = MaskSpec::new(4, vec![]).unwrap();
        assert!(mpjpe_masked(&gt, &gt, &empty).is_err());
    }

    #[test]
    fn win_rate_counts_ties_as_half() {
        assert_eq!(win_rate(&[1.0, 2.0], &[1.0, 2.0]), 0.5);
        assert_eq!(win_rate(&[0.0, 3.0, 1.0, 1.0], &[1.0, 2.0, 1.0, 2.0]), 0.625);
    }

    #[test]
    fn baseline_against_itself() {
        let seqs: Vec<PoseSequence> = (0..3)
            .map(|k| line(&(0..30).map(|t| ((t * (k + 1)) as f64 * 0.3).sin()).collect::<Vec<_>>()))
            .collect();
        let protocol = Protocol::Interval { remove: 5, every: 10 };
        let r = evaluate(&seqs, &InterpolationBaseline, &InterpolationBaseline, protocol).unwrap();
        assert_eq!(r.dtw_win_rate, 0.5);
        assert_eq!(r.mpjpe_win_rate, 0.5);
        assert!(r.all_observed_exact());
        assert_eq!(r.sequences[0].masked_frames, 14);
        assert_eq!(r.to_json(), evaluate(&seqs, &InterpolationBaseline, &InterpolationBaseline, protocol).unwrap().to_json());
        assert!(r.to_table().lines().count() == 6);
    }

    #[test]
    fn perfect_model_scores_zero() {
        struct Oracle(Vec<PoseSequence>);
        impl Inpainter for Oracle {
            fn name(&self) -> &str {
                "oracle"
            }
            fn inpaint(&self, _x: &PoseSequence, _m: &MaskSpec, i: usize) -> Result<PoseSequence> {
                Ok(self.0[i].clone())
            }
        }
        let seqs = vec![line(&[0.0, 5.0, -1.0, 2.0, 2.0, 0.0])];
        let oracle = Oracle(seqs.clone());
        let r = evaluate(&seqs, &oracle, &InterpolationBaseline, Protocol::Interval { remove: 2, every: 3 }).unwrap();
        assert_eq!(r.mean_dtw, 0.0);
        assert_eq!(r.mean_mpjpe_masked, 0.0);
        assert_eq!(r.mpjpe_win_rate, 1.0);
    }
}
