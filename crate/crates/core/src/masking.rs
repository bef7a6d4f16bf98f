//! Frame masks: random span masking for training, the "remove Y every X"
//! evaluation protocol, and linear interpolation across masked runs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pose::PoseSequence;
use crate::rng::Rng;

/// Shortest and longest random span, in frames.
pub const SPAN_RANGE: (usize, usize) = (5, 20);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskError {
    #[error("masking ratio must lie strictly between 0 and 1, got {0}")]
    InvalidRatio(f64),
    #[error("sequence of {0} frames is too short to mask (need at least {1})")]
    TooShort(usize, usize),
    #[error("interval protocol needs 0 < remove < every <= frames, got remove={remove}, every={every}, frames={frames}")]
    InvalidInterval { remove: usize, every: usize, frames: usize },
    #[error("mask is empty")]
    EmptyMask,
    #[error("frame {frame} is out of range for {frames} frames")]
    OutOfRange { frame: usize, frames: usize },
    #[error("mask covers {mask} frames but the sequence has {seq}")]
    LengthMismatch { mask: usize, seq: usize },
    #[error("first and last frames must stay observed")]
    EndpointMasked,
}

/// Sorted set of masked frame indices over `0..total_frames`. The first and
/// last frames are always observed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpec {
    total_frames: usize,
    masked: Vec<usize>,
}

impl MaskSpec {
    pub fn new(total_frames: usize, mut masked: Vec<usize>) -> Result<Self, MaskError> {
        masked.sort_unstable();
        masked.dedup();
        if let Some(&frame) = masked.iter().find(|&&t| t >= total_frames) {
            return Err(MaskError::OutOfRange {
                frame,
                frames: total_frames,
            });
        }
        if masked.first() == Some(&0) || masked.last() == Some(&(total_frames.saturating_sub(1))) {
            return Err(MaskError::EndpointMasked);
        }
        Ok(MaskSpec { total_frames, masked })
    }

    pub fn total_frames(&self) -> usize {
        self.total_frames
    }

    pub fn masked(&self) -> &[usize] {
        &self.masked
    }

    pub fn is_empty(&self) -> bool {
        self.masked.is_empty()
    }

    pub fn is_masked(&self, t: usize) -> bool {
        self.masked.binary_search(&t).is_ok()
    }

    pub fn observed(&self) -> Vec<usize> {
        (0..self.total_frames).filter(|&t| !self.is_masked(t)).collect()
    }

    /// Maximal runs of consecutive masked frames as half-open ranges.
    pub fn runs(&self) -> Vec<(usize, usize)> {
        let mut runs: Vec<(usize, usize)> = Vec::new();
        for &t in &self.masked {
            match runs.last_mut() {
                Some((_, end)) if *end == t => *end = t + 1,
                _ => runs.push((t, t + 1)),
            }
        }
        runs
    }
}

/// Masks contiguous spans (lengths uniform in [`SPAN_RANGE`]) until
/// `⌈ratio·(T−2)⌉` interior frames are masked; the last span is clipped.
/// Each span starts at a uniformly chosen unmasked interior frame and extends
/// forward over unmasked frames.
pub fn random_mask(total_frames: usize, ratio: f64, rng: &mut Rng) -> Result<MaskSpec, MaskError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(MaskError::InvalidRatio(ratio));
    }
    if total_frames < 4 {
        return Err(MaskError::TooShort(total_frames, 4));
    }
    let interior = total_frames - 2;
    let target = (ratio * interior as f64).ceil() as usize;
    let mut masked = vec![false; total_frames];
    let mut count = 0;
    while count < target {
        let free: Vec<usize> = (1..total_frames - 1).filter(|&t| !masked[t]).collect();
        let start = free[rng.below(free.len())];
        let span = rng.range_inclusive(SPAN_RANGE.0, SPAN_RANGE.1);
        let mut t = start;
        while t < total_frames - 1 && !masked[t] && t < start + span && count < target {
            masked[t] = true;
            count += 1;
            t += 1;
        }
    }
    let frames = (0..total_frames).filter(|&t| masked[t]).collect();
    MaskSpec::new(total_frames, frames)
}

/// "Remove `remove` frames every `every` frames": within each block of
/// `every` frames the last `remove` are masked. The final frame is never
/// masked.
pub fn interval_mask(total_frames: usize, remove: usize, every: usize) -> Result<MaskSpec, MaskError> {
    if remove == 0 || remove >= every || every > total_frames {
        return Err(MaskError::InvalidInterval {
            remove,
            every,
            frames: total_frames,
        });
    }
    let masked: Vec<usize> = (0..total_frames - 1).filter(|t| t % every >= every - remove).collect();
    if masked.is_empty() {
        return Err(MaskError::EmptyMask);
    }
    MaskSpec::new(total_frames, masked)
}

/// Replaces each masked run by the straight line between its observed
/// neighbours; observed frames are copied unchanged.
pub fn interp_fill(x: &PoseSequence, mask: &MaskSpec) -> Result<PoseSequence, MaskError> {
    if mask.total_frames() != x.frames() {
        return Err(MaskError::LengthMismatch {
            mask: mask.total_frames(),
            seq: x.frames(),
        });
    }
    let mut out = x.clone();
    for (start, end) in mask.runs() {
        let (a, b) = (start - 1, end);
        let span = (b - a) as f64;
        for t in start..end {
            let w = (t - a) as f64 / span;
            for v in 0..x.joints() {
                let (pa, pb) = (x.get(a, v), x.get(b, v));
                out.set(t, v, std::array::from_fn(|k| pa[k] + w * (pb[k] - pa[k])));
            }
        }
    }
    Ok(out)
}

/// Sets masked frames to zero instead of interpolating.
pub fn zero_fill(x: &PoseSequence, mask: &MaskSpec) -> Result<PoseSequence, MaskError> {
    if mask.total_frames() != x.frames() {
        return Err(MaskError::LengthMismatch {
            mask: mask.total_frames(),
            seq: x.frames(),
        });
    }
    let mut out = x.clone();
    for &t in mask.masked() {
        for v in 0..x.joints() {
            out.set(t, v, [0.0; 3]);
        }
    }
    Ok(out)
}

/// How masked frames are filled before encoding the training condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FillMode {
    #[default]
    Interpolate,
    Zero,
}

impl FillMode {
    pub fn apply(self, x: &PoseSequence, mask: &MaskSpec) -> Result<PoseSequence, MaskError> {
        match self {
            FillMode::Interpolate => interp_fill(x, mask),
            FillMode::Zero => zero_fill(x, mask),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_seq(values: &[f64]) -> PoseSequence {
        let frames: Vec<Vec<[f64; 3]>> = values.iter().map(|&x| vec![[x, 2.0 * x, -x]]).collect();
        PoseSequence::from_frames(&frames).unwrap()
    }

    #[test]
    fn interval_protocol_examples() {
        let m = interval_mask(60, 20, 30).unwrap();
        let want: Vec<usize> = (10..30).chain(40..59).collect();
        assert_eq!(m.masked(), &want[..]);
        assert_eq!(m.masked().len(), 39);
        assert_eq!(interval_mask(30, 10, 30).unwrap().masked(), &(20..29).collect::<Vec<_>>()[..]);
    }

    #[test]
    fn interval_degenerate_cases() {
        assert!(matches!(interval_mask(30, 0, 30), Err(MaskError::InvalidInterval { .. })));
        assert!(matches!(interval_mask(30, 30, 30), Err(MaskError::InvalidInterval { .. })));
        assert!(matches!(interval_mask(20, 5, 30), Err(MaskError::InvalidInterval { .. })));
        // the only candidate is the final frame, which stays observed
        assert_eq!(interval_mask(30, 1, 30), Err(MaskError::EmptyMask));
    }

    #[test]
    fn random_mask_counts() {
        let mut rng = Rng::new(11);
        assert_eq!(random_mask(62, 0.5, &mut rng).unwrap().masked().len(), 30);
        let small = random_mask(10, 1e-3, &mut rng).unwrap();
        assert_eq!(small.masked().len(), 1);
        assert!(!small.is_masked(0) && !small.is_masked(9));
    }

    #[test]
    fn random_mask_is_seeded() {
        let a = random_mask(60, 0.5, &mut Rng::new(5)).unwrap();
        let b = random_mask(60, 0.5, &mut Rng::new(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_mask_rejects_bad_arguments() {
        let mut rng = Rng::new(0);
        assert!(matches!(random_mask(60, 0.0, &mut rng), Err(MaskError::InvalidRatio(_))));
        assert!(matches!(random_mask(60, 1.0, &mut rng), Err(MaskError::InvalidRatio(_))));
        assert!(matches!(random_mask(3, 0.5, &mut rng), Err(MaskError::TooShort(3, 4))));
    }

    #[test]
    fn interpolation_fills_linearly() {
        let x = scalar_seq(&[0.0, 9.0, 9.0, 9.0, 9.0, 1.0]);
        let m = MaskSpec::new(6, vec![1, 2, 3, 4]).unwrap();
        let y = interp_fill(&x, &m).unwrap();
        let got: Vec<f64> = (0..6).map(|t| y.get(t, 0)[0]).collect();
        let want = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
        assert!((y.get(2, 0)[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn interpolation_of_constant_is_identity() {
        let x = scalar_seq(&[3.0; 7]);
        let m = MaskSpec::new(7, vec![1, 2, 4, 5]).unwrap();
        assert_eq!(interp_fill(&x, &m).unwrap(), x);
    }

    #[test]
    fn zero_fill_clears_masked_frames() {
        let x = scalar_seq(&[1.0, 2.0, 3.0]);
        let m = MaskSpec::new(3, vec![1]).unwrap();
        let y = FillMode::Zero.apply(&x, &m).unwrap();
        assert_eq!(y.get(1, 0), [0.0; 3]);
        assert_eq!(y.get(2, 0), x.get(2, 0));
    }

    #[test]
    fn mask_spec_invariants() {
        assert_eq!(MaskSpec::new(5, vec![0]), Err(MaskError::EndpointMasked));
        assert_eq!(MaskSpec::new(5, vec![4]), Err(MaskError::EndpointMasked));
        assert!(matches!(MaskSpec::new(5, vec![7]), Err(MaskError::OutOfRange { .. })));
        let m = MaskSpec::new(8, vec![5, 1, 2, 6]).unwrap();
        assert_eq!(m.runs(), vec![(1, 3), (5, 7)]);
        assert_eq!(m.observed(), vec![0, 3, 4, 7]);
    }
}
