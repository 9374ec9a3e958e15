//! Multi-scale temporal proposals over uniform base segments.
//!
//! A video is cut into `k` equal base segments and every contiguous run of
//! segments is a proposal, giving `k(k+1)/2` candidates. Each proposal is
//! described by the mean of its frames, the mean of the whole video and its
//! normalized start/end position.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::features::FeatureSequence;

/// Half-open run of base segments `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TemporalSpan {
    pub start: usize,
    pub end: usize,
}

impl TemporalSpan {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn start_time(&self, duration: f64, k: usize) -> f64 {
        self.start as f64 * duration / k as f64
    }

    pub fn end_time(&self, duration: f64, k: usize) -> f64 {
        self.end as f64 * duration / k as f64
    }

    /// Frame range covered by this span in a `frames`-long sequence.
    ///
    /// Boundaries are `round(segment * T / k)`; the end is pushed out so the
    /// range holds at least one frame.
    pub fn frame_range(&self, frames: usize, k: usize) -> Result<(usize, usize)> {
        if self.start >= self.end || self.end > k {
            return Err(Error::range("frame_range", format!("span {self:?} with k={k}")));
        }
        let boundary = |s: usize| ((s * frames) as f64 / k as f64).round() as usize;
        let start = boundary(self.start);
        let end = boundary(self.end).max(start + 1).min(frames);
        if start >= end {
            return Err(Error::range(
                "frame_range",
                format!("span {self:?} maps to no frames (T={frames}, k={k})"),
            ));
        }
        Ok((start, end))
    }
}

/// All contiguous spans over `k` base segments, shortest first, then by start.
pub fn generate_spans(k: usize) -> Result<Vec<TemporalSpan>> {
    if k < 1 {
        return Err(Error::Config("proposal segment count k must be at least 1".into()));
    }
    let mut spans = Vec::with_capacity(k * (k + 1) / 2);
    for len in 1..=k {
        for start in 0..=k - len {
            spans.push(TemporalSpan::new(start, start + len));
        }
    }
    Ok(spans)
}

/// `[span mean | video mean | start/k | end/k]`, length `2*Dv + 2`.
pub fn proposal_feature(fv: &FeatureSequence, span: TemporalSpan, k: usize) -> Result<Vec<f64>> {
    let global = fv.mean(0, fv.frames());
    proposal_feature_with_global(fv, span, k, &global)
}

fn proposal_feature_with_global(
    fv: &FeatureSequence,
    span: TemporalSpan,
    k: usize,
    global: &[f64],
) -> Result<Vec<f64>> {
    let (a, b) = span.frame_range(fv.frames(), k)?;
    let mut out = Vec::with_capacity(2 * fv.dim() + 2);
    out.extend(fv.mean(a, b));
    out.extend_from_slice(global);
    out.push(span.start as f64 / k as f64);
    out.push(span.end as f64 / k as f64);
    Ok(out)
}

/// Stacks the proposal features of `spans` into an `n x (2*Dv + 2)` matrix.
pub fn proposal_matrix(fv: &FeatureSequence, spans: &[TemporalSpan], k: usize) -> Result<Tensor> {
    let global = fv.mean(0, fv.frames());
    let width = 2 * fv.dim() + 2;
    let mut data = Vec::with_capacity(spans.len() * width);
    for span in spans {
        data.extend(proposal_feature_with_global(fv, *span, k, &global)?);
    }
    Tensor::matrix(spans.len(), width, data)
}
