//! Temporal IoU, R@k at IoU thresholds, and mean IoU.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{forward_graph, rank_scores, Mode, ModelParams};
use crate::proposals::{generate_spans, proposal_matrix};

/// Closed-open time interval. Units are arbitrary but must agree between
/// the intervals being compared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start < end) || !start.is_finite() || !end.is_finite() {
            return Err(Error::range("interval", format!("degenerate interval [{start}, {end}]")));
        }
        Ok(Self { start, end })
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

/// Intersection over union of two intervals; 0 when disjoint.
pub fn temporal_iou(a: Interval, b: Interval) -> Result<f64> {
    for iv in [a, b] {
        Interval::new(iv.start, iv.end)?;
    }
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = a.length() + b.length() - inter;
    Ok(inter / union)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub query: String,
    pub span: Interval,
}

/// Ranked candidate intervals per query id.
pub type Predictions = BTreeMap<String, Vec<Interval>>;

fn ranked<'a>(predictions: &'a Predictions, gt: &GroundTruth) -> Result<&'a [Interval]> {
    match predictions.get(&gt.query) {
        Some(r) if !r.is_empty() => Ok(r),
        _ => Err(Error::Missing {
            what: "prediction",
            query: gt.query.clone(),
        }),
    }
}

fn best_iou_top_k(ranked: &[Interval], gt: Interval, k: usize) -> Result<f64> {
    let mut best: f64 = 0.0;
    for iv in ranked.iter().take(k) {
        best = best.max(temporal_iou(*iv, gt)?);
    }
    Ok(best)
}

/// Percentage of queries with some top-`k` candidate at IoU >= `th`.
pub fn recall_at_k(predictions: &Predictions, gts: &[GroundTruth], k: usize, th: f64) -> Result<f64> {
    if gts.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for gt in gts {
        if best_iou_top_k(ranked(predictions, gt)?, gt.span, k)? >= th {
            hits += 1;
        }
    }
    Ok(100.0 * hits as f64 / gts.len() as f64)
}

/// Mean IoU of each query's top-1 candidate.
pub fn mean_iou(predictions: &Predictions, gts: &[GroundTruth]) -> Result<f64> {
    let ious = top1_ious(predictions, gts)?;
    if ious.is_empty() {
        return Ok(0.0);
    }
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}

fn top1_ious(predictions: &Predictions, gts: &[GroundTruth]) -> Result<Vec<f64>> {
    gts.iter()
        .map(|gt| temporal_iou(ranked(predictions, gt)?[0], gt.span))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallCell {
    pub k: usize,
    pub iou: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_queries: usize,
    pub recalls: Vec<RecallCell>,
    pub miou: f64,
    pub top1_iou: Vec<f64>,
}

impl EvalReport {
    pub fn from_predictions(
        predictions: &Predictions,
        gts: &[GroundTruth],
        ks: &[usize],
        ths: &[f64],
    ) -> Result<Self> {
        let mut recalls = Vec::with_capacity(ks.len() * ths.len());
        for &k in ks {
            for &th in ths {
                recalls.push(RecallCell {
                    k,
                    iou: th,
                    recall: recall_at_k(predictions, gts, k, th)?,
                });
            }
        }
        let top1_iou = top1_ious(predictions, gts)?;
        let miou = if top1_iou.is_empty() {
            0.0
        } else {
            top1_iou.iter().sum::<f64>() / top1_iou.len() as f64
        };
        Ok(Self {
            num_queries: gts.len(),
            recalls,
            miou,
            top1_iou,
        })
    }

    pub fn recall(&self, k: usize, th: f64) -> Option<f64> {
        self.recalls
            .iter()
            .find(|c| c.k == k && c.iou == th)
            .map(|c| c.recall)
    }

    pub fn ks(&self) -> Vec<usize> {
        let mut ks: Vec<usize> = self.recalls.iter().map(|c| c.k).collect();
        ks.dedup();
        ks
    }

    pub fn thresholds(&self) -> Vec<f64> {
        let mut ths = Vec::new();
        for c in &self.recalls {
            if !ths.contains(&c.iou) {
                ths.push(c.iou);
            }
        }
        ths
    }

    /// One row per `k`, one column per threshold, then mIoU.
    pub fn to_table(&self) -> String {
        let ths = self.thresholds();
        let mut out = String::new();
        let _ = write!(out, "{:<6}", "R@k");
        for th in &ths {
            let _ = write!(out, " {:>9}", format!("IoU={th}"));
        }
        let _ = writeln!(out, " {:>9}", "mIoU");
        for k in self.ks() {
            let _ = write!(out, "{:<6}", format!("R@{k}"));
            for &th in &ths {
                let _ = write!(out, " {:>9.2}", self.recall(k, th).unwrap_or(f64::NAN));
            }
            let _ = writeln!(out, " {:>9.2}", 100.0 * self.miou);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Converts seconds to base-segment units, snapping values that sit on a
/// segment boundary so exact matches compare equal.
pub fn to_segment_units(seconds: f64, duration: f64, k: usize) -> f64 {
    let u = seconds / duration * k as f64;
    let r = u.round();
    if (u - r).abs() < 1e-6 {
        r
    } else {
        u
    }
}

/// Runs the model on every query with a ground-truth span and scores the ranking.
pub fn evaluate(
    params: &ModelParams,
    dataset: &Dataset,
    k_segments: usize,
    mode: Mode,
    ks: &[usize],
    ths: &[f64],
) -> Result<EvalReport> {
    let (predictions, gts) = predict_dataset(params, dataset, k_segments, mode)?;
    EvalReport::from_predictions(&predictions, &gts, ks, ths)
}

/// Ranked proposals and ground truths, both in base-segment units.
pub fn predict_dataset(
    params: &ModelParams,
    dataset: &Dataset,
    k_segments: usize,
    mode: Mode,
) -> Result<(Predictions, Vec<GroundTruth>)> {
    let spans = generate_spans(k_segments)?;
    let intervals: Vec<Interval> = spans
        .iter()
        .map(|s| Interval::new(s.start as f64, s.end as f64))
        .collect::<Result<_>>()?;
    let mut predictions = Predictions::new();
    let mut gts = Vec::new();
    for video in &dataset.videos {
        let proposals = proposal_matrix(&video.features, &spans, k_segments)?;
        for query in &video.queries {
            let Some((gs, ge)) = query.gt else {
                return Err(Error::Missing {
                    what: "ground-truth span",
                    query: query.id.clone(),
                });
            };
            let span = Interval::new(
                to_segment_units(gs, video.duration, k_segments),
                to_segment_units(ge, video.duration, k_segments),
            )?;
            let fwd = forward_graph(params, &proposals, &query.feature, mode)?;
            let order = rank_scores(&fwd.result().match_scores());
            predictions.insert(query.id.clone(), order.iter().map(|&i| intervals[i]).collect());
            gts.push(GroundTruth {
                query: query.id.clone(),
                span,
            });
        }
    }
    Ok((predictions, gts))
}
