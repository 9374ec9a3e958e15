//! Weakly supervised training from video-sentence match labels.
//!
//! Each step takes one (video, sentence) pair. The video-level score `vq` is
//! classified against the pair label; for matching pairs an auxiliary term
//! pushes the merged match scores towards the currently best proposal
//! (a self-generated pseudo label).

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{argmax_first, Tensor};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{forward_graph, ForwardGraph, Mode, ModelDims, ModelParams, MATCH};
use crate::proposals::{generate_spans, proposal_matrix};

/// Smoothing added to every entry before normalizing scores into a distribution.
pub const SCORE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the pseudo-label refinement term.
    pub lambda: f64,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Negatives drawn per positive pair, each epoch.
    pub negative_ratio: usize,
    pub d: usize,
    pub h: usize,
    /// Base segments for proposal generation.
    pub k: usize,
    pub mode: Mode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.3,
            lr: 0.01,
            momentum: 0.9,
            epochs: 50,
            seed: 0,
            negative_ratio: 1,
            d: 1000,
            h: 256,
            k: 5,
            mode: Mode::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "need lr >= 0 and momentum in [0, 1) (lr={}, momentum={})",
                self.lr, self.momentum
            )));
        }
        if self.k == 0 || self.d == 0 || self.h == 0 {
            return Err(Error::Config("k, d and h must be positive".into()));
        }
        Ok(())
    }
}

/// Index of a query: owning video and position within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QueryRef {
    pub video: usize,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TrainingPair {
    pub video: usize,
    pub query: QueryRef,
    /// True when the sentence describes this video.
    pub label: bool,
}

pub fn positive_pairs(dataset: &Dataset) -> Vec<TrainingPair> {
    dataset
        .videos
        .iter()
        .enumerate()
        .flat_map(|(v, video)| {
            (0..video.queries.len()).map(move |index| TrainingPair {
                video: v,
                query: QueryRef { video: v, index },
                label: true,
            })
        })
        .collect()
}

fn epoch_rng(seed: u64, epoch: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 8) | stream);
    rng
}

/// Pairs every video with `ratio` sentences from other videos.
///
/// Deterministic per `(seed, epoch)`. A sentence is never paired with the
/// video it describes.
pub fn sample_negatives(dataset: &Dataset, ratio: usize, seed: u64, epoch: usize) -> Result<Vec<TrainingPair>> {
    let all: Vec<QueryRef> = positive_pairs(dataset).into_iter().map(|p| p.query).collect();
    let ids: HashSet<&str> = dataset
        .videos
        .iter()
        .flat_map(|v| v.queries.iter().map(|q| q.id.as_str()))
        .collect();
    if ids.len() < 2 {
        return Err(Error::Config(
            "negative sampling needs at least two distinct sentences".into(),
        ));
    }
    let mut rng = epoch_rng(seed, epoch, 1);
    let mut out = Vec::with_capacity(all.len() * ratio);
    for (v, video) in dataset.videos.iter().enumerate() {
        if video.queries.is_empty() {
            continue;
        }
        let own: HashSet<&str> = video.queries.iter().map(|q| q.id.as_str()).collect();
        let candidates: Vec<QueryRef> = all
            .iter()
            .copied()
            .filter(|r| !own.contains(dataset.videos[r.video].queries[r.index].id.as_str()))
            .collect();
        if candidates.is_empty() {
            return Err(Error::Config(format!(
                "video {} has no sentence available as a negative",
                video.id
            )));
        }
        for _ in 0..video.queries.len() * ratio {
            let query = candidates[rng.random_range(0..candidates.len())];
            out.push(TrainingPair {
                video: v,
                query,
                label: false,
            });
        }
    }
    Ok(out)
}

/// Two-class cross-entropy on the normalized video score.
pub fn video_loss(vq: &[f64], label: bool) -> f64 {
    let total = vq[0] + vq[1] + 2.0 * SCORE_EPS;
    let target = if label { MATCH } else { 1 - MATCH };
    -((vq[target] + SCORE_EPS) / total).ln()
}

/// Proposal with the highest match score; ties go to the lowest index.
pub fn pseudo_label(s: &Tensor) -> usize {
    argmax_first(&s.column(MATCH))
}

/// Cross-entropy over proposals of the renormalized match column.
pub fn refine_loss(match_scores: &[f64], target: usize) -> f64 {
    let n = match_scores.len() as f64;
    let total: f64 = match_scores.iter().sum::<f64>() + n * SCORE_EPS;
    -((match_scores[target] + SCORE_EPS) / total).ln()
}

/// Video loss plus `lambda` times the refinement loss, the latter only for matching pairs.
pub fn total_loss(vq: &[f64], label: bool, s: &Tensor, lambda: f64) -> f64 {
    let lv = video_loss(vq, label);
    if !label || lambda == 0.0 {
        return lv;
    }
    let col = s.column(MATCH);
    lv + lambda * refine_loss(&col, pseudo_label(s))
}

/// Loss terms recorded on a forward graph.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: crate::autodiff::NodeId,
    pub video: f64,
    /// Refinement loss, present for matching pairs in full mode.
    pub refine: Option<f64>,
}

/// Records the training objective for `mode` on top of a forward pass.
pub fn record_loss(fwd: &mut ForwardGraph, label: bool, mode: Mode, lambda: f64) -> Result<LossTerms> {
    let g = &mut fwd.graph;
    let target = if label { MATCH } else { 1 - MATCH };
    match mode {
        Mode::Full => {
            let lv = g.normalized_nll(fwd.vq, target, SCORE_EPS)?;
            let video = g.value(lv).item();
            if !label {
                return Ok(LossTerms { total: lv, video, refine: None });
            }
            let col = g.column(fwd.s, MATCH)?;
            let y_hat = argmax_first(g.value(col).data());
            let lr = g.normalized_nll(col, y_hat, SCORE_EPS)?;
            let refine = Some(g.value(lr).item());
            let total = if lambda == 0.0 {
                lv
            } else {
                let weighted = g.scale(lr, lambda);
                g.add(lv, weighted)?
            };
            Ok(LossTerms { total, video, refine })
        }
        Mode::AlignOnly => {
            let l = g.row_nll_mean(fwd.sa, target)?;
            Ok(LossTerms { total: l, video: g.value(l).item(), refine: None })
        }
        Mode::DetectOnly => {
            let col = g.column(fwd.sd, MATCH)?;
            let best = g.max(col)?;
            let l = g.binary_nll(best, label)?;
            Ok(LossTerms { total: l, video: g.value(l).item(), refine: None })
        }
    }
}

/// Loss and parameter gradients (in [`ModelParams::tensors`] order) for one pair.
pub fn loss_and_grads(
    params: &ModelParams,
    proposals: &Tensor,
    query: &[f64],
    label: bool,
    mode: Mode,
    lambda: f64,
) -> Result<(f64, LossTerms, Vec<Tensor>)> {
    let mut fwd = forward_graph(params, proposals, query, mode)?;
    let terms = record_loss(&mut fwd, label, mode, lambda)?;
    let loss = fwd.graph.value(terms.total).item();
    let mut grads = fwd.graph.backward(terms.total)?;
    Ok((loss, terms, fwd.param_grads(&mut grads)))
}

/// SGD with heavy-ball momentum: `v = mu * v + g; p -= lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(params: &ModelParams, lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &[Tensor]) {
        for ((p, v), g) in params.tensors_mut().into_iter().zip(&mut self.velocity).zip(grads) {
            for ((pi, vi), gi) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vi = self.momentum * *vi + gi;
                *pi -= self.lr * *vi;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    #[serde(rename = "mean_Lv")]
    pub mean_lv: f64,
    #[serde(rename = "mean_Lr")]
    pub mean_lr: f64,
    pub mean_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<EvalReport>,
}

impl EpochLog {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("log serializes")
    }
}

/// Held-out data scored after every epoch.
#[derive(Debug, Clone, Copy)]
pub struct EvalSet<'a> {
    pub dataset: &'a Dataset,
    pub ks: &'a [usize],
    pub ths: &'a [f64],
}

pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<(ModelParams, Vec<EpochLog>)> {
    train_with(dataset, config, None, |_| {})
}

/// Full training loop; `on_epoch` sees each log record as it is produced.
pub fn train_with(
    dataset: &Dataset,
    config: &TrainConfig,
    eval: Option<EvalSet<'_>>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(ModelParams, Vec<EpochLog>)> {
    config.validate()?;
    let (dv, dq) = dataset.check_dims()?;
    let dims = ModelDims::new(dv, dq, config.d, config.h);
    let mut params = ModelParams::init(config.seed, dims)?;
    let mut opt = Sgd::new(&params, config.lr, config.momentum);

    let spans = generate_spans(config.k)?;
    let proposals: Vec<Tensor> = dataset
        .videos
        .iter()
        .map(|v| proposal_matrix(&v.features, &spans, config.k))
        .collect::<Result<_>>()?;
    let positives = positive_pairs(dataset);

    let mut logs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut pairs = positives.clone();
        pairs.extend(sample_negatives(dataset, config.negative_ratio, config.seed, epoch)?);
        pairs.shuffle(&mut epoch_rng(config.seed, epoch, 2));

        let (mut sum_lv, mut sum_lr, mut sum_loss, mut n_lr) = (0.0, 0.0, 0.0, 0usize);
        for pair in &pairs {
            let query = &dataset.videos[pair.query.video].queries[pair.query.index];
            let (loss, terms, grads) = loss_and_grads(
                &params,
                &proposals[pair.video],
                &query.feature,
                pair.label,
                config.mode,
                config.lambda,
            )?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    epoch,
                    video: dataset.videos[pair.video].id.clone(),
                    query: query.id.clone(),
                });
            }
            opt.step(&mut params, &grads);
            sum_loss += loss;
            sum_lv += terms.video;
            if let Some(r) = terms.refine {
                sum_lr += r;
                n_lr += 1;
            }
        }
        let count = pairs.len().max(1) as f64;
        let metrics = match eval {
            Some(e) => Some(evaluate(&params, e.dataset, config.k, config.mode, e.ks, e.ths)?),
            None => None,
        };
        let log = EpochLog {
            epoch,
            mean_lv: sum_lv / count,
            mean_lr: if n_lr == 0 { 0.0 } else { sum_lr / n_lr as f64 },
            mean_loss: sum_loss / count,
            metrics,
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok((params, logs))
}
