#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use wslln::autodiff::{grad_check, Tensor};
use wslln::features::FeatureSequence;
use wslln::metrics::{temporal_iou, Interval};
use wslln::model::{forward, forward_graph, ModelDims, ModelParams, Mode, MATCH};
use wslln::proposals::{generate_spans, proposal_matrix, TemporalSpan};
use wslln::training::loss_and_grads;

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Outcome of one random forward draw.
pub struct ScoreCheck {
    pub row_err: f64,
    pub col_err: f64,
    pub vq_in_range: bool,
    pub permutation_exact: bool,
}

/// Draws random parameters, features and a span permutation and checks the
/// score structure of one forward pass.
pub fn score_draw(seed: u64) -> ScoreCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dv = rng.random_range(1..6);
    let dq = rng.random_range(1..6);
    let d = rng.random_range(1..9);
    let h = rng.random_range(1..9);
    let k = rng.random_range(1..7);
    let frames = k * rng.random_range(1..4) + rng.random_range(0..k);
    let params = ModelParams::init(rng.random(), ModelDims::new(dv, dq, d, h)).unwrap();
    let scale = [0.1, 1.0, 10.0][rng.random_range(0..3)];
    let fv = FeatureSequence::new(frames, dv, gaussian(&mut rng, frames * dv))
        .unwrap()
        .scaled(scale);
    let query = gaussian(&mut rng, dq);
    let spans = generate_spans(k).unwrap();
    let base = forward(&params, &fv, &query, &spans, k, Mode::Full).unwrap();

    let n = spans.len();
    let mut row_err: f64 = 0.0;
    for r in 0..n {
        row_err = row_err.max((base.sa.at(r, 0) + base.sa.at(r, 1) - 1.0).abs());
    }
    let mut col_err: f64 = 0.0;
    for c in 0..2 {
        let total: f64 = base.sd.column(c).iter().sum();
        col_err = col_err.max((total - 1.0).abs());
    }
    let vq = base.vq.data();
    let vq_in_range = vq.iter().all(|v| (0.0..=1.0).contains(v));

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let permuted: Vec<TemporalSpan> = perm.iter().map(|&i| spans[i]).collect();
    let other = forward(&params, &fv, &query, &permuted, k, Mode::Full).unwrap();
    let rows_match = perm.iter().enumerate().all(|(new, &old)| {
        other.s.row(new).iter().zip(base.s.row(old)).all(|(a, b)| a.to_bits() == b.to_bits())
    });
    let vq_match = other
        .vq
        .data()
        .iter()
        .zip(base.vq.data())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    ScoreCheck {
        row_err,
        col_err,
        vq_in_range,
        permutation_exact: rows_match && vq_match,
    }
}

/// Smallest distance to a ReLU kink and the top-two margin of the match
/// column, the two places where finite differences stop being valid.
fn smoothness(params: &ModelParams, proposals: &Tensor, query: &[f64]) -> (f64, f64) {
    let fwd = forward_graph(params, proposals, query, Mode::Full).unwrap();
    let g = &fwd.graph;
    let kink = g
        .value(fwd.align_hidden)
        .data()
        .iter()
        .chain(g.value(fwd.detect_hidden).data())
        .fold(f64::INFINITY, |m, z| m.min(z.abs()));
    let mut col = g.value(fwd.s).column(MATCH);
    col.sort_by(|a, b| b.total_cmp(a));
    let margin = if col.len() > 1 { col[0] - col[1] } else { f64::INFINITY };
    (kink, margin)
}

/// Max relative gradient error of the composed loss (full mode, positive
/// pair, lambda 0.3) at one random configuration with n=6, Dv=Dq=8, d=16, h=8.
pub fn composed_grad_error(seed: u64, label: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = ModelDims::new(8, 8, 16, 8);
    loop {
        let params = ModelParams::init(rng.random(), dims).unwrap();
        let proposals = Tensor::matrix(6, dims.proposal_width(), gaussian(&mut rng, 6 * 18)).unwrap();
        let query = gaussian(&mut rng, 8);
        let (kink, margin) = smoothness(&params, &proposals, &query);
        if kink < 1e-3 || margin < 1e-3 {
            continue;
        }
        let f = |flat: &[f64]| {
            let mut p = params.clone();
            p.set_flat(flat)?;
            let (loss, _, grads) = loss_and_grads(&p, &proposals, &query, label, Mode::Full, 0.3)?;
            Ok((loss, grads.into_iter().flat_map(Tensor::into_data).collect()))
        };
        return grad_check(f, &params.to_flat(), 1e-5).unwrap();
    }
}

/// Expected R@1 at `th` of a scorer whose top-1 is a uniformly random
/// proposal: the mean over ground truths of the fraction of proposals with
/// IoU >= th, enumerated exhaustively.
pub fn chance_recall(gts: &[TemporalSpan], k: usize, th: f64) -> f64 {
    let spans = generate_spans(k).unwrap();
    let interval = |s: &TemporalSpan| Interval::new(s.start as f64, s.end as f64).unwrap();
    let mut hits = 0usize;
    for gt in gts {
        for p in &spans {
            if temporal_iou(interval(p), interval(gt)).unwrap() >= th {
                hits += 1;
            }
        }
    }
    100.0 * hits as f64 / (gts.len() * spans.len()) as f64
}

/// Proposal matrix for a random feature sequence, for tests that only need
/// realistic inputs.
pub fn random_proposals(rng: &mut ChaCha8Rng, frames: usize, dv: usize, k: usize) -> Tensor {
    let fv = FeatureSequence::new(frames, dv, gaussian(rng, frames * dv)).unwrap();
    proposal_matrix(&fv, &generate_spans(k).unwrap(), k).unwrap()
}
