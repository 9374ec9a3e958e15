//! Synthetic planted-event corpus.
//!
//! Every video gets one query vector `q` and one ground-truth span drawn
//! from the proposal set. A fixed random map `M` (shared by the whole corpus)
//! turns a query into a visual signature `M q`. Frames inside the span carry
//! `beta * M q + (1 - beta) * noise`, distractor segments carry the signature
//! of another video's query, and the remaining frames are pure noise. Since
//! the planted span is itself a proposal, a perfect model reaches IoU 1.

use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{write_dataset, Dataset, Query, Split, Video};
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::proposals::{generate_spans, TemporalSpan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_train: usize,
    pub num_test: usize,
    /// Frames per video.
    pub frames: usize,
    pub visual_dim: usize,
    pub query_dim: usize,
    /// Base segments; the planted span is one of the `k(k+1)/2` proposals.
    pub k: usize,
    /// Signal strength inside planted and distractor spans, in `[0, 1]`.
    pub beta: f64,
    /// Noise scale; each coordinate has variance `sigma^2 / visual_dim`.
    pub sigma: f64,
    /// Single-segment distractor events per video.
    pub distractors: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_train: 500,
            num_test: 100,
            frames: 50,
            visual_dim: 32,
            query_dim: 32,
            k: 5,
            beta: 0.7,
            sigma: 1.0,
            distractors: 1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_train + self.num_test < 2 {
            return Err(Error::Config("synthetic corpus needs at least two videos".into()));
        }
        if self.frames < self.k || self.k == 0 {
            return Err(Error::Config(format!(
                "need at least one frame per segment (frames={}, k={})",
                self.frames, self.k
            )));
        }
        if self.visual_dim == 0 || self.query_dim == 0 {
            return Err(Error::Config("feature dimensions must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) || !(self.sigma >= 0.0) {
            return Err(Error::Config(format!(
                "beta must be in [0,1] and sigma non-negative (beta={}, sigma={})",
                self.beta, self.sigma
            )));
        }
        Ok(())
    }
}

/// Generated corpus with the hidden quantities needed by oracles.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub train: Dataset,
    pub test: Dataset,
    /// `Dv x Dq` query-to-visual map, row-major.
    pub mixing: Vec<f64>,
    /// Planted span per video, train videos first.
    pub planted: Vec<TemporalSpan>,
}

impl SynthCorpus {
    /// `M q` for a query vector.
    pub fn signature(&self, query: &[f64]) -> Vec<f64> {
        let dq = query.len();
        self.mixing
            .chunks_exact(dq)
            .map(|row| row.iter().zip(query).map(|(a, b)| a * b).sum())
            .collect()
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect()
}

fn unit_gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut v = gaussian(rng, n, 1.0);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

pub fn gen_synthetic(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (dv, dq, k, t) = (config.visual_dim, config.query_dim, config.k, config.frames);
    let total = config.num_train + config.num_test;

    let mixing = gaussian(&mut rng, dv * dq, (1.0 / dq as f64).sqrt());
    let queries: Vec<Vec<f64>> = (0..total).map(|_| unit_gaussian(&mut rng, dq)).collect();
    let spans = generate_spans(k)?;
    let signature = |q: &[f64]| -> Vec<f64> {
        mixing
            .chunks_exact(dq)
            .map(|row| row.iter().zip(q).map(|(a, b)| a * b).sum())
            .collect()
    };
    let noise_std = config.sigma / (dv as f64).sqrt();
    let segment_frames = |seg: TemporalSpan| seg.frame_range(t, k);

    let mut planted = Vec::with_capacity(total);
    let mut videos = Vec::with_capacity(total);
    for i in 0..total {
        let span = *spans.choose(&mut rng).expect("k >= 1");
        planted.push(span);

        // Per-frame source: None = noise only, Some(j) = signature of query j.
        let mut source: Vec<Option<usize>> = vec![None; t];
        let mut free: Vec<usize> = (0..k).filter(|s| *s < span.start || *s >= span.end).collect();
        free.shuffle(&mut rng);
        for &seg in free.iter().take(config.distractors) {
            let mut other = rng.random_range(0..total - 1);
            if other >= i {
                other += 1;
            }
            let (a, b) = segment_frames(TemporalSpan::new(seg, seg + 1))?;
            source[a..b].iter_mut().for_each(|s| *s = Some(other));
        }
        let (a, b) = segment_frames(span)?;
        source[a..b].iter_mut().for_each(|s| *s = Some(i));

        let mut data = Vec::with_capacity(t * dv);
        for src in &source {
            let noise = gaussian(&mut rng, dv, noise_std);
            match src {
                None => data.extend(noise),
                Some(j) => {
                    let sig = signature(&queries[*j]);
                    data.extend(
                        sig.iter()
                            .zip(&noise)
                            .map(|(s, e)| config.beta * s + (1.0 - config.beta) * e),
                    );
                }
            }
        }
        let features = FeatureSequence::new(t, dv, data)?.quantized();
        let duration = t as f64;
        videos.push(Video {
            id: format!("v{i:05}"),
            features,
            duration,
            queries: vec![Query {
                id: format!("q{i:05}"),
                feature: queries[i].clone(),
                gt: Some((span.start_time(duration, k), span.end_time(duration, k))),
            }],
        });
    }
    let test_videos = videos.split_off(config.num_train);
    Ok(SynthCorpus {
        train: Dataset {
            split: Split::Train,
            videos,
        },
        test: Dataset {
            split: Split::Test,
            videos: test_videos,
        },
        mixing,
        planted,
    })
}

/// Writes `train.json`, `test.json` and `features/*.wslf` under `dir`.
pub fn write_corpus(dir: impl AsRef<Path>, corpus: &SynthCorpus) -> Result<(PathBuf, PathBuf)> {
    let dir = dir.as_ref();
    let train = write_dataset(dir, "train", &corpus.train)?;
    let test = write_dataset(dir, "test", &corpus.test)?;
    Ok((train, test))
}
