//! Run configuration: defaults, then a flat JSON file, then command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use wslln::model::Mode;
use wslln::synth::SynthConfig;
use wslln::training::TrainConfig;

/// Every tunable of a run under one flat set of keys. `seed` and `k` are
/// shared by corpus generation and training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub k: usize,

    pub lambda: f64,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub negative_ratio: usize,
    pub d: usize,
    pub h: usize,
    pub mode: Mode,

    pub num_train: usize,
    pub num_test: usize,
    pub frames: usize,
    pub visual_dim: usize,
    pub query_dim: usize,
    pub beta: f64,
    pub sigma: f64,
    pub distractors: usize,

    pub ks: Vec<usize>,
    pub ths: Vec<f64>,

    pub train_manifest: Option<PathBuf>,
    pub eval_manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let s = SynthConfig::default();
        Self {
            seed: t.seed,
            k: t.k,
            lambda: t.lambda,
            lr: t.lr,
            momentum: t.momentum,
            epochs: t.epochs,
            negative_ratio: t.negative_ratio,
            d: t.d,
            h: t.h,
            mode: t.mode,
            num_train: s.num_train,
            num_test: s.num_test,
            frames: s.frames,
            visual_dim: s.visual_dim,
            query_dim: s.query_dim,
            beta: s.beta,
            sigma: s.sigma,
            distractors: s.distractors,
            ks: vec![1, 5],
            ths: vec![0.1, 0.3, 0.5],
            train_manifest: None,
            eval_manifest: None,
            checkpoint: None,
            out: None,
        }
    }
}

/// Values given on the command line. `None` leaves the lower layers alone.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub lambda: Option<f64>,
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
    pub epochs: Option<usize>,
    pub negative_ratio: Option<usize>,
    pub d: Option<usize>,
    pub h: Option<usize>,
    pub mode: Option<Mode>,
    pub num_train: Option<usize>,
    pub num_test: Option<usize>,
    pub beta: Option<f64>,
    pub sigma: Option<f64>,
    pub ks: Option<Vec<usize>>,
    pub ths: Option<Vec<f64>>,
    pub train_manifest: Option<PathBuf>,
    pub eval_manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

macro_rules! apply {
    ($cfg:ident, $ov:ident, $($field:ident),*) => {
        $(if let Some(v) = $ov.$field { $cfg.$field = v; })*
    };
}

macro_rules! apply_path {
    ($cfg:ident, $ov:ident, $($field:ident),*) => {
        $(if $ov.$field.is_some() { $cfg.$field = $ov.$field; })*
    };
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Defaults, then `file` if given, then `overrides`.
    pub fn resolve(file: Option<&Path>, overrides: Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        cfg.apply(overrides);
        Ok(cfg)
    }

    pub fn apply(&mut self, o: Overrides) {
        apply!(
            self, o, seed, k, lambda, lr, momentum, epochs, negative_ratio, d, h, mode, num_train, num_test,
            beta, sigma, ks, ths
        );
        apply_path!(self, o, train_manifest, eval_manifest, checkpoint, out);
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lambda: self.lambda,
            lr: self.lr,
            momentum: self.momentum,
            epochs: self.epochs,
            seed: self.seed,
            negative_ratio: self.negative_ratio,
            d: self.d,
            h: self.h,
            k: self.k,
            mode: self.mode,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            num_train: self.num_train,
            num_test: self.num_test,
            frames: self.frames,
            visual_dim: self.visual_dim,
            query_dim: self.query_dim,
            k: self.k,
            beta: self.beta,
            sigma: self.sigma,
            distractors: self.distractors,
            seed: self.seed,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
