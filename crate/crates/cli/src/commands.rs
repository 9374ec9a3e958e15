//! Subcommand bodies. Each writes its human-readable output to `out` and its
//! artifacts under the configured output directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use wslln::checkpoint;
use wslln::data::{load_dataset, Dataset};
use wslln::features::load_features;
use wslln::metrics::evaluate;
use wslln::model::{forward, rank, ModelParams, MATCH};
use wslln::proposals::generate_spans;
use wslln::synth::{gen_synthetic, write_corpus};
use wslln::training::{train_with, EvalSet};

use crate::config::RunConfig;

pub const CHECKPOINT_FILE: &str = "model.wslc";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const CONFIG_FILE: &str = "config.json";

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    let dir = cfg.out.as_deref().ok_or_else(|| anyhow!("no output directory; pass --out"))?;
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value.as_deref().ok_or_else(|| anyhow!("missing {flag}"))
}

fn load(path: &Path) -> Result<Dataset> {
    load_dataset(path).with_context(|| format!("loading manifest {}", path.display()))
}

fn check_dims(params: &ModelParams, dataset: &Dataset) -> Result<()> {
    let (dv, dq) = dataset.check_dims()?;
    let dims = params.dims;
    if (dv, dq) != (dims.visual, dims.query) {
        bail!(
            "checkpoint expects Dv={} Dq={}, manifest has Dv={dv} Dq={dq}",
            dims.visual,
            dims.query
        );
    }
    Ok(())
}

pub fn cmd_synth(cfg: &RunConfig, out: &mut impl Write) -> Result<()> {
    let synth = cfg.synth_config();
    let corpus = gen_synthetic(&synth)?;
    let dir = out_dir(cfg)?;
    let (train, test) = write_corpus(dir, &corpus)?;
    write_file(&dir.join(CONFIG_FILE), &cfg.to_json())?;
    writeln!(
        out,
        "synthesized {} train + {} test videos: T={} Dv={} Dq={} k={} ({} proposals)",
        corpus.train.videos.len(),
        corpus.test.videos.len(),
        synth.frames,
        synth.visual_dim,
        synth.query_dim,
        synth.k,
        generate_spans(synth.k)?.len()
    )?;
    writeln!(out, "train manifest: {}", train.display())?;
    writeln!(out, "test manifest: {}", test.display())?;
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig, out: &mut impl Write) -> Result<()> {
    let train_cfg = cfg.train_config();
    train_cfg.validate()?;
    let train_set = load(required(&cfg.train_manifest, "--train")?)?;
    let eval_set = cfg.eval_manifest.as_deref().map(load).transpose()?;
    let dir = out_dir(cfg)?;
    write_file(&dir.join(CONFIG_FILE), &cfg.to_json())?;

    let log_path = dir.join(LOG_FILE);
    let mut log = BufWriter::new(
        File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?,
    );
    let eval = eval_set.as_ref().map(|dataset| EvalSet {
        dataset,
        ks: &cfg.ks,
        ths: &cfg.ths,
    });
    let mut io_error = None;
    let (params, _) = train_with(&train_set, &train_cfg, eval, |entry| {
        let mut line = format!(
            "epoch {:>3}  L_v {:.4}  L_r {:.4}  loss {:.4}",
            entry.epoch, entry.mean_lv, entry.mean_lr, entry.mean_loss
        );
        if let Some(m) = &entry.metrics {
            line.push_str(&format!("  mIoU {:.4}", m.miou));
        }
        let result = writeln!(log, "{}", entry.to_json_line()).and_then(|_| writeln!(out, "{line}"));
        if let Err(e) = result {
            io_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_error {
        return Err(e).context("writing training log");
    }
    log.flush()?;
    let ckpt = dir.join(CHECKPOINT_FILE);
    checkpoint::save(&ckpt, &params)?;
    writeln!(out, "checkpoint: {}", ckpt.display())?;
    writeln!(out, "log: {}", log_path.display())?;
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, out: &mut impl Write) -> Result<()> {
    let params = checkpoint::load(required(&cfg.checkpoint, "--checkpoint")?)?;
    let dataset = load(required(&cfg.eval_manifest, "--manifest")?)?;
    check_dims(&params, &dataset)?;
    let report = evaluate(&params, &dataset, cfg.k, cfg.mode, &cfg.ks, &cfg.ths)?;
    write!(out, "{}", report.to_table())?;
    if cfg.out.is_some() {
        let path = out_dir(cfg)?.join(REPORT_FILE);
        write_file(&path, &report.to_json())?;
        writeln!(out, "report: {}", path.display())?;
    }
    Ok(())
}

/// Reads a query vector from a JSON array file, or parses a comma-separated
/// list when `spec` is not an existing file.
pub fn parse_query(spec: &str) -> Result<Vec<f64>> {
    let path = Path::new(spec);
    if path.is_file() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return serde_json::from_str(&text).with_context(|| format!("{} is not a JSON number array", path.display()));
    }
    spec.split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("bad query value {s:?}")))
        .collect()
}

pub struct PredictArgs {
    pub features: PathBuf,
    pub query: Vec<f64>,
    pub duration: Option<f64>,
}

pub fn cmd_predict(cfg: &RunConfig, args: &PredictArgs, out: &mut impl Write) -> Result<()> {
    let params = checkpoint::load(required(&cfg.checkpoint, "--checkpoint")?)?;
    let fv = load_features(&args.features)?;
    let duration = args.duration.unwrap_or(fv.frames() as f64);
    if !(duration > 0.0) {
        bail!("duration must be positive, got {duration}");
    }
    let spans = generate_spans(cfg.k)?;
    let result = forward(&params, &fv, &args.query, &spans, cfg.k, cfg.mode)?;
    writeln!(out, "{:>4} {:>10} {:>10} {:>12}", "rank", "start", "end", "score")?;
    for (i, j) in rank(&result).into_iter().enumerate() {
        let span = spans[j];
        writeln!(
            out,
            "{:>4} {:>10.3} {:>10.3} {:>12.6e}",
            i + 1,
            span.start_time(duration, cfg.k),
            span.end_time(duration, cfg.k),
            result.s.at(j, MATCH)
        )?;
    }
    Ok(())
}

/// `ablate` is `train` with an explicit mode.
pub fn cmd_ablate(cfg: &RunConfig, out: &mut impl Write) -> Result<()> {
    writeln!(out, "ablation mode: {}", cfg.mode)?;
    cmd_train(cfg, out)
}
