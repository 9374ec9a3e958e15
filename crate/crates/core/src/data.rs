//! JSON manifests and in-memory datasets.
//!
//! A manifest lists videos with a WSLF feature file each (paths are relative
//! to the manifest) and their sentence queries. A query feature is either an
//! inline JSON array or the path of a WSLF file with a single frame.
//!
//! ```json
//! {
//!   "split": "test",
//!   "videos": [
//!     {
//!       "id": "v0000",
//!       "features": "features/v0000.wslf",
//!       "frames": 50,
//!       "dim": 32,
//!       "duration": 50.0,
//!       "queries": [
//!         { "id": "q0000", "feature": [0.1, -0.3], "gt": [10.0, 30.0] }
//!       ]
//!     }
//!   ]
//! }
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{load_features, read_header, save_features, FeatureSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    /// Evaluation splits must carry a ground-truth span for every query.
    pub fn requires_gt(self) -> bool {
        !matches!(self, Split::Train)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QueryFeatureRef {
    Inline(Vec<f64>),
    File(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub feature: QueryFeatureRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub id: String,
    pub features: String,
    pub frames: usize,
    pub dim: usize,
    /// Length in seconds; defaults to one second per frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    pub queries: Vec<QueryRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub split: Split,
    pub videos: Vec<VideoRecord>,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// One sentence query with its precomputed feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub id: String,
    pub feature: Vec<f64>,
    /// Ground-truth `(start, end)` in seconds.
    pub gt: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub id: String,
    pub features: FeatureSequence,
    pub duration: f64,
    pub queries: Vec<Query>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub videos: Vec<Video>,
}

impl Dataset {
    pub fn visual_dim(&self) -> Option<usize> {
        self.videos.first().map(|v| v.features.dim())
    }

    pub fn query_dim(&self) -> Option<usize> {
        self.videos
            .iter()
            .flat_map(|v| v.queries.first())
            .map(|q| q.feature.len())
            .next()
    }

    pub fn num_queries(&self) -> usize {
        self.videos.iter().map(|v| v.queries.len()).sum()
    }

    /// Checks that every video and query agrees on feature widths.
    pub fn check_dims(&self) -> Result<(usize, usize)> {
        let dv = self.visual_dim().ok_or_else(|| Error::Config("dataset has no videos".into()))?;
        let dq = self.query_dim().ok_or_else(|| Error::Config("dataset has no queries".into()))?;
        for v in &self.videos {
            if v.features.dim() != dv {
                return Err(Error::shape(
                    "dataset",
                    format!("video {} has feature width {}, expected {dv}", v.id, v.features.dim()),
                ));
            }
            for q in &v.queries {
                if q.feature.len() != dq {
                    return Err(Error::shape(
                        "dataset",
                        format!("query {} has width {}, expected {dq}", q.id, q.feature.len()),
                    ));
                }
            }
        }
        Ok((dv, dq))
    }
}

fn parse_error(path: &Path, e: serde_json::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    }
}

impl Manifest {
    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    /// Structural and file-header validation; does not read payloads.
    pub fn validate(&self, path: &Path) -> Result<()> {
        let mut video_ids = HashSet::new();
        let mut query_ids = HashSet::new();
        let mut dims: Option<(usize, usize)> = None;
        let mut query_dim: Option<usize> = None;
        for v in &self.videos {
            if !video_ids.insert(v.id.as_str()) {
                return Err(Error::format(path, format!("duplicate video id {:?}", v.id)));
            }
            let file = self.resolve(&v.features);
            let (frames, dim) = read_header(&file)?;
            if (frames, dim) != (v.frames, v.dim) {
                return Err(Error::format(
                    &file,
                    format!(
                        "header says {frames}x{dim} but manifest video {} declares {}x{}",
                        v.id, v.frames, v.dim
                    ),
                ));
            }
            match dims {
                Some((_, d)) if d != dim => {
                    return Err(Error::format(
                        &file,
                        format!("feature width {dim} differs from earlier videos ({d})"),
                    ))
                }
                _ => dims = Some((frames, dim)),
            }
            if let Some(duration) = v.duration {
                if !(duration > 0.0) {
                    return Err(Error::format(path, format!("video {} has non-positive duration", v.id)));
                }
            }
            for q in &v.queries {
                if !query_ids.insert(q.id.as_str()) {
                    return Err(Error::format(path, format!("duplicate query id {:?}", q.id)));
                }
                match q.gt {
                    None if self.split.requires_gt() => {
                        return Err(Error::Missing {
                            what: "ground-truth span",
                            query: q.id.clone(),
                        })
                    }
                    Some((s, e)) if !(s < e) || s < 0.0 => {
                        return Err(Error::format(
                            path,
                            format!("query {} has invalid span [{s}, {e}]", q.id),
                        ))
                    }
                    _ => {}
                }
                let qd = match &q.feature {
                    QueryFeatureRef::Inline(values) => values.len(),
                    QueryFeatureRef::File(rel) => {
                        let file = self.resolve(rel);
                        let (t, d) = read_header(&file)?;
                        if t != 1 {
                            return Err(Error::format(&file, format!("query feature file has {t} rows, expected 1")));
                        }
                        d
                    }
                };
                match query_dim {
                    Some(d) if d != qd => {
                        return Err(Error::format(
                            path,
                            format!("query {} has width {qd}, expected {d}", q.id),
                        ))
                    }
                    _ => query_dim = Some(qd),
                }
            }
        }
        Ok(())
    }

    /// Reads every referenced feature file.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let mut videos = Vec::with_capacity(self.videos.len());
        for v in &self.videos {
            let features = load_features(self.resolve(&v.features))?;
            let mut queries = Vec::with_capacity(v.queries.len());
            for q in &v.queries {
                let feature = match &q.feature {
                    QueryFeatureRef::Inline(values) => values.clone(),
                    QueryFeatureRef::File(rel) => load_features(self.resolve(rel))?.data().to_vec(),
                };
                queries.push(Query {
                    id: q.id.clone(),
                    feature,
                    gt: q.gt,
                });
            }
            videos.push(Video {
                id: v.id.clone(),
                duration: v.duration.unwrap_or(features.frames() as f64),
                features,
                queries,
            });
        }
        Ok(Dataset {
            split: self.split,
            videos,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// Parses and validates a manifest.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest: Manifest = serde_json::from_str(&text).map_err(|e| parse_error(path, e))?;
    manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    manifest.validate(path)?;
    Ok(manifest)
}

pub fn save_manifest(path: impl AsRef<Path>, manifest: &Manifest) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, manifest.to_json() + "\n").map_err(|e| Error::io(path, e))
}

/// `load_manifest` followed by `load_dataset`.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    load_manifest(path)?.load_dataset()
}

/// Writes `dataset` as `<dir>/<name>.json` plus one WSLF file per video
/// under `<dir>/features/`. Query features are inlined.
pub fn write_dataset(dir: impl AsRef<Path>, name: &str, dataset: &Dataset) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let feat_dir = dir.join("features");
    fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    let mut videos = Vec::with_capacity(dataset.videos.len());
    for v in &dataset.videos {
        let rel = format!("features/{}.wslf", v.id);
        save_features(dir.join(&rel), &v.features)?;
        videos.push(VideoRecord {
            id: v.id.clone(),
            features: rel,
            frames: v.features.frames(),
            dim: v.features.dim(),
            duration: Some(v.duration),
            queries: v
                .queries
                .iter()
                .map(|q| QueryRecord {
                    id: q.id.clone(),
                    feature: QueryFeatureRef::Inline(q.feature.clone()),
                    gt: q.gt,
                })
                .collect(),
        });
    }
    let manifest = Manifest {
        split: dataset.split,
        videos,
        base_dir: dir.to_path_buf(),
    };
    let path = dir.join(format!("{name}.json"));
    save_manifest(&path, &manifest)?;
    Ok(path)
}
