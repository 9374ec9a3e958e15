//! Two-branch localization model.
//!
//! Proposal features and the query are projected to a common width `d`,
//! fused into `fm = (fp + fq) | (fp * fq) | FC(fp | fq)`, and scored by two
//! heads: the alignment head normalizes each proposal over {no-match, match},
//! the detection head normalizes each class over proposals. The merged score
//! is their elementwise product and the video score is its sum over
//! proposals.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::proposals::{proposal_matrix, TemporalSpan};

/// Column of the two-wide score matrices that means "matches the query".
pub const MATCH: usize = 1;
/// Column that means "does not match".
pub const NO_MATCH: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Per-frame visual feature width.
    pub visual: usize,
    /// Query feature width.
    pub query: usize,
    /// Common projection width.
    pub d: usize,
    /// Hidden units in each branch head.
    pub h: usize,
}

impl ModelDims {
    pub fn new(visual: usize, query: usize, d: usize, h: usize) -> Self {
        Self { visual, query, d, h }
    }

    pub fn proposal_width(&self) -> usize {
        2 * self.visual + 2
    }

    fn validate(&self) -> Result<()> {
        if self.visual == 0 || self.query == 0 || self.d == 0 || self.h == 0 {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Affine layer `y = W x + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[out, inp]),
            bias: Tensor::zeros(&[out]),
        }
    }

    fn glorot(out: usize, inp: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (inp + out) as f64).sqrt();
        let data = (0..out * inp).map(|_| rng.random_range(-bound..=bound)).collect();
        Self {
            weight: Tensor::matrix(out, inp, data).expect("sized"),
            bias: Tensor::zeros(&[out]),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Names of the layers in checkpoint and gradient order.
pub const LAYER_NAMES: [&str; 7] = [
    "visual",
    "text",
    "fusion",
    "align_hidden",
    "align_out",
    "detect_hidden",
    "detect_out",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub visual: Dense,
    pub text: Dense,
    pub fusion: Dense,
    pub align_hidden: Dense,
    pub align_out: Dense,
    pub detect_hidden: Dense,
    pub detect_out: Dense,
}

impl ModelParams {
    /// Glorot-uniform weights and zero biases, deterministic per seed.
    pub fn init(seed: u64, dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ModelDims { d, h, .. } = dims;
        Ok(Self {
            dims,
            visual: Dense::glorot(d, dims.proposal_width(), &mut rng),
            text: Dense::glorot(d, dims.query, &mut rng),
            fusion: Dense::glorot(d, 2 * d, &mut rng),
            align_hidden: Dense::glorot(h, 3 * d, &mut rng),
            align_out: Dense::glorot(2, h, &mut rng),
            detect_hidden: Dense::glorot(h, 3 * d, &mut rng),
            detect_out: Dense::glorot(2, h, &mut rng),
        })
    }

    pub fn zeros(dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        let ModelDims { d, h, .. } = dims;
        Ok(Self {
            dims,
            visual: Dense::zeros(d, dims.proposal_width()),
            text: Dense::zeros(d, dims.query),
            fusion: Dense::zeros(d, 2 * d),
            align_hidden: Dense::zeros(h, 3 * d),
            align_out: Dense::zeros(2, h),
            detect_hidden: Dense::zeros(h, 3 * d),
            detect_out: Dense::zeros(2, h),
        })
    }

    pub fn layers(&self) -> [&Dense; 7] {
        [
            &self.visual,
            &self.text,
            &self.fusion,
            &self.align_hidden,
            &self.align_out,
            &self.detect_hidden,
            &self.detect_out,
        ]
    }

    pub fn layers_mut(&mut self) -> [&mut Dense; 7] {
        [
            &mut self.visual,
            &mut self.text,
            &mut self.fusion,
            &mut self.align_hidden,
            &mut self.align_out,
            &mut self.detect_hidden,
            &mut self.detect_out,
        ]
    }

    /// Weight and bias tensors, interleaved in layer order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers()
            .into_iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers_mut()
            .into_iter()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_values() {
            return Err(Error::shape(
                "set_flat",
                format!("{} values for {} parameters", flat.len(), self.num_values()),
            ));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

/// Which branches produce the merged score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// `s = sa * sd`.
    #[default]
    Full,
    /// `s = sa`; the detection head is ignored.
    AlignOnly,
    /// `s = sd`; the alignment head is ignored.
    DetectOnly,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "align-only" => Ok(Mode::AlignOnly),
            "detect-only" => Ok(Mode::DetectOnly),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (expected full, align-only or detect-only)"
            ))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Full => "full",
            Mode::AlignOnly => "align-only",
            Mode::DetectOnly => "detect-only",
        })
    }
}

/// Graph handles for one layer's weight and bias.
#[derive(Debug, Clone, Copy)]
pub struct LayerNodes {
    pub weight: NodeId,
    pub bias: NodeId,
}

/// A recorded forward pass, ready for a loss and [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct ForwardGraph {
    pub graph: Graph,
    pub layers: [LayerNodes; 7],
    pub fm: NodeId,
    /// Hidden pre-activations of the alignment and detection heads.
    pub align_hidden: NodeId,
    pub detect_hidden: NodeId,
    pub sa: NodeId,
    pub sd: NodeId,
    pub s: NodeId,
    pub vq: NodeId,
}

impl ForwardGraph {
    /// Parameter gradients in [`ModelParams::tensors`] order.
    pub fn param_grads(&self, grads: &mut crate::autodiff::Gradients) -> Vec<Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [grads.take(l.weight), grads.take(l.bias)])
            .collect()
    }

    pub fn result(&self) -> ForwardResult {
        let v = |id| self.graph.value(id).clone();
        ForwardResult {
            fm: v(self.fm),
            sa: v(self.sa),
            sd: v(self.sd),
            s: v(self.s),
            vq: v(self.vq),
        }
    }
}

/// Values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult {
    /// `n x 3d` fused features.
    pub fm: Tensor,
    /// `n x 2`, rows sum to one.
    pub sa: Tensor,
    /// `n x 2`, columns sum to one.
    pub sd: Tensor,
    /// `n x 2` merged scores.
    pub s: Tensor,
    /// Column sums of `s`. The two entries need not add up to one.
    pub vq: Tensor,
}

impl ForwardResult {
    pub fn match_scores(&self) -> Vec<f64> {
        self.s.column(MATCH)
    }
}

fn record_layer(g: &mut Graph, layer: &Dense) -> LayerNodes {
    LayerNodes {
        weight: g.leaf(layer.weight.clone()),
        bias: g.leaf(layer.bias.clone()),
    }
}

fn apply(g: &mut Graph, layer: LayerNodes, x: NodeId) -> Result<NodeId> {
    g.linear(layer.weight, layer.bias, x)
}

fn fuse_nodes(g: &mut Graph, fp: NodeId, fq: NodeId, fusion: LayerNodes) -> Result<NodeId> {
    let sum = g.add(fp, fq)?;
    let prod = g.mul(fp, fq)?;
    let joint = g.concat(&[fp, fq])?;
    let fc = apply(g, fusion, joint)?;
    g.concat(&[sum, prod, fc])
}

fn head_logits(g: &mut Graph, fm: NodeId, hidden: LayerNodes, out: LayerNodes) -> Result<(NodeId, NodeId)> {
    let z = apply(g, hidden, fm)?;
    let a = g.relu(z);
    Ok((z, apply(g, out, a)?))
}

/// Records the full forward pass for a precomputed proposal feature matrix.
pub fn forward_graph(
    params: &ModelParams,
    proposals: &Tensor,
    query: &[f64],
    mode: Mode,
) -> Result<ForwardGraph> {
    let dims = params.dims;
    if proposals.rank() != 2 || proposals.rows() == 0 {
        return Err(Error::shape("forward", format!("proposal matrix {:?}", proposals.shape())));
    }
    if proposals.last_dim() != dims.proposal_width() {
        return Err(Error::shape(
            "forward",
            format!(
                "proposal width {} vs model visual width {} (2*{}+2)",
                proposals.last_dim(),
                dims.proposal_width(),
                dims.visual
            ),
        ));
    }
    if query.len() != dims.query {
        return Err(Error::shape(
            "forward",
            format!("query width {} vs model query width {}", query.len(), dims.query),
        ));
    }
    let n = proposals.rows();
    let mut g = Graph::new();
    let layers: [LayerNodes; 7] = {
        let l = params.layers();
        std::array::from_fn(|i| record_layer(&mut g, l[i]))
    };
    let [visual, text, fusion, a_hidden, a_out, d_hidden, d_out] = layers;

    let xp = g.leaf(proposals.clone());
    let xq = g.leaf(Tensor::vector(query.to_vec()));
    let fp = apply(&mut g, visual, xp)?;
    let fq = apply(&mut g, text, xq)?;
    let fq = g.tile_rows(fq, n)?;
    let fm = fuse_nodes(&mut g, fp, fq, fusion)?;

    let (align_hidden, a_logits) = head_logits(&mut g, fm, a_hidden, a_out)?;
    let sa = g.softmax(a_logits, Axis::LastDim)?;
    let (detect_hidden, d_logits) = head_logits(&mut g, fm, d_hidden, d_out)?;
    let sd = g.softmax(d_logits, Axis::Rows)?;

    let s = match mode {
        Mode::Full => g.mul(sa, sd)?,
        Mode::AlignOnly => sa,
        Mode::DetectOnly => sd,
    };
    let vq = g.reduce_sum(s)?;
    Ok(ForwardGraph {
        graph: g,
        layers,
        fm,
        align_hidden,
        detect_hidden,
        sa,
        sd,
        s,
        vq,
    })
}

/// Forward pass from raw frame features.
pub fn forward(
    params: &ModelParams,
    fv: &FeatureSequence,
    query: &[f64],
    spans: &[TemporalSpan],
    k: usize,
    mode: Mode,
) -> Result<ForwardResult> {
    if fv.dim() != params.dims.visual {
        return Err(Error::shape(
            "forward",
            format!("feature width {} vs model visual width {}", fv.dim(), params.dims.visual),
        ));
    }
    let proposals = proposal_matrix(fv, spans, k)?;
    Ok(forward_graph(params, &proposals, query, mode)?.result())
}

/// `fm` for one projected proposal and query vector.
pub fn fuse(params: &ModelParams, fp: &[f64], fq: &[f64]) -> Result<Vec<f64>> {
    let d = params.dims.d;
    if fp.len() != d || fq.len() != d {
        return Err(Error::shape("fuse", format!("fp {} / fq {} vs d {d}", fp.len(), fq.len())));
    }
    let mut g = Graph::new();
    let fusion = record_layer(&mut g, &params.fusion);
    let fp = g.leaf(Tensor::vector(fp.to_vec()));
    let fq = g.leaf(Tensor::vector(fq.to_vec()));
    let fm = fuse_nodes(&mut g, fp, fq, fusion)?;
    Ok(g.value(fm).data().to_vec())
}

fn head_scores(fm: &Tensor, hidden: &Dense, out: &Dense, axis: Axis) -> Result<Tensor> {
    let mut g = Graph::new();
    let hidden = record_layer(&mut g, hidden);
    let out = record_layer(&mut g, out);
    let x = g.leaf(fm.clone());
    let (_, logits) = head_logits(&mut g, x, hidden, out)?;
    let s = g.softmax(logits, axis)?;
    Ok(g.value(s).clone())
}

/// Alignment branch: per-proposal softmax over {no-match, match}.
pub fn align_scores(params: &ModelParams, fm: &Tensor) -> Result<Tensor> {
    head_scores(fm, &params.align_hidden, &params.align_out, Axis::LastDim)
}

/// Detection branch: per-class softmax across proposals.
pub fn detect_scores(params: &ModelParams, fm: &Tensor) -> Result<Tensor> {
    head_scores(fm, &params.detect_hidden, &params.detect_out, Axis::Rows)
}

/// Proposal indices by descending match score; ties keep the lower index first.
pub fn rank(result: &ForwardResult) -> Vec<usize> {
    rank_scores(&result.match_scores())
}

pub fn rank_scores(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}
