use super::tensor::{ordered_sum, Tensor};
use crate::error::{Error, Result};

/// Probability floor applied before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a value recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Softmax direction for a matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Normalize each row over the last dimension.
    LastDim,
    /// Normalize each column over the rows (across proposals).
    Rows,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Linear { w: NodeId, b: NodeId, x: NodeId },
    Relu(NodeId),
    Softmax(NodeId, Axis),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Concat(Vec<NodeId>),
    MeanPool { x: NodeId, start: usize, end: usize },
    ReduceSum(NodeId),
    SumAll(NodeId),
    TileRows(NodeId),
    Column(NodeId, usize),
    Max { x: NodeId, arg: usize },
    NormalizedNll { x: NodeId, target: usize, eps: f64 },
    RowNllMean { x: NodeId, target: usize },
    BinaryNll { p: NodeId, label: bool },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Linear { .. } => "linear",
            Op::Relu(_) => "relu",
            Op::Softmax(..) => "softmax",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Concat(_) => "concat",
            Op::MeanPool { .. } => "mean_pool",
            Op::ReduceSum(_) => "reduce_sum",
            Op::SumAll(_) => "sum",
            Op::TileRows(_) => "tile_rows",
            Op::Column(..) => "column",
            Op::Max { .. } => "max",
            Op::NormalizedNll { .. } => "normalized_nll",
            Op::RowNllMean { .. } => "row_nll_mean",
            Op::BinaryNll { .. } => "binary_nll",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only record of a forward computation.
///
/// Every node is pushed after its inputs, so the node order is a valid
/// topological order and [`Graph::backward`] walks it in reverse.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradient of one scalar with respect to every recorded value.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn take(&mut self, id: NodeId) -> Tensor {
        std::mem::replace(&mut self.grads[id.0], Tensor::scalar(0.0))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// `y = W x + b`, applied to every row of `x`.
    pub fn linear(&mut self, w: NodeId, b: NodeId, x: NodeId) -> Result<NodeId> {
        let (wv, bv, xv) = (self.value(w), self.value(b), self.value(x));
        if wv.rank() != 2 {
            return Err(Error::shape("linear", format!("weight must be a matrix, got {:?}", wv.shape())));
        }
        let (m, n) = (wv.shape()[0], wv.shape()[1]);
        if bv.shape() != [m] {
            return Err(Error::shape("linear", format!("weight {m}x{n} vs bias {:?}", bv.shape())));
        }
        if xv.rank() == 0 || xv.rank() > 2 || xv.last_dim() != n {
            return Err(Error::shape("linear", format!("weight {m}x{n} vs input {:?}", xv.shape())));
        }
        let rows = xv.rows();
        let (wd, bd, xd) = (wv.data(), bv.data(), xv.data());
        let mut out = Vec::with_capacity(rows * m);
        for r in 0..rows {
            let xr = &xd[r * n..(r + 1) * n];
            for i in 0..m {
                let wr = &wd[i * n..(i + 1) * n];
                let dot: f64 = wr.iter().zip(xr).map(|(a, b)| a * b).sum();
                out.push(dot + bd[i]);
            }
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = m;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Linear { w, b, x }))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        // NaN passes through so bad inputs surface in the loss.
        let data = xv.data().iter().map(|&v| if v.is_nan() { v } else { v.max(0.0) }).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Relu(x))
    }

    pub fn softmax(&mut self, x: NodeId, axis: Axis) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() == 0 || xv.rank() > 2 {
            return Err(Error::shape("softmax", format!("expected vector or matrix, got {:?}", xv.shape())));
        }
        let (rows, cols) = (xv.rows(), xv.last_dim());
        let mut out = vec![0.0; xv.len()];
        match axis {
            Axis::LastDim => {
                for r in 0..rows {
                    softmax_into(xv.row(r), &mut out[r * cols..(r + 1) * cols]);
                }
            }
            Axis::Rows => {
                for c in 0..cols {
                    let col = xv.column(c);
                    let mut sm = vec![0.0; rows];
                    softmax_into(&col, &mut sm);
                    for (r, v) in sm.into_iter().enumerate() {
                        out[r * cols + c] = v;
                    }
                }
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Softmax(x, axis)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let data = self.zip_same("add", a, b, |x, y| x + y)?;
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let data = self.zip_same("mul", a, b, |x, y| x * y)?;
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    fn zip_same(
        &self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Vec<f64>> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(op, format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        Ok(av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect())
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Scale(x, factor))
    }

    /// Concatenates along the last dimension.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no parts"))?;
        let lead = self.value(*first).shape().to_vec();
        if lead.is_empty() {
            return Err(Error::shape("concat", "cannot concatenate scalars"));
        }
        let lead = &lead[..lead.len() - 1];
        let rows = self.value(*first).rows();
        let mut total = 0;
        for (i, p) in parts.iter().enumerate() {
            let s = self.value(*p).shape();
            if s.is_empty() || &s[..s.len() - 1] != lead {
                return Err(Error::shape(
                    "concat",
                    format!("part 0 {:?} vs part {i} {s:?}", self.value(*first).shape()),
                ));
            }
            total += s[s.len() - 1];
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                out.extend_from_slice(self.value(*p).row(r));
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Concat(parts.to_vec())))
    }

    /// Mean of rows `start..end` of a `T x D` matrix (half-open range).
    pub fn mean_pool(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(Error::shape("mean_pool", format!("expected matrix, got {:?}", xv.shape())));
        }
        if start >= end || end > xv.rows() {
            return Err(Error::range(
                "mean_pool",
                format!("[{start}, {end}) over {} rows", xv.rows()),
            ));
        }
        let value = Tensor::vector(mean_rows(xv, start, end));
        Ok(self.push(value, Op::MeanPool { x, start, end }))
    }

    /// Column sums of an `n x c` matrix, independent of row order.
    pub fn reduce_sum(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(Error::shape("reduce_sum", format!("expected matrix, got {:?}", xv.shape())));
        }
        let data = (0..xv.last_dim()).map(|c| ordered_sum(xv.column(c))).collect();
        Ok(self.push(Tensor::vector(data), Op::ReduceSum(x)))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), Op::SumAll(x))
    }

    /// Repeats a vector as `rows` identical rows.
    pub fn tile_rows(&mut self, x: NodeId, rows: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() != 1 {
            return Err(Error::shape("tile_rows", format!("expected vector, got {:?}", xv.shape())));
        }
        let value = Tensor::matrix(rows, xv.len(), xv.data().repeat(rows))?;
        Ok(self.push(value, Op::TileRows(x)))
    }

    pub fn column(&mut self, x: NodeId, col: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() != 2 || col >= xv.last_dim() {
            return Err(Error::shape("column", format!("column {col} of {:?}", xv.shape())));
        }
        let value = Tensor::vector(xv.column(col));
        Ok(self.push(value, Op::Column(x, col)))
    }

    /// Largest element of a vector; ties go to the lowest index.
    pub fn max(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() != 1 || xv.is_empty() {
            return Err(Error::shape("max", format!("expected non-empty vector, got {:?}", xv.shape())));
        }
        let arg = argmax_first(xv.data());
        let value = Tensor::scalar(xv.data()[arg]);
        Ok(self.push(value, Op::Max { x, arg }))
    }

    /// `-ln((x[target] + eps) / (sum(x) + m * eps))` for a non-negative vector of length `m`.
    pub fn normalized_nll(&mut self, x: NodeId, target: usize, eps: f64) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() != 1 || target >= xv.len() {
            return Err(Error::shape(
                "normalized_nll",
                format!("target {target} for {:?}", xv.shape()),
            ));
        }
        let total: f64 = xv.data().iter().sum::<f64>() + eps * xv.len() as f64;
        let loss = -((xv.data()[target] + eps) / total).ln();
        Ok(self.push(Tensor::scalar(loss), Op::NormalizedNll { x, target, eps }))
    }

    /// Mean over rows of `-ln(max(x[r, target], PROB_FLOOR))`.
    pub fn row_nll_mean(&mut self, x: NodeId, target: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() != 2 || target >= xv.last_dim() {
            return Err(Error::shape(
                "row_nll_mean",
                format!("target {target} for {:?}", xv.shape()),
            ));
        }
        let rows = xv.rows();
        let loss = (0..rows)
            .map(|r| -xv.at(r, target).max(PROB_FLOOR).ln())
            .sum::<f64>()
            / rows as f64;
        Ok(self.push(Tensor::scalar(loss), Op::RowNllMean { x, target }))
    }

    /// Two-class cross-entropy on the scores `[1 - p, p]`.
    pub fn binary_nll(&mut self, p: NodeId, label: bool) -> Result<NodeId> {
        let pv = self.value(p);
        if pv.len() != 1 {
            return Err(Error::shape("binary_nll", format!("expected scalar, got {:?}", pv.shape())));
        }
        let q = if label { pv.item() } else { 1.0 - pv.item() };
        let loss = -q.max(PROB_FLOOR).ln();
        Ok(self.push(Tensor::scalar(loss), Op::BinaryNll { p, label }))
    }

    /// Reverse-mode sweep from a scalar node.
    ///
    /// Returns gradients for every node in the graph; nodes the loss does
    /// not depend on get zero gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::shape("backward", format!("loss must be scalar, got {:?}", lv.shape())));
        }
        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.shape()))
            .collect();
        grads[loss.0].data_mut()[0] = 1.0;

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let g = std::mem::replace(&mut grads[idx], Tensor::scalar(0.0));
            if g.data().iter().all(|&v| v == 0.0) {
                grads[idx] = g;
                continue;
            }
            self.backprop_node(node, &g, &mut grads)
                .map_err(|e| Error::shape(node.op.name(), e.to_string()))?;
            grads[idx] = g;
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Tensor]) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Linear { w, b, x } => {
                let (wv, xv) = (self.value(*w), self.value(*x));
                let (m, n) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.rows();
                let (wd, xd) = (wv.data(), xv.data());
                {
                    let dx = grads[x.0].data_mut();
                    for r in 0..rows {
                        let gr = &gd[r * m..(r + 1) * m];
                        let dxr = &mut dx[r * n..(r + 1) * n];
                        for (i, &gi) in gr.iter().enumerate() {
                            if gi == 0.0 {
                                continue;
                            }
                            let wr = &wd[i * n..(i + 1) * n];
                            for (d, &wv) in dxr.iter_mut().zip(wr) {
                                *d += gi * wv;
                            }
                        }
                    }
                }
                {
                    let dw = grads[w.0].data_mut();
                    for r in 0..rows {
                        let gr = &gd[r * m..(r + 1) * m];
                        let xr = &xd[r * n..(r + 1) * n];
                        for (i, &gi) in gr.iter().enumerate() {
                            if gi == 0.0 {
                                continue;
                            }
                            let dwr = &mut dw[i * n..(i + 1) * n];
                            for (d, &xv) in dwr.iter_mut().zip(xr) {
                                *d += gi * xv;
                            }
                        }
                    }
                }
                let db = grads[b.0].data_mut();
                for r in 0..rows {
                    for (d, &gi) in db.iter_mut().zip(&gd[r * m..(r + 1) * m]) {
                        *d += gi;
                    }
                }
            }
            Op::Relu(x) => {
                let xd = self.value(*x).data();
                let dx = grads[x.0].data_mut();
                for ((d, &xv), &gv) in dx.iter_mut().zip(xd).zip(gd) {
                    if xv > 0.0 {
                        *d += gv;
                    }
                }
            }
            Op::Softmax(x, axis) => {
                let y = &node.value;
                let (rows, cols) = (y.rows(), y.last_dim());
                let yd = y.data();
                let dx = grads[x.0].data_mut();
                match axis {
                    Axis::LastDim => {
                        for r in 0..rows {
                            let span = r * cols..(r + 1) * cols;
                            let dot: f64 = yd[span.clone()].iter().zip(&gd[span.clone()]).map(|(a, b)| a * b).sum();
                            for i in span {
                                dx[i] += yd[i] * (gd[i] - dot);
                            }
                        }
                    }
                    Axis::Rows => {
                        for c in 0..cols {
                            let dot: f64 = (0..rows).map(|r| yd[r * cols + c] * gd[r * cols + c]).sum();
                            for r in 0..rows {
                                let i = r * cols + c;
                                dx[i] += yd[i] * (gd[i] - dot);
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                grads[a.0].add_assign(g);
                grads[b.0].add_assign(g);
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                for ((d, &bv), &gv) in grads[a.0].data_mut().iter_mut().zip(bd).zip(gd) {
                    *d += gv * bv;
                }
                for ((d, &av), &gv) in grads[b.0].data_mut().iter_mut().zip(ad).zip(gd) {
                    *d += gv * av;
                }
            }
            Op::Scale(x, factor) => {
                for (d, &gv) in grads[x.0].data_mut().iter_mut().zip(gd) {
                    *d += gv * factor;
                }
            }
            Op::Concat(parts) => {
                let rows = node.value.rows();
                let total = node.value.last_dim();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).last_dim();
                    let dp = grads[p.0].data_mut();
                    for r in 0..rows {
                        for j in 0..w {
                            dp[r * w + j] += gd[r * total + offset + j];
                        }
                    }
                    offset += w;
                }
            }
            Op::MeanPool { x, start, end } => {
                let cols = self.value(*x).last_dim();
                let inv = 1.0 / (end - start) as f64;
                let dx = grads[x.0].data_mut();
                for r in *start..*end {
                    for j in 0..cols {
                        dx[r * cols + j] += gd[j] * inv;
                    }
                }
            }
            Op::ReduceSum(x) => {
                let cols = self.value(*x).last_dim();
                for (i, d) in grads[x.0].data_mut().iter_mut().enumerate() {
                    *d += gd[i % cols];
                }
            }
            Op::SumAll(x) => {
                for d in grads[x.0].data_mut() {
                    *d += gd[0];
                }
            }
            Op::TileRows(x) => {
                let cols = self.value(*x).len();
                let dx = grads[x.0].data_mut();
                for (i, &gv) in gd.iter().enumerate() {
                    dx[i % cols] += gv;
                }
            }
            Op::Column(x, col) => {
                let cols = self.value(*x).last_dim();
                let dx = grads[x.0].data_mut();
                for (r, &gv) in gd.iter().enumerate() {
                    dx[r * cols + col] += gv;
                }
            }
            Op::Max { x, arg } => {
                grads[x.0].data_mut()[*arg] += gd[0];
            }
            Op::NormalizedNll { x, target, eps } => {
                let xd = self.value(*x).data();
                let total: f64 = xd.iter().sum::<f64>() + eps * xd.len() as f64;
                let dx = grads[x.0].data_mut();
                for (i, d) in dx.iter_mut().enumerate() {
                    let mut v = 1.0 / total;
                    if i == *target {
                        v -= 1.0 / (xd[i] + eps);
                    }
                    *d += gd[0] * v;
                }
            }
            Op::RowNllMean { x, target } => {
                let xv = self.value(*x);
                let (rows, cols) = (xv.rows(), xv.last_dim());
                let xd = xv.data();
                let dx = grads[x.0].data_mut();
                for r in 0..rows {
                    let p = xd[r * cols + target];
                    if p > PROB_FLOOR {
                        dx[r * cols + target] -= gd[0] / (p * rows as f64);
                    }
                }
            }
            Op::BinaryNll { p, label } => {
                let pv = self.value(*p).item();
                let q = if *label { pv } else { 1.0 - pv };
                if q > PROB_FLOOR {
                    let dq = -gd[0] / q;
                    grads[p.0].data_mut()[0] += if *label { dq } else { -dq };
                }
            }
        }
        Ok(())
    }
}

fn softmax_into(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
    }
    let total = ordered_sum(out.iter().copied());
    for o in out.iter_mut() {
        *o /= total;
    }
}

pub(crate) fn mean_rows(x: &Tensor, start: usize, end: usize) -> Vec<f64> {
    let cols = x.last_dim();
    let mut acc = vec![0.0; cols];
    for r in start..end {
        for (a, v) in acc.iter_mut().zip(x.row(r)) {
            *a += v;
        }
    }
    let inv = (end - start) as f64;
    acc.iter_mut().for_each(|a| *a /= inv);
    acc
}

/// Index of the largest value; the first one wins ties.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
