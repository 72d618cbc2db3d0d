//! Dynamically recorded computation graph with reverse-mode gradients.
//!
//! Nodes are appended in evaluation order, so walking the node list
//! backwards visits every node after all of its consumers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::Tensor;
use super::NnError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax { x: Var, axis: usize },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout { x: Var, mask: Vec<f64> },
    Conv1d { x: Var, weight: Var, bias: Var, width: usize },
    MaxPoolTime { x: Var, argmax: Vec<usize> },
    Embedding { table: Var, ids: Vec<usize> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    SpanDiff { x: Var, pairs: Vec<(usize, usize)> },
    WeightedSum { x: Var, weights: Tensor },
    Sum(Var),
    SumSquares(Var),
}

struct Node {
    value: Option<Tensor>,
    op: Op,
}

/// One forward computation. Parameters are read from a shared store and
/// never copied; gradients come back from [`Graph::backward`].
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    training: bool,
    rng: ChaCha8Rng,
    signature: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> NnError {
    NnError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore, training: bool, seed: u64) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
            signature: FNV_OFFSET,
        }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    /// Hash of every discrete choice made so far (ReLU activation pattern,
    /// max-pool winners, and anything passed to [`Graph::mark`]). Two
    /// evaluations with equal signatures lie on the same smooth piece.
    pub fn signature(&self) -> u64 {
        self.signature
    }

    pub fn mark(&mut self, value: u64) {
        for byte in value.to_le_bytes() {
            self.signature ^= byte as u64;
            self.signature = self.signature.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.params.value(id),
            _ => node.value.as_ref().expect("non-parameter nodes own their value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn require_matrix(&self, op: &'static str, v: Var) -> Result<(), NnError> {
        let t = self.value(v);
        if t.is_matrix() {
            Ok(())
        } else {
            Err(shape_err(op, t, t))
        }
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.is_matrix() || !tb.is_matrix() || ta.cols() != tb.rows() {
            return Err(shape_err("matmul", ta, tb));
        }
        let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; n * m];
        let (ad, bd) = (ta.data(), tb.data());
        for i in 0..n {
            let row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let av = ad[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &bd[p * m..(p + 1) * m];
                for (o, bv) in row.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.is_matrix() || !tb.is_matrix() || ta.cols() != tb.cols() {
            return Err(shape_err("matmul_nt", ta, tb));
        }
        let (n, m) = (ta.rows(), tb.rows());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let ar = ta.row(i);
            for j in 0..m {
                out[i * m + j] = dot(ar, tb.row(j));
            }
        }
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::MatMulNT(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", ta, tb));
        }
        let mut out = ta.clone();
        out.add_assign(tb);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("sub", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Adds a `1 × m` bias to every row of an `n × m` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, NnError> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if !tx.is_matrix() || tb.rows() != 1 || tb.cols() != tx.cols() {
            return Err(shape_err("add_bias", tx, tb));
        }
        let mut out = tx.clone();
        let m = tx.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += tb.data()[i % m];
        }
        Ok(self.push(out, Op::AddBias(x, bias)))
    }

    /// `x · w + b`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var, NnError> {
        let h = self.matmul(x, weight)?;
        self.add_bias(h, bias)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= factor);
        self.push(out, Op::Scale(x, factor))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        let mut bits = 0u64;
        let mut count = 0;
        let mut pattern = Vec::with_capacity(out.len() / 64 + 1);
        for v in out.data_mut().iter_mut() {
            if *v <= 0.0 {
                *v = 0.0;
            } else {
                bits |= 1 << count;
            }
            count += 1;
            if count == 64 {
                pattern.push(bits);
                bits = 0;
                count = 0;
            }
        }
        pattern.push(bits);
        for p in pattern {
            self.mark(p);
        }
        self.push(out, Op::Relu(x))
    }

    /// Softmax along `axis` (0 = down columns, 1 = along rows). Reductions
    /// are carried out after subtracting the maximum.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, NnError> {
        let t = self.value(x);
        if !t.is_matrix() || axis > 1 {
            return Err(shape_err("softmax", t, t));
        }
        let (n, m) = (t.rows(), t.cols());
        let mut out = t.clone();
        let (outer, inner, stride_o, stride_i) = if axis == 1 { (n, m, m, 1) } else { (m, n, 1, m) };
        let d = out.data_mut();
        for o in 0..outer {
            let idx = |i: usize| o * stride_o + i * stride_i;
            let max = (0..inner).map(|i| d[idx(i)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for i in 0..inner {
                let e = (d[idx(i)] - max).exp();
                d[idx(i)] = e;
                sum += e;
            }
            for i in 0..inner {
                d[idx(i)] /= sum;
            }
        }
        Ok(self.push(out, Op::Softmax { x, axis }))
    }

    /// Row-wise layer normalization followed by a `1 × m` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, NnError> {
        let (t, g, b) = (self.value(x), self.value(gain), self.value(bias));
        if !t.is_matrix() || g.shape() != [1, t.cols()] || b.shape() != [1, t.cols()] {
            return Err(shape_err("layer_norm", t, g));
        }
        let (n, m) = (t.rows(), t.cols());
        let mut normed = vec![0.0; n * m];
        let mut inv_std = vec![0.0; n];
        let mut out = vec![0.0; n * m];
        for r in 0..n {
            let row = t.row(r);
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..m {
                let z = (row[c] - mean) * is;
                normed[r * m + c] = z;
                out[r * m + c] = z * g.data()[c] + b.data()[c];
            }
        }
        let out = Tensor::matrix(n, m, out)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
        ))
    }

    /// Inverted dropout; the identity outside training mode.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Var {
        if !self.training || rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        self.push(out, Op::Dropout { x, mask })
    }

    /// Same-padded 1-D convolution over time. `x` is `time × channels`,
    /// `weight` is `filters × (width · channels)` with tap-major layout and
    /// `bias` is `1 × filters`.
    pub fn conv1d(&mut self, x: Var, weight: Var, bias: Var, width: usize) -> Result<Var, NnError> {
        let (tx, tw, tb) = (self.value(x), self.value(weight), self.value(bias));
        let cin = tx.cols();
        if width == 0 || tw.cols() != width * cin || tb.shape() != [1, tw.rows()] {
            return Err(shape_err("conv1d", tx, tw));
        }
        let (len, filters) = (tx.rows(), tw.rows());
        let pad = (width - 1) / 2;
        let mut out = vec![0.0; len * filters];
        for t in 0..len {
            for f in 0..filters {
                let w = tw.row(f);
                let mut acc = tb.data()[f];
                for k in 0..width {
                    let src = t + k;
                    if src < pad || src - pad >= len {
                        continue;
                    }
                    acc += dot(&w[k * cin..(k + 1) * cin], tx.row(src - pad));
                }
                out[t * filters + f] = acc;
            }
        }
        let out = Tensor::matrix(len, filters, out)?;
        Ok(self.push(
            out,
            Op::Conv1d {
                x,
                weight,
                bias,
                width,
            },
        ))
    }

    /// Column-wise maximum over the time (row) axis: `n × m` → `1 × m`.
    /// Ties go to the earliest row.
    pub fn max_pool_time(&mut self, x: Var) -> Result<Var, NnError> {
        let t = self.value(x);
        if !t.is_matrix() || t.rows() == 0 {
            return Err(shape_err("max_pool_time", t, t));
        }
        let m = t.cols();
        let mut argmax = vec![0usize; m];
        let mut out = vec![f64::NEG_INFINITY; m];
        for r in 0..t.rows() {
            for (c, v) in t.row(r).iter().enumerate() {
                if *v > out[c] {
                    out[c] = *v;
                    argmax[c] = r;
                }
            }
        }
        for &a in &argmax {
            self.mark(a as u64);
        }
        let out = Tensor::row_vector(out);
        Ok(self.push(out, Op::MaxPoolTime { x, argmax }))
    }

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, NnError> {
        let t = self.value(table);
        if let Some(bad) = ids.iter().find(|&&i| i >= t.rows()) {
            return Err(NnError::Data(format!(
                "embedding index {bad} out of range for {} rows",
                t.rows()
            )));
        }
        let m = t.cols();
        let mut out = Vec::with_capacity(ids.len() * m);
        for &i in ids {
            out.extend_from_slice(t.row(i));
        }
        let out = Tensor::matrix(ids.len(), m, out)?;
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Concatenation along `axis` (0 = stack rows, 1 = join columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, NnError> {
        match axis {
            0 => self.concat_rows(parts),
            1 => self.concat_cols(parts),
            _ => Err(NnError::Data(format!("concat axis {axis} out of range"))),
        }
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let first = self.value(parts[0]);
        let n = first.rows();
        for &p in parts {
            let t = self.value(p);
            if !t.is_matrix() || t.rows() != n {
                return Err(shape_err("concat_cols", first, t));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::matrix(n, total, out)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let first = self.value(parts[0]);
        let m = first.cols();
        for &p in parts {
            let t = self.value(p);
            if !t.is_matrix() || t.cols() != m {
                return Err(shape_err("concat_rows", first, t));
            }
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let n = out.len() / m.max(1);
        let out = Tensor::matrix(n, m, out)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, NnError> {
        self.require_matrix("slice_cols", x)?;
        let t = self.value(x);
        if start > end || end > t.cols() {
            return Err(NnError::Data(format!(
                "slice_cols {start}..{end} out of range for {:?}",
                t.shape()
            )));
        }
        let mut out = Vec::with_capacity(t.rows() * (end - start));
        for r in 0..t.rows() {
            out.extend_from_slice(&t.row(r)[start..end]);
        }
        let out = Tensor::matrix(t.rows(), end - start, out)?;
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var, NnError> {
        self.require_matrix("slice_rows", x)?;
        let t = self.value(x);
        if start > end || end > t.rows() {
            return Err(NnError::Data(format!(
                "slice_rows {start}..{end} out of range for {:?}",
                t.shape()
            )));
        }
        let m = t.cols();
        let out = Tensor::matrix(end - start, m, t.data()[start * m..end * m].to_vec())?;
        Ok(self.push(out, Op::SliceRows { x, start }))
    }

    /// Row `i` of the result is `x[end_i] - x[start_i]`.
    pub fn span_diff(&mut self, x: Var, pairs: &[(usize, usize)]) -> Result<Var, NnError> {
        self.require_matrix("span_diff", x)?;
        let t = self.value(x);
        let m = t.cols();
        let mut out = Vec::with_capacity(pairs.len() * m);
        for &(a, b) in pairs {
            if a >= t.rows() || b >= t.rows() {
                return Err(NnError::Data(format!(
                    "span ({a}, {b}) out of range for {} fenceposts",
                    t.rows()
                )));
            }
            out.extend(t.row(b).iter().zip(t.row(a)).map(|(hi, lo)| hi - lo));
        }
        let out = Tensor::matrix(pairs.len(), m, out)?;
        Ok(self.push(
            out,
            Op::SpanDiff {
                x,
                pairs: pairs.to_vec(),
            },
        ))
    }

    /// `Σ x ⊙ weights` as a `1 × 1` tensor.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor) -> Result<Var, NnError> {
        let t = self.value(x);
        if t.shape() != weights.shape() {
            return Err(shape_err("weighted_sum", t, &weights));
        }
        let s = dot(t.data(), weights.data());
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { x, weights }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|v| v * v).sum();
        self.push(Tensor::scalar(s), Op::SumSquares(x))
    }

    /// Reverse pass from a `1 × 1` output.
    pub fn backward(&self, output: Var) -> Result<Gradients, NnError> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(NnError::Data(format!(
                "backward needs a scalar output, got shape {:?}",
                out.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::scalar(1.0));
        let mut by_param: Vec<Option<Tensor>> = vec![None; self.params.len()];

        for idx in (0..=output.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => match &mut by_param[id.0] {
                    Some(g) => g.add_assign(&dy),
                    slot @ None => *slot = Some(dy),
                },
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
                    let ga = acc(&mut grads, *a, ta);
                    for i in 0..n {
                        let dyr = dy.row(i);
                        for p in 0..k {
                            ga[i * k + p] += dot(dyr, tb.row(p));
                        }
                    }
                    let gb = acc(&mut grads, *b, tb);
                    for i in 0..n {
                        let dyr = dy.row(i);
                        for p in 0..k {
                            let av = ta.data()[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for (g, d) in gb[p * m..(p + 1) * m].iter_mut().zip(dyr) {
                                *g += av * d;
                            }
                        }
                    }
                }
                Op::MatMulNT(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (n, k, m) = (ta.rows(), ta.cols(), tb.rows());
                    let ga = acc(&mut grads, *a, ta);
                    for i in 0..n {
                        for j in 0..m {
                            let d = dy.data()[i * m + j];
                            if d == 0.0 {
                                continue;
                            }
                            for (g, bv) in ga[i * k..(i + 1) * k].iter_mut().zip(tb.row(j)) {
                                *g += d * bv;
                            }
                        }
                    }
                    let gb = acc(&mut grads, *b, tb);
                    for i in 0..n {
                        for j in 0..m {
                            let d = dy.data()[i * m + j];
                            if d == 0.0 {
                                continue;
                            }
                            for (g, av) in gb[j * k..(j + 1) * k].iter_mut().zip(ta.row(i)) {
                                *g += d * av;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut grads, *a, &dy), dy.data(), 1.0);
                    add_into(acc(&mut grads, *b, &dy), dy.data(), 1.0);
                }
                Op::Sub(a, b) => {
                    add_into(acc(&mut grads, *a, &dy), dy.data(), 1.0);
                    add_into(acc(&mut grads, *b, &dy), dy.data(), -1.0);
                }
                Op::AddBias(x, b) => {
                    add_into(acc(&mut grads, *x, &dy), dy.data(), 1.0);
                    let tb = self.value(*b);
                    let m = tb.cols();
                    let gb = acc(&mut grads, *b, tb);
                    for (i, d) in dy.data().iter().enumerate() {
                        gb[i % m] += d;
                    }
                }
                Op::Scale(x, f) => add_into(acc(&mut grads, *x, &dy), dy.data(), *f),
                Op::Relu(x) => {
                    let y = node.value.as_ref().unwrap();
                    let gx = acc(&mut grads, *x, y);
                    for ((g, d), yv) in gx.iter_mut().zip(dy.data()).zip(y.data()) {
                        if *yv > 0.0 {
                            *g += d;
                        }
                    }
                }
                Op::Softmax { x, axis } => {
                    let y = node.value.as_ref().unwrap();
                    let (n, m) = (y.rows(), y.cols());
                    let (outer, inner, so, si) =
                        if *axis == 1 { (n, m, m, 1) } else { (m, n, 1, m) };
                    let gx = acc(&mut grads, *x, y);
                    for o in 0..outer {
                        let idx = |i: usize| o * so + i * si;
                        let s: f64 = (0..inner).map(|i| dy.data()[idx(i)] * y.data()[idx(i)]).sum();
                        for i in 0..inner {
                            gx[idx(i)] += y.data()[idx(i)] * (dy.data()[idx(i)] - s);
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normed,
                    inv_std,
                } => {
                    let tg = self.value(*gain);
                    let (n, m) = (inv_std.len(), tg.cols());
                    {
                        let gg = acc(&mut grads, *gain, tg);
                        for r in 0..n {
                            for c in 0..m {
                                gg[c] += dy.data()[r * m + c] * normed[r * m + c];
                            }
                        }
                    }
                    {
                        let gb = acc(&mut grads, *bias, tg);
                        for row in dy.data().chunks(m).take(n) {
                            for (g, d) in gb.iter_mut().zip(row) {
                                *g += d;
                            }
                        }
                    }
                    let tx = self.value(*x);
                    let gx = acc(&mut grads, *x, tx);
                    let mut dn = vec![0.0; m];
                    for r in 0..n {
                        let mut mean_dn = 0.0;
                        let mut mean_dn_n = 0.0;
                        for c in 0..m {
                            dn[c] = dy.data()[r * m + c] * tg.data()[c];
                            mean_dn += dn[c];
                            mean_dn_n += dn[c] * normed[r * m + c];
                        }
                        mean_dn /= m as f64;
                        mean_dn_n /= m as f64;
                        for c in 0..m {
                            gx[r * m + c] +=
                                inv_std[r] * (dn[c] - mean_dn - normed[r * m + c] * mean_dn_n);
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    let gx = acc(&mut grads, *x, &dy);
                    for ((g, d), mk) in gx.iter_mut().zip(dy.data()).zip(mask) {
                        *g += d * mk;
                    }
                }
                Op::Conv1d {
                    x,
                    weight,
                    bias,
                    width,
                } => {
                    let (tx, tw) = (self.value(*x), self.value(*weight));
                    let (len, cin, filters) = (tx.rows(), tx.cols(), tw.rows());
                    let pad = (width - 1) / 2;
                    {
                        let gb = acc(&mut grads, *bias, self.value(*bias));
                        for row in dy.data().chunks(filters).take(len) {
                            for (g, d) in gb.iter_mut().zip(row) {
                                *g += d;
                            }
                        }
                    }
                    {
                        let gw = acc(&mut grads, *weight, tw);
                        for t in 0..len {
                            for f in 0..filters {
                                let d = dy.data()[t * filters + f];
                                if d == 0.0 {
                                    continue;
                                }
                                for k in 0..*width {
                                    let src = t + k;
                                    if src < pad || src - pad >= len {
                                        continue;
                                    }
                                    let xr = tx.row(src - pad);
                                    let base = f * width * cin + k * cin;
                                    for c in 0..cin {
                                        gw[base + c] += d * xr[c];
                                    }
                                }
                            }
                        }
                    }
                    let gx = acc(&mut grads, *x, tx);
                    for t in 0..len {
                        for f in 0..filters {
                            let d = dy.data()[t * filters + f];
                            if d == 0.0 {
                                continue;
                            }
                            let w = tw.row(f);
                            for k in 0..*width {
                                let src = t + k;
                                if src < pad || src - pad >= len {
                                    continue;
                                }
                                let s = src - pad;
                                for c in 0..cin {
                                    gx[s * cin + c] += d * w[k * cin + c];
                                }
                            }
                        }
                    }
                }
                Op::MaxPoolTime { x, argmax } => {
                    let tx = self.value(*x);
                    let m = tx.cols();
                    let gx = acc(&mut grads, *x, tx);
                    for (c, &r) in argmax.iter().enumerate() {
                        gx[r * m + c] += dy.data()[c];
                    }
                }
                Op::Embedding { table, ids } => {
                    let tt = self.value(*table);
                    let m = tt.cols();
                    let gt = acc(&mut grads, *table, tt);
                    for (row, &id) in ids.iter().enumerate() {
                        for c in 0..m {
                            gt[id * m + c] += dy.data()[row * m + c];
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = dy.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let tp = self.value(p);
                        let w = tp.cols();
                        let gp = acc(&mut grads, p, tp);
                        for r in 0..tp.rows() {
                            for c in 0..w {
                                gp[r * w + c] += dy.data()[r * total + offset + c];
                            }
                        }
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let tp = self.value(p);
                        let n = tp.len();
                        add_into(acc(&mut grads, p, tp), &dy.data()[offset..offset + n], 1.0);
                        offset += n;
                    }
                }
                Op::SliceCols { x, start } => {
                    let tx = self.value(*x);
                    let (full, w) = (tx.cols(), dy.cols());
                    let gx = acc(&mut grads, *x, tx);
                    for r in 0..dy.rows() {
                        for c in 0..w {
                            gx[r * full + start + c] += dy.data()[r * w + c];
                        }
                    }
                }
                Op::SliceRows { x, start } => {
                    let tx = self.value(*x);
                    let m = tx.cols();
                    let gx = acc(&mut grads, *x, tx);
                    add_into(&mut gx[start * m..start * m + dy.len()], dy.data(), 1.0);
                }
                Op::SpanDiff { x, pairs } => {
                    let tx = self.value(*x);
                    let m = tx.cols();
                    let gx = acc(&mut grads, *x, tx);
                    for (i, &(a, b)) in pairs.iter().enumerate() {
                        for c in 0..m {
                            let d = dy.data()[i * m + c];
                            gx[b * m + c] += d;
                            gx[a * m + c] -= d;
                        }
                    }
                }
                Op::WeightedSum { x, weights } => {
                    let d = dy.data()[0];
                    add_into(acc(&mut grads, *x, weights), weights.data(), d);
                }
                Op::Sum(x) => {
                    let d = dy.data()[0];
                    let tx = self.value(*x);
                    acc(&mut grads, *x, tx).iter_mut().for_each(|g| *g += d);
                }
                Op::SumSquares(x) => {
                    let d = dy.data()[0];
                    let tx = self.value(*x);
                    let gx = acc(&mut grads, *x, tx);
                    for (g, v) in gx.iter_mut().zip(tx.data()) {
                        *g += 2.0 * v * d;
                    }
                }
            }
        }
        Ok(Gradients { by_param })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(dst: &mut [f64], src: &[f64], factor: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += factor * s;
    }
}

/// Gradient buffer for `v`, created with the shape of `like` on first use.
fn acc<'g>(grads: &'g mut [Option<Tensor>], v: Var, like: &Tensor) -> &'g mut [f64] {
    grads[v.0]
        .get_or_insert_with(|| Tensor::zeros_like(like))
        .data_mut()
}
