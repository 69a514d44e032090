//! Recording tape with exact reverse-mode adjoints.
//!
//! Every primitive appends one node holding its output value. Values are never
//! mutated once recorded; [`Tape::backward`] only reads the tape and returns a
//! fresh [`Adjoints`] table with one matrix per recorded value.

use crate::error::{Error, Result};

use super::matrix::{dot, softmax_rows_masked, AttentionMask, Matrix};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ValueId(usize);

impl ValueId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(ValueId, ValueId),
    /// `a · bᵀ`
    MatMulNt(ValueId, ValueId),
    Add(ValueId, ValueId),
    Scale(ValueId, f64),
    Relu(ValueId),
    Softmax {
        input: ValueId,
        mask: Option<AttentionMask>,
    },
    LayerNorm {
        input: ValueId,
        gamma: ValueId,
        beta: ValueId,
        eps: f64,
    },
    Gather {
        table: ValueId,
        ids: Vec<usize>,
    },
    SliceCols {
        input: ValueId,
        start: usize,
    },
    ConcatCols(Vec<ValueId>),
    MeanLogLikelihood {
        logits: ValueId,
        targets: Vec<Option<usize>>,
    },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Matrix,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoint of the terminal scalar with respect to every recorded value.
#[derive(Clone, Debug)]
pub struct Adjoints {
    values: Vec<Matrix>,
}

impl Adjoints {
    pub fn get(&self, id: ValueId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// All recorded values in recording order.
    pub fn values(&self) -> impl Iterator<Item = &Matrix> {
        self.nodes.iter().map(|n| &n.value)
    }

    fn push(&mut self, op: Op, value: Matrix) -> ValueId {
        debug_assert!(value.is_finite(), "non-finite value recorded by {op:?}");
        self.nodes.push(Node { op, value });
        ValueId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> ValueId {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    pub fn matmul_nt(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let out = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(Op::MatMulNt(a, b), out))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn scale(&mut self, a: ValueId, factor: f64) -> ValueId {
        let out = self.value(a).scale(factor);
        self.push(Op::Scale(a, factor), out)
    }

    pub fn relu(&mut self, a: ValueId) -> ValueId {
        let out = self.value(a).relu();
        self.push(Op::Relu(a), out)
    }

    pub fn softmax_rows(&mut self, input: ValueId, mask: Option<AttentionMask>) -> Result<ValueId> {
        let m = self.value(input);
        if let Some(mask) = &mask {
            if mask.key_allowed.len() != m.cols() {
                return Err(Error::Shape(format!(
                    "mask covers {} keys, scores have {} columns",
                    mask.key_allowed.len(),
                    m.cols()
                )));
            }
        }
        let out = softmax_rows_masked(m, mask.as_ref());
        Ok(self.push(Op::Softmax { input, mask }, out))
    }

    /// Row-wise layer normalisation with learned `gamma`, `beta` (both `1 x d`).
    pub fn layer_norm(&mut self, input: ValueId, gamma: ValueId, beta: ValueId, eps: f64) -> Result<ValueId> {
        let x = self.value(input);
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.shape() != (1, x.cols()) || b.shape() != (1, x.cols()) {
            return Err(x.dim_err("layer_norm", g));
        }
        let out = layer_norm_forward(x, g, b, eps);
        Ok(self.push(
            Op::LayerNorm {
                input,
                gamma,
                beta,
                eps,
            },
            out,
        ))
    }

    pub fn gather(&mut self, table: ValueId, ids: &[usize]) -> Result<ValueId> {
        let out = self.value(table).gather_rows(ids)?;
        Ok(self.push(
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            out,
        ))
    }

    pub fn slice_cols(&mut self, input: ValueId, start: usize, len: usize) -> Result<ValueId> {
        let out = self.value(input).slice_cols(start, len)?;
        Ok(self.push(Op::SliceCols { input, start }, out))
    }

    pub fn concat_cols(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Matrix::concat_cols(&mats)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), out))
    }

    /// Mean over rows with a target of `log softmax(logits[row])[target]`; a `1 x 1` value.
    pub fn mean_log_likelihood(&mut self, logits: ValueId, targets: &[Option<usize>]) -> Result<ValueId> {
        let z = self.value(logits);
        if targets.len() != z.rows() {
            return Err(Error::Shape(format!(
                "{} targets for {} logit rows",
                targets.len(),
                z.rows()
            )));
        }
        if let Some(t) = targets.iter().flatten().find(|&&t| t >= z.cols()) {
            return Err(Error::Shape(format!("target id {t} outside vocabulary of {}", z.cols())));
        }
        let value = mean_log_likelihood_forward(z, targets);
        Ok(self.push(
            Op::MeanLogLikelihood {
                logits,
                targets: targets.to_vec(),
            },
            Matrix::scalar(value),
        ))
    }

    /// Recomputes every non-leaf value from the recorded leaves.
    pub fn replay(&self) -> Result<Vec<Matrix>> {
        let mut vals: Vec<Matrix> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = |id: &ValueId| &vals[id.0];
            let out = match &node.op {
                Op::Leaf => node.value.clone(),
                Op::MatMul(a, b) => v(a).matmul(v(b))?,
                Op::MatMulNt(a, b) => v(a).matmul_nt(v(b))?,
                Op::Add(a, b) => v(a).add(v(b))?,
                Op::Scale(a, f) => v(a).scale(*f),
                Op::Relu(a) => v(a).relu(),
                Op::Softmax { input, mask } => softmax_rows_masked(v(input), mask.as_ref()),
                Op::LayerNorm {
                    input,
                    gamma,
                    beta,
                    eps,
                } => layer_norm_forward(v(input), v(gamma), v(beta), *eps),
                Op::Gather { table, ids } => v(table).gather_rows(ids)?,
                Op::SliceCols { input, start } => v(input).slice_cols(*start, node.value.cols())?,
                Op::ConcatCols(parts) => {
                    let mats: Vec<&Matrix> = parts.iter().map(v).collect();
                    Matrix::concat_cols(&mats)?
                }
                Op::MeanLogLikelihood { logits, targets } => {
                    Matrix::scalar(mean_log_likelihood_forward(v(logits), targets))
                }
            };
            vals.push(out);
        }
        Ok(vals)
    }

    /// Reverse sweep from the scalar `output`, seeded with `loss_adjoint`.
    pub fn backward(&self, output: ValueId, loss_adjoint: f64) -> Result<Adjoints> {
        if self.nodes.is_empty() {
            return Err(Error::Usage("backward on an empty tape".into()));
        }
        if output.0 >= self.nodes.len() {
            return Err(Error::Usage(format!("value {} is not on this tape", output.0)));
        }
        if self.value(output).shape() != (1, 1) {
            let (r, c) = self.value(output).shape();
            return Err(Error::Usage(format!("backward needs a scalar terminal, got {r}x{c}")));
        }

        let mut adj: Vec<Matrix> = self
            .nodes
            .iter()
            .map(|n| Matrix::zeros(n.value.rows(), n.value.cols()))
            .collect();
        adj[output.0].set(0, 0, loss_adjoint);

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let g = std::mem::replace(&mut adj[idx], Matrix::zeros(0, 0));
            if g.data().iter().all(|&x| x == 0.0) {
                adj[idx] = g;
                continue;
            }
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let da = g.matmul_nt(self.value(*b))?;
                    let db = self.value(*a).matmul_tn(&g)?;
                    adj[a.0].add_assign(&da)?;
                    adj[b.0].add_assign(&db)?;
                }
                Op::MatMulNt(a, b) => {
                    // out = a bᵀ: da = g b, db = gᵀ a
                    let da = g.matmul(self.value(*b))?;
                    let db = g.matmul_tn(self.value(*a))?;
                    adj[a.0].add_assign(&da)?;
                    adj[b.0].add_assign(&db)?;
                }
                Op::Add(a, b) => {
                    adj[a.0].add_assign(&g)?;
                    adj[b.0].add_assign(&g)?;
                }
                Op::Scale(a, f) => adj[a.0].add_assign(&g.scale(*f))?,
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let d = Matrix::new(
                        x.rows(),
                        x.cols(),
                        x.data()
                            .iter()
                            .zip(g.data())
                            .map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 })
                            .collect(),
                    )?;
                    adj[a.0].add_assign(&d)?;
                }
                Op::Softmax { input, .. } => {
                    let d = softmax_backward(&node.value, &g);
                    adj[input.0].add_assign(&d)?;
                }
                Op::LayerNorm {
                    input,
                    gamma,
                    beta,
                    eps,
                } => {
                    let (dx, dg, db) = layer_norm_backward(self.value(*input), self.value(*gamma), *eps, &g);
                    adj[input.0].add_assign(&dx)?;
                    adj[gamma.0].add_assign(&dg)?;
                    adj[beta.0].add_assign(&db)?;
                }
                Op::Gather { table, ids } => {
                    let t = &mut adj[table.0];
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, v) in t.row_mut(id).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
                Op::SliceCols { input, start } => {
                    let t = &mut adj[input.0];
                    for r in 0..g.rows() {
                        for (o, v) in t.row_mut(r)[*start..*start + g.cols()].iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        let t = &mut adj[p.0];
                        for r in 0..g.rows() {
                            for (o, v) in t.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + w]) {
                                *o += v;
                            }
                        }
                        offset += w;
                    }
                }
                Op::MeanLogLikelihood { logits, targets } => {
                    let seed = g.get(0, 0);
                    let z = self.value(*logits);
                    let count = targets.iter().flatten().count();
                    if count > 0 {
                        let probs = z.softmax_rows();
                        let t = &mut adj[logits.0];
                        let w = seed / count as f64;
                        for (r, target) in targets.iter().enumerate() {
                            let Some(target) = *target else { continue };
                            for (c, o) in t.row_mut(r).iter_mut().enumerate() {
                                let onehot = if c == target { 1.0 } else { 0.0 };
                                *o += w * (onehot - probs.get(r, c));
                            }
                        }
                    }
                }
            }
            adj[idx] = g;
        }
        Ok(Adjoints { values: adj })
    }
}

fn layer_norm_forward(x: &Matrix, gamma: &Matrix, beta: &Matrix, eps: f64) -> Matrix {
    let d = x.cols();
    let mut out = Matrix::zeros(x.rows(), d);
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for (c, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = (row[c] - mean) * inv * gamma.get(0, c) + beta.get(0, c);
        }
    }
    out
}

fn layer_norm_backward(x: &Matrix, gamma: &Matrix, eps: f64, g: &Matrix) -> (Matrix, Matrix, Matrix) {
    let d = x.cols();
    let n = d as f64;
    let mut dx = Matrix::zeros(x.rows(), d);
    let mut dg = Matrix::zeros(1, d);
    let mut db = Matrix::zeros(1, d);
    let mut xhat = vec![0.0; d];
    let mut dxhat = vec![0.0; d];
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        let grow = g.row(r);
        for c in 0..d {
            xhat[c] = (row[c] - mean) * inv;
            dxhat[c] = grow[c] * gamma.get(0, c);
            dg.data_mut()[c] += grow[c] * xhat[c];
            db.data_mut()[c] += grow[c];
        }
        let mean_dxhat = dxhat.iter().sum::<f64>() / n;
        let mean_dxhat_xhat = dot(&dxhat, &xhat) / n;
        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o = inv * (dxhat[c] - mean_dxhat - xhat[c] * mean_dxhat_xhat);
        }
    }
    (dx, dg, db)
}

/// Exact row Jacobian: `dz = s ⊙ (g − ⟨s, g⟩)` per row.
fn softmax_backward(s: &Matrix, g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(s.rows(), s.cols());
    for r in 0..s.rows() {
        let (sr, gr) = (s.row(r), g.row(r));
        let inner = dot(sr, gr);
        for (c, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = sr[c] * (gr[c] - inner);
        }
    }
    out
}

fn mean_log_likelihood_forward(z: &Matrix, targets: &[Option<usize>]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (r, t) in targets.iter().enumerate() {
        let Some(t) = *t else { continue };
        total += log_softmax_at(z.row(r), t);
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// `log softmax(row)[index]`, computed with the max-shift.
pub fn log_softmax_at(row: &[f64], index: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    row[index] - lse
}
