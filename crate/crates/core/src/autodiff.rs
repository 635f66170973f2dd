//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] is an append-only tape: every operation pushes a node whose
//! parents already exist, so reverse insertion order is a valid reverse
//! topological order. A graph is built once per optimization step and then
//! dropped; parameters live outside it and are bound as leaves.

use rand::Rng;

use crate::error::{DibError, Result};
use crate::tensor::{matmul_into, sigmoid, softplus, Tensor};

/// Log-probabilities are clamped below at `-LOG_PROB_CLAMP` nats, so every
/// log loss lies in `[0, LOG_PROB_CLAMP]`.
pub const LOG_PROB_CLAMP: f64 = 30.0;

pub const BATCHNORM_EPS: f64 = 1e-5;

pub const LEAKY_RELU_SLOPE: f64 = 0.01;

/// Offset applied to the raw scale head before the softplus.
pub const SIGMA_OFFSET: f64 = 5.0;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    LogLoss { logits: Var, targets: Vec<usize>, weights: Vec<f64>, probs: Vec<f64>, clamped: Vec<bool> },
    GradReverse(Var, f64),
    BatchNorm { x: Var, inv_std: Vec<f64> },
    GaussianReparam { mu: Var, sigma_raw: Var, noise: Vec<f64> },
    Mean(Var),
    Sum(Var),
    Dropout { x: Var, mask: Vec<f64> },
    SumSquares(Var),
    SliceCols { x: Var, start: usize },
    SelectRows { x: Var, rows: Vec<usize> },
    GaussianKl { mu: Var, sigma_raw: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, grad: None, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(DibError::Numeric(format!("non-finite output of {}", op_name(&op))));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { value, grad: None, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient, `None` if nothing flowed into the node.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Gradient or zeros of the node's shape.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(self.value(v).shape()))
    }

    fn shape2(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    /// `x[B x D] + bias[D]`, the bias broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, d) = self.shape2(x);
        let b = self.value(bias);
        if b.len() != d {
            return Err(DibError::Dimension(format!("bias of length {} for {} columns", b.len(), d)));
        }
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(d) {
            for (o, bv) in row.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        self.push(out, Op::AddBias(x, bias), &[x, bias])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let out = self.value(x).map(|v| if v >= 0.0 { v } else { slope * v });
        self.push(out, Op::LeakyRelu(x, slope), &[x])
    }

    /// Mean over rows of the clamped negative log-softmax probability of
    /// each row's target.
    pub fn softmax_logloss(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let b = targets.len().max(1);
        let weights = vec![1.0 / b as f64; targets.len()];
        self.weighted_logloss(logits, targets, &weights)
    }

    /// `sum_i w_i * (-clamped log softmax(logits_i)[t_i])`. Weights may be
    /// negative, which turns those rows into ascent directions.
    pub fn weighted_logloss(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Result<Var> {
        let (b, c) = self.shape2(logits);
        if targets.len() != b || weights.len() != b {
            return Err(DibError::Dimension(format!(
                "{} rows of logits, {} targets, {} weights",
                b,
                targets.len(),
                weights.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(DibError::Index(format!("target {bad} with {c} classes")));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut clamped = vec![false; b];
        let mut total = 0.0;
        for (i, row) in probs.chunks_mut(c).enumerate() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            let logp = row[targets[i]] - lse;
            let loss = if logp < -LOG_PROB_CLAMP {
                clamped[i] = true;
                LOG_PROB_CLAMP
            } else {
                -logp
            };
            total += weights[i] * loss;
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        let op = Op::LogLoss {
            logits,
            targets: targets.to_vec(),
            weights: weights.to_vec(),
            probs,
            clamped,
        };
        self.push(Tensor::scalar(total), op, &[logits])
    }

    /// Identity forward; the backward pass multiplies the gradient by `-scale`.
    pub fn gradient_reversal(&mut self, x: Var, scale: f64) -> Result<Var> {
        if scale <= 0.0 {
            return Err(DibError::Argument(format!("gradient reversal scale must be > 0, got {scale}")));
        }
        let out = self.value(x).clone();
        self.push(out, Op::GradReverse(x, scale), &[x])
    }

    /// Per-column standardization with batch statistics and no learned affine.
    pub fn batchnorm_noaffine(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (b, _) = self.shape2(x);
        if b < 2 {
            return Err(DibError::BatchSize(format!("batch normalization needs >= 2 rows, got {b}")));
        }
        let (out, inv_std) = batchnorm_forward(self.value(x), eps);
        self.push(out, Op::BatchNorm { x, inv_std }, &[x])
    }

    /// `mu + softplus(sigma_raw - 5) * noise`.
    pub fn gaussian_reparam(&mut self, mu: Var, sigma_raw: Var, noise: &Tensor) -> Result<Var> {
        self.same_shape(mu, sigma_raw, "gaussian_reparam")?;
        if noise.len() != self.value(mu).len() {
            return Err(DibError::Dimension("noise shape differs from mu".into()));
        }
        let m = self.value(mu);
        let s = self.value(sigma_raw);
        let data = m
            .data()
            .iter()
            .zip(s.data())
            .zip(noise.data())
            .map(|((m, s), e)| m + softplus(s - SIGMA_OFFSET) * e)
            .collect();
        let out = Tensor::new(m.shape().to_vec(), data)?;
        let op = Op::GaussianReparam { mu, sigma_raw, noise: noise.data().to_vec() };
        self.push(out, op, &[mu, sigma_raw])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(out, Op::Mean(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    /// Inverted dropout: each entry kept with probability `1 - rate` and
    /// rescaled by `1 / (1 - rate)`.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(DibError::Argument(format!("dropout rate {rate} outside [0, 1)")));
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        self.dropout_with_mask(x, mask)
    }

    pub fn dropout_with_mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(DibError::Dimension("dropout mask shape".into()));
        }
        let t = self.value(x);
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        self.push(out, Op::Dropout { x, mask }, &[x])
    }

    /// `sum(x^2)`, the building block of the L2 parameter penalty.
    pub fn sum_squares(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).data().iter().map(|v| v * v).sum());
        self.push(out, Op::SumSquares(x), &[x])
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (_, d) = self.shape2(x);
        if start >= end || end > d {
            return Err(DibError::Dimension(format!("column slice {start}..{end} of {d}")));
        }
        let out = self.value(x).slice_cols(start, end);
        self.push(out, Op::SliceCols { x, start }, &[x])
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (b, _) = self.shape2(x);
        if let Some(&r) = rows.iter().find(|&&r| r >= b) {
            return Err(DibError::Index(format!("row {r} of {b}")));
        }
        let out = self.value(x).select_rows(rows);
        self.push(out, Op::SelectRows { x, rows: rows.to_vec() }, &[x])
    }

    /// Batch mean of `sum_d KL(N(mu, s^2) || N(0, 1))` with `s = softplus(sigma_raw - 5)`.
    pub fn gaussian_kl(&mut self, mu: Var, sigma_raw: Var) -> Result<Var> {
        self.same_shape(mu, sigma_raw, "gaussian_kl")?;
        let b = self.value(mu).rows() as f64;
        let total: f64 = self
            .value(mu)
            .data()
            .iter()
            .zip(self.value(sigma_raw).data())
            .map(|(&m, &s)| gaussian_kl_term(m, kl_std(s)))
            .sum();
        self.push(Tensor::scalar(total / b), Op::GaussianKl { mu, sigma_raw }, &[mu, sigma_raw])
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(DibError::Dimension(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    /// Backpropagates from a scalar root, accumulating into every node that
    /// requires a gradient. Existing gradients are cleared first.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(DibError::Dimension(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[root.0].grad = Some(Tensor::filled(self.value(root).shape(), 1.0));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(grad) = self.nodes[i].grad.take() else { continue };
            let contributions = self.local_grads(i, &grad)?;
            self.nodes[i].grad = Some(grad);
            for (parent, g) in contributions {
                let node = &mut self.nodes[parent.0];
                if !node.requires_grad {
                    continue;
                }
                match node.grad.as_mut() {
                    Some(acc) => acc.add_assign(&g),
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, i: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[i];
        let out = match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = (av.rows(), av.cols());
                let n = bv.cols();
                // dA = dC . B^T (row-by-row dot products)
                let mut da = vec![0.0; m * k];
                for r in 0..m {
                    let g_row = g.row(r);
                    for p in 0..k {
                        let b_row = &bv.data()[p * n..(p + 1) * n];
                        da[r * k + p] = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
                    }
                }
                // dB = A^T . dC
                let at = av.transpose();
                let mut db = vec![0.0; k * n];
                matmul_into(at.data(), g.data(), &mut db, k, m, n);
                vec![
                    (*a, Tensor::new(av.shape().to_vec(), da)?),
                    (*b, Tensor::new(bv.shape().to_vec(), db)?),
                ]
            }
            Op::AddBias(x, bias) => {
                let d = self.value(*x).cols();
                let mut db = vec![0.0; d];
                for row in g.data().chunks(d) {
                    for (acc, v) in db.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                vec![(*x, g.clone()), (*bias, Tensor::new(self.value(*bias).shape().to_vec(), db)?)]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let ga = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                let gb = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                vec![
                    (*a, Tensor::new(av.shape().to_vec(), ga)?),
                    (*b, Tensor::new(bv.shape().to_vec(), gb)?),
                ]
            }
            Op::Scale(x, c) => vec![(*x, g.map(|v| v * c))],
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(gv, &v)| if v >= 0.0 { *gv } else { gv * slope })
                    .collect();
                vec![(*x, Tensor::new(xv.shape().to_vec(), data)?)]
            }
            Op::LogLoss { logits, targets, weights, probs, clamped } => {
                let upstream = g.item();
                let lv = self.value(*logits);
                let c = lv.cols();
                let mut data = probs.clone();
                for (r, row) in data.chunks_mut(c).enumerate() {
                    if clamped[r] {
                        row.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    row[targets[r]] -= 1.0;
                    let w = upstream * weights[r];
                    row.iter_mut().for_each(|v| *v *= w);
                }
                vec![(*logits, Tensor::new(lv.shape().to_vec(), data)?)]
            }
            Op::GradReverse(x, scale) => vec![(*x, g.map(|v| -scale * v))],
            Op::BatchNorm { x, inv_std } => {
                let y = &node.value;
                let (b, d) = (y.rows(), y.cols());
                let bf = b as f64;
                let mut sum_g = vec![0.0; d];
                let mut sum_gy = vec![0.0; d];
                for r in 0..b {
                    for c in 0..d {
                        let gv = g.get(r, c);
                        sum_g[c] += gv;
                        sum_gy[c] += gv * y.get(r, c);
                    }
                }
                let mut dx = vec![0.0; b * d];
                for r in 0..b {
                    for c in 0..d {
                        dx[r * d + c] =
                            inv_std[c] / bf * (bf * g.get(r, c) - sum_g[c] - y.get(r, c) * sum_gy[c]);
                    }
                }
                vec![(*x, Tensor::new(y.shape().to_vec(), dx)?)]
            }
            Op::GaussianReparam { mu, sigma_raw, noise } => {
                let s = self.value(*sigma_raw);
                let ds = g
                    .data()
                    .iter()
                    .zip(noise)
                    .zip(s.data())
                    .map(|((gv, e), sv)| gv * e * sigmoid(sv - SIGMA_OFFSET))
                    .collect();
                vec![(*mu, g.clone()), (*sigma_raw, Tensor::new(s.shape().to_vec(), ds)?)]
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                vec![(*x, Tensor::filled(xv.shape(), g.item() / xv.len() as f64))]
            }
            Op::Sum(x) => vec![(*x, Tensor::filled(self.value(*x).shape(), g.item()))],
            Op::Dropout { x, mask } => {
                let data = g.data().iter().zip(mask).map(|(a, b)| a * b).collect();
                vec![(*x, Tensor::new(g.shape().to_vec(), data)?)]
            }
            Op::SumSquares(x) => {
                let up = g.item();
                vec![(*x, self.value(*x).map(|v| 2.0 * v * up))]
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let (b, d) = (xv.rows(), xv.cols());
                let w = g.cols();
                let mut dx = vec![0.0; b * d];
                for r in 0..b {
                    dx[r * d + start..r * d + start + w].copy_from_slice(g.row(r));
                }
                vec![(*x, Tensor::new(xv.shape().to_vec(), dx)?)]
            }
            Op::SelectRows { x, rows } => {
                let xv = self.value(*x);
                let d = xv.cols();
                let mut dx = vec![0.0; xv.len()];
                for (k, &r) in rows.iter().enumerate() {
                    for (acc, v) in dx[r * d..(r + 1) * d].iter_mut().zip(g.row(k)) {
                        *acc += v;
                    }
                }
                vec![(*x, Tensor::new(xv.shape().to_vec(), dx)?)]
            }
            Op::GaussianKl { mu, sigma_raw } => {
                let m = self.value(*mu);
                let s = self.value(*sigma_raw);
                let scale = g.item() / m.rows() as f64;
                let dm = m.map(|v| v * scale);
                let ds = s.map(|sv| {
                    let sd = kl_std(sv);
                    scale * (sd - 1.0 / sd) * sigmoid(sv - SIGMA_OFFSET)
                });
                vec![(*mu, dm), (*sigma_raw, ds)]
            }
        };
        Ok(out)
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::AddBias(..) => "add_bias",
        Op::Add(..) => "add",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::LeakyRelu(..) => "leaky_relu",
        Op::LogLoss { .. } => "softmax_logloss",
        Op::GradReverse(..) => "gradient_reversal",
        Op::BatchNorm { .. } => "batchnorm_noaffine",
        Op::GaussianReparam { .. } => "gaussian_reparam",
        Op::Mean(..) => "mean",
        Op::Sum(..) => "sum",
        Op::Dropout { .. } => "dropout",
        Op::SumSquares(..) => "sum_squares",
        Op::SliceCols { .. } => "slice_cols",
        Op::SelectRows { .. } => "select_rows",
        Op::GaussianKl { .. } => "gaussian_kl",
    }
}

/// Standard deviation used by the KL term; floored so `ln s^2` stays finite.
fn kl_std(sigma_raw: f64) -> f64 {
    softplus(sigma_raw - SIGMA_OFFSET).max(1e-150)
}

/// `KL(N(m, s^2) || N(0, 1)) = (m^2 + s^2 - 1 - ln s^2) / 2`.
pub fn gaussian_kl_term(mean: f64, std: f64) -> f64 {
    0.5 * (mean * mean + std * std - 1.0 - (std * std).ln())
}

/// Forward batch normalization without a graph (evaluation path).
pub fn batchnorm_forward(x: &Tensor, eps: f64) -> (Tensor, Vec<f64>) {
    let (b, d) = (x.rows(), x.cols());
    let bf = b as f64;
    let mut mean = vec![0.0; d];
    for r in 0..b {
        for (c, m) in mean.iter_mut().enumerate() {
            *m += x.get(r, c);
        }
    }
    mean.iter_mut().for_each(|m| *m /= bf);
    let mut var = vec![0.0; d];
    for r in 0..b {
        for c in 0..d {
            let dv = x.get(r, c) - mean[c];
            var[c] += dv * dv;
        }
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v / bf + eps).sqrt()).collect();
    let mut out = x.clone();
    for r in 0..b {
        for c in 0..d {
            out.set(r, c, (x.get(r, c) - mean[c]) * inv_std[c]);
        }
    }
    (out, inv_std)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matmul_identity_cases() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let i = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let c = g.matmul(a, i).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
        let v = g.constant(Tensor::from_rows(&[vec![5.0], vec![7.0]]));
        let c2 = g.matmul(i, v).unwrap();
        assert_eq!(g.value(c2).data(), &[5.0, 7.0]);
        assert!(matches!(g.matmul(v, v), Err(DibError::Dimension(_))));
    }

    #[test]
    fn matmul_gradient_of_sum() {
        let mut g = Graph::new();
        let a = g.param(Tensor::from_rows(&[vec![1.0, 2.0]]));
        let b = g.constant(Tensor::from_rows(&[vec![3.0], vec![4.0]]));
        let c = g.matmul(a, b).unwrap();
        let s = g.sum(c).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap().data(), &[3.0, 4.0]);
        assert!(g.grad(b).is_none());
        assert_eq!(g.grad(s).unwrap().item(), 1.0);
    }

    #[test]
    fn leaky_relu_branches() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![3], vec![3.0, -2.0, 0.0]).unwrap());
        let y = g.leaky_relu(x, LEAKY_RELU_SLOPE).unwrap();
        assert!(close(g.value(y).data()[0], 3.0, 0.0));
        assert!(close(g.value(y).data()[1], -0.02, 1e-15));
        assert_eq!(g.value(y).data()[2], 0.0);
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 0.01, 1.0]);
    }

    #[test]
    fn logloss_values() {
        let mut g = Graph::new();
        let l = g.constant(Tensor::from_rows(&[vec![0.0, 0.0]]));
        let loss = g.softmax_logloss(l, &[0]).unwrap();
        assert!(close(g.value(loss).item(), std::f64::consts::LN_2, 1e-12));

        let l = g.constant(Tensor::from_rows(&[vec![1000.0, 0.0]]));
        let loss = g.softmax_logloss(l, &[0]).unwrap();
        assert!(g.value(loss).item().abs() < 1e-12);

        let l = g.constant(Tensor::from_rows(&[vec![1000.0, 0.0]]));
        let loss = g.softmax_logloss(l, &[1]).unwrap();
        assert_eq!(g.value(loss).item(), LOG_PROB_CLAMP);

        let l = g.constant(Tensor::from_rows(&[vec![0.0, 0.0]]));
        assert!(matches!(g.softmax_logloss(l, &[2]), Err(DibError::Index(_))));
    }

    #[test]
    fn logloss_uniform_is_ln_c() {
        for c in 2..7 {
            let mut g = Graph::new();
            let l = g.constant(Tensor::zeros(&[3, c]));
            let loss = g.softmax_logloss(l, &[0, 1, c - 1]).unwrap();
            assert!(close(g.value(loss).item(), (c as f64).ln(), 1e-12));
        }
    }

    #[test]
    fn gradient_reversal_cases() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let y = g.gradient_reversal(x, 1.0).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0]);

        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![2], vec![0.3, -0.4]).unwrap());
        let y = g.gradient_reversal(x, 1.0).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[-1.0, -1.0]);

        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![1], vec![5.0]).unwrap());
        let y = g.gradient_reversal(x, 0.5).unwrap();
        let s = g.scale(y, 2.0).unwrap();
        let s = g.sum(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[-1.0]);

        assert!(g.gradient_reversal(x, 0.0).is_err());
    }

    #[test]
    fn double_reversal_is_identity() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![2], vec![1.5, -0.5]).unwrap());
        let y = g.gradient_reversal(x, 1.0).unwrap();
        let y = g.gradient_reversal(y, 1.0).unwrap();
        let y = g.mul(y, x).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[3.0, -1.0]);
    }

    #[test]
    fn batchnorm_cases() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[vec![1.0], vec![3.0]]));
        let y = g.batchnorm_noaffine(x, 1e-12).unwrap();
        assert!(close(g.value(y).data()[0], -1.0, 1e-9));
        assert!(close(g.value(y).data()[1], 1.0, 1e-9));

        let x = g.constant(Tensor::from_rows(&[vec![5.0], vec![5.0], vec![5.0]]));
        let y = g.batchnorm_noaffine(x, BATCHNORM_EPS).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 0.0]);

        let x = g.constant(Tensor::from_rows(&[vec![5.0]]));
        assert!(matches!(g.batchnorm_noaffine(x, BATCHNORM_EPS), Err(DibError::BatchSize(_))));
    }

    #[test]
    fn reparam_cases() {
        let mut g = Graph::new();
        let mu = g.constant(Tensor::from_rows(&[vec![0.5, -1.0]]));
        let s = g.constant(Tensor::from_rows(&[vec![5.0, 5.0]]));
        let noise = Tensor::from_rows(&[vec![1.0, 0.0]]);
        let z = g.gaussian_reparam(mu, s, &noise).unwrap();
        assert!(close(g.value(z).data()[0], 0.5 + std::f64::consts::LN_2, 1e-12));
        assert_eq!(g.value(z).data()[1], -1.0);

        let s = g.constant(Tensor::from_rows(&[vec![-800.0, -800.0]]));
        let z = g.gaussian_reparam(mu, s, &Tensor::from_rows(&[vec![3.0, 3.0]])).unwrap();
        assert!(close(g.value(z).data()[0], 0.5, 1e-300));
    }

    #[test]
    fn kl_closed_form() {
        assert!(close(gaussian_kl_term(0.0, 1.0), 0.0, 1e-15));
        assert!(close(gaussian_kl_term(1.0, 1.0), 0.5, 1e-15));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(&[2, 2]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[vec![f64::MAX]]));
        assert!(matches!(g.scale(x, 10.0), Err(DibError::Numeric(_))));
    }
}
