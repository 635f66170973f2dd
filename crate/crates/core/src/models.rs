//! Predictive families and the stochastic encoder.
//!
//! A family V is "every parameter setting of one architecture". MLP families
//! are trained by gradient descent; tabular families (a finite grid of
//! probability vectors per input symbol) are fit exactly by enumeration and
//! exist so trained estimates can be compared against exact computations.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{batchnorm_forward, Graph, Var, BATCHNORM_EPS, LEAKY_RELU_SLOPE, LOG_PROB_CLAMP, SIGMA_OFFSET};
use crate::error::{DibError, Result};
use crate::optim::{Adam, OptimConfig};
use crate::rng::{rng_from, standard_normal, Rng};
use crate::tensor::{softplus, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    Mlp,
    Tabular,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    /// Feature dimension for MLPs, alphabet size for tabular families.
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_classes: usize,
    #[serde(default)]
    pub dropout_rate: f64,
    pub kind: FamilyKind,
    /// Simplex grid step of a tabular family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_resolution: Option<f64>,
}

impl FamilySpec {
    pub fn mlp(input_dim: usize, hidden_widths: &[usize], output_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_widths: hidden_widths.to_vec(),
            output_classes,
            dropout_rate: 0.0,
            kind: FamilyKind::Mlp,
            grid_resolution: None,
        }
    }

    pub fn tabular(alphabet: usize, output_classes: usize, grid_resolution: f64) -> Self {
        Self {
            input_dim: alphabet,
            hidden_widths: vec![],
            output_classes,
            dropout_rate: 0.0,
            kind: FamilyKind::Tabular,
            grid_resolution: Some(grid_resolution),
        }
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_classes == 0 {
            return Err(DibError::Argument("family dimensions must be positive".into()));
        }
        if self.hidden_widths.contains(&0) {
            return Err(DibError::Argument("hidden widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(DibError::Argument(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        if self.kind == FamilyKind::Tabular {
            match self.grid_resolution {
                Some(r) if r > 0.0 && r <= 1.0 => {}
                _ => return Err(DibError::Argument("tabular family needs a grid resolution in (0, 1]".into())),
            }
        }
        Ok(())
    }

    /// Layer sizes from input to output.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim];
        sizes.extend(&self.hidden_widths);
        sizes.push(self.output_classes);
        sizes
    }

    pub fn parameter_count(&self) -> usize {
        match self.kind {
            FamilyKind::Mlp => self.layer_sizes().windows(2).map(|w| (w[0] + 1) * w[1]).sum(),
            FamilyKind::Tabular => self.input_dim * self.output_classes,
        }
    }

    /// Same depth and every hidden width no larger: `self` denotes a subfamily.
    pub fn is_nested_in(&self, other: &FamilySpec) -> bool {
        self.kind == other.kind
            && self.input_dim == other.input_dim
            && self.output_classes == other.output_classes
            && self.hidden_widths.len() == other.hidden_widths.len()
            && self.hidden_widths.iter().zip(&other.hidden_widths).all(|(a, b)| a <= b)
    }
}

/// Specs identical to `base` except every hidden layer takes the given width;
/// earlier entries are the smaller families.
pub fn family_sweep(base: &FamilySpec, widths: &[usize]) -> Result<Vec<FamilySpec>> {
    if widths.is_empty() {
        return Err(DibError::Argument("empty width list".into()));
    }
    if widths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DibError::Argument(format!("widths must be strictly increasing, got {widths:?}")));
    }
    if base.hidden_widths.is_empty() {
        return Err(DibError::Argument("width sweep needs at least one hidden layer".into()));
    }
    Ok(widths
        .iter()
        .map(|&w| FamilySpec { hidden_widths: vec![w; base.hidden_widths.len()], ..base.clone() })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `[in x out]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

/// Fully connected network with leaky-ReLU hidden activations.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub dropout_rate: f64,
}

impl Mlp {
    /// Weights ~ N(0, 2 / fan_in), zero biases.
    pub fn init(sizes: &[usize], dropout_rate: f64, rng: &mut Rng) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                let data = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
                Linear {
                    weight: Tensor::new(vec![fan_in, fan_out], data).expect("sized"),
                    bias: Tensor::zeros(&[fan_out]),
                }
            })
            .collect();
        Self { layers, dropout_rate }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.cols())
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    /// Binds every parameter as a trainable leaf, two per layer.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.params().into_iter().map(|p| g.param(p.clone())).collect()
    }

    pub fn bind_frozen(&self, g: &mut Graph) -> Vec<Var> {
        self.params().into_iter().map(|p| g.constant(p.clone())).collect()
    }

    /// Graph forward. Dropout follows every hidden activation when a train
    /// RNG is supplied.
    pub fn forward(&self, g: &mut Graph, bound: &[Var], x: Var, mut train_rng: Option<&mut Rng>) -> Result<Var> {
        let mut h = x;
        let n = self.layers.len();
        for k in 0..n {
            h = g.matmul(h, bound[2 * k])?;
            h = g.add_bias(h, bound[2 * k + 1])?;
            if k + 1 < n {
                h = g.leaky_relu(h, LEAKY_RELU_SLOPE)?;
                if let Some(rng) = train_rng.as_deref_mut() {
                    if self.dropout_rate > 0.0 {
                        h = g.dropout(h, self.dropout_rate, rng)?;
                    }
                }
            }
        }
        Ok(h)
    }

    /// Evaluation forward without a graph.
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_sampled(x, None)
    }

    /// Forward without a graph that samples dropout masks when an RNG is given.
    pub fn forward_sampled(&self, x: &Tensor, mut rng: Option<&mut Rng>) -> Result<Tensor> {
        if x.cols() != self.input_dim() {
            return Err(DibError::Dimension(format!("input has {} columns, network expects {}", x.cols(), self.input_dim())));
        }
        let mut h = x.clone();
        let n = self.layers.len();
        for (k, layer) in self.layers.iter().enumerate() {
            h = h.matmul(&layer.weight)?;
            let d = h.cols();
            for row in h.data_mut().chunks_mut(d) {
                for (v, b) in row.iter_mut().zip(layer.bias.data()) {
                    *v += b;
                }
            }
            if k + 1 < n {
                h = h.map(|v| if v >= 0.0 { v } else { LEAKY_RELU_SLOPE * v });
                if let Some(rng) = rng.as_deref_mut() {
                    if self.dropout_rate > 0.0 {
                        let keep = 1.0 - self.dropout_rate;
                        for v in h.data_mut() {
                            *v *= if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 };
                        }
                    }
                }
            }
        }
        if !h.is_finite() {
            return Err(DibError::Numeric("non-finite network output".into()));
        }
        Ok(h)
    }

    pub fn sum_squares(&self) -> f64 {
        self.params().iter().map(|p| p.data().iter().map(|v| v * v).sum::<f64>()).sum()
    }
}

/// Probability table of a tabular predictor, one row per input symbol.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub rows: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Network {
    Mlp(Mlp),
    Tabular(Table),
}

/// One member f of a family V: maps representations to label distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub spec: FamilySpec,
    pub net: Network,
    pub rng_seed: u64,
}

pub fn init_classifier(spec: &FamilySpec, seed: u64) -> Result<Classifier> {
    spec.validate()?;
    let net = match spec.kind {
        FamilyKind::Mlp => {
            let mut rng = rng_from(seed, 0xC1A5);
            Network::Mlp(Mlp::init(&spec.layer_sizes(), spec.dropout_rate, &mut rng))
        }
        FamilyKind::Tabular => {
            let u = 1.0 / spec.output_classes as f64;
            Network::Tabular(Table { rows: vec![vec![u; spec.output_classes]; spec.input_dim] })
        }
    };
    Ok(Classifier { spec: spec.clone(), net, rng_seed: seed })
}

/// Symbol index of each one-hot (or score) row.
pub fn symbols_of(z: &Tensor) -> Vec<usize> {
    z.argmax_rows()
}

pub fn one_hot(symbols: &[usize], alphabet: usize) -> Tensor {
    let mut t = Tensor::zeros(&[symbols.len(), alphabet]);
    for (i, &s) in symbols.iter().enumerate() {
        t.set(i, s, 1.0);
    }
    t
}

impl Classifier {
    pub fn mlp(&self) -> Option<&Mlp> {
        match &self.net {
            Network::Mlp(m) => Some(m),
            Network::Tabular(_) => None,
        }
    }

    pub fn mlp_mut(&mut self) -> Option<&mut Mlp> {
        match &mut self.net {
            Network::Mlp(m) => Some(m),
            Network::Tabular(_) => None,
        }
    }

    fn check_input(&self, z: &Tensor) -> Result<()> {
        if z.cols() != self.spec.input_dim {
            return Err(DibError::Dimension(format!(
                "representation has {} columns, family expects {}",
                z.cols(),
                self.spec.input_dim
            )));
        }
        Ok(())
    }

    /// Row-stochastic `[B x classes]` matrix of f[z](y). Dropout is applied
    /// only in train mode, drawing from `seed`.
    pub fn predict(&self, z: &Tensor, train_mode: bool, seed: u64) -> Result<Tensor> {
        self.check_input(z)?;
        match &self.net {
            Network::Mlp(m) => {
                if train_mode && m.dropout_rate > 0.0 {
                    let mut g = Graph::new();
                    let bound = m.bind_frozen(&mut g);
                    let x = g.constant(z.clone());
                    let mut rng = rng_from(seed, 0xD0);
                    let out = m.forward(&mut g, &bound, x, Some(&mut rng))?;
                    Ok(g.value(out).softmax_rows())
                } else {
                    Ok(m.forward_eval(z)?.softmax_rows())
                }
            }
            Network::Tabular(t) => {
                let rows: Vec<Vec<f64>> = symbols_of(z).into_iter().map(|s| t.rows[s].clone()).collect();
                Ok(Tensor::from_rows(&rows))
            }
        }
    }

    /// Mean clamped log loss and accuracy of deterministic predictions.
    pub fn evaluate(&self, z: &Tensor, targets: &[usize]) -> Result<(f64, f64)> {
        let probs = self.predict(z, false, 0)?;
        Ok(logloss_and_accuracy(&probs, targets))
    }

    /// Trains the classifier on fixed inputs with Adam; returns the final
    /// mean clamped training log loss. Tabular classifiers must be fit
    /// through the oracle grid instead.
    pub fn fit(&mut self, z: &Tensor, targets: &[usize], budget: &OptimConfig, seed: u64) -> Result<f64> {
        self.fit_resampled(|_| Ok(z.clone()), targets, budget, seed)?;
        let (loss, _) = self.evaluate(z, targets)?;
        if !loss.is_finite() {
            return Err(DibError::Numeric("training ended with a non-finite loss".into()));
        }
        Ok(loss)
    }

    /// Adam training where `sample(epoch)` supplies the inputs of each epoch,
    /// so stochastic representations are redrawn rather than memorized.
    pub fn fit_resampled<F>(&mut self, mut sample: F, targets: &[usize], budget: &OptimConfig, seed: u64) -> Result<()>
    where
        F: FnMut(usize) -> Result<Tensor>,
    {
        let Network::Mlp(mlp) = &mut self.net else {
            return Err(DibError::UnsupportedMode("gradient fitting of a tabular family".into()));
        };
        let mut rng = rng_from(seed, 0xF17);
        let mut opt = Adam::new(&mlp.params());
        let mut order: Vec<usize> = (0..targets.len()).collect();
        let batch = budget.batch_size.max(1);
        for epoch in 0..budget.epochs {
            let z = sample(epoch)?;
            if z.cols() != self.spec.input_dim || z.rows() != targets.len() {
                return Err(DibError::Dimension(format!(
                    "[{} x {}] inputs for {} targets and {} features",
                    z.rows(),
                    z.cols(),
                    targets.len(),
                    self.spec.input_dim
                )));
            }
            let lr = budget.lr_at(epoch);
            order.shuffle(&mut rng);
            for chunk in order.chunks(batch) {
                let xb = z.select_rows(chunk);
                let tb: Vec<usize> = chunk.iter().map(|&i| targets[i]).collect();
                let mut g = Graph::new();
                let bound = mlp.bind(&mut g);
                let x = g.constant(xb);
                let logits = mlp.forward(&mut g, &bound, x, Some(&mut rng))?;
                let loss = g.softmax_logloss(logits, &tb)?;
                g.backward(loss)?;
                let grads: Vec<Tensor> = bound.iter().map(|v| g.grad_or_zeros(*v)).collect();
                opt.step(&mut mlp.params_mut(), &grads, lr);
            }
        }
        Ok(())
    }

    /// Exact empirical risk minimization over a tabular family: each input
    /// symbol independently takes the grid vector with the smallest summed
    /// clamped log loss (first in grid order on ties). Returns the mean loss.
    pub fn fit_tabular(&mut self, z: &Tensor, targets: &[usize]) -> Result<f64> {
        self.check_input(z)?;
        if z.rows() != targets.len() {
            return Err(DibError::Dimension(format!("{} rows, {} targets", z.rows(), targets.len())));
        }
        let resolution = self.spec.grid_resolution.unwrap_or(1.0);
        let grid = simplex_grid(self.spec.output_classes, resolution)?;
        let Network::Tabular(table) = &mut self.net else {
            return Err(DibError::UnsupportedMode("grid fitting of an MLP family".into()));
        };
        let symbols = symbols_of(z);
        let mut total = 0.0;
        for s in 0..self.spec.input_dim {
            let members: Vec<usize> = (0..targets.len()).filter(|&i| symbols[i] == s).collect();
            if members.is_empty() {
                continue;
            }
            let mut best: Option<(f64, usize)> = None;
            for (g, q) in grid.iter().enumerate() {
                let loss: f64 = members.iter().map(|&i| clamped_nll(q[targets[i]])).sum();
                if best.is_none_or(|(b, _)| loss < b) {
                    best = Some((loss, g));
                }
            }
            let (loss, g) = best.expect("grid is non-empty");
            table.rows[s] = grid[g].clone();
            total += loss;
        }
        Ok(total / targets.len().max(1) as f64)
    }
}

/// Every probability vector over `n_classes` outcomes whose entries are
/// multiples of `resolution` (which must divide 1), in lexicographic order.
pub fn simplex_grid(n_classes: usize, resolution: f64) -> Result<Vec<Vec<f64>>> {
    let steps = (1.0 / resolution).round();
    if n_classes == 0 || !(steps >= 1.0) || ((steps * resolution) - 1.0).abs() > 1e-9 {
        return Err(DibError::Argument(format!("grid resolution {resolution} must divide 1")));
    }
    let steps = steps as usize;
    let mut out = vec![];
    let mut current = vec![0usize; n_classes];
    fn fill(pos: usize, left: usize, current: &mut Vec<usize>, steps: usize, out: &mut Vec<Vec<f64>>) {
        if pos + 1 == current.len() {
            current[pos] = left;
            out.push(current.iter().map(|&c| c as f64 / steps as f64).collect());
            return;
        }
        for c in 0..=left {
            current[pos] = c;
            fill(pos + 1, left - c, current, steps, out);
        }
    }
    fill(0, steps, &mut current, steps, &mut out);
    Ok(out)
}

/// Mean clamped log loss and accuracy of a probability matrix.
pub fn logloss_and_accuracy(probs: &Tensor, targets: &[usize]) -> (f64, f64) {
    let n = targets.len().max(1) as f64;
    let preds = probs.argmax_rows();
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (i, &t) in targets.iter().enumerate() {
        loss += clamped_nll(probs.get(i, t));
        if preds[i] == t {
            correct += 1;
        }
    }
    (loss / n, correct as f64 / n)
}

/// `min(-ln p, LOG_PROB_CLAMP)`.
pub fn clamped_nll(p: f64) -> f64 {
    if p <= 0.0 {
        LOG_PROB_CLAMP
    } else {
        (-p.ln()).min(LOG_PROB_CLAMP)
    }
}

/// Stochastic encoder P(Z|X): an MLP emitting a mean and a raw scale per
/// dimension, a reparameterized Gaussian sample, then optional batch
/// standardization.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub spec: FamilySpec,
    pub net: Mlp,
    pub z_dim: usize,
    pub normalize: bool,
    /// `false` gives a deterministic encoder emitting the mean only.
    pub stochastic: bool,
    pub n_eval_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub z_dim: usize,
    pub normalize: bool,
    pub stochastic: bool,
    pub dropout_rate: f64,
    pub n_eval_samples: usize,
}

impl EncoderConfig {
    pub fn new(input_dim: usize, z_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_widths: vec![64, 64, 64],
            z_dim,
            normalize: true,
            stochastic: true,
            dropout_rate: 0.0,
            n_eval_samples: 12,
        }
    }

    pub fn family_spec(&self) -> FamilySpec {
        let out = if self.stochastic { 2 * self.z_dim } else { self.z_dim };
        FamilySpec::mlp(self.input_dim, &self.hidden_widths, out).with_dropout(self.dropout_rate)
    }
}

/// Graph outputs of one encoder pass.
#[derive(Clone, Copy, Debug)]
pub struct EncodedVars {
    pub z: Var,
    pub mu: Var,
    pub sigma_raw: Option<Var>,
}

impl Encoder {
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        if cfg.z_dim == 0 || cfg.n_eval_samples == 0 {
            return Err(DibError::Argument("z_dim and n_eval_samples must be positive".into()));
        }
        let spec = cfg.family_spec();
        spec.validate()?;
        let mut rng = rng_from(seed, 0xE4C);
        let net = Mlp::init(&spec.layer_sizes(), spec.dropout_rate, &mut rng);
        Ok(Self {
            spec,
            net,
            z_dim: cfg.z_dim,
            normalize: cfg.normalize,
            stochastic: cfg.stochastic,
            n_eval_samples: cfg.n_eval_samples,
        })
    }

    pub fn config(&self) -> EncoderConfig {
        EncoderConfig {
            input_dim: self.spec.input_dim,
            hidden_widths: self.spec.hidden_widths.clone(),
            z_dim: self.z_dim,
            normalize: self.normalize,
            stochastic: self.stochastic,
            dropout_rate: self.spec.dropout_rate,
            n_eval_samples: self.n_eval_samples,
        }
    }

    /// Training-time pass inside a graph: one sample per input.
    pub fn forward(&self, g: &mut Graph, bound: &[Var], x: Var, rng: &mut Rng) -> Result<EncodedVars> {
        let out = self.net.forward(g, bound, x, Some(&mut *rng))?;
        let (mu, sigma_raw, mut z) = if self.stochastic {
            let mu = g.slice_cols(out, 0, self.z_dim)?;
            let s = g.slice_cols(out, self.z_dim, 2 * self.z_dim)?;
            let noise = standard_normal(rng, g.value(mu).shape());
            let z = g.gaussian_reparam(mu, s, &noise)?;
            (mu, Some(s), z)
        } else {
            (out, None, out)
        };
        if self.normalize {
            z = g.batchnorm_noaffine(z, BATCHNORM_EPS)?;
        }
        Ok(EncodedVars { z, mu, sigma_raw })
    }

    /// Evaluation-time samples of Z for a batch `x`, normalized with the
    /// statistics of that batch. Deterministic given `seed`. Encoders with
    /// dropout draw a fresh mask for every sample.
    pub fn encode(&self, x: &Tensor, n_samples: usize, seed: u64) -> Result<Vec<Tensor>> {
        if n_samples == 0 {
            return Err(DibError::Argument("n_samples must be >= 1".into()));
        }
        let mut rng = rng_from(seed, 0x5A);
        let with_dropout = self.net.dropout_rate > 0.0;
        let mut out = self.net.forward_eval(x)?;
        let mut samples = Vec::with_capacity(n_samples);
        for _ in 0..n_samples {
            if with_dropout {
                out = self.net.forward_sampled(x, Some(&mut rng))?;
            }
            let (mu, std) = if self.stochastic {
                let mu = out.slice_cols(0, self.z_dim);
                let std = out.slice_cols(self.z_dim, 2 * self.z_dim).map(|s| softplus(s - SIGMA_OFFSET));
                (mu, Some(std))
            } else {
                (out.clone(), None)
            };
            let mut z = mu.clone();
            if let Some(std) = &std {
                let noise = standard_normal(&mut rng, mu.shape());
                for ((zv, s), e) in z.data_mut().iter_mut().zip(std.data()).zip(noise.data()) {
                    *zv += s * e;
                }
            }
            if self.normalize {
                if z.rows() < 2 {
                    return Err(DibError::BatchSize("normalized encoding needs >= 2 rows".into()));
                }
                z = batchnorm_forward(&z, BATCHNORM_EPS).0;
            }
            samples.push(z);
        }
        Ok(samples)
    }

    /// Whether every evaluation sample of a batch is the same.
    pub fn is_deterministic(&self) -> bool {
        !self.stochastic && self.net.dropout_rate == 0.0
    }

    /// Samples needed to marginalize predictions: one for deterministic encoders.
    pub fn eval_samples(&self) -> usize {
        if self.is_deterministic() {
            1
        } else {
            self.n_eval_samples
        }
    }

    /// Mean and standard deviation heads (evaluation path, no normalization).
    pub fn gaussian_params(&self, x: &Tensor) -> Result<(Tensor, Option<Tensor>)> {
        let out = self.net.forward_eval(x)?;
        if self.stochastic {
            let mu = out.slice_cols(0, self.z_dim);
            let std = out.slice_cols(self.z_dim, 2 * self.z_dim).map(|s| softplus(s - SIGMA_OFFSET));
            Ok((mu, Some(std)))
        } else {
            Ok((out, None))
        }
    }
}

/// Averages class probabilities over several representation samples.
pub fn marginal_predict(c: &Classifier, samples: &[Tensor]) -> Result<Tensor> {
    let mut acc: Option<Tensor> = None;
    for z in samples {
        let p = c.predict(z, false, 0)?;
        match acc.as_mut() {
            Some(a) => a.add_assign(&p),
            None => acc = Some(p),
        }
    }
    let mut acc = acc.ok_or_else(|| DibError::Argument("no samples".into()))?;
    let k = samples.len() as f64;
    acc.data_mut().iter_mut().for_each(|v| *v /= k);
    Ok(acc)
}

/// Uniform random labels used by complexity estimates.
pub fn shuffled_labels(labels: &[usize], rng: &mut Rng) -> Vec<usize> {
    let mut out = labels.to_vec();
    out.shuffle(rng);
    out
}

pub fn random_labels(n: usize, n_classes: usize, rng: &mut Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n_classes)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> FamilySpec {
        FamilySpec::mlp(4, &[8], 3)
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_classifier(&spec(), 7).unwrap();
        let b = init_classifier(&spec(), 7).unwrap();
        assert_eq!(a, b);
        let c = init_classifier(&spec(), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(FamilySpec::mlp(5, &[], 3).parameter_count(), 6 * 3);
        assert_eq!(FamilySpec::mlp(1024, &[128], 10).parameter_count(), 1024 * 128 + 128 + 128 * 10 + 10);
        let c = init_classifier(&FamilySpec::mlp(5, &[], 3), 1).unwrap();
        let n: usize = c.mlp().unwrap().params().iter().map(|p| p.len()).sum();
        assert_eq!(n, 18);
    }

    #[test]
    fn zero_weights_predict_uniform() {
        let mut c = init_classifier(&spec(), 1).unwrap();
        for p in c.mlp_mut().unwrap().params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let z = Tensor::from_rows(&[vec![1.0, 2.0, 3.0, 4.0], vec![-1.0, 0.0, 5.0, 2.0]]);
        let p = c.predict(&z, false, 0).unwrap();
        assert!(p.data().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn predict_rows_are_distributions_and_eval_is_deterministic() {
        let c = init_classifier(&spec().with_dropout(0.5), 3).unwrap();
        let mut rng = rng_from(1, 1);
        let z = standard_normal(&mut rng, &[16, 4]);
        let p = c.predict(&z, false, 0).unwrap();
        for r in 0..16 {
            let s: f64 = p.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(p.row(r).iter().all(|&v| v >= 0.0));
        }
        assert_eq!(p, c.predict(&z, false, 99).unwrap());
        let p_train = c.predict(&z, true, 5).unwrap();
        assert_ne!(p, p_train);
        assert!(c.predict(&Tensor::zeros(&[2, 3]), false, 0).is_err());
    }

    #[test]
    fn sweep_cases() {
        let base = FamilySpec::mlp(16, &[8], 2);
        let s = family_sweep(&base, &[1, 2, 4, 8, 16]).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.windows(2).all(|w| w[0].is_nested_in(&w[1])));
        assert_eq!(family_sweep(&base, &[4, 16, 64, 256, 1024]).unwrap()[4].hidden_widths, vec![1024]);
        assert_eq!(family_sweep(&base, &[3]).unwrap().len(), 1);
        assert!(family_sweep(&base, &[4, 2]).is_err());
        assert!(family_sweep(&base, &[2, 2]).is_err());
    }

    #[test]
    fn encoder_sample_counts_and_normalization() {
        let mut cfg = EncoderConfig::new(6, 3);
        cfg.hidden_widths = vec![8];
        let e = Encoder::init(&cfg, 4).unwrap();
        let mut rng = rng_from(2, 2);
        let x = standard_normal(&mut rng, &[20, 6]);
        assert_eq!(e.encode(&x, 1, 0).unwrap().len(), 1);
        let samples = e.encode(&x, e.n_eval_samples, 0).unwrap();
        assert_eq!(samples.len(), 12);
        for z in &samples {
            for c in 0..3 {
                let col: Vec<f64> = (0..20).map(|r| z.get(r, c)).collect();
                let m = col.iter().sum::<f64>() / 20.0;
                let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 20.0).sqrt();
                assert!(m.abs() < 1e-9);
                assert!(sd <= 1.0 + 1e-6 && sd > 0.99);
            }
        }
        assert_eq!(samples, e.encode(&x, 12, 0).unwrap());
        assert!(e.encode(&x, 0, 0).is_err());
    }
}
