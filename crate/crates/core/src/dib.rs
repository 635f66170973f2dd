//! The decodable information bottleneck objective and its training loops.
//!
//! The encoder minimizes `L_suff - beta * L_min`, where `L_suff` is the log
//! loss of a sufficiency head predicting Y from Z and `L_min` is the average
//! log loss of K minimality heads predicting decomposition labels from Z.
//! The heads themselves minimize their own losses, so the encoder plays
//! against the best heads it can find.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::checkpoint::Checkpoint;
use crate::data::{Dataset, Split};
use crate::decomposition::{build_plan, DecompositionPlan, LabelingMode};
use crate::error::{DibError, Result};
use crate::info::empirical_entropy;
use crate::models::{
    init_classifier, logloss_and_accuracy, marginal_predict, Classifier, Encoder, EncoderConfig, FamilyKind, FamilySpec, Mlp,
};
use crate::optim::{Adam, OptimConfig};
use crate::rng::{derive_seed, rng_from, Rng};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    /// One backward pass; heads descend, the encoder sees reversed gradients.
    JointReversal,
    /// `n_inner` head-only steps on the current representation before each
    /// encoder step. Gradients do not flow through the inner steps.
    Unrolled { n_inner: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineRegularizer {
    /// Deterministic encoder, no penalty.
    None,
    Dropout { p: f64 },
    WeightDecay { lambda: f64 },
    VibKl { beta: f64 },
}

/// How a baseline changes the encoder and its loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularizerTerms {
    pub stochastic: bool,
    pub encoder_dropout: f64,
    /// Coefficient of `0.5 * sum(theta^2)` over encoder parameters.
    pub weight_decay: f64,
    /// Coefficient of the batch-mean Gaussian KL to the standard normal.
    pub vib_beta: f64,
}

impl RegularizerTerms {
    /// The stochastic encoder used by every DIB run.
    pub fn stochastic() -> Self {
        Self { stochastic: true, encoder_dropout: 0.0, weight_decay: 0.0, vib_beta: 0.0 }
    }

    pub fn apply(&self, cfg: &mut EncoderConfig) {
        cfg.stochastic = self.stochastic;
        cfg.dropout_rate = self.encoder_dropout;
    }
}

pub fn baseline_regularizer(kind: &BaselineRegularizer) -> Result<RegularizerTerms> {
    let base = RegularizerTerms { stochastic: false, encoder_dropout: 0.0, weight_decay: 0.0, vib_beta: 0.0 };
    match *kind {
        BaselineRegularizer::None => Ok(base),
        BaselineRegularizer::Dropout { p } => {
            if !(0.0..1.0).contains(&p) {
                return Err(DibError::Argument(format!("dropout rate {p} outside [0, 1)")));
            }
            Ok(RegularizerTerms { encoder_dropout: p, ..base })
        }
        BaselineRegularizer::WeightDecay { lambda } => {
            if !(lambda >= 0.0) {
                return Err(DibError::Argument(format!("weight decay {lambda} must be >= 0")));
            }
            Ok(RegularizerTerms { weight_decay: lambda, ..base })
        }
        BaselineRegularizer::VibKl { beta } => {
            if !(beta >= 0.0) {
                return Err(DibError::Argument(format!("VIB beta {beta} must be >= 0")));
            }
            Ok(RegularizerTerms { stochastic: true, vib_beta: beta, ..base })
        }
    }
}

fn default_k() -> usize {
    4
}

fn default_head_lr_multiplier() -> f64 {
    50.0
}

fn default_true() -> bool {
    true
}

fn default_report_budget() -> OptimConfig {
    OptimConfig { lr: 1e-3, epochs: 150, batch_size: 128, decay_per_epoch: 1.0 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DibConfig {
    pub beta: f64,
    #[serde(default = "default_k")]
    pub k_heads: usize,
    /// Architecture of the sufficiency head and of every minimality head.
    pub head_spec: FamilySpec,
    pub strategy: Strategy,
    #[serde(default = "default_head_lr_multiplier")]
    pub head_lr_multiplier: f64,
    pub labeling: LabelingMode,
    #[serde(default = "default_true")]
    pub share_heads_across_classes: bool,
    /// Replaces the stochastic encoder by a baseline when set.
    #[serde(default)]
    pub baseline: Option<BaselineRegularizer>,
    /// Budget of the fresh heads behind the reported information values.
    #[serde(default = "default_report_budget")]
    pub report_budget: OptimConfig,
}

impl DibConfig {
    pub fn new(beta: f64, z_dim: usize, n_classes: usize) -> Self {
        Self {
            beta,
            k_heads: default_k(),
            head_spec: FamilySpec::mlp(z_dim, &[64], n_classes),
            strategy: Strategy::JointReversal,
            head_lr_multiplier: default_head_lr_multiplier(),
            labeling: LabelingMode::BaseExpansion,
            share_heads_across_classes: true,
            baseline: None,
            report_budget: default_report_budget(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(DibError::Argument(format!("beta {} must be finite and >= 0", self.beta)));
        }
        if self.k_heads == 0 {
            return Err(DibError::Argument("k_heads must be >= 1".into()));
        }
        if let Strategy::Unrolled { n_inner } = self.strategy {
            if n_inner == 0 {
                return Err(DibError::Argument("unrolled strategy needs n_inner >= 1".into()));
            }
        }
        if !(self.head_lr_multiplier > 0.0) {
            return Err(DibError::Argument("head_lr_multiplier must be > 0".into()));
        }
        if self.head_spec.kind != FamilyKind::Mlp {
            return Err(DibError::UnsupportedMode("DIB heads must be MLPs".into()));
        }
        self.head_spec.validate()
    }

    pub fn terms(&self) -> Result<RegularizerTerms> {
        match &self.baseline {
            Some(b) => baseline_regularizer(b),
            None => Ok(RegularizerTerms::stochastic()),
        }
    }

    /// Gradient-reversal weight of each head loss.
    pub fn head_weight(&self, n_classes: usize) -> f64 {
        if self.share_heads_across_classes {
            self.beta / self.k_heads as f64
        } else {
            self.beta / (self.k_heads * n_classes) as f64
        }
    }
}

/// Encoder plus heads. Per-class minimality heads are stored class-major:
/// head `(y, k)` sits at `y * k_heads + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct DibModel {
    pub encoder: Encoder,
    pub suff_head: Classifier,
    pub min_heads: Vec<Classifier>,
}

impl DibModel {
    pub fn init(encoder_cfg: &EncoderConfig, cfg: &DibConfig, n_classes: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut ecfg = encoder_cfg.clone();
        cfg.terms()?.apply(&mut ecfg);
        if cfg.head_spec.input_dim != ecfg.z_dim || cfg.head_spec.output_classes != n_classes {
            return Err(DibError::Dimension(format!(
                "head spec maps {} -> {}, representation has {} dims and {} classes",
                cfg.head_spec.input_dim, cfg.head_spec.output_classes, ecfg.z_dim, n_classes
            )));
        }
        let encoder = Encoder::init(&ecfg, derive_seed(seed, 1))?;
        let suff_head = init_classifier(&cfg.head_spec, derive_seed(seed, 2))?;
        let n_min = if cfg.beta == 0.0 {
            0
        } else if cfg.share_heads_across_classes {
            cfg.k_heads
        } else {
            cfg.k_heads * n_classes
        };
        let min_heads = (0..n_min)
            .map(|h| init_classifier(&cfg.head_spec, derive_seed(seed, 100 + h as u64)))
            .collect::<Result<_>>()?;
        Ok(Self { encoder, suff_head, min_heads })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.add_encoder("encoder", &self.encoder);
        ck.add_classifier("suff_head", &self.suff_head);
        ck
    }
}

fn head_mlp(c: &Classifier) -> &Mlp {
    c.mlp().expect("heads are validated to be MLPs")
}

/// Losses and parameter gradients of one DIB step. Nothing is mutated.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub suff_loss: f64,
    /// Head losses averaged as in the minimality term (0 when beta = 0).
    pub min_loss: f64,
    /// Value of the regularizer terms added to the encoder loss.
    pub penalty: f64,
    pub encoder_grads: Vec<Tensor>,
    pub suff_grads: Vec<Tensor>,
    pub min_grads: Vec<Vec<Tensor>>,
    /// Representation used by this step, for inner head updates.
    pub z: Tensor,
}

impl StepOutput {
    pub fn objective(&self, beta: f64) -> f64 {
        self.suff_loss - beta * self.min_loss + self.penalty
    }
}

/// One forward/backward pass of the DIB objective on a batch.
///
/// `digits` holds one row per batch example and one column per minimality
/// head index `k`. The encoder gradient is that of
/// `L_suff - beta * L_min + penalty`; the head gradients are those of each
/// head's own loss.
pub fn dib_loss_step(
    model: &DibModel,
    x: &Tensor,
    y: &[usize],
    digits: &[Vec<usize>],
    cfg: &DibConfig,
    rng: &mut Rng,
) -> Result<StepOutput> {
    let n_classes = cfg.head_spec.output_classes;
    let terms = cfg.terms()?;
    let mut g = Graph::new();
    let enc_vars = model.encoder.net.bind(&mut g);
    let xv = g.constant(x.clone());
    let encoded = model.encoder.forward(&mut g, &enc_vars, xv, rng)?;
    let z = encoded.z;

    let suff_vars = head_mlp(&model.suff_head).bind(&mut g);
    let logits = head_mlp(&model.suff_head).forward(&mut g, &suff_vars, z, Some(&mut *rng))?;
    let suff = g.softmax_logloss(logits, y)?;
    let mut total = suff;

    let mut min_vars: Vec<Vec<Var>> = vec![];
    let mut min_loss = 0.0;
    if cfg.beta > 0.0 {
        if digits.iter().any(|row| row.len() < cfg.k_heads) {
            return Err(DibError::Argument(format!("every digit row needs {} columns", cfg.k_heads)));
        }
        let w = cfg.head_weight(n_classes);
        let reversed = g.gradient_reversal(z, w)?;
        for (h, head) in model.min_heads.iter().enumerate() {
            let vars = head_mlp(head).bind(&mut g);
            let k = h % cfg.k_heads;
            let (input, targets) = if cfg.share_heads_across_classes {
                (reversed, digits.iter().map(|r| r[k]).collect::<Vec<_>>())
            } else {
                let class = h / cfg.k_heads;
                let rows: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
                if rows.is_empty() {
                    min_vars.push(vars);
                    continue;
                }
                let sel = g.select_rows(reversed, &rows)?;
                (sel, rows.iter().map(|&i| digits[i][k]).collect())
            };
            let out = head_mlp(head).forward(&mut g, &vars, input, Some(&mut *rng))?;
            let loss = g.softmax_logloss(out, &targets)?;
            min_loss += g.value(loss).item();
            total = g.add(total, loss)?;
            min_vars.push(vars);
        }
        min_loss /= model.min_heads.len() as f64;
    }

    let mut penalty = 0.0;
    if terms.vib_beta > 0.0 {
        if let Some(s) = encoded.sigma_raw {
            let kl = g.gaussian_kl(encoded.mu, s)?;
            let kl = g.scale(kl, terms.vib_beta)?;
            penalty += g.value(kl).item();
            total = g.add(total, kl)?;
        }
    }
    if terms.weight_decay > 0.0 {
        for &p in &enc_vars {
            let sq = g.sum_squares(p)?;
            let sq = g.scale(sq, 0.5 * terms.weight_decay)?;
            penalty += g.value(sq).item();
            total = g.add(total, sq)?;
        }
    }

    let suff_loss = g.value(suff).item();
    if !suff_loss.is_finite() || !min_loss.is_finite() {
        return Err(DibError::Numeric("non-finite DIB loss".into()));
    }
    g.backward(total)?;
    let grads = |vars: &[Var]| vars.iter().map(|&v| g.grad_or_zeros(v)).collect::<Vec<_>>();
    Ok(StepOutput {
        suff_loss,
        min_loss,
        penalty,
        encoder_grads: grads(&enc_vars),
        suff_grads: grads(&suff_vars),
        min_grads: min_vars.iter().map(|v| grads(v)).collect(),
        z: g.value(z).clone(),
    })
}

/// Head-only descent steps of the minimality heads on a fixed representation.
fn inner_head_steps(
    model: &mut DibModel,
    opts: &mut [Adam],
    z: &Tensor,
    y: &[usize],
    digits: &[Vec<usize>],
    cfg: &DibConfig,
    n_inner: usize,
    lr: f64,
    rng: &mut Rng,
) -> Result<()> {
    for _ in 0..n_inner {
        for (h, head) in model.min_heads.iter_mut().enumerate() {
            let k = h % cfg.k_heads;
            let rows: Vec<usize> = if cfg.share_heads_across_classes {
                (0..y.len()).collect()
            } else {
                (0..y.len()).filter(|&i| y[i] == h / cfg.k_heads).collect()
            };
            if rows.is_empty() {
                continue;
            }
            let targets: Vec<usize> = rows.iter().map(|&i| digits[i][k]).collect();
            let mlp = head.mlp_mut().expect("MLP head");
            let mut g = Graph::new();
            let vars = mlp.bind(&mut g);
            let input = g.constant(z.select_rows(&rows));
            let out = mlp.forward(&mut g, &vars, input, Some(&mut *rng))?;
            let loss = g.softmax_logloss(out, &targets)?;
            g.backward(loss)?;
            let grads: Vec<Tensor> = vars.iter().map(|&v| g.grad_or_zeros(v)).collect();
            opts[h].step(&mut mlp.params_mut(), &grads, lr);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    /// Batch-mean sufficiency loss, an estimate of H_V(Y|Z).
    pub suff_loss: f64,
    /// Batch-mean loss of the adversarial minimality heads.
    pub min_head_loss: f64,
    pub objective: f64,
    /// Sufficiency-head log loss and accuracy, marginalized over evaluation samples.
    pub train_risk: f64,
    pub test_risk: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub epochs: Vec<EpochRow>,
    pub best_epoch: usize,
    /// Î_V(Z -> Y) on the train split from a freshly trained head.
    pub suff_info: f64,
    /// Î_V(Z -> Dec(X, Y)) on the train split from freshly trained heads.
    pub min_info: f64,
    pub final_train_risk: f64,
    pub final_test_risk: f64,
    pub checkpoint_path: Option<String>,
}

impl RunReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(crate::decomposition::csv_err)?;
        for row in &self.epochs {
            w.serialize(row).map_err(crate::decomposition::csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Digit rows for the chosen head columns of `plan`.
pub fn head_digits(plan: &DecompositionPlan, k: usize) -> Result<Vec<Vec<usize>>> {
    let cols = plan.head_columns(k);
    if cols.len() < k {
        return Err(DibError::Argument(format!("plan has {} digit columns, {} heads requested", plan.n_digits, k)));
    }
    Ok((0..plan.len()).map(|i| cols.iter().map(|&c| plan.row(i)[c]).collect()).collect())
}

/// Mean of per-example log losses of `c` over `samples`, with accuracy.
fn marginal_risk(c: &Classifier, samples: &[Tensor], targets: &[usize]) -> Result<(f64, f64)> {
    let probs = marginal_predict(c, samples)?;
    Ok(logloss_and_accuracy(&probs, targets))
}

/// Trains encoder and heads on the train split; returns the model restored to
/// the epoch with the lowest mean sufficiency loss, and its report.
pub fn train_encoder(
    dataset: &Dataset,
    encoder_cfg: &EncoderConfig,
    cfg: &DibConfig,
    opt: &OptimConfig,
    seed: u64,
) -> Result<(DibModel, RunReport)> {
    dataset.validate()?;
    let n_classes = dataset.n_classes;
    let mut model = DibModel::init(encoder_cfg, cfg, n_classes, seed)?;
    let x_train = dataset.x(Split::Train);
    let y_train = dataset.y(Split::Train);
    let x_test = dataset.x(Split::Test);
    let y_test = dataset.y(Split::Test);
    let plan = build_plan(&y_train, n_classes, cfg.labeling, cfg.k_heads, derive_seed(seed, 3))?;
    let digits = if cfg.beta > 0.0 { head_digits(&plan, cfg.k_heads)? } else { vec![vec![]; y_train.len()] };

    let mut enc_opt = Adam::new(&model.encoder.net.params());
    let mut suff_opt = Adam::new(&head_mlp(&model.suff_head).params());
    let mut min_opts: Vec<Adam> = model.min_heads.iter().map(|h| Adam::new(&head_mlp(h).params())).collect();
    let mut rng = rng_from(seed, 4);
    let mut order: Vec<usize> = (0..y_train.len()).collect();
    let batch = opt.batch_size.max(2);
    let mut epochs = vec![];
    let mut best: Option<(f64, usize, DibModel)> = None;

    for epoch in 0..opt.epochs {
        let lr = opt.lr_at(epoch);
        let head_lr = lr * cfg.head_lr_multiplier;
        order.shuffle(&mut rng);
        let (mut suff_sum, mut min_sum, mut obj_sum, mut n_batches) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(batch) {
            if chunk.len() < 2 {
                continue;
            }
            let xb = x_train.select_rows(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| y_train[i]).collect();
            let db: Vec<Vec<usize>> = chunk.iter().map(|&i| digits[i].clone()).collect();
            let step_rng = rng.clone();
            if let Strategy::Unrolled { n_inner } = cfg.strategy {
                if !model.min_heads.is_empty() {
                    // Same noise and masks as the encoder step that follows.
                    let mut probe_rng = step_rng.clone();
                    let z = encode_batch(&model.encoder, &xb, &mut probe_rng)?;
                    inner_head_steps(&mut model, &mut min_opts, &z, &yb, &db, cfg, n_inner, head_lr, &mut rng)?;
                }
            }
            let mut srng = step_rng;
            let out = dib_loss_step(&model, &xb, &yb, &db, cfg, &mut srng)?;
            rng = srng;
            enc_opt.step(&mut model.encoder.net.params_mut(), &out.encoder_grads, lr);
            suff_opt.step(&mut model.suff_head.mlp_mut().expect("MLP head").params_mut(), &out.suff_grads, lr);
            if cfg.strategy == Strategy::JointReversal {
                for (h, head) in model.min_heads.iter_mut().enumerate() {
                    min_opts[h].step(&mut head.mlp_mut().expect("MLP head").params_mut(), &out.min_grads[h], head_lr);
                }
            }
            suff_sum += out.suff_loss;
            min_sum += out.min_loss;
            obj_sum += out.objective(cfg.beta);
            n_batches += 1;
        }
        let nb = n_batches.max(1) as f64;
        let eval_seed = derive_seed(seed, 1000 + epoch as u64);
        let train_samples = model.encoder.encode(&x_train, model.encoder.eval_samples(), eval_seed)?;
        let test_samples = model.encoder.encode(&x_test, model.encoder.eval_samples(), derive_seed(eval_seed, 1))?;
        let (train_risk, train_acc) = marginal_risk(&model.suff_head, &train_samples, &y_train)?;
        let (test_risk, test_acc) = marginal_risk(&model.suff_head, &test_samples, &y_test)?;
        let row = EpochRow {
            epoch,
            lr,
            suff_loss: suff_sum / nb,
            min_head_loss: min_sum / nb,
            objective: obj_sum / nb,
            train_risk,
            test_risk,
            train_acc,
            test_acc,
        };
        if !row.objective.is_finite() {
            return Err(DibError::Numeric(format!("epoch {epoch}: non-finite objective")));
        }
        if best.as_ref().is_none_or(|(b, _, _)| row.suff_loss < *b) {
            best = Some((row.suff_loss, epoch, model.clone()));
        }
        epochs.push(row);
    }

    let (best_epoch, model) = match best {
        Some((_, e, m)) => (e, m),
        None => (0, model),
    };
    let info_seed = derive_seed(seed, 5);
    let rep = Representation::Sampled { encoder: &model.encoder, x: &x_train };
    let all: Vec<usize> = (0..y_train.len()).collect();
    let suff_info = empirical_entropy(&y_train)
        - representation_v_entropy(rep, &all, &y_train, &cfg.head_spec, &cfg.report_budget, derive_seed(info_seed, 1))?;
    let min_info = minimality_information(
        rep,
        &y_train,
        &plan,
        cfg.k_heads,
        &cfg.head_spec,
        cfg.share_heads_across_classes,
        &cfg.report_budget,
        derive_seed(info_seed, 2),
    )?;
    let final_row = epochs.get(best_epoch).cloned();
    let report = RunReport {
        seed,
        config_hash: String::new(),
        config: serde_json::to_value(cfg)?,
        epochs,
        best_epoch,
        suff_info,
        min_info,
        final_train_risk: final_row.as_ref().map_or(f64::NAN, |r| r.train_risk),
        final_test_risk: final_row.as_ref().map_or(f64::NAN, |r| r.test_risk),
        checkpoint_path: None,
    };
    Ok((model, report))
}

fn encode_batch(encoder: &Encoder, x: &Tensor, rng: &mut Rng) -> Result<Tensor> {
    let mut g = Graph::new();
    let vars = encoder.net.bind_frozen(&mut g);
    let xv = g.constant(x.clone());
    let out = encoder.forward(&mut g, &vars, xv, rng)?;
    Ok(g.value(out.z).clone())
}

/// Ĥ_V(targets | z): log loss of a fresh classifier of `spec` fit to the
/// pairs. MLP families train with `budget`; tabular families are fit exactly.
pub fn empirical_v_entropy(spec: &FamilySpec, z: &Tensor, targets: &[usize], budget: &OptimConfig, seed: u64) -> Result<f64> {
    if z.rows() != targets.len() {
        return Err(DibError::Dimension(format!("{} representation rows, {} targets", z.rows(), targets.len())));
    }
    let mut c = init_classifier(spec, seed)?;
    let loss = match spec.kind {
        FamilyKind::Mlp => c.fit(z, targets, budget, seed)?,
        FamilyKind::Tabular => c.fit_tabular(z, targets)?,
    };
    if !loss.is_finite() {
        return Err(DibError::Numeric("empirical V-entropy is not finite".into()));
    }
    Ok(loss)
}

/// Where the inputs of a V-entropy estimate come from.
#[derive(Clone, Copy, Debug)]
pub enum Representation<'a> {
    /// A fixed (deterministic) representation.
    Fixed(&'a Tensor),
    /// Samples of a stochastic encoder on a batch, redrawn every epoch.
    Sampled { encoder: &'a Encoder, x: &'a Tensor },
}

impl Representation<'_> {
    pub fn rows(&self) -> usize {
        match self {
            Representation::Fixed(z) => z.rows(),
            Representation::Sampled { x, .. } => x.rows(),
        }
    }

    fn draw(&self, seed: u64) -> Result<Tensor> {
        match self {
            Representation::Fixed(z) => Ok((*z).clone()),
            Representation::Sampled { encoder, x } => Ok(encoder.encode(x, 1, seed)?.remove(0)),
        }
    }

    fn is_fixed(&self) -> bool {
        match self {
            Representation::Fixed(_) => true,
            Representation::Sampled { encoder, .. } => encoder.is_deterministic(),
        }
    }
}

/// Ĥ_V(targets | Z) for the examples `rows` of a representation. With a
/// stochastic encoder the head trains on a fresh sample every epoch and the
/// returned loss is averaged over the encoder's evaluation samples, i.e. it
/// estimates the expected log loss over Z rather than over one draw.
pub fn representation_v_entropy(
    rep: Representation<'_>,
    rows: &[usize],
    targets: &[usize],
    spec: &FamilySpec,
    budget: &OptimConfig,
    seed: u64,
) -> Result<f64> {
    if rows.len() != targets.len() {
        return Err(DibError::Dimension(format!("{} rows, {} targets", rows.len(), targets.len())));
    }
    if rep.is_fixed() {
        let z = rep.draw(seed)?.select_rows(rows);
        return empirical_v_entropy(spec, &z, targets, budget, seed);
    }
    let Representation::Sampled { encoder, .. } = rep else { unreachable!("fixed handled above") };
    let mut c = init_classifier(spec, seed)?;
    c.fit_resampled(|epoch| Ok(rep.draw(derive_seed(seed, epoch as u64))?.select_rows(rows)), targets, budget, seed)?;
    let mut total = 0.0;
    for s in 0..encoder.n_eval_samples {
        let z = rep.draw(derive_seed(seed, u64::MAX - s as u64))?.select_rows(rows);
        total += c.evaluate(&z, targets)?.0;
    }
    let loss = total / encoder.n_eval_samples as f64;
    if !loss.is_finite() {
        return Err(DibError::Numeric("V-entropy estimate is not finite".into()));
    }
    Ok(loss)
}

/// Î_V(Z -> Dec(X, Y)) averaged over `k` plan columns. Each column's
/// information is its class-conditional entropy minus the V-entropy of a
/// fresh head; shared heads see all classes, per-class heads one class each.
#[allow(clippy::too_many_arguments)]
pub fn minimality_information(
    rep: Representation<'_>,
    labels: &[usize],
    plan: &DecompositionPlan,
    k: usize,
    head_spec: &FamilySpec,
    shared: bool,
    budget: &OptimConfig,
    seed: u64,
) -> Result<f64> {
    let n_classes = plan.n_classes;
    let cols = plan.head_columns(k);
    if cols.is_empty() {
        return Err(DibError::Argument("plan has no digit columns".into()));
    }
    if rep.rows() != labels.len() || plan.len() != labels.len() {
        return Err(DibError::Dimension("representation, labels and plan disagree in length".into()));
    }
    let members: Vec<Vec<usize>> = (0..n_classes).map(|c| (0..labels.len()).filter(|&i| labels[i] == c).collect()).collect();
    let all: Vec<usize> = (0..labels.len()).collect();
    let n = labels.len() as f64;
    let mut total = 0.0;
    for (j, &col) in cols.iter().enumerate() {
        let column = plan.column(col);
        let pick = |rows: &[usize]| rows.iter().map(|&i| column[i]).collect::<Vec<_>>();
        let head_seed = derive_seed(seed, j as u64);
        if shared {
            let h_const: f64 = members.iter().map(|m| m.len() as f64 / n * empirical_entropy(&pick(m))).sum();
            let h_v = representation_v_entropy(rep, &all, &column, head_spec, budget, head_seed)?;
            total += h_const - h_v;
        } else {
            let mut acc = 0.0;
            for (c, m) in members.iter().enumerate() {
                let tc = pick(m);
                let h_v = representation_v_entropy(rep, m, &tc, head_spec, budget, derive_seed(head_seed, c as u64))?;
                acc += empirical_entropy(&tc) - h_v;
            }
            total += acc / n_classes as f64;
        }
    }
    Ok(total / cols.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErmMode {
    Average,
    /// Minimizes `R_train - gamma * R_test`.
    Worst { gamma: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErmResult {
    pub classifier: Classifier,
    pub train_risk: f64,
    pub test_risk: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

impl ErmResult {
    pub fn gap(&self) -> f64 {
        self.test_risk - self.train_risk
    }
}

/// Trains a classifier of `family` on a frozen encoder's representation.
pub fn train_downstream_erm(
    encoder: &Encoder,
    family: &FamilySpec,
    dataset: &Dataset,
    mode: ErmMode,
    budget: &OptimConfig,
    seed: u64,
) -> Result<ErmResult> {
    fit_on_representation(encoder, family, dataset, &dataset.labels, mode, budget, seed)
}

/// Downstream training toward arbitrary per-example `targets` (indexed like
/// the dataset). A fresh representation sample is drawn every epoch, with
/// normalization statistics taken per split. In worst mode every train
/// minibatch is paired with a test minibatch whose loss enters with weight
/// `-gamma`, so ascending the test loss is traded against fitting the train
/// set. Final risks marginalize over the encoder's evaluation samples.
pub fn fit_on_representation(
    encoder: &Encoder,
    family: &FamilySpec,
    dataset: &Dataset,
    targets: &[usize],
    mode: ErmMode,
    budget: &OptimConfig,
    seed: u64,
) -> Result<ErmResult> {
    if targets.len() != dataset.len() {
        return Err(DibError::Dimension(format!("{} targets for {} examples", targets.len(), dataset.len())));
    }
    if family.input_dim != encoder.z_dim {
        return Err(DibError::Dimension(format!("family expects {} inputs, encoder emits {}", family.input_dim, encoder.z_dim)));
    }
    let gamma = match mode {
        ErmMode::Average => 0.0,
        ErmMode::Worst { gamma } if gamma >= 0.0 => gamma,
        ErmMode::Worst { gamma } => return Err(DibError::Argument(format!("gamma {gamma} must be >= 0"))),
    };
    let mut clf = init_classifier(family, derive_seed(seed, 1))?;
    let x_train = dataset.x(Split::Train);
    let x_test = dataset.x(Split::Test);
    let t_train: Vec<usize> = dataset.train.iter().map(|&i| targets[i]).collect();
    let t_test: Vec<usize> = dataset.test.iter().map(|&i| targets[i]).collect();
    let mlp = clf.mlp_mut().ok_or_else(|| DibError::UnsupportedMode("downstream training of a tabular family".into()))?;
    let mut opt = Adam::new(&mlp.params());
    let mut rng = rng_from(seed, 2);
    let mut test_rng = rng_from(seed, 3);
    let mut train_order: Vec<usize> = (0..t_train.len()).collect();
    let mut test_order: Vec<usize> = (0..t_test.len()).collect();
    let batch = budget.batch_size.max(1);
    for epoch in 0..budget.epochs {
        let lr = budget.lr_at(epoch);
        let zs = derive_seed(seed, 10_000 + epoch as u64);
        let z_train = encoder.encode(&x_train, 1, zs)?.remove(0);
        let z_test = if gamma > 0.0 { Some(encoder.encode(&x_test, 1, derive_seed(zs, 1))?.remove(0)) } else { None };
        train_order.shuffle(&mut rng);
        if gamma > 0.0 {
            test_order.shuffle(&mut test_rng);
        }
        for (b, chunk) in train_order.chunks(batch).enumerate() {
            let mut g = Graph::new();
            let vars = mlp.bind(&mut g);
            let xb = g.constant(z_train.select_rows(chunk));
            let tb: Vec<usize> = chunk.iter().map(|&i| t_train[i]).collect();
            let out = mlp.forward(&mut g, &vars, xb, Some(&mut rng))?;
            let mut loss = g.softmax_logloss(out, &tb)?;
            if let Some(z_test) = &z_test {
                let start = (b * batch) % test_order.len().max(1);
                let tchunk: Vec<usize> = (0..chunk.len().min(test_order.len()))
                    .map(|j| test_order[(start + j) % test_order.len()])
                    .collect();
                let xt = g.constant(z_test.select_rows(&tchunk));
                let tt: Vec<usize> = tchunk.iter().map(|&i| t_test[i]).collect();
                let w = vec![-gamma / tchunk.len() as f64; tchunk.len()];
                let out_t = mlp.forward(&mut g, &vars, xt, Some(&mut rng))?;
                let test_loss = g.weighted_logloss(out_t, &tt, &w)?;
                loss = g.add(loss, test_loss)?;
            }
            g.backward(loss)?;
            let grads: Vec<Tensor> = vars.iter().map(|&v| g.grad_or_zeros(v)).collect();
            opt.step(&mut mlp.params_mut(), &grads, lr);
        }
    }
    let eval_seed = derive_seed(seed, 4);
    let train_samples = encoder.encode(&x_train, encoder.eval_samples(), eval_seed)?;
    let test_samples = encoder.encode(&x_test, encoder.eval_samples(), derive_seed(eval_seed, 1))?;
    let (train_risk, train_acc) = marginal_risk(&clf, &train_samples, &t_train)?;
    let (test_risk, test_acc) = marginal_risk(&clf, &test_samples, &t_test)?;
    if !(train_risk.is_finite() && test_risk.is_finite()) {
        return Err(DibError::Numeric("downstream risks are not finite".into()));
    }
    Ok(ErmResult { classifier: clf, train_risk, test_risk, train_acc, test_acc })
}
