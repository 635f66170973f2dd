//! Generalization probes on trained models.
//!
//! The V-minimality probe measures how well fresh heads of a family decode
//! arbitrary within-class labelings from a model's training representation.
//! A zoo of plain classifiers is ranked by the probe and by the observed
//! generalization gap, and the two rankings are compared with Kendall's τ-b.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::data::{Dataset, Split};
use crate::decomposition::{build_plan, LabelingMode};
use crate::dib::{minimality_information, representation_v_entropy, train_encoder, BaselineRegularizer, DibConfig, Representation};
use crate::checkpoint::Checkpoint;
use crate::error::{DibError, Result};
use crate::models::{logloss_and_accuracy, marginal_predict, random_labels, Classifier, Encoder, EncoderConfig, FamilySpec};
use crate::optim::OptimConfig;
use crate::rng::{derive_seed, rng_from};
use crate::tensor::Tensor;

/// Head budget of every probe: 200 epochs at lr 1e-3.
pub fn probe_budget() -> OptimConfig {
    OptimConfig { lr: 1e-3, epochs: 200, batch_size: 128, decay_per_epoch: 1.0 }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KendallTau {
    pub tau: f64,
    /// Set when one sequence is constant; τ is then reported as 0.
    pub undefined: bool,
}

/// Kendall's τ-b.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<KendallTau> {
    if a.len() != b.len() {
        return Err(DibError::Argument(format!("sequences of length {} and {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(DibError::Argument("need at least 2 observations".into()));
    }
    let (mut concordant, mut discordant, mut ties_a, mut ties_b) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let da = a[i] - a[j];
            let db = b[i] - b[j];
            if da == 0.0 && db == 0.0 {
                continue;
            }
            if da == 0.0 {
                ties_a += 1.0;
            } else if db == 0.0 {
                ties_b += 1.0;
            } else if (da > 0.0) == (db > 0.0) {
                concordant += 1.0;
            } else {
                discordant += 1.0;
            }
        }
    }
    let denom = ((concordant + discordant + ties_a) * (concordant + discordant + ties_b)).sqrt();
    if denom == 0.0 {
        return Ok(KendallTau { tau: 0.0, undefined: true });
    }
    Ok(KendallTau { tau: (concordant - discordant) / denom, undefined: false })
}

/// Concordant and discordant pair counts (pairs tied in either sequence are skipped).
pub fn pair_signs(a: &[f64], b: &[f64]) -> Result<(usize, usize)> {
    if a.len() != b.len() {
        return Err(DibError::Argument(format!("sequences of length {} and {}", a.len(), b.len())));
    }
    let (mut c, mut d) = (0, 0);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let s = (a[i] - a[j]) * (b[i] - b[j]);
            if s > 0.0 {
                c += 1;
            } else if s < 0.0 {
                d += 1;
            }
        }
    }
    Ok((c, d))
}

/// One-sided sign test: probability of at least `positive` successes out
/// of `positive + negative` fair coin flips.
pub fn sign_test(positive: usize, negative: usize) -> Result<f64> {
    let n = (positive + negative) as u64;
    if n == 0 {
        return Ok(1.0);
    }
    if positive == 0 {
        return Ok(1.0);
    }
    let b = Binomial::new(0.5, n).map_err(|e| DibError::Argument(e.to_string()))?;
    Ok(b.sf(positive as u64 - 1))
}

/// Î_V(Z→Dec(X,Y)) of a training representation with per-class fresh heads,
/// floored at 0.
#[allow(clippy::too_many_arguments)]
pub fn v_minimality_probe(
    rep: Representation<'_>,
    labels: &[usize],
    n_classes: usize,
    family: &FamilySpec,
    mode: LabelingMode,
    k: usize,
    budget: &OptimConfig,
    seed: u64,
) -> Result<f64> {
    let plan = build_plan(labels, n_classes, mode, k, derive_seed(seed, 1))?;
    let value = minimality_information(rep, labels, &plan, k, family, false, budget, derive_seed(seed, 2))?;
    Ok(value.max(0.0))
}

/// Mean train log likelihood a family reaches on uniformly random labels,
/// averaged over `seeds`. Higher means the family fits noise better.
pub fn random_label_complexity(family: &FamilySpec, z: &Tensor, n_classes: usize, seeds: &[u64], budget: &OptimConfig) -> Result<f64> {
    if seeds.is_empty() {
        return Err(DibError::Argument("need at least one seed".into()));
    }
    let rows: Vec<usize> = (0..z.rows()).collect();
    let mut total = 0.0;
    for &s in seeds {
        let labels = random_labels(z.rows(), n_classes, &mut rng_from(s, 0x7A));
        total -= representation_v_entropy(Representation::Fixed(z), &rows, &labels, family, budget, s)?;
    }
    Ok(total / seeds.len() as f64)
}

/// One configuration of the model zoo: a plain classifier (no minimality
/// term) with a deterministic encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZooMember {
    pub id: String,
    pub encoder: EncoderConfig,
    pub dib: DibConfig,
    pub optim: OptimConfig,
}

/// Settings varied across the default zoo.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZooSpec {
    pub widths: Vec<usize>,
    pub depths: Vec<usize>,
    pub z_dims: Vec<usize>,
    pub regularizers: Vec<BaselineRegularizer>,
    pub size: usize,
    pub optim: OptimConfig,
}

impl Default for ZooSpec {
    fn default() -> Self {
        Self {
            widths: vec![16, 64, 256],
            depths: vec![1, 2],
            z_dims: vec![4, 16, 64],
            regularizers: vec![
                BaselineRegularizer::None,
                BaselineRegularizer::Dropout { p: 0.2 },
                BaselineRegularizer::Dropout { p: 0.5 },
                BaselineRegularizer::WeightDecay { lambda: 1e-4 },
                BaselineRegularizer::WeightDecay { lambda: 1e-2 },
            ],
            size: 20,
            optim: OptimConfig { lr: 1e-3, epochs: 300, batch_size: 64, decay_per_epoch: 1.0 },
        }
    }
}

/// Draws `spec.size` distinct members from the product of the varied settings.
pub fn make_zoo(spec: &ZooSpec, input_dim: usize, n_classes: usize, seed: u64) -> Result<Vec<ZooMember>> {
    use rand::seq::SliceRandom;
    let mut grid = vec![];
    for &w in &spec.widths {
        for &d in &spec.depths {
            for &z in &spec.z_dims {
                for r in &spec.regularizers {
                    grid.push((w, d, z, *r));
                }
            }
        }
    }
    if grid.is_empty() || spec.size == 0 {
        return Err(DibError::Argument("empty zoo".into()));
    }
    grid.shuffle(&mut rng_from(seed, 0x200));
    Ok(grid
        .into_iter()
        .cycle()
        .take(spec.size)
        .enumerate()
        .map(|(i, (w, d, z, r))| {
            let mut encoder = EncoderConfig::new(input_dim, z);
            encoder.hidden_widths = vec![w; d];
            let mut dib = DibConfig::new(0.0, z, n_classes);
            dib.baseline = Some(r);
            ZooMember { id: format!("m{i:02}_w{w}_d{d}_z{z}_{}", regularizer_tag(&r)), encoder, dib, optim: spec.optim.clone() }
        })
        .collect())
}

fn regularizer_tag(r: &BaselineRegularizer) -> String {
    match r {
        BaselineRegularizer::None => "plain".into(),
        BaselineRegularizer::Dropout { p } => format!("drop{p}"),
        BaselineRegularizer::WeightDecay { lambda } => format!("wd{lambda}"),
        BaselineRegularizer::VibKl { beta } => format!("vib{beta}"),
    }
}

/// A trained classifier as seen by the probe: its encoder and head.
#[derive(Clone, Debug)]
pub struct ZooModel {
    pub id: String,
    pub encoder: Encoder,
    pub head: Classifier,
}

impl ZooModel {
    pub fn from_checkpoint(id: &str, ck: &Checkpoint) -> Result<Self> {
        Ok(Self { id: id.to_string(), encoder: ck.encoder("encoder")?, head: ck.classifier("suff_head")? })
    }
}

/// Trains every member; members run in parallel, each with its own seed.
pub fn train_zoo(dataset: &Dataset, members: &[ZooMember], seed: u64) -> Result<Vec<ZooModel>> {
    members
        .par_iter()
        .enumerate()
        .map(|(i, m)| {
            let (model, _) = train_encoder(dataset, &m.encoder, &m.dib, &m.optim, derive_seed(seed, i as u64))?;
            Ok(ZooModel { id: m.id.clone(), encoder: model.encoder, head: model.suff_head })
        })
        .collect()
}

/// Marginal log loss and accuracy of a model's head on one split.
pub fn split_risk(model: &ZooModel, dataset: &Dataset, split: Split, seed: u64) -> Result<(f64, f64)> {
    let samples = model.encoder.encode(&dataset.x(split), model.encoder.eval_samples(), seed)?;
    Ok(logloss_and_accuracy(&marginal_predict(&model.head, &samples)?, &dataset.y(split)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub model_id: String,
    pub probe: f64,
    pub train_loss: f64,
    pub gap_ll: f64,
    pub gap_acc: f64,
    pub family: FamilySpec,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeSettings {
    pub mode: LabelingMode,
    pub k: usize,
    pub budget: OptimConfig,
    /// Members whose train log loss exceeds this are dropped.
    pub train_loss_threshold: f64,
    pub min_models: usize,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self { mode: LabelingMode::BaseExpansion, k: 4, budget: probe_budget(), train_loss_threshold: 0.05, min_models: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSweep {
    pub reports: Vec<ProbeReport>,
    pub n_trained: usize,
    pub tau_logloss: KendallTau,
    pub tau_acc: KendallTau,
}

/// Probes every model whose train loss is within the threshold, on its
/// training representation, with the model's own head architecture as the
/// family.
pub fn probe_sweep(models: &[ZooModel], dataset: &Dataset, settings: &ProbeSettings, seed: u64) -> Result<ProbeSweep> {
    let x_train = dataset.x(Split::Train);
    let y_train = dataset.y(Split::Train);
    let evaluated: Vec<(usize, (f64, f64), (f64, f64))> = models
        .par_iter()
        .enumerate()
        .map(|(i, m)| {
            let s = derive_seed(seed, 1_000 + i as u64);
            Ok((i, split_risk(m, dataset, Split::Train, s)?, split_risk(m, dataset, Split::Test, derive_seed(s, 1))?))
        })
        .collect::<Result<_>>()?;
    let kept: Vec<_> = evaluated.into_iter().filter(|(_, train, _)| train.0 <= settings.train_loss_threshold).collect();
    if kept.len() < settings.min_models {
        return Err(DibError::InsufficientSample(format!(
            "{} of {} models reach train loss <= {}, need {}",
            kept.len(),
            models.len(),
            settings.train_loss_threshold,
            settings.min_models
        )));
    }
    let reports: Vec<ProbeReport> = kept
        .par_iter()
        .map(|&(i, train, test)| {
            let m = &models[i];
            let probe_seed = derive_seed(seed, i as u64);
            let rep = Representation::Sampled { encoder: &m.encoder, x: &x_train };
            let family = m.head.spec.clone();
            let probe = v_minimality_probe(rep, &y_train, dataset.n_classes, &family, settings.mode, settings.k, &settings.budget, probe_seed)?;
            Ok(ProbeReport {
                model_id: m.id.clone(),
                probe,
                train_loss: train.0,
                gap_ll: test.0 - train.0,
                gap_acc: train.1 - test.1,
                family,
                seed: probe_seed,
            })
        })
        .collect::<Result<_>>()?;
    let probes: Vec<f64> = reports.iter().map(|r| r.probe).collect();
    let gap_ll: Vec<f64> = reports.iter().map(|r| r.gap_ll).collect();
    let gap_acc: Vec<f64> = reports.iter().map(|r| r.gap_acc).collect();
    Ok(ProbeSweep {
        n_trained: models.len(),
        tau_logloss: kendall_tau(&probes, &gap_ll)?,
        tau_acc: kendall_tau(&probes, &gap_acc)?,
        reports,
    })
}

impl ProbeSweep {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(crate::decomposition::csv_err)?;
        w.write_record(["model_id", "probe", "gap_ll", "gap_acc", "train_loss"]).map_err(crate::decomposition::csv_err)?;
        for r in &self.reports {
            w.write_record([r.model_id.clone(), r.probe.to_string(), r.gap_ll.to_string(), r.gap_acc.to_string(), r.train_loss.to_string()])
                .map_err(crate::decomposition::csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_examples() {
        let t = kendall_tau(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 4.0, 3.0]).unwrap();
        assert!((t.tau - 4.0 / 6.0).abs() < 1e-12);
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap().tau, 1.0);
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap().tau, -1.0);
        let tied = kendall_tau(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(tied.undefined && tied.tau == 0.0);
        assert!(kendall_tau(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn tau_b_with_ties_matches_formula() {
        // a has one tied pair, b none: n0 = 6, n1 = 1, C = 4, D = 1.
        let t = kendall_tau(&[1.0, 1.0, 2.0, 3.0], &[1.0, 2.0, 4.0, 3.0]).unwrap();
        let expected = (4.0 - 1.0) / ((6.0f64 - 1.0) * 6.0).sqrt();
        assert!((t.tau - expected).abs() < 1e-12);
    }

    #[test]
    fn sign_test_values() {
        assert!((sign_test(3, 0).unwrap() - 0.125).abs() < 1e-12);
        assert!((sign_test(2, 1).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(sign_test(0, 4).unwrap(), 1.0);
        assert!(sign_test(60, 40).unwrap() < 0.05);
    }
}
