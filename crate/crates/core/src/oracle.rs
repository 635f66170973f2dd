//! Exact computations on finite sample spaces.
//!
//! A [`FiniteProblem`] fixes a distribution over a finite input alphabet and a
//! deterministic labeling. Representations are channels `P(Z|X)` given as
//! row-stochastic matrices. Predictive families are tabular: at every `z` a
//! predictor picks one probability vector from a shared finite candidate set.
//! All log losses are clamped at [`LOG_PROB_CLAMP`] nats.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::LOG_PROB_CLAMP;
use crate::decomposition::{digit_count, to_digits};
use crate::error::{DibError, Result};
use crate::models::{clamped_nll, simplex_grid};
use crate::rng::rng_from;

const SUM_TOL: f64 = 1e-12;
/// Largest number of labelings of one class enumerated exhaustively.
pub const MAX_ENUMERATED_LABELINGS: usize = 1 << 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteProblem {
    pub x_size: usize,
    pub y_size: usize,
    pub z_size: usize,
    /// `labels[x]` is the label of input `x`.
    pub labels: Vec<usize>,
    pub p_x: Vec<f64>,
}

impl FiniteProblem {
    pub fn new(labels: Vec<usize>, y_size: usize, z_size: usize, p_x: Vec<f64>) -> Result<Self> {
        let p = Self { x_size: labels.len(), y_size, z_size, labels, p_x };
        p.validate()?;
        Ok(p)
    }

    /// Uniform inputs with the first half labeled 0 and so on, in contiguous blocks.
    pub fn uniform_blocks(x_size: usize, y_size: usize, z_size: usize) -> Result<Self> {
        if y_size == 0 {
            return Err(DibError::Argument("y_size must be >= 1".into()));
        }
        let labels = (0..x_size).map(|x| x * y_size / x_size.max(1)).collect();
        Self::new(labels, y_size, z_size, vec![1.0 / x_size as f64; x_size])
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.x_size || self.p_x.len() != self.x_size {
            return Err(DibError::Dimension(format!(
                "x_size {} but {} labels and {} probabilities",
                self.x_size,
                self.labels.len(),
                self.p_x.len()
            )));
        }
        check_distribution(&self.p_x)?;
        if let Some(&y) = self.labels.iter().find(|&&y| y >= self.y_size) {
            return Err(DibError::Index(format!("label {y} outside [0, {})", self.y_size)));
        }
        let py = self.label_marginal();
        if let Some(y) = py.iter().position(|&m| m <= 0.0) {
            return Err(DibError::Assumption(format!("label {y} has no probability mass")));
        }
        if self.z_size < self.y_size {
            return Err(DibError::Assumption(format!("|Z| = {} is smaller than |Y| = {}", self.z_size, self.y_size)));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let p: Self = toml::from_str(text).map_err(|e| DibError::Config(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| DibError::Config(e.to_string()))
    }

    pub fn label_marginal(&self) -> Vec<f64> {
        let mut py = vec![0.0; self.y_size];
        for (x, &y) in self.labels.iter().enumerate() {
            py[y] += self.p_x[x];
        }
        py
    }

    /// Inputs carrying label `y`, in increasing order.
    pub fn class_members(&self, y: usize) -> Vec<usize> {
        (0..self.x_size).filter(|&x| self.labels[x] == y).collect()
    }

    /// Every train subset holding exactly one input per label.
    pub fn one_per_class_subsets(&self) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for y in 0..self.y_size {
            let members = self.class_members(y);
            out = out
                .into_iter()
                .flat_map(|prefix: Vec<usize>| {
                    members.iter().map(move |&x| {
                        let mut s = prefix.clone();
                        s.push(x);
                        s
                    })
                })
                .collect();
        }
        out
    }
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(DibError::Argument("probabilities must be finite and non-negative".into()));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > SUM_TOL {
        return Err(DibError::Argument(format!("probabilities sum to {total}")));
    }
    Ok(())
}

/// A representation `P(Z|X)`: one row per input, one column per `z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub rows: Vec<Vec<f64>>,
}

impl Channel {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let c = Self { rows };
        let width = c.z_size();
        for (x, r) in c.rows.iter().enumerate() {
            if r.len() != width {
                return Err(DibError::Dimension(format!("row {x} has {} entries, expected {width}", r.len())));
            }
            check_distribution(r).map_err(|e| DibError::Argument(format!("row {x}: {e}")))?;
        }
        Ok(c)
    }

    /// `Z = g(X)` for a deterministic map `g`.
    pub fn deterministic(map: &[usize], z_size: usize) -> Result<Self> {
        Self::new(
            map.iter()
                .map(|&z| {
                    let mut r = vec![0.0; z_size];
                    r[z] = 1.0;
                    r
                })
                .collect(),
        )
    }

    pub fn identity(x_size: usize) -> Result<Self> {
        Self::deterministic(&(0..x_size).collect::<Vec<_>>(), x_size)
    }

    /// `Z` uniform and independent of `X`.
    pub fn uniform(x_size: usize, z_size: usize) -> Result<Self> {
        Self::new(vec![vec![1.0 / z_size as f64; z_size]; x_size])
    }

    /// `w * a + (1 - w) * b`.
    pub fn mixture(a: &Channel, b: &Channel, w: f64) -> Result<Self> {
        if a.rows.len() != b.rows.len() || a.z_size() != b.z_size() {
            return Err(DibError::Dimension("mixed channels differ in shape".into()));
        }
        Self::new(
            a.rows
                .iter()
                .zip(&b.rows)
                .map(|(ra, rb)| ra.iter().zip(rb).map(|(u, v)| w * u + (1.0 - w) * v).collect())
                .collect(),
        )
    }

    pub fn x_size(&self) -> usize {
        self.rows.len()
    }

    pub fn z_size(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }
}

/// Candidate conditionals shared by every `z`. The universal family also
/// offers, at each `z`, the true conditional of the joint being evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularFamily {
    pub n_labels: usize,
    pub points: Vec<Vec<f64>>,
    pub universal: bool,
}

impl TabularFamily {
    /// Simplex grid of the given resolution, its vertices and the extra points.
    pub fn grid(n_labels: usize, resolution: f64, extra: &[Vec<f64>]) -> Result<Self> {
        let mut f = Self { n_labels, points: simplex_grid(n_labels, resolution)?, universal: false };
        for v in 0..n_labels {
            f.add_point(vertex(n_labels, v))?;
        }
        for p in extra {
            f.add_point(p.clone())?;
        }
        Ok(f)
    }

    /// Deterministic predictors plus the extra points.
    pub fn vertices(n_labels: usize, extra: &[Vec<f64>]) -> Result<Self> {
        let mut f = Self { n_labels, points: vec![], universal: false };
        for v in 0..n_labels {
            f.add_point(vertex(n_labels, v))?;
        }
        for p in extra {
            f.add_point(p.clone())?;
        }
        Ok(f)
    }

    pub fn universal(base: &TabularFamily) -> Self {
        Self { universal: true, ..base.clone() }
    }

    /// Adds a candidate unless an identical one is present.
    pub fn add_point(&mut self, p: Vec<f64>) -> Result<()> {
        if p.len() != self.n_labels {
            return Err(DibError::Dimension(format!("point has {} entries, family has {} labels", p.len(), self.n_labels)));
        }
        check_distribution(&p)?;
        if !self.points.contains(&p) {
            self.points.push(p);
        }
        Ok(())
    }

    pub fn contains(&self, other: &TabularFamily) -> bool {
        (self.universal || !other.universal) && other.points.iter().all(|p| self.points.contains(p))
    }
}

fn vertex(n: usize, v: usize) -> Vec<f64> {
    let mut p = vec![0.0; n];
    p[v] = 1.0;
    p
}

pub fn exact_entropy(p: &[f64]) -> Result<f64> {
    if p.iter().any(|&v| v < 0.0) {
        return Err(DibError::Argument("negative probability".into()));
    }
    Ok(p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum())
}

/// `I(A;B)` of a joint matrix `joint[a][b]`.
pub fn exact_mutual_information(joint: &[Vec<f64>]) -> f64 {
    let pa: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
    let nb = joint.first().map_or(0, |r| r.len());
    let pb: Vec<f64> = (0..nb).map(|b| joint.iter().map(|r| r[b]).sum()).collect();
    let mut mi = 0.0;
    for (a, r) in joint.iter().enumerate() {
        for (b, &p) in r.iter().enumerate() {
            if p > 0.0 {
                mi += p * (p / (pa[a] * pb[b])).ln();
            }
        }
    }
    mi
}

/// Expected clamped log loss of predicting `n ~ column` with `q`.
fn cross_entropy(column: &[f64], q: &[f64]) -> f64 {
    column.iter().zip(q).filter(|(&w, _)| w > 0.0).map(|(&w, &p)| w * clamped_nll(p)).sum()
}

fn best_point(family: &TabularFamily, column: &[f64]) -> f64 {
    let mut best = family.points.iter().map(|q| cross_entropy(column, q)).fold(f64::INFINITY, f64::min);
    let mass: f64 = column.iter().sum();
    if family.universal && mass > 0.0 {
        let truth: Vec<f64> = column.iter().map(|w| w / mass).collect();
        best = best.min(cross_entropy(column, &truth));
    }
    best
}

/// `H_V(N|Z)` of a joint `joint[n][z]`: each `z` picks its best candidate.
pub fn exact_v_entropy(joint: &[Vec<f64>], family: &TabularFamily) -> Result<f64> {
    check_joint(joint, family.n_labels)?;
    let nz = joint[0].len();
    Ok((0..nz)
        .map(|z| {
            let column: Vec<f64> = joint.iter().map(|r| r[z]).collect();
            best_point(family, &column)
        })
        .sum())
}

/// `H_V(N|∅)`: the best constant prediction.
pub fn exact_v_entropy_constant(joint: &[Vec<f64>], family: &TabularFamily) -> Result<f64> {
    check_joint(joint, family.n_labels)?;
    let marginal: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
    Ok(best_point(family, &marginal))
}

/// `I_V(Z→N) = H_V(N|∅) − H_V(N|Z)`.
pub fn exact_v_information(joint: &[Vec<f64>], family: &TabularFamily) -> Result<f64> {
    Ok(exact_v_entropy_constant(joint, family)? - exact_v_entropy(joint, family)?)
}

fn check_joint(joint: &[Vec<f64>], n_labels: usize) -> Result<()> {
    if joint.len() != n_labels || joint.is_empty() {
        return Err(DibError::Dimension(format!("joint has {} label rows, family has {n_labels}", joint.len())));
    }
    let nz = joint[0].len();
    if joint.iter().any(|r| r.len() != nz) {
        return Err(DibError::Dimension("ragged joint".into()));
    }
    Ok(())
}

/// `P(N, Z)` where `N = labeling[x]`, restricted to `inputs` with weights `w`.
fn labeled_joint(channel: &Channel, inputs: &[usize], weights: &[f64], labeling: &[usize], n_labels: usize) -> Vec<Vec<f64>> {
    let mut joint = vec![vec![0.0; channel.z_size()]; n_labels];
    for (i, &x) in inputs.iter().enumerate() {
        for (z, &p) in channel.rows[x].iter().enumerate() {
            joint[labeling[i]][z] += weights[i] * p;
        }
    }
    joint
}

/// `P(Y, Z)` under the problem distribution.
pub fn label_joint(problem: &FiniteProblem, channel: &Channel) -> Vec<Vec<f64>> {
    let all: Vec<usize> = (0..problem.x_size).collect();
    labeled_joint(channel, &all, &problem.p_x, &problem.labels, problem.y_size)
}

/// A deterministic tabular predictor, `labels[z]` being the predicted label at `z`.
pub fn construct_z_star(problem: &FiniteProblem, predictor: &[usize]) -> Result<Channel> {
    if predictor.len() != problem.z_size {
        return Err(DibError::Dimension(format!("predictor covers {} of {} symbols", predictor.len(), problem.z_size)));
    }
    let mut preimages = vec![vec![]; problem.y_size];
    for (z, &y) in predictor.iter().enumerate() {
        if y >= problem.y_size {
            return Err(DibError::Index(format!("predictor outputs label {y}")));
        }
        preimages[y].push(z);
    }
    if let Some(y) = preimages.iter().position(|p| p.is_empty()) {
        return Err(DibError::Assumption(format!("label {y} has an empty preimage")));
    }
    Channel::new(
        problem
            .labels
            .iter()
            .map(|&y| {
                let mut r = vec![0.0; problem.z_size];
                let share = 1.0 / preimages[y].len() as f64;
                for &z in &preimages[y] {
                    r[z] = share;
                }
                r
            })
            .collect(),
    )
}

/// Expected clamped log loss of a tabular predictor (`choice[z]` indexes the
/// family's points) on weighted inputs.
pub fn risk(problem: &FiniteProblem, channel: &Channel, family: &TabularFamily, choice: &[usize], inputs: &[usize], weights: &[f64]) -> f64 {
    inputs
        .iter()
        .zip(weights)
        .map(|(&x, &w)| {
            let y = problem.labels[x];
            channel.rows[x].iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(z, &p)| w * p * clamped_nll(family.points[choice[z]][y])).sum::<f64>()
        })
        .sum()
}

pub fn test_risk(problem: &FiniteProblem, channel: &Channel, family: &TabularFamily, choice: &[usize]) -> f64 {
    let all: Vec<usize> = (0..problem.x_size).collect();
    risk(problem, channel, family, choice, &all, &problem.p_x)
}

pub fn train_risk(problem: &FiniteProblem, channel: &Channel, family: &TabularFamily, choice: &[usize], train: &[usize]) -> f64 {
    let w = vec![1.0 / train.len() as f64; train.len()];
    risk(problem, channel, family, choice, train, &w)
}

/// All empirical risk minimizers, stored as the product of per-`z` argmin
/// sets (the empirical risk is a sum of independent per-`z` terms).
#[derive(Clone, Debug, PartialEq)]
pub struct ErmSet {
    pub per_z: Vec<Vec<usize>>,
    pub min_risk: f64,
}

impl ErmSet {
    pub fn count(&self) -> f64 {
        self.per_z.iter().map(|c| c.len() as f64).product()
    }

    /// Visits every ERM.
    pub fn for_each(&self, mut visit: impl FnMut(&[usize])) {
        let mut idx = vec![0usize; self.per_z.len()];
        let mut choice: Vec<usize> = self.per_z.iter().map(|c| c[0]).collect();
        loop {
            visit(&choice);
            let mut k = 0;
            loop {
                if k == idx.len() {
                    return;
                }
                idx[k] += 1;
                if idx[k] < self.per_z[k].len() {
                    choice[k] = self.per_z[k][idx[k]];
                    break;
                }
                idx[k] = 0;
                choice[k] = self.per_z[k][0];
                k += 1;
            }
        }
    }

    /// Largest test risk over the set, picking the worst member at each `z`.
    pub fn worst_test_risk(&self, problem: &FiniteProblem, channel: &Channel, family: &TabularFamily) -> f64 {
        (0..self.per_z.len())
            .map(|z| {
                self.per_z[z]
                    .iter()
                    .map(|&c| {
                        (0..problem.x_size)
                            .map(|x| problem.p_x[x] * channel.rows[x][z] * clamped_nll(family.points[c][problem.labels[x]]))
                            .sum::<f64>()
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum()
    }
}

pub fn enumerate_erms(problem: &FiniteProblem, channel: &Channel, family: &TabularFamily, train: &[usize]) -> Result<ErmSet> {
    if channel.x_size() != problem.x_size {
        return Err(DibError::Dimension(format!("channel has {} rows for {} inputs", channel.x_size(), problem.x_size)));
    }
    if family.universal {
        return Err(DibError::UnsupportedMode("enumerating the universal family".into()));
    }
    let mut covered = vec![false; problem.y_size];
    for &x in train {
        covered[problem.labels[x]] = true;
    }
    if let Some(y) = covered.iter().position(|c| !c) {
        return Err(DibError::Assumption(format!("train subset has no example of label {y}")));
    }
    let nz = channel.z_size();
    let w = 1.0 / train.len() as f64;
    let tol = SUM_TOL / nz as f64;
    let mut per_z = Vec::with_capacity(nz);
    let mut min_risk = 0.0;
    for z in 0..nz {
        let losses: Vec<f64> = family
            .points
            .iter()
            .map(|q| train.iter().map(|&x| w * channel.rows[x][z] * clamped_nll(q[problem.labels[x]])).sum())
            .collect();
        let best = losses.iter().cloned().fold(f64::INFINITY, f64::min);
        per_z.push((0..losses.len()).filter(|&c| losses[c] <= best + tol).collect());
        min_risk += best;
    }
    Ok(ErmSet { per_z, min_risk })
}

/// Largest ERM set visited one predictor at a time by [`verify_theorem1`].
pub const MAX_VISITED_ERMS: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetVerdict {
    pub train: Vec<usize>,
    pub n_erms: f64,
    pub min_train_risk: f64,
    pub worst_test_risk: f64,
    /// Whether every ERM was visited individually (otherwise the worst test
    /// risk comes from the per-symbol decomposition alone).
    pub visited_all: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub negative_control: bool,
    pub best_achievable_risk: f64,
    pub tolerance: f64,
    pub subsets: Vec<SubsetVerdict>,
    pub worst_test_risk: f64,
    pub passed: bool,
}

/// Checks that every ERM on every train subset reaches the best achievable
/// risk (0 under deterministic labels). A negative control passes when some
/// ERM is strictly worse.
pub fn verify_theorem1(
    problem: &FiniteProblem,
    channel: &Channel,
    family: &TabularFamily,
    train_subsets: &[Vec<usize>],
    negative_control: bool,
) -> Result<Theorem1Report> {
    let tolerance = 1e-9;
    let mut subsets = vec![];
    for train in train_subsets {
        let erms = enumerate_erms(problem, channel, family, train)?;
        let mut worst = erms.worst_test_risk(problem, channel, family);
        let visited_all = erms.count() <= MAX_VISITED_ERMS;
        if visited_all {
            let mut visited = f64::NEG_INFINITY;
            erms.for_each(|c| visited = visited.max(test_risk(problem, channel, family, c)));
            worst = worst.max(visited);
        }
        subsets.push(SubsetVerdict { train: train.clone(), n_erms: erms.count(), min_train_risk: erms.min_risk, worst_test_risk: worst, visited_all });
    }
    let worst_test_risk = subsets.iter().map(|s| s.worst_test_risk).fold(0.0, f64::max);
    let passed = if negative_control { worst_test_risk > tolerance } else { worst_test_risk <= tolerance };
    Ok(Theorem1Report { negative_control, best_achievable_risk: 0.0, tolerance, subsets, worst_test_risk, passed })
}

/// Labelings of one class: all of them when there are at most
/// [`MAX_ENUMERATED_LABELINGS`], otherwise the base-|Y| digit columns of the
/// within-class index. The flag reports whether enumeration was exhaustive.
pub fn class_labelings(class_size: usize, n_labels: usize) -> (Vec<Vec<usize>>, bool) {
    let total = (n_labels as f64).powi(class_size as i32);
    if total <= MAX_ENUMERATED_LABELINGS as f64 {
        let total = total as usize;
        let out = (0..total).map(|code| to_digits(code, n_labels, class_size)).collect();
        (out, true)
    } else {
        let d = digit_count(class_size, n_labels);
        let rows: Vec<Vec<usize>> = (0..class_size).map(|i| to_digits(i, n_labels, d)).collect();
        ((0..d).map(|col| rows.iter().map(|r| r[col]).collect()).collect(), false)
    }
}

/// Per-class conditional weights `P(x|y)` over the class members.
fn class_weights(problem: &FiniteProblem, members: &[usize]) -> Vec<f64> {
    let mass: f64 = members.iter().map(|&x| problem.p_x[x]).sum();
    members.iter().map(|&x| problem.p_x[x] / mass).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimalityValue {
    /// Average over labels and labelings of `I_V(Z_y→N)`.
    pub value: f64,
    /// Smallest single term, for the non-negativity check.
    pub min_term: f64,
    pub exhaustive: bool,
}

/// Average V-information between `Z_y` and the labelings of `X_y`.
pub fn averaged_decomposition_information(problem: &FiniteProblem, channel: &Channel, family: &TabularFamily) -> Result<MinimalityValue> {
    let mut total = 0.0;
    let mut min_term = f64::INFINITY;
    let mut exhaustive = true;
    for y in 0..problem.y_size {
        let members = problem.class_members(y);
        let w = class_weights(problem, &members);
        let (labelings, full) = class_labelings(members.len(), problem.y_size);
        exhaustive &= full;
        let mut class_total = 0.0;
        for t in &labelings {
            let joint = labeled_joint(channel, &members, &w, t, problem.y_size);
            let info = exact_v_information(&joint, family)?;
            min_term = min_term.min(info);
            class_total += info;
        }
        total += class_total / labelings.len() as f64;
    }
    Ok(MinimalityValue { value: total / problem.y_size as f64, min_term, exhaustive })
}

/// `I_V(Z→Y)` and whether it reaches the largest value any channel can
/// attain. With deterministic labels and every vertex in the family, that
/// value is `H_V(Y|∅)`, reached exactly when `H_V(Y|Z) = 0`.
pub fn v_sufficiency(problem: &FiniteProblem, channel: &Channel, family: &TabularFamily) -> Result<(f64, bool)> {
    let joint = label_joint(problem, channel);
    let cond = exact_v_entropy(&joint, family)?;
    Ok((exact_v_entropy_constant(&joint, family)? - cond, cond <= 1e-9))
}

/// `I(X;Z|Y)` under the problem distribution.
pub fn conditional_input_information(problem: &FiniteProblem, channel: &Channel) -> f64 {
    let py = problem.label_marginal();
    (0..problem.y_size)
        .map(|y| {
            let members = problem.class_members(y);
            let w = class_weights(problem, &members);
            let joint: Vec<Vec<f64>> = members.iter().zip(&w).map(|(&x, &wx)| channel.rows[x].iter().map(|p| wx * p).collect()).collect();
            py[y] * exact_mutual_information(&joint)
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateVerdict {
    pub name: String,
    pub sufficiency_information: f64,
    pub sufficient: bool,
    pub minimality: f64,
    pub minimality_larger_family: f64,
    pub minimality_universal: f64,
    pub conditional_input_information: f64,
    /// Sufficient and no larger minimality term than any sufficient candidate.
    pub minimal_by_definition: bool,
    /// Sufficient with a zero minimality term.
    pub minimal_by_characterization: bool,
    pub larger_family_minimal: bool,
    pub universal_minimal: bool,
    pub shannon_minimal: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckVerdict {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposition2Report {
    pub candidates: Vec<CandidateVerdict>,
    pub checks: Vec<CheckVerdict>,
    pub exhaustive: bool,
    pub passed: bool,
}

/// Checks characterization, monotonicity, recoverability and existence on
/// named candidate channels. `small` must be contained in `large`.
pub fn verify_proposition2(
    problem: &FiniteProblem,
    candidates: &[(String, Channel)],
    small: &TabularFamily,
    large: &TabularFamily,
    z_star_name: &str,
) -> Result<Proposition2Report> {
    if !large.contains(small) {
        return Err(DibError::Argument("the larger family must contain the smaller one".into()));
    }
    let tol = 1e-9;
    let universal = TabularFamily::universal(large);
    let mut rows = vec![];
    let mut exhaustive = true;
    let mut min_term = f64::INFINITY;
    for (name, channel) in candidates {
        let (info, sufficient) = v_sufficiency(problem, channel, small)?;
        let m_small = averaged_decomposition_information(problem, channel, small)?;
        let m_large = averaged_decomposition_information(problem, channel, large)?;
        let m_univ = averaged_decomposition_information(problem, channel, &universal)?;
        exhaustive &= m_small.exhaustive;
        min_term = min_term.min(m_small.min_term).min(m_large.min_term).min(m_univ.min_term);
        let cmi = conditional_input_information(problem, channel);
        rows.push(CandidateVerdict {
            name: name.clone(),
            sufficiency_information: info,
            sufficient,
            minimality: m_small.value,
            minimality_larger_family: m_large.value,
            minimality_universal: m_univ.value,
            conditional_input_information: cmi,
            minimal_by_definition: false,
            minimal_by_characterization: sufficient && m_small.value <= tol,
            larger_family_minimal: sufficient && m_large.value <= tol,
            universal_minimal: sufficient && m_univ.value <= tol,
            shannon_minimal: sufficient && cmi <= tol,
        });
    }
    let best = rows.iter().filter(|r| r.sufficient).map(|r| r.minimality).fold(f64::INFINITY, f64::min);
    for r in &mut rows {
        r.minimal_by_definition = r.sufficient && r.minimality <= best + tol;
    }

    let mut checks = vec![];
    let mismatched: Vec<&str> = rows.iter().filter(|r| r.minimal_by_definition != r.minimal_by_characterization).map(|r| r.name.as_str()).collect();
    checks.push(CheckVerdict {
        name: "characterization".into(),
        passed: mismatched.is_empty() && min_term >= -1e-12,
        detail: format!("smallest sufficient minimality {best:.3e}, smallest single term {min_term:.3e}, mismatches {mismatched:?}"),
    });
    let violating: Vec<&str> = rows
        .iter()
        .filter(|r| (r.larger_family_minimal && !r.minimal_by_characterization) || r.minimality > r.minimality_larger_family + 1e-12)
        .map(|r| r.name.as_str())
        .collect();
    checks.push(CheckVerdict { name: "monotonicity".into(), passed: violating.is_empty(), detail: format!("violations {violating:?}") });
    let differing: Vec<&str> = rows.iter().filter(|r| r.universal_minimal != r.shannon_minimal).map(|r| r.name.as_str()).collect();
    checks.push(CheckVerdict { name: "recoverability".into(), passed: differing.is_empty(), detail: format!("disagreements {differing:?}") });
    let star = rows.iter().find(|r| r.name == z_star_name);
    checks.push(CheckVerdict {
        name: "existence".into(),
        passed: star.is_some_and(|r| r.minimal_by_characterization && r.minimal_by_definition),
        detail: star.map_or_else(|| format!("no candidate named {z_star_name}"), |r| format!("minimality {:.3e}", r.minimality)),
    });
    let passed = checks.iter().all(|c| c.passed);
    Ok(Proposition2Report { candidates: rows, checks, exhaustive, passed })
}

/// Candidate channels on a problem: Z* for a round-robin predictor, a second
/// Z*, a sufficient channel that splits each class, a mixture of the two, a
/// noise channel and the identity (with one symbol per input).
pub fn standard_candidates(problem: &FiniteProblem) -> Result<Vec<(String, Channel)>> {
    let nz = problem.z_size;
    let round_robin: Vec<usize> = (0..nz).map(|z| z % problem.y_size).collect();
    let blocks: Vec<usize> = (0..nz).map(|z| (z * problem.y_size / nz).min(problem.y_size - 1)).collect();
    let star = construct_z_star(problem, &round_robin)?;
    let mut out = vec![("z_star".to_string(), star.clone())];
    if blocks != round_robin {
        out.push(("z_star_blocks".into(), construct_z_star(problem, &blocks)?));
    }
    // Each input goes to one symbol of its label's preimage, alternating
    // through the preimage in input order.
    let mut seen = vec![0usize; problem.y_size];
    let split: Vec<usize> = problem
        .labels
        .iter()
        .map(|&y| {
            let pre: Vec<usize> = (0..nz).filter(|&z| round_robin[z] == y).collect();
            let z = pre[seen[y] % pre.len()];
            seen[y] += 1;
            z
        })
        .collect();
    let split = Channel::deterministic(&split, nz)?;
    out.push(("mixture".into(), Channel::mixture(&star, &split, 0.5)?));
    out.push(("class_split".into(), split));
    out.push(("noise".into(), Channel::uniform(problem.x_size, nz)?));
    out.push(("identity".into(), Channel::identity(problem.x_size)?));
    Ok(out)
}

/// `L_DIB` up to its constant: `H_V(Y|Z) − β/|Y| Σ_y mean_t H_V(t(X_y)|Z_y)`.
pub fn exact_dib_objective(problem: &FiniteProblem, channel: &Channel, family: &TabularFamily, beta: f64) -> Result<f64> {
    let suff = exact_v_entropy(&label_joint(problem, channel), family)?;
    let mut min_sum = 0.0;
    for y in 0..problem.y_size {
        let members = problem.class_members(y);
        let w = class_weights(problem, &members);
        let (labelings, _) = class_labelings(members.len(), problem.y_size);
        let mut acc = 0.0;
        for t in &labelings {
            acc += exact_v_entropy(&labeled_joint(channel, &members, &w, t, problem.y_size), family)?;
        }
        min_sum += acc / labelings.len() as f64;
    }
    Ok(suff - beta / problem.y_size as f64 * min_sum)
}

/// Best in-family mean loss of `(z, n)` pairs.
fn empirical_v_entropy_pairs(pairs: &[(usize, usize)], n_labels: usize, nz: usize, family: &TabularFamily) -> f64 {
    let mut joint = vec![vec![0.0; nz]; n_labels];
    let w = 1.0 / pairs.len() as f64;
    for &(z, n) in pairs {
        joint[n][z] += w;
    }
    (0..nz).map(|z| best_point(family, &joint.iter().map(|r| r[z]).collect::<Vec<_>>())).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacReport {
    pub m: usize,
    pub draws: usize,
    pub k: usize,
    pub beta: f64,
    pub delta: f64,
    pub clamp: f64,
    pub exact_objective: f64,
    pub bound: f64,
    pub gaps: Vec<f64>,
    pub fraction_below: f64,
    /// Empirical `1 − δ` quantile of the gaps.
    pub gap_quantile: f64,
    pub passed: bool,
}

/// Samples `draws` datasets of `m` inputs, computes the empirical objective
/// with one `z` per input and `k` random labelings per class, and compares
/// it with the exact objective. The complexity term is bounded by the clamp.
pub fn exact_pac_gap(
    problem: &FiniteProblem,
    channel: &Channel,
    family: &TabularFamily,
    m: usize,
    draws: usize,
    beta: f64,
    k: usize,
    delta: f64,
    seed: u64,
) -> Result<PacReport> {
    if m == 0 || draws == 0 || k == 0 || !(0.0 < delta && delta < 1.0) {
        return Err(DibError::Argument("need m, draws, k >= 1 and delta in (0, 1)".into()));
    }
    let exact = exact_dib_objective(problem, channel, family, beta)?;
    let c = LOG_PROB_CLAMP;
    let bound = 2.0 * c + beta * (problem.y_size as f64).ln() + c * (2.0 * (1.0 / delta).ln() / m as f64).sqrt();
    let cdf_x = cumulative(&problem.p_x);
    let cdf_z: Vec<Vec<f64>> = channel.rows.iter().map(|r| cumulative(r)).collect();
    let nz = channel.z_size();
    let mut rng = rng_from(seed, 0xFAC);
    let mut gaps = Vec::with_capacity(draws);
    for _ in 0..draws {
        let xs: Vec<usize> = (0..m).map(|_| sample(&cdf_x, rng.random())).collect();
        let zs: Vec<usize> = xs.iter().map(|&x| sample(&cdf_z[x], rng.random())).collect();
        let pairs: Vec<(usize, usize)> = zs.iter().zip(&xs).map(|(&z, &x)| (z, problem.labels[x])).collect();
        let suff = empirical_v_entropy_pairs(&pairs, problem.y_size, nz, family);
        let mut min_sum = 0.0;
        for y in 0..problem.y_size {
            let in_class: Vec<usize> = (0..m).filter(|&i| problem.labels[xs[i]] == y).collect();
            if in_class.is_empty() {
                continue;
            }
            let mut acc = 0.0;
            for _ in 0..k {
                let t: Vec<usize> = (0..problem.x_size).map(|_| rng.random_range(0..problem.y_size)).collect();
                let pairs: Vec<(usize, usize)> = in_class.iter().map(|&i| (zs[i], t[xs[i]])).collect();
                acc += empirical_v_entropy_pairs(&pairs, problem.y_size, nz, family);
            }
            min_sum += acc / k as f64;
        }
        let estimate = suff - beta / problem.y_size as f64 * min_sum;
        gaps.push((estimate - exact).abs());
    }
    let fraction_below = gaps.iter().filter(|&&g| g <= bound).count() as f64 / draws as f64;
    let mut sorted = gaps.clone();
    sorted.sort_by(f64::total_cmp);
    let q = ((1.0 - delta) * draws as f64).ceil() as usize;
    let gap_quantile = sorted[q.clamp(1, draws) - 1];
    Ok(PacReport {
        m,
        draws,
        k,
        beta,
        delta,
        clamp: c,
        exact_objective: exact,
        bound,
        gaps,
        fraction_below,
        gap_quantile,
        passed: fraction_below >= 1.0 - delta,
    })
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    p.iter()
        .scan(0.0, |acc, &v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

fn sample(cdf: &[f64], u: f64) -> usize {
    let total = *cdf.last().expect("non-empty distribution");
    cdf.iter().position(|&c| u * total < c).unwrap_or(cdf.len() - 1)
}
