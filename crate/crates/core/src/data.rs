//! Synthetic datasets and their CSV form.
//!
//! Prototype datasets place one unit-norm prototype per class and perturb it
//! with Gaussian noise. A perturbation that would move a point closer to a
//! different prototype is redrawn, so the label is always the index of the
//! nearest prototype and hence a deterministic function of the features.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::decomposition::csv_err;
use crate::error::{DibError, Result};
use crate::rng::{gauss, rng_from, Rng};
use crate::tensor::Tensor;

const MAX_REJECTIONS: usize = 1000;
/// Per-coordinate noise of the distractor block.
pub const DISTRACTOR_NOISE_STD: f64 = 0.3;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub distractor_labels: Option<Vec<usize>>,
    pub n_distractor_classes: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    /// Class prototypes `[n_classes x dim]` of a generated dataset.
    pub prototypes: Option<Tensor>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

fn unit_vectors(n: usize, dim: usize, rng: &mut Rng) -> Tensor {
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| gauss(rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                rows.push(v.into_iter().map(|x| x / norm).collect());
                break;
            }
        }
    }
    Tensor::from_rows(&rows)
}

/// Index of the prototype closest to `x` (first on ties).
pub fn nearest_prototype(prototypes: &Tensor, x: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for c in 0..prototypes.rows() {
        let d: f64 = prototypes.row(c).iter().zip(x).map(|(p, v)| (p - v) * (p - v)).sum();
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

/// `n` points around `prototypes[class]`, each redrawn until that prototype
/// is strictly the nearest.
fn perturbed_points(prototypes: &Tensor, class: usize, n: usize, noise_std: f64, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    let center = prototypes.row(class);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut tries = 0;
        loop {
            let x: Vec<f64> = center
                .iter()
                .map(|&c| c + noise_std * gauss(rng))
                .collect();
            if nearest_prototype(prototypes, &x) == class {
                out.push(x);
                break;
            }
            tries += 1;
            if tries >= MAX_REJECTIONS {
                return Err(DibError::Geometry(format!(
                    "class {class}: {MAX_REJECTIONS} draws landed nearer another prototype (noise_std {noise_std})"
                )));
            }
        }
    }
    Ok(out)
}

/// Half of every class goes to train (rounded up), in the given order.
fn stratified_split(labels: &[usize], n_classes: usize, order: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: Vec<Vec<usize>> = vec![vec![]; n_classes];
    for &i in order {
        by_class[labels[i]].push(i);
    }
    let mut train = vec![];
    let mut test = vec![];
    for members in by_class {
        let cut = members.len().div_ceil(2);
        train.extend_from_slice(&members[..cut]);
        test.extend_from_slice(&members[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

pub fn make_prototype_dataset(n_per_class: usize, n_classes: usize, dim: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    if n_per_class < 2 {
        return Err(DibError::Argument("n_per_class must be >= 2".into()));
    }
    if n_classes < 2 || dim == 0 {
        return Err(DibError::Argument("need >= 2 classes and dim >= 1".into()));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(DibError::Argument(format!("noise_std {noise_std} must be finite and >= 0")));
    }
    let mut rng = rng_from(seed, 0xDA7A);
    let prototypes = unit_vectors(n_classes, dim, &mut rng);
    let mut rows = Vec::with_capacity(n_per_class * n_classes);
    let mut labels = Vec::with_capacity(n_per_class * n_classes);
    for c in 0..n_classes {
        rows.extend(perturbed_points(&prototypes, c, n_per_class, noise_std, &mut rng)?);
        labels.extend(std::iter::repeat_n(c, n_per_class));
    }
    let mut perm: Vec<usize> = (0..rows.len()).collect();
    perm.shuffle(&mut rng);
    let rows: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
    let labels: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut rng);
    let (train, test) = stratified_split(&labels, n_classes, &order);
    Ok(Dataset {
        features: Tensor::from_rows(&rows),
        labels,
        n_classes,
        distractor_labels: None,
        n_distractor_classes: 0,
        train,
        test,
        seed,
        prototypes: Some(prototypes),
    })
}

/// Appends a block `prototype[d] * strength + noise` carrying an independent
/// uniform distractor label `d` to every example. The block has one
/// coordinate per distractor class.
pub fn make_distractor_dataset(base: &Dataset, n_distractor_classes: usize, strength: f64, seed: u64) -> Result<Dataset> {
    if !(strength > 0.0 && strength.is_finite()) {
        return Err(DibError::Argument(format!("distractor strength must be > 0, got {strength}")));
    }
    if n_distractor_classes < 2 {
        return Err(DibError::Argument("need >= 2 distractor classes".into()));
    }
    let mut rng = rng_from(seed, 0xD157);
    let k = n_distractor_classes;
    let protos = unit_vectors(k, k, &mut rng);
    let n = base.len();
    let d0 = base.dim();
    let mut data = Vec::with_capacity(n * (d0 + k));
    let mut distractor = Vec::with_capacity(n);
    for i in 0..n {
        let d = rng.random_range(0..k);
        distractor.push(d);
        data.extend_from_slice(base.features.row(i));
        for &p in protos.row(d) {
            data.push(p * strength + DISTRACTOR_NOISE_STD * gauss(&mut rng));
        }
    }
    Ok(Dataset {
        features: Tensor::matrix(n, d0 + k, data)?,
        distractor_labels: Some(distractor),
        n_distractor_classes: k,
        seed,
        ..base.clone()
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn x(&self, split: Split) -> Tensor {
        self.features.select_rows(self.indices(split))
    }

    pub fn y(&self, split: Split) -> Vec<usize> {
        self.indices(split).iter().map(|&i| self.labels[i]).collect()
    }

    pub fn distractor(&self, split: Split) -> Option<Vec<usize>> {
        let d = self.distractor_labels.as_ref()?;
        Some(self.indices(split).iter().map(|&i| d[i]).collect())
    }

    /// Structural checks shared by generated and loaded datasets.
    pub fn validate(&self) -> Result<()> {
        if self.features.rows() != self.len() {
            return Err(DibError::Dimension(format!("{} feature rows, {} labels", self.features.rows(), self.len())));
        }
        let mut seen = vec![0u8; self.len()];
        for &i in self.train.iter().chain(&self.test) {
            if i >= self.len() {
                return Err(DibError::Index(format!("split index {i} out of range")));
            }
            seen[i] += 1;
            if seen[i] > 1 {
                return Err(DibError::Argument(format!("example {i} appears in both splits")));
            }
        }
        let mut present = vec![false; self.n_classes];
        for &i in &self.train {
            present[self.labels[i]] = true;
        }
        if let Some(c) = present.iter().position(|p| !p) {
            return Err(DibError::Assumption(format!("class {c} missing from the train split")));
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let d = self.dim();
        let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
        header.push("label".into());
        if self.distractor_labels.is_some() {
            header.push("distractor".into());
        }
        header.push("split".into());
        w.write_record(&header).map_err(csv_err)?;
        let mut split = vec![""; self.len()];
        for &i in &self.train {
            split[i] = "train";
        }
        for &i in &self.test {
            split[i] = "test";
        }
        for i in 0..self.len() {
            // `{}` on f64 prints the shortest string that parses back to the same value.
            let mut rec: Vec<String> = self.features.row(i).iter().map(|v| format!("{v}")).collect();
            rec.push(self.labels[i].to_string());
            if let Some(dl) = &self.distractor_labels {
                rec.push(dl[i].to_string());
            }
            rec.push(split[i].to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(csv_err)?;
        let header = r.headers().map_err(csv_err)?.clone();
        let col = |name: &str| header.iter().position(|h| h == name);
        let label_col = col("label").ok_or(DibError::Parse { line: 1, message: "missing `label` column".into() })?;
        let split_col = col("split").ok_or(DibError::Parse { line: 1, message: "missing `split` column".into() })?;
        let distractor_col = col("distractor");
        let mut feature_cols = vec![];
        for j in 0.. {
            match col(&format!("x{j}")) {
                Some(c) => feature_cols.push(c),
                None => break,
            }
        }
        if feature_cols.is_empty() {
            return Err(DibError::Parse { line: 1, message: "no feature columns x0..".into() });
        }
        let mut data = vec![];
        let mut labels = vec![];
        let mut distractor = vec![];
        let mut train = vec![];
        let mut test = vec![];
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let line = i + 2;
            let field = |c: usize| rec.get(c).ok_or(DibError::Parse { line, message: format!("missing field {c}") });
            for &c in &feature_cols {
                let s = field(c)?;
                let v: f64 = s.parse().map_err(|_| DibError::Parse { line, message: format!("bad number {s:?}") })?;
                data.push(v);
            }
            let parse_label = |c: usize| -> Result<usize> {
                let s = field(c)?;
                s.parse().map_err(|_| DibError::Parse { line, message: format!("bad label {s:?}") })
            };
            labels.push(parse_label(label_col)?);
            if let Some(c) = distractor_col {
                distractor.push(parse_label(c)?);
            }
            match field(split_col)? {
                "train" => train.push(i),
                "test" => test.push(i),
                other => return Err(DibError::Parse { line, message: format!("split must be train or test, got {other:?}") }),
            }
        }
        let n = labels.len();
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        let n_distractor_classes = distractor.iter().max().map_or(0, |m| m + 1);
        let ds = Dataset {
            features: Tensor::matrix(n, feature_cols.len(), data)?,
            labels,
            n_classes,
            distractor_labels: distractor_col.map(|_| distractor),
            n_distractor_classes,
            train,
            test,
            seed: 0,
            prototypes: None,
        };
        ds.validate()?;
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_reproduces_prototypes() {
        let ds = make_prototype_dataset(3, 4, 5, 0.0, 1).unwrap();
        let p = ds.prototypes.as_ref().unwrap();
        for i in 0..ds.len() {
            assert_eq!(ds.features.row(i), p.row(ds.labels[i]));
        }
    }

    #[test]
    fn labels_are_nearest_prototypes_and_split_is_stratified() {
        let ds = make_prototype_dataset(50, 3, 8, 0.4, 2).unwrap();
        let p = ds.prototypes.as_ref().unwrap();
        for i in 0..ds.len() {
            assert_eq!(nearest_prototype(p, ds.features.row(i)), ds.labels[i]);
        }
        ds.validate().unwrap();
        assert_eq!(ds.train.len(), 75);
        assert_eq!(ds, make_prototype_dataset(50, 3, 8, 0.4, 2).unwrap());
    }

    #[test]
    fn crowded_prototypes_fail() {
        assert!(matches!(make_prototype_dataset(20, 40, 2, 5.0, 0), Err(DibError::Geometry(_))));
        assert!(make_prototype_dataset(1, 2, 2, 0.1, 0).is_err());
    }

    #[test]
    fn distractor_rejects_nonpositive_strength() {
        let ds = make_prototype_dataset(5, 2, 3, 0.1, 0).unwrap();
        assert!(make_distractor_dataset(&ds, 10, 0.0, 0).is_err());
        let d = make_distractor_dataset(&ds, 10, 1.0, 0).unwrap();
        assert_eq!(d.dim(), 13);
        assert_eq!(d.labels, ds.labels);
        assert_eq!(d.features.slice_cols(0, 3), ds.features);
    }
}
