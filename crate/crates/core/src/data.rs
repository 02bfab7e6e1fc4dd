//! Dataset ingestion, synthesis, standardization, splitting, label-noise
//! injection, and mixup augmentation.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::seed::rng;

/// A tabular classification dataset. `clean_labels` is populated only after
/// noise injection and preserves the pre-corruption labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub clean_labels: Option<Vec<usize>>,
    pub class_count: usize,
}

impl Dataset {
    /// Validating constructor. N = 0 is permitted so that `split` with
    /// ratio 0 can represent its empty test set; ingestion operations
    /// reject empty data themselves.
    pub fn new(features: Array2<f64>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if class_count == 0 {
            return Err(Error::Data("class_count must be >= 1".into()));
        }
        if labels.len() != features.nrows() {
            return Err(Error::Shape(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.nrows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        if let Some(bad) = features.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite feature value {bad}")));
        }
        Ok(Dataset { features, labels, clean_labels: None, class_count })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0usize; self.class_count];
        for &l in &self.labels {
            hist[l] += 1;
        }
        hist
    }

    /// Rows at `indices`, in the given order, with labels (and clean labels)
    /// carried along.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            clean_labels: self
                .clean_labels
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
            class_count: self.class_count,
        }
    }
}

/// Specification for Gaussian-blob synthesis, one blob per class.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub class_counts: Vec<usize>,
    pub dimension: usize,
    pub center_separation: f64,
    pub cluster_stddev: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_counts.is_empty() || self.class_counts.contains(&0) {
            return Err(Error::Config("synth: every class count must be >= 1".into()));
        }
        if self.dimension == 0 {
            return Err(Error::Config("synth: dimension must be >= 1".into()));
        }
        if !(self.center_separation.is_finite() && self.center_separation > 0.0) {
            return Err(Error::Config("synth: center_separation must be finite and > 0".into()));
        }
        if !(self.cluster_stddev.is_finite() && self.cluster_stddev > 0.0) {
            return Err(Error::Config("synth: cluster_stddev must be finite and > 0".into()));
        }
        Ok(())
    }

    /// Blob centers on an integer lattice scaled by `center_separation`:
    /// class k sits at the base-`side` digits of k. Distinct classes differ
    /// in at least one digit, so every pairwise distance is at least the
    /// separation.
    pub fn centers(&self) -> Array2<f64> {
        let c = self.class_counts.len();
        let d = self.dimension;
        let side = lattice_side(c, d);
        let mut centers = Array2::zeros((c, d));
        for k in 0..c {
            let mut rem = k;
            for j in 0..d {
                centers[[k, j]] = (rem % side) as f64 * self.center_separation;
                rem /= side;
            }
        }
        centers
    }
}

/// Smallest lattice side such that side^dimension holds all classes.
fn lattice_side(classes: usize, dimension: usize) -> usize {
    let mut side = 1usize;
    loop {
        let mut cap: u128 = 1;
        for _ in 0..dimension {
            cap = cap.saturating_mul(side as u128);
            if cap >= classes as u128 {
                break;
            }
        }
        if cap >= classes as u128 {
            return side;
        }
        side += 1;
    }
}

/// Draws the blob dataset described by `spec`. Deterministic per seed.
pub fn synthesize(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let c = spec.class_counts.len();
    let d = spec.dimension;
    let n: usize = spec.class_counts.iter().sum();
    let centers = spec.centers();
    let mut r = rng(spec.seed);
    let mut features = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for (class, &count) in spec.class_counts.iter().enumerate() {
        for _ in 0..count {
            for j in 0..d {
                let z: f64 = StandardNormal.sample(&mut r);
                features[[row, j]] = centers[[class, j]] + spec.cluster_stddev * z;
            }
            labels.push(class);
            row += 1;
        }
    }
    Dataset::new(features, labels, c)
}

/// How to locate the label column in a CSV file. In JSON configs a string
/// selects by header name and an integer by 0-based position.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
}

/// `load_csv` plus the label-id mapping: `names[id]` is the label text that
/// was assigned class id `id` (first-appearance order).
pub fn load_csv_with_mapping(path: &Path, label: &LabelColumn) -> Result<(Dataset, Vec<String>)> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Io { path: display.clone(), message: e.to_string() })?;

    let mut rows: Vec<csv::StringRecord> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: display.clone(),
            message: e.to_string(),
        })?;
        rows.push(record);
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{display}: zero data rows")));
    }

    let width = rows[0].len();
    let (label_idx, data_start) = match label {
        LabelColumn::Name(name) => {
            let header = &rows[0];
            let idx = header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Data(format!("{display}: no column named {name:?}")))?;
            (idx, 1)
        }
        LabelColumn::Index(idx) => {
            if *idx >= width {
                return Err(Error::Data(format!(
                    "{display}: label column {idx} out of range (width {width})"
                )));
            }
            // The first row is a header iff any non-label cell is non-numeric.
            let is_header = rows[0]
                .iter()
                .enumerate()
                .any(|(j, cell)| j != *idx && cell.parse::<f64>().is_err());
            (*idx, usize::from(is_header))
        }
    };
    if rows.len() == data_start {
        return Err(Error::Data(format!("{display}: zero data rows")));
    }

    let d = width - 1;
    let n = rows.len() - data_start;
    let mut features = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut names: Vec<String> = Vec::new();
    for (i, record) in rows[data_start..].iter().enumerate() {
        let file_row = data_start + i + 1;
        let mut col_out = 0;
        for (j, cell) in record.iter().enumerate() {
            if j == label_idx {
                let next = names.len();
                let id = *ids.entry(cell.to_string()).or_insert_with(|| {
                    names.push(cell.to_string());
                    next
                });
                labels.push(id);
            } else {
                let value: f64 = cell.parse().map_err(|_| Error::Parse {
                    path: display.clone(),
                    message: format!("row {file_row}, column {}: non-numeric feature {cell:?}", j + 1),
                })?;
                if !value.is_finite() {
                    return Err(Error::Parse {
                        path: display.clone(),
                        message: format!("row {file_row}, column {}: non-finite feature", j + 1),
                    });
                }
                features[[i, col_out]] = value;
                col_out += 1;
            }
        }
    }
    let class_count = names.len();
    Ok((Dataset::new(features, labels, class_count)?, names))
}

/// Loads a CSV with the label column mapped to contiguous class ids by
/// first appearance. Row order is preserved.
pub fn load_csv(path: &Path, label: &LabelColumn) -> Result<Dataset> {
    load_csv_with_mapping(path, label).map(|(ds, _)| ds)
}

/// Splits into (train, test) with |test| = round(test_ratio * N), stratified
/// by class when every class has at least 2 members. Deterministic per seed.
pub fn split(ds: &Dataset, test_ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_ratio.is_finite() && (0.0..1.0).contains(&test_ratio)) {
        return Err(Error::Config(format!("test_ratio {test_ratio} outside [0, 1)")));
    }
    let n = ds.n();
    if test_ratio > 0.0 && n < 2 {
        return Err(Error::Data("split: need at least 2 rows when test_ratio > 0".into()));
    }
    let n_test = (test_ratio * n as f64).round() as usize;
    if n_test >= n && n > 0 && n_test > 0 {
        return Err(Error::Data(format!("split: test_ratio {test_ratio} leaves an empty train set")));
    }
    let mut r = rng(seed);
    let hist = ds.class_histogram();
    let stratifiable = hist.iter().all(|&c| c >= 2);

    let mut test_indices: Vec<usize> = if stratifiable {
        // Largest-remainder apportionment of n_test across classes.
        let exact: Vec<f64> = hist.iter().map(|&c| test_ratio * c as f64).collect();
        let mut take: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut remainder = n_test - take.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..hist.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
        });
        for &class in &order {
            if remainder == 0 {
                break;
            }
            if take[class] < hist[class] {
                take[class] += 1;
                remainder -= 1;
            }
        }
        let mut chosen = Vec::with_capacity(n_test);
        for class in 0..hist.len() {
            let mut members: Vec<usize> =
                (0..n).filter(|&i| ds.labels[i] == class).collect();
            members.shuffle(&mut r);
            chosen.extend_from_slice(&members[..take[class]]);
        }
        chosen
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut r);
        all.truncate(n_test);
        all
    };
    test_indices.sort_unstable();
    let mut in_test = vec![false; n];
    for &i in &test_indices {
        in_test[i] = true;
    }
    let train_indices: Vec<usize> = (0..n).filter(|&i| !in_test[i]).collect();
    Ok((ds.subset(&train_indices), ds.subset(&test_indices)))
}

/// Per-feature (x - mean) / std with statistics fitted on the train set and
/// applied to both sets. Population (1/N) standard deviation. Features that
/// are constant on the train set map to 0 everywhere.
pub fn standardize(
    train: &Dataset,
    test: &Dataset,
) -> Result<(Dataset, Dataset, Vec<f64>, Vec<f64>)> {
    if train.n() == 0 {
        return Err(Error::Data("standardize: empty train set".into()));
    }
    if test.n() > 0 && test.dim() != train.dim() {
        return Err(Error::Shape(format!(
            "standardize: train dim {} vs test dim {}",
            train.dim(),
            test.dim()
        )));
    }
    let n = train.n() as f64;
    let d = train.dim();
    let mut means = vec![0.0; d];
    let mut stds = vec![0.0; d];
    for j in 0..d {
        let col = train.features.column(j);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for &v in col.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
            sum += v;
        }
        let mean = sum / n;
        means[j] = mean;
        // min == max catches constant columns exactly, before floating-point
        // residue in the variance sum can masquerade as spread.
        if lo < hi {
            let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
            stds[j] = var.sqrt();
        }
    }
    let train_out = apply_standardizer(train, &means, &stds)?;
    let test_out = apply_standardizer(test, &means, &stds)?;
    Ok((train_out, test_out, means, stds))
}

/// Applies previously fitted standardization statistics (std = 0 columns
/// map to 0, matching `standardize`).
pub fn apply_standardizer(ds: &Dataset, means: &[f64], stds: &[f64]) -> Result<Dataset> {
    if ds.n() > 0 && (means.len() != ds.dim() || stds.len() != ds.dim()) {
        return Err(Error::Shape(format!(
            "standardizer has {} features, data has {}",
            means.len(),
            ds.dim()
        )));
    }
    let mut features = ds.features.clone();
    for j in 0..ds.dim().min(means.len()) {
        let mut col = features.column_mut(j);
        if stds[j] == 0.0 {
            col.fill(0.0);
        } else {
            col.mapv_inplace(|v| (v - means[j]) / stds[j]);
        }
    }
    Ok(Dataset {
        features,
        labels: ds.labels.clone(),
        clean_labels: ds.clean_labels.clone(),
        class_count: ds.class_count,
    })
}

/// Label-noise families. Symmetric replaces a flipped label uniformly among
/// the other classes; pair-asymmetric maps class c to (c + 1) mod C.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Symmetric,
    PairAsymmetric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate.is_finite() && (0.0..=1.0).contains(&self.rate)) {
            return Err(Error::Config(format!("noise rate {} outside [0, 1]", self.rate)));
        }
        Ok(())
    }
}

/// Flips exactly round(rate * N) labels, chosen without replacement; no flip
/// maps a label to itself. Returns (noisy labels, flip mask).
pub fn inject_noise(
    labels: &[usize],
    spec: &NoiseSpec,
    class_count: usize,
) -> Result<(Vec<usize>, Vec<bool>)> {
    spec.validate()?;
    if class_count < 2 && spec.rate > 0.0 {
        return Err(Error::Data("noise injection requires at least 2 classes".into()));
    }
    let n = labels.len();
    let flips = (spec.rate * n as f64).round() as usize;
    let mut r = rng(spec.seed);
    let mut chosen = rand::seq::index::sample(&mut r, n, flips).into_vec();
    chosen.sort_unstable();
    let mut noisy = labels.to_vec();
    let mut mask = vec![false; n];
    for &i in &chosen {
        noisy[i] = match spec.kind {
            NoiseKind::Symmetric => {
                let draw = r.random_range(0..class_count - 1);
                if draw < labels[i] {
                    draw
                } else {
                    draw + 1
                }
            }
            NoiseKind::PairAsymmetric => (labels[i] + 1) % class_count,
        };
        mask[i] = true;
    }
    Ok((noisy, mask))
}

/// One-hot encodes labels into an N x C matrix.
pub fn one_hot(labels: &[usize], class_count: usize) -> Array2<f64> {
    let mut out = Array2::zeros((labels.len(), class_count));
    for (i, &l) in labels.iter().enumerate() {
        out[[i, l]] = 1.0;
    }
    out
}

/// Convex combination of each row with a permuted partner: row i becomes
/// lambda_i * row_i + (1 - lambda_i) * row_perm(i), applied identically to
/// features and one-hot labels.
pub fn mix_pairs(
    features: &Array2<f64>,
    onehot: &Array2<f64>,
    lambdas: &[f64],
    perm: &[usize],
) -> Result<(Array2<f64>, Array2<f64>)> {
    let b = features.nrows();
    if onehot.nrows() != b || lambdas.len() != b || perm.len() != b {
        return Err(Error::Shape("mixup: batch length mismatch".into()));
    }
    if let Some(&bad) = perm.iter().find(|&&p| p >= b) {
        return Err(Error::Shape(format!("mixup: permutation index {bad} out of range")));
    }
    let mut fx = features.clone();
    let mut fy = onehot.clone();
    for i in 0..b {
        let lam = lambdas[i];
        let j = perm[i];
        for (k, v) in fx.row_mut(i).iter_mut().enumerate() {
            *v = lam * features[[i, k]] + (1.0 - lam) * features[[j, k]];
        }
        for (k, v) in fy.row_mut(i).iter_mut().enumerate() {
            *v = lam * onehot[[i, k]] + (1.0 - lam) * onehot[[j, k]];
        }
    }
    Ok((fx, fy))
}

/// Mixup augmentation with per-pair lambda ~ Beta(alpha, alpha) and a
/// uniformly shuffled partner permutation, against the given RNG stream.
pub fn mixup_with_rng(
    features: &Array2<f64>,
    onehot: &Array2<f64>,
    alpha: f64,
    r: &mut rand_chacha::ChaCha8Rng,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let b = features.nrows();
    if b == 0 {
        return Err(Error::Data("mixup: empty batch".into()));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Config(format!("mixup alpha {alpha} must be > 0")));
    }
    let beta = Beta::new(alpha, alpha)
        .map_err(|e| Error::Config(format!("mixup alpha {alpha}: {e}")))?;
    let lambdas: Vec<f64> = (0..b).map(|_| beta.sample(r)).collect();
    let mut perm: Vec<usize> = (0..b).collect();
    perm.shuffle(r);
    mix_pairs(features, onehot, &lambdas, &perm)
}

/// Seeded entry point for mixup.
pub fn mixup(
    features: &Array2<f64>,
    onehot: &Array2<f64>,
    alpha: f64,
    seed: u64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut r = rng(seed);
    mixup_with_rng(features, onehot, alpha, &mut r)
}
