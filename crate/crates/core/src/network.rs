//! Multilayer perceptron with an explicit forward pass and hand-derived
//! backpropagation. Classic mode trains with squared error and logistic
//! activations throughout; the robust trainer reuses the same forward
//! machinery with ELU hidden layers and a softmax output.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{dpc, CenterPolicy};
use crate::data::{one_hot, Dataset};
use crate::error::{Error, Result};
use crate::gating::{fuzzy_membership, route};
use crate::seed::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    Logistic,
    Elu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Logistic,
    Softmax,
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn elu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        z.exp_m1()
    }
}

pub(crate) fn elu_derivative(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        z.exp()
    }
}

/// Fully connected network. `weights[l]` maps layer l (rows) to layer l+1
/// (columns); biases act as weights on a constant-1 input.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
}

/// Batch forward-pass record: `pre[l]` and `act[l + 1]` are the
/// pre-activations and activations of layer l+1; `act[0]` is the input.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub pre: Vec<Array2<f64>>,
    pub act: Vec<Array2<f64>>,
}

impl Mlp {
    /// Uniform init in +-sqrt(6 / (fan_in + fan_out)), zero biases, drawing
    /// from the given stream (so a training loop can share one stream across
    /// init and shuffling).
    pub fn init_from_rng(
        layer_sizes: &[usize],
        hidden_activation: HiddenActivation,
        output_activation: OutputActivation,
        r: &mut ChaCha8Rng,
    ) -> Result<Mlp> {
        if layer_sizes.len() < 2 {
            return Err(Error::Config(format!(
                "network needs >= 2 layers, got {}",
                layer_sizes.len()
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::Config("every layer size must be >= 1".into()));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut m = Array2::zeros((fan_in, fan_out));
            for v in m.iter_mut() {
                *v = r.random_range(-bound..bound);
            }
            weights.push(m);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            hidden_activation,
            output_activation,
        })
    }

    pub fn init_weights(
        layer_sizes: &[usize],
        hidden_activation: HiddenActivation,
        output_activation: OutputActivation,
        seed: u64,
    ) -> Result<Mlp> {
        let mut r = rng(seed);
        Mlp::init_from_rng(layer_sizes, hidden_activation, output_activation, &mut r)
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Forward pass for a batch (rows are samples).
    pub fn forward(&self, batch: &Array2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        if batch.ncols() != self.input_size() {
            return Err(Error::Shape(format!(
                "batch width {} vs input size {}",
                batch.ncols(),
                self.input_size()
            )));
        }
        let layers = self.weights.len();
        let mut cache = ForwardCache { pre: Vec::with_capacity(layers), act: Vec::with_capacity(layers + 1) };
        cache.act.push(batch.clone());
        for l in 0..layers {
            let mut z = cache.act[l].dot(&self.weights[l]);
            z += &self.biases[l];
            let a = if l < layers - 1 {
                match self.hidden_activation {
                    HiddenActivation::Logistic => z.mapv(logistic),
                    HiddenActivation::Elu => z.mapv(elu),
                }
            } else {
                match self.output_activation {
                    OutputActivation::Logistic => z.mapv(logistic),
                    OutputActivation::Softmax => softmax_rows(&z),
                }
            };
            cache.pre.push(z);
            cache.act.push(a);
        }
        Ok((cache.act[layers].clone(), cache))
    }

    /// Class predictions: row-wise argmax of the output layer, ties to the
    /// lowest class id. Deterministic.
    pub fn predict(&self, features: &Array2<f64>) -> Result<Vec<usize>> {
        let (out, _) = self.forward(features)?;
        Ok(argmax_rows(&out))
    }

    pub fn predict_proba(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(features)?.0)
    }

    /// One classic-mode gradient step on a batch: squared-error loss,
    /// logistic derivative factors, gradients averaged over the batch.
    /// Returns the batch-mean squared error before the update.
    pub fn backprop_step(
        &mut self,
        batch: &Array2<f64>,
        targets: &Array2<f64>,
        zeta: f64,
    ) -> Result<f64> {
        if self.hidden_activation != HiddenActivation::Logistic
            || self.output_activation != OutputActivation::Logistic
        {
            return Err(Error::Config(
                "classic backprop requires logistic activations throughout".into(),
            ));
        }
        if !(zeta.is_finite() && zeta > 0.0) {
            return Err(Error::Config(format!("learning rate {zeta} must be > 0")));
        }
        let b = batch.nrows();
        if b == 0 {
            return Err(Error::Data("backprop: empty batch".into()));
        }
        if targets.nrows() != b || targets.ncols() != self.output_size() {
            return Err(Error::Shape("backprop: target shape mismatch".into()));
        }
        let (out, cache) = self.forward(batch)?;
        let loss = batch_squared_error(targets, &out);

        // Output error signal: (v - vbar) * vbar * (1 - vbar), so updates
        // add zeta * signal (gradient descent on the squared error).
        let layers = self.weights.len();
        let mut deltas: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); layers];
        let mut delta = &(targets - &out) * &(&out * &out.mapv(|v| 1.0 - v));
        deltas[layers - 1] = delta.clone();
        for l in (0..layers - 1).rev() {
            let back = delta.dot(&self.weights[l + 1].t());
            let a = &cache.act[l + 1];
            delta = &back * &(a * &a.mapv(|v| 1.0 - v));
            deltas[l] = delta.clone();
        }

        let scale = zeta / b as f64;
        for l in 0..layers {
            let grad_w = cache.act[l].t().dot(&deltas[l]);
            let grad_b = deltas[l].sum_axis(Axis(0));
            if grad_w.iter().any(|v| !v.is_finite()) || grad_b.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient in layer {l}")));
            }
            self.weights[l].scaled_add(scale, &grad_w);
            self.biases[l].scaled_add(scale, &grad_b);
        }
        Ok(loss)
    }
}

/// Row-wise softmax with max subtraction for stability.
pub fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.iter().sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Row-wise argmax, ties to the lowest index.
pub fn argmax_rows(m: &Array2<f64>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Squared error of one sample: W = 1/2 * sum (v - vbar)^2.
pub fn squared_error(expected: &[f64], actual: &[f64]) -> Result<f64> {
    if expected.len() != actual.len() {
        return Err(Error::Shape(format!(
            "squared error: lengths {} vs {}",
            expected.len(),
            actual.len()
        )));
    }
    Ok(expected
        .iter()
        .zip(actual.iter())
        .map(|(v, vbar)| (v - vbar) * (v - vbar))
        .sum::<f64>()
        / 2.0)
}

/// Batch mean of the per-sample squared error.
pub fn batch_squared_error(targets: &Array2<f64>, outputs: &Array2<f64>) -> f64 {
    let diff = targets - outputs;
    diff.iter().map(|v| v * v).sum::<f64>() / 2.0 / targets.nrows() as f64
}

/// Classic training loop configuration. A non-finite `target_error`
/// disables the early-stopping gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub target_error: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            epochs: 20,
            batch_size: 128,
            target_error: f64::INFINITY,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate < 1.0) {
            return Err(Error::Config(format!(
                "learning_rate {} outside (0, 1)",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.target_error.is_nan() || self.target_error < 0.0 {
            return Err(Error::Config(format!(
                "target_error {} must be >= 0",
                self.target_error
            )));
        }
        Ok(())
    }
}

/// Classic-mode training with a per-epoch loss trace: shuffled mini-batches,
/// squared-error backpropagation, stopping once the epoch-mean error reaches
/// `target_error` (if finite) or the epoch budget runs out.
pub fn train_classic_with_log(
    dataset: &Dataset,
    hidden_sizes: &[usize],
    config: &TrainConfig,
) -> Result<(Mlp, Vec<f64>)> {
    config.validate()?;
    if dataset.n() == 0 {
        return Err(Error::Data("train_classic: empty dataset".into()));
    }
    let mut layer_sizes = vec![dataset.dim()];
    layer_sizes.extend_from_slice(hidden_sizes);
    layer_sizes.push(dataset.class_count);

    let mut r = rng(config.seed);
    let mut net = Mlp::init_from_rng(
        &layer_sizes,
        HiddenActivation::Logistic,
        OutputActivation::Logistic,
        &mut r,
    )?;
    let targets = one_hot(&dataset.labels, dataset.class_count);
    let n = dataset.n();
    let mut indices: Vec<usize> = (0..n).collect();
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        rand::seq::SliceRandom::shuffle(indices.as_mut_slice(), &mut r);
        let mut epoch_loss = 0.0;
        for (batch_idx, chunk) in indices.chunks(config.batch_size).enumerate() {
            let x = dataset.features.select(Axis(0), chunk);
            let t = targets.select(Axis(0), chunk);
            let loss = net.backprop_step(&x, &t, config.learning_rate).map_err(|e| {
                Error::Numeric(format!("epoch {epoch}, batch {batch_idx}: {e}"))
            })?;
            epoch_loss += loss * chunk.len() as f64;
        }
        epoch_loss /= n as f64;
        losses.push(epoch_loss);
        if self::gate_reached(epoch_loss, config.target_error) {
            break;
        }
    }
    Ok((net, losses))
}

fn gate_reached(epoch_loss: f64, target_error: f64) -> bool {
    target_error.is_finite() && epoch_loss <= target_error
}

pub fn train_classic(dataset: &Dataset, hidden_sizes: &[usize], config: &TrainConfig) -> Result<Mlp> {
    train_classic_with_log(dataset, hidden_sizes, config).map(|(net, _)| net)
}

/// Modular network: one classic subnetwork per surviving cluster, routed by
/// fuzzy membership to the stored centers.
#[derive(Debug, Clone, PartialEq)]
pub struct AmnnModel {
    pub center_coords: Array2<f64>,
    pub denom: f64,
    pub subnets: Vec<Mlp>,
}

impl AmnnModel {
    pub fn subnet_count(&self) -> usize {
        self.subnets.len()
    }

    /// Routes each sample to its nearest center's subnetwork and takes that
    /// subnetwork's argmax.
    pub fn predict(&self, features: &Array2<f64>) -> Result<Vec<usize>> {
        let membership = fuzzy_membership(features, &self.center_coords, self.denom)?;
        let routed = route(&membership);
        let mut predictions = vec![0usize; features.nrows()];
        for (k, net) in self.subnets.iter().enumerate() {
            let members: Vec<usize> = (0..features.nrows()).filter(|&i| routed[i] == k).collect();
            if members.is_empty() {
                continue;
            }
            let sub = features.select(Axis(0), &members);
            for (&i, p) in members.iter().zip(net.predict(&sub)?) {
                predictions[i] = p;
            }
        }
        Ok(predictions)
    }
}

/// Clusters the training data, routes samples to subnetworks, drops empty
/// subnets, and trains one classic MLP per surviving cluster on its routed
/// subset. Per-subnet seed = config.seed + subnet index.
pub fn train_amnn(
    dataset: &Dataset,
    policy: &CenterPolicy,
    membership_denom: f64,
    hidden_sizes: &[usize],
    config: &TrainConfig,
) -> Result<AmnnModel> {
    config.validate()?;
    let (model, _) = dpc(&dataset.features, policy)?;
    let coords = dataset.features.select(Axis(0), &model.centers);
    let membership = fuzzy_membership(&dataset.features, &coords, membership_denom)?;
    let routed = route(&membership);

    // Drop centers that attracted no samples. Removal cannot re-empty a
    // surviving center: every sample's argmax center already survives.
    let g = model.centers.len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); g];
    for (i, &k) in routed.iter().enumerate() {
        members[k].push(i);
    }
    let survivors: Vec<usize> = (0..g).filter(|&k| !members[k].is_empty()).collect();
    let coords = coords.select(Axis(0), &survivors);

    let mut subnets = Vec::with_capacity(survivors.len());
    for (new_k, &old_k) in survivors.iter().enumerate() {
        let sub = dataset.subset(&members[old_k]);
        let sub_config = TrainConfig { seed: config.seed.wrapping_add(new_k as u64), ..config.clone() };
        subnets.push(train_classic(&sub, hidden_sizes, &sub_config)?);
    }
    Ok(AmnnModel { center_coords: coords, denom: membership_denom, subnets })
}

/// Fitted standardization statistics carried inside saved models so that
/// evaluation reproduces the training preprocessing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StandardizerRecord {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpRecord {
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
    /// Row-major weight matrix per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardizer: Option<StandardizerRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmnnRecord {
    pub version: u32,
    pub denom: f64,
    /// Center coordinates, one row per surviving subnet.
    pub centers: Vec<Vec<f64>>,
    pub subnets: Vec<MlpRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardizer: Option<StandardizerRecord>,
}

/// On-disk model document. JSON numbers are written in shortest
/// round-trip decimal form, so reloading reproduces every f64 bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SavedModel {
    Mlp(MlpRecord),
    Amnn(AmnnRecord),
}

impl SavedModel {
    pub fn standardizer(&self) -> Option<&StandardizerRecord> {
        match self {
            SavedModel::Mlp(m) => m.standardizer.as_ref(),
            SavedModel::Amnn(a) => a.standardizer.as_ref(),
        }
    }
}

impl MlpRecord {
    pub fn from_mlp(net: &Mlp) -> MlpRecord {
        MlpRecord {
            version: MODEL_FORMAT_VERSION,
            layer_sizes: net.layer_sizes.clone(),
            hidden_activation: net.hidden_activation,
            output_activation: net.output_activation,
            weights: net.weights.iter().map(|w| w.iter().copied().collect()).collect(),
            biases: net.biases.iter().map(|b| b.to_vec()).collect(),
            standardizer: None,
        }
    }

    pub fn to_mlp(&self) -> Result<Mlp> {
        if self.version != MODEL_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported model version {} (expected {MODEL_FORMAT_VERSION})",
                self.version
            )));
        }
        if self.layer_sizes.len() < 2 {
            return Err(Error::Config("model has fewer than 2 layers".into()));
        }
        let pairs = self.layer_sizes.len() - 1;
        if self.weights.len() != pairs || self.biases.len() != pairs {
            return Err(Error::Shape("model weight/bias count mismatch".into()));
        }
        let mut weights = Vec::with_capacity(pairs);
        let mut biases = Vec::with_capacity(pairs);
        for l in 0..pairs {
            let (rows, cols) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let w = Array2::from_shape_vec((rows, cols), self.weights[l].clone())
                .map_err(|e| Error::Shape(format!("layer {l} weights: {e}")))?;
            if self.biases[l].len() != cols {
                return Err(Error::Shape(format!("layer {l} bias length")));
            }
            weights.push(w);
            biases.push(Array1::from_vec(self.biases[l].clone()));
        }
        Ok(Mlp {
            layer_sizes: self.layer_sizes.clone(),
            weights,
            biases,
            hidden_activation: self.hidden_activation,
            output_activation: self.output_activation,
        })
    }
}

impl AmnnRecord {
    pub fn from_model(model: &AmnnModel) -> AmnnRecord {
        AmnnRecord {
            version: MODEL_FORMAT_VERSION,
            denom: model.denom,
            centers: model
                .center_coords
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect(),
            subnets: model.subnets.iter().map(MlpRecord::from_mlp).collect(),
            standardizer: None,
        }
    }

    pub fn to_model(&self) -> Result<AmnnModel> {
        if self.version != MODEL_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported model version {} (expected {MODEL_FORMAT_VERSION})",
                self.version
            )));
        }
        if self.centers.is_empty() || self.centers.len() != self.subnets.len() {
            return Err(Error::Shape("model centers/subnets mismatch".into()));
        }
        let d = self.centers[0].len();
        if self.centers.iter().any(|c| c.len() != d) {
            return Err(Error::Shape("ragged center coordinates".into()));
        }
        let mut coords = Array2::zeros((self.centers.len(), d));
        for (i, c) in self.centers.iter().enumerate() {
            for (j, &v) in c.iter().enumerate() {
                coords[[i, j]] = v;
            }
        }
        let subnets = self.subnets.iter().map(MlpRecord::to_mlp).collect::<Result<Vec<_>>>()?;
        Ok(AmnnModel { center_coords: coords, denom: self.denom, subnets })
    }
}

pub fn save_model(path: &std::path::Path, model: &SavedModel) -> Result<()> {
    let json = serde_json::to_string_pretty(model)
        .map_err(|e| Error::Config(format!("model serialization: {e}")))?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_model(path: &std::path::Path) -> Result<SavedModel> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize, SynthSpec};
    use ndarray::arr2;

    const ELU_AT_MINUS_ONE: f64 = -0.6321205588285577;

    fn classic(sizes: &[usize], seed: u64) -> Mlp {
        Mlp::init_weights(sizes, HiddenActivation::Logistic, OutputActivation::Logistic, seed)
            .unwrap()
    }

    #[test]
    fn init_shapes_bounds_and_determinism() {
        let net = classic(&[2, 20, 3], 5);
        assert_eq!(net.weights[0].dim(), (2, 20));
        assert_eq!(net.weights[1].dim(), (20, 3));
        assert!(net.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
        for (w, sizes) in net.weights.iter().zip([[2usize, 20], [20, 3]]) {
            let bound = (6.0 / (sizes[0] + sizes[1]) as f64).sqrt();
            assert!(w.iter().all(|&v| v.abs() <= bound));
        }
        assert_eq!(net, classic(&[2, 20, 3], 5));
        assert_ne!(net, classic(&[2, 20, 3], 6));
        assert!(Mlp::init_weights(&[3], HiddenActivation::Elu, OutputActivation::Softmax, 0).is_err());
        assert!(Mlp::init_weights(&[3, 0, 2], HiddenActivation::Elu, OutputActivation::Softmax, 0).is_err());
    }

    #[test]
    fn forward_zero_weights_reference_outputs() {
        let mut net = classic(&[2, 3, 2], 0);
        for w in &mut net.weights {
            w.fill(0.0);
        }
        let (out, _) = net.forward(&arr2(&[[1.0, -2.0]])).unwrap();
        assert!(out.iter().all(|&v| v == 0.5));

        let mut soft =
            Mlp::init_weights(&[2, 3, 3], HiddenActivation::Elu, OutputActivation::Softmax, 0).unwrap();
        for w in &mut soft.weights {
            w.fill(0.0);
        }
        let (out, _) = soft.forward(&arr2(&[[1.0, -2.0]])).unwrap();
        for &v in out.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_elu_hidden_anchor() {
        // Single hidden unit with pre-activation -1.
        let mut net =
            Mlp::init_weights(&[1, 1, 1], HiddenActivation::Elu, OutputActivation::Softmax, 0).unwrap();
        net.weights[0][[0, 0]] = -1.0;
        net.weights[1][[0, 0]] = 1.0;
        let (_, cache) = net.forward(&arr2(&[[1.0]])).unwrap();
        assert!((cache.act[1][[0, 0]] - ELU_AT_MINUS_ONE).abs() < 1e-15);
    }

    #[test]
    fn squared_error_anchors() {
        assert_eq!(squared_error(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(squared_error(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(squared_error(&[1.0], &[0.5]).unwrap(), 0.125);
        assert!(squared_error(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn backprop_fixed_point_when_targets_equal_outputs() {
        let mut net = classic(&[2, 3, 2], 3);
        let x = arr2(&[[0.4, -1.2], [2.0, 0.3]]);
        let (out, _) = net.forward(&x).unwrap();
        let before = net.clone();
        net.backprop_step(&x, &out, 0.5).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn backprop_matches_hand_computed_single_weight_case() {
        // 1-1-1 network: x = 1, hidden weight 0.5, output weight 0.3,
        // zero biases, target 1, learning rate 0.5.
        let mut net = classic(&[1, 1, 1], 0);
        net.weights[0][[0, 0]] = 0.5;
        net.weights[1][[0, 0]] = 0.3;
        net.backprop_step(&arr2(&[[1.0]]), &arr2(&[[1.0]]), 0.5).unwrap();
        assert!((net.weights[1][[0, 0]] - (0.3 + 0.03497603111085685)).abs() < 1e-15);
        assert!((net.weights[0][[0, 0]] - (0.5 + 0.003961462253249291)).abs() < 1e-15);
        assert!((net.biases[1][0] - 0.05619006633465444).abs() < 1e-15);
        assert!((net.biases[0][0] - 0.003961462253249291).abs() < 1e-15);
    }

    /// Central finite differences of the batch-mean squared error with
    /// respect to every weight and bias.
    fn classic_fd_gradients(net: &Mlp, x: &Array2<f64>, t: &Array2<f64>) -> (Vec<Array2<f64>>, Vec<Array1<f64>>) {
        let h = 1e-5;
        let mut grad_w = Vec::new();
        let mut grad_b = Vec::new();
        let mut probe = net.clone();
        for l in 0..net.weights.len() {
            let mut gw = Array2::zeros(net.weights[l].dim());
            for idx in 0..net.weights[l].len() {
                let (rows, cols) = net.weights[l].dim();
                let ij = (idx / cols, idx % cols);
                let _ = rows;
                let orig = probe.weights[l][ij];
                probe.weights[l][ij] = orig + h;
                let plus = batch_squared_error(t, &probe.forward(x).unwrap().0);
                probe.weights[l][ij] = orig - h;
                let minus = batch_squared_error(t, &probe.forward(x).unwrap().0);
                probe.weights[l][ij] = orig;
                gw[ij] = (plus - minus) / (2.0 * h);
            }
            grad_w.push(gw);
            let mut gb = Array1::zeros(net.biases[l].len());
            for j in 0..net.biases[l].len() {
                let orig = probe.biases[l][j];
                probe.biases[l][j] = orig + h;
                let plus = batch_squared_error(t, &probe.forward(x).unwrap().0);
                probe.biases[l][j] = orig - h;
                let minus = batch_squared_error(t, &probe.forward(x).unwrap().0);
                probe.biases[l][j] = orig;
                gb[j] = (plus - minus) / (2.0 * h);
            }
            grad_b.push(gb);
        }
        (grad_w, grad_b)
    }

    #[test]
    fn backprop_agrees_with_finite_differences() {
        let mut r = crate::seed::rng(21);
        for _ in 0..3 {
            let net = Mlp::init_from_rng(
                &[2, 3, 2],
                HiddenActivation::Logistic,
                OutputActivation::Logistic,
                &mut r,
            )
            .unwrap();
            let x = arr2(&[[0.3, -0.8], [1.1, 0.4], [-0.5, 0.9]]);
            let t = arr2(&[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]);
            let (fd_w, fd_b) = classic_fd_gradients(&net, &x, &t);

            // Recover the analytic gradient from one tiny update step.
            let zeta = 1e-6;
            let mut stepped = net.clone();
            stepped.backprop_step(&x, &t, zeta).unwrap();
            for l in 0..net.weights.len() {
                for idx in 0..net.weights[l].len() {
                    let cols = net.weights[l].dim().1;
                    let ij = (idx / cols, idx % cols);
                    // The update adds zeta * descent direction = -zeta * grad.
                    let analytic = -(stepped.weights[l][ij] - net.weights[l][ij]) / zeta;
                    let numeric = fd_w[l][ij];
                    let err = (analytic - numeric).abs();
                    assert!(
                        err < 1e-8 || err / analytic.abs().max(numeric.abs()) < 1e-5,
                        "layer {l} weight {ij:?}: {analytic} vs {numeric}"
                    );
                }
                for j in 0..net.biases[l].len() {
                    let analytic = -(stepped.biases[l][j] - net.biases[l][j]) / zeta;
                    let numeric = fd_b[l][j];
                    let err = (analytic - numeric).abs();
                    assert!(
                        err < 1e-8 || err / analytic.abs().max(numeric.abs()) < 1e-5,
                        "layer {l} bias {j}: {analytic} vs {numeric}"
                    );
                }
            }
        }
    }

    #[test]
    fn update_is_linear_in_learning_rate() {
        let net = classic(&[2, 4, 2], 11);
        let x = arr2(&[[0.2, -0.4], [0.9, 1.3]]);
        let t = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let direction = |zeta: f64| -> Vec<f64> {
            let mut stepped = net.clone();
            stepped.backprop_step(&x, &t, zeta).unwrap();
            let mut d = Vec::new();
            for l in 0..net.weights.len() {
                for (a, b) in stepped.weights[l].iter().zip(net.weights[l].iter()) {
                    d.push((a - b) / zeta);
                }
                for (a, b) in stepped.biases[l].iter().zip(net.biases[l].iter()) {
                    d.push((a - b) / zeta);
                }
            }
            d
        };
        let d3 = direction(1e-3);
        let d4 = direction(1e-4);
        let d5 = direction(1e-5);
        for ((a, b), c) in d3.iter().zip(d4.iter()).zip(d5.iter()) {
            assert!((a - b).abs() < 1e-9 && (b - c).abs() < 1e-9);
        }
    }

    fn two_blobs(seed: u64) -> crate::data::Dataset {
        let ds = synthesize(&SynthSpec {
            class_counts: vec![100, 100],
            dimension: 2,
            center_separation: 10.0,
            cluster_stddev: 1.0,
            seed,
        })
        .unwrap();
        let (train, _) = crate::data::split(&ds, 0.0, seed).unwrap();
        let (std_train, _, _, _) = crate::data::standardize(&train, &train).unwrap();
        std_train
    }

    #[test]
    fn train_classic_fits_separable_blobs() {
        let ds = two_blobs(1);
        let config = TrainConfig {
            learning_rate: 0.5,
            epochs: 60,
            batch_size: 32,
            target_error: f64::INFINITY,
            seed: 1,
        };
        let net = train_classic(&ds, &[8], &config).unwrap();
        let preds = net.predict(&ds.features).unwrap();
        let hits = preds.iter().zip(&ds.labels).filter(|(p, l)| p == l).count();
        assert!(hits as f64 / ds.n() as f64 >= 0.95, "{hits}/{}", ds.n());
    }

    #[test]
    fn train_classic_loss_is_nonincreasing_early() {
        let mut good = 0;
        for seed in 0..10 {
            let ds = two_blobs(seed);
            let config = TrainConfig {
                learning_rate: 0.1,
                epochs: 5,
                batch_size: 32,
                target_error: f64::INFINITY,
                seed,
            };
            let (_, losses) = train_classic_with_log(&ds, &[8], &config).unwrap();
            if losses.windows(2).all(|w| w[1] <= w[0] + 1e-12) {
                good += 1;
            }
        }
        assert!(good >= 9, "loss increased early in {}/10 seeds", 10 - good);
    }

    #[test]
    fn train_classic_respects_gate_and_validation() {
        let ds = two_blobs(2);
        let bad = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(train_classic(&ds, &[4], &bad).is_err());

        // Disabled gate runs every epoch.
        let config = TrainConfig {
            learning_rate: 0.1,
            epochs: 7,
            batch_size: 64,
            target_error: f64::INFINITY,
            seed: 3,
        };
        let (_, losses) = train_classic_with_log(&ds, &[4], &config).unwrap();
        assert_eq!(losses.len(), 7);

        // A generous finite gate stops after the first epoch.
        let gated = TrainConfig { target_error: 10.0, ..config };
        let (_, losses) = train_classic_with_log(&ds, &[4], &gated).unwrap();
        assert_eq!(losses.len(), 1);
    }

    #[test]
    fn amnn_single_center_equals_classic_training() {
        let ds = two_blobs(4);
        let config = TrainConfig {
            learning_rate: 0.3,
            epochs: 10,
            batch_size: 32,
            target_error: f64::INFINITY,
            seed: 9,
        };
        let amnn = train_amnn(&ds, &CenterPolicy::Fixed(1), 0.02, &[6], &config).unwrap();
        let classic_net = train_classic(&ds, &[6], &config).unwrap();
        assert_eq!(amnn.subnet_count(), 1);
        assert_eq!(amnn.subnets[0], classic_net);
    }

    #[test]
    fn amnn_blob_per_class_reaches_perfect_training_accuracy() {
        let raw = synthesize(&SynthSpec {
            class_counts: vec![50, 50, 50],
            dimension: 2,
            center_separation: 12.0,
            cluster_stddev: 1.0,
            seed: 6,
        })
        .unwrap();
        // Standardize as the experiment pipeline does; raw coordinates this
        // far apart would underflow every fuzzy membership to zero.
        let (ds, _, _, _) = crate::data::standardize(&raw, &raw).unwrap();
        let config = TrainConfig {
            learning_rate: 0.5,
            epochs: 40,
            batch_size: 16,
            target_error: f64::INFINITY,
            seed: 6,
        };
        let model = train_amnn(
            &ds,
            &CenterPolicy::Auto(crate::clustering::DEFAULT_CENTER_SPREAD),
            crate::gating::DEFAULT_MEMBERSHIP_DENOM,
            &[6],
            &config,
        )
        .unwrap();
        assert_eq!(model.subnet_count(), 3);
        let preds = model.predict(&ds.features).unwrap();
        assert_eq!(preds, ds.labels);
    }

    #[test]
    fn predict_breaks_ties_toward_lowest_class() {
        let mut net = classic(&[2, 3, 2], 0);
        for w in &mut net.weights {
            w.fill(0.0);
        }
        // Logistic outputs are all exactly 0.5.
        assert_eq!(net.predict(&arr2(&[[1.0, 2.0]])).unwrap(), vec![0]);
    }

    #[test]
    fn model_json_round_trips_bit_exactly() {
        let ds = two_blobs(7);
        let config = TrainConfig {
            learning_rate: 0.2,
            epochs: 3,
            batch_size: 32,
            target_error: f64::INFINITY,
            seed: 7,
        };
        let net = train_classic(&ds, &[5], &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&path, &SavedModel::Mlp(MlpRecord::from_mlp(&net))).unwrap();
        let loaded = match load_model(&path).unwrap() {
            SavedModel::Mlp(record) => record.to_mlp().unwrap(),
            _ => panic!("wrong kind"),
        };
        for (a, b) in net.weights.iter().zip(loaded.weights.iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        for (a, b) in net.biases.iter().zip(loaded.biases.iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }

        let amnn = train_amnn(&ds, &CenterPolicy::Fixed(2), 0.02, &[4], &config).unwrap();
        let path2 = dir.path().join("amnn.json");
        save_model(&path2, &SavedModel::Amnn(AmnnRecord::from_model(&amnn))).unwrap();
        let loaded = match load_model(&path2).unwrap() {
            SavedModel::Amnn(record) => record.to_model().unwrap(),
            _ => panic!("wrong kind"),
        };
        assert_eq!(loaded, amnn);
    }

    #[test]
    fn amnn_training_points_follow_their_subnet() {
        let ds = two_blobs(8);
        let config = TrainConfig {
            learning_rate: 0.3,
            epochs: 5,
            batch_size: 32,
            target_error: f64::INFINITY,
            seed: 8,
        };
        let model = train_amnn(&ds, &CenterPolicy::Fixed(2), 0.02, &[4], &config).unwrap();
        let membership =
            fuzzy_membership(&ds.features, &model.center_coords, model.denom).unwrap();
        let routed = route(&membership);
        let all = model.predict(&ds.features).unwrap();
        for i in 0..ds.n() {
            let row = ds.features.select(Axis(0), &[i]);
            let sub_pred = model.subnets[routed[i]].predict(&row).unwrap()[0];
            assert_eq!(all[i], sub_pred);
        }
    }
}
