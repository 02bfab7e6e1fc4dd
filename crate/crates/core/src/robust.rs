//! Noise-robust training: truncated generalized cross-entropy with a
//! per-sample retention mask recomputed from the model's own confidence,
//! optimized with Adam. Also hosts the cross-entropy and mixup baselines,
//! which share the same network shape (ELU hidden layers, softmax output)
//! and training loop.

use ndarray::{Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{mixup_with_rng, one_hot, Dataset};
use crate::error::{Error, Result};
use crate::network::{HiddenActivation, Mlp, OutputActivation};
use crate::seed::rng;

pub const CE_PROB_FLOOR: f64 = 1e-12;

/// Robust training configuration. `k = 0` is allowed as a degenerate
/// boundary: the plateau vanishes and every sample stays a retention
/// candidate, which is what the q = 1, k = 0 reduction to MAE training uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub q: f64,
    pub k: f64,
    pub sample_rate: f64,
    pub prune_warmup_epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for RobustConfig {
    fn default() -> Self {
        RobustConfig {
            learning_rate: 1e-4,
            epochs: 20,
            batch_size: 128,
            seed: 0,
            q: 0.7,
            k: 0.5,
            sample_rate: 1.0,
            prune_warmup_epochs: 2,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

impl RobustConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate {} must be > 0",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        check_q(self.q)?;
        check_k(self.k)?;
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return Err(Error::Config(format!(
                "sample_rate {} outside (0, 1]",
                self.sample_rate
            )));
        }
        for (name, beta) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Config(format!("{name} {beta} outside [0, 1)")));
            }
        }
        if !(self.adam_epsilon.is_finite() && self.adam_epsilon > 0.0) {
            return Err(Error::Config(format!(
                "adam_epsilon {} must be > 0",
                self.adam_epsilon
            )));
        }
        Ok(())
    }
}

fn check_q(q: f64) -> Result<()> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Config(format!("q {q} outside (0, 1]")));
    }
    Ok(())
}

fn check_k(k: f64) -> Result<()> {
    if !(k.is_finite() && (0.0..1.0).contains(&k)) {
        return Err(Error::Config(format!("k {k} outside [0, 1)")));
    }
    Ok(())
}

fn check_prob(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Data(format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

/// Generalized cross-entropy: L_q(p) = (1 - p^q) / q. Decreasing in p,
/// bounded by 1/q, and exactly 1 - p at q = 1.
pub fn gce_loss(p: f64, q: f64) -> Result<f64> {
    check_q(q)?;
    check_prob(p)?;
    Ok((1.0 - p.powf(q)) / q)
}

/// GCE flattened to the constant gce_loss(k, q) for p <= k: the constructed
/// loss bound. Low-confidence samples sit on the plateau with zero gradient.
pub fn truncated_loss(p: f64, q: f64, k: f64) -> Result<f64> {
    check_k(k)?;
    if p > k {
        gce_loss(p, q)
    } else {
        check_prob(p)?;
        gce_loss(k, q)
    }
}

/// dL/dp of the truncated loss: -p^(q-1) past the knee, 0 on the plateau.
pub fn truncated_loss_grad(p: f64, q: f64, k: f64) -> Result<f64> {
    check_q(q)?;
    check_k(k)?;
    check_prob(p)?;
    Ok(if p > k { -p.powf(q - 1.0) } else { 0.0 })
}

/// Per-sample retention mask: 1 = sample contributes gradient this epoch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleWeights {
    pub w: Vec<u8>,
    pub epoch_updated: usize,
}

impl SampleWeights {
    pub fn all_retained(n: usize) -> SampleWeights {
        SampleWeights { w: vec![1; n], epoch_updated: 0 }
    }

    pub fn retained_count(&self) -> usize {
        self.w.iter().filter(|&&v| v == 1).count()
    }
}

/// Retains the confident samples: candidates are p > k, capped at
/// ceil(sample_rate * N) by descending p (ties keep the lower index). An
/// empty candidate set falls back to the single highest-p sample, so at
/// least one sample always survives.
pub fn prune_mask(true_class_probs: &[f64], k: f64, sample_rate: f64) -> Result<SampleWeights> {
    check_k(k)?;
    if !(sample_rate > 0.0 && sample_rate <= 1.0) {
        return Err(Error::Config(format!("sample_rate {sample_rate} outside (0, 1]")));
    }
    let n = true_class_probs.len();
    if n == 0 {
        return Err(Error::Data("prune_mask: empty probability vector".into()));
    }
    for &p in true_class_probs {
        check_prob(p)?;
    }
    let cap = (sample_rate * n as f64).ceil() as usize;
    let mut candidates: Vec<usize> = (0..n).filter(|&i| true_class_probs[i] > k).collect();
    let mut w = vec![0u8; n];
    if candidates.is_empty() {
        let mut best = 0;
        for i in 1..n {
            if true_class_probs[i] > true_class_probs[best] {
                best = i;
            }
        }
        w[best] = 1;
    } else {
        if candidates.len() > cap {
            candidates.sort_by(|&a, &b| {
                true_class_probs[b]
                    .partial_cmp(&true_class_probs[a])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            candidates.truncate(cap);
        }
        for &i in &candidates {
            w[i] = 1;
        }
    }
    Ok(SampleWeights { w, epoch_updated: 0 })
}

/// First/second moment accumulators for one flat parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn zeros(len: usize) -> AdamMoments {
        AdamMoments { m: vec![0.0; len], v: vec![0.0; len] }
    }
}

/// One bias-corrected Adam update over a flat parameter slice. `t` is the
/// 1-based global step count.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamMoments,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len()
    {
        return Err(Error::Shape(format!(
            "adam_step: params {} vs grads {} vs state {}/{}",
            params.len(),
            grads.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    if t == 0 {
        return Err(Error::Config("adam_step: t must be >= 1".into()));
    }
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Cross-entropy on the true-class probability, clamped below at 1e-12.
pub fn cross_entropy_loss(p: f64) -> f64 {
    -p.max(CE_PROB_FLOOR).ln()
}

/// Loss driving a robust-mode epoch sweep. Truncated needs hard labels;
/// SoftCe consumes (possibly mixed) one-hot targets.
#[derive(Debug, Clone, Copy, PartialEq)]
enum SweepLoss {
    Truncated { q: f64, k: f64 },
    SoftCe,
}

/// Batch-mean loss and its gradients w.r.t. every weight and bias, derived
/// through the softmax analytically:
///   truncated: dL/dz_c = p_y^q * (p_c - [c = y]) / B   for p_y > k, else 0
///   soft CE:   dL/dz_c = (p_c - t_c) / B
fn robust_backward(
    net: &Mlp,
    x: &Array2<f64>,
    targets: &Array2<f64>,
    labels: &[usize],
    loss: SweepLoss,
) -> Result<(f64, Vec<Array2<f64>>, Vec<Array1<f64>>)> {
    let b = x.nrows();
    if b == 0 {
        return Err(Error::Data("robust backward: empty batch".into()));
    }
    let (out, cache) = net.forward(x)?;
    let c = out.ncols();
    let mut delta = Array2::zeros((b, c));
    let mut loss_sum = 0.0;
    match loss {
        SweepLoss::Truncated { q, k } => {
            if labels.len() != b {
                return Err(Error::Shape("robust backward: label length".into()));
            }
            for i in 0..b {
                let y = labels[i];
                let p_y = out[[i, y]];
                loss_sum += truncated_loss(p_y, q, k)?;
                let slope = truncated_loss_grad(p_y, q, k)?;
                if slope != 0.0 {
                    // dL/dz = f'(p_y) * p_y * ([c = y] - p_c), f' = -p_y^(q-1).
                    let weight = -slope * p_y;
                    for cc in 0..c {
                        let ind = if cc == y { 1.0 } else { 0.0 };
                        delta[[i, cc]] = -weight * (ind - out[[i, cc]]) / b as f64;
                    }
                }
            }
        }
        SweepLoss::SoftCe => {
            if targets.dim() != out.dim() {
                return Err(Error::Shape("robust backward: target shape".into()));
            }
            for i in 0..b {
                for cc in 0..c {
                    let t = targets[[i, cc]];
                    if t > 0.0 {
                        loss_sum += -t * out[[i, cc]].max(CE_PROB_FLOOR).ln();
                    }
                    delta[[i, cc]] = (out[[i, cc]] - t) / b as f64;
                }
            }
        }
    }

    let layers = net.weights.len();
    let mut grads_w = vec![Array2::zeros((0, 0)); layers];
    let mut grads_b = vec![Array1::zeros(0); layers];
    let mut d = delta;
    for l in (0..layers).rev() {
        grads_w[l] = cache.act[l].t().dot(&d);
        grads_b[l] = d.sum_axis(Axis(0));
        if l > 0 {
            let back = d.dot(&net.weights[l].t());
            let slope = cache.pre[l - 1].mapv(crate::network::elu_derivative);
            d = &back * &slope;
        }
    }
    for l in 0..layers {
        if grads_w[l].iter().any(|v| !v.is_finite()) || grads_b[l].iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in layer {l}")));
        }
    }
    Ok((loss_sum / b as f64, grads_w, grads_b))
}

/// Batch-mean truncated loss and its analytic gradients, exposed for
/// gradient diagnostics.
pub fn truncated_gradients(
    net: &Mlp,
    x: &Array2<f64>,
    labels: &[usize],
    q: f64,
    k: f64,
) -> Result<(f64, Vec<Array2<f64>>, Vec<Array1<f64>>)> {
    let targets = one_hot(labels, net.output_size());
    robust_backward(net, x, &targets, labels, SweepLoss::Truncated { q, k })
}

/// Batch-mean cross-entropy (hard or mixed targets) and its analytic
/// gradients, exposed for gradient diagnostics.
pub fn ce_gradients(
    net: &Mlp,
    x: &Array2<f64>,
    targets: &Array2<f64>,
) -> Result<(f64, Vec<Array2<f64>>, Vec<Array1<f64>>)> {
    let labels = vec![0; x.nrows()];
    robust_backward(net, x, targets, &labels, SweepLoss::SoftCe)
}

struct AdamState {
    weights: Vec<AdamMoments>,
    biases: Vec<AdamMoments>,
    t: u64,
}

impl AdamState {
    fn for_net(net: &Mlp) -> AdamState {
        AdamState {
            weights: net.weights.iter().map(|w| AdamMoments::zeros(w.len())).collect(),
            biases: net.biases.iter().map(|b| AdamMoments::zeros(b.len())).collect(),
            t: 0,
        }
    }
}

/// One shuffled pass over the retained samples. Returns (sum of batch-mean
/// losses weighted by batch size, number of retained rows visited), so the
/// caller can form the epoch mean over retained samples only.
#[allow(clippy::too_many_arguments)]
fn sweep_epoch(
    net: &mut Mlp,
    features: &Array2<f64>,
    targets: &Array2<f64>,
    labels: &[usize],
    mask: &SampleWeights,
    config: &RobustConfig,
    loss: SweepLoss,
    adam: &mut AdamState,
    r: &mut ChaCha8Rng,
) -> Result<(f64, usize)> {
    let n = features.nrows();
    let mut indices: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(indices.as_mut_slice(), r);
    let mut loss_sum = 0.0;
    let mut seen = 0usize;
    for chunk in indices.chunks(config.batch_size) {
        let keep: Vec<usize> = chunk.iter().copied().filter(|&i| mask.w[i] == 1).collect();
        if keep.is_empty() {
            continue;
        }
        let x = features.select(Axis(0), &keep);
        let t = targets.select(Axis(0), &keep);
        let y: Vec<usize> = keep.iter().map(|&i| labels[i]).collect();
        let (batch_loss, grads_w, grads_b) = robust_backward(net, &x, &t, &y, loss)?;
        adam.t += 1;
        for l in 0..net.weights.len() {
            adam_step(
                net.weights[l].as_slice_mut().expect("contiguous weights"),
                grads_w[l].as_slice().expect("contiguous grads"),
                &mut adam.weights[l],
                config.learning_rate,
                config.adam_beta1,
                config.adam_beta2,
                config.adam_epsilon,
                adam.t,
            )?;
            adam_step(
                net.biases[l].as_slice_mut().expect("contiguous biases"),
                grads_b[l].as_slice().expect("contiguous grads"),
                &mut adam.biases[l],
                config.learning_rate,
                config.adam_beta1,
                config.adam_beta2,
                config.adam_epsilon,
                adam.t,
            )?;
        }
        loss_sum += batch_loss * keep.len() as f64;
        seen += keep.len();
    }
    Ok((loss_sum, seen))
}

/// One row of the per-epoch training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub retained: usize,
    pub train_accuracy: f64,
}

pub fn write_epoch_log(path: &std::path::Path, rows: &[EpochLog]) -> Result<()> {
    let mut out = String::from("epoch,mean_loss,retained,train_accuracy\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.epoch, row.mean_loss, row.retained, row.train_accuracy
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum TrainMode {
    Truncated,
    CrossEntropy,
    CrossEntropyMixup { alpha: f64 },
}

fn train_probabilistic(
    dataset: &Dataset,
    hidden_sizes: &[usize],
    config: &RobustConfig,
    mode: TrainMode,
) -> Result<(Mlp, Vec<EpochLog>)> {
    config.validate()?;
    if dataset.n() == 0 {
        return Err(Error::Data("robust training: empty dataset".into()));
    }
    let mut layer_sizes = vec![dataset.dim()];
    layer_sizes.extend_from_slice(hidden_sizes);
    layer_sizes.push(dataset.class_count);

    let mut r = rng(config.seed);
    let mut net = Mlp::init_from_rng(
        &layer_sizes,
        HiddenActivation::Elu,
        OutputActivation::Softmax,
        &mut r,
    )?;
    let onehot = one_hot(&dataset.labels, dataset.class_count);
    let mut adam = AdamState::for_net(&net);
    let mut mask = SampleWeights::all_retained(dataset.n());
    let mut logs = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        if mode == TrainMode::Truncated && epoch >= config.prune_warmup_epochs {
            let probs = net.predict_proba(&dataset.features)?;
            let p_true: Vec<f64> =
                (0..dataset.n()).map(|i| probs[[i, dataset.labels[i]]]).collect();
            mask = prune_mask(&p_true, config.k, config.sample_rate)?;
            mask.epoch_updated = epoch;
        }

        let mixed;
        let (features, targets): (&Array2<f64>, &Array2<f64>) = match mode {
            TrainMode::CrossEntropyMixup { alpha } => {
                mixed = mixup_with_rng(&dataset.features, &onehot, alpha, &mut r)?;
                (&mixed.0, &mixed.1)
            }
            _ => (&dataset.features, &onehot),
        };
        let loss = match mode {
            TrainMode::Truncated => SweepLoss::Truncated { q: config.q, k: config.k },
            _ => SweepLoss::SoftCe,
        };
        let (loss_sum, seen) = sweep_epoch(
            &mut net,
            features,
            targets,
            &dataset.labels,
            &mask,
            config,
            loss,
            &mut adam,
            &mut r,
        )
        .map_err(|e| Error::Numeric(format!("epoch {epoch}: {e}")))?;

        let preds = net.predict(&dataset.features)?;
        let hits = preds.iter().zip(&dataset.labels).filter(|(p, l)| p == l).count();
        logs.push(EpochLog {
            epoch,
            mean_loss: loss_sum / seen.max(1) as f64,
            retained: mask.retained_count(),
            train_accuracy: hits as f64 / dataset.n() as f64,
        });
    }
    Ok((net, logs))
}

/// Dynamic truncated-loss training: ELU hidden layers, softmax output,
/// Adam updates, and a retention mask recomputed from the model's own
/// true-class probabilities once the warmup epochs have passed.
pub fn train_robust_with_log(
    dataset: &Dataset,
    hidden_sizes: &[usize],
    config: &RobustConfig,
) -> Result<(Mlp, Vec<EpochLog>)> {
    train_probabilistic(dataset, hidden_sizes, config, TrainMode::Truncated)
}

pub fn train_robust(dataset: &Dataset, hidden_sizes: &[usize], config: &RobustConfig) -> Result<Mlp> {
    train_robust_with_log(dataset, hidden_sizes, config).map(|(net, _)| net)
}

/// Cross-entropy twin of train_robust: identical architecture, init, and
/// optimizer, no truncation and no pruning.
pub fn train_ce_with_log(
    dataset: &Dataset,
    hidden_sizes: &[usize],
    config: &RobustConfig,
) -> Result<(Mlp, Vec<EpochLog>)> {
    train_probabilistic(dataset, hidden_sizes, config, TrainMode::CrossEntropy)
}

pub fn train_ce(dataset: &Dataset, hidden_sizes: &[usize], config: &RobustConfig) -> Result<Mlp> {
    train_ce_with_log(dataset, hidden_sizes, config).map(|(net, _)| net)
}

/// Cross-entropy training on freshly mixed data each epoch: pairs are drawn
/// from a shuffled partner permutation with Beta(alpha, alpha) weights.
pub fn train_ce_mixup_with_log(
    dataset: &Dataset,
    hidden_sizes: &[usize],
    config: &RobustConfig,
    alpha: f64,
) -> Result<(Mlp, Vec<EpochLog>)> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Config(format!("mixup alpha {alpha} must be > 0")));
    }
    train_probabilistic(dataset, hidden_sizes, config, TrainMode::CrossEntropyMixup { alpha })
}

pub fn train_ce_mixup(
    dataset: &Dataset,
    hidden_sizes: &[usize],
    config: &RobustConfig,
    alpha: f64,
) -> Result<Mlp> {
    train_ce_mixup_with_log(dataset, hidden_sizes, config, alpha).map(|(net, _)| net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{standardize, synthesize, SynthSpec};
    use ndarray::arr2;

    const PLATEAU_07_05: f64 = 0.5491825618964884;

    #[test]
    fn gce_anchors_and_validation() {
        assert_eq!(gce_loss(1.0, 0.7).unwrap(), 0.0);
        assert!((gce_loss(0.5, 0.7).unwrap() - PLATEAU_07_05).abs() < 1e-12);
        assert!(gce_loss(0.5, 0.0).is_err());
        assert!(gce_loss(0.5, 1.2).is_err());
        assert!(gce_loss(-0.1, 0.7).is_err());
        assert!(gce_loss(1.1, 0.7).is_err());
        // q = 1 is exactly the MAE limb.
        for i in 0..=10 {
            let p = i as f64 / 10.0;
            assert_eq!(gce_loss(p, 1.0).unwrap(), 1.0 - p);
        }
    }

    #[test]
    fn truncated_loss_anchors() {
        for p in [0.0, 0.2, 0.5] {
            assert!((truncated_loss(p, 0.7, 0.5).unwrap() - PLATEAU_07_05).abs() < 1e-12);
        }
        assert_eq!(truncated_loss(1.0, 0.7, 0.5).unwrap(), 0.0);
        let knee = truncated_loss(0.5, 0.7, 0.5).unwrap();
        let past = truncated_loss(0.5 + 1e-12, 0.7, 0.5).unwrap();
        assert!((knee - past).abs() < 1e-9);
        assert!(truncated_loss(0.5, 0.7, 1.0).is_err());
        assert!(truncated_loss(0.5, 0.7, -0.1).is_err());
        // k = 0 is the degenerate no-plateau boundary.
        assert_eq!(truncated_loss(0.3, 1.0, 0.0).unwrap(), 0.7);
    }

    #[test]
    fn truncated_loss_bounded_and_monotone_on_grid() {
        let (q, k): (f64, f64) = (0.7, 0.5);
        let bound = (1.0 - k.powf(q)) / q;
        let mut prev = f64::INFINITY;
        for i in 0..=10_000 {
            let p = i as f64 / 10_000.0;
            let l = truncated_loss(p, q, k).unwrap();
            assert!((0.0..=bound + 1e-15).contains(&l));
            if p < 1.0 {
                assert!(l > 0.0);
            } else {
                assert_eq!(l, 0.0);
            }
            if p <= k {
                assert!((l - bound).abs() < 1e-15);
            }
            assert!(l <= prev + 1e-15);
            prev = l;
        }
    }

    #[test]
    fn truncated_loss_gradient_matches_finite_differences() {
        let (q, k) = (0.7, 0.5);
        let h = 1e-7;
        for i in 1..1000 {
            let p = i as f64 / 1000.0;
            if (p - k).abs() <= 1e-6 || p + h > 1.0 {
                continue;
            }
            let fd = (truncated_loss(p + h, q, k).unwrap() - truncated_loss(p - h, q, k).unwrap())
                / (2.0 * h);
            let analytic = truncated_loss_grad(p, q, k).unwrap();
            if p < k {
                assert!(fd.abs() < 1e-6, "p={p}: fd={fd}");
                assert_eq!(analytic, 0.0);
            } else {
                assert!((fd - -p.powf(q - 1.0)).abs() < 1e-6, "p={p}: fd={fd}");
                assert!((analytic - fd).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn prune_mask_counting_rules() {
        let all_confident = vec![0.9; 8];
        let m = prune_mask(&all_confident, 0.5, 1.0).unwrap();
        assert_eq!(m.retained_count(), 8);

        let probs: Vec<f64> = (0..10).map(|i| 0.6 + 0.03 * i as f64).collect();
        let m = prune_mask(&probs, 0.5, 0.5).unwrap();
        assert_eq!(m.retained_count(), 5);
        for i in 0..10 {
            assert_eq!(m.w[i], u8::from(i >= 5), "index {i}");
        }

        let timid = vec![0.1, 0.3, 0.2];
        let m = prune_mask(&timid, 0.5, 1.0).unwrap();
        assert_eq!(m.w, vec![0, 1, 0]);

        // Ties at the cap keep the lower index.
        let tied = vec![0.9, 0.9, 0.9, 0.9];
        let m = prune_mask(&tied, 0.5, 0.5).unwrap();
        assert_eq!(m.w, vec![1, 1, 0, 0]);
    }

    #[test]
    fn prune_mask_respects_floor_and_cap_property() {
        let mut r = crate::seed::rng(40);
        for _ in 0..200 {
            let n = 1 + rand::Rng::random_range(&mut r, 0..30);
            let probs: Vec<f64> = (0..n).map(|_| rand::Rng::random_range(&mut r, 0.0..1.0)).collect();
            let rate: f64 = rand::Rng::random_range(&mut r, 0.01..1.0);
            let k: f64 = rand::Rng::random_range(&mut r, 0.0..0.99);
            let m = prune_mask(&probs, k, rate).unwrap();
            let kept = m.retained_count();
            let cap = (rate * n as f64).ceil() as usize;
            assert!(kept >= 1 && kept <= cap.max(1), "n={n} kept={kept} cap={cap}");
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params_and_decays_moments() {
        let mut params = vec![1.0, -2.0];
        let mut state = AdamMoments { m: vec![0.5, -0.5], v: vec![0.25, 0.25] };
        // Nonzero first moment still moves params; zero both moments first.
        let mut quiet = AdamMoments::zeros(2);
        let mut frozen = params.clone();
        adam_step(&mut frozen, &[0.0, 0.0], &mut quiet, 0.1, 0.9, 0.999, 1e-8, 1).unwrap();
        assert_eq!(frozen, params);

        adam_step(&mut params, &[0.0, 0.0], &mut state, 0.1, 0.9, 0.999, 1e-8, 1).unwrap();
        assert!((state.m[0] - 0.45).abs() < 1e-15);
        assert!((state.v[0] - 0.24975).abs() < 1e-15);
    }

    #[test]
    fn adam_constant_gradient_step_magnitude_approaches_lr() {
        let lr = 0.01;
        let mut params = vec![0.0];
        let mut state = AdamMoments::zeros(1);
        let mut last = params[0];
        let mut step = 0.0;
        for t in 1..=10_000u64 {
            adam_step(&mut params, &[3.0], &mut state, lr, 0.9, 0.999, 1e-8, t).unwrap();
            step = (params[0] - last).abs();
            last = params[0];
        }
        assert!((step - lr).abs() / lr < 0.01, "final step {step}");
    }

    #[test]
    fn adam_is_deterministic_and_checks_shapes() {
        let run = || {
            let mut params = vec![0.3, -0.7, 0.1];
            let mut state = AdamMoments::zeros(3);
            for t in 1..=50u64 {
                adam_step(&mut params, &[0.2, -0.1, 0.05], &mut state, 1e-3, 0.9, 0.999, 1e-8, t)
                    .unwrap();
            }
            params
        };
        let (a, b) = (run(), run());
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        let mut p = vec![0.0];
        assert!(adam_step(&mut p, &[0.0, 0.0], &mut AdamMoments::zeros(1), 0.1, 0.9, 0.999, 1e-8, 1)
            .is_err());
        assert!(adam_step(&mut p, &[0.0], &mut AdamMoments::zeros(1), 0.1, 0.9, 0.999, 1e-8, 0)
            .is_err());
    }

    #[test]
    fn cross_entropy_anchors() {
        assert_eq!(cross_entropy_loss(1.0), 0.0);
        assert!((cross_entropy_loss((-1.0f64).exp()) - 1.0).abs() < 1e-15);
        assert!((cross_entropy_loss(0.0) - 27.631021115928547).abs() < 1e-12);
    }

    fn elu_softmax_net(sizes: &[usize], seed: u64) -> Mlp {
        Mlp::init_weights(sizes, HiddenActivation::Elu, OutputActivation::Softmax, seed).unwrap()
    }

    fn batch_loss(net: &Mlp, x: &Array2<f64>, t: &Array2<f64>, y: &[usize], loss: SweepLoss) -> f64 {
        let (out, _) = net.forward(x).unwrap();
        let b = x.nrows();
        let mut sum = 0.0;
        for i in 0..b {
            match loss {
                SweepLoss::Truncated { q, k } => {
                    sum += truncated_loss(out[[i, y[i]]], q, k).unwrap();
                }
                SweepLoss::SoftCe => {
                    for c in 0..out.ncols() {
                        if t[[i, c]] > 0.0 {
                            sum += -t[[i, c]] * out[[i, c]].max(CE_PROB_FLOOR).ln();
                        }
                    }
                }
            }
        }
        sum / b as f64
    }

    fn fd_check(net: &Mlp, x: &Array2<f64>, t: &Array2<f64>, y: &[usize], loss: SweepLoss) {
        let (_, grads_w, grads_b) = robust_backward(net, x, t, y, loss).unwrap();
        // Knee-crossing guard: finite differences are meaningless within h of
        // the plateau boundary.
        if let SweepLoss::Truncated { k, .. } = loss {
            let (out, _) = net.forward(x).unwrap();
            for (i, &yi) in y.iter().enumerate() {
                assert!((out[[i, yi]] - k).abs() > 1e-3, "oracle too close to the knee");
            }
        }
        let h = 1e-6;
        let mut probe = net.clone();
        for l in 0..net.weights.len() {
            for idx in 0..net.weights[l].len() {
                let cols = net.weights[l].dim().1;
                let ij = (idx / cols, idx % cols);
                let orig = probe.weights[l][ij];
                probe.weights[l][ij] = orig + h;
                let plus = batch_loss(&probe, x, t, y, loss);
                probe.weights[l][ij] = orig - h;
                let minus = batch_loss(&probe, x, t, y, loss);
                probe.weights[l][ij] = orig;
                let fd = (plus - minus) / (2.0 * h);
                let an = grads_w[l][ij];
                let err = (an - fd).abs();
                assert!(
                    err < 1e-8 || err / an.abs().max(fd.abs()) < 1e-5,
                    "layer {l} weight {ij:?}: analytic {an} vs fd {fd}"
                );
            }
            for j in 0..net.biases[l].len() {
                let orig = probe.biases[l][j];
                probe.biases[l][j] = orig + h;
                let plus = batch_loss(&probe, x, t, y, loss);
                probe.biases[l][j] = orig - h;
                let minus = batch_loss(&probe, x, t, y, loss);
                probe.biases[l][j] = orig;
                let fd = (plus - minus) / (2.0 * h);
                let an = grads_b[l][j];
                let err = (an - fd).abs();
                assert!(
                    err < 1e-8 || err / an.abs().max(fd.abs()) < 1e-5,
                    "layer {l} bias {j}: analytic {an} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn robust_gradients_match_finite_differences() {
        let x = arr2(&[[0.4, -0.9], [1.2, 0.5], [-0.3, 0.8], [0.1, -1.4]]);
        let y = vec![0, 1, 2, 1];
        let t = one_hot(&y, 3);
        for seed in [13, 14] {
            let net = elu_softmax_net(&[2, 4, 3], seed);
            fd_check(&net, &x, &t, &y, SweepLoss::Truncated { q: 0.7, k: 0.5 });
            fd_check(&net, &x, &t, &y, SweepLoss::SoftCe);
        }
        // Soft (mixed) targets exercise the general CE path.
        let soft = arr2(&[
            [0.7, 0.3, 0.0],
            [0.0, 0.5, 0.5],
            [0.2, 0.0, 0.8],
            [0.1, 0.9, 0.0],
        ]);
        let net = elu_softmax_net(&[2, 4, 3], 15);
        fd_check(&net, &x, &soft, &y, SweepLoss::SoftCe);
    }

    #[test]
    fn pruned_samples_have_exactly_zero_influence() {
        // Two feature matrices differing only in a pruned row must produce
        // bit-identical updates while the mask is fixed.
        let y = vec![0, 1, 0, 1, 0, 1];
        let base = arr2(&[
            [0.5, 0.2],
            [-0.4, 1.0],
            [0.3, -0.2],
            [-0.8, 0.6],
            [0.9, 0.1],
            [-0.2, 0.7],
        ]);
        let mut bumped = base.clone();
        bumped[[3, 0]] += 100.0;
        bumped[[3, 1]] -= 42.0;
        let t = one_hot(&y, 2);
        let mask = SampleWeights { w: vec![1, 1, 1, 0, 1, 1], epoch_updated: 0 };
        let config = RobustConfig { batch_size: 3, ..RobustConfig::default() };

        let run = |features: &Array2<f64>| {
            let mut net = elu_softmax_net(&[2, 4, 2], 99);
            let mut adam = AdamState::for_net(&net);
            let mut r = crate::seed::rng(7);
            sweep_epoch(
                &mut net,
                features,
                &t,
                &y,
                &mask,
                &config,
                SweepLoss::Truncated { q: 0.7, k: 0.5 },
                &mut adam,
                &mut r,
            )
            .unwrap();
            net
        };
        let a = run(&base);
        let b = run(&bumped);
        for l in 0..a.weights.len() {
            for (x, y) in a.weights[l].iter().zip(b.weights[l].iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            for (x, y) in a.biases[l].iter().zip(b.biases[l].iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    fn blobs_d(seed: u64, counts: Vec<usize>, dimension: usize) -> Dataset {
        let raw = synthesize(&SynthSpec {
            class_counts: counts,
            dimension,
            center_separation: 6.0,
            cluster_stddev: 1.0,
            seed,
        })
        .unwrap();
        let (ds, _, _, _) = standardize(&raw, &raw).unwrap();
        ds
    }

    fn blobs(seed: u64, counts: Vec<usize>) -> Dataset {
        blobs_d(seed, counts, 2)
    }

    #[test]
    fn mae_reduction_is_monotone_on_clean_data() {
        // sample_rate 1, k 0, q 1: the plateau vanishes, nothing is pruned,
        // and training minimizes plain MAE on true-class probabilities.
        let mut good = 0;
        for seed in 0..10 {
            let ds = blobs(seed, vec![60, 60]);
            let config = RobustConfig {
                learning_rate: 1e-3,
                epochs: 3,
                batch_size: 32,
                seed,
                q: 1.0,
                k: 0.0,
                sample_rate: 1.0,
                ..RobustConfig::default()
            };
            let (_, logs) = train_robust_with_log(&ds, &[8], &config).unwrap();
            assert_eq!(logs.len(), 3);
            assert!(logs.iter().all(|l| l.retained == ds.n()));
            if logs.windows(2).all(|w| w[1].mean_loss <= w[0].mean_loss + 1e-12) {
                good += 1;
            }
        }
        assert!(good >= 8, "loss increased in {}/10 seeds", 10 - good);
    }

    #[test]
    fn robust_training_fits_clean_separable_blobs() {
        // The plateau needs every class to hold confident samples early so
        // the retention snowball can spread: a roomier feature space gives
        // the init enough logit spread, and full-size batches keep the
        // minority anchors in play during warmup.
        let ds = blobs_d(3, vec![500, 500, 500], 10);
        let config = RobustConfig {
            learning_rate: 1e-2,
            epochs: 20,
            batch_size: 128,
            seed: 3,
            ..RobustConfig::default()
        };
        let net = train_robust(&ds, &[20], &config).unwrap();
        let preds = net.predict(&ds.features).unwrap();
        let hits = preds.iter().zip(&ds.labels).filter(|(p, l)| p == l).count();
        assert!(hits as f64 / ds.n() as f64 >= 0.95, "{hits}/{}", ds.n());
    }

    #[test]
    fn warmup_keeps_all_samples_then_mask_updates() {
        let ds = blobs(5, vec![40, 40]);
        let config = RobustConfig {
            learning_rate: 1e-2,
            epochs: 5,
            batch_size: 16,
            seed: 5,
            prune_warmup_epochs: 2,
            ..RobustConfig::default()
        };
        let (_, logs) = train_robust_with_log(&ds, &[8], &config).unwrap();
        assert_eq!(logs[0].retained, ds.n());
        assert_eq!(logs[1].retained, ds.n());
        // After warmup the mask comes from the model, so it can only shrink.
        assert!(logs[2..].iter().all(|l| l.retained >= 1 && l.retained <= ds.n()));
    }

    #[test]
    fn ce_and_mixup_trainers_run_and_log() {
        let ds = blobs(6, vec![40, 40]);
        let config = RobustConfig {
            learning_rate: 1e-2,
            epochs: 4,
            batch_size: 16,
            seed: 6,
            ..RobustConfig::default()
        };
        let (ce_net, ce_logs) = train_ce_with_log(&ds, &[8], &config).unwrap();
        assert_eq!(ce_logs.len(), 4);
        assert!(ce_logs.iter().all(|l| l.retained == ds.n()));
        let preds = ce_net.predict(&ds.features).unwrap();
        let hits = preds.iter().zip(&ds.labels).filter(|(p, l)| p == l).count();
        assert!(hits as f64 / ds.n() as f64 >= 0.9);

        let (_, mix_logs) = train_ce_mixup_with_log(&ds, &[8], &config, 0.2).unwrap();
        assert_eq!(mix_logs.len(), 4);
        assert!(train_ce_mixup(&ds, &[8], &config, 0.0).is_err());
    }

    #[test]
    fn epoch_log_round_trips_through_csv() {
        let rows = vec![
            EpochLog { epoch: 0, mean_loss: 0.75, retained: 100, train_accuracy: 0.5 },
            EpochLog { epoch: 1, mean_loss: 0.5021, retained: 93, train_accuracy: 0.77 },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        write_epoch_log(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "epoch,mean_loss,retained,train_accuracy");
        assert_eq!(lines.next().unwrap(), "0,0.75,100,0.5");
        assert_eq!(lines.next().unwrap(), "1,0.5021,93,0.77");
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let ok = RobustConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            RobustConfig { q: 0.0, ..ok.clone() },
            RobustConfig { q: 1.5, ..ok.clone() },
            RobustConfig { k: 1.0, ..ok.clone() },
            RobustConfig { sample_rate: 0.0, ..ok.clone() },
            RobustConfig { learning_rate: 0.0, ..ok.clone() },
            RobustConfig { epochs: 0, ..ok.clone() },
            RobustConfig { batch_size: 0, ..ok.clone() },
            RobustConfig { adam_beta1: 1.0, ..ok.clone() },
            RobustConfig { adam_epsilon: 0.0, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
        // k = 0 is the allowed degenerate boundary.
        assert!(RobustConfig { k: 0.0, ..ok }.validate().is_ok());
    }
}
