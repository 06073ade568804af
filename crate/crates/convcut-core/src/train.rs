//! Training loop: Adam on sparse categorical cross entropy with random
//! horizontal-flip augmentation, plus evaluation metrics (accuracy, macro F1,
//! confusion counts).

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::ConvCutModel;
use crate::ops;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tape::GradTape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub hflip_prob: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 50,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            hflip_prob: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();
        if self.batch_size == 0 {
            violations.push("batch_size must be >= 1".to_string());
        }
        // lr = 0 is allowed: it is the null optimizer used by determinism checks
        if self.learning_rate < 0.0 {
            violations.push(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            violations.push(format!("hflip_prob must be in [0, 1], got {}", self.hflip_prob));
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(violations.join("; ")))
        }
    }
}

/// Bias-corrected Adam. Moment state is keyed by parameter name so it
/// survives the value replacement an update performs.
pub struct Adam<S: Scalar> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
    _marker: std::marker::PhantomData<S>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(cfg: &TrainConfig) -> Self {
        Adam {
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            step: 0,
            moments: HashMap::new(),
            _marker: std::marker::PhantomData,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Advance the shared step counter (bias correction uses it). Call once
    /// per optimizer step, before the `update_param` calls of that step.
    pub fn next_step(&mut self) -> u64 {
        self.step += 1;
        self.step
    }

    /// Bias-corrected update of one named parameter at the current step.
    /// `grad = None` means a zero gradient (the moments still decay).
    pub fn update_param(
        &mut self,
        name: &str,
        param: &mut Tensor<S>,
        grad: Option<&Tensor<S>>,
        lr: f64,
    ) -> Result<()> {
        if let Some(g) = grad {
            if g.shape() != param.shape() {
                return Err(Error::Dimension(format!(
                    "gradient shape {} does not match parameter `{name}` {}",
                    g.shape(),
                    param.shape()
                )));
            }
        }
        let t = self.step.max(1);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let bias1 = 1.0 - b1.powi(t as i32);
        let bias2 = 1.0 - b2.powi(t as i32);
        let n = param.numel();
        let (m, v) = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
        let mut data = param.to_vec();
        for i in 0..n {
            let gi = grad.map(|g| g.data()[i].as_f64()).unwrap_or(0.0);
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let mhat = m[i] / bias1;
            let vhat = v[i] / bias2;
            data[i] = S::from_f64(data[i].as_f64() - lr * mhat / (vhat.sqrt() + eps));
        }
        *param = Tensor::from_vec(param.shape().clone(), data)
            .expect("parameter shape is unchanged")
            .with_requires_grad(true);
        Ok(())
    }

    /// One update over the model's trainable parameters. Parameters without a
    /// gradient in `grads` (e.g. paths dropped this step) see a zero gradient;
    /// frozen parameters are left bitwise untouched.
    pub fn step(
        &mut self,
        model: &mut ConvCutModel<S>,
        grads: &crate::tape::GradientMap<S>,
        lr: f64,
    ) -> Result<()> {
        self.next_step();
        let frozen_names: std::collections::BTreeSet<String> = model.frozen_names().clone();
        let mut failure: Option<Error> = None;
        let this = &mut *self;
        model.for_each_param_mut(&mut |name, param| {
            if failure.is_some() || frozen_names.contains(&name) {
                return;
            }
            let grad = grads.get(param).cloned();
            if let Err(e) = this.update_param(&name, param, grad.as_ref(), lr) {
                failure = Some(e);
            }
        });
        failure.map_or(Ok(()), Err)
    }
}

/// Sparse categorical cross entropy: mean over the batch of
/// −log softmax(logits)[label], in the log-sum-exp form.
pub fn sparse_ce_loss<S: Scalar>(
    tape: &mut GradTape<S>,
    logits: &Tensor<S>,
    labels: &[usize],
) -> Result<Tensor<S>> {
    let log_probs = ops::log_softmax(tape, logits)?;
    ops::nll_mean(tape, &log_probs, labels)
}

/// Mirror each batch element along the width axis with probability `prob`.
/// Augmentation runs outside the tape (inputs carry no gradient).
pub fn random_hflip<S: Scalar>(x: &Tensor<S>, prob: f64, rng: &mut Rng) -> Result<Tensor<S>> {
    if x.rank() != 4 {
        return Err(Error::Dimension(format!(
            "random_hflip expects [B,H,W,C], got {}",
            x.shape()
        )));
    }
    let [b, h, w, c] = [x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]];
    if prob == 0.0 {
        return Ok(x.clone());
    }
    let mut data = x.to_vec();
    for bi in 0..b {
        if !rng.bernoulli(prob) {
            continue;
        }
        for y in 0..h {
            for xw in 0..w / 2 {
                let a = ((bi * h + y) * w + xw) * c;
                let bidx = ((bi * h + y) * w + (w - 1 - xw)) * c;
                for ch in 0..c {
                    data.swap(a + ch, bidx + ch);
                }
            }
        }
    }
    Tensor::from_vec(x.shape().clone(), data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Rows = true class, columns = predicted class.
    pub confusion: Vec<Vec<usize>>,
}

/// Argmax with ties going to the lowest index.
pub fn argmax<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[allow(clippy::needless_range_loop)]
pub fn metrics_from_confusion(confusion: Vec<Vec<usize>>) -> Metrics {
    let k = confusion.len();
    let total: usize = confusion.iter().map(|r| r.iter().sum::<usize>()).sum();
    let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
    let accuracy = if total > 0 {
        correct as f64 / total as f64
    } else {
        0.0
    };
    let mut f1_sum = 0.0;
    for class in 0..k {
        let tp = confusion[class][class];
        let support: usize = confusion[class].iter().sum();
        let predicted: usize = (0..k).map(|r| confusion[r][class]).sum();
        // zero-support classes contribute F1 = 0 to the macro average
        if support == 0 || predicted == 0 || tp == 0 {
            continue;
        }
        let precision = tp as f64 / predicted as f64;
        let recall = tp as f64 / support as f64;
        f1_sum += 2.0 * precision * recall / (precision + recall);
    }
    Metrics {
        accuracy,
        macro_f1: if k > 0 { f1_sum / k as f64 } else { 0.0 },
        confusion,
    }
}

/// Accuracy, macro F1 (unweighted over classes), and confusion counts from
/// eval-mode forwards over the whole dataset.
pub fn evaluate<S: Scalar>(
    model: &ConvCutModel<S>,
    dataset: &LabeledDataset<S>,
    batch_size: usize,
) -> Result<Metrics> {
    if dataset.is_empty() {
        return Err(Error::Data("evaluate on empty dataset".into()));
    }
    let k = dataset.num_classes();
    let mut confusion = vec![vec![0usize; k]; k];
    let mut rng = Rng::new(0); // eval mode: never consulted
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, labels) = dataset.batch(chunk)?;
        let mut tape = GradTape::disabled();
        let logits = model.forward(&mut tape, &x, false, &mut rng)?;
        let kk = logits.dims()[1];
        for (row, &label) in labels.iter().enumerate() {
            let pred = argmax(&logits.data()[row * kk..(row + 1) * kk]);
            confusion[label][pred] += 1;
        }
    }
    Ok(metrics_from_confusion(confusion))
}

#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub accuracy: f64,
}

/// One pass over the training set: seeded shuffle, random flips, forward,
/// loss, backward, Adam. The final partial batch is kept.
pub fn train_epoch<S: Scalar>(
    model: &mut ConvCutModel<S>,
    dataset: &LabeledDataset<S>,
    cfg: &TrainConfig,
    opt: &mut Adam<S>,
    rng: &mut Rng,
) -> Result<EpochStats> {
    if dataset.is_empty() {
        return Err(Error::Data("train_epoch on empty dataset".into()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    rng.shuffle(&mut order);
    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    for (batch_index, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let mut step = || -> Result<(f64, usize)> {
            let (x, labels) = dataset.batch(chunk)?;
            let x = random_hflip(&x, cfg.hflip_prob, rng)?;
            let mut tape = GradTape::new();
            let logits = model.forward(&mut tape, &x, true, rng)?;
            let loss = sparse_ce_loss(&mut tape, &logits, &labels)?;
            let kk = logits.dims()[1];
            let mut batch_correct = 0;
            for (row, &label) in labels.iter().enumerate() {
                if argmax(&logits.data()[row * kk..(row + 1) * kk]) == label {
                    batch_correct += 1;
                }
            }
            let grads = tape.backward(&loss)?;
            opt.step(model, &grads, cfg.learning_rate)?;
            Ok((loss.item()?.as_f64(), batch_correct))
        };
        let (loss, batch_correct) = step().map_err(|e| match e {
            Error::Data(msg) => Error::Data(format!("batch {batch_index}: {msg}")),
            Error::Dimension(msg) => Error::Dimension(format!("batch {batch_index}: {msg}")),
            other => other,
        })?;
        loss_sum += loss * chunk.len() as f64;
        correct += batch_correct;
    }
    Ok(EpochStats {
        mean_loss: loss_sum / dataset.len() as f64,
        accuracy: correct as f64 / dataset.len() as f64,
    })
}

/// Full training run. Appends one `epoch,loss,train_acc` CSV line per epoch
/// to `metrics_path` (with a header when the file is new) and returns the
/// per-epoch stats. Deterministic given (seed, data, config).
pub fn fit<S: Scalar>(
    model: &mut ConvCutModel<S>,
    dataset: &LabeledDataset<S>,
    cfg: &TrainConfig,
    metrics_path: Option<&Path>,
    mut on_epoch: impl FnMut(usize, &EpochStats),
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    let mut opt = Adam::new(cfg);
    let mut rng = Rng::new(cfg.seed);
    let mut writer = match metrics_path {
        Some(path) => {
            let new = !path.exists();
            let mut file = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            if new {
                writeln!(file, "epoch,loss,train_acc")
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
            }
            Some((file, path))
        }
        None => None,
    };
    let mut stats = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let s = train_epoch(model, dataset, cfg, &mut opt, &mut rng)?;
        if let Some((file, path)) = writer.as_mut() {
            writeln!(file, "{epoch},{:.6},{:.4}", s.mean_loss, s.accuracy)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        on_epoch(epoch, &s);
        stats.push(s);
    }
    Ok(stats)
}
