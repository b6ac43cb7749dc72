use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::softmax_crossentropy;
use super::{Adam, Model, Tensor};
use crate::{Error, Result};

/// One labelled sample borrowed from a dataset.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub input: &'a [f32],
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a new best validation loss before stopping.
    pub early_stop_patience: usize,
    pub lr_factor: f64,
    /// Stalled epochs before the learning rate is multiplied by `lr_factor`.
    pub lr_patience: usize,
    pub seed: u64,
    /// Stop as soon as validation accuracy reaches this value, keeping the current weights.
    pub target_val_accuracy: Option<f64>,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            max_epochs: 60,
            early_stop_patience: 7,
            lr_factor: 0.5,
            lr_patience: 3,
            seed: 0,
            target_val_accuracy: None,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !(self.learning_rate > 0.0) || !open_unit(self.beta1) || !open_unit(self.beta2) || !(self.eps > 0.0) {
            return Err(Error::invalid("learning rate, betas and epsilon out of range"));
        }
        if self.batch_size < 2 || self.max_epochs == 0 {
            return Err(Error::invalid("batch size must be at least 2 and max epochs positive"));
        }
        if self.early_stop_patience == 0 || self.lr_patience == 0 || !open_unit(self.lr_factor) {
            return Err(Error::invalid("patience must be at least 1 and lr factor in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
    TargetReached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub kept_epoch: usize,
    pub stop: StopReason,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_acc,lr\n");
        for r in &self.epochs {
            let _ = writeln!(out, "{},{:.6},{:.6},{:.6},{:e}", r.epoch, r.train_loss, r.val_loss, r.val_accuracy, r.lr);
        }
        out
    }

    pub fn kept(&self) -> &EpochRecord {
        &self.epochs[self.kept_epoch - 1]
    }
}

/// Copies a batch of examples into an `[N, input_shape..]` tensor.
pub fn stack_inputs(examples: &[&Example<'_>], input_shape: &[usize]) -> Result<Tensor<f32>> {
    let per: usize = input_shape.iter().product();
    let mut data = Vec::with_capacity(per * examples.len());
    for e in examples {
        if e.input.len() != per {
            return Err(Error::invalid(format!("sample has {} values, model expects {per}", e.input.len())));
        }
        data.extend_from_slice(e.input);
    }
    let mut shape = vec![examples.len()];
    shape.extend_from_slice(input_shape);
    Tensor::from_vec(&shape, data)
}

/// Mean cross-entropy and accuracy in inference mode.
pub fn evaluate_loss(model: &Model<f32>, examples: &[Example<'_>], batch_size: usize) -> Result<(f64, f64)> {
    if examples.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty set"));
    }
    let (mut loss, mut correct) = (0.0f64, 0usize);
    for chunk in examples.chunks(batch_size.max(1)) {
        let refs: Vec<_> = chunk.iter().collect();
        let x = stack_inputs(&refs, model.input_shape())?;
        let logits = model.infer(&x)?;
        let labels: Vec<usize> = chunk.iter().map(|e| e.label).collect();
        let (l, _) = softmax_crossentropy(&logits, &labels)?;
        loss += l as f64 * chunk.len() as f64;
        let k = model.num_classes();
        correct += logits
            .data()
            .chunks_exact(k)
            .zip(&labels)
            .filter(|(row, &y)| super::model::argmax(row) == y)
            .count();
    }
    let n = examples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Batch boundaries; a trailing batch of one sample is merged into the previous one
/// because training-mode batch norm needs at least two.
fn batches(n: usize, size: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..n).step_by(size).map(|s| (s, (s + size).min(n))).collect();
    if out.len() > 1 && out.last().is_some_and(|(s, e)| e - s == 1) {
        let (_, e) = out.pop().unwrap();
        out.last_mut().unwrap().1 = e;
    }
    out
}

/// Mini-batch Adam with LR reduction on plateau and early stopping on validation loss.
/// Unless a target accuracy stops training, the best-validation-loss weights are restored.
pub fn train(
    model: &mut Model<f32>,
    train_set: &[Example<'_>],
    val_set: &[Example<'_>],
    schedule: &TrainSchedule,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainHistory> {
    schedule.validate()?;
    if train_set.len() < 2 || val_set.is_empty() {
        return Err(Error::invalid("training needs at least 2 training and 1 validation sample"));
    }
    if let Some(e) = train_set.iter().chain(val_set).find(|e| e.label >= model.num_classes()) {
        return Err(Error::invalid(format!("label {} out of range", e.label)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut adam = Adam::new(schedule.learning_rate, schedule.beta1, schedule.beta2, schedule.eps);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, Model<f32>)> = None;
    let (mut since_best, mut since_lr) = (0, 0);
    let mut stop = StopReason::MaxEpochs;

    for epoch in 1..=schedule.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for (s, e) in batches(order.len(), schedule.batch_size) {
            let batch: Vec<&Example> = order[s..e].iter().map(|&i| &train_set[i]).collect();
            let x = stack_inputs(&batch, model.input_shape())?;
            let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
            model.zero_grad();
            let logits = model.forward(x)?;
            let (loss, grad) = softmax_crossentropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::invalid(format!("non-finite training loss in epoch {epoch}")));
            }
            let k = model.num_classes();
            correct += logits
                .data()
                .chunks_exact(k)
                .zip(&labels)
                .filter(|(row, &y)| super::model::argmax(row) == y)
                .count();
            loss_sum += loss as f64 * labels.len() as f64;
            model.backward(grad)?;
            adam.step(model);
        }
        let (val_loss, val_accuracy) = evaluate_loss(model, val_set, 64)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: correct as f64 / train_set.len() as f64,
            val_loss,
            val_accuracy,
            lr: adam.lr,
        };
        log::info!(
            "epoch {epoch}: train loss {:.4} acc {:.3}, val loss {val_loss:.4} acc {val_accuracy:.3}, lr {:.1e} ({:.1}s)",
            record.train_loss,
            record.train_accuracy,
            adam.lr,
            started.elapsed().as_secs_f64()
        );
        on_epoch(&record);
        epochs.push(record);

        if schedule.target_val_accuracy.is_some_and(|t| val_accuracy >= t) {
            return Ok(TrainHistory {
                epochs,
                kept_epoch: epoch,
                stop: StopReason::TargetReached,
            });
        }
        if best.as_ref().is_none_or(|(l, _, _)| val_loss < *l) {
            best = Some((val_loss, epoch, model.clone()));
            since_best = 0;
            since_lr = 0;
        } else {
            since_best += 1;
            since_lr += 1;
            if since_best >= schedule.early_stop_patience {
                stop = StopReason::EarlyStop;
                break;
            }
            if since_lr >= schedule.lr_patience {
                adam.lr *= schedule.lr_factor;
                since_lr = 0;
            }
        }
    }
    let (_, kept_epoch, snapshot) = best.expect("at least one epoch ran");
    *model = snapshot;
    Ok(TrainHistory { epochs, kept_epoch, stop })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn separable(n: usize) -> Vec<(Vec<f32>, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        (0..n)
            .map(|i| {
                let label = i % 4;
                let mut x: Vec<f32> = (0..8).map(|_| 0.1 * rng.sample::<f32, _>(StandardNormal)).collect();
                x[label] += 2.0;
                (x, label)
            })
            .collect()
    }

    fn mlp(seed: u64) -> Model<f32> {
        let specs = [
            LayerSpec::Dense { d_in: 8, d_out: 16 },
            LayerSpec::Relu,
            LayerSpec::Dense { d_in: 16, d_out: 4 },
        ];
        Model::from_specs("mlp", &[8], &specs, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn fits_separable_toy_set() {
        let data = separable(20);
        let ex: Vec<Example> = data.iter().map(|(x, y)| Example { input: x, label: *y }).collect();
        let mut model = mlp(1);
        let schedule = TrainSchedule {
            learning_rate: 0.01,
            batch_size: 4,
            max_epochs: 50,
            early_stop_patience: 50,
            ..Default::default()
        };
        train(&mut model, &ex, &ex, &schedule, |_| {}).unwrap();
        let (_, acc) = evaluate_loss(&model, &ex, 8).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn same_seed_same_first_epoch() {
        let data = separable(24);
        let ex: Vec<Example> = data.iter().map(|(x, y)| Example { input: x, label: *y }).collect();
        let schedule = TrainSchedule {
            max_epochs: 1,
            batch_size: 5,
            ..Default::default()
        };
        let run = || {
            let mut m = mlp(3);
            train(&mut m, &ex, &ex, &schedule, |_| {}).unwrap().epochs[0].train_loss
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn empty_sets_are_rejected() {
        let mut m = mlp(0);
        let x = vec![0.0f32; 8];
        let one = [Example { input: &x, label: 0 }];
        assert!(train(&mut m, &[], &one, &TrainSchedule::default(), |_| {}).is_err());
        assert!(train(&mut m, &[one[0], one[0]], &[], &TrainSchedule::default(), |_| {}).is_err());
    }

    #[test]
    fn trailing_singleton_batch_is_merged() {
        assert_eq!(batches(5, 2), vec![(0, 2), (2, 5)]);
        assert_eq!(batches(4, 2), vec![(0, 2), (2, 4)]);
    }

    #[test]
    fn history_csv_has_header() {
        let h = TrainHistory {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 1.0,
                train_accuracy: 0.5,
                val_loss: 0.9,
                val_accuracy: 0.6,
                lr: 1e-3,
            }],
            kept_epoch: 1,
            stop: StopReason::MaxEpochs,
        };
        assert_eq!(h.to_csv(), "epoch,train_loss,val_loss,val_acc,lr\n1,1.000000,0.900000,0.600000,1e-3\n");
    }
}
