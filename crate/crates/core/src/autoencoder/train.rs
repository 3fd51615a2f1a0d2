use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec;
use crate::nn::{mse_loss, AdamConfig, AdamState, Scalar, Scratch, Tensor};

use super::AutoencoderModel;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Number of leading background B-scans the training blocks come from.
    pub n_training_bscans: usize,
    pub epochs_max: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub validation_fraction: f64,
    /// An epoch counts as an improvement, and its weights are kept, only if
    /// it beats the best validation loss so far by this relative margin.
    pub min_rel_improvement: f64,
    /// Cap on training blocks drawn (seeded, without replacement) from the
    /// block lattice of the training B-scans. `None` keeps every block.
    pub max_blocks: Option<usize>,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_training_bscans: 5,
            epochs_max: 100,
            batch_size: 32,
            patience: 5,
            validation_fraction: 0.1,
            min_rel_improvement: 0.02,
            max_blocks: Some(2048),
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation fraction must be in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        if self.patience == 0 || self.batch_size == 0 {
            return Err(Error::Config("patience and batch size must be >= 1".into()));
        }
        if !(self.min_rel_improvement >= 0.0 && self.min_rel_improvement < 1.0) {
            return Err(Error::Config("relative improvement margin must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    /// One-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Validation loss of the kept weights after this epoch.
    pub best_val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochLoss>,
    /// Validation loss of the untrained model.
    pub initial_val_loss: f64,
    /// Epoch whose weights were kept (`None` when no epoch ran).
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    pub n_train: usize,
    pub n_val: usize,
}

impl TrainReport {
    pub fn best_val_loss(&self) -> Option<f64> {
        self.history.last().map(|e| e.best_val_loss)
    }

    /// `epoch,train_loss,val_loss` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for e in &self.history {
            s.push_str(&format!("{},{:?},{:?}\n", e.epoch, e.train_loss, e.val_loss));
        }
        s
    }
}

fn sample_loss_and_grads<T: Scalar>(
    model: &AutoencoderModel<T>,
    block: &Tensor<T>,
    scratch: &mut Scratch<T>,
) -> Result<(f64, Vec<Tensor<T>>)> {
    let trace = model.forward_trace(block, scratch)?;
    let (loss, grad) = mse_loss(trace.reconstruction(), block)?;
    let grads = model.backward(&trace, grad, scratch)?;
    Ok((loss, grads))
}

fn mean_loss<T: Scalar>(model: &AutoencoderModel<T>, blocks: &[Tensor<T>], idx: &[usize]) -> Result<f64> {
    let losses = exec::map_indexed(idx.len(), Scratch::new, |s, j| -> Result<f64> {
        let block = &blocks[idx[j]];
        let h = model.encode_with(block, s)?;
        let y = model.decode_with(&h, s)?;
        Ok(mse_loss(&y, block)?.0)
    });
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / idx.len().max(1) as f64)
}

/// Minimizes the mean reconstruction MSE over `blocks` with Adam.
///
/// A seeded shuffle holds out the last `validation_fraction` of the blocks
/// for early stopping. Training stops after `patience` epochs without an
/// improvement and the weights of the last improving epoch are kept.
/// Per-batch gradients are computed block by block (possibly in parallel)
/// and summed in block order, so results do not depend on the thread count.
pub fn train<T: Scalar>(
    model: &mut AutoencoderModel<T>,
    blocks: &[Tensor<T>],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if blocks.is_empty() {
        return Err(Error::Data("no training blocks".into()));
    }
    let input = model.spec.input_shape();
    if let Some(b) = blocks.iter().find(|b| b.shape() != input) {
        return Err(Error::shape(format!(
            "training block shape {:?} does not match model input {input:?}",
            b.shape()
        )));
    }
    if cfg.epochs_max == 0 {
        return Ok(TrainReport {
            history: Vec::new(),
            initial_val_loss: f64::NAN,
            best_epoch: None,
            stopped_early: false,
            n_train: 0,
            n_val: 0,
        });
    }
    if blocks.len() < 2 {
        return Err(Error::Data("need at least two blocks to hold out validation data".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..blocks.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((blocks.len() as f64 * cfg.validation_fraction).round() as usize).clamp(1, blocks.len() - 1);
    let val_idx = order.split_off(blocks.len() - n_val);
    let mut train_idx = order;

    let mut adam = AdamState::new(cfg.adam);
    let initial_val_loss = mean_loss(model, blocks, &val_idx)?;
    let mut best = f64::INFINITY;
    let mut best_params = model.clone();
    let mut best_epoch = None;
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs_max {
        train_idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in train_idx.chunks(cfg.batch_size) {
            let results = exec::map_indexed(batch.len(), Scratch::new, |s, j| {
                sample_loss_and_grads(model, &blocks[batch[j]], s)
            });
            let mut sum: Option<Vec<Tensor<T>>> = None;
            for r in results {
                let (loss, grads) = r?;
                epoch_loss += loss;
                match sum.as_mut() {
                    None => sum = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            a.add_assign(g)?;
                        }
                    }
                }
            }
            let mut grads = sum.expect("batches are non-empty");
            let inv = T::from_f64(1.0 / batch.len() as f64);
            for g in &mut grads {
                g.scale(inv);
            }
            let grad_refs: Vec<&Tensor<T>> = grads.iter().collect();
            adam.step(&mut model.parameters_mut(), &grad_refs)?;
        }
        let train_loss = epoch_loss / train_idx.len() as f64;
        let val_loss = mean_loss(model, blocks, &val_idx)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Data(format!("training diverged at epoch {epoch}")));
        }
        if val_loss < best * (1.0 - cfg.min_rel_improvement) {
            best = val_loss;
            best_params = model.clone();
            best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
        }
        history.push(EpochLoss {
            epoch,
            train_loss,
            val_loss,
            best_val_loss: best,
        });
        if since_best >= cfg.patience {
            stopped_early = true;
            break;
        }
    }
    *model = best_params;
    Ok(TrainReport {
        history,
        initial_val_loss,
        best_epoch,
        stopped_early,
        n_train: train_idx.len(),
        n_val,
    })
}
