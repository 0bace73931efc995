//! Time normalization, the multitask loss, and the optimization loop.

mod history;
mod loss;
mod optim;
mod time_scale;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::encoders::ImageTensor;
use crate::error::{Error, Result};
use crate::heads::Mode;
use crate::model::Model;
use crate::nn::{softmax, Grads};
use crate::par::Exec;
use crate::synthgen::{derive_seed, Manifest, Sample, Split, StageLabel, NEUTRAL_PROMPT};

pub use history::{EpochRecord, History, HISTORY_FILE};
pub use loss::{classification_loss, cross_entropy, time_loss, total_loss, LossBreakdown};
pub use optim::{Optimizer, OptimizerKind};
pub use time_scale::{denormalize_time, normalize_time, TimeScale};

/// Samples per gradient work unit; fixed so the reduction order never depends
/// on the thread count.
pub const GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Probability of swapping a training sample's description for the
    /// neutral prompt, so the heads also learn from the image alone.
    pub neutral_prompt_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-4,
            alpha: 1.0,
            beta: 1.0,
            seed: 7,
            optimizer: OptimizerKind::Adam,
            neutral_prompt_rate: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("train.epochs and train.batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("train.learning_rate must be positive".into()));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) || !(self.alpha + self.beta > 0.0) {
            return Err(Error::Config(
                "train.alpha and train.beta must be nonnegative with a positive sum".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.neutral_prompt_rate) {
            return Err(Error::Config("train.neutral_prompt_rate must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// A manifest sample with its image decoded and its description tokenized.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub image_path: String,
    pub image: ImageTensor,
    pub tokens: Vec<u32>,
    pub label: StageLabel,
    pub timestamp_hours: f64,
    pub t_norm: f64,
}

pub fn load_rgb(path: &Path) -> Result<image::RgbImage> {
    if !path.exists() {
        return Err(Error::Data(format!("missing image {}", path.display())));
    }
    image::open(path)
        .map(|img| img.to_rgb8())
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Decode and tokenize samples; timestamps are normalized with `scale`.
pub fn prepare_samples(
    samples: &[&Sample],
    data_dir: &Path,
    model: &Model,
    scale: &TimeScale,
    exec: Exec,
) -> Result<Vec<PreparedSample>> {
    exec.map_slice(samples, |s| {
        let img = load_rgb(&data_dir.join(&s.image_path))?;
        Ok(PreparedSample {
            image_path: s.image_path.clone(),
            image: ImageTensor::from_rgb(&img),
            tokens: model.tokenize(&s.description)?,
            label: s.label,
            timestamp_hours: s.timestamp_hours,
            t_norm: normalize_time(s.timestamp_hours, scale)?,
        })
    })
    .into_iter()
    .collect()
}

/// One sample scheduled into a batch, with the prompt it is fused with.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub sample: &'a PreparedSample,
    pub tokens: &'a [u32],
    pub mode: Mode,
}

/// Summed per-sample losses over a batch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BatchStats {
    pub ce_sum: f64,
    pub mse_sum: f64,
    pub n: usize,
}

impl BatchStats {
    fn add(&mut self, other: &BatchStats) {
        self.ce_sum += other.ce_sum;
        self.mse_sum += other.mse_sum;
        self.n += other.n;
    }

    pub fn breakdown(&self, alpha: f64, beta: f64) -> Result<LossBreakdown> {
        total_loss(self.ce_sum / self.n as f64, self.mse_sum / self.n as f64, alpha, beta)
    }
}

/// Loss and gradient of `alpha * CE + beta * MSE`, both averaged over the batch.
pub fn batch_gradients(model: &Model, items: &[BatchItem], alpha: f64, beta: f64, exec: Exec) -> Result<(BatchStats, Grads)> {
    let inv_b = 1.0 / items.len() as f64;
    let parts: Vec<Result<(BatchStats, Grads)>> = exec.map_chunks(items, GRAD_CHUNK, |chunk| {
        let mut g = model.params.zero_grads();
        let mut stats = BatchStats::default();
        for item in chunk {
            let (out, cache) = model.forward(&item.sample.image, item.tokens, item.mode)?;
            let y = item.sample.label.index();
            stats.ce_sum += cross_entropy(&out.logits, y)?;
            let err = out.t_hat - item.sample.t_norm;
            stats.mse_sum += err * err;
            stats.n += 1;
            let mut dlogits = softmax(&out.logits);
            dlogits[y] -= 1.0;
            dlogits.iter_mut().for_each(|v| *v *= alpha * inv_b);
            let dt_hat = beta * 2.0 * err * inv_b;
            model.backward(&item.sample.image, &cache, &dlogits, dt_hat, &mut g);
        }
        Ok((stats, g))
    });
    let mut total = BatchStats::default();
    let mut grads = model.params.zero_grads();
    for part in parts {
        let (s, g) = part?;
        total.add(&s);
        grads.add_assign(&g);
    }
    Ok((total, grads))
}

/// Evaluation-mode loss over `samples`, fusing every image with `prompt`
/// tokens when given, otherwise with each sample's own description.
pub fn split_loss(
    model: &Model,
    samples: &[PreparedSample],
    prompt: Option<&[u32]>,
    alpha: f64,
    beta: f64,
    exec: Exec,
) -> Result<LossBreakdown> {
    if samples.is_empty() {
        return Err(Error::Data("cannot compute loss on an empty split".into()));
    }
    let outs = exec
        .map_slice(samples, |s| {
            model
                .forward(&s.image, prompt.unwrap_or(&s.tokens), Mode::Eval)
                .map(|(o, _)| o)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let logits: Vec<Vec<f64>> = outs.iter().map(|o| o.logits.clone()).collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.label.index()).collect();
    let t_hat: Vec<f64> = outs.iter().map(|o| o.t_hat).collect();
    let t: Vec<f64> = samples.iter().map(|s| s.t_norm).collect();
    total_loss(
        classification_loss(&logits, &labels)?,
        time_loss(&t_hat, &t)?,
        alpha,
        beta,
    )
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub history: History,
    pub final_checkpoint: Checkpoint,
    /// Checkpoint with the lowest validation `l_total`.
    pub best_checkpoint: Checkpoint,
}

/// Train `model` on the manifest's train split, validating on its val split.
/// The time scale is fitted on training timestamps only.
pub fn fit(manifest: &Manifest, data_dir: &Path, model: &mut Model, cfg: &TrainConfig, exec: Exec) -> Result<FitOutput> {
    let train = manifest.split(Split::Train);
    let val = manifest.split(Split::Val);
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data(format!(
            "training needs nonempty train and val splits (got {} and {})",
            train.len(),
            val.len()
        )));
    }
    let scale = TimeScale::from_timestamps(train.iter().map(|s| s.timestamp_hours))
        .map_err(|e| Error::Data(format!("cannot derive time scale from the train split: {e}")))?;
    let train = prepare_samples(&train, data_dir, model, &scale, exec)?;
    let val = prepare_samples(&val, data_dir, model, &scale, exec)?;
    fit_prepared(model, &train, &val, scale, cfg, exec)
}

pub fn fit_prepared(
    model: &mut Model,
    train: &[PreparedSample],
    val: &[PreparedSample],
    scale: TimeScale,
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<FitOutput> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("empty train or val split".into()));
    }
    let neutral = model.tokenize(NEUTRAL_PROMPT)?;
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, model.params.len());
    let mut history = History::default();
    let mut best: Option<Checkpoint> = None;

    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 100, epoch as u64));
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let use_neutral: Vec<bool> = (0..train.len())
            .map(|_| rng.gen_bool(cfg.neutral_prompt_rate))
            .collect();

        let mut epoch_stats = BatchStats::default();
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let items: Vec<BatchItem> = batch
                .iter()
                .enumerate()
                .map(|(k, &i)| BatchItem {
                    sample: &train[i],
                    tokens: if use_neutral[k + batch_idx * cfg.batch_size] {
                        &neutral
                    } else {
                        &train[i].tokens
                    },
                    mode: Mode::Train {
                        dropout_seed: derive_seed(cfg.seed, 200 + epoch as u64, i as u64),
                    },
                })
                .collect();
            let (stats, grads) = batch_gradients(model, &items, cfg.alpha, cfg.beta, exec)?;
            let step_loss = stats.breakdown(cfg.alpha, cfg.beta)?;
            if !step_loss.l_total.is_finite() || !grads.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: batch_idx,
                    detail: format!(
                        "l_class = {}, l_time = {}, finite gradient = {}",
                        step_loss.l_class,
                        step_loss.l_time,
                        grads.is_finite()
                    ),
                });
            }
            optimizer.step(&mut model.params, &grads);
            epoch_stats.add(&stats);
        }

        let train_loss = epoch_stats.breakdown(cfg.alpha, cfg.beta)?;
        let val_loss = split_loss(model, val, Some(&neutral), cfg.alpha, cfg.beta, exec)?;
        if !val_loss.l_total.is_finite() {
            return Err(Error::NonFinite {
                epoch,
                batch: 0,
                detail: "validation loss".into(),
            });
        }
        log::info!(
            "epoch {epoch:>3}: train {:.4} (cls {:.4}, time {:.4}) | val {:.4} (cls {:.4}, time {:.4})",
            train_loss.l_total,
            train_loss.l_class,
            train_loss.l_time,
            val_loss.l_total,
            val_loss.l_class,
            val_loss.l_time
        );
        history.epochs.push(EpochRecord {
            epoch,
            train: train_loss,
            val: val_loss,
        });
        if best.as_ref().is_none_or(|b| val_loss.l_total < b.val_loss.unwrap_or(f64::INFINITY)) {
            best = Some(Checkpoint {
                model: model.clone(),
                time_scale: scale,
                epoch,
                val_loss: Some(val_loss.l_total),
            });
        }
    }

    let last_val = history.epochs.last().map(|r| r.val.l_total);
    Ok(FitOutput {
        history,
        final_checkpoint: Checkpoint {
            model: model.clone(),
            time_scale: scale,
            epoch: cfg.epochs,
            val_loss: last_val,
        },
        best_checkpoint: best.expect("at least one epoch"),
    })
}
