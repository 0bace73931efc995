//! Classification and timing metrics over a dataset split, plus the report
//! files and figures built from them.

mod figures;
mod metrics;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::encoders::ImageTensor;
use crate::error::{Error, Result};
use crate::nn::softmax;
use crate::par::Exec;
use crate::synthgen::{Manifest, Sample, Split, StageLabel, NEUTRAL_PROMPT};
use crate::training::{denormalize_time, load_rgb, History, TimeScale};

pub use figures::{render_report, select_qualitative, QUALITATIVE_COUNT};
pub use metrics::{accuracy, confusion_matrix, per_stage_mae, total, trace, StageError};

/// Model output for one image, with the time mapped back to hours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub stage: StageLabel,
    pub probabilities: Vec<f64>,
    pub t_hat: f64,
    pub hours: f64,
}

/// Run the checkpoint on one decoded image, fused with `prompt` (the neutral
/// prompt when `None`).
pub fn predict_image(ckpt: &Checkpoint, img: &image::RgbImage, prompt: Option<&str>) -> Result<Prediction> {
    let tensor = ImageTensor::from_rgb(img);
    predict_tensor(ckpt, &tensor, prompt.unwrap_or(NEUTRAL_PROMPT))
}

fn predict_tensor(ckpt: &Checkpoint, img: &ImageTensor, prompt: &str) -> Result<Prediction> {
    let out = ckpt.model.predict(img, prompt)?;
    let probabilities = softmax(&out.logits);
    let argmax = probabilities
        .iter()
        .enumerate()
        .fold(0, |best, (i, &p)| if p > probabilities[best] { i } else { best });
    Ok(Prediction {
        stage: StageLabel::from_index(argmax)?,
        probabilities,
        t_hat: out.t_hat,
        hours: denormalize_time(out.t_hat, &ckpt.time_scale)?,
    })
}

/// One evaluated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub image_path: String,
    pub true_hours: f64,
    pub pred_hours: f64,
    pub true_stage: StageLabel,
    pub pred_stage: StageLabel,
}

/// A sample that could not be evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub image_path: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub prompt: String,
    pub time_scale: TimeScale,
    /// Rows are true stages, columns predicted stages.
    pub confusion: Vec<Vec<u64>>,
    pub accuracy: f64,
    /// Indexed by true stage.
    pub per_stage_mae: Vec<StageError>,
    pub scatter: Vec<ScatterPoint>,
    pub n_samples: usize,
    pub excluded: Vec<Exclusion>,
}

impl EvalReport {
    /// Assemble the report from per-sample outcomes. Failed samples are
    /// excluded and recorded.
    pub fn from_outcomes(
        split: Split,
        prompt: &str,
        time_scale: TimeScale,
        outcomes: Vec<(&Sample, Result<Prediction>)>,
    ) -> Result<Self> {
        let mut scatter = Vec::new();
        let mut excluded = Vec::new();
        for (s, outcome) in outcomes {
            match outcome {
                Ok(p) => scatter.push(ScatterPoint {
                    image_path: s.image_path.clone(),
                    true_hours: s.timestamp_hours,
                    pred_hours: p.hours,
                    true_stage: s.label,
                    pred_stage: p.stage,
                }),
                Err(e) => {
                    log::warn!("excluding {}: {e}", s.image_path);
                    excluded.push(Exclusion {
                        image_path: s.image_path.clone(),
                        error: e.to_string(),
                    });
                }
            }
        }
        if scatter.is_empty() {
            return Err(Error::Data(format!(
                "no sample of the {split} split could be evaluated ({} excluded)",
                excluded.len()
            )));
        }
        let truth: Vec<usize> = scatter.iter().map(|p| p.true_stage.index()).collect();
        let pred: Vec<usize> = scatter.iter().map(|p| p.pred_stage.index()).collect();
        let confusion = confusion_matrix(&pred, &truth, StageLabel::COUNT)?;
        let per_stage_mae = per_stage_mae(
            &scatter.iter().map(|p| p.pred_hours).collect::<Vec<_>>(),
            &scatter.iter().map(|p| p.true_hours).collect::<Vec<_>>(),
            &truth,
            StageLabel::COUNT,
        )?;
        let report = Self {
            split,
            prompt: prompt.to_string(),
            time_scale,
            accuracy: accuracy(&confusion)?,
            confusion,
            per_stage_mae,
            n_samples: scatter.len(),
            scatter,
            excluded,
        };
        report.check_invariants()?;
        Ok(report)
    }

    pub fn check_invariants(&self) -> Result<()> {
        let n = self.n_samples as u64;
        if total(&self.confusion) != n {
            return Err(Error::Invariant(format!(
                "confusion entries sum to {}, expected {n}",
                total(&self.confusion)
            )));
        }
        if self.accuracy != trace(&self.confusion) as f64 / n as f64 {
            return Err(Error::Invariant("accuracy differs from trace / n".into()));
        }
        let counted: usize = self.per_stage_mae.iter().map(|s| s.count).sum();
        if counted != self.n_samples {
            return Err(Error::Invariant(format!(
                "per-stage counts sum to {counted}, expected {}",
                self.n_samples
            )));
        }
        for (i, row) in self.confusion.iter().enumerate() {
            let row_sum: u64 = row.iter().sum();
            if row_sum != self.per_stage_mae[i].count as u64 {
                return Err(Error::Invariant(format!(
                    "confusion row {i} sums to {row_sum}, stage count is {}",
                    self.per_stage_mae[i].count
                )));
            }
        }
        if self.scatter.len() != self.n_samples {
            return Err(Error::Invariant("scatter length differs from n_samples".into()));
        }
        let ts = &self.time_scale;
        if let Some(p) = self
            .scatter
            .iter()
            .find(|p| !(ts.t_min..=ts.t_max).contains(&p.pred_hours))
        {
            return Err(Error::Invariant(format!(
                "prediction {} h for {} outside [{}, {}]",
                p.pred_hours, p.image_path, ts.t_min, ts.t_max
            )));
        }
        Ok(())
    }
}

/// Evaluate `ckpt` on one split of the dataset in `data_dir`. Images that
/// cannot be read are excluded and listed in the report.
pub fn evaluate(
    ckpt: &Checkpoint,
    manifest: &Manifest,
    data_dir: &Path,
    split: Split,
    prompt: Option<&str>,
    exec: Exec,
) -> Result<EvalReport> {
    let samples = manifest.split(split);
    if samples.is_empty() {
        return Err(Error::Data(format!("the {split} split is empty")));
    }
    let prompt = prompt.unwrap_or(NEUTRAL_PROMPT);
    // Tokenize once up front so a bad prompt fails the whole run rather than every sample.
    ckpt.model.tokenize(prompt)?;
    let predictions = exec.map_slice(&samples, |s| {
        let img = load_rgb(&data_dir.join(&s.image_path))?;
        predict_tensor(ckpt, &ImageTensor::from_rgb(&img), prompt)
    });
    EvalReport::from_outcomes(
        split,
        prompt,
        ckpt.time_scale,
        samples.into_iter().zip(predictions).collect(),
    )
}

/// Read the training history next to a checkpoint, if there is one.
pub fn history_near(checkpoint: &Path) -> Option<History> {
    let path = checkpoint.parent()?.join(crate::training::HISTORY_FILE);
    if !path.exists() {
        return None;
    }
    History::read(&path)
        .inspect_err(|e| log::warn!("ignoring unreadable history {}: {e}", path.display()))
        .ok()
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(i: usize, label: StageLabel, t: f64) -> Sample {
        Sample {
            image_path: format!("images/{i:05}.png"),
            label,
            timestamp_hours: t,
            description: String::new(),
            split: Split::Test,
        }
    }

    #[test]
    fn oracle_predictions_give_a_perfect_report() {
        let samples: Vec<Sample> = (0..30)
            .map(|i| sample(i, StageLabel::ALL[i % 3], 10.0 + 20.0 * i as f64))
            .collect();
        let scale = TimeScale::new(0.0, 720.0).unwrap();
        let outcomes = samples
            .iter()
            .map(|s| {
                let mut probabilities = vec![0.0; 3];
                probabilities[s.label.index()] = 1.0;
                let p = Prediction {
                    stage: s.label,
                    probabilities,
                    t_hat: s.timestamp_hours / 720.0,
                    hours: s.timestamp_hours,
                };
                (s, Ok(p))
            })
            .collect();
        let r = EvalReport::from_outcomes(Split::Test, NEUTRAL_PROMPT, scale, outcomes).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!(r.per_stage_mae.iter().all(|s| s.mean == Some(0.0) && s.count == 10));
    }

    #[test]
    fn failures_are_excluded_and_counted() {
        let samples: Vec<Sample> = (0..4).map(|i| sample(i, StageLabel::Hyphae, 300.0)).collect();
        let scale = TimeScale::new(0.0, 720.0).unwrap();
        let outcomes = samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let r = if i == 2 {
                    Err(Error::Data("missing".into()))
                } else {
                    Ok(Prediction {
                        stage: StageLabel::Spore,
                        probabilities: vec![1.0, 0.0, 0.0],
                        t_hat: 0.5,
                        hours: 360.0,
                    })
                };
                (s, r)
            })
            .collect();
        let r = EvalReport::from_outcomes(Split::Test, NEUTRAL_PROMPT, scale, outcomes).unwrap();
        assert_eq!(r.n_samples, 3);
        assert_eq!(r.excluded.len(), 1);
        assert_eq!(r.accuracy, 0.0);
        assert_eq!(r.per_stage_mae[1].mean, Some(60.0));
    }

    #[test]
    fn tampered_report_fails_invariants() {
        let s = sample(0, StageLabel::Spore, 5.0);
        let p = Prediction {
            stage: StageLabel::Spore,
            probabilities: vec![1.0, 0.0, 0.0],
            t_hat: 0.0,
            hours: 5.0,
        };
        let scale = TimeScale::new(0.0, 720.0).unwrap();
        let mut r = EvalReport::from_outcomes(Split::Val, "x", scale, vec![(&s, Ok(p))]).unwrap();
        r.accuracy = 0.5;
        assert!(matches!(r.check_invariants(), Err(Error::Invariant(_))));
    }
}
