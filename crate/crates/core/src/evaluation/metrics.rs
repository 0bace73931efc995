use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `C x C` counts with rows indexed by the true class and columns by the
/// predicted class.
pub fn confusion_matrix(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<Vec<Vec<u64>>> {
    if pred.len() != truth.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Input("confusion matrix of an empty sample set".into()));
    }
    let mut m = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= n_classes || t >= n_classes {
            return Err(Error::Input(format!(
                "class index {} out of range for {n_classes} classes",
                p.max(t)
            )));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

pub fn trace(confusion: &[Vec<u64>]) -> u64 {
    confusion.iter().enumerate().map(|(i, row)| row[i]).sum()
}

pub fn total(confusion: &[Vec<u64>]) -> u64 {
    confusion.iter().flatten().sum()
}

/// `trace / total`; an empty matrix has no defined accuracy.
pub fn accuracy(confusion: &[Vec<u64>]) -> Result<f64> {
    let n = total(confusion);
    if n == 0 {
        return Err(Error::Input("accuracy of an empty confusion matrix".into()));
    }
    Ok(trace(confusion) as f64 / n as f64)
}

/// Absolute-error summary for one true stage. `mean` and `std` are `None`
/// when the stage has no samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageError {
    pub mean: Option<f64>,
    /// Population standard deviation.
    pub std: Option<f64>,
    pub count: usize,
}

/// Mean and population standard deviation of `|pred - true|` grouped by true
/// stage, one entry per class.
pub fn per_stage_mae(
    pred_hours: &[f64],
    true_hours: &[f64],
    true_stage: &[usize],
    n_classes: usize,
) -> Result<Vec<StageError>> {
    if pred_hours.len() != true_hours.len() || pred_hours.len() != true_stage.len() {
        return Err(Error::Input(format!(
            "length mismatch: {} predictions, {} targets, {} stages",
            pred_hours.len(),
            true_hours.len(),
            true_stage.len()
        )));
    }
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); n_classes];
    for ((&p, &t), &s) in pred_hours.iter().zip(true_hours).zip(true_stage) {
        if !p.is_finite() || !t.is_finite() {
            return Err(Error::Input(format!("non-finite hours ({p}, {t})")));
        }
        if s >= n_classes {
            return Err(Error::Input(format!("stage index {s} out of range")));
        }
        groups[s].push((p - t).abs());
    }
    Ok(groups
        .iter()
        .map(|errs| {
            if errs.is_empty() {
                return StageError {
                    mean: None,
                    std: None,
                    count: 0,
                };
            }
            let n = errs.len() as f64;
            let mean = errs.iter().sum::<f64>() / n;
            let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
            StageError {
                mean: Some(mean),
                std: Some(var.sqrt()),
                count: errs.len(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_is_diagonal() {
        let y = [0, 1, 2, 2, 1, 0, 0];
        let m = confusion_matrix(&y, &y, 3).unwrap();
        assert_eq!(trace(&m), 7);
        assert_eq!(accuracy(&m).unwrap(), 1.0);
        assert_eq!(m[0][0], 3);
    }

    #[test]
    fn rows_are_truth() {
        let m = confusion_matrix(&[1], &[0], 3).unwrap();
        assert_eq!(m[0][1], 1);
        assert_eq!(m[1][0], 0);
    }

    #[test]
    fn bad_inputs() {
        assert!(confusion_matrix(&[], &[], 3).is_err());
        assert!(confusion_matrix(&[0, 1], &[0], 3).is_err());
        assert!(confusion_matrix(&[3], &[0], 3).is_err());
        assert!(accuracy(&[vec![0, 0], vec![0, 0]]).is_err());
    }

    #[test]
    fn two_point_mae() {
        let r = per_stage_mae(&[100.0, 500.0], &[0.0, 200.0], &[1, 1], 3).unwrap();
        assert_eq!(r[1].mean, Some(200.0));
        assert_eq!(r[1].std, Some(100.0));
        assert_eq!(r[1].count, 2);
        assert_eq!(r[0], StageError { mean: None, std: None, count: 0 });
    }

    #[test]
    fn zero_error() {
        let h = [1.0, 2.0, 3.0];
        let r = per_stage_mae(&h, &h, &[0, 1, 2], 3).unwrap();
        assert!(r.iter().all(|s| s.mean == Some(0.0) && s.std == Some(0.0)));
    }
}
