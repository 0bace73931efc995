use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stored `(t_min, t_max)` pair for min-max scaling of timestamps in hours.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeScale {
    pub t_min: f64,
    pub t_max: f64,
}

impl TimeScale {
    pub fn new(t_min: f64, t_max: f64) -> Result<Self> {
        let s = Self { t_min, t_max };
        s.check()?;
        Ok(s)
    }

    /// Range of the given timestamps.
    pub fn from_timestamps(ts: impl IntoIterator<Item = f64>) -> Result<Self> {
        let (lo, hi) = ts
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t), hi.max(t)));
        Self::new(lo, hi)
    }

    fn check(&self) -> Result<()> {
        if !(self.t_max > self.t_min) || !self.t_min.is_finite() || !self.t_max.is_finite() {
            return Err(Error::Input(format!(
                "degenerate time scale: t_min = {}, t_max = {}",
                self.t_min, self.t_max
            )));
        }
        Ok(())
    }

    pub fn span(&self) -> f64 {
        self.t_max - self.t_min
    }
}

/// `(t - t_min) / (t_max - t_min)`, clamped to `[0, 1]` with a warning when
/// `t` falls outside the scale.
pub fn normalize_time(t: f64, scale: &TimeScale) -> Result<f64> {
    scale.check()?;
    let v = (t - scale.t_min) / scale.span();
    if !(0.0..=1.0).contains(&v) {
        log::warn!(
            "timestamp {t} h outside [{}, {}], clamping",
            scale.t_min,
            scale.t_max
        );
        return Ok(v.clamp(0.0, 1.0));
    }
    Ok(v)
}

/// Inverse of [`normalize_time`] on `[0, 1]`: `t_hat * (t_max - t_min) + t_min`.
pub fn denormalize_time(t_hat: f64, scale: &TimeScale) -> Result<f64> {
    scale.check()?;
    if !(0.0..=1.0).contains(&t_hat) {
        return Err(Error::Input(format!("normalized time {t_hat} outside [0, 1]")));
    }
    Ok(t_hat * scale.span() + scale.t_min)
}
