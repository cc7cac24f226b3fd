//! Evenly spaced sweep axes.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid step must be finite and > 0, got {0}")]
    BadStep(f64),
    #[error("empty grid: start {start} is above stop {stop}")]
    Empty { start: f64, stop: f64 },
    #[error("non-finite grid bound")]
    NonFinite,
}

/// Closed interval `[start, stop]` sampled every `step`.
///
/// When `1/step` is an integer `n` the points are computed as `k / n`, which
/// makes landmark values such as 0 and ±1 exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridAxis {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl GridAxis {
    pub fn new(start: f64, stop: f64, step: f64) -> Result<Self, GridError> {
        if !(start.is_finite() && stop.is_finite()) {
            return Err(GridError::NonFinite);
        }
        if !(step.is_finite() && step > 0.0) {
            return Err(GridError::BadStep(step));
        }
        if start > stop {
            return Err(GridError::Empty { start, stop });
        }
        Ok(Self { start, stop, step })
    }

    pub fn values(&self) -> Vec<f64> {
        let count = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        let inv = 1.0 / self.step;
        let per_unit = inv.round();
        if (inv - per_unit).abs() < 1e-9 && per_unit >= 1.0 {
            let first = (self.start * per_unit).round() as i64;
            if ((first as f64) / per_unit - self.start).abs() < 1e-9 {
                return (0..count as i64).map(|k| (first + k) as f64 / per_unit).collect();
            }
        }
        (0..count).map(|k| self.start + k as f64 * self.step).collect()
    }
}

impl std::str::FromStr for GridAxis {
    type Err = String;

    /// `start:stop:step`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("expected start:stop:step, got `{s}`"));
        }
        let num = |p: &str| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}"));
        GridAxis::new(num(parts[0])?, num(parts[1])?, num(parts[2])?).map_err(|e| e.to_string())
    }
}
