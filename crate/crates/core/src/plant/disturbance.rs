use serde::{Deserialize, Serialize};

use crate::error::{FesError, Result};
use crate::linalg::Vector;
use crate::operators::BoxSet;

/// Exogenous input `w(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisturbanceSignal {
    Constant { value: Vec<f64> },
    Ramp { offset: Vec<f64>, slope: Vec<f64> },
    /// `values[i]` holds on `[times[i], times[i+1])`; the first value also
    /// applies before `times[0]`.
    PiecewiseConstant { times: Vec<f64>, values: Vec<Vec<f64>> },
    /// `base` before `t_surge`, `factor·base` from `t_surge` on.
    Surge { base: Vec<f64>, factor: f64, t_surge: f64 },
    /// Linear interpolation between samples, held constant outside the table.
    Table { times: Vec<f64>, values: Vec<Vec<f64>> },
}

impl DisturbanceSignal {
    pub fn constant(v: &[f64]) -> Self {
        DisturbanceSignal::Constant { value: v.to_vec() }
    }

    pub fn dim(&self) -> usize {
        match self {
            DisturbanceSignal::Constant { value } => value.len(),
            DisturbanceSignal::Ramp { offset, .. } => offset.len(),
            DisturbanceSignal::PiecewiseConstant { values, .. } => values.first().map_or(0, |v| v.len()),
            DisturbanceSignal::Surge { base, .. } => base.len(),
            DisturbanceSignal::Table { values, .. } => values.first().map_or(0, |v| v.len()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check_grid = |times: &[f64], values: &[Vec<f64>]| -> Result<()> {
            if times.is_empty() || times.len() != values.len() {
                return Err(FesError::Config("disturbance table needs matching, non-empty times and values".into()));
            }
            if times.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(FesError::Config("disturbance times must be strictly increasing".into()));
            }
            let d = values[0].len();
            if values.iter().any(|v| v.len() != d) {
                return Err(FesError::Config("disturbance rows differ in length".into()));
            }
            Ok(())
        };
        match self {
            DisturbanceSignal::Ramp { offset, slope } if offset.len() != slope.len() => {
                Err(FesError::Config("ramp offset and slope differ in length".into()))
            }
            DisturbanceSignal::PiecewiseConstant { times, values } | DisturbanceSignal::Table { times, values } => {
                check_grid(times, values)
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, t: f64) -> Vector {
        match self {
            DisturbanceSignal::Constant { value } => Vector::from_row_slice(value),
            DisturbanceSignal::Ramp { offset, slope } => {
                Vector::from_fn(offset.len(), |i, _| offset[i] + slope[i] * t)
            }
            DisturbanceSignal::PiecewiseConstant { times, values } => {
                let k = times.partition_point(|&s| s <= t).saturating_sub(1);
                Vector::from_row_slice(&values[k])
            }
            DisturbanceSignal::Surge { base, factor, t_surge } => {
                let s = if t >= *t_surge { *factor } else { 1.0 };
                Vector::from_fn(base.len(), |i, _| base[i] * s)
            }
            DisturbanceSignal::Table { times, values } => {
                let n = times.len();
                if t <= times[0] {
                    return Vector::from_row_slice(&values[0]);
                }
                if t >= times[n - 1] {
                    return Vector::from_row_slice(&values[n - 1]);
                }
                let k = times.partition_point(|&s| s <= t) - 1;
                let a = (t - times[k]) / (times[k + 1] - times[k]);
                Vector::from_fn(values[k].len(), |i, _| values[k][i] + a * (values[k + 1][i] - values[k][i]))
            }
        }
    }

    /// Global bound on ‖ẇ‖ away from jumps.
    pub fn derivative_bound(&self) -> f64 {
        match self {
            DisturbanceSignal::Ramp { slope, .. } => Vector::from_row_slice(slope).norm(),
            DisturbanceSignal::Table { times, values } => segment_slopes(times, values).into_iter().fold(0.0, f64::max),
            _ => 0.0,
        }
    }

    /// esssup ‖ẇ‖ over `(t0, t1)`; `+∞` when a jump falls inside the interval.
    pub fn interval_rate(&self, t0: f64, t1: f64) -> f64 {
        match self {
            DisturbanceSignal::Constant { .. } => 0.0,
            DisturbanceSignal::Ramp { .. } => self.derivative_bound(),
            DisturbanceSignal::PiecewiseConstant { times, values } => {
                for k in 1..times.len() {
                    if times[k] > t0 && times[k] <= t1 && values[k] != values[k - 1] {
                        return f64::INFINITY;
                    }
                }
                0.0
            }
            DisturbanceSignal::Surge { factor, t_surge, base } => {
                if *t_surge > t0 && *t_surge <= t1 && *factor != 1.0 && base.iter().any(|b| *b != 0.0) {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
            DisturbanceSignal::Table { times, values } => {
                let slopes = segment_slopes(times, values);
                let mut sup = 0.0f64;
                for (k, s) in slopes.iter().enumerate() {
                    if times[k + 1] > t0 && times[k] < t1 {
                        sup = sup.max(*s);
                    }
                }
                sup
            }
        }
    }

    /// Checks `w(t) ∈ bounds` on a uniform grid of `n` points over `[t0, t1]`.
    pub fn check_bounds(&self, bounds: &BoxSet, t0: f64, t1: f64, n: usize) -> Result<()> {
        for i in 0..n {
            let t = t0 + (t1 - t0) * i as f64 / (n.max(2) - 1) as f64;
            let w = self.value(t);
            let viol = (0..w.len()).any(|j| w[j] < bounds.lower[j] || w[j] > bounds.upper[j]);
            if viol {
                return Err(FesError::Infeasible(t));
            }
        }
        Ok(())
    }
}

fn segment_slopes(times: &[f64], values: &[Vec<f64>]) -> Vec<f64> {
    (0..times.len().saturating_sub(1))
        .map(|k| {
            let dt = times[k + 1] - times[k];
            let d2: f64 = values[k].iter().zip(&values[k + 1]).map(|(a, b)| (b - a) * (b - a)).sum();
            d2.sqrt() / dt
        })
        .collect()
}
