//! The progressive-intervention scaling factor s(t): starts at 1, decreases
//! to 0. Both shapes ramp down over the first 80% of the horizon and stay at
//! zero afterwards.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleShape {
    #[default]
    Linear,
    Cosine,
}

/// Fraction of the horizon spent ramping from 1 to 0.
const RAMP_FRACTION: f64 = 0.8;

/// s(t) for step t of `horizon` total steps. s(0) = 1, s(horizon) = 0,
/// monotone non-increasing in between.
pub fn s_value(shape: ScheduleShape, horizon: usize, t: usize) -> f64 {
    if horizon == 0 {
        return 0.0;
    }
    let ramp = (horizon as f64 * RAMP_FRACTION).max(1.0);
    let frac = (t as f64 / ramp).min(1.0);
    match shape {
        ScheduleShape::Linear => 1.0 - frac,
        ScheduleShape::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_monotonicity_hold_for_every_shape() {
        for shape in [ScheduleShape::Linear, ScheduleShape::Cosine] {
            for horizon in [1usize, 2, 7, 100] {
                assert_eq!(s_value(shape, horizon, 0), 1.0, "{shape:?} h={horizon}");
                assert_eq!(s_value(shape, horizon, horizon), 0.0);
                let mut prev = f64::INFINITY;
                for t in 0..=horizon {
                    let s = s_value(shape, horizon, t);
                    assert!((0.0..=1.0).contains(&s));
                    assert!(s <= prev, "{shape:?} not monotone at t={t}");
                    prev = s;
                }
            }
        }
    }

    #[test]
    fn zero_horizon_is_identically_zero() {
        assert_eq!(s_value(ScheduleShape::Linear, 0, 0), 0.0);
    }
}
