//! Node-count → training-speed relationship and per-step progress.
//!
//! Training on `k` nodes does not deliver `k`-fold throughput: measured
//! speed loses 20% of the ideal each time the node count doubles, giving
//! `speed(k) = k * 0.8^log2(k)` node·hours of work per hour.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::DomainError;

/// Attenuation factor applied per doubling in the default curve.
pub const DEFAULT_ATTENUATION: f64 = 0.8;

/// Cached speed table over a legal node-count set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedCurve {
    attenuation_base: f64,
    speeds: BTreeMap<u32, f64>,
}

impl SpeedCurve {
    /// Builds the table for `counts` (each a power of two) with the given
    /// attenuation base. Speeds must come out strictly increasing, which
    /// holds for any base in (0.5, 1].
    pub fn new(attenuation_base: f64, counts: &[u32]) -> Result<Self, DomainError> {
        if !(attenuation_base > 0.5 && attenuation_base <= 1.0) {
            return Err(DomainError::InvalidConfig(format!(
                "attenuation base must be in (0.5, 1], got {attenuation_base}"
            )));
        }
        let mut speeds = BTreeMap::new();
        for &k in counts {
            if !k.is_power_of_two() {
                return Err(DomainError::UnsupportedNodeCount(k));
            }
            speeds.insert(k, attenuated_speed(attenuation_base, k));
        }
        Ok(SpeedCurve { attenuation_base, speeds })
    }

    /// The measured curve with the default 0.8 attenuation.
    pub fn standard(counts: &[u32]) -> Result<Self, DomainError> {
        SpeedCurve::new(DEFAULT_ATTENUATION, counts)
    }

    pub fn attenuation_base(&self) -> f64 {
        self.attenuation_base
    }

    /// Work rate in node·hours per hour on `k` nodes; `k = 0` is an idle
    /// job and rates 0.
    pub fn speed(&self, k: u32) -> Result<f64, DomainError> {
        if k == 0 {
            return Ok(0.0);
        }
        self.speeds.get(&k).copied().ok_or(DomainError::UnsupportedNodeCount(k))
    }

    /// Work accumulated over one planning step of `step_hours` hours.
    pub fn step_progress(&self, k: u32, step_hours: f64) -> Result<f64, DomainError> {
        Ok(step_hours * self.speed(k)?)
    }

    /// Work accumulated per simulated second.
    pub fn per_second_progress(&self, k: u32) -> Result<f64, DomainError> {
        Ok(self.speed(k)? / 3600.0)
    }
}

/// `k * base^log2(k)` for a power-of-two `k`. When the base is a small
/// fraction (0.8 = 4/5) the power is evaluated as an integer ratio so the
/// result is the correctly rounded decimal value (16 * 0.8^4 == 6.5536
/// exactly in binary64).
fn attenuated_speed(base: f64, k: u32) -> f64 {
    debug_assert!(k.is_power_of_two());
    let m = k.trailing_zeros();
    if let Some((num, den)) = as_small_fraction(base) {
        let n = u128::from(k) * u128::from(num).pow(m);
        let d = u128::from(den).pow(m);
        if n <= (1 << 53) && d <= (1 << 53) {
            return n as f64 / d as f64;
        }
    }
    (k as f64) * base.powi(m as i32)
}

fn as_small_fraction(x: f64) -> Option<(u32, u32)> {
    for den in 1..=64u32 {
        let num = (x * f64::from(den)).round();
        if num >= 1.0 && (num / f64::from(den) - x).abs() < 1e-12 {
            return Some((num as u32, den));
        }
    }
    None
}
