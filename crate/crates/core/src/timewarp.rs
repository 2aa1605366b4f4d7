//! Smooth bijection between an unconstrained virtual time and a strictly
//! positive piece duration.
//!
//! ```text
//! T(τ) = τ²/2 + τ + 1          τ > 0
//! T(τ) = 2 / (τ² − 2τ + 2)     τ ≤ 0
//! ```
//!
//! Both branches meet at `T(0) = 1` with unit slope, so the map is C¹.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unconstrained surrogate for a piece duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VirtualTime(pub f64);

impl VirtualTime {
    pub fn from_duration(duration: f64) -> Result<Self> {
        virtual_time(duration).map(VirtualTime)
    }

    pub fn duration(self) -> f64 {
        real_time(self.0)
    }

    pub fn duration_derivative(self) -> f64 {
        real_time_derivative(self.0)
    }
}

pub fn real_time(tau: f64) -> f64 {
    if tau > 0.0 {
        (0.5 * tau + 1.0) * tau + 1.0
    } else {
        let den = (tau - 2.0) * tau + 2.0;
        2.0 / den
    }
}

/// dT/dτ, strictly positive.
pub fn real_time_derivative(tau: f64) -> f64 {
    if tau > 0.0 {
        tau + 1.0
    } else {
        let den = (tau - 2.0) * tau + 2.0;
        4.0 * (1.0 - tau) / (den * den)
    }
}

/// Inverse of [`real_time`], closed form on each branch.
pub fn virtual_time(duration: f64) -> Result<f64> {
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::Domain(format!(
            "duration must be positive and finite, got {duration}"
        )));
    }
    if duration > 1.0 {
        // τ²/2 + τ + 1 − T = 0, positive root: τ = −1 + sqrt(2T − 1)
        Ok((2.0 * duration - 1.0).sqrt() - 1.0)
    } else {
        // τ² − 2τ + 2 − 2/T = 0, non-positive root: τ = 1 − sqrt(2/T − 1)
        Ok(1.0 - (2.0 / duration - 1.0).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_values() {
        assert_eq!(real_time(0.0), 1.0);
        assert!((real_time(2.0) - 5.0).abs() < 1e-15);
        assert!((real_time(-2.0) - 0.2).abs() < 1e-15);

        assert_eq!(real_time_derivative(0.0), 1.0);
        assert!((real_time_derivative(2.0) - 3.0).abs() < 1e-15);
        assert!((real_time_derivative(-2.0) - 0.12).abs() < 1e-15);

        assert_eq!(virtual_time(1.0).unwrap(), 0.0);
        assert!((virtual_time(5.0).unwrap() - 2.0).abs() < 1e-15);
        assert!((virtual_time(0.2).unwrap() + 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_positive_durations() {
        assert!(virtual_time(0.0).is_err());
        assert!(virtual_time(-1.0).is_err());
        assert!(virtual_time(f64::NAN).is_err());
    }

    #[test]
    fn derivative_matches_finite_differences() {
        for &tau in &[-7.5, -1.3, -1e-3, 1e-3, 0.4, 3.0, 11.0] {
            let h = 1e-6;
            let fd = (real_time(tau + h) - real_time(tau - h)) / (2.0 * h);
            let an = real_time_derivative(tau);
            assert!((fd - an).abs() / an < 1e-8, "tau={tau}: {fd} vs {an}");
        }
    }
}
