//! One-cycle learning-rate schedule: linear warmup from gamma/start_div to
//! gamma over the first warm_frac of the run, then cosine annealing down to
//! gamma/final_div.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub base_lr: f64,
    pub total_steps: usize,
    pub warm_frac: f64,
    pub start_div: f64,
    pub final_div: f64,
}

impl ScheduleConfig {
    pub fn new(base_lr: f64, total_steps: usize) -> Self {
        ScheduleConfig {
            base_lr,
            total_steps,
            warm_frac: 0.2,
            start_div: 2.0,
            final_div: 100.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.warm_frac > 0.0 && self.warm_frac < 1.0) {
            return Err(Error::InvalidConfig {
                field: "warm_frac".into(),
                reason: format!("{} not in (0, 1)", self.warm_frac),
            });
        }
        if self.start_div <= 1.0 || self.final_div <= 1.0 {
            return Err(Error::InvalidConfig {
                field: "start_div/final_div".into(),
                reason: "divisors must exceed 1".into(),
            });
        }
        if self.total_steps == 0 || self.base_lr <= 0.0 {
            return Err(Error::InvalidConfig {
                field: "total_steps/base_lr".into(),
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Learning rate at `step`; steps past the end clamp to the final value.
pub fn lr_at(s: &ScheduleConfig, step: usize) -> f64 {
    let t = s.total_steps as f64;
    let warm_end = s.warm_frac * t;
    let gamma = s.base_lr;
    let step = (step as f64).min(t);
    if step <= warm_end {
        let lo = gamma / s.start_div;
        lo + (gamma - lo) * step / warm_end
    } else {
        let lo = gamma / s.final_div;
        let progress = (step - warm_end) / (t - warm_end);
        lo + 0.5 * (gamma - lo) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchors_match_exactly() {
        let s = ScheduleConfig::new(1e-3, 1000);
        assert_eq!(lr_at(&s, 0), 5e-4);
        assert!((lr_at(&s, 200) - 1e-3).abs() < 1e-18);
        assert!((lr_at(&s, 1000) - 1e-5).abs() < 1e-18);
        // past the end: clamped
        assert_eq!(lr_at(&s, 5000), lr_at(&s, 1000));
    }

    #[test]
    fn warmup_is_linear_and_decay_monotone() {
        let s = ScheduleConfig::new(2e-3, 500);
        let quarter = lr_at(&s, 50);
        assert!((quarter - (1e-3 + 0.5 * (2e-3 - 1e-3))).abs() < 1e-15);
        let mut prev = lr_at(&s, 100);
        for step in 101..=500 {
            let cur = lr_at(&s, step);
            assert!(cur <= prev + 1e-18);
            prev = cur;
        }
    }

    #[test]
    fn validation_rejects_bad_fields() {
        let mut s = ScheduleConfig::new(1e-3, 100);
        s.warm_frac = 1.5;
        assert!(s.validate().is_err());
        let mut s = ScheduleConfig::new(1e-3, 100);
        s.final_div = 0.5;
        assert!(s.validate().is_err());
    }
}
