use crate::error::{Error, Result};

/// Linear warmup followed by a cosine decay to zero, stepped per batch.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub steps_per_epoch: usize,
}

impl LrSchedule {
    pub fn total_steps(&self) -> usize {
        self.total_epochs * self.steps_per_epoch
    }

    pub fn warmup_steps(&self) -> usize {
        (self.warmup_epochs * self.steps_per_epoch).min(self.total_steps())
    }

    /// Warmup climbs from `base/warmup_steps` and reaches `base` on its last
    /// step; the cosine phase then starts at `base` and reaches `base/2`
    /// halfway through.
    pub fn lr_at(&self, step: usize) -> Result<f64> {
        let total = self.total_steps();
        if step >= total {
            return Err(Error::arg(format!("step {step} outside schedule of {total} steps")));
        }
        if !(self.base_lr >= 0.0) {
            return Err(Error::arg(format!("negative learning rate {}", self.base_lr)));
        }
        let warm = self.warmup_steps();
        if step < warm {
            return Ok(self.base_lr * (step + 1) as f64 / warm as f64);
        }
        let progress = (step - warm) as f64 / (total - warm) as f64;
        Ok(self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_scale() -> LrSchedule {
        LrSchedule {
            base_lr: 0.2,
            warmup_epochs: 5,
            total_epochs: 300,
            steps_per_epoch: 100,
        }
    }

    #[test]
    fn warmup_ends_at_base() {
        let s = full_scale();
        assert_eq!(s.lr_at(0).unwrap(), 0.2 / 500.0);
        assert_eq!(s.lr_at(499).unwrap(), 0.2);
        assert_eq!(s.lr_at(500).unwrap(), 0.2);
    }

    #[test]
    fn cosine_midpoint_and_end() {
        let s = full_scale();
        let mid = 500 + (30_000 - 500) / 2;
        assert!((s.lr_at(mid).unwrap() - 0.1).abs() < 1e-12);
        assert!(s.lr_at(29_999).unwrap() < 1e-8);
    }

    #[test]
    fn out_of_range_is_argument_error() {
        assert!(matches!(full_scale().lr_at(30_000), Err(Error::Argument(_))));
    }

    #[test]
    fn continuous_and_non_negative() {
        let s = LrSchedule {
            base_lr: 0.05,
            warmup_epochs: 2,
            total_epochs: 7,
            steps_per_epoch: 13,
        };
        let w = s.warmup_steps();
        let jump = (s.lr_at(w - 1).unwrap() - s.lr_at(w).unwrap()).abs();
        assert!(jump < 2.0 * s.base_lr / s.steps_per_epoch as f64);
        assert!((0..s.total_steps()).all(|t| s.lr_at(t).unwrap() >= 0.0));
    }

    #[test]
    fn no_warmup_starts_at_base() {
        let s = LrSchedule {
            base_lr: 1.0,
            warmup_epochs: 0,
            total_epochs: 2,
            steps_per_epoch: 4,
        };
        assert_eq!(s.lr_at(0).unwrap(), 1.0);
    }
}
