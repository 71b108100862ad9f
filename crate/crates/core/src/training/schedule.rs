use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Linear warm-up followed by cosine decay to zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub lr_peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl Schedule {
    pub fn new(lr_peak: f64, warmup_steps: usize, total_steps: usize) -> Result<Self> {
        if total_steps > 0 && warmup_steps >= total_steps {
            return Err(Error::Config(format!("warmup {warmup_steps} must be below total {total_steps}")));
        }
        if !(lr_peak.is_finite() && lr_peak >= 0.0) {
            return Err(Error::Config(format!("bad peak learning rate {lr_peak}")));
        }
        Ok(Schedule { lr_peak, warmup_steps, total_steps })
    }

    pub fn lr_at_step(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::Argument(format!("step {step} beyond {}", self.total_steps)));
        }
        if step < self.warmup_steps {
            return Ok(self.lr_peak * step as f64 / self.warmup_steps as f64);
        }
        let span = (self.total_steps - self.warmup_steps).max(1) as f64;
        let progress = (step - self.warmup_steps) as f64 / span;
        Ok(self.lr_peak * 0.5 * (1.0 + (PI * progress).cos()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        let s = Schedule::new(1e-4, 50, 1000).unwrap();
        assert_eq!(s.lr_at_step(0).unwrap(), 0.0);
        assert_eq!(s.lr_at_step(50).unwrap(), 1e-4);
        assert!((s.lr_at_step(525).unwrap() - 0.5e-4).abs() < 1e-18);
        assert!(s.lr_at_step(1000).unwrap().abs() < 1e-20);
        assert!((s.lr_at_step(25).unwrap() - 0.5e-4).abs() < 1e-18);
        assert!(matches!(s.lr_at_step(1001), Err(Error::Argument(_))));
    }

    #[test]
    fn warmup_must_precede_end() {
        assert!(Schedule::new(1e-4, 10, 10).is_err());
        assert!(Schedule::new(1e-4, 0, 0).is_ok());
    }

    #[test]
    fn monotone_after_warmup() {
        let s = Schedule::new(3e-4, 10, 200).unwrap();
        let lrs: Vec<f64> = (10..=200).map(|t| s.lr_at_step(t).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        let ramp: Vec<f64> = (0..=10).map(|t| s.lr_at_step(t).unwrap()).collect();
        assert!(ramp.windows(2).all(|w| w[1] > w[0]));
    }
}
