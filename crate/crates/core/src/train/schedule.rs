use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `lr(e) = lr_final + ½(lr_init − lr_final)(1 + cos(π·e/E))`, stepped per
/// epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub lr_init: f64,
    pub lr_final: f64,
    pub epochs: usize,
}

impl CosineSchedule {
    pub fn new(lr_init: f64, lr_final: f64, epochs: usize) -> Result<Self> {
        if !(lr_final > 0.0 && lr_init >= lr_final && lr_init.is_finite()) {
            return Err(Error::Config(format!(
                "need lr_init >= lr_final > 0, got {lr_init} and {lr_final}"
            )));
        }
        if epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(Self {
            lr_init,
            lr_final,
            epochs,
        })
    }

    /// Learning rate for epoch `e`; epochs past `E` stay at `lr_final`.
    pub fn lr(&self, epoch: usize) -> f64 {
        let e = epoch.min(self.epochs) as f64;
        let cos = (std::f64::consts::PI * e / self.epochs as f64).cos();
        self.lr_final + 0.5 * (self.lr_init - self.lr_final) * (1.0 + cos)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        let s = CosineSchedule::new(5e-4, 5e-6, 400).unwrap();
        assert!((s.lr(0) - 5e-4).abs() < 1e-18);
        assert!((s.lr(400) - 5e-6).abs() < 1e-18);
        assert!((s.lr(200) - 2.525e-4).abs() < 1e-15);
        assert_eq!(s.lr(1000), s.lr(400));
    }

    #[test]
    fn monotone_decay() {
        let s = CosineSchedule::new(1e-3, 1e-5, 37).unwrap();
        assert!((1..=37).all(|e| s.lr(e) < s.lr(e - 1)));
    }

    #[test]
    fn invalid_rates() {
        assert!(CosineSchedule::new(1e-6, 1e-5, 10).is_err());
        assert!(CosineSchedule::new(1e-3, 0.0, 10).is_err());
        assert!(CosineSchedule::new(1e-3, 1e-5, 0).is_err());
    }
}
