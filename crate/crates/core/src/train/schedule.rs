/// Smallest change in validation IoU that counts as an improvement.
pub const IMPROVEMENT_THRESHOLD: f64 = 1e-4;
/// The learning rate is never reduced below this.
pub const MIN_LR: f64 = 1e-7;

/// Multiplies the learning rate by `factor` once the best validation IoU
/// has failed to improve for `patience` consecutive epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    best: Option<f64>,
    stale: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        assert!(patience >= 1, "patience must be at least 1");
        Self {
            lr,
            factor,
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Records one epoch's validation IoU and returns the learning rate for
    /// the next epoch.
    pub fn observe(&mut self, iou: f64) -> f64 {
        match self.best {
            Some(b) if iou < b + IMPROVEMENT_THRESHOLD => {
                self.stale += 1;
                if self.stale >= self.patience {
                    self.lr = (self.lr * self.factor).max(MIN_LR);
                    self.stale = 0;
                }
            }
            _ => {
                self.best = Some(iou);
                self.stale = 0;
            }
        }
        self.lr
    }
}

/// Learning rate after replaying `ious` through a fresh scheduler.
pub fn reduce_lr_on_plateau(ious: &[f64], base_lr: f64, factor: f64, patience: usize) -> f64 {
    let mut s = PlateauScheduler::new(base_lr, factor, patience);
    ious.iter().fold(base_lr, |_, &iou| s.observe(iou))
}
