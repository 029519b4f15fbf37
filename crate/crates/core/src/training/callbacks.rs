use serde::{Deserialize, Serialize};

/// A monitored value counts as improved only when it drops by more than this.
pub const MIN_DELTA: f64 = 1e-6;

fn improved(best: Option<f64>, value: f64) -> bool {
    best.map_or(true, |b| value < b - MIN_DELTA)
}

/// Multiplies the learning rate by `factor` once `patience` epochs pass
/// without validation-loss improvement, then restarts the count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReduceLrOnPlateau {
    pub patience: usize,
    pub factor: f64,
    pub best: Option<f64>,
    pub wait: usize,
}

impl ReduceLrOnPlateau {
    pub fn new(patience: usize, factor: f64) -> Self {
        Self {
            patience,
            factor,
            best: None,
            wait: 0,
        }
    }

    /// Learning rate for the next epoch.
    pub fn on_epoch_end(&mut self, val_loss: f64, lr: f64) -> f64 {
        if improved(self.best, val_loss) {
            self.best = Some(val_loss);
            self.wait = 0;
            return lr;
        }
        self.wait += 1;
        if self.wait >= self.patience {
            self.wait = 0;
            return lr * self.factor;
        }
        lr
    }
}

/// Signals a stop once `patience` epochs pass without improvement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    pub best_epoch: Option<usize>,
    pub wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: None,
            wait: 0,
        }
    }

    /// `true` when training should halt after `epoch`.
    pub fn on_epoch_end(&mut self, epoch: usize, val_loss: f64) -> bool {
        if improved(self.best, val_loss) {
            self.best = Some(val_loss);
            self.best_epoch = Some(epoch);
            self.wait = 0;
            return false;
        }
        self.wait += 1;
        self.wait >= self.patience
    }
}
