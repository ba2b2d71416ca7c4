use serde::{Deserialize, Serialize};

/// Reduce-on-plateau rule driven by the validation loss history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauSchedule {
    /// Divisor applied on each reduction.
    pub factor: f64,
    /// Consecutive non-improving epochs that trigger a reduction.
    pub patience: usize,
    /// An epoch improves only if it beats the best loss by more than this.
    pub min_delta: f64,
    /// Learning rates are never reduced below this.
    pub floor: f64,
}

impl Default for PlateauSchedule {
    fn default() -> Self {
        Self {
            factor: 10.0,
            patience: 1,
            min_delta: 1e-4,
            floor: 1e-7,
        }
    }
}

impl PlateauSchedule {
    /// Epoch indices (0-based) at which the rule fires, ignoring the floor.
    /// The waiting counter restarts after every reduction.
    pub fn reduction_epochs(&self, history: &[f64]) -> Vec<usize> {
        let mut fired = Vec::new();
        let Some(&first) = history.first() else {
            return fired;
        };
        let mut best = first;
        let mut wait = 0;
        for (epoch, &loss) in history.iter().enumerate().skip(1) {
            if loss < best - self.min_delta {
                best = loss;
                wait = 0;
            } else {
                wait += 1;
                if wait >= self.patience.max(1) {
                    fired.push(epoch);
                    wait = 0;
                }
            }
        }
        fired
    }

    /// Epochs since the last improvement at the end of `history`.
    pub fn epochs_since_improvement(&self, history: &[f64]) -> usize {
        let Some(&first) = history.first() else {
            return 0;
        };
        let mut best = first;
        let mut since = 0;
        for &loss in &history[1..] {
            if loss < best - self.min_delta {
                best = loss;
                since = 0;
            } else {
                since += 1;
            }
        }
        since
    }
}

/// Learning rate for the next epoch given the validation losses so far.
pub fn lr_schedule_step(history: &[f64], current_lr: f64, schedule: &PlateauSchedule) -> f64 {
    let last = history.len().saturating_sub(1);
    let fires = schedule.reduction_epochs(history).last() == Some(&last) && !history.is_empty();
    if fires && current_lr > schedule.floor {
        (current_lr / schedule.factor).max(schedule.floor)
    } else {
        current_lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(losses: &[f64]) -> Vec<f64> {
        let s = PlateauSchedule::default();
        let mut lr = 1e-3;
        let mut out = Vec::new();
        for i in 1..=losses.len() {
            lr = lr_schedule_step(&losses[..i], lr, &s);
            out.push(lr);
        }
        out
    }

    #[test]
    fn improving_keeps_rate() {
        assert_eq!(trace(&[1.0, 0.9]), [1e-3, 1e-3]);
    }

    #[test]
    fn one_bad_epoch_divides_by_ten() {
        let t = trace(&[1.0, 0.9, 0.95]);
        assert_eq!(t[..2], [1e-3, 1e-3]);
        assert!((t[2] - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn flat_losses_reduce_every_epoch() {
        // Epoch 2 and epoch 3 each fail to improve on the best (1.0).
        let t = trace(&[1.0, 1.0, 1.0]);
        assert_eq!(t[0], 1e-3);
        assert!((t[1] - 1e-4).abs() < 1e-18);
        assert!((t[2] - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn improvement_smaller_than_min_delta_does_not_count() {
        let t = trace(&[1.0, 0.99995]);
        assert!((t[1] - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn floor_stops_reduction() {
        let s = PlateauSchedule::default();
        assert_eq!(lr_schedule_step(&[1.0, 1.0], 1e-7, &s), 1e-7);
        assert_eq!(lr_schedule_step(&[1.0, 1.0], 5e-7, &s), 1e-7);
    }

    #[test]
    fn longer_patience() {
        let s = PlateauSchedule {
            patience: 2,
            ..Default::default()
        };
        assert_eq!(s.reduction_epochs(&[1.0, 1.1, 1.2, 0.5, 0.6, 0.7, 0.8, 0.9]), [2, 5, 7]);
        assert_eq!(s.epochs_since_improvement(&[1.0, 1.1, 1.2, 0.5, 0.6]), 1);
    }
}
