//! Step decay of per-group learning rates.

use crate::config::{GroupValues, TrainConfig};
use crate::substrate::ParamGroup;

#[derive(Clone, Debug, PartialEq)]
pub struct StepLr {
    base: GroupValues,
    decay: GroupValues,
    step_size: usize,
    epoch: usize,
}

impl StepLr {
    pub fn new(base: GroupValues, decay: GroupValues, step_size: usize) -> Self {
        StepLr { base, decay, step_size: step_size.max(1), epoch: 0 }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(cfg.learning_rate, cfg.decay, cfg.step_size)
    }

    /// Rates after `epoch` completed epochs.
    pub fn rates_at(&self, epoch: usize) -> GroupValues {
        let k = (epoch / self.step_size) as i32;
        let mut out = self.base;
        for g in ParamGroup::ALL {
            *out.get_mut(g) = self.base.get(g) * self.decay.get(g).powi(k);
        }
        out
    }

    pub fn current(&self) -> GroupValues {
        self.rates_at(self.epoch)
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Marks an epoch boundary and returns the rates for the next epoch.
    pub fn scheduler_step(&mut self) -> GroupValues {
        self.epoch += 1;
        self.current()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_halvings() {
        let mut s = StepLr::new(GroupValues::splat(1e-3), GroupValues::splat(0.5), 1);
        s.scheduler_step();
        let r = s.scheduler_step();
        assert!((r.encoder - 2.5e-4).abs() < 1e-18);
    }

    #[test]
    fn unit_decay_is_constant() {
        let mut s = StepLr::new(GroupValues::splat(3e-4), GroupValues::splat(1.0), 1);
        for _ in 0..100 {
            assert_eq!(s.scheduler_step(), GroupValues::splat(3e-4));
        }
    }

    #[test]
    fn step_size_and_group_isolation() {
        let decay = GroupValues { embedding: 0.5, encoder: 1.0, decoder: 0.1 };
        let mut s = StepLr::new(GroupValues::splat(1.0), decay, 2);
        assert_eq!(s.scheduler_step(), GroupValues::splat(1.0));
        let r = s.scheduler_step();
        assert_eq!((r.embedding, r.encoder), (0.5, 1.0));
        assert!((r.decoder - 0.1).abs() < 1e-15);
    }
}
