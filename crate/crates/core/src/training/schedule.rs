use serde::{Deserialize, Serialize};

/// Exploration probabilities per epoch `t >= 1`:
/// `epsilon(t) = eps_floor + eps_scale * exp(-eps_rate * (t - 1))` for a random
/// action and `beta(t) = beta_scale * exp(-beta_rate * (t - 1))` for the
/// oracle action. The defaults trace the usual decaying curves from
/// (0.6, 0.3) at epoch 1 down to (0.1, 0.0).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplorationSchedule {
    pub eps_floor: f64,
    pub eps_scale: f64,
    pub eps_rate: f64,
    pub beta_scale: f64,
    pub beta_rate: f64,
}

impl Default for ExplorationSchedule {
    fn default() -> Self {
        ExplorationSchedule { eps_floor: 0.1, eps_scale: 0.5, eps_rate: 0.25, beta_scale: 0.3, beta_rate: 0.5 }
    }
}

impl ExplorationSchedule {
    /// No exploration at all: always the greedy action.
    pub fn greedy() -> Self {
        ExplorationSchedule { eps_floor: 0.0, eps_scale: 0.0, eps_rate: 0.0, beta_scale: 0.0, beta_rate: 0.0 }
    }

    pub fn epsilon(&self, t: usize) -> f64 {
        let t = t.max(1) as f64;
        (self.eps_floor + self.eps_scale * (-self.eps_rate * (t - 1.0)).exp()).clamp(0.0, 1.0)
    }

    pub fn beta(&self, t: usize) -> f64 {
        let t = t.max(1) as f64;
        let b = (self.beta_scale * (-self.beta_rate * (t - 1.0)).exp()).clamp(0.0, 1.0);
        b.min(1.0 - self.epsilon(t as usize))
    }

    /// `(epsilon, beta)` at epoch `t`.
    pub fn at(&self, t: usize) -> (f64, f64) {
        (self.epsilon(t), self.beta(t))
    }
}

/// Default schedule values at epoch `t`.
pub fn schedule_defaults(t: usize) -> (f64, f64) {
    ExplorationSchedule::default().at(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        let (e, b) = schedule_defaults(1);
        assert!((e - 0.6).abs() < 1e-12 && (b - 0.3).abs() < 1e-12);
        let (e, b) = schedule_defaults(20);
        assert!((e - 0.104).abs() < 1e-3 && b < 1e-3);
        assert!((schedule_defaults(5).0 - 0.284).abs() < 1e-3);
    }

    #[test]
    fn exploitation_grows() {
        let s = ExplorationSchedule::default();
        let mut last = 0.0;
        for t in 1..300 {
            let (e, b) = s.at(t);
            assert!(e + b <= 1.0 && e >= 0.0 && b >= 0.0);
            assert!(1.0 - e - b >= last);
            last = 1.0 - e - b;
        }
    }
}
