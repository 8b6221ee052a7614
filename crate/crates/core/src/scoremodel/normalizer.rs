use serde::{Deserialize, Serialize};

/// Exponential moving mean/variance used to normalize raw reward scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovingAverageNormalizer {
    mean: f64,
    variance: f64,
    decay: f64,
    count: u64,
}

impl MovingAverageNormalizer {
    /// Starts at mean 0, variance 1.
    pub fn new(decay: f64) -> Self {
        assert!(decay > 0.0 && decay < 1.0, "decay must lie in (0, 1)");
        Self {
            mean: 0.0,
            variance: 1.0,
            decay,
            count: 0,
        }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Normalizes with the statistics before `raw` is seen, then folds `raw` in.
    pub fn normalize(&mut self, raw: f64) -> f64 {
        let out = (raw - self.mean) / libm::sqrt(self.variance + 1e-8);
        self.observe(raw);
        out
    }

    pub fn observe(&mut self, raw: f64) {
        let rho = self.decay;
        let delta = raw - self.mean;
        self.mean += (1.0 - rho) * delta;
        self.variance = rho * (self.variance + (1.0 - rho) * delta * delta);
        self.count += 1;
    }
}
