/// Learning-rate schedules.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum LrSchedule {
    Constant(f64),
    /// Linear warm-up over `warmup_fraction` of `total_steps`, then cosine
    /// decay from `peak` to `floor_fraction * peak`.
    WarmupCosine {
        peak: f64,
        total_steps: usize,
        warmup_fraction: f64,
        floor_fraction: f64,
    },
}

impl LrSchedule {
    pub fn warmup_cosine(peak: f64, total_steps: usize) -> Self {
        LrSchedule::WarmupCosine {
            peak,
            total_steps,
            warmup_fraction: 0.1,
            floor_fraction: 0.1,
        }
    }

    /// Rate for zero-based `step`.
    pub fn rate(&self, step: usize) -> f64 {
        match *self {
            LrSchedule::Constant(lr) => lr,
            LrSchedule::WarmupCosine {
                peak,
                total_steps,
                warmup_fraction,
                floor_fraction,
            } => {
                let total = total_steps.max(1) as f64;
                let warmup = libm::ceil(warmup_fraction * total).max(1.0);
                let s = step as f64;
                if s < warmup {
                    return peak * (s + 1.0) / warmup;
                }
                let span = (total - warmup).max(1.0);
                let progress = ((s - warmup) / span).min(1.0);
                let floor = floor_fraction * peak;
                floor + (peak - floor) * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * progress))
            }
        }
    }
}
