//! Synthetic execution-time model for simulated servers.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::protocol::DurationNs;

/// Extra run time when operations start in quick succession:
/// `penalty * max(0, 1 - spacing / recovery)`, where `spacing` is the time
/// since the previous operation started.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contention {
    pub penalty: DurationNs,
    pub recovery: DurationNs,
}

impl Contention {
    pub fn extra(&self, spacing: Option<DurationNs>) -> DurationNs {
        let Some(spacing) = spacing else {
            return DurationNs::ZERO;
        };
        if self.recovery <= DurationNs::ZERO {
            return DurationNs::ZERO;
        }
        let spacing = spacing.max(DurationNs::ZERO).as_nanos_f64();
        let load = (1.0 - spacing / self.recovery.as_nanos_f64()).max(0.0);
        DurationNs::from_nanos_f64(self.penalty.as_nanos_f64() * load)
    }
}

/// Per-operation timing: uniform wake-up jitter in `[0, wake_jitter_max]`,
/// run time `base + N(0, sigma²)` truncated at zero, and with probability
/// `spike_probability` the run time multiplied by `spike_multiplier`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionModel {
    pub wake_jitter_max: DurationNs,
    pub base: DurationNs,
    pub sigma: DurationNs,
    pub spike_probability: f64,
    pub spike_multiplier: f64,
    pub contention: Option<Contention>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunDraw {
    pub run_time: DurationNs,
    pub spiked: bool,
}

impl Default for ExecutionModel {
    fn default() -> Self {
        ExecutionModel::constant(DurationNs::from_millis(30))
    }
}

impl ExecutionModel {
    /// Every operation takes exactly `base`, started on time.
    pub fn constant(base: DurationNs) -> Self {
        ExecutionModel {
            wake_jitter_max: DurationNs::ZERO,
            base,
            sigma: DurationNs::ZERO,
            spike_probability: 0.0,
            spike_multiplier: 1.0,
            contention: None,
        }
    }

    pub fn gaussian(base: DurationNs, sigma: DurationNs) -> Self {
        ExecutionModel {
            sigma,
            ..ExecutionModel::constant(base)
        }
    }

    pub fn with_spikes(mut self, probability: f64, multiplier: f64) -> Self {
        self.spike_probability = probability;
        self.spike_multiplier = multiplier;
        self
    }

    pub fn with_jitter(mut self, max: DurationNs) -> Self {
        self.wake_jitter_max = max;
        self
    }

    pub fn with_contention(mut self, contention: Contention) -> Self {
        self.contention = Some(contention);
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.wake_jitter_max < DurationNs::ZERO {
            return Err("wake jitter must be non-negative".into());
        }
        if self.base < DurationNs::ZERO {
            return Err("base run time must be non-negative".into());
        }
        if self.sigma < DurationNs::ZERO {
            return Err("sigma must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.spike_probability) {
            return Err("spike probability must lie in [0, 1]".into());
        }
        if !(self.spike_multiplier >= 1.0 && self.spike_multiplier.is_finite()) {
            return Err("spike multiplier must be a finite value >= 1".into());
        }
        if let Some(c) = &self.contention {
            if c.penalty < DurationNs::ZERO || c.recovery < DurationNs::ZERO {
                return Err("contention penalty and recovery must be non-negative".into());
            }
        }
        Ok(())
    }

    /// First draw for an operation. Always consumes one value.
    pub fn draw_jitter<R: Rng + ?Sized>(&self, rng: &mut R) -> DurationNs {
        let u: f64 = rng.random();
        DurationNs::from_nanos_f64(u * self.wake_jitter_max.as_nanos_f64())
    }

    /// Second and third draws: noise, then spike. Always consumes both.
    pub fn draw_run<R: Rng + ?Sized>(&self, rng: &mut R, spacing: Option<DurationNs>) -> RunDraw {
        let z: f64 = rng.sample(StandardNormal);
        let u: f64 = rng.random();
        let noisy = (self.base.as_nanos_f64() + self.sigma.as_nanos_f64() * z).max(0.0);
        let spiked = u < self.spike_probability;
        let scaled = if spiked { noisy * self.spike_multiplier } else { noisy };
        let extra = self.contention.as_ref().map_or(DurationNs::ZERO, |c| c.extra(spacing));
        RunDraw {
            run_time: DurationNs::from_nanos_f64(scaled) + extra,
            spiked,
        }
    }
}
