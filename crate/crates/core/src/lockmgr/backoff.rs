use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error(
        "initial backoff must be positive and no larger than the maximum ({initial:?} > {max:?})"
    )]
    Bounds { initial: Duration, max: Duration },
    #[error("jitter fraction must lie in [0, 1), got {0}")]
    Jitter(f64),
}

/// Exponential backoff with additive jitter.
///
/// Waits start at `initial`, are multiplied by `multiplier` after every
/// failed attempt and capped at `max`. Each wait adds a jitter drawn
/// uniformly from `[0, base * jitter_fraction)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackoffPolicy {
    pub initial: Duration,
    pub max: Duration,
    pub multiplier: u32,
    pub jitter_fraction: f64,
    pub seed: u64,
}

impl Default for BackoffPolicy {
    fn default() -> Self {
        BackoffPolicy {
            initial: Duration::from_millis(10),
            max: Duration::from_millis(500),
            multiplier: 2,
            jitter_fraction: 0.1,
            seed: 0,
        }
    }
}

impl BackoffPolicy {
    pub fn new(initial: Duration, max: Duration) -> Result<Self, PolicyError> {
        BackoffPolicy {
            initial,
            max,
            ..Default::default()
        }
        .validated()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validated(self) -> Result<Self, PolicyError> {
        if self.initial.is_zero() || self.initial > self.max {
            return Err(PolicyError::Bounds {
                initial: self.initial,
                max: self.max,
            });
        }
        if !(0.0..1.0).contains(&self.jitter_fraction) {
            return Err(PolicyError::Jitter(self.jitter_fraction));
        }
        Ok(self)
    }

    /// Base (jitter-free) wait before attempt `step + 1`, counting from zero.
    pub fn base_wait(&self, step: u32) -> Duration {
        let mut d = self.initial;
        for _ in 0..step {
            if d >= self.max {
                break;
            }
            d = d.saturating_mul(self.multiplier).min(self.max);
        }
        d.min(self.max)
    }

    /// A fresh wait sequence. `stream` selects an independent jitter stream
    /// derived from the policy seed.
    pub fn schedule(&self, stream: u64) -> Backoff {
        Backoff {
            policy: *self,
            current: self.initial,
            rng: ChaCha8Rng::seed_from_u64(mix(self.seed, stream)),
        }
    }
}

fn mix(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the combined inputs
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Wait {
    pub base: Duration,
    pub jitter: Duration,
}

impl Wait {
    pub fn total(&self) -> Duration {
        self.base + self.jitter
    }
}

#[derive(Debug, Clone)]
pub struct Backoff {
    policy: BackoffPolicy,
    current: Duration,
    rng: ChaCha8Rng,
}

impl Backoff {
    /// The next wait; advances the base for the following call.
    pub fn next_wait(&mut self) -> Wait {
        let base = self.current;
        let span = (base.as_nanos() as f64 * self.policy.jitter_fraction) as u64;
        let jitter = if span == 0 {
            Duration::ZERO
        } else {
            Duration::from_nanos(self.rng.gen_range(0..span))
        };
        self.current = base
            .saturating_mul(self.policy.multiplier)
            .min(self.policy.max);
        Wait { base, jitter }
    }
}

impl Iterator for Backoff {
    type Item = Wait;

    fn next(&mut self) -> Option<Wait> {
        Some(self.next_wait())
    }
}
