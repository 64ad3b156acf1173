use rand::Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ZipfError {
    #[error("item count must be at least 1")]
    Empty,
    #[error("theta must lie in (0, 1), got {0}")]
    Theta(f64),
}

/// Generalized harmonic number `sum_{i=1..n} 1 / i^theta`.
pub fn zeta(n: u64, theta: f64) -> f64 {
    (1..=n).map(|i| (i as f64).powf(-theta)).sum()
}

/// Zipfian ranks over `[0, n)` using the rejection-free construction from
/// Gray et al., "Quickly Generating Billion-Record Synthetic Databases",
/// as used by YCSB. Rank 0 is the most popular item.
#[derive(Debug, Clone, PartialEq)]
pub struct Zipfian {
    n: u64,
    theta: f64,
    zetan: f64,
    alpha: f64,
    eta: f64,
    second: f64,
}

impl Zipfian {
    pub fn new(n: u64, theta: f64) -> Result<Self, ZipfError> {
        if n == 0 {
            return Err(ZipfError::Empty);
        }
        if !(theta > 0.0 && theta < 1.0) {
            return Err(ZipfError::Theta(theta));
        }
        let zetan = zeta(n, theta);
        let zeta2 = zeta(2.min(n), theta);
        let eta = if n > 2 {
            (1.0 - (2.0 / n as f64).powf(1.0 - theta)) / (1.0 - zeta2 / zetan)
        } else {
            0.0
        };
        Ok(Zipfian {
            n,
            theta,
            zetan,
            alpha: 1.0 / (1.0 - theta),
            eta,
            second: 1.0 + 0.5f64.powf(theta),
        })
    }

    pub fn items(&self) -> u64 {
        self.n
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Normalizing constant; rank 0 has probability `1 / zetan`.
    pub fn zetan(&self) -> f64 {
        self.zetan
    }

    pub fn sample(&self, rng: &mut impl Rng) -> u64 {
        if self.n == 1 {
            return 0;
        }
        let u: f64 = rng.gen();
        let uz = u * self.zetan;
        if uz < 1.0 {
            return 0;
        }
        if uz < self.second || self.n == 2 {
            return 1;
        }
        let rank = (self.n as f64 * (self.eta * u - self.eta + 1.0).powf(self.alpha)) as u64;
        rank.min(self.n - 1)
    }
}

/// Stateless form of [`Zipfian::sample`].
pub fn zipfian_next(theta: f64, n: u64, rng: &mut impl Rng) -> Result<u64, ZipfError> {
    Ok(Zipfian::new(n, theta)?.sample(rng))
}
