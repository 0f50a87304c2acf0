use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::Quality;
use crate::error::{Error, Result};

pub const DEFAULT_WEIGHT_LOW: f64 = 2.0;
pub const DEFAULT_WEIGHT_HIGH: f64 = 1.0;

/// Endless i.i.d. stream of record indices, each drawn with probability
/// proportional to its quality tier's weight.
#[derive(Debug, Clone)]
pub struct WeightedSampler {
    dist: WeightedIndex<f64>,
    rng: ChaCha8Rng,
}

impl WeightedSampler {
    pub fn new(qualities: &[Quality], weight_low: f64, weight_high: f64, seed: u64) -> Result<Self> {
        for (name, w) in [("low", weight_low), ("high", weight_high)] {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::param(format!(
                    "{name}-quality weight must be positive, got {w}"
                )));
            }
        }
        if qualities.is_empty() {
            return Err(Error::param("cannot sample from an empty manifest"));
        }
        let weights = qualities.iter().map(|q| match q {
            Quality::Low => weight_low,
            Quality::High => weight_high,
        });
        let dist = WeightedIndex::new(weights).map_err(|e| Error::param(e.to_string()))?;
        Ok(WeightedSampler {
            dist,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }
}

impl Iterator for WeightedSampler {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        Some(self.dist.sample(&mut self.rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiers(low: usize, high: usize) -> Vec<Quality> {
        let mut q = vec![Quality::Low; low];
        q.extend(vec![Quality::High; high]);
        q
    }

    #[test]
    fn two_to_one_ratio() {
        let q = tiers(10, 10);
        let s = WeightedSampler::new(&q, 2.0, 1.0, 42).unwrap();
        let n = 100_000;
        let low = s.take(n).filter(|&i| i < 10).count();
        assert!((low as f64 / n as f64 - 2.0 / 3.0).abs() < 0.01);
    }

    #[test]
    fn uniform_when_all_high() {
        let q = tiers(0, 4);
        let s = WeightedSampler::new(&q, 2.0, 1.0, 1).unwrap();
        let mut counts = [0usize; 4];
        for i in s.take(40_000) {
            counts[i] += 1;
        }
        // Chi-square with 3 degrees of freedom; 11.34 is the 0.01 critical value.
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - 10_000.0).powi(2) / 10_000.0)
            .sum();
        assert!(chi2 < 11.34, "{counts:?}");
    }

    #[test]
    fn rejects_bad_weights_and_empty() {
        let q = tiers(1, 1);
        assert!(WeightedSampler::new(&q, 2.0, 0.0, 0).is_err());
        assert!(WeightedSampler::new(&q, -1.0, 1.0, 0).is_err());
        assert!(WeightedSampler::new(&q, f64::NAN, 1.0, 0).is_err());
        assert!(WeightedSampler::new(&[], 2.0, 1.0, 0).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let q = tiers(3, 5);
        let a: Vec<_> = WeightedSampler::new(&q, 2.0, 1.0, 9).unwrap().take(50).collect();
        let b: Vec<_> = WeightedSampler::new(&q, 2.0, 1.0, 9).unwrap().take(50).collect();
        assert_eq!(a, b);
    }
}
