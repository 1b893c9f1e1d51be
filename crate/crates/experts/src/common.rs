//! Pieces shared by both experts.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use roadex_core::filter::lowpass_filter;
use roadex_core::ScoreSeries;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LowpassConfig {
    pub cutoff_hz: f64,
    pub order: usize,
}

impl Default for LowpassConfig {
    fn default() -> Self {
        LowpassConfig {
            cutoff_hz: 0.2,
            order: 2,
        }
    }
}

impl LowpassConfig {
    pub fn apply(&self, raw: &ScoreSeries, fps: f64) -> Result<ScoreSeries> {
        Ok(lowpass_filter(raw, fps, self.cutoff_hz, self.order)?)
    }
}

/// Per-epoch mean training loss, plus held-out loss when validation data
/// was supplied.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
    pub validation_losses: Vec<f64>,
    pub samples: usize,
    pub checksum: String,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

/// Population standard deviation.
pub fn population_std(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, s) = xs.clone().fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    if n == 0 {
        return 0.0;
    }
    let m = s / n as f64;
    (xs.map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64).sqrt()
}

/// A shuffled subset of `0..n` of at most `limit` indices.
pub(crate) fn epoch_order(n: usize, limit: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    if let Some(l) = limit {
        idx.truncate(l);
    }
    idx
}

pub(crate) fn check_positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(crate::error::ExpertError::InvalidConfig(format!("{name} must be positive")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_std_divides_by_n() {
        let v = [0.5, 0.52];
        assert!((population_std(v.iter().copied()) - 0.01).abs() < 1e-15);
        assert_eq!(population_std([3.0; 4].iter().copied()), 0.0);
        assert_eq!(population_std(std::iter::empty::<f64>()), 0.0);
    }
}
