//! Score normalization statistics from a log-transformed Gaussian KDE.
//!
//! Samples are shifted to be strictly positive, the density is estimated on
//! their logarithm (which gives the back-transformed density support on the
//! positive half-line only), and mean, standard deviation and the upper
//! quantile are integrated numerically from the back-transformed density.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_SAMPLES: usize = 30;
pub const SIGMA_FLOOR: f64 = 1e-6;
/// Trapezoid nodes used for every integral.
pub const QUADRATURE_POINTS: usize = 8193;
/// Integration range beyond the extreme log-samples, in bandwidths.
const TAIL_BANDWIDTHS: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mu: f64,
    pub sigma: f64,
    /// Raw-score threshold: the `alpha` quantile of the fitted density.
    pub tau: f64,
    pub shift: f64,
    pub bandwidth: f64,
    pub alpha: f64,
}

impl NormalizationStats {
    pub fn normalize(&self, score: f64) -> f64 {
        (score - self.mu) / self.sigma
    }

    pub fn normalized_tau(&self) -> f64 {
        self.normalize(self.tau)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.mu, self.sigma, self.tau, self.shift, self.bandwidth]
            .iter()
            .all(|v| v.is_finite());
        if !finite || !(self.sigma > 0.0) || !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "invalid normalization stats {self:?}"
            )));
        }
        Ok(())
    }
}

/// `(x - mu) / sigma`.
pub fn normalize(score: f64, stats: &NormalizationStats) -> f64 {
    stats.normalize(score)
}

/// Gaussian KDE over `ln(x + shift)`.
#[derive(Debug, Clone)]
pub struct LogKde {
    log_samples: Vec<f64>,
    bandwidth: f64,
    shift: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Silverman's rule of thumb, `0.9 min(sd, IQR / 1.34) n^(-1/5)`.
pub fn silverman_bandwidth(xs: &[f64]) -> f64 {
    let (_, sd) = mean_std(xs);
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (xs.len() as f64).powf(-0.2)
}

/// Shift making every sample strictly positive: `max(0, eps - min)` with
/// `eps` the sample standard deviation.
pub fn positivity_shift(samples: &[f64]) -> f64 {
    let (_, sd) = mean_std(samples);
    let eps = if sd > 0.0 { sd } else { SIGMA_FLOOR };
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    (eps - min).max(0.0)
}

impl LogKde {
    pub fn fit(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("no samples for density estimation".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("density estimation sample".into()));
        }
        let shift = positivity_shift(samples);
        let log_samples: Vec<f64> = samples.iter().map(|s| (s + shift).ln()).collect();
        let bandwidth = silverman_bandwidth(&log_samples);
        Ok(LogKde {
            log_samples,
            bandwidth,
            shift,
        })
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn log_samples(&self) -> &[f64] {
        &self.log_samples
    }

    /// All samples equal, or no usable bandwidth.
    fn is_degenerate(&self) -> bool {
        let first = self.log_samples[0];
        self.log_samples.iter().all(|&s| s == first)
            || !(self.bandwidth > 0.0)
            || !self.bandwidth.is_finite()
    }

    /// Density of `u = ln(x + shift)`.
    pub fn log_density(&self, u: f64) -> f64 {
        let h = self.bandwidth;
        let norm = 1.0 / ((2.0 * PI).sqrt() * h * self.log_samples.len() as f64);
        self.log_samples
            .iter()
            .map(|s| {
                let z = (u - s) / h;
                (-0.5 * z * z).exp()
            })
            .sum::<f64>()
            * norm
    }

    /// Density of the shifted score `y = x + shift`; zero for `y <= 0`.
    pub fn shifted_density(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        self.log_density(y.ln()) / y
    }

    /// Density of the raw score.
    pub fn density(&self, x: f64) -> f64 {
        self.shifted_density(x + self.shift)
    }

    /// Log-space trapezoid grid `(nodes, density values, step)`.
    fn grid(&self) -> (Vec<f64>, Vec<f64>, f64) {
        let lo = self.log_samples.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self
            .log_samples
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let a = lo - TAIL_BANDWIDTHS * self.bandwidth;
        let b = hi + TAIL_BANDWIDTHS * self.bandwidth;
        let step = (b - a) / (QUADRATURE_POINTS - 1) as f64;
        let nodes: Vec<f64> = (0..QUADRATURE_POINTS).map(|i| a + step * i as f64).collect();
        let dens = nodes.iter().map(|&u| self.log_density(u)).collect();
        (nodes, dens, step)
    }
}

fn trapezoid(values: &[f64], step: f64) -> f64 {
    let n = values.len();
    step * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1]))
}

/// Fits mean, standard deviation and the `alpha` threshold of normal scores.
pub fn fit_normalizer(normal_scores: &[f64], alpha: f64) -> Result<NormalizationStats> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level must be in (0, 1), got {alpha}"
        )));
    }
    if normal_scores.len() < MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_SAMPLES} normal scores, got {}",
            normal_scores.len()
        )));
    }
    let kde = LogKde::fit(normal_scores)?;
    if kde.is_degenerate() {
        let value = normal_scores[0];
        log::warn!("normal scores are all equal ({value}); sigma floored at {SIGMA_FLOOR}");
        return Ok(NormalizationStats {
            mu: value,
            sigma: SIGMA_FLOOR,
            tau: value,
            shift: kde.shift,
            bandwidth: 0.0,
            alpha,
        });
    }

    // Integrate the back-transformed density via the substitution y = e^u.
    let (nodes, dens, step) = kde.grid();
    let mass = trapezoid(&dens, step);
    let m1: Vec<f64> = nodes.iter().zip(&dens).map(|(u, p)| u.exp() * p).collect();
    let m2: Vec<f64> = nodes.iter().zip(&dens).map(|(u, p)| (2.0 * u).exp() * p).collect();
    let mean_y = trapezoid(&m1, step) / mass;
    let second = trapezoid(&m2, step) / mass;
    let var = (second - mean_y * mean_y).max(0.0);
    let mut sigma = var.sqrt();
    if sigma < SIGMA_FLOOR {
        log::warn!("fitted sigma {sigma} below floor; using {SIGMA_FLOOR}");
        sigma = SIGMA_FLOOR;
    }

    // Upper quantile from the cumulative trapezoid, linear within a cell.
    let target = alpha * mass;
    let mut acc = 0.0;
    let mut u_tau = nodes[nodes.len() - 1];
    for i in 1..nodes.len() {
        let cell = 0.5 * step * (dens[i - 1] + dens[i]);
        if acc + cell >= target {
            let frac = if cell > 0.0 { (target - acc) / cell } else { 0.0 };
            u_tau = nodes[i - 1] + frac * step;
            break;
        }
        acc += cell;
    }

    Ok(NormalizationStats {
        mu: mean_y - kde.shift,
        sigma,
        tau: u_tau.exp() - kde.shift,
        shift: kde.shift,
        bandwidth: kde.bandwidth,
        alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, LogNormal, Normal};
    use statrs::distribution::{ContinuousCDF, Normal as SNormal};

    fn lognormal_samples(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = LogNormal::new(0.0, 0.25).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    /// Closed-form moments and CDF of a Gaussian mixture in log space.
    fn mixture_moments(kde: &LogKde) -> (f64, f64) {
        let h2 = kde.bandwidth * kde.bandwidth;
        let n = kde.log_samples.len() as f64;
        let m1 = kde.log_samples.iter().map(|u| (u + h2 / 2.0).exp()).sum::<f64>() / n;
        let m2 = kde.log_samples.iter().map(|u| (2.0 * u + 2.0 * h2).exp()).sum::<f64>() / n;
        (m1, (m2 - m1 * m1).sqrt())
    }

    fn mixture_cdf(kde: &LogKde, u: f64) -> f64 {
        let phi = SNormal::new(0.0, 1.0).unwrap();
        kde.log_samples
            .iter()
            .map(|s| phi.cdf((u - s) / kde.bandwidth))
            .sum::<f64>()
            / kde.log_samples.len() as f64
    }

    #[test]
    fn lognormal_moments_recovered() {
        let xs = lognormal_samples(10_000, 5);
        let st = fit_normalizer(&xs, 0.95).unwrap();
        let s2 = 0.25f64 * 0.25;
        let mean = (s2 / 2.0).exp();
        let sd = ((s2.exp() - 1.0) * (s2).exp()).sqrt();
        assert_eq!(st.shift, 0.0);
        assert!(((st.mu - mean) / mean).abs() < 0.02, "mu {} vs {mean}", st.mu);
        assert!(((st.sigma - sd) / sd).abs() < 0.05, "sigma {} vs {sd}", st.sigma);
    }

    #[test]
    fn quadrature_matches_closed_form_mixture() {
        let xs = lognormal_samples(3000, 9);
        let kde = LogKde::fit(&xs).unwrap();
        let st = fit_normalizer(&xs, 0.9).unwrap();
        let (m, s) = mixture_moments(&kde);
        assert!((st.mu - m).abs() < 1e-9 * m);
        assert!((st.sigma - s).abs() < 1e-8 * s);
        let cdf = mixture_cdf(&kde, st.tau.ln());
        assert!((cdf - 0.9).abs() < 1e-6, "cdf at tau = {cdf}");
    }

    #[test]
    fn median_threshold() {
        let xs = lognormal_samples(4000, 2);
        let kde = LogKde::fit(&xs).unwrap();
        let st = fit_normalizer(&xs, 0.5).unwrap();
        assert!((mixture_cdf(&kde, (st.tau + st.shift).ln()) - 0.5).abs() < 1e-6);
        // lognormal(0, .25) median is 1
        assert!((st.tau - 1.0).abs() < 0.02);
    }

    #[test]
    fn negative_scores_are_shifted() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let d = Normal::new(-30.0, 1.5).unwrap();
        let xs: Vec<f64> = (0..5000).map(|_| d.sample(&mut rng)).collect();
        let st = fit_normalizer(&xs, 0.95).unwrap();
        assert!(st.shift > 30.0);
        assert!((st.mu + 30.0).abs() < 0.1, "mu {}", st.mu);
        assert!((st.sigma - 1.5).abs() < 0.1, "sigma {}", st.sigma);
        let kde = LogKde::fit(&xs).unwrap();
        assert_eq!(kde.shifted_density(0.0), 0.0);
        assert_eq!(kde.density(-st.shift - 1.0), 0.0);
    }

    #[test]
    fn translation_equivariant_when_shifted() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let d = Normal::new(-10.0, 2.0).unwrap();
        let xs: Vec<f64> = (0..2000).map(|_| d.sample(&mut rng)).collect();
        let c = 4.25;
        let ys: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let a = fit_normalizer(&xs, 0.95).unwrap();
        let b = fit_normalizer(&ys, 0.95).unwrap();
        assert!((b.mu - a.mu - c).abs() < 1e-9);
        assert!((b.sigma - a.sigma).abs() < 1e-9);
        assert!((b.tau - a.tau - c).abs() < 1e-9);
    }

    #[test]
    fn degenerate_samples_floor_sigma() {
        let st = fit_normalizer(&[2.5; 40], 0.95).unwrap();
        assert_eq!(st.sigma, SIGMA_FLOOR);
        assert_eq!(st.mu, 2.5);
        assert!(st.validate().is_ok());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(fit_normalizer(&[1.0; 10], 0.95).is_err());
        assert!(fit_normalizer(&lognormal_samples(100, 1), 1.0).is_err());
        let mut xs = lognormal_samples(100, 1);
        xs[3] = f64::NAN;
        assert!(fit_normalizer(&xs, 0.9).is_err());
    }

    #[test]
    fn normalize_is_affine() {
        let st = NormalizationStats {
            mu: 2.0,
            sigma: 0.5,
            tau: 3.0,
            shift: 0.0,
            bandwidth: 0.1,
            alpha: 0.95,
        };
        assert_eq!(normalize(2.0, &st), 0.0);
        assert_eq!(normalize(2.5, &st), 1.0);
        assert_eq!(st.normalized_tau(), 2.0);
    }
}
