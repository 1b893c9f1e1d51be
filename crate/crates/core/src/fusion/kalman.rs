//! Five-state linear Kalman filter over the four normalized expert scores.
//!
//! State `[x_ffp, x_str, x_int, x_beh, s]`: the first four follow random walks
//! observed directly, and `s` is driven by their equal-weight average.

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};

pub type Mat5 = SMatrix<f64, 5, 5>;
pub type Vec5 = SVector<f64, 5>;
pub type Mat4x5 = SMatrix<f64, 4, 5>;
pub type Vec4 = SVector<f64, 4>;

pub const PROCESS_NOISE: f64 = 0.1;
pub const INITIAL_COVARIANCE: f64 = 0.1;

pub fn transition() -> Mat5 {
    let mut a = Mat5::identity();
    a[(4, 4)] = 0.0;
    for j in 0..4 {
        a[(4, j)] = 0.25;
    }
    a
}

pub fn observation() -> Mat4x5 {
    Mat4x5::identity()
}

pub fn process_noise() -> Mat5 {
    Mat5::identity() * PROCESS_NOISE
}

pub fn observation_noise() -> SMatrix<f64, 4, 4> {
    SMatrix::<f64, 4, 4>::identity()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState {
    pub x: Vec5,
    pub p: Mat5,
}

fn check_obs(obs: &[f64; 4]) -> Result<()> {
    if let Some(i) = obs.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("observation component {i}")));
    }
    Ok(())
}

impl KalmanState {
    /// Initial estimate from the first observation: the four scores and their mean.
    pub fn initialize(obs: &[f64; 4]) -> Result<Self> {
        check_obs(obs)?;
        let s = 0.25 * obs.iter().sum::<f64>();
        Ok(KalmanState {
            x: Vec5::new(obs[0], obs[1], obs[2], obs[3], s),
            p: Mat5::identity() * INITIAL_COVARIANCE,
        })
    }

    pub fn score(&self) -> f64 {
        self.x[4]
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.x[0], self.x[1], self.x[2], self.x[3], self.x[4]]
    }
}

/// One predict/update cycle.
pub fn kalman_step(state: &KalmanState, obs: &[f64; 4]) -> Result<KalmanState> {
    check_obs(obs)?;
    let a = transition();
    let h = observation();
    let x_prior = a * state.x;
    let p_prior = a * state.p * a.transpose() + process_noise();

    let y = Vec4::from_column_slice(obs);
    let innovation = y - h * x_prior;
    let s = h * p_prior * h.transpose() + observation_noise();
    let s_inv = s
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("innovation covariance is not positive definite".into()))?
        .inverse();
    let gain = p_prior * h.transpose() * s_inv;
    let x = x_prior + gain * innovation;
    let p = (Mat5::identity() - gain * h) * p_prior;
    Ok(KalmanState {
        x,
        p: (p + p.transpose()) * 0.5,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn constant_observations_converge() {
        let c = 1.7;
        let mut st = KalmanState::initialize(&[0.0; 4]).unwrap();
        for _ in 0..100 {
            st = kalman_step(&st, &[c; 4]).unwrap();
        }
        assert!((st.score() - c).abs() < 1e-3, "{}", st.score());
    }

    #[test]
    fn covariance_stays_symmetric_psd() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut st = KalmanState::initialize(&[0.3, -0.2, 1.0, 0.0]).unwrap();
        for _ in 0..500 {
            let obs = [(); 4].map(|_| rng.gen_range(-3.0..3.0));
            st = kalman_step(&st, &obs).unwrap();
            let asym = (st.p - st.p.transpose()).amax();
            assert!(asym < 1e-12);
            let eig = st.p.symmetric_eigenvalues();
            assert!(eig.iter().all(|&e| e > -1e-12), "{eig:?}");
        }
    }

    #[test]
    fn initialization_averages_observations() {
        let st = KalmanState::initialize(&[1.0, 2.0, 3.0, 6.0]).unwrap();
        assert_eq!(st.score(), 3.0);
        assert_eq!(st.p, Mat5::identity() * 0.1);
    }

    #[test]
    fn rejects_non_finite_observation() {
        let st = KalmanState::initialize(&[0.0; 4]).unwrap();
        assert!(kalman_step(&st, &[0.0, f64::NAN, 0.0, 0.0]).is_err());
        assert!(KalmanState::initialize(&[f64::INFINITY, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn linear_in_observations() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let obs: Vec<[f64; 4]> = (0..60)
            .map(|_| [(); 4].map(|_| rng.gen_range(-2.0..2.0)))
            .collect();
        let k = -2.5;
        let run = |scale: f64| {
            let scaled: Vec<[f64; 4]> = obs.iter().map(|o| o.map(|v| v * scale)).collect();
            let mut st = KalmanState::initialize(&scaled[0]).unwrap();
            let mut out = vec![st.score()];
            for o in &scaled[1..] {
                st = kalman_step(&st, o).unwrap();
                out.push(st.score());
            }
            out
        };
        for (a, b) in run(1.0).iter().zip(run(k)) {
            assert!((a * k - b).abs() < 1e-10);
        }
    }
}
