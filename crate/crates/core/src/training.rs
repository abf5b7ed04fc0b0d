//! Pilot design, the training phase, and linear MMSE channel estimation.
//!
//! Training is handled per receive antenna: each row `g` of the downlink
//! matrix sees `y = g X_T + z`, and the estimate is `g_hat = y A0` with
//! `A0 = (X_T^H X_T + rho I)^-1 X_T^H`. Stacking the rows gives
//! `G_hat = Y_T A0` for all antennas at once.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{draw_channel_with, ChannelRealization};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::linalg::{c, frobenius_sq, hpd_inverse, max_abs_diff, scaled_identity, CMatrix, C64};
use crate::rng::{complex_gaussian_matrix, derive_key, stream, Purpose};

/// Relative tolerance for the pilot energy and orthogonality checks.
pub const PILOT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotKind {
    ScaledIdentity,
    ScaledDft,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMatrix {
    pilots: CMatrix,
    energy: f64,
    kind: PilotKind,
}

impl TrainingMatrix {
    /// `M x n_T` pilot matrix with orthogonal rows and total energy `energy`.
    pub fn build(kind: PilotKind, energy: f64, antennas: usize, n_train: usize) -> Result<Self> {
        if !(energy.is_finite() && energy >= 0.0) {
            return Err(Error::Domain(format!("training energy {energy}")));
        }
        if antennas == 0 {
            return Err(Error::Domain("zero antennas".into()));
        }
        if n_train < antennas {
            return Err(Error::PilotRank { n_train, antennas });
        }
        let m = antennas as f64;
        let mut pilots = CMatrix::zeros(antennas, n_train);
        match kind {
            PilotKind::ScaledIdentity => {
                let a = (energy / m).sqrt();
                for i in 0..antennas {
                    pilots[(i, i)] = c(a, 0.0);
                }
            }
            PilotKind::ScaledDft => {
                let a = energy.sqrt() / m;
                for r in 0..antennas {
                    for k in 0..antennas {
                        // reduce the exponent mod M to keep the phase small
                        let idx = (r * k) % antennas;
                        pilots[(r, k)] = C64::from_polar(a, -2.0 * PI * idx as f64 / m);
                    }
                }
            }
        }
        let x = TrainingMatrix { pilots, energy, kind };
        x.check()?;
        Ok(x)
    }

    pub fn pilots(&self) -> &CMatrix {
        &self.pilots
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn kind(&self) -> PilotKind {
        self.kind
    }

    pub fn antennas(&self) -> usize {
        self.pilots.nrows()
    }

    pub fn n_train(&self) -> usize {
        self.pilots.ncols()
    }

    /// `tr(X^H X) <= E_T` and `X X^H = (E_T / M) I`.
    pub fn check(&self) -> Result<()> {
        let m = self.antennas();
        let tol = PILOT_TOLERANCE * self.energy.max(f64::MIN_POSITIVE);
        let used = frobenius_sq(&self.pilots);
        if used > self.energy + tol {
            return Err(Error::Numerical(format!("pilot energy {used} exceeds {}", self.energy)));
        }
        let gram = &self.pilots * self.pilots.adjoint();
        let target = scaled_identity(m, self.energy / m as f64);
        let tol = PILOT_TOLERANCE * (self.energy / m as f64).max(f64::MIN_POSITIVE);
        if max_abs_diff(&gram, &target) > tol {
            return Err(Error::Numerical("pilot rows are not orthogonal with equal energy".into()));
        }
        Ok(())
    }
}

/// Per-coefficient MMSE error variance `(1/sigma_h2 + E_T / (M sigma_n2))^-1`.
pub fn estimation_error_variance(energy: f64, antennas: usize, sigma_h2: f64, sigma_n2: f64) -> Result<f64> {
    if !(energy.is_finite() && energy >= 0.0) {
        return Err(Error::Domain(format!("training energy {energy}")));
    }
    if antennas == 0 || !(sigma_h2 > 0.0) || !(sigma_n2 > 0.0) {
        return Err(Error::Domain("antennas and variances must be positive".into()));
    }
    Ok(1.0 / (1.0 / sigma_h2 + energy / (antennas as f64 * sigma_n2)))
}

/// Received pilots `Y_T = G X_T + Z`, one row per receive antenna.
pub fn simulate_training_with<R: Rng + ?Sized>(
    channel: &ChannelRealization,
    pilots: &TrainingMatrix,
    sigma_n2: f64,
    rng: &mut R,
) -> Result<CMatrix> {
    let g = channel.downlink();
    if g.ncols() != pilots.antennas() {
        return Err(Error::Dimension(format!(
            "channel has {} transmit antennas, pilots {}",
            g.ncols(),
            pilots.antennas()
        )));
    }
    if !(sigma_n2.is_finite() && sigma_n2 >= 0.0) {
        return Err(Error::Domain(format!("noise variance {sigma_n2}")));
    }
    let noise = complex_gaussian_matrix(rng, g.nrows(), pilots.n_train(), sigma_n2);
    Ok(g * pilots.pilots() + noise)
}

pub fn simulate_training(
    channel: &ChannelRealization,
    pilots: &TrainingMatrix,
    sigma_n2: f64,
    seed: u64,
) -> Result<CMatrix> {
    simulate_training_with(channel, pilots, sigma_n2, &mut stream(seed, Purpose::TrainingNoise))
}

/// MMSE channel estimate with its per-coefficient error variance.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    pub estimate: ChannelRealization,
    pub sigma_e2: f64,
    pub energy: f64,
}

/// Linear MMSE estimate of every downlink row from the received pilots.
pub fn mmse_estimate(
    received: &CMatrix,
    pilots: &TrainingMatrix,
    rx_antennas: Vec<usize>,
    sigma_h2: f64,
    sigma_n2: f64,
) -> Result<ChannelEstimate> {
    if received.ncols() != pilots.n_train() {
        return Err(Error::Dimension(format!(
            "received block has {} columns, pilots {}",
            received.ncols(),
            pilots.n_train()
        )));
    }
    let sigma_e2 = estimation_error_variance(pilots.energy(), pilots.antennas(), sigma_h2, sigma_n2)?;
    let x = pilots.pilots();
    let normal = x.adjoint() * x + scaled_identity(pilots.n_train(), sigma_n2 / sigma_h2);
    let a0 = hpd_inverse(&normal)? * x.adjoint();
    let estimate = ChannelRealization::from_downlink(received * a0, rx_antennas)?;
    Ok(ChannelEstimate { estimate, sigma_e2, energy: pilots.energy() })
}

/// Full training phase for one block: pilots, noisy reception, estimate.
pub fn train_and_estimate<R: Rng + ?Sized>(
    channel: &ChannelRealization,
    kind: PilotKind,
    energy: f64,
    cfg: &SystemConfig,
    rng: &mut R,
) -> Result<ChannelEstimate> {
    let pilots = TrainingMatrix::build(kind, energy, cfg.antennas, cfg.n_train)?;
    let y = simulate_training_with(channel, &pilots, cfg.sigma_n2, rng)?;
    mmse_estimate(&y, &pilots, cfg.rx_antennas.clone(), cfg.sigma_h2, cfg.sigma_n2)
}

/// Monte-Carlo summary of the estimation error `G_hat - G`.
#[derive(Debug, Clone)]
pub struct ErrorStatistics {
    pub trials: usize,
    /// Mean `|g_hat - g|^2` over all coefficients and trials.
    pub mean_sq_error: f64,
    /// Empirical covariance of the stacked error vector (row-major over `G`).
    pub covariance: CMatrix,
    /// Mean of `g_hat * conj(g_hat - g)` over all coefficients and trials.
    pub estimate_error_cross: C64,
}

impl ErrorStatistics {
    /// Largest off-diagonal covariance magnitude.
    pub fn max_off_diagonal(&self) -> f64 {
        let n = self.covariance.nrows();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    worst = worst.max(self.covariance[(i, j)].norm());
                }
            }
        }
        worst
    }
}

pub fn estimation_error_statistics(
    cfg: &SystemConfig,
    kind: PilotKind,
    energy: f64,
    trials: usize,
    seed: u64,
) -> Result<ErrorStatistics> {
    if trials == 0 {
        return Err(Error::Domain("at least one trial is required".into()));
    }
    let dim = cfg.total_rx() * cfg.antennas;
    let mut covariance = CMatrix::zeros(dim, dim);
    let mut sq = 0.0;
    let mut cross = C64::new(0.0, 0.0);
    for t in 0..trials {
        let key = derive_key(&[seed, t as u64]);
        let h = draw_channel_with(cfg, &mut stream(key, Purpose::Channel))?;
        let est = train_and_estimate(&h, kind, energy, cfg, &mut stream(key, Purpose::TrainingNoise))?;
        let e = est.estimate.downlink() - h.downlink();
        let v = crate::linalg::CVector::from_iterator(dim, e.transpose().iter().copied());
        covariance += &v * v.adjoint();
        sq += frobenius_sq(&e);
        cross += est
            .estimate
            .downlink()
            .iter()
            .zip(e.iter())
            .map(|(a, b)| a * b.conj())
            .sum::<C64>();
    }
    let t = trials as f64;
    Ok(ErrorStatistics {
        trials,
        mean_sq_error: sq / (t * dim as f64),
        covariance: covariance.unscale(t),
        estimate_error_cross: cross / (t * dim as f64),
    })
}

/// Mean `|g_hat - g|^2` with scaled-identity pilots.
pub fn empirical_error_variance(cfg: &SystemConfig, energy: f64, trials: usize, seed: u64) -> Result<f64> {
    Ok(estimation_error_statistics(cfg, PilotKind::ScaledIdentity, energy, trials, seed)?.mean_sq_error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::draw_channel;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn identity_pilots_unit_scale() {
        let x = TrainingMatrix::build(PilotKind::ScaledIdentity, 4.0, 4, 4).unwrap();
        assert!(max_abs_diff(x.pilots(), &scaled_identity(4, 1.0)) < 1e-15);
    }

    #[test]
    fn dft_pilots_two_antennas() {
        let x = TrainingMatrix::build(PilotKind::ScaledDft, 4.0, 2, 2).unwrap();
        for z in x.pilots().iter() {
            assert!(approx(z.norm(), 1.0, 1e-14));
        }
        let gram = x.pilots() * x.pilots().adjoint();
        assert!(max_abs_diff(&gram, &scaled_identity(2, 2.0)) < 1e-14);
    }

    #[test]
    fn zero_energy_pilots() {
        let x = TrainingMatrix::build(PilotKind::ScaledIdentity, 0.0, 4, 4).unwrap();
        assert_eq!(frobenius_sq(x.pilots()), 0.0);
    }

    #[test]
    fn padded_pilots_keep_invariants() {
        for kind in [PilotKind::ScaledIdentity, PilotKind::ScaledDft] {
            let x = TrainingMatrix::build(kind, 7.3, 3, 5).unwrap();
            assert_eq!(x.pilots().shape(), (3, 5));
            x.check().unwrap();
        }
    }

    #[test]
    fn short_pilots_rejected() {
        assert_eq!(
            TrainingMatrix::build(PilotKind::ScaledDft, 1.0, 4, 3),
            Err(Error::PilotRank { n_train: 3, antennas: 4 })
        );
    }

    #[test]
    fn error_variance_values() {
        assert_eq!(estimation_error_variance(0.0, 4, 1.0, 1.0).unwrap(), 1.0);
        assert!(approx(estimation_error_variance(55.84, 4, 1.0, 1.0).unwrap(), 1.0 / 14.96, 1e-15));
        assert!(approx(estimation_error_variance(4.0, 4, 2.0, 1.0).unwrap(), 2.0 / 3.0, 1e-15));
        assert!(matches!(estimation_error_variance(-1.0, 4, 1.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn error_variance_decreasing() {
        let mut prev = f64::INFINITY;
        for i in 0..50 {
            let v = estimation_error_variance(i as f64 * 0.7, 3, 1.3, 0.4).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn noiseless_training_is_exact() {
        let cfg = SystemConfig::new(4, vec![2, 2], vec![1, 1], 10, 10.0, 1.0, 1.0).unwrap();
        let h = draw_channel(&cfg, 3).unwrap();
        let x = TrainingMatrix::build(PilotKind::ScaledDft, 8.0, 4, 4).unwrap();
        let y = simulate_training(&h, &x, 1e-30, 1).unwrap();
        assert!(max_abs_diff(&y, &(h.downlink() * x.pilots())) < 1e-13);
        let est = mmse_estimate(&y, &x, vec![2, 2], 1.0, 1e-30).unwrap();
        assert!(max_abs_diff(est.estimate.downlink(), h.downlink()) < 1e-12);
    }

    #[test]
    fn zero_channel_gives_pure_noise() {
        let g = CMatrix::zeros(2, 4);
        let h = ChannelRealization::from_downlink(g, vec![2]).unwrap();
        let x = TrainingMatrix::build(PilotKind::ScaledIdentity, 4.0, 4, 4000).unwrap();
        let y = simulate_training(&h, &x, 0.5, 9).unwrap();
        let var = frobenius_sq(&y) / (y.nrows() * y.ncols()) as f64;
        assert!(approx(var, 0.5, 0.025), "{var}");
    }

    #[test]
    fn training_reproducible() {
        let cfg = SystemConfig::new(2, vec![2], vec![1], 10, 10.0, 1.0, 1.0).unwrap();
        let h = draw_channel(&cfg, 3).unwrap();
        let x = TrainingMatrix::build(PilotKind::ScaledIdentity, 2.0, 2, 2).unwrap();
        assert_eq!(simulate_training(&h, &x, 1.0, 5).unwrap(), simulate_training(&h, &x, 1.0, 5).unwrap());
    }

    #[test]
    fn zero_energy_estimate_is_prior_mean() {
        let x = TrainingMatrix::build(PilotKind::ScaledIdentity, 0.0, 4, 4).unwrap();
        let y = CMatrix::from_element(2, 4, c(0.3, -1.0));
        let est = mmse_estimate(&y, &x, vec![2], 1.0, 1.0).unwrap();
        assert_eq!(frobenius_sq(est.estimate.downlink()), 0.0);
        assert_eq!(est.sigma_e2, 1.0);
    }

    #[test]
    fn scalar_estimate_by_hand() {
        // x = 1, rho = 1: g_hat = y x* / (|x|^2 + 1) = 2 / 2
        let x = TrainingMatrix::build(PilotKind::ScaledIdentity, 1.0, 1, 1).unwrap();
        let y = CMatrix::from_element(1, 1, c(2.0, 0.0));
        let est = mmse_estimate(&y, &x, vec![1], 1.0, 1.0).unwrap();
        assert!((est.estimate.downlink()[(0, 0)] - c(1.0, 0.0)).norm() < 1e-15);
        assert_eq!(est.sigma_e2, 0.5);
    }

    #[test]
    fn matrix_estimator_matches_scalar_shrinkage() {
        // orthogonal pilots: (X^H X + rho I)^-1 X^H = X^H / (E_T / M + rho)
        let cfg = SystemConfig::new(3, vec![2], vec![1], 10, 10.0, 1.5, 0.7).unwrap();
        let h = draw_channel(&cfg, 21).unwrap();
        for kind in [PilotKind::ScaledIdentity, PilotKind::ScaledDft] {
            let x = TrainingMatrix::build(kind, 6.0, 3, 5).unwrap();
            let y = simulate_training(&h, &x, 0.7, 4).unwrap();
            let est = mmse_estimate(&y, &x, vec![2], 1.5, 0.7).unwrap();
            let shrink = (&y * x.pilots().adjoint()).unscale(6.0 / 3.0 + 0.7 / 1.5);
            assert!(max_abs_diff(est.estimate.downlink(), &shrink) < 1e-13);
        }
    }

    #[test]
    fn empirical_variance_zero_energy() {
        let cfg = SystemConfig::new(2, vec![2], vec![1], 10, 10.0, 1.0, 1.0).unwrap();
        let v = empirical_error_variance(&cfg, 0.0, 5000, 1).unwrap();
        assert!(approx(v, 1.0, 0.05), "{v}");
    }

    #[test]
    fn empirical_variance_matches_closed_form() {
        // 25000 trials x 4 coefficients = 1e5 samples, relative standard error ~0.3%
        let cfg = SystemConfig::new(4, vec![1], vec![1], 10, 10.0, 1.0, 1.0).unwrap();
        let v = empirical_error_variance(&cfg, 40.0, 25_000, 2).unwrap();
        let expected = 1.0 / 11.0;
        assert!((v / expected - 1.0).abs() < 0.02, "{v} vs {expected}");
    }

    #[test]
    fn more_energy_lower_empirical_error() {
        let cfg = SystemConfig::new(4, vec![2], vec![1], 10, 10.0, 1.0, 1.0).unwrap();
        let lo = empirical_error_variance(&cfg, 10.0, 3000, 8).unwrap();
        let hi = empirical_error_variance(&cfg, 20.0, 3000, 8).unwrap();
        assert!(hi < lo);
    }

    #[test]
    fn identity_and_dft_pilots_agree_statistically() {
        let cfg = SystemConfig::new(4, vec![2], vec![1], 10, 10.0, 1.0, 1.0).unwrap();
        let a = estimation_error_statistics(&cfg, PilotKind::ScaledIdentity, 12.0, 8000, 5).unwrap();
        let b = estimation_error_statistics(&cfg, PilotKind::ScaledDft, 12.0, 8000, 6).unwrap();
        let expected = estimation_error_variance(12.0, 4, 1.0, 1.0).unwrap();
        // each mean is over 64000 exponential samples: relative SE ~0.4%
        assert!((a.mean_sq_error / expected - 1.0).abs() < 0.02);
        assert!((b.mean_sq_error / expected - 1.0).abs() < 0.02);
    }

    #[test]
    fn error_is_white_and_orthogonal_to_estimate() {
        let cfg = SystemConfig::new(2, vec![2], vec![1], 10, 10.0, 1.0, 1.0).unwrap();
        let trials = 20_000;
        let stats = estimation_error_statistics(&cfg, PilotKind::ScaledDft, 3.0, trials, 17).unwrap();
        let s2 = estimation_error_variance(3.0, 2, 1.0, 1.0).unwrap();
        let se = s2 / (trials as f64).sqrt();
        for i in 0..4 {
            assert!((stats.covariance[(i, i)].re - s2).abs() < 4.0 * se);
        }
        assert!(stats.max_off_diagonal() < 4.0 * se);
        // E[g_hat conj(e)] = 0; each term has standard deviation sqrt((sigma_h2 - s2) s2)
        let cross_se = ((1.0 - s2) * s2).sqrt() / ((trials * 4) as f64).sqrt();
        assert!(stats.estimate_error_cross.norm() < 4.0 * cross_se);
    }
}
