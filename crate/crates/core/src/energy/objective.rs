//! Sum-MSE as a function of the training power, with the channel and the
//! normalized precoder held fixed.
//!
//! Writing `Q = P_D Q~` with `tr(Q~) <= 1` and `B = H V Q~ V^H H^H`,
//!
//! ```text
//! R(P_T)    = P_D(P_T) B + sigma_eff2(P_T) I
//! SMSE(P_T) = L - M + sigma_eff2(P_T) tr(R^-1)
//! ```
//!
//! and the derivative factors as
//! `P_D tr(R^-1 B R^-1) (D_sigma + M sigma_eff2 / (n_D P_D))`.

use crate::error::{Error, Result};
use crate::linalg::{hpd_inverse, scale_columns, scaled_identity, trace_re, CMatrix};

use super::{effective_noise_power, effective_noise_slope, EnergyParams};

/// Channel, unit-norm beamformers and power shares held constant while the
/// training power varies.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedDesign {
    /// Virtual-uplink channel `H`, `M x N`.
    pub channel: CMatrix,
    /// Block-diagonal transmit beamformers `V`, `N x L`.
    pub beamformers: CMatrix,
    /// Diagonal of `Q~`, summing to at most one.
    pub power_shares: Vec<f64>,
}

impl FixedDesign {
    pub fn new(channel: CMatrix, beamformers: CMatrix, power_shares: Vec<f64>) -> Result<Self> {
        if channel.ncols() != beamformers.nrows() || beamformers.ncols() != power_shares.len() {
            return Err(Error::Dimension(format!(
                "H is {}x{}, V is {}x{}, {} power shares",
                channel.nrows(),
                channel.ncols(),
                beamformers.nrows(),
                beamformers.ncols(),
                power_shares.len()
            )));
        }
        let total: f64 = power_shares.iter().sum();
        if power_shares.iter().any(|&q| !(q >= 0.0)) || total > 1.0 + 1e-12 {
            return Err(Error::Domain(format!("power shares must be non-negative with sum <= 1, got {total}")));
        }
        Ok(FixedDesign { channel, beamformers, power_shares })
    }

    pub fn antennas(&self) -> usize {
        self.channel.nrows()
    }

    pub fn streams(&self) -> usize {
        self.beamformers.ncols()
    }

    /// `B = H V Q~ V^H H^H`.
    pub fn signal_covariance(&self) -> CMatrix {
        let sqrt_q: Vec<f64> = self.power_shares.iter().map(|q| q.sqrt()).collect();
        let a = &self.channel * scale_columns(&self.beamformers, &sqrt_q);
        &a * a.adjoint()
    }

    fn check(&self, params: &EnergyParams) -> Result<()> {
        if self.antennas() != params.antennas {
            return Err(Error::Dimension(format!(
                "design has {} antennas, parameters {}",
                self.antennas(),
                params.antennas
            )));
        }
        Ok(())
    }
}

/// Quantities shared by the objective and its derivative at one point.
struct Evaluation {
    sigma_eff2: f64,
    data_power: f64,
    r_inv: CMatrix,
}

fn evaluate(design: &FixedDesign, params: &EnergyParams, b: &CMatrix, training_power: f64) -> Result<Evaluation> {
    design.check(params)?;
    let sigma_eff2 = effective_noise_power(params, training_power)?;
    let data_power = params.data_power(training_power);
    let r = b.scale(data_power) + scaled_identity(params.antennas, sigma_eff2);
    Ok(Evaluation { sigma_eff2, data_power, r_inv: hpd_inverse(&r)? })
}

/// `L - M + sigma_eff2 tr(R^-1)` at training power `P_T`.
pub fn smse_of_training_power(design: &FixedDesign, params: &EnergyParams, training_power: f64) -> Result<f64> {
    let b = design.signal_covariance();
    let ev = evaluate(design, params, &b, training_power)?;
    Ok(design.streams() as f64 - params.antennas as f64 + ev.sigma_eff2 * trace_re(&ev.r_inv))
}

fn check_interior(params: &EnergyParams, training_power: f64) -> Result<()> {
    let top = params.max_training_power();
    if !(training_power > 0.0 && training_power < top) {
        return Err(Error::Domain(format!(
            "derivative needs 0 < P_T < {top}, got {training_power}"
        )));
    }
    Ok(())
}

/// `dSMSE/dP_T` through the factored stationarity form.
pub fn smse_derivative(design: &FixedDesign, params: &EnergyParams, training_power: f64) -> Result<f64> {
    check_interior(params, training_power)?;
    let b = design.signal_covariance();
    let ev = evaluate(design, params, &b, training_power)?;
    let weight = ev.data_power * trace_re(&(&ev.r_inv * &b * &ev.r_inv));
    let m = params.antennas as f64;
    let factor =
        effective_noise_slope(params, training_power) + m * ev.sigma_eff2 / (params.n_data as f64 * ev.data_power);
    Ok(weight * factor)
}

/// `dSMSE/dP_T = D_sigma tr(R^-1) + sigma_eff2 D_tr` without factoring,
/// with `D_tr = -tr(R^-1 (dR/dP_T) R^-1)` taken directly from
/// `dR/dP_T = -(M / n_D) B + D_sigma I`.
pub fn smse_derivative_expanded(design: &FixedDesign, params: &EnergyParams, training_power: f64) -> Result<f64> {
    check_interior(params, training_power)?;
    let b = design.signal_covariance();
    let ev = evaluate(design, params, &b, training_power)?;
    let m = params.antennas as f64;
    let d_sigma = effective_noise_slope(params, training_power);
    let dr = b.scale(-m / params.n_data as f64) + scaled_identity(params.antennas, d_sigma);
    let d_tr = -trace_re(&(&ev.r_inv * dr * &ev.r_inv));
    Ok(d_sigma * trace_re(&ev.r_inv) + ev.sigma_eff2 * d_tr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, C64};

    fn scalar_design(q: f64) -> FixedDesign {
        let one = CMatrix::from_element(1, 1, c(1.0, 0.0));
        FixedDesign::new(one.clone(), one, vec![q]).unwrap()
    }

    #[test]
    fn zero_power_gives_stream_count() {
        let p = EnergyParams::new(100.0, 1, 50, 1.0, 1.0).unwrap();
        let d = scalar_design(0.0);
        for pt in [0.0, 10.0, 55.0, 100.0] {
            assert!((smse_of_training_power(&d, &p, pt).unwrap() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn all_energy_on_pilots_gives_stream_count() {
        let p = EnergyParams::new(40.0, 2, 20, 0.5, 1.0).unwrap();
        let h = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.2), c(0.1, 0.0), c(-0.3, 0.5), c(0.9, -0.4)]);
        let v = CMatrix::identity(2, 2).map(|x: C64| x);
        let d = FixedDesign::new(h, v, vec![0.5, 0.5]).unwrap();
        let smse = smse_of_training_power(&d, &p, 20.0).unwrap();
        assert!((smse - 2.0).abs() < 1e-13);
    }

    #[test]
    fn scalar_closed_form() {
        // |h| = 1, q~ = 1: SMSE = sigma_eff2 / (P_D + sigma_eff2)
        let p = EnergyParams::new(100.0, 1, 50, 1.0, 1.0).unwrap();
        let d = scalar_design(1.0);
        for pt in [0.5, 3.0, 40.0] {
            let s = effective_noise_power(&p, pt).unwrap();
            let pd = p.data_power(pt);
            let expected = s / (pd + s);
            assert!((smse_of_training_power(&d, &p, pt).unwrap() - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn factored_and_expanded_derivatives_agree() {
        let p = EnergyParams::new(300.0, 2, 150, 0.7, 1.2).unwrap();
        let h = CMatrix::from_row_slice(2, 3, &[c(1.0, 0.2), c(0.1, 0.0), c(0.4, 0.4), c(-0.3, 0.5), c(0.9, -0.4), c(0.0, 1.0)]);
        let s = (0.5f64).sqrt();
        let v = CMatrix::from_row_slice(3, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(s, 0.0), c(0.0, 0.0), c(0.0, s)]);
        let d = FixedDesign::new(h, v, vec![0.3, 0.7]).unwrap();
        for pt in [0.1, 1.0, 10.0, 100.0, 149.0] {
            let a = smse_derivative(&d, &p, pt).unwrap();
            let b = smse_derivative_expanded(&d, &p, pt).unwrap();
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-12), "{a} vs {b} at {pt}");
        }
    }

    #[test]
    fn endpoints_rejected() {
        let p = EnergyParams::new(100.0, 1, 50, 1.0, 1.0).unwrap();
        let d = scalar_design(1.0);
        assert!(matches!(smse_derivative(&d, &p, 0.0), Err(Error::Domain(_))));
        assert!(matches!(smse_derivative(&d, &p, 100.0), Err(Error::Domain(_))));
    }

    #[test]
    fn bad_shares_rejected() {
        let one = CMatrix::from_element(1, 1, c(1.0, 0.0));
        assert!(FixedDesign::new(one.clone(), one.clone(), vec![1.5]).is_err());
        assert!(FixedDesign::new(one.clone(), one, vec![0.5, 0.5]).is_err());
    }
}
