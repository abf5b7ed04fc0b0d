//! Splitting a block's energy budget between pilots and data.
//!
//! With MMSE estimation of i.i.d. channels the optimal pilot energy depends
//! only on `(E_max, M, n_D, sigma_n2, sigma_h2)`:
//!
//! ```text
//! E_T* = (E_max sqrt(M) - rho M sqrt(n_D)) / (sqrt(n_D) + sqrt(M))   if E_max > rho sqrt(M n_D)
//!      = 0                                                           otherwise
//! ```
//!
//! with `rho = sigma_n2 / sigma_h2`. The [`oracle`] submodule checks this
//! against brute-force minimization of the sum-MSE over the training power.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::training::estimation_error_variance;

pub mod objective;
pub mod oracle;

/// Scalar parameters the allocation depends on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    pub e_max: f64,
    pub antennas: usize,
    pub n_train: usize,
    pub n_data: usize,
    pub sigma_n2: f64,
    pub sigma_h2: f64,
}

impl EnergyParams {
    /// Parameters with `n_T = M`.
    pub fn new(e_max: f64, antennas: usize, n_data: usize, sigma_n2: f64, sigma_h2: f64) -> Result<Self> {
        let p = EnergyParams { e_max, antennas, n_train: antennas, n_data, sigma_n2, sigma_h2 };
        p.validate()?;
        Ok(p)
    }

    pub fn from_config(cfg: &SystemConfig) -> Self {
        EnergyParams {
            e_max: cfg.e_max,
            antennas: cfg.antennas,
            n_train: cfg.n_train,
            n_data: cfg.n_data(),
            sigma_n2: cfg.sigma_n2,
            sigma_h2: cfg.sigma_h2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.antennas == 0 || self.n_data == 0 {
            return Err(Error::Domain("M and n_D must be positive".into()));
        }
        if self.n_train < self.antennas {
            return Err(Error::Domain("n_T must be at least M".into()));
        }
        if !(self.sigma_n2.is_finite() && self.sigma_n2 > 0.0 && self.sigma_h2.is_finite() && self.sigma_h2 > 0.0) {
            return Err(Error::Domain("variances must be positive".into()));
        }
        if !(self.e_max.is_finite() && self.e_max >= 0.0) {
            return Err(Error::Domain(format!("energy budget {}", self.e_max)));
        }
        Ok(())
    }

    pub fn rho(&self) -> f64 {
        self.sigma_n2 / self.sigma_h2
    }

    pub fn block_length(&self) -> usize {
        self.n_train + self.n_data
    }

    /// Budget at or below which no pilot energy is spent.
    pub fn threshold_energy(&self) -> f64 {
        self.rho() * ((self.antennas * self.n_data) as f64).sqrt()
    }

    /// Largest admissible training power, `E_max / M`.
    pub fn max_training_power(&self) -> f64 {
        self.e_max / self.antennas as f64
    }

    /// Per-symbol data power left after spending `M * P_T` on pilots.
    pub fn data_power(&self, training_power: f64) -> f64 {
        ((self.e_max - training_power * self.antennas as f64) / self.n_data as f64).max(0.0)
    }
}

/// How a block's energy is divided between pilots and data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergySplit {
    pub training_energy: f64,
    pub data_energy: f64,
    /// `E_T / M`.
    pub training_power: f64,
    /// `E_D / n_D`.
    pub data_power: f64,
    /// `sigma_n2 + P_D sigma_e2(E_T)`.
    pub sigma_eff2: f64,
    pub below_threshold: bool,
}

impl EnergySplit {
    /// Split for a given pilot energy `E_T` in `[0, E_max]`.
    pub fn from_training_energy(params: &EnergyParams, training_energy: f64) -> Result<Self> {
        params.validate()?;
        if !(training_energy.is_finite() && (0.0..=params.e_max).contains(&training_energy)) {
            return Err(Error::Domain(format!(
                "training energy {training_energy} outside [0, {}]",
                params.e_max
            )));
        }
        let data_energy = params.e_max - training_energy;
        let data_power = data_energy / params.n_data as f64;
        let sigma_e2 = estimation_error_variance(training_energy, params.antennas, params.sigma_h2, params.sigma_n2)?;
        Ok(EnergySplit {
            training_energy,
            data_energy,
            training_power: training_energy / params.antennas as f64,
            data_power,
            sigma_eff2: params.sigma_n2 + data_power * sigma_e2,
            below_threshold: training_energy == 0.0,
        })
    }

    /// Estimation error variance implied by the pilot energy.
    pub fn sigma_e2(&self, params: &EnergyParams) -> f64 {
        estimation_error_variance(self.training_energy, params.antennas, params.sigma_h2, params.sigma_n2)
            .expect("validated split")
    }
}

/// Closed-form optimal pilot power `P_T* = E_T* / M`, clamped at zero.
pub fn optimal_training_power(params: &EnergyParams) -> f64 {
    let m = params.antennas as f64;
    let nd = params.n_data as f64;
    if params.e_max > params.threshold_energy() {
        (params.e_max / m.sqrt() - params.rho() * nd.sqrt()) / (nd.sqrt() + m.sqrt())
    } else {
        0.0
    }
}

/// Optimal split of the energy budget.
pub fn optimal_training_energy(params: &EnergyParams) -> Result<EnergySplit> {
    params.validate()?;
    let m = params.antennas as f64;
    let nd = params.n_data as f64;
    let e_t = if params.e_max > params.threshold_energy() {
        (params.e_max * m.sqrt() - params.rho() * m * nd.sqrt()) / (nd.sqrt() + m.sqrt())
    } else {
        0.0
    };
    EnergySplit::from_training_energy(params, e_t.clamp(0.0, params.e_max))
}

/// Received-SNR threshold `sqrt(M n_D) / (n_D + M)`; at or below it the
/// optimal pilot energy is zero.
pub fn threshold_snr(antennas: usize, n_data: usize) -> f64 {
    let m = antennas as f64;
    let nd = n_data as f64;
    (m * nd).sqrt() / (nd + m)
}

fn check_training_power(params: &EnergyParams, training_power: f64) -> Result<()> {
    let top = params.max_training_power();
    if !(training_power.is_finite() && training_power >= 0.0 && training_power <= top * (1.0 + 1e-12)) {
        return Err(Error::Domain(format!("training power {training_power} outside [0, {top}]")));
    }
    Ok(())
}

/// Effective noise as a function of training power:
/// `sigma_n2 + (sigma_n2 / n_D) (E_max - M P_T) / (rho + P_T)`.
pub fn effective_noise_power(params: &EnergyParams, training_power: f64) -> Result<f64> {
    check_training_power(params, training_power)?;
    let m = params.antennas as f64;
    let remaining = (params.e_max - training_power * m).max(0.0);
    Ok(params.sigma_n2 + params.sigma_n2 / params.n_data as f64 * remaining / (params.rho() + training_power))
}

/// Same quantity through `sigma_n2 + P_D sigma_e2(M P_T)`.
pub fn effective_noise_from_split(params: &EnergyParams, training_power: f64) -> Result<f64> {
    check_training_power(params, training_power)?;
    let e_t = (training_power * params.antennas as f64).min(params.e_max);
    Ok(EnergySplit::from_training_energy(params, e_t)?.sigma_eff2)
}

/// `d sigma_eff2 / d P_T = -(sigma_n2 / n_D) (E_max + rho M) / (rho + P_T)^2`.
pub fn effective_noise_slope(params: &EnergyParams, training_power: f64) -> f64 {
    let rho = params.rho();
    -params.sigma_n2 / params.n_data as f64 * (params.e_max + rho * params.antennas as f64)
        / (rho + training_power).powi(2)
}

/// `D_sigma + M sigma_eff2 / (n_D P_D)`: the factor whose zero is the
/// optimal training power.
pub fn stationarity_factor(params: &EnergyParams, training_power: f64) -> Result<f64> {
    let sigma_eff2 = effective_noise_power(params, training_power)?;
    let p_d = params.data_power(training_power);
    if p_d <= 0.0 {
        return Err(Error::Domain("no data power left".into()));
    }
    let m = params.antennas as f64;
    Ok(effective_noise_slope(params, training_power) + m * sigma_eff2 / (params.n_data as f64 * p_d))
}

/// Both roots of the stationarity condition, or the single root when the
/// quadratic degenerates at `n_D = M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StationaryPoints {
    Quadratic { plus: f64, minus: f64 },
    Linear(f64),
}

impl StationaryPoints {
    /// The root matching the closed-form optimum (before clamping at zero).
    pub fn principal(&self) -> f64 {
        match *self {
            StationaryPoints::Quadratic { plus, .. } => plus,
            StationaryPoints::Linear(root) => root,
        }
    }
}

/// `gamma` in both its radical and its simplified form.
pub fn gamma_forms(params: &EnergyParams) -> (f64, f64) {
    let m = params.antennas as f64;
    let nd = params.n_data as f64;
    let rho = params.rho();
    let e = params.e_max;
    let radical = (nd * (rho * rho * m + 2.0 * rho * e + e * e / m)).sqrt();
    let simplified = e * (nd / m).sqrt() + rho * (nd * m).sqrt();
    (radical, simplified)
}

/// Roots of `P^2 (n_D - M) + 2 P (E_max + rho n_D) = E_max^2 / M - rho^2 n_D`.
pub fn quadratic_roots(params: &EnergyParams) -> Result<StationaryPoints> {
    params.validate()?;
    let m = params.antennas as f64;
    let rho = params.rho();
    let e = params.e_max;
    if params.n_data == params.antennas {
        return Ok(StationaryPoints::Linear((e / m - rho) / 2.0));
    }
    let nd = params.n_data as f64;
    let (_, gamma) = gamma_forms(params);
    let a = nd - m;
    Ok(StationaryPoints::Quadratic { plus: (-e - rho * nd + gamma) / a, minus: (-e - rho * nd - gamma) / a })
}

/// Residual of the stationarity quadratic at `p`, relative to the size of
/// its largest term.
pub fn quadratic_residual(params: &EnergyParams, p: f64) -> f64 {
    let m = params.antennas as f64;
    let nd = params.n_data as f64;
    let rho = params.rho();
    let e = params.e_max;
    let terms = [p * p * (nd - m), 2.0 * p * (e + rho * nd), -(e * e / m), rho * rho * nd];
    let scale = terms.iter().fold(0.0f64, |s, t| s.max(t.abs()));
    terms.iter().sum::<f64>().abs() / scale.max(f64::MIN_POSITIVE)
}

/// Pilot/data energy policies compared in simulations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "training_energy", rename_all = "snake_case")]
pub enum AllocationPolicy {
    /// Closed-form optimum.
    Optimal,
    /// Same power in every symbol period: `P_T = P_D = E_max / n`.
    EqualPower,
    /// A fixed pilot energy.
    FixedTraining(f64),
}

impl AllocationPolicy {
    pub fn split(&self, params: &EnergyParams) -> Result<EnergySplit> {
        match *self {
            AllocationPolicy::Optimal => optimal_training_energy(params),
            AllocationPolicy::EqualPower => {
                let e_t = params.e_max * params.n_train as f64 / params.block_length() as f64;
                EnergySplit::from_training_energy(params, e_t)
            }
            AllocationPolicy::FixedTraining(e_t) => EnergySplit::from_training_energy(params, e_t),
        }
    }
}

impl fmt::Display for AllocationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AllocationPolicy::Optimal => f.write_str("optimal"),
            AllocationPolicy::EqualPower => f.write_str("equal"),
            AllocationPolicy::FixedTraining(e) => write!(f, "fixed:{e}"),
        }
    }
}

impl FromStr for AllocationPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "optimal" => Ok(AllocationPolicy::Optimal),
            "equal" => Ok(AllocationPolicy::EqualPower),
            other => {
                let value = other
                    .strip_prefix("fixed:")
                    .ok_or_else(|| Error::Parse(format!("unknown policy {other:?}")))?;
                let e: f64 = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad training energy {value:?}")))?;
                if !(e.is_finite() && e >= 0.0) {
                    return Err(Error::Parse(format!("training energy must be non-negative, got {e}")));
                }
                Ok(AllocationPolicy::FixedTraining(e))
            }
        }
    }
}

/// Parses a comma-separated policy list such as `optimal,equal,fixed:3`.
pub fn parse_policy_list(text: &str) -> Result<Vec<AllocationPolicy>> {
    let policies = text
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<_>>>()?;
    if policies.is_empty() {
        return Err(Error::Parse("empty policy list".into()));
    }
    Ok(policies)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(e_max: f64, m: usize, nd: usize, sn2: f64, sh2: f64) -> EnergyParams {
        EnergyParams::new(e_max, m, nd, sn2, sh2).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn symmetric_block_halves_the_excess() {
        let s = optimal_training_energy(&params(10.0, 4, 4, 1.0, 1.0)).unwrap();
        assert!((s.training_energy - 3.0).abs() < 1e-14);
        assert!(!s.below_threshold);
    }

    #[test]
    fn below_threshold_spends_nothing() {
        let p = params(50.0, 4, 996, 1.0, 1.0);
        assert!(p.threshold_energy() > 63.1 && p.threshold_energy() < 63.2);
        let s = optimal_training_energy(&p).unwrap();
        assert_eq!(s.training_energy, 0.0);
        assert!(s.below_threshold);
        assert_eq!(s.data_energy, 50.0);
    }

    #[test]
    fn long_block_allocation() {
        // E_T = (1000*2 - 4*sqrt(996)) / (sqrt(996) + 2)
        let s = optimal_training_energy(&params(1000.0, 4, 996, 1.0, 1.0)).unwrap();
        let nd = 996f64.sqrt();
        let expected = (2000.0 - 4.0 * nd) / (nd + 2.0);
        assert!(rel(s.training_energy, expected) < 1e-14);
        assert!((s.training_energy - 55.84).abs() < 0.01);
        assert!((s.training_power - 13.96).abs() < 0.005);
        assert!((s.data_power - 0.948).abs() < 0.001);
        assert_eq!(s.training_energy + s.data_energy, 1000.0);
    }

    #[test]
    fn domain_errors() {
        assert!(EnergyParams::new(10.0, 0, 4, 1.0, 1.0).is_err());
        assert!(EnergyParams::new(10.0, 4, 0, 1.0, 1.0).is_err());
        assert!(EnergyParams::new(10.0, 4, 4, 0.0, 1.0).is_err());
        assert!(EnergyParams::new(10.0, 4, 4, 1.0, -1.0).is_err());
    }

    #[test]
    fn threshold_snr_values() {
        assert_eq!(threshold_snr(4, 4), 0.5);
        assert!(rel(threshold_snr(4, 996), 3984f64.sqrt() / 1000.0) < 1e-15);
        assert!(threshold_snr(4, 10_000_000) < 1e-3);
    }

    #[test]
    fn threshold_snr_peaks_at_square_block() {
        for nd in 1..200 {
            assert!(threshold_snr(4, nd) <= 0.5);
        }
    }

    #[test]
    fn effective_noise_endpoints_and_values() {
        let p = params(10.0, 4, 4, 1.0, 1.0);
        assert_eq!(effective_noise_power(&p, 2.5).unwrap(), 1.0);
        assert!((effective_noise_power(&p, 0.0).unwrap() - 3.5).abs() < 1e-15);
        assert!(matches!(effective_noise_power(&p, 2.6), Err(Error::Domain(_))));
        assert!(matches!(effective_noise_power(&p, -0.1), Err(Error::Domain(_))));

        let p = params(1000.0, 4, 996, 1.0, 1.0);
        let a = effective_noise_power(&p, 13.96).unwrap();
        let b = effective_noise_from_split(&p, 13.96).unwrap();
        assert!(rel(a, b) < 1e-12);
        assert!((a - 1.0634).abs() < 1e-4);
    }

    #[test]
    fn gamma_identity_by_hand() {
        let p = params(10.0, 4, 9, 2.0, 1.0);
        let (radical, simplified) = gamma_forms(&p);
        assert!((radical - 27.0).abs() < 1e-13);
        assert!((simplified - 27.0).abs() < 1e-13);
    }

    #[test]
    fn quadratic_roots_long_block() {
        let p = params(1000.0, 4, 996, 1.0, 1.0);
        let StationaryPoints::Quadratic { plus, minus } = quadratic_roots(&p).unwrap() else {
            panic!("expected two roots")
        };
        assert!(rel(plus, optimal_training_power(&p)) < 1e-12);
        assert!((plus - 13.96).abs() < 0.005);
        assert!(minus < 0.0);
        assert!(quadratic_residual(&p, plus) < 1e-9);
        assert!(quadratic_residual(&p, minus) < 1e-9);
    }

    #[test]
    fn quadratic_degenerates_when_square() {
        let p = params(10.0, 4, 4, 1.0, 1.0);
        assert_eq!(quadratic_roots(&p).unwrap(), StationaryPoints::Linear(0.75));
        assert!(quadratic_residual(&p, 0.75) < 1e-15);
    }

    #[test]
    fn short_data_phase_same_formula() {
        // n_D < M: the + root still equals the closed form
        let p = params(40.0, 8, 3, 0.5, 1.0);
        let root = quadratic_roots(&p).unwrap().principal();
        assert!(rel(root, optimal_training_power(&p)) < 1e-12);
        assert!(stationarity_factor(&p, root).unwrap().abs() < 1e-12);
    }

    #[test]
    fn stationarity_factor_vanishes_at_optimum() {
        let p = params(1000.0, 4, 996, 1.0, 1.0);
        let opt = optimal_training_power(&p);
        let scale = effective_noise_slope(&p, opt).abs();
        assert!(stationarity_factor(&p, opt).unwrap().abs() < 1e-12 * scale);
        assert!(stationarity_factor(&p, 0.5 * opt).unwrap() < 0.0);
        assert!(stationarity_factor(&p, 2.0 * opt).unwrap() > 0.0);
    }

    #[test]
    fn policies() {
        let p = params(1000.0, 4, 996, 1.0, 1.0);
        let eq = AllocationPolicy::EqualPower.split(&p).unwrap();
        assert!((eq.training_power - 1.0).abs() < 1e-15);
        assert!((eq.data_power - 1.0).abs() < 1e-15);
        let fixed = AllocationPolicy::FixedTraining(20.0).split(&p).unwrap();
        assert_eq!(fixed.training_energy, 20.0);
        assert!(AllocationPolicy::FixedTraining(1001.0).split(&p).is_err());
    }

    #[test]
    fn policy_text_round_trip() {
        for s in ["optimal", "equal", "fixed:3.5", "fixed:0"] {
            let p: AllocationPolicy = s.parse().unwrap();
            assert_eq!(p.to_string().parse::<AllocationPolicy>().unwrap(), p);
        }
        assert!("fixed:-1".parse::<AllocationPolicy>().is_err());
        assert!("fixed:nan".parse::<AllocationPolicy>().is_err());
        assert!("best".parse::<AllocationPolicy>().is_err());
        assert_eq!(parse_policy_list("optimal, equal").unwrap().len(), 2);
        assert!(parse_policy_list(" , ").is_err());
    }

    #[test]
    fn threshold_is_continuous() {
        let base = params(1.0, 4, 100, 1.0, 1.0);
        let t = base.threshold_energy();
        let at = optimal_training_energy(&EnergyParams { e_max: t, ..base }).unwrap();
        assert_eq!(at.training_energy, 0.0);
        let just_above = optimal_training_energy(&EnergyParams { e_max: t * (1.0 + 1e-9), ..base }).unwrap();
        assert!(just_above.training_energy < 1e-7);
    }

    proptest! {
        #[test]
        fn split_invariants(e_max in 0.0f64..1e4, m in 1usize..9, nd in 1usize..3000, sn2 in 0.01f64..10.0, sh2 in 0.1f64..5.0) {
            let p = params(e_max, m, nd, sn2, sh2);
            let s = optimal_training_energy(&p).unwrap();
            prop_assert!(s.training_energy >= 0.0);
            prop_assert!(e_max == 0.0 || s.training_energy < e_max);
            prop_assert!((s.training_energy + s.data_energy - e_max).abs() <= f64::EPSILON * e_max);
            prop_assert_eq!(s.below_threshold, s.training_energy == 0.0);
            if e_max <= p.threshold_energy() {
                prop_assert!(s.below_threshold);
            } else if e_max > p.threshold_energy() * (1.0 + 1e-9) {
                prop_assert!(!s.below_threshold);
            }
            let direct = sn2 + s.data_power * s.sigma_e2(&p);
            prop_assert!((s.sigma_eff2 - direct).abs() <= 1e-12 * direct);
        }

        #[test]
        fn effective_noise_forms_agree(frac in 0.0f64..=1.0, e_max in 0.1f64..1e4, m in 1usize..9, nd in 1usize..3000, sn2 in 0.01f64..10.0, sh2 in 0.1f64..5.0) {
            let p = params(e_max, m, nd, sn2, sh2);
            let pt = frac * p.max_training_power();
            let a = effective_noise_power(&p, pt).unwrap();
            let b = effective_noise_from_split(&p, pt).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a);
        }

        #[test]
        fn energy_increasing_above_threshold(scale in 1.01f64..100.0, step in 1.0001f64..2.0, m in 1usize..9, nd in 1usize..3000, rho in 0.1f64..10.0) {
            let base = params(1.0, m, nd, rho, 1.0);
            let e1 = base.threshold_energy() * scale;
            let a = optimal_training_energy(&EnergyParams { e_max: e1, ..base }).unwrap();
            let b = optimal_training_energy(&EnergyParams { e_max: e1 * step, ..base }).unwrap();
            prop_assert!(b.training_energy > a.training_energy);
        }

        #[test]
        fn invariant_under_variance_scaling(k in 0.01f64..100.0, e_max in 1.0f64..1e4, m in 1usize..9, nd in 1usize..3000, rho in 0.1f64..10.0) {
            let a = optimal_training_energy(&params(e_max, m, nd, rho, 1.0)).unwrap();
            let b = optimal_training_energy(&params(e_max, m, nd, rho * k, k)).unwrap();
            prop_assert!((a.training_energy - b.training_energy).abs() <= 1e-9 * e_max);
            prop_assert_eq!(a.below_threshold, b.below_threshold);
        }

        #[test]
        fn plus_root_is_closed_form(e_max in 1.0f64..1e4, m in 1usize..9, nd in 1usize..3000, rho in 0.1f64..10.0) {
            let p = params(e_max, m, nd, rho, 1.0);
            let (g1, g2) = gamma_forms(&p);
            prop_assert!((g1 - g2).abs() <= 1e-12 * g2);
            let raw = (e_max / (m as f64).sqrt() - rho * (nd as f64).sqrt()) / ((nd as f64).sqrt() + (m as f64).sqrt());
            let root = quadratic_roots(&p).unwrap().principal();
            prop_assert!((root - raw).abs() <= 1e-10 * (raw.abs() + p.max_training_power()));
        }
    }
}
