//! Full-link trials and seeded parallel sweeps.
//!
//! A trial draws one channel block, trains and estimates it with the pilot
//! energy chosen by an [`AllocationPolicy`], designs the robust precoder on
//! the estimate, and sends uncoded QPSK through the true channel.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::draw_channel_with;
use crate::config::{db_to_linear, SystemConfig};
use crate::energy::{AllocationPolicy, EnergyParams};
use crate::error::{Error, Result};
use crate::linalg::{c, CMatrix, C64};
use crate::precoder::{block_diagonal, duality_transform, solve_min_smse, Layout, SolverOptions};
use crate::rng::{complex_gaussian_matrix, derive_key, stream, Purpose};
use crate::training::{train_and_estimate, ChannelEstimate, PilotKind};

/// Default cap on simulated data vectors per block.
pub const DEFAULT_DATA_VECTORS: usize = 500;

/// Gray-mapped QPSK: bit pair `(b0, b1)` maps to `((1 - 2 b0) + j (1 - 2 b1)) / sqrt(2)`.
pub fn qpsk_modulate(bits: &[bool]) -> Result<Vec<C64>> {
    if !bits.len().is_multiple_of(2) {
        return Err(Error::Framing(format!("QPSK needs an even number of bits, got {}", bits.len())));
    }
    let a = std::f64::consts::FRAC_1_SQRT_2;
    let level = |b: bool| if b { -a } else { a };
    Ok(bits.chunks_exact(2).map(|p| c(level(p[0]), level(p[1]))).collect())
}

/// Sign decisions on each axis; a component of exactly zero decides bit 0.
pub fn qpsk_demodulate(symbols: &[C64]) -> Vec<bool> {
    symbols.iter().flat_map(|s| [s.re < 0.0, s.im < 0.0]).collect()
}

/// Knobs of a single trial that are not part of the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialOptions {
    /// Simulated data vectors per block, at most `n_D`.
    pub max_data_vectors: usize,
    pub pilots: PilotKind,
    pub solver: SolverOptions,
    /// Design on the true channel with no estimation error.
    pub perfect_csi: bool,
}

impl Default for TrialOptions {
    fn default() -> Self {
        TrialOptions {
            max_data_vectors: DEFAULT_DATA_VECTORS,
            pilots: PilotKind::ScaledIdentity,
            solver: SolverOptions::default(),
            perfect_csi: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    /// Mean of `||x_hat - x||^2` over the simulated symbol periods.
    pub empirical_smse: f64,
    pub ber: f64,
    pub bit_errors: u64,
    pub bits: u64,
    pub training_energy: f64,
    pub data_power: f64,
    /// Sum-MSE predicted by the design at the estimated channel.
    pub design_smse: f64,
    pub sigma_eff2: f64,
    /// No pilot or no data energy: nothing can be conveyed.
    pub no_communication: bool,
    pub iterations: usize,
    pub seed: u64,
}

impl TrialResult {
    fn silent(cfg: &SystemConfig, training_energy: f64, data_power: f64, sigma_eff2: f64, seed: u64) -> Self {
        let l = cfg.total_streams() as f64;
        TrialResult {
            empirical_smse: l,
            ber: 0.5,
            bit_errors: 0,
            bits: 0,
            training_energy,
            data_power,
            design_smse: l,
            sigma_eff2,
            no_communication: true,
            iterations: 0,
            seed,
        }
    }
}

/// One block at linear SNR `snr = P_avg / sigma_n2`.
pub fn run_trial(
    cfg: &SystemConfig,
    snr: f64,
    policy: AllocationPolicy,
    seed: u64,
    options: &TrialOptions,
) -> Result<TrialResult> {
    if !(snr.is_finite() && snr > 0.0) {
        return Err(Error::Domain(format!("SNR must be positive, got {snr}")));
    }
    let cfg = cfg.with_sigma_n2(cfg.average_power() / snr)?;
    let params = EnergyParams::from_config(&cfg);
    let split = policy.split(&params)?;
    if split.training_energy == 0.0 || split.data_power == 0.0 {
        return Ok(TrialResult::silent(&cfg, split.training_energy, split.data_power, split.sigma_eff2, seed));
    }

    let channel = draw_channel_with(&cfg, &mut stream(seed, Purpose::Channel))?;
    let estimate = if options.perfect_csi {
        ChannelEstimate { estimate: channel.clone(), sigma_e2: 0.0, energy: split.training_energy }
    } else {
        train_and_estimate(
            &channel,
            options.pilots,
            split.training_energy,
            &cfg,
            &mut stream(seed, Purpose::TrainingNoise),
        )?
    };
    let sigma_eff2 = cfg.sigma_n2 + estimate.sigma_e2 * split.data_power;

    let layout = Layout::from_config(&cfg);
    let h_hat = estimate.estimate.uplink();
    let uplink = solve_min_smse(&h_hat, &layout, split.data_power, sigma_eff2, &options.solver)?;
    let downlink = duality_transform(&uplink, &h_hat, &layout, sigma_eff2)?;

    let periods = cfg.n_data().min(options.max_data_vectors).max(1);
    let l = cfg.total_streams();
    let mut bit_rng = stream(seed, Purpose::DataBits);
    let bits: Vec<bool> = (0..2 * l * periods).map(|_| rand::Rng::random(&mut bit_rng)).collect();
    let symbols = qpsk_modulate(&bits)?;
    // column t holds the symbol vector of period t
    let x = CMatrix::from_fn(l, periods, |i, t| symbols[t * l + i]);
    let noise = complex_gaussian_matrix(&mut stream(seed, Purpose::DataNoise), cfg.total_rx(), periods, cfg.sigma_n2);
    let received = channel.downlink() * (downlink.transmit_matrix() * &x) + noise;
    let x_hat = block_diagonal(&downlink.receivers) * received;

    let error = &x_hat - &x;
    let empirical_smse = error.iter().map(|z| z.norm_sqr()).sum::<f64>() / periods as f64;
    let decided: Vec<C64> = (0..periods).flat_map(|t| (0..l).map(move |i| (t, i))).map(|(t, i)| x_hat[(i, t)]).collect();
    let bit_errors = qpsk_demodulate(&decided).iter().zip(&bits).filter(|(a, b)| a != b).count() as u64;
    let n_bits = bits.len() as u64;

    Ok(TrialResult {
        empirical_smse,
        ber: bit_errors as f64 / n_bits as f64,
        bit_errors,
        bits: n_bits,
        training_energy: split.training_energy,
        data_power: split.data_power,
        design_smse: uplink.smse,
        sigma_eff2,
        no_communication: false,
        iterations: uplink.iterations,
        seed,
    })
}

/// Key of trial `trial` at SNR index `snr_index`. The policy is not part of
/// the key, so every policy sees the same channels and noise.
pub fn trial_key(global_seed: u64, snr_index: usize, trial: usize) -> u64 {
    derive_key(&[global_seed, snr_index as u64, trial as u64])
}

/// Sample mean and standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let stderr = if samples.len() > 1 {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Estimate { mean, stderr }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub snr_db: f64,
    pub policy: AllocationPolicy,
    pub trials: usize,
    /// Trial indices `first_trial..first_trial + trials` under the report seed.
    pub first_trial: usize,
    pub smse: Estimate,
    pub design_smse: Estimate,
    pub ber: Estimate,
    pub no_communication: usize,
    #[serde(skip)]
    pub results: Vec<TrialResult>,
}

impl SweepCell {
    fn from_results(snr_db: f64, policy: AllocationPolicy, results: Vec<TrialResult>) -> Self {
        let pick = |f: fn(&TrialResult) -> f64| Estimate::from_samples(&results.iter().map(f).collect::<Vec<_>>());
        SweepCell {
            snr_db,
            policy,
            trials: results.len(),
            first_trial: 0,
            smse: pick(|r| r.empirical_smse),
            design_smse: pick(|r| r.design_smse),
            ber: pick(|r| r.ber),
            no_communication: results.iter().filter(|r| r.no_communication).count(),
            results,
        }
    }
}

/// What to sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub config: SystemConfig,
    pub snr_db: Vec<f64>,
    pub policies: Vec<AllocationPolicy>,
    pub trials: usize,
    pub seed: u64,
    pub options: TrialOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub plan: SweepPlan,
    pub version: String,
    /// Cells in SNR-major, policy-minor order.
    pub cells: Vec<SweepCell>,
}

/// One row of the long-format table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub snr_db: f64,
    pub policy: String,
    pub metric: String,
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
}

impl SweepReport {
    pub fn cell(&self, snr_index: usize, policy: AllocationPolicy) -> Option<&SweepCell> {
        let p = self.plan.policies.iter().position(|&x| x == policy)?;
        self.cells.get(snr_index * self.plan.policies.len() + p)
    }

    /// Cells of one policy in SNR order.
    pub fn curve(&self, policy: AllocationPolicy) -> Vec<&SweepCell> {
        (0..self.plan.snr_db.len()).filter_map(|i| self.cell(i, policy)).collect()
    }

    pub fn long_rows(&self) -> Vec<LongRow> {
        let mut rows = Vec::with_capacity(3 * self.cells.len());
        for cell in &self.cells {
            for (metric, e) in [("smse", cell.smse), ("ber", cell.ber), ("design_smse", cell.design_smse)] {
                rows.push(LongRow {
                    snr_db: cell.snr_db,
                    policy: cell.policy.to_string(),
                    metric: metric.to_string(),
                    mean: e.mean,
                    stderr: e.stderr,
                    trials: cell.trials,
                });
            }
        }
        rows
    }
}

/// Runs every (SNR, policy, trial) combination on `workers` threads. The
/// report does not depend on `workers`.
pub fn run_sweep(plan: &SweepPlan, workers: usize) -> Result<SweepReport> {
    if plan.trials == 0 {
        return Err(Error::Config("at least one trial is required".into()));
    }
    if plan.snr_db.is_empty() || plan.policies.is_empty() {
        return Err(Error::Config("SNR grid and policy list must be non-empty".into()));
    }
    plan.config.validate()?;
    let jobs: Vec<(usize, usize, usize)> = (0..plan.snr_db.len())
        .flat_map(|s| (0..plan.policies.len()).flat_map(move |p| (0..plan.trials).map(move |t| (s, p, t))))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<TrialResult> = pool.install(|| {
        jobs.par_iter()
            .map(|&(s, p, t)| {
                run_trial(
                    &plan.config,
                    db_to_linear(plan.snr_db[s]),
                    plan.policies[p],
                    trial_key(plan.seed, s, t),
                    &plan.options,
                )
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let cells = results
        .chunks(plan.trials)
        .enumerate()
        .map(|(i, chunk)| {
            let (s, p) = (i / plan.policies.len(), i % plan.policies.len());
            SweepCell::from_results(plan.snr_db[s], plan.policies[p], chunk.to_vec())
        })
        .collect();
    Ok(SweepReport { plan: plan.clone(), version: env!("CARGO_PKG_VERSION").to_string(), cells })
}

/// SNR in dB at which a BER curve first falls to `target`, by linear
/// interpolation of `log10(BER)` between grid points.
pub fn snr_at_ber(snr_db: &[f64], ber: &[f64], target: f64) -> Option<f64> {
    if snr_db.len() != ber.len() || !(target > 0.0) {
        return None;
    }
    if let Some(i) = ber.iter().position(|&b| b == target) {
        return Some(snr_db[i]);
    }
    (1..ber.len()).find_map(|i| {
        let (b0, b1) = (ber[i - 1], ber[i]);
        if b0 > target && b1 < target {
            if b1 <= 0.0 {
                return Some(snr_db[i]);
            }
            let (l0, l1, lt) = (b0.log10(), b1.log10(), target.log10());
            Some(snr_db[i - 1] + (lt - l0) / (l1 - l0) * (snr_db[i] - snr_db[i - 1]))
        } else {
            None
        }
    })
}

/// Paired mean and standard error of `a_i - b_i`.
pub fn paired_difference(a: &[f64], b: &[f64]) -> Option<Estimate> {
    if a.len() != b.len() || a.is_empty() {
        return None;
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Some(Estimate::from_samples(&d))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> SystemConfig {
        SystemConfig::reference(1000, 1.0).unwrap()
    }

    #[test]
    fn gray_map_anchor_and_unit_energy() {
        let s = qpsk_modulate(&[false, false, true, false, false, true, true, true]).unwrap();
        let a = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(s[0], c(a, a));
        assert_eq!(s[1], c(-a, a));
        assert_eq!(s[2], c(a, -a));
        assert_eq!(s[3], c(-a, -a));
        assert!(s.iter().all(|z| (z.norm() - 1.0).abs() < 1e-15));
    }

    #[test]
    fn odd_length_is_a_framing_error() {
        assert!(matches!(qpsk_modulate(&[true]), Err(Error::Framing(_))));
    }

    #[test]
    fn demodulation_decisions() {
        let a = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(qpsk_demodulate(&[c(0.9 * a, 1.1 * a)]), vec![false, false]);
        assert_eq!(qpsk_demodulate(&[c(0.0, -0.0)]), vec![false, false]);
        assert_eq!(qpsk_demodulate(&[c(-0.1, 0.0)]), vec![true, false]);
        let bits: Vec<bool> = (0..64).map(|i| (i * 7 + i / 3) % 2 == 1).collect();
        assert_eq!(qpsk_demodulate(&qpsk_modulate(&bits).unwrap()), bits);
    }

    #[test]
    fn trial_is_deterministic_and_accounts_energy() {
        let cfg = reference();
        for policy in [AllocationPolicy::Optimal, AllocationPolicy::EqualPower] {
            let a = run_trial(&cfg, 3.0, policy, 17, &TrialOptions::default()).unwrap();
            let b = run_trial(&cfg, 3.0, policy, 17, &TrialOptions::default()).unwrap();
            assert_eq!(a, b);
            let n_d = cfg.n_data() as f64;
            assert!(((a.training_energy + n_d * a.data_power) / cfg.e_max - 1.0).abs() < 1e-9);
            assert!((0.0..=1.0).contains(&a.ber) && a.empirical_smse >= 0.0);
        }
    }

    #[test]
    fn perfect_csi_at_high_snr_is_error_free() {
        let cfg = reference();
        let opts = TrialOptions { perfect_csi: true, ..TrialOptions::default() };
        for seed in 0..5 {
            let r = run_trial(&cfg, db_to_linear(60.0), AllocationPolicy::EqualPower, seed, &opts).unwrap();
            assert_eq!(r.bit_errors, 0);
        }
    }

    #[test]
    fn reference_scenario_runs_over_snr_range() {
        let cfg = reference();
        for db in [0.0, 5.0, 10.0, 15.0, 20.0] {
            run_trial(&cfg, db_to_linear(db), AllocationPolicy::Optimal, 4, &TrialOptions::default()).unwrap();
        }
    }

    #[test]
    fn zero_pilot_energy_conveys_nothing() {
        let cfg = reference();
        let r = run_trial(&cfg, 1.0, AllocationPolicy::FixedTraining(0.0), 1, &TrialOptions::default()).unwrap();
        assert!(r.no_communication);
        assert_eq!(r.ber, 0.5);
        assert_eq!(r.empirical_smse, 4.0);
        // below threshold the optimum puts no energy on pilots
        let short = SystemConfig::reference(8, 1.0).unwrap();
        let r = run_trial(&short, 0.4, AllocationPolicy::Optimal, 1, &TrialOptions::default()).unwrap();
        assert!(r.no_communication);
    }

    #[test]
    fn single_trial_sweep_equals_trial() {
        let plan = SweepPlan {
            config: reference(),
            snr_db: vec![4.0],
            policies: vec![AllocationPolicy::Optimal],
            trials: 1,
            seed: 9,
            options: TrialOptions::default(),
        };
        let report = run_sweep(&plan, 2).unwrap();
        let direct = run_trial(&plan.config, db_to_linear(4.0), AllocationPolicy::Optimal, trial_key(9, 0, 0), &plan.options).unwrap();
        let cell = &report.cells[0];
        assert_eq!(cell.smse.mean, direct.empirical_smse);
        assert_eq!(cell.ber.mean, direct.ber);
        assert_eq!(cell.smse.stderr, 0.0);
    }

    #[test]
    fn sweep_ignores_worker_count() {
        let plan = SweepPlan {
            config: SystemConfig::reference(100, 1.0).unwrap(),
            snr_db: vec![0.0, 6.0],
            policies: vec![AllocationPolicy::Optimal, AllocationPolicy::EqualPower],
            trials: 6,
            seed: 5,
            options: TrialOptions { max_data_vectors: 50, ..TrialOptions::default() },
        };
        let a = run_sweep(&plan, 1).unwrap();
        let b = run_sweep(&plan, 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.long_rows().len(), 2 * 2 * 3);
    }

    #[test]
    fn ber_crossing_interpolates_in_log_domain() {
        let snr = [0.0, 2.0, 4.0];
        let ber = [1e-1, 1e-2 * 10f64.powf(-0.5) * 10.0, 1e-3];
        let x = snr_at_ber(&snr, &ber, 1e-2).unwrap();
        // log10 BER: -1, -1.5, -3 -> crossing of -2 at 2 + 0.5/1.5 * 2
        assert!((x - (2.0 + 2.0 / 3.0)).abs() < 1e-12);
        assert_eq!(snr_at_ber(&snr, &[0.5, 0.4, 0.3], 1e-2), None);
    }

    #[test]
    fn standard_error() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        assert!((e.stderr - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }
}
