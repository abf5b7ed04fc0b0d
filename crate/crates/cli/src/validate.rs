//! Oracle checks runnable from the command line.

use std::time::Instant;

use musmse::config::SystemConfig;
use musmse::energy::objective::{smse_derivative, smse_of_training_power};
use musmse::energy::oracle::{
    central_difference, grid_search_optimum, random_design, random_params_above_threshold, second_difference,
};
use musmse::energy::{threshold_snr, EnergyParams};
use musmse::precoder::{duality_transform, solve_min_smse, uplink_stream_mse, Layout, SolverOptions};
use musmse::rng::{complex_gaussian_matrix, stream, Purpose};
use musmse::training::{estimation_error_statistics, estimation_error_variance, PilotKind};
use rand::Rng;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Quick,
    Full,
}

/// Closed-form optimal training power under test.
pub type ClosedForm = fn(&EnergyParams) -> f64;

/// The closed form with every `sqrt(M)` replaced by `M`.
pub fn mutated_training_power(params: &EnergyParams) -> f64 {
    let m = params.antennas as f64;
    let nd = params.n_data as f64;
    if params.e_max > params.threshold_energy() {
        (params.e_max - params.rho() * nd.sqrt()) / (nd.sqrt() + m)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub level: Level,
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect()
    }
}

struct Sizes {
    tuples: usize,
    designs: usize,
    estimation_trials: usize,
    channels: usize,
}

impl Level {
    fn sizes(self) -> Sizes {
        match self {
            Level::Quick => Sizes { tuples: 6, designs: 2, estimation_trials: 50_000, channels: 10 },
            Level::Full => Sizes { tuples: 20, designs: 5, estimation_trials: 100_000, channels: 50 },
        }
    }
}

fn timed(name: &'static str, f: impl FnOnce() -> Result<String, String>) -> Check {
    let start = Instant::now();
    let outcome = f();
    let seconds = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => Check { name, passed: true, detail, seconds },
        Err(detail) => Check { name, passed: false, detail, seconds },
    }
}

fn closed_form_vs_grid(sizes: &Sizes, closed_form: ClosedForm, seed: u64) -> Result<String, String> {
    let mut rng = stream(seed, Purpose::Oracle);
    let mut worst = 0.0f64;
    for _ in 0..sizes.tuples {
        let params = random_params_above_threshold(&mut rng);
        let closed = closed_form(&params);
        for _ in 0..sizes.designs {
            let design = random_design(&mut rng, params.antennas, 1.0);
            let grid = grid_search_optimum(&design, &params, 1000).map_err(|e| e.to_string())?;
            let rel = (grid.training_power - closed).abs() / closed.abs().max(f64::MIN_POSITIVE);
            worst = worst.max(rel);
            if rel > 1e-3 {
                return Err(format!(
                    "M={} n_D={} rho={:.3} E_max={:.3}: grid {:.6} vs closed form {:.6}",
                    params.antennas,
                    params.n_data,
                    params.rho(),
                    params.e_max,
                    grid.training_power,
                    closed
                ));
            }
        }
    }
    Ok(format!("worst relative deviation {worst:.2e}"))
}

fn derivative_checks(sizes: &Sizes, closed_form: ClosedForm, seed: u64) -> Result<String, String> {
    let mut rng = stream(seed ^ 0x5151, Purpose::Oracle);
    for _ in 0..sizes.tuples.min(5) {
        let params = random_params_above_threshold(&mut rng);
        let design = random_design(&mut rng, params.antennas, 1.0);
        let f = |x: f64| smse_of_training_power(&design, &params, x).unwrap_or(f64::NAN);
        let opt = closed_form(&params);
        let top = params.max_training_power();
        if !(opt > 0.0 && opt < top) {
            return Err(format!("closed form {opt} outside (0, {top})"));
        }
        let smse = f(opt);
        let slope = smse_derivative(&design, &params, opt).map_err(|e| e.to_string())?;
        if slope.abs() >= 1e-8 * smse {
            return Err(format!("derivative {slope:.3e} at P_T = {opt:.6} (SMSE {smse:.6})"));
        }
        let h = 1e-3 * opt.min(top - opt);
        let curvature = second_difference(f, opt, h);
        if curvature.is_nan() || curvature <= 0.0 {
            return Err(format!("curvature {curvature:.3e} at the optimum"));
        }
        for _ in 0..20 {
            let pt = rng.random_range(0.01 * top..0.99 * top);
            let fd = central_difference(f, pt, 1e-4 * pt.min(top - pt));
            let an = smse_derivative(&design, &params, pt).map_err(|e| e.to_string())?;
            if (an - fd).abs() > 1e-5 * an.abs() {
                return Err(format!("analytic {an:.6e} vs finite difference {fd:.6e} at {pt:.6}"));
            }
        }
    }
    Ok("stationary, convex, derivative matches finite differences".into())
}

fn threshold_checks(closed_form: ClosedForm) -> Result<String, String> {
    for m in 1..=8 {
        let t = threshold_snr(m, m);
        if t != 0.5 {
            return Err(format!("threshold_snr({m}, {m}) = {t}"));
        }
        let params = EnergyParams::new(1.0, m, 50 * m, 1.0, 1.0).map_err(|e| e.to_string())?;
        let below = EnergyParams { e_max: 0.99 * params.threshold_energy(), ..params };
        if closed_form(&below) != 0.0 {
            return Err(format!("positive training power below threshold for M = {m}"));
        }
    }
    Ok("threshold 0.5 at n_D = M, zero training below threshold".into())
}

fn estimation_checks(sizes: &Sizes, seed: u64) -> Result<String, String> {
    let cases = [(0.0, 4, 1.0, 1.0), (4.0, 4, 1.0, 1.0), (40.0, 4, 1.0, 0.5), (10.0, 2, 2.0, 1.0), (100.0, 8, 0.5, 3.0)];
    let mut worst = 0.0f64;
    for (i, &(energy, m, sigma_h2, sigma_n2)) in cases.iter().enumerate() {
        let cfg = SystemConfig { sigma_h2, sigma_n2, ..SystemConfig::new(m, vec![1], vec![1], 4 * m, 4.0 * m as f64, 1.0, 1.0).map_err(|e| e.to_string())? };
        let expected = estimation_error_variance(energy, m, sigma_h2, sigma_n2).map_err(|e| e.to_string())?;
        // M coefficients per block
        let blocks = sizes.estimation_trials.div_ceil(m);
        let stats = estimation_error_statistics(&cfg, PilotKind::ScaledIdentity, energy, blocks, seed.wrapping_add(i as u64))
            .map_err(|e| e.to_string())?;
        let rel = (stats.mean_sq_error / expected - 1.0).abs();
        worst = worst.max(rel);
        if rel > 0.02 {
            return Err(format!("E_T={energy} M={m}: empirical {:.5} vs {expected:.5}", stats.mean_sq_error));
        }
    }
    Ok(format!("worst relative deviation {worst:.2e} over {} coefficient trials each", sizes.estimation_trials))
}

fn duality_checks(sizes: &Sizes, seed: u64) -> Result<String, String> {
    let mut rng = stream(seed ^ 0xd0a1, Purpose::Oracle);
    let layout = Layout::new(vec![2, 2], vec![2, 2]).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for _ in 0..sizes.channels {
        let h = complex_gaussian_matrix(&mut rng, 4, 4, 1.0);
        let s2 = rng.random_range(0.1..2.0);
        let p_d = rng.random_range(0.5..20.0);
        let ul = solve_min_smse(&h, &layout, p_d, s2, &SolverOptions::default()).map_err(|e| e.to_string())?;
        let dl = duality_transform(&ul, &h, &layout, s2).map_err(|e| e.to_string())?;
        let mse = uplink_stream_mse(&h, &ul.beamformers, &ul.powers, s2, &layout).map_err(|e| e.to_string())?;
        for (a, b) in mse.iter().zip(&dl.per_stream_mse) {
            worst = worst.max((a - b).abs());
        }
        if worst > 1e-6 {
            return Err(format!("per-stream MSE mismatch {worst:.2e}"));
        }
        if (dl.total_power() - ul.total_power()).abs() > 1e-9 {
            return Err(format!("power {} vs {}", dl.total_power(), ul.total_power()));
        }
    }
    Ok(format!("worst per-stream MSE mismatch {worst:.2e}"))
}

pub fn run_validation(level: Level, closed_form: ClosedForm, seed: u64) -> ValidationReport {
    let sizes = level.sizes();
    let checks = vec![
        timed("closed_form_vs_grid", || closed_form_vs_grid(&sizes, closed_form, seed)),
        timed("derivative", || derivative_checks(&sizes, closed_form, seed)),
        timed("threshold", || threshold_checks(closed_form)),
        timed("estimation_variance", || estimation_checks(&sizes, seed)),
        timed("duality", || duality_checks(&sizes, seed)),
    ];
    ValidationReport { level, checks }
}
