//! Brute-force checks of the closed-form allocation: a uniform grid over the
//! training power refined by golden-section search, and finite differences.
//! None of this uses the closed form or the analytic derivative.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{c, CMatrix};
use crate::rng::complex_gaussian;

use super::objective::{smse_of_training_power, FixedDesign};
use super::EnergyParams;

/// Smallest grid the oracle accepts.
pub const MIN_GRID_POINTS: usize = 1000;

/// Relative width at which golden-section refinement stops.
pub const REFINE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridOptimum {
    pub training_power: f64,
    pub smse: f64,
    /// Index of the best raw grid point before refinement.
    pub grid_index: usize,
}

/// SMSE at `points` uniformly spaced training powers on `[0, E_max / M]`.
pub fn smse_grid(design: &FixedDesign, params: &EnergyParams, points: usize) -> Result<Vec<(f64, f64)>> {
    if points < 2 {
        return Err(Error::Domain("grid needs at least two points".into()));
    }
    let top = params.max_training_power();
    (0..points)
        .into_par_iter()
        .map(|i| {
            let pt = if i + 1 == points { top } else { top * i as f64 / (points - 1) as f64 };
            smse_of_training_power(design, params, pt).map(|s| (pt, s))
        })
        .collect()
}

/// Golden-section search for the minimum of `f` on `[a, b]`.
///
/// Returns `(x_min, f_min)`.
pub fn golden_section_minimize(
    mut f: impl FnMut(f64) -> f64,
    mut a: f64,
    mut b: f64,
    rel_tol: f64,
    max_evals: usize,
) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let floor = 1e-12 * b.abs().max(a.abs()).max(f64::MIN_POSITIVE);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let mut evals = 2;
    while evals < max_evals && (b - a) > rel_tol * (0.5 * (a + b)).abs() && (b - a) > floor {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
        evals += 1;
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Training power minimizing the fixed-design SMSE, found without the
/// closed form. Ties on the grid go to the smaller training power.
pub fn grid_search_optimum(design: &FixedDesign, params: &EnergyParams, points: usize) -> Result<GridOptimum> {
    if points < MIN_GRID_POINTS {
        return Err(Error::Domain(format!("grid needs at least {MIN_GRID_POINTS} points, got {points}")));
    }
    let grid = smse_grid(design, params, points)?;
    let (grid_index, &(best_pt, best_smse)) = grid
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.1.total_cmp(&b.1).then(i.cmp(j)))
        .expect("non-empty grid");
    let lo = grid[grid_index.saturating_sub(1)].0;
    let hi = grid[(grid_index + 1).min(points - 1)].0;
    let (pt, smse) = golden_section_minimize(
        |x| smse_of_training_power(design, params, x).unwrap_or(f64::INFINITY),
        lo,
        hi,
        REFINE_TOLERANCE,
        400,
    );
    let (training_power, smse) = if smse <= best_smse { (pt, smse) } else { (best_pt, best_smse) };
    Ok(GridOptimum { training_power, smse, grid_index })
}

/// Central difference `(f(x + h) - f(x - h)) / 2h`.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Second difference `(f(x + h) - 2 f(x) + f(x - h)) / h^2`.
pub fn second_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)
}

/// A random fixed design: one or two users with up to three antennas and
/// streams each, Gaussian channel, random unit-norm beamformers and random
/// power shares summing to one.
pub fn random_design<R: Rng + ?Sized>(rng: &mut R, antennas: usize, sigma_h2: f64) -> FixedDesign {
    let users = rng.random_range(1..=2usize);
    let rx: Vec<usize> = (0..users).map(|_| rng.random_range(1..=3usize)).collect();
    let streams: Vec<usize> = rx.iter().map(|&n| rng.random_range(1..=n)).collect();
    let n: usize = rx.iter().sum();
    let l: usize = streams.iter().sum();
    let channel = CMatrix::from_fn(antennas, n, |_, _| complex_gaussian(rng, sigma_h2));
    let mut beamformers = CMatrix::zeros(n, l);
    let (mut row, mut col) = (0, 0);
    for (&nk, &lk) in rx.iter().zip(&streams) {
        for j in 0..lk {
            let v: Vec<_> = (0..nk).map(|_| complex_gaussian(rng, 1.0)).collect();
            let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().max(1e-300);
            for (i, z) in v.into_iter().enumerate() {
                beamformers[(row + i, col + j)] = z / c(norm, 0.0);
            }
        }
        row += nk;
        col += lk;
    }
    let raw: Vec<f64> = (0..l).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let power_shares = raw.iter().map(|q| q / total).collect();
    FixedDesign::new(channel, beamformers, power_shares).expect("consistent random design")
}

/// Random parameters above the threshold: `M` in `1..=8`, `n_D` in
/// `M..=2000`, `rho` in `[0.1, 10]` with unit channel variance, and a budget
/// between 1.2 and 50 times the threshold energy.
pub fn random_params_above_threshold<R: Rng + ?Sized>(rng: &mut R) -> EnergyParams {
    let antennas = rng.random_range(1..=8usize);
    let n_data = rng.random_range(antennas..=2000);
    let rho = rng.random_range(0.1..=10.0);
    let threshold = rho * ((antennas * n_data) as f64).sqrt();
    let factor = rng.random_range(1.2f64.ln()..50f64.ln()).exp();
    EnergyParams::new(threshold * factor, antennas, n_data, rho, 1.0).expect("valid random parameters")
}
