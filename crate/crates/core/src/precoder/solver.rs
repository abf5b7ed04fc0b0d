//! Block-coordinate descent on the virtual-uplink sum-MSE.
//!
//! Each iteration
//! 1. sets the receive filters to the Wiener solution for the current
//!    transmit filters `Vbar = V sqrt(Q)`;
//! 2. with the receivers fixed, minimizes the sum-MSE over all `Vbar_k`
//!    jointly under `sum_k ||Vbar_k||_F^2 <= P_D`, which decouples per user
//!    up to one Lagrange multiplier found by bisection;
//! 3. rescales `Vbar` to use the full budget, which cannot increase
//!    `tr(R^-1)`.
//!
//! No step increases the sum-MSE. Unit-norm beamformers and stream powers
//! are read off the columns of `Vbar` at the end.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frobenius_sq, hermitian_eigen_desc, hpd_inverse, scaled_identity, trace_re, CMatrix};

use super::{block_diagonal, scaled_beamformers, Layout};

/// Powers below this fraction of `P_D` are treated as zero.
pub const ZERO_POWER_FRACTION: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Stop once the relative SMSE improvement of an iteration falls below this.
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tolerance: 1e-8, max_iters: 500 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualUplinkSolution {
    /// Block-diagonal unit-norm beamformers `V`, `N x L`.
    pub beamformers: CMatrix,
    /// Stream powers `q`, in global stream order.
    pub powers: Vec<f64>,
    /// Wiener receive filters `U`, `M x L`.
    pub receivers: CMatrix,
    pub smse: f64,
    pub iterations: usize,
    pub converged: bool,
    /// SMSE after initialization and after every accepted iteration.
    pub history: Vec<f64>,
    /// Streams whose power was clamped to zero.
    pub zero_power_streams: Vec<usize>,
}

impl VirtualUplinkSolution {
    /// `V_k` of user `k`, `N_k x L_k`.
    pub fn user_beamformers(&self, layout: &Layout, k: usize) -> CMatrix {
        self.beamformers
            .view((layout.rx_offset(k), layout.stream_offset(k)), (layout.rx[k], layout.streams[k]))
            .into_owned()
    }

    pub fn total_power(&self) -> f64 {
        self.powers.iter().sum()
    }
}

fn smse_of(h_up: &CMatrix, vbar: &CMatrix, sigma_eff2: f64) -> Result<(f64, CMatrix)> {
    let a = h_up * vbar;
    let r_inv = hpd_inverse(&(&a * a.adjoint() + scaled_identity(h_up.nrows(), sigma_eff2)))?;
    let smse = vbar.ncols() as f64 - h_up.nrows() as f64 + sigma_eff2 * trace_re(&r_inv);
    Ok((smse, r_inv))
}

/// Leading right singular vectors of each `H_k`, equal power per stream.
fn initial_beamformers(h_up: &CMatrix, layout: &Layout) -> CMatrix {
    let blocks: Vec<CMatrix> = (0..layout.users())
        .map(|k| {
            let hk = h_up.columns(layout.rx_offset(k), layout.rx[k]);
            let (_, w) = hermitian_eigen_desc(&(hk.adjoint() * hk));
            let nk = layout.rx[k];
            CMatrix::from_fn(nk, layout.streams[k], |r, j| w[(r, j % nk)])
        })
        .collect();
    block_diagonal(&blocks)
}

/// Per-user pieces of the transmit update in the eigenbasis of
/// `A_k = H_k^H U U^H H_k`.
struct UserUpdate {
    eigenvalues: Vec<f64>,
    eigenvectors: CMatrix,
    /// `W^H H_k^H U_k`.
    projected: CMatrix,
    /// Squared row norms of `projected`.
    weights: Vec<f64>,
}

impl UserUpdate {
    fn power(&self, mu: f64, floor: f64) -> f64 {
        self.eigenvalues
            .iter()
            .zip(&self.weights)
            .filter(|(&l, _)| l > floor)
            .map(|(&l, &w)| w / (l + mu).powi(2))
            .sum()
    }

    fn transmit(&self, mu: f64, floor: f64) -> CMatrix {
        let mut scaled = self.projected.clone();
        for (i, &l) in self.eigenvalues.iter().enumerate() {
            let s = if l > floor { 1.0 / (l + mu) } else { 0.0 };
            scaled.row_mut(i).scale_mut(s);
        }
        &self.eigenvectors * scaled
    }
}

/// One transmit update for fixed receivers `u`. Returns `None` when the
/// receivers carry no signal.
fn transmit_update(h_up: &CMatrix, u: &CMatrix, layout: &Layout, power: f64) -> Option<CMatrix> {
    let updates: Vec<UserUpdate> = (0..layout.users())
        .map(|k| {
            let hk = h_up.columns(layout.rx_offset(k), layout.rx[k]);
            let t = hk.adjoint() * u;
            let (eigenvalues, eigenvectors) = hermitian_eigen_desc(&(&t * t.adjoint()));
            let b = hk.adjoint() * u.columns(layout.stream_offset(k), layout.streams[k]);
            let projected = eigenvectors.adjoint() * b;
            let weights = projected.row_iter().map(|r| r.iter().map(|z| z.norm_sqr()).sum()).collect();
            UserUpdate { eigenvalues, eigenvectors, projected, weights }
        })
        .collect();
    let top = updates.iter().flat_map(|u| u.eigenvalues.iter().copied()).fold(0.0, f64::max);
    if !(top > 0.0) {
        return None;
    }
    let floor = 1e-12 * top;
    let total_power = |mu: f64| updates.iter().map(|u| u.power(mu, floor)).sum::<f64>();
    let mu = if total_power(0.0) <= power {
        0.0
    } else {
        // power(mu) <= sum(weights) / mu^2, so this bracket is valid
        let weight_sum: f64 = updates.iter().flat_map(|u| u.weights.iter()).sum();
        let (mut lo, mut hi) = (0.0, (weight_sum / power).sqrt());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if total_power(mid) > power {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        hi
    };
    let vbar = block_diagonal(&updates.iter().map(|u| u.transmit(mu, floor)).collect::<Vec<_>>());
    let used = frobenius_sq(&vbar);
    if !(used > 0.0) {
        return None;
    }
    Some(vbar.scale((power / used).sqrt()))
}

/// Splits `Vbar` into unit-norm columns and powers, clamping negligible
/// powers to zero. Zero-power streams keep the direction from `fallback`.
fn split_columns(vbar: &CMatrix, fallback: &CMatrix, power: f64) -> (CMatrix, Vec<f64>, Vec<usize>) {
    let mut v = vbar.clone();
    let mut q = Vec::with_capacity(vbar.ncols());
    let mut zero = Vec::new();
    for j in 0..vbar.ncols() {
        let p = vbar.column(j).iter().map(|z| z.norm_sqr()).sum::<f64>();
        if p < ZERO_POWER_FRACTION * power {
            v.set_column(j, &fallback.column(j));
            q.push(0.0);
            zero.push(j);
        } else {
            v.column_mut(j).unscale_mut(p.sqrt());
            q.push(p);
        }
    }
    let total: f64 = q.iter().sum();
    if total > 0.0 {
        q.iter_mut().for_each(|x| *x *= power / total);
    }
    (v, q, zero)
}

/// Minimizes `L - M + sigma_eff2 tr(R^-1)` over block-diagonal unit-norm
/// beamformers and stream powers with `tr(Q) = P_D`.
pub fn solve_min_smse(
    h_up: &CMatrix,
    layout: &Layout,
    data_power: f64,
    sigma_eff2: f64,
    options: &SolverOptions,
) -> Result<VirtualUplinkSolution> {
    if !(data_power.is_finite() && data_power > 0.0) {
        return Err(Error::Domain(format!("data power must be positive, got {data_power}")));
    }
    if !(sigma_eff2.is_finite() && sigma_eff2 > 0.0) {
        return Err(Error::Domain(format!("effective noise must be positive, got {sigma_eff2}")));
    }
    if h_up.ncols() != layout.total_rx() {
        return Err(Error::Dimension(format!(
            "channel has {} columns, layout {} receive antennas",
            h_up.ncols(),
            layout.total_rx()
        )));
    }
    let l = layout.total_streams();
    let init = initial_beamformers(h_up, layout);
    let mut vbar = init.scale((data_power / l as f64).sqrt());
    let (mut smse, mut r_inv) = smse_of(h_up, &vbar, sigma_eff2)?;
    let mut history = vec![smse];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iters {
        iterations += 1;
        let u = &r_inv * h_up * &vbar;
        let Some(candidate) = transmit_update(h_up, &u, layout, data_power) else {
            converged = true;
            break;
        };
        let (next, next_inv) = smse_of(h_up, &candidate, sigma_eff2)?;
        if !(next <= smse) {
            // roundoff at the optimum
            converged = true;
            break;
        }
        let gain = smse - next;
        vbar = candidate;
        smse = next;
        r_inv = next_inv;
        history.push(smse);
        if gain <= options.tolerance * smse {
            converged = true;
            break;
        }
    }

    let (beamformers, powers, zero_power_streams) = split_columns(&vbar, &init, data_power);
    let vbar = scaled_beamformers(&beamformers, &powers);
    let (final_smse, r_inv) = smse_of(h_up, &vbar, sigma_eff2)?;
    let receivers = r_inv * h_up * &vbar;
    Ok(VirtualUplinkSolution {
        beamformers,
        powers,
        receivers,
        smse: final_smse,
        iterations,
        converged,
        history,
        zero_power_streams,
    })
}
