//! Robust minimum sum-MSE precoding through the virtual uplink.
//!
//! In the virtual uplink user `k` transmits through the flipped channel
//! `H_k` (`M x N_k`) with unit-norm beamformers `V_k` and stream powers
//! `Q_k`, and the base station applies receive filters `U_k`. With equal
//! estimation-error variances the channel error only inflates the noise,
//! `sigma_eff2 = sigma_n2 + sigma_e2 tr(Q)`, so the robust design is the
//! perfect-CSI design on `H_hat` with noise `sigma_eff2`:
//!
//! ```text
//! R    = H_hat V Q V^H H_hat^H + sigma_eff2 I_M
//! SMSE = L - M + sigma_eff2 tr(R^-1)
//! ```
//!
//! [`solve_min_smse`] minimizes this under `tr(Q) <= P_D` and
//! [`duality_transform`] maps the result to downlink precoders, powers and
//! receive filters with identical per-stream MSEs.

use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::linalg::{hpd_inverse, scale_columns, scaled_identity, trace_re, CMatrix};

mod duality;
mod solver;

pub use duality::{downlink_stream_mse, duality_transform, DownlinkSolution};
pub use solver::{solve_min_smse, SolverOptions, VirtualUplinkSolution};

/// Per-user receive-antenna and stream counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub rx: Vec<usize>,
    pub streams: Vec<usize>,
}

impl Layout {
    pub fn new(rx: Vec<usize>, streams: Vec<usize>) -> Result<Self> {
        if rx.is_empty() || rx.len() != streams.len() || rx.contains(&0) || streams.contains(&0) {
            return Err(Error::Dimension(format!("invalid layout {rx:?} / {streams:?}")));
        }
        Ok(Layout { rx, streams })
    }

    pub fn from_config(cfg: &SystemConfig) -> Self {
        Layout { rx: cfg.rx_antennas.clone(), streams: cfg.streams.clone() }
    }

    pub fn users(&self) -> usize {
        self.rx.len()
    }

    pub fn total_rx(&self) -> usize {
        self.rx.iter().sum()
    }

    pub fn total_streams(&self) -> usize {
        self.streams.iter().sum()
    }

    pub fn rx_offset(&self, k: usize) -> usize {
        self.rx[..k].iter().sum()
    }

    pub fn stream_offset(&self, k: usize) -> usize {
        self.streams[..k].iter().sum()
    }

    /// User owning each global stream index.
    pub fn owners(&self) -> Vec<usize> {
        self.streams.iter().enumerate().flat_map(|(k, &l)| std::iter::repeat_n(k, l)).collect()
    }

    fn check(&self, h_up: &CMatrix, v: &CMatrix, q: &[f64]) -> Result<()> {
        if h_up.ncols() != self.total_rx() || v.nrows() != self.total_rx() || v.ncols() != self.total_streams() || q.len() != self.total_streams() {
            return Err(Error::Dimension(format!(
                "H is {}x{}, V is {}x{}, {} powers for layout {:?}/{:?}",
                h_up.nrows(),
                h_up.ncols(),
                v.nrows(),
                v.ncols(),
                q.len(),
                self.rx,
                self.streams
            )));
        }
        Ok(())
    }
}

/// Stacks per-user `N_k x L_k` blocks into the `N x L` block-diagonal matrix.
pub fn block_diagonal(blocks: &[CMatrix]) -> CMatrix {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// `V sqrt(Q)`.
pub fn scaled_beamformers(v: &CMatrix, q: &[f64]) -> CMatrix {
    let s: Vec<f64> = q.iter().map(|x| x.max(0.0).sqrt()).collect();
    scale_columns(v, &s)
}

/// `R = H V Q V^H H^H + sigma_eff2 I`.
pub fn receive_covariance(h_up: &CMatrix, v: &CMatrix, q: &[f64], sigma_eff2: f64) -> CMatrix {
    let a = h_up * scaled_beamformers(v, q);
    &a * a.adjoint() + scaled_identity(h_up.nrows(), sigma_eff2)
}

fn check_noise(sigma_eff2: f64) -> Result<()> {
    if !(sigma_eff2.is_finite() && sigma_eff2 > 0.0) {
        return Err(Error::Domain(format!("effective noise {sigma_eff2}")));
    }
    Ok(())
}

/// `L - M + sigma_eff2 tr(R^-1)`, with `L` the number of columns of `V`.
pub fn smse_objective(h_up: &CMatrix, v: &CMatrix, q: &[f64], sigma_eff2: f64) -> Result<f64> {
    check_noise(sigma_eff2)?;
    if h_up.ncols() != v.nrows() || v.ncols() != q.len() {
        return Err(Error::Dimension("H, V and Q do not line up".into()));
    }
    let r_inv = hpd_inverse(&receive_covariance(h_up, v, q, sigma_eff2))?;
    Ok(v.ncols() as f64 - h_up.nrows() as f64 + sigma_eff2 * trace_re(&r_inv))
}

/// Wiener receive filters `U = R^-1 H V sqrt(Q)` (`M x L`, users side by side).
pub fn wiener_receive_filters(h_up: &CMatrix, v: &CMatrix, q: &[f64], sigma_eff2: f64) -> Result<CMatrix> {
    check_noise(sigma_eff2)?;
    let r_inv = hpd_inverse(&receive_covariance(h_up, v, q, sigma_eff2))?;
    Ok(r_inv * h_up * scaled_beamformers(v, q))
}

/// Per-user MSE matrices
/// `U_k^H R U_k - U_k^H H_k Vbar_k - Vbar_k^H H_k^H U_k + I` for arbitrary
/// receive filters `U`.
pub fn mse_matrices(
    h_up: &CMatrix,
    v: &CMatrix,
    q: &[f64],
    u: &CMatrix,
    sigma_eff2: f64,
    layout: &Layout,
) -> Result<Vec<CMatrix>> {
    layout.check(h_up, v, q)?;
    if u.shape() != (h_up.nrows(), layout.total_streams()) {
        return Err(Error::Dimension("receive filters have the wrong shape".into()));
    }
    let r = receive_covariance(h_up, v, q, sigma_eff2);
    let vbar = scaled_beamformers(v, q);
    let mut out = Vec::with_capacity(layout.users());
    for k in 0..layout.users() {
        let (ro, so) = (layout.rx_offset(k), layout.stream_offset(k));
        let (nk, lk) = (layout.rx[k], layout.streams[k]);
        let uk = u.columns(so, lk);
        let hk = h_up.columns(ro, nk);
        let vk = vbar.view((ro, so), (nk, lk));
        let cross = uk.adjoint() * hk * vk;
        let e = uk.adjoint() * &r * uk - &cross - cross.adjoint() + scaled_identity(lk, 1.0);
        out.push(e);
    }
    Ok(out)
}

/// Sum of the MSE-matrix traces with Wiener receivers; equals
/// [`smse_objective`].
pub fn smse_from_mse_matrices(h_up: &CMatrix, v: &CMatrix, q: &[f64], sigma_eff2: f64, layout: &Layout) -> Result<f64> {
    let u = wiener_receive_filters(h_up, v, q, sigma_eff2)?;
    Ok(mse_matrices(h_up, v, q, &u, sigma_eff2, layout)?.iter().map(trace_re).sum())
}

/// Per-stream MSEs (diagonals of the MSE matrices) with Wiener receivers.
pub fn uplink_stream_mse(h_up: &CMatrix, v: &CMatrix, q: &[f64], sigma_eff2: f64, layout: &Layout) -> Result<Vec<f64>> {
    let u = wiener_receive_filters(h_up, v, q, sigma_eff2)?;
    Ok(mse_matrices(h_up, v, q, &u, sigma_eff2, layout)?
        .iter()
        .flat_map(|e| e.diagonal().iter().map(|z| z.re).collect::<Vec<_>>())
        .collect())
}

/// `sigma_n2 + sum_k sigma_k2 tr(V_k Q_k V_k^H)` for per-user error
/// variances.
pub fn effective_noise_general(sigma_n2: f64, sigma_k2: &[f64], v: &CMatrix, q: &[f64], layout: &Layout) -> Result<f64> {
    if sigma_k2.len() != layout.users() || v.ncols() != q.len() || q.len() != layout.total_streams() {
        return Err(Error::Dimension("one error variance per user and one power per stream".into()));
    }
    if sigma_k2.iter().any(|&s| !(s >= 0.0)) || !(sigma_n2 >= 0.0) {
        return Err(Error::Domain("variances must be non-negative".into()));
    }
    let mut total = sigma_n2;
    for (i, k) in layout.owners().into_iter().enumerate() {
        let col_sq: f64 = v.column(i).iter().map(|z| z.norm_sqr()).sum();
        total += sigma_k2[k] * q[i] * col_sq;
    }
    Ok(total)
}
