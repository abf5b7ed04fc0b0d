//! Mapping a virtual-uplink solution to the downlink with identical
//! per-stream MSEs and the same total power.
//!
//! Stream `i` of user `k(i)` uses the normalized uplink receiver
//! `u~_i = u_i / a_i` as its downlink precoder and `b_i v_i^H` as its
//! downlink receive filter. With coupling gains
//! `G_ij = |u~_i^H H_k(j) v_j|^2`, equal MSEs require
//!
//! ```text
//! p_i (sum_{j != i} G_ij q_j + s2) - q_i sum_{j != i} G_ji p_j = s2 q_i
//! ```
//!
//! and `b_i sqrt(p_i) = a_i sqrt(q_i)`. The system matrix has positive
//! diagonal and column sums equal to `s2`, so it is nonsingular and summing
//! the equations gives `sum p = sum q`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{c, CMatrix};

use super::{Layout, VirtualUplinkSolution};

#[derive(Debug, Clone, PartialEq)]
pub struct DownlinkSolution {
    /// Global precoder with unit-norm columns, `M x L`. Dropped streams have
    /// a zero column.
    pub precoder: CMatrix,
    /// Downlink stream powers.
    pub powers: Vec<f64>,
    /// Per-user receive filters `L_k x N_k`.
    pub receivers: Vec<CMatrix>,
    /// Downlink MSE of every stream, evaluated on the estimated channel.
    pub per_stream_mse: Vec<f64>,
    /// Streams with no power that were left out of the matching.
    pub dropped_streams: Vec<usize>,
}

impl DownlinkSolution {
    pub fn total_power(&self) -> f64 {
        self.powers.iter().sum()
    }

    pub fn smse(&self) -> f64 {
        self.per_stream_mse.iter().sum()
    }

    /// `U sqrt(P)`, the matrix applied to the symbol vector.
    pub fn transmit_matrix(&self) -> CMatrix {
        let s: Vec<f64> = self.powers.iter().map(|p| p.sqrt()).collect();
        crate::linalg::scale_columns(&self.precoder, &s)
    }
}

/// Per-stream downlink MSEs for precoder `U`, powers `P` and receive
/// filters `W_k`, with channel `G = H^H` and noise `sigma_eff2`.
pub fn downlink_stream_mse(
    h_up: &CMatrix,
    layout: &Layout,
    precoder: &CMatrix,
    powers: &[f64],
    receivers: &[CMatrix],
    sigma_eff2: f64,
) -> Result<Vec<f64>> {
    let l = layout.total_streams();
    if precoder.shape() != (h_up.nrows(), l) || powers.len() != l || receivers.len() != layout.users() {
        return Err(Error::Dimension("downlink design does not match layout".into()));
    }
    let s: Vec<f64> = powers.iter().map(|p| p.max(0.0).sqrt()).collect();
    let tx = crate::linalg::scale_columns(precoder, &s);
    let mut out = Vec::with_capacity(l);
    for (k, wk) in receivers.iter().enumerate() {
        let gk = h_up.columns(layout.rx_offset(k), layout.rx[k]).adjoint();
        if wk.shape() != (layout.streams[k], layout.rx[k]) {
            return Err(Error::Dimension(format!("receive filter of user {k} has the wrong shape")));
        }
        // effective L_k x L matrix from all transmitted streams to user k's outputs
        let eff = wk * gk * &tx;
        let so = layout.stream_offset(k);
        for j in 0..layout.streams[k] {
            let row = eff.row(j);
            let total: f64 = row.iter().map(|z| z.norm_sqr()).sum();
            let noise: f64 = wk.row(j).iter().map(|z| z.norm_sqr()).sum::<f64>() * sigma_eff2;
            out.push(total + noise - 2.0 * row[so + j].re + 1.0);
        }
    }
    Ok(out)
}

/// Downlink precoders, powers and receive filters with the same per-stream
/// MSEs and total power as `solution`.
pub fn duality_transform(
    solution: &VirtualUplinkSolution,
    h_up: &CMatrix,
    layout: &Layout,
    sigma_eff2: f64,
) -> Result<DownlinkSolution> {
    let l = layout.total_streams();
    let m = h_up.nrows();
    if solution.receivers.shape() != (m, l) || solution.powers.len() != l {
        return Err(Error::Dimension("uplink solution does not match layout".into()));
    }
    let owners = layout.owners();
    let q = &solution.powers;
    let alpha: Vec<f64> = (0..l).map(|i| solution.receivers.column(i).norm()).collect();
    let active: Vec<usize> = (0..l).filter(|&i| q[i] > 0.0 && alpha[i] > 0.0).collect();
    let dropped: Vec<usize> = (0..l).filter(|i| !active.contains(i)).collect();

    let mut precoder = CMatrix::zeros(m, l);
    for &i in &active {
        precoder.set_column(i, &solution.receivers.column(i).unscale(alpha[i]));
    }

    // uplink coupling: gain[(i, j)] = |u~_i^H H_k(j) v_j|^2
    let gain = DMatrix::from_fn(l, l, |i, j| {
        let k = owners[j];
        let hk = h_up.columns(layout.rx_offset(k), layout.rx[k]);
        let vj = solution.beamformers.view((layout.rx_offset(k), j), (layout.rx[k], 1));
        (precoder.column(i).adjoint() * hk * vj)[(0, 0)].norm_sqr()
    });

    let n = active.len();
    let mut powers = vec![0.0; l];
    if n > 0 {
        let mut system = DMatrix::<f64>::zeros(n, n);
        for (a, &i) in active.iter().enumerate() {
            let interference: f64 = active.iter().filter(|&&j| j != i).map(|&j| gain[(i, j)] * q[j]).sum();
            system[(a, a)] = interference + sigma_eff2;
            for (b, &j) in active.iter().enumerate() {
                if j != i {
                    system[(a, b)] = -q[i] * gain[(j, i)];
                }
            }
        }
        let rhs = DVector::from_iterator(n, active.iter().map(|&i| sigma_eff2 * q[i]));
        let p = system
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("power matching system is singular".into()))?;
        for (a, &i) in active.iter().enumerate() {
            if !(p[a] > 0.0) {
                return Err(Error::Numerical(format!("non-positive downlink power for stream {i}")));
            }
            powers[i] = p[a];
        }
    }

    let receivers: Vec<CMatrix> = (0..layout.users())
        .map(|k| {
            let so = layout.stream_offset(k);
            let mut w = CMatrix::zeros(layout.streams[k], layout.rx[k]);
            for j in 0..layout.streams[k] {
                let i = so + j;
                if powers[i] > 0.0 {
                    let beta = alpha[i] * (q[i] / powers[i]).sqrt();
                    let ro = layout.rx_offset(k);
                    for r in 0..layout.rx[k] {
                        w[(j, r)] = solution.beamformers[(ro + r, i)].conj() * c(beta, 0.0);
                    }
                }
            }
            w
        })
        .collect();

    let per_stream_mse = downlink_stream_mse(h_up, layout, &precoder, &powers, &receivers, sigma_eff2)?;
    Ok(DownlinkSolution { precoder, powers, receivers, per_stream_mse, dropped_streams: dropped })
}
