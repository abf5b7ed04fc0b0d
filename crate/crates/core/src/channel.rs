//! I.i.d. Rayleigh block-fading channels.
//!
//! Orientation: a [`ChannelRealization`] stores the downlink matrix
//! `G = H^H` of size `N x M`, one row per receive antenna, so that user `k`
//! receives `G_k x + n_k` with `G_k` the `N_k x M` block of rows. The flipped
//! virtual-uplink channel `H = G^H` (`M x N`) is obtained with
//! [`ChannelRealization::uplink`].

use rand::Rng;

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::rng::{complex_gaussian_matrix, stream, Purpose};

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    downlink: CMatrix,
    rx_antennas: Vec<usize>,
}

impl ChannelRealization {
    /// Wraps an `N x M` downlink matrix partitioned by `rx_antennas`.
    pub fn from_downlink(downlink: CMatrix, rx_antennas: Vec<usize>) -> Result<Self> {
        let n: usize = rx_antennas.iter().sum();
        if n != downlink.nrows() || rx_antennas.contains(&0) {
            return Err(Error::Dimension(format!(
                "{} rows cannot be split as {:?}",
                downlink.nrows(),
                rx_antennas
            )));
        }
        Ok(ChannelRealization { downlink, rx_antennas })
    }

    /// Reassembles a realization from per-user blocks.
    pub fn stack(blocks: &[CMatrix]) -> Result<Self> {
        let cols = blocks.first().map(|b| b.ncols()).ok_or_else(|| Error::Dimension("no blocks".into()))?;
        if blocks.iter().any(|b| b.ncols() != cols) {
            return Err(Error::Dimension("blocks have differing column counts".into()));
        }
        let sizes: Vec<usize> = blocks.iter().map(|b| b.nrows()).collect();
        let n = sizes.iter().sum();
        let mut g = CMatrix::zeros(n, cols);
        let mut row = 0;
        for b in blocks {
            g.rows_mut(row, b.nrows()).copy_from(b);
            row += b.nrows();
        }
        Self::from_downlink(g, sizes)
    }

    /// Downlink matrix `H^H`, `N x M`.
    pub fn downlink(&self) -> &CMatrix {
        &self.downlink
    }

    /// Virtual-uplink matrix `H`, `M x N`.
    pub fn uplink(&self) -> CMatrix {
        self.downlink.adjoint()
    }

    pub fn users(&self) -> usize {
        self.rx_antennas.len()
    }

    pub fn rx_antennas(&self) -> &[usize] {
        &self.rx_antennas
    }

    /// Downlink rows of user `k` (zero-based), `N_k x M`.
    pub fn user_block(&self, k: usize) -> Result<CMatrix> {
        if k >= self.users() {
            return Err(Error::UserIndex { index: k, users: self.users() });
        }
        let offset: usize = self.rx_antennas[..k].iter().sum();
        Ok(self.downlink.rows(offset, self.rx_antennas[k]).into_owned())
    }

    pub fn user_blocks(&self) -> Vec<CMatrix> {
        (0..self.users()).map(|k| self.user_block(k).expect("index in range")).collect()
    }
}

/// Draws a realization with entries i.i.d. `CN(0, sigma_h2)` from `rng`.
pub fn draw_channel_with<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Result<ChannelRealization> {
    cfg.validate()?;
    let g = complex_gaussian_matrix(rng, cfg.total_rx(), cfg.antennas, cfg.sigma_h2);
    ChannelRealization::from_downlink(g, cfg.rx_antennas.clone())
}

/// Draws the realization keyed by `seed`; identical seeds give identical
/// matrices.
pub fn draw_channel(cfg: &SystemConfig, seed: u64) -> Result<ChannelRealization> {
    draw_channel_with(cfg, &mut stream(seed, Purpose::Channel))
}
