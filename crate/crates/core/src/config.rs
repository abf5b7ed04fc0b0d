//! Static scenario parameters and their text-file form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scenario parameters for one block-fading downlink.
///
/// Energies are in noise-normalized units; `e_max` is the total budget for a
/// block of `block_length` symbol periods, shared between `n_train` pilot
/// periods and `block_length - n_train` data periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Base-station antennas `M`.
    pub antennas: usize,
    /// Receive antennas per user, `N_k`.
    pub rx_antennas: Vec<usize>,
    /// Data streams per user, `L_k`.
    pub streams: Vec<usize>,
    /// Coherence interval `n` in symbol periods.
    pub block_length: usize,
    /// Pilot periods `n_T`.
    pub n_train: usize,
    /// Energy budget per block.
    pub e_max: f64,
    /// Channel coefficient variance.
    pub sigma_h2: f64,
    /// Noise variance.
    pub sigma_n2: f64,
}

impl SystemConfig {
    /// Builds and validates a config with `n_T = M`.
    pub fn new(
        antennas: usize,
        rx_antennas: Vec<usize>,
        streams: Vec<usize>,
        block_length: usize,
        e_max: f64,
        sigma_h2: f64,
        sigma_n2: f64,
    ) -> Result<Self> {
        let cfg = SystemConfig {
            antennas,
            rx_antennas,
            streams,
            block_length,
            n_train: antennas,
            e_max,
            sigma_h2,
            sigma_n2,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Two users, four base-station antennas, two antennas and two streams
    /// per user, unit channel variance and unit average power per symbol.
    pub fn reference(block_length: usize, sigma_n2: f64) -> Result<Self> {
        Self::new(4, vec![2, 2], vec![2, 2], block_length, block_length as f64, 1.0, sigma_n2)
    }

    pub fn users(&self) -> usize {
        self.rx_antennas.len()
    }

    /// Total receive antennas `N`.
    pub fn total_rx(&self) -> usize {
        self.rx_antennas.iter().sum()
    }

    /// Total streams `L`.
    pub fn total_streams(&self) -> usize {
        self.streams.iter().sum()
    }

    /// Data periods `n_D = n - n_T`.
    pub fn n_data(&self) -> usize {
        self.block_length - self.n_train
    }

    /// Noise-to-channel variance ratio.
    pub fn rho(&self) -> f64 {
        self.sigma_n2 / self.sigma_h2
    }

    /// Average power per symbol period, `E_max / n`.
    pub fn average_power(&self) -> f64 {
        self.e_max / self.block_length as f64
    }

    /// Row offset of user `k` inside the stacked receive dimension.
    pub fn rx_offset(&self, k: usize) -> usize {
        self.rx_antennas[..k].iter().sum()
    }

    /// Column offset of user `k` inside the stacked stream dimension.
    pub fn stream_offset(&self, k: usize) -> usize {
        self.streams[..k].iter().sum()
    }

    /// Owning user of every global stream index.
    pub fn stream_owners(&self) -> Vec<usize> {
        self.streams
            .iter()
            .enumerate()
            .flat_map(|(k, &l)| std::iter::repeat_n(k, l))
            .collect()
    }

    pub fn with_sigma_n2(&self, sigma_n2: f64) -> Result<Self> {
        let cfg = SystemConfig { sigma_n2, ..self.clone() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.antennas == 0 {
            return bad("M must be at least 1".into());
        }
        if self.rx_antennas.is_empty() {
            return bad("at least one user is required".into());
        }
        if self.rx_antennas.len() != self.streams.len() {
            return bad(format!(
                "{} receive-antenna entries but {} stream entries",
                self.rx_antennas.len(),
                self.streams.len()
            ));
        }
        if self.rx_antennas.contains(&0) {
            return bad("every user needs at least one receive antenna".into());
        }
        if self.streams.contains(&0) {
            return bad("every user needs at least one stream".into());
        }
        let l = self.streams.iter().try_fold(0usize, |acc, &x| acc.checked_add(x));
        match l {
            Some(l) if l <= self.antennas => {}
            _ => return bad(format!("total streams must not exceed M = {}", self.antennas)),
        }
        if self.rx_antennas.iter().try_fold(0usize, |acc, &x| acc.checked_add(x)).is_none() {
            return bad("receive-antenna count overflows".into());
        }
        if self.n_train < self.antennas {
            return bad(format!("n_T = {} is below M = {}", self.n_train, self.antennas));
        }
        if self.block_length <= self.n_train {
            return bad(format!(
                "block length {} leaves no data periods after {} pilots",
                self.block_length, self.n_train
            ));
        }
        for (name, v) in [("e_max", self.e_max), ("sigma_h2", self.sigma_h2), ("sigma_n2", self.sigma_n2)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        Ok(())
    }
}

fn default_one() -> f64 {
    1.0
}

/// On-disk scenario description (TOML).
///
/// `e_max` may be given directly; otherwise it is `alpha * block_length`, so
/// that overriding the block length keeps the average power fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub antennas: usize,
    pub rx_antennas: Vec<usize>,
    pub streams: Vec<usize>,
    pub block_length: usize,
    #[serde(default)]
    pub n_train: Option<usize>,
    #[serde(default = "default_one")]
    pub alpha: f64,
    #[serde(default)]
    pub e_max: Option<f64>,
    #[serde(default = "default_one")]
    pub sigma_h2: f64,
    #[serde(default = "default_one")]
    pub sigma_n2: f64,
}

impl Default for ConfigFile {
    fn default() -> Self {
        ConfigFile {
            antennas: 4,
            rx_antennas: vec![2, 2],
            streams: vec![2, 2],
            block_length: 1000,
            n_train: None,
            alpha: 1.0,
            e_max: None,
            sigma_h2: 1.0,
            sigma_n2: 1.0,
        }
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Resolves into a validated [`SystemConfig`].
    pub fn resolve(&self) -> Result<SystemConfig> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        let cfg = SystemConfig {
            antennas: self.antennas,
            rx_antennas: self.rx_antennas.clone(),
            streams: self.streams.clone(),
            block_length: self.block_length,
            n_train: self.n_train.unwrap_or(self.antennas),
            e_max: self.e_max.unwrap_or(self.alpha * self.block_length as f64),
            sigma_h2: self.sigma_h2,
            sigma_n2: self.sigma_n2,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses a TOML scenario straight into a validated config.
pub fn parse_config(text: &str) -> Result<SystemConfig> {
    ConfigFile::parse(text)?.resolve()
}

/// Parses a comma-separated list of SNR values in dB.
pub fn parse_snr_list(text: &str) -> Result<Vec<f64>> {
    let values = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let v: f64 = s.parse().map_err(|_| Error::Parse(format!("bad SNR value {s:?}")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Parse(format!("SNR must be finite, got {s:?}")))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    if values.is_empty() {
        return Err(Error::Parse("empty SNR list".into()));
    }
    Ok(values)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}
