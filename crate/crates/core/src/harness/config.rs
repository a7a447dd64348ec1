//! Experiment configuration, loadable from TOML.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Scenario;
use crate::ccrnet::{CcrnetConfig, GanTrainOptions};
use crate::cenet::{CenetConfig, CenetTrainOptions};
use crate::error::{Error, Result};
use crate::ofdm::OfdmConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PilotConfig {
    pub freq_spacing: usize,
    pub time_spacing: usize,
    pub diamond_offset: usize,
}

impl Default for PilotConfig {
    fn default() -> Self {
        Self {
            freq_spacing: 4,
            time_spacing: 4,
            diamond_offset: 2,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelPaths {
    /// CENet checkpoints by name, e.g. `mixed`, `snr22`.
    pub cenet: BTreeMap<String, PathBuf>,
    pub ccrnet: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub snr_db: Vec<f64>,
    pub mse_schemes: Vec<String>,
    pub ber_schemes: Vec<String>,
    /// Test frames per (scheme, SNR) point.
    pub frames: usize,
    pub seed: u64,
    pub modulation: usize,
    pub subcarriers: usize,
    pub slots: usize,
    pub spacing_hz: f64,
    pub carrier_hz: f64,
    pub pilots: PilotConfig,
    /// Channel draws behind the empirical LMMSE correlation.
    pub correlation_frames: usize,
    /// RZF regularization; the noise variance when absent.
    pub rzf_tau: Option<f64>,
    /// CENet model used by the BER chains.
    pub ber_cenet: String,
    pub models: ModelPaths,
    pub train_samples: usize,
    pub val_samples: usize,
    pub train_snr_db: Vec<f64>,
    pub cenet: CenetConfig,
    pub cenet_train: CenetTrainOptions,
    pub ccrnet: CcrnetConfig,
    pub ccrnet_train: GanTrainOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let ofdm = OfdmConfig::default();
        Self {
            scenario: Scenario::VehA,
            snr_db: (0..7).map(|i| 10.0 + 5.0 * i as f64).collect(),
            mse_schemes: vec!["LS+GI".into(), "MMSE+GI".into()],
            ber_schemes: vec!["LS+ZF".into(), "Perfect+ZF".into()],
            frames: 2000,
            seed: 1,
            modulation: ofdm.modulation,
            subcarriers: ofdm.subcarriers,
            slots: ofdm.slots,
            spacing_hz: ofdm.spacing_hz,
            carrier_hz: ofdm.carrier_hz,
            pilots: PilotConfig::default(),
            correlation_frames: 2000,
            rzf_tau: None,
            ber_cenet: "mixed".into(),
            models: ModelPaths::default(),
            train_samples: 5000,
            val_samples: 200,
            train_snr_db: vec![10.0, 20.0, 30.0],
            cenet: CenetConfig::default(),
            cenet_train: CenetTrainOptions::default(),
            ccrnet: CcrnetConfig::default(),
            ccrnet_train: GanTrainOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.snr_db.is_empty() {
            return Err(Error::InvalidArgument("SNR list must not be empty".into()));
        }
        if self.frames == 0 {
            return Err(Error::InvalidArgument("frame count must be at least 1".into()));
        }
        self.ofdm_config().validate()?;
        self.cenet.validate()?;
        Ok(())
    }

    pub fn ofdm_config(&self) -> OfdmConfig {
        OfdmConfig {
            subcarriers: self.subcarriers,
            slots: self.slots,
            spacing_hz: self.spacing_hz,
            carrier_hz: self.carrier_hz,
            modulation: self.modulation,
        }
    }
}
