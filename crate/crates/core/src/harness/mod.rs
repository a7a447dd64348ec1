//! Experiment plumbing: seeded frame generation, dataset files, MSE/BER
//! sweeps, result emission, and configuration.
//!
//! Every random quantity of a frame comes from its own sub-stream of the
//! frame seed (channel, data bits, noise), so the same frame seed yields
//! the same channel, payload and unit noise at every SNR.

pub mod config;
pub mod dataset;
pub mod parallel;
pub mod results;
pub mod sweep;
pub mod training;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{generate_realization, ChannelRealization, DopplerConfig, TapProfile};
use crate::error::{Error, Result};
use crate::ofdm::{apply_channel, noise_variance, unit_noise, FrameGrid, OfdmConfig, QamConstellation};
use crate::pilots::{lattice_pattern, PilotPattern};
use crate::rng::{derive_seed, rng_from};

pub use config::{ExperimentConfig, PilotConfig};
pub use dataset::{generate_dataset, read_dataset, DatasetHeader, DatasetRecord};
pub use results::{emit_results, write_plot_script, SweepResult, SweepRow};
pub use sweep::{run_ber_sweep, run_mse_sweep, BerScheme, ModelBank, MseScheme};

pub const STREAM_FRAME: u64 = 0;
pub const STREAM_CHANNEL: u64 = 1;
pub const STREAM_BITS: u64 = 2;
pub const STREAM_NOISE: u64 = 3;
pub const STREAM_CORRELATION: u64 = 4;

/// Seed of frame `index` in a run seeded with `base`.
pub fn frame_seed(base: u64, index: u64) -> u64 {
    derive_seed(base, STREAM_FRAME, index)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "vehA")]
    VehA,
    #[serde(rename = "pedA")]
    PedA,
}

impl Scenario {
    pub fn profile(self) -> TapProfile {
        match self {
            Scenario::VehA => TapProfile::veh_a(),
            Scenario::PedA => TapProfile::ped_a(),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::VehA => "vehA",
            Scenario::PedA => "pedA",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "veha" => Ok(Scenario::VehA),
            "peda" => Ok(Scenario::PedA),
            _ => Err(Error::InvalidArgument(format!("unknown scenario {s:?} (vehA|pedA)"))),
        }
    }
}

/// One simulated frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub seed: u64,
    pub snr_db: f64,
    pub noise_var: f64,
    pub h: FrameGrid,
    pub x: FrameGrid,
    pub y: FrameGrid,
    /// Payload bits on the data positions, k-major.
    pub bits: Vec<u8>,
}

/// Everything needed to simulate frames of one scenario.
#[derive(Clone, Debug)]
pub struct Link {
    pub config: OfdmConfig,
    pub profile: TapProfile,
    pub doppler: DopplerConfig,
    pub pattern: PilotPattern,
    pub qam: QamConstellation,
}

impl Link {
    pub fn new(scenario: Scenario, config: OfdmConfig) -> Result<Self> {
        let pattern = PilotPattern::for_config(&config)?;
        Self::with_profile(scenario.profile(), config, pattern)
    }

    pub fn with_profile(profile: TapProfile, config: OfdmConfig, pattern: PilotPattern) -> Result<Self> {
        config.validate()?;
        profile.validate()?;
        if pattern.grid_dims() != (config.subcarriers, config.slots) {
            return Err(Error::shape(
                "Link",
                format!("pattern grid {:?} vs config {}x{}", pattern.grid_dims(), config.subcarriers, config.slots),
            ));
        }
        let doppler = DopplerConfig::new(profile.speed_kmh.unwrap_or(0.0), &config);
        Ok(Self {
            qam: QamConstellation::new(config.modulation)?,
            config,
            profile,
            doppler,
            pattern,
        })
    }

    pub fn from_experiment(cfg: &ExperimentConfig) -> Result<Self> {
        let config = cfg.ofdm_config();
        let p = &cfg.pilots;
        let pattern = lattice_pattern(config.subcarriers, config.slots, p.freq_spacing, p.time_spacing, p.diamond_offset)?;
        Self::with_profile(cfg.scenario.profile(), config, pattern)
    }

    pub fn scenario_tag(&self) -> &str {
        &self.profile.name
    }

    pub fn bits_per_frame(&self) -> usize {
        self.pattern.data_count() * self.qam.bits_per_symbol()
    }

    pub fn channel(&self, seed: u64) -> ChannelRealization {
        generate_realization(&self.profile, &self.doppler, &self.config, derive_seed(seed, STREAM_CHANNEL, 0))
    }

    /// Transmit grid (pilots plus random payload) and its payload bits.
    pub fn transmit(&self, seed: u64) -> (FrameGrid, Vec<u8>) {
        let mut rng = rng_from(derive_seed(seed, STREAM_BITS, 0));
        let bits: Vec<u8> = (0..self.bits_per_frame()).map(|_| rng.random_range(0..2u8)).collect();
        let syms = self.qam.modulate(&bits).expect("whole symbols");
        let mut x = FrameGrid::zeros(self.config.subcarriers, self.config.slots);
        for (i, s) in self.pattern.data_indices().into_iter().zip(syms) {
            x.as_mut_slice()[i] = s;
        }
        self.pattern.place_symbols(&mut x);
        (x, bits)
    }

    /// `Y = H·X + σW` with the frame's unit noise `W`.
    pub fn receive(&self, h: &FrameGrid, x: &FrameGrid, seed: u64, snr_db: f64) -> Result<(FrameGrid, f64)> {
        let var = noise_variance(snr_db);
        let sigma = var.sqrt();
        let w = unit_noise(&self.config, &mut rng_from(derive_seed(seed, STREAM_NOISE, 0))).map(|z| z * sigma);
        Ok((apply_channel(x, h, &w)?, var))
    }

    pub fn frame(&self, seed: u64, snr_db: f64) -> Frame {
        let h = self.channel(seed).h;
        let (x, bits) = self.transmit(seed);
        let (y, noise_var) = self.receive(&h, &x, seed, snr_db).expect("grids share the config shape");
        Frame {
            seed,
            snr_db,
            noise_var,
            h,
            x,
            y,
            bits,
        }
    }
}

/// SNR of record `index` when `count` records are split into equal
/// contiguous blocks over `mix`.
pub fn snr_for_index(mix: &[f64], count: usize, index: usize) -> f64 {
    mix[index * mix.len() / count]
}
