//! Tapped-delay-line Rayleigh fading on the time-frequency grid.
//!
//! Each tap gain is a sum-of-sinusoids Jakes process with random arrival
//! angles and phases, whose ensemble autocorrelation is `p_l·J₀(2π f_d Δt)`.
//! The grid response is the exact frequency-domain sum
//! `H(k,n) = Σ_l a_l(n)·exp(−j2π·k·F·τ_l)`; delays are not sample aligned.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ofdm::{FrameGrid, OfdmConfig};
use crate::rng::{rng_from, SimRng};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Symbol duration over the useful part `1/F` (LTE normal cyclic prefix,
/// averaged over a slot).
pub const CP_OVERHEAD: f64 = 1.07;

/// Sinusoids per tap in the Jakes synthesizer.
pub const SINUSOIDS_PER_TAP: usize = 64;

/// Power-delay profile with powers normalized to unit total.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TapProfile {
    pub name: String,
    pub delays_ns: Vec<f64>,
    pub powers_db: Vec<f64>,
    /// Default receiver speed for this scenario, if any.
    #[serde(default)]
    pub speed_kmh: Option<f64>,
}

impl TapProfile {
    pub fn new(name: impl Into<String>, delays_ns: Vec<f64>, powers_db: Vec<f64>) -> Result<Self> {
        let p = Self {
            name: name.into(),
            delays_ns,
            powers_db,
            speed_kmh: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_speed(mut self, kmh: f64) -> Self {
        self.speed_kmh = Some(kmh);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.delays_ns.is_empty() || self.delays_ns.len() != self.powers_db.len() {
            return Err(Error::InvalidArgument(format!(
                "profile {}: need matching, non-empty delay and power lists",
                self.name
            )));
        }
        if self.delays_ns[0] < 0.0 || self.delays_ns.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(format!(
                "profile {}: delays must be non-negative and strictly increasing",
                self.name
            )));
        }
        if self.powers_db.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument(format!("profile {}: non-finite power", self.name)));
        }
        Ok(())
    }

    pub fn taps(&self) -> usize {
        self.delays_ns.len()
    }

    /// Linear tap powers summing to one.
    pub fn linear_powers(&self) -> Vec<f64> {
        let lin: Vec<f64> = self.powers_db.iter().map(|db| 10f64.powf(db / 10.0)).collect();
        let total: f64 = lin.iter().sum();
        lin.into_iter().map(|p| p / total).collect()
    }

    /// ITU-R M.1225 Vehicular A.
    pub fn veh_a() -> Self {
        Self::new(
            "VehA",
            vec![0.0, 310.0, 710.0, 1090.0, 1730.0, 2510.0],
            vec![0.0, -1.0, -9.0, -10.0, -15.0, -20.0],
        )
        .expect("static profile")
        .with_speed(80.0)
    }

    /// ITU-R M.1225 Pedestrian A.
    pub fn ped_a() -> Self {
        Self::new(
            "PedA",
            vec![0.0, 110.0, 190.0, 410.0],
            vec![0.0, -9.7, -19.2, -22.8],
        )
        .expect("static profile")
        .with_speed(8.0)
    }

    /// Closed-form frequency correlation `Σ_l p_l·exp(−j2π·Δk·F·τ_l)`,
    /// i.e. `E[H(k,n)·conj(H(k+Δk,n))]`.
    pub fn frequency_correlation(&self, delta_k: i64, spacing_hz: f64) -> Complex64 {
        self.linear_powers()
            .iter()
            .zip(&self.delays_ns)
            .map(|(p, tau)| Complex64::from_polar(*p, 2.0 * PI * delta_k as f64 * spacing_hz * tau * 1e-9))
            .sum()
    }
}

/// The two built-in scenarios, VehA and PedA.
pub fn builtin_profiles() -> [TapProfile; 2] {
    [TapProfile::veh_a(), TapProfile::ped_a()]
}

#[derive(Deserialize)]
struct ProfileFile {
    profile: Vec<TapProfile>,
}

/// Parses `[[profile]]` tables (`name`, `delays_ns`, `powers_db`, optional
/// `speed_kmh`).
pub fn parse_profiles(text: &str) -> Result<Vec<TapProfile>> {
    let file: ProfileFile =
        toml::from_str(text).map_err(|e| Error::Format(format!("profile file: {e}")))?;
    for p in &file.profile {
        p.validate()?;
    }
    Ok(file.profile)
}

pub fn load_profiles(path: impl AsRef<Path>) -> Result<Vec<TapProfile>> {
    parse_profiles(&std::fs::read_to_string(path)?)
}

/// Maximum Doppler shift `v·fc/c` in Hz for a speed in km/h.
pub fn max_doppler(speed_kmh: f64, carrier_hz: f64) -> f64 {
    speed_kmh / 3.6 * carrier_hz / SPEED_OF_LIGHT
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DopplerConfig {
    pub speed_kmh: f64,
    pub carrier_hz: f64,
    pub slot_duration_s: f64,
}

impl DopplerConfig {
    /// Slot duration `CP_OVERHEAD / F`.
    pub fn new(speed_kmh: f64, config: &OfdmConfig) -> Self {
        Self {
            speed_kmh,
            carrier_hz: config.carrier_hz,
            slot_duration_s: CP_OVERHEAD / config.spacing_hz,
        }
    }

    pub fn max_doppler_hz(&self) -> f64 {
        max_doppler(self.speed_kmh, self.carrier_hz)
    }
}

/// One sampled channel: the grid response and the tap trajectories it was
/// built from (`tap_gains[l][n]`).
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    pub h: FrameGrid,
    pub tap_gains: Vec<Vec<Complex64>>,
}

/// Sum-of-sinusoids gain trajectory of one tap over `slots` slots.
fn jakes_trajectory<R: Rng + ?Sized>(power: f64, fd: f64, slot_s: f64, slots: usize, rng: &mut R) -> Vec<Complex64> {
    let amp = (power / SINUSOIDS_PER_TAP as f64).sqrt();
    let oscillators: Vec<(f64, f64)> = (0..SINUSOIDS_PER_TAP)
        .map(|_| {
            let angle: f64 = rng.random_range(0.0..2.0 * PI);
            let phase: f64 = rng.random_range(0.0..2.0 * PI);
            (2.0 * PI * fd * angle.cos() * slot_s, phase)
        })
        .collect();
    (0..slots)
        .map(|n| {
            oscillators
                .iter()
                .map(|&(w, phi)| Complex64::from_polar(amp, w * n as f64 + phi))
                .sum()
        })
        .collect()
}

pub fn generate_realization_with<R: Rng + ?Sized>(
    profile: &TapProfile,
    doppler: &DopplerConfig,
    config: &OfdmConfig,
    rng: &mut R,
) -> ChannelRealization {
    let fd = doppler.max_doppler_hz();
    let tap_gains: Vec<Vec<Complex64>> = profile
        .linear_powers()
        .iter()
        .map(|&p| jakes_trajectory(p, fd, doppler.slot_duration_s, config.slots, rng))
        .collect();
    let phasors: Vec<Vec<Complex64>> = (0..config.subcarriers)
        .map(|k| {
            profile
                .delays_ns
                .iter()
                .map(|tau| Complex64::from_polar(1.0, -2.0 * PI * k as f64 * config.spacing_hz * tau * 1e-9))
                .collect()
        })
        .collect();
    let h = FrameGrid::from_fn(config.subcarriers, config.slots, |k, n| {
        tap_gains
            .iter()
            .zip(&phasors[k])
            .map(|(a, e)| a[n] * e)
            .sum()
    });
    ChannelRealization { h, tap_gains }
}

/// Deterministic realization for `seed`.
pub fn generate_realization(
    profile: &TapProfile,
    doppler: &DopplerConfig,
    config: &OfdmConfig,
    seed: u64,
) -> ChannelRealization {
    let mut rng: SimRng = rng_from(seed);
    generate_realization_with(profile, doppler, config, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doppler_values() {
        assert_eq!(max_doppler(0.0, 2.5e9), 0.0);
        // (80/3.6)·2.5e9/299792458 = 185.3130...
        assert!((max_doppler(80.0, 2.5e9) - 185.313).abs() < 0.01);
        assert!((max_doppler(8.0, 2.5e9) - 18.5313).abs() < 0.001);
    }

    #[test]
    fn builtin_profiles_shape() {
        let [veh, ped] = builtin_profiles();
        assert_eq!(veh.taps(), 6);
        assert_eq!(ped.taps(), 4);
        for p in [&veh, &ped] {
            assert_eq!(p.delays_ns[0], 0.0);
            assert!((p.linear_powers().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_profiles_rejected() {
        assert!(TapProfile::new("x", vec![0.0, 0.0], vec![0.0, -1.0]).is_err());
        assert!(TapProfile::new("x", vec![-1.0], vec![0.0]).is_err());
        assert!(TapProfile::new("x", vec![0.0], vec![]).is_err());
    }

    #[test]
    fn static_single_tap_is_flat() {
        let cfg = OfdmConfig::default();
        let profile = TapProfile::new("flat", vec![0.0], vec![0.0]).unwrap();
        let dop = DopplerConfig::new(0.0, &cfg);
        let r = generate_realization(&profile, &dop, &cfg, 11);
        let h0 = r.h.get(0, 0).norm();
        for z in r.h.as_slice() {
            assert!((z.norm() - h0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_ray_pattern_is_periodic() {
        let cfg = OfdmConfig::default();
        let period = 12usize;
        let dtau_ns = 1e9 / (cfg.spacing_hz * period as f64);
        let profile = TapProfile::new("two-ray", vec![0.0, dtau_ns], vec![0.0, 0.0]).unwrap();
        let r = generate_realization(&profile, &DopplerConfig::new(80.0, &cfg), &cfg, 5);
        for n in [0, 13, 27] {
            for k in 0..cfg.subcarriers - period {
                let a = r.h.get(k, n).norm_sqr();
                let b = r.h.get(k + period, n).norm_sqr();
                assert!((a - b).abs() < 1e-9, "k={k} n={n}");
            }
            // closed form |a0 + a1 e^{-j2π k/period}|²
            let (a0, a1) = (r.tap_gains[0][n], r.tap_gains[1][n]);
            for k in 0..cfg.subcarriers {
                let e = Complex64::from_polar(1.0, -2.0 * PI * k as f64 / period as f64);
                assert!(((a0 + a1 * e).norm_sqr() - r.h.get(k, n).norm_sqr()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn seed_determinism() {
        let cfg = OfdmConfig::default();
        let dop = DopplerConfig::new(80.0, &cfg);
        let a = generate_realization(&TapProfile::veh_a(), &dop, &cfg, 42);
        let b = generate_realization(&TapProfile::veh_a(), &dop, &cfg, 42);
        let c = generate_realization(&TapProfile::veh_a(), &dop, &cfg, 43);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn profile_file_parses() {
        let text = r#"
            [[profile]]
            name = "Custom"
            delays_ns = [0.0, 100.0]
            powers_db = [0.0, -3.0]
            speed_kmh = 30.0
        "#;
        let p = parse_profiles(text).unwrap();
        assert_eq!(p[0].name, "Custom");
        assert_eq!(p[0].speed_kmh, Some(30.0));
        assert!(parse_profiles("[[profile]]\nname='bad'\ndelays_ns=[1.0,0.5]\npowers_db=[0.0,0.0]").is_err());
    }
}
