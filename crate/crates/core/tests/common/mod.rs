//! Helpers shared by the integration tests and the acceptance run.

#![allow(dead_code)]

use num_complex::Complex64;

use odl_core::channel::{generate_realization, DopplerConfig, TapProfile};
use odl_core::ofdm::OfdmConfig;
use odl_core::rng::derive_seed;

/// Power series of the Bessel function J0.
pub fn bessel_j0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for m in 1..60 {
        term *= -q / (m as f64 * m as f64);
        sum += term;
    }
    sum
}

pub const MAX_LAG: usize = 10;

pub struct ChannelStats {
    pub draws: usize,
    pub tap_power: Vec<f64>,
    /// Normalized tap autocorrelation by slot lag, index 0 unused.
    pub time_corr: Vec<f64>,
    /// `E[H(k)·conj(H(k+Δk))]` by subcarrier lag, index 0 unused.
    pub freq_corr: Vec<Complex64>,
    /// |H| at one fixed resource element, one per draw.
    pub magnitudes: Vec<f64>,
    pub doppler: DopplerConfig,
}

pub fn collect_stats(profile: &TapProfile, draws: usize, seed: u64) -> ChannelStats {
    let cfg = OfdmConfig::default();
    let doppler = DopplerConfig::new(profile.speed_kmh.unwrap(), &cfg);
    let taps = profile.taps();
    let powers = profile.linear_powers();
    let mut s = ChannelStats {
        draws,
        tap_power: vec![0.0; taps],
        time_corr: vec![0.0; MAX_LAG + 1],
        freq_corr: vec![Complex64::new(0.0, 0.0); MAX_LAG + 1],
        magnitudes: Vec::with_capacity(draws),
        doppler,
    };
    for i in 0..draws {
        let r = generate_realization(profile, &s.doppler, &cfg, derive_seed(seed, 1, i as u64));
        for (l, g) in r.tap_gains.iter().enumerate() {
            s.tap_power[l] += g.iter().map(|z| z.norm_sqr()).sum::<f64>() / g.len() as f64;
            for lag in 1..=MAX_LAG {
                let c: Complex64 = (0..g.len() - lag).map(|n| g[n] * g[n + lag].conj()).sum();
                s.time_corr[lag] += c.re / (g.len() - lag) as f64 / powers[l] / taps as f64;
            }
        }
        for dk in 1..=MAX_LAG {
            let mut c = Complex64::new(0.0, 0.0);
            for k in 0..cfg.subcarriers - dk {
                c += r.h.get(k, 3) * r.h.get(k + dk, 3).conj();
            }
            s.freq_corr[dk] += c / (cfg.subcarriers - dk) as f64;
        }
        s.magnitudes.push(r.h.get(17, 9).norm());
    }
    let n = draws as f64;
    s.tap_power.iter_mut().for_each(|p| *p /= n);
    s.time_corr.iter_mut().for_each(|p| *p /= n);
    s.freq_corr.iter_mut().for_each(|p| *p /= n);
    s
}

/// `Σ p_l·exp(+j2πΔk·F·τ_l)`, computed directly from the tap table.
pub fn closed_form_freq_corr(profile: &TapProfile, dk: usize, spacing_hz: f64) -> Complex64 {
    profile
        .linear_powers()
        .iter()
        .zip(&profile.delays_ns)
        .map(|(p, t)| Complex64::from_polar(*p, 2.0 * std::f64::consts::PI * dk as f64 * spacing_hz * t * 1e-9))
        .sum()
}

/// Worst deviations of the collected statistics from theory.
pub struct StatsDeviation {
    pub tap_db: f64,
    pub time: f64,
    pub freq: f64,
    pub ks: f64,
}

pub fn deviation(profile: &TapProfile, s: &ChannelStats) -> StatsDeviation {
    let tap_db = s
        .tap_power
        .iter()
        .zip(profile.linear_powers())
        .map(|(p, want)| (10.0 * (p / want).log10()).abs())
        .fold(0.0, f64::max);
    let fd = s.doppler.max_doppler_hz();
    let time = (1..=MAX_LAG)
        .map(|lag| {
            let want = bessel_j0(2.0 * std::f64::consts::PI * fd * lag as f64 * s.doppler.slot_duration_s);
            (s.time_corr[lag] - want).abs()
        })
        .fold(0.0, f64::max);
    let freq = (1..=MAX_LAG)
        .map(|dk| (s.freq_corr[dk] - closed_form_freq_corr(profile, dk, 15e3)).norm())
        .fold(0.0, f64::max);
    // Kolmogorov-Smirnov distance of |H| to Rayleigh with E|H|² = 1.
    let mut m = s.magnitudes.clone();
    m.sort_by(f64::total_cmp);
    let n = m.len() as f64;
    let ks = m
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let cdf = 1.0 - (-r * r).exp();
            (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
        })
        .fold(0.0, f64::max);
    StatsDeviation { tap_db, time, freq, ks }
}
