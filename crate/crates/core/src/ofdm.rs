//! Frame-level OFDM model: square Gray-labeled QAM, the per resource element
//! channel `Y = H·X + W`, and SNR-calibrated complex Gaussian noise.
//!
//! Transmit symbols have unit average energy, so the per resource element
//! SNR is simply `1/σ²`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Grid and waveform parameters of one OFDM frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfdmConfig {
    pub subcarriers: usize,
    pub slots: usize,
    pub spacing_hz: f64,
    pub carrier_hz: f64,
    pub modulation: usize,
}

impl Default for OfdmConfig {
    /// 72 subcarriers × 28 slots at 15 kHz spacing (1.08 MHz sampling),
    /// 2.5 GHz carrier, 256-QAM.
    fn default() -> Self {
        Self {
            subcarriers: 72,
            slots: 28,
            spacing_hz: 15e3,
            carrier_hz: 2.5e9,
            modulation: 256,
        }
    }
}

impl OfdmConfig {
    pub fn with_modulation(mut self, m: usize) -> Self {
        self.modulation = m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.subcarriers == 0 || self.slots == 0 {
            return Err(Error::InvalidArgument("grid must have K, N >= 1".into()));
        }
        if !(self.spacing_hz > 0.0) {
            return Err(Error::InvalidArgument("subcarrier spacing must be positive".into()));
        }
        bits_per_symbol(self.modulation)?;
        Ok(())
    }

    pub fn bits_per_symbol(&self) -> usize {
        bits_per_symbol(self.modulation).expect("validated modulation order")
    }
}

fn bits_per_symbol(m: usize) -> Result<usize> {
    match m {
        4 => Ok(2),
        16 => Ok(4),
        64 => Ok(6),
        256 => Ok(8),
        _ => Err(Error::InvalidArgument(format!(
            "modulation order must be one of 4, 16, 64, 256 (got {m})"
        ))),
    }
}

/// K×N complex grid, subcarrier-major (`index = k·N + n`).
#[derive(Clone, Debug, PartialEq)]
pub struct FrameGrid {
    subcarriers: usize,
    slots: usize,
    data: Vec<Complex64>,
}

impl FrameGrid {
    pub fn zeros(subcarriers: usize, slots: usize) -> Self {
        Self::filled(subcarriers, slots, Complex64::new(0.0, 0.0))
    }

    pub fn filled(subcarriers: usize, slots: usize, value: Complex64) -> Self {
        Self {
            subcarriers,
            slots,
            data: vec![value; subcarriers * slots],
        }
    }

    pub fn from_fn(subcarriers: usize, slots: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(subcarriers * slots);
        for k in 0..subcarriers {
            for n in 0..slots {
                data.push(f(k, n));
            }
        }
        Self {
            subcarriers,
            slots,
            data,
        }
    }

    pub fn from_vec(subcarriers: usize, slots: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != subcarriers * slots {
            return Err(Error::shape(
                "FrameGrid",
                format!("{} values for a {subcarriers}x{slots} grid", data.len()),
            ));
        }
        Ok(Self {
            subcarriers,
            slots,
            data,
        })
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.subcarriers, self.slots)
    }

    pub fn get(&self, k: usize, n: usize) -> Complex64 {
        self.data[k * self.slots + n]
    }

    pub fn set(&mut self, k: usize, n: usize, v: Complex64) {
        self.data[k * self.slots + n] = v;
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self {
            subcarriers: self.subcarriers,
            slots: self.slots,
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(Complex64, Complex64) -> Complex64) -> Result<Self> {
        self.check_same(other, "zip_map")?;
        Ok(Self {
            subcarriers: self.subcarriers,
            slots: self.slots,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub(crate) fn check_same(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.dims(), other.dims())));
        }
        Ok(())
    }

    /// `2×K×N` real tensor (real plane, then imaginary plane), scaled by
    /// `1/scale`.
    pub fn to_tensor(&self, scale: f64) -> Tensor {
        let n = self.data.len();
        let inv = 1.0 / scale;
        let mut v = Vec::with_capacity(2 * n);
        v.extend(self.data.iter().map(|z| z.re * inv));
        v.extend(self.data.iter().map(|z| z.im * inv));
        Tensor::new(vec![2, self.subcarriers, self.slots], v).expect("grid size")
    }

    /// Inverse of [`FrameGrid::to_tensor`] for one `2×K×N` sample.
    pub fn from_planes(subcarriers: usize, slots: usize, planes: &[f64], scale: f64) -> Result<Self> {
        let n = subcarriers * slots;
        if planes.len() != 2 * n {
            return Err(Error::shape(
                "FrameGrid::from_planes",
                format!("{} values for 2x{subcarriers}x{slots}", planes.len()),
            ));
        }
        let data = (0..n)
            .map(|i| Complex64::new(planes[i] * scale, planes[n + i] * scale))
            .collect();
        Self::from_vec(subcarriers, slots, data)
    }
}

/// Gray-labeled square QAM with unit average symbol energy.
///
/// A label's bits split into an in-phase half (leading bits) and a
/// quadrature half. Within each half the first bit is the sign (0 ↦
/// positive) and the whole half is the Gray code of the level index counted
/// from the most positive level, so neighbouring levels differ in one bit.
#[derive(Clone, Debug, PartialEq)]
pub struct QamConstellation {
    order: usize,
    bits: usize,
    levels: usize,
    scale: f64,
    points: Vec<Complex64>,
}

fn gray(j: usize) -> usize {
    j ^ (j >> 1)
}

fn gray_inverse(mut g: usize) -> usize {
    let mut j = g;
    while g > 0 {
        g >>= 1;
        j ^= g;
    }
    j
}

impl QamConstellation {
    pub fn new(order: usize) -> Result<Self> {
        let bits = bits_per_symbol(order)?;
        let levels = 1usize << (bits / 2);
        let scale = 1.0 / ((2.0 / 3.0) * (order as f64 - 1.0)).sqrt();
        let half = bits / 2;
        let mask = levels - 1;
        let points = (0..order)
            .map(|label| {
                let i = gray_inverse(label >> half);
                let q = gray_inverse(label & mask);
                Complex64::new(
                    (levels as f64 - 1.0 - 2.0 * i as f64) * scale,
                    (levels as f64 - 1.0 - 2.0 * q as f64) * scale,
                )
            })
            .collect();
        Ok(Self {
            order,
            bits,
            levels,
            scale,
            points,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits
    }

    /// Constellation points indexed by label.
    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    /// Amplitude unit: adjacent levels are `2·scale` apart.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn modulate(&self, bits: &[u8]) -> Result<Vec<Complex64>> {
        if bits.len() % self.bits != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} bits is not a multiple of {} bits per symbol",
                bits.len(),
                self.bits
            )));
        }
        Ok(bits
            .chunks(self.bits)
            .map(|chunk| {
                let label = chunk.iter().fold(0usize, |acc, &b| (acc << 1) | (b & 1) as usize);
                self.points[label]
            })
            .collect())
    }

    /// Per-axis Gray label of the nearest level; ties between neighbouring
    /// levels go to the smaller label.
    fn axis_label(&self, a: f64) -> usize {
        let top = self.levels - 1;
        let t = (top as f64 - a / self.scale) / 2.0;
        if !t.is_finite() {
            return gray(if t > 0.0 { top } else { 0 });
        }
        let t = t.clamp(0.0, top as f64);
        let lo = t.floor();
        let frac = t - lo;
        let lo = (lo as usize).min(top);
        let hi = (lo + 1).min(top);
        if (frac - 0.5).abs() <= TIE_TOLERANCE {
            gray(lo).min(gray(hi))
        } else if frac > 0.5 {
            gray(hi)
        } else {
            gray(lo)
        }
    }

    pub fn hard_label(&self, z: Complex64) -> usize {
        (self.axis_label(z.re) << (self.bits / 2)) | self.axis_label(z.im)
    }

    pub fn demodulate_into(&self, symbols: &[Complex64], out: &mut Vec<u8>) {
        out.reserve(symbols.len() * self.bits);
        for &z in symbols {
            let label = self.hard_label(z);
            for b in (0..self.bits).rev() {
                out.push(((label >> b) & 1) as u8);
            }
        }
    }

    pub fn demodulate(&self, symbols: &[Complex64]) -> Vec<u8> {
        let mut out = Vec::new();
        self.demodulate_into(symbols, &mut out);
        out
    }
}

/// Relative window, in units of half the level spacing, treated as an exact
/// midpoint by the hard decision.
pub const TIE_TOLERANCE: f64 = 1e-9;

pub fn qam_modulate(bits: &[u8], order: usize) -> Result<Vec<Complex64>> {
    QamConstellation::new(order)?.modulate(bits)
}

pub fn qam_demodulate(symbols: &[Complex64], order: usize) -> Result<Vec<u8>> {
    Ok(QamConstellation::new(order)?.demodulate(symbols))
}

/// `Y(k,n) = H(k,n)·X(k,n) + W(k,n)`.
pub fn apply_channel(x: &FrameGrid, h: &FrameGrid, w: &FrameGrid) -> Result<FrameGrid> {
    x.check_same(h, "apply_channel")?;
    x.check_same(w, "apply_channel")?;
    let data = x
        .data
        .iter()
        .zip(&h.data)
        .zip(&w.data)
        .map(|((&x, &h), &w)| h * x + w)
        .collect();
    FrameGrid::from_vec(x.subcarriers, x.slots, data)
}

/// Noise variance per resource element for unit-energy symbols.
pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Unit-variance circular complex Gaussian grid (`CN(0, 1)`).
pub fn unit_noise<R: Rng + ?Sized>(config: &OfdmConfig, rng: &mut R) -> FrameGrid {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    FrameGrid::from_fn(config.subcarriers, config.slots, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re * s, im * s)
    })
}

/// `CN(0, σ²)` noise grid with `σ² = 10^(−snr_db/10)`; returns the grid
/// and `σ²`.
pub fn noise_for_snr<R: Rng + ?Sized>(snr_db: f64, config: &OfdmConfig, rng: &mut R) -> (FrameGrid, f64) {
    let var = noise_variance(snr_db);
    let sigma = var.sqrt();
    (unit_noise(config, rng).map(|z| z * sigma), var)
}
