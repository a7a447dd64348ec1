//! Per resource element detection: zero forcing, regularized zero forcing,
//! and bit error accounting on the data (non-pilot) positions.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::ofdm::{FrameGrid, QamConstellation};
use crate::pilots::PilotPattern;

/// Channel magnitude below which an entry cannot be equalized.
pub const UNRECOVERABLE_FLOOR: f64 = 1e-12;

/// Value written to unrecoverable entries; it always demaps to the same
/// label.
pub const UNRECOVERABLE_SYMBOL: Complex64 = Complex64::new(0.0, 0.0);

/// `X̂ = Y / Ĥ` elementwise.
pub fn zf_detect(y: &FrameGrid, h: &FrameGrid) -> Result<FrameGrid> {
    y.zip_map(h, |y, h| {
        if h.norm() < UNRECOVERABLE_FLOOR {
            UNRECOVERABLE_SYMBOL
        } else {
            y / h
        }
    })
}

/// `X̂ = conj(Ĥ)·Y / (|Ĥ|² + τ)` elementwise. With `τ = 0` this is
/// exactly [`zf_detect`], including the unrecoverable-entry policy.
pub fn rzf_detect(y: &FrameGrid, h: &FrameGrid, tau: f64) -> Result<FrameGrid> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("regularization {tau}")));
    }
    if tau == 0.0 {
        return zf_detect(y, h);
    }
    y.zip_map(h, |y, h| h.conj() * y / (h.norm_sqr() + tau))
}

/// `X̂ = conj(Ĥ)·Y·(|Ĥ|² + τ)`: the regularized form with the inverse
/// left out, kept only for comparison runs.
pub fn rzf_detect_uninverted(y: &FrameGrid, h: &FrameGrid, tau: f64) -> Result<FrameGrid> {
    y.zip_map(h, |y, h| h.conj() * y * (h.norm_sqr() + tau))
}

/// Number of positions where the bits differ.
pub fn bit_errors(tx: &[u8], rx: &[u8]) -> Result<usize> {
    if tx.len() != rx.len() {
        return Err(Error::shape("ber", format!("{} vs {} bits", tx.len(), rx.len())));
    }
    Ok(tx.iter().zip(rx).filter(|(a, b)| a != b).count())
}

pub fn ber(tx: &[u8], rx: &[u8]) -> Result<f64> {
    let e = bit_errors(tx, rx)?;
    if tx.is_empty() {
        return Err(Error::InvalidArgument("empty bit arrays".into()));
    }
    Ok(e as f64 / tx.len() as f64)
}

/// Symbols of `grid` at the data positions of `pattern`, k-major.
pub fn data_symbols(grid: &FrameGrid, pattern: &PilotPattern) -> Vec<Complex64> {
    let s = grid.as_slice();
    pattern.data_indices().into_iter().map(|i| s[i]).collect()
}

/// Hard-decision bits of the data positions.
pub fn detect_bits(xhat: &FrameGrid, pattern: &PilotPattern, qam: &QamConstellation) -> Vec<u8> {
    qam.demodulate(&data_symbols(xhat, pattern))
}

/// Mean `|X̂ − X|²` over the data positions.
pub fn symbol_mse(xhat: &FrameGrid, x: &FrameGrid, pattern: &PilotPattern) -> Result<f64> {
    xhat.check_same(x, "symbol_mse")?;
    let idx = pattern.data_indices();
    let (a, b) = (xhat.as_slice(), x.as_slice());
    Ok(idx.iter().map(|&i| (a[i] - b[i]).norm_sqr()).sum::<f64>() / idx.len() as f64)
}

/// Equalized grid, its hard bits, and the frame's bit error count.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionResult {
    pub equalized: FrameGrid,
    pub bits: Vec<u8>,
    pub bit_errors: usize,
    pub bit_count: usize,
}

impl DetectionResult {
    pub fn new(equalized: FrameGrid, tx_bits: &[u8], pattern: &PilotPattern, qam: &QamConstellation) -> Result<Self> {
        let bits = detect_bits(&equalized, pattern, qam);
        let errors = bit_errors(tx_bits, &bits)?;
        Ok(Self {
            equalized,
            bit_count: bits.len(),
            bits,
            bit_errors: errors,
        })
    }

    pub fn ber(&self) -> f64 {
        self.bit_errors as f64 / self.bit_count as f64
    }
}
