//! Monte-Carlo sweeps over SNR: channel MSE of the estimators and BER of
//! the estimator/detector chains.
//!
//! Frame `i` of a sweep uses frame seed `frame_seed(seed, i)` at every SNR
//! (common random numbers), so curves are compared on identical channels,
//! payloads and unit noise. Per-frame metrics are reduced in frame order.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use super::parallel::parallel_map;
use super::results::{SweepResult, SweepRow};
use super::{frame_seed, ExperimentConfig, Frame, Link, STREAM_CORRELATION};
use crate::ccrnet::CcrnetModel;
use crate::cenet::CenetModel;
use crate::equalize::{rzf_detect, zf_detect, DetectionResult};
use crate::error::{Error, Result};
use crate::ofdm::FrameGrid;
use crate::pilots::{
    channel_mse, ls_estimate, ChannelCorrelation, CorrelationAccumulator, GridInterpolator, InterpKind, MmseFilter,
    MmseForm, PilotObservation,
};
use crate::rng::derive_seed;

/// Channel estimators compared by [`run_mse_sweep`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MseScheme {
    /// LS at the pilots, Gaussian interpolation.
    LsGi,
    /// LMMSE at the pilots, Gaussian interpolation.
    MmseGi,
    /// LS at the pilots, linear interpolation.
    LsLinear,
    /// A CENet model from the [`ModelBank`], by name.
    Cenet(String),
}

impl fmt::Display for MseScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MseScheme::LsGi => f.write_str("LS+GI"),
            MseScheme::MmseGi => f.write_str("MMSE+GI"),
            MseScheme::LsLinear => f.write_str("LS+LI"),
            MseScheme::Cenet(name) => write!(f, "CENet:{name}"),
        }
    }
}

impl FromStr for MseScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "LS+GI" => Ok(MseScheme::LsGi),
            "MMSE+GI" => Ok(MseScheme::MmseGi),
            "LS+LI" => Ok(MseScheme::LsLinear),
            _ => match s.strip_prefix("CENet:") {
                Some(name) if !name.is_empty() => Ok(MseScheme::Cenet(name.to_string())),
                _ => Err(Error::InvalidArgument(format!("unknown MSE scheme {s:?}"))),
            },
        }
    }
}

/// Estimator/detector chains compared by [`run_ber_sweep`]. The CENet
/// chains use the model named by `ExperimentConfig::ber_cenet`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BerScheme {
    /// LS + Gaussian interpolation, ZF.
    LsZf,
    CenetZf,
    /// CENet, RZF with the configured regularization (σ² by default).
    CenetRzf,
    CenetCcrnet,
    /// True channel, ZF.
    PerfectZf,
}

impl fmt::Display for BerScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BerScheme::LsZf => "LS+ZF",
            BerScheme::CenetZf => "CENet+ZF",
            BerScheme::CenetRzf => "CENet+RZF",
            BerScheme::CenetCcrnet => "CENet+CCRNet",
            BerScheme::PerfectZf => "Perfect+ZF",
        })
    }
}

impl FromStr for BerScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "LS+ZF" => Ok(BerScheme::LsZf),
            "CENet+ZF" => Ok(BerScheme::CenetZf),
            "CENet+RZF" => Ok(BerScheme::CenetRzf),
            "CENet+CCRNet" => Ok(BerScheme::CenetCcrnet),
            "Perfect+ZF" => Ok(BerScheme::PerfectZf),
            _ => Err(Error::InvalidArgument(format!("unknown BER scheme {s:?}"))),
        }
    }
}

/// Trained models available to a sweep.
#[derive(Clone, Debug, Default)]
pub struct ModelBank {
    pub cenet: BTreeMap<String, CenetModel>,
    pub ccrnet: Option<CcrnetModel>,
}

impl ModelBank {
    pub fn cenet(&self, name: &str) -> Result<&CenetModel> {
        self.cenet
            .get(name)
            .ok_or_else(|| Error::MissingModel(format!("CENet model {name:?}")))
    }

    pub fn ccrnet(&self) -> Result<&CcrnetModel> {
        self.ccrnet.as_ref().ok_or_else(|| Error::MissingModel("CCRNet model".into()))
    }
}

/// Frames processed together (CENet/CCRNet inference batch).
const CHUNK: usize = 16;

/// Empirical pilot correlation from `count` channel draws on seeds disjoint
/// from the sweep frames.
pub fn training_correlation(link: &Link, count: usize, seed: u64) -> Result<ChannelCorrelation> {
    let mut acc = CorrelationAccumulator::new(link.pattern.len());
    for i in 0..count {
        acc.add(&link.channel(derive_seed(seed, STREAM_CORRELATION, i as u64)).h, &link.pattern);
    }
    acc.finish()
}

fn frames_for(link: &Link, seed: u64, lo: usize, hi: usize, snr_db: f64) -> Vec<Frame> {
    (lo..hi).map(|i| link.frame(frame_seed(seed, i as u64), snr_db)).collect()
}

pub(crate) fn ls_of(link: &Link, f: &Frame) -> Result<Vec<Complex64>> {
    ls_estimate(&PilotObservation::from_grid(&f.y, &link.pattern, f.noise_var), &link.pattern)
}

fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn check_sweep(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.snr_db.is_empty() || cfg.frames == 0 {
        return Err(Error::InvalidArgument("sweep needs at least one SNR and one frame".into()));
    }
    Ok(())
}

/// Mean channel MSE per (scheme, SNR) with standard errors over frames.
pub fn run_mse_sweep(cfg: &ExperimentConfig, schemes: &[MseScheme], models: &ModelBank) -> Result<SweepResult> {
    check_sweep(cfg)?;
    let link = Link::from_experiment(cfg)?;
    for s in schemes {
        if let MseScheme::Cenet(name) = s {
            models.cenet(name)?;
        }
    }
    let gi = GridInterpolator::new(&link.pattern, InterpKind::Gaussian)?;
    let li = GridInterpolator::new(&link.pattern, InterpKind::Linear)?;
    let corr = if schemes.contains(&MseScheme::MmseGi) {
        Some(training_correlation(&link, cfg.correlation_frames, cfg.seed)?)
    } else {
        None
    };
    let mut result = SweepResult::default();
    for &snr in &cfg.snr_db {
        let mmse = corr
            .as_ref()
            .map(|r| MmseFilter::new(r, &link.pattern, crate::ofdm::noise_variance(snr), MmseForm::Standard))
            .transpose()?;
        let chunks = cfg.frames.div_ceil(CHUNK);
        // per_chunk[c][scheme][frame]
        let per_chunk = parallel_map(chunks, |c| -> Result<Vec<Vec<f64>>> {
            let frames = frames_for(&link, cfg.seed, c * CHUNK, ((c + 1) * CHUNK).min(cfg.frames), snr);
            let ls: Vec<Vec<Complex64>> = frames.iter().map(|f| ls_of(&link, f)).collect::<Result<_>>()?;
            schemes
                .iter()
                .map(|s| -> Result<Vec<f64>> {
                    let est: Vec<FrameGrid> = match s {
                        MseScheme::LsGi => ls.iter().map(|v| gi.apply(v)).collect::<Result<_>>()?,
                        MseScheme::LsLinear => ls.iter().map(|v| li.apply(v)).collect::<Result<_>>()?,
                        MseScheme::MmseGi => {
                            let m = mmse.as_ref().expect("filter built for MMSE");
                            ls.iter().map(|v| gi.apply(&m.apply(v))).collect::<Result<_>>()?
                        }
                        MseScheme::Cenet(name) => models.cenet(name)?.estimate_batch(&ls, &link.pattern)?,
                    };
                    est.iter().zip(&frames).map(|(e, f)| channel_mse(e, &f.h)).collect()
                })
                .collect()
        })?;
        for (si, s) in schemes.iter().enumerate() {
            let vals: Vec<f64> = per_chunk.iter().flat_map(|c| c[si].iter().copied()).collect();
            let (mean, se) = mean_and_stderr(&vals);
            result.rows.push(SweepRow {
                scheme: s.to_string(),
                scenario: cfg.scenario.to_string(),
                snr_db: snr,
                metric: "mse".into(),
                value: mean,
                stderr: se,
                n: vals.len() as u64,
            });
        }
    }
    Ok(result)
}

/// Bit error rate per (scheme, SNR) over the data positions, with binomial
/// standard errors `sqrt(p(1−p)/n_bits)`.
pub fn run_ber_sweep(cfg: &ExperimentConfig, schemes: &[BerScheme], models: &ModelBank) -> Result<SweepResult> {
    check_sweep(cfg)?;
    let link = Link::from_experiment(cfg)?;
    let needs_cenet = schemes
        .iter()
        .any(|s| matches!(s, BerScheme::CenetZf | BerScheme::CenetRzf | BerScheme::CenetCcrnet));
    let cenet = if needs_cenet { Some(models.cenet(&cfg.ber_cenet)?) } else { None };
    if schemes.contains(&BerScheme::CenetCcrnet) {
        models.ccrnet()?;
    }
    let gi = GridInterpolator::new(&link.pattern, InterpKind::Gaussian)?;
    let mut result = SweepResult::default();
    for &snr in &cfg.snr_db {
        let chunks = cfg.frames.div_ceil(CHUNK);
        // per_chunk[c][scheme] = bit errors in the chunk
        let per_chunk = parallel_map(chunks, |c| -> Result<Vec<usize>> {
            let frames = frames_for(&link, cfg.seed, c * CHUNK, ((c + 1) * CHUNK).min(cfg.frames), snr);
            let ls: Vec<Vec<Complex64>> = frames.iter().map(|f| ls_of(&link, f)).collect::<Result<_>>()?;
            let cenet_h = match cenet {
                Some(m) => Some(m.estimate_batch(&ls, &link.pattern)?),
                None => None,
            };
            schemes
                .iter()
                .map(|s| -> Result<usize> {
                    let xhat: Vec<FrameGrid> = match s {
                        BerScheme::LsZf => frames
                            .iter()
                            .zip(&ls)
                            .map(|(f, v)| zf_detect(&f.y, &gi.apply(v)?))
                            .collect::<Result<_>>()?,
                        BerScheme::PerfectZf => frames.iter().map(|f| zf_detect(&f.y, &f.h)).collect::<Result<_>>()?,
                        BerScheme::CenetZf => frames
                            .iter()
                            .zip(cenet_h.as_ref().expect("CENet estimates"))
                            .map(|(f, h)| zf_detect(&f.y, h))
                            .collect::<Result<_>>()?,
                        BerScheme::CenetRzf => frames
                            .iter()
                            .zip(cenet_h.as_ref().expect("CENet estimates"))
                            .map(|(f, h)| rzf_detect(&f.y, h, cfg.rzf_tau.unwrap_or(f.noise_var)))
                            .collect::<Result<_>>()?,
                        BerScheme::CenetCcrnet => {
                            let ys: Vec<FrameGrid> = frames.iter().map(|f| f.y.clone()).collect();
                            models.ccrnet()?.recover_batch(&ys, cenet_h.as_ref().expect("CENet estimates"))?
                        }
                    };
                    let mut errors = 0;
                    for (x, f) in xhat.into_iter().zip(&frames) {
                        errors += DetectionResult::new(x, &f.bits, &link.pattern, &link.qam)?.bit_errors;
                    }
                    Ok(errors)
                })
                .collect()
        })?;
        let n_bits = (cfg.frames * link.bits_per_frame()) as u64;
        for (si, s) in schemes.iter().enumerate() {
            let errors: usize = per_chunk.iter().map(|c| c[si]).sum();
            let p = errors as f64 / n_bits as f64;
            result.rows.push(SweepRow {
                scheme: s.to_string(),
                scenario: cfg.scenario.to_string(),
                snr_db: snr,
                metric: "ber".into(),
                value: p,
                stderr: (p * (1.0 - p) / n_bits as f64).sqrt(),
                n: n_bits,
            });
        }
    }
    Ok(result)
}
