//! Training-set construction and config-driven training runs.
//!
//! Training frames come from seed streams disjoint from the sweep frames,
//! which use `frame_seed(cfg.seed, i)` directly.

use super::parallel::parallel_map;
use super::sweep::ls_of;
use super::{frame_seed, snr_for_index, ExperimentConfig, Frame, Link};
use crate::ccrnet::{ccrnet_train, CcrnetDataset, CcrnetModel, GanLog};
use crate::cenet::{cenet_train, CenetDataset, CenetModel, TrainingLog};
use crate::error::{Error, Result};
use crate::ofdm::FrameGrid;
use crate::rng::derive_seed;

pub const TRAIN_STREAM: u64 = 0x7A;
pub const VAL_STREAM: u64 = 0x7B;
pub const GAN_STREAM: u64 = 0x7C;

/// Seed base of one training split of a run seeded with `seed`.
pub fn split_seed(seed: u64, stream: u64) -> u64 {
    derive_seed(seed, stream, 0)
}

fn frames(link: &Link, count: usize, snr_mix: &[f64], seed: u64) -> Result<Vec<Frame>> {
    if count == 0 || snr_mix.is_empty() {
        return Err(Error::InvalidArgument("training set needs at least one frame and one SNR".into()));
    }
    parallel_map(count, |i| Ok(link.frame(frame_seed(seed, i as u64), snr_for_index(snr_mix, count, i))))
}

/// `(LS pilots, H)` pairs, split evenly over `snr_mix`.
pub fn build_cenet_dataset(
    link: &Link,
    model: &CenetModel,
    count: usize,
    snr_mix: &[f64],
    seed: u64,
) -> Result<CenetDataset> {
    let mut data = CenetDataset::new(&model.config);
    for f in frames(link, count, snr_mix, seed)? {
        data.push(&ls_of(link, &f)?, &f.h, &link.pattern)?;
    }
    Ok(data)
}

/// `(X, Y, Ĥ)` triples. `Ĥ` is the CENet estimate when a model is given and
/// the true channel otherwise.
pub fn build_ccrnet_dataset(
    link: &Link,
    model: &CcrnetModel,
    cenet: Option<&CenetModel>,
    count: usize,
    snr_mix: &[f64],
    seed: u64,
) -> Result<CcrnetDataset> {
    let fs = frames(link, count, snr_mix, seed)?;
    let conds: Vec<FrameGrid> = match cenet {
        Some(m) => {
            let ls = fs.iter().map(|f| ls_of(link, f)).collect::<Result<Vec<_>>>()?;
            let chunks: Vec<&[Vec<_>]> = ls.chunks(16).collect();
            parallel_map(chunks.len(), |i| m.estimate_batch(chunks[i], &link.pattern))?
                .into_iter()
                .flatten()
                .collect()
        }
        None => fs.iter().map(|f| f.h.clone()).collect(),
    };
    let mut data = CcrnetDataset::new(&model.config);
    for (f, h) in fs.iter().zip(&conds) {
        data.push(&f.x, &f.y, h)?;
    }
    Ok(data)
}

/// Trains a CENet on `cfg.train_snr_db` with the config's options.
pub fn train_cenet(cfg: &ExperimentConfig, snr_mix: &[f64]) -> Result<(CenetModel, TrainingLog)> {
    let link = Link::from_experiment(cfg)?;
    let mut model = CenetModel::new(cfg.cenet, cfg.cenet_train.seed)?;
    let train = build_cenet_dataset(&link, &model, cfg.train_samples, snr_mix, split_seed(cfg.seed, TRAIN_STREAM))?;
    let val = build_cenet_dataset(&link, &model, cfg.val_samples.max(1), snr_mix, split_seed(cfg.seed, VAL_STREAM))?;
    let log = cenet_train(&mut model, &train, Some(&val), cfg.cenet_train)?;
    Ok((model, log))
}

/// Trains a CCRNet on frames at `snr_mix`, conditioned on `cenet` estimates
/// (or the true channel).
pub fn train_ccrnet(
    cfg: &ExperimentConfig,
    cenet: Option<&CenetModel>,
    snr_mix: &[f64],
) -> Result<(CcrnetModel, GanLog)> {
    let link = Link::from_experiment(cfg)?;
    let mut model = CcrnetModel::new(cfg.ccrnet, cfg.ccrnet_train.seed)?;
    let data = build_ccrnet_dataset(
        &link,
        &model,
        cenet,
        cfg.train_samples,
        snr_mix,
        split_seed(cfg.seed, GAN_STREAM),
    )?;
    let log = ccrnet_train(&mut model, &data, cfg.ccrnet_train)?;
    Ok((model, log))
}
