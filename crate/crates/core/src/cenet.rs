//! Channel estimation as image super-resolution.
//!
//! The LS pilot estimates, packed into a `2×P×T` low-resolution image, are
//! mapped to the full `2×K×N` channel image. The network is a compact
//! residual-group design with second-order channel attention (SOCA): a head
//! conv, `G` groups of `B` residual blocks each closed by an attention unit
//! and a group skip, a global skip, two nearest-neighbour ×2 upsampling
//! stages with convs, and a reconstruction conv. Training minimizes the
//! per-sample L1 loss with Adam.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{AdamState, Checkpoint, Conv2d, Init, Linear, ParamSet, Tape, Tensor, Var};
use crate::ofdm::FrameGrid;
use crate::pilots::{ls_estimate, PilotObservation, PilotPattern};
use crate::rng::{derive_seed, rng_from, SimRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CenetConfig {
    /// Feature width `C`.
    pub width: usize,
    pub groups: usize,
    pub blocks_per_group: usize,
    /// Attention bottleneck ratio `r` (`C → C/r → C`).
    pub reduction: usize,
    /// Low-resolution image size `(P, T)`.
    pub lr_dims: (usize, usize),
    /// Upscaling factor on both axes.
    pub scale: usize,
}

impl Default for CenetConfig {
    fn default() -> Self {
        Self {
            width: 32,
            groups: 3,
            blocks_per_group: 4,
            reduction: 8,
            lr_dims: (18, 7),
            scale: 4,
        }
    }
}

impl CenetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.groups == 0 || self.reduction == 0 || self.width % self.reduction != 0 {
            return Err(Error::InvalidArgument(format!(
                "cenet width {} must be a positive multiple of reduction {}, with at least one group",
                self.width, self.reduction
            )));
        }
        if self.scale != 4 {
            return Err(Error::InvalidArgument(format!(
                "cenet upsamples by two ×2 stages, scale must be 4 (got {})",
                self.scale
            )));
        }
        if self.lr_dims.0 * self.lr_dims.1 < 2 {
            return Err(Error::InvalidArgument("attention needs at least two positions".into()));
        }
        Ok(())
    }

    pub fn hr_dims(&self) -> (usize, usize) {
        (self.lr_dims.0 * self.scale, self.lr_dims.1 * self.scale)
    }

    pub fn lr_len(&self) -> usize {
        2 * self.lr_dims.0 * self.lr_dims.1
    }

    pub fn hr_len(&self) -> usize {
        let (k, n) = self.hr_dims();
        2 * k * n
    }
}

/// Second-order channel attention: sigmoid gate from the channel
/// covariance descriptor through a `C → C/r → C` bottleneck.
#[derive(Clone, Debug)]
pub struct Soca {
    down: Linear,
    up: Linear,
}

impl Soca {
    pub fn new(params: &mut ParamSet, name: &str, width: usize, reduction: usize, rng: &mut SimRng) -> Self {
        Self {
            down: Linear::new(params, &format!("{name}.down"), width, width / reduction, Init::FanIn, rng),
            up: Linear::new(params, &format!("{name}.up"), width / reduction, width, Init::FanIn, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var> {
        let z = tape.covariance_descriptor(x)?;
        let h = self.down.forward(tape, params, z)?;
        let h = tape.relu(h)?;
        let h = self.up.forward(tape, params, h)?;
        let g = tape.sigmoid(h)?;
        tape.scale_channels(x, g)
    }
}

#[derive(Clone, Debug)]
struct ResidualBlock {
    conv1: Conv2d,
    conv2: Conv2d,
}

impl ResidualBlock {
    fn forward(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var> {
        let h = self.conv1.forward(tape, params, x)?;
        let h = tape.relu(h)?;
        let h = self.conv2.forward(tape, params, h)?;
        tape.add(x, h)
    }
}

#[derive(Clone, Debug)]
struct ResidualGroup {
    blocks: Vec<ResidualBlock>,
    attention: Soca,
}

impl ResidualGroup {
    fn forward(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var> {
        let mut h = x;
        for b in &self.blocks {
            h = b.forward(tape, params, h)?;
        }
        let h = self.attention.forward(tape, params, h)?;
        tape.add(x, h)
    }
}

#[derive(Clone, Debug)]
pub struct CenetModel {
    pub config: CenetConfig,
    pub params: ParamSet,
    /// Divides inputs and targets before the network; fitted on the
    /// training set.
    pub input_scale: f64,
    head: Conv2d,
    groups: Vec<ResidualGroup>,
    up1: Conv2d,
    up2: Conv2d,
    recon: Conv2d,
}

/// Initial gain of the second conv in each residual block, so a fresh
/// block starts close to the identity.
const RESIDUAL_INIT_GAIN: f64 = 0.1;

impl CenetModel {
    pub fn new(config: CenetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from(seed);
        let mut params = ParamSet::new();
        let c = config.width;
        let head = Conv2d::new(&mut params, "head", 2, c, 3, 1, Init::FanIn, &mut rng);
        let groups = (0..config.groups)
            .map(|g| ResidualGroup {
                blocks: (0..config.blocks_per_group)
                    .map(|b| ResidualBlock {
                        conv1: Conv2d::new(&mut params, &format!("g{g}.b{b}.conv1"), c, c, 3, 1, Init::FanIn, &mut rng),
                        conv2: Conv2d::new(
                            &mut params,
                            &format!("g{g}.b{b}.conv2"),
                            c,
                            c,
                            3,
                            1,
                            Init::ScaledFanIn(RESIDUAL_INIT_GAIN),
                            &mut rng,
                        ),
                    })
                    .collect(),
                attention: Soca::new(&mut params, &format!("g{g}.soca"), c, config.reduction, &mut rng),
            })
            .collect();
        let up1 = Conv2d::new(&mut params, "up1", c, c, 3, 1, Init::FanIn, &mut rng);
        let up2 = Conv2d::new(&mut params, "up2", c, c, 3, 1, Init::FanIn, &mut rng);
        let recon = Conv2d::new(&mut params, "recon", c, 2, 3, 1, Init::FanIn, &mut rng);
        Ok(Self {
            config,
            params,
            input_scale: 1.0,
            head,
            groups,
            up1,
            up2,
            recon,
        })
    }

    /// `B×2×P×T` (or `2×P×T`) normalized input to `B×2×K×N` output.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let (p, t) = self.config.lr_dims;
        let s = tape.shape(x);
        let ok = match s {
            [_, c, h, w] | [c, h, w] => *c == 2 && *h == p && *w == t,
            _ => false,
        };
        if !ok {
            return Err(Error::shape("cenet_forward", format!("input {s:?}, expected B×2×{p}×{t}")));
        }
        let ps = &self.params;
        let head = self.head.forward(tape, ps, x)?;
        let mut h = head;
        for g in &self.groups {
            h = g.forward(tape, ps, h)?;
        }
        let h = tape.add(head, h)?;
        let h = tape.upsample_nearest(h, 2)?;
        let h = self.up1.forward(tape, ps, h)?;
        let h = tape.relu(h)?;
        let h = tape.upsample_nearest(h, 2)?;
        let h = self.up2.forward(tape, ps, h)?;
        let h = tape.relu(h)?;
        self.recon.forward(tape, ps, h)
    }

    /// Forward pass on raw (unnormalized) low-resolution planes, `count`
    /// samples back to back; returns raw high-resolution planes.
    pub fn predict(&self, lr: &[f64], count: usize) -> Result<Vec<f64>> {
        let (p, t) = self.config.lr_dims;
        let inv = 1.0 / self.input_scale;
        let x = Tensor::new(vec![count, 2, p, t], lr.iter().map(|v| v * inv).collect())?;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let y = self.forward(&mut tape, xv)?;
        Ok(tape.value(y).data().iter().map(|v| v * self.input_scale).collect())
    }

    fn check_pattern(&self, pattern: &PilotPattern) -> Result<()> {
        let (k, n) = self.config.hr_dims();
        if pattern.lattice_dims() != self.config.lr_dims || pattern.grid_dims() != (k, n) {
            return Err(Error::shape(
                "cenet_estimate",
                format!(
                    "pattern {:?} on {:?} does not match model {:?} → {:?}",
                    pattern.lattice_dims(),
                    pattern.grid_dims(),
                    self.config.lr_dims,
                    (k, n)
                ),
            ));
        }
        Ok(())
    }

    /// Full-grid channel estimate from LS pilot estimates (pattern order).
    pub fn estimate_from_ls(&self, ls: &[Complex64], pattern: &PilotPattern) -> Result<FrameGrid> {
        Ok(self.estimate_batch(&[ls.to_vec()], pattern)?.pop().expect("one estimate"))
    }

    /// Batched [`CenetModel::estimate_from_ls`].
    pub fn estimate_batch(&self, ls: &[Vec<Complex64>], pattern: &PilotPattern) -> Result<Vec<FrameGrid>> {
        self.check_pattern(pattern)?;
        let (k, n) = self.config.hr_dims();
        let mut out = Vec::with_capacity(ls.len());
        for chunk in ls.chunks(INFERENCE_BATCH) {
            let mut lr = Vec::with_capacity(chunk.len() * self.config.lr_len());
            for v in chunk {
                if v.len() != pattern.len() {
                    return Err(Error::shape("cenet_estimate", format!("{} LS values", v.len())));
                }
                lr.extend(pattern.to_lr_planes(v, 1.0));
            }
            let hr = self.predict(&lr, chunk.len())?;
            for planes in hr.chunks(self.config.hr_len()) {
                out.push(FrameGrid::from_planes(k, n, planes, 1.0)?);
            }
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        let c = &self.config;
        for (name, v) in [
            ("width", c.width),
            ("groups", c.groups),
            ("blocks_per_group", c.blocks_per_group),
            ("reduction", c.reduction),
            ("lr_rows", c.lr_dims.0),
            ("lr_cols", c.lr_dims.1),
            ("scale", c.scale),
        ] {
            ck.push_scalar(format!("config.{name}"), v as f64);
        }
        ck.push_scalar("input_scale", self.input_scale);
        ck.extend(self.params.iter().map(|(n, t)| (format!("param.{n}"), t.clone())));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let get = |name: &str| -> Result<usize> { Ok(ck.scalar(&format!("config.{name}"))? as usize) };
        let config = CenetConfig {
            width: get("width")?,
            groups: get("groups")?,
            blocks_per_group: get("blocks_per_group")?,
            reduction: get("reduction")?,
            lr_dims: (get("lr_rows")?, get("lr_cols")?),
            scale: get("scale")?,
        };
        let mut model = Self::new(config, 0)?;
        model.input_scale = ck.scalar("input_scale")?;
        model.params.load_values(|n| ck.get(&format!("param.{n}")))?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingModel(path.display().to_string()));
        }
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

const INFERENCE_BATCH: usize = 16;

/// Runs LS on the observation and the network on the result.
pub fn cenet_estimate(model: &CenetModel, obs: &PilotObservation, pattern: &PilotPattern) -> Result<FrameGrid> {
    model.estimate_from_ls(&ls_estimate(obs, pattern)?, pattern)
}

/// Paired low-resolution inputs and high-resolution targets, stored as raw
/// (unnormalized) real planes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CenetDataset {
    lr_len: usize,
    hr_len: usize,
    lr: Vec<f64>,
    hr: Vec<f64>,
}

impl CenetDataset {
    pub fn new(config: &CenetConfig) -> Self {
        Self {
            lr_len: config.lr_len(),
            hr_len: config.hr_len(),
            lr: Vec::new(),
            hr: Vec::new(),
        }
    }

    /// Adds one (LS pilot estimate, true channel) pair.
    pub fn push(&mut self, ls: &[Complex64], h: &FrameGrid, pattern: &PilotPattern) -> Result<()> {
        let lr = pattern.to_lr_planes(ls, 1.0);
        let hr = h.to_tensor(1.0).into_data();
        if lr.len() != self.lr_len || hr.len() != self.hr_len {
            return Err(Error::shape(
                "CenetDataset::push",
                format!("{} / {} values, expected {} / {}", lr.len(), hr.len(), self.lr_len, self.hr_len),
            ));
        }
        self.lr.extend(lr);
        self.hr.extend(hr);
        Ok(())
    }

    pub fn len(&self) -> usize {
        if self.lr_len == 0 { 0 } else { self.lr.len() / self.lr_len }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lr(&self, i: usize) -> &[f64] {
        &self.lr[i * self.lr_len..(i + 1) * self.lr_len]
    }

    pub fn hr(&self, i: usize) -> &[f64] {
        &self.hr[i * self.hr_len..(i + 1) * self.hr_len]
    }

    /// Root mean square of all low-resolution values.
    pub fn rms_input(&self) -> f64 {
        (self.lr.iter().map(|v| v * v).sum::<f64>() / self.lr.len().max(1) as f64).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CenetTrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f64,
}

impl Default for CenetTrainOptions {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 1e-5,
            batch: 16,
            seed: 1,
            lr_decay: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean channel MSE on the validation set (NaN without one).
    pub val_mse: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "epoch,train_loss,val_mse")?;
        for e in &self.epochs {
            writeln!(w, "{},{:.16e},{:.16e}", e.epoch, e.train_loss, e.val_mse)?;
        }
        Ok(())
    }
}

/// Mean channel MSE `(1/(K·N))·Σ|Ĥ − H|²` of the model over `data`.
pub fn evaluate_mse(model: &CenetModel, data: &CenetDataset) -> Result<f64> {
    let (k, n) = model.config.hr_dims();
    let mut total = 0.0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(INFERENCE_BATCH) {
        let lr: Vec<f64> = chunk.iter().flat_map(|&i| data.lr(i).iter().copied()).collect();
        let pred = model.predict(&lr, chunk.len())?;
        for (j, &i) in chunk.iter().enumerate() {
            let p = &pred[j * data.hr_len..(j + 1) * data.hr_len];
            total += p.iter().zip(data.hr(i)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (k * n) as f64;
        }
    }
    Ok(total / data.len() as f64)
}

/// Trainer state: the Adam moments persist across [`CenetTrainer::epoch`]
/// calls.
pub struct CenetTrainer {
    pub opts: CenetTrainOptions,
    pub adam: AdamState,
    epoch: usize,
}

impl CenetTrainer {
    pub fn new(model: &CenetModel, opts: CenetTrainOptions) -> Result<Self> {
        if opts.batch == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        Ok(Self {
            opts,
            adam: AdamState::new(&model.params, opts.lr)?,
            epoch: 0,
        })
    }

    /// One Adam step on the samples `idx`; returns the batch L1 loss.
    pub fn step(&mut self, model: &mut CenetModel, data: &CenetDataset, idx: &[usize]) -> Result<f64> {
        let (p, t) = model.config.lr_dims;
        let (k, n) = model.config.hr_dims();
        let inv = 1.0 / model.input_scale;
        let b = idx.len();
        let x: Vec<f64> = idx.iter().flat_map(|&i| data.lr(i).iter().map(|v| v * inv)).collect();
        let y: Vec<f64> = idx.iter().flat_map(|&i| data.hr(i).iter().map(|v| v * inv)).collect();
        model.params.zero_grad();
        let mut tape = Tape::new();
        let xv = tape.constant(Tensor::new(vec![b, 2, p, t], x)?);
        let yv = tape.constant(Tensor::new(vec![b, 2, k, n], y)?);
        let pred = model.forward(&mut tape, xv)?;
        let loss = tape.l1_loss(pred, yv)?;
        let value = tape.value(loss).data()[0];
        tape.backward_into(loss, &mut model.params)?;
        self.adam.step(&mut model.params)?;
        Ok(value)
    }

    /// One pass over `data` in a seed-determined order; returns the mean
    /// batch loss.
    pub fn epoch(&mut self, model: &mut CenetModel, data: &CenetDataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng_from(derive_seed(self.opts.seed, 0xCE, self.epoch as u64)));
        let mut total = 0.0;
        let mut batches = 0;
        for idx in order.chunks(self.opts.batch) {
            total += self.step(model, data, idx)?;
            batches += 1;
        }
        self.epoch += 1;
        self.adam.lr *= self.opts.lr_decay;
        Ok(total / batches as f64)
    }
}

/// Fits the input scale on `train` if the model is fresh, then runs
/// `opts.epochs` epochs, logging training loss and validation MSE.
pub fn cenet_train(
    model: &mut CenetModel,
    train: &CenetDataset,
    val: Option<&CenetDataset>,
    opts: CenetTrainOptions,
) -> Result<TrainingLog> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let rms = train.rms_input();
    if rms > 0.0 {
        model.input_scale = rms;
    }
    let mut trainer = CenetTrainer::new(model, opts)?;
    let mut log = TrainingLog::default();
    for epoch in 0..opts.epochs {
        let train_loss = trainer.epoch(model, train)?;
        let val_mse = match val {
            Some(v) if !v.is_empty() => evaluate_mse(model, v)?,
            _ => f64::NAN,
        };
        log.epochs.push(EpochLog {
            epoch: epoch + 1,
            train_loss,
            val_mse,
        });
    }
    Ok(log)
}
