//! Conditional-GAN signal recovery.
//!
//! The generator maps the received grid `Y`, conditioned on a channel
//! estimate `Ĥ`, to the transmit grid: a VGG-style data encoder and a
//! condition encoder both reduce the 72×28 grid by 4 per axis, three
//! bilinear residual layers (BRL) let the condition modulate the data
//! features, a fusion conv merges them with the condition, and a decoder
//! upsamples back. The discriminator scores `(X, Ĥ)` pairs. Training
//! alternates one discriminator and one generator Adam step per batch; the
//! generator loss is the non-saturating adversarial term plus `λ·L1`.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::equalize::detect_bits;
use crate::error::{Error, Result};
use crate::numerics::{AdamState, BatchNorm2d, Checkpoint, Conv2d, Init, Linear, Mode, ParamSet, Tape, Tensor, Var};
use crate::ofdm::{FrameGrid, QamConstellation};
use crate::pilots::PilotPattern;
use crate::rng::{derive_seed, rng_from, SimRng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CcrnetConfig {
    /// Base width `w`: the data encoder runs `2 → w → 2w → 4w → 8w`
    /// (64 gives the 64…512 VGG widths).
    pub width: usize,
    pub brl_blocks: usize,
    /// Grid `(K, N)`; both must be divisible by 4.
    pub grid: (usize, usize),
    /// Discriminator widths are `dw` and `2dw` (64 gives 64, 128).
    pub disc_width: usize,
}

impl Default for CcrnetConfig {
    fn default() -> Self {
        Self {
            width: 8,
            brl_blocks: 3,
            grid: (72, 28),
            disc_width: 16,
        }
    }
}

impl CcrnetConfig {
    pub fn validate(&self) -> Result<()> {
        let (k, n) = self.grid;
        if self.width == 0 || self.disc_width == 0 || k % 4 != 0 || n % 4 != 0 || k == 0 || n == 0 {
            return Err(Error::InvalidArgument(format!(
                "ccrnet widths must be positive and the grid {k}x{n} divisible by 4"
            )));
        }
        Ok(())
    }

    pub fn grid_len(&self) -> usize {
        2 * self.grid.0 * self.grid.1
    }

    fn check_input(&self, shape: &[usize], op: &'static str) -> Result<usize> {
        let (k, n) = self.grid;
        match *shape {
            [b, 2, kk, nn] if kk == k && nn == n => Ok(b),
            [2, kk, nn] if kk == k && nn == n => Ok(1),
            _ => Err(Error::shape(op, format!("input {shape:?}, expected B×2×{k}×{n}"))),
        }
    }
}

/// Bilinear residual layer:
/// `out = U + f([tanh(u(U)) ⊙ tanh(v(V)), U])` with 1×1 convs `u`, `v`, `f`.
#[derive(Clone, Debug)]
pub struct Brl {
    pub proj_u: Conv2d,
    pub proj_v: Conv2d,
    pub fuse: Conv2d,
}

impl Brl {
    pub fn new(params: &mut ParamSet, name: &str, channels: usize, rng: &mut SimRng) -> Self {
        Self {
            proj_u: Conv2d::new(params, &format!("{name}.u"), channels, channels, 1, 1, Init::FanIn, rng),
            proj_v: Conv2d::new(params, &format!("{name}.v"), channels, channels, 1, 1, Init::FanIn, rng),
            fuse: Conv2d::new(params, &format!("{name}.f"), 2 * channels, channels, 1, 1, Init::FanIn, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, u: Var, v: Var) -> Result<Var> {
        if tape.shape(u) != tape.shape(v) {
            return Err(Error::shape("brl_forward", format!("{:?} vs {:?}", tape.shape(u), tape.shape(v))));
        }
        let a = self.proj_u.forward(tape, params, u)?;
        let a = tape.tanh(a)?;
        let b = self.proj_v.forward(tape, params, v)?;
        let b = tape.tanh(b)?;
        let p = tape.mul(a, b)?;
        let cat = tape.concat_channels(p, u)?;
        let f = self.fuse.forward(tape, params, cat)?;
        tape.add(u, f)
    }
}

/// Conv + optional batchnorm + ReLU.
#[derive(Clone, Debug)]
struct ConvUnit {
    conv: Conv2d,
    bn: Option<BatchNorm2d>,
}

impl ConvUnit {
    #[allow(clippy::too_many_arguments)]
    fn new(params: &mut ParamSet, name: &str, c_in: usize, c_out: usize, stride: usize, bn: bool, rng: &mut SimRng) -> Self {
        Self {
            conv: Conv2d::new(params, &format!("{name}.conv"), c_in, c_out, 3, stride, Init::FanIn, rng),
            bn: bn.then(|| BatchNorm2d::new(params, &format!("{name}.bn"), c_out)),
        }
    }

    fn forward(&mut self, tape: &mut Tape, params: &ParamSet, x: Var, mode: Mode) -> Result<Var> {
        let h = self.conv.forward(tape, params, x)?;
        let h = match &mut self.bn {
            Some(bn) => bn.forward(tape, params, h, mode)?,
            None => h,
        };
        tape.relu(h)
    }

    fn state_records(&self, out: &mut Vec<(String, Tensor)>) {
        if let Some(bn) = &self.bn {
            out.extend(bn.state_records());
        }
    }

    fn load_state(&mut self, ck: &Checkpoint, prefix: &str) -> Result<()> {
        if let Some(bn) = &mut self.bn {
            bn.load_state(|n| ck.get(&format!("{prefix}{n}")))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub params: ParamSet,
    encoder: Vec<ConvUnit>,
    condition: Vec<ConvUnit>,
    cond_proj: Conv2d,
    cond_expand: Conv2d,
    brls: Vec<Brl>,
    fusion: Conv2d,
    decoder: Vec<ConvUnit>,
    out: Conv2d,
}

impl Generator {
    pub fn new(config: &CcrnetConfig, rng: &mut SimRng) -> Self {
        let w = config.width;
        let mut p = ParamSet::new();
        let encoder = vec![
            ConvUnit::new(&mut p, "enc1", 2, w, 1, false, rng),
            ConvUnit::new(&mut p, "enc2", w, 2 * w, 2, false, rng),
            ConvUnit::new(&mut p, "enc3", 2 * w, 4 * w, 2, false, rng),
            ConvUnit::new(&mut p, "enc4", 4 * w, 8 * w, 1, false, rng),
        ];
        let condition = vec![
            ConvUnit::new(&mut p, "cond1", 2, 2 * w, 1, true, rng),
            ConvUnit::new(&mut p, "cond2", 2 * w, 4 * w, 2, true, rng),
            ConvUnit::new(&mut p, "cond3", 4 * w, 8 * w, 2, true, rng),
        ];
        let cond_proj = Conv2d::new(&mut p, "cond4", 8 * w, 2, 3, 1, Init::FanIn, rng);
        let cond_expand = Conv2d::new(&mut p, "cond_expand", 2, 8 * w, 1, 1, Init::FanIn, rng);
        let brls = (0..config.brl_blocks)
            .map(|i| Brl::new(&mut p, &format!("brl{i}"), 8 * w, rng))
            .collect();
        let fusion = Conv2d::new(&mut p, "fusion", 16 * w, 8 * w, 1, 1, Init::FanIn, rng);
        let decoder = vec![
            ConvUnit::new(&mut p, "dec1", 8 * w, 4 * w, 1, true, rng),
            ConvUnit::new(&mut p, "dec2", 4 * w, 2 * w, 1, true, rng),
        ];
        let out = Conv2d::new(&mut p, "dec3", 2 * w, 2, 3, 1, Init::FanIn, rng);
        Self {
            params: p,
            encoder,
            condition,
            cond_proj,
            cond_expand,
            brls,
            fusion,
            decoder,
            out,
        }
    }

    /// `X̂ = G(Y | Ĥ)` on normalized `B×2×K×N` inputs.
    pub fn forward(&mut self, tape: &mut Tape, y: Var, h: Var, mode: Mode) -> Result<Var> {
        let ps = &self.params;
        let mut u = y;
        for unit in &mut self.encoder {
            u = unit.forward(tape, ps, u, mode)?;
        }
        let mut c = h;
        for unit in &mut self.condition {
            c = unit.forward(tape, ps, c, mode)?;
        }
        let c = self.cond_proj.forward(tape, ps, c)?;
        let v = self.cond_expand.forward(tape, ps, c)?;
        for brl in &self.brls {
            u = brl.forward(tape, ps, u, v)?;
        }
        let cat = tape.concat_channels(u, v)?;
        let f = self.fusion.forward(tape, ps, cat)?;
        let mut d = tape.relu(f)?;
        for unit in &mut self.decoder {
            d = tape.upsample_nearest(d, 2)?;
            d = unit.forward(tape, ps, d, mode)?;
        }
        self.out.forward(tape, ps, d)
    }

    fn units(&self) -> impl Iterator<Item = &ConvUnit> {
        self.encoder.iter().chain(&self.condition).chain(&self.decoder)
    }

    fn units_mut(&mut self) -> impl Iterator<Item = &mut ConvUnit> {
        self.encoder.iter_mut().chain(self.condition.iter_mut()).chain(self.decoder.iter_mut())
    }

    /// Zeroes the fusion conv of every BRL, making each one the identity on
    /// its data input.
    pub fn zero_brl_fusion(&mut self) {
        for b in &self.brls {
            for id in [b.fuse.weight, b.fuse.bias] {
                self.params.get_mut(id).data_mut().fill(0.0);
            }
        }
    }

    pub fn brls(&self) -> &[Brl] {
        &self.brls
    }
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    pub params: ParamSet,
    units: Vec<ConvUnit>,
    score: Conv2d,
    fc: Linear,
}

impl Discriminator {
    pub fn new(config: &CcrnetConfig, rng: &mut SimRng) -> Self {
        let dw = config.disc_width;
        let mut p = ParamSet::new();
        let units = vec![
            ConvUnit::new(&mut p, "conv1", 4, dw, 1, true, rng),
            ConvUnit::new(&mut p, "conv2", dw, 2 * dw, 1, true, rng),
        ];
        let score = Conv2d::new(&mut p, "conv3", 2 * dw, 1, 3, 1, Init::FanIn, rng);
        let fc = Linear::new(&mut p, "fc", config.grid.0 * config.grid.1, 1, Init::FanIn, rng);
        Self {
            params: p,
            units,
            score,
            fc,
        }
    }

    /// Probability (`B×1`) that `x` is a genuine transmit grid for the
    /// condition `h`.
    pub fn forward(&mut self, tape: &mut Tape, x: Var, h: Var, mode: Mode) -> Result<Var> {
        let ps = &self.params;
        let mut d = tape.concat_channels(x, h)?;
        for unit in &mut self.units {
            d = unit.forward(tape, ps, d, mode)?;
        }
        let s = self.score.forward(tape, ps, d)?;
        let logit = self.fc.forward(tape, ps, s)?;
        tape.sigmoid(logit)
    }
}

/// Generator, discriminator and the normalization scales of their inputs.
#[derive(Clone, Debug)]
pub struct CcrnetModel {
    pub config: CcrnetConfig,
    pub gen: Generator,
    pub disc: Discriminator,
    pub y_scale: f64,
    pub h_scale: f64,
    pub x_scale: f64,
}

const INFERENCE_BATCH: usize = 16;

impl CcrnetModel {
    pub fn new(config: CcrnetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from(seed);
        let gen = Generator::new(&config, &mut rng);
        let disc = Discriminator::new(&config, &mut rng);
        Ok(Self {
            config,
            gen,
            disc,
            y_scale: 1.0,
            h_scale: 1.0,
            x_scale: 1.0,
        })
    }

    /// Generator forward on normalized tensors.
    pub fn generate(&mut self, tape: &mut Tape, y: Var, h: Var, mode: Mode) -> Result<Var> {
        self.config.check_input(tape.shape(y), "generator_forward")?;
        self.config.check_input(tape.shape(h), "generator_forward")?;
        if tape.shape(y) != tape.shape(h) {
            return Err(Error::shape("generator_forward", format!("{:?} vs {:?}", tape.shape(y), tape.shape(h))));
        }
        self.gen.forward(tape, y, h, mode)
    }

    /// Discriminator forward on normalized tensors.
    pub fn discriminate(&mut self, tape: &mut Tape, x: Var, h: Var, mode: Mode) -> Result<Var> {
        self.config.check_input(tape.shape(x), "discriminator_forward")?;
        self.config.check_input(tape.shape(h), "discriminator_forward")?;
        if tape.shape(x) != tape.shape(h) {
            return Err(Error::shape("discriminator_forward", format!("{:?} vs {:?}", tape.shape(x), tape.shape(h))));
        }
        self.disc.forward(tape, x, h, mode)
    }

    /// Recovered transmit grids (eval mode, de-normalized).
    pub fn recover_batch(&self, ys: &[FrameGrid], hs: &[FrameGrid]) -> Result<Vec<FrameGrid>> {
        if ys.len() != hs.len() {
            return Err(Error::shape("ccrnet_detect", format!("{} received vs {} channel grids", ys.len(), hs.len())));
        }
        let (k, n) = self.config.grid;
        // Eval mode leaves batchnorm state untouched; work on a copy of the
        // generator so `&self` suffices.
        let mut gen = self.gen.clone();
        let mut out = Vec::with_capacity(ys.len());
        for (yc, hc) in ys.chunks(INFERENCE_BATCH).zip(hs.chunks(INFERENCE_BATCH)) {
            let b = yc.len();
            let stack = |grids: &[FrameGrid], scale: f64| -> Result<Tensor> {
                let mut v = Vec::with_capacity(b * self.config.grid_len());
                for g in grids {
                    if g.dims() != (k, n) {
                        return Err(Error::shape("ccrnet_detect", format!("grid {:?}", g.dims())));
                    }
                    v.extend(g.to_tensor(scale).into_data());
                }
                Tensor::new(vec![b, 2, k, n], v)
            };
            let mut tape = Tape::new();
            let y = tape.constant(stack(yc, self.y_scale)?);
            let h = tape.constant(stack(hc, self.h_scale)?);
            let x = gen.forward(&mut tape, y, h, Mode::Eval)?;
            for planes in tape.value(x).data().chunks(self.config.grid_len()) {
                out.push(FrameGrid::from_planes(k, n, planes, self.x_scale)?);
            }
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self, trainer: Option<&GanTrainer>) -> Checkpoint {
        let mut ck = Checkpoint::new();
        let c = &self.config;
        for (name, v) in [
            ("width", c.width),
            ("brl_blocks", c.brl_blocks),
            ("grid_k", c.grid.0),
            ("grid_n", c.grid.1),
            ("disc_width", c.disc_width),
        ] {
            ck.push_scalar(format!("config.{name}"), v as f64);
        }
        ck.push_scalar("y_scale", self.y_scale);
        ck.push_scalar("h_scale", self.h_scale);
        ck.push_scalar("x_scale", self.x_scale);
        ck.extend(self.gen.params.iter().map(|(n, t)| (format!("gen.{n}"), t.clone())));
        ck.extend(self.disc.params.iter().map(|(n, t)| (format!("disc.{n}"), t.clone())));
        let mut states = Vec::new();
        for u in self.gen.units() {
            u.state_records(&mut states);
        }
        ck.extend(states.drain(..).map(|(n, t)| (format!("gen.{n}"), t)));
        for u in &self.disc.units {
            u.state_records(&mut states);
        }
        ck.extend(states.drain(..).map(|(n, t)| (format!("disc.{n}"), t)));
        if let Some(tr) = trainer {
            ck.extend(tr.adam_g.records(&self.gen.params, "adam_g"));
            ck.extend(tr.adam_d.records(&self.disc.params, "adam_d"));
            ck.push_scalar("train.step", tr.step as f64);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let get = |name: &str| -> Result<usize> { Ok(ck.scalar(&format!("config.{name}"))? as usize) };
        let config = CcrnetConfig {
            width: get("width")?,
            brl_blocks: get("brl_blocks")?,
            grid: (get("grid_k")?, get("grid_n")?),
            disc_width: get("disc_width")?,
        };
        let mut m = Self::new(config, 0)?;
        m.y_scale = ck.scalar("y_scale")?;
        m.h_scale = ck.scalar("h_scale")?;
        m.x_scale = ck.scalar("x_scale")?;
        m.gen.params.load_values(|n| ck.get(&format!("gen.{n}")))?;
        m.disc.params.load_values(|n| ck.get(&format!("disc.{n}")))?;
        for u in m.gen.units_mut() {
            u.load_state(ck, "gen.")?;
        }
        for u in &mut m.disc.units {
            u.load_state(ck, "disc.")?;
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint(None).save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingModel(path.display().to_string()));
        }
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Recovers the transmit grid and hard-demaps its data positions.
pub fn ccrnet_detect(
    model: &CcrnetModel,
    y: &FrameGrid,
    h: &FrameGrid,
    pattern: &PilotPattern,
    qam: &QamConstellation,
) -> Result<Vec<u8>> {
    let x = model.recover_batch(std::slice::from_ref(y), std::slice::from_ref(h))?;
    Ok(detect_bits(&x[0], pattern, qam))
}

impl CcrnetModel {
    /// Sets each normalization scale to the RMS of its plane in `data`;
    /// all-zero planes keep the current scale.
    pub fn fit_scales(&mut self, data: &CcrnetDataset) {
        for (dst, src) in [(&mut self.x_scale, &data.x), (&mut self.y_scale, &data.y), (&mut self.h_scale, &data.h)] {
            let r = CcrnetDataset::rms(src);
            if r > 0.0 {
                *dst = r;
            }
        }
    }
}

/// `(X, Y, Ĥ)` training triples as raw real planes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CcrnetDataset {
    grid_len: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    h: Vec<f64>,
}

impl CcrnetDataset {
    pub fn new(config: &CcrnetConfig) -> Self {
        Self {
            grid_len: config.grid_len(),
            ..Self::default()
        }
    }

    pub fn push(&mut self, x: &FrameGrid, y: &FrameGrid, h: &FrameGrid) -> Result<()> {
        let n = 2 * x.as_slice().len();
        if n != self.grid_len || y.dims() != x.dims() || h.dims() != x.dims() {
            return Err(Error::shape("CcrnetDataset::push", format!("grid {:?}", x.dims())));
        }
        self.x.extend(x.to_tensor(1.0).into_data());
        self.y.extend(y.to_tensor(1.0).into_data());
        self.h.extend(h.to_tensor(1.0).into_data());
        Ok(())
    }

    pub fn len(&self) -> usize {
        if self.grid_len == 0 { 0 } else { self.x.len() / self.grid_len }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn rms(v: &[f64]) -> f64 {
        (v.iter().map(|a| a * a).sum::<f64>() / v.len().max(1) as f64).sqrt()
    }

    /// Normalized `B×2×K×N` tensors `(x, y, h)` for samples `idx`.
    pub fn batch(&self, model: &CcrnetModel, idx: &[usize]) -> Result<GanBatch> {
        let (k, n) = model.config.grid;
        let g = self.grid_len;
        let pick = |src: &[f64], scale: f64| -> Result<Tensor> {
            let inv = 1.0 / scale;
            let v: Vec<f64> = idx.iter().flat_map(|&i| src[i * g..(i + 1) * g].iter().map(|a| a * inv)).collect();
            Tensor::new(vec![idx.len(), 2, k, n], v)
        };
        Ok(GanBatch {
            x: pick(&self.x, model.x_scale)?,
            y: pick(&self.y, model.y_scale)?,
            h: pick(&self.h, model.h_scale)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanBatch {
    pub x: Tensor,
    pub y: Tensor,
    pub h: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanTrainOptions {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub lambda_rec: f64,
    pub seed: u64,
}

impl Default for GanTrainOptions {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: 2e-4,
            batch: 64,
            lambda_rec: 100.0,
            seed: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GanLosses {
    pub d_loss: f64,
    pub g_adv: f64,
    pub g_rec: f64,
}

impl GanLosses {
    pub fn is_finite(&self) -> bool {
        self.d_loss.is_finite() && self.g_adv.is_finite() && self.g_rec.is_finite()
    }
}

/// Adam states of both networks and the step counter.
pub struct GanTrainer {
    pub opts: GanTrainOptions,
    pub adam_g: AdamState,
    pub adam_d: AdamState,
    pub step: usize,
}

impl GanTrainer {
    pub fn new(model: &CcrnetModel, opts: GanTrainOptions) -> Result<Self> {
        if !(opts.lambda_rec >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda_rec {}", opts.lambda_rec)));
        }
        if opts.batch == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        Ok(Self {
            opts,
            adam_g: AdamState::new(&model.gen.params, opts.lr)?,
            adam_d: AdamState::new(&model.disc.params, opts.lr)?,
            step: 0,
        })
    }

    /// One discriminator step on (real, detached fake) pairs, then one
    /// generator step against the updated discriminator.
    pub fn train_step(&mut self, model: &mut CcrnetModel, batch: &GanBatch) -> Result<GanLosses> {
        let b = batch.x.shape()[0];
        let ones = vec![1.0; b];
        let zeros = vec![0.0; b];
        let wrap = |step: usize, what: &str, e: Error| match e {
            Error::NonFinite(s) => Error::NonFinite(format!("{s} ({what}, GAN step {step})")),
            e => e,
        };

        let mut gt = Tape::new();
        let y = gt.constant(batch.y.clone());
        let h = gt.constant(batch.h.clone());
        let fake = model
            .generate(&mut gt, y, h, Mode::Train)
            .map_err(|e| wrap(self.step, "generator", e))?;

        // Discriminator update; the fake enters as a constant.
        model.disc.params.zero_grad();
        let mut dt = Tape::new();
        let real_x = dt.constant(batch.x.clone());
        let cond = dt.constant(batch.h.clone());
        let fake_x = dt.constant(gt.value(fake).clone());
        let d_real = model.discriminate(&mut dt, real_x, cond, Mode::Train)?;
        let l_real = dt.bce_loss(d_real, &ones)?;
        let d_fake = model.discriminate(&mut dt, fake_x, cond, Mode::Train)?;
        let l_fake = dt.bce_loss(d_fake, &zeros)?;
        let d_loss = dt.add(l_real, l_fake).map_err(|e| wrap(self.step, "discriminator loss", e))?;
        let d_value = dt.value(d_loss).data()[0];
        dt.backward_into(d_loss, &mut model.disc.params)?;
        self.adam_d.step(&mut model.disc.params)?;

        // Generator update through the updated discriminator.
        model.gen.params.zero_grad();
        let real_x = gt.constant(batch.x.clone());
        let d_gen = model.discriminate(&mut gt, fake, h, Mode::Train)?;
        let g_adv = gt.bce_loss(d_gen, &ones)?;
        let g_rec = gt.l1_loss(fake, real_x)?;
        let (adv_value, rec_value) = (gt.value(g_adv).data()[0], gt.value(g_rec).data()[0]);
        let g_loss = if self.opts.lambda_rec > 0.0 {
            let r = gt.mul_scalar(g_rec, self.opts.lambda_rec)?;
            gt.add(g_adv, r).map_err(|e| wrap(self.step, "generator loss", e))?
        } else {
            g_adv
        };
        gt.backward_into(g_loss, &mut model.gen.params)?;
        self.adam_g.step(&mut model.gen.params)?;

        self.step += 1;
        let losses = GanLosses {
            d_loss: d_value,
            g_adv: adv_value,
            g_rec: rec_value,
        };
        if !losses.is_finite() {
            return Err(Error::NonFinite(format!("GAN losses {losses:?} at step {}", self.step)));
        }
        Ok(losses)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GanLog {
    pub steps: Vec<(usize, GanLosses)>,
}

impl GanLog {
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "step,d_loss,g_adv,g_rec")?;
        for (s, l) in &self.steps {
            writeln!(w, "{s},{:.16e},{:.16e},{:.16e}", l.d_loss, l.g_adv, l.g_rec)?;
        }
        Ok(())
    }
}

/// Fits the input scales on `data` and runs `opts.steps` GAN steps over
/// seed-shuffled minibatches.
pub fn ccrnet_train(model: &mut CcrnetModel, data: &CcrnetDataset, opts: GanTrainOptions) -> Result<GanLog> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    model.fit_scales(data);
    let mut trainer = GanTrainer::new(model, opts)?;
    let mut log = GanLog::default();
    let mut order: Vec<usize> = Vec::new();
    let mut epoch = 0u64;
    let bsz = opts.batch.min(data.len());
    while trainer.step < opts.steps {
        if order.len() < bsz {
            order = (0..data.len()).collect();
            order.shuffle(&mut rng_from(derive_seed(opts.seed, 0xCC, epoch)));
            epoch += 1;
        }
        let idx: Vec<usize> = order.drain(..bsz).collect();
        let batch = data.batch(model, &idx)?;
        let losses = trainer.train_step(model, &batch)?;
        log.steps.push((trainer.step, losses));
    }
    Ok(log)
}
