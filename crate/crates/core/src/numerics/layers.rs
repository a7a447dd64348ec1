//! Parameterized layers. Each layer owns [`ParamId`]s into a caller-held
//! [`ParamSet`] and records itself onto a [`Tape`].

use rand::Rng;

use super::{ParamId, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Weight initialization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform on `±sqrt(3/fan_in)`, i.e. unit-variance preserving.
    FanIn,
    /// `FanIn` scaled by a constant factor.
    ScaledFanIn(f64),
    Zeros,
}

fn init_tensor<R: Rng + ?Sized>(shape: Vec<usize>, fan_in: usize, init: Init, rng: &mut R) -> Tensor {
    let gain = match init {
        Init::FanIn => 1.0,
        Init::ScaledFanIn(s) => s,
        Init::Zeros => return Tensor::zeros(shape),
    };
    let bound = gain * (3.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound))
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// Square `kernel`×`kernel` convolution with "same" padding
    /// (`kernel / 2`).
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let w = init_tensor(vec![kernel, kernel, c_in, c_out], kernel * kernel * c_in, init, rng);
        let weight = params.add(format!("{name}.weight"), w);
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(vec![c_out]));
        Self {
            weight,
            bias,
            c_in,
            c_out,
            kernel,
            stride,
            pad: kernel / 2,
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var> {
        let w = tape.param(params, self.weight);
        let b = tape.param(params, self.bias);
        tape.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    name: String,
}

impl BatchNorm2d {
    pub fn new(params: &mut ParamSet, name: &str, channels: usize) -> Self {
        let gamma = params.add(format!("{name}.gamma"), Tensor::full(vec![channels], 1.0));
        let beta = params.add(format!("{name}.beta"), Tensor::zeros(vec![channels]));
        Self {
            gamma,
            beta,
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            name: name.to_string(),
        }
    }

    /// Train mode normalizes with batch statistics and folds them into the
    /// running estimates (momentum [`BN_MOMENTUM`], unbiased variance); eval
    /// mode uses the running estimates.
    pub fn forward(&mut self, tape: &mut Tape, params: &ParamSet, x: Var, mode: Mode) -> Result<Var> {
        let g = tape.param(params, self.gamma);
        let b = tape.param(params, self.beta);
        match mode {
            Mode::Eval => {
                let (y, _, _) =
                    tape.batchnorm(x, g, b, BN_EPS, Some((&self.running_mean, &self.running_var)))?;
                Ok(y)
            }
            Mode::Train => {
                let n: usize = {
                    let s = tape.shape(x);
                    let spatial: usize = s[s.len() - 2..].iter().product();
                    if s.len() == 4 { s[0] * spatial } else { spatial }
                };
                let (y, mean, var) = tape.batchnorm(x, g, b, BN_EPS, None)?;
                let unbias = n as f64 / (n as f64 - 1.0);
                for c in 0..mean.len() {
                    self.running_mean[c] =
                        (1.0 - BN_MOMENTUM) * self.running_mean[c] + BN_MOMENTUM * mean[c];
                    self.running_var[c] =
                        (1.0 - BN_MOMENTUM) * self.running_var[c] + BN_MOMENTUM * var[c] * unbias;
                }
                Ok(y)
            }
        }
    }

    pub fn state_records(&self) -> Vec<(String, Tensor)> {
        let c = self.running_mean.len();
        vec![
            (
                format!("{}.running_mean", self.name),
                Tensor::new(vec![c], self.running_mean.clone()).expect("length matches"),
            ),
            (
                format!("{}.running_var", self.name),
                Tensor::new(vec![c], self.running_var.clone()).expect("length matches"),
            ),
        ]
    }

    pub fn load_state<'a>(&mut self, mut lookup: impl FnMut(&str) -> Option<&'a Tensor>) -> Result<()> {
        for (suffix, dst) in [
            ("running_mean", &mut self.running_mean),
            ("running_var", &mut self.running_var),
        ] {
            let key = format!("{}.{suffix}", self.name);
            let t = lookup(&key).ok_or_else(|| Error::Format(format!("checkpoint lacks {key}")))?;
            if t.len() != dst.len() {
                return Err(Error::shape("batchnorm state", key));
            }
            dst.copy_from_slice(t.data());
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        d_in: usize,
        d_out: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let w = init_tensor(vec![d_in, d_out], d_in, init, rng);
        let weight = params.add(format!("{name}.weight"), w);
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(vec![d_out]));
        Self { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var> {
        let w = tape.param(params, self.weight);
        let b = tape.param(params, self.bias);
        tape.linear(x, w, b)
    }
}
