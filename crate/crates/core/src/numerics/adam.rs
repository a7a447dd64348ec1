use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

/// Adam moments for one [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zero moments shaped after `params`, β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(params: &ParamSet, lr: f64) -> Result<Self> {
        Self::with_betas(params, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &ParamSet, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
        }
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Ok(Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update using the gradients held in
    /// `params`. Parameters without a gradient buffer see a zero gradient.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} parameters, state for {}", params.len(), self.m.len()),
            ));
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in params.tensors_mut().zip(&mut self.m).zip(&mut self.v) {
            if p.len() != m.len() {
                return Err(Error::shape("adam_step", "parameter resized after state creation"));
            }
            let grad = p.grad().map(<[f64]>::to_vec);
            let data = p.data_mut();
            for i in 0..data.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[i]);
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            if !data.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite("adam_step".into()));
            }
        }
        Ok(())
    }

    /// Moments as named records (`{prefix}.m.{param}`, `{prefix}.v.{param}`)
    /// plus scalar records for the step counter and hyperparameters.
    pub fn records(&self, params: &ParamSet, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(2 * self.m.len() + 5);
        for (((name, p), m), v) in params.iter().zip(&self.m).zip(&self.v) {
            let shape = p.shape().to_vec();
            out.push((
                format!("{prefix}.m.{name}"),
                Tensor::new(shape.clone(), m.clone()).expect("moment shape"),
            ));
            out.push((
                format!("{prefix}.v.{name}"),
                Tensor::new(shape, v.clone()).expect("moment shape"),
            ));
        }
        for (k, val) in [
            ("t", self.t as f64),
            ("lr", self.lr),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("eps", self.eps),
        ] {
            out.push((format!("{prefix}.{k}"), Tensor::scalar(val)));
        }
        out
    }

    pub fn from_records<'a>(
        params: &ParamSet,
        prefix: &str,
        mut lookup: impl FnMut(&str) -> Option<&'a Tensor>,
    ) -> Result<Self> {
        let mut scalar = |k: &str| -> Result<f64> {
            lookup(&format!("{prefix}.{k}"))
                .and_then(|t| t.data().first().copied())
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {prefix}.{k}")))
        };
        let t = scalar("t")?;
        let (lr, beta1, beta2, eps) = (scalar("lr")?, scalar("beta1")?, scalar("beta2")?, scalar("eps")?);
        let mut state = Self::with_betas(params, lr, beta1, beta2, eps)?;
        state.t = t as u64;
        for (i, (name, p)) in params.iter().enumerate() {
            for (kind, dst) in [("m", &mut state.m[i]), ("v", &mut state.v[i])] {
                let key = format!("{prefix}.{kind}.{name}");
                let src = lookup(&key).ok_or_else(|| Error::Format(format!("checkpoint lacks {key}")))?;
                if src.len() != p.len() {
                    return Err(Error::shape("adam records", key));
                }
                dst.copy_from_slice(src.data());
            }
        }
        Ok(state)
    }
}
