use super::kernels::{self, center_rows, ConvGeom};
use super::{ParamId, ParamSet, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param {
        set: u64,
        id: usize,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
        batch: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        // false when statistics are fixed running estimates
        batch_stats: bool,
    },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Upsample {
        x: Var,
        scale: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
        batch: usize,
    },
    Concat {
        a: Var,
        b: Var,
    },
    L1 {
        pred: Var,
        target: Var,
        batch: usize,
    },
    Bce {
        prob: Var,
        labels: Vec<f64>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulScalar(Var, f64),
    ScaleChannels {
        x: Var,
        g: Var,
    },
    CovDescriptor {
        x: Var,
        centered: Vec<f64>,
        col_sums: Vec<f64>,
    },
    Sum(Var),
    SumSquares(Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    op: Op,
    requires_grad: bool,
}

/// Operation record of one forward pass.
///
/// Backward walks the record in exact reverse order and may run once; a
/// second call fails with [`Error::StaleTape`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

fn check_finite(op: &str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op.to_string()))
    }
}

fn batch_dims(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [b, c, h, w] => Ok((b, c, h, w)),
        [c, h, w] => Ok((1, c, h, w)),
        _ => Err(Error::shape(op, format!("expected C×H×W or B×C×H×W, got {shape:?}"))),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        check_finite(name, value.data())?;
        Ok(self.push(value, op, inputs))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the loss w.r.t. `v` after [`Tape::backward`]; `None` for
    /// values that do not require gradients or were unreachable.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Records a constant or input. Its `requires_grad` flag is honored.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        let mut t = t;
        t.clear_grad();
        self.nodes.push(Node {
            value: t,
            grad: None,
            op: Op::Leaf,
            requires_grad: rg,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    pub fn param(&mut self, set: &ParamSet, id: ParamId) -> Var {
        let mut value = set.get(id).clone();
        value.clear_grad();
        let rg = value.requires_grad();
        self.nodes.push(Node {
            value,
            grad: None,
            op: Op::Param {
                set: set.uid(),
                id: id.index(),
            },
            requires_grad: rg,
        });
        Var(self.nodes.len() - 1)
    }

    // ---------------------------------------------------------------- ops

    /// 2-D convolution. `x` is `C×H×W` or `B×C×H×W`; `w` is
    /// `[kh, kw, c_in, c_out]`; `b` is `[c_out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (batch, c_in, h, wd) = batch_dims(&xs, "conv2d")?;
        let [kh, kw, wc_in, c_out] = *self.shape(w) else {
            return Err(Error::shape("conv2d", format!("kernel shape {:?}", self.shape(w))));
        };
        if wc_in != c_in {
            return Err(Error::shape(
                "conv2d",
                format!("input has {c_in} channels, kernel expects {wc_in}"),
            ));
        }
        if self.shape(b) != [c_out] {
            return Err(Error::shape("conv2d", format!("bias shape {:?}", self.shape(b))));
        }
        let (oh, ow) = kernels::conv2d_output_dims(h, wd, kh, kw, stride, pad)?;
        let geom = ConvGeom {
            c_in,
            h,
            w: wd,
            c_out,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
        };
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &geom,
            batch,
        );
        let shape = if xs.len() == 3 {
            vec![c_out, oh, ow]
        } else {
            vec![batch, c_out, oh, ow]
        };
        let t = Tensor::new(shape, out)?;
        self.push_checked(
            "conv2d",
            t,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                batch,
            },
            &[x, w, b],
        )
    }

    /// Batch normalization over `(B, H, W)` per channel. With
    /// `running = Some((mean, var))` the given statistics are used instead
    /// of batch statistics.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        running: Option<(&[f64], &[f64])>,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let xs = self.shape(x).to_vec();
        let (batch, c, h, w) = batch_dims(&xs, "batchnorm")?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape("batchnorm", "gamma/beta must have one entry per channel"));
        }
        let hw = h * w;
        let m = batch * hw;
        let xd = self.value(x).data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        match running {
            Some((rm, rv)) => {
                if rm.len() != c || rv.len() != c {
                    return Err(Error::shape("batchnorm", "running stats length"));
                }
                mean.copy_from_slice(rm);
                var.copy_from_slice(rv);
            }
            None => {
                if m < 2 {
                    return Err(Error::InvalidArgument(
                        "train-mode batchnorm needs at least two values per channel".into(),
                    ));
                }
                for ch in 0..c {
                    let vals = (0..batch).flat_map(|s| &xd[(s * c + ch) * hw..][..hw]);
                    let mu = vals.clone().sum::<f64>() / m as f64;
                    mean[ch] = mu;
                    var[ch] = vals.map(|v| (v - mu) * (v - mu)).sum::<f64>() / m as f64;
                }
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for s in 0..batch {
            for ch in 0..c {
                let off = (s * c + ch) * hw;
                for i in off..off + hw {
                    xhat[i] = (xd[i] - mean[ch]) * inv_std[ch];
                    out[i] = g[ch] * xhat[i] + bt[ch];
                }
            }
        }
        let t = Tensor::new(xs, out)?;
        let v = self.push_checked(
            "batchnorm",
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: running.is_none(),
            },
            &[x, gamma, beta],
        )?;
        Ok((v, mean, var))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| f(v)).collect();
        Tensor::new(src.shape().to_vec(), data).expect("same shape")
    }

    /// `max(x, 0)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.map(x, |v| v.max(0.0));
        Ok(self.push(t, Op::Relu(x), &[x]))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let t = self.map(x, |v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        });
        Ok(self.push(t, Op::Sigmoid(x), &[x]))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let t = self.map(x, f64::tanh);
        Ok(self.push(t, Op::Tanh(x), &[x]))
    }

    /// Nearest-neighbor upsampling of the two trailing dimensions.
    pub fn upsample_nearest(&mut self, x: Var, scale: usize) -> Result<Var> {
        if scale == 0 {
            return Err(Error::InvalidArgument("upsample scale must be >= 1".into()));
        }
        let xs = self.shape(x).to_vec();
        let (batch, c, h, w) = batch_dims(&xs, "upsample_nearest")?;
        let (oh, ow) = (h * scale, w * scale);
        let src = self.value(x).data();
        let mut out = vec![0.0; batch * c * oh * ow];
        for (plane_in, plane_out) in src.chunks(h * w).zip(out.chunks_mut(oh * ow)) {
            for y in 0..oh {
                for xx in 0..ow {
                    plane_out[y * ow + xx] = plane_in[(y / scale) * w + xx / scale];
                }
            }
        }
        let mut shape = xs;
        let r = shape.len();
        shape[r - 2] = oh;
        shape[r - 1] = ow;
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Upsample { x, scale }, &[x]))
    }

    /// Affine map `x·W + b`. `x` is `[Din]` or `[B, ...]` flattened to
    /// `B×Din`; `w` is `[Din, Dout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let [din, dout] = *self.shape(w) else {
            return Err(Error::shape("linear", format!("weight shape {:?}", self.shape(w))));
        };
        let (batch, flat) = match xs.as_slice() {
            [d] => (1, *d),
            [b, rest @ ..] => (*b, rest.iter().product()),
            [] => return Err(Error::shape("linear", "scalar input")),
        };
        if flat != din {
            return Err(Error::shape(
                "linear",
                format!("input length {flat} does not match Din {din}"),
            ));
        }
        if self.shape(b) != [dout] {
            return Err(Error::shape("linear", format!("bias shape {:?}", self.shape(b))));
        }
        let mut out = vec![0.0; batch * dout];
        for row in out.chunks_mut(dout) {
            row.copy_from_slice(self.value(b).data());
        }
        kernels::gemm(
            batch,
            din,
            dout,
            self.value(x).data(),
            (din, 1),
            self.value(w).data(),
            (dout, 1),
            1.0,
            &mut out,
            (dout, 1),
        );
        let shape = if xs.len() == 1 { vec![dout] } else { vec![batch, dout] };
        let t = Tensor::new(shape, out)?;
        self.push_checked("linear", t, Op::Linear { x, w, b, batch }, &[x, w, b])
    }

    /// Concatenation along the channel axis (dim 0 of `C×H×W`, dim 1 of
    /// `B×C×H×W`).
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (ba, ca, ha, wa) = batch_dims(&sa, "concat_channels")?;
        let (bb, cb, hb, wb) = batch_dims(&sb, "concat_channels")?;
        if sa.len() != sb.len() || ba != bb || ha != hb || wa != wb {
            return Err(Error::shape("concat_channels", format!("{sa:?} vs {sb:?}")));
        }
        let hw = ha * wa;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(da.len() + db.len());
        for s in 0..ba {
            out.extend_from_slice(&da[s * ca * hw..(s + 1) * ca * hw]);
            out.extend_from_slice(&db[s * cb * hw..(s + 1) * cb * hw]);
        }
        let mut shape = sa;
        let cdim = shape.len() - 3;
        shape[cdim] = ca + cb;
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Concat { a, b }, &[a, b]))
    }

    /// `(1/B)·Σ|pred − target|` with the leading dimension as batch for
    /// rank ≥ 2 inputs (B = 1 otherwise).
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let sp = self.shape(pred).to_vec();
        if sp != self.shape(target) {
            return Err(Error::shape(
                "l1_loss",
                format!("{sp:?} vs {:?}", self.shape(target)),
            ));
        }
        let batch = if sp.len() >= 2 { sp[0].max(1) } else { 1 };
        let total: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(p, t)| (p - t).abs())
            .sum();
        let t = Tensor::scalar(total / batch as f64);
        self.push_checked("l1_loss", t, Op::L1 { pred, target, batch }, &[pred, target])
    }

    /// Mean binary cross-entropy of probabilities against 0/1 labels.
    /// Probabilities are clamped to `[1e-7, 1 − 1e-7]`.
    pub fn bce_loss(&mut self, prob: Var, labels: &[f64]) -> Result<Var> {
        let p = self.value(prob).data();
        if p.len() != labels.len() || p.is_empty() {
            return Err(Error::shape(
                "bce_loss",
                format!("{} probabilities vs {} labels", p.len(), labels.len()),
            ));
        }
        let total: f64 = p
            .iter()
            .zip(labels)
            .map(|(&q, &y)| {
                let q = q.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -y * q.ln() - (1.0 - y) * (1.0 - q).ln()
            })
            .sum();
        let t = Tensor::scalar(total / p.len() as f64);
        self.push_checked(
            "bce_loss",
            t,
            Op::Bce {
                prob,
                labels: labels.to_vec(),
            },
            &[prob],
        )
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                name,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push_checked(name, t, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let t = self.map(x, |v| v * c);
        self.push_checked("mul_scalar", t, Op::MulScalar(x, c), &[x])
    }

    /// Scales each channel of `x` (`B×C×H×W`) by `g` (`B×C`).
    pub fn scale_channels(&mut self, x: Var, g: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (batch, c, h, w) = batch_dims(&xs, "scale_channels")?;
        if self.value(g).len() != batch * c {
            return Err(Error::shape(
                "scale_channels",
                format!("gate {:?} for input {xs:?}", self.shape(g)),
            ));
        }
        let hw = h * w;
        let gd = self.value(g).data();
        let mut out = self.value(x).data().to_vec();
        for (i, plane) in out.chunks_mut(hw).enumerate() {
            plane.iter_mut().for_each(|v| *v *= gd[i]);
        }
        let t = Tensor::new(xs, out)?;
        self.push_checked("scale_channels", t, Op::ScaleChannels { x, g }, &[x, g])
    }

    /// Second-order channel descriptor: for each sample, the row means of
    /// the channel covariance `(1/M)·F̄·F̄ᵀ` over the `M = H·W` positions.
    /// Output shape `B×C`.
    pub fn covariance_descriptor(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (batch, c, h, w) = batch_dims(&xs, "covariance_descriptor")?;
        let m = h * w;
        if m < 2 {
            return Err(Error::InvalidArgument(
                "covariance needs at least two spatial positions".into(),
            ));
        }
        let xd = self.value(x).data();
        let mut centered = Vec::with_capacity(xd.len());
        let mut col_sums = vec![0.0; batch * m];
        let mut out = vec![0.0; batch * c];
        let scale = 1.0 / (c * m) as f64;
        for s in 0..batch {
            let cs = center_rows(&xd[s * c * m..], c, m);
            let sums = &mut col_sums[s * m..][..m];
            for row in cs.chunks(m) {
                sums.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
            for (ch, row) in cs.chunks(m).enumerate() {
                out[s * c + ch] = scale * row.iter().zip(sums.iter()).map(|(a, b)| a * b).sum::<f64>();
            }
            centered.extend_from_slice(&cs);
        }
        let t = Tensor::new(vec![batch, c], out)?;
        self.push_checked(
            "covariance_descriptor",
            t,
            Op::CovDescriptor {
                x,
                centered,
                col_sums,
            },
            &[x],
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let t = Tensor::scalar(self.value(x).data().iter().sum());
        self.push_checked("sum", t, Op::Sum(x), &[x])
    }

    pub fn sum_squares(&mut self, x: Var) -> Result<Var> {
        let t = Tensor::scalar(self.value(x).data().iter().map(|v| v * v).sum());
        self.push_checked("sum_squares", t, Op::SumSquares(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    // ----------------------------------------------------------- backward

    fn add_grad(&mut self, v: Var, g: Vec<f64>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(buf) => buf.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            None => node.grad = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Reverse pass from a scalar `loss`. Gradients land on every recorded
    /// node that requires them; use [`Tape::accumulate_into`] to move
    /// parameter gradients into their [`ParamSet`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::StaleTape);
        }
        let shape = self.shape(loss).to_vec();
        if self.value(loss).len() != 1 {
            return Err(Error::NotScalar(shape));
        }
        self.consumed = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.backward_node(i, &g)?;
            let keep = matches!(self.nodes[i].op, Op::Leaf | Op::Param { .. });
            if keep {
                self.nodes[i].grad = Some(g);
            }
            for (v, gv) in contributions {
                self.add_grad(v, gv);
            }
        }
        Ok(())
    }

    /// Convenience: [`Tape::backward`] followed by
    /// [`Tape::accumulate_into`].
    pub fn backward_into(&mut self, loss: Var, params: &mut ParamSet) -> Result<()> {
        self.backward(loss)?;
        self.accumulate_into(params)
    }

    /// Adds the gradients of every parameter of `params` recorded on this
    /// tape into the parameter grad buffers. Parameters of other sets are
    /// untouched.
    pub fn accumulate_into(&self, params: &mut ParamSet) -> Result<()> {
        if !self.consumed {
            return Err(Error::InvalidArgument(
                "accumulate_into called before backward".into(),
            ));
        }
        let uid = params.uid();
        for node in &self.nodes {
            if let (Op::Param { set, id }, Some(g)) = (&node.op, &node.grad) {
                if *set == uid {
                    check_finite("parameter gradient", g)?;
                    params.get_mut(ParamId(*id)).accumulate_grad(g)?;
                }
            }
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, g: &[f64]) -> Result<Vec<(Var, Vec<f64>)>> {
        let node = &self.nodes[i];
        let out = node.value.data();
        let mut res = Vec::new();
        match &node.op {
            Op::Leaf | Op::Param { .. } => {}
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                batch,
            } => {
                let grads = kernels::conv2d_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g,
                    geom,
                    *batch,
                    (self.wants(*x), self.wants(*w), self.wants(*b)),
                );
                res.extend(grads.dx.map(|d| (*x, d)));
                res.extend(grads.dw.map(|d| (*w, d)));
                res.extend(grads.db.map(|d| (*b, d)));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (batch, c, h, w) = batch_dims(node.value.shape(), "batchnorm")?;
                let hw = h * w;
                let m = (batch * hw) as f64;
                let gm = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for s in 0..batch {
                    for ch in 0..c {
                        let off = (s * c + ch) * hw;
                        for k in off..off + hw {
                            dgamma[ch] += g[k] * xhat[k];
                            dbeta[ch] += g[k];
                        }
                    }
                }
                if self.wants(*x) {
                    let mut dx = vec![0.0; g.len()];
                    for s in 0..batch {
                        for ch in 0..c {
                            let off = (s * c + ch) * hw;
                            for k in off..off + hw {
                                dx[k] = if *batch_stats {
                                    // dxhat sums equal gamma-scaled dbeta/dgamma
                                    gm[ch] * inv_std[ch] / m
                                        * (m * g[k] - dbeta[ch] - xhat[k] * dgamma[ch])
                                } else {
                                    gm[ch] * inv_std[ch] * g[k]
                                };
                            }
                        }
                    }
                    res.push((*x, dx));
                }
                res.push((*gamma, dgamma));
                res.push((*beta, dbeta));
            }
            Op::Relu(x) => {
                let xd = self.value(*x).data();
                let d = g
                    .iter()
                    .zip(xd)
                    .map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                res.push((*x, d));
            }
            Op::Sigmoid(x) => {
                let d = g.iter().zip(out).map(|(gv, y)| gv * y * (1.0 - y)).collect();
                res.push((*x, d));
            }
            Op::Tanh(x) => {
                let d = g.iter().zip(out).map(|(gv, y)| gv * (1.0 - y * y)).collect();
                res.push((*x, d));
            }
            Op::Upsample { x, scale } => {
                let xs = self.shape(*x);
                let (_, _, h, w) = batch_dims(xs, "upsample_nearest")?;
                let (oh, ow) = (h * scale, w * scale);
                let mut dx = vec![0.0; self.value(*x).len()];
                for (pin, pout) in dx.chunks_mut(h * w).zip(g.chunks(oh * ow)) {
                    for y in 0..oh {
                        for xx in 0..ow {
                            pin[(y / scale) * w + xx / scale] += pout[y * ow + xx];
                        }
                    }
                }
                res.push((*x, dx));
            }
            Op::Linear { x, w, b, batch } => {
                let [din, dout] = *self.shape(*w) else {
                    unreachable!("validated in forward")
                };
                let xd = self.value(*x).data();
                let wd = self.value(*w).data();
                if self.wants(*x) {
                    let mut dx = vec![0.0; batch * din];
                    kernels::gemm(*batch, dout, din, g, (dout, 1), wd, (1, dout), 0.0, &mut dx, (din, 1));
                    res.push((*x, dx));
                }
                if self.wants(*w) {
                    let mut dw = vec![0.0; din * dout];
                    kernels::gemm(din, *batch, dout, xd, (1, din), g, (dout, 1), 0.0, &mut dw, (dout, 1));
                    res.push((*w, dw));
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; dout];
                    for row in g.chunks(dout) {
                        db.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                    res.push((*b, db));
                }
            }
            Op::Concat { a, b } => {
                let (batch, ca, h, w) = batch_dims(self.shape(*a), "concat_channels")?;
                let (_, cb, _, _) = batch_dims(self.shape(*b), "concat_channels")?;
                let hw = h * w;
                let mut da = Vec::with_capacity(batch * ca * hw);
                let mut db = Vec::with_capacity(batch * cb * hw);
                for chunk in g.chunks((ca + cb) * hw) {
                    da.extend_from_slice(&chunk[..ca * hw]);
                    db.extend_from_slice(&chunk[ca * hw..]);
                }
                res.push((*a, da));
                res.push((*b, db));
            }
            Op::L1 {
                pred,
                target,
                batch,
            } => {
                let scale = g[0] / *batch as f64;
                let d: Vec<f64> = self
                    .value(*pred)
                    .data()
                    .iter()
                    .zip(self.value(*target).data())
                    .map(|(p, t)| {
                        let diff = p - t;
                        if diff > 0.0 {
                            scale
                        } else if diff < 0.0 {
                            -scale
                        } else {
                            0.0
                        }
                    })
                    .collect();
                if self.wants(*target) {
                    res.push((*target, d.iter().map(|v| -v).collect()));
                }
                res.push((*pred, d));
            }
            Op::Bce { prob, labels } => {
                let n = labels.len() as f64;
                let d = self
                    .value(*prob)
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&q, &y)| {
                        if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&q) {
                            0.0
                        } else {
                            g[0] * (-y / q + (1.0 - y) / (1.0 - q)) / n
                        }
                    })
                    .collect();
                res.push((*prob, d));
            }
            Op::Add(a, b) => {
                res.push((*a, g.to_vec()));
                res.push((*b, g.to_vec()));
            }
            Op::Sub(a, b) => {
                res.push((*a, g.to_vec()));
                res.push((*b, g.iter().map(|v| -v).collect()));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    res.push((*a, g.iter().zip(bd).map(|(x, y)| x * y).collect()));
                }
                if self.wants(*b) {
                    res.push((*b, g.iter().zip(ad).map(|(x, y)| x * y).collect()));
                }
            }
            Op::MulScalar(x, c) => res.push((*x, g.iter().map(|v| v * c).collect())),
            Op::ScaleChannels { x, g: gate } => {
                let (_, _, h, w) = batch_dims(self.shape(*x), "scale_channels")?;
                let hw = h * w;
                let xd = self.value(*x).data();
                let gd = self.value(*gate).data();
                if self.wants(*x) {
                    let mut dx = g.to_vec();
                    for (k, plane) in dx.chunks_mut(hw).enumerate() {
                        plane.iter_mut().for_each(|v| *v *= gd[k]);
                    }
                    res.push((*x, dx));
                }
                if self.wants(*gate) {
                    let dg = g
                        .chunks(hw)
                        .zip(xd.chunks(hw))
                        .map(|(gp, xp)| gp.iter().zip(xp).map(|(a, b)| a * b).sum())
                        .collect();
                    res.push((*gate, dg));
                }
            }
            Op::CovDescriptor {
                x,
                centered,
                col_sums,
            } => {
                let (batch, c, h, w) = batch_dims(self.shape(*x), "covariance_descriptor")?;
                let m = h * w;
                let scale = 1.0 / (c * m) as f64;
                let mut dx = vec![0.0; centered.len()];
                for s in 0..batch {
                    let fs = &centered[s * c * m..][..c * m];
                    let sums = &col_sums[s * m..][..m];
                    let gz = &g[s * c..][..c];
                    // Σ_c dz_c·F̄_cm, shared by every channel row
                    let mut mix = vec![0.0; m];
                    for (ch, row) in fs.chunks(m).enumerate() {
                        mix.iter_mut().zip(row).for_each(|(a, v)| *a += gz[ch] * v);
                    }
                    let ds = &mut dx[s * c * m..][..c * m];
                    for (ch, row) in ds.chunks_mut(m).enumerate() {
                        for k in 0..m {
                            row[k] = scale * (gz[ch] * sums[k] + mix[k]);
                        }
                        let mean = row.iter().sum::<f64>() / m as f64;
                        row.iter_mut().for_each(|v| *v -= mean);
                    }
                }
                res.push((*x, dx));
            }
            Op::Sum(x) => res.push((*x, vec![g[0]; self.value(*x).len()])),
            Op::SumSquares(x) => {
                res.push((*x, self.value(*x).data().iter().map(|v| 2.0 * v * g[0]).collect()))
            }
            Op::Reshape(x) => res.push((*x, g.to_vec())),
        }
        Ok(res)
    }
}

pub(crate) const BCE_CLAMP: f64 = 1e-7;
