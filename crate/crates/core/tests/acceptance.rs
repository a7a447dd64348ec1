//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.
//!
//! Criteria 5 and 6 train networks for up to an hour each. Trained models
//! are cached under `target/tmp/acceptance` together with their measured
//! training time and the config they were trained with; a config change
//! retrains. Set `ODL_ACCEPTANCE_RETRAIN=1` to ignore the cache. Numeric
//! arguments select criteria, e.g. `cargo test --test acceptance -- 1 4`.

mod common;

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;

use odl_core::ccrnet::{Brl, CcrnetDataset, CcrnetModel, GanBatch, GanTrainOptions, GanTrainer};
use odl_core::cenet::{CenetModel, Soca};
use odl_core::channel::TapProfile;
use odl_core::equalize::{bit_errors, detect_bits, rzf_detect, symbol_mse, zf_detect};
use odl_core::harness::dataset::{write_dataset, DatasetReader};
use odl_core::harness::training::{build_ccrnet_dataset, split_seed, train_ccrnet, train_cenet, GAN_STREAM};
use odl_core::harness::{
    frame_seed, run_ber_sweep, run_mse_sweep, BerScheme, ExperimentConfig, Link, ModelBank, MseScheme, Scenario,
    SweepResult,
};
use odl_core::numerics::gradcheck::{check_gradients, GradCheck, GradReport};
use odl_core::numerics::{BatchNorm2d, Conv2d, Init, Linear, Mode, ParamSet, Tape, Tensor, Var};
use odl_core::ofdm::{OfdmConfig, QamConstellation};
use odl_core::pilots::{
    channel_mse, estimate_correlation, ls_estimate, mmse_estimate, GridInterpolator, InterpKind, PilotObservation,
};
use odl_core::rng::rng_from;

type Res<T> = anyhow::Result<T>;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

/// Fails the verdict when the wall time exceeds the budget.
fn within(v: Verdict, started: Instant, budget_s: f64) -> Verdict {
    let t = started.elapsed().as_secs_f64();
    let ok = t <= budget_s;
    verdict(v.passed && ok, format!("{}; {t:.1} s (budget {budget_s:.0} s)", v.detail))
}

// ---------------------------------------------------------------- criterion 1

const GRAD_TOL: f64 = 1e-4;

fn random(shape: &[usize], seed: u64, scale: f64) -> Tensor {
    let mut rng = rng_from(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-scale..scale))
}

/// Random values bounded away from zero, so relu and |·| kinks stay more
/// than a finite-difference step away.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = rng_from(seed);
    Tensor::from_fn(shape.to_vec(), |_| {
        let v: f64 = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) { v } else { -v }
    })
}

/// Projects `y` on fixed random weights so every output entry matters.
fn project(t: &mut Tape, y: Var, seed: u64) -> odl_core::Result<Var> {
    let w = random(t.shape(y), seed, 1.0);
    let c = t.constant(w);
    let m = t.mul(y, c)?;
    t.sum(m)
}

fn gradcheck<S>(
    state: &mut S,
    params: impl Fn(&mut S) -> &mut ParamSet,
    loss: impl FnMut(&mut S, &mut Tape) -> odl_core::Result<Var>,
) -> Res<GradReport> {
    Ok(check_gradients(state, params, loss, GradCheck::default())?)
}

fn conv_loops(x: &Tensor, k: &Tensor, b: &[f64], stride: usize, pad: usize) -> Vec<f64> {
    let (c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (kh, kw, c_out) = (k.shape()[0], k.shape()[1], k.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; c_out * oh * ow];
    for co in 0..c_out {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = b[co];
                for ci in 0..c_in {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += x.data()[(ci * h + iy as usize) * w + ix as usize]
                                * k.data()[((ky * kw + kx) * c_in + ci) * c_out + co];
                        }
                    }
                }
                out[(co * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

fn conv_oracle_diff() -> Res<f64> {
    let mut worst: f64 = 0.0;
    let shapes = [(2, 72, 28, 8, 1), (8, 36, 14, 16, 2), (3, 9, 7, 5, 1), (4, 18, 7, 6, 2), (2, 5, 5, 3, 1)];
    for (i, &(c_in, h, w, c_out, stride)) in shapes.iter().enumerate() {
        let s = 100 + 3 * i as u64;
        let x = random(&[c_in, h, w], s, 1.0);
        let k = random(&[3, 3, c_in, c_out], s + 1, 1.0);
        let b = random(&[c_out], s + 2, 1.0);
        for pad in [0, 1] {
            let mut t = Tape::new();
            let (xv, kv, bv) = (t.constant(x.clone()), t.constant(k.clone()), t.constant(b.clone()));
            let y = t.conv2d(xv, kv, bv, stride, pad)?;
            for (a, e) in t.value(y).data().iter().zip(conv_loops(&x, &k, b.data(), stride, pad)) {
                worst = worst.max((a - e).abs());
            }
        }
    }
    Ok(worst)
}

struct Layered {
    ps: ParamSet,
    conv: Conv2d,
    bn: BatchNorm2d,
    conv2: Conv2d,
    fc: Linear,
    x: Tensor,
}

impl Layered {
    fn new(seed: u64) -> Self {
        let mut rng = rng_from(seed);
        let mut ps = ParamSet::new();
        let conv = Conv2d::new(&mut ps, "conv", 2, 4, 3, 1, Init::FanIn, &mut rng);
        let bn = BatchNorm2d::new(&mut ps, "bn", 4);
        let conv2 = Conv2d::new(&mut ps, "conv2", 4, 3, 3, 2, Init::FanIn, &mut rng);
        let fc = Linear::new(&mut ps, "fc", 3 * 3 * 3, 2, Init::FanIn, &mut rng);
        for v in ps.get_mut(bn.gamma).data_mut() {
            *v = 1.0 + rng.random_range(-0.3..0.3);
        }
        for v in ps.get_mut(bn.beta).data_mut() {
            *v = rng.random_range(-0.3..0.3);
        }
        let x = random(&[2, 2, 6, 5], seed + 1, 1.0);
        Self { ps, conv, bn, conv2, fc, x }
    }

    fn pre_relu(&mut self, t: &mut Tape) -> odl_core::Result<Var> {
        let x = t.constant(self.x.clone());
        let h = self.conv.forward(t, &self.ps, x)?;
        self.bn.forward(t, &self.ps, h, Mode::Train)
    }

    fn kink_margin(&mut self) -> f64 {
        let mut t = Tape::new();
        let h = self.pre_relu(&mut t).expect("forward");
        t.value(h).data().iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min)
    }

    /// conv → batchnorm → relu → strided conv → tanh → linear → sigmoid → BCE.
    fn loss(&mut self, t: &mut Tape) -> odl_core::Result<Var> {
        let h = self.pre_relu(t)?;
        let h = t.relu(h)?;
        let h = self.conv2.forward(t, &self.ps, h)?;
        let h = t.tanh(h)?;
        let h = self.fc.forward(t, &self.ps, h)?;
        let p = t.sigmoid(h)?;
        t.bce_loss(p, &[1.0, 0.0, 0.0, 1.0])
    }
}

fn layer_reports() -> Res<Vec<(&'static str, GradReport)>> {
    let mut out = Vec::new();
    let mut rng = rng_from(200);

    for stride in [1usize, 2] {
        let mut ps = ParamSet::new();
        let x = ps.add("x", random(&[2, 3, 6, 5], 201, 1.0));
        let conv = Conv2d::new(&mut ps, "conv", 3, 4, 3, stride, Init::FanIn, &mut rng);
        let r = gradcheck(&mut ps, |p| p, |p, t| {
            let xv = t.param(p, x);
            let y = conv.forward(t, p, xv)?;
            project(t, y, 202)
        })?;
        out.push((if stride == 1 { "conv2d" } else { "conv2d-stride2" }, r));
    }

    for mode in [Mode::Train, Mode::Eval] {
        let mut ps = ParamSet::new();
        let x = ps.add("x", random(&[3, 2, 4, 5], 203, 1.0));
        let mut bn = BatchNorm2d::new(&mut ps, "bn", 2);
        ps.get_mut(bn.gamma).data_mut().copy_from_slice(&[1.3, 0.7]);
        ps.get_mut(bn.beta).data_mut().copy_from_slice(&[0.2, -0.1]);
        bn.running_mean = vec![0.1, -0.2];
        bn.running_var = vec![0.8, 1.5];
        let mut state = (ps, bn);
        let r = gradcheck(&mut state, |s| &mut s.0, |s, t| {
            let xv = t.param(&s.0, x);
            let y = s.1.forward(t, &s.0, xv, mode)?;
            project(t, y, 204)
        })?;
        out.push((if mode == Mode::Train { "batchnorm-train" } else { "batchnorm-eval" }, r));
    }

    type Unary = fn(&mut Tape, Var) -> odl_core::Result<Var>;
    let unary: [(&'static str, Unary); 4] = [
        ("relu", |t, x| t.relu(x)),
        ("tanh", |t, x| t.tanh(x)),
        ("sigmoid", |t, x| t.sigmoid(x)),
        ("upsample", |t, x| t.upsample_nearest(x, 2)),
    ];
    for (i, (name, f)) in unary.into_iter().enumerate() {
        let mut ps = ParamSet::new();
        let x = ps.add("x", away_from_zero(&[2, 2, 3, 4], 210 + i as u64));
        let r = gradcheck(&mut ps, |p| p, |p, t| {
            let xv = t.param(p, x);
            let y = f(t, xv)?;
            project(t, y, 220 + i as u64)
        })?;
        out.push((name, r));
    }

    {
        let mut ps = ParamSet::new();
        let x = ps.add("x", random(&[3, 2, 2, 3], 230, 1.0));
        let fc = Linear::new(&mut ps, "fc", 12, 5, Init::FanIn, &mut rng);
        let r = gradcheck(&mut ps, |p| p, |p, t| {
            let xv = t.param(p, x);
            let y = fc.forward(t, p, xv)?;
            project(t, y, 231)
        })?;
        out.push(("linear", r));
    }

    {
        let mut ps = ParamSet::new();
        let a = ps.add("a", random(&[2, 2, 3, 4], 232, 1.0));
        let b = ps.add("b", random(&[2, 3, 3, 4], 233, 1.0));
        let c = ps.add("c", random(&[2, 5, 3, 4], 234, 1.0));
        let r = gradcheck(&mut ps, |p| p, |p, t| {
            let (av, bv, cv) = (t.param(p, a), t.param(p, b), t.param(p, c));
            let y = t.concat_channels(av, bv)?;
            let y = t.mul(y, cv)?;
            project(t, y, 235)
        })?;
        out.push(("concat-hadamard", r));
    }

    {
        let mut ps = ParamSet::new();
        let x = ps.add("x", random(&[2, 8, 4, 3], 236, 1.0));
        let soca = Soca::new(&mut ps, "soca", 8, 2, &mut rng);
        let r = gradcheck(&mut ps, |p| p, |p, t| {
            let xv = t.param(p, x);
            let y = soca.forward(t, p, xv)?;
            project(t, y, 237)
        })?;
        out.push(("covariance-attention", r));
    }

    {
        let mut ps = ParamSet::new();
        let u = ps.add("u", random(&[2, 6, 4, 3], 238, 1.0));
        let v = ps.add("v", random(&[2, 6, 4, 3], 239, 1.0));
        let brl = Brl::new(&mut ps, "brl", 6, &mut rng);
        let r = gradcheck(&mut ps, |p| p, |p, t| {
            let (uv, vv) = (t.param(p, u), t.param(p, v));
            let y = brl.forward(t, p, uv, vv)?;
            project(t, y, 240)
        })?;
        out.push(("bilinear-fusion", r));
    }

    {
        let mut ps = ParamSet::new();
        let target = random(&[2, 3, 4], 241, 1.0);
        // prediction = target + offset with |offset| ≥ 0.05
        let pred = Tensor::new(
            vec![2, 3, 4],
            target.data().iter().zip(away_from_zero(&[24], 242).data()).map(|(a, b)| a + b).collect(),
        )?;
        let x = ps.add("x", pred);
        let r = gradcheck(&mut ps, |p| p, |p, t| {
            let xv = t.param(p, x);
            let c = t.constant(target.clone());
            t.l1_loss(xv, c)
        })?;
        out.push(("l1-loss", r));
    }

    {
        let mut ps = ParamSet::new();
        let mut g = rng_from(243);
        let x = ps.add("x", Tensor::from_fn(vec![4, 1], |_| g.random_range(0.1..0.9)));
        let r = gradcheck(&mut ps, |p| p, |p, t| {
            let xv = t.param(p, x);
            t.bce_loss(xv, &[1.0, 0.0, 1.0, 0.0])
        })?;
        out.push(("bce-loss", r));
    }

    let mut net = (300..)
        .map(Layered::new)
        .find_map(|mut n| (n.kink_margin() > 1e-2).then_some(n))
        .expect("a seed with relu inputs away from zero");
    let r = gradcheck(&mut net, |n| &mut n.ps, |n, t| n.loss(t))?;
    out.push(("composite", r));
    Ok(out)
}

fn criterion_1() -> Res<Verdict> {
    let started = Instant::now();
    let conv = conv_oracle_diff()?;
    let reports = layer_reports()?;
    let mut failed = Vec::new();
    let mut worst: f64 = 0.0;
    for (name, r) in &reports {
        worst = worst.max(r.max_rel_err);
        if !r.passes(GRAD_TOL) {
            failed.push(format!("{name} ({:.2e} at {})", r.max_rel_err, r.worst_param));
        }
    }
    let mut detail = format!(
        "{} gradchecks, worst rel err {worst:.2e}; conv2d vs loops {conv:.2e}",
        reports.len()
    );
    if !failed.is_empty() {
        let _ = write!(detail, "; failing: {}", failed.join(", "));
    }
    Ok(within(verdict(failed.is_empty() && conv < 1e-12, detail), started, 60.0))
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2() -> Res<Verdict> {
    let started = Instant::now();
    let link = Link::new(Scenario::VehA, OfdmConfig::default())?;
    let p = &link.pattern;
    let frames: Vec<_> = (0..1000u64).map(|i| link.frame(frame_seed(21, i), f64::INFINITY)).collect();
    let corr = estimate_correlation(frames.iter().take(500).map(|f| &f.h), p)?;
    let (mut ls_err, mut rzf_diff, mut mmse_diff): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut zf_errors = 0usize;
    for f in &frames {
        let obs = PilotObservation::from_grid(&f.y, p, 0.0);
        let ls = ls_estimate(&obs, p)?;
        for (e, h) in ls.iter().zip(p.gather(&f.h)) {
            ls_err = ls_err.max((e - h).norm());
        }
        let zf = zf_detect(&f.y, &f.h)?;
        zf_errors += bit_errors(&f.bits, &detect_bits(&zf, p, &link.qam))?;
        let rzf = rzf_detect(&f.y, &f.h, 0.0)?;
        for (a, b) in rzf.as_slice().iter().zip(zf.as_slice()) {
            rzf_diff = rzf_diff.max((a - b).norm());
        }
        for (a, b) in mmse_estimate(&obs, p, &corr, 0.0)?.iter().zip(&ls) {
            mmse_diff = mmse_diff.max((a - b).norm());
        }
    }
    let mut rng = rng_from(22);
    let mut qam_ok = true;
    for order in [4usize, 16, 64, 256] {
        let q = QamConstellation::new(order)?;
        let bits: Vec<u8> = (0..q.bits_per_symbol() * 10_000).map(|_| rng.random_range(0..2u8)).collect();
        qam_ok &= q.demodulate(&q.modulate(&bits)?) == bits;
    }
    let passed = ls_err < 1e-12 && zf_errors == 0 && rzf_diff == 0.0 && mmse_diff < 1e-12 && qam_ok;
    let detail = format!(
        "LS max err {ls_err:.1e}, ZF bit errors {zf_errors} over 1000 frames, RZF(0)-ZF {rzf_diff:.1e}, \
         MMSE(0)-LS {mmse_diff:.1e}, QAM round trip {}",
        if qam_ok { "lossless" } else { "LOSSY" }
    );
    Ok(within(verdict(passed, detail), started, 120.0))
}

// ---------------------------------------------------------------- criterion 3

fn criterion_3() -> Res<Verdict> {
    let started = Instant::now();
    let mut passed = true;
    let mut parts = Vec::new();
    for (profile, seed) in [(TapProfile::veh_a(), 31), (TapProfile::ped_a(), 32)] {
        let s = common::collect_stats(&profile, 10_000, seed);
        let d = common::deviation(&profile, &s);
        passed &= d.tap_db < 0.2 && d.time < 0.05 && d.freq < 0.05;
        parts.push(format!(
            "{}: tap {:.3} dB, time {:.4}, freq {:.4}",
            profile.name, d.tap_db, d.time, d.freq
        ));
    }
    Ok(within(verdict(passed, format!("10^4 draws each; {}", parts.join("; "))), started, 300.0))
}

// ---------------------------------------------------------------- criterion 4

/// Largest rise between neighbouring SNR points in units of the combined
/// standard error (negative when strictly decreasing).
fn worst_rise(r: &SweepResult, scheme: &str) -> f64 {
    r.curve(scheme)
        .windows(2)
        .map(|w| (w[1].value - w[0].value) / (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt().max(1e-300))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn criterion_4() -> Res<Verdict> {
    let started = Instant::now();
    let cfg = ExperimentConfig {
        frames: 2000,
        seed: 41,
        ..ExperimentConfig::default()
    };
    let bank = ModelBank::default();
    let mse = run_mse_sweep(&cfg, &[MseScheme::LsGi, MseScheme::MmseGi, MseScheme::LsLinear], &bank)?;
    let bers = run_ber_sweep(&cfg, &[BerScheme::LsZf, BerScheme::PerfectZf], &bank)?;
    let mut passed = true;
    let mut notes = Vec::new();

    let (ls, mmse) = (mse.curve("LS+GI"), mse.curve("MMSE+GI"));
    let ordered = ls.iter().zip(&mmse).all(|(a, b)| b.value <= a.value);
    let margin = 1.0 - mmse[0].value / ls[0].value;
    passed &= ordered && margin >= 0.05;
    notes.push(format!(
        "MMSE<=LS at all SNR: {ordered}, margin at 10 dB {:.1}%",
        100.0 * margin
    ));

    let link = Link::from_experiment(&cfg)?;
    let gi = GridInterpolator::new(&link.pattern, InterpKind::Gaussian)?;
    let (mut zf, mut rzf, mut zf_ls, mut rzf_ls) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..2000 {
        let f = link.frame(frame_seed(42, i), 10.0);
        zf += symbol_mse(&zf_detect(&f.y, &f.h)?, &f.x, &link.pattern)?;
        rzf += symbol_mse(&rzf_detect(&f.y, &f.h, f.noise_var)?, &f.x, &link.pattern)?;
        let ls = ls_estimate(&PilotObservation::from_grid(&f.y, &link.pattern, f.noise_var), &link.pattern)?;
        let h = gi.apply(&ls)?;
        zf_ls += symbol_mse(&zf_detect(&f.y, &h)?, &f.x, &link.pattern)?;
        rzf_ls += symbol_mse(&rzf_detect(&f.y, &h, f.noise_var)?, &f.x, &link.pattern)?;
    }
    passed &= rzf <= zf && rzf_ls <= zf_ls;
    notes.push(format!(
        "symbol MSE at 10 dB RZF {:.3e} vs ZF {:.3e} (perfect CSI), {:.3e} vs {:.3e} (LS+GI)",
        rzf / 2000.0,
        zf / 2000.0,
        rzf_ls / 2000.0,
        zf_ls / 2000.0
    ));

    let mut rises = Vec::new();
    for (r, s) in [(&mse, "LS+GI"), (&mse, "MMSE+GI"), (&mse, "LS+LI"), (&bers, "LS+ZF"), (&bers, "Perfect+ZF")] {
        let w = worst_rise(r, s);
        passed &= w <= 2.0;
        rises.push(format!("{s} {w:.1}"));
    }
    notes.push(format!("worst rise in std errs: {}", rises.join(", ")));
    Ok(within(verdict(passed, notes.join("; ")), started, 600.0))
}

// ---------------------------------------------------------- model training

fn cache_dir() -> PathBuf {
    let d = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&d).expect("cache directory");
    d
}

fn retrain() -> bool {
    std::env::var_os("ODL_ACCEPTANCE_RETRAIN").is_some()
}

/// A trained model plus how it came about.
struct Trained<M> {
    model: M,
    seconds: f64,
    cached: bool,
    note: String,
}

/// Loads `{stem}.odlm` when its sidecar records the same config, otherwise
/// runs `train` and writes both. The sidecar holds the training seconds, a
/// one-line note and the config text.
fn cached<M>(
    stem: &str,
    cfg: &ExperimentConfig,
    load: impl Fn(&std::path::Path) -> odl_core::Result<M>,
    save: impl Fn(&M, &std::path::Path) -> odl_core::Result<()>,
    train: impl FnOnce() -> Res<(M, String)>,
) -> Res<Trained<M>> {
    let dir = cache_dir();
    let (model_path, meta_path) = (dir.join(format!("{stem}.odlm")), dir.join(format!("{stem}.meta")));
    let key = cfg.to_toml_string();
    if !retrain() {
        if let Ok(meta) = std::fs::read_to_string(&meta_path) {
            let mut parts = meta.splitn(3, '\n');
            let seconds = parts.next().and_then(|s| s.parse::<f64>().ok());
            let note = parts.next().map(str::to_string);
            if let (Some(seconds), Some(note), Some(k)) = (seconds, note, parts.next()) {
                if k == key {
                    if let Ok(model) = load(&model_path) {
                        return Ok(Trained { model, seconds, cached: true, note });
                    }
                }
            }
        }
    }
    let started = Instant::now();
    let (model, note) = train()?;
    let seconds = started.elapsed().as_secs_f64();
    save(&model, &model_path)?;
    std::fs::write(&meta_path, format!("{seconds}\n{note}\n{key}"))?;
    Ok(Trained { model, seconds, cached: false, note })
}

const CENET_BUDGET_S: f64 = 1800.0;
const GAN_BUDGET_S: f64 = 3600.0;
const TRAIN_SEED: u64 = 5;
const EVAL_SEED: u64 = 55;

fn cenet_config(snr_mix: &[f64]) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed: TRAIN_SEED,
        train_samples: 5000,
        val_samples: 200,
        train_snr_db: snr_mix.to_vec(),
        ..ExperimentConfig::default()
    };
    cfg.cenet_train.epochs = 14;
    cfg.cenet_train.lr = 2e-3;
    cfg.cenet_train.lr_decay = 0.85;
    cfg
}

fn trained_cenet(name: &str, snr_mix: &[f64]) -> Res<Trained<CenetModel>> {
    let cfg = cenet_config(snr_mix);
    cached(&format!("cenet_{name}"), &cfg, |p| CenetModel::load(p), |m, p| m.save(p), || {
        let (model, log) = train_cenet(&cfg, snr_mix)?;
        let last = log.epochs.last().map(|e| e.val_mse).unwrap_or(f64::NAN);
        Ok((model, format!("final val MSE {last:.3e}")))
    })
}

fn training_note<M>(t: &Trained<M>, budget_s: f64) -> (bool, String) {
    let ok = t.seconds <= budget_s;
    let how = if t.cached { "cached run" } else { "this run" };
    (ok, format!("trained in {:.0} s ({how}, budget {budget_s:.0} s), {}", t.seconds, t.note))
}

// ---------------------------------------------------------------- criterion 5

/// Mean and standard error of paired per-frame differences.
fn paired(diffs: &[f64]) -> (f64, f64) {
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

const HELD_OUT: u64 = 1000;

/// Per-frame channel MSE of LS+GI and of each model over held-out frames.
fn per_frame_mse(link: &Link, models: &[&CenetModel], snr: f64) -> Res<(Vec<f64>, Vec<Vec<f64>>)> {
    let gi = GridInterpolator::new(&link.pattern, InterpKind::Gaussian)?;
    let frames: Vec<_> = (0..HELD_OUT).map(|i| link.frame(frame_seed(EVAL_SEED, i), snr)).collect();
    let ls: Vec<Vec<Complex64>> = frames
        .iter()
        .map(|f| ls_estimate(&PilotObservation::from_grid(&f.y, &link.pattern, f.noise_var), &link.pattern))
        .collect::<odl_core::Result<_>>()?;
    let base = ls
        .iter()
        .zip(&frames)
        .map(|(v, f)| channel_mse(&gi.apply(v)?, &f.h))
        .collect::<odl_core::Result<_>>()?;
    let mut per_model = Vec::new();
    for m in models {
        let mut v = Vec::with_capacity(frames.len());
        for (chunk, fs) in ls.chunks(16).zip(frames.chunks(16)) {
            for (e, f) in m.estimate_batch(chunk, &link.pattern)?.iter().zip(fs) {
                v.push(channel_mse(e, &f.h)?);
            }
        }
        per_model.push(v);
    }
    Ok((base, per_model))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_5(mixed: &Trained<CenetModel>) -> Res<Verdict> {
    let single = trained_cenet("snr22", &[22.0])?;
    let (ok_m, note_m) = training_note(mixed, CENET_BUDGET_S);
    let (ok_s, note_s) = training_note(&single, CENET_BUDGET_S);
    let mut passed = ok_m && ok_s;
    let mut notes = vec![format!("mixed {note_m}"), format!("22 dB {note_s}")];
    let link = Link::new(Scenario::VehA, OfdmConfig::default())?;
    for snr in [10.0, 20.0, 30.0] {
        let (ls, m) = per_frame_mse(&link, &[&mixed.model], snr)?;
        let diffs: Vec<f64> = m[0].iter().zip(&ls).map(|(a, b)| a - b).collect();
        let (d, se) = paired(&diffs);
        let ok = d + 2.0 * se < 0.0;
        passed &= ok;
        notes.push(format!(
            "{snr} dB CENet {:.3e} vs LS+GI {:.3e} (diff {d:.2e} ± {se:.1e}) {}",
            mean(&m[0]),
            mean(&ls),
            if ok { "ok" } else { "NOT BETTER" }
        ));
    }
    let (_, m) = per_frame_mse(&link, &[&mixed.model, &single.model], 40.0)?;
    let diffs: Vec<f64> = m[0].iter().zip(&m[1]).map(|(a, b)| a - b).collect();
    let (d, se) = paired(&diffs);
    let ok = d + 2.0 * se < 0.0;
    passed &= ok;
    notes.push(format!(
        "40 dB mixed {:.3e} vs 22 dB model {:.3e} (diff {d:.2e} ± {se:.1e}) {}",
        mean(&m[0]),
        mean(&m[1]),
        if ok { "ok" } else { "NOT BETTER" }
    ));
    Ok(verdict(passed, format!("{HELD_OUT} held-out frames per SNR; {}", notes.join("; "))))
}

// ---------------------------------------------------------------- criterion 6

fn gan_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed: TRAIN_SEED,
        modulation: 16,
        train_samples: 4000,
        train_snr_db: vec![20.0],
        ..ExperimentConfig::default()
    };
    cfg.ccrnet_train = GanTrainOptions {
        steps: 3000,
        batch: 16,
        ..GanTrainOptions::default()
    };
    cfg
}

/// 8 fixed triples, 2000 steps at λ = 100; returns the initial and final
/// reconstruction losses and whether every loss stayed finite.
fn overfit_eight() -> Res<(f64, f64, bool)> {
    let cfg = gan_config();
    let link = Link::from_experiment(&cfg)?;
    let mut model = CcrnetModel::new(cfg.ccrnet, 8)?;
    let data: CcrnetDataset = build_ccrnet_dataset(&link, &model, None, 8, &[20.0], split_seed(8, GAN_STREAM))?;
    model.fit_scales(&data);
    let opts = GanTrainOptions {
        steps: 2000,
        batch: 8,
        lambda_rec: 100.0,
        ..GanTrainOptions::default()
    };
    let mut trainer = GanTrainer::new(&model, opts)?;
    let idx: Vec<usize> = (0..8).collect();
    let batch: GanBatch = data.batch(&model, &idx)?;
    let (mut first, mut last, mut finite) = (f64::NAN, f64::NAN, true);
    for s in 0..opts.steps {
        let l = trainer.train_step(&mut model, &batch)?;
        finite &= l.is_finite();
        if s == 0 {
            first = l.g_rec;
        }
        last = l.g_rec;
    }
    Ok((first, last, finite))
}

fn criterion_6(cenet: &Trained<CenetModel>) -> Res<Verdict> {
    let cfg = gan_config();
    let mut finite_all = true;
    let gan = cached("ccrnet", &cfg, |p| CcrnetModel::load(p), |m, p| m.save(p), || {
        let (model, log) = train_ccrnet(&cfg, Some(&cenet.model), &cfg.train_snr_db)?;
        let finite = log.steps.iter().all(|(_, l)| l.is_finite());
        let last = log.steps.last().map(|(_, l)| *l).expect("at least one step");
        Ok((
            model,
            format!(
                "losses finite {finite}, final d {:.3} g_adv {:.3} g_rec {:.3e}",
                last.d_loss, last.g_adv, last.g_rec
            ),
        ))
    })?;
    finite_all &= gan.note.contains("losses finite true");
    let (ok_t, note_t) = training_note(&gan, GAN_BUDGET_S);

    let (first, last, finite) = overfit_eight()?;
    finite_all &= finite;
    let overfit_ok = last < 0.1 * first;

    let mut eval = ExperimentConfig {
        frames: HELD_OUT as usize,
        seed: EVAL_SEED,
        modulation: 16,
        snr_db: vec![20.0],
        ..ExperimentConfig::default()
    };
    eval.ber_cenet = "mixed".into();
    let mut bank = ModelBank::default();
    bank.cenet.insert("mixed".into(), cenet.model.clone());
    bank.ccrnet = Some(gan.model);
    let r = run_ber_sweep(&eval, &[BerScheme::CenetZf, BerScheme::CenetCcrnet], &bank)?;
    let zf = r.get("CENet+ZF", 20.0).expect("row");
    let cc = r.get("CENet+CCRNet", 20.0).expect("row");
    let ber_ok = cc.value <= zf.value;
    let detail = format!(
        "GAN {note_t}; overfit g_rec {first:.3e} -> {last:.3e} ({:.1}%); 20 dB 16-QAM BER CENet+CCRNet \
         {:.3e} ± {:.1e} vs CENet+ZF {:.3e} ± {:.1e} over {HELD_OUT} frames",
        100.0 * last / first,
        cc.value,
        cc.stderr,
        zf.value,
        zf.stderr
    );
    Ok(verdict(ok_t && finite_all && overfit_ok && ber_ok, detail))
}

// ---------------------------------------------------------------- criterion 7

fn criterion_7() -> Res<Verdict> {
    let a = odl_core::selftest::run_selftest();
    let b = odl_core::selftest::run_selftest();
    let selftest_same = a.to_text() == b.to_text() && a.passed();

    let cfg = ExperimentConfig {
        frames: 50,
        seed: 71,
        correlation_frames: 300,
        ..ExperimentConfig::default()
    };
    let bank = ModelBank::default();
    let mse = |c: &ExperimentConfig| run_mse_sweep(c, &[MseScheme::LsGi, MseScheme::MmseGi], &bank);
    let bers = |c: &ExperimentConfig| run_ber_sweep(c, &[BerScheme::LsZf, BerScheme::PerfectZf], &bank);
    let sweeps_same = mse(&cfg)?.to_csv_string() == mse(&cfg)?.to_csv_string()
        && bers(&cfg)?.to_csv_string() == bers(&cfg)?.to_csv_string();

    let link = Link::new(Scenario::VehA, OfdmConfig::default())?;
    let mut file_a = Vec::new();
    let mut file_b = Vec::new();
    write_dataset(&mut file_a, &link, 1000, &[10.0, 20.0, 30.0], 72)?;
    write_dataset(&mut file_b, &link, 1000, &[10.0, 20.0, 30.0], 72)?;
    let files_same = file_a == file_b;
    let reader = DatasetReader::new(std::io::Cursor::new(file_a))?;
    let (mut checked, mut regenerated) = (0, 0);
    for rec in reader {
        let rec = rec?;
        checked += 1;
        if rec.regenerate_y(&link)? == rec.y {
            regenerated += 1;
        }
    }
    let passed = selftest_same && sweeps_same && files_same && checked == 1000 && regenerated == 1000;
    Ok(verdict(
        passed,
        format!(
            "selftest identical {selftest_same}, sweeps identical {sweeps_same}, dataset bytes identical \
             {files_same}, {regenerated}/{checked} records regenerate"
        ),
    ))
}

// ------------------------------------------------------------------- driver

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: u32| selected.is_empty() || selected.contains(&n);
    let mut all_passed = true;
    let mut report = |n: u32, name: &str, v: Res<Verdict>| {
        let v = v.unwrap_or_else(|e| verdict(false, format!("error: {e:#}")));
        all_passed &= v.passed;
        println!("{} criterion {n} ({name}): {}", if v.passed { "PASS" } else { "FAIL" }, v.detail);
    };
    if wanted(1) {
        report(1, "autodiff", criterion_1());
    }
    if wanted(2) {
        report(2, "classical identities", criterion_2());
    }
    if wanted(3) {
        report(3, "channel statistics", criterion_3());
    }
    if wanted(4) {
        report(4, "classical orderings", criterion_4());
    }
    if wanted(5) || wanted(6) {
        match trained_cenet("mixed", &[10.0, 20.0, 30.0]) {
            Ok(mixed) => {
                if wanted(5) {
                    report(5, "CENet", criterion_5(&mixed));
                }
                if wanted(6) {
                    report(6, "CCRNet", criterion_6(&mixed));
                }
            }
            Err(e) => {
                for n in [5, 6].into_iter().filter(|&n| wanted(n)) {
                    report(n, "trained models", Err(anyhow::anyhow!("CENet training failed: {e:#}")));
                }
            }
        }
    }
    if wanted(7) {
        report(7, "reproducibility", criterion_7());
    }
    if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
