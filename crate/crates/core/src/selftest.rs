//! Deterministic oracle and invariant suite behind `odl selftest`.
//!
//! Every check is seeded and its report line formats values with fixed
//! precision, so two runs produce byte-identical text.

use std::fmt::Write as _;

use num_complex::Complex64;
use rand::Rng;

use crate::equalize::{ber, detect_bits, rzf_detect, zf_detect};
use crate::error::Result;
use crate::harness::dataset::{write_dataset, DatasetReader};
use crate::harness::results::{SweepResult, SweepRow};
use crate::harness::{frame_seed, Link, Scenario};
use crate::numerics::gradcheck::{check_gradients, GradCheck};
use crate::numerics::{Conv2d, Init, Linear, ParamSet, Tape, Tensor};
use crate::ofdm::{OfdmConfig, QamConstellation};
use crate::pilots::{
    estimate_correlation, ls_estimate, mmse_estimate, MmseFilter, MmseForm, PilotObservation,
};
use crate::rng::rng_from;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SelftestReport {
    pub checks: Vec<CheckOutcome>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(s, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        let _ = writeln!(s, "{} checks, {} failed", self.checks.len(), failed);
        s
    }
}

fn random_tensor(shape: Vec<usize>, seed: u64) -> Tensor {
    let mut rng = rng_from(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Nested-loop convolution with a `[kh, kw, c_in, c_out]` kernel.
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

fn conv_oracle() -> Result<CheckOutcome> {
    let mut worst: f64 = 0.0;
    for (i, stride) in [1usize, 2].into_iter().enumerate() {
        let x = random_tensor(vec![3, 9, 7], 10 + i as u64);
        let k = random_tensor(vec![3, 3, 3, 5], 20 + i as u64);
        let b = random_tensor(vec![5], 30 + i as u64);
        let mut t = Tape::new();
        let (xv, kv, bv) = (t.constant(x.clone()), t.constant(k.clone()), t.constant(b.clone()));
        let y = t.conv2d(xv, kv, bv, stride, 1)?;
        let want = conv_loops(&x, &k, b.data(), stride, 1);
        for (a, e) in t.value(y).data().iter().zip(&want) {
            worst = worst.max((a - e).abs());
        }
    }
    Ok(CheckOutcome {
        name: "conv2d-oracle",
        passed: worst < 1e-12,
        detail: format!("max abs diff {worst:.3e}"),
    })
}

fn composite_gradients() -> Result<CheckOutcome> {
    struct Net {
        ps: ParamSet,
        c1: Conv2d,
        c2: Conv2d,
        fc: Linear,
    }
    let mut rng = rng_from(40);
    let mut ps = ParamSet::new();
    let c1 = Conv2d::new(&mut ps, "c1", 2, 3, 3, 1, Init::FanIn, &mut rng);
    let c2 = Conv2d::new(&mut ps, "c2", 3, 2, 3, 2, Init::FanIn, &mut rng);
    let fc = Linear::new(&mut ps, "fc", 2 * 3 * 2, 2, Init::FanIn, &mut rng);
    let mut net = Net { ps, c1, c2, fc };
    let x = random_tensor(vec![1, 2, 6, 4], 41);
    let r = check_gradients(
        &mut net,
        |n| &mut n.ps,
        |n, t| {
            let xv = t.constant(x.clone());
            let h = n.c1.forward(t, &n.ps, xv)?;
            let h = t.tanh(h)?;
            let h = n.c2.forward(t, &n.ps, h)?;
            let h = t.tanh(h)?;
            let h = n.fc.forward(t, &n.ps, h)?;
            let p = t.sigmoid(h)?;
            t.bce_loss(p, &[1.0, 0.0])
        },
        GradCheck::default(),
    )?;
    Ok(CheckOutcome {
        name: "composite-gradcheck",
        passed: r.passes(1e-4),
        detail: format!("{} entries, max rel err {:.3e}", r.checked, r.max_rel_err),
    })
}

const FRAMES: u64 = 20;

fn classical_identities() -> Result<Vec<CheckOutcome>> {
    let link = Link::new(Scenario::VehA, OfdmConfig::default())?;
    let pattern = &link.pattern;
    let mut ls_err: f64 = 0.0;
    let mut zf_errors = 0.0;
    let mut rzf_diff: f64 = 0.0;
    let mut mmse_diff: f64 = 0.0;
    let frames: Vec<_> = (0..FRAMES).map(|i| link.frame(frame_seed(77, i), f64::INFINITY)).collect();
    let corr = estimate_correlation(frames.iter().map(|f| &f.h), pattern)?;
    for f in &frames {
        let obs = PilotObservation::from_grid(&f.y, pattern, 0.0);
        let ls = ls_estimate(&obs, pattern)?;
        for (e, h) in ls.iter().zip(pattern.gather(&f.h)) {
            ls_err = ls_err.max((e - h).norm());
        }
        let zf = zf_detect(&f.y, &f.h)?;
        zf_errors += ber(&f.bits, &detect_bits(&zf, pattern, &link.qam))?;
        let rzf = rzf_detect(&f.y, &f.h, 0.0)?;
        for (a, b) in rzf.as_slice().iter().zip(zf.as_slice()) {
            rzf_diff = rzf_diff.max((a - b).norm());
        }
        let mmse = mmse_estimate(&obs, pattern, &corr, 0.0)?;
        for (a, b) in mmse.iter().zip(&ls) {
            mmse_diff = mmse_diff.max((a - b).norm());
        }
    }
    // A positive noise variance must change the estimate.
    let obs = PilotObservation::from_grid(&frames[0].y, pattern, 0.1);
    let ls = ls_estimate(&obs, pattern)?;
    let shrunk = MmseFilter::new(&corr, pattern, 0.1, MmseForm::Standard)?.apply(&ls);
    let moved = shrunk.iter().zip(&ls).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    Ok(vec![
        CheckOutcome {
            name: "noiseless-ls",
            passed: ls_err < 1e-12,
            detail: format!("{FRAMES} frames, max |LS - H| {ls_err:.3e}"),
        },
        CheckOutcome {
            name: "noiseless-zf",
            passed: zf_errors == 0.0,
            detail: format!("{FRAMES} frames, BER {zf_errors:.3e}"),
        },
        CheckOutcome {
            name: "rzf-tau0-is-zf",
            passed: rzf_diff == 0.0,
            detail: format!("max diff {rzf_diff:.3e}"),
        },
        CheckOutcome {
            name: "mmse-sigma0-is-ls",
            passed: mmse_diff < 1e-12 && moved > 1e-6,
            detail: format!("max diff {mmse_diff:.3e}, shift at 0.1 {moved:.3e}"),
        },
    ])
}

fn qam_round_trip() -> Result<CheckOutcome> {
    let mut rng = rng_from(50);
    let mut ok = true;
    for order in [4usize, 16, 64, 256] {
        let q = QamConstellation::new(order)?;
        let bits: Vec<u8> = (0..q.bits_per_symbol() * 500).map(|_| rng.random_range(0..2u8)).collect();
        let symbols = q.modulate(&bits)?;
        let energy = symbols.iter().map(|z| z.norm_sqr()).sum::<f64>() / symbols.len() as f64;
        let avg = q.points().iter().map(|z| z.norm_sqr()).sum::<f64>() / order as f64;
        ok &= q.demodulate(&symbols) == bits && (avg - 1.0).abs() < 1e-12 && energy > 0.0;
    }
    Ok(CheckOutcome {
        name: "qam-round-trip",
        passed: ok,
        detail: "orders 4, 16, 64, 256".into(),
    })
}

fn tap_power() -> Result<CheckOutcome> {
    let link = Link::new(Scenario::VehA, OfdmConfig::default())?;
    let draws = 2000;
    let powers = link.profile.linear_powers();
    let mut acc = vec![0.0; powers.len()];
    for i in 0..draws {
        let r = link.channel(frame_seed(60, i));
        for (a, g) in acc.iter_mut().zip(&r.tap_gains) {
            *a += g.iter().map(Complex64::norm_sqr).sum::<f64>() / g.len() as f64;
        }
    }
    let worst_db = acc
        .iter()
        .zip(&powers)
        .map(|(a, p)| (10.0 * (a / draws as f64 / p).log10()).abs())
        .fold(0.0, f64::max);
    Ok(CheckOutcome {
        name: "tap-power",
        passed: worst_db < 0.5,
        detail: format!("{draws} VehA draws, worst tap {worst_db:.3} dB off"),
    })
}

fn dataset_regeneration() -> Result<CheckOutcome> {
    let link = Link::new(Scenario::PedA, OfdmConfig::default().with_modulation(16))?;
    let mut buf = Vec::new();
    write_dataset(&mut buf, &link, 24, &[10.0, 20.0, 30.0], 70)?;
    let reader = DatasetReader::new(buf.as_slice())?;
    let mut n = 0;
    let mut ok = true;
    for rec in reader {
        let rec = rec?;
        ok &= rec.regenerate_y(&link)? == rec.y;
        n += 1;
    }
    Ok(CheckOutcome {
        name: "dataset-regeneration",
        passed: ok && n == 24,
        detail: format!("{n} records, {} bytes", buf.len()),
    })
}

fn csv_round_trip() -> Result<CheckOutcome> {
    let mut rng = rng_from(80);
    let rows: Vec<SweepRow> = (0..8)
        .map(|i| SweepRow {
            scheme: "LS+GI".into(),
            scenario: "vehA".into(),
            snr_db: 10.0 + 5.0 * i as f64,
            metric: "mse".into(),
            value: rng.random::<f64>() * 10f64.powi(-(i as i32)),
            stderr: rng.random::<f64>() * 1e-3,
            n: 2000,
        })
        .collect();
    let result = SweepResult { rows };
    let text = result.to_csv_string();
    let mut ok = true;
    for (line, row) in text.lines().skip(1).zip(&result.rows) {
        let cols: Vec<&str> = line.split(',').collect();
        ok &= cols.len() == 7
            && cols[4].parse::<f64>().ok() == Some(row.value)
            && cols[5].parse::<f64>().ok() == Some(row.stderr);
    }
    Ok(CheckOutcome {
        name: "csv-round-trip",
        passed: ok,
        detail: format!("{} rows", result.rows.len()),
    })
}

/// Runs every check; errors inside a check are reported as failures.
pub fn run_selftest() -> SelftestReport {
    let mut report = SelftestReport::default();
    let single: [(&'static str, fn() -> Result<CheckOutcome>); 6] = [
        ("conv2d-oracle", conv_oracle),
        ("composite-gradcheck", composite_gradients),
        ("qam-round-trip", qam_round_trip),
        ("tap-power", tap_power),
        ("dataset-regeneration", dataset_regeneration),
        ("csv-round-trip", csv_round_trip),
    ];
    let failed = |name, e: crate::Error| CheckOutcome {
        name,
        passed: false,
        detail: format!("error: {e}"),
    };
    for (name, f) in single {
        report.checks.push(f().unwrap_or_else(|e| failed(name, e)));
    }
    match classical_identities() {
        Ok(v) => report.checks.extend(v),
        Err(e) => report.checks.push(failed("classical-identities", e)),
    }
    report
}
