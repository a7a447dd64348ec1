use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;

use odl_core::ofdm::{FrameGrid, OfdmConfig, QamConstellation};
use odl_core::pilots::{channel_mse, interpolate_gaussian, interpolate_linear, PilotPattern};
use odl_core::rng::rng_from;

fn pattern() -> PilotPattern {
    PilotPattern::for_config(&OfdmConfig::default()).unwrap()
}

/// Plain 1-D linear interpolation with constant hold outside the samples.
fn lerp_1d(xs: &[f64], ys: &[Complex64], x: f64) -> Complex64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    for i in 0..xs.len() - 1 {
        if x >= xs[i] && x <= xs[i + 1] {
            let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
            return ys[i] * (1.0 - t) + ys[i + 1] * t;
        }
    }
    unreachable!()
}

/// Quadratic through the three samples closest to `x` (ties to the lower
/// coordinate), evaluated at `x`.
fn quad_1d(xs: &[f64], ys: &[Complex64], x: f64) -> Complex64 {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| {
        (xs[a] - x).abs().total_cmp(&(xs[b] - x).abs()).then(xs[a].total_cmp(&xs[b]))
    });
    let pick = &idx[..3];
    if let Some(&i) = pick.iter().find(|&&i| xs[i] == x) {
        return ys[i];
    }
    let mut out = Complex64::new(0.0, 0.0);
    for &a in pick {
        let mut w = 1.0;
        for &b in pick {
            if a != b {
                w *= (x - xs[b]) / (xs[a] - xs[b]);
            }
        }
        out += ys[a] * w;
    }
    out
}

/// Frequency within each pilot column, then time per subcarrier.
fn separable(p: &PilotPattern, vals: &[Complex64], f: fn(&[f64], &[Complex64], f64) -> Complex64) -> FrameGrid {
    let (k, n) = p.grid_dims();
    let slots: Vec<usize> = p.positions().iter().map(|&(_, n)| n).fold(Vec::new(), |mut v, s| {
        if !v.contains(&s) {
            v.push(s);
        }
        v
    });
    let cols: Vec<Vec<Complex64>> = slots
        .iter()
        .map(|&s| {
            let (xs, ys): (Vec<f64>, Vec<Complex64>) = p
                .positions()
                .iter()
                .zip(vals)
                .filter(|((_, nn), _)| *nn == s)
                .map(|(&(kk, _), v)| (kk as f64, *v))
                .unzip();
            (0..k).map(|q| f(&xs, &ys, q as f64)).collect()
        })
        .collect();
    let ts: Vec<f64> = slots.iter().map(|&s| s as f64).collect();
    FrameGrid::from_fn(k, n, |kk, nn| {
        let ys: Vec<Complex64> = cols.iter().map(|c| c[kk]).collect();
        f(&ts, &ys, nn as f64)
    })
}

fn max_diff(a: &FrameGrid, b: &FrameGrid) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

#[test]
fn interpolators_match_second_implementation() {
    let p = pattern();
    let mut rng = rng_from(1);
    for _ in 0..100 {
        let vals: Vec<Complex64> = (0..p.len())
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let lin = interpolate_linear(&vals, &p).unwrap();
        assert!(max_diff(&lin, &separable(&p, &vals, lerp_1d)) < 1e-12);
        let gi = interpolate_gaussian(&vals, &p).unwrap();
        assert!(max_diff(&gi, &separable(&p, &vals, quad_1d)) < 1e-12);
    }
}

#[test]
fn diamond_lattice_layout() {
    let p = pattern();
    assert_eq!(p.len(), 126);
    assert_eq!(p.lattice_dims(), (18, 7));
    let slots = p.pilot_slots().to_vec();
    assert_eq!(slots.len(), 7);
    for (j, w) in slots.windows(2).enumerate() {
        let (a, b) = (p.column(j).to_vec(), p.column(j + 1).to_vec());
        assert!(a.iter().all(|k| !b.contains(k)));
        let mut union: Vec<usize> = a.iter().chain(&b).copied().collect();
        union.sort_unstable();
        assert_eq!(union, (0..72).step_by(2).collect::<Vec<_>>());
        assert_eq!(w[1] - w[0], 4);
    }
}

#[test]
fn channel_mse_matches_summation() {
    let mut rng = rng_from(2);
    let mut g = || FrameGrid::from_fn(72, 28, |_, _| Complex64::new(rng.random(), rng.random()));
    let (a, b) = (g(), g());
    let mut s = 0.0;
    for k in 0..72 {
        for n in 0..28 {
            let d = a.get(k, n) - b.get(k, n);
            s += d.re * d.re + d.im * d.im;
        }
    }
    assert!((channel_mse(&a, &b).unwrap() - s / 2016.0).abs() < 1e-12);
}

#[test]
fn hard_decisions_match_exhaustive_search() {
    let mut rng = rng_from(3);
    for order in [4usize, 16, 64, 256] {
        let q = QamConstellation::new(order).unwrap();
        let pts = q.points();
        for _ in 0..10_000 / 4 {
            let z = pts[rng.random_range(0..order)]
                + Complex64::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
            let best = (0..order)
                .min_by(|&a, &b| (pts[a] - z).norm_sqr().total_cmp(&(pts[b] - z).norm_sqr()))
                .unwrap();
            assert_eq!(q.hard_label(z), best, "M={order} z={z}");
        }
    }
}

proptest! {
    #[test]
    fn qam_round_trip(order_idx in 0usize..4, seed in any::<u64>()) {
        let order = [4usize, 16, 64, 256][order_idx];
        let q = QamConstellation::new(order).unwrap();
        let mut rng = rng_from(seed);
        let bits: Vec<u8> = (0..q.bits_per_symbol() * 64).map(|_| rng.random_range(0..2u8)).collect();
        prop_assert_eq!(q.demodulate(&q.modulate(&bits).unwrap()), bits);
    }

    #[test]
    fn interpolation_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0, seed in any::<u64>()) {
        let p = pattern();
        let mut rng = rng_from(seed);
        let mut draw = || -> Vec<Complex64> {
            (0..p.len()).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
        };
        let (x, y) = (draw(), draw());
        let mix: Vec<Complex64> = x.iter().zip(&y).map(|(u, v)| u * a + v * b).collect();
        for f in [interpolate_linear, interpolate_gaussian] {
            let lhs = f(&mix, &p).unwrap();
            let (fx, fy) = (f(&x, &p).unwrap(), f(&y, &p).unwrap());
            let rhs = fx.zip_map(&fy, |u, v| u * a + v * b).unwrap();
            prop_assert!(max_diff(&lhs, &rhs) < 1e-12);
        }
    }
}
