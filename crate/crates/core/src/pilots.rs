//! Pilot patterns and the classical pilot-aided estimators.
//!
//! LS divides the received pilots by the known symbols. LMMSE smooths the LS
//! estimate with an empirical pilot correlation `R_H`:
//! `Ĥ = R_H (R_H + σ²(X Xᴴ)⁻¹)⁻¹ Ĥ_LS`. Full-grid completion is separable,
//! first along frequency inside each pilot slot, then along time for every
//! subcarrier, using either linear or three-point (Gaussian) interpolation.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::ofdm::{FrameGrid, OfdmConfig};
use crate::rng::{rng_from, SimRng};

/// Seed of the default pilot symbol sequence.
pub const PILOT_SEED: u64 = 0x5049_4c4f_5453;

/// Pilot lattice on a K×N grid.
///
/// Pilots are stored slot-column by slot-column, each column by ascending
/// subcarrier, so pilot `j·per_slot + i` is row `i`, column `j` of the
/// low-resolution pilot image.
#[derive(Clone, Debug, PartialEq)]
pub struct PilotPattern {
    subcarriers: usize,
    slots: usize,
    freq_spacing: usize,
    time_spacing: usize,
    diamond_offset: usize,
    pilot_slots: Vec<usize>,
    columns: Vec<Vec<usize>>,
    positions: Vec<(usize, usize)>,
    symbols: Vec<Complex64>,
    mask: Vec<bool>,
}

/// Diamond lattice: pilot slots `dt·j + dt/2`, subcarriers
/// `df·i + (j mod 2)·offset (mod K)` in slot-column `j`.
pub fn lattice_pattern(k: usize, n: usize, df: usize, dt: usize, diamond_offset: usize) -> Result<PilotPattern> {
    if k == 0 || n == 0 || df == 0 || dt == 0 {
        return Err(Error::InvalidArgument("pilot lattice dimensions must be positive".into()));
    }
    if k % df != 0 || n % dt != 0 {
        return Err(Error::InvalidArgument(format!(
            "grid {k}x{n} not divisible by pilot spacing {df}x{dt}"
        )));
    }
    let pilot_slots: Vec<usize> = (0..n / dt).map(|j| dt * j + dt / 2).collect();
    let columns: Vec<Vec<usize>> = (0..pilot_slots.len())
        .map(|j| {
            let mut ks: Vec<usize> = (0..k / df).map(|i| (df * i + (j % 2) * diamond_offset) % k).collect();
            ks.sort_unstable();
            ks
        })
        .collect();
    let mut positions = Vec::with_capacity(k / df * pilot_slots.len());
    let mut mask = vec![false; k * n];
    for (ks, &slot) in columns.iter().zip(&pilot_slots) {
        for &kk in ks {
            positions.push((kk, slot));
            mask[kk * n + slot] = true;
        }
    }
    let symbols = qpsk_sequence(positions.len(), PILOT_SEED);
    Ok(PilotPattern {
        subcarriers: k,
        slots: n,
        freq_spacing: df,
        time_spacing: dt,
        diamond_offset,
        pilot_slots,
        columns,
        positions,
        symbols,
        mask,
    })
}

/// Unit-modulus QPSK corners drawn from a seeded generator.
pub fn qpsk_sequence(len: usize, seed: u64) -> Vec<Complex64> {
    let mut rng: SimRng = rng_from(seed);
    let r = std::f64::consts::FRAC_1_SQRT_2;
    (0..len)
        .map(|_| {
            let re = if rng.random::<bool>() { r } else { -r };
            let im = if rng.random::<bool>() { r } else { -r };
            Complex64::new(re, im)
        })
        .collect()
}

impl PilotPattern {
    /// The 18×7 diamond (spacing 4 on both axes, offset 2) scaled to `config`.
    pub fn for_config(config: &OfdmConfig) -> Result<Self> {
        lattice_pattern(config.subcarriers, config.slots, 4, 4, 2)
    }

    pub fn with_symbols(mut self, symbols: Vec<Complex64>) -> Result<Self> {
        if symbols.len() != self.positions.len() {
            return Err(Error::shape(
                "PilotPattern::with_symbols",
                format!("{} symbols for {} pilots", symbols.len(), self.positions.len()),
            ));
        }
        self.symbols = symbols;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn grid_dims(&self) -> (usize, usize) {
        (self.subcarriers, self.slots)
    }

    /// `(pilots per slot, pilot slots)`, e.g. `(18, 7)`.
    pub fn lattice_dims(&self) -> (usize, usize) {
        (self.subcarriers / self.freq_spacing, self.pilot_slots.len())
    }

    pub fn spacing(&self) -> (usize, usize, usize) {
        (self.freq_spacing, self.time_spacing, self.diamond_offset)
    }

    pub fn positions(&self) -> &[(usize, usize)] {
        &self.positions
    }

    pub fn symbols(&self) -> &[Complex64] {
        &self.symbols
    }

    pub fn pilot_slots(&self) -> &[usize] {
        &self.pilot_slots
    }

    /// Ascending pilot subcarriers of slot-column `j`.
    pub fn column(&self, j: usize) -> &[usize] {
        &self.columns[j]
    }

    pub fn is_pilot(&self, k: usize, n: usize) -> bool {
        self.mask[k * self.slots + n]
    }

    /// Flat (k-major) indices of the non-pilot resource elements.
    pub fn data_indices(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| !self.mask[i]).collect()
    }

    pub fn data_count(&self) -> usize {
        self.mask.len() - self.positions.len()
    }

    /// Grid values at the pilot positions, in pattern order.
    pub fn gather(&self, grid: &FrameGrid) -> Vec<Complex64> {
        self.positions.iter().map(|&(k, n)| grid.get(k, n)).collect()
    }

    /// Writes the pilot symbols into `grid`.
    pub fn place_symbols(&self, grid: &mut FrameGrid) {
        for (&(k, n), &s) in self.positions.iter().zip(&self.symbols) {
            grid.set(k, n, s);
        }
    }

    /// Pilot values as `2×P×T` real planes (real plane first), scaled by
    /// `1/scale`.
    pub fn to_lr_planes(&self, values: &[Complex64], scale: f64) -> Vec<f64> {
        let (p, t) = self.lattice_dims();
        let inv = 1.0 / scale;
        let mut out = vec![0.0; 2 * p * t];
        for j in 0..t {
            for i in 0..p {
                let z = values[j * p + i];
                out[i * t + j] = z.re * inv;
                out[p * t + i * t + j] = z.im * inv;
            }
        }
        out
    }

    /// Text export, one `k,n` pair per line.
    pub fn to_text(&self) -> String {
        let mut s = String::from("k,n\n");
        for &(k, n) in &self.positions {
            let _ = writeln!(s, "{k},{n}");
        }
        s
    }

    fn check_len(&self, len: usize, op: &'static str) -> Result<()> {
        if len != self.positions.len() {
            return Err(Error::shape(op, format!("{len} values for {} pilots", self.positions.len())));
        }
        Ok(())
    }
}

/// Received pilot values and the noise variance they were observed at.
#[derive(Clone, Debug, PartialEq)]
pub struct PilotObservation {
    pub values: Vec<Complex64>,
    pub noise_var: f64,
}

impl PilotObservation {
    pub fn from_grid(y: &FrameGrid, pattern: &PilotPattern, noise_var: f64) -> Self {
        Self {
            values: pattern.gather(y),
            noise_var,
        }
    }
}

/// `Ĥ_p = Y_p / X_p` per pilot.
pub fn ls_estimate(obs: &PilotObservation, pattern: &PilotPattern) -> Result<Vec<Complex64>> {
    pattern.check_len(obs.values.len(), "ls_estimate")?;
    obs.values
        .iter()
        .zip(pattern.symbols())
        .map(|(&y, &x)| {
            if x.norm_sqr() == 0.0 {
                Err(Error::InvalidArgument("zero pilot symbol".into()))
            } else {
                Ok(y / x)
            }
        })
        .collect()
}

/// Hermitian pilot correlation matrix `R_H = E[H_p H_pᴴ]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelCorrelation {
    pub matrix: DMatrix<Complex64>,
}

impl ChannelCorrelation {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn max_hermitian_defect(&self) -> f64 {
        let m = &self.matrix;
        let mut worst: f64 = 0.0;
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let eig = self.matrix.clone().symmetric_eigen();
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

/// Streaming sample average of `H_p H_pᴴ`.
#[derive(Clone, Debug)]
pub struct CorrelationAccumulator {
    sum: DMatrix<Complex64>,
    count: usize,
}

impl CorrelationAccumulator {
    pub fn new(pilots: usize) -> Self {
        Self {
            sum: DMatrix::zeros(pilots, pilots),
            count: 0,
        }
    }

    pub fn add(&mut self, h: &FrameGrid, pattern: &PilotPattern) {
        let hp = nalgebra::DVector::from_vec(pattern.gather(h));
        self.sum.gerc(Complex64::new(1.0, 0.0), &hp, &hp, Complex64::new(1.0, 0.0));
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(self) -> Result<ChannelCorrelation> {
        if self.count < 2 {
            return Err(Error::InvalidArgument(format!(
                "correlation needs at least 2 realizations, got {}",
                self.count
            )));
        }
        let avg = self.sum / Complex64::new(self.count as f64, 0.0);
        let matrix = (&avg + avg.adjoint()) * Complex64::new(0.5, 0.0);
        Ok(ChannelCorrelation { matrix })
    }
}

/// Empirical `R_H` over a set of channel grids.
pub fn estimate_correlation<'a>(
    channels: impl IntoIterator<Item = &'a FrameGrid>,
    pattern: &PilotPattern,
) -> Result<ChannelCorrelation> {
    let mut acc = CorrelationAccumulator::new(pattern.len());
    for h in channels {
        acc.add(h, pattern);
    }
    acc.finish()
}

/// Which form of the LMMSE smoother to build.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MmseForm {
    /// `R (R + σ² (X Xᴴ)⁻¹)⁻¹`.
    #[default]
    Standard,
    /// `R (R + (X Xᴴ)⁻¹)⁻¹`, without the noise variance.
    WithoutNoiseVariance,
}

/// Precomputed pilot smoother `W` with `Ĥ = W Ĥ_LS`.
#[derive(Clone, Debug)]
pub struct MmseFilter {
    w: Option<DMatrix<Complex64>>,
}

impl MmseFilter {
    pub fn new(r: &ChannelCorrelation, pattern: &PilotPattern, noise_var: f64, form: MmseForm) -> Result<Self> {
        let np = pattern.len();
        if r.dim() != np {
            return Err(Error::shape("mmse_estimate", format!("R_H is {0}x{0} for {np} pilots", r.dim())));
        }
        if !(noise_var >= 0.0) {
            return Err(Error::InvalidArgument(format!("noise variance {noise_var}")));
        }
        let reg = match form {
            MmseForm::Standard => noise_var,
            MmseForm::WithoutNoiseVariance => 1.0,
        };
        if reg == 0.0 {
            return Ok(Self { w: None });
        }
        let mut a = r.matrix.clone();
        for (i, x) in pattern.symbols().iter().enumerate() {
            a[(i, i)] += Complex64::new(reg / x.norm_sqr(), 0.0);
        }
        // A and R are Hermitian, so W = R A⁻¹ = (A⁻¹ R)ᴴ.
        let z = match a.clone().cholesky() {
            Some(ch) => ch.solve(&r.matrix),
            None => a
                .lu()
                .solve(&r.matrix)
                .ok_or_else(|| Error::Singular("R_H + σ²(XXᴴ)⁻¹".into()))?,
        };
        if z.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Singular("R_H + σ²(XXᴴ)⁻¹".into()));
        }
        Ok(Self { w: Some(z.adjoint()) })
    }

    pub fn apply(&self, ls: &[Complex64]) -> Vec<Complex64> {
        match &self.w {
            None => ls.to_vec(),
            Some(w) => {
                let v = nalgebra::DVector::from_column_slice(ls);
                (w * v).iter().copied().collect()
            }
        }
    }
}

/// LMMSE pilot estimate from the LS estimate of `obs`.
pub fn mmse_estimate(
    obs: &PilotObservation,
    pattern: &PilotPattern,
    r: &ChannelCorrelation,
    noise_var: f64,
) -> Result<Vec<Complex64>> {
    mmse_estimate_with(obs, pattern, r, noise_var, MmseForm::Standard)
}

pub fn mmse_estimate_with(
    obs: &PilotObservation,
    pattern: &PilotPattern,
    r: &ChannelCorrelation,
    noise_var: f64,
    form: MmseForm,
) -> Result<Vec<Complex64>> {
    let ls = ls_estimate(obs, pattern)?;
    Ok(MmseFilter::new(r, pattern, noise_var, form)?.apply(&ls))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InterpKind {
    Linear,
    Gaussian,
}

/// Sparse 1-D interpolation weights for every output coordinate.
type Stencils = Vec<Vec<(usize, f64)>>;

fn linear_stencils(coords: &[usize], len: usize) -> Stencils {
    let last = coords.len() - 1;
    (0..len)
        .map(|x| {
            if x <= coords[0] {
                return vec![(0, 1.0)];
            }
            if x >= coords[last] {
                return vec![(last, 1.0)];
            }
            let i = coords.partition_point(|&c| c <= x) - 1;
            if coords[i] == x {
                return vec![(i, 1.0)];
            }
            let t = (x - coords[i]) as f64 / (coords[i + 1] - coords[i]) as f64;
            vec![(i, 1.0 - t), (i + 1, t)]
        })
        .collect()
}

fn gaussian_stencils(coords: &[usize], len: usize) -> Stencils {
    let m = coords.len();
    (0..len)
        .map(|x| {
            if let Ok(i) = coords.binary_search(&x) {
                return vec![(i, 1.0)];
            }
            // Bracketing pair (i, i+1); outside the hull use the edge pair.
            let i = coords.partition_point(|&c| c < x).clamp(1, m - 1) - 1;
            let xf = x as f64;
            let start = if i == 0 {
                0
            } else if i + 2 >= m {
                m - 3
            } else {
                let below = xf - coords[i - 1] as f64;
                let above = coords[i + 2] as f64 - xf;
                if below <= above { i - 1 } else { i }
            };
            let pts = [start, start + 1, start + 2];
            pts.iter()
                .map(|&a| {
                    let w = pts
                        .iter()
                        .filter(|&&b| b != a)
                        .map(|&b| (xf - coords[b] as f64) / (coords[a] as f64 - coords[b] as f64))
                        .product();
                    (a, w)
                })
                .collect()
        })
        .collect()
}

/// Separable pilot-to-grid interpolator, fixed for one pattern.
#[derive(Clone, Debug)]
pub struct GridInterpolator {
    kind: InterpKind,
    subcarriers: usize,
    slots: usize,
    per_slot: usize,
    freq: Vec<Stencils>,
    time: Stencils,
}

impl GridInterpolator {
    pub fn new(pattern: &PilotPattern, kind: InterpKind) -> Result<Self> {
        let (p, t) = pattern.lattice_dims();
        let need = match kind {
            InterpKind::Linear => 2,
            InterpKind::Gaussian => 3,
        };
        if p < need || t < need {
            return Err(Error::InvalidArgument(format!(
                "{kind:?} interpolation needs {need} pilots per axis, pattern is {p}x{t}"
            )));
        }
        let (k, n) = pattern.grid_dims();
        let build = |coords: &[usize], len| match kind {
            InterpKind::Linear => linear_stencils(coords, len),
            InterpKind::Gaussian => gaussian_stencils(coords, len),
        };
        let freq = (0..t).map(|j| build(pattern.column(j), k)).collect();
        let time = build(pattern.pilot_slots(), n);
        Ok(Self {
            kind,
            subcarriers: k,
            slots: n,
            per_slot: p,
            freq,
            time,
        })
    }

    pub fn kind(&self) -> InterpKind {
        self.kind
    }

    /// Full grid from pilot values in pattern order.
    pub fn apply(&self, pilots: &[Complex64]) -> Result<FrameGrid> {
        let t = self.freq.len();
        if pilots.len() != self.per_slot * t {
            return Err(Error::shape(
                "interpolate",
                format!("{} values for {} pilots", pilots.len(), self.per_slot * t),
            ));
        }
        // cols[j][k]: frequency-interpolated value of pilot slot j.
        let cols: Vec<Vec<Complex64>> = self
            .freq
            .iter()
            .enumerate()
            .map(|(j, st)| {
                let vals = &pilots[j * self.per_slot..(j + 1) * self.per_slot];
                st.iter().map(|s| s.iter().map(|&(i, w)| vals[i] * w).sum()).collect()
            })
            .collect();
        Ok(FrameGrid::from_fn(self.subcarriers, self.slots, |k, n| {
            self.time[n].iter().map(|&(j, w)| cols[j][k] * w).sum()
        }))
    }
}

pub fn interpolate_linear(pilots: &[Complex64], pattern: &PilotPattern) -> Result<FrameGrid> {
    GridInterpolator::new(pattern, InterpKind::Linear)?.apply(pilots)
}

pub fn interpolate_gaussian(pilots: &[Complex64], pattern: &PilotPattern) -> Result<FrameGrid> {
    GridInterpolator::new(pattern, InterpKind::Gaussian)?.apply(pilots)
}

/// `(1/(K·N))·Σ|Ĥ − H|²`.
pub fn channel_mse(estimate: &FrameGrid, truth: &FrameGrid) -> Result<f64> {
    estimate.check_same(truth, "channel_mse")?;
    let total: f64 = estimate
        .as_slice()
        .iter()
        .zip(truth.as_slice())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    Ok(total / estimate.as_slice().len() as f64)
}

/// Mean squared error over pilot positions.
pub fn pilot_mse(estimate: &[Complex64], truth: &[Complex64]) -> Result<f64> {
    if estimate.len() != truth.len() || estimate.is_empty() {
        return Err(Error::shape("pilot_mse", format!("{} vs {}", estimate.len(), truth.len())));
    }
    let total: f64 = estimate.iter().zip(truth).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(total / estimate.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn default_pattern() -> PilotPattern {
        lattice_pattern(72, 28, 4, 4, 2).unwrap()
    }

    #[test]
    fn default_lattice_is_18_by_7() {
        let p = default_pattern();
        assert_eq!(p.len(), 126);
        assert_eq!(p.lattice_dims(), (18, 7));
        assert_eq!(p.pilot_slots(), &[2, 6, 10, 14, 18, 22, 26]);
        for j in 0..7 {
            assert_eq!(p.column(j).len(), 18);
        }
        let mut seen = std::collections::HashSet::new();
        for &(k, n) in p.positions() {
            assert!(k < 72 && n < 28);
            assert!(seen.insert((k, n)));
        }
        assert_eq!(p.data_count(), 72 * 28 - 126);
    }

    #[test]
    fn diamond_columns_interleave() {
        let p = default_pattern();
        let a: std::collections::BTreeSet<_> = p.column(0).iter().copied().collect();
        let b: std::collections::BTreeSet<_> = p.column(1).iter().copied().collect();
        assert!(a.is_disjoint(&b));
        let union: Vec<usize> = a.union(&b).copied().collect();
        assert_eq!(union, (0..72).step_by(2).collect::<Vec<_>>());
    }

    #[test]
    fn zero_offset_is_rectangular() {
        let p = lattice_pattern(72, 28, 4, 4, 0).unwrap();
        for j in 1..7 {
            assert_eq!(p.column(j), p.column(0));
        }
    }

    #[test]
    fn lattice_rejects_indivisible_grid() {
        assert!(lattice_pattern(70, 28, 4, 4, 2).is_err());
        assert!(lattice_pattern(72, 27, 4, 4, 2).is_err());
        assert!(lattice_pattern(72, 28, 0, 4, 2).is_err());
    }

    #[test]
    fn pilot_symbols_unit_modulus() {
        for s in default_pattern().symbols() {
            assert!((s.norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn ls_hand_division() {
        let p = lattice_pattern(4, 4, 2, 2, 0).unwrap();
        let n = p.len();
        let p = p.with_symbols(vec![c(1.0, 1.0); n]).unwrap();
        let obs = PilotObservation {
            values: vec![c(2.0, 2.0); n],
            noise_var: 0.0,
        };
        for h in ls_estimate(&obs, &p).unwrap() {
            assert!((h - c(2.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn ls_rejects_zero_pilot() {
        let p = lattice_pattern(4, 4, 2, 2, 0).unwrap();
        let n = p.len();
        let mut sym = vec![c(1.0, 0.0); n];
        sym[1] = c(0.0, 0.0);
        let p = p.with_symbols(sym).unwrap();
        let obs = PilotObservation {
            values: vec![c(1.0, 0.0); n],
            noise_var: 0.0,
        };
        assert!(ls_estimate(&obs, &p).is_err());
    }

    #[test]
    fn scalar_mmse_halves_ls_at_unit_snr() {
        let p = lattice_pattern(1, 1, 1, 1, 0).unwrap().with_symbols(vec![c(1.0, 0.0)]).unwrap();
        let r = ChannelCorrelation {
            matrix: DMatrix::from_element(1, 1, c(1.0, 0.0)),
        };
        let obs = PilotObservation {
            values: vec![c(0.8, -0.4)],
            noise_var: 1.0,
        };
        let h = mmse_estimate(&obs, &p, &r, 1.0).unwrap();
        assert!((h[0] - c(0.4, -0.2)).norm() < 1e-15);
    }

    #[test]
    fn mmse_with_zero_noise_is_ls() {
        let p = default_pattern();
        let mut rng = rng_from(3);
        let hs: Vec<FrameGrid> = (0..4)
            .map(|_| FrameGrid::from_fn(72, 28, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)))
            .collect();
        let r = estimate_correlation(&hs, &p).unwrap();
        let obs = PilotObservation {
            values: p.gather(&hs[0]),
            noise_var: 0.0,
        };
        assert_eq!(mmse_estimate(&obs, &p, &r, 0.0).unwrap(), ls_estimate(&obs, &p).unwrap());
    }

    #[test]
    fn repeated_realization_gives_rank_one() {
        let p = lattice_pattern(8, 4, 2, 2, 1).unwrap();
        let h = FrameGrid::from_fn(8, 4, |k, n| c(k as f64, n as f64 - 1.0));
        let r = estimate_correlation([&h, &h, &h], &p).unwrap();
        let hp = p.gather(&h);
        for i in 0..p.len() {
            for j in 0..p.len() {
                assert!((r.matrix[(i, j)] - hp[i] * hp[j].conj()).norm() < 1e-12);
            }
        }
        assert!(r.max_hermitian_defect() < 1e-12);
        assert!(estimate_correlation([&h], &p).is_err());
    }

    #[test]
    fn interpolators_reproduce_constants() {
        let p = default_pattern();
        let v = vec![c(0.3, -1.2); p.len()];
        for kind in [InterpKind::Linear, InterpKind::Gaussian] {
            let g = GridInterpolator::new(&p, kind).unwrap().apply(&v).unwrap();
            for z in g.as_slice() {
                assert!((z - v[0]).norm() < 1e-12, "{kind:?}");
            }
        }
    }

    #[test]
    fn linear_reproduces_affine_inside_hull() {
        let p = default_pattern();
        let f = |k: usize, n: usize| c(0.5 + 0.1 * k as f64 - 0.03 * n as f64, 0.02 * k as f64 + 0.2 * n as f64);
        let h = FrameGrid::from_fn(72, 28, f);
        let g = interpolate_linear(&p.gather(&h), &p).unwrap();
        // Frequency hull is [2, 68] once both column parities are covered.
        for k in 2..=68 {
            for n in 2..=26 {
                assert!((g.get(k, n) - f(k, n)).norm() < 1e-12, "({k},{n})");
            }
        }
    }

    #[test]
    fn gaussian_reproduces_quadratic_in_frequency() {
        let p = default_pattern();
        let f = |k: usize| {
            let x = k as f64;
            c(0.2 - 0.01 * x + 0.0007 * x * x, 0.003 * x * x - 0.1)
        };
        let h = FrameGrid::from_fn(72, 28, |k, _| f(k));
        let g = interpolate_gaussian(&p.gather(&h), &p).unwrap();
        for k in 0..72 {
            for n in 0..28 {
                assert!((g.get(k, n) - f(k)).norm() < 1e-10, "({k},{n})");
            }
        }
    }

    #[test]
    fn gaussian_stencil_picks_nearest_three() {
        let coords = [0, 4, 8, 12];
        let st = gaussian_stencils(&coords, 13);
        let idx = |x: usize| st[x].iter().map(|&(i, _)| i).collect::<Vec<_>>();
        assert_eq!(idx(4), vec![1]);
        assert_eq!(idx(5), vec![0, 1, 2]);
        assert_eq!(idx(7), vec![1, 2, 3]);
        assert_eq!(idx(9), vec![1, 2, 3]);
        for s in &st {
            assert!((s.iter().map(|&(_, w)| w).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_is_linear_operator() {
        let p = default_pattern();
        let mut rng = rng_from(11);
        let mut draw = || -> Vec<Complex64> {
            (0..p.len()).map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect()
        };
        let (x, y) = (draw(), draw());
        let (a, b) = (c(0.7, -0.2), c(-1.3, 0.4));
        let mix: Vec<Complex64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        for kind in [InterpKind::Linear, InterpKind::Gaussian] {
            let it = GridInterpolator::new(&p, kind).unwrap();
            let (gx, gy, gm) = (it.apply(&x).unwrap(), it.apply(&y).unwrap(), it.apply(&mix).unwrap());
            for i in 0..72 * 28 {
                let want = a * gx.as_slice()[i] + b * gy.as_slice()[i];
                assert!((gm.as_slice()[i] - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn mse_basics() {
        let h = FrameGrid::from_fn(6, 4, |k, n| c(k as f64, -(n as f64)));
        assert_eq!(channel_mse(&h, &h).unwrap(), 0.0);
        let shifted = h.map(|z| z + 1.0);
        assert!((channel_mse(&shifted, &h).unwrap() - 1.0).abs() < 1e-15);
        assert!(channel_mse(&h, &FrameGrid::zeros(4, 6)).is_err());
    }

    #[test]
    fn lr_planes_follow_column_packing() {
        let p = default_pattern();
        let vals: Vec<Complex64> = (0..p.len()).map(|i| c(i as f64, -(i as f64))).collect();
        let planes = p.to_lr_planes(&vals, 2.0);
        // Row 3 of slot-column 5 is pilot 5·18 + 3.
        assert_eq!(planes[3 * 7 + 5], 93.0 / 2.0);
        assert_eq!(planes[126 + 3 * 7 + 5], -93.0 / 2.0);
    }

    #[test]
    fn text_export_lists_every_pilot() {
        let p = default_pattern();
        let text = p.to_text();
        assert_eq!(text.lines().count(), 127);
        assert!(text.lines().nth(1).unwrap() == "0,2");
    }
}
