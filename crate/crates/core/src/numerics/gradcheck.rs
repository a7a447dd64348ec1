//! Central finite-difference gradient checking.
//!
//! Independent of the tape's backward rules: it only evaluates the forward
//! pass at perturbed parameter values.

use super::{ParamId, ParamSet, Tape, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub step: f64,
    /// Lower bound on the relative-error denominator; gradients smaller
    /// than this are effectively compared with absolute tolerance
    /// `tolerance·floor`.
    pub floor: f64,
    /// Check at most this many evenly spaced entries per tensor.
    pub max_per_tensor: Option<usize>,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-4,
            floor: 1e-4,
            max_per_tensor: None,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

impl GradReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_err < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares tape gradients against central differences for every tensor of
/// the parameter set returned by `params`. `loss` records a scalar loss for
/// the current parameter values.
pub fn check_gradients<S>(
    state: &mut S,
    params: impl Fn(&mut S) -> &mut ParamSet,
    mut loss: impl FnMut(&mut S, &mut Tape) -> Result<Var>,
    opts: GradCheck,
) -> Result<GradReport> {
    params(state).zero_grad();
    let mut tape = Tape::new();
    let l = loss(state, &mut tape)?;
    tape.backward(l)?;
    tape.accumulate_into(params(state))?;
    drop(tape);

    let ids: Vec<ParamId> = params(state).ids().collect();
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| {
            let t = params(state).get(id);
            t.grad().map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec)
        })
        .collect();

    let mut eval = |state: &mut S| -> Result<f64> {
        let mut tape = Tape::new();
        let l = loss(state, &mut tape)?;
        Ok(tape.value(l).data()[0])
    };

    let mut report = GradReport::default();
    for (slot, &id) in ids.iter().enumerate() {
        let len = params(state).get(id).len();
        let picks: Vec<usize> = match opts.max_per_tensor {
            Some(m) if m < len => (0..m).map(|i| i * len / m).collect(),
            _ => (0..len).collect(),
        };
        for idx in picks {
            let orig = params(state).get(id).data()[idx];
            params(state).get_mut(id).data_mut()[idx] = orig + opts.step;
            let plus = eval(state)?;
            params(state).get_mut(id).data_mut()[idx] = orig - opts.step;
            let minus = eval(state)?;
            params(state).get_mut(id).data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[slot][idx];
            let err = relative_error(a, numeric, opts.floor);
            report.checked += 1;
            if err >= report.max_rel_err {
                report.max_rel_err = err;
                report.worst_param = params(state).name(id).to_string();
                report.worst_index = idx;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}
