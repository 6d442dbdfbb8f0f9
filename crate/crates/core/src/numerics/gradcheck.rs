//! Central finite-difference oracle for checking tape gradients.

use super::{ParamStore, Tensor};

/// Relative-error denominator floor.
pub const DENOM_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct Mismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub mismatches: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(DENOM_FLOOR)
}

/// Compares `analytic` (one tensor per parameter, store order) with
/// `(f(p + h) − f(p − h)) / 2h` for every scalar parameter.
pub fn check_gradients(
    params: &ParamStore,
    analytic: &[Tensor],
    mut loss: impl FnMut(&ParamStore) -> f64,
    step: f64,
    tolerance: f64,
) -> GradCheckReport {
    let mut report = GradCheckReport::default();
    let mut probe = params.clone();
    for (pi, name) in params.names().iter().enumerate() {
        for i in 0..params.tensors()[pi].len() {
            let orig = params.tensors()[pi].data()[i];
            probe.tensors_mut()[pi].data_mut()[i] = orig + step;
            let up = loss(&probe);
            probe.tensors_mut()[pi].data_mut()[i] = orig - step;
            let down = loss(&probe);
            probe.tensors_mut()[pi].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[pi].data()[i];
            let rel = relative_error(a, numeric);
            report.checked += 1;
            report.max_rel_error = report.max_rel_error.max(rel);
            if !(rel < tolerance) {
                report.mismatches.push(Mismatch {
                    param: name.clone(),
                    index: i,
                    analytic: a,
                    numeric,
                    rel_error: rel,
                });
            }
        }
    }
    report
}
