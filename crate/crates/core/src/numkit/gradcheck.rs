//! Central finite-difference gradient checking.

use super::{Gradients, ParameterSet};

/// Entries whose analytic and numeric magnitudes are both below this are
/// compared on an absolute scale of `DENOM_FLOOR`.
pub const DENOM_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }

    pub fn merge(mut self, other: GradCheckReport) -> GradCheckReport {
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst_param = other.worst_param;
        }
        self.checked += other.checked;
        self
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

/// Compares `analytic` against `(L(θ+h) − L(θ−h)) / 2h` for every scalar in `params`.
pub fn check_parameters(
    params: &ParameterSet,
    analytic: &Gradients,
    mut loss: impl FnMut(&ParameterSet) -> f64,
    h: f64,
) -> GradCheckReport {
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        checked: 0,
    };
    for t in 0..params.len() {
        for k in 0..params.get(t).data().len() {
            let orig = params.get(t).data()[k];
            probe.get_mut(t).data_mut()[k] = orig + h;
            let plus = loss(&probe);
            probe.get_mut(t).data_mut()[k] = orig - h;
            let minus = loss(&probe);
            probe.get_mut(t).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic.get(t).data()[k], numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = format!("{}[{k}]", params.name(t));
            }
        }
    }
    report
}

/// Same as [`check_parameters`] but over a flat input vector.
pub fn check_vector(
    point: &[f64],
    analytic: &[f64],
    mut f: impl FnMut(&[f64]) -> f64,
    h: f64,
) -> GradCheckReport {
    let mut probe = point.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        checked: 0,
    };
    for k in 0..point.len() {
        probe[k] = point[k] + h;
        let plus = f(&probe);
        probe[k] = point[k] - h;
        let minus = f(&probe);
        probe[k] = point[k];
        let err = relative_error(analytic[k], (plus - minus) / (2.0 * h));
        report.checked += 1;
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_param = format!("x[{k}]");
        }
    }
    report
}
