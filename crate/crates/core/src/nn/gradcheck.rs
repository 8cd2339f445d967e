//! Central finite-difference oracle for analytic gradients.
//!
//! The oracle only evaluates the scalar loss; it never touches the tape.
//! Coordinates where the loss is not differentiable within `±h` (a ReLU
//! kink, a top-k selection flip, a `min` switch) are detected by comparing
//! the one-sided slopes and reported separately instead of being compared.
//! A coordinate that misses `tol` is re-probed at `h/2`: a kink inside the
//! stencil shows up as a slope jump that does not shrink with the step.

use super::params::{Gradients, ParamStore};

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub skipped_nonsmooth: usize,
    pub max_rel_err: f64,
    pub worst: Option<(String, f64, f64)>,
}

impl GradCheckReport {
    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.skipped_nonsmooth += other.skipped_nonsmooth;
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
    }

    pub fn skipped_fraction(&self) -> f64 {
        let total = self.checked + self.skipped_nonsmooth;
        if total == 0 {
            0.0
        } else {
            self.skipped_nonsmooth as f64 / total as f64
        }
    }
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare `analytic` against central differences of `loss` for every
/// scalar in `store` (or every `stride`-th scalar).
pub fn check_gradients(
    store: &ParamStore<f64>,
    analytic: &Gradients<f64>,
    loss: impl FnMut(&ParamStore<f64>) -> f64,
    h: f64,
    floor: f64,
    stride: usize,
) -> GradCheckReport {
    check_gradients_tol(store, analytic, loss, h, floor, stride, f64::INFINITY)
}

/// As [`check_gradients`], but coordinates whose error exceeds `tol` are
/// re-probed at `h/2` and counted as non-smooth when a kink explains the
/// discrepancy.
pub fn check_gradients_tol(
    store: &ParamStore<f64>,
    analytic: &Gradients<f64>,
    mut loss: impl FnMut(&ParamStore<f64>) -> f64,
    h: f64,
    floor: f64,
    stride: usize,
    tol: f64,
) -> GradCheckReport {
    let flat = analytic.flatten(store);
    let names: Vec<(String, usize)> = store
        .iter()
        .flat_map(|(_, p)| (0..p.value.len()).map(move |i| (p.name.clone(), i)))
        .collect();
    let mut work = store.clone();
    let f0 = loss(&work);
    let mut report = GradCheckReport::default();
    for idx in (0..flat.len()).step_by(stride.max(1)) {
        let orig = *work.scalar_mut(idx);
        *work.scalar_mut(idx) = orig + h;
        let fp = loss(&work);
        *work.scalar_mut(idx) = orig - h;
        let fm = loss(&work);
        *work.scalar_mut(idx) = orig;

        let right = (fp - f0) / h;
        let left = (f0 - fm) / h;
        let central = (fp - fm) / (2.0 * h);
        let scale = right.abs().max(left.abs()).max(1e-3);
        if (right - left).abs() > 1e-2 * scale {
            report.skipped_nonsmooth += 1;
            continue;
        }
        let e = rel_err(flat[idx], central, floor);
        if e > tol {
            let half = h / 2.0;
            *work.scalar_mut(idx) = orig + half;
            let fp2 = loss(&work);
            *work.scalar_mut(idx) = orig - half;
            let fm2 = loss(&work);
            *work.scalar_mut(idx) = orig;
            // Both measures are O(h^2) for a smooth loss. With a kink at
            // distance u*h, one of them is at least the central-difference
            // error for every u in (0, 1).
            let jump = (2.0 * ((fp2 - f0) - (f0 - fm2)) / half - (right - left)).abs();
            let drift = 4.0 * (central - (fp2 - fm2) / h).abs();
            if jump.max(drift) >= (flat[idx] - central).abs() {
                report.skipped_nonsmooth += 1;
                continue;
            }
        }
        report.checked += 1;
        if e > report.max_rel_err {
            report.max_rel_err = e;
            let (name, i) = &names[idx];
            report.worst = Some((format!("{name}[{i}]"), flat[idx], central));
        }
    }
    report
}
