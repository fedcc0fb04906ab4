//! GLM objectives in the composite SDCA form and the one-dimensional
//! coordinate subproblem.
//!
//! Convention used throughout the crate: the stored shared vector is the
//! primal-scaled `w = (1/(lambda*n)) * sum_i alpha_i x_i`. The raw dual
//! aggregate `v = sum_i alpha_i x_i` satisfies `v = lambda*n*w`, so the
//! coordinate bookkeeping becomes `w += (delta/(lambda*n)) * x_j`.
//!
//! Primal objectives:
//! * logistic: `P(w) = (1/n) sum_i log(1+exp(-y_i x_i.w)) + (lambda/2)||w||^2`
//! * ridge:    `P(w) = (1/(2n)) sum_i (x_i.w - y_i)^2 + (lambda/2)||w||^2`
//!
//! Duals are the standard SDCA duals of these objectives.

use crate::data::Dataset;
use crate::{Error, Result};

pub const DEFAULT_NEWTON_TOL: f64 = 1e-12;
pub const DEFAULT_NEWTON_MAX_ITER: usize = 100;

/// Clamp for the logistic dual variable `a = y*alpha`, kept in
/// `[CLAMP_EPS, 1 - CLAMP_EPS]` during the 1-D solve.
pub const CLAMP_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Logistic,
    Ridge,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub kind: LossKind,
    pub lambda: f64,
}

impl Objective {
    pub fn new(kind: LossKind, lambda: f64) -> Result<Self> {
        if lambda.is_nan() || lambda <= 0.0 {
            return Err(Error::InvalidConfig(format!("lambda must be > 0, got {lambda}")));
        }
        Ok(Objective { kind, lambda })
    }
}

/// Snapshot of everything the 1-D coordinate subproblem needs.
#[derive(Clone, Copy, Debug)]
pub struct CoordState {
    pub alpha_j: f64,
    pub label_j: f64,
    /// `x_j . w` against the current (primal-scaled) shared vector.
    pub dot_j: f64,
    pub norm_sq_j: f64,
    pub n: usize,
}

/// Closed-form exact minimizer of the ridge coordinate objective.
pub fn ridge_delta(s: &CoordState, obj: &Objective) -> f64 {
    debug_assert_eq!(obj.kind, LossKind::Ridge);
    (s.label_j - s.dot_j - s.alpha_j) / (1.0 + s.norm_sq_j / (obj.lambda * s.n as f64))
}

/// 1-D logistic subproblem: safeguarded Newton on the derivative of the dual
/// coordinate objective, with bisection fallback on the bracketing interval.
///
/// With `a = y_j*(alpha_j + delta)` the stationarity condition is
/// `G(a) = ln((1-a)/a) - y*dot - (a - a0)*||x||^2/(lambda*n) = 0`,
/// which is strictly decreasing on (0, 1) and therefore has a unique root.
/// The returned delta keeps `y_j*(alpha_j + delta)` in [0, 1].
pub fn logistic_delta(s: &CoordState, obj: &Objective, tol: f64, max_iter: usize) -> Result<f64> {
    debug_assert_eq!(obj.kind, LossKind::Logistic);
    if !(s.alpha_j.is_finite() && s.dot_j.is_finite() && s.norm_sq_j.is_finite()) {
        return Err(Error::InvalidData("non-finite coordinate state".into()));
    }
    if s.label_j != 1.0 && s.label_j != -1.0 {
        return Err(Error::InvalidData(format!(
            "logistic labels must be -1 or +1, got {}",
            s.label_j
        )));
    }
    let y = s.label_j;
    let q = s.norm_sq_j / (obj.lambda * s.n as f64);
    let a0 = (y * s.alpha_j).clamp(0.0, 1.0);
    let ydot = y * s.dot_j;
    let g = |a: f64| ((1.0 - a) / a).ln() - ydot - (a - a0) * q;

    let lo0 = CLAMP_EPS;
    let hi0 = 1.0 - CLAMP_EPS;
    // Root pinned at (or beyond) a boundary: the constrained optimum is the
    // clamp value itself.
    if g(lo0) <= 0.0 {
        return Ok(y * (lo0 - a0));
    }
    if g(hi0) >= 0.0 {
        return Ok(y * (hi0 - a0));
    }

    let mut lo = lo0;
    let mut hi = hi0;
    let mut a = a0.clamp(1e-6, 1.0 - 1e-6);
    for _ in 0..max_iter {
        let gv = g(a);
        if gv.abs() <= tol {
            break;
        }
        if gv > 0.0 {
            lo = a;
        } else {
            hi = a;
        }
        if hi - lo < 1e-14 {
            break;
        }
        let gp = -1.0 / a - 1.0 / (1.0 - a) - q;
        let next = a - gv / gp;
        a = if next > lo && next < hi {
            next
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok(y * (a - a0))
}

/// Coordinate update for either objective, with the default inner-solver
/// settings for logistic.
pub fn coord_delta(obj: &Objective, s: &CoordState) -> Result<f64> {
    match obj.kind {
        LossKind::Ridge => Ok(ridge_delta(s, obj)),
        LossKind::Logistic => logistic_delta(s, obj, DEFAULT_NEWTON_TOL, DEFAULT_NEWTON_MAX_ITER),
    }
}

/// Numerically stable log(1 + exp(z)).
pub(crate) fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn norm_sq(w: &[f64]) -> f64 {
    w.iter().map(|x| x * x).sum()
}

/// Full primal objective `P(w)` on the training set.
pub fn primal_value(w: &[f64], ds: &Dataset, obj: &Objective) -> Result<f64> {
    if w.len() != ds.d() {
        return Err(Error::DimensionMismatch {
            expected: ds.d(),
            got: w.len(),
        });
    }
    let n = ds.n() as f64;
    let loss: f64 = (0..ds.n())
        .map(|j| {
            let dot = ds.col(j).dot(w);
            let y = ds.label(j);
            match obj.kind {
                LossKind::Logistic => log1p_exp(-y * dot),
                LossKind::Ridge => 0.5 * (dot - y) * (dot - y),
            }
        })
        .sum();
    Ok(loss / n + 0.5 * obj.lambda * norm_sq(w))
}

fn entropy(a: f64) -> f64 {
    let mut h = 0.0;
    if a > 0.0 {
        h -= a * a.ln();
    }
    if a < 1.0 {
        h -= (1.0 - a) * (1.0 - a).ln();
    }
    h
}

/// SDCA dual objective `D(alpha)`, with `w` the primal-scaled aggregate of
/// `alpha` (the caller maintains that correspondence).
pub fn dual_value(alpha: &[f64], w: &[f64], ds: &Dataset, obj: &Objective) -> Result<f64> {
    if alpha.len() != ds.n() {
        return Err(Error::DimensionMismatch {
            expected: ds.n(),
            got: alpha.len(),
        });
    }
    if w.len() != ds.d() {
        return Err(Error::DimensionMismatch {
            expected: ds.d(),
            got: w.len(),
        });
    }
    let n = ds.n() as f64;
    let mut sum = 0.0;
    for (j, &a_j) in alpha.iter().enumerate() {
        let y = ds.label(j);
        match obj.kind {
            LossKind::Logistic => {
                let a = y * a_j;
                if !(-1e-9..=1.0 + 1e-9).contains(&a) {
                    return Err(Error::InvalidData(format!(
                        "logistic dual variable y*alpha = {a} outside [0, 1] at coordinate {j}"
                    )));
                }
                sum += entropy(a.clamp(0.0, 1.0));
            }
            LossKind::Ridge => sum += y * a_j - 0.5 * a_j * a_j,
        }
    }
    Ok(sum / n - 0.5 * obj.lambda * norm_sq(w))
}

/// Primal minus dual; non-negative (up to round-off) whenever `w` is exactly
/// the primal-scaled aggregate of `alpha`.
pub fn duality_gap(alpha: &[f64], w: &[f64], ds: &Dataset, obj: &Objective) -> Result<f64> {
    Ok(primal_value(w, ds, obj)? - dual_value(alpha, w, ds, obj)?)
}
