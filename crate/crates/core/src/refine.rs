//! Test-time refinement of detections by guarded gradient ascent on `f`.
//!
//! Each iteration proposes `ỹ = y + λ ∇_y f(x, y)` and accepts it only if
//! `f(x, ỹ) > f(x, y)`; otherwise the step length decays `λ ← ηλ`.
//!
//! Evaluation count per detection with `T ≥ 1`: one value+gradient pass at
//! the start, one value pass per proposal (`T`), and one value+gradient pass
//! after every accepted step that is followed by another iteration. That is
//! at most `T` gradient passes and at most `2T` energy evaluations. `T = 0`
//! performs a single value pass for the trace and leaves the box untouched.

use crate::error::{Error, Result};
use crate::energynet::EnergyNet;
use crate::featuregrid::FeatureGrid;
use crate::geometry::Box3;
use crate::scalar::Real;

/// Lower bound applied to `h`, `w`, `l` after refinement.
pub const SIZE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineConfig {
    /// Iterations `T`.
    pub iterations: usize,
    /// Initial step length `λ`.
    pub lambda: f64,
    /// Decay factor `η`.
    pub eta: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { iterations: 10, lambda: 2e-4, eta: 0.5 }
    }
}

impl RefineConfig {
    pub fn new(iterations: usize, lambda: f64, eta: f64) -> Result<Self> {
        let c = Self { iterations, lambda, eta };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Config(format!("eta must be in (0, 1), got {}", self.eta)));
        }
        Ok(())
    }
}

/// A scored box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection<T> {
    pub bbox: Box3<T>,
    pub score: T,
}

impl<T: Real> Detection<T> {
    pub fn new(bbox: Box3<T>, score: T) -> Result<Self> {
        if !(score > T::zero() && score < T::one()) {
            return Err(Error::Input(format!("detection score must be in (0, 1), got {score}")));
        }
        bbox.validate()?;
        Ok(Self { bbox, score })
    }

    pub fn cast<U: Real>(&self) -> Detection<U> {
        Detection { bbox: self.bbox.cast(), score: U::lit(self.score.to_f64_lossy()) }
    }
}

/// One proposal of the ascent loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineStep<T> {
    pub iteration: usize,
    /// `f` at the proposal.
    pub value: T,
    pub accepted: bool,
    /// Step length used for this proposal.
    pub lambda: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineTrace<T> {
    /// `f` at the input box.
    pub initial: T,
    pub steps: Vec<RefineStep<T>>,
    pub grad_evals: usize,
    pub value_evals: usize,
}

impl<T: Real> RefineTrace<T> {
    /// `f` at the returned box (before any size clamp).
    pub fn final_value(&self) -> T {
        self.steps.iter().rev().find(|s| s.accepted).map_or(self.initial, |s| s.value)
    }

    /// Values of the accepted iterates, starting with the initial value.
    pub fn accepted_values(&self) -> Vec<T> {
        std::iter::once(self.initial)
            .chain(self.steps.iter().filter(|s| s.accepted).map(|s| s.value))
            .collect()
    }
}

fn add_scaled<T: Real>(y: &Box3<T>, g: &[T; 7], lambda: T) -> Box3<T> {
    let mut a = y.to_array();
    for (v, d) in a.iter_mut().zip(g) {
        *v = *v + lambda * *d;
    }
    Box3::from_array(a)
}

fn iter_err(i: usize, e: Error) -> Error {
    Error::Numeric(format!("refinement iteration {i}: {e}"))
}

/// Refines one detection; the score is passed through unchanged.
pub fn refine_one<T: Real>(
    net: &EnergyNet<T>,
    grid: &FeatureGrid<T>,
    det: &Detection<T>,
    cfg: &RefineConfig,
) -> Result<(Detection<T>, RefineTrace<T>)> {
    cfg.validate()?;
    let pool = net.dims().pool;
    let eval_grad = |y: &Box3<T>| net.evaluate(grid, y, &pool, true, false);
    let eval_value = |y: &Box3<T>| -> Result<T> { Ok(net.forward(grid, y, &pool)?.value) };

    if cfg.iterations == 0 {
        let initial = eval_value(&det.bbox).map_err(|e| iter_err(0, e))?;
        let trace = RefineTrace { initial, steps: Vec::new(), grad_evals: 0, value_evals: 1 };
        return Ok((*det, trace));
    }

    let first = eval_grad(&det.bbox).map_err(|e| iter_err(0, e))?;
    let mut trace = RefineTrace { initial: first.value, steps: Vec::with_capacity(cfg.iterations), grad_evals: 1, value_evals: 1 };
    let mut y = det.bbox;
    let mut prev = first.value;
    let mut grad = first.grad_box.expect("requested");
    let mut lambda = T::lit(cfg.lambda);
    let eta = T::lit(cfg.eta);

    for t in 0..cfg.iterations {
        let proposal = add_scaled(&y, &grad, lambda);
        let value = eval_value(&proposal).map_err(|e| iter_err(t, e))?;
        trace.value_evals += 1;
        let accepted = value > prev;
        trace.steps.push(RefineStep { iteration: t, value, accepted, lambda });
        if accepted {
            y = proposal;
            prev = value;
            if t + 1 < cfg.iterations {
                let e = eval_grad(&y).map_err(|e| iter_err(t + 1, e))?;
                trace.grad_evals += 1;
                trace.value_evals += 1;
                grad = e.grad_box.expect("requested");
            }
        } else {
            lambda = lambda * eta;
        }
    }

    let floor = T::lit(SIZE_FLOOR);
    if y.h < floor || y.w < floor || y.l < floor {
        log::warn!("refined box size ({}, {}, {}) clamped to {SIZE_FLOOR}", y.h, y.w, y.l);
        y.h = y.h.max(floor);
        y.w = y.w.max(floor);
        y.l = y.l.max(floor);
    }
    Ok((Detection { bbox: y, score: det.score }, trace))
}

/// Refines every detection independently, preserving order.
pub fn refine_all<T: Real>(
    net: &EnergyNet<T>,
    grid: &FeatureGrid<T>,
    dets: &[Detection<T>],
    cfg: &RefineConfig,
) -> Result<Vec<Detection<T>>> {
    dets.iter().map(|d| refine_one(net, grid, d, cfg).map(|r| r.0)).collect()
}

/// Like [`refine_all`] but keeps the traces.
pub fn refine_all_traced<T: Real>(
    net: &EnergyNet<T>,
    grid: &FeatureGrid<T>,
    dets: &[Detection<T>],
    cfg: &RefineConfig,
) -> Result<Vec<(Detection<T>, RefineTrace<T>)>> {
    dets.iter().map(|d| refine_one(net, grid, d, cfg)).collect()
}

/// Trace CSV: `scene,detection,iteration,f,accepted,lambda`. The initial
/// value appears as iteration `-1` with `accepted = 1`.
pub fn trace_csv<T: Real>(traces: &[(u64, usize, &RefineTrace<T>)], comment: &str) -> String {
    let mut out = crate::csv::CsvText::new(comment, &["scene", "detection", "iteration", "f", "accepted", "lambda"]);
    for (scene, idx, tr) in traces {
        out.row([
            scene.to_string(),
            idx.to_string(),
            "-1".to_string(),
            crate::csv::fmt_f64(tr.initial.to_f64_lossy()),
            "1".to_string(),
            String::new(),
        ]);
        for s in &tr.steps {
            out.row([
                scene.to_string(),
                idx.to_string(),
                s.iteration.to_string(),
                crate::csv::fmt_f64(s.value.to_f64_lossy()),
                u8::from(s.accepted).to_string(),
                crate::csv::fmt_f64(s.lambda.to_f64_lossy()),
            ]);
        }
    }
    out.finish()
}
