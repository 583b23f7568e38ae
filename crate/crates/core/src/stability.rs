//! Linearized stability of the controlled one-step system at `(1/2, E)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::onestep::{drift_controlled, integrate_summary, Integrator, ScalarState, ScalarSystemParams};

/// Below this, `|det|` or `|trace|` makes the linearization inconclusive.
pub const MARGINAL_TOL: f64 = 1e-9;
const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Jacobian2x2 {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
    pub det: f64,
    pub trace: f64,
    pub eig_real: [f64; 2],
    pub eig_imag: [f64; 2],
}

impl Jacobian2x2 {
    pub fn from_entries(a11: f64, a12: f64, a21: f64, a22: f64) -> Self {
        let det = a11 * a22 - a12 * a21;
        let trace = a11 + a22;
        let (eig_real, eig_imag) = eigenvalues(trace, det);
        Jacobian2x2 { a11, a12, a21, a22, det, trace, eig_real, eig_imag }
    }

    pub fn entries(&self) -> [[f64; 2]; 2] {
        [[self.a11, self.a12], [self.a21, self.a22]]
    }

    /// `|μ² − trace·μ + det|` for eigenvalue `i`, evaluated in complex arithmetic.
    pub fn characteristic_residual(&self, i: usize) -> f64 {
        let (re, im) = (self.eig_real[i], self.eig_imag[i]);
        let sq_re = re * re - im * im;
        let sq_im = 2.0 * re * im;
        let r = sq_re - self.trace * re + self.det;
        let c = sq_im - self.trace * im;
        r.hypot(c)
    }
}

/// Roots of `μ² − trace·μ + det`, with the cancellation-free form for real roots.
fn eigenvalues(trace: f64, det: f64) -> ([f64; 2], [f64; 2]) {
    let half = 0.5 * trace;
    let disc = half * half - det;
    if disc >= 0.0 {
        let root = disc.sqrt();
        let big = if half >= 0.0 { half + root } else { half - root };
        if big == 0.0 {
            return ([0.0, 0.0], [0.0, 0.0]);
        }
        let small = det / big;
        let mut pair = [big, small];
        pair.sort_by(|a, b| b.total_cmp(a));
        (pair, [0.0, 0.0])
    } else {
        let im = (-disc).sqrt();
        ([half, half], [im, -im])
    }
}

/// Entries `[−8cE − k, 2c; −2c, (α − cλ)/E]`.
pub fn jacobian_closed_form(p: &ScalarSystemParams) -> Jacobian2x2 {
    let (c, e) = (p.c, p.expert_prob);
    Jacobian2x2::from_entries(-8.0 * c * e - p.k, 2.0 * c, -2.0 * c, (-c * p.lambda + p.alpha) / e)
}

/// Central finite differences of the controlled drift at `(1/2, E)`.
pub fn jacobian_numeric(p: &ScalarSystemParams) -> Jacobian2x2 {
    let (x0, y0) = p.desired();
    let f = |x: f64, y: f64| drift_controlled(p, &ScalarState::new(x, y));
    let (fxp, fxm) = (f(x0 + FD_STEP, y0), f(x0 - FD_STEP, y0));
    let (fyp, fym) = (f(x0, y0 + FD_STEP), f(x0, y0 - FD_STEP));
    let h2 = 2.0 * FD_STEP;
    Jacobian2x2::from_entries(
        (fxp.0 - fxm.0) / h2,
        (fyp.0 - fym.0) / h2,
        (fxp.1 - fxm.1) / h2,
        (fyp.1 - fym.1) / h2,
    )
}

/// The determinant as printed in the original stability proof,
/// `((8c²λ − 8cα − 4c²)E + ckλ − kα)/E`. Kept for comparison only; the
/// determinant of the closed-form entries is authoritative.
pub fn printed_determinant(p: &ScalarSystemParams) -> f64 {
    let (c, l, e, k, a) = (p.c, p.lambda, p.expert_prob, p.k, p.alpha);
    ((8.0 * c * c * l - 8.0 * c * a - 4.0 * c * c) * e + (c * k * l - k * a)) / e
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub holds: bool,
    /// `[k, 8c²λ − 8cα − 4c² + ckλ − kα, (k² + 32c(α − cλ))/(32c)]`
    pub terms: [f64; 3],
}

/// `k > 0`, `8c²λ − 8cα − 4c² + ckλ − kα > 0`, `(k² + 32c(−cλ + α))/(32c) < 0`.
pub fn assumption_check(p: &ScalarSystemParams) -> AssumptionCheck {
    let (c, l, k, a) = (p.c, p.lambda, p.k, p.alpha);
    let det_side = 8.0 * c * c * l - 8.0 * c * a - 4.0 * c * c + c * k * l - k * a;
    let trace_side = (k * k + 32.0 * c * (-c * l + a)) / (32.0 * c);
    AssumptionCheck {
        holds: k > 0.0 && det_side > 0.0 && trace_side < 0.0,
        terms: [k, det_side, trace_side],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StabilityVerdict {
    pub assumption_holds: bool,
    /// Both eigenvalue real parts negative.
    pub eig_stable: bool,
    /// `det > 0` and `trace < 0`.
    pub det_trace_stable: bool,
    pub agree: bool,
    /// `|det|` or `|trace|` below [`MARGINAL_TOL`].
    pub marginal: bool,
}

pub fn classify(p: &ScalarSystemParams) -> StabilityVerdict {
    verdict(p, &jacobian_closed_form(p))
}

fn verdict(p: &ScalarSystemParams, j: &Jacobian2x2) -> StabilityVerdict {
    let eig_stable = j.eig_real.iter().all(|r| *r < 0.0);
    let det_trace_stable = j.det > 0.0 && j.trace < 0.0;
    StabilityVerdict {
        assumption_holds: assumption_check(p).holds,
        eig_stable,
        det_trace_stable,
        agree: eig_stable == det_trace_stable,
        marginal: j.det.abs() < MARGINAL_TOL || j.trace.abs() < MARGINAL_TOL,
    }
}

/// Closed interval `[lo, hi]` sampled at `resolution` evenly spaced points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub fn points(&self, resolution: usize) -> Vec<f64> {
        if resolution <= 1 || self.lo == self.hi {
            return vec![self.lo];
        }
        (0..resolution)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / (resolution - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRanges {
    pub c: Range,
    pub lambda: Range,
    #[serde(rename = "E")]
    pub expert_prob: Range,
    pub k: Range,
    pub alpha: Range,
}

impl ParamRanges {
    /// All grid tuples in lexicographic `(c, λ, E, k, α)` order.
    pub fn grid(&self, resolution: usize) -> Vec<ScalarSystemParams> {
        let mut out = Vec::new();
        for &c in &self.c.points(resolution) {
            for &lambda in &self.lambda.points(resolution) {
                for &expert_prob in &self.expert_prob.points(resolution) {
                    for &k in &self.k.points(resolution) {
                        for &alpha in &self.alpha.points(resolution) {
                            out.push(ScalarSystemParams { c, lambda, expert_prob, k, alpha });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditSettings {
    pub dt: f64,
    /// Integration horizon in time units.
    pub horizon: f64,
    /// Terminal distance below which a trajectory counts as converged.
    pub tolerance: f64,
    /// Initial offset from `(1/2, E)` is `(offset, offset·E)`.
    pub offset: f64,
}

impl Default for AuditSettings {
    fn default() -> Self {
        AuditSettings { dt: 1e-3, horizon: 50.0, tolerance: 1e-6, offset: 0.02 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditRow {
    pub params: ScalarSystemParams,
    pub assumption_holds: bool,
    pub jacobian: Jacobian2x2,
    pub verdict: StabilityVerdict,
    pub converged: bool,
    pub terminal_distance: f64,
    pub clamp_events: usize,
    /// Assumption holds but the trajectory failed to converge or the
    /// linearization is unstable. Marginal rows are never counterexamples.
    pub counterexample: bool,
}

/// Audit CSV row.
#[derive(Debug, Clone, Serialize)]
pub struct AuditCsvRow {
    pub c: f64,
    pub lambda: f64,
    #[serde(rename = "E")]
    pub expert_prob: f64,
    pub k: f64,
    pub alpha: f64,
    pub assumption_holds: bool,
    pub det: f64,
    pub trace: f64,
    pub eig1_re: f64,
    pub eig1_im: f64,
    pub eig2_re: f64,
    pub eig2_im: f64,
    pub converged: bool,
    pub terminal_distance: f64,
}

impl From<&AuditRow> for AuditCsvRow {
    fn from(r: &AuditRow) -> Self {
        let j = &r.jacobian;
        AuditCsvRow {
            c: r.params.c,
            lambda: r.params.lambda,
            expert_prob: r.params.expert_prob,
            k: r.params.k,
            alpha: r.params.alpha,
            assumption_holds: r.assumption_holds,
            det: j.det,
            trace: j.trace,
            eig1_re: j.eig_real[0],
            eig1_im: j.eig_imag[0],
            eig2_re: j.eig_real[1],
            eig2_im: j.eig_imag[1],
            converged: r.converged,
            terminal_distance: r.terminal_distance,
        }
    }
}

/// Classifies one tuple and integrates a perturbed controlled trajectory.
pub fn audit_tuple(p: &ScalarSystemParams, settings: &AuditSettings) -> Result<AuditRow> {
    let jacobian = jacobian_closed_form(p);
    let verdict = verdict(p, &jacobian);
    let (x0, y0) = p.desired();
    let init = ScalarState::new(x0 + settings.offset, y0 + settings.offset * p.expert_prob);
    let steps = (settings.horizon / settings.dt).round() as usize;
    let (terminal_distance, clamp_events) =
        match integrate_summary(p, init, true, settings.dt, steps, Integrator::Rk4, (x0, y0)) {
            Ok(s) => (s.terminal.distance_to(x0, y0), s.clamp_events),
            Err(LabError::NonFinite { .. }) => (f64::INFINITY, 0),
            Err(e) => return Err(e),
        };
    let converged = terminal_distance < settings.tolerance;
    Ok(AuditRow {
        params: *p,
        assumption_holds: verdict.assumption_holds,
        jacobian,
        verdict,
        converged,
        terminal_distance,
        clamp_events,
        counterexample: verdict.assumption_holds && !verdict.marginal && !(converged && verdict.eig_stable),
    })
}

/// Audits every tuple of the grid in parallel; rows come back in grid order.
pub fn grid_audit(ranges: &ParamRanges, resolution: usize, settings: &AuditSettings) -> Result<Vec<AuditRow>> {
    audit_tuples(&ranges.grid(resolution), settings)
}

pub fn audit_tuples(tuples: &[ScalarSystemParams], settings: &AuditSettings) -> Result<Vec<AuditRow>> {
    if !(settings.dt > 0.0 && settings.horizon.is_finite() && settings.horizon > 0.0) {
        return Err(LabError::validation("audit", None, "dt and horizon must be positive and finite"));
    }
    for p in tuples {
        p.validate()?;
    }
    tuples.par_iter().map(|p| audit_tuple(p, settings)).collect()
}
