//! The one-step scalar GAIL system.
//!
//! For a fixed `(s, a)` pair with `x = D(s,a)`, `y = π(a|s)`, `E = π_E(a|s)`
//! and `c = p(s)`:
//!
//! ```text
//! dx/dt = c·y/x + c·E/(x − 1)                     + u1
//! dy/dt = −c·log x − c·λ·log y − c·λ              + u2
//! u1    = −k·(x − 1/2)
//! u2    = c·λ·log E + c·log(1/2) + c·λ + α·y/E − α
//! ```
//!
//! The uncontrolled system sets `u1 = u2 = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::mdp::DISC_CLAMP;

/// Lower bound on `y` during integration.
pub const Y_FLOOR: f64 = 1e-10;
/// Upper cap on `y` during integration; the scalar abstraction has no simplex.
pub const Y_CAP: f64 = 10.0;
pub const DEFAULT_DT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarSystemParams {
    /// State probability `p(s)`.
    pub c: f64,
    pub lambda: f64,
    /// Expert probability `π_E(a|s)`.
    #[serde(rename = "E", alias = "expert_prob")]
    pub expert_prob: f64,
    pub k: f64,
    pub alpha: f64,
}

impl ScalarSystemParams {
    pub fn new(c: f64, lambda: f64, expert_prob: f64, k: f64, alpha: f64) -> Result<Self> {
        let p = ScalarSystemParams { c, lambda, expert_prob, k, alpha };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(LabError::validation("c", None, format!("{} must be > 0", self.c)));
        }
        if !(self.expert_prob > 0.0 && self.expert_prob < 1.0) {
            return Err(LabError::validation("E", None, format!("{} not in (0, 1)", self.expert_prob)));
        }
        if !(self.lambda.is_finite() && self.k.is_finite() && self.alpha.is_finite()) {
            return Err(LabError::validation("params", None, "lambda, k and alpha must be finite"));
        }
        Ok(())
    }

    /// The desired state `(1/2, E)`.
    pub fn desired(&self) -> (f64, f64) {
        (0.5, self.expert_prob)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarState {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

impl ScalarState {
    pub fn new(x: f64, y: f64) -> Self {
        ScalarState { x, y, t: 0.0 }
    }

    pub fn desired(p: &ScalarSystemParams) -> Self {
        ScalarState::new(0.5, p.expert_prob)
    }

    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        (self.x - x).hypot(self.y - y)
    }

    pub fn distance_to_desired(&self, p: &ScalarSystemParams) -> f64 {
        self.distance_to(0.5, p.expert_prob)
    }
}

pub fn drift_uncontrolled(p: &ScalarSystemParams, s: &ScalarState) -> (f64, f64) {
    let (c, x, y) = (p.c, s.x, s.y);
    let dx = c * y / x + c * p.expert_prob / (x - 1.0);
    let dy = -c * x.ln() - c * p.lambda * y.ln() - c * p.lambda;
    (dx, dy)
}

/// Discriminator controller: linear negative feedback toward 1/2.
pub fn controller_u1(p: &ScalarSystemParams, s: &ScalarState) -> f64 {
    -p.k * (s.x - 0.5)
}

/// Policy controller: cancels the uncontrolled policy drift at `(1/2, E)` and
/// adds linear feedback of gain `α/E`.
pub fn controller_u2(p: &ScalarSystemParams, s: &ScalarState) -> f64 {
    let (c, l, e) = (p.c, p.lambda, p.expert_prob);
    c * l * e.ln() + c * 0.5_f64.ln() + c * l + p.alpha * s.y / e - p.alpha
}

pub fn drift_controlled(p: &ScalarSystemParams, s: &ScalarState) -> (f64, f64) {
    let (dx, dy) = drift_uncontrolled(p, s);
    (dx + controller_u1(p, s), dy + controller_u2(p, s))
}

pub fn drift(p: &ScalarSystemParams, s: &ScalarState, controlled: bool) -> (f64, f64) {
    if controlled {
        drift_controlled(p, s)
    } else {
        drift_uncontrolled(p, s)
    }
}

/// Analytic partial derivatives `[[∂ẋ/∂x, ∂ẋ/∂y], [∂ẏ/∂x, ∂ẏ/∂y]]` at any state.
pub fn drift_partials(p: &ScalarSystemParams, x: f64, y: f64, controlled: bool) -> [[f64; 2]; 2] {
    let c = p.c;
    let mut j = [
        [-c * y / (x * x) - c * p.expert_prob / ((x - 1.0) * (x - 1.0)), c / x],
        [-c / x, -c * p.lambda / y],
    ];
    if controlled {
        j[0][0] -= p.k;
        j[1][1] += p.alpha / p.expert_prob;
    }
    j
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Euler,
    #[default]
    Rk4,
}

impl std::str::FromStr for Integrator {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Integrator::Euler),
            "rk4" => Ok(Integrator::Rk4),
            other => Err(LabError::validation("integrator", None, format!("unknown `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarTrajectory {
    pub states: Vec<ScalarState>,
    pub dt: f64,
    pub integrator: Integrator,
    /// Steps whose end state was clamped into the domain.
    pub clamp_events: usize,
    /// Steps whose end state hit the `y` cap.
    pub cap_hits: usize,
}

impl ScalarTrajectory {
    pub fn last(&self) -> &ScalarState {
        self.states.last().expect("trajectory holds the initial state")
    }
}

/// Summary of an integration run when only the endpoint is kept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationSummary {
    pub terminal: ScalarState,
    pub clamp_events: usize,
    pub cap_hits: usize,
    /// Smallest distance to the target point seen along the way.
    pub min_distance: f64,
}

fn clamp_domain(x: f64, y: f64) -> (f64, f64) {
    (x.clamp(DISC_CLAMP, 1.0 - DISC_CLAMP), y.clamp(Y_FLOOR, Y_CAP))
}

fn step_once(p: &ScalarSystemParams, s: &ScalarState, controlled: bool, dt: f64, method: Integrator) -> (f64, f64) {
    // stage evaluations are kept inside the domain where the field is defined
    let f = |x: f64, y: f64| {
        let (x, y) = clamp_domain(x, y);
        drift(p, &ScalarState { x, y, t: s.t }, controlled)
    };
    match method {
        Integrator::Euler => {
            let (dx, dy) = f(s.x, s.y);
            (s.x + dt * dx, s.y + dt * dy)
        }
        Integrator::Rk4 => {
            let (k1x, k1y) = f(s.x, s.y);
            let (k2x, k2y) = f(s.x + 0.5 * dt * k1x, s.y + 0.5 * dt * k1y);
            let (k3x, k3y) = f(s.x + 0.5 * dt * k2x, s.y + 0.5 * dt * k2y);
            let (k4x, k4y) = f(s.x + dt * k3x, s.y + dt * k3y);
            (
                s.x + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x),
                s.y + dt / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y),
            )
        }
    }
}

/// Integrates and calls `visit` on every state including the initial one.
/// Returns `(clamp_events, cap_hits)`.
pub fn integrate_with(
    p: &ScalarSystemParams,
    init: ScalarState,
    controlled: bool,
    dt: f64,
    steps: usize,
    method: Integrator,
    mut visit: impl FnMut(&ScalarState),
) -> Result<(usize, usize)> {
    p.validate()?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(LabError::validation("dt", None, "must be positive and finite"));
    }
    if !(init.x.is_finite() && init.y.is_finite()) {
        return Err(LabError::NonFinite { step: 0, t: init.t });
    }
    let (x0, y0) = clamp_domain(init.x, init.y);
    let mut state = ScalarState { x: x0, y: y0, t: init.t };
    visit(&state);
    let (mut clamps, mut caps) = (0, 0);
    for step in 1..=steps {
        let (x, y) = step_once(p, &state, controlled, dt, method);
        let t = init.t + step as f64 * dt;
        if !(x.is_finite() && y.is_finite()) {
            return Err(LabError::NonFinite { step, t });
        }
        let (cx, cy) = clamp_domain(x, y);
        if y > Y_CAP {
            caps += 1;
        }
        if cx != x || (cy != y && y <= Y_CAP) {
            clamps += 1;
        }
        state = ScalarState { x: cx, y: cy, t };
        visit(&state);
    }
    Ok((clamps, caps))
}

/// Fixed-step integration keeping every state.
pub fn integrate(
    p: &ScalarSystemParams,
    init: ScalarState,
    controlled: bool,
    dt: f64,
    steps: usize,
    method: Integrator,
) -> Result<ScalarTrajectory> {
    let mut states = Vec::with_capacity(steps + 1);
    let (clamp_events, cap_hits) = integrate_with(p, init, controlled, dt, steps, method, |s| states.push(*s))?;
    Ok(ScalarTrajectory {
        states,
        dt,
        integrator: method,
        clamp_events,
        cap_hits,
    })
}

/// Integration keeping only the endpoint and the closest approach to `target`.
pub fn integrate_summary(
    p: &ScalarSystemParams,
    init: ScalarState,
    controlled: bool,
    dt: f64,
    steps: usize,
    method: Integrator,
    target: (f64, f64),
) -> Result<IntegrationSummary> {
    let mut terminal = init;
    let mut min_distance = f64::INFINITY;
    let (clamp_events, cap_hits) = integrate_with(p, init, controlled, dt, steps, method, |s| {
        terminal = *s;
        min_distance = min_distance.min(s.distance_to(target.0, target.1));
    })?;
    Ok(IntegrationSummary {
        terminal,
        clamp_events,
        cap_hits,
        min_distance,
    })
}

/// Trajectory CSV row.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub dx: f64,
    pub dy: f64,
    pub u1: f64,
    pub u2: f64,
    pub dist_to_desired: f64,
}

impl TrajectoryRow {
    pub fn at(p: &ScalarSystemParams, s: &ScalarState, controlled: bool) -> Self {
        let (dx, dy) = drift(p, s, controlled);
        let (u1, u2) = if controlled {
            (controller_u1(p, s), controller_u2(p, s))
        } else {
            (0.0, 0.0)
        };
        TrajectoryRow {
            t: s.t,
            x: s.x,
            y: s.y,
            dx,
            dy,
            u1,
            u2,
            dist_to_desired: s.distance_to_desired(p),
        }
    }
}

const ROOT_RESIDUAL: f64 = 1e-10;
const ROOT_DEDUP: f64 = 1e-7;

/// Damped Newton from a `grid × grid` lattice of seeds over
/// `(δ_D, 1 − δ_D) × (ε_y, Y_CAP]`. Returns deduplicated roots (sorted by `x`
/// then `y`) whose drift residual is below 1e-10.
pub fn find_equilibria(p: &ScalarSystemParams, controlled: bool, grid: usize) -> Result<Vec<(f64, f64)>> {
    p.validate()?;
    if grid < 2 {
        return Err(LabError::validation("grid", None, "must be at least 2"));
    }
    let mut roots: Vec<(f64, f64)> = Vec::new();
    for i in 0..grid {
        for j in 0..grid {
            let x0 = 0.01 + 0.98 * i as f64 / (grid - 1) as f64;
            let y0 = 0.01 + (Y_CAP - 0.01) * j as f64 / (grid - 1) as f64;
            if let Some(r) = newton(p, controlled, x0, y0) {
                if !roots.iter().any(|q| (q.0 - r.0).hypot(q.1 - r.1) < ROOT_DEDUP) {
                    roots.push(r);
                }
            }
        }
    }
    roots.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    Ok(roots)
}

/// Max-abs drift at `(x, y)`.
pub fn residual(p: &ScalarSystemParams, controlled: bool, x: f64, y: f64) -> f64 {
    let (dx, dy) = drift(p, &ScalarState::new(x, y), controlled);
    dx.abs().max(dy.abs())
}

fn newton(p: &ScalarSystemParams, controlled: bool, mut x: f64, mut y: f64) -> Option<(f64, f64)> {
    for _ in 0..200 {
        let (fx, fy) = drift(p, &ScalarState::new(x, y), controlled);
        if fx.abs().max(fy.abs()) < ROOT_RESIDUAL {
            return Some((x, y));
        }
        let j = drift_partials(p, x, y, controlled);
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if !det.is_finite() || det == 0.0 {
            return None;
        }
        let sx = (j[1][1] * fx - j[0][1] * fy) / det;
        let sy = (-j[1][0] * fx + j[0][0] * fy) / det;
        // damp so the iterate stays inside the open domain
        let mut scale = 1.0;
        loop {
            let (nx, ny) = (x - scale * sx, y - scale * sy);
            if nx > DISC_CLAMP && nx < 1.0 - DISC_CLAMP && ny > Y_FLOOR && ny <= Y_CAP {
                x = nx;
                y = ny;
                break;
            }
            scale *= 0.5;
            if scale < 1e-12 {
                return None;
            }
        }
    }
    (residual(p, controlled, x, y) < ROOT_RESIDUAL).then_some((x, y))
}
