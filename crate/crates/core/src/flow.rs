//! Continuous-time GAIL gradient flow on tabular MDPs.
//!
//! The discriminator ascends `V_D` and the policy descends `V_π`, both in
//! function space:
//!
//! ```text
//! dD/dt(s,a) = ρ_π(s)π(a|s)/D(s,a) − ρ_E(s)π_E(a|s)/(1 − D(s,a))
//! dπ/dt(a|s) = −ρ_π(s) A^π(s,a)
//! ```
//!
//! where `A^π` is the advantage under reward `log D + λ log π`.

use serde::Serialize;

use crate::error::{LabError, Result};
use crate::mdp::{
    advantage, solve_occupancy, solve_q_entropy, DiscriminatorTable, PolicyTable, TabularMdp, Table,
};

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub policy: PolicyTable,
    pub disc: DiscriminatorTable,
    pub t: f64,
}

impl FlowState {
    /// `π = π_E`, `D ≡ 1/2`.
    pub fn desired(expert: &PolicyTable) -> Self {
        FlowState {
            policy: expert.clone(),
            disc: DiscriminatorTable::constant(expert.n_states(), expert.n_actions(), 0.5),
            t: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    pub d_disc: Table,
    pub d_policy: Table,
    pub max_abs_policy_drift: f64,
    pub max_abs_disc_drift: f64,
}

impl DriftReport {
    fn new(d_disc: Table, d_policy: Table) -> Self {
        let max_abs = |t: &Table| t.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
        DriftReport {
            max_abs_policy_drift: max_abs(&d_policy),
            max_abs_disc_drift: max_abs(&d_disc),
            d_disc,
            d_policy,
        }
    }
}

/// `V_D = Σ ρ_π π log D + Σ ρ_E π_E log(1 − D)` with exact occupancies.
pub fn objective_vd(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    expert: &PolicyTable,
    disc: &DiscriminatorTable,
) -> Result<f64> {
    let rho = solve_occupancy(mdp, policy)?;
    let rho_e = solve_occupancy(mdp, expert)?;
    let mut total = 0.0;
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let d = disc.value(s, a);
            total += rho[s] * policy.prob(s, a) * d.ln() + rho_e[s] * expert.prob(s, a) * (1.0 - d).ln();
        }
    }
    Ok(total)
}

/// `V_π = E_π[log D] − λ E_π[−log π]`.
pub fn objective_vpi(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    disc: &DiscriminatorTable,
    lambda: f64,
) -> Result<f64> {
    let rho = solve_occupancy(mdp, policy)?;
    let mut total = 0.0;
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let p = policy.prob(s, a);
            total += rho[s] * p * (disc.value(s, a).ln() + lambda * p.ln());
        }
    }
    Ok(total)
}

pub fn disc_drift(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    expert: &PolicyTable,
    disc: &DiscriminatorTable,
) -> Result<Table> {
    let rho = solve_occupancy(mdp, policy)?;
    let rho_e = solve_occupancy(mdp, expert)?;
    Ok(disc_drift_with(mdp, policy, expert, disc, &rho, &rho_e))
}

fn disc_drift_with(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    expert: &PolicyTable,
    disc: &DiscriminatorTable,
    rho: &[f64],
    rho_e: &[f64],
) -> Table {
    (0..mdp.n_states)
        .map(|s| {
            (0..mdp.n_actions)
                .map(|a| {
                    let d = disc.value(s, a);
                    rho[s] * policy.prob(s, a) / d - rho_e[s] * expert.prob(s, a) / (1.0 - d)
                })
                .collect()
        })
        .collect()
}

pub fn policy_drift(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    disc: &DiscriminatorTable,
    lambda: f64,
) -> Result<Table> {
    let rho = solve_occupancy(mdp, policy)?;
    let adv = advantage(&solve_q_entropy(mdp, policy, disc, lambda)?, policy);
    Ok(adv
        .iter()
        .enumerate()
        .map(|(s, row)| row.iter().map(|a| -rho[s] * a).collect())
        .collect())
}

/// Both drifts at `π = π_E`, `D ≡ 1/2`, without any projection.
pub fn desired_state_report(mdp: &TabularMdp, expert: &PolicyTable, lambda: f64) -> Result<DriftReport> {
    let state = FlowState::desired(expert);
    drift_report(mdp, expert, &state, lambda)
}

pub fn drift_report(
    mdp: &TabularMdp,
    expert: &PolicyTable,
    state: &FlowState,
    lambda: f64,
) -> Result<DriftReport> {
    let d_disc = disc_drift(mdp, &state.policy, expert, &state.disc)?;
    let d_policy = policy_drift(mdp, &state.policy, &state.disc, lambda)?;
    Ok(DriftReport::new(d_disc, d_policy))
}

/// Total variation between two policies, averaged over the expert's
/// normalized state occupancy.
pub fn weighted_tv(policy: &PolicyTable, expert: &PolicyTable, expert_occupancy: &[f64]) -> f64 {
    let mass: f64 = expert_occupancy.iter().sum();
    expert_occupancy
        .iter()
        .enumerate()
        .map(|(s, w)| {
            let tv: f64 = policy
                .row(s)
                .iter()
                .zip(expert.row(s))
                .map(|(p, q)| (p - q).abs())
                .sum::<f64>()
                * 0.5;
            w / mass * tv
        })
        .sum()
}

/// One recorded point of an integrated flow.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowStep {
    pub step: usize,
    pub state: FlowState,
    /// Drift evaluated at `state`.
    pub report: DriftReport,
    pub vd: f64,
    pub vpi: f64,
    pub policy_distance_to_expert: f64,
    /// Max-abs change applied by the clamp/floor projection that produced `state`.
    pub projection_magnitude: f64,
}

/// CSV-facing view of a [`FlowStep`].
#[derive(Debug, Clone, Serialize)]
pub struct FlowRow {
    pub step: usize,
    pub t: f64,
    pub vd: f64,
    pub vpi: f64,
    pub max_abs_disc_drift: f64,
    pub max_abs_policy_drift: f64,
    pub policy_distance_to_expert: f64,
    pub projection_magnitude: f64,
}

impl From<&FlowStep> for FlowRow {
    fn from(s: &FlowStep) -> Self {
        FlowRow {
            step: s.step,
            t: s.state.t,
            vd: s.vd,
            vpi: s.vpi,
            max_abs_disc_drift: s.report.max_abs_disc_drift,
            max_abs_policy_drift: s.report.max_abs_policy_drift,
            policy_distance_to_expert: s.policy_distance_to_expert,
            projection_magnitude: s.projection_magnitude,
        }
    }
}

/// Explicit Euler on `(D, π)` with clamp/floor projection after every step.
/// Returns `steps + 1` records, the first being the initial state.
pub fn integrate_flow(
    mdp: &TabularMdp,
    expert: &PolicyTable,
    init: FlowState,
    lambda: f64,
    dt: f64,
    steps: usize,
) -> Result<Vec<FlowStep>> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(LabError::validation("dt", None, "must be positive and finite"));
    }
    init.policy.check_shape(mdp)?;
    expert.check_shape(mdp)?;
    let rho_e = solve_occupancy(mdp, expert)?;
    let limit = 0.5 / dt;

    let record = |step: usize, state: FlowState, projection: f64| -> Result<FlowStep> {
        let rho = solve_occupancy(mdp, &state.policy)?;
        let d_disc = disc_drift_with(mdp, &state.policy, expert, &state.disc, &rho, &rho_e);
        let adv = advantage(&solve_q_entropy(mdp, &state.policy, &state.disc, lambda)?, &state.policy);
        let d_policy = adv
            .iter()
            .enumerate()
            .map(|(s, row)| row.iter().map(|a| -rho[s] * a).collect())
            .collect();
        Ok(FlowStep {
            step,
            vd: objective_vd(mdp, &state.policy, expert, &state.disc)?,
            vpi: objective_vpi(mdp, &state.policy, &state.disc, lambda)?,
            policy_distance_to_expert: weighted_tv(&state.policy, expert, &rho_e),
            report: DriftReport::new(d_disc, d_policy),
            projection_magnitude: projection,
            state,
        })
    };

    let mut out = Vec::with_capacity(steps + 1);
    out.push(record(0, init, 0.0)?);
    for step in 1..=steps {
        let prev = out.last().expect("initial record present");
        let worst = prev.report.max_abs_disc_drift.max(prev.report.max_abs_policy_drift);
        if !worst.is_finite() || worst > limit {
            return Err(LabError::StepSize { step, drift: worst, limit });
        }
        let disc_raw: Table = prev
            .state
            .disc
            .values()
            .iter()
            .zip(&prev.report.d_disc)
            .map(|(row, drow)| row.iter().zip(drow).map(|(d, dd)| d + dt * dd).collect())
            .collect();
        let policy_raw: Table = prev
            .state
            .policy
            .probs()
            .iter()
            .zip(&prev.report.d_policy)
            .map(|(row, drow)| row.iter().zip(drow).map(|(p, dp)| p + dt * dp).collect())
            .collect();
        let (disc, disc_proj) = DiscriminatorTable::clamped(disc_raw);
        let (policy, policy_proj) = PolicyTable::project(policy_raw);
        let state = FlowState {
            policy,
            disc,
            t: step as f64 * dt,
        };
        out.push(record(step, state, disc_proj.max(policy_proj))?);
    }
    Ok(out)
}
