//! Discrete C-GAIL training on tabular MDPs.
//!
//! Each iteration samples a learner batch, takes one ascent step on the
//! controlled discriminator objective
//!
//! ```text
//! V_D' = Ê_learner[log D − (k/2)(D − 1/2)²] + Ê_expert[log(1 − D) − (k/2)(D − 1/2)²]
//! ```
//!
//! and one REINFORCE descent step on `V_π = E_π[log D + λ log π]`. With
//! `k = 0` this is vanilla GAIL.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::flow::weighted_tv;
use crate::mdp::{
    policy_return, sample_with, solve_occupancy, DiscriminatorTable, PolicyTable, TabularMdp, Table,
    Trajectory, POLICY_FLOOR,
};
use crate::metrics::{wasserstein, EmpiricalStateDistribution, GroundCost, RunSummary};

const LOGIT_LIMIT: f64 = 1e3;

const STREAM_LEARNER: u64 = 1;
const STREAM_EXPERT: u64 = 2;
const STREAM_EVAL: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Discriminator controller gain; 0 is vanilla GAIL.
    pub k: f64,
    pub lambda: f64,
    /// Policy controller gain, used only with `oracle_policy_controller`.
    pub alpha: f64,
    pub lr_disc: f64,
    pub lr_policy: f64,
    pub n_traj_per_iter: usize,
    pub horizon: usize,
    pub iterations: usize,
    pub seed: u64,
    pub oracle_policy_controller: bool,
    /// Expert demonstrations, sampled once before training.
    pub n_expert_traj: usize,
    pub wasserstein_traj: usize,
    pub wasserstein_horizon: usize,
    pub ground_cost: GroundCost,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 1.0,
            lambda: 0.01,
            alpha: 0.0,
            lr_disc: 0.5,
            lr_policy: 0.5,
            n_traj_per_iter: 16,
            horizon: 30,
            iterations: 300,
            seed: 0,
            oracle_policy_controller: false,
            n_expert_traj: 16,
            wasserstein_traj: 100,
            wasserstein_horizon: 50,
            ground_cost: GroundCost::Hop,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(LabError::validation(name, None, format!("{v} must be positive")))
            }
        };
        positive("lr_disc", self.lr_disc)?;
        positive("lr_policy", self.lr_policy)?;
        if !(self.k.is_finite() && self.k >= 0.0) {
            return Err(LabError::validation("k", None, "must be finite and >= 0"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(LabError::validation("lambda", None, "must be finite and >= 0"));
        }
        if !self.alpha.is_finite() {
            return Err(LabError::validation("alpha", None, "must be finite"));
        }
        for (name, v) in [
            ("iterations", self.iterations),
            ("n_traj_per_iter", self.n_traj_per_iter),
            ("horizon", self.horizon),
            ("n_expert_traj", self.n_expert_traj),
            ("wasserstein_traj", self.wasserstein_traj),
            ("wasserstein_horizon", self.wasserstein_horizon),
        ] {
            if v == 0 {
                return Err(LabError::validation(name, None, "must be at least 1"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub normalized_return: f64,
    pub disc_mean: f64,
    #[serde(rename = "disc_dev_half")]
    pub disc_deviation_from_half: f64,
    pub tv_to_expert: f64,
    pub wasserstein_state: f64,
    pub regularizer_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub records: Vec<IterRecord>,
}

impl TrainingTrace {
    pub fn normalized_returns(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.normalized_return).collect()
    }

    pub fn summary(&self, group: &str, config: &TrainConfig, window: usize) -> Result<RunSummary> {
        let last = self.records.last().ok_or_else(|| LabError::validation("trace", None, "empty"))?;
        Ok(RunSummary {
            schema_version: 1,
            group: group.to_string(),
            k: config.k,
            seed: config.seed,
            iterations: self.records.len(),
            convergence_step: convergence_step(self),
            oscillation_range: oscillation_range(self, window)?,
            final_normalized_return: last.normalized_return,
            final_wasserstein: last.wasserstein_state,
        })
    }
}

/// `max − min` of the normalized return over the final `window` iterations.
pub fn oscillation_range(trace: &TrainingTrace, window: usize) -> Result<f64> {
    let n = trace.records.len();
    if window == 0 || window > n {
        return Err(LabError::validation("window", None, format!("{window} not in 1..={n}")));
    }
    let tail = &trace.records[n - window..];
    let (lo, hi) = tail.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
        (lo.min(r.normalized_return), hi.max(r.normalized_return))
    });
    Ok(hi - lo)
}

/// First iteration whose normalized return reaches 95% of the trace maximum.
/// An all-zero trace converges at iteration 0.
pub fn convergence_step(trace: &TrainingTrace) -> Option<usize> {
    let max = trace
        .records
        .iter()
        .map(|r| r.normalized_return)
        .fold(f64::NEG_INFINITY, f64::max);
    trace
        .records
        .iter()
        .position(|r| r.normalized_return >= 0.95 * max)
        .map(|i| trace.records[i].iter)
}

fn flatten(batch: &[Trajectory]) -> Vec<(usize, usize)> {
    batch.iter().flatten().copied().collect()
}

fn penalty(d: f64) -> f64 {
    (d - 0.5) * (d - 0.5)
}

fn batch_mean(pairs: &[(usize, usize)], f: impl Fn(usize, usize) -> f64) -> f64 {
    pairs.iter().map(|&(s, a)| f(s, a)).sum::<f64>() / pairs.len() as f64
}

/// `(k/2)·(Ê_learner[(D − 1/2)²] + Ê_expert[(D − 1/2)²])`.
pub fn regularizer_value(
    disc: &DiscriminatorTable,
    learner: &[(usize, usize)],
    expert: &[(usize, usize)],
    k: f64,
) -> f64 {
    let pen = |s, a| penalty(disc.value(s, a));
    0.5 * k * (batch_mean(learner, pen) + batch_mean(expert, pen))
}

/// The controlled discriminator objective (to be maximized).
pub fn disc_loss_controlled(
    disc: &DiscriminatorTable,
    learner: &[(usize, usize)],
    expert: &[(usize, usize)],
    k: f64,
) -> Result<f64> {
    if learner.is_empty() || expert.is_empty() {
        return Err(LabError::validation("batch", None, "learner and expert batches must be nonempty"));
    }
    let vanilla = batch_mean(learner, |s, a| disc.value(s, a).ln())
        + batch_mean(expert, |s, a| (1.0 - disc.value(s, a)).ln());
    Ok(vanilla - regularizer_value(disc, learner, expert, k))
}

/// Gradient of the vanilla part of `V_D'` with respect to each `D(s,a)`.
fn vanilla_disc_grad(disc: &DiscriminatorTable, learner: &[(usize, usize)], expert: &[(usize, usize)]) -> Table {
    let (ns, na) = (disc.values().len(), disc.values()[0].len());
    let mut g = vec![vec![0.0; na]; ns];
    let (wl, we) = (1.0 / learner.len() as f64, 1.0 / expert.len() as f64);
    for &(s, a) in learner {
        g[s][a] += wl / disc.value(s, a);
    }
    for &(s, a) in expert {
        g[s][a] -= we / (1.0 - disc.value(s, a));
    }
    g
}

/// Gradient of `−(k/2)(D − 1/2)²` summed over both batches: each sample
/// contributes `−k(D − 1/2)`, the discriminator controller, times its weight.
pub fn regularizer_disc_grad(
    disc: &DiscriminatorTable,
    learner: &[(usize, usize)],
    expert: &[(usize, usize)],
    k: f64,
) -> Table {
    let (ns, na) = (disc.values().len(), disc.values()[0].len());
    let mut g = vec![vec![0.0; na]; ns];
    for (batch, w) in [(learner, 1.0 / learner.len() as f64), (expert, 1.0 / expert.len() as f64)] {
        for &(s, a) in batch {
            g[s][a] += w * -k * (disc.value(s, a) - 0.5);
        }
    }
    g
}

/// Gradient of `V_D'` with respect to each `D(s,a)`.
pub fn disc_loss_gradient(
    disc: &DiscriminatorTable,
    learner: &[(usize, usize)],
    expert: &[(usize, usize)],
    k: f64,
) -> Table {
    let mut g = vanilla_disc_grad(disc, learner, expert);
    let r = regularizer_disc_grad(disc, learner, expert, k);
    for (row, rrow) in g.iter_mut().zip(&r) {
        for (v, rv) in row.iter_mut().zip(rrow) {
            *v += rv;
        }
    }
    g
}

/// Sampled policy objective and its REINFORCE gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyObjective {
    /// `(1/N) Σ_traj Σ_t γ^t (log D + λ log π)`.
    pub value: f64,
    /// Estimate of `∂V_π/∂θ[s][a]` for softmax logits `θ`.
    pub gradient: Table,
}

/// REINFORCE with a per-state batch-mean baseline on discounted returns of
/// the reward `log D + λ log π`.
pub fn policy_objective(
    logits: &Table,
    disc: &DiscriminatorTable,
    lambda: f64,
    gamma: f64,
    batch: &[Trajectory],
) -> Result<PolicyObjective> {
    if batch.is_empty() {
        return Err(LabError::validation("batch", None, "must be nonempty"));
    }
    let policy = PolicyTable::from_logits(logits);
    let (ns, na) = (policy.n_states(), policy.n_actions());
    let mut returns: Vec<Vec<f64>> = Vec::with_capacity(batch.len());
    let mut value = 0.0;
    for traj in batch {
        let rewards: Vec<f64> = traj
            .iter()
            .map(|&(s, a)| disc.value(s, a).ln() + lambda * policy.prob(s, a).ln())
            .collect();
        let mut g = vec![0.0; traj.len()];
        let mut acc = 0.0;
        for t in (0..traj.len()).rev() {
            acc = rewards[t] + gamma * acc;
            g[t] = acc;
        }
        value += g.first().copied().unwrap_or(0.0);
        returns.push(g);
    }
    let n = batch.len() as f64;
    let mut baseline = vec![0.0; ns];
    let mut visits = vec![0usize; ns];
    for (traj, g) in batch.iter().zip(&returns) {
        for (&(s, _), gt) in traj.iter().zip(g) {
            baseline[s] += gt;
            visits[s] += 1;
        }
    }
    for (b, v) in baseline.iter_mut().zip(&visits) {
        if *v > 0 {
            *b /= *v as f64;
        }
    }
    let mut gradient = vec![vec![0.0; na]; ns];
    for (traj, g) in batch.iter().zip(&returns) {
        let mut discount = 1.0;
        for (&(s, a), gt) in traj.iter().zip(g) {
            let adv = discount * (gt - baseline[s]);
            for b in 0..na {
                let score = if a == b { 1.0 } else { 0.0 } - policy.prob(s, b);
                gradient[s][b] += score * adv / n;
            }
            discount *= gamma;
        }
    }
    Ok(PolicyObjective { value: value / n, gradient })
}

/// Integrated policy controller for one pair:
/// `(α/2)·y²/E + (c·log(1/2) + c·λ·log E + c·λ − α)·y`.
pub fn oracle_controller_term(c: f64, lambda: f64, alpha: f64, expert_prob: f64, y: f64) -> f64 {
    0.5 * alpha * y * y / expert_prob + (c * 0.5_f64.ln() + c * lambda * expert_prob.ln() + c * lambda - alpha) * y
}

/// Derivative of [`oracle_controller_term`] in `y`; equals `u2` of the
/// one-step system at `y`.
pub fn oracle_controller_slope(c: f64, lambda: f64, alpha: f64, expert_prob: f64, y: f64) -> f64 {
    alpha * y / expert_prob + c * 0.5_f64.ln() + c * lambda * expert_prob.ln() + c * lambda - alpha
}

fn state_frequencies(pairs: &[(usize, usize)], ns: usize) -> Vec<f64> {
    let mut freq = vec![0.0; ns];
    for &(s, _) in pairs {
        freq[s] += 1.0;
    }
    let n = pairs.len() as f64;
    freq.iter_mut().for_each(|f| *f /= n);
    freq
}

fn check_expert_support(expert: &PolicyTable, pairs: &[(usize, usize)]) -> Result<()> {
    for &(s, a) in pairs {
        let v = expert.prob(s, a);
        if v < POLICY_FLOOR {
            return Err(LabError::Degenerate { state: s, action: a, value: v });
        }
    }
    Ok(())
}

/// `V_π'` as an empirical average: `Ê_learner[log D + λ log π]` plus the
/// integrated policy controller averaged over the union of both batches,
/// with `c` the empirical visitation frequency of each state in that union.
pub fn policy_loss_oracle_controlled(
    policy: &PolicyTable,
    expert: &PolicyTable,
    disc: &DiscriminatorTable,
    lambda: f64,
    alpha: f64,
    learner: &[(usize, usize)],
    expert_batch: &[(usize, usize)],
) -> Result<f64> {
    if learner.is_empty() || expert_batch.is_empty() {
        return Err(LabError::validation("batch", None, "learner and expert batches must be nonempty"));
    }
    let union: Vec<(usize, usize)> = learner.iter().chain(expert_batch).copied().collect();
    check_expert_support(expert, &union)?;
    let freq = state_frequencies(&union, policy.n_states());
    let vpi = batch_mean(learner, |s, a| disc.value(s, a).ln() + lambda * policy.prob(s, a).ln());
    let extra = batch_mean(&union, |s, a| {
        oracle_controller_term(freq[s], lambda, alpha, expert.prob(s, a), policy.prob(s, a))
    });
    Ok(vpi + extra)
}

/// Logit-space gradient of the integrated policy controller.
fn oracle_controller_logit_grad(
    policy: &PolicyTable,
    expert: &PolicyTable,
    lambda: f64,
    alpha: f64,
    union: &[(usize, usize)],
) -> Table {
    let (ns, na) = (policy.n_states(), policy.n_actions());
    let freq = state_frequencies(union, ns);
    let w = 1.0 / union.len() as f64;
    let mut g = vec![vec![0.0; na]; ns];
    for &(s, a) in union {
        let y = policy.prob(s, a);
        let slope = oracle_controller_slope(freq[s], lambda, alpha, expert.prob(s, a), y);
        for b in 0..na {
            let jac = y * (if a == b { 1.0 } else { 0.0 } - policy.prob(s, b));
            g[s][b] += w * slope * jac;
        }
    }
    g
}

/// Normalization anchors: uniform-random return and expert return.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnAnchors {
    pub random: f64,
    pub expert: f64,
}

impl ReturnAnchors {
    pub fn compute(mdp: &TabularMdp, expert: &PolicyTable) -> Result<Self> {
        Ok(ReturnAnchors {
            random: policy_return(mdp, &PolicyTable::uniform(mdp.n_states, mdp.n_actions))?,
            expert: policy_return(mdp, expert)?,
        })
    }

    pub fn normalize(&self, ret: f64) -> f64 {
        (ret - self.random) / (self.expert - self.random)
    }
}

/// Runs C-GAIL training. The trace is a pure function of the inputs.
pub fn train(mdp: &TabularMdp, expert: &PolicyTable, config: &TrainConfig) -> Result<TrainingTrace> {
    train_impl(mdp, expert, config, None, true)
}

/// As [`train`], with the policy logits initialized to `log init`.
pub fn train_from(
    mdp: &TabularMdp,
    expert: &PolicyTable,
    config: &TrainConfig,
    init: &PolicyTable,
) -> Result<TrainingTrace> {
    train_impl(mdp, expert, config, Some(init), true)
}

fn train_impl(
    mdp: &TabularMdp,
    expert: &PolicyTable,
    config: &TrainConfig,
    init: Option<&PolicyTable>,
    with_regularizer: bool,
) -> Result<TrainingTrace> {
    config.validate()?;
    expert.check_shape(mdp)?;
    if let Some(p) = init {
        p.check_shape(mdp)?;
    }
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let anchors = ReturnAnchors::compute(mdp, expert)?;
    let rho_e = solve_occupancy(mdp, expert)?;
    let cost = config.ground_cost.matrix(mdp);

    let mut learner_rng = ChaCha8Rng::seed_from_u64(config.seed);
    learner_rng.set_stream(STREAM_LEARNER);
    let mut expert_rng = ChaCha8Rng::seed_from_u64(config.seed);
    expert_rng.set_stream(STREAM_EXPERT);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(config.seed);
    eval_rng.set_stream(STREAM_EVAL);

    let expert_pairs = flatten(&sample_with(mdp, expert, config.n_expert_traj, config.horizon, &mut expert_rng));
    let expert_states = EmpiricalStateDistribution::from_trajectories(
        &sample_with(mdp, expert, config.wasserstein_traj, config.wasserstein_horizon, &mut expert_rng),
        ns,
        cost.clone(),
    )?;
    if config.oracle_policy_controller {
        check_expert_support(expert, &expert_pairs)?;
    }

    let mut policy_logits: Table = match init {
        Some(p) => p.probs().iter().map(|row| row.iter().map(|v| v.ln()).collect()).collect(),
        None => vec![vec![0.0; na]; ns],
    };
    let mut disc_logits: Table = vec![vec![0.0; na]; ns];
    let mut records = Vec::with_capacity(config.iterations);

    for iter in 0..config.iterations {
        let policy = PolicyTable::from_logits(&policy_logits);
        let batch = sample_with(mdp, &policy, config.n_traj_per_iter, config.horizon, &mut learner_rng);
        let learner_pairs = flatten(&batch);

        // discriminator ascent
        let disc = DiscriminatorTable::from_logits(&disc_logits);
        let mut grad_d = vanilla_disc_grad(&disc, &learner_pairs, &expert_pairs);
        if with_regularizer {
            let reg = regularizer_disc_grad(&disc, &learner_pairs, &expert_pairs, config.k);
            for (row, rrow) in grad_d.iter_mut().zip(&reg) {
                for (v, rv) in row.iter_mut().zip(rrow) {
                    *v += rv;
                }
            }
        }
        for s in 0..ns {
            for a in 0..na {
                let d = disc.value(s, a);
                disc_logits[s][a] += config.lr_disc * grad_d[s][a] * d * (1.0 - d);
            }
        }
        let disc = DiscriminatorTable::from_logits(&disc_logits);

        // policy descent on V_π (optionally minus the integrated controller)
        let obj = policy_objective(&policy_logits, &disc, config.lambda, mdp.gamma, &batch)?;
        let mut grad_p = obj.gradient;
        if config.oracle_policy_controller {
            let union: Vec<(usize, usize)> = learner_pairs.iter().chain(&expert_pairs).copied().collect();
            check_expert_support(expert, &union)?;
            let ctrl = oracle_controller_logit_grad(&policy, expert, config.lambda, config.alpha, &union);
            for (row, crow) in grad_p.iter_mut().zip(&ctrl) {
                for (v, cv) in row.iter_mut().zip(crow) {
                    *v -= cv;
                }
            }
        }
        for s in 0..ns {
            for a in 0..na {
                policy_logits[s][a] -= config.lr_policy * grad_p[s][a];
            }
        }
        let worst = policy_logits.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
        if !worst.is_finite() || worst > LOGIT_LIMIT {
            return Err(LabError::Divergence { iteration: iter, reason: format!("policy logit magnitude {worst}") });
        }

        let policy = PolicyTable::from_logits(&policy_logits);
        let ret = policy_return(mdp, &policy)?;
        let normalized_return = anchors.normalize(ret);
        if !normalized_return.is_finite() {
            return Err(LabError::Divergence { iteration: iter, reason: "normalized return is not finite".into() });
        }
        let union: Vec<(usize, usize)> = learner_pairs.iter().chain(&expert_pairs).copied().collect();
        let eval_batch = sample_with(mdp, &policy, config.wasserstein_traj, config.wasserstein_horizon, &mut eval_rng);
        let learner_states = EmpiricalStateDistribution::from_trajectories(&eval_batch, ns, cost.clone())?;
        records.push(IterRecord {
            iter,
            ret,
            normalized_return,
            disc_mean: batch_mean(&union, |s, a| disc.value(s, a)),
            disc_deviation_from_half: batch_mean(&union, |s, a| (disc.value(s, a) - 0.5).abs()),
            tv_to_expert: weighted_tv(&policy, expert, &rho_e),
            wasserstein_state: wasserstein(&learner_states, &expert_states)?,
            regularizer_value: if with_regularizer {
                regularizer_value(&disc, &learner_pairs, &expert_pairs, config.k)
            } else {
                0.0
            },
        });
    }
    Ok(TrainingTrace { records })
}
