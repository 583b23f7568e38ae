//! Finite MDPs, tabular policies and discriminators, and the exact linear
//! solves for discounted occupancy and entropy-augmented action values.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Floor applied to policy entries before any `log π` is taken.
pub const POLICY_FLOOR: f64 = 1e-8;
/// Discriminator values are clamped to `[DISC_CLAMP, 1 - DISC_CLAMP]`.
pub const DISC_CLAMP: f64 = 1e-6;

const STOCHASTIC_TOL: f64 = 1e-12;
/// Input rows may be off by this much before renormalization (JSON round-trips
/// of hand-written probabilities rarely hit 1e-12).
const INPUT_TOL: f64 = 1e-9;

/// Dense `[state][action]` table.
pub type Table = Vec<Vec<f64>>;

/// A finite MDP. `eval_reward` is only read by [`policy_return`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `transition[s][a][s']`
    pub transition: Vec<Vec<Vec<f64>>>,
    pub init_dist: Vec<f64>,
    pub gamma: f64,
    pub eval_reward: Table,
}

impl TabularMdp {
    pub fn new(
        transition: Vec<Vec<Vec<f64>>>,
        init_dist: Vec<f64>,
        gamma: f64,
        eval_reward: Table,
    ) -> Result<Self> {
        let n_states = transition.len();
        let n_actions = transition.first().map_or(0, Vec::len);
        let mdp = TabularMdp {
            n_states,
            n_actions,
            transition,
            init_dist,
            gamma,
            eval_reward,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Parses and validates the JSON document form.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let mdp: TabularMdp = serde_json::from_str(text)?;
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn from_json_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let (ns, na) = (self.n_states, self.n_actions);
        if ns == 0 {
            return Err(LabError::validation("n_states", None, "must be positive"));
        }
        if na == 0 {
            return Err(LabError::validation("n_actions", None, "must be positive"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(LabError::validation("gamma", None, format!("{} not in [0, 1)", self.gamma)));
        }
        if self.transition.len() != ns {
            return Err(LabError::validation(
                "transition",
                None,
                format!("expected {ns} state rows, got {}", self.transition.len()),
            ));
        }
        for (s, per_state) in self.transition.iter().enumerate() {
            if per_state.len() != na {
                return Err(LabError::validation(
                    "transition",
                    Some(s.to_string()),
                    format!("expected {na} action rows, got {}", per_state.len()),
                ));
            }
            for (a, row) in per_state.iter().enumerate() {
                check_distribution(row, ns, "transition", &format!("{s}][{a}"), STOCHASTIC_TOL)?;
            }
        }
        check_distribution(&self.init_dist, ns, "init_dist", "", STOCHASTIC_TOL)?;
        if self.eval_reward.len() != ns {
            return Err(LabError::validation("eval_reward", None, format!("expected {ns} rows")));
        }
        for (s, row) in self.eval_reward.iter().enumerate() {
            if row.len() != na {
                return Err(LabError::validation("eval_reward", Some(s.to_string()), format!("expected {na} entries")));
            }
            if let Some(a) = row.iter().position(|r| !r.is_finite()) {
                return Err(LabError::validation("eval_reward", Some(format!("{s}][{a}")), "not finite"));
            }
        }
        Ok(())
    }

    /// State-to-state kernel under `policy`: `P_π[s][s'] = Σ_a π(a|s) P(s'|s,a)`.
    pub fn policy_kernel(&self, policy: &PolicyTable) -> DMatrix<f64> {
        let ns = self.n_states;
        DMatrix::from_fn(ns, ns, |s, s2| {
            (0..self.n_actions)
                .map(|a| policy.prob(s, a) * self.transition[s][a][s2])
                .sum()
        })
    }

    /// Shortest-path hop counts on the transition support graph (treated as
    /// undirected so the result is a metric). Unreachable pairs get `n_states`.
    pub fn hop_distances(&self) -> Table {
        let ns = self.n_states;
        let mut adj = vec![vec![false; ns]; ns];
        for s in 0..ns {
            for a in 0..self.n_actions {
                for s2 in 0..ns {
                    if self.transition[s][a][s2] > 0.0 && s != s2 {
                        adj[s][s2] = true;
                        adj[s2][s] = true;
                    }
                }
            }
        }
        let mut dist = vec![vec![ns as f64; ns]; ns];
        for src in 0..ns {
            let mut queue = std::collections::VecDeque::from([src]);
            dist[src][src] = 0.0;
            let mut seen = vec![false; ns];
            seen[src] = true;
            while let Some(u) = queue.pop_front() {
                for v in 0..ns {
                    if adj[u][v] && !seen[v] {
                        seen[v] = true;
                        dist[src][v] = dist[src][u] + 1.0;
                        queue.push_back(v);
                    }
                }
            }
        }
        dist
    }
}

fn check_distribution(row: &[f64], len: usize, field: &str, index: &str, tol: f64) -> Result<()> {
    let idx = |i: usize| {
        if index.is_empty() {
            Some(i.to_string())
        } else {
            Some(format!("{index}][{i}"))
        }
    };
    let whole = if index.is_empty() { None } else { Some(index.to_string()) };
    if row.len() != len {
        return Err(LabError::validation(field, whole, format!("expected {len} entries, got {}", row.len())));
    }
    if let Some(i) = row.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(LabError::validation(field, idx(i), format!("{} is not a probability", row[i])));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(LabError::validation(field, whole, format!("sums to {sum}, expected 1")));
    }
    Ok(())
}

/// Row-stochastic `π[s][a]` with every entry at least [`POLICY_FLOOR`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    probs: Table,
    /// Total probability mass moved by flooring when the table was built.
    #[serde(skip)]
    floor_mass: f64,
}

impl PolicyTable {
    /// Validates rows (sum to 1 within 1e-9, nonnegative) and applies the floor.
    pub fn new(probs: Table) -> Result<Self> {
        let na = probs.first().map_or(0, Vec::len);
        if probs.is_empty() || na == 0 {
            return Err(LabError::validation("policy", None, "empty table"));
        }
        for (s, row) in probs.iter().enumerate() {
            check_distribution(row, na, "policy", &s.to_string(), INPUT_TOL)?;
        }
        Ok(Self::project(probs).0)
    }

    /// Floors then renormalizes arbitrary finite rows; returns the table and
    /// the max-abs change applied to any entry.
    pub fn project(mut probs: Table) -> (Self, f64) {
        let mut magnitude: f64 = 0.0;
        let mut floor_mass = 0.0;
        for row in probs.iter_mut() {
            let original = row.clone();
            for p in row.iter_mut() {
                if *p < POLICY_FLOOR {
                    floor_mass += POLICY_FLOOR - *p;
                    *p = POLICY_FLOOR;
                }
            }
            let sum: f64 = row.iter().sum();
            for (p, o) in row.iter_mut().zip(&original) {
                *p /= sum;
                magnitude = magnitude.max((*p - o).abs());
            }
        }
        (PolicyTable { probs, floor_mass }, magnitude)
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let p = 1.0 / n_actions as f64;
        PolicyTable {
            probs: vec![vec![p; n_actions]; n_states],
            floor_mass: 0.0,
        }
    }

    /// Row-wise softmax of `logits`, floored.
    pub fn from_logits(logits: &Table) -> Self {
        let probs = logits
            .iter()
            .map(|row| {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = row.iter().map(|l| (l - m).exp()).collect();
                let z: f64 = e.iter().sum();
                e.into_iter().map(|v| v / z).collect()
            })
            .collect();
        Self::project(probs).0
    }

    pub fn n_states(&self) -> usize {
        self.probs.len()
    }

    pub fn n_actions(&self) -> usize {
        self.probs[0].len()
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s][a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s]
    }

    pub fn probs(&self) -> &Table {
        &self.probs
    }

    pub fn floor_mass(&self) -> f64 {
        self.floor_mass
    }

    /// Shannon entropy of the action distribution at `s`.
    pub fn entropy(&self, s: usize) -> f64 {
        -self.probs[s].iter().map(|p| p * p.ln()).sum::<f64>()
    }

    pub fn check_shape(&self, mdp: &TabularMdp) -> Result<()> {
        if self.n_states() != mdp.n_states || self.n_actions() != mdp.n_actions {
            return Err(LabError::validation(
                "policy",
                None,
                format!(
                    "shape {}x{} does not match MDP {}x{}",
                    self.n_states(),
                    self.n_actions(),
                    mdp.n_states,
                    mdp.n_actions
                ),
            ));
        }
        Ok(())
    }
}

/// `D[s][a]`, clamped to `[DISC_CLAMP, 1 - DISC_CLAMP]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorTable {
    values: Table,
}

impl DiscriminatorTable {
    pub fn new(values: Table) -> Result<Self> {
        for (s, row) in values.iter().enumerate() {
            if let Some(a) = row.iter().position(|v| !v.is_finite()) {
                return Err(LabError::validation("disc", Some(format!("{s}][{a}")), "not finite"));
            }
        }
        Ok(Self::clamped(values).0)
    }

    /// Clamps arbitrary finite values; returns the max-abs adjustment.
    pub fn clamped(mut values: Table) -> (Self, f64) {
        let mut magnitude: f64 = 0.0;
        for v in values.iter_mut().flatten() {
            let c = v.clamp(DISC_CLAMP, 1.0 - DISC_CLAMP);
            magnitude = magnitude.max((c - *v).abs());
            *v = c;
        }
        (DiscriminatorTable { values }, magnitude)
    }

    pub fn constant(n_states: usize, n_actions: usize, value: f64) -> Self {
        Self::clamped(vec![vec![value; n_actions]; n_states]).0
    }

    /// Logistic map of per-pair logits, clamped where the map saturates.
    pub fn from_logits(logits: &Table) -> Self {
        let values = logits
            .iter()
            .map(|row| row.iter().map(|&w| sigmoid(w)).collect())
            .collect();
        Self::clamped(values).0
    }

    #[inline]
    pub fn value(&self, s: usize, a: usize) -> f64 {
        self.values[s][a]
    }

    pub fn values(&self) -> &Table {
        &self.values
    }
}

pub(crate) fn sigmoid(w: f64) -> f64 {
    if w >= 0.0 {
        1.0 / (1.0 + (-w).exp())
    } else {
        let e = w.exp();
        e / (1.0 + e)
    }
}

/// Occupancy, entropy-augmented action values and advantages for one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables {
    pub occupancy: Vec<f64>,
    pub q: Table,
    pub advantage: Table,
}

impl ValueTables {
    pub fn compute(
        mdp: &TabularMdp,
        policy: &PolicyTable,
        disc: &DiscriminatorTable,
        lambda: f64,
    ) -> Result<Self> {
        let occupancy = solve_occupancy(mdp, policy)?;
        let q = solve_q_entropy(mdp, policy, disc, lambda)?;
        let advantage = advantage(&q, policy);
        Ok(ValueTables { occupancy, q, advantage })
    }
}

/// Unnormalized discounted state occupancy: solves `ρ = p0 + γ P_πᵀ ρ`.
pub fn solve_occupancy(mdp: &TabularMdp, policy: &PolicyTable) -> Result<Vec<f64>> {
    policy.check_shape(mdp)?;
    let ns = mdp.n_states;
    let kernel = mdp.policy_kernel(policy);
    let system = DMatrix::identity(ns, ns) - kernel.transpose() * mdp.gamma;
    let rhs = DVector::from_column_slice(&mdp.init_dist);
    let rho = system.lu().solve(&rhs).ok_or(LabError::Singular("occupancy"))?;
    Ok(rho.iter().copied().collect())
}

/// Action values for an arbitrary per-step reward table:
/// `Q(s,a) = r(s,a) + γ Σ_s' P(s'|s,a) Σ_a' π(a'|s') Q(s',a')`.
pub fn solve_q(mdp: &TabularMdp, policy: &PolicyTable, reward: &Table) -> Result<Table> {
    policy.check_shape(mdp)?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let kernel = mdp.policy_kernel(policy);
    let system = DMatrix::identity(ns, ns) - kernel * mdp.gamma;
    let r_pi = DVector::from_fn(ns, |s, _| (0..na).map(|a| policy.prob(s, a) * reward[s][a]).sum());
    let v = system.lu().solve(&r_pi).ok_or(LabError::Singular("state values"))?;
    Ok((0..ns)
        .map(|s| {
            (0..na)
                .map(|a| {
                    let next: f64 = (0..ns).map(|s2| mdp.transition[s][a][s2] * v[s2]).sum();
                    reward[s][a] + mdp.gamma * next
                })
                .collect()
        })
        .collect())
}

/// Per-step reward `log D(s,a) + λ log π(a|s)`, including step 0.
pub fn entropy_reward(policy: &PolicyTable, disc: &DiscriminatorTable, lambda: f64) -> Table {
    (0..policy.n_states())
        .map(|s| {
            (0..policy.n_actions())
                .map(|a| disc.value(s, a).ln() + lambda * policy.prob(s, a).ln())
                .collect()
        })
        .collect()
}

/// Entropy-augmented `Q^π` with reward `log D + λ log π`.
pub fn solve_q_entropy(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    disc: &DiscriminatorTable,
    lambda: f64,
) -> Result<Table> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(LabError::validation("lambda", None, format!("{lambda} must be finite and >= 0")));
    }
    solve_q(mdp, policy, &entropy_reward(policy, disc, lambda))
}

/// `A(s,a) = Q(s,a) − Σ_a' π(a'|s) Q(s,a')`.
pub fn advantage(q: &Table, policy: &PolicyTable) -> Table {
    q.iter()
        .enumerate()
        .map(|(s, row)| {
            let mean: f64 = row.iter().zip(policy.row(s)).map(|(q, p)| q * p).sum();
            row.iter().map(|q| q - mean).collect()
        })
        .collect()
}

/// Bellman residual (max norm) of `q` for the given reward.
pub fn bellman_residual(mdp: &TabularMdp, policy: &PolicyTable, reward: &Table, q: &Table) -> f64 {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let v: Vec<f64> = (0..ns)
        .map(|s| (0..na).map(|a| policy.prob(s, a) * q[s][a]).sum())
        .collect();
    let mut worst: f64 = 0.0;
    for s in 0..ns {
        for a in 0..na {
            let next: f64 = (0..ns).map(|s2| mdp.transition[s][a][s2] * v[s2]).sum();
            worst = worst.max((q[s][a] - reward[s][a] - mdp.gamma * next).abs());
        }
    }
    worst
}

/// Exact discounted return under `eval_reward`.
pub fn policy_return(mdp: &TabularMdp, policy: &PolicyTable) -> Result<f64> {
    let rho = solve_occupancy(mdp, policy)?;
    Ok((0..mdp.n_states)
        .map(|s| {
            rho[s]
                * (0..mdp.n_actions)
                    .map(|a| policy.prob(s, a) * mdp.eval_reward[s][a])
                    .sum::<f64>()
        })
        .sum())
}

/// One rollout as `(state, action)` pairs.
pub type Trajectory = Vec<(usize, usize)>;

pub(crate) fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the cumulative sum; take the last supported entry
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Draws `n_traj` rollouts of length `horizon` from `p0`, `π`, `P`.
pub fn sample_trajectories(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    n_traj: usize,
    horizon: usize,
    seed: u64,
) -> Vec<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with(mdp, policy, n_traj, horizon, &mut rng)
}

pub(crate) fn sample_with(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    n_traj: usize,
    horizon: usize,
    rng: &mut impl Rng,
) -> Vec<Trajectory> {
    (0..n_traj)
        .map(|_| {
            let mut s = sample_index(&mdp.init_dist, rng);
            let mut traj = Vec::with_capacity(horizon);
            for step in 0..horizon {
                let a = sample_index(policy.row(s), rng);
                traj.push((s, a));
                if step + 1 < horizon {
                    s = sample_index(&mdp.transition[s][a], rng);
                }
            }
            traj
        })
        .collect()
}

/// Expert by soft value iteration on `eval_reward` at the given temperature:
/// `π(a|s) ∝ exp(Q(s,a)/τ)`.
pub fn soft_value_iteration(mdp: &TabularMdp, temperature: f64) -> Result<PolicyTable> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(LabError::validation("temperature", None, "must be positive"));
    }
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut v = vec![0.0; ns];
    let mut q = vec![vec![0.0; na]; ns];
    for _ in 0..100_000 {
        for s in 0..ns {
            for a in 0..na {
                let next: f64 = (0..ns).map(|s2| mdp.transition[s][a][s2] * v[s2]).sum();
                q[s][a] = mdp.eval_reward[s][a] + mdp.gamma * next;
            }
        }
        let mut delta: f64 = 0.0;
        for s in 0..ns {
            let m = q[s].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + temperature * q[s].iter().map(|x| ((x - m) / temperature).exp()).sum::<f64>().ln();
            delta = delta.max((lse - v[s]).abs());
            v[s] = lse;
        }
        if delta < 1e-13 {
            break;
        }
    }
    let logits: Table = q
        .iter()
        .map(|row| row.iter().map(|x| x / temperature).collect())
        .collect();
    Ok(PolicyTable::from_logits(&logits))
}

/// Random dense MDP for property tests and audits. Every transition row has
/// full support; rewards are uniform in `[0, 1)`.
pub fn random_mdp(n_states: usize, n_actions: usize, gamma: f64, rng: &mut impl Rng) -> TabularMdp {
    let dist = |rng: &mut dyn rand::RngCore, n: usize| -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 0.05).collect();
        let z: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / z).collect()
    };
    let transition = (0..n_states)
        .map(|_| (0..n_actions).map(|_| dist(rng, n_states)).collect())
        .collect();
    let init_dist = dist(rng, n_states);
    let eval_reward = (0..n_states)
        .map(|_| (0..n_actions).map(|_| rng.gen::<f64>()).collect())
        .collect();
    TabularMdp {
        n_states,
        n_actions,
        transition,
        init_dist,
        gamma,
        eval_reward,
    }
}

/// Random interior policy with entries bounded away from the floor.
pub fn random_policy(n_states: usize, n_actions: usize, rng: &mut impl Rng) -> PolicyTable {
    let probs = (0..n_states)
        .map(|_| {
            let raw: Vec<f64> = (0..n_actions).map(|_| rng.gen::<f64>() + 0.1).collect();
            let z: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / z).collect()
        })
        .collect();
    PolicyTable::project(probs).0
}

pub fn random_disc(n_states: usize, n_actions: usize, rng: &mut impl Rng) -> DiscriminatorTable {
    let values = (0..n_states)
        .map(|_| (0..n_actions).map(|_| rng.gen_range(0.1..0.9)).collect())
        .collect();
    DiscriminatorTable::clamped(values).0
}
