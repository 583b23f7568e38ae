//! State Wasserstein distance and aggregation of run summaries.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::mdp::{TabularMdp, Table, Trajectory};

const MASS_TOL: f64 = 1e-9;
const FLOW_EPS: f64 = 1e-15;

/// Ground cost between tabular states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundCost {
    /// Shortest-path hop count on the transition support graph.
    #[default]
    Hop,
    /// Euclidean distance between one-hot embeddings: `√2` off the diagonal.
    OneHot,
}

impl GroundCost {
    pub fn matrix(&self, mdp: &TabularMdp) -> Table {
        match self {
            GroundCost::Hop => mdp.hop_distances(),
            GroundCost::OneHot => (0..mdp.n_states)
                .map(|i| {
                    (0..mdp.n_states)
                        .map(|j| if i == j { 0.0 } else { std::f64::consts::SQRT_2 })
                        .collect()
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalStateDistribution {
    pub support: Vec<usize>,
    pub weights: Vec<f64>,
    pub pairwise_cost: Table,
}

impl EmpiricalStateDistribution {
    pub fn new(support: Vec<usize>, weights: Vec<f64>, pairwise_cost: Table) -> Result<Self> {
        let n = support.len();
        if weights.len() != n || pairwise_cost.len() != n || pairwise_cost.iter().any(|r| r.len() != n) {
            return Err(LabError::validation("distribution", None, "support, weights and cost sizes differ"));
        }
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(LabError::validation("weights", Some(i.to_string()), "must be finite and >= 0"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > MASS_TOL {
            return Err(LabError::validation("weights", None, format!("sum to {sum}, expected 1")));
        }
        for i in 0..n {
            if pairwise_cost[i][i] != 0.0 {
                return Err(LabError::validation("pairwise_cost", Some(format!("{i}][{i}")), "diagonal must be 0"));
            }
            for j in 0..n {
                let c = pairwise_cost[i][j];
                if !(c.is_finite() && c >= 0.0) || c != pairwise_cost[j][i] {
                    return Err(LabError::validation(
                        "pairwise_cost",
                        Some(format!("{i}][{j}")),
                        "must be finite, nonnegative and symmetric",
                    ));
                }
            }
        }
        Ok(EmpiricalStateDistribution { support, weights, pairwise_cost })
    }

    /// Visitation frequencies of every state in `trajectories` (uniform
    /// weight per visited step) over the full state space of the MDP.
    pub fn from_trajectories(trajectories: &[Trajectory], n_states: usize, cost: Table) -> Result<Self> {
        let mut counts = vec![0usize; n_states];
        for &(s, _) in trajectories.iter().flatten() {
            counts[s] += 1;
        }
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(LabError::validation("trajectories", None, "no visited states"));
        }
        let weights = counts.iter().map(|&c| c as f64 / total as f64).collect();
        Self::new((0..n_states).collect(), weights, cost)
    }
}

/// Exact optimal-transport cost between two distributions on the same support
/// and ground cost, by successive shortest augmenting paths on the
/// transportation network.
pub fn wasserstein(p: &EmpiricalStateDistribution, q: &EmpiricalStateDistribution) -> Result<f64> {
    if p.support != q.support || p.pairwise_cost != q.pairwise_cost {
        return Err(LabError::validation("distribution", None, "support or ground cost differs"));
    }
    transport_cost(&p.weights, &q.weights, &p.pairwise_cost)
}

/// Minimum-cost transport of `supply` onto `demand` under `cost`.
pub fn transport_cost(supply: &[f64], demand: &[f64], cost: &Table) -> Result<f64> {
    let n = supply.len();
    let m = demand.len();
    let mismatch = supply.iter().sum::<f64>() - demand.iter().sum::<f64>();
    if mismatch.abs() > MASS_TOL {
        return Err(LabError::Infeasible(mismatch));
    }
    let mut supply = supply.to_vec();
    let mut demand = demand.to_vec();
    let mut flow = vec![vec![0.0; m]; n];
    // nodes: sources 0..n, sinks n..n+m
    let nodes = n + m;
    loop {
        if !supply.iter().any(|&s| s > FLOW_EPS) || !demand.iter().any(|&d| d > FLOW_EPS) {
            break;
        }
        // Bellman-Ford from all sources with remaining supply
        let mut dist = vec![f64::INFINITY; nodes];
        let mut pred: Vec<Option<usize>> = vec![None; nodes];
        for i in 0..n {
            if supply[i] > FLOW_EPS {
                dist[i] = 0.0;
            }
        }
        for _ in 0..nodes {
            let mut changed = false;
            for i in 0..n {
                for j in 0..m {
                    let c = cost[i][j];
                    // forward arc source -> sink, unbounded
                    if dist[i] + c < dist[n + j] - 1e-15 {
                        dist[n + j] = dist[i] + c;
                        pred[n + j] = Some(i);
                        changed = true;
                    }
                    // residual arc sink -> source where flow exists
                    if flow[i][j] > FLOW_EPS && dist[n + j] - c < dist[i] - 1e-15 {
                        dist[i] = dist[n + j] - c;
                        pred[i] = Some(n + j);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let sink = (0..m)
            .filter(|&j| demand[j] > FLOW_EPS && dist[n + j].is_finite())
            .min_by(|&a, &b| dist[n + a].total_cmp(&dist[n + b]));
        let Some(j_end) = sink else {
            return Err(LabError::Infeasible(demand.iter().sum()));
        };
        // walk back to a source, collecting the bottleneck
        let mut path = vec![n + j_end];
        let mut node = n + j_end;
        while let Some(prev) = pred[node] {
            path.push(prev);
            node = prev;
            if path.len() > 2 * nodes + 2 {
                return Err(LabError::Infeasible(0.0));
            }
        }
        let start = *path.last().expect("path has a source");
        let mut amount = supply[start].min(demand[j_end]);
        for w in path.windows(2) {
            let (to, from) = (w[0], w[1]);
            if from >= n {
                // backward arc: sink `from` -> source `to`
                amount = amount.min(flow[to][from - n]);
            }
        }
        for w in path.windows(2) {
            let (to, from) = (w[0], w[1]);
            if from < n {
                flow[from][to - n] += amount;
            } else {
                flow[to][from - n] -= amount;
            }
        }
        supply[start] -= amount;
        demand[j_end] -= amount;
    }
    Ok((0..n)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .map(|(i, j)| flow[i][j].max(0.0) * cost[i][j])
        .sum())
}

/// Outcome of one training run, as consumed by [`aggregate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub group: String,
    pub k: f64,
    pub seed: u64,
    pub iterations: usize,
    pub convergence_step: Option<usize>,
    pub oscillation_range: f64,
    pub final_normalized_return: f64,
    pub final_wasserstein: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub group: String,
    pub k: f64,
    pub runs: usize,
    /// Runs that never reached 95% of their maximum; counted at `iterations`.
    pub unconverged: usize,
    pub convergence_step: MeanStd,
    pub oscillation_range: MeanStd,
    pub final_normalized_return: MeanStd,
    pub final_wasserstein: MeanStd,
}

/// Groups summaries by `(k, group)` and reports mean and population std,
/// ordered by `k` then group label.
pub fn aggregate(summaries: &[RunSummary]) -> Vec<AggregateRow> {
    let mut keys: Vec<(f64, String)> = Vec::new();
    for s in summaries {
        if !keys.iter().any(|(k, g)| *k == s.k && *g == s.group) {
            keys.push((s.k, s.group.clone()));
        }
    }
    keys.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    keys.into_iter()
        .map(|(k, group)| {
            let runs: Vec<&RunSummary> = summaries.iter().filter(|s| s.k == k && s.group == group).collect();
            let col = |f: &dyn Fn(&RunSummary) -> f64| MeanStd::of(&runs.iter().map(|r| f(r)).collect::<Vec<_>>());
            AggregateRow {
                runs: runs.len(),
                unconverged: runs.iter().filter(|r| r.convergence_step.is_none()).count(),
                convergence_step: col(&|r| r.convergence_step.unwrap_or(r.iterations) as f64),
                oscillation_range: col(&|r| r.oscillation_range),
                final_normalized_return: col(&|r| r.final_normalized_return),
                final_wasserstein: col(&|r| r.final_wasserstein),
                group,
                k,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Table {
        vec![vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 1.0], vec![2.0, 1.0, 0.0]]
    }

    fn dist(w: Vec<f64>, cost: Table) -> EmpiricalStateDistribution {
        let n = w.len();
        EmpiricalStateDistribution::new((0..n).collect(), w, cost).unwrap()
    }

    #[test]
    fn identical_distributions_cost_nothing() {
        let p = dist(vec![0.2, 0.3, 0.5], path3());
        assert_eq!(wasserstein(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn point_masses() {
        let cost = vec![vec![0.0, 3.0], vec![3.0, 0.0]];
        let p = dist(vec![1.0, 0.0], cost.clone());
        let q = dist(vec![0.0, 1.0], cost);
        assert_eq!(wasserstein(&p, &q).unwrap(), 3.0);
    }

    #[test]
    fn shift_on_path() {
        let p = dist(vec![0.5, 0.5, 0.0], path3());
        let q = dist(vec![0.0, 0.5, 0.5], path3());
        assert!((wasserstein(&p, &q).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(EmpiricalStateDistribution::new(vec![0, 1], vec![0.5, 0.6], vec![vec![0.0, 1.0], vec![1.0, 0.0]]).is_err());
        assert!(EmpiricalStateDistribution::new(vec![0, 1], vec![0.5, 0.5], vec![vec![0.0, 1.0], vec![2.0, 0.0]]).is_err());
        assert!(matches!(
            transport_cost(&[1.0], &[0.5], &vec![vec![0.0]]),
            Err(LabError::Infeasible(_))
        ));
    }

    #[test]
    fn aggregate_examples() {
        let run = |seed: u64, step: usize| RunSummary {
            schema_version: 1,
            group: "k=0".into(),
            k: 0.0,
            seed,
            iterations: 100,
            convergence_step: Some(step),
            oscillation_range: 0.1,
            final_normalized_return: 0.9,
            final_wasserstein: 0.2,
        };
        let single = aggregate(&[run(0, 10)]);
        assert_eq!(single[0].convergence_step, MeanStd { mean: 10.0, std: 0.0 });
        let pair = aggregate(&[run(0, 10), run(1, 20)]);
        assert_eq!(pair[0].convergence_step, MeanStd { mean: 15.0, std: 5.0 });
        assert_eq!(pair[0].runs, 2);
    }
}
