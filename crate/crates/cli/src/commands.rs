use std::path::{Path, PathBuf};

use cgail_core::flow::{integrate_flow, FlowRow, FlowState};
use cgail_core::io::{write_csv, write_json};
use cgail_core::metrics::{aggregate, AggregateRow, RunSummary};
use cgail_core::onestep::{find_equilibria, integrate, residual, ScalarState, TrajectoryRow};
use cgail_core::stability::{grid_audit, AuditCsvRow};
use cgail_core::train::train;
use cgail_core::{DiscriminatorTable, PolicyTable, TrainConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{
    load, parse_sweep, set_axis, AuditConfig, EquilibriaConfig, FlowConfig, SimulateConfig, TrainFileConfig,
};
use crate::CliError;

const SCHEMA_VERSION: u32 = 1;

fn base_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn pick(out: Option<&Path>, configured: &Path) -> PathBuf {
    out.map(Path::to_path_buf).unwrap_or_else(|| configured.to_path_buf())
}

pub fn simulate(config: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let cfg: SimulateConfig = load(config)?;
    let dir = pick(out, &cfg.output_dir);
    for (i, p) in cfg.params.iter().enumerate() {
        let traj = integrate(p, ScalarState::new(cfg.init.x, cfg.init.y), cfg.controlled, cfg.dt, cfg.steps, cfg.integrator)?;
        let rows = traj.states.iter().map(|s| TrajectoryRow::at(p, s, cfg.controlled));
        write_csv(dir.join(format!("trajectory_{i:03}.csv")), rows)?;
        println!(
            "tuple {i}: terminal ({:.6}, {:.6}), distance to (1/2, E) {:.3e}, clamp events {}",
            traj.last().x,
            traj.last().y,
            traj.last().distance_to_desired(p),
            traj.clamp_events
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct EquilibriumRow {
    index: usize,
    c: f64,
    lambda: f64,
    #[serde(rename = "E")]
    expert_prob: f64,
    k: f64,
    alpha: f64,
    controlled: bool,
    x: f64,
    y: f64,
    residual: f64,
    is_desired: bool,
}

pub fn equilibria(config: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let cfg: EquilibriaConfig = load(config)?;
    let mut rows = Vec::new();
    for (index, p) in cfg.params.iter().enumerate() {
        let roots = find_equilibria(p, cfg.controlled, cfg.grid)?;
        println!("tuple {index}: {} root(s)", roots.len());
        for (x, y) in roots {
            rows.push(EquilibriumRow {
                index,
                c: p.c,
                lambda: p.lambda,
                expert_prob: p.expert_prob,
                k: p.k,
                alpha: p.alpha,
                controlled: cfg.controlled,
                x,
                y,
                residual: residual(p, cfg.controlled, x, y),
                is_desired: (x - 0.5).hypot(y - p.expert_prob) < 1e-6,
            });
        }
    }
    write_csv(pick(out, &cfg.output), rows)?;
    Ok(())
}

pub fn audit(config: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let cfg: AuditConfig = load(config)?;
    let rows = grid_audit(&cfg.ranges, cfg.resolution, &cfg.settings.build())?;
    write_csv(pick(out, &cfg.output), rows.iter().map(AuditCsvRow::from))?;
    let holding = rows.iter().filter(|r| r.assumption_holds).count();
    let counterexamples = rows.iter().filter(|r| r.counterexample).count();
    println!("{} tuples, {holding} satisfy the assumption, {counterexamples} counterexample(s)", rows.len());
    if counterexamples > 0 {
        return Err(CliError::Counterexamples(counterexamples));
    }
    Ok(())
}

pub fn flow(config: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let cfg: FlowConfig = load(config)?;
    let (mdp, expert) = cfg.mdp.resolve(&base_dir(config))?;
    let init = FlowState {
        policy: PolicyTable::uniform(mdp.n_states, mdp.n_actions),
        disc: DiscriminatorTable::constant(mdp.n_states, mdp.n_actions, 0.5),
        t: 0.0,
    };
    let steps = integrate_flow(&mdp, &expert, init, cfg.lambda, cfg.dt, cfg.steps)?;
    write_csv(pick(out, &cfg.output), steps.iter().map(FlowRow::from))?;
    let last = steps.last().expect("flow records the initial state");
    println!(
        "t = {}: policy distance to expert {:.6}, max drifts (D {:.3e}, π {:.3e})",
        last.state.t, last.policy_distance_to_expert, last.report.max_abs_disc_drift, last.report.max_abs_policy_drift
    );
    Ok(())
}

struct Run {
    group: String,
    config: TrainConfig,
}

fn label(point: &[(String, f64)]) -> String {
    if point.is_empty() {
        return "base".into();
    }
    point.iter().map(|(n, v)| format!("{n}={v}")).collect::<Vec<_>>().join(",")
}

fn plan_runs(cfg: &TrainFileConfig, sweeps: &[String]) -> Result<Vec<Run>, CliError> {
    let mut axes = cfg.sweep.clone();
    for spec in sweeps {
        let (name, values) = parse_sweep(spec)?;
        axes.insert(name, values);
    }
    let mut points: Vec<Vec<(String, f64)>> = vec![Vec::new()];
    for (name, values) in &axes {
        if values.is_empty() {
            return Err(CliError::Config(format!("sweep `{name}` has no values")));
        }
        set_axis(&mut cfg.train.clone(), name, 0.0)?;
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push((name.clone(), v));
                    q
                })
            })
            .collect();
    }
    let mut runs = Vec::new();
    for point in &points {
        for &seed in &cfg.seeds {
            let mut config = TrainConfig { seed, ..cfg.train.clone() };
            for (name, v) in point {
                set_axis(&mut config, name, *v)?;
            }
            config.validate()?;
            runs.push(Run { group: label(point), config });
        }
    }
    Ok(runs)
}

fn file_stem(group: &str, seed: u64) -> String {
    format!("{}_seed{seed}", group.replace(',', "_"))
}

#[derive(Serialize)]
struct AggregateDoc<'a> {
    schema_version: u32,
    rows: &'a [AggregateRow],
}

#[derive(Serialize)]
struct AggregateCsvRow<'a> {
    group: &'a str,
    k: f64,
    runs: usize,
    unconverged: usize,
    convergence_step_mean: f64,
    convergence_step_std: f64,
    oscillation_range_mean: f64,
    oscillation_range_std: f64,
    final_normalized_return_mean: f64,
    final_normalized_return_std: f64,
    final_wasserstein_mean: f64,
    final_wasserstein_std: f64,
}

fn write_aggregate(dir: &Path, summaries: &[RunSummary]) -> Result<Vec<AggregateRow>, CliError> {
    let rows = aggregate(summaries);
    write_json(dir.join("aggregate.json"), &AggregateDoc { schema_version: SCHEMA_VERSION, rows: &rows })?;
    write_csv(
        dir.join("aggregate.csv"),
        rows.iter().map(|r| AggregateCsvRow {
            group: &r.group,
            k: r.k,
            runs: r.runs,
            unconverged: r.unconverged,
            convergence_step_mean: r.convergence_step.mean,
            convergence_step_std: r.convergence_step.std,
            oscillation_range_mean: r.oscillation_range.mean,
            oscillation_range_std: r.oscillation_range.std,
            final_normalized_return_mean: r.final_normalized_return.mean,
            final_normalized_return_std: r.final_normalized_return.std,
            final_wasserstein_mean: r.final_wasserstein.mean,
            final_wasserstein_std: r.final_wasserstein.std,
        }),
    )?;
    Ok(rows)
}

fn print_table(rows: &[AggregateRow]) {
    for r in rows {
        println!(
            "{:<24} runs {:>3}  convergence {:>8.2} ± {:<7.2} oscillation {:.5} ± {:.5}  return {:.4}  W {:.5}",
            r.group,
            r.runs,
            r.convergence_step.mean,
            r.convergence_step.std,
            r.oscillation_range.mean,
            r.oscillation_range.std,
            r.final_normalized_return.mean,
            r.final_wasserstein.mean
        );
    }
}

pub fn train_cmd(config: &Path, out: Option<&Path>, sweeps: &[String]) -> Result<(), CliError> {
    let cfg: TrainFileConfig = load(config)?;
    let (mdp, expert) = cfg.mdp.resolve(&base_dir(config))?;
    let runs = plan_runs(&cfg, sweeps)?;
    if cfg.window == 0 || cfg.window > cfg.train.iterations {
        return Err(CliError::Config(format!("window {} not in 1..=iterations", cfg.window)));
    }
    let dir = pick(out, &cfg.output_dir);
    let execute = || -> Result<Vec<RunSummary>, CliError> {
        runs.par_iter()
            .map(|run| {
                let trace = train(&mdp, &expert, &run.config)?;
                let stem = file_stem(&run.group, run.config.seed);
                write_csv(dir.join(format!("trace_{stem}.csv")), &trace.records)?;
                let summary = trace.summary(&run.group, &run.config, cfg.window)?;
                write_json(dir.join(format!("summary_{stem}.json")), &summary)?;
                Ok(summary)
            })
            .collect()
    };
    let summaries = match cfg.parallelism {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("parallelism: {e}")))?
            .install(execute)?,
        None => execute()?,
    };
    print_table(&write_aggregate(&dir, &summaries)?);
    Ok(())
}

pub fn aggregate_cmd(inputs: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(inputs)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", inputs.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("summary_") && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Config(format!("no summary_*.json files in {}", inputs.display())));
    }
    let mut summaries = Vec::with_capacity(paths.len());
    for path in &paths {
        let s: RunSummary = load(path)?;
        if s.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!("{}: unsupported schema_version {}", path.display(), s.schema_version)));
        }
        summaries.push(s);
    }
    print_table(&write_aggregate(out.unwrap_or(inputs), &summaries)?);
    Ok(())
}
