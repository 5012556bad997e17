//! `assign`, `distribute`, `combined` and `info`.

use std::path::PathBuf;

use log::{error, info};
use netequil::assignment::{
    demand_cost, frank_wolfe_solve, primal_objective, ustm_assign, StepRule, UstmAssignConfig,
};
use netequil::combined::{
    evans_solve, four_stage_solve, ustm_combined_solve, CombinedConfig, CombinedProblem,
    CombinedResult, EvansConfig, FourStageConfig, TIGHT_DELTA,
};
use netequil::distribution::{DistributionMethod, DistributionProblem, DistributionStop};
use netequil::paths::mode_link_times;
use netequil::trace::{SolveTrace, StopRule};
use netequil::{CostModel, PathEngine};

use crate::artifacts::{self, Artifacts, SummaryRow};
use crate::config::{ExperimentConfig, SolverParams};
use crate::scenario;
use crate::UsageError;

/// Solvers that returned an error; the run exits nonzero if any did.
#[derive(Debug, Default)]
pub struct RunReport {
    pub out: PathBuf,
    pub failed: Vec<String>,
    pub summary: Vec<SummaryRow>,
}

fn engine(cfg: &ExperimentConfig) -> Result<PathEngine, UsageError> {
    PathEngine::new(Some(cfg.run.threads))
        .map_err(|e| UsageError::new("run.threads", e.to_string()))
}

fn stop(cfg: &ExperimentConfig, gap_tol: f64) -> StopRule {
    StopRule {
        max_iter: cfg.run.max_iter,
        gap_tol,
        max_seconds: cfg.run.max_seconds,
    }
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.run.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn open(cfg: &ExperimentConfig, command: &str) -> Result<Artifacts, UsageError> {
    let dir = out_dir(cfg);
    let mut a = Artifacts::create(&dir, command, &cfg.hash())
        .map_err(|e| UsageError::new("--out", format!("cannot create {}: {e}", dir.display())))?;
    write(&mut a, "config.toml", &cfg.to_toml());
    Ok(a)
}

fn write(a: &mut Artifacts, name: &str, content: &str) {
    if let Err(e) = a.write(name, content) {
        error!("writing {name}: {e}");
    }
}

fn stamp(trace: &mut SolveTrace, network: &str, cfg: &ExperimentConfig) {
    trace.network = network.to_string();
    trace.config_hash = cfg.hash();
}

/// A solver's own stopping test, re-checked on its last logged row.
#[derive(Clone, Copy)]
enum Target {
    RelativeGap(f64),
    AbsoluteGap { eps: f64, violation: Option<f64> },
}

impl Target {
    fn met(self, trace: &SolveTrace) -> bool {
        let Some(r) = trace.last() else { return false };
        match self {
            Target::RelativeGap(eps) => r.gap <= eps * r.primal.abs(),
            Target::AbsoluteGap { eps, violation } => {
                r.gap.abs() <= eps && violation.is_none_or(|v| r.violation <= v)
            }
        }
    }
}

fn summarize(
    name: &str,
    trace: &SolveTrace,
    primal: f64,
    dual: f64,
    vehicle_hours: f64,
    converged: bool,
) -> SummaryRow {
    let last = trace.last();
    SummaryRow {
        solver: name.to_string(),
        status: if converged { "converged" } else { "budget" }.into(),
        iterations: last.map_or(0, |r| r.iteration),
        primal,
        dual,
        gap: primal - dual,
        violation: last.map_or(f64::NAN, |r| r.violation),
        vehicle_hours,
        elapsed_s: last.map_or(0.0, |r| r.elapsed_s),
        message: String::new(),
    }
}

fn finish(mut a: Artifacts, summary: Vec<SummaryRow>, failed: Vec<String>) -> RunReport {
    write(&mut a, "summary.csv", &artifacts::summary_table(&summary));
    RunReport {
        out: a.dir().to_path_buf(),
        failed,
        summary,
    }
}

fn record_failure(
    name: &str,
    e: impl std::fmt::Display,
    summary: &mut Vec<SummaryRow>,
    failed: &mut Vec<String>,
) {
    error!("{name} failed: {e}");
    summary.push(SummaryRow::failed(name, e.to_string()));
    failed.push(name.to_string());
}

enum AssignSolver {
    FrankWolfe(StepRule),
    Ustm,
}

fn step_rule(name: &str, p: &SolverParams) -> Option<StepRule> {
    let rule = match name {
        "fw-2/(k+2)" => StepRule::Fixed2OverKPlus2,
        "fw-1/k" => StepRule::Harmonic1OverK,
        "fw-brent" => StepRule::BrentExact {
            tolerance: p.brent_tolerance,
        },
        "fw-armijo" => StepRule::ArmijoBacktracking {
            shrink: p.armijo_shrink,
            slope: p.armijo_slope,
        },
        "fw-adaptive" => StepRule::AdaptiveFWBacktracking {
            initial_lipschitz: None,
            increase: p.adaptive_increase,
            decrease: p.adaptive_decrease,
        },
        _ => return None,
    };
    Some(rule)
}

fn assign_solvers(
    cfg: &ExperimentConfig,
    model: &CostModel,
) -> Result<Vec<(String, AssignSolver)>, UsageError> {
    let mut out = Vec::new();
    for (k, name) in cfg.run.solvers.iter().enumerate() {
        let path = format!("run.solvers[{k}]");
        if name == "ustm" {
            out.push((name.clone(), AssignSolver::Ustm));
            continue;
        }
        if matches!(model, CostModel::StableDynamics) {
            return Err(UsageError::new(
                path,
                format!("{name:?} needs the beckmann model; use \"ustm\""),
            ));
        }
        if name == "fw-all" {
            for rule in StepRule::all() {
                let rule = step_rule(rule.name(), &cfg.params).expect("known rule");
                out.push((rule.name().to_string(), AssignSolver::FrankWolfe(rule)));
            }
            continue;
        }
        let rule = step_rule(name, &cfg.params).ok_or_else(|| {
            UsageError::new(path, format!("unknown solver {name:?}; expected ustm, fw-all or one of fw-2/(k+2), fw-1/k, fw-brent, fw-armijo, fw-adaptive"))
        })?;
        out.push((name.clone(), AssignSolver::FrankWolfe(rule)));
    }
    Ok(out)
}

pub fn cmd_assign(cfg: &ExperimentConfig) -> Result<RunReport, UsageError> {
    cfg.validate()?;
    let sc = scenario::assignment(&cfg.scenario)?;
    let solvers = assign_solvers(cfg, &sc.model)?;
    let engine = engine(cfg)?;
    let mut a = open(cfg, "assign")?;
    let (mut summary, mut failed) = (Vec::new(), Vec::new());
    for (name, solver) in solvers {
        info!("assign: {name} on {}", sc.name);
        let (result, target) = match solver {
            AssignSolver::FrankWolfe(rule) => {
                let CostModel::Beckmann(p) = sc.model else {
                    unreachable!("checked above")
                };
                let res = frank_wolfe_solve(
                    &sc.network,
                    &p,
                    &sc.demand,
                    rule,
                    stop(cfg, cfg.run.eps),
                    &engine,
                );
                (res, Target::RelativeGap(cfg.run.eps))
            }
            AssignSolver::Ustm => {
                let eps = cfg.run.eps * free_flow_scale(&sc, &engine);
                let config = UstmAssignConfig {
                    stop: stop(cfg, 0.0),
                    violation_tol: cfg.run.violation_tol,
                    restart: cfg.run.restart,
                    ..UstmAssignConfig::new(eps, cfg.run.max_iter)
                };
                let violation = sd_violation(&sc.model, cfg.run.violation_tol, eps);
                (
                    ustm_assign(&sc.network, sc.model, &sc.demand, &config, &engine),
                    Target::AbsoluteGap { eps, violation },
                )
            }
        };
        let mut res = match result {
            Ok(r) => r,
            Err(e) => {
                record_failure(&name, e, &mut summary, &mut failed);
                continue;
            }
        };
        stamp(&mut res.trace, &sc.name, cfg);
        let slug = artifacts::slug(&name);
        write(
            &mut a,
            &format!("trace-{slug}.csv"),
            &res.trace.to_delimited(),
        );
        write(
            &mut a,
            &format!("flows-{slug}.csv"),
            &artifacts::flow_table(&sc.network, &res.flows, &res.times),
        );
        let total = res.total_flows();
        let primal = primal_objective(&sc.network, &res.model, &res.flows).unwrap_or(f64::NAN);
        let last = res.trace.last().cloned().unwrap_or_default();
        let vh = artifacts::vehicle_hours(&total, &res.times);
        summary.push(summarize(
            &name,
            &res.trace,
            primal,
            last.dual,
            vh,
            target.met(&res.trace),
        ));
    }
    Ok(finish(a, summary, failed))
}

fn sd_violation(model: &CostModel, tol: Option<f64>, eps: f64) -> Option<f64> {
    matches!(model, CostModel::StableDynamics).then(|| tol.unwrap_or(eps))
}

/// `Σ d_ij T_ij` at free-flow times, a lower bound on the optimal potential;
/// USTM's `ε` is `eps` times this.
fn free_flow_scale(sc: &scenario::AssignmentScenario, engine: &PathEngine) -> f64 {
    let t = sc.network.free_flow_times();
    let scale = engine
        .costs(&sc.network, &mode_link_times(&sc.network, &t))
        .map(|c| demand_cost(&sc.demand, &c))
        .unwrap_or(1.0);
    if scale.is_finite() && scale > 0.0 {
        scale
    } else {
        1.0
    }
}

fn distribution_methods(cfg: &ExperimentConfig) -> Result<Vec<DistributionMethod>, UsageError> {
    let mut out = Vec::new();
    for (k, name) in cfg.run.solvers.iter().enumerate() {
        if name == "all" {
            out.extend(DistributionMethod::all());
            continue;
        }
        let m = name.parse::<DistributionMethod>().map_err(|_| {
            UsageError::new(
                format!("run.solvers[{k}]"),
                format!("unknown solver {name:?}; expected all, sinkhorn-taut-shift, agm-nonpd or mixed-agm-nonpd"),
            )
        })?;
        out.push(m);
    }
    Ok(out)
}

pub fn cmd_distribute(cfg: &ExperimentConfig) -> Result<RunReport, UsageError> {
    cfg.validate()?;
    let sc = scenario::distribution(&cfg.scenario)?;
    let methods = distribution_methods(cfg)?;
    let problems = cfg
        .run
        .gammas
        .iter()
        .map(|&g| {
            DistributionProblem::new(
                sc.rows,
                sc.cols,
                sc.costs.clone(),
                &sc.productions,
                &sc.attractions,
                g,
            )
            .map_err(|e| UsageError::new("scenario", e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut a = open(cfg, "distribute")?;
    let dstop = DistributionStop::new(cfg.run.marginal_tol, cfg.run.max_iter);
    let total: f64 = sc.productions.iter().sum();
    let (mut summary, mut failed) = (Vec::new(), Vec::new());
    for (gamma, problem) in cfg.run.gammas.iter().zip(&problems) {
        for m in &methods {
            let name = format!("{}-g{gamma}", m.name());
            info!("distribute: {name} on {}", sc.name);
            let mut res = match m.solve(problem, &dstop, None) {
                Ok(r) => r,
                Err(e) => {
                    record_failure(&name, e, &mut summary, &mut failed);
                    continue;
                }
            };
            stamp(&mut res.trace, &sc.name, cfg);
            res.trace.note("gamma", gamma);
            let slug = artifacts::slug(&name);
            write(
                &mut a,
                &format!("trace-{slug}.csv"),
                &res.trace.to_delimited(),
            );
            let trips: Vec<f64> = res.rounded.d.iter().map(|d| d * total).collect();
            write(
                &mut a,
                &format!("trips-{slug}.csv"),
                &artifacts::matrix_table(sc.rows, sc.cols, &trips),
            );
            let last = res.trace.last().cloned().unwrap_or_default();
            // Normalized units: primal is E of the rounded plan, dual is −φ.
            let mut row = summarize(
                &name,
                &res.trace,
                last.primal,
                last.dual,
                f64::NAN,
                res.converged,
            );
            row.gap = res.gap;
            summary.push(row);
        }
    }
    Ok(finish(a, summary, failed))
}

#[derive(Clone, Copy)]
enum CombinedSolver {
    Evans,
    FourStage,
    Ustm,
}

fn combined_solvers(
    cfg: &ExperimentConfig,
    model: &CostModel,
) -> Result<Vec<(String, CombinedSolver)>, UsageError> {
    let mut out = Vec::new();
    for (k, name) in cfg.run.solvers.iter().enumerate() {
        let path = format!("run.solvers[{k}]");
        let solver = match name.as_str() {
            "evans" => CombinedSolver::Evans,
            "four-stage" => CombinedSolver::FourStage,
            "ustm" => CombinedSolver::Ustm,
            _ => {
                return Err(UsageError::new(
                    path,
                    format!("unknown solver {name:?}; expected evans, four-stage or ustm"),
                ))
            }
        };
        if matches!(model, CostModel::StableDynamics) && !matches!(solver, CombinedSolver::Ustm) {
            return Err(UsageError::new(
                path,
                format!("{name:?} needs the beckmann model; use \"ustm\""),
            ));
        }
        out.push((name.clone(), solver));
    }
    Ok(out)
}

pub fn cmd_combined(cfg: &ExperimentConfig) -> Result<RunReport, UsageError> {
    cfg.validate()?;
    let sc = scenario::combined(&cfg.scenario)?;
    let solvers = combined_solvers(cfg, &sc.model)?;
    let inner = cfg
        .params
        .inner_method
        .parse::<DistributionMethod>()
        .map_err(|e| UsageError::new("params.inner_method", e.to_string()))?;
    let engine = engine(cfg)?;
    let problem = CombinedProblem::new(&sc.network, sc.model, &sc.params, &sc.demand, &engine)
        .map_err(|e| UsageError::new("scenario", e.to_string()))?
        .with_method(inner, cfg.params.inner_max_iter);
    let mut a = open(cfg, "combined")?;
    let (mut summary, mut failed) = (Vec::new(), Vec::new());
    for (name, solver) in solvers {
        info!("combined: {name} on {}", sc.name);
        let relative = Target::RelativeGap(cfg.run.eps);
        let (result, target) = match solver {
            CombinedSolver::Evans => {
                let c = EvansConfig {
                    stop: stop(cfg, cfg.run.eps),
                    ..EvansConfig::new(cfg.run.max_iter)
                };
                (evans_solve(&problem, &c), relative)
            }
            CombinedSolver::FourStage => {
                let mut c = FourStageConfig::new(cfg.run.max_iter);
                c.outer = stop(cfg, cfg.run.eps);
                c.inner_assignment_iters = cfg.params.four_stage_inner_iters;
                c.inner_rule = StepRule::BrentExact {
                    tolerance: cfg.params.brent_tolerance,
                };
                c.averaging = cfg.params.four_stage_averaging;
                (four_stage_solve(&problem, &c), relative)
            }
            CombinedSolver::Ustm => match combined_scale(&problem) {
                Ok(scale) => {
                    let eps = cfg.run.eps * scale;
                    let c = CombinedConfig {
                        stop: stop(cfg, 0.0),
                        violation_tol: cfg.run.violation_tol,
                        ..CombinedConfig::new(eps, cfg.run.max_iter)
                    };
                    let violation = sd_violation(&sc.model, cfg.run.violation_tol, eps);
                    (
                        ustm_combined_solve(&problem, &c),
                        Target::AbsoluteGap { eps, violation },
                    )
                }
                Err(e) => (Err(e), relative),
            },
        };
        let mut res: CombinedResult = match result {
            Ok(r) => r,
            Err(e) => {
                record_failure(&name, e, &mut summary, &mut failed);
                continue;
            }
        };
        stamp(&mut res.trace, &sc.name, cfg);
        let slug = artifacts::slug(&name);
        write(
            &mut a,
            &format!("trace-{slug}.csv"),
            &res.trace.to_delimited(),
        );
        write(
            &mut a,
            &format!("flows-{slug}.csv"),
            &artifacts::flow_table(&sc.network, &res.flows, &res.times),
        );
        write(
            &mut a,
            &format!("trips-{slug}.csv"),
            &artifacts::trip_table(&res.trips),
        );
        let total = artifacts::total_flows(&res.flows);
        if matches!(sc.model, CostModel::StableDynamics) {
            let h = artifacts::flow_capacity_histogram(&sc.network, &total);
            write(
                &mut a,
                &format!("hist-flow-capacity-{slug}.csv"),
                &h.render("flow/capacity ratio over capacitated links"),
            );
            let h = artifacts::time_ratio_histogram(&sc.network, &res.times);
            write(
                &mut a,
                &format!("hist-time-freeflow-{slug}.csv"),
                &h.render("time/free-flow time ratio"),
            );
        }
        let vh = artifacts::vehicle_hours(&total, &res.times);
        summary.push(summarize(
            &name,
            &res.trace,
            res.primal,
            res.dual,
            vh,
            target.met(&res.trace),
        ));
    }
    Ok(finish(a, summary, failed))
}

/// `|E|` of the subproblem at free-flow times; USTM's `ε` is `eps` times this.
fn combined_scale(problem: &CombinedProblem) -> netequil::Result<f64> {
    let eval = problem.evaluate(&problem.network.free_flow_times(), TIGHT_DELTA)?;
    let s = eval.objective.abs();
    Ok(if s.is_finite() && s > 0.0 { s } else { 1.0 })
}

/// Version, cores and, with a config, the scenario dimensions.
pub fn cmd_info(cfg: Option<&ExperimentConfig>) -> Result<String, UsageError> {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut s = format!(
        "netequil {}\navailable cores: {cores}\n",
        env!("CARGO_PKG_VERSION")
    );
    match cfg {
        Some(cfg) => {
            s.push_str(&scenario::describe(&cfg.scenario)?);
            s.push_str(&format!(
                "threads: {}\nconfig hash: {}\n",
                cfg.run.threads,
                cfg.hash()
            ));
        }
        None => {
            s.push_str(&format!(
                "assignment sources: {}\ndistribution sources: {}\ncombined sources: {}\n",
                scenario::ASSIGNMENT_SOURCES.join(", "),
                scenario::DISTRIBUTION_SOURCES.join(", "),
                scenario::COMBINED_SOURCES.join(", ")
            ));
        }
    }
    Ok(s)
}
