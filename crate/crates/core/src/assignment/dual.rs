use crate::error::{shape, Error, Result};
use crate::network::{CostModel, LinkCost, Network};
use crate::od::OdMatrix;
use crate::paths::{mode_link_times, Loading, PathEngine};
use crate::trace::{SolveTrace, StopRule, Stopwatch, TraceRow};

use super::ustm::{CompositeObjective, OracleEval, Ustm, UstmConfig};
use super::{
    capacity_violation, demand_cost, dual_penalty, model_defaults, primal_objective, total_flows,
    AssignmentResult,
};

/// Dual of the assignment problem in link times:
/// `Φ(t) = −Σ_m Σ_ij d^m_ij T^m_ij(t)` plus the model's penalty `h(t)`.
/// The gradient of `Φ` is minus the all-or-nothing link flows.
pub struct AssignmentDual<'a> {
    network: &'a Network,
    model: CostModel,
    demand: &'a [OdMatrix],
    engine: &'a PathEngine,
    costs: Vec<LinkCost>,
}

impl<'a> AssignmentDual<'a> {
    pub fn new(
        network: &'a Network,
        model: CostModel,
        demand: &'a [OdMatrix],
        engine: &'a PathEngine,
    ) -> Result<Self> {
        if demand.len() != network.num_modes() {
            return Err(shape("one demand matrix per mode required"));
        }
        if demand.iter().any(|d| d.zones() != network.num_zones()) {
            return Err(shape("demand size does not match zone count"));
        }
        let costs = network.link_costs(&model_defaults(&model));
        Ok(Self {
            network,
            model,
            demand,
            engine,
            costs,
        })
    }
}

impl CompositeObjective for AssignmentDual<'_> {
    type Artifacts = Loading;

    fn dim(&self) -> usize {
        self.network.num_links()
    }

    fn oracle(&self, t: &[f64], _delta: f64) -> Result<OracleEval<Loading>> {
        let loading =
            self.engine
                .assign(self.network, &mode_link_times(self.network, t), self.demand)?;
        let value = -demand_cost(self.demand, &loading.costs);
        let grad = loading.total_flows().into_iter().map(|f| -f).collect();
        Ok(OracleEval {
            value,
            grad,
            artifacts: loading,
        })
    }

    fn h(&self, t: &[f64]) -> f64 {
        dual_penalty(self.network, &self.model, t).unwrap_or(f64::INFINITY)
    }

    fn prox(&self, acc: &[f64], weight: f64, t0: &[f64]) -> Vec<f64> {
        model_prox(self.network, &self.model, &self.costs, acc, weight, t0)
    }
}

/// Prox step of the model's penalty `h`.
pub(crate) fn model_prox(
    network: &Network,
    model: &CostModel,
    costs: &[LinkCost],
    acc: &[f64],
    weight: f64,
    t0: &[f64],
) -> Vec<f64> {
    match model {
        CostModel::StableDynamics => prox_step_sd(network, acc, weight, t0),
        CostModel::Beckmann(_) => costs
            .iter()
            .zip(acc.iter().zip(t0))
            .map(|(c, (a, s))| prox_step_beckmann(c, *a, weight, *s))
            .collect(),
    }
}

/// Closed-form prox for stable dynamics:
/// `argmin_{t ≥ t̄} ½(t − t0)² + acc·t + A f̄ (t − t̄)`.
pub fn prox_step_sd(network: &Network, acc: &[f64], weight: f64, t0: &[f64]) -> Vec<f64> {
    network
        .links()
        .iter()
        .zip(acc.iter().zip(t0))
        .map(|(link, (a, s))| {
            if link.is_uncapacitated() && weight > 0.0 {
                link.free_flow_time
            } else {
                (s - a - weight * link.capacity).max(link.free_flow_time)
            }
        })
        .collect()
}

/// One-dimensional Beckmann prox
/// `argmin_{t ≥ t̄} ½(t − t0)² + acc·t + A σ*(t)`,
/// found as the root of `t − t0 + acc + A σ*'(t)` by safeguarded Newton.
pub fn prox_step_beckmann(cost: &LinkCost, acc: f64, weight: f64, t0: f64) -> f64 {
    let lo0 = cost.free_flow_time;
    let g = |t: f64| t - t0 + acc + weight * cost.conjugate_slope(t);
    if g(lo0) >= 0.0 {
        return lo0;
    }
    let unconstrained = t0 - acc;
    if weight == 0.0 {
        return unconstrained;
    }
    if cost.is_fixed() {
        return lo0;
    }
    let (mut lo, mut hi) = (lo0, unconstrained);
    let mut t = 0.5 * (lo + hi);
    for _ in 0..200 {
        let gt = g(t);
        if gt == 0.0 {
            return t;
        }
        if gt > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let excess = t - lo0;
        let slope = 1.0 + weight * cost.mu * cost.conjugate_slope(t) / excess;
        let newton = t - gt / slope;
        t = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 1e-14 * hi.abs().max(1.0) {
            break;
        }
    }
    t
}

#[derive(Debug, Clone)]
pub struct UstmAssignConfig {
    /// Target accuracy `ε`; also the absolute gap stopping threshold.
    pub eps: f64,
    pub stop: StopRule,
    /// Initial Lipschitz guess.
    pub l0: Option<f64>,
    /// Capacity violation threshold for stable dynamics; ignored for Beckmann.
    pub violation_tol: Option<f64>,
    /// Run first with `10ε`, then restart at the resulting times with `ε`.
    pub restart: bool,
    /// Prox center and starting point; free-flow times if `None`.
    pub initial_times: Option<Vec<f64>>,
}

impl UstmAssignConfig {
    pub fn new(eps: f64, max_iter: usize) -> Self {
        Self {
            eps,
            stop: StopRule::iterations(max_iter),
            l0: None,
            violation_tol: None,
            restart: false,
            initial_times: None,
        }
    }
}

struct Phase {
    flows: Vec<Vec<f64>>,
    times: Vec<f64>,
    done: bool,
}

#[allow(clippy::too_many_arguments)]
fn run_phase(
    problem: &AssignmentDual,
    start: Vec<f64>,
    eps: f64,
    max_iter: usize,
    config: &UstmAssignConfig,
    trace: &mut SolveTrace,
    clock: &Stopwatch,
    calls0: usize,
) -> Result<Phase> {
    let network = problem.network;
    let mut method = Ustm::new(problem, start.clone(), UstmConfig { eps, l0: config.l0 })?;
    let mut weighted = vec![vec![0.0; network.num_links()]; network.num_modes()];
    let mut flows = weighted.clone();
    let mut times = start;
    let first = trace.last().map_or(0, |r| r.iteration + 1);
    for k in 0..max_iter {
        let step = match method.step() {
            Ok(s) => s,
            Err(Error::LipschitzOverflow(l)) if k > 0 => {
                trace.event(
                    first + k,
                    format!("Lipschitz estimate overflowed ({l:e}); stopping"),
                );
                return Ok(Phase {
                    flows,
                    times,
                    done: true,
                });
            }
            Err(e) => return Err(e),
        };
        for (w, f) in weighted.iter_mut().zip(&step.at_y.artifacts.flows) {
            for (a, b) in w.iter_mut().zip(f) {
                *a += step.alpha * b;
            }
        }
        flows = weighted
            .iter()
            .map(|w| w.iter().map(|x| x / step.weight).collect())
            .collect();
        times = method.state().t.clone();
        let primal = primal_objective(network, &problem.model, &flows)?;
        let dual = -step.at_t.value - problem.h(&times);
        let gap = primal - dual;
        let violation = capacity_violation(network, &total_flows(&flows));
        trace.push(TraceRow {
            iteration: first + k,
            elapsed_s: clock.elapsed(),
            primal,
            dual,
            gap,
            violation,
            lipschitz: step.lipschitz,
            weight: step.weight,
            oracle_calls: problem.engine.sweeps() - calls0,
            inner_iterations: step.attempts,
            certificate: step.delta,
        });
        let violation_ok = match problem.model {
            CostModel::StableDynamics => config.violation_tol.is_none_or(|v| violation <= v),
            CostModel::Beckmann(_) => true,
        };
        let gap_ok = gap.abs() <= eps || gap.abs() <= config.stop.gap_tol * primal.abs();
        if gap_ok && violation_ok {
            return Ok(Phase {
                flows,
                times,
                done: true,
            });
        }
        if config.stop.out_of_time(clock) {
            return Ok(Phase {
                flows,
                times,
                done: true,
            });
        }
    }
    Ok(Phase {
        flows,
        times,
        done: false,
    })
}

/// Solves the assignment dual by USTM and recovers primal flows as the
/// weighted average of all-or-nothing loads at the extrapolation points.
pub fn ustm_assign(
    network: &Network,
    model: CostModel,
    demand: &[OdMatrix],
    config: &UstmAssignConfig,
    engine: &PathEngine,
) -> Result<AssignmentResult> {
    let problem = AssignmentDual::new(network, model, demand, engine)?;
    let clock = Stopwatch::start();
    let calls0 = engine.sweeps();
    let mut trace = SolveTrace::new(format!("ustm-{}", model.name()));
    trace.note("eps", config.eps);
    let start = match &config.initial_times {
        Some(t) => {
            if t.len() != network.num_links() {
                return Err(shape("initial times need one entry per link"));
            }
            dual_penalty(network, &model, t)?;
            t.clone()
        }
        None => network.free_flow_times(),
    };
    let mut budget = config.stop.max_iter;
    let mut start = start;
    if config.restart {
        let first = run_phase(
            &problem,
            start,
            10.0 * config.eps,
            budget / 2,
            config,
            &mut trace,
            &clock,
            calls0,
        )?;
        trace.event(
            trace.last().map_or(0, |r| r.iteration),
            "restart with target accuracy",
        );
        budget -= trace.rows.len();
        start = first.times;
    }
    let phase = run_phase(
        &problem, start, config.eps, budget, config, &mut trace, &clock, calls0,
    )?;
    if !phase.done {
        log::info!("ustm stopped at the iteration limit");
    }
    Ok(AssignmentResult {
        flows: phase.flows,
        times: phase.times,
        trace,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{BprParams, Link};

    #[test]
    fn beckmann_prox_solves_optimality_condition() {
        let c = LinkCost {
            free_flow_time: 2.0,
            capacity: 30.0,
            rho: 0.15,
            mu: 0.25,
        };
        for &(acc, w, t0) in &[
            (-5.0, 0.1, 2.0),
            (-50.0, 3.0, 2.0),
            (1.0, 1.0, 2.0),
            (-0.5, 100.0, 4.0),
        ] {
            let t = prox_step_beckmann(&c, acc, w, t0);
            // Plain bisection on the optimality condition.
            let g = |t: f64| t - t0 + acc + w * c.conjugate_slope(t);
            let (mut lo, mut hi) = (c.free_flow_time, (t0 - acc).max(c.free_flow_time));
            for _ in 0..300 {
                let mid = 0.5 * (lo + hi);
                if g(mid) > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            assert!((t - lo).abs() <= 1e-12 * t.abs().max(1.0), "{t} vs {lo}");
        }
    }

    #[test]
    fn sd_prox_clamps_at_free_flow() {
        let net = Network::new(
            2,
            vec![
                Link::road(0, 1, 1.0, 5.0),
                Link::road(0, 1, 2.0, f64::INFINITY),
            ],
            vec![0, 1],
            None,
        )
        .unwrap();
        let u = prox_step_sd(&net, &[-20.0, -20.0], 2.0, &[1.0, 2.0]);
        assert_eq!(u, vec![11.0, 2.0]);
        let u = prox_step_sd(&net, &[1.0, 0.0], 2.0, &[1.0, 2.0]);
        assert_eq!(u, vec![1.0, 2.0]);
    }

    #[test]
    fn two_link_beckmann_matches_equal_times() {
        let net = Network::new(
            2,
            vec![Link::road(0, 1, 1.0, 10.0), Link::road(0, 1, 2.0, 20.0)],
            vec![0, 1],
            None,
        )
        .unwrap();
        let od = OdMatrix::from_vec(2, vec![0.0, 40.0, 0.0, 0.0]).unwrap();
        let model = CostModel::Beckmann(BprParams::default());
        let res = ustm_assign(
            &net,
            model,
            &[od],
            &UstmAssignConfig::new(0.1, 20000),
            &PathEngine::default(),
        )
        .unwrap();
        let f = res.total_flows();
        assert!((f[0] + f[1] - 40.0).abs() < 1e-9);
        let last = res.trace.last().unwrap();
        assert!(last.gap.abs() <= 0.1, "gap {}", last.gap);
        assert!((res.times[0] - res.times[1]).abs() < 1e-3);
    }
}
