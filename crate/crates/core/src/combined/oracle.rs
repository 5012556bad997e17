use std::sync::Mutex;

use crate::assignment::{
    capacity_violation, dual_penalty, model_defaults, model_prox, total_flows, CompositeObjective,
    OracleEval, Ustm, UstmConfig,
};
use crate::distribution::{
    nested_distribution_solve, DemandSpec, DistributionMethod, DualPotentials, NestedSolution,
};
use crate::error::{shape, Error, Result};
use crate::network::{CostModel, LinkCost, Network};
use crate::od::OdMatrix;
use crate::paths::{mode_link_times, CostMatrix, PathEngine};
use crate::trace::{SolveTrace, StopRule, Stopwatch, TraceRow};

use super::{composite_cost, lipschitz_bound, modal_split, primal_p3, ChoiceParams, TripTensor};

/// Inner accuracy requested when evaluating the dual at a single point.
pub const TIGHT_DELTA: f64 = 1e-10;

/// Everything the combined model needs besides the solver settings.
pub struct CombinedProblem<'a> {
    pub network: &'a Network,
    pub model: CostModel,
    pub params: &'a ChoiceParams,
    pub demand: &'a DemandSpec,
    pub engine: &'a PathEngine,
    pub method: DistributionMethod,
    pub inner_max_iter: usize,
    costs: Vec<LinkCost>,
    warm: Mutex<Option<Vec<Option<DualPotentials>>>>,
}

/// Side products of one oracle call.
#[derive(Debug, Clone)]
pub struct CombinedArtifacts {
    /// `d'(t)`: the distribution split over modes by the logit shares.
    pub trips: TripTensor,
    /// All-or-nothing per-mode link flows of `d'(t)`.
    pub flows: Vec<Vec<f64>>,
    /// `E(d̃(t), T(t))` in trip units.
    pub objective: f64,
    /// Upper bound on `E(d̃) − min E`.
    pub certificate: f64,
    pub mode_costs: CostMatrix,
    pub inner_iterations: usize,
}

impl<'a> CombinedProblem<'a> {
    pub fn new(
        network: &'a Network,
        model: CostModel,
        params: &'a ChoiceParams,
        demand: &'a DemandSpec,
        engine: &'a PathEngine,
    ) -> Result<Self> {
        if params.num_modes() != network.num_modes() {
            return Err(shape(format!(
                "network has {} modes but choice parameters {}",
                network.num_modes(),
                params.num_modes()
            )));
        }
        if params.num_agents() != demand.num_agents()
            || params.num_purposes() != demand.num_purposes()
        {
            return Err(shape(
                "choice parameters and demand disagree on agent types or purposes",
            ));
        }
        if demand.zones != network.num_zones() {
            return Err(shape("demand size does not match zone count"));
        }
        Ok(Self {
            network,
            model,
            params,
            demand,
            engine,
            method: DistributionMethod::Sinkhorn,
            inner_max_iter: 10_000,
            costs: network.link_costs(&model_defaults(&model)),
            warm: Mutex::new(None),
        })
    }

    pub fn with_method(mut self, method: DistributionMethod, inner_max_iter: usize) -> Self {
        self.method = method;
        self.inner_max_iter = inner_max_iter;
        self
    }

    pub fn link_costs(&self) -> &[LinkCost] {
        &self.costs
    }

    /// Per-mode zone costs at link times `t`.
    pub fn mode_costs(&self, t: &[f64]) -> Result<CostMatrix> {
        if t.len() != self.network.num_links() {
            return Err(shape("one time per link required"));
        }
        self.engine
            .costs(self.network, &mode_link_times(self.network, t))
    }

    /// Solves the distribution and mode-choice subproblem for fixed mode
    /// costs to accuracy `delta` and splits the result over modes.
    pub fn distribute(
        &self,
        mode_costs: &CostMatrix,
        delta: f64,
    ) -> Result<(NestedSolution, TripTensor)> {
        let z = self.demand.zones;
        let composite: Vec<Vec<f64>> = (0..self.params.num_agents())
            .map(|a| composite_cost(mode_costs, self.params, a))
            .collect::<Result<_>>()?;
        let floor = 1e-12 * self.demand.total().max(1.0);
        let warm = self.warm.lock().expect("warm-start cache poisoned").clone();
        let nested = nested_distribution_solve(
            &composite,
            &self.params.gamma,
            self.demand,
            delta.max(floor),
            self.method,
            self.inner_max_iter,
            warm.as_deref(),
        )?;
        *self.warm.lock().expect("warm-start cache poisoned") = Some(nested.potentials.clone());

        let modes = self.params.num_modes();
        let mut tensor = TripTensor::zeros(
            self.demand.num_purposes(),
            self.params.num_agents(),
            modes,
            z,
        );
        for a in 0..self.params.num_agents() {
            let shares = modal_split(mode_costs, self.params, a)?;
            for r in 0..self.demand.num_purposes() {
                let agg = &nested.trips[r][a];
                for (c, x) in agg.iter().enumerate() {
                    if *x > 0.0 && composite[a][c].is_infinite() {
                        return Err(Error::InfeasibleOd {
                            origin: c / z + 1,
                            destination: c % z + 1,
                        });
                    }
                }
                for (m, share) in shares.iter().enumerate() {
                    let out = tensor.slice_mut(r, a, m);
                    for ((o, x), p) in out.iter_mut().zip(agg).zip(share) {
                        *o = x * p;
                    }
                }
            }
        }
        Ok((nested, tensor))
    }

    /// Per-mode demand matrices of a trip tensor.
    pub fn mode_demand(&self, trips: &TripTensor) -> Vec<OdMatrix> {
        (0..trips.modes).map(|m| trips.mode_demand(m)).collect()
    }

    /// Full oracle at `t`: costs, distribution, modal split and loading.
    pub fn evaluate(&self, t: &[f64], delta: f64) -> Result<CombinedArtifacts> {
        let mode_costs = self.mode_costs(t)?;
        let (nested, trips) = self.distribute(&mode_costs, delta)?;
        let loading = self.engine.assign(
            self.network,
            &mode_link_times(self.network, t),
            &self.mode_demand(&trips),
        )?;
        Ok(CombinedArtifacts {
            trips,
            flows: loading.flows,
            objective: nested.objective,
            certificate: nested.certificate,
            mode_costs,
            inner_iterations: nested.iterations.iter().sum(),
        })
    }

    /// `h(t)` of the model, `+∞` outside its domain.
    pub fn penalty(&self, t: &[f64]) -> f64 {
        dual_penalty(self.network, &self.model, t).unwrap_or(f64::INFINITY)
    }

    /// Certified lower bound on `D3'(t)` from an oracle evaluation at `t`.
    pub fn dual_lower_bound(&self, t: &[f64], eval: &CombinedArtifacts) -> f64 {
        eval.objective - eval.certificate - self.penalty(t)
    }

    pub fn primal(&self, flows: &[Vec<f64>], trips: &TripTensor) -> Result<f64> {
        primal_p3(self.network, &self.model, flows, trips, self.params)
    }
}

impl CompositeObjective for CombinedProblem<'_> {
    type Artifacts = CombinedArtifacts;

    fn dim(&self) -> usize {
        self.network.num_links()
    }

    fn oracle(&self, t: &[f64], delta: f64) -> Result<OracleEval<CombinedArtifacts>> {
        let eval = self.evaluate(t, delta)?;
        let grad = total_flows(&eval.flows).into_iter().map(|f| -f).collect();
        Ok(OracleEval {
            value: -eval.objective,
            grad,
            artifacts: eval,
        })
    }

    fn h(&self, t: &[f64]) -> f64 {
        self.penalty(t)
    }

    fn prox(&self, acc: &[f64], weight: f64, t0: &[f64]) -> Vec<f64> {
        model_prox(self.network, &self.model, &self.costs, acc, weight, t0)
    }
}

/// `D3'(t) = min_d E(d, T(t)) − h(t)`, evaluated with a tight inner solve and
/// reduced by the inner certificate so the result never exceeds the true
/// value.
pub fn dual_d3prime(problem: &CombinedProblem, t: &[f64]) -> Result<f64> {
    dual_penalty(problem.network, &problem.model, t)?;
    let eval = problem.evaluate(t, TIGHT_DELTA)?;
    Ok(problem.dual_lower_bound(t, &eval))
}

/// Predicted outer iteration count `4 (M R / ε)²`.
pub fn iteration_estimate(lipschitz: f64, radius: f64, eps: f64) -> f64 {
    4.0 * (lipschitz * radius / eps).powi(2)
}

#[derive(Debug, Clone)]
pub struct CombinedConfig {
    /// Target accuracy `ε` in objective units; also the absolute gap threshold.
    pub eps: f64,
    pub stop: StopRule,
    pub l0: Option<f64>,
    /// Capacity violation threshold for stable dynamics; `eps` if `None`.
    pub violation_tol: Option<f64>,
}

impl CombinedConfig {
    pub fn new(eps: f64, max_iter: usize) -> Self {
        Self {
            eps,
            stop: StopRule::iterations(max_iter),
            l0: None,
            violation_tol: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CombinedResult {
    pub times: Vec<f64>,
    /// Per-mode link flows.
    pub flows: Vec<Vec<f64>>,
    pub trips: TripTensor,
    pub primal: f64,
    /// Certified lower bound on the dual at `times`.
    pub dual: f64,
    pub trace: SolveTrace,
}

impl CombinedResult {
    pub fn gap(&self) -> f64 {
        self.primal - self.dual
    }

    pub fn relative_gap(&self) -> f64 {
        self.gap() / self.primal.abs().max(f64::MIN_POSITIVE)
    }
}

fn radius_estimate(problem: &CombinedProblem, times: &[f64]) -> f64 {
    match problem.model {
        CostModel::StableDynamics => problem
            .network
            .links()
            .iter()
            .zip(times)
            .map(|(l, t)| (t - l.free_flow_time).powi(2))
            .sum::<f64>()
            .sqrt(),
        CostModel::Beckmann(_) => {
            let n = problem.demand.total();
            problem
                .link_costs()
                .iter()
                .filter(|c| !c.is_fixed())
                .map(|c| {
                    let p = 1.0 / c.mu;
                    c.rho * c.free_flow_time * (n / c.capacity).powf(p)
                })
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
        }
    }
}

/// Dual USTM on `D3'` with the inexact distribution oracle; the trip tensor
/// and link flows are the `α`-weighted averages of the oracle outputs at the
/// extrapolation points.
pub fn ustm_combined_solve(
    problem: &CombinedProblem,
    config: &CombinedConfig,
) -> Result<CombinedResult> {
    let network = problem.network;
    let clock = Stopwatch::start();
    let calls0 = problem.engine.sweeps();
    let mut trace = SolveTrace::new(format!("ustm-combined-{}", problem.model.name()));
    trace.note("eps", config.eps);
    let m_bound = lipschitz_bound(network, problem.demand.total(), true)?;
    trace.note("lipschitz_bound", m_bound);

    let t0 = network.free_flow_times();
    let mut method = Ustm::new(
        problem,
        t0.clone(),
        UstmConfig {
            eps: config.eps,
            l0: config.l0,
        },
    )?;
    let mut avg_trips: Option<TripTensor> = None;
    let mut avg_flows = vec![vec![0.0; network.num_links()]; network.num_modes()];
    let mut weight = 0.0;
    let mut result = None;
    for k in 0..config.stop.max_iter {
        let step = match method.step() {
            Ok(s) => s,
            Err(Error::LipschitzOverflow(l)) if k > 0 => {
                trace.event(
                    k,
                    format!("Lipschitz estimate overflowed ({l:e}); stopping"),
                );
                break;
            }
            Err(e) => return Err(e),
        };
        let theta = step.alpha / step.weight;
        let art = &step.at_y.artifacts;
        match &mut avg_trips {
            Some(d) => d.blend(&art.trips, theta),
            None => avg_trips = Some(art.trips.clone()),
        }
        for (a, f) in avg_flows.iter_mut().zip(&art.flows) {
            for (x, y) in a.iter_mut().zip(f) {
                *x += theta * (y - *x);
            }
        }
        weight = step.weight;
        let trips = avg_trips.as_ref().expect("set above");
        let times = method.state().t.clone();
        let primal = problem.primal(&avg_flows, trips)?;
        let dual = problem.dual_lower_bound(&times, &step.at_t.artifacts);
        let gap = primal - dual;
        let violation = capacity_violation(network, &total_flows(&avg_flows));
        trace.push(TraceRow {
            iteration: k,
            elapsed_s: clock.elapsed(),
            primal,
            dual,
            gap,
            violation,
            lipschitz: step.lipschitz,
            weight: step.weight,
            oracle_calls: problem.engine.sweeps() - calls0,
            inner_iterations: art.inner_iterations,
            certificate: step.delta,
        });
        result = Some((times, primal, dual));
        let violation_ok = match problem.model {
            CostModel::StableDynamics => violation <= config.violation_tol.unwrap_or(config.eps),
            CostModel::Beckmann(_) => true,
        };
        let gap_ok = gap.abs() <= config.eps || gap.abs() <= config.stop.gap_tol * primal.abs();
        if (gap_ok && violation_ok) || config.stop.out_of_time(&clock) {
            break;
        }
    }
    let Some((times, primal, dual)) = result else {
        return Err(Error::Validation("no outer iteration was performed".into()));
    };
    let radius = radius_estimate(problem, &times);
    trace.note("radius_estimate", radius);
    trace.note(
        "predicted_iterations",
        iteration_estimate(m_bound, radius, config.eps),
    );
    trace.note("realized_iterations", trace.rows.len());
    trace.note("final_weight", weight);
    Ok(CombinedResult {
        times,
        flows: avg_flows,
        trips: avg_trips.expect("at least one step"),
        primal,
        dual,
        trace,
    })
}
