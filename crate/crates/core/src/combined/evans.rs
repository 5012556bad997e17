use crate::assignment::{link_times, total_flows};
use crate::error::{Error, Result};
use crate::line_search::golden_section;
use crate::network::CostModel;
use crate::paths::mode_link_times;
use crate::trace::{SolveTrace, StopRule, Stopwatch, TraceRow};

use super::oracle::{CombinedProblem, CombinedResult, TIGHT_DELTA};

#[derive(Debug, Clone)]
pub struct EvansConfig {
    pub stop: StopRule,
    /// Interval width of the golden-section search.
    pub line_search_tol: f64,
    /// Inner accuracy of each distribution subproblem.
    pub inner_delta: f64,
}

impl EvansConfig {
    pub fn new(max_iter: usize) -> Self {
        Self {
            stop: StopRule::iterations(max_iter),
            line_search_tol: 1e-8,
            inner_delta: TIGHT_DELTA,
        }
    }
}

/// Partial linearization: at `t = τ(f)` solve the distribution and
/// mode-choice subproblem exactly, load its trips all-or-nothing, and move
/// `(f, d)` towards that direction by an exact line search on `P3`.
pub fn evans_solve(problem: &CombinedProblem, config: &EvansConfig) -> Result<CombinedResult> {
    let CostModel::Beckmann(_) = problem.model else {
        return Err(Error::Validation(
            "Evans' method needs flow-dependent link times".into(),
        ));
    };
    let network = problem.network;
    let clock = Stopwatch::start();
    let calls0 = problem.engine.sweeps();
    let mut trace = SolveTrace::new("evans");

    let mut times = network.free_flow_times();
    let mut state = problem.evaluate(&times, config.inner_delta)?;
    let mut flows = state.flows.clone();
    let mut trips = state.trips.clone();
    let mut primal = problem.primal(&flows, &trips)?;
    let mut dual = f64::NEG_INFINITY;
    let mut last_theta = f64::NAN;

    for k in 0..config.stop.max_iter {
        times = link_times(problem.link_costs(), &total_flows(&flows));
        let mode_costs = problem.mode_costs(&times)?;
        let (nested, target_trips) = problem.distribute(&mode_costs, config.inner_delta)?;
        let target_flows = problem
            .engine
            .assign(
                network,
                &mode_link_times(network, &times),
                &problem.mode_demand(&target_trips),
            )?
            .flows;
        state.objective = nested.objective;
        state.certificate = nested.certificate;
        dual = problem.dual_lower_bound(&times, &state);
        let gap = primal - dual;
        trace.push(TraceRow {
            iteration: k,
            elapsed_s: clock.elapsed(),
            primal,
            dual,
            gap,
            violation: 0.0,
            lipschitz: last_theta,
            weight: f64::NAN,
            oracle_calls: problem.engine.sweeps() - calls0,
            inner_iterations: nested.iterations.iter().sum(),
            certificate: nested.certificate,
        });
        if !primal.is_finite() || !dual.is_finite() {
            return Err(Error::NonFinite(format!(
                "Evans objective at iteration {k}"
            )));
        }
        if gap <= config.stop.gap_tol * primal.abs() || config.stop.out_of_time(&clock) {
            break;
        }
        if k + 1 == config.stop.max_iter {
            break;
        }

        let value = |theta: f64| -> f64 {
            let f: Vec<Vec<f64>> = flows
                .iter()
                .zip(&target_flows)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + theta * (y - x)).collect())
                .collect();
            problem
                .primal(&f, &trips.blended(&target_trips, theta))
                .unwrap_or(f64::INFINITY)
        };
        let (mut theta, best) = golden_section(value, 0.0, 1.0, config.line_search_tol);
        if !(best <= primal) {
            theta = 2.0 / (k as f64 + 2.0);
            trace.event(
                k,
                format!("line search found no decrease; using step {theta}"),
            );
        }
        last_theta = theta;
        for (a, b) in flows.iter_mut().zip(&target_flows) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += theta * (y - *x);
            }
        }
        trips.blend(&target_trips, theta);
        primal = problem.primal(&flows, &trips)?;
    }
    Ok(CombinedResult {
        times,
        flows,
        trips,
        primal,
        dual,
        trace,
    })
}
