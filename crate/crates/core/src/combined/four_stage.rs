use crate::assignment::{frank_wolfe_with, link_times, total_flows, FrankWolfeConfig, StepRule};
use crate::error::{Error, Result};
use crate::network::CostModel;
use crate::paths::CostMatrix;
use crate::trace::{SolveTrace, StopRule, Stopwatch, TraceRow};

use super::oracle::{CombinedProblem, CombinedResult, TIGHT_DELTA};

#[derive(Debug, Clone)]
pub struct FourStageConfig {
    pub outer: StopRule,
    /// Frank–Wolfe iterations per assignment stage.
    pub inner_assignment_iters: usize,
    pub inner_rule: StepRule,
    /// Weight of the new cost matrices in the exponential average.
    pub averaging: f64,
    pub inner_delta: f64,
}

impl FourStageConfig {
    pub fn new(max_outer: usize) -> Self {
        Self {
            outer: StopRule::iterations(max_outer),
            inner_assignment_iters: 20,
            inner_rule: StepRule::brent(),
            averaging: 0.5,
            inner_delta: TIGHT_DELTA,
        }
    }
}

/// Sequential distribution, modal split and assignment with exponential
/// averaging of the mode cost matrices between rounds. No convergence
/// guarantee; the trace records the gap `P3 − D3'` at each round.
pub fn four_stage_solve(
    problem: &CombinedProblem,
    config: &FourStageConfig,
) -> Result<CombinedResult> {
    let CostModel::Beckmann(params) = problem.model else {
        return Err(Error::Validation(
            "the four-stage procedure needs flow-dependent link times".into(),
        ));
    };
    if !(config.averaging > 0.0 && config.averaging <= 1.0) {
        return Err(Error::Validation(format!(
            "averaging factor must lie in (0, 1], got {}",
            config.averaging
        )));
    }
    let network = problem.network;
    let clock = Stopwatch::start();
    let calls0 = problem.engine.sweeps();
    let mut trace = SolveTrace::new("four-stage");
    trace.note("averaging", config.averaging);
    trace.note("inner_assignment_iters", config.inner_assignment_iters);

    let mut times = network.free_flow_times();
    let mut averaged = problem.mode_costs(&times)?;
    let mut out = None;
    for k in 0..config.outer.max_iter {
        let (_, trips) = problem.distribute(&averaged, config.inner_delta)?;
        let fw = FrankWolfeConfig {
            rule: config.inner_rule,
            stop: StopRule::iterations(config.inner_assignment_iters.max(1)),
            initial_times: Some(times.clone()),
        };
        let assigned = frank_wolfe_with(
            network,
            &params,
            &problem.mode_demand(&trips),
            &fw,
            problem.engine,
        )?;
        let flows = assigned.flows;
        times = link_times(problem.link_costs(), &total_flows(&flows));

        let fresh = problem.mode_costs(&times)?;
        let primal = problem.primal(&flows, &trips)?;
        let (nested, _) = problem.distribute(&fresh, config.inner_delta)?;
        let dual = nested.objective - nested.certificate - problem.penalty(&times);
        trace.push(TraceRow {
            iteration: k,
            elapsed_s: clock.elapsed(),
            primal,
            dual,
            gap: primal - dual,
            violation: 0.0,
            lipschitz: f64::NAN,
            weight: f64::NAN,
            oracle_calls: problem.engine.sweeps() - calls0,
            inner_iterations: assigned.trace.rows.len(),
            certificate: nested.certificate,
        });

        let w = config.averaging;
        let blended: Vec<Vec<f64>> = averaged
            .modes()
            .iter()
            .zip(fresh.modes())
            .map(|(old, new)| {
                old.iter()
                    .zip(new)
                    .map(|(a, b)| if a.is_finite() { a + w * (b - a) } else { *b })
                    .collect()
            })
            .collect();
        averaged = CostMatrix::new(averaged.zones(), blended)?;
        out = Some(CombinedResult {
            times: times.clone(),
            flows,
            trips,
            primal,
            dual,
            trace: SolveTrace::default(),
        });
        if primal - dual <= config.outer.gap_tol * primal.abs() || config.outer.out_of_time(&clock)
        {
            break;
        }
    }
    let mut res =
        out.ok_or_else(|| Error::Validation("no outer iteration was performed".into()))?;
    res.trace = trace;
    Ok(res)
}
