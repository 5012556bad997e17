//! Pure traffic assignment with fixed demand: primal potentials, dual
//! objectives and gaps, Frank–Wolfe variants and the dual USTM solver.

mod dual;
mod frank_wolfe;
mod ustm;

pub(crate) use dual::model_prox;
pub use dual::{prox_step_beckmann, prox_step_sd, ustm_assign, AssignmentDual, UstmAssignConfig};
pub use frank_wolfe::{frank_wolfe_solve, frank_wolfe_with, FrankWolfeConfig, StepRule};
pub use ustm::{
    ustm_solve, CompositeObjective, DualIterate, OracleEval, Ustm, UstmConfig, UstmStep,
};

use crate::error::{domain, shape, Result};
use crate::network::{BprParams, CostModel, LinkCost, Network};
use crate::od::OdMatrix;
use crate::paths::CostMatrix;
use crate::trace::SolveTrace;

#[derive(Debug, Clone)]
pub struct AssignmentResult {
    /// Per-mode link flows.
    pub flows: Vec<Vec<f64>>,
    pub times: Vec<f64>,
    pub trace: SolveTrace,
    pub model: CostModel,
}

impl AssignmentResult {
    pub fn total_flows(&self) -> Vec<f64> {
        total_flows(&self.flows)
    }
}

pub(crate) fn total_flows(per_mode: &[Vec<f64>]) -> Vec<f64> {
    let mut total = vec![0.0; per_mode.first().map_or(0, Vec::len)];
    for f in per_mode {
        for (t, x) in total.iter_mut().zip(f) {
            *t += x;
        }
    }
    total
}

fn defaults(model: &CostModel) -> BprParams {
    match model {
        CostModel::Beckmann(p) => *p,
        CostModel::StableDynamics => BprParams::default(),
    }
}

fn check_flows(network: &Network, flows: &[Vec<f64>]) -> Result<()> {
    if flows.len() != network.num_modes() || flows.iter().any(|f| f.len() != network.num_links()) {
        return Err(shape(format!(
            "flows must be {} modes × {} links",
            network.num_modes(),
            network.num_links()
        )));
    }
    if flows.iter().flatten().any(|f| f.is_nan() || *f < 0.0) {
        return Err(domain("flows must be nonnegative"));
    }
    Ok(())
}

/// `Σ_m Σ_e c^m_e f^m_e`.
pub fn mode_cost_term(network: &Network, flows: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    for (m, f) in flows.iter().enumerate() {
        for (link, x) in network.links().iter().zip(f) {
            if let Some(c) = link.mode_cost(m) {
                sum += c * x;
            }
        }
    }
    sum
}

/// `Ψ(f) = Σ_e σ_e(f_e) + Σ_{e,m} c^m_e f^m_e` for per-mode flows.
pub fn beckmann_potential(
    network: &Network,
    params: &BprParams,
    flows: &[Vec<f64>],
) -> Result<f64> {
    check_flows(network, flows)?;
    let total = total_flows(flows);
    let sigma: f64 = network
        .link_costs(params)
        .iter()
        .zip(&total)
        .map(|(c, f)| c.integral(*f))
        .sum();
    Ok(sigma + mode_cost_term(network, flows))
}

/// Primal objective of either model: the Beckmann potential, or
/// `Σ t̄_e f_e + Σ c^m_e f^m_e` under stable dynamics.
pub fn primal_objective(network: &Network, model: &CostModel, flows: &[Vec<f64>]) -> Result<f64> {
    match model {
        CostModel::Beckmann(p) => beckmann_potential(network, p, flows),
        CostModel::StableDynamics => {
            check_flows(network, flows)?;
            let total = total_flows(flows);
            let base: f64 = network
                .links()
                .iter()
                .zip(&total)
                .map(|(l, f)| l.free_flow_time * f)
                .sum();
            Ok(base + mode_cost_term(network, flows))
        }
    }
}

const TIME_SLACK: f64 = 1e-12;

/// Composite term `h(t)` of the dual: `Σ σ*_e(t_e)` (Beckmann) or
/// `⟨t − t̄, f̄⟩` (stable dynamics). Uncapacitated links contribute `+∞`
/// anywhere above `t̄`.
pub fn dual_penalty(network: &Network, model: &CostModel, times: &[f64]) -> Result<f64> {
    if times.len() != network.num_links() {
        return Err(shape("one time per link required"));
    }
    let mut h = 0.0;
    for (e, (link, &t)) in network.links().iter().zip(times).enumerate() {
        // Averaging iterates pinned at t̄ may drift by a few ulps.
        let t = if (t - link.free_flow_time).abs() <= TIME_SLACK * link.free_flow_time.max(1.0) {
            link.free_flow_time
        } else {
            t
        };
        if t.is_nan() || t < link.free_flow_time {
            return Err(domain(format!(
                "time {t} on link {} is below free-flow time",
                e + 1
            )));
        }
        h += match model {
            CostModel::Beckmann(p) => LinkCost::resolve(link, p).conjugate(t),
            CostModel::StableDynamics => {
                let excess = t - link.free_flow_time;
                if excess == 0.0 {
                    0.0
                } else {
                    excess * link.capacity
                }
            }
        };
    }
    Ok(h)
}

/// `Σ_m Σ_ij d^m_ij T^m_ij`.
pub fn demand_cost(demand: &[OdMatrix], costs: &CostMatrix) -> f64 {
    let mut sum = 0.0;
    for (m, od) in demand.iter().enumerate() {
        for (d, t) in od.as_slice().iter().zip(costs.mode(m)) {
            if *d > 0.0 {
                sum += d * t;
            }
        }
    }
    sum
}

/// Dual objective `Q(t) = Σ d_ij T_ij(t) − h(t)`, with `costs` the
/// shortest-path costs at `t`.
pub fn dual_objective(
    network: &Network,
    model: &CostModel,
    times: &[f64],
    demand: &[OdMatrix],
    costs: &CostMatrix,
) -> Result<f64> {
    Ok(demand_cost(demand, costs) - dual_penalty(network, model, times)?)
}

/// Dual of the Beckmann problem.
pub fn beckmann_dual(
    network: &Network,
    params: &BprParams,
    times: &[f64],
    demand: &[OdMatrix],
    costs: &CostMatrix,
) -> Result<f64> {
    dual_objective(network, &CostModel::Beckmann(*params), times, demand, costs)
}

/// `‖(f − f̄)₊‖₂` over capacitated links.
pub fn capacity_violation(network: &Network, total_flows: &[f64]) -> f64 {
    network
        .links()
        .iter()
        .zip(total_flows)
        .filter(|(l, _)| !l.is_uncapacitated())
        .map(|(l, f)| (f - l.capacity).max(0.0).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapReport {
    pub primal: f64,
    pub dual: f64,
    /// `primal − dual`; may be negative under stable dynamics.
    pub gap: f64,
    pub violation: f64,
}

/// `Δ(f, t) = Ψ(f) − Q(t)` together with the capacity violation of `f`.
pub fn duality_gap(
    network: &Network,
    model: &CostModel,
    flows: &[Vec<f64>],
    times: &[f64],
    demand: &[OdMatrix],
    costs: &CostMatrix,
) -> Result<GapReport> {
    if costs.num_modes() != demand.len() {
        return Err(shape("cost matrix and demand disagree on mode count"));
    }
    let primal = primal_objective(network, model, flows)?;
    let dual = dual_objective(network, model, times, demand, costs)?;
    Ok(GapReport {
        primal,
        dual,
        gap: primal - dual,
        violation: capacity_violation(network, &total_flows(flows)),
    })
}

/// Link times `τ(f)` for total flows.
pub fn link_times(costs: &[LinkCost], total_flows: &[f64]) -> Vec<f64> {
    costs
        .iter()
        .zip(total_flows)
        .map(|(c, f)| c.time(*f))
        .collect()
}

pub(crate) fn model_defaults(model: &CostModel) -> BprParams {
    defaults(model)
}
