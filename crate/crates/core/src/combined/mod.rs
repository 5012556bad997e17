//! Combined trip distribution, modal split and assignment: composite
//! mode-choice costs, the nested logit split, the joint primal objective and
//! three solvers (dual USTM with an inexact distribution oracle, Evans'
//! partial linearization and the sequential four-stage loop).

mod evans;
mod four_stage;
mod oracle;

pub use evans::{evans_solve, EvansConfig};
pub use four_stage::{four_stage_solve, FourStageConfig};
pub use oracle::{
    dual_d3prime, iteration_estimate, ustm_combined_solve, CombinedArtifacts, CombinedConfig,
    CombinedProblem, CombinedResult, TIGHT_DELTA,
};

pub use crate::distribution::DemandSpec;

use crate::assignment::primal_objective;
use crate::distribution::log_sum_exp;
use crate::error::{shape, Error, Result};
use crate::network::{CostModel, Network};
use crate::od::OdMatrix;
use crate::paths::{dijkstra, mode_link_times, CostMatrix};

/// Logit and destination-choice parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceParams {
    /// Mode-choice sensitivity per agent type.
    pub alpha: Vec<f64>,
    /// Mode constant per (agent type, mode); `+∞` bars the mode.
    pub beta: Vec<Vec<f64>>,
    /// Destination-choice sensitivity per purpose.
    pub gamma: Vec<f64>,
}

impl ChoiceParams {
    pub fn new(alpha: Vec<f64>, beta: Vec<Vec<f64>>, gamma: Vec<f64>) -> Result<Self> {
        let p = Self { alpha, beta, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn num_agents(&self) -> usize {
        self.alpha.len()
    }

    pub fn num_modes(&self) -> usize {
        self.beta.first().map_or(0, Vec::len)
    }

    pub fn num_purposes(&self) -> usize {
        self.gamma.len()
    }

    fn validate(&self) -> Result<()> {
        if self
            .alpha
            .iter()
            .chain(&self.gamma)
            .any(|x| !(*x > 0.0 && x.is_finite()))
        {
            return Err(Error::Validation(
                "alpha and gamma must be positive and finite".into(),
            ));
        }
        if self.beta.len() != self.alpha.len()
            || self.beta.iter().any(|b| b.len() != self.num_modes())
        {
            return Err(shape("beta must be agent types × modes"));
        }
        for (a, b) in self.beta.iter().enumerate() {
            if b.iter().any(|x| x.is_nan() || *x == f64::NEG_INFINITY) {
                return Err(Error::Validation(format!(
                    "agent type {}: beta must be finite or +inf",
                    a + 1
                )));
            }
            if b.iter().all(|x| x.is_infinite()) {
                return Err(Error::Validation(format!(
                    "agent type {} has no available mode",
                    a + 1
                )));
            }
        }
        Ok(())
    }
}

/// `T^a_ij = −(1/α_a) ln Σ_m exp(−α_a T^m_ij − β_am)`; `+∞` where no mode
/// reaches `j`.
pub fn composite_cost(
    mode_costs: &CostMatrix,
    params: &ChoiceParams,
    agent: usize,
) -> Result<Vec<f64>> {
    check_modes(mode_costs, params)?;
    let alpha = params.alpha[agent];
    let beta = &params.beta[agent];
    let cells = mode_costs.zones() * mode_costs.zones();
    Ok((0..cells)
        .map(|c| {
            let lse = log_sum_exp(
                beta.iter()
                    .enumerate()
                    .map(|(m, b)| -alpha * mode_costs.mode(m)[c] - b),
            );
            -lse / alpha
        })
        .collect())
}

/// Logit shares `p[m][ij]`; all zero where no mode is available.
pub fn modal_split(
    mode_costs: &CostMatrix,
    params: &ChoiceParams,
    agent: usize,
) -> Result<Vec<Vec<f64>>> {
    check_modes(mode_costs, params)?;
    let composite = composite_cost(mode_costs, params, agent)?;
    let alpha = params.alpha[agent];
    let beta = &params.beta[agent];
    Ok((0..params.num_modes())
        .map(|m| {
            mode_costs
                .mode(m)
                .iter()
                .zip(&composite)
                .map(|(t, ta)| {
                    if ta.is_infinite() {
                        0.0
                    } else {
                        (-alpha * (t - ta) - beta[m]).exp()
                    }
                })
                .collect()
        })
        .collect())
}

fn check_modes(mode_costs: &CostMatrix, params: &ChoiceParams) -> Result<()> {
    if mode_costs.num_modes() != params.num_modes() {
        return Err(shape(format!(
            "{} cost matrices for {} modes",
            mode_costs.num_modes(),
            params.num_modes()
        )));
    }
    Ok(())
}

/// Trips per (purpose, agent type, mode, origin, destination).
#[derive(Debug, Clone, PartialEq)]
pub struct TripTensor {
    pub purposes: usize,
    pub agents: usize,
    pub modes: usize,
    pub zones: usize,
    /// Row-major over `(r, a, m, i, j)`.
    pub d: Vec<f64>,
}

impl TripTensor {
    pub fn zeros(purposes: usize, agents: usize, modes: usize, zones: usize) -> Self {
        Self {
            purposes,
            agents,
            modes,
            zones,
            d: vec![0.0; purposes * agents * modes * zones * zones],
        }
    }

    fn offset(&self, r: usize, a: usize, m: usize) -> usize {
        ((r * self.agents + a) * self.modes + m) * self.zones * self.zones
    }

    pub fn slice(&self, r: usize, a: usize, m: usize) -> &[f64] {
        let o = self.offset(r, a, m);
        &self.d[o..o + self.zones * self.zones]
    }

    pub fn slice_mut(&mut self, r: usize, a: usize, m: usize) -> &mut [f64] {
        let o = self.offset(r, a, m);
        let n = self.zones * self.zones;
        &mut self.d[o..o + n]
    }

    /// `d^{ra} = Σ_m d^{ram}`.
    pub fn aggregate(&self, r: usize, a: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.zones * self.zones];
        for m in 0..self.modes {
            for (o, x) in out.iter_mut().zip(self.slice(r, a, m)) {
                *o += x;
            }
        }
        out
    }

    /// Demand of mode `m` summed over purposes and agent types.
    pub fn mode_demand(&self, m: usize) -> OdMatrix {
        let mut out = vec![0.0; self.zones * self.zones];
        for r in 0..self.purposes {
            for a in 0..self.agents {
                for (o, x) in out.iter_mut().zip(self.slice(r, a, m)) {
                    *o += x;
                }
            }
        }
        OdMatrix::from_vec(self.zones, out).expect("tensor entries are nonnegative")
    }

    pub fn total(&self) -> f64 {
        self.d.iter().sum()
    }

    /// `self ← (1 − θ) self + θ other`.
    pub fn blend(&mut self, other: &TripTensor, theta: f64) {
        for (x, y) in self.d.iter_mut().zip(&other.d) {
            *x += theta * (y - *x);
        }
    }

    pub fn blended(&self, other: &TripTensor, theta: f64) -> TripTensor {
        let mut out = self.clone();
        out.blend(other, theta);
        out
    }

    /// Row sums `Σ_{j,m} d^{ram}_ij` for purpose `r` and agent `a`.
    pub fn productions(&self, r: usize, a: usize) -> Vec<f64> {
        let agg = self.aggregate(r, a);
        agg.chunks(self.zones).map(|row| row.iter().sum()).collect()
    }

    /// Column sums `Σ_{i,a,m} d^{ram}_ij` for purpose `r`.
    pub fn attractions(&self, r: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.zones];
        for a in 0..self.agents {
            for (k, x) in self.aggregate(r, a).iter().enumerate() {
                out[k % self.zones] += x;
            }
        }
        out
    }
}

/// `H(d) = Σ (1/γ_r) d^{ra} ln d^{ra} + Σ (1/α_a) d^{ram}(ln(d^{ram}/d^{ra}) + β_am)`,
/// with `0 ln 0 = 0`; `+∞` if a barred mode carries trips.
pub fn entropy_h(d: &TripTensor, params: &ChoiceParams) -> Result<f64> {
    if d.agents != params.num_agents()
        || d.modes != params.num_modes()
        || d.purposes != params.num_purposes()
    {
        return Err(shape("trip tensor does not match choice parameters"));
    }
    if d.d.iter().any(|x| !(*x >= 0.0)) {
        return Err(Error::Domain("trips must be nonnegative".into()));
    }
    let mut h = 0.0;
    for r in 0..d.purposes {
        for a in 0..d.agents {
            let agg = d.aggregate(r, a);
            h += agg
                .iter()
                .filter(|x| **x > 0.0)
                .map(|x| x * x.ln())
                .sum::<f64>()
                / params.gamma[r];
            for m in 0..d.modes {
                let beta = params.beta[a][m];
                for (x, total) in d.slice(r, a, m).iter().zip(&agg) {
                    if *x > 0.0 {
                        h += x * ((x / total).ln() + beta) / params.alpha[a];
                    }
                }
            }
        }
    }
    Ok(h)
}

/// `P3(f, d) = Ψ(f) + H(d)`.
pub fn primal_p3(
    network: &Network,
    model: &CostModel,
    flows: &[Vec<f64>],
    d: &TripTensor,
    params: &ChoiceParams,
) -> Result<f64> {
    Ok(primal_objective(network, model, flows)? + entropy_h(d, params)?)
}

/// `M = √(2H) N` with `H` the largest hop count of a free-flow shortest path
/// tree over all modes and zones, or `|V| − 1` when `observed` is false.
pub fn lipschitz_bound(network: &Network, total_demand: f64, observed: bool) -> Result<f64> {
    let hops = if observed {
        let times = mode_link_times(network, &network.free_flow_times());
        let mut h = 0;
        for t in &times {
            for &z in network.zones() {
                h = h.max(dijkstra(network, t, z)?.hop_depth(network));
            }
        }
        h
    } else {
        network.num_nodes().saturating_sub(1)
    };
    Ok((2.0 * hops as f64).sqrt() * total_demand)
}
