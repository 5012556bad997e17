use crate::error::{Error, Result};
use crate::line_search::brent_minimize;
use crate::network::{BprParams, CostModel, LinkCost, Network};
use crate::od::OdMatrix;
use crate::paths::{mode_link_times, Loading, PathEngine};
use crate::trace::{SolveTrace, StopRule, Stopwatch, TraceRow};

use super::{demand_cost, link_times, mode_cost_term, total_flows, AssignmentResult};

/// Step-size rule for the Frank–Wolfe update `f ← (1−γ) f + γ s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// `γ_k = 2/(k+2)`, `k = 0, 1, …`.
    Fixed2OverKPlus2,
    /// `γ_k = 1/k`, `k = 1, 2, …` (running average of all-or-nothing loads).
    Harmonic1OverK,
    /// Exact minimization along the segment by Brent's method.
    BrentExact { tolerance: f64 },
    /// Halve from `γ = 1` until the sufficient-decrease test passes.
    ArmijoBacktracking { shrink: f64, slope: f64 },
    /// Backtracking on a local quadratic model with an adaptive Lipschitz
    /// estimate. `initial_lipschitz = None` estimates it from a probe step.
    AdaptiveFWBacktracking {
        initial_lipschitz: Option<f64>,
        increase: f64,
        decrease: f64,
    },
}

impl StepRule {
    pub fn brent() -> Self {
        StepRule::BrentExact { tolerance: 1e-8 }
    }

    pub fn armijo() -> Self {
        StepRule::ArmijoBacktracking {
            shrink: 0.5,
            slope: 1e-4,
        }
    }

    pub fn adaptive() -> Self {
        StepRule::AdaptiveFWBacktracking {
            initial_lipschitz: None,
            increase: 2.0,
            decrease: 0.5,
        }
    }

    pub fn all() -> [StepRule; 5] {
        [
            StepRule::Fixed2OverKPlus2,
            StepRule::Harmonic1OverK,
            Self::brent(),
            Self::armijo(),
            Self::adaptive(),
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            StepRule::Fixed2OverKPlus2 => "fw-2/(k+2)",
            StepRule::Harmonic1OverK => "fw-1/k",
            StepRule::BrentExact { .. } => "fw-brent",
            StepRule::ArmijoBacktracking { .. } => "fw-armijo",
            StepRule::AdaptiveFWBacktracking { .. } => "fw-adaptive",
        }
    }

    fn validate(&self) -> Result<()> {
        let in_unit = |x: f64| x > 0.0 && x < 1.0;
        let ok = match *self {
            StepRule::Fixed2OverKPlus2 | StepRule::Harmonic1OverK => true,
            StepRule::BrentExact { tolerance } => tolerance > 0.0,
            StepRule::ArmijoBacktracking { shrink, slope } => in_unit(shrink) && in_unit(slope),
            StepRule::AdaptiveFWBacktracking {
                initial_lipschitz,
                increase,
                decrease,
            } => increase > 1.0 && in_unit(decrease) && initial_lipschitz.is_none_or(|l| l > 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "invalid step rule parameters: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone)]
pub struct FrankWolfeConfig {
    pub rule: StepRule,
    pub stop: StopRule,
    /// Link times for the initial all-or-nothing load; free-flow if `None`.
    pub initial_times: Option<Vec<f64>>,
}

/// Frank–Wolfe on the Beckmann potential from an all-or-nothing start at
/// free-flow times.
pub fn frank_wolfe_solve(
    network: &Network,
    params: &BprParams,
    demand: &[OdMatrix],
    rule: StepRule,
    stop: StopRule,
    engine: &PathEngine,
) -> Result<AssignmentResult> {
    frank_wolfe_with(
        network,
        params,
        demand,
        &FrankWolfeConfig {
            rule,
            stop,
            initial_times: None,
        },
        engine,
    )
}

/// Objective restricted to the segment `f + γ (s − f)`.
struct Segment<'a> {
    network: &'a Network,
    costs: &'a [LinkCost],
    base: Vec<f64>,
    dir: Vec<f64>,
    linear_base: f64,
    linear_dir: f64,
}

impl Segment<'_> {
    fn value(&self, gamma: f64) -> f64 {
        let sigma: f64 = self
            .costs
            .iter()
            .zip(self.base.iter().zip(&self.dir))
            .map(|(c, (b, d))| c.integral((b + gamma * d).max(0.0)))
            .sum();
        sigma + self.linear_base + gamma * self.linear_dir
    }

    fn gradient_norm_change(&self, gamma: f64) -> f64 {
        // ‖∇Ψ(f + γd) − ∇Ψ(f)‖ counted once per mode.
        let modes = self.network.num_modes() as f64;
        let sq: f64 = self
            .costs
            .iter()
            .zip(self.base.iter().zip(&self.dir))
            .map(|(c, (b, d))| (c.time((b + gamma * d).max(0.0)) - c.time(*b)).powi(2))
            .sum();
        (modes * sq).sqrt()
    }
}

pub fn frank_wolfe_with(
    network: &Network,
    params: &BprParams,
    demand: &[OdMatrix],
    config: &FrankWolfeConfig,
    engine: &PathEngine,
) -> Result<AssignmentResult> {
    config.rule.validate()?;
    let clock = Stopwatch::start();
    let costs = network.link_costs(params);
    let mut trace = SolveTrace::new(config.rule.name());
    let start_times = config
        .initial_times
        .clone()
        .unwrap_or_else(|| network.free_flow_times());
    let calls0 = engine.sweeps();
    let mut flows = engine
        .assign(network, &mode_link_times(network, &start_times), demand)?
        .flows;
    let mut lipschitz = match config.rule {
        StepRule::AdaptiveFWBacktracking {
            initial_lipschitz, ..
        } => initial_lipschitz,
        _ => None,
    };
    let mut times = start_times;
    let mut last_gamma = f64::NAN;

    for k in 0..config.stop.max_iter {
        let total = total_flows(&flows);
        times = link_times(&costs, &total);
        let Loading {
            flows: target,
            costs: od_costs,
        } = engine.assign(network, &mode_link_times(network, &times), demand)?;
        let linear = mode_cost_term(network, &flows);
        let primal = costs
            .iter()
            .zip(&total)
            .map(|(c, f)| c.integral(*f))
            .sum::<f64>()
            + linear;
        let conj: f64 = costs.iter().zip(&times).map(|(c, t)| c.conjugate(*t)).sum();
        let dual = demand_cost(demand, &od_costs) - conj;
        let gap = primal - dual;
        trace.push(TraceRow {
            iteration: k,
            elapsed_s: clock.elapsed(),
            primal,
            dual,
            gap,
            violation: 0.0,
            lipschitz: last_gamma,
            weight: f64::NAN,
            oracle_calls: engine.sweeps() - calls0,
            ..Default::default()
        });
        if !primal.is_finite() || !dual.is_finite() {
            return Err(Error::NonFinite(format!(
                "Frank–Wolfe objective at iteration {k}"
            )));
        }
        if gap <= config.stop.gap_tol * primal.abs() || config.stop.out_of_time(&clock) {
            break;
        }
        if k + 1 == config.stop.max_iter {
            break;
        }

        let target_total = total_flows(&target);
        let segment = Segment {
            network,
            costs: &costs,
            dir: target_total
                .iter()
                .zip(&total)
                .map(|(s, f)| s - f)
                .collect(),
            base: total,
            linear_base: linear,
            linear_dir: mode_cost_term(network, &target) - linear,
        };
        // Directional derivative of Ψ at γ = 0 equals minus the gap.
        let slope = -gap;
        let fallback = 2.0 / (k as f64 + 2.0);
        let gamma = match config.rule {
            StepRule::Fixed2OverKPlus2 => fallback,
            StepRule::Harmonic1OverK => 1.0 / (k as f64 + 1.0),
            StepRule::BrentExact { tolerance } => {
                let (g, val) = brent_minimize(|g| segment.value(g), 0.0, 1.0, tolerance);
                if val > primal {
                    trace.event(
                        k,
                        format!("Brent search found no decrease; using step {fallback}"),
                    );
                    fallback
                } else {
                    g
                }
            }
            StepRule::ArmijoBacktracking { shrink, slope: c } => {
                let mut g = 1.0;
                while segment.value(g) > primal + c * g * slope && g > 1e-12 {
                    g *= shrink;
                }
                if g <= 1e-12 {
                    trace.event(k, format!("Armijo search failed; using step {fallback}"));
                    fallback
                } else {
                    g
                }
            }
            StepRule::AdaptiveFWBacktracking {
                increase, decrease, ..
            } => {
                let dir_sq: f64 = target
                    .iter()
                    .zip(&flows)
                    .flat_map(|(s, f)| s.iter().zip(f).map(|(a, b)| (a - b).powi(2)))
                    .sum();
                if dir_sq == 0.0 {
                    0.0
                } else {
                    let mut l = match lipschitz {
                        Some(l) => l * decrease,
                        None => {
                            let probe = 1e-3;
                            (segment.gradient_norm_change(probe) / (probe * dir_sq.sqrt()))
                                .max(1e-12)
                        }
                    };
                    let mut g;
                    let mut tries = 0;
                    loop {
                        g = (gap / (l * dir_sq)).min(1.0);
                        if segment.value(g) <= primal - g * gap + 0.5 * g * g * l * dir_sq
                            || tries > 100
                        {
                            break;
                        }
                        l *= increase;
                        tries += 1;
                    }
                    lipschitz = Some(l);
                    if tries > 100 {
                        trace.event(
                            k,
                            format!("adaptive backtracking failed; using step {fallback}"),
                        );
                        fallback
                    } else {
                        g
                    }
                }
            }
        };
        last_gamma = gamma;
        for (f, s) in flows.iter_mut().zip(&target) {
            for (a, b) in f.iter_mut().zip(s) {
                *a += gamma * (b - *a);
            }
        }
    }

    Ok(AssignmentResult {
        flows,
        times,
        trace,
        model: CostModel::Beckmann(*params),
    })
}
