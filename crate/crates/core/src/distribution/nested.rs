use rayon::prelude::*;

use crate::error::{shape, Error, Result};

use super::{entropic_cost, DistributionMethod, DistributionStop, DualPotentials, ReducedProblem};

/// Productions per (purpose, agent type, zone) and attractions per
/// (purpose, zone), in trips.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandSpec {
    pub zones: usize,
    /// `l[r][a][i]`.
    pub productions: Vec<Vec<Vec<f64>>>,
    /// `w[r][j]`.
    pub attractions: Vec<Vec<f64>>,
}

impl DemandSpec {
    pub fn new(
        zones: usize,
        productions: Vec<Vec<Vec<f64>>>,
        attractions: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let spec = Self {
            zones,
            productions,
            attractions,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn num_purposes(&self) -> usize {
        self.attractions.len()
    }

    pub fn num_agents(&self) -> usize {
        self.productions.first().map_or(0, Vec::len)
    }

    /// `N_r`.
    pub fn purpose_totals(&self) -> Vec<f64> {
        self.attractions.iter().map(|w| w.iter().sum()).collect()
    }

    pub fn total(&self) -> f64 {
        self.purpose_totals().iter().sum()
    }

    /// Same structure with every marginal multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            zones: self.zones,
            productions: self
                .productions
                .iter()
                .map(|r| {
                    r.iter()
                        .map(|a| a.iter().map(|x| x * factor).collect())
                        .collect()
                })
                .collect(),
            attractions: self
                .attractions
                .iter()
                .map(|w| w.iter().map(|x| x * factor).collect())
                .collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.productions.len() != self.attractions.len() || self.attractions.is_empty() {
            return Err(shape(
                "productions and attractions must list the same purposes",
            ));
        }
        let agents = self.num_agents();
        if agents == 0 {
            return Err(shape("at least one agent type is required"));
        }
        for (r, (l, w)) in self.productions.iter().zip(&self.attractions).enumerate() {
            if l.len() != agents || l.iter().any(|x| x.len() != self.zones) || w.len() != self.zones
            {
                return Err(shape(format!(
                    "purpose {} has inconsistent dimensions",
                    r + 1
                )));
            }
            if l.iter()
                .flatten()
                .chain(w)
                .any(|x| !(*x >= 0.0 && x.is_finite()))
            {
                return Err(Error::Validation(format!(
                    "purpose {} has negative or non-finite marginals",
                    r + 1
                )));
            }
            let sl: f64 = l.iter().flatten().sum();
            let sw: f64 = w.iter().sum();
            if (sl - sw).abs() > 1e-9 * sl.max(sw).max(1.0) {
                return Err(Error::Validation(format!(
                    "purpose {}: productions total {sl} but attractions total {sw}",
                    r + 1
                )));
            }
        }
        Ok(())
    }
}

/// Trip tables `d^{ra}` with certificates.
#[derive(Debug, Clone)]
pub struct NestedSolution {
    /// `trips[r][a]`, row-major zones × zones, with exact marginals.
    pub trips: Vec<Vec<Vec<f64>>>,
    /// `E(d, T)` in trip units.
    pub objective: f64,
    /// Upper bound on `E(d) − min E` in trip units.
    pub certificate: f64,
    /// Full-shape potentials per purpose (rows indexed by agent type and
    /// zone), usable as a warm start.
    pub potentials: Vec<Option<DualPotentials>>,
    pub iterations: Vec<usize>,
}

/// Solves `min E(d, T)` over trip tables with the given productions and
/// attractions, one independent problem per purpose. Rows of purpose `r`
/// are (agent type, origin) pairs with costs `T^a`; marginals are scaled to
/// unit mass, solved until the realized duality gap is at most
/// `delta / N`, rounded onto the polytope and scaled back.
pub fn nested_distribution_solve(
    composite_costs: &[Vec<f64>],
    gammas: &[f64],
    demand: &DemandSpec,
    delta: f64,
    method: DistributionMethod,
    max_iter: usize,
    warm: Option<&[Option<DualPotentials>]>,
) -> Result<NestedSolution> {
    let z = demand.zones;
    let agents = demand.num_agents();
    if composite_costs.len() != agents || composite_costs.iter().any(|c| c.len() != z * z) {
        return Err(shape(
            "one zones × zones cost matrix per agent type required",
        ));
    }
    if gammas.len() != demand.num_purposes() {
        return Err(shape("one gamma per purpose required"));
    }
    if !(delta > 0.0) {
        return Err(Error::Validation(format!(
            "accuracy must be positive, got {delta}"
        )));
    }
    let total = demand.total();
    let stacked: Vec<f64> = composite_costs.iter().flatten().copied().collect();

    struct Part {
        trips: Vec<Vec<f64>>,
        objective: f64,
        certificate: f64,
        potentials: Option<DualPotentials>,
        iterations: usize,
    }

    let parts: Vec<Part> = (0..demand.num_purposes())
        .into_par_iter()
        .map(|r| {
            let l: Vec<f64> = demand.productions[r].iter().flatten().copied().collect();
            let w = &demand.attractions[r];
            let Some(reduced) = ReducedProblem::new(agents * z, z, &stacked, &l, w, gammas[r])?
            else {
                return Ok(Part {
                    trips: vec![vec![0.0; z * z]; agents],
                    objective: 0.0,
                    certificate: 0.0,
                    potentials: None,
                    iterations: 0,
                });
            };
            let n = reduced.problem.total();
            let stop = DistributionStop {
                marginal_tol: 0.0,
                gap_tol: Some(delta / total),
                max_iter,
                ..Default::default()
            };
            let start = warm
                .and_then(|w| w.get(r))
                .and_then(|p| p.as_ref())
                .and_then(|p| reduced.restrict(p));
            let res = method.solve(&reduced.problem, &stop, start.as_ref())?;
            if !res.converged {
                log::warn!(
                    "purpose {}: distribution stopped at gap {:e} (target {:e})",
                    r + 1,
                    res.gap,
                    delta / total
                );
            }
            let full: Vec<f64> = reduced
                .expand(&res.rounded.d)
                .into_iter()
                .map(|x| x * n)
                .collect();
            let trips: Vec<Vec<f64>> = full.chunks(z * z).map(<[f64]>::to_vec).collect();
            let objective = entropic_cost(&stacked, gammas[r], &full);
            Ok(Part {
                trips,
                objective,
                certificate: n * res.gap.max(0.0),
                potentials: Some(reduced.widen(&res.potentials)),
                iterations: res.iterations,
            })
        })
        .collect::<Result<_>>()?;

    let mut out = NestedSolution {
        trips: Vec::with_capacity(parts.len()),
        objective: 0.0,
        certificate: 0.0,
        potentials: Vec::with_capacity(parts.len()),
        iterations: Vec::with_capacity(parts.len()),
    };
    for p in parts {
        out.trips.push(p.trips);
        out.objective += p.objective;
        out.certificate += p.certificate;
        out.potentials.push(p.potentials);
        out.iterations.push(p.iterations);
    }
    Ok(out)
}
