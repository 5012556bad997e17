//! Builds instances from the `[scenario]` table.

use netequil::combined::{ChoiceParams, DemandSpec};
use netequil::synthetic::{self, CityScenario};
use netequil::tntp::{parse_tntp, TntpOptions};
use netequil::{CostModel, Network, OdMatrix};

use crate::config::{ModelKind, ScenarioConfig};
use crate::UsageError;

pub struct AssignmentScenario {
    pub name: String,
    pub network: Network,
    pub demand: Vec<OdMatrix>,
    pub model: CostModel,
}

pub struct DistributionScenario {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub costs: Vec<f64>,
    pub productions: Vec<f64>,
    pub attractions: Vec<f64>,
}

pub struct CombinedScenario {
    pub name: String,
    pub network: Network,
    pub params: ChoiceParams,
    pub demand: DemandSpec,
    pub model: CostModel,
}

pub const ASSIGNMENT_SOURCES: [&str; 6] = [
    "two-parallel-links",
    "single-link",
    "random-assignment",
    "random-graph",
    "grid",
    "tntp",
];
pub const DISTRIBUTION_SOURCES: [&str; 2] = ["random-distribution", "matrix"];
pub const COMBINED_SOURCES: [&str; 3] =
    ["four-zone-city", "four-zone-city-halved", "one-mode-city"];

fn model(kind: ModelKind) -> CostModel {
    match kind {
        ModelKind::Beckmann => CostModel::beckmann(),
        ModelKind::StableDynamics => CostModel::StableDynamics,
    }
}

fn unknown(s: &ScenarioConfig, allowed: &[&str]) -> UsageError {
    UsageError::new(
        "scenario.source",
        format!("{:?} is not one of {}", s.source, allowed.join(", ")),
    )
}

fn required<T: Clone>(value: &Option<T>, key: &str) -> Result<T, UsageError> {
    value
        .clone()
        .ok_or_else(|| UsageError::new(format!("scenario.{key}"), "required by this source"))
}

pub fn assignment(s: &ScenarioConfig) -> Result<AssignmentScenario, UsageError> {
    let size = s.size.unwrap_or(20);
    let inst = match s.source.as_str() {
        "two-parallel-links" => {
            synthetic::two_parallel_links(s.capacity.unwrap_or(10.0), s.demand.unwrap_or(20.0))
        }
        "single-link" => {
            let capacity = s.capacity.unwrap_or(10.0);
            let network = Network::new(
                2,
                vec![netequil::Link::road(0, 1, 1.0, capacity)],
                vec![0, 1],
                None,
            )
            .map_err(|e| UsageError::new("scenario.capacity", e.to_string()))?;
            let od = OdMatrix::from_vec(2, vec![0.0, s.demand.unwrap_or(20.0), 0.0, 0.0])
                .map_err(|e| UsageError::new("scenario.demand", e.to_string()))?;
            synthetic::AssignmentInstance {
                name: "single-link".into(),
                network,
                demand: vec![od],
            }
        }
        "random-assignment" => synthetic::random_assignment(s.seed, size),
        "random-graph" => synthetic::random_graph(s.seed, size),
        "grid" => synthetic::grid(size, s.seed),
        "tntp" => {
            let net_path = required(&s.network, "network")?;
            let trips_path = required(&s.trips, "trips")?;
            let read = |p: &std::path::Path, key: &str| {
                std::fs::read_to_string(p).map_err(|e| {
                    UsageError::new(
                        format!("scenario.{key}"),
                        format!("cannot read {}: {e}", p.display()),
                    )
                })
            };
            let (network, od) = parse_tntp(
                &read(&net_path, "network")?,
                &read(&trips_path, "trips")?,
                TntpOptions::default(),
            )
            .map_err(|e| UsageError::new("scenario.network", e.to_string()))?;
            let name = net_path
                .file_stem()
                .map_or("tntp".into(), |n| n.to_string_lossy().into_owned());
            synthetic::AssignmentInstance {
                name,
                network,
                demand: vec![od],
            }
        }
        _ => return Err(unknown(s, &ASSIGNMENT_SOURCES)),
    };
    let scale = s.demand_scale.unwrap_or(1.0);
    Ok(AssignmentScenario {
        name: inst.name,
        network: inst.network,
        demand: inst.demand.iter().map(|d| d.scaled(scale)).collect(),
        model: model(s.model),
    })
}

pub fn distribution(s: &ScenarioConfig) -> Result<DistributionScenario, UsageError> {
    let scale = s.demand_scale.unwrap_or(1.0);
    let (name, inst) = match s.source.as_str() {
        "random-distribution" => {
            let n = s.size.unwrap_or(10);
            if n == 0 {
                return Err(UsageError::new("scenario.size", "must be positive"));
            }
            (
                format!("random-distribution-{n}x{n}-{}", s.seed),
                synthetic::distribution_of_size(s.seed, n, n),
            )
        }
        "matrix" => {
            let rows_of_costs = required(&s.costs, "costs")?;
            let productions = required(&s.productions, "productions")?;
            let attractions = required(&s.attractions, "attractions")?;
            let (rows, cols) = (
                rows_of_costs.len(),
                rows_of_costs.first().map_or(0, Vec::len),
            );
            if rows != productions.len()
                || rows_of_costs.iter().any(|r| r.len() != cols)
                || cols != attractions.len()
            {
                return Err(UsageError::new(
                    "scenario.costs",
                    "must be productions × attractions",
                ));
            }
            let costs = rows_of_costs.concat();
            (
                "matrix".to_string(),
                synthetic::DistributionInstance {
                    rows,
                    cols,
                    costs,
                    productions,
                    attractions,
                },
            )
        }
        _ => return Err(unknown(s, &DISTRIBUTION_SOURCES)),
    };
    Ok(DistributionScenario {
        name,
        rows: inst.rows,
        cols: inst.cols,
        costs: inst.costs,
        productions: inst.productions.iter().map(|x| x * scale).collect(),
        attractions: inst.attractions.iter().map(|x| x * scale).collect(),
    })
}

pub fn combined(s: &ScenarioConfig) -> Result<CombinedScenario, UsageError> {
    let city: CityScenario = match s.source.as_str() {
        "four-zone-city" => synthetic::four_zone_city(),
        "four-zone-city-halved" => synthetic::four_zone_city_halved(),
        "one-mode-city" => synthetic::one_mode_city(),
        _ => return Err(unknown(s, &COMBINED_SOURCES)),
    };
    Ok(CombinedScenario {
        name: city.name,
        network: city.network,
        params: city.params,
        demand: city.demand.scaled(s.demand_scale.unwrap_or(1.0)),
        model: model(s.model),
    })
}

/// Human-readable summary for `info`.
pub fn describe(s: &ScenarioConfig) -> Result<String, UsageError> {
    let src = s.source.as_str();
    if ASSIGNMENT_SOURCES.contains(&src) {
        let a = assignment(s)?;
        let total: f64 = a.demand.iter().map(OdMatrix::total).sum();
        Ok(network_lines(&a.name, &a.network, a.model.name(), total))
    } else if COMBINED_SOURCES.contains(&src) {
        let c = combined(s)?;
        Ok(format!(
            "{}purposes: {}\nagent types: {}\n",
            network_lines(&c.name, &c.network, c.model.name(), c.demand.total()),
            c.demand.num_purposes(),
            c.demand.num_agents()
        ))
    } else if DISTRIBUTION_SOURCES.contains(&src) {
        let d = distribution(s)?;
        Ok(format!(
            "scenario: {}\nsize: {} x {}\ntotal trips: {}\n",
            d.name,
            d.rows,
            d.cols,
            d.productions.iter().sum::<f64>()
        ))
    } else {
        let all: Vec<&str> = ASSIGNMENT_SOURCES
            .iter()
            .chain(&DISTRIBUTION_SOURCES)
            .chain(&COMBINED_SOURCES)
            .copied()
            .collect();
        Err(unknown(s, &all))
    }
}

fn network_lines(name: &str, net: &Network, model: &str, total: f64) -> String {
    format!(
        "scenario: {name}\nmodel: {model}\nnodes: {}\nlinks: {}\nzones: {}\nmodes: {}\ntotal demand: {total}\n",
        net.num_nodes(),
        net.num_links(),
        net.num_zones(),
        net.num_modes()
    )
}
