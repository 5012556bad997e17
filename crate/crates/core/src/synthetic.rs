//! Seeded synthetic instances: small assignment networks, random graphs,
//! distribution problems, a four-zone two-mode city and large grids.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::combined::{ChoiceParams, DemandSpec};
use crate::network::{Link, Network};
use crate::od::OdMatrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Network plus one demand matrix per mode.
#[derive(Debug, Clone)]
pub struct AssignmentInstance {
    pub name: String,
    pub network: Network,
    pub demand: Vec<OdMatrix>,
}

/// Two parallel links from zone 1 to zone 2 with free-flow times 1 and 2
/// and equal capacities.
pub fn two_parallel_links(capacity: f64, demand: f64) -> AssignmentInstance {
    let network = Network::new(
        2,
        vec![
            Link::road(0, 1, 1.0, capacity),
            Link::road(0, 1, 2.0, capacity),
        ],
        vec![0, 1],
        None,
    )
    .expect("valid two-link network");
    let od = OdMatrix::from_vec(2, vec![0.0, demand, 0.0, 0.0]).expect("nonnegative demand");
    AssignmentInstance {
        name: "two-parallel-links".into(),
        network,
        demand: vec![od],
    }
}

/// Strongly connected network with at most `max_links` links: a directed
/// ring over 4–6 nodes plus random chords, every node a zone and positive
/// demand between every ordered pair.
pub fn random_assignment(seed: u64, max_links: usize) -> AssignmentInstance {
    let mut r = rng(seed);
    let n = r.gen_range(4..=6).min(max_links.max(2));
    let mut links: Vec<Link> = (0..n)
        .map(|i| random_road(&mut r, i, (i + 1) % n))
        .collect();
    let extra = r.gen_range(0..=max_links.saturating_sub(n));
    for _ in 0..extra {
        let tail = r.gen_range(0..n);
        let mut head = r.gen_range(0..n - 1);
        if head >= tail {
            head += 1;
        }
        links.push(random_road(&mut r, tail, head));
    }
    let network = Network::new(n, links, (0..n).collect(), None).expect("valid random network");
    let demand: Vec<f64> = (0..n * n)
        .map(|c| {
            if c / n == c % n {
                0.0
            } else {
                r.gen_range(2.0..15.0)
            }
        })
        .collect();
    AssignmentInstance {
        name: format!("random-{seed}"),
        network,
        demand: vec![OdMatrix::from_vec(n, demand).expect("nonnegative demand")],
    }
}

fn random_road(r: &mut ChaCha8Rng, tail: usize, head: usize) -> Link {
    Link::road(tail, head, r.gen_range(0.1..1.0), r.gen_range(10.0..40.0))
}

/// Random digraph with at most `max_nodes` nodes, out-degree 1–3, some
/// nodes closed to through traffic, and demand only between connected
/// zone pairs. Not necessarily strongly connected.
pub fn random_graph(seed: u64, max_nodes: usize) -> AssignmentInstance {
    let mut r = rng(seed);
    let n = r.gen_range(3..=max_nodes.max(3));
    let mut links = Vec::new();
    for v in 0..n {
        for _ in 0..r.gen_range(1..=3) {
            let mut head = r.gen_range(0..n - 1);
            if head >= v {
                head += 1;
            }
            // Small integer times make ties frequent.
            links.push(Link::road(v, head, f64::from(r.gen_range(1..5u32)), 10.0));
        }
    }
    let nz = r.gen_range(2..=n.min(8));
    let zones: Vec<usize> = rand::seq::index::sample(&mut r, n, nz).into_vec();
    let through: Vec<bool> = (0..n).map(|_| r.gen_bool(0.85)).collect();
    let network = Network::new(n, links, zones, Some(through)).expect("valid random graph");
    let mut demand = vec![0.0; nz * nz];
    for i in 0..nz {
        let reach = network.reachable_from(i, None);
        for j in 0..nz {
            if i != j && reach[j] && r.gen_bool(0.7) {
                demand[i * nz + j] = f64::from(r.gen_range(1..20u32));
            }
        }
    }
    AssignmentInstance {
        name: format!("graph-{seed}"),
        network,
        demand: vec![OdMatrix::from_vec(nz, demand).expect("nonnegative demand")],
    }
}

/// Costs and marginals of a doubly constrained distribution problem.
#[derive(Debug, Clone)]
pub struct DistributionInstance {
    pub rows: usize,
    pub cols: usize,
    pub costs: Vec<f64>,
    pub productions: Vec<f64>,
    pub attractions: Vec<f64>,
}

/// Random instance of size at most `max_size × max_size` with costs in
/// `[0, 1]` and marginals of equal total.
pub fn random_distribution(seed: u64, max_size: usize) -> DistributionInstance {
    let mut r = rng(seed);
    let rows = r.gen_range(2..=max_size.max(2));
    let cols = r.gen_range(2..=max_size.max(2));
    fill_distribution(&mut r, rows, cols)
}

/// Random `rows × cols` instance drawn like [`random_distribution`].
pub fn distribution_of_size(seed: u64, rows: usize, cols: usize) -> DistributionInstance {
    fill_distribution(&mut rng(seed), rows, cols)
}

fn fill_distribution(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DistributionInstance {
    let costs = (0..rows * cols).map(|_| r.gen_range(0.0..1.0)).collect();
    let productions: Vec<f64> = (0..rows).map(|_| r.gen_range(1.0..10.0)).collect();
    let mut attractions: Vec<f64> = (0..cols).map(|_| r.gen_range(1.0..10.0)).collect();
    let scale = productions.iter().sum::<f64>() / attractions.iter().sum::<f64>();
    attractions.iter_mut().for_each(|w| *w *= scale);
    DistributionInstance {
        rows,
        cols,
        costs,
        productions,
        attractions,
    }
}

/// Network, choice parameters and demand of a combined-model scenario.
#[derive(Debug, Clone)]
pub struct CityScenario {
    pub name: String,
    pub network: Network,
    pub params: ChoiceParams,
    pub demand: DemandSpec,
}

/// Four zones on a ring. Car (mode 1) uses eight road links running both
/// ways around the ring; transit (mode 2) uses four clockwise links with
/// constant times. Agent type 1 may choose either mode, agent type 2 has no
/// car. Two trip purposes with different destination sensitivities.
pub fn four_zone_city() -> CityScenario {
    city_with_capacity(1.0)
}

fn city_with_capacity(scale: f64) -> CityScenario {
    let car = vec![Some(0.0), None];
    let transit = vec![None, Some(0.0)];
    let road_time = [0.20, 0.25, 0.15, 0.30];
    let road_cap = [120.0, 100.0, 150.0, 90.0];
    let mut links = Vec::new();
    for i in 0..4 {
        let j = (i + 1) % 4;
        links.push(Link::road(i, j, road_time[i], scale * road_cap[i]).with_modes(car.clone()));
        links.push(Link::road(j, i, road_time[i], scale * road_cap[i]).with_modes(car.clone()));
    }
    for i in 0..4 {
        links.push(
            Link::road(i, (i + 1) % 4, 1.5 * road_time[i], f64::INFINITY)
                .with_modes(transit.clone()),
        );
    }
    let network = Network::new(4, links, vec![0, 1, 2, 3], None).expect("valid city network");
    let params = ChoiceParams::new(
        vec![6.0, 6.0],
        vec![vec![0.0, 0.4], vec![f64::INFINITY, 0.0]],
        vec![3.0, 5.0],
    )
    .expect("valid choice parameters");
    let demand = DemandSpec::new(
        4,
        vec![
            vec![vec![120.0, 80.0, 100.0, 60.0], vec![40.0, 60.0, 30.0, 50.0]],
            vec![vec![50.0, 70.0, 40.0, 60.0], vec![20.0, 10.0, 30.0, 20.0]],
        ],
        vec![
            vec![90.0, 150.0, 120.0, 180.0],
            vec![60.0, 80.0, 90.0, 70.0],
        ],
    )
    .expect("consistent marginals");
    CityScenario {
        name: "four-zone-city".into(),
        network,
        params,
        demand,
    }
}

/// The four-zone city for hard capacities: road capacities cut to 15% so
/// they bind, and every marginal halved so the capacities can be met.
pub fn four_zone_city_halved() -> CityScenario {
    let mut s = city_with_capacity(0.15);
    s.demand = s.demand.scaled(0.5);
    s.name = "four-zone-city-halved".into();
    s
}

/// The city's road ring with a single mode, agent type and purpose.
pub fn one_mode_city() -> CityScenario {
    let road_time = [0.20, 0.25, 0.15, 0.30];
    let road_cap = [120.0, 100.0, 150.0, 90.0];
    let mut links = Vec::new();
    for i in 0..4 {
        let j = (i + 1) % 4;
        links.push(Link::road(i, j, road_time[i], road_cap[i]));
        links.push(Link::road(j, i, road_time[i], road_cap[i]));
    }
    let network = Network::new(4, links, vec![0, 1, 2, 3], None).expect("valid city network");
    let params =
        ChoiceParams::new(vec![6.0], vec![vec![0.0]], vec![3.0]).expect("valid choice parameters");
    let demand = DemandSpec::new(
        4,
        vec![vec![vec![120.0, 80.0, 100.0, 60.0]]],
        vec![vec![60.0, 110.0, 90.0, 100.0]],
    )
    .expect("consistent marginals");
    CityScenario {
        name: "one-mode-city".into(),
        network,
        params,
        demand,
    }
}

/// `side × side` grid with links both ways between neighbours and every
/// node a zone, with uniform demand between all pairs.
pub fn grid(side: usize, seed: u64) -> AssignmentInstance {
    let mut r = rng(seed);
    let n = side * side;
    let mut links = Vec::new();
    for row in 0..side {
        for col in 0..side {
            let v = row * side + col;
            if col + 1 < side {
                links.push(random_road(&mut r, v, v + 1));
                links.push(random_road(&mut r, v + 1, v));
            }
            if row + 1 < side {
                links.push(random_road(&mut r, v, v + side));
                links.push(random_road(&mut r, v + side, v));
            }
        }
    }
    let network = Network::new(n, links, (0..n).collect(), None).expect("valid grid");
    let demand = (0..n * n)
        .map(|c| if c / n == c % n { 0.0 } else { 0.01 })
        .collect();
    AssignmentInstance {
        name: format!("grid-{side}"),
        network,
        demand: vec![OdMatrix::from_vec(n, demand).expect("nonnegative demand")],
    }
}
