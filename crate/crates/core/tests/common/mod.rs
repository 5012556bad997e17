//! Independent reference computations shared by the integration tests and
//! the acceptance target.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use netequil::combined::{ChoiceParams, DemandSpec};
use netequil::{Link, LinkCost, Network};

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + k as f64 * h);
    }
    s * h / 3.0
}

/// All-pairs shortest distances by Floyd–Warshall, using only through nodes
/// as intermediate vertices.
pub fn floyd_warshall(network: &Network, times: &[f64]) -> Vec<Vec<f64>> {
    let n = network.num_nodes();
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (v, row) in d.iter_mut().enumerate() {
        row[v] = 0.0;
    }
    for (e, l) in network.links().iter().enumerate() {
        if times[e] < d[l.tail][l.head] {
            d[l.tail][l.head] = times[e];
        }
    }
    for k in 0..n {
        if !network.is_through(k) {
            continue;
        }
        for i in 0..n {
            if d[i][k].is_infinite() {
                continue;
            }
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    d
}

/// Every simple path from `source` to `target` whose cost is within `tol`
/// of `bound`. Intermediate nodes must be through nodes.
pub fn enumerate_paths(
    network: &Network,
    times: &[f64],
    source: usize,
    target: usize,
    bound: f64,
    tol: f64,
) -> Vec<Vec<usize>> {
    fn go(
        net: &Network,
        times: &[f64],
        v: usize,
        target: usize,
        cost: f64,
        limit: f64,
        on_path: &mut Vec<bool>,
        path: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if v == target {
            out.push(path.clone());
            return;
        }
        if !path.is_empty() && !net.is_through(v) {
            return;
        }
        for &e in net.out_links(v) {
            let h = net.link(e).head;
            let c = cost + times[e];
            if on_path[h] || c > limit {
                continue;
            }
            on_path[h] = true;
            path.push(e);
            go(net, times, h, target, c, limit, on_path, path, out);
            path.pop();
            on_path[h] = false;
        }
    }
    let mut out = Vec::new();
    let mut on_path = vec![false; network.num_nodes()];
    on_path[source] = true;
    go(
        network,
        times,
        source,
        target,
        0.0,
        bound + tol,
        &mut on_path,
        &mut Vec::new(),
        &mut out,
    );
    out
}

/// Equilibrium split of `demand` over two parallel links by bisection on
/// `τ₁(x) = τ₂(D − x)`.
pub fn two_link_equilibrium(a: &LinkCost, b: &LinkCost, demand: f64) -> f64 {
    let g = |x: f64| a.time(x) - b.time(demand - x);
    if g(demand) <= 0.0 {
        return demand;
    }
    if g(0.0) >= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, demand);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `min Σ c d + (1/γ) Σ d ln d` over `d ≥ 0` with row sums `l` and column
/// sums `w` (in trip units), by damped Newton on the concave dual
/// `Σ λ l + Σ μ w − (1/γ) Σ exp(γ(λ_i + μ_j − c_ij) − 1)` with `μ_last = 0`.
/// Returns the optimal value and the plan.
pub fn entropic_transport_newton(
    costs: &[f64],
    l: &[f64],
    w: &[f64],
    gamma: f64,
) -> (f64, Vec<f64>) {
    let (n, m) = (l.len(), w.len());
    let k = n + m - 1;
    let plan = |x: &DVector<f64>| -> Vec<f64> {
        let mut d = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                let c = costs[i * m + j];
                let mu = if j + 1 < m { x[n + j] } else { 0.0 };
                d[i * m + j] = if c.is_finite() {
                    (gamma * (x[i] + mu - c) - 1.0).exp()
                } else {
                    0.0
                };
            }
        }
        d
    };
    let value = |x: &DVector<f64>| -> f64 {
        let d = plan(x);
        let lin: f64 = (0..n).map(|i| x[i] * l[i]).sum::<f64>()
            + (0..m - 1).map(|j| x[n + j] * w[j]).sum::<f64>();
        lin - d.iter().sum::<f64>() / gamma
    };
    // Start from potentials that put the plan at roughly the right scale.
    let total: f64 = l.iter().sum();
    let cmin = costs
        .iter()
        .copied()
        .filter(|c| c.is_finite())
        .fold(f64::INFINITY, f64::min);
    let mut x = DVector::from_element(k, 0.0);
    for i in 0..n {
        x[i] = cmin + (1.0 + (total / (n * m) as f64).ln()) / gamma;
    }
    for _ in 0..500 {
        let d = plan(&x);
        let mut grad = DVector::from_element(k, 0.0);
        let mut hess = DMatrix::from_element(k, k, 0.0);
        for i in 0..n {
            let r: f64 = d[i * m..(i + 1) * m].iter().sum();
            grad[i] = l[i] - r;
            hess[(i, i)] = gamma * r;
            for j in 0..m - 1 {
                hess[(i, n + j)] = gamma * d[i * m + j];
                hess[(n + j, i)] = gamma * d[i * m + j];
            }
        }
        for j in 0..m - 1 {
            let c: f64 = (0..n).map(|i| d[i * m + j]).sum();
            grad[n + j] = w[j] - c;
            hess[(n + j, n + j)] = gamma * c;
        }
        if grad.norm() <= 1e-13 * total.max(1.0) {
            break;
        }
        let step = hess
            .clone()
            .cholesky()
            .map(|ch| ch.solve(&grad))
            .unwrap_or_else(|| grad.clone() / gamma);
        let f0 = value(&x);
        let slope = grad.dot(&step);
        let mut s = 1.0;
        while s > 1e-12 {
            let cand = &x + &step * s;
            if value(&cand) >= f0 + 1e-4 * s * slope {
                x = cand;
                break;
            }
            s *= 0.5;
        }
        if s <= 1e-12 {
            break;
        }
    }
    let d = plan(&x);
    let primal: f64 = d
        .iter()
        .zip(costs)
        .filter(|(v, _)| **v > 0.0)
        .map(|(v, c)| v * c + v * v.ln() / gamma)
        .sum();
    (primal, d)
}

/// Naive `−(1/α) ln Σ_m exp(−α T^m − β_m)`.
pub fn naive_composite(mode_costs: &[f64], alpha: f64, beta: &[f64]) -> f64 {
    let s: f64 = mode_costs
        .iter()
        .zip(beta)
        .map(|(t, b)| (-alpha * t - b).exp())
        .sum();
    -s.ln() / alpha
}

/// `min E` for the nested problem with composite costs `composite[a]`
/// (zones × zones), solved purpose by purpose with the Newton oracle.
pub fn nested_reference(composite: &[Vec<f64>], gammas: &[f64], demand: &DemandSpec) -> f64 {
    let z = demand.zones;
    let mut total = 0.0;
    for r in 0..demand.num_purposes() {
        let stacked: Vec<f64> = composite.iter().flatten().copied().collect();
        let l: Vec<f64> = demand.productions[r].iter().flatten().copied().collect();
        let rows: Vec<usize> = (0..l.len()).filter(|&i| l[i] > 0.0).collect();
        let cols: Vec<usize> = (0..z).filter(|&j| demand.attractions[r][j] > 0.0).collect();
        let costs: Vec<f64> = rows
            .iter()
            .flat_map(|&i| cols.iter().map(move |&j| (i, j)))
            .map(|(i, j)| stacked[i * z + j])
            .collect();
        let lr: Vec<f64> = rows.iter().map(|&i| l[i]).collect();
        let wr: Vec<f64> = cols.iter().map(|&j| demand.attractions[r][j]).collect();
        total += entropic_transport_newton(&costs, &lr, &wr, gammas[r]).0;
    }
    total
}

/// Three zones on a triangle: car links both ways on every side, transit
/// links one way around. Two purposes, two agent types, two modes.
pub fn three_zone_city(seed: u64) -> (Network, ChoiceParams, DemandSpec) {
    use rand::Rng;
    let mut r = netequil::synthetic::rng(seed);
    let car = vec![Some(0.0), None];
    let transit = vec![None, Some(0.0)];
    let mut links = Vec::new();
    for i in 0..3 {
        let j = (i + 1) % 3;
        let t = r.gen_range(0.1..0.4);
        let cap = r.gen_range(20.0..60.0);
        links.push(Link::road(i, j, t, cap).with_modes(car.clone()));
        links.push(Link::road(j, i, t, cap).with_modes(car.clone()));
        links.push(Link::road(i, j, 1.4 * t, f64::INFINITY).with_modes(transit.clone()));
    }
    let net = Network::new(3, links, vec![0, 1, 2], None).unwrap();
    let params = ChoiceParams::new(
        vec![r.gen_range(2.0..8.0), r.gen_range(2.0..8.0)],
        vec![
            vec![0.0, r.gen_range(0.0..1.0)],
            vec![r.gen_range(0.0..1.0), 0.0],
        ],
        vec![r.gen_range(1.0..6.0), r.gen_range(1.0..6.0)],
    )
    .unwrap();
    let mut productions = Vec::new();
    let mut attractions = Vec::new();
    for _ in 0..2 {
        let l: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..3).map(|_| r.gen_range(5.0..40.0)).collect())
            .collect();
        let total: f64 = l.iter().flatten().sum();
        let raw: Vec<f64> = (0..3).map(|_| r.gen_range(1.0..2.0)).collect();
        let s: f64 = raw.iter().sum();
        attractions.push(raw.iter().map(|x| x * total / s).collect());
        productions.push(l);
    }
    let demand = DemandSpec::new(3, productions, attractions).unwrap();
    (net, params, demand)
}

/// Zone-to-zone costs per mode by Floyd–Warshall on `t + c^m`.
pub fn reference_mode_costs(net: &Network, t: &[f64]) -> Vec<Vec<f64>> {
    let z = net.num_zones();
    (0..net.num_modes())
        .map(|m| {
            let times: Vec<f64> = net
                .links()
                .iter()
                .zip(t)
                .map(|(l, t)| l.mode_cost(m).map_or(f64::INFINITY, |c| t + c))
                .collect();
            let d = floyd_warshall(net, &times);
            let zones = net.zones();
            (0..z * z).map(|k| d[zones[k / z]][zones[k % z]]).collect()
        })
        .collect()
}

pub fn reference_composite(per_mode: &[Vec<f64>], params: &ChoiceParams) -> Vec<Vec<f64>> {
    (0..params.num_agents())
        .map(|a| {
            (0..per_mode[0].len())
                .map(|k| {
                    let costs: Vec<f64> = per_mode.iter().map(|c| c[k]).collect();
                    naive_composite(&costs, params.alpha[a], &params.beta[a])
                })
                .collect()
        })
        .collect()
}

/// `min E` at link times `t`, from the independent oracles.
pub fn reference_min_e(
    net: &Network,
    params: &ChoiceParams,
    demand: &DemandSpec,
    t: &[f64],
) -> f64 {
    let composite = reference_composite(&reference_mode_costs(net, t), params);
    nested_reference(&composite, &params.gamma, demand)
}

/// Link times `t̄(1 + u)` with `u ∈ [0, spread)`; uncapacitated links stay at `t̄`.
pub fn random_times(net: &Network, r: &mut impl rand::Rng, spread: f64) -> Vec<f64> {
    net.links()
        .iter()
        .map(|l| {
            if l.is_uncapacitated() {
                l.free_flow_time
            } else {
                l.free_flow_time * (1.0 + r.gen_range(0.0..spread))
            }
        })
        .collect()
}
