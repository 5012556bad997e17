mod common;

use netequil::paths::{aggregate_flows, dijkstra, ShortestPathTree};
use netequil::synthetic::random_graph;
use netequil::{OdMatrix, PathEngine};
use proptest::prelude::*;

const TOL: f64 = 1e-9;

fn trees(inst: &netequil::synthetic::AssignmentInstance, times: &[f64]) -> Vec<ShortestPathTree> {
    inst.network
        .zones()
        .iter()
        .map(|&o| dijkstra(&inst.network, times, o).unwrap())
        .collect()
}

#[test]
fn dijkstra_matches_floyd_warshall() {
    for seed in 0..20 {
        let inst = random_graph(seed, 50);
        let net = &inst.network;
        let times = net.free_flow_times();
        let fw = common::floyd_warshall(net, &times);
        for &o in net.zones() {
            let tree = dijkstra(net, &times, o).unwrap();
            for &d in net.zones() {
                let (a, b) = (tree.dist[d], fw[o][d]);
                assert!(
                    a == b || (a - b).abs() <= TOL,
                    "seed {seed}: {o}->{d} {a} vs {b}"
                );
            }
        }
    }
}

#[test]
fn tree_paths_are_enumerated_shortest_paths() {
    for seed in 0..20 {
        let inst = random_graph(seed, 50);
        let net = &inst.network;
        let times = net.free_flow_times();
        let fw = common::floyd_warshall(net, &times);
        for &o in net.zones() {
            let tree = dijkstra(net, &times, o).unwrap();
            for &d in net.zones() {
                if d == o || fw[o][d].is_infinite() {
                    continue;
                }
                let all = common::enumerate_paths(net, &times, o, d, fw[o][d], TOL);
                assert!(!all.is_empty());
                for p in &all {
                    let c: f64 = p.iter().map(|&e| times[e]).sum();
                    assert!((c - fw[o][d]).abs() <= TOL);
                }
                let path = tree.path_to(net, d).unwrap();
                assert!(
                    all.contains(&path),
                    "seed {seed}: tree path {path:?} not shortest"
                );
            }
        }
    }
}

#[test]
fn loaded_flows_equal_path_incidence_times_demand() {
    for seed in 0..20 {
        let inst = random_graph(seed, 50);
        let net = &inst.network;
        let times = net.free_flow_times();
        let trees = trees(&inst, &times);
        let od = &inst.demand[0];
        let flows = aggregate_flows(net, &trees, od).unwrap();
        let mut explicit = vec![0.0; net.num_links()];
        for (i, tree) in trees.iter().enumerate() {
            for (j, &dest) in net.zones().iter().enumerate() {
                if od.get(i, j) > 0.0 && i != j {
                    for e in tree.path_to(net, dest).unwrap() {
                        explicit[e] += od.get(i, j);
                    }
                }
            }
        }
        for (a, b) in flows.iter().zip(&explicit) {
            assert!((a - b).abs() <= TOL * b.max(1.0));
        }
        let ft: f64 = flows.iter().zip(&times).map(|(f, t)| f * t).sum();
        let dt: f64 = (0..od.zones())
            .flat_map(|i| (0..od.zones()).map(move |j| (i, j)))
            .filter(|&(i, j)| od.get(i, j) > 0.0)
            .map(|(i, j)| od.get(i, j) * trees[i].dist[net.zones()[j]])
            .sum();
        assert!(
            (ft - dt).abs() <= TOL * dt.max(1.0),
            "seed {seed}: {ft} vs {dt}"
        );
    }
}

#[test]
fn unreachable_demand_is_reported() {
    let net = netequil::Network::new(
        3,
        vec![netequil::Link::road(0, 1, 1.0, 1.0)],
        vec![0, 1, 2],
        None,
    )
    .unwrap();
    let od = OdMatrix::from_vec(3, vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let engine = PathEngine::default();
    let err = engine
        .assign(&net, &[net.free_flow_times()], &[od])
        .unwrap_err();
    assert!(matches!(
        err,
        netequil::Error::InfeasibleOd {
            origin: 0,
            destination: 2
        }
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn flow_time_equals_demand_cost(seed in 0u64..10_000, scale in 0.1..10.0f64) {
        let inst = random_graph(seed, 30);
        let net = &inst.network;
        let times: Vec<f64> = net.free_flow_times().iter().map(|t| t * scale).collect();
        let engine = PathEngine::default();
        let loading = engine.assign(net, &[times.clone()], &inst.demand).unwrap();
        let ft: f64 = loading.flows[0].iter().zip(&times).map(|(f, t)| f * t).sum();
        let dt = netequil::assignment::demand_cost(&inst.demand, &loading.costs);
        prop_assert!((ft - dt).abs() <= TOL * dt.max(1.0));
    }

    #[test]
    fn costs_satisfy_triangle_inequality(seed in 0u64..10_000) {
        let inst = random_graph(seed, 20);
        let net = &inst.network;
        let times = net.free_flow_times();
        let trees = trees(&inst, &times);
        for tree in &trees {
            for (e, l) in net.links().iter().enumerate() {
                if l.tail == tree.origin || net.is_through(l.tail) {
                    prop_assert!(tree.dist[l.head] <= tree.dist[l.tail] + times[e] + TOL);
                }
            }
        }
    }
}
