//! Acceptance suite: one PASS / FAIL / SKIP line per criterion.
//!
//! Run with `cargo test --release -p netequil --test acceptance`.

mod common;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;

use netequil::assignment::{
    frank_wolfe_solve, primal_objective, ustm_assign, AssignmentResult, StepRule, UstmAssignConfig,
};
use netequil::combined::{
    evans_solve, four_stage_solve, ustm_combined_solve, CombinedConfig, CombinedProblem,
    EvansConfig, FourStageConfig,
};
use netequil::distribution::{DistributionMethod, DistributionProblem, DistributionStop};
use netequil::paths::{aggregate_flows, dijkstra, mode_link_times};
use netequil::synthetic::{
    four_zone_city, four_zone_city_halved, grid, random_assignment, random_distribution,
    random_graph, rng, two_parallel_links, AssignmentInstance,
};
use netequil::tntp::{parse_tntp, TntpOptions};
use netequil::trace::StopRule;
use netequil::{BprParams, CostModel, Link, LinkCost, PathEngine};

const BPR_TOL: f64 = 1e-10;
const PATH_TOL: f64 = 1e-9;
const ASSIGN_REL_GAP: f64 = 1e-4;
const USTM_REL_EPS: f64 = 1e-3;
const POTENTIAL_AGREEMENT: f64 = 1e-3;
const STEP_RULE_GAP: f64 = 1e-3;
const STEP_RULE_MAX_ITER: usize = 20_000;
const DIST_AGREEMENT: f64 = 1e-7;
const DIST_MARGINAL_TOL: f64 = 1e-12;
const AGM_SLOPE: f64 = -1.5;
const AGM_FLOOR: f64 = 1e-13;
const NESTED_REL_TOL: f64 = 1e-6;
const COMBINED_REL_GAP: f64 = 1e-3;
const FOUR_STAGE_FACTOR: f64 = 3.0;
const SD_VIOLATION_FRACTION: f64 = 1e-2;
const SPEEDUP_RATIO: f64 = 0.6;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn bpr_functions() -> Outcome {
    let clock = Instant::now();
    let p = BprParams::default();
    let exact =
        netequil::network::bpr_time(&p, &Link::road(0, 1, 1.0, 10.0), 10.0).unwrap() == 1.15;
    let mut r = rng(11);
    let (mut worst_quad, mut worst_fy) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let c = LinkCost {
            free_flow_time: r.gen_range(0.05..5.0),
            capacity: r.gen_range(1.0..500.0),
            rho: r.gen_range(0.01..1.0),
            mu: r.gen_range(0.1..1.0),
        };
        let f = r.gen_range(0.0..3.0) * c.capacity;
        let q = common::simpson(
            |u| c.time(f * u.powi(4)) * 4.0 * f * u.powi(3),
            0.0,
            1.0,
            4000,
        );
        let v = c.integral(f);
        worst_quad = worst_quad.max((v - q).abs() / v.abs().max(1e-300));
        let tau = c.time(f);
        let rhs = f * tau;
        worst_fy =
            worst_fy.max((c.integral(f) + c.conjugate(tau) - rhs).abs() / rhs.abs().max(1e-300));
    }
    let secs = clock.elapsed().as_secs_f64();
    verdict(
        exact && worst_quad <= BPR_TOL && worst_fy <= BPR_TOL && secs < 1.0,
        format!("τ(f̄)=1.15t̄ exact: {exact}; quadrature err {worst_quad:.1e}; Fenchel-Young err {worst_fy:.1e}; {secs:.3}s"),
    )
}

fn shortest_paths() -> Outcome {
    let mut failures = Vec::new();
    let mut pairs = 0;
    for seed in 0..20 {
        let inst = random_graph(seed, 50);
        let net = &inst.network;
        let times = net.free_flow_times();
        let fw = common::floyd_warshall(net, &times);
        let trees: Vec<_> = net
            .zones()
            .iter()
            .map(|&o| dijkstra(net, &times, o).unwrap())
            .collect();
        for (tree, &o) in trees.iter().zip(net.zones()) {
            for &d in net.zones() {
                let (a, b) = (tree.dist[d], fw[o][d]);
                if !(a == b || (a - b).abs() <= PATH_TOL) {
                    failures.push(format!("graph {seed}: {o}->{d} {a} vs {b}"));
                }
                if d == o || b.is_infinite() {
                    continue;
                }
                pairs += 1;
                let all = common::enumerate_paths(net, &times, o, d, b, PATH_TOL);
                let path = tree.path_to(net, d).unwrap();
                if !all.contains(&path) {
                    failures.push(format!(
                        "graph {seed}: tree path {o}->{d} not among shortest paths"
                    ));
                }
            }
        }
        let od = &inst.demand[0];
        let flows = aggregate_flows(net, &trees, od).unwrap();
        let mut explicit = vec![0.0; net.num_links()];
        for (i, tree) in trees.iter().enumerate() {
            for (j, &dest) in net.zones().iter().enumerate() {
                if i != j && od.get(i, j) > 0.0 {
                    for e in tree.path_to(net, dest).unwrap() {
                        explicit[e] += od.get(i, j);
                    }
                }
            }
        }
        if flows
            .iter()
            .zip(&explicit)
            .any(|(a, b)| (a - b).abs() > PATH_TOL * b.max(1.0))
        {
            failures.push(format!("graph {seed}: flows differ from path incidence"));
        }
        let ft: f64 = flows.iter().zip(&times).map(|(f, t)| f * t).sum();
        let nz = od.zones();
        let dt: f64 = (0..nz * nz)
            .filter(|k| od.get(k / nz, k % nz) > 0.0)
            .map(|k| od.get(k / nz, k % nz) * trees[k / nz].dist[net.zones()[k % nz]])
            .sum();
        if (ft - dt).abs() > PATH_TOL * dt.max(1.0) {
            failures.push(format!("graph {seed}: Σft {ft} vs Σd·T {dt}"));
        }
    }
    verdict(
        failures.is_empty(),
        format!("20 graphs, {pairs} connected pairs; {}", summary(&failures)),
    )
}

fn summary(failures: &[String]) -> String {
    match failures.first() {
        None => "no mismatches".into(),
        Some(first) => format!("{} mismatches, first: {first}", failures.len()),
    }
}

fn assignment_instances() -> Vec<AssignmentInstance> {
    let mut v = vec![two_parallel_links(10.0, 20.0)];
    v.extend((0..5).map(|s| random_assignment(s, 20)));
    v
}

fn frank_wolfe(inst: &AssignmentInstance, engine: &PathEngine) -> AssignmentResult {
    frank_wolfe_solve(
        &inst.network,
        &BprParams::default(),
        &inst.demand,
        StepRule::brent(),
        StopRule::new(5000, ASSIGN_REL_GAP),
        engine,
    )
    .unwrap()
}

fn ustm(inst: &AssignmentInstance, potential: f64, engine: &PathEngine) -> AssignmentResult {
    let cfg = UstmAssignConfig {
        restart: true,
        ..UstmAssignConfig::new(USTM_REL_EPS * potential, 20_000)
    };
    ustm_assign(
        &inst.network,
        CostModel::beckmann(),
        &inst.demand,
        &cfg,
        engine,
    )
    .unwrap()
}

fn assignment_agreement() -> Outcome {
    let engine = PathEngine::default();
    let mut ok = true;
    let mut lines = Vec::new();
    for inst in assignment_instances() {
        let fw = frank_wolfe(&inst, &engine);
        let last = fw.trace.last().unwrap();
        let fw_gap = last.gap / last.primal.abs();
        let us = ustm(&inst, last.primal, &engine);
        let p_us = primal_objective(&inst.network, &us.model, &us.flows).unwrap();
        let diff = relative(p_us, last.primal);
        ok &= fw_gap <= ASSIGN_REL_GAP && diff <= POTENTIAL_AGREEMENT;
        lines.push(format!("{} fw-gap {fw_gap:.1e} ΔP {diff:.1e}", inst.name));
    }
    verdict(ok, lines.join("; "))
}

fn iterations_to_gap(
    inst: &AssignmentInstance,
    rule: StepRule,
    engine: &PathEngine,
) -> Option<usize> {
    let res = frank_wolfe_solve(
        &inst.network,
        &BprParams::default(),
        &inst.demand,
        rule,
        StopRule::new(STEP_RULE_MAX_ITER, STEP_RULE_GAP),
        engine,
    )
    .unwrap();
    res.trace
        .rows
        .iter()
        .find(|r| r.gap <= STEP_RULE_GAP * r.primal.abs())
        .map(|r| r.iteration)
}

fn step_rules() -> Outcome {
    let engine = PathEngine::default();
    let instances: Vec<_> = (0..5).map(|s| random_assignment(s, 20)).collect();
    let rules = StepRule::all();
    let counts: Vec<Vec<Option<usize>>> = instances
        .iter()
        .map(|inst| {
            rules
                .iter()
                .map(|r| iterations_to_gap(inst, *r, &engine))
                .collect()
        })
        .collect();
    let all_converge = counts.iter().flatten().all(Option::is_some);
    let mut table = Vec::new();
    for (inst, row) in instances.iter().zip(&counts) {
        let cells: Vec<String> = rules
            .iter()
            .zip(row)
            .map(|(r, c)| format!("{}={}", r.name(), c.map_or("-".into(), |c| c.to_string())))
            .collect();
        table.push(format!("{} [{}]", inst.name, cells.join(" ")));
    }
    // Rules 2..5 are the line searches; rule 0 is the fixed 2/(k+2) step.
    let mut wins = Vec::new();
    let mut dominate = all_converge;
    for (k, rule) in rules.iter().enumerate().skip(2) {
        let n = counts
            .iter()
            .filter(|row| matches!((row[k], row[0]), (Some(a), Some(b)) if a <= b))
            .count();
        dominate &= n >= 4;
        wins.push(format!("{} ≤ fixed on {n}/5", rule.name()));
    }
    verdict(
        dominate,
        format!("{}; {}", wins.join(", "), table.join("; ")),
    )
}

fn distribution() -> Outcome {
    let stop = DistributionStop::new(DIST_MARGINAL_TOL, 20_000);
    let slope_stop = DistributionStop::new(0.0, 200);
    let (mut spread, mut worst_marginal) = (0.0f64, 0.0f64);
    let mut cert_violations = 0;
    let mut slopes = Vec::new();
    for seed in 0..20 {
        let inst = random_distribution(seed, 10);
        for gamma in [0.1, 1.0, 10.0, 100.0] {
            let p = DistributionProblem::new(
                inst.rows,
                inst.cols,
                inst.costs.clone(),
                &inst.productions,
                &inst.attractions,
                gamma,
            )
            .unwrap();
            let mut values = Vec::new();
            for m in DistributionMethod::all() {
                let res = m.solve(&p, &stop, None).unwrap();
                values.push(res.dual_value);
                let d = &res.rounded;
                let residual = d
                    .row_sums()
                    .iter()
                    .zip(p.l())
                    .chain(d.col_sums().iter().zip(p.w()))
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                worst_marginal = worst_marginal.max(residual);
                cert_violations += res
                    .trace
                    .rows
                    .iter()
                    .filter(|r| r.gap > r.certificate * (1.0 + 1e-9) + 1e-15)
                    .count();
            }
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            spread = spread.max(hi - lo);
            let agm = DistributionMethod::AgmNonpd
                .solve(&p, &slope_stop, None)
                .unwrap();
            // φ is minimized; the trace logs −φ.
            let pts: Vec<(f64, f64)> = agm
                .trace
                .rows
                .iter()
                .filter(|r| r.iteration >= 10 && r.iteration <= 200)
                .map(|r| (r.iteration as f64, -r.dual - lo))
                .filter(|(_, e)| *e > AGM_FLOOR)
                .map(|(k, e)| (k.ln(), e.ln()))
                .collect();
            if pts.len() >= 5 {
                slopes.push(fit_slope(&pts));
            }
        }
    }
    let worst_slope = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    verdict(
        spread <= DIST_AGREEMENT && worst_marginal <= DIST_MARGINAL_TOL && cert_violations == 0 && worst_slope <= AGM_SLOPE,
        format!(
            "dual spread {spread:.1e}; marginal residual {worst_marginal:.1e}; gap>certificate rows {cert_violations}; \
             AGM log-log slope ≤ {worst_slope:.2} on {} measurable runs",
            slopes.len()
        ),
    )
}

fn fit_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn nested_oracle() -> Outcome {
    let engine = PathEngine::default();
    let mut worst = 0.0f64;
    let mut bracket_failures = 0;
    let mut cert_failures = 0;
    let mut pairs = 0;
    for seed in 0..10 {
        let (net, params, demand) = common::three_zone_city(seed);
        let problem =
            CombinedProblem::new(&net, CostModel::beckmann(), &params, &demand, &engine).unwrap();
        let mut r = rng(4000 + seed);
        for _ in 0..3 {
            let t = common::random_times(&net, &mut r, 2.0);
            let ours = problem.evaluate(&t, 1e-10).unwrap().objective;
            let reference = common::reference_min_e(&net, &params, &demand, &t);
            worst = worst.max(relative(ours, reference));
        }
        for _ in 0..10 {
            let delta = [1e-1, 1e-3, 1e-6][r.gen_range(0..3)];
            let t = common::random_times(&net, &mut r, 2.0);
            let t2 = common::random_times(&net, &mut r, 2.0);
            let at_t = problem.evaluate(&t, delta).unwrap();
            let at_t2 = problem.evaluate(&t2, delta).unwrap();
            if at_t.certificate > delta * (1.0 + 1e-9) || at_t2.certificate > delta * (1.0 + 1e-9) {
                cert_failures += 1;
            }
            let phi_true = -common::reference_min_e(&net, &params, &demand, &t2);
            let tol = 1e-8 * phi_true.abs().max(1.0);
            let flows: Vec<f64> = (0..net.num_links())
                .map(|e| at_t.flows.iter().map(|f| f[e]).sum())
                .collect();
            let lin: f64 = flows
                .iter()
                .zip(t2.iter().zip(&t))
                .map(|(f, (b, a))| -f * (b - a))
                .sum();
            let upper = -at_t2.objective + at_t2.certificate + tol >= phi_true;
            let lower = phi_true + tol >= -at_t.objective + lin;
            if !(upper && lower) {
                bracket_failures += 1;
            }
            pairs += 1;
        }
    }
    verdict(
        worst <= NESTED_REL_TOL && bracket_failures == 0 && cert_failures == 0,
        format!(
            "objective vs dense oracle {worst:.1e}; {pairs} pairs, bracket failures {bracket_failures}, certificate > δ {cert_failures}"
        ),
    )
}

fn combined_city() -> Outcome {
    let city = four_zone_city();
    let engine = PathEngine::default();
    let p = CombinedProblem::new(
        &city.network,
        CostModel::beckmann(),
        &city.params,
        &city.demand,
        &engine,
    )
    .unwrap();
    let evans = evans_solve(&p, &EvansConfig::new(2000)).unwrap();
    let us =
        ustm_combined_solve(&p, &CombinedConfig::new(5e-8 * evans.primal.abs(), 20_000)).unwrap();
    let fs = four_stage_solve(&p, &FourStageConfig::new(50)).unwrap();
    let fs_best = fs
        .trace
        .rows
        .iter()
        .map(|r| r.gap / r.primal.abs())
        .fold(f64::INFINITY, f64::min);
    let (g_e, g_u) = (evans.relative_gap(), us.relative_gap());
    let agree = relative(us.primal, evans.primal);
    let ratio = fs_best / g_e.max(g_u);
    verdict(
        g_e <= COMBINED_REL_GAP && g_u <= COMBINED_REL_GAP && agree <= COMBINED_REL_GAP && ratio >= FOUR_STAGE_FACTOR,
        format!(
            "Evans gap {g_e:.1e}, USTM gap {g_u:.1e}, P3 agreement {agree:.1e}; four-stage best {fs_best:.1e} ({ratio:.1}× worse)"
        ),
    )
}

fn stable_dynamics_city() -> Outcome {
    let city = four_zone_city_halved();
    let engine = PathEngine::default();
    let p = CombinedProblem::new(
        &city.network,
        CostModel::StableDynamics,
        &city.params,
        &city.demand,
        &engine,
    )
    .unwrap();
    let cfg = CombinedConfig {
        violation_tol: Some(0.0),
        ..CombinedConfig::new(0.1, 2000)
    };
    let res = ustm_combined_solve(&p, &cfg).unwrap();
    let cap_norm = city
        .network
        .links()
        .iter()
        .filter(|l| !l.is_uncapacitated())
        .map(|l| l.capacity.powi(2))
        .sum::<f64>()
        .sqrt();
    let checkpoints: Vec<f64> = res
        .trace
        .rows
        .iter()
        .filter(|r| r.iteration >= 100 && r.iteration % 100 == 0)
        .map(|r| r.violation)
        .collect();
    let monotone = checkpoints.windows(2).all(|w| w[1] <= w[0]);
    let finite = res
        .trace
        .rows
        .iter()
        .all(|r| r.gap.is_finite() && r.violation.is_finite());
    let last = res.trace.last().unwrap().violation;
    verdict(
        monotone && finite && last < SD_VIOLATION_FRACTION * cap_norm && checkpoints.len() >= 2,
        format!(
            "violation at {} checkpoints nonincreasing: {monotone}; final {last:.3} vs {:.3}; gap and violation logged: {finite}",
            checkpoints.len(),
            SD_VIOLATION_FRACTION * cap_norm
        ),
    )
}

fn berlin_dir() -> Option<PathBuf> {
    let candidates = [
        std::env::var_os("NETEQUIL_BERLIN_DIR").map(PathBuf::from),
        Some(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/berlin-center")),
    ];
    candidates
        .into_iter()
        .flatten()
        .find(|d| d.join("berlin-center_net.tntp").is_file())
}

fn berlin_center() -> Outcome {
    let Some(dir) = berlin_dir() else {
        return Outcome::Skip("berlin-center data not present (set NETEQUIL_BERLIN_DIR)".into());
    };
    let read = |f: &str| std::fs::read_to_string(dir.join(f)).unwrap_or_default();
    let (net, od) = match parse_tntp(
        &read("berlin-center_net.tntp"),
        &read("berlin-center_trips.tntp"),
        TntpOptions::default(),
    ) {
        Ok(x) => x,
        Err(e) => return Outcome::Fail(format!("parse error: {e}")),
    };
    let counts = (net.num_zones(), net.num_nodes(), net.num_links());
    if counts != (865, 12981, 28376) {
        return Outcome::Fail(format!("zones/nodes/links {counts:?}"));
    }
    let engine = PathEngine::default();
    let demand = vec![od];
    let fw = frank_wolfe_solve(
        &net,
        &BprParams::default(),
        &demand,
        StepRule::brent(),
        StopRule::iterations(100),
        &engine,
    )
    .unwrap();
    let gaps: Vec<f64> = fw
        .trace
        .rows
        .iter()
        .map(|r| r.gap / r.primal.abs())
        .collect();
    let half = gaps.len() / 2;
    let first = gaps[..half].iter().copied().fold(f64::INFINITY, f64::min);
    let second = gaps[half..].iter().copied().fold(f64::INFINITY, f64::min);
    let potential = fw.trace.last().unwrap().primal;
    let cfg = UstmAssignConfig::new(1e-2 * potential, 300);
    let us = ustm_assign(&net, CostModel::beckmann(), &demand, &cfg, &engine).unwrap();
    let ug: Vec<f64> = us.trace.rows.iter().map(|r| r.gap.abs()).collect();
    let oscillates = ug.windows(2).any(|w| w[1] > w[0]);
    verdict(
        second < first && oscillates,
        format!("FW best gap {first:.1e} → {second:.1e}; USTM gap nonmonotone: {oscillates}"),
    )
}

fn threads() -> Outcome {
    let one = PathEngine::new(Some(1)).unwrap();
    let four = PathEngine::new(Some(4)).unwrap();
    let mut identical = true;
    for inst in assignment_instances() {
        let a = frank_wolfe(&inst, &one);
        let b = frank_wolfe(&inst, &four);
        let potential = a.trace.last().unwrap().primal;
        let c = ustm(&inst, potential, &one);
        let d = ustm(&inst, potential, &four);
        let same = |x: &AssignmentResult, y: &AssignmentResult| {
            x.flows == y.flows
                && x.times == y.times
                && x.trace.rows.len() == y.trace.rows.len()
                && x.trace
                    .rows
                    .iter()
                    .zip(&y.trace.rows)
                    .all(|(r, s)| r.gap.to_bits() == s.gap.to_bits())
        };
        identical &= same(&a, &b) && same(&c, &d);
    }
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let inst = grid(30, 0);
    let mode_times = mode_link_times(&inst.network, &inst.network.free_flow_times());
    let time = |engine: &PathEngine| {
        engine.costs(&inst.network, &mode_times).unwrap();
        let clock = Instant::now();
        for _ in 0..3 {
            engine.costs(&inst.network, &mode_times).unwrap();
        }
        clock.elapsed().as_secs_f64()
    };
    let ratio = time(&four) / time(&one);
    let detail = format!("bit-identical across 1/4 threads: {identical}; sweep time ratio 4:1 = {ratio:.2} with {cores} cores");
    if !identical {
        Outcome::Fail(detail)
    } else if cores < 4 {
        Outcome::Skip(format!("{detail}; speedup needs ≥4 cores"))
    } else {
        verdict(ratio <= SPEEDUP_RATIO, detail)
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("bpr functions", bpr_functions),
        ("shortest paths and loading", shortest_paths),
        ("Frank-Wolfe and USTM agree", assignment_agreement),
        ("line-search step rules", step_rules),
        ("trip distribution", distribution),
        ("nested inexact oracle", nested_oracle),
        ("combined model on the city", combined_city),
        ("stable dynamics on the city", stable_dynamics_city),
        ("berlin-center", berlin_center),
        ("thread determinism and scaling", threads),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let clock = Instant::now();
        let outcome = run();
        let secs = clock.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("criterion {:>2} {tag} {name} ({secs:.2}s): {detail}", k + 1);
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
