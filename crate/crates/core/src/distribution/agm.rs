use crate::error::Result;
use crate::trace::{SolveTrace, Stopwatch};

use super::{
    dot, push_row, sinkhorn, snapshot, start_potentials, DistributionProblem, DistributionResult,
    DistributionStop, DualPotentials,
};

const LINE_SEARCH_ITERS: usize = 200;
const BLOCKS: usize = 2;

/// Accelerated alternating minimization: extrapolate by exact line search
/// between the block-descent point `η` and the momentum point `ζ`, take one
/// exact block step along the block with the larger gradient, and move `ζ`
/// along the gradient with the step fixed by the achieved decrease. The
/// primal iterate is the coupling of the extrapolated point.
///
/// Stops with `converged = false` on a monotonicity violation.
pub fn agm_nonpd_solve(
    problem: &DistributionProblem,
    stop: &DistributionStop,
    warm: Option<&DualPotentials>,
) -> Result<DistributionResult> {
    run(problem, stop, warm, 1, false)
}

/// AGM with up to one exact step per block per iteration; switches for good
/// to Sinkhorn from the last accepted point once the dual value rises.
pub fn mixed_agm_solve(
    problem: &DistributionProblem,
    stop: &DistributionStop,
    warm: Option<&DualPotentials>,
) -> Result<DistributionResult> {
    run(problem, stop, warm, BLOCKS, true)
}

fn split(p: &DistributionProblem, v: &[f64]) -> DualPotentials {
    DualPotentials {
        mu_l: v[..p.rows()].to_vec(),
        mu_w: v[p.rows()..].to_vec(),
        gamma: p.gamma(),
    }
}

fn join(p: &DualPotentials) -> Vec<f64> {
    p.mu_l.iter().chain(&p.mu_w).copied().collect()
}

/// Minimizer over `[0, 1]` of the convex `φ(at(β))`, located as the root of
/// its derivative by safeguarded false position. Working with the slope
/// rather than values resolves `β` to rounding level.
fn exact_step(
    problem: &DistributionProblem,
    at: &impl Fn(f64) -> DualPotentials,
    dir: &[f64],
) -> f64 {
    let slope = |b: f64| {
        let g = problem.gradient_from_coupling(&problem.coupling(&at(b)));
        dot(
            &join(&DualPotentials {
                mu_l: g.0,
                mu_w: g.1,
                gamma: problem.gamma(),
            }),
            dir,
        )
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    let (mut s_lo, mut s_hi) = (slope(lo), slope(hi));
    if s_lo >= 0.0 {
        return lo;
    }
    if s_hi <= 0.0 {
        return hi;
    }
    let mut side = 0i8;
    for _ in 0..LINE_SEARCH_ITERS {
        let mut b = (lo * s_hi - hi * s_lo) / (s_hi - s_lo);
        if !(b > lo && b < hi) {
            b = 0.5 * (lo + hi);
        }
        let s = slope(b);
        if s == 0.0 {
            return b;
        }
        if s < 0.0 {
            lo = b;
            s_lo = s;
            if side == -1 {
                s_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = b;
            s_hi = s;
            if side == 1 {
                s_lo *= 0.5;
            }
            side = 1;
        }
        if hi - lo <= 4.0 * f64::EPSILON {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn block_norms(g: &(Vec<f64>, Vec<f64>)) -> [f64; 2] {
    [dot(&g.0, &g.0), dot(&g.1, &g.1)]
}

fn block_step(problem: &DistributionProblem, p: &mut DualPotentials, block: usize) {
    if block == 0 {
        problem.update_rows(p);
    } else {
        problem.update_cols(p);
    }
    p.normalize();
}

fn run(
    problem: &DistributionProblem,
    stop: &DistributionStop,
    warm: Option<&DualPotentials>,
    inner_steps: usize,
    mixed: bool,
) -> Result<DistributionResult> {
    let name = if mixed {
        "mixed-agm-nonpd"
    } else {
        "agm-nonpd"
    };
    let mut trace = SolveTrace::new(name);
    let clock = Stopwatch::start();
    let mut eta = start_potentials(problem, warm)?;
    eta.normalize();
    let mut zeta = join(&eta);
    let mut phi_eta = problem.dual_value(&eta)?;
    let mut weight = 0.0;
    let mut last = None;

    for k in 0..stop.max_iter {
        let eta_v = join(&eta);
        let dir: Vec<f64> = zeta.iter().zip(&eta_v).map(|(z, e)| z - e).collect();
        let mut kappa = if dir.iter().all(|d| *d == 0.0) {
            eta.clone()
        } else {
            let at = |b: f64| {
                split(
                    problem,
                    &eta_v
                        .iter()
                        .zip(&dir)
                        .map(|(e, d)| e + b * d)
                        .collect::<Vec<_>>(),
                )
            };
            at(exact_step(problem, &at, &dir))
        };
        kappa.normalize();

        let s = snapshot(problem, &kappa)?;
        let grad = problem.gradient_from_coupling(&s.trips.d);
        let norms = block_norms(&grad);
        let grad_sq = norms[0] + norms[1];
        if s.done(stop) || grad_sq == 0.0 {
            push_row(&mut trace, k, &clock, &s, weight, 0);
            return Ok(s.finish(kappa, trace, k + 1, true, None));
        }

        let first_block = usize::from(norms[1] > norms[0]);
        let guard = norms[first_block];
        let mut next = kappa.clone();
        let mut block = first_block;
        let mut seen = grad_sq;
        let mut steps = 0;
        while steps < inner_steps && guard <= seen {
            block_step(problem, &mut next, block);
            steps += 1;
            if steps < inner_steps {
                let g = problem.gradient_from_coupling(&problem.coupling(&next));
                let n = block_norms(&g);
                seen += n[0] + n[1];
                block = usize::from(n[1] > n[0]);
            }
        }
        let phi_next = problem.value_unchecked(&next);
        push_row(&mut trace, k, &clock, &s, weight, steps);

        if stop.violated(s.phi, phi_next) || stop.violated(phi_eta, phi_next) {
            trace.event(
                k,
                format!(
                    "dual value rose to {phi_next:e} from {:e}",
                    s.phi.min(phi_eta)
                ),
            );
            if mixed {
                trace.event(
                    k,
                    "switching to Sinkhorn iterations from the last accepted point",
                );
                return sinkhorn::run(problem, stop, eta, k + 1, trace, Some(k));
            }
            return Ok(s.finish(kappa, trace, k + 1, false, None));
        }

        let decrease = (s.phi - phi_next).max(0.0);
        let a =
            (decrease + (decrease * decrease + 2.0 * grad_sq * weight * decrease).sqrt()) / grad_sq;
        weight += a;
        let g = join(&DualPotentials {
            mu_l: grad.0,
            mu_w: grad.1,
            gamma: problem.gamma(),
        });
        for (z, gi) in zeta.iter_mut().zip(&g) {
            *z -= a * gi;
        }
        eta = next;
        phi_eta = phi_next;
        last = Some((s, kappa));
    }
    let (s, kappa) = match last {
        Some(x) => x,
        None => (snapshot(problem, &eta)?, eta),
    };
    trace.event(
        stop.max_iter,
        "iteration limit reached before the marginal tolerance",
    );
    Ok(s.finish(kappa, trace, stop.max_iter, false, None))
}
