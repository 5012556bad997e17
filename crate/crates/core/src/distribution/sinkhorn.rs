use crate::error::Result;
use crate::trace::{SolveTrace, Stopwatch};

use super::{
    push_row, snapshot, start_potentials, DistributionProblem, DistributionResult,
    DistributionStop, DualPotentials,
};

/// Alternating exact minimization of `φ`: even iterations update the row
/// potentials, odd ones the column potentials, each followed by a shift
/// that puts both block maxima at zero.
pub fn sinkhorn_solve(
    problem: &DistributionProblem,
    stop: &DistributionStop,
    warm: Option<&DualPotentials>,
) -> Result<DistributionResult> {
    let p = start_potentials(problem, warm)?;
    run(
        problem,
        stop,
        p,
        0,
        SolveTrace::new("sinkhorn-taut-shift"),
        None,
    )
}

/// Sinkhorn from given potentials, continuing an existing trace at
/// iteration `first`.
pub(crate) fn run(
    problem: &DistributionProblem,
    stop: &DistributionStop,
    mut p: DualPotentials,
    first: usize,
    mut trace: SolveTrace,
    switched_at: Option<usize>,
) -> Result<DistributionResult> {
    let clock = Stopwatch::start();
    let mut phi = problem.dual_value(&p)?;
    let mut last = None;
    for k in first..first.max(stop.max_iter) {
        if k % 2 == 0 {
            problem.update_rows(&mut p);
        } else {
            problem.update_cols(&mut p);
        }
        p.normalize();
        let s = snapshot(problem, &p)?;
        if stop.violated(phi, s.phi) {
            trace.event(k, format!("dual value rose from {phi:e} to {:e}", s.phi));
        }
        phi = s.phi;
        push_row(&mut trace, k, &clock, &s, f64::NAN, 1);
        if s.done(stop) {
            return Ok(s.finish(p, trace, k + 1, true, switched_at));
        }
        last = Some(s);
    }
    let s = match last {
        Some(s) => s,
        None => snapshot(problem, &p)?,
    };
    trace.event(
        stop.max_iter,
        "iteration limit reached before the marginal tolerance",
    );
    Ok(s.finish(p, trace, stop.max_iter, false, switched_at))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell_converges_immediately() {
        let p = DistributionProblem::new(1, 1, vec![3.0], &[5.0], &[5.0], 1.0).unwrap();
        let r = sinkhorn_solve(&p, &DistributionStop::default(), None).unwrap();
        assert_eq!(r.trips.d, vec![1.0]);
        assert_eq!(r.iterations, 1);
        assert!(r.converged);
    }

    #[test]
    fn constant_costs_give_product_coupling() {
        let l = [0.2, 0.5, 0.3];
        let w = [0.1, 0.6, 0.3];
        let p = DistributionProblem::new(3, 3, vec![2.0; 9], &l, &w, 4.0).unwrap();
        let r = sinkhorn_solve(&p, &DistributionStop::new(1e-12, 10), None).unwrap();
        assert!(r.iterations <= 2);
        for i in 0..3 {
            for j in 0..3 {
                assert!((r.trips.get(i, j) - l[i] * w[j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn dual_value_is_monotone() {
        let costs: Vec<f64> = (0..16).map(|k| ((k * 7) % 5) as f64 + 0.5).collect();
        let p = DistributionProblem::new(
            4,
            4,
            costs,
            &[1.0, 2.0, 3.0, 4.0],
            &[4.0, 3.0, 2.0, 1.0],
            3.0,
        )
        .unwrap();
        let r = sinkhorn_solve(&p, &DistributionStop::new(1e-12, 500), None).unwrap();
        assert!(r.converged);
        for w in r.trace.rows.windows(2) {
            assert!(w[1].dual >= w[0].dual - 1e-13);
        }
        assert!(r.trace.events.is_empty());
    }
}
