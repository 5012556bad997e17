//! Universal method of similar triangles for composite problems
//! `min_{t ∈ dom h} Φ(t) + h(t)` with an inexact first-order oracle for `Φ`
//! and a prox operator for `h`, Euclidean prox-structure.

use crate::error::{Error, Result};

/// Value and gradient surrogate of `Φ` at a point, plus whatever side
/// products the caller wants averaged (flows, trip tables).
#[derive(Debug, Clone)]
pub struct OracleEval<A> {
    pub value: f64,
    pub grad: Vec<f64>,
    pub artifacts: A,
}

pub trait CompositeObjective {
    type Artifacts;

    fn dim(&self) -> usize;

    /// `(Φ̃(t), ∇̃Φ(t))` accurate to `delta` in the sense
    /// `Φ̃(t') + δ ≥ Φ(t') ≥ Φ̃(t) + ⟨∇̃Φ(t), t' − t⟩`.
    fn oracle(&self, t: &[f64], delta: f64) -> Result<OracleEval<Self::Artifacts>>;

    fn h(&self, t: &[f64]) -> f64;

    /// `argmin_{t ∈ dom h} ½‖t − t0‖² + ⟨acc, t⟩ + weight·h(t)`.
    fn prox(&self, acc: &[f64], weight: f64, t0: &[f64]) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UstmConfig {
    pub eps: f64,
    /// Initial Lipschitz guess; derived from the gradient at `t0` if `None`.
    pub l0: Option<f64>,
}

impl UstmConfig {
    pub fn new(eps: f64) -> Self {
        Self { eps, l0: None }
    }
}

/// Method state after `k` outer iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct DualIterate {
    pub k: usize,
    pub t: Vec<f64>,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    /// `A_k = Σ α_i`.
    pub weight: f64,
    pub lipschitz: f64,
    /// `Σ α_i ∇̃Φ(y^i)`.
    pub accumulated_linear: Vec<f64>,
}

/// One accepted outer step.
#[derive(Debug, Clone)]
pub struct UstmStep<A> {
    pub iteration: usize,
    pub alpha: f64,
    pub weight: f64,
    pub lipschitz: f64,
    /// Inner accuracy requested from the oracle.
    pub delta: f64,
    /// Oracle output at `y^{k+1}`; its gradient entered the model.
    pub at_y: OracleEval<A>,
    /// Oracle output at the new iterate `t^{k+1}`.
    pub at_t: OracleEval<A>,
    /// Backtracking attempts (1 when the first guess was accepted).
    pub attempts: usize,
}

const L_MAX: f64 = 1e30;

pub struct Ustm<'p, P: CompositeObjective> {
    problem: &'p P,
    t0: Vec<f64>,
    eps: f64,
    state: DualIterate,
    oracle_calls: usize,
}

fn check_eval<A>(e: &OracleEval<A>, at: &str) -> Result<()> {
    if !e.value.is_finite() || e.grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "oracle returned a non-finite value at {at}"
        )));
    }
    Ok(())
}

impl<'p, P: CompositeObjective> Ustm<'p, P> {
    pub fn new(problem: &'p P, t0: Vec<f64>, config: UstmConfig) -> Result<Self> {
        if t0.len() != problem.dim() {
            return Err(Error::ShapeMismatch(
                "starting point has wrong dimension".into(),
            ));
        }
        if !(config.eps > 0.0) {
            return Err(Error::Validation(format!(
                "eps must be positive, got {}",
                config.eps
            )));
        }
        let mut oracle_calls = 0;
        let l0 = match config.l0 {
            Some(l) if l > 0.0 => l,
            Some(l) => return Err(Error::Validation(format!("L0 must be positive, got {l}"))),
            None => {
                let g0 = problem.oracle(&t0, config.eps)?;
                check_eval(&g0, "t0")?;
                oracle_calls += 1;
                let norm_sq: f64 = g0.grad.iter().map(|g| g * g).sum();
                (1e-6 * norm_sq / config.eps).max(f64::EPSILON)
            }
        };
        let dim = t0.len();
        let state = DualIterate {
            k: 0,
            t: t0.clone(),
            u: t0.clone(),
            y: t0.clone(),
            weight: 0.0,
            lipschitz: l0,
            accumulated_linear: vec![0.0; dim],
        };
        Ok(Self {
            problem,
            t0,
            eps: config.eps,
            state,
            oracle_calls,
        })
    }

    pub fn state(&self) -> &DualIterate {
        &self.state
    }

    pub fn oracle_calls(&self) -> usize {
        self.oracle_calls
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Performs one outer iteration: halve `L`, then double it until the
    /// inexact descent condition holds.
    pub fn step(&mut self) -> Result<UstmStep<P::Artifacts>> {
        let st = &self.state;
        let mut l = st.lipschitz / 2.0;
        let mut attempts = 0;
        loop {
            attempts += 1;
            let alpha = 1.0 / (2.0 * l) + (1.0 / (4.0 * l * l) + st.weight / l).sqrt();
            let weight = st.weight + alpha;
            let delta = alpha * self.eps / (4.0 * weight);
            let y: Vec<f64> =
                st.u.iter()
                    .zip(&st.t)
                    .map(|(u, t)| (alpha * u + st.weight * t) / weight)
                    .collect();
            let at_y = self.problem.oracle(&y, delta)?;
            self.oracle_calls += 1;
            check_eval(&at_y, "y")?;
            let acc: Vec<f64> = st
                .accumulated_linear
                .iter()
                .zip(&at_y.grad)
                .map(|(a, g)| a + alpha * g)
                .collect();
            let u = self.problem.prox(&acc, weight, &self.t0);
            let t: Vec<f64> = u
                .iter()
                .zip(&st.t)
                .map(|(u, t)| (alpha * u + st.weight * t) / weight)
                .collect();
            let at_t = self.problem.oracle(&t, delta)?;
            self.oracle_calls += 1;
            check_eval(&at_t, "t")?;

            let mut lin = 0.0;
            let mut dist_sq = 0.0;
            for ((g, ti), yi) in at_y.grad.iter().zip(&t).zip(&y) {
                lin += g * (ti - yi);
                dist_sq += (ti - yi) * (ti - yi);
            }
            let bound = at_y.value + lin + 0.5 * l * dist_sq + alpha / (2.0 * weight) * self.eps;
            if at_t.value <= bound {
                self.state = DualIterate {
                    k: st.k + 1,
                    t,
                    u,
                    y,
                    weight,
                    lipschitz: l,
                    accumulated_linear: acc,
                };
                return Ok(UstmStep {
                    iteration: self.state.k,
                    alpha,
                    weight,
                    lipschitz: l,
                    delta,
                    at_y,
                    at_t,
                    attempts,
                });
            }
            l *= 2.0;
            if !(l <= L_MAX) {
                return Err(Error::LipschitzOverflow(l));
            }
        }
    }
}

/// Runs USTM until `stop` returns true (checked after every step) or
/// `max_iter` steps. Returns the final state and the weighted average
/// `−(1/A) Σ α ∇̃Φ(y)` of gradient surrogates (the recovered primal point).
pub fn ustm_solve<P: CompositeObjective>(
    problem: &P,
    t0: Vec<f64>,
    config: UstmConfig,
    max_iter: usize,
    mut stop: impl FnMut(&UstmStep<P::Artifacts>, &DualIterate) -> bool,
) -> Result<(DualIterate, Vec<f64>)> {
    let mut method = Ustm::new(problem, t0, config)?;
    for _ in 0..max_iter {
        let step = method.step()?;
        if stop(&step, method.state()) {
            break;
        }
    }
    let st = method.state().clone();
    let recovered = if st.weight > 0.0 {
        st.accumulated_linear
            .iter()
            .map(|a| -a / st.weight)
            .collect()
    } else {
        vec![0.0; st.t.len()]
    };
    Ok((st, recovered))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `Φ(t) = ½‖t − c‖²`, `h = 0` on `t ≥ lower`.
    struct Quadratic {
        c: Vec<f64>,
        lower: Vec<f64>,
    }

    impl CompositeObjective for Quadratic {
        type Artifacts = ();
        fn dim(&self) -> usize {
            self.c.len()
        }
        fn oracle(&self, t: &[f64], _delta: f64) -> Result<OracleEval<()>> {
            let grad: Vec<f64> = t.iter().zip(&self.c).map(|(t, c)| t - c).collect();
            let value = 0.5 * grad.iter().map(|g| g * g).sum::<f64>();
            Ok(OracleEval {
                value,
                grad,
                artifacts: (),
            })
        }
        fn h(&self, _t: &[f64]) -> f64 {
            0.0
        }
        fn prox(&self, acc: &[f64], _w: f64, t0: &[f64]) -> Vec<f64> {
            t0.iter()
                .zip(acc)
                .zip(&self.lower)
                .map(|((t0, a), lo)| (t0 - a).max(*lo))
                .collect()
        }
    }

    #[test]
    fn quadratic_converges_to_center() {
        let q = Quadratic {
            c: vec![3.0, 5.0, 1.5],
            lower: vec![1.0; 3],
        };
        let (st, recovered) =
            ustm_solve(&q, vec![1.0; 3], UstmConfig::new(1e-10), 500, |_, _| false).unwrap();
        for (t, c) in st.t.iter().zip(&q.c) {
            assert!((t - c).abs() < 1e-4, "{t} vs {c}");
        }
        // Recovered point averages c − y, which vanishes at the optimum.
        assert!(recovered.iter().all(|r| r.abs() < 0.1), "{recovered:?}");
    }

    #[test]
    fn weight_recursion_holds() {
        let q = Quadratic {
            c: vec![2.0, 4.0],
            lower: vec![0.0; 2],
        };
        let mut m = Ustm::new(&q, vec![0.0; 2], UstmConfig::new(1e-6)).unwrap();
        let mut prev = 0.0;
        for _ in 0..50 {
            let s = m.step().unwrap();
            assert!((s.weight - (prev + s.alpha)).abs() <= 1e-12 * s.weight);
            assert!((s.alpha * s.alpha * s.lipschitz - s.weight).abs() <= 1e-12 * s.weight);
            prev = s.weight;
        }
    }

    struct Broken;
    impl CompositeObjective for Broken {
        type Artifacts = ();
        fn dim(&self) -> usize {
            1
        }
        fn oracle(&self, _t: &[f64], _d: f64) -> Result<OracleEval<()>> {
            Ok(OracleEval {
                value: f64::NAN,
                grad: vec![0.0],
                artifacts: (),
            })
        }
        fn h(&self, _t: &[f64]) -> f64 {
            0.0
        }
        fn prox(&self, _a: &[f64], _w: f64, t0: &[f64]) -> Vec<f64> {
            t0.to_vec()
        }
    }

    #[test]
    fn non_finite_oracle_aborts() {
        let r = Ustm::new(
            &Broken,
            vec![0.0],
            UstmConfig {
                eps: 1.0,
                l0: Some(1.0),
            },
        )
        .and_then(|mut m| m.step());
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    /// Claims a huge curvature it never satisfies.
    struct Liar;
    impl CompositeObjective for Liar {
        type Artifacts = ();
        fn dim(&self) -> usize {
            1
        }
        fn oracle(&self, t: &[f64], _d: f64) -> Result<OracleEval<()>> {
            // Gradient pointing the wrong way makes the descent test fail forever.
            Ok(OracleEval {
                value: if t[0] == 0.0 { 0.0 } else { 1.0 },
                grad: vec![1.0],
                artifacts: (),
            })
        }
        fn h(&self, _t: &[f64]) -> f64 {
            0.0
        }
        fn prox(&self, acc: &[f64], _w: f64, t0: &[f64]) -> Vec<f64> {
            vec![t0[0] - acc[0]]
        }
    }

    #[test]
    fn lipschitz_overflow_aborts() {
        let r = Ustm::new(
            &Liar,
            vec![0.0],
            UstmConfig {
                eps: 1e-300,
                l0: Some(1.0),
            },
        )
        .and_then(|mut m| m.step());
        assert!(matches!(r, Err(Error::LipschitzOverflow(_))));
    }
}
