//! Entropy-regularized trip distribution solved on its dual with the
//! tautological constraint `Σd = 1`.
//!
//! Potentials `(μ^l, μ^w)` define `d_ij ∝ exp(μ^l_i + μ^w_j − γ T_ij)`; the
//! dual objective is
//! `φ = (1/γ)[ln Σ_ij exp(μ^l_i + μ^w_j − γT_ij) − ⟨μ^l, l⟩ − ⟨μ^w, w⟩]`
//! with marginals normalized to unit mass.

mod agm;
mod nested;
mod rounding;
mod sinkhorn;

pub use agm::{agm_nonpd_solve, mixed_agm_solve};
pub use nested::{nested_distribution_solve, DemandSpec, NestedSolution};
pub use rounding::{certificates, round_to_polytope, Certificates};
pub use sinkhorn::sinkhorn_solve;

use crate::error::{shape, Error, Result};
use crate::trace::SolveTrace;

/// Dual potentials over the rows and columns of a [`DistributionProblem`].
#[derive(Debug, Clone, PartialEq)]
pub struct DualPotentials {
    pub mu_l: Vec<f64>,
    pub mu_w: Vec<f64>,
    pub gamma: f64,
}

impl DualPotentials {
    pub fn zeros(rows: usize, cols: usize, gamma: f64) -> Self {
        Self {
            mu_l: vec![0.0; rows],
            mu_w: vec![0.0; cols],
            gamma,
        }
    }

    /// Multipliers `λ = −μ/γ` in cost units.
    pub fn lambda_l(&self) -> Vec<f64> {
        self.mu_l.iter().map(|m| -m / self.gamma).collect()
    }

    pub fn lambda_w(&self) -> Vec<f64> {
        self.mu_w.iter().map(|m| -m / self.gamma).collect()
    }

    /// Shifts each block so its maximum is zero. Leaves `φ` and `d` unchanged.
    pub fn normalize(&mut self) {
        shift_to_zero_max(&mut self.mu_l);
        shift_to_zero_max(&mut self.mu_w);
    }
}

fn shift_to_zero_max(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m.is_finite() {
        for x in v {
            *x -= m;
        }
    }
}

/// Row-major nonnegative matrix with its target marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct TripMatrix {
    pub rows: usize,
    pub cols: usize,
    pub d: Vec<f64>,
    pub l: Vec<f64>,
    pub w: Vec<f64>,
    pub total: f64,
}

impl TripMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.cols + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        row_sums(&self.d, self.rows, self.cols)
    }

    pub fn col_sums(&self) -> Vec<f64> {
        col_sums(&self.d, self.rows, self.cols)
    }

    /// `‖d1 − l‖₁ + ‖dᵀ1 − w‖₁`.
    pub fn marginal_residual(&self) -> f64 {
        l1_diff(&self.row_sums(), &self.l) + l1_diff(&self.col_sums(), &self.w)
    }
}

pub(crate) fn row_sums(d: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    (0..rows)
        .map(|i| d[i * cols..(i + 1) * cols].iter().sum())
        .collect()
}

pub(crate) fn col_sums(d: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut c = vec![0.0; cols];
    for i in 0..rows {
        for (s, x) in c.iter_mut().zip(&d[i * cols..(i + 1) * cols]) {
            *s += x;
        }
    }
    c
}

pub(crate) fn l1_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// `ln Σ exp(x)` over finite entries; `−∞` when none is finite.
pub fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// A distribution problem with strictly positive marginals normalized to
/// unit mass. Infinite costs forbid a cell.
#[derive(Debug, Clone)]
pub struct DistributionProblem {
    rows: usize,
    cols: usize,
    /// `γ T`, row-major.
    scaled: Vec<f64>,
    costs: Vec<f64>,
    l: Vec<f64>,
    w: Vec<f64>,
    gamma: f64,
    total: f64,
    cost_sup: f64,
}

impl DistributionProblem {
    /// `l` and `w` must be positive with equal sums; they are rescaled to
    /// unit mass and the original total is kept.
    pub fn new(
        rows: usize,
        cols: usize,
        costs: Vec<f64>,
        l: &[f64],
        w: &[f64],
        gamma: f64,
    ) -> Result<Self> {
        if costs.len() != rows * cols || l.len() != rows || w.len() != cols {
            return Err(shape(format!(
                "expected {rows}×{cols} costs with matching marginals"
            )));
        }
        if rows == 0 || cols == 0 {
            return Err(Error::Validation(
                "distribution problem has no rows or columns".into(),
            ));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Validation(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        if l.iter().chain(w).any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::Validation(
                "marginals must be positive and finite".into(),
            ));
        }
        if costs.iter().any(|c| c.is_nan() || *c == f64::NEG_INFINITY) {
            return Err(Error::Domain("costs must not be NaN or −∞".into()));
        }
        let (sl, sw): (f64, f64) = (l.iter().sum(), w.iter().sum());
        if (sl - sw).abs() > 1e-9 * sl.max(sw) {
            return Err(Error::Validation(format!(
                "marginal totals differ: {sl} vs {sw}"
            )));
        }
        for i in 0..rows {
            if costs[i * cols..(i + 1) * cols]
                .iter()
                .all(|c| c.is_infinite())
            {
                return Err(Error::Domain(format!("row {} has no finite cost", i + 1)));
            }
        }
        for j in 0..cols {
            if (0..rows).all(|i| costs[i * cols + j].is_infinite()) {
                return Err(Error::Domain(format!(
                    "column {} has no finite cost",
                    j + 1
                )));
            }
        }
        let cost_sup = costs
            .iter()
            .filter(|c| c.is_finite())
            .fold(0.0_f64, |m, c| m.max(c.abs()));
        let scaled = costs.iter().map(|c| gamma * c).collect();
        Ok(Self {
            rows,
            cols,
            scaled,
            costs,
            l: l.iter().map(|x| x / sl).collect(),
            w: w.iter().map(|x| x / sl).collect(),
            gamma,
            total: sl,
            cost_sup,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Mass before normalization.
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    /// Normalized row marginals.
    pub fn l(&self) -> &[f64] {
        &self.l
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    /// `‖T‖_∞` over finite entries.
    pub fn cost_sup(&self) -> f64 {
        self.cost_sup
    }

    fn exponent(&self, p: &DualPotentials, i: usize, j: usize) -> f64 {
        p.mu_l[i] + p.mu_w[j] - self.scaled[i * self.cols + j]
    }

    fn check(&self, p: &DualPotentials) -> Result<()> {
        if p.mu_l.len() != self.rows || p.mu_w.len() != self.cols {
            return Err(shape("potentials do not match problem size"));
        }
        if p.mu_l.iter().chain(&p.mu_w).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("potentials must be finite".into()));
        }
        Ok(())
    }

    fn log_mass(&self, p: &DualPotentials) -> f64 {
        let m = (0..self.rows)
            .flat_map(|i| (0..self.cols).map(move |j| (i, j)))
            .map(|(i, j)| self.exponent(p, i, j))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                s += (self.exponent(p, i, j) - m).exp();
            }
        }
        m + s.ln()
    }

    /// `φ(μ^l, μ^w)`.
    pub fn dual_value(&self, p: &DualPotentials) -> Result<f64> {
        self.check(p)?;
        Ok(self.value_unchecked(p))
    }

    fn value_unchecked(&self, p: &DualPotentials) -> f64 {
        let lin: f64 = dot(&p.mu_l, &self.l) + dot(&p.mu_w, &self.w);
        (self.log_mass(p) - lin) / self.gamma
    }

    /// Normalized coupling `d(μ) / 1ᵀd(μ)1`.
    pub fn coupling(&self, p: &DualPotentials) -> Vec<f64> {
        let z = self.log_mass(p);
        let mut d = Vec::with_capacity(self.rows * self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                d.push((self.exponent(p, i, j) - z).exp());
            }
        }
        d
    }

    /// `(∇_{μ^l} φ, ∇_{μ^w} φ) = (1/γ)(d1 − l, dᵀ1 − w)` with normalized `d`.
    pub fn dual_gradient(&self, p: &DualPotentials) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check(p)?;
        let d = self.coupling(p);
        Ok(self.gradient_from_coupling(&d))
    }

    fn gradient_from_coupling(&self, d: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let g = self.gamma;
        let gl = row_sums(d, self.rows, self.cols)
            .iter()
            .zip(&self.l)
            .map(|(r, l)| (r - l) / g)
            .collect();
        let gw = col_sums(d, self.rows, self.cols)
            .iter()
            .zip(&self.w)
            .map(|(c, w)| (c - w) / g)
            .collect();
        (gl, gw)
    }

    /// Exact minimization over `μ^l` with `μ^w` fixed.
    fn update_rows(&self, p: &mut DualPotentials) {
        for i in 0..self.rows {
            let base = i * self.cols;
            let lse = log_sum_exp((0..self.cols).map(|j| p.mu_w[j] - self.scaled[base + j]));
            p.mu_l[i] = self.l[i].ln() - lse;
        }
    }

    fn update_cols(&self, p: &mut DualPotentials) {
        for j in 0..self.cols {
            let lse =
                log_sum_exp((0..self.rows).map(|i| p.mu_l[i] - self.scaled[i * self.cols + j]));
            p.mu_w[j] = self.w[j].ln() - lse;
        }
    }

    /// `E(d, T) = Σ d T + (1/γ) Σ d ln d` for a normalized `d`; `+∞` if
    /// mass sits on a forbidden cell.
    pub fn entropic_cost(&self, d: &[f64]) -> f64 {
        entropic_cost(&self.costs, self.gamma, d)
    }

    pub(crate) fn trip_matrix(&self, d: Vec<f64>) -> TripMatrix {
        TripMatrix {
            rows: self.rows,
            cols: self.cols,
            d,
            l: self.l.clone(),
            w: self.w.clone(),
            total: 1.0,
        }
    }
}

/// `Σ d T + (1/γ) Σ d ln d` with `0 ln 0 = 0` and `0·∞ = 0`.
pub fn entropic_cost(costs: &[f64], gamma: f64, d: &[f64]) -> f64 {
    let mut s = 0.0;
    for (c, x) in costs.iter().zip(d) {
        if *x > 0.0 {
            s += x * c + x * x.ln() / gamma;
        }
    }
    s
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Free-standing form of [`DistributionProblem::dual_value`].
pub fn dual_value(problem: &DistributionProblem, potentials: &DualPotentials) -> Result<f64> {
    problem.dual_value(potentials)
}

/// Free-standing form of [`DistributionProblem::dual_gradient`].
pub fn dual_gradient(
    problem: &DistributionProblem,
    potentials: &DualPotentials,
) -> Result<(Vec<f64>, Vec<f64>)> {
    problem.dual_gradient(potentials)
}

/// Stopping and stability parameters shared by the distribution solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributionStop {
    /// Stop when `‖d1 − l‖₁ + ‖dᵀ1 − w‖₁` (normalized) falls below this.
    pub marginal_tol: f64,
    /// Stop when the realized gap `E(d̂) + φ` (normalized) falls below this.
    pub gap_tol: Option<f64>,
    pub max_iter: usize,
    /// A rise of `φ` larger than `slack · ε_mach · |φ|` counts as a
    /// monotonicity violation.
    pub monotonicity_slack: f64,
}

impl Default for DistributionStop {
    fn default() -> Self {
        Self {
            marginal_tol: 1e-10,
            gap_tol: None,
            max_iter: 10_000,
            monotonicity_slack: 1e3,
        }
    }
}

impl DistributionStop {
    pub fn new(marginal_tol: f64, max_iter: usize) -> Self {
        Self {
            marginal_tol,
            max_iter,
            ..Default::default()
        }
    }

    fn violated(&self, before: f64, after: f64) -> bool {
        after - before > self.monotonicity_slack * f64::EPSILON * before.abs().max(after.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistributionMethod {
    #[default]
    Sinkhorn,
    AgmNonpd,
    MixedAgm,
}

impl DistributionMethod {
    pub fn all() -> [DistributionMethod; 3] {
        [Self::Sinkhorn, Self::AgmNonpd, Self::MixedAgm]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Sinkhorn => "sinkhorn-taut-shift",
            Self::AgmNonpd => "agm-nonpd",
            Self::MixedAgm => "mixed-agm-nonpd",
        }
    }

    pub fn solve(
        &self,
        problem: &DistributionProblem,
        stop: &DistributionStop,
        warm: Option<&DualPotentials>,
    ) -> Result<DistributionResult> {
        match self {
            Self::Sinkhorn => sinkhorn_solve(problem, stop, warm),
            Self::AgmNonpd => agm_nonpd_solve(problem, stop, warm),
            Self::MixedAgm => mixed_agm_solve(problem, stop, warm),
        }
    }
}

impl std::str::FromStr for DistributionMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::all()
            .into_iter()
            .find(|m| m.name() == s || format!("{m:?}").eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Validation(format!("unknown distribution method {s:?}")))
    }
}

/// Solver output in normalized units (unit total mass).
#[derive(Debug, Clone)]
pub struct DistributionResult {
    pub potentials: DualPotentials,
    /// Coupling `d(μ)` of the returned potentials.
    pub trips: TripMatrix,
    /// `trips` rounded onto the transport polytope.
    pub rounded: TripMatrix,
    /// `φ` at the returned potentials.
    pub dual_value: f64,
    /// `E(d̂) + φ`; a valid duality gap by weak duality.
    pub gap: f64,
    pub certificates: Certificates,
    pub trace: SolveTrace,
    pub iterations: usize,
    pub converged: bool,
    /// Iteration at which MIXED switched to Sinkhorn, if it did.
    pub switched_at: Option<usize>,
}

/// Logged quantities for one iterate.
pub(crate) struct Snapshot {
    pub trips: TripMatrix,
    pub rounded: TripMatrix,
    pub phi: f64,
    pub gap: f64,
    pub residual: f64,
    pub certificates: Certificates,
}

pub(crate) fn snapshot(problem: &DistributionProblem, p: &DualPotentials) -> Result<Snapshot> {
    let phi = problem.value_unchecked(p);
    if !phi.is_finite() {
        return Err(Error::NonFinite("distribution dual value".into()));
    }
    let trips = problem.trip_matrix(problem.coupling(p));
    let residual = trips.marginal_residual();
    let rounded = round_to_polytope(&trips)?;
    let gap = problem.entropic_cost(&rounded.d) + phi;
    let certificates = certificates(
        residual,
        problem.cost_sup(),
        problem.gamma(),
        problem.rows() * problem.cols(),
    );
    Ok(Snapshot {
        trips,
        rounded,
        phi,
        gap,
        residual,
        certificates,
    })
}

pub(crate) fn push_row(
    trace: &mut SolveTrace,
    k: usize,
    clock: &crate::trace::Stopwatch,
    s: &Snapshot,
    weight: f64,
    inner: usize,
) {
    trace.push(crate::trace::TraceRow {
        iteration: k,
        elapsed_s: clock.elapsed(),
        primal: s.rounded_cost(),
        dual: -s.phi,
        gap: s.gap,
        violation: s.residual,
        lipschitz: f64::NAN,
        weight,
        oracle_calls: 0,
        inner_iterations: inner,
        certificate: s.certificates.duality_gap_bound,
    });
}

impl Snapshot {
    fn rounded_cost(&self) -> f64 {
        self.gap - self.phi
    }

    pub(crate) fn done(&self, stop: &DistributionStop) -> bool {
        self.residual <= stop.marginal_tol || stop.gap_tol.is_some_and(|g| self.gap <= g)
    }

    pub(crate) fn finish(
        self,
        potentials: DualPotentials,
        trace: SolveTrace,
        iterations: usize,
        converged: bool,
        switched_at: Option<usize>,
    ) -> DistributionResult {
        DistributionResult {
            potentials,
            trips: self.trips,
            rounded: self.rounded,
            dual_value: self.phi,
            gap: self.gap,
            certificates: self.certificates,
            trace,
            iterations,
            converged,
            switched_at,
        }
    }
}

pub(crate) fn start_potentials(
    problem: &DistributionProblem,
    warm: Option<&DualPotentials>,
) -> Result<DualPotentials> {
    match warm {
        Some(p) => {
            problem.check(p)?;
            Ok(DualPotentials {
                gamma: problem.gamma,
                ..p.clone()
            })
        }
        None => Ok(DualPotentials::zeros(
            problem.rows,
            problem.cols,
            problem.gamma,
        )),
    }
}

/// A problem whose zero-marginal rows and columns were removed, with the
/// index maps needed to restore the full shape.
#[derive(Debug, Clone)]
pub struct ReducedProblem {
    pub problem: DistributionProblem,
    pub row_map: Vec<usize>,
    pub col_map: Vec<usize>,
    pub full_rows: usize,
    pub full_cols: usize,
}

impl ReducedProblem {
    /// Builds the problem on the rows and columns with positive marginals.
    /// Returns `None` when the total mass is zero.
    pub fn new(
        rows: usize,
        cols: usize,
        costs: &[f64],
        l: &[f64],
        w: &[f64],
        gamma: f64,
    ) -> Result<Option<Self>> {
        if costs.len() != rows * cols || l.len() != rows || w.len() != cols {
            return Err(shape(format!(
                "expected {rows}×{cols} costs with matching marginals"
            )));
        }
        if l.iter().chain(w).any(|x| !(*x >= 0.0 && x.is_finite())) {
            return Err(Error::Validation(
                "marginals must be nonnegative and finite".into(),
            ));
        }
        let row_map: Vec<usize> = (0..rows).filter(|&i| l[i] > 0.0).collect();
        let col_map: Vec<usize> = (0..cols).filter(|&j| w[j] > 0.0).collect();
        if row_map.is_empty() && col_map.is_empty() {
            return Ok(None);
        }
        if row_map.is_empty() || col_map.is_empty() {
            return Err(Error::Validation(
                "one marginal is zero while the other is not".into(),
            ));
        }
        let mut sub = Vec::with_capacity(row_map.len() * col_map.len());
        for &i in &row_map {
            for &j in &col_map {
                sub.push(costs[i * cols + j]);
            }
        }
        let lr: Vec<f64> = row_map.iter().map(|&i| l[i]).collect();
        let wr: Vec<f64> = col_map.iter().map(|&j| w[j]).collect();
        let problem = DistributionProblem::new(row_map.len(), col_map.len(), sub, &lr, &wr, gamma)?;
        Ok(Some(Self {
            problem,
            row_map,
            col_map,
            full_rows: rows,
            full_cols: cols,
        }))
    }

    /// Restores a reduced row-major matrix to full shape with zeros.
    pub fn expand(&self, d: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.full_rows * self.full_cols];
        let c = self.col_map.len();
        for (a, &i) in self.row_map.iter().enumerate() {
            for (b, &j) in self.col_map.iter().enumerate() {
                full[i * self.full_cols + j] = d[a * c + b];
            }
        }
        full
    }

    /// Restricts full-shape potentials to the kept rows and columns.
    pub fn restrict(&self, p: &DualPotentials) -> Option<DualPotentials> {
        if p.mu_l.len() != self.full_rows || p.mu_w.len() != self.full_cols {
            return None;
        }
        Some(DualPotentials {
            mu_l: self.row_map.iter().map(|&i| p.mu_l[i]).collect(),
            mu_w: self.col_map.iter().map(|&j| p.mu_w[j]).collect(),
            gamma: p.gamma,
        })
    }

    /// Full-shape potentials; removed entries are zero.
    pub fn widen(&self, p: &DualPotentials) -> DualPotentials {
        let mut mu_l = vec![0.0; self.full_rows];
        let mut mu_w = vec![0.0; self.full_cols];
        for (a, &i) in self.row_map.iter().enumerate() {
            mu_l[i] = p.mu_l[a];
        }
        for (b, &j) in self.col_map.iter().enumerate() {
            mu_w[j] = p.mu_w[b];
        }
        DualPotentials {
            mu_l,
            mu_w,
            gamma: p.gamma,
        }
    }
}
