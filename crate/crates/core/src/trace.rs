//! Per-iteration convergence records shared by every solver.

use std::fmt::Write as _;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceRow {
    pub iteration: usize,
    pub elapsed_s: f64,
    pub primal: f64,
    pub dual: f64,
    /// Primal minus dual; signed for stable dynamics.
    pub gap: f64,
    /// `‖(f − f̄)₊‖₂` or a marginal residual, depending on the solver.
    pub violation: f64,
    /// Lipschitz estimate (USTM) or line-search step (Frank–Wolfe).
    pub lipschitz: f64,
    /// Accumulated weight `A` (USTM), NaN where meaningless.
    pub weight: f64,
    pub oracle_calls: usize,
    /// Inner-solver iterations spent on this step.
    pub inner_iterations: usize,
    /// Free-form certificate column (distribution error bound, etc.).
    pub certificate: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolveTrace {
    pub solver: String,
    pub network: String,
    pub config_hash: String,
    pub rows: Vec<TraceRow>,
    /// Notable events: line-search fallbacks, solver switches, warnings.
    pub events: Vec<(usize, String)>,
    /// `key = value` lines written into the trace header.
    pub notes: Vec<(String, String)>,
}

pub const TRACE_COLUMNS: [&str; 11] = [
    "iter",
    "elapsed_s",
    "primal",
    "dual",
    "gap",
    "violation",
    "L",
    "A",
    "oracle_calls",
    "inner_iters",
    "certificate",
];

impl SolveTrace {
    pub fn new(solver: impl Into<String>) -> Self {
        Self {
            solver: solver.into(),
            ..Default::default()
        }
    }

    pub fn push(&mut self, row: TraceRow) {
        debug_assert!(self
            .rows
            .last()
            .is_none_or(|last| last.iteration < row.iteration));
        self.rows.push(row);
    }

    pub fn event(&mut self, iteration: usize, message: impl Into<String>) {
        let message = message.into();
        log::warn!("{} @{iteration}: {message}", self.solver);
        self.events.push((iteration, message));
    }

    pub fn note(&mut self, key: impl Into<String>, value: impl ToString) {
        self.notes.push((key.into(), value.to_string()));
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// Smallest absolute gap reached.
    pub fn best_gap(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.gap.abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// Comma-separated rendering with a `#`-prefixed metadata header.
    pub fn to_delimited(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# solver = {}", self.solver);
        let _ = writeln!(out, "# network = {}", self.network);
        let _ = writeln!(out, "# config_hash = {}", self.config_hash);
        for (k, v) in &self.notes {
            let _ = writeln!(out, "# {k} = {v}");
        }
        for (it, msg) in &self.events {
            let _ = writeln!(out, "# event @{it}: {msg}");
        }
        out.push_str(&TRACE_COLUMNS.join(","));
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.6},{:e},{:e},{:e},{:e},{:e},{:e},{},{},{:e}",
                r.iteration,
                r.elapsed_s,
                r.primal,
                r.dual,
                r.gap,
                r.violation,
                r.lipschitz,
                r.weight,
                r.oracle_calls,
                r.inner_iterations,
                r.certificate
            );
        }
        out
    }
}

/// Wall clock started at solver entry.
#[derive(Debug, Clone, Copy)]
pub struct Stopwatch(Instant);

impl Stopwatch {
    pub fn start() -> Self {
        Self(Instant::now())
    }

    pub fn elapsed(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Shared iteration limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    pub max_iter: usize,
    /// Relative gap threshold; `0` disables it.
    pub gap_tol: f64,
    /// Wall-clock budget checked between iterations.
    pub max_seconds: Option<f64>,
}

impl StopRule {
    pub fn iterations(max_iter: usize) -> Self {
        Self {
            max_iter,
            gap_tol: 0.0,
            max_seconds: None,
        }
    }

    pub fn new(max_iter: usize, gap_tol: f64) -> Self {
        Self {
            max_iter,
            gap_tol,
            max_seconds: None,
        }
    }

    pub fn out_of_time(&self, clock: &Stopwatch) -> bool {
        self.max_seconds.is_some_and(|s| clock.elapsed() >= s)
    }
}
