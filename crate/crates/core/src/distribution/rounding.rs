use crate::error::{Error, Result};

use super::{col_sums, row_sums, TripMatrix};

/// Rounds `d` onto `{d ≥ 0 : d1 = l, dᵀ1 = w}`: shrink rows that exceed
/// `l`, shrink columns that exceed `w`, then add the rank-one correction
/// `err_l err_wᵀ / ‖err_l‖₁`. Moves at most `‖d1 − l‖₁ + ‖dᵀ1 − w‖₁` in ℓ₁.
pub fn round_to_polytope(d: &TripMatrix) -> Result<TripMatrix> {
    let (rows, cols) = (d.rows, d.cols);
    if d.d.iter().any(|x| !(*x >= 0.0)) {
        return Err(Error::Domain(
            "cannot round a matrix with negative or NaN entries".into(),
        ));
    }
    let mut out = d.d.clone();
    let r = row_sums(&out, rows, cols);
    for i in 0..rows {
        if r[i] > d.l[i] {
            let x = d.l[i] / r[i];
            for v in &mut out[i * cols..(i + 1) * cols] {
                *v *= x;
            }
        }
    }
    let c = col_sums(&out, rows, cols);
    for j in 0..cols {
        if c[j] > d.w[j] {
            let y = d.w[j] / c[j];
            for i in 0..rows {
                out[i * cols + j] *= y;
            }
        }
    }
    let err_l: Vec<f64> = row_sums(&out, rows, cols)
        .iter()
        .zip(&d.l)
        .map(|(s, l)| (l - s).max(0.0))
        .collect();
    let err_w: Vec<f64> = col_sums(&out, rows, cols)
        .iter()
        .zip(&d.w)
        .map(|(s, w)| (w - s).max(0.0))
        .collect();
    let norm: f64 = err_l.iter().sum();
    if norm > 0.0 {
        for i in 0..rows {
            if err_l[i] == 0.0 {
                continue;
            }
            let a = err_l[i] / norm;
            for j in 0..cols {
                out[i * cols + j] += a * err_w[j];
            }
        }
    }
    Ok(TripMatrix {
        d: out,
        ..d.clone()
    })
}

/// Error bounds for a rounded iterate in normalized units.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Certificates {
    /// Marginal residual `δ` of the unrounded iterate.
    pub residual: f64,
    /// `E(d̂) − min E ≤ 2δ‖T‖∞ + (4δ/γ) ln(nm/δ)`.
    pub primal_error_bound: f64,
    /// `E(d̂) + φ ≤ (5/2)δ‖T‖∞ + (4δ/γ) ln(nm/δ)`.
    pub duality_gap_bound: f64,
}

/// Bounds from the marginal residual `δ`, the cost sup-norm, `γ` and the
/// number of cells. Both vanish at `δ = 0`.
pub fn certificates(residual: f64, cost_sup: f64, gamma: f64, cells: usize) -> Certificates {
    if residual <= 0.0 {
        return Certificates::default();
    }
    let entropy = 4.0 * residual / gamma * (cells as f64 / residual).ln();
    Certificates {
        residual,
        primal_error_bound: 2.0 * residual * cost_sup + entropy,
        duality_gap_bound: 2.5 * residual * cost_sup + entropy,
    }
}
