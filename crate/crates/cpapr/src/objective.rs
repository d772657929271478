//! The KL-divergence objective, the Phi multiplier matrix, gradients, the
//! KKT residual, and the full-row-rank diagnostic.
//!
//! `compute_phi` here is the dense matricized reference path: it
//! materializes Pi^(n) explicitly. The solver's sparse kernel
//! ([`crate::solver::sparse_phi_kernel`]) must agree with it to 1e-12 and
//! is tested against it.

use ndarray::Array2;

use crate::error::{CpAprError, Result};
use crate::solver::{sparse_phi_kernel, PhiWorkspace};
use crate::tensor::{matricize_index, KruskalModel, SparseCountTensor};

/// Generalized KL divergence f(M) = sum_i m_i - sum_{x_i > 0} x_i log m_i,
/// with the convention 0 * log(mu) = 0. The linear term is computed as
/// e^T lambda, exact under column stochasticity, so the cost is
/// O(nnz * R * N). Returns +inf when the model is zero under a positive
/// count.
pub fn kl_objective(model: &KruskalModel, data: &SparseCountTensor) -> Result<f64> {
    check_shapes(model, data)?;
    let linear: f64 = model.weights().sum();
    let mut log_term = 0.0;
    for &(ref idx, x) in data.entries() {
        let m = model.value_at(idx)?;
        if m <= 0.0 {
            return Ok(f64::INFINITY);
        }
        log_term += x as f64 * m.ln();
    }
    Ok(linear - log_term)
}

/// Objective of the mode-n subproblem as a function of the scaled block
/// B = A^(n) Lambda, with the other factors held fixed:
/// f_n(B) = sum(B) - sum_{x > 0} x log((B Pi)_ij). Since the rows of
/// Pi sum to 1, the linear term is just the sum of B's entries. Used as
/// the target for finite-difference gradient checks.
pub fn subproblem_objective(
    b: &Array2<f64>,
    pi: &Array2<f64>,
    data: &SparseCountTensor,
    mode: usize,
) -> Result<f64> {
    let shape = data.shape().to_vec();
    let mut f = b.sum();
    for &(ref idx, x) in data.entries() {
        let m = matricize_index(idx, &shape, mode)?;
        let mut v = 0.0;
        for r in 0..b.ncols() {
            v += b[[m.row - 1, r]] * pi[[r, m.col - 1]];
        }
        if v <= 0.0 {
            return Ok(f64::INFINITY);
        }
        f -= x as f64 * v.ln();
    }
    Ok(f)
}

/// Dense reference path for the multiplier matrix
/// Phi^(n) = (X_(n) ./ max(B Pi, epsilon)) Pi^T with B = A^(n) Lambda.
/// Only columns hosting nonzeros of X_(n) contribute. Materializes
/// Pi^(n), so it is restricted to desk-scale tensors.
pub fn compute_phi(
    model: &KruskalModel,
    data: &SparseCountTensor,
    mode: usize,
    epsilon: f64,
) -> Result<Array2<f64>> {
    check_shapes(model, data)?;
    if mode < 1 || mode > model.order() {
        return Err(CpAprError::OutOfBounds(format!(
            "mode {mode} for an order-{} model",
            model.order()
        )));
    }
    let pi = model.build_pi(mode)?;
    let a = model.factor(mode);
    let r = model.rank();
    let rows = a.nrows();
    let shape = data.shape().to_vec();
    let mut phi = Array2::<f64>::zeros((rows, r));
    for &(ref idx, x) in data.entries() {
        let m = matricize_index(idx, &shape, mode)?;
        let (i, j) = (m.row - 1, m.col - 1);
        let mut v = 0.0;
        for c in 0..r {
            v += a[[i, c]] * model.weights()[c] * pi[[c, j]];
        }
        let denom = v.max(epsilon);
        if denom <= 0.0 {
            return Err(CpAprError::Singularity { index: idx.clone() });
        }
        let coef = x as f64 / denom;
        for c in 0..r {
            phi[[i, c]] += coef * pi[[c, j]];
        }
    }
    Ok(phi)
}

/// Gradient of the subproblem objective with respect to B^(n): E - Phi^(n).
/// Multiply by Lambda for the gradient with respect to A^(n).
pub fn gradient_wrt_block(
    model: &KruskalModel,
    data: &SparseCountTensor,
    mode: usize,
    epsilon: f64,
) -> Result<Array2<f64>> {
    let phi = compute_phi(model, data, mode, epsilon)?;
    Ok(1.0 - phi)
}

/// Per-mode KKT residuals |min(A^(n), E - Phi^(n))| (max-abs over entries).
#[derive(Debug, Clone)]
pub struct KktReport {
    pub per_mode_residual: Vec<f64>,
    pub max_residual: f64,
    /// Components with lambda_r = 0, excluded from the residual (the KKT
    /// characterization assumes lambda > 0).
    pub dead_components: Vec<usize>,
}

/// Evaluates the first-order stationarity violation of the model: for
/// each mode, the max-abs entry of min(A^(n), E - Phi^(n)) over components
/// with positive weight. Zero-weight components are excluded and flagged.
/// A mode where the multiplier matrix is undefined (zero model value under
/// a positive count) reports an infinite residual rather than failing.
pub fn kkt_residual(model: &KruskalModel, data: &SparseCountTensor) -> Result<KktReport> {
    check_shapes(model, data)?;
    let r = model.rank();
    let live: Vec<usize> = (0..r).filter(|&c| model.weights()[c] > 0.0).collect();
    let dead: Vec<usize> = (0..r).filter(|&c| model.weights()[c] == 0.0).collect();
    let mut per_mode = Vec::with_capacity(model.order());
    for mode in 1..=model.order() {
        let mut ws = PhiWorkspace::new(data, r, mode);
        let residual = match sparse_phi_kernel(data, model, mode, 0.0, &mut ws) {
            Ok(phi) => {
                let a = model.factor(mode);
                let mut worst = 0.0f64;
                for &c in &live {
                    for i in 0..a.nrows() {
                        let v = a[[i, c]].min(1.0 - phi[[i, c]]);
                        worst = worst.max(v.abs());
                    }
                }
                worst
            }
            Err(CpAprError::Singularity { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        per_mode.push(residual);
    }
    let max_residual = per_mode.iter().cloned().fold(0.0f64, f64::max);
    Ok(KktReport { per_mode_residual: per_mode, max_residual, dead_components: dead })
}

/// Row-wise full-row-rank diagnostic for one mode.
#[derive(Debug, Clone)]
pub struct ModeAssumption {
    /// Whether the rows of Pi^(n)(:, S_i) are linearly independent, per row i.
    pub independent: Vec<bool>,
    /// Whether |S_i| >= R (necessary condition), per row i.
    pub enough_nonzeros: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct AssumptionReport {
    pub per_mode: Vec<ModeAssumption>,
    pub all_satisfied: bool,
}

/// For each mode n and row i, collects the Pi columns under the nonzeros
/// of row i of X_(n) and reports whether they span rank R, using
/// column-pivoted Gram-Schmidt with the given drop tolerance (default
/// 1e-10 times the largest row norm of the restricted matrix).
pub fn check_assumption(
    model: &KruskalModel,
    data: &SparseCountTensor,
    tolerance: Option<f64>,
) -> Result<AssumptionReport> {
    check_shapes(model, data)?;
    let r = model.rank();
    let shape = model.shape();
    let mut per_mode = Vec::with_capacity(model.order());
    let mut all = true;
    for mode in 1..=model.order() {
        let mut ws = PhiWorkspace::new(data, r, mode);
        ws.fill_from_entries(data.entries(), model.factors());
        let rows = shape[mode - 1];
        // columns of the restricted matrix, grouped by unfolding row
        let mut cols_by_row: Vec<Vec<Vec<f64>>> = vec![Vec::new(); rows];
        for p in 0..data.nnz() {
            cols_by_row[ws.row_of(p)].push(ws.w_row(p).to_vec());
        }
        let mut independent = Vec::with_capacity(rows);
        let mut enough = Vec::with_capacity(rows);
        for cols in &cols_by_row {
            enough.push(cols.len() >= r);
            let rank = numerical_rank(cols, r, tolerance);
            let ok = rank == r;
            independent.push(ok);
            all &= ok && cols.len() >= r;
        }
        per_mode.push(ModeAssumption { independent, enough_nonzeros: enough });
    }
    Ok(AssumptionReport { per_mode, all_satisfied: all })
}

/// Rank of the R x |S| matrix whose columns are given, via column-pivoted
/// modified Gram-Schmidt.
fn numerical_rank(cols: &[Vec<f64>], r: usize, tolerance: Option<f64>) -> usize {
    if cols.is_empty() {
        return 0;
    }
    let tol = tolerance.unwrap_or_else(|| {
        // largest row norm of the restricted matrix
        let mut worst = 0.0f64;
        for i in 0..r {
            let norm: f64 = cols.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt();
            worst = worst.max(norm);
        }
        1e-10 * worst
    });
    let mut work: Vec<Vec<f64>> = cols.to_vec();
    let mut rank = 0;
    while rank < r {
        // pivot: remaining column with the largest norm
        let (best, best_norm) = work
            .iter()
            .enumerate()
            .map(|(k, c)| (k, c.iter().map(|v| v * v).sum::<f64>().sqrt()))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap_or((0, 0.0));
        if best_norm <= tol {
            break;
        }
        let q: Vec<f64> = work.swap_remove(best).iter().map(|v| v / best_norm).collect();
        for c in work.iter_mut() {
            let dot: f64 = q.iter().zip(c.iter()).map(|(a, b)| a * b).sum();
            for (ci, qi) in c.iter_mut().zip(&q) {
                *ci -= dot * qi;
            }
        }
        rank += 1;
        if work.is_empty() {
            break;
        }
    }
    rank
}

fn check_shapes(model: &KruskalModel, data: &SparseCountTensor) -> Result<()> {
    if model.shape() != data.shape() {
        return Err(CpAprError::DimensionMismatch(format!(
            "model shape {:?} vs tensor shape {:?}",
            model.shape(),
            data.shape()
        )));
    }
    Ok(())
}
