//! Alternating Poisson-regression solver.
//!
//! Outer loop: Gauss-Seidel over modes. Per mode, the scaled block
//! B = (A^(n) + S) Lambda is improved by at most `l_max` multiplicative
//! updates B <- B .* Phi, where Phi = (X_(n) ./ max(B Pi, eps)) Pi^T is
//! evaluated by a sparse kernel that never materializes Pi or the dense
//! model. S is the "scooch" that moves inadmissible near-zeros (zero
//! entries whose partial derivative is negative) into the interior.
//! Each update is the exact minimizer of a separable majorization of the
//! subproblem objective, so the traced objective never increases.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CpAprError, Result};
use crate::objective::{kkt_residual, kl_objective, KktReport};
use crate::tensor::{KruskalModel, SparseCountTensor};

/// Solver knobs. Defaults follow the usual settings: 200 outer
/// iterations, 10 inner iterations, tau = 1e-4, kappa = 1e-2,
/// kappa_tol = 1e-10, epsilon = 1e-10.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub rank: usize,
    /// Outer iteration cap k_max.
    pub k_max: usize,
    /// Inner (multiplicative update) cap l_max per outer iteration.
    pub l_max: usize,
    /// KKT tolerance tau; also the inner stopping tolerance.
    pub tau: f64,
    /// Scooch amount kappa (0 disables the inadmissible-zero fix).
    pub kappa: f64,
    /// Near-zero detection threshold kappa_tol.
    pub kappa_tol: f64,
    /// Minimum divisor epsilon guarding the elementwise division.
    pub epsilon: f64,
    /// Seed for the default random initialization.
    pub seed: u64,
}

impl SolverConfig {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            k_max: 200,
            l_max: 10,
            tau: 1e-4,
            kappa: 1e-2,
            kappa_tol: 1e-10,
            epsilon: 1e-10,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(CpAprError::Domain("rank must be at least 1".into()));
        }
        if self.k_max == 0 || self.l_max == 0 {
            return Err(CpAprError::Domain("iteration caps must be positive".into()));
        }
        if !(self.tau > 0.0) || !(self.kappa_tol > 0.0) {
            return Err(CpAprError::Domain("tau and kappa_tol must be positive".into()));
        }
        if self.kappa < 0.0 || self.epsilon < 0.0 {
            return Err(CpAprError::Domain("kappa and epsilon must be nonnegative".into()));
        }
        Ok(())
    }
}

/// One row of the per-outer-iteration trace.
#[derive(Debug, Clone)]
pub struct OuterRecord {
    /// Outer iteration number, starting at 1.
    pub iter: usize,
    /// KL objective at the end of the sweep.
    pub objective: f64,
    /// Inner iterations used per mode.
    pub inner_iterations: Vec<usize>,
    /// Cumulative multiplicative updates (one per executed B <- B .* Phi).
    pub updates: u64,
    /// Cumulative count of scooched entries.
    pub scooches: u64,
    /// Max over modes of |min(A^(n), E - Phi^(n))| using the Phi matrices
    /// already computed in the sweep.
    pub kkt_residual: f64,
}

#[derive(Debug, Clone)]
pub struct SolverTrace {
    pub records: Vec<OuterRecord>,
    pub converged: bool,
    /// Fresh KKT residual computed at the returned model.
    pub final_report: KktReport,
}

/// Per-mode workspace for the sparse Phi kernel: for each nonzero p it
/// caches w^(p), the elementwise product of the factor rows selected by
/// the nonzero's multi-index over all modes except `mode`. Memory is
/// O((R+1) * nnz); the dense unfolding is never formed.
#[derive(Debug)]
pub struct PhiWorkspace {
    mode: usize,
    rank: usize,
    /// 0-based unfolding row (i.e. i_mode - 1) per nonzero.
    rows: Vec<usize>,
    /// Count value per nonzero.
    vals: Vec<f64>,
    /// w vectors, nnz x R row-major.
    w: Vec<f64>,
}

impl PhiWorkspace {
    /// `mode` is 1-based. The w buffer is allocated but unfilled; call
    /// [`PhiWorkspace::fill`] whenever the off-mode factors change.
    pub fn new(data: &SparseCountTensor, rank: usize, mode: usize) -> Self {
        let p = data.nnz();
        let rows = data.entries().iter().map(|(idx, _)| idx[mode - 1] - 1).collect();
        let vals = data.entries().iter().map(|&(_, v)| v as f64).collect();
        Self { mode, rank, rows, vals, w: vec![0.0; p * rank] }
    }

    /// Recomputes the w vectors from the current factor matrices. The
    /// entry ordering matches `data.entries()` passed to `new`.
    pub fn fill_from_entries(&mut self, entries: &[(Vec<usize>, u64)], factors: &[Array2<f64>]) {
        let r = self.rank;
        for (p, (idx, _)) in entries.iter().enumerate() {
            let wp = &mut self.w[p * r..(p + 1) * r];
            wp.fill(1.0);
            for (n, a) in factors.iter().enumerate() {
                if n + 1 == self.mode {
                    continue;
                }
                let row = a.row(idx[n] - 1);
                let row = row.as_slice().expect("factor rows are contiguous");
                for c in 0..r {
                    wp[c] *= row[c];
                }
            }
        }
    }

    pub fn mode(&self) -> usize {
        self.mode
    }

    pub fn nnz(&self) -> usize {
        self.rows.len()
    }

    /// Unfolding row (0-based) of nonzero p.
    pub fn row_of(&self, p: usize) -> usize {
        self.rows[p]
    }

    /// w^(p) as a slice of length R.
    pub fn w_row(&self, p: usize) -> &[f64] {
        &self.w[p * self.rank..(p + 1) * self.rank]
    }

    /// Accumulates Phi(i, r) = sum_{p: row(p) = i} v_hat^(p) w^(p)(r) with
    /// v_hat^(p) = x^(p) / max(<w^(p), B(row, :)>, epsilon) into `phi`.
    /// With epsilon = 0 a zero model value under a positive count is a
    /// singularity error naming the offending entry of `data`.
    pub fn phi_into(
        &self,
        b: &Array2<f64>,
        epsilon: f64,
        data: &SparseCountTensor,
        phi: &mut Array2<f64>,
    ) -> Result<()> {
        let r = self.rank;
        debug_assert_eq!(phi.dim(), (b.nrows(), r));
        phi.fill(0.0);
        let bs = b.as_slice().expect("B is standard layout");
        let ps = phi.as_slice_mut().expect("Phi is standard layout");
        for p in 0..self.rows.len() {
            let row = self.rows[p];
            let wp = &self.w[p * r..(p + 1) * r];
            let brow = &bs[row * r..(row + 1) * r];
            let mut dot = 0.0;
            for c in 0..r {
                dot += wp[c] * brow[c];
            }
            let denom = dot.max(epsilon);
            if denom <= 0.0 {
                return Err(CpAprError::Singularity {
                    index: data.entries()[p].0.clone(),
                });
            }
            let coef = self.vals[p] / denom;
            let prow = &mut ps[row * r..(row + 1) * r];
            for c in 0..r {
                prow[c] += coef * wp[c];
            }
        }
        Ok(())
    }
}

/// Sparse evaluation of Phi^(n) at B = A^(n) Lambda; agrees with the
/// dense reference path [`crate::objective::compute_phi`] to 1e-12 while
/// using O((R+1) * nnz) workspace memory.
pub fn sparse_phi_kernel(
    data: &SparseCountTensor,
    model: &KruskalModel,
    mode: usize,
    epsilon: f64,
    workspace: &mut PhiWorkspace,
) -> Result<Array2<f64>> {
    if mode < 1 || mode > model.order() {
        return Err(CpAprError::OutOfBounds(format!(
            "mode {mode} for an order-{} model",
            model.order()
        )));
    }
    if model.shape() != data.shape() {
        return Err(CpAprError::DimensionMismatch(format!(
            "model shape {:?} vs tensor shape {:?}",
            model.shape(),
            data.shape()
        )));
    }
    workspace.fill_from_entries(data.entries(), model.factors());
    let a = model.factor(mode);
    let mut b = a.clone();
    for r in 0..model.rank() {
        let lam = model.weights()[r];
        for i in 0..b.nrows() {
            b[[i, r]] *= lam;
        }
    }
    let mut phi = Array2::zeros((a.nrows(), model.rank()));
    workspace.phi_into(&b, epsilon, data, &mut phi)?;
    Ok(phi)
}

/// Scooch matrix S: S(i, r) = kappa exactly where the outer iteration is
/// past the first, A(i, r) < kappa_tol, and the previous visit's
/// Phi(i, r) > 1 (a descent direction pointing out of the boundary).
/// Returns S and the number of entries set.
pub fn scooch(
    a: &Array2<f64>,
    phi_prev: Option<&Array2<f64>>,
    outer_iter: usize,
    config: &SolverConfig,
) -> (Array2<f64>, u64) {
    let mut s = Array2::zeros(a.dim());
    if outer_iter <= 1 || config.kappa == 0.0 {
        return (s, 0);
    }
    let Some(phi) = phi_prev else {
        return (s, 0);
    };
    let mut count = 0;
    for i in 0..a.nrows() {
        for r in 0..a.ncols() {
            if a[[i, r]] < config.kappa_tol && phi[[i, r]] > 1.0 {
                s[[i, r]] = config.kappa;
                count += 1;
            }
        }
    }
    (s, count)
}

/// Result of one inner (subproblem) loop.
#[derive(Debug)]
pub struct SubproblemOutcome {
    /// Final scaled block.
    pub b: Array2<f64>,
    /// Last Phi evaluated (at the pre-update B when l_max was exhausted).
    pub phi: Array2<f64>,
    /// Inner iterations used (Phi evaluations).
    pub inner_used: usize,
    /// Multiplicative updates executed.
    pub updates: u64,
    /// |min(B, E - Phi)| at the last tau-test.
    pub residual: f64,
}

/// Runs at most `l_max` multiplicative updates on B, stopping early when
/// |min(B, E - Phi)| < tau. The tau-test runs on the freshly computed Phi
/// before each update, so a block already at its subproblem fixed point
/// returns with zero updates.
pub fn solve_subproblem(
    mut b: Array2<f64>,
    data: &SparseCountTensor,
    workspace: &PhiWorkspace,
    config: &SolverConfig,
) -> Result<SubproblemOutcome> {
    let mut phi = Array2::zeros(b.dim());
    let mut updates = 0;
    let mut inner_used = 0;
    let mut residual = f64::INFINITY;
    for _ in 0..config.l_max {
        workspace.phi_into(&b, config.epsilon, data, &mut phi)?;
        inner_used += 1;
        residual = max_abs_min(&b, &phi);
        if residual < config.tau {
            break;
        }
        b *= &phi;
        updates += 1;
    }
    Ok(SubproblemOutcome { b, phi, inner_used, updates, residual })
}

/// max_{i,r} |min(B(i,r), 1 - Phi(i,r))|
fn max_abs_min(b: &Array2<f64>, phi: &Array2<f64>) -> f64 {
    let mut worst = 0.0f64;
    for (&bv, &pv) in b.iter().zip(phi.iter()) {
        worst = worst.max(bv.min(1.0 - pv).abs());
    }
    worst
}

/// Fits an R-component Kruskal model to sparse count data.
///
/// With no initial guess, factors start from uniform (0, 1] entries
/// (column-normalized) and the weights from a uniform simplex scaled so
/// that e^T lambda equals the total count; the draw is determined by
/// `config.seed`. A supplied initial model must have finite objective.
///
/// Returns the final model (normalized, components sorted by descending
/// weight) and the per-iteration trace. `converged` is true iff some
/// outer sweep finished with every mode passing the tau-test without any
/// multiplicative update; hitting `k_max` is not an error.
pub fn cp_apr(
    data: &SparseCountTensor,
    config: &SolverConfig,
    init: Option<&KruskalModel>,
) -> Result<(KruskalModel, SolverTrace)> {
    config.validate()?;
    if data.nnz() == 0 {
        return Err(CpAprError::Domain("cannot factorize an empty tensor".into()));
    }
    let n_modes = data.order();
    let rank = config.rank;

    let start = match init {
        Some(m) => {
            if m.shape() != data.shape() {
                return Err(CpAprError::DimensionMismatch(format!(
                    "initial model shape {:?} vs tensor shape {:?}",
                    m.shape(),
                    data.shape()
                )));
            }
            if m.rank() != rank {
                return Err(CpAprError::DimensionMismatch(format!(
                    "initial model rank {} vs configured rank {rank}",
                    m.rank()
                )));
            }
            if !kl_objective(m, data)?.is_finite() {
                return Err(CpAprError::Domain(
                    "initial model has infinite objective (zero model value under a positive count)"
                        .into(),
                ));
            }
            m.clone()
        }
        None => random_init(data, config),
    };

    let mut factors: Vec<Array2<f64>> = start.factors().to_vec();
    let mut lambda: Array1<f64> = start.weights().clone();
    let mut phi_cache: Vec<Option<Array2<f64>>> = vec![None; n_modes];
    let mut workspaces: Vec<PhiWorkspace> =
        (1..=n_modes).map(|n| PhiWorkspace::new(data, rank, n)).collect();

    let mut records = Vec::new();
    let mut updates_total = 0u64;
    let mut scooches_total = 0u64;
    let mut converged = false;

    for k in 1..=config.k_max {
        let mut sweep_clean = true;
        let mut inner_iterations = vec![0usize; n_modes];
        let mut sweep_residual = 0.0f64;

        for n in 0..n_modes {
            let (s, scooched) = scooch(&factors[n], phi_cache[n].as_ref(), k, config);
            scooches_total += scooched;

            let mut b = &factors[n] + &s;
            for r in 0..rank {
                let lam = lambda[r];
                for i in 0..b.nrows() {
                    b[[i, r]] *= lam;
                }
            }

            workspaces[n].fill_from_entries(data.entries(), &factors);
            let out = solve_subproblem(b, data, &workspaces[n], config)?;
            if out.updates > 0 {
                sweep_clean = false;
            }
            updates_total += out.updates;
            inner_iterations[n] = out.inner_used;

            // lambda <- e^T B; A^(n) <- B Lambda^{-1} via the zero-column rule
            let (new_a, new_lambda) = normalize_block(&out.b);
            factors[n] = new_a;
            lambda = new_lambda;

            // stationarity violation of this mode from the Phi already in hand
            let mut worst = 0.0f64;
            for (&av, &pv) in factors[n].iter().zip(out.phi.iter()) {
                worst = worst.max(av.min(1.0 - pv).abs());
            }
            sweep_residual = sweep_residual.max(worst);
            phi_cache[n] = Some(out.phi);
        }

        let objective = objective_from_state(&lambda, &factors, data);
        records.push(OuterRecord {
            iter: k,
            objective,
            inner_iterations,
            updates: updates_total,
            scooches: scooches_total,
            kkt_residual: sweep_residual,
        });

        if sweep_clean {
            converged = true;
            break;
        }
    }

    let model =
        KruskalModel::new(lambda, factors).map(|m| m.sorted_by_weight())?;
    let final_report = kkt_residual(&model, data)?;
    Ok((model, SolverTrace { records, converged, final_report }))
}

/// Entries below this are flushed to exact zero during normalization.
/// Multiplicative updates can only shrink such an entry further (until a
/// scooch intervenes), and letting it decay into the subnormal range
/// makes every subsequent arithmetic pass dramatically slower.
const UNDERFLOW_FLOOR: f64 = 1e-100;

/// Column sums into new weights; zero columns get weight zero and a
/// uniform column.
fn normalize_block(b: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let (rows, rank) = b.dim();
    let mut lambda = Array1::zeros(rank);
    let mut a = b.clone();
    for r in 0..rank {
        let sum: f64 = (0..rows).map(|i| b[[i, r]]).sum();
        if sum > 0.0 {
            lambda[r] = sum;
            for i in 0..rows {
                let v = b[[i, r]] / sum;
                a[[i, r]] = if v < UNDERFLOW_FLOOR { 0.0 } else { v };
            }
        } else {
            lambda[r] = 0.0;
            let u = 1.0 / rows as f64;
            for i in 0..rows {
                a[[i, r]] = u;
            }
        }
    }
    (a, lambda)
}

/// e^T lambda - sum_p x_p log m_p without constructing a KruskalModel.
fn objective_from_state(
    lambda: &Array1<f64>,
    factors: &[Array2<f64>],
    data: &SparseCountTensor,
) -> f64 {
    let rank = lambda.len();
    let mut f = lambda.sum();
    for &(ref idx, x) in data.entries() {
        let mut m = 0.0;
        for r in 0..rank {
            let mut t = lambda[r];
            for (n, a) in factors.iter().enumerate() {
                t *= a[[idx[n] - 1, r]];
            }
            m += t;
        }
        if m <= 0.0 {
            return f64::INFINITY;
        }
        f -= x as f64 * m.ln();
    }
    f
}

fn random_init(data: &SparseCountTensor, config: &SolverConfig) -> KruskalModel {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let rank = config.rank;
    let mut factors = Vec::with_capacity(data.order());
    for &extent in data.shape() {
        let mut a = Array2::from_shape_fn((extent, rank), |_| 1.0 - rng.gen::<f64>());
        for r in 0..rank {
            let sum: f64 = a.column(r).sum();
            for i in 0..extent {
                a[[i, r]] /= sum;
            }
        }
        factors.push(a);
    }
    let raw: Vec<f64> = (0..rank).map(|_| 1.0 - rng.gen::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let scale = data.total_count() as f64;
    let lambda = Array1::from_iter(raw.iter().map(|&u| scale * u / total));
    KruskalModel::from_parts_unchecked(lambda, factors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::compute_phi;
    use crate::tensor::normalize;
    use ndarray::arr2;
    use rand::Rng;

    fn random_model(shape: &[usize], rank: usize, seed: u64) -> KruskalModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = Array1::from_shape_fn(rank, |_| rng.gen::<f64>() + 0.1);
        let factors: Vec<Array2<f64>> = shape
            .iter()
            .map(|&e| Array2::from_shape_fn((e, rank), |_| rng.gen::<f64>() + 1e-3))
            .collect();
        normalize(&weights, &factors).unwrap()
    }

    fn random_tensor(shape: &[usize], nnz: usize, seed: u64) -> SparseCountTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = (0..nnz)
            .map(|_| {
                let idx: Vec<usize> = shape.iter().map(|&e| rng.gen_range(1..=e)).collect();
                (idx, rng.gen_range(1..10u64))
            })
            .collect();
        SparseCountTensor::new(shape.to_vec(), entries).unwrap()
    }

    #[test]
    fn sparse_kernel_matches_dense_path() {
        let shape = [10usize, 8, 6];
        for seed in 0..5 {
            let model = random_model(&shape, 3, seed);
            let data = random_tensor(&shape, 60, seed + 50);
            for mode in 1..=3 {
                let mut ws = PhiWorkspace::new(&data, 3, mode);
                let sparse = sparse_phi_kernel(&data, &model, mode, 0.0, &mut ws).unwrap();
                let dense = compute_phi(&model, &data, mode, 0.0).unwrap();
                for (s, d) in sparse.iter().zip(dense.iter()) {
                    assert!((s - d).abs() <= 1e-12 * d.abs().max(1.0), "{s} vs {d}");
                }
            }
        }
    }

    #[test]
    fn sparse_kernel_two_way_degenerate_product() {
        let shape = [5usize, 4];
        let model = random_model(&shape, 2, 3);
        let data = random_tensor(&shape, 8, 4);
        let mut ws = PhiWorkspace::new(&data, 2, 1);
        let sparse = sparse_phi_kernel(&data, &model, 1, 0.0, &mut ws).unwrap();
        let dense = compute_phi(&model, &data, 1, 0.0).unwrap();
        for (s, d) in sparse.iter().zip(dense.iter()) {
            assert!((s - d).abs() <= 1e-13);
        }
        // w^(p) is literally a row of the other factor
        for p in 0..data.nnz() {
            let idx = &data.entries()[p].0;
            let expect = model.factors()[1].row(idx[1] - 1);
            for (a, b) in ws.w_row(p).iter().zip(expect.iter()) {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn sparse_kernel_empty_tensor_is_zero() {
        let model = random_model(&[3, 4], 2, 1);
        let data = SparseCountTensor::empty(vec![3, 4]).unwrap();
        let mut ws = PhiWorkspace::new(&data, 2, 2);
        let phi = sparse_phi_kernel(&data, &model, 2, 0.0, &mut ws).unwrap();
        assert!(phi.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scooch_gates() {
        let config = SolverConfig::new(2);
        let a = arr2(&[[0.0, 0.3], [0.7, 0.0]]);
        let phi = arr2(&[[1.5, 0.2], [0.1, 0.9]]);

        // first outer iteration: no scooch regardless
        let (s, c) = scooch(&a, Some(&phi), 1, &config);
        assert_eq!(c, 0);
        assert!(s.iter().all(|&v| v == 0.0));

        // inadmissible zero: A = 0, Phi > 1, k = 2
        let (s, c) = scooch(&a, Some(&phi), 2, &config);
        assert_eq!(c, 1);
        assert_eq!(s[[0, 0]], config.kappa);
        // admissible zero is preserved: Phi(2,2) = 0.9 < 1
        assert_eq!(s[[1, 1]], 0.0);
    }

    #[test]
    fn subproblem_zero_updates_at_fixed_point() {
        // exact fit: Phi = E on the support, tau-test passes immediately
        let model = KruskalModel::new(
            ndarray::arr1(&[16.0]),
            vec![arr2(&[[0.5], [0.5]]), arr2(&[[0.5], [0.5]])],
        )
        .unwrap();
        let entries = (1..=2)
            .flat_map(|i| (1..=2).map(move |j| (vec![i, j], 4u64)))
            .collect();
        let data = SparseCountTensor::new(vec![2, 2], entries).unwrap();
        let mut ws = PhiWorkspace::new(&data, 1, 1);
        ws.fill_from_entries(data.entries(), model.factors());
        let b = arr2(&[[8.0], [8.0]]); // A Lambda
        let config = SolverConfig::new(1);
        let out = solve_subproblem(b, &data, &ws, &config).unwrap();
        assert_eq!(out.updates, 0);
        assert_eq!(out.inner_used, 1);
        assert!(out.residual < config.tau);
    }

    #[test]
    fn single_update_matches_closed_form() {
        // One MM update must equal the separable minimizer
        // B'(i,r) = sum_j alpha_rij x_ij, alpha_rij = b_ir pi_rj / (B Pi)_ij.
        let shape = [4usize, 3, 2];
        let model = random_model(&shape, 2, 9);
        let data = random_tensor(&shape, 10, 10);
        for mode in 1..=3 {
            let pi = model.build_pi(mode).unwrap();
            let a = model.factor(mode);
            let mut b = a.clone();
            for r in 0..2 {
                for i in 0..a.nrows() {
                    b[[i, r]] *= model.weights()[r];
                }
            }
            let mut ws = PhiWorkspace::new(&data, 2, mode);
            ws.fill_from_entries(data.entries(), model.factors());
            let mut config = SolverConfig::new(2);
            config.l_max = 1;
            config.tau = 1e-300; // force the update
            config.epsilon = 0.0;
            let out = solve_subproblem(b.clone(), &data, &ws, &config).unwrap();
            assert_eq!(out.updates, 1);

            // oracle from the dense unfolding
            let shape_v = data.shape().to_vec();
            let jn: usize = shape_v
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != mode - 1)
                .map(|(_, &e)| e)
                .product();
            let mut x = Array2::<f64>::zeros((shape_v[mode - 1], jn));
            for &(ref idx, v) in data.entries() {
                let m = crate::tensor::matricize_index(idx, &shape_v, mode).unwrap();
                x[[m.row - 1, m.col - 1]] += v as f64;
            }
            for i in 0..b.nrows() {
                for r in 0..2 {
                    let mut expect = 0.0;
                    for j in 0..jn {
                        if x[[i, j]] > 0.0 {
                            let mut denom = 0.0;
                            for c in 0..2 {
                                denom += b[[i, c]] * pi[[c, j]];
                            }
                            expect += b[[i, r]] * pi[[r, j]] / denom * x[[i, j]];
                        }
                    }
                    assert!(
                        (out.b[[i, r]] - expect).abs() <= 1e-12 * expect.abs().max(1.0),
                        "mode {mode} ({i},{r}): {} vs {expect}",
                        out.b[[i, r]]
                    );
                }
            }
        }
    }

    #[test]
    fn solver_descends_and_is_deterministic() {
        let shape = [6usize, 5, 4];
        let data = random_tensor(&shape, 30, 77);
        let mut config = SolverConfig::new(2);
        config.k_max = 60;
        config.seed = 5;
        let (m1, t1) = cp_apr(&data, &config, None).unwrap();
        let (m2, t2) = cp_apr(&data, &config, None).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(t1.records.len(), t2.records.len());
        let mut prev = f64::INFINITY;
        for rec in &t1.records {
            assert!(
                rec.objective <= prev + 1e-12 * prev.abs().max(1.0),
                "objective rose: {prev} -> {}",
                rec.objective
            );
            prev = rec.objective;
        }
        // feasibility of the result
        for a in m1.factors() {
            for r in 0..m1.rank() {
                let sum: f64 = a.column(r).sum();
                assert!((sum - 1.0).abs() <= 1e-12);
            }
            assert!(a.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn solver_converges_from_a_kkt_point() {
        // run to convergence once, then restart from the answer: the
        // second run must converge on its first outer sweep
        let shape = [6usize, 5, 4];
        let data = random_tensor(&shape, 40, 13);
        let mut config = SolverConfig::new(2);
        config.k_max = 500;
        let (model, trace) = cp_apr(&data, &config, None).unwrap();
        assert!(trace.converged, "first run did not converge");
        let (_, trace2) = cp_apr(&data, &config, Some(&model)).unwrap();
        assert!(trace2.converged);
        assert_eq!(trace2.records.len(), 1);
        assert_eq!(trace2.records[0].updates, 0);
    }

    #[test]
    fn solver_rejects_infeasible_init() {
        let data = SparseCountTensor::new(vec![2, 2], vec![(vec![2, 2], 1)]).unwrap();
        let bad = KruskalModel::new(
            ndarray::arr1(&[1.0]),
            vec![arr2(&[[1.0], [0.0]]), arr2(&[[1.0], [0.0]])],
        )
        .unwrap();
        let config = SolverConfig::new(1);
        assert!(matches!(
            cp_apr(&data, &config, Some(&bad)),
            Err(CpAprError::Domain(_))
        ));
    }

    #[test]
    fn kmax_reached_is_not_an_error() {
        let shape = [6usize, 5];
        let data = random_tensor(&shape, 15, 3);
        let mut config = SolverConfig::new(2);
        config.k_max = 2;
        config.tau = 1e-15;
        let (_, trace) = cp_apr(&data, &config, None).unwrap();
        assert!(!trace.converged);
        assert_eq!(trace.records.len(), 2);
    }

    #[test]
    fn update_counter_tallies_executed_updates() {
        let shape = [6usize, 5];
        let data = random_tensor(&shape, 15, 3);
        let mut config = SolverConfig::new(2);
        config.k_max = 3;
        config.l_max = 1;
        config.tau = 1e-15;
        let (_, trace) = cp_apr(&data, &config, None).unwrap();
        // l_max = 1 and a tau that never passes: one update per mode per sweep
        assert_eq!(trace.records.last().unwrap().updates, 3 * 2);
    }

    #[test]
    fn lambda_scaling_shuffle_preserves_values() {
        // absorbing lambda into any one mode leaves reconstruction unchanged
        let shape = [3usize, 4, 2];
        let model = random_model(&shape, 3, 31);
        for mode in 0..3 {
            let mut factors = model.factors().to_vec();
            for r in 0..model.rank() {
                let lam = model.weights()[r];
                for i in 0..factors[mode].nrows() {
                    factors[mode][[i, r]] *= lam;
                }
            }
            let shuffled = normalize(&Array1::ones(model.rank()), &factors).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            for _ in 0..20 {
                let idx: Vec<usize> = shape.iter().map(|&e| rng.gen_range(1..=e)).collect();
                let a = model.value_at(&idx).unwrap();
                let b = shuffled.value_at(&idx).unwrap();
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }
}
