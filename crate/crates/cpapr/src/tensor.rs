//! Sparse coordinate count tensors, Kruskal models, and the multilinear
//! primitives (matricization index map, Khatri-Rao products) the solver
//! builds on.
//!
//! Multi-indices and modes are 1-based in every public API, matching the
//! text file formats. All types are immutable value objects after
//! construction.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{CpAprError, Result};

/// Tolerance on column sums of factor matrices (1-norm normalization).
pub const COLUMN_SUM_TOL: f64 = 1e-12;

/// N-way tensor of positive integer counts in coordinate format.
///
/// Entries are kept sorted lexicographically by multi-index; duplicate
/// coordinates passed to the constructor are merged by summation and
/// zero values are dropped, so explicit zeros are never stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseCountTensor {
    shape: Vec<usize>,
    entries: Vec<(Vec<usize>, u64)>,
}

impl SparseCountTensor {
    pub fn new(shape: Vec<usize>, entries: Vec<(Vec<usize>, u64)>) -> Result<Self> {
        if shape.len() < 2 {
            return Err(CpAprError::Domain(format!(
                "tensor order must be at least 2, got {}",
                shape.len()
            )));
        }
        if shape.iter().any(|&e| e == 0) {
            return Err(CpAprError::Domain(format!("zero extent in shape {shape:?}")));
        }
        let mut kept: Vec<(Vec<usize>, u64)> = Vec::with_capacity(entries.len());
        for (idx, val) in entries {
            if idx.len() != shape.len() {
                return Err(CpAprError::DimensionMismatch(format!(
                    "multi-index {idx:?} has {} entries for an order-{} tensor",
                    idx.len(),
                    shape.len()
                )));
            }
            for (k, (&i, &extent)) in idx.iter().zip(&shape).enumerate() {
                if i < 1 || i > extent {
                    return Err(CpAprError::OutOfBounds(format!(
                        "index {i} at position {} of {idx:?} outside extent {extent}",
                        k + 1
                    )));
                }
            }
            if val > 0 {
                kept.push((idx, val));
            }
        }
        kept.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        // merge duplicate coordinates by summation
        let mut merged: Vec<(Vec<usize>, u64)> = Vec::with_capacity(kept.len());
        for (idx, val) in kept {
            match merged.last_mut() {
                Some((last, acc)) if *last == idx => *acc += val,
                _ => merged.push((idx, val)),
            }
        }
        Ok(Self { shape, entries: merged })
    }

    /// Tensor with no stored entries.
    pub fn empty(shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, Vec::new())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Number of modes N.
    pub fn order(&self) -> usize {
        self.shape.len()
    }

    /// Entries as (1-based multi-index, count), sorted lexicographically.
    pub fn entries(&self) -> &[(Vec<usize>, u64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Sum of all stored counts.
    pub fn total_count(&self) -> u64 {
        self.entries.iter().map(|(_, v)| v).sum()
    }
}

/// Position of a tensor entry in a mode-n unfolding, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MatricizedIndex {
    pub row: usize,
    pub col: usize,
}

/// Maps a multi-index to its (row, col) position in the mode-`mode`
/// unfolding: row = i_n and col = 1 + sum_{k != n} (i_k - 1) * prod of the
/// extents of the earlier non-n modes, so mode 1 varies fastest.
///
/// `mode` is 1-based. The map is a bijection between multi-indices and
/// (row, col) pairs with 1 <= col <= prod_{m != n} I_m.
pub fn matricize_index(
    multi_index: &[usize],
    shape: &[usize],
    mode: usize,
) -> Result<MatricizedIndex> {
    if mode < 1 || mode > shape.len() {
        return Err(CpAprError::OutOfBounds(format!(
            "mode {mode} for an order-{} tensor",
            shape.len()
        )));
    }
    if multi_index.len() != shape.len() {
        return Err(CpAprError::DimensionMismatch(format!(
            "multi-index {multi_index:?} vs shape {shape:?}"
        )));
    }
    let n = mode - 1;
    let mut col = 0usize;
    let mut stride = 1usize;
    for k in 0..shape.len() {
        let i = multi_index[k];
        if i < 1 || i > shape[k] {
            return Err(CpAprError::OutOfBounds(format!(
                "index {i} at mode {} outside extent {}",
                k + 1,
                shape[k]
            )));
        }
        if k == n {
            continue;
        }
        col += (i - 1) * stride;
        stride *= shape[k];
    }
    Ok(MatricizedIndex { row: multi_index[n], col: col + 1 })
}

/// Khatri-Rao product of an ordered list of matrices sharing R columns.
///
/// Column r of the result is the iterated Kronecker product of the r-th
/// columns; the leftmost matrix varies slowest, i.e. for `[A, B]` the
/// output entry is `c[(i1-1)*I2 + i2, r] = a[i1, r] * b[i2, r]` (1-based).
pub fn khatri_rao(matrices: &[ArrayView2<f64>]) -> Result<Array2<f64>> {
    let first = matrices
        .first()
        .ok_or_else(|| CpAprError::Domain("khatri_rao of an empty list".into()))?;
    let r = first.ncols();
    let mut rows = 1usize;
    for m in matrices {
        if m.ncols() != r {
            return Err(CpAprError::DimensionMismatch(format!(
                "khatri_rao factor has {} columns, expected {r}",
                m.ncols()
            )));
        }
        rows *= m.nrows();
    }
    let mut out = Array2::<f64>::ones((rows, r));
    // strides over output rows: last matrix varies fastest
    let mut stride = 1usize;
    let mut strides = vec![0usize; matrices.len()];
    for (k, m) in matrices.iter().enumerate().rev() {
        strides[k] = stride;
        stride *= m.nrows();
    }
    for (k, m) in matrices.iter().enumerate() {
        let st = strides[k];
        let nk = m.nrows();
        for row in 0..rows {
            let ik = (row / st) % nk;
            for c in 0..r {
                out[[row, c]] *= m[[ik, c]];
            }
        }
    }
    Ok(out)
}

/// Kruskal model: weights `lambda` plus N column-stochastic factor
/// matrices of sizes I_n x R.
#[derive(Debug, Clone, PartialEq)]
pub struct KruskalModel {
    weights: Array1<f64>,
    factors: Vec<Array2<f64>>,
}

impl KruskalModel {
    /// Validates nonnegativity and 1-norm column normalization.
    pub fn new(weights: Array1<f64>, factors: Vec<Array2<f64>>) -> Result<Self> {
        let r = weights.len();
        if r == 0 {
            return Err(CpAprError::Domain("model rank must be at least 1".into()));
        }
        if factors.len() < 2 {
            return Err(CpAprError::Domain(format!(
                "model must have at least 2 factor matrices, got {}",
                factors.len()
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(CpAprError::Domain(format!("weights must be finite and >= 0: {weights}")));
        }
        for (n, a) in factors.iter().enumerate() {
            if a.ncols() != r {
                return Err(CpAprError::DimensionMismatch(format!(
                    "factor {} has {} columns, expected rank {r}",
                    n + 1,
                    a.ncols()
                )));
            }
            if a.nrows() == 0 {
                return Err(CpAprError::Domain(format!("factor {} has zero rows", n + 1)));
            }
            for c in 0..r {
                let mut sum = 0.0;
                for i in 0..a.nrows() {
                    let v = a[[i, c]];
                    if !(v >= 0.0) || !v.is_finite() {
                        return Err(CpAprError::Domain(format!(
                            "factor {} entry ({}, {}) = {v} is not a finite nonnegative value",
                            n + 1,
                            i + 1,
                            c + 1
                        )));
                    }
                    sum += v;
                }
                if (sum - 1.0).abs() > COLUMN_SUM_TOL {
                    return Err(CpAprError::Domain(format!(
                        "factor {} column {} sums to {sum}, expected 1",
                        n + 1,
                        c + 1
                    )));
                }
            }
        }
        Ok(Self { weights, factors })
    }

    /// Skips validation; callers must uphold the invariants.
    pub(crate) fn from_parts_unchecked(weights: Array1<f64>, factors: Vec<Array2<f64>>) -> Self {
        Self { weights, factors }
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(|a| a.nrows()).collect()
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn factors(&self) -> &[Array2<f64>] {
        &self.factors
    }

    pub fn factor(&self, mode: usize) -> &Array2<f64> {
        &self.factors[mode - 1]
    }

    /// Model value m_i = sum_r lambda_r * prod_n A^(n)(i_n, r) at a 1-based
    /// multi-index.
    pub fn value_at(&self, multi_index: &[usize]) -> Result<f64> {
        if multi_index.len() != self.factors.len() {
            return Err(CpAprError::DimensionMismatch(format!(
                "multi-index {multi_index:?} for an order-{} model",
                self.factors.len()
            )));
        }
        for (n, (&i, a)) in multi_index.iter().zip(&self.factors).enumerate() {
            if i < 1 || i > a.nrows() {
                return Err(CpAprError::OutOfBounds(format!(
                    "index {i} at mode {} outside extent {}",
                    n + 1,
                    a.nrows()
                )));
            }
        }
        let mut total = 0.0;
        for r in 0..self.rank() {
            let mut term = self.weights[r];
            for (&i, a) in multi_index.iter().zip(&self.factors) {
                term *= a[[i - 1, r]];
            }
            total += term;
        }
        Ok(total)
    }

    /// Pi^(n) = (A^(N) kr ... kr A^(n+1) kr A^(n-1) kr ... kr A^(1))^T,
    /// of size R x J_n. Every row sums to 1 for a valid model. `mode` is
    /// 1-based. Dense; intended for desk-scale tensors and cross-checks.
    pub fn build_pi(&self, mode: usize) -> Result<Array2<f64>> {
        if mode < 1 || mode > self.order() {
            return Err(CpAprError::OutOfBounds(format!(
                "mode {mode} for an order-{} model",
                self.order()
            )));
        }
        let views: Vec<ArrayView2<f64>> = (1..=self.order())
            .rev()
            .filter(|&m| m != mode)
            .map(|m| self.factors[m - 1].view())
            .collect();
        let kr = khatri_rao(&views)?;
        Ok(kr.reversed_axes().as_standard_layout().to_owned())
    }

    /// Components reordered by descending weight (stable); deterministic
    /// output convention for solver results.
    pub fn sorted_by_weight(&self) -> KruskalModel {
        let r = self.rank();
        let mut order: Vec<usize> = (0..r).collect();
        order.sort_by(|&a, &b| {
            self.weights[b]
                .partial_cmp(&self.weights[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let weights = Array1::from_iter(order.iter().map(|&j| self.weights[j]));
        let factors = self
            .factors
            .iter()
            .map(|a| {
                let mut out = Array2::zeros(a.dim());
                for (c, &j) in order.iter().enumerate() {
                    out.column_mut(c).assign(&a.column(j));
                }
                out
            })
            .collect();
        KruskalModel::from_parts_unchecked(weights, factors)
    }

    /// Re-normalizes this model; see [`normalize`].
    pub fn normalized(&self) -> Result<KruskalModel> {
        normalize(&self.weights, &self.factors)
    }
}

/// Moves the 1-norm of every factor column into the weights: each column
/// is scaled to sum 1 and `lambda_r` picks up the product of the column
/// sums. A column summing to zero gets `lambda_r = 0` and is replaced by
/// the uniform vector (each entry 1/I_n). Reconstruction values are
/// unchanged for components with nonzero weight.
pub fn normalize(weights: &Array1<f64>, factors: &[Array2<f64>]) -> Result<KruskalModel> {
    let r = weights.len();
    let mut lambda = weights.clone();
    if lambda.iter().any(|&w| !(w >= 0.0)) {
        return Err(CpAprError::Domain("negative weight in normalize".into()));
    }
    let mut out_factors = Vec::with_capacity(factors.len());
    for (n, a) in factors.iter().enumerate() {
        let rows = a.nrows();
        if a.ncols() != r {
            return Err(CpAprError::DimensionMismatch(format!(
                "factor {} has {} columns, expected {r}",
                n + 1,
                a.ncols()
            )));
        }
        let mut scaled = a.clone();
        for c in 0..r {
            let mut sum = 0.0;
            for i in 0..rows {
                let v = a[[i, c]];
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(CpAprError::Domain(format!(
                        "factor {} entry ({}, {}) = {v} is negative or not finite",
                        n + 1,
                        i + 1,
                        c + 1
                    )));
                }
                sum += v;
            }
            if sum > 0.0 {
                for i in 0..rows {
                    scaled[[i, c]] = a[[i, c]] / sum;
                }
                lambda[c] *= sum;
            } else {
                lambda[c] = 0.0;
                let u = 1.0 / rows as f64;
                for i in 0..rows {
                    scaled[[i, c]] = u;
                }
            }
        }
        out_factors.push(scaled);
    }
    KruskalModel::new(lambda, out_factors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2, Array2};
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Oracle for the unfolding map: enumerate the multi-indices of the
    /// non-n modes with the lowest mode varying fastest and read off the
    /// 1-based position.
    fn matricize_oracle(multi: &[usize], shape: &[usize], mode: usize) -> (usize, usize) {
        let n = mode - 1;
        let others: Vec<usize> = (0..shape.len()).filter(|&k| k != n).collect();
        let mut odo: Vec<usize> = others.iter().map(|_| 1usize).collect();
        let mut pos = 1usize;
        loop {
            if others.iter().zip(&odo).all(|(&k, &i)| multi[k] == i) {
                return (multi[n], pos);
            }
            // advance odometer, first (lowest) mode fastest
            let mut carried = true;
            for (slot, &k) in others.iter().enumerate() {
                if odo[slot] < shape[k] {
                    odo[slot] += 1;
                    carried = false;
                    break;
                }
                odo[slot] = 1;
            }
            assert!(!carried, "oracle ran off the end");
            pos += 1;
        }
    }

    fn all_multi_indices(shape: &[usize]) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for &e in shape {
            let mut next = Vec::with_capacity(out.len() * e);
            for prefix in &out {
                for i in 1..=e {
                    let mut v = prefix.clone();
                    v.push(i);
                    next.push(v);
                }
            }
            out = next;
        }
        out
    }

    #[test]
    fn matricize_examples() {
        let m = matricize_index(&[2, 3, 4], &[2, 3, 4], 1).unwrap();
        assert_eq!((m.row, m.col), (2, 12));
        assert_eq!((m.row, m.col), matricize_oracle(&[2, 3, 4], &[2, 3, 4], 1));

        for mode in 1..=3 {
            let m = matricize_index(&[1, 1, 1], &[5, 4, 3], mode).unwrap();
            assert_eq!((m.row, m.col), (1, 1));
        }
    }

    #[test]
    fn matricize_matches_oracle_and_is_bijective() {
        let shapes: [&[usize]; 7] = [
            &[2, 3, 4],
            &[5, 4],
            &[7, 1, 3],
            &[10, 10, 10],
            &[3, 3, 3, 3],
            &[2, 2, 2, 2, 2],
            &[1, 5, 1, 4],
        ];
        for shape in shapes {
            let total: usize = shape.iter().product();
            assert!(total <= 10_000);
            for mode in 1..=shape.len() {
                let jn: usize = shape
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != mode - 1)
                    .map(|(_, &e)| e)
                    .product();
                let mut seen = std::collections::HashSet::new();
                for multi in all_multi_indices(shape) {
                    let m = matricize_index(&multi, shape, mode).unwrap();
                    assert_eq!((m.row, m.col), matricize_oracle(&multi, shape, mode));
                    assert!(m.row >= 1 && m.row <= shape[mode - 1]);
                    assert!(m.col >= 1 && m.col <= jn);
                    assert!(seen.insert((m.row, m.col)), "collision at {multi:?}");
                }
                assert_eq!(seen.len(), total);
            }
        }
    }

    #[test]
    fn matricize_bounds_errors() {
        assert!(matricize_index(&[3, 1, 1], &[2, 3, 4], 1).is_err());
        assert!(matricize_index(&[1, 1, 1], &[2, 3, 4], 0).is_err());
        assert!(matricize_index(&[1, 1, 1], &[2, 3, 4], 4).is_err());
        assert!(matricize_index(&[1, 1], &[2, 3, 4], 1).is_err());
    }

    #[test]
    fn khatri_rao_ones_and_identity() {
        let ones = Array2::<f64>::ones((2, 2));
        let c = khatri_rao(&[ones.view(), ones.view()]).unwrap();
        assert_eq!(c, Array2::<f64>::ones((4, 2)));

        let eye: Array2<f64> = Array2::eye(2);
        let c = khatri_rao(&[eye.view(), eye.view()]).unwrap();
        let expect = arr2(&[[1.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 1.0]]);
        assert_eq!(c, expect);
    }

    #[test]
    fn khatri_rao_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = Array2::from_shape_fn((2, 2), |_| rng.gen::<f64>());
            let b = Array2::from_shape_fn((3, 2), |_| rng.gen::<f64>());
            let c = khatri_rao(&[a.view(), b.view()]).unwrap();
            for i1 in 1..=2usize {
                for i2 in 1..=3usize {
                    for r in 0..2 {
                        let oracle = a[[i1 - 1, r]] * b[[i2 - 1, r]];
                        assert_eq!(c[[(i1 - 1) * 3 + i2 - 1, r]], oracle);
                    }
                }
            }
        }
    }

    #[test]
    fn khatri_rao_dimension_error() {
        let a = Array2::<f64>::ones((2, 2));
        let b = Array2::<f64>::ones((2, 3));
        assert!(khatri_rao(&[a.view(), b.view()]).is_err());
    }

    fn random_model(shape: &[usize], rank: usize, seed: u64) -> KruskalModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = Array1::from_shape_fn(rank, |_| rng.gen::<f64>() + 0.1);
        let factors: Vec<Array2<f64>> = shape
            .iter()
            .map(|&e| Array2::from_shape_fn((e, rank), |_| rng.gen::<f64>() + 1e-3))
            .collect();
        normalize(&weights, &factors).unwrap()
    }

    /// Dense reconstruction straight from the rank-one sum definition.
    fn dense_reconstruction(model: &KruskalModel) -> Vec<(Vec<usize>, f64)> {
        all_multi_indices(&model.shape())
            .into_iter()
            .map(|idx| {
                let mut v = 0.0;
                for r in 0..model.rank() {
                    let mut t = model.weights()[r];
                    for (n, &i) in idx.iter().enumerate() {
                        t *= model.factors()[n][[i - 1, r]];
                    }
                    v += t;
                }
                (idx, v)
            })
            .collect()
    }

    #[test]
    fn build_pi_two_way_is_transposed_factor() {
        let model = random_model(&[3, 4], 2, 5);
        let pi = model.build_pi(1).unwrap();
        assert_eq!(pi.dim(), (2, 4));
        for r in 0..2 {
            for j in 0..4 {
                assert_eq!(pi[[r, j]], model.factors()[1][[j, r]]);
            }
        }
    }

    #[test]
    fn build_pi_rows_sum_to_one() {
        for seed in 0..5 {
            let model = random_model(&[4, 3, 5], 3, seed);
            for mode in 1..=3 {
                let pi = model.build_pi(mode).unwrap();
                for row in pi.rows() {
                    assert!((row.sum() - 1.0).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn build_pi_matches_dense_reconstruction() {
        let model = random_model(&[2, 2, 2], 2, 42);
        let dense = dense_reconstruction(&model);
        for mode in 1..=3 {
            let pi = model.build_pi(mode).unwrap();
            // B = A Lambda
            let a = &model.factors()[mode - 1];
            for (idx, val) in &dense {
                let m = matricize_index(idx, &model.shape(), mode).unwrap();
                let mut got = 0.0;
                for r in 0..model.rank() {
                    got += a[[m.row - 1, r]] * model.weights()[r] * pi[[r, m.col - 1]];
                }
                assert!((got - val).abs() <= 1e-13, "mode {mode} idx {idx:?}");
            }
        }
    }

    #[test]
    fn value_at_matches_dense_oracle() {
        let model = random_model(&[2, 2, 2], 3, 9);
        for (idx, val) in dense_reconstruction(&model) {
            assert!((model.value_at(&idx).unwrap() - val).abs() <= 1e-14);
        }
    }

    #[test]
    fn value_at_trivial_cases() {
        let factors = vec![arr2(&[[1.0], [0.0]]), arr2(&[[1.0], [0.0]])];
        let model = KruskalModel::new(arr1(&[1.0]), factors).unwrap();
        assert_eq!(model.value_at(&[1, 1]).unwrap(), 1.0);

        let model0 = KruskalModel::new(
            arr1(&[0.0, 0.0]),
            vec![
                arr2(&[[0.5, 0.5], [0.5, 0.5]]),
                arr2(&[[0.5, 0.5], [0.5, 0.5]]),
            ],
        )
        .unwrap();
        assert_eq!(model0.value_at(&[2, 1]).unwrap(), 0.0);
        assert!(model0.value_at(&[3, 1]).is_err());
    }

    #[test]
    fn normalize_moves_mass_into_weights() {
        let factors = vec![arr2(&[[2.0], [2.0]]), arr2(&[[1.0], [0.0]])];
        let model = normalize(&arr1(&[1.0]), &factors).unwrap();
        assert_eq!(model.weights()[0], 4.0);
        assert_eq!(model.factors()[0], arr2(&[[0.5], [0.5]]));
        assert_eq!(model.factors()[1], arr2(&[[1.0], [0.0]]));
    }

    #[test]
    fn normalize_is_identity_on_normalized_models() {
        let model = random_model(&[3, 4, 2], 2, 3);
        let again = model.normalized().unwrap();
        for (a, b) in model.factors().iter().zip(again.factors()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
        for (x, y) in model.weights().iter().zip(again.weights()) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn normalize_zero_column_rule_preserves_values() {
        let weights = arr1(&[1.0, 1.0]);
        let factors = vec![
            arr2(&[[0.3, 0.0], [0.7, 0.0]]),
            arr2(&[[2.0, 0.5], [2.0, 0.5]]),
        ];
        let model = normalize(&weights, &factors).unwrap();
        assert_eq!(model.weights()[1], 0.0);
        assert_eq!(model.factors()[0].column(1).to_vec(), vec![0.5, 0.5]);
        // pointwise values match the raw bilinear sum
        for i in 1..=2usize {
            for j in 1..=2usize {
                let mut raw = 0.0;
                for r in 0..2 {
                    raw += weights[r] * factors[0][[i - 1, r]] * factors[1][[j - 1, r]];
                }
                let got = model.value_at(&[i, j]).unwrap();
                assert!((got - raw).abs() <= 1e-12 * raw.max(1.0));
            }
        }
    }

    #[test]
    fn normalize_rejects_negative_entries() {
        let factors = vec![arr2(&[[1.0], [-0.5]]), arr2(&[[1.0], [0.0]])];
        assert!(normalize(&arr1(&[1.0]), &factors).is_err());
    }

    #[test]
    fn tensor_merges_duplicates() {
        let a = SparseCountTensor::new(vec![3, 3], vec![(vec![2, 1], 1), (vec![2, 1], 2)]).unwrap();
        let b = SparseCountTensor::new(vec![3, 3], vec![(vec![2, 1], 3)]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.nnz(), 1);
        assert_eq!(a.total_count(), 3);
    }

    #[test]
    fn tensor_rejects_bad_input() {
        assert!(SparseCountTensor::new(vec![3], vec![]).is_err());
        assert!(SparseCountTensor::new(vec![3, 0], vec![]).is_err());
        assert!(SparseCountTensor::new(vec![3, 3], vec![(vec![4, 1], 1)]).is_err());
        assert!(SparseCountTensor::new(vec![3, 3], vec![(vec![1], 1)]).is_err());
    }

    #[test]
    fn sorted_by_weight_orders_descending() {
        let model = KruskalModel::new(
            arr1(&[1.0, 3.0, 2.0]),
            vec![
                arr2(&[[0.1, 0.2, 0.3], [0.9, 0.8, 0.7]]),
                arr2(&[[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]]),
            ],
        )
        .unwrap();
        let sorted = model.sorted_by_weight();
        assert_eq!(sorted.weights().to_vec(), vec![3.0, 2.0, 1.0]);
        assert_eq!(sorted.factors()[0].row(0).to_vec(), vec![0.2, 0.3, 0.1]);
        for (idx, _) in dense_reconstruction(&model) {
            let a = model.value_at(&idx).unwrap();
            let b = sorted.value_at(&idx).unwrap();
            assert!((a - b).abs() <= 1e-14);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn prop_matricize_bijection(shape in proptest::collection::vec(1usize..8, 2..5), mode_sel in 0usize..100) {
            let total: usize = shape.iter().product();
            prop_assume!(total <= 4096);
            let mode = mode_sel % shape.len() + 1;
            let mut seen = std::collections::HashSet::new();
            for multi in all_multi_indices(&shape) {
                let m = matricize_index(&multi, &shape, mode).unwrap();
                prop_assert!(seen.insert((m.row, m.col)));
            }
            prop_assert_eq!(seen.len(), total);
        }

        #[test]
        fn prop_khatri_rao_oracle(seed in 0u64..1000, i1 in 1usize..5, i2 in 1usize..5, r in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Array2::from_shape_fn((i1, r), |_| rng.gen::<f64>());
            let b = Array2::from_shape_fn((i2, r), |_| rng.gen::<f64>());
            let c = khatri_rao(&[a.view(), b.view()]).unwrap();
            for x in 0..i1 {
                for y in 0..i2 {
                    for k in 0..r {
                        prop_assert_eq!(c[[x * i2 + y, k]], a[[x, k]] * b[[y, k]]);
                    }
                }
            }
        }

        #[test]
        fn prop_normalize_preserves_values(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shape = [3usize, 2, 4];
            let rank = 2usize;
            let weights = Array1::from_shape_fn(rank, |_| rng.gen::<f64>() * 2.0);
            let factors: Vec<Array2<f64>> = shape
                .iter()
                .map(|&e| Array2::from_shape_fn((e, rank), |_| rng.gen::<f64>() * 3.0))
                .collect();
            let model = normalize(&weights, &factors).unwrap();
            for idx in all_multi_indices(&shape) {
                let mut raw = 0.0;
                for r in 0..rank {
                    let mut t = weights[r];
                    for (n, &i) in idx.iter().enumerate() {
                        t *= factors[n][[i - 1, r]];
                    }
                    raw += t;
                }
                let got = model.value_at(&idx).unwrap();
                prop_assert!((got - raw).abs() <= 1e-12 * raw.abs().max(1.0));
            }
        }
    }
}
