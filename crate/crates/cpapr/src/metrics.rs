//! Factor match score and per-column congruence counts between a planted
//! and a recovered Kruskal model.

use itertools::Itertools;

use crate::error::{CpAprError, Result};
use crate::tensor::KruskalModel;

/// Cosine threshold for counting a column as correctly identified.
pub const CONGRUENCE_THRESHOLD: f64 = 0.95;

#[derive(Debug, Clone)]
pub struct FactorMatchReport {
    /// Mean over matched components of the weight-agreement penalty times
    /// the product of per-mode column cosines; 1 means a perfect match up
    /// to permutation and scaling.
    pub fms: f64,
    /// Matched columns per mode with cosine >= 0.95.
    pub congruent_columns_per_mode: Vec<usize>,
    /// `permutation[r]` is the 0-based estimate component matched to truth
    /// component r (in the truth's component order).
    pub permutation: Vec<usize>,
    /// True when the two models have different ranks; the score then uses
    /// the best min(R, R')-matching and divides by the larger rank.
    pub rank_mismatch: bool,
}

struct ComponentGeometry {
    /// xi_r = lambda_r * prod_n ||a_r^(n)||_2
    xi: Vec<f64>,
    /// unit columns per mode (zero columns stay zero)
    units: Vec<Vec<Vec<f64>>>,
}

fn geometry(model: &KruskalModel) -> ComponentGeometry {
    let rank = model.rank();
    let mut xi = model.weights().to_vec();
    let mut units = Vec::with_capacity(model.order());
    for a in model.factors() {
        let mut cols = Vec::with_capacity(rank);
        for r in 0..rank {
            let col: Vec<f64> = a.column(r).to_vec();
            let norm: f64 = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            xi[r] *= norm;
            cols.push(if norm > 0.0 {
                col.iter().map(|v| v / norm).collect()
            } else {
                col
            });
        }
        units.push(cols);
    }
    ComponentGeometry { xi, units }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot.clamp(-1.0, 1.0)
}

/// Per-pair score: weight-agreement penalty times product of cosines.
fn pair_score(gt: &ComponentGeometry, ge: &ComponentGeometry, r: usize, s: usize) -> f64 {
    let (xr, xs) = (gt.xi[r], ge.xi[s]);
    let denom = xr.max(xs);
    let penalty = if denom > 0.0 { 1.0 - (xr - xs).abs() / denom } else { 1.0 };
    let mut score = penalty;
    for (ut, ue) in gt.units.iter().zip(&ge.units) {
        score *= cosine(&ut[r], &ue[s]);
    }
    score
}

/// Scores the estimate against the truth, matching components by the
/// permutation that maximizes the total score (exhaustive for ranks up
/// to 8, greedy plus pairwise-swap refinement above). Column norms use
/// the 2-norm; cosines are clamped to [-1, 1].
pub fn factor_match_score(
    truth: &KruskalModel,
    estimate: &KruskalModel,
) -> Result<FactorMatchReport> {
    if truth.shape() != estimate.shape() {
        return Err(CpAprError::DimensionMismatch(format!(
            "truth shape {:?} vs estimate shape {:?}",
            truth.shape(),
            estimate.shape()
        )));
    }
    let (rt, re) = (truth.rank(), estimate.rank());
    let k = rt.min(re);
    let gt = geometry(truth);
    let ge = geometry(estimate);

    let mut table = vec![vec![0.0f64; re]; rt];
    for (r, row) in table.iter_mut().enumerate() {
        for (s, cell) in row.iter_mut().enumerate() {
            *cell = pair_score(&gt, &ge, r, s);
        }
    }

    // match the k truth components with the largest xi when rt > re
    let truth_sel: Vec<usize> = if rt > k {
        let mut order: Vec<usize> = (0..rt).collect();
        order.sort_by(|&a, &b| gt.xi[b].partial_cmp(&gt.xi[a]).unwrap());
        let mut sel = order[..k].to_vec();
        sel.sort_unstable();
        sel
    } else {
        (0..rt).collect()
    };

    let assignment = best_assignment(&table, &truth_sel, re);

    let total: f64 = assignment
        .iter()
        .map(|&(r, s)| table[r][s])
        .sum();
    let fms = total / rt.max(re) as f64;

    // permutation in truth order; unmatched truth components (rank
    // mismatch only) map to usize::MAX and are skipped in the counts
    let mut permutation = vec![usize::MAX; rt];
    for &(r, s) in &assignment {
        permutation[r] = s;
    }

    let congruent = (0..truth.order())
        .map(|n| {
            assignment
                .iter()
                .filter(|&&(r, s)| cosine(&gt.units[n][r], &ge.units[n][s]) >= CONGRUENCE_THRESHOLD)
                .count()
        })
        .collect();

    Ok(FactorMatchReport {
        fms,
        congruent_columns_per_mode: congruent,
        permutation,
        rank_mismatch: rt != re,
    })
}

/// Number of matched columns in `mode` (1-based) whose cosine meets the
/// threshold, under the same matching as [`factor_match_score`].
pub fn congruent_column_count(
    truth: &KruskalModel,
    estimate: &KruskalModel,
    mode: usize,
    threshold: f64,
) -> Result<usize> {
    if mode < 1 || mode > truth.order() {
        return Err(CpAprError::OutOfBounds(format!("mode {mode}")));
    }
    let report = factor_match_score(truth, estimate)?;
    let gt = geometry(truth);
    let ge = geometry(estimate);
    Ok(report
        .permutation
        .iter()
        .enumerate()
        .filter(|&(_, &s)| s != usize::MAX)
        .filter(|&(r, &s)| cosine(&gt.units[mode - 1][r], &ge.units[mode - 1][s]) >= threshold)
        .count())
}

/// Maximizes sum of table[r][s] over injective assignments of the selected
/// truth components into estimate components.
fn best_assignment(
    table: &[Vec<f64>],
    truth_sel: &[usize],
    re: usize,
) -> Vec<(usize, usize)> {
    let k = truth_sel.len();
    if truth_sel.len().max(re) <= 8 {
        // exhaustive over ordered k-subsets of the estimate components
        let mut best = f64::NEG_INFINITY;
        let mut best_perm: Vec<usize> = (0..k).collect();
        for perm in (0..re).permutations(k) {
            let total: f64 = truth_sel
                .iter()
                .zip(&perm)
                .map(|(&r, &s)| table[r][s])
                .sum();
            if total > best {
                best = total;
                best_perm = perm;
            }
        }
        truth_sel.iter().copied().zip(best_perm).collect()
    } else {
        // greedy by descending pair score, then 2-opt swaps
        let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(k);
        let mut used_t = vec![false; table.len()];
        let mut used_e = vec![false; re];
        let mut all: Vec<(usize, usize)> = truth_sel
            .iter()
            .flat_map(|&r| (0..re).map(move |s| (r, s)))
            .collect();
        all.sort_by(|a, b| table[b.0][b.1].partial_cmp(&table[a.0][a.1]).unwrap());
        for (r, s) in all {
            if pairs.len() == k {
                break;
            }
            if !used_t[r] && !used_e[s] {
                used_t[r] = true;
                used_e[s] = true;
                pairs.push((r, s));
            }
        }
        let mut improved = true;
        while improved {
            improved = false;
            for i in 0..pairs.len() {
                for j in i + 1..pairs.len() {
                    let (r1, s1) = pairs[i];
                    let (r2, s2) = pairs[j];
                    let current = table[r1][s1] + table[r2][s2];
                    let swapped = table[r1][s2] + table[r2][s1];
                    if swapped > current + 1e-15 {
                        pairs[i] = (r1, s2);
                        pairs[j] = (r2, s1);
                        improved = true;
                    }
                }
            }
        }
        pairs
    }
}
