//! Planted-model generator and ball-in-urn sampler for recovery
//! experiments.
//!
//! All randomness comes from ChaCha8 with a fixed stream-splitting
//! scheme over a single user seed, so results are reproducible across
//! platforms and sampling can be partitioned by ball index:
//! - stream 0: the weight vector,
//! - stream `(n << 32) | r` (n = 1-based mode, r = 0-based column):
//!   factor column entries and the spike subset,
//! - stream `BALL_STREAM_BASE + p`: ball p.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

use crate::error::{CpAprError, Result};
use crate::tensor::{normalize, KruskalModel, SparseCountTensor};

const BALL_STREAM_BASE: u64 = 1 << 48;

/// Ground-truth model, sampled observations, and the draw parameters.
#[derive(Debug, Clone)]
pub struct PlantedProblem {
    /// The planted model with weights rescaled to total mass `nu`.
    pub truth: KruskalModel,
    pub observed: SparseCountTensor,
    pub nu: u64,
    pub seed: u64,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Builds a random R-component model: per factor column, a uniformly
/// chosen ceil(I_n / R)-subset of entries ("spikes") is drawn from
/// uniform [0, 100] and the rest from uniform [0, 1]; columns are then
/// 1-norm normalized. Weights are uniform [0, 1].
pub fn generate_planted_model(shape: &[usize], rank: usize, seed: u64) -> Result<KruskalModel> {
    if shape.len() < 2 || shape.iter().any(|&e| e == 0) {
        return Err(CpAprError::Domain(format!("degenerate shape {shape:?}")));
    }
    if rank == 0 {
        return Err(CpAprError::Domain("rank must be at least 1".into()));
    }
    if rank > *shape.iter().min().unwrap() {
        log::warn!(
            "rank {rank} exceeds the smallest extent of {shape:?}; spike subsets will saturate"
        );
    }
    let mut factors = Vec::with_capacity(shape.len());
    for (n, &extent) in shape.iter().enumerate() {
        let spikes = extent.div_ceil(rank).min(extent);
        let mut a = Array2::<f64>::zeros((extent, rank));
        for r in 0..rank {
            let mut rng = stream_rng(seed, (((n + 1) as u64) << 32) | r as u64);
            // partial Fisher-Yates for the spike subset
            let mut pool: Vec<usize> = (0..extent).collect();
            for s in 0..spikes {
                let pick = rng.gen_range(s..extent);
                pool.swap(s, pick);
            }
            let spike_set: std::collections::HashSet<usize> =
                pool[..spikes].iter().copied().collect();
            for i in 0..extent {
                a[[i, r]] = if spike_set.contains(&i) {
                    rng.gen::<f64>() * 100.0
                } else {
                    rng.gen::<f64>()
                };
            }
        }
        factors.push(a);
    }
    let mut lam_rng = stream_rng(seed, 0);
    let weights = Array1::from_shape_fn(rank, |_| lam_rng.gen::<f64>());
    normalize(&weights, &factors)
}

/// Tosses `nu` balls: each ball draws a component r with probability
/// lambda_r / sum(lambda), then one index per mode proportional to the
/// r-th factor column, and lands in that cell. The returned truth has its
/// weights rescaled so e^T lambda = nu (the Poisson mass of the data).
pub fn sample_observations(truth: &KruskalModel, nu: u64, seed: u64) -> Result<PlantedProblem> {
    let lambda_sum = truth.weights().sum();
    if lambda_sum <= 0.0 {
        return Err(CpAprError::Domain("all-zero weights cannot be sampled".into()));
    }
    if nu == 0 {
        return Err(CpAprError::Domain("nu must be at least 1".into()));
    }
    let rank = truth.rank();
    let shape = truth.shape();

    // cumulative distributions: components, then per (mode, component)
    let comp_cdf = cumulative(truth.weights().iter().copied());
    let mut col_cdfs: Vec<Vec<Vec<f64>>> = Vec::with_capacity(shape.len());
    for a in truth.factors() {
        let per_col = (0..rank)
            .map(|r| cumulative(a.column(r).iter().copied()))
            .collect();
        col_cdfs.push(per_col);
    }

    let mut urns: BTreeMap<Vec<usize>, u64> = BTreeMap::new();
    for p in 0..nu {
        let mut rng = stream_rng(seed, BALL_STREAM_BASE + p);
        let r = draw(&comp_cdf, &mut rng);
        let idx: Vec<usize> = col_cdfs
            .iter()
            .map(|cols| draw(&cols[r], &mut rng) + 1)
            .collect();
        *urns.entry(idx).or_insert(0) += 1;
    }
    let observed =
        SparseCountTensor::new(shape.clone(), urns.into_iter().collect())?;

    let scale = nu as f64 / lambda_sum;
    let rescaled = Array1::from_iter(truth.weights().iter().map(|&w| w * scale));
    let truth = KruskalModel::new(rescaled, truth.factors().to_vec())?;
    Ok(PlantedProblem { truth, observed, nu, seed })
}

/// Generator plus sampler in one call.
pub fn planted_problem(
    shape: &[usize],
    rank: usize,
    nu: u64,
    seed: u64,
) -> Result<PlantedProblem> {
    let truth = generate_planted_model(shape, rank, seed)?;
    sample_observations(&truth, nu, seed)
}

fn cumulative(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    values
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

fn draw(cdf: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total = *cdf.last().expect("nonempty distribution");
    let u = rng.gen::<f64>() * total;
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}
