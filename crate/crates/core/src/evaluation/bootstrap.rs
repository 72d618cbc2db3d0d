use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{corpus_counts, Counts, EvalError, EvalOptions};
use crate::treebank::Tree;

pub const MIN_RESAMPLES: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    /// F1(A) − F1(B) on the full set, in F1 points.
    pub observed_delta: f64,
    pub p_value: f64,
    pub n_resamples: usize,
}

fn resample_seed(seed: u64, b: usize) -> u64 {
    seed ^ (b as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn delta(a: &[Counts], b: &[Counts], picks: impl Iterator<Item = usize>) -> f64 {
    let mut sa = Counts::default();
    let mut sb = Counts::default();
    for i in picks {
        sa.add(&a[i]);
        sb.add(&b[i]);
    }
    sa.f1() - sb.f1()
}

/// Paired bootstrap over sentences. Each resample draws `n` sentences with
/// replacement and recomputes micro-averaged F1 for both systems. The p-value
/// counts resamples whose delta exceeds twice the observed one; exact ties
/// count one half.
pub fn paired_bootstrap(
    gold: &[Tree],
    a: &[Tree],
    b: &[Tree],
    n_resamples: usize,
    seed: u64,
    options: EvalOptions,
) -> Result<SignificanceResult, EvalError> {
    if n_resamples < MIN_RESAMPLES {
        return Err(EvalError::Precondition(format!(
            "n_resamples must be at least {MIN_RESAMPLES}, got {n_resamples}"
        )));
    }
    let ca = corpus_counts(gold, a, options)?;
    let cb = corpus_counts(gold, b, options)?;
    Ok(bootstrap_counts(&ca, &cb, n_resamples, seed))
}

/// Bootstrap on precomputed per-sentence counts.
pub fn bootstrap_counts(a: &[Counts], b: &[Counts], n_resamples: usize, seed: u64) -> SignificanceResult {
    assert_eq!(a.len(), b.len(), "unaligned count vectors");
    let n = a.len();
    let observed = delta(a, b, 0..n);
    let threshold = 2.0 * observed;
    let tally: f64 = (0..n_resamples)
        .into_par_iter()
        .map(|r| {
            if n == 0 {
                return 0.5;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(resample_seed(seed, r));
            let d = delta(a, b, (0..n).map(|_| rng.gen_range(0..n)));
            if (d - threshold).abs() <= 1e-9 {
                0.5
            } else if d > threshold {
                1.0
            } else {
                0.0
            }
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .sum();
    SignificanceResult {
        observed_delta: observed,
        p_value: tally / n_resamples as f64,
        n_resamples,
    }
}
