//! Ablation masks, the linear surrogate and sentence-level attribution scores.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe::AblationSample;

pub const DEFAULT_MASK_COUNT: usize = 64;
pub const DEFAULT_LAMBDA: f64 = 0.01;

const CD_MAX_SWEEPS: usize = 100_000;
const CD_TOLERANCE: f64 = 1e-12;

/// `count` masks over `s` sentences; the first keeps every sentence.
pub fn sample_masks(s: usize, count: usize, seed: u64) -> Result<Vec<Vec<bool>>> {
    if s == 0 || count == 0 {
        return Err(Error::domain("mask sampling needs s >= 1 and count >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masks = Vec::with_capacity(count);
    masks.push(vec![true; s]);
    for _ in 1..count {
        masks.push((0..s).map(|_| rng.gen::<bool>()).collect());
    }
    Ok(masks)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Surrogate {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Root-mean-square error on the training samples.
    pub fit_residual: f64,
    /// Set when the unregularized design lacks full column rank.
    pub rank_deficient: bool,
}

impl Surrogate {
    pub fn predict(&self, mask: &[bool]) -> f64 {
        self.bias + self.weights.iter().zip(mask).filter(|(_, &m)| m).map(|(w, _)| w).sum::<f64>()
    }
}

fn design(samples: &[AblationSample]) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if samples.len() < 2 {
        return Err(Error::domain("surrogate fitting needs at least two samples"));
    }
    let s = samples[0].mask.len();
    if s == 0 {
        return Err(Error::domain("masks must cover at least one sentence"));
    }
    if let Some(bad) = samples.iter().find(|x| x.mask.len() != s) {
        return Err(Error::domain(format!("mask length {} differs from {s}", bad.mask.len())));
    }
    if let Some(bad) = samples.iter().find(|x| !x.logit_prob.is_finite()) {
        return Err(Error::domain(format!("non-finite target {}", bad.logit_prob)));
    }
    let x = DMatrix::from_fn(samples.len(), s, |i, j| if samples[i].mask[j] { 1.0 } else { 0.0 });
    let y = DVector::from_iterator(samples.len(), samples.iter().map(|x| x.logit_prob));
    Ok((x, y))
}

/// Fits `f(m) = w·m + b` minimizing squared error plus `lambda * |w|_1`.
///
/// With `lambda == 0` this is least squares via SVD; a rank-deficient design
/// yields the minimum-norm solution over `(w, b)` and is flagged.
pub fn fit_surrogate(samples: &[AblationSample], lambda: f64) -> Result<Surrogate> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::domain(format!("lambda must be finite and non-negative, got {lambda}")));
    }
    let (x, y) = design(samples)?;
    let (weights, bias, rank_deficient) = if lambda == 0.0 { ols(&x, &y)? } else { lasso(&x, &y, lambda) };
    let n = y.len() as f64;
    let sse: f64 = (0..x.nrows())
        .map(|i| {
            let pred = bias + (0..x.ncols()).map(|j| x[(i, j)] * weights[j]).sum::<f64>();
            (pred - y[i]).powi(2)
        })
        .sum();
    Ok(Surrogate { weights, bias, fit_residual: (sse / n).sqrt(), rank_deficient })
}

fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(Vec<f64>, f64, bool)> {
    let (n, s) = x.shape();
    let aug = DMatrix::from_fn(n, s + 1, |i, j| if j < s { x[(i, j)] } else { 1.0 });
    let svd = aug.svd(true, true);
    let max_sv = svd.singular_values.max();
    let eps = n.max(s + 1) as f64 * max_sv * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&v| v > eps).count();
    let sol = svd.solve(y, eps).map_err(|e| Error::domain(format!("least squares failed: {e}")))?;
    Ok((sol.rows(0, s).iter().copied().collect(), sol[s], rank < s + 1))
}

fn lasso(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> (Vec<f64>, f64, bool) {
    let (n, s) = x.shape();
    let x_mean: Vec<f64> = (0..s).map(|j| x.column(j).sum() / n as f64).collect();
    let y_mean = y.sum() / n as f64;
    let xc = DMatrix::from_fn(n, s, |i, j| x[(i, j)] - x_mean[j]);
    let z: Vec<f64> = (0..s).map(|j| xc.column(j).norm_squared()).collect();
    let mut w = vec![0.0; s];
    let mut r: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let threshold = lambda / 2.0;
    for _ in 0..CD_MAX_SWEEPS {
        let mut max_step: f64 = 0.0;
        for j in 0..s {
            if z[j] == 0.0 {
                continue;
            }
            let col = xc.column(j);
            let rho: f64 = (0..n).map(|i| col[i] * (r[i] + col[i] * w[j])).sum();
            let new = soft_threshold(rho, threshold) / z[j];
            let step = new - w[j];
            if step != 0.0 {
                for i in 0..n {
                    r[i] -= col[i] * step;
                }
                w[j] = new;
                max_step = max_step.max(step.abs());
            }
        }
        if max_step < CD_TOLERANCE {
            break;
        }
    }
    let bias = y_mean - x_mean.iter().zip(&w).map(|(m, w)| m * w).sum::<f64>();
    (w, bias, false)
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Sentence indices by descending weight, ties to the smaller index.
pub fn rank_sentences(weights: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..weights.len()).collect();
    idx.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    idx
}

fn check_k(surrogate: &Surrogate, sentence_to_doc: &[u8], k: usize) -> Result<()> {
    let s = surrogate.weights.len();
    if sentence_to_doc.len() != s {
        return Err(Error::domain(format!("sentence map covers {} of {s} sentences", sentence_to_doc.len())));
    }
    if k == 0 || k > s {
        return Err(Error::domain(format!("k = {k} outside 1..={s}")));
    }
    Ok(())
}

/// Whether any of the top `k` sentences belongs to `cited_id`.
pub fn hit_at_k(surrogate: &Surrogate, sentence_to_doc: &[u8], cited_id: u8, k: usize) -> Result<bool> {
    check_k(surrogate, sentence_to_doc, k)?;
    Ok(rank_sentences(&surrogate.weights).iter().take(k).any(|&j| sentence_to_doc[j] == cited_id))
}

/// Weight of the `k`-th ranked sentence.
pub fn score_at_k(surrogate: &Surrogate, sentence_to_doc: &[u8], k: usize) -> Result<f64> {
    check_k(surrogate, sentence_to_doc, k)?;
    Ok(surrogate.weights[rank_sentences(&surrogate.weights)[k - 1]])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub hit_at_1: f64,
    pub hit_at_3: f64,
    pub score_at_1: f64,
    pub score_at_3: f64,
}

/// Hit@{1,3} and Score@{1,3} for one statement; `k = 3` is capped at the
/// sentence count.
pub fn attribution_scores(surrogate: &Surrogate, sentence_to_doc: &[u8], cited_id: u8) -> Result<AttributionResult> {
    let k3 = surrogate.weights.len().clamp(1, 3);
    let indicator = |b: bool| if b { 1.0 } else { 0.0 };
    Ok(AttributionResult {
        hit_at_1: indicator(hit_at_k(surrogate, sentence_to_doc, cited_id, 1)?),
        hit_at_3: indicator(hit_at_k(surrogate, sentence_to_doc, cited_id, k3)?),
        score_at_1: score_at_k(surrogate, sentence_to_doc, 1)?,
        score_at_3: score_at_k(surrogate, sentence_to_doc, k3)?,
    })
}

/// Mean of per-statement results.
pub fn mean_attribution(results: &[AttributionResult]) -> Result<AttributionResult> {
    if results.is_empty() {
        return Err(Error::domain("no attribution results to average"));
    }
    let n = results.len() as f64;
    let avg = |f: fn(&AttributionResult) -> f64| results.iter().map(f).sum::<f64>() / n;
    Ok(AttributionResult {
        hit_at_1: avg(|r| r.hit_at_1),
        hit_at_3: avg(|r| r.hit_at_3),
        score_at_1: avg(|r| r.score_at_1),
        score_at_3: avg(|r| r.score_at_3),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples_from(masks: &[Vec<bool>], f: impl Fn(&[bool]) -> f64) -> Vec<AblationSample> {
        masks.iter().map(|m| AblationSample { mask: m.clone(), logit_prob: f(m) }).collect()
    }

    #[test]
    fn masks_are_seeded_and_start_full() {
        let a = sample_masks(3, 4, 7).unwrap();
        assert_eq!(a, sample_masks(3, 4, 7).unwrap());
        assert_eq!(a.len(), 4);
        assert_eq!(a[0], vec![true; 3]);
        assert_eq!(sample_masks(5, 1, 1).unwrap(), vec![vec![true; 5]]);
        assert!(sample_masks(0, 1, 1).is_err());
    }

    #[test]
    fn mask_bits_are_fair() {
        let masks = sample_masks(6, 10_000, 42).unwrap();
        for j in 0..6 {
            let mean = masks[1..].iter().filter(|m| m[j]).count() as f64 / 9_999.0;
            assert!((0.48..=0.52).contains(&mean), "bit {j}: {mean}");
        }
    }

    #[test]
    fn constant_target_gives_zero_weights() {
        let masks = sample_masks(4, 32, 3).unwrap();
        let fit = fit_surrogate(&samples_from(&masks, |_| 1.25), 0.0).unwrap();
        assert!(fit.weights.iter().all(|w| w.abs() < 1e-10));
        assert!((fit.bias - 1.25).abs() < 1e-10);
    }

    #[test]
    fn huge_lambda_collapses_to_mean() {
        let masks = sample_masks(4, 32, 9).unwrap();
        let samples = samples_from(&masks, |m| if m[0] { 3.0 } else { -1.0 });
        let mean = samples.iter().map(|s| s.logit_prob).sum::<f64>() / samples.len() as f64;
        let fit = fit_surrogate(&samples, 1e9).unwrap();
        assert!(fit.weights.iter().all(|&w| w == 0.0));
        assert!((fit.bias - mean).abs() < 1e-12);
    }

    #[test]
    fn small_lambda_approaches_ols() {
        let masks = sample_masks(5, 64, 11).unwrap();
        let planted = [1.5, -0.5, 0.0, 2.0, 0.25];
        let samples =
            samples_from(&masks, |m| 0.3 + planted.iter().zip(m).filter(|(_, &b)| b).map(|(w, _)| w).sum::<f64>());
        let fit = fit_surrogate(&samples, 1e-6).unwrap();
        for (w, p) in fit.weights.iter().zip(planted) {
            assert!((w - p).abs() < 1e-6);
        }
    }

    #[test]
    fn duplicate_column_is_flagged() {
        let masks: Vec<Vec<bool>> =
            sample_masks(2, 16, 5).unwrap().into_iter().map(|m| vec![m[0], m[0], m[1]]).collect();
        let fit = fit_surrogate(&samples_from(&masks, |m| if m[0] { 2.0 } else { 0.0 }), 0.0).unwrap();
        assert!(fit.rank_deficient);
        assert!((fit.weights[0] - fit.weights[1]).abs() < 1e-9);
        assert!((fit.weights[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ties_rank_by_index() {
        assert_eq!(rank_sentences(&[0.5, 1.0, 0.5, 1.0]), vec![1, 3, 0, 2]);
        let s = Surrogate { weights: vec![0.0; 4], bias: 0.0, fit_residual: 0.0, rank_deficient: false };
        assert!(hit_at_k(&s, &[2, 1, 1, 1], 2, 1).unwrap());
        assert!(!hit_at_k(&s, &[1, 2, 2, 2], 2, 1).unwrap());
        assert!(hit_at_k(&s, &[1, 2, 2, 2], 2, 2).unwrap());
        assert!(hit_at_k(&s, &[1, 1, 1, 1], 1, 5).is_err());
    }

    #[test]
    fn scores_follow_ranking() {
        let s = Surrogate { weights: vec![0.1, 0.9, -0.2, 0.4], bias: 0.0, fit_residual: 0.0, rank_deficient: false };
        let r = attribution_scores(&s, &[1, 2, 1, 3], 2).unwrap();
        assert_eq!(r, AttributionResult { hit_at_1: 1.0, hit_at_3: 1.0, score_at_1: 0.9, score_at_3: 0.1 });
        let short = Surrogate { weights: vec![0.1, 0.3], ..s };
        let r = attribution_scores(&short, &[1, 2], 1).unwrap();
        assert_eq!((r.hit_at_1, r.hit_at_3, r.score_at_3), (0.0, 1.0, 0.1));
    }
}
