//! Library results checked against independently coded references.

mod common;

use common::*;
use langpref::contextlab::{ContextVariant, PositionLabel};
use langpref::corpus::LanguageTag;
use langpref::metrics::{
    bin_by_position, citation_accuracy, compare, fit_surrogate, independent_t_test, noncentral_t_cdf,
    required_sample_size, sample_masks, two_sample_power, TestKind,
};
use langpref::probe::{AblationSample, CitationPrediction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn sample_sizes_match_power_integration() {
    for (effect, want) in [(0.8, 26usize), (0.5, 64)] {
        let n = required_sample_size(effect, 0.05, 0.8).unwrap();
        assert_eq!(n, want, "effect {effect}");
        assert!(power_oracle(effect, n, 0.05) >= 0.8, "power at n = {n}");
        assert!(power_oracle(effect, n - 1, 0.05) < 0.8, "power at n = {}", n - 1);
    }
}

#[test]
fn frozen_sample_sizes() {
    // Produced once with the power oracle above and frozen.
    for (effect, want) in [(0.2, 394usize), (3.0, 4), (10.0, 2)] {
        assert_eq!(required_sample_size(effect, 0.05, 0.8).unwrap(), want, "effect {effect}");
    }
}

#[test]
fn power_matches_integration() {
    for (effect, n) in [(0.8, 10usize), (0.5, 40), (0.3, 100), (1.2, 5)] {
        let got = two_sample_power(effect, n, 0.05);
        let want = power_oracle(effect, n, 0.05);
        assert!((got - want).abs() < 1e-6, "d={effect} n={n}: {got} vs {want}");
    }
}

#[test]
fn noncentral_cdf_matches_integration() {
    for (t, df, delta) in [(1.5, 10.0, 0.5), (-0.7, 4.0, 1.0), (2.2, 30.0, 2.5), (0.0, 7.0, -1.2), (3.1, 58.0, 2.83)] {
        let ln_norm = -(df / 2.0) * 2f64.ln() - ln_gamma(df / 2.0);
        let chi = |v: f64| if v <= 0.0 { 0.0 } else { (ln_norm + (df / 2.0 - 1.0) * v.ln() - v / 2.0).exp() };
        let upper = df + 40.0 * (2.0 * df).sqrt();
        let want = simpson(|v| chi(v) * normal_cdf(t * (v / df).sqrt() - delta), 0.0, upper, 40_000);
        let got = noncentral_t_cdf(t, df, delta);
        assert!((got - want).abs() < 1e-6, "t={t} df={df} delta={delta}: {got} vs {want}");
    }
}

#[test]
fn independent_test_matches_pooled_formula() {
    let a = [0.2, 0.5, 0.9, 0.4, 0.3, 0.8];
    let b = [0.6, 0.9, 1.1, 0.5, 0.9];
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let ss = |x: &[f64]| {
        let m = mean(x);
        x.iter().map(|v| (v - m).powi(2)).sum::<f64>()
    };
    let df = (a.len() + b.len() - 2) as f64;
    let sp2 = (ss(&a) + ss(&b)) / df;
    let t = (mean(&b) - mean(&a)) / (sp2 * (1.0 / a.len() as f64 + 1.0 / b.len() as f64)).sqrt();
    let got = independent_t_test(&a, &b).unwrap();
    assert!((got.t_stat - t).abs() < 1e-12);
    assert_eq!(got.df, df);
    assert!((got.p_raw - t_two_sided_p(t, df)).abs() < 1e-6);
}

/// Solves the normal equations `(AᵀA) β = Aᵀy` by Gauss-Jordan elimination.
fn normal_equations(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = rows[0].len();
    let mut m = vec![vec![0.0; p + 1]; p];
    for (r, yi) in rows.iter().zip(y) {
        for i in 0..p {
            for j in 0..p {
                m[i][j] += r[i] * r[j];
            }
            m[i][p] += r[i] * yi;
        }
    }
    for col in 0..p {
        let piv = (col..p).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
        m.swap(col, piv);
        let d = m[col][col];
        for v in m[col].iter_mut() {
            *v /= d;
        }
        for r in 0..p {
            if r != col {
                let f = m[r][col];
                let pivot_row = m[col].clone();
                for (v, pv) in m[r].iter_mut().zip(pivot_row) {
                    *v -= f * pv;
                }
            }
        }
    }
    m.iter().map(|r| r[p]).collect()
}

fn noisy_samples(s: usize, count: usize, seed: u64) -> Vec<AblationSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..s).map(|_| rng.gen_range(-2.0..2.0)).collect();
    sample_masks(s, count, seed)
        .unwrap()
        .into_iter()
        .map(|mask| {
            let y = 0.3
                + mask.iter().zip(&w).map(|(&m, w)| if m { *w } else { 0.0 }).sum::<f64>()
                + rng.gen_range(-0.5..0.5);
            AblationSample { mask, logit_prob: y }
        })
        .collect()
}

#[test]
fn least_squares_matches_normal_equations() {
    let samples = noisy_samples(8, 64, 99);
    let rows: Vec<Vec<f64>> =
        samples.iter().map(|s| s.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).chain([1.0]).collect()).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.logit_prob).collect();
    let beta = normal_equations(&rows, &y);
    let fit = fit_surrogate(&samples, 0.0).unwrap();
    assert!(!fit.rank_deficient);
    for (got, want) in fit.weights.iter().chain([&fit.bias]).zip(&beta) {
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
    }
}

#[test]
fn lasso_satisfies_optimality_conditions() {
    let samples = noisy_samples(10, 64, 5);
    let lambda = 3.0;
    let fit = fit_surrogate(&samples, lambda).unwrap();
    let n = samples.len() as f64;
    // Intercept is unpenalized: residuals sum to zero.
    let resid: Vec<f64> = samples.iter().map(|s| s.logit_prob - fit.predict(&s.mask)).collect();
    assert!(resid.iter().sum::<f64>().abs() / n < 1e-8);
    // d/dw_j of sum r^2 + lambda |w|_1: 2 x_jᵀ r = lambda sign(w_j), or |2 x_jᵀ r| <= lambda at zero.
    let mut zeros = 0;
    for (j, wj) in fit.weights.iter().enumerate() {
        let g: f64 = samples.iter().zip(&resid).map(|(s, r)| if s.mask[j] { 2.0 * r } else { 0.0 }).sum();
        if *wj == 0.0 {
            zeros += 1;
            assert!(g.abs() <= lambda + 1e-6, "weight {j}: |{g}| > {lambda}");
        } else {
            assert!((g - lambda * wj.signum()).abs() < 1e-5, "weight {j}: {g} vs {}", lambda * wj.signum());
        }
    }
    assert!(zeros < fit.weights.len());
}

fn preds(lang: &str, outcomes: &[(bool, PositionLabel)]) -> Vec<CitationPrediction> {
    let variant = ContextVariant::cited_in(LanguageTag::new(lang).unwrap());
    outcomes
        .iter()
        .enumerate()
        .map(|(i, &(c, pos))| CitationPrediction {
            query_id: format!("q{}", i / 3),
            statement_index: i % 3,
            variant: variant.clone(),
            cited_id: 2,
            position: Some(pos),
            top1_token: if c { "2".into() } else { "The".into() },
            p_correct: if c { 0.7 } else { 0.2 },
            p_top1: 0.7,
            entropy: 0.1 * i as f64,
            correct: c,
        })
        .collect()
}

#[test]
fn recounts_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let outcomes: Vec<(bool, PositionLabel)> =
        (0..90).map(|_| (rng.gen_bool(0.6), PositionLabel::ALL[rng.gen_range(0..3)])).collect();
    let fr = preds("fr", &outcomes);
    let cell = citation_accuracy("m", &fr).unwrap();
    let correct = outcomes.iter().filter(|o| o.0).count();
    assert_eq!(cell.correct, correct);
    assert_eq!(cell.acc, correct as f64 / 90.0);
    let mean_entropy = fr.iter().map(|p| p.entropy).sum::<f64>() / 90.0;
    assert!((cell.mean_entropy - mean_entropy).abs() < 1e-12);

    let labels: Vec<PositionLabel> = outcomes.iter().map(|o| o.1).collect();
    let bins = bin_by_position(&fr, &labels).unwrap();
    for label in PositionLabel::ALL {
        let members: Vec<_> = outcomes.iter().filter(|o| o.1 == label).collect();
        let bin = bins.get(label);
        assert_eq!(bin.n, members.len());
        assert_eq!(bin.correct, members.iter().filter(|o| o.0).count());
    }
    assert_eq!(bins.total(), 90);

    let flipped: Vec<(bool, PositionLabel)> =
        outcomes.iter().enumerate().map(|(i, o)| (o.0 ^ (i % 4 == 0), o.1)).collect();
    let en = preds("en", &flipped);
    let gap = compare("m", &en, &fr, 3, TestKind::Paired).unwrap();
    let en_correct = flipped.iter().filter(|o| o.0).count();
    assert_eq!(gap.delta, correct as f64 / 90.0 - en_correct as f64 / 90.0);
    let a: Vec<f64> = flipped.iter().map(|o| o.0 as u8 as f64).collect();
    let b: Vec<f64> = outcomes.iter().map(|o| o.0 as u8 as f64).collect();
    let (t, df) = paired_t(&a, &b);
    assert!((gap.t_stat - t).abs() < 1e-12);
    assert!((gap.p_raw - t_two_sided_p(t, df)).abs() < 1e-6);
    assert_eq!(gap.p_adjusted, (3.0 * gap.p_raw).min(1.0));
}
