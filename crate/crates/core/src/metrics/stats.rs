//! Paired and independent t-tests, Bonferroni correction and power analysis.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Serde for `f64` values that may be infinite: JSON has no literal for
/// them, so `inf`, `-inf` and `nan` travel as strings.
pub(crate) mod extended_f64 {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(D::Error::custom(format!("expected a number, got {other:?}"))),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    /// Per-statement differences, the default.
    #[default]
    Paired,
    /// Two independent samples with pooled variance.
    Independent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stars {
    #[serde(rename = "ns")]
    Ns,
    #[serde(rename = "*")]
    One,
    #[serde(rename = "**")]
    Two,
    #[serde(rename = "***")]
    Three,
}

impl Stars {
    pub fn from_p(p_adjusted: f64) -> Self {
        if p_adjusted < 0.001 {
            Stars::Three
        } else if p_adjusted < 0.01 {
            Stars::Two
        } else if p_adjusted < 0.05 {
            Stars::One
        } else {
            Stars::Ns
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stars::Ns => "ns",
            Stars::One => "*",
            Stars::Two => "**",
            Stars::Three => "***",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub kind: TestKind,
    pub n: usize,
    pub mean_diff: f64,
    #[serde(with = "extended_f64")]
    pub t_stat: f64,
    pub df: f64,
    pub p_raw: f64,
    /// Zero variance: `t` is undefined and `p_raw` is the limiting value.
    pub degenerate: bool,
}

/// `min(1, m * p)`.
pub fn bonferroni(p_raw: f64, family_size: usize) -> f64 {
    (p_raw * family_size as f64).min(1.0)
}

fn two_sided_p(t: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.cdf(-t.abs())).clamp(0.0, 1.0)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sum_sq_dev(xs: &[f64], m: f64) -> f64 {
    xs.iter().map(|x| (x - m) * (x - m)).sum()
}

fn degenerate(kind: TestKind, n: usize, mean_diff: f64, df: f64) -> TTest {
    let (t_stat, p_raw) = if mean_diff == 0.0 { (0.0, 1.0) } else { (mean_diff.signum() * f64::INFINITY, 0.0) };
    TTest { kind, n, mean_diff, t_stat, df, p_raw, degenerate: true }
}

/// Two-sided paired t-test on `b - a`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::domain(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::domain("paired t-test needs at least two pairs"));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let m = mean(&diffs);
    let df = (n - 1) as f64;
    let var = sum_sq_dev(&diffs, m) / df;
    if var == 0.0 {
        return Ok(degenerate(TestKind::Paired, n, m, df));
    }
    let t = m / (var / n as f64).sqrt();
    Ok(TTest { kind: TestKind::Paired, n, mean_diff: m, t_stat: t, df, p_raw: two_sided_p(t, df), degenerate: false })
}

/// Two-sided Student t-test with pooled variance on `mean(b) - mean(a)`.
pub fn independent_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    let (na, nb) = (a.len(), b.len());
    if na < 2 || nb < 2 {
        return Err(Error::domain("independent t-test needs at least two samples per group"));
    }
    let (ma, mb) = (mean(a), mean(b));
    let df = (na + nb - 2) as f64;
    let pooled = (sum_sq_dev(a, ma) + sum_sq_dev(b, mb)) / df;
    let m = mb - ma;
    if pooled == 0.0 {
        return Ok(degenerate(TestKind::Independent, na.min(nb), m, df));
    }
    let se = (pooled * (1.0 / na as f64 + 1.0 / nb as f64)).sqrt();
    let t = m / se;
    Ok(TTest {
        kind: TestKind::Independent,
        n: na.min(nb),
        mean_diff: m,
        t_stat: t,
        df,
        p_raw: two_sided_p(t, df),
        degenerate: false,
    })
}

pub fn t_test(kind: TestKind, a: &[f64], b: &[f64]) -> Result<TTest> {
    match kind {
        TestKind::Paired => paired_t_test(a, b),
        TestKind::Independent => independent_t_test(a, b),
    }
}

/// CDF of the noncentral t distribution, `P(T <= t)` (Lenth's series).
pub fn noncentral_t_cdf(t: f64, df: f64, delta: f64) -> f64 {
    const ERRMAX: f64 = 1e-12;
    const ITRMAX: f64 = 2000.0;
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");

    let (tt, del, negdel) = if t < 0.0 { (-t, -delta, true) } else { (t, delta, false) };
    let mut tnc = 0.0;
    let x = tt * tt / (tt * tt + df);
    if x > 0.0 {
        let lambda = del * del;
        let mut p = 0.5 * (-0.5 * lambda).exp();
        let mut q = (2.0 / std::f64::consts::PI).sqrt() * p * del;
        let mut s = 0.5 - p;
        let mut a = 0.5;
        let b = 0.5 * df;
        let rxb = (1.0 - x).powf(b);
        let albeta = std::f64::consts::PI.sqrt().ln() + ln_gamma(b) - ln_gamma(a + b);
        let mut xodd = beta_reg(a, b, x);
        let mut godd = 2.0 * rxb * (a * x.ln() - albeta).exp();
        let mut xeven = 1.0 - rxb;
        let mut geven = b * x * rxb;
        tnc = p * xodd + q * xeven;
        let mut en = 1.0;
        loop {
            a += 1.0;
            xodd -= godd;
            xeven -= geven;
            godd *= x * (a + b - 1.0) / a;
            geven *= x * (a + b - 0.5) / (a + 0.5);
            p *= lambda / (2.0 * en);
            q *= lambda / (2.0 * en + 1.0);
            s -= p;
            en += 1.0;
            tnc += p * xodd + q * xeven;
            let errbd = 2.0 * s * (xodd - godd);
            if errbd <= ERRMAX || en > ITRMAX {
                break;
            }
        }
    }
    tnc += std_normal.cdf(-del);
    let tnc = if negdel { 1.0 - tnc } else { tnc };
    tnc.clamp(0.0, 1.0)
}

/// Power of a two-sided two-sample t-test with `n` per group.
pub fn two_sample_power(effect: f64, n: usize, alpha: f64) -> f64 {
    let df = (2 * n - 2) as f64;
    let crit = StudentsT::new(0.0, 1.0, df).expect("df > 0").inverse_cdf(1.0 - alpha / 2.0);
    let nc = effect * (n as f64 / 2.0).sqrt();
    (1.0 - noncentral_t_cdf(crit, df, nc)) + noncentral_t_cdf(-crit, df, nc)
}

/// Smallest per-group sample size reaching `power` for Cohen's `effect`.
pub fn required_sample_size(effect: f64, alpha: f64, power: f64) -> Result<usize> {
    const MAX_N: usize = 10_000_000;
    if !(effect > 0.0 && effect.is_finite()) {
        return Err(Error::domain(format!("effect size must be positive, got {effect}")));
    }
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(0.0 < power && power < 1.0) {
        return Err(Error::domain(format!("power {power} is unreachable")));
    }
    let reaches = |n: usize| two_sample_power(effect, n, alpha) >= power;
    if reaches(2) {
        return Ok(2);
    }
    let mut hi = 4;
    while !reaches(hi) {
        if hi >= MAX_N {
            return Err(Error::domain(format!("power {power} not reached below n = {MAX_N}")));
        }
        hi *= 2;
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if reaches(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
