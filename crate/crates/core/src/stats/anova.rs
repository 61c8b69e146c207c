//! One-way ANOVA with Tukey HSD post hoc comparisons and a compact letter
//! display.
//!
//! Tukey p-values come from the studentized range distribution evaluated by
//! double Gauss-Legendre quadrature:
//! `F(q; k, ν) = ∫₀^∞ f_ν(s) · P_k(q·s) ds` with
//! `P_k(x) = k ∫ φ(z) [Φ(z) − Φ(z−x)]^{k−1} dz` and `s = √(χ²_ν/ν)`.
//! Critical values are cached per `(k, df)`.

use super::InferenceError;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, FisherSnedecor};
use statrs::function::gamma::ln_gamma;
use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

#[derive(Debug, Clone, Serialize)]
pub struct GroupSummary {
    pub label: String,
    pub n: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TukeyComparison {
    /// Indices into the group list.
    pub a: usize,
    pub b: usize,
    pub q: f64,
    pub p: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnovaResult {
    pub f: f64,
    pub p: f64,
    pub df_between: usize,
    pub df_within: usize,
    /// Zero within-group variance with equal means: the F ratio is 0/0.
    pub degenerate: bool,
    pub groups: Vec<GroupSummary>,
    pub comparisons: Vec<TukeyComparison>,
    /// Compact letter display per group: groups sharing a letter are not
    /// significantly different at the given alpha.
    pub letters: Vec<String>,
    pub alpha: f64,
}

/// One-way ANOVA over labeled samples with Tukey HSD pairwise comparisons
/// (Tukey-Kramer under unequal group sizes) at level `alpha`.
pub fn anova_tukey(
    groups: &[(String, Vec<f64>)],
    alpha: f64,
) -> Result<AnovaResult, InferenceError> {
    let k = groups.len();
    if k < 2 {
        return Err(InferenceError::TooFewGroups);
    }
    if k > 16 {
        return Err(InferenceError::TooManyGroups(k));
    }
    for (label, sample) in groups {
        if sample.len() < 2 {
            return Err(InferenceError::GroupTooSmall(label.clone()));
        }
    }
    let n_total: usize = groups.iter().map(|(_, s)| s.len()).sum();
    let grand_mean: f64 =
        groups.iter().flat_map(|(_, s)| s.iter()).sum::<f64>() / n_total as f64;
    let summaries: Vec<GroupSummary> = groups
        .iter()
        .map(|(label, s)| GroupSummary {
            label: label.clone(),
            n: s.len(),
            mean: s.iter().sum::<f64>() / s.len() as f64,
        })
        .collect();

    let ss_between: f64 = summaries
        .iter()
        .map(|g| g.n as f64 * (g.mean - grand_mean).powi(2))
        .sum();
    let ss_within: f64 = groups
        .iter()
        .zip(&summaries)
        .map(|((_, s), g)| s.iter().map(|v| (v - g.mean).powi(2)).sum::<f64>())
        .sum();
    let df_between = k - 1;
    let df_within = n_total - k;
    let ms_between = ss_between / df_between as f64;
    let ms_within = ss_within / df_within as f64;

    let scale = groups
        .iter()
        .flat_map(|(_, s)| s.iter())
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(1.0);
    let zero_within = ms_within <= f64::EPSILON * scale * scale;
    let means_equal = summaries
        .iter()
        .all(|g| (g.mean - grand_mean).abs() <= 1e-12 * scale);

    let (f, p, degenerate) = if zero_within {
        if means_equal {
            (0.0, 1.0, true)
        } else {
            (f64::INFINITY, 0.0, false)
        }
    } else {
        let f = ms_between / ms_within;
        let dist = FisherSnedecor::new(df_between as f64, df_within as f64)
            .expect("positive degrees of freedom");
        (f, 1.0 - dist.cdf(f), false)
    };

    // Tukey-Kramer pairwise comparisons.
    let mut comparisons = Vec::new();
    for a in 0..k {
        for b in (a + 1)..k {
            let (ga, gb) = (&summaries[a], &summaries[b]);
            let diff = (ga.mean - gb.mean).abs();
            let (q, p_pair) = if zero_within {
                if diff <= 1e-12 * scale {
                    (0.0, 1.0)
                } else {
                    (f64::INFINITY, 0.0)
                }
            } else {
                let se = (ms_within / 2.0 * (1.0 / ga.n as f64 + 1.0 / gb.n as f64)).sqrt();
                let q = diff / se;
                (q, 1.0 - studentized_range_cdf(q, k, df_within as f64))
            };
            comparisons.push(TukeyComparison {
                a,
                b,
                q,
                p: p_pair,
                significant: p_pair < alpha,
            });
        }
    }

    let letters = letter_display(k, &summaries, &comparisons);

    Ok(AnovaResult {
        f,
        p,
        df_between,
        df_within,
        degenerate,
        groups: summaries,
        comparisons,
        letters,
        alpha,
    })
}

/// Compact letter display: maximal cliques of the non-significance graph
/// get letters in order of their best (highest-mean) member.
fn letter_display(
    k: usize,
    summaries: &[GroupSummary],
    comparisons: &[TukeyComparison],
) -> Vec<String> {
    let mut differs = vec![vec![false; k]; k];
    for c in comparisons {
        if c.significant {
            differs[c.a][c.b] = true;
            differs[c.b][c.a] = true;
        }
    }
    let compatible = |set: u32| -> bool {
        for (i, row) in differs.iter().enumerate() {
            if set & (1 << i) == 0 {
                continue;
            }
            for (j, &apart) in row.iter().enumerate().skip(i + 1) {
                if set & (1 << j) != 0 && apart {
                    return false;
                }
            }
        }
        true
    };
    // Maximal compatible subsets.
    let mut cliques: Vec<u32> = Vec::new();
    for set in 1u32..(1 << k) {
        if !compatible(set) {
            continue;
        }
        let mut maximal = true;
        for extra in 0..k {
            if set & (1 << extra) == 0 && compatible(set | (1 << extra)) {
                maximal = false;
                break;
            }
        }
        if maximal {
            cliques.push(set);
        }
    }
    // Order cliques by the highest group mean they contain, descending.
    cliques.sort_by(|&a, &b| {
        let best = |set: u32| {
            (0..k)
                .filter(|i| set & (1 << i) != 0)
                .map(|i| summaries[i].mean)
                .fold(f64::NEG_INFINITY, f64::max)
        };
        best(b).partial_cmp(&best(a)).unwrap()
    });
    let mut letters = vec![String::new(); k];
    for (li, &set) in cliques.iter().enumerate() {
        let ch = (b'a' + li as u8) as char;
        for (i, letter) in letters.iter_mut().enumerate() {
            if set & (1 << i) != 0 {
                letter.push(ch);
            }
        }
    }
    letters
}

/// CDF of the studentized range distribution with `k` groups and `df` error
/// degrees of freedom.
pub fn studentized_range_cdf(q: f64, k: usize, df: f64) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    if !q.is_finite() {
        return 1.0;
    }
    // Large df: the scale factor s is essentially 1.
    if df > 5000.0 {
        return p_range_given_scale(q, k);
    }
    // Outer integral over the χ/√df scale density: three Gauss-Legendre
    // segments around the mode at s ≈ 1.
    let sigma = 1.0 / (2.0 * df).sqrt();
    let hi = 1.0 + 12.0 / df.sqrt();
    let a = (1.0 - 10.0 * sigma).max(0.0);
    let b = (1.0 + 10.0 * sigma).min(hi);
    // log normalizing constant of the density of s = √(χ²_ν/ν):
    // f(s) = C · s^{ν−1} e^{−ν s²/2},  ln C = (ν/2)ln(ν/2) − lnΓ(ν/2) + ln 2.
    let half = df / 2.0;
    let ln_c = half * half.ln() - ln_gamma(half) + std::f64::consts::LN_2;
    let density = |s: f64| -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        (ln_c + (df - 1.0) * s.ln() - df * s * s / 2.0).exp()
    };
    let mut total = 0.0;
    for (lo, hi, nodes) in [(0.0, a, 48), (a, b, 128), (b, hi, 48)] {
        if hi > lo {
            total += gauss_legendre(lo, hi, nodes, |s| density(s) * p_range_given_scale(q * s, k));
        }
    }
    total.clamp(0.0, 1.0)
}

/// Probability that the range of `k` iid standard normals is at most `x`.
fn p_range_given_scale(x: f64, k: usize) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let phi = |z: f64| (-z * z / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let cdf = |z: f64| 0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2);
    let lo = -8.5;
    let hi = 8.5 + x;
    let integrand =
        |z: f64| phi(z) * (cdf(z) - cdf(z - x)).max(0.0).powi(k as i32 - 1);
    (k as f64 * gauss_legendre(lo, hi, 192, integrand)).clamp(0.0, 1.0)
}

/// Tukey critical value `q` with `F(q; k, df) = 1 − alpha`, cached per
/// `(k, df)` at the 5% level.
pub fn tukey_critical(alpha: f64, k: usize, df: usize) -> f64 {
    type CriticalCache = Mutex<HashMap<(usize, usize, u64), f64>>;
    static CACHE: OnceLock<CriticalCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (k, df, alpha.to_bits());
    if let Some(&v) = cache.lock().unwrap().get(&key) {
        return v;
    }
    let target = 1.0 - alpha;
    let (mut lo, mut hi) = (1e-6, 100.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if studentized_range_cdf(mid, k, df as f64) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let q = 0.5 * (lo + hi);
    cache.lock().unwrap().insert(key, q);
    q
}

/// Gauss-Legendre quadrature of `f` over `[a, b]`.
fn gauss_legendre(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let (nodes, weights) = legendre_rule(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = 0.0;
    for (&x, &w) in nodes.iter().zip(weights.iter()) {
        acc += w * f(mid + half * x);
    }
    acc * half
}

/// Nodes and weights of the n-point Legendre rule on [−1, 1], cached.
fn legendre_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    type RuleCache = Mutex<HashMap<usize, (Vec<f64>, Vec<f64>)>>;
    static CACHE: OnceLock<RuleCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(rule) = cache.lock().unwrap().get(&n) {
        return rule.clone();
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Newton iteration from the Chebyshev estimate.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    cache.lock().unwrap().insert(n, (nodes.clone(), weights.clone()));
    (nodes, weights)
}
