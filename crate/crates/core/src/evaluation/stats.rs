//! Friedman rank test with Nemenyi and Bonferroni-Dunn post-hoc comparisons.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};

/// Natural log of the gamma function (Lanczos, g = 7, nine terms).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let mut a = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

const GAMMA_EPS: f64 = 1e-16;
const GAMMA_MAX_ITER: usize = 10_000;

/// Lower regularized incomplete gamma `P(a, x)` by its power series.
fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    for n in 1..GAMMA_MAX_ITER {
        term *= x / (a + n as f64);
        sum += term;
        if term.abs() < sum.abs() * GAMMA_EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// Upper regularized incomplete gamma `Q(a, x)` by Lentz's continued fraction.
fn gamma_q_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..GAMMA_MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < GAMMA_EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Upper regularized incomplete gamma `Q(a, x) = Γ(a, x) / Γ(a)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    assert!(a > 0.0, "gamma_q needs a > 0");
    if x <= 0.0 {
        1.0
    } else if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_fraction(a, x)
    }
}

/// Survival function of the chi-square distribution.
pub fn chi_square_sf(statistic: f64, dof: f64) -> f64 {
    gamma_q(dof / 2.0, statistic / 2.0).clamp(0.0, 1.0)
}

/// Complementary error function via `erfc(y) = Q(1/2, y²)` for `y ≥ 0`.
pub fn erfc(y: f64) -> f64 {
    if y >= 0.0 {
        gamma_q(0.5, y * y)
    } else {
        2.0 - gamma_q(0.5, y * y)
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal upper tail `1 − Φ(x)` without cancellation.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Critical values of the Studentized range statistic divided by √2, for
/// `k = 2..=10` compared methods.
pub const NEMENYI_Q_005: [f64; 9] = [1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164];
pub const NEMENYI_Q_010: [f64; 9] = [1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920];

pub fn nemenyi_q(k: usize, alpha: f64) -> Result<f64> {
    if !(2..=10).contains(&k) {
        return Err(Error::Unsupported(format!("Nemenyi table covers 2..=10 methods, got {k}")));
    }
    let table = if (alpha - 0.05).abs() < 1e-12 {
        &NEMENYI_Q_005
    } else if (alpha - 0.10).abs() < 1e-12 {
        &NEMENYI_Q_010
    } else {
        return Err(Error::Unsupported(format!("Nemenyi table covers alpha 0.05 and 0.10, got {alpha}")));
    };
    Ok(table[k - 2])
}

/// `CD = q_α·√(k(k+1)/(6n))`.
pub fn critical_difference(k: usize, n: usize, alpha: f64) -> Result<f64> {
    Ok(nemenyi_q(k, alpha)? * rank_standard_error(k, n))
}

fn rank_standard_error(k: usize, n: usize) -> f64 {
    ((k * (k + 1)) as f64 / (6.0 * n as f64)).sqrt()
}

/// `P(R ≤ q)` for the range `R` of `k` independent standard normals
/// (Studentized range with infinite degrees of freedom).
pub fn studentized_range_cdf(q: f64, k: usize) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    // k ∫ φ(z) [Φ(z) − Φ(z − q)]^(k−1) dz by composite Simpson on [−9, 9]
    let steps = 4000;
    let (lo, hi) = (-9.0, 9.0);
    let h = (hi - lo) / steps as f64;
    let f = |z: f64| {
        let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        phi * (normal_cdf(z) - normal_cdf(z - q)).max(0.0).powi(k as i32 - 1)
    };
    let mut acc = f(lo) + f(hi);
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + i as f64 * h);
    }
    (k as f64 * acc * h / 3.0).clamp(0.0, 1.0)
}

/// Within-row ranks, 1 for the highest score, ties sharing their average rank.
pub fn rank_row(row: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
    let mut ranks = vec![0.0; row.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && row[order[j + 1]] == row[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Upper bound on `states × row permutations` per row of the exact enumeration.
pub const EXACT_WORK_LIMIT: usize = 20_000_000;

fn permutations(items: &[i64]) -> Vec<Vec<i64>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Exact p-value of the Friedman statistic under independent, uniformly
/// random within-row permutations of each row's ranks.
///
/// Rank sums are enumerated row by row. Returns `None` when the enumeration
/// would exceed [`EXACT_WORK_LIMIT`] or the packed state does not fit 64 bits.
pub fn friedman_exact_p_value(ranks: &[Vec<f64>]) -> Option<f64> {
    let n = ranks.len();
    let k = ranks.first()?.len();
    if k > 8 {
        return None;
    }
    // doubled ranks are integers even with averaged ties
    let max_sum = 2 * n * k;
    let bits = usize::BITS - max_sum.leading_zeros();
    if bits as usize * k > 64 {
        return None;
    }
    let mask = (1u64 << bits) - 1;
    let pack = |v: &[i64]| v.iter().enumerate().fold(0u64, |acc, (j, &r)| acc | (r as u64) << (j as u32 * bits));
    let unpack_sq = |s: u64| (0..k).map(|j| ((s >> (j as u32 * bits)) & mask) as i64).map(|v| v * v).sum::<i64>();

    let mut observed = vec![0i64; k];
    let mut dist: HashMap<u64, f64> = HashMap::from([(0, 1.0)]);
    for row in ranks {
        let doubled: Vec<i64> = row.iter().map(|r| (2.0 * r).round() as i64).collect();
        for (o, r) in observed.iter_mut().zip(&doubled) {
            *o += r;
        }
        let perms = permutations(&doubled);
        let weight = 1.0 / perms.len() as f64;
        let mut moves: HashMap<u64, f64> = HashMap::new();
        for p in &perms {
            *moves.entry(pack(p)).or_default() += weight;
        }
        if dist.len().saturating_mul(moves.len()) > EXACT_WORK_LIMIT {
            return None;
        }
        let mut next: HashMap<u64, f64> = HashMap::with_capacity(dist.len() * moves.len().min(8));
        for (&state, &p) in &dist {
            for (&m, &w) in &moves {
                *next.entry(state + m).or_default() += p * w;
            }
        }
        dist = next;
    }
    let threshold: i64 = observed.iter().map(|v| v * v).sum();
    if dist.keys().all(|&s| unpack_sq(s) >= threshold) {
        return Some(1.0);
    }
    let tail: f64 = dist.iter().filter(|(&s, _)| unpack_sq(s) >= threshold).map(|(_, p)| p).sum();
    Some(tail.clamp(0.0, 1.0))
}

/// How [`StatTestResult::p_value`] was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PValueMethod {
    /// Exact within-row permutation distribution.
    Exact,
    /// Chi-square approximation with `k − 1` degrees of freedom.
    ChiSquare,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "test", rename_all = "kebab-case")]
pub enum PostHoc {
    /// Two-tailed pairwise comparison at the critical difference.
    Nemenyi {
        critical_difference: f64,
        p_values: Vec<Vec<f64>>,
        significant: Vec<Vec<bool>>,
    },
    /// One-tailed comparison of every method against a control.
    BonferroniDunn {
        control: usize,
        z: Vec<f64>,
        p_uncorrected: Vec<f64>,
        p_values: Vec<f64>,
        significant: Vec<bool>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatTestResult {
    pub methods: Vec<String>,
    pub n: usize,
    pub k: usize,
    pub friedman_statistic: f64,
    /// Exact permutation p-value when enumerable, the chi-square value otherwise.
    pub p_value: f64,
    pub p_value_method: PValueMethod,
    pub p_value_chi_square: f64,
    pub mean_ranks: Vec<f64>,
    pub alpha: f64,
    pub posthoc: Option<PostHoc>,
}

/// Friedman test on an `n × k` score matrix where higher scores are better.
pub fn friedman_test(scores: &[Vec<f64>]) -> Result<StatTestResult> {
    let n = scores.len();
    let k = scores.first().map_or(0, |r| r.len());
    if n < 2 || k < 2 {
        return Err(config(format!("Friedman test needs at least 2 rows and 2 methods, got {n}×{k}")));
    }
    if scores.iter().any(|r| r.len() != k || r.iter().any(|v| !v.is_finite())) {
        return Err(config("score rows must have equal length and finite values"));
    }
    let ranks: Vec<Vec<f64>> = scores.iter().map(|r| rank_row(r)).collect();
    let mut rank_sums = vec![0.0; k];
    for row in &ranks {
        for (m, r) in rank_sums.iter_mut().zip(row) {
            *m += r;
        }
    }
    let (nf, kf) = (n as f64, k as f64);
    let mean_ranks: Vec<f64> = rank_sums.iter().map(|s| s / nf).collect();
    // rank-sum form of the statistic
    let sum_sq: f64 = rank_sums.iter().map(|s| s * s).sum();
    let statistic = (12.0 * sum_sq / (nf * kf * (kf + 1.0)) - 3.0 * nf * (kf + 1.0)).max(0.0);
    let statistic = if rank_sums.iter().all(|&s| s == nf * (kf + 1.0) / 2.0) { 0.0 } else { statistic };
    let chi_square = chi_square_sf(statistic, kf - 1.0);
    let (p_value, p_value_method) = match friedman_exact_p_value(&ranks) {
        Some(p) => (p, PValueMethod::Exact),
        None => (chi_square, PValueMethod::ChiSquare),
    };
    Ok(StatTestResult {
        methods: (0..k).map(|j| format!("method{j}")).collect(),
        n,
        k,
        friedman_statistic: statistic,
        p_value,
        p_value_method,
        p_value_chi_square: chi_square,
        mean_ranks,
        alpha: 0.05,
        posthoc: None,
    })
}

/// Pairwise Nemenyi comparison of mean ranks.
pub fn nemenyi_posthoc(mean_ranks: &[f64], n: usize, alpha: f64) -> Result<PostHoc> {
    let k = mean_ranks.len();
    let cd = critical_difference(k, n, alpha)?;
    let se = rank_standard_error(k, n);
    let mut p_values = vec![vec![1.0; k]; k];
    let mut significant = vec![vec![false; k]; k];
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let gap = (mean_ranks[i] - mean_ranks[j]).abs();
            p_values[i][j] = 1.0 - studentized_range_cdf(gap / se * std::f64::consts::SQRT_2, k);
            significant[i][j] = gap > cd;
        }
    }
    Ok(PostHoc::Nemenyi {
        critical_difference: cd,
        p_values,
        significant,
    })
}

/// One-tailed comparison against `control` with Bonferroni correction over `k − 1` tests.
pub fn bonferroni_dunn_posthoc(mean_ranks: &[f64], n: usize, control: usize, alpha: f64) -> Result<PostHoc> {
    let k = mean_ranks.len();
    if control >= k {
        return Err(config(format!("control index {control} out of range for {k} methods")));
    }
    if n == 0 || k < 2 {
        return Err(config("Bonferroni-Dunn needs n ≥ 1 and at least two methods"));
    }
    let se = rank_standard_error(k, n);
    let z: Vec<f64> = mean_ranks.iter().map(|r| (r - mean_ranks[control]) / se).collect();
    let p_uncorrected: Vec<f64> = z.iter().map(|&z| normal_sf(z)).collect();
    let p_values: Vec<f64> = p_uncorrected
        .iter()
        .enumerate()
        .map(|(i, &p)| if i == control { 1.0 } else { (p * (k - 1) as f64).min(1.0) })
        .collect();
    let significant = p_values.iter().enumerate().map(|(i, &p)| i != control && p < alpha).collect();
    Ok(PostHoc::BonferroniDunn {
        control,
        z,
        p_uncorrected,
        p_values,
        significant,
    })
}
