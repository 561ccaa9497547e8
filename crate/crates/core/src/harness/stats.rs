//! Paired and group tests used to compare conditions.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("input is empty")]
    Empty,
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("differences have zero variance")]
    ZeroVariance,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("p value {0} outside [0, 1]")]
    PValueRange(f64),
    #[error("score {0} outside 1..5")]
    ScoreRange(u8),
    #[error("contingency table must be square and non-empty")]
    NotSquare,
    #[error("contingency table has zero total")]
    ZeroTotal,
    #[error("chance agreement is 1; kappa is undefined")]
    Degenerate,
}

/// Largest n handled by exact enumeration.
pub const WILCOXON_EXACT_MAX: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of positive differences.
    pub w: f64,
    pub p: f64,
    /// Pairs left after dropping zero differences.
    pub n: usize,
    /// Normal-approximation statistic; `None` on the exact path.
    pub z: Option<f64>,
}

fn differences(a: &[f64], b: &[f64]) -> Result<Vec<f64>, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(StatsError::Empty);
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(a.iter().zip(b).map(|(x, y)| x - y).collect())
}

/// Average ranks (1-based) and the sizes of tie groups.
pub fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &k in &idx[start..end] {
            ranks[k] = avg;
        }
        ties.push(end - start);
        start = end;
    }
    (ranks, ties)
}

/// Two-sided Wilcoxon signed-rank test on `a − b`.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult, StatsError> {
    let d: Vec<f64> = differences(a, b)?.into_iter().filter(|x| *x != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return Ok(WilcoxonResult { w: 0.0, p: 1.0, n: 0, z: None });
    }
    let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    let (ranks, ties) = midranks(&abs);
    let w: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();

    if n <= WILCOXON_EXACT_MAX {
        // Midranks are multiples of 1/2, so doubled ranks are integers and
        // the null distribution of 2W is a subset-sum count.
        let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
        let total: usize = doubled.iter().sum();
        let mut counts = vec![0.0f64; total + 1];
        counts[0] = 1.0;
        for &r in &doubled {
            for s in (r..=total).rev() {
                counts[s] += counts[s - r];
            }
        }
        let w2 = (w * 2.0).round() as usize;
        let lower: f64 = counts[..=w2].iter().sum();
        let upper: f64 = counts[w2..].iter().sum();
        let p = (2.0 * lower.min(upper) / 2f64.powi(n as i32)).min(1.0);
        return Ok(WilcoxonResult { w, p, n, z: None });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    if var <= 0.0 {
        return Ok(WilcoxonResult { w, p: 1.0, n, z: Some(0.0) });
    }
    let z = (w - mean) / var.sqrt();
    let p = libm::erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0);
    Ok(WilcoxonResult { w, p, n, z: Some(z) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub p: f64,
    pub df: f64,
}

/// Paired t test on `a − b`.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<TTestResult, StatsError> {
    let d = differences(a, b)?;
    let n = d.len();
    if n < 2 {
        return Err(StatsError::TooFew { needed: 2, got: n });
    }
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    if var == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let t = mean / (var / nf).sqrt();
    let df = nf - 1.0;
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(TTestResult { t, p, df })
}

/// Holm step-down adjustment; output is in input order.
pub fn holm_correct(ps: &[f64]) -> Result<Vec<f64>, StatsError> {
    if let Some(&bad) = ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(StatsError::PValueRange(bad));
    }
    let m = ps.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| ps[i].total_cmp(&ps[j]).then(i.cmp(&j)));
    let mut adjusted = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (k, &i) in order.iter().enumerate() {
        running = running.max(((m - k) as f64 * ps[i]).min(1.0));
        adjusted[i] = running;
    }
    Ok(adjusted)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrownForsytheResult {
    pub f: f64,
    pub p: f64,
    pub df_between: f64,
    pub df_within: f64,
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// One-way ANOVA on absolute deviations from each group's median.
pub fn brown_forsythe(groups: &[Vec<f64>]) -> Result<BrownForsytheResult, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFew { needed: 2, got: groups.len() });
    }
    if let Some(g) = groups.iter().find(|g| g.len() < 2) {
        return Err(StatsError::TooFew { needed: 2, got: g.len() });
    }
    if groups.iter().flatten().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let z: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| {
            let m = median(g);
            g.iter().map(|x| (x - m).abs()).collect()
        })
        .collect();
    let k = z.len() as f64;
    let total_n: f64 = z.iter().map(|g| g.len() as f64).sum();
    let grand = z.iter().flatten().sum::<f64>() / total_n;
    let means: Vec<f64> = z.iter().map(|g| g.iter().sum::<f64>() / g.len() as f64).collect();
    let between: f64 = z
        .iter()
        .zip(&means)
        .map(|(g, m)| g.len() as f64 * (m - grand).powi(2))
        .sum();
    let within: f64 = z
        .iter()
        .zip(&means)
        .map(|(g, m)| g.iter().map(|x| (x - m).powi(2)).sum::<f64>())
        .sum();
    let df_between = k - 1.0;
    let df_within = total_n - k;
    let (f, p) = if between == 0.0 {
        (0.0, 1.0)
    } else if within == 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        let f = (between / df_between) / (within / df_within);
        let dist = FisherSnedecor::new(df_between, df_within).expect("positive degrees of freedom");
        (f, dist.sf(f))
    };
    Ok(BrownForsytheResult { f, p, df_between, df_within })
}

/// κ = (p_o − p_e) / (1 − p_e) for a square rater-by-rater count table.
pub fn cohens_kappa(table: &[Vec<u64>]) -> Result<f64, StatsError> {
    let k = table.len();
    if k == 0 || table.iter().any(|row| row.len() != k) {
        return Err(StatsError::NotSquare);
    }
    let total: u64 = table.iter().flatten().sum();
    if total == 0 {
        return Err(StatsError::ZeroTotal);
    }
    let n = total as f64;
    let p_o = (0..k).map(|i| table[i][i] as f64).sum::<f64>() / n;
    let p_e: f64 = (0..k)
        .map(|i| {
            let row: u64 = table[i].iter().sum();
            let col: u64 = table.iter().map(|r| r[i]).sum();
            (row as f64 / n) * (col as f64 / n)
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Err(StatsError::Degenerate);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}
