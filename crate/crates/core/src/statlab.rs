//! Non-parametric comparison statistics: Wilcoxon signed-rank test,
//! Benjamini-Hochberg adjustment and Cliff's delta.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Largest effective sample size for which `Auto` enumerates exactly.
pub const EXACT_CUTOFF: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// `min(W+, W−)`.
    pub statistic: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    pub n_effective: usize,
    pub exact: bool,
    /// All differences were zero; `p_value` is 1 by convention.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WilcoxonMethod {
    /// Exact up to [`EXACT_CUTOFF`] non-zero differences, normal above.
    Auto,
    Exact,
    Normal,
}

/// Two-sided Wilcoxon signed-rank test on paired samples.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<TestResult> {
    wilcoxon_with(x, y, WilcoxonMethod::Auto)
}

/// Average ranks (1-based) of `values`, ties sharing the mean rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

pub fn wilcoxon_with(x: &[f64], y: &[f64], method: WilcoxonMethod) -> Result<TestResult> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Argument(format!(
            "paired samples must have equal non-zero length, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Argument("samples must be finite".into()));
    }
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(TestResult {
            statistic: 0.0,
            p_value: 1.0,
            n_effective: 0,
            exact: true,
            degenerate: true,
        });
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let total: f64 = ranks.iter().sum();
    let w_plus: f64 = ranks.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let statistic = w_plus.min(total - w_plus);

    let exact = match method {
        WilcoxonMethod::Auto => n <= EXACT_CUTOFF,
        WilcoxonMethod::Exact => {
            if n > 24 {
                return Err(Error::Argument(format!(
                    "exact enumeration limited to 24 differences, got {n}"
                )));
            }
            true
        }
        WilcoxonMethod::Normal => false,
    };

    let p_value = if exact {
        // count sign assignments at least as extreme as the observed one
        let mut extreme = 0u64;
        for mask in 0u32..(1 << n) {
            let w: f64 = (0..n).filter(|k| mask >> k & 1 == 1).map(|k| ranks[k]).sum();
            if w.min(total - w) <= statistic + 1e-9 {
                extreme += 1;
            }
        }
        extreme as f64 / (1u64 << n) as f64
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut tie_term = 0.0;
        let mut sorted = abs.clone();
        sorted.sort_by(f64::total_cmp);
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i + 1;
            while j < sorted.len() && sorted[j] == sorted[i] {
                j += 1;
            }
            let t = (j - i) as f64;
            tie_term += t * t * t - t;
            i = j;
        }
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
        if var <= 0.0 {
            1.0
        } else {
            let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
            erfc(z / std::f64::consts::SQRT_2)
        }
    };

    Ok(TestResult {
        statistic,
        p_value: p_value.min(1.0),
        n_effective: n,
        exact,
        degenerate: false,
    })
}

/// Benjamini-Hochberg step-up adjustment, returned in input order.
pub fn bh_adjust(p_values: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Argument(format!("p-value {bad} outside [0, 1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        running = running.min(p_values[i] * m as f64 / (rank + 1) as f64);
        adjusted[i] = running.min(1.0);
    }
    Ok(adjusted)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Magnitude {
    Negligible,
    Small,
    Medium,
    Large,
}

impl Magnitude {
    /// Thresholds 0.147 / 0.33 / 0.474; a value on a threshold takes the
    /// larger label.
    pub fn of(delta: f64) -> Self {
        let d = delta.abs();
        if d < 0.147 {
            Magnitude::Negligible
        } else if d < 0.33 {
            Magnitude::Small
        } else if d < 0.474 {
            Magnitude::Medium
        } else {
            Magnitude::Large
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Magnitude::Negligible => "negligible",
            Magnitude::Small => "small",
            Magnitude::Medium => "medium",
            Magnitude::Large => "large",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectSize {
    pub delta: f64,
    pub magnitude: Magnitude,
}

/// Cliff's delta: `(#{x > y} − #{x < y}) / (|x|·|y|)`.
pub fn cliffs_delta(x: &[f64], y: &[f64]) -> Result<EffectSize> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Argument("Cliff's delta needs two non-empty samples".into()));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::Argument("samples must not contain NaN".into()));
    }
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut dominance: i64 = 0;
    for &xi in x {
        let below = sorted.partition_point(|v| *v < xi) as i64;
        let not_above = sorted.partition_point(|v| *v <= xi) as i64;
        let above = sorted.len() as i64 - not_above;
        dominance += below - above;
    }
    let delta = dominance as f64 / (x.len() * y.len()) as f64;
    Ok(EffectSize {
        delta,
        magnitude: Magnitude::of(delta),
    })
}
