//! Small hypothesis tests used by the simulation checks.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF, StudentsT};

use crate::error::{Error, Result};

/// Cells with fewer expected counts than this are pooled before a
/// goodness-of-fit test.
pub const MIN_EXPECTED_COUNT: f64 = 5.0;

/// Exact permutation p-values are used up to this many points.
pub const EXACT_TREND_LIMIT: usize = 10;

/// One-sided sign test: `P(X >= wins)` for `X ~ Binomial(n, 1/2)`.
pub fn sign_test(wins: u64, n: u64) -> Result<f64> {
    if wins > n {
        return Err(Error::arg(format!("{wins} wins out of {n} trials")));
    }
    if wins == 0 {
        return Ok(1.0);
    }
    let b = Binomial::new(0.5, n).map_err(|e| Error::arg(e.to_string()))?;
    Ok(b.sf(wins - 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoodnessOfFit {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Observed and expected counts after pooling sparse cells.
fn pooled(observed: &[u64], probabilities: &[f64]) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
    if observed.len() != probabilities.len() || observed.is_empty() {
        return Err(Error::arg("observed counts and probabilities differ in length"));
    }
    if probabilities.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(Error::arg("probabilities must be finite and non-negative"));
    }
    let total: u64 = observed.iter().sum();
    let mass: f64 = probabilities.iter().sum();
    if total == 0 || !(mass > 0.0) {
        return Err(Error::arg("need positive counts and probability mass"));
    }
    // Any count in an impossible cell rejects outright.
    if observed.iter().zip(probabilities).any(|(&o, &p)| p == 0.0 && o > 0) {
        return Ok(None);
    }
    let n = total as f64;
    let mut cells: Vec<(f64, f64)> = observed
        .iter()
        .zip(probabilities)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&o, &p)| (o as f64, n * p / mass))
        .collect();
    cells.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut obs = Vec::new();
    let mut exp = Vec::new();
    let (mut acc_o, mut acc_e) = (0.0, 0.0);
    for (o, e) in cells {
        acc_o += o;
        acc_e += e;
        if acc_e >= MIN_EXPECTED_COUNT {
            obs.push(acc_o);
            exp.push(acc_e);
            acc_o = 0.0;
            acc_e = 0.0;
        }
    }
    if acc_e > 0.0 {
        match (obs.last_mut(), exp.last_mut()) {
            (Some(o), Some(e)) => {
                *o += acc_o;
                *e += acc_e;
            }
            _ => {
                obs.push(acc_o);
                exp.push(acc_e);
            }
        }
    }
    Ok(Some((obs, exp)))
}

fn finish(statistic: f64, bins: usize) -> GoodnessOfFit {
    let dof = bins.saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        ChiSquared::new(dof as f64).expect("positive dof").sf(statistic)
    };
    GoodnessOfFit {
        statistic,
        dof,
        p_value,
    }
}

/// Likelihood-ratio goodness-of-fit test of counts against probabilities.
/// Cells expecting fewer than [`MIN_EXPECTED_COUNT`] are pooled.
pub fn g_test(observed: &[u64], probabilities: &[f64]) -> Result<GoodnessOfFit> {
    let Some((obs, exp)) = pooled(observed, probabilities)? else {
        return Ok(GoodnessOfFit {
            statistic: f64::INFINITY,
            dof: observed.len() - 1,
            p_value: 0.0,
        });
    };
    let g = 2.0
        * obs
            .iter()
            .zip(&exp)
            .filter(|(o, _)| **o > 0.0)
            .map(|(o, e)| o * (o / e).ln())
            .sum::<f64>();
    Ok(finish(g.max(0.0), obs.len()))
}

/// Pearson chi-square goodness-of-fit test with the same pooling as
/// [`g_test`].
pub fn chi_square_test(observed: &[u64], probabilities: &[f64]) -> Result<GoodnessOfFit> {
    let Some((obs, exp)) = pooled(observed, probabilities)? else {
        return Ok(GoodnessOfFit {
            statistic: f64::INFINITY,
            dof: observed.len() - 1,
            p_value: 0.0,
        });
    };
    let x2 = obs.iter().zip(&exp).map(|(o, e)| (o - e) * (o - e) / e).sum();
    Ok(finish(x2, obs.len()))
}

/// Fractional ranks (1-based, ties get their average rank).
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation; `None` when either input has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "paired samples");
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendTest {
    /// Spearman correlation between position and value.
    pub rho: f64,
    /// One-sided p-value for an increasing trend.
    pub p_value: f64,
    pub exact: bool,
}

/// Visits every permutation of `items` (Heap's algorithm).
fn for_each_permutation(items: &mut [f64], mut visit: impl FnMut(&[f64])) {
    let n = items.len();
    let mut c = vec![0usize; n];
    visit(items);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                items.swap(0, i);
            } else {
                items.swap(c[i], i);
            }
            visit(items);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// Spearman trend test of `values` against their order, one-sided for an
/// increasing trend. Exact over all permutations for up to
/// [`EXACT_TREND_LIMIT`] points, otherwise a t approximation. Negate the
/// values to test for a decreasing trend.
pub fn spearman_trend_test(values: &[f64]) -> Result<TrendTest> {
    let n = values.len();
    if n < 3 {
        return Err(Error::arg("trend test needs at least 3 points"));
    }
    let positions: Vec<f64> = (1..=n).map(|i| i as f64).collect();
    let ranks = average_ranks(values);
    let rho = pearson(&positions, &ranks)
        .ok_or_else(|| Error::UndefinedCorrelation("all values are equal".into()))?;
    // With fixed positions, rho is an increasing function of sum(i * rank_i).
    let score = |r: &[f64]| r.iter().zip(&positions).map(|(a, b)| a * b).sum::<f64>();
    if n <= EXACT_TREND_LIMIT {
        let observed = score(&ranks);
        let (mut hits, mut total) = (0u64, 0u64);
        let mut perm = ranks.clone();
        for_each_permutation(&mut perm, |p| {
            total += 1;
            if score(p) >= observed - 1e-9 {
                hits += 1;
            }
        });
        return Ok(TrendTest {
            rho,
            p_value: hits as f64 / total as f64,
            exact: true,
        });
    }
    let df = (n - 2) as f64;
    let p_value = if rho >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        StudentsT::new(0.0, 1.0, df).expect("positive df").sf(t)
    };
    Ok(TrendTest {
        rho,
        p_value,
        exact: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_test_values() {
        assert!((sign_test(5, 5).unwrap() - 1.0 / 32.0).abs() < 1e-12);
        assert!((sign_test(7, 8).unwrap() - 9.0 / 256.0).abs() < 1e-12);
        assert_eq!(sign_test(0, 4).unwrap(), 1.0);
        assert!(sign_test(5, 4).is_err());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn exact_trend_for_monotone_sequence() {
        let t = spearman_trend_test(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(t.rho, 1.0);
        assert!((t.p_value - 1.0 / 720.0).abs() < 1e-15);
        let down = spearman_trend_test(&[6.0, 5.0, 4.0, 3.0, 2.0, 1.0]).unwrap();
        assert_eq!(down.p_value, 1.0);
        assert!(spearman_trend_test(&[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn perfect_fit_has_high_p() {
        let fit = g_test(&[25, 25, 25, 25], &[0.25; 4]).unwrap();
        assert_eq!(fit.statistic, 0.0);
        assert_eq!(fit.dof, 3);
        assert!((fit.p_value - 1.0).abs() < 1e-12);
        let bad = chi_square_test(&[100, 0, 0, 0], &[0.25; 4]).unwrap();
        assert!(bad.p_value < 1e-10);
        assert_eq!(g_test(&[1, 1], &[1.0, 0.0]).unwrap().p_value, 0.0);
    }

    #[test]
    fn sparse_cells_are_pooled() {
        let fit = g_test(&[990, 4, 3, 3], &[0.99, 0.004, 0.003, 0.003]).unwrap();
        assert_eq!(fit.dof, 1);
        assert!(fit.p_value > 0.5);
    }
}
