use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::AnalyticsError;

/// Largest `n1 * n2` for which the exact permutation distribution is used.
pub const EXACT_MAX_PRODUCT: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MwuMethod {
    ExactPermutation,
    NormalApprox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MannWhitneyResult {
    /// U of the first sample: pairs where it wins, ties counting one half.
    pub u_statistic: f64,
    pub p_two_sided: f64,
    pub method: MwuMethod,
    pub n1: usize,
    pub n2: usize,
    /// All observations identical; `p_two_sided` is 1.
    pub degenerate: bool,
}

fn check_finite(xs: &[f64]) -> Result<(), AnalyticsError> {
    match xs.iter().find(|x| !x.is_finite()) {
        Some(&v) => Err(AnalyticsError::NonFinite(v)),
        None => Ok(()),
    }
}

/// 1-based ranks with ties sharing their average rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j share ranks i+1..=j
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

/// Sizes of groups of tied values.
fn tie_groups(sorted: &[f64]) -> Vec<usize> {
    let mut groups = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        groups.push(j - i);
        i = j;
    }
    groups
}

/// Two-sided Mann-Whitney U test of `a` against `b`.
///
/// Uses the exact permutation distribution of the midrank sum when
/// `n1 * n2 <= 64`, otherwise the normal approximation with tie and
/// continuity corrections.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitneyResult, AnalyticsError> {
    if a.is_empty() || b.is_empty() {
        return Err(AnalyticsError::EmptyClass);
    }
    check_finite(a)?;
    check_finite(b)?;
    let (n1, n2) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let rank_sum_a: f64 = ranks[..n1].iter().sum();
    let u = rank_sum_a - (n1 * (n1 + 1)) as f64 / 2.0;

    let method = if n1 * n2 <= EXACT_MAX_PRODUCT {
        MwuMethod::ExactPermutation
    } else {
        MwuMethod::NormalApprox
    };
    let degenerate = pooled.iter().all(|&x| x == pooled[0]);
    let p = if degenerate {
        1.0
    } else {
        match method {
            MwuMethod::ExactPermutation => exact_p(&ranks, n1),
            MwuMethod::NormalApprox => normal_p(&pooled, u, n1, n2),
        }
    };
    Ok(MannWhitneyResult {
        u_statistic: u,
        p_two_sided: p,
        method,
        n1,
        n2,
        degenerate,
    })
}

/// Normal approximation with tie-corrected variance and a 0.5 continuity
/// correction.
pub fn normal_p(pooled: &[f64], u: f64, n1: usize, n2: usize) -> f64 {
    let n = (n1 + n2) as f64;
    let mut sorted = pooled.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tie_term: f64 = tie_groups(&sorted)
        .into_iter()
        .map(|t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum();
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let variance = n1f * n2f / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if variance <= 0.0 {
        return 1.0;
    }
    let mean = n1f * n2f / 2.0;
    let z = ((u - mean).abs() - 0.5).max(0.0) / variance.sqrt();
    let normal = Normal::standard();
    (2.0 * normal.sf(z)).min(1.0)
}

/// Exact two-sided P from the permutation distribution of the first
/// sample's rank sum. Ranks are doubled so midranks become integers; the
/// distribution is counted by subset-sum dynamic programming.
fn exact_p(ranks: &[f64], n1: usize) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    // counts[k][s]: subsets of size k with doubled rank sum s
    let mut counts = vec![vec![0u64; max_sum + 1]; n1 + 1];
    counts[0][0] = 1;
    for &r in &doubled {
        for k in (1..=n1).rev() {
            let (lower, upper) = counts.split_at_mut(k);
            let prev = &lower[k - 1];
            let cur = &mut upper[0];
            for s in (r..=max_sum).rev() {
                cur[s] += prev[s - r];
            }
        }
    }
    let n = ranks.len();
    // twice the mean doubled rank sum, kept integral
    let centre2 = n1 * (n + 1) * 2;
    let observed: usize = doubled[..n1].iter().sum();
    let observed_dev = (2 * observed).abs_diff(centre2);
    let (mut extreme, mut total) = (0u64, 0u64);
    for (s, &c) in counts[n1].iter().enumerate() {
        total += c;
        if (2 * s).abs_diff(centre2) >= observed_dev {
            extreme += c;
        }
    }
    extreme as f64 / total as f64
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn roc_auc(pos: &[f64], neg: &[f64]) -> Result<f64, AnalyticsError> {
    if pos.is_empty() || neg.is_empty() {
        return Err(AnalyticsError::EmptyClass);
    }
    check_finite(pos)?;
    check_finite(neg)?;
    let mut sorted = neg.to_vec();
    sorted.sort_by(f64::total_cmp);
    // twice the win count keeps half-ties integral
    let twice_wins: u64 = pos
        .iter()
        .map(|&p| {
            let below = sorted.partition_point(|&x| x < p);
            let at_or_below = sorted.partition_point(|&x| x <= p);
            (2 * below + (at_or_below - below)) as u64
        })
        .sum();
    Ok(twice_wins as f64 / 2.0 / (pos.len() as f64 * neg.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use itertools::Itertools;
    use proptest::prelude::*;

    /// Enumerates every labelling of the pooled sample.
    fn brute_force_p(a: &[f64], b: &[f64]) -> f64 {
        let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        let u_of = |idx: &[usize]| -> f64 {
            let mut u = 0.0;
            for (i, &x) in pooled.iter().enumerate() {
                if !idx.contains(&i) {
                    continue;
                }
                for (j, &y) in pooled.iter().enumerate() {
                    if idx.contains(&j) {
                        continue;
                    }
                    u += if x > y {
                        1.0
                    } else if x == y {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
            u
        };
        let mean = (a.len() * b.len()) as f64 / 2.0;
        let observed = u_of(&(0..a.len()).collect::<Vec<_>>());
        let (mut hit, mut total) = (0usize, 0usize);
        for idx in (0..pooled.len()).combinations(a.len()) {
            total += 1;
            if (u_of(&idx) - mean).abs() >= (observed - mean).abs() - 1e-9 {
                hit += 1;
            }
        }
        hit as f64 / total as f64
    }

    #[test]
    fn midrank_ties() {
        assert_eq!(midranks(&[1., 2., 2., 4., 5.]), vec![1., 2.5, 2.5, 4., 5.]);
        assert_eq!(midranks(&[3., 3., 3.]), vec![2., 2., 2.]);
    }

    #[test]
    fn exact_separated_triplets() {
        let r = mann_whitney_u(&[1., 2., 3.], &[4., 5., 6.]).unwrap();
        assert_eq!(r.u_statistic, 0.0);
        assert_eq!(r.p_two_sided, 0.1);
        assert_eq!(r.method, MwuMethod::ExactPermutation);
        assert!(!r.degenerate);
    }

    #[test]
    fn degenerate_input() {
        let r = mann_whitney_u(&[5., 5., 5.], &[5., 5., 5.]).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_two_sided, 1.0);
        let big = vec![0.0; 40];
        let r = mann_whitney_u(&big, &big).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_two_sided, 1.0);
    }

    #[test]
    fn empty_and_nonfinite() {
        assert_eq!(mann_whitney_u(&[], &[1.0]), Err(AnalyticsError::EmptyClass));
        assert!(matches!(
            mann_whitney_u(&[f64::NAN], &[1.0]),
            Err(AnalyticsError::NonFinite(_))
        ));
        assert_eq!(roc_auc(&[1.0], &[]), Err(AnalyticsError::EmptyClass));
    }

    #[test]
    fn exact_matches_brute_force_with_ties() {
        let cases: [(&[f64], &[f64]); 4] = [
            (&[1., 2., 2., 3.], &[2., 4., 5.]),
            (&[0., 0., 1.], &[0., 1., 1., 1.]),
            (&[-1., -1., 0.4], &[-1., 2., 2., 2., -1.]),
            (&[3.], &[1., 2., 3., 4., 5.]),
        ];
        for (a, b) in cases {
            let r = mann_whitney_u(a, b).unwrap();
            assert_eq!(r.method, MwuMethod::ExactPermutation);
            assert!((r.p_two_sided - brute_force_p(a, b)).abs() < 1e-12, "{a:?} {b:?}");
        }
    }

    #[test]
    fn large_samples_use_normal_approx() {
        let a: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..30).map(|i| i as f64 + 100.0).collect();
        let r = mann_whitney_u(&a, &b).unwrap();
        assert_eq!(r.method, MwuMethod::NormalApprox);
        assert!(r.p_two_sided < 1e-9);
    }

    /// Every tie-free split of 16 distinct values into two groups of 8.
    #[test]
    fn normal_approx_close_to_exact_for_eight_by_eight() {
        let values: Vec<f64> = (1..=16).map(f64::from).collect();
        let mut worst: f64 = 0.0;
        for idx in (0..16).combinations(8) {
            let a: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
            let b: Vec<f64> = (0..16).filter(|i| !idx.contains(i)).map(|i| values[i]).collect();
            let r = mann_whitney_u(&a, &b).unwrap();
            let approx = normal_p(&values, r.u_statistic, 8, 8);
            worst = worst.max((approx - r.p_two_sided).abs());
        }
        assert!(worst <= 0.02, "max |Δp| = {worst}");
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.8, 0.3], &[0.5, 0.1]).unwrap(), 0.75);
        assert_eq!(roc_auc(&[0.5], &[0.5]).unwrap(), 0.5);
    }

    fn scores() -> impl Strategy<Value = Vec<f64>> {
        // coarse grid so ties are common
        proptest::collection::vec((-4i32..8).prop_map(|x| x as f64 * 0.25), 1..40)
    }

    proptest! {
        #[test]
        fn auc_is_normalised_u(pos in scores(), neg in scores()) {
            let auc = roc_auc(&pos, &neg).unwrap();
            let u = mann_whitney_u(&pos, &neg).unwrap().u_statistic;
            prop_assert!((auc - u / (pos.len() * neg.len()) as f64).abs() <= 1e-12);
            prop_assert!((auc + roc_auc(&neg, &pos).unwrap() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn auc_matches_pairwise_count(pos in scores(), neg in scores()) {
            let mut wins = 0.0;
            for p in &pos {
                for n in &neg {
                    wins += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
                }
            }
            let want = wins / (pos.len() * neg.len()) as f64;
            prop_assert!((roc_auc(&pos, &neg).unwrap() - want).abs() <= 1e-12);
        }

        #[test]
        fn monotone_transform_invariance(pos in scores(), neg in scores()) {
            let f = |x: &f64| (x * 3.0).exp() + 7.0;
            let tp: Vec<f64> = pos.iter().map(f).collect();
            let tn: Vec<f64> = neg.iter().map(f).collect();
            prop_assert_eq!(roc_auc(&pos, &neg).unwrap(), roc_auc(&tp, &tn).unwrap());
            let a = mann_whitney_u(&pos, &neg).unwrap();
            let b = mann_whitney_u(&tp, &tn).unwrap();
            prop_assert_eq!(a.u_statistic, b.u_statistic);
            prop_assert_eq!(a.p_two_sided, b.p_two_sided);
        }

        #[test]
        fn u_bounds(pos in scores(), neg in scores()) {
            let r = mann_whitney_u(&pos, &neg).unwrap();
            prop_assert!(r.u_statistic >= 0.0);
            prop_assert!(r.u_statistic <= (pos.len() * neg.len()) as f64);
            prop_assert!((0.0..=1.0).contains(&r.p_two_sided));
        }
    }
}
