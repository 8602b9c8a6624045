//! Generic-identifiability rank bounds for CPD models and for joint PMFs
//! recovered from triple or quadruple marginals with a common alphabet `I`.
//!
//! Marginal-based bounds go through a virtual tensor: the variables are split
//! into disjoint groups `S_1..S_k`, factors of a group are stacked, and the
//! available marginals fill a `k`-way tensor with mode sizes `I·|S_k|`.
//! Everything is evaluated in integer arithmetic.

use alloc::string::String;
use alloc::vec::Vec;

/// Largest `F` with `min(I1,F) + min(I2,F) + min(I3,F) ≥ 2F + 2`, or 0.
pub fn kruskal_generic_bound(i1: u64, i2: u64, i3: u64) -> u64 {
    // the left side never exceeds I1 + I2 + I3, so larger F cannot qualify
    (1..=i1 + i2 + i3)
        .filter(|&f| i1.min(f) + i2.min(f) + i3.min(f) >= 2 * f + 2)
        .max()
        .unwrap_or(0)
}

/// Bound from the `F ≤ (I1−1)(I2−1)`, `F ≤ I3` condition on sorted dimensions,
/// and whether its precondition (smallest dimension ≥ 3) holds. The bound is
/// 0 when it does not.
pub fn lemma2_bound(i1: u64, i2: u64, i3: u64) -> (u64, bool) {
    let mut d = [i1, i2, i3];
    d.sort_unstable();
    if d[0] < 3 {
        return (0, false);
    }
    (d[2].min((d[0] - 1) * (d[1] - 1)), true)
}

fn floor_log2(x: u64) -> Option<u32> {
    (x > 0).then(|| 63 - x.leading_zeros())
}

/// `2^(α+β−2)` with `α, β` the largest integers such that `2^α ≤ I1` and
/// `2^β ≤ I2` (dimensions sorted first); 0 when `α + β < 2`.
pub fn lemma3_bound(i1: u64, i2: u64) -> u64 {
    match (floor_log2(i1), floor_log2(i2)) {
        (Some(a), Some(b)) if a + b >= 2 => 1u64 << (a + b - 2),
        _ => 0,
    }
}

/// Largest integer `r` with `r² ≤ x`.
pub fn isqrt(x: u128) -> u128 {
    if x < 2 {
        return x;
    }
    let mut r = libm::sqrt(x as f64) as u128;
    while r * r > x {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= x {
        r += 1;
    }
    r
}

/// Triples bound from [`lemma2_bound`] on a three-group split: `I(N−2)` for `N ≤ I`,
/// else `(⌊√(NI−1)/I⌋·I − 1)²`. Zero for `N < 3`.
pub fn theorem1_bound(n: u64, i: u64) -> u64 {
    if n < 3 || i == 0 {
        return 0;
    }
    if n <= i {
        i * (n - 2)
    } else {
        let k = (isqrt((n * i - 1) as u128) as u64 / i) * i;
        k.saturating_sub(1).pow(2)
    }
}

/// Triples bound from the power-of-two construction with
/// `|S_1| = |S_2| = ⌊N/3⌋`: `⌊(⌊N/3⌋·I + 1)² / 16⌋`.
pub fn theorem2_bound(n: u64, i: u64) -> u64 {
    let k = (n / 3) * i;
    (k + 1) * (k + 1) / 16
}

/// Largest `F ≥ 0` with `2F(F−1) ≤ rhs`.
pub fn max_pair_rank(rhs: u128) -> u128 {
    // 2F(F−1) ≤ rhs  ⇔  (2F−1)² ≤ 2·rhs + 1
    isqrt(2 * rhs + 1).div_ceil(2)
}

/// Quadruple-marginal bound for one ordered group-size composition
/// `(s1, s2, s3, s4)`: `min(I²s3s4, max{F : 2F(F−1) ≤ I²s1s2(Is1−1)(Is2−1)})`.
pub fn quadruple_partition_bound(i: u64, s: [u64; 4]) -> u64 {
    let i = i as u128;
    let [s1, s2, s3, s4] = s.map(|v| v as u128);
    let cap = i * i * s3 * s4;
    let rhs = i * i * s1 * s2 * (i * s1).saturating_sub(1) * (i * s2).saturating_sub(1);
    cap.min(max_pair_rank(rhs)) as u64
}

/// All ordered compositions of `n` into `k` positive parts.
pub fn compositions(n: u64, k: usize) -> Vec<Vec<u64>> {
    fn rec(left: u64, k: usize, prefix: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        if k == 1 {
            if left >= 1 {
                prefix.push(left);
                out.push(prefix.clone());
                prefix.pop();
            }
            return;
        }
        for first in 1..=left.saturating_sub(k as u64 - 1) {
            prefix.push(first);
            rec(left - first, k - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if k > 0 && n >= k as u64 {
        rec(n, k, &mut Vec::with_capacity(k), &mut out);
    }
    out
}

/// Best quadruple-marginal bound over all four-group compositions of the
/// `N` variables, with the first composition attaining it. `None` when
/// `N < 4`.
pub fn theorem3_bound(n: u64, i: u64) -> Option<(u64, [u64; 4])> {
    if n < 4 {
        return None;
    }
    let mut best = (0, [0; 4]);
    for s1 in 1..=n - 3 {
        for s2 in 1..=n - 2 - s1 {
            for s3 in 1..=n - 1 - s1 - s2 {
                let s = [s1, s2, s3, n - s1 - s2 - s3];
                let f = quadruple_partition_bound(i, s);
                if f > best.0 || best.1[0] == 0 {
                    best = (f, s);
                }
            }
        }
    }
    Some(best)
}

/// `max(theorem1_bound, theorem2_bound)`.
pub fn triples_bound(n: u64, i: u64) -> u64 {
    theorem1_bound(n, i).max(theorem2_bound(n, i))
}

/// Group sizes used by the first triples construction.
fn theorem1_partition(n: u64, i: u64) -> Option<[u64; 3]> {
    if n < 3 || i == 0 {
        return None;
    }
    if n <= i {
        return Some([1, 1, n - 2]);
    }
    let s = (isqrt((n * i - 1) as u128) as u64 / i).max(1);
    (2 * s < n).then(|| [s, s, n - 2 * s])
}

fn theorem2_partition(n: u64) -> Option<[u64; 3]> {
    let s = n / 3;
    (s >= 1).then(|| [s, s, n - 2 * s])
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleBound {
    pub rule: &'static str,
    pub bound: u64,
    /// Group sizes `|S_1|..|S_k|` of the virtual tensor that attains `bound`.
    pub partition: Option<Vec<u64>>,
    /// Whether the rule applies at all to this `(N, I, order)`.
    pub applicable: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentifiabilityReport {
    pub n_vars: u64,
    pub alphabet: u64,
    pub order: u64,
    pub rules: Vec<RuleBound>,
    /// `max(theorem1, theorem2)`.
    pub triples: u64,
    /// Best quadruple bound; `None` for `N < 4`.
    pub quadruples: Option<u64>,
    /// Largest bound among the rules applicable at this marginal order.
    pub combined_bound: u64,
}

fn best_three_way(n: u64, i: u64, rule: impl Fn(u64, u64, u64) -> u64) -> (u64, Option<Vec<u64>>) {
    let mut best = (0, None);
    for s in compositions(n, 3) {
        let f = rule(i * s[0], i * s[1], i * s[2]);
        if best.1.is_none() || f > best.0 {
            best = (f, Some(s));
        }
    }
    best
}

/// Every rule evaluated for `N` variables with alphabet `I` and marginals of
/// the given order (3 or 4). Three-way rules take the best three-group
/// virtual tensor; with quadruples the triples they contain are usable too.
pub fn report(n: u64, i: u64, order: u64) -> IdentifiabilityReport {
    let three_way = (3..=4).contains(&order) && n >= 3;
    let mut rules = Vec::new();

    let (kb, kp) = best_three_way(n, i, kruskal_generic_bound);
    rules.push(RuleBound {
        rule: "kruskal_generic",
        bound: kb,
        partition: kp,
        applicable: three_way,
        note: None,
    });
    let (lb, lp) = best_three_way(n, i, |a, b, c| lemma2_bound(a, b, c).0);
    rules.push(RuleBound {
        rule: "lemma2",
        bound: lb,
        partition: lp,
        applicable: three_way,
        note: (three_way && lb == 0)
            .then(|| "no three-group split has every mode of size 3 or more".into()),
    });
    let (l3, l3p) = best_three_way(n, i, |a, b, c| {
        let mut d = [a, b, c];
        d.sort_unstable();
        lemma3_bound(d[0], d[1])
    });
    rules.push(RuleBound {
        rule: "lemma3",
        bound: l3,
        partition: l3p,
        applicable: three_way,
        note: None,
    });
    rules.push(RuleBound {
        rule: "theorem1",
        bound: theorem1_bound(n, i),
        partition: theorem1_partition(n, i).map(|p| p.to_vec()),
        applicable: three_way,
        note: None,
    });
    rules.push(RuleBound {
        rule: "theorem2",
        bound: theorem2_bound(n, i),
        partition: theorem2_partition(n).map(|p| p.to_vec()),
        applicable: three_way,
        note: None,
    });
    let t3 = theorem3_bound(n, i);
    rules.push(RuleBound {
        rule: "theorem3",
        bound: t3.map_or(0, |t| t.0),
        partition: t3.map(|t| t.1.to_vec()),
        applicable: order == 4 && t3.is_some(),
        note: t3.is_none().then(|| "requires N >= 4".into()),
    });

    let combined_bound = rules
        .iter()
        .filter(|r| r.applicable)
        .map(|r| r.bound)
        .max()
        .unwrap_or(0);
    IdentifiabilityReport {
        n_vars: n,
        alphabet: i,
        order,
        rules,
        triples: triples_bound(n, i),
        quadruples: t3.map(|t| t.0),
        combined_bound,
    }
}
