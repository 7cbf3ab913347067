//! Synthetic Zipf-shaped query logs for benchmarks and property tests.

use rand::seq::SliceRandom;

use crate::seed;

/// Integer frequencies for `distinct` queries summing exactly to `total`,
/// proportional to `1/rank^s` (largest-remainder apportionment, every query
/// at least once). Returned in rank order.
pub fn zipf_frequencies(distinct: usize, total: u64, s: f64) -> Vec<u64> {
    assert!(distinct >= 1 && total >= distinct as u64, "need total >= distinct >= 1");
    let weights: Vec<f64> = (1..=distinct).map(|r| (r as f64).powf(-s)).collect();
    let wsum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / wsum).collect();
    let mut freqs: Vec<u64> = quotas.iter().map(|q| (q.floor() as u64).max(1)).collect();
    let mut sum: u64 = freqs.iter().sum();

    let mut by_remainder: Vec<usize> = (0..distinct).collect();
    by_remainder.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut i = 0;
    while sum < total {
        freqs[by_remainder[i % distinct]] += 1;
        sum += 1;
        i += 1;
    }
    let mut j = distinct;
    while sum > total {
        j = if j == 0 { distinct - 1 } else { j - 1 };
        let idx = by_remainder[j];
        if freqs[idx] > 1 {
            freqs[idx] -= 1;
            sum -= 1;
        }
    }
    freqs
}

pub fn query_name(rank: usize) -> String {
    format!("query {rank:07}")
}

/// One line per query instance, shuffled.
pub fn instance_lines(freqs: &[u64], seed: u64) -> Vec<String> {
    let mut lines = Vec::with_capacity(freqs.iter().sum::<u64>() as usize);
    for (i, &f) in freqs.iter().enumerate() {
        let name = query_name(i + 1);
        for _ in 0..f {
            lines.push(name.clone());
        }
    }
    lines.shuffle(&mut seed::rng(seed));
    lines
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequencies_sum_exactly_and_decrease() {
        let f = zipf_frequencies(50_000, 1_000_000, 1.0);
        assert_eq!(f.len(), 50_000);
        assert_eq!(f.iter().sum::<u64>(), 1_000_000);
        assert!(f.iter().all(|&x| x >= 1));
        assert!(f.windows(2).all(|w| w[0] >= w[1]));
        // rank · frequency roughly constant for s = 1
        let c1 = f[0] as f64;
        let c100 = 100.0 * f[99] as f64;
        assert!((c1 - c100).abs() / c1 < 0.01);
    }

    #[test]
    fn tiny_cases() {
        assert_eq!(zipf_frequencies(1, 5, 1.0), vec![5]);
        assert_eq!(zipf_frequencies(3, 3, 1.0), vec![1, 1, 1]);
    }
}
