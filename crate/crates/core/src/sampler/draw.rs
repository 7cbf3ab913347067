use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::labels::LabeledCandidates;
use super::segment::PopularitySegment;
use super::{Intent, SampleError};
use crate::seed;

/// Uniform draw of `n` distinct queries from a segment, without replacement
/// and without weighting by frequency. Returns every query when the segment
/// has `n` or fewer. Output keeps the segment's popularity order.
pub fn draw_candidates(segment: &PopularitySegment, n: usize, seed: u64) -> Vec<String> {
    let len = segment.entries.len();
    if len <= n {
        return segment.entries.iter().map(|e| e.text.clone()).collect();
    }
    let mut picked = index::sample(&mut seed::rng(seed), len, n).into_vec();
    picked.sort_unstable();
    picked
        .into_iter()
        .map(|i| segment.entries[i].text.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledQuery {
    pub text: String,
    pub segment_index: usize,
    pub intent: Intent,
    pub draw_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub segment_index: usize,
    pub intent: Intent,
    pub available: usize,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Sample {
    pub queries: Vec<SampledQuery>,
    pub shortfalls: Vec<Shortfall>,
    /// Labeled candidates outside the studied intents, per intent.
    pub excluded: BTreeMap<Intent, usize>,
}

/// Keep at most the intent's target per (segment, studied intent), dropping
/// a uniformly random subset of any cell that exceeds it. Intents without a
/// target are not sampled.
pub fn build_sample(
    labeled: &[LabeledCandidates],
    targets: &BTreeMap<Intent, usize>,
    seed: u64,
) -> Sample {
    let mut sample = Sample::default();
    for seg in labeled {
        for (_, intent) in &seg.labeled {
            if !intent.is_studied() {
                *sample.excluded.entry(*intent).or_insert(0) += 1;
            }
        }
        for intent in Intent::STUDIED {
            let Some(&target) = targets.get(&intent).filter(|t| **t > 0) else {
                continue;
            };
            let cell: Vec<&String> = seg
                .labeled
                .iter()
                .filter(|(_, i)| *i == intent)
                .map(|(q, _)| q)
                .collect();
            let kept: Vec<&String> = if cell.len() > target {
                let cell_seed = seed::derive_seed(
                    seed,
                    &format!("sample/{intent}"),
                    seg.segment_index as u64,
                );
                let mut keep = index::sample(&mut seed::rng(cell_seed), cell.len(), target).into_vec();
                keep.sort_unstable();
                keep.into_iter().map(|i| cell[i]).collect()
            } else {
                if cell.len() < target {
                    sample.shortfalls.push(Shortfall {
                        segment_index: seg.segment_index,
                        intent,
                        available: cell.len(),
                        target,
                    });
                }
                cell
            };
            sample.queries.extend(kept.into_iter().map(|q| SampledQuery {
                text: q.clone(),
                segment_index: seg.segment_index,
                intent,
                draw_seed: seed,
            }));
        }
    }
    sample
}

impl Sample {
    pub fn of_intent(&self, intent: Intent) -> impl Iterator<Item = &SampledQuery> {
        self.queries.iter().filter(move |q| q.intent == intent)
    }

    /// `query<TAB>segment<TAB>intent<TAB>seed` per line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for q in &self.queries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                q.text, q.segment_index, q.intent, q.draw_seed
            ));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Vec<SampledQuery>, SampleError> {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: &str| SampleError::MalformedSample {
                line: line_no,
                reason: reason.to_string(),
            };
            let fields: Vec<&str> = line.split('\t').collect();
            let [text, segment, intent, draw_seed] = fields[..] else {
                return Err(bad("expected 4 tab-separated fields"));
            };
            out.push(SampledQuery {
                text: text.to_string(),
                segment_index: segment.parse().map_err(|_| bad("bad segment"))?,
                intent: intent.parse().map_err(|_| SampleError::UnknownLabel {
                    line: line_no,
                    token: intent.to_string(),
                })?,
                draw_seed: draw_seed.parse().map_err(|_| bad("bad seed"))?,
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn both(n: usize) -> BTreeMap<Intent, usize> {
        Intent::STUDIED.into_iter().map(|i| (i, n)).collect()
    }
    use crate::sampler::ingest::QueryLogEntry;
    use std::collections::HashSet;

    fn segment(n: usize) -> PopularitySegment {
        PopularitySegment {
            index: 1,
            entries: (0..n)
                .map(|i| QueryLogEntry {
                    text: format!("q{i:04}"),
                    frequency: 1,
                })
                .collect(),
            instance_count: n as u64,
        }
    }

    #[test]
    fn exhausted_segment_returns_everything() {
        assert_eq!(draw_candidates(&segment(5), 360, 1).len(), 5);
        assert_eq!(draw_candidates(&segment(1), 1, 1), vec!["q0000"]);
    }

    #[test]
    fn draw_is_deterministic_and_distinct() {
        let s = segment(1000);
        let a = draw_candidates(&s, 360, 42);
        assert_eq!(a, draw_candidates(&s, 360, 42));
        assert_eq!(a.iter().collect::<HashSet<_>>().len(), 360);
        assert_ne!(a, draw_candidates(&s, 360, 43));
    }

    /// Overlap of two independent draws of 360 from 1,000 is hypergeometric:
    /// mean 360·360/1000 = 129.6, variance n·p·(1−p)·(N−n)/(N−1).
    #[test]
    fn pairwise_overlap_is_hypergeometric() {
        let s = segment(1000);
        let (big_n, n) = (1000.0f64, 360.0f64);
        let p = n / big_n;
        let mean = n * p;
        let var = n * p * (1.0 - p) * (big_n - n) / (big_n - 1.0);
        let trials = 1000;
        let overlaps: Vec<f64> = (0..trials)
            .map(|t| {
                let a: HashSet<String> = draw_candidates(&s, 360, 2 * t).into_iter().collect();
                let b = draw_candidates(&s, 360, 2 * t + 1);
                b.iter().filter(|q| a.contains(*q)).count() as f64
            })
            .collect();
        let observed = overlaps.iter().sum::<f64>() / trials as f64;
        let se = (var / trials as f64).sqrt();
        assert!(
            (observed - mean).abs() < 3.0 * se,
            "mean overlap {observed} vs {mean} ± {}",
            3.0 * se
        );
        let obs_var = overlaps.iter().map(|o| (o - observed).powi(2)).sum::<f64>()
            / (trials as f64 - 1.0);
        assert!((obs_var / var - 1.0).abs() < 0.2, "variance {obs_var} vs {var}");
    }

    /// Each query's selection count over many seeds stays within 3σ of the
    /// binomial expectation.
    #[test]
    fn selection_is_uniform_over_distinct_queries() {
        let s = segment(20);
        let (n, trials) = (5usize, 2000u64);
        let mut counts = vec![0u32; 20];
        for seed in 0..trials {
            for q in draw_candidates(&s, n, seed) {
                let idx: usize = q[1..].parse().unwrap();
                counts[idx] += 1;
            }
        }
        let p = n as f64 / 20.0;
        let expected = trials as f64 * p;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - expected).abs() < 3.0 * sigma,
                "query {i}: {c} vs {expected} ± {}",
                3.0 * sigma
            );
        }
    }

    fn labeled(segment_index: usize, inf: usize, nav: usize, other: usize) -> LabeledCandidates {
        let mut labeled = Vec::new();
        for i in 0..inf {
            labeled.push((format!("i{segment_index}-{i}"), Intent::Informational));
        }
        for i in 0..nav {
            labeled.push((format!("n{segment_index}-{i}"), Intent::Navigational));
        }
        for i in 0..other {
            labeled.push((format!("o{segment_index}-{i}"), Intent::Other));
        }
        LabeledCandidates {
            segment_index,
            labeled,
            gaps: vec![],
        }
    }

    #[test]
    fn oversized_cells_are_trimmed_to_target() {
        let sample = build_sample(&[labeled(3, 150, 120, 90)], &both(100), 9);
        assert_eq!(sample.of_intent(Intent::Informational).count(), 100);
        assert_eq!(sample.of_intent(Intent::Navigational).count(), 100);
        assert!(sample.shortfalls.is_empty());
        assert_eq!(sample.excluded[&Intent::Other], 90);
        assert!(sample.queries.iter().all(|q| q.segment_index == 3 && q.draw_seed == 9));
    }

    #[test]
    fn small_cells_are_kept_whole_with_a_shortfall() {
        let sample = build_sample(&[labeled(1, 12, 4, 0)], &both(100), 9);
        assert_eq!(sample.of_intent(Intent::Navigational).count(), 4);
        assert_eq!(
            sample.shortfalls,
            vec![
                Shortfall { segment_index: 1, intent: Intent::Informational, available: 12, target: 100 },
                Shortfall { segment_index: 1, intent: Intent::Navigational, available: 4, target: 100 },
            ]
        );
    }

    #[test]
    fn same_seed_same_sample() {
        let input = [labeled(1, 150, 130, 10), labeled(2, 101, 300, 0)];
        let a = build_sample(&input, &both(100), 5);
        assert_eq!(a, build_sample(&input, &both(100), 5));
        assert_ne!(a.queries, build_sample(&input, &both(100), 6).queries);
    }

    #[test]
    fn tsv_round_trip() {
        let sample = build_sample(&[labeled(2, 3, 2, 1)], &both(100), 77);
        let parsed = Sample::from_tsv(&sample.to_tsv()).unwrap();
        assert_eq!(parsed, sample.queries);
        assert!(Sample::from_tsv("a\t1\tnav\t3\n").is_err());
        assert!(Sample::from_tsv("a\t1\n").is_err());
    }
}
