use std::collections::HashMap;

use rand::seq::SliceRandom;

use super::{JudgmentTask, PooledResult, Provenance};
use crate::collector::{CaptureRecord, CollectionRun, DocumentSnapshot};
use crate::sampler::Intent;
use crate::seed::{derive_seed_str, rng};

fn pool_key(r: &crate::collector::SerpResult) -> String {
    match &r.normalized_url {
        Some(u) => u.clone(),
        None => format!("raw:{}", r.raw_url),
    }
}

/// Opaque per-task id: derived from the seed and the URL key, so it carries
/// neither the engine nor the rank.
fn pooled_id(task_id: &str, key: &str, seed: u64) -> String {
    format!("{task_id}-{:016x}", derive_seed_str(seed, &format!("pooled/{task_id}"), key))
}

/// Merge the captures of one query into a deduplicated pool, keeping every
/// (engine, rank) pair as provenance.
pub fn pool_results<'a>(
    task_id: &str,
    captures: &[&CaptureRecord],
    snapshot: impl Fn(&str) -> Option<&'a DocumentSnapshot>,
    seed: u64,
) -> Vec<PooledResult> {
    let mut pool: Vec<PooledResult> = Vec::new();
    let mut by_key: HashMap<String, usize> = HashMap::new();
    for capture in captures {
        for r in capture.results() {
            let key = pool_key(r);
            let idx = *by_key.entry(key.clone()).or_insert_with(|| {
                let snap = r.normalized_url.as_deref().and_then(&snapshot);
                let judgeable = snap.is_some_and(|s| s.is_ok());
                pool.push(PooledResult {
                    pooled_id: pooled_id(task_id, &key, seed),
                    key,
                    normalized_url: r.normalized_url.clone(),
                    snapshot_id: snap.and_then(|s| s.snapshot_id.clone()),
                    judgeable,
                    provenance: Vec::new(),
                });
                pool.len() - 1
            });
            let prov = &mut pool[idx].provenance;
            match prov.iter_mut().find(|p| p.engine_id == r.engine_id) {
                Some(p) => p.duplicate_ranks.push(r.rank),
                None => prov.push(Provenance {
                    engine_id: r.engine_id.clone(),
                    rank: r.rank,
                    duplicate_ranks: Vec::new(),
                }),
            }
        }
    }
    pool
}

/// Seeded shuffle of the pooled ids; a pure function of its inputs.
pub fn presentation_order(task_id: &str, pooled: &[PooledResult], seed: u64) -> Vec<String> {
    let mut ids: Vec<String> = pooled.iter().map(|p| p.pooled_id.clone()).collect();
    ids.sort();
    ids.shuffle(&mut rng(derive_seed_str(seed, "presentation", task_id)));
    ids
}

/// One task per informational query, in sample order.
pub fn build_tasks(run: &CollectionRun, seed: u64) -> Vec<JudgmentTask> {
    run.queries(Intent::Informational)
        .into_iter()
        .enumerate()
        .map(|(i, query)| {
            let task_id = format!("t{:04}", i + 1);
            let captures: Vec<&CaptureRecord> = run
                .engines
                .iter()
                .filter_map(|e| run.capture(query, &e.engine_id))
                .collect();
            let results = pool_results(&task_id, &captures, |u| run.snapshot(u), seed);
            let presentation_order = presentation_order(&task_id, &results, seed);
            JudgmentTask {
                task_id,
                query: query.to_string(),
                intent: Intent::Informational,
                results,
                presentation_order,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collector::{CaptureOutcome, FetchStatus, Resolution, SerpResult};
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn result(engine: &str, rank: usize, url: Option<&str>) -> SerpResult {
        SerpResult {
            engine_id: engine.into(),
            query: "q".into(),
            rank,
            raw_url: url.unwrap_or("https://r.example/?x").into(),
            resolution: match url {
                Some(u) => Resolution::Direct { url: u.into() },
                None => Resolution::Unresolvable { reason: "r".into() },
            },
            normalized_url: url.map(str::to_string),
            title: String::new(),
            snippet: String::new(),
            captured_at: Utc.timestamp_opt(0, 0).unwrap(),
        }
    }

    fn capture(engine: &str, urls: &[Option<&str>]) -> CaptureRecord {
        CaptureRecord {
            query: "q".into(),
            intent: Intent::Informational,
            engine_id: engine.into(),
            depth: 10,
            attempted_at: Utc.timestamp_opt(0, 0).unwrap(),
            outcome: CaptureOutcome::Succeeded {
                results: urls
                    .iter()
                    .enumerate()
                    .map(|(i, u)| result(engine, i + 1, *u))
                    .collect(),
                note: None,
            },
        }
    }

    fn ok_snapshot(url: &str) -> DocumentSnapshot {
        DocumentSnapshot {
            normalized_url: url.into(),
            fetch_status: FetchStatus::Ok,
            snapshot_id: Some(crate::store::ContentHash::of(url.as_bytes())),
            content_type: Some("text/html".into()),
            fetched_at: Utc.timestamp_opt(0, 0).unwrap(),
        }
    }

    #[test]
    fn shared_urls_pool_once_with_both_provenances() {
        let a = capture("a", &[Some("https://x.de/"), Some("https://y.de/"), None]);
        let b = capture("b", &[Some("https://y.de/"), Some("https://z.de/"), Some("https://y.de/")]);
        let snaps = [ok_snapshot("https://x.de/"), ok_snapshot("https://y.de/")];
        let pool = pool_results("t1", &[&a, &b], |u| snaps.iter().find(|s| s.normalized_url == u), 7);
        assert_eq!(pool.len(), 4);
        let y = pool.iter().find(|p| p.key == "https://y.de/").unwrap();
        assert_eq!(y.provenance.len(), 2);
        assert_eq!((y.provenance[0].engine_id.as_str(), y.provenance[0].rank), ("a", 2));
        assert_eq!((y.provenance[1].engine_id.as_str(), y.provenance[1].rank), ("b", 1));
        assert_eq!(y.provenance[1].duplicate_ranks, vec![3]);
        assert!(y.judgeable);
        let z = pool.iter().find(|p| p.key == "https://z.de/").unwrap();
        assert!(!z.judgeable, "no snapshot, not judgeable");
        let raw = pool.iter().find(|p| p.normalized_url.is_none()).unwrap();
        assert!(raw.key.starts_with("raw:"));
        assert!(!raw.judgeable);
    }

    #[test]
    fn presentation_order_is_seeded() {
        let a = capture("a", &(0..10).map(|i| Some(format!("https://{i}.de/"))).collect::<Vec<_>>().iter().map(|s| s.as_deref()).collect::<Vec<_>>());
        let pool = pool_results("t1", &[&a], |_| None, 1);
        let o1 = presentation_order("t1", &pool, 1);
        assert_eq!(o1, presentation_order("t1", &pool, 1));
        let mut distinct = std::collections::HashSet::new();
        for seed in 0..20 {
            let p = pool_results("t1", &[&a], |_| None, seed);
            distinct.insert(
                presentation_order("t1", &p, seed)
                    .iter()
                    .map(|id| p.iter().position(|r| &r.pooled_id == id).unwrap())
                    .collect::<Vec<_>>(),
            );
        }
        assert!(distinct.len() > 15);
    }

    fn arb_captures() -> impl Strategy<Value = Vec<Vec<Option<u8>>>> {
        prop::collection::vec(prop::collection::vec(prop::option::weighted(0.9, 0u8..12), 0..10), 1..4)
    }

    proptest! {
        #[test]
        fn dedup_is_sound_and_complete(engines in arb_captures(), seed in any::<u64>()) {
            let urls: Vec<Vec<Option<String>>> = engines
                .iter()
                .map(|e| e.iter().map(|u| u.map(|n| format!("https://{n}.de/"))).collect())
                .collect();
            let caps: Vec<CaptureRecord> = urls
                .iter()
                .enumerate()
                .map(|(i, u)| capture(&format!("e{i}"), &u.iter().map(|s| s.as_deref()).collect::<Vec<_>>()))
                .collect();
            let refs: Vec<&CaptureRecord> = caps.iter().collect();
            let pool = pool_results("t9", &refs, |_| None, seed);

            let keys: std::collections::HashSet<&str> = pool.iter().map(|p| p.key.as_str()).collect();
            prop_assert_eq!(keys.len(), pool.len());
            let ids: std::collections::HashSet<&str> = pool.iter().map(|p| p.pooled_id.as_str()).collect();
            prop_assert_eq!(ids.len(), pool.len());

            // Every (engine, rank) appears exactly once across provenance lists.
            let mut seen = Vec::new();
            for p in &pool {
                let engines: std::collections::HashSet<&str> =
                    p.provenance.iter().map(|v| v.engine_id.as_str()).collect();
                prop_assert_eq!(engines.len(), p.provenance.len());
                for v in &p.provenance {
                    seen.push((v.engine_id.clone(), v.rank));
                    for &r in &v.duplicate_ranks {
                        seen.push((v.engine_id.clone(), r));
                    }
                }
            }
            seen.sort();
            let mut expected: Vec<(String, usize)> = caps
                .iter()
                .flat_map(|c| c.results().iter().map(|r| (r.engine_id.clone(), r.rank)))
                .collect();
            expected.sort();
            prop_assert_eq!(seen, expected);

            let mut order = presentation_order("t9", &pool, seed);
            order.sort();
            let mut sorted: Vec<String> = pool.iter().map(|p| p.pooled_id.clone()).collect();
            sorted.sort();
            prop_assert_eq!(order, sorted);
        }
    }
}
