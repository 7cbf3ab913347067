use serde::{Deserialize, Serialize};

use crate::collector::{CaptureOutcome, CollectionRun};
use crate::sampler::Intent;
use crate::seed::derive_seed_str;
use crate::store::ContentHash;

/// A first result awaiting a verdict. Engines that returned the same URL
/// share one item, so the assessor cannot tell them apart.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NavItem {
    pub item_id: String,
    pub query: String,
    pub normalized_url: String,
    pub snapshot_id: Option<ContentHash>,
    pub targets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NavItemView {
    pub item_id: String,
    pub query: String,
    pub url: String,
    pub document: Option<String>,
}

impl NavItem {
    pub fn view(&self) -> NavItemView {
        NavItemView {
            item_id: self.item_id.clone(),
            query: self.query.clone(),
            url: self.normalized_url.clone(),
            document: self.snapshot_id.as_ref().map(|h| format!("/snapshots/{h}")),
        }
    }
}

/// A verdict the system records itself: there is nothing to assess.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AutoVerdict {
    pub query: String,
    pub engine_id: String,
    pub reason: &'static str,
}

/// Items in seeded order, plus the (query, engine) pairs that are incorrect
/// without assessment.
pub fn build_nav_items(run: &CollectionRun, seed: u64) -> (Vec<NavItem>, Vec<AutoVerdict>) {
    let mut items: Vec<NavItem> = Vec::new();
    let mut auto = Vec::new();
    for query in run.queries(Intent::Navigational) {
        for engine in &run.engines {
            let engine_id = engine.engine_id.clone();
            let reason = match run.capture(query, &engine.engine_id).map(|c| &c.outcome) {
                None => continue,
                Some(CaptureOutcome::Failed { .. }) => "capture-failed",
                Some(CaptureOutcome::Succeeded { results, .. }) => match results.first() {
                    None => "no-result",
                    Some(r) => match &r.normalized_url {
                        None => "unresolvable",
                        Some(url) => {
                            match items
                                .iter_mut()
                                .find(|n| n.query == query && &n.normalized_url == url)
                            {
                                Some(n) => n.targets.push(engine_id),
                                None => items.push(NavItem {
                                    item_id: format!(
                                        "n{:016x}",
                                        derive_seed_str(seed, "nav", &format!("{query}\n{url}"))
                                    ),
                                    query: query.to_string(),
                                    normalized_url: url.clone(),
                                    snapshot_id: run
                                        .snapshot(url)
                                        .and_then(|s| s.snapshot_id.clone()),
                                    targets: vec![engine_id],
                                }),
                            }
                            continue;
                        }
                    },
                },
            };
            auto.push(AutoVerdict {
                query: query.to_string(),
                engine_id,
                reason,
            });
        }
    }
    items.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    (items, auto)
}
