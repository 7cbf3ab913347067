//! Live screen-scraping adapter and HTTP document fetcher.

use regex::Regex;
use ureq::Agent;
use url::Url;

use super::adapter::{DocumentFetcher, FetchOutcome, RawResult, SerpAdapter};
use super::{CollectError, ExtractionRules, FetchPolicy, FetchStatus};

struct CompiledRules {
    result: Regex,
    link: Regex,
    title: Regex,
    snippet: Option<Regex>,
    exclude: Vec<Regex>,
}

fn compile(s: &str) -> Result<Regex, CollectError> {
    Regex::new(s).map_err(|e| CollectError::Config(format!("rule {s:?}: {e}")))
}

impl CompiledRules {
    fn new(rules: &ExtractionRules) -> Result<Self, CollectError> {
        Ok(Self {
            result: compile(&rules.result)?,
            link: compile(&rules.link)?,
            title: compile(&rules.title)?,
            snippet: rules.snippet.as_deref().map(compile).transpose()?,
            exclude: rules
                .exclude
                .iter()
                .map(|s| compile(s))
                .collect::<Result<_, _>>()?,
        })
    }
}

fn decode_entities(s: &str) -> String {
    s.replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&nbsp;", " ")
        .replace("&amp;", "&")
}

fn strip_tags(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut in_tag = false;
    for c in s.chars() {
        match c {
            '<' => in_tag = true,
            '>' if in_tag => {
                in_tag = false;
                out.push(' ');
            }
            _ if !in_tag => out.push(c),
            _ => {}
        }
    }
    decode_entities(&out)
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn group1<'h>(re: &Regex, hay: &'h str) -> Option<&'h str> {
    re.captures(hay).and_then(|c| c.get(1)).map(|m| m.as_str())
}

/// Pull organic results out of a results page. Blocks matching an exclude
/// rule, or lacking a link, are skipped; ranks count organic blocks only.
pub fn extract_results(
    html: &str,
    page_url: &str,
    extraction: &ExtractionRules,
) -> Result<Vec<RawResult>, CollectError> {
    let rules = CompiledRules::new(extraction)?;
    let base = Url::parse(page_url).map_err(|e| CollectError::Config(e.to_string()))?;

    let mut out = Vec::new();
    for block in rules.result.find_iter(html) {
        let block = block.as_str();
        if rules.exclude.iter().any(|ex| ex.is_match(block)) {
            continue;
        }
        let Some(href) = group1(&rules.link, block) else {
            continue;
        };
        let Ok(abs) = base.join(&decode_entities(href.trim())) else {
            continue;
        };
        let title = group1(&rules.title, block).map(strip_tags).unwrap_or_default();
        let snippet = rules
            .snippet
            .as_ref()
            .and_then(|re| group1(re, block))
            .map(strip_tags)
            .unwrap_or_default();
        out.push(RawResult {
            rank: out.len() + 1,
            raw_url: abs.to_string(),
            title,
            snippet,
        });
    }
    Ok(out)
}

pub struct LiveScrapeAdapter {
    agent: Agent,
    endpoint: String,
    rules: ExtractionRules,
    retries: u32,
}

impl LiveScrapeAdapter {
    pub fn new(
        endpoint: &str,
        rules: ExtractionRules,
        policy: &FetchPolicy,
    ) -> Result<Self, CollectError> {
        CompiledRules::new(&rules)?;
        Ok(Self {
            agent: build_agent(policy),
            endpoint: endpoint.to_string(),
            rules,
            retries: policy.retries,
        })
    }

    fn url_for(&self, query: &str, k: usize) -> String {
        let q: String = url::form_urlencoded::byte_serialize(query.as_bytes()).collect();
        self.endpoint
            .replace("{query}", &q)
            .replace("{k}", &k.to_string())
    }
}

impl SerpAdapter for LiveScrapeAdapter {
    fn fetch_serp(&self, query: &str, k: usize) -> Result<Vec<RawResult>, CollectError> {
        let url = self.url_for(query, k);
        let mut last_err = String::new();
        for _ in 0..=self.retries {
            match self.agent.get(&url).call() {
                Ok(mut resp) if resp.status().is_success() => {
                    let body = resp
                        .body_mut()
                        .read_to_string()
                        .map_err(|e| CollectError::Adapter(e.to_string()))?;
                    return extract_results(&body, &url, &self.rules);
                }
                Ok(resp) => last_err = format!("HTTP {}", resp.status().as_u16()),
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(CollectError::Adapter(format!("{url}: {last_err}")))
    }
}

fn build_agent(policy: &FetchPolicy) -> Agent {
    Agent::config_builder()
        .timeout_global(Some(policy.timeout))
        .user_agent(policy.user_agent.as_str())
        .http_status_as_error(false)
        .build()
        .into()
}

fn network_failure(e: ureq::Error) -> FetchOutcome {
    match e {
        ureq::Error::Timeout(_) => FetchOutcome::failed(FetchStatus::Timeout),
        e => FetchOutcome::failed(FetchStatus::NetworkError {
            reason: e.to_string(),
        }),
    }
}

pub struct HttpFetcher {
    agent: Agent,
    retries: u32,
}

impl HttpFetcher {
    pub fn new(policy: &FetchPolicy) -> Result<Self, CollectError> {
        Ok(Self {
            agent: build_agent(policy),
            retries: policy.retries,
        })
    }

    fn fetch_once(&self, url: &str) -> FetchOutcome {
        let mut resp = match self.agent.get(url).call() {
            Ok(r) => r,
            Err(e) => return network_failure(e),
        };
        let code = resp.status().as_u16();
        if !resp.status().is_success() {
            return FetchOutcome::failed(FetchStatus::HttpError { code });
        }
        let content_type = resp
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
        match resp.body_mut().read_to_vec() {
            // An empty 2xx body is not a usable document.
            Ok(b) if b.is_empty() => FetchOutcome::failed(FetchStatus::HttpError { code }),
            Ok(b) => FetchOutcome {
                status: FetchStatus::Ok,
                body: b,
                content_type: Some(content_type.unwrap_or_else(|| "application/octet-stream".into())),
            },
            Err(e) => network_failure(e),
        }
    }
}

impl DocumentFetcher for HttpFetcher {
    fn fetch(&self, url: &str) -> FetchOutcome {
        let mut outcome = self.fetch_once(url);
        for _ in 0..self.retries {
            let retryable = match &outcome.status {
                FetchStatus::Timeout | FetchStatus::NetworkError { .. } => true,
                FetchStatus::HttpError { code } => *code >= 500,
                _ => false,
            };
            if !retryable {
                break;
            }
            outcome = self.fetch_once(url);
        }
        outcome
    }
}
