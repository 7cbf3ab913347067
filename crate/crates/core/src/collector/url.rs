//! Tracking-URL resolution and URL normalization.

use percent_encoding::percent_decode_str;
use serde::{Deserialize, Serialize};
use url::Url;

/// A redirector that wraps the real result URL in a query parameter,
/// e.g. `https://www.google.de/url?q=<target>&sa=...`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackingPattern {
    pub host: String,
    /// Path prefix the redirector serves under, e.g. `/url`.
    #[serde(default = "root_path")]
    pub path: String,
    /// Name of the parameter carrying the target.
    pub param: String,
}

fn root_path() -> String {
    "/".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Resolution {
    /// Not a tracking URL; the raw URL is the result URL.
    Direct { url: String },
    /// A tracking URL whose target was decoded.
    Decoded { url: String },
    Unresolvable { reason: String },
}

impl Resolution {
    pub fn url(&self) -> Option<&str> {
        match self {
            Resolution::Direct { url } | Resolution::Decoded { url } => Some(url),
            Resolution::Unresolvable { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum UrlError {
    #[error("unparseable url {url:?}: {reason}")]
    Unparseable { url: String, reason: String },
    #[error("unsupported scheme {0:?}")]
    UnsupportedScheme(String),
}

const MAX_REDIRECT_NESTING: usize = 5;

impl TrackingPattern {
    fn matches(&self, url: &Url) -> bool {
        url.host_str()
            .is_some_and(|h| h.eq_ignore_ascii_case(&self.host))
            && url.path().starts_with(&self.path)
    }
}

/// Decode tracking redirectors (nested ones too). Non-tracking URLs pass
/// through unchanged.
pub fn resolve_url(raw_url: &str, patterns: &[TrackingPattern]) -> Resolution {
    let mut current = raw_url.to_string();
    let mut decoded = false;
    for _ in 0..=MAX_REDIRECT_NESTING {
        let parsed = match Url::parse(&current) {
            Ok(u) => u,
            Err(e) => {
                return Resolution::Unresolvable {
                    reason: format!("invalid url: {e}"),
                }
            }
        };
        let Some(pattern) = patterns.iter().find(|p| p.matches(&parsed)) else {
            return if decoded {
                Resolution::Decoded { url: current }
            } else {
                Resolution::Direct { url: current }
            };
        };
        let target = match query_param(parsed.query().unwrap_or(""), &pattern.param) {
            Ok(Some(t)) => t,
            Ok(None) => {
                return Resolution::Unresolvable {
                    reason: format!("missing target parameter {:?}", pattern.param),
                }
            }
            Err(reason) => return Resolution::Unresolvable { reason },
        };
        match Url::parse(&target) {
            Ok(t) if matches!(t.scheme(), "http" | "https") => {}
            _ => {
                return Resolution::Unresolvable {
                    reason: "target is not an absolute http(s) url".into(),
                }
            }
        }
        current = target;
        decoded = true;
    }
    Resolution::Unresolvable {
        reason: "redirector nesting too deep".into(),
    }
}

/// Strict form-urlencoded lookup: a target that does not percent-decode to
/// valid UTF-8 is an error rather than being patched with replacement chars.
fn query_param(query: &str, name: &str) -> Result<Option<String>, String> {
    for pair in query.split('&') {
        let (k, v) = pair.split_once('=').unwrap_or((pair, ""));
        let k = form_decode(k)?;
        if k == name {
            let v = form_decode(v)?;
            return Ok((!v.is_empty()).then_some(v));
        }
    }
    Ok(None)
}

fn form_decode(s: &str) -> Result<String, String> {
    let plus = s.replace('+', " ");
    percent_decode_str(&plus)
        .decode_utf8()
        .map(|c| c.into_owned())
        .map_err(|_| "target parameter is not valid UTF-8 after decoding".to_string())
}

/// Canonical form used for dedup: lower-case scheme and host, no default
/// port, no fragment, `/` for an empty path, no empty query, and
/// percent-escapes canonicalized (unreserved characters decoded, hex digits
/// upper-cased). Everything else is preserved.
pub fn normalize_url(resolved_url: &str) -> Result<String, UrlError> {
    let mut url = Url::parse(resolved_url.trim()).map_err(|e| UrlError::Unparseable {
        url: resolved_url.to_string(),
        reason: e.to_string(),
    })?;
    if !matches!(url.scheme(), "http" | "https") {
        return Err(UrlError::UnsupportedScheme(url.scheme().to_string()));
    }
    if url.host_str().is_none_or(|h| h.is_empty()) {
        return Err(UrlError::Unparseable {
            url: resolved_url.to_string(),
            reason: "missing host".into(),
        });
    }
    url.set_fragment(None);
    let path = canonical_escapes(url.path());
    url.set_path(&path);
    match url.query() {
        Some("") => url.set_query(None),
        Some(q) => {
            let q = canonical_escapes(q);
            url.set_query(Some(&q));
        }
        None => {}
    }
    Ok(url.to_string())
}

fn canonical_escapes(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = String::with_capacity(s.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' && i + 2 < bytes.len() {
            let hi = (bytes[i + 1] as char).to_digit(16);
            let lo = (bytes[i + 2] as char).to_digit(16);
            if let (Some(hi), Some(lo)) = (hi, lo) {
                let b = (hi * 16 + lo) as u8;
                if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'.' | b'_' | b'~') {
                    out.push(b as char);
                } else {
                    out.push('%');
                    out.push_str(&format!("{b:02X}"));
                }
                i += 3;
                continue;
            }
        }
        // A stray '%' would pair with whatever a later decode puts after it.
        if bytes[i] == b'%' {
            out.push_str("%25");
            i += 1;
            continue;
        }
        // Input is a serialized URL component, so all bytes are ASCII.
        out.push(bytes[i] as char);
        i += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn google() -> Vec<TrackingPattern> {
        vec![TrackingPattern {
            host: "www.google.de".into(),
            path: "/url".into(),
            param: "url".into(),
        }]
    }

    #[test]
    fn stray_percent_is_escaped() {
        let once = normalize_url("http://a.de?%%30a").unwrap();
        assert_eq!(once, "http://a.de/?%250a");
        assert_eq!(normalize_url(&once).unwrap(), once);
    }

    #[test]
    fn non_tracking_urls_pass_through() {
        assert_eq!(
            resolve_url("https://example.org/page", &google()),
            Resolution::Direct {
                url: "https://example.org/page".into()
            }
        );
    }

    #[test]
    fn tracking_target_is_decoded() {
        let target = "https://site.de/a";
        let encoded: String =
            url::form_urlencoded::byte_serialize(target.as_bytes()).collect();
        assert_eq!(encoded, "https%3A%2F%2Fsite.de%2Fa");
        let raw = format!("https://www.google.de/url?sa=t&url={encoded}&ved=0");
        assert_eq!(
            resolve_url(&raw, &google()),
            Resolution::Decoded { url: target.into() }
        );
    }

    #[test]
    fn missing_or_bad_target_is_unresolvable() {
        let cases = [
            "https://www.google.de/url?sa=t&ved=0",
            "https://www.google.de/url?url=",
            "https://www.google.de/url?url=%FF%FE",
            "https://www.google.de/url?url=not-a-url",
            "https://www.google.de/url?url=javascript%3Aalert(1)",
        ];
        for raw in cases {
            assert!(
                matches!(resolve_url(raw, &google()), Resolution::Unresolvable { .. }),
                "{raw}"
            );
        }
    }

    #[test]
    fn nested_redirectors_resolve_fully() {
        let inner = "https://www.google.de/url?url=https%3A%2F%2Fsite.de%2Fb";
        let outer = format!(
            "https://www.google.de/url?url={}",
            url::form_urlencoded::byte_serialize(inner.as_bytes()).collect::<String>()
        );
        assert_eq!(
            resolve_url(&outer, &google()).url(),
            Some("https://site.de/b")
        );
    }

    #[test]
    fn other_paths_on_the_redirector_host_are_direct() {
        assert!(matches!(
            resolve_url("https://www.google.de/maps?url=x", &google()),
            Resolution::Direct { .. }
        ));
    }

    #[test]
    fn normalization_rules() {
        assert_eq!(
            normalize_url("HTTP://Example.DE:80/A#frag").unwrap(),
            "http://example.de/A"
        );
        assert_eq!(
            normalize_url("https://a.de").unwrap(),
            normalize_url("https://a.de/").unwrap()
        );
        assert_eq!(
            normalize_url("https://a.de:443/%7euser/%2fx%2F?q=%41%3d").unwrap(),
            "https://a.de/~user/%2Fx%2F?q=A%3D"
        );
        assert_eq!(normalize_url("https://a.de/x?").unwrap(), "https://a.de/x");
        assert_eq!(
            normalize_url("https://a.de:8080/x?b=2&a=1").unwrap(),
            "https://a.de:8080/x?b=2&a=1"
        );
        assert!(normalize_url("not a url").is_err());
        assert!(matches!(
            normalize_url("mailto:x@y.de"),
            Err(UrlError::UnsupportedScheme(_))
        ));
    }

    fn arb_url() -> impl Strategy<Value = String> {
        let scheme = prop_oneof![Just("http"), Just("https"), Just("HTTP"), Just("HtTpS")];
        let host = "[a-zA-Z][a-zA-Z0-9-]{0,8}\\.(de|com|ORG)";
        let port = prop_oneof![Just(String::new()), Just(":80".into()), Just(":443".into()), Just(":8080".into())];
        let seg = "([a-zA-Z0-9._~-]|%[0-9a-fA-F]{2}|[ äö!$'()*+,;=@:])*";
        let path = prop::collection::vec(seg, 0..4).prop_map(|s| {
            if s.is_empty() { String::new() } else { format!("/{}", s.join("/")) }
        });
        let query = prop_oneof![
            Just(String::new()),
            "([a-zA-Z0-9=&%_ -]|%[0-9a-fA-F]{2}){0,12}".prop_map(|q| format!("?{q}"))
        ];
        let frag = prop_oneof![Just(String::new()), "[a-z0-9]{0,5}".prop_map(|f| format!("#{f}"))];
        (scheme, host, port, path, query, frag)
            .prop_map(|(s, h, p, pa, q, f)| format!("{s}://{h}{p}{pa}{q}{f}"))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn normalization_is_idempotent(u in arb_url()) {
            let once = normalize_url(&u).unwrap();
            prop_assert_eq!(normalize_url(&once).unwrap(), once);
        }

        #[test]
        fn resolve_then_normalize_is_idempotent(u in arb_url(), wrap in any::<bool>()) {
            let raw = if wrap {
                format!("https://www.google.de/url?url={}",
                    url::form_urlencoded::byte_serialize(u.as_bytes()).collect::<String>())
            } else { u };
            let f = |x: &str| resolve_url(x, &google()).url().map(|r| normalize_url(r).unwrap());
            if let Some(once) = f(&raw) {
                prop_assert_eq!(f(&once), Some(once.clone()));
            }
        }
    }
}
