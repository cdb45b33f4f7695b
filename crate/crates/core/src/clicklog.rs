//! Click-log parsing and query-coherent sessionization.
//!
//! A click log is a tab-separated text stream, one click per line:
//!
//! ```text
//! user_id <TAB> timestamp <TAB> query text <TAB> item_id
//! ```
//!
//! Lines starting with `#` and blank lines are skipped. Query text is
//! lowercased and split on whitespace into a token set.

use std::collections::BTreeSet;
use std::io::BufRead;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClickEvent {
    pub user_id: String,
    pub timestamp: u64,
    pub query_tokens: BTreeSet<String>,
    pub item_id: String,
}

impl ClickEvent {
    pub fn new(user_id: &str, timestamp: u64, query: &str, item_id: &str) -> Result<Self> {
        if user_id.is_empty() {
            return Err(Error::invalid("empty user id"));
        }
        if item_id.is_empty() {
            return Err(Error::invalid("empty item id"));
        }
        let query_tokens = tokenize(query);
        if query_tokens.is_empty() {
            return Err(Error::invalid("query has no tokens"));
        }
        Ok(ClickEvent {
            user_id: user_id.to_string(),
            timestamp,
            query_tokens,
            item_id: item_id.to_string(),
        })
    }
}

/// A maximal run of one user's clicks with mutually similar queries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub user_id: String,
    pub events: Vec<ClickEvent>,
}

impl Session {
    pub fn items(&self) -> impl Iterator<Item = &str> {
        self.events.iter().map(|e| e.item_id.as_str())
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionConfig {
    pub jaccard_threshold: f64,
    pub max_gap_seconds: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            jaccard_threshold: 0.3,
            max_gap_seconds: 1800,
        }
    }
}

impl SessionConfig {
    pub fn new(jaccard_threshold: f64, max_gap_seconds: u64) -> Result<Self> {
        let cfg = SessionConfig {
            jaccard_threshold,
            max_gap_seconds,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.jaccard_threshold) {
            return Err(Error::invalid(format!(
                "jaccard threshold {} outside [0, 1]",
                self.jaccard_threshold
            )));
        }
        if self.max_gap_seconds == 0 {
            return Err(Error::invalid("max session gap must be positive"));
        }
        Ok(())
    }
}

pub fn tokenize(query: &str) -> BTreeSet<String> {
    query.split_whitespace().map(str::to_lowercase).collect()
}

pub fn parse_click_log<R: BufRead>(reader: R) -> Result<Vec<ClickEvent>> {
    let mut events = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        events.push(parse_click_line(trimmed, lineno)?);
    }
    Ok(events)
}

pub fn parse_click_log_str(text: &str) -> Result<Vec<ClickEvent>> {
    parse_click_log(text.as_bytes())
}

fn parse_click_line(line: &str, lineno: usize) -> Result<ClickEvent> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 4 {
        return Err(Error::parse(
            lineno,
            format!("expected 4 tab-separated fields, found {}", fields.len()),
        ));
    }
    let user_id = fields[0].trim();
    let item_id = fields[3].trim();
    if user_id.is_empty() {
        return Err(Error::parse(lineno, "empty user id"));
    }
    if item_id.is_empty() {
        return Err(Error::parse(lineno, "empty item id"));
    }
    let timestamp: u64 = fields[1]
        .trim()
        .parse()
        .map_err(|_| Error::parse(lineno, format!("bad timestamp {:?}", fields[1])))?;
    let query_tokens = tokenize(fields[2]);
    if query_tokens.is_empty() {
        return Err(Error::parse(lineno, "empty query"));
    }
    Ok(ClickEvent {
        user_id: user_id.to_string(),
        timestamp,
        query_tokens,
        item_id: item_id.to_string(),
    })
}

/// Token-set Jaccard similarity `|a ∩ b| / |a ∪ b|`.
pub fn query_similarity(a: &BTreeSet<String>, b: &BTreeSet<String>) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("query similarity of an empty token set"));
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    Ok(inter as f64 / union as f64)
}

/// Stable sort by `(user_id, timestamp)`, the order [`segment_sessions`] expects.
pub fn sort_events(events: &mut [ClickEvent]) {
    events.sort_by(|a, b| {
        a.user_id
            .cmp(&b.user_id)
            .then(a.timestamp.cmp(&b.timestamp))
    });
}

/// Drops events older than `max_age_secs` before the newest event in the log.
pub fn retain_recent(events: &mut Vec<ClickEvent>, max_age_secs: u64) {
    let Some(newest) = events.iter().map(|e| e.timestamp).max() else {
        return;
    };
    let cutoff = newest.saturating_sub(max_age_secs);
    events.retain(|e| e.timestamp >= cutoff);
}

/// Cuts each user's time-ordered clicks into sessions.
///
/// A new session starts whenever the query similarity to the previous click
/// drops below the threshold or the time gap exceeds the configured maximum.
/// Input must be sorted by `(user_id, timestamp)`; users need not be
/// contiguous-sorted in any particular user order beyond that.
pub fn segment_sessions(events: &[ClickEvent], cfg: &SessionConfig) -> Result<Vec<Session>> {
    cfg.validate()?;
    let mut sessions: Vec<Session> = Vec::new();
    let mut current: Option<Session> = None;
    for (i, ev) in events.iter().enumerate() {
        if i > 0 {
            let prev = &events[i - 1];
            let ordered = match prev.user_id.cmp(&ev.user_id) {
                std::cmp::Ordering::Less => true,
                std::cmp::Ordering::Equal => prev.timestamp <= ev.timestamp,
                std::cmp::Ordering::Greater => false,
            };
            if !ordered {
                return Err(Error::invalid(format!(
                    "events not sorted by (user, timestamp) at index {i}"
                )));
            }
        }
        let split = match &current {
            None => true,
            Some(s) => {
                let last = s.events.last().expect("sessions are never empty");
                last.user_id != ev.user_id
                    || ev.timestamp - last.timestamp > cfg.max_gap_seconds
                    || query_similarity(&last.query_tokens, &ev.query_tokens)?
                        < cfg.jaccard_threshold
            }
        };
        if split {
            if let Some(done) = current.take() {
                sessions.push(done);
            }
            current = Some(Session {
                user_id: ev.user_id.clone(),
                events: vec![ev.clone()],
            });
        } else if let Some(s) = current.as_mut() {
            s.events.push(ev.clone());
        }
    }
    sessions.extend(current);
    Ok(sessions)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(words: &[&str]) -> BTreeSet<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    fn ev(user: &str, ts: u64, q: &str, item: &str) -> ClickEvent {
        ClickEvent::new(user, ts, q, item).unwrap()
    }

    #[test]
    fn parse_empty_stream() {
        assert!(parse_click_log_str("").unwrap().is_empty());
    }

    #[test]
    fn parse_single_line() {
        let got = parse_click_log_str("u1\t100\tRed Dress\ti42").unwrap();
        assert_eq!(got, vec![ev("u1", 100, "red dress", "i42")]);
        assert_eq!(got[0].query_tokens, toks(&["red", "dress"]));
    }

    #[test]
    fn parse_wrong_field_count_names_line() {
        let err = parse_click_log_str("u1\t100\tred dress").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn parse_skips_comments_and_reports_later_lines() {
        let text = "# header\nu1\t1\ta\ti1\nu1\tx\ta\ti2\n";
        let err = parse_click_log_str(text).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let ok = parse_click_log_str("# c\n\nu1\t1\ta\ti1\n").unwrap();
        assert_eq!(ok.len(), 1);
    }

    #[test]
    fn parse_rejects_empty_ids_and_negative_time() {
        assert!(parse_click_log_str("\t1\ta\ti1").is_err());
        assert!(parse_click_log_str("u1\t1\ta\t ").is_err());
        assert!(parse_click_log_str("u1\t-5\ta\ti1").is_err());
        assert!(parse_click_log_str("u1\t5\t  \ti1").is_err());
    }

    #[test]
    fn similarity_examples() {
        let rd = toks(&["red", "dress"]);
        assert_eq!(query_similarity(&rd, &rd).unwrap(), 1.0);
        assert_eq!(query_similarity(&rd, &toks(&["blue", "shoes"])).unwrap(), 0.0);
        let third = query_similarity(&rd, &toks(&["red", "shoes"])).unwrap();
        assert!((third - 1.0 / 3.0).abs() < 1e-15);
        assert!(query_similarity(&rd, &BTreeSet::new()).is_err());
    }

    #[test]
    fn segment_examples() {
        let cfg = SessionConfig::default();
        let one = segment_sessions(&[ev("u", 1, "a b", "x")], &cfg).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].len(), 1);

        let same = [ev("u", 0, "red dress", "x"), ev("u", 10, "red dress", "y")];
        let s = segment_sessions(&same, &cfg).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].len(), 2);

        let disjoint = [ev("u", 0, "red dress", "x"), ev("u", 10, "blue shoes", "y")];
        assert_eq!(segment_sessions(&disjoint, &cfg).unwrap().len(), 2);
    }

    #[test]
    fn segment_splits_on_gap_and_user() {
        let cfg = SessionConfig::default();
        let events = [
            ev("u1", 0, "q", "a"),
            ev("u1", 1801, "q", "b"),
            ev("u2", 1802, "q", "c"),
        ];
        let s = segment_sessions(&events, &cfg).unwrap();
        assert_eq!(s.len(), 3);
        let at_limit = [ev("u1", 0, "q", "a"), ev("u1", 1800, "q", "b")];
        assert_eq!(segment_sessions(&at_limit, &cfg).unwrap().len(), 1);
    }

    #[test]
    fn segment_rejects_unsorted() {
        let cfg = SessionConfig::default();
        let events = [ev("u1", 10, "q", "a"), ev("u1", 5, "q", "b")];
        assert!(segment_sessions(&events, &cfg).is_err());
        let users = [ev("u2", 1, "q", "a"), ev("u1", 5, "q", "b")];
        assert!(segment_sessions(&users, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SessionConfig::new(1.5, 10).is_err());
        assert!(SessionConfig::new(0.5, 0).is_err());
        assert!(SessionConfig::new(0.0, 1).is_ok());
    }

    #[test]
    fn retain_recent_drops_old_clicks() {
        let mut events = vec![ev("u", 0, "q", "a"), ev("u", 100, "q", "b"), ev("u", 50, "q", "c")];
        retain_recent(&mut events, 50);
        let items: Vec<_> = events.iter().map(|e| e.item_id.as_str()).collect();
        assert_eq!(items, ["b", "c"]);
    }
}
