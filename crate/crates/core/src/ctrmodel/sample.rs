use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// One labeled impression: `label<TAB>query<TAB>user<TAB>ad<TAB>c1,c2,...`
/// with clicks ordered oldest to newest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub query: String,
    pub user_id: String,
    pub ad_item: String,
    pub pre_clicks: Vec<String>,
    pub label: u8,
}

impl Sample {
    /// The `max_len` most recent clicks.
    pub fn recent_clicks(&self, max_len: usize) -> &[String] {
        let start = self.pre_clicks.len().saturating_sub(max_len);
        &self.pre_clicks[start..]
    }

    pub fn truncate_clicks(&mut self, max_len: usize) {
        let start = self.pre_clicks.len().saturating_sub(max_len);
        self.pre_clicks.drain(..start);
    }

    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.label,
            self.query,
            self.user_id,
            self.ad_item,
            self.pre_clicks.join(",")
        )
    }
}

/// Lowercased, whitespace-normalized query text; the query vocabulary key.
pub(crate) fn normalize_query(q: &str) -> String {
    q.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn parse_samples<R: BufRead>(reader: R) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::parse(
                lineno,
                format!("expected 5 tab-separated fields, found {}", fields.len()),
            ));
        }
        let label = match fields[0].trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(Error::parse(lineno, format!("label {other:?} is not 0 or 1"))),
        };
        let user_id = fields[2].trim();
        let ad_item = fields[3].trim();
        if user_id.is_empty() || ad_item.is_empty() {
            return Err(Error::parse(lineno, "empty user or ad id"));
        }
        let pre_clicks = fields[4]
            .split(',')
            .map(str::trim)
            .filter(|c| !c.is_empty())
            .map(String::from)
            .collect();
        out.push(Sample {
            query: normalize_query(fields[1]),
            user_id: user_id.to_string(),
            ad_item: ad_item.to_string(),
            pre_clicks,
            label,
        });
    }
    Ok(out)
}

pub fn parse_samples_str(text: &str) -> Result<Vec<Sample>> {
    parse_samples(text.as_bytes())
}

pub fn write_samples<W: Write>(samples: &[Sample], mut sink: W) -> Result<()> {
    for s in samples {
        writeln!(sink, "{}", s.to_line())?;
    }
    sink.flush()?;
    Ok(())
}
