//! Exact rank-sum AUC and behavior-length bucket reports.

use std::fmt::Write as _;

use crate::ctrmodel::cross_entropy;
use crate::error::{Error, Result};

/// Twice the Mann–Whitney U statistic of the positives, as an exact integer.
/// Tied scores contribute half a pair each.
fn doubled_u(scores: &[f64], labels: &[u8]) -> Result<(u64, u64, u64)> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::invalid(format!("label {bad} is not 0 or 1")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("AUC needs at least one positive and one negative"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // With 1-based ranks, a tie group spanning [start, end) has average rank
    // (start + end + 1) / 2, so doubled ranks stay integral.
    let mut doubled_rank_sum: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let group_pos = order[start..end].iter().filter(|&&i| labels[i] == 1).count() as u64;
        doubled_rank_sum += group_pos * (start + end + 1) as u64;
        start = end;
    }
    Ok((doubled_rank_sum - pos * (pos + 1), pos, neg))
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half, computed from ranks in `O(n log n)`.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (u2, pos, neg) = doubled_u(scores, labels)?;
    Ok(u2 as f64 / (2 * pos * neg) as f64)
}

/// Behavior-length band of a sample's click history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Bucket {
    Empty,
    OneToTwo,
    ThreeToFive,
    SixToTen,
    ElevenPlus,
}

impl Bucket {
    pub const ALL: [Bucket; 5] = [
        Bucket::Empty,
        Bucket::OneToTwo,
        Bucket::ThreeToFive,
        Bucket::SixToTen,
        Bucket::ElevenPlus,
    ];

    pub fn of_len(len: usize) -> Self {
        match len {
            0 => Bucket::Empty,
            1..=2 => Bucket::OneToTwo,
            3..=5 => Bucket::ThreeToFive,
            6..=10 => Bucket::SixToTen,
            _ => Bucket::ElevenPlus,
        }
    }

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Bucket::Empty => "0",
            Bucket::OneToTwo => "1-2",
            Bucket::ThreeToFive => "3-5",
            Bucket::SixToTen => "6-10",
            Bucket::ElevenPlus => "11-20",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSummary {
    pub name: String,
    pub auc: f64,
    pub logloss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketRow {
    pub bucket: Bucket,
    pub count: usize,
    /// One entry per model; `None` when the bucket has a single class.
    pub auc: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub total: usize,
    pub models: Vec<ModelSummary>,
    /// Non-empty buckets in ascending order.
    pub buckets: Vec<BucketRow>,
}

/// Overall and per-bucket AUC for each named score list.
///
/// `click_lens[i]` is the (truncated) history length of sample `i`; every
/// score list must align with `labels`.
pub fn bucket_report(
    click_lens: &[usize],
    labels: &[u8],
    models: &[(String, Vec<f64>)],
) -> Result<EvalReport> {
    if click_lens.len() != labels.len() {
        return Err(Error::invalid("click lengths and labels differ in length"));
    }
    let mut summaries = Vec::with_capacity(models.len());
    for (name, scores) in models {
        summaries.push(ModelSummary {
            name: name.clone(),
            auc: auc(scores, labels)?,
            logloss: cross_entropy(scores, labels)?,
        });
    }
    let mut buckets = Vec::new();
    for b in Bucket::ALL {
        let idx: Vec<usize> = (0..labels.len())
            .filter(|&i| Bucket::of_len(click_lens[i]) == b)
            .collect();
        if idx.is_empty() {
            continue;
        }
        let sub_labels: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
        let aucs = models
            .iter()
            .map(|(_, scores)| {
                let sub: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
                auc(&sub, &sub_labels).ok()
            })
            .collect();
        buckets.push(BucketRow {
            bucket: b,
            count: idx.len(),
            auc: aucs,
        });
    }
    Ok(EvalReport {
        total: labels.len(),
        models: summaries,
        buckets,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

impl EvalReport {
    /// Human-readable aligned table. With several models, a `Δ` column gives
    /// each model's per-bucket AUC minus the first model's.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let name_w = self.models.iter().map(|m| m.name.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(out, "samples: {}", self.total);
        let _ = writeln!(out, "{:<name_w$}  {:>10}  {:>10}", "model", "auc", "logloss");
        for m in &self.models {
            let _ = writeln!(out, "{:<name_w$}  {:>10.6}  {:>10.6}", m.name, m.auc, m.logloss);
        }
        let _ = writeln!(out);
        let mut header = format!("{:<7}  {:>7}", "bucket", "count");
        for m in &self.models {
            let _ = write!(header, "  {:>w$}", m.name, w = m.name.len().max(10));
        }
        for m in self.models.iter().skip(1) {
            let label = format!("Δ{}", m.name);
            let _ = write!(header, "  {:>w$}", label, w = label.chars().count().max(10));
        }
        let _ = writeln!(out, "{header}");
        for row in &self.buckets {
            let mut line = format!("{:<7}  {:>7}", row.bucket.label(), row.count);
            for (m, a) in self.models.iter().zip(&row.auc) {
                let _ = write!(line, "  {:>w$}", fmt_opt(*a), w = m.name.len().max(10));
            }
            for (k, m) in self.models.iter().enumerate().skip(1) {
                let diff = match (row.auc[0], row.auc[k]) {
                    (Some(a), Some(b)) => Some(b - a),
                    _ => None,
                };
                let w = format!("Δ{}", m.name).chars().count().max(10);
                let _ = write!(line, "  {:>w$}", fmt_opt(diff));
            }
            let _ = writeln!(out, "{line}");
        }
        out
    }

    /// One `metric<TAB>value` line per metric, full precision.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "samples\t{}", self.total);
        for m in &self.models {
            let _ = writeln!(out, "{}.auc\t{:.17}", m.name, m.auc);
            let _ = writeln!(out, "{}.logloss\t{:.17}", m.name, m.logloss);
        }
        for row in &self.buckets {
            let b = row.bucket.label();
            let _ = writeln!(out, "bucket.{b}.count\t{}", row.count);
            for (m, a) in self.models.iter().zip(&row.auc) {
                let v = a.map_or_else(|| "NA".to_string(), |x| format!("{x:.17}"));
                let _ = writeln!(out, "bucket.{b}.{}.auc\t{v}", m.name);
            }
        }
        out
    }
}
