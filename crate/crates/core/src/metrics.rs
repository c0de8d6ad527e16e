//! Character error rate and table-shaped evaluation reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

use crate::corpus::ParallelCorpus;
use crate::decoder::{normalize_lines, DecodeConfig};
use crate::error::{Error, Result};
use crate::tokenizer::BpeModel;
use crate::transformer::Transformer;

/// Columns that always lead a table, in this order, when present.
pub const LEADING_TAGS: [&str; 4] = ["P", "B", "C", "G"];

/// Unit-cost edit distance over Unicode scalar values after NFC.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.nfc().collect();
    let b: Vec<char> = b.nfc().collect();
    levenshtein_chars(&a, &b)
}

pub fn levenshtein_chars(a: &[char], b: &[char]) -> usize {
    if a.len() < b.len() {
        return levenshtein_chars(b, a);
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn char_len(s: &str) -> usize {
    s.nfc().count()
}

/// Edit and reference-character totals for a group of pairs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub pairs: usize,
    pub edits: usize,
    pub ref_chars: usize,
}

impl EditCounts {
    pub fn add(&mut self, hyp: &str, reference: &str) {
        self.pairs += 1;
        self.edits += levenshtein(hyp, reference);
        self.ref_chars += char_len(reference);
    }

    pub fn merge(&mut self, other: &EditCounts) {
        self.pairs += other.pairs;
        self.edits += other.edits;
        self.ref_chars += other.ref_chars;
    }

    /// Micro-averaged CER in percent.
    pub fn cer(&self) -> Result<f64> {
        if self.ref_chars == 0 {
            return Err(Error::invalid("CER undefined: references contain no characters"));
        }
        Ok(100.0 * self.edits as f64 / self.ref_chars as f64)
    }
}

/// `100 · Σ lev(hyp, ref) / Σ |ref|`.
pub fn corpus_cer<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::invalid(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let mut counts = EditCounts::default();
    for (h, r) in hyps.iter().zip(refs) {
        counts.add(h.as_ref(), r.as_ref());
    }
    counts.cer()
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TagScore {
    /// Percent, rounded to two decimals.
    pub cer: f64,
    pub pairs: usize,
    pub ref_chars: usize,
    pub edits: usize,
}

impl TagScore {
    fn from_counts(c: &EditCounts) -> Result<Self> {
        Ok(Self {
            cer: round2(c.cer()?),
            pairs: c.pairs,
            ref_chars: c.ref_chars,
            edits: c.edits,
        })
    }

    /// Unrounded CER in percent.
    pub fn exact_cer(&self) -> f64 {
        100.0 * self.edits as f64 / self.ref_chars.max(1) as f64
    }
}

/// Per-tag and union scores for one system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CerTable {
    pub tags: BTreeMap<String, TagScore>,
    pub joint: TagScore,
    /// Arithmetic mean of the per-tag CERs, for comparison with `joint`.
    pub tag_mean: f64,
}

impl CerTable {
    /// Score `hyps` against the targets of `corpus`, grouped by tag.
    pub fn score<H: AsRef<str>>(hyps: &[H], corpus: &ParallelCorpus) -> Result<Self> {
        if hyps.len() != corpus.len() {
            return Err(Error::invalid(format!(
                "{} hypotheses for {} test pairs",
                hyps.len(),
                corpus.len()
            )));
        }
        let mut groups: BTreeMap<String, EditCounts> = BTreeMap::new();
        for (h, p) in hyps.iter().zip(&corpus.pairs) {
            groups.entry(p.tag.clone()).or_default().add(h.as_ref(), &p.target);
        }
        let mut joint = EditCounts::default();
        let mut tags = BTreeMap::new();
        for (tag, c) in &groups {
            joint.merge(c);
            tags.insert(tag.clone(), TagScore::from_counts(c)?);
        }
        let tag_mean = round2(groups.values().map(|c| c.cer()).sum::<Result<f64>>()? / groups.len().max(1) as f64);
        Ok(Self {
            tags,
            joint: TagScore::from_counts(&joint)?,
            tag_mean,
        })
    }

    pub fn row(&self, label: &str) -> TableRow {
        TableRow {
            label: label.to_string(),
            tags: self.tags.iter().map(|(k, v)| (k.clone(), v.cer)).collect(),
            joint: self.joint.cer,
            mean: self.tag_mean,
        }
    }

    pub fn copy_baseline(corpus: &ParallelCorpus) -> Result<Self> {
        let sources: Vec<&str> = corpus.sources().collect();
        Self::score(&sources, corpus)
    }
}

/// Error of emitting every source unchanged.
pub fn copy_baseline_cer(corpus: &ParallelCorpus) -> Result<f64> {
    let sources: Vec<&str> = corpus.sources().collect();
    let targets: Vec<&str> = corpus.targets().collect();
    corpus_cer(&sources, &targets)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CerReport {
    pub tags: BTreeMap<String, TagScore>,
    pub joint: TagScore,
    pub tag_mean: f64,
    pub copy_baseline: CerTable,
    pub aggregation: String,
    pub config_digest: String,
    pub truncated: usize,
}

impl CerReport {
    pub fn new(model: CerTable, copy_baseline: CerTable, config_digest: String, truncated: usize) -> Self {
        Self {
            tags: model.tags,
            joint: model.joint,
            tag_mean: model.tag_mean,
            copy_baseline,
            aggregation: "micro".into(),
            config_digest,
            truncated,
        }
    }

    pub fn model_table(&self) -> CerTable {
        CerTable {
            tags: self.tags.clone(),
            joint: self.joint.clone(),
            tag_mean: self.tag_mean,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_table(&self, label: &str) -> String {
        render_table(&[self.model_table().row(label), self.copy_baseline.row("Copy")])
    }
}

/// Column order: P, B, C, G when present, then any other tags sorted.
pub fn column_order<'a>(tags: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut all: Vec<&str> = tags.into_iter().collect();
    all.sort_unstable();
    all.dedup();
    let mut out: Vec<String> = LEADING_TAGS
        .iter()
        .filter(|t| all.contains(t))
        .map(|t| t.to_string())
        .collect();
    out.extend(all.iter().filter(|t| !LEADING_TAGS.contains(t)).map(|t| t.to_string()));
    out
}

/// One line of a CER table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub tags: BTreeMap<String, f64>,
    pub joint: f64,
    pub mean: f64,
}

/// Aligned text table with one row per system and columns per tag, then Joint and Mean.
pub fn render_table(rows: &[TableRow]) -> String {
    let cols = column_order(rows.iter().flat_map(|r| r.tags.keys().map(String::as_str)));
    let mut header = vec![String::new()];
    header.extend(cols.iter().cloned());
    header.push("Joint".into());
    header.push("Mean".into());
    let mut grid = vec![header];
    for r in rows {
        let mut line = vec![r.label.clone()];
        for c in &cols {
            line.push(r.tags.get(c).map_or("-".into(), |v| format!("{v:.2}")));
        }
        line.push(format!("{:.2}", r.joint));
        line.push(format!("{:.2}", r.mean));
        grid.push(line);
    }
    let widths: Vec<usize> = (0..grid[0].len())
        .map(|j| grid.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &grid {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(j, c)| {
                if j == 0 {
                    format!("{c:<w$}", w = widths[j])
                } else {
                    format!("{c:>w$}", w = widths[j])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

pub fn config_digest(cfg: &DecodeConfig, tokenizer: &BpeModel) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cfg)?);
    h.update(tokenizer.content_hash().as_bytes());
    Ok(hex::encode(h.finalize()))
}

/// Normalize every source of `test` and score it per tag against the targets.
pub fn evaluate(model: &Transformer<f32>, tokenizer: &BpeModel, test: &ParallelCorpus, cfg: &DecodeConfig) -> Result<CerReport> {
    let sources: Vec<&str> = test.sources().collect();
    let outputs = normalize_lines(model, tokenizer, &sources, cfg)?;
    let truncated = outputs.iter().filter(|o| o.truncated).count();
    let hyps: Vec<String> = outputs.into_iter().map(|o| o.text).collect();
    Ok(CerReport::new(
        CerTable::score(&hyps, test)?,
        CerTable::copy_baseline(test)?,
        config_digest(cfg, tokenizer)?,
        truncated,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_distances() {
        assert_eq!(levenshtein("abc", "abc"), 0);
        assert_eq!(levenshtein("", "ab"), 2);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("e\u{301}", "\u{e9}"), 0);
    }

    #[test]
    fn micro_average() {
        assert_eq!(corpus_cer(&["ab"], &["ac"]).unwrap(), 50.0);
        assert_eq!(corpus_cer(&["a", "cd"], &["ab", "cd"]).unwrap(), 25.0);
        assert_eq!(corpus_cer(&["a", "ccc"], &["ab", "ccc"]).unwrap(), 20.0);
        assert!(corpus_cer(&["a"], &["a", "b"]).is_err());
        assert!(corpus_cer(&[""], &[""]).is_err());
    }

    #[test]
    fn columns_lead_with_known_tags() {
        assert_eq!(column_order(["G", "x", "P", "C", "B"]), ["P", "B", "C", "G", "x"]);
        assert_eq!(column_order(["zz", "aa"]), ["aa", "zz"]);
    }
}
