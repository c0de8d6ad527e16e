//! Parallel and monolingual corpora: loading, splitting, merging, upsampling.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::tokenizer::BpeModel;

/// An unnormalized sentence aligned with its normalized form.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SentencePair {
    pub source: String,
    pub target: String,
    pub tag: String,
}

impl SentencePair {
    pub fn new(source: impl Into<String>, target: impl Into<String>, tag: impl Into<String>) -> Result<Self> {
        let pair = Self {
            source: source.into(),
            target: target.into(),
            tag: tag.into(),
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<()> {
        check_side("source", &self.source)?;
        check_side("target", &self.target)?;
        if self.tag.trim().is_empty() {
            return Err(Error::invalid("empty dataset tag"));
        }
        Ok(())
    }

    pub fn swapped(&self) -> Self {
        Self {
            source: self.target.clone(),
            target: self.source.clone(),
            tag: self.tag.clone(),
        }
    }
}

fn check_side(which: &str, text: &str) -> Result<()> {
    if text.trim().is_empty() {
        return Err(Error::invalid(format!("empty {which} side")));
    }
    if text.contains(['\t', '\n']) {
        return Err(Error::invalid(format!("{which} side contains a TAB or newline")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelCorpus {
    pub name: String,
    pub pairs: Vec<SentencePair>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonoCorpus {
    pub name: String,
    pub sentences: Vec<String>,
}

/// Which side(s) of a parallel corpus to count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Source,
    Target,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub test: f64,
    pub val: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.7,
            test: 0.2,
            val: 0.1,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [("train", self.train), ("test", self.test), ("val", self.val)] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::invalid(format!("{name} fraction {f} not in (0, 1)")));
            }
        }
        if (self.train + self.test + self.val - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("fractions must sum to 1"));
        }
        Ok(())
    }
}

/// The three parts produced by [`ParallelCorpus::split`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits {
    pub train: ParallelCorpus,
    pub test: ParallelCorpus,
    pub val: ParallelCorpus,
}

pub const MIN_SPLIT_LEN: usize = 10;

fn nfc(s: &str) -> String {
    s.nfc().collect()
}

fn read_utf8(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    String::from_utf8(bytes).map_err(|e| {
        let good = &e.as_bytes()[..e.utf8_error().valid_up_to()];
        let line = good.iter().filter(|&&b| b == b'\n').count() + 1;
        Error::Parse {
            path: path.to_path_buf(),
            line,
            message: "invalid UTF-8".into(),
        }
    })
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.split_terminator('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .enumerate()
        .map(|(i, l)| (i + 1, l))
}

impl ParallelCorpus {
    pub fn new(name: impl Into<String>, pairs: Vec<SentencePair>) -> Self {
        Self {
            name: name.into(),
            pairs,
        }
    }

    /// Load `source<TAB>target` lines, tagging every pair with `tag`.
    pub fn load(path: impl AsRef<Path>, tag: &str) -> Result<Self> {
        let path = path.as_ref();
        let text = read_utf8(path)?;
        let parse_err = |line, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut pairs = Vec::new();
        for (no, line) in lines(&text) {
            let mut parts = line.split('\t');
            let (Some(src), Some(tgt), None) = (parts.next(), parts.next(), parts.next()) else {
                let tabs = line.matches('\t').count();
                return Err(parse_err(no, format!("expected exactly one TAB, found {tabs}")));
            };
            let pair = SentencePair::new(nfc(src), nfc(tgt), tag).map_err(|e| parse_err(no, e.to_string()))?;
            pairs.push(pair);
        }
        if pairs.is_empty() {
            return Err(parse_err(0, "empty corpus".into()));
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| tag.to_string());
        Ok(Self::new(name, pairs))
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for p in &self.pairs {
            out.push_str(&p.source);
            out.push('\t');
            out.push_str(&p.target);
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.source.as_str())
    }

    pub fn targets(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.target.as_str())
    }

    pub fn tags(&self) -> BTreeSet<&str> {
        self.pairs.iter().map(|p| p.tag.as_str()).collect()
    }

    pub fn with_tag(&self, tag: &str) -> Self {
        Self::new(
            format!("{}-{tag}", self.name),
            self.pairs.iter().filter(|p| p.tag == tag).cloned().collect(),
        )
    }

    /// Shuffle with a seeded PRNG and cut into train/test/val.
    ///
    /// Train and test sizes are `round_half_up(frac · n)`; validation gets the rest.
    pub fn split(&self, spec: &SplitSpec) -> Result<Splits> {
        spec.validate()?;
        let n = self.len();
        if n < MIN_SPLIT_LEN {
            return Err(Error::invalid(format!(
                "corpus `{}` has {n} pairs; at least {MIN_SPLIT_LEN} are needed to split",
                self.name
            )));
        }
        let (n_train, n_test) = split_sizes(n, spec);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
        let take = |range: std::ops::Range<usize>, suffix: &str| {
            Self::new(
                format!("{}-{suffix}", self.name),
                order[range].iter().map(|&i| self.pairs[i].clone()).collect(),
            )
        };
        Ok(Splits {
            train: take(0..n_train, "train"),
            test: take(n_train..n_train + n_test, "test"),
            val: take(n_train + n_test..n, "val"),
        })
    }

    /// Concatenate corpora in order, keeping each pair's tag.
    pub fn merge<'a>(corpora: impl IntoIterator<Item = &'a ParallelCorpus>, name: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut any = false;
        for c in corpora {
            any = true;
            pairs.extend(c.pairs.iter().cloned());
        }
        if !any {
            return Err(Error::invalid("merge of an empty list of corpora"));
        }
        Ok(Self::new(name, pairs))
    }

    /// Repeat every pair `factor` times (pair-major order).
    pub fn upsample(&self, factor: usize) -> Result<Self> {
        if factor < 1 {
            return Err(Error::invalid("upsampling factor must be at least 1"));
        }
        let pairs = self
            .pairs
            .iter()
            .flat_map(|p| std::iter::repeat_n(p, factor).cloned())
            .collect();
        Ok(Self::new(self.name.clone(), pairs))
    }

    /// Source and target swapped; name suffixed with `-rev`.
    pub fn reversed(&self) -> Self {
        Self::new(
            format!("{}-rev", self.name),
            self.pairs.iter().map(SentencePair::swapped).collect(),
        )
    }

    /// Total encoded length (no BOS/EOS) of the chosen side(s).
    pub fn token_count(&self, tokenizer: &BpeModel, side: Side) -> usize {
        let count = |s: &str| tokenizer.encode(s).ids.len();
        self.pairs
            .iter()
            .map(|p| match side {
                Side::Source => count(&p.source),
                Side::Target => count(&p.target),
                Side::Both => count(&p.source) + count(&p.target),
            })
            .sum()
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

pub(crate) fn split_sizes(n: usize, spec: &SplitSpec) -> (usize, usize) {
    let n_train = round_half_up(spec.train * n as f64).min(n);
    let n_test = round_half_up(spec.test * n as f64).min(n - n_train);
    (n_train, n_test)
}

impl MonoCorpus {
    pub fn new(name: impl Into<String>, sentences: Vec<String>) -> Self {
        Self {
            name: name.into(),
            sentences,
        }
    }

    /// One sentence per line; blank lines are skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = read_utf8(path)?;
        let mut sentences = Vec::new();
        for (no, line) in lines(&text) {
            if line.trim().is_empty() {
                continue;
            }
            if line.contains('\t') {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: no,
                    message: "TAB in monolingual sentence".into(),
                });
            }
            sentences.push(nfc(line));
        }
        if sentences.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: "empty corpus".into(),
            });
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "mono".into());
        Ok(Self::new(name, sentences))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.sentences {
            out.push_str(s);
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn token_count(&self, tokenizer: &BpeModel) -> usize {
        self.sentences.iter().map(|s| tokenizer.encode(s).ids.len()).sum()
    }

    /// The first `k` sentences after a seeded shuffle.
    pub fn subset(&self, k: usize, seed: u64) -> Result<Self> {
        if k > self.len() {
            return Err(Error::invalid(format!(
                "subset of {k} sentences requested from a corpus of {}",
                self.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Self::new(
            format!("{}-{k}", self.name),
            order[..k].iter().map(|&i| self.sentences[i].clone()).collect(),
        ))
    }

    /// Sentences in a seeded shuffled order (so that any prefix is a subset).
    pub fn shuffled(&self, seed: u64) -> Self {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Self::new(
            self.name.clone(),
            order.iter().map(|&i| self.sentences[i].clone()).collect(),
        )
    }
}

/// `max(1, floor(n_back / n_orig))`.
pub fn upsample_factor(n_back_tokens: usize, n_orig_tokens: usize) -> Result<usize> {
    if n_orig_tokens == 0 {
        return Err(Error::invalid("original corpus has zero tokens"));
    }
    Ok((n_back_tokens / n_orig_tokens).max(1))
}
