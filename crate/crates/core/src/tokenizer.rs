//! Byte-pair encoding whose vocabulary is sized as a multiple of the
//! training corpus alphabet.
//!
//! Spaces become a boundary symbol that merges may absorb; merging never
//! crosses sentence boundaries. Source and target sides share one model.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;


use crate::corpus::ParallelCorpus;
use crate::error::{Error, Result};

pub const BOUNDARY: char = '\u{2581}';
pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const NUM_SPECIALS: usize = 4;
const SPECIAL_NAMES: [&str; NUM_SPECIALS] = ["<pad>", "<s>", "</s>", "<unk>"];
const REPLACEMENT: char = '\u{FFFD}';
const HEADER: &str = "norma-bpe v1";

/// Token ids plus the characters that were replaced by `UNK`, in order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<u32>,
    pub unk_literals: Vec<char>,
}

#[derive(Clone, Debug)]
pub struct BpeModel {
    factor: f64,
    alphabet: Vec<char>,
    merges: Vec<(String, String)>,
    /// id -> token text (specials included)
    vocab: Vec<String>,
    char_ids: HashMap<char, u32>,
    merge_ids: Vec<(u32, u32)>,
}

impl PartialEq for BpeModel {
    fn eq(&self, other: &Self) -> bool {
        self.factor == other.factor && self.alphabet == other.alphabet && self.merges == other.merges
    }
}

/// Ordering key for symbols: the text they stand for, with the boundary as a space.
fn surface(s: &str) -> String {
    s.chars().map(|c| if c == BOUNDARY { ' ' } else { c }).collect()
}

fn to_symbol(c: char) -> char {
    if c == ' ' {
        BOUNDARY
    } else {
        c
    }
}

/// Distinct symbols of all sentences, the boundary always included, in surface code-point order.
pub fn compute_alphabet<'a>(sentences: impl IntoIterator<Item = &'a str>) -> Vec<char> {
    let mut set: BTreeSet<char> = sentences
        .into_iter()
        .flat_map(|s| s.chars().map(|c| if c == BOUNDARY { ' ' } else { c }))
        .collect();
    set.insert(' ');
    set.into_iter().map(to_symbol).collect()
}

/// Number of merges for `factor` over an alphabet of `alphabet_len` symbols.
pub fn merges_for(factor: f64, alphabet_len: usize) -> usize {
    let target = (factor * alphabet_len as f64 - 1e-9).ceil() as usize;
    target.saturating_sub(alphabet_len)
}

/// Merge every non-overlapping `(left, right)` occurrence, scanning left to right.
fn apply_merge(seq: &mut Vec<u32>, left: u32, right: u32, new: u32) {
    if seq.len() < 2 {
        return;
    }
    let mut w = 0;
    let mut r = 0;
    while r < seq.len() {
        if r + 1 < seq.len() && seq[r] == left && seq[r + 1] == right {
            seq[w] = new;
            r += 2;
        } else {
            seq[w] = seq[r];
            r += 1;
        }
        w += 1;
    }
    seq.truncate(w);
}

impl BpeModel {
    /// Train on both sides of `corpus`.
    pub fn train(corpus: &ParallelCorpus, factor: f64) -> Result<Self> {
        Self::train_on(corpus.sources().chain(corpus.targets()), factor)
    }

    pub fn train_on<'a>(sentences: impl IntoIterator<Item = &'a str>, factor: f64) -> Result<Self> {
        let sentences: Vec<&str> = sentences.into_iter().collect();
        if !(factor >= 1.0) || !factor.is_finite() {
            return Err(Error::invalid(format!("vocabulary factor {factor} must be at least 1")));
        }
        let alphabet = compute_alphabet(sentences.iter().copied());
        let mut model = Self::from_parts(factor, alphabet, Vec::new())?;
        let wanted = merges_for(factor, model.alphabet.len());

        let mut counts: HashMap<Vec<u32>, usize> = HashMap::new();
        for s in sentences {
            let seq: Vec<u32> = s
                .chars()
                .map(|c| model.char_ids[&to_symbol(c)])
                .collect();
            *counts.entry(seq).or_default() += 1;
        }
        let mut seqs: Vec<(Vec<u32>, usize)> = counts.into_iter().collect();
        seqs.sort();

        let mut known: std::collections::HashSet<String> = model.vocab[NUM_SPECIALS..].iter().cloned().collect();
        for _ in 0..wanted {
            let mut pairs: HashMap<(u32, u32), usize> = HashMap::new();
            for (seq, n) in &seqs {
                for w in seq.windows(2) {
                    *pairs.entry((w[0], w[1])).or_default() += n;
                }
            }
            let best = pairs
                .into_iter()
                .filter_map(|((l, r), n)| {
                    let merged = format!("{}{}", model.vocab[l as usize], model.vocab[r as usize]);
                    (!known.contains(&merged)).then(|| {
                        let key = (surface(&merged), surface(&model.vocab[l as usize]));
                        (n, key, l, r, merged)
                    })
                })
                .min_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
            let Some((_, _, l, r, merged)) = best else { break };
            let new = model.vocab.len() as u32;
            for (seq, _) in seqs.iter_mut() {
                apply_merge(seq, l, r, new);
            }
            known.insert(merged.clone());
            model
                .merges
                .push((model.vocab[l as usize].clone(), model.vocab[r as usize].clone()));
            model.merge_ids.push((l, r));
            model.vocab.push(merged);
        }
        Ok(model)
    }

    fn from_parts(factor: f64, alphabet: Vec<char>, merges: Vec<(String, String)>) -> Result<Self> {
        let mut vocab: Vec<String> = SPECIAL_NAMES.iter().map(|s| s.to_string()).collect();
        let mut char_ids = HashMap::new();
        let mut index: HashMap<String, u32> = HashMap::new();
        for &c in &alphabet {
            let id = vocab.len() as u32;
            if char_ids.insert(c, id).is_some() {
                return Err(Error::invalid(format!("duplicate alphabet symbol {c:?}")));
            }
            index.insert(c.to_string(), id);
            vocab.push(c.to_string());
        }
        let mut merge_ids = Vec::with_capacity(merges.len());
        for (i, (l, r)) in merges.iter().enumerate() {
            let (Some(&li), Some(&ri)) = (index.get(l), index.get(r)) else {
                return Err(Error::invalid(format!("merge {} ({l} {r}) uses an unknown symbol", i + 1)));
            };
            let merged = format!("{l}{r}");
            let id = vocab.len() as u32;
            if index.insert(merged.clone(), id).is_some() {
                return Err(Error::invalid(format!("merge {} produces duplicate token {merged}", i + 1)));
            }
            merge_ids.push((li, ri));
            vocab.push(merged);
        }
        Ok(Self {
            factor,
            alphabet,
            merges,
            vocab,
            char_ids,
            merge_ids,
        })
    }

    pub fn factor(&self) -> f64 {
        self.factor
    }

    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Encoding {
        let mut unk_literals = Vec::new();
        let mut ids: Vec<u32> = text
            .chars()
            .map(|c| match self.char_ids.get(&to_symbol(c)) {
                Some(&id) => id,
                None => {
                    unk_literals.push(c);
                    UNK
                }
            })
            .collect();
        let first = (NUM_SPECIALS + self.alphabet.len()) as u32;
        for (k, &(l, r)) in self.merge_ids.iter().enumerate() {
            apply_merge(&mut ids, l, r, first + k as u32);
        }
        Encoding { ids, unk_literals }
    }

    /// Inverse of [`encode`](Self::encode). `PAD`, `BOS` and `EOS` are dropped;
    /// `UNK` takes the next recorded literal, or U+FFFD when none is left.
    pub fn decode(&self, encoding: &Encoding) -> Result<String> {
        let mut literals = encoding.unk_literals.iter();
        let mut out = String::new();
        for &id in &encoding.ids {
            match id {
                PAD | BOS | EOS => {}
                UNK => out.push(literals.next().copied().unwrap_or(REPLACEMENT)),
                _ => {
                    let tok = self.vocab.get(id as usize).ok_or_else(|| {
                        Error::invalid(format!("token id {id} outside vocabulary of {}", self.vocab.len()))
                    })?;
                    out.extend(tok.chars().map(|c| if c == BOUNDARY { ' ' } else { c }));
                }
            }
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{HEADER}\nfactor {}\n", self.factor);
        let hex: Vec<String> = self.alphabet.iter().map(|c| format!("{:x}", *c as u32)).collect();
        out.push_str(&hex.join(" "));
        out.push('\n');
        for (l, r) in &self.merges {
            out.push_str(l);
            out.push(' ');
            out.push_str(r);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header != HEADER {
            return Err(Error::Version {
                what: "tokenizer file",
                found: header.to_string(),
                expected: HEADER.to_string(),
            });
        }
        let factor = lines
            .next()
            .and_then(|l| l.strip_prefix("factor "))
            .and_then(|f| f.parse::<f64>().ok())
            .ok_or_else(|| err(2, "expected `factor <number>`".into()))?;
        let alphabet = lines
            .next()
            .ok_or_else(|| err(3, "missing alphabet line".into()))?
            .split(' ')
            .map(|h| u32::from_str_radix(h, 16).ok().and_then(char::from_u32))
            .collect::<Option<Vec<char>>>()
            .ok_or_else(|| err(3, "alphabet must be space-separated code-point hex".into()))?;
        let mut model = Self::from_parts(factor, alphabet, Vec::new()).map_err(|e| err(3, e.to_string()))?;
        let mut index: HashMap<String, u32> = model
            .vocab
            .iter()
            .enumerate()
            .skip(NUM_SPECIALS)
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        for (i, line) in lines.enumerate() {
            let no = i + 4;
            let mut parts = line.split(' ');
            let (Some(l), Some(r), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(err(no, "expected `<left> <right>`".into()));
            };
            let (Some(&li), Some(&ri)) = (index.get(l), index.get(r)) else {
                return Err(err(no, format!("merge references unseen symbol in `{line}`")));
            };
            let merged = format!("{l}{r}");
            let id = model.vocab.len() as u32;
            if index.insert(merged.clone(), id).is_some() {
                return Err(err(no, format!("duplicate token `{merged}`")));
            }
            model.merges.push((l.to_string(), r.to_string()));
            model.merge_ids.push((li, ri));
            model.vocab.push(merged);
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }

    /// SHA-256 of the serialized model, hex encoded.
    pub fn content_hash(&self) -> String {
        crate::digest::sha256_hex(self.to_text().as_bytes())
    }
}

/// Train a shared source/target model on `corpus`.
pub fn train_bpe(corpus: &ParallelCorpus, factor: f64) -> Result<BpeModel> {
    BpeModel::train(corpus, factor)
}
