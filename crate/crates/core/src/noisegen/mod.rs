//! Rule-based spelling-variation generator for synthetic parallel corpora.

mod lexicon;
mod profiles;

pub use lexicon::{synthetic_mono, LEXICON};
pub use profiles::{bundled_profile, bundled_profiles, BUNDLED_NAMES};

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{MonoCorpus, ParallelCorpus, SentencePair};
use crate::error::{Error, Result};
use crate::metrics::levenshtein_chars;
use crate::parallel;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    #[default]
    Anywhere,
    WordInitial,
    WordFinal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRule {
    pub pattern: String,
    pub replacement: String,
    pub probability: f64,
    #[serde(default)]
    pub scope: Scope,
}

impl NoiseRule {
    pub fn new(pattern: &str, replacement: &str, probability: f64, scope: Scope) -> Self {
        Self {
            pattern: pattern.into(),
            replacement: replacement.into(),
            probability,
            scope,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub name: String,
    #[serde(default)]
    pub salt: u64,
    pub rules: Vec<NoiseRule>,
}

impl NoiseProfile {
    pub fn identity() -> Self {
        Self {
            name: "identity".into(),
            salt: 0,
            rules: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.rules.iter().enumerate() {
            if r.pattern.is_empty() {
                return Err(Error::invalid(format!("profile {}: rule {} has an empty pattern", self.name, i + 1)));
            }
            if !(0.0..=1.0).contains(&r.probability) {
                return Err(Error::invalid(format!(
                    "profile {}: rule {} probability {} outside [0, 1]",
                    self.name,
                    i + 1,
                    r.probability
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Load a profile file, or a bundled profile when `spec` names one.
    pub fn load(spec: impl AsRef<Path>) -> Result<Self> {
        let path = spec.as_ref();
        if let Some(p) = path.to_str().and_then(bundled_profile) {
            return Ok(p);
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
    }
}

/// What the generator did to one sentence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseStats {
    pub firings: usize,
    /// Σ lev(pattern, replacement) over firings.
    pub edits: usize,
    /// Σ max(|pattern|, |replacement|) over firings.
    pub edit_bound: usize,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

struct Compiled<'a> {
    rule: &'a NoiseRule,
    pattern: Vec<char>,
    replacement: Vec<char>,
    order: usize,
}

fn compile(profile: &NoiseProfile) -> Vec<Compiled<'_>> {
    let mut rules: Vec<Compiled> = profile
        .rules
        .iter()
        .enumerate()
        .map(|(order, rule)| Compiled {
            rule,
            pattern: rule.pattern.chars().collect(),
            replacement: rule.replacement.chars().collect(),
            order,
        })
        .collect();
    rules.sort_by(|a, b| b.pattern.len().cmp(&a.pattern.len()).then(a.order.cmp(&b.order)));
    rules
}

fn matches_at(text: &[char], i: usize, r: &Compiled) -> bool {
    let end = i + r.pattern.len();
    if end > text.len() || text[i..end] != r.pattern[..] {
        return false;
    }
    match r.rule.scope {
        Scope::Anywhere => true,
        Scope::WordInitial => i == 0 || !is_word_char(text[i - 1]),
        Scope::WordFinal => end == text.len() || !is_word_char(text[end]),
    }
}

fn apply_compiled(text: &str, rules: &[Compiled], rng: &mut ChaCha8Rng) -> (String, NoiseStats) {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len() + 8);
    let mut stats = NoiseStats::default();
    let mut i = 0;
    while i < chars.len() {
        let fired = rules
            .iter()
            .filter(|r| matches_at(&chars, i, r))
            .find(|r| rng.random::<f64>() < r.rule.probability);
        match fired {
            Some(r) => {
                out.extend(&r.replacement);
                stats.firings += 1;
                stats.edits += levenshtein_chars(&r.pattern, &r.replacement);
                stats.edit_bound += r.pattern.len().max(r.replacement.len());
                i += r.pattern.len();
            }
            None => {
                out.push(chars[i]);
                i += 1;
            }
        }
    }
    (out, stats)
}

/// Left-to-right rewrite. At each position the matching rules are tried
/// longest pattern first, then in profile order; the first one whose coin
/// flip succeeds replaces its span, which is never rescanned.
pub fn apply_noise(text: &str, profile: &NoiseProfile, seed: u64) -> String {
    apply_noise_with_stats(text, profile, seed).0
}

pub fn apply_noise_with_stats(text: &str, profile: &NoiseProfile, seed: u64) -> (String, NoiseStats) {
    let rules = compile(profile);
    apply_compiled(text, &rules, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Per-sentence seed derived from the corpus seed, profile salt and sentence index.
pub fn sentence_seed(seed: u64, salt: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt.rotate_left(32));
    rng.set_stream(index as u64);
    rng.random()
}

/// A synthetic corpus together with the generator's own edit accounting.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedCorpus {
    pub corpus: ParallelCorpus,
    pub stats: Vec<NoiseStats>,
}

impl GeneratedCorpus {
    pub fn total_edits(&self) -> usize {
        self.stats.iter().map(|s| s.edits).sum()
    }

    /// Generator-side CER estimate in percent: rule edits over target characters.
    pub fn expected_cer(&self) -> f64 {
        let chars: usize = self.corpus.targets().map(|t| t.chars().count()).sum();
        100.0 * self.total_edits() as f64 / chars.max(1) as f64
    }
}

/// Noisy sources from clean sentences: `source = apply_noise(t)`, `target = t`.
pub fn generate_corpus(mono: &MonoCorpus, profile: &NoiseProfile, seed: u64, tag: &str) -> Result<GeneratedCorpus> {
    profile.validate()?;
    let rules = compile(profile);
    let results = parallel::map(&mono.sentences, |i, s| {
        let mut rng = ChaCha8Rng::seed_from_u64(sentence_seed(seed, profile.salt, i));
        apply_compiled(s, &rules, &mut rng)
    });
    let mut pairs = Vec::with_capacity(results.len());
    let mut stats = Vec::with_capacity(results.len());
    for ((noisy, st), clean) in results.into_iter().zip(&mono.sentences) {
        pairs.push(SentencePair::new(noisy, clean.clone(), tag)?);
        stats.push(st);
    }
    Ok(GeneratedCorpus {
        corpus: ParallelCorpus::new(format!("{}-{}", mono.name, profile.name), pairs),
        stats,
    })
}
