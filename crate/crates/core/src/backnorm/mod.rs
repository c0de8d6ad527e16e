//! Backnormalization: reverse models turn clean monolingual text into
//! synthetic unnormalized sources, and the resulting pseudo-parallel data is
//! mixed with upsampled human-annotated pairs.

mod experiment;

pub use experiment::{
    run_backnorm_experiment, ExperimentOptions, ExperimentOutcome, ExperimentReport, MeanRow, Row, RowResult,
    SeedReport,
};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::corpus::{upsample_factor, MonoCorpus, ParallelCorpus, SentencePair, Side};
use crate::decoder::{normalize_line, DecodeConfig};
use crate::error::{Error, Result};
use crate::parallel;
use crate::tokenizer::BpeModel;
use crate::transformer::Transformer;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReverseModel {
    pub tag: String,
    pub checkpoint: PathBuf,
}

/// Inputs of one synthesis pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BacknormPlan {
    pub reverse_models: Vec<ReverseModel>,
    pub mono: PathBuf,
    pub decode: DecodeConfig,
}

impl BacknormPlan {
    pub fn validate(&self) -> Result<()> {
        if self.reverse_models.is_empty() {
            return Err(Error::invalid("backnormalization needs at least one reverse model"));
        }
        self.decode.validate()
    }
}

/// Swap sources and targets.
pub fn reverse_corpus(corpus: &ParallelCorpus) -> ParallelCorpus {
    corpus.reversed()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub tag: String,
    pub produced: usize,
    /// `(sentence index, reason)` for every monolingual sentence left out.
    pub skipped: Vec<(usize, String)>,
}

/// Decode every monolingual sentence with a reverse model. Targets are the
/// monolingual sentences verbatim; sentences whose decode fails, hits the
/// length cap, or comes out empty are skipped and reported.
pub fn synthesize_pseudo_parallel(
    reverse: &Transformer<f32>,
    tokenizer: &BpeModel,
    mono: &MonoCorpus,
    cfg: &DecodeConfig,
    tag: &str,
) -> Result<(ParallelCorpus, SynthesisReport)> {
    cfg.validate()?;
    let outputs = parallel::map(&mono.sentences, |_, s| normalize_line(reverse, tokenizer, s, cfg));
    let mut pairs = Vec::with_capacity(mono.len());
    let mut report = SynthesisReport {
        tag: tag.to_string(),
        ..Default::default()
    };
    for (i, (out, target)) in outputs.into_iter().zip(&mono.sentences).enumerate() {
        let pair = out.and_then(|n| {
            if n.truncated {
                Err(Error::invalid("output hit the length cap"))
            } else {
                SentencePair::new(n.text, target.clone(), tag)
            }
        });
        match pair {
            Ok(p) => pairs.push(p),
            Err(e) => report.skipped.push((i, e.to_string())),
        }
    }
    report.produced = pairs.len();
    Ok((ParallelCorpus::new(format!("{}-{tag}", mono.name), pairs), report))
}

/// Human and synthetic data balanced by token count.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedSet {
    pub corpus: ParallelCorpus,
    pub accounting: Upsampling,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Upsampling {
    /// Tokens (both sides) of all pseudo-parallel corpora.
    pub n_back: usize,
    /// Tokens (both sides) of all original corpora.
    pub n_orig: usize,
    pub factor: usize,
    pub human_tokens: usize,
    pub synthetic_tokens: usize,
}

/// `merge(upsample(merge(originals), ⌊N_back/N_orig⌋ clamped at 1), merge(pseudos))`.
pub fn build_augmented_set(
    originals: &[ParallelCorpus],
    pseudos: &[ParallelCorpus],
    tokenizer: &BpeModel,
) -> Result<AugmentedSet> {
    let human = ParallelCorpus::merge(originals, "human")?;
    let n_orig = human.token_count(tokenizer, Side::Both);
    let n_back: usize = pseudos.iter().map(|p| p.token_count(tokenizer, Side::Both)).sum();
    let factor = upsample_factor(n_back, n_orig)?;
    let upsampled = human.upsample(factor)?;
    let mut parts = vec![upsampled];
    parts.extend(pseudos.iter().cloned());
    let corpus = ParallelCorpus::merge(&parts, "augmented")?;
    Ok(AugmentedSet {
        corpus,
        accounting: Upsampling {
            n_back,
            n_orig,
            factor,
            human_tokens: factor * n_orig,
            synthetic_tokens: n_back,
        },
    })
}
