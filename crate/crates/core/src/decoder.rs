//! Greedy and beam-search decoding, and line-level text normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::kernels;
use crate::parallel;
use crate::tokenizer::{BpeModel, Encoding, BOS, EOS, PAD};
use crate::transformer::{DecoderState, EncoderMemory, Transformer};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Greedy,
    Beam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub beam_size: usize,
    pub length_penalty: f64,
    pub max_output_factor: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Beam,
            beam_size: 5,
            length_penalty: 1.0,
            max_output_factor: 2.0,
        }
    }
}

impl DecodeConfig {
    pub fn greedy() -> Self {
        Self {
            strategy: Strategy::Greedy,
            ..Self::default()
        }
    }

    pub fn beam(beam_size: usize) -> Self {
        Self {
            strategy: Strategy::Beam,
            beam_size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::invalid("beam_size must be at least 1"));
        }
        if !(self.max_output_factor > 0.0) || !self.length_penalty.is_finite() {
            return Err(Error::invalid("max_output_factor must be positive and length_penalty finite"));
        }
        Ok(())
    }

    /// Maximum number of output tokens (EOS excluded) for an input of `src_len` tokens.
    pub fn length_cap(&self, src_len: usize) -> usize {
        (self.max_output_factor * src_len as f64).floor() as usize + 8
    }
}

/// A decoded target sequence without BOS/EOS.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub ids: Vec<u32>,
    /// Summed token log-probabilities, EOS included when finished.
    pub log_prob: f64,
    /// `log_prob / len^α`.
    pub score: f64,
    /// The length cap was hit before EOS.
    pub truncated: bool,
}

/// Anything that yields next-token log-probabilities one token at a time.
pub trait StepModel {
    type State: Clone;

    fn vocab_size(&self) -> usize;

    fn initial_state(&self) -> Self::State;

    /// Consume `token` and return log-probabilities for the following one.
    fn next_log_probs(&self, state: &mut Self::State, token: u32) -> Result<Vec<f64>>;
}

fn normalized(log_prob: f64, len: usize, alpha: f64) -> f64 {
    log_prob / (len.max(1) as f64).powf(alpha)
}

fn candidate_allowed(token: usize) -> bool {
    token != PAD as usize && token != BOS as usize
}

pub fn greedy_search<M: StepModel>(model: &M, cap: usize, alpha: f64) -> Result<Hypothesis> {
    let mut state = model.initial_state();
    let mut logp = model.next_log_probs(&mut state, BOS)?;
    let mut ids = Vec::new();
    let mut total = 0.0;
    loop {
        let mut best = None;
        for (t, &lp) in logp.iter().enumerate() {
            let cand = total + lp;
            if candidate_allowed(t) && best.is_none_or(|(_, b)| cand > b) {
                best = Some((t, cand));
            }
        }
        let (token, cand) = best.ok_or_else(|| Error::invalid("model has no decodable tokens"))?;
        total = cand;
        if token == EOS as usize {
            return Ok(Hypothesis {
                score: normalized(total, ids.len() + 1, alpha),
                ids,
                log_prob: total,
                truncated: false,
            });
        }
        ids.push(token as u32);
        if ids.len() >= cap {
            return Ok(Hypothesis {
                score: normalized(total, ids.len(), alpha),
                ids,
                log_prob: total,
                truncated: true,
            });
        }
        logp = model.next_log_probs(&mut state, token as u32)?;
    }
}

struct Live<S> {
    ids: Vec<u32>,
    log_prob: f64,
    state: S,
    next: Vec<f64>,
}

/// Length-normalized beam search. Each step keeps the `beam` best extensions
/// by cumulative log-probability; extensions ending in EOS are retired.
pub fn beam_search<M: StepModel>(model: &M, beam: usize, cap: usize, alpha: f64) -> Result<Hypothesis> {
    if beam == 0 {
        return Err(Error::invalid("beam_size must be at least 1"));
    }
    let mut state = model.initial_state();
    let next = model.next_log_probs(&mut state, BOS)?;
    let mut live = vec![Live {
        ids: Vec::new(),
        log_prob: 0.0,
        state,
        next,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    while !live.is_empty() {
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (h, hyp) in live.iter().enumerate() {
            for (t, &lp) in hyp.next.iter().enumerate() {
                if candidate_allowed(t) {
                    cands.push((hyp.log_prob + lp, h, t));
                }
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cands.truncate(beam);
        let mut next_live = Vec::new();
        for (lp, h, t) in cands {
            let parent = &live[h];
            if t == EOS as usize {
                finished.push(Hypothesis {
                    ids: parent.ids.clone(),
                    log_prob: lp,
                    score: normalized(lp, parent.ids.len() + 1, alpha),
                    truncated: false,
                });
                continue;
            }
            let mut ids = parent.ids.clone();
            ids.push(t as u32);
            if ids.len() >= cap {
                next_live.push(Live {
                    ids,
                    log_prob: lp,
                    state: parent.state.clone(),
                    next: Vec::new(),
                });
                continue;
            }
            let mut state = parent.state.clone();
            let next = model.next_log_probs(&mut state, t as u32)?;
            next_live.push(Live {
                ids,
                log_prob: lp,
                state,
                next,
            });
        }
        if next_live.iter().any(|h| h.ids.len() >= cap) {
            if finished.is_empty() {
                let best = next_live
                    .into_iter()
                    .map(|h| Hypothesis {
                        score: normalized(h.log_prob, h.ids.len(), alpha),
                        ids: h.ids,
                        log_prob: h.log_prob,
                        truncated: true,
                    })
                    .reduce(|a, b| if b.score > a.score { b } else { a });
                return best.ok_or_else(|| Error::invalid("beam search produced no hypothesis"));
            }
            break;
        }
        live = next_live;
    }
    finished
        .into_iter()
        .reduce(|a, b| if b.score > a.score { b } else { a })
        .ok_or_else(|| Error::invalid("beam search produced no hypothesis"))
}

/// One source sentence bound to a transformer for step-wise decoding.
pub struct TransformerStepper<'a> {
    model: &'a Transformer<f32>,
    memory: EncoderMemory<f32>,
}

impl<'a> TransformerStepper<'a> {
    pub fn new(model: &'a Transformer<f32>, src_ids: &[u32]) -> Result<Self> {
        Ok(Self {
            model,
            memory: model.encode(src_ids)?,
        })
    }
}

impl StepModel for TransformerStepper<'_> {
    type State = DecoderState<f32>;

    fn vocab_size(&self) -> usize {
        self.model.hyperparams().vocab_size
    }

    fn initial_state(&self) -> Self::State {
        self.model.start_state()
    }

    fn next_log_probs(&self, state: &mut Self::State, token: u32) -> Result<Vec<f64>> {
        let logits: Vec<f64> = self.model.step(&self.memory, state, token)?.iter().map(|&v| v as f64).collect();
        let lse = kernels::log_sum_exp(&logits);
        Ok(logits.iter().map(|&v| v - lse).collect())
    }
}

fn cap_for(model: &Transformer<f32>, src_ids: &[u32], cfg: &DecodeConfig) -> usize {
    let content = src_ids.iter().filter(|&&t| t != EOS).count();
    cfg.length_cap(content).min(model.hyperparams().max_positions)
}

/// Greedy decoding of `src_ids` (EOS-terminated).
pub fn greedy_decode(model: &Transformer<f32>, src_ids: &[u32], cfg: &DecodeConfig) -> Result<Hypothesis> {
    let stepper = TransformerStepper::new(model, src_ids)?;
    greedy_search(&stepper, cap_for(model, src_ids, cfg), cfg.length_penalty)
}

pub fn beam_decode(model: &Transformer<f32>, src_ids: &[u32], cfg: &DecodeConfig) -> Result<Hypothesis> {
    cfg.validate()?;
    let stepper = TransformerStepper::new(model, src_ids)?;
    beam_search(&stepper, cfg.beam_size, cap_for(model, src_ids, cfg), cfg.length_penalty)
}

pub fn decode(model: &Transformer<f32>, src_ids: &[u32], cfg: &DecodeConfig) -> Result<Hypothesis> {
    match cfg.strategy {
        Strategy::Greedy => greedy_decode(model, src_ids, cfg),
        Strategy::Beam => beam_decode(model, src_ids, cfg),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Normalized {
    pub text: String,
    pub truncated: bool,
}

/// Normalize a single line. Blank lines come back verbatim.
pub fn normalize_line(model: &Transformer<f32>, tokenizer: &BpeModel, line: &str, cfg: &DecodeConfig) -> Result<Normalized> {
    if line.trim().is_empty() {
        return Ok(Normalized {
            text: line.to_string(),
            truncated: false,
        });
    }
    let enc = tokenizer.encode(line);
    let mut src = enc.ids;
    src.push(EOS);
    let max = model.hyperparams().max_positions;
    if src.len() > max {
        return Err(Error::TooLong {
            len: src.len(),
            max,
            context: None,
        });
    }
    let hyp = decode(model, &src, cfg)?;
    let text = tokenizer.decode(&Encoding {
        ids: hyp.ids,
        unk_literals: enc.unk_literals,
    })?;
    Ok(Normalized {
        text,
        truncated: hyp.truncated,
    })
}

/// Normalize many lines, in parallel when enabled; output order follows input.
/// Errors name the 1-based line number.
pub fn normalize_lines<S: AsRef<str> + Sync>(
    model: &Transformer<f32>,
    tokenizer: &BpeModel,
    lines: &[S],
    cfg: &DecodeConfig,
) -> Result<Vec<Normalized>> {
    cfg.validate()?;
    parallel::map(lines, |_, l| normalize_line(model, tokenizer, l.as_ref(), cfg))
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| match e {
                Error::TooLong { len, max, .. } => Error::TooLong {
                    len,
                    max,
                    context: Some(format!("line {}", i + 1)),
                },
                other => Error::invalid(format!("line {}: {other}", i + 1)),
            })
        })
        .collect()
}

/// Normalize multi-line text, preserving line structure.
pub fn normalize_text(model: &Transformer<f32>, tokenizer: &BpeModel, text: &str, cfg: &DecodeConfig) -> Result<(String, Vec<usize>)> {
    let lines: Vec<&str> = text.split('\n').collect();
    let out = normalize_lines(model, tokenizer, &lines, cfg)?;
    let truncated = out.iter().enumerate().filter(|(_, n)| n.truncated).map(|(i, _)| i + 1).collect();
    let joined = out.into_iter().map(|n| n.text).collect::<Vec<_>>().join("\n");
    Ok((joined, truncated))
}
