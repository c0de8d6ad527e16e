use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::ParallelCorpus;
use crate::error::{Error, Result};
use crate::tokenizer::{BpeModel, BOS, EOS};
use crate::transformer::PaddedBatch;

/// One tokenized pair: EOS-terminated source, BOS-prefixed decoder input,
/// EOS-terminated labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedPair {
    pub src: Vec<u32>,
    pub tgt_in: Vec<u32>,
    pub labels: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub src: PaddedBatch,
    pub tgt_in: PaddedBatch,
    pub labels: PaddedBatch,
    /// Corpus positions of the pairs in this batch.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub fn encode_pairs(corpus: &ParallelCorpus, tokenizer: &BpeModel, max_positions: usize) -> Result<Vec<EncodedPair>> {
    corpus
        .pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut src = tokenizer.encode(&p.source).ids;
            src.push(EOS);
            let tgt = tokenizer.encode(&p.target).ids;
            let longest = src.len().max(tgt.len() + 1);
            if longest > max_positions {
                return Err(Error::TooLong {
                    len: longest,
                    max: max_positions,
                    context: Some(format!("{} pair {}: {:?}", corpus.name, i + 1, p.source)),
                });
            }
            let mut tgt_in = vec![BOS];
            tgt_in.extend_from_slice(&tgt);
            let mut labels = tgt;
            labels.push(EOS);
            Ok(EncodedPair { src, tgt_in, labels })
        })
        .collect()
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1000 + epoch as u64);
    rng
}

pub fn batch_indices(indices: &[usize], pairs: &[EncodedPair], batch_sentences: usize) -> Result<Vec<Batch>> {
    if batch_sentences == 0 {
        return Err(Error::invalid("batch_sentences must be positive"));
    }
    indices
        .chunks(batch_sentences)
        .map(|chunk| {
            let pick = |f: fn(&EncodedPair) -> &Vec<u32>| chunk.iter().map(|&i| f(&pairs[i]).as_slice()).collect::<Vec<_>>();
            Ok(Batch {
                src: PaddedBatch::from_seqs(&pick(|p| &p.src))?,
                tgt_in: PaddedBatch::from_seqs(&pick(|p| &p.tgt_in))?,
                labels: PaddedBatch::from_seqs(&pick(|p| &p.labels))?,
                indices: chunk.to_vec(),
            })
        })
        .collect()
}

/// Shuffle deterministically per `(seed, epoch)` and group into batches of at most `batch_sentences`.
pub fn shuffled_batches(pairs: &[EncodedPair], batch_sentences: usize, seed: u64, epoch: usize) -> Result<Vec<Batch>> {
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut epoch_rng(seed, epoch));
    batch_indices(&order, pairs, batch_sentences)
}

pub fn make_batches(
    corpus: &ParallelCorpus,
    tokenizer: &BpeModel,
    batch_sentences: usize,
    seed: u64,
    epoch: usize,
    max_positions: usize,
) -> Result<Vec<Batch>> {
    let pairs = encode_pairs(corpus, tokenizer, max_positions)?;
    shuffled_batches(&pairs, batch_sentences, seed, epoch)
}
