use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture constants. Defaults are the compact baseline: 4+4 layers,
/// 4 heads, 256-dim embeddings, 1024-dim feed-forward, dropout 0.3,
/// label smoothing 0.1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    pub max_positions: usize,
    /// Filled in from the tokenizer when a model is built.
    pub vocab_size: usize,
    /// Share the output projection with the embedding table.
    pub tie_embeddings: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            enc_layers: 4,
            dec_layers: 4,
            heads: 4,
            d_model: 256,
            d_ff: 1024,
            dropout: 0.3,
            label_smoothing: 0.1,
            max_positions: 512,
            vocab_size: 0,
            tie_embeddings: false,
        }
    }
}

impl Hyperparams {
    pub fn with_vocab(mut self, vocab_size: usize) -> Self {
        self.vocab_size = vocab_size;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("enc_layers", self.enc_layers),
            ("dec_layers", self.dec_layers),
            ("heads", self.heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("max_positions", self.max_positions),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("hyperparameter {name} must be positive")));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::invalid(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.d_model < 2 {
            return Err(Error::invalid("d_model must be at least 2"));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::invalid("dropout and label_smoothing must lie in [0, 1)"));
        }
        Ok(())
    }
}
