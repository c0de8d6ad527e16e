//! Compact encoder-decoder transformer.

mod checkpoint;
mod hyperparams;
mod inference;
mod model;
mod params;

pub use checkpoint::{Checkpoint, TokenizerRef, TrainingMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use hyperparams::Hyperparams;
pub use inference::{DecoderState, EncoderMemory};
pub use model::{encode_positions, Mode, PaddedBatch, Transformer};
pub use params::TransformerParams;
