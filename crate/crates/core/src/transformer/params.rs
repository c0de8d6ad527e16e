use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Hyperparams;
use crate::numerics::{Float, Tensor};

#[derive(Clone, Copy, Debug)]
pub(crate) struct Norm {
    pub g: usize,
    pub b: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Attn {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct FeedForward {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct EncLayer {
    pub ln1: Norm,
    pub attn: Attn,
    pub ln2: Norm,
    pub ff: FeedForward,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct DecLayer {
    pub ln1: Norm,
    pub self_attn: Attn,
    pub ln2: Norm,
    pub cross_attn: Attn,
    pub ln3: Norm,
    pub ff: FeedForward,
}

/// Index of every parameter tensor, plus its name and shape, in a fixed order.
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
    pub embed: usize,
    pub enc: Vec<EncLayer>,
    pub enc_ln: Norm,
    pub dec: Vec<DecLayer>,
    pub dec_ln: Norm,
    /// `None` when tied to the embedding table.
    pub out: Option<usize>,
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Weight,
    Gain,
    Bias,
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    kinds: Vec<Kind>,
}

impl Builder {
    fn add(&mut self, name: String, shape: &[usize], kind: Kind) -> usize {
        self.names.push(name);
        self.shapes.push(shape.to_vec());
        self.kinds.push(kind);
        self.names.len() - 1
    }

    fn norm(&mut self, prefix: &str, d: usize) -> Norm {
        Norm {
            g: self.add(format!("{prefix}.g"), &[d], Kind::Gain),
            b: self.add(format!("{prefix}.b"), &[d], Kind::Bias),
        }
    }

    fn attn(&mut self, prefix: &str, d: usize) -> Attn {
        let mut w = |n: &str| self.add(format!("{prefix}.{n}"), &[d, d], Kind::Weight);
        Attn {
            wq: w("wq"),
            wk: w("wk"),
            wv: w("wv"),
            wo: w("wo"),
        }
    }

    fn ff(&mut self, prefix: &str, d: usize, d_ff: usize) -> FeedForward {
        FeedForward {
            w1: self.add(format!("{prefix}.ff1.w"), &[d, d_ff], Kind::Weight),
            b1: self.add(format!("{prefix}.ff1.b"), &[d_ff], Kind::Bias),
            w2: self.add(format!("{prefix}.ff2.w"), &[d_ff, d], Kind::Weight),
            b2: self.add(format!("{prefix}.ff2.b"), &[d], Kind::Bias),
        }
    }
}

impl Layout {
    fn build(hp: &Hyperparams) -> (Self, Vec<Kind>) {
        let d = hp.d_model;
        let mut b = Builder {
            names: vec![],
            shapes: vec![],
            kinds: vec![],
        };
        let embed = b.add("embed".into(), &[hp.vocab_size, d], Kind::Weight);
        let enc = (0..hp.enc_layers)
            .map(|i| {
                let p = format!("enc.{i}");
                EncLayer {
                    ln1: b.norm(&format!("{p}.ln1"), d),
                    attn: b.attn(&format!("{p}.attn"), d),
                    ln2: b.norm(&format!("{p}.ln2"), d),
                    ff: b.ff(&p, d, hp.d_ff),
                }
            })
            .collect();
        let enc_ln = b.norm("enc.ln", d);
        let dec = (0..hp.dec_layers)
            .map(|i| {
                let p = format!("dec.{i}");
                DecLayer {
                    ln1: b.norm(&format!("{p}.ln1"), d),
                    self_attn: b.attn(&format!("{p}.self"), d),
                    ln2: b.norm(&format!("{p}.ln2"), d),
                    cross_attn: b.attn(&format!("{p}.cross"), d),
                    ln3: b.norm(&format!("{p}.ln3"), d),
                    ff: b.ff(&p, d, hp.d_ff),
                }
            })
            .collect();
        let dec_ln = b.norm("dec.ln", d);
        let out = (!hp.tie_embeddings).then(|| b.add("out.w".into(), &[d, hp.vocab_size], Kind::Weight));
        (
            Self {
                names: b.names,
                shapes: b.shapes,
                embed,
                enc,
                enc_ln,
                dec,
                dec_ln,
                out,
            },
            b.kinds,
        )
    }

    pub fn new(hp: &Hyperparams) -> Self {
        Self::build(hp).0
    }
}

/// Learnable tensors of a transformer, in [`Layout`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerParams<T> {
    pub(crate) names: Vec<String>,
    pub(crate) tensors: Vec<Tensor<T>>,
}

impl<T: Float> TransformerParams<T> {
    /// Glorot-uniform weights, zero biases, unit gains; deterministic in `seed`.
    pub fn init(hp: &Hyperparams, seed: u64) -> Self {
        let (layout, kinds) = Layout::build(hp);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = layout
            .shapes
            .iter()
            .zip(&kinds)
            .map(|(shape, kind)| match kind {
                Kind::Gain => Tensor::full(shape, T::one()),
                Kind::Bias => Tensor::zeros(shape),
                Kind::Weight => {
                    let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..bound)))
                }
            })
            .collect();
        Self {
            names: layout.names,
            tensors,
        }
    }

    pub(crate) fn from_parts(names: Vec<String>, tensors: Vec<Tensor<T>>) -> Self {
        Self { names, tensors }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    pub fn cast<U: Float>(&self) -> TransformerParams<U> {
        TransformerParams {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

impl TransformerParams<f32> {
    /// Names and shapes the layout expects for `hp`.
    pub(crate) fn init_shapes(hp: &Hyperparams) -> crate::Result<Vec<(String, Vec<usize>)>> {
        hp.validate()?;
        let layout = Layout::new(hp);
        Ok(layout.names.into_iter().zip(layout.shapes).collect())
    }
}
