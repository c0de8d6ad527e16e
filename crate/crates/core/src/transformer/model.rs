use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{Attn, FeedForward, Layout, Norm};
use super::{Hyperparams, TransformerParams};
use crate::error::{Error, Result};
use crate::numerics::{Float, Graph, Tensor, Var, LAYER_NORM_EPS};
use crate::tokenizer::PAD;

/// Additive mask value for disallowed attention positions.
pub(crate) const MASKED: f64 = -1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A rectangular batch of id sequences, right-padded with `PAD`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaddedBatch {
    pub rows: usize,
    pub cols: usize,
    pub ids: Vec<u32>,
}

impl PaddedBatch {
    pub fn from_seqs<S: AsRef<[u32]>>(seqs: &[S]) -> Result<Self> {
        let cols = seqs.iter().map(|s| s.as_ref().len()).max().unwrap_or(0);
        if seqs.is_empty() || cols == 0 {
            return Err(Error::invalid("batch must contain at least one non-empty sequence"));
        }
        let mut ids = vec![PAD; seqs.len() * cols];
        for (row, s) in ids.chunks_mut(cols).zip(seqs) {
            row[..s.as_ref().len()].copy_from_slice(s.as_ref());
        }
        Ok(Self {
            rows: seqs.len(),
            cols,
            ids,
        })
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.ids[i * self.cols..(i + 1) * self.cols]
    }

    /// Number of non-pad tokens.
    pub fn tokens(&self) -> usize {
        self.ids.iter().filter(|&&t| t != PAD).count()
    }
}

/// Sinusoidal table: `PE[p, 2i] = sin(p / 10000^(2i/d))`, `PE[p, 2i+1] = cos(..)`.
pub fn encode_positions<T: Float>(length: usize, d_model: usize) -> Tensor<T> {
    Tensor::from_fn(&[length.max(1), d_model], |idx| {
        let (pos, j) = (idx / d_model, idx % d_model);
        let even = (j - j % 2) as f64;
        let angle = pos as f64 / 10000f64.powf(even / d_model as f64);
        T::of(if j % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

/// Encoder-decoder transformer with pre-norm residual blocks.
#[derive(Clone, Debug)]
pub struct Transformer<T: Float> {
    pub(crate) hp: Hyperparams,
    pub(crate) params: TransformerParams<T>,
    pub(crate) layout: Layout,
    pub(crate) pe: Tensor<T>,
}

struct Ctx<'a, R: ?Sized> {
    vars: &'a [Var],
    mode: Mode,
    dropout: f64,
    rng: &'a mut R,
}

impl<R: Rng + ?Sized> Ctx<'_, R> {
    fn drop<T: Float>(&mut self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        if self.mode == Mode::Train && self.dropout > 0.0 {
            g.dropout(x, self.dropout, true, self.rng)
        } else {
            Ok(x)
        }
    }
}

impl<T: Float> Transformer<T> {
    pub fn new(hp: Hyperparams, seed: u64) -> Result<Self> {
        hp.validate()?;
        let params = TransformerParams::init(&hp, seed);
        Self::from_params(hp, params)
    }

    pub fn from_params(hp: Hyperparams, params: TransformerParams<T>) -> Result<Self> {
        hp.validate()?;
        let layout = Layout::new(&hp);
        if params.names != layout.names {
            return Err(Error::invalid("parameter names do not match the hyperparameters"));
        }
        for ((name, t), shape) in params.names.iter().zip(&params.tensors).zip(&layout.shapes) {
            if t.shape() != shape.as_slice() {
                return Err(Error::shape("params", format!("{name}: {:?} vs {shape:?}", t.shape())));
            }
        }
        if !params.all_finite() {
            return Err(Error::NonFinite("model parameters".into()));
        }
        let pe = encode_positions(hp.max_positions, hp.d_model);
        Ok(Self {
            hp,
            params,
            layout,
            pe,
        })
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hp
    }

    pub fn params(&self) -> &TransformerParams<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut TransformerParams<T> {
        &mut self.params
    }

    pub fn into_params(self) -> TransformerParams<T> {
        self.params
    }

    pub fn cast<U: Float>(&self) -> Transformer<U> {
        Transformer {
            hp: self.hp.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
            pe: self.pe.cast(),
        }
    }

    /// Put every parameter on the graph as a trainable leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.params.tensors.iter().map(|t| g.param(t.clone())).collect()
    }

    fn bind_constants(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.params.tensors.iter().map(|t| g.constant(t.clone())).collect()
    }

    pub(crate) fn check_ids(&self, ids: &[u32], what: &str) -> Result<()> {
        if let Some(&bad) = ids.iter().find(|&&t| t as usize >= self.hp.vocab_size) {
            return Err(Error::invalid(format!(
                "{what} id {bad} outside vocabulary of {}",
                self.hp.vocab_size
            )));
        }
        Ok(())
    }

    fn check_batch(&self, b: &PaddedBatch, what: &str) -> Result<()> {
        if b.cols > self.hp.max_positions {
            return Err(Error::TooLong {
                len: b.cols,
                max: self.hp.max_positions,
                context: Some(what.to_string()),
            });
        }
        self.check_ids(&b.ids, what)
    }

    fn embed<R: Rng + ?Sized>(&self, g: &mut Graph<T>, cx: &mut Ctx<R>, b: &PaddedBatch) -> Result<Var> {
        let ids: Vec<usize> = b.ids.iter().map(|&t| t as usize).collect();
        let x = g.embedding(cx.vars[self.layout.embed], &ids)?;
        let x = g.reshape(x, &[b.rows, b.cols, self.hp.d_model])?;
        let x = g.scale(x, (self.hp.d_model as f64).sqrt());
        let pe = Tensor::new(
            &[b.cols, self.hp.d_model],
            self.pe.data()[..b.cols * self.hp.d_model].to_vec(),
        )?;
        let pe = g.constant(pe);
        let x = g.add(x, pe)?;
        cx.drop(g, x)
    }

    fn norm<R: ?Sized>(&self, g: &mut Graph<T>, cx: &Ctx<R>, n: Norm, x: Var) -> Result<Var> {
        g.layer_norm(x, cx.vars[n.g], cx.vars[n.b], LAYER_NORM_EPS)
    }

    fn attention<R: ?Sized>(
        &self,
        g: &mut Graph<T>,
        cx: &Ctx<R>,
        w: Attn,
        q_in: Var,
        kv_in: Var,
        mask: Var,
    ) -> Result<Var> {
        let h = self.hp.heads;
        let q = g.matmul(q_in, cx.vars[w.wq])?;
        let k = g.matmul(kv_in, cx.vars[w.wk])?;
        let v = g.matmul(kv_in, cx.vars[w.wv])?;
        let (q, k, v) = (g.split_heads(q, h)?, g.split_heads(k, h)?, g.split_heads(v, h)?);
        let s = g.bmm(q, k, true)?;
        let s = g.scale(s, 1.0 / (self.hp.head_dim() as f64).sqrt());
        let s = g.add(s, mask)?;
        let p = g.softmax(s, 2)?;
        let c = g.bmm(p, v, false)?;
        let c = g.merge_heads(c, h)?;
        g.matmul(c, cx.vars[w.wo])
    }

    fn feed_forward<R: Rng + ?Sized>(&self, g: &mut Graph<T>, cx: &mut Ctx<R>, w: FeedForward, x: Var) -> Result<Var> {
        let h = g.matmul(x, cx.vars[w.w1])?;
        let h = g.add(h, cx.vars[w.b1])?;
        let h = g.relu(h);
        let h = cx.drop(g, h)?;
        let h = g.matmul(h, cx.vars[w.w2])?;
        g.add(h, cx.vars[w.b2])
    }

    /// `[B·H, Lq, Lk]` additive mask hiding padded keys (and future keys when `causal`).
    fn mask(&self, g: &mut Graph<T>, keys: &PaddedBatch, lq: usize, causal: bool) -> Var {
        let (heads, lk) = (self.hp.heads, keys.cols);
        let masked = T::of(MASKED);
        let t = Tensor::from_fn(&[keys.rows * heads, lq, lk], |idx| {
            let (bh, rest) = (idx / (lq * lk), idx % (lq * lk));
            let (i, j) = (rest / lk, rest % lk);
            let pad = keys.ids[(bh / heads) * lk + j] == PAD;
            if pad || (causal && j > i) {
                masked
            } else {
                T::zero()
            }
        });
        g.constant(t)
    }

    /// Logits `[B, Lt, V]` for source batch `src` and decoder input `tgt_in`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        src: &PaddedBatch,
        tgt_in: &PaddedBatch,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        if vars.len() != self.params.tensors.len() {
            return Err(Error::invalid("parameter bindings do not match the model"));
        }
        if src.rows != tgt_in.rows {
            return Err(Error::shape(
                "forward",
                format!("{} source rows vs {} target rows", src.rows, tgt_in.rows),
            ));
        }
        self.check_batch(src, "source")?;
        self.check_batch(tgt_in, "target")?;
        let mut cx = Ctx {
            vars,
            mode,
            dropout: self.hp.dropout,
            rng,
        };

        let enc_mask = self.mask(g, src, src.cols, false);
        let mut x = self.embed(g, &mut cx, src)?;
        for layer in &self.layout.enc {
            let h = self.norm(g, &cx, layer.ln1, x)?;
            let a = self.attention(g, &cx, layer.attn, h, h, enc_mask)?;
            let a = cx.drop(g, a)?;
            x = g.add(x, a)?;
            let h = self.norm(g, &cx, layer.ln2, x)?;
            let f = self.feed_forward(g, &mut cx, layer.ff, h)?;
            x = g.add(x, f)?;
        }
        let memory = self.norm(g, &cx, self.layout.enc_ln, x)?;

        let self_mask = self.mask(g, tgt_in, tgt_in.cols, true);
        let cross_mask = self.mask(g, src, tgt_in.cols, false);
        let mut y = self.embed(g, &mut cx, tgt_in)?;
        for layer in &self.layout.dec {
            let h = self.norm(g, &cx, layer.ln1, y)?;
            let a = self.attention(g, &cx, layer.self_attn, h, h, self_mask)?;
            let a = cx.drop(g, a)?;
            y = g.add(y, a)?;
            let h = self.norm(g, &cx, layer.ln2, y)?;
            let a = self.attention(g, &cx, layer.cross_attn, h, memory, cross_mask)?;
            let a = cx.drop(g, a)?;
            y = g.add(y, a)?;
            let h = self.norm(g, &cx, layer.ln3, y)?;
            let f = self.feed_forward(g, &mut cx, layer.ff, h)?;
            y = g.add(y, f)?;
        }
        let y = self.norm(g, &cx, self.layout.dec_ln, y)?;
        match self.layout.out {
            Some(out) => g.matmul(y, vars[out]),
            None => g.matmul_nt(y, vars[self.layout.embed]),
        }
    }

    /// Label-smoothed token-level cross-entropy, averaged over non-pad labels.
    #[allow(clippy::too_many_arguments)]
    pub fn loss<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        src: &PaddedBatch,
        tgt_in: &PaddedBatch,
        labels: &PaddedBatch,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        if (labels.rows, labels.cols) != (tgt_in.rows, tgt_in.cols) {
            return Err(Error::shape("loss", "labels must match the decoder input shape"));
        }
        let logits = self.forward(g, vars, src, tgt_in, mode, rng)?;
        let flat = g.reshape(logits, &[labels.rows * labels.cols, self.hp.vocab_size])?;
        let targets: Vec<usize> = labels.ids.iter().map(|&t| t as usize).collect();
        g.cross_entropy_ls(flat, &targets, self.hp.label_smoothing, PAD as usize)
    }

    /// Eval-mode logits as a plain tensor.
    pub fn logits(&self, src: &PaddedBatch, tgt_in: &PaddedBatch) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self.bind_constants(&mut g);
        let out = self.forward(&mut g, &vars, src, tgt_in, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0))?;
        Ok(g.value(out).clone())
    }

    /// Eval-mode loss without gradients.
    pub fn eval_loss(&self, src: &PaddedBatch, tgt_in: &PaddedBatch, labels: &PaddedBatch) -> Result<f64> {
        let mut g = Graph::new();
        let vars = self.bind_constants(&mut g);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let loss = self.loss(&mut g, &vars, src, tgt_in, labels, Mode::Eval, &mut rng)?;
        Ok(g.value(loss).data()[0].as_f64())
    }
}
