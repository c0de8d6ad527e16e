//! Cache-based incremental decoding that reuses the dense kernels
//! directly, without building a graph.

use super::params::{Attn, FeedForward, Norm};
use super::Transformer;
use crate::error::{Error, Result};
use crate::numerics::{kernels, Float, Tensor, LAYER_NORM_EPS};

/// Encoder output for one source sequence, with per-layer cross-attention
/// keys and values precomputed.
#[derive(Clone, Debug)]
pub struct EncoderMemory<T> {
    len: usize,
    cross_k: Vec<Vec<T>>,
    cross_v: Vec<Vec<T>>,
}

impl<T> EncoderMemory<T> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Self-attention cache of a partially decoded target.
#[derive(Clone, Debug)]
pub struct DecoderState<T> {
    pos: usize,
    self_k: Vec<Vec<T>>,
    self_v: Vec<Vec<T>>,
}

impl<T> DecoderState<T> {
    /// Tokens consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }
}

/// `x[rows, k] · w[k, n]`.
fn linear<T: Float>(x: &[T], rows: usize, w: &Tensor<T>) -> Vec<T> {
    let (k, n) = (w.shape()[0], w.shape()[1]);
    let mut out = vec![T::zero(); rows * n];
    if rows == 1 {
        for (&xi, wr) in x.iter().zip(w.data().chunks(n)) {
            out.iter_mut().zip(wr).for_each(|(o, &v)| *o += xi * v);
        }
    } else {
        kernels::gemm(rows, k, n, x, false, w.data(), false, &mut out, false);
    }
    out
}

impl<T: Float> Transformer<T> {
    fn t(&self, idx: usize) -> &Tensor<T> {
        &self.params.tensors[idx]
    }

    fn ln(&self, n: Norm, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); x.len()];
        kernels::layer_norm_rows(x, self.t(n.g).data(), self.t(n.b).data(), T::of(LAYER_NORM_EPS), &mut out, None, None);
        out
    }

    fn ffn(&self, w: FeedForward, x: &[T], rows: usize) -> Vec<T> {
        let mut h = linear(x, rows, self.t(w.w1));
        let b1 = self.t(w.b1).data();
        for row in h.chunks_mut(b1.len()) {
            row.iter_mut().zip(b1).for_each(|(v, &b)| *v = (*v + b).max(T::zero()));
        }
        let mut out = linear(&h, rows, self.t(w.w2));
        let b2 = self.t(w.b2).data();
        for row in out.chunks_mut(b2.len()) {
            row.iter_mut().zip(b2).for_each(|(v, &b)| *v += b);
        }
        out
    }

    /// Multi-head attention of `q[lq, d]` over every row of `k, v[lk, d]`.
    fn attend(&self, q: &[T], k: &[T], v: &[T]) -> Vec<T> {
        let d = self.hp.d_model;
        let dh = self.hp.head_dim();
        let (lq, lk) = (q.len() / d, k.len() / d);
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let mut out = vec![T::zero(); lq * d];
        let mut scores = vec![T::zero(); lk];
        for i in 0..lq {
            for h in 0..self.hp.heads {
                let qi = &q[i * d + h * dh..i * d + (h + 1) * dh];
                for (j, s) in scores.iter_mut().enumerate() {
                    *s = kernels::dot(qi, &k[j * d + h * dh..j * d + (h + 1) * dh]) * scale;
                }
                kernels::softmax_in_place(&mut scores);
                let oi = &mut out[i * d + h * dh..i * d + (h + 1) * dh];
                for (j, &p) in scores.iter().enumerate() {
                    let vj = &v[j * d + h * dh..j * d + (h + 1) * dh];
                    oi.iter_mut().zip(vj).for_each(|(o, &x)| *o += p * x);
                }
            }
        }
        out
    }

    fn embed_rows(&self, ids: &[u32], start: usize) -> Vec<T> {
        let d = self.hp.d_model;
        let table = self.t(self.layout.embed).data();
        let scale = T::of((d as f64).sqrt());
        let mut x = Vec::with_capacity(ids.len() * d);
        for (p, &id) in ids.iter().enumerate() {
            let row = &table[id as usize * d..(id as usize + 1) * d];
            let pe = self.pe.row(start + p);
            x.extend(row.iter().zip(pe).map(|(&e, &q)| e * scale + q));
        }
        x
    }

    fn self_block(&self, w: Attn, h: &[T], rows: usize) -> (Vec<T>, Vec<T>, Vec<T>) {
        (linear(h, rows, self.t(w.wq)), linear(h, rows, self.t(w.wk)), linear(h, rows, self.t(w.wv)))
    }

    /// Run the encoder over one unpadded source sequence.
    pub fn encode(&self, src: &[u32]) -> Result<EncoderMemory<T>> {
        if src.is_empty() {
            return Err(Error::invalid("source sequence is empty"));
        }
        if src.len() > self.hp.max_positions {
            return Err(Error::TooLong {
                len: src.len(),
                max: self.hp.max_positions,
                context: Some("source".into()),
            });
        }
        self.check_ids(src, "source")?;
        let n = src.len();
        let mut x = self.embed_rows(src, 0);
        for layer in &self.layout.enc {
            let h = self.ln(layer.ln1, &x);
            let (q, k, v) = self.self_block(layer.attn, &h, n);
            let a = linear(&self.attend(&q, &k, &v), n, self.t(layer.attn.wo));
            x.iter_mut().zip(&a).for_each(|(x, &a)| *x += a);
            let h = self.ln(layer.ln2, &x);
            let f = self.ffn(layer.ff, &h, n);
            x.iter_mut().zip(&f).for_each(|(x, &f)| *x += f);
        }
        let memory = self.ln(self.layout.enc_ln, &x);
        let (cross_k, cross_v) = self
            .layout
            .dec
            .iter()
            .map(|l| {
                (
                    linear(&memory, n, self.t(l.cross_attn.wk)),
                    linear(&memory, n, self.t(l.cross_attn.wv)),
                )
            })
            .unzip();
        Ok(EncoderMemory {
            len: n,
            cross_k,
            cross_v,
        })
    }

    pub fn start_state(&self) -> DecoderState<T> {
        let layers = self.layout.dec.len();
        DecoderState {
            pos: 0,
            self_k: vec![Vec::new(); layers],
            self_v: vec![Vec::new(); layers],
        }
    }

    /// Feed one target token and return next-token logits.
    pub fn step(&self, memory: &EncoderMemory<T>, state: &mut DecoderState<T>, token: u32) -> Result<Vec<T>> {
        if state.pos >= self.hp.max_positions {
            return Err(Error::TooLong {
                len: state.pos + 1,
                max: self.hp.max_positions,
                context: Some("decoder output".into()),
            });
        }
        self.check_ids(&[token], "target")?;
        let mut x = self.embed_rows(&[token], state.pos);
        for (i, layer) in self.layout.dec.iter().enumerate() {
            let h = self.ln(layer.ln1, &x);
            let (q, k, v) = self.self_block(layer.self_attn, &h, 1);
            state.self_k[i].extend_from_slice(&k);
            state.self_v[i].extend_from_slice(&v);
            let a = self.attend(&q, &state.self_k[i], &state.self_v[i]);
            let a = linear(&a, 1, self.t(layer.self_attn.wo));
            x.iter_mut().zip(&a).for_each(|(x, &a)| *x += a);

            let h = self.ln(layer.ln2, &x);
            let q = linear(&h, 1, self.t(layer.cross_attn.wq));
            let a = self.attend(&q, &memory.cross_k[i], &memory.cross_v[i]);
            let a = linear(&a, 1, self.t(layer.cross_attn.wo));
            x.iter_mut().zip(&a).for_each(|(x, &a)| *x += a);

            let h = self.ln(layer.ln3, &x);
            let f = self.ffn(layer.ff, &h, 1);
            x.iter_mut().zip(&f).for_each(|(x, &f)| *x += f);
        }
        state.pos += 1;
        let y = self.ln(self.layout.dec_ln, &x);
        Ok(match self.layout.out {
            Some(out) => linear(&y, 1, self.t(out)),
            None => {
                let table = self.t(self.layout.embed);
                table.data().chunks(self.hp.d_model).map(|row| kernels::dot(&y, row)).collect()
            }
        })
    }

    /// Decoder logits for a whole target prefix in one pass (rows = `tgt_in.len()`).
    pub fn decode_all(&self, memory: &EncoderMemory<T>, tgt_in: &[u32]) -> Result<Vec<Vec<T>>> {
        let mut state = self.start_state();
        tgt_in.iter().map(|&t| self.step(memory, &mut state, t)).collect()
    }
}
