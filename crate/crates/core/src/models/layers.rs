//! Parameter registry and the transformer building blocks shared by all architectures.

use super::attention::{full_attention, prob_sparse_attention};
use crate::error::Result;
use crate::tensor::{glorot_uniform, Graph, StreamRng, Tensor, Var};

pub(crate) const LN_EPS: f64 = 1e-5;

/// Named parameter tensors in canonical (creation) order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    fn push(&mut self, name: String, t: Tensor) -> usize {
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    /// Registers every tensor as a trainable leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.tensors.iter().map(|t| g.param(t.clone())).collect()
    }
}

/// Creates parameters in a fixed order, drawing weights from the init stream.
pub(crate) struct Builder<'a> {
    pub params: ParamSet,
    rng: Option<&'a mut StreamRng>,
}

impl<'a> Builder<'a> {
    /// With `rng == None` all tensors are zero-filled (used before loading a checkpoint).
    pub fn new(rng: Option<&'a mut StreamRng>) -> Self {
        Self {
            params: ParamSet::default(),
            rng,
        }
    }

    fn weight(&mut self, name: String, fan_in: usize, fan_out: usize) -> usize {
        let shape = [fan_in, fan_out];
        let t = match self.rng.as_deref_mut() {
            Some(rng) => glorot_uniform(&shape, fan_in, fan_out, rng),
            None => Tensor::zeros(&shape),
        };
        self.params.push(name, t)
    }

    fn constant(&mut self, name: String, len: usize, value: f64) -> usize {
        self.params.push(name, Tensor::full(&[len], value))
    }

    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: self.weight(format!("{name}.weight"), fan_in, fan_out),
            b: self.constant(format!("{name}.bias"), fan_out, 0.0),
        }
    }

    pub fn norm(&mut self, name: &str, width: usize) -> Norm {
        Norm {
            gamma: self.constant(format!("{name}.gamma"), width, 1.0),
            beta: self.constant(format!("{name}.beta"), width, 0.0),
        }
    }

    pub fn attention(&mut self, name: &str, d_model: usize, n_heads: usize) -> MultiHead {
        MultiHead {
            q: self.linear(&format!("{name}.q"), d_model, d_model),
            k: self.linear(&format!("{name}.k"), d_model, d_model),
            v: self.linear(&format!("{name}.v"), d_model, d_model),
            o: self.linear(&format!("{name}.o"), d_model, d_model),
            n_heads,
        }
    }

    pub fn feed_forward(&mut self, name: &str, d_model: usize, ff_dim: usize) -> FeedForward {
        FeedForward {
            up: self.linear(&format!("{name}.up"), d_model, ff_dim),
            down: self.linear(&format!("{name}.down"), ff_dim, d_model),
        }
    }
}

/// Per-forward state: train/eval mode and the stochastic streams.
pub struct ForwardCtx {
    pub train: bool,
    pub dropout_rate: f64,
    pub dropout_rng: StreamRng,
    pub sampling_rng: StreamRng,
}

#[derive(Clone, Copy, Debug)]
pub enum AttentionKind {
    Full,
    ProbSparse(f64),
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
}

impl Linear {
    pub fn apply(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let h = g.matmul(x, p[self.w])?;
        g.add(h, p[self.b])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Norm {
    pub gamma: usize,
    pub beta: usize,
}

impl Norm {
    pub fn apply(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        g.layer_norm(x, p[self.gamma], p[self.beta], LN_EPS)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn apply(&self, g: &mut Graph, p: &[Var], x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        let h = self.up.apply(g, p, x)?;
        let h = g.gelu(h)?;
        let h = dropout(g, h, ctx)?;
        self.down.apply(g, p, h)
    }
}

pub(crate) fn dropout(g: &mut Graph, x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
    g.dropout(x, ctx.dropout_rate, ctx.train, &mut ctx.dropout_rng)
}

#[derive(Clone, Copy, Debug)]
pub struct MultiHead {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub n_heads: usize,
}

impl MultiHead {
    /// `[B, L, d] -> [B * heads, L, d / heads]`
    fn split_heads(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let (b, l, d) = (s[0], s[1], s[2]);
        let h = self.n_heads;
        let x = g.reshape(x, &[b, l, h, d / h])?;
        let x = g.permute(x, &[0, 2, 1, 3])?;
        g.reshape(x, &[b * h, l, d / h])
    }

    fn merge_heads(&self, g: &mut Graph, x: Var, batch: usize) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let (l, dh) = (s[1], s[2]);
        let h = self.n_heads;
        let x = g.reshape(x, &[batch, h, l, dh])?;
        let x = g.permute(x, &[0, 2, 1, 3])?;
        g.reshape(x, &[batch, l, h * dh])
    }

    pub fn apply(
        &self,
        g: &mut Graph,
        p: &[Var],
        query: Var,
        memory: Var,
        kind: AttentionKind,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let batch = g.shape(query)[0];
        let q = self.q.apply(g, p, query)?;
        let k = self.k.apply(g, p, memory)?;
        let v = self.v.apply(g, p, memory)?;
        let (q, k, v) = (
            self.split_heads(g, q)?,
            self.split_heads(g, k)?,
            self.split_heads(g, v)?,
        );
        let attended = match kind {
            AttentionKind::Full => full_attention(g, q, k, v)?,
            AttentionKind::ProbSparse(c) => prob_sparse_attention(g, q, k, v, c, &mut ctx.sampling_rng)?,
        };
        let merged = self.merge_heads(g, attended, batch)?;
        self.o.apply(g, p, merged)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderLayer {
    pub attn: MultiHead,
    pub norm1: Norm,
    pub ffn: FeedForward,
    pub norm2: Norm,
}

impl EncoderLayer {
    pub fn build(b: &mut Builder, name: &str, d_model: usize, n_heads: usize, ff_dim: usize) -> Self {
        Self {
            attn: b.attention(&format!("{name}.attn"), d_model, n_heads),
            norm1: b.norm(&format!("{name}.norm1"), d_model),
            ffn: b.feed_forward(&format!("{name}.ffn"), d_model, ff_dim),
            norm2: b.norm(&format!("{name}.norm2"), d_model),
        }
    }

    pub fn apply(&self, g: &mut Graph, p: &[Var], x: Var, kind: AttentionKind, ctx: &mut ForwardCtx) -> Result<Var> {
        let a = self.attn.apply(g, p, x, x, kind, ctx)?;
        let a = dropout(g, a, ctx)?;
        let x = g.add(x, a)?;
        let x = self.norm1.apply(g, p, x)?;
        let f = self.ffn.apply(g, p, x, ctx)?;
        let f = dropout(g, f, ctx)?;
        let x = g.add(x, f)?;
        self.norm2.apply(g, p, x)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderLayer {
    pub self_attn: MultiHead,
    pub norm1: Norm,
    pub cross_attn: MultiHead,
    pub norm2: Norm,
    pub ffn: FeedForward,
    pub norm3: Norm,
}

impl DecoderLayer {
    pub fn build(b: &mut Builder, name: &str, d_model: usize, n_heads: usize, ff_dim: usize) -> Self {
        Self {
            self_attn: b.attention(&format!("{name}.self_attn"), d_model, n_heads),
            norm1: b.norm(&format!("{name}.norm1"), d_model),
            cross_attn: b.attention(&format!("{name}.cross_attn"), d_model, n_heads),
            norm2: b.norm(&format!("{name}.norm2"), d_model),
            ffn: b.feed_forward(&format!("{name}.ffn"), d_model, ff_dim),
            norm3: b.norm(&format!("{name}.norm3"), d_model),
        }
    }

    /// Self-attention uses `kind`; cross-attention over the encoder memory is always full.
    pub fn apply(
        &self,
        g: &mut Graph,
        p: &[Var],
        y: Var,
        memory: Var,
        kind: AttentionKind,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let s = self.self_attn.apply(g, p, y, y, kind, ctx)?;
        let s = dropout(g, s, ctx)?;
        let y = g.add(y, s)?;
        let y = self.norm1.apply(g, p, y)?;
        let c = self.cross_attn.apply(g, p, y, memory, AttentionKind::Full, ctx)?;
        let c = dropout(g, c, ctx)?;
        let y = g.add(y, c)?;
        let y = self.norm2.apply(g, p, y)?;
        let f = self.ffn.apply(g, p, y, ctx)?;
        let f = dropout(g, f, ctx)?;
        let y = g.add(y, f)?;
        self.norm3.apply(g, p, y)
    }
}

/// Fixed sinusoidal encoding for positions `start..start + len`, shape `[len, d_model]`.
pub fn positional_encoding(start: usize, len: usize, d_model: usize) -> Tensor {
    let mut data = Vec::with_capacity(len * d_model);
    for pos in start..start + len {
        for i in 0..d_model {
            let pair = (i / 2) as f64 * 2.0;
            let angle = pos as f64 / 10_000f64.powf(pair / d_model as f64);
            data.push(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::new(&[len, d_model], data).expect("positional encoding shape")
}
