use super::config::{Arch, ModelConfig};
use super::layers::{
    dropout, positional_encoding, AttentionKind, Builder, DecoderLayer, EncoderLayer, ForwardCtx, Linear, ParamSet,
};
use super::patch::patch_tokens;
use crate::error::{dim_err, Error, Result};
use crate::tensor::{Graph, RngStream, StreamRng, Tensor, Var};

/// Seed of the key-sampling stream used by every eval-mode forward, so that
/// repeated inference on the same input is bitwise identical.
const EVAL_SAMPLING_SEED: u64 = 0x5EED_5A3F;

/// Model inputs and targets for a batch of windows.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastBatch {
    /// `[batch, lookback, features]`, standardized.
    pub x_past: Tensor,
    /// `[batch, horizon]`, standardized load.
    pub y_future: Tensor,
    /// Building identifier of each row.
    pub series_id: Vec<String>,
}

impl ForecastBatch {
    pub fn len(&self) -> usize {
        self.series_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series_id.is_empty()
    }
}

#[derive(Clone, Debug)]
enum Net {
    /// Vanilla and Informer share this layout; only the attention kind differs.
    EncDec {
        embed: Linear,
        encoder: Vec<EncoderLayer>,
        decoder: Vec<DecoderLayer>,
        head: Linear,
    },
    Patch {
        embed: Linear,
        encoder: Vec<EncoderLayer>,
        head: Linear,
    },
}

/// A transformer forecaster mapping a lookback window to a horizon block in one shot.
#[derive(Clone, Debug)]
pub struct Forecaster {
    config: ModelConfig,
    input_width: usize,
    params: ParamSet,
    net: Net,
}

impl Forecaster {
    /// Fresh model with weights drawn from the init stream of `seed`.
    pub fn new(config: &ModelConfig, input_width: usize, seed: u64) -> Result<Self> {
        let mut rng = RngStream::Init.rng(seed, 0);
        Self::build(config, input_width, Some(&mut rng))
    }

    /// Same layout as [`Forecaster::new`] with every parameter zeroed.
    pub fn zeroed(config: &ModelConfig, input_width: usize) -> Result<Self> {
        Self::build(config, input_width, None)
    }

    fn build(config: &ModelConfig, input_width: usize, rng: Option<&mut StreamRng>) -> Result<Self> {
        config.validate()?;
        if input_width == 0 {
            return Err(Error::Config("input width must be positive".into()));
        }
        let (d, h, ff) = (config.d_model, config.n_heads, config.ff_dim);
        let mut b = Builder::new(rng);
        let net = match config.arch {
            Arch::Vanilla | Arch::Informer => {
                let embed = b.linear("embed", input_width, d);
                let encoder = (0..config.n_encoder_layers)
                    .map(|i| EncoderLayer::build(&mut b, &format!("encoder.{i}"), d, h, ff))
                    .collect();
                let decoder = (0..config.n_decoder_layers)
                    .map(|i| DecoderLayer::build(&mut b, &format!("decoder.{i}"), d, h, ff))
                    .collect();
                let head = b.linear("head", d, 1);
                Net::EncDec {
                    embed,
                    encoder,
                    decoder,
                    head,
                }
            }
            Arch::PatchTst => {
                let embed = b.linear("patch_embed", input_width * config.patch_len, d);
                let encoder = (0..config.n_encoder_layers)
                    .map(|i| EncoderLayer::build(&mut b, &format!("encoder.{i}"), d, h, ff))
                    .collect();
                let head = b.linear("head", config.n_patches() * d, config.horizon);
                Net::Patch { embed, encoder, head }
            }
        };
        Ok(Self {
            config: config.clone(),
            input_width,
            params: b.params,
            net,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Copies parameter values from a model of identical layout.
    pub fn load_params_from(&mut self, other: &Forecaster) -> Result<()> {
        if self.params.names() != other.params.names() {
            return Err(Error::Config("parameter layouts differ".into()));
        }
        for (dst, src) in self.params.tensors_mut().iter_mut().zip(other.params.tensors()) {
            if dst.shape() != src.shape() {
                return Err(dim_err!("parameter shapes differ"));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    /// Context for inference: dropout off, fixed key-sampling stream.
    pub fn eval_ctx(&self) -> ForwardCtx {
        ForwardCtx {
            train: false,
            dropout_rate: self.config.dropout,
            dropout_rng: RngStream::Dropout.rng(EVAL_SAMPLING_SEED, 0),
            sampling_rng: RngStream::Sampling.rng(EVAL_SAMPLING_SEED, 0),
        }
    }

    /// Context for training phase `phase` of a run seeded with `seed`.
    pub fn train_ctx(&self, seed: u64, phase: u64) -> ForwardCtx {
        ForwardCtx {
            train: true,
            dropout_rate: self.config.dropout,
            dropout_rng: RngStream::Dropout.rng(seed, phase),
            sampling_rng: RngStream::Sampling.rng(seed, phase),
        }
    }

    fn attention_kind(&self) -> AttentionKind {
        match self.config.arch {
            Arch::Informer => AttentionKind::ProbSparse(self.config.probsparse_factor),
            _ => AttentionKind::Full,
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let s = x.shape();
        if s.len() != 3 || s[1] != self.config.lookback || s[2] != self.input_width {
            return Err(dim_err!(
                "expected input [batch, {}, {}], got {s:?}",
                self.config.lookback,
                self.input_width
            ));
        }
        Ok(s[0])
    }

    /// Records the forward pass on `g` with parameters bound at `p`; returns `[batch, horizon]`.
    pub fn forward_graph(&self, g: &mut Graph, p: &[Var], x: &Tensor, ctx: &mut ForwardCtx) -> Result<Var> {
        let batch = self.check_input(x)?;
        let c = &self.config;
        match &self.net {
            Net::EncDec {
                embed,
                encoder,
                decoder,
                head,
            } => {
                let kind = self.attention_kind();
                let xv = g.input(x.clone());
                let mut memory = self.embed(g, p, embed, xv, 0, ctx)?;
                for layer in encoder {
                    memory = layer.apply(g, p, memory, kind, ctx)?;
                }
                let placeholder = g.input(Tensor::zeros(&[batch, c.horizon, self.input_width]));
                let mut y = self.embed(g, p, embed, placeholder, c.lookback, ctx)?;
                for layer in decoder {
                    y = layer.apply(g, p, y, memory, kind, ctx)?;
                }
                let out = head.apply(g, p, y)?;
                g.reshape(out, &[batch, c.horizon])
            }
            Net::Patch { embed, encoder, head } => {
                let tokens = g.input(patch_tokens(x, c.patch_len, c.stride)?);
                let mut h = self.embed(g, p, embed, tokens, 0, ctx)?;
                for layer in encoder {
                    h = layer.apply(g, p, h, AttentionKind::Full, ctx)?;
                }
                let flat = g.reshape(h, &[batch, c.n_patches() * c.d_model])?;
                head.apply(g, p, flat)
            }
        }
    }

    fn embed(&self, g: &mut Graph, p: &[Var], embed: &Linear, x: Var, start: usize, ctx: &mut ForwardCtx) -> Result<Var> {
        let len = g.shape(x)[1];
        let e = embed.apply(g, p, x)?;
        let pe = g.input(positional_encoding(start, len, self.config.d_model));
        let e = g.add(e, pe)?;
        dropout(g, e, ctx)
    }

    /// Forecast `[batch, horizon]` for `x_past`.
    pub fn forward(&self, x: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let out = self.forward_graph(&mut g, &p, x, ctx)?;
        Ok(g.value(out).clone())
    }

    /// Eval-mode forecast.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x, &mut self.eval_ctx())
    }

    /// Mean squared error of the batch forecast.
    pub fn loss(&self, batch: &ForecastBatch, ctx: &mut ForwardCtx) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let loss = self.loss_graph(&mut g, &p, batch, ctx)?;
        Ok(g.value(loss).item())
    }

    fn loss_graph(&self, g: &mut Graph, p: &[Var], batch: &ForecastBatch, ctx: &mut ForwardCtx) -> Result<Var> {
        let pred = self.forward_graph(g, p, &batch.x_past, ctx)?;
        let target = g.input(batch.y_future.clone());
        g.mse_loss(pred, target)
    }

    /// Loss and the gradient of every parameter, in canonical order.
    pub fn loss_and_grads(&self, batch: &ForecastBatch, ctx: &mut ForwardCtx) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let loss = self.loss_graph(&mut g, &p, batch, ctx)?;
        g.backward(loss)?;
        let grads = p
            .iter()
            .zip(self.params.tensors())
            .map(|(v, t)| g.grad(*v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
            .collect();
        Ok((g.value(loss).item(), grads))
    }
}
