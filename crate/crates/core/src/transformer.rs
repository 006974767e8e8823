//! Post-norm transformer encoder over residue tokens with masked mean pooling.

use std::sync::Arc;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::protein::{PAD_TOKEN, VOCAB_SIZE};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_blocks: usize,
    pub max_len: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            d_model: 128,
            n_heads: 4,
            d_ff: 256,
            n_blocks: 2,
            max_len: crate::protein::DEFAULT_MAX_SEQ_LEN,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

impl Norm {
    fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        Norm {
            gain: store.add(&format!("{name}.gain"), Tensor::ones(&[1, d])),
            bias: store.add(&format!("{name}.bias"), Tensor::zeros(&[1, d])),
        }
    }

    fn apply(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        tape.layer_norm(x, bound.var(self.gain), bound.var(self.bias), LAYER_NORM_EPS)
    }
}

#[derive(Debug, Clone)]
struct Block {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ff1: Linear,
    ff2: Linear,
    norm1: Norm,
    norm2: Norm,
}

#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    cfg: TransformerConfig,
    token_embed: ParamId,
    positions: Arc<Tensor>,
    blocks: Vec<Block>,
}

/// Fixed sinusoidal table: `sin(p / 10000^(2i/d))` on even columns and the
/// matching cosine on odd ones.
pub fn sinusoidal_positions(max_len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; max_len * d];
    for p in 0..max_len {
        for i in 0..d {
            let expo = (2 * (i / 2)) as f64 / d as f64;
            let angle = p as f64 / 10000f64.powf(expo);
            data[p * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![max_len, d], data).expect("position table")
}

/// Attention probabilities of the last forward, per block and head; exposed
/// for inspection in tests.
#[derive(Debug, Clone, Default)]
pub struct AttentionTrace {
    pub weights: Vec<Var>,
}

impl TransformerEncoder {
    pub fn new(store: &mut ParamStore, init: &Init, prefix: &str, cfg: TransformerConfig) -> Result<Self> {
        if cfg.n_heads == 0 || !cfg.d_model.is_multiple_of(cfg.n_heads) {
            return Err(Error::ModelConfig(format!(
                "d_model {} is not divisible by {} heads",
                cfg.d_model, cfg.n_heads
            )));
        }
        let d = cfg.d_model;
        let name = format!("{prefix}.token_embed");
        let token_embed = store.add(&name, init.glorot(&name, VOCAB_SIZE, d));
        let blocks = (0..cfg.n_blocks)
            .map(|b| {
                let p = format!("{prefix}.block{b}");
                Block {
                    q: Linear::new(store, init, &format!("{p}.q"), d, d),
                    k: Linear::new(store, init, &format!("{p}.k"), d, d),
                    v: Linear::new(store, init, &format!("{p}.v"), d, d),
                    o: Linear::new(store, init, &format!("{p}.o"), d, d),
                    ff1: Linear::new(store, init, &format!("{p}.ff1"), d, cfg.d_ff),
                    ff2: Linear::new(store, init, &format!("{p}.ff2"), cfg.d_ff, d),
                    norm1: Norm::new(store, &format!("{p}.norm1"), d),
                    norm2: Norm::new(store, &format!("{p}.norm2"), d),
                }
            })
            .collect();
        Ok(TransformerEncoder {
            cfg,
            token_embed,
            positions: Arc::new(sinusoidal_positions(cfg.max_len, d)),
            blocks,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.cfg
    }

    /// Encodes one token sequence into a `1 × d_model` row. `mask[i]` marks
    /// real (non-padding) positions.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, tokens: &[u32], mask: &[bool]) -> Result<Var> {
        self.forward_traced(tape, bound, tokens, mask, None)
    }

    pub fn forward_traced(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        tokens: &[u32],
        mask: &[bool],
        mut trace: Option<&mut AttentionTrace>,
    ) -> Result<Var> {
        let n = tokens.len();
        if n == 0 || n > self.cfg.max_len {
            return Err(Error::Contract(format!(
                "sequence length {n} outside 1..={}",
                self.cfg.max_len
            )));
        }
        if mask.len() != n {
            return Err(Error::Dimension(format!("mask length {} for {n} tokens", mask.len())));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::Contract("transformer input is fully masked".into()));
        }
        let d = self.cfg.d_model;
        let idx: Vec<Option<usize>> = tokens
            .iter()
            .map(|&t| {
                if (t as usize) < VOCAB_SIZE {
                    Ok(Some(t as usize))
                } else {
                    Err(Error::Input(format!("token {t} outside vocabulary")))
                }
            })
            .collect::<Result<_>>()?;
        let emb = tape.gather_rows(bound.var(self.token_embed), &idx)?;
        let pos = Tensor::new(vec![n, d], self.positions.data()[..n * d].to_vec())?;
        let pos = tape.constant(pos);
        let mut x = tape.add(emb, pos)?;

        let valid = Arc::new(mask.to_vec());
        let dh = d / self.cfg.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        for block in &self.blocks {
            let q = block.q.apply(tape, bound, x)?;
            let k = block.k.apply(tape, bound, x)?;
            let v = block.v.apply(tape, bound, x)?;
            let mut heads = Vec::with_capacity(self.cfg.n_heads);
            for h in 0..self.cfg.n_heads {
                let qh = tape.slice_cols(q, h * dh, dh)?;
                let kh = tape.slice_cols(k, h * dh, dh)?;
                let vh = tape.slice_cols(v, h * dh, dh)?;
                let kt = tape.transpose(kh);
                let scores = tape.matmul(qh, kt)?;
                let scores = tape.scale(scores, scale);
                let attn = tape.masked_softmax_rows(scores, Arc::clone(&valid))?;
                if let Some(t) = trace.as_deref_mut() {
                    t.weights.push(attn);
                }
                heads.push(tape.matmul(attn, vh)?);
            }
            let cat = tape.concat_cols(&heads)?;
            let attn_out = block.o.apply(tape, bound, cat)?;
            let res = tape.add(x, attn_out)?;
            x = block.norm1.apply(tape, bound, res)?;
            let f = block.ff1.apply(tape, bound, x)?;
            let f = tape.relu(f);
            let f = block.ff2.apply(tape, bound, f)?;
            let res = tape.add(x, f)?;
            x = block.norm2.apply(tape, bound, res)?;
        }
        tape.masked_mean_rows(x, valid)
    }

    /// Right-pads `tokens` to `len` and returns the mask.
    pub fn pad(tokens: &[u32], len: usize) -> (Vec<u32>, Vec<bool>) {
        let mut t = tokens.to_vec();
        let mut m = vec![true; tokens.len()];
        t.resize(len.max(tokens.len()), PAD_TOKEN);
        m.resize(len.max(tokens.len()), false);
        (t, m)
    }
}
