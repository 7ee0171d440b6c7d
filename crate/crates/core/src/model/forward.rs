//! Graph construction for the encoder, decoder, MLM head and pointer-generator.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{AttnIds, FfnIds, LayerNormIds};
use super::Model;
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tokenizer::{BOS, UNK};

const LN_EPS: f64 = 1e-5;
/// Probability floor used before taking logs of the mixture.
pub const PROB_FLOOR: f64 = 1e-9;

/// One forward pass over a frozen parameter snapshot.
///
/// Parameters enter the graph lazily as tracked leaves (training) or constants
/// (inference). Dropout is active only when an RNG is supplied.
pub struct Forward<'m, T: Scalar> {
    pub(crate) model: &'m Model<T>,
    pub graph: Graph<T>,
    vars: Vec<Option<Var>>,
    track: bool,
    dropout: Option<ChaCha8Rng>,
}

/// Per-target-position pieces of the output layer.
pub struct OutputVars {
    /// Decoder states `s_t`, `[n x hidden]`.
    pub states: Var,
    /// `W^e (W^v s_t + b^v)`, `[n x vocab]`.
    pub logits: Var,
    /// Copy attention `alpha`, `[n x m]`; absent without the pointer.
    pub alpha: Option<Var>,
    /// Copy context vectors `z_t`, `[n x hidden]`.
    pub context: Option<Var>,
    /// Gate `lambda`, `[n]`.
    pub lambda: Option<Var>,
}

impl<'m, T: Scalar> Forward<'m, T> {
    pub fn new(model: &'m Model<T>, track: bool, dropout: Option<ChaCha8Rng>) -> Self {
        let dropout = if model.config.dropout > 0.0 { dropout } else { None };
        Self { model, graph: Graph::new(), vars: vec![None; model.params.len()], track, dropout }
    }

    pub fn eval(model: &'m Model<T>) -> Self {
        Self::new(model, false, None)
    }

    pub fn model(&self) -> &'m Model<T> {
        self.model
    }

    pub(crate) fn p(&mut self, id: usize) -> Var {
        if let Some(v) = self.vars[id] {
            return v;
        }
        let t = self.model.params.get(id).clone();
        let v = if self.track { self.graph.param(t) } else { self.graph.constant(t) };
        self.vars[id] = Some(v);
        v
    }

    /// Graph handle of each parameter that entered the graph.
    pub fn param_vars(&self) -> &[Option<Var>] {
        &self.vars
    }

    fn dropout(&mut self, x: Var) -> Result<Var> {
        let rate = self.model.config.dropout;
        let Some(rng) = self.dropout.as_mut() else { return Ok(x) };
        let keep = T::lit(1.0 / (1.0 - rate));
        let n = self.graph.value(x).len();
        let mask = (0..n).map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep }).collect();
        self.graph.mul_const(x, mask)
    }

    fn linear(&mut self, x: Var, w: usize, b: usize) -> Result<Var> {
        let (w, b) = (self.p(w), self.p(b));
        let y = self.graph.matmul(x, w)?;
        self.graph.add_row(y, b)
    }

    fn layer_norm(&mut self, x: Var, ids: LayerNormIds) -> Result<Var> {
        let (g, b) = (self.p(ids.gain), self.p(ids.bias));
        self.graph.layer_norm(x, g, b, T::lit(LN_EPS))
    }

    fn ffn(&mut self, x: Var, ids: FfnIds) -> Result<Var> {
        let h = self.linear(x, ids.w1, ids.b1)?;
        let h = self.graph.gelu(h);
        let h = self.dropout(h)?;
        self.linear(h, ids.w2, ids.b2)
    }

    fn attention(&mut self, x: Var, memory: Var, ids: AttnIds, causal: bool) -> Result<Var> {
        let heads = self.model.config.heads;
        let d = self.model.config.head_dim();
        let q = self.linear(x, ids.wq, ids.bq)?;
        let k = self.linear(memory, ids.wk, ids.bk)?;
        let v = self.linear(memory, ids.wv, ids.bv)?;
        let scale = T::one() / T::from_usize(d).unwrap().sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = self.graph.slice_cols(q, h * d, d)?;
            let kh = self.graph.slice_cols(k, h * d, d)?;
            let vh = self.graph.slice_cols(v, h * d, d)?;
            let scores = self.graph.matmul_t(qh, kh)?;
            let scores = self.graph.scale(scores, scale);
            let weights = if causal { self.graph.causal_softmax(scores)? } else { self.graph.softmax(scores)? };
            let weights = self.dropout(weights)?;
            outs.push(self.graph.matmul(weights, vh)?);
        }
        let joined = if heads == 1 { outs[0] } else { self.graph.concat_cols(&outs)? };
        self.linear(joined, ids.wo, ids.bo)
    }

    fn embed(&mut self, ids: &[u32], pos_table: usize) -> Result<Var> {
        let vocab = self.model.config.vocab_size;
        let rows: Vec<usize> = ids.iter().map(|&i| if (i as usize) < vocab { i as usize } else { UNK as usize }).collect();
        let table = self.p(self.model.layout.embed);
        let tok = self.graph.gather_rows(table, &rows)?;
        let pos = self.p(pos_table);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos = self.graph.gather_rows(pos, &positions)?;
        let x = self.graph.add(tok, pos)?;
        self.dropout(x)
    }

    /// Bidirectional encoder over `ids`; returns the context states `h^c`, `[m x hidden]`.
    pub fn encoder(&mut self, ids: &[u32]) -> Result<Var> {
        let cfg = &self.model.config;
        if ids.is_empty() {
            return Err(Error::Empty("encoder input"));
        }
        if ids.len() > cfg.max_context {
            return Err(Error::TooLong { what: "encoder", len: ids.len(), max: cfg.max_context });
        }
        let layout = self.model.layout.clone();
        let mut x = self.embed(ids, layout.enc_pos)?;
        for layer in &layout.enc {
            let h = self.layer_norm(x, layer.ln1)?;
            let h = self.attention(h, h, layer.attn, false)?;
            let h = self.dropout(h)?;
            x = self.graph.add(x, h)?;
            let h = self.layer_norm(x, layer.ln2)?;
            let h = self.ffn(h, layer.ffn)?;
            let h = self.dropout(h)?;
            x = self.graph.add(x, h)?;
        }
        self.layer_norm(x, layout.enc_ln)
    }

    /// MLM logits for the given rows of the encoder states, `[rows x vocab]`.
    pub fn mlm_logits(&mut self, states: Var, rows: Option<&[usize]>) -> Result<Var> {
        let layout = &self.model.layout;
        let (w, b, ln, bias, embed) =
            (layout.mlm_dense_w, layout.mlm_dense_b, layout.mlm_ln, layout.mlm_bias, layout.embed);
        let x = match rows {
            Some(r) => self.graph.gather_rows(states, r)?,
            None => states,
        };
        let x = self.linear(x, w, b)?;
        let x = self.graph.gelu(x);
        let x = self.layer_norm(x, ln)?;
        let e = self.p(embed);
        let logits = self.graph.matmul_t(x, e)?;
        let bias = self.p(bias);
        self.graph.add_row(logits, bias)
    }

    /// Causal decoder over `input_ids` attending to `memory`; returns all states `[n x hidden]`.
    pub fn decoder(&mut self, input_ids: &[u32], memory: Var) -> Result<Var> {
        let cfg = &self.model.config;
        if input_ids.is_empty() {
            return Err(Error::Empty("decoder prefix"));
        }
        if input_ids.len() > cfg.max_target {
            return Err(Error::TooLong { what: "decoder", len: input_ids.len(), max: cfg.max_target });
        }
        let layout = self.model.layout.clone();
        let mut x = self.embed(input_ids, layout.dec_pos)?;
        for layer in &layout.dec {
            let h = self.layer_norm(x, layer.ln1)?;
            let h = self.attention(h, h, layer.self_attn, true)?;
            let h = self.dropout(h)?;
            x = self.graph.add(x, h)?;
            let h = self.layer_norm(x, layer.ln2)?;
            let h = self.attention(h, memory, layer.cross_attn, false)?;
            let h = self.dropout(h)?;
            x = self.graph.add(x, h)?;
            let h = self.layer_norm(x, layer.ln3)?;
            let h = self.ffn(h, layer.ffn)?;
            let h = self.dropout(h)?;
            x = self.graph.add(x, h)?;
        }
        self.layer_norm(x, layout.dec_ln)
    }

    /// `W^e (W^v s + b^v)` over the base vocabulary.
    pub fn vocab_logits(&mut self, states: Var) -> Result<Var> {
        let layout = &self.model.layout;
        let (w, b, e) = (layout.gen_w, layout.gen_b, layout.embed);
        let u = self.linear(states, w, b)?;
        let e = self.p(e);
        self.graph.matmul_t(u, e)
    }

    /// `e_tl = w^c . tanh(W^m h_l + W^s s_t + b^c)`, `alpha = softmax_l(e)`, `z = alpha h`.
    pub fn copy_attention(&mut self, states: Var, memory: Var) -> Result<(Var, Var)> {
        let layout = &self.model.layout;
        let (wm, ws, bc, wc) = (layout.copy_wm, layout.copy_ws, layout.copy_bc, layout.copy_wc);
        let n = self.graph.value(states).rows();
        let m = self.graph.value(memory).rows();
        let wm = self.p(wm);
        let proj_h = self.graph.matmul(memory, wm)?;
        let proj_s = self.linear(states, ws, bc)?;
        let pre = self.graph.pairwise_add(proj_s, proj_h)?;
        let act = self.graph.tanh(pre);
        let wc = self.p(wc);
        let scores = self.graph.matmul(act, wc)?;
        let scores = self.graph.reshape(scores, &[n, m])?;
        let alpha = self.graph.softmax(scores)?;
        let z = self.graph.matmul(alpha, memory)?;
        Ok((alpha, z))
    }

    /// `lambda = sigmoid(w^z . z_t + w^s . s_t + b^m)`, one scalar per step.
    pub fn gate(&mut self, context: Var, states: Var) -> Result<Var> {
        let layout = &self.model.layout;
        let (wz, ws, bm) = (layout.gate_wz, layout.gate_ws, layout.gate_bm);
        let n = self.graph.value(states).rows();
        let wz = self.p(wz);
        let a = self.graph.matmul(context, wz)?;
        let ws = self.p(ws);
        let b = self.graph.matmul(states, ws)?;
        let sum = self.graph.add(a, b)?;
        let bm = self.p(bm);
        let sum = self.graph.add_row(sum, bm)?;
        let lam = self.graph.sigmoid(sum);
        self.graph.reshape(lam, &[n])
    }

    /// Runs the decoder and the output layer for a full decoder input sequence.
    pub fn outputs(&mut self, decoder_input: &[u32], memory: Var, use_pointer: bool) -> Result<OutputVars> {
        let states = self.decoder(decoder_input, memory)?;
        let logits = self.vocab_logits(states)?;
        if !use_pointer {
            return Ok(OutputVars { states, logits, alpha: None, context: None, lambda: None });
        }
        let (alpha, context) = self.copy_attention(states, memory)?;
        let lambda = self.gate(context, states)?;
        Ok(OutputVars { states, logits, alpha: Some(alpha), context: Some(context), lambda: Some(lambda) })
    }

    /// Per-token `-log P(y_t | y_<t, x)` under teacher forcing, `[n]`.
    ///
    /// `context` and `target` are extended ids; `vocab` is the base size.
    pub fn generation_nll(&mut self, context: &[u32], target: &[u32], use_pointer: bool, memory: Var) -> Result<Var> {
        let vocab = self.model.config.vocab_size;
        let input = decoder_input(target);
        let out = self.outputs(&input, memory, use_pointer)?;
        if !use_pointer {
            let gold: Vec<usize> =
                target.iter().map(|&y| if (y as usize) < vocab { y as usize } else { UNK as usize }).collect();
            return self.graph.cross_entropy(out.logits, &gold);
        }
        let (alpha, lambda) = (out.alpha.unwrap(), out.lambda.unwrap());
        let pv = self.graph.softmax(out.logits)?;
        let vocab_sets = target.iter().map(|&y| if (y as usize) < vocab { vec![y as usize] } else { vec![] }).collect();
        let pv_gold = self.graph.select_sum(pv, vocab_sets)?;
        let copy_sets = target
            .iter()
            .map(|&y| context.iter().enumerate().filter(|&(_, &x)| x == y).map(|(l, _)| l).collect())
            .collect();
        let pc_gold = self.graph.select_sum(alpha, copy_sets)?;
        let gen = self.graph.mul(lambda, pv_gold)?;
        let one_minus = self.graph.affine(lambda, -T::one(), T::one());
        let copy = self.graph.mul(one_minus, pc_gold)?;
        let p = self.graph.add(gen, copy)?;
        Ok(self.graph.neg_log(p, T::lit(PROB_FLOOR)))
    }

    /// Per-position MLM negative log-likelihood at the masked positions, `[k]`.
    pub fn mlm_nll(&mut self, input_ids: &[u32], positions: &[usize], labels: &[usize]) -> Result<Var> {
        let states = self.encoder(input_ids)?;
        let logits = self.mlm_logits(states, Some(positions))?;
        self.graph.cross_entropy(logits, labels)
    }

    /// Leaf gradients of every parameter that entered the graph.
    pub fn gradients(&self) -> Vec<Option<Tensor<T>>> {
        self.vars.iter().map(|v| v.and_then(|v| self.graph.grad(v).cloned())).collect()
    }
}

/// `[BOS] y_1 .. y_{n-1}`: the teacher-forced decoder input for target `y`.
pub fn decoder_input(target: &[u32]) -> Vec<u32> {
    let mut input = Vec::with_capacity(target.len().max(1));
    input.push(BOS);
    input.extend_from_slice(&target[..target.len().saturating_sub(1)]);
    input
}
