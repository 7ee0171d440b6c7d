//! Transformer encoder-decoder with an MLM head on the encoder, a tied-embedding
//! LM head on the decoder and a pointer-generator output layer.

pub mod checkpoint;
pub mod config;
pub mod forward;
pub mod params;
pub mod pointer;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::ModelConfig;
pub use forward::{decoder_input, Forward, OutputVars, PROB_FLOOR};
pub use params::{ParamStore, DECODER_PREFIXES, ENCODER_PREFIXES};
pub use pointer::{copy_distribution, mix};

use crate::corpus::MaskedBatch;
use crate::error::{Error, Result};
use crate::rng::keyed_rng;
use crate::scalar::Scalar;
use crate::tensor::{softmax, Tensor};
use params::Layout;

#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub(crate) params: ParamStore<T>,
    pub(crate) layout: Layout,
}

/// Encoder states `h^c` and MLM logits, one row per context position.
#[derive(Debug, Clone)]
pub struct EncoderOutput<T> {
    pub states: Tensor<T>,
    pub mlm_logits: Option<Tensor<T>>,
}

impl<T: Scalar> EncoderOutput<T> {
    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Output distribution of one decoding step over the extended vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDistribution<T> {
    pub p_final: Vec<T>,
    /// Gate value; 1 when the pointer is disabled.
    pub lambda: T,
    /// Copy attention over context positions; empty when the pointer is disabled.
    pub alpha: Vec<T>,
}

/// Teacher-forced losses of one example.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub nll_per_token: Vec<f64>,
    pub mlm_loss: Option<f64>,
    /// Gold probabilities that fell below [`PROB_FLOOR`].
    pub clamped: usize,
}

impl LossOutput {
    pub fn total_nll(&self) -> f64 {
        self.nll_per_token.iter().sum()
    }
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = keyed_rng(&[seed, 0x1417]);
        let (params, layout) = params::build(&config, &mut rng);
        Ok(Self { config, params, layout })
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// `W^e`: the single storage behind the input embedding and both output projections.
    pub fn embedding(&self) -> &Tensor<T> {
        self.params.get(self.layout.embed)
    }

    pub fn embedding_mut(&mut self) -> &mut Tensor<T> {
        self.params.get_mut(self.layout.embed)
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model { config: self.config.clone(), params: self.params.cast(), layout: self.layout.clone() }
    }

    /// Redraws the parameters under the given name prefixes from a fresh seed.
    pub fn reinit(&mut self, prefixes: &[&str], seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.params.reinit(prefixes, &mut rng);
    }

    /// Eval-mode encoder pass with MLM logits at every position.
    pub fn encode(&self, context_ids: &[u32]) -> Result<EncoderOutput<T>> {
        let mut f = Forward::eval(self);
        let states = f.encoder(context_ids)?;
        let logits = f.mlm_logits(states, None)?;
        f.graph.check_finite()?;
        Ok(EncoderOutput { states: f.graph.value(states).clone(), mlm_logits: Some(f.graph.value(logits).clone()) })
    }

    /// Eval-mode encoder pass without the MLM head.
    pub fn encode_states(&self, context_ids: &[u32]) -> Result<EncoderOutput<T>> {
        let mut f = Forward::eval(self);
        let states = f.encoder(context_ids)?;
        f.graph.check_finite()?;
        Ok(EncoderOutput { states: f.graph.value(states).clone(), mlm_logits: None })
    }

    /// Decoder states for every prefix position, `[len x hidden]`.
    pub fn decode_states(&self, prefix: &[u32], enc: &EncoderOutput<T>) -> Result<Tensor<T>> {
        let mut f = Forward::eval(self);
        let memory = f.graph.constant(enc.states.clone());
        let s = f.decoder(prefix, memory)?;
        f.graph.check_finite()?;
        Ok(f.graph.value(s).clone())
    }

    /// `s_t` for the last position of `prefix`.
    pub fn decode_step(&self, prefix: &[u32], enc: &EncoderOutput<T>) -> Result<Vec<T>> {
        let states = self.decode_states(prefix, enc)?;
        Ok(states.row(states.rows() - 1).to_vec())
    }

    fn state_var(&self, f: &mut Forward<'_, T>, s_t: &[T]) -> Result<crate::autograd::Var> {
        if s_t.len() != self.config.hidden {
            return Err(Error::shape("decoder state", format!("{} != hidden {}", s_t.len(), self.config.hidden)));
        }
        Ok(f.graph.constant(Tensor::new(vec![1, s_t.len()], s_t.to_vec())?))
    }

    /// `P^v` padded with zeros up to `ext_size`.
    pub fn vocab_distribution(&self, s_t: &[T], ext_size: usize) -> Result<Vec<T>> {
        let mut f = Forward::eval(self);
        let s = self.state_var(&mut f, s_t)?;
        let logits = f.vocab_logits(s)?;
        let mut pv = softmax(f.graph.value(logits).data())?;
        pv.resize(ext_size.max(pv.len()), T::zero());
        Ok(pv)
    }

    /// Copy attention weights over the context and the context vector `z_t`.
    pub fn copy_attention(&self, s_t: &[T], enc: &EncoderOutput<T>) -> Result<(Vec<T>, Vec<T>)> {
        let mut f = Forward::eval(self);
        let s = self.state_var(&mut f, s_t)?;
        let memory = f.graph.constant(enc.states.clone());
        let (alpha, z) = f.copy_attention(s, memory)?;
        f.graph.check_finite()?;
        Ok((f.graph.value(alpha).data().to_vec(), f.graph.value(z).data().to_vec()))
    }

    pub fn gate(&self, z: &[T], s_t: &[T]) -> Result<T> {
        let mut f = Forward::eval(self);
        let s = self.state_var(&mut f, s_t)?;
        let z = self.state_var(&mut f, z)?;
        let lam = f.gate(z, s)?;
        Ok(f.graph.value(lam).item())
    }

    /// Final mixture with the gate computed from `z_t` and `s_t`.
    pub fn mixture(&self, pv: &[T], pc: &[T], z: &[T], s_t: &[T]) -> Result<StepDistribution<T>> {
        let lambda = self.gate(z, s_t)?;
        Ok(StepDistribution { p_final: mix(pv, pc, lambda)?, lambda, alpha: Vec::new() })
    }

    /// Next-token distribution after `prefix` (extended ids, starting with `[BOS]`).
    ///
    /// `context_ids` are the extended ids of the context positions.
    pub fn step_distribution(
        &self,
        prefix: &[u32],
        enc: &EncoderOutput<T>,
        context_ids: &[u32],
        ext_size: usize,
        use_pointer: bool,
    ) -> Result<StepDistribution<T>> {
        let mut f = Forward::eval(self);
        let memory = f.graph.constant(enc.states.clone());
        let out = f.outputs(prefix, memory, use_pointer)?;
        f.graph.check_finite()?;
        let last = prefix.len() - 1;
        let mut pv = softmax(f.graph.value(out.logits).row(last))?;
        pv.resize(ext_size.max(pv.len()), T::zero());
        if !use_pointer {
            return Ok(StepDistribution { p_final: pv, lambda: T::one(), alpha: Vec::new() });
        }
        let alpha = f.graph.value(out.alpha.unwrap()).row(last).to_vec();
        let lambda = f.graph.value(out.lambda.unwrap()).data()[last];
        let pc = copy_distribution(&alpha, context_ids, pv.len())?;
        Ok(StepDistribution { p_final: mix(&pv, &pc, lambda)?, lambda, alpha })
    }

    /// Teacher-forced per-token NLL of `target` given `context` (both extended ids),
    /// plus the MLM loss when a masked copy of the context is supplied.
    ///
    /// Without the pointer, OOV gold tokens are scored as `[UNK]`.
    pub fn forward_loss(
        &self,
        context: &[u32],
        target: &[u32],
        use_pointer: bool,
        masked: Option<&MaskedBatch>,
    ) -> Result<LossOutput> {
        let mut f = Forward::eval(self);
        let base_ctx = to_base(context, self.config.vocab_size);
        let memory = f.encoder(&base_ctx)?;
        let nll = f.generation_nll(context, target, use_pointer, memory)?;
        let mlm_loss = match masked {
            Some(m) if m.num_masked() > 0 => {
                let labels: Vec<usize> = m.mask_positions.iter().map(|&p| m.mlm_labels[p].unwrap() as usize).collect();
                let v = f.mlm_nll(&m.input_ids, &m.mask_positions, &labels)?;
                let mean = f.graph.mean(v);
                Some(f.graph.value(mean).item().as_f64())
            }
            _ => None,
        };
        f.graph.check_finite()?;
        Ok(LossOutput {
            nll_per_token: f.graph.value(nll).to_f64_vec(),
            mlm_loss,
            clamped: f.graph.clamped(),
        })
    }
}

/// Maps extended ids outside the base vocabulary to `[UNK]`.
pub fn to_base(ids: &[u32], vocab_size: usize) -> Vec<u32> {
    ids.iter().map(|&i| if (i as usize) < vocab_size { i } else { crate::tokenizer::UNK }).collect()
}

#[cfg(test)]
mod tests;
