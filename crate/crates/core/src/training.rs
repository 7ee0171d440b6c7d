//! Adam, the warmup/decay schedule, the two training stages and resumable loops.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::config::TrainConfig;
use crate::corpus::{mask_with_rng, MaskedBatch, Pair};
use crate::dataset::Example;
use crate::error::{Error, Result};
use crate::model::checkpoint::Checkpoint;
use crate::model::{to_base, Forward, Model, ParamStore, DECODER_PREFIXES};
use crate::rng::keyed_rng;
use crate::tensor::Tensor;

const MASK_STREAM: u64 = 0x6d61736b;
const DROPOUT_STREAM: u64 = 0x64726f70;
const ORDER_STREAM: u64 = 0x6f726472;
const REINIT_STREAM: u64 = 0x72696e74;

/// `lr * step / warmup` up to `warmup`, then linear decay to 0 at `total`.
pub fn lr_schedule(step: usize, cfg: &TrainConfig) -> f64 {
    let (w, total) = (cfg.warmup_steps, cfg.total_steps);
    if step >= total {
        return 0.0;
    }
    if step <= w {
        if w == 0 {
            return cfg.lr;
        }
        return cfg.lr * step as f64 / w as f64;
    }
    cfg.lr * (total - step) as f64 / (total - w) as f64
}

/// Adam moments for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Tensor<f32>>,
    v: Vec<Tensor<f32>>,
}

impl Adam {
    pub fn new(params: &ParamStore<f32>) -> Self {
        let zeros: Vec<Tensor<f32>> = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn update(&mut self, params: &mut ParamStore<f32>, grads: &[Tensor<f32>], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = (1.0 - self.beta1.powi(t)) as f32;
        let c2 = (1.0 - self.beta2.powi(t)) as f32;
        let (b1, b2, eps, lr) = (self.beta1 as f32, self.beta2 as f32, self.eps as f32, lr as f32);
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let (m, v, g) = (self.m[i].data_mut(), self.v[i].data_mut(), grads[i].data());
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                *w -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
            }
        }
    }

    fn tensors(&self, params: &ParamStore<f32>) -> Vec<(String, Tensor<f32>)> {
        let names = params.names();
        let m = names.iter().zip(&self.m).map(|(n, t)| (format!("adam.m.{n}"), t.clone()));
        let v = names.iter().zip(&self.v).map(|(n, t)| (format!("adam.v.{n}"), t.clone()));
        m.chain(v).collect()
    }

    fn from_tensors(params: &ParamStore<f32>, step: u64, extra: &[(String, Tensor<f32>)]) -> Result<Self> {
        let mut adam = Self::new(params);
        adam.step = step;
        for (name, t) in extra {
            let (slot, pname) = match (name.strip_prefix("adam.m."), name.strip_prefix("adam.v.")) {
                (Some(p), _) => (&mut adam.m, p),
                (_, Some(p)) => (&mut adam.v, p),
                _ => continue,
            };
            let id = params
                .id(pname)
                .ok_or_else(|| Error::format("checkpoint", format!("optimizer state for unknown parameter {pname}")))?;
            if t.shape() != params.get(id).shape() {
                return Err(Error::format("checkpoint", format!("optimizer state {name} has shape {:?}", t.shape())));
            }
            slot[id] = t.clone();
        }
        Ok(adam)
    }
}

/// Summary of one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    /// 1-based index of the step just taken.
    pub step: usize,
    pub lr: f64,
    /// The optimized objective.
    pub loss: f64,
    pub gen_loss: Option<f64>,
    pub mlm_loss: Option<f64>,
    pub grad_norm: f64,
}

/// One generation example of a stage-2 batch.
#[derive(Debug, Clone, Copy)]
pub struct GenItem<'a> {
    /// Extended ids, used by the copy path.
    pub context: &'a [u32],
    pub target: &'a [u32],
    /// Corrupted context: feeds the MLM term and, if configured, the encoder.
    pub masked: Option<&'a MaskedBatch>,
}

struct Partial {
    grads: Vec<Option<Tensor<f32>>>,
    gen: f64,
    mlm: f64,
    clamped: usize,
}

/// Owns the model and optimizer for the length of a run.
pub struct Trainer {
    pub model: Model<f32>,
    pub opt: Adam,
    pub cfg: TrainConfig,
    /// Completed optimizer steps.
    pub step: usize,
    pub skipped_batches: usize,
    pub clamped: usize,
}

impl Trainer {
    pub fn new(model: Model<f32>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let opt = Adam::new(model.params());
        Ok(Self { model, opt, cfg, step: 0, skipped_batches: 0, clamped: 0 })
    }

    fn dropout_rng(&self, slot: usize) -> rand_chacha::ChaCha8Rng {
        keyed_rng(&[self.cfg.seed, DROPOUT_STREAM, self.step as u64, slot as u64])
    }

    /// Reconstruction loss averaged over the masked positions of the batch, then one update.
    ///
    /// A batch with no masked position is skipped and counted.
    pub fn stage1_step(&mut self, batch: &[MaskedBatch]) -> Result<Option<StepStats>> {
        let total: usize = batch.iter().map(MaskedBatch::num_masked).sum();
        if total == 0 {
            self.skipped_batches += 1;
            return Ok(None);
        }
        let norm = 1.0 / total as f64;
        let parts: Vec<Result<Partial>> = batch
            .par_iter()
            .enumerate()
            .map(|(slot, m)| {
                if m.num_masked() == 0 {
                    return Ok(Partial { grads: Vec::new(), gen: 0.0, mlm: 0.0, clamped: 0 });
                }
                let mut f = Forward::new(&self.model, true, Some(self.dropout_rng(slot)));
                let labels: Vec<usize> = m.mask_positions.iter().map(|&p| m.mlm_labels[p].unwrap() as usize).collect();
                let nll = f.mlm_nll(&m.input_ids, &m.mask_positions, &labels)?;
                let sum = f.graph.sum(nll);
                let loss = f.graph.scale(sum, norm as f32);
                f.graph.backward(loss)?;
                Ok(Partial { grads: f.gradients(), gen: 0.0, mlm: f.graph.value(sum).item() as f64, clamped: 0 })
            })
            .collect();
        let (grads, _, mlm, _) = self.reduce(parts)?;
        let mlm = mlm * norm;
        Ok(Some(self.apply(grads, mlm, None, Some(mlm))))
    }

    /// Mean token NLL of the batch plus `stage2_mlm_weight` times the MLM loss, then one update.
    pub fn stage2_step(&mut self, batch: &[GenItem<'_>], use_pointer: bool) -> Result<StepStats> {
        let weight = self.cfg.stage2_mlm_weight;
        let masked_input = self.cfg.stage2_masked_context;
        let n_gen: usize = batch.iter().map(|b| b.target.len()).sum();
        let n_mlm: usize = batch.iter().filter_map(|b| b.masked).map(MaskedBatch::num_masked).sum();
        if n_gen == 0 {
            return Err(Error::Empty("stage-2 batch"));
        }
        let with_mlm = weight > 0.0 && n_mlm > 0;
        let vocab = self.model.config.vocab_size;
        let parts: Vec<Result<Partial>> = batch
            .par_iter()
            .enumerate()
            .map(|(slot, item)| {
                let mut f = Forward::new(&self.model, true, Some(self.dropout_rng(slot)));
                let enc_input = match (masked_input, item.masked) {
                    (true, Some(m)) => m.input_ids.clone(),
                    _ => to_base(item.context, vocab),
                };
                let memory = f.encoder(&enc_input)?;
                let nll = f.generation_nll(item.context, item.target, use_pointer, memory)?;
                let gen_sum = f.graph.sum(nll);
                let mut loss = f.graph.scale(gen_sum, (1.0 / n_gen as f64) as f32);
                let mut mlm = 0.0;
                if let (true, Some(m)) = (with_mlm, item.masked.filter(|m| m.num_masked() > 0)) {
                    let labels: Vec<usize> =
                        m.mask_positions.iter().map(|&p| m.mlm_labels[p].unwrap() as usize).collect();
                    let states = if masked_input { memory } else { f.encoder(&m.input_ids)? };
                    let logits = f.mlm_logits(states, Some(&m.mask_positions))?;
                    let v = f.graph.cross_entropy(logits, &labels)?;
                    let s = f.graph.sum(v);
                    mlm = f.graph.value(s).item() as f64;
                    let term = f.graph.scale(s, (weight / n_mlm as f64) as f32);
                    loss = f.graph.add(loss, term)?;
                }
                f.graph.backward(loss)?;
                Ok(Partial {
                    grads: f.gradients(),
                    gen: f.graph.value(gen_sum).item() as f64,
                    mlm,
                    clamped: f.graph.clamped(),
                })
            })
            .collect();
        let (grads, gen, mlm, clamped) = self.reduce(parts)?;
        self.clamped += clamped;
        let gen = gen / n_gen as f64;
        let mlm = with_mlm.then(|| mlm / n_mlm as f64);
        let loss = gen + mlm.map_or(0.0, |m| weight * m);
        Ok(self.apply(grads, loss, Some(gen), mlm))
    }

    /// Sums per-example gradients in batch order.
    fn reduce(&self, parts: Vec<Result<Partial>>) -> Result<(Vec<Tensor<f32>>, f64, f64, usize)> {
        let mut total: Vec<Tensor<f32>> = self.model.params().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        let (mut gen, mut mlm, mut clamped) = (0.0, 0.0, 0);
        for p in parts {
            let p = p?;
            for (acc, g) in total.iter_mut().zip(p.grads) {
                if let Some(g) = g {
                    acc.add_assign(&g);
                }
            }
            gen += p.gen;
            mlm += p.mlm;
            clamped += p.clamped;
        }
        Ok((total, gen, mlm, clamped))
    }

    fn apply(&mut self, mut grads: Vec<Tensor<f32>>, loss: f64, gen: Option<f64>, mlm: Option<f64>) -> StepStats {
        let norm = grads.iter().map(Tensor::sum_sq).sum::<f64>().sqrt();
        if self.cfg.clip_norm > 0.0 && norm > self.cfg.clip_norm {
            let c = (self.cfg.clip_norm / norm) as f32;
            grads.iter_mut().for_each(|g| g.scale_assign(c));
        }
        self.step += 1;
        let lr = lr_schedule(self.step, &self.cfg);
        self.opt.update(self.model.params_mut(), &grads, lr);
        StepStats { step: self.step, lr, loss, gen_loss: gen, mlm_loss: mlm, grad_norm: norm }
    }

    /// Model, optimizer moments and loop position.
    pub fn checkpoint(&self) -> Checkpoint {
        let meta = vec![
            ("train.step".to_string(), self.step.to_string()),
            ("train.seed".to_string(), self.cfg.seed.to_string()),
            ("train.skipped".to_string(), self.skipped_batches.to_string()),
            ("train.clamped".to_string(), self.clamped.to_string()),
        ];
        self.model.to_checkpoint(&meta, self.opt.tensors(self.model.params()))
    }

    /// Continues a run saved by [`Trainer::checkpoint`] under the same seed.
    pub fn resume(ck: Checkpoint, cfg: TrainConfig) -> Result<Self> {
        let (model, meta, extra) = Model::<f32>::from_checkpoint(ck)?;
        let get = |k: &str| -> Result<u64> {
            let v = meta.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str()).unwrap_or("0");
            v.parse().map_err(|_| Error::format("checkpoint", format!("{k}={v:?}")))
        };
        let seed = get("train.seed")?;
        if seed != cfg.seed {
            return Err(Error::config("seed", format!("checkpoint was trained with seed {seed}, got {}", cfg.seed)));
        }
        let step = get("train.step")? as usize;
        let opt = Adam::from_tensors(model.params(), step as u64, &extra)?;
        let mut t = Self::new(model, cfg)?;
        t.opt = opt;
        t.step = step;
        t.skipped_batches = get("train.skipped")? as usize;
        t.clamped = get("train.clamped")? as usize;
        Ok(t)
    }

    /// Example indices of batch `step` (0-based): epochs are independent keyed shuffles.
    pub fn batch_indices(&self, n: usize, step: usize, stream: u64) -> Vec<usize> {
        let b = self.cfg.batch_size;
        let mut cache: Option<(usize, Vec<usize>)> = None;
        (step * b..(step + 1) * b)
            .map(|g| {
                let epoch = g / n;
                if cache.as_ref().map(|c| c.0) != Some(epoch) {
                    let mut perm: Vec<usize> = (0..n).collect();
                    perm.shuffle(&mut keyed_rng(&[self.cfg.seed, ORDER_STREAM, stream, epoch as u64]));
                    cache = Some((epoch, perm));
                }
                cache.as_ref().unwrap().1[g % n]
            })
            .collect()
    }

    fn mask_for(&self, context: &[u32], slot: usize) -> MaskedBatch {
        let seed = self.cfg.seed;
        let mut rng = keyed_rng(&[seed, MASK_STREAM, self.step as u64, slot as u64]);
        let vocab = self.model.config.vocab_size;
        mask_with_rng(&to_base(context, vocab), vocab, &self.cfg.mask, seed, &mut rng)
    }

    /// Runs pre-training steps until `until` (capped at `total_steps`) has been reached.
    ///
    /// Steps before the stage split train the MLM head only; the rest train
    /// generation. `on_step` sees every completed step.
    pub fn pretrain(
        &mut self,
        pairs: &[Pair],
        until: usize,
        mut on_step: impl FnMut(&Trainer, &StepStats) -> Result<()>,
    ) -> Result<()> {
        if pairs.is_empty() {
            return Err(Error::Empty("pair file"));
        }
        let until = until.min(self.cfg.total_steps);
        let stage1 = self.cfg.stage1();
        let use_pointer = self.cfg.ablation.use_pointer();
        while self.step < until {
            let idx = self.batch_indices(pairs.len(), self.step, 0);
            let masked: Vec<MaskedBatch> =
                idx.iter().enumerate().map(|(slot, &i)| self.mask_for(&pairs[i].context, slot)).collect();
            let stats = if self.step < stage1 {
                match self.stage1_step(&masked)? {
                    Some(s) => s,
                    None => {
                        self.step += 1;
                        continue;
                    }
                }
            } else {
                let items: Vec<GenItem> = idx
                    .iter()
                    .zip(&masked)
                    .map(|(&i, m)| GenItem { context: &pairs[i].context, target: &pairs[i].target, masked: Some(m) })
                    .collect();
                self.stage2_step(&items, use_pointer)?
            };
            on_step(self, &stats)?;
        }
        Ok(())
    }

    /// Generation-only training on labelled examples.
    pub fn finetune(
        &mut self,
        examples: &[Example],
        mut on_step: impl FnMut(&Trainer, &StepStats) -> Result<()>,
    ) -> Result<()> {
        if examples.is_empty() {
            return Err(Error::Empty("fine-tuning set"));
        }
        let use_pointer = self.cfg.ablation.use_pointer();
        while self.step < self.cfg.total_steps {
            let idx = self.batch_indices(examples.len(), self.step, 1);
            let items: Vec<GenItem> = idx
                .iter()
                .map(|&i| GenItem { context: &examples[i].context, target: &examples[i].target, masked: None })
                .collect();
            let stats = self.stage2_step(&items, use_pointer)?;
            on_step(self, &stats)?;
        }
        Ok(())
    }
}

/// Applies the post-training part of an ablation: without autoregressive
/// pre-training the decoder side is redrawn from its initializer.
pub fn finish_pretraining(model: &mut Model<f32>, cfg: &TrainConfig) {
    if cfg.ablation.no_autoregression {
        model.reinit(DECODER_PREFIXES, cfg.seed ^ REINIT_STREAM);
    }
}
