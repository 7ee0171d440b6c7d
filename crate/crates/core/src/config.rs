//! Every tunable of a run, addressable as flat `key=value` entries.

use crate::corpus::{FragmentConfig, MaskConfig};
use crate::error::{Error, Result};
use crate::kv::{self, Entries};
use crate::model::ModelConfig;

/// Which parts of the method are switched off.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Ablation {
    pub no_pointer: bool,
    pub no_autoencoding: bool,
    pub no_autoregression: bool,
    pub no_pretraining: bool,
}

impl Ablation {
    pub const ARMS: [&'static str; 5] = ["full", "no_pointer", "no_autoencoding", "no_autoregression", "no_pretraining"];

    pub fn arm(name: &str) -> Result<Self> {
        let mut a = Self::default();
        match name {
            "full" => {}
            "no_pointer" => a.no_pointer = true,
            "no_autoencoding" => a.no_autoencoding = true,
            "no_autoregression" => a.no_autoregression = true,
            "no_pretraining" => a.no_pretraining = true,
            other => return Err(Error::config("arm", format!("unknown arm {other:?}"))),
        }
        Ok(a)
    }

    pub fn use_pointer(&self) -> bool {
        !self.no_pointer
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub batch_size: usize,
    /// Defaults to a tenth of `total_steps` when unset.
    pub stage1_steps: Option<usize>,
    pub stage2_mlm_weight: f64,
    pub stage2_masked_context: bool,
    pub seed: u64,
    pub clip_norm: f64,
    pub checkpoint_every: usize,
    pub mask: MaskConfig,
    pub ablation: Ablation,
}

impl TrainConfig {
    pub fn base() -> Self {
        Self {
            lr: 1e-5,
            warmup_steps: 10_000,
            total_steps: 800_000,
            batch_size: 64,
            stage1_steps: None,
            stage2_mlm_weight: 0.0,
            stage2_masked_context: false,
            seed: 0,
            clip_norm: 1.0,
            checkpoint_every: 0,
            mask: MaskConfig::default(),
            ablation: Ablation::default(),
        }
    }

    pub fn desk() -> Self {
        Self { lr: 1e-3, warmup_steps: 100, total_steps: 2000, batch_size: 8, ..Self::base() }
    }

    /// Steps of reconstruction-only training before generation starts.
    pub fn stage1(&self) -> usize {
        if self.ablation.no_autoencoding {
            return 0;
        }
        self.stage1_steps.unwrap_or(self.total_steps / 10).min(self.total_steps)
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps > self.total_steps {
            return Err(Error::config("warmup_steps", format!("{} > total_steps {}", self.warmup_steps, self.total_steps)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        for (k, v) in [("lr", self.lr), ("stage2_mlm_weight", self.stage2_mlm_weight), ("clip_norm", self.clip_norm)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(k, "must be finite and >= 0"));
            }
        }
        let m = &self.mask;
        for (k, v) in [("mask_rate", m.rate), ("mask_prob", m.mask_prob), ("random_prob", m.random_prob), ("keep_prob", m.keep_prob)]
        {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(k, "must be in [0, 1]"));
            }
        }
        if m.mask_prob + m.random_prob + m.keep_prob <= 0.0 {
            return Err(Error::config("mask_prob", "replacement odds sum to zero"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub lr: f64,
    pub warmup_steps: usize,
    pub steps: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    pub beam: usize,
    pub max_len: usize,
    pub length_norm: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { beam: 5, max_len: 100, length_norm: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub finetune: FinetuneConfig,
    pub decode: DecodeConfig,
    pub fragment_max_len: usize,
    pub vocab_target: usize,
    pub data: DataConfig,
}

/// Inputs of an ablation run. Empty paths fall back to generated toy data.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub corpus_path: String,
    pub train_path: String,
    pub test_path: String,
    pub data_seed: u64,
    pub toy_corpus_bytes: usize,
    pub toy_train_pairs: usize,
    pub toy_test_pairs: usize,
    /// Pre-training pairs held out for continuation perplexity.
    pub heldout_pairs: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            corpus_path: String::new(),
            train_path: String::new(),
            test_path: String::new(),
            data_seed: 0,
            toy_corpus_bytes: 1_000_000,
            toy_train_pairs: 64,
            toy_test_pairs: 32,
            heldout_pairs: 200,
        }
    }
}

impl RunConfig {
    pub fn base() -> Self {
        Self {
            model: ModelConfig::base(0),
            train: TrainConfig::base(),
            finetune: FinetuneConfig { lr: 1e-5, warmup_steps: 1000, steps: 10_000, batch_size: 64 },
            decode: DecodeConfig::default(),
            fragment_max_len: 500,
            vocab_target: 30_000,
            data: DataConfig::default(),
        }
    }

    pub fn desk() -> Self {
        Self {
            model: ModelConfig::desk(0),
            train: TrainConfig::desk(),
            finetune: FinetuneConfig { lr: 1e-3, warmup_steps: 30, steps: 300, batch_size: 8 },
            decode: DecodeConfig { max_len: 40, ..DecodeConfig::default() },
            fragment_max_len: 64,
            vocab_target: 1024,
            data: DataConfig::default(),
        }
    }

    /// Preset named by a `preset` entry (default `desk`), then every other entry on top.
    pub fn from_entries(pairs: Vec<(String, String)>) -> Result<Self> {
        let mut e = Entries::new(pairs);
        let mut cfg = match e.take_opt("preset").as_deref() {
            None | Some("desk") => Self::desk(),
            Some("base") => Self::base(),
            Some(other) => return Err(Error::config("preset", format!("unknown preset {other:?}"))),
        };
        cfg.apply(&mut e)?;
        e.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_entries(kv::parse(text)?)
    }

    fn apply(&mut self, e: &mut Entries) -> Result<()> {
        self.model.take_from(e)?;
        let t = &mut self.train;
        e.take("lr", &mut t.lr)?;
        e.take("warmup_steps", &mut t.warmup_steps)?;
        e.take("total_steps", &mut t.total_steps)?;
        e.take("batch_size", &mut t.batch_size)?;
        if let Some(v) = e.take_opt("stage1_steps") {
            t.stage1_steps = match v.as_str() {
                "auto" => None,
                _ => Some(v.parse().map_err(|_| Error::config("stage1_steps", format!("cannot parse {v:?}")))?),
            };
        }
        e.take("stage2_mlm_weight", &mut t.stage2_mlm_weight)?;
        e.take("stage2_masked_context", &mut t.stage2_masked_context)?;
        e.take("seed", &mut t.seed)?;
        e.take("clip_norm", &mut t.clip_norm)?;
        e.take("checkpoint_every", &mut t.checkpoint_every)?;
        e.take("mask_rate", &mut t.mask.rate)?;
        e.take("mask_prob", &mut t.mask.mask_prob)?;
        e.take("random_prob", &mut t.mask.random_prob)?;
        e.take("keep_prob", &mut t.mask.keep_prob)?;
        e.take("no_pointer", &mut t.ablation.no_pointer)?;
        e.take("no_autoencoding", &mut t.ablation.no_autoencoding)?;
        e.take("no_autoregression", &mut t.ablation.no_autoregression)?;
        e.take("no_pretraining", &mut t.ablation.no_pretraining)?;
        let f = &mut self.finetune;
        e.take("finetune_lr", &mut f.lr)?;
        e.take("finetune_warmup_steps", &mut f.warmup_steps)?;
        e.take("finetune_steps", &mut f.steps)?;
        e.take("finetune_batch_size", &mut f.batch_size)?;
        let d = &mut self.decode;
        e.take("beam", &mut d.beam)?;
        e.take("gen_max_len", &mut d.max_len)?;
        e.take("length_norm", &mut d.length_norm)?;
        e.take("fragment_max_len", &mut self.fragment_max_len)?;
        e.take("vocab_target", &mut self.vocab_target)?;
        let d = &mut self.data;
        e.take("corpus_path", &mut d.corpus_path)?;
        e.take("train_path", &mut d.train_path)?;
        e.take("test_path", &mut d.test_path)?;
        e.take("data_seed", &mut d.data_seed)?;
        e.take("toy_corpus_bytes", &mut d.toy_corpus_bytes)?;
        e.take("toy_train_pairs", &mut d.toy_train_pairs)?;
        e.take("toy_test_pairs", &mut d.toy_test_pairs)?;
        e.take("heldout_pairs", &mut d.heldout_pairs)?;
        Ok(())
    }

    /// Applies `key=value` overrides on top of the current values.
    pub fn with_overrides(&self, pairs: Vec<(String, String)>) -> Result<Self> {
        let mut all = self.entries();
        all.extend(pairs);
        let mut e = Entries::new(all);
        let mut cfg = self.clone();
        cfg.apply(&mut e)?;
        e.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.decode.beam == 0 {
            return Err(Error::config("beam", "must be positive"));
        }
        if self.finetune.batch_size == 0 {
            return Err(Error::config("finetune_batch_size", "must be positive"));
        }
        if self.finetune.warmup_steps > self.finetune.steps {
            return Err(Error::config("finetune_warmup_steps", "exceeds finetune_steps"));
        }
        if self.fragment_max_len < 2 {
            return Err(Error::config("fragment_max_len", "must be at least 2"));
        }
        Ok(())
    }

    /// Fine-tuning seen as a generation-only training run.
    pub fn finetune_train(&self) -> TrainConfig {
        let f = &self.finetune;
        TrainConfig {
            lr: f.lr,
            warmup_steps: f.warmup_steps,
            total_steps: f.steps,
            batch_size: f.batch_size,
            stage1_steps: Some(0),
            stage2_mlm_weight: 0.0,
            stage2_masked_context: false,
            ..self.train.clone()
        }
    }

    pub fn fragments(&self) -> FragmentConfig {
        FragmentConfig {
            max_len: self.fragment_max_len,
            max_context: self.model.max_context.min(crate::corpus::MAX_CONTEXT_LEN),
            max_target: self.model.max_target.min(crate::corpus::MAX_TARGET_LEN),
        }
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        let t = &self.train;
        let f = &self.finetune;
        let d = &self.decode;
        let mut out: Vec<(String, String)> =
            self.model.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let rest: Vec<(&str, String)> = vec![
            ("lr", t.lr.to_string()),
            ("warmup_steps", t.warmup_steps.to_string()),
            ("total_steps", t.total_steps.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("stage1_steps", t.stage1_steps.map_or("auto".to_string(), |s| s.to_string())),
            ("stage2_mlm_weight", t.stage2_mlm_weight.to_string()),
            ("stage2_masked_context", t.stage2_masked_context.to_string()),
            ("seed", t.seed.to_string()),
            ("clip_norm", t.clip_norm.to_string()),
            ("checkpoint_every", t.checkpoint_every.to_string()),
            ("mask_rate", t.mask.rate.to_string()),
            ("mask_prob", t.mask.mask_prob.to_string()),
            ("random_prob", t.mask.random_prob.to_string()),
            ("keep_prob", t.mask.keep_prob.to_string()),
            ("no_pointer", t.ablation.no_pointer.to_string()),
            ("no_autoencoding", t.ablation.no_autoencoding.to_string()),
            ("no_autoregression", t.ablation.no_autoregression.to_string()),
            ("no_pretraining", t.ablation.no_pretraining.to_string()),
            ("finetune_lr", f.lr.to_string()),
            ("finetune_warmup_steps", f.warmup_steps.to_string()),
            ("finetune_steps", f.steps.to_string()),
            ("finetune_batch_size", f.batch_size.to_string()),
            ("beam", d.beam.to_string()),
            ("gen_max_len", d.max_len.to_string()),
            ("length_norm", d.length_norm.to_string()),
            ("fragment_max_len", self.fragment_max_len.to_string()),
            ("vocab_target", self.vocab_target.to_string()),
            ("corpus_path", self.data.corpus_path.clone()),
            ("train_path", self.data.train_path.clone()),
            ("test_path", self.data.test_path.clone()),
            ("data_seed", self.data.data_seed.to_string()),
            ("toy_corpus_bytes", self.data.toy_corpus_bytes.to_string()),
            ("toy_train_pairs", self.data.toy_train_pairs.to_string()),
            ("toy_test_pairs", self.data.toy_test_pairs.to_string()),
            ("heldout_pairs", self.data.heldout_pairs.to_string()),
        ];
        out.extend(rest.into_iter().map(|(k, v)| (k.to_string(), v)));
        out
    }

    pub fn render(&self) -> String {
        let e = self.entries();
        kv::render(&e.iter().map(|(k, v)| (k.as_str(), v.clone())).collect::<Vec<_>>())
    }
}
