//! End-to-end runs: data preparation, pre-training, fine-tuning and the
//! ablation arms, shared by the command line and the acceptance suite.

use std::fs;
use std::path::Path;

use crate::config::{Ablation, RunConfig};
use crate::corpus::{corpus_fragments, read_corpus, shuffle_pairs, Pair};
use crate::dataset::{parse_supervised, Example};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::model::Model;
use crate::tokenizer::Vocab;
use crate::toy;
use crate::training::{finish_pretraining, StepStats, Trainer};

/// Progress callback: completed step and its statistics.
pub type OnStep<'a> = &'a mut dyn FnMut(&Trainer, &StepStats) -> Result<()>;

/// Raw text inputs of an experiment.
#[derive(Debug, Clone)]
pub struct RawData {
    pub corpus: String,
    pub train: String,
    pub test: String,
}

impl RawData {
    /// Reads the configured files; any empty path is replaced by generated toy data.
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let d = &cfg.data;
        let read = |p: &str| fs::read_to_string(p).map_err(Error::at_path(p));
        Ok(Self {
            corpus: match d.corpus_path.as_str() {
                "" => toy::corpus(d.data_seed, d.toy_corpus_bytes),
                p => read_corpus(Path::new(p))?,
            },
            train: match d.train_path.as_str() {
                "" => toy::qa_set(d.data_seed.wrapping_add(1), d.toy_train_pairs),
                p => read(p)?,
            },
            test: match d.test_path.as_str() {
                "" => toy::qa_set(d.data_seed.wrapping_add(2), d.toy_test_pairs),
                p => read(p)?,
            },
        })
    }
}

/// Tokenized inputs shared by every arm.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub vocab: Vocab,
    pub pairs: Vec<Pair>,
    /// Pre-training pairs withheld from training.
    pub heldout: Vec<Pair>,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

impl Prepared {
    pub fn new(raw: &RawData, cfg: &RunConfig) -> Result<Self> {
        let vocab = Vocab::build(&raw.corpus, cfg.vocab_target)?;
        Self::with_vocab(raw, cfg, vocab)
    }

    /// Fragments in a shuffle keyed by the data seed; the last `heldout_pairs`
    /// are withheld.
    pub fn with_vocab(raw: &RawData, cfg: &RunConfig, vocab: Vocab) -> Result<Self> {
        let mut pairs: Vec<Pair> = corpus_fragments(&raw.corpus, &vocab, &cfg.fragments()).iter().map(Pair::from).collect();
        shuffle_pairs(&mut pairs, cfg.data.data_seed);
        let k = cfg.data.heldout_pairs.min(pairs.len() / 2);
        let heldout = pairs.split_off(pairs.len() - k);
        if pairs.is_empty() {
            return Err(Error::Empty("corpus fragments"));
        }
        let (mc, mt) = (cfg.model.max_context, cfg.model.max_target);
        let train = parse_supervised(&raw.train, &vocab, mc, mt)?;
        let test = parse_supervised(&raw.test, &vocab, mc, mt)?;
        Ok(Self { vocab, pairs, heldout, train, test })
    }

    pub fn heldout_examples(&self) -> Vec<Example> {
        self.heldout.iter().map(Example::from).collect()
    }
}

/// The model after pre-training under `cfg.train`, including the ablation's
/// post-processing. With `no_pretraining` this is the fresh initialization.
pub fn pretrain(cfg: &RunConfig, pairs: &[Pair], on_step: OnStep<'_>) -> Result<Model<f32>> {
    let model = Model::new(cfg.model.clone(), cfg.train.seed)?;
    if cfg.train.ablation.no_pretraining {
        return Ok(model);
    }
    let mut t = Trainer::new(model, cfg.train.clone())?;
    t.pretrain(pairs, cfg.train.total_steps, |t, s| on_step(t, s))?;
    let mut model = t.model;
    finish_pretraining(&mut model, &cfg.train);
    Ok(model)
}

pub fn finetune(model: Model<f32>, cfg: &RunConfig, examples: &[Example], on_step: OnStep<'_>) -> Result<Model<f32>> {
    let mut t = Trainer::new(model, cfg.finetune_train())?;
    t.finetune(examples, |t, s| on_step(t, s))?;
    Ok(t.model)
}

/// One row of the ablation table.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmRow {
    pub arm: String,
    pub seed: u64,
    pub report: EvalReport,
}

pub const ROW_HEADER: &str = "arm\tseed\tperplexity\trouge1_f\trouge2_f\trougeL_f";

impl ArmRow {
    pub fn render(&self) -> String {
        let r = &self.report;
        format!(
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.arm, self.seed, r.perplexity, r.rouge1.f, r.rouge2.f, r.rouge_l.f
        )
    }
}

/// The configuration of one arm: the base config with that arm's switches.
pub fn arm_config(cfg: &RunConfig, arm: &str) -> Result<RunConfig> {
    let mut c = cfg.clone();
    c.train.ablation = Ablation::arm(arm)?;
    Ok(c)
}

/// Pre-train (or not), fine-tune and evaluate one arm on the held-out set.
pub fn run_arm(cfg: &RunConfig, arm: &str, data: &Prepared, on_step: OnStep<'_>) -> Result<ArmRow> {
    let mut c = arm_config(cfg, arm)?;
    c.model.vocab_size = data.vocab.len();
    let model = pretrain(&c, &data.pairs, on_step)?;
    finish_arm(cfg, arm, model, data, on_step)
}

/// Fine-tunes and evaluates an arm whose pre-trained model is already at hand.
pub fn finish_arm(cfg: &RunConfig, arm: &str, model: Model<f32>, data: &Prepared, on_step: OnStep<'_>) -> Result<ArmRow> {
    let c = arm_config(cfg, arm)?;
    let model = finetune(model, &c, &data.train, on_step)?;
    let report = evaluate(&model, &data.vocab, &data.test, &c.decode, c.train.ablation.use_pointer())?;
    Ok(ArmRow { arm: arm.to_string(), seed: c.train.seed, report })
}
