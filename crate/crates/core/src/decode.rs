//! Beam search over the extended vocabulary.

use std::cmp::Ordering;

use crate::config::DecodeConfig;
use crate::error::{Error, Result};
use crate::model::{to_base, EncoderOutput, Model};
use crate::scalar::Scalar;
use crate::tokenizer::{BOS, EOS};

/// Next-token log-probabilities given a prefix that starts with `[BOS]`.
pub trait StepScorer {
    fn log_probs(&self, prefix: &[u32]) -> Result<Vec<f64>>;

    /// Longest generated length the scorer supports.
    fn max_len(&self) -> usize {
        usize::MAX
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// `[BOS]` followed by the generated extended ids.
    pub ids: Vec<u32>,
    pub logp: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Generated ids without `[BOS]`.
    pub fn tokens(&self) -> &[u32] {
        &self.ids[1..]
    }

    pub fn score(&self, length_norm: bool) -> f64 {
        let n = self.tokens().len().max(1);
        if length_norm {
            self.logp / n as f64
        } else {
            self.logp
        }
    }
}

/// Best first; equal scores prefer the smaller id sequence, then the shorter one.
pub fn rank(a: &Hypothesis, b: &Hypothesis, length_norm: bool) -> Ordering {
    b.score(length_norm).total_cmp(&a.score(length_norm)).then_with(|| a.ids.cmp(&b.ids))
}

/// Step-wise argmax, ties to the smaller id.
pub fn greedy(scorer: &impl StepScorer, max_len: usize) -> Result<Hypothesis> {
    let max_len = max_len.min(scorer.max_len());
    let mut h = Hypothesis { ids: vec![BOS], logp: 0.0, finished: false };
    while h.tokens().len() < max_len {
        let lp = scorer.log_probs(&h.ids)?;
        let (y, l) = lp
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_finite())
            .fold(None, |best: Option<(usize, f64)>, (i, &l)| match best {
                Some((_, b)) if b >= l => best,
                _ => Some((i, l)),
            })
            .ok_or(Error::Empty("step distribution"))?;
        h.ids.push(y as u32);
        h.logp += l;
        if y as u32 == EOS {
            h.finished = true;
            break;
        }
    }
    Ok(h)
}

/// Beam search returning every completed hypothesis, best first.
///
/// Each step keeps the `beam` highest-probability extensions of the live
/// hypotheses; those ending in `[EOS]` retire, the rest continue until
/// `max_len`. The greedy path is always among the candidates, so the best
/// result never scores below greedy decoding.
pub fn beam_search(scorer: &impl StepScorer, cfg: &DecodeConfig) -> Result<Vec<Hypothesis>> {
    if cfg.beam == 0 {
        return Err(Error::config("beam", "must be positive"));
    }
    let max_len = cfg.max_len.min(scorer.max_len());
    let mut live = vec![Hypothesis { ids: vec![BOS], logp: 0.0, finished: false }];
    let mut done = Vec::new();
    for _ in 0..max_len {
        let mut cands = Vec::new();
        for h in &live {
            for (y, l) in scorer.log_probs(&h.ids)?.into_iter().enumerate() {
                if !l.is_finite() {
                    continue;
                }
                let mut ids = h.ids.clone();
                ids.push(y as u32);
                cands.push(Hypothesis { ids, logp: h.logp + l, finished: y as u32 == EOS });
            }
        }
        cands.sort_by(|a, b| b.logp.total_cmp(&a.logp).then_with(|| a.ids.cmp(&b.ids)));
        cands.truncate(cfg.beam);
        let (fin, cont): (Vec<_>, Vec<_>) = cands.into_iter().partition(|h| h.finished);
        done.extend(fin);
        live = cont;
        if live.is_empty() {
            break;
        }
    }
    done.extend(live);
    if cfg.beam > 1 {
        done.push(greedy(scorer, max_len)?);
    }
    done.sort_by(|a, b| rank(a, b, cfg.length_norm));
    done.dedup_by(|a, b| a.ids == b.ids);
    if done.is_empty() {
        return Err(Error::Empty("beam"));
    }
    Ok(done)
}

/// Scores continuations of one context with a trained model.
pub struct ModelScorer<'a, T: Scalar> {
    model: &'a Model<T>,
    enc: EncoderOutput<T>,
    context: &'a [u32],
    ext_size: usize,
    use_pointer: bool,
}

impl<'a, T: Scalar> ModelScorer<'a, T> {
    /// `context` holds extended ids; `ext_size` covers every one of them.
    pub fn new(model: &'a Model<T>, context: &'a [u32], ext_size: usize, use_pointer: bool) -> Result<Self> {
        if let Some(&bad) = context.iter().find(|&&c| c as usize >= ext_size) {
            return Err(Error::IdOutOfRange { id: bad, size: ext_size });
        }
        let enc = model.encode_states(&to_base(context, model.config.vocab_size))?;
        Ok(Self { model, enc, context, ext_size, use_pointer })
    }
}

impl<T: Scalar> StepScorer for ModelScorer<'_, T> {
    fn log_probs(&self, prefix: &[u32]) -> Result<Vec<f64>> {
        let d = self.model.step_distribution(prefix, &self.enc, self.context, self.ext_size, self.use_pointer)?;
        Ok(d.p_final.iter().map(|p| p.as_f64().ln()).collect())
    }

    fn max_len(&self) -> usize {
        self.model.config.max_target
    }
}
