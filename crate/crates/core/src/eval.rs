//! Perplexity, ROUGE and the evaluation report.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::config::DecodeConfig;
use crate::dataset::Example;
use crate::decode::{beam_search, ModelScorer};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::scalar::Scalar;
use crate::tokenizer::{basic_tokens, Vocab};

/// Precision, recall and F1.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Prf {
    pub p: f64,
    pub r: f64,
    pub f: f64,
}

impl Prf {
    fn new(hits: f64, cand: f64, reference: f64) -> Self {
        let p = if cand > 0.0 { hits / cand } else { 0.0 };
        let r = if reference > 0.0 { hits / reference } else { 0.0 };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        Self { p, r, f }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rouge {
    N(usize),
    L,
}

fn ngrams<S: AsRef<str>>(toks: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut m = HashMap::new();
    if n == 0 || toks.len() < n {
        return m;
    }
    for w in toks.windows(n) {
        *m.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
    }
    m
}

/// Longest common subsequence length.
pub fn lcs<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-N with clipped n-gram counts, or ROUGE-L from the LCS.
pub fn rouge<S: AsRef<str>>(candidate: &[S], reference: &[S], variant: Rouge) -> Prf {
    match variant {
        Rouge::L => {
            let hits = lcs(candidate, reference) as f64;
            Prf::new(hits, candidate.len() as f64, reference.len() as f64)
        }
        Rouge::N(n) => {
            let c = ngrams(candidate, n);
            let r = ngrams(reference, n);
            let hits: usize = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
            Prf::new(hits as f64, c.values().sum::<usize>() as f64, r.values().sum::<usize>() as f64)
        }
    }
}

/// Total teacher-forced NLL and token count.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NllTotal {
    pub nll: f64,
    pub tokens: usize,
    pub clamped: usize,
}

impl NllTotal {
    pub fn perplexity(&self) -> f64 {
        (self.nll / self.tokens as f64).exp()
    }
}

pub fn total_nll<T: Scalar>(model: &Model<T>, examples: &[Example], use_pointer: bool) -> Result<NllTotal> {
    if examples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let parts: Vec<Result<(f64, usize, usize)>> = examples
        .par_iter()
        .map(|ex| {
            let out = model.forward_loss(&ex.context, &ex.target, use_pointer, None)?;
            Ok((out.total_nll(), out.nll_per_token.len(), out.clamped))
        })
        .collect();
    let mut t = NllTotal::default();
    for p in parts {
        let (nll, n, c) = p?;
        t.nll += nll;
        t.tokens += n;
        t.clamped += c;
    }
    Ok(t)
}

/// `exp(total NLL / total target tokens)` under teacher forcing.
pub fn perplexity<T: Scalar>(model: &Model<T>, examples: &[Example], use_pointer: bool) -> Result<f64> {
    Ok(total_nll(model, examples, use_pointer)?.perplexity())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub reference: String,
    pub output: String,
    pub rouge_l: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub perplexity: f64,
    pub rouge1: Prf,
    pub rouge2: Prf,
    pub rouge_l: Prf,
    pub samples: Vec<Sample>,
}

/// Beam-decodes every example and averages ROUGE over them.
pub fn generate<T: Scalar>(
    model: &Model<T>,
    vocab: &Vocab,
    ex: &Example,
    cfg: &DecodeConfig,
    use_pointer: bool,
) -> Result<String> {
    let scorer = ModelScorer::new(model, &ex.context, ex.ext_size(vocab.len()), use_pointer)?;
    let best = beam_search(&scorer, cfg)?.swap_remove(0);
    ex.render(best.tokens(), vocab)
}

pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    vocab: &Vocab,
    examples: &[Example],
    cfg: &DecodeConfig,
    use_pointer: bool,
) -> Result<EvalReport> {
    let ppl = perplexity(model, examples, use_pointer)?;
    let outputs: Vec<Result<String>> =
        examples.par_iter().map(|ex| generate(model, vocab, ex, cfg, use_pointer)).collect();
    let mut sums = [Prf::default(); 3];
    let mut samples = Vec::with_capacity(examples.len());
    for (ex, out) in examples.iter().zip(outputs) {
        let out = out?;
        let (c, r) = (basic_tokens(&out), basic_tokens(&ex.reference));
        let scores = [rouge(&c, &r, Rouge::N(1)), rouge(&c, &r, Rouge::N(2)), rouge(&c, &r, Rouge::L)];
        for (s, x) in sums.iter_mut().zip(scores) {
            s.p += x.p;
            s.r += x.r;
            s.f += x.f;
        }
        samples.push(Sample { reference: ex.reference.clone(), output: out, rouge_l: scores[2].f });
    }
    let n = examples.len() as f64;
    let mean = |s: Prf| Prf { p: s.p / n, r: s.r / n, f: s.f / n };
    Ok(EvalReport { perplexity: ppl, rouge1: mean(sums[0]), rouge2: mean(sums[1]), rouge_l: mean(sums[2]), samples })
}

fn one_line(s: &str) -> String {
    s.replace(['\t', '\n'], " ")
}

impl EvalReport {
    /// `key=value` summary, a blank line, then a tab-separated per-example table.
    pub fn render(&self) -> String {
        let mut s = format!("examples={}\nperplexity={:.6}\n", self.samples.len(), self.perplexity);
        for (name, m) in [("rouge1", self.rouge1), ("rouge2", self.rouge2), ("rougeL", self.rouge_l)] {
            let _ = writeln!(s, "{name}_p={:.6}\n{name}_r={:.6}\n{name}_f={:.6}", m.p, m.r, m.f);
        }
        s.push_str("\nindex\trougeL_f\treference\toutput\n");
        for (i, x) in self.samples.iter().enumerate() {
            let _ = writeln!(s, "{i}\t{:.6}\t{}\t{}", x.rouge_l, one_line(&x.reference), one_line(&x.output));
        }
        s
    }
}
