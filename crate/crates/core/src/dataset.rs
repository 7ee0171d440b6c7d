//! Examples in the extended id space, from pair files or supervised text.

use std::fs;
use std::path::Path;

use crate::corpus::Pair;
use crate::error::{Error, Result};
use crate::tokenizer::{decode, ExtendedVocab, IdSpace, Vocab, EOS};

/// One `(context, target)` example. Ids at or above the base size refer to `extra`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub context: Vec<u32>,
    pub target: Vec<u32>,
    /// Surfaces of the extra ids `V, V+1, ...`.
    pub extra: Vec<String>,
    /// Reference text for metrics; empty for pre-training pairs.
    pub reference: String,
}

impl From<&Pair> for Example {
    fn from(p: &Pair) -> Self {
        Self { context: p.context.clone(), target: p.target.clone(), extra: Vec::new(), reference: String::new() }
    }
}

/// A vocabulary plus one example's extra pieces.
pub struct ExampleSpace<'a> {
    pub vocab: &'a Vocab,
    pub extra: &'a [String],
}

impl IdSpace for ExampleSpace<'_> {
    fn size(&self) -> usize {
        self.vocab.len() + self.extra.len()
    }

    fn surface(&self, id: u32) -> Option<&str> {
        let v = self.vocab.len();
        if (id as usize) < v {
            self.vocab.token(id)
        } else {
            self.extra.get(id as usize - v).map(String::as_str)
        }
    }
}

impl Example {
    pub fn ext_size(&self, vocab_size: usize) -> usize {
        vocab_size + self.extra.len()
    }

    /// Renders extended ids (a trailing `[EOS]` is dropped).
    pub fn render(&self, ids: &[u32], vocab: &Vocab) -> Result<String> {
        let ids = match ids.last() {
            Some(&EOS) => &ids[..ids.len() - 1],
            _ => ids,
        };
        decode(ids, &ExampleSpace { vocab, extra: &self.extra })
    }

    /// Tokenizes one supervised example. The target gets a closing `[EOS]`.
    ///
    /// With a question, the passage is cut from its end so the question always
    /// stays at the end of the context; otherwise the source keeps its head.
    pub fn supervised(
        passage: &str,
        question: Option<&str>,
        target: &str,
        vocab: &Vocab,
        max_context: usize,
        max_target: usize,
    ) -> Result<Self> {
        let mut pieces = vocab.tokenize(passage);
        if let Some(q) = question {
            let q = vocab.tokenize(q);
            if q.len() >= max_context {
                return Err(Error::TooLong { what: "question", len: q.len(), max: max_context - 1 });
            }
            pieces.truncate(max_context - q.len());
            pieces.extend(q);
        } else {
            pieces.truncate(max_context);
        }
        if pieces.is_empty() {
            return Err(Error::Empty("source"));
        }
        let ext = ExtendedVocab::new(vocab, &pieces);
        let mut tgt = ext.map_target(&vocab.tokenize(target));
        tgt.truncate(max_target.saturating_sub(1));
        tgt.push(EOS);
        Ok(Self {
            context: ext.context_ids().to_vec(),
            target: tgt,
            extra: ext.extra().to_vec(),
            reference: target.trim().to_string(),
        })
    }
}

/// Parses `source<TAB>target` or `passage<TAB>question<TAB>target` lines.
///
/// Blank lines and lines starting with `#` are skipped.
pub fn parse_supervised(text: &str, vocab: &Vocab, max_context: usize, max_target: usize) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = |detail: String| Error::Record { what: "supervised file", index: n as u64 + 1, detail };
        let ex = match cols.as_slice() {
            [src, tgt] => Example::supervised(src, None, tgt, vocab, max_context, max_target),
            [p, q, tgt] => Example::supervised(p, Some(q), tgt, vocab, max_context, max_target),
            _ => return Err(bad(format!("expected 2 or 3 tab-separated columns, found {}", cols.len()))),
        };
        out.push(ex.map_err(|e| bad(e.to_string()))?);
    }
    if out.is_empty() {
        return Err(Error::Empty("supervised file"));
    }
    Ok(out)
}

pub fn load_supervised(path: impl AsRef<Path>, vocab: &Vocab, max_context: usize, max_target: usize) -> Result<Vec<Example>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(Error::at_path(path))?;
    parse_supervised(&text, vocab, max_context, max_target)
}
