//! Raw documents to pre-training pairs: sentence splitting, sliding-window
//! fragments with the 80/20 context/continuation split, context masking, and
//! the binary pair file.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::keyed_rng;
use crate::tokenizer::{Vocab, MASK, NUM_SPECIALS};

pub const MAX_FRAGMENT_LEN: usize = 500;
pub const MAX_CONTEXT_LEN: usize = 400;
pub const MAX_TARGET_LEN: usize = 100;

/// Tokens directly before a period that do not end a sentence.
pub const ABBREVIATIONS: &[&str] = &[
    "Mr", "Mrs", "Ms", "Dr", "Prof", "Sr", "Jr", "St", "Mt", "vs", "etc", "e.g", "i.e", "Inc", "Ltd",
    "Co", "Jan", "Feb", "Mar", "Apr", "Jun", "Jul", "Aug", "Sep", "Sept", "Oct", "Nov", "Dec", "No",
];

/// Byte ranges of the sentences of `document`, whitespace excluded.
///
/// A sentence ends at `.`, `!` or `?` followed by whitespace (or the end of the
/// text), unless the word ending in `.` is in [`ABBREVIATIONS`].
pub fn sentence_spans(document: &str) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    let mut chars = document.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if c.is_whitespace() {
            continue;
        }
        let s = *start.get_or_insert(i);
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let end = i + c.len_utf8();
        let at_break = chars.peek().is_none_or(|&(_, n)| n.is_whitespace());
        if !at_break || (c == '.' && is_abbreviation(&document[s..i])) {
            continue;
        }
        spans.push(s..end);
        start = None;
    }
    if let Some(s) = start {
        spans.push(s..document.trim_end().len());
    }
    spans
}

fn is_abbreviation(before: &str) -> bool {
    let word = before.rsplit(char::is_whitespace).next().unwrap_or("");
    let word = word.trim_start_matches(|c: char| !c.is_alphanumeric());
    ABBREVIATIONS.contains(&word)
}

pub fn split_sentences(document: &str) -> Vec<&str> {
    sentence_spans(document).into_iter().map(|r| &document[r]).collect()
}

/// Splits corpus text into documents at blank lines.
pub fn split_documents(text: &str) -> Vec<&str> {
    let mut docs = Vec::new();
    let mut start: Option<usize> = None;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if line.trim().is_empty() {
            if let Some(s) = start.take() {
                docs.push(text[s..offset].trim());
            }
        } else if start.is_none() {
            start = Some(offset);
        }
        offset += line.len();
    }
    if let Some(s) = start {
        docs.push(text[s..].trim());
    }
    docs
}

/// Lists corpus files: `path` itself if it is a file, else every regular file
/// below it in sorted order.
pub fn corpus_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(Error::at_path(&dir))? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    files.sort();
    Ok(files)
}

pub fn read_corpus(path: &Path) -> Result<String> {
    let mut text = String::new();
    for f in corpus_files(path)? {
        text.push_str(&fs::read_to_string(&f).map_err(Error::at_path(&f))?);
        text.push_str("\n\n");
    }
    Ok(text)
}

/// A contiguous `(context, continuation)` pair cut from one document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fragment {
    pub context_ids: Vec<u32>,
    pub target_ids: Vec<u32>,
    pub doc_id: usize,
    pub start_sentence: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FragmentConfig {
    pub max_len: usize,
    pub max_context: usize,
    pub max_target: usize,
}

impl Default for FragmentConfig {
    fn default() -> Self {
        Self { max_len: MAX_FRAGMENT_LEN, max_context: MAX_CONTEXT_LEN, max_target: MAX_TARGET_LEN }
    }
}

/// Context length for a fragment of `len` tokens: `min(max_context, round(0.8 len))`.
pub fn split_point(len: usize, max_context: usize) -> usize {
    // round(4L/5) in integers; 4L/5 never lands on .5
    ((8 * len + 5) / 10).min(max_context)
}

/// Sliding windows over tokenized sentences with a stride of one sentence.
///
/// Each window takes the longest run of whole sentences starting at `s` whose
/// total length stays within `cfg.max_len`; a first sentence longer than that is
/// cut to `cfg.max_len` tokens. Windows with an empty side are skipped.
pub fn make_fragments(sentences: &[Vec<u32>], doc_id: usize, cfg: &FragmentConfig) -> Vec<Fragment> {
    let mut out = Vec::new();
    for s in 0..sentences.len() {
        let mut span: Vec<u32> = Vec::new();
        for sent in &sentences[s..] {
            if span.len() + sent.len() > cfg.max_len {
                if span.is_empty() {
                    span.extend_from_slice(&sent[..cfg.max_len]);
                }
                break;
            }
            span.extend_from_slice(sent);
        }
        let m = split_point(span.len(), cfg.max_context);
        let n = (span.len() - m).min(cfg.max_target);
        if m == 0 || n == 0 {
            continue;
        }
        out.push(Fragment {
            context_ids: span[..m].to_vec(),
            target_ids: span[m..m + n].to_vec(),
            doc_id,
            start_sentence: s,
        });
    }
    out
}

/// Tokenizes and fragments every document of a corpus, in `(doc_id, start_sentence)` order.
pub fn corpus_fragments(text: &str, vocab: &Vocab, cfg: &FragmentConfig) -> Vec<Fragment> {
    split_documents(text)
        .into_iter()
        .enumerate()
        .flat_map(|(doc_id, doc)| {
            let sentences: Vec<Vec<u32>> = split_sentences(doc).into_iter().map(|s| vocab.encode(s)).collect();
            make_fragments(&sentences, doc_id, cfg)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskConfig {
    pub rate: f64,
    pub mask_prob: f64,
    pub random_prob: f64,
    pub keep_prob: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self { rate: 0.15, mask_prob: 0.8, random_prob: 0.1, keep_prob: 0.1 }
    }
}

/// Corrupted context plus reconstruction labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedBatch {
    pub input_ids: Vec<u32>,
    /// Original id at selected positions, `None` elsewhere.
    pub mlm_labels: Vec<Option<u32>>,
    pub mask_positions: Vec<usize>,
    pub seed: u64,
}

impl MaskedBatch {
    pub fn num_masked(&self) -> usize {
        self.mask_positions.len()
    }
}

/// Selects `ceil(rate * m)` positions without replacement; each becomes `[MASK]`,
/// a random non-special base id, or stays unchanged with the configured odds.
pub fn mask_context(context: &[u32], vocab_size: usize, cfg: &MaskConfig, seed: u64) -> MaskedBatch {
    let mut rng = keyed_rng(&[seed]);
    mask_with_rng(context, vocab_size, cfg, seed, &mut rng)
}

pub(crate) fn mask_with_rng(
    context: &[u32],
    vocab_size: usize,
    cfg: &MaskConfig,
    seed: u64,
    rng: &mut ChaCha8Rng,
) -> MaskedBatch {
    let m = context.len();
    let k = ((cfg.rate.clamp(0.0, 1.0) * m as f64) - 1e-9).ceil().max(0.0) as usize;
    let k = k.min(m);
    let mut positions = index::sample(rng, m, k).into_vec();
    positions.sort_unstable();

    let mut input_ids = context.to_vec();
    let mut mlm_labels = vec![None; m];
    let total = cfg.mask_prob + cfg.random_prob + cfg.keep_prob;
    let has_random = vocab_size > NUM_SPECIALS;
    for &p in &positions {
        mlm_labels[p] = Some(context[p]);
        let u: f64 = rng.gen::<f64>() * total;
        if u < cfg.mask_prob {
            input_ids[p] = MASK;
        } else if u < cfg.mask_prob + cfg.random_prob && has_random {
            input_ids[p] = rng.gen_range(NUM_SPECIALS as u32..vocab_size as u32);
        }
    }
    MaskedBatch { input_ids, mlm_labels, mask_positions: positions, seed }
}

/// Masking keyed by the fragment's origin.
pub fn mask_fragment(fragment: &Fragment, vocab_size: usize, cfg: &MaskConfig, seed: u64) -> MaskedBatch {
    let mut rng = keyed_rng(&[seed, fragment.doc_id as u64, fragment.start_sentence as u64]);
    mask_with_rng(&fragment.context_ids, vocab_size, cfg, seed, &mut rng)
}

const PAIR_MAGIC: &[u8; 4] = b"PLMF";
pub const PAIR_VERSION: u32 = 1;

/// A `(context, target)` id pair as stored in a pair file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pair {
    pub context: Vec<u32>,
    pub target: Vec<u32>,
}

impl From<&Fragment> for Pair {
    fn from(f: &Fragment) -> Self {
        Pair { context: f.context_ids.clone(), target: f.target_ids.clone() }
    }
}

pub fn write_pairs(w: &mut impl Write, pairs: &[Pair]) -> Result<()> {
    w.write_all(PAIR_MAGIC)?;
    w.write_all(&PAIR_VERSION.to_le_bytes())?;
    w.write_all(&(pairs.len() as u64).to_le_bytes())?;
    for p in pairs {
        w.write_all(&(p.context.len() as u32).to_le_bytes())?;
        w.write_all(&(p.target.len() as u32).to_le_bytes())?;
        for id in p.context.iter().chain(&p.target) {
            w.write_all(&id.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_pairs(r: &mut impl Read) -> Result<Vec<Pair>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::format("pair file", "truncated header"))?;
    if &magic != PAIR_MAGIC {
        return Err(Error::format("pair file", format!("bad magic {magic:?}")));
    }
    let version = read_u32(r).map_err(|_| Error::format("pair file", "truncated header"))?;
    if version != PAIR_VERSION {
        return Err(Error::format("pair file", format!("unsupported version {version}")));
    }
    let mut count = [0u8; 8];
    r.read_exact(&mut count).map_err(|_| Error::format("pair file", "truncated header"))?;
    let count = u64::from_le_bytes(count);
    let mut pairs = Vec::with_capacity(count.min(1 << 20) as usize);
    for index in 0..count {
        let bad = |detail: &str| Error::Record { what: "pair file", index, detail: detail.to_string() };
        let m = read_u32(r).map_err(|_| bad("truncated record header"))? as usize;
        let n = read_u32(r).map_err(|_| bad("truncated record header"))? as usize;
        if m == 0 || n == 0 || m > MAX_CONTEXT_LEN || n > MAX_TARGET_LEN {
            return Err(bad(&format!("invalid lengths context={m} target={n}")));
        }
        let mut ids = vec![0u32; m + n];
        for id in &mut ids {
            *id = read_u32(r).map_err(|_| bad("truncated ids"))?;
        }
        let target = ids.split_off(m);
        pairs.push(Pair { context: ids, target });
    }
    let mut tail = [0u8; 1];
    if r.read(&mut tail)? != 0 {
        return Err(Error::Record { what: "pair file", index: count, detail: "trailing bytes".into() });
    }
    Ok(pairs)
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn save_pairs(path: impl AsRef<Path>, pairs: &[Pair]) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(fs::File::create(path).map_err(Error::at_path(path))?);
    write_pairs(&mut w, pairs)?;
    w.flush()?;
    Ok(())
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<Pair>> {
    let path = path.as_ref();
    let mut r = BufReader::new(fs::File::open(path).map_err(Error::at_path(path))?);
    read_pairs(&mut r)
}

/// Pair count and length histograms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairStats {
    pub count: usize,
    pub context_hist: Vec<(usize, usize)>,
    pub target_hist: Vec<(usize, usize)>,
}

impl PairStats {
    pub fn new(pairs: &[Pair]) -> Self {
        let hist = |lens: Vec<usize>, width: usize| {
            let mut buckets = std::collections::BTreeMap::new();
            for l in lens {
                *buckets.entry(l / width * width).or_insert(0) += 1;
            }
            buckets.into_iter().collect()
        };
        Self {
            count: pairs.len(),
            context_hist: hist(pairs.iter().map(|p| p.context.len()).collect(), 50),
            target_hist: hist(pairs.iter().map(|p| p.target.len()).collect(), 10),
        }
    }

    pub fn render(&self) -> String {
        let mut s = format!("pairs={}\n", self.count);
        for (name, hist, width) in [("context", &self.context_hist, 50), ("target", &self.target_hist, 10)] {
            for (lo, n) in hist {
                s.push_str(&format!("{name}_len[{lo},{})={n}\n", lo + width));
            }
        }
        s
    }
}

/// Fisher-Yates shuffle keyed by `seed`.
pub fn shuffle_pairs(pairs: &mut [Pair], seed: u64) {
    use rand::seq::SliceRandom;
    pairs.shuffle(&mut keyed_rng(&[seed, 0x5eed]));
}
