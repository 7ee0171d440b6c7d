//! Subword vocabulary, greedy longest-match segmentation and the per-example
//! extended vocabulary used by the copy mechanism.
//!
//! Text is first split into basic tokens (whitespace-separated words, with each
//! punctuation character standing alone). Each word is then segmented greedily
//! into the longest vocabulary pieces; continuation pieces carry a `##` prefix.
//! A word that cannot be segmented becomes a single `[UNK]` piece that keeps its
//! surface form, so the extended vocabulary can still copy it.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const MASK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
pub const UNK: u32 = 4;

pub const SPECIALS: [&str; 5] = ["[PAD]", "[MASK]", "[BOS]", "[EOS]", "[UNK]"];
pub const NUM_SPECIALS: usize = SPECIALS.len();

const CONTINUATION: &str = "##";
const MAX_PIECE_CHARS: usize = 16;
const MAX_WORD_CHARS: usize = 100;

/// Splits text into words and standalone punctuation, keeping the literal `[UNK]` whole.
pub fn basic_tokens(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut rest = word;
        while !rest.is_empty() {
            if let Some(tail) = rest.strip_prefix(SPECIALS[UNK as usize]) {
                out.push(&rest[..rest.len() - tail.len()]);
                rest = tail;
                continue;
            }
            let split = rest
                .char_indices()
                .find(|&(i, c)| is_punct(c) || (i > 0 && rest[i..].starts_with(SPECIALS[UNK as usize])))
                .map(|(i, _)| i);
            match split {
                Some(0) => {
                    let len = rest.chars().next().unwrap().len_utf8();
                    out.push(&rest[..len]);
                    rest = &rest[len..];
                }
                Some(i) => {
                    out.push(&rest[..i]);
                    rest = &rest[i..];
                }
                None => {
                    out.push(rest);
                    rest = "";
                }
            }
        }
    }
    out
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace() && !c.is_ascii())
}

/// One segmented piece: its surface (with `##` on continuations) and its base id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Piece {
    pub surface: String,
    pub id: u32,
}

impl Piece {
    pub fn is_unknown(&self) -> bool {
        self.id == UNK
    }
}

/// Anything that can render ids back to surface pieces.
pub trait IdSpace {
    fn size(&self) -> usize;
    fn surface(&self, id: u32) -> Option<&str>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
    longest: usize,
}

impl Vocab {
    /// Builds a vocabulary of at most `target_size` entries from `corpus`.
    ///
    /// Every character observed in the corpus gets both its word-initial and its
    /// `##` continuation form before any multi-character piece is admitted, so
    /// re-encoding the corpus produces no `[UNK]` as long as the characters fit.
    pub fn build(corpus: &str, target_size: usize) -> Result<Self> {
        Self::build_from_docs(std::iter::once(corpus), target_size)
    }

    pub fn build_from_docs<'a>(docs: impl IntoIterator<Item = &'a str>, target_size: usize) -> Result<Self> {
        if target_size < NUM_SPECIALS + 1 {
            return Err(Error::Vocab(format!("target size {target_size} leaves no room beyond the specials")));
        }
        let mut words: HashMap<&str, u64> = HashMap::new();
        for doc in docs {
            for w in basic_tokens(doc) {
                if w != SPECIALS[UNK as usize] {
                    *words.entry(w).or_default() += 1;
                }
            }
        }
        if words.is_empty() {
            return Err(Error::Empty("build_vocab"));
        }
        let mut words: Vec<(&str, u64)> = words.into_iter().collect();
        words.sort_unstable();

        let mut char_forms: HashMap<String, u64> = HashMap::new();
        let mut pieces: HashMap<String, u64> = HashMap::new();
        for &(w, freq) in &words {
            let bounds: Vec<usize> = w.char_indices().map(|(i, _)| i).chain([w.len()]).collect();
            let nchars = bounds.len() - 1;
            for i in 0..nchars {
                let prefix = if i == 0 { "" } else { CONTINUATION };
                *char_forms.entry(format!("{prefix}{}", &w[bounds[i]..bounds[i + 1]])).or_default() += freq;
                for j in (i + 2)..=nchars.min(i + MAX_PIECE_CHARS) {
                    *pieces.entry(format!("{prefix}{}", &w[bounds[i]..bounds[j]])).or_default() += freq;
                }
            }
        }
        // Both forms of every observed character, even ones only seen in one position.
        let observed: Vec<String> = char_forms.keys().cloned().collect();
        for form in observed {
            let bare = form.strip_prefix(CONTINUATION).unwrap_or(&form).to_string();
            char_forms.entry(bare.clone()).or_insert(0);
            char_forms.entry(format!("{CONTINUATION}{bare}")).or_insert(0);
        }

        let mut chars: Vec<(String, u64)> = char_forms.into_iter().collect();
        chars.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut pieces: Vec<(String, u64)> = pieces
            .into_iter()
            .map(|(p, f)| {
                let len = p.trim_start_matches(CONTINUATION).chars().count() as u64;
                (p, f * (len - 1))
            })
            .collect();
        pieces.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        for (tok, _) in chars.into_iter().chain(pieces) {
            if tokens.len() >= target_size {
                break;
            }
            tokens.push(tok);
        }
        Self::from_tokens(tokens)
    }

    /// Creates a vocabulary from an ordered token list; the five specials must come first.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < NUM_SPECIALS {
            return Err(Error::Vocab(format!("only {} entries", tokens.len())));
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            if tokens[i] != *s {
                return Err(Error::Vocab(format!("line {} must be {s}, found {:?}", i + 1, tokens[i])));
            }
        }
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        let mut longest = 0;
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Vocab(format!("invalid token {t:?} at line {}", i + 1)));
            }
            if token_to_id.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Vocab(format!("duplicate token {t:?} at line {}", i + 1)));
            }
            longest = longest.max(t.trim_start_matches(CONTINUATION).chars().count());
        }
        Ok(Self { token_to_id, id_to_token: tokens, longest })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(Error::at_path(path))?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(Error::at_path(path))?;
        let mut w = BufWriter::new(file);
        for t in &self.id_to_token {
            writeln!(w, "{t}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Segments `text` into pieces; unsegmentable words become one `[UNK]` piece
    /// carrying the word itself as surface.
    pub fn tokenize(&self, text: &str) -> Vec<Piece> {
        let mut out = Vec::new();
        for word in basic_tokens(text) {
            if word == SPECIALS[UNK as usize] {
                out.push(Piece { surface: word.to_string(), id: UNK });
                continue;
            }
            match self.segment(word) {
                Some(pieces) => out.extend(pieces),
                None => out.push(Piece { surface: word.to_string(), id: UNK }),
            }
        }
        out
    }

    fn segment(&self, word: &str) -> Option<Vec<Piece>> {
        let bounds: Vec<usize> = word.char_indices().map(|(i, _)| i).chain([word.len()]).collect();
        let n = bounds.len() - 1;
        if n > MAX_WORD_CHARS {
            return None;
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        let mut key = String::new();
        while start < n {
            let mut found = None;
            for end in (start + 1..=n.min(start + self.longest)).rev() {
                key.clear();
                if start > 0 {
                    key.push_str(CONTINUATION);
                }
                key.push_str(&word[bounds[start]..bounds[end]]);
                if let Some(&id) = self.token_to_id.get(key.as_str()) {
                    if (id as usize) >= NUM_SPECIALS {
                        found = Some((end, id));
                        break;
                    }
                }
            }
            let (end, id) = found?;
            pieces.push(Piece { surface: key.clone(), id });
            start = end;
        }
        Some(pieces)
    }

    /// Greedy longest-match encoding. Never emits specials other than `[UNK]`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        self.tokenize(text).into_iter().map(|p| p.id).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        decode(ids, self)
    }
}

impl IdSpace for Vocab {
    fn size(&self) -> usize {
        self.len()
    }

    fn surface(&self, id: u32) -> Option<&str> {
        self.token(id)
    }
}

/// Renders ids as text: continuation pieces are glued to their predecessor, other
/// pieces are separated by one space.
pub fn decode(ids: &[u32], space: &impl IdSpace) -> Result<String> {
    let mut out = String::new();
    for &id in ids {
        let tok = space.surface(id).ok_or(Error::IdOutOfRange { id, size: space.size() })?;
        match tok.strip_prefix(CONTINUATION) {
            Some(rest) if !rest.is_empty() => out.push_str(rest),
            _ => {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(tok);
            }
        }
    }
    Ok(out)
}

/// Base vocabulary plus the distinct out-of-vocabulary pieces of one context.
///
/// Extra pieces get ids `V, V+1, ...` in order of first appearance.
#[derive(Debug, Clone)]
pub struct ExtendedVocab<'v> {
    base: &'v Vocab,
    extra: Vec<String>,
    extra_ids: HashMap<String, u32>,
    positions: Vec<u32>,
}

impl<'v> ExtendedVocab<'v> {
    /// Extends `base` with the context pieces. Unknown pieces (base id `[UNK]`
    /// with a real surface) receive extra ids; known pieces keep their base id.
    pub fn new(base: &'v Vocab, context: &[Piece]) -> Self {
        let v = base.len() as u32;
        let mut extra = Vec::new();
        let mut extra_ids = HashMap::new();
        let mut positions = Vec::with_capacity(context.len());
        for p in context {
            let id = if p.id == UNK && p.surface != SPECIALS[UNK as usize] {
                *extra_ids.entry(p.surface.clone()).or_insert_with(|| {
                    extra.push(p.surface.clone());
                    v + extra.len() as u32 - 1
                })
            } else {
                p.id
            };
            positions.push(id);
        }
        Self { base, extra, extra_ids, positions }
    }

    /// Extends `base` with raw context tokens (surfaces); tokens absent from the
    /// base vocabulary become extra ids.
    pub fn from_tokens<S: AsRef<str>>(base: &'v Vocab, tokens: &[S]) -> Self {
        let pieces: Vec<Piece> = tokens
            .iter()
            .map(|t| {
                let t = t.as_ref();
                Piece { surface: t.to_string(), id: base.id(t).unwrap_or(UNK) }
            })
            .collect();
        Self::new(base, &pieces)
    }

    /// Context of plain base ids (no surfaces available); nothing is added.
    pub fn from_ids(base: &'v Vocab, ids: &[u32]) -> Self {
        Self { base, extra: Vec::new(), extra_ids: HashMap::new(), positions: ids.to_vec() }
    }

    pub fn base(&self) -> &'v Vocab {
        self.base
    }

    pub fn base_size(&self) -> usize {
        self.base.len()
    }

    pub fn len(&self) -> usize {
        self.base.len() + self.extra.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn extra(&self) -> &[String] {
        &self.extra
    }

    /// Extended id at each context position.
    pub fn context_ids(&self) -> &[u32] {
        &self.positions
    }

    pub fn is_extra(&self, id: u32) -> bool {
        id as usize >= self.base.len()
    }

    /// Maps target pieces into the extended space: base ids stay, OOV pieces seen in
    /// the context take their extra id, anything else is `[UNK]`.
    pub fn map_target(&self, pieces: &[Piece]) -> Vec<u32> {
        pieces
            .iter()
            .map(|p| {
                if p.id == UNK {
                    self.extra_ids.get(&p.surface).copied().unwrap_or(UNK)
                } else {
                    p.id
                }
            })
            .collect()
    }

    /// Collapses extended ids to the base space (extras become `[UNK]`).
    pub fn to_base(&self, ids: &[u32]) -> Vec<u32> {
        ids.iter().map(|&id| if self.is_extra(id) { UNK } else { id }).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        decode(ids, self)
    }
}

impl IdSpace for ExtendedVocab<'_> {
    fn size(&self) -> usize {
        self.len()
    }

    fn surface(&self, id: u32) -> Option<&str> {
        let v = self.base.len();
        if (id as usize) < v {
            self.base.token(id)
        } else {
            self.extra.get(id as usize - v).map(String::as_str)
        }
    }
}
