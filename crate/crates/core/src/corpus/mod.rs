//! Corpus ingestion: vocabulary construction, encoding, and the fixed-length
//! training sequences / prefix batches used by the training and evaluation
//! protocols.
//!
//! Vocabulary file format: UTF-8 text, one token per line, line number = id.
//! The reserved unknown token `<unk>` appears exactly once (it receives the
//! last id when a vocabulary is built). Tokens are escaped on write so that
//! char-mode whitespace tokens survive the line orientation: `\\` backslash,
//! `\n` newline, `\r` carriage return, `\t` tab, `\s` space.

pub mod synth;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Reserved unknown-token spelling. Occurrences of this literal in a corpus
/// are folded into the reserved id rather than ranked on their own.
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("corpus too short: {len} tokens, need at least {required}")]
    CorpusTooShort { len: usize, required: usize },
    #[error("invalid sequence length {given}: must be >= {min}")]
    InvalidLength { given: usize, min: usize },
    #[error("prefix length {k} exceeds sequence length {len}")]
    PrefixTooLong { k: usize, len: usize },
    #[error("invalid vocabulary file: {0}")]
    InvalidVocabFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Tokenization granularity. Word mode splits on Unicode whitespace; char
/// mode treats every Unicode scalar as a token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizeMode {
    Word,
    Char,
}

impl fmt::Display for TokenizeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenizeMode::Word => write!(f, "word"),
            TokenizeMode::Char => write!(f, "char"),
        }
    }
}

fn tokens_of(mode: TokenizeMode, text: &str) -> Vec<&str> {
    match mode {
        TokenizeMode::Word => text.split_whitespace().collect(),
        TokenizeMode::Char => text
            .char_indices()
            .map(|(i, c)| &text[i..i + c.len_utf8()])
            .collect(),
    }
}

/// Bidirectional token <-> id map with a reserved unknown id.
///
/// Ids are dense and 0-based: tokens meeting the frequency threshold are
/// ordered by (descending frequency, then lexicographic); the unknown token
/// takes the final id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
    unk_id: u32,
    mode: TokenizeMode,
}

impl Vocabulary {
    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn unk_id(&self) -> u32 {
        self.unk_id
    }

    pub fn mode(&self) -> TokenizeMode {
        self.mode
    }

    pub fn id_of(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(self.unk_id)
    }

    pub fn token_of(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(|s| s.as_str())
    }

    /// Encodes text; out-of-vocabulary tokens map to the unknown id.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokens_of(self.mode, text).iter().map(|t| self.id_of(t)).collect()
    }

    /// Decodes ids back to text. Word mode joins with single spaces; char
    /// mode concatenates. Unknown or out-of-range ids render as [`UNK_TOKEN`].
    pub fn decode(&self, ids: &[u32]) -> String {
        let parts: Vec<&str> = ids
            .iter()
            .map(|&id| self.token_of(id).unwrap_or(UNK_TOKEN))
            .collect();
        match self.mode {
            TokenizeMode::Word => parts.join(" "),
            TokenizeMode::Char => parts.concat(),
        }
    }

    /// Writes the vocabulary as one escaped token per line (line number = id).
    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut out = String::new();
        for token in &self.id_to_token {
            out.push_str(&escape_token(token));
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Reads a vocabulary file written by [`Vocabulary::save`]. The unknown
    /// token is located by its reserved spelling and must occur exactly once.
    pub fn load(path: &Path, mode: TokenizeMode) -> Result<Self, CorpusError> {
        let raw = std::fs::read_to_string(path)?;
        let mut id_to_token = Vec::new();
        for line in raw.lines() {
            id_to_token.push(unescape_token(line)?);
        }
        if id_to_token.is_empty() {
            return Err(CorpusError::InvalidVocabFile("no tokens".into()));
        }
        let unk_positions: Vec<usize> = id_to_token
            .iter()
            .enumerate()
            .filter(|(_, t)| t.as_str() == UNK_TOKEN)
            .map(|(i, _)| i)
            .collect();
        let unk_id = match unk_positions.as_slice() {
            [only] => *only as u32,
            [] => return Err(CorpusError::InvalidVocabFile("missing <unk> token".into())),
            _ => return Err(CorpusError::InvalidVocabFile("duplicate <unk> token".into())),
        };
        let mut token_to_id = HashMap::with_capacity(id_to_token.len());
        for (id, token) in id_to_token.iter().enumerate() {
            if token_to_id.insert(token.clone(), id as u32).is_some() {
                return Err(CorpusError::InvalidVocabFile(format!(
                    "duplicate token {token:?}"
                )));
            }
        }
        Ok(Self { token_to_id, id_to_token, unk_id, mode })
    }
}

fn escape_token(token: &str) -> String {
    let mut out = String::with_capacity(token.len());
    for c in token.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            ' ' => out.push_str("\\s"),
            other => out.push(other),
        }
    }
    out
}

fn unescape_token(line: &str) -> Result<String, CorpusError> {
    let mut out = String::with_capacity(line.len());
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('t') => out.push('\t'),
            Some('s') => out.push(' '),
            other => {
                return Err(CorpusError::InvalidVocabFile(format!(
                    "bad escape in line {line:?}: {other:?}"
                )))
            }
        }
    }
    Ok(out)
}

/// Builds a vocabulary from a corpus. Tokens with frequency >= `min_count`
/// receive ids ordered by (descending frequency, then lexicographic); all
/// other tokens encode to the reserved unknown id, which is assigned last.
pub fn build_vocabulary(
    text: &str,
    mode: TokenizeMode,
    min_count: usize,
) -> Result<Vocabulary, CorpusError> {
    let tokens = tokens_of(mode, text);
    if tokens.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &tokens {
        if *t != UNK_TOKEN {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> =
        counts.into_iter().filter(|(_, c)| *c >= min_count.max(1)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut id_to_token: Vec<String> = ranked.iter().map(|(t, _)| t.to_string()).collect();
    id_to_token.push(UNK_TOKEN.to_string());
    let unk_id = (id_to_token.len() - 1) as u32;
    let token_to_id = id_to_token
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();
    Ok(Vocabulary { token_to_id, id_to_token, unk_id, mode })
}

/// Role of a token sequence in the completion protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SequenceKind {
    TrainingBlock,
    Prefix,
    Continuation,
    /// A prefix concatenated with a continuation; `split` is the prefix length.
    Completion { split: usize },
}

/// Contiguous id sequence tagged with its protocol role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub kind: SequenceKind,
}

impl TokenSequence {
    pub fn training_block(ids: Vec<u32>) -> Self {
        Self { ids, kind: SequenceKind::TrainingBlock }
    }

    pub fn prefix(ids: Vec<u32>) -> Self {
        Self { ids, kind: SequenceKind::Prefix }
    }

    pub fn completion(prefix: &[u32], continuation: &[u32]) -> Self {
        let mut ids = Vec::with_capacity(prefix.len() + continuation.len());
        ids.extend_from_slice(prefix);
        ids.extend_from_slice(continuation);
        Self { ids, kind: SequenceKind::Completion { split: prefix.len() } }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// For a completion, the continuation span; otherwise the whole sequence.
    pub fn continuation(&self) -> &[u32] {
        match self.kind {
            SequenceKind::Completion { split } => &self.ids[split..],
            _ => &self.ids,
        }
    }
}

/// Train/valid/test token sequences (training-block kind).
#[derive(Debug, Clone)]
pub struct CorpusSplit {
    pub train: Vec<TokenSequence>,
    pub valid: Vec<TokenSequence>,
    pub test: Vec<TokenSequence>,
}

/// Encodes `split_text` and cuts it into consecutive non-overlapping windows
/// of exactly `block_len` ids; a trailing remainder shorter than `block_len`
/// is discarded.
pub fn make_training_sequences(
    split_text: &str,
    vocab: &Vocabulary,
    block_len: usize,
) -> Result<Vec<TokenSequence>, CorpusError> {
    if block_len < 2 {
        return Err(CorpusError::InvalidLength { given: block_len, min: 2 });
    }
    let ids = vocab.encode(split_text);
    make_training_sequences_from_ids(&ids, block_len)
}

/// Windowing over already-encoded ids; see [`make_training_sequences`].
pub fn make_training_sequences_from_ids(
    ids: &[u32],
    block_len: usize,
) -> Result<Vec<TokenSequence>, CorpusError> {
    if block_len < 2 {
        return Err(CorpusError::InvalidLength { given: block_len, min: 2 });
    }
    if ids.len() < block_len {
        return Err(CorpusError::CorpusTooShort { len: ids.len(), required: block_len });
    }
    Ok(ids
        .chunks_exact(block_len)
        .map(|w| TokenSequence::training_block(w.to_vec()))
        .collect())
}

/// Splits each sequence into floor(len / k) prefixes of exactly `k` tokens,
/// discarding extra tokens at the end of each sequence.
pub fn make_prefix_batches(
    sequences: &[TokenSequence],
    k: usize,
) -> Result<Vec<TokenSequence>, CorpusError> {
    if k < 1 {
        return Err(CorpusError::InvalidLength { given: k, min: 1 });
    }
    for seq in sequences {
        if k > seq.len() {
            return Err(CorpusError::PrefixTooLong { k, len: seq.len() });
        }
    }
    Ok(sequences
        .iter()
        .flat_map(|seq| seq.ids.chunks_exact(k).map(|w| TokenSequence::prefix(w.to_vec())))
        .collect())
}

/// Cuts one source text into three disjoint spans at token boundaries,
/// by token count: `train_frac`, `valid_frac`, remainder.
pub fn split_text_fractions(
    text: &str,
    mode: TokenizeMode,
    train_frac: f64,
    valid_frac: f64,
) -> Result<(String, String, String), CorpusError> {
    assert!(train_frac > 0.0 && valid_frac > 0.0 && train_frac + valid_frac < 1.0);
    let tokens = tokens_of(mode, text);
    if tokens.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let n = tokens.len();
    let n_train = ((n as f64) * train_frac).floor() as usize;
    let n_valid = ((n as f64) * valid_frac).floor() as usize;
    let join = |slice: &[&str]| -> String {
        match mode {
            TokenizeMode::Word => slice.join(" "),
            TokenizeMode::Char => slice.concat(),
        }
    };
    Ok((
        join(&tokens[..n_train]),
        join(&tokens[n_train..n_train + n_valid]),
        join(&tokens[n_train + n_valid..]),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_orders_by_frequency_then_lexicographic() {
        let v = build_vocabulary("a b a", TokenizeMode::Word, 1).unwrap();
        assert_eq!(v.size(), 3);
        assert_eq!(v.id_of("a"), 0);
        assert_eq!(v.id_of("b"), 1);
        assert_eq!(v.unk_id(), 2);
    }

    #[test]
    fn vocab_rejects_empty_corpus() {
        let err = build_vocabulary("", TokenizeMode::Word, 1).unwrap_err();
        assert!(matches!(err, CorpusError::EmptyCorpus), "{err}");
        let err = build_vocabulary("   \n\t ", TokenizeMode::Word, 1).unwrap_err();
        assert!(matches!(err, CorpusError::EmptyCorpus));
    }

    #[test]
    fn char_mode_counts_distinct_chars_plus_unk() {
        let v = build_vocabulary("xyz", TokenizeMode::Char, 1).unwrap();
        assert_eq!(v.size(), 4);
    }

    #[test]
    fn min_count_filters_rare_tokens() {
        let v = build_vocabulary("a a b", TokenizeMode::Word, 2).unwrap();
        assert_eq!(v.size(), 2); // a + <unk>
        assert_eq!(v.id_of("b"), v.unk_id());
    }

    #[test]
    fn frequency_ties_break_lexicographically() {
        let v = build_vocabulary("b a d c", TokenizeMode::Word, 1).unwrap();
        assert_eq!(v.id_of("a"), 0);
        assert_eq!(v.id_of("b"), 1);
        assert_eq!(v.id_of("c"), 2);
        assert_eq!(v.id_of("d"), 3);
    }

    #[test]
    fn encode_reads_ids_from_vocab() {
        let v = build_vocabulary("a b a", TokenizeMode::Word, 1).unwrap();
        assert_eq!(v.encode("a b"), vec![0, 1]);
    }

    #[test]
    fn encode_decode_round_trip_on_in_vocab_text() {
        let v = build_vocabulary("the cat sat on the mat", TokenizeMode::Word, 1).unwrap();
        let text = "the mat sat on the cat";
        assert_eq!(v.decode(&v.encode(text)), text);

        let vc = build_vocabulary("hello world", TokenizeMode::Char, 1).unwrap();
        let t = "world hello";
        assert_eq!(vc.decode(&vc.encode(t)), t);
    }

    #[test]
    fn unseen_token_encodes_to_unk() {
        let v = build_vocabulary("a b a", TokenizeMode::Word, 1).unwrap();
        assert_eq!(v.encode("z"), vec![v.unk_id()]);
    }

    #[test]
    fn literal_unk_in_corpus_folds_into_reserved_id() {
        let v = build_vocabulary("a <unk> a <unk> <unk>", TokenizeMode::Word, 1).unwrap();
        assert_eq!(v.size(), 2);
        assert_eq!(v.encode("<unk>"), vec![v.unk_id()]);
    }

    #[test]
    fn determinism_same_input_same_vocab() {
        let a = build_vocabulary("x y z y x x", TokenizeMode::Word, 1).unwrap();
        let b = build_vocabulary("x y z y x x", TokenizeMode::Word, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = build_vocabulary("a b a\nnew\tline", TokenizeMode::Char, 1).unwrap();
        v.save(&path).unwrap();
        let loaded = Vocabulary::load(&path, TokenizeMode::Char).unwrap();
        assert_eq!(v, loaded);
    }

    #[test]
    fn training_windows_drop_remainder() {
        let ids: Vec<u32> = (0..10).collect();
        let seqs = make_training_sequences_from_ids(&ids, 4).unwrap();
        assert_eq!(seqs.len(), 2);
        assert_eq!(seqs[0].ids, vec![0, 1, 2, 3]);
        assert_eq!(seqs[1].ids, vec![4, 5, 6, 7]);
    }

    #[test]
    fn training_windows_exact_fit() {
        let ids: Vec<u32> = (0..4).collect();
        let seqs = make_training_sequences_from_ids(&ids, 4).unwrap();
        assert_eq!(seqs.len(), 1);
    }

    #[test]
    fn training_windows_too_short_errors() {
        let ids: Vec<u32> = (0..3).collect();
        assert!(make_training_sequences_from_ids(&ids, 4).is_err());
    }

    #[test]
    fn windowing_conserves_floor_multiple() {
        for total in [5usize, 16, 100, 257] {
            let ids: Vec<u32> = (0..total as u32).collect();
            let block = 5;
            if total >= block {
                let seqs = make_training_sequences_from_ids(&ids, block).unwrap();
                let emitted: usize = seqs.iter().map(|s| s.len()).sum();
                assert_eq!(emitted, (total / block) * block);
            }
        }
    }

    #[test]
    fn prefixes_paper_arithmetic() {
        let seq = TokenSequence::training_block((0..1536).map(|i| i % 7).collect());
        let prefixes = make_prefix_batches(&[seq], 50).unwrap();
        assert_eq!(prefixes.len(), 30); // 36 tokens dropped
        assert!(prefixes.iter().all(|p| p.len() == 50));
    }

    #[test]
    fn prefixes_exact_and_partial() {
        let s4 = TokenSequence::training_block(vec![1, 2, 3, 4]);
        assert_eq!(make_prefix_batches(&[s4], 4).unwrap().len(), 1);

        let s7 = TokenSequence::training_block(vec![0, 1, 2, 3, 4, 5, 6]);
        let p = make_prefix_batches(&[s7], 3).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].ids, vec![0, 1, 2]);
        assert_eq!(p[1].ids, vec![3, 4, 5]);
    }

    #[test]
    fn prefix_longer_than_sequence_errors() {
        let s = TokenSequence::training_block(vec![1, 2, 3]);
        assert!(make_prefix_batches(&[s], 4).is_err());
    }

    #[test]
    fn split_fractions_are_disjoint_and_cover() {
        let text = "a b c d e f g h i j";
        let (tr, va, te) = split_text_fractions(text, TokenizeMode::Word, 0.6, 0.2).unwrap();
        assert_eq!(tr, "a b c d e f");
        assert_eq!(va, "g h");
        assert_eq!(te, "i j");
    }
}
