//! Token interning, sequence-database ingestion and the gapped-subsequence
//! semantics (containment, occurrence capacity, support) used everywhere else.
//!
//! Two line formats are accepted and may be mixed within one stream:
//!
//! * plain text: tokens separated by ASCII spaces or tabs, one client
//!   sequence per line, `#` starts a comment line;
//! * JSON lines: `{"id": "optional label", "calls": ["a", "b"]}`.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;

use serde::Deserialize;
use thiserror::Error;

/// Default upper bound on the number of calls in one client sequence.
pub const DEFAULT_MAX_SEQUENCE_LENGTH: usize = 10_000;

/// Dense identifier of an interned API method name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Bijective map between API method names and dense ids, in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenTable {
    names: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl TokenTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id of `name`, assigning the next free id on first sight.
    ///
    /// Callers must pass a valid token (non-empty, no whitespace); see
    /// [`is_valid_token`].
    pub fn intern(&mut self, name: &str) -> TokenId {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = TokenId(self.names.len() as u32);
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<TokenId> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: TokenId) -> &str {
        &self.names[id.index()]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TokenId, &str)> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| (TokenId(i as u32), n.as_str()))
    }

    /// Space-joined names of a token slice.
    pub fn render(&self, tokens: &[TokenId]) -> String {
        let mut out = String::new();
        for (i, &t) in tokens.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(self.name(t));
        }
        out
    }
}

/// A token name is valid when it is non-empty and contains no whitespace.
pub fn is_valid_token(name: &str) -> bool {
    !name.is_empty() && !name.chars().any(char::is_whitespace)
}

/// The ordered API calls of one client method.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientSequence {
    pub tokens: Vec<TokenId>,
    pub source_id: String,
}

impl ClientSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// An API pattern: an ordered list of calls, matched with gaps.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pattern(Vec<TokenId>);

impl Pattern {
    /// # Panics
    /// Panics on an empty token list.
    pub fn new(tokens: Vec<TokenId>) -> Self {
        assert!(!tokens.is_empty(), "a pattern needs at least one token");
        Pattern(tokens)
    }

    pub fn singleton(token: TokenId) -> Self {
        Pattern(vec![token])
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_singleton(&self) -> bool {
        self.0.len() == 1
    }

    /// `self` followed by `other`.
    pub fn concat(&self, other: &Pattern) -> Pattern {
        let mut tokens = Vec::with_capacity(self.len() + other.len());
        tokens.extend_from_slice(&self.0);
        tokens.extend_from_slice(&other.0);
        Pattern(tokens)
    }
}

impl From<Vec<TokenId>> for Pattern {
    fn from(tokens: Vec<TokenId>) -> Self {
        Pattern::new(tokens)
    }
}

/// Record counts gathered while ingesting a database.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct IngestStats {
    pub kept: usize,
    pub dropped_empty: usize,
    pub dropped_malformed: usize,
    pub dropped_too_long: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ParseOptions {
    pub max_sequence_length: usize,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            max_sequence_length: DEFAULT_MAX_SEQUENCE_LENGTH,
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("read failed at byte offset {offset}: {source}")]
    Io {
        offset: u64,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid UTF-8 in line starting at byte offset {offset}")]
    InvalidUtf8 { offset: u64 },
}

/// Immutable collection of client sequences in input order.
#[derive(Debug, Clone, Default)]
pub struct SequenceDatabase {
    sequences: Vec<ClientSequence>,
    tokens: TokenTable,
    stats: IngestStats,
    /// Per token, the ascending indices of sequences containing it.
    postings: Vec<Vec<u32>>,
}

impl PartialEq for SequenceDatabase {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
            && self.sequences.len() == other.sequences.len()
            && self
                .sequences
                .iter()
                .zip(&other.sequences)
                .all(|(a, b)| a.tokens == b.tokens)
    }
}

impl SequenceDatabase {
    /// Builds a database from already-tokenized sequences. Empty sequences
    /// are dropped and counted.
    pub fn from_sequences<I, S>(sequences: I) -> Self
    where
        I: IntoIterator<Item = Vec<S>>,
        S: AsRef<str>,
    {
        let mut builder = Builder::default();
        for (i, seq) in sequences.into_iter().enumerate() {
            let names: Vec<&str> = seq.iter().map(AsRef::as_ref).collect();
            builder.push(&names, format!("record {}", i + 1), usize::MAX);
        }
        builder.finish()
    }

    pub fn sequences(&self) -> &[ClientSequence] {
        &self.sequences
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn tokens(&self) -> &TokenTable {
        &self.tokens
    }

    pub fn stats(&self) -> IngestStats {
        self.stats
    }

    /// Indices of sequences that contain `token` at least once.
    pub fn postings(&self, token: TokenId) -> &[u32] {
        self.postings
            .get(token.index())
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Indices (ascending) of the sequences containing `pattern` as a
    /// gapped subsequence.
    pub fn supporting_sequences(&self, pattern: &[TokenId]) -> Vec<u32> {
        let Some(rarest) = pattern
            .iter()
            .min_by_key(|t| self.postings(**t).len())
            .copied()
        else {
            return Vec::new();
        };
        self.postings(rarest)
            .iter()
            .copied()
            .filter(|&i| is_subsequence(pattern, &self.sequences[i as usize].tokens))
            .collect()
    }

    /// Number of sequences containing `pattern`.
    pub fn support(&self, pattern: &[TokenId]) -> usize {
        self.supporting_sequences(pattern).len()
    }

    /// Support divided by database size; 0 for the empty database.
    pub fn relative_support(&self, pattern: &[TokenId]) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.support(pattern) as f64 / self.len() as f64
        }
    }

    /// Renders the database in the plain line format. A sequence whose
    /// first call would read back as a comment or a JSON record is written as
    /// a JSON record instead.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for seq in &self.sequences {
            let first = self.tokens.name(seq.tokens[0]);
            if first.starts_with('#') || first.starts_with('{') {
                let calls: Vec<&str> = seq.tokens.iter().map(|&t| self.tokens.name(t)).collect();
                out.push_str(&serde_json::json!({ "calls": calls }).to_string());
            } else {
                out.push_str(&self.tokens.render(&seq.tokens));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Default)]
struct Builder {
    sequences: Vec<ClientSequence>,
    tokens: TokenTable,
    stats: IngestStats,
    postings: Vec<Vec<u32>>,
}

impl Builder {
    fn push(&mut self, names: &[&str], source_id: String, max_len: usize) {
        if names.is_empty() {
            self.stats.dropped_empty += 1;
            return;
        }
        if !names.iter().all(|n| is_valid_token(n)) {
            self.stats.dropped_malformed += 1;
            return;
        }
        if names.len() > max_len {
            log::warn!(
                "{source_id}: dropping sequence of {} calls (limit {max_len})",
                names.len()
            );
            self.stats.dropped_too_long += 1;
            return;
        }
        let index = self.sequences.len() as u32;
        let tokens: Vec<TokenId> = names.iter().map(|n| self.tokens.intern(n)).collect();
        for &t in &tokens {
            if self.postings.len() <= t.index() {
                self.postings.resize_with(t.index() + 1, Vec::new);
            }
            let list = &mut self.postings[t.index()];
            if list.last() != Some(&index) {
                list.push(index);
            }
        }
        self.sequences.push(ClientSequence { tokens, source_id });
        self.stats.kept += 1;
    }

    fn finish(self) -> SequenceDatabase {
        SequenceDatabase {
            sequences: self.sequences,
            tokens: self.tokens,
            stats: self.stats,
            postings: self.postings,
        }
    }
}

#[derive(Deserialize)]
struct JsonRecord {
    id: Option<String>,
    calls: Vec<String>,
}

/// Reads a sequence database from a line-oriented text stream.
///
/// Malformed, empty and over-long records are dropped and counted in
/// [`SequenceDatabase::stats`]; only I/O failures and invalid UTF-8 are
/// errors.
pub fn parse_database<R: BufRead>(
    mut reader: R,
    options: &ParseOptions,
) -> Result<SequenceDatabase, CorpusError> {
    let mut builder = Builder::default();
    let mut buf = Vec::new();
    let mut offset = 0u64;
    let mut line_no = 0usize;
    loop {
        buf.clear();
        let n = reader
            .read_until(b'\n', &mut buf)
            .map_err(|source| CorpusError::Io { offset, source })?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let line = std::str::from_utf8(&buf).map_err(|_| CorpusError::InvalidUtf8 { offset })?;
        offset += n as u64;
        ingest_line(&mut builder, line, line_no, options.max_sequence_length);
    }
    Ok(builder.finish())
}

/// Convenience wrapper over [`parse_database`] for in-memory text.
pub fn parse_database_str(text: &str, options: &ParseOptions) -> SequenceDatabase {
    let mut builder = Builder::default();
    for (i, line) in text.split_inclusive('\n').enumerate() {
        ingest_line(&mut builder, line, i + 1, options.max_sequence_length);
    }
    builder.finish()
}

fn ingest_line(builder: &mut Builder, line: &str, line_no: usize, max_len: usize) {
    let trimmed = line.trim_matches(|c: char| c == ' ' || c == '\t' || c == '\n' || c == '\r');
    if trimmed.is_empty() {
        builder.stats.dropped_empty += 1;
        return;
    }
    if trimmed.starts_with('#') {
        return;
    }
    if trimmed.starts_with('{') {
        match serde_json::from_str::<JsonRecord>(trimmed) {
            Ok(record) => {
                let names: Vec<&str> = record.calls.iter().map(String::as_str).collect();
                let source = record.id.unwrap_or_else(|| format!("line {line_no}"));
                builder.push(&names, source, max_len);
            }
            Err(err) => {
                log::warn!("line {line_no}: malformed JSON record: {err}");
                builder.stats.dropped_malformed += 1;
            }
        }
        return;
    }
    let names: Vec<&str> = trimmed
        .split([' ', '\t'])
        .filter(|s| !s.is_empty())
        .collect();
    builder.push(&names, format!("line {line_no}"), max_len);
}

/// True iff `pattern` occurs in `sequence` in order, gaps allowed.
pub fn is_subsequence(pattern: &[TokenId], sequence: &[TokenId]) -> bool {
    let mut want = pattern.iter().peekable();
    for t in sequence {
        match want.peek() {
            Some(&&p) if p == *t => {
                want.next();
            }
            Some(_) => {}
            None => break,
        }
    }
    want.peek().is_none()
}

/// Largest `n` such that `pattern` repeated `n` times is a subsequence of
/// `sequence`.
pub fn occurrence_capacity(pattern: &[TokenId], sequence: &[TokenId]) -> usize {
    if pattern.is_empty() {
        return 0;
    }
    let mut count = 0;
    let mut k = 0;
    for &t in sequence {
        if t == pattern[k] {
            k += 1;
            if k == pattern.len() {
                count += 1;
                k = 0;
            }
        }
    }
    count
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}
