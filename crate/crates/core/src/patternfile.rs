//! Text serialization of pattern sets and learning checkpoints.
//!
//! One pattern per line:
//!
//! ```text
//! π1 π2 … πM <TAB> support <TAB> name name …
//! ```
//!
//! Probabilities are written in shortest round-trip form, so reading a file
//! back reproduces every value bit for bit. Lines starting with `#` and
//! blank lines are ignored. Patterns always refer to tokens by name.

use std::fmt::Write as _;

use thiserror::Error;

use crate::corpus::{is_valid_token, Pattern, TokenId, TokenTable};
use crate::model::{ModelError, OccurrenceProbabilities, PatternSet};

pub const CHECKPOINT_HEADER: &str = "# pamine checkpoint v1";

#[derive(Debug, Error, PartialEq)]
pub enum PatternFileError {
    #[error("line {line}: expected 3 tab-separated fields, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: invalid probability {text:?}")]
    BadProbability { line: usize, text: String },
    #[error("line {line}: {source}")]
    Probabilities {
        line: usize,
        #[source]
        source: ModelError,
    },
    #[error("line {line}: invalid support {text:?}")]
    BadSupport { line: usize, text: String },
    #[error("line {line}: pattern has no tokens")]
    EmptyPattern { line: usize },
    #[error("line {line}: unknown token {name:?}")]
    UnknownToken { line: usize, name: String },
    #[error("line {line}: duplicate pattern")]
    Duplicate { line: usize },
    #[error("missing or unsupported checkpoint header (expected {CHECKPOINT_HEADER:?})")]
    BadHeader,
    #[error("line {line}: invalid counter {text:?}")]
    BadCounter { line: usize, text: String },
}

/// Writes `pats` in pattern-file format, in pattern-set order.
pub fn write_pattern_set(pats: &PatternSet, tokens: &TokenTable) -> String {
    let mut out = String::new();
    for e in pats.entries() {
        write_line(
            &mut out,
            e.probs.as_slice(),
            e.support,
            &tokens.render(e.pattern.tokens()),
        );
    }
    out
}

fn write_line(out: &mut String, probs: &[f64], support: usize, names: &str) {
    for (i, p) in probs.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        // both forms print the shortest digits that round-trip
        if *p != 0.0 && p.abs() < 1e-4 {
            write!(out, "{p:e}").unwrap();
        } else {
            write!(out, "{p}").unwrap();
        }
    }
    writeln!(out, "\t{support}\t{names}").unwrap();
}

/// Reads a pattern file, interning unseen token names into `tokens`.
pub fn read_pattern_set(
    text: &str,
    tokens: &mut TokenTable,
) -> Result<PatternSet, PatternFileError> {
    parse_lines(text, 0, &mut |name| Some(tokens.intern(name)))
}

/// Reads a pattern file whose tokens must all exist in `tokens`.
pub fn read_pattern_set_known(
    text: &str,
    tokens: &TokenTable,
) -> Result<PatternSet, PatternFileError> {
    parse_lines(text, 0, &mut |name| tokens.get(name))
}

fn parse_lines(
    text: &str,
    first_line: usize,
    resolve: &mut dyn FnMut(&str) -> Option<TokenId>,
) -> Result<PatternSet, PatternFileError> {
    let mut pats = PatternSet::new();
    for (i, raw) in text.lines().enumerate().skip(first_line) {
        let line = i + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 3 {
            return Err(PatternFileError::FieldCount {
                line,
                found: fields.len(),
            });
        }
        let probs = fields[0]
            .split(' ')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| PatternFileError::BadProbability {
                        line,
                        text: s.to_owned(),
                    })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        let probs = OccurrenceProbabilities::new(probs)
            .map_err(|source| PatternFileError::Probabilities { line, source })?;
        let support =
            fields[1]
                .trim()
                .parse::<usize>()
                .map_err(|_| PatternFileError::BadSupport {
                    line,
                    text: fields[1].to_owned(),
                })?;
        let names: Vec<&str> = fields[2].split(' ').filter(|s| !s.is_empty()).collect();
        if names.is_empty() {
            return Err(PatternFileError::EmptyPattern { line });
        }
        let mut ids = Vec::with_capacity(names.len());
        for name in names {
            let id = if is_valid_token(name) {
                resolve(name)
            } else {
                None
            };
            ids.push(id.ok_or_else(|| PatternFileError::UnknownToken {
                line,
                name: name.to_owned(),
            })?);
        }
        pats.insert(Pattern::new(ids), probs, support)
            .map_err(|_| PatternFileError::Duplicate { line })?;
    }
    Ok(pats)
}

/// Progress counters stored alongside a checkpointed pattern set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CheckpointCounters {
    pub outer_rounds: u64,
    pub em_iterations: u64,
    pub proposals: u64,
    pub accepted: u64,
}

/// Header, `# key=value` counter lines, then the pattern set.
pub fn write_checkpoint(
    pats: &PatternSet,
    tokens: &TokenTable,
    counters: &CheckpointCounters,
) -> String {
    let mut out = String::new();
    writeln!(out, "{CHECKPOINT_HEADER}").unwrap();
    writeln!(out, "# outer_rounds={}", counters.outer_rounds).unwrap();
    writeln!(out, "# em_iterations={}", counters.em_iterations).unwrap();
    writeln!(out, "# proposals={}", counters.proposals).unwrap();
    writeln!(out, "# accepted={}", counters.accepted).unwrap();
    out.push_str(&write_pattern_set(pats, tokens));
    out
}

fn read_counters(text: &str) -> Result<CheckpointCounters, PatternFileError> {
    let mut lines = text.lines();
    if lines.next().map(|l| l.trim_end()) != Some(CHECKPOINT_HEADER) {
        return Err(PatternFileError::BadHeader);
    }
    let mut counters = CheckpointCounters::default();
    for (i, raw) in lines.enumerate() {
        let line = i + 2;
        let Some(body) = raw.strip_prefix("# ") else {
            continue;
        };
        let Some((key, value)) = body.split_once('=') else {
            continue;
        };
        let slot = match key {
            "outer_rounds" => &mut counters.outer_rounds,
            "em_iterations" => &mut counters.em_iterations,
            "proposals" => &mut counters.proposals,
            "accepted" => &mut counters.accepted,
            _ => continue,
        };
        *slot = value
            .trim()
            .parse()
            .map_err(|_| PatternFileError::BadCounter {
                line,
                text: raw.to_owned(),
            })?;
    }
    Ok(counters)
}

/// Reads a checkpoint, interning token names into `tokens`.
pub fn read_checkpoint(
    text: &str,
    tokens: &mut TokenTable,
) -> Result<(PatternSet, CheckpointCounters), PatternFileError> {
    let counters = read_counters(text)?;
    let pats = parse_lines(text, 1, &mut |name| Some(tokens.intern(name)))?;
    Ok((pats, counters))
}

/// Reads a checkpoint whose tokens must all exist in `tokens`.
pub fn read_checkpoint_known(
    text: &str,
    tokens: &TokenTable,
) -> Result<(PatternSet, CheckpointCounters), PatternFileError> {
    let counters = read_counters(text)?;
    let pats = parse_lines(text, 1, &mut |name| tokens.get(name))?;
    Ok((pats, counters))
}
