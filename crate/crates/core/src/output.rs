//! Ranked-pattern output in TSV and JSON.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ClientSequence, IngestStats, TokenTable};
use crate::driver::{MiningConfig, RankedPattern, RunStats};
use crate::model::{Covering, ModelView};

pub const TSV_HEADER: &str = "rank\tprobability\tsupport\tpattern";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Tsv,
    Json,
}

/// Run metadata carried by JSON output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputMetadata {
    pub config: MiningConfig,
    pub database: IngestStats,
    pub stats: RunStats,
    /// Human-readable stop reason, e.g. `converged: budget`.
    pub convergence: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonOutput {
    pub patterns: Vec<RankedPattern>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<OutputMetadata>,
}

pub fn emit_tsv(ranked: &[RankedPattern]) -> String {
    let mut out = String::new();
    writeln!(out, "{TSV_HEADER}").unwrap();
    for r in ranked {
        writeln!(
            out,
            "{}\t{:.6}\t{}\t{}",
            r.rank,
            r.probability,
            r.support,
            r.pattern.join(" ")
        )
        .unwrap();
    }
    out
}

pub fn emit_json(ranked: &[RankedPattern], metadata: Option<&OutputMetadata>) -> String {
    let doc = JsonOutput {
        patterns: ranked.to_vec(),
        metadata: metadata.cloned(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("output is always serializable");
    s.push('\n');
    s
}

pub fn emit(
    ranked: &[RankedPattern],
    format: OutputFormat,
    metadata: Option<&OutputMetadata>,
) -> String {
    match format {
        OutputFormat::Tsv => emit_tsv(ranked),
        OutputFormat::Json => emit_json(ranked, metadata),
    }
}

/// JSON view of one sequence's covering, with patterns spelled by name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoveringDump {
    pub sequence_id: String,
    pub occurrences: Vec<OccurrenceDump>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccurrenceDump {
    pub pattern: Vec<String>,
    pub n: u32,
    pub positions: Vec<u32>,
}

pub fn covering_dump(
    sequence: &ClientSequence,
    covering: &Covering,
    model: &impl ModelView,
    tokens: &TokenTable,
) -> CoveringDump {
    CoveringDump {
        sequence_id: sequence.source_id.clone(),
        occurrences: covering
            .occurrences
            .iter()
            .map(|o| OccurrenceDump {
                pattern: model
                    .pattern(o.pattern)
                    .tokens()
                    .iter()
                    .map(|&t| tokens.name(t).to_owned())
                    .collect(),
                n: o.n,
                positions: o.positions.clone(),
            })
            .collect(),
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum OutputParseError {
    #[error("missing or wrong TSV header")]
    Header,
    #[error("line {line}: {reason}")]
    Row { line: usize, reason: &'static str },
    #[error("invalid JSON output: {0}")]
    Json(String),
}

/// One parsed TSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct TsvRow {
    pub rank: usize,
    pub probability: f64,
    pub support: usize,
    pub pattern: Vec<String>,
}

/// Parses TSV output, checking the header, field shapes and consecutive ranks.
pub fn parse_tsv(text: &str) -> Result<Vec<TsvRow>, OutputParseError> {
    let mut lines = text.lines();
    if lines.next() != Some(TSV_HEADER) {
        return Err(OutputParseError::Header);
    }
    let mut rows = Vec::new();
    for (i, raw) in lines.enumerate() {
        let line = i + 2;
        let row = |reason| OutputParseError::Row { line, reason };
        let f: Vec<&str> = raw.split('\t').collect();
        if f.len() != 4 {
            return Err(row("expected 4 fields"));
        }
        let rank: usize = f[0].parse().map_err(|_| row("bad rank"))?;
        if rank != rows.len() + 1 {
            return Err(row("ranks must be consecutive from 1"));
        }
        let probability: f64 = f[1].parse().map_err(|_| row("bad probability"))?;
        if !(0.0..=1.0).contains(&probability) {
            return Err(row("probability outside [0, 1]"));
        }
        let support: usize = f[2].parse().map_err(|_| row("bad support"))?;
        let pattern: Vec<String> = f[3].split(' ').map(str::to_owned).collect();
        if pattern.iter().any(|t| t.is_empty()) {
            return Err(row("bad pattern"));
        }
        rows.push(TsvRow {
            rank,
            probability,
            support,
            pattern,
        });
    }
    Ok(rows)
}

pub fn parse_json(text: &str) -> Result<JsonOutput, OutputParseError> {
    serde_json::from_str(text).map_err(|e| OutputParseError::Json(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ab() -> RankedPattern {
        RankedPattern {
            rank: 1,
            pattern: vec!["a".into(), "b".into()],
            probability: 0.9,
            support: 3,
            occurrence_probs: vec![0.9, 0.1],
        }
    }

    #[test]
    fn tsv_line_format() {
        let text = emit_tsv(&[ab()]);
        assert_eq!(
            text,
            "rank\tprobability\tsupport\tpattern\n1\t0.900000\t3\ta b\n"
        );
        let rows = parse_tsv(&text).unwrap();
        assert_eq!(rows[0].pattern, vec!["a", "b"]);
        assert_eq!(rows[0].support, 3);
    }

    #[test]
    fn empty_outputs() {
        assert_eq!(emit_tsv(&[]), format!("{TSV_HEADER}\n"));
        let json = emit_json(&[], None);
        assert_eq!(parse_json(&json).unwrap().patterns, vec![]);
        assert!(json.contains("\"patterns\": []"));
    }

    #[test]
    fn json_round_trip() {
        let mut other = ab();
        other.rank = 2;
        other.probability = 1.0 / 7.0;
        other.occurrence_probs = vec![1.0 / 7.0];
        let ranked = vec![ab(), other];
        let back = parse_json(&emit_json(&ranked, None)).unwrap();
        assert_eq!(back.patterns, ranked);
    }

    #[test]
    fn tsv_parser_rejects_bad_rows() {
        assert_eq!(parse_tsv("nope\n"), Err(OutputParseError::Header));
        assert!(parse_tsv(&format!("{TSV_HEADER}\n2\t0.5\t1\ta b\n")).is_err());
        assert!(parse_tsv(&format!("{TSV_HEADER}\n1\t1.5\t1\ta b\n")).is_err());
        assert!(parse_tsv(&format!("{TSV_HEADER}\n1\t0.5\t1\n")).is_err());
    }
}
