#![no_main]

use libfuzzer_sys::fuzz_target;
use pamine::output::{emit_json, parse_json, parse_tsv};

fuzz_target!(|text: &str| {
    if let Ok(rows) = parse_tsv(text) {
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.rank, i + 1);
            assert!((0.0..=1.0).contains(&row.probability));
        }
    }
    if let Ok(doc) = parse_json(text) {
        let again = parse_json(&emit_json(&doc.patterns, doc.metadata.as_ref())).expect("emitted JSON parses");
        assert_eq!(again.patterns.len(), doc.patterns.len());
    }
});
