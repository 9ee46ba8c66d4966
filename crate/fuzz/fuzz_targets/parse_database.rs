#![no_main]

use libfuzzer_sys::fuzz_target;
use pamine::corpus::{parse_database, parse_database_str, ParseOptions};

fuzz_target!(|data: &[u8]| {
    let options = ParseOptions {
        max_sequence_length: 64,
    };
    let Ok(db) = parse_database(data, &options) else {
        return;
    };
    // whatever was kept survives a write/read cycle unchanged
    let again = parse_database_str(&db.to_text(), &options);
    assert_eq!(again, db);
    for seq in db.sequences() {
        assert!(!seq.tokens.is_empty() && seq.tokens.len() <= 64);
    }
});
