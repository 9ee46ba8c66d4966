#![no_main]

use libfuzzer_sys::fuzz_target;
use pamine::corpus::TokenTable;
use pamine::patternfile::{read_pattern_set, write_pattern_set};

fuzz_target!(|text: &str| {
    let mut tokens = TokenTable::new();
    let Ok(pats) = read_pattern_set(text, &mut tokens) else {
        return;
    };
    let written = write_pattern_set(&pats, &tokens);
    let mut tokens2 = TokenTable::new();
    let back = read_pattern_set(&written, &mut tokens2).expect("written files parse");
    assert_eq!(write_pattern_set(&back, &tokens2), written);
});
