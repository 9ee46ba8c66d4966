#![no_main]

use libfuzzer_sys::fuzz_target;
use pamine::corpus::TokenTable;
use pamine::patternfile::{read_checkpoint, write_checkpoint};

fuzz_target!(|text: &str| {
    let mut tokens = TokenTable::new();
    let Ok((pats, counters)) = read_checkpoint(text, &mut tokens) else {
        return;
    };
    let written = write_checkpoint(&pats, &tokens, &counters);
    let mut tokens2 = TokenTable::new();
    let (back, counters2) = read_checkpoint(&written, &mut tokens2).expect("written checkpoints parse");
    assert_eq!(counters2, counters);
    assert_eq!(back.len(), pats.len());
});
