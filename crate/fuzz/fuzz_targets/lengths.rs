#![no_main]

use libfuzzer_sys::fuzz_target;
use perceiver_dla::flops::{self, ModelSpec};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(lengths) = flops::parse_lengths(text) else {
        return;
    };
    // huge lengths may overflow the cost model, which must say so rather than panic
    let lengths: Vec<_> = lengths.into_iter().take(64).collect();
    let _ = flops::corpus_ratio(&ModelSpec::paper_perceiver(64), &ModelSpec::paper_transformer(), &lengths);
});
