#![no_main]

use libfuzzer_sys::fuzz_target;
use perceiver_dla::cli::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::decode(data) {
        // a decodable file is canonical: re-encoding gives the same bytes
        assert_eq!(ckpt.encode(), data);
    }
});
