#![no_main]

use libfuzzer_sys::fuzz_target;
use perceiver_dla::cli::{AttentionRecord, Checkpoint};
use perceiver_dla::dla;

fuzz_target!(|data: &[u8]| {
    let Ok(ckpt) = Checkpoint::decode(data) else {
        return;
    };
    let Ok(rec) = AttentionRecord::from_checkpoint(&ckpt) else {
        return;
    };
    let n = rec.z.rows();
    if n > 256 {
        return;
    }
    for k in 1..=n.min(4) {
        if let Ok(sel) = dla::select_diverse(&rec.z, &rec.a, k, Some(&rec.frame_mask)) {
            assert_eq!(sel.ids.len(), k);
            assert!(sel.ids.iter().all(|&i| i < n));
        }
    }
    assert!(dla::select_diverse(&rec.z, &rec.a, n + 1, Some(&rec.frame_mask)).is_err());
});
