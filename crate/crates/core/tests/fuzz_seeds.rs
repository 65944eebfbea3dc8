//! Replays the fuzz seed corpora through the properties the fuzz targets
//! assert, so they run without a nightly toolchain.

use std::fs;
use std::path::PathBuf;

use perceiver_dla::cli::{AttentionRecord, Checkpoint, Config};
use perceiver_dla::dla;
use perceiver_dla::flops::{self, ModelSpec};

fn seeds(target: &str) -> Vec<Vec<u8>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir).unwrap().map(|e| fs::read(e.unwrap().path()).unwrap()).collect();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    // truncations exercise every early-exit path of the decoders
    let cuts: Vec<_> = out.iter().flat_map(|s| (0..s.len()).step_by(7).map(|n| s[..n].to_vec())).collect();
    out.extend(cuts);
    out
}

#[test]
fn config_seeds_round_trip() {
    let mut parsed = 0;
    for data in seeds("config") {
        if let Ok(cfg) = Config::parse(std::str::from_utf8(&data).unwrap_or("")) {
            assert_eq!(Config::parse(&cfg.to_text()).unwrap(), cfg);
            parsed += 1;
        }
    }
    assert!(parsed >= 2);
}

#[test]
fn checkpoint_seeds_are_canonical() {
    let all = seeds("checkpoint");
    assert!(Checkpoint::decode(&all[0]).is_ok());
    for data in all {
        if let Ok(ckpt) = Checkpoint::decode(&data) {
            assert_eq!(ckpt.encode(), data);
        }
    }
}

#[test]
fn lengths_seeds_price() {
    for data in seeds("lengths") {
        let Ok(lengths) = flops::parse_lengths(std::str::from_utf8(&data).unwrap_or("")) else {
            continue;
        };
        if !lengths.is_empty() {
            let r = flops::corpus_ratio(&ModelSpec::paper_perceiver(64), &ModelSpec::paper_transformer(), &lengths).unwrap();
            assert!(r > 0.0);
        }
    }
}

#[test]
fn record_seeds_select() {
    let mut selected = 0;
    for data in seeds("record") {
        let Ok(ckpt) = Checkpoint::decode(&data) else { continue };
        let Ok(rec) = AttentionRecord::from_checkpoint(&ckpt) else { continue };
        let n = rec.z.rows();
        for k in 1..=n.min(4) {
            let sel = dla::select_diverse(&rec.z, &rec.a, k, Some(&rec.frame_mask)).unwrap();
            assert_eq!(sel.ids.len(), k);
            selected += 1;
        }
        assert!(dla::select_diverse(&rec.z, &rec.a, n + 1, Some(&rec.frame_mask)).is_err());
    }
    assert!(selected > 0);
}
