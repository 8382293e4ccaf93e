//! Checkpoint decoding (manifest JSON plus raw f64 blob) must fail cleanly
//! on corrupt bytes: wrong lengths, bad enums, non-finite floats.

#![no_main]

use std::sync::OnceLock;

use libfuzzer_sys::fuzz_target;
use tkge::checkpoint::{decode_manifest, decode_params, Manifest};
use tkge::model::{ModelConfig, ModelParams};
use tkge::train::Checkpoint;

/// Smallest valid layout (1 entity, 1 predicate, dim 1: a 64-byte blob),
/// so the fuzzer reaches the float-decoding path, not just length checks.
fn tiny_manifest() -> &'static Manifest {
    static M: OnceLock<Manifest> = OnceLock::new();
    M.get_or_init(|| {
        let model = ModelConfig::new("E1@0".parse().unwrap());
        let params = ModelParams::init(1, 1, &model, 0);
        Manifest::for_checkpoint(&Checkpoint {
            model,
            params,
            epoch: 0,
            best_val_mrr: 0.0,
            seed: 0,
            num_timestamps: 1,
        })
        .expect("static layout is valid")
    })
}

fuzz_target!(|data: &[u8]| {
    if let Ok((manifest, _model)) = decode_manifest(data) {
        let _ = decode_params(&manifest, data);
    }
    let _ = decode_params(tiny_manifest(), data);
});
