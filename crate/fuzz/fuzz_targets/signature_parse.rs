//! Signature strings either fail to parse or round-trip through Display.

#![no_main]

use libfuzzer_sys::fuzz_target;
use tkge::product::ProductSignature;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(sig) = text.parse::<ProductSignature>() {
            let shown = sig.to_string();
            let again: ProductSignature = shown.parse().expect("display output re-parses");
            assert_eq!(again.to_string(), shown);
        }
    }
});
