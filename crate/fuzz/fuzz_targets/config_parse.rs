//! Run-configuration JSON rejects malformed input without panicking.

#![no_main]

use libfuzzer_sys::fuzz_target;
use tkge::config::parse_config;

fuzz_target!(|data: &[u8]| {
    let _ = parse_config(data);
});
