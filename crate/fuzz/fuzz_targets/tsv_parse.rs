//! The TSV quadruple reader must reject arbitrary bytes without panicking.

#![no_main]

use libfuzzer_sys::fuzz_target;
use tkge::data::parse_tsv;

fuzz_target!(|data: &[u8]| {
    let _ = parse_tsv(data, "fuzz");
});
