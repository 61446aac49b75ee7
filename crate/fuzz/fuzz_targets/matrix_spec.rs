#![no_main]

use libfuzzer_sys::fuzz_target;
use mffilter::config::parse_matrix_spec;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(m) = parse_matrix_spec(text) {
        assert!(m.dim() > 0);
        assert_eq!(m.as_slice().len(), m.dim() * m.dim());
        assert!(m.is_finite());
    }
});
