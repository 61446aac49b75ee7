#![no_main]

use libfuzzer_sys::fuzz_target;
use mffilter::config::parse_kernel_spec;

fuzz_target!(|data: &[u8]| {
    let Some((&first, rest)) = data.split_first() else {
        return;
    };
    let Ok(text) = std::str::from_utf8(rest) else {
        return;
    };
    let dim = 1 + (first % 4) as usize;
    if let Ok(Some(kernel)) = parse_kernel_spec(text, dim) {
        assert_eq!(kernel.local_dim(), dim);
        assert!(kernel.pair_operator().is_finite());
    }
});
