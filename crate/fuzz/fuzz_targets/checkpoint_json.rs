#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    arterymatch_fuzz::checkpoint_json(data);
});
