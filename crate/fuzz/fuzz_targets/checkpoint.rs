#![no_main]

use focalorder_core::trainer::{checkpoint_from_json, checkpoint_to_json};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(ckpt) = checkpoint_from_json(text) {
        let again = checkpoint_from_json(&checkpoint_to_json(&ckpt).unwrap()).unwrap();
        assert_eq!(again.params.config, ckpt.params.config);
        assert_eq!(again.step, ckpt.step);
    }
});
