#![no_main]

use focalorder_core::metrics::DisparityProfile;
use focalorder_core::report::{prediction_from_line, prediction_to_line, read_predictions};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = read_predictions(data);
    let Ok(line) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(p) = prediction_from_line(line, 1) {
        assert_eq!(prediction_from_line(&prediction_to_line(&p), 1).unwrap(), p);
        if p.pred_order.len() <= 256 {
            let gt: Vec<usize> = (0..p.pred_order.len()).collect();
            let mut profile = DisparityProfile::new(10);
            profile.add_pair(&p.pred_order, &gt);
            assert!(profile.total_errors() <= 2.0 * gt.len() as f64);
        }
    }
});
