#![no_main]

use focalorder_core::corpus::{document_from_line, document_to_line, read_corpus};
use focalorder_core::metrics::spatial_logical_mismatch;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = read_corpus(data);
    let Ok(line) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(doc) = document_from_line(line, 1) {
        let again = document_from_line(&document_to_line(&doc), 1).expect("re-encoded document parses");
        assert_eq!(again.gt_order, doc.gt_order);
        let report = spatial_logical_mismatch(&doc);
        assert!(report.positions.iter().all(|p| *p > 0.0 && *p <= 1.0));
    }
});
