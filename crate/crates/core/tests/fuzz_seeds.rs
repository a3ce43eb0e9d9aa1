//! Replays the checked-in fuzz seeds through every parser entry point.

use std::fs;
use std::path::PathBuf;

use focalorder_core::corpus::{document_from_line, read_corpus};
use focalorder_core::report::{prediction_from_line, read_predictions};
use focalorder_core::trainer::checkpoint_from_json;
use focalorder_core::Error;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty());
    out
}

#[test]
fn corpus_line_seeds() {
    for (name, data) in seeds("corpus_line") {
        let text = String::from_utf8(data.clone()).unwrap();
        let parsed = document_from_line(text.trim_end(), 1);
        let expect_ok = matches!(name.as_str(), "generated" | "single" | "two");
        assert_eq!(parsed.is_ok(), expect_ok, "{name}: {parsed:?}");
        assert_eq!(read_corpus(&data[..]).is_ok(), expect_ok, "{name}");
    }
}

#[test]
fn prediction_line_seeds() {
    for (name, data) in seeds("prediction_line") {
        let text = String::from_utf8(data.clone()).unwrap();
        let first = text.lines().next().unwrap();
        assert!(prediction_from_line(first, 1).is_ok(), "{name}");
        assert_eq!(read_predictions(&data[..]).is_ok(), name != "duplicate", "{name}");
    }
}

#[test]
fn checkpoint_seeds() {
    for (name, data) in seeds("checkpoint") {
        let result = checkpoint_from_json(std::str::from_utf8(&data).unwrap());
        match name.as_str() {
            "trained" => assert!(result.is_ok(), "{result:?}"),
            "future_version" => assert!(matches!(result, Err(Error::VersionMismatch { found: 2, .. }))),
            "truncated" => assert!(matches!(result, Err(Error::Parse { .. }))),
            other => panic!("unexpected seed {other}"),
        }
    }
}
