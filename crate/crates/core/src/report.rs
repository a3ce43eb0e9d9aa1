//! Plot-ready CSV reports and prediction files.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{Document, ReadingOrder};
use crate::metrics::{spatial_logical_mismatch, DisparityProfile};
use crate::trainer::{DocEval, LogRow, SweepRow, WeightRow};

#[derive(Debug, Serialize)]
struct ProfileRow {
    bin_index: usize,
    bin_lo: f64,
    bin_hi: f64,
    token_count: u64,
    error_count: f64,
    error_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchRow {
    pub doc_id: String,
    pub transition_index: usize,
    pub relative_position: f64,
}

fn write_rows<W: Write, T: Serialize>(out: W, rows: impl IntoIterator<Item = T>, header: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub fn write_profile_csv<W: Write>(profile: &DisparityProfile, out: W) -> Result<()> {
    let k = profile.k() as f64;
    let rows = profile.bins.iter().enumerate().map(|(i, b)| ProfileRow {
        bin_index: i,
        bin_lo: i as f64 / k,
        bin_hi: (i + 1) as f64 / k,
        token_count: b.token_count,
        error_count: b.error_count,
        error_rate: b.error_rate(),
    });
    write_rows(
        out,
        rows,
        &["bin_index", "bin_lo", "bin_hi", "token_count", "error_count", "error_rate"],
    )
}

pub fn mismatch_rows(corpus: &[Document]) -> Vec<MismatchRow> {
    let mut rows = Vec::new();
    for doc in corpus {
        let report = spatial_logical_mismatch(doc);
        for (&t, &p) in report.transitions.iter().zip(&report.positions) {
            rows.push(MismatchRow {
                doc_id: doc.doc_id.clone(),
                transition_index: t,
                relative_position: p,
            });
        }
    }
    rows
}

pub fn write_mismatch_csv<W: Write>(rows: &[MismatchRow], out: W) -> Result<()> {
    write_rows(out, rows, &["doc_id", "transition_index", "relative_position"])
}

pub fn write_weights_csv<W: Write>(rows: &[WeightRow], out: W) -> Result<()> {
    write_rows(out, rows, &["iteration", "bin_index", "ema_loss", "weight"])
}

pub fn write_log_csv<W: Write>(rows: &[LogRow], out: W) -> Result<()> {
    write_rows(out, rows, &["step", "lr", "total", "weighted_ce", "rank_loss", "pairs_used"])
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    write_rows(
        out,
        rows,
        &["param", "value", "seed", "mean_edit", "middle_mean", "boundary_mean"],
    )
}

#[derive(Debug, Serialize)]
struct PerDocRow<'a> {
    doc_id: &'a str,
    edit: f64,
}

pub fn write_per_doc_csv<W: Write>(rows: &[DocEval], out: W) -> Result<()> {
    write_rows(
        out,
        rows.iter().map(|r| PerDocRow {
            doc_id: &r.doc_id,
            edit: r.edit,
        }),
        &["doc_id", "edit"],
    )
}

/// Writes `f(file)` to `path`, replacing any existing file.
pub fn write_file(path: impl AsRef<Path>, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    f(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub doc_id: String,
    pub pred_order: Vec<usize>,
}

pub fn prediction_to_line(p: &Prediction) -> String {
    serde_json::to_string(p).expect("predictions always serialize")
}

pub fn prediction_from_line(line: &str, line_no: usize) -> Result<Prediction> {
    serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })
}

pub fn write_predictions<W: Write>(preds: &[Prediction], mut out: W) -> Result<()> {
    for p in preds {
        writeln!(out, "{}", prediction_to_line(p)).map_err(|e| Error::io("<predictions>", e))?;
    }
    Ok(())
}

/// Reads a prediction file; blank lines are skipped, duplicate ids rejected.
pub fn read_predictions<R: BufRead>(input: R) -> Result<Vec<Prediction>> {
    let mut preds = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let p = prediction_from_line(&line, i + 1)?;
        if !seen.insert(p.doc_id.clone()) {
            return Err(Error::Validation(format!("line {}: duplicate doc_id {:?}", i + 1, p.doc_id)));
        }
        preds.push(p);
    }
    Ok(preds)
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_predictions(BufReader::new(file))
}

pub fn predictions_from_eval(rows: &[DocEval]) -> Vec<Prediction> {
    rows.iter()
        .map(|r| Prediction {
            doc_id: r.doc_id.clone(),
            pred_order: r.pred_order.0.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub profile: DisparityProfile,
    /// Documents whose prediction is not a permutation of their elements.
    pub non_permutations: Vec<String>,
    /// Ground-truth documents with no prediction, scored as empty sequences.
    pub missing: Vec<String>,
}

/// Profiles predictions against a ground-truth corpus. Predictions need not
/// be permutations; a document without a prediction counts as all deletions.
pub fn analyze_predictions(preds: &[Prediction], gt: &[Document], k: usize) -> Result<Analysis> {
    if k == 0 {
        return Err(Error::Config("bin count must be at least 1".into()));
    }
    let by_id: BTreeMap<&str, &Document> = gt.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    let mut pred_by_id = BTreeMap::new();
    for p in preds {
        if !by_id.contains_key(p.doc_id.as_str()) {
            return Err(Error::Validation(format!(
                "prediction for doc_id {:?} has no ground-truth document",
                p.doc_id
            )));
        }
        pred_by_id.insert(p.doc_id.as_str(), p);
    }
    let mut profile = DisparityProfile::new(k);
    let mut non_permutations = Vec::new();
    let mut missing = Vec::new();
    for doc in gt {
        let pred: &[usize] = match pred_by_id.get(doc.doc_id.as_str()) {
            Some(p) => {
                if !ReadingOrder(p.pred_order.clone()).is_permutation_of(doc.len()) {
                    non_permutations.push(doc.doc_id.clone());
                }
                &p.pred_order
            }
            None => {
                missing.push(doc.doc_id.clone());
                &[]
            }
        };
        profile.add_pair(pred, doc.gt_order.as_slice());
    }
    if !non_permutations.is_empty() {
        log::warn!(
            "{} prediction(s) are not permutations of their document, first {:?}",
            non_permutations.len(),
            non_permutations[0]
        );
    }
    Ok(Analysis {
        profile,
        non_permutations,
        missing,
    })
}
