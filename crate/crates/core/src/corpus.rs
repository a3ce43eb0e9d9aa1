//! Seeded synthetic pages and the line-delimited corpus format.
//!
//! Every generated page is a full-width header stack (first ~20% of the
//! reading order), a body and a full-width footer stack (last ~20%). Only the
//! body carries order-breaking constructs: multiple columns, whose breaks
//! jump from a column bottom to the next column top, and figure/caption
//! floats whose caption sits above the figure but is read after it. This
//! confines spatial-logical mismatches to relative positions 0.2..=0.8.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::layout::{BoundingBox, Document, LayoutElement};
use crate::metrics::spatial_logical_mismatch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_docs: usize,
    pub elements_min: usize,
    pub elements_max: usize,
    pub columns_min: usize,
    pub columns_max: usize,
    /// Probability of each order-breaking construct.
    pub ambiguity: f64,
    pub page_width: f64,
    pub page_height: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_docs: 2000,
            elements_min: 20,
            elements_max: 40,
            columns_min: 1,
            columns_max: 3,
            ambiguity: 0.6,
            page_width: 1000.0,
            page_height: 1400.0,
            seed: 42,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.elements_max < 1 {
            return Err(Error::Config("elements_max must be at least 1".into()));
        }
        if self.elements_min > self.elements_max {
            return Err(Error::Config(format!(
                "elements_min ({}) exceeds elements_max ({})",
                self.elements_min, self.elements_max
            )));
        }
        if self.columns_min < 1 || self.columns_min > self.columns_max {
            return Err(Error::Config(format!(
                "column range {}..={} is invalid",
                self.columns_min, self.columns_max
            )));
        }
        if !(0.0..=1.0).contains(&self.ambiguity) {
            return Err(Error::Config(format!("ambiguity {} outside [0, 1]", self.ambiguity)));
        }
        if !(self.page_width > 0.0 && self.page_height > 0.0)
            || !self.page_width.is_finite()
            || !self.page_height.is_finite()
        {
            return Err(Error::InvalidPage {
                width: self.page_width,
                height: self.page_height,
            });
        }
        Ok(())
    }
}

/// A box placed in reading order, before input indices are shuffled.
struct Placed {
    bbox: BoundingBox,
    category: &'static str,
}

/// Lays out `count` boxes top to bottom in `[top, bottom]`, centered on
/// `cx`, all `width` wide (floats may be narrower).
struct Stack {
    cx: f64,
    width: f64,
    top: f64,
    bottom: f64,
}

impl Stack {
    fn fill(&self, rng: &mut ChaCha8Rng, items: &[Item], out: &mut Vec<Placed>) {
        let units: f64 = items.iter().map(Item::units).sum();
        if units == 0.0 {
            return;
        }
        let slot = (self.bottom - self.top) / units;
        let mut y = self.top;
        for item in items {
            let h_slot = slot * item.units();
            let fill = rng.gen_range(0.55..0.85);
            let h = h_slot * fill;
            let pad = (h_slot - h) / 2.0;
            match *item {
                Item::Block(category) => {
                    let w = if category == "title" || category == "header" || category == "footer" {
                        self.width * rng.gen_range(0.5..1.0)
                    } else {
                        self.width
                    };
                    out.push(Placed {
                        bbox: centered(self.cx, w, y + pad, y + pad + h),
                        category,
                    });
                }
                Item::Float => {
                    // Caption on top, figure below; the figure is read first.
                    let cap_h = h * 0.2;
                    let fig_h = h * 0.75;
                    let gap = h - cap_h - fig_h;
                    let fig_w = self.width * rng.gen_range(0.6..1.0);
                    let cap_w = self.width * rng.gen_range(0.6..1.0);
                    let caption = centered(self.cx, cap_w, y + pad, y + pad + cap_h);
                    let figure = centered(self.cx, fig_w, y + pad + cap_h + gap, y + pad + h);
                    out.push(Placed { bbox: figure, category: "figure" });
                    out.push(Placed { bbox: caption, category: "caption" });
                }
            }
            y += h_slot;
        }
    }
}

fn centered(cx: f64, w: f64, y0: f64, y1: f64) -> BoundingBox {
    BoundingBox {
        x0: cx - w / 2.0,
        y0,
        x1: cx + w / 2.0,
        y1,
    }
}

#[derive(Debug, Clone, Copy)]
enum Item {
    Block(&'static str),
    /// Figure plus caption, two elements in two slot units.
    Float,
}

impl Item {
    fn units(&self) -> f64 {
        match self {
            Item::Block(_) => 1.0,
            Item::Float => 2.0,
        }
    }

    fn elements(&self) -> usize {
        match self {
            Item::Block(_) => 1,
            Item::Float => 2,
        }
    }
}

fn body_category(rng: &mut ChaCha8Rng) -> &'static str {
    let u: f64 = rng.gen();
    if u < 0.8 {
        "text"
    } else if u < 0.9 {
        "formula"
    } else {
        "table"
    }
}

/// Relative positions `(t + 1) / T` allowed to carry a mismatch.
const AMBIGUOUS_ZONE: (f64, f64) = (0.2, 0.8);

pub fn generate_document(cfg: &GeneratorConfig, doc_seed: u64) -> Result<Document> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(doc_seed);
    let n = rng.gen_range(cfg.elements_min.max(1)..=cfg.elements_max);
    // Decisions are drawn in a fixed order regardless of `ambiguity` so that
    // raising it only switches constructs on.
    let u_columns: f64 = rng.gen();
    let columns_pick = rng.gen_range(cfg.columns_min.max(2)..=cfg.columns_max.max(2));
    let u_floats: Vec<f64> = (0..cfg.columns_max.max(2)).map(|_| rng.gen()).collect();
    let float_pos: Vec<f64> = (0..cfg.columns_max.max(2)).map(|_| rng.gen()).collect();
    let layout_seed: u64 = rng.gen();
    let shuffle_seed: u64 = rng.gen();

    let columns = if cfg.ambiguity > 0.0 && cfg.columns_max >= 2 && u_columns < cfg.ambiguity {
        columns_pick
    } else {
        1
    };
    let floats: Vec<bool> = u_floats.iter().map(|&u| u < cfg.ambiguity).collect();

    let mut placed = layout_page(cfg, n, columns, &floats, &float_pos, layout_seed);
    let mut doc = assemble(cfg, doc_seed, &placed, shuffle_seed)?;
    if !mismatches_confined(&doc) {
        // Degenerate geometry (tiny pages, extreme counts): fall back to a
        // plain single column.
        placed = layout_page(cfg, n, 1, &[], &[], layout_seed);
        doc = assemble(cfg, doc_seed, &placed, shuffle_seed)?;
    }
    Ok(doc)
}

fn mismatches_confined(doc: &Document) -> bool {
    spatial_logical_mismatch(doc)
        .positions
        .iter()
        .all(|&p| p >= AMBIGUOUS_ZONE.0 && p <= AMBIGUOUS_ZONE.1)
}

fn layout_page(
    cfg: &GeneratorConfig,
    n: usize,
    columns: usize,
    floats: &[bool],
    float_pos: &[f64],
    layout_seed: u64,
) -> Vec<Placed> {
    let mut rng = ChaCha8Rng::seed_from_u64(layout_seed);
    let (w, h) = (cfg.page_width, cfg.page_height);
    let margin_x = w * 0.05;
    let margin_y = h * 0.035;
    let content_w = w - 2.0 * margin_x;
    let cx = w / 2.0;

    // Ranks 1..=head are the header stack, head+1..=body_end the body.
    let head = ((0.2 * n as f64).ceil() as usize).saturating_sub(1);
    let body_end = ((0.8 * n as f64).floor() as usize).max(head);
    let body = body_end - head;
    let foot = n - body_end;

    let unit_h = (h - 2.0 * margin_y) / (n as f64 + 1.0);
    let head_bottom = margin_y + unit_h * head as f64;
    let foot_top = h - margin_y - unit_h * foot as f64;
    let body_top = head_bottom + unit_h * 0.5;
    let body_bottom = foot_top - unit_h * 0.5;

    let mut out = Vec::with_capacity(n);
    let head_items: Vec<Item> = (0..head)
        .map(|i| {
            if i == 0 {
                Item::Block("header")
            } else if i == 1 {
                Item::Block("title")
            } else {
                Item::Block("text")
            }
        })
        .collect();
    Stack {
        cx,
        width: content_w,
        top: margin_y,
        bottom: head_bottom,
    }
    .fill(&mut rng, &head_items, &mut out);

    let columns = columns.max(1).min(body.max(1));
    let gutter = if columns > 1 { content_w * 0.04 } else { 0.0 };
    let col_w = (content_w - gutter * (columns as f64 - 1.0)) / columns as f64;
    for c in 0..columns {
        // Spread body elements as evenly as possible over the columns.
        let count = body / columns + usize::from(c < body % columns);
        let mut items: Vec<Item> = Vec::new();
        let mut remaining = count;
        let want_float = floats.get(c).copied().unwrap_or(false) && count >= 3;
        let float_at = if want_float {
            let slots = count - 1;
            Some(((float_pos[c] * slots as f64) as usize).min(slots - 1))
        } else {
            None
        };
        while remaining > 0 {
            if Some(items.len()) == float_at && remaining >= 2 {
                items.push(Item::Float);
            } else {
                items.push(Item::Block(body_category(&mut rng)));
            }
            remaining -= items.last().map(Item::elements).unwrap_or(1);
        }
        let ccx = margin_x + col_w / 2.0 + c as f64 * (col_w + gutter);
        Stack {
            cx: ccx,
            width: col_w,
            top: body_top,
            bottom: body_bottom,
        }
        .fill(&mut rng, &items, &mut out);
    }

    let foot_items: Vec<Item> = (0..foot)
        .map(|i| {
            if i + 1 == foot && foot > 1 {
                Item::Block("footer")
            } else {
                Item::Block("text")
            }
        })
        .collect();
    Stack {
        cx,
        width: content_w,
        top: foot_top,
        bottom: h - margin_y,
    }
    .fill(&mut rng, &foot_items, &mut out);
    debug_assert_eq!(out.len(), n);
    out
}

fn assemble(cfg: &GeneratorConfig, doc_seed: u64, placed: &[Placed], shuffle_seed: u64) -> Result<Document> {
    let n = placed.len();
    // perm[input_index] = reading rank
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
    let mut gt_order = vec![0; n];
    let mut elements = Vec::with_capacity(n);
    for (input_index, &rank) in perm.iter().enumerate() {
        gt_order[rank] = input_index;
        elements.push(LayoutElement {
            element_id: input_index,
            bbox: placed[rank].bbox,
            category: placed[rank].category.to_string(),
        });
    }
    Document::new(
        format!("doc-{doc_seed}"),
        cfg.page_width,
        cfg.page_height,
        elements,
        gt_order,
    )
}

/// `n_docs` documents, document `i` generated from `seed + i`.
pub fn generate_corpus(cfg: &GeneratorConfig) -> Result<Vec<Document>> {
    cfg.validate()?;
    (0..cfg.n_docs as u64)
        .map(|i| generate_document(cfg, cfg.seed.wrapping_add(i)))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct ElementRecord {
    bbox: [f64; 4],
    category: String,
    order_index: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct DocumentRecord {
    doc_id: String,
    page_width: f64,
    page_height: f64,
    elements: Vec<ElementRecord>,
}

/// One document as a single interchange line (no trailing newline).
pub fn document_to_line(doc: &Document) -> String {
    let rank = doc.order_index();
    let record = DocumentRecord {
        doc_id: doc.doc_id.clone(),
        page_width: doc.page_width,
        page_height: doc.page_height,
        elements: doc
            .elements
            .iter()
            .enumerate()
            .map(|(i, e)| ElementRecord {
                bbox: [e.bbox.x0, e.bbox.y0, e.bbox.x1, e.bbox.y1],
                category: e.category.clone(),
                order_index: rank[i],
            })
            .collect(),
    };
    serde_json::to_string(&record).expect("document records always serialize")
}

/// Parses one interchange line. `line_no` is only used in error messages.
pub fn document_from_line(line: &str, line_no: usize) -> Result<Document> {
    let record: DocumentRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    let n = record.elements.len();
    let mut gt_order = vec![usize::MAX; n];
    let mut elements = Vec::with_capacity(n);
    for (i, e) in record.elements.into_iter().enumerate() {
        if e.order_index >= n {
            return Err(Error::Validation(format!(
                "line {line_no}: order_index {} out of range for {n} elements",
                e.order_index
            )));
        }
        if gt_order[e.order_index] != usize::MAX {
            return Err(Error::Validation(format!(
                "line {line_no}: duplicate order_index {}",
                e.order_index
            )));
        }
        gt_order[e.order_index] = i;
        let [x0, y0, x1, y1] = e.bbox;
        elements.push(LayoutElement {
            element_id: i,
            bbox: BoundingBox { x0, y0, x1, y1 },
            category: e.category,
        });
    }
    Document::new(record.doc_id, record.page_width, record.page_height, elements, gt_order).map_err(
        |err| match err {
            Error::Validation(m) => Error::Validation(format!("line {line_no}: {m}")),
            Error::InvalidBox(m) => Error::Validation(format!("line {line_no}: {m}")),
            Error::InvalidPage { width, height } => {
                Error::Validation(format!("line {line_no}: invalid page {width}x{height}"))
            }
            other => other,
        },
    )
}

pub fn write_corpus<W: Write>(docs: &[Document], mut out: W) -> Result<()> {
    for d in docs {
        writeln!(out, "{}", document_to_line(d)).map_err(|e| Error::io("<corpus>", e))?;
    }
    Ok(())
}

pub fn read_corpus<R: BufRead>(input: R) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        docs.push(document_from_line(&line, i + 1)?);
    }
    Ok(docs)
}

pub fn save_corpus(docs: &[Document], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_corpus(docs, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file))
}

/// Hex SHA-256 of the corpus in interchange encoding.
pub fn corpus_hash(docs: &[Document]) -> String {
    let mut h = Sha256::new();
    for d in docs {
        h.update(document_to_line(d).as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::spatial_logical_mismatch;

    fn cfg(ambiguity: f64) -> GeneratorConfig {
        GeneratorConfig {
            n_docs: 50,
            ambiguity,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn zero_ambiguity_is_a_clean_stack() {
        for s in 0..40 {
            let d = generate_document(&cfg(0.0), s).unwrap();
            assert_eq!(spatial_logical_mismatch(&d).count(), 0, "seed {s}");
            let xs: Vec<f64> = d.elements.iter().map(|e| e.bbox.center().0).collect();
            assert!(xs.iter().all(|x| (x - xs[0]).abs() < 1e-9));
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_document(&cfg(0.6), 9).unwrap();
        let b = generate_document(&cfg(0.6), 9).unwrap();
        assert_eq!(document_to_line(&a), document_to_line(&b));
        assert_ne!(document_to_line(&a), document_to_line(&generate_document(&cfg(0.6), 10).unwrap()));
    }

    #[test]
    fn fixed_element_count() {
        let c = GeneratorConfig {
            elements_min: 30,
            elements_max: 30,
            ..cfg(0.6)
        };
        for d in generate_corpus(&c).unwrap() {
            assert_eq!(d.len(), 30);
        }
    }

    #[test]
    fn mismatches_stay_in_the_middle() {
        let c = GeneratorConfig {
            n_docs: 300,
            elements_min: 3,
            elements_max: 45,
            columns_max: 4,
            ambiguity: 1.0,
            ..GeneratorConfig::default()
        };
        let mut total = 0;
        for d in generate_corpus(&c).unwrap() {
            d.validate().unwrap();
            let m = spatial_logical_mismatch(&d);
            total += m.count();
            for p in m.positions {
                assert!((0.2..=0.8).contains(&p), "{} at {p}", d.doc_id);
            }
        }
        assert!(total > 300);
    }

    #[test]
    fn more_ambiguity_more_mismatches() {
        let count = |a: f64| -> usize {
            generate_corpus(&GeneratorConfig { n_docs: 150, ..cfg(a) })
                .unwrap()
                .iter()
                .map(|d| spatial_logical_mismatch(d).count())
                .sum()
        };
        let levels = [0.0, 0.2, 0.5, 0.8, 1.0];
        let counts: Vec<usize> = levels.iter().map(|&a| count(a)).collect();
        assert_eq!(counts[0], 0);
        for w in counts.windows(2) {
            assert!(w[0] <= w[1], "{counts:?}");
        }
    }

    #[test]
    fn config_errors() {
        let bad = GeneratorConfig { elements_max: 0, elements_min: 0, ..cfg(0.5) };
        assert!(matches!(generate_document(&bad, 0), Err(Error::Config(_))));
        let bad = GeneratorConfig { elements_min: 5, elements_max: 4, ..cfg(0.5) };
        assert!(generate_corpus(&bad).is_err());
        let bad = GeneratorConfig { ambiguity: 1.5, ..cfg(0.5) };
        assert!(generate_corpus(&bad).is_err());
        assert!(generate_corpus(&GeneratorConfig { n_docs: 0, ..cfg(0.5) }).unwrap().is_empty());
    }

    #[test]
    fn round_trip() {
        let docs = generate_corpus(&cfg(0.6)).unwrap();
        let mut buf = Vec::new();
        write_corpus(&docs, &mut buf).unwrap();
        let back = read_corpus(buf.as_slice()).unwrap();
        assert_eq!(back, docs);
        assert_eq!(corpus_hash(&back), corpus_hash(&docs));
        assert!(read_corpus(&b""[..]).unwrap().is_empty());
    }

    #[test]
    fn rejects_bad_lines() {
        let dup = r#"{"doc_id":"a","page_width":10,"page_height":10,"elements":[{"bbox":[0,0,1,1],"category":"text","order_index":0},{"bbox":[0,2,1,3],"category":"text","order_index":0}]}"#;
        assert!(matches!(document_from_line(dup, 3), Err(Error::Validation(m)) if m.contains("line 3")));
        let range = r#"{"doc_id":"a","page_width":10,"page_height":10,"elements":[{"bbox":[0,0,1,1],"category":"text","order_index":1}]}"#;
        assert!(matches!(document_from_line(range, 1), Err(Error::Validation(_))));
        let input = format!("{dup}\nnot json\n");
        match read_corpus(input.as_bytes()) {
            Err(Error::Validation(m)) => assert!(m.contains("line 1")),
            other => panic!("{other:?}"),
        }
        match read_corpus(&b"\n{\"doc_id\": 3}\n"[..]) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let outside = r#"{"doc_id":"a","page_width":10,"page_height":10,"elements":[{"bbox":[0,0,11,1],"category":"text","order_index":0}]}"#;
        assert!(matches!(document_from_line(outside, 1), Err(Error::Validation(_))));
    }
}
