//! Page geometry: boxes, elements, documents and reading orders.
//!
//! Coordinates use the document-imaging convention: origin at the top-left
//! corner of the page, `y` growing downward.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Labels used when no vocabulary is configured.
pub const DEFAULT_CATEGORIES: [&str; 8] = [
    "title", "text", "figure", "table", "caption", "header", "footer", "formula",
];

pub fn default_vocabulary() -> Vec<String> {
    DEFAULT_CATEGORIES.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BoundingBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let b = BoundingBox { x0, y0, x1, y1 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x0, self.y0, self.x1, self.y1]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidBox(format!("non-finite coordinate in {self:?}")));
        }
        if self.x0 > self.x1 || self.y0 > self.y1 {
            return Err(Error::InvalidBox(format!("inverted coordinates in {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn center(&self) -> (f64, f64) {
        bbox_center(self)
    }
}

pub fn bbox_center(bbox: &BoundingBox) -> (f64, f64) {
    ((bbox.x0 + bbox.x1) / 2.0, (bbox.y0 + bbox.y1) / 2.0)
}

/// Euclidean distance between box centers.
pub fn center_distance(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax, ay) = bbox_center(a);
    let (bx, by) = bbox_center(b);
    (ax - bx).hypot(ay - by)
}

/// Scales a box into the unit square of its page.
pub fn normalize_bbox(bbox: &BoundingBox, page_width: f64, page_height: f64) -> Result<BoundingBox> {
    if !(page_width > 0.0 && page_height > 0.0) || !page_width.is_finite() || !page_height.is_finite()
    {
        return Err(Error::InvalidPage {
            width: page_width,
            height: page_height,
        });
    }
    Ok(BoundingBox {
        x0: bbox.x0 / page_width,
        y0: bbox.y0 / page_height,
        x1: bbox.x1 / page_width,
        y1: bbox.y1 / page_height,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutElement {
    pub element_id: usize,
    pub bbox: BoundingBox,
    pub category: String,
}

/// A sequence of element indices. Model outputs are permutations; evaluation
/// accepts arbitrary index lists.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReadingOrder(pub Vec<usize>);

impl ReadingOrder {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn is_permutation_of(&self, n: usize) -> bool {
        is_permutation(&self.0, n)
    }
}

impl From<Vec<usize>> for ReadingOrder {
    fn from(v: Vec<usize>) -> Self {
        ReadingOrder(v)
    }
}

pub(crate) fn is_permutation(seq: &[usize], n: usize) -> bool {
    if seq.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &i in seq {
        if i >= n || seen[i] {
            return false;
        }
        seen[i] = true;
    }
    true
}

/// One page: elements in input order plus the ground-truth reading order.
///
/// `gt_order[r]` is the index (into `elements`) of the element read at rank `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub page_width: f64,
    pub page_height: f64,
    pub elements: Vec<LayoutElement>,
    pub gt_order: ReadingOrder,
}

impl Document {
    pub fn new(
        doc_id: impl Into<String>,
        page_width: f64,
        page_height: f64,
        elements: Vec<LayoutElement>,
        gt_order: Vec<usize>,
    ) -> Result<Self> {
        let doc = Document {
            doc_id: doc_id.into(),
            page_width,
            page_height,
            elements,
            gt_order: ReadingOrder(gt_order),
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.page_width, self.page_height);
        if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
            return Err(Error::InvalidPage { width: w, height: h });
        }
        if self.elements.is_empty() {
            return Err(Error::Validation(format!("document {:?} has no elements", self.doc_id)));
        }
        for e in &self.elements {
            e.bbox.validate()?;
            let b = &e.bbox;
            if b.x0 < 0.0 || b.y0 < 0.0 || b.x1 > w || b.y1 > h {
                return Err(Error::Validation(format!(
                    "document {:?}: element {} lies outside the {w}x{h} page",
                    self.doc_id, e.element_id
                )));
            }
        }
        if !self.gt_order.is_permutation_of(self.elements.len()) {
            return Err(Error::Validation(format!(
                "document {:?}: gt_order is not a permutation of 0..{}",
                self.doc_id,
                self.elements.len()
            )));
        }
        Ok(())
    }

    /// Fails with [`Error::UnknownCategory`] on the first label outside `vocab`.
    pub fn check_vocabulary(&self, vocab: &[String]) -> Result<()> {
        for e in &self.elements {
            if !vocab.iter().any(|c| c == &e.category) {
                return Err(Error::UnknownCategory(e.category.clone()));
            }
        }
        Ok(())
    }

    /// Rank of every element in the ground-truth order.
    pub fn order_index(&self) -> Vec<usize> {
        let mut rank = vec![0; self.len()];
        for (r, &i) in self.gt_order.0.iter().enumerate() {
            rank[i] = r;
        }
        rank
    }
}

/// Closest other element by center distance; ties go to the lowest index.
pub fn nearest_neighbor(doc: &Document, i: usize) -> Result<usize> {
    let n = doc.len();
    if i >= n {
        return Err(Error::IndexOutOfRange { index: i, len: n });
    }
    if n < 2 {
        return Err(Error::NoNeighbor(i));
    }
    let visited: Vec<bool> = (0..n).map(|j| j == i).collect();
    Ok(nearest_unvisited(doc, i, &visited).expect("at least one other element"))
}

/// Closest element to `i` among those with `visited[j] == false`, ties by
/// lowest index. `None` when everything is visited.
pub fn nearest_unvisited(doc: &Document, i: usize, visited: &[bool]) -> Option<usize> {
    let from = &doc.elements[i].bbox;
    let mut best: Option<(usize, f64)> = None;
    for (j, e) in doc.elements.iter().enumerate() {
        if j == i || visited[j] {
            continue;
        }
        let d = center_distance(from, &e.bbox);
        match best {
            Some((_, bd)) if d >= bd => {}
            _ => best = Some((j, d)),
        }
    }
    best.map(|(j, _)| j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    /// Document whose elements are unit boxes centered at the given points.
    fn doc_with_centers(centers: &[(f64, f64)]) -> Document {
        let elements = centers
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| LayoutElement {
                element_id: i,
                bbox: bx(x - 0.5 + 10.0, y - 0.5 + 10.0, x + 0.5 + 10.0, y + 0.5 + 10.0),
                category: "text".into(),
            })
            .collect();
        Document::new("d", 100.0, 100.0, elements, (0..centers.len()).collect()).unwrap()
    }

    #[test]
    fn centers() {
        assert_eq!(bbox_center(&bx(0.0, 0.0, 2.0, 4.0)), (1.0, 2.0));
        assert_eq!(bbox_center(&bx(5.0, 5.0, 5.0, 5.0)), (5.0, 5.0));
        assert_eq!(bbox_center(&bx(0.0, 0.0, 1.0, 1.0)), (0.5, 0.5));
    }

    #[test]
    fn distances() {
        let a = bx(-1.0, -1.0, 1.0, 1.0);
        let b = bx(2.0, 3.0, 4.0, 5.0);
        assert_eq!(center_distance(&a, &b), 5.0);
        assert_eq!(center_distance(&a, &a), 0.0);
        assert_eq!(center_distance(&a, &bx(-1.0, 0.0, 1.0, 2.0)), 1.0);
    }

    #[test]
    fn rejects_inverted_or_nan_boxes() {
        assert!(BoundingBox::new(1.0, 0.0, 0.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, f64::NAN, 1.0, 1.0).is_err());
    }

    #[test]
    fn nearest_neighbor_examples() {
        let d = doc_with_centers(&[(0.0, 0.0), (0.0, 1.0), (0.0, 3.0)]);
        assert_eq!(nearest_neighbor(&d, 0).unwrap(), 1);
        let d = doc_with_centers(&[(0.0, 0.0), (5.0, 5.0)]);
        assert_eq!(nearest_neighbor(&d, 0).unwrap(), 1);
        assert_eq!(nearest_neighbor(&d, 1).unwrap(), 0);
        let d = doc_with_centers(&[(0.0, 0.0), (0.0, 1.0), (1.0, 0.0)]);
        assert_eq!(nearest_neighbor(&d, 0).unwrap(), 1);
        let d = doc_with_centers(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]);
        assert_eq!(nearest_neighbor(&d, 0).unwrap(), 1);
    }

    #[test]
    fn single_element_has_no_neighbor() {
        let d = doc_with_centers(&[(0.0, 0.0)]);
        assert!(matches!(nearest_neighbor(&d, 0), Err(Error::NoNeighbor(0))));
    }

    #[test]
    fn normalize_examples() {
        let n = normalize_bbox(&bx(0.0, 0.0, 50.0, 100.0), 100.0, 200.0).unwrap();
        assert_eq!(n, bx(0.0, 0.0, 0.5, 0.5));
        let n = normalize_bbox(&bx(0.0, 0.0, 100.0, 200.0), 100.0, 200.0).unwrap();
        assert_eq!(n, bx(0.0, 0.0, 1.0, 1.0));
        let b = bx(0.1, 0.2, 0.3, 0.9);
        assert_eq!(normalize_bbox(&b, 1.0, 1.0).unwrap(), b);
        assert!(normalize_bbox(&b, 0.0, 1.0).is_err());
    }

    #[test]
    fn document_validation() {
        let e = LayoutElement {
            element_id: 0,
            bbox: bx(0.0, 0.0, 10.0, 10.0),
            category: "text".into(),
        };
        assert!(Document::new("a", 5.0, 50.0, vec![e.clone()], vec![0]).is_err());
        assert!(Document::new("a", 50.0, 50.0, vec![e.clone()], vec![1]).is_err());
        assert!(Document::new("a", 50.0, 50.0, vec![], vec![]).is_err());
        assert!(Document::new("a", 50.0, 50.0, vec![e], vec![0]).is_ok());
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0.0..100.0f64, 0.0..100.0f64, 0.0..50.0f64, 0.0..50.0f64)
            .prop_map(|(x, y, w, h)| BoundingBox { x0: x, y0: y, x1: x + w, y1: y + h })
    }

    proptest! {
        #[test]
        fn distance_is_a_metric(a in arb_box(), b in arb_box(), c in arb_box()) {
            prop_assert_eq!(center_distance(&a, &b), center_distance(&b, &a));
            prop_assert!(center_distance(&a, &c) <= center_distance(&a, &b) + center_distance(&b, &c) + 1e-9);
        }

        #[test]
        fn normalize_keeps_ordering(b in arb_box(), w in 1.0..500.0f64, h in 1.0..500.0f64) {
            let n = normalize_bbox(&b, w, h).unwrap();
            prop_assert!(n.x0 <= n.x1 && n.y0 <= n.y1);
        }

        #[test]
        fn nearest_is_never_self(pts in prop::collection::vec((0.0..50.0f64, 0.0..50.0f64), 2..12)) {
            let d = doc_with_centers(&pts);
            for i in 0..d.len() {
                let j = nearest_neighbor(&d, i).unwrap();
                prop_assert_ne!(i, j);
                prop_assert_eq!(j, nearest_neighbor(&d, i).unwrap());
            }
        }
    }
}
