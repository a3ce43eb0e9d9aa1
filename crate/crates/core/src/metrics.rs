//! Evaluation protocol: edit distance, the inverted-edit-distance reward,
//! alignment-based positional error attribution and spatial-logical
//! mismatch analysis.

use serde::{Deserialize, Serialize};

use crate::bins::bin_index;
use crate::error::{Error, Result};
use crate::layout::{nearest_unvisited, Document};

/// Unit-cost edit distance.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - Lev(pred, gt) / max(|pred|, |gt|)`.
pub fn order_reward<T: PartialEq>(pred: &[T], gt: &[T]) -> Result<f64> {
    let longest = pred.len().max(gt.len());
    if longest == 0 {
        return Err(Error::UndefinedReward);
    }
    Ok(1.0 - levenshtein(pred, gt) as f64 / longest as f64)
}

/// Normalized edit distance, `1 - order_reward`.
pub fn normalized_edit<T: PartialEq>(pred: &[T], gt: &[T]) -> Result<f64> {
    let longest = pred.len().max(gt.len());
    if longest == 0 {
        return Err(Error::UndefinedReward);
    }
    Ok(levenshtein(pred, gt) as f64 / longest as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AlignmentKind {
    Match,
    Substitution,
    /// A ground-truth token missing from the prediction.
    Deletion,
    /// An extra predicted token.
    Insertion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AlignmentOp {
    pub kind: AlignmentKind,
    /// 1-based ground-truth position the op is charged to.
    pub gt_index: usize,
}

impl AlignmentOp {
    pub fn error(&self) -> usize {
        usize::from(self.kind != AlignmentKind::Match)
    }
}

/// Minimal-cost alignment of `pred` against `gt`, in ground-truth order.
///
/// Among equal-cost moves the backtrace prefers Match, then Substitution,
/// then Deletion, then Insertion. Insertions are charged to the preceding
/// ground-truth index (index 1 when nothing precedes them).
pub fn align_backtrace<T: PartialEq>(pred: &[T], gt: &[T]) -> Vec<AlignmentOp> {
    let (n, m) = (pred.len(), gt.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        d[i * w] = i;
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(pred[i - 1] != gt[j - 1]);
            d[i * w + j] = sub.min(d[(i - 1) * w + j] + 1).min(d[i * w + j - 1] + 1);
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        let kind = if i > 0 && j > 0 && pred[i - 1] == gt[j - 1] && d[(i - 1) * w + j - 1] == here {
            AlignmentKind::Match
        } else if i > 0 && j > 0 && d[(i - 1) * w + j - 1] + 1 == here {
            AlignmentKind::Substitution
        } else if j > 0 && d[i * w + j - 1] + 1 == here {
            AlignmentKind::Deletion
        } else {
            AlignmentKind::Insertion
        };
        let gt_index = match kind {
            AlignmentKind::Insertion => j.max(1),
            _ => j,
        };
        ops.push(AlignmentOp { kind, gt_index });
        match kind {
            AlignmentKind::Match | AlignmentKind::Substitution => {
                i -= 1;
                j -= 1;
            }
            AlignmentKind::Deletion => j -= 1,
            AlignmentKind::Insertion => i -= 1,
        }
    }
    ops.reverse();
    ops
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ProfileBin {
    pub error_count: f64,
    pub token_count: u64,
}

impl ProfileBin {
    /// `None` when the bin holds no ground-truth tokens.
    pub fn error_rate(&self) -> Option<f64> {
        (self.token_count > 0).then(|| self.error_count / self.token_count as f64)
    }
}

/// Per relative-position bin error statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityProfile {
    pub bins: Vec<ProfileBin>,
}

impl DisparityProfile {
    pub fn new(k: usize) -> Self {
        DisparityProfile {
            bins: vec![ProfileBin::default(); k],
        }
    }

    pub fn k(&self) -> usize {
        self.bins.len()
    }

    pub fn error_rates(&self) -> Vec<Option<f64>> {
        self.bins.iter().map(ProfileBin::error_rate).collect()
    }

    pub fn total_errors(&self) -> f64 {
        self.bins.iter().map(|b| b.error_count).sum()
    }

    pub fn total_tokens(&self) -> u64 {
        self.bins.iter().map(|b| b.token_count).sum()
    }

    /// Adds one aligned (prediction, ground truth) pair.
    ///
    /// Insertions against an empty ground truth have no relative position and
    /// are charged to bin 0.
    pub fn add_pair<T: PartialEq>(&mut self, pred: &[T], gt: &[T]) {
        let k = self.k();
        let len = gt.len();
        for t in 1..=len {
            let b = bin_index(t, len, k).expect("t within 1..=len");
            self.bins[b].token_count += 1;
        }
        for op in align_backtrace(pred, gt) {
            if op.error() == 0 {
                continue;
            }
            let b = if len == 0 {
                0
            } else {
                bin_index(op.gt_index, len, k).expect("gt_index within 1..=len")
            };
            self.bins[b].error_count += 1.0;
        }
    }

    pub fn merge(&mut self, other: &DisparityProfile) {
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            a.error_count += b.error_count;
            a.token_count += b.token_count;
        }
    }
}

pub fn positional_error_profile<T: PartialEq>(
    pairs: &[(Vec<T>, Vec<T>)],
    k: usize,
) -> Result<DisparityProfile> {
    if k == 0 {
        return Err(Error::Config("bin count must be at least 1".into()));
    }
    let mut profile = DisparityProfile::new(k);
    for (pred, gt) in pairs {
        profile.add_pair(pred, gt);
    }
    Ok(profile)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MismatchReport {
    /// 1-based rank of the source element of each mismatched transition.
    pub transitions: Vec<usize>,
    /// Relative position `(t + 1) / T` of the transition target.
    pub positions: Vec<f64>,
}

impl MismatchReport {
    pub fn count(&self) -> usize {
        self.positions.len()
    }
}

/// Ground-truth transitions whose target is not the nearest unvisited
/// element of their source (ties by lowest index).
pub fn spatial_logical_mismatch(doc: &Document) -> MismatchReport {
    let order = doc.gt_order.as_slice();
    let n = order.len();
    let mut report = MismatchReport::default();
    if n < 2 {
        return report;
    }
    let mut visited = vec![false; doc.len()];
    for t in 0..n - 1 {
        let (from, to) = (order[t], order[t + 1]);
        visited[from] = true;
        if nearest_unvisited(doc, from, &visited) != Some(to) {
            report.transitions.push(t + 1);
            report.positions.push((t + 2) as f64 / n as f64);
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisparitySummary {
    /// Mean error rate over bins 2..=7 (relative positions 20%-80%).
    pub middle_mean: f64,
    /// Mean error rate over bins 0, 1, 8, 9.
    pub boundary_mean: f64,
    /// `middle_mean / boundary_mean`, absent when the boundary mean is zero.
    pub flattening_ratio: Option<f64>,
}

/// Summarizes a 10-bin profile. Bins without tokens are left out of the means.
pub fn disparity_summary(profile: &DisparityProfile) -> Result<DisparitySummary> {
    if profile.k() != 10 {
        return Err(Error::Config(format!(
            "disparity summary needs a 10-bin profile, got {}",
            profile.k()
        )));
    }
    let rates = profile.error_rates();
    let mean_of = |idx: &[usize]| {
        let vals: Vec<f64> = idx.iter().filter_map(|&i| rates[i]).collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };
    let middle_mean = mean_of(&[2, 3, 4, 5, 6, 7]);
    let boundary_mean = mean_of(&[0, 1, 8, 9]);
    Ok(DisparitySummary {
        middle_mean,
        boundary_mean,
        flattening_ratio: (boundary_mean != 0.0).then(|| middle_mean / boundary_mean),
    })
}
