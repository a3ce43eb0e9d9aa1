//! Adaptive difficulty discovery: per-bin EMA of token loss turned into
//! clipped relative weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// EMA difficulty vector plus the running sequence-loss normalizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyState {
    pub k: usize,
    pub ema: Vec<f64>,
    pub observed: Vec<bool>,
    pub gamma: f64,
    pub delta: f64,
    pub running_mean_seq_loss: f64,
    pub seq_count: u64,
}

impl DifficultyState {
    pub fn new(k: usize, gamma: f64, delta: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("difficulty vector needs at least one slot".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Config(format!("gamma {gamma} outside [0, 1)")));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::Config(format!("delta {delta} outside [0, 1)")));
        }
        Ok(DifficultyState {
            k,
            ema: vec![0.0; k],
            observed: vec![false; k],
            gamma,
            delta,
            running_mean_seq_loss: 0.0,
            seq_count: 0,
        })
    }

    pub fn any_observed(&self) -> bool {
        self.observed.iter().any(|&o| o)
    }
}

/// Per-bin mean token loss of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BinLosses {
    pub mean: Vec<f64>,
    pub counts: Vec<usize>,
}

impl BinLosses {
    pub fn is_empty_bin(&self, k: usize) -> bool {
        self.counts[k] == 0
    }
}

/// `sum(loss in bin) / (count in bin + epsilon)` for each of `k` bins.
pub fn batch_bin_loss(token_losses: &[(f64, usize)], k: usize, epsilon: f64) -> Result<BinLosses> {
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for &(loss, bin) in token_losses {
        if !loss.is_finite() || loss < 0.0 {
            return Err(Error::NonFinite(format!("token loss {loss} in bin {bin}")));
        }
        if bin >= k {
            return Err(Error::IndexOutOfRange { index: bin, len: k });
        }
        sums[bin] += loss;
        counts[bin] += 1;
    }
    let mean = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c == 0 { 0.0 } else { s / (c as f64 + epsilon) })
        .collect();
    Ok(BinLosses { mean, counts })
}

/// Blends batch bin losses into the state. Empty bins are left alone and a
/// bin's first observation replaces its value outright.
pub fn ema_update(state: &mut DifficultyState, batch: &BinLosses) {
    let g = state.gamma;
    for k in 0..state.k.min(batch.mean.len()) {
        if batch.is_empty_bin(k) {
            continue;
        }
        if state.observed[k] {
            state.ema[k] = g * state.ema[k] + (1.0 - g) * batch.mean[k];
        } else {
            state.ema[k] = batch.mean[k];
            state.observed[k] = true;
        }
    }
}

/// `clamp(ema_k / mean(observed ema), 1 - delta, 1 + delta)`; unobserved
/// bins, and every bin before any observation, get weight 1.
pub fn difficulty_weights(state: &DifficultyState) -> Vec<f64> {
    let observed: Vec<f64> = state
        .ema
        .iter()
        .zip(&state.observed)
        .filter(|(_, &o)| o)
        .map(|(v, _)| *v)
        .collect();
    if observed.is_empty() {
        return vec![1.0; state.k];
    }
    let mu = observed.iter().sum::<f64>() / observed.len() as f64;
    if mu == 0.0 || !mu.is_finite() {
        log::warn!("difficulty mean is {mu}; falling back to uniform weights");
        return vec![1.0; state.k];
    }
    let (lo, hi) = clip_bounds(state.delta);
    state
        .ema
        .iter()
        .zip(&state.observed)
        .map(|(v, &o)| if o { (v / mu).clamp(lo, hi) } else { 1.0 })
        .collect()
}

/// `1 ± delta`, snapped to 12 decimals so that a decimal `delta` such as 0.8
/// gives the decimal bounds 0.2 and 1.8 rather than `1.0 - 0.8`.
pub fn clip_bounds(delta: f64) -> (f64, f64) {
    let snap = |v: f64| (v * 1e12).round() / 1e12;
    (snap(1.0 - delta), snap(1.0 + delta))
}

/// Fixed Gaussian bump over bin centers, rescaled to mean 1 then clipped.
pub fn static_inverted_u_weights(k: usize, sigma: f64, delta: f64) -> Result<Vec<f64>> {
    let raw = static_inverted_u_raw(k, sigma)?;
    let (lo, hi) = clip_bounds(delta);
    Ok(raw.into_iter().map(|w| w.clamp(lo, hi)).collect())
}

/// Pre-clamp weights of [`static_inverted_u_weights`] (mean exactly 1 up to
/// rounding).
pub fn static_inverted_u_raw(k: usize, sigma: f64) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::Config("bin count must be at least 1".into()));
    }
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    let raw: Vec<f64> = (0..k)
        .map(|i| {
            let p = (i as f64 + 0.5) / k as f64;
            (-(p - 0.5).powi(2) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let mean = raw.iter().sum::<f64>() / k as f64;
    Ok(raw.into_iter().map(|w| w / mean).collect())
}

/// Sequence CE over the running mean of all sequence CEs seen before it
/// (1.0 for the very first), then folds `seq_ce` into that mean.
pub fn normalized_seq_loss(seq_ce: f64, state: &mut DifficultyState) -> f64 {
    let out = if state.seq_count == 0 || state.running_mean_seq_loss == 0.0 {
        1.0
    } else {
        seq_ce / state.running_mean_seq_loss
    };
    state.seq_count += 1;
    state.running_mean_seq_loss += (seq_ce - state.running_mean_seq_loss) / state.seq_count as f64;
    out
}

/// Mean weight over a sequence's positions.
pub fn sequence_complexity(token_slots: &[usize], weights: &[f64]) -> Result<f64> {
    if token_slots.is_empty() {
        return Err(Error::Validation("sequence complexity of an empty sequence".into()));
    }
    Ok(token_slots.iter().map(|&s| weights[s]).sum::<f64>() / token_slots.len() as f64)
}

/// `(1/N) sum_t w_{slot(t)} * loss_t`.
pub fn weighted_ce(token_losses: &[f64], token_slots: &[usize], weights: &[f64]) -> Result<f64> {
    if token_losses.is_empty() {
        return Err(Error::Validation("weighted cross-entropy over zero tokens".into()));
    }
    if token_losses.len() != token_slots.len() {
        return Err(Error::Shape("one slot per token loss required".into()));
    }
    let total: f64 = token_losses
        .iter()
        .zip(token_slots)
        .map(|(l, &s)| weights[s] * l)
        .sum();
    Ok(total / token_losses.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state(k: usize) -> DifficultyState {
        DifficultyState::new(k, 0.99, 0.8).unwrap()
    }

    #[test]
    fn bin_loss_means() {
        let b = batch_bin_loss(&[(1.0, 0), (2.0, 0), (4.0, 3)], 5, 1e-8).unwrap();
        assert!((b.mean[0] - 1.5).abs() < 1e-7);
        assert!((b.mean[3] - 4.0).abs() < 1e-7);
        assert_eq!(b.counts, vec![2, 0, 0, 1, 0]);
        let b = batch_bin_loss(&[(1.0, 2), (3.0, 2)], 4, 1e-8).unwrap();
        assert!((b.mean[2] - 2.0).abs() < 1e-7);
        let b = batch_bin_loss(&[], 4, 1e-8).unwrap();
        assert!((0..4).all(|k| b.is_empty_bin(k)));
        assert!(batch_bin_loss(&[(f64::NAN, 0)], 4, 1e-8).is_err());
        assert!(batch_bin_loss(&[(1.0, 4)], 4, 1e-8).is_err());
    }

    #[test]
    fn ema_examples() {
        let mut s = state(2);
        s.ema = vec![0.5, 0.7];
        s.observed = vec![true, true];
        let batch = BinLosses { mean: vec![1.5, 0.0], counts: vec![4, 0] };
        ema_update(&mut s, &batch);
        assert!((s.ema[0] - 0.51).abs() < 1e-15);
        assert_eq!(s.ema[1], 0.7);
    }

    #[test]
    fn first_observation_bootstraps() {
        let mut s = state(3);
        ema_update(&mut s, &BinLosses { mean: vec![0.0, 2.5, 0.0], counts: vec![0, 1, 0] });
        assert_eq!(s.ema[1], 2.5);
        assert_eq!(s.observed, vec![false, true, false]);
    }

    #[test]
    fn constant_stream_converges_geometrically() {
        let c = 2.0;
        let mut s = state(1);
        s.ema[0] = 10.0;
        s.observed[0] = true;
        let batch = BinLosses { mean: vec![c], counts: vec![1] };
        let start_gap = (s.ema[0] - c).abs();
        for _ in 0..1000 {
            ema_update(&mut s, &batch);
        }
        assert!((s.ema[0] - c).abs() <= start_gap * 0.99f64.powi(1000) * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn weight_examples() {
        let mut s = state(4);
        s.ema = vec![0.3; 4];
        s.observed = vec![true; 4];
        assert_eq!(difficulty_weights(&s), vec![1.0; 4]);
        s.ema = vec![4.0, 0.0, 0.0, 0.0];
        assert_eq!(difficulty_weights(&s), vec![1.8, 0.2, 0.2, 0.2]);
        assert_eq!(difficulty_weights(&state(4)), vec![1.0; 4]);
        s.ema = vec![0.0; 4];
        assert_eq!(difficulty_weights(&s), vec![1.0; 4]);
    }

    #[test]
    fn unobserved_bins_get_unit_weight() {
        let mut s = state(3);
        s.ema = vec![1.0, 0.0, 3.0];
        s.observed = vec![true, false, true];
        let w = difficulty_weights(&s);
        assert_eq!(w[1], 1.0);
        assert!((w[0] - 0.5).abs() < 1e-15);
        assert!((w[2] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn static_curve_shape() {
        let raw = static_inverted_u_raw(10, 0.25).unwrap();
        assert!((raw.iter().sum::<f64>() / 10.0 - 1.0).abs() < 1e-12);
        let w = static_inverted_u_weights(10, 0.25, 0.8).unwrap();
        for k in 0..10 {
            assert!((w[k] - w[9 - k]).abs() < 1e-12);
        }
        let w = static_inverted_u_weights(9, 0.25, 0.8).unwrap();
        let peak = w.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(w[4], peak);
        assert!(w.iter().all(|&x| (0.2..=1.8).contains(&x)));
        assert!(static_inverted_u_weights(10, 0.0, 0.8).is_err());
    }

    #[test]
    fn weighted_ce_examples() {
        let losses = [0.5, 1.0, 2.0, 0.25];
        let slots = [0, 1, 1, 2];
        let plain = losses.iter().sum::<f64>() / 4.0;
        assert!((weighted_ce(&losses, &slots, &[1.0; 3]).unwrap() - plain).abs() < 1e-15);
        let w = [1.0, 1.0, 2.0];
        let bumped = weighted_ce(&losses, &slots, &w).unwrap();
        assert!((bumped - plain - (2.0 * 0.25 / 4.0 - 0.25 / 4.0)).abs() < 1e-15);
        let only0 = weighted_ce(&[1.0, 3.0], &[0, 0], &[1.8, 1.0]).unwrap();
        assert!((only0 - 1.8 * 2.0).abs() < 1e-15);
        assert!(weighted_ce(&[], &[], &[1.0]).is_err());
    }

    #[test]
    fn normalized_loss_examples() {
        let mut s = state(1);
        assert_eq!(normalized_seq_loss(0.7, &mut s), 1.0);
        assert_eq!(s.running_mean_seq_loss, 0.7);
        assert_eq!(normalized_seq_loss(0.7, &mut s), 1.0);
        assert!((normalized_seq_loss(1.4, &mut s) - 2.0).abs() < 1e-15);
        assert!((s.running_mean_seq_loss - 2.8 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn complexity_examples() {
        assert_eq!(sequence_complexity(&[0, 1, 2], &[1.0; 3]).unwrap(), 1.0);
        assert_eq!(sequence_complexity(&[1, 1], &[0.2, 1.8]).unwrap(), 1.8);
        assert!((sequence_complexity(&[0, 1], &[0.2, 1.8]).unwrap() - 1.0).abs() < 1e-15);
        assert!(sequence_complexity(&[], &[1.0]).is_err());
    }

    #[test]
    fn state_validation() {
        assert!(DifficultyState::new(0, 0.9, 0.8).is_err());
        assert!(DifficultyState::new(3, 1.0, 0.8).is_err());
        assert!(DifficultyState::new(3, 0.9, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn weights_stay_in_range(ema in prop::collection::vec(0.0..10.0f64, 1..20), delta in 0.05..0.95f64) {
            let mut s = DifficultyState::new(ema.len(), 0.9, delta).unwrap();
            s.observed = vec![true; ema.len()];
            s.ema = ema;
            let (lo, hi) = clip_bounds(delta);
            prop_assert!((lo - (1.0 - delta)).abs() < 1e-12 && (hi - (1.0 + delta)).abs() < 1e-12);
            for w in difficulty_weights(&s) {
                prop_assert!(w >= lo && w <= hi);
            }
        }

        #[test]
        fn raising_one_bin_is_monotone(ema in prop::collection::vec(0.1..5.0f64, 2..12),
                                        pick in 0usize..12, bump in 0.01..3.0f64) {
            let k = ema.len();
            let pick = pick % k;
            let mut s = DifficultyState::new(k, 0.9, 0.8).unwrap();
            s.observed = vec![true; k];
            s.ema = ema;
            let before = difficulty_weights(&s);
            s.ema[pick] += bump;
            let after = difficulty_weights(&s);
            prop_assert!(after[pick] >= before[pick] - 1e-15);
            for j in 0..k {
                if j != pick {
                    prop_assert!(after[j] <= before[j] + 1e-15);
                }
            }
        }

        #[test]
        fn constant_stream_reaches_fixed_point(start in prop::collection::vec(0.0..5.0f64, 1..10), c in 0.1..4.0f64) {
            let k = start.len();
            let mut s = DifficultyState::new(k, 0.99, 0.8).unwrap();
            s.ema = start;
            s.observed = vec![true; k];
            let batch = BinLosses { mean: vec![c; k], counts: vec![3; k] };
            for _ in 0..2000 {
                ema_update(&mut s, &batch);
            }
            for v in &s.ema {
                prop_assert!((v - c).abs() < 1e-6);
            }
        }
    }
}
