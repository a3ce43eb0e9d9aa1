//! Difficulty-calibrated pairwise ranking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub winner: usize,
    pub loser: usize,
    pub margin: f64,
}

/// `reward + beta * normalized_loss`.
pub fn advantage(reward: f64, norm_loss: f64, beta: f64) -> f64 {
    reward + beta * norm_loss
}

/// `alpha * max(wbar_i, wbar_j)`.
pub fn adaptive_margin(wbar_i: f64, wbar_j: f64, alpha: f64) -> f64 {
    alpha * wbar_i.max(wbar_j)
}

/// Pairs every top-`rho` sample with every bottom-`rho` sample by advantage.
///
/// Both groups hold `max(1, floor(rho * B))` samples; sorting is stable so
/// ties keep batch order. Pairs whose winner does not strictly beat the loser
/// are dropped, and the rest are uniformly subsampled to `max_pairs`.
/// Returned margins are zero.
pub fn select_pairs(advantages: &[f64], rho: f64, max_pairs: usize, seed: u64) -> Vec<PreferencePair> {
    let b = advantages.len();
    if b < 2 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..b).collect();
    order.sort_by(|&i, &j| advantages[j].total_cmp(&advantages[i]));
    let group = ((rho * b as f64).floor() as usize).max(1).min(b / 2);
    let top = &order[..group];
    let bottom = &order[b - group..];
    let mut pairs: Vec<PreferencePair> = top
        .iter()
        .flat_map(|&w| bottom.iter().map(move |&l| (w, l)))
        .filter(|&(w, l)| advantages[w] > advantages[l])
        .map(|(winner, loser)| PreferencePair {
            winner,
            loser,
            margin: 0.0,
        })
        .collect();
    if pairs.len() > max_pairs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keep = sample(&mut rng, pairs.len(), max_pairs).into_vec();
        keep.sort_unstable();
        pairs = keep.into_iter().map(|i| pairs[i]).collect();
    }
    pairs
}

/// Mean over pairs of `max(0, S_loser - S_winner + margin)`; zero for no pairs.
pub fn ranking_loss(scores: &[f64], pairs: &[PreferencePair]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs
        .iter()
        .map(|p| (scores[p.loser] - scores[p.winner] + p.margin).max(0.0))
        .sum::<f64>()
        / pairs.len() as f64
}

/// Tape version of [`ranking_loss`]; `scores[i]` may be `None` for samples
/// that appear in no pair.
pub fn ranking_loss_on_tape(tape: &mut Tape, scores: &[Option<Var>], pairs: &[PreferencePair]) -> Result<Var> {
    if pairs.is_empty() {
        return Ok(tape.scalar(0.0));
    }
    let mut hinges = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (sw, sl) = (
            scores[p.winner].expect("winner score recorded"),
            scores[p.loser].expect("loser score recorded"),
        );
        let gap = tape.sub(sl, sw)?;
        let m = tape.scalar(p.margin);
        let arg = tape.add(gap, m)?;
        hinges.push(tape.hinge(arg));
    }
    let packed = tape.pack(&hinges)?;
    tape.mean(packed)
}

/// `weighted_ce + lambda_rank * ranking`.
pub fn total_loss(weighted_ce: f64, ranking: f64, lambda_rank: f64) -> f64 {
    weighted_ce + lambda_rank * ranking
}
