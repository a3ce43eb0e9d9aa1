//! Difficulty-aware preference optimization: EMA-weighted cross-entropy
//! plus a difficulty-calibrated pairwise ranking term.

mod difficulty;
mod ranking;
mod step;

pub use difficulty::{
    batch_bin_loss, difficulty_weights, ema_update, normalized_seq_loss, sequence_complexity,
    clip_bounds, static_inverted_u_raw, static_inverted_u_weights, weighted_ce, BinLosses, DifficultyState,
};
pub use ranking::{
    adaptive_margin, advantage, ranking_loss, ranking_loss_on_tape, select_pairs, total_loss,
    PreferencePair,
};
pub use step::{build_objective, training_step, Objective, StepOutput, StepPlan};

pub use crate::bins::bin_index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DecodeMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingMode {
    Uniform,
    EmaBins,
    /// Difficulty per absolute sequence index instead of relative bin.
    EmaToken,
    StaticInvertedU,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FpoConfig {
    pub k: usize,
    pub gamma: f64,
    pub delta: f64,
    pub beta: f64,
    pub rho: f64,
    pub alpha: f64,
    pub lambda_rank: f64,
    pub max_pairs: usize,
    pub weighting: WeightingMode,
    pub epsilon: f64,
    /// Scale margins by sequence complexity; otherwise every margin is `alpha`.
    pub adaptive_margin: bool,
    /// Width of the fixed Gaussian used by [`WeightingMode::StaticInvertedU`].
    pub static_sigma: f64,
    /// Length of the per-index difficulty vector in [`WeightingMode::EmaToken`].
    pub token_max_len: usize,
    /// How ranking candidates are decoded during training.
    pub candidate_decode: DecodeMode,
}

impl Default for FpoConfig {
    fn default() -> Self {
        FpoConfig {
            k: 10,
            gamma: 0.99,
            delta: 0.8,
            beta: 0.05,
            rho: 0.20,
            alpha: 0.10,
            lambda_rank: 1.0,
            max_pairs: 16,
            weighting: WeightingMode::EmaBins,
            epsilon: 1e-8,
            adaptive_margin: true,
            static_sigma: 0.25,
            token_max_len: 64,
            candidate_decode: DecodeMode::Sample { temperature: 1.0 },
        }
    }
}

impl FpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if !(self.rho > 0.0 && self.rho <= 0.5) {
            return Err(Error::Config(format!("rho {} outside (0, 0.5]", self.rho)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(Error::Config(format!("delta {} outside [0, 1)", self.delta)));
        }
        for (name, v) in [
            ("beta", self.beta),
            ("alpha", self.alpha),
            ("lambda_rank", self.lambda_rank),
            ("epsilon", self.epsilon),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        if self.token_max_len == 0 {
            return Err(Error::Config("token_max_len must be at least 1".into()));
        }
        if !(self.static_sigma > 0.0) {
            return Err(Error::Config("static_sigma must be positive".into()));
        }
        Ok(())
    }

    /// Length of the difficulty vector this configuration tracks.
    pub fn slots(&self) -> usize {
        match self.weighting {
            WeightingMode::EmaToken => self.token_max_len,
            _ => self.k,
        }
    }

    pub fn new_state(&self) -> Result<DifficultyState> {
        self.validate()?;
        DifficultyState::new(self.slots(), self.gamma, self.delta)
    }

    /// Difficulty slot of the 1-based step `t` of a length-`len` sequence.
    pub fn slot(&self, t: usize, len: usize) -> Result<usize> {
        match self.weighting {
            WeightingMode::EmaToken => {
                if t == 0 || t > len {
                    return Err(Error::IndexOutOfRange { index: t, len });
                }
                Ok(t.min(self.token_max_len) - 1)
            }
            _ => bin_index(t, len, self.k),
        }
    }

    pub fn slots_for_length(&self, len: usize) -> Result<Vec<usize>> {
        (1..=len).map(|t| self.slot(t, len)).collect()
    }

    /// Weight per slot under this configuration's weighting mode.
    pub fn weights(&self, state: &DifficultyState) -> Result<Vec<f64>> {
        match self.weighting {
            WeightingMode::Uniform => Ok(vec![1.0; state.k]),
            WeightingMode::EmaBins | WeightingMode::EmaToken => Ok(difficulty_weights(state)),
            WeightingMode::StaticInvertedU => static_inverted_u_weights(self.k, self.static_sigma, self.delta),
        }
    }

    pub fn ranking_enabled(&self) -> bool {
        self.lambda_rank > 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        FpoConfig::default().validate().unwrap();
        let bad = FpoConfig { rho: 0.6, ..FpoConfig::default() };
        assert!(bad.validate().is_err());
        let bad = FpoConfig { k: 0, ..FpoConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn token_slots() {
        let c = FpoConfig {
            weighting: WeightingMode::EmaToken,
            token_max_len: 40,
            ..FpoConfig::default()
        };
        assert_eq!(c.new_state().unwrap().k, 40);
        assert_eq!(c.slot(1, 50).unwrap(), 0);
        assert_eq!(c.slot(50, 50).unwrap(), 39);
        let mut s = c.new_state().unwrap();
        let losses: Vec<(f64, usize)> = (0..40).map(|i| (0.7, i)).collect();
        ema_update(&mut s, &batch_bin_loss(&losses, 40, 1e-8).unwrap());
        assert!(c.weights(&s).unwrap().iter().all(|&w| (w - 1.0).abs() < 1e-12));
    }

    #[test]
    fn token_mode_reduces_to_bins_on_a_one_to_one_mapping() {
        // Same slot stream fed to both granularities gives the same weights:
        // only the position-to-slot map differs between them.
        let bins = FpoConfig { k: 10, ..FpoConfig::default() };
        let tokens = FpoConfig {
            weighting: WeightingMode::EmaToken,
            token_max_len: 10,
            ..FpoConfig::default()
        };
        let losses = [0.1, 0.4, 0.9, 1.3, 1.6, 1.5, 1.1, 0.6, 0.3, 0.2];
        let stream: Vec<(f64, usize)> = losses.iter().copied().zip(0..10).collect();
        let (mut sb, mut st) = (bins.new_state().unwrap(), tokens.new_state().unwrap());
        for _ in 0..5 {
            ema_update(&mut sb, &batch_bin_loss(&stream, 10, 1e-8).unwrap());
            ema_update(&mut st, &batch_bin_loss(&stream, 10, 1e-8).unwrap());
        }
        assert_eq!(bins.weights(&sb).unwrap(), tokens.weights(&st).unwrap());
        assert_eq!(tokens.slots_for_length(10).unwrap(), (0..10).collect::<Vec<_>>());
    }
}
