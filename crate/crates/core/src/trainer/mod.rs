//! Experiment orchestration: schedule, optimizer, epoch loop, evaluation
//! and the sensitivity harness.

mod checkpoint;

pub use checkpoint::{
    checkpoint_from_json, checkpoint_to_json, load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint,
    FORMAT_VERSION,
};

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::corpus_hash;
use crate::error::{Error, Result};
use crate::fpo::{training_step, DifficultyState, FpoConfig, WeightingMode};
use crate::layout::{Document, ReadingOrder};
use crate::metrics::{disparity_summary, normalized_edit, DisparityProfile, DisparitySummary};
use crate::model::{decode, init_params, DecodeMode, Init, ModelConfig, ModelParameters, ParamGrads};
use crate::seeds::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Uniform,
    StandardPo,
    EmaOnly,
    StaticU,
    EmaToken,
    FullFpo,
}

impl TrainMode {
    pub const ALL: [TrainMode; 6] = [
        TrainMode::Uniform,
        TrainMode::StandardPo,
        TrainMode::EmaOnly,
        TrainMode::StaticU,
        TrainMode::EmaToken,
        TrainMode::FullFpo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Uniform => "uniform",
            TrainMode::StandardPo => "standard_po",
            TrainMode::EmaOnly => "ema_only",
            TrainMode::StaticU => "static_u",
            TrainMode::EmaToken => "ema_token",
            TrainMode::FullFpo => "full_fpo",
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrainMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown training mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_fraction: f64,
    pub momentum: f64,
    pub seed: u64,
    pub fpo: FpoConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::FullFpo,
            epochs: 20,
            batch_size: 16,
            base_lr: 1e-2,
            warmup_fraction: 0.05,
            momentum: 0.9,
            seed: 0,
            fpo: FpoConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// The loss configuration after applying the mode's switches.
    pub fn effective_fpo(&self) -> FpoConfig {
        let mut f = self.fpo.clone();
        match self.mode {
            TrainMode::Uniform => {
                f.weighting = WeightingMode::Uniform;
                f.lambda_rank = 0.0;
            }
            TrainMode::StandardPo => {
                f.weighting = WeightingMode::Uniform;
                f.beta = 0.0;
                f.adaptive_margin = false;
            }
            TrainMode::EmaOnly => {
                f.weighting = WeightingMode::EmaBins;
                f.lambda_rank = 0.0;
            }
            TrainMode::StaticU => f.weighting = WeightingMode::StaticInvertedU,
            TrainMode::EmaToken => f.weighting = WeightingMode::EmaToken,
            TrainMode::FullFpo => f.weighting = WeightingMode::EmaBins,
        }
        f
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let fpo = self.effective_fpo();
        if fpo.ranking_enabled() && self.batch_size < 2 {
            return Err(Error::Config("ranking modes need batch_size >= 2".into()));
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("base_lr must be finite and non-negative, got {}", self.base_lr)));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!(
                "warmup_fraction must lie in [0, 1], got {}",
                self.warmup_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        self.model.validate()?;
        fpo.validate()
    }
}

/// Linear warmup to `base_lr`, then cosine decay to zero at `total_steps`.
pub fn lr_schedule(step: usize, total_steps: usize, base_lr: f64, warmup_fraction: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Config("lr_schedule needs total_steps >= 1".into()));
    }
    if step > total_steps {
        return Err(Error::IndexOutOfRange {
            index: step,
            len: total_steps,
        });
    }
    let warmup = (warmup_fraction * total_steps as f64).round() as usize;
    if step < warmup {
        return Ok(base_lr * step as f64 / warmup as f64);
    }
    if warmup == total_steps {
        return Ok(base_lr);
    }
    let progress = (step - warmup) as f64 / (total_steps - warmup) as f64;
    Ok(base_lr * 0.5 * (1.0 + (PI * progress).cos()))
}

/// Gradient descent with classical momentum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Momentum {
    pub momentum: f64,
    pub velocity: ParamGrads,
}

impl Momentum {
    pub fn new(params: &ModelParameters, momentum: f64) -> Self {
        Momentum {
            momentum,
            velocity: params.zero_grads(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParameters, grads: &ParamGrads, lr: f64) -> Result<()> {
        for (name, t) in params.tensors.iter_mut() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Shape(format!("no gradient for parameter {name}")))?;
            let v = self
                .velocity
                .get_mut(name)
                .ok_or_else(|| Error::Shape(format!("no velocity for parameter {name}")))?;
            if g.len() != t.data.len() || v.len() != t.data.len() {
                return Err(Error::Shape(format!("gradient length mismatch for {name}")));
            }
            for ((p, v), g) in t.data.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = self.momentum * *v + g;
                if lr != 0.0 {
                    *p -= lr * *v;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    pub weighted_ce: f64,
    pub rank_loss: f64,
    pub pairs_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub iteration: usize,
    pub bin_index: usize,
    /// Empty for slots that have not been observed yet.
    pub ema_loss: Option<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
    pub weights: Vec<WeightRow>,
}

/// One row per slot of `state`, with `weights` as computed for that state.
pub fn weight_rows(iteration: usize, state: &DifficultyState, weights: &[f64]) -> Vec<WeightRow> {
    (0..state.k)
        .map(|b| WeightRow {
            iteration,
            bin_index: b,
            ema_loss: state.observed[b].then(|| state.ema[b]),
            weight: weights[b],
        })
        .collect()
}

pub fn steps_per_epoch(n_docs: usize, batch_size: usize) -> usize {
    n_docs.div_ceil(batch_size)
}

pub fn train(cfg: &TrainConfig, corpus: &[Document]) -> Result<TrainOutput> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Validation("training corpus is empty".into()));
    }
    for doc in corpus {
        doc.check_vocabulary(&cfg.model.category_vocab)?;
    }
    let fpo = cfg.effective_fpo();
    let mut params = init_params(&cfg.model, derive_seed(cfg.seed, 1), Init::Uniform)?;
    let mut state = fpo.new_state()?;
    let mut opt = Momentum::new(&params, cfg.momentum);
    let per_epoch = steps_per_epoch(corpus.len(), cfg.batch_size);
    let total_steps = cfg.epochs * per_epoch;
    let mut log = Vec::with_capacity(total_steps);
    let mut weight_log = Vec::with_capacity(total_steps * state.k);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2 + epoch as u64));
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Document> = chunk.iter().map(|&i| corpus[i].clone()).collect();
            let lr = lr_schedule(step, total_steps, cfg.base_lr, cfg.warmup_fraction)?;
            let step_seed = derive_seed(cfg.seed ^ 0x5EED_0000_0000_0000, step as u64);
            let out = training_step(&batch, &params, &mut state, &fpo, step_seed).map_err(|e| match e {
                Error::NonFinite(msg) => Error::NonFinite(format!("step {step} (epoch {epoch}): {msg}")),
                other => other,
            })?;
            opt.step(&mut params, &out.gradients, lr)?;
            if !params.is_finite() {
                return Err(Error::NonFinite(format!(
                    "step {step} (epoch {epoch}): parameters diverged after update, loss {}",
                    out.total
                )));
            }
            log::debug!(
                "step {step} lr {lr:.3e} total {:.5} wce {:.5} rank {:.5} pairs {}",
                out.total,
                out.weighted_ce,
                out.rank_loss,
                out.pairs_used
            );
            log.push(LogRow {
                step,
                lr,
                total: out.total,
                weighted_ce: out.weighted_ce,
                rank_loss: out.rank_loss,
                pairs_used: out.pairs_used,
            });
            weight_log.extend(weight_rows(step, &state, &out.weights));
            step += 1;
        }
        log::info!(
            "{} epoch {}/{} last loss {:.5}",
            cfg.mode.name(),
            epoch + 1,
            cfg.epochs,
            log.last().map_or(f64::NAN, |r| r.total)
        );
    }
    Ok(TrainOutput {
        checkpoint: Checkpoint::new(params, state, cfg.clone(), step as u64, corpus_hash(corpus)),
        log,
        weights: weight_log,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocEval {
    pub doc_id: String,
    pub pred_order: ReadingOrder,
    pub edit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub mean_edit: f64,
    pub profile: DisparityProfile,
    pub per_doc: Vec<DocEval>,
}

impl Evaluation {
    pub fn summary(&self) -> Result<DisparitySummary> {
        disparity_summary(&self.profile)
    }
}

/// Greedy-decodes every document and scores it against its ground truth.
pub fn evaluate(params: &ModelParameters, corpus: &[Document], k: usize) -> Result<Evaluation> {
    if k == 0 {
        return Err(Error::Config("profile needs at least one bin".into()));
    }
    let mut profile = DisparityProfile::new(k);
    let mut per_doc = Vec::with_capacity(corpus.len());
    let mut sum = 0.0;
    for doc in corpus {
        doc.check_vocabulary(&params.config.category_vocab)?;
        let pred = decode(doc, params, DecodeMode::Greedy, 0)?;
        let edit = normalized_edit(pred.as_slice(), doc.gt_order.as_slice())?;
        profile.add_pair(pred.as_slice(), doc.gt_order.as_slice());
        sum += edit;
        per_doc.push(DocEval {
            doc_id: doc.doc_id.clone(),
            pred_order: pred,
            edit,
        });
    }
    let mean_edit = if corpus.is_empty() { 0.0 } else { sum / corpus.len() as f64 };
    Ok(Evaluation {
        mean_edit,
        profile,
        per_doc,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    #[serde(rename = "K")]
    K,
    Beta,
    Rho,
    Alpha,
    LambdaRank,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::K => "K",
            SweepParam::Beta => "beta",
            SweepParam::Rho => "rho",
            SweepParam::Alpha => "alpha",
            SweepParam::LambdaRank => "lambda_rank",
        }
    }

    pub fn apply(self, cfg: &mut TrainConfig, value: f64) -> Result<()> {
        match self {
            SweepParam::K => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::Config(format!("K must be a positive integer, got {value}")));
                }
                cfg.fpo.k = value as usize;
            }
            SweepParam::Beta => cfg.fpo.beta = value,
            SweepParam::Rho => cfg.fpo.rho = value,
            SweepParam::Alpha => cfg.fpo.alpha = value,
            SweepParam::LambdaRank => cfg.fpo.lambda_rank = value,
        }
        Ok(())
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "K" | "k" => Ok(SweepParam::K),
            "beta" => Ok(SweepParam::Beta),
            "rho" => Ok(SweepParam::Rho),
            "alpha" => Ok(SweepParam::Alpha),
            "lambda_rank" | "lambda-rank" => Ok(SweepParam::LambdaRank),
            _ => Err(Error::Config(format!(
                "unknown sweep parameter {s:?} (expected K, beta, rho, alpha or lambda_rank)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub seed: u64,
    pub mean_edit: f64,
    pub middle_mean: f64,
    pub boundary_mean: f64,
}

/// Trains one model per `(value, seed)` and evaluates it on `eval_corpus`.
pub fn sensitivity_harness(
    cfg: &TrainConfig,
    train_corpus: &[Document],
    eval_corpus: &[Document],
    param: SweepParam,
    values: &[f64],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(values.len() * seeds.len());
    for &value in values {
        for &seed in seeds {
            let mut run = cfg.clone();
            run.seed = seed;
            param.apply(&mut run, value)?;
            let out = train(&run, train_corpus)?;
            let eval = evaluate(&out.checkpoint.params, eval_corpus, 10)?;
            let summary = eval.summary()?;
            log::info!("{}={value} seed {seed}: mean_edit {:.5}", param.name(), eval.mean_edit);
            rows.push(SweepRow {
                param: param.name().to_string(),
                value,
                seed,
                mean_edit: eval.mean_edit,
                middle_mean: summary.middle_mean,
                boundary_mean: summary.boundary_mean,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, GeneratorConfig};
    use crate::metrics::order_reward;

    fn corpus(n: usize, ambiguity: f64, seed: u64) -> Vec<Document> {
        generate_corpus(&GeneratorConfig {
            n_docs: n,
            elements_min: 6,
            elements_max: 10,
            ambiguity,
            seed,
            ..GeneratorConfig::default()
        })
        .unwrap()
    }

    fn small(mode: TrainMode) -> TrainConfig {
        TrainConfig {
            mode,
            epochs: 2,
            batch_size: 4,
            model: ModelConfig {
                hidden_dim: 8,
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(lr_schedule(0, 100, 0.1, 0.05).unwrap(), 0.0);
        assert_eq!(lr_schedule(5, 100, 0.1, 0.05).unwrap(), 0.1);
        assert!(lr_schedule(100, 100, 0.1, 0.05).unwrap().abs() < 1e-18);
        assert!((lr_schedule(2, 100, 0.1, 0.05).unwrap() - 0.04).abs() < 1e-15);
        assert!(lr_schedule(0, 0, 0.1, 0.05).is_err());
        assert!(lr_schedule(101, 100, 0.1, 0.05).is_err());
        assert_eq!(lr_schedule(0, 10, 0.1, 0.0).unwrap(), 0.1);
    }

    #[test]
    fn schedule_is_monotone_after_warmup() {
        let lrs: Vec<f64> = (0..=200).map(|s| lr_schedule(s, 200, 1.0, 0.05).unwrap()).collect();
        assert!(lrs[..=10].windows(2).all(|w| w[0] <= w[1]));
        assert!(lrs[10..].windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let params = init_params(&ModelConfig::default(), 3, Init::Uniform).unwrap();
        let mut p = params.clone();
        let mut grads = p.zero_grads();
        grads.values_mut().flatten().for_each(|g| *g = 1.5);
        let mut opt = Momentum::new(&p, 0.9);
        opt.step(&mut p, &grads, 0.0).unwrap();
        opt.step(&mut p, &grads, 0.0).unwrap();
        assert_eq!(p, params);
    }

    #[test]
    fn momentum_accumulates() {
        let cfg = ModelConfig { hidden_dim: 1, category_vocab: vec!["text".into()] };
        let mut p = init_params(&cfg, 0, Init::Zeros).unwrap();
        let mut grads = p.zero_grads();
        grads.values_mut().flatten().for_each(|g| *g = 1.0);
        let mut opt = Momentum::new(&p, 0.5);
        opt.step(&mut p, &grads, 1.0).unwrap();
        opt.step(&mut p, &grads, 1.0).unwrap();
        assert!(p.tensors.values().flat_map(|t| &t.data).all(|&v| v == -2.5));
    }

    #[test]
    fn mode_switches() {
        let base = TrainConfig::default();
        let f = |m| TrainConfig { mode: m, ..base.clone() }.effective_fpo();
        assert_eq!(f(TrainMode::Uniform).weighting, WeightingMode::Uniform);
        assert_eq!(f(TrainMode::Uniform).lambda_rank, 0.0);
        let po = f(TrainMode::StandardPo);
        assert_eq!((po.weighting, po.beta, po.adaptive_margin), (WeightingMode::Uniform, 0.0, false));
        assert!(po.ranking_enabled());
        assert!(!f(TrainMode::EmaOnly).ranking_enabled());
        assert_eq!(f(TrainMode::EmaToken).weighting, WeightingMode::EmaToken);
        assert_eq!(f(TrainMode::StaticU).weighting, WeightingMode::StaticInvertedU);
        assert_eq!(f(TrainMode::FullFpo), base.fpo);
        for m in TrainMode::ALL {
            assert_eq!(m.name().parse::<TrainMode>().unwrap(), m);
        }
    }

    #[test]
    fn config_errors() {
        let mut c = small(TrainMode::FullFpo);
        c.epochs = 0;
        assert!(c.validate().is_err());
        let mut c = small(TrainMode::FullFpo);
        c.batch_size = 1;
        assert!(c.validate().is_err());
        c.mode = TrainMode::Uniform;
        assert!(c.validate().is_ok());
        assert!(train(&small(TrainMode::Uniform), &[]).is_err());
    }

    #[test]
    fn ablation_logs_are_consistent() {
        let docs = corpus(12, 0.8, 1);
        let ema = train(&small(TrainMode::EmaOnly), &docs).unwrap();
        assert!(ema.log.iter().all(|r| r.rank_loss == 0.0 && r.pairs_used == 0));
        let po = train(&small(TrainMode::StandardPo), &docs).unwrap();
        assert!(po.weights.iter().all(|r| r.weight == 1.0));
        assert_eq!(po.log.len(), 2 * 3);
    }

    #[test]
    fn uniform_matches_full_fpo_with_weights_forced_to_one() {
        let docs = corpus(10, 0.8, 2);
        let a = train(&small(TrainMode::Uniform), &docs).unwrap();
        let mut cfg = small(TrainMode::FullFpo);
        cfg.fpo.delta = 0.0;
        cfg.fpo.lambda_rank = 0.0;
        let b = train(&cfg, &docs).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.checkpoint.params, b.checkpoint.params);
    }

    #[test]
    fn training_is_deterministic() {
        let docs = corpus(10, 0.8, 3);
        let a = train(&small(TrainMode::FullFpo), &docs).unwrap();
        let b = train(&small(TrainMode::FullFpo), &docs).unwrap();
        assert_eq!(checkpoint_to_json(&a.checkpoint).unwrap(), checkpoint_to_json(&b.checkpoint).unwrap());
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn evaluation_is_one_minus_reward() {
        let docs = corpus(8, 0.8, 4);
        let params = init_params(&ModelConfig::default(), 9, Init::Uniform).unwrap();
        let e = evaluate(&params, &docs, 10).unwrap();
        let reward: f64 = e
            .per_doc
            .iter()
            .zip(&docs)
            .map(|(p, d)| order_reward(p.pred_order.as_slice(), d.gt_order.as_slice()).unwrap())
            .sum::<f64>()
            / docs.len() as f64;
        assert!((e.mean_edit - (1.0 - reward)).abs() < 1e-12);
        assert_eq!(e.per_doc.len(), docs.len());
    }

    #[test]
    fn evaluation_rejects_unknown_categories() {
        let docs = corpus(2, 0.8, 5);
        let cfg = ModelConfig { hidden_dim: 4, category_vocab: vec!["text".into()] };
        let params = init_params(&cfg, 0, Init::Uniform).unwrap();
        assert!(matches!(evaluate(&params, &docs, 10), Err(Error::UnknownCategory(_))));
    }

    #[test]
    fn empty_sweep_is_empty() {
        let docs = corpus(4, 0.8, 6);
        let rows = sensitivity_harness(&small(TrainMode::FullFpo), &docs, &docs, SweepParam::K, &[], &[0]).unwrap();
        assert!(rows.is_empty());
        assert!("gamma".parse::<SweepParam>().is_err());
    }
}
