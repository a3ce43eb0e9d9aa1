use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::layout::{Document, ReadingOrder};
use crate::metrics::order_reward;
use crate::model::{
    decode_on_tape, encode_on_tape, step_logprobs_on_tape, BoundParams, Encoding, ModelConfig,
    ModelParameters, ParamGrads,
};
use crate::seeds::derive_seed;

use super::{
    adaptive_margin, advantage, batch_bin_loss, ema_update, normalized_seq_loss, ranking_loss_on_tape,
    select_pairs, sequence_complexity, DifficultyState, FpoConfig, PreferencePair,
};

/// Everything a step decides from forward values before building its loss:
/// the frozen per-token weights, ranking candidates and pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPlan {
    pub token_weights: Vec<Vec<f64>>,
    /// Decoded sequence of each sample that takes part in a pair.
    pub candidates: Vec<Option<ReadingOrder>>,
    pub pairs: Vec<PreferencePair>,
    pub lambda_rank: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Objective {
    pub total: Var,
    pub weighted_ce: Var,
    pub rank: Var,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub total: f64,
    pub weighted_ce: f64,
    pub rank_loss: f64,
    pub pairs_used: usize,
    pub token_count: usize,
    pub gradients: ParamGrads,
    /// Slot weights after this step's EMA update.
    pub weights: Vec<f64>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub plan: StepPlan,
}

struct Forward {
    encodings: Vec<Encoding>,
    gt_steps: Vec<Vec<Var>>,
}

fn record_teacher_forcing(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &ModelConfig,
    batch: &[Document],
) -> Result<Forward> {
    let mut encodings = Vec::with_capacity(batch.len());
    let mut gt_steps = Vec::with_capacity(batch.len());
    for doc in batch {
        let enc = encode_on_tape(tape, bound, cfg, doc)?;
        gt_steps.push(step_logprobs_on_tape(tape, bound, &enc, doc.gt_order.as_slice())?);
        encodings.push(enc);
    }
    Ok(Forward { encodings, gt_steps })
}

fn assemble(tape: &mut Tape, bound: &BoundParams, fwd: &Forward, plan: &StepPlan) -> Result<Objective> {
    let steps: Vec<Var> = fwd.gt_steps.iter().flatten().copied().collect();
    let weights: Vec<f64> = plan.token_weights.iter().flatten().copied().collect();
    if steps.is_empty() || steps.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} token weights for {} tokens",
            weights.len(),
            steps.len()
        )));
    }
    let n = steps.len() as f64;
    let lp = tape.pack(&steps)?;
    let w = tape.constant_vec(weights);
    let weighted = tape.mul(lp, w)?;
    let sum = tape.sum(weighted);
    let weighted_ce = tape.scale(sum, -1.0 / n);

    let mut scores: Vec<Option<Var>> = vec![None; plan.candidates.len()];
    for (i, cand) in plan.candidates.iter().enumerate() {
        if let Some(order) = cand {
            let s = step_logprobs_on_tape(tape, bound, &fwd.encodings[i], order.as_slice())?;
            let packed = tape.pack(&s)?;
            scores[i] = Some(tape.mean(packed)?);
        }
    }
    let rank = ranking_loss_on_tape(tape, &scores, &plan.pairs)?;
    let scaled = tape.scale(rank, plan.lambda_rank);
    let total = tape.add(weighted_ce, scaled)?;
    Ok(Objective {
        total,
        weighted_ce,
        rank,
    })
}

/// Records the full objective for `batch` under a fixed plan. Used to
/// re-evaluate a step's loss at perturbed parameters.
pub fn build_objective(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &ModelConfig,
    batch: &[Document],
    plan: &StepPlan,
) -> Result<Objective> {
    let fwd = record_teacher_forcing(tape, bound, cfg, batch)?;
    assemble(tape, bound, &fwd, plan)
}

/// One optimization step's loss and gradients.
///
/// Order of work: teacher-forced forward on the ground truth, batch bin
/// losses folded into the EMA, weights from the updated state, weighted CE,
/// then (when ranking is on) sampled candidates, rewards, normalized losses,
/// advantages, pairs with margins and the hinge loss on candidate scores, and
/// a single backward pass over the total.
pub fn training_step(
    batch: &[Document],
    params: &ModelParameters,
    state: &mut DifficultyState,
    cfg: &FpoConfig,
    seed: u64,
) -> Result<StepOutput> {
    if batch.is_empty() {
        return Err(Error::Validation("training step on an empty batch".into()));
    }
    if state.k != cfg.slots() {
        return Err(Error::Config(format!(
            "difficulty state has {} slots, configuration expects {}",
            state.k,
            cfg.slots()
        )));
    }
    let mut tape = Tape::with_capacity(batch.iter().map(|d| d.len() * 24).sum());
    let bound = BoundParams::bind(&mut tape, params);
    let fwd = record_teacher_forcing(&mut tape, &bound, &params.config, batch)?;

    let mut token_losses = Vec::new();
    let mut slots_per_doc = Vec::with_capacity(batch.len());
    let mut seq_ce = Vec::with_capacity(batch.len());
    for (doc, steps) in batch.iter().zip(&fwd.gt_steps) {
        let slots = cfg.slots_for_length(doc.len())?;
        let mut sum = 0.0;
        for (&v, &s) in steps.iter().zip(&slots) {
            let loss = -tape.scalar_value(v);
            sum += loss;
            token_losses.push((loss, s));
        }
        seq_ce.push(sum / steps.len() as f64);
        slots_per_doc.push(slots);
    }
    let bin_losses = batch_bin_loss(&token_losses, state.k, cfg.epsilon)?;
    ema_update(state, &bin_losses);
    let weights = cfg.weights(state)?;
    let token_weights: Vec<Vec<f64>> = slots_per_doc
        .iter()
        .map(|slots| slots.iter().map(|&s| weights[s]).collect())
        .collect();

    let mut rewards = Vec::new();
    let mut advantages = Vec::new();
    let mut pairs = Vec::new();
    let mut candidates: Vec<Option<ReadingOrder>> = vec![None; batch.len()];
    if cfg.ranking_enabled() && batch.len() >= 2 {
        let mut decoded = Vec::with_capacity(batch.len());
        for (i, doc) in batch.iter().enumerate() {
            let order = decode_on_tape(
                &mut tape,
                &bound,
                &fwd.encodings[i],
                cfg.candidate_decode,
                derive_seed(seed, i as u64 + 1),
            )?;
            let r = order_reward(order.as_slice(), doc.gt_order.as_slice())?;
            let norm = normalized_seq_loss(seq_ce[i], state);
            rewards.push(r);
            advantages.push(advantage(r, norm, cfg.beta));
            decoded.push(order);
        }
        pairs = select_pairs(&advantages, cfg.rho, cfg.max_pairs, derive_seed(seed, 0));
        let complexity: Vec<f64> = token_weights
            .iter()
            .map(|w| w.iter().sum::<f64>() / w.len() as f64)
            .collect();
        for p in &mut pairs {
            p.margin = if cfg.adaptive_margin {
                adaptive_margin(complexity[p.winner], complexity[p.loser], cfg.alpha)
            } else {
                cfg.alpha
            };
            candidates[p.winner] = Some(decoded[p.winner].clone());
            candidates[p.loser] = Some(decoded[p.loser].clone());
        }
        debug_assert!(slots_per_doc
            .iter()
            .zip(&complexity)
            .all(|(s, c)| (sequence_complexity(s, &weights).unwrap() - c).abs() < 1e-12));
    }

    let plan = StepPlan {
        token_weights,
        candidates,
        pairs,
        lambda_rank: cfg.lambda_rank,
    };
    let obj = assemble(&mut tape, &bound, &fwd, &plan)?;
    let total = tape.scalar_value(obj.total);
    let weighted_ce = tape.scalar_value(obj.weighted_ce);
    let rank_loss = tape.scalar_value(obj.rank);
    if !total.is_finite() {
        return Err(Error::NonFinite(format!(
            "step loss total={total} weighted_ce={weighted_ce} rank={rank_loss}"
        )));
    }
    let grads = tape.backward(obj.total)?;
    let mut gradients = params.zero_grads();
    bound.accumulate(&grads, &mut gradients);
    if gradients.values().flatten().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("non-finite gradient".into()));
    }
    Ok(StepOutput {
        total,
        weighted_ce,
        rank_loss,
        pairs_used: plan.pairs.len(),
        token_count: token_losses.len(),
        gradients,
        weights,
        rewards,
        advantages,
        plan,
    })
}
