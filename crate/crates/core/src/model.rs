//! Pointer-style sorter over layout elements.
//!
//! Elements are embedded from normalized geometry and category. Decoding
//! keeps a recurrent state `s`; at every step each unread element `j` gets
//! the bilinear logit `s · W · e_j`, and after choosing `c` the state moves
//! to `tanh(U s + V e_c)`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::layout::{default_vocabulary, is_permutation, normalize_bbox, Document, ReadingOrder};

pub const FEATURE_DIM: usize = 8;

pub const CATEGORY_EMBEDDING: &str = "category_embedding";
pub const GEOMETRY_PROJECTION: &str = "geometry_projection";
pub const STATE_RECURRENCE: &str = "state_recurrence";
pub const STATE_INPUT: &str = "state_input";
pub const SCORE_BILINEAR: &str = "score_bilinear";
pub const START_STATE: &str = "start_state";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub category_vocab: Vec<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dim: 64,
            category_vocab: default_vocabulary(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be at least 1".into()));
        }
        if self.category_vocab.is_empty() {
            return Err(Error::Config("category vocabulary is empty".into()));
        }
        Ok(())
    }

    pub fn category_index(&self, label: &str) -> Result<usize> {
        self.category_vocab
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::UnknownCategory(label.to_string()))
    }

    fn shapes(&self) -> [(&'static str, Vec<usize>); 6] {
        let h = self.hidden_dim;
        [
            (CATEGORY_EMBEDDING, vec![self.category_vocab.len(), h]),
            (GEOMETRY_PROJECTION, vec![FEATURE_DIM, h]),
            (STATE_RECURRENCE, vec![h, h]),
            (STATE_INPUT, vec![h, h]),
            (SCORE_BILINEAR, vec![h, h]),
            (START_STATE, vec![h]),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `[-1/sqrt(hidden), 1/sqrt(hidden)]`.
    Uniform,
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub config: ModelConfig,
    pub tensors: BTreeMap<String, Tensor>,
}

/// Per-parameter gradient buffers keyed like [`ModelParameters::tensors`].
pub type ParamGrads = BTreeMap<String, Vec<f64>>;

pub fn init_params(cfg: &ModelConfig, seed: u64, init: Init) -> Result<ModelParameters> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / (cfg.hidden_dim as f64).sqrt();
    let mut tensors = BTreeMap::new();
    for (name, shape) in cfg.shapes() {
        let mut t = Tensor::zeros(shape);
        if init == Init::Uniform {
            t.data.iter_mut().for_each(|v| *v = rng.gen_range(-bound..=bound));
        }
        t.requires_grad = true;
        tensors.insert(name.to_string(), t);
    }
    Ok(ModelParameters {
        config: cfg.clone(),
        tensors,
    })
}

impl ModelParameters {
    pub fn get(&self, name: &str) -> &Tensor {
        &self.tensors[name]
    }

    pub fn zero_grads(&self) -> ParamGrads {
        self.tensors.iter().map(|(k, t)| (k.clone(), vec![0.0; t.numel()])).collect()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Checks names and shapes against the configuration.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let shapes = self.config.shapes();
        if self.tensors.len() != shapes.len() {
            return Err(Error::Incompatible(format!(
                "expected {} parameter tensors, found {}",
                shapes.len(),
                self.tensors.len()
            )));
        }
        for (name, shape) in shapes {
            match self.tensors.get(name) {
                Some(t) if t.shape == shape && t.data.len() == shape.iter().product::<usize>() => {}
                Some(t) => {
                    return Err(Error::Incompatible(format!(
                        "parameter {name} has shape {:?}, expected {shape:?}",
                        t.shape
                    )))
                }
                None => return Err(Error::Incompatible(format!("missing parameter {name}"))),
            }
        }
        if !self.is_finite() {
            return Err(Error::Incompatible("parameters contain non-finite values".into()));
        }
        Ok(())
    }
}

/// Parameters recorded on a tape.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub vars: BTreeMap<String, Var>,
    category: Var,
    geometry: Var,
    recurrence: Var,
    input: Var,
    bilinear: Var,
    start: Var,
}

impl BoundParams {
    pub fn bind(tape: &mut Tape, params: &ModelParameters) -> Self {
        let vars: BTreeMap<String, Var> =
            params.tensors.iter().map(|(k, t)| (k.clone(), tape.leaf(t))).collect();
        Self::from_vars(vars)
    }

    /// Binds without recording gradients (inference).
    pub fn bind_frozen(tape: &mut Tape, params: &ModelParameters) -> Self {
        let vars: BTreeMap<String, Var> = params
            .tensors
            .iter()
            .map(|(k, t)| {
                let v = tape.constant(t.shape.clone(), t.data.clone()).expect("valid tensor");
                (k.clone(), v)
            })
            .collect();
        Self::from_vars(vars)
    }

    /// Uses `vars` as the parameter nodes (keys must match the model's).
    pub fn from_vars(vars: BTreeMap<String, Var>) -> Self {
        BoundParams {
            category: vars[CATEGORY_EMBEDDING],
            geometry: vars[GEOMETRY_PROJECTION],
            recurrence: vars[STATE_RECURRENCE],
            input: vars[STATE_INPUT],
            bilinear: vars[SCORE_BILINEAR],
            start: vars[START_STATE],
            vars,
        }
    }

    pub fn accumulate(&self, grads: &Gradients, into: &mut ParamGrads) {
        for (name, v) in &self.vars {
            if let Some(g) = grads.get(*v) {
                let acc = into.get_mut(name).expect("gradient buffer per parameter");
                acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
    }
}

/// Normalized `(cx, cy, w, h, x0, y0, x1, y1)`.
pub fn element_features(doc: &Document, i: usize) -> Result<[f64; FEATURE_DIM]> {
    let b = normalize_bbox(&doc.elements[i].bbox, doc.page_width, doc.page_height)?;
    let (cx, cy) = b.center();
    Ok([cx, cy, b.width(), b.height(), b.x0, b.y0, b.x1, b.y1])
}

/// Element embeddings of one document on a tape.
#[derive(Debug, Clone)]
pub struct Encoding {
    pub rows: Vec<Var>,
    /// `rows` stacked into an `[n x hidden]` matrix.
    pub matrix: Var,
}

pub fn encode_on_tape(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &ModelConfig,
    doc: &Document,
) -> Result<Encoding> {
    if doc.is_empty() {
        return Err(Error::Validation(format!("document {:?} is empty", doc.doc_id)));
    }
    let mut rows = Vec::with_capacity(doc.len());
    for (i, e) in doc.elements.iter().enumerate() {
        let cat = cfg.category_index(&e.category)?;
        let f = tape.constant_vec(element_features(doc, i)?.to_vec());
        let geo = tape.vecmat(f, bound.geometry)?;
        let emb = tape.row(bound.category, cat)?;
        let pre = tape.add(geo, emb)?;
        rows.push(tape.tanh(pre));
    }
    let matrix = tape.stack(&rows)?;
    Ok(Encoding { rows, matrix })
}

/// Step-by-step decoder over an [`Encoding`].
struct Decoder<'a> {
    bound: &'a BoundParams,
    enc: &'a Encoding,
    state: Var,
    visited: Vec<bool>,
}

impl<'a> Decoder<'a> {
    fn new(bound: &'a BoundParams, enc: &'a Encoding) -> Self {
        Decoder {
            bound,
            enc,
            state: bound.start,
            visited: vec![false; enc.rows.len()],
        }
    }

    /// Logits over all elements for the current state.
    fn logits(&self, tape: &mut Tape) -> Result<Var> {
        let query = tape.vecmat(self.state, self.bound.bilinear)?;
        tape.matvec(self.enc.matrix, query)
    }

    fn mask(&self) -> Vec<bool> {
        self.visited.iter().map(|v| !v).collect()
    }

    fn advance(&mut self, tape: &mut Tape, chosen: usize, last: bool) -> Result<()> {
        self.visited[chosen] = true;
        if !last {
            let rec = tape.matvec(self.bound.recurrence, self.state)?;
            let inp = tape.matvec(self.bound.input, self.enc.rows[chosen])?;
            let pre = tape.add(rec, inp)?;
            self.state = tape.tanh(pre);
        }
        Ok(())
    }
}

/// Teacher-forced `log P(order[t] | order[..t])` for every step, as tape
/// scalars.
pub fn step_logprobs_on_tape(
    tape: &mut Tape,
    bound: &BoundParams,
    enc: &Encoding,
    order: &[usize],
) -> Result<Vec<Var>> {
    let n = enc.rows.len();
    if !is_permutation(order, n) {
        return Err(Error::Validation(format!(
            "order {order:?} is not a permutation of 0..{n}"
        )));
    }
    let mut dec = Decoder::new(bound, enc);
    let mut out = Vec::with_capacity(n);
    for (t, &c) in order.iter().enumerate() {
        let logits = dec.logits(tape)?;
        let lp = tape.masked_log_softmax(logits, &dec.mask())?;
        out.push(tape.gather(lp, c)?);
        dec.advance(tape, c, t + 1 == n)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceScore {
    pub step_logprobs: Vec<f64>,
    /// `-(1/N) sum log p`.
    pub ce: f64,
    /// `(1/N) sum log p`, equal to `-ce`.
    pub norm_score: f64,
}

pub fn score_sequence(doc: &Document, order: &ReadingOrder, params: &ModelParameters) -> Result<SequenceScore> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind_frozen(&mut tape, params);
    let enc = encode_on_tape(&mut tape, &bound, &params.config, doc)?;
    let steps = step_logprobs_on_tape(&mut tape, &bound, &enc, order.as_slice())?;
    let step_logprobs: Vec<f64> = steps.iter().map(|&v| tape.scalar_value(v)).collect();
    let norm_score = step_logprobs.iter().sum::<f64>() / step_logprobs.len() as f64;
    Ok(SequenceScore {
        step_logprobs,
        ce: -norm_score,
        norm_score,
    })
}

/// Per-document element embeddings `[n][hidden]`.
pub fn encode(doc: &Document, params: &ModelParameters) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind_frozen(&mut tape, params);
    let enc = encode_on_tape(&mut tape, &bound, &params.config, doc)?;
    Ok(enc.rows.iter().map(|&r| tape.value(r).to_vec()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    Greedy,
    Sample { temperature: f64 },
}

/// Free-running decode; always returns a permutation of the elements.
pub fn decode(doc: &Document, params: &ModelParameters, mode: DecodeMode, seed: u64) -> Result<ReadingOrder> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind_frozen(&mut tape, params);
    let enc = encode_on_tape(&mut tape, &bound, &params.config, doc)?;
    decode_on_tape(&mut tape, &bound, &enc, mode, seed)
}

pub fn decode_on_tape(
    tape: &mut Tape,
    bound: &BoundParams,
    enc: &Encoding,
    mode: DecodeMode,
    seed: u64,
) -> Result<ReadingOrder> {
    if let DecodeMode::Sample { temperature } = mode {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
        }
    }
    let n = enc.rows.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dec = Decoder::new(bound, enc);
    let mut order = Vec::with_capacity(n);
    for t in 0..n {
        let logits = dec.logits(tape)?;
        let values = tape.value(logits);
        let chosen = match mode {
            DecodeMode::Greedy => argmax_unvisited(values, &dec.visited),
            DecodeMode::Sample { temperature } => {
                sample_unvisited(values, &dec.visited, temperature, &mut rng)
            }
        };
        order.push(chosen);
        dec.advance(tape, chosen, t + 1 == n)?;
    }
    Ok(ReadingOrder(order))
}

fn argmax_unvisited(logits: &[f64], visited: &[bool]) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (j, &v) in logits.iter().enumerate() {
        if visited[j] {
            continue;
        }
        match best {
            Some((_, bv)) if v <= bv => {}
            _ => best = Some((j, v)),
        }
    }
    best.expect("at least one unvisited element").0
}

fn sample_unvisited(logits: &[f64], visited: &[bool], temperature: f64, rng: &mut ChaCha8Rng) -> usize {
    let max = logits
        .iter()
        .zip(visited)
        .filter(|(_, &v)| !v)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits
        .iter()
        .zip(visited)
        .map(|(l, &v)| if v { 0.0 } else { ((l - max) / temperature).exp() })
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut last = None;
    for (j, w) in weights.iter().enumerate() {
        if visited[j] {
            continue;
        }
        last = Some(j);
        if u < *w {
            return j;
        }
        u -= w;
    }
    last.expect("at least one unvisited element")
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ModelParameters {
    pub fn to_records(&self) -> BTreeMap<String, TensorRecord> {
        self.tensors
            .iter()
            .map(|(k, t)| {
                (
                    k.clone(),
                    TensorRecord {
                        shape: t.shape.clone(),
                        data: t.data.clone(),
                    },
                )
            })
            .collect()
    }

    pub fn from_records(config: ModelConfig, records: BTreeMap<String, TensorRecord>) -> Result<Self> {
        let mut tensors = BTreeMap::new();
        for (k, r) in records {
            let mut t = Tensor::new(r.shape, r.data)
                .map_err(|e| Error::Incompatible(format!("parameter {k}: {e}")))?;
            t.requires_grad = true;
            tensors.insert(k, t);
        }
        let p = ModelParameters { config, tensors };
        p.validate()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::corpus::{generate_document, GeneratorConfig};
    use crate::layout::{BoundingBox, LayoutElement};

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            hidden_dim: 6,
            ..ModelConfig::default()
        }
    }

    fn doc(n: usize, seed: u64) -> Document {
        let g = GeneratorConfig {
            elements_min: n,
            elements_max: n,
            ambiguity: 0.7,
            ..GeneratorConfig::default()
        };
        generate_document(&g, seed).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let cfg = ModelConfig::default();
        let a = init_params(&cfg, 3, Init::Uniform).unwrap();
        assert_eq!(a, init_params(&cfg, 3, Init::Uniform).unwrap());
        assert_ne!(a, init_params(&cfg, 4, Init::Uniform).unwrap());
        a.validate().unwrap();
        assert_eq!(a.get(CATEGORY_EMBEDDING).shape, vec![8, 64]);
        assert_eq!(a.get(GEOMETRY_PROJECTION).shape, vec![8, 64]);
        assert_eq!(a.get(SCORE_BILINEAR).shape, vec![64, 64]);
        assert_eq!(a.get(START_STATE).shape, vec![64]);
        let bound = 1.0 / 8.0;
        assert!(a.tensors.values().all(|t| t.data.iter().all(|v| v.abs() <= bound)));
        let z = init_params(&cfg, 3, Init::Zeros).unwrap();
        assert!(z.tensors.values().all(|t| t.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn zero_params_embed_to_zero() {
        let p = init_params(&small_cfg(), 0, Init::Zeros).unwrap();
        let e = encode(&doc(7, 1), &p).unwrap();
        assert!(e.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn encoding_is_permutation_equivariant() {
        let p = init_params(&small_cfg(), 5, Init::Uniform).unwrap();
        let d = doc(9, 2);
        let e = encode(&d, &p).unwrap();
        let perm: Vec<usize> = vec![3, 0, 8, 1, 7, 2, 6, 4, 5];
        let mut shuffled = d.clone();
        shuffled.elements = perm.iter().map(|&i| d.elements[i].clone()).collect();
        let es = encode(&shuffled, &p).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(es[k], e[i]);
        }
    }

    #[test]
    fn identical_elements_share_embeddings() {
        let el = |i| LayoutElement {
            element_id: i,
            bbox: BoundingBox { x0: 1.0, y0: 2.0, x1: 5.0, y1: 9.0 },
            category: "table".into(),
        };
        let d = Document::new("twin", 10.0, 10.0, vec![el(0), el(1)], vec![0, 1]).unwrap();
        let p = init_params(&small_cfg(), 1, Init::Uniform).unwrap();
        let e = encode(&d, &p).unwrap();
        assert_eq!(e[0], e[1]);
    }

    #[test]
    fn unknown_category_is_named() {
        let mut d = doc(4, 3);
        d.elements[2].category = "marginalia".into();
        let p = init_params(&small_cfg(), 1, Init::Uniform).unwrap();
        match encode(&d, &p) {
            Err(Error::UnknownCategory(l)) => assert_eq!(l, "marginalia"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_params_score_uniformly() {
        let p = init_params(&small_cfg(), 0, Init::Zeros).unwrap();
        let d = doc(3, 4);
        let s = score_sequence(&d, &d.gt_order, &p).unwrap();
        assert!((s.ce - 6f64.ln() / 3.0).abs() < 1e-15);
        assert_eq!(s.step_logprobs[2], 0.0);
        assert_eq!(s.norm_score, -s.ce);
        let g = decode(&d, &p, DecodeMode::Greedy, 0).unwrap();
        assert_eq!(g.0, vec![0, 1, 2]);
    }

    #[test]
    fn rejects_non_permutations() {
        let p = init_params(&small_cfg(), 0, Init::Uniform).unwrap();
        let d = doc(4, 4);
        assert!(score_sequence(&d, &ReadingOrder(vec![0, 1, 1, 2]), &p).is_err());
        assert!(score_sequence(&d, &ReadingOrder(vec![0, 1, 2]), &p).is_err());
    }

    #[test]
    fn step_distributions_normalize() {
        let p = init_params(&small_cfg(), 9, Init::Uniform).unwrap();
        let d = doc(8, 5);
        let mut tape = Tape::new();
        let bound = BoundParams::bind_frozen(&mut tape, &p);
        let enc = encode_on_tape(&mut tape, &bound, &p.config, &d).unwrap();
        let mut dec = Decoder::new(&bound, &enc);
        for (t, &c) in d.gt_order.0.iter().enumerate() {
            let logits = dec.logits(&mut tape).unwrap();
            let lp = tape.masked_log_softmax(logits, &dec.mask()).unwrap();
            let total: f64 = tape.value(lp).iter().map(|v| v.exp()).sum();
            assert!((total - 1.0).abs() < 1e-12);
            dec.advance(&mut tape, c, t + 1 == d.len()).unwrap();
        }
    }

    #[test]
    fn decode_outputs_permutations() {
        let p = init_params(&small_cfg(), 2, Init::Uniform).unwrap();
        for s in 0..20 {
            let d = doc(3 + (s as usize % 12), s);
            for mode in [DecodeMode::Greedy, DecodeMode::Sample { temperature: 1.0 }, DecodeMode::Sample { temperature: 0.3 }] {
                let o = decode(&d, &p, mode, s).unwrap();
                assert!(o.is_permutation_of(d.len()));
            }
            let m = DecodeMode::Sample { temperature: 1.0 };
            assert_eq!(decode(&d, &p, m, 77).unwrap(), decode(&d, &p, m, 77).unwrap());
        }
        let d = doc(5, 1);
        assert!(decode(&d, &p, DecodeMode::Sample { temperature: 0.0 }, 0).is_err());
    }

    #[test]
    fn greedy_is_a_local_argmax() {
        let p = init_params(&ModelConfig { hidden_dim: 10, ..ModelConfig::default() }, 11, Init::Uniform).unwrap();
        for s in 0..5 {
            let d = doc(7, 20 + s);
            let g = decode(&d, &p, DecodeMode::Greedy, 0).unwrap();
            let base = score_sequence(&d, &g, &p).unwrap();
            for t in 0..d.len() {
                for k in t + 1..d.len() {
                    let mut alt = g.clone();
                    alt.0.swap(t, k);
                    let s_alt = score_sequence(&d, &alt, &p).unwrap();
                    assert!(base.step_logprobs[t] >= s_alt.step_logprobs[t]);
                }
            }
        }
    }

    #[test]
    fn ce_gradient_matches_finite_differences() {
        let cfg = ModelConfig { hidden_dim: 5, ..ModelConfig::default() };
        for seed in 0..3 {
            let p = init_params(&cfg, seed, Init::Uniform).unwrap();
            let d = doc(6, 100 + seed);
            let names: Vec<String> = p.tensors.keys().cloned().collect();
            let tensors: Vec<Tensor> = p.tensors.values().cloned().collect();
            let report = grad_check(&tensors, 1e-5, |tape, vars| {
                let map = names.iter().cloned().zip(vars.iter().copied()).collect();
                let bound = BoundParams::from_vars(map);
                let enc = encode_on_tape(tape, &bound, &cfg, &d)?;
                let steps = step_logprobs_on_tape(tape, &bound, &enc, d.gt_order.as_slice())?;
                let packed = tape.pack(&steps)?;
                let m = tape.mean(packed)?;
                Ok(tape.scale(m, -1.0))
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{report:?}");
        }
    }

    #[test]
    fn records_round_trip_and_validate() {
        let p = init_params(&small_cfg(), 8, Init::Uniform).unwrap();
        let back = ModelParameters::from_records(p.config.clone(), p.to_records()).unwrap();
        assert_eq!(back, p);
        let other = ModelConfig { hidden_dim: 7, ..small_cfg() };
        assert!(ModelParameters::from_records(other, p.to_records()).is_err());
    }
}
