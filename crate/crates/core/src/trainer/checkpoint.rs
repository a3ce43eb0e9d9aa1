use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::fpo::DifficultyState;
use crate::model::{ModelConfig, ModelParameters, TensorRecord};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParameters,
    pub state: DifficultyState,
    pub train_config: TrainConfig,
    pub step: u64,
    pub corpus_hash: String,
}

#[derive(Serialize, Deserialize)]
struct Record {
    format_version: u32,
    model_config: ModelConfig,
    parameters: BTreeMap<String, TensorRecord>,
    difficulty_state: DifficultyState,
    train_config: TrainConfig,
    step: u64,
    corpus_hash: String,
}

impl Checkpoint {
    pub fn new(
        params: ModelParameters,
        state: DifficultyState,
        train_config: TrainConfig,
        step: u64,
        corpus_hash: String,
    ) -> Self {
        Checkpoint {
            params,
            state,
            train_config,
            step,
            corpus_hash,
        }
    }
}

fn parse_error(e: serde_json::Error) -> Error {
    Error::Parse {
        line: e.line(),
        message: e.to_string(),
    }
}

pub fn checkpoint_to_json(ckpt: &Checkpoint) -> Result<String> {
    let record = Record {
        format_version: FORMAT_VERSION,
        model_config: ckpt.params.config.clone(),
        parameters: ckpt.params.to_records(),
        difficulty_state: ckpt.state.clone(),
        train_config: ckpt.train_config.clone(),
        step: ckpt.step,
        corpus_hash: ckpt.corpus_hash.clone(),
    };
    let mut s = serde_json::to_string(&record)?;
    s.push('\n');
    Ok(s)
}

pub fn checkpoint_from_json(text: &str) -> Result<Checkpoint> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(parse_error)?;
    let found = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: "missing integer field format_version".into(),
        })?;
    if found != u64::from(FORMAT_VERSION) {
        return Err(Error::VersionMismatch {
            found: u32::try_from(found).unwrap_or(u32::MAX),
            expected: FORMAT_VERSION,
        });
    }
    let record: Record = serde_json::from_value(value).map_err(parse_error)?;
    if record.model_config != record.train_config.model {
        return Err(Error::Incompatible(
            "model_config disagrees with the training configuration".into(),
        ));
    }
    let params = ModelParameters::from_records(record.model_config, record.parameters)?;
    if record.difficulty_state.ema.len() != record.difficulty_state.k
        || record.difficulty_state.observed.len() != record.difficulty_state.k
    {
        return Err(Error::Incompatible("difficulty state length disagrees with its slot count".into()));
    }
    Ok(Checkpoint {
        params,
        state: record.difficulty_state,
        train_config: record.train_config,
        step: record.step,
        corpus_hash: record.corpus_hash,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_to_json(ckpt)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_json(&text)
}

/// Loads a checkpoint and rejects it unless it was built for `expected`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    if &ckpt.params.config != expected {
        return Err(Error::Incompatible(format!(
            "checkpoint model has hidden_dim {} and {} categories, expected hidden_dim {} and {} categories",
            ckpt.params.config.hidden_dim,
            ckpt.params.config.category_vocab.len(),
            expected.hidden_dim,
            expected.category_vocab.len()
        )));
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, GeneratorConfig};
    use crate::trainer::{evaluate, train, TrainMode};

    fn trained() -> (Checkpoint, Vec<crate::layout::Document>) {
        let docs = generate_corpus(&GeneratorConfig {
            n_docs: 6,
            elements_min: 5,
            elements_max: 8,
            ..GeneratorConfig::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            mode: TrainMode::FullFpo,
            epochs: 1,
            batch_size: 3,
            model: ModelConfig {
                hidden_dim: 6,
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        };
        (train(&cfg, &docs).unwrap().checkpoint, docs)
    }

    #[test]
    fn round_trip_preserves_evaluation() {
        let (ckpt, docs) = trained();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        save_checkpoint(&ckpt, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(
            evaluate(&back.params, &docs, 10).unwrap(),
            evaluate(&ckpt.params, &docs, 10).unwrap()
        );
        assert_eq!(checkpoint_to_json(&back).unwrap(), fs::read_to_string(&path).unwrap());
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let (ckpt, _) = trained();
        let text = checkpoint_to_json(&ckpt).unwrap();
        for cut in [0, 1, text.len() / 3, text.len() - 3] {
            assert!(matches!(checkpoint_from_json(&text[..cut]), Err(Error::Parse { .. })), "cut {cut}");
        }
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let (ckpt, _) = trained();
        let text = checkpoint_to_json(&ckpt).unwrap().replacen("\"format_version\":1", "\"format_version\":7", 1);
        assert!(matches!(
            checkpoint_from_json(&text),
            Err(Error::VersionMismatch { found: 7, expected: 1 })
        ));
    }

    #[test]
    fn other_model_config_is_rejected() {
        let (ckpt, _) = trained();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        save_checkpoint(&ckpt, &path).unwrap();
        let other = ModelConfig {
            hidden_dim: 7,
            ..ModelConfig::default()
        };
        assert!(matches!(load_checkpoint_for(&path, &other), Err(Error::Incompatible(_))));
        assert!(load_checkpoint_for(&path, &ckpt.params.config).is_ok());
        assert!(matches!(load_checkpoint(dir.path().join("missing.json")), Err(Error::Io { .. })));
    }
}
