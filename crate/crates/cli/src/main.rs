use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use focalorder_core::corpus::{generate_corpus, load_corpus, save_corpus, GeneratorConfig};
use focalorder_core::report::{
    analyze_predictions, load_predictions, mismatch_rows, predictions_from_eval, write_file, write_log_csv,
    write_mismatch_csv, write_per_doc_csv, write_predictions, write_profile_csv, write_sweep_csv,
    write_weights_csv,
};
use focalorder_core::trainer::{
    evaluate, load_checkpoint, save_checkpoint, sensitivity_harness, train, weight_rows, SweepParam, TrainConfig,
    TrainMode,
};
use focalorder_core::{Error, Result};

const DEFAULT_SEED: u64 = 42;

#[derive(Parser, Debug)]
#[command(name = "focalorder", version, about = "Difficulty-aware reading-order training experiments")]
struct Cli {
    /// Seed for every stochastic step of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML file with one table per subcommand; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Increase log output on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus.
    Gen(GenArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Greedy-decode a corpus and write its disparity profile.
    Eval(EvalArgs),
    /// Build a disparity profile from a prediction file.
    Analyze(AnalyzeArgs),
    /// Report ground-truth transitions that skip the nearest element.
    Mismatch(MismatchArgs),
    /// Dump the learned difficulty weights of a checkpoint.
    Weights(WeightsArgs),
    /// Train one model per value of a hyperparameter.
    Sweep(SweepArgs),
}

macro_rules! merge_from {
    ($dst:expr, $src:expr; $($f:ident),* $(,)?) => {
        $( if $dst.$f.is_none() { $dst.$f = $src.$f.take(); } )*
    };
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct GenArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    docs: Option<usize>,
    #[arg(long)]
    ambiguity: Option<f64>,
    #[arg(long)]
    elements_min: Option<usize>,
    #[arg(long)]
    elements_max: Option<usize>,
    #[arg(long)]
    columns_min: Option<usize>,
    #[arg(long)]
    columns_max: Option<usize>,
    #[arg(long)]
    page_width: Option<f64>,
    #[arg(long)]
    page_height: Option<f64>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct Hyper {
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda_rank: Option<f64>,
    #[arg(long)]
    max_pairs: Option<usize>,
}

impl Hyper {
    fn merge(&mut self, mut o: Hyper) {
        merge_from!(self, o; mode, epochs, batch, lr, hidden, k, gamma, delta, beta, rho, alpha, lambda_rank, max_pairs);
    }

    fn resolve(&self, seed: u64) -> Result<TrainConfig> {
        let mut c = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        if let Some(m) = &self.mode {
            c.mode = m.parse::<TrainMode>()?;
        }
        macro_rules! set {
            ($($f:ident => $($path:ident).+),* $(,)?) => { $( if let Some(v) = self.$f { c.$($path).+ = v; } )* };
        }
        set!(
            epochs => epochs, batch => batch_size, lr => base_lr, hidden => model.hidden_dim,
            k => fpo.k, gamma => fpo.gamma, delta => fpo.delta, beta => fpo.beta, rho => fpo.rho,
            alpha => fpo.alpha, lambda_rank => fpo.lambda_rank, max_pairs => fpo.max_pairs,
        );
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-step training log CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Per-step difficulty weight CSV.
    #[arg(long)]
    weights_out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    hyper: Hyper,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct EvalArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Disparity profile CSV.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Prediction file, one JSON object per document.
    #[arg(long)]
    emit_pred: Option<PathBuf>,
    /// Per-document edit distance CSV.
    #[arg(long)]
    per_doc: Option<PathBuf>,
    #[arg(long)]
    bins: Option<usize>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct AnalyzeArgs {
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct MismatchArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct WeightsArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct SweepArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Evaluation corpus; defaults to the training corpus.
    #[arg(long)]
    eval_data: Option<PathBuf>,
    /// One of K, beta, rho, alpha, lambda_rank.
    #[arg(long)]
    param: Option<String>,
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
    /// Training seeds per value; defaults to --seed.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    hyper: Hyper,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct FileConfig {
    seed: Option<u64>,
    gen: Option<toml::Table>,
    train: Option<toml::Table>,
    eval: Option<toml::Table>,
    analyze: Option<toml::Table>,
    mismatch: Option<toml::Table>,
    weights: Option<toml::Table>,
    sweep: Option<toml::Table>,
}

fn config_error(msg: String) -> Error {
    Error::Config(msg)
}

/// Deserializes a config table, rejecting keys that no flag mirrors.
fn section<T: DeserializeOwned + Serialize + Default>(table: Option<toml::Table>, name: &str) -> Result<T> {
    let Some(table) = table else {
        return Ok(T::default());
    };
    let parsed: T = table
        .clone()
        .try_into()
        .map_err(|e| config_error(format!("[{name}]: {e}")))?;
    let known = toml::Table::try_from(&parsed).map_err(|e| config_error(format!("[{name}]: {e}")))?;
    if let Some(key) = table.keys().find(|k| !known.contains_key(*k)) {
        return Err(config_error(format!("[{name}]: unknown key {key:?}")));
    }
    Ok(parsed)
}

fn read_file_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let top: toml::Table = text
        .parse()
        .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    let allowed = ["seed", "gen", "train", "eval", "analyze", "mismatch", "weights", "sweep"];
    if let Some(key) = top.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(config_error(format!("{}: unknown key {key:?}", path.display())));
    }
    top.try_into()
        .map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| Error::Validation(format!("missing required flag --{flag}")))
}

fn print_resolved<T: Serialize>(command: &str, seed: u64, value: &T) -> Result<()> {
    #[derive(Serialize)]
    struct Resolved<'a, T> {
        command: &'a str,
        seed: u64,
        config: &'a T,
    }
    let text = toml::to_string(&Resolved {
        command,
        seed,
        config: value,
    })
    .map_err(|e| config_error(format!("cannot print configuration: {e}")))?;
    println!("# resolved configuration\n{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut file = match &cli.config {
        Some(p) => read_file_config(p)?,
        None => FileConfig::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
    match cli.command {
        Command::Gen(mut a) => {
            let mut f: GenArgs = section(file.gen.take(), "gen")?;
            merge_from!(a, f; out, docs, ambiguity, elements_min, elements_max, columns_min, columns_max, page_width, page_height);
            let out = required(&a.out, "out")?;
            let mut cfg = GeneratorConfig {
                seed,
                ..GeneratorConfig::default()
            };
            macro_rules! set {
                ($($f:ident => $g:ident),*) => { $( if let Some(v) = a.$f { cfg.$g = v; } )* };
            }
            set!(docs => n_docs, ambiguity => ambiguity, elements_min => elements_min, elements_max => elements_max,
                 columns_min => columns_min, columns_max => columns_max, page_width => page_width, page_height => page_height);
            cfg.validate()?;
            print_resolved("gen", seed, &cfg)?;
            let docs = generate_corpus(&cfg)?;
            save_corpus(&docs, out)?;
            println!("wrote {} documents to {}", docs.len(), out.display());
        }
        Command::Train(mut a) => {
            let mut f: TrainArgs = section(file.train.take(), "train")?;
            merge_from!(a, f; data, out, log, weights_out);
            a.hyper.merge(f.hyper);
            let data = required(&a.data, "data")?;
            let out = required(&a.out, "out")?;
            let cfg = a.hyper.resolve(seed)?;
            print_resolved("train", seed, &cfg)?;
            let corpus = load_corpus(data)?;
            let result = train(&cfg, &corpus)?;
            save_checkpoint(&result.checkpoint, out)?;
            if let Some(p) = &a.log {
                write_file(p, |w| write_log_csv(&result.log, w))?;
            }
            if let Some(p) = &a.weights_out {
                write_file(p, |w| write_weights_csv(&result.weights, w))?;
            }
            let last = result.log.last().map_or(f64::NAN, |r| r.total);
            println!(
                "trained {} steps, final loss {last:.6}, checkpoint {}",
                result.checkpoint.step,
                out.display()
            );
        }
        Command::Eval(mut a) => {
            let mut f: EvalArgs = section(file.eval.take(), "eval")?;
            merge_from!(a, f; ckpt, data, report, emit_pred, per_doc, bins);
            let ckpt_path = required(&a.ckpt, "ckpt")?;
            let data = required(&a.data, "data")?;
            let bins = a.bins.unwrap_or(10);
            print_resolved("eval", seed, &a)?;
            let ckpt = load_checkpoint(ckpt_path)?;
            let corpus = load_corpus(data)?;
            let e = evaluate(&ckpt.params, &corpus, bins)?;
            if let Some(p) = &a.report {
                write_file(p, |w| write_profile_csv(&e.profile, w))?;
            }
            if let Some(p) = &a.emit_pred {
                write_file(p, |w| write_predictions(&predictions_from_eval(&e.per_doc), w))?;
            }
            if let Some(p) = &a.per_doc {
                write_file(p, |w| write_per_doc_csv(&e.per_doc, w))?;
            }
            println!("mean_edit {:.6} over {} documents", e.mean_edit, corpus.len());
        }
        Command::Analyze(mut a) => {
            let mut f: AnalyzeArgs = section(file.analyze.take(), "analyze")?;
            merge_from!(a, f; pred, gt, bins, out);
            let pred = required(&a.pred, "pred")?;
            let gt = required(&a.gt, "gt")?;
            let out = required(&a.out, "out")?;
            print_resolved("analyze", seed, &a)?;
            let preds = load_predictions(pred)?;
            let corpus = load_corpus(gt)?;
            let analysis = analyze_predictions(&preds, &corpus, a.bins.unwrap_or(10))?;
            if !analysis.non_permutations.is_empty() {
                eprintln!(
                    "warning: {} prediction(s) are not permutations of their document",
                    analysis.non_permutations.len()
                );
            }
            if !analysis.missing.is_empty() {
                eprintln!(
                    "warning: {} document(s) have no prediction and count as all deletions",
                    analysis.missing.len()
                );
            }
            write_file(out, |w| write_profile_csv(&analysis.profile, w))?;
            println!(
                "{} errors over {} tokens",
                analysis.profile.total_errors(),
                analysis.profile.total_tokens()
            );
        }
        Command::Mismatch(mut a) => {
            let mut f: MismatchArgs = section(file.mismatch.take(), "mismatch")?;
            merge_from!(a, f; data, out);
            let data = required(&a.data, "data")?;
            let out = required(&a.out, "out")?;
            print_resolved("mismatch", seed, &a)?;
            let corpus = load_corpus(data)?;
            let rows = mismatch_rows(&corpus);
            write_file(out, |w| write_mismatch_csv(&rows, w))?;
            let middle = rows
                .iter()
                .filter(|r| (0.2..=0.8).contains(&r.relative_position))
                .count();
            let share = if rows.is_empty() { 0.0 } else { middle as f64 / rows.len() as f64 };
            println!("{} mismatches, {:.4} of them in [0.2, 0.8]", rows.len(), share);
        }
        Command::Weights(mut a) => {
            let mut f: WeightsArgs = section(file.weights.take(), "weights")?;
            merge_from!(a, f; ckpt, out);
            let ckpt_path = required(&a.ckpt, "ckpt")?;
            let out = required(&a.out, "out")?;
            print_resolved("weights", seed, &a)?;
            let ckpt = load_checkpoint(ckpt_path)?;
            let fpo = ckpt.train_config.effective_fpo();
            let weights = fpo.weights(&ckpt.state)?;
            let rows = weight_rows(ckpt.step as usize, &ckpt.state, &weights);
            write_file(out, |w| write_weights_csv(&rows, w))?;
            let text: Vec<String> = weights.iter().map(|w| format!("{w:.4}")).collect();
            println!("weights {}", text.join(" "));
        }
        Command::Sweep(mut a) => {
            let mut f: SweepArgs = section(file.sweep.take(), "sweep")?;
            merge_from!(a, f; data, eval_data, param, values, seeds, out);
            a.hyper.merge(f.hyper);
            let data = required(&a.data, "data")?;
            let out = required(&a.out, "out")?;
            let param: SweepParam = required(&a.param, "param")?.parse()?;
            let values = a.values.clone().unwrap_or_default();
            let seeds = a.seeds.clone().unwrap_or_else(|| vec![seed]);
            let cfg = a.hyper.resolve(seed)?;
            for &v in &values {
                let mut probe = cfg.clone();
                param.apply(&mut probe, v)?;
                probe.validate()?;
            }
            print_resolved("sweep", seed, &(&a, &cfg))?;
            let train_corpus = load_corpus(data)?;
            let eval_corpus = match &a.eval_data {
                Some(p) => load_corpus(p)?,
                None => train_corpus.clone(),
            };
            let rows = sensitivity_harness(&cfg, &train_corpus, &eval_corpus, param, &values, &seeds)?;
            write_file(out, |w| write_sweep_csv(&rows, w))?;
            println!("wrote {} sweep rows to {}", rows.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::new().parse_filters(level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
