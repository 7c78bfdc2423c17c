//! Command-line driver: synthetic data generation, training, streaming
//! decoding, evaluation, and fusion-coefficient sweeps.

use clap::{Args, Parser, Subcommand};
use msd_kws::config::RunConfig;
use msd_kws::data::{self, Manifest};
use msd_kws::decoder::{
    decode_posteriors, sar_stream_decode, utterance_score, DecodeParams, KeywordSpec,
    PosteriorLattice,
};
use msd_kws::error::{Error, Result};
use msd_kws::eval::{macro_recall, write_report, EvalSet};
use msd_kws::io::atomic_write;
use msd_kws::model::TransducerModel;
use msd_kws::trainer::{self, TrainSample};
use msd_kws::Tensor;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "msdkws", about = "Streaming keyword spotting transducer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// key = value config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Inline overrides, e.g. --set train.lr=0.002 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for s in &self.sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set '{}' is not KEY=VALUE", s)))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (features, manifest, keyword table).
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a generated corpus.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Corpus directory (from gen-data).
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint output directory.
        #[arg(long)]
        out: PathBuf,
        /// Resume from a training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score every utterance in a corpus against one keyword.
    Decode {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Keyword name from the corpus keyword table.
        #[arg(long)]
        keyword: String,
        /// Decoding mode: sar (fused), ar (alpha = 1), nar (alpha = 0).
        #[arg(long, default_value = "sar")]
        mode: String,
        /// Restrict to positive or negative utterances.
        #[arg(long, default_value = "all")]
        filter: String,
        /// Write scores here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recall at a false-alarm budget, per keyword and macro-averaged.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Macro recall across a list of fusion coefficients.
    SweepAlpha {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated alpha values, e.g. 0,0.3,0.5,1.
        #[arg(long, default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1")]
        alphas: String,
        /// Write the sweep table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => atomic_write(path, text.as_bytes()),
        None => {
            print!("{}", text);
            Ok(())
        }
    }
}

/// Load and stack every utterance's features.
fn load_stacked(
    root: &Path,
    manifest: &Manifest,
    cfg: &RunConfig,
    expect_dim: usize,
) -> Result<Vec<Tensor>> {
    let stacked: Vec<Result<Tensor>> = manifest
        .entries
        .par_iter()
        .map(|e| {
            let raw = data::load_entry_features(root, e)?;
            data::stack_frames(&raw, cfg.stack_left, cfg.stack_right)
        })
        .collect();
    let stacked = stacked.into_iter().collect::<Result<Vec<Tensor>>>()?;
    for (t, e) in stacked.iter().zip(&manifest.entries) {
        if t.shape()[1] != expect_dim {
            return Err(Error::Dimension(format!(
                "{}: stacked feature dim {} != model feature dim {}",
                e.utt_id,
                t.shape()[1],
                expect_dim
            )));
        }
    }
    Ok(stacked)
}

fn keyword_spec(root: &Path, name: &str) -> Result<KeywordSpec> {
    let table = data::read_keywords(&root.join("keywords.tsv"))?;
    match table.get(name) {
        Some(tokens) => KeywordSpec::new(name, tokens.clone()),
        None => {
            let known: Vec<&str> = table.keys().map(|s| s.as_str()).collect();
            Err(Error::Config(format!(
                "unknown keyword '{}' (known: {})",
                name,
                known.join(", ")
            )))
        }
    }
}

/// Positive-vs-negative score sets for every keyword at one alpha, reusing
/// precomputed posterior lattices.
fn score_sets(
    manifest: &Manifest,
    lattices: &BTreeMap<String, Vec<(PosteriorLattice, PosteriorLattice)>>,
    keywords: &BTreeMap<String, Vec<usize>>,
    params: &DecodeParams,
) -> Result<Vec<(String, EvalSet)>> {
    let mut sets = Vec::new();
    for (name, tokens) in keywords {
        let spec = KeywordSpec::new(name.clone(), tokens.clone())?;
        let pair_list = &lattices[name];
        let mut set = EvalSet::default();
        for (e, (p_ar, p_nar)) in manifest.entries.iter().zip(pair_list) {
            let trace = sar_stream_decode(p_ar, p_nar, &spec, params)?;
            let (score, _) = utterance_score(&trace);
            // positives for other keywords are negative trials for this one
            if e.is_positive && data::contains_subsequence(&e.tokens, tokens) {
                set.positives.push(score);
            } else {
                set.negatives.push(score);
            }
        }
        sets.push((name.clone(), set));
    }
    Ok(sets)
}

fn all_lattices(
    model: &TransducerModel,
    manifest: &Manifest,
    features: &[Tensor],
    keywords: &BTreeMap<String, Vec<usize>>,
) -> Result<BTreeMap<String, Vec<(PosteriorLattice, PosteriorLattice)>>> {
    let mut out = BTreeMap::new();
    for (name, tokens) in keywords {
        let spec = KeywordSpec::new(name.clone(), tokens.clone())?;
        let pairs: Vec<Result<(PosteriorLattice, PosteriorLattice)>> = features
            .par_iter()
            .map(|f| decode_posteriors(model, f, &spec))
            .collect();
        out.insert(
            name.clone(),
            pairs.into_iter().collect::<Result<Vec<_>>>()?,
        );
    }
    let _ = manifest;
    Ok(out)
}

fn run() -> Result<()> {
    if let Ok(threads) = std::env::var("MSDKWS_THREADS") {
        let n: usize = threads
            .parse()
            .map_err(|_| Error::Config(format!("MSDKWS_THREADS '{}' is not a number", threads)))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {}", e)))?;
    }
    let cli = Cli::parse();
    match cli.command {
        Command::GenData { config, out } => {
            let cfg = config.resolve()?;
            let manifest = data::generate_corpus(&cfg.data, &out)?;
            println!(
                "wrote {} utterances ({} keywords) to {}",
                manifest.entries.len(),
                cfg.data.keywords.len(),
                out.display()
            );
        }
        Command::Train {
            config,
            data: data_dir,
            out,
            resume,
        } => {
            let cfg = config.resolve()?;
            eprint!("{}", cfg.resolved());
            let manifest = Manifest::load(&data_dir.join("manifest.tsv"))?;
            let features = load_stacked(&data_dir, &manifest, &cfg, cfg.model.feature_dim)?;
            let samples: Vec<TrainSample> = manifest
                .entries
                .iter()
                .zip(features)
                .map(|(e, f)| TrainSample {
                    utt_id: e.utt_id.clone(),
                    features: f,
                    tokens: e.tokens.clone(),
                })
                .collect();
            let mut train_cfg = cfg.train.clone();
            train_cfg.checkpoint_dir = out;
            let mut model = TransducerModel::init(cfg.model, train_cfg.seed)?;
            let outcome = trainer::train(&mut model, &samples, &train_cfg, resume.as_deref())?;
            for s in &outcome.log {
                println!(
                    "epoch {} total {:.6} val {:.6} lr {:.6e}",
                    s.epoch, s.total, s.val_total, s.lr
                );
            }
            println!("best checkpoint: {}", outcome.best_checkpoint.display());
        }
        Command::Decode {
            config,
            ckpt,
            data: data_dir,
            keyword,
            mode,
            filter,
            out,
        } => {
            let cfg = config.resolve()?;
            let model = TransducerModel::load(&ckpt)?;
            let manifest = Manifest::load(&data_dir.join("manifest.tsv"))?;
            let spec = keyword_spec(&data_dir, &keyword)?;
            let mut params = cfg.decode_params()?;
            match mode.as_str() {
                "sar" => {}
                "ar" => params.alpha = 1.0,
                "nar" => params.alpha = 0.0,
                other => {
                    return Err(Error::Config(format!(
                        "unknown mode '{}' (sar, ar, nar)",
                        other
                    )))
                }
            }
            let keep = |positive: bool| match filter.as_str() {
                "all" => Ok(true),
                "pos" => Ok(positive),
                "neg" => Ok(!positive),
                other => Err(Error::Config(format!(
                    "unknown filter '{}' (pos, neg, all)",
                    other
                ))),
            };
            keep(true)?; // reject bad filter values before decoding
            let features = load_stacked(&data_dir, &manifest, &cfg, model.config.feature_dim)?;
            let lines: Vec<Result<Option<String>>> = manifest
                .entries
                .par_iter()
                .zip(&features)
                .map(|(e, f)| {
                    if !keep(e.is_positive)? {
                        return Ok(None);
                    }
                    let (p_ar, p_nar) = decode_posteriors(&model, f, &spec)?;
                    let trace = sar_stream_decode(&p_ar, &p_nar, &spec, &params)?;
                    let (score, frame) = utterance_score(&trace);
                    Ok(Some(format!("{}\t{}\t{}\n", e.utt_id, score, frame)))
                })
                .collect();
            let mut text = String::new();
            for line in lines {
                if let Some(l) = line? {
                    text.push_str(&l);
                }
            }
            emit(&out, &text)?;
        }
        Command::Eval {
            config,
            ckpt,
            data: data_dir,
            out,
        } => {
            let cfg = config.resolve()?;
            let model = TransducerModel::load(&ckpt)?;
            let manifest = Manifest::load(&data_dir.join("manifest.tsv"))?;
            let keywords = data::read_keywords(&data_dir.join("keywords.tsv"))?;
            let features = load_stacked(&data_dir, &manifest, &cfg, model.config.feature_dim)?;
            let lattices = all_lattices(&model, &manifest, &features, &keywords)?;
            let params = cfg.decode_params()?;
            let sets = score_sets(&manifest, &lattices, &keywords, &params)?;
            emit(&out, &write_report(&sets, cfg.n_fa)?)?;
        }
        Command::SweepAlpha {
            config,
            ckpt,
            data: data_dir,
            alphas,
            out,
        } => {
            let cfg = config.resolve()?;
            let model = TransducerModel::load(&ckpt)?;
            let manifest = Manifest::load(&data_dir.join("manifest.tsv"))?;
            let keywords = data::read_keywords(&data_dir.join("keywords.tsv"))?;
            let features = load_stacked(&data_dir, &manifest, &cfg, model.config.feature_dim)?;
            let lattices = all_lattices(&model, &manifest, &features, &keywords)?;
            let mut text = String::new();
            for field in alphas.split(',') {
                let alpha: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad alpha '{}'", field)))?;
                let mut params = cfg.decode_params()?;
                params.alpha = alpha;
                DecodeParams::new(alpha, params.s_bonus, params.t_out)?;
                let sets = score_sets(&manifest, &lattices, &keywords, &params)?;
                text.push_str(&format!(
                    "{}\t{:.6}\n",
                    alpha,
                    macro_recall(&sets, cfg.n_fa)?
                ));
            }
            emit(&out, &text)?;
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {}", e);
        std::process::exit(1);
    }
}
