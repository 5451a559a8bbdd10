//! `tsvt`: data generation, flow estimation, training, evaluation and
//! prediction. Results go to stdout as JSON, logs to stderr.

use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use tsvt::config::RunConfig;
use tsvt::flow::{estimate_flow, flow_to_rgb, write_flo2, Image};
use tsvt::model::{prepare_sample, prepare_samples, FlowCache, Sample, TwoStreamModel};
use tsvt::train::{argmax, evaluate, train, Checkpoint};
use tsvt::video::{
    generate_synthetic_dataset, load_clip_dir, load_split, write_dataset, Manifest, Split, SynthClip, SynthDatasetConfig, VideoClip,
};
use tsvt::{Error, Result};

#[derive(Parser)]
#[command(name = "tsvt", version, about = "Two-stream video transformer toolkit")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset as PNG frames plus manifest.json.
    GenData {
        /// Output directory (defaults to data.root).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate flow between two images; writes <out>.flo2 and <out>.png.
    Flow {
        img1: PathBuf,
        img2: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoint.tsvt and metrics.jsonl.
    Train {
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Output directory.
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Metrics of a checkpoint on one split of a dataset directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Class probabilities for one clip directory.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        clip: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match run(&cli) {
        Ok(out) => {
            println!("{}", serde_json::to_string_pretty(&out).expect("json output"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::NonFinite { .. } => 3,
                _ => 2,
            })
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.model.seed = seed;
        cfg.train.seed = seed;
        if let Some(s) = &mut cfg.data.synthetic {
            s.seed = seed;
        }
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Value> {
    let mut cfg = load_config(cli)?;
    match &cli.command {
        Command::GenData { out } => {
            let root = out
                .clone()
                .or_else(|| cfg.data.root.clone())
                .ok_or_else(|| Error::Config("gen-data needs --out or data.root".into()))?;
            let mut synth = cfg.data.synthetic.clone().unwrap_or_default();
            if let Some(seed) = cli.seed {
                synth.seed = seed;
            }
            let ds = generate_synthetic_dataset(&synth)?;
            let manifest = write_dataset(&root, &ds)?;
            Ok(json!({
                "root": root,
                "classes": manifest.class_names,
                "train": manifest.splits.train.len(),
                "val": manifest.splits.val.len(),
                "test": manifest.splits.test.len(),
            }))
        }
        Command::Flow { img1, img2, out } => {
            let a = Image::load_png(img1)?;
            let b = Image::load_png(img2)?;
            let flow = estimate_flow(&a, &b, &cfg.flow)?;
            let flo = out.with_extension("flo2");
            let png = out.with_extension("png");
            write_flo2(&flo, &flow)?;
            flow_to_rgb(&flow, None).save_png(&png)?;
            Ok(json!({
                "flo2": flo,
                "png": png,
                "max_magnitude": flow.max_magnitude(),
            }))
        }
        Command::Train { max_epochs, out } => {
            if let Some(n) = max_epochs {
                cfg.train.max_epochs = *n;
                cfg.train.patience = cfg.train.patience.min(*n);
            }
            cfg.validate()?;
            cmd_train(&cfg, out)
        }
        Command::Eval { checkpoint, data, split } => {
            let split: Split = split.parse()?;
            let ckpt = Checkpoint::load(checkpoint)?;
            let model = ckpt.to_model()?;
            let manifest = Manifest::load(data)?;
            let samples = samples_from_dir(data, &manifest, split, &model, &ckpt, &cfg)?;
            let metrics = evaluate(&model, &samples)?;
            Ok(serde_json::to_value(metrics).expect("metrics serialize"))
        }
        Command::Predict { checkpoint, clip } => {
            let ckpt = Checkpoint::load(checkpoint)?;
            let model = ckpt.to_model()?;
            let mc = &model.config;
            let raw = load_clip_dir(clip, mc.height, mc.width, Some(mc.frames))?;
            let id = clip.to_string_lossy();
            let sample = prepare_sample(&id, &raw, mc, &ckpt.flow, None)?;
            let probs = softmax(&model.logits(&sample)?);
            let class = argmax(&probs);
            Ok(json!({
                "class": class,
                "name": ckpt.class_names.get(class),
                "probability": probs[class],
                "probabilities": probs,
            }))
        }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

fn samples_from_dir(
    root: &Path,
    manifest: &Manifest,
    split: Split,
    model: &TwoStreamModel,
    ckpt: &Checkpoint,
    cfg: &RunConfig,
) -> Result<Vec<Sample>> {
    let mc = &model.config;
    let clips = load_split(root, manifest, split, mc.height, mc.width, mc.frames)?;
    let cache = cfg.data.flow_cache.as_ref().map(FlowCache::new);
    prepare_samples(
        clips.iter().map(|c| (c.id.as_str(), &c.clip)).collect::<Vec<_>>(),
        mc,
        &ckpt.flow,
        cache.as_ref(),
    )
}

fn synth_pairs(clips: &[SynthClip]) -> Vec<(&str, &VideoClip)> {
    clips.iter().map(|c| (c.id.as_str(), &c.clip)).collect()
}

fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<Value> {
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let mc = &cfg.model;
    let cache = cfg.data.flow_cache.as_ref().map(FlowCache::new);
    let prep = |pairs: Vec<(&str, &VideoClip)>| prepare_samples(pairs, mc, &cfg.flow, cache.as_ref());
    let (class_names, train_set, val_set, test_set) = match &cfg.data.root {
        Some(root) => {
            let manifest = Manifest::load(root)?;
            let load = |s| -> Result<Vec<Sample>> {
                let clips = load_split(root, &manifest, s, mc.height, mc.width, mc.frames)?;
                prep(clips.iter().map(|c| (c.id.as_str(), &c.clip)).collect())
            };
            (manifest.class_names.clone(), load(Split::Train)?, load(Split::Val)?, load(Split::Test)?)
        }
        None => {
            let synth: SynthDatasetConfig = cfg.data.synthetic.clone().unwrap_or_default();
            let ds = generate_synthetic_dataset(&synth)?;
            log::info!("preparing {} clips", ds.len());
            (
                ds.class_names(),
                prep(synth_pairs(&ds.train))?,
                prep(synth_pairs(&ds.val))?,
                prep(synth_pairs(&ds.test))?,
            )
        }
    };
    if class_names.len() != mc.num_classes {
        return Err(Error::Config(format!(
            "model.num_classes is {} but the dataset has {} classes",
            mc.num_classes,
            class_names.len()
        )));
    }
    let mut model = TwoStreamModel::new(mc)?;
    let log_path = out.join("metrics.jsonl");
    let mut lines = String::new();
    let outcome = train(&mut model, &train_set, &val_set, &cfg.train, |e| {
        lines.push_str(&e.to_json_line());
        lines.push('\n');
        ControlFlow::Continue(())
    })?;
    std::fs::write(&log_path, lines).map_err(|e| Error::Io {
        path: log_path.clone(),
        source: e,
    })?;
    let mut ckpt = outcome.checkpoint;
    ckpt.flow = cfg.flow.clone();
    ckpt.class_names = class_names;
    let ckpt_path = out.join("checkpoint.tsvt");
    ckpt.save(&ckpt_path)?;
    let test = if test_set.is_empty() {
        Value::Null
    } else {
        serde_json::to_value(evaluate(&model, &test_set)?).expect("metrics serialize")
    };
    Ok(json!({
        "checkpoint": ckpt_path,
        "metrics_log": log_path,
        "epochs_run": outcome.epochs_run,
        "best_epoch": ckpt.epoch,
        "best_val_loss": ckpt.best_val_loss,
        "test": test,
    }))
}
