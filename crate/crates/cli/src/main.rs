mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use afmnet::analysis::{
    count_params_flops, erf_map, expert_sweep, grad_cam, routing_stats, sweep_csv, AnalysisArtifact, ArtifactKind,
};
use afmnet::checkpoint;
use afmnet::data::Dataset;
use afmnet::model::{AfmNet, Tap};
use afmnet::nn::ParamStore;
use afmnet::train::{evaluate, train_run};
use afmnet::{Error, Result};
use clap::{Args, Parser, Subcommand};

use config::{RunConfig, RUN_FILE};

#[derive(Parser)]
#[command(
    name = "afmnet",
    version,
    about = "Train, evaluate and analyse AFM-Net scene classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON run configuration with optional `model`, `train` and `data` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for initialization, shuffling and augmentation.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Ablation `key=value` with keys cnn, mamba, e1, e2, e1+e2, head, dense; a bare switch key turns it off.
    #[arg(long, value_name = "KEY=VALUE")]
    pub ablate: Vec<String>,
    /// Data source: `synthetic` or `folder:<path>`.
    #[arg(long)]
    pub data: Option<String>,
}

/// Where analysis commands get their model from.
#[derive(Args, Debug, Clone)]
struct ModelSource {
    /// Checkpoint directory; without it a freshly initialized model is used.
    #[arg(long)]
    ckpt: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write its checkpoint and per-epoch log.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint; writes metrics.json and confusion.csv.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, required = true)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
    },
    /// Effective receptive field of one input as a CSV grid.
    Erf {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: ModelSource,
        /// cnn, mamba or fused.
        #[arg(long, default_value = "fused")]
        tap: String,
        /// Index of the input image in the dataset.
        #[arg(long, default_value_t = 0)]
        image: usize,
        /// Average over this many consecutive images starting at `--image`.
        #[arg(long, default_value_t = 1)]
        average: usize,
    },
    /// Grad-CAM map of one input as a CSV grid.
    Cam {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: ModelSource,
        /// Class to explain; defaults to the image's label.
        #[arg(long)]
        class: Option<usize>,
        /// cnn, mamba or fused.
        #[arg(long, default_value = "fused")]
        layer: String,
        #[arg(long, default_value_t = 0)]
        image: usize,
    },
    /// Per-class mean gate probabilities.
    Routing {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: ModelSource,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
    },
    /// Parameter and multiply-accumulate counts per module.
    Complexity {
        #[command(flatten)]
        common: Common,
    },
    /// Train one model per expert count and tabulate parameters against weighted F1.
    SweepExperts {
        #[command(flatten)]
        common: Common,
        /// Comma-separated expert counts.
        #[arg(long, value_delimiter = ',', required = true)]
        experts: Vec<usize>,
    },
}

fn out_dir(common: &Common, fallback: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(fallback))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::Data(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}

/// Run configuration for a checkpoint: its `run.json` when present, else one rebuilt from the manifest.
fn checkpoint_run(dir: &Path, common: &Common) -> Result<(RunConfig, checkpoint::Checkpoint<f32>)> {
    let ck = checkpoint::load::<f32>(dir)?;
    let run_file = dir.join(RUN_FILE);
    let mut run = if run_file.exists() {
        RunConfig::read(&run_file)?
    } else {
        RunConfig::default()
    };
    run.model = ck.manifest.model.clone();
    let mut flags = common.clone();
    if !flags.ablate.is_empty() {
        let mut wanted = run.model.clone();
        for spec in &flags.ablate {
            wanted.toggles.apply(spec)?;
        }
        checkpoint::load_expecting::<f32>(dir, &wanted)?;
        flags.ablate.clear();
    }
    run.apply(&flags)?;
    Ok((run, ck))
}

fn analysis_model(common: &Common, source: &ModelSource) -> Result<(RunConfig, AfmNet, ParamStore<f32>)> {
    match &source.ckpt {
        Some(dir) => {
            let (run, ck) = checkpoint_run(dir, common)?;
            Ok((run, ck.net, ck.store))
        }
        None => {
            let run = RunConfig::resolve(common)?;
            let (net, store) = AfmNet::build::<f32>(&run.model, run.train.seed)?;
            Ok((run, net, store))
        }
    }
}

fn image_from(data: &Dataset, index: usize) -> Result<(afmnet::Tensor<f32>, usize)> {
    if index >= data.len() {
        return Err(Error::Config(format!(
            "image index {index} out of range for {} images",
            data.len()
        )));
    }
    let (images, labels) = data.batch::<f32>(&[index], None)?;
    Ok((images, labels[0]))
}

fn cmd_train(common: &Common) -> Result<()> {
    let run = RunConfig::resolve(common)?;
    let out = out_dir(common, "runs/train");
    let (train, test) = run.load_split()?;
    run.write(&out)?;
    let outcome = train_run(&run.model, &run.train, &train, Some(&out))?;
    let last = outcome.epochs.last().expect("at least one epoch");
    println!(
        "trained {} epochs: loss {:.4}, train OA {:.4}; checkpoint in {}",
        outcome.epochs.len(),
        last.loss,
        last.oa,
        out.display()
    );
    if !test.is_empty() {
        let eval = evaluate(&outcome.net, &outcome.store, &test, run.train.batch_size)?;
        write_json(&out.join("test_metrics.json"), &eval.metrics)?;
        println!(
            "test OA {:.4}, weighted F1 {:.4}",
            eval.metrics.oa, eval.metrics.weighted_f1
        );
    }
    Ok(())
}

fn cmd_eval(common: &Common, ckpt: &Path, batch_size: usize) -> Result<()> {
    let (run, ck) = checkpoint_run(ckpt, common)?;
    // Explicit data is evaluated whole; otherwise the held-out split of the training run.
    let data = if common.data.is_some() {
        run.load_data()?
    } else {
        let (train, test) = run.load_split()?;
        if test.is_empty() {
            train
        } else {
            test
        }
    };
    let eval = evaluate(&ck.net, &ck.store, &data, batch_size)?;
    let out = out_dir(common, &ckpt.join("eval").to_string_lossy());
    write_json(&out.join("metrics.json"), &eval.metrics)?;
    let csv = out.join("confusion.csv");
    fs::write(&csv, eval.metrics.confusion_csv(&data.classes))
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", csv.display())))?;
    println!(
        "{} images: OA {:.4}, weighted F1 {:.4}; report in {}",
        data.len(),
        eval.metrics.oa,
        eval.metrics.weighted_f1,
        out.display()
    );
    Ok(())
}

fn input_id(run: &RunConfig, index: usize) -> String {
    format!("{:?}#{index}", run.data.source)
}

fn cmd_erf(common: &Common, source: &ModelSource, tap: &str, index: usize, average: usize) -> Result<()> {
    let tap: Tap = tap.parse()?;
    let (run, net, store) = analysis_model(common, source)?;
    let data = run.load_data()?;
    if average == 0 || index + average > data.len() {
        return Err(Error::Config(format!(
            "images {index}..{} out of range for {} images",
            index + average,
            data.len()
        )));
    }
    let indices: Vec<usize> = (index..index + average).collect();
    let (images, _) = data.batch::<f32>(&indices, None)?;
    let map = erf_map(&net, &store, &images, tap)?;
    let art = AnalysisArtifact::grid(ArtifactKind::Erf, &run.model, &input_id(&run, index), &map)?
        .with_extra(serde_json::json!({ "tap": tap, "images": average }));
    let path = art.write(&out_dir(common, "runs/analysis"))?;
    println!(
        "ERF support {} of {} pixels; grid in {}",
        afmnet::analysis::support_size(&map),
        map.numel(),
        path.display()
    );
    Ok(())
}

fn cmd_cam(common: &Common, source: &ModelSource, class: Option<usize>, layer: &str, index: usize) -> Result<()> {
    let layer: Tap = layer.parse()?;
    let (run, net, store) = analysis_model(common, source)?;
    let (image, label) = image_from(&run.load_data()?, index)?;
    let class = class.unwrap_or(label);
    let map = grad_cam(&net, &store, &image, class, layer)?;
    let art = AnalysisArtifact::grid(ArtifactKind::Cam, &run.model, &input_id(&run, index), &map)?
        .with_extra(serde_json::json!({ "class": class, "layer": layer }));
    let path = art.write(&out_dir(common, "runs/analysis"))?;
    println!("class {class} activation map in {}", path.display());
    Ok(())
}

fn cmd_routing(common: &Common, source: &ModelSource, batch_size: usize) -> Result<()> {
    let (run, net, store) = analysis_model(common, source)?;
    let data = run.load_data()?;
    let table = routing_stats(&net, &store, &data, batch_size)?;
    let art = AnalysisArtifact::table(
        ArtifactKind::Routing,
        &run.model,
        &format!("{:?}", run.data.source),
        table.to_csv(),
    );
    let path = art.write(&out_dir(common, "runs/analysis"))?;
    println!(
        "{} classes x {} experts in {}",
        table.rows.len(),
        table.experts,
        path.display()
    );
    Ok(())
}

fn cmd_complexity(common: &Common) -> Result<()> {
    let run = RunConfig::resolve(common)?;
    let counts = count_params_flops(&run.model)?;
    print!("{}", counts.to_csv());
    if let Some(dir) = &common.out {
        let art = AnalysisArtifact::table(ArtifactKind::Complexity, &run.model, "config", counts.to_csv());
        art.write(dir)?;
    }
    Ok(())
}

fn cmd_sweep(common: &Common, experts: &[usize]) -> Result<()> {
    let run = RunConfig::resolve(common)?;
    let out = out_dir(common, "runs/sweep");
    let (train, test) = run.load_split()?;
    let eval = if test.is_empty() { &train } else { &test };
    run.write(&out)?;
    let rows = expert_sweep(&run.model, &run.train, &train, eval, experts, Some(&out))?;
    print!("{}", sweep_csv(&rows));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common } => cmd_train(&common),
        Command::Eval {
            common,
            ckpt,
            batch_size,
        } => cmd_eval(&common, &ckpt, batch_size),
        Command::Erf {
            common,
            source,
            tap,
            image,
            average,
        } => cmd_erf(&common, &source, &tap, image, average),
        Command::Cam {
            common,
            source,
            class,
            layer,
            image,
        } => cmd_cam(&common, &source, class, &layer, image),
        Command::Routing {
            common,
            source,
            batch_size,
        } => cmd_routing(&common, &source, batch_size),
        Command::Complexity { common } => cmd_complexity(&common),
        Command::SweepExperts { common, experts } => cmd_sweep(&common, &experts),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
