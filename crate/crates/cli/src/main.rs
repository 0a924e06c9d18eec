use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use bcrf::corpus::{parse_tagged, read_conll, read_text};
use bcrf::eval::{score, ChunkMetrics};
use bcrf::features::FeatureIndex;
use bcrf::model_file;
use bcrf::trainer::Trainer;
use clap::{Parser, Subcommand};
use log::info;
use rayon::prelude::*;

mod config;

use config::TrainOptions;

/// A bad flag or option value, as opposed to a failure while running.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "bcrf", version, about = "Linear-chain CRF chunker")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pick the base learning rate and print every candidate's loss.
    Calibrate(TrainOptions),
    /// Train a model, writing it and a per-epoch metrics CSV.
    Train(TrainArgs),
    /// Tag a 3-column file, writing `word pos gold predicted`.
    Tag {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Write here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print chunk precision, recall and F1.
    Eval {
        #[arg(long, requires = "data", conflicts_with = "tagged")]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Score a 4-column file from `tag` instead of running a model.
        #[arg(long, required_unless_present = "model")]
        tagged: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct TrainArgs {
    #[command(flatten)]
    options: TrainOptions,
    /// Where to write the trained model.
    #[arg(long)]
    model_out: PathBuf,
    /// Where to write the per-epoch metrics CSV.
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    /// Also dump `feature<TAB>weight` lines here.
    #[arg(long)]
    export_text: Option<PathBuf>,
    /// Write 0 in the wall_seconds column so runs are byte-reproducible.
    #[arg(long)]
    omit_timing: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Calibrate(options) => calibrate(options.resolve()?),
        Command::Train(args) => train(args),
        Command::Tag { model, data, output } => tag(&model, &data, output.as_deref()),
        Command::Eval { model, data, tagged } => {
            let metrics = match (model, data, tagged) {
                (Some(model), Some(data), _) => eval_model(&model, &data)?,
                (_, _, Some(tagged)) => eval_tagged(&tagged)?,
                _ => unreachable!("enforced by clap"),
            };
            println!(
                "precision={:.6} recall={:.6} f1={:.6}",
                metrics.precision, metrics.recall, metrics.f1
            );
            Ok(())
        }
    }
}

fn load_corpus(path: &Path, strict: bool) -> anyhow::Result<bcrf::Dataset> {
    read_conll(path, strict).with_context(|| format!("reading {}", path.display()))
}

fn calibrate(options: TrainOptions) -> anyhow::Result<()> {
    let config = options.train_config()?;
    let train = load_corpus(options.train_path()?, options.strict)?;
    let index = Arc::new(FeatureIndex::build(&train, options.templates()?));
    let cal = Trainer::new(config)?.calibrate(&train, &index)?;
    for (lambda_hat, loss) in &cal.candidates {
        match loss {
            Some(v) => println!("candidate lambda_hat={lambda_hat} loss={v:.6}"),
            None => println!("candidate lambda_hat={lambda_hat} loss=diverged"),
        }
    }
    println!("lambda_hat={}", cal.lambda_hat);
    Ok(())
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn train(args: TrainArgs) -> anyhow::Result<()> {
    let options = args.options.resolve()?;
    let config = options.train_config()?;
    let templates = options.templates()?;
    let train = load_corpus(options.train_path()?, options.strict)?;
    let test = options
        .test
        .as_deref()
        .map(|p| load_corpus(p, options.strict))
        .transpose()?;

    let stats = train.stats();
    info!(
        "training data: {} sentences, {} tokens, {} labels",
        stats.sentences, stats.tokens, stats.labels
    );
    let index = Arc::new(FeatureIndex::build(&train, templates));
    info!(
        "{templates} templates: {} attributes, {} features",
        index.num_attributes(),
        index.dim()
    );

    let update = config.update;
    let trained = Trainer::new(config)?.train(&train, index, test.as_ref())?;

    model_file::save(&args.model_out, &trained.model, &update)
        .with_context(|| format!("writing {}", args.model_out.display()))?;
    if let Some(path) = &args.metrics_out {
        trained.metrics.write_csv(create(path)?, !args.omit_timing)?;
    }
    if let Some(path) = &args.export_text {
        model_file::write_text(create(path)?, &trained.model)?;
    }

    let last = trained.metrics.last().expect("at least one epoch");
    let test_f1 = last
        .test
        .map_or(String::new(), |m| format!(" test_f1={:.6}", m.chunks.f1));
    println!(
        "epochs={} steps={} lambda_hat={} train_f1={:.6}{test_f1}",
        last.epoch, trained.steps, trained.lambda_hat, last.train.chunks.f1
    );
    Ok(())
}

fn predict(model: &Path, data: &Path) -> anyhow::Result<(bcrf::Dataset, Vec<Vec<String>>)> {
    let file = model_file::load(model).with_context(|| format!("loading {}", model.display()))?;
    let data = load_corpus(data, false)?;
    let predicted = data.sentences().par_iter().map(|s| file.model.viterbi(s)).collect();
    Ok((data, predicted))
}

fn tag(model: &Path, data: &Path, output: Option<&Path>) -> anyhow::Result<()> {
    let (data, predicted) = predict(model, data)?;
    let mut out: Box<dyn Write> = match output {
        Some(path) => Box::new(create(path)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    for (sentence, tags) in data.sentences().iter().zip(&predicted) {
        for (token, tag) in sentence.tokens().iter().zip(tags) {
            writeln!(out, "{} {} {} {tag}", token.word(), token.pos(), token.chunk())?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

fn eval_model(model: &Path, data: &Path) -> anyhow::Result<ChunkMetrics> {
    let (data, predicted) = predict(model, data)?;
    let gold: Vec<Vec<&str>> = data.sentences().iter().map(|s| s.chunks()).collect();
    Ok(score(&predicted, &gold)?)
}

fn eval_tagged(path: &Path) -> anyhow::Result<ChunkMetrics> {
    let text = read_text(path).with_context(|| format!("reading {}", path.display()))?;
    let tagged = parse_tagged(&text).with_context(|| format!("reading {}", path.display()))?;
    let gold: Vec<Vec<&str>> = tagged.iter().map(|t| t.gold.chunks()).collect();
    let predicted: Vec<Vec<String>> = tagged.iter().map(|t| t.predicted.clone()).collect();
    Ok(score(&predicted, &gold)?)
}
