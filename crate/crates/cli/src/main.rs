use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use linescribe::charnet::TrainSchedule;
use linescribe::decode::Method;
use linescribe::harness::{run_pipeline, train_model, DecoderConfig, Model, NetProfile, PipelineConfig, TrainConfig};
use linescribe::lm::NGramModel;
use linescribe::synth::{generate_dataset, GlyphSet};
use linescribe::textline::{load_manifest, WindowConfig};
use linescribe::{Alphabet, EmissionMatrix, Error, Result};

#[derive(Parser)]
#[command(name = "linescribe", version, about = "Sliding-window text-line recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset of PGM lines plus a manifest.
    Synth(SynthArgs),
    /// Train a character network on a manifest.
    Train(TrainArgs),
    /// Write the emission matrix of one line image.
    Emit(EmitArgs),
    /// Transcribe one line from an emission file or an image.
    Decode(DecodeArgs),
    /// Train a character n-gram model.
    LmTrain(LmTrainArgs),
    /// Transcribe a manifest and report accuracy.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    alphabet: PathBuf,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 1)]
    min_len: usize,
    #[arg(long, default_value_t = 15)]
    max_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed of the glyph shapes; keep it fixed across train and test sets.
    #[arg(long, default_value_t = 0)]
    glyph_seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    alphabet: PathBuf,
    #[arg(long, default_value = "desk")]
    net: String,
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0.3)]
    decay: f64,
    /// Comma-separated epochs at which the rate decays.
    #[arg(long, default_value = "40,60")]
    decay_epochs: String,
    #[arg(long, default_value_t = 0.0)]
    momentum: f64,
    #[arg(long, default_value_t = 0.05)]
    epoch_fraction: f64,
    #[arg(long, default_value_t = 4)]
    batch_lines: usize,
    #[arg(long, default_value_t = 4)]
    stride: usize,
    /// Comma-separated window widths, one input channel each.
    #[arg(long, default_value = "32")]
    scales: String,
    #[arg(long, default_value_t = 256)]
    pad_width: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EmitArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecoderArgs {
    #[arg(long, default_value = "naive")]
    method: String,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    lm: Option<PathBuf>,
    /// Language-model weight; 1 when --lm is given, else 0.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 32)]
    beam: usize,
    /// Candidate labels per frame; defaults to min(10, classes).
    #[arg(long)]
    cn: Option<usize>,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long, conflicts_with_all = ["ckpt", "image"], required_unless_present = "ckpt")]
    emit: Option<PathBuf>,
    /// Alphabet for --emit input; otherwise taken from --lm.
    #[arg(long, requires = "emit")]
    alphabet: Option<PathBuf>,
    #[arg(long, requires = "image")]
    ckpt: Option<PathBuf>,
    #[arg(long, requires = "ckpt")]
    image: Option<PathBuf>,
    #[command(flatten)]
    decoder: DecoderArgs,
}

#[derive(Args)]
struct LmTrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = linescribe::lm::DEFAULT_ORDER)]
    order: usize,
    #[arg(long, default_value_t = linescribe::lm::DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long)]
    alphabet: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    decoder: DecoderArgs,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Per-line TSV output.
    #[arg(long)]
    lines: Option<PathBuf>,
    #[arg(long)]
    report: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Emit(a) => {
            let model = Model::load(&a.ckpt)?;
            model.emissions_for_file(&a.image)?.save(&a.out)
        }
        Command::Decode(a) => decode(a),
        Command::LmTrain(a) => {
            let alphabet = Alphabet::load(&a.alphabet)?;
            let corpus = std::fs::read_to_string(&a.corpus).map_err(|e| Error::Io {
                path: a.corpus.clone(),
                source: e,
            })?;
            let model = NGramModel::train(&corpus, a.order, alphabet, a.lambda)?;
            if model.skipped_chars() > 0 {
                eprintln!("skipped {} characters outside the alphabet", model.skipped_chars());
            }
            model.save(&a.out)
        }
        Command::Eval(a) => eval(a),
    }
}

fn parse_list(s: &str, what: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse()
                .map_err(|_| Error::InvalidInput(format!("bad {what} entry {p:?}")))
        })
        .collect()
}

fn synth(a: SynthArgs) -> Result<()> {
    let glyphs = GlyphSet::generate(Alphabet::load(&a.alphabet)?, a.glyph_seed)?;
    let manifest = generate_dataset(&glyphs, a.count, (a.min_len, a.max_len), a.seed, &a.out)?;
    println!("{}", manifest.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let alphabet = Alphabet::load(&a.alphabet)?;
    let records = load_manifest(&a.manifest)?;
    let windows = WindowConfig {
        window_widths: parse_list(&a.scales, "scale")?,
        stride: a.stride,
        pad_width: a.pad_width,
        ..WindowConfig::single_scale()
    };
    let cfg = TrainConfig {
        schedule: TrainSchedule {
            initial_lr: a.lr,
            decay_factor: a.decay,
            decay_epochs: parse_list(&a.decay_epochs, "decay epoch")?,
            momentum: a.momentum,
            epoch_fraction: a.epoch_fraction,
        },
        epochs: a.epochs,
        batch_lines: a.batch_lines,
        seed: a.seed,
        ..TrainConfig::new(a.net.parse::<NetProfile>()?, windows)
    };
    let (model, _) = train_model(&records, &alphabet, &cfg, |s| {
        eprintln!(
            "epoch {} lr {} lines {} skipped {} loss {:.4}",
            s.epoch, s.learning_rate, s.lines, s.skipped, s.mean_loss
        );
    })?;
    model.save(&a.out)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn decode(a: DecodeArgs) -> Result<()> {
    let d = &a.decoder;
    let method: Method = d.method.parse()?;
    let (emissions, alphabet, line_id) = match (&a.emit, &a.ckpt, &a.image) {
        (Some(emit), _, _) => {
            let alphabet = match (&a.alphabet, &d.lm) {
                (Some(path), _) => Alphabet::load(path)?,
                (None, Some(lm)) => NGramModel::load(lm)?.alphabet().clone(),
                (None, None) => {
                    return Err(Error::InvalidInput("--emit needs --alphabet or --lm".into()));
                }
            };
            (EmissionMatrix::load(emit)?, alphabet, stem(emit))
        }
        (None, Some(ckpt), Some(image)) => {
            let model = Model::load(ckpt)?;
            (model.emissions_for_file(image)?, model.alphabet, stem(image))
        }
        _ => return Err(Error::InvalidInput("give --emit, or --ckpt with --image".into())),
    };
    if emissions.classes() != alphabet.num_classes() {
        return Err(Error::InvalidInput(format!(
            "emissions have {} classes, the alphabet needs {}",
            emissions.classes(),
            alphabet.num_classes()
        )));
    }
    let decoder = DecoderConfig::from_files(
        method,
        &alphabet,
        d.lexicon.as_deref(),
        d.lm.as_deref(),
        d.alpha,
        d.beam,
        d.cn,
    )?;
    let (text, score) = decoder.transcribe(&emissions, &alphabet)?;
    println!("{line_id}\t{text}\t{score}\t{method}");
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let d = a.decoder;
    let cfg = PipelineConfig {
        lexicon: d.lexicon,
        lm: d.lm,
        alpha: d.alpha,
        beam_width: d.beam,
        candidate_count: d.cn,
        workers: a.workers,
        lines_out: a.lines,
        report_out: Some(a.report),
        ..PipelineConfig::new(a.ckpt, a.manifest, d.method.parse()?)
    };
    let report = run_pipeline(&cfg)?;
    match report.accurate_rate {
        Some(ar) => println!("word accuracy {:.4}  accurate rate {:.4}", report.word_accuracy, ar),
        None => println!("word accuracy {:.4}", report.word_accuracy),
    }
    Ok(())
}
