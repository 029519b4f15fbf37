//! Command-line front end: `synth-data`, `train`, `evaluate`, `caption`,
//! `ablate` and `select-champion`.
//!
//! Exit codes: 0 on success, 1 on runtime errors, 2 on usage errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{gen_dataset, load_dataset, write_dataset, CaptionedExample, Vocabulary, END, PAD, START};
use crate::error::Error;
use crate::experiment::{run_ablation, ExperimentSpec, RunResult};
use crate::features::{load_features, FeatureSource};
use crate::inference::{
    beam_search, export_attention_heatmap, greedy_decode, reference_words, score_corpus, BeamConfig, BeamHypothesis,
    EvalReport, ModelStepper,
};
use crate::models::{Architecture, CaptionModel};
use crate::training::{
    epoch_of_file_name, select_champion, train, Checkpoint, TrainOutputs, TrainSession,
};

pub const SPEC_FILE: &str = "spec.txt";
pub const LOSS_FILE: &str = "loss.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const METRICS_DIR: &str = "metrics";

#[derive(Debug, Parser)]
#[command(name = "captionlab", version, about = "Encoder-decoder captioning lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene dataset.
    SynthData(SynthArgs),
    /// Train one architecture on a dataset directory.
    Train(TrainArgs),
    /// Caption a dataset with a checkpoint and score the captions.
    Evaluate(EvalArgs),
    /// Caption one feature file.
    Caption(CaptionArgs),
    /// Train every architecture under several seeds and compare them.
    Ablate(AblateArgs),
    /// Pick the checkpoint with the best BLEU-4.
    SelectChampion(ChampionArgs),
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad grid {s:?}; expected HxW or N"));
    let (h, w) = match s.split_once(['x', 'X']) {
        Some((h, w)) => (parse(h)?, parse(w)?),
        None => {
            let n = parse(s)?;
            (n, n)
        }
    };
    if h == 0 || w == 0 {
        return Err(format!("grid {s:?} must be at least 1x1"));
    }
    Ok((h, w))
}

fn parse_arch(s: &str) -> Result<Architecture, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Number of scenes.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: Option<u64>,
    /// Grid size, `HxW` or `N`.
    #[arg(long, value_parser = parse_grid)]
    grid: Option<(usize, usize)>,
    /// Comma-separated shape classes.
    #[arg(long)]
    classes: Option<String>,
    /// Comma-separated colors.
    #[arg(long)]
    colors: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Feature channels per cell.
    #[arg(long)]
    channels: Option<usize>,
    /// Feature noise standard deviation.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    max_objects: Option<usize>,
    /// Reference captions per scene (1 or 2).
    #[arg(long)]
    references: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory written by `synth-data`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_arch)]
    arch: Option<Architecture>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Decoder and encoder units.
    #[arg(long)]
    units: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    label_epsilon: Option<f64>,
    /// Share of the dataset held out for validation (the tail).
    #[arg(long, default_value_t = 0.1, conflicts_with = "val_data")]
    val_fraction: f64,
    /// Separate validation dataset; the whole of `--data` is then trained on.
    #[arg(long)]
    val_data: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Beam width.
    #[arg(long, conflicts_with = "greedy")]
    beam: Option<usize>,
    /// Decode greedily.
    #[arg(long)]
    greedy: bool,
    #[arg(long)]
    max_len: Option<usize>,
    /// Per-example metrics CSV.
    #[arg(long, default_value = "metrics/metrics.csv")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CaptionArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// One feature-grid file.
    #[arg(long)]
    features: PathBuf,
    #[arg(long, default_value_t = 7)]
    beam: usize,
    #[arg(long, default_value_t = 30)]
    max_len: usize,
    /// Directory for one attention image per generated word.
    #[arg(long)]
    heatmaps: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Comma-separated architectures.
    #[arg(long, value_delimiter = ',', value_parser = parse_arch)]
    archs: Option<Vec<Architecture>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Args)]
struct ChampionArgs {
    /// Directory of `epoch_NNN.ckpt` files.
    #[arg(long)]
    checkpoints: PathBuf,
    /// Held-out dataset to score each checkpoint on.
    #[arg(long, required_unless_present = "scores")]
    data: Option<PathBuf>,
    /// Use precomputed `epoch,bleu4` rows instead of decoding.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Score only the first N examples.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 7)]
    beam: usize,
    #[arg(long, default_value_t = 30)]
    max_len: usize,
}

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(Error::Io(e))
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match cli.command {
        Command::SynthData(a) => synth_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Caption(a) => caption(a),
        Command::Ablate(a) => ablate(a),
        Command::SelectChampion(a) => select(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn load_spec(config: Option<&Path>) -> CliResult<ExperimentSpec> {
    let mut spec = ExperimentSpec::default();
    if let Some(path) = config {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()).into());
        }
        spec.apply_text(&fs::read_to_string(path)?)?;
    }
    Ok(spec)
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(String::from).collect()
}

fn synth_data(a: SynthArgs) -> CliResult<()> {
    let mut spec = load_spec(a.config.as_deref())?;
    let d = &mut spec.data;
    if let Some(n) = a.n {
        d.scenes.n_scenes = n as usize;
    }
    if let Some((h, w)) = a.grid {
        d.scenes.grid_h = h;
        d.scenes.grid_w = w;
    }
    if let Some(c) = &a.classes {
        d.scenes.classes = split_list(c);
    }
    if let Some(c) = &a.colors {
        d.scenes.colors = split_list(c);
    }
    if let Some(s) = a.seed {
        d.scenes.seed = s;
    }
    if let Some(c) = a.channels {
        d.channels = c;
    }
    if let Some(s) = a.sigma {
        d.noise_sigma = s;
    }
    if let Some(m) = a.max_objects {
        d.scenes.max_objects = m;
    }
    if let Some(r) = a.references {
        d.scenes.references = r;
    }
    d.scenes.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if d.channels == 0 || !(d.noise_sigma >= 0.0) {
        return Err(CliError::Usage("--channels must be positive and --sigma nonnegative".into()));
    }
    let source = FeatureSource::new(d.channels, d.noise_sigma, d.scenes.seed);
    let (examples, vocab) = gen_dataset(&d.scenes, &source)?;
    write_dataset(&a.out, &examples, &vocab)?;
    fs::write(a.out.join(SPEC_FILE), spec.to_text())?;
    println!(
        "wrote {} scenes ({} words) to {}",
        examples.len(),
        vocab.len(),
        a.out.display()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> CliResult<()> {
    let mut spec = load_spec(a.config.as_deref())?;
    if let Some(arch) = a.arch {
        spec.model.architecture = arch;
    }
    let t = &mut spec.training;
    if let Some(e) = a.epochs {
        t.max_epochs = e;
    }
    if let Some(lr) = a.lr {
        t.learning_rate = lr;
    }
    if let Some(b) = a.batch_size {
        t.batch_size = b;
    }
    if let Some(s) = a.seed {
        t.seed = s;
    }
    if let Some(eps) = a.label_epsilon {
        t.label_epsilon = eps;
    }
    if let Some(u) = a.units {
        spec.model.decoder_units = u;
        spec.model.encoder_units = u;
        spec.model.attn_dim = u;
    }
    if let Some(e) = a.embed_dim {
        spec.model.embed_dim = e;
    }
    spec.training.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if !(a.val_fraction > 0.0 && a.val_fraction < 1.0) {
        return Err(CliError::Usage("--val-fraction must lie in (0, 1)".into()));
    }

    let (mut examples, vocab) = load_dataset(&a.data)?;
    let val = match &a.val_data {
        Some(dir) => {
            let (val, val_vocab) = load_dataset(dir)?;
            if val_vocab != vocab {
                return Err(Error::Config("validation dataset has a different vocabulary".into()).into());
            }
            val
        }
        None => {
            if examples.len() < 2 {
                return Err(Error::Config("training needs at least two examples".into()).into());
            }
            let n = ((examples.len() as f64 * a.val_fraction).round() as usize).clamp(1, examples.len() - 1);
            examples.split_off(examples.len() - n)
        }
    };
    let n_val = val.len();
    let f = &examples[0].features;
    spec.data.scenes.n_scenes = examples.len() + val.len();
    spec.data.scenes.grid_h = f.grid_h();
    spec.data.scenes.grid_w = f.grid_w();
    spec.data.channels = f.channels();
    spec.data.n_val = n_val;
    spec.data.n_test = 0;
    let config = spec
        .model
        .config(spec.model.architecture, vocab.len(), f.channels(), (f.grid_h(), f.grid_w()));
    let model = CaptionModel::build(config, spec.training.seed)?;
    let mut session = TrainSession::new(model, spec.training.clone(), Some(vocab.tokens().to_vec()))?;

    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join(SPEC_FILE), spec.to_text())?;
    let ckpt_dir = a.out.join(CHECKPOINT_DIR);
    let loss_path = a.out.join(LOSS_FILE);
    println!(
        "training {} on {} examples, validating on {}",
        spec.model.architecture,
        examples.len(),
        val.len()
    );
    train(
        &mut session,
        &examples,
        &val,
        TrainOutputs {
            checkpoint_dir: Some(&ckpt_dir),
            loss_csv: Some(&loss_path),
        },
        |_, r| {
            println!(
                "epoch {:>3}  train {:.4}  val {:.4}  lr {:.3e}",
                r.epoch, r.train_loss, r.val_loss, r.lr
            );
            Ok(())
        },
    )?;
    println!(
        "{} epochs; checkpoints in {}",
        session.history().len(),
        ckpt_dir.display()
    );
    Ok(())
}

fn load_checkpoint(path: &Path) -> crate::Result<(Checkpoint, Option<Vocabulary>)> {
    let ckpt = Checkpoint::load(path)?;
    let vocab = match &ckpt.meta.vocab {
        Some(tokens) => Some(Vocabulary::from_tokens(tokens)?),
        None => None,
    };
    Ok((ckpt, vocab))
}

/// Top caption for one input: greedy when `beam` is `None`.
fn decode(model: &CaptionModel, ex: &CaptionedExample, beam: Option<&BeamConfig>, max_len: usize) -> crate::Result<BeamHypothesis> {
    let stepper = ModelStepper::new(model, (&ex.features).into());
    Ok(match beam {
        None => greedy_decode(&stepper, max_len)?,
        Some(cfg) => beam_search(&stepper, cfg)?.swap_remove(0),
    })
}

fn score_examples(
    model: &CaptionModel,
    model_vocab: &Vocabulary,
    examples: &[CaptionedExample],
    data_vocab: &Vocabulary,
    beam: Option<&BeamConfig>,
    max_len: usize,
) -> crate::Result<EvalReport> {
    let candidates = examples
        .iter()
        .map(|ex| decode(model, ex, beam, max_len).map(|h| model_vocab.words(&h.tokens)))
        .collect::<crate::Result<Vec<_>>>()?;
    score_corpus(&candidates, &reference_words(examples, data_vocab))
}

fn evaluate(a: EvalArgs) -> CliResult<()> {
    let (ckpt, vocab) = load_checkpoint(&a.checkpoint)?;
    let (examples, data_vocab) = load_dataset(&a.data)?;
    let vocab = vocab.unwrap_or_else(|| data_vocab.clone());
    let defaults = BeamConfig::default();
    let max_len = a.max_len.unwrap_or(defaults.max_len);
    let beam = (!a.greedy).then(|| BeamConfig {
        beam_width: a.beam.unwrap_or(defaults.beam_width),
        max_len,
        ..defaults
    });
    if beam.as_ref().is_some_and(|b| b.beam_width == 0) || max_len == 0 {
        return Err(CliError::Usage("--beam and --max-len must be positive".into()));
    }
    let report = score_examples(&ckpt.model, &vocab, &examples, &data_vocab, beam.as_ref(), max_len)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&a.out, report.to_csv())?;
    println!("{} ({} examples)", report.summary(), examples.len());
    println!("wrote {}", a.out.display());
    Ok(())
}

fn caption(a: CaptionArgs) -> CliResult<()> {
    let (ckpt, vocab) = load_checkpoint(&a.checkpoint)?;
    let arch = ckpt.model.architecture();
    if a.heatmaps.is_some() && arch.is_pooled() {
        return Err(CliError::Usage(format!(
            "--heatmaps needs an attention model; {arch} pools the grid and has no attention"
        )));
    }
    let vocab = vocab.ok_or_else(|| Error::Config("checkpoint carries no vocabulary".into()))?;
    if a.beam == 0 || a.max_len == 0 {
        return Err(CliError::Usage("--beam and --max-len must be positive".into()));
    }
    let grid = load_features(&a.features)?;
    let cfg = BeamConfig {
        beam_width: a.beam,
        max_len: a.max_len,
        ..BeamConfig::default()
    };
    let stepper = ModelStepper::new(&ckpt.model, (&grid).into());
    let hyp = beam_search(&stepper, &cfg)?.swap_remove(0);
    let words = vocab.words(&hyp.tokens);
    println!("{}", words.join(" "));
    if let Some(dir) = &a.heatmaps {
        let trace: Vec<Vec<f64>> = hyp
            .tokens
            .iter()
            .zip(&hyp.attention)
            .filter(|(&t, _)| t != END && t != PAD && t != START)
            .map(|(_, w)| w.clone())
            .collect();
        let paths = export_attention_heatmap(&words, &trace, grid.grid_h(), grid.grid_w(), dir)?;
        println!("wrote {} heatmaps to {}", paths.len(), dir.display());
    }
    Ok(())
}

fn run_curve(r: &RunResult) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,val_bleu4,lr\n");
    for (h, (_, b4)) in r.history.iter().zip(&r.val_bleu4) {
        let _ = writeln!(out, "{},{},{},{},{}", h.epoch, h.train_loss, h.val_loss, b4, h.lr);
    }
    out
}

fn ablate(a: AblateArgs) -> CliResult<()> {
    let mut spec = load_spec(a.config.as_deref())?;
    if let Some(out) = a.out {
        spec.output = out;
    }
    if let Some(s) = a.seeds {
        spec.seeds = s;
    }
    if let Some(archs) = a.archs {
        spec.architectures = archs;
    }
    if let Some(e) = a.epochs {
        spec.training.max_epochs = e;
    }
    if let Some(n) = a.scenes {
        spec.data.scenes.n_scenes = n;
    }
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let quiet = a.quiet;
    let report = run_ablation(&spec, &mut |line| {
        if !quiet {
            println!("{line}");
        }
    })?;
    let out = &spec.output;
    fs::create_dir_all(out.join(METRICS_DIR))?;
    fs::write(out.join(SPEC_FILE), spec.to_text())?;
    fs::write(out.join("report.md"), report.to_markdown())?;
    fs::write(out.join("report.csv"), report.to_csv())?;
    for r in &report.runs {
        fs::write(
            out.join(METRICS_DIR).join(format!("{}_seed{}.csv", r.architecture, r.seed)),
            run_curve(r),
        )?;
    }
    for c in report.ordering() {
        println!("{}: {}", c.relation, if c.held { "held" } else { "did not hold" });
    }
    println!("report in {}", out.join("report.md").display());
    Ok(())
}

fn read_scores(path: &Path) -> CliResult<Vec<(usize, f64)>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()).into());
    }
    let mut rows = Vec::new();
    for (n, line) in fs::read_to_string(path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("epoch") {
            continue;
        }
        let bad = || Error::Malformed {
            what: "scores file",
            detail: format!("line {}: expected epoch,bleu4", n + 1),
        };
        let (e, s) = line.split_once(',').ok_or_else(bad)?;
        rows.push((e.trim().parse().map_err(|_| bad())?, s.trim().parse().map_err(|_| bad())?));
    }
    Ok(rows)
}

fn select(a: ChampionArgs) -> CliResult<()> {
    if !a.checkpoints.is_dir() {
        return Err(Error::MissingFile(a.checkpoints.clone()).into());
    }
    let mut files: Vec<(usize, PathBuf)> = fs::read_dir(&a.checkpoints)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            epoch_of_file_name(&name).map(|ep| (ep, e.path()))
        })
        .collect();
    if files.is_empty() {
        return Err(Error::Config(format!("no epoch_NNN.ckpt files in {}", a.checkpoints.display())).into());
    }
    files.sort();
    let mut table = String::new();
    let champion = if let Some(scores) = &a.scores {
        let scripted = read_scores(scores)?;
        let _ = writeln!(table, "epoch  BLEU-4");
        select_champion(files, |p: &PathBuf| {
            let epoch = epoch_of_file_name(&p.file_name().unwrap_or_default().to_string_lossy()).unwrap_or(0);
            let s = scripted
                .iter()
                .find(|(e, _)| *e == epoch)
                .map(|(_, s)| *s)
                .ok_or_else(|| Error::Config(format!("no score for epoch {epoch}")))?;
            let _ = writeln!(table, "{epoch:>5}  {s:.4}");
            Ok(s)
        })?
    } else {
        let data = a.data.as_deref().expect("required by clap");
        let (mut examples, data_vocab) = load_dataset(data)?;
        if let Some(n) = a.limit {
            examples.truncate(n.max(1));
        }
        if a.beam == 0 || a.max_len == 0 {
            return Err(CliError::Usage("--beam and --max-len must be positive".into()));
        }
        let cfg = BeamConfig {
            beam_width: a.beam,
            max_len: a.max_len,
            ..BeamConfig::default()
        };
        let _ = writeln!(
            table,
            "epoch  BLEU-1  BLEU-2  BLEU-3  BLEU-4  METEOR  P       R       F1"
        );
        select_champion(files, |p: &PathBuf| {
            let (ckpt, vocab) = load_checkpoint(p)?;
            let vocab = vocab.unwrap_or_else(|| data_vocab.clone());
            let report = score_examples(&ckpt.model, &vocab, &examples, &data_vocab, Some(&cfg), a.max_len)?;
            let c = &report.corpus;
            let _ = writeln!(
                table,
                "{:>5}  {:.4}  {:.4}  {:.4}  {:.4}  {:.4}  {:.4}  {:.4}  {:.4}",
                ckpt.meta.epoch, c.bleu[0], c.bleu[1], c.bleu[2], c.bleu[3], c.meteor, c.precision, c.recall, c.f1
            );
            Ok(c.bleu[3])
        })?
    };
    print!("{table}");
    println!("champion: {}", champion.item.display());
    Ok(())
}
