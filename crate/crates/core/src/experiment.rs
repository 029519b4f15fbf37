//! Experiment descriptions and the architecture ablation.
//!
//! An [`ExperimentSpec`] is read from and written as flat `key = value` text
//! grouped under `[data]`, `[model]`, `[training]`, `[beam]` and
//! `[experiment]` headers.

use std::fmt::Write as _;
use std::path::PathBuf;

use ini::Ini;

use crate::data::{gen_dataset, split, CaptionedExample, SceneConfig, Splits, Vocabulary};
use crate::error::{Error, Result};
use crate::features::FeatureSource;
use crate::inference::{evaluate_corpus, BeamConfig, Scores};
use crate::layers::ScoreKind;
use crate::models::{Architecture, CaptionModel, ModelConfig};
use crate::training::{select_champion, train, EpochRecord, TrainOutputs, TrainSession, TrainingConfig};

/// Dataset parameters: scene layout, the feature backbone and the held-out
/// split sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSpec {
    pub scenes: SceneConfig,
    pub channels: usize,
    pub noise_sigma: f64,
    pub n_val: usize,
    pub n_test: usize,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            scenes: SceneConfig::default(),
            channels: 16,
            noise_sigma: 0.1,
            n_val: 50,
            n_test: 100,
        }
    }
}

/// Model widths; vocabulary size and feature shape come from the data.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub embed_dim: usize,
    pub decoder_units: usize,
    pub encoder_units: usize,
    pub attn_dim: usize,
    pub score: ScoreKind,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            architecture: Architecture::Focalis,
            embed_dim: 16,
            decoder_units: 64,
            encoder_units: 64,
            attn_dim: 64,
            score: ScoreKind::Additive,
        }
    }
}

impl ModelSpec {
    pub fn config(&self, architecture: Architecture, vocab_size: usize, channels: usize, grid: (usize, usize)) -> ModelConfig {
        let mut cfg = ModelConfig::new(architecture, vocab_size, channels).with_grid(grid.0, grid.1);
        cfg.embed_dim = self.embed_dim;
        cfg.decoder_units = self.decoder_units;
        cfg.encoder_units = self.encoder_units;
        cfg.attn_dim = self.attn_dim;
        cfg.score = self.score;
        cfg
    }
}

/// Everything that determines a run.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub data: DataSpec,
    pub model: ModelSpec,
    pub training: TrainingConfig,
    pub beam: BeamConfig,
    /// Ablation seeds; each seeds data, initialization and batch order.
    pub seeds: Vec<u64>,
    pub architectures: Vec<Architecture>,
    pub output: PathBuf,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            data: DataSpec::default(),
            model: ModelSpec::default(),
            // Every architecture gets the full epoch budget; the champion is
            // picked by validation BLEU-4 afterwards.
            training: TrainingConfig {
                learning_rate: 3e-3,
                plateau_patience: 3,
                early_stop_patience: 40,
                max_epochs: 40,
                batch_size: 16,
                ..TrainingConfig::default()
            },
            beam: BeamConfig::default(),
            seeds: vec![0, 1, 2],
            architectures: Architecture::ALL.to_vec(),
            output: PathBuf::from("ablation"),
        }
    }
}

fn parse<T: std::str::FromStr>(section: &str, key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("[{section}] {key}: cannot parse {value:?}")))
}

fn list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

pub fn parse_score(value: &str) -> Result<ScoreKind> {
    match value.trim() {
        "additive" => Ok(ScoreKind::Additive),
        "multiplicative" => Ok(ScoreKind::Multiplicative),
        other => Err(Error::Config(format!(
            "unknown score {other:?}; expected additive or multiplicative"
        ))),
    }
}

fn score_name(score: ScoreKind) -> &'static str {
    match score {
        ScoreKind::Additive => "additive",
        ScoreKind::Multiplicative => "multiplicative",
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentSpec {
    /// Overrides one field; `section` and `key` name it as in the text form.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let p = |v: &str| -> Result<usize> { parse(section, key, v) };
        let f = |v: &str| -> Result<f64> { parse(section, key, v) };
        let d = &mut self.data;
        let m = &mut self.model;
        let t = &mut self.training;
        match (section, key) {
            ("data", "scenes") => d.scenes.n_scenes = p(value)?,
            ("data", "grid_h") => d.scenes.grid_h = p(value)?,
            ("data", "grid_w") => d.scenes.grid_w = p(value)?,
            ("data", "classes") => d.scenes.classes = list(value),
            ("data", "colors") => d.scenes.colors = list(value),
            ("data", "max_objects") => d.scenes.max_objects = p(value)?,
            ("data", "references") => d.scenes.references = p(value)?,
            ("data", "seed") => d.scenes.seed = parse(section, key, value)?,
            ("data", "channels") => d.channels = p(value)?,
            ("data", "noise_sigma") => d.noise_sigma = f(value)?,
            ("data", "n_val") => d.n_val = p(value)?,
            ("data", "n_test") => d.n_test = p(value)?,
            ("model", "architecture") => m.architecture = value.trim().parse()?,
            ("model", "embed_dim") => m.embed_dim = p(value)?,
            ("model", "decoder_units") => m.decoder_units = p(value)?,
            ("model", "encoder_units") => m.encoder_units = p(value)?,
            ("model", "attn_dim") => m.attn_dim = p(value)?,
            ("model", "score") => m.score = parse_score(value)?,
            ("training", "learning_rate") => t.learning_rate = f(value)?,
            ("training", "clipnorm") => t.clipnorm = f(value)?,
            ("training", "label_epsilon") => t.label_epsilon = f(value)?,
            ("training", "plateau_patience") => t.plateau_patience = p(value)?,
            ("training", "plateau_factor") => t.plateau_factor = f(value)?,
            ("training", "early_stop_patience") => t.early_stop_patience = p(value)?,
            ("training", "max_epochs") => t.max_epochs = p(value)?,
            ("training", "batch_size") => t.batch_size = p(value)?,
            ("training", "seed") => t.seed = parse(section, key, value)?,
            ("beam", "beam_width") => self.beam.beam_width = p(value)?,
            ("beam", "max_len") => self.beam.max_len = p(value)?,
            ("beam", "length_norm_alpha") => self.beam.length_norm_alpha = f(value)?,
            ("experiment", "seeds") => {
                self.seeds = list(value)
                    .iter()
                    .map(|s| parse(section, key, s))
                    .collect::<Result<_>>()?
            }
            ("experiment", "architectures") => {
                self.architectures = list(value)
                    .iter()
                    .map(|s| s.parse())
                    .collect::<Result<_>>()?
            }
            ("experiment", "output") => self.output = PathBuf::from(value.trim()),
            _ => return Err(Error::Config(format!("unknown setting [{section}] {key}"))),
        }
        Ok(())
    }

    /// Applies every setting of a config text on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        for (section, props) in ini.iter() {
            for (key, value) in props.iter() {
                let Some(section) = section else {
                    return Err(Error::Config(format!("setting {key:?} outside any [section]")));
                };
                self.set(section, key, value)?;
            }
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        spec.apply_text(text)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Text form with every field; [`ExperimentSpec::from_text`] reads it back.
    pub fn to_text(&self) -> String {
        let d = &self.data;
        let m = &self.model;
        let t = &self.training;
        let sections: [(&str, Vec<(&str, String)>); 5] = [
            (
                "data",
                vec![
                    ("scenes", d.scenes.n_scenes.to_string()),
                    ("grid_h", d.scenes.grid_h.to_string()),
                    ("grid_w", d.scenes.grid_w.to_string()),
                    ("classes", d.scenes.classes.join(",")),
                    ("colors", d.scenes.colors.join(",")),
                    ("max_objects", d.scenes.max_objects.to_string()),
                    ("references", d.scenes.references.to_string()),
                    ("seed", d.scenes.seed.to_string()),
                    ("channels", d.channels.to_string()),
                    ("noise_sigma", d.noise_sigma.to_string()),
                    ("n_val", d.n_val.to_string()),
                    ("n_test", d.n_test.to_string()),
                ],
            ),
            (
                "model",
                vec![
                    ("architecture", m.architecture.to_string()),
                    ("embed_dim", m.embed_dim.to_string()),
                    ("decoder_units", m.decoder_units.to_string()),
                    ("encoder_units", m.encoder_units.to_string()),
                    ("attn_dim", m.attn_dim.to_string()),
                    ("score", score_name(m.score).to_string()),
                ],
            ),
            (
                "training",
                vec![
                    ("learning_rate", t.learning_rate.to_string()),
                    ("clipnorm", t.clipnorm.to_string()),
                    ("label_epsilon", t.label_epsilon.to_string()),
                    ("plateau_patience", t.plateau_patience.to_string()),
                    ("plateau_factor", t.plateau_factor.to_string()),
                    ("early_stop_patience", t.early_stop_patience.to_string()),
                    ("max_epochs", t.max_epochs.to_string()),
                    ("batch_size", t.batch_size.to_string()),
                    ("seed", t.seed.to_string()),
                ],
            ),
            (
                "beam",
                vec![
                    ("beam_width", self.beam.beam_width.to_string()),
                    ("max_len", self.beam.max_len.to_string()),
                    ("length_norm_alpha", self.beam.length_norm_alpha.to_string()),
                ],
            ),
            (
                "experiment",
                vec![
                    ("seeds", join(&self.seeds)),
                    ("architectures", join(&self.architectures)),
                    ("output", self.output.display().to_string()),
                ],
            ),
        ];
        let mut out = String::new();
        for (i, (name, keys)) in sections.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "[{name}]");
            for (k, v) in keys {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.data.scenes.validate()?;
        self.training.validate()?;
        if self.data.channels == 0 {
            return Err(Error::Config("channels must be positive".into()));
        }
        if !(self.data.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be nonnegative".into()));
        }
        if self.beam.beam_width == 0 || self.beam.max_len == 0 {
            return Err(Error::Config("beam_width and max_len must be positive".into()));
        }
        if self.seeds.is_empty() || self.architectures.is_empty() {
            return Err(Error::Config("an ablation needs at least one seed and architecture".into()));
        }
        let held_out = self.data.n_val + self.data.n_test;
        if self.data.n_val == 0 || held_out >= self.data.scenes.n_scenes {
            return Err(Error::Config(format!(
                "n_val ({}) must be positive and n_val + n_test ({held_out}) below scenes ({})",
                self.data.n_val, self.data.scenes.n_scenes
            )));
        }
        self.model
            .config(self.model.architecture, 8, self.data.channels, (1, 1))
            .validate()
    }

    /// Feature backbone an architecture sees. Clarity and focalis get the
    /// configured source; genesis and contexta get the plain one with half
    /// the channels and twice the noise.
    pub fn feature_source(&self, architecture: Architecture, seed: u64) -> FeatureSource {
        match architecture {
            Architecture::Clarity | Architecture::Focalis => {
                FeatureSource::new(self.data.channels, self.data.noise_sigma, seed)
            }
            Architecture::Genesis | Architecture::Contexta => {
                FeatureSource::new((self.data.channels / 2).max(1), self.data.noise_sigma * 2.0, seed)
            }
        }
    }

    /// Generated and split dataset for one ablation cell.
    pub fn dataset(&self, architecture: Architecture, seed: u64) -> Result<(Splits, Vocabulary)> {
        let scenes = SceneConfig {
            seed,
            ..self.data.scenes.clone()
        };
        let (examples, vocab) = gen_dataset(&scenes, &self.feature_source(architecture, seed))?;
        Ok((split(examples, self.data.n_val, self.data.n_test)?, vocab))
    }
}

/// Outcome of training and testing one architecture under one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub architecture: Architecture,
    pub seed: u64,
    pub history: Vec<EpochRecord>,
    /// Greedy validation BLEU-4 after each epoch.
    pub val_bleu4: Vec<(usize, f64)>,
    /// Epoch with the highest validation BLEU-4; this model is tested.
    pub champion_epoch: usize,
    pub min_val_loss_epoch: usize,
    pub test: Scores,
}

impl RunResult {
    /// The epoch chosen by validation loss differs from the one chosen by
    /// validation BLEU-4.
    pub fn diverged(&self) -> bool {
        self.champion_epoch != self.min_val_loss_epoch
    }
}

fn min_loss_epoch(history: &[EpochRecord]) -> usize {
    history
        .iter()
        .fold(None::<&EpochRecord>, |best, r| match best {
            Some(b) if b.val_loss <= r.val_loss => Some(b),
            _ => Some(r),
        })
        .map_or(0, |r| r.epoch)
}

/// Trains `architecture` on `splits`, keeps the validation-BLEU-4 champion
/// and scores it on the test split with the configured beam.
pub fn run_one(
    spec: &ExperimentSpec,
    architecture: Architecture,
    seed: u64,
    splits: &Splits,
    vocab: &Vocabulary,
    log: &mut dyn FnMut(&str),
) -> Result<RunResult> {
    let first: &CaptionedExample = splits
        .train
        .first()
        .ok_or_else(|| Error::Config("empty training split".into()))?;
    let f = &first.features;
    let config = spec
        .model
        .config(architecture, vocab.len(), f.channels(), (f.grid_h(), f.grid_w()));
    let model = CaptionModel::build(config, seed)?;
    let training = TrainingConfig {
        seed,
        ..spec.training.clone()
    };
    let mut session = TrainSession::new(model, training, Some(vocab.tokens().to_vec()))?;
    let greedy = BeamConfig {
        beam_width: 1,
        ..spec.beam.clone()
    };
    let mut snapshots = Vec::new();
    let mut val_bleu4 = Vec::new();
    train(&mut session, &splits.train, &splits.val, TrainOutputs::default(), |s, r| {
        let b4 = evaluate_corpus(&s.model, &splits.val, vocab, &greedy)?.corpus.bleu[3];
        log(&format!(
            "{architecture} seed {seed} epoch {} train {:.4} val {:.4} val-bleu4 {b4:.4} lr {:.2e}",
            r.epoch, r.train_loss, r.val_loss, r.lr
        ));
        val_bleu4.push((r.epoch, b4));
        snapshots.push((r.epoch, s.model.clone()));
        Ok(())
    })?;
    let snapshots = snapshots
        .into_iter()
        .zip(&val_bleu4)
        .map(|((epoch, model), &(_, b4))| (epoch, (model, b4)))
        .collect();
    let champion = select_champion(snapshots, |(_, b4): &(CaptionModel, f64)| Ok(*b4))?;
    let test = evaluate_corpus(&champion.item.0, &splits.test, vocab, &spec.beam)?.corpus;
    log(&format!(
        "{architecture} seed {seed} champion epoch {} test bleu4 {:.4}",
        champion.epoch, test.bleu[3]
    ));
    Ok(RunResult {
        architecture,
        seed,
        min_val_loss_epoch: min_loss_epoch(session.history()),
        history: session.history().to_vec(),
        val_bleu4,
        champion_epoch: champion.epoch,
        test,
    })
}

/// Largest logit change of a pooled model when the grid cells of `example`
/// are permuted (reversed raster order).
pub fn pooled_permutation_gap(model: &CaptionModel, example: &CaptionedExample) -> Result<f64> {
    let grid = &example.features;
    let perm: Vec<usize> = (0..grid.cells()).rev().collect();
    let permuted = grid.permute_cells(&perm)?;
    let caption = &example.references[0];
    let a = model.teacher_forced_logits(grid.into(), caption)?;
    let b = model.teacher_forced_logits((&permuted).into(), caption)?;
    Ok(a.iter()
        .zip(&b)
        .flat_map(|(x, y)| x.data().iter().zip(y.data()).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max))
}

/// All runs of an ablation plus the spec that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub spec: ExperimentSpec,
    pub runs: Vec<RunResult>,
    /// Clarity logit change under cell permutation, when clarity was run.
    pub clarity_permutation_gap: Option<f64>,
}

/// One pairwise comparison of mean test BLEU-4.
#[derive(Clone, Debug, PartialEq)]
pub struct OrderingCheck {
    pub relation: String,
    pub held: bool,
}

pub const ABLATION_HEADER: &str =
    "architecture,seed,epochs,champion_epoch,min_val_loss_epoch,bleu1,bleu2,bleu3,bleu4,meteor,precision,recall,f1";

/// Trains every configured architecture under every seed.
pub fn run_ablation(spec: &ExperimentSpec, log: &mut dyn FnMut(&str)) -> Result<AblationReport> {
    spec.validate()?;
    let mut runs = Vec::new();
    let mut gap = None;
    for &seed in &spec.seeds {
        for &arch in &spec.architectures {
            let (splits, vocab) = spec.dataset(arch, seed)?;
            let run = run_one(spec, arch, seed, &splits, &vocab, log)?;
            if arch == Architecture::Clarity {
                let f = &splits.test[0].features;
                let cfg = spec.model.config(arch, vocab.len(), f.channels(), (f.grid_h(), f.grid_w()));
                let model = CaptionModel::build(cfg, seed)?;
                let g = pooled_permutation_gap(&model, &splits.test[0])?;
                gap = Some(gap.map_or(g, |x: f64| x.max(g)));
            }
            runs.push(run);
        }
    }
    Ok(AblationReport {
        spec: spec.clone(),
        runs,
        clarity_permutation_gap: gap,
    })
}

impl AblationReport {
    pub fn runs_of(&self, architecture: Architecture) -> impl Iterator<Item = &RunResult> {
        self.runs.iter().filter(move |r| r.architecture == architecture)
    }

    /// Mean test BLEU-4 over seeds, if the architecture was run.
    pub fn mean_bleu4(&self, architecture: Architecture) -> Option<f64> {
        let mut xs: Vec<f64> = self.runs_of(architecture).map(|r| r.test.bleu[3]).collect();
        if xs.is_empty() {
            return None;
        }
        xs.sort_by(f64::total_cmp);
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }

    /// Test BLEU-4 of `a` above `b` under every seed both were run with.
    pub fn beats_every_seed(&self, a: Architecture, b: Architecture) -> Option<bool> {
        let pairs: Vec<(f64, f64)> = self
            .runs_of(a)
            .filter_map(|ra| {
                self.runs_of(b)
                    .find(|rb| rb.seed == ra.seed)
                    .map(|rb| (ra.test.bleu[3], rb.test.bleu[3]))
            })
            .collect();
        (!pairs.is_empty()).then(|| pairs.iter().all(|(x, y)| x > y))
    }

    /// focalis > contexta >= genesis > clarity on mean BLEU-4, plus focalis
    /// over clarity per seed. Relations involving a missing architecture are
    /// left out.
    pub fn ordering(&self) -> Vec<OrderingCheck> {
        use Architecture::*;
        let mut out = Vec::new();
        for (a, b, strict) in [(Focalis, Contexta, true), (Contexta, Genesis, false), (Genesis, Clarity, true)] {
            if let (Some(x), Some(y)) = (self.mean_bleu4(a), self.mean_bleu4(b)) {
                out.push(OrderingCheck {
                    relation: format!("mean BLEU-4 {a} {} {b}", if strict { ">" } else { ">=" }),
                    held: if strict { x > y } else { x >= y },
                });
            }
        }
        if let Some(held) = self.beats_every_seed(Focalis, Clarity) {
            out.push(OrderingCheck {
                relation: "BLEU-4 focalis > clarity under every seed".into(),
                held,
            });
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{ABLATION_HEADER}\n");
        for r in &self.runs {
            let s = &r.test;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.architecture,
                r.seed,
                r.history.len(),
                r.champion_epoch,
                r.min_val_loss_epoch,
                s.bleu[0],
                s.bleu[1],
                s.bleu[2],
                s.bleu[3],
                s.meteor,
                s.precision,
                s.recall,
                s.f1
            );
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Architecture ablation\n\n");
        out.push_str(
            "Test-split corpus metrics of the checkpoint with the best validation BLEU-4, \
             decoded with the configured beam. Token P/R/F1 is unigram overlap against the \
             best-matching reference.\n\n",
        );
        out.push_str("| architecture | seed | epochs | champion | min val loss | BLEU-1 | BLEU-4 | METEOR | F1 |\n");
        out.push_str("|---|---|---|---|---|---|---|---|---|\n");
        for r in &self.runs {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {:.4} | {:.4} | {:.4} | {:.4} |",
                r.architecture,
                r.seed,
                r.history.len(),
                r.champion_epoch,
                r.min_val_loss_epoch,
                r.test.bleu[0],
                r.test.bleu[3],
                r.test.meteor,
                r.test.f1
            );
        }
        out.push_str("\n## Mean BLEU-4\n\n");
        for &a in &self.spec.architectures {
            if let Some(m) = self.mean_bleu4(a) {
                let _ = writeln!(out, "- {a}: {m:.4}");
            }
        }
        out.push_str("\n## Ordering\n\n");
        let checks = self.ordering();
        for c in &checks {
            let _ = writeln!(out, "- {}: {}", c.relation, if c.held { "held" } else { "did not hold" });
        }
        let all = !checks.is_empty() && checks.iter().all(|c| c.held);
        let _ = writeln!(
            out,
            "\nExpected ordering focalis > contexta >= genesis > clarity: {}.",
            if all { "held" } else { "did not fully hold" }
        );
        if let Some(g) = self.clarity_permutation_gap {
            let _ = writeln!(
                out,
                "\nClarity logits under a permutation of grid cells: max |change| = {g:.3e}."
            );
        }
        let diverged = self.runs.iter().filter(|r| r.diverged()).count();
        let _ = writeln!(
            out,
            "\n## Loss versus BLEU\n\nLowest validation loss and highest validation BLEU-4 fell on \
             different epochs in {diverged} of {} runs.",
            self.runs.len()
        );
        for r in self.runs.iter().filter(|r| r.diverged()) {
            let _ = writeln!(
                out,
                "- {} seed {}: min val loss at epoch {}, max val BLEU-4 at epoch {}",
                r.architecture, r.seed, r.min_val_loss_epoch, r.champion_epoch
            );
        }
        out.push_str("\n## Spec\n\n```ini\n");
        out.push_str(&self.spec.to_text());
        out.push_str("```\n");
        out
    }
}
