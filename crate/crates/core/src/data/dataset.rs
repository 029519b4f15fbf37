use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::features::{load_features, save_features, FeatureGrid, FeatureSource};

use super::scene::{scene_captions, SceneConfig, SceneSpec};
use super::vocab::{build_vocab, tokenize, Vocabulary, END, PAD, START};

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const VOCAB_FILE: &str = "vocab.tsv";
pub const FEATURE_DIR: &str = "features";

/// One feature grid with its framed reference captions.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptionedExample {
    pub features: FeatureGrid,
    pub references: Vec<Vec<usize>>,
}

impl CaptionedExample {
    pub fn new(features: FeatureGrid, references: Vec<Vec<usize>>, vocab_size: usize) -> Result<Self> {
        if references.is_empty() {
            return Err(Error::contract("example needs at least one reference"));
        }
        for r in &references {
            if r.len() < 3 || r[0] != START || r[r.len() - 1] != END {
                return Err(Error::contract(format!(
                    "reference {r:?} is not start…end framed with at least one word"
                )));
            }
            if let Some(&bad) = r.iter().find(|&&id| id >= vocab_size) {
                return Err(Error::Index {
                    what: "reference token",
                    index: bad,
                    bound: vocab_size,
                });
            }
        }
        Ok(Self {
            features,
            references,
        })
    }
}

/// Renders scenes and frames their captions against a vocabulary built from
/// every reference.
pub fn gen_dataset(
    config: &SceneConfig,
    source: &FeatureSource,
) -> Result<(Vec<CaptionedExample>, Vocabulary)> {
    let scenes = config.scenes()?;
    let captions: Vec<Vec<Vec<String>>> = scenes
        .iter()
        .map(|s| {
            scene_captions(s).map(|mut refs| {
                refs.truncate(config.references);
                refs
            })
        })
        .collect::<Result<_>>()?;
    let corpus: Vec<Vec<String>> = captions.iter().flatten().cloned().collect();
    let vocab = build_vocab(&corpus, 1)?;
    let examples = scenes
        .iter()
        .zip(&captions)
        .enumerate()
        .map(|(i, (scene, refs))| render_example(scene, refs, source, noise_seed(config.seed, i), &vocab))
        .collect::<Result<_>>()?;
    Ok((examples, vocab))
}

fn noise_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index as u64
}

pub fn render_example(
    scene: &SceneSpec,
    refs: &[Vec<String>],
    source: &FeatureSource,
    noise_seed: u64,
    vocab: &Vocabulary,
) -> Result<CaptionedExample> {
    let grid = source.render(scene, noise_seed)?;
    let framed = refs.iter().map(|r| vocab.frame(r)).collect();
    CaptionedExample::new(grid, framed, vocab.len())
}

/// Disjoint train / validation / test partitions, taken in order.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Vec<CaptionedExample>,
    pub val: Vec<CaptionedExample>,
    pub test: Vec<CaptionedExample>,
}

pub fn split(mut examples: Vec<CaptionedExample>, n_val: usize, n_test: usize) -> Result<Splits> {
    if n_val + n_test >= examples.len() {
        return Err(Error::Config(format!(
            "{} examples cannot hold {n_val} validation and {n_test} test examples plus training data",
            examples.len()
        )));
    }
    let test = examples.split_off(examples.len() - n_test);
    let val = examples.split_off(examples.len() - n_val);
    Ok(Splits {
        train: examples,
        val,
        test,
    })
}

/// Padded id rows with a parallel mask of real (non-pad) positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub ids: Vec<Vec<usize>>,
    pub mask: Vec<Vec<bool>>,
}

pub fn batch(seqs: &[Vec<usize>], pad_to: usize) -> Result<Batch> {
    let mut ids = Vec::with_capacity(seqs.len());
    let mut mask = Vec::with_capacity(seqs.len());
    for s in seqs {
        if s.len() > pad_to {
            return Err(Error::contract(format!(
                "reference of length {} exceeds pad_to {pad_to}",
                s.len()
            )));
        }
        let mut row = s.clone();
        row.resize(pad_to, PAD);
        ids.push(row);
        mask.push((0..pad_to).map(|i| i < s.len()).collect());
    }
    Ok(Batch { ids, mask })
}

/// Writes `features/`, `manifest.tsv` and `vocab.tsv` under `dir`.
pub fn write_dataset(dir: &Path, examples: &[CaptionedExample], vocab: &Vocabulary) -> Result<()> {
    fs::create_dir_all(dir.join(FEATURE_DIR))?;
    let mut manifest = String::new();
    for (i, ex) in examples.iter().enumerate() {
        let rel = format!("{FEATURE_DIR}/scene_{i:05}.cfg");
        save_features(dir.join(&rel), &ex.features)?;
        manifest.push_str(&rel);
        for r in &ex.references {
            manifest.push('\t');
            manifest.push_str(&vocab.words(r).join(" "));
        }
        manifest.push('\n');
    }
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    vocab.save(dir.join(VOCAB_FILE))
}

/// Reads a dataset directory. Feature paths in the manifest are relative to
/// `dir` unless absolute. Without `vocab.tsv` a vocabulary is built from the
/// manifest captions.
pub fn load_dataset(dir: &Path) -> Result<(Vec<CaptionedExample>, Vocabulary)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(Error::MissingFile(manifest_path));
    }
    let text = fs::read_to_string(&manifest_path)?;
    let mut rows: Vec<(PathBuf, Vec<Vec<String>>)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let path = fields.next().unwrap_or_default();
        let refs: Vec<Vec<String>> = fields.map(tokenize).filter(|r| !r.is_empty()).collect();
        if refs.is_empty() {
            return Err(Error::Malformed {
                what: "dataset manifest",
                detail: format!("line {}: no reference captions", n + 1),
            });
        }
        let p = Path::new(path);
        rows.push((if p.is_absolute() { p.to_path_buf() } else { dir.join(p) }, refs));
    }
    if rows.is_empty() {
        return Err(Error::Malformed {
            what: "dataset manifest",
            detail: "no records".into(),
        });
    }
    let vocab_path = dir.join(VOCAB_FILE);
    let vocab = if vocab_path.exists() {
        Vocabulary::load(&vocab_path)?
    } else {
        let corpus: Vec<Vec<String>> = rows.iter().flat_map(|(_, r)| r.iter().cloned()).collect();
        build_vocab(&corpus, 1)?
    };
    let examples = rows
        .into_iter()
        .map(|(path, refs)| {
            let grid = load_features(&path)?;
            let framed = refs.iter().map(|r| vocab.frame(r)).collect();
            CaptionedExample::new(grid, framed, vocab.len())
        })
        .collect::<Result<_>>()?;
    Ok((examples, vocab))
}
