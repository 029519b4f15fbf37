use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Architecture, ModelConfig};
use crate::autodiff::{Bound, ParamSet, Tape, Tensor, Var};
use crate::data::{END, START};
use crate::error::{Error, Result};
use crate::features::{FeatureGrid, FeatureVector};
use crate::layers::{
    encode_spatial, label_smoothed_ce, AdditiveAttention, BiLstm, Dense, Embedding, LstmCell,
};

/// What a model is fed: the raw grid, or an already pooled vector (pooled
/// architectures only).
#[derive(Clone, Copy, Debug)]
pub enum FeatureInput<'a> {
    Grid(&'a FeatureGrid),
    Vector(&'a FeatureVector),
}

impl<'a> From<&'a FeatureGrid> for FeatureInput<'a> {
    fn from(g: &'a FeatureGrid) -> Self {
        FeatureInput::Grid(g)
    }
}

impl<'a> From<&'a FeatureVector> for FeatureInput<'a> {
    fn from(v: &'a FeatureVector) -> Self {
        FeatureInput::Vector(v)
    }
}

enum Decoder {
    Uni(LstmCell),
    Bi(BiLstm),
}

/// Layer descriptors derived from a config; parameters live in the model's
/// [`ParamSet`].
struct Layers {
    embed: Embedding,
    image: Option<Dense>,
    encoder: Option<BiLstm>,
    attention: Option<AdditiveAttention>,
    decoder: Decoder,
    out: Dense,
}

impl Layers {
    fn new(cfg: &ModelConfig) -> Self {
        let (v, e, u) = (cfg.vocab_size, cfg.embed_dim, cfg.decoder_units);
        let embed = Embedding::new("embed", v, e);
        match cfg.architecture {
            Architecture::Genesis => Layers {
                embed,
                image: Some(Dense::new("image", cfg.feature_dim, u)),
                encoder: None,
                attention: None,
                decoder: Decoder::Uni(LstmCell::new("decoder", e, u)),
                out: Dense::new("out", u, v),
            },
            Architecture::Contexta | Architecture::Clarity => Layers {
                embed,
                image: Some(Dense::new("image", cfg.feature_dim, u)),
                encoder: None,
                attention: None,
                decoder: Decoder::Bi(BiLstm::new("decoder", e, u)),
                out: Dense::new("out", 3 * u, v),
            },
            Architecture::Focalis => {
                let m = 2 * cfg.encoder_units;
                Layers {
                    embed,
                    image: None,
                    encoder: Some(BiLstm::new("encoder", cfg.feature_dim, cfg.encoder_units)),
                    attention: Some(AdditiveAttention::new(
                        "attention",
                        u,
                        m,
                        cfg.attn_dim,
                        cfg.score,
                    )),
                    decoder: Decoder::Uni(LstmCell::new("decoder", e + m, u)),
                    out: Dense::new("out", u, v),
                }
            }
        }
    }

    fn init(&self, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<()> {
        self.embed.init(params, rng)?;
        if let Some(d) = &self.image {
            d.init(params, rng)?;
        }
        if let Some(enc) = &self.encoder {
            enc.init(params, rng)?;
        }
        match &self.decoder {
            Decoder::Uni(c) => c.init(params, rng)?,
            Decoder::Bi(b) => b.init(params, rng)?,
        }
        if let Some(a) = &self.attention {
            a.init(params, rng)?;
        }
        self.out.init(params, rng)
    }

    fn param_count(&self) -> usize {
        self.embed.param_count()
            + self.image.as_ref().map_or(0, Dense::param_count)
            + self.encoder.as_ref().map_or(0, BiLstm::param_count)
            + self.attention.as_ref().map_or(0, AdditiveAttention::param_count)
            + match &self.decoder {
                Decoder::Uni(c) => c.param_count(),
                Decoder::Bi(b) => b.param_count(),
            }
            + self.out.param_count()
    }

    fn cell(&self) -> &LstmCell {
        match &self.decoder {
            Decoder::Uni(c) => c,
            Decoder::Bi(b) => &b.forward,
        }
    }
}

/// Image encoding on a tape: the pooled projection, or the attention memory.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Encoded {
    Pooled { img: Var },
    Spatial { values: Var, keys: Var },
}

/// Per-position outputs of a teacher-forced pass.
#[derive(Clone, Debug)]
pub struct Positions {
    pub logits: Vec<Var>,
    /// Attention weights per position (focalis only).
    pub weights: Vec<Var>,
}

/// Decoder carry between single steps.
#[derive(Clone, Debug)]
pub struct DecodeState {
    architecture: Architecture,
    h: Tensor,
    c: Tensor,
    img: Option<Arc<Tensor>>,
    memory: Option<(Arc<Tensor>, Arc<Tensor>)>,
    /// Tokens consumed so far (the Bi-LSTM decoder re-reads them each step).
    prefix: Vec<usize>,
}

impl DecodeState {
    pub fn prefix(&self) -> &[usize] {
        &self.prefix
    }
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    /// `[V]` unnormalized scores for the next token.
    pub logits: Tensor,
    pub state: DecodeState,
    /// `[S]` attention weights of this step (focalis only).
    pub attention: Option<Tensor>,
}

/// A captioner: its configuration plus named parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptionModel {
    config: ModelConfig,
    params: ParamSet,
}

impl CaptionModel {
    /// Deterministic initialization from `seed`.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Layers::new(&config).init(&mut params, &mut rng)?;
        Ok(Self { config, params })
    }

    /// Reassembles a model from stored parameters, checking every expected
    /// name and shape is present.
    pub fn from_parts(config: ModelConfig, params: ParamSet) -> Result<Self> {
        let template = Self::build(config.clone(), 0)?;
        if template.params.len() != params.len() {
            return Err(Error::Malformed {
                what: "model parameters",
                detail: format!(
                    "expected {} tensors, found {}",
                    template.params.len(),
                    params.len()
                ),
            });
        }
        for (name, t) in template.params.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(Error::Malformed {
                        what: "model parameters",
                        detail: format!("{name} has shape {:?}, expected {:?}", p.shape(), t.shape()),
                    })
                }
                None => {
                    return Err(Error::Malformed {
                        what: "model parameters",
                        detail: format!("missing {name}"),
                    })
                }
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn into_params(self) -> ParamSet {
        self.params
    }

    /// Closed-form parameter count implied by the config.
    pub fn expected_param_count(config: &ModelConfig) -> usize {
        Layers::new(config).param_count()
    }

    fn check_caption(&self, caption: &[usize]) -> Result<()> {
        if caption.len() < 2 {
            return Err(Error::contract(format!(
                "caption needs at least 2 tokens, got {}",
                caption.len()
            )));
        }
        if caption[0] != START || caption[caption.len() - 1] != END {
            return Err(Error::contract("caption must start with <start> and end with <end>"));
        }
        self.check_tokens(caption)
    }

    fn check_tokens(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&t| t >= self.config.vocab_size) {
            Some(&bad) => Err(Error::Index {
                what: "vocabulary",
                index: bad,
                bound: self.config.vocab_size,
            }),
            None => Ok(()),
        }
    }

    pub(crate) fn encode(&self, tape: &mut Tape, bound: &Bound, input: FeatureInput<'_>) -> Result<Encoded> {
        let layers = Layers::new(&self.config);
        let c = self.config.feature_dim;
        let dim = match input {
            FeatureInput::Grid(g) => g.channels(),
            FeatureInput::Vector(v) => v.dim(),
        };
        if dim != c {
            return Err(Error::dim(
                "encode",
                format!("model expects {c} feature channels, got {dim}"),
            ));
        }
        if self.config.architecture.is_pooled() {
            let pooled = match input {
                FeatureInput::Grid(g) => {
                    let grid = tape.constant(g.to_tensor());
                    tape.mean_over_spatial(grid)?
                }
                FeatureInput::Vector(v) => tape.constant(v.to_tensor()),
            };
            let image = layers.image.as_ref().expect("pooled models have an image projection");
            let proj = image.forward(tape, bound, pooled)?;
            return Ok(Encoded::Pooled { img: tape.tanh(proj) });
        }
        let FeatureInput::Grid(g) = input else {
            return Err(Error::contract(
                "focalis attends over a feature grid; a pooled vector has no cells to attend to",
            ));
        };
        let expected = (self.config.grid_h, self.config.grid_w);
        if expected != (Some(g.grid_h()), Some(g.grid_w())) {
            return Err(Error::dim(
                "encode",
                format!(
                    "model expects a {:?}x{:?} grid, got {}x{}",
                    expected.0,
                    expected.1,
                    g.grid_h(),
                    g.grid_w()
                ),
            ));
        }
        let grid = tape.constant(g.to_tensor());
        let encoder = layers.encoder.as_ref().expect("focalis has an encoder");
        let attention = layers.attention.as_ref().expect("focalis has attention");
        let enc = encode_spatial(encoder, tape, bound, grid)?;
        let keys = attention.keys(tape, bound, enc.encoded)?;
        Ok(Encoded::Spatial {
            values: enc.encoded,
            keys,
        })
    }

    /// Teacher-forced logits: position `t` has read `inputs[..=t]`.
    pub(crate) fn positions(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        enc: Encoded,
        inputs: &[usize],
    ) -> Result<Positions> {
        let layers = Layers::new(&self.config);
        let embedded = layers.embed.lookup(tape, bound, inputs)?;
        let rows = BiLstm::rows_of(tape, embedded)?;
        let mut logits = Vec::with_capacity(rows.len());
        let mut weights = Vec::new();
        match (enc, &layers.decoder) {
            (Encoded::Pooled { img }, Decoder::Uni(cell)) => {
                let (hs, _) = cell.run(tape, bound, &rows, (img, img))?;
                for h in hs {
                    let fused = tape.add(h, img)?;
                    logits.push(layers.out.forward(tape, bound, fused)?);
                }
            }
            (Encoded::Pooled { img }, Decoder::Bi(bi)) => {
                let (hs, _) = bi.forward.run(tape, bound, &rows, (img, img))?;
                for (t, h) in hs.into_iter().enumerate() {
                    let hb = self.backward_summary(tape, bound, bi, &rows[..=t], img)?;
                    let fused = tape.concat(&[h, hb, img], 0)?;
                    logits.push(layers.out.forward(tape, bound, fused)?);
                }
            }
            (Encoded::Spatial { values, keys }, Decoder::Uni(cell)) => {
                let attention = layers.attention.as_ref().expect("focalis has attention");
                let (mut h, mut c) = cell.zero_state(tape);
                for x in rows {
                    let att = attention.attend_with_keys(tape, bound, h, values, keys)?;
                    let input = tape.concat(&[x, att.context], 0)?;
                    (h, c) = cell.step(tape, bound, input, h, c)?;
                    logits.push(layers.out.forward(tape, bound, h)?);
                    weights.push(att.weights);
                }
            }
            (Encoded::Spatial { .. }, Decoder::Bi(_)) => {
                unreachable!("spatial encodings only feed unidirectional decoders")
            }
        }
        Ok(Positions { logits, weights })
    }

    /// Final state of the backward cell after reading `rows` in reverse.
    fn backward_summary(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        bi: &BiLstm,
        rows: &[Var],
        img: Var,
    ) -> Result<Var> {
        let reversed: Vec<Var> = rows.iter().rev().copied().collect();
        let (_, (h, _)) = bi.backward.run(tape, bound, &reversed, (img, img))?;
        Ok(h)
    }

    /// Sum of label-smoothed cross-entropies over the caption's `len − 1`
    /// prediction positions.
    pub fn caption_loss(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        input: FeatureInput<'_>,
        caption: &[usize],
        epsilon: f64,
    ) -> Result<Var> {
        self.check_caption(caption)?;
        let enc = self.encode(tape, bound, input)?;
        self.caption_loss_encoded(tape, bound, enc, caption, epsilon)
    }

    pub(crate) fn caption_loss_encoded(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        enc: Encoded,
        caption: &[usize],
        epsilon: f64,
    ) -> Result<Var> {
        self.check_caption(caption)?;
        let n = caption.len() - 1;
        let pos = self.positions(tape, bound, enc, &caption[..n])?;
        let mut terms = Vec::with_capacity(n);
        for (t, &logits) in pos.logits.iter().enumerate() {
            terms.push(label_smoothed_ce(tape, logits, caption[t + 1], epsilon)?);
        }
        let parts = terms
            .iter()
            .map(|&t| tape.reshape(t, vec![1]))
            .collect::<Result<Vec<_>>>()?;
        let stacked = tape.concat(&parts, 0)?;
        Ok(tape.sum(stacked))
    }

    /// Mean per-position loss of one teacher-forced caption.
    pub fn forward_train(&self, input: FeatureInput<'_>, caption: &[usize], epsilon: f64) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let total = self.caption_loss(&mut tape, &bound, input, caption, epsilon)?;
        Ok(tape.value(total).item() / (caption.len() - 1) as f64)
    }

    /// Teacher-forced logits at every position for the inputs `caption[..len-1]`.
    pub fn teacher_forced_logits(&self, input: FeatureInput<'_>, caption: &[usize]) -> Result<Vec<Tensor>> {
        self.check_caption(caption)?;
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let enc = self.encode(&mut tape, &bound, input)?;
        let pos = self.positions(&mut tape, &bound, enc, &caption[..caption.len() - 1])?;
        Ok(pos.logits.iter().map(|&v| tape.value(v).clone()).collect())
    }

    /// Encodes the image and returns the decoder's starting carry.
    pub fn init_state(&self, input: FeatureInput<'_>) -> Result<DecodeState> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let enc = self.encode(&mut tape, &bound, input)?;
        let arch = self.config.architecture;
        Ok(match enc {
            Encoded::Pooled { img } => {
                let img = tape.value(img).clone();
                DecodeState {
                    architecture: arch,
                    h: img.clone(),
                    c: img.clone(),
                    img: Some(Arc::new(img)),
                    memory: None,
                    prefix: Vec::new(),
                }
            }
            Encoded::Spatial { values, keys } => {
                let u = self.config.decoder_units;
                DecodeState {
                    architecture: arch,
                    h: Tensor::zeros(&[u]),
                    c: Tensor::zeros(&[u]),
                    img: None,
                    memory: Some((
                        Arc::new(tape.value(values).clone()),
                        Arc::new(tape.value(keys).clone()),
                    )),
                    prefix: Vec::new(),
                }
            }
        })
    }

    /// Feeds one token and returns next-token logits.
    pub fn decode_step(&self, state: &DecodeState, token: usize) -> Result<StepOutput> {
        let u = self.config.decoder_units;
        if state.architecture != self.config.architecture
            || state.h.shape() != [u]
            || state.c.shape() != [u]
        {
            return Err(Error::contract(format!(
                "decode state from a {} model with {:?} units does not fit this {} model",
                state.architecture,
                state.h.shape(),
                self.config.architecture
            )));
        }
        self.check_tokens(&[token])?;
        let layers = Layers::new(&self.config);
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let h = tape.constant(state.h.clone());
        let c = tape.constant(state.c.clone());
        let mut prefix = state.prefix.clone();
        prefix.push(token);
        let x = layers.embed.lookup_one(&mut tape, &bound, token)?;
        let cell = layers.cell();
        let (logits, h2, c2, attention) = match (&layers.decoder, &state.img, &state.memory) {
            (Decoder::Uni(_), Some(img), None) => {
                let img = tape.shared(img.clone(), false);
                let (h2, c2) = cell.step(&mut tape, &bound, x, h, c)?;
                let fused = tape.add(h2, img)?;
                (layers.out.forward(&mut tape, &bound, fused)?, h2, c2, None)
            }
            (Decoder::Bi(bi), Some(img), None) => {
                let img = tape.shared(img.clone(), false);
                let (h2, c2) = cell.step(&mut tape, &bound, x, h, c)?;
                let embedded = layers.embed.lookup(&mut tape, &bound, &prefix)?;
                let rows = BiLstm::rows_of(&mut tape, embedded)?;
                let hb = self.backward_summary(&mut tape, &bound, bi, &rows, img)?;
                let fused = tape.concat(&[h2, hb, img], 0)?;
                (layers.out.forward(&mut tape, &bound, fused)?, h2, c2, None)
            }
            (Decoder::Uni(_), None, Some((values, keys))) => {
                let attn = layers.attention.as_ref().expect("focalis has attention");
                let values = tape.shared(values.clone(), false);
                let keys = tape.shared(keys.clone(), false);
                let att = attn.attend_with_keys(&mut tape, &bound, h, values, keys)?;
                let input = tape.concat(&[x, att.context], 0)?;
                let (h2, c2) = cell.step(&mut tape, &bound, input, h, c)?;
                let logits = layers.out.forward(&mut tape, &bound, h2)?;
                (logits, h2, c2, Some(tape.value(att.weights).clone()))
            }
            _ => return Err(Error::contract("decode state does not match the model's encoder")),
        };
        Ok(StepOutput {
            logits: tape.value(logits).clone(),
            state: DecodeState {
                architecture: state.architecture,
                h: tape.value(h2).clone(),
                c: tape.value(c2).clone(),
                img: state.img.clone(),
                memory: state.memory.clone(),
                prefix,
            },
            attention,
        })
    }
}
