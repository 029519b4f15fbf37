use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::ScoreKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    /// Pooled vector, unidirectional LSTM, additive fusion.
    Genesis,
    /// Pooled vector, Bi-LSTM decoder, concat fusion.
    Contexta,
    /// Contexta wiring over a richer (wider) pooled feature.
    Clarity,
    /// Bi-LSTM spatial encoder, additive attention, unidirectional decoder.
    Focalis,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::Genesis,
        Architecture::Contexta,
        Architecture::Clarity,
        Architecture::Focalis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Genesis => "genesis",
            Architecture::Contexta => "contexta",
            Architecture::Clarity => "clarity",
            Architecture::Focalis => "focalis",
        }
    }

    /// Pools the grid to a vector before decoding.
    pub fn is_pooled(self) -> bool {
        self != Architecture::Focalis
    }

    pub fn is_bidirectional(self) -> bool {
        matches!(self, Architecture::Contexta | Architecture::Clarity)
    }

    pub fn default_fusion(self) -> Fusion {
        match self {
            Architecture::Genesis | Architecture::Focalis => Fusion::Add,
            Architecture::Contexta | Architecture::Clarity => Fusion::Concat,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown architecture {s:?}; expected one of genesis, contexta, clarity, focalis"
                ))
            })
    }
}

/// How the image projection meets the decoder output before the vocabulary
/// projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    Add,
    Concat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub decoder_units: usize,
    /// Channels `C` of the incoming features.
    pub feature_dim: usize,
    /// Grid extents; required by focalis, ignored by the pooled models.
    pub grid_h: Option<usize>,
    pub grid_w: Option<usize>,
    pub attn_dim: usize,
    /// Units per direction of the focalis spatial encoder.
    pub encoder_units: usize,
    /// Unused by focalis.
    pub fusion: Fusion,
    #[serde(default)]
    pub score: ScoreKind,
}

impl ModelConfig {
    /// Defaults: 256 embedding dims, 256 decoder/encoder units, 256 attention
    /// dims, the architecture's own fusion, additive scoring.
    pub fn new(architecture: Architecture, vocab_size: usize, feature_dim: usize) -> Self {
        Self {
            architecture,
            vocab_size,
            embed_dim: 256,
            decoder_units: 256,
            feature_dim,
            grid_h: None,
            grid_w: None,
            attn_dim: 256,
            encoder_units: 256,
            fusion: architecture.default_fusion(),
            score: ScoreKind::Additive,
        }
    }

    pub fn with_grid(mut self, grid_h: usize, grid_w: usize) -> Self {
        self.grid_h = Some(grid_h);
        self.grid_w = Some(grid_w);
        self
    }

    /// Sets embedding, decoder, encoder and attention widths together.
    pub fn with_widths(mut self, embed: usize, units: usize, attn: usize) -> Self {
        self.embed_dim = embed;
        self.decoder_units = units;
        self.encoder_units = units;
        self.attn_dim = attn;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("decoder_units", self.decoder_units),
            ("feature_dim", self.feature_dim),
            ("attn_dim", self.attn_dim),
            ("encoder_units", self.encoder_units),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        let arch = self.architecture;
        match arch {
            Architecture::Genesis if self.fusion != Fusion::Add => {
                return Err(Error::Config("genesis fuses by addition".into()));
            }
            Architecture::Contexta | Architecture::Clarity if self.fusion != Fusion::Concat => {
                return Err(Error::Config(format!("{arch} fuses by concatenation")));
            }
            Architecture::Focalis => match (self.grid_h, self.grid_w) {
                (Some(h), Some(w)) if h > 0 && w > 0 => {}
                _ => return Err(Error::Config("focalis needs positive grid_h and grid_w".into())),
            },
            _ => {}
        }
        Ok(())
    }
}
