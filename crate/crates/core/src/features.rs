//! Visual feature sources standing in for a CNN backbone: binary grid files
//! and a deterministic synthetic scene renderer.
//!
//! Feature file layout (little-endian):
//!
//! ```text
//! b"CFG1" | grid_h: u32 | grid_w: u32 | channels: u32 | grid_h·grid_w·channels × f32
//! ```

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Tensor};
use crate::data::SceneSpec;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"CFG1";
const HEADER_LEN: usize = 16;

/// `H×W×C` spatial features, cells in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    grid_h: usize,
    grid_w: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureGrid {
    pub fn new(grid_h: usize, grid_w: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if grid_h == 0 || grid_w == 0 || channels == 0 {
            return Err(Error::dim(
                "feature grid",
                format!("zero extent in {grid_h}x{grid_w}x{channels}"),
            ));
        }
        let expected = grid_h * grid_w * channels;
        if data.len() != expected {
            return Err(Error::Truncated {
                what: "feature grid",
                expected,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Malformed {
                what: "feature grid",
                detail: "non-finite value".into(),
            });
        }
        Ok(Self {
            grid_h,
            grid_w,
            channels,
            data,
        })
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn cells(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.grid_w + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// The grid as an `[H×W×C]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.grid_h, self.grid_w, self.channels],
            self.data.iter().map(|&v| f64::from(v)).collect(),
        )
        .expect("validated extents")
    }

    /// Reorders cells: output cell `i` is input cell `perm[i]` (raster indices).
    pub fn permute_cells(&self, perm: &[usize]) -> Result<Self> {
        let n = self.cells();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::contract(format!("not a permutation of {n} cells")));
        }
        let c = self.channels;
        let data = perm
            .iter()
            .flat_map(|&p| self.data[p * c..(p + 1) * c].iter().copied())
            .collect();
        Ok(Self {
            data,
            ..self.clone()
        })
    }

    /// Global average pooling.
    pub fn to_vector(&self) -> FeatureVector {
        let mut tape = Tape::new();
        let grid = tape.constant(self.to_tensor());
        let pooled = tape
            .mean_over_spatial(grid)
            .expect("a feature grid is always rank 3");
        FeatureVector {
            data: tape.value(pooled).data().to_vec(),
        }
    }
}

/// A pooled `C`-dimensional image summary.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    data: Vec<f64>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::vector(self.data.clone())
    }
}

pub fn to_vector(grid: &FeatureGrid) -> FeatureVector {
    grid.to_vector()
}

pub fn encode_features(grid: &FeatureGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * grid.data.len());
    out.extend_from_slice(FEATURE_MAGIC);
    for extent in [grid.grid_h, grid.grid_w, grid.channels] {
        out.extend_from_slice(&(extent as u32).to_le_bytes());
    }
    for v in &grid.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureGrid> {
    let malformed = |detail: String| Error::Malformed {
        what: "feature header",
        detail,
    };
    if bytes.len() < HEADER_LEN {
        return Err(malformed(format!("{} bytes, header needs {HEADER_LEN}", bytes.len())));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(malformed(format!("bad magic {:?}", &bytes[..4])));
    }
    let extent = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (h, w, c) = (extent(0), extent(1), extent(2));
    if h == 0 || w == 0 || c == 0 {
        return Err(malformed(format!("zero extent in {h}x{w}x{c}")));
    }
    let expected = h * w * c;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() % 4 != 0 || payload.len() / 4 != expected {
        return Err(Error::Truncated {
            what: "feature payload",
            expected,
            actual: payload.len() / 4,
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    FeatureGrid::new(h, w, c, data)
}

pub fn save_features(path: impl AsRef<Path>, grid: &FeatureGrid) -> Result<()> {
    fs::write(path, encode_features(grid))?;
    Ok(())
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    decode_features(&bytes)
}

/// Deterministic synthetic backbone: every cell carries a fixed embedding of
/// whatever occupies it, plus isotropic gaussian noise.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSource {
    pub channels: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Identity used for empty cells.
pub const BACKGROUND: &str = "<background>";

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl FeatureSource {
    pub fn new(channels: usize, noise_sigma: f64, seed: u64) -> Self {
        Self {
            channels,
            noise_sigma,
            seed,
        }
    }

    /// Embedding of an object identity; depends only on the identity, the
    /// channel count and the source seed.
    pub fn embedding(&self, identity: &str) -> Vec<f64> {
        let key = fnv1a(identity.as_bytes()) ^ self.seed.rotate_left(17) ^ (self.channels as u64).rotate_left(41);
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        (0..self.channels).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    /// Renders `scene`; `noise_seed` selects the noise draw.
    pub fn render(&self, scene: &SceneSpec, noise_seed: u64) -> Result<FeatureGrid> {
        scene.validate()?;
        let (h, w, c) = (scene.grid_h, scene.grid_w, self.channels);
        let background = self.embedding(BACKGROUND);
        let mut cells: Vec<Vec<f64>> = vec![background; h * w];
        for obj in &scene.objects {
            cells[obj.row * w + obj.col] = self.embedding(&obj.identity());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ noise_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut data = Vec::with_capacity(h * w * c);
        for cell in cells {
            for v in cell {
                let noise: f64 = if self.noise_sigma > 0.0 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    self.noise_sigma * z
                } else {
                    0.0
                };
                data.push((v + noise) as f32);
            }
        }
        FeatureGrid::new(h, w, c, data)
    }
}

/// Renders `scene` with a fresh [`FeatureSource`].
pub fn synth_scene_features(
    scene: &SceneSpec,
    channels: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<FeatureGrid> {
    FeatureSource::new(channels, noise_sigma, seed).render(scene, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SceneObject;

    fn scene(objects: Vec<SceneObject>) -> SceneSpec {
        SceneSpec {
            grid_h: 4,
            grid_w: 5,
            objects,
        }
    }

    fn obj(class: &str, color: &str, row: usize, col: usize) -> SceneObject {
        SceneObject {
            class: class.into(),
            color: color.into(),
            row,
            col,
        }
    }

    #[test]
    fn empty_scene_is_all_background() {
        let g = synth_scene_features(&scene(vec![]), 6, 0.0, 1).unwrap();
        let bg = g.cell(0, 0).to_vec();
        for r in 0..4 {
            for c in 0..5 {
                assert_eq!(g.cell(r, c), bg.as_slice());
            }
        }
    }

    #[test]
    fn one_object_changes_exactly_one_cell() {
        let g = synth_scene_features(&scene(vec![obj("square", "red", 2, 3)]), 6, 0.0, 1).unwrap();
        let bg = g.cell(0, 0).to_vec();
        let differing: Vec<_> = (0..4)
            .flat_map(|r| (0..5).map(move |c| (r, c)))
            .filter(|&(r, c)| g.cell(r, c) != bg.as_slice())
            .collect();
        assert_eq!(differing, vec![(2, 3)]);
    }

    #[test]
    fn rendering_is_deterministic() {
        let s = scene(vec![obj("circle", "blue", 1, 1), obj("square", "red", 3, 0)]);
        let a = synth_scene_features(&s, 8, 0.3, 42).unwrap();
        let b = synth_scene_features(&s, 8, 0.3, 42).unwrap();
        assert_eq!(a, b);
        let c = synth_scene_features(&s, 8, 0.3, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn out_of_bounds_object_is_rejected() {
        assert!(synth_scene_features(&scene(vec![obj("square", "red", 4, 0)]), 3, 0.0, 0).is_err());
    }

    #[test]
    fn pooling_hides_position_but_not_identity() {
        let a = synth_scene_features(&scene(vec![obj("square", "red", 0, 0)]), 6, 0.0, 7).unwrap();
        let b = synth_scene_features(&scene(vec![obj("square", "red", 3, 4)]), 6, 0.0, 7).unwrap();
        let c = synth_scene_features(&scene(vec![obj("circle", "red", 0, 0)]), 6, 0.0, 7).unwrap();
        assert_ne!(a, b);
        assert_eq!(a.to_vector(), b.to_vector());
        assert_ne!(a.to_vector(), c.to_vector());

        let constant = FeatureGrid::new(2, 2, 3, vec![0.25; 12]).unwrap();
        assert_eq!(constant.to_vector().data(), &[0.25; 3]);
    }

    #[test]
    fn codec_round_trip_and_errors() {
        let g = synth_scene_features(&scene(vec![obj("square", "green", 1, 2)]), 3, 0.5, 9).unwrap();
        let bytes = encode_features(&g);
        assert_eq!(&bytes[..4], b"CFG1");
        assert_eq!(decode_features(&bytes).unwrap(), g);

        let err = decode_features(&bytes[..bytes.len() - 4]).unwrap_err();
        assert!(
            matches!(err, Error::Truncated { expected: 60, actual: 59, .. }),
            "{err}"
        );
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_features(&bad), Err(Error::Malformed { .. })));
        assert!(matches!(decode_features(&bytes[..10]), Err(Error::Malformed { .. })));
    }

    #[test]
    fn ten_by_ten_header_implies_payload_size() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"CFG1");
        for e in [10u32, 10, 1536] {
            bytes.extend_from_slice(&e.to_le_bytes());
        }
        match decode_features(&bytes) {
            Err(Error::Truncated { expected, actual, .. }) => {
                assert_eq!(expected, 153_600);
                assert_eq!(actual, 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_distinct() {
        assert!(matches!(
            load_features("/nonexistent/grid.cfg"),
            Err(Error::MissingFile(_))
        ));
    }
}
