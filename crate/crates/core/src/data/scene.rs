use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub class: String,
    pub color: String,
    pub row: usize,
    pub col: usize,
}

impl SceneObject {
    /// Key the feature source embeds: `"<color> <class>"`.
    pub fn identity(&self) -> String {
        format!("{} {}", self.color, self.class)
    }
}

/// Objects placed on a grid, at most one per cell.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub grid_h: usize,
    pub grid_w: usize,
    pub objects: Vec<SceneObject>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid_h == 0 || self.grid_w == 0 {
            return Err(Error::Config(format!(
                "scene grid {}x{} has a zero extent",
                self.grid_h, self.grid_w
            )));
        }
        let mut taken = vec![false; self.grid_h * self.grid_w];
        for o in &self.objects {
            if o.row >= self.grid_h || o.col >= self.grid_w {
                return Err(Error::Config(format!(
                    "{} at ({}, {}) is outside the {}x{} grid",
                    o.identity(),
                    o.row,
                    o.col,
                    self.grid_h,
                    self.grid_w
                )));
            }
            let cell = o.row * self.grid_w + o.col;
            if std::mem::replace(&mut taken[cell], true) {
                return Err(Error::Config(format!(
                    "two objects share cell ({}, {})",
                    o.row, o.col
                )));
            }
        }
        Ok(())
    }

    /// Objects sorted by raster position.
    pub fn raster_objects(&self) -> Vec<&SceneObject> {
        let mut objs: Vec<&SceneObject> = self.objects.iter().collect();
        objs.sort_by_key(|o| (o.row, o.col));
        objs
    }
}

const ROW_WORDS: [&str; 3] = ["top", "middle", "bottom"];
const COL_WORDS: [&str; 3] = ["left", "center", "right"];

/// One of nine region phrases for a cell: the grid is cut into thirds along
/// each axis; the middle row and center column drop their word, and the
/// middle-center region reads "center".
pub fn position_phrase(row: usize, col: usize, grid_h: usize, grid_w: usize) -> Vec<&'static str> {
    let band = ROW_WORDS[row * 3 / grid_h];
    let side = COL_WORDS[col * 3 / grid_w];
    match (band, side) {
        ("middle", "center") => vec!["center"],
        ("middle", s) => vec![s],
        (b, "center") => vec![b],
        (b, s) => vec![b, s],
    }
}

fn located(o: &SceneObject, grid_h: usize, grid_w: usize) -> Vec<String> {
    position_phrase(o.row, o.col, grid_h, grid_w)
        .into_iter()
        .chain(["a", o.color.as_str(), o.class.as_str()])
        .map(str::to_string)
        .collect()
}

/// Reference captions for a 1- or 2-object scene, as tokens.
///
/// Every caption leads with a position phrase or pairs it tightly with the
/// object, so most n-grams depend on where things are:
///
/// * one object: `top left a red square`, `a red square at top left`
/// * two objects (raster order A, B): `<A> and <B>`, `<B> and <A>`
pub fn scene_captions(scene: &SceneSpec) -> Result<Vec<Vec<String>>> {
    scene.validate()?;
    let (h, w) = (scene.grid_h, scene.grid_w);
    let objs = scene.raster_objects();
    match objs.as_slice() {
        [o] => {
            let mut second: Vec<String> = ["a", o.color.as_str(), o.class.as_str(), "at"]
                .into_iter()
                .map(str::to_string)
                .collect();
            second.extend(position_phrase(o.row, o.col, h, w).into_iter().map(str::to_string));
            Ok(vec![located(o, h, w), second])
        }
        [a, b] => {
            let (la, lb) = (located(a, h, w), located(b, h, w));
            let join = |x: &[String], y: &[String]| {
                let mut v = x.to_vec();
                v.push("and".into());
                v.extend_from_slice(y);
                v
            };
            Ok(vec![join(&la, &lb), join(&lb, &la)])
        }
        _ => Err(Error::Config(format!(
            "caption templates cover 1 or 2 objects, scene has {}",
            objs.len()
        ))),
    }
}

/// Parameters of the synthetic captioned-scene generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub n_scenes: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub classes: Vec<String>,
    pub colors: Vec<String>,
    /// Objects per scene are drawn uniformly from `1..=max_objects` (≤ 2).
    pub max_objects: usize,
    /// References kept per scene (1 or 2).
    pub references: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_scenes: 500,
            grid_h: 6,
            grid_w: 6,
            classes: vec!["square".into(), "circle".into(), "triangle".into()],
            colors: vec!["red".into(), "green".into(), "blue".into()],
            max_objects: 2,
            references: 2,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_scenes == 0 {
            return Err(Error::Config("n_scenes must be at least 1".into()));
        }
        if self.classes.is_empty() || self.colors.is_empty() {
            return Err(Error::Config("need at least one class and one color".into()));
        }
        if !(1..=2).contains(&self.max_objects) {
            return Err(Error::Config(format!(
                "max_objects must be 1 or 2, got {}",
                self.max_objects
            )));
        }
        if self.max_objects > self.grid_h * self.grid_w {
            return Err(Error::Config(format!(
                "{} objects cannot fit a {}x{} grid",
                self.max_objects, self.grid_h, self.grid_w
            )));
        }
        if !(1..=2).contains(&self.references) {
            return Err(Error::Config(format!(
                "references must be 1 or 2, got {}",
                self.references
            )));
        }
        Ok(())
    }

    /// Deterministic scene layouts for this config.
    pub fn scenes(&self) -> Result<Vec<SceneSpec>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let cells = self.grid_h * self.grid_w;
        (0..self.n_scenes)
            .map(|_| {
                let k = rng.gen_range(1..=self.max_objects);
                let mut picked = sample(&mut rng, cells, k).into_vec();
                picked.sort_unstable();
                let objects = picked
                    .into_iter()
                    .map(|cell| SceneObject {
                        class: self.classes[rng.gen_range(0..self.classes.len())].clone(),
                        color: self.colors[rng.gen_range(0..self.colors.len())].clone(),
                        row: cell / self.grid_w,
                        col: cell % self.grid_w,
                    })
                    .collect();
                Ok(SceneSpec {
                    grid_h: self.grid_h,
                    grid_w: self.grid_w,
                    objects,
                })
            })
            .collect()
    }

    /// Two scenes with the same single object in opposite corners: identical
    /// pooled features, different references.
    pub fn position_witness(&self) -> Result<(SceneSpec, SceneSpec)> {
        self.validate()?;
        if self.grid_h < 3 && self.grid_w < 3 {
            return Err(Error::Config("grid too small to separate positions".into()));
        }
        let at = |row, col| SceneSpec {
            grid_h: self.grid_h,
            grid_w: self.grid_w,
            objects: vec![SceneObject {
                class: self.classes[0].clone(),
                color: self.colors[0].clone(),
                row,
                col,
            }],
        };
        Ok((at(0, 0), at(self.grid_h - 1, self.grid_w - 1)))
    }
}
