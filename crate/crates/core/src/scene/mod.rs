//! Scenes, annotations, descriptions and everything that turns them into
//! network input.

mod augment;
mod features;
pub mod io;
mod stats;
pub mod synth;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Point3};

pub use augment::Augmentation;
pub use features::{assemble_features, FeatureConfig, FeatureLayout, PointMatrix};
pub use stats::{dataset_stats, Lexicon, StatsReport};

pub const NUM_CLASSES: usize = 18;

/// Benchmark classes in evaluation-table order.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "cabinet",
    "bed",
    "chair",
    "sofa",
    "table",
    "door",
    "window",
    "bookshelf",
    "picture",
    "counter",
    "desk",
    "curtain",
    "refrigerator",
    "shower curtain",
    "toilet",
    "sink",
    "bathtub",
    "others",
];

pub const OTHERS: usize = 17;

/// Raw object names that map onto a benchmark class other than by exact name.
const RAW_NAME_ALIASES: &[(&str, usize)] = &[
    ("kitchen cabinet", 0),
    ("kitchen cabinets", 0),
    ("cabinets", 0),
    ("file cabinet", 0),
    ("dresser", 0),
    ("wardrobe", 0),
    ("armchair", 2),
    ("office chair", 2),
    ("dining chair", 2),
    ("stool", 2),
    ("couch", 3),
    ("sofa chair", 3),
    ("loveseat", 3),
    ("coffee table", 4),
    ("end table", 4),
    ("dining table", 4),
    ("round table", 4),
    ("doors", 5),
    ("bookshelves", 7),
    ("bookcase", 7),
    ("shelf", 7),
    ("kitchen counter", 9),
    ("curtains", 11),
    ("fridge", 12),
    ("mini fridge", 12),
    ("bathroom sink", 15),
    ("kitchen sink", 15),
    ("tub", 16),
];

/// Maps a free-text object name onto one of the 18 classes; unknown names
/// fall into "others".
pub fn class_from_raw_name(raw: &str) -> usize {
    let norm = raw.trim().to_lowercase().replace('_', " ");
    if let Some(i) = CLASS_NAMES.iter().position(|&c| c == norm) {
        return i;
    }
    RAW_NAME_ALIASES
        .iter()
        .find(|(n, _)| *n == norm)
        .map_or(OTHERS, |&(_, c)| c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectAnnotation {
    pub object_id: u32,
    pub raw_name: String,
    pub sem_class: usize,
    pub bbox: Aabb,
}

/// Per-point appearance channels, row-major `N × dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct Appearance {
    pub dim: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub scene_id: String,
    pub positions: Vec<Point3>,
    /// 0–255 per channel.
    pub colors: Vec<[f64; 3]>,
    pub normals: Option<Vec<Point3>>,
    pub appearance: Option<Appearance>,
    pub objects: Vec<ObjectAnnotation>,
}

impl Scene {
    pub fn num_points(&self) -> usize {
        self.positions.len()
    }

    pub fn object(&self, object_id: u32) -> Option<&ObjectAnnotation> {
        self.objects.iter().find(|o| o.object_id == object_id)
    }

    /// Number of objects of `class` in the scene.
    pub fn class_count(&self, class: usize) -> usize {
        self.objects.iter().filter(|o| o.sem_class == class).count()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        let bad = |what: String| Err(Error::InvalidArgument(format!("scene {}: {what}", self.scene_id)));
        if n == 0 {
            return bad("no points".into());
        }
        if self.colors.len() != n {
            return bad(format!("{} colors for {n} points", self.colors.len()));
        }
        if let Some(normals) = &self.normals {
            if normals.len() != n {
                return bad(format!("{} normals for {n} points", normals.len()));
            }
            if let Some(i) = normals.iter().position(|v| ((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() - 1.0).abs() > 1e-3) {
                return bad(format!("normal {i} is not unit length"));
            }
        }
        if let Some(app) = &self.appearance {
            if app.values.len() != n * app.dim {
                return bad(format!("appearance has {} values for {n}×{}", app.values.len(), app.dim));
            }
        }
        if self.positions.iter().flatten().any(|v| !v.is_finite()) {
            return bad("non-finite coordinate".into());
        }
        let mut ids = HashSet::new();
        for o in &self.objects {
            if !ids.insert(o.object_id) {
                return bad(format!("duplicate object id {}", o.object_id));
            }
            if o.sem_class >= NUM_CLASSES {
                return bad(format!("object {} has class {}", o.object_id, o.sem_class));
            }
            if o.bbox.volume() <= 0.0 {
                return bad(format!("object {} has an empty box", o.object_id));
            }
            if !self.positions.iter().any(|p| o.bbox.contains(p)) {
                return bad(format!("object {} contains no points", o.object_id));
            }
        }
        Ok(())
    }
}

/// One description of one object: the unit of training and evaluation.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DescriptionRecord {
    pub scene_id: String,
    pub object_id: u32,
    pub ann_id: u32,
    pub object_name: String,
    pub description: String,
    pub tokens: Vec<String>,
}

impl DescriptionRecord {
    /// Key identifying the record across prediction files.
    pub fn key(&self) -> (String, u32, u32) {
        (self.scene_id.clone(), self.object_id, self.ann_id)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

impl SplitSpec {
    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for id in self.train.iter().chain(&self.val).chain(&self.test) {
            if !seen.insert(id) {
                return Err(Error::InvalidArgument(format!("scene {id} appears in more than one split")));
            }
        }
        Ok(())
    }
}

/// Scenes plus their descriptions and split assignment.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub scenes: Vec<Scene>,
    pub records: Vec<DescriptionRecord>,
    pub split: SplitSpec,
}

impl Dataset {
    pub fn scene_index(&self) -> HashMap<&str, usize> {
        self.scenes.iter().enumerate().map(|(i, s)| (s.scene_id.as_str(), i)).collect()
    }

    pub fn scene(&self, id: &str) -> Option<&Scene> {
        self.scenes.iter().find(|s| s.scene_id == id)
    }

    /// Records whose scene belongs to `split`.
    pub fn records_in(&self, split: Split) -> Vec<&DescriptionRecord> {
        let ids: HashSet<&String> = self.split.ids(split).iter().collect();
        self.records.iter().filter(|r| ids.contains(&r.scene_id)).collect()
    }

    pub fn scenes_in(&self, split: Split) -> Vec<&Scene> {
        let ids: HashSet<&String> = self.split.ids(split).iter().collect();
        self.scenes.iter().filter(|s| ids.contains(&s.scene_id)).collect()
    }

    /// Checks split disjointness and that every record resolves to a scene
    /// object.
    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        let index = self.scene_index();
        for r in &self.records {
            let scene = index
                .get(r.scene_id.as_str())
                .map(|&i| &self.scenes[i])
                .ok_or_else(|| Error::InvalidArgument(format!("record references unknown scene {}", r.scene_id)))?;
            if scene.object(r.object_id).is_none() {
                return Err(Error::InvalidArgument(format!(
                    "record {}/{} references unknown object {}",
                    r.scene_id, r.ann_id, r.object_id
                )));
            }
            if r.tokens.is_empty() {
                return Err(Error::Empty(format!("tokens of record {}/{}/{}", r.scene_id, r.object_id, r.ann_id)));
            }
        }
        Ok(())
    }
}
