use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::Serialize;

use super::{DescriptionRecord, Scene};
use crate::error::Result;

const SPATIAL: &[&str] = &[
    "next to", "beside", "left", "right", "front", "behind", "back", "above", "below", "under", "on top",
    "near", "close", "far", "between", "corner", "middle", "center", "against", "facing", "across", "opposite",
    "side", "end", "top", "bottom", "on", "in", "at", "by",
];
const COLOR: &[&str] = &[
    "white", "black", "brown", "gray", "grey", "blue", "red", "green", "yellow", "beige", "tan", "orange",
    "purple", "pink", "silver", "dark", "light", "wooden",
];
const SHAPE: &[&str] = &[
    "square", "rectangular", "round", "circular", "rectangle", "long", "flat", "curved", "oval", "narrow",
    "wide", "thin", "cylindrical", "shaped",
];
const SIZE: &[&str] = &[
    "big", "small", "large", "little", "tall", "short", "huge", "tiny", "bigger", "smaller", "largest",
    "smallest", "biggest", "taller", "shorter",
];

/// Named term lists; a description "hits" a list when any term (possibly
/// multi-word) occurs as a contiguous token run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Lexicon {
    pub lists: BTreeMap<String, Vec<Vec<String>>>,
}

impl Lexicon {
    /// Spatial, color, shape and size lists with common descriptive terms.
    pub fn bundled() -> Self {
        let mut lx = Lexicon::default();
        for (name, terms) in [("spatial", SPATIAL), ("color", COLOR), ("shape", SHAPE), ("size", SIZE)] {
            lx.insert(name, terms.iter().map(|s| s.to_string()));
        }
        lx
    }

    pub fn insert(&mut self, name: &str, terms: impl IntoIterator<Item = String>) {
        let terms = terms
            .into_iter()
            .map(|t| t.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>())
            .filter(|t| !t.is_empty())
            .collect();
        self.lists.insert(name.to_string(), terms);
    }

    /// Replaces (or adds) list `name` with the terms of a one-per-line file.
    pub fn load_list(&mut self, name: &str, path: &Path) -> Result<()> {
        let terms = super::io::read_lexicon(path)?;
        self.insert(name, terms);
        Ok(())
    }

    fn hits(terms: &[Vec<String>], tokens: &[String]) -> bool {
        terms.iter().any(|t| tokens.windows(t.len()).any(|w| w == t.as_slice()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StatsReport {
    pub num_descriptions: usize,
    pub num_scenes: usize,
    pub num_objects: usize,
    pub objects_per_scene: f64,
    pub descriptions_per_scene: f64,
    pub descriptions_per_object: f64,
    pub vocabulary_size: usize,
    pub mean_length: f64,
    /// Percentage of descriptions hitting each lexicon list.
    pub lexicon_hits: BTreeMap<String, f64>,
}

/// Corpus statistics. Scene and object counts are taken over the scenes and
/// objects that descriptions reference, plus any scene passed in `scenes`.
pub fn dataset_stats(records: &[DescriptionRecord], scenes: &[Scene], lexicon: &Lexicon) -> StatsReport {
    let mut scene_ids: HashSet<&str> = records.iter().map(|r| r.scene_id.as_str()).collect();
    scene_ids.extend(scenes.iter().map(|s| s.scene_id.as_str()));
    let objects: HashSet<(&str, u32)> = records.iter().map(|r| (r.scene_id.as_str(), r.object_id)).collect();
    let vocab: HashSet<&str> = records.iter().flat_map(|r| r.tokens.iter().map(String::as_str)).collect();
    let total_tokens: usize = records.iter().map(|r| r.tokens.len()).sum();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let lexicon_hits = lexicon
        .lists
        .iter()
        .map(|(name, terms)| {
            let n = records.iter().filter(|r| Lexicon::hits(terms, &r.tokens)).count();
            (name.clone(), 100.0 * ratio(n, records.len()))
        })
        .collect();
    StatsReport {
        num_descriptions: records.len(),
        num_scenes: scene_ids.len(),
        num_objects: objects.len(),
        objects_per_scene: ratio(objects.len(), scene_ids.len()),
        descriptions_per_scene: ratio(records.len(), scene_ids.len()),
        descriptions_per_object: ratio(records.len(), objects.len()),
        vocabulary_size: vocab.len(),
        mean_length: ratio(total_tokens, records.len()),
        lexicon_hits,
    }
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "descriptions            {}", self.num_descriptions)?;
        writeln!(f, "scenes                  {}", self.num_scenes)?;
        writeln!(f, "objects                 {}", self.num_objects)?;
        writeln!(f, "objects / scene         {:.2}", self.objects_per_scene)?;
        writeln!(f, "descriptions / scene    {:.2}", self.descriptions_per_scene)?;
        writeln!(f, "descriptions / object   {:.2}", self.descriptions_per_object)?;
        writeln!(f, "vocabulary size         {}", self.vocabulary_size)?;
        writeln!(f, "mean length (tokens)    {:.2}", self.mean_length)?;
        for (name, pct) in &self.lexicon_hits {
            writeln!(f, "{:<24}{:.1}%", format!("{name} terms"), pct)?;
        }
        Ok(())
    }
}
