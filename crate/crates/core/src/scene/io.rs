//! On-disk formats for scenes, descriptions, splits and lexicons.
//!
//! A scene file is a JSON object whose point arrays are little-endian `f32`
//! blobs, either inline (`{"base64": "..."}`) or in a side file
//! (`{"path": "positions.bin"}`, relative to the scene file). Description
//! files use the field names of the public referring-expression annotations, either as
//! a JSON array or one JSON object per line.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Deserializer, Serialize};

use super::{Appearance, Dataset, DescriptionRecord, ObjectAnnotation, Scene, SplitSpec};
use crate::error::{format_err, Error, Result};
use crate::geometry::{Aabb, Point3};
use crate::language::tokenize;

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Blob {
    Inline { base64: String },
    External { path: String },
}

#[derive(Serialize, Deserialize)]
struct BoxJson {
    cx: f64,
    cy: f64,
    cz: f64,
    rx: f64,
    ry: f64,
    rz: f64,
}

#[derive(Serialize, Deserialize)]
struct ObjectJson {
    object_id: u32,
    raw_name: String,
    sem_class: usize,
    #[serde(rename = "box")]
    bbox: BoxJson,
}

#[derive(Serialize, Deserialize)]
struct SceneJson {
    scene_id: String,
    num_points: usize,
    #[serde(default)]
    appearance_dim: usize,
    positions: Blob,
    colors: Blob,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    normals: Option<Blob>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    appearance: Option<Blob>,
    objects: Vec<ObjectJson>,
}

fn encode_f32(values: impl Iterator<Item = f64>) -> Blob {
    let mut bytes = Vec::new();
    for v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Blob::Inline {
        base64: STANDARD.encode(bytes),
    }
}

fn decode_f32(blob: &Blob, base_dir: &Path, expected: usize, what: &'static str) -> Result<Vec<f64>> {
    let bytes = match blob {
        Blob::Inline { base64 } => STANDARD
            .decode(base64.as_bytes())
            .map_err(|e| format_err("scene file", format!("{what}: {e}")))?,
        Blob::External { path } => fs::read(base_dir.join(path))?,
    };
    if bytes.len() != expected * 4 {
        return Err(format_err(
            "scene file",
            format!("{what}: expected {expected} floats, found {} bytes", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn triples(v: Vec<f64>) -> Vec<Point3> {
    v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

pub fn scene_to_json(scene: &Scene) -> Result<String> {
    let json = SceneJson {
        scene_id: scene.scene_id.clone(),
        num_points: scene.num_points(),
        appearance_dim: scene.appearance.as_ref().map_or(0, |a| a.dim),
        positions: encode_f32(scene.positions.iter().flatten().copied()),
        colors: encode_f32(scene.colors.iter().flatten().copied()),
        normals: scene.normals.as_ref().map(|n| encode_f32(n.iter().flatten().copied())),
        appearance: scene.appearance.as_ref().map(|a| encode_f32(a.values.iter().copied())),
        objects: scene
            .objects
            .iter()
            .map(|o| ObjectJson {
                object_id: o.object_id,
                raw_name: o.raw_name.clone(),
                sem_class: o.sem_class,
                bbox: BoxJson {
                    cx: o.bbox.center[0],
                    cy: o.bbox.center[1],
                    cz: o.bbox.center[2],
                    rx: o.bbox.size[0],
                    ry: o.bbox.size[1],
                    rz: o.bbox.size[2],
                },
            })
            .collect(),
    };
    Ok(serde_json::to_string(&json)?)
}

/// Parses a scene; external blob paths resolve against `base_dir`.
pub fn scene_from_json(text: &str, base_dir: &Path) -> Result<Scene> {
    let json: SceneJson = serde_json::from_str(text)?;
    let n = json.num_points;
    let positions = triples(decode_f32(&json.positions, base_dir, 3 * n, "positions")?);
    let colors = triples(decode_f32(&json.colors, base_dir, 3 * n, "colors")?);
    let normals = match &json.normals {
        Some(b) => Some(triples(decode_f32(b, base_dir, 3 * n, "normals")?)),
        None => None,
    };
    let appearance = match &json.appearance {
        Some(b) => Some(Appearance {
            dim: json.appearance_dim,
            values: decode_f32(b, base_dir, json.appearance_dim * n, "appearance")?,
        }),
        None => None,
    };
    let objects = json
        .objects
        .into_iter()
        .map(|o| {
            Ok(ObjectAnnotation {
                object_id: o.object_id,
                raw_name: o.raw_name,
                sem_class: o.sem_class,
                bbox: Aabb::new([o.bbox.cx, o.bbox.cy, o.bbox.cz], [o.bbox.rx, o.bbox.ry, o.bbox.rz])?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Scene {
        scene_id: json.scene_id,
        positions,
        colors,
        normals,
        appearance,
        objects,
    })
}

pub fn write_scene(scene: &Scene, path: &Path) -> Result<()> {
    fs::write(path, scene_to_json(scene)?)?;
    Ok(())
}

pub fn read_scene(path: &Path) -> Result<Scene> {
    let text = fs::read_to_string(path)?;
    scene_from_json(&text, path.parent().unwrap_or(Path::new(".")))
}

fn id_from_str_or_int<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<u32, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        Int(u32),
        Str(String),
    }
    match Id::deserialize(d)? {
        Id::Int(v) => Ok(v),
        Id::Str(s) => s.trim().parse().map_err(serde::de::Error::custom),
    }
}

#[derive(Serialize, Deserialize)]
struct RecordJson {
    scene_id: String,
    #[serde(deserialize_with = "id_from_str_or_int")]
    object_id: u32,
    #[serde(deserialize_with = "id_from_str_or_int")]
    ann_id: u32,
    object_name: String,
    description: String,
    #[serde(default)]
    token: Vec<String>,
}

impl From<RecordJson> for DescriptionRecord {
    fn from(r: RecordJson) -> Self {
        let tokens = if r.token.is_empty() {
            tokenize(&r.description)
        } else {
            r.token.iter().map(|t| t.to_lowercase()).collect()
        };
        DescriptionRecord {
            scene_id: r.scene_id,
            object_id: r.object_id,
            ann_id: r.ann_id,
            object_name: r.object_name,
            description: r.description,
            tokens,
        }
    }
}

fn record_to_json(r: &DescriptionRecord) -> serde_json::Value {
    // ids are written as strings, like the released annotations
    serde_json::json!({
        "scene_id": r.scene_id,
        "object_id": r.object_id.to_string(),
        "object_name": r.object_name,
        "ann_id": r.ann_id.to_string(),
        "description": r.description,
        "token": r.tokens,
    })
}

/// Parses a description file: a JSON array of records or JSON lines.
pub fn parse_descriptions(text: &str) -> Result<Vec<DescriptionRecord>> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        let records: Vec<RecordJson> = serde_json::from_str(trimmed)?;
        return Ok(records.into_iter().map(Into::into).collect());
    }
    trimmed
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str::<RecordJson>(l)?.into()))
        .collect()
}

pub fn read_descriptions(path: &Path) -> Result<Vec<DescriptionRecord>> {
    parse_descriptions(&fs::read_to_string(path)?)
}

/// Writes one JSON record per line.
pub fn write_descriptions(records: &[DescriptionRecord], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, &record_to_json(r))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// One term per line; blank lines and `#` comments skipped; lowercased.
pub fn read_lexicon(path: &Path) -> Result<Vec<String>> {
    let f = BufReader::new(fs::File::open(path)?);
    let mut terms = Vec::new();
    for line in f.lines() {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            terms.push(t.to_lowercase());
        }
    }
    Ok(terms)
}

const SCENE_DIR: &str = "scenes";
const DESCRIPTIONS: &str = "descriptions.jsonl";
const SPLIT: &str = "split.json";

fn scene_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(SCENE_DIR).join(format!("{id}.json"))
}

/// Writes `scenes/<id>.json`, `descriptions.jsonl` and `split.json` under `dir`.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join(SCENE_DIR))?;
    for s in &ds.scenes {
        write_scene(s, &scene_path(dir, &s.scene_id))?;
    }
    write_descriptions(&ds.records, &dir.join(DESCRIPTIONS))?;
    fs::write(dir.join(SPLIT), serde_json::to_string_pretty(&ds.split)?)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let split: SplitSpec = serde_json::from_str(&fs::read_to_string(dir.join(SPLIT))?)?;
    let records = read_descriptions(&dir.join(DESCRIPTIONS))?;
    let scenes = split
        .train
        .iter()
        .chain(&split.val)
        .chain(&split.test)
        .map(|id| read_scene(&scene_path(dir, id)))
        .collect::<Result<Vec<_>>>()?;
    let ds = Dataset { scenes, records, split };
    ds.validate()?;
    Ok(ds)
}

/// Loads a single scene, failing if it does not validate.
pub fn load_scene_checked(path: &Path) -> Result<Scene> {
    let s = read_scene(path)?;
    s.validate()?;
    Ok(s)
}

impl From<base64::DecodeError> for Error {
    fn from(e: base64::DecodeError) -> Self {
        format_err("base64", e.to_string())
    }
}
