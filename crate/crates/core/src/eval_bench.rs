//! Evaluation protocol: stratified Acc@kIoU, detection mAP, baselines,
//! seed-averaged evaluation, description truncation and the feature
//! ablation grid.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::detector::DetectorOutput;
use crate::error::{Error, Result};
use crate::geometry::{iou3d, Aabb};
use crate::grounding::Prediction;
use crate::language::tokenize;
use crate::model::RefModel;
use crate::par::{map_indexed, Execution};
use crate::scene::{class_from_raw_name, Dataset, DescriptionRecord, FeatureConfig, Scene, Split, CLASS_NAMES, NUM_CLASSES};
use crate::seed::{rng_for, stream};
use crate::tensor::{Real, Tape};
use crate::training::{init_model, train, LossBreakdown, TrainConfig};

pub const DEFAULT_SEEDS: [u64; 5] = [2, 4, 8, 16, 42];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    OracleCatRand,
    OracleRefer,
    VoteNetRand,
    VoteNetBest,
    Model,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 5] = [
        BaselineKind::OracleCatRand,
        BaselineKind::OracleRefer,
        BaselineKind::VoteNetRand,
        BaselineKind::VoteNetBest,
        BaselineKind::Model,
    ];

    pub fn needs_model(self) -> bool {
        self != BaselineKind::OracleCatRand
    }

    pub fn uses_detector(self) -> bool {
        matches!(self, BaselineKind::VoteNetRand | BaselineKind::VoteNetBest | BaselineKind::Model)
    }

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::OracleCatRand => "oracle_cat_rand",
            BaselineKind::OracleRefer => "oracle_refer",
            BaselineKind::VoteNetRand => "votenet_rand",
            BaselineKind::VoteNetBest => "votenet_best",
            BaselineKind::Model => "model",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown baseline `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    Whole,
    FirstSentence,
    ObjectName,
    SemanticLabel,
}

impl FromStr for Truncation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whole" => Ok(Truncation::Whole),
            "first_sentence" => Ok(Truncation::FirstSentence),
            "object_name" => Ok(Truncation::ObjectName),
            "semantic_label" => Ok(Truncation::SemanticLabel),
            other => Err(Error::Config(format!("unknown truncation `{other}`"))),
        }
    }
}

impl fmt::Display for Truncation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Truncation::Whole => "whole",
            Truncation::FirstSentence => "first_sentence",
            Truncation::ObjectName => "object_name",
            Truncation::SemanticLabel => "semantic_label",
        })
    }
}

/// Rewrites the description of a record for the input-ablation study.
pub fn truncate_description(record: &DescriptionRecord, mode: Truncation) -> DescriptionRecord {
    let mut r = record.clone();
    r.tokens = match mode {
        Truncation::Whole => return r,
        Truncation::FirstSentence => match record.tokens.iter().position(|t| t == ".") {
            Some(i) => record.tokens[..=i].to_vec(),
            None => record.tokens.clone(),
        },
        Truncation::ObjectName => tokenize(&record.object_name.replace('_', " ")),
        Truncation::SemanticLabel => tokenize(CLASS_NAMES[class_from_raw_name(&record.object_name)]),
    };
    r.description = r.tokens.join(" ");
    r
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub seeds: Vec<u64>,
    pub baseline: BaselineKind,
    pub truncate: Truncation,
    pub split: Split,
    /// Evaluate only the first this many records; 0 means all.
    pub limit: usize,
    /// Also compute detection AP on the first seed.
    pub detection_map: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            seeds: DEFAULT_SEEDS.to_vec(),
            baseline: BaselineKind::Model,
            truncate: Truncation::Whole,
            split: Split::Val,
            limit: 0,
            detection_map: true,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("evaluation needs at least one seed".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stratum {
    Unique,
    Multiple,
}

/// Unique iff the target's class occurs exactly once in the scene.
pub fn stratum_of(record: &DescriptionRecord, scene: &Scene) -> Result<Stratum> {
    let obj = scene
        .object(record.object_id)
        .ok_or_else(|| Error::InvalidArgument(format!("object {} not in {}", record.object_id, scene.scene_id)))?;
    Ok(if scene.class_count(obj.sem_class) == 1 { Stratum::Unique } else { Stratum::Multiple })
}

/// Hits and sample count of one stratum at one threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Count {
    pub hits: usize,
    pub total: usize,
}

impl Count {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.hits as f64 / self.total as f64
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratifiedCount {
    pub unique: Count,
    pub multiple: Count,
    pub overall: Count,
}

type Key = (String, u32, u32);

fn scene_lookup(scenes: &[Scene]) -> HashMap<&str, &Scene> {
    scenes.iter().map(|s| (s.scene_id.as_str(), s)).collect()
}

/// Fraction of records whose prediction reaches IoU ≥ `k` with the target
/// box, per stratum. Every record needs exactly one prediction (a miss
/// counts as negative).
pub fn acc_at_kiou(predictions: &[Prediction], records: &[&DescriptionRecord], scenes: &[Scene], k: f64) -> Result<StratifiedCount> {
    let index = scene_lookup(scenes);
    let mut by_key: HashMap<Key, &Prediction> = HashMap::with_capacity(predictions.len());
    for p in predictions {
        if by_key.insert(p.key(), p).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate prediction for {:?}", p.key())));
        }
    }
    let wanted: HashSet<Key> = records.iter().map(|r| r.key()).collect();
    if let Some(extra) = by_key.keys().find(|k| !wanted.contains(*k)) {
        return Err(Error::InvalidArgument(format!("prediction for unknown record {extra:?}")));
    }
    let mut out = StratifiedCount::default();
    for r in records {
        let scene = index
            .get(r.scene_id.as_str())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scene {}", r.scene_id)))?;
        let p = by_key
            .get(&r.key())
            .ok_or_else(|| Error::InvalidArgument(format!("no prediction for {:?}", r.key())))?;
        let gt = scene.object(r.object_id).expect("checked by stratum_of").bbox;
        let stratum = stratum_of(r, scene)?;
        let hit = p.aabb().is_some_and(|b| iou3d(&b, &gt) >= k);
        let c = match stratum {
            Stratum::Unique => &mut out.unique,
            Stratum::Multiple => &mut out.multiple,
        };
        c.total += 1;
        out.overall.total += 1;
        if hit {
            c.hits += 1;
            out.overall.hits += 1;
        }
    }
    Ok(out)
}

/// Accuracies in table order: unique 0.25/0.5, multiple 0.25/0.5,
/// overall 0.25/0.5.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AccTable {
    pub values: [f64; 6],
    /// Sample counts: unique, multiple, overall.
    pub counts: [usize; 3],
}

impl AccTable {
    pub const COLUMNS: [&'static str; 6] = [
        "unique_acc@0.25",
        "unique_acc@0.5",
        "multiple_acc@0.25",
        "multiple_acc@0.5",
        "overall_acc@0.25",
        "overall_acc@0.5",
    ];

    pub fn compute(predictions: &[Prediction], records: &[&DescriptionRecord], scenes: &[Scene]) -> Result<Self> {
        let a = acc_at_kiou(predictions, records, scenes, 0.25)?;
        let b = acc_at_kiou(predictions, records, scenes, 0.5)?;
        Ok(AccTable {
            values: [
                a.unique.rate(),
                b.unique.rate(),
                a.multiple.rate(),
                b.multiple.rate(),
                a.overall.rate(),
                b.overall.rate(),
            ],
            counts: [a.unique.total, a.multiple.total, a.overall.total],
        })
    }

    pub fn overall_025(&self) -> f64 {
        self.values[4]
    }

    pub fn overall_050(&self) -> f64 {
        self.values[5]
    }

    pub fn unique_025(&self) -> f64 {
        self.values[0]
    }
}

/// One detection for AP computation.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub scene_id: String,
    pub class: usize,
    pub bbox: Aabb,
    pub confidence: f64,
}

/// Surviving proposals as detections: class = semantic argmax, confidence
/// = objectness probability.
pub fn detections_from<T: Real>(model: &RefModel<T>, det: &DetectorOutput, scene_id: &str) -> Result<Vec<Detection>> {
    let p = &det.proposals;
    Ok(model
        .surviving_proposals(det)?
        .into_iter()
        .map(|i| Detection {
            scene_id: scene_id.to_string(),
            class: p.sem_class[i],
            bbox: p.boxes[i],
            confidence: p.objectness[i],
        })
        .collect())
}

/// Per-class AP (None for classes absent from the ground truth) and their
/// mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub ap: Vec<Option<f64>>,
    pub map: f64,
}

impl ApReport {
    /// Header and one row, class columns in the fixed class order, then mAP.
    pub fn csv(&self, label: &str) -> String {
        let head: Vec<&str> = CLASS_NAMES.to_vec();
        let cells: Vec<String> = self.ap.iter().map(|v| v.map_or(String::from("-"), |a| format!("{a:.4}"))).collect();
        format!("label,{},mAP\n{label},{},{:.4}\n", head.join(","), cells.join(","), self.map)
    }
}

/// All-point interpolated AP of one ranked list given per-detection TP flags.
pub fn average_precision(tp: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut prec = Vec::with_capacity(tp.len());
    let mut rec = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        hits += t as usize;
        prec.push(hits as f64 / (i + 1) as f64);
        rec.push(hits as f64 / num_gt as f64);
    }
    // precision envelope from the right
    for i in (0..prec.len().saturating_sub(1)).rev() {
        prec[i] = prec[i].max(prec[i + 1]);
    }
    let mut ap = 0.0;
    let mut last_r = 0.0;
    for i in 0..prec.len() {
        if rec[i] > last_r {
            ap += (rec[i] - last_r) * prec[i];
            last_r = rec[i];
        }
    }
    ap
}

/// Per-class AP at an IoU threshold: detections sorted by confidence
/// (stable), each matched to its highest-IoU ground-truth box in the same
/// scene; a match is a true positive when that box is still unmatched and
/// the IoU reaches the threshold.
pub fn map_at_iou(detections: &[Detection], scenes: &[Scene], iou: f64) -> ApReport {
    let mut ap = vec![None; NUM_CLASSES];
    for (class, slot) in ap.iter_mut().enumerate() {
        let gts: HashMap<&str, Vec<Aabb>> = scenes
            .iter()
            .map(|s| {
                let b = s.objects.iter().filter(|o| o.sem_class == class).map(|o| o.bbox).collect();
                (s.scene_id.as_str(), b)
            })
            .collect();
        let num_gt: usize = gts.values().map(Vec::len).sum();
        if num_gt == 0 {
            continue;
        }
        let mut dets: Vec<&Detection> = detections.iter().filter(|d| d.class == class).collect();
        dets.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        let mut used: HashSet<(&str, usize)> = HashSet::new();
        let tp: Vec<bool> = dets
            .iter()
            .map(|d| {
                let Some(boxes) = gts.get(d.scene_id.as_str()) else { return false };
                let best = boxes
                    .iter()
                    .enumerate()
                    .map(|(j, g)| (j, iou3d(&d.bbox, g)))
                    .fold(None, |acc: Option<(usize, f64)>, x| match acc {
                        Some(a) if a.1 >= x.1 => Some(a),
                        _ => Some(x),
                    });
                match best {
                    Some((j, v)) if v >= iou => used.insert((gts.get_key_value(d.scene_id.as_str()).unwrap().0, j)),
                    _ => false,
                }
            })
            .collect();
        *slot = Some(average_precision(&tp, num_gt));
    }
    let present: Vec<f64> = ap.iter().flatten().copied().collect();
    let map = if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
    ApReport { ap, map }
}

fn group_by_scene<'a>(records: &[&'a DescriptionRecord]) -> Vec<(String, Vec<(usize, &'a DescriptionRecord)>)> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<(usize, &DescriptionRecord)>> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        groups
            .entry(r.scene_id.clone())
            .or_insert_with(|| {
                order.push(r.scene_id.clone());
                Vec::new()
            })
            .push((i, r));
    }
    order.into_iter().map(|id| (id.clone(), groups.remove(&id).unwrap())).collect()
}

/// Predictions (and, for detector-based kinds, detections) of one baseline.
/// `seed` drives point subsampling, FPS and the random choices.
pub fn run_baseline<T: Real>(
    kind: BaselineKind,
    records: &[&DescriptionRecord],
    scenes: &[Scene],
    model: Option<&RefModel<T>>,
    seed: u64,
    exec: Execution,
) -> Result<(Vec<Prediction>, Vec<Detection>)> {
    if kind.needs_model() && model.is_none() {
        return Err(Error::InvalidArgument(format!("baseline {kind} needs a trained model")));
    }
    let index = scene_lookup(scenes);
    let groups = group_by_scene(records);
    let per_scene = map_indexed(exec, groups.len(), |g| -> Result<(Vec<(usize, Prediction)>, Vec<Detection>)> {
        let (scene_id, recs) = &groups[g];
        let scene = *index
            .get(scene_id.as_str())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scene {scene_id}")))?;
        let mut tape = Tape::<T>::new();
        let det = match (kind.uses_detector() || kind == BaselineKind::OracleRefer, model) {
            (true, Some(m)) => Some(m.detect(&mut tape, scene, seed)?),
            _ => None,
        };
        let detections = match (kind.uses_detector(), model, &det) {
            (true, Some(m), Some(d)) => detections_from(m, d, scene_id)?,
            _ => Vec::new(),
        };
        let survivors = match (model, &det) {
            (Some(m), Some(d)) if kind.uses_detector() => m.surviving_proposals(d)?,
            _ => Vec::new(),
        };
        let mut out = Vec::with_capacity(recs.len());
        for &(i, r) in recs {
            let target = scene
                .object(r.object_id)
                .ok_or_else(|| Error::InvalidArgument(format!("object {} not in {scene_id}", r.object_id)))?;
            let mut rng = rng_for(seed, stream::BASELINE, i as u64);
            let miss = Prediction::miss(&r.scene_id, r.object_id, r.ann_id);
            let pred = match kind {
                BaselineKind::OracleCatRand => {
                    let same: Vec<&Aabb> =
                        scene.objects.iter().filter(|o| o.sem_class == target.sem_class).map(|o| &o.bbox).collect();
                    let b = **same.choose(&mut rng).expect("target itself matches");
                    Prediction::hit(&r.scene_id, r.object_id, r.ann_id, b, 1.0 / same.len() as f64)
                }
                BaselineKind::OracleRefer => {
                    let m = model.expect("checked");
                    let boxes: Vec<Aabb> = scene.objects.iter().map(|o| o.bbox).collect();
                    let (j, conf) = m.score_boxes(&mut tape, det.as_ref().expect("detected"), &boxes, &r.tokens)?;
                    Prediction::hit(&r.scene_id, r.object_id, r.ann_id, boxes[j], conf)
                }
                BaselineKind::VoteNetRand => {
                    let d = det.as_ref().expect("detected");
                    let same: Vec<usize> =
                        survivors.iter().copied().filter(|&j| d.proposals.sem_class[j] == target.sem_class).collect();
                    let pool = if same.is_empty() { &survivors } else { &same };
                    match pool.choose(&mut rng) {
                        Some(&j) => Prediction::hit(&r.scene_id, r.object_id, r.ann_id, d.proposals.boxes[j], 1.0 / pool.len() as f64),
                        None => miss,
                    }
                }
                BaselineKind::VoteNetBest => {
                    let d = det.as_ref().expect("detected");
                    let best = survivors
                        .iter()
                        .map(|&j| (j, iou3d(&d.proposals.boxes[j], &target.bbox)))
                        .fold(None, |acc: Option<(usize, f64)>, x| match acc {
                            Some(a) if a.1 >= x.1 => Some(a),
                            _ => Some(x),
                        });
                    match best {
                        Some((j, v)) => Prediction::hit(&r.scene_id, r.object_id, r.ann_id, d.proposals.boxes[j], v),
                        None => miss,
                    }
                }
                BaselineKind::Model => {
                    let m = model.expect("checked");
                    match m.ground(&mut tape, det.as_ref().expect("detected"), &r.tokens) {
                        Ok(l) => Prediction::hit(&r.scene_id, r.object_id, r.ann_id, l.bbox, l.confidence),
                        Err(Error::NoProposals) => miss,
                        Err(e) => return Err(e),
                    }
                }
            };
            out.push((i, pred));
        }
        Ok((out, detections))
    });
    let mut preds: Vec<Option<Prediction>> = vec![None; records.len()];
    let mut dets = Vec::new();
    for r in per_scene {
        let (p, d) = r?;
        for (i, pred) in p {
            preds[i] = Some(pred);
        }
        dets.extend(d);
    }
    Ok((preds.into_iter().map(|p| p.expect("every record visited")).collect(), dets))
}

/// Results of one evaluation over several seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub baseline: BaselineKind,
    pub truncate: Truncation,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<AccTable>,
    pub mean: [f64; 6],
    /// Sample standard deviation over seeds (0 for a single seed).
    pub std: [f64; 6],
    pub counts: [usize; 3],
    pub ap: Option<ApReport>,
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

impl EvalReport {
    pub fn from_tables(baseline: BaselineKind, truncate: Truncation, seeds: Vec<u64>, per_seed: Vec<AccTable>, ap: Option<ApReport>) -> Self {
        let mut mean = [0.0; 6];
        let mut std = [0.0; 6];
        for c in 0..6 {
            let col: Vec<f64> = per_seed.iter().map(|t| t.values[c]).collect();
            (mean[c], std[c]) = mean_std(&col);
        }
        let counts = per_seed.first().map_or([0; 3], |t| t.counts);
        EvalReport {
            baseline,
            truncate,
            seeds,
            per_seed,
            mean,
            std,
            counts,
            ap,
        }
    }

    pub fn overall_050(&self) -> f64 {
        self.mean[5]
    }

    /// Table-order CSV: one row per seed, then mean and std rows.
    pub fn csv(&self) -> String {
        let mut s = format!("baseline,seed,{},n_unique,n_multiple,n_overall\n", AccTable::COLUMNS.join(","));
        let row = |label: &str, v: &[f64; 6]| -> String {
            let cells: Vec<String> = v.iter().map(|x| format!("{:.4}", 100.0 * x)).collect();
            format!(
                "{},{label},{},{},{},{}\n",
                self.baseline,
                cells.join(","),
                self.counts[0],
                self.counts[1],
                self.counts[2]
            )
        };
        for (seed, t) in self.seeds.iter().zip(&self.per_seed) {
            s.push_str(&row(&seed.to_string(), &t.values));
        }
        s.push_str(&row("mean", &self.mean));
        s.push_str(&row("std", &self.std));
        s
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "baseline: {}  truncate: {}  seeds: {:?}", self.baseline, self.truncate, self.seeds)?;
        writeln!(
            f,
            "samples: unique {}  multiple {}  overall {}",
            self.counts[0], self.counts[1], self.counts[2]
        )?;
        writeln!(f, "{:>10} {:>17} {:>17} {:>17}", "", "unique", "multiple", "overall")?;
        writeln!(f, "{:>10} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}", "", "@0.25", "@0.5", "@0.25", "@0.5", "@0.25", "@0.5")?;
        for (label, v) in [("mean", &self.mean), ("std", &self.std)] {
            write!(f, "{label:>10}")?;
            for x in v {
                write!(f, " {:>8.2}", 100.0 * x)?;
            }
            writeln!(f)?;
        }
        if let Some(ap) = &self.ap {
            writeln!(f, "mAP@0.5: {:.4}", ap.map)?;
        }
        Ok(())
    }
}

/// Records of the configured split, truncated and limited.
pub fn eval_records(ds: &Dataset, cfg: &EvalConfig) -> Vec<DescriptionRecord> {
    let mut recs: Vec<DescriptionRecord> =
        ds.records_in(cfg.split).into_iter().map(|r| truncate_description(r, cfg.truncate)).collect();
    if cfg.limit > 0 {
        recs.truncate(cfg.limit);
    }
    recs
}

/// Repeats the whole evaluation per seed with fixed weights.
pub fn seeded_eval<T: Real>(model: Option<&RefModel<T>>, ds: &Dataset, cfg: &EvalConfig, exec: Execution) -> Result<EvalReport> {
    cfg.validate()?;
    let recs = eval_records(ds, cfg);
    if recs.is_empty() {
        return Err(Error::Empty(format!("no records in the {:?} split", cfg.split)));
    }
    let refs: Vec<&DescriptionRecord> = recs.iter().collect();
    let mut tables = Vec::with_capacity(cfg.seeds.len());
    let mut ap = None;
    for (i, &seed) in cfg.seeds.iter().enumerate() {
        let (preds, dets) = run_baseline(cfg.baseline, &refs, &ds.scenes, model, seed, exec)?;
        tables.push(AccTable::compute(&preds, &refs, &ds.scenes)?);
        if i == 0 && cfg.detection_map && cfg.baseline.uses_detector() {
            let ids: HashSet<&str> = refs.iter().map(|r| r.scene_id.as_str()).collect();
            let scenes: Vec<Scene> = ds.scenes.iter().filter(|s| ids.contains(s.scene_id.as_str())).cloned().collect();
            ap = Some(map_at_iou(&dets, &scenes, 0.5));
        }
    }
    Ok(EvalReport::from_tables(cfg.baseline, cfg.truncate, cfg.seeds.clone(), tables, ap))
}

/// Validation hook for [`train`]: Model accuracy with one seed over at most
/// `limit` validation records (all when 0), plus the mean validation loss.
pub fn validator<'a, T: Real>(
    ds: &'a Dataset,
    train_cfg: &'a TrainConfig,
    limit: usize,
    exec: Execution,
) -> impl Fn(&RefModel<T>, usize) -> Result<(f64, f64, LossBreakdown)> + 'a {
    move |model, iteration| {
        let cfg = EvalConfig {
            seeds: vec![train_cfg.seed],
            limit,
            detection_map: false,
            ..EvalConfig::default()
        };
        let report = seeded_eval(Some(model), ds, &cfg, exec)?;
        let recs = eval_records(ds, &cfg);
        let index = ds.scene_index();
        let eval_cfg = TrainConfig {
            augment: false,
            ..train_cfg.clone()
        };
        let losses = map_indexed(exec, recs.len(), |i| -> Result<LossBreakdown> {
            let r = &recs[i];
            let scene = &ds.scenes[index[r.scene_id.as_str()]];
            let mut tape = Tape::new();
            let sample = crate::training::Sample {
                scene,
                record: r,
                seed: train_cfg.seed.wrapping_add(i as u64),
            };
            Ok(crate::training::sample_loss(&mut tape, model, &eval_cfg, &sample)?.breakdown)
        });
        let mut mean = LossBreakdown::default();
        let n = recs.len().max(1) as f64;
        for l in losses {
            mean.add_scaled(&l?, 1.0 / n);
        }
        log::info!("iter {iteration}: val acc@0.5 {:.4}", report.overall_050());
        Ok((report.mean[4], report.mean[5], mean))
    }
}

/// The five input-feature settings of the ablation grid, with labels.
pub fn ablation_features(base: &FeatureConfig) -> Vec<(String, FeatureConfig)> {
    let cell = |rgb: bool, multiview: bool, normals: bool| {
        let mut f = base.clone();
        f.use_rgb = rgb;
        f.use_appearance = multiview;
        f.use_normals = normals;
        let mut label = String::from("xyz");
        for (on, name) in [(rgb, "+rgb"), (multiview, "+multiview"), (normals, "+normals")] {
            if on {
                label.push_str(name);
            }
        }
        (label, f)
    };
    vec![
        cell(false, false, false),
        cell(true, false, false),
        cell(true, false, true),
        cell(false, true, false),
        cell(false, true, true),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub label: String,
    pub lang_cls: bool,
    pub final_loss: f64,
    pub report: EvalReport,
}

/// Trains and evaluates every feature setting with and without the
/// language classifier (features outer, classifier inner, classifier-off
/// block first as in the published table).
pub fn run_ablation(base: &RunConfig, ds: &Dataset, exec: Execution) -> Result<Vec<AblationCell>> {
    let mut cells = Vec::new();
    for lang_cls in [false, true] {
        for (label, features) in ablation_features(&base.model.features) {
            let mut cfg = base.clone();
            cfg.model.features = features;
            cfg.train.lang_cls = lang_cls;
            let mut model = init_model::<f32>(&cfg.model, ds, cfg.seed)?;
            let log = train(&mut model, ds, &cfg.train, exec, None)?;
            let final_loss = log.losses.last().map_or(f64::NAN, |r| r.loss.total);
            if !final_loss.is_finite() {
                return Err(Error::NonFinite(format!("ablation cell {label} lobjcls={lang_cls}")));
            }
            let eval = EvalConfig {
                baseline: BaselineKind::Model,
                ..cfg.eval.clone()
            };
            let report = seeded_eval(Some(&model), ds, &eval, exec)?;
            let label = if lang_cls { format!("{label}+lobjcls") } else { label };
            cells.push(AblationCell {
                label,
                lang_cls,
                final_loss,
                report,
            });
        }
    }
    Ok(cells)
}

/// One row per cell: label, the six accuracies (percent), final loss, mAP.
pub fn ablation_csv(cells: &[AblationCell]) -> String {
    let mut s = format!("features,{},final_loss,mAP\n", AccTable::COLUMNS.join(","));
    for c in cells {
        let acc: Vec<String> = c.report.mean.iter().map(|v| format!("{:.4}", 100.0 * v)).collect();
        let map = c.report.ap.as_ref().map_or(String::from("-"), |a| format!("{:.4}", a.map));
        s.push_str(&format!("{},{},{:.6},{}\n", c.label, acc.join(","), c.final_loss, map));
    }
    s
}
