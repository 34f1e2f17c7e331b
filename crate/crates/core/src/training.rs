//! Composite loss and the training loop.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{assign_detection_targets, detection_losses, size_templates_from, DetectionLosses};
use crate::error::{Error, Result};
use crate::grounding::assign_localization_target;
use crate::language::{EmbeddingTable, Vocabulary};
use crate::model::{ModelConfig, RefModel};
use crate::par::{map_indexed, Execution};
use crate::scene::{assemble_features, Augmentation, Dataset, DescriptionRecord, ObjectAnnotation, Scene, Split};
use crate::seed::{derive_seed, rng_for, stream};
use crate::tensor::{AdamConfig, AdamState, GradBuffer, Real, Tape, Tensor, Var};

/// Loss weights: `L = α·L_loc + β·L_det + γ·L_cls` with
/// `L_det = L_vote + w_objn·L_objn + L_box + w_sem·L_sem` and
/// `L_box = L_center + w_size_cls·L_size_cls + L_size_res`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub objectness: f64,
    pub sem: f64,
    pub size_cls: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.1,
            beta: 10.0,
            gamma: 1.0,
            objectness: 0.5,
            sem: 0.1,
            size_cls: 0.1,
        }
    }
}

impl LossWeights {
    pub fn box_loss(&self, center: f64, size_cls: f64, size_res: f64) -> f64 {
        center + self.size_cls * size_cls + size_res
    }

    pub fn det_loss(&self, vote: f64, objectness: f64, box_loss: f64, sem: f64) -> f64 {
        vote + self.objectness * objectness + box_loss + self.sem * sem
    }

    pub fn total(&self, loc: f64, det: f64, cls: f64) -> f64 {
        self.alpha * loc + self.beta * det + self.gamma * cls
    }

    fn validate(&self) -> Result<()> {
        let w = [self.alpha, self.beta, self.gamma, self.objectness, self.sem, self.size_cls];
        if w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("loss weights must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Every term, every parameter.
    EndToEnd,
    /// Detector loaded from a checkpoint and kept fixed; only the
    /// localization and language terms are optimized.
    FrozenDetector,
    /// Detection terms only, to produce the checkpoint the frozen mode needs.
    DetectorOnly,
}

impl FromStr for TrainMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "end_to_end" => Ok(TrainMode::EndToEnd),
            "frozen_detector" => Ok(TrainMode::FrozenDetector),
            "detector_only" => Ok(TrainMode::DetectorOnly),
            other => Err(Error::Config(format!("unknown training mode `{other}`"))),
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::EndToEnd => "end_to_end",
            TrainMode::FrozenDetector => "frozen_detector",
            TrainMode::DetectorOnly => "detector_only",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    /// Validation every this many iterations; 0 only at the end.
    pub eval_every: usize,
    /// Validation descriptions per evaluation point; 0 means all.
    pub eval_limit: usize,
    pub mode: TrainMode,
    pub seed: u64,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    /// Language-to-object classification term.
    pub lang_cls: bool,
    pub augment: bool,
    /// Skip the localization term when no proposal overlaps the target.
    pub skip_zero_iou: bool,
    /// Loss-curve rows are averaged over this many iterations.
    pub log_every: usize,
    /// Detector weights for `frozen_detector` mode.
    pub detector_checkpoint: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            batch_size: 8,
            eval_every: 0,
            eval_limit: 0,
            mode: TrainMode::EndToEnd,
            seed: 0,
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            lang_cls: true,
            augment: true,
            skip_zero_iou: false,
            log_every: 50,
            detector_checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be positive".into()));
        }
        if self.mode == TrainMode::FrozenDetector && self.detector_checkpoint.is_none() {
            return Err(Error::Config("frozen_detector mode needs train.detector_checkpoint".into()));
        }
        Ok(())
    }
}

/// Scalar value of every loss term of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub loc: f64,
    pub det: f64,
    pub cls: f64,
    pub vote: f64,
    pub objectness: f64,
    pub box_loss: f64,
    pub center: f64,
    pub size_cls: f64,
    pub size_res: f64,
    pub sem: f64,
}

impl LossBreakdown {
    pub const FIELDS: [&'static str; 11] = [
        "total", "loc", "det", "cls", "vote", "objectness", "box", "center", "size_cls", "size_res", "sem",
    ];

    pub fn values(&self) -> [f64; 11] {
        [
            self.total,
            self.loc,
            self.det,
            self.cls,
            self.vote,
            self.objectness,
            self.box_loss,
            self.center,
            self.size_cls,
            self.size_res,
            self.sem,
        ]
    }

    pub fn add_scaled(&mut self, o: &LossBreakdown, s: f64) {
        self.total += s * o.total;
        self.loc += s * o.loc;
        self.det += s * o.det;
        self.cls += s * o.cls;
        self.vote += s * o.vote;
        self.objectness += s * o.objectness;
        self.box_loss += s * o.box_loss;
        self.center += s * o.center;
        self.size_cls += s * o.size_cls;
        self.size_res += s * o.size_res;
        self.sem += s * o.sem;
    }

    pub fn all_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }
}

/// The tape-side composite loss and its breakdown.
#[derive(Clone, Copy, Debug)]
pub struct CompositeLoss {
    pub total: Var,
    pub breakdown: LossBreakdown,
}

fn add_weighted<T: Real>(tape: &mut Tape<T>, acc: Option<Var>, term: Var, w: f64) -> Result<Option<Var>> {
    let t = tape.scale(term, T::from_f64_lossy(w))?;
    Ok(Some(match acc {
        Some(a) => tape.add(a, t)?,
        None => t,
    }))
}

/// Combines the terms. Terms that are `None` (disabled heads) and terms the
/// mode excludes contribute exactly zero to the total and its gradient.
pub fn composite_loss<T: Real>(
    tape: &mut Tape<T>,
    w: &LossWeights,
    loc: Option<Var>,
    det: Option<&DetectionLosses>,
    cls: Option<Var>,
) -> Result<CompositeLoss> {
    let val = |tape: &Tape<T>, v: Var| -> Result<f64> { Ok(tape.value(v)?.item().as_f64()) };
    let mut b = LossBreakdown::default();
    let mut total = None;
    if let Some(l) = loc {
        b.loc = val(tape, l)?;
        total = add_weighted(tape, total, l, w.alpha)?;
    }
    if let Some(d) = det {
        b.vote = val(tape, d.vote)?;
        b.objectness = val(tape, d.objectness)?;
        b.center = val(tape, d.center)?;
        b.size_cls = val(tape, d.size_cls)?;
        b.size_res = val(tape, d.size_res)?;
        b.sem = val(tape, d.sem)?;
        b.box_loss = w.box_loss(b.center, b.size_cls, b.size_res);
        b.det = w.det_loss(b.vote, b.objectness, b.box_loss, b.sem);
        let terms = [
            (d.vote, 1.0),
            (d.objectness, w.objectness),
            (d.center, 1.0),
            (d.size_cls, w.size_cls),
            (d.size_res, 1.0),
            (d.sem, w.sem),
        ];
        for (t, k) in terms {
            total = add_weighted(tape, total, t, w.beta * k)?;
        }
    }
    if let Some(c) = cls {
        b.cls = val(tape, c)?;
        total = add_weighted(tape, total, c, w.gamma)?;
    }
    let total = match total {
        Some(t) => t,
        None => tape.constant(Tensor::scalar(T::zero())),
    };
    b.total = val(tape, total)?;
    if !b.all_finite() {
        return Err(Error::NonFinite(format!("loss terms {b:?}")));
    }
    Ok(CompositeLoss { total, breakdown: b })
}

/// Everything needed to build one training sample.
pub struct Sample<'a> {
    pub scene: &'a Scene,
    pub record: &'a DescriptionRecord,
    pub seed: u64,
}

/// Unweighted loss terms of one sample; `None` marks a term the mode or
/// config leaves out.
#[derive(Clone, Copy, Debug)]
pub struct SampleTerms {
    pub loc: Option<Var>,
    pub det: Option<DetectionLosses>,
    pub cls: Option<Var>,
}

/// Builds the individual loss terms of one (scene, description) pair.
pub fn sample_terms<T: Real>(
    tape: &mut Tape<T>,
    model: &RefModel<T>,
    cfg: &TrainConfig,
    sample: &Sample<'_>,
) -> Result<SampleTerms> {
    let mut points = assemble_features(sample.scene, &model.cfg.features, sample.seed)?;
    let mut objects: Vec<ObjectAnnotation> = sample.scene.objects.clone();
    if cfg.augment {
        let aug = Augmentation::sample(sample.seed);
        aug.apply_points(&mut points, &model.cfg.features.layout());
        for o in &mut objects {
            o.bbox = aug.apply_box(&o.bbox);
        }
    }
    let target = objects
        .iter()
        .find(|o| o.object_id == sample.record.object_id)
        .ok_or_else(|| Error::InvalidArgument(format!("record object {} not in scene", sample.record.object_id)))?
        .clone();
    let ids = model.token_ids(&sample.record.tokens);
    let fwd = model.forward_sample(tape, &points, &ids, sample.seed)?;
    let templates = model.size_templates();
    let det_targets =
        assign_detection_targets(&fwd.det.seed_positions, &fwd.det.proposals, &objects, &templates, &model.cfg.detector)?;

    let (want_loc, want_det) = match cfg.mode {
        TrainMode::EndToEnd => (true, true),
        TrainMode::FrozenDetector => (true, false),
        TrainMode::DetectorOnly => (false, true),
    };
    let loc = if want_loc {
        let (t, overlap) = assign_localization_target(&fwd.det.proposals.boxes, &target.bbox);
        if overlap || !cfg.skip_zero_iou {
            Some(tape.cross_entropy_rows(fwd.raw_scores, &[Some(t)])?)
        } else {
            None
        }
    } else {
        None
    };
    let det = if want_det { Some(detection_losses(tape, &fwd.det, &det_targets)?) } else { None };
    let cls = if cfg.lang_cls && cfg.mode != TrainMode::DetectorOnly {
        Some(tape.cross_entropy(fwd.lang_logits, target.sem_class)?)
    } else {
        None
    };
    Ok(SampleTerms { loc, det, cls })
}

/// Builds the weighted loss of one (scene, description) pair on `tape`.
pub fn sample_loss<T: Real>(
    tape: &mut Tape<T>,
    model: &RefModel<T>,
    cfg: &TrainConfig,
    sample: &Sample<'_>,
) -> Result<CompositeLoss> {
    let t = sample_terms(tape, model, cfg, sample)?;
    composite_loss(tape, &cfg.weights, t.loc, t.det.as_ref(), t.cls)
}

/// One row of the loss curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub iteration: usize,
    pub loss: LossBreakdown,
}

/// One validation point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub iteration: usize,
    pub loss: LossBreakdown,
    pub acc_025: f64,
    pub acc_050: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricLog {
    pub losses: Vec<LossRow>,
    pub evals: Vec<EvalRow>,
}

impl MetricLog {
    pub fn loss_csv(&self) -> String {
        let mut s = format!("iteration,{}\n", LossBreakdown::FIELDS.join(","));
        for r in &self.losses {
            let vals: Vec<String> = r.loss.values().iter().map(|v| format!("{v:.6}")).collect();
            s.push_str(&format!("{},{}\n", r.iteration, vals.join(",")));
        }
        s
    }

    /// One line per evaluation point.
    pub fn eval_lines(&self) -> String {
        let mut s = String::new();
        for r in &self.evals {
            s.push_str(&format!(
                "iter={} loss={:.6} loc={:.6} det={:.6} cls={:.6} acc@0.25={:.4} acc@0.5={:.4}\n",
                r.iteration, r.loss.total, r.loss.loc, r.loss.det, r.loss.cls, r.acc_025, r.acc_050
            ));
        }
        s
    }
}

/// Vocabulary over every token of the training split.
pub fn build_vocabulary(ds: &Dataset) -> Vocabulary {
    Vocabulary::build(ds.records_in(Split::Train).into_iter().flat_map(|r| r.tokens.iter().map(String::as_str)))
}

/// Embedding table for the model config: word-vector file if given, seeded
/// random rows otherwise.
pub fn build_embeddings(cfg: &ModelConfig, vocab: &Vocabulary, seed: u64) -> Result<EmbeddingTable> {
    let mut t = match &cfg.word_vectors {
        Some(p) => EmbeddingTable::load_text(std::path::Path::new(p), vocab, cfg.embedding_dim, seed)?,
        None => EmbeddingTable::random(vocab, cfg.embedding_dim, seed),
    };
    t.frozen = cfg.freeze_embeddings;
    Ok(t)
}

/// Fresh model for a dataset: vocabulary and size templates from the train
/// split.
pub fn init_model<T: Real>(cfg: &ModelConfig, ds: &Dataset, seed: u64) -> Result<RefModel<T>> {
    let vocab = build_vocabulary(ds);
    let table = build_embeddings(cfg, &vocab, seed)?;
    let mut model = RefModel::new(cfg.clone(), vocab, table, seed)?;
    model.set_size_templates(&size_templates_from(ds.scenes_in(Split::Train)))?;
    Ok(model)
}

/// Copies every `det.` parameter from a checkpoint into `model`.
pub fn load_detector_weights<T: Real>(model: &mut RefModel<T>, path: &std::path::Path) -> Result<()> {
    let src = crate::checkpoint::load::<T>(path)?;
    for id in src.store.ids() {
        let name = src.store.name(id);
        if !name.starts_with("det.") {
            continue;
        }
        let dst = model
            .store
            .id(name)
            .ok_or_else(|| Error::Config(format!("detector checkpoint has unknown parameter `{name}`")))?;
        model.store.set_value(dst, src.store.value(id).clone())?;
    }
    Ok(())
}

/// Hook for periodic validation: receives the model and the iteration and
/// returns (Acc@0.25, Acc@0.5, mean validation loss).
pub type Validator<'a, T> = dyn Fn(&RefModel<T>, usize) -> Result<(f64, f64, LossBreakdown)> + 'a;

/// Runs the configured number of iterations in place on `model`.
pub fn train<T: Real>(
    model: &mut RefModel<T>,
    ds: &Dataset,
    cfg: &TrainConfig,
    exec: Execution,
    validator: Option<&Validator<'_, T>>,
) -> Result<MetricLog> {
    cfg.validate()?;
    let records = ds.records_in(Split::Train);
    if records.is_empty() {
        return Err(Error::Empty("training split has no descriptions".into()));
    }
    let index = ds.scene_index();
    if let (TrainMode::FrozenDetector, Some(path)) = (cfg.mode, &cfg.detector_checkpoint) {
        load_detector_weights(model, std::path::Path::new(path))?;
    }
    for p in model.store.ids().collect::<Vec<_>>() {
        let name = model.store.name(p).to_string();
        let trainable = match cfg.mode {
            TrainMode::FrozenDetector => !name.starts_with("det."),
            TrainMode::DetectorOnly => name.starts_with("det."),
            TrainMode::EndToEnd => true,
        };
        let keep = name != "det.size_templates" && (name != "lang.embedding" || !model.cfg.freeze_embeddings);
        model.store.set_trainable(p, trainable && keep);
    }
    let mut adam = AdamState::new(&model.store);
    let mut log = MetricLog::default();
    let mut window = LossBreakdown::default();
    let mut window_n = 0usize;
    for it in 0..cfg.iterations {
        let mut rng = rng_for(cfg.seed, stream::BATCH, it as u64);
        let picks: Vec<usize> = (0..cfg.batch_size).map(|_| rng.gen_range(0..records.len())).collect();
        let model_ref = &*model;
        let results = map_indexed(exec, cfg.batch_size, |b| -> Result<(GradBuffer<T>, LossBreakdown)> {
            let record = records[picks[b]];
            let scene = &ds.scenes[*index
                .get(record.scene_id.as_str())
                .ok_or_else(|| Error::InvalidArgument(format!("unknown scene {}", record.scene_id)))?];
            let sample = Sample {
                scene,
                record,
                seed: derive_seed(cfg.seed, stream::AUGMENT, (it * cfg.batch_size + b) as u64),
            };
            let mut tape = Tape::new();
            let loss = sample_loss(&mut tape, model_ref, cfg, &sample)?;
            let grads = tape.backward(loss.total)?;
            let mut buf = GradBuffer::zeros_like(&model_ref.store);
            buf.accumulate(&tape, &grads, T::from_f64_lossy(1.0 / cfg.batch_size as f64));
            Ok((buf, loss.breakdown))
        });
        let mut total: Option<GradBuffer<T>> = None;
        let mut step = LossBreakdown::default();
        for r in results {
            let (g, b) = r?;
            step.add_scaled(&b, 1.0 / cfg.batch_size as f64);
            match &mut total {
                Some(t) => t.add(&g),
                None => total = Some(g),
            }
        }
        let grads = total.expect("batch_size > 0");
        adam.step(&mut model.store, &grads, &cfg.adam)?;
        window.add_scaled(&step, 1.0);
        window_n += 1;
        if window_n == cfg.log_every || it + 1 == cfg.iterations {
            let mut avg = LossBreakdown::default();
            avg.add_scaled(&window, 1.0 / window_n as f64);
            log::debug!("iter {} loss {:.4}", it + 1, avg.total);
            log.losses.push(LossRow { iteration: it + 1, loss: avg });
            window = LossBreakdown::default();
            window_n = 0;
        }
        let at_eval = cfg.eval_every > 0 && (it + 1) % cfg.eval_every == 0;
        if let (true, Some(v)) = (at_eval || it + 1 == cfg.iterations, validator) {
            let (a25, a50, loss) = v(model, it + 1)?;
            log.evals.push(EvalRow {
                iteration: it + 1,
                loss,
                acc_025: a25,
                acc_050: a50,
            });
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_combination_example() {
        let w = LossWeights::default();
        assert_eq!((w.alpha, w.beta, w.gamma), (0.1, 10.0, 1.0));
        assert_eq!((w.objectness, w.sem, w.size_cls), (0.5, 0.1, 0.1));
        assert!((w.total(2.0, 0.5, 1.0) - 6.2).abs() < 1e-12);
    }

    #[test]
    fn disabled_terms_are_zero() {
        let mut tape = Tape::<f64>::new();
        let loc = tape.var(Tensor::scalar(2.0));
        let l = composite_loss(&mut tape, &LossWeights::default(), Some(loc), None, None).unwrap();
        assert_eq!(l.breakdown.cls, 0.0);
        assert!((l.breakdown.total - 0.2).abs() < 1e-15);
        let g = tape.backward(l.total).unwrap();
        assert!((g.wrt(loc).unwrap().item() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn modes_parse() {
        for m in ["end_to_end", "frozen_detector", "detector_only"] {
            assert_eq!(m.parse::<TrainMode>().unwrap().to_string(), m);
        }
        assert!("joint".parse::<TrainMode>().is_err());
    }
}
