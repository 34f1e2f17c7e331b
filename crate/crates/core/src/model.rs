//! The assembled network: detector, description encoder and grounding head
//! over one parameter store.

use serde::{Deserialize, Serialize};

use crate::detector::{Detector, DetectorConfig, DetectorOutput};
use crate::error::{Error, Result};
use crate::geometry::{nms, Aabb, Point3};
use crate::grounding::GroundingHead;
use crate::language::{EmbeddingTable, LanguageEncoder, Vocabulary, EMBEDDING_DIM, HIDDEN_DIM};
use crate::scene::{assemble_features, FeatureConfig, PointMatrix, Scene};
use crate::seed::{rng_for, stream};
use crate::tensor::{ParamStore, Real, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub features: FeatureConfig,
    pub detector: DetectorConfig,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub freeze_embeddings: bool,
    /// Optional word-vector text file; a seeded random table otherwise.
    pub word_vectors: Option<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            features: FeatureConfig::default(),
            detector: DetectorConfig::default(),
            embedding_dim: EMBEDDING_DIM,
            hidden_dim: HIDDEN_DIM,
            freeze_embeddings: true,
            word_vectors: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RefModel<T: Real> {
    pub cfg: ModelConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore<T>,
    pub detector: Detector,
    pub language: LanguageEncoder,
    pub head: GroundingHead,
}

/// Everything a training step needs from one forward pass.
#[derive(Clone, Debug)]
pub struct SampleForward {
    pub det: DetectorOutput,
    pub embedding: Var,
    pub lang_logits: Var,
    /// `[1, M]` raw localization scores.
    pub raw_scores: Var,
}

/// Result of localizing one description.
#[derive(Clone, Debug, PartialEq)]
pub struct Localization {
    pub bbox: Aabb,
    pub confidence: f64,
    /// Index into the detector's proposals.
    pub proposal: usize,
}

impl<T: Real> RefModel<T> {
    /// Registers detector, language and grounding parameters in that order,
    /// all drawn from one seeded stream.
    pub fn new(cfg: ModelConfig, vocab: Vocabulary, mut table: EmbeddingTable, seed: u64) -> Result<Self> {
        if table.vectors.rows() != vocab.len() || table.dim() != cfg.embedding_dim {
            return Err(Error::Config(format!(
                "embedding table {:?} for vocabulary {} and dim {}",
                table.vectors.shape(),
                vocab.len(),
                cfg.embedding_dim
            )));
        }
        table.frozen = cfg.freeze_embeddings;
        let mut store = ParamStore::new();
        let mut rng = rng_for(seed, stream::INIT, 0);
        let detector = Detector::new(&mut store, &cfg.detector, cfg.features.width(), &mut rng)?;
        let language = LanguageEncoder::new(&mut store, &table, cfg.hidden_dim, &mut rng)?;
        let head = GroundingHead::new(&mut store, cfg.hidden_dim, &mut rng)?;
        Ok(RefModel {
            cfg,
            vocab,
            store,
            detector,
            language,
            head,
        })
    }

    pub fn set_size_templates(&mut self, templates: &[Point3]) -> Result<()> {
        let data = templates.iter().flatten().map(|&v| T::from_f64_lossy(v)).collect();
        self.store.set_value(self.detector.templates, Tensor::new(vec![templates.len(), 3], data)?)
    }

    pub fn size_templates(&self) -> Vec<Point3> {
        self.detector.template_values(&self.store)
    }

    /// Training-time forward over already assembled (and augmented) points.
    /// The fusion mask is the detector's own objectness argmax.
    pub fn forward_sample(&self, tape: &mut Tape<T>, points: &PointMatrix, ids: &[usize], seed: u64) -> Result<SampleForward> {
        let det = self.detector.forward(tape, &self.store, points, seed)?;
        let embedding = self.language.encode(tape, &self.store, ids)?;
        let lang_logits = self.language.classify(tape, &self.store, embedding)?;
        let fused = self.head.fuse(tape, &self.store, det.cluster_features, embedding, &det.proposals.mask)?;
        let raw_scores = self.head.raw_scores(tape, &self.store, fused)?;
        Ok(SampleForward {
            det,
            embedding,
            lang_logits,
            raw_scores,
        })
    }

    pub fn token_ids(&self, tokens: &[String]) -> Vec<usize> {
        self.vocab.encode(tokens, self.language.max_tokens)
    }

    /// Assembles features (no augmentation) and runs the detector.
    pub fn detect(&self, tape: &mut Tape<T>, scene: &Scene, seed: u64) -> Result<DetectorOutput> {
        let points = assemble_features(scene, &self.cfg.features, seed)?;
        self.detector.forward(tape, &self.store, &points, seed)
    }

    /// Proposals that pass the objectness mask and NMS, in NMS order.
    pub fn surviving_proposals(&self, det: &DetectorOutput) -> Result<Vec<usize>> {
        let p = &det.proposals;
        let kept: Vec<usize> = (0..p.len()).filter(|&i| p.mask[i]).collect();
        let boxes: Vec<Aabb> = kept.iter().map(|&i| p.boxes[i]).collect();
        let scores: Vec<f64> = kept.iter().map(|&i| p.objectness[i]).collect();
        Ok(nms(&boxes, &scores, self.cfg.detector.nms_iou)?.into_iter().map(|j| kept[j]).collect())
    }

    /// Scores the surviving proposals against one description and returns
    /// the best; softmax runs over survivors only.
    pub fn ground(&self, tape: &mut Tape<T>, det: &DetectorOutput, tokens: &[String]) -> Result<Localization> {
        let survivors = self.surviving_proposals(det)?;
        if survivors.is_empty() {
            return Err(Error::NoProposals);
        }
        let ids = self.token_ids(tokens);
        let e = self.language.encode(tape, &self.store, &ids)?;
        let c = tape.gather_rows(det.cluster_features, &survivors)?;
        let fused = self.head.fuse(tape, &self.store, c, e, &vec![true; survivors.len()])?;
        let s = self.head.scores(tape, &self.store, fused)?;
        let s: Vec<f64> = tape.value(s)?.data().iter().map(|v| v.as_f64()).collect();
        let mut best = 0;
        for (i, &v) in s.iter().enumerate() {
            if v > s[best] {
                best = i;
            }
        }
        let proposal = survivors[best];
        Ok(Localization {
            bbox: det.proposals.boxes[proposal],
            confidence: s[best],
            proposal,
        })
    }

    /// Detector + grounding for one description.
    pub fn localize(&self, scene: &Scene, tokens: &[String], seed: u64) -> Result<Localization> {
        let mut tape = Tape::new();
        let det = self.detect(&mut tape, scene, seed)?;
        self.ground(&mut tape, &det, tokens)
    }

    /// Scores externally supplied boxes (e.g. ground truth) as if they were
    /// proposals; returns the index of the best one and its confidence.
    pub fn score_boxes(&self, tape: &mut Tape<T>, det: &DetectorOutput, boxes: &[Aabb], tokens: &[String]) -> Result<(usize, f64)> {
        if boxes.is_empty() {
            return Err(Error::NoProposals);
        }
        let centers: Vec<Point3> = boxes.iter().map(|b| b.center).collect();
        let c = self.detector.pool_at(tape, &self.store, det.vote_positions, det.vote_features, &centers)?;
        let ids = self.token_ids(tokens);
        let e = self.language.encode(tape, &self.store, &ids)?;
        let fused = self.head.fuse(tape, &self.store, c, e, &vec![true; boxes.len()])?;
        let s = self.head.scores(tape, &self.store, fused)?;
        let s: Vec<f64> = tape.value(s)?.data().iter().map(|v| v.as_f64()).collect();
        let mut best = 0;
        for (i, &v) in s.iter().enumerate() {
            if v > s[best] {
                best = i;
            }
        }
        Ok((best, s[best]))
    }

    /// Copies every parameter into another precision.
    pub fn cast<U: Real>(&self) -> RefModel<U> {
        RefModel {
            cfg: self.cfg.clone(),
            vocab: self.vocab.clone(),
            store: self.store.cast(),
            detector: self.detector.clone(),
            language: self.language.clone(),
            head: self.head.clone(),
        }
    }
}
