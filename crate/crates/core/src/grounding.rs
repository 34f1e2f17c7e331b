//! Fusion of proposal features with the description embedding, proposal
//! scoring and the inference-time selection rule.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detector::CLUSTER_DIM;
use crate::error::{format_err, shape_err, Result};
use crate::geometry::{iou3d, Aabb};
use crate::tensor::{Linear, Mlp, ParamStore, Real, Tape, Tensor, Var};

/// Fusion layers `[C ; e] → 128 → 128` and the scalar scoring layer.
#[derive(Clone, Debug)]
pub struct GroundingHead {
    pub fusion: Mlp,
    pub score: Linear,
    pub lang_dim: usize,
}

impl GroundingHead {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, lang_dim: usize, rng: &mut R) -> Result<Self> {
        let fusion = Mlp::new(
            store,
            "ground.fusion",
            &[CLUSTER_DIM + lang_dim, CLUSTER_DIM, CLUSTER_DIM],
            false,
            rng,
        )?;
        let score = Linear::new(store, "ground.score", CLUSTER_DIM, 1, rng)?;
        Ok(GroundingHead { fusion, score, lang_dim })
    }

    /// Concatenates every cluster row with `e`, zeroes masked rows, then
    /// applies the fusion layers. `clusters` is `[M, 128]`, `e` is `[1, D]`.
    pub fn fuse<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        clusters: Var,
        e: Var,
        mask: &[bool],
    ) -> Result<Var> {
        let m = tape.shape(clusters)?[0];
        if mask.len() != m || tape.shape(e)? != [1, self.lang_dim] {
            return Err(shape_err(
                "fuse",
                format!("{m} clusters, {} mask entries, embedding {:?}", mask.len(), tape.shape(e)?),
            ));
        }
        let expanded = tape.gather_rows(e, &vec![0; m])?;
        let joined = tape.concat(&[clusters, expanded])?;
        let w = CLUSTER_DIM + self.lang_dim;
        let mask = Tensor::from_fn(&[m, w], |i| if mask[i / w] { T::one() } else { T::zero() });
        let mask = tape.constant(mask);
        let gated = tape.mul(joined, mask)?;
        self.fusion.forward(tape, store, gated)
    }

    /// Raw scores as a `[1, M]` row.
    pub fn raw_scores<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, fused: Var) -> Result<Var> {
        let m = tape.shape(fused)?[0];
        let s = self.score.forward(tape, store, fused)?;
        tape.reshape(s, &[1, m])
    }

    /// Confidences: softmax of the raw scores over proposals.
    pub fn scores<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, fused: Var) -> Result<Var> {
        let raw = self.raw_scores(tape, store, fused)?;
        tape.softmax(raw, 1)
    }
}

/// Index of the proposal with the highest IoU against `gt`; the lowest index
/// wins ties, including the all-zero case. The flag tells whether any IoU
/// was positive.
pub fn assign_localization_target(boxes: &[Aabb], gt: &Aabb) -> (usize, bool) {
    let mut best = 0;
    let mut best_iou = f64::NEG_INFINITY;
    for (i, b) in boxes.iter().enumerate() {
        let v = iou3d(b, gt);
        if v > best_iou {
            best = i;
            best_iou = v;
        }
    }
    (best, best_iou > 0.0)
}

/// One localization answer, or a miss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub scene_id: String,
    pub object_id: u32,
    pub ann_id: u32,
    #[serde(rename = "box")]
    pub bbox: Option<BoxRecord>,
    pub confidence: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
}

impl From<Aabb> for BoxRecord {
    fn from(b: Aabb) -> Self {
        BoxRecord {
            cx: b.center[0],
            cy: b.center[1],
            cz: b.center[2],
            rx: b.size[0],
            ry: b.size[1],
            rz: b.size[2],
        }
    }
}

impl BoxRecord {
    pub fn to_aabb(self) -> Result<Aabb> {
        Aabb::new([self.cx, self.cy, self.cz], [self.rx, self.ry, self.rz])
    }
}

impl Prediction {
    pub fn hit(scene_id: &str, object_id: u32, ann_id: u32, b: Aabb, confidence: f64) -> Self {
        Prediction {
            scene_id: scene_id.to_string(),
            object_id,
            ann_id,
            bbox: Some(b.into()),
            confidence,
        }
    }

    pub fn miss(scene_id: &str, object_id: u32, ann_id: u32) -> Self {
        Prediction {
            scene_id: scene_id.to_string(),
            object_id,
            ann_id,
            bbox: None,
            confidence: 0.0,
        }
    }

    pub fn aabb(&self) -> Option<Aabb> {
        self.bbox.and_then(|b| b.to_aabb().ok())
    }

    pub fn key(&self) -> (String, u32, u32) {
        (self.scene_id.clone(), self.object_id, self.ann_id)
    }
}

/// One JSON object per line.
impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_string(self).map_err(|_| fmt::Error)?;
        f.write_str(&s)
    }
}

impl FromStr for Prediction {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_str(s.trim()).map_err(|e| format_err("prediction line", e.to_string()))
    }
}

pub fn parse_predictions(text: &str) -> Result<Vec<Prediction>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(str::parse).collect()
}
