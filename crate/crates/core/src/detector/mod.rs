//! Voting detector: set-abstraction backbone, per-seed votes, vote clusters
//! and the proposal heads.

mod targets;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::geometry::{ball_query, farthest_point_sample, k_nearest, Aabb, Point3};
use crate::scene::{PointMatrix, NUM_CLASSES};
use crate::seed::{derive_seed, stream};
use crate::tensor::{Linear, Mlp, ParamId, ParamStore, Real, Tape, Tensor, Var};

pub use targets::{assign_detection_targets, detection_losses, size_templates_from, DetectionLosses, DetectionTargets};

/// Smallest decoded box length, meters.
pub const MIN_BOX_LENGTH: f64 = 0.01;
pub const CLUSTER_DIM: usize = 128;

/// One set-abstraction stage: sample, group, shared layers, max-pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaStage {
    pub num_centers: usize,
    pub radius: f64,
    pub max_k: usize,
    /// Output widths of the shared layers; the input width is implied.
    pub widths: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub sa: Vec<SaStage>,
    /// One entry per feature-propagation stage, deepest first.
    pub fp: Vec<Vec<usize>>,
    pub vote_hidden: usize,
    pub num_proposals: usize,
    pub cluster_radius: f64,
    pub cluster_k: usize,
    pub cluster_widths: Vec<usize>,
    pub proposal_hidden: usize,
    /// Objectness: positive within `d_near · target_scale` of a GT center,
    /// negative beyond `d_far · target_scale`.
    pub d_near: f64,
    pub d_far: f64,
    pub target_scale: f64,
    pub nms_iou: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            sa: vec![
                SaStage { num_centers: 256, radius: 0.3, max_k: 16, widths: vec![32, 64] },
                SaStage { num_centers: 64, radius: 0.6, max_k: 16, widths: vec![64, 128] },
            ],
            fp: vec![vec![128]],
            vote_hidden: 128,
            num_proposals: 32,
            cluster_radius: 0.3,
            cluster_k: 16,
            cluster_widths: vec![64, CLUSTER_DIM],
            proposal_hidden: 128,
            d_near: 0.3,
            d_far: 0.6,
            target_scale: 1.0,
            nms_iou: 0.25,
        }
    }
}

impl DetectorConfig {
    /// Four abstraction and two propagation stages with 256 proposals.
    pub fn full_scale() -> Self {
        DetectorConfig {
            sa: vec![
                SaStage { num_centers: 2048, radius: 0.2, max_k: 64, widths: vec![64, 64, 128] },
                SaStage { num_centers: 1024, radius: 0.4, max_k: 32, widths: vec![128, 128, 256] },
                SaStage { num_centers: 512, radius: 0.8, max_k: 16, widths: vec![128, 128, 256] },
                SaStage { num_centers: 256, radius: 1.2, max_k: 16, widths: vec![128, 128, 256] },
            ],
            fp: vec![vec![256, 256], vec![256, 256]],
            vote_hidden: 256,
            num_proposals: 256,
            cluster_radius: 0.3,
            cluster_k: 16,
            cluster_widths: vec![128, 128, CLUSTER_DIM],
            proposal_hidden: 128,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.sa.is_empty() {
            return bad("detector needs at least one abstraction stage".into());
        }
        if self.fp.len() >= self.sa.len() + 1 {
            return bad(format!("{} propagation stages for {} abstraction stages", self.fp.len(), self.sa.len()));
        }
        for (i, s) in self.sa.iter().enumerate() {
            if s.num_centers == 0 || s.max_k == 0 || s.radius <= 0.0 || s.widths.is_empty() {
                return bad(format!("abstraction stage {i} is degenerate"));
            }
        }
        if self.fp.iter().any(|w| w.is_empty()) {
            return bad("empty propagation stage".into());
        }
        if self.num_proposals == 0 || self.cluster_k == 0 || self.cluster_radius <= 0.0 {
            return bad("proposal count, cluster size and radius must be positive".into());
        }
        if self.cluster_widths.last() != Some(&CLUSTER_DIM) {
            return bad(format!("cluster features must end at width {CLUSTER_DIM}"));
        }
        if !(self.d_near > 0.0 && self.d_near <= self.d_far && self.target_scale > 0.0) {
            return bad("need 0 < d_near <= d_far and a positive target scale".into());
        }
        Ok(())
    }

    /// Number of seeds fed to the voting module.
    pub fn num_seeds(&self) -> usize {
        let level = self.sa.len() - self.fp.len();
        if level == 0 {
            usize::MAX
        } else {
            self.sa[level - 1].num_centers
        }
    }

    pub fn near(&self) -> f64 {
        self.d_near * self.target_scale
    }

    pub fn far(&self) -> f64 {
        self.d_far * self.target_scale
    }
}

/// Learned detector; parameters live under the `det.` prefix.
#[derive(Clone, Debug)]
pub struct Detector {
    pub cfg: DetectorConfig,
    pub input_channels: usize,
    sa: Vec<Mlp>,
    fp: Vec<Mlp>,
    vote_hidden: Mlp,
    vote_xyz: Linear,
    vote_feat: Linear,
    cluster: Mlp,
    proposal_hidden: Mlp,
    objectness: Linear,
    center: Linear,
    sem: Linear,
    size_cls: Linear,
    size_res: Linear,
    pub templates: ParamId,
}

/// Detector forward state for one point cloud. Positions are kept as plain
/// values; everything learned is a tape handle.
#[derive(Clone, Debug)]
pub struct DetectorOutput {
    pub seed_positions: Vec<Point3>,
    pub seed_features: Var,
    pub vote_positions: Var,
    pub vote_features: Var,
    /// `[M, 3]`, the cluster centers (vote positions chosen by sampling).
    pub cluster_centers: Var,
    /// `[M, 128]`.
    pub cluster_features: Var,
    pub objectness_logits: Var,
    /// Box centers, `[M, 3]`.
    pub centers: Var,
    pub sem_logits: Var,
    pub size_cls_logits: Var,
    /// `[M, 54]`, residual triple per size class.
    pub size_residuals: Var,
    pub proposals: Proposals,
}

/// Decoded proposals, plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct Proposals {
    pub cluster_centers: Vec<Point3>,
    pub boxes: Vec<Aabb>,
    /// Softmax probability of the "object" logit.
    pub objectness: Vec<f64>,
    /// Objectness argmax, the binary proposal mask.
    pub mask: Vec<bool>,
    pub sem_class: Vec<usize>,
    pub sem_logits: Vec<Vec<f64>>,
}

impl Proposals {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn values<T: Real>(tape: &Tape<T>, v: Var) -> Result<Vec<f64>> {
    Ok(tape.value(v)?.data().iter().map(|x| x.as_f64()).collect())
}

fn to_points(flat: &[f64]) -> Vec<Point3> {
    flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

/// Pads every group to exactly `k` members by repeating its first member.
fn pad_groups(groups: Vec<Vec<usize>>, k: usize) -> Vec<usize> {
    let mut flat = Vec::with_capacity(groups.len() * k);
    for g in groups {
        let first = g[0];
        flat.extend(g.iter().copied().take(k));
        flat.extend(std::iter::repeat(first).take(k.saturating_sub(g.len())));
    }
    flat
}

/// Dense inverse-distance weights of the 3 nearest `src` points for every
/// `dst` point, `[dst, src]`.
fn interpolation_matrix<T: Real>(dst: &[Point3], src: &[Point3]) -> Result<Tensor<T>> {
    let mut data = vec![T::zero(); dst.len() * src.len()];
    for (i, p) in dst.iter().enumerate() {
        let nn = k_nearest(src, p, 3);
        let w: Vec<f64> = nn.iter().map(|&(_, d)| 1.0 / (d + 1e-8)).collect();
        let total: f64 = w.iter().sum();
        for (&(j, _), wj) in nn.iter().zip(&w) {
            data[i * src.len() + j] = T::from_f64_lossy(wj / total);
        }
    }
    Tensor::new(vec![dst.len(), src.len()], data)
}

impl Detector {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        cfg: &DetectorConfig,
        input_channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut sa = Vec::new();
        let mut widths = vec![input_channels];
        for (i, s) in cfg.sa.iter().enumerate() {
            let mut dims = vec![3 + widths[i]];
            dims.extend(&s.widths);
            sa.push(Mlp::new(store, &format!("det.sa{i}"), &dims, true, rng)?);
            widths.push(*s.widths.last().expect("validated"));
        }
        let mut fp = Vec::new();
        let mut level = cfg.sa.len();
        let mut carried = widths[level];
        for (i, w) in cfg.fp.iter().enumerate() {
            let mut dims = vec![carried + widths[level - 1]];
            dims.extend(w);
            fp.push(Mlp::new(store, &format!("det.fp{i}"), &dims, true, rng)?);
            carried = *w.last().expect("validated");
            level -= 1;
        }
        let seed_dim = carried;
        let vote_hidden = Mlp::new(store, "det.vote.hidden", &[seed_dim, cfg.vote_hidden], true, rng)?;
        let vote_xyz = Linear::new(store, "det.vote.xyz", cfg.vote_hidden, 3, rng)?;
        let vote_feat = Linear::new(store, "det.vote.feat", cfg.vote_hidden, seed_dim, rng)?;
        let mut dims = vec![3 + seed_dim];
        dims.extend(&cfg.cluster_widths);
        let cluster = Mlp::new(store, "det.cluster", &dims, true, rng)?;
        let ph = cfg.proposal_hidden;
        let proposal_hidden = Mlp::new(store, "det.proposal.hidden", &[CLUSTER_DIM, ph], true, rng)?;
        let objectness = Linear::new(store, "det.proposal.objectness", ph, 2, rng)?;
        let center = Linear::new(store, "det.proposal.center", ph, 3, rng)?;
        let sem = Linear::new(store, "det.proposal.sem", ph, NUM_CLASSES, rng)?;
        let size_cls = Linear::new(store, "det.proposal.size_cls", ph, NUM_CLASSES, rng)?;
        let size_res = Linear::new(store, "det.proposal.size_res", ph, 3 * NUM_CLASSES, rng)?;
        let templates = store.add("det.size_templates", Tensor::full(&[NUM_CLASSES, 3], T::one()))?;
        store.set_trainable(templates, false);
        Ok(Detector {
            cfg: cfg.clone(),
            input_channels,
            sa,
            fp,
            vote_hidden,
            vote_xyz,
            vote_feat,
            cluster,
            proposal_hidden,
            objectness,
            center,
            sem,
            size_cls,
            size_res,
            templates,
        })
    }

    pub fn template_values<T: Real>(&self, store: &ParamStore<T>) -> Vec<Point3> {
        to_points(&store.value(self.templates).data().iter().map(|v| v.as_f64()).collect::<Vec<_>>())
    }

    fn group<T: Real>(
        &self,
        tape: &mut Tape<T>,
        positions: &[Point3],
        features: Option<Var>,
        centers: &[Point3],
        radius: f64,
        k: usize,
    ) -> Result<(Var, usize)> {
        let groups = ball_query(positions, centers, radius, k)?;
        let k = groups.iter().map(Vec::len).max().unwrap_or(1).min(k);
        let flat = pad_groups(groups, k);
        let rel: Vec<T> = flat
            .iter()
            .enumerate()
            .flat_map(|(r, &j)| {
                let c = centers[r / k];
                (0..3).map(move |d| T::from_f64_lossy((positions[j][d] - c[d]) / radius))
            })
            .collect();
        let rel = tape.constant(Tensor::new(vec![flat.len(), 3], rel)?);
        let input = match features {
            Some(f) => {
                let g = tape.gather_rows(f, &flat)?;
                tape.concat(&[rel, g])?
            }
            None => rel,
        };
        Ok((input, k))
    }

    /// Backbone: abstraction stages then propagation stages. Returns seed
    /// positions and features.
    pub fn extract_seeds<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        points: &PointMatrix,
        seed: u64,
    ) -> Result<(Vec<Point3>, Var)> {
        if points.cols != 3 + self.input_channels {
            return Err(shape_err(
                "detector input",
                format!("{} columns, expected {}", points.cols, 3 + self.input_channels),
            ));
        }
        let mut levels: Vec<(Vec<Point3>, Option<Var>)> = Vec::new();
        let input = if self.input_channels > 0 {
            let data = (0..points.rows).flat_map(|i| points.features(i).iter().map(|&v| T::from_f64_lossy(v))).collect();
            Some(tape.constant(Tensor::new(vec![points.rows, self.input_channels], data)?))
        } else {
            None
        };
        levels.push((points.positions(), input));
        for (i, (stage, mlp)) in self.cfg.sa.iter().zip(&self.sa).enumerate() {
            let (pos, feat) = levels.last().expect("input level").clone();
            if stage.num_centers > pos.len() {
                return Err(Error::InvalidArgument(format!(
                    "abstraction stage {i} wants {} centers from {} points",
                    stage.num_centers,
                    pos.len()
                )));
            }
            let idx = farthest_point_sample(&pos, stage.num_centers, derive_seed(seed, stream::FPS, i as u64))?;
            let centers: Vec<Point3> = idx.iter().map(|&j| pos[j]).collect();
            let (grouped, k) = self.group(tape, &pos, feat, &centers, stage.radius, stage.max_k)?;
            let h = mlp.forward(tape, store, grouped)?;
            let pooled = tape.max_groups(h, k)?;
            levels.push((centers, Some(pooled)));
        }
        let (mut pos, mut feat) = levels.pop().expect("at least one stage");
        for mlp in &self.fp {
            let (dst_pos, dst_feat) = levels.pop().expect("validated stage count");
            let w = tape.constant(interpolation_matrix(&dst_pos, &pos)?);
            let up = tape.matmul(w, feat.expect("abstraction output"))?;
            let joined = match dst_feat {
                Some(f) => tape.concat(&[up, f])?,
                None => up,
            };
            feat = Some(mlp.forward(tape, store, joined)?);
            pos = dst_pos;
        }
        Ok((pos, feat.expect("abstraction output")))
    }

    /// Vote positions `seed + Δxyz` and features `feature + Δfeature`.
    pub fn vote<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        seed_positions: &[Point3],
        seed_features: Var,
    ) -> Result<(Var, Var)> {
        let h = self.vote_hidden.forward(tape, store, seed_features)?;
        let dxyz = self.vote_xyz.forward(tape, store, h)?;
        let dfeat = self.vote_feat.forward(tape, store, h)?;
        let base = seed_positions.iter().flatten().map(|&v| T::from_f64_lossy(v)).collect();
        let base = tape.constant(Tensor::new(vec![seed_positions.len(), 3], base)?);
        let pos = tape.add(base, dxyz)?;
        let feat = tape.add(seed_features, dfeat)?;
        Ok((pos, feat))
    }

    /// Samples `M` vote positions as cluster centers and pools member votes
    /// (relative positions scaled by the radius, plus vote features).
    pub fn cluster_votes<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        vote_positions: Var,
        vote_features: Var,
        seed: u64,
    ) -> Result<(Var, Var)> {
        let pos = to_points(&values(tape, vote_positions)?);
        let m = self.cfg.num_proposals;
        if pos.len() < m {
            return Err(Error::InvalidArgument(format!("{} votes for {m} clusters", pos.len())));
        }
        let idx = farthest_point_sample(&pos, m, derive_seed(seed, stream::FPS, 1000))?;
        let centers: Vec<Point3> = idx.iter().map(|&j| pos[j]).collect();
        let groups = ball_query(&pos, &centers, self.cfg.cluster_radius, self.cfg.cluster_k)?;
        let k = groups.iter().map(Vec::len).max().unwrap_or(1).min(self.cfg.cluster_k);
        let flat = pad_groups(groups, k);
        let owners: Vec<usize> = (0..flat.len()).map(|r| idx[r / k]).collect();
        let members = tape.gather_rows(vote_positions, &flat)?;
        let owner_pos = tape.gather_rows(vote_positions, &owners)?;
        let rel = tape.sub(members, owner_pos)?;
        let rel = tape.scale(rel, T::from_f64_lossy(1.0 / self.cfg.cluster_radius))?;
        let feats = tape.gather_rows(vote_features, &flat)?;
        let input = tape.concat(&[rel, feats])?;
        let h = self.cluster.forward(tape, store, input)?;
        let pooled = tape.max_groups(h, k)?;
        let center_var = tape.gather_rows(vote_positions, &idx)?;
        Ok((center_var, pooled))
    }

    /// Pools votes around fixed (non-learned) centers with the cluster
    /// layers, giving `[centers, 128]` features for externally supplied boxes.
    pub fn pool_at<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        vote_positions: Var,
        vote_features: Var,
        centers: &[Point3],
    ) -> Result<Var> {
        let pos = to_points(&values(tape, vote_positions)?);
        let r = self.cfg.cluster_radius;
        let groups = ball_query(&pos, centers, r, self.cfg.cluster_k)?;
        let k = groups.iter().map(Vec::len).max().unwrap_or(1).min(self.cfg.cluster_k);
        let flat = pad_groups(groups, k);
        let owners: Vec<T> = (0..flat.len())
            .flat_map(|row| centers[row / k].map(|v| T::from_f64_lossy(v)))
            .collect();
        let owners = tape.constant(Tensor::new(vec![flat.len(), 3], owners)?);
        let members = tape.gather_rows(vote_positions, &flat)?;
        let rel = tape.sub(members, owners)?;
        let rel = tape.scale(rel, T::from_f64_lossy(1.0 / r))?;
        let feats = tape.gather_rows(vote_features, &flat)?;
        let input = tape.concat(&[rel, feats])?;
        let h = self.cluster.forward(tape, store, input)?;
        tape.max_groups(h, k)
    }

    /// Full detector forward pass on one assembled point matrix.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        points: &PointMatrix,
        seed: u64,
    ) -> Result<DetectorOutput> {
        let (seed_positions, seed_features) = self.extract_seeds(tape, store, points, seed)?;
        let (vote_positions, vote_features) = self.vote(tape, store, &seed_positions, seed_features)?;
        let (cluster_centers, cluster_features) = self.cluster_votes(tape, store, vote_positions, vote_features, seed)?;
        let h = self.proposal_hidden.forward(tape, store, cluster_features)?;
        let objectness_logits = self.objectness.forward(tape, store, h)?;
        let offset = self.center.forward(tape, store, h)?;
        let centers = tape.add(cluster_centers, offset)?;
        let sem_logits = self.sem.forward(tape, store, h)?;
        let size_cls_logits = self.size_cls.forward(tape, store, h)?;
        let size_residuals = self.size_res.forward(tape, store, h)?;
        let proposals = self.decode(tape, store, cluster_centers, objectness_logits, centers, sem_logits, size_cls_logits, size_residuals)?;
        Ok(DetectorOutput {
            seed_positions,
            seed_features,
            vote_positions,
            vote_features,
            cluster_centers,
            cluster_features,
            objectness_logits,
            centers,
            sem_logits,
            size_cls_logits,
            size_residuals,
            proposals,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn decode<T: Real>(
        &self,
        tape: &Tape<T>,
        store: &ParamStore<T>,
        cluster_centers: Var,
        objectness: Var,
        centers: Var,
        sem: Var,
        size_cls: Var,
        size_res: Var,
    ) -> Result<Proposals> {
        let templates = self.template_values(store);
        let m = self.cfg.num_proposals;
        let cc = to_points(&values(tape, cluster_centers)?);
        let ctr = to_points(&values(tape, centers)?);
        let obj = values(tape, objectness)?;
        let sem = values(tape, sem)?;
        let scls = values(tape, size_cls)?;
        let sres = values(tape, size_res)?;
        let mut p = Proposals {
            cluster_centers: cc,
            boxes: Vec::with_capacity(m),
            objectness: Vec::with_capacity(m),
            mask: Vec::with_capacity(m),
            sem_class: Vec::with_capacity(m),
            sem_logits: Vec::with_capacity(m),
        };
        for i in 0..m {
            let (a, b) = (obj[2 * i], obj[2 * i + 1]);
            p.objectness.push(1.0 / (1.0 + (a - b).exp()));
            p.mask.push(b > a);
            let row = &sem[i * NUM_CLASSES..(i + 1) * NUM_CLASSES];
            p.sem_class.push(argmax(row));
            p.sem_logits.push(row.to_vec());
            let c = argmax(&scls[i * NUM_CLASSES..(i + 1) * NUM_CLASSES]);
            let r = &sres[i * 3 * NUM_CLASSES + 3 * c..i * 3 * NUM_CLASSES + 3 * c + 3];
            let size = [0, 1, 2].map(|d| (templates[c][d] * (1.0 + r[d])).max(MIN_BOX_LENGTH));
            p.boxes.push(Aabb { center: ctr[i], size });
        }
        Ok(p)
    }
}
