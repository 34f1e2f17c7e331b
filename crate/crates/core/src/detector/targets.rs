use super::{DetectorConfig, DetectorOutput, Proposals};
use crate::error::{Error, Result};
use crate::geometry::{distance, Point3};
use crate::scene::{ObjectAnnotation, Scene, NUM_CLASSES};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Supervision for one detector forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionTargets {
    /// Seeds lying inside some GT box, with that box's center.
    pub vote_seeds: Vec<usize>,
    pub vote_targets: Vec<Point3>,
    /// Per proposal: `Some(1)` positive, `Some(0)` negative, `None` ignored.
    pub objectness: Vec<Option<usize>>,
    pub positives: Vec<usize>,
    /// GT object index matched to each positive.
    pub matched: Vec<usize>,
    pub center_targets: Vec<Point3>,
    pub class_targets: Vec<usize>,
    pub residual_targets: Vec<Point3>,
}

/// Assigns vote, objectness and box targets against the (augmented) GT
/// objects of the scene.
pub fn assign_detection_targets(
    seed_positions: &[Point3],
    proposals: &Proposals,
    objects: &[ObjectAnnotation],
    templates: &[Point3],
    cfg: &DetectorConfig,
) -> Result<DetectionTargets> {
    if objects.is_empty() {
        return Err(Error::Empty("scene without objects".into()));
    }
    let mut t = DetectionTargets {
        vote_seeds: Vec::new(),
        vote_targets: Vec::new(),
        objectness: Vec::with_capacity(proposals.len()),
        positives: Vec::new(),
        matched: Vec::new(),
        center_targets: Vec::new(),
        class_targets: Vec::new(),
        residual_targets: Vec::new(),
    };
    for (i, p) in seed_positions.iter().enumerate() {
        // smallest containing box wins; ties keep the earlier object
        let mut best: Option<&ObjectAnnotation> = None;
        for o in objects.iter().filter(|o| o.bbox.contains(p)) {
            if best.map_or(true, |b| o.bbox.volume() < b.bbox.volume()) {
                best = Some(o);
            }
        }
        if let Some(o) = best {
            t.vote_seeds.push(i);
            t.vote_targets.push(o.bbox.center);
        }
    }
    for (i, c) in proposals.cluster_centers.iter().enumerate() {
        let (j, d) = objects
            .iter()
            .enumerate()
            .map(|(j, o)| (j, distance(c, &o.bbox.center)))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        if d <= cfg.near() {
            t.objectness.push(Some(1));
            let o = &objects[j];
            t.positives.push(i);
            t.matched.push(j);
            t.center_targets.push(o.bbox.center);
            t.class_targets.push(o.sem_class);
            let tmpl = templates[o.sem_class];
            t.residual_targets.push([0, 1, 2].map(|d| o.bbox.size[d] / tmpl[d] - 1.0));
        } else if d > cfg.far() {
            t.objectness.push(Some(0));
        } else {
            t.objectness.push(None);
        }
    }
    Ok(t)
}

/// Unweighted detection loss terms.
#[derive(Clone, Copy, Debug)]
pub struct DetectionLosses {
    pub vote: Var,
    pub objectness: Var,
    pub center: Var,
    pub size_cls: Var,
    pub size_res: Var,
    pub sem: Var,
}

fn points_tensor<T: Real>(pts: &[Point3]) -> Result<Tensor<T>> {
    Tensor::new(vec![pts.len(), 3], pts.iter().flatten().map(|&v| T::from_f64_lossy(v)).collect())
}

/// `Σ_rows Σ_xyz smoothL1(pred − target) / rows`, or exactly 0 with no rows.
fn regression<T: Real>(tape: &mut Tape<T>, pred: Var, rows: &[usize], targets: &[Point3]) -> Result<Var> {
    if rows.is_empty() {
        return Ok(tape.constant(Tensor::scalar(T::zero())));
    }
    let p = tape.gather_rows(pred, rows)?;
    let t = tape.constant(points_tensor(targets)?);
    let diff = tape.sub(p, t)?;
    let l = tape.smooth_l1(diff, T::one())?;
    let s = tape.sum(l)?;
    tape.scale(s, T::from_f64_lossy(1.0 / rows.len() as f64))
}

pub fn detection_losses<T: Real>(
    tape: &mut Tape<T>,
    out: &DetectorOutput,
    t: &DetectionTargets,
) -> Result<DetectionLosses> {
    let vote = regression(tape, out.vote_positions, &t.vote_seeds, &t.vote_targets)?;
    let objectness = tape.cross_entropy_rows(out.objectness_logits, &t.objectness)?;
    let center = regression(tape, out.centers, &t.positives, &t.center_targets)?;
    let m = t.objectness.len();
    let mut cls: Vec<Option<usize>> = vec![None; m];
    for (&i, &c) in t.positives.iter().zip(&t.class_targets) {
        cls[i] = Some(c);
    }
    let sem = tape.cross_entropy_rows(out.sem_logits, &cls)?;
    let size_cls = tape.cross_entropy_rows(out.size_cls_logits, &cls)?;
    let size_res = if t.positives.is_empty() {
        tape.constant(Tensor::scalar(T::zero()))
    } else {
        // pick each positive's residual triple for its GT class
        let p = t.positives.len();
        let rows = tape.gather_rows(out.size_residuals, &t.positives)?;
        let mut mask = vec![T::zero(); p * 3 * NUM_CLASSES];
        for (r, &c) in t.class_targets.iter().enumerate() {
            for d in 0..3 {
                mask[r * 3 * NUM_CLASSES + 3 * c + d] = T::one();
            }
        }
        let mask = tape.constant(Tensor::new(vec![p, 3 * NUM_CLASSES], mask)?);
        let picked = tape.mul(rows, mask)?;
        let fold = Tensor::from_fn(&[3 * NUM_CLASSES, 3], |i| if (i / 3) % 3 == i % 3 { T::one() } else { T::zero() });
        let fold = tape.constant(fold);
        let sel = tape.matmul(picked, fold)?;
        let all: Vec<usize> = (0..p).collect();
        regression(tape, sel, &all, &t.residual_targets)?
    };
    Ok(DetectionLosses {
        vote,
        objectness,
        center,
        size_cls,
        size_res,
        sem,
    })
}

/// Mean GT box lengths per class over `scenes`; classes never seen keep a
/// unit cube.
pub fn size_templates_from<'a>(scenes: impl IntoIterator<Item = &'a Scene>) -> Vec<Point3> {
    let mut sum = vec![[0.0; 3]; NUM_CLASSES];
    let mut count = vec![0usize; NUM_CLASSES];
    for s in scenes {
        for o in &s.objects {
            for d in 0..3 {
                sum[o.sem_class][d] += o.bbox.size[d];
            }
            count[o.sem_class] += 1;
        }
    }
    sum.iter()
        .zip(&count)
        .map(|(s, &n)| if n == 0 { [1.0; 3] } else { s.map(|v| v / n as f64) })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Aabb;

    fn obj(id: u32, class: usize, center: Point3, size: Point3) -> ObjectAnnotation {
        ObjectAnnotation {
            object_id: id,
            raw_name: String::new(),
            sem_class: class,
            bbox: Aabb::new(center, size).unwrap(),
        }
    }

    fn proposals(centers: Vec<Point3>) -> Proposals {
        let m = centers.len();
        Proposals {
            boxes: centers.iter().map(|&c| Aabb { center: c, size: [1.0; 3] }).collect(),
            cluster_centers: centers,
            objectness: vec![0.5; m],
            mask: vec![true; m],
            sem_class: vec![0; m],
            sem_logits: vec![vec![0.0; NUM_CLASSES]; m],
        }
    }

    #[test]
    fn thresholds_and_ties() {
        let objects = vec![
            obj(0, 2, [0.0, 0.0, 0.5], [2.0, 2.0, 1.0]),
            obj(1, 4, [0.2, 0.0, 0.5], [0.5, 0.5, 0.5]),
        ];
        let templates = vec![[1.0; 3]; NUM_CLASSES];
        let seeds = [[0.2, 0.0, 0.5], [0.9, 0.9, 0.5], [5.0, 5.0, 5.0]];
        let props = proposals(vec![[0.0, 0.0, 0.5], [1.0, 0.0, 1.5], [0.0, 0.45, 0.5]]);
        let t = assign_detection_targets(&seeds, &props, &objects, &templates, &DetectorConfig::default()).unwrap();
        assert_eq!(t.vote_seeds, [0, 1]);
        assert_eq!(t.vote_targets, [[0.2, 0.0, 0.5], [0.0, 0.0, 0.5]]);
        assert_eq!(t.objectness, [Some(1), Some(0), None]);
        assert_eq!(t.center_targets, [[0.0, 0.0, 0.5]]);
        assert_eq!(t.residual_targets, [[1.0, 1.0, 0.0]]);
        assert!(assign_detection_targets(&seeds, &props, &[], &templates, &DetectorConfig::default()).is_err());
    }
}
