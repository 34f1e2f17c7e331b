//! Axis-aligned boxes and brute-force point-cloud kernels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// Axis-aligned box stored as center and full side lengths (meters).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub center: Point3,
    pub size: Point3,
}

impl Aabb {
    pub fn new(center: Point3, size: Point3) -> Result<Self> {
        if center.iter().chain(&size).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("box".into()));
        }
        if size.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidArgument(format!("box lengths must be positive, got {size:?}")));
        }
        Ok(Aabb { center, size })
    }

    pub fn from_min_max(min: Point3, max: Point3) -> Result<Self> {
        let center = [0, 1, 2].map(|i| 0.5 * (min[i] + max[i]));
        let size = [0, 1, 2].map(|i| max[i] - min[i]);
        Self::new(center, size)
    }

    pub fn min(&self) -> Point3 {
        [0, 1, 2].map(|i| self.center[i] - 0.5 * self.size[i])
    }

    pub fn max(&self) -> Point3 {
        [0, 1, 2].map(|i| self.center[i] + 0.5 * self.size[i])
    }

    pub fn volume(&self) -> f64 {
        self.size.iter().product()
    }

    /// Closed-set membership.
    pub fn contains(&self, p: &Point3) -> bool {
        let (lo, hi) = (self.min(), self.max());
        (0..3).all(|i| p[i] >= lo[i] && p[i] <= hi[i])
    }

    pub fn intersection_volume(&self, other: &Aabb) -> f64 {
        let (alo, ahi, blo, bhi) = (self.min(), self.max(), other.min(), other.max());
        (0..3)
            .map(|i| (ahi[i].min(bhi[i]) - alo[i].max(blo[i])).max(0.0))
            .product()
    }

    /// Smallest box containing both.
    pub fn hull(&self, other: &Aabb) -> Aabb {
        let (alo, ahi, blo, bhi) = (self.min(), self.max(), other.min(), other.max());
        let lo = [0, 1, 2].map(|i| alo[i].min(blo[i]));
        let hi = [0, 1, 2].map(|i| ahi[i].max(bhi[i]));
        Aabb {
            center: [0, 1, 2].map(|i| 0.5 * (lo[i] + hi[i])),
            size: [0, 1, 2].map(|i| hi[i] - lo[i]),
        }
    }

    pub fn translated(&self, t: Point3) -> Aabb {
        Aabb {
            center: [0, 1, 2].map(|i| self.center[i] + t[i]),
            size: self.size,
        }
    }
}

/// Intersection over union of two boxes, in `[0, 1]`.
pub fn iou3d(a: &Aabb, b: &Aabb) -> f64 {
    let inter = a.intersection_volume(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Greedy class-agnostic non-maximum suppression.
///
/// Returns surviving indices in descending score order (ties by index). A
/// box is suppressed when its IoU with an already kept box is at least
/// `iou_threshold`.
pub fn nms(boxes: &[Aabb], scores: &[f64], iou_threshold: f64) -> Result<Vec<usize>> {
    if boxes.len() != scores.len() {
        return Err(Error::InvalidArgument(format!("{} boxes but {} scores", boxes.len(), scores.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("nms scores".into()));
    }
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        if keep.iter().all(|&k| iou3d(&boxes[i], &boxes[k]) < iou_threshold) {
            keep.push(i);
        }
    }
    Ok(keep)
}

fn dist2(a: &Point3, b: &Point3) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Points with optional per-point channels.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    positions: Vec<Point3>,
    channels: Option<(usize, Vec<f64>)>,
}

impl PointSet {
    pub fn new(positions: Vec<Point3>) -> Result<Self> {
        if positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point coordinates".into()));
        }
        Ok(PointSet {
            positions,
            channels: None,
        })
    }

    pub fn with_channels(positions: Vec<Point3>, width: usize, channels: Vec<f64>) -> Result<Self> {
        if channels.len() != width * positions.len() {
            return Err(Error::InvalidArgument(format!(
                "{} channel values for {} points of width {width}",
                channels.len(),
                positions.len()
            )));
        }
        let mut p = Self::new(positions)?;
        p.channels = Some((width, channels));
        Ok(p)
    }

    pub fn positions(&self) -> &[Point3] {
        &self.positions
    }

    pub fn channels(&self) -> Option<(usize, &[f64])> {
        self.channels.as_ref().map(|(w, c)| (*w, c.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Farthest point sampling from a fixed starting index.
///
/// Each next index maximizes the distance to the already chosen set; ties
/// go to the lowest index.
pub fn farthest_point_sample_from(points: &[Point3], k: usize, start: usize) -> Result<Vec<usize>> {
    if k > points.len() {
        return Err(Error::InvalidArgument(format!("cannot sample {k} of {} points", points.len())));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    if start >= points.len() {
        return Err(Error::IndexOutOfRange {
            index: start,
            len: points.len(),
        });
    }
    let mut chosen = Vec::with_capacity(k);
    let mut min_d = vec![f64::INFINITY; points.len()];
    let mut current = start;
    for _ in 0..k {
        chosen.push(current);
        let c = points[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            let d = dist2(p, &c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(chosen)
}

/// Farthest point sampling with the first index drawn from a seeded RNG.
pub fn farthest_point_sample(points: &[Point3], k: usize, seed: u64) -> Result<Vec<usize>> {
    if points.is_empty() {
        return if k == 0 { Ok(Vec::new()) } else { Err(Error::Empty("point set".into())) };
    }
    let start = ChaCha8Rng::seed_from_u64(seed).gen_range(0..points.len());
    farthest_point_sample_from(points, k, start)
}

/// Indices within `radius` of each center, ascending and truncated to
/// `max_k`. An empty neighbourhood falls back to the single nearest point.
pub fn ball_query(points: &[Point3], centers: &[Point3], radius: f64, max_k: usize) -> Result<Vec<Vec<usize>>> {
    if points.is_empty() {
        return Err(Error::Empty("point set".into()));
    }
    if radius <= 0.0 || max_k == 0 {
        return Err(Error::InvalidArgument(format!("radius {radius} / max_k {max_k}")));
    }
    let r2 = radius * radius;
    Ok(centers
        .iter()
        .map(|c| {
            let mut group = Vec::with_capacity(max_k);
            let mut nearest = (f64::INFINITY, 0);
            for (i, p) in points.iter().enumerate() {
                let d = dist2(p, c);
                if d <= r2 {
                    group.push(i);
                    if group.len() == max_k {
                        break;
                    }
                }
                if d < nearest.0 {
                    nearest = (d, i);
                }
            }
            if group.is_empty() {
                group.push(nearest.1);
            }
            group
        })
        .collect())
}

/// Indices and distances of the `k` nearest points, closest first.
pub fn k_nearest(points: &[Point3], query: &Point3, k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = points.iter().enumerate().map(|(i, p)| (i, dist2(p, query))).collect();
    let k = k.min(all.len());
    if k == 0 {
        return Vec::new();
    }
    all.select_nth_unstable_by(k - 1, |a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.into_iter().map(|(i, d)| (i, d.sqrt())).collect()
}

pub fn distance(a: &Point3, b: &Point3) -> f64 {
    dist2(a, b).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(c: Point3) -> Aabb {
        Aabb::new(c, [1.0; 3]).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = cube([0.5; 3]);
        assert_eq!(iou3d(&a, &a), 1.0);
        assert_eq!(iou3d(&a, &cube([5.0, 0.5, 0.5])), 0.0);
        let b = cube([1.0, 0.5, 0.5]);
        assert!((iou3d(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou3d(&a, &b), iou3d(&b, &a));
    }

    #[test]
    fn nested_box_iou_is_volume_ratio() {
        let outer = Aabb::new([0.0; 3], [2.0, 2.0, 2.0]).unwrap();
        let inner = Aabb::new([0.2, 0.1, 0.0], [1.0, 1.0, 1.0]).unwrap();
        assert!((iou3d(&outer, &inner) - 1.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(Aabb::new([0.0; 3], [1.0, 0.0, 1.0]).is_err());
        assert!(Aabb::new([f64::NAN, 0.0, 0.0], [1.0; 3]).is_err());
    }

    #[test]
    fn nms_examples() {
        let a = cube([0.0; 3]);
        assert_eq!(nms(&[a, a], &[0.9, 0.8], 0.5).unwrap(), vec![0]);
        assert_eq!(nms(&[a, a], &[0.8, 0.9], 0.5).unwrap(), vec![1]);
        let far = cube([10.0, 0.0, 0.0]);
        assert_eq!(nms(&[a, far], &[0.1, 0.2], 0.5).unwrap(), vec![1, 0]);
        assert!(nms(&[], &[], 0.25).unwrap().is_empty());
        assert!(nms(&[a], &[0.1, 0.2], 0.25).is_err());
    }

    #[test]
    fn nms_chain_keeps_ends() {
        // A–B and B–C overlap with IoU 1/3, A and C are disjoint.
        let a = cube([0.0; 3]);
        let b = cube([0.5, 0.0, 0.0]);
        let c = cube([1.0, 0.0, 0.0]);
        assert_eq!(nms(&[a, b, c], &[0.9, 0.8, 0.7], 0.3).unwrap(), vec![0, 2]);
    }

    #[test]
    fn fps_examples() {
        let pts: Vec<Point3> = [0.0, 1.0, 2.0, 10.0].iter().map(|&x| [x, 0.0, 0.0]).collect();
        assert_eq!(farthest_point_sample_from(&pts, 2, 0).unwrap(), vec![0, 3]);
        let one = farthest_point_sample(&pts, 1, 7).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one, farthest_point_sample(&pts, 1, 7).unwrap());
        let mut all = farthest_point_sample(&pts, 4, 3).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert!(farthest_point_sample(&pts, 5, 0).is_err());
    }

    #[test]
    fn ball_query_examples() {
        let pts: Vec<Point3> = vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]];
        let g = ball_query(&pts, &[[1.0, 0.0, 0.0]], 1e-6, 4).unwrap();
        assert_eq!(g, vec![vec![1]]);
        let g = ball_query(&pts, &[[0.3, 0.3, 0.0]], 100.0, 10).unwrap();
        assert_eq!(g, vec![vec![0, 1, 2]]);
        let g = ball_query(&pts, &[[0.0, 1.9, 5.0]], 0.5, 10).unwrap();
        assert_eq!(g, vec![vec![2]], "falls back to nearest point");
        assert!(ball_query(&[], &[[0.0; 3]], 1.0, 1).is_err());
    }
}
