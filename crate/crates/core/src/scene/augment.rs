use rand::Rng;

use super::{FeatureLayout, PointMatrix};
use crate::geometry::{Aabb, Point3};
use crate::seed::{rng_for, stream};

type Mat3 = [[f64; 3]; 3];

fn matmul3(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Rigid training-time transform: `p ↦ R p + t` with `R = R_x R_y R_z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Augmentation {
    pub rotation: Mat3,
    pub translation: Point3,
}

impl Augmentation {
    pub const MAX_ANGLE_DEG: f64 = 5.0;
    pub const MAX_SHIFT: f64 = 0.5;

    pub fn identity() -> Self {
        Self::from_angles([0.0; 3], [0.0; 3])
    }

    /// Angles in radians about x, y and z.
    pub fn from_angles(angles: [f64; 3], translation: Point3) -> Self {
        let (sx, cx) = angles[0].sin_cos();
        let (sy, cy) = angles[1].sin_cos();
        let (sz, cz) = angles[2].sin_cos();
        let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
        let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
        let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
        Augmentation {
            rotation: matmul3(&matmul3(&rx, &ry), &rz),
            translation,
        }
    }

    /// Angles uniform in ±5° about every axis, shift uniform in ±0.5 m.
    pub fn sample(seed: u64) -> Self {
        Self::sample_within(seed, Self::MAX_ANGLE_DEG, Self::MAX_SHIFT)
    }

    pub fn sample_within(seed: u64, max_angle_deg: f64, max_shift: f64) -> Self {
        let mut rng = rng_for(seed, stream::AUGMENT, 0);
        let a = max_angle_deg.to_radians();
        let mut uni = |m: f64| if m > 0.0 { rng.gen_range(-m..=m) } else { 0.0 };
        let angles = [uni(a), uni(a), uni(a)];
        let translation = [uni(max_shift), uni(max_shift), uni(max_shift)];
        Self::from_angles(angles, translation)
    }

    pub fn rotate(&self, v: &Point3) -> Point3 {
        let r = &self.rotation;
        [0, 1, 2].map(|i| r[i][0] * v[0] + r[i][1] * v[1] + r[i][2] * v[2])
    }

    pub fn apply_point(&self, p: &Point3) -> Point3 {
        let q = self.rotate(p);
        [0, 1, 2].map(|i| q[i] + self.translation[i])
    }

    /// Moves positions and rotates normals in place; other channels are
    /// untouched.
    pub fn apply_points(&self, m: &mut PointMatrix, layout: &FeatureLayout) {
        for i in 0..m.rows {
            let row = &mut m.data[i * m.cols..(i + 1) * m.cols];
            let p = self.apply_point(&[row[0], row[1], row[2]]);
            row[..3].copy_from_slice(&p);
            if let Some(c) = layout.normals {
                let n = self.rotate(&[row[c], row[c + 1], row[c + 2]]);
                row[c..c + 3].copy_from_slice(&n);
            }
        }
    }

    /// Inverse motion, `q ↦ Rᵀ (q - t)`.
    pub fn invert_point(&self, q: &Point3) -> Point3 {
        let r = &self.rotation;
        let d = [0, 1, 2].map(|i| q[i] - self.translation[i]);
        [0, 1, 2].map(|j| r[0][j] * d[0] + r[1][j] * d[1] + r[2][j] * d[2])
    }

    /// Whether a transformed point lies in the rigidly moved copy of `b`,
    /// i.e. the oriented box `{R p + t : p ∈ b}`, with slack `eps`.
    pub fn moved_box_contains(&self, b: &Aabb, q: &Point3, eps: f64) -> bool {
        let p = self.invert_point(q);
        let (lo, hi) = (b.min(), b.max());
        (0..3).all(|i| p[i] >= lo[i] - eps && p[i] <= hi[i] + eps)
    }

    /// Box centers follow the rigid motion; lengths are kept, so the
    /// regression target stays axis-aligned.
    pub fn apply_box(&self, b: &Aabb) -> Aabb {
        Aabb {
            center: self.apply_point(&b.center),
            size: b.size,
        }
    }
}
