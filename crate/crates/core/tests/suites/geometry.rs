#![allow(dead_code)]

use crate::common::rng;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use refer3d::geometry::{ball_query, farthest_point_sample_from, iou3d, nms, Aabb, Point3};

pub fn random_box(r: &mut ChaCha8Rng, spread: f64) -> Aabb {
    let c = [0, 1, 2].map(|_| r.gen_range(-spread..spread));
    let s = [0, 1, 2].map(|_| r.gen_range(0.2..1.5));
    Aabb::new(c, s).unwrap()
}

pub fn inside(b: &Aabb, p: &Point3) -> bool {
    let (lo, hi) = (b.min(), b.max());
    (0..3).all(|i| p[i] >= lo[i] && p[i] <= hi[i])
}

/// Uniform samples in the bounding hull of both boxes; IoU is the ratio of
/// samples in both to samples in either.
pub fn monte_carlo_iou(a: &Aabb, b: &Aabb, n: usize, r: &mut ChaCha8Rng) -> f64 {
    let lo = [0, 1, 2].map(|i| a.min()[i].min(b.min()[i]));
    let hi = [0, 1, 2].map(|i| a.max()[i].max(b.max()[i]));
    let (mut both, mut either) = (0usize, 0usize);
    for _ in 0..n {
        let p = [0, 1, 2].map(|i| r.gen_range(lo[i]..hi[i]));
        let (ia, ib) = (inside(a, &p), inside(b, &p));
        both += (ia && ib) as usize;
        either += (ia || ib) as usize;
    }
    both as f64 / either as f64
}

pub fn iou_matches_monte_carlo() {
    let mut r = rng(1);
    let mut mc = rng(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let a = random_box(&mut r, 0.6);
        let b = random_box(&mut r, 0.6);
        let est = monte_carlo_iou(&a, &b, 1_000_000, &mut mc);
        worst = worst.max((iou3d(&a, &b) - est).abs());
    }
    assert!(worst < 5e-3, "worst deviation {worst}");
}

pub fn iou_hand_case() {
    let a = Aabb::new([0.5; 3], [1.0; 3]).unwrap();
    let b = Aabb::new([1.0, 0.5, 0.5], [1.0; 3]).unwrap();
    assert!((iou3d(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
}

/// Straight greedy: walk by descending score, keep a box unless something
/// already kept overlaps it at or above the threshold.
pub fn greedy_oracle(boxes: &[Aabb], scores: &[f64], t: f64) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..boxes.len()).collect();
    let mut keep = Vec::new();
    while !remaining.is_empty() {
        let mut best = 0;
        for k in 1..remaining.len() {
            let (i, j) = (remaining[k], remaining[best]);
            if scores[i] > scores[j] || (scores[i] == scores[j] && i < j) {
                best = k;
            }
        }
        let top = remaining.remove(best);
        keep.push(top);
        remaining.retain(|&i| iou3d(&boxes[i], &boxes[top]) < t);
    }
    keep
}

pub fn nms_survivors_are_separated() {
    let mut r = rng(3);
    for case in 0..1000 {
        let n = r.gen_range(1..30);
        let t = [0.1, 0.25, 0.5][case % 3];
        let boxes: Vec<Aabb> = (0..n).map(|_| random_box(&mut r, 1.5)).collect();
        let scores: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..1.0)).collect();
        let keep = nms(&boxes, &scores, t).unwrap();
        for (x, &i) in keep.iter().enumerate() {
            for &j in &keep[x + 1..] {
                assert!(iou3d(&boxes[i], &boxes[j]) < t);
            }
        }
        for i in 0..n {
            if !keep.contains(&i) {
                assert!(keep.iter().any(|&k| scores[k] >= scores[i] && iou3d(&boxes[i], &boxes[k]) >= t));
            }
        }
        assert_eq!(keep, greedy_oracle(&boxes, &scores, t), "case {case}");
    }
}

pub fn nms_chain_keeps_ends() {
    let a = Aabb::new([0.0, 0.0, 0.0], [1.0; 3]).unwrap();
    let b = Aabb::new([0.5, 0.0, 0.0], [1.0; 3]).unwrap();
    let c = Aabb::new([1.0, 0.0, 0.0], [1.0; 3]).unwrap();
    assert!(iou3d(&a, &b) >= 0.25 && iou3d(&b, &c) >= 0.25 && iou3d(&a, &c) == 0.0);
    assert_eq!(nms(&[a, b, c], &[0.9, 0.8, 0.7], 0.25).unwrap(), vec![0, 2]);
}

pub fn d(a: &Point3, b: &Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

pub fn min_pairwise(pts: &[Point3], idx: &[usize]) -> f64 {
    let mut m = f64::INFINITY;
    for (x, &i) in idx.iter().enumerate() {
        for &j in &idx[x + 1..] {
            m = m.min(d(&pts[i], &pts[j]));
        }
    }
    m
}

pub fn fps_matches_brute_force_max_min() {
    let mut r = rng(4);
    for _ in 0..200 {
        let n = r.gen_range(2..=64);
        let pts: Vec<Point3> = (0..n).map(|_| [0, 1, 2].map(|_| r.gen_range(-2.0..2.0))).collect();
        let k = r.gen_range(1..=n);
        let start = r.gen_range(0..n);
        let got = farthest_point_sample_from(&pts, k, start).unwrap();

        let mut chosen = vec![start];
        while chosen.len() < k {
            // exhaustive: score every unchosen candidate by its distance to
            // the chosen set, take the largest (lowest index on ties)
            let mut best: Option<(usize, f64)> = None;
            for c in 0..n {
                if chosen.contains(&c) {
                    continue;
                }
                let dc = chosen.iter().map(|&s| d(&pts[c], &pts[s])).fold(f64::INFINITY, f64::min);
                if best.map_or(true, |(_, bd)| dc > bd) {
                    best = Some((c, dc));
                }
            }
            let (pick, _) = best.unwrap();
            // no alternative yields a larger min pairwise distance
            let mut with_pick = chosen.clone();
            with_pick.push(pick);
            let achieved = min_pairwise(&pts, &with_pick);
            for c in (0..n).filter(|c| !chosen.contains(c)) {
                let mut alt = chosen.clone();
                alt.push(c);
                assert!(achieved >= min_pairwise(&pts, &alt) - 1e-12);
            }
            chosen.push(pick);
        }
        assert_eq!(got, chosen);
    }
}

pub fn fps_collinear_hand_case() {
    let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [10.0, 0.0, 0.0]];
    assert_eq!(farthest_point_sample_from(&pts, 2, 0).unwrap(), vec![0, 3]);
}

pub fn ball_query_matches_distance_filter() {
    let mut r = rng(5);
    for _ in 0..50 {
        let n = r.gen_range(1..200);
        let pts: Vec<Point3> = (0..n).map(|_| [0, 1, 2].map(|_| r.gen_range(-1.0..1.0))).collect();
        let centers: Vec<Point3> = (0..10).map(|_| [0, 1, 2].map(|_| r.gen_range(-1.0..1.0))).collect();
        let radius = r.gen_range(0.05..0.8);
        let max_k = r.gen_range(1..40);
        let groups = ball_query(&pts, &centers, radius, max_k).unwrap();
        for (c, g) in centers.iter().zip(&groups) {
            let mut expect: Vec<usize> = (0..n).filter(|&i| d(&pts[i], c) <= radius).take(max_k).collect();
            if expect.is_empty() {
                let near = (0..n).min_by(|&i, &j| d(&pts[i], c).total_cmp(&d(&pts[j], c))).unwrap();
                expect.push(near);
            }
            assert_eq!(g, &expect);
        }
    }
}

pub fn arb_box() -> impl Strategy<Value = Aabb> {
    (prop::array::uniform3(-2.0..2.0f64), prop::array::uniform3(0.05..2.0f64))
        .prop_map(|(c, s)| Aabb::new(c, s).unwrap())
}

pub const ALL: &[(&str, fn())] = &[
    ("iou_matches_monte_carlo", iou_matches_monte_carlo),
    ("iou_hand_case", iou_hand_case),
    ("nms_survivors_are_separated", nms_survivors_are_separated),
    ("nms_chain_keeps_ends", nms_chain_keeps_ends),
    ("fps_matches_brute_force_max_min", fps_matches_brute_force_max_min),
    ("fps_collinear_hand_case", fps_collinear_hand_case),
    ("ball_query_matches_distance_filter", ball_query_matches_distance_filter),
];
