#![allow(dead_code)]

use crate::common::rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use refer3d::eval_bench::{acc_at_kiou, average_precision, map_at_iou, mean_std, AccTable, Detection};
use refer3d::geometry::{iou3d, Aabb};
use refer3d::grounding::{BoxRecord, Prediction};
use refer3d::scene::{DescriptionRecord, ObjectAnnotation, Scene, NUM_CLASSES};

pub fn unit(center: [f64; 3]) -> Aabb {
    Aabb::new(center, [1.0; 3]).unwrap()
}

pub fn object(id: u32, class: usize, bbox: Aabb) -> ObjectAnnotation {
    ObjectAnnotation { object_id: id, raw_name: format!("thing{class}"), sem_class: class, bbox }
}

pub fn scene(id: &str, objects: Vec<ObjectAnnotation>) -> Scene {
    Scene {
        scene_id: id.into(),
        positions: Vec::new(),
        colors: Vec::new(),
        normals: None,
        appearance: None,
        objects,
    }
}

pub fn record(scene: &str, object_id: u32, ann_id: u32) -> DescriptionRecord {
    DescriptionRecord {
        scene_id: scene.into(),
        object_id,
        ann_id,
        object_name: "thing".into(),
        description: "the thing .".into(),
        tokens: vec!["the".into(), "thing".into(), ".".into()],
    }
}

pub fn predict(r: &DescriptionRecord, b: Option<Aabb>) -> Prediction {
    Prediction {
        scene_id: r.scene_id.clone(),
        object_id: r.object_id,
        ann_id: r.ann_id,
        bbox: b.map(BoxRecord::from),
        confidence: 1.0,
    }
}

/// Unit cubes shifted by `s` along x overlap with IoU (1 - s) / (1 + s).
pub fn shift_for_iou(iou: f64) -> f64 {
    (1.0 - iou) / (1.0 + iou)
}

pub fn accuracy_hand_counts() {
    let s = scene("s0", vec![object(0, 1, unit([0.0; 3])), object(1, 2, unit([3.0, 0.0, 0.0]))]);
    let recs = [record("s0", 0, 0), record("s0", 1, 0)];
    let preds = [
        predict(&recs[0], Some(unit([shift_for_iou(0.3), 0.0, 0.0]))),
        predict(&recs[1], Some(unit([3.0 + shift_for_iou(0.6), 0.0, 0.0]))),
    ];
    let refs: Vec<&DescriptionRecord> = recs.iter().collect();
    let scenes = [s];
    let a25 = acc_at_kiou(&preds, &refs, &scenes, 0.25).unwrap();
    let a50 = acc_at_kiou(&preds, &refs, &scenes, 0.5).unwrap();
    assert_eq!((a25.overall.hits, a25.overall.total), (2, 2));
    assert_eq!((a50.overall.hits, a50.overall.total), (1, 2));
    assert_eq!(a25.overall.rate(), 1.0);
    assert_eq!(a50.overall.rate(), 0.5);
}

pub fn strata_and_misses() {
    // two chairs (class 2) and one table (class 6)
    let s = scene(
        "s1",
        vec![object(0, 2, unit([0.0; 3])), object(1, 2, unit([2.0, 0.0, 0.0])), object(2, 6, unit([4.0, 0.0, 0.0]))],
    );
    let recs = [record("s1", 0, 0), record("s1", 1, 0), record("s1", 2, 0), record("s1", 2, 1)];
    let preds = [
        predict(&recs[0], Some(unit([0.0; 3]))),
        predict(&recs[1], Some(unit([0.0; 3]))),
        predict(&recs[2], Some(unit([4.0, 0.0, 0.0]))),
        predict(&recs[3], None),
    ];
    let refs: Vec<&DescriptionRecord> = recs.iter().collect();
    let t = AccTable::compute(&preds, &refs, &[s]).unwrap();
    assert_eq!(t.counts, [2, 2, 4]);
    assert_eq!(t.values, [0.5, 0.5, 0.5, 0.5, 0.5, 0.5]);
}

pub fn prediction_bookkeeping_errors() {
    let s = scene("s0", vec![object(0, 1, unit([0.0; 3]))]);
    let r = record("s0", 0, 0);
    let p = predict(&r, None);
    let scenes = [s];
    assert!(acc_at_kiou(&[p.clone(), p.clone()], &[&r], &scenes, 0.25).is_err());
    assert!(acc_at_kiou(&[], &[&r], &scenes, 0.25).is_err());
    let other = record("s0", 0, 7);
    assert!(acc_at_kiou(&[p, predict(&other, None)], &[&r], &scenes, 0.25).is_err());
}

pub fn one_correct_one_wrong_gives_full_ap() {
    let s = scene("s0", vec![object(0, 3, unit([0.0; 3]))]);
    let dets = [
        Detection { scene_id: "s0".into(), class: 3, bbox: unit([0.0; 3]), confidence: 0.9 },
        Detection { scene_id: "s0".into(), class: 3, bbox: unit([5.0, 0.0, 0.0]), confidence: 0.8 },
    ];
    let rep = map_at_iou(&dets, &[s], 0.25);
    assert_eq!(rep.ap[3], Some(1.0));
    assert_eq!(rep.map, 1.0);
    // swapping the confidences halves it: precision 1/2 at full recall
    let mut swapped = dets.clone();
    swapped[0].confidence = 0.7;
    let rep = map_at_iou(&swapped, &[scene("s0", vec![object(0, 3, unit([0.0; 3]))])], 0.25);
    assert_eq!(rep.ap[3], Some(0.5));
}

pub fn ap_hand_curves() {
    assert_eq!(average_precision(&[], 3), 0.0);
    assert_eq!(average_precision(&[true, true], 2), 1.0);
    // ranks: T F T, 2 gt → recall .5 @ p 1, recall 1 @ p 2/3
    assert!((average_precision(&[true, false, true], 2) - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
    // one gt never found
    assert!((average_precision(&[false, true], 2) - 0.25).abs() < 1e-12);
}

/// Exhaustive oracle: every detection tries every same-class GT box of its
/// scene; AP sums, over each true positive, the best precision reachable
/// at that rank or later.
pub fn brute_force_map(dets: &[Detection], scenes: &[Scene], thr: f64) -> (Vec<Option<f64>>, f64) {
    let mut out = vec![None; NUM_CLASSES];
    for (class, slot) in out.iter_mut().enumerate() {
        let gt: Vec<(usize, usize, Aabb)> = scenes
            .iter()
            .enumerate()
            .flat_map(|(si, s)| {
                s.objects.iter().enumerate().filter(|(_, o)| o.sem_class == class).map(move |(oi, o)| (si, oi, o.bbox))
            })
            .collect();
        if gt.is_empty() {
            continue;
        }
        let mut ranked: Vec<&Detection> = dets.iter().filter(|d| d.class == class).collect();
        // stable, descending
        for i in 1..ranked.len() {
            let mut j = i;
            while j > 0 && ranked[j - 1].confidence < ranked[j].confidence {
                ranked.swap(j - 1, j);
                j -= 1;
            }
        }
        let mut taken = vec![false; gt.len()];
        let mut tp = Vec::new();
        for d in &ranked {
            let si = scenes.iter().position(|s| s.scene_id == d.scene_id);
            let mut best: Option<(usize, f64)> = None;
            for (g, &(gs, _, b)) in gt.iter().enumerate() {
                if Some(gs) != si {
                    continue;
                }
                let v = iou3d(&d.bbox, &b);
                if best.map_or(true, |(_, bv)| v > bv) {
                    best = Some((g, v));
                }
            }
            let hit = match best {
                Some((g, v)) if v >= thr && !taken[g] => {
                    taken[g] = true;
                    true
                }
                _ => false,
            };
            tp.push(hit);
        }
        let n = tp.len();
        let prec: Vec<f64> = (0..n).map(|k| tp[..=k].iter().filter(|&&t| t).count() as f64 / (k + 1) as f64).collect();
        let mut ap = 0.0;
        for k in 0..n {
            if tp[k] {
                let best_later = prec[k..].iter().cloned().fold(0.0, f64::max);
                ap += best_later / gt.len() as f64;
            }
        }
        *slot = Some(ap);
    }
    let present: Vec<f64> = out.iter().flatten().copied().collect();
    let map = if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
    (out, map)
}

pub fn random_instance(r: &mut ChaCha8Rng) -> (Vec<Scene>, Vec<Detection>) {
    let classes = [1usize, 4, 9];
    let mut scenes = Vec::new();
    let mut id = 0;
    for s in 0..r.gen_range(1..=3) {
        let objs = (0..r.gen_range(1..=4))
            .map(|k| {
                id += 1;
                let c = classes[r.gen_range(0..3)];
                object(id, c, Aabb::new([k as f64 * 2.5, 0.0, 0.0], [r.gen_range(0.5..1.5), 1.0, 1.0]).unwrap())
            })
            .collect();
        scenes.push(scene(&format!("s{s}"), objs));
    }
    let mut dets = Vec::new();
    for &c in &classes {
        for _ in 0..r.gen_range(0..=5) {
            let s = &scenes[r.gen_range(0..scenes.len())];
            let anchor = s.objects[r.gen_range(0..s.objects.len())].bbox;
            let jitter = [0, 1, 2].map(|_| r.gen_range(-0.6..0.6));
            let center = [0, 1, 2].map(|i| anchor.center[i] + jitter[i]);
            dets.push(Detection {
                scene_id: s.scene_id.clone(),
                class: c,
                bbox: Aabb::new(center, anchor.size).unwrap(),
                confidence: (r.gen_range(0..10) as f64) / 10.0,
            });
        }
    }
    (scenes, dets)
}

pub fn map_matches_brute_force_on_small_sets() {
    let mut r = rng(11);
    for case in 0..500 {
        let (scenes, dets) = random_instance(&mut r);
        for thr in [0.25, 0.5] {
            let rep = map_at_iou(&dets, &scenes, thr);
            let (ap, map) = brute_force_map(&dets, &scenes, thr);
            for (a, b) in rep.ap.iter().zip(&ap) {
                match (a, b) {
                    (Some(x), Some(y)) => assert!((x - y).abs() < 1e-12, "case {case}: {x} vs {y}"),
                    (None, None) => {}
                    _ => panic!("case {case}: class presence differs"),
                }
            }
            assert!((rep.map - map).abs() < 1e-12, "case {case}");
        }
    }
}

pub fn sample_std_by_hand() {
    let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
    assert!((m - 2.5).abs() < 1e-15);
    // Σ(x - m)² = 5, n - 1 = 3
    assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    assert_eq!(mean_std(&[7.0]).1, 0.0);
}

/// One random prediction set: Acc@0.5 never exceeds Acc@0.25 in any
/// stratum, strata partition the records, and record order is irrelevant.
pub fn check_threshold_monotone(seed: u64) {
    let mut r = rng(seed);
    let mut scenes = Vec::new();
    let mut recs = Vec::new();
    for s in 0..r.gen_range(1..4) {
        let n = r.gen_range(1..5);
        let objs: Vec<_> = (0..n)
            .map(|k| object(k, r.gen_range(0..4), unit([k as f64 * 2.0, 0.0, 0.0])))
            .collect();
        for k in 0..n {
            for a in 0..r.gen_range(1..3) {
                recs.push(record(&format!("s{s}"), k, a));
            }
        }
        scenes.push(scene(&format!("s{s}"), objs));
    }
    let preds: Vec<Prediction> = recs
        .iter()
        .map(|rec| {
            if r.gen_bool(0.1) {
                return predict(rec, None);
            }
            let c = [r.gen_range(-1.0..7.0), r.gen_range(-0.5..0.5), r.gen_range(-0.5..0.5)];
            predict(rec, Some(Aabb::new(c, [r.gen_range(0.3..1.6); 3]).unwrap()))
        })
        .collect();
    let refs: Vec<&DescriptionRecord> = recs.iter().collect();
    let t = AccTable::compute(&preds, &refs, &scenes).unwrap();
    for k in 0..3 {
        assert!(t.values[2 * k + 1] <= t.values[2 * k]);
    }
    assert_eq!(t.counts[0] + t.counts[1], t.counts[2]);
    // shuffling record order leaves the table unchanged
    let mut shuffled = refs.clone();
    shuffled.reverse();
    assert_eq!(AccTable::compute(&preds, &shuffled, &scenes).unwrap(), t);
}

pub fn threshold_monotone_on_random_sets() {
    for seed in 0..1000 {
        check_threshold_monotone(seed);
    }
}

pub const ALL: &[(&str, fn())] = &[
    ("accuracy_hand_counts", accuracy_hand_counts),
    ("strata_and_misses", strata_and_misses),
    ("prediction_bookkeeping_errors", prediction_bookkeeping_errors),
    ("one_correct_one_wrong_gives_full_ap", one_correct_one_wrong_gives_full_ap),
    ("ap_hand_curves", ap_hand_curves),
    ("map_matches_brute_force_on_small_sets", map_matches_brute_force_on_small_sets),
    ("sample_std_by_hand", sample_std_by_hand),
    ("threshold_monotone_on_random_sets", threshold_monotone_on_random_sets),
];
