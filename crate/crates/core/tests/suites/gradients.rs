#![allow(dead_code)]

use crate::common::*;
use rand::Rng;

use refer3d::detector::{assign_detection_targets, detection_losses, CLUSTER_DIM};
use refer3d::grounding::{assign_localization_target, GroundingHead};
use refer3d::language::{EmbeddingTable, Vocabulary};
use refer3d::model::RefModel;
use refer3d::scene::{assemble_features, Augmentation};
use refer3d::tensor::{gru_cell, gru_sequence, GruWeights, ParamStore, Tape, Var};
use refer3d::training::{composite_loss, LossWeights};

const CASES: u64 = 10;
const TOL: f64 = 1e-4;

/// Reduces any tensor to a scalar with fixed random weights, so every
/// output entry gets a distinct upstream gradient.
pub fn weighted_sum(t: &mut Tape<f64>, v: Var, seed: u64) -> Var {
    let shape = t.shape(v).unwrap().to_vec();
    let w = rand_tensor(&mut rng(seed ^ 0xabc), &shape, 0.0);
    let w = t.constant(w);
    let p = t.mul(v, w).unwrap();
    t.sum(p).unwrap()
}

pub fn check_unary(seed: u64, gap: f64, op: impl Fn(&mut Tape<f64>, Var) -> Var) -> f64 {
    let mut r = rng(seed);
    let (m, n) = (r.gen_range(1..5), r.gen_range(1..6));
    let x = rand_tensor(&mut r, &[m, n], gap);
    check_inputs(&[x], |t, v| {
        let y = op(t, v[0]);
        weighted_sum(t, y, seed)
    })
}

pub fn check_binary(seed: u64, op: impl Fn(&mut Tape<f64>, Var, Var) -> Var) -> f64 {
    let mut r = rng(seed);
    let (m, n) = (r.gen_range(1..5), r.gen_range(1..6));
    let a = rand_tensor(&mut r, &[m, n], 0.0);
    let b = rand_tensor(&mut r, &[m, n], 0.0);
    check_inputs(&[a, b], |t, v| {
        let y = op(t, v[0], v[1]);
        weighted_sum(t, y, seed)
    })
}

pub fn elementwise_binary_ops() {
    for s in 0..CASES {
        assert!(check_binary(s, |t, a, b| t.add(a, b).unwrap()) < TOL);
        assert!(check_binary(s, |t, a, b| t.sub(a, b).unwrap()) < TOL);
        assert!(check_binary(s, |t, a, b| t.mul(a, b).unwrap()) < TOL);
    }
}

pub fn activations() {
    for s in 0..CASES {
        assert!(check_unary(s, 1e-3, |t, a| t.relu(a).unwrap()) < TOL);
        assert!(check_unary(s, 0.0, |t, a| t.sigmoid(a).unwrap()) < TOL);
        assert!(check_unary(s, 0.0, |t, a| t.tanh(a).unwrap()) < TOL);
        assert!(check_unary(s, 0.0, |t, a| t.scale(a, -1.7).unwrap()) < TOL);
    }
}

pub fn smooth_l1_both_branches() {
    for s in 0..CASES {
        let mut r = rng(s);
        // entries well away from the |x| = delta kink
        let x = refer3d::tensor::Tensor::from_fn(&[3, 4], |_| {
            let v: f64 = if r.gen_bool(0.5) { r.gen_range(0.05..0.9) } else { r.gen_range(1.1..3.0) };
            if r.gen_bool(0.5) { v } else { -v }
        });
        let e = check_inputs(&[x], |t, v| {
            let y = t.smooth_l1(v[0], 1.0).unwrap();
            weighted_sum(t, y, s)
        });
        assert!(e < TOL, "case {s}: {e}");
    }
}

pub fn matmul_and_bias() {
    for s in 0..CASES {
        let mut r = rng(s);
        let (m, k, n) = (r.gen_range(1..5), r.gen_range(1..6), r.gen_range(1..5));
        let a = rand_tensor(&mut r, &[m, k], 0.0);
        let b = rand_tensor(&mut r, &[k, n], 0.0);
        let bias = rand_tensor(&mut r, &[n], 0.0);
        let e = check_inputs(&[a, b, bias], |t, v| {
            let y = t.matmul(v[0], v[1]).unwrap();
            let y = t.add_bias(y, v[2]).unwrap();
            weighted_sum(t, y, s)
        });
        assert!(e < TOL, "case {s}: {e}");
    }
}

pub fn concat_gather_reshape() {
    for s in 0..CASES {
        let mut r = rng(s);
        let m = r.gen_range(2..5);
        let a = rand_tensor(&mut r, &[m, 2], 0.0);
        let b = rand_tensor(&mut r, &[m, 3], 0.0);
        let rows: Vec<usize> = (0..6).map(|_| r.gen_range(0..m)).collect();
        let e = check_inputs(&[a, b], |t, v| {
            let c = t.concat(&[v[0], v[1]]).unwrap();
            let g = t.gather_rows(c, &rows).unwrap();
            let g = t.reshape(g, &[3, 10]).unwrap();
            weighted_sum(t, g, s)
        });
        assert!(e < TOL, "case {s}: {e}");
    }
}

pub fn reductions_and_max_groups() {
    for s in 0..CASES {
        let mut r = rng(s);
        let groups = r.gen_range(1..4);
        let k = r.gen_range(2..5);
        let x = rand_tensor(&mut r, &[groups * k, 3], 0.05);
        let e = check_inputs(&[x.clone()], |t, v| {
            let y = t.max_groups(v[0], k).unwrap();
            weighted_sum(t, y, s)
        });
        assert!(e < TOL, "max_groups case {s}: {e}");
        let e = check_inputs(&[x.clone()], |t, v| {
            let y = t.mul(v[0], v[0]).unwrap();
            t.mean(y).unwrap()
        });
        assert!(e < TOL, "mean case {s}: {e}");
        let e = check_inputs(&[x], |t, v| {
            let y = t.tanh(v[0]).unwrap();
            t.sum(y).unwrap()
        });
        assert!(e < TOL, "sum case {s}: {e}");
    }
}

pub fn softmax_and_cross_entropy() {
    for s in 0..CASES {
        let mut r = rng(s);
        let (m, n) = (r.gen_range(1..5), r.gen_range(2..6));
        let x = rand_tensor(&mut r, &[m, n], 0.0);
        for axis in [0, 1] {
            let e = check_inputs(&[x.clone()], |t, v| {
                let y = t.softmax(v[0], axis).unwrap();
                weighted_sum(t, y, s)
            });
            assert!(e < TOL, "softmax axis {axis} case {s}: {e}");
        }
        let targets: Vec<Option<usize>> =
            (0..m).map(|i| if i == 0 || r.gen_bool(0.7) { Some(r.gen_range(0..n)) } else { None }).collect();
        let e = check_inputs(&[x], |t, v| t.cross_entropy_rows(v[0], &targets).unwrap());
        assert!(e < TOL, "cross entropy case {s}: {e}");
    }
}

pub fn gru_setup(seed: u64, d: usize, h: usize) -> (ParamStore<f64>, GruWeights) {
    let mut store = ParamStore::new();
    let w = GruWeights::new(&mut store, "gru", d, h, &mut rng(seed)).unwrap();
    // non-zero biases so every gate term is exercised
    for id in store.ids().collect::<Vec<_>>() {
        let shape = store.value(id).shape().to_vec();
        store.set_value(id, rand_tensor(&mut rng(seed + 100 + id.index() as u64), &shape, 0.0)).unwrap();
    }
    (store, w)
}

pub fn gru_cell_inputs_and_weights() {
    for s in 0..CASES {
        let (store, w) = gru_setup(s, 4, 3);
        let mut r = rng(s + 7);
        let x = rand_tensor(&mut r, &[1, 4], 0.0);
        let h0 = rand_tensor(&mut r, &[1, 3], 0.0);
        let e = check_inputs(&[x.clone(), h0.clone()], |t, v| {
            let h = gru_cell(t, &store, &w, v[0], v[1]).unwrap();
            weighted_sum(t, h, s)
        });
        assert!(e < TOL, "inputs case {s}: {e}");
        let entries: Vec<_> = store.ids().flat_map(|id| (0..store.value(id).len()).step_by(3).map(move |i| (id, i))).collect();
        let e = check_params(&store, &entries, |st, t| {
            let xv = t.constant(x.clone());
            let hv = t.constant(h0.clone());
            let h = gru_cell(t, st, &w, xv, hv).unwrap();
            weighted_sum(t, h, s)
        });
        assert!(e < TOL, "weights case {s}: {e}");
    }
}

pub fn gru_sequence_matches_cells_and_differentiates() {
    for s in 0..CASES {
        let (store, w) = gru_setup(s, 5, 4);
        let mut r = rng(s + 11);
        let steps = r.gen_range(1..5);
        let xs = rand_tensor(&mut r, &[steps, 5], 0.0);
        let h0 = rand_tensor(&mut r, &[1, 4], 0.0);
        let mut t = Tape::new();
        let xv = t.constant(xs.clone());
        let hv = t.constant(h0.clone());
        let seq = gru_sequence(&mut t, &store, &w, xv, hv).unwrap();
        let mut h = hv;
        for i in 0..steps {
            let x = t.gather_rows(xv, &[i]).unwrap();
            h = gru_cell(&mut t, &store, &w, x, h).unwrap();
        }
        for (a, b) in t.value(seq).unwrap().data().iter().zip(t.value(h).unwrap().data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let e = check_inputs(&[xs, h0], |t, v| {
            let h = gru_sequence(t, &store, &w, v[0], v[1]).unwrap();
            weighted_sum(t, h, s)
        });
        assert!(e < TOL, "case {s}: {e}");
    }
}

pub fn fusion_and_scoring_heads() {
    for s in 0..CASES {
        let mut store = ParamStore::<f64>::new();
        let lang = 6;
        let head = GroundingHead::new(&mut store, lang, &mut rng(s)).unwrap();
        let mut r = rng(s + 3);
        jitter_biases(&mut store, &mut r);
        let m = r.gen_range(2..6);
        let c = rand_tensor(&mut r, &[m, CLUSTER_DIM], 0.0);
        let e = rand_tensor(&mut r, &[1, lang], 0.0);
        let mut mask: Vec<bool> = (0..m).map(|_| r.gen_bool(0.7)).collect();
        mask[0] = true;
        let target = r.gen_range(0..m);
        let loss = |t: &mut Tape<f64>, st: &ParamStore<f64>, cv: Var, ev: Var| -> Var {
            let fused = head.fuse(t, st, cv, ev, &mask).unwrap();
            let raw = head.raw_scores(t, st, fused).unwrap();
            t.cross_entropy_rows(raw, &[Some(target)]).unwrap()
        };
        let err = check_inputs(&[c.clone(), e.clone()], |t, v| loss(t, &store, v[0], v[1]));
        assert!(err < TOL, "inputs case {s}: {err}");
        let entries: Vec<_> = store
            .ids()
            .flat_map(|id| {
                let n = store.value(id).len();
                (0..n).step_by((n / 25).max(1)).map(move |i| (id, i))
            })
            .collect();
        let err = check_params(&store, &entries, |st, t| {
            let cv = t.constant(c.clone());
            let ev = t.constant(e.clone());
            loss(t, st, cv, ev)
        });
        assert!(err < TOL, "weights case {s}: {err}");
        // softmax confidences also differentiate
        let err = check_inputs(&[c.clone(), e.clone()], |t, v| {
            let fused = head.fuse(t, &store, v[0], v[1], &mask).unwrap();
            let sc = head.scores(t, &store, fused).unwrap();
            weighted_sum(t, sc, s)
        });
        assert!(err < TOL, "scores case {s}: {err}");
    }
}

/// Full composite loss of a tiny model, checked on a spread of parameter
/// entries from every group (detector, language, head).
pub fn composite_loss_wrt_parameters() {
    let ds = tiny_dataset(3);
    let cfg = tiny_model_config();
    let vocab = Vocabulary::build(ds.records.iter().flat_map(|r| r.tokens.iter().map(String::as_str)));
    for s in 0..CASES {
        let mut table = EmbeddingTable::random(&vocab, cfg.embedding_dim, s);
        table.frozen = false;
        let mut mcfg = cfg.clone();
        mcfg.freeze_embeddings = false;
        let mut model = RefModel::<f64>::new(mcfg, vocab.clone(), table, s).unwrap();
        jitter_biases(&mut model.store, &mut rng(s + 70));
        let rec = &ds.records[s as usize % ds.records.len()];
        let scene = ds.scene(&rec.scene_id).unwrap();
        let mut points = assemble_features(scene, &model.cfg.features, s).unwrap();
        let aug = Augmentation::sample(s);
        aug.apply_points(&mut points, &model.cfg.features.layout());
        let objects: Vec<_> = scene
            .objects
            .iter()
            .map(|o| {
                let mut o = o.clone();
                o.bbox = aug.apply_box(&o.bbox);
                o
            })
            .collect();
        let target = objects.iter().find(|o| o.object_id == rec.object_id).unwrap().clone();
        let ids = model.token_ids(&rec.tokens);
        // discrete choices (sampling, grouping, targets, mask) are fixed by
        // one reference pass and reused for the perturbed passes
        let mut t0 = Tape::new();
        let f0 = model.forward_sample(&mut t0, &points, &ids, s).unwrap();
        let templates = model.size_templates();
        let det_t = assign_detection_targets(&f0.det.seed_positions, &f0.det.proposals, &objects, &templates, &model.cfg.detector).unwrap();
        let (loc_t, _) = assign_localization_target(&f0.det.proposals.boxes, &target.bbox);
        let mask0 = f0.det.proposals.mask.clone();
        let loss = |st: &ParamStore<f64>, t: &mut Tape<f64>| -> Var {
            let m = RefModel { store: st.clone(), ..model.clone() };
            let f = m.forward_sample(t, &points, &ids, s).unwrap();
            assert_eq!(f.det.proposals.mask, mask0, "objectness mask flipped under perturbation");
            let loc = t.cross_entropy_rows(f.raw_scores, &[Some(loc_t)]).unwrap();
            let det = detection_losses(t, &f.det, &det_t).unwrap();
            let cls = t.cross_entropy(f.lang_logits, target.sem_class).unwrap();
            composite_loss(t, &LossWeights::default(), Some(loc), Some(&det), Some(cls)).unwrap().total
        };
        let mut r = rng(s + 50);
        let mut entries = Vec::new();
        for id in model.store.ids() {
            if !model.store.is_trainable(id) {
                continue;
            }
            let n = model.store.value(id).len();
            for _ in 0..2 {
                entries.push((id, r.gen_range(0..n)));
            }
        }
        let err = check_params(&model.store, &entries, loss);
        assert!(err < TOL, "case {s}: {err}");
    }
}

pub const ALL: &[(&str, fn())] = &[
    ("elementwise_binary_ops", elementwise_binary_ops),
    ("activations", activations),
    ("smooth_l1_both_branches", smooth_l1_both_branches),
    ("matmul_and_bias", matmul_and_bias),
    ("concat_gather_reshape", concat_gather_reshape),
    ("reductions_and_max_groups", reductions_and_max_groups),
    ("softmax_and_cross_entropy", softmax_and_cross_entropy),
    ("gru_cell_inputs_and_weights", gru_cell_inputs_and_weights),
    ("gru_sequence_matches_cells_and_differentiates", gru_sequence_matches_cells_and_differentiates),
    ("fusion_and_scoring_heads", fusion_and_scoring_heads),
    ("composite_loss_wrt_parameters", composite_loss_wrt_parameters),
];
