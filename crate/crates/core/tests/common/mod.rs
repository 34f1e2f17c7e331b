#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use refer3d::detector::{DetectorConfig, SaStage, CLUSTER_DIM};
use refer3d::model::ModelConfig;
use refer3d::scene::synth::{generate_synthetic_dataset, SynthConfig};
use refer3d::scene::{Dataset, FeatureConfig};
use refer3d::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

pub const H: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform entries in [-1, 1] kept at least `gap` away from zero, so kinks
/// at zero (relu, max ties) are never straddled by a finite difference.
pub fn rand_tensor(r: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = r.gen_range(gap..1.0);
        if r.gen_bool(0.5) { v } else { -v }
    })
}

/// |a - n| / max(|a|, |n|, 1e-2): relative error with a floor, so entries
/// whose true derivative is ~0 are judged on absolute error.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-2)
}

/// Central differences on every input entry against the tape gradient of a
/// scalar function; returns the worst relative error.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], f: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let eval = |vals: &[Tensor<f64>]| -> f64 {
        let mut t = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|v| t.var(v.clone())).collect();
        let out = f(&mut t, &vars);
        t.value(out).unwrap().item()
    };
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| t.var(v.clone())).collect();
    let out = f(&mut t, &vars);
    let g = t.backward(out).unwrap();
    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let analytic = g.wrt(*v).unwrap();
        for i in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
            worst = worst.max(rel_err(analytic.data()[i], numeric));
        }
    }
    worst
}

/// Same check over chosen parameter entries of a store.
pub fn check_params<F>(store: &ParamStore<f64>, entries: &[(ParamId, usize)], f: F) -> f64
where
    F: Fn(&ParamStore<f64>, &mut Tape<f64>) -> Var,
{
    let mut t = Tape::new();
    let out = f(store, &mut t);
    let g = t.backward(out).unwrap();
    let mut worst = 0.0f64;
    for &(id, i) in entries {
        let v = t.param(store, id);
        let analytic = g.get(v).map_or(0.0, |gt| gt.data()[i]);
        let mut s = store.clone();
        s.value_mut(id).data_mut()[i] += H;
        let mut tp = Tape::new();
        let o = f(&s, &mut tp);
        let fp = tp.value(o).unwrap().item();
        s.value_mut(id).data_mut()[i] -= 2.0 * H;
        let mut tm = Tape::new();
        let o = f(&s, &mut tm);
        let fm = tm.value(o).unwrap().item();
        let numeric = (fp - fm) / (2.0 * H);
        worst = worst.max(rel_err(analytic, numeric));
    }
    worst
}

/// A detector small enough for finite differences and quick training.
pub fn tiny_detector() -> DetectorConfig {
    DetectorConfig {
        sa: vec![
            SaStage { num_centers: 64, radius: 0.4, max_k: 8, widths: vec![16] },
            SaStage { num_centers: 16, radius: 0.8, max_k: 8, widths: vec![16] },
        ],
        fp: vec![vec![16]],
        vote_hidden: 16,
        num_proposals: 8,
        cluster_k: 4,
        cluster_widths: vec![CLUSTER_DIM],
        proposal_hidden: 16,
        ..Default::default()
    }
}

pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        features: FeatureConfig { num_points: 256, ..Default::default() },
        detector: tiny_detector(),
        embedding_dim: 12,
        hidden_dim: 10,
        ..Default::default()
    }
}

pub fn tiny_synth() -> SynthConfig {
    SynthConfig {
        train_scenes: 6,
        val_scenes: 3,
        points_per_scene: 800,
        objects_per_scene: (3, 5),
        ..Default::default()
    }
}

pub fn tiny_dataset(seed: u64) -> Dataset {
    generate_synthetic_dataset(&tiny_synth(), seed).unwrap()
}

/// Moves every bias off zero. Zero-initialised biases put masked (all-zero)
/// rows exactly on the relu kink, where central differences halve the slope.
pub fn jitter_biases(store: &mut ParamStore<f64>, r: &mut ChaCha8Rng) {
    let ids: Vec<ParamId> = store.ids().filter(|&id| store.name(id).ends_with("bias")).collect();
    for id in ids {
        for v in store.value_mut(id).data_mut() {
            let m: f64 = r.gen_range(0.05..0.2);
            *v += if r.gen_bool(0.5) { m } else { -m };
        }
    }
}

/// One `#[test]` per named function of a check suite module.
#[allow(unused_macros)]
macro_rules! suite_tests {
    ($m:ident: $($name:ident),* $(,)?) => {
        $(
            #[test]
            fn $name() {
                $m::$name()
            }
        )*
    };
}
