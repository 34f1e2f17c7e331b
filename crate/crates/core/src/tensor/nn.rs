use rand::Rng;

use super::{ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::error::{shape_err, Result};

/// Uniform initialisation in `±sqrt(6 / (fan_in + fan_out))`.
pub fn init_uniform<T: Real, R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize, shape: &[usize]) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.gen_range(-bound..=bound)))
}

/// Affine map `x · W + b` over rows.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), init_uniform(rng, in_dim, out_dim, &[in_dim, out_dim]))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]))?;
        Ok(Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }
}

/// Stack of [`Linear`] layers with ReLU between them.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    /// Apply ReLU after the final layer too (shared point-wise layers do).
    pub relu_last: bool,
}

impl Mlp {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dims: &[usize],
        relu_last: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(shape_err("mlp", format!("needs at least two widths, got {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect::<Result<_>>()?;
        Ok(Mlp { layers, relu_last })
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, store, h)?;
            if i + 1 < self.layers.len() || self.relu_last {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }
}

/// Gate weights of a GRU cell. Each matrix acts on the concatenation
/// `[x, h]` (or `[x, r ⊙ h]` for the candidate state).
#[derive(Clone, Debug)]
pub struct GruWeights {
    pub w_update: ParamId,
    pub b_update: ParamId,
    pub w_reset: ParamId,
    pub b_reset: ParamId,
    pub w_candidate: ParamId,
    pub b_candidate: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruWeights {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = input_dim + hidden_dim;
        let mat = |store: &mut ParamStore<T>, gate: &str, rng: &mut R| {
            store.add(format!("{name}.w_{gate}"), init_uniform(rng, fan_in, hidden_dim, &[fan_in, hidden_dim]))
        };
        let w_update = mat(store, "update", rng)?;
        let w_reset = mat(store, "reset", rng)?;
        let w_candidate = mat(store, "candidate", rng)?;
        let b_update = store.add(format!("{name}.b_update"), Tensor::zeros(&[hidden_dim]))?;
        let b_reset = store.add(format!("{name}.b_reset"), Tensor::zeros(&[hidden_dim]))?;
        let b_candidate = store.add(format!("{name}.b_candidate"), Tensor::zeros(&[hidden_dim]))?;
        Ok(GruWeights {
            w_update,
            b_update,
            w_reset,
            b_reset,
            w_candidate,
            b_candidate,
            input_dim,
            hidden_dim,
        })
    }
}

/// One GRU step:
///
/// ```text
/// z  = σ([x, h] W_z + b_z)
/// r  = σ([x, h] W_r + b_r)
/// h̃  = tanh([x, r ⊙ h] W_h + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
///
/// `x` is `[1, input_dim]`, `h_prev` is `[1, hidden_dim]`.
pub fn gru_cell<T: Real>(tape: &mut Tape<T>, store: &ParamStore<T>, w: &GruWeights, x: Var, h_prev: Var) -> Result<Var> {
    if tape.shape(x)? != [1, w.input_dim] || tape.shape(h_prev)? != [1, w.hidden_dim] {
        return Err(shape_err(
            "gru_cell",
            format!(
                "x {:?} / h {:?} for input {} hidden {}",
                tape.shape(x)?,
                tape.shape(h_prev)?,
                w.input_dim,
                w.hidden_dim
            ),
        ));
    }
    let xh = tape.concat(&[x, h_prev])?;
    let gate = |tape: &mut Tape<T>, wm: ParamId, bm: ParamId, input: Var| -> Result<Var> {
        let wv = tape.param(store, wm);
        let bv = tape.param(store, bm);
        let y = tape.matmul(input, wv)?;
        tape.add_bias(y, bv)
    };
    let z_pre = gate(tape, w.w_update, w.b_update, xh)?;
    let z = tape.sigmoid(z_pre)?;
    let r_pre = gate(tape, w.w_reset, w.b_reset, xh)?;
    let r = tape.sigmoid(r_pre)?;
    let rh = tape.mul(r, h_prev)?;
    let xrh = tape.concat(&[x, rh])?;
    let cand_pre = gate(tape, w.w_candidate, w.b_candidate, xrh)?;
    let cand = tape.tanh(cand_pre)?;
    // (1 − z) ⊙ h + z ⊙ h̃  ==  h + z ⊙ (h̃ − h)
    let diff = tape.sub(cand, h_prev)?;
    let step = tape.mul(z, diff)?;
    tape.add(h_prev, step)
}

/// Runs [`gru_cell`] over every row of `xs` (`[T, input_dim]`) from `h0`
/// and returns the last state. Input projections are computed for all steps
/// in one product, so only the recurrent half is multiplied per step.
pub fn gru_sequence<T: Real>(tape: &mut Tape<T>, store: &ParamStore<T>, w: &GruWeights, xs: Var, h0: Var) -> Result<Var> {
    let steps = tape.shape(xs)?[0];
    if tape.shape(xs)?[1] != w.input_dim || tape.shape(h0)? != [1, w.hidden_dim] || steps == 0 {
        return Err(shape_err(
            "gru_sequence",
            format!("xs {:?} / h {:?} for input {} hidden {}", tape.shape(xs)?, tape.shape(h0)?, w.input_dim, w.hidden_dim),
        ));
    }
    let x_rows: Vec<usize> = (0..w.input_dim).collect();
    let h_rows: Vec<usize> = (w.input_dim..w.input_dim + w.hidden_dim).collect();
    let mut split = |wm: ParamId, bm: ParamId| -> Result<(Var, Var)> {
        let wv = tape.param(store, wm);
        let bv = tape.param(store, bm);
        let wx = tape.gather_rows(wv, &x_rows)?;
        let wh = tape.gather_rows(wv, &h_rows)?;
        let px = tape.matmul(xs, wx)?;
        Ok((tape.add_bias(px, bv)?, wh))
    };
    let (pz, wz) = split(w.w_update, w.b_update)?;
    let (pr, wr) = split(w.w_reset, w.b_reset)?;
    let (pc, wc) = split(w.w_candidate, w.b_candidate)?;
    let mut h = h0;
    for t in 0..steps {
        let gate = |tape: &mut Tape<T>, p: Var, wh: Var, input: Var| -> Result<Var> {
            let xt = tape.gather_rows(p, &[t])?;
            let y = tape.matmul(input, wh)?;
            tape.add(xt, y)
        };
        let z_pre = gate(tape, pz, wz, h)?;
        let z = tape.sigmoid(z_pre)?;
        let r_pre = gate(tape, pr, wr, h)?;
        let r = tape.sigmoid(r_pre)?;
        let rh = tape.mul(r, h)?;
        let c_pre = gate(tape, pc, wc, rh)?;
        let cand = tape.tanh(c_pre)?;
        let diff = tape.sub(cand, h)?;
        let step = tape.mul(z, diff)?;
        h = tape.add(h, step)?;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_gru(store: &mut ParamStore<f64>, d: usize, h: usize) -> GruWeights {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = GruWeights::new(store, "gru", d, h, &mut rng).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            let shape = store.value(id).shape().to_vec();
            store.set_value(id, Tensor::zeros(&shape)).unwrap();
        }
        w
    }

    #[test]
    fn zero_weights_halve_the_state() {
        let mut store = ParamStore::new();
        let w = zero_gru(&mut store, 4, 3);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 4], vec![1., -2., 3., 0.5]).unwrap());
        let h = tape.constant(Tensor::new(vec![1, 3], vec![0.8, -0.4, 2.0]).unwrap());
        let out = gru_cell(&mut tape, &store, &w, x, h).unwrap();
        assert_eq!(tape.value(out).unwrap().data(), &[0.4, -0.2, 1.0]);

        let h0 = tape.constant(Tensor::zeros(&[1, 3]));
        let out = gru_cell(&mut tape, &store, &w, x, h0).unwrap();
        assert_eq!(tape.value(out).unwrap().data(), &[0.0; 3]);
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let mut store = ParamStore::new();
        let w = zero_gru(&mut store, 4, 3);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 5]));
        let h = tape.constant(Tensor::zeros(&[1, 3]));
        assert!(gru_cell(&mut tape, &store, &w, x, h).is_err());
    }

    #[test]
    fn init_bound_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t: Tensor<f64> = init_uniform(&mut rng, 10, 14, &[10, 14]);
        let bound = (6.0f64 / 24.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= bound));
    }
}
