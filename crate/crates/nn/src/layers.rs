//! Fully connected layers, MLP stacks and the GRU cell.

use rand::Rng;

use crate::error::Result;
use crate::params::{Grads, Init, ParamId, ParamStore};
use crate::tape::{affine_backward, affine_into, sigmoid, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

/// `y = W x + b`, both initialized uniform in `±1/sqrt(in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        input: usize,
        output: usize,
    ) -> Result<Self> {
        let w = store.add(&format!("{name}.w"), output, input, Init::FanIn(input), rng)?;
        let b = store.add(&format!("{name}.b"), output, 1, Init::FanIn(input), rng)?;
        Ok(Linear {
            w,
            b,
            input,
            output,
        })
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        tape.affine(store, self.w, Some(self.b), x)
    }

    pub fn eval(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.output);
        affine_into(store.get(self.w), Some(store.get(self.b)), x, &mut out);
        out
    }

    /// Sets weights and bias to zero.
    pub fn zero(&self, store: &mut ParamStore) {
        store.get_mut(self.w).fill(0.0);
        store.get_mut(self.b).fill(0.0);
    }
}

/// A chain of [`Linear`] layers, each followed by its activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<(Linear, Activation)>,
}

impl Mlp {
    /// `spec` lists `(width, activation)` per layer.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        input: usize,
        spec: &[(usize, Activation)],
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(spec.len());
        let mut d = input;
        for (i, &(width, act)) in spec.iter().enumerate() {
            layers.push((Linear::new(store, rng, &format!("{name}.{i}"), d, width)?, act));
            d = width;
        }
        Ok(Mlp { layers })
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |(l, _)| l.output)
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, mut x: Var) -> Var {
        for (layer, act) in &self.layers {
            x = layer.apply(tape, store, x);
            if *act == Activation::Relu {
                x = tape.relu(x);
            }
        }
        x
    }

    pub fn eval(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        mlp_apply(store, self, x)
    }

    pub fn last(&self) -> Option<&Linear> {
        self.layers.last().map(|(l, _)| l)
    }
}

/// Forward pass without recording.
pub fn mlp_apply(store: &ParamStore, mlp: &Mlp, x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    for (layer, act) in &mlp.layers {
        v = layer.eval(store, &v);
        if *act == Activation::Relu {
            for e in v.iter_mut() {
                *e = e.max(0.0);
            }
        }
    }
    v
}

/// Gated recurrent unit with reset, update and candidate gates stacked in
/// that order in `w_ih` (`3H x in`) and `w_hh` (`3H x H`):
///
/// ```text
/// r  = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
/// z  = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
/// n  = tanh(W_in x + b_in + r * (W_hn h + b_hn))
/// h' = (1 - z) * n + z * h
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub input: usize,
    pub hidden: usize,
}

pub(crate) struct GruForward {
    pub h: Vec<f64>,
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub n: Vec<f64>,
    pub gh_n: Vec<f64>,
}

impl GruCell {
    /// All arrays uniform in `±1/sqrt(hidden)`.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Result<Self> {
        let init = Init::FanIn(hidden);
        Ok(GruCell {
            w_ih: store.add(&format!("{name}.w_ih"), 3 * hidden, input, init, rng)?,
            w_hh: store.add(&format!("{name}.w_hh"), 3 * hidden, hidden, init, rng)?,
            b_ih: store.add(&format!("{name}.b_ih"), 3 * hidden, 1, init, rng)?,
            b_hh: store.add(&format!("{name}.b_hh"), 3 * hidden, 1, init, rng)?,
            input,
            hidden,
        })
    }

    pub fn step(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Var {
        tape.gru(store, self, x, h)
    }

    pub fn eval(&self, store: &ParamStore, x: &[f64], h: &[f64]) -> Vec<f64> {
        self.forward(store, x, h).h
    }

    pub(crate) fn forward(&self, store: &ParamStore, x: &[f64], h: &[f64]) -> GruForward {
        assert_eq!(x.len(), self.input, "GRU input length mismatch");
        assert_eq!(h.len(), self.hidden, "GRU hidden length mismatch");
        let hd = self.hidden;
        let mut gi = Vec::with_capacity(3 * hd);
        let mut gh = Vec::with_capacity(3 * hd);
        affine_into(store.get(self.w_ih), Some(store.get(self.b_ih)), x, &mut gi);
        affine_into(store.get(self.w_hh), Some(store.get(self.b_hh)), h, &mut gh);
        let mut f = GruForward {
            h: Vec::with_capacity(hd),
            r: Vec::with_capacity(hd),
            z: Vec::with_capacity(hd),
            n: Vec::with_capacity(hd),
            gh_n: gh[2 * hd..].to_vec(),
        };
        for k in 0..hd {
            let r = sigmoid(gi[k] + gh[k]);
            let z = sigmoid(gi[hd + k] + gh[hd + k]);
            let n = (gi[2 * hd + k] + r * gh[2 * hd + k]).tanh();
            f.r.push(r);
            f.z.push(z);
            f.n.push(n);
            f.h.push((1.0 - z) * n + z * h[k]);
        }
        f
    }

    /// Accumulates parameter gradients; returns `(dx, dh)`.
    pub(crate) fn backward(
        &self,
        store: &ParamStore,
        grads: &mut Grads,
        x: &[f64],
        h: &[f64],
        (r, z, n, gh_n): (&[f64], &[f64], &[f64], &[f64]),
        dh_out: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let hd = self.hidden;
        let mut dgi = vec![0.0; 3 * hd];
        let mut dgh = vec![0.0; 3 * hd];
        let mut dh = vec![0.0; hd];
        for k in 0..hd {
            let g = dh_out[k];
            let dz = g * (h[k] - n[k]);
            let dn = g * (1.0 - z[k]);
            dh[k] = g * z[k];
            let dan = dn * (1.0 - n[k] * n[k]);
            let dr = dan * gh_n[k];
            let dar = dr * r[k] * (1.0 - r[k]);
            let daz = dz * z[k] * (1.0 - z[k]);
            dgi[k] = dar;
            dgi[hd + k] = daz;
            dgi[2 * hd + k] = dan;
            dgh[k] = dar;
            dgh[hd + k] = daz;
            dgh[2 * hd + k] = dan * r[k];
        }
        let mut dx = vec![0.0; x.len()];
        affine_backward(store.get(self.w_ih), x, &dgi, grads.get_mut(self.w_ih), &mut dx);
        affine_backward(store.get(self.w_hh), h, &dgh, grads.get_mut(self.w_hh), &mut dh);
        for (d, v) in grads.get_mut(self.b_ih).iter_mut().zip(&dgi) {
            *d += v;
        }
        for (d, v) in grads.get_mut(self.b_hh).iter_mut().zip(&dgh) {
            *d += v;
        }
        (dx, dh)
    }
}

/// Forward GRU update without recording.
pub fn gru_step(store: &ParamStore, cell: &GruCell, x: &[f64], h: &[f64]) -> Vec<f64> {
    cell.eval(store, x, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Gate equations written out one scalar at a time.
    fn scalar_gru(store: &ParamStore, c: &GruCell, x: &[f64], h: &[f64]) -> Vec<f64> {
        let (wi, wh) = (store.get(c.w_ih), store.get(c.w_hh));
        let (bi, bh) = (store.get(c.b_ih), store.get(c.b_hh));
        let (nx, nh) = (x.len(), h.len());
        let dot_i = |row: usize| -> f64 {
            let mut s = bi[row];
            for j in 0..nx {
                s += wi[row * nx + j] * x[j];
            }
            s
        };
        let dot_h = |row: usize| -> f64 {
            let mut s = bh[row];
            for j in 0..nh {
                s += wh[row * nh + j] * h[j];
            }
            s
        };
        let mut out = vec![0.0; nh];
        for k in 0..nh {
            let r = sig(dot_i(k) + dot_h(k));
            let z = sig(dot_i(nh + k) + dot_h(nh + k));
            let n = (dot_i(2 * nh + k) + r * dot_h(2 * nh + k)).tanh();
            out[k] = (1.0 - z) * n + z * h[k];
        }
        out
    }

    #[test]
    fn gru_matches_scalar_oracle() {
        let mut r = rng();
        let mut s = ParamStore::new();
        let cell = GruCell::new(&mut s, &mut r, "g", 4, 4).unwrap();
        let x = [0.3, -0.7, 1.1, 0.05];
        let h = [0.2, -0.4, 0.9, -0.1];
        let a = gru_step(&s, &cell, &x, &h);
        let b = scalar_gru(&s, &cell, &x, &h);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gru_keeps_zero_state() {
        let mut r = rng();
        let mut s = ParamStore::new();
        let cell = GruCell::new(&mut s, &mut r, "g", 3, 5).unwrap();
        for id in s.ids().collect::<Vec<_>>() {
            s.get_mut(id).fill(0.0);
        }
        assert_eq!(gru_step(&s, &cell, &[1.0, -2.0, 3.0], &[0.0; 5]), vec![0.0; 5]);
    }

    #[test]
    fn gru_output_bounded() {
        let mut r = rng();
        let mut s = ParamStore::new();
        let cell = GruCell::new(&mut s, &mut r, "g", 2, 6).unwrap();
        let mut h = vec![0.0; 6];
        for t in 0..50 {
            h = gru_step(&s, &cell, &[1e3 * (t as f64).sin(), -1e3], &h);
            assert!(h.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn saturated_update_gate_keeps_state() {
        let mut r = rng();
        let mut s = ParamStore::new();
        let cell = GruCell::new(&mut s, &mut r, "g", 2, 3).unwrap();
        s.get_mut(cell.b_ih)[3..6].fill(50.0);
        let h = [0.3, -0.2, 0.7];
        let out = gru_step(&s, &cell, &[0.5, 0.5], &h);
        for (a, b) in out.iter().zip(&h) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tape_gru_matches_eval() {
        let mut r = rng();
        let mut s = ParamStore::new();
        let cell = GruCell::new(&mut s, &mut r, "g", 3, 4).unwrap();
        let mut t = Tape::new();
        let x = t.input(vec![0.1, 0.2, 0.3]);
        let h = t.input(vec![0.0; 4]);
        let out = cell.step(&mut t, &s, x, h);
        assert_eq!(t.value(out), cell.eval(&s, &[0.1, 0.2, 0.3], &[0.0; 4]).as_slice());
    }

    #[test]
    fn identity_layer_passes_input() {
        let mut r = rng();
        let mut s = ParamStore::new();
        let m = Mlp::new(&mut s, &mut r, "m", 3, &[(3, Activation::Identity)]).unwrap();
        let l = &m.layers[0].0;
        let eye: Vec<f64> = (0..9).map(|i| f64::from(i % 4 == 0)).collect();
        s.set(l.w, &eye).unwrap();
        s.get_mut(l.b).fill(0.0);
        assert_eq!(mlp_apply(&s, &m, &[0.5, -1.0, 2.0]), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn relu_on_negative_preactivation_is_zero() {
        let mut r = rng();
        let mut s = ParamStore::new();
        let m = Mlp::new(&mut s, &mut r, "m", 2, &[(4, Activation::Relu)]).unwrap();
        let l = &m.layers[0].0;
        s.get_mut(l.w).fill(0.0);
        s.get_mut(l.b).fill(-1.0);
        assert_eq!(mlp_apply(&s, &m, &[3.0, 4.0]), vec![0.0; 4]);
    }

    #[test]
    fn two_layer_encoder_width() {
        let mut r = rng();
        let mut s = ParamStore::new();
        let spec = [(32, Activation::Relu), (64, Activation::Relu)];
        let m = Mlp::new(&mut s, &mut r, "enc", 8, &spec).unwrap();
        assert_eq!(m.output_dim(), 64);
        assert_eq!(mlp_apply(&s, &m, &[0.1; 8]).len(), 64);
        let mut t = Tape::new();
        let x = t.input(vec![0.1; 8]);
        let y = m.apply(&mut t, &s, x);
        assert_eq!(t.value(y), mlp_apply(&s, &m, &[0.1; 8]).as_slice());
    }
}
