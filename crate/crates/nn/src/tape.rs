//! Reverse-mode differentiation over a linear tape of vector values.
//!
//! Every operation appends one node holding its forward value. `backward`
//! walks the tape in reverse, accumulating parameter gradients.

use crate::error::{NnError, Result};
use crate::layers::GruCell;
use crate::params::{Grads, ParamId, ParamStore};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Affine {
        w: ParamId,
        b: Option<ParamId>,
        x: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Sum(Var),
    Sqrt(Var),
    ApplyBoxes(Var),
    Gru {
        cell: GruCell,
        x: Var,
        h: Var,
        r: Vec<f64>,
        z: Vec<f64>,
        n: Vec<f64>,
        gh_n: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `y = W x (+ b)` with `W` row-major `rows x x.len()`.
pub(crate) fn affine_into(w: &[f64], b: Option<&[f64]>, x: &[f64], out: &mut Vec<f64>) {
    let cols = x.len();
    let rows = w.len() / cols.max(1);
    out.clear();
    out.extend((0..rows).map(|i| {
        let row = &w[i * cols..(i + 1) * cols];
        let dot: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
        dot + b.map_or(0.0, |b| b[i])
    }));
}

/// Accumulates `dW += g x^T` and `dx += W^T g`.
pub(crate) fn affine_backward(w: &[f64], x: &[f64], g: &[f64], dw: &mut [f64], dx: &mut [f64]) {
    let cols = x.len();
    for (i, &gi) in g.iter().enumerate() {
        if gi == 0.0 {
            continue;
        }
        let row = &w[i * cols..(i + 1) * cols];
        let drow = &mut dw[i * cols..(i + 1) * cols];
        for j in 0..cols {
            drow[j] += gi * x[j];
            dx[j] += gi * row[j];
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).iter().map(|&x| f(x)).collect();
        self.push(value, op)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.len(), vb.len(), "elementwise operands differ in length");
        let value = va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect();
        self.push(value, op)
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Input)
    }

    /// Leaf copy of a parameter array.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).to_vec(), Op::Param(id))
    }

    pub fn affine(&mut self, store: &ParamStore, w: ParamId, b: Option<ParamId>, x: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = store.shape(w);
        assert_eq!(cols, xv.len(), "affine input length mismatch for {}", store.name(w));
        let mut out = Vec::with_capacity(rows);
        affine_into(store.get(w), b.map(|b| store.get(b)), xv, &mut out);
        self.push(out, Op::Affine { w, b, x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let value = parts.iter().flat_map(|&p| self.value(p).iter().copied()).collect();
        self.push(value, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a)[start..start + len].to_vec();
        self.push(value, Op::Slice(a, start))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(vec![s], Op::Sum(a))
    }

    /// Elementwise square root of non-negative values; the derivative at 0
    /// is taken as 0.
    pub fn sqrt(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0).sqrt(), Op::Sqrt(a))
    }

    /// Applies box transforms blockwise: for each 4-block `(px, py, pw, ph)`
    /// with anchor `(cx, cy, w, h)`, yields `(cx + px, cy + py, w e^pw, h e^ph)`.
    pub fn apply_boxes(&mut self, anchors: &[f64], p: Var) -> Var {
        let pv = self.value(p);
        assert_eq!(pv.len(), anchors.len(), "anchor and transform lengths differ");
        assert_eq!(pv.len() % 4, 0, "box transforms come in blocks of 4");
        let value = pv
            .iter()
            .zip(anchors)
            .enumerate()
            .map(|(i, (&q, &a))| if i % 4 < 2 { a + q } else { a * q.exp() })
            .collect();
        self.push(value, Op::ApplyBoxes(p))
    }

    /// One GRU update; see [`crate::layers::GruCell`] for the gate equations.
    pub fn gru(&mut self, store: &ParamStore, cell: &GruCell, x: Var, h: Var) -> Var {
        let f = cell.forward(store, self.value(x), self.value(h));
        self.push(
            f.h,
            Op::Gru {
                cell: cell.clone(),
                x,
                h,
                r: f.r,
                z: f.z,
                n: f.n,
                gh_n: f.gh_n,
            },
        )
    }

    /// Accumulates `d loss / d param` into `grads`; `loss` must be a scalar.
    pub fn backward(&self, store: &ParamStore, loss: Var, grads: &mut Grads) -> Result<()> {
        let len = self.value(loss).len();
        if len != 1 {
            return Err(NnError::NotScalar(len));
        }
        let mut adj: Vec<Vec<f64>> = vec![Vec::new(); loss.0 + 1];
        adj[loss.0] = vec![1.0];
        for i in (0..=loss.0).rev() {
            let g = std::mem::take(&mut adj[i]);
            if g.is_empty() {
                continue;
            }
            let node = &self.nodes[i];
            let acc = |v: Var, contrib: &dyn Fn(usize) -> f64, adj: &mut Vec<Vec<f64>>| {
                let n = self.nodes[v.0].value.len();
                let a = &mut adj[v.0];
                if a.is_empty() {
                    *a = vec![0.0; n];
                }
                for (k, slot) in a.iter_mut().enumerate() {
                    *slot += contrib(k);
                }
            };
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    for (d, gi) in grads.get_mut(*id).iter_mut().zip(&g) {
                        *d += gi;
                    }
                }
                Op::Affine { w, b, x } => {
                    let xv = self.value(*x);
                    let mut dx = vec![0.0; xv.len()];
                    affine_backward(store.get(*w), xv, &g, grads.get_mut(*w), &mut dx);
                    if let Some(b) = b {
                        for (d, gi) in grads.get_mut(*b).iter_mut().zip(&g) {
                            *d += gi;
                        }
                    }
                    acc(*x, &|k| dx[k], &mut adj);
                }
                Op::Add(a, b) => {
                    acc(*a, &|k| g[k], &mut adj);
                    acc(*b, &|k| g[k], &mut adj);
                }
                Op::Sub(a, b) => {
                    acc(*a, &|k| g[k], &mut adj);
                    acc(*b, &|k| -g[k], &mut adj);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    acc(*a, &|k| g[k] * vb[k], &mut adj);
                    acc(*b, &|k| g[k] * va[k], &mut adj);
                }
                Op::Scale(a, c) => acc(*a, &|k| g[k] * c, &mut adj),
                Op::Relu(a) => {
                    let va = self.value(*a);
                    acc(*a, &|k| if va[k] > 0.0 { g[k] } else { 0.0 }, &mut adj);
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    acc(*a, &|k| g[k] * y[k] * (1.0 - y[k]), &mut adj);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    acc(*a, &|k| g[k] * (1.0 - y[k] * y[k]), &mut adj);
                }
                Op::Exp(a) => {
                    let y = &node.value;
                    acc(*a, &|k| g[k] * y[k], &mut adj);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let o = off;
                        acc(*p, &|k| g[o + k], &mut adj);
                        off += self.value(*p).len();
                    }
                }
                Op::Slice(a, start) => {
                    let (s, n) = (*start, g.len());
                    acc(*a, &|k| if k >= s && k < s + n { g[k - s] } else { 0.0 }, &mut adj);
                }
                Op::Sum(a) => acc(*a, &|_| g[0], &mut adj),
                Op::Sqrt(a) => {
                    let y = &node.value;
                    acc(*a, &|k| if y[k] > 0.0 { g[k] * 0.5 / y[k] } else { 0.0 }, &mut adj);
                }
                Op::ApplyBoxes(p) => {
                    let y = &node.value;
                    acc(*p, &|k| if k % 4 < 2 { g[k] } else { g[k] * y[k] }, &mut adj);
                }
                Op::Gru {
                    cell,
                    x,
                    h,
                    r,
                    z,
                    n,
                    gh_n,
                } => {
                    let (dx, dh) = cell.backward(
                        store,
                        grads,
                        self.value(*x),
                        self.value(*h),
                        (r.as_slice(), z.as_slice(), n.as_slice(), gh_n.as_slice()),
                        &g,
                    );
                    acc(*x, &|k| dx[k], &mut adj);
                    acc(*h, &|k| dh[k], &mut adj);
                }
            }
        }
        Ok(())
    }
}
