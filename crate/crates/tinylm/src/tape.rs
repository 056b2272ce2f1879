//! Reverse-mode differentiation over dense row-major matrices.
//!
//! Every value on the tape is an `Array2<f64>`. Activations are laid out as
//! `(batch * seq_len, width)`; row `b * seq_len + t` is position `t` of
//! sequence `b`. Ops record what their backward pass needs at forward time,
//! so `backward` is a single reverse sweep.

use ndarray::{s, Array1, Array2, Axis, Zip};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Gather { table: Var, ids: Vec<usize> },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Array2<f64>, rstd: Array1<f64> },
    Gelu(Var),
    Attention { q: Var, k: Var, v: Var, heads: usize, seq_len: usize, probs: Vec<Array2<f64>> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Array2<f64> },
    Scale { x: Var, mask: Array2<f64> },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// `(n, k) x (k, m)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// Adds a `(1, m)` row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let out = self.value(a) + self.value(bias);
        self.push(out, Op::AddBias(a, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    /// Row lookup: output row `i` is `table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Array2::zeros((ids.len(), t.ncols()));
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).assign(&t.row(id));
        }
        self.push(out, Op::Gather { table, ids: ids.to_vec() })
    }

    /// Per-row normalization with affine `(1, d)` gain and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let d = xv.ncols() as f64;
        let mean = xv.sum_axis(Axis(1)) / d;
        let centered = xv - &mean.clone().insert_axis(Axis(1));
        let var = centered.mapv(|c| c * c).sum_axis(Axis(1)) / d;
        let rstd = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
        let xhat = &centered * &rstd.clone().insert_axis(Axis(1));
        let out = &xhat * self.value(gamma) + self.value(beta);
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, rstd })
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| 0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh()));
        self.push(out, Op::Gelu(x))
    }

    /// Causal multi-head attention on already-projected `q`, `k`, `v`.
    /// Position `t` attends to positions `0..=t` of its own sequence only.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, heads: usize, seq_len: usize) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (rows, d) = qv.dim();
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Array2::zeros((rows, d));
        let mut probs = Vec::with_capacity(rows / seq_len * heads);
        for b in 0..rows / seq_len {
            let r = s![b * seq_len..(b + 1) * seq_len, ..];
            for h in 0..heads {
                let c = s![.., h * dh..(h + 1) * dh];
                let qb = qv.slice(r).slice_move(c);
                let kb = kv.slice(r).slice_move(c);
                let vb = vv.slice(r).slice_move(c);
                let mut p = qb.dot(&kb.t()) * scale;
                for i in 0..seq_len {
                    let row_max = (0..=i).map(|j| p[[i, j]]).fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for j in 0..seq_len {
                        let e = if j <= i { (p[[i, j]] - row_max).exp() } else { 0.0 };
                        p[[i, j]] = e;
                        z += e;
                    }
                    p.row_mut(i).mapv_inplace(|e| e / z);
                }
                out.slice_mut(s![b * seq_len..(b + 1) * seq_len, h * dh..(h + 1) * dh]).assign(&p.dot(&vb));
                probs.push(p);
            }
        }
        self.push(out, Op::Attention { q, k, v, heads, seq_len, probs })
    }

    /// Mean over rows of `-log softmax(logits)[target]`; a `(1, 1)` value.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let probs = softmax_rows(self.value(logits));
        let n = targets.len() as f64;
        let loss: f64 = targets.iter().enumerate().map(|(i, &t)| -probs[[i, t]].max(f64::MIN_POSITIVE).ln()).sum();
        self.push(Array2::from_elem((1, 1), loss / n), Op::CrossEntropy { logits, targets: targets.to_vec(), probs })
    }

    /// Elementwise product with a constant mask (inverted dropout).
    pub fn scale(&mut self, x: Var, mask: Array2<f64>) -> Var {
        let out = self.value(x) * &mask;
        self.push(out, Op::Scale { x, mask })
    }

    /// Gradients of the scalar `loss` with respect to every node, indexed
    /// by `Var`. Nodes that do not influence `loss` get `None`.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones(self.value(loss).dim()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients(grads)
    }

    fn backprop_node(&self, i: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let mut acc = |v: Var, d: Array2<f64>| match &mut grads[v.0] {
            Some(existing) => *existing += &d,
            slot @ None => *slot = Some(d),
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                acc(*a, g.dot(&self.value(*b).t()));
                acc(*b, self.value(*a).t().dot(g));
            }
            Op::AddBias(a, bias) => {
                acc(*a, g.clone());
                acc(*bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Gather { table, ids } => {
                let mut d = Array2::zeros(self.value(*table).dim());
                for (r, &id) in ids.iter().enumerate() {
                    let mut row = d.row_mut(id);
                    row += &g.row(r);
                }
                acc(*table, d);
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                acc(*beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                acc(*gamma, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                let dxhat = g * self.value(*gamma);
                let d = dxhat.ncols() as f64;
                let m1 = (dxhat.sum_axis(Axis(1)) / d).insert_axis(Axis(1));
                let m2 = ((&dxhat * xhat).sum_axis(Axis(1)) / d).insert_axis(Axis(1));
                let dx = (&dxhat - &m1 - xhat * &m2) * &rstd.clone().insert_axis(Axis(1));
                acc(*x, dx);
            }
            Op::Gelu(x) => {
                let mut dx = self.value(*x).clone();
                Zip::from(&mut dx).and(g).for_each(|v, &gi| {
                    let u = GELU_C * (*v + 0.044715 * *v * *v * *v);
                    let t = u.tanh();
                    let du = GELU_C * (1.0 + 3.0 * 0.044715 * *v * *v);
                    *v = gi * (0.5 * (1.0 + t) + 0.5 * *v * (1.0 - t * t) * du);
                });
                acc(*x, dx);
            }
            Op::Attention { q, k, v, heads, seq_len, probs } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let (rows, d) = qv.dim();
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut dq = Array2::zeros((rows, d));
                let mut dk = Array2::zeros((rows, d));
                let mut dv = Array2::zeros((rows, d));
                for b in 0..rows / seq_len {
                    let r = s![b * seq_len..(b + 1) * seq_len, ..];
                    for h in 0..*heads {
                        let c = s![.., h * dh..(h + 1) * dh];
                        let out_slice = s![b * seq_len..(b + 1) * seq_len, h * dh..(h + 1) * dh];
                        let p = &probs[b * heads + h];
                        let gb = g.slice(r).slice_move(c);
                        let qb = qv.slice(r).slice_move(c);
                        let kb = kv.slice(r).slice_move(c);
                        let vb = vv.slice(r).slice_move(c);
                        dv.slice_mut(out_slice).assign(&p.t().dot(&gb));
                        let dp = gb.dot(&vb.t());
                        let row_dot = (&dp * p).sum_axis(Axis(1)).insert_axis(Axis(1));
                        let ds = p * &(&dp - &row_dot) * scale;
                        dq.slice_mut(out_slice).assign(&ds.dot(&kb));
                        dk.slice_mut(out_slice).assign(&ds.t().dot(&qb));
                    }
                }
                acc(*q, dq);
                acc(*k, dk);
                acc(*v, dv);
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let n = targets.len() as f64;
                let mut d = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    d[[r, t]] -= 1.0;
                }
                acc(*logits, d * (g[[0, 0]] / n));
            }
            Op::Scale { x, mask } => acc(*x, g * mask),
        }
    }
}

pub struct Gradients(Vec<Option<Array2<f64>>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.0[v.0].as_ref()
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn numeric_grad(f: impl Fn(&Array2<f64>) -> f64, x: &Array2<f64>) -> Array2<f64> {
        let h = 1e-6;
        let mut g = Array2::zeros(x.dim());
        for idx in ndarray::indices(x.dim()) {
            let mut p = x.clone();
            p[idx] += h;
            let mut m = x.clone();
            m[idx] -= h;
            g[idx] = (f(&p) - f(&m)) / (2.0 * h);
        }
        g
    }

    fn max_rel(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        Zip::from(a).and(b).fold(0.0, |m, &x, &y| m.max((x - y).abs() / (x.abs() + y.abs()).max(1e-6)))
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax_rows(&array![[1.0, 2.0, 3.0], [1000.0, 0.0, -1000.0]]);
        for r in p.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_and_gelu_gradients() {
        let x0 = array![[0.3, -1.2, 0.8, 0.1], [2.0, 0.5, -0.7, 1.1]];
        let gamma = array![[1.1, 0.9, 1.3, 0.7]];
        let beta = array![[0.1, -0.2, 0.0, 0.3]];
        let w = array![[0.5, -0.3], [0.2, 0.8], [-0.6, 0.1], [0.4, 0.4]];
        let f = |x: &Array2<f64>| {
            let mut t = Tape::new();
            let (xv, g, b, wv) = (t.leaf(x.clone()), t.leaf(gamma.clone()), t.leaf(beta.clone()), t.leaf(w.clone()));
            let h = t.layer_norm(xv, g, b);
            let h = t.gelu(h);
            let o = t.matmul(h, wv);
            let l = t.cross_entropy(o, &[0, 1]);
            (t, xv, l)
        };
        let (t, xv, l) = f(&x0);
        let analytic = t.backward(l).get(xv).unwrap().clone();
        let numeric = numeric_grad(|x| f(x).0.value(f(x).2)[[0, 0]], &x0);
        assert!(max_rel(&analytic, &numeric) < 1e-5, "{analytic} vs {numeric}");
    }

    #[test]
    fn attention_gradient_and_causality() {
        let seq = 3;
        let x0 = Array2::from_shape_fn((6, 4), |(i, j)| ((i * 7 + j * 3) as f64 * 0.37).sin());
        let f = |x: &Array2<f64>| {
            let mut t = Tape::new();
            let xv = t.leaf(x.clone());
            let q = t.gelu(xv);
            let a = t.causal_attention(q, xv, xv, 2, seq);
            let l = t.cross_entropy(a, &[0, 1, 2, 3, 1, 2]);
            (t, xv, l)
        };
        let (t, xv, l) = f(&x0);
        let analytic = t.backward(l).get(xv).unwrap().clone();
        let numeric = numeric_grad(|x| f(x).0.value(f(x).2)[[0, 0]], &x0);
        assert!(max_rel(&analytic, &numeric) < 1e-5);

        let run = |x: &Array2<f64>| {
            let mut t = Tape::new();
            let xv = t.leaf(x.clone());
            let a = t.causal_attention(xv, xv, xv, 2, seq);
            t.value(a).clone()
        };
        let mut x1 = x0.clone();
        x1.row_mut(2).mapv_inplace(|v| v + 5.0);
        let (a0, a1) = (run(&x0), run(&x1));
        assert_eq!(a0.slice(s![0..2, ..]), a1.slice(s![0..2, ..]));
        assert_eq!(a0.slice(s![3..6, ..]), a1.slice(s![3..6, ..]));
    }

    #[test]
    fn gather_scatters_back() {
        let mut t = Tape::new();
        let table = t.leaf(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let g = t.gather(table, &[2, 0, 2]);
        assert_eq!(t.value(g), &array![[5.0, 6.0], [1.0, 2.0], [5.0, 6.0]]);
        let l = t.cross_entropy(g, &[0, 1, 1]);
        let d = t.backward(l).get(table).unwrap().clone();
        assert!(d.row(1).iter().all(|&v| v == 0.0));
        assert!(d.row(2).sum().abs() < 1e-12);
        assert!(d[[2, 0]] < 0.0);
    }
}
