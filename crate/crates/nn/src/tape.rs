//! Reverse-mode automatic differentiation over row-major matrices.
//!
//! Every operation appends a node holding its value; `backward` walks the
//! nodes in reverse and returns gradients for the parameters that were read.

use std::collections::HashMap;

use ndarray::{s, Array2, ArrayView2, Axis};

use crate::params::{ParamId, ParamStore};

pub const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    Gather { x: Var, rows: Vec<usize> },
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Gelu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Array2<f64>, inv_std: Vec<f64> },
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Scale(Var, f64),
    Sum(Var),
    Attention { q: Var, k: Var, v: Var, heads: usize, segments: Vec<(usize, usize)>, probs: Vec<Array2<f64>> },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Array2<f64> },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients indexed by parameter id; `None` for parameters not on the tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    /// Sum of squares over every gradient entry.
    pub fn squared_norm(&self) -> f64 {
        self.grads.iter().flatten().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum()
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Row-wise softmax in place.
pub fn softmax_rows(a: &mut Array2<f64>) {
    for mut row in a.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            row.fill(0.0);
            continue;
        }
        row.mapv_inplace(|x| (x - m).exp());
        let z = row.sum();
        row.mapv_inplace(|x| x / z);
    }
}

fn head_view(a: &Array2<f64>, start: usize, len: usize, h: usize, dh: usize) -> ArrayView2<'_, f64> {
    a.slice(s![start..start + len, h * dh..(h + 1) * dh])
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Reads a parameter; repeated reads share one tape node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    /// Selects rows of `x`; rows may repeat.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Var {
        let value = self.value(x).select(Axis(0), rows);
        self.push(value, Op::Gather { x, rows: rows.to_vec() })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        self.push(value, Op::MatMulNT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    /// Adds a `1 × n` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let value = self.value(x) + self.value(row);
        self.push(value, Op::AddRow(x, row))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(gelu);
        self.push(value, Op::Gelu(x))
    }

    /// Row-wise layer normalization with `1 × n` scale and offset.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * is);
            inv_std.push(is);
        }
        let value = &xhat * self.value(gamma) + self.value(beta);
        self.push(value, Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("equal column counts");
        self.push(value, Op::Concat(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let value = self.value(x).slice(s![start..start + len, ..]).to_owned();
        self.push(value, Op::Slice { x, start })
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x) * factor;
        self.push(value, Op::Scale(x, factor))
    }

    /// Sum of all entries as a `1 × 1` value.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(x).sum());
        self.push(value, Op::Sum(x))
    }

    /// Multi-head scaled dot-product attention over independent row segments.
    ///
    /// `q`, `k`, `v` are `rows × dim`; each `(start, len)` segment attends only
    /// within itself, and with `causal` only to earlier or equal rows.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, segments: &[(usize, usize)], causal: bool) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let dim = qv.ncols();
        assert_eq!(dim % heads, 0, "dim divisible by heads");
        let dh = dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Array2::zeros(qv.dim());
        let mut probs = Vec::with_capacity(segments.len() * heads);
        for &(start, len) in segments {
            for h in 0..heads {
                let qh = head_view(qv, start, len, h, dh);
                let kh = head_view(kv, start, len, h, dh);
                let mut scores = qh.dot(&kh.t()) * scale;
                if causal {
                    for i in 0..len {
                        for j in i + 1..len {
                            scores[[i, j]] = f64::NEG_INFINITY;
                        }
                    }
                }
                softmax_rows(&mut scores);
                let o = scores.dot(&head_view(vv, start, len, h, dh));
                out.slice_mut(s![start..start + len, h * dh..(h + 1) * dh]).assign(&o);
                probs.push(scores);
            }
        }
        self.push(out, Op::Attention { q, k, v, heads, segments: segments.to_vec(), probs })
    }

    /// Summed categorical cross-entropy over rows with a target.
    pub fn cross_entropy_sum(&mut self, logits: Var, targets: &[Option<usize>]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), targets.len(), "one target per row");
        let mut probs = lv.clone();
        softmax_rows(&mut probs);
        let mut total = 0.0;
        for (i, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                let row = lv.row(i);
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
                total += lse - row[t];
            }
        }
        self.push(Array2::from_elem((1, 1), total), Op::CrossEntropy { logits, targets: targets.to_vec(), probs })
    }

    /// Gradients of the scalar `loss` with respect to every parameter read.
    pub fn backward(&self, loss: Var, num_params: usize) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones(self.nodes[loss.0].value.dim()));
        let mut out = Gradients { grads: vec![None; num_params] };
        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.grads[*id] = Some(g),
                Op::Gather { x, rows } => {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    for (r, &src) in rows.iter().enumerate() {
                        let mut row = gx.row_mut(src);
                        row += &g.row(r);
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, g.dot(&self.value(*b).t()));
                    acc(&mut grads, *b, self.value(*a).t().dot(&g));
                }
                Op::MatMulNT(a, b) => {
                    acc(&mut grads, *a, g.dot(self.value(*b)));
                    acc(&mut grads, *b, g.t().dot(self.value(*a)));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddRow(x, row) => {
                    acc(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *x, g);
                }
                Op::Gelu(x) => {
                    let gx = &g * &self.value(*x).mapv(gelu_grad);
                    acc(&mut grads, *x, gx);
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    acc(&mut grads, *gamma, (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let dxhat = &g * self.value(*gamma);
                    let n = xhat.ncols() as f64;
                    let mut gx = Array2::zeros(xhat.dim());
                    for r in 0..xhat.nrows() {
                        let d = dxhat.row(r);
                        let xh = xhat.row(r);
                        let mean_d = d.sum() / n;
                        let mean_dx = d.dot(&xh) / n;
                        let mut row = gx.row_mut(r);
                        for c in 0..row.len() {
                            row[c] = inv_std[r] * (d[c] - mean_d - xh[c] * mean_dx);
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let n = self.value(p).nrows();
                        acc(&mut grads, p, g.slice(s![start..start + n, ..]).to_owned());
                        start += n;
                    }
                }
                Op::Slice { x, start } => {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    gx.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(&mut grads, *x, gx);
                }
                Op::Scale(x, f) => acc(&mut grads, *x, g * *f),
                Op::Sum(x) => {
                    let gx = Array2::from_elem(self.value(*x).dim(), g[[0, 0]]);
                    acc(&mut grads, *x, gx);
                }
                Op::Attention { q, k, v, heads, segments, probs } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let dh = qv.ncols() / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut gq = Array2::zeros(qv.dim());
                    let mut gk = Array2::zeros(kv.dim());
                    let mut gv = Array2::zeros(vv.dim());
                    let mut pi = 0;
                    for &(start, len) in segments {
                        for h in 0..*heads {
                            let p = &probs[pi];
                            pi += 1;
                            let go = head_view(&g, start, len, h, dh);
                            let dp = go.dot(&head_view(vv, start, len, h, dh).t());
                            let dv = p.t().dot(&go);
                            let mut ds = p * &dp;
                            for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                                let dot: f64 = row.sum();
                                row.zip_mut_with(&prow, |d, &pp| *d -= pp * dot);
                            }
                            ds *= scale;
                            let dq = ds.dot(&head_view(kv, start, len, h, dh));
                            let dk = ds.t().dot(&head_view(qv, start, len, h, dh));
                            let cols = s![start..start + len, h * dh..(h + 1) * dh];
                            gq.slice_mut(cols).assign(&dq);
                            gk.slice_mut(cols).assign(&dk);
                            gv.slice_mut(cols).assign(&dv);
                        }
                    }
                    acc(&mut grads, *q, gq);
                    acc(&mut grads, *k, gk);
                    acc(&mut grads, *v, gv);
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let scale = g[[0, 0]];
                    let mut gl = Array2::zeros(probs.dim());
                    for (r, t) in targets.iter().enumerate() {
                        if let Some(t) = *t {
                            let mut row = gl.row_mut(r);
                            row.assign(&probs.row(r));
                            row[t] -= 1.0;
                            row *= scale;
                        }
                    }
                    acc(&mut grads, *logits, gl);
                }
            }
        }
        out
    }
}
