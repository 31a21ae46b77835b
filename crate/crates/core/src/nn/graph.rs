//! Reverse-mode automatic differentiation on a linear tape.
//!
//! A `Graph` is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so walking the tape backwards is a valid topological
//! order for the adjoint sweep.

use super::mat::{gemm_into, Mat, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    /// `a * b` or `a * b^T`.
    MatMul(Var, Var, bool),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, F),
    Gelu(Var),
    LayerNorm(Var),
    SoftmaxRows(Var),
    MeanRows(Var),
    RepeatRows(Var, usize),
    TileRows(Var, usize),
    Reshape(Var),
    NormalizeRows(Var),
    SlotLogits(Var, Var, usize),
    SlotMix(Var, Var, usize),
    CrossEntropyRows(Var, Vec<usize>),
    Mse(Var, Var),
    L1(Var, Var),
}

#[derive(Debug)]
struct Node<F> {
    value: Mat<F>,
    op: Op<F>,
    needs_grad: bool,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Rows whose norm falls below this map to the fixed unit vector `e_0`.
pub const NORMALIZE_FLOOR: f64 = 1e-12;

#[derive(Debug, Default)]
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
}

/// Adjoints produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Grads<F> {
    grads: Vec<Option<Mat<F>>>,
}

impl<F: Real> Grads<F> {
    pub fn get(&self, v: Var) -> Option<&Mat<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Mat<F>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> F {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "not a scalar node");
        m.data[0]
    }

    fn push(&mut self, value: Mat<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, m: Mat<F>) -> Var {
        self.push(m, Op::Leaf, true)
    }

    pub fn constant(&mut self, m: Mat<F>) -> Var {
        self.push(m, Op::Leaf, false)
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let m = self.value(v).clone();
        self.constant(m)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols, bv.rows, "matmul {:?} x {:?}", av.shape(), bv.shape());
        let mut out = Mat::zeros(av.rows, bv.cols);
        gemm_into(av, false, bv, false, &mut out, F::zero());
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b, false), ng)
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols, bv.cols, "matmul_nt {:?} x {:?}^T", av.shape(), bv.shape());
        let mut out = Mat::zeros(av.rows, bv.rows);
        gemm_into(av, false, bv, true, &mut out, F::zero());
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b, true), ng)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(F, F) -> F, op: Op<F>) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect();
        let out = Mat::from_vec(av.rows, av.cols, data);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, op, ng)
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

    fn row_op(&mut self, a: Var, row: Var, f: impl Fn(F, F) -> F, op: Op<F>) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!(rv.shape(), (1, av.cols), "row broadcast shape mismatch");
        let mut out = av.clone();
        for r in 0..out.rows {
            for (x, &y) in out.row_mut(r).iter_mut().zip(&rv.data) {
                *x = f(*x, y);
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(out, op, ng)
    }

    /// Broadcast-add a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        self.row_op(a, row, |x, y| x + y, Op::AddRow(a, row))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        self.row_op(a, row, |x, y| x * y, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        let out = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        let ng = self.ng(a);
        self.push(out, Op::Gelu(a), ng)
    }

    /// Per-row standardization (no affine part).
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = av.clone();
        let eps = F::c(LAYER_NORM_EPS);
        let n = F::c(av.cols as f64);
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let mean = row.iter().copied().sum::<F>() / n;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<F>() / n;
            let inv = F::one() / (var + eps).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * inv;
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::LayerNorm(a), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows {
            softmax_in_place(out.row_mut(r));
        }
        let ng = self.ng(a);
        self.push(out, Op::SoftmaxRows(a), ng)
    }

    /// Mean over rows: `r x c -> 1 x c`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = Mat::zeros(1, av.cols);
        for r in 0..av.rows {
            for (o, &x) in out.data.iter_mut().zip(av.row(r)) {
                *o = *o + x;
            }
        }
        let inv = F::one() / F::c(av.rows as f64);
        for o in out.data.iter_mut() {
            *o = *o * inv;
        }
        let ng = self.ng(a);
        self.push(out, Op::MeanRows(a), ng)
    }

    /// Repeat every row `n` times consecutively: `[a, b] -> [a, a, b, b]`.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Var {
        let av = self.value(a);
        let mut data = Vec::with_capacity(av.len() * n);
        for r in 0..av.rows {
            for _ in 0..n {
                data.extend_from_slice(av.row(r));
            }
        }
        let out = Mat::from_vec(av.rows * n, av.cols, data);
        let ng = self.ng(a);
        self.push(out, Op::RepeatRows(a, n), ng)
    }

    /// Tile the whole block `n` times: `[a, b] -> [a, b, a, b]`.
    pub fn tile_rows(&mut self, a: Var, n: usize) -> Var {
        let av = self.value(a);
        let mut data = Vec::with_capacity(av.len() * n);
        for _ in 0..n {
            data.extend_from_slice(&av.data);
        }
        let out = Mat::from_vec(av.rows * n, av.cols, data);
        let ng = self.ng(a);
        self.push(out, Op::TileRows(a, n), ng)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let out = self.value(a).clone().reshape(rows, cols);
        let ng = self.ng(a);
        self.push(out, Op::Reshape(a), ng)
    }

    /// Scale each row to unit Euclidean norm. Rows with norm below
    /// [`NORMALIZE_FLOOR`] become `e_0` and pass no gradient.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows {
            normalize_in_place(out.row_mut(r));
        }
        let ng = self.ng(a);
        self.push(out, Op::NormalizeRows(a), ng)
    }

    /// `q: L x H`, `k: (S*L) x H` -> `L x S` with `out[l][s] = q[l] . k[s*L + l]`.
    pub fn slot_logits(&mut self, q: Var, k: Var, slots: usize) -> Var {
        let (qv, kv) = (self.value(q), self.value(k));
        let l = qv.rows;
        assert_eq!(kv.shape(), (slots * l, qv.cols), "slot_logits key shape");
        let mut out = Mat::zeros(l, slots);
        for t in 0..l {
            let qr = qv.row(t);
            for s in 0..slots {
                let kr = kv.row(s * l + t);
                out.data[t * slots + s] = dot(qr, kr);
            }
        }
        let ng = self.ng(q) || self.ng(k);
        self.push(out, Op::SlotLogits(q, k, slots), ng)
    }

    /// `w: L x S`, `v: (S*L) x D` -> `L x D` with `out[l] = sum_s w[l][s] v[s*L + l]`.
    pub fn slot_mix(&mut self, w: Var, v: Var, slots: usize) -> Var {
        let (wv, vv) = (self.value(w), self.value(v));
        let l = wv.rows;
        assert_eq!(wv.cols, slots, "slot_mix weight shape");
        assert_eq!(vv.rows, slots * l, "slot_mix value shape");
        let d = vv.cols;
        let mut out = Mat::zeros(l, d);
        for t in 0..l {
            let o = &mut out.data[t * d..(t + 1) * d];
            for s in 0..slots {
                let a = wv.data[t * slots + s];
                for (x, &y) in o.iter_mut().zip(vv.row(s * l + t)) {
                    *x = *x + a * y;
                }
            }
        }
        let ng = self.ng(w) || self.ng(v);
        self.push(out, Op::SlotMix(w, v, slots), ng)
    }

    /// Mean over rows of `-log softmax(logits[r])[target[r]]`.
    pub fn cross_entropy_rows(&mut self, logits: Var, targets: Vec<usize>) -> Var {
        let lv = self.value(logits);
        assert_eq!(targets.len(), lv.rows, "one target per row");
        let mut total = 0.0f64;
        for (r, &t) in targets.iter().enumerate() {
            let row = lv.row(r);
            assert!(t < row.len(), "target class out of range");
            let max = row.iter().fold(F::neg_infinity(), |m, &x| m.max(x));
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<F>().ln();
            total += (lse - row[t]).f64();
        }
        let out = Mat::scalar(F::c(total / lv.rows as f64));
        let ng = self.ng(logits);
        self.push(out, Op::CrossEntropyRows(logits, targets), ng)
    }

    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "mse shape mismatch");
        let s: f64 = av
            .data
            .iter()
            .zip(&bv.data)
            .map(|(&x, &y)| {
                let d = (x - y).f64();
                d * d
            })
            .sum();
        let out = Mat::scalar(F::c(s / av.len() as f64));
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mse(a, b), ng)
    }

    pub fn l1(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "l1 shape mismatch");
        let s: f64 = av.data.iter().zip(&bv.data).map(|(&x, &y)| (x - y).f64().abs()).sum();
        let out = Mat::scalar(F::c(s / av.len() as f64));
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::L1(a, b), ng)
    }

    /// Adjoint sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Grads<F> {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Mat<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::scalar(F::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Grads { grads }
    }

    fn buf<'a>(&self, grads: &'a mut [Option<Mat<F>>], v: Var) -> Option<&'a mut Mat<F>> {
        if !self.ng(v) {
            return None;
        }
        let (r, c) = self.shape(v);
        Some(grads[v.0].get_or_insert_with(|| Mat::zeros(r, c)))
    }

    fn propagate(&self, node: &Node<F>, g: &Mat<F>, grads: &mut [Option<Mat<F>>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b, tb) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.buf(grads, *a) {
                    // dA = G * B^T   (or G * B when b was transposed)
                    gemm_into(g, false, bv, !*tb, ga, F::one());
                }
                if let Some(gb) = self.buf(grads, *b) {
                    if *tb {
                        // C = A B^T  =>  dB = G^T A
                        gemm_into(g, true, av, false, gb, F::one());
                    } else {
                        gemm_into(av, true, g, false, gb, F::one());
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.buf(grads, *a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = self.buf(grads, *b) {
                    gb.add_assign(g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.buf(grads, *a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = self.buf(grads, *b) {
                    for (x, &d) in gb.data.iter_mut().zip(&g.data) {
                        *x = *x - d;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.buf(grads, *a) {
                    for ((x, &d), &o) in ga.data.iter_mut().zip(&g.data).zip(&bv.data) {
                        *x = *x + d * o;
                    }
                }
                if let Some(gb) = self.buf(grads, *b) {
                    for ((x, &d), &o) in gb.data.iter_mut().zip(&g.data).zip(&av.data) {
                        *x = *x + d * o;
                    }
                }
            }
            Op::AddRow(a, row) => {
                if let Some(ga) = self.buf(grads, *a) {
                    ga.add_assign(g);
                }
                if let Some(gr) = self.buf(grads, *row) {
                    for r in 0..g.rows {
                        for (x, &d) in gr.data.iter_mut().zip(g.row(r)) {
                            *x = *x + d;
                        }
                    }
                }
            }
            Op::MulRow(a, row) => {
                let (av, rv) = (self.value(*a), self.value(*row));
                if let Some(ga) = self.buf(grads, *a) {
                    for r in 0..g.rows {
                        let gr = g.row(r);
                        for ((x, &d), &s) in ga.row_mut(r).iter_mut().zip(gr).zip(&rv.data) {
                            *x = *x + d * s;
                        }
                    }
                }
                if let Some(gr) = self.buf(grads, *row) {
                    for r in 0..g.rows {
                        for ((x, &d), &v) in gr.data.iter_mut().zip(g.row(r)).zip(av.row(r)) {
                            *x = *x + d * v;
                        }
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.buf(grads, *a) {
                    for (x, &d) in ga.data.iter_mut().zip(&g.data) {
                        *x = *x + d * *s;
                    }
                }
            }
            Op::Gelu(a) => {
                let av = self.value(*a);
                if let Some(ga) = self.buf(grads, *a) {
                    for ((x, &d), &v) in ga.data.iter_mut().zip(&g.data).zip(&av.data) {
                        *x = *x + d * gelu_grad(v);
                    }
                }
            }
            Op::LayerNorm(a) => {
                let av = self.value(*a);
                let eps = F::c(LAYER_NORM_EPS);
                let n = F::c(av.cols as f64);
                if let Some(ga) = self.buf(grads, *a) {
                    for r in 0..av.rows {
                        let xr = av.row(r);
                        let mean = xr.iter().copied().sum::<F>() / n;
                        let var = xr.iter().map(|&x| (x - mean) * (x - mean)).sum::<F>() / n;
                        let inv = F::one() / (var + eps).sqrt();
                        let (gr, yr) = (g.row(r), y.row(r));
                        let mg = gr.iter().copied().sum::<F>() / n;
                        let mgy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<F>() / n;
                        for ((x, &d), &yy) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *x = *x + inv * (d - mg - yy * mgy);
                        }
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                if let Some(ga) = self.buf(grads, *a) {
                    for r in 0..y.rows {
                        let (gr, yr) = (g.row(r), y.row(r));
                        let s = dot(gr, yr);
                        for ((x, &d), &p) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *x = *x + p * (d - s);
                        }
                    }
                }
            }
            Op::MeanRows(a) => {
                let rows = self.shape(*a).0;
                let inv = F::one() / F::c(rows as f64);
                if let Some(ga) = self.buf(grads, *a) {
                    for r in 0..rows {
                        for (x, &d) in ga.row_mut(r).iter_mut().zip(&g.data) {
                            *x = *x + d * inv;
                        }
                    }
                }
            }
            Op::RepeatRows(a, n) => {
                if let Some(ga) = self.buf(grads, *a) {
                    for r in 0..ga.rows {
                        for k in 0..*n {
                            let src = g.row(r * n + k);
                            for (x, &d) in ga.row_mut(r).iter_mut().zip(src) {
                                *x = *x + d;
                            }
                        }
                    }
                }
            }
            Op::TileRows(a, n) => {
                if let Some(ga) = self.buf(grads, *a) {
                    let len = ga.len();
                    for k in 0..*n {
                        let src = &g.data[k * len..(k + 1) * len];
                        for (x, &d) in ga.data.iter_mut().zip(src) {
                            *x = *x + d;
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.buf(grads, *a) {
                    for (x, &d) in ga.data.iter_mut().zip(&g.data) {
                        *x = *x + d;
                    }
                }
            }
            Op::NormalizeRows(a) => {
                let av = self.value(*a);
                let floor = F::c(NORMALIZE_FLOOR);
                if let Some(ga) = self.buf(grads, *a) {
                    for r in 0..av.rows {
                        let norm = dot(av.row(r), av.row(r)).sqrt();
                        if norm < floor {
                            continue;
                        }
                        let (gr, yr) = (g.row(r), y.row(r));
                        let s = dot(gr, yr);
                        for ((x, &d), &yy) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *x = *x + (d - yy * s) / norm;
                        }
                    }
                }
            }
            Op::SlotLogits(q, k, slots) => {
                let (qv, kv) = (self.value(*q), self.value(*k));
                let l = qv.rows;
                if let Some(gq) = self.buf(grads, *q) {
                    for t in 0..l {
                        for s in 0..*slots {
                            let w = g.data[t * slots + s];
                            for (x, &kk) in gq.row_mut(t).iter_mut().zip(kv.row(s * l + t)) {
                                *x = *x + w * kk;
                            }
                        }
                    }
                }
                if let Some(gk) = self.buf(grads, *k) {
                    for t in 0..l {
                        for s in 0..*slots {
                            let w = g.data[t * slots + s];
                            for (x, &qq) in gk.row_mut(s * l + t).iter_mut().zip(qv.row(t)) {
                                *x = *x + w * qq;
                            }
                        }
                    }
                }
            }
            Op::SlotMix(w, v, slots) => {
                let (wv, vv) = (self.value(*w), self.value(*v));
                let l = wv.rows;
                if let Some(gw) = self.buf(grads, *w) {
                    for t in 0..l {
                        for s in 0..*slots {
                            gw.data[t * slots + s] = gw.data[t * slots + s] + dot(g.row(t), vv.row(s * l + t));
                        }
                    }
                }
                if let Some(gv) = self.buf(grads, *v) {
                    for t in 0..l {
                        for s in 0..*slots {
                            let a = wv.data[t * slots + s];
                            for (x, &d) in gv.row_mut(s * l + t).iter_mut().zip(g.row(t)) {
                                *x = *x + a * d;
                            }
                        }
                    }
                }
            }
            Op::CrossEntropyRows(logits, targets) => {
                let lv = self.value(*logits);
                let scale = g.data[0] / F::c(lv.rows as f64);
                if let Some(gl) = self.buf(grads, *logits) {
                    for (r, &t) in targets.iter().enumerate() {
                        let mut p = lv.row(r).to_vec();
                        softmax_in_place(&mut p);
                        p[t] = p[t] - F::one();
                        for (x, &pp) in gl.row_mut(r).iter_mut().zip(&p) {
                            *x = *x + scale * pp;
                        }
                    }
                }
            }
            Op::Mse(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let scale = g.data[0] * F::c(2.0 / av.len() as f64);
                if let Some(ga) = self.buf(grads, *a) {
                    for ((x, &p), &q) in ga.data.iter_mut().zip(&av.data).zip(&bv.data) {
                        *x = *x + scale * (p - q);
                    }
                }
                if let Some(gb) = self.buf(grads, *b) {
                    for ((x, &p), &q) in gb.data.iter_mut().zip(&av.data).zip(&bv.data) {
                        *x = *x - scale * (p - q);
                    }
                }
            }
            Op::L1(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let scale = g.data[0] / F::c(av.len() as f64);
                if let Some(ga) = self.buf(grads, *a) {
                    for ((x, &p), &q) in ga.data.iter_mut().zip(&av.data).zip(&bv.data) {
                        *x = *x + scale * sign(p - q);
                    }
                }
                if let Some(gb) = self.buf(grads, *b) {
                    for ((x, &p), &q) in gb.data.iter_mut().zip(&av.data).zip(&bv.data) {
                        *x = *x - scale * sign(p - q);
                    }
                }
            }
        }
    }
}

#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |s, (&x, &y)| s + x * y)
}

#[inline]
fn sign<F: Real>(x: F) -> F {
    if x > F::zero() {
        F::one()
    } else if x < F::zero() {
        -F::one()
    } else {
        F::zero()
    }
}

pub fn softmax_in_place<F: Real>(row: &mut [F]) {
    let max = row.iter().fold(F::neg_infinity(), |m, &x| m.max(x));
    let mut s = F::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        s = s + *x;
    }
    for x in row.iter_mut() {
        *x = *x / s;
    }
}

pub fn normalize_in_place<F: Real>(row: &mut [F]) {
    let norm = dot(row, row).sqrt();
    if norm < F::c(NORMALIZE_FLOOR) {
        for x in row.iter_mut() {
            *x = F::zero();
        }
        if let Some(first) = row.first_mut() {
            *first = F::one();
        }
    } else {
        for x in row.iter_mut() {
            *x = *x / norm;
        }
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

#[inline]
fn gelu<F: Real>(x: F) -> F {
    let u = F::c(GELU_K) * (x + F::c(GELU_C) * x * x * x);
    F::c(0.5) * x * (F::one() + u.tanh())
}

#[inline]
fn gelu_grad<F: Real>(x: F) -> F {
    let u = F::c(GELU_K) * (x + F::c(GELU_C) * x * x * x);
    let t = u.tanh();
    let du = F::c(GELU_K) * (F::one() + F::c(3.0 * GELU_C) * x * x);
    F::c(0.5) * (F::one() + t) + F::c(0.5) * x * (F::one() - t * t) * du
}
