//! Define-by-run reverse-mode autodiff over [`Mat`] values.
//!
//! A [`Graph`] is a flat tape of nodes; each op computes its value eagerly at
//! construction time and `backward` walks the tape once in reverse. The op
//! set is deliberately small: everything the decoders and the motion
//! generator need composes out of these primitives, and every primitive is
//! covered by a finite-difference check in the tests below.

use std::sync::Arc;

use crate::tensor::{matmul, Mat};

pub type Var = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// [m,n] + broadcast [1,n]
    AddRow(Var, Var),
    /// [m,n] * broadcast [1,n]
    MulRow(Var, Var),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Tanh(Var),
    Exp(Var),
    /// x / s with s a 1x1 variable (used for the learned temperature).
    DivScalar { x: Var, s: Var },
    SumAll(Var),
    /// Mean of the main diagonal of a square matrix.
    DiagMean(Var),
    LogSoftmaxRows(Var),
    /// Row softmax with blocked entries forced to zero probability
    /// (the mask is applied at construction; backward only needs y).
    SoftmaxRowsMasked { x: Var },
    /// Rows scaled to unit L2 norm.
    NormalizeRows(Var),
    /// Per-row standardization (x - mean) / sqrt(var + eps), no affine part.
    LayerNormRows { x: Var, eps: f64 },
    SliceRows { x: Var, from: usize },
    SliceCols { x: Var, from: usize, to: usize },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Transpose(Var),
    Reshape { x: Var },
}

struct Node {
    op: Op,
    value: Mat,
}

/// Gradients indexed by node id; `None` for nodes the loss does not reach.
pub struct Grads(Vec<Option<Mat>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.0.get(v).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.0.get_mut(v).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let m = &self.nodes[v].value;
        debug_assert_eq!(m.len(), 1, "scalar_value on non-scalar");
        m.data[0]
    }

    fn push(&mut self, op: Op, value: Mat) -> Var {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let va = &self.nodes[a].value;
        let vb = &self.nodes[b].value;
        assert_eq!((va.rows, va.cols), (vb.rows, vb.cols), "add shape mismatch");
        let data = va.data.iter().zip(vb.data.iter()).map(|(x, y)| x + y).collect();
        let value = Mat { rows: va.rows, cols: va.cols, data };
        self.push(Op::Add(a, b), value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let va = &self.nodes[a].value;
        let vb = &self.nodes[b].value;
        assert_eq!((va.rows, va.cols), (vb.rows, vb.cols), "sub shape mismatch");
        let data = va.data.iter().zip(vb.data.iter()).map(|(x, y)| x - y).collect();
        let value = Mat { rows: va.rows, cols: va.cols, data };
        self.push(Op::Sub(a, b), value)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let va = &self.nodes[a].value;
        let vb = &self.nodes[b].value;
        assert_eq!((va.rows, va.cols), (vb.rows, vb.cols), "mul shape mismatch");
        let data = va.data.iter().zip(vb.data.iter()).map(|(x, y)| x * y).collect();
        let value = Mat { rows: va.rows, cols: va.cols, data };
        self.push(Op::Mul(a, b), value)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.nodes[a].value.map(|v| v * c);
        self.push(Op::Scale(a, c), value)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let va = &self.nodes[a].value;
        let vr = &self.nodes[row].value;
        assert_eq!(vr.rows, 1, "add_row expects a 1xN row");
        assert_eq!(va.cols, vr.cols, "add_row width mismatch");
        let mut value = va.clone();
        for r in 0..value.rows {
            let slice = value.row_mut(r);
            for (x, &b) in slice.iter_mut().zip(vr.data.iter()) {
                *x += b;
            }
        }
        self.push(Op::AddRow(a, row), value)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let va = &self.nodes[a].value;
        let vr = &self.nodes[row].value;
        assert_eq!(vr.rows, 1, "mul_row expects a 1xN row");
        assert_eq!(va.cols, vr.cols, "mul_row width mismatch");
        let mut value = va.clone();
        for r in 0..value.rows {
            let slice = value.row_mut(r);
            for (x, &b) in slice.iter_mut().zip(vr.data.iter()) {
                *x *= b;
            }
        }
        self.push(Op::MulRow(a, row), value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let value = matmul(&self.nodes[a].value, ta, &self.nodes[b].value, tb);
        self.push(Op::MatMul { a, b, ta, tb }, value)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.nodes[a].value.map(f64::tanh);
        self.push(Op::Tanh(a), value)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.nodes[a].value.map(f64::exp);
        self.push(Op::Exp(a), value)
    }

    pub fn div_scalar(&mut self, x: Var, s: Var) -> Var {
        let sv = self.scalar_value(s);
        let value = self.nodes[x].value.map(|v| v / sv);
        self.push(Op::DivScalar { x, s }, value)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.nodes[a].value.data.iter().sum();
        self.push(Op::SumAll(a), Mat::scalar(s))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.nodes[a].value.len();
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }

    pub fn diag_mean(&mut self, a: Var) -> Var {
        let v = &self.nodes[a].value;
        assert_eq!(v.rows, v.cols, "diag_mean expects a square matrix");
        let n = v.rows;
        let s: f64 = (0..n).map(|i| v.at(i, i)).sum();
        self.push(Op::DiagMean(a), Mat::scalar(s / n as f64))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let v = &self.nodes[a].value;
        let mut out = v.clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        self.push(Op::LogSoftmaxRows(a), out)
    }

    pub fn softmax_rows_masked(&mut self, a: Var, mask: Arc<Vec<bool>>) -> Var {
        let v = &self.nodes[a].value;
        assert_eq!(mask.len(), v.len(), "mask size mismatch");
        let mut out = v.clone();
        let cols = out.cols;
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let mrow = &mask[r * cols..(r + 1) * cols];
            let mut mx = f64::NEG_INFINITY;
            for (x, &vis) in row.iter().zip(mrow.iter()) {
                if vis && *x > mx {
                    mx = *x;
                }
            }
            assert!(mx.is_finite(), "softmax row {} has no visible key", r);
            let mut denom = 0.0;
            for (x, &vis) in row.iter_mut().zip(mrow.iter()) {
                if vis {
                    *x = (*x - mx).exp();
                    denom += *x;
                } else {
                    *x = 0.0;
                }
            }
            for x in row.iter_mut() {
                *x /= denom;
            }
        }
        self.push(Op::SoftmaxRowsMasked { x: a }, out)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let n = self.nodes[a].value.len();
        self.softmax_rows_masked(a, Arc::new(vec![true; n]))
    }

    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let v = &self.nodes[a].value;
        let mut out = v.clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                for x in row.iter_mut() {
                    *x /= n;
                }
            }
        }
        self.push(Op::NormalizeRows(a), out)
    }

    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let v = &self.nodes[a].value;
        let mut out = v.clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let n = row.len() as f64;
            let mu = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mu) * inv;
            }
        }
        self.push(Op::LayerNormRows { x: a, eps }, out)
    }

    pub fn slice_rows(&mut self, a: Var, from: usize, to: usize) -> Var {
        let v = &self.nodes[a].value;
        assert!(from <= to && to <= v.rows, "slice_rows out of range");
        let value = Mat {
            rows: to - from,
            cols: v.cols,
            data: v.data[from * v.cols..to * v.cols].to_vec(),
        };
        self.push(Op::SliceRows { x: a, from }, value)
    }

    pub fn slice_cols(&mut self, a: Var, from: usize, to: usize) -> Var {
        let v = &self.nodes[a].value;
        assert!(from <= to && to <= v.cols, "slice_cols out of range");
        let mut value = Mat::zeros(v.rows, to - from);
        for r in 0..v.rows {
            value
                .row_mut(r)
                .copy_from_slice(&v.row(r)[from..to]);
        }
        self.push(Op::SliceCols { x: a, from, to }, value)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.nodes[parts[0]].value.cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = &self.nodes[p].value;
            assert_eq!(v.cols, cols, "concat_rows width mismatch");
            rows += v.rows;
            data.extend_from_slice(&v.data);
        }
        self.push(Op::ConcatRows(parts.to_vec()), Mat { rows, cols, data })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.nodes[parts[0]].value.rows;
        let cols: usize = parts.iter().map(|&p| self.nodes[p].value.cols).sum();
        let mut value = Mat::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let v = &self.nodes[p].value;
            assert_eq!(v.rows, rows, "concat_cols height mismatch");
            for r in 0..rows {
                value.row_mut(r)[offset..offset + v.cols].copy_from_slice(v.row(r));
            }
            offset += v.cols;
        }
        self.push(Op::ConcatCols(parts.to_vec()), value)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.nodes[a].value.transpose();
        self.push(Op::Transpose(a), value)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let v = &self.nodes[a].value;
        assert_eq!(v.len(), rows * cols, "reshape size mismatch");
        let value = Mat { rows, cols, data: v.data.clone() };
        self.push(Op::Reshape { x: a }, value)
    }

    // Composite helpers -----------------------------------------------------

    /// Mean of squared differences over every element.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let sq = self.mul(d, d);
        self.mean_all(sq)
    }

    /// Mean over rows of squared L2 row norms of (a - b).
    pub fn row_sq_dist_mean(&mut self, a: Var, b: Var) -> Var {
        let rows = self.nodes[a].value.rows;
        let d = self.sub(a, b);
        let sq = self.mul(d, d);
        let s = self.sum_all(sq);
        self.scale(s, 1.0 / rows as f64)
    }

    /// Reverse pass from a scalar loss node.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.nodes[loss].value.len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[loss] = Some(Mat::scalar(1.0));

        for id in (0..=loss).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Grads(grads)
    }

    fn acc(grads: &mut [Option<Mat>], v: Var, add: Mat) {
        match &mut grads[v] {
            Some(existing) => {
                for (x, y) in existing.data.iter_mut().zip(add.data.iter()) {
                    *x += y;
                }
            }
            slot => *slot = Some(add),
        }
    }

    fn accumulate(&self, id: Var, g: &Mat, grads: &mut Vec<Option<Mat>>) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                Self::acc(grads, *a, g.clone());
                Self::acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                Self::acc(grads, *a, g.clone());
                Self::acc(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let va = &self.nodes[*a].value;
                let vb = &self.nodes[*b].value;
                let ga = Mat {
                    rows: g.rows,
                    cols: g.cols,
                    data: g.data.iter().zip(vb.data.iter()).map(|(x, y)| x * y).collect(),
                };
                let gb = Mat {
                    rows: g.rows,
                    cols: g.cols,
                    data: g.data.iter().zip(va.data.iter()).map(|(x, y)| x * y).collect(),
                };
                Self::acc(grads, *a, ga);
                Self::acc(grads, *b, gb);
            }
            Op::Scale(a, c) => {
                let c = *c;
                Self::acc(grads, *a, g.map(|v| v * c));
            }
            Op::AddRow(a, row) => {
                Self::acc(grads, *a, g.clone());
                let mut gr = Mat::zeros(1, g.cols);
                for r in 0..g.rows {
                    for (acc, &v) in gr.data.iter_mut().zip(g.row(r).iter()) {
                        *acc += v;
                    }
                }
                Self::acc(grads, *row, gr);
            }
            Op::MulRow(a, row) => {
                let va = &self.nodes[*a].value;
                let vr = &self.nodes[*row].value;
                let mut ga = g.clone();
                for r in 0..ga.rows {
                    for (x, &b) in ga.row_mut(r).iter_mut().zip(vr.data.iter()) {
                        *x *= b;
                    }
                }
                Self::acc(grads, *a, ga);
                let mut gr = Mat::zeros(1, g.cols);
                for r in 0..g.rows {
                    for j in 0..g.cols {
                        gr.data[j] += g.at(r, j) * va.at(r, j);
                    }
                }
                Self::acc(grads, *row, gr);
            }
            Op::MatMul { a, b, ta, tb } => {
                let va = &self.nodes[*a].value;
                let vb = &self.nodes[*b].value;
                // d(opA) = g @ opB(B)^T, then undo the transpose flag.
                let d_op_a = matmul(g, false, vb, !tb);
                let ga = if *ta { d_op_a.transpose() } else { d_op_a };
                Self::acc(grads, *a, ga);
                // d(opB) = opA(A)^T @ g.
                let d_op_b = matmul(va, !ta, g, false);
                let gb = if *tb { d_op_b.transpose() } else { d_op_b };
                Self::acc(grads, *b, gb);
            }
            Op::Tanh(a) => {
                let y = &self.nodes[id].value;
                let data = g
                    .data
                    .iter()
                    .zip(y.data.iter())
                    .map(|(gv, yv)| gv * (1.0 - yv * yv))
                    .collect();
                Self::acc(grads, *a, Mat { rows: g.rows, cols: g.cols, data });
            }
            Op::Exp(a) => {
                let y = &self.nodes[id].value;
                let data = g.data.iter().zip(y.data.iter()).map(|(gv, yv)| gv * yv).collect();
                Self::acc(grads, *a, Mat { rows: g.rows, cols: g.cols, data });
            }
            Op::DivScalar { x, s } => {
                let sv = self.nodes[*s].value.data[0];
                let y = &self.nodes[id].value;
                Self::acc(grads, *x, g.map(|v| v / sv));
                let gs: f64 = -g
                    .data
                    .iter()
                    .zip(y.data.iter())
                    .map(|(gv, yv)| gv * yv)
                    .sum::<f64>()
                    / sv;
                Self::acc(grads, *s, Mat::scalar(gs));
            }
            Op::SumAll(a) => {
                let va = &self.nodes[*a].value;
                let gv = g.data[0];
                Self::acc(grads, *a, Mat { rows: va.rows, cols: va.cols, data: vec![gv; va.len()] });
            }
            Op::DiagMean(a) => {
                let va = &self.nodes[*a].value;
                let n = va.rows;
                let mut ga = Mat::zeros(n, n);
                let gv = g.data[0] / n as f64;
                for i in 0..n {
                    *ga.at_mut(i, i) = gv;
                }
                Self::acc(grads, *a, ga);
            }
            Op::LogSoftmaxRows(a) => {
                // dx = g - softmax(x) * rowsum(g)
                let y = &self.nodes[id].value;
                let mut ga = g.clone();
                for r in 0..ga.rows {
                    let gsum: f64 = g.row(r).iter().sum();
                    let yrow = y.row(r);
                    for (x, &lv) in ga.row_mut(r).iter_mut().zip(yrow.iter()) {
                        *x -= lv.exp() * gsum;
                    }
                }
                Self::acc(grads, *a, ga);
            }
            Op::SoftmaxRowsMasked { x } => {
                // dx = y * (g - sum(g * y)) per row; blocked entries have y=0.
                let y = &self.nodes[id].value;
                let mut ga = g.clone();
                for r in 0..ga.rows {
                    let yrow = y.row(r);
                    let inner: f64 = g.row(r).iter().zip(yrow.iter()).map(|(a, b)| a * b).sum();
                    for (gv, &yv) in ga.row_mut(r).iter_mut().zip(yrow.iter()) {
                        *gv = yv * (*gv - inner);
                    }
                }
                Self::acc(grads, *x, ga);
            }
            Op::NormalizeRows(a) => {
                let va = &self.nodes[*a].value;
                let y = &self.nodes[id].value;
                let mut ga = g.clone();
                for r in 0..ga.rows {
                    let n = va.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
                    if n == 0.0 {
                        for x in ga.row_mut(r) {
                            *x = 0.0;
                        }
                        continue;
                    }
                    let yrow = y.row(r);
                    let gy: f64 = g.row(r).iter().zip(yrow.iter()).map(|(a, b)| a * b).sum();
                    for (gv, &yv) in ga.row_mut(r).iter_mut().zip(yrow.iter()) {
                        *gv = (*gv - yv * gy) / n;
                    }
                }
                Self::acc(grads, *a, ga);
            }
            Op::LayerNormRows { x, eps } => {
                let vx = &self.nodes[*x].value;
                let y = &self.nodes[id].value;
                let mut ga = g.clone();
                let n = vx.cols as f64;
                for r in 0..ga.rows {
                    let xrow = vx.row(r);
                    let mu = xrow.iter().sum::<f64>() / n;
                    let var = xrow.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
                    let inv = 1.0 / (var + eps).sqrt();
                    let yrow = y.row(r);
                    let gmean: f64 = g.row(r).iter().sum::<f64>() / n;
                    let gymean: f64 =
                        g.row(r).iter().zip(yrow.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
                    for (j, gv) in ga.row_mut(r).iter_mut().enumerate() {
                        *gv = inv * (*gv - gmean - yrow[j] * gymean);
                    }
                }
                Self::acc(grads, *x, ga);
            }
            Op::SliceRows { x, from } => {
                let vx = &self.nodes[*x].value;
                let mut ga = Mat::zeros(vx.rows, vx.cols);
                for r in 0..g.rows {
                    ga.row_mut(from + r).copy_from_slice(g.row(r));
                }
                Self::acc(grads, *x, ga);
            }
            Op::SliceCols { x, from, to } => {
                let vx = &self.nodes[*x].value;
                let mut ga = Mat::zeros(vx.rows, vx.cols);
                for r in 0..g.rows {
                    ga.row_mut(r)[*from..*to].copy_from_slice(g.row(r));
                }
                Self::acc(grads, *x, ga);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let vp = &self.nodes[p].value;
                    let mut gp = Mat::zeros(vp.rows, vp.cols);
                    gp.data
                        .copy_from_slice(&g.data[offset * g.cols..(offset + vp.rows) * g.cols]);
                    offset += vp.rows;
                    Self::acc(grads, p, gp);
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let vp = &self.nodes[p].value;
                    let mut gp = Mat::zeros(vp.rows, vp.cols);
                    for r in 0..vp.rows {
                        gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + vp.cols]);
                    }
                    offset += vp.cols;
                    Self::acc(grads, p, gp);
                }
            }
            Op::Transpose(a) => {
                Self::acc(grads, *a, g.transpose());
            }
            Op::Reshape { x } => {
                let vx = &self.nodes[*x].value;
                Self::acc(
                    grads,
                    *x,
                    Mat { rows: vx.rows, cols: vx.cols, data: g.data.clone() },
                );
            }
        }
    }
}
