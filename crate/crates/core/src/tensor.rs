//! Dense row-major f64 matrices and the handful of kernels the pipeline is
//! built on. Everything that trains or gets gradient-checked runs in f64 so
//! central finite differences stay meaningful at 1e-4 relative tolerance.

use rayon::prelude::*;

/// Row-major matrix. Scalars are 1x1, row vectors 1xN.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "Mat::from_vec size mismatch");
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    pub fn scalar(v: f64) -> Self {
        Mat { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn reshaped(mut self, rows: usize, cols: usize) -> Mat {
        assert_eq!(rows * cols, self.data.len(), "reshape size mismatch");
        self.rows = rows;
        self.cols = cols;
        self
    }
}

/// C = opA(A) @ opB(B) where each op is an optional transpose.
///
/// Only the nn / nt / tn layouts are needed (the autodiff backward never
/// produces tt); nn uses the cache-friendly ikj order, nt reduces to row
/// dot products, tn accumulates rank-1 updates.
pub fn matmul(a: &Mat, ta: bool, b: &Mat, tb: bool) -> Mat {
    let (m, ka) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (kb, n) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(ka, kb, "matmul inner dim mismatch: {}x{} vs {}x{}", m, ka, kb, n);
    let k = ka;
    let mut c = Mat::zeros(m, n);
    let flops = m * n * k;
    match (ta, tb) {
        (false, false) => {
            let kernel = |i: usize, crow: &mut [f64]| {
                let arow = &a.data[i * k..(i + 1) * k];
                for (l, &av) in arow.iter().enumerate() {
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &b.data[l * n..(l + 1) * n];
                    for (cv, &bv) in crow.iter_mut().zip(brow.iter()) {
                        *cv += av * bv;
                    }
                }
            };
            if flops > 1 << 20 {
                c.data
                    .par_chunks_mut(n)
                    .enumerate()
                    .for_each(|(i, crow)| kernel(i, crow));
            } else {
                for (i, crow) in c.data.chunks_mut(n).enumerate() {
                    kernel(i, crow);
                }
            }
        }
        (false, true) => {
            let kernel = |i: usize, crow: &mut [f64]| {
                let arow = &a.data[i * k..(i + 1) * k];
                for (j, cv) in crow.iter_mut().enumerate() {
                    let brow = &b.data[j * k..(j + 1) * k];
                    let mut acc = 0.0;
                    for (&av, &bv) in arow.iter().zip(brow.iter()) {
                        acc += av * bv;
                    }
                    *cv = acc;
                }
            };
            if flops > 1 << 20 {
                c.data
                    .par_chunks_mut(n)
                    .enumerate()
                    .for_each(|(i, crow)| kernel(i, crow));
            } else {
                for (i, crow) in c.data.chunks_mut(n).enumerate() {
                    kernel(i, crow);
                }
            }
        }
        (true, false) => {
            // C[i,j] = sum_l A[l,i] * B[l,j]
            if flops > 1 << 20 {
                c.data
                    .par_chunks_mut(n)
                    .enumerate()
                    .for_each(|(i, crow)| {
                        for l in 0..k {
                            let av = a.data[l * m + i];
                            if av == 0.0 {
                                continue;
                            }
                            let brow = &b.data[l * n..(l + 1) * n];
                            for (cv, &bv) in crow.iter_mut().zip(brow.iter()) {
                                *cv += av * bv;
                            }
                        }
                    });
            } else {
                for l in 0..k {
                    let arow = &a.data[l * m..(l + 1) * m];
                    let brow = &b.data[l * n..(l + 1) * n];
                    for (i, &av) in arow.iter().enumerate() {
                        if av == 0.0 {
                            continue;
                        }
                        let crow = &mut c.data[i * n..(i + 1) * n];
                        for (cv, &bv) in crow.iter_mut().zip(brow.iter()) {
                            *cv += av * bv;
                        }
                    }
                }
            }
        }
        (true, true) => {
            // Not used on any hot path; fall back through a transpose.
            let at = a.transpose();
            return matmul(&at, false, b, true);
        }
    }
    c
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity with a small guard against zero vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm2(a);
    let nb = norm2(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

pub fn normalize(v: &mut [f64]) {
    let n = norm2(v);
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

/// Pearson correlation; returns None when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    if a.is_empty() {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (&x, &y) in a.iter().zip(b.iter()) {
        let dx = x - ma;
        let dy = y - mb;
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}
