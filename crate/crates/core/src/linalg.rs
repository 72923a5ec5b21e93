//! Row-major matrices and the small set of dense kernels the networks need.
//!
//! Weights are stored `[out × in]`, activations `[batch × dim]`, so every
//! product below reduces to dot products or axpy updates over contiguous
//! rows. The dot kernel keeps eight independent accumulator lanes in two
//! banks, which is what lets LLVM emit packed FMA for the hot loops.

/// Dense row-major matrix.
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

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |v| v.len());
        let mut data = Vec::with_capacity(r * c);
        for row in &rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Dot product with lane-blocked accumulation (deterministic order).
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    const W: usize = 32;
    let mut acc = [0.0f64; W];
    let ca = a.chunks_exact(W);
    let cb = b.chunks_exact(W);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for l in 0..W {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut s = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    for v in acc {
        s += v;
    }
    s
}

/// `y += alpha * x`.
#[inline]
pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = a · bᵀ` — the forward product `X · Wᵀ` (`a: m×k`, `b: n×k`).
pub fn gemm_nt(out: &mut Mat, a: &Mat, b: &Mat) {
    assert_eq!(a.cols, b.cols, "inner dim mismatch");
    assert_eq!(out.rows, a.rows);
    assert_eq!(out.cols, b.rows);
    for i in 0..a.rows {
        let ar = a.row(i);
        let or = out.row_mut(i);
        for j in 0..b.rows {
            or[j] = dot(ar, b.row(j));
        }
    }
}

/// `out = a · b` — the input-gradient product `δ · W` (`a: m×k`, `b: k×n`).
pub fn gemm_nn(out: &mut Mat, a: &Mat, b: &Mat) {
    assert_eq!(a.cols, b.rows, "inner dim mismatch");
    assert_eq!(out.rows, a.rows);
    assert_eq!(out.cols, b.cols);
    out.fill(0.0);
    for i in 0..a.rows {
        let ar = a.row(i);
        let or = out.row_mut(i);
        for (k, &aik) in ar.iter().enumerate() {
            axpy(or, aik, b.row(k));
        }
    }
}

/// `out += aᵀ · b` — the weight-gradient product `δᵀ · X` (`a: m×j`, `b: m×n`).
///
/// Blocked over output rows so each block stays hot while `b` streams once.
pub fn gemm_tn_acc(out: &mut Mat, a: &Mat, b: &Mat) {
    assert_eq!(a.rows, b.rows, "batch dim mismatch");
    assert_eq!(out.rows, a.cols);
    assert_eq!(out.cols, b.cols);
    const JB: usize = 8;
    let mut j0 = 0;
    while j0 < a.cols {
        let j1 = (j0 + JB).min(a.cols);
        for i in 0..a.rows {
            let ar = a.row(i);
            let br = b.row(i);
            for j in j0..j1 {
                axpy(out.row_mut(j), ar[j], br);
            }
        }
        j0 = j1;
    }
}

/// Broadcast-add a row vector to every row.
pub fn add_row_bias(out: &mut Mat, bias: &[f64]) {
    assert_eq!(out.cols, bias.len());
    for i in 0..out.rows {
        for (o, b) in out.row_mut(i).iter_mut().zip(bias) {
            *o += b;
        }
    }
}

/// Column sums (gradient of a broadcast bias).
pub fn col_sums_into(acc: &mut [f64], m: &Mat) {
    assert_eq!(acc.len(), m.cols);
    for i in 0..m.rows {
        for (a, v) in acc.iter_mut().zip(m.row(i)) {
            *a += v;
        }
    }
}
