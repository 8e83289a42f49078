//! Minimal reverse-mode differentiation over dense row-major matrices.
//!
//! Every operation records itself on the tape; [`Tape::backward`] walks the
//! record in reverse and accumulates gradients. The op set is exactly what
//! the propagation networks, selection head and stop head need.

use crate::error::{Error, Result};

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Matrix {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Matrix { rows, cols, data }
    }

    pub fn column(data: Vec<f64>) -> Matrix {
        Matrix {
            rows: data.len(),
            cols: 1,
            data,
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub type TensorId = usize;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(TensorId, TensorId),
    Add(TensorId, TensorId),
    Scale(TensorId, f64),
    Neg(TensorId),
    OneMinus(TensorId),
    Relu(TensorId),
    LeakyRelu(TensorId, f64),
    Sigmoid(TensorId),
    Softplus(TensorId),
    Log(TensorId),
    MulElem(TensorId, TensorId),
    ConcatCols(Vec<TensorId>),
    ConcatRows(Vec<TensorId>),
    GatherRows(TensorId, Vec<usize>),
    /// (source, destination row per source row, output row count)
    ScatterAddRows(TensorId, Vec<usize>, usize),
    /// Softmax over a column vector within contiguous segments.
    SegmentSoftmax(TensorId, Vec<usize>),
    /// (E x M) scaled per row by an (E x 1) coefficient column.
    MulColBroadcast(TensorId, TensorId),
    SumRows(TensorId),
    Pick(TensorId, usize, usize),
}

struct Node {
    op: Op,
    value: Matrix,
    grad: Matrix,
}

/// A computation tape. Create one per forward/backward episode.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, value: Matrix) -> TensorId {
        let grad = Matrix::zeros(value.rows, value.cols);
        self.nodes.push(Node { op, value, grad });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: Matrix) -> TensorId {
        self.push(Op::Leaf, value)
    }

    pub fn value(&self, id: TensorId) -> &Matrix {
        &self.nodes[id].value
    }

    pub fn grad(&self, id: TensorId) -> &Matrix {
        &self.nodes[id].grad
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ma, mb) = (&self.nodes[a].value, &self.nodes[b].value);
        if ma.cols != mb.rows {
            return Err(Error::Shape(format!(
                "matmul {}x{} by {}x{}",
                ma.rows, ma.cols, mb.rows, mb.cols
            )));
        }
        let (n, k, m) = (ma.rows, ma.cols, mb.cols);
        let mut out = Matrix::zeros(n, m);
        for i in 0..n {
            for p in 0..k {
                let aip = ma.data[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &mb.data[p * m..(p + 1) * m];
                let orow = &mut out.data[i * m..(i + 1) * m];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        Ok(self.push(Op::MatMul(a, b), out))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ma, mb) = (&self.nodes[a].value, &self.nodes[b].value);
        if ma.rows != mb.rows || ma.cols != mb.cols {
            return Err(Error::Shape(format!(
                "add {}x{} to {}x{}",
                ma.rows, ma.cols, mb.rows, mb.cols
            )));
        }
        let data = ma.data.iter().zip(&mb.data).map(|(x, y)| x + y).collect();
        let out = Matrix::from_vec(ma.rows, ma.cols, data);
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn scale(&mut self, a: TensorId, s: f64) -> TensorId {
        let ma = &self.nodes[a].value;
        let out = Matrix::from_vec(ma.rows, ma.cols, ma.data.iter().map(|x| x * s).collect());
        self.push(Op::Scale(a, s), out)
    }

    pub fn neg(&mut self, a: TensorId) -> TensorId {
        let ma = &self.nodes[a].value;
        let out = Matrix::from_vec(ma.rows, ma.cols, ma.data.iter().map(|x| -x).collect());
        self.push(Op::Neg(a), out)
    }

    pub fn one_minus(&mut self, a: TensorId) -> TensorId {
        let ma = &self.nodes[a].value;
        let out = Matrix::from_vec(ma.rows, ma.cols, ma.data.iter().map(|x| 1.0 - x).collect());
        self.push(Op::OneMinus(a), out)
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let ma = &self.nodes[a].value;
        let out = Matrix::from_vec(ma.rows, ma.cols, ma.data.iter().map(|x| x.max(0.0)).collect());
        self.push(Op::Relu(a), out)
    }

    pub fn leaky_relu(&mut self, a: TensorId, slope: f64) -> TensorId {
        let ma = &self.nodes[a].value;
        let data = ma
            .data
            .iter()
            .map(|&x| if x > 0.0 { x } else { slope * x })
            .collect();
        let out = Matrix::from_vec(ma.rows, ma.cols, data);
        self.push(Op::LeakyRelu(a, slope), out)
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let ma = &self.nodes[a].value;
        let data = ma.data.iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect();
        let out = Matrix::from_vec(ma.rows, ma.cols, data);
        self.push(Op::Sigmoid(a), out)
    }

    /// ln(1 + e^x), evaluated stably; equals -ln(sigmoid(-x)).
    pub fn softplus(&mut self, a: TensorId) -> TensorId {
        let ma = &self.nodes[a].value;
        let data = ma
            .data
            .iter()
            .map(|&x| x.max(0.0) + (-x.abs()).exp().ln_1p())
            .collect();
        let out = Matrix::from_vec(ma.rows, ma.cols, data);
        self.push(Op::Softplus(a), out)
    }

    pub fn log(&mut self, a: TensorId) -> TensorId {
        let ma = &self.nodes[a].value;
        let out = Matrix::from_vec(ma.rows, ma.cols, ma.data.iter().map(|x| x.ln()).collect());
        self.push(Op::Log(a), out)
    }

    pub fn mul_elem(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ma, mb) = (&self.nodes[a].value, &self.nodes[b].value);
        if ma.rows != mb.rows || ma.cols != mb.cols {
            return Err(Error::Shape("mul_elem shape mismatch".into()));
        }
        let data = ma.data.iter().zip(&mb.data).map(|(x, y)| x * y).collect();
        let out = Matrix::from_vec(ma.rows, ma.cols, data);
        Ok(self.push(Op::MulElem(a, b), out))
    }

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        assert!(!parts.is_empty());
        let rows = self.nodes[parts[0]].value.rows;
        if parts.iter().any(|&p| self.nodes[p].value.rows != rows) {
            return Err(Error::Shape("concat_cols row mismatch".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.nodes[p].value.cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let mp = &self.nodes[p].value;
            for r in 0..rows {
                out.data[r * cols + offset..r * cols + offset + mp.cols]
                    .copy_from_slice(mp.row(r));
            }
            offset += mp.cols;
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec()), out))
    }

    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        assert!(!parts.is_empty());
        let cols = self.nodes[parts[0]].value.cols;
        if parts.iter().any(|&p| self.nodes[p].value.cols != cols) {
            return Err(Error::Shape("concat_rows col mismatch".into()));
        }
        let rows: usize = parts.iter().map(|&p| self.nodes[p].value.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(&self.nodes[p].value.data);
        }
        Ok(self.push(Op::ConcatRows(parts.to_vec()), Matrix::from_vec(rows, cols, data)))
    }

    pub fn gather_rows(&mut self, a: TensorId, idx: &[usize]) -> TensorId {
        let ma = &self.nodes[a].value;
        let mut out = Matrix::zeros(idx.len(), ma.cols);
        for (r, &i) in idx.iter().enumerate() {
            out.data[r * ma.cols..(r + 1) * ma.cols].copy_from_slice(ma.row(i));
        }
        self.push(Op::GatherRows(a, idx.to_vec()), out)
    }

    pub fn scatter_add_rows(&mut self, a: TensorId, dst: &[usize], out_rows: usize) -> TensorId {
        let ma = &self.nodes[a].value;
        assert_eq!(ma.rows, dst.len(), "one destination per source row");
        let mut out = Matrix::zeros(out_rows, ma.cols);
        for (r, &d) in dst.iter().enumerate() {
            let src = &ma.data[r * ma.cols..(r + 1) * ma.cols];
            let dr = &mut out.data[d * ma.cols..(d + 1) * ma.cols];
            for (o, &s) in dr.iter_mut().zip(src) {
                *o += s;
            }
        }
        self.push(Op::ScatterAddRows(a, dst.to_vec(), out_rows), out)
    }

    /// Softmax within contiguous segments of a column vector. `segments[e]`
    /// gives the segment of row e; rows of one segment must be contiguous.
    pub fn segment_softmax(&mut self, a: TensorId, segments: &[usize]) -> Result<TensorId> {
        let ma = &self.nodes[a].value;
        if ma.cols != 1 || ma.rows != segments.len() {
            return Err(Error::Shape("segment_softmax expects a column".into()));
        }
        let mut out = vec![0.0; ma.rows];
        let mut start = 0;
        while start < ma.rows {
            let seg = segments[start];
            let mut end = start;
            while end < ma.rows && segments[end] == seg {
                end += 1;
            }
            let max = ma.data[start..end]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for e in start..end {
                let v = (ma.data[e] - max).exp();
                out[e] = v;
                sum += v;
            }
            for v in &mut out[start..end] {
                *v /= sum;
            }
            start = end;
        }
        let m = Matrix::column(out);
        Ok(self.push(Op::SegmentSoftmax(a, segments.to_vec()), m))
    }

    /// Scales each row of `a` (E x M) by the matching entry of column `c`.
    pub fn mul_col_broadcast(&mut self, a: TensorId, c: TensorId) -> Result<TensorId> {
        let (ma, mc) = (&self.nodes[a].value, &self.nodes[c].value);
        if mc.cols != 1 || mc.rows != ma.rows {
            return Err(Error::Shape("mul_col_broadcast wants E x 1 coeffs".into()));
        }
        let mut out = Matrix::zeros(ma.rows, ma.cols);
        for r in 0..ma.rows {
            let coeff = mc.data[r];
            for col in 0..ma.cols {
                out.data[r * ma.cols + col] = ma.data[r * ma.cols + col] * coeff;
            }
        }
        Ok(self.push(Op::MulColBroadcast(a, c), out))
    }

    pub fn sum_rows(&mut self, a: TensorId) -> TensorId {
        let ma = &self.nodes[a].value;
        let mut out = Matrix::zeros(1, ma.cols);
        for r in 0..ma.rows {
            for c in 0..ma.cols {
                out.data[c] += ma.data[r * ma.cols + c];
            }
        }
        self.push(Op::SumRows(a), out)
    }

    pub fn pick(&mut self, a: TensorId, r: usize, c: usize) -> TensorId {
        let v = self.nodes[a].value.get(r, c);
        self.push(Op::Pick(a, r, c), Matrix::from_vec(1, 1, vec![v]))
    }

    pub fn scalar(&self, id: TensorId) -> f64 {
        let m = &self.nodes[id].value;
        debug_assert_eq!((m.rows, m.cols), (1, 1));
        m.data[0]
    }

    /// Runs the backward pass from a scalar root.
    pub fn backward(&mut self, root: TensorId) -> Result<()> {
        let m = &self.nodes[root].value;
        if (m.rows, m.cols) != (1, 1) {
            return Err(Error::Shape("backward root must be 1x1".into()));
        }
        self.nodes[root].grad.data[0] = 1.0;
        for id in (0..=root).rev() {
            // Split borrows: take the grad out, write into parents.
            let grad = std::mem::replace(
                &mut self.nodes[id].grad,
                Matrix::zeros(0, 0),
            );
            if grad.data.iter().all(|&g| g == 0.0) {
                self.nodes[id].grad = grad;
                continue;
            }
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let (n, k) = (self.nodes[a].value.rows, self.nodes[a].value.cols);
                    let m = self.nodes[b].value.cols;
                    // dA += G * B^T
                    let mut da = vec![0.0; n * k];
                    {
                        let bm = &self.nodes[b].value;
                        for i in 0..n {
                            for j in 0..m {
                                let g = grad.data[i * m + j];
                                if g == 0.0 {
                                    continue;
                                }
                                for p in 0..k {
                                    da[i * k + p] += g * bm.data[p * m + j];
                                }
                            }
                        }
                    }
                    // dB += A^T * G
                    let mut db = vec![0.0; k * m];
                    {
                        let am = &self.nodes[a].value;
                        for i in 0..n {
                            for p in 0..k {
                                let av = am.data[i * k + p];
                                if av == 0.0 {
                                    continue;
                                }
                                for j in 0..m {
                                    db[p * m + j] += av * grad.data[i * m + j];
                                }
                            }
                        }
                    }
                    for (dst, src) in self.nodes[a].grad.data.iter_mut().zip(&da) {
                        *dst += src;
                    }
                    for (dst, src) in self.nodes[b].grad.data.iter_mut().zip(&db) {
                        *dst += src;
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    for (dst, src) in self.nodes[a].grad.data.iter_mut().zip(&grad.data) {
                        *dst += src;
                    }
                    for (dst, src) in self.nodes[b].grad.data.iter_mut().zip(&grad.data) {
                        *dst += src;
                    }
                }
                Op::Scale(a, s) => {
                    let (a, s) = (*a, *s);
                    for (dst, src) in self.nodes[a].grad.data.iter_mut().zip(&grad.data) {
                        *dst += src * s;
                    }
                }
                Op::Neg(a) => {
                    let a = *a;
                    for (dst, src) in self.nodes[a].grad.data.iter_mut().zip(&grad.data) {
                        *dst -= src;
                    }
                }
                Op::OneMinus(a) => {
                    let a = *a;
                    for (dst, src) in self.nodes[a].grad.data.iter_mut().zip(&grad.data) {
                        *dst -= src;
                    }
                }
                Op::Relu(a) => {
                    let a = *a;
                    let vals: Vec<f64> = self.nodes[a].value.data.clone();
                    for ((dst, src), v) in
                        self.nodes[a].grad.data.iter_mut().zip(&grad.data).zip(vals)
                    {
                        if v > 0.0 {
                            *dst += src;
                        }
                    }
                }
                Op::LeakyRelu(a, slope) => {
                    let (a, slope) = (*a, *slope);
                    let vals: Vec<f64> = self.nodes[a].value.data.clone();
                    for ((dst, src), v) in
                        self.nodes[a].grad.data.iter_mut().zip(&grad.data).zip(vals)
                    {
                        *dst += src * if v > 0.0 { 1.0 } else { slope };
                    }
                }
                Op::Sigmoid(a) => {
                    let a = *a;
                    let outs: Vec<f64> = self.nodes[id].value.data.clone();
                    for ((dst, src), s) in
                        self.nodes[a].grad.data.iter_mut().zip(&grad.data).zip(outs)
                    {
                        *dst += src * s * (1.0 - s);
                    }
                }
                Op::Softplus(a) => {
                    let a = *a;
                    let vals: Vec<f64> = self.nodes[a].value.data.clone();
                    for ((dst, src), v) in
                        self.nodes[a].grad.data.iter_mut().zip(&grad.data).zip(vals)
                    {
                        *dst += src / (1.0 + (-v).exp());
                    }
                }
                Op::Log(a) => {
                    let a = *a;
                    let vals: Vec<f64> = self.nodes[a].value.data.clone();
                    for ((dst, src), v) in
                        self.nodes[a].grad.data.iter_mut().zip(&grad.data).zip(vals)
                    {
                        *dst += src / v;
                    }
                }
                Op::MulElem(a, b) => {
                    let (a, b) = (*a, *b);
                    let av: Vec<f64> = self.nodes[a].value.data.clone();
                    let bv: Vec<f64> = self.nodes[b].value.data.clone();
                    for ((dst, src), v) in
                        self.nodes[a].grad.data.iter_mut().zip(&grad.data).zip(&bv)
                    {
                        *dst += src * v;
                    }
                    for ((dst, src), v) in
                        self.nodes[b].grad.data.iter_mut().zip(&grad.data).zip(&av)
                    {
                        *dst += src * v;
                    }
                }
                Op::ConcatCols(parts) => {
                    let parts = parts.clone();
                    let rows = grad.rows;
                    let total = grad.cols;
                    let mut offset = 0;
                    for p in parts {
                        let pc = self.nodes[p].value.cols;
                        for r in 0..rows {
                            for c in 0..pc {
                                self.nodes[p].grad.data[r * pc + c] +=
                                    grad.data[r * total + offset + c];
                            }
                        }
                        offset += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let parts = parts.clone();
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[p].value.data.len();
                        for (dst, src) in self.nodes[p]
                            .grad
                            .data
                            .iter_mut()
                            .zip(&grad.data[offset..offset + len])
                        {
                            *dst += src;
                        }
                        offset += len;
                    }
                }
                Op::GatherRows(a, idx) => {
                    let (a, idx) = (*a, idx.clone());
                    let cols = grad.cols;
                    for (r, &i) in idx.iter().enumerate() {
                        for c in 0..cols {
                            self.nodes[a].grad.data[i * cols + c] += grad.data[r * cols + c];
                        }
                    }
                }
                Op::ScatterAddRows(a, dst, _) => {
                    let (a, dst) = (*a, dst.clone());
                    let cols = grad.cols;
                    for (r, &d) in dst.iter().enumerate() {
                        for c in 0..cols {
                            self.nodes[a].grad.data[r * cols + c] += grad.data[d * cols + c];
                        }
                    }
                }
                Op::SegmentSoftmax(a, segments) => {
                    let (a, segments) = (*a, segments.clone());
                    let y: Vec<f64> = self.nodes[id].value.data.clone();
                    let mut dx = vec![0.0; y.len()];
                    let mut start = 0;
                    while start < y.len() {
                        let seg = segments[start];
                        let mut end = start;
                        while end < y.len() && segments[end] == seg {
                            end += 1;
                        }
                        let dot: f64 = (start..end).map(|e| grad.data[e] * y[e]).sum();
                        for e in start..end {
                            dx[e] = y[e] * (grad.data[e] - dot);
                        }
                        start = end;
                    }
                    for (dst2, src) in self.nodes[a].grad.data.iter_mut().zip(&dx) {
                        *dst2 += src;
                    }
                }
                Op::MulColBroadcast(a, c) => {
                    let (a, c) = (*a, *c);
                    let av: Vec<f64> = self.nodes[a].value.data.clone();
                    let cv: Vec<f64> = self.nodes[c].value.data.clone();
                    let cols = grad.cols;
                    for r in 0..grad.rows {
                        let coeff = cv[r];
                        let mut acc = 0.0;
                        for col in 0..cols {
                            let g = grad.data[r * cols + col];
                            self.nodes[a].grad.data[r * cols + col] += g * coeff;
                            acc += g * av[r * cols + col];
                        }
                        self.nodes[c].grad.data[r] += acc;
                    }
                }
                Op::SumRows(a) => {
                    let a = *a;
                    let cols = grad.cols;
                    let rows = self.nodes[a].value.rows;
                    for r in 0..rows {
                        for c in 0..cols {
                            self.nodes[a].grad.data[r * cols + c] += grad.data[c];
                        }
                    }
                }
                Op::Pick(a, r, c) => {
                    let (a, r, c) = (*a, *r, *c);
                    let cols = self.nodes[a].value.cols;
                    self.nodes[a].grad.data[r * cols + c] += grad.data[0];
                }
            }
            self.nodes[id].grad = grad;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite difference for one leaf entry of a scalar function.
    fn fd_check<F>(build: F, leaf_shape: (usize, usize), seed_vals: Vec<f64>)
    where
        F: Fn(&mut Tape, TensorId) -> TensorId,
    {
        let h = 1e-6;
        for i in 0..seed_vals.len() {
            let eval = |vals: &[f64]| -> f64 {
                let mut tape = Tape::new();
                let leaf = tape.leaf(Matrix::from_vec(
                    leaf_shape.0,
                    leaf_shape.1,
                    vals.to_vec(),
                ));
                let root = build(&mut tape, leaf);
                tape.scalar(root)
            };
            let mut tape = Tape::new();
            let leaf = tape.leaf(Matrix::from_vec(
                leaf_shape.0,
                leaf_shape.1,
                seed_vals.clone(),
            ));
            let root = build(&mut tape, leaf);
            tape.backward(root).unwrap();
            let analytic = tape.grad(leaf).data[i];

            let mut plus = seed_vals.clone();
            plus[i] += h;
            let mut minus = seed_vals.clone();
            minus[i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(
                (analytic - numeric).abs() / denom < 1e-5,
                "entry {i}: analytic {analytic} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn matmul_sigmoid_gradient() {
        let vals = vec![0.3, -0.7, 0.2, 0.9, -0.1, 0.5];
        fd_check(
            |tape, leaf| {
                let w = tape.leaf(Matrix::from_vec(3, 1, vec![0.4, -0.2, 0.8]));
                let prod = tape.matmul(leaf, w).unwrap();
                let act = tape.sigmoid(prod);
                let summed = tape.sum_rows(act);
                tape.pick(summed, 0, 0)
            },
            (2, 3),
            vals,
        );
    }

    #[test]
    fn segment_softmax_gradient() {
        let vals = vec![0.1, 0.9, -0.4, 0.2, 0.6];
        fd_check(
            |tape, leaf| {
                let sm = tape.segment_softmax(leaf, &[0, 0, 0, 1, 1]).unwrap();
                let lg = tape.log(sm);
                let picked = tape.pick(lg, 1, 0);
                let picked2 = tape.pick(lg, 4, 0);
                let s = tape.add(picked, picked2).unwrap();
                tape.neg(s)
            },
            (5, 1),
            vals,
        );
    }

    #[test]
    fn gather_scatter_gradient() {
        let vals = vec![0.5, -0.3, 0.8, 0.1, 0.2, -0.6];
        fd_check(
            |tape, leaf| {
                let gathered = tape.gather_rows(leaf, &[2, 0, 2]);
                let scattered = tape.scatter_add_rows(gathered, &[0, 1, 1], 2);
                let relu = tape.leaky_relu(scattered, 0.2);
                let summed = tape.sum_rows(relu);
                let c = tape.leaf(Matrix::from_vec(2, 1, vec![0.7, -0.4]));
                let prod = tape.matmul(summed, c).unwrap();
                tape.pick(prod, 0, 0)
            },
            (3, 2),
            vals,
        );
    }

    #[test]
    fn concat_and_broadcast_gradient() {
        let vals = vec![0.2, -0.5, 0.7, 0.3];
        fd_check(
            |tape, leaf| {
                let coeff = tape.leaf(Matrix::column(vec![0.9, -0.2]));
                let scaled = tape.mul_col_broadcast(leaf, coeff).unwrap();
                let cat = tape.concat_cols(&[leaf, scaled]).unwrap();
                let w = tape.leaf(Matrix::from_vec(4, 1, vec![0.1, 0.2, 0.3, 0.4]));
                let prod = tape.matmul(cat, w).unwrap();
                let act = tape.relu(prod);
                let summed = tape.sum_rows(act);
                tape.pick(summed, 0, 0)
            },
            (2, 2),
            vals,
        );
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut tape = Tape::new();
        let leaf = tape.leaf(Matrix::column(vec![1.0, 3.0, -2.0, 0.0, 0.5]));
        let sm = tape.segment_softmax(leaf, &[0, 0, 0, 1, 1]).unwrap();
        let v = &tape.value(sm).data;
        assert!((v[0] + v[1] + v[2] - 1.0).abs() < 1e-12);
        assert!((v[3] + v[4] - 1.0).abs() < 1e-12);
        assert!(v.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn closed_form_softmax() {
        let mut tape = Tape::new();
        let leaf = tape.leaf(Matrix::column(vec![0.0, 3f64.ln()]));
        let sm = tape.segment_softmax(leaf, &[0, 0]).unwrap();
        let v = &tape.value(sm).data;
        assert!((v[0] - 0.25).abs() < 1e-12);
        assert!((v[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn grad_accumulates_on_reuse() {
        // f = x * x via mul_elem with the same id on both sides.
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::from_vec(1, 1, vec![3.0]));
        let sq = tape.mul_elem(x, x).unwrap();
        let root = tape.pick(sq, 0, 0);
        tape.backward(root).unwrap();
        assert!((tape.grad(x).data[0] - 6.0).abs() < 1e-12);
    }
}
