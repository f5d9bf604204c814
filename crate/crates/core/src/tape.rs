//! A small reverse-mode differentiation tape over row-major 2D tensors.
//!
//! Rows are time steps and columns are channels. The op set is exactly what
//! the generator and the temporal encoder need: strided 1D convolution (a
//! per-row linear layer is a width-1 convolution), elementwise arithmetic,
//! row broadcasting, SiLU, channel concatenation and slicing, and temporal
//! mean pooling.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!("{} values for a {rows}x{cols} tensor", data.len())));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Tensor { rows: 1, cols: data.len(), data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn same_shape(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv { x: Var, w: Var, b: Var, kernel: usize, stride: usize, dilation: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    BroadcastRows(Var),
    Silu(Var),
    Exp(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Clamp(Var, f64, f64),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Gather(Var, Vec<usize>),
    MeanRows(Var),
    SelectRow(Var, usize),
    SumSquares(Var),
    Sum(Var),
}

#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<Tensor>,
    ops: Vec<Op>,
    exhausted: bool,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..n {
        s += a[i] * b[i];
    }
    s
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn conv_out_len(len: usize, kernel: usize, stride: usize) -> usize {
    dilated_out_len(len, kernel, stride, 1)
}

fn dilated_out_len(len: usize, kernel: usize, stride: usize, dilation: usize) -> usize {
    let pad = dilation * (kernel / 2);
    (len + 2 * pad).saturating_sub(dilation * (kernel - 1) + 1) / stride + 1
}

fn conv_forward(x: &Tensor, w: &Tensor, b: &Tensor, kernel: usize, stride: usize, dilation: usize) -> Tensor {
    let cin = x.cols;
    let cout = w.rows;
    let pad = dilation * (kernel / 2);
    let out_len = dilated_out_len(x.rows, kernel, stride, dilation);
    let mut out = Tensor::zeros(out_len, cout);
    for t in 0..out_len {
        let orow = &mut out.data[t * cout..(t + 1) * cout];
        orow.copy_from_slice(&b.data);
        for k in 0..kernel {
            let src = (t * stride + k * dilation) as isize - pad as isize;
            if src < 0 || src as usize >= x.rows {
                continue;
            }
            let xrow = x.row(src as usize);
            for (o, ov) in orow.iter_mut().enumerate() {
                let wrow = &w.data[o * kernel * cin + k * cin..o * kernel * cin + (k + 1) * cin];
                *ov += dot(wrow, xrow);
            }
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Records an input (parameter or data) that gradients can flow into.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Same-padded 1D convolution over rows. `w` is `cout × (kernel·cin)` with
    /// the kernel tap as the slower index; `b` is `1 × cout`.
    pub fn conv(&mut self, x: Var, w: Var, b: Var, kernel: usize, stride: usize) -> Result<Var> {
        self.conv_general(x, w, b, kernel, stride, 1)
    }

    /// Same-padded stride-1 convolution whose taps are `dilation` rows apart.
    pub fn dilated_conv(&mut self, x: Var, w: Var, b: Var, kernel: usize, dilation: usize) -> Result<Var> {
        self.conv_general(x, w, b, kernel, 1, dilation)
    }

    fn conv_general(&mut self, x: Var, w: Var, b: Var, kernel: usize, stride: usize, dilation: usize) -> Result<Var> {
        let (xv, wv, bv) = (&self.values[x.0], &self.values[w.0], &self.values[b.0]);
        if wv.cols != kernel * xv.cols || bv.len() != wv.rows || stride == 0 || kernel == 0 || dilation == 0 {
            return Err(Error::ShapeMismatch(format!(
                "conv: input {}x{}, weight {}x{}, bias {}, kernel {kernel}, stride {stride}",
                xv.rows,
                xv.cols,
                wv.rows,
                wv.cols,
                bv.len()
            )));
        }
        let out = conv_forward(xv, wv, bv, kernel, stride, dilation);
        Ok(self.push(out, Op::Conv { x, w, b, kernel, stride, dilation }))
    }

    /// Row-wise affine map `x Wᵀ + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.conv(x, w, b, 1, 1)
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (&self.values[a.0], &self.values[b.0]);
        if !av.same_shape(bv) {
            return Err(Error::ShapeMismatch(format!("{name}: {}x{} vs {}x{}", av.rows, av.cols, bv.rows, bv.cols)));
        }
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| f(*x, *y)).collect();
        Ok(Tensor { rows: av.rows, cols: av.cols, data })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    fn row_op(&mut self, a: Var, row: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, rv) = (&self.values[a.0], &self.values[row.0]);
        if rv.rows != 1 || rv.cols != av.cols {
            return Err(Error::ShapeMismatch(format!(
                "row broadcast: {}x{} with {}x{}",
                av.rows, av.cols, rv.rows, rv.cols
            )));
        }
        let mut out = av.clone();
        for r in out.data.chunks_mut(av.cols) {
            for (x, y) in r.iter_mut().zip(&rv.data) {
                *x = f(*x, *y);
            }
        }
        Ok(out)
    }

    /// Adds the `1 × C` vector `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = self.row_op(a, row, |x, y| x + y)?;
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    /// Multiplies every row of `a` elementwise by the `1 × C` vector `row`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = self.row_op(a, row, |x, y| x * y)?;
        Ok(self.push(out, Op::MulRow(a, row)))
    }

    /// Repeats a `1 × C` vector `rows` times.
    pub fn broadcast_rows(&mut self, row: Var, rows: usize) -> Result<Var> {
        let rv = &self.values[row.0];
        if rv.rows != 1 {
            return Err(Error::ShapeMismatch(format!("broadcast of a {}-row tensor", rv.rows)));
        }
        let mut data = Vec::with_capacity(rows * rv.cols);
        for _ in 0..rows {
            data.extend_from_slice(&rv.data);
        }
        let out = Tensor { rows, cols: rv.cols, data };
        Ok(self.push(out, Op::BroadcastRows(row)))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let av = &self.values[a.0];
        Tensor { rows: av.rows, cols: av.cols, data: av.data.iter().map(|x| f(*x)).collect() }
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.unary(a, |x| x * sigmoid(x));
        self.push(out, Op::Silu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.unary(a, f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.unary(a, |x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.unary(a, |x| x + s);
        self.push(out, Op::AddScalar(a))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.unary(a, |x| x.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi))
    }

    /// Concatenates along channels; all parts must have the same row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.values[parts[0].0].rows;
        if parts.iter().any(|p| self.values[p.0].rows != rows) {
            return Err(Error::ShapeMismatch("concat of tensors with different row counts".into()));
        }
        let cols: usize = parts.iter().map(|p| self.values[p.0].cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.values[p.0].row(r));
            }
        }
        Ok(self.push(Tensor { rows, cols, data }, Op::Concat(parts.to_vec())))
    }

    /// Channels `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = &self.values[a.0];
        if start + len > av.cols {
            return Err(Error::ShapeMismatch(format!("slice {start}..{} of {} channels", start + len, av.cols)));
        }
        let mut data = Vec::with_capacity(av.rows * len);
        for r in 0..av.rows {
            data.extend_from_slice(&av.row(r)[start..start + len]);
        }
        let out = Tensor { rows: av.rows, cols: len, data };
        Ok(self.push(out, Op::Slice(a, start)))
    }

    /// Picks channels `cols` (in that order, repeats allowed).
    pub fn gather_cols(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let av = &self.values[a.0];
        if let Some(bad) = cols.iter().find(|&&c| c >= av.cols) {
            return Err(Error::ShapeMismatch(format!("gather of channel {bad} from {}", av.cols)));
        }
        let mut data = Vec::with_capacity(av.rows * cols.len());
        for r in 0..av.rows {
            let row = av.row(r);
            data.extend(cols.iter().map(|&c| row[c]));
        }
        let out = Tensor { rows: av.rows, cols: cols.len(), data };
        Ok(self.push(out, Op::Gather(a, cols.to_vec())))
    }

    /// Mean over rows, giving `1 × C`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = &self.values[a.0];
        let mut data = vec![0.0; av.cols];
        for r in 0..av.rows {
            for (d, x) in data.iter_mut().zip(av.row(r)) {
                *d += x;
            }
        }
        let inv = 1.0 / av.rows as f64;
        data.iter_mut().for_each(|d| *d *= inv);
        self.push(Tensor::row_vector(data), Op::MeanRows(a))
    }

    /// Row `index` of a table (embedding lookup).
    pub fn select_row(&mut self, table: Var, index: usize) -> Result<Var> {
        let tv = &self.values[table.0];
        if index >= tv.rows {
            return Err(Error::ShapeMismatch(format!("row {index} of {}", tv.rows)));
        }
        let out = Tensor::row_vector(tv.row(index).to_vec());
        Ok(self.push(out, Op::SelectRow(table, index)))
    }

    /// Sum of squares of all entries, as a `1 × 1` tensor.
    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.values[a.0].data.iter().map(|x| x * x).sum();
        self.push(Tensor::scalar(s), Op::SumSquares(a))
    }

    /// Sum of all entries, as a `1 × 1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.values[a.0].data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Backpropagates from a scalar node.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        self.check_var(loss)?;
        let v = &self.values[loss.0];
        if v.len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "backward from a {}x{} tensor needs an explicit seed",
                v.rows, v.cols
            )));
        }
        self.backward_from(loss, Tensor::scalar(1.0))
    }

    /// Backpropagates the upstream gradient `seed` of node `out`. The tape's
    /// intermediate values are released afterwards; a second call fails with
    /// [`Error::TapeExhausted`].
    pub fn backward_from(&mut self, out: Var, seed: Tensor) -> Result<Gradients> {
        self.check_var(out)?;
        if !seed.same_shape(&self.values[out.0]) {
            return Err(Error::ShapeMismatch("seed gradient shape differs from output".into()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; out.0 + 1];
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.values.clear();
        self.ops.clear();
        self.exhausted = true;
        Ok(Gradients { grads })
    }

    fn check_var(&self, v: Var) -> Result<()> {
        if self.exhausted {
            return Err(Error::TapeExhausted("backward already consumed this tape".into()));
        }
        if v.0 >= self.values.len() {
            return Err(Error::TapeExhausted(format!("node {} was not recorded", v.0)));
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let vals = &self.values;
        let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
            Some(e) => e.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        let like = |v: Var, data: Vec<f64>| Tensor { rows: vals[v.0].rows, cols: vals[v.0].cols, data };
        match &self.ops[i] {
            Op::Leaf => {}
            Op::Conv { x, w, b, kernel, stride, dilation } => {
                let (xv, wv) = (&vals[x.0], &vals[w.0]);
                let (cin, cout, k) = (xv.cols, wv.rows, *kernel);
                let pad = dilation * (k / 2);
                let mut gx = Tensor::zeros(xv.rows, cin);
                let mut gw = Tensor::zeros(wv.rows, wv.cols);
                let mut gb = Tensor::zeros(1, cout);
                for t in 0..g.rows {
                    let grow = g.row(t);
                    for (o, go) in grow.iter().enumerate() {
                        gb.data[o] += go;
                    }
                    for tap in 0..k {
                        let src = (t * stride + tap * dilation) as isize - pad as isize;
                        if src < 0 || src as usize >= xv.rows {
                            continue;
                        }
                        let src = src as usize;
                        let xrow = xv.row(src);
                        for (o, &go) in grow.iter().enumerate() {
                            if go == 0.0 {
                                continue;
                            }
                            let off = o * k * cin + tap * cin;
                            axpy(go, xrow, &mut gw.data[off..off + cin]);
                            axpy(go, &wv.data[off..off + cin], &mut gx.data[src * cin..(src + 1) * cin]);
                        }
                    }
                }
                acc(*x, gx);
                acc(*w, gw);
                acc(*b, gb);
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, like(*b, g.data.iter().map(|x| -x).collect()));
            }
            Op::Mul(a, b) => {
                let ga = g.data.iter().zip(&vals[b.0].data).map(|(x, y)| x * y).collect();
                let gb = g.data.iter().zip(&vals[a.0].data).map(|(x, y)| x * y).collect();
                acc(*a, like(*a, ga));
                acc(*b, like(*b, gb));
            }
            Op::AddRow(a, row) => {
                let mut gr = vec![0.0; g.cols];
                for r in g.data.chunks(g.cols) {
                    for (s, x) in gr.iter_mut().zip(r) {
                        *s += x;
                    }
                }
                acc(*a, g.clone());
                acc(*row, Tensor::row_vector(gr));
            }
            Op::MulRow(a, row) => {
                let av = &vals[a.0];
                let rv = &vals[row.0];
                let mut ga = g.clone();
                let mut gr = vec![0.0; g.cols];
                for (gr_row, ar) in ga.data.chunks_mut(g.cols).zip(av.data.chunks(g.cols)) {
                    for c in 0..g.cols {
                        gr[c] += gr_row[c] * ar[c];
                        gr_row[c] *= rv.data[c];
                    }
                }
                acc(*a, ga);
                acc(*row, Tensor::row_vector(gr));
            }
            Op::BroadcastRows(row) => {
                let mut gr = vec![0.0; g.cols];
                for r in g.data.chunks(g.cols) {
                    for (s, x) in gr.iter_mut().zip(r) {
                        *s += x;
                    }
                }
                acc(*row, Tensor::row_vector(gr));
            }
            Op::Silu(a) => {
                let d = g
                    .data
                    .iter()
                    .zip(&vals[a.0].data)
                    .map(|(gi, x)| {
                        let s = sigmoid(*x);
                        gi * (s + x * s * (1.0 - s))
                    })
                    .collect();
                acc(*a, like(*a, d));
            }
            Op::Exp(a) => {
                let d = g.data.iter().zip(&vals[i].data).map(|(gi, y)| gi * y).collect();
                acc(*a, like(*a, d));
            }
            Op::Scale(a, s) => acc(*a, like(*a, g.data.iter().map(|x| x * s).collect())),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Clamp(a, lo, hi) => {
                let d = g
                    .data
                    .iter()
                    .zip(&vals[a.0].data)
                    .map(|(gi, x)| if x < lo || x > hi { 0.0 } else { *gi })
                    .collect();
                acc(*a, like(*a, d));
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for p in parts {
                    let cols = vals[p.0].cols;
                    let mut data = Vec::with_capacity(g.rows * cols);
                    for r in 0..g.rows {
                        data.extend_from_slice(&g.row(r)[start..start + cols]);
                    }
                    acc(*p, like(*p, data));
                    start += cols;
                }
            }
            Op::Slice(a, start) => {
                let av = &vals[a.0];
                let mut ga = Tensor::zeros(av.rows, av.cols);
                for r in 0..g.rows {
                    ga.data[r * av.cols + start..r * av.cols + start + g.cols].copy_from_slice(g.row(r));
                }
                acc(*a, ga);
            }
            Op::Gather(a, cols) => {
                let av = &vals[a.0];
                let mut ga = Tensor::zeros(av.rows, av.cols);
                for r in 0..g.rows {
                    for (j, &c) in cols.iter().enumerate() {
                        ga.data[r * av.cols + c] += g.data[r * g.cols + j];
                    }
                }
                acc(*a, ga);
            }
            Op::MeanRows(a) => {
                let av = &vals[a.0];
                let inv = 1.0 / av.rows as f64;
                let mut data = Vec::with_capacity(av.len());
                for _ in 0..av.rows {
                    data.extend(g.data.iter().map(|x| x * inv));
                }
                acc(*a, like(*a, data));
            }
            Op::SelectRow(table, index) => {
                let tv = &vals[table.0];
                let mut gt = Tensor::zeros(tv.rows, tv.cols);
                gt.data[index * tv.cols..(index + 1) * tv.cols].copy_from_slice(&g.data);
                acc(*table, gt);
            }
            Op::Sum(a) => acc(*a, like(*a, vec![g.data[0]; vals[a.0].len()])),
            Op::SumSquares(a) => {
                let s = 2.0 * g.data[0];
                acc(*a, like(*a, vals[a.0].data.iter().map(|x| s * x).collect()));
            }
        }
    }
}
