use std::sync::Arc;

use super::real::{gemm, MatRef};
use super::{linalg, Graph, NumericsError, Real, Tensor, Var};

type Result<T> = std::result::Result<T, NumericsError>;

fn shape_err(op: &'static str, detail: String) -> NumericsError {
    NumericsError::Shape { op, detail }
}

/// Period of `b` when broadcast by tiling over `a` (b's shape, leading ones
/// stripped, must be a suffix of a's shape; a single element always tiles).
fn tile_period<T: Real>(op: &'static str, a: &Var<T>, b: &Var<T>) -> Result<usize> {
    if b.len() == 1 {
        return Ok(1);
    }
    let bs: Vec<usize> = b.shape().iter().copied().skip_while(|&d| d == 1).collect();
    let as_ = a.shape();
    if bs.len() <= as_.len() && as_[as_.len() - bs.len()..] == bs[..] {
        Ok(b.len())
    } else {
        Err(shape_err(op, format!("{:?} does not tile {:?}", b.shape(), as_)))
    }
}

fn stable_sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Graph<'_, T> {
    fn unary(&self, op: &'static str, x: &Var<T>, f: impl Fn(T) -> T, df: fn(T, T) -> T) -> Result<Var<T>> {
        let y = Arc::new(x.value.map(f));
        let (xv, yv) = (x.value.clone(), y.clone());
        self.record(op, y, &[x], move |g, s| {
            if let Some(gx) = s.input(0) {
                let (xd, yd) = (xv.data(), yv.data());
                for i in 0..g.len() {
                    gx[i] += g[i] * df(xd[i], yd[i]);
                }
            }
        })
    }

    pub fn tanh(&self, x: &Var<T>) -> Result<Var<T>> {
        self.unary("tanh", x, |v| v.tanh(), |_, y| T::one() - y * y)
    }

    pub fn sigmoid(&self, x: &Var<T>) -> Result<Var<T>> {
        self.unary("sigmoid", x, stable_sigmoid, |_, y| y * (T::one() - y))
    }

    /// `ln sigmoid(x)`, stable for large |x|.
    pub fn log_sigmoid(&self, x: &Var<T>) -> Result<Var<T>> {
        self.unary(
            "log_sigmoid",
            x,
            |v| v.min(T::zero()) - (-v.abs()).exp().ln_1p(),
            |x, _| stable_sigmoid(-x),
        )
    }

    pub fn relu(&self, x: &Var<T>) -> Result<Var<T>> {
        self.unary("relu", x, |v| v.max(T::zero()), |x, _| if x > T::zero() { T::one() } else { T::zero() })
    }

    pub fn exp(&self, x: &Var<T>) -> Result<Var<T>> {
        self.unary("exp", x, |v| v.exp(), |_, y| y)
    }

    pub fn ln(&self, x: &Var<T>) -> Result<Var<T>> {
        self.unary("ln", x, |v| v.ln(), |x, _| T::one() / x)
    }

    pub fn log_abs(&self, x: &Var<T>) -> Result<Var<T>> {
        self.unary("log_abs", x, |v| v.abs().ln(), |x, _| T::one() / x)
    }

    pub fn square(&self, x: &Var<T>) -> Result<Var<T>> {
        self.unary("square", x, |v| v * v, |x, _| x + x)
    }

    pub fn scale(&self, x: &Var<T>, c: f64) -> Result<Var<T>> {
        let c = T::of(c);
        let y = Arc::new(x.value.map(|v| v * c));
        self.record("scale", y, &[x], move |g, s| {
            if let Some(gx) = s.input(0) {
                for (a, &b) in gx.iter_mut().zip(g) {
                    *a += b * c;
                }
            }
        })
    }

    pub fn add_scalar(&self, x: &Var<T>, c: f64) -> Result<Var<T>> {
        let c = T::of(c);
        let y = Arc::new(x.value.map(|v| v + c));
        self.record("add_scalar", y, &[x], move |g, s| {
            if let Some(gx) = s.input(0) {
                for (a, &b) in gx.iter_mut().zip(g) {
                    *a += b;
                }
            }
        })
    }

    pub fn neg(&self, x: &Var<T>) -> Result<Var<T>> {
        self.scale(x, -1.0)
    }

    /// `a + b`, with `b` tiled over `a` when it matches a trailing sub-shape.
    pub fn add(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let p = tile_period("add", a, b)?;
        let mut out = a.data().to_vec();
        for chunk in out.chunks_mut(p) {
            for (o, &v) in chunk.iter_mut().zip(b.data()) {
                *o += v;
            }
        }
        let y = Arc::new(Tensor::new(a.shape(), out)?);
        self.record("add", y, &[a, b], move |g, s| {
            if let Some(ga) = s.input(0) {
                for (x, &v) in ga.iter_mut().zip(g) {
                    *x += v;
                }
            }
            if let Some(gb) = s.input(1) {
                for chunk in g.chunks(p) {
                    for (x, &v) in gb.iter_mut().zip(chunk) {
                        *x += v;
                    }
                }
            }
        })
    }

    pub fn sub(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let p = tile_period("sub", a, b)?;
        let mut out = a.data().to_vec();
        for chunk in out.chunks_mut(p) {
            for (o, &v) in chunk.iter_mut().zip(b.data()) {
                *o -= v;
            }
        }
        let y = Arc::new(Tensor::new(a.shape(), out)?);
        self.record("sub", y, &[a, b], move |g, s| {
            if let Some(ga) = s.input(0) {
                for (x, &v) in ga.iter_mut().zip(g) {
                    *x += v;
                }
            }
            if let Some(gb) = s.input(1) {
                for chunk in g.chunks(p) {
                    for (x, &v) in gb.iter_mut().zip(chunk) {
                        *x -= v;
                    }
                }
            }
        })
    }

    pub fn mul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let p = tile_period("mul", a, b)?;
        let mut out = a.data().to_vec();
        for chunk in out.chunks_mut(p) {
            for (o, &v) in chunk.iter_mut().zip(b.data()) {
                *o *= v;
            }
        }
        let y = Arc::new(Tensor::new(a.shape(), out)?);
        let (av, bv) = (a.value.clone(), b.value.clone());
        self.record("mul", y, &[a, b], move |g, s| {
            if let Some(ga) = s.input(0) {
                for (gc, (xc, _)) in ga.chunks_mut(p).zip(g.chunks(p).zip(0..)) {
                    for ((x, &gv), &bv) in gc.iter_mut().zip(xc).zip(bv.data()) {
                        *x += gv * bv;
                    }
                }
            }
            if let Some(gb) = s.input(1) {
                for (gc, ac) in g.chunks(p).zip(av.data().chunks(p)) {
                    for ((x, &gv), &a) in gb.iter_mut().zip(gc).zip(ac) {
                        *x += gv * a;
                    }
                }
            }
        })
    }

    pub fn div(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let p = tile_period("div", a, b)?;
        let mut out = a.data().to_vec();
        for chunk in out.chunks_mut(p) {
            for (o, &v) in chunk.iter_mut().zip(b.data()) {
                *o /= v;
            }
        }
        let y = Arc::new(Tensor::new(a.shape(), out)?);
        let (bv, yv) = (b.value.clone(), y.clone());
        self.record("div", y, &[a, b], move |g, s| {
            if let Some(ga) = s.input(0) {
                for (gc, xc) in ga.chunks_mut(p).zip(g.chunks(p)) {
                    for ((x, &gv), &bv) in gc.iter_mut().zip(xc).zip(bv.data()) {
                        *x += gv / bv;
                    }
                }
            }
            if let Some(gb) = s.input(1) {
                for (gc, yc) in g.chunks(p).zip(yv.data().chunks(p)) {
                    for (((x, &gv), &y), &b) in gb.iter_mut().zip(gc).zip(yc).zip(bv.data()) {
                        *x -= gv * y / b;
                    }
                }
            }
        })
    }

    pub fn sum(&self, x: &Var<T>) -> Result<Var<T>> {
        let total: T = x.data().iter().copied().sum();
        self.record("sum", Arc::new(Tensor::scalar(total)), &[x], |g, s| {
            if let Some(gx) = s.input(0) {
                gx.iter_mut().for_each(|v| *v += g[0]);
            }
        })
    }

    pub fn mean(&self, x: &Var<T>) -> Result<Var<T>> {
        let n = x.len().max(1) as f64;
        let s = self.sum(x)?;
        self.scale(&s, 1.0 / n)
    }

    /// Sums `x` over `groups` contiguous equal-sized groups, giving `[groups]`.
    pub fn group_sum(&self, x: &Var<T>, groups: usize) -> Result<Var<T>> {
        if groups == 0 || x.len() % groups != 0 {
            return Err(shape_err("group_sum", format!("{} elements into {groups} groups", x.len())));
        }
        let per = x.len() / groups;
        let out: Vec<T> = x.data().chunks(per).map(|c| c.iter().copied().sum()).collect();
        self.record("group_sum", Arc::new(Tensor::from_vec(out)), &[x], move |g, s| {
            if let Some(gx) = s.input(0) {
                for (chunk, &gv) in gx.chunks_mut(per).zip(g) {
                    chunk.iter_mut().for_each(|v| *v += gv);
                }
            }
        })
    }

    /// `a [.., k] · b [k, n] -> [.., n]`.
    pub fn matmul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        if b.shape().len() != 2 || a.value.cols() != b.shape()[0] {
            return Err(shape_err("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
        }
        let (m, k, n) = (a.value.rows(), b.shape()[0], b.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, MatRef::rm(a.data(), k), MatRef::rm(b.data(), n), T::zero(), &mut out, n);
        let mut shape = a.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let y = Arc::new(Tensor::new(&shape, out)?);
        let (av, bv) = (a.value.clone(), b.value.clone());
        self.record("matmul", y, &[a, b], move |g, s| {
            if let Some(ga) = s.input(0) {
                gemm(m, n, k, MatRef::rm(g, n), MatRef::rm_t(bv.data(), n), T::one(), ga, k);
            }
            if let Some(gb) = s.input(1) {
                gemm(k, m, n, MatRef::rm_t(av.data(), k), MatRef::rm(g, n), T::one(), gb, n);
            }
        })
    }

    /// `a [.., k] · b[n, k]^T -> [.., n]`.
    pub fn matmul_nt(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        if b.shape().len() != 2 || a.value.cols() != b.shape()[1] {
            return Err(shape_err("matmul_nt", format!("{:?} x {:?}^T", a.shape(), b.shape())));
        }
        let (m, k, n) = (a.value.rows(), b.shape()[1], b.shape()[0]);
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, MatRef::rm(a.data(), k), MatRef::rm_t(b.data(), k), T::zero(), &mut out, n);
        let mut shape = a.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let y = Arc::new(Tensor::new(&shape, out)?);
        let (av, bv) = (a.value.clone(), b.value.clone());
        self.record("matmul_nt", y, &[a, b], move |g, s| {
            if let Some(ga) = s.input(0) {
                gemm(m, n, k, MatRef::rm(g, n), MatRef::rm(bv.data(), k), T::one(), ga, k);
            }
            if let Some(gb) = s.input(1) {
                gemm(n, m, k, MatRef::rm_t(g, n), MatRef::rm(av.data(), k), T::one(), gb, k);
            }
        })
    }

    pub fn reshape(&self, x: &Var<T>, shape: &[usize]) -> Result<Var<T>> {
        if x.shape() == shape {
            return Ok(x.clone());
        }
        let y = Arc::new((*x.value).clone().reshape(shape)?);
        self.record("reshape", y, &[x], |g, s| {
            if let Some(gx) = s.input(0) {
                for (a, &b) in gx.iter_mut().zip(g) {
                    *a += b;
                }
            }
        })
    }

    /// Concatenates along the last axis; all parts share the leading shape.
    pub fn concat_cols(&self, parts: &[&Var<T>]) -> Result<Var<T>> {
        let first = parts.first().ok_or_else(|| shape_err("concat_cols", "no inputs".into()))?;
        let rows = first.value.rows();
        let lead = &first.shape()[..first.shape().len() - 1];
        for p in parts {
            if p.value.rows() != rows || &p.shape()[..p.shape().len() - 1] != lead {
                return Err(shape_err("concat_cols", format!("{:?} vs {:?}", first.shape(), p.shape())));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|p| p.value.cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let y = Arc::new(Tensor::new(&shape, out)?);
        self.record("concat_cols", y, parts, move |g, s| {
            let mut offset = 0;
            for (k, &w) in widths.iter().enumerate() {
                if let Some(gp) = s.input(k) {
                    for r in 0..rows {
                        let src = &g[r * total + offset..r * total + offset + w];
                        for (a, &b) in gp[r * w..(r + 1) * w].iter_mut().zip(src) {
                            *a += b;
                        }
                    }
                }
                offset += w;
            }
        })
    }

    pub fn slice_cols(&self, x: &Var<T>, start: usize, len: usize) -> Result<Var<T>> {
        let cols = x.value.cols();
        if start + len > cols {
            return Err(shape_err("slice_cols", format!("[{start}, {}) of {cols}", start + len)));
        }
        let rows = x.value.rows();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&x.data()[r * cols + start..r * cols + start + len]);
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let y = Arc::new(Tensor::new(&shape, out)?);
        self.record("slice_cols", y, &[x], move |g, s| {
            if let Some(gx) = s.input(0) {
                for r in 0..rows {
                    for (a, &b) in gx[r * cols + start..r * cols + start + len].iter_mut().zip(&g[r * len..]) {
                        *a += b;
                    }
                }
            }
        })
    }

    /// Concatenates along the first axis.
    pub fn concat_rows(&self, parts: &[&Var<T>]) -> Result<Var<T>> {
        let first = parts.first().ok_or_else(|| shape_err("concat_rows", "no inputs".into()))?;
        let tail = &first.shape()[1..];
        let mut d0 = 0;
        for p in parts {
            if &p.shape()[1..] != tail {
                return Err(shape_err("concat_rows", format!("{:?} vs {:?}", first.shape(), p.shape())));
            }
            d0 += p.shape()[0];
        }
        let mut out = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        for p in parts {
            out.extend_from_slice(p.data());
        }
        let mut shape = vec![d0];
        shape.extend_from_slice(tail);
        let lens: Vec<usize> = parts.iter().map(|p| p.len()).collect();
        let y = Arc::new(Tensor::new(&shape, out)?);
        self.record("concat_rows", y, parts, move |g, s| {
            let mut offset = 0;
            for (k, &l) in lens.iter().enumerate() {
                if let Some(gp) = s.input(k) {
                    for (a, &b) in gp.iter_mut().zip(&g[offset..offset + l]) {
                        *a += b;
                    }
                }
                offset += l;
            }
        })
    }

    /// Rows `[start, start + len)` along the first axis.
    pub fn slice_rows(&self, x: &Var<T>, start: usize, len: usize) -> Result<Var<T>> {
        let d0 = *x.shape().first().unwrap_or(&0);
        if start + len > d0 {
            return Err(shape_err("slice_rows", format!("[{start}, {}) of {d0}", start + len)));
        }
        let per = if d0 == 0 { 0 } else { x.len() / d0 };
        let out = x.data()[start * per..(start + len) * per].to_vec();
        let mut shape = x.shape().to_vec();
        shape[0] = len;
        let y = Arc::new(Tensor::new(&shape, out)?);
        self.record("slice_rows", y, &[x], move |g, s| {
            if let Some(gx) = s.input(0) {
                for (a, &b) in gx[start * per..(start + len) * per].iter_mut().zip(g) {
                    *a += b;
                }
            }
        })
    }

    /// Row lookup: `table` viewed as `[rows, cols]`, result `[idx.len(), cols]`.
    pub fn gather_rows(&self, table: &Var<T>, idx: &[usize]) -> Result<Var<T>> {
        let (rows, cols) = (table.value.rows(), table.value.cols());
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(NumericsError::Invalid { op: "gather_rows", detail: format!("row {bad} of {rows}") });
        }
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            out.extend_from_slice(&table.data()[i * cols..(i + 1) * cols]);
        }
        let y = Arc::new(Tensor::new(&[idx.len(), cols], out)?);
        let idx = idx.to_vec();
        self.record("gather_rows", y, &[table], move |g, s| {
            if let Some(gt) = s.input(0) {
                for (r, &i) in idx.iter().enumerate() {
                    for (a, &b) in gt[i * cols..(i + 1) * cols].iter_mut().zip(&g[r * cols..]) {
                        *a += b;
                    }
                }
            }
        })
    }

    /// Softmax over the last axis.
    pub fn softmax(&self, x: &Var<T>) -> Result<Var<T>> {
        let cols = x.value.cols();
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(cols) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        let y = Arc::new(Tensor::new(x.shape(), out)?);
        let yv = y.clone();
        self.record("softmax", y, &[x], move |g, s| {
            if let Some(gx) = s.input(0) {
                for ((gxr, gr), yr) in gx.chunks_mut(cols).zip(g.chunks(cols)).zip(yv.data().chunks(cols)) {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for ((a, &gv), &yv) in gxr.iter_mut().zip(gr).zip(yr) {
                        *a += yv * (gv - dot);
                    }
                }
            }
        })
    }

    /// Elementwise maximum over equally-shaped inputs (first wins ties).
    pub fn max_elementwise(&self, parts: &[&Var<T>]) -> Result<Var<T>> {
        let first = parts.first().ok_or_else(|| shape_err("max_elementwise", "no inputs".into()))?;
        for p in parts {
            if p.shape() != first.shape() {
                return Err(shape_err("max_elementwise", format!("{:?} vs {:?}", first.shape(), p.shape())));
            }
        }
        let n = first.len();
        let mut out = first.data().to_vec();
        let mut arg = vec![0u32; n];
        for (k, p) in parts.iter().enumerate().skip(1) {
            for i in 0..n {
                if p.data()[i] > out[i] {
                    out[i] = p.data()[i];
                    arg[i] = k as u32;
                }
            }
        }
        let y = Arc::new(Tensor::new(first.shape(), out)?);
        let count = parts.len();
        self.record("max_elementwise", y, parts, move |g, s| {
            for k in 0..count {
                if let Some(gp) = s.input(k) {
                    for i in 0..n {
                        if arg[i] as usize == k {
                            gp[i] += g[i];
                        }
                    }
                }
            }
        })
    }

    /// Averages adjacent row pairs along the second-to-last axis:
    /// `[.., T, D] -> [.., T/2, D]`.
    pub fn avg_pairs(&self, x: &Var<T>) -> Result<Var<T>> {
        let shape = x.shape();
        if shape.len() < 2 || shape[shape.len() - 2] % 2 != 0 {
            return Err(shape_err("avg_pairs", format!("{shape:?} needs an even time axis")));
        }
        let d = shape[shape.len() - 1];
        let pairs = x.len() / (2 * d);
        let half = T::of(0.5);
        let mut out = Vec::with_capacity(pairs * d);
        for p in 0..pairs {
            let base = 2 * p * d;
            for c in 0..d {
                out.push((x.data()[base + c] + x.data()[base + d + c]) * half);
            }
        }
        let mut oshape = shape.to_vec();
        let n = oshape.len();
        oshape[n - 2] /= 2;
        let y = Arc::new(Tensor::new(&oshape, out)?);
        self.record("avg_pairs", y, &[x], move |g, s| {
            if let Some(gx) = s.input(0) {
                for p in 0..pairs {
                    let base = 2 * p * d;
                    for c in 0..d {
                        let v = g[p * d + c] * half;
                        gx[base + c] += v;
                        gx[base + d + c] += v;
                    }
                }
            }
        })
    }

    /// `ln |det W|` of a square matrix; gradient `W^{-T}`.
    pub fn log_abs_det(&self, w: &Var<T>) -> Result<Var<T>> {
        let n = match w.shape() {
            [a, b] if a == b => *a,
            s => return Err(shape_err("log_abs_det", format!("{s:?} is not square"))),
        };
        let a: Vec<f64> = w.data().iter().map(|v| v.f64()).collect();
        let lu = linalg::Lu::new(&a, n);
        if lu.is_singular() {
            return Err(NumericsError::Singular(lu.det().abs()));
        }
        let value = lu.log_abs_det();
        let y = Arc::new(Tensor::scalar(T::of(value)));
        let needs_grad = self.is_recording() && w.is_tracked();
        let inv = if needs_grad { lu.inverse() } else { Vec::new() };
        self.record("log_abs_det", y, &[w], move |g, s| {
            if let Some(gw) = s.input(0) {
                for i in 0..n {
                    for j in 0..n {
                        gw[i * n + j] += g[0] * T::of(inv[j * n + i]);
                    }
                }
            }
        })
    }

    /// Elementwise binary cross entropy between predictions in (0, 1) and
    /// `labels`, with predictions clamped to `[eps, 1 - eps]`.
    pub fn binary_cross_entropy(&self, pred: &Var<T>, labels: &Tensor<T>, eps: f64) -> Result<Var<T>> {
        if pred.shape() != labels.shape() {
            return Err(shape_err("bce", format!("{:?} vs {:?}", pred.shape(), labels.shape())));
        }
        let (lo, hi) = (T::of(eps), T::of(1.0 - eps));
        let out: Vec<T> = pred
            .data()
            .iter()
            .zip(labels.data())
            .map(|(&p, &s)| {
                let p = p.max(lo).min(hi);
                -(s * p.ln() + (T::one() - s) * (T::one() - p).ln())
            })
            .collect();
        let y = Arc::new(Tensor::new(pred.shape(), out)?);
        let (pv, lv) = (pred.value.clone(), Arc::new(labels.clone()));
        self.record("bce", y, &[pred], move |g, s| {
            if let Some(gp) = s.input(0) {
                for i in 0..g.len() {
                    let p = pv.data()[i];
                    if p > lo && p < hi {
                        let l = lv.data()[i];
                        gp[i] += g[i] * (-l / p + (T::one() - l) / (T::one() - p));
                    }
                }
            }
        })
    }
}
