use std::sync::Arc;

use super::real::{gemm, MatRef};
use super::{Graph, NumericsError, Real, Tensor, Var};

type Result<T> = std::result::Result<T, NumericsError>;

/// Time-axis padding of a 1-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Output length equals input length; needs an odd kernel width.
    Same,
    Explicit { left: usize, right: usize },
}

#[derive(Clone, Copy, Debug)]
struct Geom {
    batch: usize,
    t_in: usize,
    t_out: usize,
    c_in: usize,
    c_out: usize,
    width: usize,
    dilation: usize,
    left: usize,
}

impl Geom {
    fn resolve(
        op: &'static str,
        batch: usize,
        t_in: usize,
        c_in: usize,
        kshape: &[usize],
        padding: Padding,
        dilation: usize,
    ) -> Result<Self> {
        let [width, kc_in, c_out] = *kshape else {
            return Err(NumericsError::Shape { op, detail: format!("kernel {kshape:?} is not [w, C_in, C_out]") });
        };
        if kc_in != c_in {
            return Err(NumericsError::Shape { op, detail: format!("input has {c_in} channels, kernel expects {kc_in}") });
        }
        if width == 0 || dilation == 0 {
            return Err(NumericsError::Invalid { op, detail: "zero kernel width or dilation".into() });
        }
        let span = dilation * (width - 1);
        let (left, right) = match padding {
            Padding::Same if width % 2 == 0 => {
                return Err(NumericsError::Invalid { op, detail: format!("same padding needs an odd width, got {width}") })
            }
            Padding::Same => (span / 2, span / 2),
            Padding::Explicit { left, right } => (left, right),
        };
        if t_in + left + right < span + 1 {
            return Err(NumericsError::Shape { op, detail: format!("input length {t_in} shorter than kernel span") });
        }
        let t_out = t_in + left + right - span;
        Ok(Self { batch, t_in, t_out, c_in, c_out, width, dilation, left })
    }

    /// Input time index feeding output `t` through tap `d`, if inside the signal.
    #[inline]
    fn src(&self, t: usize, d: usize) -> Option<usize> {
        let s = (t + d * self.dilation).checked_sub(self.left)?;
        (s < self.t_in).then_some(s)
    }

    fn is_pointwise(&self) -> bool {
        self.width == 1 && self.left == 0 && self.t_out == self.t_in
    }
}

fn im2col<T: Real>(x: &[T], g: &Geom) -> Vec<T> {
    let row = g.width * g.c_in;
    let mut cols = vec![T::zero(); g.batch * g.t_out * row];
    for b in 0..g.batch {
        for t in 0..g.t_out {
            let dst = &mut cols[(b * g.t_out + t) * row..][..row];
            for d in 0..g.width {
                if let Some(s) = g.src(t, d) {
                    dst[d * g.c_in..(d + 1) * g.c_in].copy_from_slice(&x[(b * g.t_in + s) * g.c_in..][..g.c_in]);
                }
            }
        }
    }
    cols
}

fn col2im_add<T: Real>(cols: &[T], g: &Geom, gx: &mut [T]) {
    let row = g.width * g.c_in;
    for b in 0..g.batch {
        for t in 0..g.t_out {
            let src = &cols[(b * g.t_out + t) * row..][..row];
            for d in 0..g.width {
                if let Some(s) = g.src(t, d) {
                    let dst = &mut gx[(b * g.t_in + s) * g.c_in..][..g.c_in];
                    for (a, &v) in dst.iter_mut().zip(&src[d * g.c_in..(d + 1) * g.c_in]) {
                        *a += v;
                    }
                }
            }
        }
    }
}

fn add_bias<T: Real>(out: &mut [T], bias: Option<&Var<T>>, c_out: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.len() != c_out {
            return Err(NumericsError::Shape { op: "conv1d", detail: format!("bias {:?} for {c_out} outputs", b.shape()) });
        }
        for row in out.chunks_mut(c_out) {
            for (o, &v) in row.iter_mut().zip(b.data()) {
                *o += v;
            }
        }
    }
    Ok(())
}

fn bias_grad<T: Real>(g: &[T], c_out: usize, gb: &mut [T]) {
    for row in g.chunks(c_out) {
        for (a, &v) in gb.iter_mut().zip(row) {
            *a += v;
        }
    }
}

impl<T: Real> Graph<'_, T> {
    /// 1-D convolution over `[T, C_in]` or `[B, T, C_in]` with kernel
    /// `[w, C_in, C_out]`:
    /// `out[t, o] = bias[o] + Σ_{d,i} x[t + d·dilation − left, i] · k[d, i, o]`.
    pub fn conv1d(
        &self,
        x: &Var<T>,
        kernel: &Var<T>,
        bias: Option<&Var<T>>,
        padding: Padding,
        dilation: usize,
    ) -> Result<Var<T>> {
        let (batch, t_in, c_in) = match *x.shape() {
            [t, c] => (1, t, c),
            [b, t, c] => (b, t, c),
            ref s => return Err(NumericsError::Shape { op: "conv1d", detail: format!("input {s:?}") }),
        };
        let g = Geom::resolve("conv1d", batch, t_in, c_in, kernel.shape(), padding, dilation)?;
        let row = g.width * g.c_in;
        let cols: Arc<Vec<T>> = if g.is_pointwise() { Arc::new(Vec::new()) } else { Arc::new(im2col(x.data(), &g)) };
        let m = g.batch * g.t_out;
        let mut out = vec![T::zero(); m * g.c_out];
        {
            let a = if g.is_pointwise() { x.data() } else { &cols[..] };
            gemm(m, row, g.c_out, MatRef::rm(a, row), MatRef::rm(kernel.data(), g.c_out), T::zero(), &mut out, g.c_out);
        }
        add_bias(&mut out, bias, g.c_out)?;
        let shape = if x.shape().len() == 2 { vec![g.t_out, g.c_out] } else { vec![batch, g.t_out, g.c_out] };
        let y = Arc::new(Tensor::new(&shape, out)?);
        let (xv, kv) = (x.value.clone(), kernel.value.clone());
        let has_bias = bias.is_some();
        let mut inputs = vec![x, kernel];
        inputs.extend(bias);
        self.record("conv1d", y, &inputs, move |gr, s| {
            if let Some(gk) = s.input(1) {
                let a = if g.is_pointwise() { xv.data() } else { &cols[..] };
                gemm(row, m, g.c_out, MatRef::rm_t(a, row), MatRef::rm(gr, g.c_out), T::one(), gk, g.c_out);
            }
            if let Some(gx) = s.input(0) {
                if g.is_pointwise() {
                    gemm(m, g.c_out, row, MatRef::rm(gr, g.c_out), MatRef::rm_t(kv.data(), g.c_out), T::one(), gx, row);
                } else {
                    let mut gcols = vec![T::zero(); m * row];
                    gemm(m, g.c_out, row, MatRef::rm(gr, g.c_out), MatRef::rm_t(kv.data(), g.c_out), T::zero(), &mut gcols, row);
                    col2im_add(&gcols, &g, gx);
                }
            }
            if has_bias {
                if let Some(gb) = s.input(2) {
                    bias_grad(gr, g.c_out, gb);
                }
            }
        })
    }

    /// Convolution of a sequence whose rows are all equal to `c` (`[B, D]`)
    /// over `t_len` steps, giving `[B, t_len, H]`. Equivalent to materializing
    /// the repeated rows and calling [`Graph::conv1d`], at the cost of one
    /// matrix-vector product per tap.
    pub fn replicated_conv(
        &self,
        c: &Var<T>,
        kernel: &Var<T>,
        t_len: usize,
        padding: Padding,
        dilation: usize,
    ) -> Result<Var<T>> {
        let [batch, dim] = *c.shape() else {
            return Err(NumericsError::Shape { op: "replicated_conv", detail: format!("input {:?}", c.shape()) });
        };
        let g = Geom::resolve("replicated_conv", batch, t_len, dim, kernel.shape(), padding, dilation)?;
        let (w, h) = (g.width, g.c_out);
        let tap = dim * h;
        let mut u = vec![T::zero(); batch * w * h];
        for d in 0..w {
            let kd = &kernel.data()[d * tap..(d + 1) * tap];
            gemm(batch, dim, h, MatRef::rm(c.data(), dim), MatRef::rm(kd, h), T::zero(), &mut u[d * h..], w * h);
        }
        let mut out = vec![T::zero(); batch * g.t_out * h];
        for b in 0..batch {
            for t in 0..g.t_out {
                let dst = &mut out[(b * g.t_out + t) * h..][..h];
                for d in 0..w {
                    if g.src(t, d).is_some() {
                        for (o, &v) in dst.iter_mut().zip(&u[(b * w + d) * h..][..h]) {
                            *o += v;
                        }
                    }
                }
            }
        }
        let y = Arc::new(Tensor::new(&[batch, g.t_out, h], out)?);
        let (cv, kv) = (c.value.clone(), kernel.value.clone());
        self.record("replicated_conv", y, &[c, kernel], move |gr, s| {
            let mut gu = vec![T::zero(); batch * w * h];
            for b in 0..batch {
                for t in 0..g.t_out {
                    let src = &gr[(b * g.t_out + t) * h..][..h];
                    for d in 0..w {
                        if g.src(t, d).is_some() {
                            for (a, &v) in gu[(b * w + d) * h..][..h].iter_mut().zip(src) {
                                *a += v;
                            }
                        }
                    }
                }
            }
            if let Some(gc) = s.input(0) {
                for d in 0..w {
                    let kd = &kv.data()[d * tap..(d + 1) * tap];
                    let gud = MatRef { data: &gu[d * h..], rs: w * h, cs: 1 };
                    gemm(batch, h, dim, gud, MatRef::rm_t(kd, h), T::one(), gc, dim);
                }
            }
            if let Some(gk) = s.input(1) {
                for d in 0..w {
                    let gud = MatRef { data: &gu[d * h..], rs: w * h, cs: 1 };
                    gemm(dim, batch, h, MatRef::rm_t(cv.data(), dim), gud, T::one(), &mut gk[d * tap..], h);
                }
            }
        })
    }
}
