//! Dense layers and recurrent cells over [`Graph`] values.

use rand::Rng;

use super::{glorot, Graph, NumericsError, ParamId, ParamStore, Real, Tensor, Var};

type Result<T> = std::result::Result<T, NumericsError>;

/// `y = x · W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = store.add(format!("{name}.w"), glorot(&[d_in, d_out], d_in, d_out, rng));
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[d_out])));
        Self { w, b, d_in, d_out }
    }

    /// A layer whose weights and bias start at zero.
    pub fn zeros<T: Real>(store: &mut ParamStore<T>, name: &str, d_in: usize, d_out: usize) -> Self {
        let w = store.add(format!("{name}.w"), Tensor::zeros(&[d_in, d_out]));
        let b = Some(store.add(format!("{name}.b"), Tensor::zeros(&[d_out])));
        Self { w, b, d_in, d_out }
    }

    pub fn forward<T: Real>(&self, g: &Graph<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let y = g.matmul(x, &g.param(self.w))?;
        match self.b {
            Some(b) => g.add(&y, &g.param(b)),
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LstmState<T> {
    pub h: Var<T>,
    pub c: Var<T>,
}

/// LSTM cell with gate order (input, forget, candidate, output):
/// `c' = σ(f)·c + σ(i)·tanh(g)`, `h' = σ(o)·tanh(c')`.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, d_in: usize, hidden: usize, rng: &mut R) -> Self {
        let h4 = 4 * hidden;
        let w_x = store.add(format!("{name}.w_x"), glorot(&[d_in, h4], d_in, hidden, rng));
        let w_h = store.add(format!("{name}.w_h"), glorot(&[hidden, h4], hidden, hidden, rng));
        let mut bias = Tensor::zeros(&[h4]);
        for v in &mut bias.data_mut()[hidden..2 * hidden] {
            *v = T::one();
        }
        let b = store.add(format!("{name}.b"), bias);
        Self { w_x, w_h, b, d_in, hidden }
    }

    pub fn zero_state<T: Real>(&self, g: &Graph<'_, T>, batch: usize) -> LstmState<T> {
        LstmState {
            h: g.constant(Tensor::zeros(&[batch, self.hidden])),
            c: g.constant(Tensor::zeros(&[batch, self.hidden])),
        }
    }

    /// Input projection `x · W_x + b`, usable for many steps at once.
    pub fn project_input<T: Real>(&self, g: &Graph<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        g.add(&g.matmul(x, &g.param(self.w_x))?, &g.param(self.b))
    }

    pub fn step<T: Real>(&self, g: &Graph<'_, T>, x: &Var<T>, state: &LstmState<T>) -> Result<LstmState<T>> {
        let xw = self.project_input(g, x)?;
        self.step_projected(g, &xw, state)
    }

    /// One step given the already projected input `[B, 4H]`.
    pub fn step_projected<T: Real>(&self, g: &Graph<'_, T>, xw: &Var<T>, state: &LstmState<T>) -> Result<LstmState<T>> {
        let h = self.hidden;
        let z = g.add(xw, &g.matmul(&state.h, &g.param(self.w_h))?)?;
        let i = g.sigmoid(&g.slice_cols(&z, 0, h)?)?;
        let f = g.sigmoid(&g.slice_cols(&z, h, h)?)?;
        let cand = g.tanh(&g.slice_cols(&z, 2 * h, h)?)?;
        let o = g.sigmoid(&g.slice_cols(&z, 3 * h, h)?)?;
        let c = g.add(&g.mul(&f, &state.c)?, &g.mul(&i, &cand)?)?;
        let h = g.mul(&o, &g.tanh(&c)?)?;
        Ok(LstmState { h, c })
    }
}

pub type GruState<T> = Var<T>;

/// GRU cell with gate order (reset, update, candidate):
/// `n = tanh(x_n + r·(h·W_hn + b_hn))`, `h' = n + u·(h − n)`.
#[derive(Clone, Debug)]
pub struct Gru {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b_x: ParamId,
    pub b_h: ParamId,
    pub d_in: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, d_in: usize, hidden: usize, rng: &mut R) -> Self {
        let h3 = 3 * hidden;
        let w_x = store.add(format!("{name}.w_x"), glorot(&[d_in, h3], d_in, hidden, rng));
        let w_h = store.add(format!("{name}.w_h"), glorot(&[hidden, h3], hidden, hidden, rng));
        let b_x = store.add(format!("{name}.b_x"), Tensor::zeros(&[h3]));
        let b_h = store.add(format!("{name}.b_h"), Tensor::zeros(&[h3]));
        Self { w_x, w_h, b_x, b_h, d_in, hidden }
    }

    pub fn zero_state<T: Real>(&self, g: &Graph<'_, T>, batch: usize) -> GruState<T> {
        g.constant(Tensor::zeros(&[batch, self.hidden]))
    }

    pub fn project_input<T: Real>(&self, g: &Graph<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        g.add(&g.matmul(x, &g.param(self.w_x))?, &g.param(self.b_x))
    }

    pub fn step<T: Real>(&self, g: &Graph<'_, T>, x: &Var<T>, h: &GruState<T>) -> Result<GruState<T>> {
        let xw = self.project_input(g, x)?;
        self.step_projected(g, &xw, h)
    }

    pub fn step_projected<T: Real>(&self, g: &Graph<'_, T>, xw: &Var<T>, h: &GruState<T>) -> Result<GruState<T>> {
        let n = self.hidden;
        let hw = g.add(&g.matmul(h, &g.param(self.w_h))?, &g.param(self.b_h))?;
        let r = g.sigmoid(&g.add(&g.slice_cols(xw, 0, n)?, &g.slice_cols(&hw, 0, n)?)?)?;
        let u = g.sigmoid(&g.add(&g.slice_cols(xw, n, n)?, &g.slice_cols(&hw, n, n)?)?)?;
        let cand = g.tanh(&g.add(&g.slice_cols(xw, 2 * n, n)?, &g.mul(&r, &g.slice_cols(&hw, 2 * n, n)?)?)?)?;
        g.add(&cand, &g.mul(&u, &g.sub(h, &cand)?)?)
    }
}
