use super::{Graph, NumericsError, ParamStore, Tensor, Var};

/// Below this magnitude gradients are compared absolutely: central
/// differences of an O(1) loss cannot resolve them to relative precision.
pub const GRAD_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, GRAD_FLOOR)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Largest relative error between the taped gradient of `f` and central
/// differences with the given step, over every coordinate of every input.
pub fn grad_check<F, E>(f: F, inputs: &[Tensor<f64>], step: f64) -> Result<f64, E>
where
    F: Fn(&Graph<'_, f64>, &[Var<f64>]) -> Result<Var<f64>, E>,
    E: From<NumericsError>,
{
    let g = Graph::new(true);
    let vars: Vec<Var<f64>> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = f(&g, &vars)?;
    let grads = g.backward(&loss)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|v| grads.wrt(v)).collect();

    let eval = |xs: &[Tensor<f64>]| -> Result<f64, E> {
        let g = Graph::new(false);
        let vars: Vec<Var<f64>> = xs.iter().map(|t| g.constant(t.clone())).collect();
        Ok(f(&g, &vars)?.item())
    };
    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for k in 0..inputs.len() {
        for i in 0..inputs[k].len() {
            let x0 = inputs[k].data()[i];
            probe[k].data_mut()[i] = x0 + step;
            let hi = eval(&probe)?;
            probe[k].data_mut()[i] = x0 - step;
            let lo = eval(&probe)?;
            probe[k].data_mut()[i] = x0;
            worst = worst.max(rel_error(analytic[k].data()[i], (hi - lo) / (2.0 * step)));
        }
    }
    Ok(worst)
}

/// As [`grad_check`], over the parameters of a store (every coordinate of
/// every unfrozen parameter).
pub fn grad_check_params<F, E>(store: &ParamStore<f64>, f: F, step: f64) -> Result<f64, E>
where
    F: Fn(&Graph<'_, f64>) -> Result<Var<f64>, E>,
    E: From<NumericsError>,
{
    let g = Graph::with_params(store, true);
    let loss = f(&g)?;
    let analytic = g.backward(&loss)?.params(store);
    drop(g);
    let mut probe = store.clone();
    let mut worst = 0.0f64;
    let eval = |s: &ParamStore<f64>| -> Result<f64, E> { Ok(f(&Graph::inference(s))?.item()) };
    for id in store.ids() {
        if store.is_frozen(id) {
            continue;
        }
        for i in 0..store.get(id).len() {
            let x0 = store.get(id).data()[i];
            probe.value_mut(id).data_mut()[i] = x0 + step;
            let hi = eval(&probe)?;
            probe.value_mut(id).data_mut()[i] = x0 - step;
            let lo = eval(&probe)?;
            probe.value_mut(id).data_mut()[i] = x0;
            worst = worst.max(rel_error(analytic[id.index()].data()[i], (hi - lo) / (2.0 * step)));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_exact_gradient() {
        let x = Tensor::from_f64(&[4], &[0.3, -1.0, 2.5, 7.0]).unwrap();
        let err = grad_check::<_, NumericsError>(|g, v| g.sum(&v[0]), &[x], 1e-5).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn tanh_at_zero() {
        let x = Tensor::from_f64(&[1], &[0.0]).unwrap();
        let g = Graph::new(true);
        let v = g.leaf(x.clone());
        let l = g.sum(&g.tanh(&v).unwrap()).unwrap();
        assert_eq!(g.backward(&l).unwrap().wrt(&v).data(), &[1.0]);
        let err = grad_check::<_, NumericsError>(|g, v| g.sum(&g.tanh(&v[0])?), &[x], 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }
}
