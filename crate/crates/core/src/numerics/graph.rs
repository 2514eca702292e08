use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use super::{NumericsError, ParamId, ParamStore, Real, Tensor};

pub type NodeId = usize;

/// A value flowing through a [`Graph`]. Cheap to clone.
///
/// `node` is set when the value participates in the tape (it depends on a
/// tracked leaf and the graph is recording).
#[derive(Clone, Debug)]
pub struct Var<T> {
    pub(crate) value: Arc<Tensor<T>>,
    pub(crate) node: Option<NodeId>,
}

impl<T: Real> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn value_arc(&self) -> Arc<Tensor<T>> {
        self.value.clone()
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn data(&self) -> &[T] {
        self.value.data()
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn item(&self) -> T {
        self.value.item()
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }
}

type BackwardFn<T> = Box<dyn Fn(&[T], &mut GradSink<'_, T>)>;

struct Node<T> {
    op: &'static str,
    parents: Vec<Option<NodeId>>,
    backward: Option<BackwardFn<T>>,
}

/// Accumulator handed to a node's backward closure; `input(k)` is the
/// gradient buffer of the k-th input, or `None` when that input is untracked.
pub struct GradSink<'a, T> {
    parents: &'a [Option<NodeId>],
    lens: &'a [usize],
    bufs: &'a mut [Option<Vec<T>>],
}

impl<T: Real> GradSink<'_, T> {
    pub fn input(&mut self, k: usize) -> Option<&mut [T]> {
        let id = self.parents[k]?;
        let len = self.lens[id];
        Some(self.bufs[id].get_or_insert_with(|| vec![T::zero(); len]).as_mut_slice())
    }

    pub fn wants(&self, k: usize) -> bool {
        self.parents[k].is_some()
    }
}

/// Recording context for one forward pass.
///
/// Operations are appended in execution order, so the tape is topologically
/// sorted by construction. With `recording == false` nothing is taped and
/// values are dropped as soon as they go out of scope.
pub struct Graph<'p, T: Real> {
    store: Option<&'p ParamStore<T>>,
    recording: bool,
    nodes: RefCell<Vec<Node<T>>>,
    lens: RefCell<Vec<usize>>,
    param_vars: RefCell<HashMap<ParamId, Var<T>>>,
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(recording: bool) -> Self {
        Self {
            store: None,
            recording,
            nodes: RefCell::new(Vec::new()),
            lens: RefCell::new(Vec::new()),
            param_vars: RefCell::new(HashMap::new()),
        }
    }

    pub fn with_params(store: &'p ParamStore<T>, recording: bool) -> Self {
        Self { store: Some(store), ..Self::new(recording) }
    }

    /// Inference graph: nothing is recorded.
    pub fn inference(store: &'p ParamStore<T>) -> Self {
        Self::with_params(store, false)
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn store(&self) -> &'p ParamStore<T> {
        self.store.expect("graph has no parameter store")
    }

    pub fn tape_len(&self) -> usize {
        self.nodes.borrow().len()
    }

    /// The parameter as a graph value; a tracked leaf unless frozen.
    pub fn param(&self, id: ParamId) -> Var<T> {
        if let Some(v) = self.param_vars.borrow().get(&id) {
            return v.clone();
        }
        let store = self.store();
        let value = store.arc(id);
        let var = if self.recording && !store.is_frozen(id) {
            self.push_leaf(value)
        } else {
            Var { value, node: None }
        };
        self.param_vars.borrow_mut().insert(id, var.clone());
        var
    }

    /// A differentiable input (tracked when recording).
    pub fn leaf(&self, value: Tensor<T>) -> Var<T> {
        let value = Arc::new(value);
        if self.recording {
            self.push_leaf(value)
        } else {
            Var { value, node: None }
        }
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        Var { value: Arc::new(value), node: None }
    }

    pub fn constant_arc(&self, value: Arc<Tensor<T>>) -> Var<T> {
        Var { value, node: None }
    }

    fn push_leaf(&self, value: Arc<Tensor<T>>) -> Var<T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { op: "leaf", parents: Vec::new(), backward: None });
        self.lens.borrow_mut().push(value.len());
        Var { value, node: Some(id) }
    }

    /// Registers the result of an operation. Fails if any output is non-finite.
    pub(crate) fn record<F>(
        &self,
        op: &'static str,
        value: Arc<Tensor<T>>,
        inputs: &[&Var<T>],
        backward: F,
    ) -> Result<Var<T>, NumericsError>
    where
        F: Fn(&[T], &mut GradSink<'_, T>) + 'static,
    {
        if !value.all_finite() {
            return Err(NumericsError::NonFinite { op });
        }
        if !self.recording || inputs.iter().all(|v| v.node.is_none()) {
            return Ok(Var { value, node: None });
        }
        let parents: Vec<Option<NodeId>> = inputs.iter().map(|v| v.node).collect();
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        debug_assert!(parents.iter().flatten().all(|&p| p < id), "tape order violated");
        nodes.push(Node { op, parents, backward: Some(Box::new(backward)) });
        self.lens.borrow_mut().push(value.len());
        Ok(Var { value, node: Some(id) })
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: &Var<T>) -> Result<Gradients<T>, NumericsError> {
        if loss.len() != 1 {
            return Err(NumericsError::NonScalarLoss(loss.shape().to_vec()));
        }
        let nodes = self.nodes.borrow();
        let lens = self.lens.borrow();
        let mut bufs: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        let mut leaves: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        if let Some(root) = loss.node {
            bufs[root] = Some(vec![T::one()]);
            for i in (0..=root).rev() {
                let Some(g) = bufs[i].take() else { continue };
                let node = &nodes[i];
                if !g.iter().all(|v| v.is_finite()) {
                    return Err(NumericsError::NonFiniteGrad { op: node.op });
                }
                match &node.backward {
                    Some(bw) => {
                        let mut sink = GradSink { parents: &node.parents, lens: &lens, bufs: &mut bufs };
                        bw(&g, &mut sink);
                    }
                    None => leaves[i] = Some(g),
                }
            }
        }
        Ok(Gradients {
            grads: leaves,
            param_nodes: self.param_vars.borrow().iter().filter_map(|(k, v)| v.node.map(|n| (*k, n))).collect(),
        })
    }
}

/// Gradients of a scalar with respect to the graph's tracked leaves.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    param_nodes: HashMap<ParamId, NodeId>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for a leaf; zeros when the loss does not depend on it.
    pub fn wrt(&self, var: &Var<T>) -> Tensor<T> {
        let data = var.node.and_then(|n| self.grads.get(n).cloned().flatten());
        match data {
            Some(d) => Tensor::new(var.shape(), d).expect("gradient shape"),
            None => Tensor::zeros(var.shape()),
        }
    }

    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Tensor<T> {
        let shape = store.get(id).shape();
        match self.param_nodes.get(&id).and_then(|&n| self.grads[n].clone()) {
            Some(d) => Tensor::new(shape, d).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    /// One gradient per parameter in store order; unused or frozen ones are zero.
    pub fn params(&self, store: &ParamStore<T>) -> Vec<Tensor<T>> {
        store.ids().map(|id| self.param(store, id)).collect()
    }
}
