use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Computes parent gradients from the output gradient. The second argument
/// tells the closure which parents actually need a gradient so expensive
/// branches can be skipped.
pub(crate) type BackwardFn = dyn Fn(&[f32], &[bool]) -> Vec<Option<Vec<f32>>> + Send + Sync;

pub(crate) struct GradFn {
    parents: Vec<Tensor>,
    backward: Box<BackwardFn>,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f32>,
    requires_grad: bool,
    grad_fn: Option<GradFn>,
}

/// Dense row-major `f32` tensor with an optional backward graph.
///
/// Cloning is cheap (reference counted). Tensors are immutable; optimizers
/// replace parameter tensors instead of mutating them in place.
#[derive(Clone)]
pub struct Tensor {
    inner: Arc<Inner>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f32>, requires_grad: bool, grad_fn: Option<GradFn>) -> Self {
        assert_eq!(
            numel(&shape),
            data.len(),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor {
            inner: Arc::new(Inner {
                id: next_id(),
                shape,
                data,
                requires_grad,
                grad_fn,
            }),
        }
    }

    /// Constant tensor (no gradient tracking).
    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Self {
        Self::build(shape.to_vec(), data, false, None)
    }

    /// Trainable leaf tensor.
    pub fn param(shape: &[usize], data: Vec<f32>) -> Self {
        Self::build(shape.to_vec(), data, true, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_vec(shape, vec![0.0; numel(shape)])
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        Self::from_vec(shape, vec![value; numel(shape)])
    }

    pub fn scalar(value: f32) -> Self {
        Self::from_vec(&[1], vec![value])
    }

    pub(crate) fn from_op<F>(shape: Vec<usize>, data: Vec<f32>, parents: Vec<Tensor>, backward: F) -> Self
    where
        F: Fn(&[f32], &[bool]) -> Vec<Option<Vec<f32>>> + Send + Sync + 'static,
    {
        let requires_grad = parents.iter().any(Tensor::requires_grad);
        let grad_fn = requires_grad.then(|| GradFn {
            parents,
            backward: Box::new(backward),
        });
        Self::build(shape, data, requires_grad, grad_fn)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.inner.shape[axis]
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.inner.data
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.inner.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.grad_fn.is_none()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f32 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.inner.data[0]
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::from_vec(self.shape(), self.to_vec())
    }

    /// Reverse-mode differentiation of a single-element tensor.
    pub fn backward(&self) -> Gradients {
        assert_eq!(self.numel(), 1, "backward() needs a scalar, got shape {:?}", self.shape());
        self.backward_with(vec![1.0])
    }

    /// Reverse-mode differentiation seeded with an explicit output gradient.
    pub fn backward_with(&self, seed: Vec<f32>) -> Gradients {
        assert_eq!(seed.len(), self.numel());
        let mut leaves: HashMap<u64, Vec<f32>> = HashMap::new();
        if !self.requires_grad() {
            return Gradients { map: leaves };
        }
        if self.is_leaf() {
            leaves.insert(self.id(), seed);
            return Gradients { map: leaves };
        }

        let order = self.topological_order();
        let mut pending: HashMap<u64, Vec<f32>> = HashMap::new();
        pending.insert(self.id(), seed);
        for node in order.iter().rev() {
            let Some(grad) = pending.remove(&node.id()) else {
                continue;
            };
            let grad_fn = node.inner.grad_fn.as_ref().expect("interior node");
            let needs: Vec<bool> = grad_fn.parents.iter().map(Tensor::requires_grad).collect();
            let parent_grads = (grad_fn.backward)(&grad, &needs);
            debug_assert_eq!(parent_grads.len(), grad_fn.parents.len());
            for (parent, g) in grad_fn.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !parent.requires_grad() {
                    continue;
                }
                debug_assert_eq!(g.len(), parent.numel());
                let slot = if parent.is_leaf() {
                    &mut leaves
                } else {
                    &mut pending
                };
                match slot.get_mut(&parent.id()) {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => {
                        slot.insert(parent.id(), g);
                    }
                }
            }
        }
        Gradients { map: leaves }
    }

    /// Interior nodes reachable from `self`, parents before children.
    fn topological_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.id()) {
                continue;
            }
            let grad_fn = node.inner.grad_fn.as_ref().expect("interior node");
            stack.push((node.clone(), true));
            for p in grad_fn.parents.iter().rev() {
                if p.requires_grad() && !p.is_leaf() && !visited.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }
}

/// Leaf gradients produced by [`Tensor::backward`].
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    map: HashMap<u64, Vec<f32>>,
}

impl Gradients {
    /// Gradient of a leaf, or `None` if the leaf was not reached.
    pub fn get(&self, t: &Tensor) -> Option<&[f32]> {
        self.map.get(&t.id()).map(Vec::as_slice)
    }

    /// Gradient of a leaf, zeros when it was not reached.
    pub fn get_or_zeros(&self, t: &Tensor) -> Vec<f32> {
        self.get(t).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()])
    }

    pub fn contains(&self, t: &Tensor) -> bool {
        self.map.contains_key(&t.id())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
