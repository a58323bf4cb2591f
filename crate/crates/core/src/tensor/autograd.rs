use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use super::{Scalar, Tensor};

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>>>;

struct OpRecord<T: Scalar> {
    parents: Vec<Var<T>>,
    backward: BackwardFn<T>,
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    tracked: bool,
    op: Option<OpRecord<T>>,
}

/// A value in a dynamically built computation graph.
///
/// Untracked values carry no history and drop their inputs as soon as the
/// forward code releases them, so inference runs with bounded memory.
/// Tracked values remember the op that produced them and can be
/// differentiated with [`Var::backward`].
pub struct Var<T: Scalar>(Rc<Node<T>>);

impl<T: Scalar> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Scalar> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.0.value.shape())
            .field("tracked", &self.0.tracked)
            .finish()
    }
}

impl<T: Scalar> Var<T> {
    /// A value that never receives gradients.
    pub fn constant(value: Tensor<T>) -> Self {
        Var(Rc::new(Node {
            value,
            tracked: false,
            op: None,
        }))
    }

    /// A leaf that accumulates gradients (a parameter or a probed input).
    pub fn leaf(value: Tensor<T>) -> Self {
        Var(Rc::new(Node {
            value,
            tracked: true,
            op: None,
        }))
    }

    /// Record an op. When no parent is tracked the closure is dropped and
    /// the result is a constant.
    pub fn from_op<F>(value: Tensor<T>, parents: &[&Var<T>], backward: F) -> Self
    where
        F: Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>> + 'static,
    {
        if !parents.iter().any(|p| p.tracked()) {
            return Var::constant(value);
        }
        Var(Rc::new(Node {
            value,
            tracked: true,
            op: Some(OpRecord {
                parents: parents.iter().map(|p| (*p).clone()).collect(),
                backward: Box::new(backward),
            }),
        }))
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn tracked(&self) -> bool {
        self.0.tracked
    }

    pub fn detach(&self) -> Self {
        Var::constant(self.0.value.clone())
    }

    fn key(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    /// Reverse-mode differentiation of a scalar.
    pub fn backward(&self) -> Gradients<T> {
        assert_eq!(
            self.value().numel(),
            1,
            "backward() needs a scalar; use backward_with for shape {:?}",
            self.shape()
        );
        self.backward_with(Tensor::full(self.shape(), T::one()))
    }

    /// Reverse-mode differentiation seeded with `seed` (same shape as self).
    pub fn backward_with(&self, seed: Tensor<T>) -> Gradients<T> {
        assert_eq!(seed.shape(), self.shape(), "seed shape mismatch");
        let mut leaves = HashMap::new();
        if !self.tracked() {
            return Gradients { leaves };
        }
        let order = self.topo_order();
        let mut pending: HashMap<usize, Tensor<T>> = HashMap::new();
        pending.insert(self.key(), seed);
        for var in order.iter().rev() {
            let Some(grad) = pending.remove(&var.key()) else {
                continue;
            };
            match &var.0.op {
                None => {
                    leaves.insert(var.key(), (var.clone(), grad));
                }
                Some(op) => {
                    let parent_grads = (op.backward)(&grad);
                    debug_assert_eq!(parent_grads.len(), op.parents.len());
                    for (parent, pg) in op.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !parent.tracked() {
                            continue;
                        }
                        debug_assert_eq!(pg.shape(), parent.shape());
                        match pending.get_mut(&parent.key()) {
                            Some(acc) => acc.add_assign(&pg),
                            None => {
                                pending.insert(parent.key(), pg);
                            }
                        }
                    }
                }
            }
        }
        Gradients { leaves }
    }

    /// Tracked nodes reachable from self, parents before children.
    fn topo_order(&self) -> Vec<Var<T>> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Var<T>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.key());
        while let Some((var, next)) = stack.pop() {
            let parents: &[Var<T>] = match &var.0.op {
                Some(op) => &op.parents,
                None => &[],
            };
            if next < parents.len() {
                let parent = parents[next].clone();
                stack.push((var, next + 1));
                if parent.tracked() && visited.insert(parent.key()) {
                    stack.push((parent, 0));
                }
            } else {
                order.push(var);
            }
        }
        order
    }
}

/// Gradients of tracked leaves.
pub struct Gradients<T: Scalar> {
    leaves: HashMap<usize, (Var<T>, Tensor<T>)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        self.leaves.get(&var.key()).map(|(_, g)| g)
    }

    /// Gradient of `var`, or zeros when it did not influence the output.
    pub fn get_or_zeros(&self, var: &Var<T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }
}
