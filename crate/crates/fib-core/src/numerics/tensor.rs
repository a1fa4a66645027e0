use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use crate::{Error, Result};

pub(crate) struct Inner {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
    pub op: Option<Op>,
}

pub(crate) type BackwardFn = Box<dyn Fn(&[f64])>;

pub(crate) struct Op {
    /// Parents in graph order, kept for the topological walk.
    pub parents: Vec<Tensor>,
    /// Pushes `grad_out` into the parents' grad slots. Captures value
    /// copies rather than the output tensor itself so the graph stays
    /// acyclic and drops cleanly.
    pub backward: BackwardFn,
}

/// Dense row-major tensor with an optional gradient slot.
///
/// Cloning is cheap and aliases the same storage; training code relies on
/// this to hand the same parameter to the graph builder, the optimizer
/// and the checkpointer.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) inner: Rc<RefCell<Inner>>,
}

impl Tensor {
    /// A leaf tensor that does not participate in differentiation.
    pub fn constant(shape: Vec<usize>, values: Vec<f64>) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "value count must match shape"
        );
        Tensor {
            inner: Rc::new(RefCell::new(Inner {
                shape,
                values,
                requires_grad: false,
                grad: None,
                op: None,
            })),
        }
    }

    /// A leaf parameter: `backward` fills its grad, `AdamState` updates it.
    pub fn param(shape: Vec<usize>, values: Vec<f64>) -> Tensor {
        let t = Tensor::constant(shape, values);
        t.inner.borrow_mut().requires_grad = true;
        t
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::constant(shape, vec![0.0; n])
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::constant(vec![1], vec![v])
    }

    pub(crate) fn from_op(shape: Vec<usize>, values: Vec<f64>, op: Op) -> Tensor {
        let t = Tensor::constant(shape, values);
        t.inner.borrow_mut().op = Some(op);
        t
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of rows / columns for 2-d tensors; vectors are 1×n.
    pub fn rows(&self) -> usize {
        let b = self.inner.borrow();
        if b.shape.len() == 2 {
            b.shape[0]
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        let b = self.inner.borrow();
        match b.shape.len() {
            2 => b.shape[1],
            1 => b.shape[0],
            _ => b.values.len(),
        }
    }

    pub fn values(&self) -> Ref<'_, [f64]> {
        Ref::map(self.inner.borrow(), |i| i.values.as_slice())
    }

    pub fn value_vec(&self) -> Vec<f64> {
        self.inner.borrow().values.clone()
    }

    /// Scalar payload of a 1-element tensor.
    pub fn item(&self) -> f64 {
        let b = self.inner.borrow();
        assert_eq!(b.values.len(), 1, "item() on non-scalar tensor");
        b.values[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    /// True when backward must compute a gradient through this node.
    pub(crate) fn needs_grad(&self) -> bool {
        let b = self.inner.borrow();
        b.requires_grad || b.op.is_some()
    }

    pub fn has_grad(&self) -> bool {
        self.inner.borrow().grad.is_some()
    }

    /// Gradient contents; zeros when backward never reached this tensor.
    pub fn grad_vec(&self) -> Vec<f64> {
        let b = self.inner.borrow();
        match &b.grad {
            Some(g) => g.clone(),
            None => vec![0.0; b.values.len()],
        }
    }

    pub fn zero_grad(&self) {
        let mut b = self.inner.borrow_mut();
        let n = b.values.len();
        b.grad = Some(vec![0.0; n]);
    }

    /// In-place mutation of the raw values. Only leaves should be touched;
    /// op nodes are products of a forward pass and are never edited.
    pub fn with_values_mut<R>(&self, f: impl FnOnce(&mut [f64]) -> R) -> R {
        f(&mut self.inner.borrow_mut().values)
    }

    pub(crate) fn accumulate_grad(&self, delta: &[f64]) {
        let mut b = self.inner.borrow_mut();
        let n = b.values.len();
        debug_assert_eq!(n, delta.len());
        let g = b.grad.get_or_insert_with(|| vec![0.0; n]);
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
    }

    pub(crate) fn accumulate_grad_with(&self, f: impl FnOnce(&mut [f64])) {
        let mut b = self.inner.borrow_mut();
        let n = b.values.len();
        let g = b.grad.get_or_insert_with(|| vec![0.0; n]);
        f(g);
    }

    /// Reverse-mode sweep from a scalar output.
    ///
    /// Fills/accumulates `grad` on every reachable tensor that needs one.
    /// Intermediate grads are materialized during the sweep and dropped
    /// with the graph.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                lhs: self.shape(),
                rhs: vec![1],
            });
        }
        if !self.item().is_finite() {
            return Err(Error::NonFinite("backward called on non-finite loss".into()));
        }

        let order = self.topo_order();
        self.accumulate_grad(&[1.0]);

        for node in order.iter().rev() {
            let grad_out = {
                let b = node.inner.borrow();
                if b.op.is_none() {
                    continue;
                }
                match &b.grad {
                    Some(g) => g.clone(),
                    None => continue, // not on any path to the output
                }
            };
            let b = node.inner.borrow();
            if let Some(op) = &b.op {
                (op.backward)(&grad_out);
            }
        }
        Ok(())
    }

    /// Iterative DFS postorder over parents; recursion would overflow on
    /// long unrolled sequences.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited: HashSet<*const Inner> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];

        while let Some((node, expanded)) = stack.pop() {
            let key = Rc::as_ptr(&node.inner) as *const Inner;
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(key) {
                continue;
            }
            stack.push((node.clone(), true));
            let b = node.inner.borrow();
            if let Some(op) = &b.op {
                for p in &op.parents {
                    if p.needs_grad() {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }

    pub fn all_finite(&self) -> bool {
        self.inner.borrow().values.iter().all(|v| v.is_finite())
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let b = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &b.shape)
            .field("requires_grad", &b.requires_grad)
            .field("values", &b.values)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_of_sum_is_ones() {
        let x = Tensor::param(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let y = x.sum();
        y.backward().unwrap();
        assert_eq!(x.grad_vec(), vec![1.0; 4]);
    }

    #[test]
    fn grad_of_sum_of_square_is_2x() {
        let x = Tensor::param(vec![3], vec![1.0, -2.0, 0.5]);
        let y = x.hadamard(&x).unwrap().sum();
        y.backward().unwrap();
        assert_eq!(x.grad_vec(), vec![2.0, -4.0, 1.0]);
    }

    #[test]
    fn grads_accumulate_over_multiple_paths() {
        let x = Tensor::param(vec![2], vec![3.0, 5.0]);
        let y = x.add(&x).unwrap().sum();
        y.backward().unwrap();
        assert_eq!(x.grad_vec(), vec![2.0, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::param(vec![2], vec![1.0, 2.0]);
        assert!(x.backward().is_err());
    }

    #[test]
    fn unreached_tensor_reports_zero_grad() {
        let x = Tensor::param(vec![2], vec![1.0, 2.0]);
        let y = Tensor::param(vec![2], vec![5.0, 6.0]);
        let loss = x.sum();
        loss.backward().unwrap();
        assert_eq!(y.grad_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn deep_chain_does_not_overflow_stack() {
        let x = Tensor::param(vec![1], vec![0.01]);
        let mut y = x.clone();
        for _ in 0..20_000 {
            y = y.scale(1.0);
        }
        y.sum().backward().unwrap();
        assert_eq!(x.grad_vec(), vec![1.0]);
    }
}
