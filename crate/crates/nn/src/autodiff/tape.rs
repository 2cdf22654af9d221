use std::cell::{Cell, RefCell};
use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::{NnError, Result};

/// A differentiable operation. `forward` may cache whatever `backward` needs.
///
/// Built-in operators and user extensions (such as the tracer-kinetic forward
/// model) implement the same trait and are recorded uniformly on the tape.
pub trait Function {
    fn name(&self) -> &'static str;

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor>;

    /// Vector-Jacobian products for every input. Entries for inputs whose
    /// `needs_grad` flag is false may be `None`.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_output: &Tensor,
        needs_grad: &[bool],
    ) -> Result<Vec<Option<Tensor>>>;
}

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    op: Option<Box<dyn Function>>,
    requires_grad: bool,
}

/// Records operations for one reverse pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.value().shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&self, value: Tensor, parents: Vec<usize>, op: Option<Box<dyn Function>>, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), parents, op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// A leaf whose gradient is collected by [`backward`](Self::backward).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Vec::new(), None, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Vec::new(), None, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn apply<'t, F: Function + 'static>(&'t self, mut op: F, inputs: &[Var<'t>]) -> Result<Var<'t>> {
        if self.consumed.get() {
            return Err(NnError::TapeMissing);
        }
        if inputs.iter().any(|v| !std::ptr::eq(v.tape, self)) {
            return Err(NnError::ForeignVariable);
        }
        let (values, requires_grad): (Vec<Rc<Tensor>>, bool) = {
            let nodes = self.nodes.borrow();
            (
                inputs.iter().map(|v| nodes[v.id].value.clone()).collect(),
                inputs.iter().any(|v| nodes[v.id].requires_grad),
            )
        };
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let out = op.forward(&refs)?;
        let op: Option<Box<dyn Function>> = if requires_grad { Some(Box::new(op)) } else { None };
        Ok(self.push(out, inputs.iter().map(|v| v.id).collect(), op, requires_grad))
    }

    /// Reverse pass from a scalar. Returns gradients of every
    /// gradient-requiring leaf. A tape supports a single backward pass.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(output.tape, self) {
            return Err(NnError::ForeignVariable);
        }
        if self.consumed.replace(true) {
            return Err(NnError::TapeMissing);
        }
        let nodes = self.nodes.borrow();
        let out_node = &nodes[output.id];
        if out_node.value.len() != 1 {
            self.consumed.set(false);
            return Err(NnError::NonScalarOutput(out_node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[output.id] = Some(Tensor::full(out_node.value.shape(), 1.0));
        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            let Some(op) = &node.op else { continue };
            let Some(grad) = grads[id].take() else { continue };
            let inputs: Vec<&Tensor> = node.parents.iter().map(|&p| nodes[p].value.as_ref()).collect();
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let parent_grads = op.backward(&inputs, &node.value, &grad, &needs)?;
            for ((&p, g), need) in node.parents.iter().zip(parent_grads).zip(needs) {
                let (Some(g), true) = (g, need) else { continue };
                debug_assert_eq!(g.shape(), nodes[p].value.shape(), "gradient shape from {}", op.name());
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }
        let leaves = nodes
            .iter()
            .zip(grads)
            .map(|(n, g)| if n.op.is_none() && n.requires_grad { g } else { None })
            .collect();
        Ok(Gradients { grads: leaves })
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// The same value as a constant (gradient flow stops here).
    pub fn detach(&self) -> Var<'t> {
        let value = self.value();
        let mut nodes = self.tape.nodes.borrow_mut();
        nodes.push(Node { value, parents: Vec::new(), op: None, requires_grad: false });
        Var { tape: self.tape, id: nodes.len() - 1 }
    }
}

/// Leaf gradients from one backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf; `None` when the loss does not depend on it.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf, zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(var.value().shape()))
    }
}
