//! The reverse-mode differentiation tape.

use std::cell::RefCell;
use std::rc::Rc;

use ndarray::ArrayD;

use super::params::{ParamId, Params};

/// Maps the node's output gradient to one gradient per parent.
type BackwardFn = Box<dyn Fn(&ArrayD<f64>) -> Vec<ArrayD<f64>>>;

struct Node {
    value: Rc<ArrayD<f64>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

/// Handle to one tensor on a tape. Cheap to copy; only meaningful for the
/// tape that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    pub(crate) id: usize,
}

/// One training step's computation record.
///
/// A tape is append-only: operations push nodes, `backward` sweeps them in
/// reverse creation order (a valid topological order, since parents always
/// precede children). Tapes are cheap; training builds a fresh one per
/// forward/backward pass and drops it after the optimizer step.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    /// Tape nodes that mirror parameters, for gradient collection.
    param_uses: RefCell<Vec<(usize, ParamId)>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// A tensor with no gradient: inputs, masks, targets.
    pub fn constant(&self, value: ArrayD<f64>) -> Var {
        assert!(value.len() > 0, "tensors must be non-empty");
        self.push(Rc::new(value), Vec::new(), None)
    }

    /// Brings a parameter onto the tape. Gradients flowing into this node
    /// are credited to `id` by [`Tape::param_gradients`].
    pub fn param(&self, params: &Params, id: ParamId) -> Var {
        let v = self.push(params.value_rc(id), Vec::new(), None);
        self.param_uses.borrow_mut().push((v.id, id));
        v
    }

    /// A node that shares `of`'s value but blocks gradient flow.
    pub fn detach(&self, of: Var) -> Var {
        let value = self.value(of);
        self.push(value, Vec::new(), None)
    }

    /// The tensor held by a node. The `Rc` is a snapshot: parameter
    /// updates after this call do not affect it.
    pub fn value(&self, v: Var) -> Rc<ArrayD<f64>> {
        Rc::clone(&self.nodes.borrow()[v.id].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.id].value.shape().to_vec()
    }

    /// The single value of a scalar node.
    pub fn scalar(&self, v: Var) -> f64 {
        let nodes = self.nodes.borrow();
        let value = &nodes[v.id].value;
        assert_eq!(value.len(), 1, "scalar() on a non-scalar node");
        *value.iter().next().expect("len checked")
    }

    pub(crate) fn push(
        &self,
        value: Rc<ArrayD<f64>>,
        parents: Vec<usize>,
        backward: Option<BackwardFn>,
    ) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents,
            backward,
        });
        Var {
            id: nodes.len() - 1,
        }
    }

    /// Convenience for ops producing a freshly computed array.
    pub(crate) fn push_op(
        &self,
        value: ArrayD<f64>,
        parents: Vec<Var>,
        backward: BackwardFn,
    ) -> Var {
        self.push(
            Rc::new(value),
            parents.iter().map(|p| p.id).collect(),
            Some(backward),
        )
    }

    /// Reverse sweep from a scalar root. Returns one gradient slot per
    /// node; nodes the root does not depend on stay `None`.
    pub fn backward(&self, root: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[root.id].value.len(),
            1,
            "backward starts from a scalar loss"
        );

        let mut grads: Vec<Option<ArrayD<f64>>> = Vec::with_capacity(nodes.len());
        grads.resize_with(nodes.len(), || None);
        grads[root.id] = Some(ArrayD::ones(nodes[root.id].value.raw_dim()));

        for id in (0..=root.id).rev() {
            // The gradient stays in place (callers may query any node);
            // borrow it immutably while producing parent contributions.
            let Some(grad_out) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            if let Some(backward) = &node.backward {
                let parent_grads = backward(&grad_out);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&pid, pg) in node.parents.iter().zip(parent_grads) {
                    debug_assert_eq!(
                        pg.shape(),
                        nodes[pid].value.shape(),
                        "gradient shape must match the parent value"
                    );
                    match &mut grads[pid] {
                        Some(acc) => *acc += &pg,
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            grads[id] = Some(grad_out);
        }
        Gradients { grads }
    }

    /// Sums gradients per parameter across all its uses on this tape.
    /// Slots for parameters the loss does not reach hold `None`.
    pub fn param_gradients(&self, grads: &Gradients, params: &Params) -> Vec<Option<ArrayD<f64>>> {
        let mut out: Vec<Option<ArrayD<f64>>> = Vec::with_capacity(params.len());
        out.resize_with(params.len(), || None);
        for &(node_id, pid) in self.param_uses.borrow().iter() {
            let Some(g) = grads.grads[node_id].as_ref() else {
                continue;
            };
            match &mut out[pid.0] {
                Some(acc) => *acc += g,
                slot @ None => *slot = Some(g.clone()),
            }
        }
        out
    }
}

/// Per-node gradients from one backward sweep.
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to a node, if the loss depends
    /// on it.
    pub fn wrt(&self, v: Var) -> Option<&ArrayD<f64>> {
        self.grads[v.id].as_ref()
    }
}
