use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use super::{BackwardFn, NodeRef, OpKind, Tensor};
use crate::error::{Error, Result};

pub type NodeId = usize;

struct NodeRecord {
    kind: OpKind,
    inputs: Vec<Option<NodeId>>,
    shape: Vec<usize>,
    backward: Option<BackwardFn>,
}

/// Record of operations in execution order. Node ids increase with
/// recording time, so the node list is already topologically sorted.
#[derive(Clone, Default)]
pub struct Tape {
    nodes: Arc<Mutex<Vec<NodeRecord>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn same_as(&self, other: &Tape) -> bool {
        Arc::ptr_eq(&self.nodes, &other.nodes)
    }

    pub(crate) fn push(
        &self,
        kind: OpKind,
        inputs: Vec<Option<NodeId>>,
        shape: Vec<usize>,
        backward: Option<BackwardFn>,
    ) -> NodeId {
        let mut nodes = self.nodes.lock().unwrap();
        nodes.push(NodeRecord {
            kind,
            inputs,
            shape,
            backward,
        });
        nodes.len() - 1
    }

    /// Registers `value` as a differentiable leaf on this tape.
    pub fn leaf(&self, value: &Tensor) -> Tensor {
        let id = self.push(OpKind::Leaf, Vec::new(), value.shape.clone(), None);
        Tensor {
            shape: value.shape.clone(),
            data: value.data_arc(),
            node: Some(NodeRef {
                tape: self.clone(),
                id,
            }),
        }
    }

    /// Kinds of all recorded nodes, in recording order.
    pub fn op_kinds(&self) -> Vec<OpKind> {
        self.nodes.lock().unwrap().iter().map(|n| n.kind).collect()
    }

    /// Reverse sweep from a scalar root. Returns the adjoint of every leaf
    /// reachable from the root.
    pub fn backward(&self, root: &Tensor) -> Result<Gradients> {
        if root.numel() != 1 {
            return Err(Error::NonScalarRoot(root.shape.clone()));
        }
        let root_id = match &root.node {
            Some(n) if n.tape.same_as(self) => n.id,
            Some(_) => return Err(Error::TapeMismatch(OpKind::Leaf)),
            None => return Err(Error::DetachedRoot),
        };
        let nodes = self.nodes.lock().unwrap();
        let mut adjoints: Vec<Option<Vec<f64>>> = Vec::new();
        adjoints.resize_with(root_id + 1, || None);
        adjoints[root_id] = Some(vec![1.0]);

        let mut leaves = HashMap::new();
        for id in (0..=root_id).rev() {
            let Some(g) = adjoints[id].take() else {
                continue;
            };
            let node = &nodes[id];
            let Some(backward) = &node.backward else {
                leaves.insert(id, (node.shape.clone(), g));
                continue;
            };
            let needs: Vec<bool> = node.inputs.iter().map(Option::is_some).collect();
            let contribs = backward(&g, &needs);
            debug_assert_eq!(contribs.len(), node.inputs.len());
            for (input, contrib) in node.inputs.iter().zip(contribs) {
                let (Some(j), Some(c)) = (input, contrib) else {
                    continue;
                };
                match &mut adjoints[*j] {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(&c) {
                            *a += v;
                        }
                    }
                    slot @ None => *slot = Some(c),
                }
            }
        }
        Ok(Gradients {
            tape: self.clone(),
            leaves,
        })
    }
}

/// Leaf adjoints produced by [`Tape::backward`].
pub struct Gradients {
    tape: Tape,
    leaves: HashMap<NodeId, (Vec<usize>, Vec<f64>)>,
}

impl Gradients {
    /// Gradient with respect to `leaf`, or `None` if the root does not
    /// depend on it.
    pub fn get(&self, leaf: &Tensor) -> Option<Tensor> {
        let node = leaf.node.as_ref()?;
        if !node.tape.same_as(&self.tape) {
            return None;
        }
        self.leaves
            .get(&node.id)
            .map(|(shape, g)| Tensor::from_parts(shape.clone(), g.clone()))
    }

    /// Gradient with respect to `leaf`, zeros when unreachable.
    pub fn get_or_zeros(&self, leaf: &Tensor) -> Tensor {
        self.get(leaf)
            .unwrap_or_else(|| Tensor::zeros(leaf.shape()))
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }
}
