use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ops::Rule;
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tensor::{Tensor, TensorId};

/// One recorded operation: where its output came from and how to push a
/// gradient back through it.
pub(crate) struct Node<S: Scalar> {
    pub name: &'static str,
    pub inputs: Vec<InputSlot>,
    pub output: TensorId,
    pub rule: Rule<S>,
}

pub(crate) struct InputSlot {
    pub id: TensorId,
    pub needs_grad: bool,
    pub shape: Shape,
}

/// Append-only record of a forward pass. Create one per training step with
/// [`GradTape::new`]; use [`GradTape::disabled`] for inference, which records
/// nothing. Nodes are pushed in execution order, so replaying them in reverse
/// visits every use of a tensor after the node that produced it.
pub struct GradTape<S: Scalar> {
    active: bool,
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> GradTape<S> {
    /// A recording tape.
    pub fn new() -> Self {
        GradTape {
            active: true,
            nodes: Vec::new(),
        }
    }

    /// A tape that records nothing; forward passes run in inference mode.
    pub fn disabled() -> Self {
        GradTape {
            active: false,
            nodes: Vec::new(),
        }
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub(crate) fn push(
        &mut self,
        name: &'static str,
        inputs: &[&Tensor<S>],
        output: &Tensor<S>,
        rule: Rule<S>,
    ) {
        debug_assert!(self.active);
        self.nodes.push(Node {
            name,
            inputs: inputs
                .iter()
                .map(|t| InputSlot {
                    id: t.id(),
                    needs_grad: t.requires_grad(),
                    shape: t.shape().clone(),
                })
                .collect(),
            output: output.id(),
            rule,
        });
    }

    /// Reverse sweep from a scalar loss recorded under this tape. Returns the
    /// gradient of the loss with respect to every tensor that required a
    /// gradient (parameters and marked inputs, plus the intermediates linking
    /// them). A loss that was never recorded here yields an empty map.
    pub fn backward(&self, loss: &Tensor<S>) -> Result<GradientMap<S>> {
        if loss.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {}",
                loss.shape()
            )));
        }
        let mut map = GradientMap {
            grads: HashMap::new(),
        };
        if !self.nodes.iter().any(|n| n.output == loss.id()) {
            return Ok(map); // detached from this tape
        }

        let mut bufs: HashMap<TensorId, (Shape, Vec<S>)> = HashMap::new();
        bufs.insert(loss.id(), (loss.shape().clone(), vec![S::one()]));

        for node in self.nodes.iter().rev() {
            if !bufs.contains_key(&node.output) {
                continue;
            }
            let needs: Vec<bool> = node.inputs.iter().map(|i| i.needs_grad).collect();
            let input_grads = {
                let dy = &bufs[&node.output].1;
                node.rule.backward(dy, &needs).map_err(|e| {
                    Error::Contract(format!("backward of `{}` failed: {e}", node.name))
                })?
            };
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (slot, grad) in node.inputs.iter().zip(input_grads) {
                let Some(grad) = grad else { continue };
                debug_assert_eq!(grad.len(), slot.shape.numel());
                let entry = bufs
                    .entry(slot.id)
                    .or_insert_with(|| (slot.shape.clone(), vec![S::zero(); grad.len()]));
                for (acc, g) in entry.1.iter_mut().zip(grad) {
                    *acc += g;
                }
            }
        }

        for (id, (shape, data)) in bufs {
            map.grads.insert(id, Tensor::from_vec(shape, data)?);
        }
        Ok(map)
    }
}

impl<S: Scalar> Default for GradTape<S> {
    fn default() -> Self {
        GradTape::new()
    }
}

/// Gradients keyed by tensor identity; look them up with any clone of the
/// tensor the forward pass used.
pub struct GradientMap<S: Scalar> {
    grads: HashMap<TensorId, Tensor<S>>,
}

impl<S: Scalar> GradientMap<S> {
    pub fn get(&self, tensor: &Tensor<S>) -> Option<&Tensor<S>> {
        self.grads.get(&tensor.id())
    }

    pub fn get_id(&self, id: TensorId) -> Option<&Tensor<S>> {
        self.grads.get(&id)
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }
}
