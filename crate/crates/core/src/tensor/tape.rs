//! Operation tape for reverse-mode differentiation.
//!
//! A tape records one forward pass. `backward` walks the recorded steps in
//! reverse exactly once, accumulates node gradients, and flushes gradients
//! of parameter-bound leaves into the [`ParamStore`]. A tape may run
//! backward only once; build a fresh tape per forward pass.

use super::ops;
use super::{NdArray, ParamStore, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

struct Node {
    value: NdArray,
    grad: NdArray,
    /// Present when this leaf mirrors a named parameter.
    param: Option<String>,
}

enum Step {
    Affine {
        x: usize,
        w: usize,
        b: usize,
        out: usize,
    },
    Conv2d {
        x: usize,
        k: usize,
        b: usize,
        out: usize,
        geom: ops::ConvGeom,
    },
    MaxPool {
        x: usize,
        out: usize,
        argmax: Vec<usize>,
    },
    Relu {
        x: usize,
        out: usize,
    },
    Sigmoid {
        x: usize,
        out: usize,
    },
    Reshape {
        x: usize,
        out: usize,
    },
    Sum {
        x: usize,
        out: usize,
    },
    MseLoss {
        pred: usize,
        out: usize,
        target: NdArray,
    },
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    steps: Vec<Step>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    fn push(&mut self, value: NdArray, param: Option<String>) -> NodeId {
        let grad = NdArray::zeros(value.shape());
        self.nodes.push(Node { value, grad, param });
        NodeId(self.nodes.len() - 1)
    }

    /// Records a leaf that receives no parameter-gradient flush.
    pub fn constant(&mut self, value: NdArray) -> NodeId {
        self.push(value, None)
    }

    /// Records a leaf holding a copy of the named parameter's current
    /// value. After `backward`, its gradient is accumulated into the store
    /// (provided the entry is trainable).
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<NodeId, TensorError> {
        let entry = store
            .get(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        Ok(self.push(entry.value().clone(), Some(name.to_string())))
    }

    pub fn value(&self, id: NodeId) -> &NdArray {
        &self.nodes[id.0].value
    }

    /// Gradient of the last backward pass with respect to this node.
    pub fn grad(&self, id: NodeId) -> &NdArray {
        &self.nodes[id.0].grad
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let out = ops::affine_forward(
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            &self.nodes[b.0].value,
        )?;
        let out = self.push(out, None);
        self.steps.push(Step::Affine {
            x: x.0,
            w: w.0,
            b: b.0,
            out: out.0,
        });
        Ok(out)
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        k: NodeId,
        b: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId, TensorError> {
        let geom = ops::conv_geom(
            self.nodes[x.0].value.shape(),
            self.nodes[k.0].value.shape(),
            self.nodes[b.0].value.shape(),
            stride,
            padding,
        )?;
        let out = ops::conv2d_forward(
            &self.nodes[x.0].value,
            &self.nodes[k.0].value,
            &self.nodes[b.0].value,
            &geom,
        );
        let out = self.push(out, None);
        self.steps.push(Step::Conv2d {
            x: x.0,
            k: k.0,
            b: b.0,
            out: out.0,
            geom,
        });
        Ok(out)
    }

    pub fn maxpool2d(
        &mut self,
        x: NodeId,
        window: usize,
        stride: usize,
    ) -> Result<NodeId, TensorError> {
        let (out, argmax) = ops::maxpool_forward(&self.nodes[x.0].value, window, stride)?;
        let out = self.push(out, None);
        self.steps.push(Step::MaxPool {
            x: x.0,
            out: out.0,
            argmax,
        });
        Ok(out)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = ops::relu_forward(&self.nodes[x.0].value);
        let out = self.push(out, None);
        self.steps.push(Step::Relu { x: x.0, out: out.0 });
        out
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = ops::sigmoid_forward(&self.nodes[x.0].value);
        let out = self.push(out, None);
        self.steps.push(Step::Sigmoid { x: x.0, out: out.0 });
        out
    }

    /// Reinterprets the value under a new shape with the same length.
    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId, TensorError> {
        let value = &self.nodes[x.0].value;
        if shape.iter().product::<usize>() != value.len() {
            return Err(TensorError::ShapeMismatch {
                expected: value.shape().to_vec(),
                got: shape.to_vec(),
            });
        }
        let out = NdArray::from_vec(shape, value.data().to_vec());
        let out = self.push(out, None);
        self.steps.push(Step::Reshape { x: x.0, out: out.0 });
        Ok(out)
    }

    /// Sum of all entries, as a scalar node.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total: f64 = self.nodes[x.0].value.data().iter().sum();
        let out = self.push(NdArray::scalar(total), None);
        self.steps.push(Step::Sum { x: x.0, out: out.0 });
        out
    }

    /// Mean squared error against a constant target. The gradient flows to
    /// `pred` only.
    pub fn mse_loss(&mut self, pred: NodeId, target: &NdArray) -> Result<NodeId, TensorError> {
        let out = ops::mse_forward(&self.nodes[pred.0].value, target)?;
        let out = self.push(out, None);
        self.steps.push(Step::MseLoss {
            pred: pred.0,
            out: out.0,
            target: target.clone(),
        });
        Ok(out)
    }

    /// Runs reverse-mode accumulation from a scalar `loss` node, then
    /// flushes gradients of parameter-bound leaves into `store`. May be
    /// called once per tape.
    pub fn backward(&mut self, loss: NodeId, store: &mut ParamStore) -> Result<(), TensorError> {
        if self.consumed {
            return Err(TensorError::GraphConsumed);
        }
        self.consumed = true;
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::ShapeMismatch {
                expected: vec![1],
                got: self.nodes[loss.0].value.shape().to_vec(),
            });
        }
        self.nodes[loss.0].grad.data_mut()[0] = 1.0;

        for step in self.steps.iter().rev() {
            match step {
                Step::Affine { x, w, b, out } => {
                    let (dx, dw, db) = ops::affine_backward(
                        &self.nodes[*x].value,
                        &self.nodes[*w].value,
                        &self.nodes[*out].grad,
                    );
                    self.nodes[*x].grad.add_assign(&dx);
                    self.nodes[*w].grad.add_assign(&dw);
                    self.nodes[*b].grad.add_assign(&db);
                }
                Step::Conv2d { x, k, b, out, geom } => {
                    let (dx, dk, db) = ops::conv2d_backward(
                        &self.nodes[*x].value,
                        &self.nodes[*k].value,
                        geom,
                        &self.nodes[*out].grad,
                    );
                    self.nodes[*x].grad.add_assign(&dx);
                    self.nodes[*k].grad.add_assign(&dk);
                    self.nodes[*b].grad.add_assign(&db);
                }
                Step::MaxPool { x, out, argmax } => {
                    let dx = ops::maxpool_backward(
                        self.nodes[*x].value.shape(),
                        argmax,
                        &self.nodes[*out].grad,
                    );
                    self.nodes[*x].grad.add_assign(&dx);
                }
                Step::Relu { x, out } => {
                    let dx = ops::relu_backward(&self.nodes[*x].value, &self.nodes[*out].grad);
                    self.nodes[*x].grad.add_assign(&dx);
                }
                Step::Sigmoid { x, out } => {
                    let dx = ops::sigmoid_backward(&self.nodes[*out].value, &self.nodes[*out].grad);
                    self.nodes[*x].grad.add_assign(&dx);
                }
                Step::Reshape { x, out } => {
                    let go = self.nodes[*out].grad.data().to_vec();
                    let dx = NdArray::from_vec(self.nodes[*x].value.shape(), go);
                    self.nodes[*x].grad.add_assign(&dx);
                }
                Step::Sum { x, out } => {
                    let go = self.nodes[*out].grad.item();
                    for g in self.nodes[*x].grad.data_mut() {
                        *g += go;
                    }
                }
                Step::MseLoss { pred, out, target } => {
                    let go = self.nodes[*out].grad.item();
                    let dp = ops::mse_backward(&self.nodes[*pred].value, target, go);
                    self.nodes[*pred].grad.add_assign(&dp);
                }
            }
        }

        for node in &self.nodes {
            if let Some(name) = &node.param {
                store.accumulate_grad(name, &node.grad)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ParamGroup;

    #[test]
    fn bias_gradient_of_sum_is_all_ones() {
        let mut store = ParamStore::new();
        store
            .insert("w", ParamGroup::Backbone, NdArray::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]))
            .unwrap();
        store
            .insert("b", ParamGroup::Backbone, NdArray::from_vec(&[2], vec![0.5, -0.5]))
            .unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(NdArray::from_vec(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let w = tape.param(&store, "w").unwrap();
        let b = tape.param(&store, "b").unwrap();
        let y = tape.affine(x, w, b).unwrap();
        let loss = tape.sum(y);
        tape.backward(loss, &mut store).unwrap();
        // d(sum)/db_o = batch size for each output column.
        assert_eq!(store.get("b").unwrap().grad().data(), &[3.0, 3.0]);
    }

    #[test]
    fn backward_runs_once() {
        let mut store = ParamStore::new();
        let mut tape = Tape::new();
        let x = tape.constant(NdArray::scalar(1.0));
        let loss = tape.sum(x);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(
            tape.backward(loss, &mut store),
            Err(TensorError::GraphConsumed)
        );
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut store = ParamStore::new();
        let mut tape = Tape::new();
        let x = tape.constant(NdArray::zeros(&[2]));
        assert!(matches!(
            tape.backward(x, &mut store),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn fan_out_accumulates() {
        // out = x*x uses the same node as input and weight; the gradient
        // must sum both paths: d(x^2)/dx = 2x.
        let mut store = ParamStore::new();
        store
            .insert("x", ParamGroup::Backbone, NdArray::from_vec(&[1, 1], vec![3.0]))
            .unwrap();
        let mut tape = Tape::new();
        let x = tape.param(&store, "x").unwrap();
        let b = tape.constant(NdArray::zeros(&[1]));
        let y = tape.affine(x, x, b).unwrap();
        let loss = tape.sum(y);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get("x").unwrap().grad().data(), &[6.0]);
    }

    #[test]
    fn frozen_params_receive_no_gradient() {
        let mut store = ParamStore::new();
        store
            .insert("w", ParamGroup::ClsHead, NdArray::from_vec(&[1], vec![2.0]))
            .unwrap();
        store.set_group_trainable(ParamGroup::ClsHead, false);
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let loss = tape.sum(w);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get("w").unwrap().grad().data(), &[0.0]);
    }

    #[test]
    fn mse_gradient_flows_to_pred_only() {
        let mut store = ParamStore::new();
        store
            .insert("p", ParamGroup::TcHead, NdArray::from_vec(&[2], vec![2.0, 0.0]))
            .unwrap();
        let mut tape = Tape::new();
        let p = tape.param(&store, "p").unwrap();
        let target = NdArray::from_vec(&[2], vec![0.0, 0.0]);
        let loss = tape.mse_loss(p, &target).unwrap();
        assert_eq!(tape.value(loss).item(), 2.0);
        tape.backward(loss, &mut store).unwrap();
        // grad = 2*(p - t)/n with n = 2.
        assert_eq!(store.get("p").unwrap().grad().data(), &[2.0, 0.0]);
    }
}
