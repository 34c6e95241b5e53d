//! Minimal reverse-mode automatic differentiation over dense arrays.
//!
//! A [`Tape`] is a Wengert list: every operation is recorded with its input
//! node ids and cached forward value. Leaves are placeholders (inputs) or
//! trainable parameters. After updating leaf values, [`Tape::replay`]
//! recomputes the whole graph in recording order, and [`Tape::backward`]
//! walks it in reverse, accumulating gradients in a fixed order so repeated
//! runs are bit-identical.

pub mod ops;

use std::sync::Arc;

use crate::array::NdArray;
use crate::error::{Error, Result};

pub use ops::UpsampleMode;

/// Index of a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A recorded operation. Loss targets are shared immutably so cloning an op
/// during replay stays cheap.
#[derive(Debug, Clone)]
enum Op {
    /// Placeholder or parameter; value is set externally.
    Leaf,
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
        pad: usize,
    },
    Conv3d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: [usize; 3],
        pad: [usize; 3],
    },
    LeakyRelu {
        input: NodeId,
        slope: f64,
    },
    Sigmoid {
        input: NodeId,
    },
    Upsample2d {
        input: NodeId,
        factors: [usize; 2],
        mode: UpsampleMode,
    },
    Upsample3d {
        input: NodeId,
        factors: [usize; 3],
        mode: UpsampleMode,
    },
    ChanNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    },
    Concat {
        a: NodeId,
        b: NodeId,
    },
    Reshape {
        input: NodeId,
        shape: Vec<usize>,
    },
    BlockAvg {
        input: NodeId,
        alpha: usize,
    },
    Sum {
        input: NodeId,
    },
    Hadamard {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        input: NodeId,
        factor: f64,
    },
    /// Mean squared difference against a fixed target.
    MseVs {
        input: NodeId,
        target: Arc<NdArray>,
    },
    /// Mean squared difference restricted to mask=1 positions. The target is
    /// stored pre-masked, so values hidden by the mask cannot influence
    /// anything by construction.
    MaskedMseVs {
        input: NodeId,
        masked_target: Arc<NdArray>,
        mask: Arc<NdArray>,
        ones: f64,
    },
}

struct Node {
    op: Op,
    value: NdArray,
    trainable: bool,
}

/// Gradients per node, as produced by [`Tape::backward`]. Only leaves retain
/// their gradient; intermediate buffers are dropped once consumed.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<NdArray>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&NdArray> {
        self.grads[id.0].as_ref()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<NodeId>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, op: Op, value: NdArray, trainable: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value,
            trainable,
        });
        if trainable {
            self.params.push(id);
        }
        id
    }

    /// Placeholder leaf, initially zero; set it with [`Tape::set_value`].
    pub fn input(&mut self, shape: &[usize]) -> NodeId {
        self.push(Op::Leaf, NdArray::zeros(shape), false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: NdArray) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// Fixed non-trainable leaf.
    pub fn constant(&mut self, value: NdArray) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, id: NodeId) -> &NdArray {
        &self.nodes[id.0].value
    }

    /// Overwrites a leaf's value; the shape must not change.
    pub fn set_value(&mut self, id: NodeId, value: NdArray) -> Result<()> {
        let node = &mut self.nodes[id.0];
        assert!(matches!(node.op, Op::Leaf), "set_value on non-leaf node");
        if node.value.shape() != value.shape() {
            return Err(Error::DimMismatch {
                op: "set_value",
                dim: "flat length",
                expected: node.value.numel(),
                got: value.numel(),
            });
        }
        node.value = value;
        Ok(())
    }

    pub fn params(&self) -> &[NodeId] {
        &self.params
    }

    /// Applies `f` to the value of each listed leaf, in order. Used by the
    /// optimizer to update parameters in place between replays.
    pub fn update_leaf_values(
        &mut self,
        ids: &[NodeId],
        mut f: impl FnMut(NodeId, &mut NdArray),
    ) {
        for &id in ids {
            assert!(
                matches!(self.nodes[id.0].op, Op::Leaf),
                "update_leaf_values on non-leaf node"
            );
            f(id, &mut self.nodes[id.0].value);
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Total number of trainable scalar parameters.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|id| self.nodes[id.0].value.numel()).sum()
    }

    // -- op recording (forward is evaluated eagerly) --

    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let v = ops::conv2d(
            self.value(input),
            self.value(kernel),
            self.value(bias),
            stride,
            pad,
        )?;
        Ok(self.push(
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                pad,
            },
            v,
            false,
        ))
    }

    pub fn conv3d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Result<NodeId> {
        let v = ops::conv3d(
            self.value(input),
            self.value(kernel),
            self.value(bias),
            stride,
            pad,
        )?;
        Ok(self.push(
            Op::Conv3d {
                input,
                kernel,
                bias,
                stride,
                pad,
            },
            v,
            false,
        ))
    }

    pub fn leaky_relu(&mut self, input: NodeId, slope: f64) -> NodeId {
        let v = ops::leaky_relu(self.value(input), slope);
        self.push(Op::LeakyRelu { input, slope }, v, false)
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        let v = ops::sigmoid(self.value(input));
        self.push(Op::Sigmoid { input }, v, false)
    }

    pub fn upsample2d(
        &mut self,
        input: NodeId,
        factors: [usize; 2],
        mode: UpsampleMode,
    ) -> NodeId {
        let v = ops::upsample2d(self.value(input), factors, mode);
        self.push(
            Op::Upsample2d {
                input,
                factors,
                mode,
            },
            v,
            false,
        )
    }

    pub fn upsample3d(
        &mut self,
        input: NodeId,
        factors: [usize; 3],
        mode: UpsampleMode,
    ) -> NodeId {
        let v = ops::upsample3d(self.value(input), factors, mode);
        self.push(
            Op::Upsample3d {
                input,
                factors,
                mode,
            },
            v,
            false,
        )
    }

    /// Per-channel normalization with learned affine parameters.
    pub fn chan_norm(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let channels = self.value(input).shape()[0];
        for (id, name) in [(gamma, "gamma length"), (beta, "beta length")] {
            if self.value(id).numel() != channels {
                return Err(Error::DimMismatch {
                    op: "chan_norm",
                    dim: name,
                    expected: channels,
                    got: self.value(id).numel(),
                });
            }
        }
        let v = ops::chan_norm(self.value(input), self.value(gamma), self.value(beta), eps);
        Ok(self.push(
            Op::ChanNorm {
                input,
                gamma,
                beta,
                eps,
            },
            v,
            false,
        ))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::concat0(self.value(a), self.value(b))?;
        Ok(self.push(Op::Concat { a, b }, v, false))
    }

    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(input).reshaped(shape)?;
        Ok(self.push(
            Op::Reshape {
                input,
                shape: shape.to_vec(),
            },
            v,
            false,
        ))
    }

    pub fn block_avg(&mut self, input: NodeId, alpha: usize) -> Result<NodeId> {
        let v = ops::block_avg2(self.value(input), alpha)?;
        Ok(self.push(Op::BlockAvg { input, alpha }, v, false))
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let v = NdArray::scalar(self.value(input).data().iter().sum());
        self.push(Op::Sum { input }, v, false)
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::DimMismatch {
                op: "hadamard",
                dim: "flat length",
                expected: va.numel(),
                got: vb.numel(),
            });
        }
        let v = NdArray::from_fn(va.shape(), |i| va.data()[i] * vb.data()[i]);
        Ok(self.push(Op::Hadamard { a, b }, v, false))
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> NodeId {
        let v = self.value(input).map(|x| factor * x);
        self.push(Op::Scale { input, factor }, v, false)
    }

    /// Mean of squared differences against a fixed target array.
    pub fn mse_against(&mut self, input: NodeId, target: &NdArray) -> Result<NodeId> {
        if self.value(input).shape() != target.shape() {
            return Err(Error::DimMismatch {
                op: "mse",
                dim: "flat length",
                expected: self.value(input).numel(),
                got: target.numel(),
            });
        }
        let target = Arc::new(target.clone());
        let v = mse_value(self.value(input), &target);
        Ok(self.push(Op::MseVs { input, target }, v, false))
    }

    /// Mean of squared differences over mask=1 positions only.
    pub fn masked_mse_against(
        &mut self,
        input: NodeId,
        target: &NdArray,
        mask: &NdArray,
    ) -> Result<NodeId> {
        let x = self.value(input);
        for (name, arr) in [("target", target), ("mask", mask)] {
            if x.shape() != arr.shape() {
                let _ = name;
                return Err(Error::DimMismatch {
                    op: "masked_mse",
                    dim: "flat length",
                    expected: x.numel(),
                    got: arr.numel(),
                });
            }
        }
        let ones = mask.data().iter().filter(|&&v| v == 1.0).count();
        if ones == 0 {
            return Err(Error::EmptyMask);
        }
        let masked_target = Arc::new(NdArray::from_fn(target.shape(), |i| {
            target.data()[i] * mask.data()[i]
        }));
        let mask = Arc::new(mask.clone());
        let v = masked_mse_value(x, &masked_target, &mask, ones as f64);
        Ok(self.push(
            Op::MaskedMseVs {
                input,
                masked_target,
                mask,
                ones: ones as f64,
            },
            v,
            false,
        ))
    }

    // -- execution --

    /// Recomputes every non-leaf node in recording order from the current
    /// leaf values. Identical inputs yield bit-identical node values.
    pub fn replay(&mut self) {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            self.nodes[i].value = self.eval(&op);
        }
    }

    fn eval(&self, op: &Op) -> NdArray {
        match op {
            Op::Leaf => unreachable!("leaves are never re-evaluated"),
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                pad,
            } => ops::conv2d(
                self.value(*input),
                self.value(*kernel),
                self.value(*bias),
                *stride,
                *pad,
            )
            .expect("shape already validated at recording time"),
            Op::Conv3d {
                input,
                kernel,
                bias,
                stride,
                pad,
            } => ops::conv3d(
                self.value(*input),
                self.value(*kernel),
                self.value(*bias),
                *stride,
                *pad,
            )
            .expect("shape already validated at recording time"),
            Op::LeakyRelu { input, slope } => ops::leaky_relu(self.value(*input), *slope),
            Op::Sigmoid { input } => ops::sigmoid(self.value(*input)),
            Op::Upsample2d {
                input,
                factors,
                mode,
            } => ops::upsample2d(self.value(*input), *factors, *mode),
            Op::Upsample3d {
                input,
                factors,
                mode,
            } => ops::upsample3d(self.value(*input), *factors, *mode),
            Op::ChanNorm {
                input,
                gamma,
                beta,
                eps,
            } => ops::chan_norm(
                self.value(*input),
                self.value(*gamma),
                self.value(*beta),
                *eps,
            ),
            Op::Concat { a, b } => {
                ops::concat0(self.value(*a), self.value(*b)).expect("validated")
            }
            Op::Reshape { input, shape } => {
                self.value(*input).reshaped(shape).expect("validated")
            }
            Op::BlockAvg { input, alpha } => {
                ops::block_avg2(self.value(*input), *alpha).expect("validated")
            }
            Op::Sum { input } => NdArray::scalar(self.value(*input).data().iter().sum()),
            Op::Hadamard { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                NdArray::from_fn(va.shape(), |i| va.data()[i] * vb.data()[i])
            }
            Op::Scale { input, factor } => self.value(*input).map(|x| factor * x),
            Op::MseVs { input, target } => mse_value(self.value(*input), target),
            Op::MaskedMseVs {
                input,
                masked_target,
                mask,
                ones,
            } => masked_mse_value(self.value(*input), masked_target, mask, *ones),
        }
    }

    /// Reverse-mode sweep from a scalar loss node. Returns the gradient of
    /// the loss w.r.t. every trainable leaf (and any leaf reached by the
    /// sweep that was marked trainable). Consumers are visited in reverse
    /// recording order with left-to-right inputs, so accumulation order is
    /// fixed.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_val = self.value(loss);
        if loss_val.numel() != 1 {
            return Err(Error::LossNotScalar {
                len: loss_val.numel(),
            });
        }
        let mut grads: Vec<Option<NdArray>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(NdArray::scalar(1.0));

        for id in (0..=loss.0).rev() {
            if grads[id].is_none() || matches!(self.nodes[id].op, Op::Leaf) {
                continue;
            }
            let g = grads[id].take().expect("checked above");
            match &self.nodes[id].op {
                Op::Leaf => unreachable!(),
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    stride,
                    pad,
                } => {
                    let (dx, dk, db) = ops::conv2d_backward(
                        self.value(*input),
                        self.value(*kernel),
                        *stride,
                        *pad,
                        &g,
                    );
                    accumulate(&mut grads, *input, dx);
                    accumulate(&mut grads, *kernel, dk);
                    accumulate(&mut grads, *bias, db);
                }
                Op::Conv3d {
                    input,
                    kernel,
                    bias,
                    stride,
                    pad,
                } => {
                    let (dx, dk, db) = ops::conv3d_backward(
                        self.value(*input),
                        self.value(*kernel),
                        *stride,
                        *pad,
                        &g,
                    );
                    accumulate(&mut grads, *input, dx);
                    accumulate(&mut grads, *kernel, dk);
                    accumulate(&mut grads, *bias, db);
                }
                Op::LeakyRelu { input, slope } => {
                    let dx = ops::leaky_relu_backward(self.value(*input), *slope, &g);
                    accumulate(&mut grads, *input, dx);
                }
                Op::Sigmoid { input } => {
                    let dx = ops::sigmoid_backward(&self.nodes[id].value, &g);
                    accumulate(&mut grads, *input, dx);
                }
                Op::Upsample2d {
                    input,
                    factors,
                    mode,
                } => {
                    let dx = ops::upsample2d_backward(
                        &g,
                        self.value(*input).shape(),
                        *factors,
                        *mode,
                    );
                    accumulate(&mut grads, *input, dx);
                }
                Op::Upsample3d {
                    input,
                    factors,
                    mode,
                } => {
                    let dx = ops::upsample3d_backward(
                        &g,
                        self.value(*input).shape(),
                        *factors,
                        *mode,
                    );
                    accumulate(&mut grads, *input, dx);
                }
                Op::ChanNorm {
                    input,
                    gamma,
                    beta,
                    eps,
                } => {
                    let (dx, dgamma, dbeta) = ops::chan_norm_backward(
                        self.value(*input),
                        self.value(*gamma),
                        *eps,
                        &g,
                    );
                    accumulate(&mut grads, *input, dx);
                    accumulate(&mut grads, *gamma, dgamma);
                    accumulate(&mut grads, *beta, dbeta);
                }
                Op::Concat { a, b } => {
                    let na = self.value(*a).numel();
                    let da = NdArray::from_vec(
                        self.value(*a).shape(),
                        g.data()[..na].to_vec(),
                    )
                    .expect("split lengths match");
                    let db = NdArray::from_vec(
                        self.value(*b).shape(),
                        g.data()[na..].to_vec(),
                    )
                    .expect("split lengths match");
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Reshape { input, .. } => {
                    let dx = g
                        .reshaped(self.value(*input).shape())
                        .expect("numel preserved");
                    accumulate(&mut grads, *input, dx);
                }
                Op::BlockAvg { input, alpha } => {
                    let dx =
                        ops::block_avg2_backward(&g, self.value(*input).shape(), *alpha);
                    accumulate(&mut grads, *input, dx);
                }
                Op::Sum { input } => {
                    let gv = g.data()[0];
                    accumulate(
                        &mut grads,
                        *input,
                        NdArray::filled(self.value(*input).shape(), gv),
                    );
                }
                Op::Hadamard { a, b } => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let da = NdArray::from_fn(va.shape(), |i| g.data()[i] * vb.data()[i]);
                    let db = NdArray::from_fn(vb.shape(), |i| g.data()[i] * va.data()[i]);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale { input, factor } => {
                    let f = *factor;
                    accumulate(&mut grads, *input, g.map(|v| f * v));
                }
                Op::MseVs { input, target } => {
                    let x = self.value(*input);
                    let scale = 2.0 * g.data()[0] / x.numel() as f64;
                    let dx = NdArray::from_fn(x.shape(), |i| {
                        scale * (x.data()[i] - target.data()[i])
                    });
                    accumulate(&mut grads, *input, dx);
                }
                Op::MaskedMseVs {
                    input,
                    masked_target,
                    mask,
                    ones,
                } => {
                    let x = self.value(*input);
                    let scale = 2.0 * g.data()[0] / ones;
                    let dx = NdArray::from_fn(x.shape(), |i| {
                        let m = mask.data()[i];
                        scale * m * (m * x.data()[i] - masked_target.data()[i])
                    });
                    accumulate(&mut grads, *input, dx);
                }
            }
        }

        // Drop buffers of non-trainable leaves; only parameters (and leaves
        // explicitly marked trainable) report gradients.
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.trainable {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<NdArray>], id: NodeId, contrib: NdArray) {
    match &mut grads[id.0] {
        Some(g) => g.add_assign(&contrib),
        slot @ None => *slot = Some(contrib),
    }
}

fn mse_value(x: &NdArray, target: &NdArray) -> NdArray {
    let mut acc = 0.0;
    for (a, b) in x.data().iter().zip(target.data()) {
        let d = a - b;
        acc += d * d;
    }
    NdArray::scalar(acc / x.numel() as f64)
}

fn masked_mse_value(x: &NdArray, masked_target: &NdArray, mask: &NdArray, ones: f64) -> NdArray {
    let mut acc = 0.0;
    for i in 0..x.numel() {
        let d = mask.data()[i] * x.data()[i] - masked_target.data()[i];
        acc += d * d;
    }
    NdArray::scalar(acc / ones)
}

/// Zero-mean uniform draws scaled by 1/sqrt(fan_in), with the sqrt(6)
/// prefactor that keeps activation variance steady through stacked
/// convolution + LeakyReLU layers (a bare 1/sqrt(fan_in) bound shrinks the
/// signal threefold per layer, which starves deep hourglasses).
pub fn init_array(
    rng: &mut rand_chacha::ChaCha8Rng,
    shape: &[usize],
    fan_in: usize,
) -> NdArray {
    use rand::Rng;
    assert!(fan_in > 0, "fan-in must be positive");
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| bound * (2.0 * rng.random::<f64>() - 1.0))
        .collect();
    NdArray::from_vec(shape, data).expect("finite draws")
}
