//! Execution graphs for model forward passes.
//!
//! [`Eager`] just computes values. [`Tape`] additionally records each
//! primitive with the state its backward pass needs, and [`Tape::backward`]
//! replays the record in reverse to produce parameter gradients.

use std::collections::BTreeMap;
use std::rc::Rc;

use crate::tensor::{
    self, BatchNormCache, BatchNormConfig, ConvSpec, DropoutKey, Mode, Real, RunningStats, Tensor,
    TensorError,
};

/// Index of a parameter tensor in its owning model.
pub type ParamId = usize;

/// The primitive operations a model forward pass is written against.
pub trait Graph<T: Real> {
    type Node: Clone;

    fn input(&mut self, value: Tensor<T>) -> Self::Node;

    fn param(&mut self, id: ParamId, value: &Tensor<T>) -> Self::Node;

    fn value<'a>(&'a self, node: &'a Self::Node) -> &'a Tensor<T>;

    fn conv1d(
        &mut self,
        x: &Self::Node,
        spec: &ConvSpec,
        weight: &Self::Node,
        bias: Option<&Self::Node>,
    ) -> Result<Self::Node, TensorError>;

    #[allow(clippy::too_many_arguments)]
    fn batch_norm(
        &mut self,
        x: &Self::Node,
        gamma: &Self::Node,
        beta: &Self::Node,
        stats: &mut RunningStats<T>,
        mode: Mode,
        cfg: BatchNormConfig,
    ) -> Result<Self::Node, TensorError>;

    fn relu(&mut self, x: &Self::Node) -> Self::Node;

    fn dropout(
        &mut self,
        x: &Self::Node,
        rate: f64,
        key: DropoutKey,
        mode: Mode,
    ) -> Result<Self::Node, TensorError>;

    fn add(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node, TensorError>;

    fn global_avg_pool(&mut self, x: &Self::Node) -> Result<Self::Node, TensorError>;

    fn linear(
        &mut self,
        x: &Self::Node,
        weight: &Self::Node,
        bias: &Self::Node,
    ) -> Result<Self::Node, TensorError>;
}

/// Value-only execution, used for inference.
#[derive(Debug, Default)]
pub struct Eager;

impl<T: Real> Graph<T> for Eager {
    type Node = Rc<Tensor<T>>;

    fn input(&mut self, value: Tensor<T>) -> Self::Node {
        Rc::new(value)
    }

    fn param(&mut self, _id: ParamId, value: &Tensor<T>) -> Self::Node {
        Rc::new(value.clone())
    }

    fn value<'a>(&'a self, node: &'a Self::Node) -> &'a Tensor<T> {
        node
    }

    fn conv1d(
        &mut self,
        x: &Self::Node,
        spec: &ConvSpec,
        weight: &Self::Node,
        bias: Option<&Self::Node>,
    ) -> Result<Self::Node, TensorError> {
        tensor::conv1d_forward(x, spec, weight, bias.map(|b| &**b)).map(Rc::new)
    }

    fn batch_norm(
        &mut self,
        x: &Self::Node,
        gamma: &Self::Node,
        beta: &Self::Node,
        stats: &mut RunningStats<T>,
        mode: Mode,
        cfg: BatchNormConfig,
    ) -> Result<Self::Node, TensorError> {
        tensor::batch_norm_forward(x, gamma, beta, stats, mode, cfg).map(|(y, _)| Rc::new(y))
    }

    fn relu(&mut self, x: &Self::Node) -> Self::Node {
        Rc::new(tensor::relu_forward(x))
    }

    fn dropout(
        &mut self,
        x: &Self::Node,
        rate: f64,
        key: DropoutKey,
        mode: Mode,
    ) -> Result<Self::Node, TensorError> {
        tensor::dropout_forward(x, rate, key, mode).map(|(y, _)| Rc::new(y))
    }

    fn add(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node, TensorError> {
        tensor::add(a, b).map(Rc::new)
    }

    fn global_avg_pool(&mut self, x: &Self::Node) -> Result<Self::Node, TensorError> {
        tensor::global_avg_pool_forward(x).map(Rc::new)
    }

    fn linear(
        &mut self,
        x: &Self::Node,
        weight: &Self::Node,
        bias: &Self::Node,
    ) -> Result<Self::Node, TensorError> {
        tensor::linear_forward(x, weight, bias).map(Rc::new)
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(ParamId),
    Conv {
        x: Var,
        weight: Var,
        bias: Option<Var>,
        spec: ConvSpec,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: BatchNormCache<T>,
    },
    Relu {
        x: Var,
    },
    Dropout {
        x: Var,
        mask: Option<Vec<T>>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Pool {
        x: Var,
    },
    Linear {
        x: Var,
        weight: Var,
        bias: Var,
    },
}

#[derive(Debug)]
struct Entry<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T = f32> {
    /// One entry per parameter that received gradient, keyed by [`ParamId`].
    pub params: BTreeMap<ParamId, Tensor<T>>,
    inputs: BTreeMap<usize, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to a value registered through [`Graph::input`].
    pub fn input(&self, var: Var) -> Option<&Tensor<T>> {
        self.inputs.get(&var.0)
    }
}

/// Ordered record of executed primitives.
#[derive(Debug, Default)]
pub struct Tape<T = f32> {
    entries: Vec<Entry<T>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Which ReLU outputs are active, in recording order. Two forward passes
    /// with equal patterns lie on the same linear piece of the network.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.entries
            .iter()
            .filter(|e| matches!(e.op, Op::Relu { .. }))
            .flat_map(|e| e.value.data().iter().map(|&v| v > T::zero()))
            .collect()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.entries.push(Entry { value, op });
        Var(self.entries.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.entries[v.0].value
    }

    /// Propagates `seed` (the gradient of some scalar with respect to `root`)
    /// back through every recorded op that `root` depends on.
    pub fn backward(&self, root: Var, seed: Tensor<T>) -> Result<Gradients<T>, TensorError> {
        if seed.shape() != self.val(root).shape() {
            return Err(TensorError::ShapeMismatch {
                op: "backward",
                what: "seed gradient".into(),
                expected: self.val(root).shape().to_vec(),
                actual: seed.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(seed);
        let mut out = Gradients {
            params: BTreeMap::new(),
            inputs: BTreeMap::new(),
        };

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let entry = &self.entries[idx];
            match &entry.op {
                Op::Input => {
                    out.inputs.insert(idx, g);
                }
                Op::Param(id) => match out.params.get_mut(id) {
                    Some(acc) => accumulate_into(acc, &g)?,
                    None => {
                        out.params.insert(*id, g);
                    }
                },
                Op::Conv {
                    x,
                    weight,
                    bias,
                    spec,
                } => {
                    let cg = tensor::conv::conv1d_grads(
                        self.val(*x),
                        spec,
                        self.val(*weight),
                        bias.is_some(),
                        &g,
                    )?;
                    accumulate(&mut grads, *x, cg.input)?;
                    accumulate(&mut grads, *weight, cg.weight)?;
                    if let (Some(b), Some(gb)) = (bias, cg.bias) {
                        accumulate(&mut grads, *b, gb)?;
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    cache,
                } => {
                    let (gx, gg, gb) = tensor::batch_norm_backward(cache, self.val(*gamma), &g)?;
                    accumulate(&mut grads, *x, gx)?;
                    accumulate(&mut grads, *gamma, gg)?;
                    accumulate(&mut grads, *beta, gb)?;
                }
                Op::Relu { x } => {
                    let gx = tensor::relu_backward(&entry.value, &g);
                    accumulate(&mut grads, *x, gx)?;
                }
                Op::Dropout { x, mask } => {
                    let gx = tensor::dropout_backward(mask.as_deref(), &g);
                    accumulate(&mut grads, *x, gx)?;
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g)?;
                }
                Op::Pool { x } => {
                    let gx = tensor::global_avg_pool_backward(self.val(*x).shape(), &g)?;
                    accumulate(&mut grads, *x, gx)?;
                }
                Op::Linear { x, weight, bias } => {
                    let lg = tensor::linear_backward(self.val(*x), self.val(*weight), &g)?;
                    accumulate(&mut grads, *x, lg.input)?;
                    accumulate(&mut grads, *weight, lg.weight)?;
                    accumulate(&mut grads, *bias, lg.bias)?;
                }
            }
        }
        Ok(out)
    }
}

fn accumulate_into<T: Real>(acc: &mut Tensor<T>, g: &Tensor<T>) -> Result<(), TensorError> {
    if acc.shape() != g.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "backward",
            what: "accumulated gradient".into(),
            expected: acc.shape().to_vec(),
            actual: g.shape().to_vec(),
        });
    }
    for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += b;
    }
    Ok(())
}

fn accumulate<T: Real>(
    grads: &mut [Option<Tensor<T>>],
    var: Var,
    g: Tensor<T>,
) -> Result<(), TensorError> {
    match &mut grads[var.0] {
        Some(acc) => accumulate_into(acc, &g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

impl<T: Real> Graph<T> for Tape<T> {
    type Node = Var;

    fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input)
    }

    fn param(&mut self, id: ParamId, value: &Tensor<T>) -> Var {
        self.push(value.clone(), Op::Param(id))
    }

    fn value<'a>(&'a self, node: &'a Var) -> &'a Tensor<T> {
        self.val(*node)
    }

    fn conv1d(
        &mut self,
        x: &Var,
        spec: &ConvSpec,
        weight: &Var,
        bias: Option<&Var>,
    ) -> Result<Var, TensorError> {
        let y = tensor::conv1d_forward(
            self.val(*x),
            spec,
            self.val(*weight),
            bias.map(|b| self.val(*b)),
        )?;
        Ok(self.push(
            y,
            Op::Conv {
                x: *x,
                weight: *weight,
                bias: bias.copied(),
                spec: *spec,
            },
        ))
    }

    fn batch_norm(
        &mut self,
        x: &Var,
        gamma: &Var,
        beta: &Var,
        stats: &mut RunningStats<T>,
        mode: Mode,
        cfg: BatchNormConfig,
    ) -> Result<Var, TensorError> {
        let (y, cache) = tensor::batch_norm_forward(
            self.val(*x),
            self.val(*gamma),
            self.val(*beta),
            stats,
            mode,
            cfg,
        )?;
        Ok(self.push(
            y,
            Op::BatchNorm {
                x: *x,
                gamma: *gamma,
                beta: *beta,
                cache,
            },
        ))
    }

    fn relu(&mut self, x: &Var) -> Var {
        let y = tensor::relu_forward(self.val(*x));
        self.push(y, Op::Relu { x: *x })
    }

    fn dropout(&mut self, x: &Var, rate: f64, key: DropoutKey, mode: Mode) -> Result<Var, TensorError> {
        let (y, mask) = tensor::dropout_forward(self.val(*x), rate, key, mode)?;
        Ok(self.push(y, Op::Dropout { x: *x, mask }))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var, TensorError> {
        let y = tensor::add(self.val(*a), self.val(*b))?;
        Ok(self.push(y, Op::Add { a: *a, b: *b }))
    }

    fn global_avg_pool(&mut self, x: &Var) -> Result<Var, TensorError> {
        let y = tensor::global_avg_pool_forward(self.val(*x))?;
        Ok(self.push(y, Op::Pool { x: *x }))
    }

    fn linear(&mut self, x: &Var, weight: &Var, bias: &Var) -> Result<Var, TensorError> {
        let y = tensor::linear_forward(self.val(*x), self.val(*weight), self.val(*bias))?;
        Ok(self.push(
            y,
            Op::Linear {
                x: *x,
                weight: *weight,
                bias: *bias,
            },
        ))
    }
}
