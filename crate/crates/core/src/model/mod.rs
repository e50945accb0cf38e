//! QuartzNet-style classifiers: a standard-conv stem, residual blocks of
//! depthwise-separable cells, and a pooled linear head.

mod config;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

pub use config::{preset, receptive_field, BlockConfig, Preset, QuartzConfig};

use crate::tape::{Eager, Graph, ParamId};
use crate::tensor::{
    BatchNormConfig, ConvSpec, DropoutKey, Mode, Real, RunningStats, Tensor, TensorError,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("unknown preset {name:?}; available presets: {available}")]
    UnknownPreset { name: String, available: String },
    #[error("input has {got} channels but the model expects {expected}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("window of {got} samples is shorter than the stem receptive field ({needed})")]
    WindowTooShort { needed: usize, got: usize },
    #[error("model state: {0}")]
    State(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// How fresh parameters are filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Init {
    /// He-normal conv/linear weights, zero biases, unit norm scales.
    #[default]
    He,
    /// Every parameter zero. Only useful for tests.
    Zeros,
}

#[derive(Debug, Clone, Copy)]
enum Fill {
    He { fan_in: usize },
    Ones,
    Zeros,
}

#[derive(Debug, Clone)]
pub struct Parameter<T = f32> {
    pub name: String,
    pub value: Tensor<T>,
}

#[derive(Debug, Clone)]
struct ConvLayer {
    spec: ConvSpec,
    weight: ParamId,
    bias: Option<ParamId>,
}

#[derive(Debug, Clone)]
struct NormLayer {
    gamma: ParamId,
    beta: ParamId,
    stats: usize,
}

#[derive(Debug, Clone)]
struct Cell {
    depthwise: ConvLayer,
    pointwise: ConvLayer,
    norm: NormLayer,
    dropout_site: u64,
}

#[derive(Debug, Clone)]
enum Shortcut {
    None,
    Identity,
    Projection { conv: ConvLayer, norm: NormLayer },
}

#[derive(Debug, Clone)]
struct Block {
    cells: Vec<Cell>,
    shortcut: Shortcut,
}

#[derive(Debug, Clone)]
struct Plan {
    stem: ConvLayer,
    stem_norm: NormLayer,
    blocks: Vec<Block>,
    head: ConvLayer,
    linear_weight: ParamId,
    linear_bias: ParamId,
}

#[derive(Default)]
struct PlanBuilder {
    params: Vec<(String, Vec<usize>, Fill)>,
    norms: Vec<(String, usize)>,
    dropout_sites: u64,
}

impl PlanBuilder {
    fn param(&mut self, name: String, shape: Vec<usize>, fill: Fill) -> ParamId {
        self.params.push((name, shape, fill));
        self.params.len() - 1
    }

    fn conv(&mut self, name: &str, spec: ConvSpec, bias: bool) -> ConvLayer {
        let weight = self.param(
            format!("{name}.weight"),
            spec.weight_shape().to_vec(),
            Fill::He {
                fan_in: spec.fan_in(),
            },
        );
        let bias =
            bias.then(|| self.param(format!("{name}.bias"), vec![spec.out_channels], Fill::Zeros));
        ConvLayer { spec, weight, bias }
    }

    fn norm(&mut self, name: &str, channels: usize) -> NormLayer {
        let gamma = self.param(format!("{name}.gamma"), vec![channels], Fill::Ones);
        let beta = self.param(format!("{name}.beta"), vec![channels], Fill::Zeros);
        self.norms.push((name.to_string(), channels));
        NormLayer {
            gamma,
            beta,
            stats: self.norms.len() - 1,
        }
    }

    fn build(mut self, cfg: &QuartzConfig) -> (Plan, Vec<(String, Vec<usize>, Fill)>, Vec<(String, usize)>) {
        let c0 = cfg.stem_channels();
        let stem = self.conv(
            "stem.conv",
            ConvSpec::standard(cfg.in_channels, c0, cfg.stem_kernel).with_same_padding(),
            false,
        );
        let stem_norm = self.norm("stem.bn", c0);

        let mut blocks = Vec::with_capacity(cfg.blocks.len());
        let mut channels = c0;
        for (i, bc) in cfg.blocks.iter().enumerate() {
            let block_in = channels;
            let mut cells = Vec::with_capacity(bc.cells);
            for j in 0..bc.cells {
                let p = format!("blocks.{i}.cells.{j}");
                let depthwise = self.conv(
                    &format!("{p}.dw"),
                    ConvSpec::depthwise(channels, bc.kernel, bc.dilation).with_same_padding(),
                    false,
                );
                let pointwise =
                    self.conv(&format!("{p}.pw"), ConvSpec::pointwise(channels, bc.channels), false);
                let norm = self.norm(&format!("{p}.bn"), bc.channels);
                cells.push(Cell {
                    depthwise,
                    pointwise,
                    norm,
                    dropout_site: self.dropout_sites,
                });
                self.dropout_sites += 1;
                channels = bc.channels;
            }
            let shortcut = match (bc.residual, block_in == bc.channels) {
                (false, _) => Shortcut::None,
                (true, true) => Shortcut::Identity,
                (true, false) => Shortcut::Projection {
                    conv: self.conv(
                        &format!("blocks.{i}.proj"),
                        ConvSpec::pointwise(block_in, bc.channels),
                        false,
                    ),
                    norm: self.norm(&format!("blocks.{i}.proj_bn"), bc.channels),
                },
            };
            blocks.push(Block { cells, shortcut });
        }

        let head = self.conv(
            "head.conv",
            ConvSpec::pointwise(channels, cfg.head_channels),
            true,
        );
        let linear_weight = self.param(
            "head.linear.weight".into(),
            vec![cfg.num_classes, cfg.head_channels],
            Fill::He {
                fan_in: cfg.head_channels,
            },
        );
        let linear_bias =
            self.param("head.linear.bias".into(), vec![cfg.num_classes], Fill::Zeros);
        let plan = Plan {
            stem,
            stem_norm,
            blocks,
            head,
            linear_weight,
            linear_bias,
        };
        (plan, self.params, self.norms)
    }
}

/// Total trainable parameters implied by `config`.
pub fn count_params(config: &QuartzConfig) -> Result<usize, ModelError> {
    config.validate()?;
    let (_, params, _) = PlanBuilder::default().build(config);
    Ok(params
        .iter()
        .map(|(_, shape, _)| shape.iter().product::<usize>())
        .sum())
}

/// Where in a training run a forward pass happens; drives dropout masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardCtx {
    pub mode: Mode,
    pub seed: u64,
    pub step: u64,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        Self {
            mode: Mode::Eval,
            seed: 0,
            step: 0,
        }
    }

    pub fn train(seed: u64, step: u64) -> Self {
        Self {
            mode: Mode::Train,
            seed,
            step,
        }
    }
}

/// A built classifier: configuration, parameters and batch-norm running statistics.
#[derive(Debug, Clone)]
pub struct ModelInstance<T = f32> {
    config: QuartzConfig,
    plan: Plan,
    params: Vec<Parameter<T>>,
    stats: Vec<(String, RunningStats<T>)>,
    pub norm: BatchNormConfig,
}

impl<T: Real> ModelInstance<T> {
    pub fn build(config: QuartzConfig, seed: u64) -> Result<Self, ModelError> {
        Self::build_with(config, seed, Init::He)
    }

    pub fn build_with(config: QuartzConfig, seed: u64, init: Init) -> Result<Self, ModelError> {
        config.validate()?;
        let (plan, specs, norms) = PlanBuilder::default().build(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = specs
            .into_iter()
            .map(|(name, shape, fill)| {
                let value = match (init, fill) {
                    (Init::Zeros, _) | (Init::He, Fill::Zeros) => Tensor::zeros(shape),
                    (Init::He, Fill::Ones) => Tensor::full(shape, T::one()),
                    (Init::He, Fill::He { fan_in }) => {
                        let std = (2.0 / fan_in as f64).sqrt();
                        Tensor::from_fn(shape, |_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            T::from_f64_lossy(z * std)
                        })
                    }
                };
                Parameter { name, value }
            })
            .collect();
        let stats = norms
            .into_iter()
            .map(|(name, c)| (name, RunningStats::new(c)))
            .collect();
        Ok(Self {
            config,
            plan,
            params,
            stats,
            norm: BatchNormConfig::default(),
        })
    }

    pub fn config(&self) -> &QuartzConfig {
        &self.config
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Runs the network on `batch` (`[B, C, W]`) and returns the logits node (`[B, classes]`).
    pub fn forward<G: Graph<T>>(
        &mut self,
        graph: &mut G,
        batch: Tensor<T>,
        ctx: ForwardCtx,
    ) -> Result<G::Node, ModelError> {
        let (_, channels, width) = batch.dims3("model forward")?;
        if channels != self.config.in_channels {
            return Err(ModelError::ChannelMismatch {
                expected: self.config.in_channels,
                got: channels,
            });
        }
        if width < self.config.stem_kernel {
            return Err(ModelError::WindowTooShort {
                needed: self.config.stem_kernel,
                got: width,
            });
        }
        let Self {
            plan,
            params,
            stats,
            norm,
            config,
            ..
        } = self;
        let mut run = Runner {
            graph,
            params,
            stats,
            norm: *norm,
            ctx,
            dropout: config.dropout,
        };
        let x = run.graph.input(batch);
        let mut h = run.conv(&x, &plan.stem)?;
        h = run.norm(&h, &plan.stem_norm)?;
        h = run.graph.relu(&h);

        for block in &plan.blocks {
            let block_in = h.clone();
            let last = block.cells.len() - 1;
            for (j, cell) in block.cells.iter().enumerate() {
                h = run.conv(&h, &cell.depthwise)?;
                h = run.conv(&h, &cell.pointwise)?;
                h = run.norm(&h, &cell.norm)?;
                if j == last {
                    match &block.shortcut {
                        Shortcut::None => {}
                        Shortcut::Identity => h = run.graph.add(&h, &block_in)?,
                        Shortcut::Projection { conv, norm } => {
                            let r = run.conv(&block_in, conv)?;
                            let r = run.norm(&r, norm)?;
                            h = run.graph.add(&h, &r)?;
                        }
                    }
                }
                h = run.graph.relu(&h);
                h = run.dropout(&h, cell.dropout_site)?;
            }
        }

        h = run.conv(&h, &plan.head)?;
        h = run.graph.relu(&h);
        let pooled = run.graph.global_avg_pool(&h)?;
        let w = run.graph.param(plan.linear_weight, &run.params[plan.linear_weight].value);
        let b = run.graph.param(plan.linear_bias, &run.params[plan.linear_bias].value);
        Ok(run.graph.linear(&pooled, &w, &b)?)
    }

    /// Eval-mode logits without touching running statistics.
    pub fn infer(&self, batch: Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let mut scratch = self.clone();
        let mut graph = Eager;
        let logits = scratch.forward(&mut graph, batch, ForwardCtx::eval())?;
        Ok(std::rc::Rc::try_unwrap(logits).unwrap_or_else(|rc| (*rc).clone()))
    }

    /// Parameters followed by running statistics, each under a stable name.
    pub fn state_tensors(&self) -> Vec<(String, Tensor<T>)> {
        let mut out: Vec<(String, Tensor<T>)> = self
            .params
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        for (name, s) in &self.stats {
            let c = s.channels();
            out.push((
                format!("{name}.running_mean"),
                Tensor::new(vec![c], s.mean.clone()).expect("stats shape"),
            ));
            out.push((
                format!("{name}.running_var"),
                Tensor::new(vec![c], s.var.clone()).expect("stats shape"),
            ));
        }
        out
    }

    /// Replaces all state from `tensors`. Validates names and shapes before
    /// writing anything.
    pub fn load_state(&mut self, tensors: &BTreeMap<String, Tensor<T>>) -> Result<(), ModelError> {
        let expected = self.state_tensors();
        if tensors.len() != expected.len() {
            return Err(ModelError::State(format!(
                "expected {} tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (name, t) in &expected {
            let got = tensors
                .get(name)
                .ok_or_else(|| ModelError::State(format!("missing tensor {name}")))?;
            if got.shape() != t.shape() {
                return Err(ModelError::State(format!(
                    "tensor {name}: expected shape {:?}, found {:?}",
                    t.shape(),
                    got.shape()
                )));
            }
        }
        for p in &mut self.params {
            p.value = tensors[&p.name].clone();
        }
        for (name, s) in &mut self.stats {
            s.mean = tensors[&format!("{name}.running_mean")].data().to_vec();
            s.var = tensors[&format!("{name}.running_var")].data().to_vec();
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ModelInstance<U> {
        ModelInstance {
            config: self.config.clone(),
            plan: self.plan.clone(),
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
            stats: self
                .stats
                .iter()
                .map(|(n, s)| {
                    (
                        n.clone(),
                        RunningStats {
                            mean: s.mean.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
                            var: s.var.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
                        },
                    )
                })
                .collect(),
            norm: self.norm,
        }
    }
}

struct Runner<'a, T: Real, G: Graph<T>> {
    graph: &'a mut G,
    params: &'a [Parameter<T>],
    stats: &'a mut [(String, RunningStats<T>)],
    norm: BatchNormConfig,
    ctx: ForwardCtx,
    dropout: f64,
}

impl<T: Real, G: Graph<T>> Runner<'_, T, G> {
    fn conv(&mut self, x: &G::Node, layer: &ConvLayer) -> Result<G::Node, TensorError> {
        let w = self.graph.param(layer.weight, &self.params[layer.weight].value);
        let b = layer
            .bias
            .map(|id| self.graph.param(id, &self.params[id].value));
        self.graph.conv1d(x, &layer.spec, &w, b.as_ref())
    }

    fn norm(&mut self, x: &G::Node, layer: &NormLayer) -> Result<G::Node, TensorError> {
        let g = self.graph.param(layer.gamma, &self.params[layer.gamma].value);
        let b = self.graph.param(layer.beta, &self.params[layer.beta].value);
        let stats = &mut self.stats[layer.stats].1;
        self.graph
            .batch_norm(x, &g, &b, stats, self.ctx.mode, self.norm)
    }

    fn dropout(&mut self, x: &G::Node, site: u64) -> Result<G::Node, TensorError> {
        if self.ctx.mode == Mode::Eval || self.dropout == 0.0 {
            return Ok(x.clone());
        }
        let key = DropoutKey {
            seed: self.ctx.seed,
            layer: site,
            step: self.ctx.step,
        };
        self.graph.dropout(x, self.dropout, key, self.ctx.mode)
    }
}
