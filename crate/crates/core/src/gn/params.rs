//! Parameter containers for the encode-process-decode network.
//!
//! The same structs double as gradient accumulators.

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::real::Real;
use crate::error::{Error, Result};
use crate::vocab::{ActionLabel, ObjectClass, EDGE_WIDTH};

/// Architecture hyperparameters; serialized into the weight manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub edge_in: usize,
    pub node_in: usize,
    pub global_in: usize,
    pub latent: usize,
    pub steps: usize,
    pub outputs: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            edge_in: EDGE_WIDTH,
            node_in: ObjectClass::COUNT,
            global_in: ActionLabel::COUNT,
            latent: 256,
            steps: 10,
            outputs: ActionLabel::COUNT,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("edge_in", self.edge_in),
            ("node_in", self.node_in),
            ("global_in", self.global_in),
            ("latent", self.latent),
            ("steps", self.steps),
            ("outputs", self.outputs),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be >= 1")));
            }
        }
        Ok(())
    }

    /// Expected `(name, shape)` of every tensor, in serialization order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let l = self.latent;
        let mlps = [
            ("encoder.edge", self.edge_in),
            ("encoder.node", self.node_in),
            ("encoder.global", self.global_in),
            ("core.edge", 8 * l),
            ("core.node", 5 * l),
            ("core.global", 4 * l),
            ("decoder.edge", l),
            ("decoder.node", l),
            ("decoder.global", l),
        ];
        let mut out = Vec::new();
        for (name, fan_in) in mlps {
            out.push((format!("{name}.l1.w"), vec![fan_in, l]));
            out.push((format!("{name}.l1.b"), vec![l]));
            out.push((format!("{name}.l2.w"), vec![l, l]));
            out.push((format!("{name}.l2.b"), vec![l]));
        }
        out.push(("head.w".into(), vec![l, self.outputs]));
        out.push(("head.b".into(), vec![self.outputs]));
        out
    }
}

/// Affine map `x W + b` with `W` stored as `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub w: Array2<T>,
    pub b: Array1<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense { w: Array2::zeros((fan_in, fan_out)), b: Array1::zeros(fan_out) }
    }

    /// Glorot-uniform weights, zero biases.
    fn glorot(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Array2::from_shape_simple_fn((fan_in, fan_out), || T::of(rng.random_range(-limit..limit)));
        Dense { w, b: Array1::zeros(fan_out) }
    }
}

/// Two ReLU layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub l1: Dense<T>,
    pub l2: Dense<T>,
}

impl<T: Real> Mlp<T> {
    pub fn zeros(fan_in: usize, width: usize) -> Self {
        Mlp { l1: Dense::zeros(fan_in, width), l2: Dense::zeros(width, width) }
    }

    fn glorot(fan_in: usize, width: usize, rng: &mut ChaCha8Rng) -> Self {
        let l1 = Dense::glorot(fan_in, width, rng);
        let l2 = Dense::glorot(width, width, rng);
        Mlp { l1, l2 }
    }
}

/// Edge, node and global update functions of one graph-network block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T> {
    pub edge: Mlp<T>,
    pub node: Mlp<T>,
    pub global: Mlp<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNetWeights<T> {
    pub config: ModelConfig,
    pub encoder: BlockParams<T>,
    pub core: BlockParams<T>,
    pub decoder: BlockParams<T>,
    pub head: Dense<T>,
}

impl<T: Real> GraphNetWeights<T> {
    pub fn zeros(config: ModelConfig) -> Self {
        let l = config.latent;
        GraphNetWeights {
            config,
            encoder: BlockParams {
                edge: Mlp::zeros(config.edge_in, l),
                node: Mlp::zeros(config.node_in, l),
                global: Mlp::zeros(config.global_in, l),
            },
            core: BlockParams {
                edge: Mlp::zeros(8 * l, l),
                node: Mlp::zeros(5 * l, l),
                global: Mlp::zeros(4 * l, l),
            },
            decoder: BlockParams { edge: Mlp::zeros(l, l), node: Mlp::zeros(l, l), global: Mlp::zeros(l, l) },
            head: Dense::zeros(l, config.outputs),
        }
    }

    /// Seeded initialization: Glorot-uniform matrices, zero biases.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = config.latent;
        let encoder = BlockParams {
            edge: Mlp::glorot(config.edge_in, l, &mut rng),
            node: Mlp::glorot(config.node_in, l, &mut rng),
            global: Mlp::glorot(config.global_in, l, &mut rng),
        };
        let core = BlockParams {
            edge: Mlp::glorot(8 * l, l, &mut rng),
            node: Mlp::glorot(5 * l, l, &mut rng),
            global: Mlp::glorot(4 * l, l, &mut rng),
        };
        let decoder = BlockParams {
            edge: Mlp::glorot(l, l, &mut rng),
            node: Mlp::glorot(l, l, &mut rng),
            global: Mlp::glorot(l, l, &mut rng),
        };
        let head = Dense::glorot(l, config.outputs, &mut rng);
        GraphNetWeights { config, encoder, core, decoder, head }
    }

    /// Glorot initialization with the core block's matrices multiplied by
    /// `core_gain`. The core is applied `steps` times on sum-aggregated
    /// inputs, so unit gain makes the logits explode on graphs with a few
    /// hundred edges.
    pub fn init_with_core_gain(config: ModelConfig, seed: u64, core_gain: f64) -> Self {
        let mut w = Self::init(config, seed);
        let g = T::of(core_gain);
        for m in [&mut w.core.edge, &mut w.core.node, &mut w.core.global] {
            m.l1.w.mapv_inplace(|v| v * g);
            m.l2.w.mapv_inplace(|v| v * g);
        }
        w
    }

    fn mlps(&self) -> [&Mlp<T>; 9] {
        [
            &self.encoder.edge,
            &self.encoder.node,
            &self.encoder.global,
            &self.core.edge,
            &self.core.node,
            &self.core.global,
            &self.decoder.edge,
            &self.decoder.node,
            &self.decoder.global,
        ]
    }

    /// All tensors in serialization order (names match [`ModelConfig::tensor_shapes`]).
    pub fn tensors(&self) -> Vec<ArrayViewD<'_, T>> {
        let mut out = Vec::with_capacity(38);
        for m in self.mlps() {
            out.push(m.l1.w.view().into_dyn());
            out.push(m.l1.b.view().into_dyn());
            out.push(m.l2.w.view().into_dyn());
            out.push(m.l2.b.view().into_dyn());
        }
        out.push(self.head.w.view().into_dyn());
        out.push(self.head.b.view().into_dyn());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, T>> {
        let mut out = Vec::with_capacity(38);
        let GraphNetWeights { encoder, core, decoder, head, .. } = self;
        for block in [encoder, core, decoder] {
            let BlockParams { edge, node, global } = block;
            for m in [edge, node, global] {
                out.push(m.l1.w.view_mut().into_dyn());
                out.push(m.l1.b.view_mut().into_dyn());
                out.push(m.l2.w.view_mut().into_dyn());
                out.push(m.l2.b.view_mut().into_dyn());
            }
        }
        out.push(head.w.view_mut().into_dyn());
        out.push(head.b.view_mut().into_dyn());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Flat copy of all parameters in serialization order.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for t in self.tensors() {
            out.extend(t.iter().copied());
        }
        out
    }

    pub fn set_flat(&mut self, values: &[T]) {
        let mut it = values.iter().copied();
        for mut t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v = it.next().expect("flat vector matches parameter count");
            }
        }
    }

    pub fn fill_zero(&mut self) {
        for mut t in self.tensors_mut() {
            t.fill(T::zero());
        }
    }

    /// `self += other`.
    pub fn add_assign(&mut self, other: &GraphNetWeights<T>) {
        for (mut a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a += &b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for mut t in self.tensors_mut() {
            t.mapv_inplace(|v| v * s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Convert to another element type.
    pub fn cast<U: Real>(&self) -> GraphNetWeights<U> {
        let mut out = GraphNetWeights::<U>::zeros(self.config);
        let flat: Vec<U> = self.to_flat().into_iter().map(|v| U::of(v.as_f64())).collect();
        out.set_flat(&flat);
        out
    }
}
