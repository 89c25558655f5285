//! Central finite-difference check of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::model::{backward, forward_tensors, softmax_cross_entropy, GraphTensors};
use super::params::{GraphNetWeights, ModelConfig};
use crate::error::Result;
use crate::relations::RelationSet;
use crate::scene_graph::{Edge, EdgeAttr, Node, SceneGraph};
use crate::vocab::{ActionLabel, ObjectClass, RelationKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckConfig {
    pub graphs: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub latent: usize,
    pub steps: usize,
    pub h: f64,
    pub tolerance: f64,
    /// Multiplier on the Glorot bound of the random weight matrices. Full-scale
    /// weights compound over the core steps into logits in the thousands,
    /// where rounding in the loss swamps an h-sized difference.
    pub weight_scale: f64,
    /// Denominator floor of the relative error, so gradients that are zero up
    /// to rounding do not divide by ~0.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            graphs: 100,
            min_nodes: 2,
            max_nodes: 6,
            latent: 8,
            steps: 5,
            h: 1e-5,
            weight_scale: 0.5,
            tolerance: 1e-4,
            floor: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub graphs: usize,
    pub parameters_checked: usize,
    /// Parameters whose ±h perturbation flipped a ReLU, where the derivative is undefined.
    pub kinks_skipped: usize,
    pub max_rel_error: f64,
    pub worst_graph: usize,
    pub worst_parameter: usize,
    pub passed: bool,
}

/// Random valid graph spanning two frames, with spatial and temporal edges.
pub fn random_graph(rng: &mut impl Rng, min_nodes: usize, max_nodes: usize) -> SceneGraph {
    let n = rng.random_range(min_nodes..=max_nodes);
    let mut nodes: Vec<Node> = Vec::with_capacity(n);
    let mut next_id = 0u32;
    while nodes.len() < n {
        let frame = rng.random_range(0..2usize);
        // Reuse an instance from the other frame half of the time.
        let reuse = nodes
            .iter()
            .filter(|m| m.frame != frame && !nodes.iter().any(|o| o.frame == frame && o.instance_id == m.instance_id))
            .map(|m| (m.instance_id, m.class))
            .next();
        let (instance_id, class) = match reuse {
            Some(pair) if rng.random_bool(0.5) => pair,
            _ => {
                next_id += 1;
                (next_id, ObjectClass::from_index(rng.random_range(0..ObjectClass::COUNT)).expect("index in range"))
            }
        };
        nodes.push(Node { class, instance_id, frame, position: [0.0; 3], extra: vec![] });
    }
    let mut edges = Vec::new();
    for s in 0..n {
        for r in 0..n {
            let (a, b) = (&nodes[s], &nodes[r]);
            if s == r {
                continue;
            }
            if a.frame == b.frame && rng.random_bool(0.6) {
                let mut rs = RelationSet::EMPTY;
                while rs.is_empty() {
                    for &k in RelationKind::ALL.iter() {
                        if rng.random_bool(0.2) {
                            rs.insert(k);
                        }
                    }
                }
                edges.push(Edge { attr: EdgeAttr::Spatial(rs), sender: s, receiver: r });
            } else if a.instance_id == b.instance_id && a.frame + 1 == b.frame {
                edges.push(Edge { attr: EdgeAttr::Temporal, sender: s, receiver: r });
            }
        }
    }
    SceneGraph { u: None, nodes, edges }
}

/// Random weights with non-zero biases so bias paths are exercised.
pub fn random_weights(config: ModelConfig, weight_scale: f64, rng: &mut impl Rng) -> GraphNetWeights<f64> {
    let mut w = GraphNetWeights::init(config, rng.random());
    for mut t in w.tensors_mut() {
        if t.ndim() == 1 {
            t.mapv_inplace(|_| rng.random_range(-0.1..0.1));
        } else {
            t.mapv_inplace(|v| v * weight_scale);
        }
    }
    w
}

/// Compare every analytic parameter gradient with a central difference.
pub fn run_gradcheck(cfg: &GradCheckConfig, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = ModelConfig { latent: cfg.latent, steps: cfg.steps, ..Default::default() };
    model.validate()?;
    let mut report = GradCheckReport {
        graphs: cfg.graphs,
        parameters_checked: 0,
        kinks_skipped: 0,
        max_rel_error: 0.0,
        worst_graph: 0,
        worst_parameter: 0,
        passed: true,
    };
    for gi in 0..cfg.graphs {
        let graph = random_graph(&mut rng, cfg.min_nodes, cfg.max_nodes);
        let mut w = random_weights(model, cfg.weight_scale, &mut rng);
        let target = ActionLabel::from_index(rng.random_range(0..ActionLabel::COUNT)).expect("index in range");
        let input = GraphTensors::from_scene_graph(&graph, &model)?;
        let cache = forward_tensors(&w, &input)?;
        let analytic = backward(&w, &cache, target).to_flat();
        let mut flat_index = Vec::with_capacity(analytic.len());
        for (t, tensor) in w.tensors().iter().enumerate() {
            flat_index.extend((0..tensor.len()).map(|j| (t, j)));
        }
        for (i, &a) in analytic.iter().enumerate() {
            let (t, j) = flat_index[i];
            let eval_at = |w: &mut GraphNetWeights<f64>, delta: f64| {
                let mut tensors = w.tensors_mut();
                let cell = &mut tensors[t].as_slice_mut().expect("owned tensors are contiguous")[j];
                let base = *cell;
                *cell = base + delta;
                drop(tensors);
                let out = forward_tensors(w, &input);
                w.tensors_mut()[t].as_slice_mut().expect("owned tensors are contiguous")[j] = base;
                out
            };
            let plus = eval_at(&mut w, cfg.h)?;
            let minus = eval_at(&mut w, -cfg.h)?;
            if !plus.same_activation_pattern(&cache) || !minus.same_activation_pattern(&cache) {
                report.kinks_skipped += 1;
                continue;
            }
            let numeric = (softmax_cross_entropy(plus.logits(), target) - softmax_cross_entropy(minus.logits(), target))
                / (2.0 * cfg.h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
            report.parameters_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_graph = gi;
                report.worst_parameter = i;
            }
        }
    }
    report.passed = report.max_rel_error < cfg.tolerance;
    Ok(report)
}
