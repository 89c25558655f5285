//! Forward and reverse passes of the encode-process-decode graph network.
//!
//! Attributes of a graph are stored as row matrices (one row per edge or
//! node, a single row for the global attribute). Nodes and edges are put in
//! a canonical order before any arithmetic so every sum runs in the same
//! order for isomorphic inputs.

use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};

use super::params::{BlockParams, GraphNetWeights, Mlp, ModelConfig};
use super::real::Real;
use crate::error::{Error, Result};
use crate::scene_graph::{mirror, SceneGraph};
use crate::vocab::ActionLabel;

/// Dense attributes plus topology of one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphTensors<T> {
    pub edges: Array2<T>,
    pub nodes: Array2<T>,
    /// Always a single row.
    pub global: Array2<T>,
    pub senders: Vec<usize>,
    pub receivers: Vec<usize>,
}

impl<T: Real> GraphTensors<T> {
    /// Canonical dense input of an unlabeled scene graph.
    ///
    /// Nodes are ordered by `(frame, instance, class, extra features)` and
    /// edges by `(receiver, sender, slots)`. The global input is all zeros.
    pub fn from_scene_graph(g: &SceneGraph, cfg: &ModelConfig) -> Result<Self> {
        if g.u.is_some() {
            return Err(Error::InvalidArgument(
                "network input must have a zero global attribute; pass the label as the target".into(),
            ));
        }
        let node_width = g.node_width();
        if !g.nodes.is_empty() && node_width != cfg.node_in {
            return Err(Error::Shape(format!("node width {node_width} but model expects {}", cfg.node_in)));
        }
        if cfg.edge_in != crate::vocab::EDGE_WIDTH {
            return Err(Error::Shape(format!("model edge width {} is not 16", cfg.edge_in)));
        }
        let n = g.nodes.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            let (na, nb) = (&g.nodes[a], &g.nodes[b]);
            na.frame
                .cmp(&nb.frame)
                .then(na.instance_id.cmp(&nb.instance_id))
                .then(na.class.cmp(&nb.class))
                .then_with(|| {
                    let ka: Vec<u64> = na.extra.iter().map(|v| v.to_bits()).collect();
                    let kb: Vec<u64> = nb.extra.iter().map(|v| v.to_bits()).collect();
                    ka.cmp(&kb)
                })
        });
        let mut rank = vec![0; n];
        for (new, &old) in order.iter().enumerate() {
            rank[old] = new;
        }
        let mut nodes = Array2::zeros((n, cfg.node_in));
        for (new, &old) in order.iter().enumerate() {
            for (j, v) in g.nodes[old].attribute().into_iter().enumerate() {
                nodes[[new, j]] = T::of(v);
            }
        }
        let mut edges: Vec<(usize, usize, u16)> = g
            .edges
            .iter()
            .map(|e| (rank[e.receiver], rank[e.sender], e.attr.slot_bits()))
            .collect();
        edges.sort_unstable();
        let mut attrs = Array2::zeros((edges.len(), cfg.edge_in));
        for (k, &(_, _, bits)) in edges.iter().enumerate() {
            for j in 0..cfg.edge_in {
                if bits & (1 << j) != 0 {
                    attrs[[k, j]] = T::one();
                }
            }
        }
        Ok(GraphTensors {
            edges: attrs,
            nodes,
            global: Array2::zeros((1, cfg.global_in)),
            senders: edges.iter().map(|e| e.1).collect(),
            receivers: edges.iter().map(|e| e.0).collect(),
        })
    }

    fn check_topology(&self) -> Result<()> {
        let n = self.nodes.nrows();
        if self.senders.len() != self.edges.nrows() || self.receivers.len() != self.edges.nrows() {
            return Err(Error::Shape("edge index lists do not match the edge rows".into()));
        }
        if self.senders.iter().chain(&self.receivers).any(|&i| i >= n) {
            return Err(Error::Shape("edge references a missing node".into()));
        }
        if self.global.nrows() != 1 {
            return Err(Error::Shape("global attribute must be a single row".into()));
        }
        Ok(())
    }
}

fn relu_inplace<T: Real>(a: &mut Array2<T>) {
    a.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

/// Cached activations of one two-layer MLP application.
#[derive(Debug, Clone)]
struct MlpCache<T> {
    /// Layer input; empty when the caller computed the first pre-activation.
    x: Array2<T>,
    h1: Array2<T>,
    h2: Array2<T>,
}

fn mlp_forward<T: Real>(m: &Mlp<T>, x: Array2<T>) -> Result<MlpCache<T>> {
    if x.ncols() != m.l1.w.nrows() {
        return Err(Error::Shape(format!("MLP expects width {}, got {}", m.l1.w.nrows(), x.ncols())));
    }
    let z1 = x.dot(&m.l1.w) + &m.l1.b;
    let mut cache = mlp_from_preact(m, z1);
    cache.x = x;
    Ok(cache)
}

/// Finish an MLP whose first pre-activation (bias included) is already known.
fn mlp_from_preact<T: Real>(m: &Mlp<T>, mut z1: Array2<T>) -> MlpCache<T> {
    relu_inplace(&mut z1);
    let mut h2 = z1.dot(&m.l2.w) + &m.l2.b;
    relu_inplace(&mut h2);
    MlpCache { x: Array2::zeros((0, 0)), h1: z1, h2 }
}

fn relu_grad<T: Real>(d: &mut Array2<T>, h: &Array2<T>) {
    d.zip_mut_with(h, |g, &a| {
        if a <= T::zero() {
            *g = T::zero();
        }
    });
}

/// Back-propagate through an MLP; accumulates every gradient except the
/// first-layer weight when the input was not cached. Returns `dL/dz1`.
fn mlp_backward<T: Real>(m: &Mlp<T>, cache: &MlpCache<T>, mut d_out: Array2<T>, g: &mut Mlp<T>) -> Array2<T> {
    relu_grad(&mut d_out, &cache.h2);
    general_mat_mul(T::one(), &cache.h1.t(), &d_out, T::one(), &mut g.l2.w);
    g.l2.b += &d_out.sum_axis(Axis(0));
    let mut dz1 = d_out.dot(&m.l2.w.t());
    relu_grad(&mut dz1, &cache.h1);
    g.l1.b += &dz1.sum_axis(Axis(0));
    if cache.x.nrows() > 0 || cache.x.ncols() > 0 {
        general_mat_mul(T::one(), &cache.x.t(), &dz1, T::one(), &mut g.l1.w);
    }
    dz1
}

fn broadcast_rows<T: Real>(row: &Array2<T>, n: usize) -> Array2<T> {
    row.broadcast((n, row.ncols())).expect("single row broadcasts").to_owned()
}

fn scatter_rows<T: Real>(src: ArrayView2<T>, index: &[usize], n: usize) -> Array2<T> {
    let mut out = Array2::zeros((n, src.ncols()));
    for (k, &i) in index.iter().enumerate() {
        let mut row = out.row_mut(i);
        row += &src.row(k);
    }
    out
}

#[derive(Debug, Clone)]
struct IndependentCache<T> {
    edge: MlpCache<T>,
    node: MlpCache<T>,
    global: MlpCache<T>,
}

fn independent_forward<T: Real>(p: &BlockParams<T>, g: &GraphTensors<T>) -> Result<IndependentCache<T>> {
    Ok(IndependentCache {
        edge: mlp_forward(&p.edge, g.edges.clone())?,
        node: mlp_forward(&p.node, g.nodes.clone())?,
        global: mlp_forward(&p.global, g.global.clone())?,
    })
}

/// Independent block: each attribute is updated by its own MLP, no aggregation.
pub fn independent_block_forward<T: Real>(p: &BlockParams<T>, g: &GraphTensors<T>) -> Result<GraphTensors<T>> {
    g.check_topology()?;
    let c = independent_forward(p, g)?;
    Ok(GraphTensors {
        edges: c.edge.h2,
        nodes: c.node.h2,
        global: c.global.h2,
        senders: g.senders.clone(),
        receivers: g.receivers.clone(),
    })
}

#[derive(Debug, Clone)]
struct FullCache<T> {
    input: GraphTensors<T>,
    edge: MlpCache<T>,
    node: MlpCache<T>,
    global: MlpCache<T>,
}

impl<T: Real> FullCache<T> {
    fn output(&self) -> GraphTensors<T> {
        GraphTensors {
            edges: self.edge.h2.clone(),
            nodes: self.node.h2.clone(),
            global: self.global.h2.clone(),
            senders: self.input.senders.clone(),
            receivers: self.input.receivers.clone(),
        }
    }
}

fn full_forward<T: Real>(p: &BlockParams<T>, g: GraphTensors<T>) -> Result<FullCache<T>> {
    g.check_topology()?;
    let (de, dv, du) = (g.edges.ncols(), g.nodes.ncols(), g.global.ncols());
    let w1 = &p.edge.l1.w;
    let width = w1.ncols();
    if w1.nrows() != de + 2 * dv + du {
        return Err(Error::Shape(format!(
            "edge MLP expects width {}, got {} + 2*{} + {}",
            w1.nrows(),
            de,
            dv,
            du
        )));
    }
    let n = g.nodes.nrows();

    // First edge layer on concat(e, v_s, v_r, u), split by input block.
    let mut z = g.edges.dot(&w1.slice(s![0..de, ..]));
    let ps = g.nodes.dot(&w1.slice(s![de..de + dv, ..]));
    let pr = g.nodes.dot(&w1.slice(s![de + dv..de + 2 * dv, ..]));
    let pu = g.global.dot(&w1.slice(s![de + 2 * dv.., ..])) + &p.edge.l1.b;
    let pu = pu.row(0);
    for (k, mut row) in z.outer_iter_mut().enumerate() {
        row += &ps.row(g.senders[k]);
        row += &pr.row(g.receivers[k]);
        row += &pu;
    }
    let edge = mlp_from_preact(&p.edge, z);

    let agg = scatter_rows(edge.h2.view(), &g.receivers, n);
    let node_in = concatenate![Axis(1), agg, g.nodes, broadcast_rows(&g.global, n)];
    let node = mlp_forward(&p.node, node_in)?;

    let sum_e = edge.h2.sum_axis(Axis(0)).insert_axis(Axis(0));
    let sum_v = node.h2.sum_axis(Axis(0)).insert_axis(Axis(0));
    let global_in = concatenate![Axis(1), sum_e, sum_v, g.global];
    let global = mlp_forward(&p.global, global_in)?;
    debug_assert_eq!(edge.h2.ncols(), width);
    Ok(FullCache { input: g, edge, node, global })
}

/// Full block: edge update, sum aggregation to receivers, node update, and a
/// global update over the summed edges and nodes.
pub fn full_block_forward<T: Real>(p: &BlockParams<T>, g: &GraphTensors<T>) -> Result<GraphTensors<T>> {
    Ok(full_forward(p, g.clone())?.output())
}

/// Gradients w.r.t. the inputs `(edges, nodes, global)` of a full block.
fn full_backward<T: Real>(
    p: &BlockParams<T>,
    c: &FullCache<T>,
    d_edges: Array2<T>,
    d_nodes: Array2<T>,
    d_global: Array2<T>,
    g: &mut BlockParams<T>,
) -> (Array2<T>, Array2<T>, Array2<T>) {
    let inp = &c.input;
    let (de, dv, du) = (inp.edges.ncols(), inp.nodes.ncols(), inp.global.ncols());
    let n = inp.nodes.nrows();
    let latent = p.edge.l1.w.ncols();

    let dz_g = mlp_backward(&p.global, &c.global, d_global, &mut g.global);
    let dx_g = dz_g.dot(&p.global.l1.w.t());
    let d_sum_e = dx_g.slice(s![.., 0..latent]).to_owned();
    let d_sum_v = dx_g.slice(s![.., latent..2 * latent]).to_owned();
    let mut d_global_in = dx_g.slice(s![.., 2 * latent..]).to_owned();

    let d_node_out = d_nodes + &d_sum_v;
    let dz_n = mlp_backward(&p.node, &c.node, d_node_out, &mut g.node);
    let dx_n = dz_n.dot(&p.node.l1.w.t());
    let d_agg = dx_n.slice(s![.., 0..latent]);
    let mut d_nodes_in = dx_n.slice(s![.., latent..latent + dv]).to_owned();
    d_global_in += &dx_n.slice(s![.., latent + dv..]).sum_axis(Axis(0));

    let mut d_edge_out = d_edges + &d_sum_e;
    for (k, mut row) in d_edge_out.outer_iter_mut().enumerate() {
        row += &d_agg.row(inp.receivers[k]);
    }
    let dz_e = mlp_backward(&p.edge, &c.edge, d_edge_out, &mut g.edge);

    let w1 = &p.edge.l1.w;
    let gw1 = &mut g.edge.l1.w;
    let by_sender = scatter_rows(dz_e.view(), &inp.senders, n);
    let by_receiver = scatter_rows(dz_e.view(), &inp.receivers, n);
    let col_sum = dz_e.sum_axis(Axis(0)).insert_axis(Axis(0));
    general_mat_mul(T::one(), &inp.edges.t(), &dz_e, T::one(), &mut gw1.slice_mut(s![0..de, ..]));
    general_mat_mul(T::one(), &inp.nodes.t(), &by_sender, T::one(), &mut gw1.slice_mut(s![de..de + dv, ..]));
    general_mat_mul(
        T::one(),
        &inp.nodes.t(),
        &by_receiver,
        T::one(),
        &mut gw1.slice_mut(s![de + dv..de + 2 * dv, ..]),
    );
    general_mat_mul(T::one(), &inp.global.t(), &col_sum, T::one(), &mut gw1.slice_mut(s![de + 2 * dv.., ..]));

    let d_edges_in = dz_e.dot(&w1.slice(s![0..de, ..]).t());
    general_mat_mul(T::one(), &by_sender, &w1.slice(s![de..de + dv, ..]).t(), T::one(), &mut d_nodes_in);
    general_mat_mul(
        T::one(),
        &by_receiver,
        &w1.slice(s![de + dv..de + 2 * dv, ..]).t(),
        T::one(),
        &mut d_nodes_in,
    );
    general_mat_mul(T::one(), &col_sum, &w1.slice(s![de + 2 * dv.., ..]).t(), T::one(), &mut d_global_in);
    debug_assert_eq!(d_global_in.ncols(), du);
    (d_edges_in, d_nodes_in, d_global_in)
}

/// Everything the reverse pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    encoder: IndependentCache<T>,
    core: Vec<FullCache<T>>,
    decoder: IndependentCache<T>,
    logits: Array1<T>,
}

impl<T: Real> ForwardCache<T> {
    pub fn logits(&self) -> &Array1<T> {
        &self.logits
    }

    /// Whether every hidden activation has the same sign as in `other`, to
    /// detect ReLU kinks between evaluations.
    pub fn same_activation_pattern(&self, other: &ForwardCache<T>) -> bool {
        fn same<T: Real>(a: &MlpCache<T>, b: &MlpCache<T>) -> bool {
            let signs = |x: &Array2<T>, y: &Array2<T>| {
                x.len() == y.len() && x.iter().zip(y.iter()).all(|(&p, &q)| (p > T::zero()) == (q > T::zero()))
            };
            signs(&a.h1, &b.h1) && signs(&a.h2, &b.h2)
        }
        let (a, b) = (self.mlp_caches(), other.mlp_caches());
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| same(x, y))
    }

    fn mlp_caches(&self) -> Vec<&MlpCache<T>> {
        let mut v = Vec::with_capacity(3 * (2 + self.core.len()));
        for block in [&self.encoder, &self.decoder] {
            v.extend([&block.edge, &block.node, &block.global]);
        }
        for step in &self.core {
            v.extend([&step.edge, &step.node, &step.global]);
        }
        v
    }

    /// Decoded graph (edge and node attributes are computed but unused).
    pub fn decoded(&self) -> (&Array2<T>, &Array2<T>, &Array2<T>) {
        (&self.decoder.edge.h2, &self.decoder.node.h2, &self.decoder.global.h2)
    }
}

fn concat_latent<T: Real>(a: &GraphTensors<T>, b: &GraphTensors<T>) -> GraphTensors<T> {
    GraphTensors {
        edges: concatenate![Axis(1), a.edges, b.edges],
        nodes: concatenate![Axis(1), a.nodes, b.nodes],
        global: concatenate![Axis(1), a.global, b.global],
        senders: a.senders.clone(),
        receivers: a.receivers.clone(),
    }
}

/// Encoder, `steps` core applications on `concat(latent0, latent)`, decoder
/// and the linear output head on the decoded global attribute.
pub fn forward_tensors<T: Real>(w: &GraphNetWeights<T>, input: &GraphTensors<T>) -> Result<ForwardCache<T>> {
    input.check_topology()?;
    let encoder = independent_forward(&w.encoder, input)?;
    let latent0 = GraphTensors {
        edges: encoder.edge.h2.clone(),
        nodes: encoder.node.h2.clone(),
        global: encoder.global.h2.clone(),
        senders: input.senders.clone(),
        receivers: input.receivers.clone(),
    };
    let mut latent = latent0.clone();
    let mut core = Vec::with_capacity(w.config.steps);
    for _ in 0..w.config.steps {
        let step = full_forward(&w.core, concat_latent(&latent0, &latent))?;
        latent = step.output();
        core.push(step);
    }
    let decoder = independent_forward(&w.decoder, &latent)?;
    let logits = decoder.global.h2.dot(&w.head.w).row(0).to_owned() + &w.head.b;
    Ok(ForwardCache { encoder, core, decoder, logits })
}

pub fn forward<T: Real>(w: &GraphNetWeights<T>, g: &SceneGraph) -> Result<ForwardCache<T>> {
    let input = GraphTensors::from_scene_graph(g, &w.config)?;
    forward_tensors(w, &input)
}

/// Encode-process-decode forward pass returning the action logits.
pub fn encode_process_decode_forward<T: Real>(w: &GraphNetWeights<T>, g: &SceneGraph) -> Result<(Array1<T>, ForwardCache<T>)> {
    let cache = forward(w, g)?;
    Ok((cache.logits.clone(), cache))
}

pub fn softmax<T: Real>(logits: &Array1<T>) -> Array1<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let e = logits.mapv(|v| (v - m).exp());
    let total: T = e.iter().copied().sum();
    e / total
}

pub fn cross_entropy<T: Real>(probs: &Array1<T>, target: ActionLabel) -> T {
    -probs[target.index()].ln()
}

/// Numerically stable `-log softmax(logits)[target]`.
pub fn softmax_cross_entropy<T: Real>(logits: &Array1<T>, target: ActionLabel) -> T {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = m + logits.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
    lse - logits[target.index()]
}

/// Add `scale * dLoss/dParams` into `grads` and return the loss.
pub fn accumulate_gradients<T: Real>(
    w: &GraphNetWeights<T>,
    cache: &ForwardCache<T>,
    target: ActionLabel,
    scale: T,
    grads: &mut GraphNetWeights<T>,
) -> T {
    let loss = softmax_cross_entropy(&cache.logits, target);
    let mut d_logits = softmax(&cache.logits);
    d_logits[target.index()] = d_logits[target.index()] - T::one();
    d_logits.mapv_inplace(|v| v * scale);
    let d_logits = d_logits.insert_axis(Axis(0));

    let dec_u = &cache.decoder.global.h2;
    general_mat_mul(T::one(), &dec_u.t(), &d_logits, T::one(), &mut grads.head.w);
    grads.head.b += &d_logits.row(0);
    let d_dec_u = d_logits.dot(&w.head.w.t());

    // Decoded edges and nodes do not reach the loss, so only the global path carries gradient.
    let dz = mlp_backward(&w.decoder.global, &cache.decoder.global, d_dec_u, &mut grads.decoder.global);
    let mut d_global = dz.dot(&w.decoder.global.l1.w.t());
    let first = &cache.encoder;
    let l = w.config.latent;
    let mut d_edges: Array2<T> = Array2::zeros(first.edge.h2.raw_dim());
    let mut d_nodes: Array2<T> = Array2::zeros(first.node.h2.raw_dim());
    let mut d0_edges: Array2<T> = Array2::zeros(first.edge.h2.raw_dim());
    let mut d0_nodes: Array2<T> = Array2::zeros(first.node.h2.raw_dim());
    let mut d0_global: Array2<T> = Array2::zeros(first.global.h2.raw_dim());
    for step in cache.core.iter().rev() {
        let (de, dv, du) = full_backward(&w.core, step, d_edges, d_nodes, d_global, &mut grads.core);
        d0_edges += &de.slice(s![.., 0..l]);
        d0_nodes += &dv.slice(s![.., 0..l]);
        d0_global += &du.slice(s![.., 0..l]);
        d_edges = de.slice(s![.., l..]).to_owned();
        d_nodes = dv.slice(s![.., l..]).to_owned();
        d_global = du.slice(s![.., l..]).to_owned();
    }
    // The first core step reads latent0 on both halves.
    d0_edges += &d_edges;
    d0_nodes += &d_nodes;
    d0_global += &d_global;

    mlp_backward(&w.encoder.edge, &cache.encoder.edge, d0_edges, &mut grads.encoder.edge);
    mlp_backward(&w.encoder.node, &cache.encoder.node, d0_nodes, &mut grads.encoder.node);
    mlp_backward(&w.encoder.global, &cache.encoder.global, d0_global, &mut grads.encoder.global);
    loss
}

/// Exact gradient of the cross-entropy loss w.r.t. every parameter.
pub fn backward<T: Real>(w: &GraphNetWeights<T>, cache: &ForwardCache<T>, target: ActionLabel) -> GraphNetWeights<T> {
    let mut grads = GraphNetWeights::zeros(w.config);
    accumulate_gradients(w, cache, target, T::one(), &mut grads);
    grads
}

/// Action distributions for the right hand (graph as is) and the left hand
/// (mirrored graph).
pub fn predict_bimanual<T: Real>(g: &SceneGraph, w: &GraphNetWeights<T>) -> Result<(Array1<T>, Array1<T>)> {
    let right = softmax(forward(w, g)?.logits());
    let left = softmax(forward(w, &mirror(g))?.logits());
    Ok((right, left))
}

/// Right-hand distribution only.
pub fn predict<T: Real>(g: &SceneGraph, w: &GraphNetWeights<T>) -> Result<Array1<T>> {
    Ok(softmax(forward(w, g)?.logits()))
}
