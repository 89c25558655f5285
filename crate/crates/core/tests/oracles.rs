//! Independent reference implementations checked against the library.

use bimanual_core::evaluation::AblationMode;
use bimanual_core::geometry::Aabb;
use bimanual_core::gn::gradcheck::{random_graph, random_weights};
use bimanual_core::gn::io::{decode_weights, encode_weights};
use bimanual_core::gn::{forward, GraphNetWeights, Mlp, ModelConfig};
use bimanual_core::pipeline::GraphRecording;
use bimanual_core::scene_graph::{Node, SceneGraph};
use bimanual_core::tracking::{Detection, SmoothingConfig, Tracker};
use bimanual_core::training::{adam_step, batch_gradient, train, Dataset, OptimizerState, TrainingConfig};
use bimanual_core::vocab::{ActionLabel, ObjectClass};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Naive forward pass: plain loops, explicit concatenation.
// ---------------------------------------------------------------------------

fn dense(w: &ndarray::Array2<f64>, b: &ndarray::Array1<f64>, x: &[f64], relu: bool) -> Vec<f64> {
    assert_eq!(x.len(), w.nrows());
    (0..w.ncols())
        .map(|j| {
            let mut s = b[j];
            for (i, xi) in x.iter().enumerate() {
                s += xi * w[[i, j]];
            }
            if relu {
                s.max(0.0)
            } else {
                s
            }
        })
        .collect()
}

fn mlp(m: &Mlp<f64>, x: &[f64]) -> Vec<f64> {
    let h = dense(&m.l1.w, &m.l1.b, x, true);
    dense(&m.l2.w, &m.l2.b, &h, true)
}

fn cat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

fn naive_logits(w: &GraphNetWeights<f64>, g: &SceneGraph) -> Vec<f64> {
    let l = w.config.latent;
    let e_in: Vec<Vec<f64>> = g.edges.iter().map(|e| e.attr.encode().to_vec()).collect();
    let v_in: Vec<Vec<f64>> = g.nodes.iter().map(|n| n.attribute()).collect();
    let u_in = vec![0.0; ActionLabel::COUNT];

    let e0: Vec<Vec<f64>> = e_in.iter().map(|x| mlp(&w.encoder.edge, x)).collect();
    let v0: Vec<Vec<f64>> = v_in.iter().map(|x| mlp(&w.encoder.node, x)).collect();
    let u0 = mlp(&w.encoder.global, &u_in);
    let (mut e, mut v, mut u) = (e0.clone(), v0.clone(), u0.clone());
    for _ in 0..w.config.steps {
        let e_new: Vec<Vec<f64>> = g
            .edges
            .iter()
            .enumerate()
            .map(|(k, edge)| {
                let (s, r) = (edge.sender, edge.receiver);
                mlp(&w.core.edge, &cat(&[&e0[k], &e[k], &v0[s], &v[s], &v0[r], &v[r], &u0, &u]))
            })
            .collect();
        let v_new: Vec<Vec<f64>> = (0..g.nodes.len())
            .map(|i| {
                let mut agg = vec![0.0; l];
                for (k, edge) in g.edges.iter().enumerate() {
                    if edge.receiver == i {
                        add_into(&mut agg, &e_new[k]);
                    }
                }
                mlp(&w.core.node, &cat(&[&agg, &v0[i], &v[i], &u0, &u]))
            })
            .collect();
        let mut sum_e = vec![0.0; l];
        e_new.iter().for_each(|x| add_into(&mut sum_e, x));
        let mut sum_v = vec![0.0; l];
        v_new.iter().for_each(|x| add_into(&mut sum_v, x));
        u = mlp(&w.core.global, &cat(&[&sum_e, &sum_v, &u0, &u]));
        e = e_new;
        v = v_new;
    }
    let dec_u = mlp(&w.decoder.global, &u);
    dense(&w.head.w, &w.head.b, &dec_u, false)
}

#[test]
fn forward_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..20 {
        let g = random_graph(&mut rng, 1, 7);
        let cfg = ModelConfig { latent: 6, steps: 1 + trial % 4, ..Default::default() };
        let w = random_weights(cfg, 1.0, &mut rng);
        let got = forward(&w, &g).unwrap();
        let want = naive_logits(&w, &g);
        for (a, b) in got.logits().iter().zip(&want) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "trial {trial}: {a} vs {b}");
        }
    }
}

#[test]
fn serialization_round_trip_preserves_logits_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = ModelConfig { latent: 8, steps: 3, ..Default::default() };
    let w = random_weights(cfg, 1.0, &mut rng);
    let back: GraphNetWeights<f64> = decode_weights(&encode_weights(&w), Some(&cfg)).unwrap();
    for _ in 0..10 {
        let g = random_graph(&mut rng, 2, 6);
        let a = forward(&w, &g).unwrap();
        let b = forward(&back, &g).unwrap();
        assert_eq!(a.logits().to_vec(), b.logits().to_vec());
    }
}

// ---------------------------------------------------------------------------
// Tracking: greedy association against an exhaustive assignment search.
// ---------------------------------------------------------------------------

fn best_assignment(tracks: &[[f64; 3]], dets: &[[f64; 3]]) -> Vec<usize> {
    // Square problems only: try every permutation.
    fn rec(i: usize, used: &mut Vec<bool>, cur: &mut Vec<usize>, cost: f64, best: &mut (f64, Vec<usize>), t: &[[f64; 3]], d: &[[f64; 3]]) {
        if i == d.len() {
            if cost < best.0 {
                *best = (cost, cur.clone());
            }
            return;
        }
        for j in 0..t.len() {
            if !used[j] {
                used[j] = true;
                cur.push(j);
                let c = bimanual_core::geometry::distance(t[j], d[i]);
                rec(i + 1, used, cur, cost + c, best, t, d);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (f64::INFINITY, Vec::new());
    rec(0, &mut vec![false; tracks.len()], &mut Vec::new(), 0.0, &mut best, tracks, dets);
    best.1
}

#[test]
fn greedy_association_matches_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = SmoothingConfig::default();
    for _ in 0..200 {
        let n = rng.random_range(1..=5);
        // Well separated tracks, detections jittered by less than a quarter of the spacing.
        let mut xs: Vec<f64> = (0..n).map(|i| i as f64 * 400.0 + rng.random_range(0.0..50.0)).collect();
        xs.sort_by(f64::total_cmp);
        let tracks: Vec<[f64; 3]> = xs.iter().map(|&x| [x, 0.0, 0.0]).collect();
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let dets: Vec<[f64; 3]> = order
            .iter()
            .map(|&i| [tracks[i][0] + rng.random_range(-90.0..90.0), rng.random_range(-50.0..50.0), 0.0])
            .collect();
        let mut tr = Tracker::new(cfg.clone(), 30.0, 8);
        let first: Vec<Detection> =
            tracks.iter().map(|&c| Detection::new(ObjectClass::Cup, Aabb::from_center_size(c, [40.0; 3]))).collect();
        let ids0 = tr.associate(&first, 0).unwrap();
        let second: Vec<Detection> =
            dets.iter().map(|&c| Detection::new(ObjectClass::Cup, Aabb::from_center_size(c, [40.0; 3]))).collect();
        let ids1 = tr.associate(&second, 1).unwrap();
        let oracle = best_assignment(&tracks, &dets);
        let expected: Vec<u32> = oracle.iter().map(|&t| ids0[t]).collect();
        assert_eq!(ids1, expected);
    }
}

#[test]
fn smoothing_matches_hand_computed_weights() {
    // 30 fps and three sigma of 0.25 s: sigma is 2.5 frames, support 7 frames.
    let history = [5.0, -3.0, 8.0, 1.0, 0.0, 12.0, 0.0, 4.0, 0.0, 12.0, 0.0];
    let mut tr = Tracker::new(SmoothingConfig { gate_distance: 1e6, ..Default::default() }, 30.0, 8);
    let mut out = None;
    for (f, &x) in history.iter().enumerate() {
        let b = Aabb::new([x, 0.0, 0.0], [x + 100.0, 10.0, 10.0]).unwrap();
        out = Some(tr.step(&[Detection::new(ObjectClass::Cup, b)], f).unwrap()[0].bbox);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..=7 {
        let w = (-(k as f64).powi(2) / (2.0 * 2.5 * 2.5)).exp();
        num += w * history[history.len() - 1 - k];
        den += w;
    }
    assert!((out.unwrap().min[0] - num / den).abs() < 1e-9);
}

// ---------------------------------------------------------------------------
// Optimizer and training.
// ---------------------------------------------------------------------------

#[test]
fn adam_matches_three_step_reference() {
    let cfg = ModelConfig { latent: 2, steps: 1, ..Default::default() };
    let mut w = GraphNetWeights::<f64>::zeros(cfg);
    w.head.b[0] = 0.5;
    let mut g = GraphNetWeights::<f64>::zeros(cfg);
    let mut st = OptimizerState::new(cfg, 0.001);
    let grads = [0.3, -0.2, 0.1];
    // Reference: the textbook update written out step by step.
    let (mut p, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
    for (t, &gr) in grads.iter().enumerate() {
        let t = t as i32 + 1;
        m = 0.9 * m + 0.1 * gr;
        v = 0.999 * v + 0.001 * gr * gr;
        let mh = m / (1.0 - 0.9f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        p -= 0.001 * mh / (vh.sqrt() + 1e-8);

        g.head.b[0] = gr;
        adam_step(&mut w, &g, &mut st).unwrap();
        assert!((w.head.b[0] - p).abs() < 1e-15, "step {t}: {} vs {p}", w.head.b[0]);
    }
    assert_eq!(st.step, 3);
}

fn node(class: ObjectClass, id: u32, frame: usize) -> Node {
    Node { class, instance_id: id, frame, position: [0.0; 3], extra: vec![] }
}

/// Two classes told apart by which object shares the frame with the hand.
fn separable_recordings() -> Vec<GraphRecording> {
    let mut out = Vec::new();
    for (i, (object, label)) in [(ObjectClass::Cup, ActionLabel::Pour), (ObjectClass::Saw, ActionLabel::Saw)]
        .into_iter()
        .cycle()
        .take(6)
        .enumerate()
    {
        let graphs = (0..12)
            .map(|t| SceneGraph {
                u: None,
                nodes: vec![node(ObjectClass::RightHand, 0, t), node(object, 1, t), node(ObjectClass::LeftHand, 2, t)],
                edges: vec![],
            })
            .collect();
        out.push(GraphRecording {
            id: format!("s0-x-r{i}"),
            subject: 0,
            task: "x".into(),
            repetition: i as u32,
            graphs,
            right: vec![label; 12],
            left: vec![label; 12],
        });
    }
    out
}

#[test]
fn separable_two_class_set_is_learned() {
    let recs = separable_recordings();
    let data = Dataset::new(&recs, 3, AblationMode::Full).unwrap();
    let train_keys = data.keys(&[0, 1, 2, 3], 1);
    let val_keys = data.keys(&[4, 5], 1);
    let model = ModelConfig { latent: 8, steps: 2, ..Default::default() };
    let cfg = TrainingConfig { batch_size: 16, max_epochs: 20, patience: 20, window: 3, lr: 0.01, ..Default::default() };
    let out = train::<f64>(&data, &train_keys, &val_keys, model, &cfg, 4).unwrap();
    assert!(out.best_val_macro_f1 >= 0.99, "{:?}", out.log);
    let logged = out.log.iter().find(|e| e.epoch == out.best_epoch).unwrap();
    assert_eq!(logged.val_macro_f1, out.best_val_macro_f1);
    assert!(out.log.iter().all(|e| e.val_macro_f1 <= out.best_val_macro_f1));

    let again = train::<f64>(&data, &train_keys, &val_keys, model, &cfg, 4).unwrap();
    assert_eq!(again.weights, out.weights);
}

#[test]
fn repeated_batch_loss_is_nearly_monotone() {
    let recs = separable_recordings();
    let data = Dataset::new(&recs, 3, AblationMode::Full).unwrap();
    let batch = data.keys(&[0, 1, 2, 3], 2);
    let model = ModelConfig { latent: 8, steps: 2, ..Default::default() };
    let mut w = GraphNetWeights::<f64>::init_with_core_gain(model, 9, 0.5);
    let mut st = OptimizerState::new(model, 0.001);
    let mut losses = Vec::new();
    for _ in 0..50 {
        let (g, loss) = batch_gradient(&w, &data, &batch).unwrap();
        losses.push(loss);
        adam_step(&mut w, &g, &mut st).unwrap();
    }
    let violations = losses.windows(2).filter(|p| p[1] > p[0]).count();
    assert!(violations <= 5, "{violations} increases: {losses:?}");
    assert!(losses[49] < losses[0]);
}
