//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
//!
//! Criteria 4 and 5 train four leave-one-subject-out models on the shipped
//! synthetic suite with the desk preset; expect the whole run to take the
//! better part of an hour on one core.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use bimanual_cli::commands::{cmd_eval, cmd_gen, cmd_loso, cmd_train, EvalSource, WEIGHTS_FILE};
use bimanual_cli::config::RunConfig;
use bimanual_core::evaluation::{score, score_labels, AblationMode, Distribution};
use bimanual_core::geometry::Aabb;
use bimanual_core::gn::gradcheck::{random_graph, random_weights, run_gradcheck, GradCheckConfig};
use bimanual_core::gn::{forward, ModelConfig};
use bimanual_core::relations::{
    evaluate_dynamic_relations, evaluate_relations, evaluate_static_relations, RelationConfig, RelationSet,
};
use bimanual_core::scene_graph::{build_frame_graph, mirror, temporal_concat, Edge, SceneGraph};
use bimanual_core::tracking::{Detection, SmoothingConfig, Tracker};
use bimanual_core::vocab::{ActionLabel, ObjectClass, RelationKind};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ----------------------------------------------------------------------------
// 1. Gradient oracle
// ----------------------------------------------------------------------------

fn gradient_oracle() -> Outcome {
    let cfg = GradCheckConfig::default();
    let t = Instant::now();
    let report = run_gradcheck(&cfg, 2024).expect("gradcheck runs");
    let secs = t.elapsed().as_secs_f64();
    let pass = report.graphs == 100 && cfg.h == 1e-5 && report.max_rel_error < 1e-4 && secs < 120.0;
    outcome(
        pass,
        format!(
            "{} graphs of {}-{} nodes, latent {}, {} core steps, h={:e}, {} parameter checks, {} kinks skipped, max_rel_error={:.3e} (< 1e-4), {:.1} s (< 120 s)",
            report.graphs,
            cfg.min_nodes,
            cfg.max_nodes,
            cfg.latent,
            cfg.steps,
            cfg.h,
            report.parameters_checked,
            report.kinks_skipped,
            report.max_rel_error,
            secs
        ),
    )
}

// ----------------------------------------------------------------------------
// 2. Structural invariants
// ----------------------------------------------------------------------------

fn random_box(rng: &mut impl Rng) -> Aabb {
    let lo: [f64; 3] = std::array::from_fn(|_| rng.random_range(-100..100) as f64);
    let size: [f64; 3] = std::array::from_fn(|_| rng.random_range(0..80) as f64);
    Aabb::new(lo, [lo[0] + size[0], lo[1] + size[1], lo[2] + size[2]]).unwrap()
}

fn random_history(rng: &mut impl Rng, len: usize) -> Vec<Aabb> {
    let b = random_box(rng);
    let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-12..=12) as f64);
    (0..len).map(|i| b.translated([v[0] * i as f64, v[1] * i as f64, v[2] * i as f64])).collect()
}

fn permuted(g: &SceneGraph, rng: &mut impl Rng) -> SceneGraph {
    let mut perm: Vec<usize> = (0..g.nodes.len()).collect();
    perm.shuffle(rng);
    let mut nodes = g.nodes.clone();
    for (i, n) in g.nodes.iter().enumerate() {
        nodes[perm[i]] = n.clone();
    }
    let mut edges: Vec<Edge> =
        g.edges.iter().map(|e| Edge { attr: e.attr, sender: perm[e.sender], receiver: perm[e.receiver] }).collect();
    edges.shuffle(rng);
    SceneGraph { u: g.u, nodes, edges }
}

fn structural_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut failures = Vec::new();

    let mirror_cases = 10_000;
    let mirror_bad = (0..mirror_cases)
        .filter(|_| {
            let g = random_graph(&mut rng, 1, 10);
            mirror(&mirror(&g)) != g
        })
        .count();
    if mirror_bad > 0 {
        failures.push(format!("mirror {mirror_bad}"));
    }

    let concat_cases = 2_000;
    let mut concat_bad = 0;
    for _ in 0..concat_cases {
        let len = rng.random_range(1..=10);
        let frames: Vec<SceneGraph> = (0..len)
            .map(|t| {
                let mut g = random_graph(&mut rng, 1, 6);
                g.edges.retain(|e| !e.attr.is_temporal());
                let mut seen = HashSet::new();
                let keep: Vec<bool> = g.nodes.iter().map(|n| seen.insert(n.instance_id)).collect();
                let mut remap = vec![usize::MAX; g.nodes.len()];
                let mut nodes = Vec::new();
                for (i, n) in g.nodes.iter().enumerate() {
                    if keep[i] {
                        remap[i] = nodes.len();
                        nodes.push(bimanual_core::scene_graph::Node { frame: t, ..n.clone() });
                    }
                }
                let edges = g
                    .edges
                    .iter()
                    .filter(|e| keep[e.sender] && keep[e.receiver])
                    .map(|e| Edge { attr: e.attr, sender: remap[e.sender], receiver: remap[e.receiver] })
                    .collect();
                SceneGraph { u: None, nodes, edges }
            })
            .collect();
        let c = temporal_concat(&frames, 10).expect("window fits");
        let ids = |g: &SceneGraph| g.nodes.iter().map(|n| n.instance_id).collect::<HashSet<_>>();
        let co: usize = frames.windows(2).map(|w| ids(&w[0]).intersection(&ids(&w[1])).count()).sum();
        let ok = c.nodes.len() == frames.iter().map(|g| g.nodes.len()).sum::<usize>()
            && c.spatial_edge_count() == frames.iter().map(|g| g.spatial_edge_count()).sum::<usize>()
            && c.temporal_edge_count() == co;
        if !ok {
            concat_bad += 1;
        }
    }
    if concat_bad > 0 {
        failures.push(format!("temporal concat {concat_bad}"));
    }

    let perm_cases = 500;
    let mut perm_bad = 0;
    for i in 0..perm_cases {
        let g = random_graph(&mut rng, 1, 10);
        let cfg = ModelConfig { latent: 8 + 8 * (i % 2), steps: 1 + i % 10, ..Default::default() };
        let w = random_weights(cfg, 0.5, &mut rng);
        let h = permuted(&g, &mut rng);
        let a: Vec<u64> = forward(&w, &g).unwrap().logits().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = forward(&w, &h).unwrap().logits().iter().map(|v| v.to_bits()).collect();
        if a != b {
            perm_bad += 1;
        }
    }
    if perm_bad > 0 {
        failures.push(format!("permutation {perm_bad}"));
    }

    let fuzz_cases = 100_000;
    let cfg = RelationConfig::default();
    let mut excl_bad = 0;
    for i in 0..fuzz_cases {
        let len = rng.random_range(1..=cfg.dyn_window);
        let ha = random_history(&mut rng, len);
        // Every tenth pair shares its boxes, the one case where inside and surround coexist.
        let hb = if i % 10 == 0 { ha.clone() } else { random_history(&mut rng, len) };
        let rs = evaluate_relations(&ha, &hb, 1.0 / 15.0, &cfg).unwrap();
        if !rs.exclusion_violations(ha[len - 1] == hb[len - 1]).is_empty() {
            excl_bad += 1;
        }
    }
    if excl_bad > 0 {
        failures.push(format!("exclusions {excl_bad}"));
    }

    outcome(
        failures.is_empty(),
        format!(
            "mirror involution {mirror_cases} graphs, concat counts {concat_cases} sequences, bit-exact logits {perm_cases} permutations, exclusions {fuzz_cases} fuzzed pairs; failures: {}",
            if failures.is_empty() { "none".to_owned() } else { failures.join(", ") }
        ),
    )
}

// ----------------------------------------------------------------------------
// 3. Relation oracles
// ----------------------------------------------------------------------------

/// Interval arithmetic written out per axis, independent of the library code.
fn static_oracle(a: &Aabb, b: &Aabb, cfg: &RelationConfig) -> RelationSet {
    use RelationKind::*;
    let half = cfg.contact_tolerance / 2.0;
    let lo_a = |k: usize| a.min[k];
    let hi_a = |k: usize| a.max[k];
    let lo_b = |k: usize| b.min[k];
    let hi_b = |k: usize| b.max[k];
    let overlap = |k: usize| hi_a(k).min(hi_b(k)) - lo_a(k).max(lo_b(k));
    let contact = (0..3).all(|k| lo_a(k) - half <= hi_b(k) + half && lo_b(k) - half <= hi_a(k) + half);
    // Is `first` on the positive side of `second` along k?
    let side = |k: usize, first_lo: f64, first_hi: f64, second_lo: f64, second_hi: f64| {
        let others = (0..3).filter(|&j| j != k).all(|j| overlap(j) > 0.0);
        let gap = first_lo - second_hi;
        let stacked = gap.abs() <= cfg.contact_tolerance && (first_lo + first_hi) / 2.0 > (second_lo + second_hi) / 2.0;
        others && (gap > cfg.dir_gap || stacked)
    };
    let pos = |k: usize| side(k, lo_a(k), hi_a(k), lo_b(k), hi_b(k));
    let neg = |k: usize| side(k, lo_b(k), hi_b(k), lo_a(k), hi_a(k));
    let inside = (0..3).all(|k| lo_a(k) >= lo_b(k) && hi_a(k) <= hi_b(k));
    let surround = (0..3).all(|k| lo_b(k) >= lo_a(k) && hi_b(k) <= hi_a(k));
    let mut out = RelationSet::EMPTY;
    for (kind, on) in [
        (Contact, contact),
        (Right, pos(0)),
        (Left, neg(0)),
        (Above, pos(1)),
        (Below, neg(1)),
        (Behind, pos(2)),
        (Front, neg(2)),
        (Inside, inside),
        (Surround, surround),
    ] {
        out.set(kind, on);
    }
    out
}

/// Two boxes moving at constant velocity, described in closed form.
#[derive(Debug, Clone, Copy)]
struct Script {
    a0: [f64; 3],
    va: [f64; 3],
    b0: [f64; 3],
    vb: [f64; 3],
    size_a: [f64; 3],
    size_b: [f64; 3],
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn minus(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn at(p: [f64; 3], v: [f64; 3], t: f64) -> [f64; 3] {
    [p[0] + v[0] * t, p[1] + v[1] * t, p[2] + v[2] * t]
}

impl Script {
    fn histories(&self, frames: usize, dt: f64) -> (Vec<Aabb>, Vec<Aabb>) {
        let h = |p: [f64; 3], v: [f64; 3], s: [f64; 3]| {
            (0..frames).map(|i| Aabb::from_center_size(at(p, v, i as f64 * dt), s)).collect::<Vec<_>>()
        };
        (h(self.a0, self.va, self.size_a), h(self.b0, self.vb, self.size_b))
    }

    /// Expected dynamic relations from the velocities, without sampling the trajectory.
    fn oracle(&self, frames: usize, dt: f64, cfg: &RelationConfig) -> RelationSet {
        use RelationKind::*;
        let elapsed = (frames - 1) as f64 * dt;
        let (a1, b1) = (at(self.a0, self.va, elapsed), at(self.b0, self.vb, elapsed));
        let touching = (0..3).all(|k| {
            (a1[k] - b1[k]).abs() <= (self.size_a[k] + self.size_b[k]) / 2.0 + cfg.contact_tolerance
        });
        let (sa, sb) = (norm(self.va), norm(self.vb));
        let rel = norm(minus(self.va, self.vb));
        let mut out = RelationSet::EMPTY;
        if touching {
            let moving = sa > cfg.v_min && sb > cfg.v_min && rel < cfg.eps_rel;
            out.set(MovingTogether, moving);
            out.set(HaltingTogether, sa <= cfg.v_min && sb <= cfg.v_min);
            out.set(FixedMovingTogether, moving && rel * elapsed < cfg.eps_fixed);
        } else {
            let delta = norm(minus(a1, b1)) - norm(minus(self.a0, self.b0));
            out.insert(if delta < -cfg.eps_dist {
                GettingClose
            } else if delta > cfg.eps_dist {
                MovingApart
            } else {
                Stable
            });
        }
        out
    }
}

fn unit(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = norm(v);
        if n > 0.2 && n <= 1.0 {
            return v.map(|x| x / n);
        }
    }
}

fn scaled(v: [f64; 3], s: f64) -> [f64; 3] {
    v.map(|x| x * s)
}

/// The six canonical motion patterns, each with randomized positions and
/// speeds that stay well inside its category, and the relation set it must produce.
fn canonical_pattern(kind: usize, rng: &mut impl Rng) -> (&'static str, Script, RelationSet) {
    use RelationKind::*;
    let size = [60.0, 60.0, 60.0];
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(-300.0..300.0));
    let dir = unit(rng);
    let far = at(base, dir, rng.random_range(400.0..600.0));
    let near = at(base, dir, rng.random_range(0.0..30.0));
    let still = [0.0; 3];
    let set = |ks: &[RelationKind]| ks.iter().copied().collect::<RelationSet>();
    match kind {
        0 => (
            "both still, apart",
            Script { a0: base, va: still, b0: far, vb: still, size_a: size, size_b: size },
            set(&[Stable]),
        ),
        1 => {
            let v = scaled(unit(rng), rng.random_range(60.0..200.0));
            (
                "rigid co-motion in contact",
                Script { a0: base, va: v, b0: near, vb: v, size_a: size, size_b: size },
                set(&[MovingTogether, FixedMovingTogether]),
            )
        }
        2 => (
            "b approaches still a",
            Script { a0: base, va: still, b0: far, vb: scaled(dir, -rng.random_range(150.0..300.0)), size_a: size, size_b: size },
            set(&[GettingClose]),
        ),
        3 => (
            "b retreats from still a",
            Script { a0: base, va: still, b0: far, vb: scaled(dir, rng.random_range(150.0..300.0)), size_a: size, size_b: size },
            set(&[MovingApart]),
        ),
        4 => (
            "both still, in contact",
            Script { a0: base, va: still, b0: near, vb: still, size_a: size, size_b: size },
            set(&[HaltingTogether]),
        ),
        _ => {
            // Shared motion plus a slow drift: relative speed below eps_rel but the
            // drift over the window exceeds eps_fixed.
            let v = scaled(unit(rng), rng.random_range(80.0..200.0));
            let drift = scaled(unit(rng), rng.random_range(20.0..28.0));
            (
                "co-motion with drift in contact",
                Script { a0: base, va: v, b0: base, vb: at(v, drift, 1.0), size_a: [200.0; 3], size_b: size },
                set(&[MovingTogether]),
            )
        }
    }
}

fn relation_oracles() -> Outcome {
    let cfg = RelationConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let static_cases = 10_000;
    let mut static_bad = 0;
    for i in 0..static_cases {
        let a = random_box(&mut rng);
        // Half the pairs are built close to `a` so borders and stacking are exercised.
        let b = if i % 2 == 0 {
            random_box(&mut rng)
        } else {
            let axis = rng.random_range(0..3);
            let mut shift = [0.0; 3];
            shift[axis] = (a.max[axis] - a.min[axis]) + rng.random_range(-12..=12) as f64;
            a.translated(shift)
        };
        if evaluate_static_relations(&a, &b, &cfg) != static_oracle(&a, &b, &cfg) {
            static_bad += 1;
        }
    }

    let dt = 0.1;
    let per_pattern = 200;
    let mut pattern_bad: BTreeMap<&str, usize> = BTreeMap::new();
    for kind in 0..6 {
        for _ in 0..per_pattern {
            let (name, script, expected) = canonical_pattern(kind, &mut rng);
            let (ha, hb) = script.histories(cfg.dyn_window, dt);
            let got = evaluate_dynamic_relations(&ha, &hb, dt, &cfg).unwrap();
            let oracle = script.oracle(cfg.dyn_window, dt, &cfg);
            let entry = pattern_bad.entry(name).or_default();
            if got != expected || oracle != expected {
                *entry += 1;
            }
        }
    }
    let dyn_bad: usize = pattern_bad.values().sum();
    let detail = pattern_bad.iter().map(|(k, v)| format!("{k}: {v}")).collect::<Vec<_>>().join(", ");
    outcome(
        static_bad == 0 && dyn_bad == 0,
        format!(
            "static {static_bad}/{static_cases} disagreements; dynamic {dyn_bad}/{} disagreements over 6 patterns x {per_pattern} ({detail})",
            6 * per_pattern
        ),
    )
}

// ----------------------------------------------------------------------------
// 4 and 5. Leave-one-subject-out on the shipped suite
// ----------------------------------------------------------------------------

struct Loso {
    f1: BTreeMap<&'static str, (f64, f64)>,
    full_runtime: Duration,
}

fn run_loso_suite(root: &Path) -> Loso {
    let mut cfg = RunConfig::desk();
    cfg.output_dir = root.to_path_buf();
    let t = Instant::now();
    let dataset = cmd_gen(&cfg).expect("gen");
    let mut f1 = BTreeMap::new();
    let mut full_runtime = Duration::ZERO;
    for mode in [AblationMode::Full, AblationMode::NoTemporal, AblationMode::ContactOnly, AblationMode::Centroids] {
        let (_, r) = cmd_loso(&cfg, &dataset, &[mode]).expect("loso").remove(0);
        if mode == AblationMode::Full {
            full_runtime = t.elapsed();
        }
        eprintln!("  loso {mode}: top1 {:.4} top3 {:.4} after {:.0} s", r.top1.macro_avg.f1, r.top3.macro_avg.f1, t.elapsed().as_secs_f64());
        f1.insert(mode.token(), (r.top1.macro_avg.f1, r.top3.macro_avg.f1));
    }
    Loso { f1, full_runtime }
}

fn synthetic_end_to_end(l: &Loso) -> Outcome {
    let (top1, top3) = l.f1[AblationMode::Full.token()];
    let secs = l.full_runtime.as_secs_f64();
    outcome(
        top1 >= 0.80 && top3 >= 0.95 && secs <= 1800.0,
        format!(
            "4 subjects x 6 tasks x 4 reps, f64: pooled top-1 macro F1 {top1:.4} (>= 0.80), top-3 {top3:.4} (>= 0.95), {secs:.0} s (<= 1800 s)"
        ),
    )
}

fn ablation_ordering(l: &Loso) -> Outcome {
    let f = |m: AblationMode| l.f1[m.token()].0;
    let (full, nt, co, ce) = (
        f(AblationMode::Full),
        f(AblationMode::NoTemporal),
        f(AblationMode::ContactOnly),
        f(AblationMode::Centroids),
    );
    outcome(
        full >= nt && nt > co && co > ce && full - co >= 0.05,
        format!(
            "top-1 macro F1 full {full:.4} >= no_temporal {nt:.4} > contact_only {co:.4} > centroids {ce:.4}; full - contact_only {:.4} (>= 0.05)",
            full - co
        ),
    )
}

// ----------------------------------------------------------------------------
// 6. Determinism
// ----------------------------------------------------------------------------

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.insert(p.strip_prefix(base).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn determinism(root: &Path) -> Outcome {
    let run = |name: &str| {
        let mut cfg = RunConfig::desk();
        cfg.output_dir = root.join(name);
        cfg.training.max_epochs = 2;
        let dataset = cmd_gen(&cfg).expect("gen");
        let train = cmd_train(&cfg, &dataset, Some(1)).expect("train");
        cmd_eval(&cfg, EvalSource::Weights(&train.join(WEIGHTS_FILE)), &dataset, Some(1)).expect("eval");
        tree(&cfg.output_dir)
    };
    let (a, b) = (run("a"), run("b"));
    let differing: Vec<String> =
        a.keys().chain(b.keys()).filter(|k| a.get(*k) != b.get(*k)).map(|k| k.display().to_string()).collect();
    let kinds = ["dataset/", "train-", "eval-"];
    let covered = kinds.iter().all(|k| a.keys().any(|p| p.to_string_lossy().contains(k)));
    outcome(
        differing.is_empty() && covered && !a.is_empty(),
        format!(
            "gen, train (2 epochs) and eval rerun: {} files compared, {} differ{}",
            a.len(),
            differing.len(),
            if differing.is_empty() { String::new() } else { format!(" ({})", differing.join(", ")) }
        ),
    )
}

// ----------------------------------------------------------------------------
// 7. Metric correctness
// ----------------------------------------------------------------------------

fn metric_correctness() -> Outcome {
    let (a, b) = (ActionLabel::Idle, ActionLabel::Approach);
    let truth = [a, a, b, b];
    let pred = [a, b, b, b];
    let one_hot = |l: ActionLabel| {
        let mut d: Distribution = [0.0; ActionLabel::COUNT];
        d[l.index()] = 1.0;
        d
    };
    let dists: Vec<Distribution> = pred.iter().map(|&l| one_hot(l)).collect();
    let (m, _) = score(&dists, &truth, 1).unwrap();
    let (m2, _) = score_labels(&pred, &truth).unwrap();
    let pa = &m.per_class[a.index()].prf;
    let pb = &m.per_class[b.index()].prf;
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-12;
    let worked = close(pa.precision, 1.0)
        && close(pa.recall, 0.5)
        && close(pa.f1, 2.0 / 3.0)
        && close(pb.precision, 2.0 / 3.0)
        && close(pb.recall, 1.0)
        && close(pb.f1, 0.8)
        && close(m.macro_avg.f1, (2.0 / 3.0 + 0.8) / 2.0)
        && m == m2;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sets = 1000;
    let mut bad = 0;
    for _ in 0..sets {
        let n = rng.random_range(1..500);
        let classes = rng.random_range(1..=ActionLabel::COUNT);
        let draw = |rng: &mut ChaCha8Rng| ActionLabel::from_index(rng.random_range(0..classes)).unwrap();
        let truth: Vec<ActionLabel> = (0..n).map(|_| draw(&mut rng)).collect();
        let pred: Vec<ActionLabel> =
            truth.iter().map(|&t| if rng.random_bool(0.6) { t } else { draw(&mut rng) }).collect();
        let (m, _) = score_labels(&pred, &truth).unwrap();
        let acc = pred.iter().zip(&truth).filter(|(p, t)| p == t).count() as f64 / n as f64;
        if !(close(m.micro.precision, acc) && close(m.micro.recall, acc) && close(m.accuracy, acc)) {
            bad += 1;
        }
    }
    outcome(
        worked && bad == 0,
        format!(
            "worked example P(a)={:.4} R(a)={:.4} F1(a)={:.4} P(b)={:.4} R(b)={:.4} F1(b)={:.4} macro={:.4}; micro P = micro R = accuracy on {}/{sets} fuzzed sets",
            pa.precision, pa.recall, pa.f1, pb.precision, pb.recall, pb.f1, m.macro_avg.f1, sets - bad
        ),
    )
}

// ----------------------------------------------------------------------------
// 8. Throughput
// ----------------------------------------------------------------------------

fn throughput() -> Outcome {
    let cfg = RelationConfig::default();
    let fps = 15.0;
    let mut tracker = Tracker::new(SmoothingConfig::default(), fps, cfg.dyn_window);
    let classes = [
        ObjectClass::Cup,
        ObjectClass::Bowl,
        ObjectClass::Bottle,
        ObjectClass::Knife,
        ObjectClass::Banana,
        ObjectClass::CuttingBoard,
        ObjectClass::Sponge,
        ObjectClass::Hammer,
        ObjectClass::LeftHand,
        ObjectClass::RightHand,
    ];
    let mut tracked = Vec::new();
    for f in 0..cfg.dyn_window {
        let dets: Vec<Detection> = classes
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let x = i as f64 * 45.0 + f as f64 * 3.0 * (i % 3) as f64;
                Detection::new(c, Aabb::from_center_size([x, 40.0 + (i % 2) as f64 * 50.0, 600.0], [60.0, 80.0, 60.0]))
            })
            .collect();
        tracked = tracker.step(&dets, f).unwrap();
    }
    let frame = cfg.dyn_window - 1;
    let dt = 1.0 / fps;
    let mut times = Vec::with_capacity(2000);
    let mut edges = 0;
    for _ in 0..2000 {
        let t = Instant::now();
        let g = build_frame_graph(&tracked, frame, |a, b| {
            let (ha, hb) = tracker.common_history(a.instance_id, b.instance_id, frame, cfg.dyn_window);
            evaluate_relations(&ha, &hb, dt, &cfg).unwrap()
        })
        .unwrap();
        times.push(t.elapsed());
        edges = std::hint::black_box(g).edges.len();
    }
    times.sort();
    let median = times[times.len() / 2];
    outcome(
        median < Duration::from_millis(1),
        format!("10 objects, 90 ordered pairs, {edges} edges: median {:.1} us (< 1000 us)", median.as_secs_f64() * 1e6),
    )
}

/// `ACCEPTANCE_CRITERIA=1,2,3` restricts the run to those criteria; the rest print SKIP.
fn selected() -> Option<HashSet<usize>> {
    let v = std::env::var("ACCEPTANCE_CRITERIA").ok()?;
    Some(v.split(',').filter_map(|s| s.trim().parse().ok()).collect())
}

fn main() {
    let root = tempfile::tempdir().expect("temp dir");
    let only = selected();
    let wanted = |n: usize| only.as_ref().is_none_or(|s| s.contains(&n));
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &str, o: Option<Outcome>| match o {
        Some(o) => {
            println!("{} criterion {n} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
            results.push((n, o));
        }
        None => println!("SKIP criterion {n} {name}"),
    };
    report(1, "gradient oracle", wanted(1).then(gradient_oracle));
    report(2, "structural invariants", wanted(2).then(structural_invariants));
    report(3, "relation oracles", wanted(3).then(relation_oracles));
    let loso = (wanted(4) || wanted(5)).then(|| run_loso_suite(&root.path().join("loso")));
    report(4, "synthetic end-to-end", loso.as_ref().filter(|_| wanted(4)).map(synthetic_end_to_end));
    report(5, "ablation ordering", loso.as_ref().filter(|_| wanted(5)).map(ablation_ordering));
    report(6, "determinism", wanted(6).then(|| determinism(&root.path().join("determinism"))));
    report(7, "metric correctness", wanted(7).then(metric_correctness));
    report(8, "throughput", wanted(8).then(throughput));

    let failed: Vec<usize> = results.iter().filter(|r| !r.1.pass).map(|r| r.0).collect();
    println!("acceptance: {} of {} criteria run pass", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
