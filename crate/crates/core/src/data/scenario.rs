//! Scripted bimanual scenarios and the synthetic frame generator.
//!
//! A script lists an object inventory and, per hand, a sequence of timed
//! phases. Each phase carries the ground-truth action and a motion primitive
//! that moves the hand (and the object it grasps) as a function of the
//! state at the phase start.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::frames::FrameRecord;
use crate::error::{Error, Result};
use crate::geometry::{add, scale, sub, Aabb, Vec3};
use crate::tracking::Detection;
use crate::vocab::{ActionLabel, ObjectClass};

/// How far a reaching hand's box ends up overlapping its target (mm).
pub const REACH_OVERLAP: f64 = 15.0;

fn default_fps() -> f64 {
    15.0
}

fn default_hand_size() -> Vec3 {
    [90.0, 60.0, 110.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub name: String,
    pub class: ObjectClass,
    pub center: Vec3,
    pub size: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Motion {
    /// Stay put; a grasped object stays in the hand.
    Static,
    /// Move in a straight line until the hand box overlaps the target.
    Reach { target: String },
    /// Move the grasped object (rigidly with the hand) so its center ends at
    /// `offset` from the center of `to`, or from its own center when `to` is absent.
    Carry {
        #[serde(default)]
        to: Option<String>,
        #[serde(default)]
        offset: Vec3,
    },
    /// Carry the grasped object back to where the recording started it.
    Return,
    /// Release the object and move back to the rest pose.
    Withdraw,
    /// Horizontal (x-z) circle through the start position.
    Circle { radius: f64, period: f64 },
    /// Sinusoidal oscillation along `axis` around the start position.
    Reciprocate { axis: Vec3, amplitude: f64, period: f64 },
    /// Rotate the grasped object about the z axis up to `angle` degrees and
    /// back, dipping its center by up to `shift`.
    Tilt {
        angle: f64,
        #[serde(default)]
        shift: Vec3,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub action: ActionLabel,
    /// Seconds.
    pub duration: f64,
    pub motion: Motion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandScript {
    /// Center of the hand box at rest.
    pub rest: Vec3,
    #[serde(default = "default_hand_size")]
    pub size: Vec3,
    pub phases: Vec<Phase>,
}

impl HandScript {
    pub fn duration(&self) -> f64 {
        self.phases.iter().map(|p| p.duration).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    pub task: String,
    #[serde(default = "default_fps")]
    pub fps: f64,
    /// Standard deviation of the Gaussian jitter on every box corner (mm).
    #[serde(default)]
    pub noise: f64,
    pub objects: Vec<ObjectSpec>,
    pub right: HandScript,
    pub left: HandScript,
}

fn finite3(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}

impl ScenarioScript {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: ScenarioScript = toml::from_str(text).map_err(|e| Error::Config(format!("scenario: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    /// Recording length in seconds (the longer hand timeline).
    pub fn duration(&self) -> f64 {
        self.right.duration().max(self.left.duration())
    }

    pub fn frame_count(&self) -> usize {
        (self.duration() * self.fps).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("scenario {}: {m}", self.task)));
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad(format!("fps {} must be > 0", self.fps));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad(format!("noise {} must be >= 0", self.noise));
        }
        let mut names = HashMap::new();
        for o in &self.objects {
            if o.class.is_hand() {
                return bad(format!("object {} uses a hand class", o.name));
            }
            if !finite3(&o.center) || o.size.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return bad(format!("object {} has an invalid pose or size", o.name));
            }
            if names.insert(o.name.as_str(), ()).is_some() {
                return bad(format!("object {} defined twice", o.name));
            }
        }
        for (hand, script) in [("right", &self.right), ("left", &self.left)] {
            if !finite3(&script.rest) || script.size.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return bad(format!("{hand} hand has an invalid rest pose or size"));
            }
            if script.phases.is_empty() {
                return bad(format!("{hand} hand has no phases"));
            }
            for p in &script.phases {
                if !(p.duration.is_finite() && p.duration > 0.0) {
                    return bad(format!("{hand} phase {} has duration {}", p.action, p.duration));
                }
                let ok = match &p.motion {
                    Motion::Reach { target } => names.contains_key(target.as_str()),
                    Motion::Carry { to, offset } => {
                        to.as_ref().is_none_or(|t| names.contains_key(t.as_str())) && finite3(offset)
                    }
                    Motion::Circle { radius, period } => *radius >= 0.0 && *period > 0.0,
                    Motion::Reciprocate { axis, amplitude, period } => {
                        finite3(axis) && axis.iter().any(|c| *c != 0.0) && amplitude.is_finite() && *period > 0.0
                    }
                    Motion::Tilt { angle, shift } => angle.is_finite() && finite3(shift),
                    Motion::Static | Motion::Return | Motion::Withdraw => true,
                };
                if !ok {
                    return bad(format!("{hand} phase {} has an invalid motion {:?}", p.action, p.motion));
                }
            }
        }
        Ok(())
    }

    /// Shift all poses by `offset` and stretch every duration and period by
    /// `1 / speed`.
    pub fn transformed(&self, offset: Vec3, speed: f64) -> ScenarioScript {
        let mut s = self.clone();
        for o in &mut s.objects {
            o.center = add(o.center, offset);
        }
        for hand in [&mut s.right, &mut s.left] {
            hand.rest = add(hand.rest, offset);
            for p in &mut hand.phases {
                p.duration /= speed;
                match &mut p.motion {
                    Motion::Circle { period, .. } | Motion::Reciprocate { period, .. } => *period /= speed,
                    _ => {}
                }
            }
        }
        s
    }

    /// Per-repetition variation: object and rest poses jittered by up to
    /// `pose` mm in x and z, phase durations scaled by up to `timing`, and the
    /// shorter hand's last phase stretched so both hands end together.
    pub fn varied(&self, rng: &mut impl Rng, pose: f64, timing: f64) -> ScenarioScript {
        let mut s = self.clone();
        let jitter = |rng: &mut dyn rand::RngCore| -> Vec3 {
            if pose > 0.0 {
                [rng.random_range(-pose..=pose), 0.0, rng.random_range(-pose..=pose)]
            } else {
                [0.0; 3]
            }
        };
        for o in &mut s.objects {
            o.center = add(o.center, jitter(rng));
        }
        for hand in [&mut s.right, &mut s.left] {
            hand.rest = add(hand.rest, jitter(rng));
            for p in &mut hand.phases {
                if timing > 0.0 {
                    p.duration *= 1.0 + rng.random_range(-timing..=timing);
                }
            }
        }
        let (r, l) = (s.right.duration(), s.left.duration());
        let shorter = if r < l { &mut s.right } else { &mut s.left };
        if let Some(last) = shorter.phases.last_mut() {
            last.duration += (r - l).abs();
        }
        s
    }
}

/// Recording identity attached to generated frames.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordingMeta {
    pub recording: String,
    pub subject: u32,
    pub repetition: u32,
}

#[derive(Debug, Clone)]
struct Body {
    center: Vec3,
    size: Vec3,
}

impl Body {
    fn aabb(&self) -> Aabb {
        Aabb::from_center_size(self.center, self.size)
    }
}

/// State of one hand at the start of its current phase.
#[derive(Debug, Clone)]
struct HandState {
    phase: usize,
    phase_start: f64,
    start_center: Vec3,
    /// Object the hand last reached for; moved by carrying motions.
    grasp: Option<usize>,
    grasp_start: Option<Body>,
}

struct Sim<'a> {
    script: &'a ScenarioScript,
    names: HashMap<&'a str, usize>,
    objects: Vec<Body>,
    homes: Vec<Vec3>,
    hands: [Body; 2],
    states: [HandState; 2],
}

fn lerp(a: Vec3, b: Vec3, t: f64) -> Vec3 {
    add(a, scale(sub(b, a), t))
}

fn tilted_size(size: Vec3, degrees: f64) -> Vec3 {
    let (s, c) = degrees.to_radians().sin_cos();
    let (s, c) = (s.abs(), c.abs());
    [size[0] * c + size[1] * s, size[0] * s + size[1] * c, size[2]]
}

impl<'a> Sim<'a> {
    fn new(script: &'a ScenarioScript) -> Self {
        let objects: Vec<Body> = script.objects.iter().map(|o| Body { center: o.center, size: o.size }).collect();
        let hand = |h: &HandScript| Body { center: h.rest, size: h.size };
        let state = |h: &HandScript| HandState {
            phase: 0,
            phase_start: 0.0,
            start_center: h.rest,
            grasp: None,
            grasp_start: None,
        };
        Sim {
            script,
            names: script.objects.iter().enumerate().map(|(i, o)| (o.name.as_str(), i)).collect(),
            homes: objects.iter().map(|o| o.center).collect(),
            objects,
            hands: [hand(&script.right), hand(&script.left)],
            states: [state(&script.right), state(&script.left)],
        }
    }

    fn hand_script(&self, h: usize) -> &'a HandScript {
        if h == 0 {
            &self.script.right
        } else {
            &self.script.left
        }
    }

    /// Apply phase `p` of hand `h` at `elapsed` seconds into it.
    fn apply(&mut self, h: usize, elapsed: f64) {
        let script = self.hand_script(h);
        let state = self.states[h].clone();
        let phase = &script.phases[state.phase];
        let elapsed = elapsed.clamp(0.0, phase.duration);
        let tau = elapsed / phase.duration;
        let h0 = state.start_center;
        let grasped = state.grasp.zip(state.grasp_start.clone());
        let move_with_hand = |sim: &mut Sim, delta: Vec3| {
            sim.hands[h].center = add(h0, delta);
            if let Some((g, start)) = &grasped {
                sim.objects[*g].center = add(start.center, delta);
            }
        };
        match &phase.motion {
            Motion::Static => move_with_hand(self, [0.0; 3]),
            Motion::Reach { target } => {
                let t = &self.objects[self.names[target.as_str()]];
                let side = if h0[0] >= t.center[0] { 1.0 } else { -1.0 };
                let reach = t.size[0] / 2.0 + self.hands[h].size[0] / 2.0 - REACH_OVERLAP;
                let goal = [t.center[0] + side * reach, t.center[1], t.center[2]];
                self.hands[h].center = lerp(h0, goal, tau);
            }
            Motion::Carry { to, offset } => {
                if let Some((_, start)) = &grasped {
                    let base = match to {
                        Some(name) => self.objects[self.names[name.as_str()]].center,
                        None => start.center,
                    };
                    let delta = sub(add(base, *offset), start.center);
                    move_with_hand(self, scale(delta, tau));
                }
            }
            Motion::Return => {
                if let Some((g, start)) = &grasped {
                    let delta = sub(self.homes[*g], start.center);
                    move_with_hand(self, scale(delta, tau));
                }
            }
            Motion::Withdraw => {
                self.hands[h].center = lerp(h0, script.rest, tau);
            }
            Motion::Circle { radius, period } => {
                let w = 2.0 * PI * elapsed / period;
                move_with_hand(self, [radius * (w.cos() - 1.0), 0.0, radius * w.sin()]);
            }
            Motion::Reciprocate { axis, amplitude, period } => {
                let n = crate::geometry::norm(*axis);
                let d = amplitude * (2.0 * PI * elapsed / period).sin() / n;
                move_with_hand(self, scale(*axis, d));
            }
            Motion::Tilt { angle, shift } => {
                let bump = (PI * tau).sin();
                move_with_hand(self, scale(*shift, bump));
                if let Some((g, start)) = &grasped {
                    self.objects[*g].size = tilted_size(start.size, angle * bump);
                }
            }
        }
    }

    /// Enter the next phase of hand `h`, snapshotting the start state.
    fn enter(&mut self, h: usize, phase: usize, start: f64) {
        let script = self.hand_script(h);
        let st = &mut self.states[h];
        st.phase = phase;
        st.phase_start = start;
        st.start_center = self.hands[h].center;
        match &script.phases[phase].motion {
            Motion::Reach { target } => {
                st.grasp = Some(self.names[target.as_str()]);
                st.grasp_start = None;
            }
            Motion::Withdraw => {
                st.grasp = None;
                st.grasp_start = None;
            }
            _ => {}
        }
        // Only carrying phases move the object; snapshot its pose for them.
        let carries = !matches!(script.phases[phase].motion, Motion::Reach { .. } | Motion::Withdraw);
        st.grasp_start = if carries { st.grasp.map(|g| self.objects[g].clone()) } else { None };
    }

    /// Advance hand `h` to time `t` (seconds), finishing skipped phases.
    fn advance(&mut self, h: usize, t: f64, dt: f64) {
        let phases = &self.hand_script(h).phases;
        loop {
            let (phase, start) = (self.states[h].phase, self.states[h].phase_start);
            let end = start + phases[phase].duration;
            if t + 1e-9 < end || phase + 1 == phases.len() {
                break;
            }
            self.apply(h, f64::INFINITY);
            self.enter(h, phase + 1, end);
        }
        // The first frame of a phase already shows one frame of motion.
        let elapsed = t - self.states[h].phase_start + dt;
        self.apply(h, elapsed);
    }
}

/// Generate one recording from a script.
pub fn generate_recording(script: &ScenarioScript, meta: &RecordingMeta, seed: u64) -> Result<Vec<FrameRecord>> {
    script.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, script.noise).map_err(|e| Error::Config(format!("noise: {e}")))?;
    let dt = 1.0 / script.fps;
    let mut sim = Sim::new(script);
    sim.enter(0, 0, 0.0);
    sim.enter(1, 0, 0.0);
    let mut out = Vec::with_capacity(script.frame_count());
    for frame in 0..script.frame_count() {
        // Phases end exactly on frame boundaries; the last frame of a phase
        // lands on its end pose.
        let t = frame as f64 * dt;
        sim.advance(0, t, dt);
        sim.advance(1, t, dt);
        let label = |h: usize| sim.hand_script(h).phases[sim.states[h].phase].action;
        let bodies = script
            .objects
            .iter()
            .zip(&sim.objects)
            .map(|(o, b)| (o.class, b))
            .chain([(ObjectClass::RightHand, &sim.hands[0]), (ObjectClass::LeftHand, &sim.hands[1])]);
        let mut detections = Vec::new();
        for (class, body) in bodies {
            let b = body.aabb();
            let mut min = b.min;
            let mut max = b.max;
            for k in 0..3 {
                min[k] += noise.sample(&mut rng);
                max[k] += noise.sample(&mut rng);
                if min[k] > max[k] {
                    std::mem::swap(&mut min[k], &mut max[k]);
                }
            }
            let confidence = rng.random_range(0.85..=1.0);
            detections.push(Detection { class, bbox: Aabb::new(min, max)?, confidence });
        }
        out.push(FrameRecord {
            recording: meta.recording.clone(),
            subject: meta.subject,
            task: script.task.clone(),
            repetition: meta.repetition,
            frame,
            timestamp: t,
            detections,
            right: label(0),
            left: label(1),
        });
    }
    Ok(out)
}

/// Generate a recording with placeholder identity (subject 0, repetition 0).
pub fn generate(script: &ScenarioScript, seed: u64) -> Result<Vec<FrameRecord>> {
    let meta = RecordingMeta { recording: script.task.clone(), subject: 0, repetition: 0 };
    generate_recording(script, &meta, seed)
}
