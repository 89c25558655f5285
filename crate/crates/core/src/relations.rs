//! The 15 symbolic spatial relations between an ordered pair of boxes.
//!
//! Static relations are decided from one frame's boxes. Dynamic relations
//! look at the centroid trajectories over a short window of past frames.
//! Every relation describes the first object (`a`) relative to the second (`b`).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{distance, norm, sub, Aabb, X, Y, Z};
use crate::vocab::RelationKind;

/// Set over the 15 relation kinds, one bit per canonical slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct RelationSet(u16);

impl RelationSet {
    pub const EMPTY: RelationSet = RelationSet(0);
    const MASK: u16 = (1 << RelationKind::COUNT) - 1;

    pub fn from_bits(bits: u16) -> Option<Self> {
        (bits & !Self::MASK == 0).then_some(RelationSet(bits))
    }

    pub fn bits(self) -> u16 {
        self.0
    }

    pub fn contains(self, r: RelationKind) -> bool {
        self.0 & (1 << r.index()) != 0
    }

    pub fn insert(&mut self, r: RelationKind) {
        self.0 |= 1 << r.index();
    }

    pub fn remove(&mut self, r: RelationKind) {
        self.0 &= !(1 << r.index());
    }

    pub fn with(mut self, r: RelationKind) -> Self {
        self.insert(r);
        self
    }

    pub fn set(&mut self, r: RelationKind, on: bool) {
        if on {
            self.insert(r);
        } else {
            self.remove(r);
        }
    }

    pub fn union(self, other: RelationSet) -> Self {
        RelationSet(self.0 | other.0)
    }

    pub fn intersection(self, other: RelationSet) -> Self {
        RelationSet(self.0 & other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = RelationKind> {
        RelationKind::ALL.iter().copied().filter(move |r| self.contains(*r))
    }

    /// Swap the left and right slots.
    pub fn mirrored(self) -> Self {
        let mut out = self;
        out.set(RelationKind::Left, self.contains(RelationKind::Right));
        out.set(RelationKind::Right, self.contains(RelationKind::Left));
        out
    }

    /// The set describing `b` relative to `a`, given this set for `a` relative to `b`.
    pub fn converse(self) -> Self {
        use RelationKind::*;
        let mut out = self;
        for (p, q) in [(Above, Below), (Left, Right), (Front, Behind), (Inside, Surround)] {
            out.set(p, self.contains(q));
            out.set(q, self.contains(p));
        }
        out
    }

    /// Mutual exclusions every evaluated set satisfies. Identical boxes are
    /// the one case where `inside` and `surround` legitimately coexist, so
    /// that pair is only checked when `boxes_identical` is false.
    pub fn exclusion_violations(self, boxes_identical: bool) -> Vec<(RelationKind, RelationKind)> {
        use RelationKind::*;
        let mut pairs = vec![(Above, Below), (Left, Right), (Front, Behind), (GettingClose, MovingApart)];
        if !boxes_identical {
            pairs.push((Inside, Surround));
        }
        pairs
            .into_iter()
            .filter(|(p, q)| self.contains(*p) && self.contains(*q))
            .collect()
    }
}

impl FromIterator<RelationKind> for RelationSet {
    fn from_iter<I: IntoIterator<Item = RelationKind>>(iter: I) -> Self {
        let mut s = RelationSet::EMPTY;
        for r in iter {
            s.insert(r);
        }
        s
    }
}

impl fmt::Display for RelationSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, r) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            f.write_str(r.token())?;
        }
        f.write_str("}")
    }
}

/// Thresholds for relation evaluation. Lengths in mm, speeds in mm/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelationConfig {
    pub contact_tolerance: f64,
    pub dir_gap: f64,
    pub dyn_window: usize,
    pub v_min: f64,
    pub eps_rel: f64,
    pub eps_dist: f64,
    pub eps_fixed: f64,
}

impl Default for RelationConfig {
    fn default() -> Self {
        RelationConfig {
            contact_tolerance: 10.0,
            dir_gap: 10.0,
            dyn_window: 8,
            v_min: 20.0,
            eps_rel: 30.0,
            eps_dist: 5.0,
            eps_fixed: 10.0,
        }
    }
}

impl RelationConfig {
    pub fn validate(&self) -> Result<()> {
        let thresholds = [
            ("contact_tolerance", self.contact_tolerance),
            ("dir_gap", self.dir_gap),
            ("v_min", self.v_min),
            ("eps_rel", self.eps_rel),
            ("eps_dist", self.eps_dist),
            ("eps_fixed", self.eps_fixed),
        ];
        for (name, v) in thresholds {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("relations.{name} must be a finite value >= 0, got {v}")));
            }
        }
        if self.dyn_window < 2 {
            return Err(Error::Config(format!("relations.dyn_window must be >= 2, got {}", self.dyn_window)));
        }
        Ok(())
    }
}

pub fn centroid(a: &Aabb) -> [f64; 3] {
    a.centroid()
}

/// True when the two boxes, each grown by half the tolerance on every face, intersect.
pub fn in_contact(a: &Aabb, b: &Aabb, cfg: &RelationConfig) -> bool {
    let t = cfg.contact_tolerance;
    (0..3).all(|i| a.min[i] <= b.max[i] + t && b.min[i] <= a.max[i] + t)
}

/// Whether `a` lies on the positive side of `b` along `axis`.
///
/// The other two projections must overlap. Along `axis` the boxes are either
/// separated by more than `dir_gap`, or touch within the contact tolerance
/// with `a`'s centroid further along the axis (stacked boxes).
fn positive_side(a: &Aabb, b: &Aabb, axis: usize, cfg: &RelationConfig) -> bool {
    let others_overlap = (0..3).filter(|&j| j != axis).all(|j| a.overlap(b, j) > 0.0);
    if !others_overlap {
        return false;
    }
    let gap = a.min[axis] - b.max[axis];
    if gap > cfg.dir_gap {
        return true;
    }
    let ca = a.min[axis] + a.max[axis];
    let cb = b.min[axis] + b.max[axis];
    gap.abs() <= cfg.contact_tolerance && ca > cb
}

/// Static relations of `a` relative to `b`.
pub fn evaluate_static_relations(a: &Aabb, b: &Aabb, cfg: &RelationConfig) -> RelationSet {
    use RelationKind::*;
    let mut out = RelationSet::EMPTY;
    out.set(Contact, in_contact(a, b, cfg));
    out.set(Right, positive_side(a, b, X, cfg));
    out.set(Left, positive_side(b, a, X, cfg));
    out.set(Above, positive_side(a, b, Y, cfg));
    out.set(Below, positive_side(b, a, Y, cfg));
    out.set(Behind, positive_side(a, b, Z, cfg));
    out.set(Front, positive_side(b, a, Z, cfg));
    out.set(Inside, a.contained_in(b));
    out.set(Surround, b.contained_in(a));
    out
}

/// Dynamic relations from two equally long box histories (oldest first).
///
/// Only the last `cfg.dyn_window` frames are used; shorter histories are
/// evaluated on what is available as long as there are at least two frames.
pub fn evaluate_dynamic_relations(
    history_a: &[Aabb],
    history_b: &[Aabb],
    dt: f64,
    cfg: &RelationConfig,
) -> Result<RelationSet> {
    use RelationKind::*;
    if history_a.len() != history_b.len() {
        return Err(Error::InsufficientHistory(format!(
            "history lengths differ ({} vs {})",
            history_a.len(),
            history_b.len()
        )));
    }
    if history_a.len() < 2 {
        return Err(Error::InsufficientHistory(format!(
            "need at least 2 frames, got {}",
            history_a.len()
        )));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let n = history_a.len().min(cfg.dyn_window.max(2));
    let ha = &history_a[history_a.len() - n..];
    let hb = &history_b[history_b.len() - n..];
    let elapsed = (n - 1) as f64 * dt;

    let (a0, a1) = (ha[0].centroid(), ha[n - 1].centroid());
    let (b0, b1) = (hb[0].centroid(), hb[n - 1].centroid());
    let speed_a = distance(a1, a0) / elapsed;
    let speed_b = distance(b1, b0) / elapsed;
    let d0 = sub(a0, b0);
    let d1 = sub(a1, b1);
    let rel_speed = norm(sub(d1, d0)) / elapsed;

    let mut out = RelationSet::EMPTY;
    if in_contact(&ha[n - 1], &hb[n - 1], cfg) {
        let moving = speed_a > cfg.v_min && speed_b > cfg.v_min && rel_speed < cfg.eps_rel;
        out.set(MovingTogether, moving);
        out.set(HaltingTogether, speed_a <= cfg.v_min && speed_b <= cfg.v_min);
        if moving {
            let max_disp = ha
                .iter()
                .zip(hb)
                .map(|(x, y)| norm(sub(sub(x.centroid(), y.centroid()), d0)))
                .fold(0.0, f64::max);
            out.set(FixedMovingTogether, max_disp < cfg.eps_fixed);
        }
    } else {
        let delta = norm(d1) - norm(d0);
        if delta < -cfg.eps_dist {
            out.insert(GettingClose);
        } else if delta > cfg.eps_dist {
            out.insert(MovingApart);
        } else {
            out.insert(Stable);
        }
    }
    Ok(out)
}

/// All relations of `a` relative to `b`: static relations on the newest boxes
/// plus dynamic relations when at least two frames of history exist.
pub fn evaluate_relations(
    history_a: &[Aabb],
    history_b: &[Aabb],
    dt: f64,
    cfg: &RelationConfig,
) -> Result<RelationSet> {
    let (Some(a), Some(b)) = (history_a.last(), history_b.last()) else {
        return Err(Error::InsufficientHistory("empty history".into()));
    };
    let mut out = evaluate_static_relations(a, b, cfg);
    if history_a.len() >= 2 {
        out = out.union(evaluate_dynamic_relations(history_a, history_b, dt, cfg)?);
    }
    Ok(out)
}
