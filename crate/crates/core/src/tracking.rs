//! Instance tracking and causal Gaussian smoothing of detected boxes.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{distance, Aabb};
use crate::vocab::ObjectClass;

/// One detected object in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detection {
    pub class: ObjectClass,
    #[serde(rename = "box")]
    pub bbox: Aabb,
    pub confidence: f64,
}

impl Detection {
    pub fn new(class: ObjectClass, bbox: Aabb) -> Self {
        Detection { class, bbox, confidence: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::Schema(format!("confidence {} outside [0, 1]", self.confidence)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingConfig {
    /// Three standard deviations of the Gaussian kernel, in seconds.
    pub three_sigma: f64,
    /// Maximum centroid distance (mm) for matching a detection to a track.
    pub gate_distance: f64,
    /// Consecutive missed frames after which a track is retired.
    pub max_lost_frames: usize,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig { three_sigma: 0.250, gate_distance: 300.0, max_lost_frames: 15 }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.three_sigma > 0.0 && self.three_sigma.is_finite()) {
            return Err(Error::Config(format!("smoothing.three_sigma must be > 0, got {}", self.three_sigma)));
        }
        if !(self.gate_distance > 0.0 && self.gate_distance.is_finite()) {
            return Err(Error::Config(format!(
                "smoothing.gate_distance must be > 0, got {}",
                self.gate_distance
            )));
        }
        Ok(())
    }

    /// Kernel support in frames: ages `0..=support` get nonzero weight.
    pub fn support_frames(&self, fps: f64) -> usize {
        (self.three_sigma * fps + 1e-9).floor() as usize
    }
}

/// A class-labelled object instance followed across frames.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedObject {
    pub instance_id: u32,
    pub class: ObjectClass,
    /// Raw observations `(frame, box)`, oldest first.
    pub raw_history: VecDeque<(usize, Aabb)>,
    pub smoothed_box: Aabb,
    /// Smoothed boxes `(frame, box)` of the frames the track was observed in, oldest first.
    pub smoothed_history: VecDeque<(usize, Aabb)>,
    pub frames_since_seen: usize,
}

impl TrackedObject {
    pub fn last_frame(&self) -> Option<usize> {
        self.raw_history.back().map(|(f, _)| *f)
    }
}

/// Normalized causal Gaussian average of each box parameter.
///
/// Observations older than three sigma (relative to the newest one) get no
/// weight; the remaining weights are renormalized.
pub fn smooth(track: &TrackedObject, fps: f64, cfg: &SmoothingConfig) -> Aabb {
    let Some(&(now, newest)) = track.raw_history.back() else {
        return track.smoothed_box;
    };
    let sigma = cfg.three_sigma / 3.0;
    let support = cfg.support_frames(fps);
    let base = newest.params();
    // Offsets from the newest box keep a constant history exact.
    let mut acc = [0.0; 6];
    let mut total = 0.0;
    for &(frame, bbox) in track.raw_history.iter().rev() {
        let age_frames = now - frame;
        if age_frames > support {
            break;
        }
        let age = age_frames as f64 / fps;
        let w = (-(age * age) / (2.0 * sigma * sigma)).exp();
        total += w;
        for ((a, p), b) in acc.iter_mut().zip(bbox.params()).zip(base) {
            *a += w * (p - b);
        }
    }
    let mut params = [0.0; 6];
    for i in 0..6 {
        params[i] = base[i] + acc[i] / total;
    }
    for i in 0..3 {
        if params[i] > params[i + 3] {
            let mid = 0.5 * (params[i] + params[i + 3]);
            params[i] = mid;
            params[i + 3] = mid;
        }
    }
    Aabb::from_params(params)
}

/// Per-frame output of the tracker.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedBox {
    pub instance_id: u32,
    pub class: ObjectClass,
    pub bbox: Aabb,
}

/// Greedy per-class nearest-centroid tracker with Gaussian smoothing.
///
/// One tracker follows one recording; frames must be fed in increasing order.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: SmoothingConfig,
    fps: f64,
    history_len: usize,
    tracks: Vec<TrackedObject>,
    next_id: u32,
}

impl Tracker {
    /// `history_len` is the number of smoothed boxes kept per track for
    /// dynamic relation evaluation.
    pub fn new(cfg: SmoothingConfig, fps: f64, history_len: usize) -> Self {
        Tracker { cfg, fps, history_len: history_len.max(1), tracks: Vec::new(), next_id: 0 }
    }

    pub fn tracks(&self) -> &[TrackedObject] {
        &self.tracks
    }

    pub fn track(&self, instance_id: u32) -> Option<&TrackedObject> {
        self.tracks.iter().find(|t| t.instance_id == instance_id)
    }

    /// Match `detections` to live tracks, spawn tracks for the rest, retire
    /// stale ones and re-smooth every matched track.
    ///
    /// Returns the instance id assigned to each detection, in input order.
    pub fn associate(&mut self, detections: &[Detection], frame: usize) -> Result<Vec<u32>> {
        if let Some(last) = self.tracks.iter().filter_map(|t| t.last_frame()).max() {
            if frame <= last {
                return Err(Error::InvalidArgument(format!(
                    "frame {frame} is not after the latest tracked frame {last}"
                )));
            }
        }

        let mut candidates: Vec<(f64, u32, usize, usize)> = Vec::new();
        for (ti, track) in self.tracks.iter().enumerate() {
            let c = track.smoothed_box.centroid();
            for (di, det) in detections.iter().enumerate() {
                if det.class != track.class {
                    continue;
                }
                let d = distance(c, det.bbox.centroid());
                if d <= self.cfg.gate_distance {
                    candidates.push((d, track.instance_id, di, ti));
                }
            }
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut det_to_track: Vec<Option<usize>> = vec![None; detections.len()];
        let mut track_taken = vec![false; self.tracks.len()];
        for (_, _, di, ti) in candidates {
            if det_to_track[di].is_none() && !track_taken[ti] {
                det_to_track[di] = Some(ti);
                track_taken[ti] = true;
            }
        }

        let support = self.cfg.support_frames(self.fps);
        let mut assigned = Vec::with_capacity(detections.len());
        for (di, det) in detections.iter().enumerate() {
            let ti = match det_to_track[di] {
                Some(ti) => ti,
                None => {
                    let id = self.next_id;
                    self.next_id += 1;
                    self.tracks.push(TrackedObject {
                        instance_id: id,
                        class: det.class,
                        raw_history: VecDeque::new(),
                        smoothed_box: det.bbox,
                        smoothed_history: VecDeque::new(),
                        frames_since_seen: 0,
                    });
                    track_taken.push(true);
                    self.tracks.len() - 1
                }
            };
            let track = &mut self.tracks[ti];
            track.raw_history.push_back((frame, det.bbox));
            while track.raw_history.front().is_some_and(|(f, _)| frame - f > support) {
                track.raw_history.pop_front();
            }
            track.frames_since_seen = 0;
            track.smoothed_box = smooth(track, self.fps, &self.cfg);
            track.smoothed_history.push_back((frame, track.smoothed_box));
            while track.smoothed_history.len() > self.history_len {
                track.smoothed_history.pop_front();
            }
            assigned.push(track.instance_id);
        }

        let max_lost = self.cfg.max_lost_frames;
        for (track, taken) in self.tracks.iter_mut().zip(&track_taken) {
            if !taken {
                track.frames_since_seen += 1;
            }
        }
        self.tracks.retain(|t| t.frames_since_seen <= max_lost);
        Ok(assigned)
    }

    /// Associate and return the smoothed boxes of the instances seen in this
    /// frame, sorted by instance id.
    pub fn step(&mut self, detections: &[Detection], frame: usize) -> Result<Vec<TrackedBox>> {
        let ids = self.associate(detections, frame)?;
        let mut out: Vec<TrackedBox> = ids
            .iter()
            .map(|id| {
                let t = self.track(*id).expect("assigned track is live");
                TrackedBox { instance_id: t.instance_id, class: t.class, bbox: t.smoothed_box }
            })
            .collect();
        out.sort_by_key(|t| t.instance_id);
        Ok(out)
    }

    /// Smoothed boxes of two instances over their longest common run of
    /// consecutive frames ending at `frame`, oldest first, at most `max_len` long.
    pub fn common_history(&self, a: u32, b: u32, frame: usize, max_len: usize) -> (Vec<Aabb>, Vec<Aabb>) {
        let (Some(ta), Some(tb)) = (self.track(a), self.track(b)) else {
            return (Vec::new(), Vec::new());
        };
        let mut ha = Vec::new();
        let mut hb = Vec::new();
        let mut ia = ta.smoothed_history.iter().rev();
        let mut ib = tb.smoothed_history.iter().rev();
        let mut expected = frame;
        while ha.len() < max_len {
            match (ia.next(), ib.next()) {
                (Some(&(fa, ba)), Some(&(fb, bb))) if fa == expected && fb == expected => {
                    ha.push(ba);
                    hb.push(bb);
                }
                _ => break,
            }
            if expected == 0 {
                break;
            }
            expected -= 1;
        }
        ha.reverse();
        hb.reverse();
        (ha, hb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube_at(x: f64) -> Aabb {
        Aabb::from_center_size([x, 0.0, 0.0], [40.0; 3])
    }

    fn det(class: ObjectClass, x: f64) -> Detection {
        Detection::new(class, cube_at(x))
    }

    #[test]
    fn cold_start_assigns_fresh_ids() {
        let mut t = Tracker::new(SmoothingConfig::default(), 30.0, 8);
        let ids = t
            .associate(&[det(ObjectClass::Cup, 0.0), det(ObjectClass::Bowl, 500.0), det(ObjectClass::Cup, 900.0)], 0)
            .unwrap();
        assert_eq!(ids, vec![0, 1, 2]);
    }

    #[test]
    fn nearby_detection_keeps_identity() {
        let mut t = Tracker::new(SmoothingConfig::default(), 30.0, 8);
        t.associate(&[det(ObjectClass::Cup, 0.0)], 0).unwrap();
        assert_eq!(t.associate(&[det(ObjectClass::Cup, 50.0)], 1).unwrap(), vec![0]);
    }

    #[test]
    fn class_mismatch_never_matches() {
        let mut t = Tracker::new(SmoothingConfig::default(), 30.0, 8);
        t.associate(&[det(ObjectClass::Cup, 0.0)], 0).unwrap();
        assert_eq!(t.associate(&[det(ObjectClass::Bowl, 0.0)], 1).unwrap(), vec![1]);
    }

    #[test]
    fn stale_tracks_retire_after_max_lost() {
        let cfg = SmoothingConfig { max_lost_frames: 2, ..Default::default() };
        let mut t = Tracker::new(cfg, 30.0, 8);
        t.associate(&[det(ObjectClass::Cup, 0.0)], 0).unwrap();
        t.associate(&[], 1).unwrap();
        t.associate(&[], 2).unwrap();
        assert_eq!(t.tracks().len(), 1);
        t.associate(&[], 3).unwrap();
        assert!(t.tracks().is_empty());
        // Ids are never reused.
        assert_eq!(t.associate(&[det(ObjectClass::Cup, 0.0)], 4).unwrap(), vec![1]);
    }

    #[test]
    fn frames_must_increase() {
        let mut t = Tracker::new(SmoothingConfig::default(), 30.0, 8);
        t.associate(&[det(ObjectClass::Cup, 0.0)], 3).unwrap();
        assert!(t.associate(&[det(ObjectClass::Cup, 0.0)], 3).is_err());
    }

    #[test]
    fn single_observation_smooths_to_itself() {
        let mut t = Tracker::new(SmoothingConfig::default(), 30.0, 8);
        let b = Aabb::new([1.5, -2.0, 3.25], [7.0, 8.0, 9.0]).unwrap();
        t.associate(&[Detection::new(ObjectClass::Knife, b)], 0).unwrap();
        assert_eq!(t.tracks()[0].smoothed_box, b);
    }

    #[test]
    fn common_history_stops_at_gaps() {
        let mut t = Tracker::new(SmoothingConfig::default(), 30.0, 8);
        t.associate(&[det(ObjectClass::Cup, 0.0), det(ObjectClass::Bowl, 500.0)], 0).unwrap();
        t.associate(&[det(ObjectClass::Cup, 0.0)], 1).unwrap();
        t.associate(&[det(ObjectClass::Cup, 0.0), det(ObjectClass::Bowl, 500.0)], 2).unwrap();
        t.associate(&[det(ObjectClass::Cup, 0.0), det(ObjectClass::Bowl, 500.0)], 3).unwrap();
        let (ha, hb) = t.common_history(0, 1, 3, 8);
        assert_eq!((ha.len(), hb.len()), (2, 2));
    }
}
