//! Synthetic suite construction and its path through the pipeline.

use std::collections::HashSet;

use bimanual_core::data::{build_suite, save_frames, load_frames, Suite};
use bimanual_core::pipeline::process_recording;
use bimanual_core::relations::RelationConfig;
use bimanual_core::tracking::SmoothingConfig;
use bimanual_core::vocab::ActionLabel;

#[test]
fn suite_size_is_the_product_of_its_axes() {
    let tasks: Vec<_> = Suite::standard_tasks().into_iter().take(5).collect();
    let recs = build_suite(4, &tasks, 4, 11).unwrap();
    assert_eq!(recs.len(), 80);
    let ids: HashSet<&str> = recs.iter().map(|r| r.id()).collect();
    assert_eq!(ids.len(), 80);
}

#[test]
fn same_seed_gives_an_identical_suite_and_subjects_differ() {
    let tasks = Suite::standard_tasks();
    let a = build_suite(2, &tasks, 1, 5).unwrap();
    let b = build_suite(2, &tasks, 1, 5).unwrap();
    assert_eq!(a, b);
    let per_subject = tasks.len();
    for t in 0..per_subject {
        let (s0, s1) = (&a[t], &a[per_subject + t]);
        assert_eq!(s0.task(), s1.task());
        assert_ne!(s0.frames.iter().map(|f| &f.detections).collect::<Vec<_>>(), s1.frames.iter().map(|f| &f.detections).collect::<Vec<_>>());
    }
    assert_ne!(build_suite(2, &tasks, 1, 6).unwrap(), a);
}

#[test]
fn one_subject_is_rejected() {
    assert!(build_suite(1, &Suite::standard_tasks(), 1, 0).is_err());
}

#[test]
fn generated_recordings_are_valid_and_feed_the_pipeline() {
    let recs = build_suite(2, &Suite::standard_tasks(), 2, 3).unwrap();
    let mut labels = HashSet::new();
    for rec in &recs {
        for (i, f) in rec.frames.iter().enumerate() {
            assert_eq!(f.frame, i);
            assert_eq!(f.recording, rec.id());
            for d in &f.detections {
                d.validate().unwrap();
            }
            labels.insert(f.right);
            labels.insert(f.left);
        }
        assert!(rec.frames.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        let g = process_recording(rec, &RelationConfig::default(), &SmoothingConfig::default()).unwrap();
        assert_eq!(g.graphs.len(), rec.frames.len());
        for graph in &g.graphs {
            graph.validate().unwrap();
        }
    }
    assert!(labels.len() >= 8, "{labels:?}");
    assert!(labels.contains(&ActionLabel::Idle) && labels.contains(&ActionLabel::Hold));
}

#[test]
fn recordings_round_trip_through_frame_files() {
    let dir = tempfile::tempdir().unwrap();
    let recs = build_suite(2, &Suite::standard_tasks()[..1], 1, 9).unwrap();
    let path = dir.path().join("r.frames");
    save_frames(&path, recs[0].fps, &recs[0].frames).unwrap();
    let back: Vec<_> = load_frames(&path).unwrap().collect::<Result<_, _>>().unwrap();
    assert_eq!(back, recs[0].frames);
}
