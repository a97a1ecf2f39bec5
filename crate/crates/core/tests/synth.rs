use std::path::Path;

use interdiff_core::condition::save_condition;
use interdiff_core::motion::{save_motion, MotionSequence, Skeleton};
use interdiff_core::synth::{
    build_dataset, gen_pair, ingest_external, load_dataset, write_dataset, Split, SynthSpec,
};
use interdiff_core::training::contact_mask;
use interdiff_core::Error;

fn quiet(lag: usize, gain: f64) -> SynthSpec {
    SynthSpec {
        frame_count: 96,
        listener_lag: lag,
        listener_gain: gain,
        noise_level: 0.0,
        step_probability: 0.0,
        ..SynthSpec::default()
    }
}

fn joint(m: &MotionSequence, name: &str) -> usize {
    m.skeleton().joint_index(name).unwrap()
}

/// Pearson correlation of `a[f]` with `b[f + lag]` over the overlap.
fn pearson_at(a: &[f64], b: &[f64], lag: usize) -> f64 {
    let n = a.len() - lag;
    let (x, y) = (&a[..n], &b[lag..]);
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let cov: f64 = x.iter().zip(y).map(|(p, q)| (p - mx) * (q - my)).sum();
    let vx: f64 = x.iter().map(|p| (p - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|q| (q - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn listener_head_trails_speaker_hands_by_the_planted_lag() {
    for lag in [0, 2, 4, 7] {
        for index in 0..3 {
            let p = gen_pair(&quiet(lag, 0.8), index).unwrap();
            let hand = p.speaker().joint_angular_speed(joint(p.speaker(), "left_hand"));
            let head = p.listener().joint_angular_speed(joint(p.listener(), "head"));
            let best = (0..=12)
                .max_by(|&a, &b| pearson_at(&hand, &head, a).total_cmp(&pearson_at(&hand, &head, b)))
                .unwrap();
            assert_eq!(best, lag, "sample {index}");
            assert!(pearson_at(&hand, &head, lag) > 0.999);
        }
    }
}

#[test]
fn unit_gain_without_lag_scales_the_speed_profile() {
    let p = gen_pair(&quiet(0, 1.0), 1).unwrap();
    let hand = p.speaker().joint_angular_speed(joint(p.speaker(), "right_hand"));
    let head = p.listener().joint_angular_speed(joint(p.listener(), "head"));
    let ratios: Vec<f64> = hand
        .iter()
        .zip(&head)
        .filter(|(h, _)| **h > 1e-4)
        .map(|(h, n)| n / h)
        .collect();
    assert!(ratios.len() > 10);
    for r in &ratios {
        assert!((r - ratios[0]).abs() < 1e-6, "{r} vs {}", ratios[0]);
    }
}

#[test]
fn feet_stay_planted_outside_scripted_steps() {
    let sk = Skeleton::desk();
    for step_probability in [0.0, 1.0] {
        let spec = SynthSpec {
            step_probability,
            ..SynthSpec::default()
        };
        let p = gen_pair(&spec, 2).unwrap();
        for m in [p.speaker(), p.listener()] {
            let pos = m.joint_positions();
            let mask = contact_mask(m);
            let mut grounded = 0;
            for f in 0..m.frame_count() - 1 {
                for (k, &foot) in sk.foot_joints().iter().enumerate() {
                    let v: f64 = (0..3).map(|c| (pos[f + 1][foot][c] - pos[f][foot][c]).powi(2)).sum();
                    if step_probability == 0.0 {
                        assert!(v < 1e-20);
                    }
                    if mask[f][k] {
                        grounded += 1;
                        assert!(v.sqrt() < 0.01);
                    }
                }
            }
            assert!(grounded > 0);
            if step_probability == 1.0 {
                assert!(mask.iter().flatten().any(|c| !c), "a scripted step lifts a foot");
            }
        }
    }
}

#[test]
fn role_switch_swaps_gesturing_halfway() {
    let spec = SynthSpec {
        role_switch: true,
        frame_count: 96,
        ..SynthSpec::default()
    };
    let p = gen_pair(&spec, 0).unwrap();
    let energy = |m: &MotionSequence, range: std::ops::Range<usize>| -> f64 {
        let s = m.joint_angular_speed(joint(m, "left_hand"));
        s[range].iter().sum()
    };
    assert!(energy(p.speaker(), 0..47) > 2.0 * energy(p.listener(), 0..47));
    assert!(energy(p.listener(), 49..95) > 2.0 * energy(p.speaker(), 49..95));
}

#[test]
fn datasets_are_byte_identical_and_reload() {
    let spec = SynthSpec {
        sample_count: 20,
        ..SynthSpec::default()
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        write_dataset(&build_dataset(&spec).unwrap(), d.path()).unwrap();
    }
    let read = |d: &Path, rel: &str| std::fs::read(d.join(rel)).unwrap();
    assert_eq!(read(dirs[0].path(), "manifest.jsonl"), read(dirs[1].path(), "manifest.jsonl"));
    for rel in ["motion/sample_00007_speaker.json", "motion/sample_00019_listener.json", "features/sample_00003.json"] {
        assert_eq!(read(dirs[0].path(), rel), read(dirs[1].path(), rel));
    }
    let loaded = load_dataset(dirs[0].path()).unwrap();
    assert_eq!(loaded.len(), 20);
    assert_eq!(
        [Split::Train, Split::Val, Split::Test].map(|s| loaded.count(s)),
        [16, 2, 2]
    );
}

fn write_triple(motion_dir: &Path, feature_dir: &Path, id: &str, listener_frames: usize) {
    let p = gen_pair(&SynthSpec::default(), 0).unwrap();
    save_motion(p.speaker(), motion_dir.join(format!("{id}_speaker.json"))).unwrap();
    let listener = interdiff_core::motion::retime(p.listener(), listener_frames).unwrap();
    save_motion(&listener, motion_dir.join(format!("{id}_listener.json"))).unwrap();
    save_condition(p.condition(), feature_dir.join(format!("{id}.json"))).unwrap();
}

#[test]
fn ingestion_aligns_lengths_and_keeps_aligned_clips() {
    let (m, f) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_triple(m.path(), f.path(), "aligned", 48);
    write_triple(m.path(), f.path(), "short", 30);
    let ds = ingest_external(m.path(), f.path()).unwrap();
    assert_eq!(ds.len(), 2);
    let original = gen_pair(&SynthSpec::default(), 0).unwrap();
    for e in ds.entries() {
        assert_eq!(e.pair.listener().frame_count(), 48);
        assert_eq!(e.pair.speaker().frame_count(), 48);
        if e.id == "aligned" {
            for (a, b) in e.pair.listener().rotations().iter().zip(original.listener().rotations()) {
                assert!(a.angle_to(*b) < 1e-6);
            }
        }
    }
}

#[test]
fn ingestion_names_incomplete_and_mismatched_samples() {
    let (m, f) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_triple(m.path(), f.path(), "whole", 48);
    write_triple(m.path(), f.path(), "partial", 48);
    std::fs::remove_file(m.path().join("partial_listener.json")).unwrap();
    match ingest_external(m.path(), f.path()) {
        Err(Error::Ingest { sample, message }) => {
            assert_eq!(sample, "partial");
            assert!(message.contains("partial_listener.json"));
        }
        other => panic!("expected an ingestion error, got {other:?}"),
    }

    let (m, f) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_triple(m.path(), f.path(), "odd", 48);
    let text = std::fs::read_to_string(m.path().join("odd_listener.json")).unwrap();
    std::fs::write(m.path().join("odd_listener.json"), text.replace("\"head\"", "\"skull\"")).unwrap();
    match ingest_external(m.path(), f.path()) {
        Err(Error::Ingest { sample, message }) => {
            assert_eq!(sample, "odd");
            assert!(message.contains("skeleton"));
        }
        other => panic!("expected an ingestion error, got {other:?}"),
    }
}
