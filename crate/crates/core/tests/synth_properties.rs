mod common;

use std::collections::BTreeMap;
use std::path::Path;

use common::*;
use defect_edf::features::ClassLabel;
use defect_edf::io::PatchFormat;
use defect_edf::synth::{
    generate_dataset, inject_defect, read_manifest, render_clean_patch, DefectKind, DefectSpec, GenerationConfig,
    PatternSpec,
};
use rand::Rng;

fn noise_free(frequency: f64, width: usize) -> PatternSpec {
    PatternSpec {
        frequency,
        pattern_width: width,
        noise_sigma: 0.0,
        phase: 0.1,
        ..PatternSpec::default()
    }
}

#[test]
fn clean_rows_are_identical_and_in_range() {
    let spec = noise_free(16.0, 2456);
    let p = render_clean_patch(&spec, 91, 1000, 0).unwrap();
    for r in 1..91 {
        assert_eq!(p.row(r), p.row(0));
    }
    let (b, a) = (spec.offset, spec.amplitude);
    assert!(p.pixels().iter().all(|&v| v >= b - a && v <= b + a));
}

#[test]
fn rows_repeat_with_the_fringe_period() {
    let spec = noise_free(64.0, 1024);
    let p = render_clean_patch(&spec, 91, 200, 0).unwrap();
    let period = 1024 / 64;
    for c in 0..91 - period {
        assert!((p.get(5, c) - p.get(5, c + period)).abs() < 1e-12);
    }
}

#[test]
fn zero_crossings_scale_with_frequency() {
    // Starting just before a crossing, 512 samples of whole periods hold
    // exactly 2f crossings.
    let crossings = |f: f64| {
        let spec = PatternSpec {
            phase: -0.1,
            ..noise_free(f, 512)
        };
        let p = render_clean_patch(&spec, 512, 0, 0).unwrap();
        p.row(0)
            .windows(2)
            .filter(|w| (w[0] - 0.5) * (w[1] - 0.5) < 0.0)
            .count()
    };
    assert_eq!(crossings(64.0), 8 * crossings(8.0));
}

#[test]
fn defects_change_only_their_support() {
    let mut r = rng(51);
    for _ in 0..20 {
        let spec = PatternSpec {
            frequency: [8.0, 16.0, 32.0, 64.0][r.random_range(0..4)],
            ..PatternSpec::default()
        };
        let origin = r.random_range(0..2000);
        let clean = render_clean_patch(&spec, 91, origin, r.random()).unwrap();
        let defect = DefectSpec {
            kind: if r.random_bool(0.5) {
                DefectKind::Crater
            } else {
                DefectKind::Dirt
            },
            center_row: r.random_range(0..91) as f64,
            center_col: r.random_range(0..91) as f64,
            radius: r.random_range(3.0..20.0),
            strength: r.random_range(0.1..3.0),
        };
        let out = inject_defect(&clean, &spec, origin, &defect).unwrap();
        for row in 0..91 {
            for col in 0..91 {
                let d = ((row as f64 - defect.center_row).powi(2) + (col as f64 - defect.center_col).powi(2)).sqrt();
                if d >= defect.radius {
                    assert_eq!(out.get(row, col), clean.get(row, col));
                }
            }
        }
    }
}

#[test]
fn centered_crater_touches_mid_row_within_radius() {
    let spec = noise_free(16.0, 2456);
    let clean = render_clean_patch(&spec, 91, 700, 0).unwrap();
    let crater = DefectSpec {
        kind: DefectKind::Crater,
        center_row: 45.0,
        center_col: 45.0,
        radius: 10.0,
        strength: 1.0,
    };
    let out = inject_defect(&clean, &spec, 700, &crater).unwrap();
    for c in 0..91 {
        let changed = out.get(45, c) != clean.get(45, c);
        if changed {
            assert!((c as f64 - 45.0).abs() < 10.0, "column {c}");
        }
    }
    assert!(out.row(45) != clean.row(45));
}

#[test]
fn zero_strength_is_the_identity() {
    let spec = PatternSpec::default();
    let clean = render_clean_patch(&spec, 91, 50, 9).unwrap();
    for kind in [DefectKind::Crater, DefectKind::Dirt] {
        let d = DefectSpec {
            kind,
            center_row: 45.0,
            center_col: 45.0,
            radius: 12.0,
            strength: 0.0,
        };
        assert_eq!(inject_defect(&clean, &spec, 50, &d).unwrap().pixels(), clean.pixels());
    }
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let key = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(key, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn datasets_are_reproducible_and_skip_empty_classes() {
    let mut config = GenerationConfig::default();
    config.side = 31;
    config.format = PatchFormat::Csv;
    config.counts = BTreeMap::from([
        (ClassLabel::DefectFree, 12),
        (ClassLabel::Crater, 0),
        (ClassLabel::Dirt, 5),
    ]);
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    generate_dataset(&config, 17, &a).unwrap();
    generate_dataset(&config, 17, &b).unwrap();
    let (ta, tb) = (read_tree(&a), read_tree(&b));
    assert_eq!(ta.len(), 17 + 2);
    assert_eq!(ta, tb);

    let manifest = read_manifest(&a).unwrap();
    assert_eq!(manifest.len(), 17);
    assert!(manifest.iter().all(|r| r.label != "crater"));
    assert_eq!(manifest.iter().filter(|r| r.label == "dirt").count(), 5);

    let c = tmp.path().join("c");
    generate_dataset(&config, 18, &c).unwrap();
    assert_ne!(read_tree(&c), ta);
}
