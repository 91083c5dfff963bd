//! Run configuration text format and the dataset manifest.

mod common;

use std::path::{Path, PathBuf};

use smgaa_core::config::{parse_kv_text, RunConfig};
use smgaa_core::features::{Duration, FeatureKind, Label};
use smgaa_core::degrade::Condition;
use smgaa_core::manifest::{Manifest, ManifestEntry};
use smgaa_core::model::{ModelConfig, Variant};

#[test]
fn kv_text_ignores_comments_and_reports_bad_lines_by_number() {
    let text = "\n# full-line comment\n a = 1 \nb=two # trailing comment\n\nc = spaced value\n";
    let pairs = parse_kv_text(text).unwrap();
    assert_eq!(
        pairs,
        vec![
            ("a".to_string(), "1".to_string()),
            ("b".to_string(), "two".to_string()),
            ("c".to_string(), "spaced value".to_string()),
        ]
    );
    let err = parse_kv_text("a = 1\nnot a pair\n").unwrap_err().to_string();
    assert!(err.contains("line 2"), "error names the line: {err}");
}

#[test]
fn run_config_round_trips_through_its_text_form() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.conf");
    let mut config = RunConfig::default();
    config.model = ModelConfig::reduced().with_variant(Variant::NoFcem);
    config.train.batch_size = 12;
    config.train.lr_max = 5e-4;
    config.feature = FeatureKind::Cqcc;
    config.write_resolved(&path).unwrap();

    let back = RunConfig::load(&path).unwrap();
    assert_eq!(back.model, config.model);
    assert_eq!(back.feature, FeatureKind::Cqcc);
    assert_eq!(back.train.batch_size, 12);
    assert_eq!(back.train.lr_max, 5e-4);
    assert_eq!(back.train.seed, 0, "the seed travels on the command line, not the file");
}

#[test]
fn overlay_starts_from_defaults_and_rejects_unknown_keys() {
    let pairs = parse_kv_text("train.max_epochs = 9\nmodel.kappa = 4\nfeature = lfcc\n").unwrap();
    let config = RunConfig::from_kv_pairs(&pairs).unwrap();
    assert_eq!(config.train.max_epochs, 9);
    assert_eq!(config.model.kappa, 4);
    assert_eq!(config.feature, FeatureKind::Lfcc);
    let default = RunConfig::default();
    assert_eq!(config.train.batch_size, default.train.batch_size, "untouched keys keep defaults");
    assert_eq!(config.model.cfeb_channels, default.model.cfeb_channels);

    let bad = parse_kv_text("model.kapa = 4\n").unwrap();
    let err = RunConfig::from_kv_pairs(&bad).unwrap_err().to_string();
    assert!(err.contains("model.kapa"), "unknown key named: {err}");

    let bad = parse_kv_text("train.batch_size = many\n").unwrap();
    assert!(RunConfig::from_kv_pairs(&bad).is_err(), "non-numeric value rejected");

    let bad = parse_kv_text("model.variant = nonesuch\n").unwrap();
    assert!(RunConfig::from_kv_pairs(&bad).is_err(), "unknown variant rejected");

    // values must still satisfy the structural checks
    let bad = parse_kv_text("model.input_f = 7\n").unwrap();
    assert!(RunConfig::from_kv_pairs(&bad).is_err(), "bin count must split into bands");
}

#[test]
fn manifest_round_trips_and_resolves_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.csv");
    let manifest = Manifest {
        entries: vec![
            ManifestEntry {
                id: "0.5s_bona_fide_0000".into(),
                path: PathBuf::from("clips/a.wav"),
                duration: Duration::Half,
                label: Label::BonaFide,
                condition: Condition::C0,
            },
            ManifestEntry {
                id: "2.0s_spoof_0001".into(),
                path: PathBuf::from("/abs/b.wav"),
                duration: Duration::Two,
                label: Label::Spoof,
                condition: Condition::C3,
            },
        ],
    };
    manifest.validate().unwrap();
    manifest.write_csv(&path).unwrap();
    let back = Manifest::read_csv(&path).unwrap();
    assert_eq!(back.entries.len(), 2);
    assert_eq!(back.entries[0].id, manifest.entries[0].id);
    assert_eq!(back.entries[0].duration, Duration::Half);
    assert_eq!(back.entries[0].condition, Condition::C0);
    assert_eq!(back.entries[1].label, Label::Spoof);
    assert_eq!(back.entries[1].condition, Condition::C3);

    let base = Path::new("/data");
    assert_eq!(back.entries[0].resolved_path(base), Path::new("/data/clips/a.wav"));
    assert_eq!(back.entries[1].resolved_path(base), Path::new("/abs/b.wav"), "absolute wins");
}

#[test]
fn manifest_rejects_duplicates_and_blanks() {
    let entry = ManifestEntry {
        id: "x".into(),
        path: PathBuf::from("a.wav"),
        duration: Duration::Half,
        label: Label::Spoof,
        condition: Condition::C0,
    };
    let dup = Manifest { entries: vec![entry.clone(), entry.clone()] };
    assert!(dup.validate().is_err(), "duplicate ids");

    let mut blank = entry.clone();
    blank.id = String::new();
    assert!(Manifest { entries: vec![blank] }.validate().is_err(), "empty id");

    let mut nopath = entry;
    nopath.path = PathBuf::new();
    assert!(Manifest { entries: vec![nopath] }.validate().is_err(), "empty path");
}
