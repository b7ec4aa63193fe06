use std::fs;
use std::path::{Path, PathBuf};

use fedsurrogate_core::data::Sample;
use fedsurrogate_sim::idx::{encode_idx, load_idx};
use fedsurrogate_sim::IdxError;

fn samples() -> Vec<Sample> {
    (0..5)
        .map(|i| Sample { features: (0..6).map(|k| ((i * 6 + k) % 11) as f64 * 25.0 / 255.0).collect(), label: i % 3 })
        .collect()
}

fn write_pair(dir: &Path, images: &[u8], labels: &[u8]) -> (PathBuf, PathBuf) {
    let (ip, lp) = (dir.join("images.idx"), dir.join("labels.idx"));
    fs::write(&ip, images).unwrap();
    fs::write(&lp, labels).unwrap();
    (ip, lp)
}

#[test]
fn round_trips_a_well_formed_pair() {
    let dir = tempfile::tempdir().unwrap();
    let original = samples();
    let (images, labels) = encode_idx(&original, 2, 3);
    assert_eq!(&images[..4], &[0, 0, 8, 3]);
    assert_eq!(images.len(), 16 + 5 * 6);
    assert_eq!(labels.len(), 8 + 5);
    let (ip, lp) = write_pair(dir.path(), &images, &labels);
    let ds = load_idx(&ip, &lp, 3).unwrap();
    assert_eq!(ds.len(), 5);
    assert_eq!(ds.dim(), 6);
    for (a, b) in ds.samples().iter().zip(&original) {
        assert_eq!(a.label, b.label);
        for (x, y) in a.features.iter().zip(&b.features) {
            assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}

#[test]
fn rejects_bad_magic() {
    let dir = tempfile::tempdir().unwrap();
    let (mut images, labels) = encode_idx(&samples(), 2, 3);
    images[3] = 0x01;
    let (ip, lp) = write_pair(dir.path(), &images, &labels);
    match load_idx(&ip, &lp, 3) {
        Err(IdxError::BadMagic { found, expected, .. }) => {
            assert_eq!(found, 0x0801);
            assert_eq!(expected, 0x0803);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn rejects_truncated_files() {
    let dir = tempfile::tempdir().unwrap();
    let (images, labels) = encode_idx(&samples(), 2, 3);
    for cut in [2, 10, images.len() - 1] {
        let (ip, lp) = write_pair(dir.path(), &images[..cut], &labels);
        assert!(matches!(load_idx(&ip, &lp, 3), Err(IdxError::Truncated { .. })), "cut at {cut}");
    }
    let (ip, lp) = write_pair(dir.path(), &images, &labels[..labels.len() - 1]);
    assert!(matches!(load_idx(&ip, &lp, 3), Err(IdxError::Truncated { .. })));
}

#[test]
fn rejects_count_mismatch_and_bad_labels() {
    let dir = tempfile::tempdir().unwrap();
    let (images, _) = encode_idx(&samples(), 2, 3);
    let (_, labels) = encode_idx(&samples()[..4], 2, 3);
    let (ip, lp) = write_pair(dir.path(), &images, &labels);
    assert!(matches!(load_idx(&ip, &lp, 3), Err(IdxError::CountMismatch { images: 5, labels: 4 })));
    let (images, labels) = encode_idx(&samples(), 2, 3);
    let (ip, lp) = write_pair(dir.path(), &images, &labels);
    assert!(matches!(load_idx(&ip, &lp, 2), Err(IdxError::LabelOutOfRange { label: 2, classes: 2 })));
    assert!(matches!(load_idx(&dir.path().join("missing"), &lp, 3), Err(IdxError::Io { .. })));
}
