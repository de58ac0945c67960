//! Built-in datasets: the seven-condition count table and a small painted
//! dataset for end-to-end runs.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::digest::{content_id, sha256_hex};
use crate::genclient::stub::{condition_motif, encode_png, fst_tone, key_from, paint_patch, PatchStyle};
use crate::manifest::{DatasetManifest, ImageRecord, ManifestError};
use crate::DEFAULT_CONDITIONS;

/// Images per (condition, skin type I..VI), conditions in
/// [`DEFAULT_CONDITIONS`] order.
pub const TABLE1_COUNTS: [[usize; 6]; 7] = [
    [85, 156, 112, 76, 24, 7],
    [30, 97, 99, 51, 31, 9],
    [15, 56, 79, 60, 32, 12],
    [70, 115, 68, 51, 31, 15],
    [7, 28, 39, 56, 29, 9],
    [113, 232, 101, 91, 64, 21],
    [100, 180, 122, 71, 40, 23],
];

pub fn table1_count(condition: &str, fst: u8) -> Option<usize> {
    let row = DEFAULT_CONDITIONS.iter().position(|c| *c == condition)?;
    TABLE1_COUNTS[row].get(fst.checked_sub(1)? as usize).copied()
}

fn default_vocabulary() -> BTreeSet<String> {
    DEFAULT_CONDITIONS.iter().map(|c| c.to_string()).collect()
}

/// Manifest with exactly the seven-condition counts. Ids are stable hashes
/// of (condition, skin type, ordinal); there are no image payloads.
pub fn table1_manifest() -> DatasetManifest {
    let mut records = Vec::new();
    for (row, condition) in DEFAULT_CONDITIONS.iter().enumerate() {
        for fst in 1..=6u8 {
            for i in 0..TABLE1_COUNTS[row][fst as usize - 1] {
                let id = sha256_hex(format!("table1/{condition}/{fst}/{i}").as_bytes())[..32].to_string();
                records.push(ImageRecord::real(id.clone(), format!("images/{id}.jpg"), *condition, fst));
            }
        }
    }
    let mut m = DatasetManifest::new(records, default_vocabulary()).expect("fixture is valid");
    m.source_note = "seven-condition count fixture".into();
    m
}

/// Images per skin type I..VI in the smoke dataset.
pub const SMOKE_PER_FST: [usize; 6] = [5, 5, 2, 2, 5, 5];
pub const SMOKE_IMAGE_SIZE: u32 = 128;

/// Paint the smoke dataset into `dir`: `images/<id>.png` plus
/// `manifest.csv`. Returns the manifest path.
pub fn write_smoke_fixture(dir: &Path) -> Result<PathBuf, ManifestError> {
    let images = dir.join("images");
    fs::create_dir_all(&images)?;
    let mut records = Vec::new();
    for condition in DEFAULT_CONDITIONS {
        let (lesion, motif) = condition_motif(condition);
        for fst in 1..=6u8 {
            for i in 0..SMOKE_PER_FST[fst as usize - 1] {
                let style = PatchStyle {
                    base: fst_tone(fst),
                    lesion,
                    motif,
                };
                let key = key_from(&[b"smoke", condition.as_bytes(), &[fst], &(i as u32).to_le_bytes()]);
                let png = encode_png(&paint_patch(&style, SMOKE_IMAGE_SIZE, None, key));
                let id = content_id(&png);
                let rel = format!("images/{id}.png");
                fs::write(dir.join(&rel), &png)?;
                records.push(ImageRecord::real(id, rel, condition, fst));
            }
        }
    }
    let mut manifest = DatasetManifest::new(records, default_vocabulary())?;
    manifest.source_note = "painted smoke fixture".into();
    let path = dir.join("manifest.csv");
    manifest.save(&path)?;
    Ok(path)
}
