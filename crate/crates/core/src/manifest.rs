//! Image manifests: loading, validation, counting and synthetic registration.
//!
//! A manifest is an ordered list of [`ImageRecord`]s plus the label
//! vocabulary it was validated against. Manifests are plain values; every
//! operation returns a new manifest and leaves its input untouched.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curation::SelectionManifest;
use crate::genclient::{CandidateImage, PromptParts, ReviewState};

/// Column order of the manifest CSV.
pub const MANIFEST_COLUMNS: [&str; 7] = [
    "image_id",
    "uri",
    "condition",
    "fitzpatrick",
    "provenance",
    "parent_seed_id",
    "qc_flags",
];

/// Flag set on synthetic records whose skin type is taken from the prompt's
/// group descriptor rather than an annotation.
pub const FST_IMPUTED_FLAG: &str = "fst_imputed";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest header mismatch: expected column `{expected}` at position {position}, found `{found}`")]
    MissingColumn {
        expected: String,
        position: usize,
        found: String,
    },
    #[error("row {row}: invalid Fitzpatrick value `{value}` (expected 1-6)")]
    InvalidFst { row: u64, value: String },
    #[error("row {row}: duplicate image id `{id}`")]
    DuplicateId { row: u64, id: String },
    #[error("row {row}: unknown condition `{condition}`")]
    UnknownRowCondition { row: u64, condition: String },
    #[error("unknown condition `{0}`")]
    UnknownCondition(String),
    #[error("row {row}: invalid provenance `{value}`")]
    InvalidProvenance { row: u64, value: String },
    #[error("row {row}: {message}")]
    InvalidRecord { row: u64, message: String },
    #[error("candidate `{candidate}` refers to unknown seed `{seed}`")]
    UnknownSeed { candidate: String, seed: String },
    #[error("candidate `{0}` is not an accepted member of the selection")]
    UnacceptedCandidate(String),
    #[error("candidate `{candidate}`: {message}")]
    CandidateMismatch { candidate: String, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ManifestError> = std::result::Result<T, E>;

/// Pooled Fitzpatrick skin-type groups.
#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FstGroup {
    I_II,
    III_IV,
    V_VI,
}

impl FstGroup {
    pub const ALL: [FstGroup; 3] = [FstGroup::I_II, FstGroup::III_IV, FstGroup::V_VI];

    pub fn of(fst: u8) -> Option<FstGroup> {
        match fst {
            1 | 2 => Some(FstGroup::I_II),
            3 | 4 => Some(FstGroup::III_IV),
            5 | 6 => Some(FstGroup::V_VI),
            _ => None,
        }
    }

    pub fn members(self) -> [u8; 2] {
        match self {
            FstGroup::I_II => [1, 2],
            FstGroup::III_IV => [3, 4],
            FstGroup::V_VI => [5, 6],
        }
    }

    pub fn contains(self, fst: u8) -> bool {
        self.members().contains(&fst)
    }

    /// The other extreme; `None` for the middle group.
    pub fn opposite_extreme(self) -> Option<FstGroup> {
        match self {
            FstGroup::I_II => Some(FstGroup::V_VI),
            FstGroup::V_VI => Some(FstGroup::I_II),
            FstGroup::III_IV => None,
        }
    }

    pub fn is_extreme(self) -> bool {
        self != FstGroup::III_IV
    }

    /// Identifier form, as used in file names and JSON (`I_II`).
    pub fn key(self) -> &'static str {
        match self {
            FstGroup::I_II => "I_II",
            FstGroup::III_IV => "III_IV",
            FstGroup::V_VI => "V_VI",
        }
    }

    /// Display form (`I-II`).
    pub fn label(self) -> &'static str {
        match self {
            FstGroup::I_II => "I-II",
            FstGroup::III_IV => "III-IV",
            FstGroup::V_VI => "V-VI",
        }
    }

    /// Skin type stored on synthetic records of this group.
    pub fn imputed_fst(self) -> u8 {
        match self {
            FstGroup::I_II => 1,
            FstGroup::III_IV => 3,
            FstGroup::V_VI => 6,
        }
    }
}

impl fmt::Display for FstGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl std::str::FromStr for FstGroup {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().replace('-', "_").as_str() {
            "I_II" => Ok(FstGroup::I_II),
            "III_IV" => Ok(FstGroup::III_IV),
            "V_VI" => Ok(FstGroup::V_VI),
            other => Err(format!("unknown skin-type group `{other}`")),
        }
    }
}

pub fn roman(fst: u8) -> &'static str {
    match fst {
        1 => "I",
        2 => "II",
        3 => "III",
        4 => "IV",
        5 => "V",
        6 => "VI",
        _ => "?",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Seed,
    Synthetic,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Real => "real",
            Provenance::Seed => "seed",
            Provenance::Synthetic => "synthetic",
        }
    }

    /// Seeds are real photographs that have been given a role.
    pub fn is_real_image(self) -> bool {
        self != Provenance::Synthetic
    }
}

impl std::str::FromStr for Provenance {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "real" => Ok(Provenance::Real),
            "seed" => Ok(Provenance::Seed),
            "synthetic" => Ok(Provenance::Synthetic),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub uri: String,
    pub condition: String,
    pub fst: u8,
    pub provenance: Provenance,
    pub parent_seed_id: Option<String>,
    pub qc_flags: BTreeSet<String>,
}

impl ImageRecord {
    pub fn real(image_id: impl Into<String>, uri: impl Into<String>, condition: impl Into<String>, fst: u8) -> Self {
        ImageRecord {
            image_id: image_id.into(),
            uri: uri.into(),
            condition: condition.into(),
            fst,
            provenance: Provenance::Real,
            parent_seed_id: None,
            qc_flags: BTreeSet::new(),
        }
    }

    pub fn group(&self) -> FstGroup {
        FstGroup::of(self.fst).expect("validated record has fst in 1..=6")
    }
}

/// Normalise a condition label: trimmed, lowercase, single spaces.
pub fn normalize_label(label: &str) -> String {
    label.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub records: Vec<ImageRecord>,
    pub vocabulary: BTreeSet<String>,
    pub source_note: String,
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    image_id: String,
    uri: String,
    condition: String,
    fitzpatrick: String,
    provenance: String,
    parent_seed_id: String,
    qc_flags: String,
}

#[derive(Serialize)]
struct CsvRowOut<'a> {
    image_id: &'a str,
    uri: &'a str,
    condition: &'a str,
    fitzpatrick: u8,
    provenance: &'a str,
    parent_seed_id: &'a str,
    qc_flags: String,
}

fn parse_fst(raw: &str, row: u64) -> Result<u8> {
    match raw.trim().parse::<i64>() {
        Ok(v) if (1..=6).contains(&v) => Ok(v as u8),
        _ => Err(ManifestError::InvalidFst {
            row,
            value: raw.to_string(),
        }),
    }
}

/// Load a manifest CSV. With `vocabulary = None` the vocabulary is the set of
/// labels present in the file; otherwise rows with labels outside it are
/// rejected.
pub fn load_manifest(path: &Path, vocabulary: Option<&BTreeSet<String>>) -> Result<DatasetManifest> {
    let file = std::fs::File::open(path)?;
    let mut manifest = read_manifest(file, vocabulary)?;
    manifest.source_note = format!("loaded from {}", path.display());
    Ok(manifest)
}

pub fn read_manifest<R: Read>(reader: R, vocabulary: Option<&BTreeSet<String>>) -> Result<DatasetManifest> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for (position, expected) in MANIFEST_COLUMNS.iter().enumerate() {
        let found = headers.get(position).unwrap_or("").trim();
        if found != *expected {
            return Err(ManifestError::MissingColumn {
                expected: expected.to_string(),
                position,
                found: found.to_string(),
            });
        }
    }

    let mut records = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for result in rdr.deserialize::<CsvRow>() {
        let row: CsvRow = result?;
        // header is line 1
        let line = (records.len() + 2) as u64;
        let condition = normalize_label(&row.condition);
        if let Some(vocab) = vocabulary {
            if !vocab.contains(&condition) {
                return Err(ManifestError::UnknownRowCondition { row: line, condition });
            }
        }
        let fst = parse_fst(&row.fitzpatrick, line)?;
        let provenance: Provenance = row.provenance.trim().parse().map_err(|_| ManifestError::InvalidProvenance {
            row: line,
            value: row.provenance.clone(),
        })?;
        let image_id = row.image_id.trim().to_string();
        if image_id.is_empty() {
            return Err(ManifestError::InvalidRecord {
                row: line,
                message: "empty image_id".into(),
            });
        }
        if !seen.insert(image_id.clone()) {
            return Err(ManifestError::DuplicateId { row: line, id: image_id });
        }
        let parent = row.parent_seed_id.trim();
        let parent_seed_id = match (provenance, parent.is_empty()) {
            (Provenance::Synthetic, false) => Some(parent.to_string()),
            (Provenance::Synthetic, true) => {
                return Err(ManifestError::InvalidRecord {
                    row: line,
                    message: "synthetic record without parent_seed_id".into(),
                })
            }
            (_, true) => None,
            (_, false) => {
                return Err(ManifestError::InvalidRecord {
                    row: line,
                    message: "parent_seed_id set on a non-synthetic record".into(),
                })
            }
        };
        let qc_flags = row
            .qc_flags
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        records.push(ImageRecord {
            image_id,
            uri: row.uri.trim().to_string(),
            condition,
            fst,
            provenance,
            parent_seed_id,
            qc_flags,
        });
    }

    // Synthetic parents must be seed records of the same manifest.
    let provenance_of: HashMap<&str, Provenance> =
        records.iter().map(|r| (r.image_id.as_str(), r.provenance)).collect();
    for (idx, rec) in records.iter().enumerate() {
        if let Some(parent) = &rec.parent_seed_id {
            if provenance_of.get(parent.as_str()) != Some(&Provenance::Seed) {
                return Err(ManifestError::InvalidRecord {
                    row: (idx + 2) as u64,
                    message: format!("parent `{parent}` is not a seed record"),
                });
            }
        }
    }

    let vocabulary = match vocabulary {
        Some(v) => v.clone(),
        None => records.iter().map(|r| r.condition.clone()).collect(),
    };
    Ok(DatasetManifest {
        records,
        vocabulary,
        source_note: String::new(),
    })
}

/// Column mapping for the public Fitzpatrick 17k CSV.
const F17K_HASH_COLUMNS: [&str; 2] = ["md5hash", "hash"];
const F17K_FST_COLUMNS: [&str; 2] = ["fitzpatrick_scale", "fitzpatrick"];
const F17K_LABEL_COLUMN: &str = "label";

/// Result of mapping the public Fitzpatrick 17k CSV.
#[derive(Debug)]
pub struct Fitzpatrick17kImport {
    pub manifest: DatasetManifest,
    /// Rows whose skin type is unannotated (`-1` in the public file).
    pub skipped_unlabeled: usize,
}

/// Map the public Fitzpatrick 17k CSV into a manifest of real records.
/// Image locators become `<image_dir>/<hash>.jpg`.
pub fn load_fitzpatrick17k<R: Read>(reader: R, image_dir: &str) -> Result<Fitzpatrick17kImport> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |names: &[&str]| headers.iter().position(|h| names.contains(&h.trim()));
    let hash_col = find(&F17K_HASH_COLUMNS).ok_or_else(|| ManifestError::MissingColumn {
        expected: "md5hash".into(),
        position: 0,
        found: headers.iter().collect::<Vec<_>>().join(","),
    })?;
    let fst_col = find(&F17K_FST_COLUMNS).ok_or_else(|| ManifestError::MissingColumn {
        expected: "fitzpatrick_scale".into(),
        position: 0,
        found: headers.iter().collect::<Vec<_>>().join(","),
    })?;
    let label_col = find(&[F17K_LABEL_COLUMN]).ok_or_else(|| ManifestError::MissingColumn {
        expected: "label".into(),
        position: 0,
        found: headers.iter().collect::<Vec<_>>().join(","),
    })?;
    let qc_col = find(&["qc"]);

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut skipped = 0;
    for (idx, row) in rdr.records().enumerate() {
        let row = row?;
        let line = (idx + 2) as u64;
        let raw_fst = row.get(fst_col).unwrap_or("").trim();
        if raw_fst == "-1" {
            skipped += 1;
            continue;
        }
        let fst = parse_fst(raw_fst, line)?;
        let hash = row.get(hash_col).unwrap_or("").trim().to_string();
        if !seen.insert(hash.clone()) {
            return Err(ManifestError::DuplicateId { row: line, id: hash });
        }
        let mut rec = ImageRecord::real(
            hash.clone(),
            format!("{}/{}.jpg", image_dir.trim_end_matches('/'), hash),
            normalize_label(row.get(label_col).unwrap_or("")),
            fst,
        );
        if let Some(qc) = qc_col.and_then(|c| row.get(c)).map(str::trim).filter(|s| !s.is_empty()) {
            rec.qc_flags.insert(format!("qc:{qc}"));
        }
        records.push(rec);
    }
    let vocabulary = records.iter().map(|r| r.condition.clone()).collect();
    Ok(Fitzpatrick17kImport {
        manifest: DatasetManifest {
            records,
            vocabulary,
            source_note: "Fitzpatrick 17k public CSV".into(),
        },
        skipped_unlabeled: skipped,
    })
}

/// Counts keyed by (condition, skin type). Every (condition, type) pair in
/// scope has an entry, zero or not.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountTable {
    pub conditions: Vec<String>,
    pub fsts: Vec<u8>,
    pub cells: BTreeMap<String, BTreeMap<u8, usize>>,
}

impl CountTable {
    pub fn get(&self, condition: &str, fst: u8) -> usize {
        self.cells
            .get(condition)
            .and_then(|m| m.get(&fst))
            .copied()
            .unwrap_or(0)
    }

    pub fn group_count(&self, condition: &str, group: FstGroup) -> usize {
        group.members().iter().map(|&f| self.get(condition, f)).sum()
    }

    pub fn condition_total(&self, condition: &str) -> usize {
        self.cells.get(condition).map(|m| m.values().sum()).unwrap_or(0)
    }

    pub fn fst_total(&self, fst: u8) -> usize {
        self.cells.values().filter_map(|m| m.get(&fst)).sum()
    }

    pub fn total(&self) -> usize {
        self.cells.values().flat_map(|m| m.values()).sum()
    }

    /// Markdown table with skin types as rows and conditions as columns,
    /// plus row/column totals.
    pub fn render_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str("| FST |");
        for c in &self.conditions {
            out.push_str(&format!(" {c} |"));
        }
        out.push_str(" Total |\n|---|");
        for _ in &self.conditions {
            out.push_str("---:|");
        }
        out.push_str("---:|\n");
        for &fst in &self.fsts {
            out.push_str(&format!("| {} |", roman(fst)));
            for c in &self.conditions {
                out.push_str(&format!(" {} |", self.get(c, fst)));
            }
            out.push_str(&format!(" {} |\n", self.fst_total(fst)));
        }
        out.push_str("| Total |");
        for c in &self.conditions {
            out.push_str(&format!(" {} |", self.condition_total(c)));
        }
        out.push_str(&format!(" {} |\n", self.total()));
        out
    }
}

impl DatasetManifest {
    pub fn new(records: Vec<ImageRecord>, vocabulary: BTreeSet<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (idx, r) in records.iter().enumerate() {
            let row = (idx + 2) as u64;
            if FstGroup::of(r.fst).is_none() {
                return Err(ManifestError::InvalidFst {
                    row,
                    value: r.fst.to_string(),
                });
            }
            if !vocabulary.contains(&r.condition) {
                return Err(ManifestError::UnknownRowCondition {
                    row,
                    condition: r.condition.clone(),
                });
            }
            if !seen.insert(r.image_id.as_str()) {
                return Err(ManifestError::DuplicateId {
                    row,
                    id: r.image_id.clone(),
                });
            }
        }
        Ok(DatasetManifest {
            records,
            vocabulary,
            source_note: String::new(),
        })
    }

    pub fn empty(vocabulary: BTreeSet<String>) -> Self {
        DatasetManifest {
            records: Vec::new(),
            vocabulary,
            source_note: String::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.image_id == image_id)
    }

    pub fn index(&self) -> HashMap<&str, &ImageRecord> {
        self.records.iter().map(|r| (r.image_id.as_str(), r)).collect()
    }

    fn check_condition(&self, condition: &str) -> Result<()> {
        if self.vocabulary.contains(condition) {
            Ok(())
        } else {
            Err(ManifestError::UnknownCondition(condition.to_string()))
        }
    }

    /// Count records by (condition, skin type), optionally restricted to one
    /// condition and/or one skin-type group.
    pub fn count_by(&self, condition: Option<&str>, group: Option<FstGroup>) -> Result<CountTable> {
        let conditions: Vec<String> = match condition {
            Some(c) => {
                let c = normalize_label(c);
                self.check_condition(&c)?;
                vec![c]
            }
            None => self.vocabulary.iter().cloned().collect(),
        };
        let fsts: Vec<u8> = match group {
            Some(g) => g.members().to_vec(),
            None => (1..=6).collect(),
        };
        let mut cells: BTreeMap<String, BTreeMap<u8, usize>> = conditions
            .iter()
            .map(|c| (c.clone(), fsts.iter().map(|&f| (f, 0)).collect()))
            .collect();
        for r in &self.records {
            if let Some(row) = cells.get_mut(&r.condition) {
                if let Some(cell) = row.get_mut(&r.fst) {
                    *cell += 1;
                }
            }
        }
        Ok(CountTable {
            conditions,
            fsts,
            cells,
        })
    }

    /// Keep only records of the given conditions, preserving order. The
    /// vocabulary shrinks to the requested set.
    pub fn filter_conditions<S: AsRef<str>>(&self, conditions: &[S]) -> Result<DatasetManifest> {
        let mut wanted = BTreeSet::new();
        for c in conditions {
            let c = normalize_label(c.as_ref());
            self.check_condition(&c)?;
            wanted.insert(c);
        }
        let records = self
            .records
            .iter()
            .filter(|r| wanted.contains(&r.condition))
            .cloned()
            .collect();
        Ok(DatasetManifest {
            records,
            vocabulary: wanted,
            source_note: self.source_note.clone(),
        })
    }

    /// Re-tag the given real records as seeds.
    pub fn mark_seeds<'a, I>(&self, seed_ids: I) -> Result<DatasetManifest>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let ids: HashSet<&str> = seed_ids.into_iter().collect();
        let mut out = self.clone();
        let mut found = 0;
        for r in &mut out.records {
            if ids.contains(r.image_id.as_str()) {
                if r.provenance == Provenance::Synthetic {
                    return Err(ManifestError::CandidateMismatch {
                        candidate: r.image_id.clone(),
                        message: "synthetic record cannot be a seed".into(),
                    });
                }
                r.provenance = Provenance::Seed;
                found += 1;
            }
        }
        if found != ids.len() {
            let present: HashSet<&str> = self.records.iter().map(|r| r.image_id.as_str()).collect();
            let missing = ids.iter().find(|id| !present.contains(**id)).unwrap_or(&"");
            return Err(ManifestError::UnknownSeed {
                candidate: String::new(),
                seed: missing.to_string(),
            });
        }
        Ok(out)
    }

    /// Append accepted synthetic candidates as new records. Each inherits its
    /// condition from the prompt and its skin-type group from the prompt's
    /// skin descriptor, stored as the group's imputed value.
    pub fn register_synthetic(
        &self,
        images: &[CandidateImage],
        selection: &SelectionManifest,
    ) -> Result<DatasetManifest> {
        let accepted: HashMap<&str, &str> = selection
            .entries
            .iter()
            .flat_map(|(seed, ids)| ids.iter().map(move |id| (id.as_str(), seed.as_str())))
            .collect();
        let index = self.index();
        let mut out = self.clone();
        let mut seen: HashSet<String> = self.records.iter().map(|r| r.image_id.clone()).collect();

        for cand in images {
            let listed_seed = accepted
                .get(cand.candidate_id.as_str())
                .ok_or_else(|| ManifestError::UnacceptedCandidate(cand.candidate_id.clone()))?;
            if cand.review != ReviewState::Accepted || *listed_seed != cand.parent_seed_id {
                return Err(ManifestError::UnacceptedCandidate(cand.candidate_id.clone()));
            }
            let parent = index
                .get(cand.parent_seed_id.as_str())
                .filter(|p| p.provenance == Provenance::Seed)
                .ok_or_else(|| ManifestError::UnknownSeed {
                    candidate: cand.candidate_id.clone(),
                    seed: cand.parent_seed_id.clone(),
                })?;
            let parts = PromptParts::parse(&cand.prompt).map_err(|e| ManifestError::CandidateMismatch {
                candidate: cand.candidate_id.clone(),
                message: e.to_string(),
            })?;
            let condition = normalize_label(&parts.condition);
            self.check_condition(&condition)?;
            let group = parts.skin_descriptor.group();
            if condition != parent.condition || condition != selection.condition {
                return Err(ManifestError::CandidateMismatch {
                    candidate: cand.candidate_id.clone(),
                    message: format!(
                        "prompt condition `{condition}` differs from seed `{}` / selection `{}`",
                        parent.condition, selection.condition
                    ),
                });
            }
            if group != selection.target_group {
                return Err(ManifestError::CandidateMismatch {
                    candidate: cand.candidate_id.clone(),
                    message: format!(
                        "prompt skin group {group} differs from selection group {}",
                        selection.target_group
                    ),
                });
            }
            if !seen.insert(cand.candidate_id.clone()) {
                return Err(ManifestError::DuplicateId {
                    row: (out.records.len() + 2) as u64,
                    id: cand.candidate_id.clone(),
                });
            }
            out.records.push(ImageRecord {
                image_id: cand.candidate_id.clone(),
                uri: cand.payload_uri.clone(),
                condition,
                fst: group.imputed_fst(),
                provenance: Provenance::Synthetic,
                parent_seed_id: Some(cand.parent_seed_id.clone()),
                qc_flags: BTreeSet::from([FST_IMPUTED_FLAG.to_string()]),
            });
        }
        Ok(out)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        if self.records.is_empty() {
            wtr.write_record(MANIFEST_COLUMNS)?;
        }
        for r in &self.records {
            wtr.serialize(CsvRowOut {
                image_id: &r.image_id,
                uri: &r.uri,
                condition: &r.condition,
                fitzpatrick: r.fst,
                provenance: r.provenance.as_str(),
                parent_seed_id: r.parent_seed_id.as_deref().unwrap_or(""),
                qc_flags: r.qc_flags.iter().cloned().collect::<Vec<_>>().join(";"),
            })?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}
