//! Seed sampling and train/test composition by skin-type group.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curation::SelectionManifest;
use crate::manifest::{DatasetManifest, FstGroup, ImageRecord, Provenance};
use crate::rng::seeded_shuffle;

/// Doses used by the reference protocol.
pub const PROTOCOL_DOSES: [u32; 4] = [2, 8, 16, 32];
pub const SPILLOVER_DOSE: u32 = 32;

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("invalid split spec: {0}")]
    InvalidSpec(String),
    #[error("{condition} / {group}: requested {requested} seeds but only {available} real images exist (short by {})", requested - available)]
    InsufficientPool {
        condition: String,
        group: FstGroup,
        requested: usize,
        available: usize,
    },
    #[error("{condition}: dose {needed} needs that many accepted synthetic images, found {available}")]
    InsufficientSynthetics {
        condition: String,
        needed: usize,
        available: usize,
    },
    #[error("seed `{seed}` is in group {found}, expected {expected}")]
    SeedGroupMismatch {
        seed: String,
        expected: FstGroup,
        found: FstGroup,
    },
    #[error("seed `{seed}` is not a usable {condition} record in the manifest")]
    UnknownSeed { seed: String, condition: String },
    #[error("plan references unknown record `{0}`")]
    UnknownRecord(String),
    #[error(transparent)]
    Manifest(#[from] crate::manifest::ManifestError),
}

pub type Result<T, E = SplitError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationMode {
    FitzOnly,
    Seed,
    DalleAndSeed,
}

impl AugmentationMode {
    pub const ALL: [AugmentationMode; 3] = [
        AugmentationMode::FitzOnly,
        AugmentationMode::Seed,
        AugmentationMode::DalleAndSeed,
    ];

    pub fn key(self) -> &'static str {
        match self {
            AugmentationMode::FitzOnly => "fitz_only",
            AugmentationMode::Seed => "seed",
            AugmentationMode::DalleAndSeed => "dalle_and_seed",
        }
    }

    /// Column heading in rendered tables.
    pub fn heading(self) -> &'static str {
        match self {
            AugmentationMode::FitzOnly => "Fitzpatrick",
            AugmentationMode::Seed => "+Seed",
            AugmentationMode::DalleAndSeed => "+Synthetic & Seed",
        }
    }
}

impl fmt::Display for AugmentationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl std::str::FromStr for AugmentationMode {
    type Err = SplitError;

    fn from_str(s: &str) -> Result<Self> {
        AugmentationMode::ALL
            .into_iter()
            .find(|m| m.key() == s)
            .ok_or_else(|| SplitError::InvalidSpec(format!("unknown mode `{s}`")))
    }
}

/// Which result table a plan feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    #[default]
    Modes,
    Dose,
    Spillover,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_group: FstGroup,
    pub conditions: BTreeSet<String>,
    pub mode: AugmentationMode,
    pub dose: u32,
    pub augmented_conditions: BTreeSet<String>,
    pub rng_seed: u64,
    #[serde(default)]
    pub experiment: Experiment,
}

impl SplitSpec {
    pub fn fitz_only<S: AsRef<str>>(train_group: FstGroup, conditions: &[S], rng_seed: u64) -> SplitSpec {
        SplitSpec {
            train_group,
            conditions: conditions.iter().map(|c| c.as_ref().to_string()).collect(),
            mode: AugmentationMode::FitzOnly,
            dose: 0,
            augmented_conditions: BTreeSet::new(),
            rng_seed,
            experiment: Experiment::Modes,
        }
    }

    pub fn augmented(mut self, mode: AugmentationMode, condition: &str, dose: u32) -> SplitSpec {
        self.mode = mode;
        self.dose = if mode == AugmentationMode::DalleAndSeed { dose } else { 0 };
        self.augmented_conditions = if mode == AugmentationMode::FitzOnly {
            BTreeSet::new()
        } else {
            BTreeSet::from([condition.to_string()])
        };
        self
    }

    pub fn with_experiment(mut self, experiment: Experiment) -> SplitSpec {
        self.experiment = experiment;
        self
    }

    /// Group the seeds and synthetic images come from.
    pub fn seed_group(&self) -> FstGroup {
        self.train_group.opposite_extreme().unwrap_or(FstGroup::V_VI)
    }

    /// Groups evaluated by this spec, ascending.
    pub fn test_groups(&self) -> Vec<FstGroup> {
        FstGroup::ALL.into_iter().filter(|g| *g != self.train_group).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(SplitError::InvalidSpec(m));
        if !self.train_group.is_extreme() {
            return invalid(format!("train group must be I_II or V_VI, got {}", self.train_group.key()));
        }
        if self.conditions.is_empty() {
            return invalid("no conditions".into());
        }
        if let Some(c) = self.augmented_conditions.iter().find(|c| !self.conditions.contains(*c)) {
            return invalid(format!("augmented condition `{c}` is not among the trained conditions"));
        }
        match self.mode {
            AugmentationMode::FitzOnly if self.dose != 0 || !self.augmented_conditions.is_empty() => {
                invalid("fitz_only takes no dose and no augmented conditions".into())
            }
            AugmentationMode::Seed if self.dose != 0 => invalid("seed mode takes no synthetic dose".into()),
            AugmentationMode::Seed | AugmentationMode::DalleAndSeed if self.augmented_conditions.is_empty() => {
                invalid(format!("{} needs at least one augmented condition", self.mode))
            }
            _ => Ok(()),
        }
    }

    /// Non-fatal deviations from the reference protocol.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.dose != 0 && !PROTOCOL_DOSES.contains(&self.dose) {
            out.push(format!("dose {} is outside the reference set {PROTOCOL_DOSES:?}", self.dose));
        }
        out
    }
}

/// Seed image ids per condition.
pub type SeedSets = BTreeMap<String, Vec<String>>;

/// Draw `k` seeds for `(condition, extreme)`. The pool is sorted by id before
/// a seeded shuffle so manifest row order does not matter.
pub fn sample_seeds(
    manifest: &DatasetManifest,
    condition: &str,
    extreme: FstGroup,
    k: usize,
    rng_seed: u64,
) -> Result<Vec<ImageRecord>> {
    if !extreme.is_extreme() {
        return Err(SplitError::InvalidSpec(format!("seeds come from I_II or V_VI, not {}", extreme.key())));
    }
    if !manifest.vocabulary.contains(condition) {
        return Err(crate::manifest::ManifestError::UnknownCondition(condition.to_string()).into());
    }
    let mut pool: Vec<&ImageRecord> = manifest
        .records
        .iter()
        .filter(|r| r.condition == condition && r.provenance == Provenance::Real && r.group() == extreme)
        .collect();
    if pool.len() < k {
        return Err(SplitError::InsufficientPool {
            condition: condition.to_string(),
            group: extreme,
            requested: k,
            available: pool.len(),
        });
    }
    pool.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    seeded_shuffle(&mut pool, rng_seed, &["seeds", condition, extreme.key()]);
    Ok(pool
        .into_iter()
        .take(k)
        .map(|r| ImageRecord {
            provenance: Provenance::Seed,
            ..r.clone()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub spec: SplitSpec,
    pub train: Vec<ImageRecord>,
    pub test_by_group: BTreeMap<FstGroup, Vec<ImageRecord>>,
    pub seed_ids: BTreeSet<String>,
}

/// Serialised form of a plan (`plan.json`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub spec: SplitSpec,
    pub train: Vec<String>,
    pub test: BTreeMap<FstGroup, Vec<String>>,
    pub seed_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
}

impl SplitPlan {
    pub fn test_ids(&self) -> BTreeSet<&str> {
        self.test_by_group
            .values()
            .flatten()
            .map(|r| r.image_id.as_str())
            .collect()
    }

    pub fn test_records(&self) -> impl Iterator<Item = (FstGroup, &ImageRecord)> {
        self.test_by_group
            .iter()
            .flat_map(|(g, recs)| recs.iter().map(move |r| (*g, r)))
    }

    pub fn synthetic_ids(&self) -> BTreeSet<&str> {
        self.train
            .iter()
            .filter(|r| r.provenance == Provenance::Synthetic)
            .map(|r| r.image_id.as_str())
            .collect()
    }

    pub fn test_count(&self, condition: &str, group: FstGroup) -> usize {
        self.test_by_group
            .get(&group)
            .map_or(0, |recs| recs.iter().filter(|r| r.condition == condition).count())
    }

    pub fn to_document(&self, config_digest: Option<String>) -> PlanDocument {
        PlanDocument {
            spec: self.spec.clone(),
            train: self.train.iter().map(|r| r.image_id.clone()).collect(),
            test: self
                .test_by_group
                .iter()
                .map(|(g, recs)| (*g, recs.iter().map(|r| r.image_id.clone()).collect()))
                .collect(),
            seed_ids: self.seed_ids.iter().cloned().collect(),
            config_digest,
        }
    }

    /// Resolve a document against the manifest it was composed from.
    pub fn from_document(doc: &PlanDocument, manifest: &DatasetManifest) -> Result<SplitPlan> {
        let index = manifest.index();
        let resolve = |ids: &[String]| -> Result<Vec<ImageRecord>> {
            ids.iter()
                .map(|id| {
                    index
                        .get(id.as_str())
                        .map(|r| (*r).clone())
                        .ok_or_else(|| SplitError::UnknownRecord(id.clone()))
                })
                .collect()
        };
        Ok(SplitPlan {
            spec: doc.spec.clone(),
            train: resolve(&doc.train)?,
            test_by_group: doc
                .test
                .iter()
                .map(|(g, ids)| Ok((*g, resolve(ids)?)))
                .collect::<Result<_>>()?,
            seed_ids: doc.seed_ids.iter().cloned().collect(),
        })
    }
}

fn check_seeds<'m>(
    index: &HashMap<&str, &'m ImageRecord>,
    seeds: &SeedSets,
    expected: FstGroup,
) -> Result<BTreeMap<String, Vec<&'m ImageRecord>>> {
    let mut out = BTreeMap::new();
    for (condition, ids) in seeds {
        let mut recs = Vec::with_capacity(ids.len());
        for id in ids {
            let rec = index
                .get(id.as_str())
                .filter(|r| r.condition == *condition && r.provenance != Provenance::Synthetic)
                .ok_or_else(|| SplitError::UnknownSeed {
                    seed: id.clone(),
                    condition: condition.clone(),
                })?;
            if rec.group() != expected {
                return Err(SplitError::SeedGroupMismatch {
                    seed: id.clone(),
                    expected,
                    found: rec.group(),
                });
            }
            recs.push(*rec);
        }
        out.insert(condition.clone(), recs);
    }
    Ok(out)
}

/// Accepted synthetic records for `condition` in the seed group, in
/// (seed id, selection position) order.
fn synthetic_pool<'m>(
    index: &HashMap<&str, &'m ImageRecord>,
    selections: &[SelectionManifest],
    condition: &str,
    group: FstGroup,
    seed_ids: &BTreeSet<&str>,
) -> Vec<&'m ImageRecord> {
    let mut pool = Vec::new();
    for sel in selections
        .iter()
        .filter(|s| s.condition == condition && s.target_group == group)
    {
        for (seed, ids) in &sel.entries {
            if !seed_ids.contains(seed.as_str()) {
                continue;
            }
            for id in ids {
                if let Some(rec) = index.get(id.as_str()) {
                    if rec.provenance == Provenance::Synthetic
                        && rec.condition == condition
                        && rec.group() == group
                        && rec.parent_seed_id.as_deref() == Some(seed.as_str())
                    {
                        pool.push(*rec);
                    }
                }
            }
        }
    }
    pool
}

/// Materialise a split. `seeds` lists every seed drawn for the experiment;
/// all of them leave the test sets regardless of mode, and those of
/// augmented conditions join the training set from `seed` mode upwards.
pub fn compose_split(
    manifest: &DatasetManifest,
    spec: &SplitSpec,
    seeds: &SeedSets,
    selections: &[SelectionManifest],
) -> Result<SplitPlan> {
    spec.validate()?;
    for c in &spec.conditions {
        if !manifest.vocabulary.contains(c) {
            return Err(crate::manifest::ManifestError::UnknownCondition(c.clone()).into());
        }
    }
    let index = manifest.index();
    let seed_group = spec.seed_group();
    let seed_recs = check_seeds(&index, seeds, seed_group)?;
    let seed_ids: BTreeSet<String> = seeds.values().flatten().cloned().collect();

    let mut train: Vec<ImageRecord> = manifest
        .records
        .iter()
        .filter(|r| {
            r.provenance != Provenance::Synthetic
                && r.group() == spec.train_group
                && spec.conditions.contains(&r.condition)
        })
        .cloned()
        .collect();

    if spec.mode != AugmentationMode::FitzOnly {
        for condition in &spec.augmented_conditions {
            let recs = seed_recs.get(condition).map(Vec::as_slice).unwrap_or(&[]);
            train.extend(recs.iter().map(|r| ImageRecord {
                provenance: Provenance::Seed,
                ..(*r).clone()
            }));
        }
    }

    if spec.mode == AugmentationMode::DalleAndSeed {
        for condition in &spec.augmented_conditions {
            let parents: BTreeSet<&str> = seeds
                .get(condition)
                .map(|ids| ids.iter().map(String::as_str).collect())
                .unwrap_or_default();
            let mut pool = synthetic_pool(&index, selections, condition, seed_group, &parents);
            let needed = spec.dose as usize;
            if pool.len() < needed {
                return Err(SplitError::InsufficientSynthetics {
                    condition: condition.clone(),
                    needed,
                    available: pool.len(),
                });
            }
            // stable (seed, position) order, then one shuffle per condition;
            // every dose takes a prefix of the same permutation
            pool.sort_by_key(|r| r.parent_seed_id.clone());
            seeded_shuffle(&mut pool, spec.rng_seed, &["synthetic", condition, seed_group.key()]);
            train.extend(pool.into_iter().take(needed).cloned());
        }
    }
    train.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    train.dedup_by(|a, b| a.image_id == b.image_id);

    let mut test_by_group = BTreeMap::new();
    for group in spec.test_groups() {
        let mut recs: Vec<ImageRecord> = manifest
            .records
            .iter()
            .filter(|r| {
                r.provenance != Provenance::Synthetic
                    && r.group() == group
                    && spec.conditions.contains(&r.condition)
                    && !seed_ids.contains(&r.image_id)
            })
            .cloned()
            .collect();
        recs.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        test_by_group.insert(group, recs);
    }

    for w in spec.warnings() {
        tracing::warn!("{w}");
    }
    Ok(SplitPlan {
        spec: spec.clone(),
        train,
        test_by_group,
        seed_ids,
    })
}

/// One spec per dose, otherwise identical, so synthetic subsets nest.
pub fn dose_series(spec: &SplitSpec, doses: &[u32]) -> Result<Vec<SplitSpec>> {
    if spec.mode != AugmentationMode::DalleAndSeed {
        return Err(SplitError::InvalidSpec("dose series needs dalle_and_seed mode".into()));
    }
    doses
        .iter()
        .map(|&dose| {
            let s = SplitSpec {
                dose,
                experiment: Experiment::Dose,
                ..spec.clone()
            };
            s.validate()?;
            Ok(s)
        })
        .collect()
}

/// A fitz-only baseline followed by one single-condition augmentation per
/// condition in `base.augmented_conditions`, all over `all_conditions`.
pub fn spillover_plans<S: AsRef<str>>(base: &SplitSpec, all_conditions: &[S]) -> Vec<SplitSpec> {
    let conditions: BTreeSet<String> = all_conditions.iter().map(|c| c.as_ref().to_string()).collect();
    let baseline = SplitSpec {
        train_group: base.train_group,
        conditions: conditions.clone(),
        mode: AugmentationMode::FitzOnly,
        dose: 0,
        augmented_conditions: BTreeSet::new(),
        rng_seed: base.rng_seed,
        experiment: Experiment::Spillover,
    };
    let mut out = vec![baseline.clone()];
    for c in &base.augmented_conditions {
        out.push(SplitSpec {
            mode: AugmentationMode::DalleAndSeed,
            dose: SPILLOVER_DOSE,
            augmented_conditions: BTreeSet::from([c.clone()]),
            ..baseline.clone()
        });
    }
    out
}
