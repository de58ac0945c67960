//! Synthetic augmentation of skin-condition image datasets, evaluated per
//! Fitzpatrick skin-type group.
//!
//! The crate is organised along the pipeline:
//!
//! - [`manifest`]: ingest and query image manifests, register synthetic images.
//! - [`splitter`]: seed sampling, train/test composition, dose and spillover plans.
//! - [`genclient`]: prompt rendering, inpainting requests and generation backends.
//! - [`curation`]: durable review store, the select-four rule and its HTTP service.
//! - [`trainer`]: weighted sampling, transfer-learning style classifier training.
//! - [`evaluator`]: subgroup accuracy, confidence intervals and report tables.

pub mod curation;
pub mod digest;
pub mod evaluator;
pub mod fixture;
pub mod genclient;
pub mod manifest;
pub mod rng;
pub mod splitter;
pub mod trainer;

pub use manifest::{DatasetManifest, FstGroup, ImageRecord, Provenance};
pub use splitter::{AugmentationMode, SplitPlan, SplitSpec};

/// The seven conditions studied by default, in alphabetical order.
pub const DEFAULT_CONDITIONS: [&str; 7] = [
    "basal cell carcinoma",
    "folliculitis",
    "nematode infection",
    "neutrophilic dermatoses",
    "prurigo nodularis",
    "psoriasis",
    "squamous cell carcinoma",
];

/// Conditions that receive seed and synthetic augmentation by default.
pub const DEFAULT_AUGMENTED_CONDITIONS: [&str; 3] = [
    "neutrophilic dermatoses",
    "psoriasis",
    "squamous cell carcinoma",
];
