//! Classifier training on top of a frozen feature extractor.
//!
//! The backbone is a capability: turn a preprocessed image into a feature
//! vector. Only a small randomly initialised convolutional extractor ships
//! here; a linear softmax head is trained on its standardised features with
//! class-balanced sampling.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::RgbImage;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::{id_list_digest, json_digest};
use crate::manifest::ImageRecord;
use crate::rng::{rng_for, PipelineRng};
use crate::splitter::SplitPlan;

pub const TINY_CONV: &str = "tiny-conv";

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("backbone `{0}` is not available in this build (supported: tiny-conv)")]
    UnsupportedBackbone(String),
    #[error("class `{0}` has no training images")]
    EmptyClass(String),
    #[error("training needs at least two classes, found {0}")]
    DegenerateLabels(usize),
    #[error("payload for `{image_id}` not found at {}", path.display())]
    MissingPayload { image_id: String, path: PathBuf },
    #[error("cannot decode payload for `{image_id}`: {message}")]
    PayloadDecode { image_id: String, message: String },
    #[error("model artifact: {0}")]
    Artifact(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = TrainerError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
    Sgd,
}

/// One preprocessing step. Geometric steps act on the decoded RGB image,
/// `normalize` maps 0..255 to `(x / 255 - mean) / std` per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Transform {
    /// Scale so the shorter side equals `size`.
    Resize { size: u32 },
    CenterCrop { size: u32 },
    /// Applied only while training.
    RandomHorizontalFlip { p: f64 },
    Normalize { mean: [f32; 3], std: [f32; 3] },
}

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default = "default_backbone")]
    pub backbone: String,
    #[serde(default = "default_epochs")]
    pub epochs: u32,
    #[serde(default = "default_batch_size")]
    pub batch_size: u32,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_optimizer")]
    pub optimizer: Optimizer,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_input_size")]
    pub input_size: u32,
    #[serde(default = "default_transforms")]
    pub transforms: Vec<Transform>,
    /// Backbone layers left trainable, counted from the top. 0 freezes the
    /// whole extractor.
    #[serde(default)]
    pub trainable_backbone_layers: u32,
    /// Filters in the tiny extractor.
    #[serde(default = "default_width")]
    pub backbone_width: u32,
}

fn default_backbone() -> String {
    TINY_CONV.into()
}
fn default_epochs() -> u32 {
    10
}
fn default_batch_size() -> u32 {
    32
}
fn default_lr() -> f64 {
    1e-3
}
fn default_optimizer() -> Optimizer {
    Optimizer::Adam
}
fn default_input_size() -> u32 {
    64
}
fn default_width() -> u32 {
    16
}
fn default_transforms() -> Vec<Transform> {
    let size = default_input_size();
    vec![
        Transform::Resize { size },
        Transform::CenterCrop { size },
        Transform::RandomHorizontalFlip { p: 0.5 },
        Transform::Normalize {
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
        },
    ]
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            backbone: default_backbone(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            learning_rate: default_lr(),
            optimizer: default_optimizer(),
            rng_seed: 0,
            input_size: default_input_size(),
            transforms: default_transforms(),
            trainable_backbone_layers: 0,
            backbone_width: default_width(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let invalid = |m: &str| Err(TrainerError::InvalidConfig(m.to_string()));
        if self.backbone != TINY_CONV {
            return Err(TrainerError::UnsupportedBackbone(self.backbone.clone()));
        }
        if self.epochs < 1 {
            return invalid("epochs must be at least 1");
        }
        if self.batch_size < 1 {
            return invalid("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return invalid("learning_rate must be positive");
        }
        if self.input_size < 8 {
            return invalid("input_size must be at least 8");
        }
        if self.backbone_width < 1 {
            return invalid("backbone_width must be at least 1");
        }
        if self.trainable_backbone_layers != 0 {
            return invalid("the tiny-conv backbone is always frozen; trainable_backbone_layers must be 0");
        }
        let final_size = self.transforms.iter().rev().find_map(|t| match t {
            Transform::Resize { size } | Transform::CenterCrop { size } => Some(*size),
            _ => None,
        });
        if final_size.is_some_and(|s| s != self.input_size) {
            return invalid("the last resize/crop must produce input_size");
        }
        for t in &self.transforms {
            match t {
                Transform::Resize { size } | Transform::CenterCrop { size } if *size == 0 => {
                    return invalid("transform sizes must be positive")
                }
                Transform::RandomHorizontalFlip { p } if !(0.0..=1.0).contains(p) => {
                    return invalid("flip probability must be in [0, 1]")
                }
                Transform::Normalize { std, .. } if std.iter().any(|s| *s <= 0.0) => {
                    return invalid("normalize std must be positive")
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        json_digest(self)
    }

    fn flip_probability(&self) -> f64 {
        self.transforms
            .iter()
            .find_map(|t| match t {
                Transform::RandomHorizontalFlip { p } => Some(*p),
                _ => None,
            })
            .unwrap_or(0.0)
    }

    /// Load from `.toml` or `.json`, chosen by extension.
    pub fn load(path: &Path) -> Result<TrainingConfig> {
        let text = fs::read_to_string(path)?;
        let cfg: TrainingConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| TrainerError::InvalidConfig(e.to_string()))?,
            _ => serde_json::from_str(&text)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Resolves record uris against a list of roots.
#[derive(Debug, Clone, Default)]
pub struct PayloadResolver {
    roots: Vec<PathBuf>,
}

impl PayloadResolver {
    pub fn new(roots: Vec<PathBuf>) -> Self {
        PayloadResolver { roots }
    }

    pub fn resolve(&self, uri: &str) -> PathBuf {
        let p = Path::new(uri);
        if p.is_absolute() || self.roots.is_empty() {
            return p.to_path_buf();
        }
        self.roots
            .iter()
            .map(|r| r.join(p))
            .find(|c| c.exists())
            .unwrap_or_else(|| self.roots[0].join(p))
    }

    fn read(&self, rec: &ImageRecord) -> Result<RgbImage> {
        let path = self.resolve(&rec.uri);
        let bytes = fs::read(&path).map_err(|_| TrainerError::MissingPayload {
            image_id: rec.image_id.clone(),
            path: path.clone(),
        })?;
        image::load_from_memory(&bytes)
            .map(|img| img.to_rgb8())
            .map_err(|e| TrainerError::PayloadDecode {
                image_id: rec.image_id.clone(),
                message: e.to_string(),
            })
    }
}

/// The plan's training records ordered by id, after checking every payload
/// exists.
pub fn build_training_set(plan: &SplitPlan, resolver: &PayloadResolver) -> Result<Vec<ImageRecord>> {
    let mut out = plan.train.clone();
    out.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    for r in &out {
        let path = resolver.resolve(&r.uri);
        if !path.is_file() {
            return Err(TrainerError::MissingPayload {
                image_id: r.image_id.clone(),
                path,
            });
        }
    }
    Ok(out)
}

/// Channel-first float image.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

/// Apply the deterministic transforms (and the flip when `flip` is set).
pub fn preprocess(img: &RgbImage, transforms: &[Transform], flip: bool) -> Tensor {
    let mut img = img.clone();
    let mut norm: Option<([f32; 3], [f32; 3])> = None;
    for t in transforms {
        match t {
            Transform::Resize { size } => {
                let (w, h) = img.dimensions();
                let short = w.min(h).max(1);
                let nw = ((w as u64 * *size as u64 + short as u64 / 2) / short as u64).max(1) as u32;
                let nh = ((h as u64 * *size as u64 + short as u64 / 2) / short as u64).max(1) as u32;
                if (nw, nh) != (w, h) {
                    img = imageops::resize(&img, nw, nh, FilterType::Triangle);
                }
            }
            Transform::CenterCrop { size } => {
                let (w, h) = img.dimensions();
                let side = (*size).min(w).min(h);
                let x = (w - side) / 2;
                let y = (h - side) / 2;
                img = imageops::crop_imm(&img, x, y, side, side).to_image();
            }
            Transform::RandomHorizontalFlip { .. } => {
                if flip {
                    img = imageops::flip_horizontal(&img);
                }
            }
            Transform::Normalize { mean, std } => norm = Some((*mean, *std)),
        }
    }
    let (w, h) = img.dimensions();
    let mut data = vec![0f32; (3 * w * h) as usize];
    let plane = (w * h) as usize;
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            let v = px[c] as f32 / 255.0;
            data[c * plane + i] = match norm {
                Some((m, s)) => (v - m[c]) / s[c],
                None => v,
            };
        }
    }
    Tensor {
        width: w,
        height: h,
        data,
    }
}

/// Fixed random 3x3 filters, stride 2, ReLU, pooled over 2x2 quadrants,
/// plus per-channel input mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyConv {
    pub filters: Vec<[f32; 27]>,
}

impl TinyConv {
    pub fn new(width: u32, seed: u64) -> TinyConv {
        let mut rng = rng_for(seed, &["backbone", TINY_CONV]);
        let scale = 1.0 / (27f32).sqrt();
        let filters = (0..width)
            .map(|_| {
                let mut f = [0f32; 27];
                for v in &mut f {
                    *v = (rng.random::<f32>() * 2.0 - 1.0) * scale;
                }
                f
            })
            .collect();
        TinyConv { filters }
    }

    pub fn feature_len(&self) -> usize {
        self.filters.len() * 4 + 6
    }

    pub fn features(&self, t: &Tensor) -> Vec<f64> {
        let (w, h) = (t.width as usize, t.height as usize);
        let plane = w * h;
        let ow = (w.saturating_sub(3)) / 2 + 1;
        let oh = (h.saturating_sub(3)) / 2 + 1;
        let mut out = Vec::with_capacity(self.feature_len());
        for f in &self.filters {
            let mut quad = [0f64; 4];
            let mut cnt = [0usize; 4];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0f32;
                    for c in 0..3 {
                        for ky in 0..3 {
                            let y = (oy * 2 + ky).min(h - 1);
                            let row = c * plane + y * w;
                            for kx in 0..3 {
                                let x = (ox * 2 + kx).min(w - 1);
                                acc += f[c * 9 + ky * 3 + kx] * t.data[row + x];
                            }
                        }
                    }
                    let q = usize::from(oy * 2 >= oh) * 2 + usize::from(ox * 2 >= ow);
                    quad[q] += acc.max(0.0) as f64;
                    cnt[q] += 1;
                }
            }
            out.extend((0..4).map(|q| if cnt[q] == 0 { 0.0 } else { quad[q] / cnt[q] as f64 }));
        }
        for c in 0..3 {
            let vals = &t.data[c * plane..(c + 1) * plane];
            let mean = vals.iter().map(|v| *v as f64).sum::<f64>() / plane.max(1) as f64;
            let var = vals.iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / plane.max(1) as f64;
            out.push(mean);
            out.push(var.sqrt());
        }
        out
    }
}

/// Per-class weights proportional to `1 / count`.
pub fn class_weights(training_set: &[ImageRecord]) -> Result<BTreeMap<String, f64>> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in training_set {
        *counts.entry(r.condition.clone()).or_default() += 1;
    }
    if counts.is_empty() {
        return Err(TrainerError::EmptyClass("<any>".into()));
    }
    Ok(counts.into_iter().map(|(c, n)| (c, 1.0 / n as f64)).collect())
}

/// Like [`class_weights`], but every label in `labels` must be present.
pub fn class_weights_for(training_set: &[ImageRecord], labels: &[String]) -> Result<BTreeMap<String, f64>> {
    let w = class_weights(training_set)?;
    if let Some(missing) = labels.iter().find(|l| !w.contains_key(*l)) {
        return Err(TrainerError::EmptyClass(missing.clone()));
    }
    Ok(w)
}

/// Draws sample indices with probability proportional to their class
/// weight, with replacement.
pub struct WeightedSampler {
    dist: WeightedIndex<f64>,
}

impl WeightedSampler {
    pub fn new(labels: &[&str], weights: &BTreeMap<String, f64>) -> Result<WeightedSampler> {
        let per_sample: Vec<f64> = labels
            .iter()
            .map(|l| weights.get(*l).copied().ok_or_else(|| TrainerError::EmptyClass(l.to_string())))
            .collect::<Result<_>>()?;
        let dist = WeightedIndex::new(per_sample).map_err(|e| TrainerError::InvalidConfig(e.to_string()))?;
        Ok(WeightedSampler { dist })
    }

    pub fn draw(&self, rng: &mut PipelineRng, n: usize) -> Vec<usize> {
        (0..n).map(|_| self.dist.sample(rng)).collect()
    }
}

/// Trained head plus everything needed to reproduce its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub backbone: TinyConv,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    /// Row-major `classes x features`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Weights {
    fn classes(&self) -> usize {
        self.b.len()
    }

    pub fn scores(&self, raw: &[f64]) -> Vec<f64> {
        let d = raw.len();
        let x: Vec<f64> = raw
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.feature_mean[i]) / self.feature_std[i])
            .collect();
        (0..self.classes())
            .map(|k| self.b[k] + self.w[k * d..(k + 1) * d].iter().zip(&x).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub weights_uri: String,
    pub label_order: Vec<String>,
    pub config_digest: String,
    pub train_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: u32,
    pub loss: f64,
    pub sampled: BTreeMap<String, usize>,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub artifact: ModelArtifact,
    pub config: TrainingConfig,
    pub weights: Weights,
    pub log: Vec<EpochLog>,
}

pub const WEIGHTS_FILE: &str = "weights.json";
pub const LABELS_FILE: &str = "labels.json";
pub const CONFIG_FILE: &str = "config.json";
pub const ARTIFACT_FILE: &str = "artifact.json";
pub const LOG_FILE: &str = "train_log.jsonl";

/// Index of the largest score; ties go to the earliest index.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        match best {
            Some(b) if !(*s > scores[b]) => {}
            _ => best = Some(i),
        }
    }
    best
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn extract_all(
    records: &[ImageRecord],
    resolver: &PayloadResolver,
    config: &TrainingConfig,
    backbone: &TinyConv,
    flips: bool,
) -> Result<Vec<(Vec<f64>, Option<Vec<f64>>)>> {
    records
        .par_iter()
        .map(|r| {
            let img = resolver.read(r)?;
            let plain = backbone.features(&preprocess(&img, &config.transforms, false));
            let flipped = flips.then(|| backbone.features(&preprocess(&img, &config.transforms, true)));
            Ok((plain, flipped))
        })
        .collect()
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Train a head over `training_set` and write the artifact under `out_dir`.
pub fn train(
    training_set: &[ImageRecord],
    config: &TrainingConfig,
    resolver: &PayloadResolver,
    out_dir: &Path,
) -> Result<TrainedModel> {
    config.validate()?;
    let mut records = training_set.to_vec();
    records.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let label_order: Vec<String> = records
        .iter()
        .map(|r| r.condition.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if label_order.len() < 2 {
        return Err(TrainerError::DegenerateLabels(label_order.len()));
    }
    let class_of: HashMap<&str, usize> = label_order.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let targets: Vec<usize> = records.iter().map(|r| class_of[r.condition.as_str()]).collect();

    let backbone = TinyConv::new(config.backbone_width, config.rng_seed);
    let flip_p = config.flip_probability();
    let feats = extract_all(&records, resolver, config, &backbone, flip_p > 0.0)?;

    let d = backbone.feature_len();
    let n = records.len() as f64;
    let mut mean = vec![0f64; d];
    for (f, _) in &feats {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v / n;
        }
    }
    let mut std = vec![0f64; d];
    for (f, _) in &feats {
        for i in 0..d {
            std[i] += (f[i] - mean[i]).powi(2) / n;
        }
    }
    for s in &mut std {
        *s = s.sqrt().max(1e-6);
    }

    let k = label_order.len();
    let mut weights = Weights {
        backbone,
        feature_mean: mean,
        feature_std: std,
        w: vec![0.0; k * d],
        b: vec![0.0; k],
    };
    let nparams = k * d + k;
    let mut adam = AdamState {
        m: vec![0.0; nparams],
        v: vec![0.0; nparams],
        t: 0,
    };
    let mut velocity = vec![0.0; nparams];

    let cw = class_weights(&records)?;
    let labels: Vec<&str> = records.iter().map(|r| r.condition.as_str()).collect();
    let sampler = WeightedSampler::new(&labels, &cw)?;
    let mut rng = rng_for(config.rng_seed, &["train"]);

    fs::create_dir_all(out_dir)?;
    let mut log_file = fs::File::create(out_dir.join(LOG_FILE))?;
    let mut log = Vec::new();
    let bs = config.batch_size as usize;

    for epoch in 1..=config.epochs {
        let order = sampler.draw(&mut rng, records.len());
        let mut sampled: BTreeMap<String, usize> = label_order.iter().map(|l| (l.clone(), 0)).collect();
        let mut loss_sum = 0.0;
        for batch in order.chunks(bs) {
            let mut grad = vec![0f64; nparams];
            for &idx in batch {
                let flip = flip_p > 0.0 && rng.random_bool(flip_p);
                let raw = match (&feats[idx], flip) {
                    (_, true) => feats[idx].1.as_ref().expect("flip features computed"),
                    ((plain, _), false) => plain,
                };
                *sampled.get_mut(&label_order[targets[idx]]).expect("label") += 1;
                let x: Vec<f64> = raw
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (v - weights.feature_mean[i]) / weights.feature_std[i])
                    .collect();
                let z: Vec<f64> = (0..k)
                    .map(|c| weights.b[c] + weights.w[c * d..(c + 1) * d].iter().zip(&x).map(|(a, b)| a * b).sum::<f64>())
                    .collect();
                let p = softmax(&z);
                loss_sum += -(p[targets[idx]].max(1e-12)).ln();
                for c in 0..k {
                    let g = p[c] - if c == targets[idx] { 1.0 } else { 0.0 };
                    for i in 0..d {
                        grad[c * d + i] += g * x[i];
                    }
                    grad[k * d + c] += g;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let lr = config.learning_rate;
            adam.t += 1;
            for j in 0..nparams {
                let g = grad[j] * scale;
                let step = match config.optimizer {
                    Optimizer::Adam => {
                        adam.m[j] = 0.9 * adam.m[j] + 0.1 * g;
                        adam.v[j] = 0.999 * adam.v[j] + 0.001 * g * g;
                        let mh = adam.m[j] / (1.0 - 0.9f64.powi(adam.t));
                        let vh = adam.v[j] / (1.0 - 0.999f64.powi(adam.t));
                        lr * mh / (vh.sqrt() + 1e-8)
                    }
                    Optimizer::Sgd => {
                        velocity[j] = 0.9 * velocity[j] + g;
                        lr * velocity[j]
                    }
                };
                if j < k * d {
                    weights.w[j] -= step;
                } else {
                    weights.b[j - k * d] -= step;
                }
            }
        }
        let entry = EpochLog {
            epoch,
            loss: loss_sum / order.len() as f64,
            sampled,
        };
        writeln!(log_file, "{}", serde_json::to_string(&entry)?)?;
        tracing::debug!(epoch, loss = entry.loss, "epoch done");
        log.push(entry);
    }
    log_file.sync_all()?;

    let artifact = ModelArtifact {
        weights_uri: WEIGHTS_FILE.into(),
        label_order,
        config_digest: config.digest(),
        train_digest: id_list_digest(records.iter().map(|r| r.image_id.as_str())),
    };
    let model = TrainedModel {
        artifact,
        config: config.clone(),
        weights,
        log,
    };
    model.save(out_dir)?;
    Ok(model)
}

impl TrainedModel {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(WEIGHTS_FILE), serde_json::to_vec(&self.weights)?)?;
        fs::write(dir.join(LABELS_FILE), serde_json::to_vec_pretty(&self.artifact.label_order)?)?;
        fs::write(dir.join(CONFIG_FILE), serde_json::to_vec_pretty(&self.config)?)?;
        fs::write(dir.join(ARTIFACT_FILE), serde_json::to_vec_pretty(&self.artifact)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<TrainedModel> {
        let artifact: ModelArtifact = serde_json::from_slice(&fs::read(dir.join(ARTIFACT_FILE))?)?;
        let labels: Vec<String> = serde_json::from_slice(&fs::read(dir.join(LABELS_FILE))?)?;
        if labels != artifact.label_order {
            return Err(TrainerError::Artifact("labels.json disagrees with artifact.json".into()));
        }
        let config: TrainingConfig = serde_json::from_slice(&fs::read(dir.join(CONFIG_FILE))?)?;
        if config.digest() != artifact.config_digest {
            return Err(TrainerError::Artifact("config.json does not match the recorded digest".into()));
        }
        let weights: Weights = serde_json::from_slice(&fs::read(dir.join(&artifact.weights_uri))?)?;
        if weights.b.len() != labels.len() {
            return Err(TrainerError::Artifact("weights and label order differ in size".into()));
        }
        let log = fs::read_to_string(dir.join(LOG_FILE))
            .map(|text| {
                text.lines()
                    .filter_map(|l| serde_json::from_str(l).ok())
                    .collect()
            })
            .unwrap_or_default();
        Ok(TrainedModel {
            artifact,
            config,
            weights,
            log,
        })
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.log.last().map(|e| e.loss)
    }
}

/// One label per image: argmax of the class scores, ties to the earliest
/// label in `label_order`.
pub fn predict(model: &TrainedModel, images: &[ImageRecord], resolver: &PayloadResolver) -> Result<Vec<String>> {
    let feats = extract_all(images, resolver, &model.config, &model.weights.backbone, false)?;
    Ok(feats
        .into_iter()
        .map(|(raw, _)| {
            let scores = model.weights.scores(&raw);
            let i = argmax_first(&scores).expect("at least two classes");
            model.artifact.label_order[i].clone()
        })
        .collect())
}
