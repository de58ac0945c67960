//! Pipeline stages. Each reads its inputs from the output directory, writes
//! its artifacts there and reports what it touched for the run record.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use skinaug_core::curation::service::{self, ServiceConfig};
use skinaug_core::curation::{CurationStore, PromptStats, RequestEntry, SeedEntry, SelectionManifest};
use skinaug_core::digest::id_list_digest;
use skinaug_core::evaluator::{self, build_report, EvalReport, PlanResult};
use skinaug_core::genclient::stub::stub_backend;
use skinaug_core::genclient::{
    crop_seed_image, CandidateImage, CropRegion, GenerationBackend, GenerationClient, GenerationJob, GenerationRequest,
    Mask, Noun, Preposition, PromptParts, RemoteBackend, RequestLog, SkinDescriptor,
};
use skinaug_core::manifest::{load_fitzpatrick17k, load_manifest, DatasetManifest};
use skinaug_core::rng::derive_seed;
use skinaug_core::splitter::{
    compose_split, dose_series, sample_seeds, spillover_plans, Experiment, PlanDocument, SeedSets,
};
use skinaug_core::trainer::{self, build_training_set, PayloadResolver, TrainedModel, ARTIFACT_FILE};
use skinaug_core::{AugmentationMode, FstGroup, SplitPlan, SplitSpec};

use crate::config::{Backend, ManifestFormat, PipelineConfig};
use crate::error::{list_dir, read_input, read_json, CliError, Result};
use crate::layout::{write_json, Layout};

/// Training groups evaluated by every experiment family.
pub const TRAIN_GROUPS: [FstGroup; 2] = [FstGroup::I_II, FstGroup::V_VI];

/// Body sites prompts draw from.
pub const BODY_PARTS: [&str; 8] = ["arm", "leg", "face", "back", "hand", "chest", "neck", "foot"];

pub struct Ctx {
    pub cfg: PipelineConfig,
    pub digest: String,
    pub layout: Layout,
}

/// Paths a stage read and wrote.
#[derive(Debug, Default)]
pub struct Touched {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl Ctx {
    pub fn new(cfg: PipelineConfig) -> Ctx {
        let digest = cfg.digest();
        let layout = Layout::new(cfg.output_dir.clone());
        Ctx { cfg, digest, layout }
    }

    fn resolver(&self) -> PayloadResolver {
        PayloadResolver::new(vec![self.cfg.manifest_dir(), self.layout.root.clone()])
    }

    fn manifest(&self) -> Result<DatasetManifest> {
        let path = self.layout.manifest();
        read_input(&path, "ingested manifest")?;
        Ok(load_manifest(&path, None)?)
    }

    fn check_digest(&self, found: &str, what: &str) -> Result<()> {
        if found != self.digest {
            return Err(CliError::Validation(format!(
                "{what} was produced under config {found}, current config is {}; re-run the earlier stages",
                short(&self.digest)
            )));
        }
        Ok(())
    }
}

fn short(d: &str) -> &str {
    &d[..d.len().min(12)]
}

fn slug(s: &str) -> String {
    s.replace(' ', "-")
}

/// A digest-stamped wrapper for stage outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub config_digest: String,
    #[serde(flatten)]
    pub body: T,
}

// ---- ingest ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Counts {
    pub table: skinaug_core::manifest::CountTable,
}

pub fn ingest(ctx: &Ctx) -> Result<Touched> {
    let cfg = &ctx.cfg;
    if cfg.manifest_path.as_os_str().is_empty() {
        return Err(CliError::Validation("no manifest: set manifest_path in the config or pass --manifest".into()));
    }
    let bytes = read_input(&cfg.manifest_path, "input manifest")?;
    let full = match cfg.manifest_format {
        ManifestFormat::Manifest => skinaug_core::manifest::read_manifest(bytes.as_slice(), None)?,
        ManifestFormat::Fitzpatrick17k => {
            let import = load_fitzpatrick17k(bytes.as_slice(), &cfg.image_dir)?;
            if import.skipped_unlabeled > 0 {
                eprintln!("note: skipped {} rows without a skin-type label", import.skipped_unlabeled);
            }
            import.manifest
        }
    };
    let manifest = full.filter_conditions(&cfg.conditions)?;
    manifest.save(&ctx.layout.manifest())?;
    let table = manifest.count_by(None, None)?;
    let md = table.render_markdown();
    write_json(
        &ctx.layout.counts_json(),
        &Stamped {
            config_digest: ctx.digest.clone(),
            body: Counts { table },
        },
    )?;
    fs::write(ctx.layout.counts_md(), &md)?;
    print!("{md}");
    Ok(Touched {
        inputs: vec![cfg.manifest_path.clone()],
        outputs: vec![ctx.layout.manifest(), ctx.layout.counts_json(), ctx.layout.counts_md()],
    })
}

// ---- sample-seeds ----

/// Seeds per source group, then per condition.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedsDoc {
    pub seed_count: usize,
    pub sets: BTreeMap<FstGroup, SeedSets>,
}

impl SeedsDoc {
    pub fn for_train_group(&self, train: FstGroup) -> SeedSets {
        let group = train.opposite_extreme().expect("extreme training group");
        self.sets.get(&group).cloned().unwrap_or_default()
    }

    pub fn all_ids(&self) -> BTreeSet<&str> {
        self.sets.values().flat_map(|s| s.values().flatten()).map(String::as_str).collect()
    }
}

pub fn sample_seeds_stage(ctx: &Ctx) -> Result<Touched> {
    let m = ctx.manifest()?;
    let mut doc = SeedsDoc {
        seed_count: ctx.cfg.seed_count,
        ..Default::default()
    };
    for train in TRAIN_GROUPS {
        let source = train.opposite_extreme().expect("extreme");
        let mut sets = SeedSets::new();
        for c in &ctx.cfg.augmented_conditions {
            let seeds = sample_seeds(&m, c, source, ctx.cfg.seed_count, ctx.cfg.rng_seed)?;
            sets.insert(c.clone(), seeds.into_iter().map(|r| r.image_id).collect());
        }
        doc.sets.insert(source, sets);
    }
    for (g, sets) in &doc.sets {
        for (c, ids) in sets {
            println!("{} {c}: {} seeds", g.label(), ids.len());
        }
    }
    write_json(
        &ctx.layout.seeds(),
        &Stamped {
            config_digest: ctx.digest.clone(),
            body: doc,
        },
    )?;
    Ok(Touched {
        inputs: vec![ctx.layout.manifest()],
        outputs: vec![ctx.layout.seeds()],
    })
}

fn read_seeds(ctx: &Ctx) -> Result<SeedsDoc> {
    let s: Stamped<SeedsDoc> = read_json(&ctx.layout.seeds(), "seeds.json")?;
    ctx.check_digest(&s.config_digest, "seeds.json")?;
    Ok(s.body)
}

// ---- generate ----

fn stub_clock() -> DateTime<Utc> {
    DateTime::UNIX_EPOCH
}

/// Prompt for one seed; every choice is a pure function of the seed id.
pub fn prompt_for(condition: &str, seed_id: &str, target: FstGroup, rng_seed: u64) -> PromptParts {
    let pick = |what: &str, n: usize| (derive_seed(rng_seed, &["prompt", what, seed_id]) % n as u64) as usize;
    let descriptors: Vec<SkinDescriptor> = SkinDescriptor::ALL.into_iter().filter(|d| d.group() == target).collect();
    PromptParts::new(
        condition,
        BODY_PARTS[pick("body", BODY_PARTS.len())],
        descriptors[pick("descriptor", descriptors.len())],
        Noun::ALL[pick("noun", Noun::ALL.len())],
        Preposition::OnThe,
    )
}

fn open_store(ctx: &Ctx) -> Result<CurationStore> {
    let store = CurationStore::open(&ctx.layout.curation())?;
    Ok(match ctx.cfg.backend {
        Backend::Stub => store.with_clock(stub_clock),
        Backend::Remote => store,
    })
}

pub fn generate(ctx: &Ctx) -> Result<Touched> {
    let m = ctx.manifest()?;
    let seeds = read_seeds(ctx)?;
    let backend: Arc<dyn GenerationBackend> = match ctx.cfg.backend {
        Backend::Stub => Arc::new(stub_backend(ctx.cfg.rng_seed)),
        Backend::Remote => Arc::new(
            RemoteBackend::from_env(ctx.cfg.endpoint.clone()).map_err(|e| CliError::Backend(e.to_string()))?,
        ),
    };
    let log = Arc::new(RequestLog::open(&ctx.layout.request_log())?);
    let mut client = GenerationClient::new(backend, ctx.layout.root.clone())
        .with_retry(ctx.cfg.retry)
        .with_max_in_flight(ctx.cfg.max_in_flight)
        .with_log(log);
    if ctx.cfg.backend == Backend::Stub {
        client = client.with_clock(stub_clock);
    }
    let mut store = open_store(ctx)?;
    let resolver = ctx.resolver();
    let index = m.index();

    let mut jobs = Vec::new();
    let mut skipped = 0;
    for (group, sets) in &seeds.sets {
        for (condition, ids) in sets {
            for id in ids {
                let rec = index
                    .get(id.as_str())
                    .ok_or_else(|| CliError::Validation(format!("seed `{id}` is not in the manifest")))?;
                store.register_seed(SeedEntry {
                    seed_id: id.clone(),
                    condition: condition.clone(),
                    group: *group,
                    uri: rec.uri.clone(),
                })?;
                let path = resolver.resolve(&rec.uri);
                let bytes = read_input(&path, &format!("seed image {id}"))?;
                let img = skinaug_core::genclient::decode_dimensions(&bytes)?;
                let crop = CropRegion::centered(img.0, img.1);
                let parts = prompt_for(condition, id, *group, ctx.cfg.rng_seed);
                let request =
                    GenerationRequest::new(id.clone(), crop, Mask::centered_disc(crop.side), &parts, ctx.cfg.candidate_count)?;
                store.record_request(RequestEntry {
                    request_id: request.request_id.clone(),
                    seed_id: id.clone(),
                    prompt: request.prompt.clone(),
                })?;
                if store.state().candidates.values().any(|c| c.request_ref == request.request_id) {
                    skipped += 1;
                    continue;
                }
                let image_png = crop_seed_image(&bytes, crop)?;
                jobs.push(GenerationJob { request, image_png });
            }
        }
    }

    let results = client.generate_batch(&jobs);
    let mut first_error = None;
    let mut produced = 0;
    for (job, result) in jobs.iter().zip(results) {
        match result {
            Ok(cands) => {
                produced += cands.len();
                store.add_candidates(cands)?;
            }
            Err(e) => {
                eprintln!("request {} for seed {} failed: {e}", job.request.request_id, job.request.seed_image_id);
                first_error.get_or_insert(e);
            }
        }
    }
    println!(
        "{} requests sent, {skipped} already complete, {produced} candidates stored",
        jobs.len()
    );
    if let Some(e) = first_error {
        return Err(e.into());
    }
    Ok(Touched {
        inputs: vec![ctx.layout.manifest(), ctx.layout.seeds()],
        outputs: vec![ctx.layout.root.join("candidates"), ctx.layout.request_log()],
    })
}

// ---- curation ----

fn scopes(seeds: &SeedsDoc) -> Vec<(String, FstGroup)> {
    seeds
        .sets
        .iter()
        .flat_map(|(g, sets)| sets.keys().map(move |c| (c.clone(), *g)))
        .collect()
}

fn selection_path(ctx: &Ctx, condition: &str, group: FstGroup) -> PathBuf {
    ctx.layout.selections().join(SelectionManifest::file_name(condition, group))
}

/// Scopes without a finalized selection file.
pub fn pending_selections(ctx: &Ctx) -> Result<Vec<(String, FstGroup)>> {
    let seeds = read_seeds(ctx)?;
    Ok(scopes(&seeds)
        .into_iter()
        .filter(|(c, g)| {
            !SelectionManifest::read(&selection_path(ctx, c, *g))
                .map(|s| s.finalized)
                .unwrap_or(false)
        })
        .collect())
}

fn write_prompt_stats(ctx: &Ctx, store: &CurationStore) -> Result<Vec<PromptStats>> {
    let stats = store.selection_stats();
    write_json(&ctx.layout.selection_stats(), &stats)?;
    Ok(stats)
}

/// Accept the first four candidates of every seed and finalize every scope.
pub fn auto_curate(ctx: &Ctx) -> Result<Touched> {
    let seeds = read_seeds(ctx)?;
    let mut store = open_store(ctx)?;
    let mut outputs = Vec::new();
    for (condition, group) in scopes(&seeds) {
        store.auto_curate(&condition, group, "auto")?;
        let manifest = store.export_selection(&condition, group)?;
        let path = manifest.write(&ctx.layout.selections())?;
        println!("{} {condition}: {} accepted", group.label(), manifest.candidate_count());
        outputs.push(path);
    }
    write_prompt_stats(ctx, &store)?;
    outputs.push(ctx.layout.selection_stats());
    Ok(Touched {
        inputs: vec![ctx.layout.seeds()],
        outputs,
    })
}

pub fn serve(ctx: &Ctx, addr: std::net::SocketAddr, ui_dir: Option<PathBuf>) -> Result<()> {
    let store = open_store(ctx)?;
    let shared = Arc::new(std::sync::RwLock::new(store));
    let app = service::router(
        shared,
        ServiceConfig {
            selection_dir: ctx.layout.selections(),
            payload_root: ctx.layout.root.clone(),
            ui_dir,
        },
    );
    println!("curation service on http://{addr} (stop with Ctrl-C)");
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(service::serve(addr, app))
        .map_err(|e| CliError::Validation(format!("curation service: {e}")))
}

// ---- compose ----

/// Every plan the experiments need, keyed by file stem.
pub fn plan_specs(cfg: &PipelineConfig) -> Result<Vec<(String, SplitSpec)>> {
    let mut out = Vec::new();
    let name = |s: &SplitSpec| {
        let mut n = format!(
            "{}.{}.{}",
            match s.experiment {
                Experiment::Modes => "modes",
                Experiment::Dose => "dose",
                Experiment::Spillover => "spillover",
            },
            s.train_group.key(),
            s.mode.key()
        );
        if let Some(c) = s.augmented_conditions.iter().next() {
            n.push('.');
            n.push_str(&slug(c));
        }
        if s.dose > 0 {
            n.push_str(&format!(".d{}", s.dose));
        }
        n
    };
    let full = cfg.full_dose();
    for tg in TRAIN_GROUPS {
        let base = SplitSpec::fitz_only(tg, &cfg.conditions, cfg.rng_seed);
        out.push(base.clone());
        for c in &cfg.augmented_conditions {
            out.push(base.clone().augmented(AugmentationMode::Seed, c, 0));
            out.push(base.clone().augmented(AugmentationMode::DalleAndSeed, c, full));
        }
    }
    for c in &cfg.augmented_conditions {
        let spec = SplitSpec::fitz_only(FstGroup::I_II, &cfg.conditions, cfg.rng_seed).augmented(
            AugmentationMode::DalleAndSeed,
            c,
            full,
        );
        out.extend(dose_series(&spec, &cfg.doses)?);
    }
    for tg in TRAIN_GROUPS {
        let mut base = SplitSpec::fitz_only(tg, &cfg.conditions, cfg.rng_seed);
        base.augmented_conditions = cfg.augmented_conditions.iter().cloned().collect();
        for mut s in spillover_plans(&base, &cfg.conditions) {
            if s.mode == AugmentationMode::DalleAndSeed {
                s.dose = full;
            }
            out.push(s);
        }
    }
    Ok(out.into_iter().map(|s| (name(&s), s)).collect())
}

fn load_selections(ctx: &Ctx, seeds: &SeedsDoc) -> Result<Vec<SelectionManifest>> {
    let mut out = Vec::new();
    for (c, g) in scopes(seeds) {
        let path = selection_path(ctx, &c, g);
        read_input(&path, &format!("finalized selection for {c} / {}", g.key()))?;
        let s = SelectionManifest::read(&path)?;
        if !s.finalized {
            return Err(CliError::MissingInput(format!("selection {} is not finalized", path.display())));
        }
        out.push(s);
    }
    Ok(out)
}

/// Manifest with seeds re-tagged and accepted synthetic images appended.
fn augmented_manifest(ctx: &Ctx, m: &DatasetManifest, seeds: &SeedsDoc, selections: &[SelectionManifest]) -> Result<DatasetManifest> {
    let store = CurationStore::open(&ctx.layout.curation())?;
    let mut out = m.mark_seeds(seeds.all_ids())?;
    for sel in selections {
        let cands: Vec<CandidateImage> = sel
            .entries
            .values()
            .flatten()
            .map(|id| {
                store
                    .state()
                    .candidates
                    .get(id)
                    .cloned()
                    .ok_or_else(|| CliError::Validation(format!("selection lists unknown candidate `{id}`")))
            })
            .collect::<Result<_>>()?;
        out = out.register_synthetic(&cands, sel)?;
    }
    Ok(out)
}

pub fn compose(ctx: &Ctx) -> Result<Touched> {
    let m = ctx.manifest()?;
    let seeds = read_seeds(ctx)?;
    let selections = load_selections(ctx, &seeds)?;
    let aug = augmented_manifest(ctx, &m, &seeds, &selections)?;
    aug.save(&ctx.layout.augmented_manifest())?;

    let plans_dir = ctx.layout.plans();
    if plans_dir.exists() {
        fs::remove_dir_all(&plans_dir)?;
    }
    let mut outputs = vec![ctx.layout.augmented_manifest()];
    for (name, spec) in plan_specs(&ctx.cfg)? {
        let plan = compose_split(&aug, &spec, &seeds.for_train_group(spec.train_group), &selections)?;
        let path = plans_dir.join(format!("{name}.json"));
        write_json(&path, &plan.to_document(Some(ctx.digest.clone())))?;
        println!(
            "{name}: train {} ({} synthetic), test {}",
            plan.train.len(),
            plan.synthetic_ids().len(),
            plan.test_ids().len()
        );
        outputs.push(path);
    }
    let mut inputs = vec![ctx.layout.manifest(), ctx.layout.seeds(), ctx.layout.curation().join("events.jsonl")];
    inputs.extend(scopes(&seeds).iter().map(|(c, g)| selection_path(ctx, c, *g)));
    Ok(Touched { inputs, outputs })
}

fn load_plans(ctx: &Ctx, aug: &DatasetManifest) -> Result<Vec<(String, SplitPlan)>> {
    let mut out = Vec::new();
    for path in list_dir(&ctx.layout.plans(), "plans directory")? {
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let doc: PlanDocument = read_json(&path, "plan")?;
        ctx.check_digest(doc.config_digest.as_deref().unwrap_or("none"), &format!("plan {}", path.display()))?;
        let name = path.file_stem().unwrap().to_string_lossy().into_owned();
        out.push((name, SplitPlan::from_document(&doc, aug)?));
    }
    if out.is_empty() {
        return Err(CliError::missing(&ctx.layout.plans(), "composed plans"));
    }
    Ok(out)
}

fn load_augmented(ctx: &Ctx) -> Result<DatasetManifest> {
    let path = ctx.layout.augmented_manifest();
    read_input(&path, "augmented manifest")?;
    Ok(load_manifest(&path, None)?)
}

// ---- train ----

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ModelIndex {
    /// Plan name to model directory name.
    pub plans: BTreeMap<String, String>,
}

fn model_key(plan: &SplitPlan) -> String {
    id_list_digest(plan.train.iter().map(|r| r.image_id.as_str()))[..16].to_string()
}

pub fn train(ctx: &Ctx) -> Result<Touched> {
    let aug = load_augmented(ctx)?;
    let plans = load_plans(ctx, &aug)?;
    let resolver = ctx.resolver();
    let mut index = ModelIndex::default();
    let mut trained: BTreeMap<String, Option<f64>> = BTreeMap::new();
    let mut outputs = Vec::new();
    for (name, plan) in &plans {
        let key = model_key(plan);
        index.plans.insert(name.clone(), key.clone());
        if trained.contains_key(&key) {
            continue;
        }
        let dir = ctx.layout.models().join(&key);
        let reusable = TrainedModel::load(&dir)
            .ok()
            .filter(|m| m.artifact.config_digest == ctx.cfg.training.digest());
        let model = match reusable {
            Some(m) => m,
            None => {
                let set = build_training_set(plan, &resolver)?;
                trainer::train(&set, &ctx.cfg.training, &resolver, &dir)?
            }
        };
        write_json(
            &dir.join("pipeline.json"),
            &Stamped {
                config_digest: ctx.digest.clone(),
                body: serde_json::json!({ "train_size": plan.train.len() }),
            },
        )?;
        trained.insert(key, model.final_loss());
        outputs.push(dir.join(ARTIFACT_FILE));
    }
    for (key, loss) in &trained {
        println!("model {key}: final loss {}", loss.map_or("n/a".into(), |l| format!("{l:.4}")));
    }
    let index_path = ctx.layout.models().join("index.json");
    write_json(
        &index_path,
        &Stamped {
            config_digest: ctx.digest.clone(),
            body: index,
        },
    )?;
    outputs.push(index_path);
    Ok(Touched {
        inputs: vec![ctx.layout.augmented_manifest(), ctx.layout.plans()],
        outputs,
    })
}

// ---- evaluate / dose / spillover ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Predictions {
    pub plan: String,
    pub model: String,
    pub predictions: Vec<(String, String)>,
}

pub fn experiment_key(e: Experiment) -> &'static str {
    match e {
        Experiment::Modes => "modes",
        Experiment::Dose => "dose",
        Experiment::Spillover => "spillover",
    }
}

pub fn evaluate(ctx: &Ctx, experiment: Experiment) -> Result<Touched> {
    let aug = load_augmented(ctx)?;
    let plans = load_plans(ctx, &aug)?;
    let index_path = ctx.layout.models().join("index.json");
    let index: Stamped<ModelIndex> = read_json(&index_path, "model index")?;
    ctx.check_digest(&index.config_digest, "model index")?;
    let resolver = ctx.resolver();

    let mut results = Vec::new();
    let mut outputs = Vec::new();
    let mut cache: BTreeMap<String, TrainedModel> = BTreeMap::new();
    for (name, plan) in plans.into_iter().filter(|(_, p)| p.spec.experiment == experiment) {
        let key = index
            .body
            .plans
            .get(&name)
            .ok_or_else(|| CliError::MissingInput(format!("no trained model for plan {name}; run `train`")))?;
        if !cache.contains_key(key) {
            let dir = ctx.layout.models().join(key);
            read_input(&dir.join(ARTIFACT_FILE), &format!("model for plan {name}"))?;
            cache.insert(key.clone(), TrainedModel::load(&dir)?);
        }
        let model = &cache[key];
        let tests: Vec<_> = plan.test_records().map(|(_, r)| r.clone()).collect();
        let labels = trainer::predict(model, &tests, &resolver)?;
        let predictions: Vec<(String, String)> = tests.iter().map(|r| r.image_id.clone()).zip(labels).collect();
        let path = ctx.layout.predictions().join(format!("{name}.json"));
        write_json(
            &path,
            &Stamped {
                config_digest: ctx.digest.clone(),
                body: Predictions {
                    plan: name.clone(),
                    model: key.clone(),
                    predictions: predictions.clone(),
                },
            },
        )?;
        outputs.push(path);
        results.push(PlanResult { plan, predictions });
    }
    if results.is_empty() {
        return Err(CliError::MissingInput(format!("no {} plans; run `compose`", experiment_key(experiment))));
    }
    let mut report = build_report(&results)?;
    report.config_digest = Some(ctx.digest.clone());
    let path = ctx.layout.results().join(format!("{}.json", experiment_key(experiment)));
    write_json(&path, &report)?;
    outputs.push(path);
    let md = match experiment {
        Experiment::Modes => evaluator::render_modes_markdown(&report),
        Experiment::Dose => evaluator::render_dose_markdown(&report),
        Experiment::Spillover => evaluator::render_spillover_markdown(&report),
    };
    print!("{md}");
    Ok(Touched {
        inputs: vec![ctx.layout.augmented_manifest(), ctx.layout.plans(), index_path],
        outputs,
    })
}

// ---- report ----

pub fn report(ctx: &Ctx) -> Result<Touched> {
    let mut merged: Option<EvalReport> = None;
    let mut inputs = Vec::new();
    for e in [Experiment::Modes, Experiment::Dose, Experiment::Spillover] {
        let path = ctx.layout.results().join(format!("{}.json", experiment_key(e)));
        if !path.exists() {
            continue;
        }
        let part: EvalReport = read_json(&path, "results")?;
        match &part.config_digest {
            Some(d) if *d == ctx.digest => {}
            other => {
                return Err(CliError::Validation(format!(
                    "refusing to mix artifacts: {} has config digest {}, expected {}",
                    path.display(),
                    other.as_deref().map_or("none", short),
                    short(&ctx.digest)
                )))
            }
        }
        inputs.push(path);
        merged = Some(match merged {
            None => part,
            Some(m) => m.merge(part),
        });
    }
    let report = merged.ok_or_else(|| {
        CliError::MissingInput(format!("no results under {}; run `evaluate` first", ctx.layout.results().display()))
    })?;
    evaluator::write_report(&report, &ctx.layout.report())?;
    let outputs = [
        evaluator::REPORT_MD,
        evaluator::REPORT_JSON,
        evaluator::MODES_CSV,
        evaluator::DOSE_CSV,
        evaluator::SPILLOVER_CSV,
    ]
    .iter()
    .map(|f| ctx.layout.report().join(f))
    .collect();
    println!("report written to {}", ctx.layout.report().display());
    Ok(Touched { inputs, outputs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_inventory() {
        let cfg = PipelineConfig::default();
        let specs = plan_specs(&cfg).unwrap();
        let count = |e: Experiment| specs.iter().filter(|(_, s)| s.experiment == e).count();
        assert_eq!(count(Experiment::Modes), 2 * (1 + 3 * 2));
        assert_eq!(count(Experiment::Dose), 3 * 4);
        assert_eq!(count(Experiment::Spillover), 2 * 4);
        let names: BTreeSet<&str> = specs.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names.len(), specs.len());
        assert!(names.contains("dose.I_II.dalle_and_seed.psoriasis.d16"));
        assert!(names.contains("spillover.V_VI.fitz_only"));
        for (_, s) in &specs {
            s.validate().unwrap();
        }
    }

    #[test]
    fn prompts_target_the_seed_group() {
        for id in ["a", "b", "c", "d"] {
            let p = prompt_for("psoriasis", id, FstGroup::V_VI, 0);
            assert_eq!(p.skin_descriptor.group(), FstGroup::V_VI);
            assert_eq!(p, prompt_for("psoriasis", id, FstGroup::V_VI, 0));
            p.render().unwrap();
        }
    }
}
