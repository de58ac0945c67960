//! End-to-end acceptance checks. Each criterion prints one `PASS` or `FAIL`
//! line; runs without the libtest harness so the lines always show.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use serde_json::Value;
use skinaug_core::curation::SelectionManifest;
use skinaug_core::evaluator::{wald_ci, Z_95};
use skinaug_core::fixture::table1_manifest;
use skinaug_core::rng::rng_for;
use skinaug_core::splitter::{compose_split, sample_seeds, SeedSets, PROTOCOL_DOSES};
use skinaug_core::trainer::{class_weights, WeightedSampler};
use skinaug_core::{
    AugmentationMode, DatasetManifest, FstGroup, ImageRecord, Provenance, SplitSpec, DEFAULT_AUGMENTED_CONDITIONS,
    DEFAULT_CONDITIONS,
};
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Outcome = Result<String, String>;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_skinaug"))
}

fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---- Table 1 ----

/// Printed counts, one row per skin type I..VI, columns in alphabetical
/// condition order.
const PRINTED_ROWS: [[usize; 7]; 6] = [
    [85, 30, 15, 70, 7, 113, 100],
    [156, 97, 56, 115, 28, 232, 180],
    [112, 99, 79, 68, 39, 101, 122],
    [76, 51, 60, 51, 56, 91, 71],
    [24, 31, 32, 31, 29, 64, 40],
    [7, 9, 12, 15, 9, 21, 23],
];
const ROW_TOTALS: [usize; 6] = [420, 864, 620, 456, 251, 96];
const COLUMN_TOTALS: [usize; 7] = [460, 317, 254, 350, 168, 622, 536];
const GRAND_TOTAL: usize = 2707;

fn table1_reproduction(work: &Path) -> Outcome {
    let out = work.join("ingest");
    let start = Instant::now();
    let run = bin()
        .arg("--manifest")
        .arg(repo_root().join("fixtures/table1_manifest.csv"))
        .arg("--output-dir")
        .arg(&out)
        .arg("ingest")
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check(run.status.success(), format!("ingest failed: {}", String::from_utf8_lossy(&run.stderr)))?;
    let counts: Value = serde_json::from_slice(&fs::read(out.join("counts.json")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let cells = &counts["table"]["cells"];
    let get = |c: &str, fst: usize| cells[c][fst.to_string()].as_u64().unwrap_or(u64::MAX) as usize;

    let mut mismatches = Vec::new();
    let mut seen = 0;
    for (f, row) in PRINTED_ROWS.iter().enumerate() {
        for (c, &want) in row.iter().enumerate() {
            seen += 1;
            let got = get(DEFAULT_CONDITIONS[c], f + 1);
            if got != want {
                mismatches.push(format!("{} FST {}: {got} != {want}", DEFAULT_CONDITIONS[c], f + 1));
            }
        }
    }
    for (f, &want) in ROW_TOTALS.iter().enumerate() {
        let got: usize = DEFAULT_CONDITIONS.iter().map(|c| get(c, f + 1)).sum();
        if got != want {
            mismatches.push(format!("FST {} total {got} != {want}", f + 1));
        }
    }
    for (c, &want) in COLUMN_TOTALS.iter().enumerate() {
        let got: usize = (1..=6).map(|f| get(DEFAULT_CONDITIONS[c], f)).sum();
        if got != want {
            mismatches.push(format!("{} total {got} != {want}", DEFAULT_CONDITIONS[c]));
        }
    }
    let grand: usize = DEFAULT_CONDITIONS.iter().flat_map(|c| (1..=6).map(move |f| (c, f))).map(|(c, f)| get(c, f)).sum();
    if grand != GRAND_TOTAL {
        mismatches.push(format!("grand total {grand} != {GRAND_TOTAL}"));
    }
    let stdout = String::from_utf8_lossy(&run.stdout);
    if !stdout.contains("2707") {
        mismatches.push("printed table lacks the grand total".into());
    }
    check(mismatches.is_empty(), mismatches.join("; "))?;
    check(elapsed < Duration::from_secs(5), format!("took {elapsed:?}, limit 5 s"))?;
    Ok(format!("{seen} cells, 6 row totals, 7 column totals, grand total {grand}; {elapsed:.2?}"))
}

// ---- confidence intervals ----

/// (accuracy, N, low, high) as printed, N as printed.
const PRINTED_TRIPLES: [(f64, usize, f64, f64); 36] = [
    // neutrophilic dermatoses, trained I-II, tested III-IV
    (0.311, 119, 0.23, 0.39),
    (0.395, 119, 0.31, 0.48),
    (0.411, 119, 0.32, 0.50),
    // neutrophilic dermatoses, trained I-II, tested V-VI
    (0.243, 37, 0.10, 0.38),
    (0.594, 37, 0.44, 0.75),
    (0.675, 37, 0.52, 0.83),
    // neutrophilic dermatoses, trained V-VI, tested I-II
    (0.175, 177, 0.12, 0.23),
    (0.310, 177, 0.24, 0.38),
    (0.610, 177, 0.54, 0.68),
    // neutrophilic dermatoses, trained V-VI, tested III-IV
    (0.311, 119, 0.23, 0.39),
    (0.378, 119, 0.29, 0.47),
    (0.571, 119, 0.48, 0.66),
    // psoriasis, trained I-II
    (0.495, 192, 0.42, 0.57),
    (0.557, 192, 0.48, 0.63),
    (0.573, 192, 0.50, 0.64),
    (0.753, 77, 0.66, 0.85),
    (0.857, 77, 0.78, 0.94),
    (0.857, 77, 0.78, 0.94),
    // psoriasis, trained V-VI
    (0.249, 337, 0.20, 0.29),
    (0.359, 337, 0.31, 0.41),
    (0.504, 337, 0.45, 0.55),
    (0.255, 192, 0.19, 0.31),
    (0.370, 192, 0.30, 0.44),
    (0.463, 192, 0.39, 0.53),
    // squamous cell carcinoma, trained I-II
    (0.492, 193, 0.42, 0.56),
    (0.487, 193, 0.42, 0.56),
    (0.461, 193, 0.39, 0.53),
    (0.545, 55, 0.41, 0.68),
    (0.618, 55, 0.49, 0.75),
    (0.691, 55, 0.57, 0.81),
    // squamous cell carcinoma, trained V-VI
    (0.272, 272, 0.22, 0.32),
    (0.349, 272, 0.29, 0.41),
    (0.577, 272, 0.52, 0.64),
    (0.389, 193, 0.32, 0.46),
    (0.430, 193, 0.36, 0.50),
    (0.461, 193, 0.39, 0.53),
];

fn ci_reproduction() -> Outcome {
    let start = Instant::now();
    let mut bad = Vec::new();
    let mut worst: f64 = 0.0;
    for &(acc, n, lo, hi) in &PRINTED_TRIPLES {
        let (l, h) = wald_ci(acc, n, Z_95).map_err(|e| e.to_string())?;
        let d = (l - lo).abs().max((h - hi).abs());
        worst = worst.max(d);
        if d > 0.01 + 1e-9 {
            bad.push(format!("{acc} n={n}: ({l:.3}, {h:.3}) vs ({lo}, {hi})"));
        }
    }
    let elapsed = start.elapsed();
    check(bad.is_empty(), bad.join("; "))?;
    check(elapsed < Duration::from_secs(1), format!("took {elapsed:?}, limit 1 s"))?;
    Ok(format!(
        "{} triples (every populated cell of the mode table), worst bound error {worst:.4}; {elapsed:.2?}",
        PRINTED_TRIPLES.len()
    ))
}

// ---- split sizes and protocol arithmetic ----

fn seeds_for(m: &DatasetManifest, group: FstGroup, rng_seed: u64) -> SeedSets {
    DEFAULT_AUGMENTED_CONDITIONS
        .iter()
        .map(|c| {
            let ids = sample_seeds(m, c, group, 8, rng_seed).unwrap().into_iter().map(|r| r.image_id).collect();
            (c.to_string(), ids)
        })
        .collect()
}

fn split_n_reproduction() -> Outcome {
    let m = table1_manifest();
    // (condition, trained on, tested on, expected, printed)
    let cases = [
        ("psoriasis", FstGroup::V_VI, FstGroup::I_II, 337, 337),
        ("psoriasis", FstGroup::I_II, FstGroup::III_IV, 192, 192),
        ("psoriasis", FstGroup::I_II, FstGroup::V_VI, 77, 77),
        ("squamous cell carcinoma", FstGroup::V_VI, FstGroup::I_II, 272, 272),
        ("squamous cell carcinoma", FstGroup::I_II, FstGroup::III_IV, 193, 193),
        ("squamous cell carcinoma", FstGroup::I_II, FstGroup::V_VI, 55, 55),
        ("neutrophilic dermatoses", FstGroup::V_VI, FstGroup::I_II, 177, 177),
        ("neutrophilic dermatoses", FstGroup::I_II, FstGroup::III_IV, 119, 119),
        ("neutrophilic dermatoses", FstGroup::I_II, FstGroup::V_VI, 38, 37),
    ];
    let mut got_all = Vec::new();
    let mut notes = Vec::new();
    for (condition, train, test, expected, printed) in cases {
        let seeds = seeds_for(&m, train.opposite_extreme().unwrap(), 11);
        for mode in AugmentationMode::ALL {
            let spec = SplitSpec::fitz_only(train, &DEFAULT_CONDITIONS, 11).augmented(mode, condition, 0);
            let plan = compose_split(&m, &spec, &seeds, &[]).map_err(|e| e.to_string())?;
            let n = plan.test_count(condition, test);
            check(n == expected, format!("{condition} {train}->{test} {mode}: {n} != {expected}"))?;
        }
        got_all.push(expected.to_string());
        if expected != printed {
            notes.push(format!("{condition} {test}: {expected} composed vs {printed} printed (delta {})", expected - printed));
        }
    }
    Ok(format!("Ns {} in every mode; {}", got_all.join("/"), notes.join("; ")))
}

/// Table 1 manifest plus four accepted synthetic children per seed.
fn with_synthetics(m: &DatasetManifest, seeds: &SeedSets, group: FstGroup) -> (DatasetManifest, Vec<SelectionManifest>) {
    let mut m = m.clone();
    let mut selections = Vec::new();
    for (condition, ids) in seeds {
        let mut entries = BTreeMap::new();
        for seed in ids {
            let kids: Vec<String> = (0..4).map(|j| format!("syn-{seed}-{j}")).collect();
            for kid in &kids {
                m.records.push(ImageRecord {
                    image_id: kid.clone(),
                    uri: String::new(),
                    condition: condition.clone(),
                    fst: group.imputed_fst(),
                    provenance: Provenance::Synthetic,
                    parent_seed_id: Some(seed.clone()),
                    qc_flags: BTreeSet::new(),
                });
            }
            entries.insert(seed.clone(), kids);
        }
        selections.push(SelectionManifest {
            condition: condition.clone(),
            target_group: group,
            entries,
            finalized: true,
        });
    }
    (m, selections)
}

fn protocol_arithmetic() -> Outcome {
    let base = table1_manifest();
    let rng_seed = 5;
    let mut checked = 0;
    for train in [FstGroup::I_II, FstGroup::V_VI] {
        let source = train.opposite_extreme().unwrap();
        let seeds = seeds_for(&base, source, rng_seed);
        let (m, selections) = with_synthetics(&base, &seeds, source);
        let raw = base.count_by(None, None).map_err(|e| e.to_string())?;
        let fitz_spec = SplitSpec::fitz_only(train, &DEFAULT_CONDITIONS, rng_seed);
        let fitz = compose_split(&m, &fitz_spec, &seeds, &selections).map_err(|e| e.to_string())?;
        for condition in DEFAULT_AUGMENTED_CONDITIONS {
            let seed_plan = compose_split(&m, &fitz_spec.clone().augmented(AugmentationMode::Seed, condition, 0), &seeds, &selections)
                .map_err(|e| e.to_string())?;
            let added: BTreeSet<&str> = {
                let before: BTreeSet<&str> = fitz.train.iter().map(|r| r.image_id.as_str()).collect();
                seed_plan.train.iter().map(|r| r.image_id.as_str()).filter(|id| !before.contains(id)).collect()
            };
            let expected: BTreeSet<&str> = seeds[condition].iter().map(String::as_str).collect();
            check(
                seed_plan.train.len() == fitz.train.len() + 8 && added == expected,
                format!("{train} {condition}: seed mode added {} records", seed_plan.train.len() - fitz.train.len()),
            )?;
            let pool = raw.group_count(condition, source);
            let tested = seed_plan.test_count(condition, source);
            check(tested + 8 == pool, format!("{train} {condition}: {source} test pool {tested}, raw {pool}"))?;

            let mut previous: BTreeSet<String> = BTreeSet::new();
            for dose in PROTOCOL_DOSES {
                let spec = fitz_spec.clone().augmented(AugmentationMode::DalleAndSeed, condition, dose);
                let plan = compose_split(&m, &spec, &seeds, &selections).map_err(|e| e.to_string())?;
                let synth: BTreeSet<String> = plan.synthetic_ids().into_iter().map(str::to_string).collect();
                check(
                    plan.train.len() == seed_plan.train.len() + dose as usize && synth.len() == dose as usize,
                    format!("{train} {condition} dose {dose}: {} synthetic records", synth.len()),
                )?;
                check(previous.is_subset(&synth), format!("{train} {condition}: dose {dose} does not contain the smaller dose"))?;
                previous = synth;
                checked += 1;
            }
        }
    }
    Ok(format!(
        "seed mode +8 train / -8 opposite-extreme test; doses {PROTOCOL_DOSES:?} add exactly that many, nested ({checked} dose plans)"
    ))
}

// ---- sampler ----

fn sampler_property() -> Outcome {
    let mut records: Vec<ImageRecord> = (0..100).map(|i| ImageRecord::real(format!("a{i}"), "", "a", 1)).collect();
    records.extend((0..50).map(|i| ImageRecord::real(format!("b{i}"), "", "b", 1)));
    let weights = class_weights(&records).map_err(|e| e.to_string())?;
    let labels: Vec<&str> = records.iter().map(|r| r.condition.as_str()).collect();
    let sampler = WeightedSampler::new(&labels, &weights).map_err(|e| e.to_string())?;
    let draws = sampler.draw(&mut rng_for(0, &["acceptance", "sampler"]), 10_000);
    let a = draws.iter().filter(|&&i| labels[i] == "a").count() as f64;
    let b = draws.len() as f64 - a;
    let expected = draws.len() as f64 / 2.0;
    let stat = (a - expected).powi(2) / expected + (b - expected).powi(2) / expected;
    let p = 1.0 - ChiSquared::new(1.0).unwrap().cdf(stat);
    let (fa, fb) = (a / 10_000.0, b / 10_000.0);
    check((fa - 0.5).abs() <= 0.03 && (fb - 0.5).abs() <= 0.03, format!("frequencies {fa:.4} / {fb:.4}"))?;
    check(p > 0.01, format!("chi-square p = {p:.4}"))?;
    Ok(format!("frequencies {fa:.4} / {fb:.4}, chi-square {stat:.3}, p = {p:.3}"))
}

// ---- end-to-end runs ----

fn run_pipeline(fixture: &Path, out: &Path) -> Result<(), String> {
    let run = bin()
        .arg("--config")
        .arg(fixture.join("config.toml"))
        .args(["--backend", "stub", "--output-dir"])
        .arg(out)
        .args(["all", "--auto-curate"])
        .output()
        .map_err(|e| e.to_string())?;
    check(
        run.status.success(),
        format!("`all` failed in {}: {}", out.display(), String::from_utf8_lossy(&run.stderr)),
    )?;
    check(out.join("report/report.json").is_file(), "no report.json")
}

fn dir_files(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))? {
        let p = entry.map_err(|e| e.to_string())?.path();
        if p.is_file() {
            out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).map_err(|e| e.to_string())?);
        }
    }
    Ok(out)
}

fn determinism(work: &Path) -> Outcome {
    let fixture = work.join("smoke");
    let start = Instant::now();
    let made = bin().args(["fixture", "smoke", "--out"]).arg(&fixture).output().map_err(|e| e.to_string())?;
    check(made.status.success(), String::from_utf8_lossy(&made.stderr).into_owned())?;
    let (a, b) = (work.join("run-a"), work.join("run-b"));
    run_pipeline(&fixture, &a)?;
    run_pipeline(&fixture, &b)?;
    let elapsed = start.elapsed();

    let mut compared = 0;
    for sub in ["plans", "selections"] {
        let (fa, fb) = (dir_files(&a.join(sub))?, dir_files(&b.join(sub))?);
        check(!fa.is_empty(), format!("{sub} is empty"))?;
        check(fa.keys().eq(fb.keys()), format!("{sub}: file sets differ"))?;
        for (name, bytes) in &fa {
            check(&fb[name] == bytes, format!("{sub}/{name} differs"))?;
            compared += 1;
        }
    }
    let ra = fs::read(a.join("report/report.json")).map_err(|e| e.to_string())?;
    let rb = fs::read(b.join("report/report.json")).map_err(|e| e.to_string())?;
    check(ra == rb, "report.json differs")?;
    compared += 1;
    check(elapsed < Duration::from_secs(600), format!("took {elapsed:?}, limit 10 min"))?;
    Ok(format!("{compared} files byte-identical across two runs; {elapsed:.1?} total"))
}

fn report_shapes(work: &Path) -> Outcome {
    let report: Value = serde_json::from_slice(&fs::read(work.join("run-a/report/report.json")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let s = |v: &Value| v.as_str().unwrap_or("").to_string();
    let train_groups = ["I_II", "V_VI"];

    let cells = report["cells"].as_array().ok_or("no cells")?;
    for t in train_groups {
        for c in DEFAULT_AUGMENTED_CONDITIONS {
            let slots: BTreeSet<(String, String)> = cells
                .iter()
                .filter(|x| s(&x["train_group"]) == t && s(&x["condition"]) == c)
                .filter(|x| s(&x["mode"]) == "fitz_only" || s(&x["augmented"]) == c)
                .map(|x| (s(&x["mode"]), s(&x["group"])))
                .collect();
            let modes: BTreeSet<&String> = slots.iter().map(|(m, _)| m).collect();
            let groups: BTreeSet<&String> = slots.iter().map(|(_, g)| g).collect();
            check(
                slots.len() == 6 && modes.len() == 3 && groups.len() == 2,
                format!("mode table {t} {c}: {} cells", slots.len()),
            )?;
        }
    }

    let rows = report["dose_rows"].as_array().ok_or("no dose rows")?;
    let dose_rows: BTreeSet<(String, String)> = rows.iter().map(|r| (s(&r["condition"]), s(&r["group"]))).collect();
    let doses: BTreeSet<u64> = rows.iter().filter_map(|r| r["dose"].as_u64()).collect();
    check(
        dose_rows.len() == 6 && doses == PROTOCOL_DOSES.iter().map(|&d| d as u64).collect() && rows.len() == 24,
        format!("dose table {} rows x {} doses", dose_rows.len(), doses.len()),
    )?;

    let spill = report["spillover"].as_array().ok_or("no spillover")?;
    for t in train_groups {
        let mine: Vec<&Value> = spill.iter().filter(|x| s(&x["train_group"]) == t).collect();
        let blocks: BTreeSet<String> = mine.iter().map(|x| s(&x["augmented"])).collect();
        let conditions: BTreeSet<String> = mine.iter().map(|x| s(&x["condition"])).collect();
        let groups: BTreeSet<String> = mine.iter().map(|x| s(&x["group"])).collect();
        let slots: BTreeSet<(String, String, String)> =
            mine.iter().map(|x| (s(&x["augmented"]), s(&x["condition"]), s(&x["group"]))).collect();
        check(
            blocks.len() == 4 && conditions.len() == 7 && groups.len() == 2 && slots.len() == 56,
            format!("spillover {t}: {} blocks x {} conditions x {} groups", blocks.len(), conditions.len(), groups.len()),
        )?;
    }
    Ok("absolute accuracies are NOT reproducible at desk scale (they need GPU fine-tuning, the hosted generator and human curation); \
        substituted shapes hold: mode table 3x2 per condition, dose table 6 rows x 4 doses, spillover 4 blocks x 7 conditions x 2 groups"
        .into())
}

fn main() {
    let work = tempfile::tempdir().unwrap();
    let mut results: Vec<(&str, Outcome)> = vec![
        ("table 1 counts via ingest", table1_reproduction(work.path())),
        ("wald intervals match printed bounds", ci_reproduction()),
        ("test-set sizes", split_n_reproduction()),
        ("protocol arithmetic", protocol_arithmetic()),
        ("weighted sampler balance", sampler_property()),
    ];
    let det = determinism(work.path());
    let ran = det.is_ok() || work.path().join("run-a/report/report.json").is_file();
    results.push(("determinism of stub runs", det));
    results.push((
        "accuracy tables (not reproducible; shape checks)",
        if ran { report_shapes(work.path()) } else { Err("no report to inspect".into()) },
    ));

    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("{} of {} acceptance criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
