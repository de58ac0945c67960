//! Subgroup accuracy, binomial confidence intervals and result tables.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{FstGroup, ImageRecord, Provenance};
use crate::splitter::{AugmentationMode, Experiment, SplitPlan};

pub const Z_95: f64 = 1.96;
pub const UNDEFINED: &str = "—";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{predictions} predictions for {truths} truths")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("confidence interval needs n >= 1")]
    InvalidN,
    #[error("accuracy {0} is outside [0, 1]")]
    InvalidAccuracy(f64),
    #[error("no predictions for {} test records: {}", .0.len(), preview(.0))]
    MissingPredictions(Vec<String>),
    #[error("conflicting predictions for `{0}`")]
    ConflictingPrediction(String),
    #[error("evaluation touched non-real record `{0}`")]
    NonRealTestRecord(String),
    #[error("malformed {table} table at line {line}: {message}")]
    Parse { table: &'static str, line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn preview(ids: &[String]) -> String {
    let mut s = ids.iter().take(5).cloned().collect::<Vec<_>>().join(", ");
    if ids.len() > 5 {
        s.push_str(", ...");
    }
    s
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// `(correct, n, accuracy)`; accuracy is `None` when `n = 0`.
pub fn accuracy<S: AsRef<str>, T: AsRef<str>>(predictions: &[S], truths: &[T]) -> Result<(usize, usize, Option<f64>)> {
    if predictions.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            truths: truths.len(),
        });
    }
    let n = truths.len();
    let correct = predictions
        .iter()
        .zip(truths)
        .filter(|(p, t)| p.as_ref() == t.as_ref())
        .count();
    Ok((correct, n, (n > 0).then(|| correct as f64 / n as f64)))
}

fn check_interval_inputs(acc: f64, n: usize) -> Result<()> {
    if n == 0 {
        return Err(EvalError::InvalidN);
    }
    if !(0.0..=1.0).contains(&acc) {
        return Err(EvalError::InvalidAccuracy(acc));
    }
    Ok(())
}

/// Normal-approximation interval `p ± z·sqrt(p(1−p)/n)`, clipped to [0, 1].
pub fn wald_ci(acc: f64, n: usize, z: f64) -> Result<(f64, f64)> {
    check_interval_inputs(acc, n)?;
    let half = z * (acc * (1.0 - acc) / n as f64).sqrt();
    Ok(((acc - half).max(0.0), (acc + half).min(1.0)))
}

pub fn wilson_ci(acc: f64, n: usize, z: f64) -> Result<(f64, f64)> {
    check_interval_inputs(acc, n)?;
    let n = n as f64;
    let z2 = z * z;
    let centre = (acc + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z / (1.0 + z2 / n) * (acc * (1.0 - acc) / n + z2 / (4.0 * n * n)).sqrt();
    Ok(((centre - half).max(0.0), (centre + half).min(1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CiMethod {
    #[default]
    Wald,
    Wilson,
}

impl CiMethod {
    pub fn interval(self, acc: f64, n: usize) -> Result<(f64, f64)> {
        match self {
            CiMethod::Wald => wald_ci(acc, n, Z_95),
            CiMethod::Wilson => wilson_ci(acc, n, Z_95),
        }
    }
}

/// Accuracy of one (condition, test group) under one training regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub train_group: FstGroup,
    pub mode: AugmentationMode,
    pub dose: u32,
    pub augmented: Option<String>,
    pub condition: String,
    pub group: FstGroup,
    pub n: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

impl EvalCell {
    fn key(&self) -> impl Ord + '_ {
        (self.train_group, &self.condition, self.group, self.mode, self.dose, &self.augmented)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseRow {
    pub train_group: FstGroup,
    pub condition: String,
    pub group: FstGroup,
    pub dose: u32,
    pub n: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpilloverCell {
    pub train_group: FstGroup,
    /// `None` for the unaugmented baseline block.
    pub augmented: Option<String>,
    pub condition: String,
    pub group: FstGroup,
    pub n: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    /// Digest of the configuration that produced the predictions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
    pub cells: Vec<EvalCell>,
    pub dose_rows: Vec<DoseRow>,
    pub spillover: Vec<SpilloverCell>,
}

/// Predictions for one composed plan, as `(image_id, label)` pairs.
#[derive(Debug, Clone)]
pub struct PlanResult {
    pub plan: SplitPlan,
    pub predictions: Vec<(String, String)>,
}

fn tally(records: &[&ImageRecord], preds: &HashMap<&str, &str>) -> (usize, usize) {
    let correct = records
        .iter()
        .filter(|r| preds.get(r.image_id.as_str()) == Some(&r.condition.as_str()))
        .count();
    (correct, records.len())
}

impl EvalReport {
    fn sort(&mut self) {
        self.cells.sort_by(|a, b| a.key().cmp(&b.key()));
        self.dose_rows.sort_by(|a, b| {
            (a.train_group, &a.condition, a.group, a.dose).cmp(&(b.train_group, &b.condition, b.group, b.dose))
        });
        // baseline block first, then augmented conditions alphabetically
        self.spillover.sort_by(|a, b| {
            (a.train_group, &a.augmented, &a.condition, a.group).cmp(&(b.train_group, &b.augmented, &b.condition, b.group))
        });
    }

    /// Combine two reports; order of merging does not matter. The digest is
    /// kept only when both sides agree.
    pub fn merge(mut self, other: EvalReport) -> EvalReport {
        if self.config_digest != other.config_digest {
            self.config_digest = None;
        }
        self.cells.extend(other.cells);
        self.dose_rows.extend(other.dose_rows);
        self.spillover.extend(other.spillover);
        self.sort();
        self
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<EvalReport> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

pub fn build_report(results: &[PlanResult]) -> Result<EvalReport> {
    build_report_with(results, CiMethod::Wald)
}

pub fn build_report_with(results: &[PlanResult], method: CiMethod) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for res in results {
        let mut preds: HashMap<&str, &str> = HashMap::new();
        for (id, label) in &res.predictions {
            if let Some(prev) = preds.insert(id.as_str(), label.as_str()) {
                if prev != label {
                    return Err(EvalError::ConflictingPrediction(id.clone()));
                }
            }
        }
        let mut missing: Vec<String> = Vec::new();
        for (_, r) in res.plan.test_records() {
            if r.provenance != Provenance::Real {
                return Err(EvalError::NonRealTestRecord(r.image_id.clone()));
            }
            if !preds.contains_key(r.image_id.as_str()) {
                missing.push(r.image_id.clone());
            }
        }
        if !missing.is_empty() {
            missing.sort();
            return Err(EvalError::MissingPredictions(missing));
        }

        let spec = &res.plan.spec;
        let augmented = spec.augmented_conditions.iter().next().cloned();
        let conditions: Vec<&String> = match (spec.experiment, spec.mode) {
            (Experiment::Modes, AugmentationMode::FitzOnly) | (Experiment::Spillover, _) => spec.conditions.iter().collect(),
            _ => spec.augmented_conditions.iter().collect(),
        };
        for condition in conditions {
            for (group, recs) in &res.plan.test_by_group {
                let subset: Vec<&ImageRecord> = recs.iter().filter(|r| &r.condition == condition).collect();
                let (correct, n) = tally(&subset, &preds);
                let acc = (n > 0).then(|| correct as f64 / n as f64);
                match spec.experiment {
                    Experiment::Modes => {
                        let ci = acc.map(|a| method.interval(a, n)).transpose()?;
                        report.cells.push(EvalCell {
                            train_group: spec.train_group,
                            mode: spec.mode,
                            dose: spec.dose,
                            augmented: augmented.clone(),
                            condition: condition.clone(),
                            group: *group,
                            n,
                            correct,
                            accuracy: acc,
                            ci_low: ci.map(|c| c.0),
                            ci_high: ci.map(|c| c.1),
                        });
                    }
                    Experiment::Dose => report.dose_rows.push(DoseRow {
                        train_group: spec.train_group,
                        condition: condition.clone(),
                        group: *group,
                        dose: spec.dose,
                        n,
                        correct,
                        accuracy: acc,
                    }),
                    Experiment::Spillover => report.spillover.push(SpilloverCell {
                        train_group: spec.train_group,
                        augmented: augmented.clone(),
                        condition: condition.clone(),
                        group: *group,
                        n,
                        correct,
                        accuracy: acc,
                    }),
                }
            }
        }
    }
    report.sort();
    Ok(report)
}

// ---- rendering ----

pub fn format_mode_cell(accuracy: Option<f64>, ci: Option<(f64, f64)>, n: usize) -> String {
    match (accuracy, ci) {
        (Some(a), Some((lo, hi))) => format!("{a:.3} ({lo:.2}-{hi:.2}) , {n}"),
        _ => UNDEFINED.to_string(),
    }
}

pub fn format_short_cell(accuracy: Option<f64>, n: usize) -> String {
    match accuracy {
        Some(a) => format!("{a:.3}, {n}"),
        None => UNDEFINED.to_string(),
    }
}

fn title_case(s: &str) -> String {
    s.split(' ')
        .map(|w| {
            let mut c = w.chars();
            match c.next() {
                Some(f) => f.to_uppercase().chain(c).collect(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

const EXTREMES: [FstGroup; 2] = [FstGroup::I_II, FstGroup::V_VI];

/// Mode comparison: one block per condition with augmented runs, rows by
/// test group, columns by training group and mode.
pub fn render_modes_markdown(report: &EvalReport) -> String {
    let mut out = String::from("# Accuracy by training data (95% CI), N\n");
    let mut conditions: BTreeSet<&str> = report
        .cells
        .iter()
        .filter(|c| c.mode != AugmentationMode::FitzOnly)
        .map(|c| c.condition.as_str())
        .collect();
    if conditions.is_empty() {
        conditions = report.cells.iter().map(|c| c.condition.as_str()).collect();
    }
    for condition in conditions {
        let _ = writeln!(out, "\n## {}\n", title_case(condition));
        let mut header = String::from("| FST |");
        let mut rule = String::from("|---|");
        for tg in EXTREMES {
            for m in AugmentationMode::ALL {
                let _ = write!(header, " Trained on {} {} |", tg.label(), m.heading());
                rule.push_str("---|");
            }
        }
        let _ = writeln!(out, "{header}\n{rule}");
        for g in FstGroup::ALL {
            let _ = write!(out, "| {} |", g.label());
            for tg in EXTREMES {
                for m in AugmentationMode::ALL {
                    let cell = report.cells.iter().find(|c| {
                        c.condition == condition
                            && c.train_group == tg
                            && c.group == g
                            && c.mode == m
                            && (m == AugmentationMode::FitzOnly || c.augmented.as_deref() == Some(condition))
                    });
                    let text = cell.map_or(UNDEFINED.to_string(), |c| {
                        format_mode_cell(c.accuracy, c.ci_low.zip(c.ci_high), c.n)
                    });
                    let _ = write!(out, " {text} |");
                }
            }
            out.push('\n');
        }
    }
    out
}

/// Dose response: per (training group, condition) block, rows by test group,
/// columns by dose, then N.
pub fn render_dose_markdown(report: &EvalReport) -> String {
    let mut out = String::from("# Accuracy by number of added synthetic images\n");
    let doses: BTreeSet<u32> = report.dose_rows.iter().map(|r| r.dose).collect();
    let blocks: BTreeSet<(FstGroup, &str)> = report
        .dose_rows
        .iter()
        .map(|r| (r.train_group, r.condition.as_str()))
        .collect();
    for (tg, condition) in blocks {
        let _ = writeln!(out, "\n## {} (trained on {})\n", title_case(condition), tg.label());
        let mut header = String::from("| FST |");
        let mut rule = String::from("|---|");
        for d in &doses {
            let _ = write!(header, " +{d} images |");
            rule.push_str("---|");
        }
        let _ = writeln!(out, "{header} N |\n{rule}---|");
        for g in FstGroup::ALL.into_iter().filter(|g| *g != tg) {
            let rows: Vec<&DoseRow> = report
                .dose_rows
                .iter()
                .filter(|r| r.train_group == tg && r.condition == condition && r.group == g)
                .collect();
            if rows.is_empty() {
                continue;
            }
            let _ = write!(out, "| {} |", g.label());
            for d in &doses {
                let text = rows
                    .iter()
                    .find(|r| r.dose == *d)
                    .and_then(|r| r.accuracy)
                    .map_or(UNDEFINED.to_string(), |a| format!("{a:.3}"));
                let _ = write!(out, " {text} |");
            }
            let _ = writeln!(out, " {} |", rows[0].n);
        }
    }
    out
}

/// Spillover: per training group, one block per augmentation (baseline
/// first), rows by test group, columns by condition.
pub fn render_spillover_markdown(report: &EvalReport) -> String {
    let mut out = String::from("# Accuracy across conditions with synthetic images added\n");
    let conditions: BTreeSet<&str> = report.spillover.iter().map(|c| c.condition.as_str()).collect();
    for tg in EXTREMES {
        let blocks: BTreeSet<Option<&str>> = report
            .spillover
            .iter()
            .filter(|c| c.train_group == tg)
            .map(|c| c.augmented.as_deref())
            .collect();
        if blocks.is_empty() {
            continue;
        }
        let _ = writeln!(out, "\n## Trained on FST {}\n", tg.label());
        let mut header = String::from("| Block | FST |");
        let mut rule = String::from("|---|---|");
        for c in &conditions {
            let _ = write!(header, " {} |", title_case(c));
            rule.push_str("---|");
        }
        let _ = writeln!(out, "{header}\n{rule}");
        for block in blocks {
            let name = block.map_or("Fitzpatrick images only".to_string(), title_case);
            for g in FstGroup::ALL.into_iter().filter(|g| *g != tg) {
                let _ = write!(out, "| {name} | {} |", g.label());
                for c in &conditions {
                    let text = report
                        .spillover
                        .iter()
                        .find(|s| s.train_group == tg && s.augmented.as_deref() == block && s.group == g && s.condition == *c)
                        .map_or(UNDEFINED.to_string(), |s| format_short_cell(s.accuracy, s.n));
                    let _ = write!(out, " {text} |");
                }
                out.push('\n');
            }
        }
    }
    out
}

pub fn render_markdown(report: &EvalReport) -> String {
    let mut parts = vec![render_modes_markdown(report)];
    if !report.dose_rows.is_empty() {
        parts.push(render_dose_markdown(report));
    }
    if !report.spillover.is_empty() {
        parts.push(render_spillover_markdown(report));
    }
    let mut out = parts.join("\n");
    if let Some(d) = &report.config_digest {
        let _ = write!(out, "\nconfig digest: `{d}`\n");
    }
    out
}

pub const MODES_COLUMNS: [&str; 11] = [
    "train_group", "mode", "dose", "augmented", "condition", "group", "n", "correct", "accuracy", "ci_low", "ci_high",
];
pub const DOSE_COLUMNS: [&str; 7] = ["train_group", "condition", "group", "dose", "n", "correct", "accuracy"];
pub const SPILLOVER_COLUMNS: [&str; 7] = ["train_group", "augmented", "condition", "group", "n", "correct", "accuracy"];

fn opt_f(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn csv_doc(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

/// `(modes, dose, spillover)` CSV documents at full precision.
pub fn render_csv(report: &EvalReport) -> (String, String, String) {
    let modes = csv_doc(
        &MODES_COLUMNS,
        report.cells.iter().map(|c| {
            vec![
                c.train_group.key().into(),
                c.mode.key().into(),
                c.dose.to_string(),
                c.augmented.clone().unwrap_or_default(),
                c.condition.clone(),
                c.group.key().into(),
                c.n.to_string(),
                c.correct.to_string(),
                opt_f(c.accuracy),
                opt_f(c.ci_low),
                opt_f(c.ci_high),
            ]
        }),
    );
    let dose = csv_doc(
        &DOSE_COLUMNS,
        report.dose_rows.iter().map(|r| {
            vec![
                r.train_group.key().into(),
                r.condition.clone(),
                r.group.key().into(),
                r.dose.to_string(),
                r.n.to_string(),
                r.correct.to_string(),
                opt_f(r.accuracy),
            ]
        }),
    );
    let spill = csv_doc(
        &SPILLOVER_COLUMNS,
        report.spillover.iter().map(|s| {
            vec![
                s.train_group.key().into(),
                s.augmented.clone().unwrap_or_default(),
                s.condition.clone(),
                s.group.key().into(),
                s.n.to_string(),
                s.correct.to_string(),
                opt_f(s.accuracy),
            ]
        }),
    );
    (modes, dose, spill)
}

struct Fields<'a> {
    table: &'static str,
    line: usize,
    rec: &'a csv::StringRecord,
}

impl Fields<'_> {
    fn err(&self, message: impl Into<String>) -> EvalError {
        EvalError::Parse {
            table: self.table,
            line: self.line,
            message: message.into(),
        }
    }

    fn s(&self, i: usize) -> Result<&str> {
        self.rec.get(i).ok_or_else(|| self.err(format!("missing column {i}")))
    }

    fn opt_s(&self, i: usize) -> Result<Option<String>> {
        Ok(Some(self.s(i)?.to_string()).filter(|s| !s.is_empty()))
    }

    fn num<T: std::str::FromStr>(&self, i: usize) -> Result<T> {
        self.s(i)?.parse().map_err(|_| self.err(format!("bad number in column {i}")))
    }

    fn opt_f(&self, i: usize) -> Result<Option<f64>> {
        match self.s(i)? {
            "" => Ok(None),
            v => v.parse().map(Some).map_err(|_| self.err(format!("bad number in column {i}"))),
        }
    }

    fn group(&self, i: usize) -> Result<FstGroup> {
        self.s(i)?.parse().map_err(|_| self.err("bad group"))
    }
}

fn parse_table<T>(
    text: &str,
    table: &'static str,
    header: &[&str],
    row: impl Fn(&Fields<'_>) -> Result<T>,
) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let found = rdr.headers().map_err(|e| EvalError::Parse {
        table,
        line: 1,
        message: e.to_string(),
    })?;
    if found.iter().collect::<Vec<_>>() != header {
        return Err(EvalError::Parse {
            table,
            line: 1,
            message: "unexpected header".into(),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| EvalError::Parse {
            table,
            line: i + 2,
            message: e.to_string(),
        })?;
        out.push(row(&Fields { table, line: i + 2, rec: &rec })?);
    }
    Ok(out)
}

/// Inverse of [`render_csv`].
pub fn parse_csv(modes: &str, dose: &str, spillover: &str) -> Result<EvalReport> {
    let cells = parse_table(modes, "modes", &MODES_COLUMNS, |f| {
        Ok(EvalCell {
            train_group: f.group(0)?,
            mode: f.s(1)?.parse().map_err(|_| f.err("bad mode"))?,
            dose: f.num(2)?,
            augmented: f.opt_s(3)?,
            condition: f.s(4)?.to_string(),
            group: f.group(5)?,
            n: f.num(6)?,
            correct: f.num(7)?,
            accuracy: f.opt_f(8)?,
            ci_low: f.opt_f(9)?,
            ci_high: f.opt_f(10)?,
        })
    })?;
    let dose_rows = parse_table(dose, "dose", &DOSE_COLUMNS, |f| {
        Ok(DoseRow {
            train_group: f.group(0)?,
            condition: f.s(1)?.to_string(),
            group: f.group(2)?,
            dose: f.num(3)?,
            n: f.num(4)?,
            correct: f.num(5)?,
            accuracy: f.opt_f(6)?,
        })
    })?;
    let spillover = parse_table(spillover, "spillover", &SPILLOVER_COLUMNS, |f| {
        Ok(SpilloverCell {
            train_group: f.group(0)?,
            augmented: f.opt_s(1)?,
            condition: f.s(2)?.to_string(),
            group: f.group(3)?,
            n: f.num(4)?,
            correct: f.num(5)?,
            accuracy: f.opt_f(6)?,
        })
    })?;
    Ok(EvalReport {
        config_digest: None,
        cells,
        dose_rows,
        spillover,
    })
}

pub const REPORT_MD: &str = "report.md";
pub const REPORT_JSON: &str = "report.json";
pub const MODES_CSV: &str = "report.modes.csv";
pub const DOSE_CSV: &str = "report.dose.csv";
pub const SPILLOVER_CSV: &str = "report.spillover.csv";

/// Write `report.md`, the three CSV tables and `report.json` into `dir`.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(REPORT_MD), render_markdown(report))?;
    let (modes, dose, spill) = render_csv(report);
    std::fs::write(dir.join(MODES_CSV), modes)?;
    std::fs::write(dir.join(DOSE_CSV), dose)?;
    std::fs::write(dir.join(SPILLOVER_CSV), spill)?;
    report.write_json(&dir.join(REPORT_JSON))
}

/// Per-plan test counts by (condition, group), used for partition checks.
pub fn test_counts(plan: &SplitPlan) -> BTreeMap<(String, FstGroup), usize> {
    let mut out = BTreeMap::new();
    for (g, r) in plan.test_records() {
        *out.entry((r.condition.clone(), g)).or_default() += 1;
    }
    out
}
