//! Domain types shared by every other module, plus dataset IO, fold splitting and
//! run-artifact persistence.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Default number of simulation steps per day.
pub const DEFAULT_STEPS_PER_DAY: u32 = 48;

pub type AccountId = String;
/// Ground-truth role of every account in a universe.
pub type Labels = BTreeMap<AccountId, Role>;
/// A binary classification: the set of accounts flagged as bots.
pub type Flags = BTreeSet<AccountId>;
pub type Universe = BTreeSet<AccountId>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Human,
    Bot,
}

impl Role {
    pub fn is_bot(self) -> bool {
        self == Role::Bot
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Active,
    Dormant,
    Suspended,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Account {
    pub id: AccountId,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub campaign: Option<u32>,
    pub created_day: u32,
    pub status: Status,
    #[serde(default)]
    pub sentiment: BTreeMap<u32, f64>,
    #[serde(default)]
    pub metadata: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Post,
    Like,
    Follow,
    Idle,
    Activate,
    /// Emitted by the platform when a detector scan blocks the actor.
    Suspend,
}

/// One timestamped platform action.
///
/// `target` is always an account id: the liked post's author for `Like`, the followed
/// account for `Follow`, the woken reserve account for `Activate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub timestamp: u64,
    pub day: u32,
    pub actor: AccountId,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<AccountId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polarity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Report {
    pub day: u32,
    pub reporter: AccountId,
    pub subject: AccountId,
}

/// Per-account bot probabilities from one detector or aggregation strategy.
///
/// Binary outputs are encoded as 0/1 scores. The key set is the source's coverage.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictionSet {
    pub source: String,
    pub scores: BTreeMap<AccountId, f64>,
}

impl PredictionSet {
    pub fn new(source: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            scores: BTreeMap::new(),
        }
    }

    pub fn from_scores(source: impl Into<String>, scores: BTreeMap<AccountId, f64>) -> Result<Self> {
        let set = Self {
            source: source.into(),
            scores,
        };
        set.check()?;
        Ok(set)
    }

    /// Scores 1.0 for every flagged account and 0.0 for the rest of `coverage`.
    pub fn from_flags<'a>(
        source: impl Into<String>,
        flags: &Flags,
        coverage: impl IntoIterator<Item = &'a AccountId>,
    ) -> Self {
        let scores = coverage
            .into_iter()
            .map(|a| (a.clone(), if flags.contains(a) { 1.0 } else { 0.0 }))
            .collect();
        Self {
            source: source.into(),
            scores,
        }
    }

    pub fn covers(&self, account: &str) -> bool {
        self.scores.contains_key(account)
    }

    pub fn score(&self, account: &str) -> Option<f64> {
        self.scores.get(account).copied()
    }

    fn check(&self) -> Result<()> {
        for (a, p) in &self.scores {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::invalid(format!(
                    "score {p} for `{a}` in source `{}` is outside [0, 1]",
                    self.source
                )));
            }
        }
        Ok(())
    }

    /// Accounts scoring at or above `threshold`.
    pub fn flags(&self, threshold: f64) -> Flags {
        self.scores
            .iter()
            .filter(|(_, &p)| p >= threshold)
            .map(|(a, _)| a.clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub accounts: Vec<Account>,
    pub events: Vec<InteractionEvent>,
    pub reports: Vec<Report>,
    #[serde(default)]
    pub external_predictions: BTreeMap<String, PredictionSet>,
    pub n_days: u32,
    pub steps_per_day: u32,
}

impl Dataset {
    pub fn labels(&self) -> Labels {
        self.accounts.iter().map(|a| (a.id.clone(), a.role)).collect()
    }

    pub fn universe(&self) -> Universe {
        self.accounts.iter().map(|a| a.id.clone()).collect()
    }

    pub fn account(&self, id: &str) -> Option<&Account> {
        self.accounts.iter().find(|a| a.id == id)
    }

    pub fn n_bots(&self) -> usize {
        self.accounts.iter().filter(|a| a.role.is_bot()).count()
    }

    /// Copy with every event and report dated after `last_day` removed.
    pub fn truncated(&self, last_day: u32) -> Dataset {
        let mut d = self.clone();
        d.events.retain(|e| e.day <= last_day);
        d.reports.retain(|r| r.day <= last_day);
        d
    }

    pub fn day_of_step(&self, step: u64) -> u32 {
        day_of_step(step, self.steps_per_day)
    }

    /// Checks every dataset invariant; the error names the first offending id.
    pub fn validate(&self) -> Result<()> {
        let mut roles: BTreeMap<&str, Role> = BTreeMap::new();
        for a in &self.accounts {
            if roles.insert(&a.id, a.role).is_some() {
                return Err(Error::InvalidDataset(format!("duplicate account id `{}`", a.id)));
            }
            match (a.role, a.campaign) {
                (Role::Bot, None) => {
                    return Err(Error::InvalidDataset(format!("bot `{}` has no campaign", a.id)))
                }
                (Role::Human, Some(_)) => {
                    return Err(Error::InvalidDataset(format!("human `{}` has a campaign", a.id)))
                }
                _ => {}
            }
            if let Some((t, v)) = a.sentiment.iter().find(|(_, v)| !(-1.0..=1.0).contains(*v)) {
                return Err(Error::InvalidDataset(format!(
                    "account `{}` has sentiment {v} on topic {t} outside [-1, 1]",
                    a.id
                )));
            }
        }
        if self.steps_per_day == 0 || self.n_days == 0 {
            return Err(Error::InvalidDataset("n_days and steps_per_day must be positive".into()));
        }

        let known = |id: &str| -> Result<()> {
            if roles.contains_key(id) {
                Ok(())
            } else {
                Err(Error::UnknownAccount(id.to_string()))
            }
        };

        let mut last_ts = 0;
        for e in &self.events {
            known(&e.actor)?;
            if let Some(t) = &e.target {
                known(t)?;
            }
            if e.timestamp < last_ts {
                return Err(Error::InvalidDataset(format!(
                    "events are not sorted by timestamp (step {} after {last_ts})",
                    e.timestamp
                )));
            }
            last_ts = e.timestamp;
            if e.day != self.day_of_step(e.timestamp) || e.day > self.n_days {
                return Err(Error::InvalidDataset(format!(
                    "event at step {} has day {} (expected {} of {})",
                    e.timestamp,
                    e.day,
                    self.day_of_step(e.timestamp),
                    self.n_days
                )));
            }
            let is_post = e.action == Action::Post;
            if is_post != e.polarity.is_some() {
                return Err(Error::InvalidDataset(format!(
                    "event by `{}` at step {}: polarity must be present exactly for posts",
                    e.actor, e.timestamp
                )));
            }
            if let Some(p) = e.polarity {
                if !(-1.0..=1.0).contains(&p) {
                    return Err(Error::InvalidDataset(format!(
                        "post by `{}` has polarity {p} outside [-1, 1]",
                        e.actor
                    )));
                }
            }
            if matches!(e.action, Action::Like | Action::Follow | Action::Activate) && e.target.is_none() {
                return Err(Error::InvalidDataset(format!(
                    "{:?} by `{}` at step {} has no target",
                    e.action, e.actor, e.timestamp
                )));
            }
        }

        let mut seen = HashSet::new();
        for r in &self.reports {
            known(&r.reporter)?;
            known(&r.subject)?;
            if r.reporter == r.subject {
                return Err(Error::InvalidDataset(format!("`{}` reported itself", r.reporter)));
            }
            if roles[r.reporter.as_str()] != Role::Human {
                return Err(Error::InvalidDataset(format!("reporter `{}` is not human", r.reporter)));
            }
            if r.day == 0 || r.day > self.n_days {
                return Err(Error::InvalidDataset(format!(
                    "report by `{}` on day {} outside 1..={}",
                    r.reporter, r.day, self.n_days
                )));
            }
            if !seen.insert((r.day, r.reporter.as_str(), r.subject.as_str())) {
                return Err(Error::InvalidDataset(format!(
                    "duplicate report ({}, {}, day {})",
                    r.reporter, r.subject, r.day
                )));
            }
        }

        for set in self.external_predictions.values() {
            for a in set.scores.keys() {
                known(a)?;
            }
            set.check()?;
        }
        Ok(())
    }
}

/// Days are 1-indexed, steps 0-indexed.
pub fn day_of_step(step: u64, steps_per_day: u32) -> u32 {
    (step / u64::from(steps_per_day)) as u32 + 1
}

// ---------------------------------------------------------------------------
// Loading and writing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct DatasetPaths {
    pub accounts: PathBuf,
    pub events: PathBuf,
    pub reports: PathBuf,
    pub predictions: Vec<PathBuf>,
}

impl DatasetPaths {
    /// The standard file names inside a dataset directory.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            accounts: dir.join("accounts.jsonl"),
            events: dir.join("events.jsonl"),
            reports: dir.join("reports.csv"),
            predictions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LoadOptions {
    pub steps_per_day: u32,
    /// Inferred from the latest event or report day when absent.
    pub n_days: Option<u32>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            steps_per_day: DEFAULT_STEPS_PER_DAY,
            n_days: None,
        }
    }
}

/// Layout metadata stored next to a dataset as `dataset.json`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetLayout {
    pub n_days: u32,
    pub steps_per_day: u32,
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            file: path.display().to_string(),
            line: i + 1,
            column: Some(e.column().to_string()),
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    let column = match e.kind() {
        csv::ErrorKind::Deserialize { err, .. } => err.field().map(|f| f.to_string()),
        _ => None,
    };
    Error::Malformed {
        file: path.display().to_string(),
        line,
        column,
        message: e.to_string(),
    }
}

pub fn read_reports(path: &Path) -> Result<Vec<Report>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Malformed {
            file: path.display().to_string(),
            line: 0,
            column: None,
            message: format!("{other:?}"),
        },
    })?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != ["day", "reporter", "subject"] {
        return Err(Error::Malformed {
            file: path.display().to_string(),
            line: 1,
            column: None,
            message: "expected header `day,reporter,subject`".into(),
        });
    }
    rdr.deserialize()
        .map(|r| r.map_err(|e| csv_error(path, e)))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRow {
    source: String,
    account: String,
    probability: f64,
}

/// Reads a `source,account,probability` file into one set per source.
pub fn read_predictions(path: &Path) -> Result<BTreeMap<String, PredictionSet>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Malformed {
            file: path.display().to_string(),
            line: 0,
            column: None,
            message: format!("{other:?}"),
        },
    })?;
    let mut out: BTreeMap<String, PredictionSet> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<PredictionRow>().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        if !(0.0..=1.0).contains(&row.probability) {
            return Err(Error::Malformed {
                file: path.display().to_string(),
                line: i + 2,
                column: Some("probability".into()),
                message: format!("probability {} outside [0, 1]", row.probability),
            });
        }
        out.entry(row.source.clone())
            .or_insert_with(|| PredictionSet::new(row.source.clone()))
            .scores
            .insert(row.account, row.probability);
    }
    Ok(out)
}

pub fn write_predictions(path: &Path, sets: &[&PredictionSet]) -> Result<()> {
    let mut table = Table::new("predictions", ["source", "account", "probability"]);
    for set in sets {
        for (a, p) in &set.scores {
            table.push([set.source.clone(), a.clone(), fmt_f64(*p)]);
        }
    }
    write_atomic(path, &table.to_csv_bytes()?)
}

/// Loads and validates a dataset from its component files.
pub fn load_dataset(paths: &DatasetPaths, opts: LoadOptions) -> Result<Dataset> {
    let accounts: Vec<Account> = read_jsonl(&paths.accounts)?;
    let events: Vec<InteractionEvent> = read_jsonl(&paths.events)?;
    let reports = read_reports(&paths.reports)?;
    let mut external_predictions = BTreeMap::new();
    for p in &paths.predictions {
        for (name, set) in read_predictions(p)? {
            external_predictions.insert(name, set);
        }
    }
    let n_days = opts.n_days.unwrap_or_else(|| {
        events
            .iter()
            .map(|e| e.day)
            .chain(reports.iter().map(|r| r.day))
            .max()
            .unwrap_or(1)
    });
    let ds = Dataset {
        accounts,
        events,
        reports,
        external_predictions,
        n_days,
        steps_per_day: opts.steps_per_day,
    };
    ds.validate()?;
    Ok(ds)
}

/// Loads a dataset directory written by [`write_dataset`], honouring its `dataset.json`.
pub fn load_dataset_dir(dir: &Path, predictions: &[PathBuf]) -> Result<Dataset> {
    let mut paths = DatasetPaths::in_dir(dir);
    paths.predictions = predictions.to_vec();
    let layout_path = dir.join("dataset.json");
    let opts = if layout_path.exists() {
        let raw = fs::read(&layout_path).map_err(|e| Error::io(&layout_path, e))?;
        let layout: DatasetLayout = serde_json::from_slice(&raw).map_err(|e| Error::Serde(e.to_string()))?;
        LoadOptions {
            steps_per_day: layout.steps_per_day,
            n_days: Some(layout.n_days),
        }
    } else {
        LoadOptions::default()
    };
    load_dataset(&paths, opts)
}

fn jsonl_bytes<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for it in items {
        serde_json::to_writer(&mut buf, it).map_err(|e| Error::Serde(e.to_string()))?;
        buf.push(b'\n');
    }
    Ok(buf)
}

/// Serializes the dataset as `accounts.jsonl`, `events.jsonl`, `reports.csv` and
/// `dataset.json`; returns the written paths.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut reports = Table::new("reports", ["day", "reporter", "subject"]);
    for r in &ds.reports {
        reports.push([r.day.to_string(), r.reporter.clone(), r.subject.clone()]);
    }
    let layout = DatasetLayout {
        n_days: ds.n_days,
        steps_per_day: ds.steps_per_day,
    };
    let files = vec![
        ("accounts.jsonl", jsonl_bytes(&ds.accounts)?),
        ("events.jsonl", jsonl_bytes(&ds.events)?),
        ("reports.csv", reports.to_csv_bytes()?),
        (
            "dataset.json",
            serde_json::to_vec_pretty(&layout).map_err(|e| Error::Serde(e.to_string()))?,
        ),
    ];
    write_files_atomic(dir, &files)
}

// ---------------------------------------------------------------------------
// Folds
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub assignment: BTreeMap<AccountId, usize>,
}

impl FoldAssignment {
    pub fn fold(&self, i: usize) -> Universe {
        self.assignment
            .iter()
            .filter(|(_, &f)| f == i)
            .map(|(a, _)| a.clone())
            .collect()
    }

    /// Every account outside fold `i`.
    pub fn complement(&self, i: usize) -> Universe {
        self.assignment
            .iter()
            .filter(|(_, &f)| f != i)
            .map(|(a, _)| a.clone())
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in self.assignment.values() {
            s[f] += 1;
        }
        s
    }
}

/// Role-stratified k-fold split of `labels`' accounts.
///
/// Bots are shuffled and dealt round-robin, then humans continue the same deal, so
/// fold sizes differ by at most one and per-fold bot counts differ by at most one.
pub fn split_labels(labels: &Labels, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::invalid(format!("k must be at least 2, got {k}")));
    }
    if labels.len() < k {
        return Err(Error::invalid(format!("{k} folds requested for {} accounts", labels.len())));
    }
    let mut rng = rng::stream(seed, "folds");
    let mut bots: Vec<&AccountId> = labels.iter().filter(|(_, r)| r.is_bot()).map(|(a, _)| a).collect();
    let mut humans: Vec<&AccountId> = labels.iter().filter(|(_, r)| !r.is_bot()).map(|(a, _)| a).collect();
    bots.shuffle(&mut rng);
    humans.shuffle(&mut rng);
    let assignment = bots
        .into_iter()
        .chain(humans)
        .enumerate()
        .map(|(i, a)| (a.clone(), i % k))
        .collect();
    Ok(FoldAssignment { k, assignment })
}

pub fn split_folds(ds: &Dataset, k: usize, seed: u64) -> Result<FoldAssignment> {
    split_labels(&ds.labels(), k, seed)
}

// ---------------------------------------------------------------------------
// Result tables and run artifacts
// ---------------------------------------------------------------------------

/// Formats floats with the shortest representation that round-trips.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// A named result table with string cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(name: impl Into<String>, header: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.into(),
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<S: Into<String>>(&mut self, row: impl IntoIterator<Item = S>) {
        let row: Vec<String> = row.into_iter().map(Into::into).collect();
        assert_eq!(row.len(), self.header.len(), "row width differs from header in `{}`", self.name);
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(|e| Error::Serde(e.to_string()))?;
        for r in &self.rows {
            w.write_record(r).map_err(|e| Error::Serde(e.to_string()))?;
        }
        w.into_inner().map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn read_csv(path: &Path) -> Result<Table> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let header = rdr.headers().map_err(|e| csv_error(path, e))?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            rows.push(rec.map_err(|e| csv_error(path, e))?.iter().map(String::from).collect());
        }
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(Table { name, header, rows })
    }
}

/// What a run produced: tables plus the effective configuration that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResults {
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub tables: Vec<Table>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub table: String,
    pub file: String,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifact_version: String,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub outputs: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Manifest> {
        let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&raw).map_err(|e| Error::Serde(e.to_string()))
    }
}

/// Writes each table as `<name>.csv` plus `manifest.json`.
///
/// Files are staged as temporaries in `out_dir` and only renamed into place once every
/// one of them has been written, so a failure leaves no partial outputs.
pub fn write_run_artifact(results: &RunResults, out_dir: &Path) -> Result<Manifest> {
    let mut files = Vec::new();
    let mut outputs = Vec::new();
    for t in &results.tables {
        let file = format!("{}.csv", t.name);
        files.push((file.clone(), t.to_csv_bytes()?));
        outputs.push(ManifestEntry {
            table: t.name.clone(),
            file,
            rows: t.rows.len(),
        });
    }
    let manifest = Manifest {
        artifact_version: crate::ARTIFACT_VERSION.to_string(),
        command: results.command.clone(),
        seed: results.seed,
        config: results.config.clone(),
        outputs,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Serde(e.to_string()))?;
    files.push(("manifest.json".to_string(), json));
    let refs: Vec<(&str, Vec<u8>)> = files.iter().map(|(n, b)| (n.as_str(), b.clone())).collect();
    write_files_atomic(out_dir, &refs)?;
    Ok(manifest)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("`{}` has no file name", path.display())))?;
    write_files_atomic(dir, &[(name.to_string_lossy().as_ref(), bytes.to_vec())])?;
    Ok(())
}

fn write_files_atomic<S: AsRef<str>>(dir: &Path, files: &[(S, Vec<u8>)]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut staged = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
        tmp.flush().map_err(|e| Error::io(tmp.path(), e))?;
        staged.push((tmp, dir.join(name.as_ref())));
    }
    let mut written = Vec::with_capacity(staged.len());
    for (tmp, dest) in staged {
        if let Err(e) = tmp.persist(&dest) {
            for w in &written {
                let _ = fs::remove_file(w);
            }
            return Err(Error::io(&dest, e.error));
        }
        written.push(dest);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn account(id: &str, role: Role) -> Account {
        Account {
            id: id.into(),
            role,
            campaign: role.is_bot().then_some(1),
            created_day: 0,
            status: Status::Active,
            sentiment: BTreeMap::new(),
            metadata: BTreeMap::new(),
        }
    }

    fn labels(n: usize, bots: usize) -> Labels {
        (0..n)
            .map(|i| (format!("a{i:03}"), if i < bots { Role::Bot } else { Role::Human }))
            .collect()
    }

    #[test]
    fn folds_of_305_are_61_each() {
        let f = split_labels(&labels(305, 80), 5, 3).unwrap();
        assert_eq!(f.sizes(), vec![61; 5]);
        for i in 0..5 {
            let bots = f.fold(i).iter().filter(|a| a.as_str() < "a080").count();
            assert!(bots == 16, "fold {i} has {bots} bots");
        }
    }

    #[test]
    fn small_stratified_split() {
        for seed in 0..20 {
            let f = split_labels(&labels(10, 5), 2, seed).unwrap();
            for i in 0..2 {
                let bots = f.fold(i).iter().filter(|a| a.as_str() < "a005").count();
                assert!((2..=3).contains(&bots));
            }
            assert_eq!(f, split_labels(&labels(10, 5), 2, seed).unwrap());
        }
    }

    #[test]
    fn too_many_folds() {
        assert!(split_labels(&labels(3, 1), 4, 0).is_err());
        assert!(split_labels(&labels(3, 1), 1, 0).is_err());
    }

    #[test]
    fn validate_catches_bad_reports() {
        let mut ds = Dataset {
            accounts: vec![account("h1", Role::Human), account("b1", Role::Bot)],
            events: vec![],
            reports: vec![Report {
                day: 1,
                reporter: "h1".into(),
                subject: "b1".into(),
            }],
            external_predictions: BTreeMap::new(),
            n_days: 1,
            steps_per_day: 48,
        };
        ds.validate().unwrap();
        ds.reports.push(ds.reports[0].clone());
        assert!(ds.validate().is_err());
        ds.reports.pop();
        ds.reports.push(Report {
            day: 1,
            reporter: "b1".into(),
            subject: "h1".into(),
        });
        assert!(ds.validate().is_err());
        ds.reports.pop();
        ds.reports.push(Report {
            day: 1,
            reporter: "h1".into(),
            subject: "x99".into(),
        });
        match ds.validate() {
            Err(Error::UnknownAccount(id)) => assert_eq!(id, "x99"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validate_checks_event_shape() {
        let mut ds = Dataset {
            accounts: vec![account("h1", Role::Human), account("b1", Role::Bot)],
            events: vec![InteractionEvent {
                timestamp: 50,
                day: 2,
                actor: "b1".into(),
                action: Action::Post,
                target: None,
                polarity: Some(0.5),
                topic: Some(0),
            }],
            reports: vec![],
            external_predictions: BTreeMap::new(),
            n_days: 2,
            steps_per_day: 48,
        };
        ds.validate().unwrap();
        ds.events[0].day = 1;
        assert!(ds.validate().is_err());
        ds.events[0].day = 2;
        ds.events[0].polarity = None;
        assert!(ds.validate().is_err());
        ds.events[0].polarity = Some(0.5);
        ds.events[0].action = Action::Follow;
        assert!(ds.validate().is_err());
    }

    #[test]
    fn bot_without_campaign_rejected() {
        let mut b = account("b1", Role::Bot);
        b.campaign = None;
        let ds = Dataset {
            accounts: vec![b],
            events: vec![],
            reports: vec![],
            external_predictions: BTreeMap::new(),
            n_days: 1,
            steps_per_day: 48,
        };
        assert!(ds.validate().is_err());
    }
}
