use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context as _, Result};
use serde::{Deserialize, Serialize};

use hybridwatch::aggregation::{
    self, count_based, hard_vote, human_voters, hybrid_late_fusion, late_fusion, meta_vote, model_first,
    optimize_fusion_weights, optimize_soft_threshold, quality_weighted, soft_vote, CvConfig, FusionConfig,
    HumanEnsembleConfig, MetaVoters, Strategy, ThresholdGrid, DEFAULT_FUSION_SAMPLES, DEFAULT_TAU,
};
use hybridwatch::data::{
    fmt_f64, load_dataset_dir, read_predictions, split_labels, write_dataset, write_run_artifact, Dataset, Flags,
    Labels, PredictionSet, RunResults, Table, Universe,
};
use hybridwatch::detectors::{extract_all, DetectorSpec, MixtureParams, TrainingSet, TreeParams};
use hybridwatch::metrics::{
    self, activity_ratios, agreement_rate, cohen_kappa, conditional_bot_probability, confusion,
    reporter_f1_table, temporal_evaluation, ClassMetrics, ConfusionCounts, GroupF1, ReportCounting, TemporalMode,
};
use hybridwatch::retraining::{run_many, RetrainPlan, SelectionStrategy, DEFAULT_SELF_CONFIDENCE};
use hybridwatch::rng::derive_seed;
use hybridwatch::simulator::{benchmark_corpus, run_experiment, SimConfig};
use hybridwatch::stats::{bh_fdr, chi_square_independence, mcnemar, ols_regression, permutation_test};

pub struct Context {
    pub verbose: bool,
}

impl Context {
    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn config_json<T: Serialize>(cfg: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(cfg)?)
}

fn finish(ctx: &Context, results: &RunResults, out: &Path) -> Result<()> {
    let manifest = write_run_artifact(results, out)?;
    for e in &manifest.outputs {
        ctx.log(format!("wrote {} ({} rows)", out.join(&e.file).display(), e.rows));
    }
    println!("{}: results in {}", results.command, out.display());
    Ok(())
}

fn load(data: &Option<PathBuf>) -> Result<Dataset> {
    let Some(dir) = data else {
        bail!("no dataset given; pass --data DIR (a directory written by `hybridwatch simulate`)");
    };
    load_dataset_dir(dir, &[]).with_context(|| format!("cannot load dataset from {}", dir.display()))
}

/// Reporter weights from each reporter's F1 over every report, standing in for the
/// platform's periodic reliability audits.
fn audit_config(ds: &Dataset, tau: f64) -> Result<HumanEnsembleConfig> {
    let weights = reporter_f1_table(&ds.reports, &ds.labels(), &ds.universe())?;
    Ok(HumanEnsembleConfig::new(tau, weights)?)
}

const METRIC_HEADER: [&str; 8] = ["precision", "recall", "f1", "accuracy", "tp", "fp", "fn", "tn"];

fn metric_cells(c: ConfusionCounts) -> Vec<String> {
    let m = metrics::bot_class_metrics(c);
    vec![
        fmt_f64(m.precision),
        fmt_f64(m.recall),
        fmt_f64(m.f1),
        fmt_f64(m.accuracy),
        c.tp.to_string(),
        c.fp.to_string(),
        c.fn_.to_string(),
        c.tn.to_string(),
    ]
}

fn header(first: &[&str]) -> Vec<String> {
    first.iter().chain(METRIC_HEADER.iter()).map(|s| s.to_string()).collect()
}

fn row(first: Vec<String>, c: ConfusionCounts) -> Vec<String> {
    first.into_iter().chain(metric_cells(c)).collect()
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

pub fn simulate(ctx: &Context, cfg: &SimConfig, out: &Path) -> Result<()> {
    ctx.log(format!("simulating {} accounts over {} days", cfg.n_accounts(), cfg.n_days));
    let sim = run_experiment(cfg)?;
    let ds = &sim.dataset;
    let labels = ds.labels();
    let universe = ds.universe();
    write_dataset(ds, out)?;

    let pool_ids: BTreeSet<String> = sim.pool.iter().map(|r| sim.world.accounts[r.account].id.clone()).collect();
    let (mean_f1, sd_f1) = metrics::group_f1(&ds.reports, &labels, &universe, &pool_ids, GroupF1::PerReporterMean)?;
    let f1s = reporter_f1_table(&ds.reports, &labels, &universe)?;

    let mut summary = Table::new("summary", ["metric", "value"]);
    let suspended = |bot: bool| {
        ds.accounts
            .iter()
            .filter(|a| a.role.is_bot() == bot && a.status == hybridwatch::data::Status::Suspended)
            .count()
    };
    for (k, v) in [
        ("accounts", ds.accounts.len().to_string()),
        ("bots", ds.n_bots().to_string()),
        ("events", ds.events.len().to_string()),
        ("reports", ds.reports.len().to_string()),
        ("reporters", sim.pool.len().to_string()),
        ("suspended_bots", suspended(true).to_string()),
        ("suspended_humans", suspended(false).to_string()),
        ("mean_initial_out_degree", fmt_f64(sim.world.mean_initial_out_degree())),
        ("mean_reporter_f1", fmt_f64(mean_f1)),
        ("sd_reporter_f1", fmt_f64(sd_f1)),
    ] {
        summary.push([k.to_string(), v]);
    }

    let mut pool = Table::new("reporters", ["reporter", "report_rate", "tpr", "fpr", "participation", "f1"]);
    for r in &sim.pool {
        let id = &sim.world.accounts[r.account].id;
        pool.push([
            id.clone(),
            fmt_f64(r.spec.report_rate),
            fmt_f64(r.spec.tpr),
            fmt_f64(r.spec.fpr),
            fmt_f64(r.spec.participation),
            fmt_f64(f1s.get(id).copied().unwrap_or(0.0)),
        ]);
    }

    let mut rewards = Table::new(
        "rewards",
        ["step", "campaign", "new_human_followers", "infections", "terminations", "suspensions", "reward"],
    );
    for r in &sim.world.step_rewards {
        let b = r.breakdown;
        rewards.push([
            r.step.to_string(),
            (r.campaign + 1).to_string(),
            b.new_human_followers.to_string(),
            b.infections.to_string(),
            b.terminations.to_string(),
            b.suspensions.to_string(),
            fmt_f64(r.reward),
        ]);
    }

    let mut scans = Table::new("scans", ["step", "suspended"]);
    for s in &sim.world.scans {
        let ids: Vec<&str> = s.suspended.iter().map(|&i| sim.world.accounts[i].id.as_str()).collect();
        scans.push([s.step.to_string(), ids.join(";")]);
    }

    let results = RunResults {
        command: "simulate".into(),
        seed: cfg.seed,
        config: config_json(cfg)?,
        tables: vec![summary, pool, rewards, scans],
    };
    finish(ctx, &results, out)
}

// ---------------------------------------------------------------------------
// detect
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectConfig {
    pub data: Option<PathBuf>,
    pub detectors: Vec<String>,
    /// Folds for the out-of-fold predictions.
    pub k: usize,
    /// Last day of events the features see (default: every day).
    pub up_to_day: Option<u32>,
    pub trees: TreeParams,
    pub moe: MixtureParams,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            data: None,
            detectors: vec!["trees".into(), "moe".into()],
            k: 5,
            up_to_day: None,
            trees: TreeParams::default(),
            moe: MixtureParams::default(),
            threshold: 0.5,
            seed: 0,
        }
    }
}

fn detector_spec(name: &str, trees: TreeParams, moe: MixtureParams) -> Result<DetectorSpec> {
    Ok(match name {
        "trees" => DetectorSpec::BaggedTrees(trees),
        "moe" => DetectorSpec::MixtureOfExperts(moe),
        other => bail!("unknown detector `{other}` (trees, moe)"),
    })
}

pub fn detect(ctx: &Context, cfg: &DetectConfig, out: &Path) -> Result<()> {
    let ds = load(&cfg.data)?;
    let labels = ds.labels();
    let universe = ds.universe();
    let features = extract_all(&ds, cfg.up_to_day.unwrap_or(ds.n_days));
    let folds = split_labels(&labels, cfg.k, derive_seed(cfg.seed, "detect-folds"))?;

    let mut predictions = Table::new("predictions", ["source", "account", "probability"]);
    let mut scores = Table::new("detect_metrics", header(&["source"]));
    for name in &cfg.detectors {
        let spec = detector_spec(name, cfg.trees, cfg.moe)?;
        let mut set = PredictionSet::new(name.as_str());
        for i in 0..cfg.k {
            ctx.log(format!("{name}: fold {}/{}", i + 1, cfg.k));
            let train = folds.complement(i);
            let data = TrainingSet::from_features(train.iter().map(|a| &features[a]), &labels)?;
            let model = spec.with_seed(derive_seed(cfg.seed, &format!("{name}-fold-{i}"))).train(&data)?;
            let held = folds.fold(i);
            set.scores.extend(model.predict_all(name, held.iter().map(|a| &features[a]))?.scores);
        }
        for (a, p) in &set.scores {
            predictions.push([name.clone(), a.clone(), fmt_f64(*p)]);
        }
        scores.push(row(vec![name.clone()], confusion(&set.flags(cfg.threshold), &labels, &universe)?));

        let all = TrainingSet::from_features(features.values(), &labels)?;
        let model = spec.with_seed(derive_seed(cfg.seed, &format!("{name}-full"))).train(&all)?;
        model.save(&out.join(format!("{name}.model.json")))?;
    }
    let results = RunResults {
        command: "detect".into(),
        seed: cfg.seed,
        config: config_json(cfg)?,
        tables: vec![predictions, scores],
    };
    finish(ctx, &results, out)
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EvaluateMode {
    /// Thresholded prediction sets from `--predictions`.
    Flags,
    /// Count-based and quality-weighted human ensembles, P(bot|k) and their agreement.
    Reports,
    /// Per-day metrics of the "reported at least once" classifier.
    Temporal,
    /// Per-reporter F1 and its group summaries.
    Reporters,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateConfig {
    pub data: Option<PathBuf>,
    pub mode: EvaluateMode,
    pub predictions: Option<PathBuf>,
    pub source: Option<String>,
    pub threshold: f64,
    pub tau: f64,
    /// Largest count-based k reported.
    pub k_max: usize,
    pub temporal: TemporalMode,
    pub raw_counts: bool,
    pub seed: u64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            data: None,
            mode: EvaluateMode::Reports,
            predictions: None,
            source: None,
            threshold: 0.5,
            tau: DEFAULT_TAU,
            k_max: 5,
            temporal: TemporalMode::Cumulative,
            raw_counts: false,
            seed: 0,
        }
    }
}

fn metrics_cells(m: &ClassMetrics) -> [String; 4] {
    [fmt_f64(m.precision), fmt_f64(m.recall), fmt_f64(m.f1), fmt_f64(m.accuracy)]
}

pub fn evaluate(ctx: &Context, cfg: &EvaluateConfig, out: &Path) -> Result<()> {
    let ds = load(&cfg.data)?;
    let labels = ds.labels();
    let universe = ds.universe();
    let mut tables = Vec::new();
    match cfg.mode {
        EvaluateMode::Flags => {
            let Some(path) = &cfg.predictions else {
                bail!("--mode flags needs --predictions FILE");
            };
            let sets = read_predictions(path)?;
            let mut t = Table::new("flag_metrics", header(&["source"]));
            for (name, set) in &sets {
                if cfg.source.as_ref().is_some_and(|s| s != name) {
                    continue;
                }
                t.push(row(vec![name.clone()], confusion(&set.flags(cfg.threshold), &labels, &universe)?));
            }
            if t.rows.is_empty() {
                bail!("no prediction source matched in {}", path.display());
            }
            tables.push(t);
        }
        EvaluateMode::Reports => {
            let hcfg = audit_config(&ds, cfg.tau)?;
            let qw = quality_weighted(&ds.reports, &hcfg)?.flags;
            let mut t = Table::new("report_metrics", header(&["strategy", "n_flagged"]));
            for k in 1..=cfg.k_max {
                let f = count_based(&ds.reports, k)?;
                t.push(row(vec![format!("count:{k}"), f.len().to_string()], confusion(&f, &labels, &universe)?));
            }
            t.push(row(
                vec!["quality_weighted".into(), qw.len().to_string()],
                confusion(&qw, &labels, &universe)?,
            ));
            tables.push(t);

            let counting = if cfg.raw_counts {
                ReportCounting::RawReports
            } else {
                ReportCounting::DistinctReporters
            };
            let mut p = Table::new("p_bot", ["k", "n_accounts", "n_bots", "p_bot"]);
            for (k, b) in conditional_bot_probability(&ds.reports, &labels, &universe, counting)? {
                p.push([k.to_string(), b.n_accounts.to_string(), b.n_bots.to_string(), fmt_f64(b.p_bot)]);
            }
            tables.push(p);

            let c1 = count_based(&ds.reports, 1)?;
            let mut a = Table::new("agreement", ["a", "b", "agreement", "kappa"]);
            a.push([
                "count:1".to_string(),
                "quality_weighted".to_string(),
                fmt_f64(agreement_rate(&c1, &qw, &universe)?),
                fmt_f64(cohen_kappa(&c1, &qw, &universe)?),
            ]);
            tables.push(a);
        }
        EvaluateMode::Temporal => {
            let mode = match cfg.temporal {
                TemporalMode::DaySpecific => "day_specific",
                TemporalMode::Cumulative => "cumulative",
            };
            let mut t = Table::new("temporal", ["mode", "day", "n_flagged", "precision", "recall", "f1", "accuracy"]);
            for d in temporal_evaluation(&ds.reports, &labels, &universe, cfg.temporal, ds.n_days)? {
                let mut r = vec![mode.to_string(), d.day.to_string(), d.n_flagged.to_string()];
                r.extend(metrics_cells(&d.metrics));
                t.push(r);
            }
            tables.push(t);
        }
        EvaluateMode::Reporters => {
            let f1 = reporter_f1_table(&ds.reports, &labels, &universe)?;
            let mut n: BTreeMap<&str, usize> = BTreeMap::new();
            for r in &ds.reports {
                *n.entry(&r.reporter).or_default() += 1;
            }
            let mut t = Table::new("reporters", ["reporter", "n_reports", "f1"]);
            for (r, v) in &f1 {
                t.push([r.clone(), n[r.as_str()].to_string(), fmt_f64(*v)]);
            }
            tables.push(t);
            let group: BTreeSet<String> = f1.keys().cloned().collect();
            let mut s = Table::new("reporter_summary", ["summary", "value", "sd"]);
            for (name, mode) in [("per_reporter_mean", GroupF1::PerReporterMean), ("pooled", GroupF1::Pooled)] {
                let (v, sd) = metrics::group_f1(&ds.reports, &labels, &universe, &group, mode)?;
                s.push([name.to_string(), fmt_f64(v), fmt_f64(sd)]);
            }
            tables.push(s);
        }
    }
    let results = RunResults {
        command: "evaluate".into(),
        seed: cfg.seed,
        config: config_json(cfg)?,
        tables,
    };
    finish(ctx, &results, out)
}

// ---------------------------------------------------------------------------
// aggregate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregateConfig {
    pub data: Option<PathBuf>,
    /// Prediction files whose sources act as the AI detectors.
    pub predictions: Vec<PathBuf>,
    pub strategies: Vec<String>,
    pub tau: f64,
    pub soft_threshold: f64,
    /// Late-fusion weights over the AI sources; uniform when empty.
    pub fusion_weights: Vec<f64>,
    pub fusion_threshold: f64,
    /// Choose the soft threshold and both fusion configs on the labels.
    pub optimize: bool,
    pub threshold_grid: ThresholdGrid,
    pub fusion_samples: usize,
    pub seed: u64,
}

impl Default for AggregateConfig {
    fn default() -> Self {
        Self {
            data: None,
            predictions: Vec::new(),
            strategies: [
                "human",
                "count:1",
                "hard_vote",
                "soft_vote",
                "late_fusion",
                "human_first",
                "model_first",
                "meta_vote",
                "hybrid_late_fusion",
            ]
            .map(String::from)
            .to_vec(),
            tau: DEFAULT_TAU,
            soft_threshold: 0.5,
            fusion_weights: Vec::new(),
            fusion_threshold: 0.5,
            optimize: false,
            threshold_grid: ThresholdGrid::default(),
            fusion_samples: DEFAULT_FUSION_SAMPLES,
            seed: 0,
        }
    }
}

fn restrict(set: PredictionSet, universe: &Universe) -> PredictionSet {
    PredictionSet {
        source: set.source,
        scores: set.scores.into_iter().filter(|(a, _)| universe.contains(a)).collect(),
    }
}

pub fn aggregate(ctx: &Context, cfg: &AggregateConfig, out: &Path) -> Result<()> {
    let ds = load(&cfg.data)?;
    let labels = ds.labels();
    let universe = ds.universe();
    let mut ai: Vec<PredictionSet> = Vec::new();
    for p in &cfg.predictions {
        for (_, set) in read_predictions(p)? {
            ai.push(restrict(set, &universe));
        }
    }
    let strategies: Vec<Strategy> = cfg.strategies.iter().map(|s| Strategy::from_str(s)).collect::<Result<_, _>>()?;
    let hcfg = audit_config(&ds, cfg.tau)?;

    let mut soft_t = cfg.soft_threshold;
    let mut late = if cfg.fusion_weights.is_empty() {
        FusionConfig::uniform(ai.len(), cfg.fusion_threshold)
    } else {
        FusionConfig::new(cfg.fusion_weights.clone(), cfg.fusion_threshold)?
    };
    let human = aggregation::human_channel(&ds.reports, &hcfg, &universe)?;
    let mut with_human = ai.clone();
    with_human.push(human);
    let mut hybrid = FusionConfig::uniform(with_human.len(), cfg.fusion_threshold);
    if cfg.optimize && !ai.is_empty() {
        ctx.log("optimizing thresholds and fusion weights on the labels");
        soft_t = optimize_soft_threshold(&ai, &labels, &cfg.threshold_grid)?;
        if ai.len() >= 2 {
            late = optimize_fusion_weights(&ai, &labels, cfg.fusion_samples, derive_seed(cfg.seed, "late"), &cfg.threshold_grid)?;
        }
        hybrid = optimize_fusion_weights(
            &with_human,
            &labels,
            cfg.fusion_samples,
            derive_seed(cfg.seed, "hybrid"),
            &cfg.threshold_grid,
        )?;
    }

    let mut flags_table = Table::new("aggregate_flags", ["strategy", "account"]);
    let mut metrics_table = Table::new("aggregate_metrics", header(&["strategy", "n_flagged"]));
    for s in &strategies {
        let model_only = matches!(s, Strategy::HardVote | Strategy::SoftVote | Strategy::LateFusion);
        if model_only && ai.is_empty() {
            bail!("strategy `{s}` needs detector predictions (--predictions FILE)");
        }
        let flags: Flags = match s {
            Strategy::Detector(name) => ai
                .iter()
                .find(|p| &p.source == name)
                .with_context(|| format!("no predictions from source `{name}`"))?
                .flags(0.5),
            Strategy::HumanEnsemble => quality_weighted(&ds.reports, &hcfg)?.flags,
            Strategy::CountBased(k) => count_based(&ds.reports, *k)?,
            Strategy::HardVote => hard_vote(&ai, &universe),
            Strategy::SoftVote => soft_vote(&ai, soft_t, &universe)?,
            Strategy::LateFusion => late_fusion(&ai, &late, &universe)?,
            Strategy::HumanFirst => aggregation::human_first(&ai, &ds.reports, soft_t, &universe)?,
            Strategy::ModelFirst => model_first(&ai, &ds.reports, &hcfg, soft_t, &universe)?,
            Strategy::MetaVote => {
                let mut voters = ai.clone();
                voters.extend(human_voters(&ds.reports, &hcfg, MetaVoters::HumanEnsemble, &universe)?);
                meta_vote(&voters, soft_t, &universe)?
            }
            Strategy::HybridLateFusion => hybrid_late_fusion(&ai, &ds.reports, &hcfg, &hybrid, &universe)?,
        };
        for a in &flags {
            flags_table.push([s.to_string(), a.clone()]);
        }
        metrics_table.push(row(vec![s.to_string(), flags.len().to_string()], confusion(&flags, &labels, &universe)?));
    }
    let mut choices = Table::new("aggregate_choices", ["parameter", "value"]);
    let join = |w: &[f64]| w.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(";");
    for (k, v) in [
        ("tau", fmt_f64(cfg.tau)),
        ("soft_threshold", fmt_f64(soft_t)),
        ("late_fusion_weights", join(&late.weights)),
        ("late_fusion_threshold", fmt_f64(late.threshold)),
        ("hybrid_fusion_weights", join(&hybrid.weights)),
        ("hybrid_fusion_threshold", fmt_f64(hybrid.threshold)),
    ] {
        choices.push([k.to_string(), v]);
    }
    let results = RunResults {
        command: "aggregate".into(),
        seed: cfg.seed,
        config: config_json(cfg)?,
        tables: vec![metrics_table, flags_table, choices],
    };
    finish(ctx, &results, out)
}

// ---------------------------------------------------------------------------
// cv
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CvCommandConfig {
    pub data: Option<PathBuf>,
    pub strategies: Vec<String>,
    #[serde(flatten)]
    pub cv: CvConfig,
}

impl Default for CvCommandConfig {
    fn default() -> Self {
        Self {
            data: None,
            strategies: Strategy::table_defaults().iter().map(|s| s.to_string()).collect(),
            cv: CvConfig::default(),
        }
    }
}

pub fn cv(ctx: &Context, cfg: &CvCommandConfig, out: &Path) -> Result<()> {
    let ds = load(&cfg.data)?;
    let strategies: Vec<Strategy> = cfg.strategies.iter().map(|s| Strategy::from_str(s)).collect::<Result<_, _>>()?;
    ctx.log(format!("{}-fold comparison of {} strategies", cfg.cv.k, strategies.len()));
    let report = aggregation::cross_validated_compare(&ds, &strategies, &cfg.cv)?;
    let mut t = Table::new("cv", header(&["strategy"]));
    for r in &report.rows {
        t.push(row(vec![r.strategy.clone()], r.confusion));
    }
    let join = |w: &[f64]| w.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(";");
    let mut folds = Table::new(
        "cv_folds",
        [
            "fold",
            "tau",
            "soft_threshold",
            "late_fusion_weights",
            "late_fusion_threshold",
            "hybrid_fusion_weights",
            "hybrid_fusion_threshold",
        ],
    );
    for f in &report.folds {
        folds.push([
            f.fold.to_string(),
            fmt_f64(f.tau),
            fmt_f64(f.soft_threshold),
            join(&f.late_fusion.weights),
            fmt_f64(f.late_fusion.threshold),
            join(&f.hybrid_fusion.weights),
            fmt_f64(f.hybrid_fusion.threshold),
        ]);
    }
    let results = RunResults {
        command: "cv".into(),
        seed: cfg.cv.seed,
        config: config_json(cfg)?,
        tables: vec![t, folds],
    };
    finish(ctx, &results, out)
}

// ---------------------------------------------------------------------------
// retrain
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrainConfig {
    pub data: Option<PathBuf>,
    pub detector: String,
    pub strategies: Vec<String>,
    pub confidence: f64,
    pub tau: f64,
    /// Days evaluated (default: every day of the dataset).
    pub days: Option<u32>,
    pub trees: TreeParams,
    pub moe: MixtureParams,
    /// Simulation settings whose benchmark profile generates the base corpus.
    pub corpus: SimConfig,
    pub seed: u64,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        Self {
            data: None,
            detector: "trees".into(),
            strategies: ["ground_truth", "self", "human"].map(String::from).to_vec(),
            confidence: DEFAULT_SELF_CONFIDENCE,
            tau: DEFAULT_TAU,
            days: None,
            trees: TreeParams::default(),
            moe: MixtureParams::default(),
            corpus: SimConfig::default(),
            seed: 0,
        }
    }
}

pub const RETRAIN_HEADER: [&str; 6] = ["detector", "strategy", "day", "f1_baseline", "f1_retrained", "rel_improvement_pct"];

pub fn retrain(ctx: &Context, cfg: &RetrainConfig, out: &Path) -> Result<()> {
    let ds = load(&cfg.data)?;
    let spec = detector_spec(&cfg.detector, cfg.trees, cfg.moe)?;
    ctx.log("generating the base corpus");
    let corpus = benchmark_corpus(&cfg.corpus, derive_seed(cfg.seed, "retrain-corpus"))?;
    let mut plans = Vec::new();
    for s in &cfg.strategies {
        let strategy = match s.as_str() {
            "ground_truth" | "gt" => SelectionStrategy::GroundTruth,
            "self" => SelectionStrategy::SelfSupervised {
                confidence: cfg.confidence,
            },
            "human" => SelectionStrategy::HumanSupervised {
                config: audit_config(&ds, cfg.tau)?,
            },
            other => bail!("unknown selection strategy `{other}` (ground_truth, self, human)"),
        };
        plans.push(RetrainPlan {
            detector: spec,
            base_corpus: corpus.clone(),
            strategy,
            days: cfg.days.unwrap_or(ds.n_days),
            seed: derive_seed(cfg.seed, "retrain-model"),
        });
    }
    for p in &plans {
        p.validate(&ds)?;
    }
    let reports = run_many(&plans, &ds)?;
    let mut t = Table::new("retrain_report", RETRAIN_HEADER);
    let mut detail = Table::new(
        "retrain_detail",
        [
            "strategy",
            "day",
            "slice_size",
            "selected",
            "precision_baseline",
            "recall_baseline",
            "precision_retrained",
            "recall_retrained",
        ],
    );
    for r in &reports {
        for d in &r.days {
            t.push([
                r.detector.clone(),
                r.strategy.clone(),
                d.day.to_string(),
                fmt_f64(d.baseline.f1),
                fmt_f64(d.retrained.f1),
                d.rel_improvement.map(fmt_f64).unwrap_or_default(),
            ]);
            detail.push([
                r.strategy.clone(),
                d.day.to_string(),
                d.slice_size.to_string(),
                d.selected.to_string(),
                fmt_f64(d.baseline.precision),
                fmt_f64(d.baseline.recall),
                fmt_f64(d.retrained.precision),
                fmt_f64(d.retrained.recall),
            ]);
        }
    }
    let results = RunResults {
        command: "retrain".into(),
        seed: cfg.seed,
        config: config_json(cfg)?,
        tables: vec![t, detail],
    };
    finish(ctx, &results, out)
}

// ---------------------------------------------------------------------------
// hypothesis
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    All,
    /// Reporter F1 above vs below the median of each bot activity ratio.
    Permutation,
    /// Reporter F1 regressed on each activity ratio, and daily F1 on the day.
    Ols,
    /// Quality-weighted flags against the labels.
    ChiSquare,
    /// Count-based (k = 1) against quality-weighted on their disagreements.
    Mcnemar,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HypothesisConfig {
    pub data: Option<PathBuf>,
    pub test: TestKind,
    pub fdr: bool,
    pub resamples: u64,
    pub tau: f64,
    pub mcnemar_corrected: bool,
    pub seed: u64,
}

impl Default for HypothesisConfig {
    fn default() -> Self {
        Self {
            data: None,
            test: TestKind::All,
            fdr: false,
            resamples: 10_000,
            tau: DEFAULT_TAU,
            mcnemar_corrected: true,
            seed: 0,
        }
    }
}

struct Finding {
    test: &'static str,
    hypothesis: String,
    n: usize,
    statistic: f64,
    p: f64,
}

const RATIOS: [&str; 4] = ["ber_like", "ber_follow", "bxr_like", "bxr_follow"];

/// `(reporter F1, ratio)` pairs of every reporter whose ratio is defined.
fn ratio_pairs(ds: &Dataset, labels: &Labels) -> Result<Vec<Vec<(f64, f64)>>> {
    let f1 = reporter_f1_table(&ds.reports, labels, &ds.universe())?;
    let mut out = vec![Vec::new(); RATIOS.len()];
    for (r, v) in &f1 {
        if labels.get(r).is_none_or(|x| x.is_bot()) {
            continue;
        }
        let a = activity_ratios(&ds.events, labels, r)?;
        for (i, x) in [a.ber_like, a.ber_follow, a.bxr_like, a.bxr_follow].into_iter().enumerate() {
            if let Some(x) = x {
                out[i].push((*v, x));
            }
        }
    }
    Ok(out)
}

fn hypotheses(cfg: &HypothesisConfig, ds: &Dataset) -> Result<Vec<Finding>> {
    let labels = ds.labels();
    let universe = ds.universe();
    let want = |k: TestKind| cfg.test == TestKind::All || cfg.test == k;
    let mut out = Vec::new();
    let pairs = ratio_pairs(ds, &labels)?;

    if want(TestKind::Permutation) {
        for (name, xs) in RATIOS.iter().zip(&pairs) {
            let mut sorted: Vec<f64> = xs.iter().map(|p| p.1).collect();
            sorted.sort_by(f64::total_cmp);
            let Some(&median) = sorted.get(sorted.len() / 2) else { continue };
            let (hi, lo): (Vec<(f64, f64)>, Vec<(f64, f64)>) = xs.iter().partition(|p| p.1 > median);
            if hi.is_empty() || lo.is_empty() {
                continue;
            }
            let hi: Vec<f64> = hi.into_iter().map(|p| p.0).collect();
            let lo: Vec<f64> = lo.into_iter().map(|p| p.0).collect();
            let r = permutation_test(&hi, &lo, cfg.resamples, derive_seed(cfg.seed, name), true)?;
            out.push(Finding {
                test: "permutation",
                hypothesis: format!("reporter_f1_high_vs_low_{name}"),
                n: hi.len() + lo.len(),
                statistic: r.statistic,
                p: r.p_value,
            });
        }
    }
    if want(TestKind::Ols) {
        for (name, xs) in RATIOS.iter().zip(&pairs) {
            let x: Vec<f64> = xs.iter().map(|p| p.1).collect();
            let y: Vec<f64> = xs.iter().map(|p| p.0).collect();
            if let Ok(fit) = ols_regression(&x, &y) {
                out.push(Finding {
                    test: "ols",
                    hypothesis: format!("reporter_f1_on_{name}"),
                    n: fit.n,
                    statistic: fit.beta,
                    p: fit.p_value,
                });
            }
        }
        for (name, mode) in [("day_specific", TemporalMode::DaySpecific), ("cumulative", TemporalMode::Cumulative)] {
            let days = temporal_evaluation(&ds.reports, &labels, &universe, mode, ds.n_days)?;
            let x: Vec<f64> = days.iter().map(|d| f64::from(d.day)).collect();
            let y: Vec<f64> = days.iter().map(|d| d.metrics.f1).collect();
            if let Ok(fit) = ols_regression(&x, &y) {
                out.push(Finding {
                    test: "ols",
                    hypothesis: format!("f1_on_day_{name}"),
                    n: fit.n,
                    statistic: fit.beta,
                    p: fit.p_value,
                });
            }
        }
    }
    let hcfg = audit_config(ds, cfg.tau)?;
    let qw = quality_weighted(&ds.reports, &hcfg)?.flags;
    if want(TestKind::ChiSquare) {
        let c = confusion(&qw, &labels, &universe)?;
        let table = [[c.tp as u64, c.fp as u64], [c.fn_ as u64, c.tn as u64]];
        if let Ok(r) = chi_square_independence(table) {
            out.push(Finding {
                test: "chi_square",
                hypothesis: "quality_weighted_flags_vs_label".into(),
                n: c.total(),
                statistic: r.statistic,
                p: r.p_value,
            });
        }
    }
    if want(TestKind::Mcnemar) {
        let c1 = count_based(&ds.reports, 1)?;
        let (mut b, mut c) = (0u64, 0u64);
        for a in &universe {
            let bot = labels[a].is_bot();
            let (x, y) = (c1.contains(a) == bot, qw.contains(a) == bot);
            b += u64::from(!x && y);
            c += u64::from(x && !y);
        }
        if let Ok(r) = mcnemar(b, c, cfg.mcnemar_corrected) {
            out.push(Finding {
                test: "mcnemar",
                hypothesis: "count_1_vs_quality_weighted".into(),
                n: (b + c) as usize,
                statistic: r.statistic,
                p: r.p_value,
            });
        }
    }
    Ok(out)
}

pub fn hypothesis(ctx: &Context, cfg: &HypothesisConfig, out: &Path) -> Result<()> {
    let ds = load(&cfg.data)?;
    let found = hypotheses(cfg, &ds)?;
    ctx.log(format!("{} tests", found.len()));
    let mut cols = vec!["test", "hypothesis", "n", "statistic", "p_raw"];
    if cfg.fdr {
        cols.push("p_fdr");
    }
    let adjusted = if cfg.fdr {
        bh_fdr(&found.iter().map(|f| f.p).collect::<Vec<_>>())?
    } else {
        Vec::new()
    };
    let mut t = Table::new("hypothesis", cols);
    for (i, f) in found.iter().enumerate() {
        let mut r = vec![
            f.test.to_string(),
            f.hypothesis.clone(),
            f.n.to_string(),
            fmt_f64(f.statistic),
            fmt_f64(f.p),
        ];
        if cfg.fdr {
            r.push(fmt_f64(adjusted[i]));
        }
        t.push(r);
    }
    let results = RunResults {
        command: "hypothesis".into(),
        seed: cfg.seed,
        config: config_json(cfg)?,
        tables: vec![t],
    };
    finish(ctx, &results, out)
}
