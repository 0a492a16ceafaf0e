//! Human-report aggregation, model-only and hybrid ensembles, the threshold and weight
//! searches they need, and the cross-validated comparison harness.
//!
//! Coverage rule: a source that has no score for an account abstains from hard votes
//! and contributes 0 to soft votes and fusion. AI detectors cover the whole universe;
//! human channels cover only what they saw.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{split_labels, AccountId, Dataset, Flags, Labels, PredictionSet, Report, Universe};
use crate::detectors::{self, DetectorSpec, FeatureVector, MixtureParams, TrainingSet, TreeParams};
use crate::error::{Error, Result};
use crate::metrics::{self, bot_class_metrics, reporter_sets, ClassMetrics, ConfusionCounts};
use crate::rng;

/// Mean reporter F1 used as the default flagging threshold on `s(a)`.
pub const DEFAULT_TAU: f64 = 0.533;
/// Default fusion weight samples.
pub const DEFAULT_FUSION_SAMPLES: usize = 1000;
/// Meta voting enumerates every voter subset, so the voter count is bounded.
pub const MAX_META_VOTERS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanEnsembleConfig {
    pub tau: f64,
    pub weights: BTreeMap<AccountId, f64>,
}

impl HumanEnsembleConfig {
    pub fn new(tau: f64, weights: BTreeMap<AccountId, f64>) -> Result<Self> {
        if !(tau >= 0.0) {
            return Err(Error::invalid(format!("tau must be non-negative, got {tau}")));
        }
        if let Some((r, w)) = weights.iter().find(|(_, w)| !(0.0..=1.0).contains(*w)) {
            return Err(Error::invalid(format!("weight {w} of reporter `{r}` outside [0, 1]")));
        }
        Ok(Self { tau, weights })
    }

    /// Weights from reporter F1 with `tau` set to their mean.
    pub fn mean_f1(weights: BTreeMap<AccountId, f64>) -> Result<Self> {
        let tau = if weights.is_empty() {
            0.0
        } else {
            weights.values().sum::<f64>() / weights.len() as f64
        };
        Self::new(tau, weights)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub weights: Vec<f64>,
    pub threshold: f64,
}

impl FusionConfig {
    pub fn new(weights: Vec<f64>, threshold: f64) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("fusion weights must be non-negative"));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("fusion weights sum to {s}, not 1")));
        }
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::invalid(format!("threshold {threshold} outside [0, 1]")));
        }
        Ok(Self { weights, threshold })
    }

    pub fn uniform(n: usize, threshold: f64) -> Self {
        Self {
            weights: vec![1.0 / n as f64; n],
            threshold,
        }
    }
}

/// Inclusive arithmetic threshold grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Default for ThresholdGrid {
    fn default() -> Self {
        Self {
            start: 0.50,
            stop: 0.95,
            step: 0.01,
        }
    }
}

impl ThresholdGrid {
    pub fn values(&self) -> Vec<f64> {
        if self.step <= 0.0 || self.stop < self.start {
            return vec![self.start];
        }
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| ((self.start + i as f64 * self.step) * 1e9).round() / 1e9)
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Human report aggregation
// ---------------------------------------------------------------------------

/// Accounts with at least `k` distinct reporters.
pub fn count_based(reports: &[Report], k: usize) -> Result<Flags> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    Ok(reporter_sets(reports)
        .into_iter()
        .filter(|(_, rs)| rs.len() >= k)
        .map(|(a, _)| a)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityWeighted {
    pub flags: Flags,
    /// `s(a)` for every reported account.
    pub scores: BTreeMap<AccountId, f64>,
}

/// `s >= tau` up to summation rounding, so `k` reporters of weight `w` reach `tau = k w`.
fn reaches(s: f64, tau: f64) -> bool {
    s >= tau - 1e-12 * tau.abs().max(s.abs())
}

/// `s(a)` = sum of reporter weights over distinct reporters; flagged when `s(a) >= tau`.
pub fn quality_weighted(reports: &[Report], config: &HumanEnsembleConfig) -> Result<QualityWeighted> {
    let mut scores = BTreeMap::new();
    let mut flags = Flags::new();
    for (a, rs) in reporter_sets(reports) {
        let mut s = 0.0;
        for r in &rs {
            s += config.weights.get(r).ok_or_else(|| Error::UnknownReporter(r.clone()))?;
        }
        if reaches(s, config.tau) {
            flags.insert(a.clone());
        }
        scores.insert(a, s);
    }
    Ok(QualityWeighted { flags, scores })
}

// ---------------------------------------------------------------------------
// Model-only ensembles
// ---------------------------------------------------------------------------

fn check_threshold(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::invalid(format!("threshold {t} outside [0, 1]")))
    }
}

/// Strict majority of non-abstaining sources, each voting bot at score >= 0.5.
pub fn hard_vote(sets: &[PredictionSet], universe: &Universe) -> Flags {
    universe
        .iter()
        .filter(|a| {
            let (mut bot, mut voting) = (0, 0);
            for s in sets {
                if let Some(p) = s.score(a) {
                    voting += 1;
                    bot += usize::from(p >= 0.5);
                }
            }
            2 * bot > voting
        })
        .cloned()
        .collect()
}

/// Unweighted mean score per account (missing scores count as 0).
pub fn soft_scores(sets: &[PredictionSet], universe: &Universe) -> BTreeMap<AccountId, f64> {
    let n = sets.len().max(1) as f64;
    universe
        .iter()
        .map(|a| (a.clone(), sets.iter().map(|s| s.score(a).unwrap_or(0.0)).sum::<f64>() / n))
        .collect()
}

pub fn soft_vote(sets: &[PredictionSet], threshold: f64, universe: &Universe) -> Result<Flags> {
    check_threshold(threshold)?;
    if sets.is_empty() {
        return Ok(Flags::new());
    }
    Ok(soft_scores(sets, universe)
        .into_iter()
        .filter(|(_, m)| *m >= threshold)
        .map(|(a, _)| a)
        .collect())
}

pub fn fused_scores(sets: &[PredictionSet], weights: &[f64], universe: &Universe) -> Result<BTreeMap<AccountId, f64>> {
    if weights.len() != sets.len() {
        return Err(Error::invalid(format!(
            "{} fusion weights for {} sources",
            weights.len(),
            sets.len()
        )));
    }
    Ok(universe
        .iter()
        .map(|a| {
            let f = sets
                .iter()
                .zip(weights)
                .map(|(s, w)| w * s.score(a).unwrap_or(0.0))
                .sum::<f64>();
            (a.clone(), f)
        })
        .collect())
}

/// Weighted average of source scores compared against the configured threshold.
pub fn late_fusion(sets: &[PredictionSet], config: &FusionConfig, universe: &Universe) -> Result<Flags> {
    Ok(fused_scores(sets, &config.weights, universe)?
        .into_iter()
        .filter(|(_, f)| *f >= config.threshold)
        .map(|(a, _)| a)
        .collect())
}

/// Dense view of sets over the labelled accounts, for the searches.
struct Dense {
    scores: Vec<Vec<f64>>,
    is_bot: Vec<bool>,
}

impl Dense {
    fn new(sets: &[PredictionSet], labels: &Labels) -> Self {
        Self {
            scores: sets
                .iter()
                .map(|s| labels.keys().map(|a| s.score(a).unwrap_or(0.0)).collect())
                .collect(),
            is_bot: labels.values().map(|r| r.is_bot()).collect(),
        }
    }

    fn combine(&self, weights: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.is_bot.len()];
        for (s, w) in self.scores.iter().zip(weights) {
            for (o, v) in out.iter_mut().zip(s) {
                *o += w * v;
            }
        }
        out
    }
}

fn f1_at(scores: &[f64], is_bot: &[bool], t: f64) -> f64 {
    let mut c = ConfusionCounts::default();
    for (&s, &b) in scores.iter().zip(is_bot) {
        match (s >= t, b) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    bot_class_metrics(c).f1
}

/// Best grid threshold and its F1 for one score vector; ties go to the smaller threshold.
fn best_threshold(scores: &[f64], is_bot: &[bool], grid: &[f64]) -> (f64, f64) {
    let mut best = (grid[0], f64::NEG_INFINITY);
    for &t in grid {
        let f = f1_at(scores, is_bot, t);
        if f > best.1 {
            best = (t, f);
        }
    }
    best
}

/// Grid threshold maximizing validation bot-class F1 of the soft vote.
pub fn optimize_soft_threshold(sets: &[PredictionSet], labels: &Labels, grid: &ThresholdGrid) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::invalid("no validation labels"));
    }
    let grid = grid.values();
    let dense = Dense::new(sets, labels);
    let uniform = vec![1.0 / sets.len().max(1) as f64; sets.len()];
    Ok(best_threshold(&dense.combine(&uniform), &dense.is_bot, &grid).0)
}

/// Weight vectors drawn uniformly from the simplex (normalized unit exponentials),
/// each paired with its best grid threshold; the best pair wins, earlier draws winning
/// ties. Draw `i` comes from its own counter-derived stream.
pub fn optimize_fusion_weights(
    sets: &[PredictionSet],
    labels: &Labels,
    n_samples: usize,
    seed: u64,
    grid: &ThresholdGrid,
) -> Result<FusionConfig> {
    if sets.len() < 2 {
        return Err(Error::invalid("weight search needs at least two sources"));
    }
    if labels.is_empty() {
        return Err(Error::invalid("no validation labels"));
    }
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be positive"));
    }
    let grid = grid.values();
    let dense = Dense::new(sets, labels);
    let m = sets.len();
    let eval = |i: usize| -> (f64, Vec<f64>, f64) {
        let mut r = rng::indexed(seed, "fusion-weights", i as u64);
        let mut w: Vec<f64> = (0..m).map(|_| -(1.0 - r.random::<f64>()).ln()).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        let (t, f1) = best_threshold(&dense.combine(&w), &dense.is_bot, &grid);
        (f1, w, t)
    };
    #[cfg(feature = "parallel")]
    let results: Vec<(f64, Vec<f64>, f64)> = {
        use rayon::prelude::*;
        (0..n_samples).into_par_iter().map(eval).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<(f64, Vec<f64>, f64)> = (0..n_samples).map(eval).collect();

    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        if r.0 > results[best].0 {
            best = i;
        }
    }
    let (_, mut weights, threshold) = results.into_iter().nth(best).expect("n_samples > 0");
    // renormalize so the sum is 1 to within rounding of the final division
    let s: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|v| *v /= s);
    FusionConfig::new(weights, threshold)
}

// ---------------------------------------------------------------------------
// Hybrid ensembles
// ---------------------------------------------------------------------------

/// AI soft vote as an interim voter, plus one bot vote per distinct reporter; ties go
/// to human.
pub fn human_first(ai_sets: &[PredictionSet], reports: &[Report], soft_threshold: f64, universe: &Universe) -> Result<Flags> {
    let interim = soft_vote(ai_sets, soft_threshold, universe)?;
    let rs = reporter_sets(reports);
    Ok(universe
        .iter()
        .filter(|a| {
            let reporters = rs.get(*a).map_or(0, BTreeSet::len);
            let (bot, human) = if interim.contains(*a) {
                (reporters + 1, 0)
            } else {
                (reporters, 1)
            };
            bot > human
        })
        .cloned()
        .collect())
}

/// Quality-weighted flags as a 0/1 channel joining the AI sets in a soft vote.
pub fn model_first(
    ai_sets: &[PredictionSet],
    reports: &[Report],
    human_config: &HumanEnsembleConfig,
    soft_threshold: f64,
    universe: &Universe,
) -> Result<Flags> {
    let qw = quality_weighted(reports, human_config)?;
    let mut sets = ai_sets.to_vec();
    sets.push(PredictionSet::from_flags("human", &qw.flags, universe));
    soft_vote(&sets, soft_threshold, universe)
}

/// Hard and soft outcomes of every non-empty voter subset, then a hard vote over those
/// `2 (2^n - 1)` outcomes with ties going to human.
pub fn meta_vote(voter_sets: &[PredictionSet], soft_threshold: f64, universe: &Universe) -> Result<Flags> {
    let n = voter_sets.len();
    if n == 0 || n > MAX_META_VOTERS {
        return Err(Error::invalid(format!(
            "meta voting supports 1..={MAX_META_VOTERS} voters, got {n}"
        )));
    }
    check_threshold(soft_threshold)?;
    let subsets = (1u32 << n) - 1;
    let mut out = Flags::new();
    let mut votes: Vec<Option<bool>> = vec![None; n];
    let mut scores = vec![0.0; n];
    for a in universe {
        for (i, s) in voter_sets.iter().enumerate() {
            let p = s.score(a);
            votes[i] = p.map(|p| p >= 0.5);
            scores[i] = p.unwrap_or(0.0);
        }
        let mut bot_outcomes = 0u32;
        for mask in 1..=subsets {
            let (mut bot, mut voting, mut sum, mut size) = (0u32, 0u32, 0.0, 0u32);
            for i in 0..n {
                if mask & (1 << i) == 0 {
                    continue;
                }
                size += 1;
                sum += scores[i];
                if let Some(v) = votes[i] {
                    voting += 1;
                    bot += u32::from(v);
                }
            }
            bot_outcomes += u32::from(2 * bot > voting);
            bot_outcomes += u32::from(sum / f64::from(size) >= soft_threshold);
        }
        if bot_outcomes > subsets {
            out.insert(a.clone());
        }
    }
    Ok(out)
}

/// Human channel `p_H(a) = min(1, s(a) / tau)` over the whole universe.
pub fn human_channel(reports: &[Report], config: &HumanEnsembleConfig, universe: &Universe) -> Result<PredictionSet> {
    let qw = quality_weighted(reports, config)?;
    let scores = universe
        .iter()
        .map(|a| {
            let s = qw.scores.get(a).copied().unwrap_or(0.0);
            let p = if config.tau > 0.0 { (s / config.tau).min(1.0) } else { 1.0 };
            (a.clone(), p)
        })
        .collect();
    Ok(PredictionSet {
        source: "human".into(),
        scores,
    })
}

/// Late fusion over the AI sets plus the human channel (weights in that order).
pub fn hybrid_late_fusion(
    ai_sets: &[PredictionSet],
    reports: &[Report],
    human_config: &HumanEnsembleConfig,
    fusion_config: &FusionConfig,
    universe: &Universe,
) -> Result<Flags> {
    let mut sets = ai_sets.to_vec();
    sets.push(human_channel(reports, human_config, universe)?);
    late_fusion(&sets, fusion_config, universe)
}

/// How the human side enters meta voting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaVoters {
    /// One voter: quality-weighted flags as 0/1 over reported accounts.
    #[default]
    HumanEnsemble,
    /// One voter per reporter, voting bot on the accounts it reported.
    IndividualReporters,
}

/// Human voters for meta voting; each covers only the accounts it has evidence on.
pub fn human_voters(
    reports: &[Report],
    config: &HumanEnsembleConfig,
    mode: MetaVoters,
    universe: &Universe,
) -> Result<Vec<PredictionSet>> {
    match mode {
        MetaVoters::HumanEnsemble => {
            let qw = quality_weighted(reports, config)?;
            let covered: Vec<&AccountId> = qw.scores.keys().filter(|a| universe.contains(*a)).collect();
            Ok(vec![PredictionSet::from_flags("human", &qw.flags, covered)])
        }
        MetaVoters::IndividualReporters => {
            let mut per: BTreeMap<&str, PredictionSet> = BTreeMap::new();
            for r in reports.iter().filter(|r| universe.contains(&r.subject)) {
                per.entry(&r.reporter)
                    .or_insert_with(|| PredictionSet::new(format!("reporter:{}", r.reporter)))
                    .scores
                    .insert(r.subject.clone(), 1.0);
            }
            Ok(per.into_values().collect())
        }
    }
}

// ---------------------------------------------------------------------------
// Cross-validated comparison
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// A trained detector by name (`trees`, `moe`) or an external source.
    Detector(String),
    /// Quality-weighted human reports.
    HumanEnsemble,
    CountBased(usize),
    HardVote,
    SoftVote,
    LateFusion,
    HumanFirst,
    ModelFirst,
    MetaVote,
    HybridLateFusion,
}

impl Strategy {
    /// Every strategy of the comparison table, detectors first.
    pub fn table_defaults() -> Vec<Strategy> {
        vec![
            Strategy::Detector("trees".into()),
            Strategy::Detector("moe".into()),
            Strategy::HumanEnsemble,
            Strategy::HardVote,
            Strategy::SoftVote,
            Strategy::LateFusion,
            Strategy::HumanFirst,
            Strategy::ModelFirst,
            Strategy::MetaVote,
            Strategy::HybridLateFusion,
        ]
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Detector(n) => write!(f, "{n}"),
            Strategy::HumanEnsemble => write!(f, "human"),
            Strategy::CountBased(k) => write!(f, "count:{k}"),
            Strategy::HardVote => write!(f, "hard_vote"),
            Strategy::SoftVote => write!(f, "soft_vote"),
            Strategy::LateFusion => write!(f, "late_fusion"),
            Strategy::HumanFirst => write!(f, "human_first"),
            Strategy::ModelFirst => write!(f, "model_first"),
            Strategy::MetaVote => write!(f, "meta_vote"),
            Strategy::HybridLateFusion => write!(f, "hybrid_late_fusion"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "human" | "quality_weighted" => Strategy::HumanEnsemble,
            "hard" | "hard_vote" => Strategy::HardVote,
            "soft" | "soft_vote" => Strategy::SoftVote,
            "late" | "late_fusion" => Strategy::LateFusion,
            "human_first" => Strategy::HumanFirst,
            "model_first" => Strategy::ModelFirst,
            "meta" | "meta_vote" => Strategy::MetaVote,
            "hybrid" | "hybrid_late_fusion" => Strategy::HybridLateFusion,
            other => {
                if let Some(k) = other.strip_prefix("count:") {
                    Strategy::CountBased(k.parse().map_err(|_| Error::invalid(format!("bad k in `{other}`")))?)
                } else if let Some(name) = other.strip_prefix("detector:") {
                    Strategy::Detector(name.to_string())
                } else if ["trees", "moe"].contains(&other) {
                    Strategy::Detector(other.to_string())
                } else {
                    return Err(Error::invalid(format!("unknown strategy `{other}`")));
                }
            }
        })
    }
}

/// How `tau` is chosen inside each fold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauRule {
    Fixed(f64),
    /// Mean F1 of the reporters with at least one report in the training split.
    MeanReporterF1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub k: usize,
    pub seed: u64,
    pub detectors: Vec<DetectorSpec>,
    /// Also treat the dataset's external prediction sets as AI sources.
    pub include_external: bool,
    pub threshold_grid: ThresholdGrid,
    pub fusion_samples: usize,
    /// Folds for the out-of-fold validation predictions inside each training split.
    pub inner_k: usize,
    pub tau: TauRule,
    pub meta_voters: MetaVoters,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            k: 5,
            seed: 0,
            detectors: vec![
                DetectorSpec::BaggedTrees(TreeParams::default()),
                DetectorSpec::MixtureOfExperts(MixtureParams::default()),
            ],
            include_external: true,
            threshold_grid: ThresholdGrid::default(),
            fusion_samples: DEFAULT_FUSION_SAMPLES,
            inner_k: 5,
            tau: TauRule::Fixed(DEFAULT_TAU),
            meta_voters: MetaVoters::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub strategy: String,
    pub confusion: ConfusionCounts,
    pub metrics: ClassMetrics,
}

/// Values selected on one fold's training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldChoice {
    pub fold: usize,
    pub tau: f64,
    pub soft_threshold: f64,
    pub late_fusion: FusionConfig,
    pub hybrid_fusion: FusionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub rows: Vec<CvRow>,
    pub folds: Vec<FoldChoice>,
}

impl CvReport {
    pub fn row(&self, strategy: &str) -> Option<&CvRow> {
        self.rows.iter().find(|r| r.strategy == strategy)
    }
}

fn restrict(set: &PredictionSet, ids: &Universe) -> PredictionSet {
    PredictionSet {
        source: set.source.clone(),
        scores: set
            .scores
            .iter()
            .filter(|(a, _)| ids.contains(*a))
            .map(|(a, p)| (a.clone(), *p))
            .collect(),
    }
}

fn sub_labels(labels: &Labels, ids: &Universe) -> Labels {
    ids.iter().map(|a| (a.clone(), labels[a])).collect()
}

fn check_both_classes(labels: &Labels, what: &str) -> Result<()> {
    let bots = labels.values().filter(|r| r.is_bot()).count();
    if bots == 0 || bots == labels.len() {
        return Err(Error::invalid(format!("{what} contains a single class")));
    }
    Ok(())
}

/// Reporter weights from F1 over `ids`; reporters with no report there get 0.
pub fn fold_reporter_weights(reports: &[Report], labels: &Labels, ids: &Universe) -> Result<BTreeMap<AccountId, f64>> {
    let inside: Vec<Report> = reports.iter().filter(|r| ids.contains(&r.subject)).cloned().collect();
    let table = metrics::reporter_f1_table(&inside, &sub_labels(labels, ids), ids)?;
    Ok(reports
        .iter()
        .map(|r| (r.reporter.clone(), table.get(&r.reporter).copied().unwrap_or(0.0)))
        .collect())
}

fn human_config_for(reports: &[Report], labels: &Labels, train: &Universe, rule: TauRule) -> Result<HumanEnsembleConfig> {
    let weights = fold_reporter_weights(reports, labels, train)?;
    let tau = match rule {
        TauRule::Fixed(t) => t,
        TauRule::MeanReporterF1 => {
            let active: BTreeSet<&str> = reports
                .iter()
                .filter(|r| train.contains(&r.subject))
                .map(|r| r.reporter.as_str())
                .collect();
            if active.is_empty() {
                0.0
            } else {
                active.iter().map(|r| weights[*r]).sum::<f64>() / active.len() as f64
            }
        }
    };
    HumanEnsembleConfig::new(tau, weights)
}

/// Trains `spec` on `ids` and scores `targets`.
fn fit_predict(
    spec: &DetectorSpec,
    features: &BTreeMap<AccountId, FeatureVector>,
    labels: &Labels,
    ids: &Universe,
    targets: &Universe,
) -> Result<PredictionSet> {
    let data = TrainingSet::from_features(ids.iter().map(|a| &features[a]), labels)?;
    let model = spec.train(&data)?;
    model.predict_all(spec.name(), targets.iter().map(|a| &features[a]))
}

/// Out-of-fold scores for `ids` from an inner k-fold split.
fn inner_oof(
    spec: &DetectorSpec,
    features: &BTreeMap<AccountId, FeatureVector>,
    labels: &Labels,
    ids: &Universe,
    inner_k: usize,
    seed: u64,
) -> Result<PredictionSet> {
    let inner = split_labels(&sub_labels(labels, ids), inner_k, seed)?;
    let mut out = PredictionSet::new(spec.name());
    for j in 0..inner_k {
        let held = inner.fold(j);
        let rest = inner.complement(j);
        let p = fit_predict(&spec.with_seed(rng::derive_seed(seed, &format!("inner-{j}"))), features, labels, &rest, &held)?;
        out.scores.extend(p.scores);
    }
    Ok(out)
}

/// Stratified k-fold comparison of detectors and aggregation strategies.
///
/// Inside each fold the detectors are trained on the training split; thresholds and
/// fusion weights are selected on out-of-fold predictions within that split; every
/// strategy is then scored on the held-out fold. Reported metrics pool the held-out
/// confusion counts over all folds.
pub fn cross_validated_compare(ds: &Dataset, strategies: &[Strategy], cfg: &CvConfig) -> Result<CvReport> {
    let labels = ds.labels();
    let folds = split_labels(&labels, cfg.k, rng::derive_seed(cfg.seed, "cv-folds"))?;
    let features = detectors::extract_all(ds, ds.n_days);
    let externals: Vec<&PredictionSet> = if cfg.include_external {
        ds.external_predictions.values().collect()
    } else {
        Vec::new()
    };
    let mut totals: Vec<ConfusionCounts> = vec![ConfusionCounts::default(); strategies.len()];
    let mut choices = Vec::with_capacity(cfg.k);

    for fold in 0..cfg.k {
        let test = folds.fold(fold);
        let train = folds.complement(fold);
        check_both_classes(&sub_labels(&labels, &test), &format!("test fold {fold}"))?;
        let train_labels = sub_labels(&labels, &train);
        check_both_classes(&train_labels, &format!("training split of fold {fold}"))?;

        let mut val_sets = Vec::new();
        let mut test_sets = Vec::new();
        for (d, spec) in cfg.detectors.iter().enumerate() {
            let seed = rng::derive_seed(cfg.seed, &format!("cv-{fold}-{d}"));
            val_sets.push(inner_oof(spec, &features, &labels, &train, cfg.inner_k, seed)?);
            test_sets.push(fit_predict(&spec.with_seed(seed), &features, &labels, &train, &test)?);
        }
        for e in &externals {
            val_sets.push(restrict(e, &train));
            test_sets.push(restrict(e, &test));
        }
        if val_sets.is_empty() {
            return Err(Error::invalid("no AI sources for cross-validation"));
        }

        let human = human_config_for(&ds.reports, &labels, &train, cfg.tau)?;
        let soft_threshold = optimize_soft_threshold(&val_sets, &train_labels, &cfg.threshold_grid)?;
        let fusion_seed = rng::derive_seed(cfg.seed, &format!("cv-fusion-{fold}"));
        let late = if val_sets.len() >= 2 {
            optimize_fusion_weights(&val_sets, &train_labels, cfg.fusion_samples, fusion_seed, &cfg.threshold_grid)?
        } else {
            FusionConfig::uniform(1, soft_threshold)
        };
        let mut hybrid_val = val_sets.clone();
        hybrid_val.push(human_channel(&ds.reports, &human, &train)?);
        let hybrid = optimize_fusion_weights(
            &hybrid_val,
            &train_labels,
            cfg.fusion_samples,
            rng::derive_seed(cfg.seed, &format!("cv-hybrid-{fold}")),
            &cfg.threshold_grid,
        )?;

        let test_reports: Vec<Report> = ds.reports.iter().filter(|r| test.contains(&r.subject)).cloned().collect();
        for (s, strategy) in strategies.iter().enumerate() {
            let flags = match strategy {
                Strategy::Detector(name) => {
                    let set = test_sets
                        .iter()
                        .find(|p| &p.source == name)
                        .ok_or_else(|| Error::invalid(format!("no detector or external source named `{name}`")))?;
                    set.flags(0.5)
                }
                Strategy::HumanEnsemble => quality_weighted(&test_reports, &human)?.flags,
                Strategy::CountBased(k) => count_based(&test_reports, *k)?,
                Strategy::HardVote => hard_vote(&test_sets, &test),
                Strategy::SoftVote => soft_vote(&test_sets, soft_threshold, &test)?,
                Strategy::LateFusion => late_fusion(&test_sets, &late, &test)?,
                Strategy::HumanFirst => human_first(&test_sets, &test_reports, soft_threshold, &test)?,
                Strategy::ModelFirst => model_first(&test_sets, &test_reports, &human, soft_threshold, &test)?,
                Strategy::MetaVote => {
                    let mut voters = test_sets.clone();
                    voters.extend(human_voters(&test_reports, &human, cfg.meta_voters, &test)?);
                    meta_vote(&voters, soft_threshold, &test)?
                }
                Strategy::HybridLateFusion => hybrid_late_fusion(&test_sets, &test_reports, &human, &hybrid, &test)?,
            };
            totals[s] = totals[s].merge(metrics::confusion(&flags, &labels, &test)?);
        }
        choices.push(FoldChoice {
            fold,
            tau: human.tau,
            soft_threshold,
            late_fusion: late,
            hybrid_fusion: hybrid,
        });
    }

    Ok(CvReport {
        rows: strategies
            .iter()
            .zip(totals)
            .map(|(s, c)| CvRow {
                strategy: s.to_string(),
                confusion: c,
                metrics: bot_class_metrics(c),
            })
            .collect(),
        folds: choices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Role;

    fn rep(day: u32, reporter: &str, subject: &str) -> Report {
        Report {
            day,
            reporter: reporter.into(),
            subject: subject.into(),
        }
    }

    fn uni(ids: &[&str]) -> Universe {
        ids.iter().map(|s| s.to_string()).collect()
    }

    fn set(name: &str, scores: &[(&str, f64)]) -> PredictionSet {
        PredictionSet {
            source: name.into(),
            scores: scores.iter().map(|(a, p)| (a.to_string(), *p)).collect(),
        }
    }

    #[test]
    fn count_based_cases() {
        let reps = vec![rep(1, "r1", "a"), rep(2, "r2", "a"), rep(1, "r1", "b"), rep(3, "r1", "b")];
        assert_eq!(count_based(&reps, 2).unwrap(), uni(&["a"]));
        assert_eq!(count_based(&reps, 1).unwrap(), uni(&["a", "b"]));
        assert!(count_based(&[], 3).unwrap().is_empty());
        assert!(count_based(&reps, 0).is_err());
    }

    #[test]
    fn quality_weighted_cases() {
        let cfg = HumanEnsembleConfig::new(0.533, [("r1".to_string(), 0.533)].into()).unwrap();
        let qw = quality_weighted(&[rep(1, "r1", "a")], &cfg).unwrap();
        assert!(qw.flags.contains("a"));
        let cfg = HumanEnsembleConfig::new(0.533, [("p".to_string(), 0.2), ("q".to_string(), 0.2)].into()).unwrap();
        let qw = quality_weighted(&[rep(1, "p", "a"), rep(1, "q", "a")], &cfg).unwrap();
        assert!((qw.scores["a"] - 0.4).abs() < 1e-12);
        assert!(qw.flags.is_empty());
        assert!(matches!(
            quality_weighted(&[rep(1, "zz", "a")], &cfg),
            Err(Error::UnknownReporter(_))
        ));
        assert!(HumanEnsembleConfig::new(-0.1, BTreeMap::new()).is_err());
        assert!(HumanEnsembleConfig::new(0.5, [("x".to_string(), 1.5)].into()).is_err());
    }

    #[test]
    fn hard_vote_majority_and_ties() {
        let u = uni(&["a"]);
        let v = |ps: &[f64]| -> Vec<PredictionSet> {
            ps.iter().enumerate().map(|(i, p)| set(&format!("s{i}"), &[("a", *p)])).collect()
        };
        assert_eq!(hard_vote(&v(&[0.9, 0.8, 0.1]), &u), uni(&["a"]));
        assert!(hard_vote(&v(&[0.9, 0.1]), &u).is_empty());
        assert_eq!(hard_vote(&v(&[0.6]), &u), v(&[0.6])[0].flags(0.5));
    }

    #[test]
    fn soft_vote_cases() {
        let u = uni(&["a"]);
        let s = |p: f64, q: f64| vec![set("x", &[("a", p)]), set("y", &[("a", q)])];
        assert_eq!(soft_vote(&s(0.9, 0.6), 0.71, &u).unwrap(), u);
        assert!(soft_vote(&s(0.9, 0.5), 0.71, &u).unwrap().is_empty());
        assert!(soft_vote(&s(0.0, 0.0), 0.01, &u).unwrap().is_empty());
        assert!(soft_vote(&s(0.0, 0.0), 1.5, &u).is_err());
    }

    #[test]
    fn late_fusion_cases() {
        let u = uni(&["a", "b"]);
        let sets = vec![set("x", &[("a", 0.8), ("b", 0.3)]), set("y", &[("a", 0.4), ("b", 0.9)])];
        let cfg = FusionConfig::new(vec![0.5, 0.5], 0.5).unwrap();
        assert_eq!(late_fusion(&sets, &cfg, &u).unwrap(), uni(&["a", "b"]));
        let first = FusionConfig::new(vec![1.0, 0.0], 0.5).unwrap();
        assert_eq!(late_fusion(&sets, &first, &u).unwrap(), sets[0].flags(0.5));
        let bad = FusionConfig::uniform(3, 0.5);
        assert!(late_fusion(&sets, &bad, &u).is_err());
        assert!(FusionConfig::new(vec![0.7, 0.7], 0.5).is_err());
    }

    fn labels_of(bots: &[&str], humans: &[&str]) -> Labels {
        bots.iter()
            .map(|b| (b.to_string(), Role::Bot))
            .chain(humans.iter().map(|h| (h.to_string(), Role::Human)))
            .collect()
    }

    #[test]
    fn soft_threshold_search() {
        let labels = labels_of(&["b1", "b2"], &["h1", "h2"]);
        let perfect = set("p", &[("b1", 0.9), ("b2", 0.9), ("h1", 0.1), ("h2", 0.1)]);
        let t = optimize_soft_threshold(&[perfect], &labels, &ThresholdGrid::default()).unwrap();
        assert_eq!(t, 0.50);
        // humans at 0.79 need t >= 0.80 to go, bots at 0.85 stay
        let s = set("s", &[("b1", 0.85), ("b2", 0.9), ("h1", 0.79), ("h2", 0.6)]);
        let grid = ThresholdGrid::default();
        // exhaustive grid evaluation oracle
        let mut best = (0.0, -1.0);
        for t in grid.values() {
            let flags = s.flags(t);
            let f = metrics::evaluate_flags(&flags, &labels, &labels.keys().cloned().collect()).unwrap().f1;
            if f > best.1 {
                best = (t, f);
            }
        }
        assert_eq!(best.0, 0.80);
        assert_eq!(optimize_soft_threshold(&[s], &labels, &grid).unwrap(), 0.80);
        assert!(optimize_soft_threshold(&[], &Labels::new(), &grid).is_err());
    }

    #[test]
    fn grid_contains_071() {
        let g = ThresholdGrid::default().values();
        assert_eq!(g.len(), 46);
        assert_eq!(g[0], 0.5);
        assert_eq!(*g.last().unwrap(), 0.95);
        assert!(g.contains(&0.71));
    }

    #[test]
    fn fusion_search_determinism_and_invariance() {
        let labels = labels_of(&["b1", "b2", "b3"], &["h1", "h2", "h3"]);
        let a = set("a", &[("b1", 0.9), ("b2", 0.7), ("b3", 0.4), ("h1", 0.2), ("h2", 0.6), ("h3", 0.1)]);
        let g = ThresholdGrid::default();
        let c1 = optimize_fusion_weights(&[a.clone(), a.clone()], &labels, 1, 9, &g).unwrap();
        let c2 = optimize_fusion_weights(&[a.clone(), a.clone()], &labels, 1, 9, &g).unwrap();
        assert_eq!(c1, c2);
        // identical sources: every draw ties, so the first draw wins
        let many = optimize_fusion_weights(&[a.clone(), a.clone()], &labels, 50, 9, &g).unwrap();
        assert_eq!(many.weights, c1.weights);
        assert!((many.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(optimize_fusion_weights(&[a], &labels, 10, 9, &g).is_err());
    }

    #[test]
    fn human_first_cases() {
        let u = uni(&["a", "b", "c"]);
        let ai = vec![set("m", &[("a", 0.1), ("b", 0.9), ("c", 0.1)])];
        let reps = vec![rep(1, "r1", "a"), rep(2, "r2", "a"), rep(1, "r1", "c")];
        let f = human_first(&ai, &reps, 0.71, &u).unwrap();
        assert!(f.contains("a"));
        assert!(f.contains("b"));
        assert!(!f.contains("c"));
    }

    #[test]
    fn model_first_cases() {
        let u = uni(&["a", "b"]);
        let cfg = HumanEnsembleConfig::new(0.5, [("r".to_string(), 0.9)].into()).unwrap();
        let reps = vec![rep(1, "r", "a")];
        let ai = vec![set("x", &[("a", 0.9), ("b", 0.6)]), set("y", &[("a", 0.8), ("b", 0.6)])];
        let f = model_first(&ai, &reps, &cfg, 0.71, &u).unwrap();
        assert_eq!(f, uni(&["a"]));
        let only = model_first(&[], &reps, &cfg, 0.71, &u).unwrap();
        assert_eq!(only, quality_weighted(&reps, &cfg).unwrap().flags);
    }

    #[test]
    fn meta_vote_cases() {
        let u = uni(&["a"]);
        let v = |ps: &[f64]| -> Vec<PredictionSet> {
            ps.iter().enumerate().map(|(i, p)| set(&format!("s{i}"), &[("a", *p)])).collect()
        };
        assert_eq!(meta_vote(&v(&[1.0, 1.0, 1.0]), 0.71, &u).unwrap(), u);
        assert_eq!(meta_vote(&v(&[0.8]), 0.71, &u).unwrap(), u);
        assert!(meta_vote(&v(&[0.6]), 0.71, &u).unwrap().is_empty());
        // [0.9, 0.9, 0.1] at 0.71: 7 of 14 subgroup outcomes are bot, a tie, so human
        assert!(meta_vote(&v(&[0.9, 0.9, 0.1]), 0.71, &u).unwrap().is_empty());
        assert!(meta_vote(&v(&[0.5; 17]), 0.71, &u).is_err());
        assert!(meta_vote(&[], 0.71, &u).is_err());
    }

    #[test]
    fn hybrid_channel_ramp() {
        let u = uni(&["a", "b", "c"]);
        let cfg = HumanEnsembleConfig::new(
            0.6,
            [("r1".to_string(), 0.6), ("r2".to_string(), 0.3)].into(),
        )
        .unwrap();
        let reps = vec![rep(1, "r1", "a"), rep(1, "r2", "b")];
        let h = human_channel(&reps, &cfg, &u).unwrap();
        assert_eq!(h.scores["a"], 1.0);
        assert!((h.scores["b"] - 0.5).abs() < 1e-12);
        assert_eq!(h.scores["c"], 0.0);
        let ai = vec![set("x", &[("a", 0.0), ("b", 0.0), ("c", 0.9)])];
        let f = hybrid_late_fusion(&ai, &reps, &cfg, &FusionConfig::new(vec![1.0, 0.0], 0.5).unwrap(), &u).unwrap();
        assert_eq!(f, uni(&["c"]));
        assert!(hybrid_late_fusion(&ai, &reps, &cfg, &FusionConfig::uniform(3, 0.5), &u).is_err());
    }

    #[test]
    fn strategy_names_roundtrip() {
        for s in Strategy::table_defaults().into_iter().chain([Strategy::CountBased(2)]) {
            let parsed: Strategy = s.to_string().parse().unwrap();
            assert_eq!(parsed, s);
        }
        assert!("bogus".parse::<Strategy>().is_err());
    }
}
