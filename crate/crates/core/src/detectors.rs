//! Behavioural feature extraction and the trainable detectors: bagged Gini trees, a
//! three-expert logistic mixture, and an adapter for externally produced scores.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{self, Action, Dataset, InteractionEvent, Labels, PredictionSet};
use crate::error::{Error, Result};
use crate::rng;

pub const FEATURE_NAMES: [&str; 10] = [
    "posts_per_day",
    "follower_growth",
    "like_out_rate",
    "like_in_rate",
    "follow_out_rate",
    "post_polarity_mean",
    "post_polarity_var",
    "mean_post_gap_steps",
    "active_day_fraction",
    "follower_following_ratio",
];

/// Feature indices seen by each mixture expert: content statistics, account metadata,
/// and temporal activity patterns.
pub const CONTENT_FEATURES: [usize; 3] = [0, 5, 6];
pub const METADATA_FEATURES: [usize; 5] = [1, 2, 3, 4, 9];
pub const TEMPORAL_FEATURES: [usize; 2] = [7, 8];

pub fn default_schema() -> Vec<String> {
    FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub account: String,
    pub schema: Vec<String>,
    pub values: Vec<f64>,
}

#[derive(Default, Clone)]
struct Tally {
    posts: u32,
    pol_sum: f64,
    pol_sq: f64,
    last_post: Option<u64>,
    gap_sum: f64,
    gaps: u32,
    likes_out: u32,
    likes_in: u32,
    follows_out: u32,
    follows_in: u32,
    first_day: Option<u32>,
    last_day: u32,
    own_days: std::collections::BTreeSet<u32>,
}

impl Tally {
    fn touch(&mut self, day: u32) {
        self.first_day = Some(self.first_day.map_or(day, |d| d.min(day)));
        self.last_day = self.last_day.max(day);
    }

    fn features(&self) -> Vec<f64> {
        let Some(first) = self.first_day else {
            return vec![0.0; FEATURE_NAMES.len()];
        };
        let span = f64::from(self.last_day - first + 1);
        let posts = f64::from(self.posts);
        let (mean, var) = if self.posts > 0 {
            let m = self.pol_sum / posts;
            (m, (self.pol_sq / posts - m * m).max(0.0))
        } else {
            (0.0, 0.0)
        };
        let gap = if self.gaps > 0 {
            self.gap_sum / f64::from(self.gaps)
        } else {
            0.0
        };
        let ratio = if self.follows_out > 0 {
            f64::from(self.follows_in) / f64::from(self.follows_out)
        } else {
            0.0
        };
        vec![
            posts / span,
            f64::from(self.follows_in) / span,
            f64::from(self.likes_out) / span,
            f64::from(self.likes_in) / span,
            f64::from(self.follows_out) / span,
            mean,
            var,
            gap,
            self.own_days.len() as f64 / span,
            ratio,
        ]
    }
}

/// Features for `accounts` from every event with `timestamp <= until_step`.
///
/// Rates are per day of the account's observed lifetime (first to last day with a
/// post, like or follow involving it), so an account that went quiet gets the same
/// vector no matter how late the cut-off is. Missing denominators give 0.
pub fn features_until<'a>(
    events: &[InteractionEvent],
    accounts: impl IntoIterator<Item = &'a str>,
    until_step: u64,
) -> BTreeMap<String, FeatureVector> {
    let mut tallies: BTreeMap<&str, Tally> = accounts.into_iter().map(|a| (a, Tally::default())).collect();
    for e in events.iter().take_while(|e| e.timestamp <= until_step) {
        match e.action {
            Action::Post | Action::Like | Action::Follow => {}
            _ => continue,
        }
        if let Some(t) = tallies.get_mut(e.actor.as_str()) {
            t.touch(e.day);
            t.own_days.insert(e.day);
            match e.action {
                Action::Post => {
                    let p = e.polarity.unwrap_or(0.0);
                    t.posts += 1;
                    t.pol_sum += p;
                    t.pol_sq += p * p;
                    if let Some(prev) = t.last_post {
                        t.gap_sum += (e.timestamp - prev) as f64;
                        t.gaps += 1;
                    }
                    t.last_post = Some(e.timestamp);
                }
                Action::Like => t.likes_out += 1,
                Action::Follow => t.follows_out += 1,
                _ => {}
            }
        }
        if let Some(target) = e.target.as_deref() {
            if let Some(t) = tallies.get_mut(target) {
                t.touch(e.day);
                match e.action {
                    Action::Like => t.likes_in += 1,
                    Action::Follow => t.follows_in += 1,
                    _ => {}
                }
            }
        }
    }
    let schema = default_schema();
    tallies
        .into_iter()
        .map(|(a, t)| {
            (
                a.to_string(),
                FeatureVector {
                    account: a.to_string(),
                    schema: schema.clone(),
                    values: t.features(),
                },
            )
        })
        .collect()
}

fn last_step_of_day(ds: &Dataset, day: u32) -> u64 {
    u64::from(day) * u64::from(ds.steps_per_day) - 1
}

/// Features of one account from events up to and including `up_to_day`.
pub fn extract_features(ds: &Dataset, account: &str, up_to_day: u32) -> Result<FeatureVector> {
    if ds.account(account).is_none() {
        return Err(Error::UnknownAccount(account.to_string()));
    }
    if up_to_day == 0 || up_to_day > ds.n_days {
        return Err(Error::invalid(format!("up_to_day {up_to_day} outside 1..={}", ds.n_days)));
    }
    let mut m = features_until(&ds.events, [account], last_step_of_day(ds, up_to_day));
    Ok(m.remove(account).expect("account tallied"))
}

/// Features of every account in the dataset up to and including `up_to_day`.
pub fn extract_all(ds: &Dataset, up_to_day: u32) -> BTreeMap<String, FeatureVector> {
    let day = up_to_day.clamp(1, ds.n_days);
    features_until(&ds.events, ds.accounts.iter().map(|a| a.id.as_str()), last_step_of_day(ds, day))
}

// ---------------------------------------------------------------------------
// Training data
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingSet {
    pub schema: Vec<String>,
    pub accounts: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// `true` for bot.
    pub labels: Vec<bool>,
}

impl TrainingSet {
    pub fn new(schema: Vec<String>) -> Self {
        Self {
            schema,
            ..Default::default()
        }
    }

    /// Rows for every feature vector whose account has a label.
    pub fn from_features<'a>(features: impl IntoIterator<Item = &'a FeatureVector>, labels: &Labels) -> Result<Self> {
        let mut set = TrainingSet::new(default_schema());
        for fv in features {
            if let Some(role) = labels.get(&fv.account) {
                set.push(fv, role.is_bot())?;
            }
        }
        Ok(set)
    }

    pub fn push(&mut self, fv: &FeatureVector, bot: bool) -> Result<()> {
        if fv.schema != self.schema {
            return Err(Error::SchemaMismatch {
                expected: self.schema.clone(),
                found: fv.schema.clone(),
            });
        }
        self.accounts.push(fv.account.clone());
        self.rows.push(fv.values.clone());
        self.labels.push(bot);
        Ok(())
    }

    pub fn extend(&mut self, other: &TrainingSet) -> Result<()> {
        if other.schema != self.schema {
            return Err(Error::SchemaMismatch {
                expected: self.schema.clone(),
                found: other.schema.clone(),
            });
        }
        self.accounts.extend(other.accounts.iter().cloned());
        self.rows.extend(other.rows.iter().cloned());
        self.labels.extend(other.labels.iter().copied());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.schema.len()
    }

    fn check_two_classes(&self) -> Result<()> {
        let bots = self.labels.iter().filter(|&&b| b).count();
        if bots < 2 || self.len() - bots < 2 {
            return Err(Error::SingleClass);
        }
        if let Some(v) = self.rows.iter().flatten().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite feature value {v}")));
        }
        Ok(())
    }

    /// SHA-256 over schema, rows and labels (hex, first 16 bytes).
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.schema {
            h.update(s.as_bytes());
            h.update([0]);
        }
        for (row, &y) in self.rows.iter().zip(&self.labels) {
            for v in row {
                h.update(v.to_le_bytes());
            }
            h.update([u8::from(y)]);
        }
        h.finalize()[..16].iter().map(|b| format!("{b:02x}")).collect()
    }
}

// ---------------------------------------------------------------------------
// Bagged trees
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 8,
            min_leaf: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { bot: bool },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn vote(&self, x: &[f64]) -> bool {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { bot } => return *bot,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

fn gini(bots: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = bots as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct TreeBuilder<'a, R> {
    data: &'a TrainingSet,
    params: &'a TreeParams,
    mtry: usize,
    rng: &'a mut R,
    nodes: Vec<Node>,
}

impl<R: Rng> TreeBuilder<'_, R> {
    fn build(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let n = idx.len();
        let bots = idx.iter().filter(|&&i| self.data.labels[i]).count();
        let me = self.nodes.len();
        self.nodes.push(Node::Leaf { bot: 2 * bots > n });
        if depth >= self.params.max_depth || bots == 0 || bots == n || n < 2 * self.params.min_leaf {
            return me;
        }
        let parent = gini(bots, n);
        let mut best: Option<(f64, usize, f64)> = None;
        let d = self.data.dim();
        for f in sample(self.rng, d, self.mtry.min(d)).into_iter() {
            idx.sort_by(|&a, &b| self.data.rows[a][f].total_cmp(&self.data.rows[b][f]));
            let mut left_bots = 0;
            for split in 1..n {
                left_bots += usize::from(self.data.labels[idx[split - 1]]);
                let lo = self.data.rows[idx[split - 1]][f];
                let hi = self.data.rows[idx[split]][f];
                if lo == hi || split < self.params.min_leaf || n - split < self.params.min_leaf {
                    continue;
                }
                let imp = (split as f64 * gini(left_bots, split)
                    + (n - split) as f64 * gini(bots - left_bots, n - split))
                    / n as f64;
                if best.is_none_or(|(b, _, _)| imp < b) {
                    best = Some((imp, f, lo + (hi - lo) / 2.0));
                }
            }
        }
        let Some((imp, feature, threshold)) = best else { return me };
        if imp >= parent - 1e-12 {
            return me;
        }
        let (mut l, mut r): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.data.rows[i][feature] <= threshold);
        let left = self.build(&mut l, depth + 1);
        let right = self.build(&mut r, depth + 1);
        self.nodes[me] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        me
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub params: TreeParams,
    pub trees: Vec<Tree>,
}

impl Forest {
    /// Fraction of trees voting bot.
    pub fn probability(&self, x: &[f64]) -> f64 {
        let votes = self.trees.iter().filter(|t| t.vote(x)).count();
        votes as f64 / self.trees.len() as f64
    }
}

/// Bootstrap-aggregated Gini trees with `ceil(sqrt(d))` candidate features per split.
pub fn train_bagged_trees(data: &TrainingSet, params: TreeParams) -> Result<DetectorModel> {
    data.check_two_classes()?;
    if params.n_trees == 0 {
        return Err(Error::invalid("n_trees must be positive"));
    }
    let mtry = (data.dim() as f64).sqrt().ceil() as usize;
    let n = data.len();
    let trees = (0..params.n_trees)
        .map(|t| {
            let mut r = rng::indexed(params.seed, "bagged-trees", t as u64);
            let mut idx: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
            let mut b = TreeBuilder {
                data,
                params: &params,
                mtry,
                rng: &mut r,
                nodes: Vec::new(),
            };
            b.build(&mut idx, 0);
            Tree { nodes: b.nodes }
        })
        .collect();
    Ok(DetectorModel {
        format_version: MODEL_FORMAT_VERSION,
        feature_schema: data.schema.clone(),
        fingerprint: Fingerprint {
            seed: params.seed,
            data_digest: data.digest(),
        },
        body: ModelBody::BaggedTrees(Forest { params, trees }),
    })
}

// ---------------------------------------------------------------------------
// Mixture of logistic experts
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixtureParams {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for MixtureParams {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 400,
            learning_rate: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expert {
    pub features: Vec<usize>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Expert {
    fn logit(&self, x: &[f64]) -> f64 {
        self.bias + self.features.iter().zip(&self.weights).map(|(&f, w)| w * x[f]).sum::<f64>()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Three logistic experts over disjoint feature groups, averaged with softmax gate
/// weights. Inputs are standardized with the stored training means and deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub experts: Vec<Expert>,
    pub gate_logits: Vec<f64>,
}

impl MixtureModel {
    /// Untrained model: small seeded expert weights, uniform gate, identity scaling.
    pub fn init(dim: usize, groups: &[Vec<usize>], seed: u64) -> Self {
        let mut r = rng::stream(seed, "mixture-init");
        let experts = groups
            .iter()
            .map(|g| Expert {
                features: g.clone(),
                weights: g.iter().map(|_| (r.random::<f64>() - 0.5) * 0.02).collect(),
                bias: 0.0,
            })
            .collect();
        Self {
            means: vec![0.0; dim],
            stds: vec![1.0; dim],
            experts,
            gate_logits: vec![0.0; groups.len()],
        }
    }

    pub fn gate_weights(&self) -> Vec<f64> {
        let m = self.gate_logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = self.gate_logits.iter().map(|g| (g - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    /// Mixture probability for an already standardized input.
    pub fn forward(&self, z: &[f64]) -> f64 {
        self.gate_weights()
            .iter()
            .zip(&self.experts)
            .map(|(g, e)| g * sigmoid(e.logit(z)))
            .sum()
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        self.forward(&self.standardize(x))
    }

    pub fn n_params(&self) -> usize {
        self.experts.iter().map(|e| e.weights.len() + 1).sum::<usize>() + self.gate_logits.len()
    }

    /// Flat parameters: each expert's weights then bias, then the gate logits.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for e in &self.experts {
            p.extend(&e.weights);
            p.push(e.bias);
        }
        p.extend(&self.gate_logits);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params());
        let mut i = 0;
        for e in &mut self.experts {
            let k = e.weights.len();
            e.weights.copy_from_slice(&p[i..i + k]);
            e.bias = p[i + k];
            i += k + 1;
        }
        self.gate_logits.copy_from_slice(&p[i..]);
    }

    /// Mean log-loss over standardized rows.
    pub fn log_loss(&self, rows: &[Vec<f64>], labels: &[bool]) -> f64 {
        let total: f64 = rows
            .iter()
            .zip(labels)
            .map(|(z, &y)| {
                let p = self.forward(z);
                if y {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum();
        total / rows.len() as f64
    }

    /// Analytic gradient of [`Self::log_loss`] in [`Self::params`] order.
    pub fn gradient(&self, rows: &[Vec<f64>], labels: &[bool]) -> Vec<f64> {
        let gates = self.gate_weights();
        let n = rows.len() as f64;
        let mut grad = vec![0.0; self.n_params()];
        let gate_off = grad.len() - gates.len();
        for (z, &y) in rows.iter().zip(labels) {
            let probs: Vec<f64> = self.experts.iter().map(|e| sigmoid(e.logit(z))).collect();
            let p: f64 = gates.iter().zip(&probs).map(|(g, q)| g * q).sum();
            let dl_dp = if y { -1.0 / p } else { 1.0 / (1.0 - p) } / n;
            let mut i = 0;
            for (k, e) in self.experts.iter().enumerate() {
                let dz = dl_dp * gates[k] * probs[k] * (1.0 - probs[k]);
                for (j, &f) in e.features.iter().enumerate() {
                    grad[i + j] += dz * z[f];
                }
                grad[i + e.weights.len()] += dz;
                i += e.weights.len() + 1;
                grad[gate_off + k] += dl_dp * gates[k] * (probs[k] - p);
            }
        }
        grad
    }
}

/// Feature groups of the default schema, in expert order.
pub fn default_groups() -> Vec<Vec<usize>> {
    vec![
        CONTENT_FEATURES.to_vec(),
        METADATA_FEATURES.to_vec(),
        TEMPORAL_FEATURES.to_vec(),
    ]
}

/// Full-batch gradient descent on log-loss over experts and gate jointly.
///
/// Returns the model and the per-epoch training loss (before each update, plus the
/// final loss).
pub fn fit_mixture(data: &TrainingSet, groups: &[Vec<usize>], params: MixtureParams) -> Result<(MixtureModel, Vec<f64>)> {
    data.check_two_classes()?;
    let d = data.dim();
    let mut model = MixtureModel::init(d, groups, params.seed);
    let n = data.len() as f64;
    for f in 0..d {
        let m = data.rows.iter().map(|r| r[f]).sum::<f64>() / n;
        let v = data.rows.iter().map(|r| (r[f] - m).powi(2)).sum::<f64>() / n;
        model.means[f] = m;
        model.stds[f] = if v > 1e-24 { v.sqrt() } else { 1.0 };
    }
    let rows: Vec<Vec<f64>> = data.rows.iter().map(|r| model.standardize(r)).collect();
    let mut history = Vec::with_capacity(params.epochs + 1);
    let mut p = model.params();
    for epoch in 0..=params.epochs {
        let loss = model.log_loss(&rows, &data.labels);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        history.push(loss);
        if epoch == params.epochs {
            break;
        }
        let g = model.gradient(&rows, &data.labels);
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi -= params.learning_rate * gi;
        }
        model.set_params(&p);
    }
    Ok((model, history))
}

pub fn train_mixture_of_experts(data: &TrainingSet, params: MixtureParams) -> Result<DetectorModel> {
    let (model, _) = fit_mixture(data, &default_groups(), params)?;
    Ok(DetectorModel {
        format_version: MODEL_FORMAT_VERSION,
        feature_schema: data.schema.clone(),
        fingerprint: Fingerprint {
            seed: params.seed,
            data_digest: data.digest(),
        },
        body: ModelBody::MixtureOfExperts(model),
    })
}

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    BaggedTrees,
    MixtureOfExperts,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub seed: u64,
    pub data_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelBody {
    BaggedTrees(Forest),
    MixtureOfExperts(MixtureModel),
    External(PredictionSet),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub format_version: u32,
    pub feature_schema: Vec<String>,
    pub fingerprint: Fingerprint,
    pub body: ModelBody,
}

impl DetectorModel {
    pub fn kind(&self) -> DetectorKind {
        match self.body {
            ModelBody::BaggedTrees(_) => DetectorKind::BaggedTrees,
            ModelBody::MixtureOfExperts(_) => DetectorKind::MixtureOfExperts,
            ModelBody::External(_) => DetectorKind::External,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(self).map_err(|e| Error::Serde(e.to_string()))?;
        data::write_atomic(path, &json)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
        let m: DetectorModel = serde_json::from_slice(&raw).map_err(|e| Error::Serde(e.to_string()))?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Serde(format!(
                "model format {} is not supported (expected {MODEL_FORMAT_VERSION})",
                m.format_version
            )));
        }
        Ok(m)
    }

    /// Scores every feature vector in `features`.
    pub fn predict_all<'a>(
        &self,
        source: &str,
        features: impl IntoIterator<Item = &'a FeatureVector>,
    ) -> Result<PredictionSet> {
        let mut set = PredictionSet::new(source);
        for fv in features {
            set.scores.insert(fv.account.clone(), predict(self, fv)?);
        }
        Ok(set)
    }
}

/// Bot probability for one account. External models look the account up by id.
pub fn predict(model: &DetectorModel, fv: &FeatureVector) -> Result<f64> {
    if let ModelBody::External(set) = &model.body {
        return set.score(&fv.account).ok_or_else(|| Error::UnknownAccount(fv.account.clone()));
    }
    if fv.schema != model.feature_schema {
        return Err(Error::SchemaMismatch {
            expected: model.feature_schema.clone(),
            found: fv.schema.clone(),
        });
    }
    Ok(match &model.body {
        ModelBody::BaggedTrees(f) => f.probability(&fv.values),
        ModelBody::MixtureOfExperts(m) => m.probability(&fv.values),
        ModelBody::External(_) => unreachable!(),
    })
}

/// Wraps the `source_name` rows of a `source,account,probability` file as a model.
pub fn load_external_predictions(path: &Path, source_name: &str) -> Result<DetectorModel> {
    let mut sets = data::read_predictions(path)?;
    let set = sets.remove(source_name).ok_or_else(|| {
        Error::invalid(format!(
            "source `{source_name}` not found in {} (has {:?})",
            path.display(),
            sets.keys().collect::<Vec<_>>()
        ))
    })?;
    Ok(external_model(set))
}

pub fn external_model(set: PredictionSet) -> DetectorModel {
    DetectorModel {
        format_version: MODEL_FORMAT_VERSION,
        feature_schema: Vec::new(),
        fingerprint: Fingerprint {
            seed: 0,
            data_digest: String::new(),
        },
        body: ModelBody::External(set),
    }
}

/// A detector family plus its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorSpec {
    BaggedTrees(TreeParams),
    MixtureOfExperts(MixtureParams),
}

impl DetectorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DetectorSpec::BaggedTrees(_) => "trees",
            DetectorSpec::MixtureOfExperts(_) => "moe",
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        match self {
            DetectorSpec::BaggedTrees(p) => DetectorSpec::BaggedTrees(TreeParams { seed, ..p }),
            DetectorSpec::MixtureOfExperts(p) => DetectorSpec::MixtureOfExperts(MixtureParams { seed, ..p }),
        }
    }

    pub fn train(&self, data: &TrainingSet) -> Result<DetectorModel> {
        match *self {
            DetectorSpec::BaggedTrees(p) => train_bagged_trees(data, p),
            DetectorSpec::MixtureOfExperts(p) => train_mixture_of_experts(data, p),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Account, Role, Status};

    fn post(ts: u64, spd: u64, actor: &str) -> InteractionEvent {
        InteractionEvent {
            timestamp: ts,
            day: (ts / spd) as u32 + 1,
            actor: actor.into(),
            action: Action::Post,
            target: None,
            polarity: Some(0.5),
            topic: Some(0),
        }
    }

    fn dataset(events: Vec<InteractionEvent>) -> Dataset {
        let acc = |id: &str| Account {
            id: id.into(),
            role: Role::Human,
            campaign: None,
            created_day: 0,
            status: Status::Active,
            sentiment: Default::default(),
            metadata: Default::default(),
        };
        Dataset {
            accounts: vec![acc("a"), acc("quiet"), acc("early")],
            events,
            reports: vec![],
            external_predictions: Default::default(),
            n_days: 5,
            steps_per_day: 10,
        }
    }

    #[test]
    fn posting_frequency_and_imputation() {
        let mut ev: Vec<InteractionEvent> = (0..10).map(|i| post(i * 5, 10, "a")).collect();
        ev.push(post(1, 10, "early"));
        ev.sort_by_key(|e| e.timestamp);
        let ds = dataset(ev);
        let f = extract_features(&ds, "a", 5).unwrap();
        assert_eq!(f.values[0], 2.0);
        assert_eq!(f.values[7], 5.0);
        let q = extract_features(&ds, "quiet", 5).unwrap();
        assert!(q.values.iter().all(|&v| v == 0.0));
        assert_eq!(
            extract_features(&ds, "early", 2).unwrap(),
            extract_features(&ds, "early", 5).unwrap()
        );
        assert!(extract_features(&ds, "nobody", 2).is_err());
    }

    fn toy(n: usize) -> TrainingSet {
        let mut t = TrainingSet::new(vec!["posts_per_day".into(), "noise".into()]);
        for i in 0..n {
            let bot = i % 2 == 0;
            t.accounts.push(format!("x{i}"));
            t.rows.push(vec![if bot { 10.0 } else { 1.0 } + (i as f64) * 0.01, (i * 7 % 5) as f64]);
            t.labels.push(bot);
        }
        t
    }

    /// Best single-threshold accuracy by exhaustive search.
    fn best_stump_accuracy(t: &TrainingSet) -> f64 {
        let mut best: f64 = 0.0;
        for f in 0..t.dim() {
            let mut cuts: Vec<f64> = t.rows.iter().map(|r| r[f]).collect();
            cuts.push(f64::NEG_INFINITY);
            for &c in &cuts {
                for flip in [false, true] {
                    let ok = t
                        .rows
                        .iter()
                        .zip(&t.labels)
                        .filter(|(r, &y)| ((r[f] > c) ^ flip) == y)
                        .count();
                    best = best.max(ok as f64 / t.len() as f64);
                }
            }
        }
        best
    }

    #[test]
    fn trees_fit_separable_data() {
        let t = toy(20);
        assert_eq!(best_stump_accuracy(&t), 1.0);
        let m = train_bagged_trees(&t, TreeParams { seed: 3, ..Default::default() }).unwrap();
        let schema = t.schema.clone();
        let acc = t
            .rows
            .iter()
            .zip(&t.labels)
            .filter(|(r, &y)| {
                let fv = FeatureVector {
                    account: String::new(),
                    schema: schema.clone(),
                    values: r.to_vec(),
                };
                (predict(&m, &fv).unwrap() >= 0.5) == y
            })
            .count();
        assert_eq!(acc, 20);
        let m2 = train_bagged_trees(&t, TreeParams { seed: 3, ..Default::default() }).unwrap();
        assert_eq!(m, m2);
    }

    #[test]
    fn single_class_rejected() {
        let mut t = toy(10);
        t.labels.iter_mut().for_each(|y| *y = true);
        assert!(matches!(train_bagged_trees(&t, TreeParams::default()), Err(Error::SingleClass)));
        assert!(matches!(
            train_mixture_of_experts(&t, MixtureParams::default()),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn vote_fraction() {
        let trees = (0..10)
            .map(|i| Tree {
                nodes: vec![Node::Leaf { bot: i < 7 }],
            })
            .collect();
        let f = Forest {
            params: TreeParams::default(),
            trees,
        };
        assert!((f.probability(&[0.0]) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn schema_mismatch_rejected() {
        let t = toy(20);
        let m = train_bagged_trees(&t, TreeParams::default()).unwrap();
        let fv = FeatureVector {
            account: "x".into(),
            schema: vec!["noise".into(), "posts_per_day".into()],
            values: vec![0.0, 10.0],
        };
        assert!(matches!(predict(&m, &fv), Err(Error::SchemaMismatch { .. })));
    }

    #[test]
    fn zero_epochs_gives_uniform_gate() {
        let data = TrainingSet {
            schema: default_schema(),
            accounts: (0..8).map(|i| i.to_string()).collect(),
            rows: (0..8).map(|i| vec![i as f64; 10]).collect(),
            labels: (0..8).map(|i| i % 2 == 0).collect(),
        };
        let (m, hist) = fit_mixture(
            &data,
            &default_groups(),
            MixtureParams {
                epochs: 0,
                ..Default::default()
            },
        )
        .unwrap();
        for g in m.gate_weights() {
            assert!((g - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(hist.len(), 1);
    }

    #[test]
    fn external_passthrough() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.csv");
        std::fs::write(&p, "source,account,probability\nllm,a,1\nllm,b,0\nllm,c,0.25\n").unwrap();
        let m = load_external_predictions(&p, "llm").unwrap();
        assert_eq!(m.kind(), DetectorKind::External);
        let q = |a: &str| {
            predict(
                &m,
                &FeatureVector {
                    account: a.into(),
                    schema: vec![],
                    values: vec![],
                },
            )
        };
        assert_eq!(q("a").unwrap(), 1.0);
        assert_eq!(q("b").unwrap(), 0.0);
        assert_eq!(q("c").unwrap(), 0.25);
        assert!(q("zz").is_err());
        std::fs::write(&p, "source,account,probability\nllm,a,1.2\n").unwrap();
        let err = load_external_predictions(&p, "llm").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn model_json_roundtrip() {
        let t = toy(20);
        let m = train_bagged_trees(&t, TreeParams { n_trees: 5, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        assert_eq!(DetectorModel::load(&p).unwrap(), m);
    }
}
