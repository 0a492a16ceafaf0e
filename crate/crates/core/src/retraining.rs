//! Day-by-day incremental retraining.
//!
//! A baseline detector is trained once on a base corpus. On every day `d` the
//! deployed model is retrained on the base corpus plus bot instances selected from
//! days before `d`, and both models are scored on the accounts active on day `d`.
//! Selections feed on the deployed models' own earlier predictions, so days run in
//! order.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::aggregation::{self, HumanEnsembleConfig};
use crate::data::{AccountId, Dataset, Flags, Labels, Report, Universe};
use crate::detectors::{self, DetectorModel, DetectorSpec, FeatureVector, TrainingSet};
use crate::error::{Error, Result};
use crate::metrics::{self, ClassMetrics};

pub const DEFAULT_SELF_CONFIDENCE: f64 = 0.7;
/// Score at which an evaluation-slice account counts as flagged.
pub const EVAL_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SelectionStrategy {
    /// Prior bot flags that were correct.
    GroundTruth,
    /// Prior bot scores at or above the confidence, taken as bots.
    SelfSupervised { confidence: f64 },
    /// Accounts flagged by quality-weighted human reports.
    HumanSupervised { config: HumanEnsembleConfig },
}

impl SelectionStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            SelectionStrategy::GroundTruth => "ground_truth",
            SelectionStrategy::SelfSupervised { .. } => "self",
            SelectionStrategy::HumanSupervised { .. } => "human",
        }
    }
}

impl fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainPlan {
    pub detector: DetectorSpec,
    /// Stands in for the benchmark data the detector was originally trained on.
    pub base_corpus: TrainingSet,
    pub strategy: SelectionStrategy,
    /// Days `1..=days` are evaluated.
    pub days: u32,
    pub seed: u64,
}

impl RetrainPlan {
    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        if self.days == 0 || self.days > ds.n_days {
            return Err(Error::invalid(format!("days {} outside 1..={}", self.days, ds.n_days)));
        }
        if let SelectionStrategy::SelfSupervised { confidence } = self.strategy {
            if !(confidence > 0.5 && confidence <= 1.0) {
                return Err(Error::invalid(format!("self-supervision confidence {confidence} outside (0.5, 1]")));
            }
        }
        let bots = self.base_corpus.labels.iter().filter(|&&b| b).count();
        if bots == 0 || bots == self.base_corpus.len() {
            return Err(Error::SingleClass);
        }
        Ok(())
    }
}

/// One deployed model's bot probabilities on one day's evaluation slice.
pub type DayScores = BTreeMap<AccountId, f64>;

/// Correct prior bot flags, labelled bot.
pub fn select_ground_truth(prior: &[DayScores], labels: &Labels, threshold: f64) -> Flags {
    prior
        .iter()
        .flat_map(|day| day.iter())
        .filter(|(a, &p)| p >= threshold && labels.get(*a).is_some_and(|r| r.is_bot()))
        .map(|(a, _)| a.clone())
        .collect()
}

/// Accounts whose highest prior bot probability reaches `confidence`.
pub fn select_self_supervised(prior: &[DayScores], confidence: f64) -> Result<Flags> {
    if !(confidence > 0.5 && confidence <= 1.0) {
        return Err(Error::invalid(format!("confidence {confidence} outside (0.5, 1]")));
    }
    Ok(prior
        .iter()
        .flat_map(|day| day.iter())
        .filter(|(_, &p)| p >= confidence)
        .map(|(a, _)| a.clone())
        .collect())
}

/// Quality-weighted flags over the reports filed up to and including `last_day`.
pub fn select_human_supervised(reports: &[Report], last_day: u32, config: &HumanEnsembleConfig) -> Result<Flags> {
    let prior: Vec<Report> = reports.iter().filter(|r| r.day <= last_day).cloned().collect();
    Ok(aggregation::quality_weighted(&prior, config)?.flags)
}

/// Accounts that act or are acted upon on `day`.
pub fn evaluation_slice(ds: &Dataset, day: u32) -> Universe {
    let mut out = Universe::new();
    for e in ds.events.iter().filter(|e| e.day == day) {
        out.insert(e.actor.clone());
        if let Some(t) = &e.target {
            out.insert(t.clone());
        }
    }
    out
}

/// `100 (retrained - baseline) / baseline`; 0 when both are 0, `None` when only the
/// baseline is 0.
pub fn relative_improvement(baseline: f64, retrained: f64) -> Option<f64> {
    if baseline == 0.0 {
        (retrained == 0.0).then_some(0.0)
    } else {
        Some(100.0 * (retrained - baseline) / baseline)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainDay {
    pub day: u32,
    pub slice_size: usize,
    /// Instances added to the base corpus for this day's model.
    pub selected: usize,
    pub baseline: ClassMetrics,
    pub retrained: ClassMetrics,
    /// Percent; `None` when undefined.
    pub rel_improvement: Option<f64>,
}

impl RetrainDay {
    pub fn delta_f1(&self) -> f64 {
        self.retrained.f1 - self.baseline.f1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainReport {
    pub detector: String,
    pub strategy: String,
    pub days: Vec<RetrainDay>,
}

impl RetrainReport {
    /// Mean absolute F1 change over the days after the first.
    pub fn mean_delta_f1_after_day1(&self) -> f64 {
        let later: Vec<f64> = self.days.iter().filter(|d| d.day > 1).map(RetrainDay::delta_f1).collect();
        if later.is_empty() {
            0.0
        } else {
            later.iter().sum::<f64>() / later.len() as f64
        }
    }
}

struct Walk {
    /// Per day `d`: the selection used for day `d`'s model.
    selections: Vec<Flags>,
    days: Vec<RetrainDay>,
}

fn score_slice(model: &DetectorModel, features: &BTreeMap<AccountId, FeatureVector>, slice: &Universe) -> Result<DayScores> {
    slice.iter().map(|a| Ok((a.clone(), detectors::predict(model, &features[a])?))).collect()
}

fn flags_at(scores: &DayScores, t: f64) -> Flags {
    scores.iter().filter(|(_, &p)| p >= t).map(|(a, _)| a.clone()).collect()
}

/// Runs days `1..=last` and records every selection. Selecting for day `d` reads
/// events and reports from days `< d` only; evaluating it reads day `d` as well.
/// With `select_only_last` the last day stops after its selection.
fn walk(plan: &RetrainPlan, ds: &Dataset, last: u32, select_only_last: bool) -> Result<Walk> {
    plan.validate(ds)?;
    let labels = ds.labels();
    let spec = plan.detector.with_seed(plan.seed);
    let baseline = spec.train(&plan.base_corpus)?;
    let mut prior: Vec<DayScores> = Vec::new();
    let mut out = Walk {
        selections: Vec::new(),
        days: Vec::new(),
    };
    for d in 1..=last {
        let selected = if d == 1 {
            Flags::new()
        } else {
            match &plan.strategy {
                SelectionStrategy::GroundTruth => select_ground_truth(&prior, &labels, EVAL_THRESHOLD),
                SelectionStrategy::SelfSupervised { confidence } => select_self_supervised(&prior, *confidence)?,
                SelectionStrategy::HumanSupervised { config } => select_human_supervised(&ds.reports, d - 1, config)?,
            }
        };
        if d == last && select_only_last {
            out.selections.push(selected);
            break;
        }
        let model = if selected.is_empty() {
            baseline.clone()
        } else {
            let past = detectors::extract_all(ds, d - 1);
            let mut data = plan.base_corpus.clone();
            for a in &selected {
                let fv = past.get(a).ok_or_else(|| Error::UnknownAccount(a.clone()))?;
                data.push(fv, true)?;
            }
            spec.train(&data)?
        };
        let slice = evaluation_slice(ds, d);
        if slice.is_empty() {
            return Err(Error::EmptySlice(d));
        }
        let now = detectors::extract_all(ds, d);
        let base_scores = score_slice(&baseline, &now, &slice)?;
        let new_scores = score_slice(&model, &now, &slice)?;
        let b = metrics::evaluate_flags(&flags_at(&base_scores, EVAL_THRESHOLD), &labels, &slice)?;
        let r = metrics::evaluate_flags(&flags_at(&new_scores, EVAL_THRESHOLD), &labels, &slice)?;
        out.days.push(RetrainDay {
            day: d,
            slice_size: slice.len(),
            selected: selected.len(),
            baseline: b,
            retrained: r,
            rel_improvement: relative_improvement(b.f1, r.f1),
        });
        out.selections.push(selected);
        prior.push(new_scores);
    }
    Ok(out)
}

/// Baseline versus retrained metrics for every day of the plan.
pub fn run_incremental(plan: &RetrainPlan, ds: &Dataset) -> Result<RetrainReport> {
    let w = walk(plan, ds, plan.days, false)?;
    Ok(RetrainReport {
        detector: plan.detector.name().to_string(),
        strategy: plan.strategy.name().to_string(),
        days: w.days,
    })
}

/// The instances selected for day `day`'s model. Needs only days before `day`.
pub fn selection_for_day(plan: &RetrainPlan, ds: &Dataset, day: u32) -> Result<Flags> {
    if day == 0 || day > plan.days {
        return Err(Error::invalid(format!("day {day} outside 1..={}", plan.days)));
    }
    Ok(walk(plan, ds, day, true)?.selections.pop().unwrap_or_default())
}

/// Runs independent plans, in parallel when the `parallel` feature is on.
pub fn run_many(plans: &[RetrainPlan], ds: &Dataset) -> Result<Vec<RetrainReport>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        plans.par_iter().map(|p| run_incremental(p, ds)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        plans.iter().map(|p| run_incremental(p, ds)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Role;

    fn day(pairs: &[(&str, f64)]) -> DayScores {
        pairs.iter().map(|(a, p)| (a.to_string(), *p)).collect()
    }

    #[test]
    fn ground_truth_keeps_correct_flags() {
        let labels: Labels = [("a".to_string(), Role::Bot), ("b".to_string(), Role::Human)].into();
        let got = select_ground_truth(&[day(&[("a", 0.9), ("b", 0.8)])], &labels, 0.5);
        assert_eq!(got, Flags::from(["a".to_string()]));
        assert!(select_ground_truth(&[], &labels, 0.5).is_empty());
    }

    #[test]
    fn self_supervised_threshold() {
        let prior = [day(&[("a", 0.9), ("b", 0.65)])];
        assert_eq!(select_self_supervised(&prior, 0.7).unwrap(), Flags::from(["a".to_string()]));
        assert!(select_self_supervised(&prior, 1.0).unwrap().is_empty());
        assert!(select_self_supervised(&prior, 0.5).is_err());
    }

    #[test]
    fn human_supervision_uses_prior_days() {
        let r = |d: u32, rep: &str| Report {
            day: d,
            reporter: rep.into(),
            subject: "a".into(),
        };
        let cfg = HumanEnsembleConfig::new(0.533, [("r1".to_string(), 0.3), ("r2".to_string(), 0.3)].into()).unwrap();
        let reports = [r(1, "r1"), r(2, "r2")];
        assert!(select_human_supervised(&reports, 1, &cfg).unwrap().is_empty());
        assert_eq!(select_human_supervised(&reports, 2, &cfg).unwrap(), Flags::from(["a".to_string()]));
        assert!(select_human_supervised(&reports, 0, &cfg).unwrap().is_empty());
    }

    #[test]
    fn improvement_arithmetic() {
        assert!((relative_improvement(0.5, 0.6).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(relative_improvement(0.0, 0.0), Some(0.0));
        assert_eq!(relative_improvement(0.0, 0.3), None);
    }
}
