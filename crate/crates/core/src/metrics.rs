//! Evaluation quantities: confusion counts and bot-class scores, inter-rater agreement,
//! report-frequency conditionals, engagement/exposure ratios and temporal evaluation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::{Action, AccountId, Flags, InteractionEvent, Labels, Report, Role, Universe};
use crate::error::{Error, Result};

/// Confusion counts with bot as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn merge(self, other: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            tn: self.tn + other.tn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActivityRatios {
    pub ber_like: Option<f64>,
    pub ber_follow: Option<f64>,
    pub bxr_like: Option<f64>,
    pub bxr_follow: Option<f64>,
}

/// Tabulates `flags` against `labels` over `universe`.
pub fn confusion(flags: &Flags, labels: &Labels, universe: &Universe) -> Result<ConfusionCounts> {
    if let Some(a) = flags.iter().find(|a| !universe.contains(*a)) {
        return Err(Error::invalid(format!("flagged account `{a}` is outside the universe")));
    }
    let mut c = ConfusionCounts::default();
    for a in universe {
        let bot = labels
            .get(a)
            .ok_or_else(|| Error::UnknownAccount(a.clone()))?
            .is_bot();
        match (flags.contains(a), bot) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Bot-class precision/recall/F1 and overall accuracy. Zero denominators give 0.
pub fn bot_class_metrics(c: ConfusionCounts) -> ClassMetrics {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    ClassMetrics {
        precision,
        recall,
        f1,
        accuracy: ratio(c.tp + c.tn, c.total()),
    }
}

/// Convenience: confusion followed by [`bot_class_metrics`].
pub fn evaluate_flags(flags: &Flags, labels: &Labels, universe: &Universe) -> Result<ClassMetrics> {
    Ok(bot_class_metrics(confusion(flags, labels, universe)?))
}

fn check_subset(flags: &Flags, universe: &Universe) -> Result<()> {
    match flags.iter().find(|a| !universe.contains(*a)) {
        Some(a) => Err(Error::invalid(format!("flagged account `{a}` is outside the universe"))),
        None => Ok(()),
    }
}

/// Fraction of `universe` on which the two binary classifications coincide.
pub fn agreement_rate(a: &Flags, b: &Flags, universe: &Universe) -> Result<f64> {
    check_subset(a, universe)?;
    check_subset(b, universe)?;
    if universe.is_empty() {
        return Err(Error::invalid("empty universe"));
    }
    let disagree = a.symmetric_difference(b).count();
    Ok(1.0 - disagree as f64 / universe.len() as f64)
}

/// Cohen's kappa of two binary raters. Defined as 1 when chance agreement is 1.
pub fn cohen_kappa(a: &Flags, b: &Flags, universe: &Universe) -> Result<f64> {
    let p_o = agreement_rate(a, b, universe)?;
    let n = universe.len() as f64;
    let pa = a.len() as f64 / n;
    let pb = b.len() as f64 / n;
    let p_e = pa * pb + (1.0 - pa) * (1.0 - pb);
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(1.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// How `k` is counted per account in [`conditional_bot_probability`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportCounting {
    /// Distinct reporters, so repeat reports on later days count once.
    #[default]
    DistinctReporters,
    /// Every (reporter, day) report event.
    RawReports,
}

/// `R(a)`: distinct reporters of every reported account.
pub fn reporter_sets<'a>(reports: impl IntoIterator<Item = &'a Report>) -> BTreeMap<AccountId, BTreeSet<AccountId>> {
    let mut out: BTreeMap<AccountId, BTreeSet<AccountId>> = BTreeMap::new();
    for r in reports {
        out.entry(r.subject.clone()).or_default().insert(r.reporter.clone());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportBucket {
    pub n_accounts: usize,
    pub n_bots: usize,
    pub p_bot: f64,
}

/// `P(bot | k)` for every report count `k` present in the universe, including 0.
pub fn conditional_bot_probability(
    reports: &[Report],
    labels: &Labels,
    universe: &Universe,
    counting: ReportCounting,
) -> Result<BTreeMap<usize, ReportBucket>> {
    let mut counts: BTreeMap<&str, usize> = universe.iter().map(|a| (a.as_str(), 0)).collect();
    match counting {
        ReportCounting::DistinctReporters => {
            for (a, rs) in reporter_sets(reports) {
                *counts
                    .get_mut(a.as_str())
                    .ok_or_else(|| Error::UnknownAccount(a.clone()))? = rs.len();
            }
        }
        ReportCounting::RawReports => {
            for r in reports {
                *counts
                    .get_mut(r.subject.as_str())
                    .ok_or_else(|| Error::UnknownAccount(r.subject.clone()))? += 1;
            }
        }
    }
    let mut buckets: BTreeMap<usize, ReportBucket> = BTreeMap::new();
    for (a, k) in counts {
        let bot = labels.get(a).ok_or_else(|| Error::UnknownAccount(a.to_string()))?.is_bot();
        let b = buckets.entry(k).or_insert(ReportBucket {
            n_accounts: 0,
            n_bots: 0,
            p_bot: 0.0,
        });
        b.n_accounts += 1;
        b.n_bots += usize::from(bot);
    }
    for b in buckets.values_mut() {
        b.p_bot = b.n_bots as f64 / b.n_accounts as f64;
    }
    Ok(buckets)
}

/// Bot engagement (outgoing) and exposure (incoming) ratios for one human, in percent.
pub fn activity_ratios(events: &[InteractionEvent], labels: &Labels, user: &str) -> Result<ActivityRatios> {
    match labels.get(user) {
        None => return Err(Error::UnknownAccount(user.to_string())),
        Some(Role::Bot) => return Err(Error::invalid(format!("`{user}` is not a human account"))),
        Some(Role::Human) => {}
    }
    let is_bot = |id: &str| labels.get(id).is_some_and(|r| r.is_bot());
    // [like, follow] x [to/from bots, total]
    let mut out_counts = [[0usize; 2]; 2];
    let mut in_counts = [[0usize; 2]; 2];
    for e in events {
        let slot = match e.action {
            Action::Like => 0,
            Action::Follow => 1,
            _ => continue,
        };
        let Some(target) = e.target.as_deref() else { continue };
        if e.actor == user {
            out_counts[slot][1] += 1;
            out_counts[slot][0] += usize::from(is_bot(target));
        }
        if target == user {
            in_counts[slot][1] += 1;
            in_counts[slot][0] += usize::from(is_bot(&e.actor));
        }
    }
    let pct = |c: [usize; 2]| (c[1] > 0).then(|| 100.0 * c[0] as f64 / c[1] as f64);
    Ok(ActivityRatios {
        ber_like: pct(out_counts[0]),
        ber_follow: pct(out_counts[1]),
        bxr_like: pct(in_counts[0]),
        bxr_follow: pct(in_counts[1]),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalMode {
    /// Flags from reports filed on that day only.
    DaySpecific,
    /// Flags from every report filed up to and including that day.
    Cumulative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayMetrics {
    pub day: u32,
    pub n_flagged: usize,
    pub metrics: ClassMetrics,
}

/// Per-day bot-class metrics of the "reported at least once" classifier.
pub fn temporal_evaluation(
    reports: &[Report],
    labels: &Labels,
    universe: &Universe,
    mode: TemporalMode,
    n_days: u32,
) -> Result<Vec<DayMetrics>> {
    if n_days == 0 {
        return Err(Error::invalid("n_days must be at least 1"));
    }
    (1..=n_days)
        .map(|day| {
            let flags: Flags = reports
                .iter()
                .filter(|r| match mode {
                    TemporalMode::DaySpecific => r.day == day,
                    TemporalMode::Cumulative => r.day <= day,
                })
                .map(|r| r.subject.clone())
                .collect();
            Ok(DayMetrics {
                day,
                n_flagged: flags.len(),
                metrics: evaluate_flags(&flags, labels, universe)?,
            })
        })
        .collect()
}

/// F1 of every reporter, treating the accounts it ever reported as its bot flags.
pub fn reporter_f1_table(reports: &[Report], labels: &Labels, universe: &Universe) -> Result<BTreeMap<AccountId, f64>> {
    let mut per: BTreeMap<&str, Flags> = BTreeMap::new();
    for r in reports {
        per.entry(&r.reporter).or_default().insert(r.subject.clone());
    }
    per.into_iter()
        .map(|(rep, flags)| {
            let flags: Flags = flags.intersection(universe).cloned().collect();
            Ok((rep.to_string(), evaluate_flags(&flags, labels, universe)?.f1))
        })
        .collect()
}

/// How a group's F1 is summarised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupF1 {
    /// Mean and standard deviation of per-reporter F1.
    #[default]
    PerReporterMean,
    /// F1 of the summed confusion counts of all reporters in the group.
    Pooled,
}

/// Group F1 over `group` reporters as `(value, sd)`; `sd` is 0 for pooled.
pub fn group_f1(
    reports: &[Report],
    labels: &Labels,
    universe: &Universe,
    group: &BTreeSet<AccountId>,
    mode: GroupF1,
) -> Result<(f64, f64)> {
    let mine: Vec<Report> = reports.iter().filter(|r| group.contains(&r.reporter)).cloned().collect();
    match mode {
        GroupF1::PerReporterMean => {
            let table = reporter_f1_table(&mine, labels, universe)?;
            let vals: Vec<f64> = group.iter().map(|r| table.get(r).copied().unwrap_or(0.0)).collect();
            Ok(mean_sd(&vals))
        }
        GroupF1::Pooled => {
            let mut total = ConfusionCounts::default();
            for rep in group {
                let flags: Flags = mine
                    .iter()
                    .filter(|r| &r.reporter == rep && universe.contains(&r.subject))
                    .map(|r| r.subject.clone())
                    .collect();
                total = total.merge(confusion(&flags, labels, universe)?);
            }
            Ok((bot_class_metrics(total).f1, 0.0))
        }
    }
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}
