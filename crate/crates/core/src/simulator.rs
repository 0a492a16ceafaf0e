//! Agent-based replica of the experimental platform.
//!
//! Humans post, like, follow and read, absorbing consumed posts into their topic
//! sentiment by EWMA. Each bot campaign is driven by a tabular Q-learner that picks a
//! posting posture and a reserve-activation level; a detector scans every account at
//! each scan boundary and suspends whatever it flags. Simulated reporters file daily
//! reports. A run yields a ground-truthed [`Dataset`] plus a trace for audits.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{day_of_step, Account, Action, Dataset, InteractionEvent, Report, Role, Status};
use crate::detectors::{self, DetectorModel, TrainingSet, TreeParams};
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

/// Active plus reserve accounts of every campaign.
pub const BOTS_PER_CAMPAIGN: usize = 20;
pub const DEFAULT_N_REPORTERS: usize = 86;
pub const TARGET_MEAN_REPORTER_F1: f64 = 0.533;
/// Upper end of the diligence bracket searched during pool calibration.
const MAX_DILIGENCE: f64 = 4.0;

pub const N_STATES: usize = 27;
pub const N_ACTIONS: usize = 8;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Per-step action probabilities of an active human. `post + like + follow + idle`
/// must be 1; an idle step reads one feed post with probability `read_on_idle`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorRates {
    pub post: f64,
    pub like: f64,
    pub follow: f64,
    pub idle: f64,
    pub read_on_idle: f64,
}

impl Default for BehaviorRates {
    fn default() -> Self {
        Self {
            post: 0.04,
            like: 0.06,
            follow: 0.01,
            idle: 0.89,
            read_on_idle: 0.3,
        }
    }
}

impl BehaviorRates {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("post", self.post),
            ("like", self.like),
            ("follow", self.follow),
            ("idle", self.idle),
            ("read_on_idle", self.read_on_idle),
        ] {
            check_prob(name, v)?;
        }
        let s = self.post + self.like + self.follow + self.idle;
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("behavior rates sum to {s}, not 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Rewards {
    pub activation: f64,
    pub infection: f64,
    pub termination: f64,
    pub suspension_penalty: f64,
}

impl Default for Rewards {
    fn default() -> Self {
        Self {
            activation: 1.0,
            infection: 1.0,
            termination: 5.0,
            suspension_penalty: -5.0,
        }
    }
}

/// How often an active bot acts; the rest of its steps are idle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Posture {
    Aggressive,
    Moderate,
    Stealthy,
    Silent,
}

impl Posture {
    pub const ALL: [Posture; 4] = [Posture::Aggressive, Posture::Moderate, Posture::Stealthy, Posture::Silent];

    pub fn act_prob(self) -> f64 {
        match self {
            Posture::Aggressive => 0.6,
            Posture::Moderate => 0.3,
            Posture::Stealthy => 0.12,
            Posture::Silent => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    QLearning,
    /// Non-adaptive: every bot keeps one posture and reserves refill to full strength.
    Fixed { posture: Posture },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub policy: PolicyKind,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub discount: f64,
    pub decision_period_steps: u32,
    /// Full training episodes run before the recorded one, sharing one Q-table.
    pub pretrain_episodes: u32,
    /// Of a bot's non-idle actions: share of posts and likes (follows take the rest).
    pub post_share: f64,
    pub like_share: f64,
    /// Lower bound of a bot post's polarity magnitude toward the campaign target.
    pub polarity_min: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            policy: PolicyKind::QLearning,
            epsilon: 0.1,
            learning_rate: 0.2,
            discount: 0.9,
            decision_period_steps: 12,
            pretrain_episodes: 3,
            post_share: 0.45,
            like_share: 0.3,
            polarity_min: 0.5,
        }
    }
}

/// One simulated reporter's skill.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReporterSpec {
    pub report_rate: f64,
    pub tpr: f64,
    pub fpr: f64,
    /// Probability of taking part on a given day.
    pub participation: f64,
    pub exposure_only: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolPreset {
    /// Heterogeneous skills scaled so the expected mean reporter F1 hits the target.
    Calibrated,
    /// The calibrated pool with every false-positive rate set to 0.
    PerfectPrecision,
    /// TPR 1, FPR 0, rate 1, daily participation.
    Perfect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReporterPoolConfig {
    pub n_reporters: usize,
    pub preset: PoolPreset,
    pub target_mean_f1: f64,
    /// Share of reporters that take part every day; the rest take part sporadically.
    pub daily_fraction: f64,
    pub exposure_only: bool,
    /// A calibrated reporter's fpr is `tpr x max_fp_ratio x (1 - aptitude)`.
    pub max_fp_ratio: f64,
    /// Explicit reporters, overriding `preset` (the first `n` humans report).
    pub custom: Option<Vec<ReporterSpec>>,
}

impl Default for ReporterPoolConfig {
    fn default() -> Self {
        Self {
            n_reporters: DEFAULT_N_REPORTERS,
            preset: PoolPreset::Calibrated,
            target_mean_f1: TARGET_MEAN_REPORTER_F1,
            daily_fraction: 0.5,
            exposure_only: false,
            max_fp_ratio: 0.04,
            custom: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_humans: usize,
    pub n_campaigns: usize,
    pub active_bots_per_campaign: usize,
    pub reserve_bots_per_campaign: usize,
    pub n_days: u32,
    pub steps_per_day: u32,
    pub mean_initial_degree: f64,
    pub ewma_alpha: f64,
    pub rewards: Rewards,
    pub infection_delta: f64,
    pub conversion_threshold: f64,
    pub scans_enabled: bool,
    /// Defaults to `steps_per_day`.
    pub scan_period_steps: Option<u32>,
    pub scan_threshold: f64,
    pub scan_trees: usize,
    pub human_rates: BehaviorRates,
    /// Each human's post/like/follow rates are scaled by a factor drawn from
    /// `[1 - spread, 1 + spread]`.
    pub human_activity_spread: f64,
    /// Probability that a feed read samples the global recent stream instead of followees.
    pub explore_prob: f64,
    pub feed_window_steps: u32,
    pub follow_back_prob: f64,
    pub allow_bot_follow_bot: bool,
    pub bot_follow_bot_prob: f64,
    pub agent: AgentConfig,
    pub reporters: ReporterPoolConfig,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_humans: 225,
            n_campaigns: 4,
            active_bots_per_campaign: 5,
            reserve_bots_per_campaign: 15,
            n_days: 5,
            steps_per_day: 48,
            mean_initial_degree: 4.5,
            ewma_alpha: 0.9,
            rewards: Rewards::default(),
            infection_delta: 0.1,
            conversion_threshold: 0.8,
            scans_enabled: true,
            scan_period_steps: None,
            scan_threshold: 0.5,
            scan_trees: 50,
            human_rates: BehaviorRates::default(),
            human_activity_spread: 0.75,
            explore_prob: 0.3,
            feed_window_steps: 48,
            follow_back_prob: 0.2,
            allow_bot_follow_bot: true,
            bot_follow_bot_prob: 0.1,
            agent: AgentConfig::default(),
            reporters: ReporterPoolConfig::default(),
            seed: 0,
        }
    }
}

fn check_prob(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} = {v} is not a probability")))
    }
}

impl SimConfig {
    pub fn n_bots(&self) -> usize {
        self.n_campaigns * BOTS_PER_CAMPAIGN
    }

    pub fn n_accounts(&self) -> usize {
        self.n_humans + self.n_bots()
    }

    pub fn scan_period(&self) -> u32 {
        self.scan_period_steps.unwrap_or(self.steps_per_day)
    }

    pub fn total_steps(&self) -> u64 {
        u64::from(self.n_days) * u64::from(self.steps_per_day)
    }

    pub fn validate(&self) -> Result<()> {
        if self.active_bots_per_campaign + self.reserve_bots_per_campaign != BOTS_PER_CAMPAIGN {
            return Err(Error::invalid(format!(
                "active + reserve bots per campaign must be {BOTS_PER_CAMPAIGN}, got {} + {}",
                self.active_bots_per_campaign, self.reserve_bots_per_campaign
            )));
        }
        if self.n_days == 0 || self.steps_per_day == 0 || self.scan_period() == 0 {
            return Err(Error::invalid("n_days, steps_per_day and the scan period must be positive"));
        }
        if self.n_humans == 0 {
            return Err(Error::invalid("at least one human is required"));
        }
        if !(3.0..=6.0).contains(&self.mean_initial_degree) {
            return Err(Error::invalid(format!(
                "mean_initial_degree {} outside [3, 6]",
                self.mean_initial_degree
            )));
        }
        if !(self.ewma_alpha > 0.0 && self.ewma_alpha < 1.0) {
            return Err(Error::invalid(format!("ewma_alpha {} outside (0, 1)", self.ewma_alpha)));
        }
        for (name, v) in [
            ("scan_threshold", self.scan_threshold),
            ("explore_prob", self.explore_prob),
            ("follow_back_prob", self.follow_back_prob),
            ("bot_follow_bot_prob", self.bot_follow_bot_prob),
            ("human_activity_spread", self.human_activity_spread),
            ("agent.epsilon", self.agent.epsilon),
            ("agent.learning_rate", self.agent.learning_rate),
            ("agent.discount", self.agent.discount),
            ("agent.post_share", self.agent.post_share),
            ("agent.like_share", self.agent.like_share),
            ("agent.polarity_min", self.agent.polarity_min),
            ("reporters.daily_fraction", self.reporters.daily_fraction),
            ("reporters.target_mean_f1", self.reporters.target_mean_f1),
        ] {
            check_prob(name, v)?;
        }
        if self.agent.post_share + self.agent.like_share > 1.0 {
            return Err(Error::invalid("agent post_share + like_share exceeds 1"));
        }
        if self.agent.decision_period_steps == 0 {
            return Err(Error::invalid("agent.decision_period_steps must be positive"));
        }
        self.human_rates.validate()?;
        let max_rate = (self.human_rates.post + self.human_rates.like + self.human_rates.follow)
            * (1.0 + self.human_activity_spread);
        if max_rate > 1.0 {
            return Err(Error::invalid("human rates scaled by the activity spread exceed 1"));
        }
        let n_rep = self.reporters.custom.as_ref().map_or(self.reporters.n_reporters, Vec::len);
        if n_rep > self.n_humans {
            return Err(Error::invalid(format!("{n_rep} reporters but only {} humans", self.n_humans)));
        }
        if let Some(custom) = &self.reporters.custom {
            for r in custom {
                check_prob("report_rate", r.report_rate)?;
                check_prob("tpr", r.tpr)?;
                check_prob("fpr", r.fpr)?;
                check_prob("participation", r.participation)?;
            }
        }
        check_prob("reporters.max_fp_ratio", self.reporters.max_fp_ratio)?;
        Ok(())
    }

    /// The pretraining profile: every bot active from the start, non-adaptive and
    /// aggressive, no scans or reports, and busier humans.
    pub fn benchmark_profile(&self) -> SimConfig {
        SimConfig {
            active_bots_per_campaign: BOTS_PER_CAMPAIGN,
            reserve_bots_per_campaign: 0,
            scans_enabled: false,
            human_rates: BehaviorRates {
                post: 0.05,
                like: 0.05,
                follow: 0.015,
                idle: 0.885,
                read_on_idle: 0.3,
            },
            agent: AgentConfig {
                policy: PolicyKind::Fixed {
                    posture: Posture::Aggressive,
                },
                pretrain_episodes: 0,
                ..self.agent
            },
            reporters: ReporterPoolConfig {
                n_reporters: 0,
                custom: None,
                ..self.reporters.clone()
            },
            ..self.clone()
        }
    }
}

// ---------------------------------------------------------------------------
// World state
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimAccount {
    pub id: String,
    pub role: Role,
    /// Zero-based campaign index.
    pub campaign: Option<usize>,
    pub status: Status,
    pub sentiment: Vec<f64>,
    /// Scales a human's post/like/follow rates.
    pub activity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub author: usize,
    pub polarity: f64,
    pub topic: usize,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignState {
    pub bots: Vec<usize>,
    pub target_topic: usize,
    /// +1 or -1.
    pub target_sign: f64,
    pub posture: Posture,
    pub replenish_level: usize,
    pub last_scan_suspensions: usize,
    pub posts_since_decision: u32,
    pub active_steps_since_decision: u32,
    pub pending_reward: f64,
    pub last_state: Option<usize>,
    pub last_action: Option<usize>,
    /// Humans following any bot of the campaign.
    pub human_follow_edges: u64,
}

/// One human absorbing one post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Consumption {
    pub step: u64,
    pub human: usize,
    pub post: usize,
    pub topic: usize,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReward {
    pub step: u64,
    pub campaign: usize,
    pub breakdown: RewardBreakdown,
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub new_human_followers: u64,
    pub infections: u64,
    pub terminations: u64,
    pub suspensions: u64,
}

impl RewardBreakdown {
    pub fn value(&self, r: &Rewards) -> f64 {
        r.activation * self.new_human_followers as f64
            + r.infection * self.infections as f64
            + r.termination * self.terminations as f64
            + r.suspension_penalty * self.suspensions as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub step: u64,
    pub suspended: Vec<usize>,
}

/// What the reporters could see on one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayRecord {
    pub day: u32,
    /// Suspended at the end of the day.
    pub suspended: Vec<bool>,
    /// Per reporter slot: accounts it interacted with or read that day.
    pub exposures: Vec<BTreeSet<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub step: u64,
    pub steps_per_day: u32,
    pub n_topics: usize,
    pub accounts: Vec<SimAccount>,
    pub humans: Vec<usize>,
    pub following: Vec<BTreeSet<usize>>,
    pub followers: Vec<BTreeSet<usize>>,
    pub posts: Vec<Post>,
    pub posts_by_author: Vec<Vec<usize>>,
    pub campaigns: Vec<CampaignState>,
    pub events: Vec<InteractionEvent>,
    /// Events emitted by initialization (the initial follow graph).
    pub init_events: usize,
    pub consumptions: Vec<Consumption>,
    /// Account index of each reporter slot.
    pub reporters: Vec<usize>,
    pub reporter_slot: Vec<Option<usize>>,
    pub exposures_today: Vec<BTreeSet<usize>>,
    pub days: Vec<DayRecord>,
    pub scans: Vec<ScanRecord>,
    pub step_rewards: Vec<StepReward>,
    pub initial_sentiment: Vec<Vec<f64>>,
    pub initial_out_degree: Vec<usize>,
}

impl WorldState {
    pub fn day(&self) -> u32 {
        day_of_step(self.step, self.steps_per_day)
    }

    pub fn n_bots(&self) -> usize {
        self.accounts.iter().filter(|a| a.role.is_bot()).count()
    }

    pub fn mean_initial_out_degree(&self) -> f64 {
        self.initial_out_degree.iter().sum::<usize>() as f64 / self.initial_out_degree.len().max(1) as f64
    }

    fn push_event(&mut self, actor: usize, action: Action, target: Option<usize>, polarity: Option<f64>, topic: Option<usize>) {
        let ev = InteractionEvent {
            timestamp: self.step,
            day: self.day(),
            actor: self.accounts[actor].id.clone(),
            action,
            target: target.map(|t| self.accounts[t].id.clone()),
            polarity,
            topic: topic.map(|t| t as u32),
        };
        self.events.push(ev);
    }

    fn expose(&mut self, reporter: usize, other: usize) {
        if let Some(slot) = self.reporter_slot[reporter] {
            if reporter != other {
                self.exposures_today[slot].insert(other);
            }
        }
    }

    /// Adds `a -> b` unless present; returns whether an edge was added.
    fn add_follow(&mut self, a: usize, b: usize) -> bool {
        if a == b || !self.following[a].insert(b) {
            return false;
        }
        self.followers[b].insert(a);
        if self.accounts[a].role == Role::Human {
            if let Some(c) = self.accounts[b].campaign {
                self.campaigns[c].human_follow_edges += 1;
            }
        }
        true
    }

    pub fn snapshot(&self) -> RewardSnapshot {
        RewardSnapshot {
            status: self.accounts.iter().map(|a| a.status).collect(),
            human_follow_edges: self.campaigns.iter().map(|c| c.human_follow_edges).collect(),
            sentiment: self.humans.iter().map(|&h| self.accounts[h].sentiment.clone()).collect(),
        }
    }
}

/// The parts of a world the reward depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardSnapshot {
    pub status: Vec<Status>,
    pub human_follow_edges: Vec<u64>,
    /// Per human (in `WorldState::humans` order), per topic.
    pub sentiment: Vec<Vec<f64>>,
}

/// `p <- alpha p + (1 - alpha) c`.
pub fn ewma_update(p: f64, c: f64, alpha: f64) -> f64 {
    alpha * p + (1.0 - alpha) * c
}

fn shuffled_ids(n: usize, rng: &mut StreamRng) -> Vec<String> {
    let width = n.to_string().len().max(3);
    let mut nums: Vec<usize> = (1..=n).collect();
    nums.shuffle(rng);
    nums.into_iter().map(|k| format!("acct-{k:0width$}")).collect()
}

/// Builds the initial world: accounts, the initial follow graph (emitted as step-0
/// follow events), campaign rosters and the reporter slots.
pub fn init_world(cfg: &SimConfig) -> Result<WorldState> {
    cfg.validate()?;
    let mut r = rng::stream(cfg.seed, "init");
    let n = cfg.n_accounts();
    let n_topics = cfg.n_campaigns.max(1);
    let ids = shuffled_ids(n, &mut r);
    let mut accounts = Vec::with_capacity(n);
    for i in 0..cfg.n_humans {
        let sentiment = (0..n_topics).map(|_| r.random_range(-0.5..=0.5)).collect();
        let spread = cfg.human_activity_spread;
        accounts.push(SimAccount {
            id: ids[i].clone(),
            role: Role::Human,
            campaign: None,
            status: Status::Active,
            sentiment,
            activity: if spread > 0.0 { r.random_range(1.0 - spread..=1.0 + spread) } else { 1.0 },
        });
    }
    let mut campaigns = Vec::with_capacity(cfg.n_campaigns);
    for c in 0..cfg.n_campaigns {
        let mut bots = Vec::with_capacity(BOTS_PER_CAMPAIGN);
        for j in 0..BOTS_PER_CAMPAIGN {
            let idx = accounts.len();
            let mut sentiment = vec![0.0; n_topics];
            sentiment[c] = 1.0;
            accounts.push(SimAccount {
                id: ids[idx].clone(),
                role: Role::Bot,
                campaign: Some(c),
                status: if j < cfg.active_bots_per_campaign { Status::Active } else { Status::Dormant },
                sentiment,
                activity: 1.0,
            });
            bots.push(idx);
        }
        campaigns.push(CampaignState {
            bots,
            target_topic: c,
            target_sign: 1.0,
            posture: Posture::Moderate,
            replenish_level: cfg.active_bots_per_campaign,
            last_scan_suspensions: 0,
            posts_since_decision: 0,
            active_steps_since_decision: 0,
            pending_reward: 0.0,
            last_state: None,
            last_action: None,
            human_follow_edges: 0,
        });
    }

    let humans: Vec<usize> = (0..cfg.n_humans).collect();
    let n_reporters = cfg.reporters.custom.as_ref().map_or(cfg.reporters.n_reporters, Vec::len);
    let mut pool: Vec<usize> = humans.clone();
    pool.shuffle(&mut r);
    let mut reporters: Vec<usize> = pool.into_iter().take(n_reporters).collect();
    reporters.sort_unstable();
    let mut reporter_slot = vec![None; n];
    for (s, &a) in reporters.iter().enumerate() {
        reporter_slot[a] = Some(s);
    }

    let initial_sentiment = accounts.iter().map(|a| a.sentiment.clone()).collect();
    let mut w = WorldState {
        step: 0,
        steps_per_day: cfg.steps_per_day,
        n_topics,
        accounts,
        humans,
        following: vec![BTreeSet::new(); n],
        followers: vec![BTreeSet::new(); n],
        posts: Vec::new(),
        posts_by_author: vec![Vec::new(); n],
        campaigns,
        events: Vec::new(),
        init_events: 0,
        consumptions: Vec::new(),
        exposures_today: vec![BTreeSet::new(); reporters.len()],
        reporters,
        reporter_slot,
        days: Vec::new(),
        scans: Vec::new(),
        step_rewards: Vec::new(),
        initial_sentiment,
        initial_out_degree: vec![0; n],
    };

    let base = cfg.mean_initial_degree.floor() as usize;
    let frac = cfg.mean_initial_degree - base as f64;
    let all: Vec<usize> = (0..n).collect();
    for a in 0..n {
        let d = (base + usize::from(r.random::<f64>() < frac)).min(n - 1);
        let mut picked = 0;
        while picked < d {
            let b = *all.choose(&mut r).expect("non-empty");
            if w.add_follow(a, b) {
                w.push_event(a, Action::Follow, Some(b), None, None);
                picked += 1;
            }
        }
        w.initial_out_degree[a] = d;
    }
    w.init_events = w.events.len();
    // initialization follows are not rewarded
    for c in &mut w.campaigns {
        c.human_follow_edges = 0;
    }
    for (a, acc) in w.accounts.iter().enumerate() {
        if acc.role == Role::Human {
            for &b in &w.following[a] {
                if let Some(c) = w.accounts[b].campaign {
                    w.campaigns[c].human_follow_edges += 1;
                }
            }
        }
    }
    Ok(w)
}

// ---------------------------------------------------------------------------
// Rewards
// ---------------------------------------------------------------------------

/// Reward terms for `campaign` between two consecutive snapshots.
pub fn compute_reward(
    world: &WorldState,
    cfg: &SimConfig,
    before: &RewardSnapshot,
    after: &RewardSnapshot,
    campaign: usize,
) -> RewardBreakdown {
    let c = &world.campaigns[campaign];
    let t = c.target_topic;
    let sign = c.target_sign;
    let mut b = RewardBreakdown {
        new_human_followers: after.human_follow_edges[campaign] - before.human_follow_edges[campaign],
        ..Default::default()
    };
    for (s0, s1) in before.sentiment.iter().zip(&after.sentiment) {
        let (p0, p1) = (sign * s0[t], sign * s1[t]);
        if p1 - p0 >= cfg.infection_delta {
            b.infections += 1;
        }
        if p0 < cfg.conversion_threshold && p1 >= cfg.conversion_threshold {
            b.terminations += 1;
        }
    }
    b.suspensions = c
        .bots
        .iter()
        .filter(|&&i| before.status[i] != Status::Suspended && after.status[i] == Status::Suspended)
        .count() as u64;
    b
}

/// Recomputes every per-step reward from the event log and the consumption trace.
pub fn audit_rewards(world: &WorldState, cfg: &SimConfig) -> Vec<StepReward> {
    let index: BTreeMap<&str, usize> = world.accounts.iter().enumerate().map(|(i, a)| (a.id.as_str(), i)).collect();
    let n_c = world.campaigns.len();
    let mut per_step: BTreeMap<u64, Vec<RewardBreakdown>> = BTreeMap::new();
    let steps = world.step;
    for s in 0..steps {
        per_step.insert(s, vec![RewardBreakdown::default(); n_c]);
    }
    for e in &world.events[world.init_events..] {
        let actor = index[e.actor.as_str()];
        let row = per_step.get_mut(&e.timestamp).expect("step in range");
        match e.action {
            Action::Follow if world.accounts[actor].role == Role::Human => {
                let target = index[e.target.as_deref().expect("follow target")];
                if let Some(c) = world.accounts[target].campaign {
                    row[c].new_human_followers += 1;
                }
            }
            Action::Suspend => {
                if let Some(c) = world.accounts[actor].campaign {
                    row[c].suspensions += 1;
                }
            }
            _ => {}
        }
    }
    for x in &world.consumptions {
        let row = per_step.get_mut(&x.step).expect("step in range");
        for (ci, c) in world.campaigns.iter().enumerate() {
            if c.target_topic != x.topic {
                continue;
            }
            let (p0, p1) = (c.target_sign * x.before, c.target_sign * x.after);
            if p1 - p0 >= cfg.infection_delta {
                row[ci].infections += 1;
            }
            if p0 < cfg.conversion_threshold && p1 >= cfg.conversion_threshold {
                row[ci].terminations += 1;
            }
        }
    }
    per_step
        .into_iter()
        .flat_map(|(step, row)| {
            row.into_iter().enumerate().map(move |(campaign, breakdown)| StepReward {
                step,
                campaign,
                breakdown,
                reward: breakdown.value(&cfg.rewards),
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Agent
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BotObservation {
    pub account: usize,
    pub status: Status,
    pub followers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentObservation {
    pub bots: Vec<BotObservation>,
    /// Suspensions the campaign suffered in the latest scan.
    pub recent_suspensions: usize,
    /// Posts per active bot-step since the last decision.
    pub posting_rate: f64,
    /// Mean target-aligned sentiment of the humans following the campaign.
    pub neighborhood_sentiment: f64,
}

pub fn observe(world: &WorldState, campaign: usize) -> AgentObservation {
    let c = &world.campaigns[campaign];
    let bots = c
        .bots
        .iter()
        .map(|&b| BotObservation {
            account: b,
            status: world.accounts[b].status,
            followers: world.followers[b].len(),
        })
        .collect();
    let mut hood = BTreeSet::new();
    for &b in &c.bots {
        hood.extend(world.followers[b].iter().copied().filter(|&h| world.accounts[h].role == Role::Human));
    }
    let neighborhood_sentiment = if hood.is_empty() {
        0.0
    } else {
        hood.iter().map(|&h| c.target_sign * world.accounts[h].sentiment[c.target_topic]).sum::<f64>() / hood.len() as f64
    };
    AgentObservation {
        bots,
        recent_suspensions: c.last_scan_suspensions,
        posting_rate: f64::from(c.posts_since_decision) / f64::from(c.active_steps_since_decision.max(1)),
        neighborhood_sentiment,
    }
}

/// 3 pressure x 3 posting-rate x 3 sentiment-progress buckets.
pub fn discretize(obs: &AgentObservation) -> usize {
    let pressure = obs.recent_suspensions.min(2);
    let rate = match obs.posting_rate {
        r if r < 0.1 => 0,
        r if r < 0.2 => 1,
        _ => 2,
    };
    let progress = match obs.neighborhood_sentiment {
        s if s < 0.1 => 0,
        s if s < 0.3 => 1,
        _ => 2,
    };
    pressure * 9 + rate * 3 + progress
}

/// Action `i` is posture `i / 2` with replenish level full (`i` even) or reduced.
pub fn decode_action(action: usize, active_per_campaign: usize) -> (Posture, usize) {
    let posture = Posture::ALL[action / 2];
    let level = if action % 2 == 0 {
        active_per_campaign
    } else {
        active_per_campaign.div_ceil(2)
    };
    (posture, level)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub values: Vec<[f64; N_ACTIONS]>,
}

impl Default for QTable {
    fn default() -> Self {
        Self {
            values: vec![[0.0; N_ACTIONS]; N_STATES],
        }
    }
}

impl QTable {
    pub fn greedy(&self, state: usize) -> usize {
        let row = &self.values[state];
        let mut best = 0;
        for a in 1..N_ACTIONS {
            if row[a] > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn choose(&self, state: usize, epsilon: f64, rng: &mut StreamRng) -> usize {
        if epsilon > 0.0 && rng.random::<f64>() < epsilon {
            rng.random_range(0..N_ACTIONS)
        } else {
            self.greedy(state)
        }
    }

    pub fn update(&mut self, s: usize, a: usize, reward: f64, next: usize, lr: f64, discount: f64) {
        let target = reward + discount * self.values[next].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.values[s][a] += lr * (target - self.values[s][a]);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AgentAction {
    Post { bot: usize, polarity: f64 },
    Like { bot: usize, post: usize },
    Follow { bot: usize, target: usize },
    Idle { bot: usize },
    Activate { bot: usize },
}

fn recent_start(world: &WorldState, window: u32) -> usize {
    let from = world.step.saturating_sub(u64::from(window));
    world.posts.partition_point(|p| p.step < from)
}

/// One action per active bot under the campaign's current posture, plus activations
/// of dormant reserves up to the campaign's replenish level.
pub fn agent_act(world: &WorldState, cfg: &SimConfig, campaign: usize, rng: &mut StreamRng) -> Vec<AgentAction> {
    let c = &world.campaigns[campaign];
    let active: Vec<usize> = c.bots.iter().copied().filter(|&b| world.accounts[b].status == Status::Active).collect();
    let start = recent_start(world, cfg.feed_window_steps);
    let mut out = Vec::with_capacity(active.len() + 1);
    for &b in &active {
        if rng.random::<f64>() >= c.posture.act_prob() {
            out.push(AgentAction::Idle { bot: b });
            continue;
        }
        let u = rng.random::<f64>();
        let action = if u < cfg.agent.post_share {
            let mag = rng.random_range(cfg.agent.polarity_min..=1.0);
            Some(AgentAction::Post {
                bot: b,
                polarity: c.target_sign * mag,
            })
        } else if u < cfg.agent.post_share + cfg.agent.like_share {
            (0..5).find_map(|_| {
                if start >= world.posts.len() {
                    return None;
                }
                let p = rng.random_range(start..world.posts.len());
                let author = world.posts[p].author;
                (world.accounts[author].role == Role::Human && world.accounts[author].status == Status::Active)
                    .then_some(AgentAction::Like { bot: b, post: p })
            })
        } else {
            let to_bot = cfg.allow_bot_follow_bot && rng.random::<f64>() < cfg.bot_follow_bot_prob;
            (0..5).find_map(|_| {
                let target = if to_bot {
                    *c.bots.choose(rng)?
                } else {
                    *world.humans.choose(rng)?
                };
                (target != b && world.accounts[target].status == Status::Active && !world.following[b].contains(&target))
                    .then_some(AgentAction::Follow { bot: b, target })
            })
        };
        out.push(action.unwrap_or(AgentAction::Idle { bot: b }));
    }
    if active.len() < c.replenish_level {
        let dormant: Vec<usize> = c.bots.iter().copied().filter(|&b| world.accounts[b].status == Status::Dormant).collect();
        let k = (c.replenish_level - active.len()).min(dormant.len());
        for &b in dormant.choose_multiple(rng, k) {
            out.push(AgentAction::Activate { bot: b });
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Detector scan
// ---------------------------------------------------------------------------

/// Scores every non-suspended account on features up to the previous step and
/// suspends the ones at or above `threshold`, whatever their role.
pub fn detector_scan(world: &mut WorldState, model: &DetectorModel, threshold: f64) -> Result<Vec<usize>> {
    let candidates: Vec<usize> = (0..world.accounts.len())
        .filter(|&i| world.accounts[i].status != Status::Suspended)
        .collect();
    let mut suspended = Vec::new();
    if world.step > 0 {
        let feats = detectors::features_until(
            &world.events,
            candidates.iter().map(|&i| world.accounts[i].id.as_str()),
            world.step - 1,
        );
        for &i in &candidates {
            if detectors::predict(model, &feats[&world.accounts[i].id])? >= threshold {
                suspended.push(i);
            }
        }
    }
    for &i in &suspended {
        world.accounts[i].status = Status::Suspended;
        world.push_event(i, Action::Suspend, None, None, None);
    }
    for (ci, c) in world.campaigns.iter_mut().enumerate() {
        c.last_scan_suspensions = suspended.iter().filter(|&&i| world.accounts[i].campaign == Some(ci)).count();
    }
    world.scans.push(ScanRecord {
        step: world.step,
        suspended: suspended.clone(),
    });
    Ok(suspended)
}

// ---------------------------------------------------------------------------
// Simulation loop
// ---------------------------------------------------------------------------

pub struct Simulation<'m> {
    pub cfg: SimConfig,
    pub world: WorldState,
    pub q: QTable,
    pub learn: bool,
    scan_model: Option<&'m DetectorModel>,
    world_rng: StreamRng,
    agent_rng: StreamRng,
}

impl<'m> Simulation<'m> {
    pub fn new(cfg: &SimConfig, q: QTable, scan_model: Option<&'m DetectorModel>) -> Result<Self> {
        let world = init_world(cfg)?;
        Ok(Self {
            cfg: cfg.clone(),
            world,
            q,
            learn: matches!(cfg.agent.policy, PolicyKind::QLearning),
            scan_model,
            world_rng: rng::stream(cfg.seed, "world"),
            agent_rng: rng::stream(cfg.seed, "agents"),
        })
    }

    pub fn finished(&self) -> bool {
        self.world.step >= self.cfg.total_steps()
    }

    fn decide(&mut self, campaign: usize) {
        let obs = observe(&self.world, campaign);
        let s = discretize(&obs);
        let active = self.cfg.active_bots_per_campaign;
        let c = &mut self.world.campaigns[campaign];
        let (posture, level, action) = match self.cfg.agent.policy {
            PolicyKind::Fixed { posture } => (posture, active, None),
            PolicyKind::QLearning => {
                if let (Some(ps), Some(pa)) = (c.last_state, c.last_action) {
                    if self.learn {
                        self.q
                            .update(ps, pa, c.pending_reward, s, self.cfg.agent.learning_rate, self.cfg.agent.discount);
                    }
                }
                let a = self.q.choose(s, self.cfg.agent.epsilon, &mut self.agent_rng);
                let (p, l) = decode_action(a, active);
                (p, l, Some(a))
            }
        };
        c.posture = posture;
        c.replenish_level = level;
        c.last_state = Some(s);
        c.last_action = action;
        c.pending_reward = 0.0;
        c.posts_since_decision = 0;
        c.active_steps_since_decision = 0;
    }

    fn apply_agent_action(&mut self, a: AgentAction) {
        let w = &mut self.world;
        match a {
            AgentAction::Post { bot, polarity } => {
                let topic = w.campaigns[w.accounts[bot].campaign.expect("bot")].target_topic;
                let id = w.posts.len();
                w.posts.push(Post {
                    author: bot,
                    polarity,
                    topic,
                    step: w.step,
                });
                w.posts_by_author[bot].push(id);
                w.push_event(bot, Action::Post, None, Some(polarity), Some(topic));
                w.campaigns[w.accounts[bot].campaign.expect("bot")].posts_since_decision += 1;
            }
            AgentAction::Like { bot, post } => {
                let author = w.posts[post].author;
                w.push_event(bot, Action::Like, Some(author), None, None);
                w.expose(author, bot);
            }
            AgentAction::Follow { bot, target } => {
                if w.add_follow(bot, target) {
                    w.push_event(bot, Action::Follow, Some(target), None, None);
                    w.expose(target, bot);
                    self.maybe_follow_back(target, bot);
                }
            }
            AgentAction::Idle { .. } => {}
            AgentAction::Activate { bot } => {
                w.accounts[bot].status = Status::Active;
                w.push_event(bot, Action::Activate, Some(bot), None, None);
            }
        }
    }

    fn maybe_follow_back(&mut self, human: usize, other: usize) {
        let w = &mut self.world;
        if w.accounts[human].role != Role::Human || w.accounts[human].status != Status::Active {
            return;
        }
        if self.world_rng.random::<f64>() < self.cfg.follow_back_prob && w.add_follow(human, other) {
            w.push_event(human, Action::Follow, Some(other), None, None);
        }
    }

    fn pick_feed_post(&mut self, h: usize) -> Option<usize> {
        let w = &self.world;
        let start = recent_start(w, self.cfg.feed_window_steps);
        let r = &mut self.world_rng;
        let usable = |p: usize| {
            let a = w.posts[p].author;
            a != h && w.accounts[a].status != Status::Suspended
        };
        if r.random::<f64>() >= self.cfg.explore_prob && !w.following[h].is_empty() {
            let followees: Vec<usize> = w.following[h].iter().copied().collect();
            for _ in 0..3 {
                let f = *followees.choose(r).expect("non-empty");
                if let Some(&p) = w.posts_by_author[f].last() {
                    if w.posts[p].step >= w.step.saturating_sub(u64::from(self.cfg.feed_window_steps)) && usable(p) {
                        return Some(p);
                    }
                }
            }
        }
        if start >= w.posts.len() {
            return None;
        }
        (0..5).find_map(|_| {
            let p = r.random_range(start..w.posts.len());
            usable(p).then_some(p)
        })
    }

    fn consume(&mut self, h: usize, p: usize) {
        let alpha = self.cfg.ewma_alpha;
        let w = &mut self.world;
        let Post { author, polarity, topic, .. } = w.posts[p];
        let before = w.accounts[h].sentiment[topic];
        let after = ewma_update(before, polarity, alpha).clamp(-1.0, 1.0);
        w.accounts[h].sentiment[topic] = after;
        w.consumptions.push(Consumption {
            step: w.step,
            human: h,
            post: p,
            topic,
            before,
            after,
        });
        w.expose(h, author);
    }

    fn human_act(&mut self, h: usize) {
        let rates = self.cfg.human_rates;
        let m = self.world.accounts[h].activity;
        let u = self.world_rng.random::<f64>();
        let (post, like, follow) = (rates.post * m, rates.like * m, rates.follow * m);
        if u < post {
            let topic = self.world_rng.random_range(0..self.world.n_topics);
            let noise = self.world_rng.random_range(-0.3..=0.3);
            let polarity = (self.world.accounts[h].sentiment[topic] + noise).clamp(-1.0, 1.0);
            let w = &mut self.world;
            let id = w.posts.len();
            w.posts.push(Post {
                author: h,
                polarity,
                topic,
                step: w.step,
            });
            w.posts_by_author[h].push(id);
            w.push_event(h, Action::Post, None, Some(polarity), Some(topic));
        } else if u < post + like {
            if let Some(p) = self.pick_feed_post(h) {
                let author = self.world.posts[p].author;
                self.world.push_event(h, Action::Like, Some(author), None, None);
                self.world.expose(author, h);
                self.consume(h, p);
            }
        } else if u < post + like + follow {
            let from_feed = self.pick_feed_post(h).map(|p| self.world.posts[p].author);
            let n = self.world.accounts.len();
            let candidate = from_feed
                .filter(|&a| !self.world.following[h].contains(&a))
                .or_else(|| {
                    (0..5).find_map(|_| {
                        let a = self.world_rng.random_range(0..n);
                        (a != h
                            && self.world.accounts[a].status == Status::Active
                            && !self.world.following[h].contains(&a))
                        .then_some(a)
                    })
                });
            if let Some(t) = candidate {
                if self.world.add_follow(h, t) {
                    self.world.push_event(h, Action::Follow, Some(t), None, None);
                    self.world.expose(t, h);
                    self.maybe_follow_back(t, h);
                }
            }
        } else if self.world_rng.random::<f64>() < rates.read_on_idle {
            if let Some(p) = self.pick_feed_post(h) {
                self.consume(h, p);
            }
        }
    }

    fn close_day(&mut self) {
        let w = &mut self.world;
        let n_slots = w.reporters.len();
        w.days.push(DayRecord {
            day: (w.step / u64::from(w.steps_per_day)) as u32,
            suspended: w.accounts.iter().map(|a| a.status == Status::Suspended).collect(),
            exposures: std::mem::replace(&mut w.exposures_today, vec![BTreeSet::new(); n_slots]),
        });
    }

    /// Advances one step: scan at period boundaries, agent decisions at decision
    /// boundaries, bot actions, human actions, then rewards.
    pub fn step(&mut self) -> Result<()> {
        let t = self.world.step;
        let before = self.world.snapshot();
        if let Some(model) = self.scan_model {
            if self.cfg.scans_enabled && t > 0 && t % u64::from(self.cfg.scan_period()) == 0 {
                detector_scan(&mut self.world, model, self.cfg.scan_threshold)?;
            }
        }
        let n_c = self.world.campaigns.len();
        if t % u64::from(self.cfg.agent.decision_period_steps) == 0 {
            for c in 0..n_c {
                self.decide(c);
            }
        }
        for c in 0..n_c {
            let actions = agent_act(&self.world, &self.cfg, c, &mut self.agent_rng);
            let active = actions.iter().filter(|a| !matches!(a, AgentAction::Activate { .. })).count() as u32;
            self.world.campaigns[c].active_steps_since_decision += active;
            for a in actions {
                self.apply_agent_action(a);
            }
        }
        let mut order: Vec<usize> = self
            .world
            .humans
            .iter()
            .copied()
            .filter(|&h| self.world.accounts[h].status == Status::Active)
            .collect();
        order.shuffle(&mut self.world_rng);
        for h in order {
            if self.world.accounts[h].status == Status::Active {
                self.human_act(h);
            }
        }
        let after = self.world.snapshot();
        for c in 0..n_c {
            let breakdown = compute_reward(&self.world, &self.cfg, &before, &after, c);
            let reward = breakdown.value(&self.cfg.rewards);
            self.world.campaigns[c].pending_reward += reward;
            self.world.step_rewards.push(StepReward {
                step: t,
                campaign: c,
                breakdown,
                reward,
            });
        }
        self.world.step += 1;
        if self.world.step % u64::from(self.cfg.steps_per_day) == 0 {
            self.close_day();
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        while !self.finished() {
            self.step()?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Reporters
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reporter {
    pub account: usize,
    pub spec: ReporterSpec,
}

fn considered<'a>(world: &'a WorldState, rec: &'a DayRecord, slot: usize, spec: &ReporterSpec) -> Box<dyn Iterator<Item = usize> + 'a> {
    let me = world.reporters[slot];
    if rec.suspended[me] {
        return Box::new(std::iter::empty());
    }
    if spec.exposure_only {
        Box::new(rec.exposures[slot].iter().copied().filter(move |&a| !rec.suspended[a]))
    } else {
        Box::new((0..world.accounts.len()).filter(move |&a| a != me && !rec.suspended[a]))
    }
}

/// Reports for one day: a reporter taking part that day reports each account it
/// considers with probability `rate x tpr` (bots) or `rate x fpr` (humans).
pub fn generate_reports(world: &WorldState, pool: &[Reporter], day: u32, seed: u64) -> Result<Vec<Report>> {
    let rec = world
        .days
        .iter()
        .find(|d| d.day == day)
        .ok_or_else(|| Error::invalid(format!("day {day} has not been simulated")))?;
    let day_seed = rng::derive_seed(seed, &format!("reports-day-{day}"));
    let mut out = Vec::new();
    for (slot, rep) in pool.iter().enumerate() {
        let mut r = rng::indexed(day_seed, "reporter", slot as u64);
        if r.random::<f64>() >= rep.spec.participation {
            continue;
        }
        for a in considered(world, rec, slot, &rep.spec) {
            let base = if world.accounts[a].role.is_bot() { rep.spec.tpr } else { rep.spec.fpr };
            let p = rep.spec.report_rate * base;
            if r.random::<f64>() < p {
                out.push(Report {
                    day,
                    reporter: world.accounts[rep.account].id.clone(),
                    subject: world.accounts[a].id.clone(),
                });
            }
        }
    }
    Ok(out)
}

/// Plug-in expected F1 of one reporter over the whole run.
fn expected_f1(world: &WorldState, slot: usize, spec: &ReporterSpec) -> f64 {
    let n = world.accounts.len();
    let mut miss = vec![1.0; n];
    for rec in &world.days {
        for a in considered(world, rec, slot, spec) {
            let base = if world.accounts[a].role.is_bot() { spec.tpr } else { spec.fpr };
            miss[a] *= 1.0 - spec.participation * spec.report_rate * base;
        }
    }
    let (mut tp, mut fp) = (0.0, 0.0);
    for (a, m) in miss.iter().enumerate() {
        if world.accounts[a].role.is_bot() {
            tp += 1.0 - m;
        } else {
            fp += 1.0 - m;
        }
    }
    let n_bots = world.n_bots() as f64;
    if tp + fp + n_bots == 0.0 {
        0.0
    } else {
        2.0 * tp / (tp + fp + n_bots)
    }
}

struct BaseDraw {
    aptitude: f64,
    rate: f64,
    participation: f64,
}

/// Skill at diligence `d`: aptitude fixes how well a reporter tells bots from
/// humans, diligence scales how much it reports.
fn spec_at(b: &BaseDraw, d: f64, cfg: &ReporterPoolConfig) -> ReporterSpec {
    let tpr = 0.5 + 0.5 * b.aptitude;
    ReporterSpec {
        report_rate: (d * b.rate).min(1.0),
        tpr,
        fpr: tpr * cfg.max_fp_ratio * (1.0 - b.aptitude),
        participation: b.participation,
        exposure_only: cfg.exposure_only,
    }
}

/// Reporter skills for a finished world. The calibrated preset bisects a common
/// diligence scale so the mean expected reporter F1 over the recorded days equals
/// the target (or gets as close as the bracket allows).
pub fn build_pool(world: &WorldState, cfg: &ReporterPoolConfig, seed: u64) -> Vec<Reporter> {
    let slots = world.reporters.len();
    if let Some(custom) = &cfg.custom {
        return world
            .reporters
            .iter()
            .zip(custom)
            .map(|(&account, &spec)| Reporter { account, spec })
            .collect();
    }
    if cfg.preset == PoolPreset::Perfect {
        return world
            .reporters
            .iter()
            .map(|&account| Reporter {
                account,
                spec: ReporterSpec {
                    report_rate: 1.0,
                    tpr: 1.0,
                    fpr: 0.0,
                    participation: 1.0,
                    exposure_only: cfg.exposure_only,
                },
            })
            .collect();
    }
    let mut r = rng::stream(seed, "reporter-pool");
    let n_daily = (cfg.daily_fraction * slots as f64).round() as usize;
    let draws: Vec<BaseDraw> = (0..slots)
        .map(|i| BaseDraw {
            aptitude: r.random::<f64>(),
            rate: r.random_range(0.3..=1.0),
            participation: if i < n_daily { 1.0 } else { r.random_range(0.3..=0.7) },
        })
        .collect();
    let mean_f1 = |d: f64| -> f64 {
        if slots == 0 {
            return 0.0;
        }
        draws
            .iter()
            .enumerate()
            .map(|(s, b)| expected_f1(world, s, &spec_at(b, d, cfg)))
            .sum::<f64>()
            / slots as f64
    };
    let (mut lo, mut hi) = (0.0, MAX_DILIGENCE);
    let diligence = if mean_f1(hi) <= cfg.target_mean_f1 {
        hi
    } else if mean_f1(lo) >= cfg.target_mean_f1 {
        lo
    } else {
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if mean_f1(mid) < cfg.target_mean_f1 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    world
        .reporters
        .iter()
        .zip(&draws)
        .map(|(&account, b)| {
            let mut spec = spec_at(b, diligence, cfg);
            if cfg.preset == PoolPreset::PerfectPrecision {
                spec.fpr = 0.0;
            }
            Reporter { account, spec }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

/// A finished run: the dataset plus everything needed to audit it.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub config: SimConfig,
    pub dataset: Dataset,
    pub world: WorldState,
    pub pool: Vec<Reporter>,
    pub q_table: QTable,
}

fn to_dataset(world: &WorldState, reports: Vec<Report>, n_days: u32) -> Dataset {
    let mut posts = vec![0usize; world.accounts.len()];
    for p in &world.posts {
        posts[p.author] += 1;
    }
    let accounts = world
        .accounts
        .iter()
        .enumerate()
        .map(|(i, a)| Account {
            id: a.id.clone(),
            role: a.role,
            campaign: a.campaign.map(|c| c as u32 + 1),
            created_day: 0,
            status: a.status,
            sentiment: a.sentiment.iter().enumerate().map(|(t, &v)| (t as u32, v)).collect(),
            metadata: [
                ("followers".to_string(), world.followers[i].len() as f64),
                ("following".to_string(), world.following[i].len() as f64),
                ("posts".to_string(), posts[i] as f64),
            ]
            .into(),
        })
        .collect();
    let mut reports = reports;
    reports.sort();
    Dataset {
        accounts,
        events: world.events.clone(),
        reports,
        external_predictions: BTreeMap::new(),
        n_days,
        steps_per_day: world.steps_per_day,
    }
}

/// Runs a config through to the end without reports.
pub fn run_world(cfg: &SimConfig, q: QTable, scan_model: Option<&DetectorModel>) -> Result<(WorldState, QTable)> {
    let mut sim = Simulation::new(cfg, q, scan_model)?;
    sim.run()?;
    Ok((sim.world, sim.q))
}

/// Training data from the benchmark profile: every account of one run, labelled, with
/// features over the whole run.
pub fn benchmark_corpus(cfg: &SimConfig, seed: u64) -> Result<TrainingSet> {
    let bench = SimConfig {
        seed,
        ..cfg.benchmark_profile()
    };
    let (world, _) = run_world(&bench, QTable::default(), None)?;
    let ds = to_dataset(&world, Vec::new(), bench.n_days);
    let feats = detectors::extract_all(&ds, ds.n_days);
    TrainingSet::from_features(feats.values(), &ds.labels())
}

/// The platform's scanning detector: bagged trees on a benchmark corpus.
pub fn scan_detector(cfg: &SimConfig) -> Result<DetectorModel> {
    let corpus = benchmark_corpus(cfg, rng::derive_seed(cfg.seed, "scan-benchmark"))?;
    detectors::train_bagged_trees(
        &corpus,
        TreeParams {
            n_trees: cfg.scan_trees,
            seed: rng::derive_seed(cfg.seed, "scan-trees"),
            ..TreeParams::default()
        },
    )
}

/// Pretrains the campaign policy, runs the recorded episode, then draws the reports.
pub fn run_experiment(cfg: &SimConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let model = if cfg.scans_enabled && cfg.n_campaigns > 0 {
        Some(scan_detector(cfg)?)
    } else {
        None
    };
    let mut q = QTable::default();
    if matches!(cfg.agent.policy, PolicyKind::QLearning) {
        for e in 0..cfg.agent.pretrain_episodes {
            let episode = SimConfig {
                seed: rng::derive_seed(cfg.seed, &format!("pretrain-{e}")),
                ..cfg.clone()
            };
            q = run_world(&episode, q, model.as_ref())?.1;
        }
    }
    let (world, q) = run_world(cfg, q, model.as_ref())?;
    let pool = build_pool(&world, &cfg.reporters, cfg.seed);
    let mut reports = Vec::new();
    for day in 1..=cfg.n_days {
        reports.extend(generate_reports(&world, &pool, day, cfg.seed)?);
    }
    let dataset = to_dataset(&world, reports, cfg.n_days);
    dataset.validate()?;
    Ok(SimOutput {
        config: cfg.clone(),
        dataset,
        world,
        pool,
        q_table: q,
    })
}

/// Per-bot posting rate of each campaign in the scan period before and after every
/// scan that suspended at least `min_suspended` of its bots.
pub fn posting_rates_around_scans(world: &WorldState, scan_period: u32, min_suspended: usize) -> Vec<(f64, f64)> {
    let index: BTreeMap<&str, usize> = world.accounts.iter().enumerate().map(|(i, a)| (a.id.as_str(), i)).collect();
    let n_c = world.campaigns.len();
    let steps = world.step as usize;
    let mut posts = vec![vec![0u32; steps]; n_c];
    let mut active = vec![vec![0u32; steps]; n_c];
    // replay statuses from the log; a bot starts dormant iff it is still dormant or
    // gets activated later
    let mut status: Vec<Status> = world
        .accounts
        .iter()
        .map(|a| if a.status == Status::Dormant { Status::Dormant } else { Status::Active })
        .collect();
    for e in &world.events {
        if e.action == Action::Activate {
            status[index[e.actor.as_str()]] = Status::Dormant;
        }
    }
    let mut ev = world.events[world.init_events..].iter().peekable();
    for t in 0..steps {
        while let Some(e) = ev.next_if(|e| e.timestamp == t as u64) {
            let i = index[e.actor.as_str()];
            match e.action {
                Action::Activate => status[i] = Status::Active,
                Action::Suspend => status[i] = Status::Suspended,
                Action::Post => {
                    if let Some(c) = world.accounts[i].campaign {
                        posts[c][t] += 1;
                    }
                }
                _ => {}
            }
        }
        for (c, camp) in world.campaigns.iter().enumerate() {
            active[c][t] = camp.bots.iter().filter(|&&b| status[b] == Status::Active).count() as u32;
        }
    }
    let w = scan_period as usize;
    let rate = |c: usize, from: usize, to: usize| -> Option<f64> {
        let a: u32 = active[c][from..to].iter().sum();
        (a > 0).then(|| f64::from(posts[c][from..to].iter().sum::<u32>()) / f64::from(a))
    };
    let mut out = Vec::new();
    for scan in &world.scans {
        let t = scan.step as usize;
        if t < w || t + w > steps {
            continue;
        }
        for c in 0..n_c {
            let hits = scan.suspended.iter().filter(|&&i| world.accounts[i].campaign == Some(c)).count();
            if hits >= min_suspended {
                if let (Some(b), Some(a)) = (rate(c, t - w, t), rate(c, t, t + w)) {
                    out.push((b, a));
                }
            }
        }
    }
    out
}
