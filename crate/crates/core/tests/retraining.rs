use std::collections::BTreeMap;

use hybridwatch::aggregation::HumanEnsembleConfig;
use hybridwatch::data::Dataset;
use hybridwatch::detectors::{DetectorSpec, TreeParams};
use hybridwatch::retraining::{run_incremental, selection_for_day, RetrainPlan, SelectionStrategy};
use hybridwatch::simulator::{benchmark_corpus, run_experiment, AgentConfig, ReporterPoolConfig, SimConfig};

fn setup() -> (SimConfig, Dataset) {
    let cfg = SimConfig {
        n_humans: 80,
        n_campaigns: 2,
        n_days: 4,
        steps_per_day: 24,
        scan_trees: 20,
        agent: AgentConfig {
            pretrain_episodes: 1,
            ..AgentConfig::default()
        },
        reporters: ReporterPoolConfig {
            n_reporters: 30,
            ..ReporterPoolConfig::default()
        },
        seed: 4,
        ..SimConfig::default()
    };
    let ds = run_experiment(&cfg).unwrap().dataset;
    (cfg, ds)
}

fn plans(cfg: &SimConfig, ds: &Dataset) -> Vec<RetrainPlan> {
    let weights: BTreeMap<String, f64> = ds.reports.iter().map(|r| (r.reporter.clone(), 0.5)).collect();
    let human = HumanEnsembleConfig::new(1.0, weights).unwrap();
    let corpus = benchmark_corpus(cfg, 99).unwrap();
    [
        SelectionStrategy::GroundTruth,
        SelectionStrategy::SelfSupervised { confidence: 0.7 },
        SelectionStrategy::HumanSupervised { config: human },
    ]
    .into_iter()
    .map(|strategy| RetrainPlan {
        detector: DetectorSpec::BaggedTrees(TreeParams {
            n_trees: 30,
            ..TreeParams::default()
        }),
        base_corpus: corpus.clone(),
        strategy,
        days: ds.n_days,
        seed: 1,
    })
    .collect()
}

#[test]
fn day_one_is_the_baseline_and_runs_repeat() {
    let (cfg, ds) = setup();
    for plan in plans(&cfg, &ds) {
        let a = run_incremental(&plan, &ds).unwrap();
        assert_eq!(a.days.len(), 4);
        assert_eq!(a.days[0].rel_improvement, Some(0.0), "{}", a.strategy);
        assert!(a.days[0].selected == 0);
        assert_eq!(a, run_incremental(&plan, &ds).unwrap());
    }
}

#[test]
fn selections_do_not_see_the_future() {
    let (cfg, ds) = setup();
    for plan in plans(&cfg, &ds) {
        for day in 1..=ds.n_days {
            let full = selection_for_day(&plan, &ds, day).unwrap();
            let cut = selection_for_day(&plan, &ds.truncated(day - 1), day).unwrap();
            assert_eq!(full, cut, "{} day {day}", plan.strategy.name());
        }
    }
}

#[test]
fn empty_selection_keeps_the_baseline() {
    let (cfg, ds) = setup();
    let mut plan = plans(&cfg, &ds).pop().unwrap();
    plan.strategy = SelectionStrategy::HumanSupervised {
        config: HumanEnsembleConfig::new(1e9, BTreeMap::new()).unwrap(),
    };
    if let SelectionStrategy::HumanSupervised { config } = &mut plan.strategy {
        config.weights = ds.reports.iter().map(|r| (r.reporter.clone(), 1.0)).collect();
    }
    let rep = run_incremental(&plan, &ds).unwrap();
    for d in &rep.days {
        assert_eq!(d.selected, 0);
        assert_eq!(d.baseline, d.retrained);
    }
}
