use std::collections::BTreeMap;

use hybridwatch::data::{Action, Flags, InteractionEvent, Labels, Report, Role, Universe};
use hybridwatch::metrics::{
    activity_ratios, agreement_rate, cohen_kappa, conditional_bot_probability, evaluate_flags, temporal_evaluation,
    ReportCounting, TemporalMode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn world(r: &mut ChaCha8Rng, n: usize, bot_share: f64) -> (Labels, Universe) {
    let labels: Labels = (0..n)
        .map(|i| (format!("a{i}"), if r.random_bool(bot_share) { Role::Bot } else { Role::Human }))
        .collect();
    let universe = labels.keys().cloned().collect();
    (labels, universe)
}

fn random_flags(r: &mut ChaCha8Rng, u: &Universe) -> Flags {
    let p = r.random_range(0.0..1.0);
    u.iter().filter(|_| r.random_bool(p)).cloned().collect()
}

#[test]
fn metric_bounds_and_f1_between_precision_and_recall() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..500 {
        let n = r.random_range(1..40);
        let (labels, u) = world(&mut r, n, 0.3);
        let m = evaluate_flags(&random_flags(&mut r, &u), &labels, &u).unwrap();
        for v in [m.precision, m.recall, m.f1, m.accuracy] {
            assert!((0.0..=1.0).contains(&v));
        }
        if m.precision > 0.0 && m.recall > 0.0 {
            assert!(m.f1 >= m.precision.min(m.recall) - 1e-12 && m.f1 <= m.precision.max(m.recall) + 1e-12);
        }
    }
}

#[test]
fn self_agreement_is_perfect() {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let n = r.random_range(2..40);
        let (_, u) = world(&mut r, n, 0.3);
        let a = random_flags(&mut r, &u);
        if a.is_empty() || a.len() == u.len() {
            continue;
        }
        assert_eq!(agreement_rate(&a, &a, &u).unwrap(), 1.0);
        assert!((cohen_kappa(&a, &a, &u).unwrap() - 1.0).abs() < 1e-12);
    }
}

fn random_reports(r: &mut ChaCha8Rng, u: &Universe) -> Vec<Report> {
    let ids: Vec<&String> = u.iter().collect();
    (0..r.random_range(0..120))
        .map(|_| Report {
            day: r.random_range(1..=5),
            reporter: format!("r{}", r.random_range(0..10)),
            subject: ids[r.random_range(0..ids.len())].clone(),
        })
        .collect()
}

#[test]
fn report_buckets_cover_the_universe() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let n = r.random_range(1..40);
        let (labels, u) = world(&mut r, n, 0.3);
        let reports = random_reports(&mut r, &u);
        let bots = labels.values().filter(|x| x.is_bot()).count();
        for counting in [ReportCounting::DistinctReporters, ReportCounting::RawReports] {
            let b = conditional_bot_probability(&reports, &labels, &u, counting).unwrap();
            assert_eq!(b.values().map(|x| x.n_accounts).sum::<usize>(), u.len());
            let implied: f64 = b.values().map(|x| x.n_accounts as f64 * x.p_bot).sum();
            assert!((implied - bots as f64).abs() < 1e-9);
        }
    }
}

#[test]
fn cumulative_flags_and_recall_never_shrink() {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let n = r.random_range(1..40);
        let (labels, u) = world(&mut r, n, 0.4);
        let reports = random_reports(&mut r, &u);
        let days = temporal_evaluation(&reports, &labels, &u, TemporalMode::Cumulative, 5).unwrap();
        assert_eq!(days.len(), 5);
        for w in days.windows(2) {
            assert!(w[1].n_flagged >= w[0].n_flagged);
            assert!(w[1].metrics.recall >= w[0].metrics.recall);
        }
    }
}

#[test]
fn no_bots_means_zero_bot_ratios() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let labels: Labels = (0..10).map(|i| (format!("h{i}"), Role::Human)).collect();
    let events: Vec<InteractionEvent> = (0..200)
        .map(|t| InteractionEvent {
            timestamp: t,
            day: 1 + (t / 48) as u32,
            actor: format!("h{}", r.random_range(0..10)),
            action: [Action::Like, Action::Follow, Action::Post][r.random_range(0..3)],
            target: Some(format!("h{}", r.random_range(0..10))),
            polarity: None,
            topic: None,
        })
        .collect();
    let mut seen = BTreeMap::new();
    for u in labels.keys() {
        let a = activity_ratios(&events, &labels, u).unwrap();
        for v in [a.ber_like, a.ber_follow, a.bxr_like, a.bxr_follow].into_iter().flatten() {
            assert_eq!(v, 0.0);
            *seen.entry(u).or_insert(0) += 1;
        }
    }
    assert!(!seen.is_empty());
}
