use std::collections::BTreeMap;

use hybridwatch::aggregation::{
    count_based, hard_vote, late_fusion, meta_vote, quality_weighted, soft_vote, FusionConfig, HumanEnsembleConfig,
};
use hybridwatch::data::{Flags, PredictionSet, Report, Universe};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn universe(n: usize) -> Universe {
    (0..n).map(|i| format!("u{i:02}")).collect()
}

/// A source that covers a random part of the universe with random or 0/1 scores.
fn random_set(name: &str, u: &Universe, r: &mut ChaCha8Rng) -> PredictionSet {
    let coverage = r.random_range(0.5..=1.0);
    let binary = r.random_bool(0.3);
    let mut set = PredictionSet::new(name);
    for a in u {
        if r.random_bool(coverage) {
            let p = if binary {
                f64::from(u8::from(r.random_bool(0.5)))
            } else {
                // land on 0.5 now and then to exercise ties
                *[r.random_range(0.0..1.0), 0.5].get(usize::from(r.random_bool(0.1))).unwrap()
            };
            set.scores.insert(a.clone(), p);
        }
    }
    set
}

fn meta_oracle(sets: &[PredictionSet], t: f64, u: &Universe) -> Flags {
    let n = sets.len();
    let mut outcomes: Vec<Flags> = Vec::new();
    for mask in 1u32..(1 << n) {
        let subset: Vec<PredictionSet> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| sets[i].clone()).collect();
        outcomes.push(hard_vote(&subset, u));
        outcomes.push(soft_vote(&subset, t, u).unwrap());
    }
    u.iter()
        .filter(|a| 2 * outcomes.iter().filter(|o| o.contains(*a)).count() > outcomes.len())
        .cloned()
        .collect()
}

#[test]
fn meta_vote_matches_enumeration() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    for case in 0..200 {
        let u = universe(r.random_range(1..=20));
        let n = r.random_range(1..=4);
        let sets: Vec<PredictionSet> = (0..n).map(|i| random_set(&format!("s{i}"), &u, &mut r)).collect();
        let t = *[0.5, r.random_range(0.0..1.0)].get(case % 2).unwrap();
        assert_eq!(meta_vote(&sets, t, &u).unwrap(), meta_oracle(&sets, t, &u), "case {case}");
    }
}

fn random_reports(r: &mut ChaCha8Rng, n_reporters: usize, n_subjects: usize) -> Vec<Report> {
    let mut out = Vec::new();
    for _ in 0..r.random_range(0..80) {
        out.push(Report {
            day: r.random_range(1..=5),
            reporter: format!("r{}", r.random_range(0..n_reporters)),
            subject: format!("u{:02}", r.random_range(0..n_subjects)),
        });
    }
    out
}

#[test]
fn uniform_quality_weighting_is_count_based() {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    for case in 0..200 {
        let reports = random_reports(&mut r, 12, 20);
        let w = r.random_range(0.01..1.0);
        let k = r.random_range(1..=6);
        let weights: BTreeMap<String, f64> = (0..12).map(|i| (format!("r{i}"), w)).collect();
        let cfg = HumanEnsembleConfig::new(k as f64 * w, weights).unwrap();
        assert_eq!(
            quality_weighted(&reports, &cfg).unwrap().flags,
            count_based(&reports, k).unwrap(),
            "case {case}: w {w} k {k}"
        );
    }
}

#[test]
fn count_based_shrinks_as_k_grows() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let reports = random_reports(&mut r, 8, 15);
        let mut prev = count_based(&reports, 1).unwrap();
        for k in 2..=9 {
            let next = count_based(&reports, k).unwrap();
            assert!(next.is_subset(&prev));
            prev = next;
        }
        assert!(prev.is_empty());
    }
}

#[test]
fn vote_reductions() {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let u = universe(r.random_range(1..=20));
        let single = random_set("a", &u, &mut r);
        // missing scores abstain in hard voting and count as 0 in soft voting
        let full = PredictionSet::from_scores(
            "a",
            u.iter().map(|a| (a.clone(), single.score(a).unwrap_or(0.0))).collect(),
        )
        .unwrap();
        assert_eq!(soft_vote(std::slice::from_ref(&full), 0.5, &u).unwrap(), hard_vote(&[full], &u));

        let n = r.random_range(1..=5);
        let sets: Vec<PredictionSet> = (0..n).map(|i| random_set(&format!("s{i}"), &u, &mut r)).collect();
        let t = r.random_range(0.0..1.0);
        let uniform = FusionConfig::new(vec![1.0 / n as f64; n], t).unwrap();
        assert_eq!(late_fusion(&sets, &uniform, &u).unwrap(), soft_vote(&sets, t, &u).unwrap());

        for flags in [hard_vote(&sets, &u), soft_vote(&sets, t, &u).unwrap(), meta_vote(&sets[..n.min(4)], t, &u).unwrap()] {
            assert!(flags.is_subset(&u));
        }
    }
}
