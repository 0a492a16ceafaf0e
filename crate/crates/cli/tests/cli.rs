use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hybridwatch::data::{load_dataset_dir, write_predictions, Manifest, PredictionSet, Table};

fn hw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hybridwatch"))
        .args(args)
        .env_remove("HYBRIDWATCH_OUT")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let o = hw(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Three-day dataset, quick enough for every test to build its own.
fn small_dataset(root: &Path, seed: &str) -> PathBuf {
    let dir = root.join("data");
    ok(&["simulate", "--seed", seed, "--days", "3", "--steps-per-day", "12", "--out", s(&dir)]);
    dir
}

fn table(dir: &Path, name: &str) -> Table {
    Table::read_csv(&dir.join(format!("{name}.csv"))).unwrap()
}

fn num(cell: &str) -> f64 {
    cell.parse().unwrap()
}

#[test]
fn simulate_is_reproducible() {
    let t = tempfile::tempdir().unwrap();
    let a = t.path().join("a");
    let b = t.path().join("b");
    for d in [&a, &b] {
        ok(&["simulate", "--seed", "3", "--days", "2", "--steps-per-day", "12", "--out", s(d)]);
    }
    for f in ["accounts.jsonl", "events.jsonl", "reports.csv", "summary.csv", "manifest.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let m = Manifest::read(&a.join("manifest.json")).unwrap();
    assert_eq!(m.command, "simulate");
    assert_eq!(m.seed, 3);
}

#[test]
fn missing_config_file_names_the_path() {
    let o = hw(&["--config", "/nonexistent/hw.toml", "simulate"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/hw.toml"));
}

#[test]
fn missing_dataset_is_a_clear_error() {
    let o = hw(&["cv"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--data"));
}

#[test]
fn config_file_sections_apply_and_flags_override() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("hw.toml");
    std::fs::write(&cfg, "seed = 11\n[simulate]\nn_days = 2\nsteps_per_day = 12\n").unwrap();
    let out = t.path().join("sim");
    ok(&["--config", s(&cfg), "simulate", "--out", s(&out)]);
    let m = Manifest::read(&out.join("manifest.json")).unwrap();
    assert_eq!(m.seed, 11);
    assert_eq!(m.config["n_days"], 2);

    ok(&["--config", s(&cfg), "--seed", "12", "simulate", "--days", "1", "--out", s(&out)]);
    let m = Manifest::read(&out.join("manifest.json")).unwrap();
    assert_eq!(m.seed, 12);
    assert_eq!(m.config["n_days"], 1);
}

#[test]
fn perfect_predictions_score_one() {
    let t = tempfile::tempdir().unwrap();
    let data = small_dataset(t.path(), "1");
    let ds = load_dataset_dir(&data, &[]).unwrap();
    let labels = ds.labels();
    let oracle = PredictionSet::from_scores(
        "oracle",
        labels.iter().map(|(a, r)| (a.clone(), f64::from(u8::from(r.is_bot())))).collect(),
    )
    .unwrap();
    let preds = t.path().join("oracle.csv");
    write_predictions(&preds, &[&oracle]).unwrap();
    let out = t.path().join("eval");
    ok(&["evaluate", "--data", s(&data), "--mode", "flags", "--predictions", s(&preds), "--out", s(&out)]);
    let m = table(&out, "flag_metrics");
    for col in ["precision", "recall", "f1", "accuracy"] {
        assert_eq!(num(m.column(col).unwrap()[0]), 1.0, "{col}");
    }
}

#[test]
fn evaluate_modes_write_their_tables() {
    let t = tempfile::tempdir().unwrap();
    let data = small_dataset(t.path(), "2");
    let out = t.path().join("eval");
    for temporal in ["day_specific", "cumulative"] {
        ok(&["evaluate", "--data", s(&data), "--mode", "temporal", "--temporal", temporal, "--out", s(&out)]);
        let tt = table(&out, "temporal");
        assert_eq!(tt.rows.len(), 3);
        let days: Vec<&str> = tt.column("day").unwrap();
        assert_eq!(days, ["1", "2", "3"]);
    }
    ok(&["evaluate", "--data", s(&data), "--out", s(&out)]);
    let p = table(&out, "p_bot");
    assert!(p.column("p_bot").unwrap().iter().all(|v| (0.0..=1.0).contains(&num(v))));
    assert!(table(&out, "report_metrics").rows.iter().any(|r| r[0] == "quality_weighted"));
}

#[test]
fn pipeline_tables_have_expected_shape() {
    let t = tempfile::tempdir().unwrap();
    let data = small_dataset(t.path(), "4");
    let before: Vec<Vec<u8>> =
        ["accounts.jsonl", "events.jsonl", "reports.csv"].iter().map(|f| std::fs::read(data.join(f)).unwrap()).collect();

    let det = t.path().join("detect");
    ok(&["detect", "--data", s(&data), "--out", s(&det)]);
    let preds = table(&det, "predictions");
    let n = load_dataset_dir(&data, &[]).unwrap().accounts.len();
    assert_eq!(preds.rows.len(), 2 * n);
    assert!(det.join("trees.model.json").exists());

    let agg = t.path().join("agg");
    ok(&["aggregate", "--data", s(&data), "--predictions", s(&det.join("predictions.csv")), "--out", s(&agg)]);
    let names = table(&agg, "aggregate_metrics");
    for want in ["human", "meta_vote", "hybrid_late_fusion"] {
        assert!(names.column("strategy").unwrap().contains(&want), "{want}");
    }

    let cv = t.path().join("cv");
    ok(&["cv", "--data", s(&data), "--k", "3", "--inner-k", "3", "--fusion-samples", "50", "--out", s(&cv)]);
    assert_eq!(table(&cv, "cv_folds").rows.len(), 3);
    for f1 in table(&cv, "cv").column("f1").unwrap() {
        assert!((0.0..=1.0).contains(&num(f1)));
    }

    let rt = t.path().join("retrain");
    ok(&["retrain", "--data", s(&data), "--strategy", "self,human", "--out", s(&rt)]);
    let r = table(&rt, "retrain_report");
    assert_eq!(r.header, ["detector", "strategy", "day", "f1_baseline", "f1_retrained", "rel_improvement_pct"]);
    assert_eq!(r.rows.len(), 6);
    for row in r.rows.iter().filter(|row| row[2] == "1") {
        assert_eq!(num(&row[5]), 0.0);
    }

    let hy = t.path().join("hyp");
    ok(&["hypothesis", "--data", s(&data), "--fdr", "--resamples", "500", "--out", s(&hy)]);
    let h = table(&hy, "hypothesis");
    let raw = h.column("p_raw").unwrap();
    let adj = h.column("p_fdr").unwrap();
    for (r, a) in raw.iter().zip(&adj) {
        if !r.is_empty() {
            assert!(num(a) >= num(r) - 1e-12 && num(a) <= 1.0);
        }
    }

    for (f, b) in ["accounts.jsonl", "events.jsonl", "reports.csv"].iter().zip(&before) {
        assert_eq!(&std::fs::read(data.join(f)).unwrap(), b, "{f} was modified");
    }
}

#[test]
fn unknown_names_are_rejected() {
    let t = tempfile::tempdir().unwrap();
    let data = small_dataset(t.path(), "5");
    assert!(!hw(&["detect", "--data", s(&data), "--detectors", "svm", "--out", s(&t.path().join("x"))]).status.success());
    assert!(!hw(&["simulate", "--preset", "psychic"]).status.success());
}
