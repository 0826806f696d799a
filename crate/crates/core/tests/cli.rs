use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

fn oudlens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oudlens"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let out = oudlens(&[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_subcommand_exits_2() {
    let out = oudlens(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cooccur_writes_edge_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = fixture("corpus.jsonl");
    let out = oudlens(&[
        "cooccur",
        "--corpus",
        path_str(&corpus),
        "--min-phi",
        "0.2",
        "--min-count",
        "20",
        "--seeds",
        "suboxone,methadone",
        "--out",
        path_str(tmp.path()),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let edges = fs::read_to_string(tmp.path().join("phi_edges.csv")).unwrap();
    assert!(edges.starts_with("source,target,phi\n"));
    for line in edges.lines().skip(1) {
        let phi: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(phi >= 0.2, "{line}");
    }
    let neighbors = fs::read_to_string(tmp.path().join("neighbors.csv")).unwrap();
    assert!(neighbors.contains("suboxon,1,dose,"), "{neighbors}");
    assert!(!tmp.path().join("graph.dot").exists());
}

#[test]
fn dot_format_and_bad_format() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = fixture("corpus.jsonl");
    let ok = oudlens(&[
        "cooccur",
        "--corpus",
        path_str(&corpus),
        "--format",
        "dot",
        "--out",
        path_str(tmp.path()),
    ]);
    assert!(ok.status.success());
    let dot = fs::read_to_string(tmp.path().join("graph.dot")).unwrap();
    assert!(dot.starts_with("graph G {\n"));

    let dir = tmp.path().join("bad");
    let bad = oudlens(&[
        "cooccur",
        "--corpus",
        path_str(&corpus),
        "--format",
        "png",
        "--out",
        path_str(&dir),
    ]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).starts_with("error:"));
    assert!(!dir.exists());
}

#[test]
fn validation_failure_leaves_no_output() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("out");
    let corpus = fixture("corpus.jsonl");
    let missing = tmp.path().join("missing.csv");
    let out = oudlens(&[
        "train",
        "--corpus",
        path_str(&corpus),
        "--labels",
        path_str(&missing),
        "--out",
        path_str(&dir),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.csv"));
    assert!(!dir.exists());

    let out = oudlens(&[
        "topics",
        "fit",
        "--corpus",
        path_str(&corpus),
        "--k",
        "0",
        "--out",
        path_str(&dir),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.exists());
}

#[test]
fn conflicting_label_files_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.csv");
    let b = tmp.path().join("b.csv");
    fs::write(&a, "author,label\nu0001,oud\n").unwrap();
    fs::write(&b, "author,label\nu0001,non_oud\n").unwrap();
    let corpus = fixture("corpus.jsonl");
    let out = oudlens(&[
        "ingest",
        "--corpus",
        path_str(&corpus),
        "--labels",
        path_str(&a),
        "--labels",
        path_str(&b),
        "--out",
        path_str(&tmp.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("u0001"));
}

#[test]
fn ingest_round_trips_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = fixture("corpus.jsonl");
    let labels = fixture("oud_labels.csv");
    let out = oudlens(&[
        "ingest",
        "--corpus",
        path_str(&corpus),
        "--labels",
        path_str(&labels),
        "--out",
        path_str(tmp.path()),
    ]);
    assert!(out.status.success());
    assert_eq!(
        fs::read_to_string(tmp.path().join("corpus.jsonl")).unwrap(),
        fs::read_to_string(&corpus).unwrap()
    );
    let authors = fs::read_to_string(tmp.path().join("authors.csv")).unwrap();
    assert_eq!(authors.lines().count(), 151);
}

#[test]
fn train_then_evaluate_on_held_out_split() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = fixture("corpus.jsonl");
    let labels = fixture("oud_labels.csv");
    let common = ["--corpus", path_str(&corpus), "--labels", path_str(&labels)];
    let mut args = vec![
        "train", "--model", "logreg", "--scheme", "tfidf", "--seed", "4",
    ];
    args.extend(common);
    args.extend(["--out", path_str(tmp.path())]);
    let out = oudlens(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let split = fs::read_to_string(tmp.path().join("split.csv")).unwrap();
    assert_eq!(split.lines().filter(|l| l.contains(",test,")).count(), 45);
    let trained = fs::read_to_string(tmp.path().join("metrics.csv")).unwrap();

    let eval_dir = tmp.path().join("eval");
    let model = tmp.path().join("model.json");
    let split_path = tmp.path().join("split.csv");
    let mut args = vec![
        "evaluate",
        "--model-file",
        path_str(&model),
        "--split",
        path_str(&split_path),
        "--report",
        "csv",
    ];
    args.extend(common);
    args.extend(["--out", path_str(&eval_dir)]);
    let out = oudlens(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let evaluated = fs::read_to_string(eval_dir.join("metrics.csv")).unwrap();
    assert_eq!(trained, evaluated);
    assert!(evaluated.starts_with("model,acc,rec,prec,f1\nLG,"));
}

#[test]
fn cascade_assigns_every_author() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = fixture("corpus.jsonl");
    let l1 = fixture("oud_labels.csv");
    let l2 = fixture("recovery_labels.csv");
    let out = oudlens(&[
        "cascade",
        "--corpus",
        path_str(&corpus),
        "--labels",
        path_str(&l1),
        "--labels",
        path_str(&l2),
        "--stage1",
        "logreg",
        "--stage2",
        "knn",
        "--out",
        path_str(tmp.path()),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let cohorts = fs::read_to_string(tmp.path().join("cohorts.csv")).unwrap();
    assert_eq!(cohorts.lines().count(), 151);
    let metrics = fs::read_to_string(tmp.path().join("metrics.csv")).unwrap();
    let stages: Vec<&str> = metrics
        .lines()
        .skip(1)
        .map(|l| &l[..l.find(',').unwrap()])
        .collect();
    assert_eq!(stages, ["oud", "recovering"]);
    assert!(metrics.contains("oud,LG,") && metrics.contains("recovering,KNN,"));
}

#[test]
fn emotions_per_user_and_per_post() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = fixture("corpus.jsonl");
    let lexicon = fixture("lexicon.tsv");
    let base = [
        "emotions",
        "--corpus",
        path_str(&corpus),
        "--lexicon",
        path_str(&lexicon),
    ];

    let users = tmp.path().join("users");
    let mut args = base.to_vec();
    args.extend(["--per-user", "--out", path_str(&users)]);
    assert!(oudlens(&args).status.success());
    let csv = fs::read_to_string(users.join("emotions.csv")).unwrap();
    assert!(csv.starts_with(
        "author,dominant,anger,anticipation,disgust,fear,joy,negative,positive,sadness,surprise,trust\n"
    ));
    assert_eq!(csv.lines().count(), 151);
    let cohort = fs::read_to_string(users.join("emotion_cohort.csv")).unwrap();
    let total: f64 = cohort
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-3);

    let posts = tmp.path().join("posts");
    let mut args = base.to_vec();
    args.extend(["--window-days", "30", "--out", path_str(&posts)]);
    assert!(oudlens(&args).status.success());
    let csv = fs::read_to_string(posts.join("emotions.csv")).unwrap();
    assert!(csv.starts_with("author,doc_id,dominant,"));
    let rows = csv.lines().count() - 1;
    assert!((150..600).contains(&rows), "{rows}");
}

#[test]
fn topics_fit_and_select() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = fixture("corpus.jsonl");
    let out = oudlens(&[
        "topics",
        "fit",
        "--corpus",
        path_str(&corpus),
        "--k",
        "3",
        "--iters",
        "60",
        "--burn-in",
        "10",
        "--seed",
        "2",
        "--out",
        path_str(tmp.path()),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let topics = fs::read_to_string(tmp.path().join("topics.csv")).unwrap();
    assert!(topics.starts_with("topic,rank,word,probability\n"));
    assert_eq!(topics.lines().count(), 1 + 3 * 8);
    let model = fs::read_to_string(tmp.path().join("topic_model.json")).unwrap();
    assert!(model.contains("\"version\": 1"));

    let sel = tmp.path().join("sel");
    let out = oudlens(&[
        "topics",
        "select",
        "--corpus",
        path_str(&corpus),
        "--k-min",
        "2",
        "--k-max",
        "4",
        "--iters",
        "40",
        "--burn-in",
        "10",
        "--out",
        path_str(&sel),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let scores = fs::read_to_string(sel.join("k_scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 4);
    assert_eq!(scores.lines().filter(|l| l.ends_with(",1")).count(), 1);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("best k = "));
}

#[test]
fn relapse_breakdown_from_events() {
    let tmp = tempfile::tempdir().unwrap();
    let l1 = fixture("oud_labels.csv");
    let l2 = fixture("recovery_labels.csv");
    let events = fixture("events.csv");
    let out = oudlens(&[
        "relapse",
        "--labels",
        path_str(&l1),
        "--labels",
        path_str(&l2),
        "--events",
        path_str(&events),
        "--out",
        path_str(tmp.path()),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(tmp.path().join("cohort.txt")).unwrap();
    assert!(text.contains("relapsed: "));
    let labels = fs::read_to_string(tmp.path().join("relapse_labels.csv")).unwrap();
    let recovering = fs::read_to_string(&l2)
        .unwrap()
        .matches(",recovering")
        .count();
    assert_eq!(labels.lines().count() - 1, recovering);

    let strict = tmp.path().join("strict");
    let out = oudlens(&[
        "relapse",
        "--labels",
        path_str(&l1),
        "--labels",
        path_str(&l2),
        "--events",
        path_str(&events),
        "--window-days",
        "0",
        "--out",
        path_str(&strict),
    ]);
    assert!(out.status.success());
    let relapsed = |s: &str| s.matches(",relapsed").count();
    assert!(
        relapsed(&fs::read_to_string(strict.join("relapse_labels.csv")).unwrap())
            <= relapsed(&labels)
    );
}

#[test]
fn config_values_apply_and_flags_override() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(
        &cfg,
        format!(
            "[input]\ncorpus = [\"{}\"]\n[cooccur]\nmin_phi = 0.9\nformat = \"dot\"\n",
            fixture("corpus.jsonl").display()
        ),
    )
    .unwrap();
    let a = tmp.path().join("a");
    assert!(
        oudlens(&["cooccur", "--config", path_str(&cfg), "--out", path_str(&a)])
            .status
            .success()
    );
    assert!(a.join("graph.dot").exists());

    let b = tmp.path().join("b");
    let out = oudlens(&[
        "cooccur",
        "--config",
        path_str(&cfg),
        "--format",
        "edge_csv",
        "--min-phi",
        "0.3",
        "--out",
        path_str(&b),
    ]);
    assert!(out.status.success());
    assert!(b.join("phi_edges.csv").exists());
    let strict = fs::read_to_string(a.join("graph.dot"))
        .unwrap()
        .matches(" -- ")
        .count();
    let loose = fs::read_to_string(b.join("phi_edges.csv"))
        .unwrap()
        .lines()
        .count()
        - 1;
    assert!(strict <= loose);

    fs::write(&cfg, "[cooccur]\nmin_phy = 0.2\n").unwrap();
    let out = oudlens(&[
        "cooccur",
        "--config",
        path_str(&cfg),
        "--out",
        path_str(&tmp.path().join("c")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("min_phy"));
}

#[test]
fn stopword_and_case_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("c.jsonl");
    fs::write(
        &corpus,
        "{\"id\":\"1\",\"author\":\"a\",\"subreddit\":\"s\",\"created_utc\":0,\"parent_id\":null,\"title\":null,\"body\":\"Running the Tests\"}\n",
    )
    .unwrap();
    let stop = tmp.path().join("stop.txt");
    fs::write(&stop, "tests\n").unwrap();
    let out_dir = tmp.path().join("o");
    let out = oudlens(&[
        "preprocess",
        "--corpus",
        path_str(&corpus),
        "--stopwords",
        path_str(&stop),
        "--no-stem",
        "--keep-case",
        "--out",
        path_str(&out_dir),
    ]);
    assert!(out.status.success());
    let tokens = fs::read_to_string(out_dir.join("tokens.jsonl")).unwrap();
    assert!(
        tokens.contains("[\"Running\",\"the\",\"Tests\"]"),
        "{tokens}"
    );

    let out = oudlens(&[
        "preprocess",
        "--corpus",
        path_str(&corpus),
        "--out",
        path_str(&out_dir),
    ]);
    assert!(out.status.success());
    let tokens = fs::read_to_string(out_dir.join("tokens.jsonl")).unwrap();
    assert!(tokens.contains("[\"run\",\"test\"]"), "{tokens}");
}
