use std::path::Path;
use std::process::{Command, Output};

use progclust_core::metrics::DistanceMatrix;

fn progclust(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_progclust"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const INPUT: [&str; 4] = ["--visits", "data/visits.csv", "--outcomes", "data/outcomes.csv"];

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), "k_max = 3\nn_epochs = 100\n").unwrap();
    ok(&progclust(dir.path(), &["--seed", "3", "--out", "data", "synth", "--patients", "40"]));
    dir
}

fn with_input<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(INPUT).collect()
}

#[test]
fn grid_then_report_replays_identically() {
    let dir = setup();
    let stdout = ok(&progclust(dir.path(), &with_input(&["--config", "small.toml", "--out", "g", "grid"])));
    assert!(stdout.contains("0 failed"), "{stdout}");
    let results = std::fs::read_to_string(dir.path().join("g/results.csv")).unwrap();
    assert!(results.starts_with("workflow,k,cluster_sizes,silhouette_mean,silhouette_std,logrank_p_max,lrs_min\n"));
    // 4 measures x 5 cells x k in {2,3}, plus 9 baselines
    assert_eq!(results.lines().count(), 1 + 40 + 9);

    ok(&progclust(dir.path(), &["--out", "r", "report", "--manifest", "g/results.json"]));
    for f in ["results.csv", "assignments.csv", "embedding.csv", "km_curves.csv"] {
        let a = std::fs::read(dir.path().join("g").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("r").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn stage_commands_write_their_artifacts() {
    let dir = setup();
    for cmd in ["ingest", "fit", "features", "label", "train-wsd"] {
        ok(&progclust(dir.path(), &with_input(&["--out", "o", cmd])));
    }
    ok(&progclust(dir.path(), &with_input(&["--out", "o", "dist", "--measure", "euc"])));
    ok(&progclust(dir.path(), &with_input(&["--config", "small.toml", "--out", "o", "embed", "--measure", "MAN"])));
    ok(&progclust(dir.path(), &with_input(&["--out", "o", "cluster", "--workflow", "COS_AHC_3"])));
    for f in [
        "visits.csv",
        "outcomes.csv",
        "exclusions.json",
        "fits.csv",
        "features.csv",
        "pairs.csv",
        "labels.csv",
        "label_model.json",
        "wsd_weights.json",
        "dist_EUC.csv",
        "audit_EUC.json",
        "embedding.csv",
        "embedding_MAN.csv",
        "assignments.csv",
    ] {
        assert!(dir.path().join("o").join(f).exists(), "{f}");
    }
    let fits = std::fs::read_to_string(dir.path().join("o/fits.csv")).unwrap();
    assert_eq!(fits.lines().count(), 41);
    let pairs = std::fs::read_to_string(dir.path().join("o/pairs.csv")).unwrap();
    assert_eq!(pairs.lines().count(), 1 + 40 * 39 / 2);

    let bin = std::fs::File::open(dir.path().join("o/dist_EUC.bin")).unwrap();
    let d = DistanceMatrix::read_binary(std::io::BufReader::new(bin)).unwrap();
    assert_eq!(d.n, 40);
    assert!((0..d.n).all(|i| d.get(i, i) == 0.0));

    let assignments = std::fs::read_to_string(dir.path().join("o/assignments.csv")).unwrap();
    assert_eq!(assignments.lines().count(), 41);
    assert!(assignments.lines().skip(1).all(|l| l.starts_with("COS_AHC_3,")));
}

#[test]
fn eval_reports_each_workflow() {
    let dir = setup();
    let stdout = ok(&progclust(
        dir.path(),
        &with_input(&["--out", "e", "eval", "--workflow", "GOM_2,MAN_KMD_2,HAL_AHC_4"]),
    ));
    assert!(stdout.contains("GOM_2: sizes"), "{stdout}");
    let results = std::fs::read_to_string(dir.path().join("e/results.csv")).unwrap();
    let names: Vec<&str> = results.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["GOM_2", "MAN_KMD_2", "HAL_AHC_4"]);
}

#[test]
fn invalid_input_is_rejected() {
    let dir = setup();
    let out = progclust(dir.path(), &with_input(&["--out", "x", "cluster", "--workflow", "MAN_KME_3"]));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("k-means needs embedded coordinates"));

    std::fs::write(dir.path().join("bad.toml"), "kmax = 3\n").unwrap();
    let out = progclust(dir.path(), &with_input(&["--config", "bad.toml", "--out", "x", "fit"]));
    assert_eq!(out.status.code(), Some(2));

    let out = progclust(dir.path(), &["--out", "x", "fit", "--visits", "missing.csv", "--outcomes", "data/outcomes.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.csv"));
}
