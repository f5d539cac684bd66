//! End-to-end pipeline tests against the built binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_edgetrust"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn edgetrust");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_triples(path: &Path, triples: &[(&str, &str, &str)]) {
    let body: String = triples
        .iter()
        .map(|(s, r, o)| format!("{s}\t{r}\t{o}\n"))
        .collect();
    fs::write(path, body).unwrap();
}

fn toy_dataset(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf, std::path::PathBuf) {
    let names = ["A", "B", "C", "D", "E", "F"];
    let mut train = Vec::new();
    for i in 0..names.len() {
        for step in 1..3 {
            train.push((names[i], "next", names[(i + step) % names.len()]));
        }
        train.push((names[i], "peer", names[(i + 3) % names.len()]));
    }
    let train_path = dir.join("train.tsv");
    write_triples(&train_path, &train);
    let valid_path = dir.join("valid.tsv");
    write_triples(&valid_path, &[("A", "next", "D"), ("B", "peer", "C")]);
    let test_path = dir.join("test.tsv");
    write_triples(&test_path, &[("C", "next", "A"), ("D", "peer", "B")]);
    (train_path, valid_path, test_path)
}

#[test]
fn prepare_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (train, valid, test) = toy_dataset(tmp.path());
    for out in ["run1", "run2"] {
        run_ok(
            bin()
                .arg("prepare")
                .args(["--condition", "half", "--seed", "7"])
                .arg("--triples")
                .arg(&train)
                .arg("--valid")
                .arg(&valid)
                .arg("--test")
                .arg(&test)
                .arg("--out-dir")
                .arg(tmp.path().join(out)),
        );
    }
    for file in ["graph.kg", "provenance.csv", "config.toml", "summary.txt"] {
        let a = fs::read(tmp.path().join("run1").join(file)).unwrap();
        let b = fs::read(tmp.path().join("run2").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}

#[test]
fn invalid_condition_exits_2_and_lists_names() {
    let tmp = tempfile::tempdir().unwrap();
    let (train, _, _) = toy_dataset(tmp.path());
    let out = bin()
        .arg("prepare")
        .args(["--condition", "bogus"])
        .arg("--triples")
        .arg(&train)
        .arg("--out-dir")
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("full, half, skip, noised, sweep"),
        "stderr: {stderr}"
    );
}

#[test]
fn sweep_grows_edge_count() {
    let tmp = tempfile::tempdir().unwrap();
    let (train, _, _) = toy_dataset(tmp.path());
    let out_dir = tmp.path().join("sweep");
    run_ok(
        bin()
            .arg("prepare")
            .args(["--condition", "sweep", "--fraction", "0.3", "--seed", "3"])
            .arg("--triples")
            .arg(&train)
            .arg("--out-dir")
            .arg(&out_dir),
    );
    let summary = fs::read_to_string(out_dir.join("summary.txt")).unwrap();
    // 18 train triples -> floor(1.3 * 18) = 23 forward edges, all targets.
    assert!(summary.contains("forward_edges = 23"), "{summary}");
    assert!(summary.contains("targets = 23"), "{summary}");
}

#[test]
fn full_pipeline_train_eval_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let (train, valid, test) = toy_dataset(tmp.path());
    let graph_dir = tmp.path().join("graph");
    run_ok(
        bin()
            .arg("prepare")
            .args(["--condition", "full", "--seed", "1"])
            .arg("--triples")
            .arg(&train)
            .arg("--valid")
            .arg(&valid)
            .arg("--test")
            .arg(&test)
            .arg("--out-dir")
            .arg(&graph_dir),
    );
    let graph = graph_dir.join("graph.kg");

    // Two identical training runs must produce identical artifacts.
    let common = [
        "--dim",
        "8",
        "--epochs",
        "5",
        "--negatives",
        "2",
        "--batch-size",
        "8",
        "--seed",
        "9",
    ];
    for out in ["m1", "m2"] {
        run_ok(
            bin()
                .arg("train")
                .arg("--graph")
                .arg(&graph)
                .args(common)
                .arg("--out-dir")
                .arg(tmp.path().join(out)),
        );
    }
    for file in ["checkpoint.bin", "train_log.csv", "config.toml"] {
        let a = fs::read(tmp.path().join("m1").join(file)).unwrap();
        let b = fs::read(tmp.path().join("m2").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical seeds");
    }

    let ckpt = tmp.path().join("m1/checkpoint.bin");
    let eval_dir = tmp.path().join("eval");
    let out = run_ok(
        bin()
            .arg("evaluate")
            .arg("--graph")
            .arg(&graph)
            .arg("--checkpoint")
            .arg(&ckpt)
            .args(["--split", "test"])
            .arg("--out-dir")
            .arg(&eval_dir),
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("filtered MRR"), "{stdout}");
    let report = fs::read_to_string(eval_dir.join("eval_report.txt")).unwrap();
    assert!(report.contains("mrr_filtered = "));
    assert!(report.contains("hits10_filtered = "));
    let ranks = fs::read_to_string(eval_dir.join("ranks.csv")).unwrap();
    assert!(ranks.starts_with("subject,relation,object,side,rank_raw,rank_filtered"));
    // 2 test triples, both sides.
    assert_eq!(ranks.lines().count(), 5);

    // Weight export: one row per edge record (header + 2 * forward).
    let weights = tmp.path().join("weights.csv");
    run_ok(
        bin()
            .arg("export-weights")
            .arg("--graph")
            .arg(&graph)
            .arg("--checkpoint")
            .arg(&ckpt)
            .arg("--out")
            .arg(&weights),
    );
    let body = fs::read_to_string(&weights).unwrap();
    assert!(body.starts_with("edge_id,subject,relation,object,direction,raw,normalized"));
    assert_eq!(body.lines().count(), 1 + 2 * 18);

    // Occlusion scan over an arbitrary (unknown) triple.
    let scan_dir = tmp.path().join("scan");
    run_ok(
        bin()
            .arg("interrogate")
            .args(["A", "peer", "E"])
            .arg("--graph")
            .arg(&graph)
            .arg("--checkpoint")
            .arg(&ckpt)
            .arg("--out-dir")
            .arg(&scan_dir),
    );
    let occ = fs::read_to_string(scan_dir.join("occlusion.csv")).unwrap();
    assert!(occ.starts_with("edge_id,side,subject,relation,object,direction,delta,stderr"));
    assert!(fs::read_to_string(scan_dir.join("occlusion.txt"))
        .unwrap()
        .contains("baseline_probability"));

    // Influencer ranking.
    let inf_dir = tmp.path().join("influencers");
    run_ok(
        bin()
            .arg("influencers")
            .arg("A")
            .args(["-k", "3"])
            .arg("--graph")
            .arg(&graph)
            .arg("--checkpoint")
            .arg(&ckpt)
            .arg("--out-dir")
            .arg(&inf_dir),
    );
    let inf = fs::read_to_string(inf_dir.join("influencers.csv")).unwrap();
    assert!(inf.starts_with("position,edge_id,subject,relation,object,direction,weight,stderr"));
    assert!(inf.lines().count() > 1);
}

#[test]
fn gen_dd_reports_ratio_and_split() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("dd");
    let out = run_ok(
        bin()
            .arg("gen-dd")
            .args(["--p", "0.75", "--q", "0.0", "--nodes", "300", "--seed", "5"])
            .args(["--gold-frac", "0.5", "--add-frac", "0.25"])
            .arg("--out-dir")
            .arg(&out_dir),
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("edge_vertex_ratio="), "{stdout}");
    assert!(stdout.contains("gold="), "{stdout}");
    assert!(out_dir.join("dd_edges.tsv").exists());
    assert!(out_dir.join("graph.kg").exists());
    assert!(out_dir.join("provenance.csv").exists());

    // The emitted graph round-trips through prepare-style loading.
    let kg = edgetrust::snapshot::load(&out_dir.join("graph.kg")).unwrap();
    assert_eq!(kg.num_relations(), 1);
    assert!(kg.num_positive_edges() > 0);
}

#[test]
fn missing_checkpoint_fails_descriptively() {
    let tmp = tempfile::tempdir().unwrap();
    let (train, _, _) = toy_dataset(tmp.path());
    let graph_dir = tmp.path().join("graph");
    run_ok(
        bin()
            .arg("prepare")
            .args(["--condition", "full"])
            .arg("--triples")
            .arg(&train)
            .arg("--out-dir")
            .arg(&graph_dir),
    );
    let out = bin()
        .arg("evaluate")
        .arg("--graph")
        .arg(graph_dir.join("graph.kg"))
        .arg("--checkpoint")
        .arg(tmp.path().join("nope.bin"))
        .arg("--out-dir")
        .arg(tmp.path().join("eval"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("nope.bin"), "{stderr}");
}

#[test]
fn config_file_with_unknown_keys_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    fs::write(&config, "seed = 4\nbogus_key = 1\n").unwrap();
    let (train, _, _) = toy_dataset(tmp.path());
    let out = bin()
        .arg("prepare")
        .arg("--config")
        .arg(&config)
        .args(["--condition", "full"])
        .arg("--triples")
        .arg(&train)
        .arg("--out-dir")
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_ne!(out.status.code(), Some(0));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("bogus_key"), "{stderr}");
}

#[test]
fn config_file_drives_training_and_flags_override() {
    let tmp = tempfile::tempdir().unwrap();
    let (train, valid, test) = toy_dataset(tmp.path());
    let graph_dir = tmp.path().join("graph");
    run_ok(
        bin()
            .arg("prepare")
            .args(["--condition", "full", "--seed", "2"])
            .arg("--triples")
            .arg(&train)
            .arg("--valid")
            .arg(&valid)
            .arg("--test")
            .arg(&test)
            .arg("--out-dir")
            .arg(&graph_dir),
    );
    let config = tmp.path().join("run.toml");
    fs::write(
        &config,
        "[train]\ndim = 6\nepochs = 2\nn_negatives = 2\nbatch_size = 8\nseed = 3\n",
    )
    .unwrap();
    let out_dir = tmp.path().join("model");
    run_ok(
        bin()
            .arg("train")
            .arg("--config")
            .arg(&config)
            .arg("--graph")
            .arg(graph_dir.join("graph.kg"))
            .args(["--epochs", "3"]) // flag overrides the file
            .arg("--out-dir")
            .arg(&out_dir),
    );
    let echoed = fs::read_to_string(out_dir.join("config.toml")).unwrap();
    assert!(echoed.contains("dim = 6"), "{echoed}");
    assert!(echoed.contains("epochs = 3"), "{echoed}");
    let log = fs::read_to_string(out_dir.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4); // header + 3 epochs
}
