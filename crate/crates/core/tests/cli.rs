use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dcc::constraints::load_constraints;
use dcc::datasets::{make_blobs, write_delimited, BlobSpec};
use dcc::network::{load_params, pretrain_sdae, save_params, ArchitectureSpec, PretrainConfig};
use dcc::tensor::Tensor;
use dcc::trainer::predict;

const BLOBS: &str = "clusters=3,per_cluster=30,dim=4,separation=8,seed=1";

fn dcc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcc")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = dcc(args);
    assert!(
        out.status.success(),
        "dcc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

const SMALL_NET: [&str; 8] = [
    "--hidden",
    "16",
    "--embedding-dim",
    "3",
    "--layer-epochs",
    "5",
    "--finetune-epochs",
    "10",
];

fn blob_args<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["--data", BLOBS, "--data-format", "blobs", "--batch-size", "32", "--epochs", "3"];
    v.extend_from_slice(&SMALL_NET);
    v.extend_from_slice(extra);
    v
}

fn run(cmd: &str, extra: &[&str]) -> String {
    let mut args = vec![cmd];
    args.extend(blob_args(extra));
    ok(&args)
}

fn pretrained(dir: &Path) -> String {
    let model = path(dir, "pre.dccm");
    run("pretrain", &["--model-out", &model]);
    model
}

#[test]
fn missing_data_is_a_usage_error() {
    let out = dcc(&["train", "--k", "3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--data"));
    assert!(!dcc(&["frobnicate"]).status.success());
    let bad_flag = dcc(&["train", "--data", BLOBS, "--data-format", "blobs", "--loss-flags", "bogus"]);
    assert_eq!(bad_flag.status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_nonzero() {
    let out = dcc(&["evaluate", "--data", "/nonexistent.csv", "--model-in", "/nonexistent.dccm"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn train_is_deterministic_and_evaluate_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let model = pretrained(dir.path());
    let cons = path(dir.path(), "cons.jsonl");
    ok(&["gen-constraints", "--data", BLOBS, "--data-format", "blobs", "--kind", "pairwise", "--count", "40", "--out", &cons]);
    assert!(load_constraints(Path::new(&cons)).unwrap().pairwise.len() >= 40);

    let mut reports = Vec::new();
    let mut printed = Vec::new();
    for i in 0..2 {
        let report = path(dir.path(), &format!("train{i}.jsonl"));
        let out_model = path(dir.path(), &format!("trained{i}.dccm"));
        printed.push(run(
            "train",
            &["--model-in", &model, "--constraints", &cons, "--seed", "4", "--report-out", &report, "--model-out", &out_model],
        ));
        reports.push((std::fs::read(&report).unwrap(), std::fs::read(&out_model).unwrap()));
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(printed[0], printed[1]);
    assert!(printed[0].starts_with("acc="));

    let text = String::from_utf8(reports[0].0.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[..3].iter().all(|l| l.contains("\"kind\":\"epoch\"")));
    assert!(lines[3].contains("\"kind\":\"final\""));

    let trained = path(dir.path(), "trained0.dccm");
    let evaluated = run("evaluate", &["--model-in", &trained]);
    assert_eq!(evaluated, printed[0]);
}

#[test]
fn evaluate_perfect_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let ds = make_blobs(&BlobSpec {
        num_clusters: 3,
        per_cluster: 20,
        dim: 2,
        separation: 40.0,
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    let spec = ArchitectureSpec {
        input_dim: 2,
        hidden_dims: vec![8],
        embedding_dim: 2,
    };
    let mut net = pretrain_sdae(
        &spec,
        &ds.x,
        &PretrainConfig {
            layer_epochs: 20,
            finetune_epochs: 40,
            batch_size: 16,
            ..Default::default()
        },
    )
    .unwrap();
    // centroids at the class means of the embedding
    let z = net.embed(&ds.x).unwrap();
    let y = ds.y.clone().unwrap();
    let mut mu = vec![0.0; 3 * 2];
    for (i, &c) in y.iter().enumerate() {
        for j in 0..2 {
            mu[c * 2 + j] += z.row(i)[j] / 20.0;
        }
    }
    net.attach_centroids(Tensor::matrix(3, 2, mu).unwrap());
    let (_, labels) = predict(&net, &ds.x).unwrap();
    assert_eq!(labels, y);

    let model = path(dir.path(), "perfect.dccm");
    let data = path(dir.path(), "blobs.csv");
    save_params(Path::new(&model), &net).unwrap();
    write_delimited(Path::new(&data), &ds.x, Some(&y)).unwrap();
    let report = path(dir.path(), "eval.jsonl");
    let emb = path(dir.path(), "z.csv");
    let out = ok(&["evaluate", "--data", &data, "--model-in", &model, "--report-out", &report, "--embedding-out", &emb]);
    assert_eq!(out.trim(), "acc=1.0 nmi=1.0");
    assert!(std::fs::read_to_string(&report).unwrap().contains("\"acc\":1.0"));
    assert_eq!(std::fs::read_to_string(&emb).unwrap().lines().count(), 60);
}

#[test]
fn config_file_yields_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let model = pretrained(dir.path());
    let cfg = path(dir.path(), "run.cfg");
    std::fs::write(&cfg, "epochs = 2\nloss_flags = global\nseed = 9\n").unwrap();
    let a = path(dir.path(), "a.jsonl");
    let b = path(dir.path(), "b.jsonl");
    ok(&["train", "--config", &cfg, "--data", BLOBS, "--data-format", "blobs", "--model-in", &model, "--batch-size", "32", "--report-out", &a]);
    assert_eq!(std::fs::read_to_string(&a).unwrap().lines().count(), 3);
    ok(&["train", "--config", &cfg, "--epochs", "1", "--data", BLOBS, "--data-format", "blobs", "--model-in", &model, "--batch-size", "32", "--report-out", &b]);
    let text = std::fs::read_to_string(&b).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().next().unwrap().contains("\"global_size\":") && !text.contains("\"global_size\":0.0,"));
}

#[test]
fn csv_training_without_model_pretrains_inline() {
    let dir = tempfile::tempdir().unwrap();
    let ds = make_blobs(&BlobSpec {
        num_clusters: 3,
        per_cluster: 20,
        dim: 4,
        separation: 8.0,
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    let data = path(dir.path(), "d.csv");
    write_delimited(Path::new(&data), &ds.x, ds.y.as_deref()).unwrap();
    let model = path(dir.path(), "m.dccm");
    let diff = path(dir.path(), "diff.jsonl");
    ok(&["gen-constraints", "--data", &data, "--kind", "difficulty", "--out", &diff]);
    let mut args = vec![
        "train", "--data", &data, "--constraints", &diff, "--epochs", "2", "--batch-size", "16", "--model-out", &model,
        "--eq6-literal", "--loss-flags", "difficulty",
    ];
    args.extend_from_slice(&SMALL_NET);
    let out = ok(&args);
    assert!(out.starts_with("acc="));
    assert_eq!(load_params(Path::new(&model)).unwrap().centroids.unwrap().k, 3);
}

#[test]
fn generated_difficulty_and_triplets() {
    let dir = tempfile::tempdir().unwrap();
    let model = pretrained(dir.path());
    let diff = path(dir.path(), "diff.jsonl");
    let trip = path(dir.path(), "trip.jsonl");
    run("gen-constraints", &["--kind", "difficulty", "--out", &diff]);
    run("gen-constraints", &["--kind", "triplet", "--count", "25", "--model-in", &model, "--out", &trip]);
    let t = load_constraints(Path::new(&trip)).unwrap();
    assert_eq!(t.triplets.len(), 25);
    let d = load_constraints(Path::new(&diff)).unwrap();
    assert_eq!(d.difficulty.len(), 90);
    assert!(d.difficulty.values().all(|&v| v == 1.0 || v == -0.1));

    let out = run("train", &["--model-in", &model, "--constraints", &trip]);
    assert!(out.starts_with("acc="));
}

fn twice(dir: &Path, cmd: &str, extra: &[&str]) -> (Vec<u8>, Vec<u8>) {
    let files: Vec<PathBuf> = (0..2).map(|i| dir.join(format!("{cmd}{i}.jsonl"))).collect();
    for f in &files {
        let mut args = extra.to_vec();
        let f = f.to_str().unwrap();
        args.extend(["--report-out", f]);
        run(cmd, &args);
    }
    (std::fs::read(&files[0]).unwrap(), std::fs::read(&files[1]).unwrap())
}

#[test]
fn experiment_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let model = pretrained(dir.path());
    let (a, b) = twice(dir.path(), "sweep", &["--model-in", &model, "--counts", "0,20", "--sets", "2"]);
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().filter(|l| l.contains("\"kind\":\"run\"")).count(), 5);
    assert!(text.lines().last().unwrap().contains("negative_ratio"));

    let (a, b) = twice(dir.path(), "negative-study", &["--model-in", &model, "--count", "20", "--sets", "2"]);
    assert_eq!(a, b);

    let (a, b) = twice(dir.path(), "size-report", &["--model-in", &model]);
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.contains("with_global") && text.contains("without_global"));
}
