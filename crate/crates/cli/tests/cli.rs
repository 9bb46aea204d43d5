use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use srn::image::Image;
use srn::model::build_backbone;
use srn::synth::pnm::{read_image, read_mask, write_image};
use srn::synth::Manifest;
use srn::RunConfig;

const SMALL: &[&str] = &["--model.stages", "1x4,1x4,1x4", "--train.max_iters", "3"];

fn srn(args: &[&str]) -> Output {
    srn_env(args, &[])
}

fn srn_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_srn"));
    cmd.args(args).env_remove("SRN_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn srn")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

fn gen(dir: &Path, n_train: &str, n_test: &str) {
    let o = srn(&[
        "gen",
        "--n-train",
        n_train,
        "--n-test",
        n_test,
        "--difficulty",
        "simple",
        "--seed",
        "7",
        "--out",
        s(dir),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn gen_writes_pairs_manifests_and_config_deterministically() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    gen(a.path(), "64", "16");
    gen(b.path(), "64", "16");
    let train = Manifest::read(&a.path().join("train.txt")).unwrap();
    let test = Manifest::read(&a.path().join("test.txt")).unwrap();
    assert_eq!(train.len() + test.len(), 80);
    assert!(train
        .entries
        .iter()
        .chain(&test.entries)
        .all(|(i, m)| i.is_file() && m.is_file()));
    let cfg = RunConfig::parse(&fs::read_to_string(a.path().join("config.txt")).unwrap()).unwrap();
    assert_eq!((cfg.data.n_train, cfg.data.seed), (64, 7));
    assert_eq!(tree(a.path()), tree(b.path()));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = srn(&["gen", "--difficulty", "brutal", "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("brutal"));
    assert_eq!(
        code(&srn(&["gen", "--out", s(dir.path()), "--train.bogus", "1"])),
        2
    );
    assert_eq!(code(&srn(&["frobnicate"])), 2);
    let o = srn_env(&["gen", "--out", s(dir.path())], &[("SRN_THREADS", "zero")]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&srn(&["--help"])), 0);
}

#[test]
fn unwritable_output_is_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain");
    fs::write(&file, b"x").unwrap();
    let o = srn(&[
        "gen",
        "--n-train",
        "1",
        "--n-test",
        "1",
        "--out",
        s(&file.join("sub")),
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn zero_learning_rate_train_then_predict_and_eval() {
    let data = tempfile::tempdir().unwrap();
    gen(data.path(), "2", "2");
    let run = tempfile::tempdir().unwrap();
    let train = data.path().join("train.txt");
    let mut args = vec!["train", "--data", s(&train), "--out", s(run.path())];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["--train.lr", "0", "--train.seed", "5"]);
    let o = srn(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let cfg =
        RunConfig::parse(&fs::read_to_string(run.path().join("config.txt")).unwrap()).unwrap();
    let init = build_backbone(&cfg.model, 5).unwrap();
    assert_eq!(
        fs::read(run.path().join("final.srnt")).unwrap(),
        init.to_dump()
    );
    let csv = fs::read_to_string(run.path().join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(fs::read_to_string(run.path().join("final.txt"))
        .unwrap()
        .contains("iter=3"));

    // the default initialization leaves every side-output at zero: response 0.5 everywhere
    let pred = tempfile::tempdir().unwrap();
    let ckpt = run.path().join("final.srnt");
    let o = srn(&[
        "predict",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&data.path().join("test.txt")),
        "--out",
        s(pred.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for k in 0..2 {
        let soft = read_image(&pred.path().join(format!("{k:05}.pgm"))).unwrap();
        assert!(soft.data.iter().all(|&v| v == 128.0 / 255.0));
        assert!(pred.path().join(format!("{k:05}_nms.pgm")).is_file());
    }
    assert!(pred.path().join("config.txt").is_file());

    let ev = tempfile::tempdir().unwrap();
    let o = srn(&[
        "eval",
        "--predictions",
        s(pred.path()),
        "--manifest",
        s(&data.path().join("test.txt")),
        "--out",
        s(ev.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("best_f="));
    for f in [
        "pr.csv",
        "summary.txt",
        "settings.txt",
        "pr.svg",
        "config.txt",
    ] {
        assert!(ev.path().join(f).is_file(), "{f}");
    }

    // a checkpoint read against a different architecture is a runtime failure
    let o = srn(&[
        "predict",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&data.path().join("test.txt")),
        "--out",
        s(pred.path()),
        "--model.stages",
        "1x8,1x8,1x8",
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn training_is_reproducible_and_divergence_names_iteration() {
    let data = tempfile::tempdir().unwrap();
    gen(data.path(), "2", "1");
    let train = s(&data.path().join("train.txt")).to_owned();
    let run = |out: &Path, lr: &str| {
        let mut args = vec![
            "train",
            "--data",
            &train,
            "--out",
            s(out),
            "--train.lr",
            lr,
            "--train.momentum",
            "0",
        ];
        args.extend_from_slice(SMALL);
        args.extend_from_slice(&["--model.init", "he"]);
        srn(&args)
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(code(&run(a.path(), "1e-4")), 0);
    assert_eq!(code(&run(b.path(), "1e-4")), 0);
    assert_eq!(
        fs::read(a.path().join("loss.csv")).unwrap(),
        fs::read(b.path().join("loss.csv")).unwrap()
    );
    assert_eq!(
        fs::read(a.path().join("final.srnt")).unwrap(),
        fs::read(b.path().join("final.srnt")).unwrap()
    );

    let c = tempfile::tempdir().unwrap();
    let o = run(c.path(), "1e30");
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("iteration"), "{}", stderr(&o));
}

fn write_responses(dir: &Path, manifest: &Path, f: impl Fn(bool) -> f64) {
    fs::create_dir_all(dir).unwrap();
    for (img, mask) in Manifest::read(manifest).unwrap().entries {
        let m = read_mask(&mask).unwrap();
        let data = m.data.iter().map(|&b| f(b)).collect();
        let name = img.file_stem().unwrap().to_str().unwrap().to_owned();
        write_image(
            &dir.join(format!("{name}.pgm")),
            &Image::new(1, m.width, m.height, data).unwrap(),
        )
        .unwrap();
    }
}

#[test]
fn eval_perfect_empty_missing_and_reproducible() {
    let data = tempfile::tempdir().unwrap();
    gen(data.path(), "1", "4");
    let manifest = data.path().join("test.txt");
    let work = tempfile::tempdir().unwrap();
    let perfect = work.path().join("perfect");
    write_responses(&perfect, &manifest, |b| if b { 1.0 } else { 0.0 });
    let eval = |preds: &Path, out: &Path, threads: &str| {
        srn_env(
            &[
                "eval",
                "--predictions",
                s(preds),
                "--manifest",
                s(&manifest),
                "--out",
                s(out),
            ],
            &[("SRN_THREADS", threads)],
        )
    };
    let (r1, r2) = (work.path().join("r1"), work.path().join("r2"));
    let o = eval(&perfect, &r1, "1");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("best_f=1.000000"));
    assert_eq!(code(&eval(&perfect, &r2, "3")), 0);
    assert_eq!(tree(&r1), tree(&r2));

    let empty = work.path().join("empty");
    write_responses(&empty, &manifest, |_| 0.0);
    let o = eval(&empty, &work.path().join("r3"), "2");
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("best_f=0.000000"));

    fs::remove_file(perfect.join("00002.pgm")).unwrap();
    let o = eval(&perfect, &work.path().join("r4"), "1");
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("00002"), "{}", stderr(&o));
}
