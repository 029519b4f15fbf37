use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn captionlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_captionlab")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = captionlab(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, n: usize, extra: &[&str]) {
    let n = n.to_string();
    let mut args = vec!["synth-data", "--n", &n, "--grid", "4x4", "--channels", "6", "--seed", "3", "--out", s(dir)];
    args.extend_from_slice(extra);
    ok(&args);
}

fn files_under(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Memorizes five one-reference scenes, validating on the training set itself.
fn memorized(tmp: &Path, arch: &str) -> (PathBuf, PathBuf) {
    let data = tmp.join(format!("data_{arch}"));
    synth(&data, 5, &["--references", "1", "--max-objects", "1"]);
    let run = tmp.join(format!("run_{arch}"));
    ok(&[
        "train", "--data", s(&data), "--val-data", s(&data), "--out", s(&run), "--arch", arch,
        "--epochs", "80", "--lr", "1e-2", "--batch-size", "1", "--units", "24", "--label-epsilon", "0",
    ]);
    (data, run.join("checkpoints").join("epoch_080.ckpt"))
}

#[test]
fn synth_data_is_deterministic_and_rejects_empty_sets() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, 12, &[]);
    synth(&b, 12, &[]);
    assert_eq!(files_under(&a), files_under(&b));
    assert_eq!(fs::read_to_string(a.join("manifest.tsv")).unwrap().lines().count(), 12);

    let out = captionlab(&["synth-data", "--n", "0", "--out", s(&tmp.path().join("c"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--n"));
}

#[test]
fn train_writes_one_checkpoint_and_row_per_epoch() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 10, &[]);
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let args = [
            "train", "--data", s(&data), "--out", s(&out), "--arch", "focalis", "--epochs", "2", "--units", "8",
            "--embed-dim", "8", "--seed", "4",
        ];
        let stdout = ok(&args);
        assert_eq!(stdout.lines().filter(|l| l.starts_with("epoch")).count(), 2, "{stdout}");
        out
    };
    let first = run("one");
    for e in 1..=2 {
        assert!(first.join(format!("checkpoints/epoch_{e:03}.ckpt")).is_file());
    }
    let csv = fs::read_to_string(first.join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let second = run("two");
    assert_eq!(csv, fs::read_to_string(second.join("loss.csv")).unwrap());

    let out = captionlab(&["train", "--data", s(&data), "--out", s(&tmp.path().join("x")), "--arch", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    for arch in ["genesis", "contexta", "clarity", "focalis"] {
        assert!(err.contains(arch), "{err}");
    }

    let out = captionlab(&["train", "--data", s(&tmp.path().join("nowhere")), "--out", s(&tmp.path().join("y"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn evaluate_scores_a_memorized_set_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, ckpt) = memorized(tmp.path(), "focalis");
    let metrics = |flag: &[&str], name: &str| {
        let out = tmp.path().join(name);
        let mut args = vec!["evaluate", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&out)];
        args.extend_from_slice(flag);
        let stdout = ok(&args);
        (stdout, fs::read(&out).unwrap())
    };
    let (stdout, _) = metrics(&["--beam", "3"], "beam3.csv");
    assert!(stdout.contains("BLEU-4 1.0000"), "{stdout}");
    let (_, beam1) = metrics(&["--beam", "1"], "beam1.csv");
    let (_, greedy) = metrics(&["--greedy"], "greedy.csv");
    assert_eq!(beam1, greedy);
}

#[test]
fn evaluate_reports_missing_and_corrupt_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 3, &[]);
    let missing = captionlab(&["evaluate", "--checkpoint", s(&tmp.path().join("none.ckpt")), "--data", s(&data)]);
    assert_eq!(missing.status.code(), Some(1));

    let bad = tmp.path().join("bad.ckpt");
    fs::write(&bad, b"not a checkpoint").unwrap();
    let corrupt = captionlab(&["evaluate", "--checkpoint", s(&bad), "--data", s(&data)]);
    assert_eq!(corrupt.status.code(), Some(1));
    assert!(stderr(&corrupt).contains("malformed checkpoint"), "{}", stderr(&corrupt));
    assert_ne!(stderr(&missing), stderr(&corrupt));
}

#[test]
fn caption_writes_one_heatmap_per_word() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 6, &[]);
    let features = data.join("features/scene_00000.cfg");
    let train = |arch: &str| {
        let out = tmp.path().join(arch);
        ok(&[
            "train", "--data", s(&data), "--out", s(&out), "--arch", arch, "--epochs", "1", "--units", "8",
            "--embed-dim", "8",
        ]);
        out.join("checkpoints/epoch_001.ckpt")
    };

    let pooled = train("genesis");
    let maps = tmp.path().join("maps_g");
    let out = captionlab(&["caption", "--checkpoint", s(&pooled), "--features", s(&features), "--heatmaps", s(&maps)]);
    assert_eq!(out.status.code(), Some(2));

    let ckpt = train("focalis");
    let maps = tmp.path().join("maps_f");
    let args = [
        "caption", "--checkpoint", s(&ckpt), "--features", s(&features), "--max-len", "6", "--heatmaps", s(&maps),
    ];
    let first = ok(&args);
    assert_eq!(first, ok(&args));
    let words = first.lines().next().unwrap().split_whitespace().count();
    let pgms = fs::read_dir(&maps)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pgm"))
        .count();
    assert_eq!(pgms, words);
}

fn checkpoint_dir(tmp: &Path, epochs: &[usize]) -> PathBuf {
    let dir = tmp.join("ckpts");
    fs::create_dir_all(&dir).unwrap();
    for e in epochs {
        fs::write(dir.join(format!("epoch_{e:03}.ckpt")), b"").unwrap();
    }
    dir
}

fn champion(dir: &Path, scores: &str) -> String {
    let file = dir.join("scores.csv");
    fs::write(&file, scores).unwrap();
    let out = ok(&["select-champion", "--checkpoints", s(dir), "--scores", s(&file)]);
    let line = out.lines().find(|l| l.starts_with("champion: ")).unwrap();
    Path::new(&line["champion: ".len()..]).file_name().unwrap().to_string_lossy().into_owned()
}

#[test]
fn select_champion_takes_the_best_scored_epoch() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = checkpoint_dir(tmp.path(), &[10, 13, 25]);
    assert_eq!(champion(&dir, "epoch,bleu4\n10,0.4192\n13,0.4650\n25,0.1856\n"), "epoch_013.ckpt");
    assert_eq!(champion(&dir, "10,0.5\n13,0.5\n25,0.5\n"), "epoch_010.ckpt");

    let single = tempfile::tempdir().unwrap();
    let dir = checkpoint_dir(single.path(), &[7]);
    assert_eq!(champion(&dir, "7,0.0\n"), "epoch_007.ckpt");

    let empty = tempfile::tempdir().unwrap();
    let out = captionlab(&["select-champion", "--checkpoints", s(empty.path()), "--scores", "x.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("no epoch_NNN.ckpt"));
}

#[test]
fn ablate_reports_every_architecture_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tiny.ini");
    fs::write(
        &cfg,
        "[data]\ngrid_h = 4\ngrid_w = 4\nchannels = 4\nn_val = 3\nn_test = 3\n\n\
         [model]\nembed_dim = 4\ndecoder_units = 6\nencoder_units = 6\nattn_dim = 6\n\n\
         [beam]\nbeam_width = 2\n",
    )
    .unwrap();
    let out = tmp.path().join("abl");
    let stdout = ok(&[
        "ablate", "--config", s(&cfg), "--out", s(&out), "--scenes", "12", "--epochs", "1", "--seeds", "0,1,2",
        "--quiet",
    ]);
    assert!(stdout.contains("mean BLEU-4 focalis > contexta: "), "{stdout}");
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 3);
    assert_eq!(fs::read_dir(out.join("metrics")).unwrap().count(), 12);
    let md = fs::read_to_string(out.join("report.md")).unwrap();
    assert!(md.contains("decoder_units = 6"));
    let spec = fs::read_to_string(out.join("spec.txt")).unwrap();
    assert!(spec.contains("seeds = 0,1,2"), "{spec}");

    let bad = captionlab(&["ablate", "--config", s(&cfg), "--out", s(&out), "--scenes", "5"]);
    assert_eq!(bad.status.code(), Some(2));
}
