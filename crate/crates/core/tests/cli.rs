use std::path::Path;
use std::process::Command;

use biosen::cli::{parse_config, run, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};
use biosen::dsp::read_wav;
use biosen::model::count_flops;

fn run_ok(args: &[&str]) -> String {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(std::iter::once("biosen").chain(args.iter().copied()), &mut out, &mut err);
    assert_eq!(code, EXIT_OK, "{}", String::from_utf8_lossy(&err));
    String::from_utf8(out).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn flops_table_total_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    let text = r#"{"encoder_channels": [4, 8], "msda_heads": 2}"#;
    std::fs::write(&cfg, text).unwrap();
    let table = run_ok(&["flops", "--config", s(&cfg), "--frames", "40"]);
    let (model, _) = parse_config(text).unwrap();
    let total = count_flops(&model, (model.stft.n_bins(), 40)).unwrap().total;
    let last = table.lines().last().unwrap();
    assert!(last.starts_with("total") && last.ends_with(&total.to_string()), "{last}");
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        run_ok(&["synth", "--out-dir", s(d), "--n", "4", "--snr", "-10,-5", "--seed", "9", "--seconds", "0.25"]);
    }
    for sub in ["noisy", "clean"] {
        let mut names: Vec<_> = std::fs::read_dir(a.join(sub)).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert_eq!(names.len(), 4);
        for n in names {
            assert_eq!(std::fs::read(a.join(sub).join(&n)).unwrap(), std::fs::read(b.join(sub).join(&n)).unwrap());
        }
    }
}

#[test]
fn train_enhance_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("tiny.ckpt");
    let cfg = dir.path().join("tiny.json");
    let json = serde_json::json!({
        "n_fft": 64, "hop": 16, "encoder_channels": [2, 4], "msda_heads": 2,
        "bhme_kernels": [3, 5], "eagc_width": 8, "batch_size": 2, "segment_seconds": 0.05,
        "max_steps": 2, "eval_every": 2, "val_items": 2, "seed": 4, "checkpoint": s(&ckpt),
    });
    std::fs::write(&cfg, json.to_string()).unwrap();
    let log = run_ok(&["train", "--config", s(&cfg)]);
    assert!(log.contains("step      2"), "{log}");
    assert!(ckpt.exists());

    let data = dir.path().join("data");
    run_ok(&["synth", "--out-dir", s(&data), "--n", "2", "--snr", "-5,-5", "--seed", "1", "--seconds", "0.3"]);
    let noisy = data.join("noisy").join("val-000000.wav");
    let enhanced = dir.path().join("enh.wav");
    run_ok(&["enhance", "--checkpoint", s(&ckpt), "--in", s(&noisy), "--out", s(&enhanced)]);
    let (x, y) = (read_wav(&noisy).unwrap(), read_wav(&enhanced).unwrap());
    assert_eq!((y.len(), y.sample_rate), (x.len(), x.sample_rate));

    let report = dir.path().join("report.json");
    let text = run_ok(&[
        "evaluate",
        "--checkpoint",
        s(&ckpt),
        "--noisy-dir",
        s(&data.join("noisy")),
        "--clean-dir",
        s(&data.join("clean")),
        "--report",
        s(&report),
    ]);
    assert!(!text.is_empty());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["n_items"], 2);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_biosen");
    let code = |args: &[&str]| Command::new(bin).args(args).output().unwrap().status.code();
    assert_eq!(code(&["--help"]), Some(EXIT_OK));
    assert_eq!(code(&["flops"]), Some(EXIT_USAGE));
    assert_eq!(code(&["flops", "--config", "/nonexistent/c.json", "--frames", "3"]), Some(EXIT_RUNTIME));
}
