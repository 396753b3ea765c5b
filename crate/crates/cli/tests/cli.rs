use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"
[data]
ar_train_slices = 4
heldout_slices = 2
eval_batch_size = 4

[tokenizer]
base_width = 8
codebook_size = 64
extractor_widths = [4, 4, 8, 8]

[tokenizer_train]
epochs = 1
adv_start_step = 0

[ar]
embed_dim = 16
heads = 2

[ar_train]
steps = 2
warmup_steps = 1

[distill]
steps = 2
batch_size = 2
eval_every = 1

[decode]
top_k = 64
"#;

fn nasp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nasp"))
        .args(args)
        .env_remove("NASP_SEED")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let out = nasp(args);
    assert!(out.status.success(), "nasp {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn metrics(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap()
}

#[test]
fn make_masks_hits_budget_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        ok(&["make-masks", "--pattern", "cartesian_y", "--accel", "32", "--shape", "256x256", "--seed", "3", "--out", s(out)]);
    }
    let file = "cartesian_y_r32.mrmk";
    let bytes = std::fs::read(a.join(file)).unwrap();
    assert_eq!(bytes, std::fs::read(b.join(file)).unwrap());
    let m = nasp_core::fourier::SamplingMask::from_bytes(&bytes).unwrap();
    assert_eq!(m.count(), 2048);
    assert!(a.join("cartesian_y_r32.png").exists());
}

#[test]
fn make_masks_all_patterns() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["make-masks", "--pattern", "all", "--accel", "8", "--shape", "64x64", "--seed", "1", "--out", s(tmp.path())]);
    let pngs = std::fs::read_dir(tmp.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(pngs, 4);
}

#[test]
fn reference_against_itself_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let eval = tmp.path().join("eval");
    ok(&["gen-data", "--n", "3", "--val", "3", "--out", s(&data)]);
    ok(&["evaluate", "--recon-dir", s(&data), "--ref-dir", s(&data), "--no-perceptual", "--out", s(&eval)]);
    let m = metrics(&eval);
    assert_eq!(m["slices"], 6);
    assert_eq!(m["psnr_mean"].as_f64().unwrap(), 100.0);
    assert!((m["ssim_mean"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["gen-data", "--n", "2", "--val", "1", "--out", s(&data)]);

    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[ar]\nwidth = 3\n").unwrap();
    let out = nasp(&["train-tokenizer", "--config", s(&bad), "--data", s(&data), "--out", s(&tmp.path().join("t"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("width"));

    let missing = tmp.path().join("nope");
    let out = nasp(&["train-ar", "--tokenizer", s(&missing), "--data", s(&data), "--out", s(&tmp.path().join("a"))]);
    assert_eq!(out.status.code(), Some(3));

    let out = Command::new(env!("CARGO_BIN_EXE_nasp"))
        .args(["train-tokenizer", "--data", s(&data), "--out", s(&tmp.path().join("t"))])
        .env("NASP_SEED", "minus one")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    assert_eq!(nasp(&["make-masks", "--pattern", "spiral", "--accel", "8", "--out", s(tmp.path())]).status.code(), Some(2));
    assert_eq!(nasp(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn tiny_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |n: &str| tmp.path().join(n);
    let cfg = p("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let c = s(&cfg);
    ok(&["gen-data", "--n", "4", "--val", "2", "--out", s(&p("data"))]);
    ok(&["train-tokenizer", "--config", c, "--data", s(&p("data")), "--out", s(&p("tok"))]);
    ok(&[
        "train-ar", "--config", c, "--independent-masks", "--tokenizer", s(&p("tok")), "--data", s(&p("data")),
        "--out", s(&p("ar")),
    ]);
    let resolved = std::fs::read_to_string(p("ar").join("resolved_config.toml")).unwrap();
    assert!(resolved.contains("independent_masks = true"), "{resolved}");
    ok(&[
        "distill", "--config", c, "--student", s(&p("ar")), "--teacher", s(&p("ar")), "--tokenizer", s(&p("tok")),
        "--data", s(&p("data")), "--out", s(&p("dist")),
    ]);
    let d = metrics(&p("dist"));
    assert_eq!(d["teacher_hash_before"], d["teacher_hash_after"]);
    assert!(p("ar").join("timing.json").exists());

    for out in ["r1", "r2"] {
        ok(&[
            "reconstruct", "--config", c, "--input", s(&p("data")), "--models", s(&p("tok")), "--models",
            s(&p("dist")), "--out", s(&p(out)),
        ]);
    }
    for id in ["slice_0004", "slice_0005"] {
        let file = format!("slices/{id}.mrsl");
        assert_eq!(std::fs::read(p("r1").join(&file)).unwrap(), std::fs::read(p("r2").join(&file)).unwrap());
        let tokens = format!("tokens/{id}.json");
        assert_eq!(std::fs::read(p("r1").join(&tokens)).unwrap(), std::fs::read(p("r2").join(&tokens)).unwrap());
    }
    ok(&["reconstruct", "--input", s(&p("data")), "--zero-filled", "--out", s(&p("zf"))]);

    // the teacher cannot reconstruct without the fully sampled image
    let out = nasp(&[
        "reconstruct", "--input", s(&p("data")), "--models", s(&p("tok")), "--models",
        s(&p("ar").join("ar-teacher")), "--out", s(&p("bad")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    for (run, out) in [("r1", "e1"), ("zf", "e2")] {
        ok(&["evaluate", "--recon-dir", s(&p(run)), "--ref-dir", s(&p("data")), "--no-perceptual", "--out", s(&p(out))]);
    }
    ok(&[
        "report", "--eval", &format!("model={}", s(&p("e1"))), "--eval", &format!("zf={}", s(&p("e2"))), "--out",
        s(&p("report")),
    ]);
    for f in ["groups.csv", "comparison.csv", "psnr.png", "ssim.png", "metrics.json"] {
        assert!(p("report").join(f).exists(), "{f}");
    }
    let comparison = std::fs::read_to_string(p("report").join("comparison.csv")).unwrap();
    assert!(comparison.lines().any(|l| l.starts_with("model,all,2,")), "{comparison}");
}
