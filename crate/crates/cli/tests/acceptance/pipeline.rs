use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use nasp_core::dataio::sha256_hex;
use serde_json::Value;

use crate::{ensure, Outcome};

const BUDGET_SECS: f64 = 1800.0;

struct Run {
    root: PathBuf,
    secs: f64,
    teacher_before: String,
    teacher_after: String,
}

fn nasp(args: &[&str]) -> Result<(), String> {
    let t = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_nasp"))
        .args(args)
        .env_remove("NASP_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    eprintln!("  nasp {} ({:.0}s)", args[0], t.elapsed().as_secs_f64());
    if !out.status.success() {
        return Err(format!(
            "nasp {} exited with {}: {}",
            args[0],
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(())
}

/// `name:sha256` of every file in a directory, in name order.
fn dir_hash(dir: &Path) -> Result<String, String> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| format!("{}: {e}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    names.sort();
    let mut out = String::new();
    for p in names {
        let bytes = std::fs::read(&p).map_err(|e| e.to_string())?;
        out += &format!("{}:{} ", p.file_name().unwrap().to_string_lossy(), sha256_hex(&bytes));
    }
    Ok(out)
}

fn execute() -> Result<Run, String> {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance_desk");
    let _ = std::fs::remove_dir_all(&root);
    std::fs::create_dir_all(&root).map_err(|e| e.to_string())?;
    let p = |name: &str| root.join(name).to_string_lossy().into_owned();
    let (data, tok, ar, dist) = (p("data"), p("tokenizer"), p("ar"), p("distilled"));
    let teacher = root.join("ar").join("ar-teacher");

    let t = Instant::now();
    nasp(&["gen-data", "--n", "64", "--val", "16", "--shape", "64x64", "--seed", "0", "--out", &data])?;
    nasp(&["train-tokenizer", "--data", &data, "--out", &tok])?;
    nasp(&["train-ar", "--tokenizer", &tok, "--data", &data, "--out", &ar])?;
    let teacher_before = dir_hash(&teacher)?;
    nasp(&["distill", "--student", &ar, "--teacher", &ar, "--tokenizer", &tok, "--data", &data, "--out", &dist])?;
    let teacher_after = dir_hash(&teacher)?;
    let (m_train, zf_train, m_base, m_dist) = (p("recon_train"), p("zf_train"), p("recon_base"), p("recon_dist"));
    nasp(&["reconstruct", "--input", &data, "--models", &tok, "--models", &ar, "--split", "train", "--limit", "8", "--out", &m_train])?;
    nasp(&["reconstruct", "--input", &data, "--zero-filled", "--split", "train", "--limit", "8", "--out", &zf_train])?;
    nasp(&["reconstruct", "--input", &data, "--models", &tok, "--models", &ar, "--out", &m_base])?;
    nasp(&["reconstruct", "--input", &data, "--models", &tok, "--models", &dist, "--out", &m_dist])?;
    let mut evals = Vec::new();
    for name in ["recon_train", "zf_train", "recon_base", "recon_dist"] {
        let out = p(&format!("eval_{name}"));
        nasp(&["evaluate", "--recon-dir", &p(name), "--ref-dir", &data, "--out", &out])?;
        evals.push(format!("{name}={out}"));
    }
    let mut args = vec!["report".to_string()];
    for e in &evals {
        args.extend(["--eval".to_string(), e.clone()]);
    }
    args.extend(["--out".to_string(), p("report")]);
    nasp(&args.iter().map(String::as_str).collect::<Vec<_>>())?;
    Ok(Run {
        secs: t.elapsed().as_secs_f64(),
        root,
        teacher_before,
        teacher_after,
    })
}

fn shared() -> Result<&'static Run, Box<dyn std::error::Error>> {
    static RUN: OnceLock<Result<Run, String>> = OnceLock::new();
    RUN.get_or_init(execute).as_ref().map_err(|e| e.clone().into())
}

fn metrics(run: &Run, dir: &str) -> Result<Value, Box<dyn std::error::Error>> {
    let path = run.root.join(dir).join("metrics.json");
    Ok(serde_json::from_str(&std::fs::read_to_string(&path)?)?)
}

fn number(v: &Value, pointer: &str) -> Result<f64, Box<dyn std::error::Error>> {
    v.pointer(pointer)
        .and_then(Value::as_f64)
        .ok_or_else(|| format!("metrics lack {pointer}").into())
}

pub fn end_to_end() -> Outcome {
    let run = shared()?;
    let ssim = number(&metrics(run, "tokenizer")?, "/metrics/train_ssim")?;
    let ar = metrics(run, "ar")?;
    let ce = number(&ar, "/ar-student/final_train_ce")?;
    let train_slices = number(&ar, "/train_slices")?;
    let recon = number(&metrics(run, "eval_recon_train")?, "/psnr_mean")?;
    let zf = number(&metrics(run, "eval_zf_train")?, "/psnr_mean")?;
    let detail = format!(
        "{:.0}s total; tokenizer SSIM {ssim:.3}; student CE {ce:.3} on {train_slices} slices; PSNR {recon:.2} vs zero-filled {zf:.2}",
        run.secs
    );
    ensure!(run.secs <= BUDGET_SECS, "over the {BUDGET_SECS}s budget: {detail}");
    ensure!(ssim >= 0.85, "tokenizer SSIM below 0.85: {detail}");
    ensure!(train_slices == 8.0, "student trained on {train_slices} slices, expected 8");
    ensure!(ce < 1.0, "student CE not below 1.0: {detail}");
    ensure!(recon >= zf, "reconstruction below zero-filled: {detail}");
    Ok(detail)
}

pub fn distillation() -> Outcome {
    let run = shared()?;
    let d = metrics(run, "distilled")?;
    let reduction = number(&d, "/rkl_reduction")?;
    let base = number(&metrics(run, "eval_recon_base")?, "/psnr_mean")?;
    let distilled = number(&metrics(run, "eval_recon_dist")?, "/psnr_mean")?;
    let same_hash = d["teacher_hash_before"] == d["teacher_hash_after"] && run.teacher_before == run.teacher_after;
    let detail = format!(
        "held-out RKL reduced {:.1}%; val PSNR distilled {distilled:.2} vs base {base:.2}; teacher hash unchanged: {same_hash}",
        100.0 * reduction
    );
    ensure!(reduction >= 0.2, "RKL reduction under 20%: {detail}");
    ensure!(distilled >= base - 0.1, "distilled PSNR more than 0.1 dB below base: {detail}");
    ensure!(same_hash, "teacher weights changed: {detail}");
    Ok(detail)
}
