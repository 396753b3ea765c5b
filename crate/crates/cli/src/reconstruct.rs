use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use nasp_core::dataio::{write_slice, DatasetManifest, ManifestEntry, Sample, Split};
use nasp_core::fourier::Acceleration;
use nasp_core::ComplexImage;
use nasp_models::aqvae::model::TOKENIZER_COMPONENT;
use nasp_models::aqvae::AqVae;
use nasp_models::nextscale::{reconstruct, DecodeKind, NextScaleModel, STUDENT_COMPONENT, TEACHER_COMPONENT};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::run::{checkpoint_component, load_manifest, load_split, RunDir, DATASET_MANIFEST};

#[derive(Clone, Copy, ValueEnum)]
pub enum DecodeArg {
    Argmax,
    Multinomial,
    TopKP,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Draw each acceleration level's mask independently instead of nesting them.
    #[arg(long)]
    pub independent_masks: bool,
    /// Dataset directory written by gen-data.
    #[arg(long)]
    pub input: PathBuf,
    /// Checkpoint or run directories holding the tokenizer and the student (repeatable).
    #[arg(long)]
    pub models: Vec<PathBuf>,
    /// Decoding rule; defaults to the configured one. Top-k/top-p values come from the config.
    #[arg(long, value_enum)]
    pub decode: Option<DecodeArg>,
    #[arg(long, value_enum, default_value = "val")]
    pub split: SplitArg,
    /// Reconstruct only the first this-many slices of the split; 0 keeps all.
    #[arg(long, default_value_t = 0)]
    pub limit: usize,
    /// Write the 32x zero-filled inputs instead of model output; no models needed.
    #[arg(long)]
    pub zero_filled: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// Candidate checkpoint directories: each given directory and its per-component subdirectories.
/// Directories that are checkpoints themselves take precedence.
fn discover(dirs: &[PathBuf], component: &str) -> CliResult<PathBuf> {
    let direct: Vec<&PathBuf> = dirs
        .iter()
        .filter(|d| checkpoint_component(d).as_deref() == Some(component))
        .collect();
    let nested: Vec<PathBuf> = dirs
        .iter()
        .map(|d| d.join(component))
        .filter(|d| checkpoint_component(d).as_deref() == Some(component))
        .collect();
    let pick = |found: Vec<PathBuf>| -> CliResult<PathBuf> {
        match found.len() {
            1 => Ok(found.into_iter().next().unwrap()),
            _ => Err(CliError::config(format!(
                "--models: {} `{component}` checkpoints given ({}); pass exactly one",
                found.len(),
                found.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
            ))),
        }
    };
    if !direct.is_empty() {
        return pick(direct.into_iter().cloned().collect());
    }
    if !nested.is_empty() {
        return pick(nested);
    }
    Err(CliError::missing(format!(
        "--models: no `{component}` checkpoint among the given directories"
    )))
}

fn models(dirs: &[PathBuf]) -> CliResult<(AqVae, NextScaleModel)> {
    if dirs
        .iter()
        .any(|d| checkpoint_component(d).as_deref() == Some(TEACHER_COMPONENT))
    {
        return Err(CliError::config(
            "--models: the teacher needs the fully sampled image and cannot reconstruct",
        ));
    }
    let tok = AqVae::load(&discover(dirs, TOKENIZER_COMPONENT)?)?;
    let student = NextScaleModel::load(&discover(dirs, STUDENT_COMPONENT)?, STUDENT_COMPONENT)?;
    Ok((tok, student))
}

fn write_outputs(
    run: &RunDir,
    source: &DatasetManifest,
    samples: &[Sample],
    images: Vec<ComplexImage>,
) -> CliResult<DatasetManifest> {
    std::fs::create_dir_all(run.join("slices"))?;
    let mut manifest = DatasetManifest::new(&run.path, source.height, source.width);
    for (s, image) in samples.iter().zip(images) {
        let entry: &ManifestEntry = source
            .entries
            .iter()
            .find(|e| e.id == s.id)
            .expect("samples come from this manifest");
        let file = Path::new("slices").join(format!("{}.mrsl", s.id));
        write_slice(&run.path.join(&file), &[image])?;
        manifest.entries.push(ManifestEntry {
            file,
            ..entry.clone()
        });
    }
    manifest.save(&run.join(DATASET_MANIFEST))?;
    Ok(manifest)
}

pub fn run(args: &ReconstructArgs) -> CliResult<()> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    cfg.data.pyramid.independent_masks |= args.independent_masks;
    if let Some(d) = args.decode {
        cfg.decode.kind = match d {
            DecodeArg::Argmax => DecodeKind::Argmax,
            DecodeArg::Multinomial => DecodeKind::Multinomial,
            DecodeArg::TopKP => DecodeKind::TopKP,
        };
    }
    let loaded = if args.zero_filled {
        None
    } else {
        if args.models.is_empty() {
            return Err(CliError::missing("reconstruct needs --models (tokenizer and student) or --zero-filled"));
        }
        let m = models(&args.models)?;
        cfg.decode
            .validate(m.1.vocab())
            .map_err(|e| CliError::config(format!("decode: {e}")))?;
        Some(m)
    };

    let source = load_manifest(&args.input)?;
    let mut samples = load_split(&source, args.split.into(), &cfg)?;
    if args.limit > 0 {
        samples.truncate(args.limit);
    }
    if samples.is_empty() {
        return Err(CliError::config("the selected split has no slices"));
    }

    let run = RunDir::create(&args.out)?;
    run.write_config(&cfg)?;
    let metrics = serde_json::json!({
        "slices": samples.len(),
        "zero_filled": args.zero_filled,
        "decode": cfg.decode,
    });
    let images = match &loaded {
        None => samples
            .iter()
            .map(|s| s.input(Acceleration::R32).clone())
            .collect(),
        Some((tok, student)) => {
            let refs: Vec<&Sample> = samples.iter().collect();
            let recon = reconstruct(student, tok, &refs, &cfg.decode, cfg.data.eval_batch_size)?;
            std::fs::create_dir_all(run.join("tokens"))?;
            for r in &recon {
                run.write_json(&format!("tokens/{}.json", r.id), &r.tokens)?;
            }
            recon.into_iter().map(|r| r.image).collect()
        }
    };
    write_outputs(&run, &source, &samples, images)?;
    run.write_metrics(&metrics)?;
    run.finish()
}
