//! Run directories, dataset loading and checkpoint discovery shared by the stages.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use nasp_core::dataio::{
    build_dataset, gen_phantom, write_slice, Contrast, DatasetManifest, ManifestEntry, PhantomSpec, Sample, Split,
    MANIFEST_FILE,
};
use nasp_core::fourier::MaskPattern;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";
pub const METRICS_FILE: &str = "metrics.json";
pub const TIMING_FILE: &str = "timing.json";
pub const DATASET_MANIFEST: &str = "manifest.json";

/// Output directory of one stage. Wall-clock time goes to its own file so every other output
/// is a pure function of the inputs.
pub struct RunDir {
    pub path: PathBuf,
    started: Instant,
}

impl RunDir {
    pub fn create(path: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(path)
            .map_err(|e| CliError::other(format!("cannot create {}: {e}", path.display())))?;
        Ok(Self {
            path: path.to_path_buf(),
            started: Instant::now(),
        })
    }

    pub fn join(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write_config(&self, cfg: &RunConfig) -> CliResult<()> {
        std::fs::write(self.join(RESOLVED_CONFIG), cfg.to_toml())?;
        Ok(())
    }

    pub fn write_json(&self, name: &str, value: &impl Serialize) -> CliResult<()> {
        std::fs::write(self.join(name), serde_json::to_string_pretty(value)? + "\n")?;
        Ok(())
    }

    pub fn write_metrics(&self, value: &impl Serialize) -> CliResult<()> {
        self.write_json(METRICS_FILE, value)
    }

    pub fn log(&self, name: &str) -> CliResult<JsonLines> {
        Ok(JsonLines(BufWriter::new(File::create(self.join(name))?)))
    }

    pub fn finish(self) -> CliResult<()> {
        let secs = self.started.elapsed().as_secs_f64();
        self.write_json(TIMING_FILE, &serde_json::json!({ "wall_clock_seconds": secs }))
    }
}

pub struct JsonLines(BufWriter<File>);

impl JsonLines {
    pub fn write(&mut self, value: &impl Serialize) {
        // step logs are diagnostics; a failed write must not abort training
        let _ = serde_json::to_writer(&mut self.0, value).map(|_| self.0.write_all(b"\n"));
    }

    pub fn close(mut self) -> CliResult<()> {
        self.0.flush()?;
        Ok(())
    }
}

/// Parses `HxW`.
pub fn parse_shape(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height in `{s}`"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width in `{s}`"))?;
    Ok((h, w))
}

pub fn load_manifest(dir: &Path) -> CliResult<DatasetManifest> {
    let path = dir.join(DATASET_MANIFEST);
    if !path.exists() {
        return Err(CliError::missing(format!(
            "{} has no dataset manifest; run gen-data first",
            dir.display()
        )));
    }
    Ok(DatasetManifest::load(&path)?)
}

pub fn load_split(manifest: &DatasetManifest, split: Split, cfg: &RunConfig) -> CliResult<Vec<Sample>> {
    Ok(build_dataset(manifest, split, &cfg.data.pyramid)?)
}

/// Finds the checkpoint for `component` at `dir` itself or in its `component/` subdirectory.
pub fn find_checkpoint(dir: &Path, component: &str) -> CliResult<PathBuf> {
    for candidate in [dir.to_path_buf(), dir.join(component)] {
        if checkpoint_component(&candidate).as_deref() == Some(component) {
            return Ok(candidate);
        }
    }
    Err(CliError::missing(format!(
        "no `{component}` checkpoint at {}",
        dir.display()
    )))
}

/// Component name recorded in a checkpoint manifest, if `dir` holds one.
pub fn checkpoint_component(dir: &Path) -> Option<String> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_FILE)).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    v.get("component")?.as_str().map(str::to_string)
}

#[derive(Args)]
pub struct GenDataArgs {
    /// Number of training slices.
    #[arg(long)]
    pub n: usize,
    /// Number of validation slices.
    #[arg(long, default_value_t = 16)]
    pub val: usize,
    #[arg(long, default_value = "64x64", value_parser = parse_shape)]
    pub shape: (usize, usize),
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Slice `k` cycles through contrasts and patterns so every (pattern, contrast) group is filled.
pub fn gen_data(args: &GenDataArgs) -> CliResult<()> {
    if args.n == 0 {
        return Err(CliError::config("--n must be positive"));
    }
    let (h, w) = args.shape;
    let run = RunDir::create(&args.out)?;
    std::fs::create_dir_all(run.join("slices"))?;
    let mut manifest = DatasetManifest::new(&args.out, h, w);
    let seed = std::env::var(crate::config::SEED_ENV)
        .ok()
        .map(|v| v.trim().parse::<u64>())
        .transpose()
        .map_err(|_| CliError::config(format!("{} is not an unsigned integer", crate::config::SEED_ENV)))?
        .unwrap_or(args.seed);
    for k in 0..args.n + args.val {
        let contrast = Contrast::ALL[k % Contrast::ALL.len()];
        let pattern = MaskPattern::ALL[k % MaskPattern::ALL.len()];
        let phantom_seed = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ k as u64;
        let image = gen_phantom(&PhantomSpec::new(h, w, contrast, phantom_seed))?;
        let id = format!("slice_{k:04}");
        let file = PathBuf::from("slices").join(format!("{id}.mrsl"));
        write_slice(&args.out.join(&file), &[image])?;
        manifest.entries.push(ManifestEntry {
            id,
            file,
            contrast,
            split: if k < args.n { Split::Train } else { Split::Val },
            pattern,
            mask_seed: (phantom_seed as u32) ^ (phantom_seed >> 32) as u32,
        });
    }
    manifest.save(&run.join(DATASET_MANIFEST))?;
    run.write_metrics(&serde_json::json!({
        "train_slices": args.n,
        "val_slices": args.val,
        "height": h,
        "width": w,
        "seed": seed,
    }))?;
    run.finish()
}
