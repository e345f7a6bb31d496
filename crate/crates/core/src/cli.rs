//! Command-line driver. Exit codes: 0 success, 1 usage error, 2 data error.
//! Diagnostics are a single line on stderr.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::coarse::coarse_register;
use crate::error::{Error, Result};
use crate::fine::{run_fine, FineResult};
use crate::io::{read_cloud, write_cloud};
use crate::landmarks::{cta_landmarks, spect_landmarks};
use crate::metrics::evaluate;
use crate::phantom::generate;
use crate::pipeline::{
    check_algorithm, fuse_volumes, read_landmarks, read_similarity, run_pipeline, write_landmarks, write_metrics,
    write_phantom, write_similarity, PipelineConfig,
};
use crate::transform::SimilarityTransform;
use crate::volume::VoxelVolume;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cardiofuse", version, about = "Coarse-to-fine registration and fusion of functional and anatomical ventricle clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON configuration; the relevant sections are used by each command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every randomised stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Cta,
    Spect,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known ground truth.
    Phantom {
        #[command(flatten)]
        common: Common,
    },
    /// Extract landmarks from anatomical (cta) or functional (spect) clouds.
    Landmarks {
        #[arg(long, value_enum)]
        mode: Mode,
        /// LV cloud (cta) or functional cloud (spect).
        #[arg(long)]
        cloud: PathBuf,
        /// RV cloud, cta mode only.
        #[arg(long)]
        rv: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Landmark-based similarity alignment of the moving cloud.
    Coarse {
        #[arg(long)]
        moving: PathBuf,
        #[arg(long)]
        fixed: PathBuf,
        #[arg(long)]
        moving_landmarks: PathBuf,
        #[arg(long)]
        fixed_landmarks: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Fine registration with one algorithm.
    Fine {
        #[arg(long)]
        algo: String,
        #[arg(long)]
        moving: PathBuf,
        #[arg(long)]
        fixed: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Registration metrics of a registered cloud and its mapped landmarks.
    Metrics {
        #[arg(long)]
        fixed: PathBuf,
        #[arg(long)]
        registered: PathBuf,
        #[arg(long)]
        fixed_landmarks: PathBuf,
        #[arg(long)]
        moved_landmarks: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Resample the moving volume onto the fixed grid and fuse them.
    Fuse {
        #[arg(long)]
        fixed_volume: PathBuf,
        #[arg(long)]
        moving_volume: PathBuf,
        /// Fine result JSON.
        #[arg(long)]
        fine: PathBuf,
        /// Coarse transform JSON; identity when omitted.
        #[arg(long)]
        coarse: Option<PathBuf>,
        /// Moving-frame cloud carrying nonrigid offsets.
        #[arg(long)]
        moving: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run every stage over the configured algorithms.
    Pipeline {
        /// Restrict to one algorithm.
        #[arg(long)]
        algo: Option<String>,
        /// Run the fine stage without coarse alignment.
        #[arg(long)]
        skip_coarse: bool,
        #[command(flatten)]
        common: Common,
    },
}

impl Common {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::read(p).map_err(|e| match e {
                Error::Json(j) => Error::InvalidParameter(format!("config {}: {j}", p.display())),
                other => other,
            })?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        Ok(cfg.seeded())
    }
}

fn out_dir(cfg: &PipelineConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out)?;
    Ok(&cfg.out)
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            if code == EXIT_OK {
                print!("{e}");
            } else {
                let text = e.to_string();
                let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("usage error");
                eprintln!("{line}");
            }
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            if e.is_data_error() {
                EXIT_DATA
            } else {
                EXIT_USAGE
            }
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Phantom { common } => {
            let cfg = common.config()?;
            cfg.phantom.validate().map_err(|e| Error::InvalidParameter(e.to_string()))?;
            let ph = generate(&cfg.phantom)?;
            write_phantom(&ph, &cfg.phantom, out_dir(&cfg)?)
        }
        Command::Landmarks { mode, cloud, rv, common } => {
            let cfg = common.config()?;
            cfg.landmarks.validate()?;
            let lm = match (mode, rv) {
                (Mode::Cta, Some(rv)) => cta_landmarks(&read_cloud(&cloud)?, &read_cloud(&rv)?, &cfg.landmarks)?,
                (Mode::Cta, None) => return Err(Error::InvalidParameter("--mode cta needs --rv".into())),
                (Mode::Spect, _) => spect_landmarks(&read_cloud(&cloud)?, &cfg.landmarks)?,
            };
            let name = match mode {
                Mode::Cta => "landmarks_cta.json",
                Mode::Spect => "landmarks_spect.json",
            };
            write_landmarks(&out_dir(&cfg)?.join(name), &lm)
        }
        Command::Coarse {
            moving,
            fixed,
            moving_landmarks,
            fixed_landmarks,
            common,
        } => {
            let cfg = common.config()?;
            let (t, cloud) = coarse_register(
                &read_cloud(&moving)?,
                &read_cloud(&fixed)?,
                &read_landmarks(&moving_landmarks)?,
                &read_landmarks(&fixed_landmarks)?,
            )?;
            let dir = out_dir(&cfg)?;
            write_similarity(&dir.join("coarse.json"), &t)?;
            write_cloud(&dir.join("coarse.ply"), &cloud)
        }
        Command::Fine { algo, moving, fixed, common } => {
            check_algorithm(&algo)?;
            let cfg = common.config()?;
            cfg.fine.validate()?;
            let src = read_cloud(&moving)?;
            let result = run_fine(&algo, &src, &read_cloud(&fixed)?, &cfg.fine)?;
            let dir = out_dir(&cfg)?;
            result.write(dir, &format!("fine_{algo}"))?;
            write_cloud(&dir.join(format!("registered_{algo}.ply")), &result.transform.apply_to_source(&src)?)
        }
        Command::Metrics {
            fixed,
            registered,
            fixed_landmarks,
            moved_landmarks,
            common,
        } => {
            let cfg = common.config()?;
            let report = evaluate(
                &read_cloud(&fixed)?,
                &read_cloud(&registered)?,
                &read_landmarks(&fixed_landmarks)?,
                &read_landmarks(&moved_landmarks)?,
            )?;
            write_metrics(out_dir(&cfg)?, "metrics", &report)
        }
        Command::Fuse {
            fixed_volume,
            moving_volume,
            fine,
            coarse,
            moving,
            common,
        } => {
            let cfg = common.config()?;
            let coarse = match coarse {
                Some(p) => read_similarity(&p)?,
                None => SimilarityTransform::identity(),
            };
            let fine = FineResult::read(&fine)?;
            let cloud = moving.as_deref().map(read_cloud).transpose()?;
            let fused = fuse_volumes(
                &VoxelVolume::read(&fixed_volume)?,
                &VoxelVolume::read(&moving_volume)?,
                &coarse,
                &fine.transform,
                cloud.as_ref(),
            )?;
            let dir = out_dir(&cfg)?;
            fused.functional.write(dir, "fused_functional")?;
            fused.preview.write(dir, "fused_preview")
        }
        Command::Pipeline { algo, skip_coarse, common } => {
            let mut cfg = common.config()?;
            if let Some(a) = algo {
                check_algorithm(&a)?;
                cfg.algorithms = vec![a];
            }
            cfg.skip_coarse |= skip_coarse;
            run_pipeline(&cfg).map(|_| ())
        }
    }
}
