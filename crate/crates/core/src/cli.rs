//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{Config, ConfigError};
use crate::dataset::{parse_groundtruth, FrameSource, FrameSubset, TumSequence};
use crate::evaluation::{
    export_diagnostics_csv, export_error_csv, export_ply, export_trajectory, global_position_error,
    per_pair_error, PlyFormat,
};
use crate::pipeline::{run_sequence, select_frames, PairStatus, Trajectory};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "rgbd-vo", version, about = "Frame-to-frame visual odometry for RGB-D sequences")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// RANSAC seed; overrides `ransac.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Use every N-th frame; overrides `pipeline.frame_stride`.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    frame_stride: Option<u64>,
    /// Process only the first N selected frames; overrides `pipeline.max_frames`.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    max_frames: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the camera trajectory of a TUM-layout sequence.
    Run {
        dataset: PathBuf,
        /// Trajectory output in TUM format.
        #[arg(short, long, default_value = "trajectory.txt")]
        output: PathBuf,
        /// Per-pair diagnostics CSV.
        #[arg(long, default_value = "diagnostics.csv")]
        diagnostics: PathBuf,
        /// Parameter overrides such as `ransac.inlier_threshold=0.05`.
        #[arg(value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Global position error of a trajectory against groundtruth.
    Eval {
        trajectory: PathBuf,
        groundtruth: PathBuf,
        /// Per-frame error CSV.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Colored point cloud of a sequence placed by a trajectory.
    ExportPly {
        dataset: PathBuf,
        trajectory: PathBuf,
        #[arg(short, long, default_value = "cloud.ply")]
        output: PathBuf,
        /// Use every N-th pixel in both image directions.
        #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
        stride: u64,
        /// Write ASCII instead of binary little-endian.
        #[arg(long)]
        ascii: bool,
        #[arg(value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Summarize a TUM-layout sequence.
    Info {
        dataset: PathBuf,
        #[arg(value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn data(message: impl ToString) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.to_string(),
        }
    }

    fn usage(message: impl ToString) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.to_string(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Override { .. } => Failure::usage(e),
            _ => Failure::data(e),
        }
    }
}

fn load_config(global: &GlobalArgs, overrides: &[String]) -> Result<Config, Failure> {
    let mut config = Config::load(global.config.as_deref(), overrides)?;
    if let Some(seed) = global.seed {
        config.ransac.seed = seed;
    }
    if let Some(stride) = global.frame_stride {
        config.pipeline.frame_stride = stride as usize;
    }
    if let Some(max) = global.max_frames {
        config.pipeline.max_frames = Some(max as usize);
    }
    Ok(config)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), Failure> {
    let mut w = create(path)?;
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn read_trajectory(path: &Path) -> Result<Trajectory, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    let poses = parse_groundtruth(&text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    Trajectory::from_groundtruth(&poses).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn cmd_run(global: &GlobalArgs, dataset: &Path, output: &Path, diagnostics: &Path, overrides: &[String]) -> Result<(), Failure> {
    let config = load_config(global, overrides)?;
    let cfg = config.pipeline_config()?;
    let sequence = TumSequence::open(dataset, config.association.max_diff).map_err(Failure::data)?;
    let (trajectory, pairs) = run_sequence(&sequence, &cfg).map_err(Failure::data)?;
    write_with(output, |w| export_trajectory(&trajectory, w))?;
    write_with(diagnostics, |w| export_diagnostics_csv(&pairs, w))?;

    let ok = pairs.iter().filter(|p| p.status == PairStatus::Ok).count();
    println!("frames {}", trajectory.len());
    println!("pairs ok {ok} of {}", pairs.len());
    if let Some(gt) = sequence.groundtruth().map_err(Failure::data)? {
        let max_diff = config.association.groundtruth_max_diff;
        if let Ok(s) = per_pair_error(&pairs, &gt, max_diff) {
            println!("mean per-pair error {:.3} m", s.mean());
        }
        if let Ok(s) = global_position_error(&trajectory, &gt, max_diff) {
            println!("mean global error {:.3} m", s.mean());
        }
    }
    Ok(())
}

fn cmd_eval(global: &GlobalArgs, trajectory: &Path, groundtruth: &Path, output: Option<&Path>, overrides: &[String]) -> Result<(), Failure> {
    let config = load_config(global, overrides)?;
    let est = read_trajectory(trajectory)?;
    let text = std::fs::read_to_string(groundtruth).map_err(|e| Failure::data(format!("{}: {e}", groundtruth.display())))?;
    let gt = parse_groundtruth(&text).map_err(|e| Failure::data(format!("{}: {e}", groundtruth.display())))?;
    let series = global_position_error(&est, &gt, config.association.groundtruth_max_diff).map_err(Failure::data)?;
    if let Some(path) = output {
        write_with(path, |w| export_error_csv(&series, w))?;
    }
    println!("frames {}", series.len());
    println!("mean error {:.3} m", series.mean());
    println!("max error {:.3} m", series.max());
    Ok(())
}

fn cmd_export_ply(
    global: &GlobalArgs,
    dataset: &Path,
    trajectory: &Path,
    output: &Path,
    stride: usize,
    ascii: bool,
    overrides: &[String],
) -> Result<(), Failure> {
    let config = load_config(global, overrides)?;
    let cfg = config.pipeline_config()?;
    let traj = read_trajectory(trajectory)?;
    let sequence = TumSequence::open(dataset, config.association.max_diff).map_err(Failure::data)?;
    let frames = FrameSubset::new(&sequence, select_frames(sequence.len(), cfg.frame_stride, cfg.max_frames))
        .map_err(Failure::data)?;
    let format = if ascii { PlyFormat::Ascii } else { PlyFormat::BinaryLittleEndian };
    let mut sink = create(output)?;
    let count = export_ply(&frames, &traj, &cfg.intrinsics, stride, format, &mut sink).map_err(Failure::data)?;
    sink.flush().map_err(|e| Failure::data(format!("{}: {e}", output.display())))?;
    println!("vertices {count}");
    Ok(())
}

fn cmd_info(global: &GlobalArgs, dataset: &Path, overrides: &[String]) -> Result<(), Failure> {
    let config = load_config(global, overrides)?;
    let sequence = TumSequence::open(dataset, config.association.max_diff).map_err(Failure::data)?;
    println!("color images {}", sequence.rgb_count());
    println!("depth images {}", sequence.depth_count());
    println!("associated frames {}", sequence.len());
    if let (Some(first), Some(last)) = (sequence.frames().first(), sequence.frames().last()) {
        println!("time span {:.6} .. {:.6} ({:.3} s)", first.timestamp, last.timestamp, last.timestamp - first.timestamp);
    }
    match sequence.groundtruth().map_err(Failure::data)? {
        Some(gt) => println!("groundtruth poses {}", gt.len()),
        None => println!("groundtruth poses none"),
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let g = &cli.global;
    match &cli.command {
        Command::Run {
            dataset,
            output,
            diagnostics,
            overrides,
        } => cmd_run(g, dataset, output, diagnostics, overrides),
        Command::Eval {
            trajectory,
            groundtruth,
            output,
            overrides,
        } => cmd_eval(g, trajectory, groundtruth, output.as_deref(), overrides),
        Command::ExportPly {
            dataset,
            trajectory,
            output,
            stride,
            ascii,
            overrides,
        } => cmd_export_ply(g, dataset, trajectory, output, *stride as usize, *ascii, overrides),
        Command::Info { dataset, overrides } => cmd_info(g, dataset, overrides),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.global.threads {
        pool = pool.num_threads(n as usize);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return EXIT_INTERNAL;
        }
    };
    match pool.install(|| dispatch(cli)) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
