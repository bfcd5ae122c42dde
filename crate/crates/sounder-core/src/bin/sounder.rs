//! `sounder` — simulate captures, process them into calibrated estimates,
//! and run angle-of-arrival / phase-stability analyses.
//!
//! Exit codes: 0 success, 1 usage error, 2 I/O error, 3 data-integrity error.
//! Summaries go to stderr; stdout carries data only when `--out` is omitted.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use sounder_core::commands::{
    cmd_aoa, cmd_process, cmd_simulate, cmd_stability, AoaArgs, CommandError, OutputFormat,
    ProcessArgs, SimulateArgs, StabilityArgs, EXIT_USAGE,
};

#[derive(Parser)]
#[command(
    name = "sounder",
    version,
    about = "Phase-coherent multi-antenna WiFi channel sounding toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct PipelineFlags {
    /// Board description JSON (default: <input>.board.json)
    #[arg(long)]
    board: Option<PathBuf>,
    /// Output format
    #[arg(long, default_value = "jsonl")]
    format: OutputFormat,
    /// Clusters per analysis window
    #[arg(long, default_value_t = 100)]
    window: usize,
    /// Reference clusters per calibration update
    #[arg(long = "ref-window", default_value_t = 20)]
    ref_window: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a capture file with ground-truth and board sidecars
    Simulate {
        /// RNG seed; identical seeds give byte-identical captures
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Frames to emit
        #[arg(long, default_value_t = 1000)]
        frames: u64,
        /// Transmitter azimuth in degrees
        #[arg(long = "azimuth-deg", default_value_t = 0.0, allow_hyphen_values = true)]
        azimuth_deg: f64,
        /// Receiver noise variance σ²
        #[arg(long = "noise-var", default_value_t = 0.01)]
        noise_var: f64,
        /// Per-receiver frame loss probability
        #[arg(long, default_value_t = 0.0)]
        loss: f64,
        /// PLL relock rate in Hz
        #[arg(long = "relock-rate", default_value_t = 0.0)]
        relock_rate: f64,
        /// Every k-th frame is a reference frame (0 disables)
        #[arg(long = "ref-every", default_value_t = 10)]
        ref_every: u32,
        /// Capture path; sidecars get .truth.jsonl / .board.json appended
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn a capture into calibrated estimate rows
    Process {
        /// Capture file (binary wire format or JSONL mirror)
        input: PathBuf,
        #[command(flatten)]
        pipeline: PipelineFlags,
        /// Estimate rows destination (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// MUSIC pseudo-spectrum and peak per capture
    Aoa {
        /// One capture per transmitter placement
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineFlags,
        /// Spectrum destination; peaks land beside it with .peaks appended
        #[arg(long)]
        out: PathBuf,
        /// Assumed wavefront count for MUSIC
        #[arg(long, default_value_t = 1)]
        sources: usize,
        /// Azimuth grid points over [-90°, 90°]
        #[arg(long = "grid-points", default_value_t = 181)]
        grid_points: usize,
    },
    /// Per-antenna phase series and circular-deviation report
    Stability {
        /// Capture file (binary wire format or JSONL mirror)
        input: PathBuf,
        #[command(flatten)]
        pipeline: PipelineFlags,
        /// Phase series destination; report lands beside it with .report appended
        #[arg(long)]
        out: PathBuf,
        /// Interior segment boundaries in µs, comma separated
        #[arg(long, value_delimiter = ',')]
        segments: Vec<u64>,
        /// Antenna whose phase anchors the differences
        #[arg(long = "reference-antenna", default_value_t = 0)]
        reference_antenna: usize,
        /// Circular moving-average window for the smoothed column
        #[arg(long, default_value_t = 20)]
        smoothing: usize,
    },
}

fn run(command: Command) -> Result<(), CommandError> {
    match command {
        Command::Simulate {
            seed,
            frames,
            azimuth_deg,
            noise_var,
            loss,
            relock_rate,
            ref_every,
            out,
        } => {
            let summary = cmd_simulate(&SimulateArgs {
                seed,
                frames,
                azimuth_deg,
                noise_var,
                loss,
                relock_rate,
                ref_every,
                out,
            })?;
            eprintln!(
                "simulate: frames={} records={} relocks={} bytes={}",
                summary.frames, summary.records, summary.relock_events, summary.bytes_written
            );
            eprintln!(
                "simulate: capture={} truth={} board={}",
                summary.capture.display(),
                summary.truth.display(),
                summary.board.display()
            );
        }
        Command::Process { input, pipeline, out } => {
            let summary = cmd_process(&ProcessArgs {
                input,
                board: pipeline.board,
                out,
                format: pipeline.format,
                window: pipeline.window,
                ref_window: pipeline.ref_window,
            })?;
            let i = summary.ingest;
            eprintln!(
                "process: records={} corruption_events={} skipped_bytes={} \
                 length_mismatches={} out_of_order={} clusters={} duplicates={}",
                i.records,
                i.corruption_events,
                i.skipped_bytes,
                i.length_mismatches,
                i.out_of_order,
                i.clusters,
                i.duplicates
            );
            eprintln!(
                "process: windows={} rows={} stale_windows={} reference_updates={} \
                 rejected_references={} skipped_clusters={} dropped_windows={} failed_windows={}",
                summary.windows,
                summary.rows,
                summary.stale_windows,
                summary.reference_updates,
                summary.rejected_reference_updates,
                summary.skipped_clusters,
                summary.windows_dropped_no_reference,
                summary.failed_windows
            );
        }
        Command::Aoa { inputs, pipeline, out, sources, grid_points } => {
            let summary = cmd_aoa(&AoaArgs {
                inputs,
                board: pipeline.board,
                out,
                format: pipeline.format,
                window: pipeline.window,
                ref_window: pipeline.ref_window,
                sources,
                grid_points,
            })?;
            for peak in &summary.peaks {
                eprintln!(
                    "aoa: input={} azimuth_deg={:.2} power_db={:.2} prominence_db={:.2} degenerate={}",
                    peak.input, peak.azimuth_deg, peak.power_db, peak.prominence_db, peak.degenerate
                );
            }
            eprintln!(
                "aoa: spectrum={} peaks={}",
                summary.spectrum.display(),
                summary.peaks_file.display()
            );
        }
        Command::Stability {
            input,
            pipeline,
            out,
            segments,
            reference_antenna,
            smoothing,
        } => {
            let summary = cmd_stability(&StabilityArgs {
                input,
                board: pipeline.board,
                out,
                format: pipeline.format,
                window: pipeline.window,
                ref_window: pipeline.ref_window,
                segments,
                reference_antenna,
                smoothing,
            })?;
            eprintln!(
                "stability: samples={} segments={} worst_std_rad={:.6}",
                summary.samples, summary.segments, summary.worst_std_rad
            );
            eprintln!(
                "stability: series={} report={}",
                summary.series.display(),
                summary.report.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            // clap's default exit code (2) is reserved for I/O here.
            eprint!("{e}");
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
