//! File-level operations behind the `sounder` CLI: synthesize captures,
//! process them into calibrated estimates, and run the downstream analyses.
//!
//! Each operation takes a serializable argument struct ([`RunConfig`] unions
//! them), reads and writes ordinary files, and returns a summary of counters.
//! Failures map onto three exit classes: bad invocations ([`CommandError::Usage`],
//! exit 1), filesystem trouble ([`CommandError::Io`], exit 2), and inputs
//! whose *content* is unusable ([`CommandError::DataIntegrity`], exit 3) — so
//! scripts can tell "you called it wrong" from "the capture is damaged".
//!
//! Processing streams: captures are parsed chunk-wise, clustered and windowed
//! incrementally, and rows are written as windows finish, so memory use does
//! not grow with file length. A capture `run.bin` travels with two sidecars
//! written by [`cmd_simulate`]: `run.bin.truth.jsonl` (per-frame ground truth
//! and relock events) and `run.bin.board.json` (array geometry and
//! reference-path phases, auto-discovered by the other commands).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aoa::{
    antenna_phase_calibrated, music_spectrum, phase_stability_report, AoaError, AzimuthGrid,
    PhaseSeries, SpectrumPeak,
};
use crate::calibration::BoardDescription;
use crate::cluster::{ClusterConfig, ClusterError, Clusterer};
use crate::estimator::EstimateFlag;
use crate::linalg::ComplexMatrix;
use crate::pipeline::{Pipeline, PipelineConfig, WindowOutput};
use crate::sim::{ImpairmentConfig, Simulator, SimulatorConfig};
use crate::wire::{serialize_report, report_from_json_line, CsiReport, StreamParser};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Debug, Error)]
pub enum CommandError {
    /// The invocation itself is wrong (bad flag values, impossible windows).
    #[error("{0}")]
    Usage(String),
    /// The filesystem let us down (missing file, unwritable output, empty input).
    #[error("{0}")]
    Io(String),
    /// The files were readable but their content is unusable.
    #[error("{0}")]
    DataIntegrity(String),
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Usage(_) => EXIT_USAGE,
            CommandError::Io(_) => EXIT_IO,
            CommandError::DataIntegrity(_) => EXIT_DATA,
        }
    }

    fn io(context: &str, path: &Path, err: std::io::Error) -> Self {
        CommandError::Io(format!("{context} {}: {err}", path.display()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    #[default]
    Jsonl,
}

impl std::str::FromStr for OutputFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "jsonl" => Ok(OutputFormat::Jsonl),
            other => Err(format!("unknown format {other:?} (expected csv or jsonl)")),
        }
    }
}

impl std::fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Jsonl => "jsonl",
        })
    }
}

/// Appends a suffix to a full path: `run.bin` + `.truth.jsonl` →
/// `run.bin.truth.jsonl`. Pure concatenation so the capture name stays the
/// visible stem of every sidecar.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn truth_path(capture: &Path) -> PathBuf {
    sibling(capture, ".truth.jsonl")
}

pub fn board_path(capture: &Path) -> PathBuf {
    sibling(capture, ".board.json")
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateArgs {
    pub seed: u64,
    pub frames: u64,
    pub azimuth_deg: f64,
    pub noise_var: f64,
    pub loss: f64,
    pub relock_rate: f64,
    /// Every k-th frame is a reference frame; 0 disables reference emission.
    pub ref_every: u32,
    pub out: PathBuf,
}

impl Default for SimulateArgs {
    fn default() -> Self {
        SimulateArgs {
            seed: 1,
            frames: 1_000,
            azimuth_deg: 0.0,
            noise_var: 0.01,
            loss: 0.0,
            relock_rate: 0.0,
            ref_every: 10,
            out: PathBuf::from("capture.bin"),
        }
    }
}

/// The full simulator recipe an argument set expands to — public so tests
/// can rebuild the exact in-process twin of a written capture.
pub fn simulator_config(args: &SimulateArgs) -> Result<SimulatorConfig, CommandError> {
    let config = SimulatorConfig {
        impairments: ImpairmentConfig {
            noise_variance: args.noise_var,
            frame_loss_probability: args.loss,
            pll_relock_rate_hz: args.relock_rate,
            ..Default::default()
        },
        azimuth_rad: args.azimuth_deg.to_radians(),
        ref_every: args.ref_every,
        seed: args.seed,
        ..Default::default()
    };
    // Surface impossible physics as usage errors before any file is touched.
    config.impairments.validate().map_err(|e| CommandError::Usage(e.to_string()))?;
    if !(-90.0..=90.0).contains(&args.azimuth_deg) {
        return Err(CommandError::Usage(format!(
            "azimuth {}° outside the array's field of view [-90°, 90°]",
            args.azimuth_deg
        )));
    }
    if args.frames == 0 {
        return Err(CommandError::Usage("frame count must be at least 1".into()));
    }
    Ok(config)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimulateSummary {
    pub frames: u64,
    pub records: u64,
    pub relock_events: u64,
    pub bytes_written: u64,
    pub capture: PathBuf,
    pub truth: PathBuf,
    pub board: PathBuf,
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<SimulateSummary, CommandError> {
    let config = simulator_config(args)?;
    let mut sim =
        Simulator::new(config).map_err(|e| CommandError::Usage(e.to_string()))?;

    let capture_path = args.out.clone();
    let truth_path = truth_path(&capture_path);
    let board_path = board_path(&capture_path);

    let mut capture = BufWriter::new(
        File::create(&capture_path)
            .map_err(|e| CommandError::io("cannot create", &capture_path, e))?,
    );
    let mut truth = BufWriter::new(
        File::create(&truth_path)
            .map_err(|e| CommandError::io("cannot create", &truth_path, e))?,
    );

    let mut records = 0u64;
    let mut relocks = 0u64;
    let mut bytes = 0u64;
    for _ in 0..args.frames {
        let frame = sim.step();
        for event in sim.drain_relock_events() {
            relocks += 1;
            let line = serde_json::to_string(&crate::sim::TruthEvent::Relock {
                frame_index: event.frame_index,
                tx_timestamp_us: event.tx_timestamp_us,
                pll_offsets: event.pll_offsets,
            })
            .expect("relock event serializes");
            writeln!(truth, "{line}")
                .map_err(|e| CommandError::io("cannot write", &truth_path, e))?;
        }
        for report in &frame.reports {
            let encoded = serialize_report(report);
            bytes += encoded.len() as u64;
            capture
                .write_all(&encoded)
                .map_err(|e| CommandError::io("cannot write", &capture_path, e))?;
            records += 1;
        }
        let line =
            serde_json::to_string(&frame.truth.to_event()).expect("truth event serializes");
        writeln!(truth, "{line}")
            .map_err(|e| CommandError::io("cannot write", &truth_path, e))?;
    }
    capture.flush().map_err(|e| CommandError::io("cannot write", &capture_path, e))?;
    truth.flush().map_err(|e| CommandError::io("cannot write", &truth_path, e))?;

    let board = BoardDescription::new(&sim.config().geometry, sim.path_phases());
    let board_json = serde_json::to_string_pretty(&board).expect("board serializes");
    std::fs::write(&board_path, board_json.as_bytes())
        .map_err(|e| CommandError::io("cannot write", &board_path, e))?;

    Ok(SimulateSummary {
        frames: args.frames,
        records,
        relock_events: relocks,
        bytes_written: bytes,
        capture: capture_path,
        truth: truth_path,
        board: board_path,
    })
}

// ---------------------------------------------------------------------------
// capture reading (shared by process / aoa / stability)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestStats {
    pub records: u64,
    pub corruption_events: u64,
    pub skipped_bytes: u64,
    /// Records whose subcarrier count disagreed with the first record's.
    pub length_mismatches: u64,
    /// Records rejected by the clusterer for going backwards in time.
    pub out_of_order: u64,
    pub clusters: u64,
    pub duplicates: u64,
}

fn load_board(
    input: &Path,
    explicit: Option<&Path>,
) -> Result<BoardDescription, CommandError> {
    let path = explicit.map(Path::to_path_buf).unwrap_or_else(|| board_path(input));
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CommandError::io("cannot read board description", &path, e))?;
    let board: BoardDescription = serde_json::from_str(&text).map_err(|e| {
        CommandError::DataIntegrity(format!("bad board description {}: {e}", path.display()))
    })?;
    board.validate().map_err(|e| {
        CommandError::DataIntegrity(format!("bad board description {}: {e}", path.display()))
    })?;
    Ok(board)
}

/// Streams a capture through parse → cluster → pipeline, handing each
/// finished window to `on_window`. Handles both the binary wire format and
/// its JSONL mirror (autodetected from the first byte).
fn run_capture<F>(
    input: &Path,
    board: &BoardDescription,
    ota_window: usize,
    ref_window: usize,
    mut on_window: F,
) -> Result<(IngestStats, Pipeline), CommandError>
where
    F: FnMut(&Pipeline, WindowOutput) -> Result<(), CommandError>,
{
    let mut file =
        File::open(input).map_err(|e| CommandError::io("cannot open", input, e))?;
    let file_len = file
        .metadata()
        .map_err(|e| CommandError::io("cannot stat", input, e))?
        .len();
    if file_len == 0 {
        return Err(CommandError::Io(format!("empty input file: {}", input.display())));
    }

    let mut first = [0u8; 1];
    file.read_exact(&mut first).map_err(|e| CommandError::io("cannot read", input, e))?;
    let jsonl = first[0] == b'{';

    let mut stats = IngestStats::default();
    let mut clusterer = Clusterer::new(ClusterConfig::default())
        .expect("default cluster config is valid");
    let mut pipeline: Option<Pipeline> = None;
    let mut expected_n: Option<usize> = None;

    let mut admit = |report: CsiReport,
                     stats: &mut IngestStats,
                     clusterer: &mut Clusterer,
                     pipeline: &mut Option<Pipeline>,
                     on_window: &mut F|
     -> Result<(), CommandError> {
        let n = *expected_n.get_or_insert(report.coefficients.len());
        if report.coefficients.len() != n {
            stats.length_mismatches += 1;
            return Ok(());
        }
        if pipeline.is_none() {
            let config =
                PipelineConfig::new(board.n_antennas(), n, board.phi_path_rad.clone())
                    .with_windows(ota_window, ref_window);
            *pipeline = Some(Pipeline::new(config).map_err(|e| {
                CommandError::Usage(format!("cannot configure pipeline: {e}"))
            })?);
        }
        stats.records += 1;
        match clusterer.push(report) {
            Ok(()) => {}
            Err(ClusterError::OutOfOrder { .. }) => stats.out_of_order += 1,
            Err(e) => return Err(CommandError::DataIntegrity(e.to_string())),
        }
        let p = pipeline.as_mut().expect("created above");
        while let Some(cluster) = clusterer.next_cluster() {
            p.push_cluster(&cluster);
            while let Some(window) = p.next_output() {
                on_window(p, window)?;
            }
        }
        Ok(())
    };

    if jsonl {
        // Re-open: line-oriented reading wants the first byte back.
        let reader = BufReader::new(
            File::open(input).map_err(|e| CommandError::io("cannot open", input, e))?,
        );
        for line in reader.lines() {
            let line = line.map_err(|e| CommandError::io("cannot read", input, e))?;
            if line.trim().is_empty() {
                continue;
            }
            match report_from_json_line(&line) {
                Ok(report) => {
                    admit(report, &mut stats, &mut clusterer, &mut pipeline, &mut on_window)?
                }
                Err(_) => stats.corruption_events += 1,
            }
        }
    } else {
        let mut parser = StreamParser::new(None);
        parser.feed(&first);
        let mut chunk = vec![0u8; 64 * 1024];
        loop {
            let n = file
                .read(&mut chunk)
                .map_err(|e| CommandError::io("cannot read", input, e))?;
            if n == 0 {
                parser.finish();
            } else {
                parser.feed(&chunk[..n]);
            }
            while let Some(item) = parser.next_report() {
                if let Ok(report) = item {
                    admit(report, &mut stats, &mut clusterer, &mut pipeline, &mut on_window)?;
                }
                // Errors are already tallied in the parser's stats.
            }
            if n == 0 {
                break;
            }
        }
        stats.corruption_events = parser.stats().corruption_events;
        stats.skipped_bytes = parser.stats().skipped_bytes;
        stats.length_mismatches += parser.stats().count_mismatches;
    }

    if stats.records == 0 {
        return Err(CommandError::DataIntegrity(format!(
            "no valid records in {} ({} bytes)",
            input.display(),
            file_len
        )));
    }

    clusterer.finish();
    let mut p = pipeline.expect("records imply a pipeline");
    while let Some(cluster) = clusterer.next_cluster() {
        p.push_cluster(&cluster);
        while let Some(window) = p.next_output() {
            on_window(&p, window)?;
        }
    }
    p.finish();
    while let Some(window) = p.next_output() {
        on_window(&p, window)?;
    }

    let cluster_stats = clusterer.stats();
    stats.clusters = cluster_stats.clusters_out;
    stats.duplicates = cluster_stats.duplicates_discarded;
    Ok((stats, p))
}

// ---------------------------------------------------------------------------
// process
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessArgs {
    pub input: PathBuf,
    /// Board description; defaults to `<input>.board.json`.
    pub board: Option<PathBuf>,
    /// Estimate rows destination; stdout when absent.
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
    /// OTA clusters per analysis window.
    pub window: usize,
    pub ref_window: usize,
}

impl Default for ProcessArgs {
    fn default() -> Self {
        ProcessArgs {
            input: PathBuf::new(),
            board: None,
            out: None,
            format: OutputFormat::Jsonl,
            window: crate::pipeline::DEFAULT_OTA_WINDOW,
            ref_window: crate::pipeline::DEFAULT_REF_WINDOW,
        }
    }
}

/// One output row: a single antenna of a single subcarrier of one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub cluster_window: u64,
    pub subcarrier: usize,
    pub antenna: usize,
    pub re: f64,
    pub im: f64,
    pub flags: Vec<String>,
}

fn window_rows(window: &WindowOutput) -> Vec<EstimateRow> {
    let mut rows = Vec::new();
    for (sc, sub) in window.estimate.subcarriers.iter().enumerate() {
        let base_flag = match sub.flag {
            EstimateFlag::Ok => "ok",
            EstimateFlag::RankDeficient => "rank_deficient",
            EstimateFlag::InsufficientPairs => "insufficient_pairs",
        };
        for (antenna, h) in sub.h.iter().enumerate() {
            let mut flags = vec![base_flag.to_string()];
            if window.estimate.stale {
                flags.push("stale".to_string());
            }
            if !sub.antenna_valid[antenna] {
                flags.push("antenna_invalid".to_string());
            }
            rows.push(EstimateRow {
                cluster_window: window.window_index,
                subcarrier: sc,
                antenna,
                re: h.re,
                im: h.im,
                flags,
            });
        }
    }
    rows
}

struct RowWriter {
    sink: BufWriter<Box<dyn Write>>,
    format: OutputFormat,
    describe: String,
}

impl RowWriter {
    fn create(out: Option<&Path>, format: OutputFormat) -> Result<Self, CommandError> {
        let (sink, describe): (Box<dyn Write>, String) = match out {
            Some(path) => (
                Box::new(
                    File::create(path)
                        .map_err(|e| CommandError::io("cannot create", path, e))?,
                ),
                path.display().to_string(),
            ),
            None => (Box::new(std::io::stdout()), "<stdout>".to_string()),
        };
        Ok(RowWriter { sink: BufWriter::new(sink), format, describe })
    }

    fn line(&mut self, text: &str) -> Result<(), CommandError> {
        writeln!(self.sink, "{text}")
            .map_err(|e| CommandError::Io(format!("cannot write {}: {e}", self.describe)))
    }

    fn header(&mut self, columns: &str) -> Result<(), CommandError> {
        if self.format == OutputFormat::Csv {
            self.line(columns)?;
        }
        Ok(())
    }

    fn finishing(mut self) -> Result<(), CommandError> {
        self.sink
            .flush()
            .map_err(|e| CommandError::Io(format!("cannot write {}: {e}", self.describe)))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProcessSummary {
    pub ingest: IngestStats,
    pub windows: u64,
    pub stale_windows: u64,
    pub reference_updates: u64,
    pub rejected_reference_updates: u64,
    pub skipped_clusters: u64,
    pub windows_dropped_no_reference: u64,
    pub failed_windows: u64,
    pub rows: u64,
}

pub fn cmd_process(args: &ProcessArgs) -> Result<ProcessSummary, CommandError> {
    if args.window == 0 || args.ref_window == 0 {
        return Err(CommandError::Usage("window sizes must be at least 1".into()));
    }
    let board = load_board(&args.input, args.board.as_deref())?;
    let mut writer = RowWriter::create(args.out.as_deref(), args.format)?;
    writer.header("cluster_window,subcarrier,antenna,re,im,flags")?;

    let mut windows = 0u64;
    let mut stale_windows = 0u64;
    let mut rows_written = 0u64;
    let (ingest, pipeline) = run_capture(
        &args.input,
        &board,
        args.window,
        args.ref_window,
        |_, window| {
            windows += 1;
            if window.estimate.stale {
                stale_windows += 1;
            }
            for row in window_rows(&window) {
                match args.format {
                    OutputFormat::Jsonl => {
                        let line =
                            serde_json::to_string(&row).expect("estimate row serializes");
                        writer.line(&line)?;
                    }
                    OutputFormat::Csv => {
                        writer.line(&format!(
                            "{},{},{},{},{},{}",
                            row.cluster_window,
                            row.subcarrier,
                            row.antenna,
                            row.re,
                            row.im,
                            row.flags.join(";")
                        ))?;
                    }
                }
                rows_written += 1;
            }
            Ok(())
        },
    )?;
    writer.finishing()?;

    let stats = pipeline.stats();
    Ok(ProcessSummary {
        ingest,
        windows,
        stale_windows,
        reference_updates: stats.reference_updates,
        rejected_reference_updates: pipeline.calibration().rejected_updates(),
        skipped_clusters: stats.skipped_clusters,
        windows_dropped_no_reference: stats.windows_dropped_no_reference,
        failed_windows: stats.failed_windows,
        rows: rows_written,
    })
}

// ---------------------------------------------------------------------------
// aoa
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AoaArgs {
    /// One capture per transmitter placement.
    pub inputs: Vec<PathBuf>,
    /// Shared board description; per-input `<input>.board.json` when absent.
    pub board: Option<PathBuf>,
    pub out: PathBuf,
    pub format: OutputFormat,
    pub window: usize,
    pub ref_window: usize,
    /// Assumed wavefront count `d` for MUSIC.
    pub sources: usize,
    pub grid_points: usize,
}

impl Default for AoaArgs {
    fn default() -> Self {
        AoaArgs {
            inputs: Vec::new(),
            board: None,
            out: PathBuf::from("spectrum.csv"),
            format: OutputFormat::Csv,
            window: crate::pipeline::DEFAULT_OTA_WINDOW,
            ref_window: crate::pipeline::DEFAULT_REF_WINDOW,
            sources: 1,
            grid_points: 181,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlacementPeak {
    pub input: String,
    pub azimuth_deg: f64,
    pub power_db: f64,
    pub prominence_db: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AoaSummary {
    pub peaks: Vec<PlacementPeak>,
    pub spectrum: PathBuf,
    pub peaks_file: PathBuf,
}

/// Covariance for one capture: every window's pooled matrix, weighted by the
/// clusters that produced it.
fn capture_covariance(
    input: &Path,
    board: &BoardDescription,
    window: usize,
    ref_window: usize,
) -> Result<ComplexMatrix, CommandError> {
    let mut acc: Option<ComplexMatrix> = None;
    let mut weight = 0.0f64;
    run_capture(input, board, window, ref_window, |_, w| {
        if let Some(cov) = &w.aoa_covariance {
            let scaled = cov.scale(w.n_clusters as f64);
            acc = Some(match acc.take() {
                None => scaled,
                Some(prev) => prev.add(&scaled),
            });
            weight += w.n_clusters as f64;
        }
        Ok(())
    })?;
    match acc {
        Some(total) if weight > 0.0 => Ok(total.scale(1.0 / weight)),
        _ => Err(CommandError::DataIntegrity(format!(
            "no calibrated analysis windows in {} (is a reference signal present?)",
            input.display()
        ))),
    }
}

pub fn cmd_aoa(args: &AoaArgs) -> Result<AoaSummary, CommandError> {
    if args.inputs.is_empty() {
        return Err(CommandError::Usage("at least one input capture is required".into()));
    }
    if args.window == 0 || args.ref_window == 0 {
        return Err(CommandError::Usage("window sizes must be at least 1".into()));
    }
    let grid = AzimuthGrid::uniform(
        args.grid_points,
        -std::f64::consts::FRAC_PI_2,
        std::f64::consts::FRAC_PI_2,
    )
    .map_err(|e| CommandError::Usage(e.to_string()))?;

    let mut spectrum_writer = RowWriter::create(Some(&args.out), args.format)?;
    spectrum_writer.header("input,azimuth_deg,power_db")?;
    let peaks_path = sibling(&args.out, ".peaks");
    let mut peaks_writer = RowWriter::create(Some(&peaks_path), args.format)?;
    peaks_writer.header("input,azimuth_deg,power_db,prominence_db,degenerate")?;

    let mut peaks = Vec::new();
    for input in &args.inputs {
        let board = load_board(input, args.board.as_deref())?;
        let geometry = board
            .geometry()
            .map_err(|e| CommandError::DataIntegrity(format!("bad board geometry: {e}")))?;
        let covariance =
            capture_covariance(input, &board, args.window, args.ref_window)?;
        let spectrum =
            music_spectrum(&covariance, &geometry, &grid, args.sources).map_err(
                |e| match e {
                    AoaError::TooManySources { .. } | AoaError::NoSources => {
                        CommandError::Usage(e.to_string())
                    }
                    other => CommandError::DataIntegrity(other.to_string()),
                },
            )?;

        let name = input.display().to_string();
        for (angle, power) in spectrum.angles_rad.iter().zip(&spectrum.power_db) {
            match args.format {
                OutputFormat::Jsonl => spectrum_writer.line(
                    &serde_json::json!({
                        "input": name,
                        "azimuth_deg": angle.to_degrees(),
                        "power_db": power,
                    })
                    .to_string(),
                )?,
                OutputFormat::Csv => spectrum_writer
                    .line(&format!("{},{},{}", name, angle.to_degrees(), power))?,
            }
        }

        // The strongest peak stands for the placement; a peakless spectrum
        // (pure noise) is reported as degenerate with the raw argmax.
        let best = spectrum.peaks.first().copied().unwrap_or(SpectrumPeak {
            index: spectrum.argmax(),
            azimuth_rad: spectrum.angles_rad[spectrum.argmax()],
            power_db: spectrum.power_db[spectrum.argmax()],
            prominence_db: 0.0,
        });
        let row = PlacementPeak {
            input: name,
            azimuth_deg: best.azimuth_rad.to_degrees(),
            power_db: best.power_db,
            prominence_db: best.prominence_db,
            degenerate: spectrum.degenerate || spectrum.peaks.is_empty(),
        };
        match args.format {
            OutputFormat::Jsonl => {
                peaks_writer.line(&serde_json::to_string(&row).expect("peak serializes"))?
            }
            OutputFormat::Csv => peaks_writer.line(&format!(
                "{},{},{},{},{}",
                row.input, row.azimuth_deg, row.power_db, row.prominence_db, row.degenerate
            ))?,
        }
        peaks.push(row);
    }
    spectrum_writer.finishing()?;
    peaks_writer.finishing()?;

    Ok(AoaSummary { peaks, spectrum: args.out.clone(), peaks_file: peaks_path })
}

// ---------------------------------------------------------------------------
// stability
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityArgs {
    pub input: PathBuf,
    pub board: Option<PathBuf>,
    pub out: PathBuf,
    pub format: OutputFormat,
    pub window: usize,
    pub ref_window: usize,
    /// Interior segment boundaries (µs); one segment over the whole run when
    /// empty.
    pub segments: Vec<u64>,
    pub reference_antenna: usize,
    pub smoothing: usize,
}

impl Default for StabilityArgs {
    fn default() -> Self {
        StabilityArgs {
            input: PathBuf::new(),
            board: None,
            out: PathBuf::from("phases.csv"),
            format: OutputFormat::Csv,
            window: crate::pipeline::DEFAULT_OTA_WINDOW,
            ref_window: crate::pipeline::DEFAULT_REF_WINDOW,
            segments: Vec::new(),
            reference_antenna: 0,
            smoothing: crate::aoa::DEFAULT_SMOOTHING_WINDOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilitySummary {
    pub samples: u64,
    pub segments: u64,
    pub worst_std_rad: f64,
    pub series: PathBuf,
    pub report: PathBuf,
}

pub fn cmd_stability(args: &StabilityArgs) -> Result<StabilitySummary, CommandError> {
    if args.window == 0 || args.ref_window == 0 {
        return Err(CommandError::Usage("window sizes must be at least 1".into()));
    }
    let board = load_board(&args.input, args.board.as_deref())?;
    let m = board.n_antennas();
    if args.reference_antenna >= m {
        return Err(CommandError::Usage(format!(
            "reference antenna {} out of range for {m} antennas",
            args.reference_antenna
        )));
    }

    let mut series = PhaseSeries::new(m, args.reference_antenna)
        .expect("antenna index checked above")
        .with_smoothing_window(args.smoothing);
    let mut low_confidence = 0u64;
    run_capture(&args.input, &board, args.window, args.ref_window, |_, window| {
        let mut phases = Vec::with_capacity(m);
        for antenna in 0..m {
            let p = antenna_phase_calibrated(&window.estimate, antenna)
                .map_err(|e| CommandError::DataIntegrity(e.to_string()))?;
            if p.low_confidence {
                low_confidence += 1;
            }
            phases.push(p.phase_rad);
        }
        series
            .push(window.end_us, &phases)
            .map_err(|e| CommandError::DataIntegrity(e.to_string()))
    })?;
    let _ = low_confidence; // reported via flags in process; kept for future surfacing

    if series.is_empty() {
        return Err(CommandError::DataIntegrity(format!(
            "no analysis windows in {} (is a reference signal present?)",
            args.input.display()
        )));
    }

    let first = series.samples().first().expect("nonempty").timestamp_us;
    let last = series.samples().last().expect("nonempty").timestamp_us;
    let mut boundaries = args.segments.clone();
    boundaries.sort_unstable();
    boundaries.dedup();
    let mut segments = Vec::new();
    let mut start = first;
    for &b in &boundaries {
        if b <= start || b > last {
            return Err(CommandError::Usage(format!(
                "segment boundary {b} µs outside the sampled range [{first}, {last}]"
            )));
        }
        segments.push((start, b));
        start = b;
    }
    segments.push((start, last + 1));

    let report = phase_stability_report(&series, &segments)
        .map_err(|e| CommandError::Usage(e.to_string()))?;

    let mut series_writer = RowWriter::create(Some(&args.out), args.format)?;
    series_writer.header("timestamp_us,antenna,phase_rad,smoothed_rad")?;
    let smoothed = series.smoothed();
    for (sample, smooth) in series.samples().iter().zip(&smoothed) {
        for antenna in 0..m {
            match args.format {
                OutputFormat::Jsonl => series_writer.line(
                    &serde_json::json!({
                        "timestamp_us": sample.timestamp_us,
                        "antenna": antenna,
                        "phase_rad": sample.phases_rad[antenna],
                        "smoothed_rad": smooth.phases_rad[antenna],
                    })
                    .to_string(),
                )?,
                OutputFormat::Csv => series_writer.line(&format!(
                    "{},{},{},{}",
                    sample.timestamp_us,
                    antenna,
                    sample.phases_rad[antenna],
                    smooth.phases_rad[antenna]
                ))?,
            }
        }
    }
    series_writer.finishing()?;

    let report_path = sibling(&args.out, ".report");
    let mut report_writer = RowWriter::create(Some(&report_path), args.format)?;
    report_writer.header("segment_start_us,segment_end_us,antenna,n_samples,circular_std_rad")?;
    for segment in &report.segments {
        for (antenna, std) in segment.circular_std_rad.iter().enumerate() {
            match args.format {
                OutputFormat::Jsonl => report_writer.line(
                    &serde_json::json!({
                        "segment_start_us": segment.start_us,
                        "segment_end_us": segment.end_us,
                        "antenna": antenna,
                        "n_samples": segment.n_samples,
                        "circular_std_rad": std,
                    })
                    .to_string(),
                )?,
                OutputFormat::Csv => report_writer.line(&format!(
                    "{},{},{},{},{}",
                    segment.start_us, segment.end_us, antenna, segment.n_samples, std
                ))?,
            }
        }
    }
    report_writer.finishing()?;

    Ok(StabilitySummary {
        samples: series.len() as u64,
        segments: report.segments.len() as u64,
        worst_std_rad: report.worst_std_rad(),
        series: args.out.clone(),
        report: report_path,
    })
}

// ---------------------------------------------------------------------------
// run config
// ---------------------------------------------------------------------------

/// Serializable record of a full invocation: `(RunConfig, seed)` reproduces
/// any run bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum RunConfig {
    Simulate(SimulateArgs),
    Process(ProcessArgs),
    Aoa(AoaArgs),
    Stability(StabilityArgs),
}
