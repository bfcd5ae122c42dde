//! Python bindings: the file-level workflows (simulate / process / aoa /
//! stability) plus the numeric primitives (steering vectors, Hermitian
//! eigendecomposition, MUSIC spectra) for notebook-side experimentation.
//!
//! Build with `cargo build -p sounder-py`, then import the produced
//! `libsounder_py.so` as `sounder_py` (see `python/smoke_test.py`).

use std::f64::consts::FRAC_PI_2;
use std::path::PathBuf;

use num_complex::Complex64;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use sounder_core::aoa::{music_spectrum as music_core, AzimuthGrid};
use sounder_core::commands::{
    cmd_aoa, cmd_process, cmd_simulate, cmd_stability, AoaArgs, CommandError, OutputFormat,
    ProcessArgs, SimulateArgs, StabilityArgs,
};
use sounder_core::geometry::{steering_vector as steering_core, ArrayGeometry};
use sounder_core::linalg::{hermitian_eigendecomposition, ComplexMatrix};
use sounder_core::wire::{format_mac, report_from_json_line, FrameKind, StreamParser};

fn command_err(e: CommandError) -> PyErr {
    match e {
        CommandError::Usage(m) => PyValueError::new_err(m),
        CommandError::Io(m) => PyIOError::new_err(m),
        CommandError::DataIntegrity(m) => PyRuntimeError::new_err(m),
    }
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_format(format: &str) -> PyResult<OutputFormat> {
    format.parse().map_err(PyValueError::new_err)
}

fn geometry(rows: usize, cols: usize, spacing_m: f64, carrier_hz: f64) -> PyResult<ArrayGeometry> {
    ArrayGeometry::new(rows, cols, spacing_m, carrier_hz).map_err(value_err)
}

fn matrix_from_py(rows: Vec<Vec<Complex64>>) -> PyResult<ComplexMatrix> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("covariance must be square and non-empty"));
    }
    let mut m = ComplexMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            m.set(i, j, v);
        }
    }
    Ok(m)
}

/// Generate a capture file plus its ground-truth and board sidecars.
#[pyfunction]
#[pyo3(signature = (out, *, seed=1, frames=1000, azimuth_deg=0.0, noise_var=0.01,
                    loss=0.0, relock_rate=0.0, ref_every=10))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    out: PathBuf,
    seed: u64,
    frames: u64,
    azimuth_deg: f64,
    noise_var: f64,
    loss: f64,
    relock_rate: f64,
    ref_every: u32,
) -> PyResult<Py<PyDict>> {
    let summary = cmd_simulate(&SimulateArgs {
        seed,
        frames,
        azimuth_deg,
        noise_var,
        loss,
        relock_rate,
        ref_every,
        out,
    })
    .map_err(command_err)?;
    let d = PyDict::new(py);
    d.set_item("frames", summary.frames)?;
    d.set_item("records", summary.records)?;
    d.set_item("relock_events", summary.relock_events)?;
    d.set_item("bytes_written", summary.bytes_written)?;
    d.set_item("capture", summary.capture)?;
    d.set_item("truth", summary.truth)?;
    d.set_item("board", summary.board)?;
    Ok(d.into())
}

/// Run a capture through clustering, estimation, and calibration, writing
/// per-window channel estimates to `out` (stdout when omitted).
#[pyfunction]
#[pyo3(signature = (input, *, board=None, out=None, format="jsonl", window=100, ref_window=20))]
fn process(
    py: Python<'_>,
    input: PathBuf,
    board: Option<PathBuf>,
    out: Option<PathBuf>,
    format: &str,
    window: usize,
    ref_window: usize,
) -> PyResult<Py<PyDict>> {
    let summary = cmd_process(&ProcessArgs {
        input,
        board,
        out,
        format: parse_format(format)?,
        window,
        ref_window,
    })
    .map_err(command_err)?;
    let ingest = PyDict::new(py);
    ingest.set_item("records", summary.ingest.records)?;
    ingest.set_item("corruption_events", summary.ingest.corruption_events)?;
    ingest.set_item("skipped_bytes", summary.ingest.skipped_bytes)?;
    ingest.set_item("length_mismatches", summary.ingest.length_mismatches)?;
    ingest.set_item("out_of_order", summary.ingest.out_of_order)?;
    ingest.set_item("clusters", summary.ingest.clusters)?;
    ingest.set_item("duplicates", summary.ingest.duplicates)?;
    let d = PyDict::new(py);
    d.set_item("ingest", ingest)?;
    d.set_item("windows", summary.windows)?;
    d.set_item("stale_windows", summary.stale_windows)?;
    d.set_item("reference_updates", summary.reference_updates)?;
    d.set_item("rejected_reference_updates", summary.rejected_reference_updates)?;
    d.set_item("skipped_clusters", summary.skipped_clusters)?;
    d.set_item("windows_dropped_no_reference", summary.windows_dropped_no_reference)?;
    d.set_item("failed_windows", summary.failed_windows)?;
    d.set_item("rows", summary.rows)?;
    Ok(d.into())
}

/// Estimate one azimuth spectrum per capture; returns the per-capture peaks
/// and the paths of the spectrum/peaks files written next to `out`.
#[pyfunction]
#[pyo3(signature = (inputs, out, *, board=None, format="jsonl", window=100, ref_window=20,
                    sources=1, grid_points=181))]
#[allow(clippy::too_many_arguments)]
fn aoa(
    py: Python<'_>,
    inputs: Vec<PathBuf>,
    out: PathBuf,
    board: Option<PathBuf>,
    format: &str,
    window: usize,
    ref_window: usize,
    sources: usize,
    grid_points: usize,
) -> PyResult<Py<PyDict>> {
    let summary = cmd_aoa(&AoaArgs {
        inputs,
        board,
        out,
        format: parse_format(format)?,
        window,
        ref_window,
        sources,
        grid_points,
    })
    .map_err(command_err)?;
    let peaks = PyList::empty(py);
    for peak in &summary.peaks {
        let p = PyDict::new(py);
        p.set_item("input", &peak.input)?;
        p.set_item("azimuth_deg", peak.azimuth_deg)?;
        p.set_item("power_db", peak.power_db)?;
        p.set_item("prominence_db", peak.prominence_db)?;
        p.set_item("degenerate", peak.degenerate)?;
        peaks.append(p)?;
    }
    let d = PyDict::new(py);
    d.set_item("peaks", peaks)?;
    d.set_item("spectrum", summary.spectrum)?;
    d.set_item("peaks_file", summary.peaks_file)?;
    Ok(d.into())
}

/// Per-window phase time series and per-segment circular statistics.
#[pyfunction]
#[pyo3(signature = (input, out, *, board=None, format="jsonl", window=100, ref_window=20,
                    segments=vec![], reference_antenna=0, smoothing=20))]
#[allow(clippy::too_many_arguments)]
fn stability(
    py: Python<'_>,
    input: PathBuf,
    out: PathBuf,
    board: Option<PathBuf>,
    format: &str,
    window: usize,
    ref_window: usize,
    segments: Vec<u64>,
    reference_antenna: usize,
    smoothing: usize,
) -> PyResult<Py<PyDict>> {
    let summary = cmd_stability(&StabilityArgs {
        input,
        board,
        out,
        format: parse_format(format)?,
        window,
        ref_window,
        segments,
        reference_antenna,
        smoothing,
    })
    .map_err(command_err)?;
    let d = PyDict::new(py);
    d.set_item("samples", summary.samples)?;
    d.set_item("segments", summary.segments)?;
    d.set_item("worst_std_rad", summary.worst_std_rad)?;
    d.set_item("series", summary.series)?;
    d.set_item("report", summary.report)?;
    Ok(d.into())
}

/// Ideal array response for a plane wave from `azimuth_rad` off broadside.
#[pyfunction]
#[pyo3(signature = (azimuth_rad, *, rows=2, cols=4, spacing_m=0.0615, carrier_hz=2.437e9))]
fn steering_vector(
    azimuth_rad: f64,
    rows: usize,
    cols: usize,
    spacing_m: f64,
    carrier_hz: f64,
) -> PyResult<Vec<Complex64>> {
    Ok(steering_core(&geometry(rows, cols, spacing_m, carrier_hz)?, azimuth_rad))
}

/// Eigendecomposition of a Hermitian matrix: eigenvalues descending, one
/// eigenvector (as a list) per eigenvalue.
#[pyfunction]
fn eigh(matrix: Vec<Vec<Complex64>>) -> PyResult<(Vec<f64>, Vec<Vec<Complex64>>)> {
    let eig = hermitian_eigendecomposition(&matrix_from_py(matrix)?).map_err(value_err)?;
    Ok((eig.eigenvalues, eig.eigenvectors))
}

/// MUSIC pseudo-spectrum of a spatial covariance over a uniform azimuth grid.
#[pyfunction]
#[pyo3(signature = (covariance, *, rows=2, cols=4, spacing_m=0.0615, carrier_hz=2.437e9,
                    sources=1, grid_points=181))]
#[allow(clippy::too_many_arguments)]
fn music_spectrum(
    py: Python<'_>,
    covariance: Vec<Vec<Complex64>>,
    rows: usize,
    cols: usize,
    spacing_m: f64,
    carrier_hz: f64,
    sources: usize,
    grid_points: usize,
) -> PyResult<Py<PyDict>> {
    let cov = matrix_from_py(covariance)?;
    let geometry = geometry(rows, cols, spacing_m, carrier_hz)?;
    let grid = AzimuthGrid::uniform(grid_points, -FRAC_PI_2, FRAC_PI_2).map_err(value_err)?;
    let spectrum = music_core(&cov, &geometry, &grid, sources).map_err(value_err)?;
    let peaks = PyList::empty(py);
    for peak in &spectrum.peaks {
        let p = PyDict::new(py);
        p.set_item("azimuth_deg", peak.azimuth_rad.to_degrees())?;
        p.set_item("power_db", peak.power_db)?;
        p.set_item("prominence_db", peak.prominence_db)?;
        peaks.append(p)?;
    }
    let d = PyDict::new(py);
    d.set_item(
        "azimuth_deg",
        spectrum.angles_rad.iter().map(|a| a.to_degrees()).collect::<Vec<_>>(),
    )?;
    d.set_item("power_db", spectrum.power_db)?;
    d.set_item("source_count", spectrum.source_count)?;
    d.set_item("degenerate", spectrum.degenerate)?;
    d.set_item("peaks", peaks)?;
    Ok(d.into())
}

/// Decode a capture file (binary or its JSONL mirror) into per-record dicts
/// plus parser statistics. `limit` caps the number of records returned.
#[pyfunction]
#[pyo3(signature = (path, *, limit=None))]
fn read_capture(
    py: Python<'_>,
    path: PathBuf,
    limit: Option<usize>,
) -> PyResult<(Py<PyList>, Py<PyDict>)> {
    let bytes = std::fs::read(&path)
        .map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))?;
    let cap = limit.unwrap_or(usize::MAX);
    let records = PyList::empty(py);
    let stats = PyDict::new(py);

    let emit = |report: &sounder_core::wire::CsiReport| -> PyResult<()> {
        let d = PyDict::new(py);
        d.set_item("receiver_id", report.receiver_id)?;
        d.set_item("source_mac", format_mac(&report.source_mac))?;
        d.set_item("sequence_number", report.sequence_number)?;
        d.set_item("rx_timestamp_us", report.rx_timestamp_us)?;
        d.set_item(
            "frame_kind",
            match report.frame_kind {
                FrameKind::Ota => "ota",
                FrameKind::Reference => "reference",
            },
        )?;
        d.set_item("rssi_db", report.rssi_db)?;
        d.set_item(
            "coefficients",
            report
                .coefficients
                .iter()
                .map(|c| Complex64::new(c.re.into(), c.im.into()))
                .collect::<Vec<_>>(),
        )?;
        records.append(d)
    };

    if bytes.first() == Some(&b'{') {
        let text = String::from_utf8_lossy(&bytes);
        let mut corrupt = 0u64;
        let mut count = 0u64;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match report_from_json_line(line) {
                Ok(report) => {
                    count += 1;
                    if (records.len() as usize) < cap {
                        emit(&report)?;
                    }
                }
                Err(_) => corrupt += 1,
            }
        }
        stats.set_item("records", count)?;
        stats.set_item("corruption_events", corrupt)?;
    } else {
        let mut parser = StreamParser::new(None);
        parser.feed(&bytes);
        parser.finish();
        while let Some(item) = parser.next_report() {
            if let Ok(report) = item {
                if (records.len() as usize) < cap {
                    emit(&report)?;
                }
            }
        }
        let s = parser.stats();
        stats.set_item("records", s.records)?;
        stats.set_item("corruption_events", s.corruption_events)?;
        stats.set_item("crc_mismatches", s.crc_mismatches)?;
        stats.set_item("desyncs", s.desyncs)?;
        stats.set_item("skipped_bytes", s.skipped_bytes)?;
        stats.set_item("count_mismatches", s.count_mismatches)?;
        stats.set_item("truncated_tail", s.truncated_tail)?;
    }
    Ok((records.into(), stats.into()))
}

#[pymodule]
fn sounder_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(process, m)?)?;
    m.add_function(wrap_pyfunction!(aoa, m)?)?;
    m.add_function(wrap_pyfunction!(stability, m)?)?;
    m.add_function(wrap_pyfunction!(steering_vector, m)?)?;
    m.add_function(wrap_pyfunction!(eigh, m)?)?;
    m.add_function(wrap_pyfunction!(music_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(read_capture, m)?)?;
    Ok(())
}
