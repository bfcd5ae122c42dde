//! Downstream analyses: per-antenna phase statistics and MUSIC direction
//! finding.
//!
//! Both consume calibrated estimates. The phase statistic collapses one
//! antenna's subcarriers into a single angle, `φ_m = arg Σ_n ĥ_m^(n)` —
//! meaningful for frequency-flat channels, flagged when the subcarriers
//! disagree so badly that the sum nearly cancels. Series of such angles feed
//! the stability analysis: circular moving averages for plotting, circular
//! standard deviations per segment for the report. Everything phase-valued is
//! treated circularly (averaging unit phasors, never raw angles), because a
//! series hovering around ±π is perfectly stable while its arithmetic mean is
//! garbage.
//!
//! Direction finding builds the MUSIC pseudo-spectrum
//!
//! ```text
//! P(Θ) = 1 / (a(Θ)^H E_n E_n^H a(Θ))
//! ```
//!
//! where `E_n` spans the noise subspace — the eigenvectors beyond the assumed
//! `d` sources. Steering vectors of true sources are orthogonal to that
//! subspace, so the denominator collapses and the spectrum spikes. Peaks are
//! local maxima that clear a topographic-prominence threshold, sorted by
//! power.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::CalibratedEstimate;
use crate::estimator::ChannelEstimate;
use crate::geometry::{steering_vector, ArrayGeometry};
use crate::linalg::{
    dot, hermitian_eigendecomposition, wrap_phase, ComplexMatrix, ComplexVector, LinalgError, C64,
};

/// `|Σ_n h^(n)|` below this fraction of `Σ_n |h^(n)|` marks a phase as
/// low-confidence: the subcarriers nearly cancel and the angle is noise.
pub const LOW_CONFIDENCE_RATIO: f64 = 0.1;

/// Samples in the circular moving average used for plotting.
pub const DEFAULT_SMOOTHING_WINDOW: usize = 20;

/// Minimum topographic prominence for a spectrum peak.
pub const PEAK_PROMINENCE_DB: f64 = 3.0;

/// Relative eigenvalue gap below which signal and noise subspaces cannot be
/// told apart.
const SUBSPACE_SPLIT_REL_TOL: f64 = 1e-9;

/// Floor for the MUSIC denominator, keeping the spectrum finite when a grid
/// angle lands exactly on a noiseless source.
const DENOMINATOR_FLOOR: f64 = 1e-18;

#[derive(Debug, Error, PartialEq)]
pub enum AoaError {
    #[error("antenna {antenna} out of range for {n_antennas} antennas")]
    InvalidAntenna { antenna: usize, n_antennas: usize },
    #[error("estimate has no subcarriers")]
    EmptyEstimate,
    #[error("{got} sources assumed but only {n_antennas} antennas: need d < M")]
    TooManySources { got: usize, n_antennas: usize },
    #[error("source count must be at least 1")]
    NoSources,
    #[error("covariance is {got}×{got} but the array has {expected} antennas")]
    GeometryMismatch { expected: usize, got: usize },
    #[error("azimuth grid needs at least 2 strictly increasing angles")]
    BadGrid,
    #[error("segment [{start_us}, {end_us}) holds {got} samples, needs at least 2")]
    SegmentTooSmall { start_us: u64, end_us: u64, got: usize },
    #[error("sample at {timestamp_us} µs arrived after {last_us} µs; series must be time-ordered")]
    NotTimeOrdered { timestamp_us: u64, last_us: u64 },
    #[error("sample carries {got} phases, series tracks {expected} antennas")]
    AntennaCountMismatch { expected: usize, got: usize },
    #[error("no vectors to pool")]
    NothingToPool,
    #[error("pooled vectors disagree in length: {got} after {expected}")]
    PoolDimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// One antenna's frequency-collapsed phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AntennaPhase {
    pub phase_rad: f64,
    /// The subcarrier sum nearly cancelled; the angle is unreliable.
    pub low_confidence: bool,
}

fn phase_of_sum(values: impl Iterator<Item = C64>) -> Result<AntennaPhase, AoaError> {
    let mut sum = C64::new(0.0, 0.0);
    let mut magnitude_sum = 0.0;
    let mut any = false;
    for v in values {
        sum += v;
        magnitude_sum += v.norm();
        any = true;
    }
    if !any {
        return Err(AoaError::EmptyEstimate);
    }
    Ok(AntennaPhase {
        phase_rad: sum.arg(),
        low_confidence: sum.norm() < LOW_CONFIDENCE_RATIO * magnitude_sum,
    })
}

/// `φ_m = arg Σ_n ĥ_m^(n)` for a raw estimate.
pub fn antenna_phase(estimate: &ChannelEstimate, antenna: usize) -> Result<AntennaPhase, AoaError> {
    let m = estimate.n_antennas();
    if antenna >= m {
        return Err(AoaError::InvalidAntenna { antenna, n_antennas: m });
    }
    phase_of_sum(estimate.subcarriers.iter().map(|s| s.h[antenna]))
}

/// `φ_m` for a calibrated estimate.
pub fn antenna_phase_calibrated(
    estimate: &CalibratedEstimate,
    antenna: usize,
) -> Result<AntennaPhase, AoaError> {
    let m = estimate.n_antennas();
    if antenna >= m {
        return Err(AoaError::InvalidAntenna { antenna, n_antennas: m });
    }
    phase_of_sum(estimate.subcarriers.iter().map(|s| s.h[antenna]))
}

/// One time point of per-antenna phase differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSample {
    pub timestamp_us: u64,
    /// `φ_m − φ_{m₀}` per antenna, wrapped to [−π, π).
    pub phases_rad: Vec<f64>,
}

/// Time-ordered series of phase differences against a reference antenna.
#[derive(Debug, Clone)]
pub struct PhaseSeries {
    reference_antenna: usize,
    n_antennas: usize,
    smoothing_window: usize,
    samples: Vec<PhaseSample>,
}

impl PhaseSeries {
    pub fn new(n_antennas: usize, reference_antenna: usize) -> Result<Self, AoaError> {
        if reference_antenna >= n_antennas {
            return Err(AoaError::InvalidAntenna {
                antenna: reference_antenna,
                n_antennas,
            });
        }
        Ok(PhaseSeries {
            reference_antenna,
            n_antennas,
            smoothing_window: DEFAULT_SMOOTHING_WINDOW,
            samples: Vec::new(),
        })
    }

    pub fn with_smoothing_window(mut self, window: usize) -> Self {
        self.smoothing_window = window.max(1);
        self
    }

    pub fn reference_antenna(&self) -> usize {
        self.reference_antenna
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[PhaseSample] {
        &self.samples
    }

    /// Append per-antenna absolute phases; differences against the reference
    /// antenna are stored wrapped.
    pub fn push(&mut self, timestamp_us: u64, phases_rad: &[f64]) -> Result<(), AoaError> {
        if phases_rad.len() != self.n_antennas {
            return Err(AoaError::AntennaCountMismatch {
                expected: self.n_antennas,
                got: phases_rad.len(),
            });
        }
        if let Some(last) = self.samples.last() {
            if timestamp_us < last.timestamp_us {
                return Err(AoaError::NotTimeOrdered {
                    timestamp_us,
                    last_us: last.timestamp_us,
                });
            }
        }
        let reference = phases_rad[self.reference_antenna];
        self.samples.push(PhaseSample {
            timestamp_us,
            phases_rad: phases_rad.iter().map(|&p| wrap_phase(p - reference)).collect(),
        });
        Ok(())
    }

    /// Circular moving average: each output phase is the argument of the mean
    /// unit phasor over the trailing window, so series hugging ±π smooth
    /// correctly instead of collapsing toward 0.
    pub fn smoothed(&self) -> Vec<PhaseSample> {
        self.samples
            .iter()
            .enumerate()
            .map(|(idx, sample)| {
                let start = idx + 1 - self.smoothing_window.min(idx + 1);
                let window = &self.samples[start..=idx];
                let phases_rad = (0..self.n_antennas)
                    .map(|m| {
                        let mean: C64 = window
                            .iter()
                            .map(|s| C64::from_polar(1.0, s.phases_rad[m]))
                            .sum::<C64>()
                            / window.len() as f64;
                        mean.arg()
                    })
                    .collect();
                PhaseSample { timestamp_us: sample.timestamp_us, phases_rad }
            })
            .collect()
    }
}

/// Circular standard deviation of one segment, per antenna.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentStability {
    pub start_us: u64,
    pub end_us: u64,
    pub n_samples: usize,
    /// `sqrt(−2 ln R̄)` per antenna, with R̄ the mean resultant length.
    pub circular_std_rad: Vec<f64>,
}

/// Per-segment stability across the whole series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub segments: Vec<SegmentStability>,
}

impl StabilityReport {
    /// Largest deviation anywhere in the report.
    pub fn worst_std_rad(&self) -> f64 {
        self.segments
            .iter()
            .flat_map(|s| s.circular_std_rad.iter().copied())
            .fold(0.0, f64::max)
    }
}

/// Circular standard deviations over caller-supplied `[start, end)` segments
/// (segment boundaries are where the scene is known to have changed: antenna
/// relocations, relock events). Every segment must hold at least 2 samples.
pub fn phase_stability_report(
    series: &PhaseSeries,
    segments: &[(u64, u64)],
) -> Result<StabilityReport, AoaError> {
    let mut out = Vec::with_capacity(segments.len());
    for &(start_us, end_us) in segments {
        let window: Vec<&PhaseSample> = series
            .samples()
            .iter()
            .filter(|s| s.timestamp_us >= start_us && s.timestamp_us < end_us)
            .collect();
        if window.len() < 2 {
            return Err(AoaError::SegmentTooSmall { start_us, end_us, got: window.len() });
        }
        let circular_std_rad = (0..series.n_antennas)
            .map(|m| {
                let resultant: C64 = window
                    .iter()
                    .map(|s| C64::from_polar(1.0, s.phases_rad[m]))
                    .sum::<C64>()
                    / window.len() as f64;
                // R̄ → 1 means perfectly concentrated; guard the log for the
                // fully dispersed R̄ → 0 case.
                let r_bar = resultant.norm().clamp(f64::MIN_POSITIVE, 1.0);
                (-2.0 * r_bar.ln()).max(0.0).sqrt()
            })
            .collect();
        out.push(SegmentStability {
            start_us,
            end_us,
            n_samples: window.len(),
            circular_std_rad,
        });
    }
    Ok(StabilityReport { segments: out })
}

/// Strictly increasing azimuth evaluation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AzimuthGrid {
    angles_rad: Vec<f64>,
}

impl AzimuthGrid {
    pub fn uniform(n_points: usize, lo_rad: f64, hi_rad: f64) -> Result<Self, AoaError> {
        if n_points < 2 || !(lo_rad < hi_rad) {
            return Err(AoaError::BadGrid);
        }
        let step = (hi_rad - lo_rad) / (n_points - 1) as f64;
        Ok(AzimuthGrid {
            angles_rad: (0..n_points).map(|i| lo_rad + step * i as f64).collect(),
        })
    }

    /// 181 points over [−π/2, π/2]: 1° resolution across the front half-plane.
    pub fn default_half_plane() -> Self {
        Self::uniform(181, -std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2)
            .expect("static grid parameters")
    }

    pub fn angles_rad(&self) -> &[f64] {
        &self.angles_rad
    }

    pub fn len(&self) -> usize {
        self.angles_rad.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles_rad.is_empty()
    }

    pub fn step_rad(&self) -> f64 {
        (self.angles_rad[self.angles_rad.len() - 1] - self.angles_rad[0])
            / (self.angles_rad.len() - 1) as f64
    }
}

/// One extracted spectrum peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectrumPeak {
    pub index: usize,
    pub azimuth_rad: f64,
    pub power_db: f64,
    pub prominence_db: f64,
}

/// MUSIC pseudo-spectrum over an azimuth grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoSpectrum {
    pub angles_rad: Vec<f64>,
    pub power_db: Vec<f64>,
    pub source_count: usize,
    /// The eigenvalue spectrum gave no usable signal/noise split; the values
    /// are still returned but carry no directional information.
    pub degenerate: bool,
    /// Local maxima clearing [`PEAK_PROMINENCE_DB`], strongest first.
    pub peaks: Vec<SpectrumPeak>,
}

impl PseudoSpectrum {
    pub fn argmax(&self) -> usize {
        self.power_db
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

/// MUSIC spectrum of a covariance of calibrated coefficient vectors.
///
/// `source_count` is the assumed number of impinging wavefronts `d`; the
/// `M − d` weakest eigenvectors form the noise subspace. When the
/// eigenvalue spectrum has no gap at the split (pure noise, or a relock mid
/// window), the result is flagged degenerate.
pub fn music_spectrum(
    covariance: &ComplexMatrix,
    geometry: &ArrayGeometry,
    grid: &AzimuthGrid,
    source_count: usize,
) -> Result<PseudoSpectrum, AoaError> {
    let m = geometry.n_antennas();
    if covariance.rows() != m {
        return Err(AoaError::GeometryMismatch { expected: m, got: covariance.rows() });
    }
    if source_count == 0 {
        return Err(AoaError::NoSources);
    }
    if source_count >= m {
        return Err(AoaError::TooManySources { got: source_count, n_antennas: m });
    }
    let eig = hermitian_eigendecomposition(covariance)?;
    let split_gap = eig.eigenvalues[source_count - 1] - eig.eigenvalues[source_count];
    let degenerate = split_gap < SUBSPACE_SPLIT_REL_TOL * eig.eigenvalues[0].abs();
    let noise_subspace = &eig.eigenvectors[source_count..];

    let power_db: Vec<f64> = grid
        .angles_rad()
        .iter()
        .map(|&theta| {
            let a = steering_vector(geometry, theta);
            let denominator: f64 =
                noise_subspace.iter().map(|e| dot(e, &a).norm_sqr()).sum();
            10.0 * (1.0 / denominator.max(DENOMINATOR_FLOOR)).log10()
        })
        .collect();

    let peaks = find_peaks(grid.angles_rad(), &power_db, PEAK_PROMINENCE_DB);
    Ok(PseudoSpectrum {
        angles_rad: grid.angles_rad().to_vec(),
        power_db,
        source_count,
        degenerate,
        peaks,
    })
}

/// Single-estimate convenience: MUSIC on the rank-1 covariance `h h^H`.
pub fn music_spectrum_rank1(
    h: &[C64],
    geometry: &ArrayGeometry,
    grid: &AzimuthGrid,
) -> Result<PseudoSpectrum, AoaError> {
    music_spectrum(&ComplexMatrix::outer(h, h), geometry, grid, 1)
}

/// Conventional beamformer power `|a(Θ)^H h|²` in dB over the grid — the
/// independent cross-check for single-source MUSIC.
pub fn beamformer_spectrum(h: &[C64], geometry: &ArrayGeometry, grid: &AzimuthGrid) -> Vec<f64> {
    grid.angles_rad()
        .iter()
        .map(|&theta| {
            let a = steering_vector(geometry, theta);
            10.0 * dot(h, &a).norm_sqr().max(DENOMINATOR_FLOOR).log10()
        })
        .collect()
}

/// Mean outer product of a set of coefficient vectors: the analysis-window
/// covariance that feeds MUSIC, pooled over clusters and subcarriers.
pub fn pooled_covariance<'a>(
    vectors: impl IntoIterator<Item = &'a ComplexVector>,
) -> Result<ComplexMatrix, AoaError> {
    let mut sum: Option<ComplexMatrix> = None;
    let mut count = 0usize;
    for v in vectors {
        let outer = ComplexMatrix::outer(v, v);
        sum = Some(match sum {
            None => outer,
            Some(acc) => {
                if acc.rows() != v.len() {
                    return Err(AoaError::PoolDimensionMismatch {
                        expected: acc.rows(),
                        got: v.len(),
                    });
                }
                acc.add(&outer)
            }
        });
        count += 1;
    }
    match sum {
        None => Err(AoaError::NothingToPool),
        Some(acc) => Ok(acc.scale(1.0 / count as f64)),
    }
}

/// Interior local maxima with at least `min_prominence` of topographic
/// prominence: the drop to the key saddle separating a peak from any higher
/// ground. Strongest first.
pub fn find_peaks(angles_rad: &[f64], power_db: &[f64], min_prominence: f64) -> Vec<SpectrumPeak> {
    let n = power_db.len();
    let mut peaks = Vec::new();
    for i in 1..n.saturating_sub(1) {
        if !(power_db[i] > power_db[i - 1] && power_db[i] > power_db[i + 1]) {
            continue;
        }
        // Walk outward until higher ground (or the edge); the lowest point
        // passed on each side is that side's base.
        let mut left_base = power_db[i];
        for j in (0..i).rev() {
            left_base = left_base.min(power_db[j]);
            if power_db[j] > power_db[i] {
                break;
            }
        }
        let mut right_base = power_db[i];
        for &p in &power_db[i + 1..] {
            right_base = right_base.min(p);
            if p > power_db[i] {
                break;
            }
        }
        let prominence = power_db[i] - left_base.max(right_base);
        if prominence >= min_prominence {
            peaks.push(SpectrumPeak {
                index: i,
                azimuth_rad: angles_rad[i],
                power_db: power_db[i],
                prominence_db: prominence,
            });
        }
    }
    peaks.sort_by(|a, b| b.power_db.total_cmp(&a.power_db));
    peaks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{EstimateFlag, SubcarrierEstimate};
    use crate::geometry::ArrayGeometry;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn estimate_of(subcarrier_vectors: Vec<ComplexVector>) -> ChannelEstimate {
        ChannelEstimate {
            subcarriers: subcarrier_vectors
                .into_iter()
                .map(|h| SubcarrierEstimate {
                    h,
                    principal_eigenvalue: 1.0,
                    noise_power: 0.0,
                    sample_count: 1,
                    flag: EstimateFlag::Ok,
                })
                .collect(),
        }
    }

    #[test]
    fn antenna_phase_of_all_ones_is_zero() {
        let estimate = estimate_of(vec![vec![C64::new(1.0, 0.0); 2]; 4]);
        let p = antenna_phase(&estimate, 1).unwrap();
        assert_eq!(p.phase_rad, 0.0);
        assert!(!p.low_confidence);
    }

    #[test]
    fn antenna_phase_of_constant_phasor_is_that_phase() {
        let v = C64::from_polar(1.0, FRAC_PI_4);
        let estimate = estimate_of(vec![vec![v; 3]; 5]);
        let p = antenna_phase(&estimate, 0).unwrap();
        assert!((p.phase_rad - FRAC_PI_4).abs() < 1e-12);
        assert!(!p.low_confidence);
    }

    #[test]
    fn anti_phase_subcarriers_raise_the_low_confidence_flag() {
        // Two subcarriers at e^{j0} and e^{jπ}: the sum nearly cancels.
        let estimate = estimate_of(vec![
            vec![C64::new(1.0, 0.0)],
            vec![C64::from_polar(1.0, PI - 1e-9)],
        ]);
        let p = antenna_phase(&estimate, 0).unwrap();
        assert!(p.low_confidence, "sum {} should be low confidence", p.phase_rad);
    }

    #[test]
    fn antenna_phase_shifts_with_global_rotation_and_differences_do_not() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let vectors: Vec<ComplexVector> = (0..4)
            .map(|_| {
                (0..3)
                    .map(|_| C64::from_polar(rng.random_range(0.5..2.0), rng.random_range(-1.0..1.0)))
                    .collect()
            })
            .collect();
        let alpha = 1.234;
        let rotated: Vec<ComplexVector> = vectors
            .iter()
            .map(|v| v.iter().map(|c| c * C64::from_polar(1.0, alpha)).collect())
            .collect();
        let (plain, spun) = (estimate_of(vectors), estimate_of(rotated));
        let mut diffs = Vec::new();
        for m in 0..3 {
            let p = antenna_phase(&plain, m).unwrap().phase_rad;
            let q = antenna_phase(&spun, m).unwrap().phase_rad;
            assert!(wrap_phase(q - p - alpha).abs() < 1e-12);
            diffs.push((p, q));
        }
        // Differences between antennas are untouched by the rotation.
        let d_plain = wrap_phase(diffs[1].0 - diffs[0].0);
        let d_spun = wrap_phase(diffs[1].1 - diffs[0].1);
        assert!(wrap_phase(d_plain - d_spun).abs() < 1e-12);
    }

    #[test]
    fn antenna_phase_rejects_bad_antenna() {
        let estimate = estimate_of(vec![vec![C64::new(1.0, 0.0); 2]]);
        assert_eq!(
            antenna_phase(&estimate, 2),
            Err(AoaError::InvalidAntenna { antenna: 2, n_antennas: 2 })
        );
    }

    #[test]
    fn phase_series_wraps_and_orders() {
        let mut series = PhaseSeries::new(2, 0).unwrap();
        series.push(10, &[0.0, 3.5]).unwrap();
        let stored = series.samples()[0].phases_rad[1];
        assert!((stored - (3.5 - 2.0 * PI)).abs() < 1e-12, "stored {stored}");
        assert_eq!(
            series.push(5, &[0.0, 0.0]),
            Err(AoaError::NotTimeOrdered { timestamp_us: 5, last_us: 10 })
        );
        assert_eq!(
            series.push(20, &[0.0, 0.0, 0.0]),
            Err(AoaError::AntennaCountMismatch { expected: 2, got: 3 })
        );
    }

    #[test]
    fn smoothing_is_circular_across_the_wrap() {
        // Samples alternating just either side of ±π: the circular mean stays
        // at the wrap, an arithmetic mean would claim 0.
        let mut series = PhaseSeries::new(2, 0).unwrap().with_smoothing_window(4);
        for t in 0..8u64 {
            let not_quite_pi = if t % 2 == 0 { PI - 0.05 } else { -PI + 0.05 };
            series.push(t, &[0.0, not_quite_pi]).unwrap();
        }
        for sample in &series.smoothed()[3..] {
            assert!(
                sample.phases_rad[1].abs() > PI - 0.1,
                "smoothed value {} fell off the wrap",
                sample.phases_rad[1]
            );
        }
    }

    #[test]
    fn smoothing_shrinks_noise() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut series = PhaseSeries::new(2, 0).unwrap();
        for t in 0..200u64 {
            series.push(t, &[0.0, 0.7 + rng.random_range(-0.3..0.3)]).unwrap();
        }
        let raw_spread = series
            .samples()
            .iter()
            .map(|s| (s.phases_rad[1] - 0.7).abs())
            .fold(0.0, f64::max);
        let smooth_spread = series.smoothed()[20..]
            .iter()
            .map(|s| (s.phases_rad[1] - 0.7).abs())
            .fold(0.0, f64::max);
        assert!(
            smooth_spread < raw_spread / 2.0,
            "smoothing did not help: {smooth_spread} vs {raw_spread}"
        );
    }

    #[test]
    fn constant_series_has_zero_deviation() {
        let mut series = PhaseSeries::new(3, 0).unwrap();
        for t in 0..50u64 {
            series.push(t, &[0.2, 1.1, -2.0]).unwrap();
        }
        let report = phase_stability_report(&series, &[(0, 50)]).unwrap();
        assert_eq!(report.segments.len(), 1);
        assert_eq!(report.segments[0].n_samples, 50);
        for &s in &report.segments[0].circular_std_rad {
            assert!(s < 1e-9, "std {s}");
        }
        assert!(report.worst_std_rad() < 1e-9);
    }

    #[test]
    fn phase_jump_inflates_the_spanning_segment() {
        let mut series = PhaseSeries::new(2, 0).unwrap();
        for t in 0..100u64 {
            let phase = if t < 50 { 0.3 } else { 0.3 + FRAC_PI_2 };
            series.push(t, &[0.0, phase]).unwrap();
        }
        let report =
            phase_stability_report(&series, &[(0, 50), (50, 100), (0, 100)]).unwrap();
        let first = report.segments[0].circular_std_rad[1];
        let second = report.segments[1].circular_std_rad[1];
        let spanning = report.segments[2].circular_std_rad[1];
        assert!(spanning > first && spanning > second);
        assert!(spanning > 0.5, "jump barely visible: {spanning}");
    }

    #[test]
    fn degenerate_segments_error() {
        let mut series = PhaseSeries::new(2, 0).unwrap();
        series.push(10, &[0.0, 0.0]).unwrap();
        series.push(20, &[0.0, 0.0]).unwrap();
        assert_eq!(
            phase_stability_report(&series, &[(0, 5)]),
            Err(AoaError::SegmentTooSmall { start_us: 0, end_us: 5, got: 0 })
        );
        assert_eq!(
            phase_stability_report(&series, &[(0, 15)]),
            Err(AoaError::SegmentTooSmall { start_us: 0, end_us: 15, got: 1 })
        );
    }

    #[test]
    fn noisy_but_static_phases_stay_tight() {
        // Each phase sample comes from a 10-frame analysis window at 20 dB
        // SNR (noise power 0.01 = 2a²/3 with a = √0.015). The windowed phase
        // std is ≈ √(0.001/2) per antenna and ×√2 for the difference against
        // the reference antenna — about 0.03 rad, well under the 0.1 budget.
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let amplitude = 0.015f64.sqrt();
        let mut series = PhaseSeries::new(4, 0).unwrap();
        for t in 0..600u64 {
            let phases: Vec<f64> = (0..4)
                .map(|m| {
                    let signal = C64::from_polar(1.0, 0.4 * m as f64);
                    let windowed: C64 = (0..10)
                        .map(|_| {
                            signal
                                + C64::new(
                                    rng.random_range(-amplitude..amplitude),
                                    rng.random_range(-amplitude..amplitude),
                                )
                        })
                        .sum::<C64>()
                        / 10.0;
                    windowed.arg()
                })
                .collect();
            series.push(t, &phases).unwrap();
        }
        let report = phase_stability_report(&series, &[(0, 600)]).unwrap();
        assert!(
            report.worst_std_rad() < 0.1,
            "worst circular std {}",
            report.worst_std_rad()
        );
    }

    fn rank1_covariance(geometry: &ArrayGeometry, azimuth: f64, sigma_sq: f64) -> ComplexMatrix {
        let a = steering_vector(geometry, azimuth);
        ComplexMatrix::outer(&a, &a).add_scaled_identity(sigma_sq)
    }

    #[test]
    fn single_source_peak_lands_on_the_true_angle() {
        let geometry = ArrayGeometry::default_2x4();
        let grid = AzimuthGrid::default_half_plane();
        for azimuth_deg in [-60.0, -25.0, 0.0, 10.0, 40.0] {
            let azimuth = f64::to_radians(azimuth_deg);
            let cov = rank1_covariance(&geometry, azimuth, 0.01);
            let spectrum = music_spectrum(&cov, &geometry, &grid, 1).unwrap();
            assert!(!spectrum.degenerate);
            assert!(!spectrum.peaks.is_empty(), "no peak at {azimuth_deg}°");
            let best = spectrum.peaks[0];
            assert!(
                (best.azimuth_rad - azimuth).abs() <= grid.step_rad() + 1e-12,
                "peak {} for truth {azimuth}",
                best.azimuth_rad
            );
            // Independent oracle: conventional beamformer on the same model.
            let a = steering_vector(&geometry, azimuth);
            let beam = beamformer_spectrum(&a, &geometry, &grid);
            let beam_argmax =
                beam.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).unwrap().0;
            assert!(
                (best.index as i64 - beam_argmax as i64).abs() <= 1,
                "MUSIC {} vs beamformer {beam_argmax}",
                best.index
            );
        }
    }

    #[test]
    fn pure_noise_spectrum_is_flat_with_no_peaks() {
        let geometry = ArrayGeometry::default_2x4();
        let grid = AzimuthGrid::default_half_plane();
        let cov = ComplexMatrix::zeros(8, 8).add_scaled_identity(0.3);
        let spectrum = music_spectrum(&cov, &geometry, &grid, 1).unwrap();
        assert!(spectrum.degenerate);
        assert!(spectrum.peaks.is_empty());
        let max = spectrum.power_db.iter().fold(f64::MIN, |a, &b| a.max(b));
        let min = spectrum.power_db.iter().fold(f64::MAX, |a, &b| a.min(b));
        assert!(max - min <= 3.0, "spread {}", max - min);
        assert!(spectrum.power_db.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn two_sources_produce_two_ranked_peaks() {
        let geometry = ArrayGeometry::default_2x4();
        let grid = AzimuthGrid::default_half_plane();
        let strong = steering_vector(&geometry, f64::to_radians(-30.0));
        let weak = steering_vector(&geometry, f64::to_radians(35.0));
        let cov = ComplexMatrix::outer(&strong, &strong)
            .add(&ComplexMatrix::outer(&weak, &weak).scale(0.5))
            .add_scaled_identity(0.01);
        let spectrum = music_spectrum(&cov, &geometry, &grid, 2).unwrap();
        assert!(spectrum.peaks.len() >= 2, "peaks: {:?}", spectrum.peaks);
        let first = spectrum.peaks[0].azimuth_rad.to_degrees();
        let second = spectrum.peaks[1].azimuth_rad.to_degrees();
        assert!((first - -30.0).abs() <= 2.0, "strongest at {first}°");
        assert!((second - 35.0).abs() <= 2.0, "second at {second}°");
        assert!(spectrum.peaks[0].power_db >= spectrum.peaks[1].power_db);
    }

    #[test]
    fn mirrored_scene_reflects_the_spectrum() {
        let geometry = ArrayGeometry::default_2x4();
        let grid = AzimuthGrid::default_half_plane();
        let azimuth = f64::to_radians(20.0);
        let cov = rank1_covariance(&geometry, azimuth, 0.05);
        // a(−Θ) = conj(a(Θ)) for this planar array, so the mirrored scene's
        // covariance is the entrywise conjugate.
        let mirrored = ComplexMatrix::from_fn(8, 8, |i, j| cov.get(i, j).conj());
        let spectrum = music_spectrum(&cov, &geometry, &grid, 1).unwrap();
        let reflected = music_spectrum(&mirrored, &geometry, &grid, 1).unwrap();
        let n = spectrum.power_db.len();
        for i in 0..n {
            let diff = (spectrum.power_db[i] - reflected.power_db[n - 1 - i]).abs();
            assert!(diff < 1e-6, "asymmetry {diff} dB at index {i}");
        }
        assert_eq!(spectrum.argmax(), n - 1 - reflected.argmax());
    }

    #[test]
    fn global_scaling_does_not_move_the_peak() {
        let geometry = ArrayGeometry::default_2x4();
        let grid = AzimuthGrid::default_half_plane();
        let cov = rank1_covariance(&geometry, f64::to_radians(-15.0), 0.02);
        let spectrum = music_spectrum(&cov, &geometry, &grid, 1).unwrap();
        let scaled = music_spectrum(&cov.scale(37.5), &geometry, &grid, 1).unwrap();
        assert_eq!(spectrum.argmax(), scaled.argmax());
        let h = steering_vector(&geometry, f64::to_radians(-15.0));
        let spun: ComplexVector = h.iter().map(|c| c * C64::from_polar(2.0, 1.1)).collect();
        let a = music_spectrum_rank1(&h, &geometry, &grid).unwrap();
        let b = music_spectrum_rank1(&spun, &geometry, &grid).unwrap();
        assert_eq!(a.argmax(), b.argmax());
    }

    #[test]
    fn exact_on_grid_source_stays_finite() {
        let geometry = ArrayGeometry::default_2x4();
        let grid = AzimuthGrid::default_half_plane();
        // 0° is a grid point; with σ² = 0 the denominator vanishes there.
        let spectrum =
            music_spectrum(&rank1_covariance(&geometry, 0.0, 0.0), &geometry, &grid, 1).unwrap();
        assert!(spectrum.power_db.iter().all(|p| p.is_finite()));
        assert_eq!(spectrum.angles_rad[spectrum.argmax()], 0.0);
    }

    #[test]
    fn music_rejects_bad_source_counts_and_shapes() {
        let geometry = ArrayGeometry::default_2x4();
        let grid = AzimuthGrid::default_half_plane();
        let cov = ComplexMatrix::identity(8);
        assert_eq!(
            music_spectrum(&cov, &geometry, &grid, 8).unwrap_err(),
            AoaError::TooManySources { got: 8, n_antennas: 8 }
        );
        assert_eq!(
            music_spectrum(&cov, &geometry, &grid, 0).unwrap_err(),
            AoaError::NoSources
        );
        let small = ComplexMatrix::identity(4);
        assert_eq!(
            music_spectrum(&small, &geometry, &grid, 1).unwrap_err(),
            AoaError::GeometryMismatch { expected: 8, got: 4 }
        );
        assert!(AzimuthGrid::uniform(1, 0.0, 1.0).is_err());
        assert!(AzimuthGrid::uniform(5, 1.0, 1.0).is_err());
    }

    #[test]
    fn pooled_covariance_matches_hand_average() {
        let u = vec![C64::new(1.0, 0.0), C64::new(0.0, 1.0)];
        let v = vec![C64::new(0.5, 0.5), C64::new(-1.0, 0.0)];
        let pooled = pooled_covariance([&u, &v]).unwrap();
        let expected =
            ComplexMatrix::outer(&u, &u).add(&ComplexMatrix::outer(&v, &v)).scale(0.5);
        assert!(pooled.sub(&expected).frobenius_norm() < 1e-15);
        assert_eq!(pooled_covariance([] as [&ComplexVector; 0]), Err(AoaError::NothingToPool));
        let w = vec![C64::new(1.0, 0.0)];
        assert_eq!(
            pooled_covariance([&u, &w]),
            Err(AoaError::PoolDimensionMismatch { expected: 2, got: 1 })
        );
    }

    #[test]
    fn peak_prominence_filters_ripple() {
        let angles: Vec<f64> = (0..9).map(|i| i as f64).collect();
        // One big peak at index 2, one 1 dB ripple at index 6.
        let power = vec![0.0, 5.0, 10.0, 4.0, 1.0, 1.5, 2.0, 1.2, 0.5];
        let peaks = find_peaks(&angles, &power, 3.0);
        assert_eq!(peaks.len(), 1);
        assert_eq!(peaks[0].index, 2);
        assert!(peaks[0].prominence_db >= 9.0);
        let all = find_peaks(&angles, &power, 0.5);
        assert_eq!(all.len(), 2);
        assert_eq!(all[0].index, 2);
        assert_eq!(all[1].index, 6);
    }
}
