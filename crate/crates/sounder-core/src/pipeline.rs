//! Streaming engine: clusters in, calibrated window estimates out.
//!
//! Clusters are routed by frame kind into two fixed-size accumulation
//! windows. Reference windows refresh the calibration state; over-the-air
//! windows become covariance sets, rank-1 estimates, and finally calibrated
//! estimates stamped with the freshness of the reference that produced them.
//! Every window also carries the pooled covariance of its calibrated
//! per-cluster coefficient vectors — the preferred MUSIC input — obtained by
//! conjugating the raw incomplete-data covariance with the calibration
//! divisors (`C ↦ D C D^H`), which equals calibrating each snapshot vector
//! first and costs nothing extra under frame loss.
//!
//! Output estimates are phase-normalized to antenna 0 per subcarrier. Up to
//! that point every stage is equivariant under global phase, so the
//! convention is applied exactly once, at the boundary where numbers leave
//! the pipeline.
//!
//! Memory is bounded by construction: two fixed-size accumulators, the
//! bounded queue of windows finished before the first reference arrived, and
//! whatever finished output the caller has not yet drained.

use std::collections::VecDeque;

use thiserror::Error;

use crate::calibration::{CalibratedEstimate, CalibrationError, CalibrationState};
use crate::cluster::FrameCluster;
use crate::estimator::{
    estimate_channel, noise_floor_from_covariances, ChannelEstimate, CovarianceAccumulator,
    FinalizedCovariance,
};
use crate::linalg::{ComplexMatrix, C64};
use crate::wire::FrameKind;

/// Over-the-air clusters per analysis window.
pub const DEFAULT_OTA_WINDOW: usize = 100;

/// Reference clusters per calibration update.
pub const DEFAULT_REF_WINDOW: usize = 20;

/// Windows held back while waiting for the first reference.
pub const DEFAULT_MAX_PENDING_WINDOWS: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("need at least 2 antennas, got {0}")]
    NotEnoughAntennas(usize),
    #[error("need at least 1 subcarrier")]
    NoSubcarriers,
    #[error("window sizes must be at least 1 cluster")]
    DegenerateWindow,
    #[error("{got} path phases for {expected} antennas")]
    WrongPathPhaseCount { expected: usize, got: usize },
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub n_antennas: usize,
    pub n_subcarriers: usize,
    /// OTA clusters per emitted estimate window.
    pub ota_window: usize,
    /// Reference clusters per calibration update.
    pub ref_window: usize,
    /// Reference-path phases φ_path per antenna (from the board description).
    pub phi_path_rad: Vec<f64>,
    /// Reference age beyond which outputs are marked stale.
    pub staleness_limit_us: u64,
    /// Cap on windows buffered before the first reference.
    pub max_pending_windows: usize,
}

impl PipelineConfig {
    pub fn new(n_antennas: usize, n_subcarriers: usize, phi_path_rad: Vec<f64>) -> Self {
        PipelineConfig {
            n_antennas,
            n_subcarriers,
            ota_window: DEFAULT_OTA_WINDOW,
            ref_window: DEFAULT_REF_WINDOW,
            phi_path_rad,
            staleness_limit_us: crate::calibration::DEFAULT_STALENESS_LIMIT_US,
            max_pending_windows: DEFAULT_MAX_PENDING_WINDOWS,
        }
    }

    pub fn with_windows(mut self, ota_window: usize, ref_window: usize) -> Self {
        self.ota_window = ota_window;
        self.ref_window = ref_window;
        self
    }

    fn validate(&self) -> Result<(), PipelineError> {
        if self.n_antennas < 2 {
            return Err(PipelineError::NotEnoughAntennas(self.n_antennas));
        }
        if self.n_subcarriers == 0 {
            return Err(PipelineError::NoSubcarriers);
        }
        if self.ota_window == 0 || self.ref_window == 0 || self.max_pending_windows == 0 {
            return Err(PipelineError::DegenerateWindow);
        }
        if self.phi_path_rad.len() != self.n_antennas {
            return Err(PipelineError::WrongPathPhaseCount {
                expected: self.n_antennas,
                got: self.phi_path_rad.len(),
            });
        }
        Ok(())
    }
}

/// One finished analysis window.
#[derive(Debug, Clone)]
pub struct WindowOutput {
    pub window_index: u64,
    /// Cluster timestamp of the first and last cluster in the window.
    pub start_us: u64,
    pub end_us: u64,
    pub n_clusters: usize,
    /// Calibrated estimate, phase-normalized to antenna 0 per subcarrier.
    pub estimate: CalibratedEstimate,
    /// Pooled covariance of calibrated per-cluster vectors, averaged over
    /// subcarriers with usable pairs — `None` only when every subcarrier
    /// starved.
    pub aoa_covariance: Option<ComplexMatrix>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PipelineStats {
    pub clusters_in: u64,
    pub ota_clusters: u64,
    pub ref_clusters: u64,
    /// Clusters whose shape did not match the configuration (unknown
    /// receiver id, wrong subcarrier count); skipped, never fatal.
    pub skipped_clusters: u64,
    pub windows_emitted: u64,
    pub reference_updates: u64,
    /// Windows emitted late because they finished before the first
    /// reference existed.
    pub windows_flushed_late: u64,
    /// Windows abandoned because no reference ever arrived.
    pub windows_dropped_no_reference: u64,
    /// Windows abandoned because the eigensolver failed (pathological data).
    pub failed_windows: u64,
}

/// Buffer occupancy snapshot, for bounded-memory verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineBuffers {
    pub ota_clusters_in_window: usize,
    pub ref_clusters_in_window: usize,
    pub pending_windows: usize,
    pub queued_outputs: usize,
}

#[derive(Debug)]
struct PendingWindow {
    window_index: u64,
    start_us: u64,
    end_us: u64,
    n_clusters: usize,
    covariances: Vec<FinalizedCovariance>,
    estimate: ChannelEstimate,
}

#[derive(Debug)]
pub struct Pipeline {
    config: PipelineConfig,
    calibration: CalibrationState,
    ota_acc: CovarianceAccumulator,
    ref_acc: CovarianceAccumulator,
    ota_count: usize,
    ref_count: usize,
    ota_start_us: u64,
    ota_end_us: u64,
    ref_end_us: u64,
    next_window_index: u64,
    pending: VecDeque<PendingWindow>,
    out: VecDeque<WindowOutput>,
    stats: PipelineStats,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let calibration = CalibrationState::new(config.phi_path_rad.clone())
            .with_staleness_limit(config.staleness_limit_us);
        let (m, n) = (config.n_antennas, config.n_subcarriers);
        Ok(Pipeline {
            config,
            calibration,
            ota_acc: CovarianceAccumulator::for_kind(m, n, FrameKind::Ota),
            ref_acc: CovarianceAccumulator::for_kind(m, n, FrameKind::Reference),
            ota_count: 0,
            ref_count: 0,
            ota_start_us: 0,
            ota_end_us: 0,
            ref_end_us: 0,
            next_window_index: 0,
            pending: VecDeque::new(),
            out: VecDeque::new(),
            stats: PipelineStats::default(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn stats(&self) -> PipelineStats {
        self.stats
    }

    pub fn calibration(&self) -> &CalibrationState {
        &self.calibration
    }

    pub fn has_reference(&self) -> bool {
        self.calibration.has_reference()
    }

    pub fn buffers(&self) -> PipelineBuffers {
        PipelineBuffers {
            ota_clusters_in_window: self.ota_count,
            ref_clusters_in_window: self.ref_count,
            pending_windows: self.pending.len(),
            queued_outputs: self.out.len(),
        }
    }

    /// Feed one cluster. Malformed clusters are counted and skipped, never
    /// fatal: a long capture should survive a few bad records.
    pub fn push_cluster(&mut self, cluster: &FrameCluster) {
        self.stats.clusters_in += 1;
        match cluster.frame_kind {
            FrameKind::Ota => {
                if self.ota_acc.accumulate(cluster).is_err() {
                    self.stats.skipped_clusters += 1;
                    return;
                }
                self.stats.ota_clusters += 1;
                if self.ota_count == 0 {
                    self.ota_start_us = cluster.cluster_timestamp_us;
                }
                self.ota_end_us = cluster.cluster_timestamp_us;
                self.ota_count += 1;
                if self.ota_count == self.config.ota_window {
                    self.complete_ota_window();
                }
            }
            FrameKind::Reference => {
                if self.ref_acc.accumulate(cluster).is_err() {
                    self.stats.skipped_clusters += 1;
                    return;
                }
                self.stats.ref_clusters += 1;
                self.ref_end_us = cluster.cluster_timestamp_us;
                self.ref_count += 1;
                if self.ref_count == self.config.ref_window {
                    self.complete_ref_window();
                }
            }
        }
    }

    /// Flush partial windows at end of stream: a partial reference window is
    /// still worth an update attempt (it may be the only chance to calibrate
    /// held-back windows), then the partial estimate window, then anything
    /// still waiting without hope of a reference is dropped.
    pub fn finish(&mut self) {
        if self.ref_count > 0 {
            self.complete_ref_window();
        }
        if self.ota_count > 0 {
            self.complete_ota_window();
        }
        let orphaned = self.pending.len() as u64;
        if orphaned > 0 {
            self.stats.windows_dropped_no_reference += orphaned;
            self.pending.clear();
        }
    }

    /// Next finished window, if any.
    pub fn next_output(&mut self) -> Option<WindowOutput> {
        self.out.pop_front()
    }

    fn complete_ota_window(&mut self) {
        let (m, n) = (self.config.n_antennas, self.config.n_subcarriers);
        let acc = std::mem::replace(
            &mut self.ota_acc,
            CovarianceAccumulator::for_kind(m, n, FrameKind::Ota),
        );
        let n_clusters = self.ota_count;
        let (start_us, end_us) = (self.ota_start_us, self.ota_end_us);
        self.ota_count = 0;

        let covariances = acc.finalize();
        let noise = noise_floor_from_covariances(&covariances).unwrap_or(0.0);
        let subcarriers: Result<Vec<_>, _> =
            covariances.iter().map(|c| estimate_channel(c, noise)).collect();
        let estimate = match subcarriers {
            Ok(subcarriers) => ChannelEstimate { subcarriers },
            Err(_) => {
                self.stats.failed_windows += 1;
                return;
            }
        };
        let window = PendingWindow {
            window_index: self.next_window_index,
            start_us,
            end_us,
            n_clusters,
            covariances,
            estimate,
        };
        self.next_window_index += 1;

        if self.calibration.has_reference() {
            self.emit(window, false);
        } else if self.pending.len() < self.config.max_pending_windows {
            self.pending.push_back(window);
        } else {
            self.stats.windows_dropped_no_reference += 1;
        }
    }

    fn complete_ref_window(&mut self) {
        let (m, n) = (self.config.n_antennas, self.config.n_subcarriers);
        let acc = std::mem::replace(
            &mut self.ref_acc,
            CovarianceAccumulator::for_kind(m, n, FrameKind::Reference),
        );
        let timestamp = self.ref_end_us;
        self.ref_count = 0;

        let estimate = match ChannelEstimate::from_accumulator(&acc, None) {
            Ok(e) => e,
            Err(_) => {
                self.stats.failed_windows += 1;
                return;
            }
        };
        match self.calibration.update_reference(&estimate, timestamp) {
            Ok(()) => {
                self.stats.reference_updates += 1;
                while let Some(held) = self.pending.pop_front() {
                    self.emit(held, true);
                }
            }
            // A degraded window (relock inside it, starved pairs) is counted
            // by the calibration state; the previous reference stays live.
            Err(CalibrationError::RejectedReference { .. }) => {}
            Err(_) => self.stats.failed_windows += 1,
        }
    }

    fn emit(&mut self, window: PendingWindow, late: bool) {
        let calibrated = match self.calibration.calibrate(&window.estimate, window.end_us) {
            Ok(c) => c,
            Err(_) => {
                self.stats.failed_windows += 1;
                return;
            }
        };
        let mut estimate = calibrated;
        normalize_phase_to_antenna(&mut estimate, 0);
        let aoa_covariance = self.pooled_calibrated_covariance(&window.covariances);
        self.out.push_back(WindowOutput {
            window_index: window.window_index,
            start_us: window.start_us,
            end_us: window.end_us,
            n_clusters: window.n_clusters,
            estimate,
            aoa_covariance,
        });
        self.stats.windows_emitted += 1;
        if late {
            self.stats.windows_flushed_late += 1;
        }
    }

    /// Pooled covariance of calibrated snapshot vectors: per subcarrier,
    /// conjugate the raw covariance with the calibration divisors, then
    /// average across subcarriers. Rows/columns of antennas whose reference
    /// vanished are zeroed, matching how `calibrate` zeroes their estimates.
    fn pooled_calibrated_covariance(
        &self,
        covariances: &[FinalizedCovariance],
    ) -> Option<ComplexMatrix> {
        let m = self.config.n_antennas;
        let mut pooled = ComplexMatrix::zeros(m, m);
        let mut used = 0usize;
        for (sc, fc) in covariances.iter().enumerate() {
            if fc.insufficient_pairs {
                continue;
            }
            let divisors: Vec<Option<C64>> =
                (0..m).map(|a| self.calibration.reference_divisor(sc, a)).collect();
            if divisors.iter().all(Option::is_none) {
                continue;
            }
            let calibrated = ComplexMatrix::from_fn(m, m, |i, j| {
                match (divisors[i], divisors[j]) {
                    (Some(di), Some(dj)) => fc.matrix.get(i, j) / (di * dj.conj()),
                    _ => C64::new(0.0, 0.0),
                }
            });
            pooled = pooled.add(&calibrated);
            used += 1;
        }
        (used > 0).then(|| pooled.scale(1.0 / used as f64))
    }
}

/// Rotate each subcarrier's coefficients so the chosen antenna's phase is
/// exactly zero: multiply by `conj(h_pivot)` first (the pivot's imaginary
/// part cancels exactly, `fl(ab) − fl(ba) = 0`), then divide by the real
/// magnitude — so `arg` at the pivot returns literal `0.0`, not merely
/// something small. Subcarriers where the pivot antenna is invalid or zero
/// are left untouched.
pub fn normalize_phase_to_antenna(estimate: &mut CalibratedEstimate, antenna: usize) {
    for subcarrier in &mut estimate.subcarriers {
        if !subcarrier.antenna_valid.get(antenna).copied().unwrap_or(false) {
            continue;
        }
        let pivot = subcarrier.h[antenna];
        let magnitude = pivot.norm();
        if magnitude == 0.0 {
            continue;
        }
        let conjugate = pivot.conj();
        for value in &mut subcarrier.h {
            *value = *value * conjugate / magnitude;
        }
    }
}
