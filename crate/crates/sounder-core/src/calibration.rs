//! Phase and power calibration against the cabled reference signal.
//!
//! Every receiver multiplies whatever it hears by `g_m · e^{jθ_m}` — an analog
//! gain and a PLL phase offset that re-draws at every relock. A reference
//! transmitter wired to all antennas through known paths exposes exactly that
//! nuisance: its channel estimate is
//!
//! ```text
//! ĥ_REF,m ∝ g_m · e^{jθ_m} · e^{jφ_path,m}
//! ```
//!
//! with `φ_path,m` the static, board-specific phase of the distribution path
//! to antenna `m`. Dividing an over-the-air estimate by the reference —
//! stripped of its path phase — cancels gain and PLL offset in one move:
//!
//! ```text
//! ĥ_CAL,m = ĥ_OTA,m / (ĥ_REF,m · e^{−jφ_path,m})
//! ```
//!
//! What remains is the true channel, up to one complex factor common to all
//! antennas (the two windows' estimator phase conventions and the reference
//! transmitter's own chain). That common factor is harmless for direction
//! finding and is normalized away at the output layer, not here — keeping
//! `calibrate` exactly equivariant under scaling of its input.
//!
//! A calibration is only as good as its age: θ_m changes at relocks, so a
//! reference snapshot older than the staleness limit still calibrates but the
//! output says so.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{ChannelEstimate, EstimateFlag};
use crate::geometry::{ArrayGeometry, GeometryError};
use crate::linalg::{ComplexVector, C64};

/// Reference estimates older than this are flagged stale (not refused).
pub const DEFAULT_STALENESS_LIMIT_US: u64 = 5_000_000;

/// Reference magnitudes below this would amplify noise without bound; the
/// antenna is marked invalid instead of being divided by ~0.
pub const MIN_REFERENCE_MAGNITUDE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("estimate covers {got} antennas, board has {expected}")]
    AntennaCountMismatch { expected: usize, got: usize },
    #[error("estimate covers {got} subcarriers, reference has {expected}")]
    SubcarrierCountMismatch { expected: usize, got: usize },
    #[error("no reference estimate has been accepted yet")]
    NoReference,
    #[error("reference estimate rejected: subcarrier {subcarrier} flagged {flag:?}")]
    RejectedReference { subcarrier: usize, flag: EstimateFlag },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("board lists {got} path phases for {expected} antennas")]
    WrongPathPhaseCount { expected: usize, got: usize },
}

/// Static description of one physical board: array layout plus the reference
/// distribution-network phase at each antenna. Serialized as the JSON board
/// file that capture tools write and analysis tools read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardDescription {
    /// Wire-format version the board's capture stream uses.
    pub format_version: u8,
    pub rows: usize,
    pub cols: usize,
    pub element_spacing_m: f64,
    pub carrier_frequency_hz: f64,
    /// Reference-path phase per antenna, radians, antenna-index order.
    pub phi_path_rad: Vec<f64>,
}

impl BoardDescription {
    pub fn new(geometry: &ArrayGeometry, phi_path_rad: Vec<f64>) -> Self {
        BoardDescription {
            format_version: crate::wire::WIRE_VERSION,
            rows: geometry.rows(),
            cols: geometry.cols(),
            element_spacing_m: geometry.element_spacing_m(),
            carrier_frequency_hz: geometry.carrier_frequency_hz(),
            phi_path_rad,
        }
    }

    pub fn n_antennas(&self) -> usize {
        self.rows * self.cols
    }

    pub fn geometry(&self) -> Result<ArrayGeometry, GeometryError> {
        ArrayGeometry::new(self.rows, self.cols, self.element_spacing_m, self.carrier_frequency_hz)
    }

    /// Consistency check: geometry constructible and one path phase per
    /// antenna.
    pub fn validate(&self) -> Result<(), CalibrationError> {
        self.geometry()?;
        if self.phi_path_rad.len() != self.n_antennas() {
            return Err(CalibrationError::WrongPathPhaseCount {
                expected: self.n_antennas(),
                got: self.phi_path_rad.len(),
            });
        }
        Ok(())
    }
}

/// The accepted reference estimate: per-subcarrier ĥ_REF plus its age.
#[derive(Debug, Clone, PartialEq)]
struct ReferenceSnapshot {
    /// `[subcarrier][antenna]`.
    h_ref: Vec<ComplexVector>,
    updated_at_us: u64,
}

/// Board path phases plus the latest good reference estimate.
///
/// Single-writer: one owner feeds reference estimates in via
/// [`update_reference`](Self::update_reference); [`calibrate`](Self::calibrate)
/// is read-only. The caller is responsible for deriving reference estimates
/// exclusively from reference-kind clusters (a kind-restricted accumulator
/// makes that structural).
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationState {
    phi_path_rad: Vec<f64>,
    staleness_limit_us: u64,
    reference: Option<ReferenceSnapshot>,
    rejected_updates: u64,
}

impl CalibrationState {
    pub fn new(phi_path_rad: Vec<f64>) -> Self {
        CalibrationState {
            phi_path_rad,
            staleness_limit_us: DEFAULT_STALENESS_LIMIT_US,
            reference: None,
            rejected_updates: 0,
        }
    }

    pub fn from_board(board: &BoardDescription) -> Result<Self, CalibrationError> {
        board.validate()?;
        Ok(Self::new(board.phi_path_rad.clone()))
    }

    pub fn with_staleness_limit(mut self, limit_us: u64) -> Self {
        self.staleness_limit_us = limit_us;
        self
    }

    pub fn n_antennas(&self) -> usize {
        self.phi_path_rad.len()
    }

    pub fn has_reference(&self) -> bool {
        self.reference.is_some()
    }

    /// Reference updates refused because the estimate was not trustworthy.
    pub fn rejected_updates(&self) -> u64 {
        self.rejected_updates
    }

    /// Timestamp of the accepted reference, if any.
    pub fn reference_timestamp_us(&self) -> Option<u64> {
        self.reference.as_ref().map(|r| r.updated_at_us)
    }

    /// The stored ĥ_REF for one subcarrier, if a reference exists.
    pub fn reference_vector(&self, subcarrier: usize) -> Option<&[C64]> {
        self.reference.as_ref().and_then(|r| r.h_ref.get(subcarrier)).map(Vec::as_slice)
    }

    /// The per-antenna divisor `ĥ_REF,m · e^{−jφ_path,m}` that [`calibrate`]
    /// applies, or `None` when there is no reference, the index is out of
    /// range, or the antenna's reference has vanished (so dividing by it
    /// would amplify garbage). Lets callers transform derived quantities —
    /// e.g. covariances, via `C ↦ D C D^H` with `D = diag(1/divisor)` — the
    /// same way estimates are transformed.
    ///
    /// [`calibrate`]: CalibrationState::calibrate
    pub fn reference_divisor(&self, subcarrier: usize, antenna: usize) -> Option<C64> {
        let h_ref = self.reference_vector(subcarrier)?;
        let ref_m = *h_ref.get(antenna)?;
        if ref_m.norm() < MIN_REFERENCE_MAGNITUDE {
            return None;
        }
        Some(ref_m * C64::from_polar(1.0, -self.phi_path_rad[antenna]))
    }

    pub fn is_fresh(&self, now_us: u64) -> bool {
        self.reference
            .as_ref()
            .is_some_and(|r| now_us.saturating_sub(r.updated_at_us) <= self.staleness_limit_us)
    }

    /// Accept a reference-window estimate. Any subcarrier flagged other than
    /// ok (a relock inside the window collapses the eigenvalue gap, loss can
    /// starve pair counts) rejects the whole update: the previous reference —
    /// which calibrated correctly until now — stays in force.
    pub fn update_reference(
        &mut self,
        estimate: &ChannelEstimate,
        timestamp_us: u64,
    ) -> Result<(), CalibrationError> {
        if estimate.n_antennas() != self.n_antennas() {
            return Err(CalibrationError::AntennaCountMismatch {
                expected: self.n_antennas(),
                got: estimate.n_antennas(),
            });
        }
        if let Some(reference) = &self.reference {
            if estimate.n_subcarriers() != reference.h_ref.len() {
                return Err(CalibrationError::SubcarrierCountMismatch {
                    expected: reference.h_ref.len(),
                    got: estimate.n_subcarriers(),
                });
            }
        }
        if let Some((n, sub)) =
            estimate.subcarriers.iter().enumerate().find(|(_, s)| !s.is_ok())
        {
            self.rejected_updates += 1;
            return Err(CalibrationError::RejectedReference { subcarrier: n, flag: sub.flag });
        }
        self.reference = Some(ReferenceSnapshot {
            h_ref: estimate.subcarriers.iter().map(|s| s.h.clone()).collect(),
            updated_at_us: timestamp_us,
        });
        Ok(())
    }

    /// Calibrate an over-the-air estimate against the stored reference.
    ///
    /// Always computes when a reference exists; staleness and per-antenna
    /// reference dropouts are reported in the output rather than refused.
    pub fn calibrate(
        &self,
        ota: &ChannelEstimate,
        now_us: u64,
    ) -> Result<CalibratedEstimate, CalibrationError> {
        let reference = self.reference.as_ref().ok_or(CalibrationError::NoReference)?;
        if ota.n_antennas() != self.n_antennas() {
            return Err(CalibrationError::AntennaCountMismatch {
                expected: self.n_antennas(),
                got: ota.n_antennas(),
            });
        }
        if ota.n_subcarriers() != reference.h_ref.len() {
            return Err(CalibrationError::SubcarrierCountMismatch {
                expected: reference.h_ref.len(),
                got: ota.n_subcarriers(),
            });
        }
        let subcarriers = ota
            .subcarriers
            .iter()
            .zip(&reference.h_ref)
            .map(|(sub, h_ref)| {
                let mut h = Vec::with_capacity(sub.h.len());
                let mut antenna_valid = Vec::with_capacity(sub.h.len());
                for (m, (&ota_m, &ref_m)) in sub.h.iter().zip(h_ref).enumerate() {
                    if ref_m.norm() < MIN_REFERENCE_MAGNITUDE {
                        h.push(C64::new(0.0, 0.0));
                        antenna_valid.push(false);
                        continue;
                    }
                    let denominator = ref_m * C64::from_polar(1.0, -self.phi_path_rad[m]);
                    h.push(ota_m / denominator);
                    antenna_valid.push(true);
                }
                CalibratedSubcarrier { h, antenna_valid, flag: sub.flag }
            })
            .collect();
        Ok(CalibratedEstimate { subcarriers, stale: !self.is_fresh(now_us) })
    }
}

/// One subcarrier after calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedSubcarrier {
    pub h: ComplexVector,
    /// False where the reference magnitude was too small to divide by; the
    /// corresponding `h` entry is zeroed.
    pub antenna_valid: Vec<bool>,
    /// Carried over from the over-the-air estimate.
    pub flag: EstimateFlag,
}

impl CalibratedSubcarrier {
    pub fn all_antennas_valid(&self) -> bool {
        self.antenna_valid.iter().all(|&v| v)
    }
}

/// A calibrated window: true channel vectors up to one global complex factor.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedEstimate {
    pub subcarriers: Vec<CalibratedSubcarrier>,
    /// The reference that produced this was older than the staleness limit.
    pub stale: bool,
}

impl CalibratedEstimate {
    pub fn n_subcarriers(&self) -> usize {
        self.subcarriers.len()
    }

    pub fn n_antennas(&self) -> usize {
        self.subcarriers.first().map_or(0, |s| s.h.len())
    }
}
