//! Antenna array layout, subcarrier grid, and steering vectors.
//!
//! The array is a planar rows×cols grid in the x–z plane (columns step along
//! +x, rows step downward along −z), indexed row-major from the top-left
//! element. Azimuth is measured in the horizontal x–y plane from broadside
//! (+y): a source at azimuth Θ lies along the unit vector
//! `u(Θ) = (sin Θ, cos Θ, 0)`, so elements of the same column see identical
//! phase and the broadside steering vector is all-ones.

use crate::linalg::{ComplexVector, C64};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Propagation speed used to convert carrier frequency to wavelength (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Carrier frequency of WiFi channel 6, the default band (Hz).
pub const DEFAULT_CARRIER_HZ: f64 = 2.437e9;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("array needs at least one element (got {rows}x{cols})")]
    EmptyArray { rows: usize, cols: usize },
    #[error("element spacing must be positive, got {0}")]
    BadSpacing(f64),
    #[error("carrier frequency must be positive, got {0}")]
    BadCarrier(f64),
    #[error("subcarrier grid is empty")]
    EmptyGrid,
    #[error("subcarrier indices must be strictly increasing (index {0} out of order)")]
    UnsortedGrid(i32),
    #[error("subcarrier spacing must be positive, got {0}")]
    BadSubcarrierSpacing(f64),
}

/// Planar antenna array: geometry plus the carrier it is tuned to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    rows: usize,
    cols: usize,
    element_spacing_m: f64,
    carrier_frequency_hz: f64,
}

impl ArrayGeometry {
    pub fn new(
        rows: usize,
        cols: usize,
        element_spacing_m: f64,
        carrier_frequency_hz: f64,
    ) -> Result<Self, GeometryError> {
        if rows == 0 || cols == 0 {
            return Err(GeometryError::EmptyArray { rows, cols });
        }
        if !(element_spacing_m > 0.0) {
            return Err(GeometryError::BadSpacing(element_spacing_m));
        }
        if !(carrier_frequency_hz > 0.0) {
            return Err(GeometryError::BadCarrier(carrier_frequency_hz));
        }
        Ok(Self { rows, cols, element_spacing_m, carrier_frequency_hz })
    }

    /// The default board: 2×4 elements at half-wavelength spacing on channel 6.
    pub fn default_2x4() -> Self {
        let lambda = SPEED_OF_LIGHT / DEFAULT_CARRIER_HZ;
        Self {
            rows: 2,
            cols: 4,
            element_spacing_m: lambda / 2.0,
            carrier_frequency_hz: DEFAULT_CARRIER_HZ,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn n_antennas(&self) -> usize {
        self.rows * self.cols
    }

    pub fn element_spacing_m(&self) -> f64 {
        self.element_spacing_m
    }

    pub fn carrier_frequency_hz(&self) -> f64 {
        self.carrier_frequency_hz
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency_hz
    }

    /// Position of antenna `m` (row-major from top-left), centered on the
    /// array's geometric midpoint.
    pub fn position(&self, m: usize) -> [f64; 3] {
        assert!(m < self.n_antennas(), "antenna index {m} out of range");
        let row = (m / self.cols) as f64;
        let col = (m % self.cols) as f64;
        let d = self.element_spacing_m;
        [
            (col - (self.cols as f64 - 1.0) / 2.0) * d,
            0.0,
            ((self.rows as f64 - 1.0) / 2.0 - row) * d,
        ]
    }
}

/// Set of subcarriers carried by each report: integer indices relative to the
/// channel center, with a fixed spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubcarrierGrid {
    indices: Vec<i32>,
    spacing_hz: f64,
    center_frequency_hz: f64,
}

impl SubcarrierGrid {
    pub fn new(
        indices: Vec<i32>,
        spacing_hz: f64,
        center_frequency_hz: f64,
    ) -> Result<Self, GeometryError> {
        if indices.is_empty() {
            return Err(GeometryError::EmptyGrid);
        }
        if !(spacing_hz > 0.0) {
            return Err(GeometryError::BadSubcarrierSpacing(spacing_hz));
        }
        if !(center_frequency_hz > 0.0) {
            return Err(GeometryError::BadCarrier(center_frequency_hz));
        }
        for pair in indices.windows(2) {
            if pair[1] <= pair[0] {
                return Err(GeometryError::UnsortedGrid(pair[1]));
            }
        }
        Ok(Self { indices, spacing_hz, center_frequency_hz })
    }

    /// The 52 populated subcarriers of a 20 MHz legacy preamble: ±1..±26 at
    /// 312.5 kHz, centered on channel 6.
    pub fn lltf_default() -> Self {
        let indices = (-26..=26).filter(|&i| i != 0).collect();
        Self { indices, spacing_hz: 312_500.0, center_frequency_hz: DEFAULT_CARRIER_HZ }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[i32] {
        &self.indices
    }

    pub fn spacing_hz(&self) -> f64 {
        self.spacing_hz
    }

    pub fn center_frequency_hz(&self) -> f64 {
        self.center_frequency_hz
    }

    /// Absolute RF frequency of the k-th subcarrier in the grid.
    pub fn absolute_frequency_hz(&self, k: usize) -> f64 {
        self.center_frequency_hz + self.indices[k] as f64 * self.spacing_hz
    }
}

/// Far-field steering vector at an explicit frequency: entry m is
/// `exp(−j·2πf/c·⟨u(Θ), p_m⟩)`.
pub fn steering_vector_at(
    geometry: &ArrayGeometry,
    azimuth_rad: f64,
    frequency_hz: f64,
) -> ComplexVector {
    let k = 2.0 * std::f64::consts::PI * frequency_hz / SPEED_OF_LIGHT;
    let (sin_az, cos_az) = azimuth_rad.sin_cos();
    (0..geometry.n_antennas())
        .map(|m| {
            let p = geometry.position(m);
            let projection = sin_az * p[0] + cos_az * p[1];
            C64::from_polar(1.0, -k * projection)
        })
        .collect()
}

/// Steering vector at the array's carrier frequency for azimuth Θ ∈ [−π/2, π/2]
/// (broadside = 0, positive toward +x). All entries have unit magnitude;
/// broadside gives the all-ones vector.
pub fn steering_vector(geometry: &ArrayGeometry, azimuth_rad: f64) -> ComplexVector {
    steering_vector_at(geometry, azimuth_rad, geometry.carrier_frequency_hz)
}
