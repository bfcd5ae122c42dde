//! Phase-coherent processing for low-cost multi-antenna WiFi channel sounding.
//!
//! WiFi chipsets expose channel state information (CSI) — per-subcarrier complex
//! channel coefficients — but each receiver's PLL settles at an arbitrary phase
//! offset after every relock, so raw CSI from an antenna array is not phase
//! coherent across receivers. This crate implements the full loop needed to get
//! coherent array measurements out of such hardware, plus a simulator that
//! stands in for the hardware so the loop can be exercised end to end:
//!
//! * [`sim`] — seeded, impairment-accurate report generator (frame loss, noise,
//!   PLL relocks, per-receiver gains, reference-path injection) with a ground
//!   truth sidecar for closed-loop validation.
//! * [`wire`] — the binary report record format (CRC32C-protected, resyncable)
//!   and its JSONL debug mirror.
//! * [`cluster`] — groups per-receiver reports of the same transmitted frame.
//! * [`estimator`] — incomplete-data sample covariance and rank-1 channel
//!   estimation via Hermitian eigendecomposition.
//! * [`calibration`] — reference-channel tracking that cancels per-receiver
//!   PLL offsets and known distribution-path phases.
//! * [`aoa`] — antenna phase statistics, phase-stability reports, and a MUSIC
//!   pseudo-spectrum for azimuth estimation.
//! * [`pipeline`] / [`commands`] — the streaming processing engine and the
//!   file-level operations behind the `sounder` CLI.

pub mod aoa;
pub mod calibration;
pub mod cluster;
pub mod commands;
pub mod estimator;
pub mod geometry;
pub mod linalg;
pub mod pipeline;
pub mod sim;
pub mod wire;

pub use geometry::{steering_vector, ArrayGeometry, SubcarrierGrid};
pub use linalg::{hermitian_eigendecomposition, ComplexMatrix, ComplexVector, C64};
