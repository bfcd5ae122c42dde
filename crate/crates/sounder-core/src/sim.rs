//! Closed-loop simulator: stands in for a physical antenna array board.
//!
//! Emits exactly what real hardware would put on the wire — per-receiver
//! [`CsiReport`]s with the impairments that make raw CSI incoherent — plus a
//! [`GroundTruth`] record per frame that the processing pipeline never sees.
//! The receiver model for antenna m on subcarrier n is
//!
//! ```text
//! r_m[n] = h_m[n] · g_m · exp(j(φ + θ_m)) + w,   E|w|² = σ²
//! ```
//!
//! where `h` is the true channel (planar-wavefront OTA channel or the cabled
//! reference path), `g_m` a per-receiver analog gain, `φ` a transmitter phase
//! drawn fresh per frame from U[−π, π), and `θ_m` the receiver's PLL phase
//! offset, which re-draws uniformly at every relock event.
//! All randomness comes from one seeded ChaCha stream, so a (config, seed)
//! pair reproduces a run bit for bit.

use crate::geometry::{steering_vector_at, ArrayGeometry, SubcarrierGrid};
use crate::linalg::{wrap_phase, ComplexMatrix, C64};
use crate::wire::{format_mac, CsiReport, FrameKind, C32};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("noise variance must be finite and ≥ 0, got {0}")]
    BadNoiseVariance(f64),
    #[error("frame loss probability must be in [0, 1), got {0}")]
    BadLossProbability(f64),
    #[error("relock rate must be finite and ≥ 0, got {0}")]
    BadRelockRate(f64),
    #[error("quantizer full scale must be positive, got {0}")]
    BadQuantizerScale(f64),
    #[error("quantizer depth must be 2..=24 bits, got {0}")]
    BadQuantizerDepth(u8),
    #[error("{what} must have one entry per antenna ({expected}), got {got}")]
    WrongPerAntennaLength { what: &'static str, expected: usize, got: usize },
    #[error("frame interval must be positive")]
    BadFrameInterval,
    #[error("receive jitter must be smaller than the frame interval")]
    JitterTooLarge,
}

/// Channel and receiver impairments applied to every emitted frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpairmentConfig {
    /// Complex noise power σ² per coefficient (linear).
    pub noise_variance: f64,
    /// Independent per-receiver probability of dropping a frame's report.
    pub frame_loss_probability: f64,
    /// Poisson rate of PLL relock events, per simulated second.
    pub pll_relock_rate_hz: f64,
    /// Optional uniform quantizer applied to coefficients before they hit the
    /// wire, `None` = off.
    pub quantizer_bits: Option<u8>,
    /// Full-scale amplitude of the quantizer (clamps beyond it).
    pub quantizer_full_scale: f64,
}

impl Default for ImpairmentConfig {
    fn default() -> Self {
        Self {
            noise_variance: 0.0,
            frame_loss_probability: 0.0,
            pll_relock_rate_hz: 0.0,
            quantizer_bits: None,
            quantizer_full_scale: 2.0,
        }
    }
}

impl ImpairmentConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !self.noise_variance.is_finite() || self.noise_variance < 0.0 {
            return Err(SimError::BadNoiseVariance(self.noise_variance));
        }
        if !self.frame_loss_probability.is_finite()
            || !(0.0..1.0).contains(&self.frame_loss_probability)
        {
            return Err(SimError::BadLossProbability(self.frame_loss_probability));
        }
        if !self.pll_relock_rate_hz.is_finite() || self.pll_relock_rate_hz < 0.0 {
            return Err(SimError::BadRelockRate(self.pll_relock_rate_hz));
        }
        if let Some(bits) = self.quantizer_bits {
            if !(2..=24).contains(&bits) {
                return Err(SimError::BadQuantizerDepth(bits));
            }
            if !(self.quantizer_full_scale > 0.0) {
                return Err(SimError::BadQuantizerScale(self.quantizer_full_scale));
            }
        }
        Ok(())
    }
}

/// Hidden per-receiver state. The pipeline must reconstruct coherence without
/// ever reading this; tests read it to score the reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverState {
    /// PLL phase offset θ_m, re-drawn at every relock.
    pub pll_phase_offset: f64,
    /// Phase the cabled reference path adds at this antenna.
    pub path_phase: f64,
    /// Analog gain magnitude g_m.
    pub analog_gain: f64,
}

/// Everything that was true about one emitted frame.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub frame_index: u64,
    pub frame_kind: FrameKind,
    pub source_mac: [u8; 6],
    pub sequence_number: u16,
    pub tx_timestamp_us: u64,
    /// `None` for reference frames (they travel by cable, not by air).
    pub azimuth_rad: Option<f64>,
    pub tx_gain: C64,
    pub tx_phase_rad: f64,
    pub pll_offsets: Vec<f64>,
    /// Which receivers actually delivered a report.
    pub delivered: Vec<bool>,
    /// True channel matrix (antennas × subcarriers) before receiver impairments.
    pub channel: ComplexMatrix,
}

/// One simulated frame: the observable reports plus the hidden truth.
#[derive(Debug, Clone)]
pub struct SimFrame {
    pub reports: Vec<CsiReport>,
    pub truth: GroundTruth,
}

/// A PLL relock occurrence, for the ground-truth sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelockEvent {
    pub tx_timestamp_us: u64,
    pub frame_index: u64,
    pub pll_offsets: Vec<f64>,
}

/// Sidecar line: either a frame's truth or a relock event. Serialized as JSONL
/// alongside the capture, never multiplexed into the report stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TruthEvent {
    Frame {
        frame_index: u64,
        frame_kind: FrameKind,
        source_mac: String,
        sequence_number: u16,
        tx_timestamp_us: u64,
        azimuth_rad: Option<f64>,
        tx_gain: [f64; 2],
        tx_phase_rad: f64,
        pll_offsets: Vec<f64>,
        delivered: Vec<bool>,
    },
    Relock {
        frame_index: u64,
        tx_timestamp_us: u64,
        pll_offsets: Vec<f64>,
    },
}

impl GroundTruth {
    /// Sidecar form; drops the (re-derivable) channel matrix.
    pub fn to_event(&self) -> TruthEvent {
        TruthEvent::Frame {
            frame_index: self.frame_index,
            frame_kind: self.frame_kind,
            source_mac: format_mac(&self.source_mac),
            sequence_number: self.sequence_number,
            tx_timestamp_us: self.tx_timestamp_us,
            azimuth_rad: self.azimuth_rad,
            tx_gain: [self.tx_gain.re, self.tx_gain.im],
            tx_phase_rad: self.tx_phase_rad,
            pll_offsets: self.pll_offsets.clone(),
            delivered: self.delivered.clone(),
        }
    }
}

/// Deterministic per-antenna reference-path phases used when a config does not
/// supply its own; also what the written board description reports.
pub fn default_path_phases(n_antennas: usize) -> Vec<f64> {
    (0..n_antennas).map(|m| wrap_phase(0.37 + 0.61 * m as f64)).collect()
}

pub const DEFAULT_OTA_MAC: [u8; 6] = [0x02, 0x4F, 0x54, 0x41, 0x00, 0x01];
pub const DEFAULT_REF_MAC: [u8; 6] = [0x02, 0x52, 0x45, 0x46, 0x00, 0x01];

/// Full description of a simulated run. Serializable, so (config, seed) is a
/// complete recipe for reproducing a capture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatorConfig {
    pub geometry: ArrayGeometry,
    pub grid: SubcarrierGrid,
    pub impairments: ImpairmentConfig,
    /// Transmitter azimuth, radians from broadside.
    pub azimuth_rad: f64,
    /// Complex gain of the OTA path (magnitude and bulk phase).
    pub tx_gain: [f64; 2],
    pub frame_interval_us: u64,
    /// Per-receiver uniform arrival jitter, microseconds.
    pub rx_jitter_us: u64,
    /// Every k-th frame is a reference frame; 0 disables the reference path.
    pub ref_every: u32,
    /// Reference-path phase per antenna; `None` = [`default_path_phases`].
    pub path_phases: Option<Vec<f64>>,
    /// Analog gain magnitude per antenna; `None` = unit gains.
    pub analog_gains: Option<Vec<f64>>,
    pub ota_mac: [u8; 6],
    pub ref_mac: [u8; 6],
    pub seed: u64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            geometry: ArrayGeometry::default_2x4(),
            grid: SubcarrierGrid::lltf_default(),
            impairments: ImpairmentConfig::default(),
            azimuth_rad: 0.0,
            tx_gain: [1.0, 0.0],
            frame_interval_us: 10_000,
            rx_jitter_us: 20,
            ref_every: 10,
            path_phases: None,
            analog_gains: None,
            ota_mac: DEFAULT_OTA_MAC,
            ref_mac: DEFAULT_REF_MAC,
            seed: 0,
        }
    }
}

/// True OTA channel matrix for a planar wavefront: column n is the steering
/// vector at that subcarrier's absolute frequency, scaled by the complex
/// transmitter gain. Frequency-flat to first order over a 20 MHz channel.
pub fn synthesize_ota_channel(
    geometry: &ArrayGeometry,
    grid: &SubcarrierGrid,
    azimuth_rad: f64,
    tx_gain: C64,
) -> ComplexMatrix {
    let m = geometry.n_antennas();
    let n = grid.len();
    let mut h = ComplexMatrix::zeros(m, n);
    for k in 0..n {
        let a = steering_vector_at(geometry, azimuth_rad, grid.absolute_frequency_hz(k));
        for (i, &ai) in a.iter().enumerate() {
            h.set(i, k, ai * tx_gain);
        }
    }
    h
}

pub struct Simulator {
    config: SimulatorConfig,
    rng: ChaCha12Rng,
    receivers: Vec<ReceiverState>,
    ota_channel: ComplexMatrix,
    ref_channel: Vec<C64>,
    clock_us: u64,
    frame_index: u64,
    ota_seq: u16,
    ref_seq: u16,
    next_relock_us: Option<u64>,
    relock_log: Vec<RelockEvent>,
}

impl Simulator {
    pub fn new(config: SimulatorConfig) -> Result<Self, SimError> {
        config.impairments.validate()?;
        if config.frame_interval_us == 0 {
            return Err(SimError::BadFrameInterval);
        }
        if config.rx_jitter_us >= config.frame_interval_us {
            return Err(SimError::JitterTooLarge);
        }
        let m = config.geometry.n_antennas();
        let path_phases = match &config.path_phases {
            Some(p) if p.len() != m => {
                return Err(SimError::WrongPerAntennaLength {
                    what: "path_phases",
                    expected: m,
                    got: p.len(),
                })
            }
            Some(p) => p.clone(),
            None => default_path_phases(m),
        };
        let gains = match &config.analog_gains {
            Some(g) if g.len() != m => {
                return Err(SimError::WrongPerAntennaLength {
                    what: "analog_gains",
                    expected: m,
                    got: g.len(),
                })
            }
            Some(g) => g.clone(),
            None => vec![1.0; m],
        };

        let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
        let receivers: Vec<ReceiverState> = path_phases
            .iter()
            .zip(&gains)
            .map(|(&path_phase, &analog_gain)| ReceiverState {
                pll_phase_offset: rng.random_range(-PI..PI),
                path_phase,
                analog_gain,
            })
            .collect();

        let ota_channel = synthesize_ota_channel(
            &config.geometry,
            &config.grid,
            config.azimuth_rad,
            C64::new(config.tx_gain[0], config.tx_gain[1]),
        );
        let ref_channel = receivers.iter().map(|r| C64::from_polar(1.0, r.path_phase)).collect();

        let mut sim = Self {
            config,
            rng,
            receivers,
            ota_channel,
            ref_channel,
            clock_us: 0,
            frame_index: 0,
            ota_seq: 0,
            ref_seq: 0,
            next_relock_us: None,
            relock_log: Vec::new(),
        };
        sim.schedule_relock();
        Ok(sim)
    }

    pub fn config(&self) -> &SimulatorConfig {
        &self.config
    }

    /// Hidden receiver state — test/oracle access only.
    pub fn receiver_states(&self) -> &[ReceiverState] {
        &self.receivers
    }

    pub fn path_phases(&self) -> Vec<f64> {
        self.receivers.iter().map(|r| r.path_phase).collect()
    }

    pub fn clock_us(&self) -> u64 {
        self.clock_us
    }

    /// Pins the PLL offsets to chosen values (adversarial scenarios).
    pub fn set_pll_offsets(&mut self, offsets: &[f64]) {
        assert_eq!(offsets.len(), self.receivers.len());
        for (r, &o) in self.receivers.iter_mut().zip(offsets) {
            r.pll_phase_offset = o;
        }
    }

    /// Moves the transmitter; takes effect from the next emitted frame.
    pub fn set_azimuth(&mut self, azimuth_rad: f64) {
        self.config.azimuth_rad = azimuth_rad;
        self.ota_channel = synthesize_ota_channel(
            &self.config.geometry,
            &self.config.grid,
            azimuth_rad,
            C64::new(self.config.tx_gain[0], self.config.tx_gain[1]),
        );
    }

    fn schedule_relock(&mut self) {
        let rate = self.config.impairments.pll_relock_rate_hz;
        if rate > 0.0 {
            let dt_s = Exp::new(rate).expect("validated rate").sample(&mut self.rng);
            let dt_us = (dt_s * 1e6).clamp(1.0, 1e15) as u64;
            self.next_relock_us = Some(self.clock_us + dt_us);
        }
    }

    /// Re-draws every receiver's PLL phase offset uniformly — what happens
    /// when the downconversion PLLs lose and re-acquire lock.
    pub fn relock_event(&mut self) {
        for r in &mut self.receivers {
            r.pll_phase_offset = self.rng.random_range(-PI..PI);
        }
        self.relock_log.push(RelockEvent {
            tx_timestamp_us: self.clock_us,
            frame_index: self.frame_index,
            pll_offsets: self.receivers.iter().map(|r| r.pll_phase_offset).collect(),
        });
    }

    /// Relock events recorded since the last drain (for the sidecar writer).
    pub fn drain_relock_events(&mut self) -> Vec<RelockEvent> {
        std::mem::take(&mut self.relock_log)
    }

    /// Emits one frame on the scheduled cadence: fires any due Poisson relock
    /// events, picks OTA vs reference per the duty cycle, and advances the
    /// clock by one frame interval.
    pub fn step(&mut self) -> SimFrame {
        while let Some(due) = self.next_relock_us {
            if due > self.clock_us {
                break;
            }
            self.relock_event();
            self.schedule_relock();
        }
        let kind = match self.config.ref_every {
            0 => FrameKind::Ota,
            k => {
                if self.frame_index % k as u64 == (k - 1) as u64 {
                    FrameKind::Reference
                } else {
                    FrameKind::Ota
                }
            }
        };
        self.emit_frame(kind)
    }

    /// Emits one frame of the given kind at the current clock and advances the
    /// clock. Scheduled relocks and the reference duty cycle are bypassed —
    /// this is the lane for orchestrated scenarios; [`step`](Self::step) is the
    /// free-running one.
    pub fn emit_frame(&mut self, kind: FrameKind) -> SimFrame {
        let m = self.config.geometry.n_antennas();
        let n = self.config.grid.len();
        let sigma2 = self.config.impairments.noise_variance;
        let loss = self.config.impairments.frame_loss_probability;

        let tx_phase = self.rng.random_range(-PI..PI);
        let (source_mac, sequence_number) = match kind {
            FrameKind::Ota => {
                let s = self.ota_seq;
                self.ota_seq = (self.ota_seq + 1) % crate::wire::SEQUENCE_MODULUS;
                (self.config.ota_mac, s)
            }
            FrameKind::Reference => {
                let s = self.ref_seq;
                self.ref_seq = (self.ref_seq + 1) % crate::wire::SEQUENCE_MODULUS;
                (self.config.ref_mac, s)
            }
        };

        let channel = match kind {
            FrameKind::Ota => self.ota_channel.clone(),
            FrameKind::Reference => {
                ComplexMatrix::from_fn(m, n, |i, _| self.ref_channel[i])
            }
        };

        let noise = if sigma2 > 0.0 {
            Some(Normal::new(0.0, (sigma2 / 2.0).sqrt()).expect("validated variance"))
        } else {
            None
        };

        let mut delivered = vec![false; m];
        let mut reports = Vec::new();
        for (rx, receiver) in self.receivers.iter().enumerate() {
            if loss > 0.0 && self.rng.random_bool(loss) {
                continue;
            }
            delivered[rx] = true;
            let jitter = if self.config.rx_jitter_us > 0 {
                self.rng.random_range(0..=self.config.rx_jitter_us)
            } else {
                0
            };
            let chain = C64::from_polar(receiver.analog_gain, tx_phase + receiver.pll_phase_offset);
            let mut coefficients = Vec::with_capacity(n);
            let mut power_sum = 0.0;
            for k in 0..n {
                let mut r = channel.get(rx, k) * chain;
                if let Some(dist) = &noise {
                    r += C64::new(dist.sample(&mut self.rng), dist.sample(&mut self.rng));
                }
                let (re, im) = self.quantize(r.re, r.im);
                power_sum += (re * re + im * im) as f64;
                coefficients.push(C32::new(re, im));
            }
            let mean_power = power_sum / n as f64;
            let rssi_db = if mean_power > 0.0 {
                (10.0 * mean_power.log10()).round().clamp(-127.0, 127.0) as i8
            } else {
                -127
            };
            reports.push(CsiReport {
                receiver_id: rx as u8,
                source_mac,
                sequence_number,
                rx_timestamp_us: self.clock_us + jitter,
                frame_kind: kind,
                rssi_db,
                coefficients,
            });
        }

        let truth = GroundTruth {
            frame_index: self.frame_index,
            frame_kind: kind,
            source_mac,
            sequence_number,
            tx_timestamp_us: self.clock_us,
            azimuth_rad: match kind {
                FrameKind::Ota => Some(self.config.azimuth_rad),
                FrameKind::Reference => None,
            },
            tx_gain: C64::new(self.config.tx_gain[0], self.config.tx_gain[1]),
            tx_phase_rad: tx_phase,
            pll_offsets: self.receivers.iter().map(|r| r.pll_phase_offset).collect(),
            delivered,
            channel,
        };

        self.frame_index += 1;
        self.clock_us += self.config.frame_interval_us;
        SimFrame { reports, truth }
    }

    fn quantize(&self, re: f64, im: f64) -> (f32, f32) {
        match self.config.impairments.quantizer_bits {
            None => (re as f32, im as f32),
            Some(bits) => {
                let fs = self.config.impairments.quantizer_full_scale;
                let step = fs / (1u64 << (bits - 1)) as f64;
                let q = |v: f64| ((v.clamp(-fs, fs) / step).round() * step) as f32;
                (q(re), q(im))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::serialize_report;

    fn quiet_config() -> SimulatorConfig {
        SimulatorConfig { rx_jitter_us: 0, ref_every: 0, ..SimulatorConfig::default() }
    }

    #[test]
    fn noiseless_unit_chain_reports_equal_channel_times_tx_phasor() {
        let mut sim = Simulator::new(quiet_config()).unwrap();
        sim.set_pll_offsets(&[0.0; 8]);
        let frame = sim.emit_frame(FrameKind::Ota);
        assert_eq!(frame.reports.len(), 8);
        let phasor = C64::from_polar(1.0, frame.truth.tx_phase_rad);
        for report in &frame.reports {
            let rx = report.receiver_id as usize;
            for (k, c) in report.coefficients.iter().enumerate() {
                let expected = frame.truth.channel.get(rx, k) * phasor;
                let got = C64::new(c.re as f64, c.im as f64);
                assert!(
                    (got - expected).norm() < 1e-6,
                    "antenna {rx} subcarrier {k}: {got} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn reference_frame_carries_path_phase_per_antenna() {
        let mut sim = Simulator::new(quiet_config()).unwrap();
        sim.set_pll_offsets(&[0.0; 8]);
        let frame = sim.emit_frame(FrameKind::Reference);
        let path = sim.path_phases();
        for report in &frame.reports {
            let rx = report.receiver_id as usize;
            for c in &report.coefficients {
                let got = (c.im as f64).atan2(c.re as f64);
                let expected = wrap_phase(path[rx] + frame.truth.tx_phase_rad);
                assert!(
                    wrap_phase(got - expected).abs() < 1e-6,
                    "antenna {rx}: phase {got} vs {expected}"
                );
            }
        }
        assert_eq!(frame.truth.azimuth_rad, None);
        assert_eq!(frame.truth.source_mac, DEFAULT_REF_MAC);
    }

    #[test]
    fn zero_tx_gain_gives_all_zero_coefficients() {
        let cfg = SimulatorConfig { tx_gain: [0.0, 0.0], ..quiet_config() };
        let mut sim = Simulator::new(cfg).unwrap();
        let frame = sim.emit_frame(FrameKind::Ota);
        for report in &frame.reports {
            for c in &report.coefficients {
                assert_eq!((c.re, c.im), (0.0, 0.0));
            }
        }
    }

    #[test]
    fn delivery_rate_matches_loss_probability() {
        let cfg = SimulatorConfig {
            impairments: ImpairmentConfig { frame_loss_probability: 0.3, ..Default::default() },
            grid: SubcarrierGrid::new(vec![1], 312_500.0, 2.437e9).unwrap(),
            ..quiet_config()
        };
        let mut sim = Simulator::new(cfg).unwrap();
        let frames = 2000;
        let mut delivered = 0usize;
        for _ in 0..frames {
            delivered += sim.emit_frame(FrameKind::Ota).reports.len();
        }
        let total = (frames * 8) as f64;
        let rate = delivered as f64 / total;
        let tol = 3.0 * (0.7 * 0.3 / total).sqrt();
        assert!((rate - 0.7).abs() < tol, "delivery rate {rate:.4} vs 0.7 ± {tol:.4}");
    }

    #[test]
    fn successive_relocks_draw_independent_offsets() {
        let mut sim = Simulator::new(quiet_config()).unwrap();
        let events = 1000;
        let mut draws: Vec<Vec<f64>> = Vec::with_capacity(events);
        for _ in 0..events {
            sim.relock_event();
            draws.push(sim.receiver_states().iter().map(|r| r.pll_phase_offset).collect());
        }
        // Fisher–Lee circular correlation between consecutive draws, pooled
        // over antennas: should vanish for independent uniform phases.
        let pairs: Vec<(f64, f64)> = draws
            .windows(2)
            .flat_map(|w| w[0].iter().copied().zip(w[1].iter().copied()).collect::<Vec<_>>())
            .collect();
        let circ_mean = |xs: &[f64]| {
            let (s, c) = xs.iter().fold((0.0, 0.0), |(s, c), &x| (s + x.sin(), c + x.cos()));
            s.atan2(c)
        };
        let a_mean = circ_mean(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
        let b_mean = circ_mean(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
        let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
        for &(a, b) in &pairs {
            let sa = (a - a_mean).sin();
            let sb = (b - b_mean).sin();
            num += sa * sb;
            da += sa * sa;
            db += sb * sb;
        }
        let rho = num / (da * db).sqrt();
        assert!(rho.abs() < 0.05, "circular correlation {rho:.4} not ≈ 0");

        // And each draw must land in the valid range.
        for d in &draws {
            for &theta in d {
                assert!((-PI..PI).contains(&theta));
            }
        }
    }

    #[test]
    fn scheduled_relock_count_tracks_poisson_rate() {
        let cfg = SimulatorConfig {
            impairments: ImpairmentConfig { pll_relock_rate_hz: 5.0, ..Default::default() },
            grid: SubcarrierGrid::new(vec![1], 312_500.0, 2.437e9).unwrap(),
            frame_interval_us: 1_000,
            ..quiet_config()
        };
        let mut sim = Simulator::new(cfg).unwrap();
        for _ in 0..10_000 {
            sim.step(); // 10 simulated seconds
        }
        let relocks = sim.drain_relock_events().len() as f64;
        // Poisson(50): 3σ window.
        assert!((relocks - 50.0).abs() < 3.0 * 50.0_f64.sqrt(), "saw {relocks} relocks");
    }

    #[test]
    fn duty_cycle_interleaves_reference_frames() {
        let cfg = SimulatorConfig { ref_every: 10, ..SimulatorConfig::default() };
        let mut sim = Simulator::new(cfg).unwrap();
        let kinds: Vec<FrameKind> = (0..30).map(|_| sim.step().truth.frame_kind).collect();
        let refs = kinds.iter().filter(|&&k| k == FrameKind::Reference).count();
        assert_eq!(refs, 3);
        assert_eq!(kinds[9], FrameKind::Reference);
        assert_eq!(kinds[10], FrameKind::Ota);
    }

    #[test]
    fn same_seed_reproduces_stream_bit_for_bit() {
        let cfg = SimulatorConfig {
            impairments: ImpairmentConfig {
                noise_variance: 0.02,
                frame_loss_probability: 0.25,
                pll_relock_rate_hz: 2.0,
                ..Default::default()
            },
            seed: 99,
            ..SimulatorConfig::default()
        };
        let run = |cfg: SimulatorConfig| {
            let mut sim = Simulator::new(cfg).unwrap();
            let mut bytes = Vec::new();
            for _ in 0..200 {
                for r in sim.step().reports {
                    bytes.extend_from_slice(&serialize_report(&r));
                }
            }
            bytes
        };
        assert_eq!(run(cfg.clone()), run(cfg.clone()));
        let other = run(SimulatorConfig { seed: 100, ..cfg });
        assert_ne!(run(SimulatorConfig { seed: 99, ..SimulatorConfig::default() }), other);
    }

    #[test]
    fn sequence_numbers_wrap_at_twelve_bits() {
        let cfg = SimulatorConfig {
            grid: SubcarrierGrid::new(vec![1], 312_500.0, 2.437e9).unwrap(),
            geometry: crate::geometry::ArrayGeometry::new(1, 1, 0.06, 2.437e9).unwrap(),
            ..quiet_config()
        };
        let mut sim = Simulator::new(cfg).unwrap();
        let mut last = 0;
        for i in 0..4100u64 {
            let f = sim.emit_frame(FrameKind::Ota);
            assert_eq!(f.truth.sequence_number as u64, i % 4096);
            last = f.truth.sequence_number;
        }
        assert_eq!(last, 3); // 4099 % 4096
    }

    #[test]
    fn rx_timestamps_jitter_within_bound_and_stay_ordered() {
        let cfg = SimulatorConfig { rx_jitter_us: 50, ref_every: 0, ..SimulatorConfig::default() };
        let mut sim = Simulator::new(cfg).unwrap();
        let mut last_per_rx = vec![0u64; 8];
        for _ in 0..200 {
            let frame = sim.step();
            for r in &frame.reports {
                let delta = r.rx_timestamp_us - frame.truth.tx_timestamp_us;
                assert!(delta <= 50, "jitter {delta} exceeds bound");
                let rx = r.receiver_id as usize;
                assert!(r.rx_timestamp_us >= last_per_rx[rx], "receiver {rx} went backwards");
                last_per_rx[rx] = r.rx_timestamp_us;
            }
        }
    }

    #[test]
    fn quantizer_snaps_coefficients_to_grid() {
        let bits = 8u8;
        let fs = 2.0;
        let cfg = SimulatorConfig {
            impairments: ImpairmentConfig {
                quantizer_bits: Some(bits),
                quantizer_full_scale: fs,
                ..Default::default()
            },
            ..quiet_config()
        };
        let mut sim = Simulator::new(cfg).unwrap();
        let step = fs / f64::from(1u32 << (bits - 1));
        let frame = sim.emit_frame(FrameKind::Ota);
        for report in &frame.reports {
            for c in &report.coefficients {
                for v in [c.re as f64, c.im as f64] {
                    let ticks = v / step;
                    assert!(
                        (ticks - ticks.round()).abs() < 1e-6,
                        "{v} is not on the {step}-grid"
                    );
                    assert!(v.abs() <= fs + 1e-9);
                }
            }
        }
        // Depth 8 over ±2.0 keeps unit-magnitude coefficients within half a step.
        let mut clean = Simulator::new(quiet_config()).unwrap();
        clean.set_pll_offsets(&[0.0; 8]);
        let reference = clean.emit_frame(FrameKind::Ota);
        assert_eq!(reference.reports.len(), frame.reports.len());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = |imp: ImpairmentConfig| imp.validate().unwrap_err();
        assert_eq!(
            bad(ImpairmentConfig { noise_variance: -1.0, ..Default::default() }),
            SimError::BadNoiseVariance(-1.0)
        );
        assert_eq!(
            bad(ImpairmentConfig { frame_loss_probability: 1.0, ..Default::default() }),
            SimError::BadLossProbability(1.0)
        );
        assert!(matches!(
            bad(ImpairmentConfig { pll_relock_rate_hz: f64::NAN, ..Default::default() }),
            SimError::BadRelockRate(r) if r.is_nan()
        ));
        let cfg = SimulatorConfig {
            path_phases: Some(vec![0.0; 3]),
            ..SimulatorConfig::default()
        };
        assert!(matches!(
            Simulator::new(cfg),
            Err(SimError::WrongPerAntennaLength { expected: 8, got: 3, .. })
        ));
        let cfg = SimulatorConfig { rx_jitter_us: 10_000, ..SimulatorConfig::default() };
        assert!(matches!(Simulator::new(cfg), Err(SimError::JitterTooLarge)));
    }

    #[test]
    fn truth_sidecar_event_round_trips_as_jsonl() {
        let mut sim = Simulator::new(quiet_config()).unwrap();
        let frame = sim.emit_frame(FrameKind::Ota);
        let line = serde_json::to_string(&frame.truth.to_event()).unwrap();
        assert!(line.contains("\"type\":\"frame\""));
        let back: TruthEvent = serde_json::from_str(&line).unwrap();
        assert_eq!(back, frame.truth.to_event());
        sim.relock_event();
        let ev = &sim.drain_relock_events()[0];
        let line = serde_json::to_string(&TruthEvent::Relock {
            frame_index: ev.frame_index,
            tx_timestamp_us: ev.tx_timestamp_us,
            pll_offsets: ev.pll_offsets.clone(),
        })
        .unwrap();
        assert!(line.contains("\"type\":\"relock\""));
    }
}
