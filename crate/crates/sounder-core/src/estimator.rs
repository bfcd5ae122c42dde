//! Channel estimation from incomplete, phase-ambiguous report windows.
//!
//! Each transmitted frame reaches only a subset of receivers, and every
//! receiver sees the frame through an unknown common transmitter phase. Both
//! problems dissolve in second-order statistics: the per-subcarrier sample
//! covariance
//!
//! ```text
//! Ĉ_ij = 1/|T_ij| · Σ_{t ∈ T_ij} r_i[t] · conj(r_j[t])
//! ```
//!
//! averages only over `T_ij`, the frames where receivers `i` and `j` were
//! *both* present, so missing reports shrink the averaging set instead of
//! corrupting the average, and the per-frame phase `e^{jφ_t}` cancels inside
//! each product. For a static channel `h` with additive white noise of power
//! `σ²`, the expectation is `h h^H + σ² I`; the channel is then recovered as
//! the principal eigenvector, rescaled so that `‖ĥ‖² = λ₁ − σ²` — honouring
//! the eigenvalue relation `Ĉ ĥ = (‖ĥ‖² + σ²) ĥ`.
//!
//! Every subcarrier is processed independently; nothing here smooths across
//! frequency.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::FrameCluster;
use crate::linalg::{
    hermitian_eigendecomposition, ComplexMatrix, ComplexVector, LinalgError, C64,
};
use crate::wire::FrameKind;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("receiver {receiver} out of range for an accumulator over {n_antennas} antennas")]
    ReceiverOutOfRange { receiver: u8, n_antennas: usize },
    #[error("report carries {got} subcarriers, accumulator expects {expected}")]
    SubcarrierMismatch { expected: usize, got: usize },
    #[error("cluster of kind {got:?} fed to an accumulator restricted to {expected:?}")]
    WrongFrameKind { expected: FrameKind, got: FrameKind },
    #[error("noise floor needs at least two antennas, accumulator has {n_antennas}")]
    NotEnoughAntennas { n_antennas: usize },
    #[error("no subcarrier has a complete pair-count matrix")]
    InsufficientPairs,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Health of a per-subcarrier estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateFlag {
    /// Well-separated principal eigenpair above the noise floor.
    Ok,
    /// Principal eigenvalue at or below σ², or nearly tied with the second:
    /// the direction is untrustworthy. The numbers are still returned.
    RankDeficient,
    /// Some receiver pair never co-occurred in the window; the corresponding
    /// covariance entries were zero-filled.
    InsufficientPairs,
}

/// Relative eigenvalue gap below which the principal direction is considered
/// ambiguous.
pub const EIGENVALUE_TIE_REL_TOL: f64 = 1e-9;

/// Running per-subcarrier covariance sums with pair counts.
///
/// `S_n[i][j]` accumulates `r_i · conj(r_j)` over frames where both receivers
/// reported; `T_n[i][j]` counts those frames. Only the upper triangle is
/// accumulated — the lower is its mirrored conjugate — so the finalized matrix
/// is Hermitian by construction, not by luck.
#[derive(Debug, Clone)]
pub struct CovarianceAccumulator {
    n_antennas: usize,
    n_subcarriers: usize,
    /// Per subcarrier, row-major M×M complex sums (upper triangle live).
    sums: Vec<Vec<C64>>,
    /// Per subcarrier, row-major M×M pair counts (upper triangle live).
    pair_counts: Vec<Vec<u64>>,
    clusters_in: u64,
    expected_kind: Option<FrameKind>,
}

impl CovarianceAccumulator {
    pub fn new(n_antennas: usize, n_subcarriers: usize) -> Self {
        CovarianceAccumulator {
            n_antennas,
            n_subcarriers,
            sums: vec![vec![C64::new(0.0, 0.0); n_antennas * n_antennas]; n_subcarriers],
            pair_counts: vec![vec![0; n_antennas * n_antennas]; n_subcarriers],
            clusters_in: 0,
            expected_kind: None,
        }
    }

    /// Accumulator that rejects clusters of any other frame kind — used to
    /// guarantee a calibration reference is never contaminated by on-air
    /// traffic.
    pub fn for_kind(n_antennas: usize, n_subcarriers: usize, kind: FrameKind) -> Self {
        CovarianceAccumulator { expected_kind: Some(kind), ..Self::new(n_antennas, n_subcarriers) }
    }

    pub fn n_antennas(&self) -> usize {
        self.n_antennas
    }

    pub fn n_subcarriers(&self) -> usize {
        self.n_subcarriers
    }

    pub fn clusters_in(&self) -> u64 {
        self.clusters_in
    }

    /// Fold one cluster in. Receivers absent from the cluster contribute
    /// nothing; any malformed member leaves the accumulator untouched.
    pub fn accumulate(&mut self, cluster: &FrameCluster) -> Result<(), EstimatorError> {
        if let Some(expected) = self.expected_kind {
            if cluster.frame_kind != expected {
                return Err(EstimatorError::WrongFrameKind {
                    expected,
                    got: cluster.frame_kind,
                });
            }
        }
        let mut members: Vec<(usize, Vec<C64>)> = Vec::with_capacity(cluster.len());
        for (&id, report) in &cluster.members {
            if usize::from(id) >= self.n_antennas {
                return Err(EstimatorError::ReceiverOutOfRange {
                    receiver: id,
                    n_antennas: self.n_antennas,
                });
            }
            if report.coefficients.len() != self.n_subcarriers {
                return Err(EstimatorError::SubcarrierMismatch {
                    expected: self.n_subcarriers,
                    got: report.coefficients.len(),
                });
            }
            let widened =
                report.coefficients.iter().map(|c| C64::new(c.re.into(), c.im.into())).collect();
            members.push((usize::from(id), widened));
        }
        for n in 0..self.n_subcarriers {
            let sums = &mut self.sums[n];
            let counts = &mut self.pair_counts[n];
            for (a, (i, ri)) in members.iter().enumerate() {
                for (j, rj) in members[a..].iter().map(|(j, rj)| (*j, rj)) {
                    sums[i * self.n_antennas + j] += ri[n] * rj[n].conj();
                    counts[i * self.n_antennas + j] += 1;
                }
            }
        }
        self.clusters_in += 1;
        Ok(())
    }

    /// Pair count `|T_ij|` for one subcarrier.
    pub fn pair_count(&self, subcarrier: usize, i: usize, j: usize) -> u64 {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        self.pair_counts[subcarrier][lo * self.n_antennas + hi]
    }

    /// Frames in which `antenna` reported, for one subcarrier (the diagonal
    /// of the pair-count matrix).
    pub fn antenna_samples(&self, subcarrier: usize, antenna: usize) -> u64 {
        self.pair_count(subcarrier, antenna, antenna)
    }

    /// Normalize sums into per-subcarrier covariance matrices.
    pub fn finalize(&self) -> Vec<FinalizedCovariance> {
        (0..self.n_subcarriers)
            .map(|n| {
                let m = self.n_antennas;
                let mut matrix = ComplexMatrix::zeros(m, m);
                let mut insufficient = false;
                let mut min_pairs = u64::MAX;
                for i in 0..m {
                    for j in i..m {
                        let count = self.pair_counts[n][i * m + j];
                        min_pairs = min_pairs.min(count);
                        if count == 0 {
                            insufficient = true;
                            continue;
                        }
                        let value = self.sums[n][i * m + j] / count as f64;
                        matrix.set(i, j, value);
                        if i != j {
                            matrix.set(j, i, value.conj());
                        }
                    }
                }
                if m == 0 {
                    min_pairs = 0;
                }
                FinalizedCovariance {
                    matrix,
                    insufficient_pairs: insufficient,
                    sample_count: min_pairs,
                }
            })
            .collect()
    }
}

/// One subcarrier's normalized covariance plus the bookkeeping the flags need.
#[derive(Debug, Clone)]
pub struct FinalizedCovariance {
    /// Hermitian M×M, zero-filled where no pair count exists.
    pub matrix: ComplexMatrix,
    /// True when any entry had an empty averaging set.
    pub insufficient_pairs: bool,
    /// Weakest entry's averaging-set size — the effective sample count.
    pub sample_count: u64,
}

/// One subcarrier's channel estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct SubcarrierEstimate {
    /// Scaled principal eigenvector; `‖h‖² = max(λ₁ − σ², 0)`.
    pub h: ComplexVector,
    pub principal_eigenvalue: f64,
    pub noise_power: f64,
    pub sample_count: u64,
    pub flag: EstimateFlag,
}

impl SubcarrierEstimate {
    pub fn is_ok(&self) -> bool {
        self.flag == EstimateFlag::Ok
    }
}

/// Channel estimate for a whole window: one entry per subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    pub subcarriers: Vec<SubcarrierEstimate>,
}

impl ChannelEstimate {
    pub fn n_subcarriers(&self) -> usize {
        self.subcarriers.len()
    }

    pub fn n_antennas(&self) -> usize {
        self.subcarriers.first().map_or(0, |s| s.h.len())
    }

    pub fn all_ok(&self) -> bool {
        self.subcarriers.iter().all(SubcarrierEstimate::is_ok)
    }

    /// Estimate every subcarrier of a finalized window. `noise_power` falls
    /// back to the measured noise floor when not supplied; if even that is
    /// unavailable (nothing complete in the window) the floor is taken as 0
    /// so the window still produces flagged output instead of failing.
    pub fn from_accumulator(
        acc: &CovarianceAccumulator,
        noise_power: Option<f64>,
    ) -> Result<ChannelEstimate, EstimatorError> {
        let finalized = acc.finalize();
        let sigma_sq = match noise_power {
            Some(v) => v,
            None => noise_floor_from_covariances(&finalized).unwrap_or(0.0),
        };
        let subcarriers = finalized
            .iter()
            .map(|f| estimate_channel(f, sigma_sq))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ChannelEstimate { subcarriers })
    }
}

/// Principal-eigenvector channel estimate for one subcarrier.
///
/// `ĥ = √(max(λ₁ − σ², 0)) · v₁`, flagged rank-deficient when the principal
/// eigenvalue sits at or below the noise power (nothing left after the noise
/// is subtracted) or is nearly tied with the second (direction ambiguous).
/// An incomplete pair-count matrix overrides both with `InsufficientPairs`.
pub fn estimate_channel(
    cov: &FinalizedCovariance,
    noise_power: f64,
) -> Result<SubcarrierEstimate, EstimatorError> {
    let eig = hermitian_eigendecomposition(&cov.matrix)?;
    let lambda1 = eig.eigenvalues.first().copied().unwrap_or(0.0);
    let gap_collapsed = match eig.eigenvalues.get(1) {
        Some(&lambda2) => lambda1 - lambda2 < EIGENVALUE_TIE_REL_TOL * lambda1.abs(),
        None => false,
    };
    let excess = lambda1 - noise_power;
    let flag = if cov.insufficient_pairs {
        EstimateFlag::InsufficientPairs
    } else if excess <= 0.0 || gap_collapsed {
        EstimateFlag::RankDeficient
    } else {
        EstimateFlag::Ok
    };
    let gain = excess.max(0.0).sqrt();
    let h = eig.eigenvectors[0].iter().map(|v| v * gain).collect();
    Ok(SubcarrierEstimate {
        h,
        principal_eigenvalue: lambda1,
        noise_power,
        sample_count: cov.sample_count,
        flag,
    })
}

/// Noise power measured from the non-principal eigenvalues.
///
/// Under the rank-1 model every eigenvalue except the first equals σ², so
/// their mean — averaged across subcarriers — estimates the floor without any
/// external configuration. Subcarriers with incomplete pair counts are
/// skipped; if none remain the floor is unknowable.
pub fn noise_floor_from_covariances(
    covariances: &[FinalizedCovariance],
) -> Result<f64, EstimatorError> {
    let mut total = 0.0;
    let mut used = 0usize;
    for cov in covariances {
        if cov.insufficient_pairs {
            continue;
        }
        let m = cov.matrix.rows();
        if m < 2 {
            return Err(EstimatorError::NotEnoughAntennas { n_antennas: m });
        }
        let eig = hermitian_eigendecomposition(&cov.matrix)?;
        total += eig.eigenvalues[1..].iter().sum::<f64>() / (m - 1) as f64;
        used += 1;
    }
    if used == 0 {
        return Err(EstimatorError::InsufficientPairs);
    }
    Ok(total / used as f64)
}

/// Noise floor straight from an accumulator.
pub fn estimate_noise_floor(acc: &CovarianceAccumulator) -> Result<f64, EstimatorError> {
    if acc.n_antennas() < 2 {
        return Err(EstimatorError::NotEnoughAntennas { n_antennas: acc.n_antennas() });
    }
    noise_floor_from_covariances(&acc.finalize())
}
