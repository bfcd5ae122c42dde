//! Dense complex matrices and a Hermitian eigensolver sized for antenna arrays.
//!
//! Everything downstream (covariance estimation, calibration, MUSIC) operates
//! on M×M Hermitian matrices where M is the antenna count — small, typically 8.
//! The eigensolver is a cyclic Jacobi iteration with complex plane rotations:
//! for these sizes it is fast, it needs no pivot heuristics or randomness, and
//! bit-identical inputs give bit-identical outputs, which the estimator's
//! reproducibility guarantees rely on. The rotation algebra follows the classic
//! symmetric Jacobi scheme (Numerical Recipes §11.1), extended to Hermitian
//! matrices by carrying the pivot's phase into the rotation.

use num_complex::Complex64;
use thiserror::Error;

/// Complex scalar used throughout the crate.
pub type C64 = Complex64;

/// Column vector of complex samples (one entry per antenna, usually).
pub type ComplexVector = Vec<C64>;

/// Relative tolerance for accepting a matrix as Hermitian.
pub const HERMITIAN_REL_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix is {rows}x{cols}, operation needs a square matrix")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix deviates from Hermitian symmetry by {defect:.3e} (relative)")]
    NotHermitian { defect: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![C64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, C64::new(1.0, 0.0));
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds the outer product `u * v^H` (rank-1 unless u or v is zero).
    pub fn outer(u: &[C64], v: &[C64]) -> Self {
        Self::from_fn(u.len(), v.len(), |i, j| u[i] * v[j].conj())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> C64 {
        assert_eq!(self.rows, self.cols, "trace of a non-square matrix");
        (0..self.rows).map(|i| self.get(i, i)).sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|c| c * s).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    /// Adds `s` to every diagonal entry.
    pub fn add_scaled_identity(&self, s: f64) -> Self {
        let mut out = self.clone();
        for i in 0..self.rows.min(self.cols) {
            let d = out.get(i, i);
            out.set(i, i, d + s);
        }
        out
    }

    pub fn mul_vec(&self, v: &[C64]) -> Result<ComplexVector, LinalgError> {
        if v.len() != self.cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "matrix has {} columns, vector has {} entries",
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![C64::new(0.0, 0.0); self.rows];
        for i in 0..self.rows {
            let mut acc = C64::new(0.0, 0.0);
            for j in 0..self.cols {
                acc += self.get(i, j) * v[j];
            }
            out[i] = acc;
        }
        Ok(out)
    }

    /// How far the matrix is from `A = A^H`, as `‖A − A^H‖_F / ‖A‖_F`
    /// (zero matrix reports zero defect).
    pub fn hermitian_defect(&self) -> Result<f64, LinalgError> {
        if self.rows != self.cols {
            return Err(LinalgError::NotSquare { rows: self.rows, cols: self.cols });
        }
        let norm = self.frobenius_norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        let mut defect_sq = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                let d = self.get(i, j) - self.get(j, i).conj();
                defect_sq += d.norm_sqr();
            }
        }
        Ok(defect_sq.sqrt() / norm)
    }

    pub fn is_hermitian(&self, rel_tol: f64) -> bool {
        matches!(self.hermitian_defect(), Ok(d) if d <= rel_tol)
    }
}

/// Result of [`hermitian_eigendecomposition`]: eigenvalues sorted descending,
/// `eigenvectors[k]` is the unit-norm eigenvector for `eigenvalues[k]`, with
/// the first component of magnitude above 1e-12 rotated to be real-positive so
/// the decomposition is deterministic.
#[derive(Debug, Clone)]
pub struct Eigendecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<ComplexVector>,
}

impl Eigendecomposition {
    /// Reassembles `Σ λ_k v_k v_k^H`; useful for residual checks.
    pub fn reconstruct(&self) -> ComplexMatrix {
        let n = self.eigenvalues.len();
        let mut out = ComplexMatrix::zeros(n, n);
        for (lambda, v) in self.eigenvalues.iter().zip(&self.eigenvectors) {
            for i in 0..n {
                for j in 0..n {
                    let cur = out.get(i, j);
                    out.set(i, j, cur + v[i] * v[j].conj() * *lambda);
                }
            }
        }
        out
    }
}

const MAX_SWEEPS: usize = 64;

/// Full eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.
///
/// Rejects non-square input and input whose Hermitian defect exceeds
/// [`HERMITIAN_REL_TOL`]. Iterates plane rotations in a fixed (p, q) order until
/// the off-diagonal Frobenius norm falls below `1e-15 · ‖A‖_F`, which for the
/// small matrices used here happens within a handful of sweeps.
pub fn hermitian_eigendecomposition(
    a: &ComplexMatrix,
) -> Result<Eigendecomposition, LinalgError> {
    if a.rows != a.cols {
        return Err(LinalgError::NotSquare { rows: a.rows, cols: a.cols });
    }
    let defect = a.hermitian_defect()?;
    if !(defect <= HERMITIAN_REL_TOL) {
        // NaN defect (non-finite entries) also lands here.
        return Err(LinalgError::NotHermitian { defect });
    }
    let n = a.rows;

    // Work on the exactly-Hermitian average of A and A^H so the sub-tolerance
    // defect cannot leak into the iteration.
    let mut w = ComplexMatrix::from_fn(n, n, |i, j| (a.get(i, j) + a.get(j, i).conj()) * 0.5);
    let mut v = ComplexMatrix::identity(n);

    let scale = w.frobenius_norm();
    if scale > 0.0 {
        let target = scale * 1e-15;
        for _sweep in 0..MAX_SWEEPS {
            if off_diagonal_norm(&w) <= target {
                break;
            }
            for p in 0..n - 1 {
                for q in p + 1..n {
                    rotate(&mut w, &mut v, p, q);
                }
            }
        }
    }

    // Diagonal of the converged matrix holds the eigenvalues (imaginary parts
    // are rounding residue). Sort descending; ties keep diagonal order so the
    // output is deterministic.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        w.get(j, j).re.partial_cmp(&w.get(i, i).re).unwrap().then(i.cmp(&j))
    });

    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenvectors = Vec::with_capacity(n);
    for &k in &order {
        eigenvalues.push(w.get(k, k).re);
        let mut vec: ComplexVector = (0..n).map(|i| v.get(i, k)).collect();
        normalize_eigenvector(&mut vec);
        eigenvectors.push(vec);
    }
    Ok(Eigendecomposition { eigenvalues, eigenvectors })
}

fn off_diagonal_norm(w: &ComplexMatrix) -> f64 {
    let n = w.rows();
    let mut sum = 0.0;
    for p in 0..n {
        for q in 0..n {
            if p != q {
                sum += w.get(p, q).norm_sqr();
            }
        }
    }
    sum.sqrt()
}

/// One Jacobi rotation zeroing the (p, q) pivot of `w`, accumulated into `v`.
///
/// With the pivot written as `|a_pq| e^{jθ}`, the unitary
/// `R = [[c, s e^{jθ}], [−s e^{−jθ}, c]]` embedded at rows/columns (p, q)
/// annihilates the pivot of `R^H W R` when `t = s/c` solves
/// `t² + 2·t·(a_qq − a_pp)/(2|a_pq|) − 1 = 0`; the smaller root keeps the
/// rotation angle below π/4 for numerical stability.
fn rotate(w: &mut ComplexMatrix, v: &mut ComplexMatrix, p: usize, q: usize) {
    let pivot = w.get(p, q);
    let abs_pivot = pivot.norm();
    if abs_pivot == 0.0 {
        return;
    }
    let phase = pivot / abs_pivot; // e^{jθ}
    let alpha = w.get(p, p).re;
    let gamma = w.get(q, q).re;

    let theta = (gamma - alpha) / (2.0 * abs_pivot);
    let t = if theta.abs() > 1e12 {
        // Asymptotic root; avoids overflow in theta².
        0.5 / theta
    } else {
        let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
        sign / (theta.abs() + (1.0 + theta * theta).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;

    let n = w.rows();
    let s_phase = phase * s;
    let s_phase_conj = phase.conj() * s;

    // W := W R  (columns p and q)
    for i in 0..n {
        let wip = w.get(i, p);
        let wiq = w.get(i, q);
        w.set(i, p, wip * c - wiq * s_phase_conj);
        w.set(i, q, wip * s_phase + wiq * c);
    }
    // W := R^H W  (rows p and q)
    for j in 0..n {
        let wpj = w.get(p, j);
        let wqj = w.get(q, j);
        w.set(p, j, wpj * c - wqj * s_phase);
        w.set(q, j, wpj * s_phase_conj + wqj * c);
    }
    // Pin the annihilated pair and the rotated diagonal to exact values the
    // algebra guarantees, so rounding residue cannot accumulate there.
    w.set(p, q, C64::new(0.0, 0.0));
    w.set(q, p, C64::new(0.0, 0.0));
    let dp = w.get(p, p);
    let dq = w.get(q, q);
    w.set(p, p, C64::new(dp.re, 0.0));
    w.set(q, q, C64::new(dq.re, 0.0));

    // V := V R
    for i in 0..n {
        let vip = v.get(i, p);
        let viq = v.get(i, q);
        v.set(i, p, vip * c - viq * s_phase_conj);
        v.set(i, q, vip * s_phase + viq * c);
    }
}

/// Unit-norms the vector and rotates its global phase so the first component
/// with magnitude above 1e-12 is real and positive.
fn normalize_eigenvector(v: &mut [C64]) {
    let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    if let Some(lead) = v.iter().find(|x| x.norm() > 1e-12).copied() {
        let corr = lead.conj() / lead.norm();
        for x in v.iter_mut() {
            *x *= corr;
        }
    }
}

/// Wraps an angle to [−π, π).
pub fn wrap_phase(x: f64) -> f64 {
    use std::f64::consts::PI;
    (x + PI).rem_euclid(2.0 * PI) - PI
}

/// Inner product `⟨u, v⟩ = Σ u_i · conj(v_i)`.
pub fn dot(u: &[C64], v: &[C64]) -> C64 {
    u.iter().zip(v).map(|(a, b)| a * b.conj()).sum()
}

/// Euclidean norm of a complex vector.
pub fn vector_norm(v: &[C64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{rngs::StdRng, Rng, SeedableRng};

    fn random_hermitian(n: usize, rng: &mut StdRng) -> ComplexMatrix {
        let mut m = ComplexMatrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, C64::new(rng.random_range(-2.0..2.0), 0.0));
            for j in i + 1..n {
                let v = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                m.set(i, j, v);
                m.set(j, i, v.conj());
            }
        }
        m
    }

    /// Determinant by LU with partial pivoting — the independent path used to
    /// check eigenvalues against the characteristic polynomial.
    fn determinant(m: &ComplexMatrix) -> C64 {
        let n = m.rows();
        let mut a: Vec<Vec<C64>> =
            (0..n).map(|i| (0..n).map(|j| m.get(i, j)).collect()).collect();
        let mut det = C64::new(1.0, 0.0);
        for k in 0..n {
            let (pivot_row, _) = (k..n)
                .map(|r| (r, a[r][k].norm()))
                .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
                .unwrap();
            if a[pivot_row][k].norm() == 0.0 {
                return C64::new(0.0, 0.0);
            }
            if pivot_row != k {
                a.swap(pivot_row, k);
                det = -det;
            }
            det *= a[k][k];
            for r in k + 1..n {
                let factor = a[r][k] / a[k][k];
                for c in k..n {
                    let sub = factor * a[k][c];
                    a[r][c] -= sub;
                }
            }
        }
        det
    }

    fn char_poly_at(m: &ComplexMatrix, lambda: f64) -> f64 {
        determinant(&m.add_scaled_identity(-lambda)).norm()
    }

    #[test]
    fn identity_eigenpairs() {
        let eig = hermitian_eigendecomposition(&ComplexMatrix::identity(2)).unwrap();
        assert_eq!(eig.eigenvalues, vec![1.0, 1.0]);
        assert_eq!(eig.eigenvectors[0], vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
        assert_eq!(eig.eigenvectors[1], vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)]);
    }

    #[test]
    fn rank_one_eigenpair_with_phase_convention() {
        // h = (1, j): h h^H has eigenvalues (2, 0) and principal vector h/√2
        // once the leading component is rotated real-positive.
        let h = [C64::new(1.0, 0.0), C64::new(0.0, 1.0)];
        let m = ComplexMatrix::outer(&h, &h);
        let eig = hermitian_eigendecomposition(&m).unwrap();
        assert!((eig.eigenvalues[0] - 2.0).abs() < 1e-14, "λ1 = {}", eig.eigenvalues[0]);
        assert!(eig.eigenvalues[1].abs() < 1e-14, "λ2 = {}", eig.eigenvalues[1]);
        let v = &eig.eigenvectors[0];
        let inv_sqrt2 = 1.0 / 2.0_f64.sqrt();
        assert!((v[0] - C64::new(inv_sqrt2, 0.0)).norm() < 1e-12);
        assert!((v[1] - C64::new(0.0, inv_sqrt2)).norm() < 1e-12);
    }

    #[test]
    fn random_hermitian_reconstruction_and_char_poly_roots() {
        let mut rng = StdRng::seed_from_u64(41);
        for _ in 0..50 {
            let m = random_hermitian(4, &mut rng);
            let eig = hermitian_eigendecomposition(&m).unwrap();
            let norm = m.frobenius_norm().max(1e-30);

            let residual = eig.reconstruct().sub(&m).frobenius_norm();
            assert!(residual <= 1e-9 * norm, "reconstruction residual {residual:.3e}");

            // Each reported eigenvalue must be a root of det(A − λI), checked
            // through an LU determinant that shares no code with the solver.
            let tol = 1e-9 * (1.0 + norm).powi(4);
            for &lambda in &eig.eigenvalues {
                let p = char_poly_at(&m, lambda);
                assert!(p <= tol, "char poly at {lambda} is {p:.3e}, tol {tol:.3e}");
            }
        }
    }

    #[test]
    fn eigenvectors_orthonormal_and_residuals_small() {
        let mut rng = StdRng::seed_from_u64(42);
        for n in [2, 3, 4, 8, 16] {
            let m = random_hermitian(n, &mut rng);
            let eig = hermitian_eigendecomposition(&m).unwrap();
            let norm = m.frobenius_norm();
            for k in 0..n {
                let vk = &eig.eigenvectors[k];
                for l in 0..n {
                    let expected = if k == l { 1.0 } else { 0.0 };
                    let d = (dot(vk, &eig.eigenvectors[l]).norm() - expected).abs();
                    assert!(d < 1e-9, "orthonormality defect {d:.3e} at ({k},{l}), n={n}");
                }
                let av = m.mul_vec(vk).unwrap();
                let res: f64 = av
                    .iter()
                    .zip(vk)
                    .map(|(a, v)| (a - v * eig.eigenvalues[k]).norm_sqr())
                    .sum::<f64>()
                    .sqrt();
                assert!(res <= 1e-9 * norm, "eigenpair residual {res:.3e}, n={n}");
            }
        }
    }

    #[test]
    fn eigenvalues_sorted_descending_and_sum_to_trace() {
        let mut rng = StdRng::seed_from_u64(43);
        let m = random_hermitian(8, &mut rng);
        let eig = hermitian_eigendecomposition(&m).unwrap();
        for pair in eig.eigenvalues.windows(2) {
            assert!(pair[0] >= pair[1], "not descending: {:?}", eig.eigenvalues);
        }
        let sum: f64 = eig.eigenvalues.iter().sum();
        assert!((sum - m.trace().re).abs() <= 1e-12 * m.frobenius_norm().max(1.0));
    }

    #[test]
    fn psd_plus_identity_shifts_eigenvalues() {
        // (hh^H + σ²I) has eigenvalues ‖h‖² + σ² and σ² (multiplicity M−1).
        let h = [C64::new(1.0, 0.5), C64::new(-0.3, 0.2), C64::new(0.0, -1.1)];
        let sigma2 = 0.25;
        let m = ComplexMatrix::outer(&h, &h).add_scaled_identity(sigma2);
        let eig = hermitian_eigendecomposition(&m).unwrap();
        let h_norm_sq: f64 = h.iter().map(|c| c.norm_sqr()).sum();
        assert!((eig.eigenvalues[0] - (h_norm_sq + sigma2)).abs() < 1e-12);
        assert!((eig.eigenvalues[1] - sigma2).abs() < 1e-12);
        assert!((eig.eigenvalues[2] - sigma2).abs() < 1e-12);
    }

    #[test]
    fn zero_matrix_is_handled() {
        let eig = hermitian_eigendecomposition(&ComplexMatrix::zeros(3, 3)).unwrap();
        assert_eq!(eig.eigenvalues, vec![0.0, 0.0, 0.0]);
        assert_eq!(eig.eigenvectors[0][0], C64::new(1.0, 0.0));
    }

    #[test]
    fn non_hermitian_input_rejected() {
        let mut m = ComplexMatrix::identity(3);
        m.set(0, 1, C64::new(0.5, 0.0)); // no conjugate partner
        match hermitian_eigendecomposition(&m) {
            Err(LinalgError::NotHermitian { defect }) => assert!(defect > HERMITIAN_REL_TOL),
            other => panic!("expected NotHermitian, got {other:?}"),
        }
        let nonsquare = ComplexMatrix::zeros(2, 3);
        assert_eq!(
            hermitian_eigendecomposition(&nonsquare).unwrap_err(),
            LinalgError::NotSquare { rows: 2, cols: 3 }
        );
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut m = ComplexMatrix::identity(2);
        m.set(0, 0, C64::new(f64::NAN, 0.0));
        assert!(matches!(
            hermitian_eigendecomposition(&m),
            Err(LinalgError::NotHermitian { .. })
        ));
    }

    #[test]
    fn decomposition_is_bit_deterministic() {
        let mut rng = StdRng::seed_from_u64(44);
        let m = random_hermitian(8, &mut rng);
        let a = hermitian_eigendecomposition(&m).unwrap();
        let b = hermitian_eigendecomposition(&m).unwrap();
        assert_eq!(a.eigenvalues, b.eigenvalues);
        assert_eq!(a.eigenvectors, b.eigenvectors);
    }

    #[test]
    fn degenerate_spectrum_keeps_orthonormal_basis() {
        // σ²I: every vector is an eigenvector; the solver must still return an
        // orthonormal set with all eigenvalues equal.
        let m = ComplexMatrix::identity(4).scale(0.3);
        let eig = hermitian_eigendecomposition(&m).unwrap();
        for &l in &eig.eigenvalues {
            assert!((l - 0.3).abs() < 1e-15);
        }
        for k in 0..4 {
            for l in 0..4 {
                let expected = if k == l { 1.0 } else { 0.0 };
                let d = (dot(&eig.eigenvectors[k], &eig.eigenvectors[l]).norm() - expected).abs();
                assert!(d < 1e-12);
            }
        }
    }
}
