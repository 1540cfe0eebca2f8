//! Dense complex Hermitian matrix primitives.
//!
//! Everything the solvers need from linear algebra lives here: a Hermitian
//! matrix newtype that enforces exact conjugate symmetry, a sorted and
//! phase-normalized eigendecomposition, the Frobenius projection onto the
//! PSD cone, and the measurement map `W -> (tr(H_1 W), ..., tr(H_K W))`
//! together with its adjoint.
//!
//! The measurement matrices are rank one, `H_k = v_k v_k^H`, so the map is
//! stored through the `N x K` matrix `V = [v_1 .. v_K]` rather than as the
//! explicit `K x N^2` operator. [`MeasurementMap::matrix_rows`] materializes
//! the explicit form for checking purposes.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Relative tolerance for accepting a matrix as Hermitian before it is
/// symmetrized exactly.
const HERMITIAN_TOL: f64 = 1e-9;

/// An `N x N` complex matrix with exact conjugate symmetry.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix(CMatrix);

impl HermitianMatrix {
    /// Validates `m` as Hermitian (to a relative `1e-9` of its largest
    /// entry) and symmetrizes it exactly.
    pub fn new(m: CMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidInput(format!(
                "Hermitian matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::InvalidInput("Hermitian matrix must have dim >= 1".into()));
        }
        check_finite(&m)?;
        let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let n = m.nrows();
        for i in 0..n {
            for j in i..n {
                let asym = (m[(i, j)] - m[(j, i)].conj()).norm();
                if asym > HERMITIAN_TOL * scale {
                    return Err(Error::InvalidInput(format!(
                        "matrix is not Hermitian: |a[{i},{j}] - conj(a[{j},{i}])| = {asym:e}"
                    )));
                }
            }
        }
        Ok(Self::symmetrized(m))
    }

    /// Symmetrizes without validation. Callers guarantee `m` is square and
    /// Hermitian up to rounding.
    pub(crate) fn symmetrized(mut m: CMatrix) -> Self {
        let n = m.nrows();
        for i in 0..n {
            m[(i, i)].im = 0.0;
            for j in (i + 1)..n {
                let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
                m[(i, j)] = avg;
                m[(j, i)] = avg.conj();
            }
        }
        Self(m)
    }

    pub fn zeros(n: usize) -> Self {
        Self(CMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        Self(CMatrix::identity(n, n))
    }

    pub fn scaled_identity(n: usize, a: f64) -> Self {
        Self(CMatrix::from_diagonal_element(n, n, Complex64::new(a, 0.0)))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let d = DVector::from_iterator(diag.len(), diag.iter().map(|&x| Complex64::new(x, 0.0)));
        Self(CMatrix::from_diagonal(&d))
    }

    /// `v v^H`.
    pub fn outer(v: &CVector) -> Self {
        Self::symmetrized(v * v.adjoint())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_inner(self) -> CMatrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.0[(i, i)].re).sum()
    }

    /// `<A, B> = tr(A^H B)`, which is real for Hermitian arguments.
    pub fn inner(&self, other: &HermitianMatrix) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| (a.conj() * b).re).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `v^H A v`.
    pub fn quadratic_form(&self, v: &CVector) -> f64 {
        let av = &self.0 * v;
        v.dotc(&av).re
    }

    pub fn scale(&self, a: f64) -> Self {
        Self(&self.0 * Complex64::new(a, 0.0))
    }

    pub fn scale_mut(&mut self, a: f64) {
        self.0 *= Complex64::new(a, 0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn eigen(&self) -> Result<EigenDecomposition> {
        EigenDecomposition::new(self)
    }
}

fn check_finite(m: &CMatrix) -> Result<()> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput("matrix has non-finite entries".into()))
    }
}

impl Add<&HermitianMatrix> for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn add(self, rhs: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix(&self.0 + &rhs.0)
    }
}

impl Sub<&HermitianMatrix> for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn sub(self, rhs: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix(&self.0 - &rhs.0)
    }
}

impl AddAssign<&HermitianMatrix> for HermitianMatrix {
    fn add_assign(&mut self, rhs: &HermitianMatrix) {
        self.0 += &rhs.0;
    }
}

impl SubAssign<&HermitianMatrix> for HermitianMatrix {
    fn sub_assign(&mut self, rhs: &HermitianMatrix) {
        self.0 -= &rhs.0;
    }
}

impl Mul<f64> for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn mul(self, rhs: f64) -> HermitianMatrix {
        self.scale(rhs)
    }
}

impl Neg for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn neg(self) -> HermitianMatrix {
        HermitianMatrix(-&self.0)
    }
}

/// Eigenvalues sorted descending with matching unit eigenvectors as columns.
///
/// Each eigenvector's global phase is fixed so that its largest-magnitude
/// component is real and nonnegative.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: CMatrix,
}

impl EigenDecomposition {
    pub fn new(a: &HermitianMatrix) -> Result<Self> {
        if !a.is_finite() {
            return Err(Error::InvalidInput("matrix has non-finite entries".into()));
        }
        let eig = SymmetricEigen::new(a.0.clone());
        let n = a.dim();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

        let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut eigenvectors = CMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            let mut col = eig.eigenvectors.column(src).into_owned();
            normalize_phase(&mut col);
            eigenvectors.set_column(dst, &col);
        }
        Ok(Self { eigenvalues, eigenvectors })
    }

    pub fn vector(&self, i: usize) -> CVector {
        self.eigenvectors.column(i).into_owned()
    }

    /// `sum_i f(lambda_i) q_i q_i^H` over the eigenpairs with `f(lambda_i) != 0`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> HermitianMatrix {
        let n = self.eigenvalues.len();
        let kept: Vec<(usize, f64)> = self
            .eigenvalues
            .iter()
            .enumerate()
            .map(|(i, &lam)| (i, f(lam)))
            .filter(|&(_, s)| s != 0.0)
            .collect();
        if kept.is_empty() {
            return HermitianMatrix::zeros(n);
        }
        let mut basis = CMatrix::zeros(n, kept.len());
        let mut scaled = CMatrix::zeros(n, kept.len());
        for (j, &(i, s)) in kept.iter().enumerate() {
            let q = self.eigenvectors.column(i);
            basis.set_column(j, &q);
            scaled.set_column(j, &(q * Complex64::new(s, 0.0)));
        }
        HermitianMatrix::symmetrized(scaled * basis.adjoint())
    }
}

/// Rotates `v` so its largest-magnitude component is real nonnegative.
pub fn normalize_phase(v: &mut CVector) {
    let mut best = 0;
    let mut best_mag = -1.0;
    for (i, z) in v.iter().enumerate() {
        let m = z.norm();
        if m > best_mag {
            best_mag = m;
            best = i;
        }
    }
    if best_mag > 0.0 {
        let phase = v[best].conj() / best_mag;
        *v *= phase;
        v[best] = Complex64::new(v[best].norm(), 0.0);
    }
}

/// Nearest positive semidefinite matrix in Frobenius norm: negative
/// eigenvalues are clipped to zero.
pub fn psd_project(x: &HermitianMatrix) -> Result<HermitianMatrix> {
    let eig = x.eigen()?;
    Ok(eig.reconstruct_with(|lam| lam.max(0.0)))
}

/// Number of eigenvalues with `lambda_i >= rel_threshold * lambda_max`.
/// Returns 0 only for the zero matrix.
pub fn numerical_rank(w: &HermitianMatrix, rel_threshold: f64) -> Result<usize> {
    if !(rel_threshold > 0.0 && rel_threshold < 1.0) {
        return Err(Error::InvalidInput(format!(
            "rank threshold must lie in (0, 1), got {rel_threshold}"
        )));
    }
    let eig = w.eigen()?;
    Ok(rank_from_spectrum(&eig.eigenvalues, rel_threshold))
}

/// Rank count on an already sorted (descending) spectrum.
pub fn rank_from_spectrum(eigenvalues: &[f64], rel_threshold: f64) -> usize {
    let lmax = eigenvalues.first().copied().unwrap_or(0.0);
    if lmax <= 0.0 {
        return 0;
    }
    let cut = rel_threshold * lmax;
    eigenvalues.iter().filter(|&&l| l >= cut).count()
}

/// Second-largest eigenvalue and its unit eigenvector.
///
/// For a degenerate top eigenvalue any unit vector of the shared eigenspace
/// orthogonal to the principal eigenvector may be returned.
pub fn second_eigpair(w: &HermitianMatrix) -> Result<(f64, CVector)> {
    if w.dim() < 2 {
        return Err(Error::InvalidInput(
            "second eigenpair needs a matrix of dimension >= 2".into(),
        ));
    }
    let eig = w.eigen()?;
    Ok((eig.eigenvalues[1], eig.vector(1)))
}

/// The linear map `W -> (tr(H_1 W), ..., tr(H_K W))` for rank-one
/// measurement matrices `H_k = v_k v_k^H`, and its adjoint
/// `y -> sum_k y_k H_k`.
#[derive(Debug, Clone)]
pub struct MeasurementMap {
    /// `N x K`, column `k` is `v_k`.
    vectors: CMatrix,
    /// `G = H H^H` with `G[k, j] = tr(H_k H_j) = |v_k^H v_j|^2`.
    gram: DMatrix<f64>,
}

impl MeasurementMap {
    /// Builds the map from the columns `v_k` of `vectors` (`N x K`).
    pub fn from_vectors(vectors: CMatrix) -> Result<Self> {
        if vectors.nrows() == 0 || vectors.ncols() == 0 {
            return Err(Error::InvalidInput("measurement map needs N >= 1 and K >= 1".into()));
        }
        check_finite(&vectors)?;
        let inner = vectors.adjoint() * &vectors;
        let gram = inner.map(|z| z.norm_sqr());
        Ok(Self { vectors, gram })
    }

    pub fn num_ues(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn vectors(&self) -> &CMatrix {
        &self.vectors
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// `H_k` as an explicit matrix.
    pub fn measurement(&self, k: usize) -> HermitianMatrix {
        HermitianMatrix::outer(&self.vectors.column(k).into_owned())
    }

    /// Component `k` is `tr(H_k W)`.
    pub fn apply(&self, w: &HermitianMatrix) -> Result<DVector<f64>> {
        if w.dim() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "map acts on {}x{} matrices, got {}x{}",
                self.dim(),
                self.dim(),
                w.dim(),
                w.dim()
            )));
        }
        let wv = w.as_matrix() * &self.vectors;
        let w_norm = w.frobenius_norm();
        let mut out = DVector::zeros(self.num_ues());
        for k in 0..self.num_ues() {
            let val = self.vectors.column(k).dotc(&wv.column(k));
            if val.im.abs() > 1e-9 * self.gram[(k, k)].sqrt() * w_norm {
                return Err(Error::NumericalCorruption(format!(
                    "tr(H_{k} W) has imaginary residue {:e}",
                    val.im
                )));
            }
            out[k] = val.re;
        }
        Ok(out)
    }

    /// `sum_k y_k H_k`.
    pub fn apply_adjoint(&self, y: &DVector<f64>) -> Result<HermitianMatrix> {
        if y.len() != self.num_ues() {
            return Err(Error::InvalidInput(format!(
                "adjoint expects a {}-vector, got length {}",
                self.num_ues(),
                y.len()
            )));
        }
        let mut scaled = self.vectors.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col *= Complex64::new(y[k], 0.0);
        }
        Ok(HermitianMatrix::symmetrized(scaled * self.vectors.adjoint()))
    }

    /// The explicit `K x N^2` operator whose row `k` is `vec(H_k)^H`
    /// (column-major vectorization).
    pub fn matrix_rows(&self) -> CMatrix {
        let n = self.dim();
        let mut rows = CMatrix::zeros(self.num_ues(), n * n);
        for k in 0..self.num_ues() {
            let hk = self.measurement(k);
            for c in 0..n {
                for r in 0..n {
                    rows[(k, c * n + r)] = hk.as_matrix()[(r, c)].conj();
                }
            }
        }
        rows
    }
}
