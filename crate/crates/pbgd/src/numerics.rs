//! Dense linear-algebra kernels.
//!
//! [`Matrix`] is an immutable, row-major block of `f64` values. Products go
//! through `matrixmultiply`; the singular value decomposition is delegated to
//! `faer`, which returns singular values in descending order. Everything else (the
//! pseudoinverse, spectral summaries, minimum-norm least squares) is built on
//! top of [`svd`].

use std::fmt;

use crate::error::{Error, Result};

/// Default zero-singular-value cutoff, relative to the largest singular value.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Dense row-major matrix of 64-bit reals.
///
/// Public constructors reject non-finite entries. Arithmetic helpers do not
/// re-validate their output, so iterative code that can overflow should call
/// [`Matrix::is_finite`] on the results it keeps.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    /// Builds a matrix from row-major entries, checking length and finiteness.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "entry ({}, {}) is {}",
                pos / cols.max(1),
                pos % cols.max(1),
                data[pos]
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(
            r,
            c,
            rows.iter().flat_map(|row| row.iter().copied()).collect(),
        )
    }

    /// Internal constructor for results of arithmetic on valid matrices.
    pub(crate) fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_vec_unchecked(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    /// Rectangular matrix with ones on the main diagonal.
    pub fn eye(rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::from_vec_unchecked(rows, cols, data)
    }

    /// Square diagonal matrix.
    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        Self::from_fn(n, n, |i, j| if i == j { values[i] } else { 0.0 })
    }

    /// Column vector.
    pub fn column(values: &[f64]) -> Self {
        Self::from_vec_unchecked(values.len(), 1, values.to_vec())
    }

    /// 1×1 matrix.
    pub fn scalar(x: f64) -> Self {
        Self::from_vec_unchecked(1, 1, vec![x])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row-major entries; this is also the flat-vector layout used by solvers.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// First entry; convenient for 1×1 matrices.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Same entries, new shape.
    pub fn reshape(&self, rows: usize, cols: usize) -> Result<Self> {
        if rows * cols != self.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {}x{} into {rows}x{cols}",
                self.rows, self.cols
            )));
        }
        Ok(Self::from_vec_unchecked(rows, cols, self.data.clone()))
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Matrix product `self · rhs`. Panics on inner-dimension mismatch.
    pub fn matmul(&self, rhs: &Matrix) -> Matrix {
        gemm(self, false, rhs, false)
    }

    /// `selfᵀ · rhs` without materializing the transpose.
    pub fn t_matmul(&self, rhs: &Matrix) -> Matrix {
        gemm(self, true, rhs, false)
    }

    /// `self · rhsᵀ` without materializing the transpose.
    pub fn matmul_t(&self, rhs: &Matrix) -> Matrix {
        gemm(self, false, rhs, true)
    }

    fn zip_with(&self, rhs: &Matrix, op: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!(
            self.shape(),
            rhs.shape(),
            "elementwise operation on mismatched shapes"
        );
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| op(a, b))
            .collect();
        Self::from_vec_unchecked(self.rows, self.cols, data)
    }

    pub fn add(&self, rhs: &Matrix) -> Matrix {
        self.zip_with(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Matrix) -> Matrix {
        self.zip_with(rhs, |a, b| a - b)
    }

    pub fn hadamard(&self, rhs: &Matrix) -> Matrix {
        self.zip_with(rhs, |a, b| a * b)
    }

    /// `self + s · rhs`.
    pub fn add_scaled(&self, s: f64, rhs: &Matrix) -> Matrix {
        self.zip_with(rhs, |a, b| a + s * b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|x| s * x)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Self::from_vec_unchecked(
            self.rows,
            self.cols,
            self.data.iter().map(|&x| f(x)).collect(),
        )
    }

    /// Multiplies row `i` by `weights[i]`.
    pub fn scale_rows(&self, weights: &[f64]) -> Matrix {
        assert_eq!(weights.len(), self.rows);
        Self::from_fn(self.rows, self.cols, |i, j| weights[i] * self.get(i, j))
    }

    /// Stacks `self` on top of `below`.
    pub fn vstack(&self, below: &Matrix) -> Matrix {
        assert_eq!(self.cols, below.cols, "vstack needs equal column counts");
        let mut data = self.data.clone();
        data.extend_from_slice(&below.data);
        Self::from_vec_unchecked(self.rows + below.rows, self.cols, data)
    }

    /// Frobenius inner product.
    pub fn dot(&self, rhs: &Matrix) -> f64 {
        assert_eq!(self.len(), rhs.len());
        self.data.iter().zip(&rhs.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Squared Euclidean norm of each row.
    pub fn row_norms_sq(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|x| x * x).sum())
            .collect()
    }

    fn to_faer(&self) -> faer::Mat<f64> {
        faer::Mat::from_fn(self.rows, self.cols, |i, j| self.get(i, j))
    }

    fn from_faer(m: faer::MatRef<'_, f64>) -> Matrix {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

fn gemm(a: &Matrix, ta: bool, b: &Matrix, tb: bool) -> Matrix {
    let (m, k) = if ta {
        (a.cols, a.rows)
    } else {
        (a.rows, a.cols)
    };
    let (k2, n) = if tb {
        (b.cols, b.rows)
    } else {
        (b.rows, b.cols)
    };
    assert_eq!(k, k2, "matmul inner dimension mismatch: {k} vs {k2}");
    let mut out = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return Matrix::from_vec_unchecked(m, n, out);
    }
    // Row-major strides; a transposed operand just swaps its strides.
    let (rsa, csa) = if ta {
        (1, a.cols as isize)
    } else {
        (a.cols as isize, 1)
    };
    let (rsb, csb) = if tb {
        (1, b.cols as isize)
    } else {
        (b.cols as isize, 1)
    };
    // SAFETY: the pointers cover the full buffers and the strides describe
    // in-bounds access for the given (m, k, n) dimensions.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Matrix::from_vec_unchecked(m, n, out)
}

/// Thin singular value decomposition `M = U · diag(sigmas) · Vᵀ`.
#[derive(Clone, Debug)]
pub struct Svd {
    /// `rows × k` with orthonormal columns, `k = min(rows, cols)`.
    pub u: Matrix,
    /// Nonincreasing, nonnegative.
    pub sigmas: Vec<f64>,
    /// `cols × k` with orthonormal columns.
    pub v: Matrix,
}

/// Computes the thin SVD with singular values sorted in descending order.
pub fn svd(m: &Matrix) -> Result<Svd> {
    if !m.is_finite() {
        return Err(Error::NonFinite("svd input".into()));
    }
    let (r, c) = m.shape();
    let k = r.min(c);
    if k == 0 {
        return Ok(Svd {
            u: Matrix::zeros(r, 0),
            sigmas: Vec::new(),
            v: Matrix::zeros(c, 0),
        });
    }
    let dec = m
        .to_faer()
        .thin_svd()
        .map_err(|_| Error::SvdNoConvergence { rows: r, cols: c })?;
    let s = dec.S().column_vector();
    Ok(Svd {
        u: Matrix::from_faer(dec.U()),
        sigmas: (0..k).map(|i| s[i].max(0.0)).collect(),
        v: Matrix::from_faer(dec.V()),
    })
}

/// Moore–Penrose pseudoinverse; singular values at or below `tol · σ_max`
/// are treated as zero.
pub fn pseudoinverse(m: &Matrix, tol: f64) -> Result<Matrix> {
    if !(tol > 0.0) {
        return Err(Error::Parameter(format!(
            "pseudoinverse tolerance must be positive, got {tol}"
        )));
    }
    let dec = svd(m)?;
    let smax = dec.sigmas.first().copied().unwrap_or(0.0);
    let cutoff = tol * smax;
    let (r, c) = m.shape();
    let mut out = Matrix::zeros(c, r);
    if smax == 0.0 {
        return Ok(out);
    }
    // M† = Σ_j v_j u_jᵀ / σ_j over retained j.
    let kept: Vec<usize> = (0..dec.sigmas.len())
        .filter(|&j| dec.sigmas[j] > cutoff)
        .collect();
    let vs = Matrix::from_fn(c, kept.len(), |i, j| {
        dec.v.get(i, kept[j]) / dec.sigmas[kept[j]]
    });
    let uk = Matrix::from_fn(r, kept.len(), |i, j| dec.u.get(i, kept[j]));
    out = vs.matmul_t(&uk);
    Ok(out)
}

/// Extreme and smallest-nonzero singular values of a matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralSummary {
    pub sigma_max: f64,
    /// Smallest singular value over the full `min(rows, cols)` spectrum.
    pub sigma_min: f64,
    /// Smallest singular value above the cutoff; `None` for rank zero.
    pub sigma_star: Option<f64>,
    pub rank: usize,
    /// Relative cutoff used to decide which singular values count as zero.
    pub tolerance: f64,
}

impl SpectralSummary {
    /// `sigma_star`, or an error naming `what` when the matrix has rank zero.
    pub fn sigma_star_or_err(&self, what: &str) -> Result<f64> {
        self.sigma_star
            .ok_or_else(|| Error::RankDeficient(format!("{what} has rank zero")))
    }
}

pub fn spectral_summary(m: &Matrix, tol: f64) -> Result<SpectralSummary> {
    let sigmas = singular_values(m)?;
    Ok(summarize(&sigmas, tol))
}

/// Builds a summary from an already computed descending spectrum.
pub fn summarize(sigmas: &[f64], tol: f64) -> SpectralSummary {
    let sigma_max = sigmas.first().copied().unwrap_or(0.0);
    let sigma_min = sigmas.last().copied().unwrap_or(0.0);
    let cutoff = tol * sigma_max;
    let kept: Vec<f64> = if sigma_max > 0.0 {
        sigmas.iter().copied().filter(|&s| s > cutoff).collect()
    } else {
        Vec::new()
    };
    SpectralSummary {
        sigma_max,
        sigma_min,
        sigma_star: kept.last().copied(),
        rank: kept.len(),
        tolerance: tol,
    }
}

/// Singular values only, descending.
pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    if !m.is_finite() {
        return Err(Error::NonFinite("singular value input".into()));
    }
    let (r, c) = m.shape();
    if r.min(c) == 0 {
        return Ok(Vec::new());
    }
    let s = m
        .to_faer()
        .singular_values()
        .map_err(|_| Error::SvdNoConvergence { rows: r, cols: c })?;
    Ok(s.into_iter().map(|x| x.max(0.0)).collect())
}

/// Spectral norm.
pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    Ok(singular_values(m)?.first().copied().unwrap_or(0.0))
}

/// Minimum-Frobenius-norm minimizer `X†Y` of `½‖Y − XW‖²`.
///
/// One refinement step `W += X†(Y − XW)` is applied, which keeps `W` in the
/// row space of `X` and removes most of the rounding error that an
/// ill-conditioned `X` leaves in the residual.
pub fn min_norm_least_squares(x: &Matrix, y: &Matrix) -> Result<Matrix> {
    if x.rows() != y.rows() {
        return Err(Error::Shape(format!(
            "least squares: X has {} rows but Y has {}",
            x.rows(),
            y.rows()
        )));
    }
    let xp = pseudoinverse(x, DEFAULT_RANK_TOL)?;
    let w = xp.matmul(y);
    let r = y.sub(&x.matmul(&w));
    Ok(w.add(&xp.matmul(&r)))
}

/// Orthonormal basis (`rows × rank`) of the column space of `M`, from the
/// left singular vectors with `σ > tol · σ_max`.
pub fn range_basis(m: &Matrix, tol: f64) -> Result<Matrix> {
    if !m.is_finite() {
        return Err(Error::NonFinite("range basis input".into()));
    }
    let (r, c) = m.shape();
    if r.min(c) == 0 {
        return Ok(Matrix::zeros(r, 0));
    }
    let dec = svd(m)?;
    let smax = dec.sigmas[0];
    let rank = dec
        .sigmas
        .iter()
        .filter(|&&s| smax > 0.0 && s > tol * smax)
        .count();
    Ok(Matrix::from_fn(r, rank, |i, j| dec.u.get(i, j)))
}

/// Orthogonal projector `M M†` onto the column space of `M`.
pub fn range_projector(m: &Matrix, tol: f64) -> Result<Matrix> {
    let uk = range_basis(m, tol)?;
    Ok(uk.matmul_t(&uk))
}

/// Eigenvalues of a symmetric matrix, descending.
pub fn symmetric_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    if m.rows() != m.cols() {
        return Err(Error::Shape("eigenvalues need a square matrix".into()));
    }
    let sym = m.add(&m.transpose()).scale(0.5);
    let mut e = sym
        .to_faer()
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .map_err(|_| Error::NonFinite("symmetric eigenvalue iteration".into()))?;
    e.reverse();
    Ok(e)
}

/// Solves the square system `A X = B` by fully pivoted LU factorization.
/// An exactly singular `A` leaves a zero pivot, which shows up as a
/// non-finite solution.
pub fn solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    use faer::linalg::solvers::Solve;
    if a.rows() != a.cols() || a.rows() != b.rows() {
        return Err(Error::Shape("solve needs square A with matching B".into()));
    }
    let x = Matrix::from_faer(a.to_faer().full_piv_lu().solve(b.to_faer()).as_ref());
    if !x.is_finite() {
        return Err(Error::RankDeficient("singular system in solve".into()));
    }
    Ok(x)
}
