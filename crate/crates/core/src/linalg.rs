//! Dense complex matrices, matrix-free operators and the norm/eigen kernels
//! used to measure every construction.

use std::ops::{Index, IndexMut};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{domain, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Numerical defaults shared by every module.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    /// Relative hermiticity tolerance, scaled by `1 + max|entry|`.
    pub hermitian: f64,
    /// Relative residual `||MᴴM x − μx|| / μ` accepted by power iteration.
    pub power_residual: f64,
    pub power_max_iter: usize,
    /// Iterations without relative growth of the Rayleigh quotient before stopping.
    pub power_stagnation: usize,
    /// Largest dimension for which an unconverged power iteration is redone densely.
    pub dense_fallback_dim: usize,
    /// Largest dimension accepted by the dense eigensolver.
    pub eig_max_dim: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            hermitian: 1e-12,
            power_residual: 1e-12,
            power_max_iter: 10_000,
            power_stagnation: 200,
            dense_fallback_dim: 512,
            eig_max_dim: 4096,
        }
    }
}

pub const TOL: Tolerances = Tolerances {
    hermitian: 1e-12,
    power_residual: 1e-12,
    power_max_iter: 10_000,
    power_stagnation: 200,
    dense_fallback_dim: 512,
    eig_max_dim: 4096,
};

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ComplexMatrix { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return domain(format!("{} entries for a {}x{} matrix", data.len(), rows, cols));
        }
        Ok(ComplexMatrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        ComplexMatrix { rows, cols, data }
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        Self::from_fn(r, c, |i, j| C64::new(rows[i][j], 0.0))
    }

    pub fn diag_real(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &x) in d.iter().enumerate() {
            m[(i, i)] = C64::new(x, 0.0);
        }
        m
    }

    pub fn diag(d: &[C64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &x) in d.iter().enumerate() {
            m[(i, i)] = x;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn entries(&self) -> &[C64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn conj(&self) -> Self {
        self.map(|z| z.conj())
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Self {
        ComplexMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&z| f(z)).collect() }
    }

    pub fn scale(&self, s: C64) -> Self {
        self.map(|z| z * s)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a - b)
    }

    fn zip(&self, other: &Self, f: impl Fn(C64, C64) -> C64) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return domain(format!(
                "shape mismatch {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(ComplexMatrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return domain(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == ZERO {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![ZERO; self.rows];
        LinearOp::apply(self, x, &mut y);
        y
    }

    pub fn kron(&self, other: &Self) -> Self {
        let (r, c) = (self.rows * other.rows, self.cols * other.cols);
        Self::from_fn(r, c, |i, j| {
            self[(i / other.rows, j / other.cols)] * other[(i % other.rows, j % other.cols)]
        })
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_imag_abs(&self) -> f64 {
        self.data.iter().map(|z| z.im.abs()).fold(0.0, f64::max)
    }

    pub fn max_real_abs(&self) -> f64 {
        self.data.iter().map(|z| z.re.abs()).fold(0.0, f64::max)
    }

    pub fn hilbert_schmidt(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn hermitian_defect(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in i..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_defect() <= tol * (1.0 + self.max_abs())
    }

    /// Real and imaginary hermitian parts: `(M + Mᴴ)/2` and `(M − Mᴴ)/(2i)`.
    pub fn re_im_parts(&self) -> (Self, Self) {
        let adj = self.adjoint();
        let re = self.zip(&adj, |a, b| (a + b) * 0.5).expect("square");
        let im = self.zip(&adj, |a, b| (a - b) / C64::new(0.0, 2.0)).expect("square");
        (re, im)
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

/// A linear map given by its action; lets the constructions be measured
/// without materializing their (often large, structured) frames.
pub trait LinearOp: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn apply(&self, x: &[C64], y: &mut [C64]);
    fn apply_adjoint(&self, x: &[C64], y: &mut [C64]);

    fn to_dense(&self) -> ComplexMatrix {
        let (r, c) = (self.nrows(), self.ncols());
        let mut m = ComplexMatrix::zeros(r, c);
        let mut e = vec![ZERO; c];
        let mut y = vec![ZERO; r];
        for j in 0..c {
            e[j] = ONE;
            self.apply(&e, &mut y);
            for i in 0..r {
                m[(i, j)] = y[i];
            }
            e[j] = ZERO;
        }
        m
    }
}

impl LinearOp for ComplexMatrix {
    fn nrows(&self) -> usize {
        self.rows
    }
    fn ncols(&self) -> usize {
        self.cols
    }
    fn apply(&self, x: &[C64], y: &mut [C64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.rows) {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            *yi = row.iter().zip(x).map(|(&a, &b)| a * b).sum();
        }
    }
    fn apply_adjoint(&self, x: &[C64], y: &mut [C64]) {
        y[..self.cols].iter_mut().for_each(|v| *v = ZERO);
        for i in 0..self.rows {
            let xi = x[i];
            if xi == ZERO {
                continue;
            }
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (yj, &a) in y.iter_mut().zip(row) {
                *yj += a.conj() * xi;
            }
        }
    }
}

impl<T: LinearOp + ?Sized + Send> LinearOp for Box<T> {
    fn nrows(&self) -> usize {
        (**self).nrows()
    }
    fn ncols(&self) -> usize {
        (**self).ncols()
    }
    fn apply(&self, x: &[C64], y: &mut [C64]) {
        (**self).apply(x, y)
    }
    fn apply_adjoint(&self, x: &[C64], y: &mut [C64]) {
        (**self).apply_adjoint(x, y)
    }
}

/// Nonzero entries of a matrix as (row, col, value) triples.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseOp {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, C64)>,
}

impl SparseOp {
    pub fn from_dense(m: &ComplexMatrix) -> Self {
        let entries = (0..m.rows)
            .flat_map(|i| (0..m.cols).map(move |j| (i, j)))
            .filter_map(|(i, j)| {
                let v = m[(i, j)];
                (v != ZERO).then_some((i, j, v))
            })
            .collect();
        SparseOp { rows: m.rows, cols: m.cols, entries }
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }
}

impl LinearOp for SparseOp {
    fn nrows(&self) -> usize {
        self.rows
    }
    fn ncols(&self) -> usize {
        self.cols
    }
    fn apply(&self, x: &[C64], y: &mut [C64]) {
        y[..self.rows].iter_mut().for_each(|v| *v = ZERO);
        for &(i, j, v) in &self.entries {
            y[i] += v * x[j];
        }
    }
    fn apply_adjoint(&self, x: &[C64], y: &mut [C64]) {
        y[..self.cols].iter_mut().for_each(|v| *v = ZERO);
        for &(i, j, v) in &self.entries {
            y[j] += v.conj() * x[i];
        }
    }
}

/// `a − b`.
pub struct Difference<'a> {
    pub a: &'a dyn LinearOp,
    pub b: &'a dyn LinearOp,
}

impl LinearOp for Difference<'_> {
    fn nrows(&self) -> usize {
        self.a.nrows()
    }
    fn ncols(&self) -> usize {
        self.a.ncols()
    }
    fn apply(&self, x: &[C64], y: &mut [C64]) {
        let mut t = vec![ZERO; y.len()];
        self.a.apply(x, y);
        self.b.apply(x, &mut t);
        y.iter_mut().zip(&t).for_each(|(u, v)| *u -= v);
    }
    fn apply_adjoint(&self, x: &[C64], y: &mut [C64]) {
        let mut t = vec![ZERO; y.len()];
        self.a.apply_adjoint(x, y);
        self.b.apply_adjoint(x, &mut t);
        y.iter_mut().zip(&t).for_each(|(u, v)| *u -= v);
    }
}

/// `ab − ba` for square operators of equal size.
pub struct Commutator<'a> {
    pub a: &'a dyn LinearOp,
    pub b: &'a dyn LinearOp,
}

impl LinearOp for Commutator<'_> {
    fn nrows(&self) -> usize {
        self.a.nrows()
    }
    fn ncols(&self) -> usize {
        self.a.ncols()
    }
    fn apply(&self, x: &[C64], y: &mut [C64]) {
        let n = x.len();
        let (mut t, mut u) = (vec![ZERO; n], vec![ZERO; n]);
        self.b.apply(x, &mut t);
        self.a.apply(&t, y);
        self.a.apply(x, &mut t);
        self.b.apply(&t, &mut u);
        y.iter_mut().zip(&u).for_each(|(p, q)| *p -= q);
    }
    fn apply_adjoint(&self, x: &[C64], y: &mut [C64]) {
        // (ab − ba)ᴴ = bᴴaᴴ − aᴴbᴴ
        let n = x.len();
        let (mut t, mut u) = (vec![ZERO; n], vec![ZERO; n]);
        self.a.apply_adjoint(x, &mut t);
        self.b.apply_adjoint(&t, y);
        self.b.apply_adjoint(x, &mut t);
        self.a.apply_adjoint(&t, &mut u);
        y.iter_mut().zip(&u).for_each(|(p, q)| *p -= q);
    }
}

/// `aᴴa − aaᴴ`; hermitian, so the adjoint action equals the action.
pub struct SelfCommutator<'a>(pub &'a dyn LinearOp);

impl LinearOp for SelfCommutator<'_> {
    fn nrows(&self) -> usize {
        self.0.nrows()
    }
    fn ncols(&self) -> usize {
        self.0.ncols()
    }
    fn apply(&self, x: &[C64], y: &mut [C64]) {
        let n = x.len();
        let (mut t, mut u) = (vec![ZERO; n], vec![ZERO; n]);
        self.0.apply(x, &mut t);
        self.0.apply_adjoint(&t, y);
        self.0.apply_adjoint(x, &mut t);
        self.0.apply(&t, &mut u);
        y.iter_mut().zip(&u).for_each(|(p, q)| *p -= q);
    }
    fn apply_adjoint(&self, x: &[C64], y: &mut [C64]) {
        self.apply(x, y)
    }
}

/// Hermitian part `(a + aᴴ)/2` (`imaginary = false`) or `(a − aᴴ)/(2i)` (`imaginary = true`).
pub struct HermitianPart<'a> {
    pub op: &'a dyn LinearOp,
    pub imaginary: bool,
}

impl LinearOp for HermitianPart<'_> {
    fn nrows(&self) -> usize {
        self.op.nrows()
    }
    fn ncols(&self) -> usize {
        self.op.ncols()
    }
    fn apply(&self, x: &[C64], y: &mut [C64]) {
        let mut t = vec![ZERO; x.len()];
        self.op.apply(x, y);
        self.op.apply_adjoint(x, &mut t);
        if self.imaginary {
            let k = C64::new(0.0, -0.5);
            y.iter_mut().zip(&t).for_each(|(p, q)| *p = (*p - q) * k);
        } else {
            y.iter_mut().zip(&t).for_each(|(p, q)| *p = (*p + q) * 0.5);
        }
    }
    fn apply_adjoint(&self, x: &[C64], y: &mut [C64]) {
        self.apply(x, y)
    }
}

/// The zero map on `C^n`.
pub struct ZeroOp(pub usize);

impl LinearOp for ZeroOp {
    fn nrows(&self) -> usize {
        self.0
    }
    fn ncols(&self) -> usize {
        self.0
    }
    fn apply(&self, _x: &[C64], y: &mut [C64]) {
        y.iter_mut().for_each(|v| *v = ZERO);
    }
    fn apply_adjoint(&self, _x: &[C64], y: &mut [C64]) {
        y.iter_mut().for_each(|v| *v = ZERO);
    }
}

fn vec_norm(x: &[C64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Outcome of a power iteration; `converged` is false when the residual
/// target was not reached (stagnation or iteration cap).
#[derive(Clone, Copy, Debug)]
pub struct PowerEstimate {
    pub norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn power_iteration(op: &dyn LinearOp, tol: &Tolerances) -> PowerEstimate {
    let (r, c) = (op.nrows(), op.ncols());
    let mut rng = ChaCha8Rng::seed_from_u64(0x6e6f726d);
    let mut x: Vec<C64> = (0..c).map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
    let nx = vec_norm(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut y = vec![ZERO; r];
    let mut z = vec![ZERO; c];
    let mut best = 0.0_f64;
    let mut since_growth = 0usize;
    for it in 1..=tol.power_max_iter {
        op.apply(&x, &mut y);
        op.apply_adjoint(&y, &mut z);
        let mu = y.iter().map(|v| v.norm_sqr()).sum::<f64>();
        if mu == 0.0 {
            // x is in the kernel; retry from a fresh direction a few times
            if it > 8 {
                return PowerEstimate { norm: 0.0, iterations: it, converged: true };
            }
            x.iter_mut().for_each(|v| *v = C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
            let nx = vec_norm(&x);
            x.iter_mut().for_each(|v| *v /= nx);
            continue;
        }
        let res = x.iter().zip(&z).map(|(a, b)| (b - a * mu).norm_sqr()).sum::<f64>().sqrt();
        if res <= tol.power_residual * mu {
            return PowerEstimate { norm: mu.sqrt(), iterations: it, converged: true };
        }
        if mu > best * (1.0 + 1e-15) {
            best = mu;
            since_growth = 0;
        } else {
            since_growth += 1;
            if since_growth >= tol.power_stagnation {
                return PowerEstimate { norm: best.sqrt(), iterations: it, converged: false };
            }
        }
        let nz = vec_norm(&z);
        if nz == 0.0 {
            return PowerEstimate { norm: mu.sqrt(), iterations: it, converged: true };
        }
        x.iter_mut().zip(&z).for_each(|(a, b)| *a = b / nz);
    }
    PowerEstimate { norm: best.sqrt(), iterations: tol.power_max_iter, converged: false }
}

const SMALL_POWER_ITER: usize = 400;

/// Largest singular value of `op` (matrix-free).
pub fn op_norm_op(op: &dyn LinearOp) -> Result<f64> {
    if op.nrows() == 0 || op.ncols() == 0 {
        return domain("operator norm of an empty operator");
    }
    let small = op.nrows().max(op.ncols()) <= TOL.dense_fallback_dim;
    // small operators with a clustered top go dense early
    let tol = if small { Tolerances { power_max_iter: SMALL_POWER_ITER, ..TOL } } else { TOL };
    let est = power_iteration(op, &tol);
    if est.converged || !small {
        return Ok(est.norm);
    }
    let m = op.to_dense();
    let gram = m.adjoint().matmul(&m)?;
    let eig = hermitian_eig(&gram)?;
    let top = eig.eigenvalues.last().copied().unwrap_or(0.0).max(0.0);
    Ok(top.sqrt().max(est.norm))
}

pub fn op_norm(m: &ComplexMatrix) -> Result<f64> {
    if m.is_empty() {
        return domain("operator norm of an empty matrix");
    }
    op_norm_op(m)
}

pub fn commutator_norm(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<f64> {
    if !a.is_square() || !b.is_square() || a.rows() != b.rows() {
        return domain(format!(
            "commutator of {}x{} and {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        ));
    }
    let c = a.matmul(b)?.sub(&b.matmul(a)?)?;
    op_norm(&c)
}

pub fn normality_defect(m: &ComplexMatrix) -> Result<f64> {
    if !m.is_square() {
        return domain("normality defect of a non-square matrix");
    }
    let c = m.adjoint().matmul(m)?.sub(&m.matmul(&m.adjoint())?)?;
    op_norm(&c)
}

#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Column `k` is the eigenvector for `eigenvalues[k]`.
    pub frame: ComplexMatrix,
}

impl SpectralDecomposition {
    pub fn reconstruct(&self) -> ComplexMatrix {
        let n = self.eigenvalues.len();
        let scaled = ComplexMatrix::from_fn(n, n, |i, j| self.frame[(i, j)] * self.eigenvalues[j]);
        scaled.matmul(&self.frame.adjoint()).expect("square")
    }
}

/// Dense hermitian eigendecomposition (Householder tridiagonalization and implicit QR).
pub fn hermitian_eig(m: &ComplexMatrix) -> Result<SpectralDecomposition> {
    if !m.is_square() || m.is_empty() {
        return domain("eigendecomposition needs a nonempty square matrix");
    }
    let n = m.rows();
    if n > TOL.eig_max_dim {
        return domain(format!("dimension {} exceeds the eigensolver cap {}", n, TOL.eig_max_dim));
    }
    if !m.is_hermitian(TOL.hermitian) {
        return domain(format!("matrix is not hermitian (defect {:.3e})", m.hermitian_defect()));
    }
    // symmetrized, column-major
    let mut a: Vec<C64> = (0..n * n).map(|idx| (m[(idx % n, idx / n)] + m[(idx / n, idx % n)].conj()) * 0.5).collect();
    let (eigenvalues, z) = lapack::zheevr(n, &mut a)?;
    let frame = ComplexMatrix::from_fn(n, n, |i, k| z[k * n + i]);
    Ok(SpectralDecomposition { eigenvalues, frame })
}

/// Hermitian tridiagonal matrix with real `diag` and `off[k]` at (k+1, k).
/// Solved as D R D* with R real symmetric and D a diagonal of phases.
pub fn hermitian_tridiagonal_eig(diag: &[f64], off: &[C64]) -> Result<SpectralDecomposition> {
    let n = diag.len();
    if n == 0 || off.len() + 1 != n {
        return domain(format!("tridiagonal matrix with {} diagonal and {} off-diagonal entries", n, off.len()));
    }
    if diag.iter().chain(off.iter().flat_map(|c| [&c.re, &c.im])).any(|x| !x.is_finite()) {
        return domain("tridiagonal matrix has a non-finite entry");
    }
    let mut phase = vec![ONE; n];
    for k in 0..n - 1 {
        let r = off[k].norm();
        phase[k + 1] = if r > 0.0 { phase[k] * (off[k] / r) } else { phase[k] };
    }
    let mut d = diag.to_vec();
    let mut e: Vec<f64> = off.iter().map(|c| c.norm()).collect();
    let (eigenvalues, z) = lapack::dstevr(n, &mut d, &mut e)?;
    let frame = ComplexMatrix::from_fn(n, n, |i, k| phase[i] * z[k * n + i]);
    Ok(SpectralDecomposition { eigenvalues, frame })
}

mod lapack {
    use super::C64;
    use crate::error::{NearbyError, Result};
    use lapack_sys::__BindgenComplex;

    fn int(n: usize) -> Result<i32> {
        i32::try_from(n).map_err(|_| NearbyError::Domain(format!("dimension {} is too large for LAPACK", n)))
    }

    fn check(info: i32, routine: &str) -> Result<()> {
        if info != 0 {
            return Err(NearbyError::Internal(format!("{} returned info = {}", routine, info)));
        }
        Ok(())
    }

    /// All eigenpairs of a column-major hermitian matrix (overwritten); ascending.
    pub fn zheevr(n: usize, a: &mut [C64]) -> Result<(Vec<f64>, Vec<C64>)> {
        let ni = int(n)?;
        let (mut m, mut info) = (0i32, 0i32);
        let mut w = vec![0.0; n];
        let mut z = vec![C64::new(0.0, 0.0); n * n];
        let mut isuppz = vec![0i32; 2 * n];
        let (lwork, lrwork, liwork) = (int(2 * n.max(1) + 64 * n)?, int(24 * n.max(1))?, int(10 * n.max(1))?);
        let mut work = vec![C64::new(0.0, 0.0); lwork as usize];
        let mut rwork = vec![0.0; lrwork as usize];
        let mut iwork = vec![0i32; liwork as usize];
        let (vl, vu, il, iu, abstol) = (0.0, 0.0, 0, 0, 0.0);
        // SAFETY: every buffer is sized per the routine's documented minimum and
        // C64 has the same #[repr(C)] layout as the binding's complex type.
        unsafe {
            lapack_sys::zheevr_(
                &(b'V' as _),
                &(b'A' as _),
                &(b'L' as _),
                &ni,
                a.as_mut_ptr() as *mut __BindgenComplex<f64>,
                &ni,
                &vl,
                &vu,
                &il,
                &iu,
                &abstol,
                &mut m,
                w.as_mut_ptr(),
                z.as_mut_ptr() as *mut __BindgenComplex<f64>,
                &ni,
                isuppz.as_mut_ptr(),
                work.as_mut_ptr() as *mut __BindgenComplex<f64>,
                &lwork,
                rwork.as_mut_ptr(),
                &lrwork,
                iwork.as_mut_ptr(),
                &liwork,
                &mut info,
            );
        }
        check(info, "zheevr")?;
        if m as usize != n {
            return Err(NearbyError::Internal(format!("zheevr found {} of {} eigenvalues", m, n)));
        }
        Ok((w, z))
    }

    /// All eigenpairs of the real symmetric tridiagonal (d, e); ascending.
    pub fn dstevr(n: usize, d: &mut [f64], e: &mut Vec<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        let ni = int(n)?;
        e.push(0.0);
        let (mut m, mut info) = (0i32, 0i32);
        let mut w = vec![0.0; n];
        let mut z = vec![0.0; n * n];
        let mut isuppz = vec![0i32; 2 * n];
        let (lwork, liwork) = (int(20 * n.max(1))?, int(10 * n.max(1))?);
        let mut work = vec![0.0; lwork as usize];
        let mut iwork = vec![0i32; liwork as usize];
        let (vl, vu, il, iu, abstol) = (0.0, 0.0, 0, 0, 0.0);
        // SAFETY: buffers sized per the documented minimums; `e` has length n.
        unsafe {
            lapack_sys::dstevr_(
                &(b'V' as _),
                &(b'A' as _),
                &ni,
                d.as_mut_ptr(),
                e.as_mut_ptr(),
                &vl,
                &vu,
                &il,
                &iu,
                &abstol,
                &mut m,
                w.as_mut_ptr(),
                z.as_mut_ptr(),
                &ni,
                isuppz.as_mut_ptr(),
                work.as_mut_ptr(),
                &lwork,
                iwork.as_mut_ptr(),
                &liwork,
                &mut info,
            );
        }
        check(info, "dstevr")?;
        if m as usize != n {
            return Err(NearbyError::Internal(format!("dstevr found {} of {} eigenvalues", m, n)));
        }
        Ok((w, z))
    }
}

/// Projection onto the eigenvectors with eigenvalue in `[lo, hi]`.
pub fn spectral_projection(decomp: &SpectralDecomposition, lo: f64, hi: f64) -> ComplexMatrix {
    let n = decomp.frame.rows();
    let picked: Vec<usize> =
        (0..decomp.eigenvalues.len()).filter(|&k| decomp.eigenvalues[k] >= lo && decomp.eigenvalues[k] <= hi).collect();
    let mut p = ComplexMatrix::zeros(n, n);
    for &k in &picked {
        for i in 0..n {
            let vi = decomp.frame[(i, k)];
            if vi == ZERO {
                continue;
            }
            for j in 0..n {
                p[(i, j)] += vi * decomp.frame[(j, k)].conj();
            }
        }
    }
    p
}

/// Closed form for the norm of a 2x2 hermitian matrix `[[a, b], [conj(b), c]]`.
pub fn hermitian_2x2_norm(a: f64, b: C64, c: f64) -> f64 {
    0.5 * (a + c).abs() + (0.25 * (a - c).powi(2) + b.norm_sqr()).sqrt()
}

/// Closed form for the norm of the strictly upper triangular 3x3 matrix with
/// entries `x = m01`, `y = m02`, `z = m12`.
pub fn strictly_upper_3x3_norm(x: C64, y: C64, z: C64) -> f64 {
    // eigenvalues of MᴴM are 0 and the roots of t² − (|x|²+|y|²+|z|²) t + |x z|² = 0
    let s = x.norm_sqr() + y.norm_sqr() + z.norm_sqr();
    let p = (x * z).norm_sqr();
    let disc = (s * s - 4.0 * p).max(0.0);
    ((s + disc.sqrt()) / 2.0).sqrt()
}

pub fn unitary_defect(u: &ComplexMatrix) -> Result<f64> {
    let g = u.adjoint().matmul(u)?;
    Ok(g.sub(&ComplexMatrix::identity(u.cols()))?.max_abs())
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::NearbyError;
    use approx::assert_relative_eq;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> ComplexMatrix {
        ComplexMatrix::from_fn(r, c, |_, _| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
    }

    fn random_hermitian(rng: &mut ChaCha8Rng, n: usize) -> ComplexMatrix {
        let m = random_matrix(rng, n, n);
        m.add(&m.adjoint()).unwrap().scale(C64::new(0.5, 0.0))
    }

    #[test]
    fn tridiagonal_matches_dense() {
        let diag = [0.3, -1.0, 0.5, 2.0, 0.0];
        let off = [C64::new(0.5, 0.5), C64::new(0.0, -1.0), ZERO, C64::new(-0.7, 0.1)];
        let n = diag.len();
        let mut m = ComplexMatrix::diag_real(&diag);
        for (k, &c) in off.iter().enumerate() {
            m[(k + 1, k)] = c;
            m[(k, k + 1)] = c.conj();
        }
        let t = hermitian_tridiagonal_eig(&diag, &off).unwrap();
        let dense = hermitian_eig(&m).unwrap();
        for (x, y) in t.eigenvalues.iter().zip(&dense.eigenvalues) {
            assert!((x - y).abs() < 1e-13);
        }
        assert!(t.reconstruct().sub(&m).unwrap().max_abs() < 1e-13);
        assert!(unitary_defect(&t.frame).unwrap() < 1e-13);
        assert!(hermitian_tridiagonal_eig(&diag, &off[..2]).is_err());
        assert_eq!(n, 5);
    }

    #[test]
    fn sparse_matches_dense() {
        let m = ComplexMatrix::from_fn(4, 3, |i, j| if (i + j) % 2 == 0 { C64::new(i as f64, -(j as f64)) } else { ZERO });
        let s = SparseOp::from_dense(&m);
        assert_eq!(s.nnz(), 5);
        assert_eq!(s.to_dense(), m);
        let x = vec![C64::new(1.0, 2.0), C64::new(-1.0, 0.5), C64::new(0.0, 1.0), C64::new(2.0, 0.0)];
        let (mut y, mut z) = (vec![ZERO; 3], vec![ZERO; 3]);
        s.apply_adjoint(&x, &mut y);
        m.apply_adjoint(&x, &mut z);
        assert_eq!(y, z);
    }

    #[test]
    fn diagonal_norm_is_max_abs_entry() {
        let d = ComplexMatrix::diag_real(&[1.0, -3.0, 2.0]);
        assert_relative_eq!(op_norm(&d).unwrap(), 3.0, max_relative = 1e-12);
    }

    #[test]
    fn hermitian_2x2_closed_form() {
        let (a, b, c) = (0.3, C64::new(0.2, -0.7), -1.1);
        let m = ComplexMatrix::from_fn(2, 2, |i, j| match (i, j) {
            (0, 0) => C64::new(a, 0.0),
            (0, 1) => b,
            (1, 0) => b.conj(),
            _ => C64::new(c, 0.0),
        });
        assert_relative_eq!(op_norm(&m).unwrap(), hermitian_2x2_norm(a, b, c), max_relative = 1e-10);
    }

    #[test]
    fn norm_matches_eigen_oracle_on_random_8x8() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let m = random_matrix(&mut rng, 8, 8);
            let gram = m.adjoint().matmul(&m).unwrap();
            let oracle = hermitian_eig(&gram).unwrap().eigenvalues[7].sqrt();
            assert_relative_eq!(op_norm(&m).unwrap(), oracle, max_relative = 1e-10);
        }
    }

    #[test]
    fn empty_matrix_is_a_domain_error() {
        assert!(matches!(op_norm(&ComplexMatrix::zeros(0, 0)), Err(NearbyError::Domain(_))));
    }

    #[test]
    fn pauli_commutator() {
        let half = 0.5;
        let s1 = ComplexMatrix::from_fn(2, 2, |i, j| if i != j { C64::new(half, 0.0) } else { ZERO });
        let s2 = ComplexMatrix::from_fn(2, 2, |i, j| match (i, j) {
            (0, 1) => C64::new(0.0, half),
            (1, 0) => C64::new(0.0, -half),
            _ => ZERO,
        });
        assert_relative_eq!(commutator_norm(&s1, &s2).unwrap(), 0.5, max_relative = 1e-12);
        assert!(commutator_norm(&s1, &s1).unwrap() < 1e-15);
        assert!(commutator_norm(&s1, &ComplexMatrix::identity(3)).is_err());
    }

    #[test]
    fn eig_of_diagonal_and_sigma3() {
        let d = hermitian_eig(&ComplexMatrix::diag_real(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!(d.eigenvalues, vec![1.0, 2.0, 3.0]);
        let s3 = hermitian_eig(&ComplexMatrix::diag_real(&[-0.5, 0.5])).unwrap();
        assert_eq!(s3.eigenvalues, vec![-0.5, 0.5]);
        let bad = ComplexMatrix::from_real_rows(&[&[0.0, 1.0], &[0.0, 0.0]]);
        assert!(hermitian_eig(&bad).is_err());
    }

    #[test]
    fn eig_reconstructs_random_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = random_hermitian(&mut rng, 16);
        let d = hermitian_eig(&h).unwrap();
        assert!(unitary_defect(&d.frame).unwrap() <= 1e-10);
        let err = d.reconstruct().sub(&h).unwrap().max_abs();
        assert!(err <= 1e-10 * (1.0 + h.max_abs()), "reconstruction {err}");
        assert!(d.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn projections() {
        let d = hermitian_eig(&ComplexMatrix::diag_real(&[0.0, 0.1, 0.2])).unwrap();
        let p = spectral_projection(&d, 0.0, 0.1);
        let expect = ComplexMatrix::diag_real(&[1.0, 1.0, 0.0]);
        assert!(p.sub(&expect).unwrap().max_abs() < 1e-12);
        assert!(spectral_projection(&d, 5.0, 6.0).max_abs() == 0.0);
        let all = spectral_projection(&d, -1.0, 1.0);
        assert!(all.sub(&ComplexMatrix::identity(3)).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn normality_of_unitary_and_shift() {
        let (c, s) = (0.6_f64, 0.8_f64);
        let u = ComplexMatrix::from_real_rows(&[&[c, -s], &[s, c]]);
        assert!(normality_defect(&u).unwrap() < 1e-12);
        // ws(c1, c2, c3) on C^4
        let w = [0.5, 1.5, 1.0];
        let m = ComplexMatrix::from_fn(4, 4, |i, j| if i == j + 1 { C64::new(w[j], 0.0) } else { ZERO });
        let expect = [w[0] * w[0], w[2] * w[2], (w[1] * w[1] - w[0] * w[0]).abs(), (w[2] * w[2] - w[1] * w[1]).abs()]
            .into_iter()
            .fold(0.0, f64::max);
        assert_relative_eq!(normality_defect(&m).unwrap(), expect, max_relative = 1e-10);
    }

    #[test]
    fn strictly_upper_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let (x, y, z) = (
                C64::new(rng.gen(), rng.gen()),
                C64::new(rng.gen(), rng.gen()),
                C64::new(rng.gen(), rng.gen()),
            );
            let m = ComplexMatrix::from_fn(3, 3, |i, j| match (i, j) {
                (0, 1) => x,
                (0, 2) => y,
                (1, 2) => z,
                _ => ZERO,
            });
            assert_relative_eq!(op_norm(&m).unwrap(), strictly_upper_3x3_norm(x, y, z), max_relative = 1e-10);
        }
    }

    #[test]
    fn matrix_free_combinators_agree_with_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_matrix(&mut rng, 6, 6);
        let b = random_matrix(&mut rng, 6, 6);
        let dense = a.matmul(&b).unwrap().sub(&b.matmul(&a).unwrap()).unwrap();
        let op = Commutator { a: &a, b: &b };
        assert!(op.to_dense().sub(&dense).unwrap().max_abs() < 1e-13);
        let sc = SelfCommutator(&a);
        let dense_sc = a.adjoint().matmul(&a).unwrap().sub(&a.matmul(&a.adjoint()).unwrap()).unwrap();
        assert!(sc.to_dense().sub(&dense_sc).unwrap().max_abs() < 1e-13);
        let (re, im) = a.re_im_parts();
        assert!(HermitianPart { op: &a, imaginary: false }.to_dense().sub(&re).unwrap().max_abs() < 1e-14);
        assert!(HermitianPart { op: &a, imaginary: true }.to_dense().sub(&im).unwrap().max_abs() < 1e-14);
        let back = re.add(&im.scale(C64::new(0.0, 1.0))).unwrap();
        assert!(back.sub(&a).unwrap().max_abs() < 1e-14);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn unitary_from_eig(rng: &mut ChaCha8Rng, n: usize) -> ComplexMatrix {
            hermitian_eig(&random_hermitian(rng, n)).unwrap().frame
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn unitary_invariance(seed in any::<u64>(), n in 2usize..7) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = random_matrix(&mut rng, n, n);
                let u = unitary_from_eig(&mut rng, n);
                let v = unitary_from_eig(&mut rng, n);
                let umv = u.matmul(&m).unwrap().matmul(&v).unwrap();
                let (a, b) = (op_norm(&m).unwrap(), op_norm(&umv).unwrap());
                prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
            }

            #[test]
            fn c_star_identity(seed in any::<u64>(), n in 1usize..8) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = random_matrix(&mut rng, n, n + 1);
                let a = op_norm(&m).unwrap();
                let g = op_norm(&m.adjoint().matmul(&m).unwrap()).unwrap();
                prop_assert!((g - a * a).abs() <= 1e-9 * g.max(1e-300));
            }

            #[test]
            fn norm_sandwiched_by_hilbert_schmidt(seed in any::<u64>(), n in 1usize..9) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = random_matrix(&mut rng, n, n);
                let (op, hs) = (op_norm(&m).unwrap(), m.hilbert_schmidt());
                prop_assert!(op <= hs * (1.0 + 1e-12));
                prop_assert!(hs <= (n as f64).sqrt() * op * (1.0 + 1e-12));
            }
        }
    }
}
