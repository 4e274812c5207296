//! Small dense linear algebra: vectors, row-major matrices, LU with partial
//! pivoting, and a checker for the classical perturbed-linear-system bound.
//!
//! Everything here is sized for desk-scale problems (tens of unknowns). All
//! matrix norms are the operator norm induced by the vector infinity norm,
//! i.e. the maximum absolute row sum.

use std::fmt;
use std::ops::{Deref, Index, IndexMut};

use thiserror::Error;

use crate::scalar::{max, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite entry at position {0}")]
    NonFinite(usize),
    #[error("matrix is singular to working precision")]
    Singular,
    #[error("precondition violated: {0}")]
    Domain(String),
}

/// Dense column vector of finite scalars.
#[derive(Clone, PartialEq, Default)]
pub struct Vector<T>(Vec<T>);

impl<T: Real> Vector<T> {
    /// Wraps `entries`, rejecting NaN or infinite values.
    pub fn new(entries: Vec<T>) -> Result<Self, NumericsError> {
        if let Some(i) = entries.iter().position(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite(i));
        }
        Ok(Self(entries))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![T::zero(); len])
    }

    pub fn from_fn(len: usize, f: impl FnMut(usize) -> T) -> Self {
        let v: Vec<T> = (0..len).map(f).collect();
        debug_assert!(v.iter().all(|x| x.is_finite()));
        Self(v)
    }

    /// Wraps without validation; used for intermediate results of arithmetic
    /// on already validated data.
    pub(crate) fn from_vec_unchecked(entries: Vec<T>) -> Self {
        Self(entries)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Self) -> T {
        debug_assert_eq!(self.len(), other.len());
        self.0.iter().zip(&other.0).map(|(a, b)| *a * *b).sum()
    }

    pub fn norm1(&self) -> T {
        self.0.iter().map(|v| v.abs()).sum()
    }

    pub fn norm2(&self) -> T {
        self.0.iter().map(|v| *v * *v).sum::<T>().sqrt()
    }

    pub fn norm_inf(&self) -> T {
        self.0.iter().fold(T::zero(), |m, v| max(m, v.abs()))
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!(self.len(), other.len());
        Self(self.0.iter().zip(&other.0).map(|(a, b)| *a + *b).collect())
    }

    pub fn sub(&self, other: &Self) -> Self {
        debug_assert_eq!(self.len(), other.len());
        Self(self.0.iter().zip(&other.0).map(|(a, b)| *a - *b).collect())
    }

    pub fn scale(&self, s: T) -> Self {
        Self(self.0.iter().map(|a| *a * s).collect())
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: T, x: &Self) {
        debug_assert_eq!(self.len(), x.len());
        for (yi, xi) in self.0.iter_mut().zip(&x.0) {
            *yi += a * *xi;
        }
    }

    /// Concatenates several vectors into one.
    pub fn stack(parts: &[&Self]) -> Self {
        Self(parts.iter().flat_map(|p| p.0.iter().copied()).collect())
    }

    pub fn cast<U: Real>(&self) -> Vector<U> {
        Vector(self.0.iter().map(|v| U::lit(v.to_f64_lossy())).collect())
    }
}

impl<T> Deref for Vector<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.0
    }
}

impl<T> Index<usize> for Vector<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

impl<T> IndexMut<usize> for Vector<T> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.0[i]
    }
}

impl<T: fmt::Debug> fmt::Debug for Vector<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, NumericsError> {
        if rows * cols != data.len() {
            return Err(NumericsError::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite(i));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, NumericsError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(NumericsError::Dimension("ragged rows".into()));
        }
        Self::from_row_major(r, c, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vector<T> {
        Vector::from_vec_unchecked((0..self.rows).map(|i| self.get(i, j)).collect())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// `A x`
    pub fn mul_vec(&self, x: &[T]) -> Vector<T> {
        debug_assert_eq!(x.len(), self.cols);
        Vector::from_vec_unchecked(
            (0..self.rows)
                .map(|i| self.row(i).iter().zip(x).map(|(a, b)| *a * *b).sum())
                .collect(),
        )
    }

    /// `Aᵀ x`
    pub fn tr_mul_vec(&self, x: &[T]) -> Vector<T> {
        debug_assert_eq!(x.len(), self.rows);
        let mut out = vec![T::zero(); self.cols];
        for (i, xi) in x.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += *a * *xi;
            }
        }
        Vector::from_vec_unchecked(out)
    }

    pub fn matmul(&self, other: &Self) -> Self {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| *a + *b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| *a - *b)
                .collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| *a * s).collect(),
        }
    }

    /// Sub-matrix made of the listed columns, in order.
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        Self::from_fn(self.rows, cols.len(), |i, j| self.get(i, cols[j]))
    }

    /// Infinity-induced operator norm (max absolute row sum).
    pub fn norm_inf(&self) -> T {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<T>())
            .fold(T::zero(), max)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| max(m, v.abs()))
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

impl<T: fmt::Debug> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", &self.data[i * self.cols..(i + 1) * self.cols])?;
        }
        write!(f, "]")
    }
}

/// Relative pivot threshold below which a factorization is flagged singular.
pub const SINGULAR_PIVOT_RTOL: f64 = 1e-12;

/// `P·A = L·U` with unit-lower `L` and upper `U` packed into one matrix.
#[derive(Clone, Debug)]
pub struct LuFactorization<T> {
    packed: Matrix<T>,
    /// `perm[i]` is the row of `A` that ended up in row `i`.
    perm: Vec<usize>,
    swaps: usize,
    singular: bool,
}

/// Factorizes a square matrix with partial (row) pivoting.
///
/// The factorization never fails on a square input; instead the singularity
/// flag is raised when some pivot falls below `1e-12 · max|a_ij|` (or a few
/// ulps for `f32`).
pub fn lu_factor<T: Real>(a: &Matrix<T>) -> Result<LuFactorization<T>, NumericsError> {
    if !a.is_square() {
        return Err(NumericsError::Dimension(format!(
            "LU needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let n = a.rows();
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut swaps = 0;
    let rtol = max(T::lit(SINGULAR_PIVOT_RTOL), T::epsilon() * T::lit(16.0));
    let threshold = rtol * a.max_abs();
    let mut singular = n > 0 && a.max_abs() == T::zero();

    for k in 0..n {
        let (p, pivot_mag) =
            (k..n)
                .map(|i| (i, lu.get(i, k).abs()))
                .fold((k, T::zero() - T::one()), |best, cur| {
                    if cur.1 > best.1 {
                        cur
                    } else {
                        best
                    }
                });
        if pivot_mag <= threshold {
            singular = true;
            continue;
        }
        if p != k {
            for j in 0..n {
                let tmp = lu.get(k, j);
                lu.set(k, j, lu.get(p, j));
                lu.set(p, j, tmp);
            }
            perm.swap(k, p);
            swaps += 1;
        }
        let pivot = lu.get(k, k);
        for i in k + 1..n {
            let l = lu.get(i, k) / pivot;
            lu.set(i, k, l);
            if l != T::zero() {
                for j in k + 1..n {
                    let v = lu.get(i, j) - l * lu.get(k, j);
                    lu.set(i, j, v);
                }
            }
        }
    }
    Ok(LuFactorization {
        packed: lu,
        perm,
        swaps,
        singular,
    })
}

impl<T: Real> LuFactorization<T> {
    pub fn dim(&self) -> usize {
        self.packed.rows()
    }

    pub fn is_singular(&self) -> bool {
        self.singular
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Unit lower-triangular factor.
    pub fn l(&self) -> Matrix<T> {
        let n = self.dim();
        Matrix::from_fn(n, n, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => self.packed.get(i, j),
            std::cmp::Ordering::Equal => T::one(),
            std::cmp::Ordering::Less => T::zero(),
        })
    }

    /// Upper-triangular factor.
    pub fn u(&self) -> Matrix<T> {
        let n = self.dim();
        Matrix::from_fn(n, n, |i, j| {
            if j >= i {
                self.packed.get(i, j)
            } else {
                T::zero()
            }
        })
    }

    /// Applies the row permutation to `a`, giving `P·A`.
    pub fn permute_rows(&self, a: &Matrix<T>) -> Matrix<T> {
        Matrix::from_fn(a.rows(), a.cols(), |i, j| a.get(self.perm[i], j))
    }

    pub fn determinant(&self) -> T {
        let n = self.dim();
        let prod = (0..n).fold(T::one(), |acc, i| acc * self.packed.get(i, i));
        if self.swaps % 2 == 1 {
            -prod
        } else {
            prod
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[T]) -> Result<Vector<T>, NumericsError> {
        let n = self.dim();
        if b.len() != n {
            return Err(NumericsError::Dimension(format!(
                "rhs has length {}, expected {n}",
                b.len()
            )));
        }
        if self.singular {
            return Err(NumericsError::Singular);
        }
        let mut x: Vec<T> = self.perm.iter().map(|&i| b[i]).collect();
        for i in 0..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.packed.get(i, j) * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..n {
                acc -= self.packed.get(i, j) * x[j];
            }
            x[i] = acc / self.packed.get(i, i);
        }
        Ok(Vector::from_vec_unchecked(x))
    }

    /// Explicit inverse through `n` solves.
    pub fn inverse(&self) -> Result<Matrix<T>, NumericsError> {
        let n = self.dim();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = T::zero());
            e[j] = T::one();
            let col = self.solve(&e)?;
            for i in 0..n {
                inv.set(i, j, col[i]);
            }
        }
        Ok(inv)
    }
}

/// Free-function form of [`LuFactorization::solve`].
pub fn solve<T: Real>(fac: &LuFactorization<T>, b: &Vector<T>) -> Result<Vector<T>, NumericsError> {
    fac.solve(b)
}

/// Factorizes and solves in one go.
pub fn solve_dense<T: Real>(a: &Matrix<T>, b: &[T]) -> Result<Vector<T>, NumericsError> {
    lu_factor(a)?.solve(b)
}

/// `cond(K) = ‖K‖∞ · ‖K⁻¹‖∞`.
pub fn cond_inf<T: Real>(k: &Matrix<T>) -> Result<T, NumericsError> {
    let inv = lu_factor(k)?.inverse()?;
    Ok(k.norm_inf() * inv.norm_inf())
}

/// Both sides of the perturbed-system bound, for reporting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationBound<T> {
    pub relative_error: T,
    pub bound: T,
}

/// Evaluates `‖v − ṽ‖/‖v‖` and
/// `cond(K)/(1 − ‖δK‖‖K⁻¹‖) · (‖δK‖/‖K‖ + ‖δb‖/‖b‖)`
/// where `Kv = b` and `(K+δK)ṽ = b+δb`, all in the infinity norm.
pub fn perturbation_bound<T: Real>(
    k: &Matrix<T>,
    dk: &Matrix<T>,
    b: &Vector<T>,
    db: &Vector<T>,
) -> Result<PerturbationBound<T>, NumericsError> {
    let n = k.rows();
    if !k.is_square() || dk.rows() != n || dk.cols() != n || b.len() != n || db.len() != n {
        return Err(NumericsError::Dimension("K, δK, b, δb must conform".into()));
    }
    let b_norm = b.norm_inf();
    if b_norm == T::zero() {
        return Err(NumericsError::Domain("b must be nonzero".into()));
    }
    let fac = lu_factor(k)?;
    if fac.is_singular() {
        return Err(NumericsError::Domain("K must be non-singular".into()));
    }
    let k_inv_norm = fac.inverse()?.norm_inf();
    let dk_norm = dk.norm_inf();
    let coupling = dk_norm * k_inv_norm;
    if coupling >= T::one() {
        return Err(NumericsError::Domain(format!(
            "‖δK‖‖K⁻¹‖ = {coupling} must be < 1"
        )));
    }
    let v = fac.solve(b)?;
    let v_pert = solve_dense(&k.add(dk), &b.add(db))?;
    let k_norm = k.norm_inf();
    let cond = k_norm * k_inv_norm;
    let relative_error = v.sub(&v_pert).norm_inf() / v.norm_inf();
    let bound = cond / (T::one() - coupling) * (dk_norm / k_norm + db.norm_inf() / b_norm);
    Ok(PerturbationBound {
        relative_error,
        bound,
    })
}

/// Whether the perturbed-system bound holds for the given instance.
///
/// A rounding allowance of `10³·u·cond(K)` (with `u` the unit roundoff)
/// absorbs the error of the two floating-point solves.
pub fn perturbation_bound_holds<T: Real>(
    k: &Matrix<T>,
    dk: &Matrix<T>,
    b: &Vector<T>,
    db: &Vector<T>,
) -> Result<bool, NumericsError> {
    let pb = perturbation_bound(k, dk, b, db)?;
    let cond = cond_inf(k)?;
    let slack = T::epsilon() * T::lit(1e3) * cond * (T::one() + pb.bound);
    Ok(pb.relative_error <= pb.bound + slack)
}
