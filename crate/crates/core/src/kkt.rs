//! KKT residual measures and active sets.
//!
//! For an evaluation at `x` and multipliers `(y, z)`:
//!
//! ```text
//! ψ  = ‖[∇f + ∇e·y + ∇c·z ; e ; min{z, −c}]‖₁
//! κ  = ‖∇f + ∇e·y + ∇c·z‖₁ + ‖e‖₁
//! ρ  = κ + Σ_{c_i<0} (−c_i z_i)      + Σ_{c_i≥0} c_i
//! ρ̄  = κ + Σ_{c_i<0} (−c_i z_i)^{1/2} + Σ_{c_i≥0} c_i
//! ```
//!
//! The same functions serve exact and noisy evaluations; the noisy
//! counterparts are simply these formulas applied to noisy data.

use std::fmt;

use thiserror::Error;

use crate::lp::{simplex_solve, LpError, LpStatus, StandardLp};
use crate::numerics::{Matrix, Vector};
use crate::problem::{Dims, ErrorBounds, Evaluation};
use crate::scalar::{max, min, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KktError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("multiplier z[{0}] is negative")]
    NegativeMultiplier(usize),
    #[error("index {index} out of range for {q} inequalities")]
    IndexOutOfRange { index: usize, q: usize },
    #[error("{q} inequalities exceed the enumeration limit of {limit}")]
    EnumerationLimit { q: usize, limit: usize },
    #[error("z cap must be positive")]
    ZCap,
    #[error("every complementarity pattern failed to solve ({0:?})")]
    NoPattern(LpStatus),
    #[error(transparent)]
    Lp(#[from] LpError),
}

/// Sorted set of inequality indices. Stored zero-based, displayed one-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct ActiveSet {
    q: usize,
    indices: Vec<usize>,
}

impl ActiveSet {
    pub fn new(q: usize, indices: impl IntoIterator<Item = usize>) -> Result<Self, KktError> {
        let mut indices: Vec<usize> = indices.into_iter().collect();
        if let Some(&index) = indices.iter().find(|&&i| i >= q) {
            return Err(KktError::IndexOutOfRange { index, q });
        }
        indices.sort_unstable();
        indices.dedup();
        Ok(Self { q, indices })
    }

    pub fn empty(q: usize) -> Self {
        Self {
            q,
            indices: Vec::new(),
        }
    }

    /// Builds from one-based indices as printed in reports.
    pub fn from_one_based(q: usize, indices: &[usize]) -> Result<Self, KktError> {
        if indices.contains(&0) {
            return Err(KktError::IndexOutOfRange { index: 0, q });
        }
        Self::new(q, indices.iter().map(|i| i - 1))
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Zero-based indices in increasing order.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.indices.iter().map(|i| i + 1).collect()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn intersection_len(&self, other: &Self) -> usize {
        self.indices.iter().filter(|i| other.contains(**i)).count()
    }

    /// Indices not in the set.
    pub fn complement(&self) -> Vec<usize> {
        (0..self.q).filter(|i| !self.contains(*i)).collect()
    }
}

impl fmt::Display for ActiveSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (k, i) in self.indices.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}", i + 1)?;
        }
        f.write_str("}")
    }
}

/// Equality multipliers `y` and inequality multipliers `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierPair<T> {
    pub y: Vector<T>,
    pub z: Vector<T>,
}

impl<T: Real> MultiplierPair<T> {
    pub fn new(y: Vector<T>, z: Vector<T>) -> Self {
        Self { y, z }
    }

    pub fn zeros(p: usize, q: usize) -> Self {
        Self {
            y: Vector::zeros(p),
            z: Vector::zeros(q),
        }
    }
}

fn check_dims<T: Real>(ev: &Evaluation<T>, m: &MultiplierPair<T>) -> Result<Dims, KktError> {
    let d = ev.dims();
    if m.y.len() != d.p || m.z.len() != d.q {
        return Err(KktError::Dimension(format!(
            "multipliers ({}, {}) do not match p = {}, q = {}",
            m.y.len(),
            m.z.len(),
            d.p,
            d.q
        )));
    }
    Ok(d)
}

fn check_nonneg<T: Real>(z: &Vector<T>) -> Result<(), KktError> {
    match z.iter().position(|v| *v < T::zero()) {
        Some(i) => Err(KktError::NegativeMultiplier(i)),
        None => Ok(()),
    }
}

/// KKT error: the 1-norm of stationarity, equality, and complementarity
/// residuals.
pub fn psi<T: Real>(ev: &Evaluation<T>, m: &MultiplierPair<T>) -> Result<T, KktError> {
    check_dims(ev, m)?;
    let stat = ev.lagrangian_grad(&m.y, &m.z).norm1();
    let comp: T =
        m.z.iter()
            .zip(ev.c_val.iter())
            .map(|(z, c)| min(*z, -*c).abs())
            .sum();
    Ok(stat + ev.e_val.norm1() + comp)
}

/// Stationarity plus equality residual in the 1-norm.
pub fn kappa<T: Real>(ev: &Evaluation<T>, m: &MultiplierPair<T>) -> Result<T, KktError> {
    check_dims(ev, m)?;
    Ok(ev.lagrangian_grad(&m.y, &m.z).norm1() + ev.e_val.norm1())
}

/// `Σ_{c_i ≥ 0} c_i`, the part of ρ and ρ̄ that does not depend on `z`.
pub(crate) fn violated_sum<T: Real>(c: &[T]) -> T {
    c.iter().filter(|v| **v >= T::zero()).copied().sum()
}

/// Linear surrogate `ρ = κ + Σ_{c_i<0} −c_i z_i + Σ_{c_i≥0} c_i`.
pub fn rho<T: Real>(ev: &Evaluation<T>, m: &MultiplierPair<T>) -> Result<T, KktError> {
    check_nonneg(&m.z)?;
    let k = kappa(ev, m)?;
    let lin: T = ev
        .c_val
        .iter()
        .zip(m.z.iter())
        .filter(|(c, _)| **c < T::zero())
        .map(|(c, z)| -*c * *z)
        .sum();
    Ok(k + lin + violated_sum(&ev.c_val))
}

/// Square-root surrogate `ρ̄ = κ + Σ_{c_i<0} (−c_i z_i)^{1/2} + Σ_{c_i≥0} c_i`.
pub fn rho_bar<T: Real>(ev: &Evaluation<T>, m: &MultiplierPair<T>) -> Result<T, KktError> {
    check_nonneg(&m.z)?;
    let k = kappa(ev, m)?;
    let roots: T = ev
        .c_val
        .iter()
        .zip(m.z.iter())
        .filter(|(c, _)| **c < T::zero())
        .map(|(c, z)| max(T::zero(), -*c * *z).sqrt())
        .sum();
    Ok(k + roots + violated_sum(&ev.c_val))
}

/// `{i : c_i ≥ −tol}`.
pub fn active_set_exact<T: Real>(c_vals: &[T], tol: T) -> ActiveSet {
    let tol = max(tol, T::zero());
    ActiveSet {
        q: c_vals.len(),
        indices: (0..c_vals.len()).filter(|&i| c_vals[i] >= -tol).collect(),
    }
}

/// Upper-side noise allowance `ε_ρ̄` relating ρ̄ on exact and noisy data:
/// `3√q(ε_c + √(ε_c·M̄)) + √p·ε_e + √n·ε_∇f + √n·M̄(ε_∇e + ε_∇c)`.
pub fn eps_rho_bar<T: Real>(bounds: &ErrorBounds<T>, dims: Dims, m_bar: T) -> T {
    let s = |k: usize| T::lit(k as f64).sqrt();
    T::lit(3.0) * s(dims.q) * (bounds.eps_c + (bounds.eps_c * m_bar).sqrt())
        + shared_noise_terms(bounds, dims, m_bar)
}

/// Lower-side noise allowance `ε_ρ`:
/// `q·ε_c·(1 + M̄) + √p·ε_e + √n·ε_∇f + √n·M̄(ε_∇e + ε_∇c)`.
pub fn eps_rho<T: Real>(bounds: &ErrorBounds<T>, dims: Dims, m_bar: T) -> T {
    T::lit(dims.q as f64) * bounds.eps_c * (T::one() + m_bar)
        + shared_noise_terms(bounds, dims, m_bar)
}

fn shared_noise_terms<T: Real>(b: &ErrorBounds<T>, dims: Dims, m_bar: T) -> T {
    let s = |k: usize| T::lit(k as f64).sqrt();
    s(dims.p) * b.eps_e
        + s(dims.n) * b.eps_grad_f
        + s(dims.n) * m_bar * (b.eps_grad_e + b.eps_grad_c)
}

/// Largest inequality count accepted by [`omega_bruteforce`].
pub const OMEGA_ENUMERATION_LIMIT: usize = 12;

/// `ω(x) = min ψ(x, y, z)` over `y` free and `0 ≤ z ≤ z_cap`, solved exactly
/// by enumerating which side of each `min{z_i, −c_i}` is attained.
///
/// Each pattern is a bounded-variable LP. Ties go to the lowest pattern
/// index (bit `k` of the pattern selects the `−c` side for the `k`-th
/// non-positive constraint).
pub fn omega_bruteforce<T: Real>(
    ev: &Evaluation<T>,
    z_cap: T,
) -> Result<(T, MultiplierPair<T>), KktError> {
    let Dims { n, p, q } = ev.dims();
    if q > OMEGA_ENUMERATION_LIMIT {
        return Err(KktError::EnumerationLimit {
            q,
            limit: OMEGA_ENUMERATION_LIMIT,
        });
    }
    if !(z_cap > T::zero()) {
        return Err(KktError::ZCap);
    }
    let branching: Vec<usize> = (0..q).filter(|&i| ev.c_val[i] <= T::zero()).collect();
    let nvar = p + q + 2 * n;
    let a = stationarity_matrix(ev);
    let rhs: Vec<T> = ev.grad_f.iter().map(|g| -*g).collect();
    let inf = T::infinity();

    let mut best: Option<(T, MultiplierPair<T>)> = None;
    let mut last_status = LpStatus::Infeasible;
    for pattern in 0u32..(1u32 << branching.len()) {
        let mut cost = vec![T::zero(); nvar];
        let mut lower = vec![T::zero(); nvar];
        let mut upper = vec![inf; nvar];
        let mut constant = ev.e_val.norm1();
        for j in 0..p {
            lower[j] = -inf;
        }
        for i in 0..q {
            upper[p + i] = z_cap;
            if ev.c_val[i] > T::zero() {
                constant += ev.c_val[i];
            }
        }
        let mut feasible = true;
        for (k, &i) in branching.iter().enumerate() {
            let neg_c = -ev.c_val[i];
            if pattern & (1 << k) == 0 {
                // min attained by z_i
                upper[p + i] = min(z_cap, neg_c);
                cost[p + i] = T::one();
            } else {
                // min attained by −c_i
                if neg_c > z_cap {
                    feasible = false;
                    break;
                }
                lower[p + i] = neg_c;
                constant += neg_c;
            }
        }
        if !feasible {
            continue;
        }
        for j in p + q..nvar {
            cost[j] = T::one();
        }
        let lp = StandardLp::new(cost, a.clone(), rhs.clone(), lower, upper)?;
        let sol = simplex_solve(&lp, 10_000)?;
        if sol.status != LpStatus::Optimal {
            last_status = sol.status;
            continue;
        }
        let value = sol.objective + constant;
        if best.as_ref().is_none_or(|(bv, _)| value < *bv) {
            let y = Vector::from_vec_unchecked(sol.x[..p].to_vec());
            let z = Vector::from_vec_unchecked(
                sol.x[p..p + q].iter().map(|v| max(*v, T::zero())).collect(),
            );
            best = Some((value, MultiplierPair { y, z }));
        }
    }
    let (_, m) = best.ok_or(KktError::NoPattern(last_status))?;
    let value = psi(ev, &m)?;
    Ok((value, m))
}

/// `[∇e  ∇c  −I  I]`, the constraint matrix of `∇e·y + ∇c·z − r + s = −∇f`.
pub(crate) fn stationarity_matrix<T: Real>(ev: &Evaluation<T>) -> Matrix<T> {
    let Dims { n, p, q } = ev.dims();
    Matrix::from_fn(n, p + q + 2 * n, |i, j| {
        if j < p {
            ev.jac_e.get(i, j)
        } else if j < p + q {
            ev.jac_c.get(i, j - p)
        } else if j == p + q + i {
            -T::one()
        } else if j == p + q + n + i {
            T::one()
        } else {
            T::zero()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;
    use crate::problem::ErrorBounds;

    /// n = 2, p = 1, q = 2 toy evaluation.
    fn toy(c: [f64; 2]) -> Evaluation<f64> {
        Evaluation::new(
            vec![0.0, 0.0],
            0.0,
            vec![0.5],
            c.to_vec(),
            vec![1.0, -2.0],
            Matrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap(),
            Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            ErrorBounds::zero(),
        )
        .unwrap()
    }

    fn pair(y: &[f64], z: &[f64]) -> MultiplierPair<f64> {
        MultiplierPair::new(
            Vector::new(y.to_vec()).unwrap(),
            Vector::new(z.to_vec()).unwrap(),
        )
    }

    #[test]
    fn psi_with_zero_multipliers() {
        let ev = toy([-1.0, 3.0]);
        // ‖∇f‖₁ + ‖e‖₁ + ‖[c]₊‖₁
        assert_eq!(
            psi(&ev, &pair(&[0.0], &[0.0, 0.0])).unwrap(),
            3.0 + 0.5 + 3.0
        );
    }

    #[test]
    fn psi_min_branch_picks_z() {
        let ev = toy([-5.0, -5.0]);
        let base = psi(&ev, &pair(&[0.0], &[0.0, 0.0])).unwrap();
        // z₂ = 1 < −c₂ = 5: min block entry is z₂ = 1; stationarity drops by 1.
        let bumped = psi(&ev, &pair(&[0.0], &[0.0, 1.0])).unwrap();
        assert_eq!(bumped, base - 1.0 + 1.0);
    }

    #[test]
    fn kappa_blocks() {
        let ev = toy([-1.0, -1.0]);
        assert_eq!(kappa(&ev, &pair(&[-1.0], &[0.0, 2.0])).unwrap(), 0.0 + 0.5);
        assert!(matches!(
            kappa(&ev, &pair(&[], &[0.0, 0.0])),
            Err(KktError::Dimension(_))
        ));
    }

    #[test]
    fn rho_equals_kappa_when_z_zero_and_strictly_feasible() {
        let ev = toy([-1.0, -2.0]);
        let m = pair(&[0.3], &[0.0, 0.0]);
        let k = kappa(&ev, &m).unwrap();
        assert_eq!(rho(&ev, &m).unwrap(), k);
        assert_eq!(rho_bar(&ev, &m).unwrap(), k);
    }

    #[test]
    fn single_constraint_rho_values() {
        let ev = Evaluation::new(
            vec![0.0],
            0.0,
            vec![],
            vec![-4.0],
            vec![-1.0],
            Matrix::zeros(1, 0),
            Matrix::from_rows(&[vec![1.0]]).unwrap(),
            ErrorBounds::zero(),
        )
        .unwrap();
        let m = pair(&[], &[1.0]);
        assert_eq!(kappa(&ev, &m).unwrap(), 0.0);
        assert_eq!(rho(&ev, &m).unwrap(), 4.0);
        assert_eq!(rho_bar(&ev, &m).unwrap(), 2.0);
    }

    #[test]
    fn tie_on_zero_goes_to_violated_sum() {
        let ev = toy([0.0, -1.0]);
        let m = pair(&[0.0], &[5.0, 0.0]);
        // c₁ = 0 contributes c₁ = 0 rather than −c₁z₁.
        let k = kappa(&ev, &m).unwrap();
        assert_eq!(rho(&ev, &m).unwrap(), k);
        assert_eq!(rho_bar(&ev, &m).unwrap(), k);
    }

    #[test]
    fn negative_z_rejected() {
        let ev = toy([-1.0, -1.0]);
        assert_eq!(
            rho(&ev, &pair(&[0.0], &[-1.0, 0.0])),
            Err(KktError::NegativeMultiplier(0))
        );
        assert_eq!(
            rho_bar(&ev, &pair(&[0.0], &[0.0, -1e-3])),
            Err(KktError::NegativeMultiplier(1))
        );
    }

    #[test]
    fn active_set_rules() {
        assert_eq!(active_set_exact(&[-1.0, 0.0], 1e-8).one_based(), vec![2]);
        assert_eq!(active_set_exact(&[0.0, 0.0], 0.0).one_based(), vec![1, 2]);
        assert_eq!(active_set_exact(&[-1e-9, -1.0], 1e-8).one_based(), vec![1]);
    }

    #[test]
    fn active_set_display_and_range() {
        let a = ActiveSet::new(3, [2, 0, 2]).unwrap();
        assert_eq!(a.to_string(), "{1,3}");
        assert_eq!(ActiveSet::empty(2).to_string(), "{}");
        assert!(ActiveSet::new(2, [2]).is_err());
        assert_eq!(ActiveSet::from_one_based(2, &[2]).unwrap().indices(), &[1]);
        assert_eq!(a.complement(), vec![1]);
    }

    #[test]
    fn omega_single_violated_constraint() {
        // q = 1, c₁ > 0: only the forced branch exists.
        let ev = Evaluation::new(
            vec![0.0],
            0.0,
            vec![],
            vec![0.25],
            vec![-1.0],
            Matrix::zeros(1, 0),
            Matrix::from_rows(&[vec![2.0]]).unwrap(),
            ErrorBounds::zero(),
        )
        .unwrap();
        let (w, m): (f64, _) = omega_bruteforce(&ev, 1e3).unwrap();
        assert!((w - 0.25).abs() < 1e-12);
        assert!((m.z[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn omega_guards() {
        let ev = toy([-1.0, -1.0]);
        assert_eq!(omega_bruteforce(&ev, 0.0).unwrap_err(), KktError::ZCap);
    }

    #[test]
    fn noise_allowances_vanish_without_noise() {
        let dims = Dims { n: 3, p: 1, q: 2 };
        let z = ErrorBounds::<f64>::zero();
        assert_eq!(eps_rho(&z, dims, 10.0), 0.0);
        assert_eq!(eps_rho_bar(&z, dims, 10.0), 0.0);
        let b = ErrorBounds::from_entrywise(1e-4, dims);
        let s2 = 2f64.sqrt();
        let shared = 1e-4 + 3e-4 + 3f64.sqrt() * 10.0 * 3e-4;
        let upper = 3.0 * s2 * (s2 * 1e-4 + (s2 * 1e-4 * 10.0).sqrt()) + shared;
        let lower = 2.0 * s2 * 1e-4 * 11.0 + shared;
        assert!((eps_rho_bar(&b, dims, 10.0) - upper).abs() < 1e-15);
        assert!((eps_rho(&b, dims, 10.0) - lower).abs() < 1e-15);
    }
}
