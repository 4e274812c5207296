//! Bounded-variable primal simplex and the multiplier-based (LP-LPEC)
//! active-set identifier.
//!
//! The identifier minimizes the linear surrogate ρ over `y` free and
//! `0 ≤ z ≤ M` through the LP
//!
//! ```text
//! min  𝟙ᵀr + 𝟙ᵀs + Σ_{c_i<0} −c_i z_i
//! s.t. ∇f + ∇e·y + ∇c·z = r − s,   r, s ≥ 0,   0 ≤ z ≤ M
//! ```
//!
//! and then keeps every constraint with `c_i ≥ −(β·ρ̄)^σ`.

use std::fmt;

use thiserror::Error;

use crate::kkt::{self, ActiveSet, KktError, MultiplierPair};
use crate::numerics::{lu_factor, Matrix, Vector};
use crate::problem::{Dims, Evaluation};
use crate::scalar::{max, min, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LpError {
    #[error("malformed LP: {0}")]
    Malformed(String),
    #[error("invalid identifier parameter: {0}")]
    Params(String),
    #[error("LP subproblem not solved to optimality (status {0})")]
    IdentificationFailed(LpStatus),
    #[error("basis matrix became singular")]
    SingularBasis,
    #[error("residual evaluation failed: {0}")]
    Kkt(String),
}

impl From<KktError> for LpError {
    fn from(e: KktError) -> Self {
        LpError::Kkt(e.to_string())
    }
}

/// `min cᵀx s.t. A x = b, lower ≤ x ≤ upper` with possibly infinite bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardLp<T> {
    pub cost: Vec<T>,
    pub a: Matrix<T>,
    pub b: Vec<T>,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Real> StandardLp<T> {
    pub fn new(
        cost: Vec<T>,
        a: Matrix<T>,
        b: Vec<T>,
        lower: Vec<T>,
        upper: Vec<T>,
    ) -> Result<Self, LpError> {
        let n = cost.len();
        if a.cols() != n || a.rows() != b.len() || lower.len() != n || upper.len() != n {
            return Err(LpError::Malformed(format!(
                "cost {n}, A {}x{}, b {}, bounds {}/{}",
                a.rows(),
                a.cols(),
                b.len(),
                lower.len(),
                upper.len()
            )));
        }
        if cost.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(LpError::Malformed("cost and rhs must be finite".into()));
        }
        for j in 0..n {
            if lower[j].is_nan()
                || upper[j].is_nan()
                || lower[j] > upper[j]
                || lower[j] == T::infinity()
                || upper[j] == T::neg_infinity()
            {
                return Err(LpError::Malformed(format!("bad bounds on variable {j}")));
            }
        }
        Ok(Self {
            cost,
            a,
            b,
            lower,
            upper,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn num_rows(&self) -> usize {
        self.b.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

impl fmt::Display for LpStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Optimal => "optimal",
            Self::Infeasible => "infeasible",
            Self::Unbounded => "unbounded",
            Self::IterationLimit => "iteration-limit",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution<T> {
    pub x: Vec<T>,
    pub objective: T,
    pub status: LpStatus,
    /// Row multipliers `π` of the final basis (phase-two costs).
    pub duals: Vec<T>,
    pub iterations: usize,
}

impl<T: Real> LpSolution<T> {
    /// `c − Aᵀπ` for every variable.
    pub fn reduced_costs(&self, lp: &StandardLp<T>) -> Vec<T> {
        let atpi = lp.a.tr_mul_vec(&self.duals);
        lp.cost
            .iter()
            .zip(atpi.iter())
            .map(|(c, v)| *c - *v)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    One,
    Two,
}

struct Simplex<'a, T> {
    lp: &'a StandardLp<T>,
    m: usize,
    n: usize,
    /// `[A | diag(sign)]`
    cols: Matrix<T>,
    lower: Vec<T>,
    upper: Vec<T>,
    x: Vec<T>,
    basis: Vec<usize>,
    basic_pos: Vec<Option<usize>>,
    iterations: usize,
    max_iters: usize,
    piv_tol: T,
    opt_tol: T,
}

enum Step {
    Optimal,
    Unbounded,
    Moved,
}

impl<'a, T: Real> Simplex<'a, T> {
    fn new(lp: &'a StandardLp<T>, max_iters: usize) -> Self {
        let m = lp.num_rows();
        let n = lp.num_vars();
        let mut x = vec![T::zero(); n + m];
        for j in 0..n {
            x[j] = if lp.lower[j].is_finite() {
                lp.lower[j]
            } else if lp.upper[j].is_finite() {
                lp.upper[j]
            } else {
                T::zero()
            };
        }
        let ax = lp.a.mul_vec(&x[..n]);
        let mut sign = vec![T::one(); m];
        for i in 0..m {
            let r = lp.b[i] - ax[i];
            if r < T::zero() {
                sign[i] = -T::one();
            }
            x[n + i] = r.abs();
        }
        let cols = Matrix::from_fn(m, n + m, |i, j| {
            if j < n {
                lp.a.get(i, j)
            } else if j - n == i {
                sign[i]
            } else {
                T::zero()
            }
        });
        let mut lower = lp.lower.clone();
        let mut upper = lp.upper.clone();
        lower.extend(std::iter::repeat_n(T::zero(), m));
        upper.extend(std::iter::repeat_n(T::infinity(), m));
        let basis: Vec<usize> = (n..n + m).collect();
        let mut basic_pos = vec![None; n + m];
        for (k, &b) in basis.iter().enumerate() {
            basic_pos[b] = Some(k);
        }
        let tiny = T::epsilon() * T::lit(100.0);
        Self {
            lp,
            m,
            n,
            cols,
            lower,
            upper,
            x,
            basis,
            basic_pos,
            iterations: 0,
            max_iters,
            piv_tol: max(T::lit(1e-11), tiny),
            opt_tol: max(T::lit(1e-10), tiny),
        }
    }

    fn cost(&self, phase: Phase, j: usize) -> T {
        match phase {
            Phase::One => {
                if j >= self.n {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Phase::Two => {
                if j < self.n {
                    self.lp.cost[j]
                } else {
                    T::zero()
                }
            }
        }
    }

    fn basis_matrix(&self) -> Matrix<T> {
        Matrix::from_fn(self.m, self.m, |i, k| self.cols.get(i, self.basis[k]))
    }

    /// Recomputes basic values from the nonbasic ones.
    fn refresh_basic(&mut self, b_mat: &Matrix<T>) -> Result<(), LpError> {
        let mut rhs = self.lp.b.clone();
        for j in 0..self.n + self.m {
            if self.basic_pos[j].is_none() && self.x[j] != T::zero() {
                for (i, r) in rhs.iter_mut().enumerate() {
                    *r -= self.cols.get(i, j) * self.x[j];
                }
            }
        }
        let lu = lu_factor(b_mat).map_err(|_| LpError::SingularBasis)?;
        let xb = lu.solve(&rhs).map_err(|_| LpError::SingularBasis)?;
        for (k, &bj) in self.basis.iter().enumerate() {
            self.x[bj] = xb[k];
        }
        Ok(())
    }

    fn duals(&self, phase: Phase, b_mat: &Matrix<T>) -> Result<Vec<T>, LpError> {
        let cb: Vec<T> = self.basis.iter().map(|&j| self.cost(phase, j)).collect();
        let lu = lu_factor(&b_mat.transpose()).map_err(|_| LpError::SingularBasis)?;
        Ok(lu
            .solve(&cb)
            .map_err(|_| LpError::SingularBasis)?
            .into_vec())
    }

    fn step(&mut self, phase: Phase) -> Result<Step, LpError> {
        let b_mat = self.basis_matrix();
        self.refresh_basic(&b_mat)?;
        let pi = self.duals(phase, &b_mat)?;

        // Bland's rule: first eligible nonbasic variable by index.
        let mut entering = None;
        for j in 0..self.n + self.m {
            if self.basic_pos[j].is_some() || self.lower[j] == self.upper[j] {
                continue;
            }
            let d =
                self.cost(phase, j) - (0..self.m).map(|i| pi[i] * self.cols.get(i, j)).sum::<T>();
            let at_lower = self.x[j] == self.lower[j];
            let at_upper = self.x[j] == self.upper[j];
            let dir = if d < -self.opt_tol && !at_upper {
                1
            } else if d > self.opt_tol && !at_lower {
                -1
            } else {
                0
            };
            if dir != 0 {
                entering = Some((j, dir));
                break;
            }
        }
        let Some((j, dir)) = entering else {
            return Ok(Step::Optimal);
        };
        let dirt = if dir > 0 { T::one() } else { -T::one() };

        let col: Vec<T> = (0..self.m).map(|i| self.cols.get(i, j)).collect();
        let w = lu_factor(&b_mat)
            .map_err(|_| LpError::SingularBasis)?
            .solve(&col)
            .map_err(|_| LpError::SingularBasis)?;

        // Ratio test; ties broken by the smallest leaving variable index.
        let mut best: Option<(T, usize, bool)> = None; // (step, basis position, leaves at upper)
        for k in 0..self.m {
            let rate = -dirt * w[k];
            let bj = self.basis[k];
            let (limit, to_upper) = if rate < -self.piv_tol && self.lower[bj].is_finite() {
                (max(T::zero(), (self.x[bj] - self.lower[bj]) / -rate), false)
            } else if rate > self.piv_tol && self.upper[bj].is_finite() {
                (max(T::zero(), (self.upper[bj] - self.x[bj]) / rate), true)
            } else {
                continue;
            };
            let better = match best {
                None => true,
                Some((t, pos, _)) => limit < t || (limit == t && bj < self.basis[pos]),
            };
            if better {
                best = Some((limit, k, to_upper));
            }
        }
        let flip = if dir > 0 {
            self.upper[j] - self.x[j]
        } else {
            self.x[j] - self.lower[j]
        };
        let flip = if flip.is_finite() { Some(flip) } else { None };

        match (best, flip) {
            (None, None) => Ok(Step::Unbounded),
            (Some((t, _, _)), Some(f)) if f <= t => {
                self.move_nonbasic(j, dirt, f, &w);
                self.x[j] = if dir > 0 {
                    self.upper[j]
                } else {
                    self.lower[j]
                };
                Ok(Step::Moved)
            }
            (None, Some(f)) => {
                self.move_nonbasic(j, dirt, f, &w);
                self.x[j] = if dir > 0 {
                    self.upper[j]
                } else {
                    self.lower[j]
                };
                Ok(Step::Moved)
            }
            (Some((t, k, to_upper)), _) => {
                self.move_nonbasic(j, dirt, t, &w);
                let leaving = self.basis[k];
                self.x[leaving] = if to_upper {
                    self.upper[leaving]
                } else {
                    self.lower[leaving]
                };
                self.basic_pos[leaving] = None;
                self.basis[k] = j;
                self.basic_pos[j] = Some(k);
                Ok(Step::Moved)
            }
        }
    }

    fn move_nonbasic(&mut self, j: usize, dirt: T, t: T, w: &Vector<T>) {
        self.x[j] += dirt * t;
        for k in 0..self.m {
            let bj = self.basis[k];
            self.x[bj] -= dirt * t * w[k];
        }
    }

    fn run(&mut self, phase: Phase) -> Result<Option<LpStatus>, LpError> {
        loop {
            if self.iterations >= self.max_iters {
                return Ok(Some(LpStatus::IterationLimit));
            }
            self.iterations += 1;
            match self.step(phase)? {
                Step::Optimal => return Ok(None),
                Step::Unbounded => return Ok(Some(LpStatus::Unbounded)),
                Step::Moved => {}
            }
        }
    }
}

/// Solves a bounded-variable LP with a two-phase primal simplex using
/// Bland's lowest-index rule for both pricing and ratio-test ties.
///
/// Free variables are kept as nonbasic at zero until they enter. Hitting
/// `max_iters` yields [`LpStatus::IterationLimit`] rather than an error.
pub fn simplex_solve<T: Real>(
    lp: &StandardLp<T>,
    max_iters: usize,
) -> Result<LpSolution<T>, LpError> {
    let mut s = Simplex::new(lp, max_iters);
    let (n, m) = (s.n, s.m);
    let finish = |s: &Simplex<T>, status, duals: Vec<T>| LpSolution {
        x: s.x[..n].to_vec(),
        objective: (0..n).map(|j| lp.cost[j] * s.x[j]).sum(),
        status,
        duals,
        iterations: s.iterations,
    };

    if let Some(status) = s.run(Phase::One)? {
        return Ok(finish(&s, status, vec![T::zero(); m]));
    }
    let infeas: T = s.x[n..].iter().copied().sum();
    let scale = T::one() + lp.b.iter().fold(T::zero(), |a, v| max(a, v.abs()));
    if infeas > T::lit(1e-9) * scale {
        return Ok(finish(&s, LpStatus::Infeasible, vec![T::zero(); m]));
    }
    for j in n..n + m {
        s.upper[j] = T::zero();
        if s.basic_pos[j].is_none() {
            s.x[j] = T::zero();
        }
    }
    let status = s.run(Phase::Two)?.unwrap_or(LpStatus::Optimal);
    let b_mat = s.basis_matrix();
    s.refresh_basic(&b_mat)?;
    // Snap basic values that drifted marginally past a bound.
    for &bj in &s.basis {
        if bj < n {
            s.x[bj] = min(max(s.x[bj], lp.lower[bj]), lp.upper[bj]);
        }
    }
    let duals = s.duals(Phase::Two, &b_mat)?;
    Ok(finish(&s, status, duals))
}

/// Parameters of the multiplier-based identifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpLpecParams<T> {
    /// Box bound on `z`.
    pub m_box: T,
    /// Threshold scale.
    pub beta: T,
    /// Threshold exponent in `(0, 1)`.
    pub sigma: T,
}

impl<T: Real> LpLpecParams<T> {
    pub fn new(m_box: T, beta: T, sigma: T) -> Result<Self, LpError> {
        if !(m_box > T::zero() && m_box.is_finite()) {
            return Err(LpError::Params(format!("M must be positive, got {m_box}")));
        }
        if !(beta > T::zero() && beta.is_finite()) {
            return Err(LpError::Params(format!(
                "beta must be positive, got {beta}"
            )));
        }
        if !(sigma > T::zero() && sigma < T::one()) {
            return Err(LpError::Params(format!(
                "sigma must lie in (0, 1), got {sigma}"
            )));
        }
        Ok(Self { m_box, beta, sigma })
    }
}

impl<T: Real> Default for LpLpecParams<T> {
    /// `M = 10⁸`, `β = 0.7071`, `σ = 0.7`.
    fn default() -> Self {
        Self {
            m_box: T::lit(1e8),
            beta: T::lit(0.7071),
            sigma: T::lit(0.7),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpLpecResult<T> {
    pub multipliers: MultiplierPair<T>,
    pub rho_tilde: T,
    pub rho_bar_tilde: T,
    /// `(β·ρ̄)^σ`; constraints with `c_i ≥ −threshold` are estimated active.
    pub threshold: T,
    /// Optimal LP value, i.e. ρ without its constant part.
    pub lp_objective: T,
    pub active_estimate: ActiveSet,
}

/// Builds the LP whose solution minimizes ρ over `y` free, `0 ≤ z ≤ M`.
///
/// Variable order is `[y (p), z (q), r (n), s (n)]`. The constant terms
/// `‖e‖₁ + Σ_{c_i≥0} c_i` of ρ are left out.
pub fn assemble_lp_lpec<T: Real>(ev: &Evaluation<T>, params: &LpLpecParams<T>) -> StandardLp<T> {
    let Dims { n, p, q } = ev.dims();
    let nvar = p + q + 2 * n;
    let mut cost = vec![T::zero(); nvar];
    let mut lower = vec![T::zero(); nvar];
    let mut upper = vec![T::infinity(); nvar];
    for j in 0..p {
        lower[j] = T::neg_infinity();
    }
    for i in 0..q {
        upper[p + i] = params.m_box;
        if ev.c_val[i] < T::zero() {
            cost[p + i] = -ev.c_val[i];
        }
    }
    for c in cost.iter_mut().skip(p + q) {
        *c = T::one();
    }
    let b = ev.grad_f.iter().map(|g| -*g).collect();
    StandardLp {
        cost,
        a: kkt::stationarity_matrix(ev),
        b,
        lower,
        upper,
    }
}

/// `‖e‖₁ + Σ_{c_i≥0} c_i`, the part of ρ not represented in the LP.
pub fn lp_lpec_constant<T: Real>(ev: &Evaluation<T>) -> T {
    ev.e_val.norm1() + kkt::violated_sum(&ev.c_val)
}

pub const LP_MAX_ITERS: usize = 10_000;

/// Multiplier-based active-set estimate at the evaluation point.
pub fn identify_lp<T: Real>(
    ev: &Evaluation<T>,
    params: &LpLpecParams<T>,
) -> Result<LpLpecResult<T>, LpError> {
    let Dims { p, q, .. } = ev.dims();
    let lp = assemble_lp_lpec(ev, params);
    let sol = simplex_solve(&lp, LP_MAX_ITERS)?;
    if sol.status != LpStatus::Optimal {
        return Err(LpError::IdentificationFailed(sol.status));
    }
    let y = Vector::from_vec_unchecked(sol.x[..p].to_vec());
    let z = Vector::from_vec_unchecked(
        sol.x[p..p + q]
            .iter()
            .map(|v| min(max(*v, T::zero()), params.m_box))
            .collect(),
    );
    let multipliers = MultiplierPair::new(y, z);
    let rho_tilde = kkt::rho(ev, &multipliers)?;
    let rho_bar_tilde = kkt::rho_bar(ev, &multipliers)?;
    let threshold = if rho_bar_tilde > T::zero() {
        (params.beta * rho_bar_tilde).powf(params.sigma)
    } else {
        T::zero()
    };
    let active_estimate = ActiveSet::new(q, (0..q).filter(|&i| ev.c_val[i] >= -threshold))?;
    Ok(LpLpecResult {
        multipliers,
        rho_tilde,
        rho_bar_tilde,
        threshold,
        lp_objective: sol.objective,
        active_estimate,
    })
}
