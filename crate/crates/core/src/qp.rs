//! Primal-step active-set identification.
//!
//! The penalized step problem
//!
//! ```text
//! min  ∇fᵀd + ν(𝟙ᵀr + 𝟙ᵀs + 𝟙ᵀt) + ½θ‖d‖²
//! s.t. e + ∇eᵀd = r − s,   c + ∇cᵀd ≤ t,   r, s, t ≥ 0
//! ```
//!
//! is solved through its box-constrained dual
//!
//! ```text
//! max  eᵀα + cᵀβ − (2θ)⁻¹‖∇f + ∇e·α + ∇c·β‖²,   −ν ≤ α ≤ ν,  0 ≤ β ≤ ν
//! ```
//!
//! by spectral projected gradient. Constraints whose linearization is
//! nonnegative at the recovered step form the estimate.

use thiserror::Error;

use crate::kkt::{ActiveSet, KktError};
use crate::lp::{simplex_solve, LpError, LpStatus, StandardLp, LP_MAX_ITERS};
use crate::numerics::{lu_factor, Matrix, Vector};
use crate::problem::{Dims, Evaluation};
use crate::scalar::{max, min, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("invalid QP parameter: {0}")]
    Params(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("enumeration over q = {q} constraints exceeds the limit {limit}")]
    EnumerationLimit { q: usize, limit: usize },
    #[error("linearized constraints are infeasible")]
    Infeasible,
    #[error("no active subset satisfies the optimality conditions")]
    NoAcceptedSubset,
    #[error("reduced KKT matrix is singular (constraint gradients are rank deficient)")]
    RankDeficient,
    #[error("dual solve stopped at iteration limit with gap {gap:e}")]
    Inexact { gap: f64 },
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Kkt(#[from] KktError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpParams<T> {
    /// Proximal weight `θ > 0`.
    pub theta: T,
    /// Penalty `ν > 0`; also the dual box half-width.
    pub nu: T,
    /// Duality-gap target.
    pub gap_tol: T,
    pub max_dual_iters: usize,
    /// Band used by the estimate: `c_i + ∇c_iᵀd ≥ −activity_tol`.
    pub activity_tol: T,
}

impl<T: Real> QpParams<T> {
    pub fn new(theta: T, nu: T) -> Result<Self, QpError> {
        Self {
            theta,
            nu,
            ..Self::default()
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self, QpError> {
        if !(self.theta > T::zero() && self.theta.is_finite()) {
            return Err(QpError::Params(format!(
                "theta must be positive, got {}",
                self.theta
            )));
        }
        if !(self.nu > T::zero() && self.nu.is_finite()) {
            return Err(QpError::Params(format!(
                "nu must be positive, got {}",
                self.nu
            )));
        }
        if !(self.gap_tol > T::zero()) {
            return Err(QpError::Params(format!(
                "gap tolerance must be positive, got {}",
                self.gap_tol
            )));
        }
        if !(self.activity_tol >= T::zero()) {
            return Err(QpError::Params(format!(
                "activity tolerance must be nonnegative, got {}",
                self.activity_tol
            )));
        }
        Ok(self)
    }
}

impl<T: Real> Default for QpParams<T> {
    /// `θ = 5`, `ν = 100`, gap target and activity band `10⁻⁸`.
    fn default() -> Self {
        Self {
            theta: T::lit(5.0),
            nu: T::lit(100.0),
            gap_tol: T::lit(1e-8),
            max_dual_iters: 5_000,
            activity_tol: T::lit(1e-8),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpResult<T> {
    pub d: Vector<T>,
    pub r: Vector<T>,
    pub s: Vector<T>,
    pub t: Vector<T>,
    pub alpha: Vector<T>,
    pub beta: Vector<T>,
    pub primal_obj: T,
    pub dual_obj: T,
    pub gap: T,
    pub active_estimate: ActiveSet,
    /// Whether `gap ≤ gap_tol` was reached.
    pub converged: bool,
    pub iterations: usize,
}

/// Dual data with `λ = [α; β]`, `J = [∇e ∇c]`, `h = [e; c]`.
struct Dual<T> {
    g: Vec<T>,
    j: Matrix<T>,
    h: Vec<T>,
    lo: Vec<T>,
    up: Vec<T>,
    theta: T,
}

impl<T: Real> Dual<T> {
    fn new(ev: &Evaluation<T>, theta: T, nu: T) -> Self {
        let Dims { n, p, q } = ev.dims();
        let j = Matrix::from_fn(n, p + q, |i, k| {
            if k < p {
                ev.jac_e.get(i, k)
            } else {
                ev.jac_c.get(i, k - p)
            }
        });
        let h = ev.e_val.iter().chain(ev.c_val.iter()).copied().collect();
        let mut lo = vec![-nu; p];
        lo.extend(std::iter::repeat_n(T::zero(), q));
        Self {
            g: ev.grad_f.as_slice().to_vec(),
            j,
            h,
            lo,
            up: vec![nu; p + q],
            theta,
        }
    }

    fn m(&self) -> usize {
        self.h.len()
    }

    /// `d = −θ⁻¹(g + Jλ)`
    fn step(&self, lambda: &[T]) -> Vec<T> {
        let jl = self.j.mul_vec(lambda);
        self.g
            .iter()
            .zip(jl.iter())
            .map(|(g, v)| -(*g + *v) / self.theta)
            .collect()
    }

    /// Dual gradient `h + Jᵀd`, i.e. the linearized constraint values.
    fn linearized(&self, d: &[T]) -> Vec<T> {
        let jd = self.j.tr_mul_vec(d);
        self.h.iter().zip(jd.iter()).map(|(h, v)| *h + *v).collect()
    }

    fn objective(&self, lambda: &[T], d: &[T]) -> T {
        let hl: T = self.h.iter().zip(lambda).map(|(a, b)| *a * *b).sum();
        let dd: T = d.iter().map(|v| *v * *v).sum();
        hl - T::lit(0.5) * self.theta * dd
    }

    fn project(&self, lambda: &mut [T]) {
        for (i, l) in lambda.iter_mut().enumerate() {
            *l = min(max(*l, self.lo[i]), self.up[i]);
        }
    }

    /// Solves the dual restricted to a face: variables outside `free` are
    /// held at their current values.
    fn face_solve(&self, lambda: &[T], free: &[usize]) -> Option<Vec<T>> {
        let n = self.g.len();
        let cols = independent_columns(&self.j, free);
        let k = cols.len();
        let held: Vec<T> = (0..self.m())
            .map(|i| {
                if cols.contains(&i) {
                    T::zero()
                } else {
                    lambda[i]
                }
            })
            .collect();
        let jh = self.j.mul_vec(&held);
        let mut kmat = Matrix::zeros(n + k, n + k);
        for i in 0..n {
            kmat.set(i, i, self.theta);
            for (c, &col) in cols.iter().enumerate() {
                kmat.set(i, n + c, self.j.get(i, col));
                kmat.set(n + c, i, self.j.get(i, col));
            }
        }
        let mut rhs: Vec<T> = (0..n).map(|i| -(self.g[i] + jh[i])).collect();
        rhs.extend(cols.iter().map(|&c| -self.h[c]));
        let lu = lu_factor(&kmat).ok()?;
        let sol = lu.solve(&rhs).ok()?;
        let mut out = lambda.to_vec();
        for (c, &col) in cols.iter().enumerate() {
            out[col] = sol[n + c];
        }
        self.project(&mut out);
        Some(out)
    }

    /// Guesses the optimal face at several bound tolerances and keeps the
    /// best improving face solution.
    fn polish(&self, lambda: &[T], nu: T) -> Option<Vec<T>> {
        let d = self.step(lambda);
        let u = self.linearized(&d);
        let mut best_val = self.objective(lambda, &d);
        let mut best = None;
        for tau in [0.0, 1e-9, 1e-6, 1e-3] {
            let band = T::lit(tau) * (T::one() + nu);
            let free: Vec<usize> = (0..self.m())
                .filter(|&i| {
                    let near_lo = lambda[i] - self.lo[i] <= band;
                    let near_up = self.up[i] - lambda[i] <= band;
                    !((near_lo && u[i] <= T::zero()) || (near_up && u[i] >= T::zero()))
                })
                .collect();
            let mut start = lambda.to_vec();
            for i in 0..self.m() {
                if !free.contains(&i) {
                    start[i] = if lambda[i] - self.lo[i] <= band {
                        self.lo[i]
                    } else {
                        self.up[i]
                    };
                }
            }
            if let Some(cand) = self.face_solve(&start, &free) {
                let val = self.objective(&cand, &self.step(&cand));
                if val > best_val {
                    best_val = val;
                    best = Some(cand);
                }
            }
        }
        best
    }
}

/// Greedy subset of `candidates` whose columns of `a` are linearly
/// independent (modified Gram–Schmidt with a relative drop tolerance).
fn independent_columns<T: Real>(a: &Matrix<T>, candidates: &[usize]) -> Vec<usize> {
    let mut basis: Vec<Vec<T>> = Vec::new();
    let mut kept = Vec::new();
    for &c in candidates {
        let col = a.column(c).into_vec();
        let norm0 = col.iter().map(|v| *v * *v).sum::<T>().sqrt();
        if norm0 == T::zero() {
            continue;
        }
        let mut w = col;
        for b in &basis {
            let proj: T = w.iter().zip(b).map(|(x, y)| *x * *y).sum();
            for (x, y) in w.iter_mut().zip(b) {
                *x -= proj * *y;
            }
        }
        let norm = w.iter().map(|v| *v * *v).sum::<T>().sqrt();
        if norm > T::lit(1e-9) * norm0 {
            basis.push(w.into_iter().map(|v| v / norm).collect());
            kept.push(c);
        }
    }
    kept
}

const POLISH_EVERY: usize = 10;

/// Solves the penalized step problem through its dual by projected gradient
/// ascent with Barzilai–Borwein steps and an exact line search along the
/// projected direction, which keeps the dual objective monotone.
///
/// Every few iterations the current bound pattern is used to solve the dual
/// on that face directly; this lets the solve terminate with a step that is
/// exact to roundoff instead of merely gap-accurate. Reaching the iteration
/// limit is not an error: the result carries `converged = false`.
pub fn solve_penalized_qp<T: Real>(
    ev: &Evaluation<T>,
    params: &QpParams<T>,
) -> Result<QpResult<T>, QpError> {
    let params = params.validated()?;
    let dual = Dual::new(ev, params.theta, params.nu);
    let m = dual.m();
    let mut lambda = vec![T::zero(); m];
    let mut grad = dual.linearized(&dual.step(&lambda));
    let jn = dual.j.data().iter().map(|v| *v * *v).sum::<T>();
    let mut alpha_bb = if jn > T::zero() {
        params.theta / jn
    } else {
        T::one()
    };
    let (amin, amax) = (T::lit(1e-12), T::lit(1e12));

    let mut iterations = 0;
    let mut converged = gap_of(&dual, &lambda, params.nu) <= params.gap_tol;
    while !converged && iterations < params.max_dual_iters {
        iterations += 1;
        let mut trial: Vec<T> = lambda
            .iter()
            .zip(&grad)
            .map(|(l, g)| *l + alpha_bb * *g)
            .collect();
        dual.project(&mut trial);
        let dir: Vec<T> = trial.iter().zip(&lambda).map(|(a, b)| *a - *b).collect();
        let slope: T = dir.iter().zip(&grad).map(|(a, b)| *a * *b).sum();
        if slope <= T::zero() {
            // Projected gradient vanished: the iterate is optimal to roundoff.
            if let Some(p) = dual.polish(&lambda, params.nu) {
                lambda = p;
            }
            converged = gap_of(&dual, &lambda, params.nu) <= params.gap_tol;
            break;
        }
        let jd = dual.j.mul_vec(&dir);
        let curv = jd.iter().map(|v| *v * *v).sum::<T>() / params.theta;
        let t = if curv > T::zero() {
            min(T::one(), slope / curv)
        } else {
            T::one()
        };
        let mut next: Vec<T> = lambda.iter().zip(&dir).map(|(l, d)| *l + t * *d).collect();
        dual.project(&mut next);
        let next_grad = dual.linearized(&dual.step(&next));

        let sk: Vec<T> = next.iter().zip(&lambda).map(|(a, b)| *a - *b).collect();
        let ss: T = sk.iter().map(|v| *v * *v).sum();
        let sy: T = sk
            .iter()
            .zip(next_grad.iter().zip(&grad))
            .map(|(s, (a, b))| *s * (*b - *a))
            .sum();
        alpha_bb = if sy > T::zero() {
            min(amax, max(amin, ss / sy))
        } else {
            amax
        };
        lambda = next;
        grad = next_grad;

        if iterations % POLISH_EVERY == 0 {
            if let Some(p) = dual.polish(&lambda, params.nu) {
                lambda = p;
                grad = dual.linearized(&dual.step(&lambda));
            }
        }
        converged = gap_of(&dual, &lambda, params.nu) <= params.gap_tol;
    }
    if !converged {
        if let Some(p) = dual.polish(&lambda, params.nu) {
            lambda = p;
            converged = gap_of(&dual, &lambda, params.nu) <= params.gap_tol;
        }
    }
    Ok(assemble_result(
        ev, &dual, lambda, &params, converged, iterations,
    ))
}

fn primal_objective<T: Real>(dual: &Dual<T>, d: &[T], u: &[T], p: usize, nu: T) -> T {
    let gd: T = dual.g.iter().zip(d).map(|(a, b)| *a * *b).sum();
    let dd: T = d.iter().map(|v| *v * *v).sum();
    let pen: T = u[..p].iter().map(|v| v.abs()).sum::<T>()
        + u[p..].iter().map(|v| max(*v, T::zero())).sum::<T>();
    gd + nu * pen + T::lit(0.5) * dual.theta * dd
}

fn gap_of<T: Real>(dual: &Dual<T>, lambda: &[T], nu: T) -> T {
    let p = dual.lo.iter().take_while(|v| **v < T::zero()).count();
    let d = dual.step(lambda);
    let u = dual.linearized(&d);
    primal_objective(dual, &d, &u, p, nu) - dual.objective(lambda, &d)
}

fn assemble_result<T: Real>(
    ev: &Evaluation<T>,
    dual: &Dual<T>,
    lambda: Vec<T>,
    params: &QpParams<T>,
    converged: bool,
    iterations: usize,
) -> QpResult<T> {
    let Dims { p, q, .. } = ev.dims();
    let d = dual.step(&lambda);
    let u = dual.linearized(&d);
    let primal_obj = primal_objective(dual, &d, &u, p, params.nu);
    let dual_obj = dual.objective(&lambda, &d);
    let r = Vector::from_vec_unchecked(u[..p].iter().map(|v| max(*v, T::zero())).collect());
    let s = Vector::from_vec_unchecked(u[..p].iter().map(|v| max(-*v, T::zero())).collect());
    let t = Vector::from_vec_unchecked(u[p..].iter().map(|v| max(*v, T::zero())).collect());
    let active_estimate = ActiveSet::new(q, (0..q).filter(|&i| u[p + i] >= -params.activity_tol))
        .expect("indices within range");
    QpResult {
        d: Vector::from_vec_unchecked(d),
        r,
        s,
        t,
        alpha: Vector::from_vec_unchecked(lambda[..p].to_vec()),
        beta: Vector::from_vec_unchecked(lambda[p..].to_vec()),
        primal_obj,
        dual_obj,
        gap: primal_obj - dual_obj,
        active_estimate,
        converged,
        iterations,
    }
}

/// Primal-step estimate `{i : c_i + ∇c_iᵀd ≥ −activity_tol}`. A dual solve
/// that misses its gap target is reported as [`QpError::Inexact`].
pub fn identify_qp<T: Real>(
    ev: &Evaluation<T>,
    params: &QpParams<T>,
) -> Result<QpResult<T>, QpError> {
    let res = solve_penalized_qp(ev, params)?;
    if !res.converged {
        return Err(QpError::Inexact {
            gap: res.gap.to_f64_lossy(),
        });
    }
    Ok(res)
}

pub const QP_ENUMERATION_LIMIT: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct QpOracleSolution<T> {
    pub d: Vector<T>,
    pub alpha: Vector<T>,
    pub beta: Vector<T>,
    pub objective: T,
}

/// Solves `min ∇fᵀd + ½θ‖d‖² s.t. e + ∇eᵀd = 0, c + ∇cᵀd ≤ 0` exactly by
/// enumerating active subsets. Feasibility is established first with an LP.
pub fn enumerate_qp_oracle<T: Real>(
    ev: &Evaluation<T>,
    theta: T,
) -> Result<QpOracleSolution<T>, QpError> {
    let Dims { n, p, q } = ev.dims();
    if q > QP_ENUMERATION_LIMIT {
        return Err(QpError::EnumerationLimit {
            q,
            limit: QP_ENUMERATION_LIMIT,
        });
    }
    if !(theta > T::zero()) {
        return Err(QpError::Params(format!(
            "theta must be positive, got {theta}"
        )));
    }
    if !linearization_feasible(ev)? {
        return Err(QpError::Infeasible);
    }
    let scale = T::one() + ev.c_val.norm_inf() + ev.e_val.norm_inf();
    let feas_tol = T::lit(1e-9) * scale;
    let mut best: Option<QpOracleSolution<T>> = None;
    for mask in 0u32..(1u32 << q) {
        let set: Vec<usize> = (0..q).filter(|i| mask & (1 << i) != 0).collect();
        if p + set.len() > n {
            continue;
        }
        let Ok((d, alpha, beta_a)) = equality_qp(ev, &set, theta) else {
            continue;
        };
        if beta_a.iter().any(|b| *b < T::lit(-1e-10)) {
            continue;
        }
        let lin = ev.c_val.add(&ev.jac_c.tr_mul_vec(&d));
        if (0..q).any(|i| !set.contains(&i) && lin[i] > feas_tol) {
            continue;
        }
        let mut beta = Vector::zeros(q);
        for (k, &i) in set.iter().enumerate() {
            beta[i] = max(beta_a[k], T::zero());
        }
        let objective = ev.grad_f.dot(&d) + T::lit(0.5) * theta * d.dot(&d);
        if best.as_ref().is_none_or(|b| objective < b.objective) {
            best = Some(QpOracleSolution {
                d,
                alpha,
                beta,
                objective,
            });
        }
    }
    best.ok_or(QpError::NoAcceptedSubset)
}

fn linearization_feasible<T: Real>(ev: &Evaluation<T>) -> Result<bool, QpError> {
    let Dims { n, p, q } = ev.dims();
    if p + q == 0 {
        return Ok(true);
    }
    // Variables [d (n, free), slack (q, ≥ 0)].
    let a = Matrix::from_fn(p + q, n + q, |i, j| {
        if j < n {
            if i < p {
                ev.jac_e.get(j, i)
            } else {
                ev.jac_c.get(j, i - p)
            }
        } else if i >= p && j - n == i - p {
            T::one()
        } else {
            T::zero()
        }
    });
    let b = ev
        .e_val
        .iter()
        .chain(ev.c_val.iter())
        .map(|v| -*v)
        .collect();
    let mut lower = vec![T::neg_infinity(); n];
    lower.extend(std::iter::repeat_n(T::zero(), q));
    let lp = StandardLp::new(
        vec![T::zero(); n + q],
        a,
        b,
        lower,
        vec![T::infinity(); n + q],
    )?;
    let sol = simplex_solve(&lp, LP_MAX_ITERS)?;
    match sol.status {
        LpStatus::Optimal => Ok(true),
        LpStatus::Infeasible => Ok(false),
        other => Err(QpError::Lp(LpError::IdentificationFailed(other))),
    }
}

/// `(d, α, β_A)` of an equality-constrained step.
type EqualityStep<T> = (Vector<T>, Vector<T>, Vector<T>);

/// Solves `[θI J; Jᵀ 0][d; λ] = −[∇f; h]` with `J = [∇e ∇c_A]`.
fn equality_qp<T: Real>(
    ev: &Evaluation<T>,
    active: &[usize],
    theta: T,
) -> Result<EqualityStep<T>, QpError> {
    let Dims { n, p, .. } = ev.dims();
    let k = p + active.len();
    let col = |i: usize, c: usize| {
        if c < p {
            ev.jac_e.get(i, c)
        } else {
            ev.jac_c.get(i, active[c - p])
        }
    };
    let kmat = Matrix::from_fn(n + k, n + k, |i, j| match (i < n, j < n) {
        (true, true) => {
            if i == j {
                theta
            } else {
                T::zero()
            }
        }
        (true, false) => col(i, j - n),
        (false, true) => col(j, i - n),
        (false, false) => T::zero(),
    });
    let mut rhs: Vec<T> = ev.grad_f.iter().map(|v| -*v).collect();
    rhs.extend(ev.e_val.iter().map(|v| -*v));
    rhs.extend(active.iter().map(|&i| -ev.c_val[i]));
    let lu = lu_factor(&kmat).map_err(|_| QpError::RankDeficient)?;
    let sol = lu
        .solve(&rhs)
        .map_err(|_| QpError::RankDeficient)?
        .into_vec();
    Ok((
        Vector::from_vec_unchecked(sol[..n].to_vec()),
        Vector::from_vec_unchecked(sol[n..n + p].to_vec()),
        Vector::from_vec_unchecked(sol[n + p..].to_vec()),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedKktSolution<T> {
    pub d: Vector<T>,
    pub alpha: Vector<T>,
    /// Multipliers of the constraints in the prescribed set, in index order.
    pub beta_active: Vector<T>,
    /// `c_i + ∇c_iᵀd < 0` for every `i` outside the set.
    pub strictly_inactive: bool,
    /// Every multiplier in `beta_active` is positive.
    pub positive_multipliers: bool,
    /// `‖K·sol − rhs‖∞` of the solved system.
    pub residual: T,
}

impl<T: Real> ReducedKktSolution<T> {
    /// Full-length `β` with zeros outside the prescribed set.
    pub fn beta_full(&self, active: &ActiveSet) -> Vector<T> {
        reduced_full(&self.beta_active, active)
    }
}

/// Solves the step system with a prescribed active set directly:
/// `θd + ∇f + ∇e·α + ∇c_A·β_A = 0`, `e + ∇eᵀd = 0`, `c_A + ∇c_Aᵀd = 0`.
pub fn solve_reduced_kkt<T: Real>(
    ev: &Evaluation<T>,
    active: &ActiveSet,
    theta: T,
) -> Result<ReducedKktSolution<T>, QpError> {
    let Dims { q, .. } = ev.dims();
    if active.q() != q {
        return Err(QpError::Dimension(format!(
            "active set over {} constraints, evaluation has {q}",
            active.q()
        )));
    }
    if !(theta > T::zero()) {
        return Err(QpError::Params(format!(
            "theta must be positive, got {theta}"
        )));
    }
    let (d, alpha, beta_active) = equality_qp(ev, active.indices(), theta)?;

    let jd_e = ev.jac_e.tr_mul_vec(&d);
    let jd_c = ev.jac_c.tr_mul_vec(&d);
    let stat = ev
        .lagrangian_grad(&alpha, &reduced_full(&beta_active, active))
        .add(&d.scale(theta));
    let mut residual = stat.norm_inf();
    for (e, v) in ev.e_val.iter().zip(jd_e.iter()) {
        residual = max(residual, (*e + *v).abs());
    }
    for &i in active.indices() {
        residual = max(residual, (ev.c_val[i] + jd_c[i]).abs());
    }
    let strictly_inactive = active
        .complement()
        .iter()
        .all(|&i| ev.c_val[i] + jd_c[i] < T::zero());
    let positive_multipliers = beta_active.iter().all(|b| *b > T::zero());
    Ok(ReducedKktSolution {
        d,
        alpha,
        beta_active,
        strictly_inactive,
        positive_multipliers,
        residual,
    })
}

fn reduced_full<T: Real>(beta_active: &Vector<T>, active: &ActiveSet) -> Vector<T> {
    let mut beta = Vector::zeros(active.q());
    for (k, &i) in active.indices().iter().enumerate() {
        beta[i] = beta_active[k];
    }
    beta
}
