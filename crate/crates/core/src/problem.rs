//! Problem oracles, exact and noise-corrupted evaluations, and the built-in
//! two-dimensional test problems.
//!
//! A problem is `min f(x) s.t. e(x) = 0, c(x) ≤ 0` with `f: Rⁿ→R`,
//! `e: Rⁿ→Rᵖ`, `c: Rⁿ→R^q`. Jacobians are stored with one column per
//! constraint: `∇e(x)` is `n×p` and `∇c(x)` is `n×q`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::kkt::ActiveSet;
use crate::numerics::{lu_factor, Matrix, NumericsError, Vector};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("oracle produced a non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid noise level {0}")]
    NoiseLevel(f64),
    #[error("unknown problem `{0}` (expected f1 or f2)")]
    UnknownProblem(String),
    #[error("penalty parameter must be positive")]
    Penalty,
    #[error("reference solve failed: {0}")]
    Reference(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Problem sizes: decision variables, equalities, inequalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub n: usize,
    pub p: usize,
    pub q: usize,
}

/// First-order oracle for `min f(x) s.t. e(x) = 0, c(x) ≤ 0`.
pub trait ProblemOracle<T: Real>: Send + Sync {
    fn dims(&self) -> Dims;

    fn objective(&self, x: &[T]) -> T;

    fn objective_grad(&self, x: &[T]) -> Vec<T>;

    fn equalities(&self, _x: &[T]) -> Vec<T> {
        Vec::new()
    }

    /// `n×p`, column `j` is `∇e_j(x)`.
    fn equality_jacobian(&self, _x: &[T]) -> Matrix<T> {
        Matrix::zeros(self.dims().n, 0)
    }

    fn inequalities(&self, x: &[T]) -> Vec<T>;

    /// `n×q`, column `i` is `∇c_i(x)`.
    fn inequality_jacobian(&self, x: &[T]) -> Matrix<T>;
}

/// Worst-case norm distance between the reported and exact quantities.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorBounds<T> {
    pub eps_f: T,
    pub eps_e: T,
    pub eps_c: T,
    pub eps_grad_f: T,
    pub eps_grad_e: T,
    pub eps_grad_c: T,
}

impl<T: Real> ErrorBounds<T> {
    pub fn zero() -> Self {
        Self {
            eps_f: T::zero(),
            eps_e: T::zero(),
            eps_c: T::zero(),
            eps_grad_f: T::zero(),
            eps_grad_e: T::zero(),
            eps_grad_c: T::zero(),
        }
    }

    /// Bounds implied by independent entrywise noise in `[-ε, ε]`: Euclidean
    /// for vectors, infinity-induced for the Jacobians.
    pub fn from_entrywise(level: T, dims: Dims) -> Self {
        let sqrt = |k: usize| T::lit(k as f64).sqrt();
        Self {
            eps_f: level,
            eps_e: sqrt(dims.p) * level,
            eps_c: sqrt(dims.q) * level,
            eps_grad_f: sqrt(dims.n) * level,
            eps_grad_e: T::lit(dims.p as f64) * level,
            eps_grad_c: T::lit(dims.q as f64) * level,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_array().iter().all(|v| *v == T::zero())
    }

    pub fn as_array(&self) -> [T; 6] {
        [
            self.eps_f,
            self.eps_e,
            self.eps_c,
            self.eps_grad_f,
            self.eps_grad_e,
            self.eps_grad_c,
        ]
    }
}

/// Entrywise uniform noise on `[-level, level]`, reproducible from `seed`.
///
/// Draws come from ChaCha8 seeded with `seed` and are consumed in a fixed
/// order: `f`, `e`, `c`, `∇f`, then `∇e` and `∇c` row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    level: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(level: f64, seed: u64) -> Result<Self, ProblemError> {
        if !(level.is_finite() && level >= 0.0) {
            return Err(ProblemError::NoiseLevel(level));
        }
        Ok(Self { level, seed })
    }

    pub fn level(&self) -> f64 {
        self.level
    }
}

/// A snapshot of function and derivative values at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation<T> {
    pub x: Vector<T>,
    pub f_val: T,
    pub e_val: Vector<T>,
    pub c_val: Vector<T>,
    pub grad_f: Vector<T>,
    pub jac_e: Matrix<T>,
    pub jac_c: Matrix<T>,
    pub bounds: ErrorBounds<T>,
}

impl<T: Real> Evaluation<T> {
    /// Assembles an evaluation from raw parts, checking shapes and finiteness.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        x: Vec<T>,
        f_val: T,
        e_val: Vec<T>,
        c_val: Vec<T>,
        grad_f: Vec<T>,
        jac_e: Matrix<T>,
        jac_c: Matrix<T>,
        bounds: ErrorBounds<T>,
    ) -> Result<Self, ProblemError> {
        let n = x.len();
        let (p, q) = (e_val.len(), c_val.len());
        if grad_f.len() != n {
            return Err(ProblemError::Dimension(format!(
                "∇f has length {}, expected {n}",
                grad_f.len()
            )));
        }
        if (jac_e.rows(), jac_e.cols()) != (n, p) {
            return Err(ProblemError::Dimension(format!(
                "∇e is {}x{}, expected {n}x{p}",
                jac_e.rows(),
                jac_e.cols()
            )));
        }
        if (jac_c.rows(), jac_c.cols()) != (n, q) {
            return Err(ProblemError::Dimension(format!(
                "∇c is {}x{}, expected {n}x{q}",
                jac_c.rows(),
                jac_c.cols()
            )));
        }
        if !f_val.is_finite() {
            return Err(ProblemError::NonFinite("f"));
        }
        if !jac_e.is_finite() {
            return Err(ProblemError::NonFinite("∇e"));
        }
        if !jac_c.is_finite() {
            return Err(ProblemError::NonFinite("∇c"));
        }
        if bounds
            .as_array()
            .iter()
            .any(|b| !(b.is_finite() && *b >= T::zero()))
        {
            return Err(ProblemError::NonFinite("error bounds"));
        }
        let wrap = |v: Vec<T>, what| Vector::new(v).map_err(|_| ProblemError::NonFinite(what));
        Ok(Self {
            x: wrap(x, "x")?,
            f_val,
            e_val: wrap(e_val, "e")?,
            c_val: wrap(c_val, "c")?,
            grad_f: wrap(grad_f, "∇f")?,
            jac_e,
            jac_c,
            bounds,
        })
    }

    pub fn dims(&self) -> Dims {
        Dims {
            n: self.x.len(),
            p: self.e_val.len(),
            q: self.c_val.len(),
        }
    }

    pub fn is_exact(&self) -> bool {
        self.bounds.is_zero()
    }

    /// `∇f + ∇e·y + ∇c·z`
    pub fn lagrangian_grad(&self, y: &[T], z: &[T]) -> Vector<T> {
        let mut g = self.grad_f.clone();
        g.axpy(T::one(), &self.jac_e.mul_vec(y));
        g.axpy(T::one(), &self.jac_c.mul_vec(z));
        g
    }

    pub fn cast<U: Real>(&self) -> Evaluation<U> {
        let b = self.bounds;
        Evaluation {
            x: self.x.cast(),
            f_val: U::lit(self.f_val.to_f64_lossy()),
            e_val: self.e_val.cast(),
            c_val: self.c_val.cast(),
            grad_f: self.grad_f.cast(),
            jac_e: self.jac_e.cast(),
            jac_c: self.jac_c.cast(),
            bounds: ErrorBounds {
                eps_f: U::lit(b.eps_f.to_f64_lossy()),
                eps_e: U::lit(b.eps_e.to_f64_lossy()),
                eps_c: U::lit(b.eps_c.to_f64_lossy()),
                eps_grad_f: U::lit(b.eps_grad_f.to_f64_lossy()),
                eps_grad_e: U::lit(b.eps_grad_e.to_f64_lossy()),
                eps_grad_c: U::lit(b.eps_grad_c.to_f64_lossy()),
            },
        }
    }
}

fn check_point<T: Real>(oracle: &dyn ProblemOracle<T>, x: &[T]) -> Result<Dims, ProblemError> {
    let dims = oracle.dims();
    if x.len() != dims.n {
        return Err(ProblemError::Dimension(format!(
            "x has length {}, expected {}",
            x.len(),
            dims.n
        )));
    }
    Ok(dims)
}

/// Exact values and derivatives at `x`, with all-zero error bounds.
pub fn evaluate_exact<T: Real>(
    oracle: &dyn ProblemOracle<T>,
    x: &[T],
) -> Result<Evaluation<T>, ProblemError> {
    let dims = check_point(oracle, x)?;
    let ev = Evaluation::new(
        x.to_vec(),
        oracle.objective(x),
        oracle.equalities(x),
        oracle.inequalities(x),
        oracle.objective_grad(x),
        oracle.equality_jacobian(x),
        oracle.inequality_jacobian(x),
        ErrorBounds::zero(),
    )?;
    if ev.dims() != dims {
        return Err(ProblemError::Dimension(format!(
            "oracle reported {:?} but produced {:?}",
            dims,
            ev.dims()
        )));
    }
    Ok(ev)
}

/// Exact evaluation perturbed entrywise by uniform noise on `[-ε, ε]`.
///
/// With `ε = 0` the result is bitwise identical to [`evaluate_exact`].
pub fn evaluate_noisy<T: Real>(
    oracle: &dyn ProblemOracle<T>,
    x: &[T],
    spec: &NoiseSpec,
) -> Result<Evaluation<T>, ProblemError> {
    let mut ev = evaluate_exact(oracle, x)?;
    if spec.level == 0.0 {
        return Ok(ev);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let eps = spec.level;
    let mut draw = || T::lit(rng.gen_range(-eps..=eps));
    ev.f_val += draw();
    for v in ev.e_val.as_mut_slice() {
        *v += draw();
    }
    for v in ev.c_val.as_mut_slice() {
        *v += draw();
    }
    for v in ev.grad_f.as_mut_slice() {
        *v += draw();
    }
    for jac in [&mut ev.jac_e, &mut ev.jac_c] {
        for i in 0..jac.rows() {
            for j in 0..jac.cols() {
                let v = jac.get(i, j) + draw();
                jac.set(i, j, v);
            }
        }
    }
    ev.bounds = ErrorBounds::from_entrywise(T::lit(eps), ev.dims());
    Ok(ev)
}

/// `f(x) + (μ/2)(‖e(x)‖² + ‖[c(x)]₊‖²)` and its gradient.
pub fn penalty_objective<T: Real>(
    oracle: &dyn ProblemOracle<T>,
    x: &[T],
    mu: T,
) -> Result<(T, Vector<T>), ProblemError> {
    if !(mu > T::zero()) {
        return Err(ProblemError::Penalty);
    }
    let ev = evaluate_exact(oracle, x)?;
    let half = T::lit(0.5);
    let plus: Vec<T> = ev
        .c_val
        .iter()
        .map(|c| if *c > T::zero() { *c } else { T::zero() })
        .collect();
    let sq = ev.e_val.iter().map(|v| *v * *v).sum::<T>() + plus.iter().map(|v| *v * *v).sum::<T>();
    let value = ev.f_val + half * mu * sq;
    let mut grad = ev.grad_f.clone();
    grad.axpy(mu, &ev.jac_e.mul_vec(&ev.e_val));
    grad.axpy(mu, &ev.jac_c.mul_vec(&plus));
    Ok((value, grad))
}

/// Objective choices for the two-parabola test problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParabolaObjective {
    /// `(x₁ + ½)² + 4(x₂ − ½)²`; one active constraint at the solution.
    F1,
    /// `4(x₁ + ⅗)² + (x₂ − ¼)²`; both constraints active at the solution.
    F2,
}

impl ParabolaObjective {
    pub fn name(self) -> &'static str {
        match self {
            Self::F1 => "f1",
            Self::F2 => "f2",
        }
    }
}

impl std::str::FromStr for ParabolaObjective {
    type Err = ProblemError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f1" => Ok(Self::F1),
            "f2" => Ok(Self::F2),
            other => Err(ProblemError::UnknownProblem(other.to_string())),
        }
    }
}

impl fmt::Display for ParabolaObjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Feasible region between `x₂ ≥ x₁²` and `x₂ ≤ ½ − x₁²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParabolaProblem {
    pub objective: ParabolaObjective,
}

impl<T: Real> ProblemOracle<T> for ParabolaProblem {
    fn dims(&self) -> Dims {
        Dims { n: 2, p: 0, q: 2 }
    }

    fn objective(&self, x: &[T]) -> T {
        let l = T::lit;
        match self.objective {
            ParabolaObjective::F1 => (x[0] + l(0.5)).powi(2) + l(4.0) * (x[1] - l(0.5)).powi(2),
            ParabolaObjective::F2 => l(4.0) * (x[0] + l(0.6)).powi(2) + (x[1] - l(0.25)).powi(2),
        }
    }

    fn objective_grad(&self, x: &[T]) -> Vec<T> {
        let l = T::lit;
        match self.objective {
            ParabolaObjective::F1 => vec![l(2.0) * (x[0] + l(0.5)), l(8.0) * (x[1] - l(0.5))],
            ParabolaObjective::F2 => vec![l(8.0) * (x[0] + l(0.6)), l(2.0) * (x[1] - l(0.25))],
        }
    }

    fn inequalities(&self, x: &[T]) -> Vec<T> {
        let sq = x[0] * x[0];
        vec![sq - x[1], sq + x[1] - T::lit(0.5)]
    }

    fn inequality_jacobian(&self, x: &[T]) -> Matrix<T> {
        let two_x1 = T::lit(2.0) * x[0];
        Matrix::from_fn(2, 2, |i, j| match (i, j) {
            (0, _) => two_x1,
            (1, 0) => -T::one(),
            _ => T::one(),
        })
    }
}

/// A problem together with its known solution, when available.
#[derive(Clone)]
pub struct TestProblem<T> {
    pub name: String,
    pub oracle: Arc<dyn ProblemOracle<T>>,
    pub x_star: Option<Vector<T>>,
    pub a_star: Option<ActiveSet>,
}

impl<T> fmt::Debug for TestProblem<T>
where
    T: fmt::Debug,
{
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestProblem")
            .field("name", &self.name)
            .field("x_star", &self.x_star)
            .field("a_star", &self.a_star)
            .finish_non_exhaustive()
    }
}

/// Activity tolerance used when deriving `a_star` from `x_star`.
pub const REFERENCE_ACTIVE_TOL: f64 = 1e-8;

/// Builds one of the two parabola problems with its minimizer computed by
/// [`reference_minimizer`] and its optimal active set.
pub fn make_parabola_problem<T: Real>(which: ParabolaObjective) -> TestProblem<T> {
    let oracle = ParabolaProblem { objective: which };
    let x_star = reference_minimizer(&oracle, &[(-1.0, 1.0), (-0.5, 1.0)], 201)
        .expect("parabola problems have a unique regular minimizer");
    let c = ProblemOracle::<f64>::inequalities(&oracle, &x_star);
    let a_star = ActiveSet::new(
        c.len(),
        (0..c.len()).filter(|&i| c[i].abs() <= REFERENCE_ACTIVE_TOL),
    )
    .expect("indices in range");
    TestProblem {
        name: which.name().to_string(),
        oracle: Arc::new(oracle),
        x_star: Some(x_star.cast()),
        a_star: Some(a_star),
    }
}

/// Looks up a built-in problem by name (`f1` or `f2`).
pub fn builtin_problem<T: Real>(name: &str) -> Result<TestProblem<T>, ProblemError> {
    Ok(make_parabola_problem(name.parse()?))
}

/// Global minimizer of a small problem by grid search followed by Newton
/// refinement of the KKT system over every candidate active set.
///
/// The grid picks the best point of `f + 10³·violation` on a uniform
/// `resolution^n` lattice over `bounds`. From there, for each subset `A` of
/// the inequalities, Newton's method is applied to
/// `∇f + ∇e·y + ∇c_A·z_A = 0, e = 0, c_A = 0` with a finite-difference
/// Hessian of the Lagrangian. The feasible, dual-feasible root with the
/// lowest objective wins. Intended for `n ≤ 3`, `q ≤ 12`.
pub fn reference_minimizer(
    oracle: &dyn ProblemOracle<f64>,
    bounds: &[(f64, f64)],
    resolution: usize,
) -> Result<Vector<f64>, ProblemError> {
    let Dims { n, p, q } = oracle.dims();
    if bounds.len() != n || resolution < 2 {
        return Err(ProblemError::Reference(
            "grid must cover every coordinate".into(),
        ));
    }
    if q > 12 {
        return Err(ProblemError::Reference(
            "too many inequalities to enumerate".into(),
        ));
    }
    let merit = |x: &[f64]| {
        let viol: f64 = oracle.equalities(x).iter().map(|v| v.abs()).sum::<f64>()
            + oracle
                .inequalities(x)
                .iter()
                .map(|v| v.max(0.0))
                .sum::<f64>();
        oracle.objective(x) + 1e3 * viol
    };
    let total = resolution.pow(n as u32);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut x = vec![0.0; n];
    for idx in 0..total {
        let mut rem = idx;
        for (k, (lo, hi)) in bounds.iter().enumerate() {
            let t = (rem % resolution) as f64 / (resolution - 1) as f64;
            rem /= resolution;
            x[k] = lo + t * (hi - lo);
        }
        let m = merit(&x);
        if best.as_ref().is_none_or(|(bm, _)| m < *bm) {
            best = Some((m, x.clone()));
        }
    }
    let start = best.expect("non-empty grid").1;

    let mut winner: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << q) {
        let active: Vec<usize> = (0..q).filter(|i| mask & (1 << i) != 0).collect();
        if active.len() + p > n {
            continue;
        }
        let Some(xs) = newton_kkt(oracle, &start, &active) else {
            continue;
        };
        let c = oracle.inequalities(&xs);
        if c.iter().any(|v| *v > 1e-10) || oracle.equalities(&xs).iter().any(|v| v.abs() > 1e-10) {
            continue;
        }
        let fx = oracle.objective(&xs);
        if winner.as_ref().is_none_or(|(bf, _)| fx < *bf - 1e-14) {
            winner = Some((fx, xs));
        }
    }
    winner
        .map(|(_, x)| Vector::from_vec_unchecked(x))
        .ok_or_else(|| ProblemError::Reference("no KKT point found".into()))
}

/// Newton's method on the KKT system for a fixed active set. Returns the
/// primal point when the residual vanishes and the multipliers are
/// nonnegative.
fn newton_kkt(
    oracle: &dyn ProblemOracle<f64>,
    start: &[f64],
    active: &[usize],
) -> Option<Vec<f64>> {
    let Dims { n, p, .. } = oracle.dims();
    let m = p + active.len();
    let mut x = start.to_vec();
    let mut mult = vec![0.0; m];
    let lag_grad = |x: &[f64], mult: &[f64]| -> Vec<f64> {
        let mut g = oracle.objective_grad(x);
        let je = oracle.equality_jacobian(x);
        let jc = oracle.inequality_jacobian(x);
        for i in 0..n {
            for j in 0..p {
                g[i] += je.get(i, j) * mult[j];
            }
            for (k, &a) in active.iter().enumerate() {
                g[i] += jc.get(i, a) * mult[p + k];
            }
        }
        g
    };
    for _ in 0..60 {
        let g = lag_grad(&x, &mult);
        let e = oracle.equalities(&x);
        let c = oracle.inequalities(&x);
        let je = oracle.equality_jacobian(&x);
        let jc = oracle.inequality_jacobian(&x);
        let mut rhs: Vec<f64> = g.iter().map(|v| -v).collect();
        rhs.extend(e.iter().map(|v| -v));
        rhs.extend(active.iter().map(|&a| -c[a]));
        let res = rhs.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if res <= 1e-14 {
            break;
        }
        // Hessian of the Lagrangian by central differences of its gradient.
        let h = 1e-5;
        let mut kkt = Matrix::zeros(n + m, n + m);
        for j in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let gp = lag_grad(&xp, &mult);
            let gm = lag_grad(&xm, &mult);
            for i in 0..n {
                kkt.set(i, j, (gp[i] - gm[i]) / (2.0 * h));
            }
        }
        for i in 0..n {
            for j in 0..p {
                kkt.set(i, n + j, je.get(i, j));
                kkt.set(n + j, i, je.get(i, j));
            }
            for (k, &a) in active.iter().enumerate() {
                kkt.set(i, n + p + k, jc.get(i, a));
                kkt.set(n + p + k, i, jc.get(i, a));
            }
        }
        let lu = lu_factor(&kkt).ok()?;
        if lu.is_singular() {
            return None;
        }
        let step = lu.solve(&rhs).ok()?;
        for i in 0..n {
            x[i] += step[i];
        }
        for k in 0..m {
            mult[k] += step[n + k];
        }
        if x.iter().any(|v| !v.is_finite() || v.abs() > 1e6) {
            return None;
        }
    }
    let g = lag_grad(&x, &mult);
    let c = oracle.inequalities(&x);
    let e = oracle.equalities(&x);
    let res = g
        .iter()
        .chain(e.iter())
        .chain(active.iter().map(|&a| &c[a]))
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    if res > 1e-11 || mult[p..].iter().any(|z| *z < -1e-12) {
        return None;
    }
    Some(x)
}
