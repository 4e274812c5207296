//! Seeded property suites for every module.
//!
//! Each suite draws its instances from a ChaCha stream derived from the
//! caller's seed, checks one invariant, and reports the first
//! counterexample it meets. [`run_all`] backs the `verify` subcommand; the
//! acceptance tests call the individual suites with their full case counts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::experiments::{
    derive_seed, grid_coordinate, run_trajectory, EvalMode, TrajectoryConfig,
};
use crate::kkt::{self, ActiveSet, KktError, MultiplierPair};
use crate::lp::{identify_lp, lp_lpec_constant, simplex_solve, LpLpecParams, LpStatus, StandardLp};
use crate::numerics::{lu_factor, perturbation_bound_holds, solve_dense, Matrix, Vector};
use crate::problem::{
    builtin_problem, evaluate_exact, evaluate_noisy, penalty_objective, Dims, ErrorBounds,
    Evaluation, NoiseSpec, TestProblem, REFERENCE_ACTIVE_TOL,
};
use crate::qp::{enumerate_qp_oracle, solve_penalized_qp, solve_reduced_kkt, QpParams};

/// Signature of a ρ̄ implementation, injectable for mutation testing.
pub type RhoFn = fn(&Evaluation<f64>, &MultiplierPair<f64>) -> Result<f64, KktError>;

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Runs roughly a tenth of the instances.
    pub quick: bool,
    pub rho_bar: RhoFn,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            quick: false,
            rho_bar: kkt::rho_bar::<f64>,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyOutcome {
    pub module: &'static str,
    pub property: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// Description of the first failing instance.
    pub counterexample: Option<String>,
    pub note: Option<String>,
}

impl PropertyOutcome {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.cases > 0
    }
}

struct Tally(PropertyOutcome);

impl Tally {
    fn new(module: &'static str, property: &'static str) -> Self {
        Tally(PropertyOutcome {
            module,
            property,
            cases: 0,
            failures: 0,
            counterexample: None,
            note: None,
        })
    }

    fn check(&mut self, ok: bool, describe: impl FnOnce() -> String) {
        self.0.cases += 1;
        if !ok {
            self.0.failures += 1;
            if self.0.counterexample.is_none() {
                self.0.counterexample = Some(describe());
            }
        }
    }

    fn note(mut self, note: String) -> Self {
        self.0.note = Some(note);
        self
    }

    fn done(self) -> PropertyOutcome {
        self.0
    }
}

fn rng_for(seed: u64, suite: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[suite]))
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..=hi)
}

fn random_vec(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| uniform(rng, lo, hi)).collect()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| uniform(rng, lo, hi))
}

fn vector(v: Vec<f64>) -> Vector<f64> {
    Vector::new(v).expect("generated entries are finite")
}

/// Random dimensions with `1 ≤ n ≤ max_n`, `p ≤ min(max_p, n)`, `q ≤ max_q`.
pub fn random_dims(rng: &mut ChaCha8Rng, max_n: usize, max_p: usize, max_q: usize) -> Dims {
    let n = rng.gen_range(1..=max_n);
    let p = rng.gen_range(0..=max_p.min(n));
    let q = rng.gen_range(0..=max_q);
    Dims { n, p, q }
}

/// Evaluation with entries uniform in `[-scale, scale]` and `c` uniform in
/// `[-c_scale, c_scale]`; about one constraint value in seven is exactly 0.
pub fn random_evaluation(
    rng: &mut ChaCha8Rng,
    dims: Dims,
    scale: f64,
    c_scale: f64,
) -> Evaluation<f64> {
    let Dims { n, p, q } = dims;
    let c = (0..q)
        .map(|_| {
            if rng.gen_bool(1.0 / 7.0) {
                0.0
            } else {
                uniform(rng, -c_scale, c_scale)
            }
        })
        .collect();
    Evaluation::new(
        random_vec(rng, n, -1.0, 1.0),
        uniform(rng, -scale, scale),
        random_vec(rng, p, -scale, scale),
        c,
        random_vec(rng, n, -scale, scale),
        random_matrix(rng, n, p, -scale, scale),
        random_matrix(rng, n, q, -scale, scale),
        ErrorBounds::zero(),
    )
    .expect("generated evaluation is well-formed")
}

fn random_multipliers(rng: &mut ChaCha8Rng, dims: Dims, bound: f64) -> MultiplierPair<f64> {
    let y = random_vec(rng, dims.p, -bound, bound);
    let z = (0..dims.q)
        .map(|_| {
            if rng.gen_bool(0.25) {
                0.0
            } else {
                uniform(rng, 0.0, bound)
            }
        })
        .collect();
    MultiplierPair::new(vector(y), vector(z))
}

/// Adds independent uniform noise on `[-eps, eps]` to every entry.
fn perturb(rng: &mut ChaCha8Rng, ev: &Evaluation<f64>, eps: f64) -> Evaluation<f64> {
    let mut noisy = ev.clone();
    let mut draw = || uniform(rng, -eps, eps);
    noisy.f_val += draw();
    for v in noisy
        .e_val
        .as_mut_slice()
        .iter_mut()
        .chain(noisy.c_val.as_mut_slice())
    {
        *v += draw();
    }
    for v in noisy.grad_f.as_mut_slice() {
        *v += draw();
    }
    for jac in [&mut noisy.jac_e, &mut noisy.jac_c] {
        for i in 0..jac.rows() {
            for j in 0..jac.cols() {
                let v = jac.get(i, j) + draw();
                jac.set(i, j, v);
            }
        }
    }
    noisy.bounds = ErrorBounds::from_entrywise(eps, noisy.dims());
    noisy
}

fn count(opts: &VerifyOptions, full: usize) -> usize {
    if opts.quick {
        (full / 10).max(10)
    } else {
        full
    }
}

pub mod mutants {
    //! Deliberately broken implementations for checking that the suites
    //! can fail.

    use super::*;

    /// ρ̄ with the sign of the violation sum dropped: adds `|c_i|` for every
    /// constraint instead of `c_i` for the nonnegative ones.
    pub fn rho_bar_sign_flip(
        ev: &Evaluation<f64>,
        m: &MultiplierPair<f64>,
    ) -> Result<f64, KktError> {
        let k = kkt::kappa(ev, m)?;
        let roots: f64 = ev
            .c_val
            .iter()
            .zip(m.z.iter())
            .filter(|(c, _)| **c < 0.0)
            .map(|(c, z)| (-c * z).max(0.0).sqrt())
            .sum();
        Ok(k + roots + ev.c_val.iter().map(|c| c.abs()).sum::<f64>())
    }
}

// ---------------------------------------------------------------- numerics

pub fn lu_reconstruction(seed: u64, cases: usize) -> PropertyOutcome {
    let mut rng = rng_for(seed, 1);
    let mut t = Tally::new("numerics", "LU reconstruction and solve residual");
    for _ in 0..cases {
        let n = rng.gen_range(1..=6);
        let a = random_matrix(&mut rng, n, n, -1.0, 1.0);
        let lu = lu_factor(&a).expect("square");
        if lu.is_singular() {
            continue;
        }
        let diff = lu.permute_rows(&a).sub(&lu.l().matmul(&lu.u())).max_abs();
        let b = random_vec(&mut rng, n, -1.0, 1.0);
        let x = lu.solve(&b).expect("non-singular");
        let resid = a.mul_vec(&x).sub(&vector(b.clone())).norm_inf();
        let allowed = 1e-10 * (a.norm_inf() * x.norm_inf() + vector(b).norm_inf());
        t.check(diff <= 1e-12 * a.norm_inf() && resid <= allowed, || {
            format!(
                "n = {n}, reconstruction error {diff:e}, residual {resid:e} (allowed {allowed:e})"
            )
        });
    }
    t.done()
}

pub fn perturbation_bound_suite(seed: u64, cases: usize) -> PropertyOutcome {
    let mut rng = rng_for(seed, 2);
    let mut t = Tally::new("numerics", "perturbed linear system bound");
    let mut generated = 0;
    while generated < cases {
        let n = rng.gen_range(1..=6);
        let k = random_matrix(&mut rng, n, n, -1.0, 1.0);
        let Ok(lu) = lu_factor(&k) else { continue };
        if lu.is_singular() {
            continue;
        }
        let k_inv = lu.inverse().expect("non-singular").norm_inf();
        if k.norm_inf() * k_inv > 1e8 {
            continue;
        }
        generated += 1;
        let coupling = if rng.gen_bool(0.1) {
            0.0
        } else {
            uniform(&mut rng, 0.0, 0.95)
        };
        let raw = random_matrix(&mut rng, n, n, -1.0, 1.0);
        let dk = if coupling == 0.0 || raw.norm_inf() == 0.0 {
            Matrix::zeros(n, n)
        } else {
            raw.scale(coupling / (raw.norm_inf() * k_inv))
        };
        let mut b = random_vec(&mut rng, n, -1.0, 1.0);
        if b.iter().all(|v| *v == 0.0) {
            b[0] = 1.0;
        }
        let b = vector(b);
        let db_scale = if rng.gen_bool(0.1) {
            0.0
        } else {
            10f64.powf(uniform(&mut rng, -8.0, 0.0)) * b.norm_inf()
        };
        let db = vector(random_vec(&mut rng, n, -1.0, 1.0)).scale(db_scale);
        let holds = perturbation_bound_holds(&k, &dk, &b, &db);
        t.check(matches!(holds, Ok(true)), || {
            format!("n = {n}, coupling {coupling:.3}: {holds:?}")
        });
    }
    t.done()
}

// --------------------------------------------------------------------- kkt

/// `ρ̄ ≤ ρ + √q·ρ^{1/2}` for random evaluations and `z ≥ 0`.
pub fn rho_bar_sqrt_bound(seed: u64, cases: usize, rho_bar: RhoFn) -> PropertyOutcome {
    let mut rng = rng_for(seed, 3);
    let mut t = Tally::new("kkt", "square-root surrogate bounded by linear surrogate");
    for _ in 0..cases {
        let dims = random_dims(&mut rng, 5, 2, 4);
        let scale = 10f64.powf(uniform(&mut rng, -4.0, 1.0));
        let ev = random_evaluation(&mut rng, dims, scale, 2.0);
        let m = random_multipliers(&mut rng, dims, 3.0);
        let rho = kkt::rho(&ev, &m).expect("z ≥ 0");
        let rhs = rho + (dims.q as f64).sqrt() * rho.sqrt();
        let lhs = rho_bar(&ev, &m);
        let ok = matches!(lhs, Ok(v) if v - rhs <= 1e-12 * rhs.max(f64::MIN_POSITIVE));
        t.check(ok, || {
            format!(
                "{dims:?}, c = {:?}, z = {:?}: ρ̄ = {lhs:?} > {rhs:e}",
                ev.c_val.as_slice(),
                m.z.as_slice()
            )
        });
    }
    t.done()
}

/// Two-sided bound between noisy surrogates and the exact KKT error with
/// `M̄ = 10` and entrywise noise up to `10⁻³`.
pub fn noisy_two_sided_bound(seed: u64, cases: usize) -> PropertyOutcome {
    const M_BAR: f64 = 10.0;
    let mut rng = rng_for(seed, 4);
    let mut t = Tally::new("kkt", "noisy surrogates bracket the exact KKT error");
    for _ in 0..cases {
        let dims = random_dims(&mut rng, 5, 2, 4);
        let eps = 10f64.powf(uniform(&mut rng, -6.0, -3.0));
        let mut exact = random_evaluation(&mut rng, dims, 1.0, M_BAR);
        for c in exact.c_val.as_mut_slice() {
            if rng.gen_bool(0.2) {
                *c = uniform(&mut rng, -eps, eps);
            }
        }
        let m = random_multipliers(&mut rng, dims, M_BAR);
        let noisy = perturb(&mut rng, &exact, eps);
        let psi = kkt::psi(&exact, &m).expect("dims");
        let rho_t = kkt::rho(&noisy, &m).expect("z ≥ 0");
        let rho_bar_t = kkt::rho_bar(&noisy, &m).expect("z ≥ 0");
        let lower = rho_t / M_BAR - kkt::eps_rho(&noisy.bounds, dims, M_BAR);
        let upper = rho_bar_t + kkt::eps_rho_bar(&noisy.bounds, dims, M_BAR);
        t.check(lower <= psi && psi <= upper, || {
            format!("{dims:?}, ε = {eps:e}: {lower:e} ≤ ψ = {psi:e} ≤ {upper:e} fails")
        });
    }
    t.done()
}

/// The enumerated LPEC value is no larger than ψ at random multipliers.
pub fn omega_minimality(seed: u64, cases: usize) -> PropertyOutcome {
    let mut rng = rng_for(seed, 5);
    let mut t = Tally::new("kkt", "LPEC enumeration is minimal");
    let cap = 1e3;
    for _ in 0..cases {
        let dims = random_dims(&mut rng, 3, 1, 3);
        let ev = random_evaluation(&mut rng, dims, 1.0, 1.0);
        let omega = kkt::omega_bruteforce(&ev, cap);
        let Ok((omega, _)) = omega else {
            t.check(false, || format!("{dims:?}: {omega:?}"));
            continue;
        };
        let mut worst = f64::INFINITY;
        for _ in 0..100 {
            let m = random_multipliers(&mut rng, dims, 3.0);
            worst = worst.min(kkt::psi(&ev, &m).expect("dims"));
        }
        t.check(omega >= 0.0 && omega <= worst + 1e-9, || {
            format!("{dims:?}: ω = {omega:e}, best sampled ψ = {worst:e}")
        });
    }
    t.done()
}

// ---------------------------------------------------------------------- lp

/// Optimal value of a box-bounded LP by enumerating basic solutions, or
/// `None` when no basic solution is feasible. All bounds must be finite.
pub fn vertex_enumeration(lp: &StandardLp<f64>) -> Option<f64> {
    let (m, n) = (lp.num_rows(), lp.num_vars());
    let tol = 1e-9;
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != m {
            continue;
        }
        let basic: Vec<usize> = (0..n).filter(|j| mask & (1 << j) != 0).collect();
        let nonbasic: Vec<usize> = (0..n).filter(|j| mask & (1 << j) == 0).collect();
        let b_mat = lp.a.select_columns(&basic);
        for side in 0u32..(1 << nonbasic.len()) {
            let mut x = vec![0.0; n];
            for (k, &j) in nonbasic.iter().enumerate() {
                x[j] = if side & (1 << k) == 0 {
                    lp.lower[j]
                } else {
                    lp.upper[j]
                };
            }
            let ax = lp.a.mul_vec(&x);
            let rhs: Vec<f64> = lp.b.iter().zip(ax.iter()).map(|(b, v)| b - v).collect();
            let xb = if m == 0 {
                vector(vec![])
            } else {
                match solve_dense(&b_mat, &rhs) {
                    Ok(v) => v,
                    Err(_) => continue,
                }
            };
            if basic
                .iter()
                .zip(xb.iter())
                .any(|(&j, v)| *v < lp.lower[j] - tol || *v > lp.upper[j] + tol)
            {
                continue;
            }
            for (&j, v) in basic.iter().zip(xb.iter()) {
                x[j] = *v;
            }
            let obj: f64 = lp.cost.iter().zip(&x).map(|(c, v)| c * v).sum();
            if best.is_none_or(|b| obj < b) {
                best = Some(obj);
            }
        }
    }
    best
}

/// Random box-bounded LPs against [`vertex_enumeration`], with the
/// optimality of every returned basis certified through reduced costs.
pub fn simplex_vs_vertex_enumeration(seed: u64, cases: usize) -> PropertyOutcome {
    let mut rng = rng_for(seed, 6);
    let mut t = Tally::new("lp", "simplex matches vertex enumeration");
    let mut infeasible = 0;
    for case in 0..cases {
        let n = rng.gen_range(1..=6);
        let m = rng.gen_range(0..=n.min(4));
        let a = random_matrix(&mut rng, m, n, -1.0, 1.0);
        let lower: Vec<f64> = (0..n).map(|_| uniform(&mut rng, -2.0, 0.0)).collect();
        let upper: Vec<f64> = lower
            .iter()
            .map(|l| {
                if rng.gen_bool(0.05) {
                    *l
                } else {
                    l + uniform(&mut rng, 0.1, 3.0)
                }
            })
            .collect();
        let cost = random_vec(&mut rng, n, -1.0, 1.0);
        let b: Vec<f64> = if case % 4 == 3 {
            random_vec(&mut rng, m, -4.0, 4.0)
        } else {
            let x0: Vec<f64> = lower
                .iter()
                .zip(&upper)
                .map(|(l, u)| uniform(&mut rng, *l, *u))
                .collect();
            a.mul_vec(&x0).into_vec()
        };
        let lp = StandardLp::new(cost, a, b, lower, upper).expect("well-formed");
        let oracle = vertex_enumeration(&lp);
        let sol = simplex_solve(&lp, 10_000);
        let describe =
            || format!("n = {n}, m = {m}, case {case}: oracle {oracle:?}, simplex {sol:?}");
        let Ok(sol) = &sol else {
            t.check(false, describe);
            continue;
        };
        let ok = match oracle {
            None => {
                infeasible += 1;
                sol.status == LpStatus::Infeasible
            }
            Some(v) => {
                sol.status == LpStatus::Optimal
                    && (sol.objective - v).abs() <= 1e-7
                    && certified(&lp, sol)
            }
        };
        t.check(ok, describe);
    }
    t.note(format!("{infeasible} infeasible instances")).done()
}

/// Primal feasibility within `10⁻⁹` and reduced-cost signs consistent with
/// the position of every variable in its box.
pub fn certified(lp: &StandardLp<f64>, sol: &crate::lp::LpSolution<f64>) -> bool {
    let tol = 1e-9;
    let resid = lp.a.mul_vec(&sol.x).sub(&vector(lp.b.clone())).norm_inf();
    if resid > tol * (1.0 + vector(lp.b.clone()).norm_inf()) {
        return false;
    }
    let rc = sol.reduced_costs(lp);
    (0..lp.num_vars()).all(|j| {
        let x = sol.x[j];
        let inside = x >= lp.lower[j] - tol && x <= lp.upper[j] + tol;
        let above_lower = x > lp.lower[j] + tol;
        let below_upper = x < lp.upper[j] - tol;
        inside && (!above_lower || rc[j] <= tol) && (!below_upper || rc[j] >= -tol)
    })
}

/// Identifier output is consistent with the residual module and its rule.
pub fn lp_lpec_consistency(seed: u64, cases: usize) -> PropertyOutcome {
    let mut rng = rng_for(seed, 7);
    let mut t = Tally::new(
        "lp",
        "multiplier identifier agrees with surrogate and threshold rule",
    );
    let params = LpLpecParams::default();
    for _ in 0..cases {
        let dims = random_dims(&mut rng, 5, 2, 4);
        let ev = random_evaluation(&mut rng, dims, 1.0, 1.0);
        let res = identify_lp(&ev, &params);
        let Ok(res) = res else {
            t.check(false, || format!("{dims:?}: {res:?}"));
            continue;
        };
        let z = &res.multipliers.z;
        let in_box = z.iter().all(|v| *v >= 0.0 && *v <= params.m_box);
        let rho = kkt::rho(&ev, &res.multipliers).expect("z ≥ 0");
        let same_rho = (rho - res.rho_tilde).abs() <= 1e-10 * (1.0 + rho.abs());
        let lp_value = res.lp_objective + lp_lpec_constant(&ev);
        let same_value = (lp_value - rho).abs() <= 1e-9 * (1.0 + rho.abs());
        let rule = kkt::active_set_exact(&ev.c_val, res.threshold);
        t.check(
            in_box && same_rho && same_value && rule == res.active_estimate,
            || {
                format!(
                    "{dims:?}: box {in_box}, ρ {rho:e} vs {:e}, LP value {lp_value:e}, estimate {}",
                    res.rho_tilde, res.active_estimate
                )
            },
        );
    }
    t.done()
}

fn neighborhood_points(problem: &TestProblem<f64>, radius_steps: usize) -> Vec<[f64; 2]> {
    let xs = problem.x_star.as_ref().expect("reference minimizer");
    let res = 81;
    let mid = (res - 1) / 2;
    let mut pts = Vec::new();
    for i in mid - radius_steps..=mid + radius_steps {
        for j in mid - radius_steps..=mid + radius_steps {
            pts.push([
                grid_coordinate(xs[0], 0.4, res, i),
                grid_coordinate(xs[1], 0.4, res, j),
            ]);
        }
    }
    pts
}

fn sample_points(rng: &mut ChaCha8Rng, mut pts: Vec<[f64; 2]>, count: usize) -> Vec<[f64; 2]> {
    for i in (1..pts.len()).rev() {
        let j = rng.gen_range(0..=i);
        pts.swap(i, j);
    }
    pts.truncate(count);
    pts
}

/// `M⁻¹ρ ≤ ω ≤ M·ρ̄` at the identifier's multipliers on exact data, for grid
/// points within `0.05` of the minimizer of `f1`.
pub fn exact_sandwich(seed: u64, points: usize) -> PropertyOutcome {
    let mut rng = rng_for(seed, 8);
    let mut t = Tally::new("lp", "LPEC value sandwiched by surrogates (exact data)");
    let problem = builtin_problem::<f64>("f1").expect("built in");
    let params = LpLpecParams::default();
    for x in sample_points(&mut rng, neighborhood_points(&problem, 5), points) {
        let ev = evaluate_exact(problem.oracle.as_ref(), &x).expect("2-D point");
        let res = identify_lp(&ev, &params).expect("LP solvable");
        let rho = kkt::rho(&ev, &res.multipliers).expect("z ≥ 0");
        let rho_bar = kkt::rho_bar(&ev, &res.multipliers).expect("z ≥ 0");
        let (omega, _) = kkt::omega_bruteforce(&ev, params.m_box).expect("q = 2");
        let m = params.m_box;
        t.check(
            rho / m - 1e-7 <= omega && omega <= m * rho_bar + 1e-7,
            || {
                format!(
                    "x = {x:?}: ρ/M = {:e}, ω = {omega:e}, M·ρ̄ = {:e}",
                    rho / m,
                    m * rho_bar
                )
            },
        );
    }
    t.done()
}

/// Noisy counterpart: `M⁻¹ρ̃ − ε_ρ ≤ ω(x) ≤ ρ̄̃ + ε_ρ̄` with `10⁻³` noise.
pub fn noisy_sandwich(seed: u64, points: usize) -> PropertyOutcome {
    let mut rng = rng_for(seed, 9);
    let mut t = Tally::new("lp", "LPEC value sandwiched by noisy surrogates");
    let problem = builtin_problem::<f64>("f1").expect("built in");
    let params = LpLpecParams::default();
    for (k, x) in sample_points(&mut rng, neighborhood_points(&problem, 5), points)
        .into_iter()
        .enumerate()
    {
        let exact = evaluate_exact(problem.oracle.as_ref(), &x).expect("2-D point");
        let spec = NoiseSpec::new(1e-3, derive_seed(seed, &[9, k as u64])).expect("valid level");
        let noisy = evaluate_noisy(problem.oracle.as_ref(), &x, &spec).expect("2-D point");
        let res = identify_lp(&noisy, &params).expect("LP solvable");
        let mult = &res.multipliers;
        let m_bar = [
            exact.c_val.norm_inf(),
            mult.y.norm_inf(),
            mult.z.norm_inf(),
            1.0,
        ]
        .into_iter()
        .fold(0.0, f64::max);
        let (omega, _) = kkt::omega_bruteforce(&exact, params.m_box).expect("q = 2");
        let dims = noisy.dims();
        let lower = res.rho_tilde / params.m_box - kkt::eps_rho(&noisy.bounds, dims, m_bar);
        let upper = res.rho_bar_tilde + kkt::eps_rho_bar(&noisy.bounds, dims, m_bar);
        t.check(lower <= omega + 1e-7 && omega <= upper + 1e-7, || {
            format!("x = {x:?}: {lower:e} ≤ ω = {omega:e} ≤ {upper:e} fails")
        });
    }
    t.done()
}

// ---------------------------------------------------------------------- qp

/// Random instance whose linearized constraints are feasible: `e` and `c`
/// are chosen so that a random `d₀` satisfies them, some inequalities tightly.
pub fn random_feasible_qp(rng: &mut ChaCha8Rng, dims: Dims) -> Evaluation<f64> {
    let Dims { n, p, q } = dims;
    let jac_e = random_matrix(rng, n, p, -1.0, 1.0);
    let jac_c = random_matrix(rng, n, q, -1.0, 1.0);
    let d0 = random_vec(rng, n, -1.0, 1.0);
    let e = jac_e.tr_mul_vec(&d0).scale(-1.0).into_vec();
    let c = jac_c
        .tr_mul_vec(&d0)
        .iter()
        .map(|v| {
            -v - if rng.gen_bool(0.3) {
                0.0
            } else {
                uniform(rng, 0.0, 1.0)
            }
        })
        .collect();
    Evaluation::new(
        vec![0.0; n],
        0.0,
        e,
        c,
        random_vec(rng, n, -1.0, 1.0),
        jac_e,
        jac_c,
        ErrorBounds::zero(),
    )
    .expect("generated evaluation is well-formed")
}

pub const ORACLE_NU: f64 = 1e4;
pub const ORACLE_THETAS: [f64; 3] = [1.0, 5.0, 20.0];

/// Multipliers above this fraction of `ν` put the exact-penalty property
/// out of reach; such instances are regenerated.
pub const ORACLE_MULTIPLIER_CAP: f64 = 0.1;

/// Penalized dual solve against exact active-set enumeration on feasible
/// random instances with `ν = 10⁴`.
pub fn penalized_vs_enumeration(seed: u64, cases: usize) -> PropertyOutcome {
    let mut rng = rng_for(seed, 10);
    let mut t = Tally::new("qp", "penalized step matches enumeration oracle");
    let mut regenerated = 0;
    let mut worst_dd = 0.0f64;
    let mut worst_gap = 0.0f64;
    while t.0.cases < cases {
        let dims = random_dims(&mut rng, 5, 2, 4);
        let theta = ORACLE_THETAS[t.0.cases % ORACLE_THETAS.len()];
        let ev = random_feasible_qp(&mut rng, dims);
        let oracle = enumerate_qp_oracle(&ev, theta);
        let Ok(oracle) = oracle else {
            t.check(false, || {
                format!("{dims:?}, θ = {theta}: oracle {oracle:?}")
            });
            continue;
        };
        let largest = oracle.alpha.norm_inf().max(oracle.beta.norm_inf());
        if largest >= ORACLE_MULTIPLIER_CAP * ORACLE_NU {
            regenerated += 1;
            continue;
        }
        let params = QpParams {
            theta,
            nu: ORACLE_NU,
            ..QpParams::default()
        };
        let res = solve_penalized_qp(&ev, &params).expect("valid params");
        let dd = res.d.sub(&oracle.d).norm_inf();
        let slack = res.r.norm_inf().max(res.s.norm_inf()).max(res.t.norm_inf());
        worst_dd = worst_dd.max(dd);
        worst_gap = worst_gap.max(res.gap);
        t.check(res.converged && res.gap <= 1e-8 && dd <= 1e-6 && slack <= 1e-7, || {
            format!("{dims:?}, θ = {theta}: ‖Δd‖∞ = {dd:e}, gap = {:e}, slack = {slack:e}, iterations {}", res.gap, res.iterations)
        });
    }
    t.note(format!(
        "{regenerated} instances regenerated for multipliers ≥ {}; worst ‖Δd‖∞ = {worst_dd:e}, worst gap = {worst_gap:e}",
        ORACLE_MULTIPLIER_CAP * ORACLE_NU
    ))
    .done()
}

/// Weak duality, box feasibility and primal recovery on arbitrary random
/// instances at the default penalty.
pub fn dual_invariants(seed: u64, cases: usize) -> PropertyOutcome {
    let mut rng = rng_for(seed, 11);
    let mut t = Tally::new("qp", "weak duality, dual box and primal recovery");
    for _ in 0..cases {
        let dims = random_dims(&mut rng, 5, 2, 4);
        let ev = random_evaluation(&mut rng, dims, 1.0, 1.0);
        let theta = ORACLE_THETAS[rng.gen_range(0..ORACLE_THETAS.len())];
        let params = QpParams {
            theta,
            ..QpParams::default()
        };
        let res = solve_penalized_qp(&ev, &params).expect("valid params");
        let nu = params.nu;
        let in_box = res.alpha.iter().all(|a| a.abs() <= nu)
            && res.beta.iter().all(|b| *b >= 0.0 && *b <= nu);
        let nonneg = res
            .r
            .iter()
            .chain(res.s.iter())
            .chain(res.t.iter())
            .all(|v| *v >= 0.0);
        let stat = ev
            .lagrangian_grad(&res.alpha, &res.beta)
            .add(&res.d.scale(theta));
        let scale = 1.0 + ev.grad_f.norm_inf() + nu * (ev.jac_e.norm_inf() + ev.jac_c.norm_inf());
        let recovered = stat.norm_inf() <= 1e-10 * scale;
        t.check(res.gap >= -1e-10 && in_box && nonneg && recovered, || {
            format!(
                "{dims:?}: gap {:e}, box {in_box}, r/s/t ≥ 0 {nonneg}, recovery residual {:e}",
                res.gap,
                stat.norm_inf()
            )
        });
    }
    t.done()
}

fn reference_pair(name: &str) -> (TestProblem<f64>, Evaluation<f64>, ActiveSet) {
    let problem = builtin_problem::<f64>(name).expect("built in");
    let xs = problem.x_star.clone().expect("reference minimizer");
    let ev = evaluate_exact(problem.oracle.as_ref(), xs.as_slice()).expect("2-D point");
    let a = problem.a_star.clone().expect("reference active set");
    (problem, ev, a)
}

/// At the exact minimizers the reduced system returns a zero step with
/// positive multipliers and strictly inactive complements.
pub fn reduced_kkt_fixtures() -> PropertyOutcome {
    let mut t = Tally::new("qp", "reduced system at the minimizers");
    for name in ["f1", "f2"] {
        let (_, ev, a) = reference_pair(name);
        let sol = solve_reduced_kkt(&ev, &a, 5.0);
        let ok = matches!(&sol, Ok(s) if s.d.norm_inf() <= 1e-8 && s.positive_multipliers && s.strictly_inactive);
        t.check(ok, || format!("{name}: {sol:?}"));
    }
    t.done()
}

/// Every `±10⁻⁴` sign pattern on the Jacobian entries at the minimizers
/// keeps the reduced system non-singular with positive multipliers.
pub fn reduced_kkt_perturbed() -> PropertyOutcome {
    let mut t = Tally::new("qp", "reduced system under Jacobian perturbation");
    for name in ["f1", "f2"] {
        let (_, ev, a) = reference_pair(name);
        let entries = ev.jac_e.data().len() + ev.jac_c.data().len();
        assert!(
            entries <= 16,
            "pattern enumeration sized for the built-in problems"
        );
        for pattern in 0u32..(1 << entries) {
            let mut pert = ev.clone();
            let mut k = 0;
            for jac in [&mut pert.jac_e, &mut pert.jac_c] {
                for i in 0..jac.rows() {
                    for j in 0..jac.cols() {
                        let sign = if pattern & (1 << k) == 0 { 1.0 } else { -1.0 };
                        jac.set(i, j, jac.get(i, j) + sign * 1e-4);
                        k += 1;
                    }
                }
            }
            let sol = solve_reduced_kkt(&pert, &a, 5.0);
            t.check(matches!(&sol, Ok(s) if s.positive_multipliers), || {
                format!("{name}, pattern {pattern:#b}: {sol:?}")
            });
        }
    }
    t.done()
}

// ----------------------------------------------------------------- problem

/// Noisy evaluations stay within their attached bounds, and zero noise
/// reproduces the exact evaluation bitwise.
pub fn noise_within_bounds(seed: u64, cases: usize) -> PropertyOutcome {
    let mut rng = rng_for(seed, 12);
    let mut t = Tally::new("problem", "noisy evaluations respect their bounds");
    for case in 0..cases {
        let name = if case % 2 == 0 { "f1" } else { "f2" };
        let problem = builtin_problem::<f64>(name).expect("built in");
        let oracle = problem.oracle.as_ref();
        let x = random_vec(&mut rng, 2, -1.0, 1.0);
        let exact = evaluate_exact(oracle, &x).expect("2-D point");
        let zero = evaluate_noisy(oracle, &x, &NoiseSpec::new(0.0, rng.gen()).expect("valid"))
            .expect("2-D point");
        let eps = 10f64.powf(uniform(&mut rng, -4.0, 0.0));
        let noisy = evaluate_noisy(oracle, &x, &NoiseSpec::new(eps, rng.gen()).expect("valid"))
            .expect("2-D point");
        let b = &noisy.bounds;
        let tol = 1e-15 * (1.0 + eps);
        let ok = zero == exact
            && (noisy.f_val - exact.f_val).abs() <= b.eps_f + tol
            && noisy.e_val.sub(&exact.e_val).norm2() <= b.eps_e + tol
            && noisy.c_val.sub(&exact.c_val).norm2() <= b.eps_c + tol
            && noisy.grad_f.sub(&exact.grad_f).norm2() <= b.eps_grad_f + tol
            && noisy.jac_e.sub(&exact.jac_e).norm_inf() <= b.eps_grad_e + tol
            && noisy.jac_c.sub(&exact.jac_c).norm_inf() <= b.eps_grad_c + tol;
        t.check(ok, || format!("{name} at {x:?}, ε = {eps:e}"));
    }
    t.done()
}

/// Reference minimizers are feasible, carry consistent active sets, and are
/// KKT points with the reduced-system multipliers.
pub fn reference_fixtures() -> PropertyOutcome {
    let mut t = Tally::new("problem", "reference minimizers are KKT points");
    for name in ["f1", "f2"] {
        let (problem, ev, a) = reference_pair(name);
        let feasible = ev.c_val.iter().all(|c| *c <= 1e-9);
        let consistent = ActiveSet::new(
            ev.c_val.len(),
            (0..ev.c_val.len()).filter(|&i| ev.c_val[i].abs() <= REFERENCE_ACTIVE_TOL),
        )
        .is_ok_and(|s| s == a);
        let psi = solve_reduced_kkt(&ev, &a, 5.0).ok().and_then(|s| {
            kkt::psi(&ev, &MultiplierPair::new(s.alpha.clone(), s.beta_full(&a))).ok()
        });
        t.check(
            feasible && consistent && psi.is_some_and(|v| v <= 1e-7),
            || {
                format!(
                    "{name}: x* = {:?}, c = {:?}, ψ = {psi:?}",
                    problem.x_star,
                    ev.c_val.as_slice()
                )
            },
        );
    }
    t.done()
}

fn relative_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// Analytic derivatives against central differences with step `10⁻⁶`.
pub fn finite_difference_gradients(seed: u64, cases: usize) -> PropertyOutcome {
    let mut rng = rng_for(seed, 13);
    let mut t = Tally::new("problem", "derivatives match central differences");
    let h = 1e-6;
    for case in 0..cases {
        let name = if case % 2 == 0 { "f1" } else { "f2" };
        let problem = builtin_problem::<f64>(name).expect("built in");
        let oracle = problem.oracle.as_ref();
        let x = random_vec(&mut rng, 2, -1.0, 1.0);
        let mu = 100.0;
        let (_, pg) = penalty_objective(oracle, &x, mu).expect("μ > 0");
        let jc = oracle.inequality_jacobian(&x);
        let g = oracle.objective_grad(&x);
        let mut ok = true;
        for k in 0..2 {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[k] += h;
            xm[k] -= h;
            ok &= relative_close(
                (oracle.objective(&xp) - oracle.objective(&xm)) / (2.0 * h),
                g[k],
                1e-6,
            );
            let (cp, cm) = (oracle.inequalities(&xp), oracle.inequalities(&xm));
            for i in 0..cp.len() {
                ok &= relative_close((cp[i] - cm[i]) / (2.0 * h), jc.get(k, i), 1e-6);
            }
            let (vp, _) = penalty_objective(oracle, &xp, mu).expect("μ > 0");
            let (vm, _) = penalty_objective(oracle, &xm, mu).expect("μ > 0");
            // The penalty has a kink in its second derivative on c = 0.
            ok &= relative_close((vp - vm) / (2.0 * h), pg[k], 1e-5);
        }
        t.check(ok, || format!("{name} at {x:?}"));
    }
    t.done()
}

// ------------------------------------------------------------- experiments

/// Exact-mode penalty descent converges and both identifiers return the
/// optimal active set at every iterate within `0.02` of the minimizer.
pub fn trajectory_identification() -> PropertyOutcome {
    let mut t = Tally::new(
        "experiments",
        "trajectory identification near the minimizer",
    );
    for name in ["f1", "f2"] {
        let cfg = TrajectoryConfig {
            problem: name.into(),
            mode: EvalMode::Exact,
            ..TrajectoryConfig::default()
        };
        let xs = builtin_problem::<f64>(name)
            .expect("built in")
            .x_star
            .expect("reference");
        let records = run_trajectory(&cfg);
        let Ok(records) = records else {
            t.check(false, || format!("{name}: {records:?}"));
            continue;
        };
        let converged = records.last().is_some_and(|r| r.grad_norm <= cfg.grad_tol);
        let bad = records.iter().find(|r| {
            let dist = (r.x[0] - xs[0]).abs().max((r.x[1] - xs[1]).abs());
            dist <= 0.02 && (r.lp.exact < 1.0 || r.qp.exact < 1.0)
        });
        t.check(converged && bad.is_none(), || {
            format!("{name}: converged {converged}, first miss {bad:?}")
        });
    }
    t.done()
}

/// Every suite at its full (or quick) size.
pub fn run_all(opts: &VerifyOptions) -> Vec<PropertyOutcome> {
    let s = opts.seed;
    vec![
        lu_reconstruction(s, count(opts, 200)),
        perturbation_bound_suite(s, count(opts, 200)),
        noise_within_bounds(s, count(opts, 200)),
        finite_difference_gradients(s, count(opts, 100)),
        reference_fixtures(),
        rho_bar_sqrt_bound(s, count(opts, 1000), opts.rho_bar),
        noisy_two_sided_bound(s, count(opts, 200)),
        omega_minimality(s, count(opts, 50)),
        simplex_vs_vertex_enumeration(s, count(opts, 200)),
        lp_lpec_consistency(s, count(opts, 200)),
        exact_sandwich(s, count(opts, 50)),
        noisy_sandwich(s, count(opts, 50)),
        penalized_vs_enumeration(s, count(opts, 500)),
        dual_invariants(s, count(opts, 200)),
        reduced_kkt_fixtures(),
        reduced_kkt_perturbed(),
        trajectory_identification(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vertex_enumeration_on_a_box() {
        let lp = StandardLp::new(
            vec![1.0, -1.0],
            Matrix::zeros(0, 2),
            vec![],
            vec![0.0, 0.0],
            vec![1.0, 2.0],
        )
        .unwrap();
        assert_eq!(vertex_enumeration(&lp), Some(-2.0));
    }

    #[test]
    fn vertex_enumeration_detects_infeasibility() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let lp =
            StandardLp::new(vec![0.0, 0.0], a, vec![5.0], vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(vertex_enumeration(&lp), None);
    }

    #[test]
    fn sign_flip_mutant_is_caught() {
        let out = rho_bar_sqrt_bound(0, 200, mutants::rho_bar_sign_flip);
        assert!(!out.passed());
        assert!(out.counterexample.is_some());
    }

    #[test]
    fn quick_counts_are_smaller() {
        let quick = VerifyOptions {
            quick: true,
            ..VerifyOptions::default()
        };
        assert_eq!(count(&quick, 1000), 100);
        assert_eq!(count(&quick, 50), 10);
        assert_eq!(count(&VerifyOptions::default(), 50), 50);
    }
}
