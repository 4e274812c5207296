//! Library results against independent oracles written here.

use activeset_core::kkt::{self, ActiveSet, MultiplierPair};
use activeset_core::lp::{identify_lp, simplex_solve, LpLpecParams, LpStatus, StandardLp};
use activeset_core::numerics::{lu_factor, perturbation_bound, Matrix, Vector};
use activeset_core::problem::{
    builtin_problem, evaluate_exact, evaluate_noisy, ErrorBounds, Evaluation, NoiseSpec,
};
use activeset_core::qp::{identify_qp, solve_penalized_qp, QpParams};
use activeset_core::Evaluation32;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vector(v: &[f64]) -> Vector<f64> {
    Vector::new(v.to_vec()).unwrap()
}

/// Real root of `8t³ + t + ½` by Newton's method from `t = 0`.
fn f1_cubic_root() -> f64 {
    let mut t = 0.0f64;
    for _ in 0..100 {
        t -= (8.0 * t.powi(3) + t + 0.5) / (24.0 * t * t + 1.0);
    }
    t
}

#[test]
fn f1_minimizer_matches_cubic_root() {
    let t = f1_cubic_root();
    let p = builtin_problem::<f64>("f1").unwrap();
    let xs = p.x_star.unwrap();
    assert!((xs[0] - t).abs() < 1e-10, "{} vs {t}", xs[0]);
    assert!((xs[1] - (0.5 - t * t)).abs() < 1e-10);
    assert_eq!(
        p.a_star.unwrap(),
        ActiveSet::from_one_based(2, &[2]).unwrap()
    );
}

#[test]
fn f2_minimizer_is_the_parabola_crossing() {
    let p = builtin_problem::<f64>("f2").unwrap();
    let xs = p.x_star.unwrap();
    assert!((xs[0] + 0.5).abs() < 1e-10 && (xs[1] - 0.25).abs() < 1e-10);
    assert_eq!(p.a_star.unwrap().one_based(), vec![1, 2]);
    let ev = evaluate_exact(p.oracle.as_ref(), &[-0.5, 0.25]).unwrap();
    // Stationarity (0.8, 0) = z₁(1, 1) + z₂(1, −1) gives z = (0.4, 0.4).
    let m = MultiplierPair::new(vector(&[]), vector(&[0.4, 0.4]));
    assert!(kkt::psi(&ev, &m).unwrap() < 1e-12);
}

#[test]
fn both_identifiers_at_the_minimizers() {
    for (name, expected) in [("f1", "{2}"), ("f2", "{1,2}")] {
        let p = builtin_problem::<f64>(name).unwrap();
        let ev = evaluate_exact(p.oracle.as_ref(), p.x_star.as_ref().unwrap().as_slice()).unwrap();
        let lp = identify_lp(&ev, &LpLpecParams::default()).unwrap();
        let qp = identify_qp(&ev, &QpParams::default()).unwrap();
        assert_eq!(lp.active_estimate.to_string(), expected);
        assert_eq!(qp.active_estimate.to_string(), expected);
    }
}

#[test]
fn single_precision_identifies_at_the_minimizers() {
    for (name, expected) in [("f1", "{2}"), ("f2", "{1,2}")] {
        let p = builtin_problem::<f32>(name).unwrap();
        let ev: Evaluation32 =
            evaluate_exact(p.oracle.as_ref(), p.x_star.as_ref().unwrap().as_slice()).unwrap();
        let lp = identify_lp(&ev, &LpLpecParams::default()).unwrap();
        let qp = solve_penalized_qp(
            &ev,
            &QpParams {
                gap_tol: 1e-4,
                ..QpParams::default()
            },
        )
        .unwrap();
        assert_eq!(lp.active_estimate.to_string(), expected);
        assert_eq!(qp.active_estimate.to_string(), expected);
    }
}

/// Minimum of `cᵀx` over `{a·x = b, l ≤ x ≤ u}` in two variables by clipping
/// the line to the box and comparing endpoints.
fn two_variable_lp(c: [f64; 2], a: [f64; 2], b: f64, l: [f64; 2], u: [f64; 2]) -> Option<f64> {
    let mut candidates = Vec::new();
    for k in 0..2 {
        let o = 1 - k;
        if a[o] == 0.0 {
            continue;
        }
        for xk in [l[k], u[k]] {
            let xo = (b - a[k] * xk) / a[o];
            if xo >= l[o] - 1e-12 && xo <= u[o] + 1e-12 {
                let mut x = [0.0; 2];
                x[k] = xk;
                x[o] = xo;
                candidates.push(c[0] * x[0] + c[1] * x[1]);
            }
        }
    }
    candidates.into_iter().reduce(f64::min)
}

#[test]
fn simplex_matches_segment_clipping() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut infeasible = 0;
    for _ in 0..300 {
        let c = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let a = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let l = [rng.gen_range(-2.0..0.0), rng.gen_range(-2.0..0.0)];
        let u = [
            l[0] + rng.gen_range(0.1..3.0),
            l[1] + rng.gen_range(0.1..3.0),
        ];
        let b = rng.gen_range(-3.0..3.0);
        let lp = StandardLp::new(
            c.to_vec(),
            Matrix::from_rows(&[a.to_vec()]).unwrap(),
            vec![b],
            l.to_vec(),
            u.to_vec(),
        )
        .unwrap();
        let sol = simplex_solve(&lp, 1000).unwrap();
        match two_variable_lp(c, a, b, l, u) {
            Some(v) => {
                assert_eq!(sol.status, LpStatus::Optimal);
                assert!((sol.objective - v).abs() < 1e-9, "{} vs {v}", sol.objective);
            }
            None => {
                infeasible += 1;
                assert_eq!(sol.status, LpStatus::Infeasible);
            }
        }
    }
    assert!(infeasible > 0);
}

#[test]
fn lp_lpec_without_constraints_is_gradient_norm() {
    let ev = Evaluation::<f64>::new(
        vec![0.0, 0.0],
        0.0,
        vec![],
        vec![],
        vec![1.5, -2.0],
        Matrix::zeros(2, 0),
        Matrix::zeros(2, 0),
        ErrorBounds::zero(),
    )
    .unwrap();
    let res = identify_lp(&ev, &LpLpecParams::default()).unwrap();
    assert!((res.rho_tilde - 3.5).abs() < 1e-12);
    assert!(res.active_estimate.is_empty());
}

/// `min g·d + θ/2‖d‖²` s.t. `c + a·d ≤ 0` with a single constraint.
fn one_constraint_step(g: &[f64], a: &[f64], c: f64, theta: f64) -> Vec<f64> {
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
    let free: Vec<f64> = g.iter().map(|v| -v / theta).collect();
    if c + dot(a, &free) <= 0.0 {
        return free;
    }
    let beta = (theta * c - dot(a, g)) / dot(a, a);
    g.iter()
        .zip(a)
        .map(|(gi, ai)| -(gi + beta * ai) / theta)
        .collect()
}

#[test]
fn penalized_qp_matches_projection_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..200 {
        let n = rng.gen_range(1..=4);
        let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = rng.gen_range(-1.0..1.0);
        let theta = [1.0, 5.0, 20.0][case % 3];
        let ev = Evaluation::new(
            vec![0.0; n],
            0.0,
            vec![],
            vec![c],
            g.clone(),
            Matrix::zeros(n, 0),
            Matrix::from_fn(n, 1, |i, _| a[i]),
            ErrorBounds::zero(),
        )
        .unwrap();
        let expected = one_constraint_step(&g, &a, c, theta);
        let beta = (theta * c - a.iter().zip(&g).map(|(x, y)| x * y).sum::<f64>())
            / a.iter().map(|x| x * x).sum::<f64>();
        if beta > 1e3 {
            continue;
        }
        let res = solve_penalized_qp(
            &ev,
            &QpParams {
                theta,
                nu: 1e4,
                ..QpParams::default()
            },
        )
        .unwrap();
        let err = res.d.sub(&vector(&expected)).norm_inf();
        assert!(err < 1e-8, "case {case}: {err:e}");
    }
}

#[test]
fn lu_of_known_matrix() {
    let a = Matrix::<f64>::from_rows(&[
        vec![2.0, 1.0, 1.0],
        vec![4.0, -6.0, 0.0],
        vec![-2.0, 7.0, 2.0],
    ])
    .unwrap();
    let lu = lu_factor(&a).unwrap();
    assert!((lu.determinant() - (-16.0)).abs() < 1e-12);
    let x = lu.solve(&[5.0, -2.0, 9.0]).unwrap();
    for (got, want) in x.iter().zip([1.0, 1.0, 2.0]) {
        assert!((got - want).abs() < 1e-12);
    }
    let inv = lu.inverse().unwrap();
    assert!(a.matmul(&inv).sub(&Matrix::identity(3)).max_abs() < 1e-14);
}

#[test]
fn perturbation_bound_on_diagonal_system() {
    // K = diag(2, 4), δK = diag(0.2, 0), b = (2, 4), δb = 0: exact solutions
    // (1, 1) and (2/2.2, 1) give relative error 1/11 in the ∞-norm.
    let k = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 4.0]]).unwrap();
    let dk = Matrix::from_rows(&[vec![0.2, 0.0], vec![0.0, 0.0]]).unwrap();
    let pb = perturbation_bound(&k, &dk, &vector(&[2.0, 4.0]), &vector(&[0.0, 0.0])).unwrap();
    assert!((pb.relative_error - 1.0 / 11.0).abs() < 1e-14);
    // cond = 4·½ = 2 and ‖δK‖/‖K‖ = 0.05: bound 2·0.05 / (1 − 2·0.05).
    assert!((pb.bound - 0.1 / 0.9).abs() < 1e-14);
}

#[test]
fn noise_is_unbiased_with_uniform_variance() {
    let p = builtin_problem::<f64>("f1").unwrap();
    let x = [0.1, 0.2];
    let exact = evaluate_exact(p.oracle.as_ref(), &x).unwrap();
    let eps = 0.1;
    let draws = 1000;
    let mut sum = 0.0;
    let mut sq = 0.0;
    for seed in 0..draws {
        let ev =
            evaluate_noisy(p.oracle.as_ref(), &x, &NoiseSpec::new(eps, seed).unwrap()).unwrap();
        let dev = ev.c_val[0] - exact.c_val[0];
        assert!(dev.abs() <= eps);
        sum += dev;
        sq += dev * dev;
    }
    let n = draws as f64;
    let mean = sum / n;
    let std_err = (eps * eps / 3.0 / n).sqrt();
    assert!(mean.abs() < 3.0 * std_err, "mean {mean:e}");
    let var = sq / n - mean * mean;
    assert!(
        (var - eps * eps / 3.0).abs() < 0.15 * eps * eps / 3.0,
        "variance {var:e}"
    );
}

#[test]
fn omega_matches_hand_lpec() {
    // n = 1, q = 1: ψ(z) = |g + a z| + |min(z, −c)|, c < 0.
    let ev = Evaluation::<f64>::new(
        vec![0.0],
        0.0,
        vec![],
        vec![-0.5],
        vec![1.0],
        Matrix::zeros(1, 0),
        Matrix::from_rows(&[vec![-2.0]]).unwrap(),
        ErrorBounds::zero(),
    )
    .unwrap();
    // z = ½ zeroes stationarity and leaves |min(½, ½)| = ½; z = 0 gives 1.
    let (omega, m) = kkt::omega_bruteforce(&ev, 1e8).unwrap();
    assert!((omega - 0.5).abs() < 1e-12);
    assert!((m.z[0] - 0.5).abs() < 1e-9);
}
