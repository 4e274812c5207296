use activeset_core::kkt::{self, ActiveSet, MultiplierPair};
use activeset_core::lp::{identify_lp, simplex_solve, LpLpecParams, LpStatus, StandardLp};
use activeset_core::numerics::{lu_factor, Matrix, Vector};
use activeset_core::problem::{Dims, ErrorBounds, Evaluation};
use activeset_core::qp::{identify_qp, solve_penalized_qp, QpParams};
use activeset_core::verify::{certified, vertex_enumeration};
use proptest::collection::vec;
use proptest::prelude::*;

fn evaluation_strategy() -> impl Strategy<Value = (Evaluation<f64>, MultiplierPair<f64>)> {
    (1usize..=4, 0usize..=2, 0usize..=4)
        .prop_flat_map(|(n, p, q)| {
            let p = p.min(n);
            (
                vec(-2.0..2.0f64, n),
                vec(-2.0..2.0f64, p),
                vec(prop_oneof![Just(0.0), -2.0..2.0f64], q),
                vec(-2.0..2.0f64, n * p),
                vec(-2.0..2.0f64, n * q),
                vec(-3.0..3.0f64, p),
                vec(prop_oneof![Just(0.0), 0.0..3.0f64], q),
                Just((n, p, q)),
            )
        })
        .prop_map(|(g, e, c, je, jc, y, z, (n, p, q))| {
            let ev = Evaluation::new(
                vec![0.0; n],
                0.0,
                e,
                c,
                g,
                Matrix::from_row_major(n, p, je).unwrap(),
                Matrix::from_row_major(n, q, jc).unwrap(),
                ErrorBounds::zero(),
            )
            .unwrap();
            (
                ev,
                MultiplierPair::new(Vector::new(y).unwrap(), Vector::new(z).unwrap()),
            )
        })
}

proptest! {
    #[test]
    fn surrogate_ordering((ev, m) in evaluation_strategy()) {
        let psi = kkt::psi(&ev, &m).unwrap();
        let kappa = kkt::kappa(&ev, &m).unwrap();
        let rho = kkt::rho(&ev, &m).unwrap();
        let rho_bar = kkt::rho_bar(&ev, &m).unwrap();
        prop_assert!(psi >= 0.0);
        prop_assert!(kappa <= rho + 1e-12 && kappa <= rho_bar + 1e-12);
        let q = ev.c_val.len() as f64;
        prop_assert!(rho_bar <= rho + q.sqrt() * rho.sqrt() + 1e-12 * (1.0 + rho));
    }

    #[test]
    fn exact_multipliers_give_zero_residual(g in vec(-2.0..2.0f64, 2), z in 0.1..3.0f64) {
        // Choose ∇f so that (0, z) is an exact KKT multiplier for an active c₁ = 0.
        let jc = Matrix::from_rows(&[vec![1.0, g[0]], vec![-1.0, g[1]]]).unwrap();
        let grad_f = vec![-z, z];
        let ev = Evaluation::new(vec![0.0, 0.0], 0.0, vec![], vec![0.0, -1.0], grad_f, Matrix::zeros(2, 0), jc, ErrorBounds::zero()).unwrap();
        let m = MultiplierPair::new(Vector::zeros(0), Vector::new(vec![z, 0.0]).unwrap());
        prop_assert!(kkt::psi(&ev, &m).unwrap() < 1e-14);
        prop_assert!(kkt::rho(&ev, &m).unwrap() < 1e-14);
        prop_assert!(kkt::rho_bar(&ev, &m).unwrap() < 1e-14);
    }

    #[test]
    fn active_set_display_round_trip(q in 0usize..8, mask in any::<u8>()) {
        let s = ActiveSet::new(q, (0..q).filter(|i| mask & (1 << i) != 0)).unwrap();
        let again = ActiveSet::from_one_based(q, &s.one_based()).unwrap();
        prop_assert_eq!(&again, &s);
        prop_assert_eq!(s.len() + s.complement().len(), q);
        let shown = s.to_string();
        let parsed: Vec<usize> = shown
            .trim_start_matches('{')
            .trim_end_matches('}')
            .split(',')
            .filter(|t| !t.is_empty())
            .map(|t| t.parse().unwrap())
            .collect();
        prop_assert_eq!(parsed, s.one_based());
    }

    #[test]
    fn threshold_rule_matches_definition(c in vec(-1.0..1.0f64, 0..6), tol in 0.0..1.0f64) {
        let s = kkt::active_set_exact(&c, tol);
        for (i, v) in c.iter().enumerate() {
            prop_assert_eq!(s.contains(i), *v >= -tol);
        }
    }

    #[test]
    fn lu_solves(n in 1usize..6, data in vec(-1.0..1.0f64, 36), b in vec(-1.0..1.0f64, 6)) {
        let a = Matrix::from_row_major(n, n, data[..n * n].to_vec()).unwrap();
        let lu = lu_factor(&a).unwrap();
        prop_assume!(!lu.is_singular());
        let x = lu.solve(&b[..n]).unwrap();
        let inv_norm = lu.inverse().unwrap().norm_inf();
        prop_assume!(a.norm_inf() * inv_norm < 1e8);
        let resid = a.mul_vec(x.as_slice()).sub(&Vector::new(b[..n].to_vec()).unwrap()).norm_inf();
        prop_assert!(resid <= 1e-10 * (1.0 + a.norm_inf() * x.norm_inf()));
        prop_assert!(lu.permute_rows(&a).sub(&lu.l().matmul(&lu.u())).max_abs() <= 1e-12 * a.norm_inf());
    }

    #[test]
    fn simplex_agrees_with_vertices(
        (n, m) in (1usize..=5).prop_flat_map(|n| (Just(n), 0..=n.min(3))),
        a in vec(-1.0..1.0f64, 15),
        cost in vec(-1.0..1.0f64, 5),
        lower in vec(-2.0..0.0f64, 5),
        width in vec(0.1..3.0f64, 5),
        t in vec(0.0..1.0f64, 5),
    ) {
        let upper: Vec<f64> = lower.iter().zip(&width).map(|(l, w)| l + w).collect();
        let x0: Vec<f64> = (0..n).map(|j| lower[j] + t[j] * width[j]).collect();
        let a = Matrix::from_row_major(m, n, a[..m * n].to_vec()).unwrap();
        let b = a.mul_vec(&x0).into_vec();
        let lp = StandardLp::new(cost[..n].to_vec(), a, b, lower[..n].to_vec(), upper[..n].to_vec()).unwrap();
        let sol = simplex_solve(&lp, 10_000).unwrap();
        prop_assert_eq!(sol.status, LpStatus::Optimal);
        let best = vertex_enumeration(&lp).unwrap();
        prop_assert!((sol.objective - best).abs() <= 1e-7);
        prop_assert!(certified(&lp, &sol));
    }

    #[test]
    fn lp_identifier_multipliers_in_box((ev, _) in evaluation_strategy()) {
        let params = LpLpecParams::default();
        let res = identify_lp(&ev, &params).unwrap();
        prop_assert!(res.multipliers.z.iter().all(|z| *z >= 0.0 && *z <= params.m_box));
        let rho = kkt::rho(&ev, &res.multipliers).unwrap();
        prop_assert!((rho - res.rho_tilde).abs() <= 1e-9 * (1.0 + rho));
        prop_assert!(res.threshold >= 0.0);
    }

    #[test]
    fn qp_dual_invariants((ev, _) in evaluation_strategy(), theta in 0.5..20.0f64) {
        let params = QpParams { theta, ..QpParams::default() };
        let res = solve_penalized_qp(&ev, &params).unwrap();
        prop_assert!(res.gap >= -1e-10);
        prop_assert!(res.beta.iter().all(|b| *b >= 0.0 && *b <= params.nu));
        prop_assert!(res.alpha.iter().all(|a| a.abs() <= params.nu));
        let stat = ev.lagrangian_grad(res.alpha.as_slice(), res.beta.as_slice()).add(&res.d.scale(theta));
        prop_assert!(stat.norm_inf() <= 1e-10 * (1.0 + params.nu * 10.0));
    }

    #[test]
    fn qp_estimate_uses_linearization((ev, _) in evaluation_strategy()) {
        let params = QpParams::default();
        if let Ok(res) = identify_qp(&ev, &params) {
            let lin = ev.jac_c.tr_mul_vec(res.d.as_slice()).add(&ev.c_val);
            for i in 0..ev.c_val.len() {
                prop_assert_eq!(res.active_estimate.contains(i), lin[i] >= -params.activity_tol);
            }
        }
    }

    #[test]
    fn entrywise_bounds_scale_with_dims(level in 0.0..1.0f64, n in 1usize..6, p in 0usize..3, q in 0usize..5) {
        let b = ErrorBounds::from_entrywise(level, Dims { n, p, q });
        let dims = Dims { n, p, q };
        prop_assert!(kkt::eps_rho_bar(&b, dims, 1.0) >= 0.0);
        prop_assert!(kkt::eps_rho(&b, dims, 1.0) >= 0.0);
        prop_assert_eq!(b.is_zero(), level == 0.0);
    }
}
