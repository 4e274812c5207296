use std::fs;
use std::io::Write;

use activeset_core::experiments::{
    run_grid, run_trajectory, success_statistics, EvalMode, ExperimentError, GridConfig,
    IdentifierParams, Method, TrajectoryConfig,
};
use activeset_core::kkt::{self, MultiplierPair};
use activeset_core::problem::{builtin_problem, evaluate_noisy, Evaluation, NoiseSpec};
use activeset_core::verify::{run_all, VerifyOptions};
use activeset_core::{identify_lp, identify_qp, QpError};

use crate::config::{Command, RunConfig};
use crate::output::{emit_heatmap_csv, trajectory_csv, write_file};
use crate::CliError;

/// Radius of the neighborhood summarized after a heatmap run.
pub const SUMMARY_RADIUS: f64 = 0.05;

fn io(out: &mut dyn Write, text: String) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|source| CliError::Io {
            path: "<stdout>".into(),
            source,
        })
}

pub fn execute(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    match cfg.command {
        Command::Heatmap => cmd_heatmap(cfg, out),
        Command::Trajectory => cmd_trajectory(cfg, out),
        Command::Identify => cmd_identify(cfg, out),
        Command::Verify => cmd_verify(cfg, out),
    }
}

fn problem_error(e: activeset_core::problem::ProblemError) -> CliError {
    CliError::Usage(e.to_string())
}

fn prepare_out(cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.out).map_err(|source| CliError::Io {
        path: cfg.out.clone(),
        source,
    })
}

pub fn grid_config(cfg: &RunConfig) -> GridConfig {
    GridConfig {
        problem: cfg.problem.clone(),
        center: None,
        half_width: cfg.half_width,
        resolution: cfg.resolution,
        noise_levels: cfg.noise_levels(),
        trials: cfg.trials(),
        params: cfg.params,
        seed: cfg.seed,
    }
}

fn cmd_heatmap(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    if cfg.png && !cfg!(feature = "png") {
        return Err(CliError::Usage("built without the `png` feature".into()));
    }
    let problem = builtin_problem::<f64>(&cfg.problem).map_err(problem_error)?;
    let cells = run_grid(&grid_config(cfg))?;
    prepare_out(cfg)?;
    let csv = cfg.out.join(format!("heatmap_{}.csv", cfg.problem));
    emit_heatmap_csv(&cells, &csv)?;
    io(out, format!("csv={}\n", csv.display()))?;
    let x_star = problem.x_star.as_ref().map(|x| [x[0], x[1]]);
    if let Some(center) = x_star {
        match success_statistics(&cells, SUMMARY_RADIUS, &center) {
            Ok(stats) => {
                for s in stats {
                    for m in Method::ALL {
                        io(
                            out,
                            format!(
                                "region_mean method={m} eps={:e} cells={} mean={:.6}\n",
                                s.eps,
                                s.cells,
                                s.mean(m)
                            ),
                        )?;
                    }
                }
            }
            Err(ExperimentError::EmptyRegion) => {}
            Err(e) => return Err(e.into()),
        }
    }
    #[cfg(feature = "png")]
    if cfg.png {
        let png = cfg.out.join(format!("heatmap_{}.png", cfg.problem));
        for path in crate::render::render_heatmap(&csv, &png, x_star)? {
            io(out, format!("png={}\n", path.display()))?;
        }
    }
    Ok(())
}

fn cmd_trajectory(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    builtin_problem::<f64>(&cfg.problem).map_err(problem_error)?;
    let mut runs = Vec::new();
    for eps in cfg.noise_levels() {
        let mode = if eps == 0.0 {
            EvalMode::Exact
        } else {
            EvalMode::Noisy {
                eps,
                trials: cfg.trials(),
            }
        };
        let tcfg = TrajectoryConfig {
            problem: cfg.problem.clone(),
            mu: cfg.mu,
            mode,
            params: cfg.params,
            seed: cfg.seed,
            start: cfg.x.clone(),
            ..TrajectoryConfig::default()
        };
        runs.push((eps, run_trajectory(&tcfg)?));
    }
    prepare_out(cfg)?;
    let csv = cfg.out.join(format!("trajectory_{}.csv", cfg.problem));
    write_file(&csv, &trajectory_csv(&runs))?;
    io(out, format!("csv={}\n", csv.display()))?;
    for (eps, records) in &runs {
        let (first, last) = (&records[0], &records[records.len() - 1]);
        for m in Method::ALL {
            io(
                out,
                format!(
                    "trajectory eps={eps:e} method={m} iterations={} correct_first={:.3} correct_final={:.3} grad_norm_final={:e}\n",
                    last.iteration,
                    first.method(m).correct,
                    last.method(m).correct,
                    last.grad_norm
                ),
            )?;
        }
    }
    Ok(())
}

/// `key=value` lines describing both identifiers on one evaluation.
pub fn identify_report(
    ev: &Evaluation<f64>,
    params: &IdentifierParams,
) -> Result<Vec<(String, String)>, CliError> {
    let lp =
        identify_lp(ev, &params.lp).map_err(|e| CliError::Solver(format!("LP identifier: {e}")))?;
    let qp = identify_qp(ev, &params.qp).map_err(|e| match e {
        QpError::Inexact { gap } => CliError::Solver(format!(
            "QP identifier: duality gap {gap:e} above tolerance"
        )),
        other => CliError::Solver(format!("QP identifier: {other}")),
    })?;
    let psi =
        |m: &MultiplierPair<f64>| kkt::psi(ev, m).map_err(|e| CliError::Solver(e.to_string()));
    let qp_mult = MultiplierPair::new(qp.alpha.clone(), qp.beta.clone());
    Ok(vec![
        ("A_LP".into(), lp.active_estimate.to_string()),
        ("A_QP".into(), qp.active_estimate.to_string()),
        ("rho_tilde".into(), format!("{:e}", lp.rho_tilde)),
        ("rho_bar_tilde".into(), format!("{:e}", lp.rho_bar_tilde)),
        ("threshold".into(), format!("{:e}", lp.threshold)),
        ("psi_lp".into(), format!("{:e}", psi(&lp.multipliers)?)),
        ("gap".into(), format!("{:e}", qp.gap)),
        ("psi_qp".into(), format!("{:e}", psi(&qp_mult)?)),
        (
            "activity_tol".into(),
            format!("{:e}", params.qp.activity_tol),
        ),
    ])
}

fn cmd_identify(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let problem = builtin_problem::<f64>(&cfg.problem).map_err(problem_error)?;
    let x = match &cfg.x {
        Some(x) => x.clone(),
        None => problem
            .x_star
            .as_ref()
            .map(|x| x.as_slice().to_vec())
            .ok_or_else(|| CliError::Usage("no reference point; pass --x".into()))?,
    };
    let n = problem.oracle.dims().n;
    if x.len() != n {
        return Err(CliError::Usage(format!(
            "--x has {} entries, problem has {n} variables",
            x.len()
        )));
    }
    let eps = cfg.noise_levels()[0];
    let spec = NoiseSpec::new(eps, cfg.seed).map_err(problem_error)?;
    let ev = evaluate_noisy(problem.oracle.as_ref(), &x, &spec).map_err(problem_error)?;
    let xs: Vec<String> = x.iter().map(|v| format!("{v:e}")).collect();
    io(
        out,
        format!("problem={}\nx={}\neps={eps:e}\n", cfg.problem, xs.join(",")),
    )?;
    for (k, v) in identify_report(&ev, &cfg.params)? {
        io(out, format!("{k}={v}\n"))?;
    }
    Ok(())
}

fn cmd_verify(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let outcomes = run_all(&VerifyOptions {
        seed: cfg.seed,
        quick: cfg.quick,
        ..VerifyOptions::default()
    });
    let mut failed = 0;
    for o in &outcomes {
        let status = if o.passed() { "PASS" } else { "FAIL" };
        let mut line = format!("{status} {}: {} ({} cases", o.module, o.property, o.cases);
        if o.failures > 0 {
            line += &format!(", {} failures", o.failures);
        }
        line += ")";
        if let Some(note) = &o.note {
            line += &format!(" [{note}]");
        }
        if let Some(c) = &o.counterexample {
            line += &format!("\n    counterexample: {c}");
        }
        io(out, line + "\n")?;
        failed += usize::from(!o.passed());
    }
    if failed > 0 {
        return Err(CliError::VerifyFailed(failed));
    }
    Ok(())
}
