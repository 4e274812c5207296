//! Experiment drivers: success-fraction grids around a known minimizer and
//! identification along quadratic-penalty descent trajectories.
//!
//! Both drivers run in `f64` and are deterministic given their master seed.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::kkt::ActiveSet;
use crate::lp::{identify_lp, LpLpecParams};
use crate::problem::{
    builtin_problem, evaluate_noisy, penalty_objective, Evaluation, NoiseSpec, ProblemError,
    TestProblem,
};
use crate::qp::{identify_qp, QpParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExperimentError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error("problem `{0}` has no reference minimizer or active set")]
    MissingReference(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("no grid cells within the requested region")]
    EmptyRegion,
    #[error("penalty descent diverged at iteration {iteration} (objective {value:e})")]
    Diverged { iteration: usize, value: f64 },
    #[error("line search failed at iteration {iteration}")]
    LineSearch { iteration: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Lp,
    Qp,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Lp, Method::Qp];

    pub fn name(self) -> &'static str {
        match self {
            Method::Lp => "lp",
            Method::Qp => "qp",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lp" => Ok(Method::Lp),
            "qp" => Ok(Method::Qp),
            other => Err(ExperimentError::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// Parameters of both identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IdentifierParams {
    pub lp: LpLpecParams<f64>,
    pub qp: QpParams<f64>,
}

/// Estimates from both identifiers; `None` when a solve failed.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimates {
    pub lp: Option<ActiveSet>,
    pub qp: Option<ActiveSet>,
}

impl Estimates {
    pub fn get(&self, method: Method) -> Option<&ActiveSet> {
        match method {
            Method::Lp => self.lp.as_ref(),
            Method::Qp => self.qp.as_ref(),
        }
    }
}

pub fn identify_both(ev: &Evaluation<f64>, params: &IdentifierParams) -> Estimates {
    Estimates {
        lp: identify_lp(ev, &params.lp).ok().map(|r| r.active_estimate),
        qp: identify_qp(ev, &params.qp).ok().map(|r| r.active_estimate),
    }
}

/// splitmix64 finalizer folded over the parts.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    parts.iter().fold(mix(master), |acc, &p| mix(acc ^ mix(p)))
}

fn reference(problem: &TestProblem<f64>) -> Result<(Vec<f64>, ActiveSet), ExperimentError> {
    match (&problem.x_star, &problem.a_star) {
        (Some(x), Some(a)) => Ok((x.as_slice().to_vec(), a.clone())),
        _ => Err(ExperimentError::MissingReference(problem.name.clone())),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub problem: String,
    /// Grid center; the problem's minimizer when `None`.
    pub center: Option<[f64; 2]>,
    pub half_width: f64,
    /// Points per axis.
    pub resolution: usize,
    pub noise_levels: Vec<f64>,
    /// Trials per nonzero noise level; zero noise always uses one.
    pub trials: usize,
    pub params: IdentifierParams,
    pub seed: u64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            problem: "f1".into(),
            center: None,
            half_width: 0.4,
            resolution: 81,
            noise_levels: vec![0.0, 1e-2, 1e-1],
            trials: 8,
            params: IdentifierParams::default(),
            seed: 0,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.resolution < 2 {
            return Err(ExperimentError::Config(format!(
                "resolution must be at least 2, got {}",
                self.resolution
            )));
        }
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(ExperimentError::Config(format!(
                "half-width must be positive, got {}",
                self.half_width
            )));
        }
        if self.trials == 0 {
            return Err(ExperimentError::Config("trials must be at least 1".into()));
        }
        if self.noise_levels.is_empty() {
            return Err(ExperimentError::Config(
                "at least one noise level is required".into(),
            ));
        }
        if let Some(bad) = self
            .noise_levels
            .iter()
            .find(|e| !(**e >= 0.0 && e.is_finite()))
        {
            return Err(ExperimentError::Config(format!(
                "noise level must be finite and nonnegative, got {bad}"
            )));
        }
        Ok(())
    }

    pub fn trials_for(&self, eps: f64) -> usize {
        if eps == 0.0 {
            1
        } else {
            self.trials
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelOutcome {
    pub eps: f64,
    pub trials: usize,
    pub lp: f64,
    pub qp: f64,
}

impl LevelOutcome {
    pub fn fraction(&self, method: Method) -> f64 {
        match method {
            Method::Lp => self.lp,
            Method::Qp => self.qp,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    /// `(i, j)` along `(x₁, x₂)`.
    pub index: (usize, usize),
    pub point: [f64; 2],
    /// One entry per configured noise level, in configuration order.
    pub levels: Vec<LevelOutcome>,
}

/// Coordinates of grid index `k` along one axis.
pub fn grid_coordinate(center: f64, half_width: f64, resolution: usize, k: usize) -> f64 {
    let step = 2.0 * half_width / (resolution - 1) as f64;
    center + (k as f64 - (resolution - 1) as f64 / 2.0) * step
}

/// Success fractions of both identifiers at every grid point and noise
/// level. Cells are returned in row-major `(i, j)` order regardless of how
/// the work is scheduled.
pub fn run_grid(cfg: &GridConfig) -> Result<Vec<GridCell>, ExperimentError> {
    cfg.validate()?;
    let problem = builtin_problem::<f64>(&cfg.problem)?;
    let (x_star, a_star) = reference(&problem)?;
    if x_star.len() != 2 {
        return Err(ExperimentError::Config(
            "grid experiments need a two-variable problem".into(),
        ));
    }
    let center = cfg.center.unwrap_or([x_star[0], x_star[1]]);
    let res = cfg.resolution;
    (0..res * res)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / res, k % res);
            let point = [
                grid_coordinate(center[0], cfg.half_width, res, i),
                grid_coordinate(center[1], cfg.half_width, res, j),
            ];
            let mut levels = Vec::with_capacity(cfg.noise_levels.len());
            for (l, &eps) in cfg.noise_levels.iter().enumerate() {
                let trials = cfg.trials_for(eps);
                let (mut lp, mut qp) = (0usize, 0usize);
                for t in 0..trials {
                    let spec = NoiseSpec::new(
                        eps,
                        derive_seed(cfg.seed, &[k as u64, l as u64, t as u64]),
                    )?;
                    let ev = evaluate_noisy(problem.oracle.as_ref(), &point, &spec)?;
                    let est = identify_both(&ev, &cfg.params);
                    lp += usize::from(est.lp.as_ref() == Some(&a_star));
                    qp += usize::from(est.qp.as_ref() == Some(&a_star));
                }
                levels.push(LevelOutcome {
                    eps,
                    trials,
                    lp: lp as f64 / trials as f64,
                    qp: qp as f64 / trials as f64,
                });
            }
            Ok(GridCell {
                index: (i, j),
                point,
                levels,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionStat {
    pub eps: f64,
    pub cells: usize,
    pub lp: f64,
    pub qp: f64,
}

impl RegionStat {
    pub fn mean(&self, method: Method) -> f64 {
        match method {
            Method::Lp => self.lp,
            Method::Qp => self.qp,
        }
    }
}

/// Slack on the region test so that grid points nominally on the boundary
/// are not lost to coordinate roundoff.
pub const REGION_SLACK: f64 = 1e-12;

/// Mean success fraction per method and noise level over cells with
/// `‖point − center‖∞ ≤ radius`.
pub fn success_statistics(
    cells: &[GridCell],
    radius: f64,
    center: &[f64],
) -> Result<Vec<RegionStat>, ExperimentError> {
    if !(radius > 0.0) {
        return Err(ExperimentError::Config(format!(
            "radius must be positive, got {radius}"
        )));
    }
    if center.len() != 2 {
        return Err(ExperimentError::Config(
            "region center must have two coordinates".into(),
        ));
    }
    let inside: Vec<&GridCell> = cells
        .iter()
        .filter(|c| {
            (c.point[0] - center[0])
                .abs()
                .max((c.point[1] - center[1]).abs())
                <= radius + REGION_SLACK
        })
        .collect();
    let Some(first) = inside.first() else {
        return Err(ExperimentError::EmptyRegion);
    };
    let count = inside.len() as f64;
    Ok(first
        .levels
        .iter()
        .enumerate()
        .map(|(l, level)| RegionStat {
            eps: level.eps,
            cells: inside.len(),
            lp: inside.iter().map(|c| c.levels[l].lp).sum::<f64>() / count,
            qp: inside.iter().map(|c| c.levels[l].qp).sum::<f64>() / count,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmijoRule {
    pub initial: f64,
    pub shrink: f64,
    pub slope: f64,
    pub max_backtracks: usize,
}

impl Default for ArmijoRule {
    fn default() -> Self {
        Self {
            initial: 1.0,
            shrink: 0.5,
            slope: 1e-4,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalMode {
    Exact,
    /// Identification on `trials` independent noisy evaluations per iterate.
    Noisy {
        eps: f64,
        trials: usize,
    },
}

/// Start point of the penalty descent for the built-in problems.
pub fn default_start(problem: &str) -> Option<[f64; 2]> {
    match problem {
        "f1" => Some([0.4, 0.3]),
        "f2" => Some([0.2, -0.3]),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryConfig {
    pub problem: String,
    /// Quadratic penalty weight `μ`.
    pub mu: f64,
    pub armijo: ArmijoRule,
    pub grad_tol: f64,
    pub max_iters: usize,
    pub mode: EvalMode,
    pub params: IdentifierParams,
    pub seed: u64,
    /// Overrides [`default_start`].
    pub start: Option<Vec<f64>>,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            problem: "f1".into(),
            mu: 100.0,
            armijo: ArmijoRule::default(),
            grad_tol: 1e-6,
            max_iters: 20_000,
            mode: EvalMode::Exact,
            params: IdentifierParams::default(),
            seed: 0,
            start: None,
        }
    }
}

/// Divergence guard on the penalty objective.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodTrace {
    /// Mean `|estimate ∩ a_star|`; failed solves count as zero.
    pub correct: f64,
    /// Mean `|estimate \ a_star|`.
    pub spurious: f64,
    /// Fraction of trials with `estimate = a_star`.
    pub exact: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub x: Vec<f64>,
    pub objective: f64,
    pub grad_norm: f64,
    pub lp: MethodTrace,
    pub qp: MethodTrace,
}

impl TraceRecord {
    pub fn method(&self, method: Method) -> &MethodTrace {
        match method {
            Method::Lp => &self.lp,
            Method::Qp => &self.qp,
        }
    }
}

fn trace_for(estimates: &[Option<&ActiveSet>], a_star: &ActiveSet) -> MethodTrace {
    let n = estimates.len() as f64;
    let (mut correct, mut spurious, mut exact) = (0.0, 0.0, 0.0);
    for est in estimates.iter().flatten() {
        let hit = est.intersection_len(a_star);
        correct += hit as f64;
        spurious += (est.len() - hit) as f64;
        exact += f64::from(u8::from(*est == a_star));
    }
    MethodTrace {
        correct: correct / n,
        spurious: spurious / n,
        exact: exact / n,
    }
}

/// Gradient descent with Armijo backtracking on the quadratic penalty
/// function, running both identifiers at every iterate.
///
/// The optimizer always steps on exact values; in noisy mode only the
/// identifiers see perturbed evaluations, with fresh noise per trial. The
/// trace ends at the first iterate whose penalty gradient norm is below
/// `grad_tol`, or after `max_iters` steps.
pub fn run_trajectory(cfg: &TrajectoryConfig) -> Result<Vec<TraceRecord>, ExperimentError> {
    if !(cfg.mu > 0.0) {
        return Err(ExperimentError::Config(format!(
            "mu must be positive, got {}",
            cfg.mu
        )));
    }
    if !(cfg.grad_tol > 0.0) {
        return Err(ExperimentError::Config(format!(
            "gradient tolerance must be positive, got {}",
            cfg.grad_tol
        )));
    }
    let a = cfg.armijo;
    if !(a.initial > 0.0 && a.shrink > 0.0 && a.shrink < 1.0 && a.slope > 0.0 && a.slope < 1.0) {
        return Err(ExperimentError::Config(
            "Armijo parameters out of range".into(),
        ));
    }
    let (eps, trials) = match cfg.mode {
        EvalMode::Exact => (0.0, 1),
        EvalMode::Noisy { eps, trials } => {
            if trials == 0 {
                return Err(ExperimentError::Config("trials must be at least 1".into()));
            }
            (eps, trials)
        }
    };
    let problem = builtin_problem::<f64>(&cfg.problem)?;
    let (_, a_star) = reference(&problem)?;
    let oracle = problem.oracle.as_ref();
    let mut x = match &cfg.start {
        Some(s) => s.clone(),
        None => default_start(&cfg.problem)
            .map(|s| s.to_vec())
            .ok_or_else(|| {
                ExperimentError::Config(format!("no start point for `{}`", cfg.problem))
            })?,
    };

    let mut records = Vec::new();
    let (mut value, mut grad) = penalty_objective(oracle, &x, cfg.mu)?;
    for iteration in 0..=cfg.max_iters {
        if !value.is_finite() || value > DIVERGENCE_LIMIT {
            return Err(ExperimentError::Diverged { iteration, value });
        }
        let grad_norm = grad.norm2();
        let mut lp = Vec::with_capacity(trials);
        let mut qp = Vec::with_capacity(trials);
        for t in 0..trials {
            let spec = NoiseSpec::new(eps, derive_seed(cfg.seed, &[iteration as u64, t as u64]))?;
            let est = identify_both(&evaluate_noisy(oracle, &x, &spec)?, &cfg.params);
            lp.push(est.lp);
            qp.push(est.qp);
        }
        records.push(TraceRecord {
            iteration,
            x: x.clone(),
            objective: value,
            grad_norm,
            lp: trace_for(&lp.iter().map(Option::as_ref).collect::<Vec<_>>(), &a_star),
            qp: trace_for(&qp.iter().map(Option::as_ref).collect::<Vec<_>>(), &a_star),
        });
        if grad_norm <= cfg.grad_tol || iteration == cfg.max_iters {
            break;
        }

        let gg = grad_norm * grad_norm;
        let mut step = a.initial;
        let mut accepted = None;
        for _ in 0..=a.max_backtracks {
            let trial: Vec<f64> = x
                .iter()
                .zip(grad.iter())
                .map(|(xi, gi)| xi - step * gi)
                .collect();
            let (tv, tg) = penalty_objective(oracle, &trial, cfg.mu)?;
            if tv <= value - a.slope * step * gg {
                accepted = Some((trial, tv, tg));
                break;
            }
            step *= a.shrink;
        }
        let Some((nx, nv, ng)) = accepted else {
            return Err(ExperimentError::LineSearch { iteration });
        };
        x = nx;
        value = nv;
        grad = ng;
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(point: [f64; 2], lp: f64, qp: f64) -> GridCell {
        GridCell {
            index: (0, 0),
            point,
            levels: vec![LevelOutcome {
                eps: 0.0,
                trials: 1,
                lp,
                qp,
            }],
        }
    }

    #[test]
    fn seeds_differ_by_part() {
        let a = derive_seed(7, &[1, 2, 3]);
        assert_eq!(a, derive_seed(7, &[1, 2, 3]));
        assert_ne!(a, derive_seed(7, &[1, 3, 2]));
        assert_ne!(a, derive_seed(8, &[1, 2, 3]));
    }

    #[test]
    fn grid_coordinates_are_symmetric() {
        assert_eq!(grid_coordinate(1.0, 0.5, 3, 0), 0.5);
        assert_eq!(grid_coordinate(1.0, 0.5, 3, 1), 1.0);
        assert_eq!(grid_coordinate(1.0, 0.5, 3, 2), 1.5);
    }

    #[test]
    fn statistics_of_uniform_and_split_regions() {
        let all = vec![cell([0.0, 0.0], 1.0, 1.0), cell([0.1, 0.0], 1.0, 1.0)];
        let s = success_statistics(&all, 0.2, &[0.0, 0.0]).unwrap();
        assert_eq!((s[0].lp, s[0].qp), (1.0, 1.0));

        let split = vec![cell([0.0, 0.0], 1.0, 0.0), cell([0.0, 0.1], 0.0, 1.0)];
        let s = success_statistics(&split, 0.2, &[0.0, 0.0]).unwrap();
        assert_eq!((s[0].lp, s[0].qp, s[0].cells), (0.5, 0.5, 2));
    }

    #[test]
    fn statistics_reject_empty_region() {
        let far = vec![cell([5.0, 5.0], 1.0, 1.0)];
        assert_eq!(
            success_statistics(&far, 0.1, &[0.0, 0.0]).unwrap_err(),
            ExperimentError::EmptyRegion
        );
        assert!(success_statistics(&far, 0.0, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn grid_config_validation() {
        let mut cfg = GridConfig {
            resolution: 1,
            ..GridConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.resolution = 3;
        cfg.trials = 0;
        assert!(cfg.validate().is_err());
        cfg.trials = 2;
        cfg.noise_levels = vec![-1.0];
        assert!(cfg.validate().is_err());
        assert_eq!(GridConfig::default().trials_for(0.0), 1);
        assert_eq!(GridConfig::default().trials_for(0.1), 8);
    }

    #[test]
    fn single_exact_trial_is_binary() {
        let cfg = GridConfig {
            resolution: 3,
            half_width: 0.3,
            noise_levels: vec![0.0],
            ..GridConfig::default()
        };
        for c in run_grid(&cfg).unwrap() {
            for l in &c.levels {
                assert!(l.lp == 0.0 || l.lp == 1.0);
                assert!(l.qp == 0.0 || l.qp == 1.0);
            }
        }
    }

    #[test]
    fn trace_counts() {
        let a_star = ActiveSet::from_one_based(2, &[2]).unwrap();
        let both = ActiveSet::from_one_based(2, &[1, 2]).unwrap();
        let t = trace_for(&[Some(&a_star), Some(&both), None, Some(&a_star)], &a_star);
        assert_eq!((t.correct, t.spurious, t.exact), (0.75, 0.25, 0.5));
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("xp".parse::<Method>().is_err());
    }
}
