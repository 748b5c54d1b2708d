//! Retraining dynamics: RRM, RGD and their finite-sample versions RERM and
//! REGD, with convergence, divergence and 2-cycle detection.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::losses::LossSpec;
use crate::maps::DistributionMap;
use crate::risk::{
    empirical_value_grad, gradient_on_atoms, performative_risk, risk_gradient, risk_on_atoms,
    sample, McConfig, RiskEstimate,
};
use crate::rng::derive_seed;
use crate::space::ParameterSpace;
use crate::vecops;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub inner_tol: f64,
    pub max_inner_iters: usize,
    pub shrink: f64,
    pub sufficient_decrease: f64,
    pub outer_tol: f64,
    pub max_outer_iters: usize,
    pub divergence_radius: f64,
    pub oscillation_window: usize,
    /// Monte Carlo size for PR estimates on maps without a finite support.
    pub risk_samples: usize,
    /// Ignore closed-form minimizers and always run the inner solver.
    pub force_solver: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            inner_tol: 1e-8,
            max_inner_iters: 10_000,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            outer_tol: 1e-7,
            max_outer_iters: 1000,
            divergence_radius: 1e8,
            oscillation_window: 6,
            risk_samples: 10_000,
            force_solver: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("inner_tol", self.inner_tol),
            ("outer_tol", self.outer_tol),
            ("sufficient_decrease", self.sufficient_decrease),
            ("divergence_radius", self.divergence_radius),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "shrink must lie in (0, 1), got {}",
                self.shrink
            )));
        }
        if self.oscillation_window == 0 || self.max_inner_iters == 0 {
            return Err(Error::InvalidParameter(
                "oscillation_window and max_inner_iters must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// Step `t` moved by at most the outer tolerance.
    Converged(usize),
    MaxIters,
    Diverged,
    Oscillating,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub procedure: String,
    pub iterates: Vec<Vec<f64>>,
    /// PR at each iterate.
    pub risks: Vec<RiskEstimate>,
    /// `step_norms[t] = ‖iterates[t+1] − iterates[t]‖`.
    pub step_norms: Vec<f64>,
    /// Samples drawn at each step; empty for population procedures.
    pub n_schedule: Vec<usize>,
    pub verdict: Verdict,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.iterates
            .last()
            .expect("trajectory has an initial iterate")
    }

    pub fn converged(&self) -> bool {
        matches!(self.verdict, Verdict::Converged(_))
    }

    /// ‖θ_{t+1} − target‖ / ‖θ_t − target‖ for every t whose denominator
    /// exceeds `floor`.
    pub fn contraction_ratios(&self, target: &[f64], floor: f64) -> Vec<f64> {
        self.iterates
            .windows(2)
            .filter_map(|w| {
                let den = vecops::dist(&w[0], target);
                (den > floor).then(|| vecops::dist(&w[1], target) / den)
            })
            .collect()
    }

    /// step_norms[t+1] / step_norms[t] where the denominator exceeds `floor`.
    pub fn step_ratios(&self, floor: f64) -> Vec<f64> {
        self.step_norms
            .windows(2)
            .filter(|w| w[0] > floor)
            .map(|w| w[1] / w[0])
            .collect()
    }

    /// CSV with header `iter,theta_0..theta_{d-1},perf_risk,perf_risk_se,step_norm,n_samples`.
    /// The last row has an empty step norm; `n_samples` is empty where no
    /// draws were made.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let d = self.iterates.first().map_or(0, |v| v.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["iter".to_string()];
        header.extend((0..d).map(|k| format!("theta_{k}")));
        header.extend(["perf_risk", "perf_risk_se", "step_norm", "n_samples"].map(String::from));
        w.write_record(&header)?;
        for (t, theta) in self.iterates.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(theta.iter().map(|v| v.to_string()));
            let r = self.risks.get(t);
            row.push(r.map_or(String::new(), |r| r.mean.to_string()));
            row.push(r.map_or(String::new(), |r| r.std_error.to_string()));
            row.push(
                self.step_norms
                    .get(t)
                    .map_or(String::new(), |s| s.to_string()),
            );
            row.push(
                self.n_schedule
                    .get(t)
                    .map_or(String::new(), |n| n.to_string()),
            );
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Outcome of one inner minimization.
#[derive(Clone, Debug, PartialEq)]
pub struct InnerSolution {
    pub theta: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// ‖θ − Π(θ − ∇f(θ))‖ at exit.
    pub residual: f64,
}

fn gradient_mapping_residual(space: &ParameterSpace, x: &[f64], g: &[f64]) -> f64 {
    let mut y: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
    space.project_in_place(&mut y);
    vecops::dist(x, &y)
}

/// Projected gradient descent with Armijo backtracking. The trial step
/// starts at 1, shrinks on rejection and grows after each accepted step.
pub fn projected_gradient_descent<F>(
    mut f: F,
    x0: &[f64],
    space: &ParameterSpace,
    cfg: &SolverConfig,
) -> Result<InnerSolution>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut x = space.project(x0);
    let (mut fx, mut g) = f(&x)?;
    let mut step = 1.0;
    for it in 0..cfg.max_inner_iters {
        let residual = gradient_mapping_residual(space, &x, &g);
        if residual <= cfg.inner_tol {
            return Ok(InnerSolution {
                theta: x,
                value: fx,
                iterations: it,
                residual,
            });
        }
        loop {
            let mut cand: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            space.project_in_place(&mut cand);
            if cand == x {
                return Err(Error::SolverStall {
                    iterations: it,
                    residual,
                });
            }
            let d = vecops::sub(&cand, &x);
            let (fc, gc) = f(&cand)?;
            let gd = vecops::dot(&g, &d);
            // When the required decrease is below the rounding level of f,
            // values cannot rank the points; fall back to the slope along
            // the step (approximate Wolfe).
            let slack = 4.0 * f64::EPSILON * fx.abs();
            let accept = if -cfg.sufficient_decrease * gd > slack {
                fc <= fx + cfg.sufficient_decrease * gd
            } else {
                fc <= fx + slack
                    && vecops::dot(&gc, &d) <= (2.0 * cfg.sufficient_decrease - 1.0) * gd
            };
            if accept {
                x = cand;
                fx = fc;
                g = gc;
                step /= cfg.shrink;
                break;
            }
            step *= cfg.shrink;
        }
    }
    let residual = gradient_mapping_residual(space, &x, &g);
    if residual <= cfg.inner_tol {
        return Ok(InnerSolution {
            theta: x,
            value: fx,
            iterations: cfg.max_inner_iters,
            residual,
        });
    }
    Err(Error::SolverMaxIterations {
        iterations: cfg.max_inner_iters,
        residual,
    })
}

/// One exact retraining step G(θ): the minimizer of DPR(θ, ·) over Θ.
///
/// Uses the closed form when the map has one for this loss, otherwise the
/// inner solver on the exact support, otherwise on `n` draws seeded with
/// `seed`.
pub fn rrm_step(
    map: &dyn DistributionMap,
    loss: &LossSpec,
    space: &ParameterSpace,
    theta: &[f64],
    cfg: &SolverConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    map.validate(theta)?;
    loss.check_dims(theta.len(), map.feature_dim())?;
    if !cfg.force_solver {
        if let Some(oracle) = map.closed_forms(loss) {
            return Ok(oracle.minimizer(theta, space));
        }
    }
    if let Some(atoms) = map.support(theta)? {
        let sol = projected_gradient_descent(
            |phi| {
                Ok((
                    risk_on_atoms(loss, &atoms, phi)?,
                    gradient_on_atoms(loss, &atoms, phi)?,
                ))
            },
            theta,
            space,
            cfg,
        )?;
        return Ok(sol.theta);
    }
    if n == 0 {
        return Err(Error::InvalidParameter("n_per_step must be >= 1".into()));
    }
    let samples = sample(map, theta, n, seed)?;
    let sol = projected_gradient_descent(
        |phi| empirical_value_grad(loss, &samples, phi),
        theta,
        space,
        cfg,
    )?;
    Ok(sol.theta)
}

/// Per-step sample counts for the finite-sample procedures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SampleSchedule {
    Constant {
        n: usize,
    },
    /// n_t = ⌈K·log((t+2)²π²/(6p)) / (εδ)^m⌉.
    Theorem {
        k: f64,
        eps: f64,
        delta: f64,
        p: f64,
        m: usize,
    },
    /// Population quantities from the exact support, no sampling.
    Exact,
}

impl SampleSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SampleSchedule::Constant { n: 0 } => Err(Error::InvalidParameter(
                "constant schedule needs n >= 1".into(),
            )),
            SampleSchedule::Theorem {
                k,
                eps,
                delta,
                p,
                m,
            } => {
                if !(k > 0.0 && eps > 0.0 && delta > 0.0 && delta < 1.0 && p > 0.0 && p < 1.0)
                    || m == 0
                {
                    return Err(Error::InvalidParameter(format!(
                        "theorem schedule needs K > 0, eps > 0, 0 < delta < 1, 0 < p < 1, m >= 1; got K = {k}, eps = {eps}, delta = {delta}, p = {p}, m = {m}"
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Samples at step t, `None` for the exact schedule.
    pub fn n_at(&self, t: usize) -> Option<usize> {
        match *self {
            SampleSchedule::Constant { n } => Some(n),
            SampleSchedule::Theorem {
                k,
                eps,
                delta,
                p,
                m,
            } => {
                let tt = (t + 2) as f64;
                let log = (tt * tt * PI * PI / (6.0 * p)).ln();
                let n = (k * log / (eps * delta).powi(m as i32)).ceil();
                Some(n.max(1.0) as usize)
            }
            SampleSchedule::Exact => None,
        }
    }
}

fn nan_risk() -> RiskEstimate {
    RiskEstimate {
        mean: f64::NAN,
        std_error: f64::NAN,
        n_samples: 1,
        exact: false,
    }
}

struct Recorder<'a> {
    map: &'a dyn DistributionMap,
    loss: &'a LossSpec,
    cfg: &'a SolverConfig,
    seed: u64,
}

impl Recorder<'_> {
    fn risk(&self, theta: &[f64]) -> Result<Option<RiskEstimate>> {
        let mc = McConfig::new(self.cfg.risk_samples, self.seed);
        match performative_risk(self.map, self.loss, theta, &mc) {
            Ok(r) => Ok(Some(r)),
            Err(Error::NonFinite { .. }) | Err(Error::ProbabilityOutOfRange { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

/// A settled 2-cycle: over the last `oscillation_window` steps every step is
/// large, every second iterate returns to within 1% of a step (or
/// `outer_tol`), and step norms have stopped shrinking.
fn oscillating(iterates: &[Vec<f64>], cfg: &SolverConfig) -> bool {
    let w = cfg.oscillation_window;
    let len = iterates.len();
    if len < w + 2 {
        return false;
    }
    let first = vecops::dist(&iterates[len - w - 1], &iterates[len - w - 2]);
    let last = vecops::dist(&iterates[len - 1], &iterates[len - 2]);
    last >= (1.0 - 1e-3) * first
        && (len - w - 2..len - 2).all(|k| {
            let d1 = vecops::dist(&iterates[k + 1], &iterates[k]);
            let d2 = vecops::dist(&iterates[k + 2], &iterates[k]);
            d1 > 1e3 * cfg.outer_tol && d2 <= cfg.outer_tol.max(1e-2 * d1)
        })
}

/// Shared outer loop. `step(t, θ_t)` returns θ_{t+1} and the number of
/// samples it drew.
fn outer_loop<F>(
    procedure: &str,
    rec: Recorder<'_>,
    space: &ParameterSpace,
    theta0: &[f64],
    mut step: F,
) -> Result<Trajectory>
where
    F: FnMut(usize, &[f64]) -> Result<(Vec<f64>, Option<usize>)>,
{
    rec.cfg.validate()?;
    check_dim("theta0", space.dim(), theta0.len())?;
    check_dim("map theta", rec.map.theta_dim(), theta0.len())?;
    if !space.contains(theta0) {
        return Err(Error::InvalidParameter(format!(
            "theta0 = {theta0:?} lies outside the parameter space"
        )));
    }
    let mut traj = Trajectory {
        procedure: procedure.to_string(),
        iterates: vec![theta0.to_vec()],
        risks: vec![rec.risk(theta0)?.unwrap_or_else(nan_risk)],
        step_norms: Vec::new(),
        n_schedule: Vec::new(),
        verdict: Verdict::MaxIters,
    };
    for t in 0..rec.cfg.max_outer_iters {
        let current = traj.iterates[t].clone();
        let (next, drawn) = step(t, &current)?;
        if !vecops::all_finite(&next) {
            traj.verdict = Verdict::Diverged;
            break;
        }
        let sn = vecops::dist(&next, &current);
        let risk = rec.risk(&next)?;
        let escaped = vecops::norm(&next) > rec.cfg.divergence_radius;
        traj.risks.push(risk.unwrap_or_else(nan_risk));
        traj.iterates.push(next);
        traj.step_norms.push(sn);
        if let Some(n) = drawn {
            traj.n_schedule.push(n);
        }
        if escaped || risk.is_none() {
            traj.verdict = Verdict::Diverged;
            break;
        }
        if sn <= rec.cfg.outer_tol {
            traj.verdict = Verdict::Converged(t);
            break;
        }
        if oscillating(&traj.iterates, rec.cfg) {
            traj.verdict = Verdict::Oscillating;
            break;
        }
    }
    Ok(traj)
}

/// Repeated risk minimization θ_{t+1} = G(θ_t).
pub fn rrm(
    map: &dyn DistributionMap,
    loss: &LossSpec,
    space: &ParameterSpace,
    theta0: &[f64],
    cfg: &SolverConfig,
    n_per_step: usize,
    seed: u64,
) -> Result<Trajectory> {
    let rec = Recorder {
        map,
        loss,
        cfg,
        seed,
    };
    outer_loop("rrm", rec, space, theta0, |_, theta| {
        Ok((
            rrm_step(map, loss, space, theta, cfg, n_per_step, seed)?,
            None,
        ))
    })
}

fn gradient_step(space: &ParameterSpace, theta: &[f64], grad: &[f64], eta: f64) -> Vec<f64> {
    let mut next: Vec<f64> = theta.iter().zip(grad).map(|(t, g)| t - eta * g).collect();
    space.project_in_place(&mut next);
    next
}

fn check_eta(eta: f64) -> Result<()> {
    if eta.is_finite() && eta >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "step size eta must be >= 0, got {eta}"
        )))
    }
}

/// Repeated gradient descent θ_{t+1} = Π(θ_t − η E_{D(θ_t)} ∇ℓ(Z; θ_t)).
/// Maps without a finite support use `n_per_step` draws, fresh per step.
#[allow(clippy::too_many_arguments)]
pub fn rgd(
    map: &dyn DistributionMap,
    loss: &LossSpec,
    space: &ParameterSpace,
    theta0: &[f64],
    eta: f64,
    cfg: &SolverConfig,
    n_per_step: usize,
    seed: u64,
) -> Result<Trajectory> {
    check_eta(eta)?;
    let rec = Recorder {
        map,
        loss,
        cfg,
        seed,
    };
    outer_loop("rgd", rec, space, theta0, |t, theta| {
        let mc = McConfig::new(n_per_step, derive_seed(seed, t as u64));
        let (g, _) = risk_gradient(map, loss, theta, theta, &mc)?;
        Ok((gradient_step(space, theta, &g, eta), None))
    })
}

/// Repeated empirical risk minimization on n_t fresh draws per step.
pub fn rerm(
    map: &dyn DistributionMap,
    loss: &LossSpec,
    space: &ParameterSpace,
    theta0: &[f64],
    schedule: &SampleSchedule,
    cfg: &SolverConfig,
    seed: u64,
) -> Result<Trajectory> {
    schedule.validate()?;
    let rec = Recorder {
        map,
        loss,
        cfg,
        seed,
    };
    outer_loop("rerm", rec, space, theta0, |t, theta| {
        map.validate(theta)?;
        loss.check_dims(theta.len(), map.feature_dim())?;
        match schedule.n_at(t) {
            None => Ok((rrm_step(map, loss, space, theta, cfg, 0, seed)?, None)),
            Some(n) => {
                let samples = sample(map, theta, n, derive_seed(seed, t as u64))?;
                let sol = projected_gradient_descent(
                    |phi| empirical_value_grad(loss, &samples, phi),
                    theta,
                    space,
                    cfg,
                )?;
                Ok((sol.theta, Some(n)))
            }
        }
    })
}

/// Repeated empirical gradient descent: one projected step on the mean
/// gradient over n_t fresh draws.
#[allow(clippy::too_many_arguments)]
pub fn regd(
    map: &dyn DistributionMap,
    loss: &LossSpec,
    space: &ParameterSpace,
    theta0: &[f64],
    eta: f64,
    schedule: &SampleSchedule,
    cfg: &SolverConfig,
    seed: u64,
) -> Result<Trajectory> {
    check_eta(eta)?;
    schedule.validate()?;
    let rec = Recorder {
        map,
        loss,
        cfg,
        seed,
    };
    let procedure = if *schedule == SampleSchedule::Exact {
        "rgd"
    } else {
        "regd"
    };
    outer_loop(procedure, rec, space, theta0, |t, theta| {
        let step_seed = derive_seed(seed, t as u64);
        match schedule.n_at(t) {
            None => {
                if map.support(theta)?.is_none() {
                    return Err(Error::Unsupported(format!(
                        "exact schedule needs a finitely supported map, {} has none",
                        map.name()
                    )));
                }
                let (g, _) = risk_gradient(map, loss, theta, theta, &McConfig::new(1, step_seed))?;
                Ok((gradient_step(space, theta, &g, eta), None))
            }
            Some(n) => {
                let mc = McConfig::new(n, step_seed).forced();
                let (g, _) = risk_gradient(map, loss, theta, theta, &mc)?;
                Ok((gradient_step(space, theta, &g, eta), Some(n)))
            }
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Procedure {
    Rrm,
    Rgd,
    Rerm,
    Regd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationBound {
    Iterations(u64),
    /// The named inequality fails; the theory gives no rate.
    NoGuarantee(String),
}

/// Sufficient iteration count for ‖θ_t − θ_PS‖ ≤ δ from the linear rate of
/// each procedure. `eta` is needed for the gradient procedures.
pub fn theoretical_iteration_bound(
    kind: Procedure,
    eps: f64,
    beta: f64,
    gamma: f64,
    eta: Option<f64>,
    theta0_dist: f64,
    delta: f64,
) -> Result<IterationBound> {
    if !(eps >= 0.0 && beta > 0.0 && gamma > 0.0 && delta > 0.0 && theta0_dist >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "bound needs eps >= 0, beta > 0, gamma > 0, delta > 0, dist >= 0; got eps = {eps}, beta = {beta}, gamma = {gamma}, delta = {delta}, dist = {theta0_dist}"
        )));
    }
    let no = |s: String| Ok(IterationBound::NoGuarantee(s));
    let rate = match kind {
        Procedure::Rrm => {
            if eps >= gamma / beta {
                return no(format!("epsilon >= gamma/beta ({eps} >= {})", gamma / beta));
            }
            1.0 - eps * beta / gamma
        }
        Procedure::Rerm => {
            if eps >= gamma / (2.0 * beta) {
                return no(format!(
                    "epsilon >= gamma/(2 beta) ({eps} >= {})",
                    gamma / (2.0 * beta)
                ));
            }
            1.0 - 2.0 * eps * beta / gamma
        }
        Procedure::Rgd | Procedure::Regd => {
            let eta = eta.ok_or(Error::MissingConstant("eta"))?;
            if !(eta > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "eta must be > 0, got {eta}"
                )));
            }
            if eta > 2.0 / (beta + gamma) {
                return no(format!(
                    "eta > 2/(beta+gamma) ({eta} > {})",
                    2.0 / (beta + gamma)
                ));
            }
            let thr = gamma / ((beta + gamma) * (1.0 + 1.5 * eta * beta));
            if eps >= thr {
                return no(format!(
                    "epsilon >= gamma/((beta+gamma)(1+1.5 eta beta)) ({eps} >= {thr})"
                ));
            }
            let (a, b) = if kind == Procedure::Rgd {
                (1.5, 1.0)
            } else {
                (3.0, 2.0)
            };
            let r =
                eta * (beta * gamma / (beta + gamma) - eps * (a * eta * beta * beta + b * beta));
            if r <= 0.0 {
                return no(format!("non-positive finite-sample rate {r}"));
            }
            r
        }
    };
    if theta0_dist <= delta {
        return Ok(IterationBound::Iterations(0));
    }
    Ok(IterationBound::Iterations(
        ((theta0_dist / delta).ln() / rate).ceil() as u64,
    ))
}

/// Per-step contraction factor each procedure guarantees, if any.
pub fn theoretical_contraction(
    kind: Procedure,
    eps: f64,
    beta: f64,
    gamma: f64,
    eta: Option<f64>,
) -> Option<f64> {
    match kind {
        Procedure::Rrm => (eps < gamma / beta).then_some(eps * beta / gamma),
        Procedure::Rgd => {
            let eta = eta?;
            let c = 1.0
                - eta * (beta * gamma / (beta + gamma) - eps * (1.5 * eta * beta * beta + beta));
            (c < 1.0).then_some(c)
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{BiasedCoinMap, PointMassMap};
    use approx::assert_relative_eq;

    #[test]
    fn iteration_bound_examples() {
        let b = theoretical_iteration_bound(Procedure::Rrm, 0.1, 2.0, 2.0, None, 1.0 / 3.0, 1e-6)
            .unwrap();
        assert_eq!(b, IterationBound::Iterations(15));
        let z =
            theoretical_iteration_bound(Procedure::Rrm, 0.1, 2.0, 2.0, None, 0.01, 0.05).unwrap();
        assert_eq!(z, IterationBound::Iterations(0));
        let g = theoretical_iteration_bound(Procedure::Rgd, 0.5, 1.0, 1.0, Some(1.0), 1.0, 0.1)
            .unwrap();
        assert!(matches!(g, IterationBound::NoGuarantee(_)));
    }

    #[test]
    fn finite_sample_bounds() {
        let d0 = 1.0 / 3.0;
        let r =
            theoretical_iteration_bound(Procedure::Rerm, 0.1, 2.0, 2.0, None, d0, 0.05).unwrap();
        assert_eq!(r, IterationBound::Iterations(3));
        let g = theoretical_iteration_bound(Procedure::Regd, 0.1, 2.0, 2.0, Some(0.25), d0, 0.05)
            .unwrap();
        assert_eq!(g, IterationBound::Iterations(26));
        // at η = 2/(β+γ) the REGD rate vanishes for ε = 0.1
        let h = theoretical_iteration_bound(Procedure::Regd, 0.1, 2.0, 2.0, Some(0.5), d0, 0.05)
            .unwrap();
        assert!(matches!(h, IterationBound::NoGuarantee(_)));
    }

    #[test]
    fn schedule_monotone() {
        let s = SampleSchedule::Theorem {
            k: 8.0,
            eps: 0.1,
            delta: 0.05,
            p: 0.1,
            m: 2,
        };
        let ns: Vec<usize> = (0..50).map(|t| s.n_at(t).unwrap()).collect();
        assert!(ns.windows(2).all(|w| w[0] <= w[1]));
        let expect = (8.0 * (4.0 * PI * PI / 0.6_f64).ln() / (0.005f64 * 0.005)).ceil() as usize;
        assert_eq!(ns[0], expect);
    }

    #[test]
    fn solver_hits_quadratic_minimum() {
        let space = ParameterSpace::interval(-5.0, 5.0).unwrap();
        let sol = projected_gradient_descent(
            |x| Ok(((x[0] - 1.5).powi(2) * 3.0, vec![6.0 * (x[0] - 1.5)])),
            &[4.0],
            &space,
            &SolverConfig::default(),
        )
        .unwrap();
        assert!((sol.theta[0] - 1.5).abs() < 1e-8);
    }

    #[test]
    fn solver_respects_bounds() {
        let space = ParameterSpace::interval(0.0, 1.0).unwrap();
        let sol = projected_gradient_descent(
            |x| Ok(((x[0] + 2.0).powi(2), vec![2.0 * (x[0] + 2.0)])),
            &[0.7],
            &space,
            &SolverConfig::default(),
        )
        .unwrap();
        assert_eq!(sol.theta, vec![0.0]);
    }

    #[test]
    fn solver_reports_failure() {
        // Gradient that points uphill: no step decreases f beyond rounding.
        let space = ParameterSpace::interval(-5.0, 5.0).unwrap();
        let err = projected_gradient_descent(
            |x| Ok((x[0] * x[0], vec![-1.0])),
            &[1.0],
            &space,
            &SolverConfig::default(),
        );
        assert!(matches!(
            err,
            Err(Error::SolverStall { .. }) | Err(Error::SolverMaxIterations { .. })
        ));
    }

    #[test]
    fn coin_rrm_geometric() {
        let map = BiasedCoinMap::new(0.3, 0.1).unwrap();
        let space = map.default_space();
        let tr = rrm(
            &map,
            &LossSpec::squared_affine(),
            &space,
            &[0.0],
            &SolverConfig::default(),
            1,
            0,
        )
        .unwrap();
        for (t, th) in tr.iterates.iter().enumerate() {
            let expect = 0.3 * (1.0 - 0.1f64.powi(t as i32)) / 0.9;
            assert_relative_eq!(th[0], expect, epsilon = 1e-15);
        }
        assert!(tr.converged());
    }

    #[test]
    fn zero_step_is_constant() {
        let map = BiasedCoinMap::new(0.3, 0.1).unwrap();
        let space = map.default_space();
        let tr = rgd(
            &map,
            &LossSpec::squared_affine(),
            &space,
            &[0.2],
            0.0,
            &SolverConfig::default(),
            1,
            0,
        )
        .unwrap();
        assert_eq!(tr.verdict, Verdict::Converged(0));
        assert!(tr.iterates.iter().all(|v| v[0] == 0.2));
    }

    #[test]
    fn step_half_cycles() {
        let map = PointMassMap::step_half();
        let tr = rrm(
            &map,
            &LossSpec::squared_location(),
            &map.default_space(),
            &[0.0],
            &SolverConfig::default(),
            1,
            0,
        )
        .unwrap();
        assert_eq!(tr.verdict, Verdict::Oscillating);
        for (t, th) in tr.iterates.iter().enumerate() {
            assert_eq!(th[0], if t % 2 == 0 { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn csv_layout() {
        let map = BiasedCoinMap::new(0.3, 0.1).unwrap();
        let tr = rrm(
            &map,
            &LossSpec::squared_affine(),
            &map.default_space(),
            &[0.0],
            &SolverConfig::default(),
            1,
            0,
        )
        .unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "iter,theta_0,perf_risk,perf_risk_se,step_norm,n_samples"
        );
        assert_eq!(text.lines().count(), tr.iterates.len() + 1);
        assert!(text.lines().last().unwrap().ends_with(",,"));
    }
}
