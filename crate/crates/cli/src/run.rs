//! Runs a built experiment and collects its report.

use anyhow::{bail, Context, Result};
use perfpred::diagnostics::{
    brute_force_optimum, closeness_check, estimate_lipschitz, estimate_sensitivity,
    regularized_optimality_bound, stackelberg_gap, GapReport, LipschitzReport, OptimumReport,
    SensitivityReport, StackelbergReport,
};
use perfpred::dynamics::{
    regd, rerm, rgd, rrm, IterationBound, Procedure, SampleSchedule, Trajectory, Verdict,
};
use perfpred::rng::{derive_seed, unit_f64};
use perfpred::strategic::{run_credit_experiment, CreditConfig, CreditReport};
use perfpred::{performative_risk, McConfig};
use serde::Serialize;

use crate::config::DynamicKind;
use crate::experiment::Experiment;

/// Salt separating the sensitivity pair stream from the dynamics streams.
const PAIR_STREAM: u64 = 0x5e45_0017;

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub map: String,
    pub loss: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub procedure: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_theta: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_perf_risk: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iteration_bound: Option<IterationBound>,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<SensitivityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimum: Option<OptimumReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<LipschitzReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub closeness: Option<GapReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stackelberg: Option<StackelbergReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regularized: Option<RegularizedReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strategic: Option<StrategicSummary>,
}

/// Optimality of the regularized stable point, measured in the base loss.
#[derive(Clone, Debug, Serialize)]
pub struct RegularizedReport {
    pub alpha: f64,
    pub pr_final: f64,
    pub pr_optimum: f64,
    pub gap: f64,
    pub bound: f64,
    pub l_z: f64,
    pub l_theta: f64,
}

/// Per-round risks of the strategic simulation. `post_shift[t]` is PR(θ_t);
/// `post_training[t]` is DPR(θ_t, θ_{t+1}).
#[derive(Clone, Debug, Serialize)]
pub struct StrategicSummary {
    pub accuracy: Vec<f64>,
    pub post_shift: Vec<f64>,
    pub post_training: Vec<f64>,
    pub beta: f64,
    pub gamma: f64,
    pub eps: f64,
    pub eta: Option<f64>,
    pub rrm_threshold: f64,
    pub rgd_threshold: Option<f64>,
}

impl From<&CreditReport> for StrategicSummary {
    fn from(r: &CreditReport) -> Self {
        StrategicSummary {
            accuracy: r.accuracy.clone(),
            post_shift: r.post_shift.clone(),
            post_training: r.post_training.clone(),
            beta: r.beta,
            gamma: r.gamma,
            eps: r.eps,
            eta: r.eta,
            rrm_threshold: r.rrm_threshold,
            rgd_threshold: r.rgd_threshold,
        }
    }
}

pub struct RunOutput {
    pub trajectory: Option<Trajectory>,
    pub report: RunReport,
}

impl RunOutput {
    /// 0 for convergence or diagnostics-only runs, 2 for any other verdict.
    pub fn exit_code(&self) -> u8 {
        match &self.trajectory {
            None => 0,
            Some(t) if t.converged() => 0,
            Some(_) => 2,
        }
    }
}

fn empty_report(ex: &Experiment) -> RunReport {
    RunReport {
        map: ex.map.name().to_string(),
        loss: ex.loss.name().to_string(),
        procedure: None,
        verdict: None,
        final_theta: None,
        final_perf_risk: None,
        eta: None,
        iteration_bound: None,
        warnings: ex.warnings.clone(),
        sensitivity: None,
        optimum: None,
        lipschitz: None,
        closeness: None,
        stackelberg: None,
        regularized: None,
        strategic: None,
    }
}

fn run_dynamic(ex: &Experiment) -> Result<Option<Trajectory>> {
    let cfg = &ex.config;
    let d = &cfg.dynamic;
    let (map, loss, space, theta0) = (ex.map.as_ref(), &ex.loss, &ex.space, &ex.theta0);
    let mut solver = d.solver.clone();
    solver.force_solver |= cfg.force_monte_carlo;
    let sampled = SampleSchedule::Constant { n: d.n_per_step };
    let eta = || {
        ex.eta
            .context("dynamic.eta: required by gradient procedures")
    };
    let tr = match d.kind {
        DynamicKind::None => return Ok(None),
        DynamicKind::Rrm if cfg.force_monte_carlo => {
            rerm(map, loss, space, theta0, &sampled, &solver, cfg.seed)
        }
        DynamicKind::Rrm => rrm(map, loss, space, theta0, &solver, d.n_per_step, cfg.seed),
        DynamicKind::Rgd if cfg.force_monte_carlo => regd(
            map,
            loss,
            space,
            theta0,
            eta()?,
            &sampled,
            &solver,
            cfg.seed,
        ),
        DynamicKind::Rgd => rgd(
            map,
            loss,
            space,
            theta0,
            eta()?,
            &solver,
            d.n_per_step,
            cfg.seed,
        ),
        DynamicKind::Rerm => rerm(map, loss, space, theta0, &ex.schedule, &solver, cfg.seed),
        DynamicKind::Regd => regd(
            map,
            loss,
            space,
            theta0,
            eta()?,
            &ex.schedule,
            &solver,
            cfg.seed,
        ),
    };
    Ok(Some(tr.context("dynamic")?))
}

fn mc_config(ex: &Experiment) -> McConfig {
    let mc = McConfig::new(ex.config.diagnostics.mc_samples, ex.config.seed);
    if ex.config.force_monte_carlo {
        mc.forced()
    } else {
        mc
    }
}

fn pr_value(ex: &Experiment, loss: &perfpred::LossSpec, theta: &[f64]) -> Result<f64> {
    if !ex.config.force_monte_carlo {
        if let Some(o) = ex.map.closed_forms(loss) {
            return Ok(o.performative_risk(theta));
        }
    }
    Ok(performative_risk(ex.map.as_ref(), loss, theta, &mc_config(ex))?.mean)
}

/// Random pairs in the bounding box of Θ, projected back onto Θ.
pub fn sensitivity_pairs(ex: &Experiment) -> Vec<(Vec<f64>, Vec<f64>)> {
    let (lo, hi) = ex.space.bounds();
    let d = lo.len();
    let seed = derive_seed(ex.config.seed, PAIR_STREAM);
    let mut k = 0u64;
    let mut point = || {
        let v: Vec<f64> = (0..d)
            .map(|j| {
                let u = unit_f64(derive_seed(seed, k));
                k += 1;
                lo[j] + (hi[j] - lo[j]) * u
            })
            .collect();
        ex.space.project(&v)
    };
    (0..ex.config.diagnostics.sensitivity_pairs)
        .map(|_| (point(), point()))
        .collect()
}

/// Runs the configured dynamic, then every enabled diagnostic.
pub fn run(ex: &Experiment) -> Result<RunOutput> {
    let mut report = empty_report(ex);
    let trajectory = run_dynamic(ex)?;
    let diag = &ex.config.diagnostics;
    let (map, space) = (ex.map.as_ref(), &ex.space);
    let mc = mc_config(ex);

    if let Some(tr) = &trajectory {
        report.procedure = Some(tr.procedure.clone());
        report.verdict = Some(tr.verdict);
        report.final_theta = Some(tr.last().to_vec());
        report.final_perf_risk = tr.risks.last().map(|r| r.mean);
        report.eta = ex
            .eta
            .filter(|_| matches!(ex.config.dynamic.kind, DynamicKind::Rgd | DynamicKind::Regd));
        report.iteration_bound = ex.iteration_bound.clone();
    }

    if diag.sensitivity {
        let pairs = sensitivity_pairs(ex);
        let rep = estimate_sensitivity(map, &pairs, diag.sensitivity_samples, ex.config.seed)
            .context("diagnostics.sensitivity")?;
        if let Some(eps) = rep.declared {
            if rep.sup_ratio > eps + 3.0 * rep.sup_ratio_std_error + 1e-9 {
                report.warnings.push(format!(
                    "estimated sensitivity {} exceeds the declared epsilon {eps}",
                    rep.sup_ratio
                ));
            }
        }
        report.sensitivity = Some(rep);
    }
    if diag.brute_force {
        report.optimum = Some(
            brute_force_optimum(map, &ex.base_loss, space, diag.grid_resolution, &mc)
                .context("diagnostics.brute_force")?,
        );
    }
    if diag.lipschitz {
        report.lipschitz = Some(
            estimate_lipschitz(map, &ex.loss, space, diag.grid_resolution)
                .context("diagnostics.lipschitz")?,
        );
    }

    let converged = trajectory.as_ref().filter(|t| t.converged());
    let wants_stable = diag.closeness || diag.stackelberg;
    if wants_stable && converged.is_none() {
        report
            .warnings
            .push("closeness and Stackelberg checks skipped: no converged stable point".into());
    }
    if let Some(tr) = converged {
        if diag.closeness {
            report.closeness = Some(
                closeness_check(map, &ex.loss, tr, space, diag.grid_resolution, &mc)
                    .context("diagnostics.closeness")?,
            );
        }
        if diag.stackelberg {
            report.stackelberg = Some(
                stackelberg_gap(map, &ex.loss, tr.last(), space, diag.grid_resolution, &mc)
                    .context("diagnostics.stackelberg")?,
            );
        }
        if let (Some(alpha), true) = (ex.alpha, diag.brute_force) {
            report.regularized = Some(regularized_report(ex, alpha, tr.last())?);
        }
    }
    Ok(RunOutput { trajectory, report })
}

fn regularized_report(ex: &Experiment, alpha: f64, theta: &[f64]) -> Result<RegularizedReport> {
    let eps = ex
        .declared_eps()
        .context("diagnostics.brute_force: regularized optimality needs a declared epsilon")?;
    let res = ex.config.diagnostics.grid_resolution;
    let opt = brute_force_optimum(
        ex.map.as_ref(),
        &ex.base_loss,
        &ex.space,
        res,
        &mc_config(ex),
    )
    .context("diagnostics.brute_force")?;
    let lip = estimate_lipschitz(ex.map.as_ref(), &ex.base_loss, &ex.space, res)
        .context("diagnostics.lipschitz")?;
    let pr_final = pr_value(ex, &ex.base_loss, theta)?;
    Ok(RegularizedReport {
        alpha,
        pr_final,
        pr_optimum: opt.value,
        gap: pr_final - opt.value,
        bound: regularized_optimality_bound(lip.l_theta, lip.l_z, alpha, eps),
        l_z: lip.l_z,
        l_theta: lip.l_theta,
    })
}

/// The strategic-classification simulation: population RRM or RGD on the
/// dataset, starting from the minimizer on the unshifted data.
pub fn strategic(ex: &Experiment) -> Result<RunOutput> {
    let cfg = &ex.config;
    let Some(data) = &ex.data else {
        bail!(
            "map.name: strategic-sim needs the strategic map, got {}",
            ex.map.name()
        );
    };
    if cfg.loss.name != crate::config::LossName::LogisticL2 || cfg.loss.regularize.is_some() {
        bail!("loss: strategic-sim needs logistic_l2 without [loss.regularize]");
    }
    let dynamic = match cfg.dynamic.kind {
        DynamicKind::Rrm => Procedure::Rrm,
        DynamicKind::Rgd => Procedure::Rgd,
        k => bail!("dynamic.kind: strategic-sim runs rrm or rgd, got {k:?}"),
    };
    let credit = CreditConfig {
        eps: ex.declared_eps().unwrap_or(0.0),
        dynamic,
        gamma_reg: cfg.loss.gamma,
        eta: cfg.dynamic.eta,
        solver: cfg.dynamic.solver.clone(),
        seed: cfg.seed,
        intercept: cfg.loss.intercept,
    };
    let rep = run_credit_experiment(data, &credit).context("strategic")?;
    let mut report = empty_report(ex);
    report.warnings.clear();
    let tr = &rep.trajectory;
    report.procedure = Some(tr.procedure.clone());
    report.verdict = Some(tr.verdict);
    report.final_theta = Some(tr.last().to_vec());
    report.final_perf_risk = tr.risks.last().map(|r| r.mean);
    report.eta = rep.eta;
    report.strategic = Some(StrategicSummary::from(&rep));
    if rep.eps >= rep.rrm_threshold && dynamic == Procedure::Rrm {
        report.warnings.push(format!(
            "epsilon >= gamma/beta ({} >= {}): no RRM guarantee",
            rep.eps, rep.rrm_threshold
        ));
    }
    if let (Some(thr), Procedure::Rgd) = (rep.rgd_threshold, dynamic) {
        if rep.eps >= thr {
            report.warnings.push(format!(
                "epsilon >= gamma/((beta+gamma)(1+1.5 eta beta)) ({} >= {thr}): no RGD guarantee",
                rep.eps
            ));
        }
    }
    Ok(RunOutput {
        trajectory: Some(rep.trajectory),
        report,
    })
}
