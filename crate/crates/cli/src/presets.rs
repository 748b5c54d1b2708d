//! Frozen experiments with a built-in pass criterion.

use anyhow::{bail, Result};
use perfpred::dynamics::{IterationBound, Verdict};
use perfpred::{performative_risk, McConfig};

use crate::experiment::Experiment;
use crate::run::RunOutput;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PresetCommand {
    Run,
    StrategicSim,
}

type Check = fn(&Experiment, &RunOutput) -> Result<String, String>;

pub struct Preset {
    pub name: &'static str,
    pub summary: &'static str,
    pub command: PresetCommand,
    pub config: &'static str,
    pub check: Check,
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "coin",
        summary: "biased coin: RRM reaches θ_PS = μ/(1−ε) = 1/3 within the theoretical 15 steps",
        command: PresetCommand::Run,
        config: r#"
[map]
name = "biased_coin"
mu = 0.3
eps = 0.1

[loss]
name = "squared_affine"

[dynamic]
kind = "rrm"
theta0 = [0.0]
"#,
        check: check_coin,
    },
    Preset {
        name: "counterexample-a",
        summary: "linear loss, Y = εθ: RRM cycles between −1 and 1",
        command: PresetCommand::Run,
        config: r#"
[map]
name = "point_mass_linear"
eps = 0.5

[loss]
name = "linear"
beta = 1.0

[dynamic]
kind = "rrm"
theta0 = [0.5]
"#,
        check: check_counterexample_a,
    },
    Preset {
        name: "counterexample-b",
        summary: "regularized hinge, Y = εθ: RRM cycles between the two kinks",
        command: PresetCommand::Run,
        config: r#"
[map]
name = "point_mass_linear"
eps = 0.25

[loss]
name = "hinge_reg"
c = 1e4
gamma = 1.0

[space]
kind = "interval"
lo = -2.0
hi = 2.0

[dynamic]
kind = "rrm"
theta0 = [2.0]
"#,
        check: check_counterexample_b,
    },
    Preset {
        name: "counterexample-c",
        summary: "squared loss, Y = 1 + εθ with ε > 1: RRM steps grow by ε and diverge",
        command: PresetCommand::Run,
        config: r#"
[map]
name = "point_mass_affine"
eps = 1.5

[loss]
name = "squared_location"

[dynamic]
kind = "rrm"
theta0 = [0.0]
"#,
        check: check_counterexample_c,
    },
    Preset {
        name: "no-stable-point",
        summary: "step map: RRM alternates 1, 0 while θ_PO = 1/2",
        command: PresetCommand::Run,
        config: r#"
[map]
name = "step_half"

[loss]
name = "squared_location"

[dynamic]
kind = "rrm"
theta0 = [0.0]

[diagnostics]
brute_force = true
grid_resolution = 1001
"#,
        check: check_no_stable_point,
    },
    Preset {
        name: "concave-pr",
        summary: "biased coin with μ = −0.1, ε = 0.6: PR is concave on [0, 1]",
        command: PresetCommand::Run,
        config: r#"
[map]
name = "biased_coin"
mu = -0.1
eps = 0.6

[loss]
name = "squared_affine"

[dynamic]
kind = "none"

[diagnostics]
brute_force = true
grid_resolution = 101
"#,
        check: check_concave_pr,
    },
    Preset {
        name: "regularized-linear",
        summary: "linear loss plus (α/2)θ² with α = √ε·β/(1−ε): RRM converges within the optimality bound",
        command: PresetCommand::Run,
        config: r#"
[map]
name = "point_mass_linear"
eps = 0.25

[loss]
name = "linear"
beta = 1.0

[loss.regularize]
anchor = [0.0]

[dynamic]
kind = "rrm"
theta0 = [1.0]

[diagnostics]
brute_force = true
grid_resolution = 1001
"#,
        check: check_regularized,
    },
    Preset {
        name: "credit-small-eps",
        summary: "strategic classification at ε = 0.01: RRM converges",
        command: PresetCommand::StrategicSim,
        config: r#"
[map]
name = "strategic"
eps = 0.01

[map.data]
kind = "synthetic"
n = 2000
m = 11
strategic_count = 3
seed = 0

[loss]
name = "logistic_l2"

[dynamic]
kind = "rrm"

[dynamic.solver]
max_inner_iters = 100000
"#,
        check: check_credit_small,
    },
    Preset {
        name: "credit-large-eps",
        summary: "strategic classification at ε = 100: RRM fails to converge",
        command: PresetCommand::StrategicSim,
        config: r#"
[map]
name = "strategic"
eps = 100.0

[map.data]
kind = "synthetic"
n = 2000
m = 11
strategic_count = 3
seed = 0

[loss]
name = "logistic_l2"

[dynamic]
kind = "rrm"

[dynamic.solver]
max_inner_iters = 100000
"#,
        check: check_credit_large,
    },
];

pub fn find(name: &str) -> Result<&'static Preset> {
    match PRESETS.iter().find(|p| p.name == name) {
        Some(p) => Ok(p),
        None => {
            let names: Vec<_> = PRESETS.iter().map(|p| p.name).collect();
            bail!("unknown preset `{name}`; available: {}", names.join(", "))
        }
    }
}

fn iterates(out: &RunOutput) -> Result<&[Vec<f64>], String> {
    out.trajectory
        .as_ref()
        .map(|t| t.iterates.as_slice())
        .ok_or_else(|| "no trajectory".to_string())
}

fn verdict(out: &RunOutput) -> Result<Verdict, String> {
    out.report.verdict.ok_or_else(|| "no verdict".to_string())
}

/// The last two iterates are `a` and `b` in some order, within `tol`.
fn ends_in_cycle(xs: &[Vec<f64>], a: f64, b: f64, tol: f64) -> Result<(), String> {
    if xs.len() < 3 {
        return Err(format!("only {} iterates", xs.len()));
    }
    let (p, q) = (xs[xs.len() - 2][0], xs[xs.len() - 1][0]);
    let hit = |x: f64, y: f64| (p - x).abs() <= tol && (q - y).abs() <= tol;
    if hit(a, b) || hit(b, a) {
        Ok(())
    } else {
        Err(format!(
            "last iterates {p}, {q}; expected the cycle {{{a}, {b}}}"
        ))
    }
}

fn check_coin(_: &Experiment, out: &RunOutput) -> Result<String, String> {
    let t = match verdict(out)? {
        Verdict::Converged(t) => t,
        v => return Err(format!("verdict {v:?}")),
    };
    if out.report.iteration_bound != Some(IterationBound::Iterations(15)) {
        return Err(format!(
            "iteration bound {:?}, expected 15",
            out.report.iteration_bound
        ));
    }
    let theta = iterates(out)?.last().map_or(f64::NAN, |v| v[0]);
    let err = (theta - 1.0 / 3.0).abs();
    if t > 15 || !(err <= 1e-6) {
        return Err(format!("converged at t = {t}, |θ − 1/3| = {err:e}"));
    }
    Ok(format!("converged at t = {t} ≤ 15, |θ − 1/3| = {err:.1e}"))
}

fn check_oscillation(out: &RunOutput, a: f64, b: f64, tol: f64) -> Result<String, String> {
    let v = verdict(out)?;
    if v != Verdict::Oscillating {
        return Err(format!("verdict {v:?}, expected oscillating"));
    }
    let xs = iterates(out)?;
    ends_in_cycle(xs, a, b, tol)?;
    Ok(format!(
        "oscillating on {{{a}, {b}}} after {} iterates",
        xs.len()
    ))
}

fn check_counterexample_a(_: &Experiment, out: &RunOutput) -> Result<String, String> {
    check_oscillation(out, -1.0, 1.0, 0.0)
}

fn check_counterexample_b(_: &Experiment, out: &RunOutput) -> Result<String, String> {
    check_oscillation(out, 2.0, -2.0, 1e-9)
}

fn check_counterexample_c(_: &Experiment, out: &RunOutput) -> Result<String, String> {
    let v = verdict(out)?;
    let steps = &out.trajectory.as_ref().ok_or("no trajectory")?.step_norms;
    let ratios_ok = steps
        .windows(2)
        .filter(|w| w[0] > 0.0 && w[1].is_finite())
        .all(|w| (w[1] / w[0] - 1.5).abs() <= 1e-9);
    if v != Verdict::Diverged || !ratios_ok {
        return Err(format!("verdict {v:?}, step ratios all 1.5: {ratios_ok}"));
    }
    Ok(format!(
        "diverged after {} steps, step ratio 1.5",
        steps.len()
    ))
}

fn check_no_stable_point(_: &Experiment, out: &RunOutput) -> Result<String, String> {
    let cycle = check_oscillation(out, 1.0, 0.0, 0.0)?;
    let opt = out
        .report
        .optimum
        .as_ref()
        .ok_or("no brute-force optimum")?;
    let (t, v) = (opt.theta[0], opt.value);
    if (t - 0.5).abs() > 1e-3 || (v - 0.25).abs() > 1e-3 {
        return Err(format!("θ_PO = {t}, PR = {v}; expected 0.5, 0.25"));
    }
    Ok(format!("{cycle}; θ_PO = {t}, PR = {v}"))
}

fn check_concave_pr(ex: &Experiment, out: &RunOutput) -> Result<String, String> {
    let mc = McConfig::new(1, 0);
    let pr = (0..101)
        .map(|k| {
            performative_risk(ex.map.as_ref(), &ex.loss, &[k as f64 / 100.0], &mc).map(|r| r.mean)
        })
        .collect::<perfpred::Result<Vec<f64>>>()
        .map_err(|e| e.to_string())?;
    let worst = (1..100)
        .map(|k| pr[k + 1] - 2.0 * pr[k] + pr[k - 1])
        .fold(f64::NEG_INFINITY, f64::max);
    if !(worst < 0.0) {
        return Err(format!(
            "largest second difference {worst:e} is not negative"
        ));
    }
    let ties = out.report.optimum.as_ref().map_or(0, |o| o.argmins.len());
    Ok(format!(
        "99 second differences, largest {worst:.2e}; {ties} grid argmin(s) at the boundary"
    ))
}

fn check_regularized(_: &Experiment, out: &RunOutput) -> Result<String, String> {
    let v = verdict(out)?;
    if !matches!(v, Verdict::Converged(_)) {
        return Err(format!("verdict {v:?}"));
    }
    let r = out
        .report
        .regularized
        .as_ref()
        .ok_or("no regularized report")?;
    if !(r.gap <= r.bound) {
        return Err(format!(
            "optimality gap {} exceeds bound {}",
            r.gap, r.bound
        ));
    }
    Ok(format!(
        "α = {:.4}, gap {:.2e} ≤ bound {:.4}",
        r.alpha, r.gap, r.bound
    ))
}

fn check_credit_small(_: &Experiment, out: &RunOutput) -> Result<String, String> {
    match verdict(out)? {
        Verdict::Converged(t) => Ok(format!("converged at t = {t}")),
        v => Err(format!("verdict {v:?}, expected convergence")),
    }
}

fn check_credit_large(_: &Experiment, out: &RunOutput) -> Result<String, String> {
    match verdict(out)? {
        v @ (Verdict::Oscillating | Verdict::Diverged) => Ok(format!("verdict {v:?}")),
        v => Err(format!("verdict {v:?}, expected oscillation or divergence")),
    }
}
