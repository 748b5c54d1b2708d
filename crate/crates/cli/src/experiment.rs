//! Turns a parsed config into validated library objects.

use anyhow::{anyhow, bail, Context, Result};
use perfpred::dynamics::{theoretical_iteration_bound, IterationBound, Procedure, SampleSchedule};
use perfpred::losses::{logistic_beta, regularization_alpha, regularize};
use perfpred::strategic::{
    load_dataset, synthesize_credit_data, LoadOptions, StrategicDataset, StrategicMap,
};
use perfpred::{
    vecops, BiasedCoinMap, DistributionMap, GaussianFamilyMap, LossSpec, ParameterSpace,
    PointMassMap,
};

use crate::config::{DataConfig, DynamicKind, ExperimentConfig, LossName, MapName};

/// Everything a run needs, checked against every component's preconditions.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub map: Box<dyn DistributionMap>,
    /// Base population of the strategic map, before any intercept column.
    pub data: Option<StrategicDataset>,
    /// The loss as named in the config.
    pub base_loss: LossSpec,
    /// `base_loss` plus the optional regularizer; what the dynamics minimize.
    pub loss: LossSpec,
    pub alpha: Option<f64>,
    pub space: ParameterSpace,
    pub theta0: Vec<f64>,
    pub eta: Option<f64>,
    pub schedule: SampleSchedule,
    pub iteration_bound: Option<IterationBound>,
    pub warnings: Vec<String>,
}

fn required<T: Copy>(v: Option<T>, field: &str, owner: &str) -> Result<T> {
    v.ok_or_else(|| anyhow!("{field}: required by {owner}"))
}

fn reject(present: bool, field: &str, owner: &str) -> Result<()> {
    if present {
        bail!("{field}: not a parameter of {owner}");
    }
    Ok(())
}

fn finite(v: f64, field: &str) -> Result<f64> {
    if !v.is_finite() {
        bail!("{field}: must be finite, got {v}");
    }
    Ok(v)
}

impl Experiment {
    pub fn build(config: ExperimentConfig) -> Result<Self> {
        let (map, data) = build_map(&config).context("map")?;
        let base_loss = build_loss(&config, map.as_ref(), data.as_ref())?;
        base_loss
            .check_dims(map.theta_dim(), map.feature_dim())
            .with_context(|| format!("loss: {} does not fit {}", base_loss.name(), map.name()))?;

        let space = match &config.space {
            Some(s) => {
                s.validate().context("space")?;
                s.clone()
            }
            None => map.default_space(),
        };
        if space.dim() != map.theta_dim() {
            bail!(
                "space: dimension {} but {} needs {}",
                space.dim(),
                map.name(),
                map.theta_dim()
            );
        }

        let dyn_cfg = &config.dynamic;
        let theta0 = match &dyn_cfg.theta0 {
            Some(t) => {
                if t.len() != space.dim() {
                    bail!(
                        "dynamic.theta0: length {} but Θ has dimension {}",
                        t.len(),
                        space.dim()
                    );
                }
                if !vecops::all_finite(t) {
                    bail!("dynamic.theta0: must be finite");
                }
                if !space.contains(t) {
                    bail!("dynamic.theta0: {t:?} lies outside the feasible set");
                }
                t.clone()
            }
            None => space.project(&vec![0.0; space.dim()]),
        };
        map.validate(&theta0).context("dynamic.theta0")?;

        let eps = map.declared_sensitivity();
        let (loss, alpha) = match &config.loss.regularize {
            None => (base_loss.clone(), None),
            Some(r) => {
                let alpha = match r.alpha {
                    Some(a) => a,
                    None => {
                        let e = eps.ok_or_else(|| {
                            anyhow!(
                                "loss.regularize.alpha: no default, {} declares no epsilon",
                                map.name()
                            )
                        })?;
                        let b = base_loss.constants.beta.ok_or_else(|| {
                            anyhow!(
                                "loss.regularize.alpha: no default, {} declares no beta",
                                base_loss.name()
                            )
                        })?;
                        regularization_alpha(e, b).context("loss.regularize.alpha")?
                    }
                };
                let anchor = r.anchor.clone().unwrap_or_else(|| theta0.clone());
                let reg =
                    regularize(&base_loss, alpha, &anchor, &space).context("loss.regularize")?;
                (reg, Some(alpha))
            }
        };

        dyn_cfg.solver.validate().context("dynamic.solver")?;
        if dyn_cfg.n_per_step == 0 {
            bail!("dynamic.n_per_step: must be >= 1");
        }
        if !(dyn_cfg.bound_delta > 0.0) {
            bail!(
                "dynamic.bound_delta: must be > 0, got {}",
                dyn_cfg.bound_delta
            );
        }
        let schedule = dyn_cfg
            .schedule
            .clone()
            .unwrap_or(SampleSchedule::Constant {
                n: dyn_cfg.n_per_step,
            });
        schedule.validate().context("dynamic.schedule")?;

        let (beta, gamma) = (loss.constants.beta, loss.constants.gamma);
        let gradient = matches!(dyn_cfg.kind, DynamicKind::Rgd | DynamicKind::Regd);
        let eta = match dyn_cfg.eta {
            Some(e) => {
                if !(e.is_finite() && e > 0.0) {
                    bail!("dynamic.eta: must be > 0, got {e}");
                }
                Some(e)
            }
            None => match (beta, gamma) {
                (Some(b), Some(g)) if b + g > 0.0 => Some(2.0 / (b + g)),
                _ if gradient => bail!(
                    "dynamic.eta: required, {} declares no beta and gamma to derive 2/(beta+gamma)",
                    loss.name()
                ),
                _ => None,
            },
        };

        let d = &config.diagnostics;
        for (field, v) in [
            ("diagnostics.sensitivity_pairs", d.sensitivity_pairs),
            ("diagnostics.sensitivity_samples", d.sensitivity_samples),
            ("diagnostics.mc_samples", d.mc_samples),
        ] {
            if v == 0 {
                bail!("{field}: must be >= 1");
            }
        }
        if d.grid_resolution < 2 {
            bail!(
                "diagnostics.grid_resolution: must be >= 2, got {}",
                d.grid_resolution
            );
        }

        let mut warnings = Vec::new();
        let procedure = match dyn_cfg.kind {
            DynamicKind::None => None,
            DynamicKind::Rrm => Some(Procedure::Rrm),
            DynamicKind::Rgd => Some(Procedure::Rgd),
            DynamicKind::Rerm => Some(Procedure::Rerm),
            DynamicKind::Regd => Some(Procedure::Regd),
        };
        let mut iteration_bound = None;
        if let (Some(kind), Some(e), Some(b), Some(g)) = (procedure, eps, beta, gamma) {
            let target = map.closed_forms(&loss).and_then(|o| o.stable_point(&space));
            let d0 = match &target {
                Some(t) => vecops::dist(t, &theta0),
                None => space.diameter(),
            };
            if b > 0.0 && g > 0.0 {
                let bound =
                    theoretical_iteration_bound(kind, e, b, g, eta, d0, dyn_cfg.bound_delta)?;
                if let IterationBound::NoGuarantee(why) = &bound {
                    warnings.push(format!("{why}: no {} guarantee", procedure_label(kind)));
                }
                iteration_bound = Some(bound);
            } else if g <= 0.0 {
                warnings.push(format!(
                    "gamma = {g}: loss is not strongly convex, no {} guarantee",
                    procedure_label(kind)
                ));
            }
        }
        if procedure.is_some() && eps.is_none() {
            warnings.push(format!(
                "{} is not epsilon-sensitive for any epsilon: no convergence guarantee",
                map.name()
            ));
        }

        Ok(Experiment {
            config,
            map,
            data,
            base_loss,
            loss,
            alpha,
            space,
            theta0,
            eta,
            schedule,
            iteration_bound,
            warnings,
        })
    }

    pub fn declared_eps(&self) -> Option<f64> {
        self.map.declared_sensitivity()
    }
}

fn procedure_label(kind: Procedure) -> &'static str {
    match kind {
        Procedure::Rrm => "RRM",
        Procedure::Rgd => "RGD",
        Procedure::Rerm => "RERM",
        Procedure::Regd => "REGD",
    }
}

type BuiltMap = (Box<dyn DistributionMap>, Option<StrategicDataset>);

fn build_map(cfg: &ExperimentConfig) -> Result<BuiltMap> {
    let m = &cfg.map;
    let owner = serde_json::to_value(m.name)?;
    let owner = owner.as_str().unwrap_or("map");
    let only = |allowed: &[&str]| -> Result<()> {
        let fields = [
            ("mu", m.mu.is_some()),
            ("eps", m.eps.is_some()),
            ("eps1", m.eps1.is_some()),
            ("eps2", m.eps2.is_some()),
            ("p", m.p.is_some()),
            ("data", m.data.is_some()),
        ];
        for (name, present) in fields {
            reject(
                present && !allowed.contains(&name),
                &format!("map.{name}"),
                owner,
            )?;
        }
        Ok(())
    };
    let eps = || -> Result<f64> { finite(required(m.eps, "map.eps", owner)?, "map.eps") };
    Ok(match m.name {
        MapName::BiasedCoin => {
            only(&["mu", "eps"])?;
            let mu = finite(required(m.mu, "map.mu", owner)?, "map.mu")?;
            (Box::new(BiasedCoinMap::new(mu, eps()?)?), None)
        }
        MapName::PointMassLinear => {
            only(&["eps"])?;
            (Box::new(PointMassMap::linear(eps()?)), None)
        }
        MapName::PointMassAffine => {
            only(&["eps"])?;
            (Box::new(PointMassMap::affine(eps()?)), None)
        }
        MapName::StepHalf => {
            only(&[])?;
            (Box::new(PointMassMap::step_half()), None)
        }
        MapName::GaussianFamily => {
            only(&["eps1", "eps2", "p"])?;
            let e1 = finite(required(m.eps1, "map.eps1", owner)?, "map.eps1")?;
            let e2 = finite(required(m.eps2, "map.eps2", owner)?, "map.eps2")?;
            (
                Box::new(GaussianFamilyMap::new(e1, e2, m.p.unwrap_or(1))?),
                None,
            )
        }
        MapName::Strategic => {
            only(&["eps", "data"])?;
            let data = load_data(m.data.as_ref())?;
            let base = if cfg.loss.intercept {
                data.with_intercept()
            } else {
                data.clone()
            };
            (Box::new(StrategicMap::new(base, eps()?)?), Some(data))
        }
    })
}

fn load_data(cfg: Option<&DataConfig>) -> Result<StrategicDataset> {
    let default = DataConfig::Synthetic {
        n: 2000,
        m: 11,
        strategic_count: 3,
        seed: 0,
    };
    match cfg.unwrap_or(&default) {
        DataConfig::Synthetic {
            n,
            m,
            strategic_count,
            seed,
        } => synthesize_credit_data(*n, *m, *strategic_count, *seed).context("data"),
        DataConfig::Csv {
            path,
            outcome,
            strategic,
            features,
            balance,
            seed,
        } => {
            let opts = LoadOptions {
                balance: *balance,
                feature_columns: features.clone(),
                seed: *seed,
            };
            load_dataset(path, outcome, strategic, &opts)
                .with_context(|| format!("data: loading {}", path.display()))
        }
    }
}

fn build_loss(
    cfg: &ExperimentConfig,
    map: &dyn DistributionMap,
    data: Option<&StrategicDataset>,
) -> Result<LossSpec> {
    let l = &cfg.loss;
    let owner = serde_json::to_value(l.name)?;
    let owner = owner.as_str().unwrap_or("loss");
    let only = |allowed: &[&str]| -> Result<()> {
        let fields = [
            ("beta", l.beta.is_some()),
            ("c", l.c.is_some()),
            ("gamma", l.gamma.is_some()),
            ("value", l.value.is_some()),
            ("intercept", l.intercept),
        ];
        for (name, present) in fields {
            reject(
                present && !allowed.contains(&name),
                &format!("loss.{name}"),
                owner,
            )?;
        }
        Ok(())
    };
    let mut loss = match l.name {
        LossName::SquaredAffine => {
            only(&[])?;
            LossSpec::squared_affine()
        }
        LossName::SquaredLocation => {
            only(&[])?;
            LossSpec::squared_location()
        }
        LossName::Linear => {
            only(&["beta"])?;
            LossSpec::linear(finite(required(l.beta, "loss.beta", owner)?, "loss.beta")?)
        }
        LossName::HingeReg => {
            only(&["c", "gamma"])?;
            let gamma = required(l.gamma, "loss.gamma", owner)?;
            let c = match l.c {
                Some(c) => c,
                None => {
                    let eps = map
                        .declared_sensitivity()
                        .filter(|e| *e > 0.0)
                        .ok_or_else(|| {
                            anyhow!(
                                "loss.c: no default, {} declares no positive epsilon",
                                map.name()
                            )
                        })?;
                    LossSpec::default_hinge_c(gamma, eps)
                }
            };
            LossSpec::hinge_reg(c, gamma).context("loss")?
        }
        LossName::LogisticL2 => {
            only(&["gamma", "intercept"])?;
            let gamma = match (l.gamma, data) {
                (Some(g), _) => g,
                (None, Some(d)) => 1000.0 / d.len() as f64,
                (None, None) => {
                    bail!("loss.gamma: required by logistic_l2 outside the strategic map")
                }
            };
            let mut loss = if l.intercept {
                LossSpec::logistic_l2_intercept(gamma)
            } else {
                LossSpec::logistic_l2(gamma)
            }
            .context("loss")?;
            if let Some(d) = data {
                let beta = logistic_beta(d.features.iter().map(|x| x.as_slice()), gamma);
                loss.constants.beta = Some(beta);
            }
            loss
        }
        LossName::Constant => {
            only(&["value"])?;
            LossSpec::constant(finite(
                required(l.value, "loss.value", owner)?,
                "loss.value",
            )?)
        }
    };
    if let Some(over) = &l.constants {
        let c = &mut loss.constants;
        c.beta = over.beta.or(c.beta);
        c.gamma = over.gamma.or(c.gamma);
        c.l_z = over.l_z.or(c.l_z);
        c.l_theta = over.l_theta.or(c.l_theta);
    }
    Ok(loss)
}
