//! Empirical certificates: Wasserstein-1 sensitivity, grid optima, Lipschitz
//! constants and the closeness bounds between stable points and optima.

use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::maps::{Atom, DistributionMap};
use crate::risk::{performative_risk, sample, McConfig};
use crate::rng::derive_seed;
use crate::space::ParameterSpace;
use crate::vecops;

fn sorted_finite(v: &[f64], what: &'static str) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Empty(what));
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { what, index: i });
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// W1 between two empirical measures on the line. Inputs need not be
/// sorted.
///
/// Equal sizes use the order-statistics formula mean |a₍ᵢ₎ − b₍ᵢ₎|; unequal
/// sizes integrate |F_a⁻¹(u) − F_b⁻¹(u)| over the merged quantile grid.
pub fn w1_1d(samples_a: &[f64], samples_b: &[f64]) -> Result<f64> {
    let a = sorted_finite(samples_a, "samples_a")?;
    let b = sorted_finite(samples_b, "samples_b")?;
    let (na, nb) = (a.len(), b.len());
    if na == nb {
        let s: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        return Ok(s / na as f64);
    }
    // Quantile breakpoints i/na and j/nb, compared in integers.
    let (mut i, mut j) = (0usize, 0usize);
    let mut t = 0.0;
    let mut total = 0.0;
    while i < na && j < nb {
        let ra = (i + 1) * nb;
        let rb = (j + 1) * na;
        let next = ra.min(rb) as f64 / (na * nb) as f64;
        total += (next - t) * (a[i] - b[j]).abs();
        t = next;
        if ra <= rb {
            i += 1;
        }
        if rb <= ra {
            j += 1;
        }
    }
    Ok(total)
}

/// W1 between two weighted discrete measures on the line, ∫|F_a − F_b|.
pub fn w1_weighted(a: &[(f64, f64)], b: &[(f64, f64)]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("weighted atoms"));
    }
    let wa: f64 = a.iter().map(|p| p.1).sum();
    let wb: f64 = b.iter().map(|p| p.1).sum();
    if !(wa > 0.0 && wb > 0.0) {
        return Err(Error::InvalidParameter(
            "atom weights must sum to > 0".into(),
        ));
    }
    let mut events: Vec<(f64, f64)> = a
        .iter()
        .map(|&(x, w)| (x, w / wa))
        .chain(b.iter().map(|&(x, w)| (x, -w / wb)))
        .collect();
    if events.iter().any(|e| !e.0.is_finite()) {
        return Err(Error::InvalidParameter(
            "atom locations must be finite".into(),
        ));
    }
    events.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut diff = 0.0;
    let mut total = 0.0;
    for k in 0..events.len() {
        diff += events[k].1;
        if k + 1 < events.len() {
            total += diff.abs() * (events[k + 1].0 - events[k].0);
        }
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityMethod {
    /// Exact W1 between finite supports of 1-D instances.
    Exact1d,
    /// W1 between independent empirical samples of 1-D instances.
    SortedEmpirical1d,
    /// Cost of the map's explicit per-point coupling (an upper bound).
    CouplingBound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairEstimate {
    pub theta_a: Vec<f64>,
    pub theta_b: Vec<f64>,
    pub w1: f64,
    pub ratio: f64,
    /// Standard error of `ratio`; zero for exact methods.
    pub ratio_std_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub method: SensitivityMethod,
    pub pairs: Vec<PairEstimate>,
    pub sup_ratio: f64,
    /// Standard error attached to the pair attaining the sup.
    pub sup_ratio_std_error: f64,
    pub declared: Option<f64>,
}

const BATCHES: usize = 10;

/// Estimates sup W1(D(θ), D(θ'))/‖θ − θ'‖ over the given pairs.
///
/// Maps with 1-D instances use exact W1 on their support when there is one,
/// or sorted empirical samples of size `n` otherwise. Higher-dimensional
/// maps must expose a coupling.
pub fn estimate_sensitivity(
    map: &dyn DistributionMap,
    theta_pairs: &[(Vec<f64>, Vec<f64>)],
    n: usize,
    seed: u64,
) -> Result<SensitivityReport> {
    if theta_pairs.is_empty() {
        return Err(Error::Empty("theta pairs"));
    }
    let one_d = map.instance_dim() == 1;
    let method = if one_d && map.support(&theta_pairs[0].0)?.is_some() {
        SensitivityMethod::Exact1d
    } else if one_d {
        SensitivityMethod::SortedEmpirical1d
    } else if map
        .coupling_bound(&theta_pairs[0].0, &theta_pairs[0].1)
        .is_some()
    {
        SensitivityMethod::CouplingBound
    } else {
        return Err(Error::Unsupported(format!(
            "{} has {}-dimensional instances and no coupling",
            map.name(),
            map.instance_dim()
        )));
    };
    if method == SensitivityMethod::SortedEmpirical1d && n < 2 * BATCHES {
        return Err(Error::InvalidParameter(format!(
            "empirical sensitivity needs n >= {}, got {n}",
            2 * BATCHES
        )));
    }
    let mut pairs = Vec::with_capacity(theta_pairs.len());
    for (k, (a, b)) in theta_pairs.iter().enumerate() {
        map.validate(a)?;
        map.validate(b)?;
        let dt = vecops::dist(a, b);
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "theta pair {k} has zero separation"
            )));
        }
        let (w1, se) = match method {
            SensitivityMethod::Exact1d => {
                let atoms = |t: &[f64]| -> Result<Vec<(f64, f64)>> {
                    let s = map
                        .support(t)?
                        .ok_or(Error::Unsupported("support vanished between pairs".into()))?;
                    Ok(s.into_iter().map(|at| (at.z.y, at.weight)).collect())
                };
                (w1_weighted(&atoms(a)?, &atoms(b)?)?, 0.0)
            }
            SensitivityMethod::SortedEmpirical1d => {
                let sa = sample(map, a, n, derive_seed(seed, 2 * k as u64))?.ys;
                let sb = sample(map, b, n, derive_seed(seed, 2 * k as u64 + 1))?.ys;
                let w = w1_1d(&sa, &sb)?;
                let m = n / BATCHES;
                let mut batch = Vec::with_capacity(BATCHES);
                for q in 0..BATCHES {
                    batch.push(w1_1d(&sa[q * m..(q + 1) * m], &sb[q * m..(q + 1) * m])?);
                }
                let mean = batch.iter().sum::<f64>() / BATCHES as f64;
                let var = batch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (BATCHES - 1) as f64;
                // A batch holds n/B points, so its variance is B times that of
                // the full-sample estimate.
                (w, (var / BATCHES as f64).sqrt())
            }
            SensitivityMethod::CouplingBound => {
                let c = map.coupling_bound(a, b).ok_or(Error::Unsupported(
                    "coupling unavailable for this pair".into(),
                ))?;
                (c, 0.0)
            }
        };
        pairs.push(PairEstimate {
            theta_a: a.clone(),
            theta_b: b.clone(),
            w1,
            ratio: w1 / dt,
            ratio_std_error: se / dt,
        });
    }
    let best = pairs
        .iter()
        .max_by(|p, q| p.ratio.total_cmp(&q.ratio))
        .expect("non-empty");
    Ok(SensitivityReport {
        method,
        sup_ratio: best.ratio,
        sup_ratio_std_error: best.ratio_std_error,
        declared: map.declared_sensitivity(),
        pairs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimumReport {
    /// First grid argmin (or its refinement).
    pub theta: Vec<f64>,
    pub value: f64,
    /// Every grid point within 1e-12 of the minimum.
    pub argmins: Vec<Vec<f64>>,
    pub grid_spacing: f64,
    pub exact: bool,
}

const TIE_TOL: f64 = 1e-12;

/// Grid minimization of PR over Θ (d ≤ 2), with one ternary refinement pass
/// around a unique 1-D argmin when PR is exact.
pub fn brute_force_optimum(
    map: &dyn DistributionMap,
    loss: &LossSpec,
    space: &ParameterSpace,
    grid_resolution: usize,
    mc: &McConfig,
) -> Result<OptimumReport> {
    let grid = space.grid(grid_resolution)?;
    if grid.is_empty() {
        return Err(Error::Empty("parameter grid"));
    }
    let oracle = map.closed_forms(loss);
    let exact = std::cell::Cell::new(true);
    let pr = |t: &[f64]| -> Result<f64> {
        if let Some(o) = &oracle {
            if !mc.force_monte_carlo {
                return Ok(o.performative_risk(t));
            }
        }
        let r = performative_risk(map, loss, t, mc)?;
        exact.set(exact.get() && r.exact);
        Ok(r.mean)
    };
    let mut values = Vec::with_capacity(grid.len());
    for t in &grid {
        values.push(pr(t)?);
    }
    let best = values.iter().copied().fold(f64::INFINITY, f64::min);
    let argmins: Vec<Vec<f64>> = grid
        .iter()
        .zip(&values)
        .filter(|(_, v)| **v <= best + TIE_TOL)
        .map(|(t, _)| t.clone())
        .collect();
    let spacing = space.grid_spacing(grid_resolution);
    let mut theta = argmins[0].clone();
    let mut value = best;
    if space.dim() == 1 && argmins.len() == 1 && exact.get() {
        let (lo, hi) = space.bounds();
        let mut a = (theta[0] - spacing).max(lo[0]);
        let mut b = (theta[0] + spacing).min(hi[0]);
        for _ in 0..100 {
            let m1 = a + (b - a) / 3.0;
            let m2 = b - (b - a) / 3.0;
            if pr(&[m1])? <= pr(&[m2])? {
                b = m2;
            } else {
                a = m1;
            }
        }
        let mid = 0.5 * (a + b);
        let v = pr(&[mid])?;
        if v < value {
            theta = vec![mid];
            value = v;
        }
    }
    Ok(OptimumReport {
        theta,
        value,
        argmins,
        grid_spacing: spacing,
        exact: exact.get(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub l_z: f64,
    pub l_theta: f64,
    pub l_z_estimated: bool,
    pub l_theta_estimated: bool,
    pub n_points: usize,
}

/// Grid suprema of ‖∇_z ℓ‖ and ‖∇_θ ℓ‖ over (support of D(θ) for θ on the
/// grid) × (θ' on the grid). Declared constants take precedence.
pub fn estimate_lipschitz(
    map: &dyn DistributionMap,
    loss: &LossSpec,
    space: &ParameterSpace,
    grid_resolution: usize,
) -> Result<LipschitzReport> {
    let c = &loss.constants;
    if let (Some(l_z), Some(l_theta)) = (c.l_z, c.l_theta) {
        return Ok(LipschitzReport {
            l_z,
            l_theta,
            l_z_estimated: false,
            l_theta_estimated: false,
            n_points: 0,
        });
    }
    let grid = space.grid(grid_resolution)?;
    let (mut lz, mut lt) = (0.0f64, 0.0f64);
    let mut n_points = 0;
    for deploy in &grid {
        let atoms: Vec<Atom> = map.support(deploy)?.ok_or_else(|| {
            Error::Unsupported(format!(
                "Lipschitz grid needs a finitely supported map, {} has none",
                map.name()
            ))
        })?;
        for t in &grid {
            for a in &atoms {
                lz = lz.max(vecops::norm(&loss.grad_z(&a.z.x, a.z.y, t)));
                lt = lt.max(vecops::norm(&loss.grad(&a.z.x, a.z.y, t)));
            }
        }
        n_points += atoms.len() * grid.len();
    }
    Ok(LipschitzReport {
        l_z: c.l_z.unwrap_or(lz),
        l_theta: c.l_theta.unwrap_or(lt),
        l_z_estimated: c.l_z.is_none(),
        l_theta_estimated: c.l_theta.is_none(),
        n_points,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub theta_ps: Vec<f64>,
    pub theta_po: Vec<f64>,
    pub gap: f64,
    /// 2·L_z·ε/γ.
    pub bound: f64,
    pub pr_ps: f64,
    pub pr_po: f64,
    pub eps: f64,
    pub gamma: f64,
    pub l_z: f64,
    pub l_z_estimated: bool,
    /// Slack allowed for the grid search.
    pub tolerance: f64,
    pub violation: bool,
}

fn required_eps(map: &dyn DistributionMap) -> Result<f64> {
    map.declared_sensitivity()
        .ok_or(Error::MissingConstant("map sensitivity epsilon"))
}

fn required_gamma(loss: &LossSpec) -> Result<f64> {
    match loss.constants.gamma {
        Some(g) if g > 0.0 => Ok(g),
        _ => Err(Error::MissingConstant("strong convexity gamma")),
    }
}

fn pr_value(map: &dyn DistributionMap, loss: &LossSpec, t: &[f64], mc: &McConfig) -> Result<f64> {
    if let Some(o) = map.closed_forms(loss) {
        return Ok(o.performative_risk(t));
    }
    Ok(performative_risk(map, loss, t, mc)?.mean)
}

/// Compares the stable point reached by `trajectory` with the performative
/// optimum against ‖θ_PO − θ_PS‖ ≤ 2·L_z·ε/γ.
pub fn closeness_check(
    map: &dyn DistributionMap,
    loss: &LossSpec,
    trajectory: &Trajectory,
    space: &ParameterSpace,
    grid_resolution: usize,
    mc: &McConfig,
) -> Result<GapReport> {
    if !trajectory.converged() {
        return Err(Error::Precondition(format!(
            "closeness check needs a converged trajectory, got {:?}",
            trajectory.verdict
        )));
    }
    let eps = required_eps(map)?;
    let gamma = required_gamma(loss)?;
    let lip = estimate_lipschitz(map, loss, space, grid_resolution)?;
    let theta_ps = trajectory.last().to_vec();
    let (theta_po, tolerance) = match map.closed_forms(loss).and_then(|o| o.optimum(space)) {
        Some(t) => (t, 0.0),
        None => {
            let opt = brute_force_optimum(map, loss, space, grid_resolution, mc)?;
            (opt.theta, opt.grid_spacing)
        }
    };
    let gap = vecops::dist(&theta_po, &theta_ps);
    let bound = 2.0 * lip.l_z * eps / gamma;
    Ok(GapReport {
        pr_ps: pr_value(map, loss, &theta_ps, mc)?,
        pr_po: pr_value(map, loss, &theta_po, mc)?,
        theta_ps,
        theta_po,
        gap,
        bound,
        eps,
        gamma,
        l_z: lip.l_z,
        l_z_estimated: lip.l_z_estimated,
        tolerance,
        violation: gap > bound + tolerance + 1e-12,
    })
}

/// 2·L_z·ε·(L_θ + L_z·ε)/γ.
pub fn stackelberg_bound(l_z: f64, l_theta: f64, eps: f64, gamma: f64) -> f64 {
    2.0 * l_z * eps * (l_theta + l_z * eps) / gamma
}

/// 2(L_θ + α + ε·L_z)·L_z·ε/α + α/2, the optimality gap of the stable point
/// of the α-regularized loss.
pub fn regularized_optimality_bound(l_theta: f64, l_z: f64, alpha: f64, eps: f64) -> f64 {
    2.0 * (l_theta + alpha + eps * l_z) * l_z * eps / alpha + alpha / 2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackelbergReport {
    pub pr_ps: f64,
    /// `None` when Θ has more than two dimensions.
    pub min_grid_pr: Option<f64>,
    pub gap: Option<f64>,
    pub bound: f64,
    pub l_z: f64,
    pub l_theta: f64,
    pub eps: f64,
    pub gamma: f64,
}

/// PR(θ_PS) − min_grid PR against the Stackelberg bound. Lipschitz constants
/// are estimated on a grid when the loss does not declare them.
pub fn stackelberg_gap(
    map: &dyn DistributionMap,
    loss: &LossSpec,
    theta_ps: &[f64],
    space: &ParameterSpace,
    grid_resolution: usize,
    mc: &McConfig,
) -> Result<StackelbergReport> {
    let eps = required_eps(map)?;
    let gamma = required_gamma(loss)?;
    let pr_ps = pr_value(map, loss, theta_ps, mc)?;
    if space.dim() > 2 {
        let (l_z, l_theta) = match (loss.constants.l_z, loss.constants.l_theta) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::MissingConstant("L_z and L_theta for d > 2")),
        };
        return Ok(StackelbergReport {
            pr_ps,
            min_grid_pr: None,
            gap: None,
            bound: stackelberg_bound(l_z, l_theta, eps, gamma),
            l_z,
            l_theta,
            eps,
            gamma,
        });
    }
    let lip = estimate_lipschitz(map, loss, space, grid_resolution)?;
    let opt = brute_force_optimum(map, loss, space, grid_resolution, mc)?;
    Ok(StackelbergReport {
        pr_ps,
        min_grid_pr: Some(opt.value),
        gap: Some(pr_ps - opt.value),
        bound: stackelberg_bound(lip.l_z, lip.l_theta, eps, gamma),
        l_z: lip.l_z,
        l_theta: lip.l_theta,
        eps,
        gamma,
    })
}
