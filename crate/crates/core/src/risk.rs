//! Performative and decoupled risk, exact or by Monte Carlo.
//!
//! Sample `i` of a Monte Carlo estimate is always drawn from
//! `sample_rng(seed, i)`, so two calls that share `(deploy, n, seed)` see
//! identical draws whatever θ they evaluate. Work is split into fixed chunks
//! whose partial moments are merged in index order, which keeps the output
//! bit-identical for any worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::losses::LossSpec;
use crate::maps::{Atom, DistributionMap};
use crate::rng::sample_rng;

/// z = (x, y).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub x: Vec<f64>,
    pub y: f64,
}

impl Instance {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Instance { x, y }
    }
}

/// Packed i.i.d. draws with a common feature dimension.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleSet {
    pub feature_dim: usize,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    #[inline]
    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn get(&self, i: usize) -> Instance {
        Instance::new(self.x(i).to_vec(), self.ys[i])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
    /// True when computed from an exact support or closed form.
    pub exact: bool,
}

impl RiskEstimate {
    pub fn exact(mean: f64, n_samples: usize) -> Self {
        RiskEstimate {
            mean,
            std_error: 0.0,
            n_samples,
            exact: true,
        }
    }
}

/// Monte Carlo budget and seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct McConfig {
    pub n: usize,
    pub seed: u64,
    /// Sample even when the map exposes an exact support.
    pub force_monte_carlo: bool,
}

impl McConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        McConfig {
            n,
            seed,
            force_monte_carlo: false,
        }
    }

    pub fn forced(mut self) -> Self {
        self.force_monte_carlo = true;
        self
    }
}

const CHUNK: usize = 4096;

/// Running moments of a vector-valued integrand.
#[derive(Clone, Debug)]
struct Moments {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn merge(&mut self, other: &Moments) {
        if other.n == 0.0 {
            return;
        }
        if self.n == 0.0 {
            *self = other.clone();
            return;
        }
        let n = self.n + other.n;
        for k in 0..self.mean.len() {
            let delta = other.mean[k] - self.mean[k];
            self.mean[k] += delta * other.n / n;
            self.m2[k] += other.m2[k] + delta * delta * self.n * other.n / n;
        }
        self.n = n;
    }

    fn std_errors(&self) -> Vec<f64> {
        if self.n < 2.0 {
            return vec![0.0; self.mean.len()];
        }
        self.m2
            .iter()
            .map(|m| (m.max(0.0) / (self.n - 1.0) / self.n).sqrt())
            .collect()
    }
}

/// Moments of `f(z)` over draws `0..n` from D(deploy). `f` writes `dim`
/// values and returns `false` if any is non-finite.
fn sample_moments<F>(
    map: &dyn DistributionMap,
    deploy: &[f64],
    n: usize,
    seed: u64,
    dim: usize,
    what: &'static str,
    f: F,
) -> Result<Moments>
where
    F: Fn(&[f64], f64, &mut [f64]) -> bool + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Result<Moments>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * CHUNK;
            let end = (start + CHUNK).min(n);
            let mut z = Instance::default();
            let mut v = vec![0.0; dim];
            let mut shift = vec![0.0; dim];
            let mut s1 = vec![0.0; dim];
            let mut s2 = vec![0.0; dim];
            for i in start..end {
                let mut rng = sample_rng(seed, i as u64);
                map.draw(deploy, &mut rng, &mut z);
                if !f(&z.x, z.y, &mut v) {
                    return Err(Error::NonFinite { what, index: i });
                }
                if i == start {
                    shift.copy_from_slice(&v);
                }
                for k in 0..dim {
                    let d = v[k] - shift[k];
                    s1[k] += d;
                    s2[k] += d * d;
                }
            }
            let m = (end - start) as f64;
            Ok(Moments {
                n: m,
                mean: (0..dim).map(|k| shift[k] + s1[k] / m).collect(),
                m2: (0..dim).map(|k| s2[k] - s1[k] * s1[k] / m).collect(),
            })
        })
        .collect();
    let mut total = Moments {
        n: 0.0,
        mean: vec![0.0; dim],
        m2: vec![0.0; dim],
    };
    for p in parts {
        total.merge(&p?);
    }
    Ok(total)
}

fn check_inputs(
    map: &dyn DistributionMap,
    loss: &LossSpec,
    deploy: &[f64],
    eval: &[f64],
) -> Result<()> {
    map.validate(deploy)?;
    check_dim("eval theta", map.theta_dim(), eval.len())?;
    loss.check_dims(eval.len(), map.feature_dim())
}

fn exact_support(
    map: &dyn DistributionMap,
    deploy: &[f64],
    mc: &McConfig,
) -> Result<Option<Vec<Atom>>> {
    if mc.force_monte_carlo {
        Ok(None)
    } else {
        map.support(deploy)
    }
}

/// Weighted mean of the loss over a finite support.
pub fn risk_on_atoms(loss: &LossSpec, atoms: &[Atom], eval: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (i, a) in atoms.iter().enumerate() {
        let v = loss.value(&a.z.x, a.z.y, eval);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: "loss",
                index: i,
            });
        }
        total += a.weight * v;
    }
    Ok(total)
}

/// Weighted mean of the θ-gradient over a finite support.
pub fn gradient_on_atoms(loss: &LossSpec, atoms: &[Atom], eval: &[f64]) -> Result<Vec<f64>> {
    let mut total = vec![0.0; eval.len()];
    let mut g = vec![0.0; eval.len()];
    for (i, a) in atoms.iter().enumerate() {
        loss.grad_into(&a.z.x, a.z.y, eval, &mut g);
        if !crate::vecops::all_finite(&g) {
            return Err(Error::NonFinite {
                what: "gradient",
                index: i,
            });
        }
        crate::vecops::axpy(a.weight, &g, &mut total);
    }
    Ok(total)
}

/// DPR(deploy, eval) = E_{Z∼D(deploy)} ℓ(Z; eval).
pub fn decoupled_risk(
    map: &dyn DistributionMap,
    loss: &LossSpec,
    theta_deploy: &[f64],
    theta_eval: &[f64],
    mc: &McConfig,
) -> Result<RiskEstimate> {
    check_inputs(map, loss, theta_deploy, theta_eval)?;
    if let Some(atoms) = exact_support(map, theta_deploy, mc)? {
        let mean = risk_on_atoms(loss, &atoms, theta_eval)?;
        return Ok(RiskEstimate::exact(mean, atoms.len().max(1)));
    }
    if mc.n == 0 {
        return Err(Error::InvalidParameter(
            "sample count n must be >= 1".into(),
        ));
    }
    let m = sample_moments(map, theta_deploy, mc.n, mc.seed, 1, "loss", |x, y, out| {
        out[0] = loss.value(x, y, theta_eval);
        out[0].is_finite()
    })?;
    Ok(RiskEstimate {
        mean: m.mean[0],
        std_error: m.std_errors()[0],
        n_samples: mc.n,
        exact: false,
    })
}

/// PR(θ) = DPR(θ, θ).
pub fn performative_risk(
    map: &dyn DistributionMap,
    loss: &LossSpec,
    theta: &[f64],
    mc: &McConfig,
) -> Result<RiskEstimate> {
    decoupled_risk(map, loss, theta, theta, mc)
}

/// E_{Z∼D(deploy)} ∇_θ ℓ(Z; eval), with the Euclidean norm of the
/// per-coordinate standard errors.
pub fn risk_gradient(
    map: &dyn DistributionMap,
    loss: &LossSpec,
    theta_deploy: &[f64],
    theta_eval: &[f64],
    mc: &McConfig,
) -> Result<(Vec<f64>, f64)> {
    check_inputs(map, loss, theta_deploy, theta_eval)?;
    if let Some(atoms) = exact_support(map, theta_deploy, mc)? {
        return Ok((gradient_on_atoms(loss, &atoms, theta_eval)?, 0.0));
    }
    if mc.n == 0 {
        return Err(Error::InvalidParameter(
            "sample count n must be >= 1".into(),
        ));
    }
    let d = theta_eval.len();
    let m = sample_moments(
        map,
        theta_deploy,
        mc.n,
        mc.seed,
        d,
        "gradient",
        |x, y, out| {
            loss.grad_into(x, y, theta_eval, out);
            crate::vecops::all_finite(out)
        },
    )?;
    let se = crate::vecops::norm(&m.std_errors());
    Ok((m.mean, se))
}

/// `n` draws from D(θ) using the per-index seeding contract.
pub fn sample(map: &dyn DistributionMap, theta: &[f64], n: usize, seed: u64) -> Result<SampleSet> {
    map.validate(theta)?;
    let f = map.feature_dim();
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * CHUNK;
            let end = (start + CHUNK).min(n);
            let mut z = Instance::default();
            let mut xs = Vec::with_capacity((end - start) * f);
            let mut ys = Vec::with_capacity(end - start);
            for i in start..end {
                let mut rng = sample_rng(seed, i as u64);
                map.draw(theta, &mut rng, &mut z);
                xs.extend_from_slice(&z.x);
                ys.push(z.y);
            }
            (xs, ys)
        })
        .collect();
    let mut set = SampleSet {
        feature_dim: f,
        xs: Vec::with_capacity(n * f),
        ys: Vec::with_capacity(n),
    };
    for (xs, ys) in parts {
        set.xs.extend(xs);
        set.ys.extend(ys);
    }
    Ok(set)
}

/// Mean loss and mean θ-gradient over a packed sample, summed in fixed
/// chunks for determinism.
pub fn empirical_value_grad(
    loss: &LossSpec,
    samples: &SampleSet,
    theta: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::Empty("sample set"));
    }
    let d = theta.len();
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Result<(f64, Vec<f64>)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * CHUNK;
            let end = (start + CHUNK).min(n);
            let mut v = 0.0;
            let mut g = vec![0.0; d];
            let mut gi = vec![0.0; d];
            for i in start..end {
                let x = samples.x(i);
                let y = samples.ys[i];
                let l = loss.value(x, y, theta);
                if !l.is_finite() {
                    return Err(Error::NonFinite {
                        what: "loss",
                        index: i,
                    });
                }
                loss.grad_into(x, y, theta, &mut gi);
                if !crate::vecops::all_finite(&gi) {
                    return Err(Error::NonFinite {
                        what: "gradient",
                        index: i,
                    });
                }
                v += l;
                crate::vecops::axpy(1.0, &gi, &mut g);
            }
            Ok((v, g))
        })
        .collect();
    let mut value = 0.0;
    let mut grad = vec![0.0; d];
    for p in parts {
        let (v, g) = p?;
        value += v;
        crate::vecops::axpy(1.0, &g, &mut grad);
    }
    let inv = 1.0 / n as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok((value * inv, grad))
}
