//! Strategic classification: agents facing a linear score best-respond by
//! moving their strategic features, x'_S = x_S − ε·θ_S, at quadratic cost.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngExt};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, Procedure, SolverConfig, Trajectory};
use crate::error::{Error, Result};
use crate::losses::{logistic_beta, sigmoid, LossSpec};
use crate::maps::{Atom, DistributionMap};
use crate::risk::{risk_on_atoms, Instance};
use crate::rng::{sample_rng, SampleRng};
use crate::space::ParameterSpace;
use crate::vecops;

/// Base population: standardized features, binary outcomes and the indices
/// of the features agents can manipulate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategicDataset {
    pub features: Vec<Vec<f64>>,
    pub outcomes: Vec<f64>,
    pub strategic: Vec<usize>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub names: Vec<String>,
}

impl StrategicDataset {
    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.mean.len()
    }

    /// Builds a dataset from raw rows, standardizing every feature with the
    /// population mean and standard deviation of the rows given.
    pub fn from_raw(
        raw: Vec<Vec<f64>>,
        outcomes: Vec<f64>,
        strategic: Vec<usize>,
        names: Vec<String>,
    ) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        if raw.len() != outcomes.len() {
            return Err(Error::Dataset(format!(
                "{} feature rows but {} outcomes",
                raw.len(),
                outcomes.len()
            )));
        }
        let d = raw[0].len();
        if raw.iter().any(|r| r.len() != d) {
            return Err(Error::Dataset("ragged feature rows".into()));
        }
        if let Some(&bad) = strategic.iter().find(|&&k| k >= d) {
            return Err(Error::Dataset(format!(
                "strategic index {bad} out of range for {d} features"
            )));
        }
        if let Some((i, y)) = outcomes
            .iter()
            .enumerate()
            .find(|(_, &y)| y != 0.0 && y != 1.0)
        {
            return Err(Error::Dataset(format!("non-binary outcome {y} at row {i}")));
        }
        let n = raw.len() as f64;
        let mean: Vec<f64> = (0..d)
            .map(|k| raw.iter().map(|r| r[k]).sum::<f64>() / n)
            .collect();
        let scale: Vec<f64> = (0..d)
            .map(|k| {
                let v = raw.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n;
                if v > 0.0 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let features = raw
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .map(|(k, v)| (v - mean[k]) / scale[k])
                    .collect()
            })
            .collect();
        Ok(StrategicDataset {
            features,
            outcomes,
            strategic,
            mean,
            scale,
            names,
        })
    }

    /// Appends a non-strategic constant feature equal to 1.
    pub fn with_intercept(&self) -> Self {
        let mut out = self.clone();
        for x in &mut out.features {
            x.push(1.0);
        }
        out.mean.push(0.0);
        out.scale.push(1.0);
        out.names.push("intercept".into());
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadOptions {
    /// Target share of positive outcomes; the majority class is subsampled.
    pub balance: Option<f64>,
    /// Feature columns to keep; all non-outcome columns when `None`.
    pub feature_columns: Option<Vec<String>>,
    pub seed: u64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            balance: Some(0.45),
            feature_columns: None,
            seed: 0,
        }
    }
}

/// Row indices kept when subsampling to a positive share of `rate`.
pub fn balance_indices(outcomes: &[f64], rate: f64, seed: u64) -> Result<Vec<usize>> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "balance rate must lie in (0, 1), got {rate}"
        )));
    }
    let pos: Vec<usize> = (0..outcomes.len())
        .filter(|&i| outcomes[i] == 1.0)
        .collect();
    let neg: Vec<usize> = (0..outcomes.len())
        .filter(|&i| outcomes[i] != 1.0)
        .collect();
    let (p, q) = (pos.len() as f64, neg.len() as f64);
    if p == 0.0 || q == 0.0 {
        return Err(Error::Dataset(
            "balancing needs both outcome classes".into(),
        ));
    }
    let mut rng = sample_rng(seed, u64::MAX);
    let mut pick = |mut v: Vec<usize>, k: usize| -> Vec<usize> {
        v.shuffle(&mut rng);
        v.truncate(k);
        v
    };
    let (mut keep_pos, mut keep_neg) = (pos.clone(), neg.clone());
    if p / (p + q) < rate {
        let total = (p / rate).floor() as usize;
        keep_neg = pick(neg, total.saturating_sub(pos.len()));
    } else if p / (p + q) > rate {
        let total = (q / (1.0 - rate)).floor() as usize;
        keep_pos = pick(pos, total.saturating_sub(neg.len()));
    }
    let mut keep: Vec<usize> = keep_pos.into_iter().chain(keep_neg).collect();
    keep.sort_unstable();
    Ok(keep)
}

/// Reads a headed, comma-separated numeric file. The outcome column must be
/// binary; the listed strategic columns must be among the features.
pub fn load_dataset(
    path: &Path,
    outcome_column: &str,
    strategic_columns: &[String],
    opts: &LoadOptions,
) -> Result<StrategicDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let headers: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Dataset(format!("missing column '{name}'")))
    };
    let out_idx = col(outcome_column)?;
    let feature_idx: Vec<usize> = match &opts.feature_columns {
        Some(cols) => cols.iter().map(|c| col(c)).collect::<Result<_>>()?,
        None => (0..headers.len()).filter(|&i| i != out_idx).collect(),
    };
    let names: Vec<String> = feature_idx.iter().map(|&i| headers[i].clone()).collect();
    let strategic = strategic_columns
        .iter()
        .map(|c| {
            col(c)?;
            names
                .iter()
                .position(|n| n == c)
                .ok_or_else(|| Error::Dataset(format!("strategic column '{c}' is not a feature")))
        })
        .collect::<Result<Vec<usize>>>()?;
    let mut raw = Vec::new();
    let mut outcomes = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let cell = |i: usize| -> Result<f64> {
            let s = rec.get(i).unwrap_or("").trim();
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    Error::Dataset(format!(
                        "non-numeric cell '{s}' in column '{}' at row {}",
                        headers[i],
                        r + 1
                    ))
                })
        };
        let y = cell(out_idx)?;
        if y != 0.0 && y != 1.0 {
            return Err(Error::Dataset(format!(
                "non-binary outcome {y} at row {}",
                r + 1
            )));
        }
        outcomes.push(y);
        raw.push(
            feature_idx
                .iter()
                .map(|&i| cell(i))
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    if raw.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if let Some(rate) = opts.balance {
        let keep = balance_indices(&outcomes, rate, opts.seed)?;
        raw = keep.iter().map(|&i| raw[i].clone()).collect();
        outcomes = keep.iter().map(|&i| outcomes[i]).collect();
    }
    StrategicDataset::from_raw(raw, outcomes, strategic, names)
}

/// Gaussian features with heterogeneous raw location and scale, outcomes
/// from a planted logistic model. The first `strategic_count` features are
/// strategic.
pub fn synthesize_credit_data(
    n: usize,
    m: usize,
    strategic_count: usize,
    seed: u64,
) -> Result<StrategicDataset> {
    if n < 10 || m < 2 {
        return Err(Error::InvalidParameter(format!(
            "synthetic data needs n >= 10 and m >= 2, got n = {n}, m = {m}"
        )));
    }
    let d = m - 1;
    if strategic_count > d {
        return Err(Error::InvalidParameter(format!(
            "{strategic_count} strategic features requested but only {d} exist"
        )));
    }
    let mut rng = sample_rng(seed, u64::MAX - 1);
    let loc: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
    let sd: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..3.0)).collect();
    let weights: Vec<f64> = (0..d)
        .map(|k| {
            let w: f64 = rng.random_range(0.5..1.5);
            if k % 2 == 0 {
                w
            } else {
                -w
            }
        })
        .collect();
    let mut raw = Vec::with_capacity(n);
    let mut outcomes = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = sample_rng(seed, i as u64);
        let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut r)).collect();
        let score = vecops::dot(&weights, &g) / (d as f64).sqrt();
        let y = if crate::rng::unit_f64(r.next_u64()) < sigmoid(score) {
            1.0
        } else {
            0.0
        };
        raw.push((0..d).map(|k| loc[k] + sd[k] * g[k]).collect());
        outcomes.push(y);
    }
    StrategicDataset::from_raw(
        raw,
        outcomes,
        (0..strategic_count).collect(),
        (0..d).map(|k| format!("x{k}")).collect(),
    )
}

/// x with x_S replaced by x_S − ε·θ_S.
pub fn best_response(x: &[f64], theta: &[f64], eps: f64, strategic: &[usize]) -> Vec<f64> {
    let mut out = x.to_vec();
    for &k in strategic {
        out[k] -= eps * theta[k];
    }
    out
}

/// The induced distribution D(θ): the empirical measure of best-responded
/// base points, each with weight 1/n.
#[derive(Clone, Debug, PartialEq)]
pub struct StrategicMap {
    pub data: StrategicDataset,
    pub eps: f64,
}

impl StrategicMap {
    pub fn new(data: StrategicDataset, eps: f64) -> Result<Self> {
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "strategic eps must be >= 0, got {eps}"
            )));
        }
        if data.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        Ok(StrategicMap { data, eps })
    }

    fn strategic_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.data
            .strategic
            .iter()
            .map(|&k| (a[k] - b[k]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

pub fn induced_distribution(data: &StrategicDataset, theta: &[f64], eps: f64) -> Result<Vec<Atom>> {
    StrategicMap::new(data.clone(), eps)?
        .support(theta)
        .map(|s| s.expect("strategic map is finitely supported"))
}

impl DistributionMap for StrategicMap {
    fn name(&self) -> &'static str {
        "strategic"
    }
    fn theta_dim(&self) -> usize {
        self.data.feature_dim()
    }
    fn feature_dim(&self) -> usize {
        self.data.feature_dim()
    }
    fn is_binary(&self) -> bool {
        true
    }
    fn declared_sensitivity(&self) -> Option<f64> {
        Some(self.eps)
    }

    fn draw(&self, theta: &[f64], rng: &mut SampleRng, out: &mut Instance) {
        let i = rng.random_range(0..self.data.len());
        out.x.clear();
        out.x.extend_from_slice(&self.data.features[i]);
        for &k in &self.data.strategic {
            out.x[k] -= self.eps * theta[k];
        }
        out.y = self.data.outcomes[i];
    }

    fn support(&self, theta: &[f64]) -> Result<Option<Vec<Atom>>> {
        self.validate(theta)?;
        let w = 1.0 / self.data.len() as f64;
        Ok(Some(
            self.data
                .features
                .iter()
                .zip(&self.data.outcomes)
                .map(|(x, &y)| Atom {
                    weight: w,
                    z: Instance::new(best_response(x, theta, self.eps, &self.data.strategic), y),
                })
                .collect(),
        ))
    }

    /// Moving each base point to its own best response costs ε‖Δθ_S‖.
    fn coupling_bound(&self, a: &[f64], b: &[f64]) -> Option<f64> {
        Some(self.eps * self.strategic_distance(a, b))
    }

    fn default_space(&self) -> ParameterSpace {
        ParameterSpace::symmetric_box(self.data.feature_dim(), 1e10)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CreditConfig {
    pub eps: f64,
    pub dynamic: Procedure,
    /// Defaults to 1000/n.
    pub gamma_reg: Option<f64>,
    /// RGD step; defaults to 2/(β + γ) with β measured on the base data.
    pub eta: Option<f64>,
    /// Inner solves get 10⁵ iterations by default: large ε makes the shifted
    /// features badly conditioned.
    pub solver: SolverConfig,
    pub seed: u64,
    /// Fit an unpenalized intercept on an appended constant feature. The
    /// intercept absorbs the uniform strategic shift, so θ_S then stays at
    /// its ε = 0 value.
    pub intercept: bool,
}

impl Default for CreditConfig {
    fn default() -> Self {
        CreditConfig {
            eps: 0.01,
            dynamic: Procedure::Rrm,
            gamma_reg: None,
            eta: None,
            solver: SolverConfig {
                max_inner_iters: 100_000,
                ..SolverConfig::default()
            },
            seed: 0,
            intercept: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CreditReport {
    pub trajectory: Trajectory,
    /// Accuracy of θ_t on D(θ_t) at threshold 1/2.
    pub accuracy: Vec<f64>,
    /// DPR(θ_{t−1}, θ_t): loss right after retraining, before redeploying.
    pub post_training: Vec<f64>,
    /// PR(θ_t): loss after the population responds to θ_t.
    pub post_shift: Vec<f64>,
    /// Largest smoothness constant over the induced datasets of the run.
    pub beta: f64,
    pub gamma: f64,
    pub eps: f64,
    pub eta: Option<f64>,
    /// γ/β, the RRM threshold.
    pub rrm_threshold: f64,
    /// γ/((β+γ)(1+1.5ηβ)), the RGD threshold, when η is set.
    pub rgd_threshold: Option<f64>,
}

fn accuracy(atoms: &[Atom], theta: &[f64]) -> f64 {
    let hits = atoms
        .iter()
        .filter(|a| {
            let pred = if sigmoid(vecops::dot(theta, &a.z.x)) >= 0.5 {
                1.0
            } else {
                0.0
            };
            pred == a.z.y
        })
        .count();
    hits as f64 / atoms.len() as f64
}

/// Runs RRM or RGD on the strategic map, treating the dataset as the true
/// base distribution. θ_0 minimizes the risk on the unshifted data. With
/// `cfg.intercept` the iterates carry one extra trailing coordinate.
pub fn run_credit_experiment(data: &StrategicDataset, cfg: &CreditConfig) -> Result<CreditReport> {
    let gamma = cfg.gamma_reg.unwrap_or(1000.0 / data.len() as f64);
    let (data, loss) = if cfg.intercept {
        (
            data.with_intercept(),
            LossSpec::logistic_l2_intercept(gamma)?,
        )
    } else {
        (data.clone(), LossSpec::logistic_l2(gamma)?)
    };
    let data = &data;
    let map = StrategicMap::new(data.clone(), cfg.eps)?;
    let space = map.default_space();
    let d = data.feature_dim();
    let base = StrategicMap::new(data.clone(), 0.0)?;
    let theta0 = dynamics::rrm_step(
        &base,
        &loss,
        &space,
        &vec![0.0; d],
        &cfg.solver,
        0,
        cfg.seed,
    )?;
    let beta0 = logistic_beta(data.features.iter().map(|x| x.as_slice()), gamma);
    let (trajectory, eta) = match cfg.dynamic {
        Procedure::Rrm => (
            dynamics::rrm(&map, &loss, &space, &theta0, &cfg.solver, 0, cfg.seed)?,
            None,
        ),
        Procedure::Rgd => {
            let eta = cfg.eta.unwrap_or(2.0 / (beta0 + gamma));
            (
                dynamics::rgd(&map, &loss, &space, &theta0, eta, &cfg.solver, 0, cfg.seed)?,
                Some(eta),
            )
        }
        other => {
            return Err(Error::Unsupported(format!(
                "credit experiment runs rrm or rgd, not {other:?}"
            )))
        }
    };
    let mut beta = beta0;
    let mut acc = Vec::new();
    let mut post_shift = Vec::new();
    let mut post_training = Vec::new();
    let mut prev: Option<Vec<Atom>> = None;
    for theta in &trajectory.iterates {
        let atoms = map.support(theta)?.expect("finite support");
        beta = beta.max(logistic_beta(atoms.iter().map(|a| a.z.x.as_slice()), gamma));
        acc.push(accuracy(&atoms, theta));
        post_shift.push(risk_on_atoms(&loss, &atoms, theta)?);
        if let Some(p) = &prev {
            post_training.push(risk_on_atoms(&loss, p, theta)?);
        }
        prev = Some(atoms);
    }
    let rgd_threshold = eta.map(|e| gamma / ((beta + gamma) * (1.0 + 1.5 * e * beta)));
    Ok(CreditReport {
        trajectory,
        accuracy: acc,
        post_training,
        post_shift,
        beta,
        gamma,
        eps: cfg.eps,
        eta,
        rrm_threshold: gamma / beta,
        rgd_threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn intercept_column_is_constant_and_inert() {
        let ds = synthesize_credit_data(20, 4, 1, 3).unwrap();
        let wi = ds.with_intercept();
        assert_eq!(wi.feature_dim(), ds.feature_dim() + 1);
        assert!(wi.features.iter().all(|x| *x.last().unwrap() == 1.0));
        assert_eq!(wi.strategic, ds.strategic);
        assert_eq!(wi.names.last().unwrap(), "intercept");
    }

    #[test]
    fn best_response_shift() {
        let x = best_response(&[1.0, 1.0, 7.0], &[0.5, 0.0, 3.0], 2.0, &[0, 1]);
        assert_eq!(x, vec![0.0, 1.0, 7.0]);
        assert_eq!(
            best_response(&[1.0, 2.0], &[0.0, 0.0], 5.0, &[0, 1]),
            vec![1.0, 2.0]
        );
    }

    #[test]
    fn standardization() {
        let raw = vec![
            vec![1.0, 10.0],
            vec![2.0, 10.0],
            vec![3.0, 30.0],
            vec![6.0, 30.0],
        ];
        let ds =
            StrategicDataset::from_raw(raw, vec![0.0, 1.0, 0.0, 1.0], vec![0], vec![]).unwrap();
        for k in 0..2 {
            let m: f64 = ds.features.iter().map(|r| r[k]).sum::<f64>() / 4.0;
            let v: f64 = ds.features.iter().map(|r| (r[k] - m).powi(2)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-12);
            assert_relative_eq!(v, 1.0, epsilon = 1e-12);
        }
        assert_relative_eq!(ds.mean[0], 3.0);
    }

    #[test]
    fn balance_counts() {
        let y: Vec<f64> = (0..100).map(|i| if i < 30 { 1.0 } else { 0.0 }).collect();
        let keep = balance_indices(&y, 0.45, 3).unwrap();
        assert_eq!(keep.len(), 66);
        assert_eq!(keep.iter().filter(|&&i| y[i] == 1.0).count(), 30);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = synthesize_credit_data(50, 4, 2, 7).unwrap();
        let b = synthesize_credit_data(50, 4, 2, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.strategic, vec![0, 1]);
        let c = synthesize_credit_data(10, 2, 1, 0).unwrap();
        assert_eq!(c.strategic, vec![0]);
        assert!(synthesize_credit_data(9, 2, 1, 0).is_err());
        assert!(synthesize_credit_data(10, 2, 2, 0).is_err());
    }

    #[test]
    fn zero_theta_leaves_data() {
        let ds = synthesize_credit_data(20, 3, 1, 1).unwrap();
        let atoms = induced_distribution(&ds, &[0.0, 0.0], 3.0).unwrap();
        for (a, x) in atoms.iter().zip(&ds.features) {
            assert_eq!(&a.z.x, x);
        }
    }
}
