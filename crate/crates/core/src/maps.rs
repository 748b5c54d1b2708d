//! Distribution maps θ ↦ D(θ) and their closed-form oracles.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::losses::{LossKind, LossSpec};
use crate::risk::Instance;
use crate::rng::{unit_f64, SampleRng};
use crate::space::ParameterSpace;

/// A weighted point of a finitely supported distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub weight: f64,
    pub z: Instance,
}

/// θ ↦ D(θ). Implementations are immutable and time-invariant: deploying the
/// same θ twice induces the same distribution.
pub trait DistributionMap: Send + Sync {
    fn name(&self) -> &'static str;

    fn theta_dim(&self) -> usize;

    /// Length of the feature vector x.
    fn feature_dim(&self) -> usize;

    /// Dimension m of z = (x, y).
    fn instance_dim(&self) -> usize {
        self.feature_dim() + 1
    }

    /// Whether outcomes are restricted to {0, 1}.
    fn is_binary(&self) -> bool {
        false
    }

    fn declared_sensitivity(&self) -> Option<f64> {
        None
    }

    /// Rejects θ outside the map's domain.
    fn validate(&self, theta: &[f64]) -> Result<()> {
        check_dim("map theta", self.theta_dim(), theta.len())
    }

    /// One draw from D(θ). `theta` has already passed [`validate`].
    ///
    /// [`validate`]: DistributionMap::validate
    fn draw(&self, theta: &[f64], rng: &mut SampleRng, out: &mut Instance);

    /// Exact finite support of D(θ), if there is one.
    fn support(&self, _theta: &[f64]) -> Result<Option<Vec<Atom>>> {
        Ok(None)
    }

    /// Closed-form oracles for this map paired with `loss`.
    fn closed_forms(&self, _loss: &LossSpec) -> Option<Box<dyn ExactOracle>> {
        None
    }

    /// Cost of an explicit coupling of D(a) and D(b), an upper bound on
    /// W1(D(a), D(b)).
    fn coupling_bound(&self, _a: &[f64], _b: &[f64]) -> Option<f64> {
        None
    }

    fn default_space(&self) -> ParameterSpace;
}

/// Exact minimizer and risk for one (map, loss) pair.
pub trait ExactOracle: Send + Sync {
    /// G(θ) = argmin_{φ ∈ Θ} E_{Z∼D(θ)} ℓ(Z; φ).
    fn minimizer(&self, deploy: &[f64], space: &ParameterSpace) -> Vec<f64>;

    fn performative_risk(&self, theta: &[f64]) -> f64;

    fn stable_point(&self, _space: &ParameterSpace) -> Option<Vec<f64>> {
        None
    }

    fn optimum(&self, _space: &ParameterSpace) -> Option<Vec<f64>> {
        None
    }
}

fn clamp_to(space: &ParameterSpace, v: f64) -> Vec<f64> {
    space.project(&[v])
}

/// X uniform on {±1}, Y | X ∼ Bernoulli(1/2 + μX + εθX).
#[derive(Clone, Debug, PartialEq)]
pub struct BiasedCoinMap {
    pub mu: f64,
    pub eps: f64,
}

impl BiasedCoinMap {
    /// Requires the bias probability to stay in [0, 1] on Θ = [0, 1], which
    /// is |μ| ≤ 1/2 and |μ + ε| ≤ 1/2.
    pub fn new(mu: f64, eps: f64) -> Result<Self> {
        if !(mu.is_finite() && eps.is_finite()) {
            return Err(Error::InvalidParameter(
                "coin parameters must be finite".into(),
            ));
        }
        let m = BiasedCoinMap { mu, eps };
        m.check_probability(0.0)?;
        m.check_probability(1.0)?;
        Ok(m)
    }

    fn check_probability(&self, theta: f64) -> Result<()> {
        let shift = self.mu + self.eps * theta;
        if shift.abs() > 0.5 + 1e-12 {
            let x = if shift > 0.0 { 1.0 } else { -1.0 };
            return Err(Error::ProbabilityOutOfRange {
                p: 0.5 + shift * x,
                x,
                theta,
            });
        }
        Ok(())
    }

    #[inline]
    fn p_one(&self, x: f64, theta: f64) -> f64 {
        (0.5 + (self.mu + self.eps * theta) * x).clamp(0.0, 1.0)
    }

    pub fn closed_form(&self) -> CoinClosedForms {
        CoinClosedForms {
            mu: self.mu,
            eps: self.eps,
        }
    }
}

impl DistributionMap for BiasedCoinMap {
    fn name(&self) -> &'static str {
        "biased_coin"
    }
    fn theta_dim(&self) -> usize {
        1
    }
    fn feature_dim(&self) -> usize {
        1
    }
    fn is_binary(&self) -> bool {
        true
    }
    fn declared_sensitivity(&self) -> Option<f64> {
        Some(self.eps.abs())
    }

    fn validate(&self, theta: &[f64]) -> Result<()> {
        check_dim("map theta", 1, theta.len())?;
        self.check_probability(theta[0])
    }

    #[inline]
    fn draw(&self, theta: &[f64], rng: &mut SampleRng, out: &mut Instance) {
        let w = rng.next_u64();
        let x = if w & 1 == 1 { 1.0 } else { -1.0 };
        let u = unit_f64(w);
        out.x.clear();
        out.x.push(x);
        out.y = if u < self.p_one(x, theta[0]) {
            1.0
        } else {
            0.0
        };
    }

    fn support(&self, theta: &[f64]) -> Result<Option<Vec<Atom>>> {
        self.validate(theta)?;
        let mut atoms = Vec::with_capacity(4);
        for x in [-1.0, 1.0] {
            let p = self.p_one(x, theta[0]);
            for (y, w) in [(0.0, 1.0 - p), (1.0, p)] {
                if w > 0.0 {
                    atoms.push(Atom {
                        weight: 0.5 * w,
                        z: Instance::new(vec![x], y),
                    });
                }
            }
        }
        Ok(Some(atoms))
    }

    fn closed_forms(&self, loss: &LossSpec) -> Option<Box<dyn ExactOracle>> {
        match loss.kind {
            LossKind::SquaredAffine => Some(Box::new(self.closed_form())),
            _ => None,
        }
    }

    /// Keeps X fixed and couples Y monotonically; cost Σ_x P(x)·|Δp(x)|.
    fn coupling_bound(&self, a: &[f64], b: &[f64]) -> Option<f64> {
        let d: f64 = [-1.0, 1.0]
            .iter()
            .map(|&x| 0.5 * (self.p_one(x, a[0]) - self.p_one(x, b[0])).abs())
            .sum();
        Some(d)
    }

    fn default_space(&self) -> ParameterSpace {
        ParameterSpace::Interval { lo: 0.0, hi: 1.0 }
    }
}

/// Closed forms of the coin under the squared affine loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoinClosedForms {
    pub mu: f64,
    pub eps: f64,
}

impl CoinClosedForms {
    /// Unconstrained minimizer of DPR(θ', ·): μ + εθ'.
    pub fn g(&self, theta_deploy: f64) -> f64 {
        self.mu + self.eps * theta_deploy
    }

    /// PR(θ) = 1/4 − 2θμ + (1 − 2ε)θ².
    pub fn perf_risk(&self, theta: f64) -> f64 {
        0.25 - 2.0 * theta * self.mu + (1.0 - 2.0 * self.eps) * theta * theta
    }

    /// DPR(θ', θ) = 1/4 − 2θ(μ + εθ') + θ².
    pub fn decoupled_risk(&self, theta_deploy: f64, theta: f64) -> f64 {
        0.25 - 2.0 * theta * self.g(theta_deploy) + theta * theta
    }

    /// μ/(1 − ε).
    pub fn theta_ps(&self) -> f64 {
        self.mu / (1.0 - self.eps)
    }

    /// μ/(1 − 2ε), the minimizer of PR when it is convex.
    pub fn theta_po(&self) -> f64 {
        self.mu / (1.0 - 2.0 * self.eps)
    }
}

impl ExactOracle for CoinClosedForms {
    fn minimizer(&self, deploy: &[f64], space: &ParameterSpace) -> Vec<f64> {
        clamp_to(space, self.g(deploy[0]))
    }
    fn performative_risk(&self, theta: &[f64]) -> f64 {
        self.perf_risk(theta[0])
    }
    fn stable_point(&self, space: &ParameterSpace) -> Option<Vec<f64>> {
        (self.eps < 1.0).then(|| clamp_to(space, self.theta_ps()))
    }
    fn optimum(&self, space: &ParameterSpace) -> Option<Vec<f64>> {
        (1.0 - 2.0 * self.eps > 0.0).then(|| clamp_to(space, self.theta_po()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointMassKind {
    /// Y = εθ.
    LinearEps,
    /// Y = 1 + εθ.
    AffineEps,
    /// Y = 1 if θ < 1/2, else 0.
    StepHalf,
}

/// Deterministic outcome, empty feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct PointMassMap {
    pub kind: PointMassKind,
    pub eps: f64,
}

impl PointMassMap {
    pub fn linear(eps: f64) -> Self {
        PointMassMap {
            kind: PointMassKind::LinearEps,
            eps,
        }
    }
    pub fn affine(eps: f64) -> Self {
        PointMassMap {
            kind: PointMassKind::AffineEps,
            eps,
        }
    }
    pub fn step_half() -> Self {
        PointMassMap {
            kind: PointMassKind::StepHalf,
            eps: 0.0,
        }
    }

    #[inline]
    pub fn outcome(&self, theta: f64) -> f64 {
        match self.kind {
            PointMassKind::LinearEps => self.eps * theta,
            PointMassKind::AffineEps => 1.0 + self.eps * theta,
            PointMassKind::StepHalf => {
                if theta < 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl DistributionMap for PointMassMap {
    fn name(&self) -> &'static str {
        match self.kind {
            PointMassKind::LinearEps => "point_mass_linear",
            PointMassKind::AffineEps => "point_mass_affine",
            PointMassKind::StepHalf => "step_half",
        }
    }
    fn theta_dim(&self) -> usize {
        1
    }
    fn feature_dim(&self) -> usize {
        0
    }
    fn is_binary(&self) -> bool {
        self.kind == PointMassKind::StepHalf
    }
    fn declared_sensitivity(&self) -> Option<f64> {
        match self.kind {
            PointMassKind::StepHalf => None,
            _ => Some(self.eps.abs()),
        }
    }

    #[inline]
    fn draw(&self, theta: &[f64], _rng: &mut SampleRng, out: &mut Instance) {
        out.x.clear();
        out.y = self.outcome(theta[0]);
    }

    fn support(&self, theta: &[f64]) -> Result<Option<Vec<Atom>>> {
        self.validate(theta)?;
        Ok(Some(vec![Atom {
            weight: 1.0,
            z: Instance::new(Vec::new(), self.outcome(theta[0])),
        }]))
    }

    fn closed_forms(&self, loss: &LossSpec) -> Option<Box<dyn ExactOracle>> {
        let map = self.clone();
        match (&loss.kind, self.kind) {
            (LossKind::SquaredLocation, _) => Some(Box::new(LocationOracle { map })),
            (LossKind::Linear { beta }, PointMassKind::LinearEps) => {
                Some(Box::new(LinearOracle { map, beta: *beta }))
            }
            _ => None,
        }
    }

    fn coupling_bound(&self, a: &[f64], b: &[f64]) -> Option<f64> {
        Some((self.outcome(a[0]) - self.outcome(b[0])).abs())
    }

    fn default_space(&self) -> ParameterSpace {
        match self.kind {
            PointMassKind::LinearEps => ParameterSpace::Interval { lo: -1.0, hi: 1.0 },
            PointMassKind::AffineEps => ParameterSpace::Interval {
                lo: -1e10,
                hi: 1e10,
            },
            PointMassKind::StepHalf => ParameterSpace::Interval { lo: 0.0, hi: 1.0 },
        }
    }
}

/// Squared location loss on a point mass: G(θ) = Π(y(θ)), PR(θ) = (y(θ) − θ)².
struct LocationOracle {
    map: PointMassMap,
}

impl ExactOracle for LocationOracle {
    fn minimizer(&self, deploy: &[f64], space: &ParameterSpace) -> Vec<f64> {
        clamp_to(space, self.map.outcome(deploy[0]))
    }
    fn performative_risk(&self, theta: &[f64]) -> f64 {
        let r = self.map.outcome(theta[0]) - theta[0];
        r * r
    }
    fn stable_point(&self, space: &ParameterSpace) -> Option<Vec<f64>> {
        match self.map.kind {
            PointMassKind::AffineEps if self.map.eps < 1.0 => {
                Some(clamp_to(space, 1.0 / (1.0 - self.map.eps)))
            }
            PointMassKind::LinearEps => Some(clamp_to(space, 0.0)),
            _ => None,
        }
    }
}

/// Linear loss βyθ on Y = εθ: DPR(θ', φ) = βεθ'φ, minimized at an end of Θ.
struct LinearOracle {
    map: PointMassMap,
    beta: f64,
}

impl ExactOracle for LinearOracle {
    fn minimizer(&self, deploy: &[f64], space: &ParameterSpace) -> Vec<f64> {
        let slope = self.beta * self.map.outcome(deploy[0]);
        let (lo, hi) = space.bounds();
        if slope > 0.0 {
            lo
        } else if slope < 0.0 {
            hi
        } else {
            space.project(&[0.0])
        }
    }
    fn performative_risk(&self, theta: &[f64]) -> f64 {
        self.beta * self.map.outcome(theta[0]) * theta[0]
    }
}

/// z ∼ N(ε₁μ, diag(ε₂σ)²) in R^p with θ = (μ, σ) ∈ R^{2p}. The last
/// coordinate of z is the outcome, the first p − 1 are features.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianFamilyMap {
    pub eps1: f64,
    pub eps2: f64,
    pub p: usize,
}

impl GaussianFamilyMap {
    pub fn new(eps1: f64, eps2: f64, p: usize) -> Result<Self> {
        if p == 0 || !eps1.is_finite() || !eps2.is_finite() {
            return Err(Error::InvalidParameter(
                "gaussian family needs p >= 1 and finite eps1, eps2".into(),
            ));
        }
        Ok(GaussianFamilyMap { eps1, eps2, p })
    }
}

impl DistributionMap for GaussianFamilyMap {
    fn name(&self) -> &'static str {
        "gaussian_family"
    }
    fn theta_dim(&self) -> usize {
        2 * self.p
    }
    fn feature_dim(&self) -> usize {
        self.p - 1
    }
    fn declared_sensitivity(&self) -> Option<f64> {
        Some(self.eps1.abs().max(self.eps2.abs()))
    }

    fn draw(&self, theta: &[f64], rng: &mut SampleRng, out: &mut Instance) {
        out.x.clear();
        for k in 0..self.p {
            let g: f64 = StandardNormal.sample(rng);
            let z = self.eps1 * theta[k] + self.eps2 * theta[self.p + k] * g;
            if k + 1 < self.p {
                out.x.push(z);
            } else {
                out.y = z;
            }
        }
    }

    /// Shared standard normals: E‖Δz‖ ≤ ε₁‖Δμ‖ + ε₂‖Δσ‖·√p.
    fn coupling_bound(&self, a: &[f64], b: &[f64]) -> Option<f64> {
        let p = self.p;
        let dmu = crate::vecops::dist(&a[..p], &b[..p]);
        let dsig = crate::vecops::dist(&a[p..], &b[p..]);
        Some(self.eps1.abs() * dmu + self.eps2.abs() * dsig * (p as f64).sqrt())
    }

    fn default_space(&self) -> ParameterSpace {
        ParameterSpace::symmetric_box(2 * self.p, 10.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn coin_closed_form_values() {
        let c = BiasedCoinMap::new(0.3, 0.1).unwrap().closed_form();
        assert_relative_eq!(c.theta_ps(), 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(c.theta_po(), 0.375, epsilon = 1e-15);
        assert_relative_eq!(c.perf_risk(0.0), 0.25);
        assert_relative_eq!(c.perf_risk(0.375), 0.1375, epsilon = 1e-15);
        let z = BiasedCoinMap::new(0.3, 0.0).unwrap().closed_form();
        assert_eq!(z.theta_ps(), z.theta_po());
    }

    #[test]
    fn coin_fixed_point_and_stationarity() {
        for &(mu, eps) in &[(0.3, 0.1), (0.2, 0.25), (0.1, 0.05)] {
            let c = BiasedCoinMap::new(mu, eps).unwrap().closed_form();
            assert!((c.g(c.theta_ps()) - c.theta_ps()).abs() < 1e-15);
            // dPR/dθ = −2μ + 2(1 − 2ε)θ
            let slope = -2.0 * mu + 2.0 * (1.0 - 2.0 * eps) * c.theta_po();
            assert!(slope.abs() < 1e-15);
        }
    }

    #[test]
    fn concave_regime() {
        let c = BiasedCoinMap::new(-0.1, 0.6).unwrap().closed_form();
        for &t in &[0.0, 0.3, 0.7, 1.0] {
            assert_relative_eq!(
                c.perf_risk(t),
                0.25 + 0.2 * t - 0.2 * t * t,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn coin_regime_violation() {
        assert!(matches!(
            BiasedCoinMap::new(0.4, 0.2),
            Err(Error::ProbabilityOutOfRange { .. })
        ));
        let m = BiasedCoinMap::new(0.3, 0.1).unwrap();
        assert!(m.validate(&[3.0]).is_err());
        assert!(m.validate(&[0.5, 0.5]).is_err());
    }

    #[test]
    fn coin_support_sums_to_one() {
        let m = BiasedCoinMap::new(0.3, 0.1).unwrap();
        let s = m.support(&[0.6]).unwrap().unwrap();
        let total: f64 = s.iter().map(|a| a.weight).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-15);
        let exy: f64 = s.iter().map(|a| a.weight * a.z.x[0] * a.z.y).sum();
        assert_relative_eq!(exy, 0.3 + 0.1 * 0.6, epsilon = 1e-15);
    }

    #[test]
    fn affine_point_mass() {
        let m = PointMassMap::affine(2.0);
        let mut rng = crate::rng::sample_rng(0, 0);
        let mut z = Instance::default();
        m.draw(&[1.0], &mut rng, &mut z);
        assert_eq!(z.y, 3.0);
        assert!(z.x.is_empty());
    }

    #[test]
    fn linear_oracle_picks_opposite_end() {
        let m = PointMassMap::linear(0.5);
        let o = m.closed_forms(&LossSpec::linear(1.0)).unwrap();
        let s = m.default_space();
        assert_eq!(o.minimizer(&[0.5], &s), vec![-1.0]);
        assert_eq!(o.minimizer(&[-1.0], &s), vec![1.0]);
    }

    #[test]
    fn step_half_outcomes() {
        let m = PointMassMap::step_half();
        assert_eq!(m.outcome(0.49), 1.0);
        assert_eq!(m.outcome(0.5), 0.0);
        assert_eq!(m.declared_sensitivity(), None);
    }

    #[test]
    fn gaussian_dimensions() {
        let m = GaussianFamilyMap::new(0.5, 1.0, 3).unwrap();
        assert_eq!(m.theta_dim(), 6);
        assert_eq!(m.feature_dim(), 2);
        assert_eq!(m.instance_dim(), 3);
        assert_eq!(m.declared_sensitivity(), Some(1.0));
    }
}
