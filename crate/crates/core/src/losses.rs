//! Pointwise losses ℓ(z; θ) with θ-gradients, z-gradients and declared
//! regularity constants.
//!
//! Losses work on a borrowed feature slice `x` and outcome `y` so they can be
//! evaluated directly on packed sample storage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::ParameterSpace;
use crate::vecops;

/// Regularity constants; `None` means "not certified".
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossConstants {
    /// Joint smoothness β.
    pub beta: Option<f64>,
    /// Strong convexity γ.
    pub gamma: Option<f64>,
    /// Lipschitz constant in z.
    pub l_z: Option<f64>,
    /// Lipschitz constant in θ.
    pub l_theta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum LossKind {
    /// (y − θx − 1/2)², scalar θ and x.
    SquaredAffine,
    /// (y − θ)².
    SquaredLocation,
    /// β·y·θ.
    Linear { beta: f64 },
    /// C·max(−1, yθ) + (γ/2)(θ − 1)².
    HingeReg { c: f64, gamma: f64 },
    /// −y·θᵀx + log(1 + exp(θᵀx)) + (γ/2)‖θ‖². With `intercept`, the last
    /// coordinate is left out of the penalty; features then carry a trailing
    /// constant 1.
    LogisticL2 {
        gamma: f64,
        #[serde(default)]
        intercept: bool,
    },
    /// ℓ ≡ value.
    Constant { value: f64 },
    /// base + (α/2)‖θ − anchor‖².
    Regularized {
        base: Box<LossSpec>,
        alpha: f64,
        anchor: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub constants: LossConstants,
}

/// Slope tolerance for the hinge kink at yθ = −1.
const KINK_TOL: f64 = 1e-12;

#[inline]
fn softplus(s: f64) -> f64 {
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

#[inline]
fn penalized(theta: &[f64], intercept: bool) -> &[f64] {
    if intercept && !theta.is_empty() {
        &theta[..theta.len() - 1]
    } else {
        theta
    }
}

#[inline]
pub(crate) fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

impl LossSpec {
    pub fn squared_affine() -> Self {
        LossSpec {
            kind: LossKind::SquaredAffine,
            constants: LossConstants {
                beta: Some(2.0),
                gamma: Some(2.0),
                ..Default::default()
            },
        }
    }

    pub fn squared_location() -> Self {
        LossSpec {
            kind: LossKind::SquaredLocation,
            constants: LossConstants {
                beta: Some(2.0),
                gamma: Some(2.0),
                ..Default::default()
            },
        }
    }

    pub fn linear(beta: f64) -> Self {
        LossSpec {
            kind: LossKind::Linear { beta },
            constants: LossConstants {
                beta: Some(beta.abs()),
                gamma: Some(0.0),
                ..Default::default()
            },
        }
    }

    /// Regularized hinge. Not jointly smooth, so β stays uncertified.
    pub fn hinge_reg(c: f64, gamma: f64) -> Result<Self> {
        if !(c.is_finite() && c >= 0.0 && gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "hinge loss needs C >= 0 and gamma > 0, got C = {c}, gamma = {gamma}"
            )));
        }
        Ok(LossSpec {
            kind: LossKind::HingeReg { c, gamma },
            constants: LossConstants {
                gamma: Some(gamma),
                ..Default::default()
            },
        })
    }

    /// Smallest C for which both legs of the ±-oscillation land on the kinks
    /// when paired with Y = εθ on [−1/(2ε), 2], times a safety factor of 10.
    pub fn default_hinge_c(gamma: f64, eps: f64) -> f64 {
        let need = gamma * (1.0 + 1.0 / (2.0 * eps)) / (2.0 * eps);
        10.0 * need.max(2.0 * gamma)
    }

    /// Logistic loss with ℓ2 penalty. β depends on the data; see
    /// [`logistic_beta`].
    pub fn logistic_l2(gamma: f64) -> Result<Self> {
        Self::logistic(gamma, false)
    }

    /// Logistic loss whose last coordinate is an unpenalized intercept.
    pub fn logistic_l2_intercept(gamma: f64) -> Result<Self> {
        Self::logistic(gamma, true)
    }

    fn logistic(gamma: f64, intercept: bool) -> Result<Self> {
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "logistic gamma must be >= 0, got {gamma}"
            )));
        }
        Ok(LossSpec {
            kind: LossKind::LogisticL2 { gamma, intercept },
            constants: LossConstants {
                gamma: Some(gamma),
                ..Default::default()
            },
        })
    }

    pub fn constant(value: f64) -> Self {
        LossSpec {
            kind: LossKind::Constant { value },
            constants: LossConstants {
                beta: Some(0.0),
                gamma: Some(0.0),
                l_z: Some(0.0),
                l_theta: Some(0.0),
            },
        }
    }

    pub fn with_constants(mut self, constants: LossConstants) -> Self {
        self.constants = constants;
        self
    }

    /// Required θ dimension, when the loss fixes one.
    pub fn theta_dim(&self) -> Option<usize> {
        match &self.kind {
            LossKind::SquaredAffine
            | LossKind::SquaredLocation
            | LossKind::Linear { .. }
            | LossKind::HingeReg { .. } => Some(1),
            LossKind::LogisticL2 { .. } | LossKind::Constant { .. } => None,
            LossKind::Regularized { anchor, .. } => Some(anchor.len()),
        }
    }

    /// Required feature dimension, when the loss fixes one.
    pub fn feature_dim(&self) -> Option<usize> {
        match &self.kind {
            LossKind::SquaredAffine => Some(1),
            LossKind::Regularized { base, .. } => base.feature_dim(),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match &self.kind {
            LossKind::SquaredAffine => "squared_affine",
            LossKind::SquaredLocation => "squared_location",
            LossKind::Linear { .. } => "linear",
            LossKind::HingeReg { .. } => "hinge_reg",
            LossKind::LogisticL2 { .. } => "logistic_l2",
            LossKind::Constant { .. } => "constant",
            LossKind::Regularized { .. } => "regularized",
        }
    }

    /// Checks that `theta` and feature vectors of length `feature_dim` fit
    /// this loss.
    pub fn check_dims(&self, theta_dim: usize, feature_dim: usize) -> Result<()> {
        if let Some(d) = self.theta_dim() {
            crate::error::check_dim("loss theta", d, theta_dim)?;
        }
        if let Some(f) = self.feature_dim() {
            crate::error::check_dim("loss features", f, feature_dim)?;
        }
        if matches!(self.kind, LossKind::LogisticL2 { .. }) {
            crate::error::check_dim("logistic theta vs features", feature_dim, theta_dim)?;
        }
        if let LossKind::Regularized { base, .. } = &self.kind {
            base.check_dims(theta_dim, feature_dim)?;
        }
        Ok(())
    }

    #[inline]
    pub fn value(&self, x: &[f64], y: f64, theta: &[f64]) -> f64 {
        match &self.kind {
            LossKind::SquaredAffine => {
                let r = y - theta[0] * x[0] - 0.5;
                r * r
            }
            LossKind::SquaredLocation => {
                let r = y - theta[0];
                r * r
            }
            LossKind::Linear { beta } => beta * y * theta[0],
            LossKind::HingeReg { c, gamma } => {
                let t = theta[0];
                c * (y * t).max(-1.0) + 0.5 * gamma * (t - 1.0) * (t - 1.0)
            }
            LossKind::LogisticL2 { gamma, intercept } => {
                let s = vecops::dot(theta, x);
                let w = penalized(theta, *intercept);
                softplus(s) - y * s + 0.5 * gamma * vecops::dot(w, w)
            }
            LossKind::Constant { value } => *value,
            LossKind::Regularized {
                base,
                alpha,
                anchor,
            } => {
                let d2: f64 = theta
                    .iter()
                    .zip(anchor)
                    .map(|(t, a)| (t - a) * (t - a))
                    .sum();
                base.value(x, y, theta) + 0.5 * alpha * d2
            }
        }
    }

    /// Writes ∇_θ ℓ into `out` (length = θ dimension).
    #[inline]
    pub fn grad_into(&self, x: &[f64], y: f64, theta: &[f64], out: &mut [f64]) {
        match &self.kind {
            LossKind::SquaredAffine => {
                out[0] = -2.0 * x[0] * (y - theta[0] * x[0] - 0.5);
            }
            LossKind::SquaredLocation => out[0] = -2.0 * (y - theta[0]),
            LossKind::Linear { beta } => out[0] = beta * y,
            LossKind::HingeReg { c, gamma } => {
                let t = theta[0];
                // At the kink the yθ branch is selected.
                let hinge = if y * t >= -1.0 - KINK_TOL { c * y } else { 0.0 };
                out[0] = hinge + gamma * (t - 1.0);
            }
            LossKind::LogisticL2 { gamma, intercept } => {
                let r = sigmoid(vecops::dot(theta, x)) - y;
                for ((o, xi), ti) in out.iter_mut().zip(x).zip(theta) {
                    *o = r * xi + gamma * ti;
                }
                if *intercept {
                    if let (Some(o), Some(t)) = (out.last_mut(), theta.last()) {
                        *o -= gamma * t;
                    }
                }
            }
            LossKind::Constant { .. } => out.iter_mut().for_each(|o| *o = 0.0),
            LossKind::Regularized {
                base,
                alpha,
                anchor,
            } => {
                base.grad_into(x, y, theta, out);
                for ((o, t), a) in out.iter_mut().zip(theta).zip(anchor) {
                    *o += alpha * (t - a);
                }
            }
        }
    }

    pub fn grad(&self, x: &[f64], y: f64, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; theta.len()];
        self.grad_into(x, y, theta, &mut g);
        g
    }

    /// ∇_z ℓ with z = (x, y): feature components first, then the outcome.
    pub fn grad_z(&self, x: &[f64], y: f64, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len() + 1];
        let k = x.len();
        match &self.kind {
            LossKind::SquaredAffine => {
                let r = y - theta[0] * x[0] - 0.5;
                g[0] = -2.0 * theta[0] * r;
                g[k] = 2.0 * r;
            }
            LossKind::SquaredLocation => g[k] = 2.0 * (y - theta[0]),
            LossKind::Linear { beta } => g[k] = beta * theta[0],
            LossKind::HingeReg { c, .. } => {
                if y * theta[0] >= -1.0 - KINK_TOL {
                    g[k] = c * theta[0];
                }
            }
            LossKind::LogisticL2 { .. } => {
                let s = vecops::dot(theta, x);
                let r = sigmoid(s) - y;
                for (gi, ti) in g.iter_mut().zip(theta) {
                    *gi = r * ti;
                }
                g[k] = -s;
            }
            LossKind::Constant { .. } => {}
            LossKind::Regularized { base, .. } => return base.grad_z(x, y, theta),
        }
        g
    }

    /// Strips any regularization wrappers.
    pub fn base(&self) -> &LossSpec {
        match &self.kind {
            LossKind::Regularized { base, .. } => base.base(),
            _ => self,
        }
    }
}

/// Adds (α/2)‖θ − anchor‖² and updates the declared constants:
/// γ ← γ + α, β ← β + α, L_θ ← L_θ + α·diam(Θ). `L_z` is unchanged.
pub fn regularize(
    loss: &LossSpec,
    alpha: f64,
    anchor: &[f64],
    space: &ParameterSpace,
) -> Result<LossSpec> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "regularization alpha must be >= 0, got {alpha}"
        )));
    }
    crate::error::check_dim("regularization anchor", space.dim(), anchor.len())?;
    if alpha == 0.0 {
        return Ok(loss.clone());
    }
    let c = &loss.constants;
    Ok(LossSpec {
        kind: LossKind::Regularized {
            base: Box::new(loss.clone()),
            alpha,
            anchor: anchor.to_vec(),
        },
        constants: LossConstants {
            beta: c.beta.map(|b| b + alpha),
            gamma: Some(c.gamma.unwrap_or(0.0) + alpha),
            l_z: c.l_z,
            l_theta: c.l_theta.map(|l| l + alpha * space.diameter()),
        },
    })
}

/// α = √ε·β/(1 − ε), the regularization strength that trades stability
/// against optimality for a convex loss.
pub fn regularization_alpha(eps: f64, beta: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidParameter(format!(
            "regularization alpha needs 0 <= eps < 1, got {eps}"
        )));
    }
    Ok(eps.sqrt() * beta / (1.0 - eps))
}

/// Empirical smoothness of the regularized logistic objective on a data set:
/// max{2, (1/4n)Σ‖x_i‖² + γ}.
pub fn logistic_beta<'a, I>(features: I, gamma: f64) -> f64
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let (mut total, mut n) = (0.0, 0usize);
    for x in features {
        total += vecops::dot(x, x);
        n += 1;
    }
    if n == 0 {
        return 2.0_f64.max(gamma);
    }
    2.0_f64.max(total / (4.0 * n as f64) + gamma)
}
