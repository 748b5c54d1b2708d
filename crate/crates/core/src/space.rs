use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecops;

/// Closed convex feasible set Θ with Euclidean projection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParameterSpace {
    Interval { lo: f64, hi: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl ParameterSpace {
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        let s = ParameterSpace::Interval { lo, hi };
        s.validate()?;
        Ok(s)
    }

    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let s = ParameterSpace::Box { lo, hi };
        s.validate()?;
        Ok(s)
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        let s = ParameterSpace::Ball { center, radius };
        s.validate()?;
        Ok(s)
    }

    /// Box `[-half, half]^d`, used as an effectively unconstrained space.
    pub fn symmetric_box(d: usize, half: f64) -> Self {
        ParameterSpace::Box {
            lo: vec![-half; d],
            hi: vec![half; d],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        match self {
            ParameterSpace::Interval { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                    return bad(format!("interval needs finite lo <= hi, got [{lo}, {hi}]"));
                }
            }
            ParameterSpace::Box { lo, hi } => {
                if lo.is_empty() || lo.len() != hi.len() {
                    return bad(format!(
                        "box bounds need equal non-zero length, got {} and {}",
                        lo.len(),
                        hi.len()
                    ));
                }
                for (i, (l, h)) in lo.iter().zip(hi).enumerate() {
                    if !(l.is_finite() && h.is_finite()) || l > h {
                        return bad(format!("box coordinate {i} needs finite lo <= hi"));
                    }
                }
            }
            ParameterSpace::Ball { center, radius } => {
                if center.is_empty() || !vecops::all_finite(center) {
                    return bad("ball center must be a finite non-empty vector".into());
                }
                if !(radius.is_finite() && *radius >= 0.0) {
                    return bad(format!("ball radius must be >= 0, got {radius}"));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            ParameterSpace::Interval { .. } => 1,
            ParameterSpace::Box { lo, .. } => lo.len(),
            ParameterSpace::Ball { center, .. } => center.len(),
        }
    }

    /// Euclidean projection. Panics if `v` has the wrong dimension.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        self.project_in_place(&mut out);
        out
    }

    pub fn project_in_place(&self, v: &mut [f64]) {
        assert_eq!(v.len(), self.dim(), "projection dimension mismatch");
        match self {
            ParameterSpace::Interval { lo, hi } => v[0] = v[0].clamp(*lo, *hi),
            ParameterSpace::Box { lo, hi } => {
                for ((x, l), h) in v.iter_mut().zip(lo).zip(hi) {
                    *x = x.clamp(*l, *h);
                }
            }
            ParameterSpace::Ball { center, radius } => {
                let r = vecops::dist(v, center);
                if r > *radius {
                    let s = radius / r;
                    for (x, c) in v.iter_mut().zip(center) {
                        *x = c + (*x - c) * s;
                    }
                }
            }
        }
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        if v.len() != self.dim() {
            return false;
        }
        match self {
            ParameterSpace::Interval { lo, hi } => *lo <= v[0] && v[0] <= *hi,
            ParameterSpace::Box { lo, hi } => v
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(x, (l, h))| l <= x && x <= h),
            ParameterSpace::Ball { center, radius } => {
                vecops::dist(v, center) <= radius * (1.0 + 1e-12)
            }
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            ParameterSpace::Interval { lo, hi } => hi - lo,
            ParameterSpace::Box { lo, hi } => vecops::dist(hi, lo),
            ParameterSpace::Ball { radius, .. } => 2.0 * radius,
        }
    }

    /// Per-coordinate bounding box.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            ParameterSpace::Interval { lo, hi } => (vec![*lo], vec![*hi]),
            ParameterSpace::Box { lo, hi } => (lo.clone(), hi.clone()),
            ParameterSpace::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
        }
    }

    /// Regular grid with `resolution` points per axis, restricted to Θ.
    /// Only defined for d <= 2.
    pub fn grid(&self, resolution: usize) -> Result<Vec<Vec<f64>>> {
        let d = self.dim();
        if d > 2 {
            return Err(Error::Unsupported(format!(
                "grid search needs d <= 2, got d = {d}"
            )));
        }
        if resolution < 2 {
            return Err(Error::InvalidParameter(format!(
                "grid resolution must be >= 2, got {resolution}"
            )));
        }
        let (lo, hi) = self.bounds();
        let axis = |k: usize| -> Vec<f64> {
            let step = (hi[k] - lo[k]) / (resolution - 1) as f64;
            (0..resolution)
                .map(|i| {
                    if i == resolution - 1 {
                        hi[k]
                    } else {
                        lo[k] + step * i as f64
                    }
                })
                .collect()
        };
        let pts: Vec<Vec<f64>> = if d == 1 {
            axis(0).into_iter().map(|a| vec![a]).collect()
        } else {
            let (a0, a1) = (axis(0), axis(1));
            a0.iter()
                .flat_map(|&u| a1.iter().map(move |&v| vec![u, v]))
                .collect()
        };
        Ok(pts.into_iter().filter(|p| self.contains(p)).collect())
    }

    /// Largest grid spacing along any axis for a given resolution.
    pub fn grid_spacing(&self, resolution: usize) -> f64 {
        let (lo, hi) = self.bounds();
        lo.iter()
            .zip(&hi)
            .map(|(l, h)| (h - l) / (resolution.max(2) - 1) as f64)
            .fold(0.0, f64::max)
    }
}
