//! Performative prediction: models whose deployment shifts the data they are
//! evaluated on.
//!
//! A [`DistributionMap`] sends parameters θ to a distribution D(θ) over
//! instances z = (x, y). The crate evaluates performative and decoupled risk,
//! runs the four retraining procedures (RRM, RGD, RERM, REGD), and ships
//! diagnostics for sensitivity, optima and closeness bounds, plus a
//! strategic-classification simulator.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod dynamics;
mod error;
pub mod losses;
pub mod maps;
pub mod risk;
pub mod rng;
pub mod space;
pub mod strategic;
pub mod vecops;

pub use error::{Error, Result};
pub use losses::{LossConstants, LossKind, LossSpec};
pub use maps::{
    Atom, BiasedCoinMap, DistributionMap, ExactOracle, GaussianFamilyMap, PointMassKind,
    PointMassMap,
};
pub use risk::{
    decoupled_risk, performative_risk, risk_gradient, Instance, McConfig, RiskEstimate, SampleSet,
};
pub use space::ParameterSpace;
