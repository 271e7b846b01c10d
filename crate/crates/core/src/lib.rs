//! Grid solvers for the forward-backward doubly stochastic differential
//! equations of nonlinear filtering.
//!
//! A [`FilteringModel`] describes a hidden diffusion `U` observed through
//! `dV = h(U) dt + dB`. [`solve_filter`] evolves the unnormalized conditional
//! density forward in time, [`solve_backward`] computes the Feynman–Kac value
//! function backward from a terminal test function, and [`adjoint_trace`]
//! checks that their pairing stays constant. The [`oracles`] module provides
//! the Kalman–Bucy filter and a Kallianpur–Striebel Monte Carlo estimator for
//! comparison.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod fksolver;
pub mod gridquad;
pub mod io;
pub mod model;
pub mod oracles;
pub mod randpath;
pub mod zakaifilter;

pub use diagnostics::{adjoint_trace, feynman_kac_check, AdjointTrace, FeynmanKacReport};
pub use error::{FilterError, Result};
pub use fksolver::{solve_backward, FkRun};
pub use gridquad::{
    gauss_nodes, inner_product, BoundaryPolicy, GridField, QuadratureRule, SpaceGrid,
};
pub use model::{zoo, FilteringModel, Prior, TimeGrid};
pub use oracles::{
    kalman_bucy, ks_monte_carlo, ks_summary, unnormalized_ks, KSEstimate, KSSummary,
    KalmanBucyPath, Start,
};
pub use randpath::{resample_observation, simulate, PathBundle};
pub use zakaifilter::{
    estimate, posterior_moments, solve_filter, solve_filter_with, FilterOptions, FilterRun, Moments,
};
