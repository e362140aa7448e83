//! Limit laws: the Ornstein–Uhlenbeck fluctuation limit, exit-time
//! corrections and the rough-potential conditional exit law.

pub mod clt;
pub mod fluctuation;
pub mod rough;

pub use clt::{
    conditional_exit_clt_check, conditioned_exit_samples, CltSettings, ConditionalCltReport,
};
pub use fluctuation::{
    exit_law_projection, limit_fluctuation_moments, simulate_limit_ou, AffineAverages, EtaLaw,
    ExitLawPrediction, FluctuationMoments, LimitProcessSpec,
};
pub use rough::{
    conditional_exit_stats, conditional_exit_stats_with, gibbs_constants, langevin_j_bar_nested,
    ConditionalExitStats, GibbsConstants, RoughPotential, RoughPotentialSpec,
};
