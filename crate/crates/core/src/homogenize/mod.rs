//! Torus cell problems, averaged coefficients, regime bookkeeping and the
//! effective flow.

pub mod cell;
pub mod coefficients;
pub mod flow;
pub mod model;
pub mod regime;

pub use cell::{CellGrid, CellOperator, CellSolution, Sampled, TransportOperator};
pub use coefficients::{PeriodicCoefficientSet, Tolerances};
pub use flow::{effective_flow, hitting_time_deterministic, Drift1d, EffectiveTrajectory, FnDrift};
pub use model::{
    averaged_coefficients, check_centering, homogenize_at, invariant_measure, solve_auxiliary_pde,
    solve_cell_problem, AveragedField, Averages, CellReport, CellSnapshot, HomogenizationSettings,
    HomogenizedModel, ModelDocument, Tabulated,
};
pub use regime::{classify_regime, ActiveTerms, DeltaSchedule, Ell, RegimeClassification};
