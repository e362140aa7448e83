//! Path simulation: the multiscale SDE, the conditioned rough-potential
//! dynamics, exit detection and scale/speed functions.

pub mod conditioned;
pub mod dump;
pub mod rng;
pub mod scale_speed;
pub mod simulate;

pub use conditioned::{simulate_conditioned_path, ConditionedDrift, ConditionedSimulator};
pub use dump::{read_path_dump, write_path_dump};
pub use rng::{path_rng, NormalStream};
pub use scale_speed::{feller_scale_speed, scale_speed_functions, ScaleSpeed};
pub use simulate::{
    detect_exit, extract_fluctuation, simulate_path, PathEnd, PathRecord, Scheme, SimulationSpec,
    Simulator, XiDistribution, DEFAULT_RESOLUTION_FACTOR, DEFAULT_STEP_BUDGET, LANES,
};
