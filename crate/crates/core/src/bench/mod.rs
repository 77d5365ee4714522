//! Metrics and experiment drivers producing CSV tables.
//!
//! Experiment cells are independent and run on the ambient rayon pool;
//! results are assembled in a fixed order, so tables depend only on the seed.

pub mod experiments;
pub mod methods;
pub mod metrics;
pub mod rgb;
pub mod table;

pub use experiments::{
    compare_methods, realize_ratio, robustness_map, sub_seed, sweep_sampling, CompareConfig,
    CompareResult, RobustnessConfig, RobustnessResult, SpectrumClass, SweepConfig, SweepResult,
};
pub use methods::{
    fit_method, test_samples, train_dl, DlSettings, FittedMethod, MethodKind, MethodSettings,
};
pub use metrics::{cross_correlation, pooled_std, EvalReport, FAILURE_THRESHOLD};
pub use rgb::{rgb_scenario, RgbConfig, RgbResult};
pub use table::Table;
