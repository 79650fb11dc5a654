//! Decoding, scoring and fine-tuning populations, plus latent-space
//! analyses and the statistics that summarize them.

pub mod analysis;
pub mod population;
pub mod redistribute;
pub mod report;
pub mod stats;

pub use analysis::{analyze_geometry, robustness_sweep, smoothness_interpolation, Geometry, Histogram, RobustnessPoint};
pub use population::{
    ensemble_eval, eval_population, finetune_one, finetune_population, full_ensemble, transfer_eval, unseen_zoo_eval,
    weight_distance_tracking, DistancePoint, PopulationResult, Trajectory, UnseenZooResult,
};
pub use redistribute::redistribute_weights;
pub use report::{write_report, EvalReport};
pub use stats::{mwu_test, summarize, MwuResult, Summary};
