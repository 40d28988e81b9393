//! System identification: basis-function regression for the drift and
//! inverse-gamma MAP estimation for the diffusion.

mod basis;
mod blr;
mod diffusion;
mod drift;

pub use basis::BasisSet;
pub use blr::{fit_blr, BlrPosterior};
pub use diffusion::{
    collect_residuals, histogram, log_posterior, map_sigma, map_sigma_all, map_sigma_closed_form, map_sigma_with_grid,
    sample_sigma_posterior, DiffusionPosterior, DriftPredictor, Normalization, ResidualDataset, DEFAULT_GRID_CELLS,
};
pub use drift::{
    collect_drift_data, fit_drift, identify_drift, pilot_sigma, DriftDataset, DriftFitOptions, DriftModel,
    DriftPrediction, DriftScheme, FittedChannel, FittedDriftJson,
};
