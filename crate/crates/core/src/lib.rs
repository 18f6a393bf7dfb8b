//! Estimation of multidimensional assortative matching models.

extern crate blas_src;
extern crate openblas_src;

pub mod doubly;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod marginal;
pub mod model;
pub mod saliency;
pub mod sample;
pub mod schrodinger;
pub mod simulate;
pub mod singles;
pub mod special;
pub mod welfare;

pub use doubly::{kronecker, DoublyIndexedMatrix};
pub use error::{Error, Result};
pub use marginal::{Coupling, DiscreteMarginal, Potentials, SupportReduction};
pub use model::AffinityModel;
pub use sample::{cross_covariance, standardize, MatchedSample, ScalingRecord};
pub use schrodinger::{solve_ipfp, IpfpConfig, IpfpSolution, IterationReport};
pub use welfare::{evaluate_welfare, fisher_information, score_functions, WelfareEvaluation};
pub use saliency::{project_indices, saliency, truncate, SaliencyResult};
pub use estimator::{bootstrap_fit, fit_affinity, BootstrapSummary, FitConfig, FitReport, StartingPoint};
pub use singles::{
    binned_coupling, exante_surplus, matching_surplus, reservation_utilities, Binning, Gauge,
    MatchingSurplus, PopulationWithSingles,
};
pub use simulate::{
    choo_siow_equilibrium, offset_for_singles_share, simulate_discrete_choo_siow, simulate_gaussian, simulate_gaussian_1d,
    simulate_poisson_logit_choice, GaussianQuadraticSpec, PoissonLogitSpec,
};
pub use inference::{
    asymptotic_covariance, rank_test, rank_test_calibration, sorting_dimension, sorting_dimension_from, AsymptoticCovariance,
    RankCalibration, RankTestResult, SortingDimension,
};
