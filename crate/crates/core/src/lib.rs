//! Trivariate vine copula mixed models for meta-analysis of diagnostic test
//! accuracy studies with disease prevalence.

pub mod copula;
pub mod error;
pub mod inference;
pub mod io;
pub mod likelihood;
pub mod margins;
pub mod optim;
pub mod params;
pub mod quadrature;
pub mod rng;
pub mod simstudy;
pub mod special;
pub mod vine;

pub use copula::{tau_to_theta, theta_to_tau, CopulaFamily, CopulaSpec};
pub use error::{Error, Result};
pub use inference::{aic, fit, sweep, vuong, FamilyChoice, FitOptions, FitResult, SweepEntry, VuongResult};
pub use likelihood::{joint_nll, study_log_lik, LikelihoodEvaluator};
pub use margins::{MarginKind, MarginSpec, StudyRecord};
pub use params::{pack, unpack, ParamVector, VineStructure};
pub use quadrature::{gauss_legendre_01, QuadGrid};
pub use vine::{empirical_tau, enumerate_permutations, simulate_vine, vine_transform, Permutation, VineModelSpec};
pub use simstudy::{draw_study_size, generate_dataset, run_study, SimReport, SimScenario, SizeDist};
pub use io::{read_input, run, Baseline, InputTable, ResultDocument, RunConfig};
