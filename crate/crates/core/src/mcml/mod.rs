//! Monte Carlo maximum likelihood: the importance-sampling objective, Newton
//! updates, range search and the complete fitting algorithms.

mod fit;
mod newton;
mod objective;
mod profile;

pub use fit::{
    fit_continuous, fit_discrete, fit_domain, newton_psi, standard_mcml_reference, FitConfig, FitMetadata, McmlFit, ProposalKind,
    SpatialDomain, TraceEntry, REFERENCE_GMRF_JITTER, REFERENCE_MAX_N, Z_05,
};
pub use newton::{newton_raphson, NewtonConfig, NewtonObjective, NewtonResult};
pub use objective::{log_sum_exp, Evaluation, McObjective};
pub use profile::{bounded_maximize, golden_section, grid_neighbors, PhiSearch, PHI_GRID_FACTORS};
