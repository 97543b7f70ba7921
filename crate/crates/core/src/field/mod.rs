//! Linearized equations: the periodic Poisson problem on the torus, heat
//! smoothing, mollified gradients, and the Neumann problem on a disk.

mod disk;
mod periodic;

pub use disk::{
    disk_derivatives_at_origin, solve_disk_neumann, AngularFlux, DiskNeumannField, DEFAULT_ANGULAR_BINS,
    DEFAULT_K_MAX,
};
pub use periodic::{
    bump, bump_normalizer, heat_smooth, mollifier_average, rasterize_cic, solve_periodic_poisson, solve_poisson_measure,
    MollifiedGradient, ScalarField,
};
pub(crate) use periodic::csv_err;
