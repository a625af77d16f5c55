//! Synthetic PDE datasets, augmentation and the ndbin tensor format.

pub mod augment;
pub mod cg;
pub mod darcy;
pub mod dataset;
pub mod grf;
pub mod ndbin;
pub mod poisson;

pub use augment::{augment_flip, flip_grid, Flip, Sample};
pub use cg::pcg;
pub use darcy::{darcy_coefficient, darcy_solve_fd, DarcyParams, FaceMean};
pub use dataset::{
    gen_dataset, load_dataset, load_manifest, sample_seed, ChannelStats, Dataset, DatasetManifest, DatasetSpec,
    Normalization, Split, TaskSpec,
};
pub use grf::{grf_sample, GrfParams};
pub use poisson::{interpolate_periodic, poisson_fem_solve};
