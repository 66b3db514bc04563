//! Local regularization of noisy point clouds sampled near low-dimensional
//! manifolds, and the graph machinery used to measure what it buys.
//!
//! The crate is organised along the pipeline it implements:
//!
//! | module | contents |
//! |--------|----------|
//! | [`pointcloud`] | sphere / two-moons samplers, bounded noise, cloud I/O |
//! | [`regularize`] | ball, k-NN and self-tuning averaging of a cloud |
//! | [`graph`] | ε-graphs, self-tuning graphs, K-NN restriction, Laplacians |
//! | [`spectral`] | smallest eigenpairs, sphere spectrum, eigenvalue sandwich |
//! | [`bounds`] | closed-form distance-error bounds and parameter checks |
//! | [`classify`] | probit semi-supervised classifier and cross-validation |
//! | [`experiments`] | masked distance reports, MNIST, configs, runs |
//!
//! ```
//! use manireg::pointcloud::{sample_sphere, add_noise, NoiseSpec};
//! use manireg::regularize::ball_average;
//!
//! let clean = sample_sphere(200, 2, 10, 7).unwrap();
//! let noisy = add_noise(&clean, &NoiseSpec::ambient_ball(0.1), 8).unwrap();
//! let smoothed = ball_average(&noisy, 0.5).unwrap();
//! assert_eq!(smoothed.n(), 200);
//! ```

pub mod bounds;
pub mod classify;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod linalg;
pub mod pointcloud;
pub mod regularize;
pub mod spectral;

pub use error::{Error, Result};
