//! Matched linear operator pairs.
//!
//! | forward | transpose |
//! |---|---|
//! | [`radon2d`] | [`radon2d_adjoint`] |
//! | [`diff_s`] | [`diff_s_adjoint`] |
//! | [`conebeam_backproject`] | [`conebeam_backproject_adjoint`] |
//!
//! [`conebeam_forward`] synthesizes data; it is not the transpose of the
//! backprojector.

mod conebeam;
mod diff;
pub mod interp;
mod radon;

pub use conebeam::{conebeam_backproject, conebeam_backproject_adjoint, conebeam_forward};
pub(crate) use conebeam::backproject_weighted;
pub use diff::{diff_s, diff_s_adjoint};
pub use radon::{radon2d, radon2d_adjoint, weighted_dot, RadonOperator};
