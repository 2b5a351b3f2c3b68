//! Constructive nearby commuting matrices.
//!
//! The crate builds exactly commuting approximants for almost commuting
//! families coming from weighted shifts and su(2) spin representations, and
//! measures every construction against closed-form error bounds.
#![allow(clippy::neg_cmp_op_on_partial_ord)]


pub mod berg;
pub mod error;
pub mod exchange;
pub mod gep;
pub mod linalg;
pub mod observables;
pub mod ogata;
pub mod shifts;
pub mod su2;
pub mod suite;

use openblas_src as _;

pub use error::{NearbyError, Result};
