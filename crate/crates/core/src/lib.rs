//! Identifiable variational dynamic factor models.
pub mod baselines;
pub mod diffcore;
pub mod dynamics;
pub mod error;
pub mod features;
pub mod intervene;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod prior;
pub mod synthdata;
pub mod vimodel;

pub use error::{Error, Result};

/// Chapters of the guide in `book/`, compiled so their snippets run as
/// doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/innovations.md")]
    mod innovations {}
    #[doc = include_str!("../../../book/src/dynamics.md")]
    mod dynamics {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/interventions.md")]
    mod interventions {}
    #[doc = include_str!("../../../book/src/forecasting.md")]
    mod forecasting {}
}
