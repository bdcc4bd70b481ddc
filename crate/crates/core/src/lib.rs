//! Estimation of the two-class homoscedastic Gaussian Bayes classifier from
//! partially classified samples whose labels go missing according to an
//! entropy-driven (non-ignorable) mechanism.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] holds the generative model, the linear discriminant and the
//!   missing-label probability.
//! * [`likelihood`] evaluates the classified, unclassified, ignore-mechanism,
//!   missingness and full log-likelihoods together with analytic gradients.
//! * [`estimate`] implements the complete-data MLE, EM ignoring the
//!   mechanism, the full-likelihood quasi-Newton fit and hard-assignment CML.
//! * [`risk`] gives closed-form error rates and the CML error expansion.
//! * [`information`] computes asymptotic relative efficiencies by adaptive
//!   quadrature and checks information decompositions by Monte Carlo.
//! * [`simulate`] generates seeded samples and estimates relative efficiency
//!   with bootstrap standard errors.
//! * [`diagnostics`] relates posterior entropy to the labelling pattern.

pub mod diagnostics;
pub mod error;
pub mod estimate;
pub mod information;
pub mod likelihood;
pub mod model;
pub mod optim;
pub mod quadrature;
pub mod risk;
pub mod simulate;
pub mod special;

pub use error::{Error, Result};
pub use model::{
    DiscriminantCoeffs, FullParams, GaussianPairModel, MissingnessParams, PartialSample,
};
