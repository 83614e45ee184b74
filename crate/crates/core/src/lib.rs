//! Group fairness in expectation (GFE) for regression models, applied after
//! training.
//!
//! A regressor is group-fair in expectation for two subpopulations when its
//! expected output over the two (empirical) distributions is equal. For
//! decision trees and their ensembles each leaf is an independent prediction
//! unit, so an arbitrary set of such constraints is linear in the leaf values
//! and the minimal correction is a closed-form null-space projection
//! ([`linalg::project_onto_nullspace`], applied by [`gfe::apply_gfe`]).
//! Kernel regressors get the same guarantee through quadrature-augmented
//! Gram matrices ([`kernel`]).
//!
//! Pipeline modules: [`data`] (CSV + schema + splits), [`groups`] (subgroup
//! predicates and constraint matrices), [`tree`] (CART / forest / boosting
//! trainers and JSON persistence), [`synth`] (bias-injected synthetic
//! tables).

pub mod data;
pub mod error;
pub mod gfe;
pub mod groups;
pub mod kernel;
pub mod linalg;
pub mod synth;
pub mod tree;

pub use error::{Error, Result};
