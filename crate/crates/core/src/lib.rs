// SPDX-License-Identifier: MIT OR Apache-2.0

//! A desk-scale laboratory for locate-then-edit model editing.
//!
//! The crate trains a tiny decoder-only transformer on a synthetic fact
//! corpus, locates the decisive token and layer by causal tracing, rewrites
//! facts with a closed-form ridge update of one MLP down-projection, and
//! audits the result with a negation-aware protocol: positive and negated
//! edits are crossed with positive and negated test prompts, so that an
//! editor which merely associates subject with target is exposed.

pub mod corpus;
pub mod editor;
pub mod error;
pub mod evalsuite;
pub mod io;
pub mod linalg;
pub mod tinylm;
pub mod tracing;

pub use error::{LabError, Result};

/// Version recorded in every report and manifest.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
