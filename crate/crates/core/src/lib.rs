//! EM-test homogeneity statistics for finite parametric mixtures, and the
//! marginal feature-screening procedure built on them.
//!
//! Each feature of an `n × p` data matrix is tested for homogeneity against a
//! `G`-component mixture of the same parametric family. Features whose
//! statistic clears `n^ϑ` (or whose BH-adjusted p-value clears the FDR level)
//! are retained as cluster-relevant.
//!
//! Module map:
//! - [`families`]: Poisson, negative-binomial and normal densities, derivative
//!   bundles and weighted maximum likelihood.
//! - [`emtest`]: penalized EM and the EM-test statistic for one feature.
//! - [`asymptotics`]: B-matrix estimation, the PSD-cone limiting law and
//!   p-values.
//! - [`screening`]: per-feature orchestration, BH adjustment, batch
//!   combination, the chi-square goodness-of-fit baseline and down-sampling.
//! - [`simulate`]: benchmark data generators.
//! - [`evalmetrics`]: model size, retained counts, k-means, ARI and the
//!   benchmark harness.
//! - [`cli`]: file ingestion, report serialization and command execution.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod cli;
pub mod emtest;
pub mod error;
pub mod evalmetrics;
pub mod families;
pub mod rng;
pub mod sample;
pub mod screening;
pub mod simulate;
pub mod special;

pub use error::{Error, Result};
pub use families::{Family, FamilyKind, Theta};
