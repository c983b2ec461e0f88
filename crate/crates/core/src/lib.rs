//! Outcome prediction on tabular radiomic features with patient population
//! graphs.
//!
//! The crate covers the whole modelling pipeline:
//!
//! - [`cohort`]: patient records, CSV ingestion, endpoint binarization and
//!   synthetic cohorts.
//! - [`preprocess`]: standardization, Spearman clustering and bootstrap
//!   feature ranking.
//! - [`linmod`]: elastic-net logistic and Cox baselines.
//! - [`autodiff`]: a small reverse-mode autodiff over dense matrices, plus Adam.
//! - [`graphnets`]: the patient hypergraph network (PHGN) and the latent
//!   patient network (LPNL) with classification and Cox heads.
//! - [`survstats`]: classification metrics, c-index, Kaplan-Meier and log-rank.
//! - [`resample`]: stratified folds, bootstrap and ADASYN.
//! - [`pipeline`]: cross-validated grid search, test-time ensembling and reports.

pub mod autodiff;
pub mod cohort;
pub mod error;
pub mod graphnets;
pub mod linmod;
pub mod pipeline;
pub mod preprocess;
pub mod resample;
pub mod survstats;

pub(crate) mod rng;

pub use cohort::{Cohort, Outcome, PatientRecord, SurvivalOutcome, BinaryOutcome, Task};
pub use error::{Error, Result};
pub use graphnets::{Hypergraph, NetworkConfig};
pub use linmod::{ElasticNetConfig, LinearModelFit};
pub use preprocess::{ClusterAssignment, FeatureRanking, StandardizationParams};
pub use survstats::{KmCurve, LogRankResult, MetricsReport};
