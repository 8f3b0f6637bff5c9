//! Vehicle-occupancy sensing from multi-gateway LoRaWAN RSSI.
//!
//! The crate covers the channel model and scenario simulator
//! ([`radio_model`]), uplink joining and splits ([`dataset`]), a one-vs-one
//! kernel SVM trained by SMO ([`svm`]), a k-means baseline ([`kmeans`]),
//! one-vs-rest evaluation ([`metrics`]) and deployment planning
//! ([`planner`]). Numeric code is generic over [`Scalar`] (`f32` or `f64`);
//! the aliases below fix the common choices.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod kmeans;
pub mod metrics;
pub mod pipeline;
pub mod planner;
pub mod radio_model;
pub mod record;
pub mod scalar;
pub mod svm;

pub use error::{Error, Result, RowError};
pub use record::RssiRecord;
pub use scalar::Scalar;

pub type RadioParamsF64 = radio_model::RadioParams<f64>;
pub type RadioParamsF32 = radio_model::RadioParams<f32>;
pub type Features = dataset::FeatureVector<f64>;
pub type FeaturesF32 = dataset::FeatureVector<f32>;
pub type DatasetF64 = dataset::Dataset<f64>;
pub type DatasetF32 = dataset::Dataset<f32>;
pub type Svm = svm::SvmModel<f64>;
pub type SvmF32 = svm::SvmModel<f32>;
pub type KMeans = kmeans::KMeansModel<f64>;
pub type KMeansF32 = kmeans::KMeansModel<f32>;
