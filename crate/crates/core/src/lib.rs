//! Stress-testing harness for factual-consistency metrics of summaries.
//!
//! The numeric core (statistics, the shallow MLP) is generic over the float
//! type through [`scalar::Scalar`]; the aliases below fix it to `f64` for
//! ordinary use and `f32` where memory matters.

pub mod analysis;
pub mod corpus;
pub mod features;
pub mod gaming;
pub mod gateway;
pub mod io;
pub mod network;
pub mod perturbation;
pub mod pipeline;
pub mod scalar;
pub mod shallow_model;
pub mod stats;
pub mod synthetic;
pub mod text;

pub use corpus::{Corpus, DocumentRecord, SummaryRecord};
pub use features::FeatureVector;
pub use gateway::{Gateway, MetricScore};
pub use pipeline::{Pipeline, PipelineError, RunConfig, Stage};

pub type Model = shallow_model::TrainedModel<f64>;
pub type Model32 = shallow_model::TrainedModel<f32>;
pub type Network = network::Network<f64>;
pub type Network32 = network::Network<f32>;
pub type Adam = network::Adam<f64>;
pub type Adam32 = network::Adam<f32>;
