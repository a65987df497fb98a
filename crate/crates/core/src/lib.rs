//! K-shot weight-sharing neural architecture search.
//!
//! A supernet keeps `K` copies of every weight slot. A small simplex-net maps
//! each subnet's encoding to a convex code that merges the copies into the
//! subnet's weights. Supernet and simplex-net are trained alternately, and
//! the trained pair is used to rank subnets and drive an evolutionary search.
// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod optim;
pub mod oracle;
pub mod rng;
pub mod search;
pub mod simplex;
pub mod space;
pub mod standalone;
pub mod supernet;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use simplex::SimplexCode;
pub use space::{ArchEncoding, ChannelEncoding, OpKind, SpaceSpec, Subnet};
pub use supernet::WeightDictionary;
pub use tensor::Tensor;
