//! Differentiable building blocks of the fusion models.
//!
//! Each layer comes in two forms: a function over tape variables (used by
//! the gradient checks and oracle tests) and a parameter struct holding
//! [`ParamId`](crate::params::ParamId)s that binds the function to a
//! [`ParamSet`](crate::params::ParamSet).

mod attention;
mod conv;
mod gru;
mod pooling;

pub use attention::{mha, Dropout, MhaOutput, MhaParams, MhaWeights};
pub use conv::{time_conv, TimeConvParams};
pub use gru::{bigru, gru_direction, GruParams, GruWeights};
pub use pooling::{
    classifier_head, classify, statistical_pooling, temporal_average, ClassifierParams,
    ClassifierWeights,
};
